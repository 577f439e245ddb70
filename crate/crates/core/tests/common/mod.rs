//! Independent reference implementations shared by the integration tests and
//! the acceptance suite.
#![allow(dead_code)]

use aps_core::config::ExperimentConfig;
use aps_core::data::{generate_worlds, WorldSet};
use aps_core::metrics::{episode_metrics, SUCCESS_RADIUS};
use aps_core::navigator::{Flavor, Termination, Trajectory};
use aps_core::nn::{grad_check, lstm_cell, ParamId, ParamSet, Tape, Tensor};
use aps_core::sampler::{ApsConfig, ApsModel, SampledBatch, SampledPath, DEFAULT_HOPS};
use aps_core::seeding;
use aps_core::trainer::{aps_policy_gradient, BaselineTracker};
use aps_core::world::{
    generate_world, shortest_path_transform, teacher_action, Landmark, NavAction, NavGraph, Path, Split,
};
use aps_core::Error;
use rand::Rng;

// ---------------------------------------------------------------- LSTM

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Plain-loop LSTM step; `w` is row-major `[4*dh, din+dh]`, gates i, f, g, o.
pub fn scalar_lstm(w: &[f64], b: &[f64], x: &[f64], h: &[f64], c: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let (din, dh) = (x.len(), h.len());
    let cols = din + dh;
    let mut pre = vec![0.0; 4 * dh];
    for (r, p) in pre.iter_mut().enumerate() {
        let mut s = b[r];
        for j in 0..din {
            s += w[r * cols + j] * x[j];
        }
        for j in 0..dh {
            s += w[r * cols + din + j] * h[j];
        }
        *p = s;
    }
    let mut h2 = vec![0.0; dh];
    let mut c2 = vec![0.0; dh];
    for k in 0..dh {
        let i = sigmoid(pre[k]);
        let f = sigmoid(pre[dh + k]);
        let g = pre[2 * dh + k].tanh();
        let o = sigmoid(pre[3 * dh + k]);
        c2[k] = f * c[k] + i * g;
        h2[k] = o * c2[k].tanh();
    }
    (h2, c2)
}

fn uniform_vec(rng: &mut seeding::Rng, n: usize, bound: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-bound..bound)).collect()
}

/// Worst absolute difference between `lstm_cell` and the scalar loop for one seed.
pub fn lstm_oracle_gap(seed: u64, din: usize, dh: usize, x_ones: bool) -> f64 {
    let mut rng = seeding::rng(seed, "lstm-oracle", 0);
    let w = uniform_vec(&mut rng, 4 * dh * (din + dh), 1.0);
    let b = uniform_vec(&mut rng, 4 * dh, 1.0);
    let x = if x_ones { vec![1.0; din] } else { uniform_vec(&mut rng, din, 2.0) };
    let h = uniform_vec(&mut rng, dh, 1.0);
    let c = uniform_vec(&mut rng, dh, 1.0);
    let (eh, ec) = scalar_lstm(&w, &b, &x, &h, &c);
    let (gh, gc) = lstm_cell(
        &Tensor::vector(x),
        &Tensor::vector(h),
        &Tensor::vector(c),
        &Tensor::matrix(4 * dh, din + dh, w).unwrap(),
        &Tensor::vector(b),
    )
    .unwrap();
    eh.iter()
        .zip(gh.values())
        .chain(ec.iter().zip(gc.values()))
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}

// ---------------------------------------------------------------- gradient checks

struct Operands {
    params: ParamSet,
    x: ParamId,
    y: ParamId,
    h: ParamId,
    c: ParamId,
    p: ParamId,
    w: ParamId,
    b: ParamId,
    keys: ParamId,
    wq: ParamId,
    wk: ParamId,
    table: ParamId,
    lw: ParamId,
    lb: ParamId,
}

fn operands(seed: u64) -> Operands {
    let mut rng = seeding::rng(seed, "grad-operands", 0);
    let mut params = ParamSet::new();
    let mut add = |name: &str, dims: &[usize]| params.insert_uniform(name, dims, 1, &mut rng).unwrap();
    let x = add("x", &[5]);
    let y = add("y", &[5]);
    let h = add("h", &[4]);
    let c = add("c", &[4]);
    let p = add("p", &[3]);
    let w = add("w", &[4, 5]);
    let b = add("b", &[4]);
    let keys = add("keys", &[3, 5]);
    let wq = add("wq", &[3, 4]);
    let wk = add("wk", &[3, 5]);
    let table = add("table", &[6, 5]);
    let lw = add("lstm/w", &[16, 9]);
    let lb = add("lstm/b", &[16]);
    Operands { params, x, y, h, c, p, w, b, keys, wq, wk, table, lw, lb }
}

/// Every differentiable tape operation, each reduced to a scalar loss.
pub const OPS: &[&str] = &[
    "embed",
    "affine",
    "affine-no-bias",
    "affine-rows",
    "concat",
    "slice",
    "stack",
    "tanh",
    "add",
    "lstm",
    "row-dot",
    "weighted-rows",
    "softmax",
    "attention",
    "attention-projected",
    "dropout",
    "cross-entropy",
    "log-prob",
    "scaled-sum",
    "mean",
];

fn build(op: &str, o: &Operands, t: &mut Tape<'_>) -> aps_core::nn::Var {
    let x = t.param(o.x);
    let ce = |t: &mut Tape<'_>, v| t.cross_entropy(v, 1);
    match op {
        "embed" => {
            let e = t.embed(o.table, 2);
            ce(t, e)
        }
        "affine" => {
            let v = t.affine(o.w, Some(o.b), x);
            ce(t, v)
        }
        "affine-no-bias" => {
            let v = t.affine(o.w, None, x);
            ce(t, v)
        }
        "affine-rows" => {
            let k = t.param(o.keys);
            let v = t.affine_rows(o.wk, k, 3);
            ce(t, v)
        }
        "concat" => {
            let h = t.param(o.h);
            let v = t.concat(&[h, x]);
            let v = t.tanh(v);
            t.cross_entropy(v, 6)
        }
        "slice" => {
            let v = t.slice(x, 1, 3);
            ce(t, v)
        }
        "stack" => {
            let y = t.param(o.y);
            let v = t.stack(&[x, y]);
            t.cross_entropy(v, 7)
        }
        "tanh" => {
            let v = t.tanh(x);
            ce(t, v)
        }
        "add" => {
            let y = t.param(o.y);
            let v = t.add(x, y);
            ce(t, v)
        }
        "lstm" => {
            let (h, c) = (t.param(o.h), t.param(o.c));
            let (h2, c2) = t.lstm(o.lw, o.lb, x, h, c);
            let v = t.concat(&[h2, c2]);
            t.cross_entropy(v, 5)
        }
        "row-dot" => {
            let k = t.param(o.keys);
            let v = t.row_dot(k, x);
            ce(t, v)
        }
        "weighted-rows" => {
            let (p, k) = (t.param(o.p), t.param(o.keys));
            let v = t.weighted_rows(p, k);
            ce(t, v)
        }
        "softmax" => {
            let s = t.softmax(x);
            let v = t.affine(o.w, None, s);
            ce(t, v)
        }
        "attention" => {
            let (h, k) = (t.param(o.h), t.param(o.keys));
            let (ctx, weights) = t.attention(h, k, 3, o.wq, o.wk);
            let v = t.concat(&[ctx, weights]);
            t.cross_entropy(v, 6)
        }
        "attention-projected" => {
            let (h, k) = (t.param(o.h), t.param(o.keys));
            let projected = t.affine_rows(o.wk, k, 3);
            let (ctx, weights) = t.attention_projected(h, o.wq, k, projected);
            let v = t.concat(&[ctx, weights]);
            t.cross_entropy(v, 2)
        }
        "dropout" => {
            let mut rng = seeding::rng(7, "grad-dropout", 0);
            let v = t.dropout(x, 0.5, &mut rng);
            let v = t.add(v, x);
            ce(t, v)
        }
        "cross-entropy" => t.cross_entropy(x, 3),
        "log-prob" => t.log_prob(x, 4),
        "scaled-sum" => {
            let y = t.param(o.y);
            let v = t.scaled_sum(&[(x, 0.7), (y, -1.3)]);
            ce(t, v)
        }
        "mean" => {
            let a = t.log_prob(x, 0);
            let y = t.param(o.y);
            let b = t.log_prob(y, 3);
            t.mean(&[a, b])
        }
        other => panic!("unknown op {other}"),
    }
}

/// Worst relative error of reverse mode against finite differences for `op`.
pub fn op_grad_error(op: &str, probes: usize, seed: u64) -> f64 {
    let o = operands(seed);
    grad_check(
        |values, grads| {
            let mut t = Tape::new(values);
            let root = build(op, &o, &mut t);
            if let Some(g) = grads {
                t.backward(root, 1.0, g);
            }
            t.scalar(root)
        },
        &o.params,
        probes,
        seed,
    )
}

// ---------------------------------------------------------------- graphs

/// A small generated world with 8 to 10 nodes.
pub fn small_world(i: u64) -> NavGraph {
    let n = 8 + (i % 3) as usize;
    generate_world(format!("small-{i}"), seeding::derive(99, "small-world", i), n, Split::TrainSeen).unwrap()
}

/// Every simple path from `a` to `b`, with its geometric length.
pub fn all_simple_paths(g: &NavGraph, a: usize, b: usize) -> Vec<(Vec<usize>, f64)> {
    fn go(g: &NavGraph, b: usize, stack: &mut Vec<usize>, len: f64, out: &mut Vec<(Vec<usize>, f64)>) {
        let here = *stack.last().unwrap();
        if here == b {
            out.push((stack.clone(), len));
            return;
        }
        for &n in g.neighbors(here) {
            if !stack.contains(&n) {
                stack.push(n);
                go(g, b, stack, len + g.distance(here, n), out);
                stack.pop();
            }
        }
    }
    let mut out = Vec::new();
    go(g, b, &mut vec![a], 0.0, &mut out);
    out
}

/// Checks `shortest_path` and `teacher_action` against enumeration for every
/// ordered node pair; returns the number of pairs compared.
pub fn check_world_against_enumeration(g: &NavGraph) -> Result<usize, String> {
    let mut pairs = 0;
    for a in 0..g.node_count() {
        for b in 0..g.node_count() {
            if a == b {
                if teacher_action(g, a, b).unwrap() != NavAction::Stop {
                    return Err(format!("{}: teacher does not stop at goal {a}", g.id()));
                }
                continue;
            }
            let all = all_simple_paths(g, a, b);
            let best = all.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
            let optimal: Vec<&Vec<usize>> = all.iter().filter(|p| p.1 <= best + 1e-9).map(|p| &p.0).collect();
            let p = g.shortest_path(a, b).unwrap();
            if (p.length - best).abs() > 1e-9 {
                return Err(format!("{} {a}->{b}: length {} vs enumerated {best}", g.id(), p.length));
            }
            if !optimal.contains(&&p.nodes) {
                return Err(format!("{} {a}->{b}: {:?} is not an optimal simple path", g.id(), p.nodes));
            }
            let hops: Vec<usize> = optimal.iter().map(|n| n[1]).collect();
            match teacher_action(g, a, b).unwrap() {
                NavAction::Move(e) if hops.contains(&g.neighbors(a)[e]) => {}
                other => return Err(format!("{} {a}->{b}: teacher {other:?}, optimal next hops {hops:?}", g.id())),
            }
            pairs += 1;
        }
    }
    Ok(pairs)
}

/// Transforms `paths` and checks endpoints and length; returns the number of
/// closed walks that were correctly refused.
pub fn check_transforms(worlds: &WorldSet, paths: &[Path]) -> Result<usize, String> {
    let mut refused = 0;
    for p in paths {
        let g = worlds.get(&p.env).unwrap();
        match shortest_path_transform(g, p) {
            Ok(t) => {
                if t.start() != p.start() || t.end() != p.end() {
                    return Err(format!("endpoints changed: {:?} -> {:?}", p.nodes, t.nodes));
                }
                if t.length > p.length + 1e-12 {
                    return Err(format!("lengthened: {} -> {}", p.length, t.length));
                }
            }
            Err(Error::DegeneratePath(_)) if p.start() == p.end() => refused += 1,
            Err(e) => return Err(format!("{:?}: {e}", p.nodes)),
        }
    }
    Ok(refused)
}

/// `count` sampler walks over ten freshly generated training worlds.
pub fn aps_paths(count: usize) -> (WorldSet, Vec<Path>) {
    let mut cfg = ExperimentConfig::desk();
    cfg.world_train = 10;
    cfg.world_val_unseen = 0;
    cfg.world_test_unseen = 0;
    let worlds = generate_worlds(&cfg.world_spec()).unwrap();
    let aps = ApsModel::new(&cfg.aps_config(), 3).unwrap();
    let graphs: Vec<&NavGraph> = worlds.iter().collect();
    let batch = aps.sample_batch(&graphs, count, DEFAULT_HOPS, 11).unwrap();
    let paths = batch.paths.into_iter().map(|s| s.path).collect();
    (worlds, paths)
}

// ---------------------------------------------------------------- metrics

/// Direct evaluation of NE, OSR, SR and SPL from node positions.
pub fn direct_metrics(g: &NavGraph, nodes: &[usize], goal: usize, shortest: f64) -> (f64, bool, bool, f64) {
    let d = |n: usize| {
        let ([ax, ay], [bx, by]) = (g.position(n), g.position(goal));
        ((ax - bx).powi(2) + (ay - by).powi(2)).sqrt()
    };
    let ne = d(*nodes.last().unwrap());
    let osr = nodes.iter().any(|&n| d(n) <= SUCCESS_RADIUS);
    let sr = ne <= SUCCESS_RADIUS;
    let mut travelled = 0.0;
    for w in nodes.windows(2) {
        let ([ax, ay], [bx, by]) = (g.position(w[0]), g.position(w[1]));
        travelled += ((ax - bx).powi(2) + (ay - by).powi(2)).sqrt();
    }
    let spl = if sr { shortest / shortest.max(travelled) } else { 0.0 };
    (ne, osr, sr, spl)
}

pub fn trajectory(g: &NavGraph, nodes: Vec<usize>) -> Trajectory {
    Trajectory { env: g.id().to_string(), nodes, actions: Vec::new(), losses: Vec::new(), terminated_by: Termination::Stop }
}

/// Five nodes 2.5 m apart on a line plus a spur 2 m off the middle node.
pub fn line_world() -> NavGraph {
    let positions = vec![[0.0, 0.0], [2.5, 0.0], [5.0, 0.0], [7.5, 0.0], [10.0, 0.0], [5.0, 2.0]];
    let lm = vec![Landmark { color: 0, noun: 0 }; 6];
    NavGraph::from_parts("line", 0, Split::TrainSeen, positions, lm, &[(0, 1), (1, 2), (2, 3), (3, 4), (2, 5)]).unwrap()
}

/// The three worked scoring examples plus `random` randomized episodes.
pub fn check_metric_examples(random: usize) -> Result<(), String> {
    let g = line_world();
    let cases: [(Vec<usize>, usize, f64, (f64, bool, bool, f64)); 3] = [
        (vec![0, 1, 2], 2, 5.0, (0.0, true, true, 1.0)),
        (vec![0, 1, 2, 1, 2], 2, 5.0, (0.0, true, true, 0.5)),
        (vec![0, 1, 2, 3, 4], 5, 7.0, (29f64.sqrt(), true, false, 0.0)),
    ];
    for (nodes, goal, shortest, want) in cases {
        let m = episode_metrics(&g, &trajectory(&g, nodes.clone()), goal, shortest).unwrap();
        let got = (m.ne, m.oracle_success, m.success, m.spl);
        if (got.0 - want.0).abs() > 1e-12 || got.1 != want.1 || got.2 != want.2 || (got.3 - want.3).abs() > 1e-12 {
            return Err(format!("{nodes:?} -> {goal}: {got:?} != {want:?}"));
        }
    }
    for i in 0..random {
        let g = small_world(i as u64 + 1000);
        let mut rng = seeding::rng(5, "metric-episode", i as u64);
        let mut node = rng.gen_range(0..g.node_count());
        let mut nodes = vec![node];
        for _ in 0..rng.gen_range(0..=10) {
            node = g.neighbors(node)[rng.gen_range(0..g.degree(node))];
            nodes.push(node);
        }
        let mut goal = rng.gen_range(0..g.node_count() - 1);
        if goal >= nodes[0] {
            goal += 1;
        }
        let shortest = g.shortest_path(nodes[0], goal).unwrap().length;
        let m = episode_metrics(&g, &trajectory(&g, nodes.clone()), goal, shortest).unwrap();
        let (ne, osr, sr, spl) = direct_metrics(&g, &nodes, goal, shortest);
        let ordered = m.spl <= f64::from(u8::from(m.success)) && m.success <= m.oracle_success;
        if !ordered || (m.ne - ne).abs() > 1e-12 || m.oracle_success != osr || m.success != sr || (m.spl - spl).abs() > 1e-12 {
            return Err(format!("episode {i}: {m:?} vs direct ({ne}, {osr}, {sr}, {spl})"));
        }
    }
    Ok(())
}

// ---------------------------------------------------------------- policy gradient

pub fn small_aps_config() -> ApsConfig {
    ApsConfig { view: Flavor::Panoramic, hidden: 8, action_embed: 4, attention: 4 }
}

fn plain_landmarks(n: usize) -> Vec<Landmark> {
    (0..n).map(|i| Landmark { color: i as u8, noun: (i * 3 % 8) as u8 }).collect()
}

/// Two nodes joined by one edge.
pub fn two_node_world() -> NavGraph {
    NavGraph::from_parts("pair", 3, Split::TrainSeen, vec![[0.0, 0.0], [2.0, 0.0]], plain_landmarks(2), &[(0, 1)]).unwrap()
}

/// A square with one diagonal: two nodes of degree 3, two of degree 2.
pub fn square_world() -> NavGraph {
    NavGraph::from_parts(
        "square",
        4,
        Split::TrainSeen,
        vec![[0.0, 0.0], [2.0, 0.0], [0.0, 2.0], [2.0, 2.0]],
        plain_landmarks(4),
        &[(0, 1), (0, 2), (1, 3), (2, 3), (0, 3)],
    )
    .unwrap()
}

/// Every walk of exactly `hops` moves from `start`.
pub fn all_walks(g: &NavGraph, start: usize, hops: usize) -> Vec<Vec<usize>> {
    let mut walks = vec![vec![start]];
    for _ in 0..hops {
        walks = walks
            .into_iter()
            .flat_map(|w| {
                let last = *w.last().unwrap();
                g.neighbors(last).iter().map(move |&n| {
                    let mut next = w.clone();
                    next.push(n);
                    next
                })
            })
            .collect();
    }
    walks
}

/// Outcome of the enumeration check: the largest absolute difference between
/// the probability-weighted estimator and the exact gradient, and the size of
/// the exact gradient.
pub struct ReinforceCheck {
    pub outcomes: usize,
    pub max_gap: f64,
    pub exact_norm: f64,
}

/// Enumerates every walk of `hops` moves (start uniform over nodes), weights the
/// per-walk estimator by its probability and compares with central finite
/// differences of the expected reward.
pub fn reinforce_expectation(g: NavGraph, hops: usize, baseline: f64, seed: u64) -> ReinforceCheck {
    let worlds = WorldSet::new(vec![g]).unwrap();
    let g = worlds.iter().next().unwrap();
    let mut aps = ApsModel::new(&small_aps_config(), seed).unwrap();
    // Sharpen the scorer so the policy is far from uniform.
    let score = aps.params().require("aps/score").unwrap();
    aps.params_mut().value_mut(score).values_mut().iter_mut().for_each(|v| *v *= 8.0);

    let outcomes: Vec<Path> = (0..g.node_count())
        .flat_map(|s| all_walks(g, s, hops))
        .map(|n| Path::from_nodes(g, n).unwrap())
        .collect();
    let rewards: Vec<f64> = (0..outcomes.len()).map(|i| 0.4 + 0.37 * ((i * 7 % 11) as f64)).collect();
    let start_weight = 1.0 / g.node_count() as f64;

    let sizes: Vec<usize> = aps.params().values().iter().map(Tensor::len).collect();
    let mut estimate: Vec<Vec<f64>> = sizes.iter().map(|&n| vec![0.0; n]).collect();
    for (path, &r) in outcomes.iter().zip(&rewards) {
        let log_prob = aps.path_log_prob(g, path).unwrap();
        let weight = start_weight * log_prob.exp();
        aps.params_mut().zero_grads();
        let batch = SampledBatch {
            paths: vec![SampledPath { path: path.clone(), step_log_probs: vec![log_prob], log_prob }],
            seed: 0,
        };
        let mut tracker = BaselineTracker { sum: baseline, count: u64::from(baseline != 0.0) };
        let used = aps_policy_gradient(&mut aps, &batch, &[r], &mut tracker, &worlds).unwrap();
        assert_eq!(used, baseline);
        for (acc, grad) in estimate.iter_mut().zip(aps.params().grads()) {
            for (a, d) in acc.iter_mut().zip(grad.values()) {
                *a += weight * d;
            }
        }
    }

    let expected_reward = |aps: &ApsModel| -> f64 {
        outcomes.iter().zip(&rewards).map(|(p, r)| start_weight * aps.path_log_prob(g, p).unwrap().exp() * r).sum()
    };
    let h = 1e-5;
    let (mut max_gap, mut norm2) = (0.0f64, 0.0);
    for (t, &n) in sizes.iter().enumerate() {
        let id = aps.params().id(aps.params().names().nth(t).unwrap()).unwrap();
        for k in 0..n {
            let original = aps.params().value(id).values()[k];
            aps.params_mut().value_mut(id).values_mut()[k] = original + h;
            let up = expected_reward(&aps);
            aps.params_mut().value_mut(id).values_mut()[k] = original - h;
            let down = expected_reward(&aps);
            aps.params_mut().value_mut(id).values_mut()[k] = original;
            // The estimator descends minus the surrogate, so it equals -dE[R].
            let exact = -(up - down) / (2.0 * h);
            norm2 += exact * exact;
            max_gap = max_gap.max((estimate[t][k] - exact).abs());
        }
    }
    ReinforceCheck { outcomes: outcomes.len(), max_gap, exact_norm: norm2.sqrt() }
}
