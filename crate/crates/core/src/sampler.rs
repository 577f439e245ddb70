//! Recurrent path sampler. It sees only visual history and its own previous
//! action, never an instruction or goal, and walks a drawn number of hops.

use rand::Rng as _;

use crate::data::HopRange;
use crate::error::{invalid_arg, Error, Result};
use crate::navigator::Flavor;
use crate::nn::{Checkpoint, LstmParams, ParamId, ParamSet, Tape, Var};
use crate::seeding::{self, Rng};
use crate::world::{NavGraph, Path, FEATURE_DIM, VIEW_PATCHES};

/// Hop counts of sampled paths unless configured otherwise.
pub const DEFAULT_HOPS: HopRange = HopRange { min: 4, max: 6 };

#[derive(Clone, Debug, PartialEq)]
pub struct ApsConfig {
    pub view: Flavor,
    pub hidden: usize,
    pub action_embed: usize,
    pub attention: usize,
}

impl Default for ApsConfig {
    fn default() -> Self {
        Self { view: Flavor::Panoramic, hidden: 64, action_embed: 16, attention: 32 }
    }
}

#[derive(Clone, Copy, Debug)]
struct Handles {
    vis_query: ParamId,
    vis_key: ParamId,
    lstm: LstmParams,
    score: ParamId,
    embed: ParamId,
}

impl Handles {
    fn bind(p: &ParamSet) -> Result<Self> {
        Ok(Self {
            vis_query: p.require("aps/vis/q")?,
            vis_key: p.require("aps/vis/k")?,
            lstm: LstmParams::lookup(p, "aps/lstm")?,
            score: p.require("aps/score")?,
            embed: p.require("aps/embed")?,
        })
    }
}

/// One sampled walk with the log-probability of each chosen action.
#[derive(Clone, Debug, PartialEq)]
pub struct SampledPath {
    pub path: Path,
    pub step_log_probs: Vec<f64>,
    pub log_prob: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampledBatch {
    pub paths: Vec<SampledPath>,
    pub seed: u64,
}

impl SampledBatch {
    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }
}

/// Value-level recurrent state of the sampler.
#[derive(Clone, Debug, PartialEq)]
pub struct ApsState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
    /// Raw feature of the patch the previous move faced; `None` before the first move.
    pub prev: Option<[f64; FEATURE_DIM]>,
}

#[derive(Clone, Copy, Debug)]
struct Net {
    handles: Handles,
    view: Flavor,
    action_embed: usize,
}

impl Net {
    fn patches(&self, tape: &mut Tape<'_>, g: &NavGraph, node: usize) -> (Var, usize) {
        match self.view {
            Flavor::Panoramic => (tape.input(g.feature_rows(node)), VIEW_PATCHES),
            Flavor::Visuomotor => (tape.input(g.patch_feature(node, 0).to_vec()), 1),
        }
    }

    /// Logits over the `rows_c` candidate patches given the previous state.
    #[allow(clippy::too_many_arguments)]
    fn step(
        &self,
        tape: &mut Tape<'_>,
        patches: Var,
        rows: usize,
        prev: Option<Var>,
        h: Var,
        c: Var,
        cands: Var,
        rows_c: usize,
    ) -> (Var, Var, Var) {
        let hd = self.handles;
        let (visual, _) = tape.attention(h, patches, rows, hd.vis_query, hd.vis_key);
        let prev = match prev {
            Some(u) => tape.affine(hd.embed, None, u),
            None => tape.zeros(self.action_embed),
        };
        let x = tape.concat(&[visual, prev]);
        let (h, c) = hd.lstm.step(tape, x, h, c);
        let query = tape.affine(hd.score, None, h);
        let keys = tape.affine_rows(hd.embed, cands, rows_c);
        (tape.row_dot(keys, query), h, c)
    }

    fn candidates(tape: &mut Tape<'_>, g: &NavGraph, node: usize) -> Var {
        tape.input((0..g.degree(node)).flat_map(|a| g.action_patch(node, a)).collect())
    }

    /// Walks `hops` moves from `start`, either sampling (`actions = None`) or
    /// replaying given actions. Returns nodes, actions and per-step log-prob nodes.
    fn walk(
        &self,
        tape: &mut Tape<'_>,
        g: &NavGraph,
        start: usize,
        hops: usize,
        actions: Option<&[usize]>,
        mut rng: Option<&mut Rng>,
    ) -> Result<(Vec<usize>, Vec<usize>, Vec<Var>)> {
        g.check_node(start)?;
        let hidden = self.handles.lstm.hidden;
        let mut h = tape.zeros(hidden);
        let mut c = tape.zeros(hidden);
        let mut prev: Option<Var> = None;
        let mut node = start;
        let mut nodes = vec![start];
        let mut taken = Vec::with_capacity(hops);
        let mut logps = Vec::with_capacity(hops);
        for t in 0..hops {
            let degree = g.degree(node);
            if degree == 0 {
                return Err(invalid_arg(format!("node {node} has no navigable edge")));
            }
            let (patches, rows) = self.patches(tape, g, node);
            let cands = Self::candidates(tape, g, node);
            let (logits, h2, c2) = self.step(tape, patches, rows, prev, h, c, cands, degree);
            (h, c) = (h2, c2);
            let a = match actions {
                Some(acts) => {
                    let a = acts[t];
                    if a >= degree {
                        return Err(invalid_arg(format!("action {a} out of range at node {node}")));
                    }
                    a
                }
                None => {
                    let probs = crate::nn::softmax(tape.value(logits))?;
                    sample(&probs, rng.as_deref_mut().expect("sampling needs a stream"))
                }
            };
            logps.push(tape.log_prob(logits, a));
            taken.push(a);
            prev = Some(tape.input(g.action_patch(node, a).to_vec()));
            node = g.step(node, a)?;
            nodes.push(node);
        }
        Ok((nodes, taken, logps))
    }
}

fn sample(probs: &[f64], rng: &mut Rng) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

#[derive(Clone, Debug)]
pub struct ApsModel {
    params: ParamSet,
    net: Net,
}

impl PartialEq for ApsModel {
    fn eq(&self, other: &Self) -> bool {
        self.net.view == other.net.view && self.params.values_bit_equal(&other.params)
    }
}

impl ApsModel {
    pub fn new(cfg: &ApsConfig, seed: u64) -> Result<Self> {
        let mut rng = seeding::rng(seed, "aps-init", 0);
        let mut p = ParamSet::new();
        let (h, att, ae) = (cfg.hidden, cfg.attention, cfg.action_embed);
        p.insert_uniform("aps/vis/q", &[att, h], h, &mut rng)?;
        p.insert_uniform("aps/vis/k", &[att, FEATURE_DIM], FEATURE_DIM, &mut rng)?;
        LstmParams::new(&mut p, "aps/lstm", FEATURE_DIM + ae, h, &mut rng)?;
        p.insert_uniform("aps/score", &[ae, h], h, &mut rng)?;
        p.insert_uniform("aps/embed", &[ae, FEATURE_DIM], FEATURE_DIM, &mut rng)?;
        let handles = Handles::bind(&p)?;
        Ok(Self { params: p, net: Net { handles, view: cfg.view, action_embed: ae } })
    }

    pub fn view(&self) -> Flavor {
        self.net.view
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint::from_params(&self.params).with_meta("flavor", vec![self.net.view.code()])
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let view = match ck.meta("flavor") {
            Some(t) => Flavor::from_code(t.values()[0])?,
            None => return Err(Error::Format { what: "checkpoint", detail: "missing meta/flavor".into() }),
        };
        let params = ck.params()?;
        let handles = Handles::bind(&params)?;
        let action_embed = params.value(handles.embed).dims()[0];
        Ok(Self { params, net: Net { handles, view, action_embed } })
    }

    /// Zero recurrent state before the first move.
    pub fn initial_state(&self) -> ApsState {
        let hidden = self.net.handles.lstm.hidden;
        ApsState { h: vec![0.0; hidden], c: vec![0.0; hidden], prev: None }
    }

    /// One sampler step. `patches` is row-major `rows x d_f`; `candidates` holds the
    /// raw feature of the patch facing each navigable direction. Returns the
    /// distribution over candidates and the updated state (with `prev` unchanged).
    pub fn aps_step(
        &self,
        patches: &[f64],
        state: &ApsState,
        candidates: &[[f64; FEATURE_DIM]],
    ) -> Result<(Vec<f64>, ApsState)> {
        if candidates.is_empty() {
            return Err(invalid_arg("no navigable direction"));
        }
        if patches.is_empty() || patches.len() % FEATURE_DIM != 0 {
            return Err(invalid_arg(format!("patch block of {} values", patches.len())));
        }
        let hidden = self.net.handles.lstm.hidden;
        if state.h.len() != hidden || state.c.len() != hidden {
            return Err(invalid_arg("sampler state has the wrong width"));
        }
        let mut tape = Tape::new(self.params.values());
        let rows = patches.len() / FEATURE_DIM;
        let p = tape.input(patches.to_vec());
        let prev = state.prev.map(|u| tape.input(u.to_vec()));
        let h = tape.input(state.h.clone());
        let c = tape.input(state.c.clone());
        let cands = tape.input(candidates.iter().flatten().copied().collect());
        let (logits, h, c) = self.net.step(&mut tape, p, rows, prev, h, c, cands, candidates.len());
        let probs = crate::nn::softmax(tape.value(logits))?;
        Ok((probs, ApsState { h: tape.value(h).to_vec(), c: tape.value(c).to_vec(), prev: state.prev }))
    }

    /// Observation block the sampler's view flavor consumes at `node`.
    pub fn observation(&self, g: &NavGraph, node: usize) -> Vec<f64> {
        match self.net.view {
            Flavor::Panoramic => g.feature_rows(node),
            Flavor::Visuomotor => g.patch_feature(node, 0).to_vec(),
        }
    }

    /// Samples one walk of `hops` moves from `start`.
    pub fn sample_walk(&self, g: &NavGraph, start: usize, hops: usize, rng: &mut Rng) -> Result<SampledPath> {
        if hops == 0 {
            return Err(invalid_arg("a sampled path needs at least one hop"));
        }
        let mut tape = Tape::new(self.params.values());
        let (nodes, _, logps) = self.net.walk(&mut tape, g, start, hops, None, Some(rng))?;
        let step_log_probs: Vec<f64> = logps.iter().map(|&v| tape.scalar(v)).collect();
        Ok(SampledPath { path: Path::from_nodes(g, nodes)?, log_prob: step_log_probs.iter().sum(), step_log_probs })
    }

    /// `count` paths in `g` with uniform start nodes and hop counts from `hops`.
    pub fn sample_paths(&self, g: &NavGraph, count: usize, hops: HopRange, seed: u64) -> Result<SampledBatch> {
        self.sample_batch(&[g], count, hops, seed)
    }

    /// Like [`ApsModel::sample_paths`], drawing each path's world uniformly from `worlds`.
    pub fn sample_batch(&self, worlds: &[&NavGraph], count: usize, hops: HopRange, seed: u64) -> Result<SampledBatch> {
        if count == 0 {
            return Err(invalid_arg("sample count must be at least 1"));
        }
        if worlds.is_empty() {
            return Err(invalid_arg("no world to sample from"));
        }
        let paths = (0..count)
            .map(|i| {
                let mut rng = seeding::rng(seed, "aps-path", i as u64);
                let g = worlds[rng.gen_range(0..worlds.len())];
                let start = rng.gen_range(0..g.node_count());
                let n = hops.sample(&mut rng);
                self.sample_walk(g, start, n, &mut rng)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(SampledBatch { paths, seed })
    }

    /// Log-probability of the sampler producing `path`'s actions.
    pub fn path_log_prob(&self, g: &NavGraph, path: &Path) -> Result<f64> {
        let mut tape = Tape::new(self.params.values());
        let logp = self.net.log_prob(&mut tape, g, path)?;
        Ok(tape.scalar(logp))
    }

    /// Adds `coef * d log p(path)` to the parameter gradients.
    pub fn accumulate_log_prob_grad(&mut self, g: &NavGraph, path: &Path, coef: f64) -> Result<f64> {
        let net = self.net;
        let (values, grads) = self.params.split_mut();
        let mut tape = Tape::new(values);
        let logp = net.log_prob(&mut tape, g, path)?;
        tape.backward(logp, coef, grads);
        Ok(tape.scalar(logp))
    }
}

impl Net {
    fn log_prob(&self, tape: &mut Tape<'_>, g: &NavGraph, path: &Path) -> Result<Var> {
        if path.env != g.id() {
            return Err(invalid_arg(format!("path from {} replayed in {}", path.env, g.id())));
        }
        let (_, _, logps) = self.walk(tape, g, path.start(), path.hops(), Some(&path.actions), None)?;
        let terms: Vec<(Var, f64)> = logps.iter().map(|&v| (v, 1.0)).collect();
        Ok(tape.scaled_sum(&terms))
    }
}

/// Uniform random walks with the same start and hop-count distribution as the sampler.
pub fn random_walk_paths(worlds: &[&NavGraph], count: usize, hops: HopRange, seed: u64) -> Result<Vec<Path>> {
    if worlds.is_empty() {
        return Err(invalid_arg("no world to sample from"));
    }
    (0..count)
        .map(|i| {
            let mut rng = seeding::rng(seed, "random-walk", i as u64);
            let g = worlds[rng.gen_range(0..worlds.len())];
            let mut node = rng.gen_range(0..g.node_count());
            let n = hops.sample(&mut rng);
            let mut nodes = vec![node];
            for _ in 0..n {
                node = g.neighbors(node)[rng.gen_range(0..g.degree(node))];
                nodes.push(node);
            }
            Path::from_nodes(g, nodes)
        })
        .collect()
}
