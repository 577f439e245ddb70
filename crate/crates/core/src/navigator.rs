//! Instruction-following navigators: an instruction encoder plus an attentive
//! action decoder scoring each navigable edge and an explicit STOP.

use std::fmt;
use std::str::FromStr;

use rand::Rng as _;

use crate::error::{invalid_arg, Error, Result};
use crate::nn::{Checkpoint, LstmParams, ParamId, ParamSet, Tape, Var};
use crate::seeding::{self, Rng};
use crate::world::{
    DistanceTable, Instruction, NavAction, NavGraph, Path, ACTION_FEATURE_DIM, FEATURE_DIM, VIEW_PATCHES,
    VOCAB_SIZE,
};

/// Default rollout length limit.
pub const STEP_CAP: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Flavor {
    /// Consumes only the front-facing patch.
    Visuomotor,
    /// Attends over all view patches.
    Panoramic,
}

impl Flavor {
    pub(crate) fn code(self) -> f64 {
        match self {
            Flavor::Visuomotor => 0.0,
            Flavor::Panoramic => 1.0,
        }
    }

    pub(crate) fn from_code(v: f64) -> Result<Self> {
        match v as i64 {
            0 => Ok(Flavor::Visuomotor),
            1 => Ok(Flavor::Panoramic),
            _ => Err(Error::Format { what: "checkpoint", detail: format!("unknown navigator flavor {v}") }),
        }
    }
}

impl fmt::Display for Flavor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Flavor::Visuomotor => "visuomotor",
            Flavor::Panoramic => "panoramic",
        })
    }
}

impl FromStr for Flavor {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "visuomotor" => Ok(Flavor::Visuomotor),
            "panoramic" => Ok(Flavor::Panoramic),
            _ => Err(invalid_arg(format!("unknown navigator flavor {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NavConfig {
    pub flavor: Flavor,
    pub hidden: usize,
    pub embed: usize,
    pub action_embed: usize,
    pub attention: usize,
    pub dropout: f64,
}

impl Default for NavConfig {
    fn default() -> Self {
        Self { flavor: Flavor::Panoramic, hidden: 64, embed: 32, action_embed: 16, attention: 32, dropout: 0.5 }
    }
}

#[derive(Clone, Copy, Debug)]
struct Handles {
    tokens: ParamId,
    encoder: LstmParams,
    vis: Option<(ParamId, ParamId)>,
    action: ParamId,
    decoder: LstmParams,
    ins_query: ParamId,
    ins_key: ParamId,
    mix_w: ParamId,
    mix_b: ParamId,
    cand: ParamId,
    stop_w: ParamId,
    stop_b: ParamId,
}

impl Handles {
    fn bind(p: &ParamSet, flavor: Flavor) -> Result<Self> {
        let vis = match flavor {
            Flavor::Panoramic => Some((p.require("nav/vis/q")?, p.require("nav/vis/k")?)),
            Flavor::Visuomotor => {
                if p.id("nav/vis/q").is_some() {
                    return Err(Error::InvalidState("visuomotor navigator with visual attention".into()));
                }
                None
            }
        };
        Ok(Self {
            tokens: p.require("nav/tokens")?,
            encoder: LstmParams::lookup(p, "nav/enc")?,
            vis,
            action: p.require("nav/action")?,
            decoder: LstmParams::lookup(p, "nav/dec")?,
            ins_query: p.require("nav/ins/q")?,
            ins_key: p.require("nav/ins/k")?,
            mix_w: p.require("nav/mix/w")?,
            mix_b: p.require("nav/mix/b")?,
            cand: p.require("nav/cand")?,
            stop_w: p.require("nav/stop/w")?,
            stop_b: p.require("nav/stop/b")?,
        })
    }
}

/// Why a rollout ended.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Termination {
    Stop,
    StepCap,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub env: String,
    pub nodes: Vec<usize>,
    pub actions: Vec<NavAction>,
    /// Per-step cross-entropy when the rollout was supervised.
    pub losses: Vec<f64>,
    pub terminated_by: Termination,
}

impl Trajectory {
    pub fn final_node(&self) -> usize {
        *self.nodes.last().expect("trajectory has a start node")
    }

    /// Travelled geometric length.
    pub fn length(&self, g: &NavGraph) -> f64 {
        self.nodes.windows(2).map(|w| g.distance(w[0], w[1])).sum()
    }

    pub fn mean_loss(&self) -> Option<f64> {
        (!self.losses.is_empty()).then(|| self.losses.iter().sum::<f64>() / self.losses.len() as f64)
    }
}

/// How a rollout picks actions and what it is supervised towards.
pub enum RolloutMode<'a> {
    /// Executes sampled actions, supervised by the next hop of the shortest path to the goal.
    StudentForcing { teacher: &'a DistanceTable, rng: &'a mut Rng },
    /// Arg-max actions, no supervision.
    Greedy,
    /// Executes and supervises the actions of a given path, then STOP. Needs no planner.
    PathFollowing { path: &'a Path, rng: &'a mut Rng },
}

/// Per-token instruction encodings (value level).
#[derive(Clone, Debug, PartialEq)]
pub struct InstructionContext {
    /// Row-major `len x hidden`.
    pub states: Vec<f64>,
    pub len: usize,
    pub final_h: Vec<f64>,
    pub final_c: Vec<f64>,
}

/// Decoder recurrent state between steps (value level).
#[derive(Clone, Debug, PartialEq)]
pub struct DecoderState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
    pub prev_action: [f64; ACTION_FEATURE_DIM],
}

struct EncVars {
    keys: Var,
    projected: Var,
    summary: Var,
    h: Var,
    c: Var,
}

#[derive(Clone, Copy)]
struct StepVars {
    h: Var,
    c: Var,
}

/// Descriptor of "the previous action" before the first move: facing heading 0.
fn start_action() -> [f64; ACTION_FEATURE_DIM] {
    let mut a = [0.0; ACTION_FEATURE_DIM];
    a[FEATURE_DIM + 1] = 1.0;
    a[FEATURE_DIM + 3] = 1.0;
    a
}

#[derive(Clone, Copy, Debug)]
struct Net {
    handles: Handles,
    flavor: Flavor,
    dropout: f64,
}

impl Net {
    fn encode(&self, tape: &mut Tape<'_>, tokens: &[u16]) -> EncVars {
        let hd = self.handles;
        let mut h = tape.zeros(hd.encoder.hidden);
        let mut c = tape.zeros(hd.encoder.hidden);
        let mut states = Vec::with_capacity(tokens.len());
        for &t in tokens {
            let e = tape.embed(hd.tokens, t as usize);
            (h, c) = hd.encoder.step(tape, e, h, c);
            states.push(h);
        }
        let keys = tape.stack(&states);
        let projected = tape.affine_rows(hd.ins_key, keys, states.len());
        EncVars { keys, projected, summary: h, h, c }
    }

    /// Logits over `[edge_0, .., edge_{deg-1}, STOP]` at `node`.
    #[allow(clippy::too_many_arguments)]
    fn step(
        &self,
        tape: &mut Tape<'_>,
        g: &NavGraph,
        node: usize,
        enc: &EncVars,
        state: StepVars,
        prev_action: &[f64; ACTION_FEATURE_DIM],
        rng: Option<&mut Rng>,
    ) -> (Var, StepVars) {
        let hd = self.handles;
        let visual = match hd.vis {
            Some((q, k)) => {
                let patches = tape.input(g.feature_rows(node));
                tape.attention(state.h, patches, VIEW_PATCHES, q, k).0
            }
            None => tape.input(g.patch_feature(node, 0).to_vec()),
        };
        let prev = tape.input(prev_action.to_vec());
        let prev = tape.affine(hd.action, None, prev);
        let x = tape.concat(&[visual, prev]);
        let (h, c) = hd.decoder.step(tape, x, state.h, state.c);
        let (ctx, _) = tape.attention_projected(h, hd.ins_query, enc.keys, enc.projected);
        let joint = tape.concat(&[h, ctx, enc.summary]);
        let pre = tape.affine(hd.mix_w, Some(hd.mix_b), joint);
        let mut mixed = tape.tanh(pre);
        if let Some(r) = rng {
            mixed = tape.dropout(mixed, self.dropout, r);
        }
        let degree = g.degree(node);
        let cands: Vec<f64> = (0..degree).flat_map(|a| g.action_feature(node, a)).collect();
        let cands = tape.input(cands);
        let projected = tape.affine_rows(hd.cand, cands, degree);
        let edge_logits = tape.row_dot(projected, mixed);
        let stop = tape.affine(hd.stop_w, Some(hd.stop_b), mixed);
        (tape.concat(&[edge_logits, stop]), StepVars { h, c })
    }
}

#[derive(Clone, Debug)]
pub struct NavModel {
    params: ParamSet,
    net: Net,
}

impl PartialEq for NavModel {
    fn eq(&self, other: &Self) -> bool {
        self.net.flavor == other.net.flavor
            && self.net.dropout.to_bits() == other.net.dropout.to_bits()
            && self.params.values_bit_equal(&other.params)
    }
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
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

fn to_action(index: usize, degree: usize) -> NavAction {
    if index == degree {
        NavAction::Stop
    } else {
        NavAction::Move(index)
    }
}

fn action_index(a: NavAction, degree: usize) -> usize {
    match a {
        NavAction::Move(i) => i,
        NavAction::Stop => degree,
    }
}

impl NavModel {
    pub fn new(cfg: &NavConfig, seed: u64) -> Result<Self> {
        let mut rng = seeding::rng(seed, "nav-init", 0);
        let mut p = ParamSet::new();
        let (h, att) = (cfg.hidden, cfg.attention);
        p.insert_uniform("nav/tokens", &[VOCAB_SIZE, cfg.embed], cfg.embed, &mut rng)?;
        LstmParams::new(&mut p, "nav/enc", cfg.embed, h, &mut rng)?;
        if cfg.flavor == Flavor::Panoramic {
            p.insert_uniform("nav/vis/q", &[att, h], h, &mut rng)?;
            p.insert_uniform("nav/vis/k", &[att, FEATURE_DIM], FEATURE_DIM, &mut rng)?;
        }
        p.insert_uniform("nav/action", &[cfg.action_embed, ACTION_FEATURE_DIM], ACTION_FEATURE_DIM, &mut rng)?;
        LstmParams::new(&mut p, "nav/dec", FEATURE_DIM + cfg.action_embed, h, &mut rng)?;
        p.insert_uniform("nav/ins/q", &[att, h], h, &mut rng)?;
        p.insert_uniform("nav/ins/k", &[att, h], h, &mut rng)?;
        p.insert_uniform("nav/mix/w", &[h, 3 * h], 3 * h, &mut rng)?;
        p.insert_uniform("nav/mix/b", &[h], 3 * h, &mut rng)?;
        p.insert_uniform("nav/cand", &[h, ACTION_FEATURE_DIM], ACTION_FEATURE_DIM, &mut rng)?;
        p.insert_uniform("nav/stop/w", &[1, h], h, &mut rng)?;
        p.insert_uniform("nav/stop/b", &[1], h, &mut rng)?;
        let handles = Handles::bind(&p, cfg.flavor)?;
        Ok(Self { params: p, net: Net { handles, flavor: cfg.flavor, dropout: cfg.dropout } })
    }

    pub fn flavor(&self) -> Flavor {
        self.net.flavor
    }

    pub fn dropout(&self) -> f64 {
        self.net.dropout
    }

    pub fn set_dropout(&mut self, rate: f64) {
        self.net.dropout = rate;
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint::from_params(&self.params)
            .with_meta("flavor", vec![self.net.flavor.code()])
            .with_meta("dropout", vec![self.net.dropout])
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let flavor = match ck.meta("flavor") {
            Some(t) => Flavor::from_code(t.values()[0])?,
            None => return Err(Error::Format { what: "checkpoint", detail: "missing meta/flavor".into() }),
        };
        let dropout = ck.meta("dropout").map(|t| t.values()[0]).unwrap_or(0.0);
        let params = ck.params()?;
        let handles = Handles::bind(&params, flavor)?;
        Ok(Self { params, net: Net { handles, flavor, dropout } })
    }

    /// Per-token hidden states of the instruction encoder (dropout off).
    pub fn encode_instruction(&self, instr: &Instruction) -> InstructionContext {
        let mut tape = Tape::new(self.params.values());
        let enc = self.net.encode(&mut tape, instr.tokens());
        InstructionContext {
            states: tape.value(enc.keys).to_vec(),
            len: instr.len(),
            final_h: tape.value(enc.h).to_vec(),
            final_c: tape.value(enc.c).to_vec(),
        }
    }

    /// Initial decoder state for an encoded instruction.
    pub fn initial_state(&self, ctx: &InstructionContext) -> DecoderState {
        DecoderState { h: ctx.final_h.clone(), c: ctx.final_c.clone(), prev_action: start_action() }
    }

    /// Distribution over the `degree(node) + 1` options (last is STOP), dropout off.
    /// The returned state still needs `prev_action` set once an action is chosen.
    pub fn decode_step(
        &self,
        g: &NavGraph,
        node: usize,
        state: &DecoderState,
        ctx: &InstructionContext,
    ) -> Result<(Vec<f64>, DecoderState)> {
        g.check_node(node)?;
        let mut tape = Tape::new(self.params.values());
        let keys = tape.input(ctx.states.clone());
        let projected = tape.affine_rows(self.net.handles.ins_key, keys, ctx.len);
        let summary = tape.input(ctx.final_h.clone());
        let enc = EncVars { keys, projected, summary, h: summary, c: summary };
        let sv = StepVars { h: tape.input(state.h.clone()), c: tape.input(state.c.clone()) };
        let (logits, next) = self.net.step(&mut tape, g, node, &enc, sv, &state.prev_action, None);
        let probs = tape.softmax(logits);
        let out = DecoderState {
            h: tape.value(next.h).to_vec(),
            c: tape.value(next.c).to_vec(),
            prev_action: state.prev_action,
        };
        Ok((tape.value(probs).to_vec(), out))
    }

    /// Rollout without gradients.
    pub fn rollout(
        &self,
        g: &NavGraph,
        start: usize,
        instr: &Instruction,
        mode: RolloutMode<'_>,
        step_cap: usize,
    ) -> Result<Trajectory> {
        let mut tape = Tape::new(self.params.values());
        Ok(self.net.rollout(&mut tape, g, start, instr, mode, step_cap)?.0)
    }

    /// Splits the model into a copyable forward network and its parameters, so
    /// callers can read values while accumulating gradients.
    pub(crate) fn parts_mut(&mut self) -> (NavForward, &mut ParamSet) {
        (NavForward(self.net), &mut self.params)
    }
}

/// Forward-only view of a navigator, detached from its parameter storage.
#[derive(Clone, Copy)]
pub(crate) struct NavForward(Net);

impl NavForward {
    pub(crate) fn rollout(
        &self,
        tape: &mut Tape<'_>,
        g: &NavGraph,
        start: usize,
        instr: &Instruction,
        mode: RolloutMode<'_>,
        step_cap: usize,
    ) -> Result<(Trajectory, Option<Var>)> {
        self.0.rollout(tape, g, start, instr, mode, step_cap)
    }
}

impl Net {
    fn rollout(
        &self,
        tape: &mut Tape<'_>,
        g: &NavGraph,
        start: usize,
        instr: &Instruction,
        mut mode: RolloutMode<'_>,
        step_cap: usize,
    ) -> Result<(Trajectory, Option<Var>)> {
        if step_cap < 1 {
            return Err(invalid_arg("step cap must be at least 1"));
        }
        g.check_node(start)?;
        if let RolloutMode::PathFollowing { path, .. } = &mode {
            if path.start() != start || path.env != g.id() {
                return Err(invalid_arg("followed path does not start at the rollout start"));
            }
        }
        let enc = self.encode(tape, instr.tokens());
        let mut state = StepVars { h: enc.h, c: enc.c };
        let mut prev_action = start_action();
        let mut node = start;
        let mut traj = Trajectory {
            env: g.id().to_string(),
            nodes: vec![start],
            actions: Vec::new(),
            losses: Vec::new(),
            terminated_by: Termination::StepCap,
        };
        let mut loss_vars = Vec::new();
        for t in 0..step_cap {
            let degree = g.degree(node);
            let rng = match &mut mode {
                RolloutMode::StudentForcing { rng, .. } | RolloutMode::PathFollowing { rng, .. } => Some(&mut **rng),
                RolloutMode::Greedy => None,
            };
            let (logits, next) = self.step(tape, g, node, &enc, state, &prev_action, rng);
            state = next;
            let target = match &mode {
                RolloutMode::StudentForcing { teacher, .. } => Some(action_index(teacher.teacher(g, node)?, degree)),
                RolloutMode::PathFollowing { path, .. } => Some(if t < path.hops() { path.actions[t] } else { degree }),
                RolloutMode::Greedy => None,
            };
            if let Some(target) = target {
                let loss = tape.cross_entropy(logits, target);
                traj.losses.push(tape.scalar(loss));
                loss_vars.push(loss);
            }
            let choice = match &mut mode {
                RolloutMode::StudentForcing { rng, .. } => {
                    let probs = tape.softmax(logits);
                    sample(tape.value(probs), rng)
                }
                RolloutMode::Greedy => argmax(tape.value(logits)),
                RolloutMode::PathFollowing { .. } => target.expect("path supervision"),
            };
            let action = to_action(choice, degree);
            traj.actions.push(action);
            match action {
                NavAction::Stop => {
                    traj.terminated_by = Termination::Stop;
                    break;
                }
                NavAction::Move(a) => {
                    prev_action = g.action_feature(node, a);
                    node = g.step(node, a)?;
                    traj.nodes.push(node);
                }
            }
        }
        let loss = (!loss_vars.is_empty()).then(|| tape.mean(&loss_vars));
        Ok((traj, loss))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_worlds, WorldSpec};
    use crate::world::{oracle_instruction, Vocab};

    fn world() -> NavGraph {
        generate_worlds(&WorldSpec { seed: 1, nodes: 24, train_worlds: 1, val_unseen_worlds: 0, test_unseen_worlds: 0 })
            .unwrap()
            .iter()
            .next()
            .unwrap()
            .clone()
    }

    fn instr(g: &NavGraph) -> (Path, Instruction) {
        let p = g.shortest_path(0, g.node_count() - 1).unwrap();
        let i = oracle_instruction(g, &p).unwrap();
        (p, i)
    }

    #[test]
    fn distribution_covers_edges_and_stop() {
        let g = world();
        let (_, i) = instr(&g);
        for flavor in [Flavor::Visuomotor, Flavor::Panoramic] {
            let m = NavModel::new(&NavConfig { flavor, ..NavConfig::default() }, 1).unwrap();
            let ctx = m.encode_instruction(&i);
            let st = m.initial_state(&ctx);
            for node in 0..g.node_count() {
                let (probs, _) = m.decode_step(&g, node, &st, &ctx).unwrap();
                assert_eq!(probs.len(), g.degree(node) + 1);
                assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                let (again, _) = m.decode_step(&g, node, &st, &ctx).unwrap();
                assert_eq!(probs, again);
            }
        }
    }

    #[test]
    fn end_token_only_instruction_has_one_context() {
        let m = NavModel::new(&NavConfig::default(), 1).unwrap();
        let i = Instruction::new(vec![Vocab::EOS], crate::world::Provenance::Oracle).unwrap();
        let ctx = m.encode_instruction(&i);
        assert_eq!(ctx.len, 1);
        assert_eq!(ctx.states.len(), 64);
    }

    #[test]
    fn permuted_tokens_change_contexts() {
        let g = world();
        let (_, i) = instr(&g);
        let m = NavModel::new(&NavConfig::default(), 1).unwrap();
        let mut words = i.words().to_vec();
        words.reverse();
        let j = Instruction::terminated(words, crate::world::Provenance::Oracle).unwrap();
        let (a, b) = (m.encode_instruction(&i), m.encode_instruction(&j));
        let diff = a.states.iter().zip(&b.states).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(diff > 1e-6);
        assert_eq!(a, m.encode_instruction(&i));
    }

    #[test]
    fn step_cap_bounds_rollout() {
        let g = world();
        let (_, i) = instr(&g);
        let m = NavModel::new(&NavConfig::default(), 2).unwrap();
        let t = m.rollout(&g, 0, &i, RolloutMode::Greedy, 1).unwrap();
        assert!(t.actions.len() <= 1);
        assert!(m.rollout(&g, 0, &i, RolloutMode::Greedy, 0).is_err());
    }

    #[test]
    fn student_forcing_supervises_stop_at_goal() {
        let g = world();
        let (p, i) = instr(&g);
        let m = NavModel::new(&NavConfig::default(), 3).unwrap();
        let table = DistanceTable::to_goal(&g, p.end());
        let mut rng = seeding::rng(0, "t", 0);
        // Starting on the goal: the only supervised step targets STOP.
        let t = m
            .rollout(&g, p.end(), &i, RolloutMode::StudentForcing { teacher: &table, rng: &mut rng }, 1)
            .unwrap();
        let ctx = m.encode_instruction(&i);
        let (probs, _) = m.decode_step(&g, p.end(), &m.initial_state(&ctx), &ctx).unwrap();
        // Dropout is active during supervised rollouts, so only the shape is exact here.
        assert_eq!(t.losses.len(), 1);
        assert!(t.losses[0].is_finite() && t.losses[0] >= 0.0);
        assert_eq!(probs.len(), g.degree(p.end()) + 1);
        let mut quiet = m.clone();
        quiet.set_dropout(0.0);
        let t = quiet
            .rollout(&g, p.end(), &i, RolloutMode::StudentForcing { teacher: &table, rng: &mut rng }, 1)
            .unwrap();
        let (probs, _) = quiet.decode_step(&g, p.end(), &quiet.initial_state(&ctx), &ctx).unwrap();
        assert!((t.losses[0] + probs[g.degree(p.end())].ln()).abs() < 1e-12);
    }

    #[test]
    fn path_following_replays_path() {
        let g = world();
        let (p, i) = instr(&g);
        let m = NavModel::new(&NavConfig::default(), 3).unwrap();
        let calls = g.planner_calls();
        let mut rng = seeding::rng(0, "t", 0);
        let t = m
            .rollout(&g, p.start(), &i, RolloutMode::PathFollowing { path: &p, rng: &mut rng }, STEP_CAP)
            .unwrap();
        assert_eq!(t.nodes, p.nodes);
        assert_eq!(t.terminated_by, Termination::Stop);
        assert_eq!(t.losses.len(), p.hops() + 1);
        assert_eq!(g.planner_calls(), calls);
    }

    #[test]
    fn greedy_is_deterministic_and_replayable() {
        let g = world();
        let (p, i) = instr(&g);
        let m = NavModel::new(&NavConfig { flavor: Flavor::Visuomotor, ..NavConfig::default() }, 4).unwrap();
        let a = m.rollout(&g, p.start(), &i, RolloutMode::Greedy, STEP_CAP).unwrap();
        let b = m.rollout(&g, p.start(), &i, RolloutMode::Greedy, STEP_CAP).unwrap();
        assert_eq!(a, b);
        let mut node = p.start();
        for (k, act) in a.actions.iter().enumerate() {
            if let NavAction::Move(e) = act {
                node = g.step(node, *e).unwrap();
                assert_eq!(a.nodes[k + 1], node);
            }
        }
    }

    #[test]
    fn checkpoint_records_flavor() {
        for flavor in [Flavor::Visuomotor, Flavor::Panoramic] {
            let m = NavModel::new(&NavConfig { flavor, ..NavConfig::default() }, 5).unwrap();
            let ck = Checkpoint::read_from(m.to_checkpoint().to_bytes().as_slice()).unwrap();
            assert!(ck.meta("flavor").is_some());
            assert_eq!(NavModel::from_checkpoint(&ck).unwrap(), m);
        }
    }

    #[test]
    fn supervised_loss_gradients_match_finite_differences() {
        let g = world();
        let (p, i) = instr(&g);
        for flavor in [Flavor::Visuomotor, Flavor::Panoramic] {
            let m = NavModel::new(&NavConfig { flavor, dropout: 0.0, ..NavConfig::default() }, 6).unwrap();
            let err = crate::nn::grad_check(
                |values, grads| {
                    let mut tape = Tape::new(values);
                    let mut rng = seeding::rng(0, "gc", 0);
                    let (_, loss) = m
                        .net
                        .rollout(&mut tape, &g, p.start(), &i, RolloutMode::PathFollowing { path: &p, rng: &mut rng }, 10)
                        .unwrap();
                    let loss = loss.unwrap();
                    if let Some(gr) = grads {
                        tape.backward(loss, 1.0, gr);
                    }
                    tape.scalar(loss)
                },
                &m.params,
                40,
                7,
            );
            assert!(err < 1e-4, "{flavor}: {err}");
        }
    }
}
