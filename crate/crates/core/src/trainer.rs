//! Navigator training: supervised batches, the adversarial sampler/navigator
//! loop, random augmentation and the augment-then-finetune schedule.

use rand::seq::index;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::{EpisodePair, EpisodeSplit, HopRange, WorldLookup, WorldSet};
use crate::error::{invalid_arg, Error, Result};
use crate::navigator::{NavModel, RolloutMode, STEP_CAP};
use crate::nn::{adam_step, AdamState, Tape};
use crate::sampler::{ApsModel, SampledBatch, SampledPath, DEFAULT_HOPS};
use crate::seeding;
use crate::speaker::SpeakerModel;
use crate::world::{shortest_path_transform, DistanceTable, NavGraph, Provenance, Split};

pub const NAV_LR: f64 = 1e-4;
pub const APS_LR: f64 = 3e-5;
pub const WEIGHT_DECAY: f64 = 5e-4;
pub const BATCH: usize = 16;

/// Running mean of past batch-mean rewards.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct BaselineTracker {
    pub sum: f64,
    pub count: u64,
}

impl BaselineTracker {
    pub fn value(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.sum / self.count as f64
        }
    }

    pub fn absorb(&mut self, batch_mean: f64) {
        self.sum += batch_mean;
        self.count += 1;
    }
}

/// Append-only store of speaker-labelled pairs, tagged with the round that produced them.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AugmentedStore {
    pairs: Vec<EpisodePair>,
    rounds: Vec<usize>,
}

impl AugmentedStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, round: usize, pair: EpisodePair) -> Result<()> {
        if pair.instruction.provenance() != Provenance::Speaker {
            return Err(invalid_arg("augmented pairs must carry speaker instructions"));
        }
        self.pairs.push(pair);
        self.rounds.push(round);
        Ok(())
    }

    pub fn pairs(&self) -> &[EpisodePair] {
        &self.pairs
    }

    pub fn rounds(&self) -> &[usize] {
        &self.rounds
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// How a supervised navigator rollout is driven.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Supervision {
    /// Sampled actions, next-hop-to-goal targets. Queries the planner.
    StudentForcing,
    /// Replays the pair's own path then STOP. No planner queries.
    PathFollowing,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NavLoss {
    pub per_path: Vec<f64>,
    pub mean: f64,
}

fn check_batch(batch: &[EpisodePair]) -> Result<()> {
    if batch.is_empty() {
        return Err(invalid_arg("empty navigator batch"));
    }
    Ok(())
}

/// Per-path mean step loss of each pair; no parameters change.
pub fn nav_loss<W: WorldLookup + ?Sized>(nav: &NavModel, batch: &[EpisodePair], worlds: &W, seed: u64) -> Result<NavLoss> {
    nav_loss_with(nav, batch, worlds, Supervision::StudentForcing, seed)
}

pub fn nav_loss_with<W: WorldLookup + ?Sized>(
    nav: &NavModel,
    batch: &[EpisodePair],
    worlds: &W,
    supervision: Supervision,
    seed: u64,
) -> Result<NavLoss> {
    check_batch(batch)?;
    let mut per_path = Vec::with_capacity(batch.len());
    for (i, pair) in batch.iter().enumerate() {
        let g = worlds.world(pair.env())?;
        let mut rng = seeding::rng(seed, "nav-example", i as u64);
        let traj = match supervision {
            Supervision::StudentForcing => {
                let teacher = DistanceTable::to_goal(g, pair.path.end());
                let mode = RolloutMode::StudentForcing { teacher: &teacher, rng: &mut rng };
                nav.rollout(g, pair.path.start(), &pair.instruction, mode, STEP_CAP)?
            }
            Supervision::PathFollowing => {
                let mode = RolloutMode::PathFollowing { path: &pair.path, rng: &mut rng };
                nav.rollout(g, pair.path.start(), &pair.instruction, mode, path_cap(pair))?
            }
        };
        per_path.push(traj.mean_loss().expect("supervised rollout records losses"));
    }
    let mean = per_path.iter().sum::<f64>() / per_path.len() as f64;
    Ok(NavLoss { per_path, mean })
}

fn path_cap(pair: &EpisodePair) -> usize {
    pair.path.hops() + 1
}

/// Accumulates the gradient of the batch-mean loss into `nav`'s gradients and
/// returns the losses measured in the same pass.
pub fn nav_backward<W: WorldLookup + ?Sized>(
    nav: &mut NavModel,
    batch: &[EpisodePair],
    worlds: &W,
    supervision: Supervision,
    seed: u64,
) -> Result<NavLoss> {
    check_batch(batch)?;
    let (net, params) = nav.parts_mut();
    let (values, grads) = params.split_mut();
    let scale = 1.0 / batch.len() as f64;
    let mut per_path = Vec::with_capacity(batch.len());
    for (i, pair) in batch.iter().enumerate() {
        let g = worlds.world(pair.env())?;
        let mut rng = seeding::rng(seed, "nav-example", i as u64);
        let mut tape = Tape::new(values);
        let (_, loss) = match supervision {
            Supervision::StudentForcing => {
                let teacher = DistanceTable::to_goal(g, pair.path.end());
                let mode = RolloutMode::StudentForcing { teacher: &teacher, rng: &mut rng };
                net.rollout(&mut tape, g, pair.path.start(), &pair.instruction, mode, STEP_CAP)?
            }
            Supervision::PathFollowing => {
                let mode = RolloutMode::PathFollowing { path: &pair.path, rng: &mut rng };
                net.rollout(&mut tape, g, pair.path.start(), &pair.instruction, mode, path_cap(pair))?
            }
        };
        let loss = loss.expect("supervised rollout records losses");
        per_path.push(tape.scalar(loss));
        tape.backward(loss, scale, grads);
    }
    let mean = per_path.iter().sum::<f64>() / per_path.len() as f64;
    Ok(NavLoss { per_path, mean })
}

/// A navigator with its optimizer.
#[derive(Clone, Debug)]
pub struct NavTrainer {
    pub nav: NavModel,
    pub adam: AdamState,
}

impl NavTrainer {
    pub fn new(nav: NavModel, lr: f64) -> Self {
        let adam = AdamState::new(nav.params(), lr, WEIGHT_DECAY);
        Self { nav, adam }
    }

    /// One optimizer step on `batch`; the returned losses precede the update.
    pub fn step<W: WorldLookup + ?Sized>(
        &mut self,
        batch: &[EpisodePair],
        worlds: &W,
        supervision: Supervision,
        seed: u64,
    ) -> Result<NavLoss> {
        let loss = nav_backward(&mut self.nav, batch, worlds, supervision, seed)?;
        adam_step(self.nav.params_mut(), &mut self.adam)?;
        Ok(loss)
    }

    /// `iters` student-forcing steps on batches drawn from `data`. Iteration `k`
    /// draws its batch and dropout masks from streams derived from `(seed, tag, k)`.
    pub fn train<W: WorldLookup + ?Sized>(
        &mut self,
        data: &[EpisodePair],
        worlds: &W,
        iters: usize,
        batch: usize,
        seed: u64,
        tag: &str,
    ) -> Result<Vec<f64>> {
        if iters == 0 {
            return Ok(Vec::new());
        }
        check_batch(data)?;
        let b = batch.min(data.len()).max(1);
        let mut losses = Vec::with_capacity(iters);
        for k in 0..iters {
            let mut rng = seeding::rng(seed, tag, k as u64);
            let picked: Vec<EpisodePair> =
                index::sample(&mut rng, data.len(), b).into_iter().map(|i| data[i].clone()).collect();
            let s = seeding::derive(seed, tag, (k as u64) | 1 << 40);
            losses.push(self.step(&picked, worlds, Supervision::StudentForcing, s)?.mean);
        }
        Ok(losses)
    }
}

/// Phase 1 on `augmented`, phase 2 on `original`.
#[allow(clippy::too_many_arguments)]
pub fn train_schedule(
    trainer: &mut NavTrainer,
    augmented: &[EpisodePair],
    original: &[EpisodePair],
    worlds: &WorldSet,
    iters_aug: usize,
    iters_ft: usize,
    batch: usize,
    seed: u64,
) -> Result<()> {
    if augmented.is_empty() || original.is_empty() {
        return Err(invalid_arg("schedule needs both augmented and original data"));
    }
    trainer.train(augmented, worlds, iters_aug, batch, seed, "schedule-aug")?;
    trainer.train(original, worlds, iters_ft, batch, seed, "schedule-ft")?;
    Ok(())
}

/// Adds the gradient of `-sum (R - b) log p(path)` to the sampler's gradients,
/// with `b` read from `tracker` first; the tracker then absorbs the batch-mean reward.
/// Returns the baseline that was used.
pub fn aps_policy_gradient(
    aps: &mut ApsModel,
    batch: &SampledBatch,
    rewards: &[f64],
    tracker: &mut BaselineTracker,
    worlds: &WorldSet,
) -> Result<f64> {
    if rewards.len() != batch.len() {
        return Err(invalid_arg(format!("{} rewards for {} paths", rewards.len(), batch.len())));
    }
    if batch.is_empty() {
        return Err(invalid_arg("empty sampled batch"));
    }
    let b = tracker.value();
    for (s, &r) in batch.paths.iter().zip(rewards) {
        let g = worlds.get(&s.path.env)?;
        aps.accumulate_log_prob_grad(g, &s.path, -(r - b))?;
    }
    tracker.absorb(rewards.iter().sum::<f64>() / rewards.len() as f64);
    Ok(b)
}

/// The sampler side of the adversarial loop.
#[derive(Clone, Debug)]
pub struct Adversary {
    pub aps: ApsModel,
    pub adam: AdamState,
    pub tracker: BaselineTracker,
}

impl Adversary {
    pub fn new(aps: ApsModel, lr: f64) -> Self {
        let adam = AdamState::new(aps.params(), lr, WEIGHT_DECAY);
        Self { aps, adam, tracker: BaselineTracker::default() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RoundConfig {
    pub batch: usize,
    pub hops: HopRange,
}

impl Default for RoundConfig {
    fn default() -> Self {
        Self { batch: BATCH, hops: crate::sampler::DEFAULT_HOPS }
    }
}

/// One line of the per-round log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundLog {
    pub round: usize,
    pub mean_loss: f64,
    pub baseline: f64,
    pub store_size: usize,
    pub dropped: usize,
}

fn require_seen(worlds: &WorldSet) -> Result<Vec<&NavGraph>> {
    let seen: Vec<&NavGraph> = worlds.iter().collect();
    if let Some(g) = seen.iter().find(|g| g.split() != Split::TrainSeen) {
        return Err(Error::PolicyViolation(format!("{} world {} in an augmentation world set", g.split(), g.id())));
    }
    if seen.is_empty() {
        return Err(invalid_arg("empty world set"));
    }
    Ok(seen)
}

/// Shortest-path transforms each sampled path; closed walks are dropped.
/// Returns the kept samples alongside their transformed paths.
pub fn transform_batch(batch: &SampledBatch, worlds: &WorldSet) -> Result<(SampledBatch, Vec<crate::world::Path>)> {
    let mut kept: Vec<SampledPath> = Vec::new();
    let mut transformed = Vec::new();
    for s in &batch.paths {
        let g = worlds.get(&s.path.env)?;
        match shortest_path_transform(g, &s.path) {
            Ok(p) => {
                kept.push(s.clone());
                transformed.push(p);
            }
            Err(Error::DegeneratePath(_)) => {}
            Err(e) => return Err(e),
        }
    }
    Ok((SampledBatch { paths: kept, seed: batch.seed }, transformed))
}

/// Speaker-labelled augmentation pairs for the given paths.
pub fn label_paths<W: WorldLookup + ?Sized>(
    speaker: &SpeakerModel,
    paths: &[crate::world::Path],
    worlds: &W,
) -> Result<Vec<EpisodePair>> {
    paths
        .iter()
        .map(|p| {
            let g = worlds.world(&p.env)?;
            Ok(EpisodePair { path: p.clone(), instruction: speaker.generate(g, p), split: EpisodeSplit::Augmented })
        })
        .collect()
}

/// One body of the adversarial loop: sample, transform, back-translate, update
/// the navigator on the batch loss, update the sampler to increase it, store.
#[allow(clippy::too_many_arguments)]
pub fn adversarial_round(
    nav: &mut NavTrainer,
    adv: &mut Adversary,
    speaker: &SpeakerModel,
    worlds: &WorldSet,
    store: &mut AugmentedStore,
    cfg: &RoundConfig,
    round: usize,
    seed: u64,
) -> Result<RoundLog> {
    let seen = require_seen(worlds)?;
    let sampled = adv.aps.sample_batch(&seen, cfg.batch, cfg.hops, seeding::derive(seed, "aps-round", round as u64))?;
    let (kept, paths) = transform_batch(&sampled, worlds)?;
    let dropped = sampled.len() - kept.len();
    if dropped > 0 {
        log::debug!("round {round}: dropped {dropped} closed walks");
    }
    if kept.is_empty() {
        return Ok(RoundLog { round, mean_loss: f64::NAN, baseline: adv.tracker.value(), store_size: store.len(), dropped });
    }
    let pairs = label_paths(speaker, &paths, worlds)?;
    let loss = nav.step(&pairs, worlds, Supervision::StudentForcing, seeding::derive(seed, "nav-round", round as u64))?;
    aps_policy_gradient(&mut adv.aps, &kept, &loss.per_path, &mut adv.tracker, worlds)?;
    adam_step(adv.aps.params_mut(), &mut adv.adam)?;
    for p in pairs {
        store.push(round, p)?;
    }
    Ok(RoundLog { round, mean_loss: loss.mean, baseline: adv.tracker.value(), store_size: store.len(), dropped })
}

/// Runs `rounds` consecutive adversarial rounds.
#[allow(clippy::too_many_arguments)]
pub fn train_aps(
    nav: &mut NavTrainer,
    adv: &mut Adversary,
    speaker: &SpeakerModel,
    worlds: &WorldSet,
    store: &mut AugmentedStore,
    cfg: &RoundConfig,
    rounds: usize,
    seed: u64,
) -> Result<Vec<RoundLog>> {
    (0..rounds).map(|r| adversarial_round(nav, adv, speaker, worlds, store, cfg, r, seed)).collect()
}

/// [`augment_random_with`] over the sampler's default hop range.
pub fn augment_random(worlds: &WorldSet, count: usize, speaker: &SpeakerModel, seed: u64) -> Result<Vec<EpisodePair>> {
    augment_random_with(worlds, count, speaker, DEFAULT_HOPS, seed)
}

/// Shortest paths of uniformly drawn seen worlds, each between a uniformly
/// drawn endpoint pair whose shortest path has a hop count in `hops`, labelled
/// by the speaker. Worlds without such a pair are never drawn.
pub fn augment_random_with(
    worlds: &WorldSet,
    count: usize,
    speaker: &SpeakerModel,
    hops: HopRange,
    seed: u64,
) -> Result<Vec<EpisodePair>> {
    let seen = require_seen(worlds)?;
    let mut eligible: Vec<(&NavGraph, Vec<crate::world::Path>)> = Vec::new();
    for g in seen {
        let n = g.node_count();
        let mut paths = Vec::new();
        for a in 0..n {
            for b in (0..n).filter(|&b| b != a) {
                let p = g.shortest_path(a, b)?;
                if hops.contains(p.hops()) {
                    paths.push(p);
                }
            }
        }
        if !paths.is_empty() {
            eligible.push((g, paths));
        }
    }
    if eligible.is_empty() && count > 0 {
        return Err(invalid_arg(format!("no seen world has a shortest path of {}..={} hops", hops.min, hops.max)));
    }
    let mut paths = Vec::with_capacity(count);
    for i in 0..count {
        let mut rng = seeding::rng(seed, "aug-rand", i as u64);
        let (_, candidates) = &eligible[rng.gen_range(0..eligible.len())];
        paths.push(candidates[rng.gen_range(0..candidates.len())].clone());
    }
    label_paths(speaker, &paths, worlds)
}
