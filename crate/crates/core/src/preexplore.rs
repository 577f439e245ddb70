//! Adapting a trained navigator to one unseen world from the sampler's own
//! back-translated walks, before any of that world's instructions are seen.

use crate::data::HopRange;
use crate::error::{invalid_arg, Error, Result};
use crate::navigator::NavModel;
use crate::sampler::ApsModel;
use crate::seeding;
use crate::speaker::SpeakerModel;
use crate::trainer::{label_paths, NavTrainer, Supervision};
use crate::world::{NavGraph, FEATURE_DIM, VIEW_PATCHES};

pub const PREEXPLORE_LR: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PreExploreConfig {
    pub lr: f64,
    pub batch: usize,
    pub hops: HopRange,
}

impl Default for PreExploreConfig {
    fn default() -> Self {
        Self { lr: PREEXPLORE_LR, batch: crate::trainer::BATCH, hops: crate::sampler::DEFAULT_HOPS }
    }
}

/// Navigators after each requested number of adaptation steps, in the order of
/// `checkpoints` (which must be non-decreasing). Each step samples raw walks in
/// `g`, labels them with the speaker and takes one navigator update that follows
/// the walk exactly. Only `g` is ever consulted and no planner query is made.
pub fn pre_explore_curve(
    nav: &NavModel,
    aps: &ApsModel,
    speaker: &SpeakerModel,
    g: &NavGraph,
    checkpoints: &[usize],
    cfg: &PreExploreConfig,
    seed: u64,
) -> Result<Vec<NavModel>> {
    if g.split().is_seen() {
        return Err(Error::PolicyViolation(format!("pre-exploration requested in seen world {}", g.id())));
    }
    if checkpoints.windows(2).any(|w| w[0] > w[1]) {
        return Err(invalid_arg("pre-exploration checkpoints must be non-decreasing"));
    }
    let mut trainer = NavTrainer::new(nav.clone(), cfg.lr);
    let mut out = Vec::with_capacity(checkpoints.len());
    let mut done = 0;
    for &target in checkpoints {
        while done < target {
            let batch = aps.sample_paths(g, cfg.batch, cfg.hops, seeding::derive(seed, "pre-explore", done as u64))?;
            let paths: Vec<_> = batch.paths.into_iter().map(|s| s.path).collect();
            let pairs = label_paths(speaker, &paths, g)?;
            trainer.step(&pairs, g, Supervision::PathFollowing, seeding::derive(seed, "pre-explore-nav", done as u64))?;
            done += 1;
        }
        out.push(trainer.nav.clone());
    }
    Ok(out)
}

pub fn pre_explore(
    nav: &NavModel,
    aps: &ApsModel,
    speaker: &SpeakerModel,
    g: &NavGraph,
    steps: usize,
    cfg: &PreExploreConfig,
    seed: u64,
) -> Result<NavModel> {
    Ok(pre_explore_curve(nav, aps, speaker, g, &[steps], cfg, seed)?.remove(0))
}

fn mean_feature(g: &NavGraph) -> [f64; FEATURE_DIM] {
    let mut m = [0.0; FEATURE_DIM];
    for node in 0..g.node_count() {
        for j in 0..VIEW_PATCHES {
            for (a, b) in m.iter_mut().zip(g.patch_feature(node, j)) {
                *a += b;
            }
        }
    }
    let n = (g.node_count() * VIEW_PATCHES) as f64;
    m.iter_mut().for_each(|v| *v /= n);
    m
}

/// Visual distance of `g` from the training worlds: the mean over training
/// worlds of the Euclidean distance between per-world mean patch features.
pub fn feature_difference(g: &NavGraph, train: &[&NavGraph]) -> Result<f64> {
    if train.is_empty() {
        return Err(invalid_arg("no training worlds to compare against"));
    }
    let mg = mean_feature(g);
    let total: f64 = train
        .iter()
        .map(|w| mean_feature(w).iter().zip(&mg).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
        .sum();
    Ok(total / train.len() as f64)
}
