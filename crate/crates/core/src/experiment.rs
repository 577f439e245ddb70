//! End-to-end stages shared by the command-line harness and the test suites.
//! Every stage is a pure function of the configuration and its seed.

use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::data::{generate_datasets, generate_worlds, Datasets, EpisodePair, WorldSet};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, MetricsRecord};
use crate::nn::Checkpoint;
use crate::navigator::NavModel;
use crate::preexplore::{feature_difference, pre_explore_curve};
use crate::sampler::ApsModel;
use crate::seeding;
use crate::speaker::{train_speaker_with, SpeakerModel, SpeakerTraining};
use crate::trainer::{
    adversarial_round, augment_random_with, train_schedule, Adversary, AugmentedStore, NavTrainer, RoundLog,
};
use crate::world::{NavGraph, Split};

/// Worlds, their seen subset and the ground-truth episodes.
#[derive(Clone, Debug)]
pub struct Benchmark {
    pub worlds: WorldSet,
    pub seen: WorldSet,
    pub data: Datasets,
}

impl Benchmark {
    pub fn generate(cfg: &ExperimentConfig) -> Result<Self> {
        let worlds = generate_worlds(&cfg.world_spec())?;
        let data = generate_datasets(&worlds, &cfg.dataset_spec())?;
        Self::from_parts(worlds, data)
    }

    pub fn from_parts(worlds: WorldSet, data: Datasets) -> Result<Self> {
        let seen = worlds.subset(worlds.of_split(Split::TrainSeen).iter().map(|g| g.id()))?;
        Ok(Self { worlds, seen, data })
    }

    pub fn seen_graphs(&self) -> Vec<&NavGraph> {
        self.seen.iter().collect()
    }
}

pub fn stage_seed(cfg: &ExperimentConfig, stage: &str) -> u64 {
    seeding::derive(cfg.seed, stage, 0)
}

pub fn pretrain_speaker(cfg: &ExperimentConfig, b: &Benchmark) -> Result<SpeakerTraining> {
    train_speaker_with(&b.data.train, &b.worlds, &cfg.speaker_config(), cfg.speaker_epochs, stage_seed(cfg, "speaker"))
}

pub fn pretrain_nav(cfg: &ExperimentConfig, b: &Benchmark) -> Result<NavModel> {
    let seed = stage_seed(cfg, "nav");
    let mut t = NavTrainer::new(NavModel::new(&cfg.nav_config(), seed)?, cfg.nav_pretrain_lr);
    t.train(&b.data.train, &b.worlds, cfg.nav_pretrain_iters, cfg.batch, seed, "pretrain")?;
    Ok(t.nav)
}

/// State after the adversarial loop.
#[derive(Clone, Debug)]
pub struct ApsRun {
    pub nav: NavTrainer,
    pub adversary: Adversary,
    pub store: AugmentedStore,
    pub logs: Vec<RoundLog>,
}

/// Adversarial rounds from a pretrained navigator until the store holds
/// `aug_count` pairs or `aps_rounds` rounds have run.
pub fn run_aps(cfg: &ExperimentConfig, seen: &WorldSet, nav: &NavModel, speaker: &SpeakerModel) -> Result<ApsRun> {
    let seed = stage_seed(cfg, "aps");
    let mut trainer = NavTrainer::new(nav.clone(), cfg.nav_lr);
    let mut adversary = Adversary::new(ApsModel::new(&cfg.aps_config(), seed)?, cfg.aps_lr);
    let mut store = AugmentedStore::new();
    let mut logs = Vec::new();
    let rc = cfg.round_config();
    let mut round = 0;
    while store.len() < cfg.aug_count && round < cfg.aps_rounds {
        logs.push(adversarial_round(&mut trainer, &mut adversary, speaker, seen, &mut store, &rc, round, seed)?);
        round += 1;
    }
    Ok(ApsRun { nav: trainer, adversary, store, logs })
}

pub fn random_augmentation(cfg: &ExperimentConfig, b: &Benchmark, speaker: &SpeakerModel) -> Result<Vec<EpisodePair>> {
    augment_random_with(&b.seen, cfg.aug_count, speaker, cfg.round_config().hops, stage_seed(cfg, "aug-rand"))
}

/// First `fraction` of an augmentation set (at least one pair).
pub fn prefix(data: &[EpisodePair], fraction: f64, count: usize) -> &[EpisodePair] {
    let n = ((fraction * count as f64).round() as usize).clamp(1, data.len().max(1));
    &data[..n.min(data.len())]
}

/// Augment-then-finetune from `start`.
pub fn train_arm(cfg: &ExperimentConfig, b: &Benchmark, start: &NavTrainer, aug: &[EpisodePair], tag: &str) -> Result<NavModel> {
    let mut t = start.clone();
    train_schedule(
        &mut t,
        aug,
        &b.data.train,
        &b.worlds,
        cfg.schedule_aug_iters,
        cfg.schedule_ft_iters,
        cfg.batch,
        stage_seed(cfg, tag),
    )?;
    Ok(t.nav)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmMetrics {
    pub val_seen: MetricsRecord,
    pub val_unseen: MetricsRecord,
}

pub fn evaluate_arm(nav: &NavModel, b: &Benchmark, model: &str) -> Result<ArmMetrics> {
    Ok(ArmMetrics {
        val_seen: evaluate(nav, &b.data.val_seen, &b.worlds, model, "val-seen")?,
        val_unseen: evaluate(nav, &b.data.val_unseen, &b.worlds, model, "val-unseen")?,
    })
}

/// Everything produced by one seed of the random-versus-adversarial comparison.
#[derive(Clone, Debug)]
pub struct AbRun {
    pub speaker: SpeakerModel,
    pub pretrained: NavModel,
    pub aps: ApsRun,
    pub rand_aug: Vec<EpisodePair>,
    pub rand_nav: NavModel,
    pub aps_nav: NavModel,
    pub pre_metrics: ArmMetrics,
    pub rand_metrics: ArmMetrics,
    pub aps_metrics: ArmMetrics,
}

impl AbRun {
    pub fn aps_aug(&self, count: usize) -> &[EpisodePair] {
        &self.aps.store.pairs()[..count.min(self.aps.store.len())]
    }
}

pub fn ab_experiment(cfg: &ExperimentConfig, b: &Benchmark) -> Result<AbRun> {
    let speaker = pretrain_speaker(cfg, b)?.model;
    let pretrained = pretrain_nav(cfg, b)?;
    let aps = run_aps(cfg, &b.seen, &pretrained, &speaker)?;
    let rand_aug = random_augmentation(cfg, b, &speaker)?;
    let rand_start = NavTrainer::new(pretrained.clone(), cfg.nav_lr);
    let rand_nav = train_arm(cfg, b, &rand_start, &rand_aug, "arm-rand")?;
    let aps_aug = &aps.store.pairs()[..cfg.aug_count.min(aps.store.len())];
    let aps_nav = train_arm(cfg, b, &aps.nav, aps_aug, "arm-aps")?;
    Ok(AbRun {
        pre_metrics: evaluate_arm(&pretrained, b, "pretrained")?,
        rand_metrics: evaluate_arm(&rand_nav, b, "rand")?,
        aps_metrics: evaluate_arm(&aps_nav, b, "aps")?,
        speaker,
        pretrained,
        aps,
        rand_aug,
        rand_nav,
        aps_nav,
    })
}

/// One point of an augmentation-fraction sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub arm: String,
    pub split: String,
    pub fraction: f64,
    pub seed: u64,
    pub sr: f64,
}

/// SR of both arms trained on prefixes of their augmentation sets. A fraction of
/// 1.0 reuses the navigators already trained in `run`.
pub fn ratio_sweep(cfg: &ExperimentConfig, b: &Benchmark, run: &AbRun, fractions: &[f64]) -> Result<Vec<SweepPoint>> {
    let mut out = Vec::new();
    let rand_start = NavTrainer::new(run.pretrained.clone(), cfg.nav_lr);
    for &f in fractions {
        for arm in ["rand", "aps"] {
            let metrics = if f >= 1.0 {
                if arm == "rand" {
                    run.rand_metrics.clone()
                } else {
                    run.aps_metrics.clone()
                }
            } else {
                let (start, aug) = if arm == "rand" {
                    (&rand_start, prefix(&run.rand_aug, f, cfg.aug_count))
                } else {
                    (&run.aps.nav, prefix(run.aps_aug(cfg.aug_count), f, cfg.aug_count))
                };
                evaluate_arm(&train_arm(cfg, b, start, aug, &format!("arm-{arm}"))?, b, arm)?
            };
            for (split, m) in [("val-seen", &metrics.val_seen), ("val-unseen", &metrics.val_unseen)] {
                out.push(SweepPoint { arm: arm.into(), split: split.into(), fraction: f, seed: cfg.seed, sr: m.sr });
            }
        }
    }
    Ok(out)
}

pub fn preexplore_seed(cfg: &ExperimentConfig, env: &str) -> u64 {
    seeding::derive(stage_seed(cfg, "pre-explore"), env, 0)
}

/// Per-environment SR after each pre-exploration step count.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreExplorePoint {
    pub env: String,
    pub seed: u64,
    pub steps: usize,
    pub sr: f64,
    pub feature_difference: f64,
}

/// Adapts `nav` separately to every world of `split`, evaluating each adapted
/// copy only on that world's episodes.
pub fn preexplore_sweep(
    cfg: &ExperimentConfig,
    b: &Benchmark,
    nav: &NavModel,
    aps: &ApsModel,
    speaker: &SpeakerModel,
    split: Split,
) -> Result<Vec<PreExplorePoint>> {
    let episodes = match split {
        Split::ValUnseen => &b.data.val_unseen,
        Split::TestUnseen => &b.data.test_unseen,
        Split::TrainSeen => &b.data.val_seen,
    };
    let train = b.seen_graphs();
    let pcfg = cfg.preexplore_config();
    let mut out = Vec::new();
    for g in b.worlds.of_split(split) {
        let own: Vec<EpisodePair> = episodes.iter().filter(|e| e.env() == g.id()).cloned().collect();
        if own.is_empty() {
            continue;
        }
        let fd = feature_difference(g, &train)?;
        let navs = pre_explore_curve(nav, aps, speaker, g, &cfg.preexplore_steps, &pcfg, preexplore_seed(cfg, g.id()))?;
        for (&steps, adapted) in cfg.preexplore_steps.iter().zip(&navs) {
            let sr = evaluate(adapted, &own, g, "pre-explore", split.as_str())?.sr;
            out.push(PreExplorePoint { env: g.id().to_string(), seed: cfg.seed, steps, sr, feature_difference: fd });
        }
    }
    Ok(out)
}

/// Navigator checkpoint that also carries the optimizer moments.
pub fn trainer_checkpoint(t: &NavTrainer) -> Checkpoint {
    t.nav.to_checkpoint().with_optimizer(t.nav.params(), &t.adam)
}

/// Resumes a trainer; a checkpoint without optimizer state starts fresh moments at `lr`.
pub fn trainer_from_checkpoint(ck: &Checkpoint, lr: f64) -> Result<NavTrainer> {
    let nav = NavModel::from_checkpoint(ck)?;
    let adam = ck.optimizer(nav.params())?;
    let mut t = NavTrainer::new(nav, lr);
    if let Some(a) = adam {
        t.adam = a;
    }
    Ok(t)
}

pub fn adversary_checkpoint(a: &Adversary) -> Checkpoint {
    a.aps
        .to_checkpoint()
        .with_optimizer(a.aps.params(), &a.adam)
        .with_meta("baseline", vec![a.tracker.sum, a.tracker.count as f64])
}

pub fn adversary_from_checkpoint(ck: &Checkpoint, lr: f64) -> Result<Adversary> {
    let aps = ApsModel::from_checkpoint(ck)?;
    let adam = ck.optimizer(aps.params())?;
    let mut a = Adversary::new(aps, lr);
    if let Some(s) = adam {
        a.adam = s;
    }
    if let Some(t) = ck.meta("baseline") {
        match t.values() {
            [sum, count] => {
                a.tracker.sum = *sum;
                a.tracker.count = *count as u64;
            }
            _ => return Err(Error::Format { what: "checkpoint", detail: "baseline needs 2 values".into() }),
        }
    }
    Ok(a)
}

/// Full per-seed study: the A/B comparison, the fraction sweep and pre-exploration
/// of the adversarially trained navigator on the validation-unseen worlds.
#[derive(Clone, Debug)]
pub struct SeedStudy {
    pub ab: AbRun,
    pub ratio: Vec<SweepPoint>,
    pub preexplore: Vec<PreExplorePoint>,
}

pub fn seed_study(cfg: &ExperimentConfig, fractions: &[f64], with_preexplore: bool) -> Result<SeedStudy> {
    let b = Benchmark::generate(cfg)?;
    let ab = ab_experiment(cfg, &b)?;
    let ratio = ratio_sweep(cfg, &b, &ab, fractions)?;
    let preexplore = if with_preexplore {
        preexplore_sweep(cfg, &b, &ab.aps_nav, &ab.aps.adversary.aps, &ab.speaker, Split::ValUnseen)?
    } else {
        Vec::new()
    };
    Ok(SeedStudy { ab, ratio, preexplore })
}

pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "median of nothing");
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Outcome of one comparative check.
#[derive(Clone, Debug, PartialEq)]
pub struct Verdict {
    pub pass: bool,
    pub detail: String,
}

/// Adversarial arm beats the random arm: median seen SR by `seen_margin`,
/// median unseen SR by at least zero.
pub fn ab_verdict(rand_seen: &[f64], aps_seen: &[f64], rand_unseen: &[f64], aps_unseen: &[f64], seen_margin: f64) -> Verdict {
    let (rs, as_, ru, au) = (median(rand_seen), median(aps_seen), median(rand_unseen), median(aps_unseen));
    Verdict {
        pass: as_ >= rs + seen_margin - 1e-12 && au >= ru - 1e-12,
        detail: format!("seen aps {as_:.4} vs rand {rs:.4}; unseen aps {au:.4} vs rand {ru:.4}"),
    }
}

/// Median gain from the low to the full augmentation fraction is at least as
/// large for the adversarial arm as for the random arm.
pub fn slope_verdict(rand_low: &[f64], rand_full: &[f64], aps_low: &[f64], aps_full: &[f64]) -> Verdict {
    let rand = median(rand_full) - median(rand_low);
    let aps = median(aps_full) - median(aps_low);
    Verdict { pass: aps >= rand - 1e-12, detail: format!("gain aps {aps:+.4} vs rand {rand:+.4}") }
}

/// Median SR over all (seed, env) curves at each step count; passes when the
/// best adapted point is no worse than the unadapted one.
pub fn preexplore_verdict(points: &[(usize, f64)]) -> Verdict {
    let mut steps: Vec<usize> = points.iter().map(|p| p.0).collect();
    steps.sort_unstable();
    steps.dedup();
    let curve: Vec<(usize, f64)> = steps
        .iter()
        .map(|&s| (s, median(&points.iter().filter(|p| p.0 == s).map(|p| p.1).collect::<Vec<_>>())))
        .collect();
    let base = curve.iter().find(|c| c.0 == 0).map(|c| c.1);
    let best = curve.iter().filter(|c| c.0 > 0).map(|c| c.1).fold(f64::NEG_INFINITY, f64::max);
    let text: Vec<String> = curve.iter().map(|(s, v)| format!("{s}:{v:.4}")).collect();
    match base {
        Some(b) if best.is_finite() => Verdict { pass: best >= b - 1e-12, detail: format!("median SR by steps {}", text.join(" ")) },
        _ => Verdict { pass: false, detail: "curve needs step 0 and at least one adapted point".into() },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_and_prefix() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        let cfg = ExperimentConfig { world_train: 2, world_val_unseen: 1, world_test_unseen: 0, data_train_per_world: 5, ..ExperimentConfig::desk() };
        let b = Benchmark::generate(&cfg).unwrap();
        assert_eq!(prefix(&b.data.train, 0.6, 10).len(), 6);
        assert_eq!(prefix(&b.data.train, 1.0, 10).len(), 10);
        assert_eq!(prefix(&b.data.train, 0.01, 10).len(), 1);
    }

    #[test]
    fn verdicts() {
        assert!(ab_verdict(&[0.5], &[0.51], &[0.3], &[0.3], 0.01).pass);
        assert!(!ab_verdict(&[0.5], &[0.505], &[0.3], &[0.3], 0.01).pass);
        assert!(!ab_verdict(&[0.5], &[0.6], &[0.3], &[0.29], 0.01).pass);
        assert!(slope_verdict(&[0.5, 0.5, 0.5], &[0.5, 0.51, 0.52], &[0.4, 0.4, 0.4], &[0.45, 0.46, 0.5]).pass);
        assert!(!slope_verdict(&[0.4], &[0.5], &[0.4], &[0.45]).pass);
        assert!(preexplore_verdict(&[(0, 0.5), (0, 0.3), (5, 0.2), (5, 0.2), (15, 0.4), (15, 0.5)]).pass);
        assert!(!preexplore_verdict(&[(0, 0.5), (5, 0.4)]).pass);
        assert!(!preexplore_verdict(&[(5, 0.4)]).pass);
    }

    #[test]
    fn trainer_and_adversary_checkpoints_resume_exactly() {
        let cfg = ExperimentConfig { world_train: 2, world_val_unseen: 1, world_test_unseen: 0, data_train_per_world: 5, ..ExperimentConfig::desk() };
        let b = Benchmark::generate(&cfg).unwrap();
        let mut t = NavTrainer::new(NavModel::new(&cfg.nav_config(), 3).unwrap(), 1e-3);
        t.train(&b.data.train, &b.worlds, 2, 4, 3, "t").unwrap();
        let ck = Checkpoint::read_from(trainer_checkpoint(&t).to_bytes().as_slice()).unwrap();
        let mut back = trainer_from_checkpoint(&ck, 0.5).unwrap();
        assert_eq!(back.adam.lr, 1e-3);
        t.train(&b.data.train, &b.worlds, 2, 4, 4, "t").unwrap();
        back.train(&b.data.train, &b.worlds, 2, 4, 4, "t").unwrap();
        assert!(t.nav == back.nav);

        let mut a = Adversary::new(ApsModel::new(&cfg.aps_config(), 3).unwrap(), 1e-2);
        a.tracker.absorb(1.5);
        let back = adversary_from_checkpoint(&adversary_checkpoint(&a), 0.1).unwrap();
        assert!(back.aps == a.aps);
        assert_eq!((back.tracker.sum, back.tracker.count), (a.tracker.sum, a.tracker.count));
        assert_eq!(back.adam.lr, 1e-2);
    }
}
