//! Flat `key = value` experiment configuration with named presets.
//!
//! A file may start with `preset = desk` or `preset = full`; later keys
//! override the preset. `#` starts a comment. Unknown keys are errors.

use std::fmt::Write as _;

use crate::data::{DatasetSpec, HopRange, WorldSpec};
use crate::error::{format_err, invalid_arg, Result};
use crate::navigator::{Flavor, NavConfig};
use crate::preexplore::PreExploreConfig;
use crate::sampler::ApsConfig;
use crate::speaker::SpeakerConfig;
use crate::trainer::RoundConfig;

/// Environment variable overriding `seed`.
pub const ENV_SEED: &str = "APS_SEED";
/// Environment variable overriding `workers`.
pub const ENV_WORKERS: &str = "APS_WORKERS";

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub preset: String,
    pub seed: u64,
    pub workers: usize,

    pub world_nodes: usize,
    pub world_train: usize,
    pub world_val_unseen: usize,
    pub world_test_unseen: usize,

    pub data_hops_min: usize,
    pub data_hops_max: usize,
    pub data_train_per_world: usize,
    pub data_val_seen_per_world: usize,
    pub data_unseen_per_world: usize,

    pub flavor: Flavor,
    pub hidden: usize,
    pub embed: usize,
    pub action_embed: usize,
    pub attention: usize,
    pub dropout: f64,

    pub speaker_epochs: usize,
    pub speaker_lr: f64,
    pub speaker_batch: usize,

    pub batch: usize,
    pub nav_pretrain_iters: usize,
    pub nav_pretrain_lr: f64,
    pub nav_lr: f64,

    pub aps_lr: f64,
    pub aps_rounds: usize,
    pub aps_hops_min: usize,
    pub aps_hops_max: usize,

    pub aug_count: usize,
    pub schedule_aug_iters: usize,
    pub schedule_ft_iters: usize,

    pub preexplore_lr: f64,
    pub preexplore_steps: Vec<usize>,
    pub sweep_fractions: Vec<f64>,
    pub sweep_seeds: usize,
}

impl ExperimentConfig {
    pub fn desk() -> Self {
        Self {
            preset: "desk".into(),
            seed: 1,
            workers: 1,
            world_nodes: 24,
            world_train: 40,
            world_val_unseen: 8,
            world_test_unseen: 8,
            data_hops_min: 4,
            data_hops_max: 6,
            data_train_per_world: 35,
            data_val_seen_per_world: 8,
            data_unseen_per_world: 40,
            flavor: Flavor::Panoramic,
            hidden: 64,
            embed: 32,
            action_embed: 16,
            attention: 32,
            dropout: 0.5,
            speaker_epochs: 10,
            speaker_lr: 1e-2,
            speaker_batch: 8,
            batch: 16,
            nav_pretrain_iters: 3000,
            nav_pretrain_lr: 1e-3,
            nav_lr: 1e-4,
            aps_lr: 1e-2,
            aps_rounds: 400,
            aps_hops_min: 4,
            aps_hops_max: 6,
            aug_count: 1700,
            schedule_aug_iters: 5000,
            schedule_ft_iters: 2000,
            preexplore_lr: 1e-5,
            preexplore_steps: vec![0, 5, 15, 40, 80],
            sweep_fractions: vec![0.2, 0.4, 0.6, 0.8, 1.0],
            sweep_seeds: 5,
        }
    }

    /// Full-size models and schedules with large worlds; impractical on a
    /// single core.
    pub fn full() -> Self {
        Self {
            preset: "full".into(),
            world_nodes: 117,
            world_train: 61,
            world_val_unseen: 11,
            world_test_unseen: 18,
            data_train_per_world: 230,
            data_val_seen_per_world: 17,
            data_unseen_per_world: 200,
            hidden: 512,
            embed: 300,
            action_embed: 128,
            attention: 256,
            speaker_epochs: 20,
            speaker_lr: 1e-4,
            speaker_batch: 100,
            batch: 100,
            nav_pretrain_iters: 20000,
            nav_pretrain_lr: 1e-4,
            nav_lr: 1e-4,
            aps_lr: 3e-5,
            aug_count: 17000,
            schedule_aug_iters: 50000,
            schedule_ft_iters: 20000,
            ..Self::desk()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "full" => Ok(Self::full()),
            _ => Err(invalid_arg(format!("unknown preset {name:?} (expected desk or full)"))),
        }
    }

    /// Parses configuration text on top of the preset it names (desk by default).
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| format_err("config", format!("line {}: expected key = value", n + 1)))?;
            lines.push((n + 1, k.trim().to_string(), v.trim().to_string()));
        }
        let mut cfg = match lines.iter().find(|(_, k, _)| k == "preset") {
            Some((_, _, v)) => Self::preset(v)?,
            None => Self::desk(),
        };
        for (n, k, v) in lines {
            if k == "preset" {
                continue;
            }
            cfg.set(&k, &v).map_err(|e| format_err("config", format!("line {n}: {e}")))?;
        }
        Ok(cfg)
    }

    /// Applies one `key=value` override.
    pub fn set_pair(&mut self, pair: &str) -> Result<()> {
        let (k, v) = pair.split_once('=').ok_or_else(|| invalid_arg(format!("override {pair:?} is not key=value")))?;
        self.set(k.trim(), v.trim())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn p<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse().map_err(|_| invalid_arg(format!("bad value {v:?} for {key}")))
        }
        fn list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
            v.split(',').map(|x| p(key, x.trim())).collect()
        }
        match key {
            "seed" => self.seed = p(key, value)?,
            "workers" => self.workers = p(key, value)?,
            "world.nodes" => self.world_nodes = p(key, value)?,
            "world.train" => self.world_train = p(key, value)?,
            "world.val_unseen" => self.world_val_unseen = p(key, value)?,
            "world.test_unseen" => self.world_test_unseen = p(key, value)?,
            "data.hops_min" => self.data_hops_min = p(key, value)?,
            "data.hops_max" => self.data_hops_max = p(key, value)?,
            "data.train_per_world" => self.data_train_per_world = p(key, value)?,
            "data.val_seen_per_world" => self.data_val_seen_per_world = p(key, value)?,
            "data.unseen_per_world" => self.data_unseen_per_world = p(key, value)?,
            "model.flavor" => self.flavor = value.parse()?,
            "model.hidden" => self.hidden = p(key, value)?,
            "model.embed" => self.embed = p(key, value)?,
            "model.action_embed" => self.action_embed = p(key, value)?,
            "model.attention" => self.attention = p(key, value)?,
            "model.dropout" => self.dropout = p(key, value)?,
            "speaker.epochs" => self.speaker_epochs = p(key, value)?,
            "speaker.lr" => self.speaker_lr = p(key, value)?,
            "speaker.batch" => self.speaker_batch = p(key, value)?,
            "batch" => self.batch = p(key, value)?,
            "nav.pretrain_iters" => self.nav_pretrain_iters = p(key, value)?,
            "nav.pretrain_lr" => self.nav_pretrain_lr = p(key, value)?,
            "nav.lr" => self.nav_lr = p(key, value)?,
            "aps.lr" => self.aps_lr = p(key, value)?,
            "aps.rounds" => self.aps_rounds = p(key, value)?,
            "aps.hops_min" => self.aps_hops_min = p(key, value)?,
            "aps.hops_max" => self.aps_hops_max = p(key, value)?,
            "aug.count" => self.aug_count = p(key, value)?,
            "schedule.aug_iters" => self.schedule_aug_iters = p(key, value)?,
            "schedule.ft_iters" => self.schedule_ft_iters = p(key, value)?,
            "preexplore.lr" => self.preexplore_lr = p(key, value)?,
            "preexplore.steps" => self.preexplore_steps = list(key, value)?,
            "sweep.fractions" => self.sweep_fractions = list(key, value)?,
            "sweep.seeds" => self.sweep_seeds = p(key, value)?,
            _ => return Err(invalid_arg(format!("unknown config key {key:?}"))),
        }
        self.validate()
    }

    /// Applies the documented environment overrides.
    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(v) = std::env::var(ENV_SEED) {
            self.set("seed", &v)?;
        }
        if let Ok(v) = std::env::var(ENV_WORKERS) {
            self.set("workers", &v)?;
        }
        Ok(())
    }

    fn validate(&self) -> Result<()> {
        HopRange::new(self.data_hops_min, self.data_hops_max)?;
        HopRange::new(self.aps_hops_min, self.aps_hops_max)?;
        if self.batch == 0 || self.workers == 0 || self.speaker_batch == 0 {
            return Err(invalid_arg("batch sizes and worker count must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(invalid_arg("dropout must lie in [0, 1)"));
        }
        if self.sweep_fractions.iter().any(|f| !(*f > 0.0 && *f <= 1.0)) {
            return Err(invalid_arg("sweep fractions must lie in (0, 1]"));
        }
        if self.preexplore_steps.windows(2).any(|w| w[0] > w[1]) {
            return Err(invalid_arg("pre-exploration steps must be non-decreasing"));
        }
        Ok(())
    }

    /// Canonical text form; parsing it yields an equal config.
    pub fn to_text(&self) -> String {
        fn join<T: ToString>(xs: &[T]) -> String {
            xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
        }
        let entries: Vec<(&str, String)> = vec![
            ("seed", self.seed.to_string()),
            ("workers", self.workers.to_string()),
            ("world.nodes", self.world_nodes.to_string()),
            ("world.train", self.world_train.to_string()),
            ("world.val_unseen", self.world_val_unseen.to_string()),
            ("world.test_unseen", self.world_test_unseen.to_string()),
            ("data.hops_min", self.data_hops_min.to_string()),
            ("data.hops_max", self.data_hops_max.to_string()),
            ("data.train_per_world", self.data_train_per_world.to_string()),
            ("data.val_seen_per_world", self.data_val_seen_per_world.to_string()),
            ("data.unseen_per_world", self.data_unseen_per_world.to_string()),
            ("model.flavor", self.flavor.to_string()),
            ("model.hidden", self.hidden.to_string()),
            ("model.embed", self.embed.to_string()),
            ("model.action_embed", self.action_embed.to_string()),
            ("model.attention", self.attention.to_string()),
            ("model.dropout", self.dropout.to_string()),
            ("speaker.epochs", self.speaker_epochs.to_string()),
            ("speaker.lr", self.speaker_lr.to_string()),
            ("speaker.batch", self.speaker_batch.to_string()),
            ("batch", self.batch.to_string()),
            ("nav.pretrain_iters", self.nav_pretrain_iters.to_string()),
            ("nav.pretrain_lr", self.nav_pretrain_lr.to_string()),
            ("nav.lr", self.nav_lr.to_string()),
            ("aps.lr", self.aps_lr.to_string()),
            ("aps.rounds", self.aps_rounds.to_string()),
            ("aps.hops_min", self.aps_hops_min.to_string()),
            ("aps.hops_max", self.aps_hops_max.to_string()),
            ("aug.count", self.aug_count.to_string()),
            ("schedule.aug_iters", self.schedule_aug_iters.to_string()),
            ("schedule.ft_iters", self.schedule_ft_iters.to_string()),
            ("preexplore.lr", self.preexplore_lr.to_string()),
            ("preexplore.steps", join(&self.preexplore_steps)),
            ("sweep.fractions", join(&self.sweep_fractions)),
            ("sweep.seeds", self.sweep_seeds.to_string()),
        ];
        let mut out = format!("preset = {}\n", self.preset);
        for (k, v) in entries {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    pub fn world_spec(&self) -> WorldSpec {
        WorldSpec {
            seed: self.seed,
            nodes: self.world_nodes,
            train_worlds: self.world_train,
            val_unseen_worlds: self.world_val_unseen,
            test_unseen_worlds: self.world_test_unseen,
        }
    }

    pub fn dataset_spec(&self) -> DatasetSpec {
        DatasetSpec {
            seed: self.seed,
            hops: HopRange { min: self.data_hops_min, max: self.data_hops_max },
            train_per_world: self.data_train_per_world,
            val_seen_per_world: self.data_val_seen_per_world,
            unseen_per_world: self.data_unseen_per_world,
        }
    }

    pub fn nav_config(&self) -> NavConfig {
        NavConfig {
            flavor: self.flavor,
            hidden: self.hidden,
            embed: self.embed,
            action_embed: self.action_embed,
            attention: self.attention,
            dropout: self.dropout,
        }
    }

    pub fn speaker_config(&self) -> SpeakerConfig {
        SpeakerConfig {
            hidden: self.hidden,
            embed: self.embed,
            action_embed: self.action_embed,
            attention: self.attention,
            dropout: self.dropout,
            lr: self.speaker_lr,
            batch: self.speaker_batch,
            ..SpeakerConfig::default()
        }
    }

    pub fn aps_config(&self) -> ApsConfig {
        ApsConfig { view: self.flavor, hidden: self.hidden, action_embed: self.action_embed, attention: self.attention }
    }

    pub fn round_config(&self) -> RoundConfig {
        RoundConfig { batch: self.batch, hops: HopRange { min: self.aps_hops_min, max: self.aps_hops_max } }
    }

    pub fn preexplore_config(&self) -> PreExploreConfig {
        PreExploreConfig {
            lr: self.preexplore_lr,
            batch: self.batch,
            hops: HopRange { min: self.aps_hops_min, max: self.aps_hops_max },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        for cfg in [ExperimentConfig::desk(), ExperimentConfig::full()] {
            assert_eq!(ExperimentConfig::parse(&cfg.to_text()).unwrap(), cfg);
        }
    }

    #[test]
    fn keys_override_preset() {
        let c = ExperimentConfig::parse("preset = full\n# comment\nseed = 7\nbatch = 4  # trailing\n").unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.batch, 4);
        assert_eq!(c.hidden, 512);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(ExperimentConfig::parse("nonsense = 1").is_err());
        assert!(ExperimentConfig::parse("seed").is_err());
        assert!(ExperimentConfig::parse("seed = x").is_err());
        assert!(ExperimentConfig::parse("preset = huge").is_err());
        assert!(ExperimentConfig::parse("data.hops_min = 9").is_err());
        let mut c = ExperimentConfig::desk();
        assert!(c.set_pair("batch").is_err());
        c.set_pair("sweep.fractions=0.5,1.0").unwrap();
        assert_eq!(c.sweep_fractions, vec![0.5, 1.0]);
    }
}
