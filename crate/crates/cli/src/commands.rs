use std::fs;
use std::path::{Path, PathBuf};

use aps_core::config::ExperimentConfig;
use aps_core::data::{generate_datasets, generate_worlds, EpisodePair, WorldLookup, WorldSet};
use aps_core::experiment::{
    ab_experiment, adversary_checkpoint, evaluate_arm, preexplore_seed, preexplore_sweep, prefix, ratio_sweep, run_aps,
    stage_seed, train_arm, trainer_checkpoint, trainer_from_checkpoint, AbRun, Benchmark, PreExplorePoint, SweepPoint,
};
use aps_core::metrics::{cross_evaluate, evaluate_episodes, MetricsRecord, OraclePolicy, Policy, StayPolicy};
use aps_core::navigator::NavModel;
use aps_core::preexplore;
use aps_core::sampler::ApsModel;
use aps_core::speaker::SpeakerModel;
use aps_core::trainer::augment_random_with;
use aps_core::world::Split;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{CliError, CliResult};
use crate::files::*;
use crate::manifest::{Manifest, SeriesRow};
use crate::report;
use crate::ConfigArgs;

pub fn load_config(a: &ConfigArgs) -> CliResult<ExperimentConfig> {
    let usage = |e: aps_core::Error| CliError::Usage(e.to_string());
    let mut cfg = match (&a.config, &a.preset) {
        (Some(p), _) => {
            require(p)?;
            ExperimentConfig::parse(&fs::read_to_string(p).map_err(aps_core::Error::from)?).map_err(usage)?
        }
        (None, Some(name)) => ExperimentConfig::preset(name).map_err(usage)?,
        (None, None) => ExperimentConfig::desk(),
    };
    cfg.apply_env().map_err(usage)?;
    for pair in &a.set {
        cfg.set_pair(pair).map_err(usage)?;
    }
    Ok(cfg)
}

fn benchmark(worlds: &Path, data: &Path) -> CliResult<Benchmark> {
    let w = read_worlds(worlds)?;
    let d = read_datasets(data, &w)?;
    Ok(Benchmark::from_parts(w, d)?)
}

fn seen(worlds: &WorldSet) -> CliResult<WorldSet> {
    Ok(worlds.subset(worlds.of_split(Split::TrainSeen).iter().map(|g| g.id()))?)
}

fn speaker(path: &Path) -> CliResult<SpeakerModel> {
    Ok(SpeakerModel::from_checkpoint(&load_checkpoint(path)?)?)
}

fn finish(m: Manifest, out: &Path) -> CliResult<()> {
    let path = m.finish(out)?;
    println!("{}", path.display());
    Ok(())
}

/// Name of a checkpoint for tables: its run directory, else its file stem.
fn label(path: &Path) -> String {
    path.parent()
        .and_then(|p| p.file_name())
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| stem(path))
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

pub fn gen_worlds(a: &ConfigArgs, out: &Path) -> CliResult<()> {
    let cfg = load_config(a)?;
    let worlds = generate_worlds(&cfg.world_spec())?;
    let mut m = Manifest::new("gen-worlds", &cfg);
    for p in write_worlds(&worlds, out)? {
        m.output(&stem(&p), &p);
    }
    finish(m, out)
}

pub fn gen_dataset(a: &ConfigArgs, worlds: &Path, out: &Path) -> CliResult<()> {
    let cfg = load_config(a)?;
    let w = read_worlds(worlds)?;
    let data = generate_datasets(&w, &cfg.dataset_spec())?;
    let mut m = Manifest::new("gen-dataset", &cfg);
    m.input("worlds", worlds);
    for p in write_datasets(&data, out)? {
        m.output(&stem(&p), &p);
    }
    finish(m, out)
}

pub fn pretrain_speaker(a: &ConfigArgs, worlds: &Path, data: &Path, out: &Path) -> CliResult<()> {
    let cfg = load_config(a)?;
    let b = benchmark(worlds, data)?;
    ensure_dir(out)?;
    let t = aps_core::experiment::pretrain_speaker(&cfg, &b)?;
    eprintln!("speaker token loss {:.4} after {} epochs", t.final_loss, t.epoch_losses.len());
    let path = out.join("speaker.ck");
    save_checkpoint(&t.model.to_checkpoint(), &path)?;
    let mut m = Manifest::new("pretrain-speaker", &cfg);
    m.input("worlds", worlds);
    m.input("data", data);
    m.output("speaker", &path);
    finish(m, out)
}

pub fn pretrain_nav(a: &ConfigArgs, worlds: &Path, data: &Path, out: &Path) -> CliResult<()> {
    let cfg = load_config(a)?;
    let b = benchmark(worlds, data)?;
    ensure_dir(out)?;
    let nav = aps_core::experiment::pretrain_nav(&cfg, &b)?;
    let path = out.join("nav.ck");
    save_checkpoint(&nav.to_checkpoint(), &path)?;
    let metrics = evaluate_arm(&nav, &b, "pretrained")?;
    let mut m = Manifest::new("pretrain-nav", &cfg);
    m.input("worlds", worlds);
    m.input("data", data);
    m.output("nav", &path);
    m.metrics = vec![metrics.val_seen, metrics.val_unseen];
    finish(m, out)
}

pub fn augment_rand(a: &ConfigArgs, worlds: &Path, speaker_ck: &Path, out: &Path) -> CliResult<()> {
    let cfg = load_config(a)?;
    let w = read_worlds(worlds)?;
    let spk = speaker(speaker_ck)?;
    ensure_dir(out)?;
    let aug = augment_random_with(&seen(&w)?, cfg.aug_count, &spk, cfg.round_config().hops, stage_seed(&cfg, "aug-rand"))?;
    let path = out.join("aug.jsonl");
    write_episode_file(&aug, &path)?;
    let mut m = Manifest::new("augment-rand", &cfg);
    m.input("worlds", worlds);
    m.input("speaker", speaker_ck);
    m.output("aug", &path);
    finish(m, out)
}

pub fn train_aps(a: &ConfigArgs, worlds: &Path, nav_ck: &Path, speaker_ck: &Path, out: &Path) -> CliResult<()> {
    let cfg = load_config(a)?;
    let w = read_worlds(worlds)?;
    let nav = NavModel::from_checkpoint(&load_checkpoint(nav_ck)?)?;
    let spk = speaker(speaker_ck)?;
    ensure_dir(out)?;
    let run = run_aps(&cfg, &seen(&w)?, &nav, &spk)?;
    eprintln!("{} rounds, {} stored pairs", run.logs.len(), run.store.len());
    let paths = [out.join("nav.ck"), out.join("aps.ck"), out.join("aug.jsonl"), out.join("rounds.jsonl")];
    save_checkpoint(&trainer_checkpoint(&run.nav), &paths[0])?;
    save_checkpoint(&adversary_checkpoint(&run.adversary), &paths[1])?;
    write_episode_file(run.store.pairs(), &paths[2])?;
    write_json_lines(&run.logs, &paths[3])?;
    let mut m = Manifest::new("train-aps", &cfg);
    m.input("worlds", worlds);
    m.input("nav", nav_ck);
    m.input("speaker", speaker_ck);
    for (name, p) in ["nav", "aps", "aug", "rounds"].iter().zip(&paths) {
        m.output(name, p);
    }
    m.series = run
        .logs
        .iter()
        .map(|l| SeriesRow { series: "rounds/mean-loss".into(), x: l.round as f64, y: l.mean_loss, seed: cfg.seed })
        .collect();
    finish(m, out)
}

pub struct TrainAugArgs {
    pub worlds: PathBuf,
    pub data: PathBuf,
    pub nav: PathBuf,
    pub aug: PathBuf,
    pub fraction: f64,
    pub arm: String,
}

pub fn train_aug(a: &ConfigArgs, args: &TrainAugArgs, out: &Path) -> CliResult<()> {
    let cfg = load_config(a)?;
    if !(args.fraction > 0.0 && args.fraction <= 1.0) {
        return Err(CliError::Usage(format!("fraction {} outside (0, 1]", args.fraction)));
    }
    let b = benchmark(&args.worlds, &args.data)?;
    let start = trainer_from_checkpoint(&load_checkpoint(&args.nav)?, cfg.nav_lr)?;
    let aug = read_episode_file(&args.aug, &b.worlds)?;
    ensure_dir(out)?;
    let nav = train_arm(&cfg, &b, &start, prefix(&aug, args.fraction, cfg.aug_count), &format!("arm-{}", args.arm))?;
    let path = out.join("nav.ck");
    save_checkpoint(&nav.to_checkpoint(), &path)?;
    let metrics = evaluate_arm(&nav, &b, &args.arm)?;
    let mut m = Manifest::new("train-aug", &cfg);
    m.input("worlds", &args.worlds);
    m.input("data", &args.data);
    m.input("nav", &args.nav);
    m.input("aug", &args.aug);
    m.output("nav", &path);
    for (split, r) in [("val-seen", &metrics.val_seen), ("val-unseen", &metrics.val_unseen)] {
        m.series.push(SeriesRow { series: format!("ratio/{}/{split}", args.arm), x: args.fraction, y: r.sr, seed: cfg.seed });
    }
    m.metrics = vec![metrics.val_seen, metrics.val_unseen];
    finish(m, out)
}

pub struct PreExploreArgs {
    pub worlds: PathBuf,
    pub nav: PathBuf,
    pub aps: PathBuf,
    pub speaker: PathBuf,
    pub env: String,
    pub steps: Option<usize>,
}

pub fn pre_explore(a: &ConfigArgs, args: &PreExploreArgs, out: &Path) -> CliResult<()> {
    let cfg = load_config(a)?;
    let w = read_worlds(&args.worlds)?;
    let g = w.get(&args.env).map_err(|e| CliError::Usage(e.to_string()))?;
    let nav = NavModel::from_checkpoint(&load_checkpoint(&args.nav)?)?;
    let aps = ApsModel::from_checkpoint(&load_checkpoint(&args.aps)?)?;
    let spk = speaker(&args.speaker)?;
    let steps = args.steps.or(cfg.preexplore_steps.last().copied()).unwrap_or(0);
    ensure_dir(out)?;
    let adapted = preexplore::pre_explore(&nav, &aps, &spk, g, steps, &cfg.preexplore_config(), preexplore_seed(&cfg, g.id()))?;
    let path = out.join("nav.ck");
    save_checkpoint(&adapted.to_checkpoint(), &path)?;
    let mut m = Manifest::new("pre-explore", &cfg);
    m.input("worlds", &args.worlds);
    m.input("nav", &args.nav);
    m.input("aps", &args.aps);
    m.input("speaker", &args.speaker);
    m.output("nav", &path);
    finish(m, out)
}



pub enum PolicyChoice {
    Nav(PathBuf),
    Oracle,
    Stay,
}

pub struct EvalArgs {
    pub worlds: PathBuf,
    pub episodes: PathBuf,
    pub policy: PolicyChoice,
    pub model: Option<String>,
    pub split: Option<String>,
    pub trace: bool,
}

#[derive(Serialize)]
struct TraceRow<'a> {
    env: &'a str,
    goal: usize,
    tokens: &'a [u16],
    nodes: &'a [usize],
    ne: f64,
    success: bool,
}

pub fn eval(a: &ConfigArgs, args: &EvalArgs, out: &Path) -> CliResult<()> {
    let cfg = load_config(a)?;
    let w = read_worlds(&args.worlds)?;
    let episodes = read_episode_file(&args.episodes, &w)?;
    if episodes.is_empty() {
        return Err(CliError::Usage(format!("{} holds no episodes", args.episodes.display())));
    }
    let (policy, default_name): (Box<dyn Policy>, String) = match &args.policy {
        PolicyChoice::Nav(p) => (Box::new(NavModel::from_checkpoint(&load_checkpoint(p)?)?), label(p)),
        PolicyChoice::Oracle => (Box::new(OraclePolicy), "oracle".into()),
        PolicyChoice::Stay => (Box::new(StayPolicy), "stay".into()),
    };
    let model = args.model.clone().unwrap_or(default_name);
    let split = args.split.clone().unwrap_or_else(|| stem(&args.episodes));
    ensure_dir(out)?;
    let results = evaluate_episodes(policy.as_ref(), &episodes, &w)?;
    let per: Vec<_> = results.iter().map(|(_, m)| *m).collect();
    let record = MetricsRecord::from_episodes(&model, &split, &per)?;
    let mut m = Manifest::new("eval", &cfg);
    m.input("worlds", &args.worlds);
    m.input("episodes", &args.episodes);
    if let PolicyChoice::Nav(p) = &args.policy {
        m.input("nav", p);
    }
    let path = out.join("metrics.jsonl");
    write_json_lines(std::slice::from_ref(&record), &path)?;
    m.output("metrics", &path);
    if args.trace {
        let rows: Vec<TraceRow> = episodes
            .iter()
            .zip(&results)
            .map(|(e, (t, em))| TraceRow {
                env: e.env(),
                goal: e.path.end(),
                tokens: e.instruction.tokens(),
                nodes: &t.nodes,
                ne: em.ne,
                success: em.success,
            })
            .collect();
        let tp = out.join("trace.jsonl");
        write_json_lines(&rows, &tp)?;
        m.output("trace", &tp);
    }
    println!(
        "{model} {split}: NE {:.3} OSR {:.3} SR {:.3} SPL {:.3} ({} episodes)",
        record.ne, record.osr, record.sr, record.spl, record.episodes
    );
    m.metrics.push(record);
    finish(m, out)
}

pub fn cross_eval(a: &ConfigArgs, worlds: &Path, navs: &[PathBuf], episodes: &[PathBuf], out: &Path) -> CliResult<()> {
    let cfg = load_config(a)?;
    let w = read_worlds(worlds)?;
    let models = navs
        .iter()
        .map(|p| Ok(NavModel::from_checkpoint(&load_checkpoint(p)?)?))
        .collect::<CliResult<Vec<_>>>()?;
    let sets = episodes.iter().map(|p| read_episode_file(p, &w)).collect::<CliResult<Vec<Vec<EpisodePair>>>>()?;
    let lookups: Vec<(&[EpisodePair], &dyn WorldLookup)> = sets.iter().map(|s| (s.as_slice(), &w as &dyn WorldLookup)).collect();
    let sr = cross_evaluate(&models, &lookups)?;
    ensure_dir(out)?;
    let mut text = String::from("nav");
    for p in episodes {
        text += &format!("\t{}", stem(p));
    }
    text.push('\n');
    for (p, row) in navs.iter().zip(&sr) {
        text += &label(p);
        for v in row {
            text += &format!("\t{v:.4}");
        }
        text.push('\n');
    }
    let path = out.join("cross.tsv");
    fs::write(&path, &text).map_err(aps_core::Error::from)?;
    print!("{text}");
    let mut m = Manifest::new("cross-eval", &cfg);
    m.input("worlds", worlds);
    for (i, p) in navs.iter().enumerate() {
        m.input(&format!("nav-{i}"), p);
    }
    for (i, p) in episodes.iter().enumerate() {
        m.input(&format!("episodes-{i}"), p);
    }
    m.output("cross", &path);
    finish(m, out)
}

/// Fraction the full-budget point is compared against in the slope check.
pub const SLOPE_LOW_FRACTION: f64 = 0.6;

pub fn report(a: &ConfigArgs, manifests: &[PathBuf], check: bool, out: &Path) -> CliResult<()> {
    let _ = load_config(a)?;
    let loaded = manifests.iter().map(|p| Manifest::load(p)).collect::<CliResult<Vec<_>>>()?;
    let r = report::build(&loaded);
    report::write(&r, out)?;
    print!("{}", r.table);
    for why in &r.missing {
        eprintln!("missing: {why}");
    }
    if !r.missing.is_empty() {
        return Err(CliError::Missing(format!("{} incomplete run(s)", r.missing.len())));
    }
    if check {
        let results = report::checks(&r, SLOPE_LOW_FRACTION);
        let mut failed = Vec::new();
        let mut text = String::new();
        for (name, v) in &results {
            let line = format!("{} {name}: {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
            println!("{line}");
            text += &line;
            text.push('\n');
            if !v.pass {
                failed.push(name.clone());
            }
        }
        fs::write(out.join("checks.txt"), text).map_err(aps_core::Error::from)?;
        if !failed.is_empty() {
            return Err(CliError::Acceptance(failed.join(", ")));
        }
    }
    Ok(())
}

fn seed_configs(cfg: &ExperimentConfig) -> Vec<ExperimentConfig> {
    (0..cfg.sweep_seeds as u64).map(|i| ExperimentConfig { seed: cfg.seed + i, ..cfg.clone() }).collect()
}

fn pool(cfg: &ExperimentConfig) -> CliResult<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new().num_threads(cfg.workers).build().map_err(|e| CliError::Usage(e.to_string()))
}

fn seed_dir(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("seed-{seed}"))
}

fn save_ab(run: &AbRun, dir: &Path) -> CliResult<Vec<(String, PathBuf)>> {
    ensure_dir(dir)?;
    let files = [
        ("speaker", "speaker.ck"),
        ("pretrained", "pretrained.ck"),
        ("aps", "aps.ck"),
        ("rand-nav", "rand-nav.ck"),
        ("aps-nav", "aps-nav.ck"),
        ("aug-rand", "aug-rand.jsonl"),
        ("aug-aps", "aug-aps.jsonl"),
    ];
    let p = |f: &str| dir.join(f);
    save_checkpoint(&run.speaker.to_checkpoint(), &p(files[0].1))?;
    save_checkpoint(&run.pretrained.to_checkpoint(), &p(files[1].1))?;
    save_checkpoint(&adversary_checkpoint(&run.aps.adversary), &p(files[2].1))?;
    save_checkpoint(&run.rand_nav.to_checkpoint(), &p(files[3].1))?;
    save_checkpoint(&run.aps_nav.to_checkpoint(), &p(files[4].1))?;
    write_episode_file(&run.rand_aug, &p(files[5].1))?;
    write_episode_file(run.aps.store.pairs(), &p(files[6].1))?;
    Ok(files.iter().map(|(n, f)| (n.to_string(), p(f))).collect())
}

pub fn sweep_ratio(a: &ConfigArgs, out: &Path) -> CliResult<()> {
    let cfg = load_config(a)?;
    ensure_dir(out)?;
    let configs = seed_configs(&cfg);
    let fractions = cfg.sweep_fractions.clone();
    type SeedOut = (u64, AbRun, Vec<SweepPoint>, Vec<(String, PathBuf)>);
    let results: Vec<CliResult<SeedOut>> = pool(&cfg)?.install(|| {
        configs
            .par_iter()
            .map(|c| {
                let b = Benchmark::generate(c)?;
                let run = ab_experiment(c, &b)?;
                let points = ratio_sweep(c, &b, &run, &fractions)?;
                let files = save_ab(&run, &seed_dir(out, c.seed))?;
                eprintln!("seed {} finished", c.seed);
                Ok((c.seed, run, points, files))
            })
            .collect()
    });
    let mut m = Manifest::new("sweep-ratio", &cfg);
    m.seeds = configs.iter().map(|c| c.seed).collect();
    let mut all_points = Vec::new();
    for r in results {
        let (seed, run, points, files) = r?;
        for (name, p) in files {
            m.output(&format!("seed-{seed}/{name}"), &p);
        }
        for metrics in [&run.pre_metrics, &run.rand_metrics, &run.aps_metrics] {
            m.metrics.push(metrics.val_seen.clone());
            m.metrics.push(metrics.val_unseen.clone());
        }
        for p in &points {
            m.series.push(SeriesRow { series: format!("ratio/{}/{}", p.arm, p.split), x: p.fraction, y: p.sr, seed });
        }
        all_points.extend(points);
    }
    let path = out.join("points.jsonl");
    write_json_lines(&all_points, &path)?;
    m.output("points", &path);
    finish(m, out)
}

pub fn sweep_steps(a: &ConfigArgs, from: Option<&Path>, out: &Path) -> CliResult<()> {
    let cfg = load_config(a)?;
    if let Some(dir) = from {
        let prior = Manifest::load(dir)?;
        if prior.config_hash != crate::manifest::config_hash(&cfg) {
            return Err(CliError::Usage(format!("{} was produced with a different configuration", dir.display())));
        }
        if let Some(why) = prior.missing() {
            return Err(CliError::Missing(why));
        }
    }
    ensure_dir(out)?;
    let configs = seed_configs(&cfg);
    let results: Vec<CliResult<Vec<PreExplorePoint>>> = pool(&cfg)?.install(|| {
        configs
            .par_iter()
            .map(|c| {
                let b = Benchmark::generate(c)?;
                let (nav, aps, spk) = match from {
                    Some(dir) => {
                        let d = seed_dir(dir, c.seed);
                        (
                            NavModel::from_checkpoint(&load_checkpoint(&d.join("aps-nav.ck"))?)?,
                            ApsModel::from_checkpoint(&load_checkpoint(&d.join("aps.ck"))?)?,
                            speaker(&d.join("speaker.ck"))?,
                        )
                    }
                    None => {
                        let run = ab_experiment(c, &b)?;
                        (run.aps_nav, run.aps.adversary.aps, run.speaker)
                    }
                };
                let points = preexplore_sweep(c, &b, &nav, &aps, &spk, Split::ValUnseen)?;
                eprintln!("seed {} finished", c.seed);
                Ok(points)
            })
            .collect()
    });
    let mut m = Manifest::new("sweep-steps", &cfg);
    m.seeds = configs.iter().map(|c| c.seed).collect();
    if let Some(dir) = from {
        m.input("from", dir);
    }
    let mut all = Vec::new();
    for r in results {
        let points = r?;
        for p in &points {
            m.series.push(SeriesRow { series: format!("preexplore/env/{}", p.env), x: p.steps as f64, y: p.sr, seed: p.seed });
        }
        let mut envs: Vec<&str> = points.iter().map(|p| p.env.as_str()).collect();
        envs.dedup();
        for env in envs {
            let curve: Vec<&PreExplorePoint> = points.iter().filter(|p| p.env == env).collect();
            let base = curve.iter().find(|p| p.steps == 0).map(|p| p.sr);
            let best = curve.iter().filter(|p| p.steps > 0).map(|p| p.sr).fold(f64::NEG_INFINITY, f64::max);
            if let (Some(b0), true) = (base, best.is_finite()) {
                m.series.push(SeriesRow {
                    series: "preexplore/gain-vs-feature-difference".into(),
                    x: curve[0].feature_difference,
                    y: best - b0,
                    seed: curve[0].seed,
                });
            }
        }
        all.extend(points);
    }
    let path = out.join("points.jsonl");
    write_json_lines(&all, &path)?;
    m.output("points", &path);
    finish(m, out)
}
