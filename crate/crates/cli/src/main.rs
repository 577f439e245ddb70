//! `aps`: command-line harness for generating benchmarks, training navigators
//! with random or adversarial path augmentation, and reporting results.

mod commands;
mod error;
mod files;
mod manifest;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::error::{CliError, EXIT_USAGE};

#[derive(Parser, Debug)]
#[command(name = "aps", version, about = "Adversarial path sampling experiments")]
struct Cli {
    #[command(flatten)]
    cfg: ConfigArgs,
    #[command(subcommand)]
    command: Command,
}

/// Configuration sources, applied in order: preset or file, environment, `--set`.
#[derive(Args, Clone, Debug, Default)]
pub struct ConfigArgs {
    /// Key = value configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Named preset used when no file is given (desk or full).
    #[arg(long, global = true)]
    pub preset: Option<String>,
    /// Override one key, e.g. `--set aps.lr=0.01`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub set: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the world files.
    GenWorlds {
        #[arg(long)]
        out: PathBuf,
    },
    /// Sample ground-truth episodes for generated worlds.
    GenDataset {
        #[arg(long)]
        worlds: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the instruction generator on the training episodes.
    PretrainSpeaker {
        #[arg(long)]
        worlds: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the navigator on the training episodes.
    PretrainNav {
        #[arg(long)]
        worlds: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Label uniformly random shortest paths in the seen worlds.
    AugmentRand {
        #[arg(long)]
        worlds: PathBuf,
        #[arg(long)]
        speaker: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Alternate sampler and navigator updates, collecting labelled hard paths.
    TrainAps {
        #[arg(long)]
        worlds: PathBuf,
        #[arg(long)]
        nav: PathBuf,
        #[arg(long)]
        speaker: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train on an augmentation set, then fine-tune on the original episodes.
    TrainAug {
        #[arg(long)]
        worlds: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        nav: PathBuf,
        #[arg(long)]
        aug: PathBuf,
        /// Fraction of the configured augmentation budget to use.
        #[arg(long, default_value_t = 1.0)]
        fraction: f64,
        /// Arm name; selects the training seed stream.
        #[arg(long, default_value = "aug")]
        arm: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Adapt a navigator to one unseen world with self-sampled labelled walks.
    PreExplore {
        #[arg(long)]
        worlds: PathBuf,
        #[arg(long)]
        nav: PathBuf,
        #[arg(long)]
        aps: PathBuf,
        #[arg(long)]
        speaker: PathBuf,
        #[arg(long)]
        env: String,
        /// Update count; defaults to the largest configured step count.
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate one policy on an episode file.
    Eval {
        #[arg(long)]
        worlds: PathBuf,
        #[arg(long)]
        episodes: PathBuf,
        /// Navigator checkpoint; omit to use --oracle or --stay.
        #[arg(long, conflicts_with_all = ["oracle", "stay"])]
        nav: Option<PathBuf>,
        #[arg(long, conflicts_with = "stay")]
        oracle: bool,
        #[arg(long)]
        stay: bool,
        /// Model name in the emitted record.
        #[arg(long)]
        model: Option<String>,
        /// Split name in the emitted record; defaults to the file stem.
        #[arg(long)]
        split: Option<String>,
        /// Also write the visited nodes of every episode.
        #[arg(long)]
        trace: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// SR of every navigator on every episode file.
    CrossEval {
        #[arg(long)]
        worlds: PathBuf,
        #[arg(long = "nav", required = true)]
        navs: Vec<PathBuf>,
        #[arg(long = "episodes", required = true)]
        episodes: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Reduce run manifests to a table and series files.
    Report {
        /// Manifest files or run directories.
        #[arg(long = "manifest")]
        manifests: Vec<PathBuf>,
        /// Exit with status 4 when a comparative check fails.
        #[arg(long)]
        check: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Random versus adversarial augmentation over augmentation fractions, one run per seed.
    SweepRatio {
        #[arg(long)]
        out: PathBuf,
    },
    /// Pre-exploration curves over step counts on the validation-unseen worlds.
    SweepSteps {
        /// A sweep-ratio output directory whose per-seed models to reuse.
        #[arg(long)]
        from: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    use commands as c;
    let cfg_args = cli.cfg;
    match cli.command {
        Command::GenWorlds { out } => c::gen_worlds(&cfg_args, &out),
        Command::GenDataset { worlds, out } => c::gen_dataset(&cfg_args, &worlds, &out),
        Command::PretrainSpeaker { worlds, data, out } => c::pretrain_speaker(&cfg_args, &worlds, &data, &out),
        Command::PretrainNav { worlds, data, out } => c::pretrain_nav(&cfg_args, &worlds, &data, &out),
        Command::AugmentRand { worlds, speaker, out } => c::augment_rand(&cfg_args, &worlds, &speaker, &out),
        Command::TrainAps { worlds, nav, speaker, out } => c::train_aps(&cfg_args, &worlds, &nav, &speaker, &out),
        Command::TrainAug { worlds, data, nav, aug, fraction, arm, out } => {
            c::train_aug(&cfg_args, &c::TrainAugArgs { worlds, data, nav, aug, fraction, arm }, &out)
        }
        Command::PreExplore { worlds, nav, aps, speaker, env, steps, out } => {
            c::pre_explore(&cfg_args, &c::PreExploreArgs { worlds, nav, aps, speaker, env, steps }, &out)
        }
        Command::Eval { worlds, episodes, nav, oracle, stay, model, split, trace, out } => {
            let policy = match (nav, oracle, stay) {
                (Some(p), _, _) => c::PolicyChoice::Nav(p),
                (None, true, _) => c::PolicyChoice::Oracle,
                (None, false, true) => c::PolicyChoice::Stay,
                (None, false, false) => return Err(CliError::Usage("eval needs --nav, --oracle or --stay".into())),
            };
            c::eval(&cfg_args, &c::EvalArgs { worlds, episodes, policy, model, split, trace }, &out)
        }
        Command::CrossEval { worlds, navs, episodes, out } => c::cross_eval(&cfg_args, &worlds, &navs, &episodes, &out),
        Command::Report { manifests, check, out } => c::report(&cfg_args, &manifests, check, &out),
        Command::SweepRatio { out } => c::sweep_ratio(&cfg_args, &out),
        Command::SweepSteps { from, out } => c::sweep_steps(&cfg_args, from.as_deref(), &out),
    }
}
