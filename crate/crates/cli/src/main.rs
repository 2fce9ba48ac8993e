//! Config-driven experiment runner for the Type I attack toolkit.
//!
//! Every subcommand resolves its configuration (file < flags), writes the
//! resolved copy beside its outputs, and ends by printing one
//! machine-readable `RESULT {...}` line. Exit codes: 0 success, 2 config
//! error, 3 runtime failure.

mod commands;
mod config;
mod strip;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::ExperimentConfig;

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Runtime(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Runtime(m) => write!(f, "runtime error: {m}"),
        }
    }
}

impl From<typeone::Error> for CliError {
    fn from(e: typeone::Error) -> Self {
        match e {
            typeone::Error::Config(m) => CliError::Config(m),
            typeone::Error::Contract(m) => CliError::Config(m),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

#[derive(Parser)]
#[command(
    name = "typeone",
    about = "Type I adversarial attack toolkit: train, attack, defend, report",
    version
)]
struct Cli {
    /// Experiment config file (.toml or .json); flags override file values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed (overrides the config file).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (overrides the config file and $TYPEONE_OUT).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the digit corpus and write it as IDX files.
    MakeData {
        /// Destination directory for the four IDX files.
        #[arg(long)]
        dir: Option<PathBuf>,
    },
    /// Train an attacked classifier (mlp, lenet or embedding).
    TrainClassifier {
        #[arg(long)]
        arch: Option<String>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Train the SVAE: both stages, history CSV, checkpoint.
    TrainSvae {
        #[arg(long)]
        stage1_epochs: Option<usize>,
        #[arg(long)]
        stage2_epochs: Option<usize>,
    },
    /// Run the iterative Type I attack over a test-set index range.
    Attack {
        #[arg(long)]
        bundle: Option<PathBuf>,
        #[arg(long)]
        classifier: Option<PathBuf>,
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        strips: Option<usize>,
    },
    /// Run the latent-space attack from prior draws.
    LatentAttack {
        #[arg(long)]
        bundle: Option<PathBuf>,
        #[arg(long)]
        classifier: Option<PathBuf>,
        #[arg(long)]
        count: Option<usize>,
    },
    /// Concentric-spheres pipeline: train, canonicalize, both attacks, CSVs.
    Sphere {
        #[arg(long)]
        train_steps: Option<usize>,
    },
    /// Feature-squeezing detection tables over clean / Type II / Type I sets.
    Detect {
        #[arg(long)]
        classifier: Option<PathBuf>,
        #[arg(long)]
        type1_archive: Option<PathBuf>,
    },
    /// Logit pairing and the adversarial-training transfer matrix.
    Strengthen {
        #[arg(long)]
        classifier: Option<PathBuf>,
        #[arg(long)]
        type1_archive: Option<PathBuf>,
        #[arg(long)]
        lambda: Option<f64>,
    },
    /// Gradient and KL oracle suites; exit 0 iff every check passes.
    Gradcheck,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(summary) => {
            println!("RESULT {summary}");
            ExitCode::SUCCESS
        }
        Err(CliError::Config(m)) => {
            eprintln!("config error: {m}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(m)) => {
            eprintln!("runtime error: {m}");
            ExitCode::from(3)
        }
    }
}

fn run(cli: Cli) -> Result<serde_json::Value, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = Some(seed);
    }
    if let Some(out) = &cli.out {
        cfg.output_dir = Some(out.clone());
    }
    let seed = cfg.seed.unwrap_or(42);

    match cli.command {
        Command::MakeData { dir } => {
            cfg.check_command("make-data")?;
            if let Some(d) = dir {
                cfg.output_dir = Some(d);
            }
            commands::make_data::run(&cfg, seed)
        }
        Command::TrainClassifier { arch, epochs } => {
            cfg.check_command("train-classifier")?;
            if let Some(a) = arch {
                cfg.classifier.arch = a;
            }
            if let Some(e) = epochs {
                cfg.classifier.epochs = e;
            }
            commands::train_classifier::run(&cfg, seed)
        }
        Command::TrainSvae {
            stage1_epochs,
            stage2_epochs,
        } => {
            cfg.check_command("train-svae")?;
            if let Some(e) = stage1_epochs {
                cfg.svae.train.stage1_epochs = e;
            }
            if let Some(e) = stage2_epochs {
                cfg.svae.train.stage2_epochs = e;
            }
            commands::train_svae::run(&cfg, seed)
        }
        Command::Attack {
            bundle,
            classifier,
            count,
            strips,
        } => {
            cfg.check_command("attack")?;
            if bundle.is_some() {
                cfg.attack.bundle = bundle;
            }
            if classifier.is_some() {
                cfg.attack.classifier = classifier;
            }
            if let Some(c) = count {
                cfg.attack.count = c;
            }
            if let Some(s) = strips {
                cfg.attack.strips = s;
            }
            commands::attack_cmd::run(&cfg, seed)
        }
        Command::LatentAttack {
            bundle,
            classifier,
            count,
        } => {
            cfg.check_command("latent-attack")?;
            if bundle.is_some() {
                cfg.latent_attack.bundle = bundle;
            }
            if classifier.is_some() {
                cfg.latent_attack.classifier = classifier;
            }
            if let Some(c) = count {
                cfg.latent_attack.count = c;
            }
            commands::latent_attack_cmd::run(&cfg, seed)
        }
        Command::Sphere { train_steps } => {
            cfg.check_command("sphere")?;
            if let Some(s) = train_steps {
                cfg.sphere.train_steps = s;
            }
            commands::sphere_cmd::run(&cfg, seed)
        }
        Command::Detect {
            classifier,
            type1_archive,
        } => {
            cfg.check_command("detect")?;
            if classifier.is_some() {
                cfg.detect.classifier = classifier;
            }
            if type1_archive.is_some() {
                cfg.detect.type1_archive = type1_archive;
            }
            commands::detect_cmd::run(&cfg, seed)
        }
        Command::Strengthen {
            classifier,
            type1_archive,
            lambda,
        } => {
            cfg.check_command("strengthen")?;
            if classifier.is_some() {
                cfg.strengthen.classifier = classifier;
            }
            if type1_archive.is_some() {
                cfg.strengthen.type1_archive = type1_archive;
            }
            if let Some(l) = lambda {
                cfg.strengthen.lambda = l;
            }
            commands::strengthen_cmd::run(&cfg, seed)
        }
        Command::Gradcheck => {
            cfg.check_command("gradcheck")?;
            commands::gradcheck_cmd::run(&cfg, seed)
        }
    }
}
