use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use mmfuse::aggregate::Pooling;
use mmfuse::config::{ProfileName, RunConfig};
use mmfuse::fusion::ModalityKind;
use mmfuse::pipeline::{self, Part, Pipeline};
use mmfuse::{Error, Result};

/// Multimodal embedding fusion pipeline.
///
/// Exit codes: 0 success, 2 invalid input or configuration, 3 runtime failure.
/// Log level comes from MMFUSE_LOG (error, warn, info, debug, trace).
#[derive(Debug, Parser)]
#[command(name = "mmfuse", version)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Global {
    /// JSON run configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Global seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides the config.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Label file; overrides inputs.labels.
    #[arg(long, global = true)]
    labels: Option<PathBuf>,
    /// Accept upstream artifacts written under a different config hash.
    #[arg(long, global = true)]
    force: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Modality {
    Clinical,
    Radiology,
    Histology,
}

impl From<Modality> for ModalityKind {
    fn from(m: Modality) -> Self {
        match m {
            Modality::Clinical => ModalityKind::Clinical,
            Modality::Radiology => ModalityKind::Radiology,
            Modality::Histology => ModalityKind::Histology,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ProfileArg {
    Baseline,
    Ehr,
    Radiology,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PartArg {
    Train,
    Val,
    Test,
    All,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PoolingArg {
    Mean,
    MaxWeight,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Impute, encode and scale a clinical table.
    Preprocess {
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Keep or drop scan series by their descriptions.
    FilterSeries {
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        rules: Option<PathBuf>,
    },
    /// Clip, normalize and resample a raw volume.
    VolumePrep {
        #[arg(long)]
        input: Option<PathBuf>,
        /// Target shape as depth,height,width.
        #[arg(long, value_delimiter = ',', num_args = 3)]
        target: Option<Vec<usize>>,
    },
    /// Pool instance embeddings into one vector per patient.
    Aggregate {
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long, value_enum)]
        pooling: Option<PoolingArg>,
        /// Pool all instances at once instead of averaging within each group first.
        #[arg(long)]
        single_stage: bool,
    },
    /// Generate a synthetic multimodal cohort.
    Synth {
        #[arg(long)]
        patients: Option<usize>,
        #[arg(long)]
        complementarity: Option<f64>,
        #[arg(long)]
        prevalence: Option<f64>,
    },
    /// Train one modality classifier.
    TrainUnimodal {
        #[arg(long, value_enum)]
        modality: Modality,
        #[arg(long, value_enum, default_value = "baseline")]
        profile: ProfileArg,
        /// Feature file; replaces the modality's configured input and skips the width check.
        #[arg(long)]
        features: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Run the configured fusion strategies.
    Fuse {
        /// Strategy key (repeatable): early_concat, early_mean_pool, late_weighted_sum, late_learned.
        #[arg(long = "strategy")]
        strategies: Vec<String>,
    },
    /// Score a saved model on a feature file.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long, value_enum, default_value = "val")]
        part: PartArg,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Assemble the unified comparison table.
    Report,
    /// Synthetic data if needed, all baselines, all fusions and the report.
    Run,
    /// Print the effective configuration and its hash.
    Config,
}

fn require_file(path: &Path, what: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::invalid(format!("{what}: {} does not exist", path.display())))
    }
}

fn load_config(g: &Global) -> Result<RunConfig> {
    let mut cfg = match &g.config {
        Some(p) => {
            require_file(p, "--config")?;
            RunConfig::load(p)?
        }
        None => RunConfig::default(),
    };
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    if let Some(l) = &g.labels {
        cfg.inputs.labels = Some(l.clone());
    }
    Ok(cfg)
}

fn apply_overrides(cfg: &mut RunConfig, command: &Command) {
    match command {
        Command::Preprocess { input: Some(p) } => cfg.inputs.clinical_csv = Some(p.clone()),
        Command::FilterSeries { manifest, rules } => {
            if let Some(p) = manifest {
                cfg.inputs.manifest = Some(p.clone());
            }
            if let Some(p) = rules {
                cfg.inputs.rules = Some(p.clone());
            }
        }
        Command::VolumePrep { input, target } => {
            if let Some(p) = input {
                cfg.inputs.volume = Some(p.clone());
            }
            if let Some(t) = target {
                cfg.volume.target = [t[0], t[1], t[2]];
            }
        }
        Command::Aggregate { input, pooling, single_stage } => {
            if let Some(p) = input {
                cfg.inputs.instances = Some(p.clone());
            }
            if let Some(p) = pooling {
                cfg.aggregate.pooling = match p {
                    PoolingArg::Mean => Pooling::Mean,
                    PoolingArg::MaxWeight => Pooling::MaxWeight,
                };
            }
            if *single_stage {
                cfg.aggregate.two_stage = false;
            }
        }
        Command::Synth { patients, complementarity, prevalence } => {
            if let Some(n) = patients {
                cfg.synthetic.patients = *n;
            }
            if let Some(c) = complementarity {
                cfg.synthetic.complementarity = *c;
            }
            if let Some(p) = prevalence {
                cfg.synthetic.prevalence = *p;
            }
        }
        Command::TrainUnimodal { profile, epochs: Some(e), .. } => {
            let p = match profile {
                ProfileArg::Baseline => &mut cfg.profiles.baseline,
                ProfileArg::Ehr => &mut cfg.profiles.ehr,
                ProfileArg::Radiology => &mut cfg.profiles.radiology,
            };
            p.train.epochs = *e;
        }
        _ => {}
    }
}

fn execute(cli: Cli) -> Result<()> {
    let mut cfg = load_config(&cli.global)?;
    apply_overrides(&mut cfg, &cli.command);
    if let Command::Config = cli.command {
        cfg.validate()?;
        println!("{}", serde_json::to_string_pretty(&cfg)?);
        println!("config_hash: {}", cfg.hash());
        return Ok(());
    }
    let mut p = Pipeline::new(cfg, cli.global.out_dir.clone())?;
    p.force = cli.global.force;
    log::info!("config hash {}, output {}", p.hash, p.out.display());
    match cli.command {
        Command::Preprocess { .. } => println!("{}", p.preprocess()?.display()),
        Command::FilterSeries { .. } => {
            let manifest = p.filter_series()?;
            print!("{}", std::fs::read_to_string(p.dir("filter-series").join("summary.txt")).unwrap_or_default());
            println!("{}", manifest.display());
        }
        Command::VolumePrep { .. } => println!("{}", p.volume_prep()?.display()),
        Command::Aggregate { .. } => println!("{}", p.aggregate()?.display()),
        Command::Synth { .. } => println!("{}", p.synth()?.display()),
        Command::TrainUnimodal { modality, profile, features, .. } => {
            if let Some(f) = &features {
                require_file(f, "--features")?;
            }
            let profile = match profile {
                ProfileArg::Baseline => ProfileName::Baseline,
                ProfileArg::Ehr => ProfileName::Ehr,
                ProfileArg::Radiology => ProfileName::Radiology,
            };
            println!("{}", p.train_unimodal(modality.into(), profile, features.as_deref())?.display());
        }
        Command::Fuse { strategies } => {
            let only = (!strategies.is_empty()).then_some(strategies.as_slice());
            for m in p.fuse(only)? {
                println!("{}", m.display());
            }
        }
        Command::Evaluate { model, features, part, output } => {
            require_file(&features, "--features")?;
            let part = match part {
                PartArg::Train => Part::Train,
                PartArg::Val => Part::Val,
                PartArg::Test => Part::Test,
                PartArg::All => Part::All,
            };
            let (path, metrics) = p.evaluate(&model, &features, part, output.as_deref())?;
            print!("{}", pipeline::render_metrics(&metrics));
            println!("{}", path.display());
        }
        Command::Report => {
            let (path, report) = p.report()?;
            print!("{}", pipeline::render_report(&report));
            println!("{}", path.display());
        }
        Command::Run => {
            let (path, report) = p.run_all()?;
            print!("{}", pipeline::render_report(&report));
            println!("{}", path.display());
        }
        Command::Config => unreachable!(),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("MMFUSE_LOG", "warn")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 2 } else { 3 })
        }
    }
}
