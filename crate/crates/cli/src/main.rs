use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use motionkit::dataset::DatasetMode;
use motionkit::pipeline::{self, EvalOptions, FlowSource, PipelineConfig};
use motionkit::{Error, ErrorClass};

#[derive(Parser, Debug)]
#[command(name = "motionkit", version, about = "Synthetic camera/flow data, flow codec, filtering, toy generators and motion metrics")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// JSON pipeline config; flags below override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum Mode {
    HumanLike,
    Camera,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum Source {
    GroundTruth,
    Stage1,
}

impl From<Source> for FlowSource {
    fn from(s: Source) -> Self {
        match s {
            Source::GroundTruth => FlowSource::GroundTruth,
            Source::Stage1 => FlowSource::Stage1,
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render synthetic clips and real-proxy clips into <out>/dataset.
    GenDataset {
        #[arg(long, value_enum)]
        mode: Option<Mode>,
    },
    /// Compute the dataset scale factor and write encoded flow PNGs.
    Encode,
    /// Score cycle consistency and mark clips above the percentile threshold.
    Filter {
        #[arg(long)]
        filter_percentile: Option<f64>,
    },
    /// Train the motion and video generators.
    Train {
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        mixture_ratio: Option<f64>,
    },
    /// Generate videos from ground-truth or stage-1 flows.
    Generate {
        #[arg(long, value_enum, default_value = "stage1")]
        flow_source: Source,
    },
    /// Score generated videos (M-Err, optional mRotErr and SNR sweep).
    Eval {
        #[arg(long, value_enum, default_value = "stage1")]
        flow_source: Source,
        /// Manifest to score instead of the generated one.
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Compare against this manifest's flows rather than re-estimating.
        #[arg(long)]
        against: Option<PathBuf>,
        #[arg(long, requires = "est_trajectory")]
        gt_trajectory: Option<PathBuf>,
        #[arg(long, requires = "gt_trajectory")]
        est_trajectory: Option<PathBuf>,
        #[arg(long)]
        snr_sweep: bool,
    },
    /// Render flows of a manifest as codec PNGs plus a colour-wheel legend.
    Viz {
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
}

fn config(global: &Global) -> motionkit::Result<PipelineConfig> {
    let mut cfg = match &global.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = global.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &global.out {
        cfg.out = out.clone();
    }
    Ok(cfg)
}

fn json<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).unwrap_or_default()
}

fn run(cli: Cli) -> motionkit::Result<()> {
    let mut cfg = config(&cli.global)?;
    match cli.command {
        Command::GenDataset { mode } => {
            if let Some(mode) = mode {
                cfg.mode = match mode {
                    Mode::HumanLike => DatasetMode::HumanLike,
                    Mode::Camera => DatasetMode::Camera,
                };
            }
            let m = pipeline::cmd_gen_dataset(&cfg)?;
            println!("wrote {} clips to {}", m.entries.len(), cfg.dataset_dir().display());
        }
        Command::Encode => {
            let m = pipeline::cmd_encode(&cfg)?;
            println!("scale factor s_f = {:.4} px", m.scale_factor_px.unwrap_or(f64::NAN));
        }
        Command::Filter { filter_percentile } => {
            if let Some(p) = filter_percentile {
                cfg.filter_percentile = p;
            }
            let report = pipeline::cmd_filter(&cfg)?;
            println!("{}", json(&report));
        }
        Command::Train { steps, mixture_ratio } => {
            if let Some(s) = steps {
                cfg.train.steps = s;
            }
            if let Some(r) = mixture_ratio {
                cfg.train.mixture_ratio = r;
            }
            let fmt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.4}"));
            for s in pipeline::cmd_train(&cfg)? {
                println!(
                    "{}: {} steps, loss {} -> {}",
                    s.generator,
                    s.steps,
                    fmt(s.first_loss),
                    fmt(s.last_loss)
                );
            }
        }
        Command::Generate { flow_source } => {
            let source = FlowSource::from(flow_source);
            let m = pipeline::cmd_generate(&cfg, source)?;
            println!(
                "generated {} clips in {}",
                m.entries.len(),
                cfg.generated_dir(source).display()
            );
        }
        Command::Eval {
            flow_source,
            manifest,
            against,
            gt_trajectory,
            est_trajectory,
            snr_sweep,
        } => {
            let opts = EvalOptions {
                manifest,
                against,
                gt_trajectory,
                est_trajectory,
                snr_sweep,
            };
            let report = pipeline::cmd_eval(&cfg, flow_source.into(), &opts)?;
            print!("{}", report.table());
        }
        Command::Viz { manifest } => {
            let n = pipeline::cmd_viz(&cfg, manifest.as_deref())?;
            println!("wrote {n} images to {}", cfg.viz_dir().display());
        }
    }
    Ok(())
}

fn exit_code(err: &Error) -> u8 {
    match err.class() {
        ErrorClass::Usage => 2,
        ErrorClass::Data => 3,
        ErrorClass::Numerical => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}
