use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use limbpose_cli::commands::{self, EvaluateOptions, Stage, SynthOptions};
use limbpose_cli::config::PipelineConfig;
use limbpose_cli::server::{serve, ServiceState};
use limbpose_cli::{CliError, Result};
use limbpose_core::dataset::{FrameSpec, Manifest};
use limbpose_core::synth::ChallengeKind;
use limbpose_core::Limb;
use limbpose_nets::infer::Variant;

#[derive(Parser)]
#[command(name = "limbpose", version, about = "Limb pose estimation from depth video")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate the dataset and write clips with their target maps.
    Prepare {
        #[arg(long)]
        config: PathBuf,
    },
    /// Train one stage of a variant.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        stage: StageArg,
        #[arg(long, value_enum, default_value = "full")]
        variant: VariantArg,
    },
    /// Evaluate a variant on the test split and write reports.
    Evaluate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum, default_value = "full")]
        variant: VariantArg,
        /// Render skeleton overlays on the test frames.
        #[arg(long)]
        overlays: bool,
        /// Zero the maps of one limb before linking.
        #[arg(long, value_parser = parse_limb)]
        ablate: Option<Limb>,
        /// report.json of another run to compare with a paired t-test.
        #[arg(long)]
        compare: Option<PathBuf>,
        /// `table4` checks the overall median RMSD against the 9.06 px
        /// reference within 15%.
        #[arg(long, value_enum)]
        report: Option<ReportArg>,
    },
    /// Estimate poses for every annotatable frame of one video.
    Infer {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum, default_value = "full")]
        variant: VariantArg,
        #[arg(long)]
        video: String,
        #[arg(long)]
        output: PathBuf,
    },
    /// Generate a synthetic dataset with a starter configuration.
    Synth {
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 4)]
        videos: usize,
        /// Annotated frames per video.
        #[arg(long, default_value_t = 20)]
        length: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 128)]
        width: usize,
        #[arg(long, default_value_t = 96)]
        height: usize,
        #[arg(long, default_value_t = 2.0)]
        noise: f64,
        #[arg(long, default_value_t = 0.0)]
        occlusion: f64,
        #[arg(long, value_parser = parse_challenge)]
        challenge: Option<ChallengeKind>,
    },
    /// Serve frames and annotations to the annotation tool.
    Serve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: std::net::IpAddr,
        /// Expose every n-th raw frame; defaults to the configured cadence.
        #[arg(long)]
        cadence: Option<usize>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum StageArg {
    Detect,
    Regress,
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    Full,
    DetectionOnly,
    RegressionOnly,
}

#[derive(Clone, Copy, ValueEnum)]
enum ReportArg {
    Table4,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Full => Variant::Full,
            VariantArg::DetectionOnly => Variant::DetectionOnly,
            VariantArg::RegressionOnly => Variant::RegressionOnly,
        }
    }
}

fn parse_limb(s: &str) -> std::result::Result<Limb, String> {
    Limb::ALL
        .into_iter()
        .find(|l| l.name() == s)
        .ok_or_else(|| format!("unknown limb `{s}`; expected one of right-arm, left-arm, right-leg, left-leg"))
}

fn parse_challenge(s: &str) -> std::result::Result<ChallengeKind, String> {
    s.parse().map_err(|e: limbpose_core::Error| e.to_string())
}

fn load(path: &Path) -> Result<PipelineConfig> {
    PipelineConfig::load(path)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Prepare { config } => {
            let index = commands::prepare(&load(&config)?)?;
            println!(
                "prepared {} training, {} validation and {} test clips",
                index.train.len(),
                index.validation.len(),
                index.test.len()
            );
        }
        Command::Train { config, stage, variant } => {
            let stage = match stage {
                StageArg::Detect => Stage::Detect,
                StageArg::Regress => Stage::Regress,
            };
            let out = commands::train_stage(&load(&config)?, stage, variant.into())?;
            println!(
                "best epoch {} (validation {:.6}); training loss {:.6} -> {:.6}",
                out.report.best_epoch, out.report.best_metric, out.report.initial_loss, out.report.final_loss
            );
            println!("checkpoint {}", out.checkpoint.display());
            println!("log {}", out.log.display());
        }
        Command::Evaluate {
            config,
            variant,
            overlays,
            ablate,
            compare,
            report,
        } => {
            let opts = EvaluateOptions {
                overlays,
                ablate,
                compare,
                reference_check: report.is_some(),
            };
            let out = commands::evaluate(&load(&config)?, variant.into(), &opts)?;
            for row in &out.file.report.limbs {
                match row.rmsd {
                    Some(s) => println!("{:<10} median RMSD {:.3} px, IQR {:.3}", row.limb.name(), s.median, s.iqr),
                    None => println!("{:<10} no RMSD samples", row.limb.name()),
                }
            }
            if let Some(cmp) = &out.comparison {
                for c in cmp {
                    println!("{:<10} paired t-test over {} frames: {:?}", c.limb.name(), c.pairs, c.outcome);
                }
            }
            if let Some(r) = &out.reference {
                println!(
                    "reference check: measured {:?} vs {} (tolerance 15%): {}",
                    r.measured,
                    r.reference,
                    if r.within_tolerance { "PASS" } else { "FAIL" }
                );
            }
            println!("reports in {}", out.dir.display());
        }
        Command::Infer {
            config,
            variant,
            video,
            output,
        } => {
            let out = commands::infer_video(&load(&config)?, variant.into(), &video)?;
            let text = serde_json::to_string_pretty(&out).expect("poses serialize");
            std::fs::write(&output, text).map_err(|e| CliError::Io { path: output.clone(), source: e })?;
            println!("{} frames written to {}", out.poses.frames.len(), output.display());
        }
        Command::Synth {
            output,
            videos,
            length,
            seed,
            width,
            height,
            noise,
            occlusion,
            challenge,
        } => {
            let opts = SynthOptions {
                output,
                videos,
                length,
                seed,
                frame: FrameSpec::native(width, height, 30.0),
                noise,
                occlusion_probability: occlusion,
                challenge,
            };
            let manifest = commands::synth(&opts)?;
            println!("{} videos written to {}", manifest.entries.len(), opts.output.display());
        }
        Command::Serve {
            config,
            port,
            host,
            cadence,
        } => {
            let cfg = load(&config)?;
            cfg.validate()?;
            let manifest = Manifest::load(&cfg.paths.manifest)?;
            let state = ServiceState::new(manifest, &cfg.frame, cadence.unwrap_or(cfg.cadence))?;
            let runtime = tokio::runtime::Builder::new_multi_thread()
                .enable_all()
                .build()
                .map_err(|e| CliError::Io { path: "<runtime>".into(), source: e })?;
            runtime.block_on(serve(state, SocketAddr::new(host, port)))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                CliError::Config(_) => 2,
                CliError::Dependency(_) => 3,
                CliError::Validation(_) => 4,
                _ => 1,
            })
        }
    }
}
