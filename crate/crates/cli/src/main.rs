use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use curb_cli::commands::{self, EvalArgs, SynthGenArgs};
use curb_cli::config::PipelineConfig;
use curb_cli::CliError;
use curb_core::nn::TrainConfig;

/// 360-degree LIDAR curb detection pipeline.
#[derive(Parser)]
#[command(name = "curb", version, about)]
struct Cli {
    /// Pipeline config JSON; defaults to the desk-scale configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads. Execution is currently single-threaded for byte
    /// determinism; values other than 1 are accepted and ignored.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic sequences: scans, poses, and exact labels.
    SynthGen {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Frames per scene.
        #[arg(long, default_value_t = 30)]
        frames: usize,
        /// Number of scenes (one directory per scene when > 1).
        #[arg(long, default_value_t = 1)]
        scenes: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10.0)]
        speed: f64,
        #[arg(long, default_value_t = 10.0)]
        scan_rate: f64,
        #[arg(long, default_value_t = 16.0)]
        pose_rate: f64,
    },
    /// Integrate scan windows and rasterize BEV images into each sequence.
    BuildBev {
        #[arg(long)]
        data: PathBuf,
    },
    /// Partition curb labels into visible/occluded from the scans.
    Label {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Encode masks into anchor-grid JSON.
    Encode {
        #[arg(long)]
        masks: PathBuf,
        /// Filename suffix selecting which masks to encode.
        #[arg(long, default_value = ".occluded.pgm")]
        suffix: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the visible-curb detector.
    TrainVisible {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Training config JSON (lr, momentum, alpha, seed, epochs, scales).
        #[arg(long)]
        train_config: Option<PathBuf>,
    },
    /// Train the occluded-curb inference model.
    TrainOccluded {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        train_config: Option<PathBuf>,
    },
    /// Run the frame pipeline over sequences and write all mask outputs.
    Infer {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        visible_model: PathBuf,
        #[arg(long)]
        occluded_model: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-run the temporal filter/tracker over existing probability masks.
    Postprocess {
        /// Sequence directory providing poses and timestamps.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        masks: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Tolerance-band precision/recall/F1 report.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Suffix appended to the frame name to find its ground truth.
        #[arg(long, default_value = ".curb.pgm")]
        gt_suffix: String,
        /// Comma-separated pixel tolerances.
        #[arg(long, value_delimiter = ',', default_values_t = vec![1, 2, 3, 4])]
        tol: Vec<usize>,
        /// Comma-separated crop regions like 480x960 (default: full size).
        #[arg(long, value_delimiter = ',')]
        regions: Vec<String>,
        /// Probability threshold binarizing predictions before scoring.
        #[arg(long, default_value_t = 0.5)]
        threshold: f32,
        /// Also write the report as CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render PNG overlays of inference outputs on the BEV background.
    Render {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        infer: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_region(text: &str) -> Result<(usize, usize), CliError> {
    let mut it = text.split('x');
    let (w, h) = (it.next(), it.next());
    match (w, h, it.next()) {
        (Some(w), Some(h), None) => {
            let w = w
                .parse()
                .map_err(|_| CliError::Config(format!("bad region {text}")))?;
            let h = h
                .parse()
                .map_err(|_| CliError::Config(format!("bad region {text}")))?;
            Ok((w, h))
        }
        _ => Err(CliError::Config(format!(
            "bad region {text}, expected WxH"
        ))),
    }
}

fn load_train_config(path: Option<&PathBuf>) -> Result<TrainConfig, CliError> {
    match path {
        None => Ok(TrainConfig::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::MissingInput(format!("{}: {e}", p.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = PipelineConfig::load_or_default(cli.config.as_deref())?;
    if cli.threads != 1 {
        eprintln!("note: --threads {} requested; running single-threaded", cli.threads);
    }
    match cli.command {
        Command::SynthGen {
            seed,
            frames,
            scenes,
            out,
            speed,
            scan_rate,
            pose_rate,
        } => commands::synth_gen(
            &SynthGenArgs {
                seed,
                frames,
                scenes,
                out,
                speed_mps: speed,
                scan_rate_hz: scan_rate,
                pose_rate_hz: pose_rate,
            },
            &cfg,
        ),
        Command::BuildBev { data } => commands::build_bev(&data, &cfg),
        Command::Label { data, out } => commands::label(&data, &out, &cfg),
        Command::Encode { masks, suffix, out } => commands::encode(&masks, &suffix, &out, &cfg),
        Command::TrainVisible {
            data,
            out,
            train_config,
        } => {
            let tc = load_train_config(train_config.as_ref())?;
            commands::train_visible(&data, &out, &tc, &cfg)
        }
        Command::TrainOccluded {
            data,
            out,
            train_config,
        } => {
            let tc = load_train_config(train_config.as_ref())?;
            commands::train_occluded(&data, &out, &tc, &cfg)
        }
        Command::Infer {
            data,
            visible_model,
            occluded_model,
            out,
        } => commands::infer(&data, &visible_model, &occluded_model, &out, &cfg),
        Command::Postprocess { data, masks, out } => {
            commands::postprocess(&data, &masks, &out, &cfg)
        }
        Command::Eval {
            pred,
            gt,
            gt_suffix,
            tol,
            regions,
            threshold,
            out,
        } => {
            let regions = regions
                .iter()
                .map(|r| parse_region(r))
                .collect::<Result<Vec<_>, _>>()?;
            commands::eval(
                &EvalArgs {
                    pred,
                    gt,
                    gt_suffix,
                    tolerances: tol,
                    regions,
                    threshold,
                    out_csv: out,
                },
                &cfg,
            )
        }
        Command::Render { data, infer, out } => commands::render(&data, &infer, &out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
