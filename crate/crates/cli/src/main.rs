use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gateseg_cli::commands::{
    self, ConvertOptions, EvaluateOptions, SweepOptions, SynthOptions, TrainOptions, DEFAULT_GRID,
};
use gateseg_cli::report::table_cells;
use gateseg_cli::HarnessError;
use gateseg_core::gating::{TrainConfig, DEFAULT_HIDDEN};
use gateseg_core::metrics::EmptyGtPolicy;
use gateseg_core::synth::PRESETS;

#[derive(Parser)]
#[command(name = "gateseg", version, about = "Referring video segmentation evaluation with existence gating")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct EvalArgs {
    /// Evaluation manifest (JSON).
    #[arg(long)]
    manifest: PathBuf,
    /// Boundary tolerance in pixels [default: 0.8% of the frame diagonal].
    #[arg(long)]
    radius: Option<u32>,
    /// How queries with an all-empty ground truth enter J and F.
    #[arg(long, value_parser = parse_policy)]
    empty_gt_policy: Option<EmptyGtPolicy>,
    /// Existence head used for queries without an existence_prob.
    #[arg(long)]
    head: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Worker threads [default: available cores].
    #[arg(long, env = "GATESEG_JOBS")]
    jobs: Option<usize>,
    /// Leave generated_at out of the JSON output.
    #[arg(long)]
    no_timestamp: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Score a manifest and write report.json and report.csv.
    Evaluate {
        #[command(flatten)]
        common: EvalArgs,
        /// Gate predictions whose existence probability is below this threshold.
        #[arg(long)]
        tau: Option<f64>,
    },
    /// Evaluate every threshold of a grid and write sweep.json and sweep.csv.
    Sweep {
        #[command(flatten)]
        common: EvalArgs,
        /// Threshold grid as start:stop:step.
        #[arg(long, default_value = DEFAULT_GRID)]
        grid: String,
    },
    /// Train an existence head on a feature dataset.
    TrainGate {
        /// Dataset JSON: {"format_version": 1, "samples": [{"id", "label", "features"}]}.
        #[arg(long)]
        features: PathBuf,
        #[arg(long, default_value_t = 0.1)]
        lr: f64,
        #[arg(long, default_value_t = 500)]
        epochs: usize,
        #[arg(long, default_value_t = DEFAULT_HIDDEN)]
        hidden: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory for head.json and loss.csv.
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a seeded synthetic scenario in manifest layout.
    Synth {
        #[arg(long, value_parser = clap::builder::PossibleValuesParser::new(PRESETS))]
        preset: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Convert masks between a PNG frame directory and an RLE-JSON file.
    Convert {
        /// Source: a directory of %05d.png frames or a .json file.
        #[arg(long)]
        from: PathBuf,
        /// Destination; a .json path writes RLE-JSON, anything else a PNG directory.
        #[arg(long)]
        to: PathBuf,
    },
}

fn parse_policy(s: &str) -> Result<EmptyGtPolicy, String> {
    s.parse().map_err(|e: gateseg_core::Error| e.to_string())
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Evaluate { common, tau } => {
            let report = commands::evaluate(&EvaluateOptions {
                manifest: common.manifest,
                radius: common.radius,
                empty_gt_policy: common.empty_gt_policy,
                tau,
                head: common.head,
                out: common.out.clone(),
                jobs: common.jobs,
                no_timestamp: common.no_timestamp,
            })?;
            println!("J&F,J,F,N-acc,T-acc,Final");
            println!("{}", table_cells(&report.summary).join(","));
            eprintln!("wrote {}", common.out.display());
        }
        Command::Sweep { common, grid } => {
            let report = commands::sweep(&SweepOptions {
                manifest: common.manifest,
                grid,
                radius: common.radius,
                empty_gt_policy: common.empty_gt_policy,
                head: common.head,
                out: common.out.clone(),
                jobs: common.jobs,
                no_timestamp: common.no_timestamp,
            })?;
            match &report.best {
                Some(b) => println!("best tau {} (Final {:.4})", b.tau, b.final_score),
                None => println!("no threshold has a defined Final score"),
            }
            eprintln!("wrote {}", common.out.display());
        }
        Command::TrainGate {
            features,
            lr,
            epochs,
            hidden,
            seed,
            out,
        } => {
            let trained = commands::train_gate(&TrainOptions {
                features,
                config: TrainConfig { lr, epochs, hidden, seed },
                out: out.clone(),
            })?;
            println!("final loss {}", trained.final_loss);
            eprintln!("wrote {}", out.display());
        }
        Command::Synth { preset, seed, out } => {
            let m = commands::synth(&SynthOptions {
                preset,
                seed,
                out: out.clone(),
            })?;
            println!("{} queries written to {}", m.queries.len(), out.display());
        }
        Command::Convert { from, to } => {
            commands::convert(&ConvertOptions { from, to: to.clone() })?;
            eprintln!("wrote {}", to.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
