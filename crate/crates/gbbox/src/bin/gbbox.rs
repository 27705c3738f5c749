//! Experiment harness CLI. Every subcommand is a thin wrapper over the
//! library's `experiment` module and prints a JSON summary to stdout;
//! commands that produce data also write CSV files under `--out`.

use clap::{Args, Parser, Subcommand};
use gbbox::divergence::DivergenceConfig;
use gbbox::error::Error;
use gbbox::experiment::{
    isotropic_demo, pair_metrics, run_analyze_dataset, run_compare_losses, run_grad_check,
    run_verify_properties, DatasetOptions, ExperimentConfig,
};
use gbbox::gaussian::SquareLikePolicy;
use gbbox::geometry::ObbBox;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "gbbox",
    about = "Gaussian bounding-box losses: verification experiments and dataset statistics",
    version
)]
struct Cli {
    #[command(flatten)]
    common: CommonArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Seed of the deterministic trial generator.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Number of trials (default depends on the subcommand).
    #[arg(long, global = true)]
    trials: Option<u64>,
    /// Output directory for CSV files.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Square-like aspect-ratio threshold.
    #[arg(long, global = true, default_value_t = SquareLikePolicy::default().tau)]
    tau: f64,
    /// Anisotropic eigenvalue scaling divisor.
    #[arg(long, global = true, default_value_t = SquareLikePolicy::default().delta)]
    delta: f64,
    /// Mahalanobis-term multiplier of the Bhattacharyya distance.
    #[arg(long, global = true, default_value_t = DivergenceConfig::default().alpha)]
    alpha: f64,
    /// Regression weight in the total detector loss.
    #[arg(long, global = true, default_value_t = 2.0)]
    lambda: f64,
}

#[derive(Subcommand)]
enum Command {
    /// Check non-negativity, identity, symmetry, the triangle inequality,
    /// and scale invariance for the Bhattacharyya loss and both baselines.
    VerifyProperties,
    /// Score all losses against Complete IoU over random horizontal pairs.
    CompareLosses,
    /// Show the square-box failure of the plain encoding and the
    /// anisotropic fix.
    IsotropicDemo,
    /// Compare analytic loss gradients against central finite differences.
    GradCheck,
    /// Parse DOTA-format annotations and emit squareness and aspect-ratio
    /// statistics.
    AnalyzeDataset {
        /// Annotation files or directories of `.txt` files.
        #[arg(required = true)]
        paths: Vec<PathBuf>,
        /// Kernel bandwidth override (Scott's rule when omitted).
        #[arg(long)]
        bandwidth: Option<f64>,
        /// Drop annotations carrying the difficult flag.
        #[arg(long)]
        exclude_difficult: bool,
    },
    /// Print IoU and every divergence for one pair of boxes, each given as
    /// "cx,cy,w,h,theta" with theta in radians.
    Iou { box_a: String, box_b: String },
}

fn parse_box(text: &str) -> Result<ObbBox, Error> {
    let parts: Vec<&str> = text.split(',').collect();
    if parts.len() != 5 {
        return Err(Error::InvalidBox(format!(
            "expected \"cx,cy,w,h,theta\", got {text:?}"
        )));
    }
    let mut vals = [0.0f64; 5];
    for (slot, part) in vals.iter_mut().zip(&parts) {
        *slot = part
            .trim()
            .parse()
            .map_err(|_| Error::InvalidBox(format!("{part:?} is not a number in {text:?}")))?;
    }
    ObbBox::new(vals[0], vals[1], vals[2], vals[3], vals[4])
}

fn experiment_config(common: &CommonArgs, default_trials: u64) -> ExperimentConfig {
    ExperimentConfig {
        seed: common.seed,
        trials: common.trials.unwrap_or(default_trials),
        out_dir: common.out.clone(),
        policy: SquareLikePolicy {
            tau: common.tau,
            delta: common.delta,
        },
        divergence: DivergenceConfig {
            alpha: common.alpha,
            ..DivergenceConfig::default()
        },
        ..ExperimentConfig::default()
    }
}

fn print_summary(summary: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(summary).unwrap());
}

fn run(cli: &Cli) -> Result<bool, Error> {
    match &cli.command {
        Command::VerifyProperties => {
            let cfg = experiment_config(&cli.common, 1_000_000);
            let report = run_verify_properties(&cfg)?;
            print_summary(&report.summary_json(cfg.seed));
            Ok(report.passed)
        }
        Command::CompareLosses => {
            let cfg = experiment_config(&cli.common, 1_000);
            let report = run_compare_losses(&cfg)?;
            print_summary(&report.summary_json(cfg.seed));
            Ok(true)
        }
        Command::IsotropicDemo => {
            let cfg = experiment_config(&cli.common, 1);
            let report = isotropic_demo(&cfg.policy, &cfg.divergence)?;
            print_summary(&report.summary_json());
            Ok(true)
        }
        Command::GradCheck => {
            let cfg = experiment_config(&cli.common, 1_000);
            let report = run_grad_check(&cfg)?;
            print_summary(&report.summary_json(cfg.seed));
            Ok(true)
        }
        Command::AnalyzeDataset {
            paths,
            bandwidth,
            exclude_difficult,
        } => {
            let opts = DatasetOptions {
                tau: cli.common.tau,
                bandwidth: *bandwidth,
                include_difficult: !exclude_difficult,
                out_dir: cli.common.out.clone(),
            };
            let report = run_analyze_dataset(paths, &opts)?;
            print_summary(&report.summary_json());
            for (path, reason) in &report.skipped {
                eprintln!("skipped {path}: {reason}");
            }
            Ok(true)
        }
        Command::Iou { box_a, box_b } => {
            let cfg = experiment_config(&cli.common, 1);
            let a = parse_box(box_a)?;
            let b = parse_box(box_b)?;
            let report = pair_metrics(&a, &b, &cfg.policy, &cfg.divergence)?;
            print_summary(&report.summary_json());
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(err) => {
            eprintln!("error: {err}");
            if matches!(err, Error::InvalidBox(_)) {
                eprintln!("usage: gbbox iou \"cx,cy,w,h,theta\" \"cx,cy,w,h,theta\"");
            }
            ExitCode::FAILURE
        }
    }
}
