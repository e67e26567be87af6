use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dpgen::config::{ExperimentConfig, Scale};
use dpgen::experiment::{self, AccountantQuery, ACCOUNTANT_HEADER};
use dpgen::Error;

/// DPSGD overfitting and convergence experiments on synthetic data.
#[derive(Debug, Parser)]
#[command(name = "dpgen", version)]
struct Cli {
    /// TOML file overriding keys of the scale preset
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory
    #[arg(long, global = true, default_value = "dpgen-out")]
    out: PathBuf,

    /// Preset to start from
    #[arg(long, global = true, default_value = "desk")]
    scale: String,

    /// Comma-separated noise multipliers
    #[arg(long, global = true, value_delimiter = ',')]
    sigma: Option<Vec<f64>>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write the synthetic dataset and its fold summary
    GenData,
    /// k-fold SGD vs DPSGD generalization tables and alpha-beta curves
    Overfit {
        /// Read the dataset from this CSV instead of generating it
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Error-by-epoch histories for both algorithms
    Convergence,
    /// Privacy cost per noise multiplier
    Accountant {
        /// Sampling ratio (default: lot size / fold size)
        #[arg(long)]
        q: Option<f64>,
        /// Number of lots (default: epochs * ceil(fold size / lot size))
        #[arg(long)]
        steps: Option<u64>,
        #[arg(long)]
        delta: Option<f64>,
    },
    /// Render a curve or history CSV as SVG
    Plot {
        input: PathBuf,
        /// Defaults to the input path with an .svg extension
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

fn load_config(cli: &Cli) -> dpgen::Result<ExperimentConfig> {
    let scale: Scale = cli.scale.parse()?;
    let base = ExperimentConfig::preset(scale);
    let mut config = match &cli.config {
        Some(path) => ExperimentConfig::load(path, &base)?,
        None => base,
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(sigmas) = &cli.sigma {
        match cli.command {
            Command::Convergence => config.conv_sigmas = sigmas.clone(),
            _ => config.sigmas = sigmas.clone(),
        }
    }
    config.validate()?;
    Ok(config)
}

fn print_manifest(path: &Path) {
    println!("manifest: {}", path.display());
}

fn run(cli: &Cli) -> dpgen::Result<()> {
    if let Command::Plot { input, output } = &cli.command {
        let output = output
            .clone()
            .unwrap_or_else(|| input.with_extension("svg"));
        experiment::plot_csv(input, &output)?;
        println!("{}", output.display());
        return Ok(());
    }
    let config = load_config(cli)?;
    let manifest_path = |cmd: &str| cli.out.join(format!("{cmd}_manifest.json"));
    match &cli.command {
        Command::GenData => {
            let (report, _) = experiment::run_gen_data(&config, &cli.out)?;
            println!("records: {}", report.records);
            println!("folds: {:?}", report.fold_sizes);
            print_manifest(&manifest_path("gen_data"));
        }
        Command::Overfit { data } => {
            let (report, _) = experiment::run_overfit(&config, &cli.out, data.as_deref())?;
            let sgd_diffs = dpgen::analysis::diffs(&report.sgd);
            println!(
                "sigma,sgd_mean_train,sgd_mean_test,dpsgd_mean_train,dpsgd_mean_test,gap_reduction"
            );
            for arm in &report.arms {
                let reduction =
                    dpgen::analysis::gap_reduction(&sgd_diffs, &dpgen::analysis::diffs(&arm.folds))
                        .map(|r| format!("{r:.4}"))
                        .unwrap_or_else(|_| "undefined".into());
                println!(
                    "{},{:.4},{:.4},{:.4},{:.4},{reduction}",
                    arm.sigma,
                    experiment::mean(report.sgd.iter().map(|r| r.train_error)),
                    experiment::mean(report.sgd.iter().map(|r| r.full_error)),
                    experiment::mean(arm.folds.iter().map(|r| r.train_error)),
                    experiment::mean(arm.folds.iter().map(|r| r.full_error)),
                );
            }
            print_manifest(&manifest_path("overfit"));
        }
        Command::Convergence => {
            let (output, _) = experiment::run_convergence(&config, &cli.out)?;
            let show = |e: Option<usize>| {
                e.map(|e| e.to_string())
                    .unwrap_or_else(|| "not_converged".into())
            };
            println!("sigma,sgd_train_epoch,sgd_test_epoch,dpsgd_train_epoch,dpsgd_test_epoch");
            for r in &output.runs {
                println!(
                    "{},{},{},{},{}",
                    r.sigma,
                    show(r.sgd.epoch_train_converged),
                    show(r.sgd.epoch_test_converged),
                    show(r.dpsgd.epoch_train_converged),
                    show(r.dpsgd.epoch_test_converged)
                );
            }
            print_manifest(&manifest_path("convergence"));
        }
        Command::Accountant { q, steps, delta } => {
            let defaults = AccountantQuery::from_config(&config);
            let query = AccountantQuery {
                q: q.unwrap_or(defaults.q),
                steps: steps.unwrap_or(defaults.steps),
                delta: delta.unwrap_or(defaults.delta),
            };
            let (rows, _) = experiment::run_accountant(&config, &query, &cli.out)?;
            println!("{ACCOUNTANT_HEADER}");
            for row in &rows {
                println!("{}", row.to_csv(&query));
            }
        }
        Command::Plot { .. } => unreachable!(),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("dpgen: {e}");
            ExitCode::from(match e {
                Error::Config(_) | Error::Domain(_) => 2,
                Error::Explosion { .. } => 3,
                _ => 1,
            })
        }
    }
}
