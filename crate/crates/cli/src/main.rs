mod settings;

use std::io::{ErrorKind, Write};
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use dp_relu::attack::membership_experiment;
use dp_relu::datagen::{check_symmetry_moment, covariance_check, fourth_moment_check, tail_check, TailParams};
use dp_relu::experiments::{
    run_experiment, train_cell, write_results, Cell, ExperimentConfig, PreparedData, RunResult, Source,
};
use dp_relu::parallel::default_workers;
use dp_relu::privacy::{calibrate_zcdp_multiplier, zcdp_to_approx_dp, PrivacyParams};
use serde_json::json;

use settings::{build_config, GridArgs, SyntheticSpec};

/// Differentially private ReLU regression experiments.
#[derive(Debug, Parser)]
#[command(name = "dp-relu", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train one (algorithm, epsilon, seed) cell and print its metrics as JSON.
    Train(GridArgs),
    /// Run an algorithms x epsilons x seeds grid and write result files to --out.
    Sweep(GridArgs),
    /// Membership-inference experiment against one algorithm on a synthetic source.
    Attack {
        #[command(flatten)]
        grid: GridArgs,
        /// Non-member pairs scored per trial.
        #[arg(long, default_value_t = 1000)]
        fresh: usize,
        #[arg(long, default_value_t = 20)]
        trials: usize,
    },
    /// Print the noise multiplier for a privacy budget.
    Calibrate(CalibrateArgs),
    /// Monte-Carlo checks of a synthetic design's distributional assumptions.
    Check(CheckArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum RegimeArg {
    Zcdp,
    Shuffle,
}

#[derive(Debug, Args)]
struct CalibrateArgs {
    #[arg(long)]
    epsilon: f64,
    #[arg(long, conflicts_with = "delta_power")]
    delta: Option<f64>,
    /// delta = n^-p; needs --n.
    #[arg(long, value_name = "P", requires = "n")]
    delta_power: Option<f64>,
    /// Training-set size (required by the shuffle regime and --delta-power).
    #[arg(long)]
    n: Option<usize>,
    #[arg(long, value_enum, default_value = "zcdp")]
    regime: RegimeArg,
    /// Constant in the shuffle-regime multiplier.
    #[arg(long, default_value_t = 1.0)]
    c3: f64,
}

#[derive(Debug, Args)]
struct CheckArgs {
    /// Synthetic design, e.g. `d=8 design=rademacher`.
    #[arg(long, num_args = 1.., value_name = "KEY=VALUE")]
    synthetic: Vec<String>,
    #[arg(long, default_value_t = 100_000)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("DP_RELU_LOG", "warn")).init();
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(args) => train(&args),
        Command::Sweep(args) => sweep(&args),
        Command::Attack { grid, fresh, trials } => attack(&grid, fresh, trials),
        Command::Calibrate(args) => calibrate(&args),
        Command::Check(args) => check(&args),
    }
}

fn workers(args: &GridArgs) -> usize {
    args.workers.unwrap_or_else(default_workers)
}

/// Writes a line to stdout; a closed pipe (e.g. `| head`) is not an error.
fn emit(line: &str) -> Result<()> {
    match writeln!(std::io::stdout().lock(), "{line}") {
        Err(e) if e.kind() == ErrorKind::BrokenPipe => std::process::exit(0),
        other => Ok(other?),
    }
}

fn print_json(value: &serde_json::Value) -> Result<()> {
    emit(&serde_json::to_string_pretty(value)?)
}

/// Reduces the grid to one cell, rejecting ambiguous selections.
fn single_cell(cfg: &mut ExperimentConfig) -> Result<Cell> {
    let [algorithm] = cfg.algorithms[..] else {
        bail!("pick exactly one --algorithm (got {})", cfg.algorithms.len());
    };
    let [seed] = cfg.seeds[..] else {
        bail!("pick exactly one --seed (got {})", cfg.seeds.len());
    };
    let epsilon = if algorithm.is_private() {
        let [eps] = cfg.epsilons[..] else {
            bail!("pick exactly one --epsilon for {algorithm} (got {})", cfg.epsilons.len());
        };
        Some(eps)
    } else {
        None
    };
    cfg.epsilons = epsilon.into_iter().collect();
    Ok(Cell {
        algorithm,
        epsilon,
        seed,
    })
}

fn write_if_requested(result: &RunResult, out: Option<&PathBuf>) -> Result<()> {
    if let Some(dir) = out {
        let files = write_results(result, dir).with_context(|| format!("writing results to {}", dir.display()))?;
        log::info!("wrote {} curves and summaries to {}", files.curves.len(), dir.display());
    }
    Ok(())
}

fn train(args: &GridArgs) -> Result<()> {
    let mut cfg = build_config(args)?;
    single_cell(&mut cfg)?;
    let result = run_experiment(&cfg, 1)?;
    write_if_requested(&result, args.out.as_ref())?;
    let cell = &result.cells[0];
    let metrics = cell.outcome.as_ref().map_err(|e| anyhow::anyhow!("training failed: {e}"))?;
    print_json(&json!({
        "algorithm": cell.cell.algorithm,
        "epsilon": cell.cell.epsilon,
        "seed": cell.cell.seed,
        "delta": metrics.delta,
        "noise_multiplier": metrics.noise_multiplier,
        "final_train": metrics.final_train,
        "final_test": metrics.final_test,
        "excess_risk": metrics.excess_risk,
        "fraction_steps_clipped": metrics.fraction_steps_clipped,
        "effective_privacy": metrics.effective_privacy,
        "target_scale": result.target_scale,
    }))
}

fn sweep(args: &GridArgs) -> Result<()> {
    let Some(out) = &args.out else {
        bail!("sweep needs --out DIR");
    };
    let cfg = build_config(args)?;
    let result = run_experiment(&cfg, workers(args))?;
    write_if_requested(&result, Some(out))?;
    for agg in &result.aggregates {
        let eps = agg.epsilon.map_or_else(|| "none".to_owned(), |e| e.to_string());
        emit(&format!(
            "{:<13} eps={eps:<6} train={:.6} test={:.6} seeds={} failed={}",
            agg.algorithm.name(),
            agg.final_train_mean,
            agg.final_test_mean,
            agg.seeds_ok,
            agg.seeds_failed
        ))?;
    }
    let failed = result.cells.iter().filter(|c| c.outcome.is_err()).count();
    if failed > 0 {
        log::warn!("{failed} cell(s) failed; see failures.txt");
    }
    Ok(())
}

fn attack(args: &GridArgs, fresh: usize, trials: usize) -> Result<()> {
    let mut cfg = build_config(args)?;
    let cell = single_cell(&mut cfg)?;
    let Source::Synthetic { ground_truth, n } = &cfg.source else {
        bail!("the attack needs a synthetic source");
    };
    let trainer = |members: &dp_relu::model::Dataset, seed: u64| {
        let data = PreparedData {
            train: members.clone(),
            test: members.clone(),
            target_scale: None,
        };
        let cell = Cell { seed, ..cell };
        Ok(train_cell(&cfg, &cell, &data)?.0.final_average)
    };
    let report = membership_experiment(trainer, ground_truth, *n, fresh, trials, cell.seed, workers(args))?;
    print_json(&json!({
        "algorithm": cell.algorithm,
        "epsilon": cell.epsilon,
        "n": n,
        "fresh": fresh,
        "trials": trials,
        "report": report,
    }))
}

fn calibrate(args: &CalibrateArgs) -> Result<()> {
    let delta = match (args.delta, args.delta_power, args.n) {
        (Some(d), _, _) => d,
        (None, Some(p), Some(n)) => (n as f64).powf(-p),
        _ => bail!("give --delta, or --delta-power with --n"),
    };
    let value = match args.regime {
        RegimeArg::Zcdp => {
            let f = calibrate_zcdp_multiplier(args.epsilon, delta)?;
            let rho = 1.0 / (f * f);
            json!({
                "regime": "zcdp",
                "epsilon": args.epsilon,
                "delta": delta,
                "noise_multiplier": f,
                "rho": rho,
                "epsilon_round_trip": zcdp_to_approx_dp(rho, delta)?,
            })
        }
        RegimeArg::Shuffle => {
            let Some(n) = args.n else {
                bail!("the shuffle regime needs --n");
            };
            let (params, calibration) = PrivacyParams::shuffle(args.epsilon, delta, n, args.c3)?;
            json!({
                "regime": "shuffle_amplified",
                "epsilon": args.epsilon,
                "delta": delta,
                "n": n,
                "noise_multiplier": params.noise_multiplier,
                "epsilon_bound": calibration.epsilon_bound,
                "warning": calibration.warning(args.epsilon),
            })
        }
    };
    print_json(&value)
}

fn check(args: &CheckArgs) -> Result<()> {
    let spec = SyntheticSpec::parse(&args.synthetic)?;
    let gt = spec.ground_truth()?;
    let tail = TailParams::for_sample_size(args.samples);
    print_json(&json!({
        "d": spec.d,
        "design": spec.design,
        "samples": args.samples,
        "covariance": covariance_check(&gt, args.samples, args.seed)?,
        "symmetry": check_symmetry_moment(&gt, args.samples, args.seed)?,
        "fourth_moment": fourth_moment_check(&gt, args.samples, args.seed)?,
        "tail": tail_check(&gt, &tail, args.samples, args.seed)?,
    }))
}
