use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, Source};
use super::data::{load_csv, normalize_target, split, standardize};
use crate::datagen::{generate_range, GroundTruth};
use crate::error::{Error, Result};
use crate::model::{excess_risk_estimate, Dataset};
use crate::numeric::{mean_std, norm_sq};
use crate::parallel::map_indexed;
use crate::privacy::{EffectivePrivacy, PrivacyParams, Regime};
use crate::rng::Purpose;
use crate::threshold::ThresholdParams;
use crate::trainers::{
    run_dp_glmtron, run_dp_mbglmtron, run_dp_sgd, run_glmtron, Algorithm, LossRecord, TrainTrace, TrainerConfig,
};

/// One grid cell. Non-private cells carry no epsilon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub algorithm: Algorithm,
    pub epsilon: Option<f64>,
    pub seed: u64,
}

/// Metrics of a finished cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellMetrics {
    pub delta: f64,
    pub noise_multiplier: f64,
    pub curve: Vec<LossRecord>,
    pub final_train: f64,
    pub final_test: f64,
    /// Synthetic sources only.
    pub excess_risk: Option<f64>,
    pub excess_risk_se: Option<f64>,
    pub effective_privacy: EffectivePrivacy,
    pub fraction_steps_clipped: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub cell: Cell,
    /// `Err` holds the failure message; other cells are unaffected.
    pub outcome: std::result::Result<CellMetrics, String>,
    pub wall_seconds: f64,
}

/// Mean and sample standard deviation over successful seeds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub algorithm: Algorithm,
    pub epsilon: Option<f64>,
    pub seeds_ok: usize,
    pub seeds_failed: usize,
    pub final_train_mean: f64,
    pub final_train_std: f64,
    pub final_test_mean: f64,
    pub final_test_std: f64,
    pub excess_risk_mean: Option<f64>,
    pub excess_risk_std: Option<f64>,
    pub effective_epsilon_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub config: ExperimentConfig,
    /// Label scale removed by target normalisation (CSV sources).
    pub target_scale: Option<f64>,
    pub cells: Vec<CellResult>,
    pub aggregates: Vec<Aggregate>,
}

impl RunResult {
    pub fn aggregate(&self, algorithm: Algorithm, epsilon: Option<f64>) -> Option<&Aggregate> {
        self.aggregates
            .iter()
            .find(|a| a.algorithm == algorithm && a.epsilon == epsilon)
    }
}

/// Cells in output order: algorithm, then epsilon, then seed.
pub fn grid_cells(cfg: &ExperimentConfig) -> Vec<Cell> {
    let mut cells = Vec::new();
    for &algorithm in &cfg.algorithms {
        let epsilons: Vec<Option<f64>> = if algorithm.is_private() {
            cfg.epsilons.iter().copied().map(Some).collect()
        } else {
            vec![None]
        };
        for epsilon in epsilons {
            for &seed in &cfg.seeds {
                cells.push(Cell {
                    algorithm,
                    epsilon,
                    seed,
                });
            }
        }
    }
    cells
}

/// Data for one seed after splitting and preprocessing.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub train: Dataset,
    pub test: Dataset,
    pub target_scale: Option<f64>,
}

/// Loads the CSV source once (no-op for synthetic sources).
fn load_source(cfg: &ExperimentConfig) -> Result<Option<Dataset>> {
    match &cfg.source {
        Source::Csv { path, target, exclude } => Ok(Some(load_csv(path, target, exclude)?)),
        Source::Synthetic { .. } => Ok(None),
    }
}

/// Training and test sets seen by every cell with this `seed`.
pub fn prepare_data(cfg: &ExperimentConfig, raw: Option<&Dataset>, seed: u64) -> Result<PreparedData> {
    match (&cfg.source, raw) {
        (Source::Synthetic { ground_truth, n }, _) => {
            let tf = cfg.eval.test_fraction;
            let n_test = ((*n as f64) * tf / (1.0 - tf)).round().max(1.0) as usize;
            Ok(PreparedData {
                train: generate_range(ground_truth, 0..*n, seed, Purpose::Data)?,
                test: generate_range(ground_truth, *n..*n + n_test, seed, Purpose::Data)?,
                target_scale: None,
            })
        }
        (Source::Csv { .. }, Some(raw)) => {
            let (train, test) = split(raw, cfg.eval.test_fraction, seed)?;
            if !cfg.preprocess {
                return Ok(PreparedData {
                    train,
                    test,
                    target_scale: None,
                });
            }
            let (train, test, _) = standardize(&train, &test)?;
            let (train, test, scale) = normalize_target(&train, &test)?;
            Ok(PreparedData {
                train,
                test,
                target_scale: Some(scale),
            })
        }
        (Source::Csv { .. }, None) => Err(Error::invalid("CSV source was not loaded")),
    }
}

/// Trainer constants derived from the data when `auto_constants` is set.
///
/// Synthetic runs use the known trace and the theory search range; CSV runs
/// use the mean squared feature norm and the label-based range.
pub fn effective_trainer_config(
    cfg: &ExperimentConfig,
    algorithm: Algorithm,
    train: &Dataset,
    seed: u64,
) -> Result<TrainerConfig> {
    let mut trainer = TrainerConfig {
        seed,
        ..cfg.trainer_for(algorithm).clone()
    };
    if !cfg.auto_constants {
        return Ok(trainer);
    }
    match &cfg.source {
        Source::Synthetic { ground_truth, .. } => {
            trainer.trace_h = ground_truth.realized_covariance().trace();
            trainer.threshold = theory_threshold(ground_truth, &trainer, train.len())?;
        }
        Source::Csv { .. } => {
            trainer.trace_h = train.iter().map(|ex| norm_sq(&ex.x)).sum::<f64>() / train.len() as f64;
            trainer.threshold = ThresholdParams::data_defaults(train, 0.0, true)?;
        }
    }
    Ok(trainer)
}

/// Search range from the ground truth for a training set of size `n`.
pub fn theory_threshold(gt: &GroundTruth, trainer: &TrainerConfig, n: usize) -> Result<ThresholdParams> {
    let log_factor = if trainer.a == 0.0 {
        1.0
    } else {
        (n as f64).ln().powf(2.0 * trainer.a)
    };
    let radius = (trainer.alpha * gt.realized_covariance().trace() * log_factor).sqrt();
    let scale = gt.w_star_h_norm() + gt.sigma();
    ThresholdParams::theory_defaults(trainer.c2, trainer.a, radius, scale, n, 0.0, true)
}

/// Privacy parameters for `algorithm` at `epsilon` on a training set of size `n`.
pub fn cell_privacy(cfg: &ExperimentConfig, algorithm: Algorithm, epsilon: f64, n: usize) -> Result<PrivacyParams> {
    let delta = cfg.delta_rule.delta(n)?;
    match algorithm.regime() {
        Regime::ShuffleAmplified => Ok(PrivacyParams::shuffle(epsilon, delta, n, cfg.c3)?.0),
        Regime::Zcdp => PrivacyParams::zcdp(epsilon, delta),
    }
}

/// Trains one cell on prepared data.
pub fn train_cell(cfg: &ExperimentConfig, cell: &Cell, data: &PreparedData) -> Result<(TrainTrace, Option<PrivacyParams>)> {
    let trainer = effective_trainer_config(cfg, cell.algorithm, &data.train, cell.seed)?;
    let n = data.train.len();
    let privacy = match cell.epsilon {
        Some(eps) if cell.algorithm.is_private() => Some(cell_privacy(cfg, cell.algorithm, eps, n)?),
        _ => None,
    };
    let trace = match (cell.algorithm, &privacy) {
        (Algorithm::Glmtron, _) => run_glmtron(&data.train, &trainer)?,
        (Algorithm::DpMbglmtron, Some(p)) => run_dp_mbglmtron(&data.train, &trainer, p)?,
        (Algorithm::DpSgd, Some(p)) => run_dp_sgd(&data.train, &trainer, p)?,
        (Algorithm::DpGlmtron, Some(p)) => {
            let public_size = cfg.public_size.unwrap_or(trainer.estimating);
            match &cfg.source {
                Source::Synthetic { ground_truth, .. } => {
                    let public = generate_range(ground_truth, 0..public_size, cell.seed, Purpose::PublicData)?;
                    run_dp_glmtron(&data.train, &public, &trainer, p)?
                }
                Source::Csv { .. } => {
                    if public_size >= n {
                        return Err(Error::invalid(format!(
                            "public set of {public_size} leaves no training data out of {n}"
                        )));
                    }
                    let public = data.train.slice(0..public_size);
                    let private = data.train.slice(public_size..n);
                    run_dp_glmtron(&private, &public, &trainer, p)?
                }
            }
        }
        (_, None) => return Err(Error::invalid(format!("{} needs an epsilon", cell.algorithm))),
    };
    Ok((trace, privacy))
}

fn run_cell(cfg: &ExperimentConfig, cell: &Cell, raw: Option<&Dataset>) -> Result<CellMetrics> {
    let data = prepare_data(cfg, raw, cell.seed)?;
    let (mut trace, privacy) = train_cell(cfg, cell, &data)?;
    trace.attach_test_losses(&data.test)?;
    let (excess_risk, excess_risk_se) = match &cfg.source {
        Source::Synthetic { ground_truth, .. } => {
            let est = excess_risk_estimate(
                &trace.final_average,
                ground_truth.w_star(),
                ground_truth,
                cfg.eval.mc_samples,
                cell.seed,
            )?;
            (Some(est.mean), Some(est.std_error))
        }
        Source::Csv { .. } => (None, None),
    };
    let final_train = trace.final_train_loss().unwrap_or(f64::NAN);
    let final_test = trace.final_test_loss().unwrap_or(f64::NAN);
    Ok(CellMetrics {
        delta: privacy.map_or(0.0, |p| p.delta),
        noise_multiplier: privacy.map_or(0.0, |p| p.noise_multiplier),
        fraction_steps_clipped: trace.fraction_steps_clipped(),
        curve: trace.losses,
        final_train,
        final_test,
        excess_risk,
        excess_risk_se,
        effective_privacy: trace.effective_privacy,
    })
}

/// Runs the whole grid on up to `workers` threads.
///
/// Failures are recorded per cell. Results do not depend on `workers`.
pub fn run_experiment(cfg: &ExperimentConfig, workers: usize) -> Result<RunResult> {
    cfg.validate()?;
    let raw = load_source(cfg)?;
    let target_scale = match &raw {
        Some(_) if cfg.preprocess => Some(prepare_data(cfg, raw.as_ref(), cfg.seeds[0])?.target_scale).flatten(),
        _ => None,
    };
    let cells = grid_cells(cfg);
    let results = map_indexed(cells.len(), workers, |i| {
        let start = Instant::now();
        let outcome = run_cell(cfg, &cells[i], raw.as_ref()).map_err(|e| e.to_string());
        CellResult {
            cell: cells[i],
            outcome,
            wall_seconds: start.elapsed().as_secs_f64(),
        }
    });
    let aggregates = aggregate(&results);
    Ok(RunResult {
        config: cfg.clone(),
        target_scale,
        cells: results,
        aggregates,
    })
}

fn aggregate(results: &[CellResult]) -> Vec<Aggregate> {
    let mut groups: Vec<(Algorithm, Option<f64>)> = Vec::new();
    for r in results {
        let key = (r.cell.algorithm, r.cell.epsilon);
        if !groups.contains(&key) {
            groups.push(key);
        }
    }
    groups
        .into_iter()
        .map(|(algorithm, epsilon)| {
            let members: Vec<&CellResult> = results
                .iter()
                .filter(|r| r.cell.algorithm == algorithm && r.cell.epsilon == epsilon)
                .collect();
            let ok: Vec<&CellMetrics> = members.iter().filter_map(|r| r.outcome.as_ref().ok()).collect();
            let column = |f: &dyn Fn(&CellMetrics) -> f64| mean_std(&ok.iter().map(|m| f(m)).collect::<Vec<_>>());
            let (final_train_mean, final_train_std) = column(&|m| m.final_train);
            let (final_test_mean, final_test_std) = column(&|m| m.final_test);
            let eff: Vec<f64> = ok.iter().map(|m| m.effective_privacy.effective_epsilon).collect();
            let eff_mean = if eff.iter().any(|e| e.is_infinite()) {
                f64::INFINITY
            } else {
                mean_std(&eff).0
            };
            let excess: Option<Vec<f64>> = ok.iter().map(|m| m.excess_risk).collect();
            let (excess_risk_mean, excess_risk_std) = match excess {
                Some(v) if !v.is_empty() => {
                    let (m, s) = mean_std(&v);
                    (Some(m), Some(s))
                }
                _ => (None, None),
            };
            Aggregate {
                algorithm,
                epsilon,
                seeds_ok: ok.len(),
                seeds_failed: members.len() - ok.len(),
                final_train_mean,
                final_train_std,
                final_test_mean,
                final_test_std,
                excess_risk_mean,
                excess_risk_std,
                effective_epsilon_mean: eff_mean,
            }
        })
        .collect()
}
