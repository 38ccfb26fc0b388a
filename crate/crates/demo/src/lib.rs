//! Browser bindings: privacy calibration, a traced threshold search and an
//! epsilon sweep of DP-MBGLMtron's excess risk.
//!
//! Every export takes and returns JSON text so the page needs no glue types.
//! The `*_json` functions hold the logic and are callable from native tests.

use dp_relu::datagen::{generate_dataset, Design, GroundTruth};
use dp_relu::model::excess_risk_estimate;
use dp_relu::privacy::{
    calibrate_shuffle_multiplier, calibrate_zcdp_multiplier, zcdp_to_approx_dp, PrivacyParams,
    Regime,
};
use dp_relu::rng::{stream, Purpose};
use dp_relu::threshold::{private_count_slack, threshold_search, ThresholdParams};
use dp_relu::trainers::{run_dp_mbglmtron, TrainerConfig};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

type DemoResult = Result<Value, String>;

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn run(input: &str, f: impl FnOnce(&str) -> DemoResult) -> Result<String, JsValue> {
    f(input)
        .map(|v| v.to_string())
        .map_err(|e| JsValue::from_str(&e))
}

#[derive(Debug, Deserialize)]
#[serde(default)]
pub struct CalibrateRequest {
    pub epsilon: f64,
    pub delta: f64,
    /// Training-set size for the shuffle-regime multiplier.
    pub n: usize,
}

impl Default for CalibrateRequest {
    fn default() -> Self {
        Self {
            epsilon: 1.0,
            delta: 1e-5,
            n: 10_000,
        }
    }
}

pub fn calibrate_json(input: &str) -> DemoResult {
    let req: CalibrateRequest = serde_json::from_str(input).map_err(err)?;
    let f = calibrate_zcdp_multiplier(req.epsilon, req.delta).map_err(err)?;
    let rho = 1.0 / (f * f);
    let shuffle = calibrate_shuffle_multiplier(req.epsilon, req.delta, req.n, 1.0).map_err(err)?;
    Ok(json!({
        "zcdp": {
            "noise_multiplier": f,
            "rho": rho,
            "epsilon_round_trip": zcdp_to_approx_dp(rho, req.delta).map_err(err)?,
        },
        "shuffle": {
            "noise_multiplier": shuffle.noise_multiplier,
            "epsilon_bound": shuffle.epsilon_bound,
            "warning": shuffle.warning(req.epsilon),
        },
    }))
}

#[derive(Debug, Deserialize)]
#[serde(default)]
pub struct ThresholdRequest {
    /// Number of estimating residuals.
    pub m: usize,
    /// Residuals are `scale * |N(0, 1)|`.
    pub scale: f64,
    pub upsilon: f64,
    pub delta_grid: f64,
    /// `None` runs the exact-count search.
    pub epsilon: Option<f64>,
    pub delta: f64,
    pub seed: u64,
}

impl Default for ThresholdRequest {
    fn default() -> Self {
        Self {
            m: 500,
            scale: 3.0,
            upsilon: 1024.0,
            delta_grid: 1.0 / 64.0,
            epsilon: Some(1.0),
            delta: 1e-5,
            seed: 0,
        }
    }
}

pub fn threshold_trace_json(input: &str) -> DemoResult {
    let req: ThresholdRequest = serde_json::from_str(input).map_err(err)?;
    if req.m == 0 || req.m > 100_000 {
        return Err("m must lie in 1..=100000".into());
    }
    let f = match req.epsilon {
        Some(eps) => calibrate_zcdp_multiplier(eps, req.delta).map_err(err)?,
        None => 0.0,
    };
    let params =
        ThresholdParams::new(req.upsilon, req.delta_grid, f, req.epsilon.is_none()).map_err(err)?;
    let mut data_rng = stream(req.seed, Purpose::Data, 0);
    let residuals: Vec<f64> = (0..req.m)
        .map(|_| req.scale * data_rng.sample::<f64, _>(StandardNormal).abs())
        .collect();
    let mut noise_rng = stream(req.seed, Purpose::ThresholdNoise, 0);
    let outcome = threshold_search(&residuals, &params, &mut noise_rng).map_err(err)?;
    let max_residual = residuals.iter().copied().fold(0.0, f64::max);
    Ok(json!({
        "m": req.m,
        "noise_multiplier": f,
        "count_noise_std": params.count_noise_std(),
        "slack": private_count_slack(&params, 0.05),
        "max_residual": max_residual,
        "outcome": outcome,
    }))
}

#[derive(Debug, Deserialize)]
#[serde(default)]
pub struct SweepRequest {
    pub d: usize,
    pub n: usize,
    pub sigma: f64,
    pub epsilons: Vec<f64>,
    pub seeds: u64,
    pub eta: f64,
    pub batch: usize,
    pub estimating: usize,
    pub epochs: usize,
    pub mc_samples: usize,
}

impl Default for SweepRequest {
    fn default() -> Self {
        Self {
            d: 8,
            n: 20_000,
            sigma: 0.1,
            epsilons: vec![0.1, 0.2, 0.4, 0.8],
            seeds: 3,
            eta: 0.5,
            batch: 2000,
            estimating: 1000,
            epochs: 1,
            mc_samples: 20_000,
        }
    }
}

#[derive(Debug, Serialize)]
struct SweepPoint {
    epsilon: Option<f64>,
    excess_risk: f64,
    excess_risk_se: f64,
}

pub fn epsilon_sweep_json(input: &str) -> DemoResult {
    let req: SweepRequest = serde_json::from_str(input).map_err(err)?;
    if req.n > 200_000 || req.d > 200 || req.seeds == 0 || req.seeds > 20 || req.epochs > 50 {
        return Err(
            "keep n <= 200000, d <= 200, 1 <= seeds <= 20 and epochs <= 50 in the browser".into(),
        );
    }
    let gt = GroundTruth::isotropic(req.d, 1.0, req.sigma, Design::Gaussian, 7).map_err(err)?;
    let delta = (req.n as f64).powf(-1.1);
    let base = TrainerConfig {
        eta: req.eta,
        batch: req.batch,
        estimating: req.estimating,
        epochs: req.epochs,
        trace_h: req.d as f64,
        c2: 1.0,
        a: 0.0,
        threshold: ThresholdParams::new(4.0, 1.0 / 16.0, 0.0, true).map_err(err)?,
        record_iterates: false,
        ..TrainerConfig::default()
    };
    let mut budgets: Vec<Option<f64>> = vec![None];
    budgets.extend(req.epsilons.iter().map(|&e| Some(e)));
    let mut points = Vec::new();
    for epsilon in budgets {
        let privacy = match epsilon {
            Some(e) => PrivacyParams::zcdp(e, delta).map_err(err)?,
            None => PrivacyParams::noiseless(Regime::Zcdp),
        };
        let (mut sum, mut var) = (0.0, 0.0);
        for seed in 0..req.seeds {
            let data = generate_dataset(&gt, req.n, seed).map_err(err)?;
            let cfg = TrainerConfig {
                seed,
                ..base.clone()
            };
            let trace = run_dp_mbglmtron(&data, &cfg, &privacy).map_err(err)?;
            let est =
                excess_risk_estimate(&trace.final_average, gt.w_star(), &gt, req.mc_samples, seed)
                    .map_err(err)?;
            sum += est.mean;
            var += est.std_error * est.std_error;
        }
        let k = req.seeds as f64;
        points.push(SweepPoint {
            epsilon,
            excess_risk: sum / k,
            excess_risk_se: var.sqrt() / k,
        });
    }
    Ok(json!({ "delta": delta, "points": points }))
}

/// Noise multipliers for a budget (zCDP and shuffle regimes).
#[wasm_bindgen]
pub fn calibrate(request: &str) -> Result<String, JsValue> {
    run(request, calibrate_json)
}

/// One doubling search over synthetic residuals, with every probe.
#[wasm_bindgen]
pub fn threshold_trace(request: &str) -> Result<String, JsValue> {
    run(request, threshold_trace_json)
}

/// DP-MBGLMtron excess risk against epsilon; the first point is the noise-off run.
#[wasm_bindgen]
pub fn epsilon_sweep(request: &str) -> Result<String, JsValue> {
    run(request, epsilon_sweep_json)
}
