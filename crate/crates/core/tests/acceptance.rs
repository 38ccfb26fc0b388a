//! Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.
//!
//! Dataset counts need the raw files; point `DP_RELU_CALIFORNIA`,
//! `DP_RELU_GAS_TURBINE` (a CSV file or a directory of yearly CSVs) and
//! `DP_RELU_WINE` at them. Missing files are reported as SKIP.

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use dp_relu::attack::membership_experiment;
use dp_relu::datagen::{generate_dataset, CovarianceSpec, Design, GroundTruth};
use dp_relu::experiments::{
    fit_loglog_slope, load_csv, run_experiment, write_results, ExperimentConfig, RunResult,
};
use dp_relu::model::{excess_risk, excess_risk_estimate, Dataset, ModelVector};
use dp_relu::numeric::norm;
use dp_relu::privacy::{calibrate_zcdp_multiplier, zcdp_to_approx_dp, PrivacyParams, Regime};
use dp_relu::rng::{stream, Purpose};
use dp_relu::threshold::{private_count_slack, threshold_search, ThresholdParams};
use dp_relu::trainers::{
    epoch_order, run_dp_glmtron, run_dp_mbglmtron, run_dp_sgd, run_glmtron, run_nonprivate, Algorithm,
    GradientRule, TrainTrace, TrainerConfig,
};
use rand::Rng;
use rand_distr::StandardNormal;

enum Verdict {
    Pass,
    Fail,
    Skip,
}

struct Report {
    verdict: Verdict,
    detail: String,
}

impl Report {
    fn check(ok: bool, detail: String) -> Self {
        let verdict = if ok { Verdict::Pass } else { Verdict::Fail };
        Self { verdict, detail }
    }
}

type Criterion = (&'static str, u64, fn() -> Report);

fn main() {
    let criteria: [Criterion; 10] = [
        ("calibration exactness", 1, calibration_exactness),
        ("threshold guarantee", 30, threshold_guarantee),
        ("noise-off equivalence", 10, noise_off_equivalence),
        ("non-private rate", 60, nonprivate_rate),
        ("epsilon monotonicity", 300, epsilon_monotonicity),
        ("algorithm ordering", 300, algorithm_ordering),
        ("privacy-cost scaling", 300, privacy_cost_scaling),
        ("risk inequality", 120, risk_inequality),
        ("attack behaviour", 120, attack_behaviour),
        ("determinism and io", 60, determinism_and_io),
    ];
    let mut failed = 0;
    for (i, (name, budget, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let mut report = run();
        let elapsed = start.elapsed();
        if elapsed > Duration::from_secs(*budget) && matches!(report.verdict, Verdict::Pass) {
            report.verdict = Verdict::Fail;
            report.detail.push_str("; over the runtime budget");
        }
        let tag = match report.verdict {
            Verdict::Pass => "PASS",
            Verdict::Fail => {
                failed += 1;
                "FAIL"
            }
            Verdict::Skip => "SKIP",
        };
        println!(
            "criterion {:>2} [{tag}] {name}: {} ({:.1}s of {budget}s)",
            i + 1,
            report.detail,
            elapsed.as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

fn calibration_exactness() -> Report {
    let mut worst_f = 0.0f64;
    let mut worst_eps = 0.0f64;
    let mut overshoots = 0;
    for i in 0..10 {
        let eps = 0.01 * 1000f64.powf(i as f64 / 9.0);
        for k in 3..8 {
            let delta = 10f64.powi(-k);
            let log_inv = (1.0 / delta).ln();
            let expected_f = if eps <= log_inv {
                (8.0 * log_inv).sqrt() / eps
            } else {
                2.0 * (log_inv + eps).sqrt() / eps
            };
            let f = calibrate_zcdp_multiplier(eps, delta).unwrap();
            worst_f = worst_f.max(rel_err(f, expected_f));
            let rho = 1.0 / (f * f);
            let back = zcdp_to_approx_dp(rho, delta).unwrap();
            worst_eps = worst_eps.max(rel_err(back, rho + 2.0 * (rho * log_inv).sqrt()));
            if back > eps {
                overshoots += 1;
            }
        }
    }
    Report::check(
        worst_f <= 1e-12 && worst_eps <= 1e-12 && overshoots == 0,
        format!("50 grid points, max rel err multiplier {worst_f:.1e}, conversion {worst_eps:.1e}, round-trip overshoots {overshoots}"),
    )
}

fn threshold_guarantee() -> Report {
    // public mode with exact counts
    let mut rng = stream(2, Purpose::Diagnostics, 0);
    let mut public_violations = 0;
    for _ in 0..1000 {
        let m = rng.random_range(4..=64);
        let residuals: Vec<f64> = (0..m).map(|_| 10f64.powf(rng.random_range(-4.0..4.0))).collect();
        let delta = 2f64.powi(rng.random_range(-12..0));
        let upsilon = delta * 2f64.powf(rng.random_range(0.0..30.0));
        let params = ThresholdParams::new(upsilon, delta, 0.0, true).unwrap();
        let out = threshold_search(&residuals, &params, &mut rng).unwrap();
        let count = |s: f64| residuals.iter().filter(|&&r| r <= s).count();
        let on_grid = out.index <= params.steps() && out.value == params.grid_value(out.index);
        let fits = count(out.value) >= m || out.value == params.grid_cap();
        let minimal = out.value <= delta || out.exhausted || count(out.value / 2.0) < m;
        if !(on_grid && fits && minimal) {
            public_violations += 1;
        }
    }

    // private mode: both count conditions as the utility statement gives them
    let (eps, delta, b_x) = (1.0, 1e-5, 0.05);
    let f = calibrate_zcdp_multiplier(eps, delta).unwrap();
    let params = ThresholdParams::new(1024.0, 1.0, f, false).unwrap();
    let slack = private_count_slack(&params, b_x);
    let m = 2000;
    let trials = 10_000;
    let (mut both, mut upper_variant) = (0, 0);
    for t in 0..trials {
        let mut data_rng = stream(t, Purpose::Data, 0);
        let scale = 10f64.powf(data_rng.random_range(0.0..2.0));
        let residuals: Vec<f64> = (0..m)
            .map(|_| scale * data_rng.sample::<f64, _>(StandardNormal).abs())
            .collect();
        let mut noise_rng = stream(t, Purpose::ThresholdNoise, 0);
        let s = threshold_search(&residuals, &params, &mut noise_rng).unwrap().value;
        let count = |level: f64| residuals.iter().filter(|&&r| r <= level).count() as f64;
        let mf = m as f64;
        let lower = count(s) >= mf - slack;
        let below = count((s / 2.0).max(params.delta_grid));
        if lower && below < mf - slack {
            both += 1;
        }
        if lower && below < mf + slack {
            upper_variant += 1;
        }
    }
    let freq = both as f64 / trials as f64;
    let variant = upper_variant as f64 / trials as f64;
    Report::check(
        public_violations == 0 && freq >= 1.0 - b_x,
        format!(
            "public violations {public_violations}/1000; private frequency {freq:.4} (need >= {:.2}, \
             slack {slack:.1} at m={m}); diagnostic with second condition '< m + slack': {variant:.4}",
            1.0 - b_x
        ),
    )
}

fn same_bits(a: &ModelVector, b: &ModelVector) -> bool {
    a.dim() == b.dim() && a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits())
}

fn same_trajectory(private: &TrainTrace, reference: &TrainTrace) -> bool {
    private.iterates.len() == reference.iterates.len()
        && private.iterates.iter().zip(&reference.iterates).all(|(a, b)| same_bits(a, b))
        && same_bits(&private.final_average, &reference.final_average)
        && same_bits(&private.final_iterate, &reference.final_iterate)
}

fn concat(parts: Vec<Dataset>, dim: usize) -> Dataset {
    Dataset::new(dim, parts.into_iter().flat_map(Dataset::into_examples).collect()).unwrap()
}

fn noise_off_equivalence() -> Report {
    let mut rng = stream(3, Purpose::Diagnostics, 0);
    let unbinding = ThresholdParams::new(1e12, 1e12, 0.0, true).unwrap();
    let mut mismatches = Vec::new();
    for trial in 0..10u64 {
        let d = rng.random_range(2..=6);
        let n = rng.random_range(60..=200);
        let gt = GroundTruth::isotropic(d, 1.0, 0.3, Design::Gaussian, trial).unwrap();
        let data = generate_dataset(&gt, n, trial).unwrap();
        let cfg = TrainerConfig {
            eta: rng.random_range(0.01..0.2),
            batch: rng.random_range(1..=8),
            estimating: rng.random_range(1..=8),
            epochs: rng.random_range(1..=3),
            seed: trial,
            trace_h: d as f64,
            threshold: unbinding,
            ..TrainerConfig::default()
        };
        let once = TrainerConfig {
            shuffle: false,
            epochs: 1,
            ..cfg.clone()
        };
        let orders: Vec<Dataset> = (0..cfg.epochs).map(|e| epoch_order(&data, &cfg, e)).collect();

        // gradient samples of each block, in the order the minibatch trainers use them
        let (b, m) = (cfg.batch, cfg.estimating);
        let gradient_part = |ordered: &Dataset| {
            let kept: Vec<usize> = (0..ordered.len() / (b + m))
                .flat_map(|k| (k * (b + m) + m)..((k + 1) * (b + m)))
                .collect();
            ordered.select(&kept)
        };
        let mb_reference = concat(orders.iter().map(gradient_part).collect(), d);
        let zcdp_off = PrivacyParams::with_multiplier(1.0, 1e-5, 0.0, Regime::Zcdp).unwrap();
        let mb = run_dp_mbglmtron(&data, &cfg, &zcdp_off).unwrap();
        let mb_ref = run_nonprivate(&mb_reference, &once, GradientRule::Glmtron).unwrap();
        if !same_trajectory(&mb, &mb_ref) {
            mismatches.push(format!("dp_mbglmtron#{trial}"));
        }
        let sgd = run_dp_sgd(&data, &cfg, &zcdp_off).unwrap();
        let sgd_ref = run_nonprivate(&mb_reference, &once, GradientRule::Sgd).unwrap();
        if !same_trajectory(&sgd, &sgd_ref) {
            mismatches.push(format!("dp_sgd#{trial}"));
        }

        let single = TrainerConfig { batch: 1, ..once.clone() };
        let public_set = generate_dataset(&gt, m, trial + 1000).unwrap();
        let shuffle_off = PrivacyParams::with_multiplier(1.0, 1e-5, 0.0, Regime::ShuffleAmplified).unwrap();
        let glm = run_dp_glmtron(&data, &public_set, &cfg, &shuffle_off).unwrap();
        let glm_ref = run_glmtron(&concat(orders, d), &single).unwrap();
        if !same_trajectory(&glm, &glm_ref) {
            mismatches.push(format!("dp_glmtron#{trial}"));
        }
    }
    Report::check(
        mismatches.is_empty(),
        format!("10 configurations x 3 trainers, mismatches: {mismatches:?}"),
    )
}

fn nonprivate_rate() -> Report {
    let (d, n, sigma) = (10, 10_000, 0.1);
    let gt = GroundTruth::isotropic(d, 1.0, sigma, Design::Gaussian, 7).unwrap();
    let mut cfg = ExperimentConfig::synthetic(gt, n);
    cfg.algorithms = vec![Algorithm::Glmtron];
    cfg.epsilons = vec![];
    let result = run_experiment(&cfg, 0).unwrap();
    let agg = result.aggregate(Algorithm::Glmtron, None).unwrap();
    let excess = agg.excess_risk_mean.unwrap();
    let bound = 5.0 * sigma * sigma * d as f64 / n as f64;
    Report::check(
        excess <= bound && agg.seeds_failed == 0,
        format!("mean excess risk {excess:.3e} over 5 seeds, bound {bound:.1e}"),
    )
}

/// Shared setting of the ordering criteria: d=8, N=20000, sigma=0.5, delta=N^-1.1, 5 seeds.
fn ordering_grid(algorithms: Vec<Algorithm>, epsilons: Vec<f64>) -> RunResult {
    let d = 8;
    let gt = GroundTruth::isotropic(d, 1.0, 0.5, Design::Gaussian, 7).unwrap();
    let mut cfg = ExperimentConfig::synthetic(gt, 20_000);
    cfg.algorithms = algorithms;
    cfg.epsilons = epsilons;
    cfg.auto_constants = false;
    cfg.public_size = Some(1500);
    cfg.eval.mc_samples = 20_000;
    cfg.trainer = TrainerConfig {
        eta: 0.5,
        batch: 5000,
        estimating: 1500,
        epochs: 300,
        trace_h: d as f64,
        c2: 1.0,
        a: 0.0,
        threshold: ThresholdParams::new(8.0, 0.125, 0.0, true).unwrap(),
        record_iterates: false,
        ..TrainerConfig::default()
    };
    cfg.trainer_overrides.insert(
        Algorithm::DpGlmtron,
        TrainerConfig {
            eta: 0.001,
            batch: 1,
            epochs: 1,
            ..cfg.trainer.clone()
        },
    );
    run_experiment(&cfg, 0).unwrap()
}

fn train_mean(result: &RunResult, algorithm: Algorithm, eps: f64) -> f64 {
    let agg = result.aggregate(algorithm, Some(eps)).unwrap();
    assert_eq!(agg.seeds_failed, 0, "{algorithm} at {eps} had failing seeds");
    agg.final_train_mean
}

fn epsilon_monotonicity() -> Report {
    let result = ordering_grid(vec![Algorithm::DpMbglmtron], vec![0.05, 0.2, 0.5]);
    let losses: Vec<f64> = [0.05, 0.2, 0.5]
        .iter()
        .map(|&e| train_mean(&result, Algorithm::DpMbglmtron, e))
        .collect();
    let ok = losses.windows(2).all(|w| w[1] <= 1.1 * w[0]);
    Report::check(
        ok,
        format!("DP-MBGLMtron mean final train loss at eps 0.05/0.2/0.5: {losses:.5?}"),
    )
}

fn algorithm_ordering() -> Report {
    let result = ordering_grid(
        vec![Algorithm::DpMbglmtron, Algorithm::DpGlmtron, Algorithm::DpSgd],
        vec![0.2],
    );
    let mb = train_mean(&result, Algorithm::DpMbglmtron, 0.2);
    let glm = train_mean(&result, Algorithm::DpGlmtron, 0.2);
    let sgd = train_mean(&result, Algorithm::DpSgd, 0.2);
    Report::check(
        mb <= glm && glm <= sgd,
        format!("eps 0.2 mean final train loss: DP-MBGLMtron {mb:.5}, DP-GLMtron {glm:.5}, DP-SGD {sgd:.5}"),
    )
}

fn privacy_cost_scaling() -> Report {
    let (d, n, seeds) = (8, 20_000, 10u64);
    let gt = GroundTruth::isotropic(d, 1.0, 0.1, Design::Gaussian, 7).unwrap();
    let delta = (n as f64).powf(-1.1);
    let epsilons = [0.1, 0.2, 0.4, 0.8];
    let base = TrainerConfig {
        eta: 0.5,
        batch: 2000,
        estimating: 1000,
        epochs: 1,
        trace_h: d as f64,
        c2: 1.0,
        a: 0.0,
        threshold: ThresholdParams::new(4.0, 0.0625, 0.0, true).unwrap(),
        ..TrainerConfig::default()
    };
    let noise_off = PrivacyParams::with_multiplier(1.0, delta, 0.0, Regime::Zcdp).unwrap();
    let mut attributable = vec![0.0; epsilons.len()];
    for seed in 0..seeds {
        let data = generate_dataset(&gt, n, seed).unwrap();
        let cfg = TrainerConfig { seed, ..base.clone() };
        let excess = |privacy: &PrivacyParams| {
            let w = run_dp_mbglmtron(&data, &cfg, privacy).unwrap().final_average;
            excess_risk(&w, gt.w_star(), &gt, 100_000, seed).unwrap()
        };
        let floor = excess(&noise_off);
        for (acc, &eps) in attributable.iter_mut().zip(&epsilons) {
            *acc += (excess(&PrivacyParams::zcdp(eps, delta).unwrap()) - floor) / seeds as f64;
        }
    }
    let shown: Vec<String> = attributable.iter().map(|a| format!("{a:.3e}")).collect();
    let points: Vec<(f64, f64)> = epsilons.iter().zip(&attributable).map(|(e, a)| (1.0 / e, *a)).collect();
    match fit_loglog_slope(&points) {
        Ok(slope) => Report::check(
            (1.3..=2.7).contains(&slope),
            format!("slope {slope:.3} of privacy-attributable excess {shown:?} vs 1/eps"),
        ),
        Err(e) => Report::check(false, format!("no slope: {e}; excess {shown:?}")),
    }
}

fn unit_ball_point(d: usize, rng: &mut impl Rng) -> Vec<f64> {
    let dir: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
    let r = rng.random::<f64>().powf(1.0 / d as f64) / norm(&dir);
    dir.iter().map(|v| v * r).collect()
}

fn risk_inequality() -> Report {
    let d = 5;
    let mut rng = stream(8, Purpose::Diagnostics, 0);
    let (mut literal_fail, mut unscaled_fail) = (0, 0);
    let mut worst_gap = f64::INFINITY;
    for pair in 0..50u64 {
        let w = ModelVector::new(unit_ball_point(d, &mut rng)).unwrap();
        let w_star = ModelVector::new(unit_ball_point(d, &mut rng)).unwrap();
        let gt = GroundTruth::new(w_star.clone(), 0.0, CovarianceSpec::identity(d), Design::Gaussian).unwrap();
        let est = excess_risk_estimate(&w, &w_star, &gt, 100_000, pair).unwrap();
        let quarter = 0.25 * w.sub(&w_star).unwrap().iter().map(|v| v * v).sum::<f64>();
        let gap = est.mean - (quarter - 3.0 * est.std_error);
        worst_gap = worst_gap.min(gap);
        if gap < 0.0 {
            literal_fail += 1;
        }
        // same inequality for the unscaled squared loss
        if 2.0 * est.mean < quarter - 6.0 * est.std_error {
            unscaled_fail += 1;
        }
    }
    Report::check(
        literal_fail == 0,
        format!(
            "pairs violating excess >= |w-w*|^2/4 - 3se: {literal_fail}/50 (worst gap {worst_gap:.3e}); \
             diagnostic with the unscaled loss E(ReLU-ReLU)^2: {unscaled_fail}/50"
        ),
    )
}

fn attack_behaviour() -> Report {
    let (d, n) = (20, 200);
    let gt = GroundTruth::isotropic(d, 1.0, 1.0, Design::Gaussian, 11).unwrap();
    let base = TrainerConfig {
        eta: 0.05,
        trace_h: d as f64,
        c2: 1.0,
        a: 0.0,
        ..TrainerConfig::default()
    };
    let minibatch = TrainerConfig {
        batch: 50,
        estimating: 50,
        threshold: ThresholdParams::new(8.0, 0.125, 0.0, true).unwrap(),
        ..base.clone()
    };
    let privacy = PrivacyParams::zcdp(0.05, (n as f64).powf(-1.1)).unwrap();
    let open = membership_experiment(
        |data, seed| Ok(run_glmtron(data, &TrainerConfig { seed, ..base.clone() })?.final_average),
        &gt,
        n,
        1000,
        20,
        3,
        0,
    )
    .unwrap();
    let private = membership_experiment(
        |data, seed| Ok(run_dp_mbglmtron(data, &TrainerConfig { seed, ..minibatch.clone() }, &privacy)?.final_average),
        &gt,
        n,
        1000,
        20,
        3,
        0,
    )
    .unwrap();
    let unbiased = open.out_mean.abs() <= 3.0 * open.out_se;
    Report::check(
        unbiased && open.separation_z > 3.0 && private.separation_z < open.separation_z,
        format!(
            "GLMtron out_mean {:.2e} (3se {:.2e}), z {:.2}; DP-MBGLMtron eps 0.05 z {:.2}",
            open.out_mean,
            3.0 * open.out_se,
            open.separation_z,
            private.separation_z
        ),
    )
}

fn csv_files(dir: &Path) -> Vec<PathBuf> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map(|rd| rd.filter_map(|e| e.ok().map(|e| e.path())).collect())
        .unwrap_or_default();
    files.retain(|p| p.extension().is_some_and(|x| x == "csv"));
    files.sort();
    files
}

/// `(examples, attributes)` summed over a file or a directory of CSVs.
fn dataset_shape(path: &Path, target: &str, exclude: &[String]) -> Result<(usize, usize), String> {
    let files = if path.is_dir() { csv_files(path) } else { vec![path.to_path_buf()] };
    let mut total = 0;
    let mut dim = None;
    for file in &files {
        let data = load_csv(file, target, exclude).map_err(|e| e.to_string())?;
        total += data.len();
        dim = Some(data.dim());
    }
    dim.map(|d| (total, d)).ok_or_else(|| format!("no CSV files under {}", path.display()))
}

fn read_tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<(String, Vec<u8>)> = Vec::new();
    for sub in [dir.to_path_buf(), dir.join("curves")] {
        for file in csv_files(&sub) {
            let rel = file.strip_prefix(dir).unwrap().display().to_string();
            out.push((rel, std::fs::read(&file).unwrap()));
        }
    }
    out
}

fn determinism_and_io() -> Report {
    let gt = GroundTruth::isotropic(4, 1.0, 0.2, Design::Gaussian, 5).unwrap();
    let mut cfg = ExperimentConfig::synthetic(gt, 2000);
    cfg.algorithms = vec![Algorithm::Glmtron, Algorithm::DpGlmtron, Algorithm::DpMbglmtron, Algorithm::DpSgd];
    cfg.seeds = vec![0, 1];
    cfg.eval.mc_samples = 5000;
    cfg.trainer.batch = 20;
    cfg.trainer.estimating = 20;
    cfg.trainer.epochs = 2;
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for (dir, workers) in dirs.iter().zip([1, 3]) {
        write_results(&run_experiment(&cfg, workers).unwrap(), dir.path()).unwrap();
    }
    let (a, b) = (read_tree(dirs[0].path()), read_tree(dirs[1].path()));
    let identical = !a.is_empty() && a == b;
    let mut detail = format!("two sweeps wrote {} CSV files, byte-identical: {identical}", a.len());

    let expected = [
        ("DP_RELU_CALIFORNIA", "MedHouseVal", vec![], (20640, 8)),
        ("DP_RELU_GAS_TURBINE", "CO", vec!["NOX".to_owned()], (36733, 9)),
        ("DP_RELU_WINE", "quality", vec![], (4898, 11)),
    ];
    let mut counts_ok = true;
    let mut skipped = 0;
    for (var, target, exclude, want) in &expected {
        match std::env::var_os(var).map(PathBuf::from).filter(|p| p.exists()) {
            None => {
                skipped += 1;
                detail.push_str(&format!("; {var} not supplied"));
            }
            Some(path) => {
                let got = dataset_shape(&path, target, exclude);
                counts_ok &= got.as_ref() == Ok(want);
                detail.push_str(&format!("; {var} {got:?} expected {want:?}"));
            }
        }
    }
    if identical && counts_ok && skipped == expected.len() {
        detail.push_str(" (dataset counts skipped)");
        return Report {
            verdict: Verdict::Skip,
            detail,
        };
    }
    Report::check(identical && counts_ok, detail)
}
