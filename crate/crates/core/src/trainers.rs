//! Non-private GLMtron, one-pass DP-GLMtron, DP-MBGLMtron and a DP-SGD baseline.
//!
//! Every trainer starts from `w0 = 0`, re-permutes the data at the start of each
//! epoch (from the `Shuffle` stream of the configured seed) and returns the
//! flat average of the pre-update iterates `w_0 .. w_{T-1}`.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::model::{empirical_risk, glmtron_gradient, sgd_gradient, Dataset, LabeledExample, ModelVector};
use crate::numeric::norm;
use crate::privacy::{
    calibrate_shuffle_multiplier, gaussian_noise, EffectivePrivacy, PrivacyParams, Regime, ZcdpLedger,
};
use crate::rng::{stream, Purpose, StreamRng};
use crate::threshold::{clip_in_place, dp_threshold, make_clip_scale, ClipScale, ThresholdParams};

/// The four training algorithms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Glmtron,
    DpGlmtron,
    DpMbglmtron,
    DpSgd,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [
        Algorithm::Glmtron,
        Algorithm::DpGlmtron,
        Algorithm::DpMbglmtron,
        Algorithm::DpSgd,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Glmtron => "glmtron",
            Algorithm::DpGlmtron => "dp_glmtron",
            Algorithm::DpMbglmtron => "dp_mbglmtron",
            Algorithm::DpSgd => "dp_sgd",
        }
    }

    pub fn is_private(self) -> bool {
        self != Algorithm::Glmtron
    }

    /// Calibration regime this algorithm is analysed under.
    pub fn regime(self) -> Regime {
        match self {
            Algorithm::DpGlmtron => Regime::ShuffleAmplified,
            _ => Regime::Zcdp,
        }
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == s.trim().to_ascii_lowercase().replace('-', "_"))
            .ok_or_else(|| {
                Error::invalid(format!(
                    "unknown algorithm {s:?}; expected glmtron, dp_glmtron, dp_mbglmtron or dp_sgd"
                ))
            })
    }
}

/// Per-example update direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientRule {
    /// `x (relu(<x,w>) - y)`.
    Glmtron,
    /// As above, gated by `1[<x,w> > 0]`.
    Sgd,
}

impl GradientRule {
    fn apply(self, w: &ModelVector, ex: &LabeledExample) -> Result<Vec<f64>> {
        match self {
            GradientRule::Glmtron => glmtron_gradient(w, ex),
            GradientRule::Sgd => sgd_gradient(w, ex),
        }
    }
}

/// Hyperparameters shared by all trainers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainerConfig {
    pub eta: f64,
    pub epochs: usize,
    /// Gradient samples per update (1 for the one-pass trainers).
    pub batch: usize,
    /// Estimating samples per block for the private threshold search.
    pub estimating: usize,
    pub seed: u64,
    /// Clip-scale constants: `s = sqrt(2 alpha trace_h) c2 ln(N)^{2a} gamma`.
    pub alpha: f64,
    pub trace_h: f64,
    pub c2: f64,
    pub a: f64,
    /// Search range; the noise multiplier and public flag are set by each trainer.
    pub threshold: ThresholdParams,
    /// Re-permute the data at the start of every epoch.
    pub shuffle: bool,
    /// DP-GLMtron only: search once per epoch instead of before every step.
    pub cache_threshold: bool,
    /// Keep every iterate in the trace (needed for tail averages).
    pub record_iterates: bool,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            eta: 0.05,
            epochs: 1,
            batch: 1,
            estimating: 1,
            seed: 0,
            alpha: 3.0,
            trace_h: 1.0,
            c2: 2.0,
            a: 0.5,
            threshold: ThresholdParams {
                upsilon: 64.0,
                delta_grid: 1.0 / 1024.0,
                noise_multiplier: 0.0,
                public: true,
            },
            shuffle: true,
            cache_threshold: false,
            record_iterates: true,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return Err(Error::invalid(format!("step size must be finite and >= 0, got {}", self.eta)));
        }
        if self.epochs == 0 || self.batch == 0 || self.estimating == 0 {
            return Err(Error::invalid("epochs, batch and estimating size must be at least 1"));
        }
        self.threshold.validate()
    }

    /// `m = max(1, ceil(b/10))`.
    pub fn default_estimating(batch: usize) -> usize {
        batch.div_ceil(10).max(1)
    }

    /// `eta = 1 / (2 R_x^2)`.
    pub fn default_eta(radius_sq: f64) -> f64 {
        0.5 / radius_sq
    }
}

/// Loss of the running iterate average at an evaluation point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: usize,
    pub train_loss: f64,
    pub test_loss: Option<f64>,
}

/// Running iterate average at an evaluation point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub step: usize,
    pub average: ModelVector,
}

/// Everything a training run produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub algorithm: Algorithm,
    /// `w_0 .. w_T` (empty unless iterates were recorded).
    pub iterates: Vec<ModelVector>,
    pub final_iterate: ModelVector,
    /// Clip level used at each step (empty for non-private runs).
    pub thresholds: Vec<ClipScale>,
    /// `‖eta · (mean clipped gradient)‖` per step, before noise.
    pub update_norms: Vec<f64>,
    /// Number of gradients rescaled by clipping at each step.
    pub clipped: Vec<u32>,
    pub checkpoints: Vec<Checkpoint>,
    pub losses: Vec<LossRecord>,
    pub final_average: ModelVector,
    pub steps: usize,
    pub effective_privacy: EffectivePrivacy,
}

impl TrainTrace {
    /// Fraction of steps where at least one gradient was rescaled.
    pub fn fraction_steps_clipped(&self) -> f64 {
        if self.clipped.is_empty() {
            return 0.0;
        }
        self.clipped.iter().filter(|&&c| c > 0).count() as f64 / self.clipped.len() as f64
    }

    /// Fill `test_loss` on every record from the stored checkpoints.
    pub fn attach_test_losses(&mut self, test: &Dataset) -> Result<()> {
        for (rec, cp) in self.losses.iter_mut().zip(&self.checkpoints) {
            rec.test_loss = Some(empirical_risk(&cp.average, test)?);
        }
        Ok(())
    }

    pub fn final_train_loss(&self) -> Option<f64> {
        self.losses.last().map(|r| r.train_loss)
    }

    pub fn final_test_loss(&self) -> Option<f64> {
        self.losses.last().and_then(|r| r.test_loss)
    }
}

/// Mean of `w_start .. w_{T-1}`; `start = 0` is the default returned average.
pub fn average_iterates(trace: &TrainTrace, start: usize) -> Result<ModelVector> {
    let t = trace.steps;
    if trace.iterates.len() != t + 1 {
        return Err(Error::invalid("trace does not hold the iterates (record_iterates was off)"));
    }
    if start >= t {
        return Err(Error::invalid(format!("tail start {start} out of range for {t} steps")));
    }
    let dim = trace.final_iterate.dim();
    let mut sum = vec![0.0; dim];
    for w in &trace.iterates[start..t] {
        sum.iter_mut().zip(w.iter()).for_each(|(s, wi)| *s += wi);
    }
    let count = (t - start) as f64;
    ModelVector::new(sum.into_iter().map(|s| s / count).collect())
}

/// Uniformly random reordering (Fisher-Yates).
pub fn permute(data: &Dataset, rng: &mut StreamRng) -> Dataset {
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(rng);
    data.select(&order)
}

/// The order the trainers see in `epoch`.
pub fn epoch_order(data: &Dataset, cfg: &TrainerConfig, epoch: usize) -> Dataset {
    if cfg.shuffle {
        permute(data, &mut stream(cfg.seed, Purpose::Shuffle, epoch as u64))
    } else {
        data.clone()
    }
}

/// Collects iterates, the running average and checkpoints.
struct Recorder {
    iterates: Option<Vec<ModelVector>>,
    sum: Vec<f64>,
    count: usize,
    steps_per_epoch: usize,
    total_steps: usize,
    multi_epoch: bool,
    cadence: usize,
    checkpoints: Vec<Checkpoint>,
    thresholds: Vec<ClipScale>,
    update_norms: Vec<f64>,
    clipped: Vec<u32>,
}

impl Recorder {
    fn new(w0: &ModelVector, cfg: &TrainerConfig, steps_per_epoch: usize) -> Self {
        let total_steps = steps_per_epoch * cfg.epochs;
        Self {
            iterates: cfg.record_iterates.then(|| vec![w0.clone()]),
            sum: vec![0.0; w0.dim()],
            count: 0,
            steps_per_epoch,
            total_steps,
            multi_epoch: cfg.epochs > 1,
            cadence: total_steps.div_ceil(100).max(1),
            checkpoints: Vec::new(),
            thresholds: Vec::new(),
            update_norms: Vec::new(),
            clipped: Vec::new(),
        }
    }

    /// Call with `w_t` just before it is updated.
    fn include(&mut self, w: &ModelVector) {
        self.sum.iter_mut().zip(w.iter()).for_each(|(s, wi)| *s += wi);
        self.count += 1;
    }

    fn average(&self) -> ModelVector {
        let n = self.count as f64;
        ModelVector::from_vec_unchecked(self.sum.iter().map(|s| s / n).collect())
    }

    /// Call with `w_{t+1}` after step `t` completes.
    fn after_step(&mut self, w: &ModelVector) {
        if let Some(it) = self.iterates.as_mut() {
            it.push(w.clone());
        }
        let step = self.count;
        let due = if self.multi_epoch {
            step.is_multiple_of(self.steps_per_epoch)
        } else {
            step.is_multiple_of(self.cadence) || step == self.total_steps
        };
        if due {
            self.checkpoints.push(Checkpoint {
                step,
                average: self.average(),
            });
        }
    }

    fn finish(
        self,
        algorithm: Algorithm,
        w: ModelVector,
        train: &Dataset,
        effective_privacy: EffectivePrivacy,
    ) -> Result<TrainTrace> {
        if !w.is_finite() {
            return Err(Error::NonFinite(format!("{algorithm} diverged: final iterate is not finite")));
        }
        let final_average = self.average();
        let losses = self
            .checkpoints
            .iter()
            .map(|cp| {
                Ok(LossRecord {
                    step: cp.step,
                    train_loss: empirical_risk(&cp.average, train)?,
                    test_loss: None,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(TrainTrace {
            algorithm,
            iterates: self.iterates.unwrap_or_default(),
            final_iterate: w,
            thresholds: self.thresholds,
            update_norms: self.update_norms,
            clipped: self.clipped,
            checkpoints: self.checkpoints,
            losses,
            final_average,
            steps: self.total_steps,
            effective_privacy,
        })
    }
}

fn check_train_inputs(data: &Dataset, cfg: &TrainerConfig) -> Result<()> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(())
}

/// Non-private GLMtron: consecutive batches of `cfg.batch` examples, no clipping or noise.
pub fn run_glmtron(data: &Dataset, cfg: &TrainerConfig) -> Result<TrainTrace> {
    run_nonprivate(data, cfg, GradientRule::Glmtron)
}

/// Non-private minibatch training with the chosen update direction.
/// Leftover examples that do not fill a batch are dropped for that epoch.
pub fn run_nonprivate(data: &Dataset, cfg: &TrainerConfig, rule: GradientRule) -> Result<TrainTrace> {
    check_train_inputs(data, cfg)?;
    let b = cfg.batch;
    let steps_per_epoch = data.len() / b;
    if steps_per_epoch == 0 {
        return Err(Error::invalid(format!("batch {b} exceeds the {} available examples", data.len())));
    }
    let mut w = ModelVector::zeros(data.dim());
    let mut rec = Recorder::new(&w, cfg, steps_per_epoch);
    let mut sum = vec![0.0; data.dim()];
    for epoch in 0..cfg.epochs {
        let ordered = epoch_order(data, cfg, epoch);
        for batch in ordered.examples().chunks_exact(b) {
            rec.include(&w);
            sum.fill(0.0);
            for ex in batch {
                let g = rule.apply(&w, ex)?;
                sum.iter_mut().zip(&g).for_each(|(s, gi)| *s += gi);
            }
            let w_mut = w.as_mut_slice();
            for (wi, si) in w_mut.iter_mut().zip(&sum) {
                *wi -= cfg.eta * (si / b as f64);
            }
            rec.after_step(&w);
        }
    }
    let algorithm = match rule {
        GradientRule::Glmtron => Algorithm::Glmtron,
        GradientRule::Sgd => Algorithm::DpSgd,
    };
    rec.finish(algorithm, w, data, EffectivePrivacy::none(cfg.epochs))
}

/// One-pass DP-GLMtron. The clip level before each step is the exact-count
/// threshold search on `public_set` at the current iterate.
pub fn run_dp_glmtron(
    data: &Dataset,
    public_set: &Dataset,
    cfg: &TrainerConfig,
    privacy: &PrivacyParams,
) -> Result<TrainTrace> {
    check_train_inputs(data, cfg)?;
    privacy.validate()?;
    if public_set.is_empty() {
        return Err(Error::invalid("the public estimating set is empty"));
    }
    check_dim(data.dim(), public_set.dim())?;
    if privacy.regime != Regime::ShuffleAmplified {
        return Err(Error::invalid("DP-GLMtron is calibrated in the shuffle-amplified regime"));
    }
    let threshold = ThresholdParams {
        public: true,
        noise_multiplier: 0.0,
        ..cfg.threshold
    };
    let f = privacy.noise_multiplier;
    let dim = data.dim();
    let mut w = ModelVector::zeros(dim);
    let mut rec = Recorder::new(&w, cfg, data.len());
    // public-mode searches draw nothing; the stream only satisfies the signature
    let mut search_rng = stream(cfg.seed, Purpose::ThresholdNoise, 0);
    for epoch in 0..cfg.epochs {
        let ordered = epoch_order(data, cfg, epoch);
        let mut noise_rng = stream(cfg.seed, Purpose::GradientNoise, epoch as u64);
        let mut cached = None;
        for ex in ordered.iter() {
            let s = match cached {
                Some(s) if cfg.cache_threshold => s,
                _ => dp_threshold(public_set, &w, &threshold, &mut search_rng)?,
            };
            cached = Some(s);
            rec.include(&w);
            let mut g = glmtron_gradient(&w, ex)?;
            let was_clipped = clip_in_place(&mut g, s);
            let noise = gaussian_noise(1.0, dim, &mut noise_rng);
            rec.thresholds.push(ClipScale { s, gamma: s });
            rec.update_norms.push(cfg.eta * norm(&g));
            rec.clipped.push(u32::from(was_clipped));
            let noise_scale = 2.0 * f * s;
            for ((wi, gi), zi) in w.as_mut_slice().iter_mut().zip(&g).zip(&noise) {
                *wi -= cfg.eta * (gi + noise_scale * zi);
            }
            rec.after_step(&w);
        }
    }
    let warning = calibrate_shuffle_multiplier(privacy.epsilon, privacy.delta, data.len(), 1.0)?
        .warning(privacy.epsilon);
    rec.finish(
        Algorithm::DpGlmtron,
        w,
        data,
        EffectivePrivacy::shuffled(privacy, cfg.epochs, warning),
    )
}

/// DP-MBGLMtron: blocks of `m + b` examples; the first `m` feed a noisy
/// threshold search, the remaining `b` a clipped averaged update.
pub fn run_dp_mbglmtron(data: &Dataset, cfg: &TrainerConfig, privacy: &PrivacyParams) -> Result<TrainTrace> {
    run_minibatch(data, cfg, privacy, GradientRule::Glmtron)
}

/// DP-MBGLMtron's block structure and accounting with the gated SGD gradient.
pub fn run_dp_sgd(data: &Dataset, cfg: &TrainerConfig, privacy: &PrivacyParams) -> Result<TrainTrace> {
    run_minibatch(data, cfg, privacy, GradientRule::Sgd)
}

/// Number of blocks per epoch, `floor(N / (b + m))`.
pub fn blocks_per_epoch(n: usize, cfg: &TrainerConfig) -> usize {
    n / (cfg.batch + cfg.estimating)
}

fn run_minibatch(
    data: &Dataset,
    cfg: &TrainerConfig,
    privacy: &PrivacyParams,
    rule: GradientRule,
) -> Result<TrainTrace> {
    check_train_inputs(data, cfg)?;
    privacy.validate()?;
    if privacy.regime != Regime::Zcdp {
        return Err(Error::invalid("minibatch trainers are calibrated in the zCDP regime"));
    }
    let (b, m) = (cfg.batch, cfg.estimating);
    let n = data.len();
    let blocks = blocks_per_epoch(n, cfg);
    if blocks == 0 {
        return Err(Error::invalid(format!("need at least b + m = {} examples, got {n}", b + m)));
    }
    let f = privacy.noise_multiplier;
    let threshold = ThresholdParams {
        public: false,
        noise_multiplier: f,
        ..cfg.threshold
    };
    let dim = data.dim();
    let mut w = ModelVector::zeros(dim);
    let mut rec = Recorder::new(&w, cfg, blocks);
    let mut sum = vec![0.0; dim];
    for epoch in 0..cfg.epochs {
        let ordered = epoch_order(data, cfg, epoch);
        let mut search_rng = stream(cfg.seed, Purpose::ThresholdNoise, epoch as u64);
        let mut noise_rng = stream(cfg.seed, Purpose::GradientNoise, epoch as u64);
        for block in ordered.examples().chunks_exact(b + m) {
            let (estimating, batch) = block.split_at(m);
            let estimating = Dataset::from_parts_unchecked(dim, estimating.to_vec());
            let gamma = dp_threshold(&estimating, &w, &threshold, &mut search_rng)?;
            let scale = make_clip_scale(gamma, cfg.alpha, cfg.trace_h, cfg.c2, cfg.a, n)?;
            rec.include(&w);
            sum.fill(0.0);
            let mut clipped = 0u32;
            for ex in batch {
                let mut g = rule.apply(&w, ex)?;
                clipped += u32::from(clip_in_place(&mut g, scale.s));
                sum.iter_mut().zip(&g).for_each(|(s, gi)| *s += gi);
            }
            let noise = gaussian_noise(1.0, dim, &mut noise_rng);
            let mean: Vec<f64> = sum.iter().map(|s| s / b as f64).collect();
            rec.thresholds.push(scale);
            rec.update_norms.push(cfg.eta * norm(&mean));
            rec.clipped.push(clipped);
            let noise_scale = 2.0 * f * scale.s * cfg.eta / b as f64;
            for ((wi, li), zi) in w.as_mut_slice().iter_mut().zip(&mean).zip(&noise) {
                *wi = *wi - cfg.eta * li - noise_scale * zi;
            }
            rec.after_step(&w);
        }
    }
    let ledger = minibatch_ledger(privacy, &threshold, blocks, cfg.epochs)?;
    let report = EffectivePrivacy::from_ledger(privacy, ledger, cfg.epochs)?;
    let algorithm = match rule {
        GradientRule::Glmtron => Algorithm::DpMbglmtron,
        GradientRule::Sgd => Algorithm::DpSgd,
    };
    rec.finish(algorithm, w, data, report)
}

/// zCDP spent by the minibatch trainers.
///
/// Each block composes its threshold search (`1/(2f^2)`) with one Gaussian
/// update of sensitivity `2 eta s / b` and noise `2 f s eta / b` (another
/// `1/(2f^2)`). Blocks within an epoch touch disjoint examples and compose in
/// parallel; epochs compose sequentially.
pub fn minibatch_ledger(
    privacy: &PrivacyParams,
    threshold: &ThresholdParams,
    blocks: usize,
    epochs: usize,
) -> Result<ZcdpLedger> {
    let gradient_rho = if privacy.noise_multiplier > 0.0 {
        0.5 / privacy.noise_multiplier.powi(2)
    } else {
        f64::INFINITY
    };
    let block = ZcdpLedger::new()
        .compose_sequential(threshold.rho_cost())?
        .compose_sequential(gradient_rho)?;
    let epoch = ZcdpLedger::compose_parallel(std::iter::repeat_n(block, blocks));
    (0..epochs).try_fold(ZcdpLedger::new(), |acc, _| acc.compose_sequential(epoch.rho_total))
}
