//! Noise calibration and privacy accounting.
//!
//! Two regimes are supported. The zCDP regime covers DP-MBGLMtron and DP-SGD:
//! every block costs `1/f^2` in zCDP, disjoint blocks compose in parallel and
//! epochs compose sequentially. The shuffle-amplified regime covers the one-pass
//! DP-GLMtron, whose multiplier scales like `log(N/delta) / (eps * sqrt(N))`.
//! Logarithms are natural throughout.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which calibration and accounting rule governs a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    ShuffleAmplified,
    Zcdp,
}

/// `(epsilon, delta, f, regime)`.
///
/// A multiplier of zero switches noise off; such a run reports an infinite
/// effective epsilon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacyParams {
    pub epsilon: f64,
    pub delta: f64,
    pub noise_multiplier: f64,
    pub regime: Regime,
}

fn check_epsilon_delta(epsilon: f64, delta: f64) -> Result<()> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::invalid(format!("epsilon must be positive, got {epsilon}")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::invalid(format!("delta must lie in (0, 1), got {delta}")));
    }
    Ok(())
}

impl PrivacyParams {
    /// zCDP regime with `f` from [`calibrate_zcdp_multiplier`].
    pub fn zcdp(epsilon: f64, delta: f64) -> Result<Self> {
        Ok(Self {
            epsilon,
            delta,
            noise_multiplier: calibrate_zcdp_multiplier(epsilon, delta)?,
            regime: Regime::Zcdp,
        })
    }

    /// Shuffle-amplified regime with `f` from [`calibrate_shuffle_multiplier`].
    pub fn shuffle(epsilon: f64, delta: f64, n: usize, c3: f64) -> Result<(Self, ShuffleCalibration)> {
        let cal = calibrate_shuffle_multiplier(epsilon, delta, n, c3)?;
        Ok((
            Self {
                epsilon,
                delta,
                noise_multiplier: cal.noise_multiplier,
                regime: Regime::ShuffleAmplified,
            },
            cal,
        ))
    }

    /// Explicit multiplier. `f = 0` is accepted and disables noise.
    pub fn with_multiplier(epsilon: f64, delta: f64, noise_multiplier: f64, regime: Regime) -> Result<Self> {
        check_epsilon_delta(epsilon, delta)?;
        if !(noise_multiplier >= 0.0 && noise_multiplier.is_finite()) {
            return Err(Error::invalid(format!(
                "noise multiplier must be finite and >= 0, got {noise_multiplier}"
            )));
        }
        Ok(Self {
            epsilon,
            delta,
            noise_multiplier,
            regime,
        })
    }

    /// Noise switched off; used for degenerate-consistency checks.
    pub fn noiseless(regime: Regime) -> Self {
        Self {
            epsilon: 1.0,
            delta: 0.5,
            noise_multiplier: 0.0,
            regime,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_epsilon_delta(self.epsilon, self.delta)?;
        if !(self.noise_multiplier >= 0.0 && self.noise_multiplier.is_finite()) {
            return Err(Error::invalid("noise multiplier must be finite and >= 0"));
        }
        if self.regime == Regime::Zcdp && self.noise_multiplier > 0.0 {
            let rho = 1.0 / self.noise_multiplier.powi(2);
            let eps = zcdp_to_approx_dp(rho, self.delta)?;
            if eps > self.epsilon * (1.0 + 1e-12) {
                return Err(Error::invalid(format!(
                    "multiplier {} only gives epsilon {eps:.6} > requested {}",
                    self.noise_multiplier, self.epsilon
                )));
            }
        }
        Ok(())
    }

    /// zCDP cost `1/f^2` of one pass (infinite when noise is off).
    pub fn rho_per_pass(&self) -> f64 {
        if self.noise_multiplier > 0.0 {
            1.0 / self.noise_multiplier.powi(2)
        } else {
            f64::INFINITY
        }
    }
}

/// Noise multiplier for the zCDP regime.
///
/// Returns `sqrt(8 log(1/delta)) / eps` when `eps <= log(1/delta)` and
/// `2 sqrt(log(1/delta) + eps) / eps` otherwise. Both satisfy
/// `zcdp_to_approx_dp(1/f^2, delta) <= eps`.
pub fn calibrate_zcdp_multiplier(epsilon: f64, delta: f64) -> Result<f64> {
    check_epsilon_delta(epsilon, delta)?;
    let log_inv_delta = (1.0 / delta).ln();
    Ok(if epsilon <= log_inv_delta {
        (8.0 * log_inv_delta).sqrt() / epsilon
    } else {
        2.0 * (log_inv_delta + epsilon).sqrt() / epsilon
    })
}

/// Result of the shuffle-regime calibration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShuffleCalibration {
    pub noise_multiplier: f64,
    /// `sqrt(log(n/delta) / n)`, the largest epsilon the amplification argument covers.
    pub epsilon_bound: f64,
    /// Set when the requested epsilon exceeds `epsilon_bound`.
    pub outside_regime: bool,
}

impl ShuffleCalibration {
    pub fn warning(&self, epsilon: f64) -> Option<String> {
        self.outside_regime.then(|| {
            format!(
                "epsilon {epsilon} exceeds the shuffle-amplification regime bound {:.6}; \
                 the multiplier formula is applied without its guarantee",
                self.epsilon_bound
            )
        })
    }
}

/// `f = c3 * log(n/delta) / (eps * sqrt(n))`, flagging `eps > sqrt(log(n/delta)/n)`.
pub fn calibrate_shuffle_multiplier(epsilon: f64, delta: f64, n: usize, c3: f64) -> Result<ShuffleCalibration> {
    check_epsilon_delta(epsilon, delta)?;
    if n == 0 {
        return Err(Error::invalid("n must be at least 1"));
    }
    if !(c3 > 0.0 && c3.is_finite()) {
        return Err(Error::invalid(format!("c3 must be positive, got {c3}")));
    }
    let n = n as f64;
    let log_term = (n / delta).ln();
    let epsilon_bound = (log_term / n).sqrt();
    Ok(ShuffleCalibration {
        noise_multiplier: c3 * log_term / (epsilon * n.sqrt()),
        epsilon_bound,
        outside_regime: epsilon > epsilon_bound,
    })
}

/// `eps = rho + 2 sqrt(rho log(1/delta))`.
pub fn zcdp_to_approx_dp(rho: f64, delta: f64) -> Result<f64> {
    if !(rho >= 0.0) {
        return Err(Error::invalid(format!("rho must be >= 0, got {rho}")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::invalid(format!("delta must lie in (0, 1), got {delta}")));
    }
    Ok(rho + 2.0 * (rho * (1.0 / delta).ln()).sqrt())
}

/// Accumulated zCDP cost.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ZcdpLedger {
    pub rho_total: f64,
}

impl ZcdpLedger {
    pub fn new() -> Self {
        Self::default()
    }

    /// Sequential composition: costs add.
    pub fn compose_sequential(self, rho_step: f64) -> Result<Self> {
        ledger_compose_sequential(self, rho_step)
    }

    /// Parallel composition over disjoint data: the most expensive branch counts.
    pub fn compose_parallel<I: IntoIterator<Item = ZcdpLedger>>(branches: I) -> Self {
        let rho_total = branches
            .into_iter()
            .map(|l| l.rho_total)
            .fold(0.0, f64::max);
        Self { rho_total }
    }

    pub fn to_approx_dp(&self, delta: f64) -> Result<f64> {
        zcdp_to_approx_dp(self.rho_total, delta)
    }
}

pub fn ledger_compose_sequential(ledger: ZcdpLedger, rho_step: f64) -> Result<ZcdpLedger> {
    if !(rho_step >= 0.0) {
        return Err(Error::invalid(format!("rho step must be >= 0, got {rho_step}")));
    }
    Ok(ZcdpLedger {
        rho_total: ledger.rho_total + rho_step,
    })
}

/// `d` i.i.d. `N(0, std^2)` draws; zeros when `std == 0`.
pub fn gaussian_noise<R: Rng + ?Sized>(std: f64, d: usize, rng: &mut R) -> Vec<f64> {
    (0..d)
        .map(|_| {
            let z: f64 = rng.sample(StandardNormal);
            std * z
        })
        .collect()
}

/// The privacy actually spent by a finished run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectivePrivacy {
    pub regime: Regime,
    pub nominal_epsilon: f64,
    pub delta: f64,
    pub noise_multiplier: f64,
    pub epochs: usize,
    /// Accumulated zCDP cost (zCDP regime only).
    pub rho_total: Option<f64>,
    /// Epsilon at `delta` after composing all epochs.
    pub effective_epsilon: f64,
    /// Delta paired with `effective_epsilon`.
    pub effective_delta: f64,
    pub warning: Option<String>,
}

impl EffectivePrivacy {
    /// zCDP run: `epochs` sequential passes of the per-pass ledger.
    pub fn from_ledger(params: &PrivacyParams, ledger: ZcdpLedger, epochs: usize) -> Result<Self> {
        let effective_epsilon = if ledger.rho_total.is_finite() {
            ledger.to_approx_dp(params.delta)?
        } else {
            f64::INFINITY
        };
        Ok(Self {
            regime: Regime::Zcdp,
            nominal_epsilon: params.epsilon,
            delta: params.delta,
            noise_multiplier: params.noise_multiplier,
            epochs,
            rho_total: Some(ledger.rho_total),
            effective_epsilon,
            effective_delta: params.delta,
            warning: None,
        })
    }

    /// Shuffle-regime run: one pass spends `(eps, delta)`; passes compose by basic composition.
    pub fn shuffled(params: &PrivacyParams, epochs: usize, warning: Option<String>) -> Self {
        let (effective_epsilon, effective_delta) = if params.noise_multiplier > 0.0 {
            (params.epsilon * epochs as f64, params.delta * epochs as f64)
        } else {
            (f64::INFINITY, params.delta)
        };
        Self {
            regime: Regime::ShuffleAmplified,
            nominal_epsilon: params.epsilon,
            delta: params.delta,
            noise_multiplier: params.noise_multiplier,
            epochs,
            rho_total: None,
            effective_epsilon,
            effective_delta,
            warning,
        }
    }

    /// Report for a non-private run.
    pub fn none(epochs: usize) -> Self {
        Self {
            regime: Regime::Zcdp,
            nominal_epsilon: f64::INFINITY,
            delta: 0.0,
            noise_multiplier: 0.0,
            epochs,
            rho_total: None,
            effective_epsilon: f64::INFINITY,
            effective_delta: 0.0,
            warning: None,
        }
    }
}
