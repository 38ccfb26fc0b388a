//! Norm clipping and the doubling threshold search.
//!
//! The search starts at the grid width `Δ` and doubles until (a possibly
//! noisy count of) the estimating residuals fits under the current level.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{relu, Dataset, ModelVector};
use crate::numeric::{dot, norm};

/// Configuration of the doubling search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdParams {
    /// Domain size: the search never needs to go beyond this.
    pub upsilon: f64,
    /// Discretisation width: the first grid value.
    pub delta_grid: f64,
    /// Noise multiplier for the counts (ignored in public mode).
    pub noise_multiplier: f64,
    /// Counts are exact when set.
    pub public: bool,
}

impl ThresholdParams {
    pub fn new(upsilon: f64, delta_grid: f64, noise_multiplier: f64, public: bool) -> Result<Self> {
        let params = Self {
            upsilon,
            delta_grid,
            noise_multiplier,
            public,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta_grid > 0.0 && self.delta_grid.is_finite()) {
            return Err(Error::invalid(format!(
                "grid width must be positive, got {}",
                self.delta_grid
            )));
        }
        if !(self.upsilon >= self.delta_grid && self.upsilon.is_finite()) {
            return Err(Error::invalid(format!(
                "domain size {} must be finite and >= grid width {}",
                self.upsilon, self.delta_grid
            )));
        }
        if !(self.noise_multiplier >= 0.0 && self.noise_multiplier.is_finite()) {
            return Err(Error::invalid("threshold noise multiplier must be finite and >= 0"));
        }
        if self.steps() > 1000 {
            return Err(Error::invalid("grid is too fine: more than 1000 doublings"));
        }
        Ok(())
    }

    /// `K = ceil(log2(upsilon / delta_grid))`, computed without rounding slop
    /// so that exact powers of two are not pushed one step up.
    pub fn steps(&self) -> u32 {
        let ratio = self.upsilon / self.delta_grid;
        if !(ratio > 1.0) {
            return 0;
        }
        let mut k = ratio.log2().ceil().max(0.0) as u32;
        while k > 0 && self.delta_grid * 2f64.powi(k as i32 - 1) >= self.upsilon {
            k -= 1;
        }
        while self.delta_grid * 2f64.powi(k as i32) < self.upsilon {
            k += 1;
        }
        k
    }

    /// Grid value `Δ·2^i`.
    pub fn grid_value(&self, i: u32) -> f64 {
        self.delta_grid * 2f64.powi(i as i32)
    }

    /// Largest grid value `Δ·2^K >= Υ`.
    pub fn grid_cap(&self) -> f64 {
        self.grid_value(self.steps())
    }

    /// Standard deviation `f·sqrt(K)` of the noise added to each private count.
    pub fn count_noise_std(&self) -> f64 {
        if self.public {
            0.0
        } else {
            self.noise_multiplier * f64::from(self.steps()).sqrt()
        }
    }

    /// zCDP charged for one private search, `1/(2 f^2)`: `K` probes of a
    /// sensitivity-one count each with variance `K f^2`.
    ///
    /// The loop actually runs up to `K + 1` probes; the extra probe is not
    /// charged, matching the accounting the calibration formulas assume.
    pub fn rho_cost(&self) -> f64 {
        if self.public {
            0.0
        } else if self.noise_multiplier > 0.0 {
            0.5 / self.noise_multiplier.powi(2)
        } else {
            f64::INFINITY
        }
    }

    /// Defaults when the ground truth is known:
    /// `Υ = C2·R_x·(‖w*‖_H + σ)·ln^{2a}(N)` and `Δ = (‖w*‖_H + σ)/N^2`.
    pub fn theory_defaults(
        c2: f64,
        a: f64,
        radius: f64,
        scale: f64,
        n: usize,
        noise_multiplier: f64,
        public: bool,
    ) -> Result<Self> {
        if !(scale > 0.0) || !(radius > 0.0) || n < 2 {
            return Err(Error::invalid(
                "theory defaults need positive radius and scale and n >= 2",
            ));
        }
        let n_f = n as f64;
        let upsilon = c2 * radius * scale * n_f.ln().powf(2.0 * a);
        let delta_grid = scale / (n_f * n_f);
        Self::new(upsilon.max(delta_grid), delta_grid, noise_multiplier, public)
    }

    /// Defaults for real data: `Υ = 4·max|y|` (the largest residual at the
    /// zero model) and `Δ = Υ / 2^16`.
    pub fn data_defaults(data: &Dataset, noise_multiplier: f64, public: bool) -> Result<Self> {
        let max_abs = data.iter().map(|ex| ex.y.abs()).fold(0.0, f64::max);
        if data.is_empty() || max_abs <= 0.0 {
            return Err(Error::invalid("cannot derive a search range from all-zero labels"));
        }
        let upsilon = 4.0 * max_abs;
        Self::new(upsilon, upsilon / 65536.0, noise_multiplier, public)
    }
}

/// A clipping level and the raw search output it was built from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClipScale {
    pub s: f64,
    pub gamma: f64,
}

/// `v·min(1, s/‖v‖)`. Vectors already inside the ball are returned unchanged.
pub fn clip(v: &[f64], s: f64) -> Vec<f64> {
    let mut out = v.to_vec();
    clip_in_place(&mut out, s);
    out
}

/// In-place [`clip`]; returns whether the vector was rescaled.
pub fn clip_in_place(v: &mut [f64], s: f64) -> bool {
    let n = norm(v);
    if n <= s {
        return false;
    }
    let original = v.to_vec();
    let mut scale = s / n;
    loop {
        v.iter_mut().zip(&original).for_each(|(vi, oi)| *vi = oi * scale);
        // rounding can leave the norm a few ulps above s; shrink until it is not
        if norm(v) <= s || scale == 0.0 {
            return true;
        }
        scale = f64::from_bits(scale.to_bits() - 1);
    }
}

/// Residual magnitudes `|relu(<x, w>) - y|` over a set.
pub fn residuals(set: &Dataset, w: &ModelVector) -> Result<Vec<f64>> {
    crate::error::check_dim(set.dim(), w.dim())?;
    Ok(set
        .iter()
        .map(|ex| (relu(dot(&ex.x, w)) - ex.y).abs())
        .collect())
}

/// Number of examples whose residual magnitude is at most `s`.
pub fn count_within(set: &Dataset, w: &ModelVector, s: f64) -> Result<usize> {
    Ok(residuals(set, w)?.iter().filter(|&&r| r <= s).count())
}

/// One probe of the search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Probe {
    pub level: f64,
    pub count: usize,
    pub noisy_count: f64,
}

/// Full record of a search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdOutcome {
    pub value: f64,
    /// Grid index of `value`.
    pub index: u32,
    pub probes: Vec<Probe>,
    /// Set when no probe passed and the grid cap was returned.
    pub exhausted: bool,
}

/// Doubling search over precomputed residual magnitudes.
///
/// Draws one standard normal per probe in private mode and none in public mode.
pub fn threshold_search<R: Rng + ?Sized>(
    residuals: &[f64],
    params: &ThresholdParams,
    rng: &mut R,
) -> Result<ThresholdOutcome> {
    if residuals.is_empty() {
        return Err(Error::EmptyDataset);
    }
    params.validate()?;
    let m = residuals.len() as f64;
    let steps = params.steps();
    let noise_std = params.count_noise_std();
    let mut sorted = residuals.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut probes = Vec::new();
    for i in 0..=steps {
        let level = params.grid_value(i);
        let count = sorted.partition_point(|&r| r <= level);
        let noisy_count = if params.public {
            count as f64
        } else {
            let z: f64 = rng.sample(StandardNormal);
            count as f64 + noise_std * z
        };
        probes.push(Probe {
            level,
            count,
            noisy_count,
        });
        if noisy_count >= m {
            return Ok(ThresholdOutcome {
                value: level,
                index: i,
                probes,
                exhausted: false,
            });
        }
    }
    Ok(ThresholdOutcome {
        value: params.grid_cap(),
        index: steps,
        probes,
        exhausted: true,
    })
}

/// The doubling search on an estimating set at model `w`; returns the chosen level.
pub fn dp_threshold<R: Rng + ?Sized>(
    set: &Dataset,
    w: &ModelVector,
    params: &ThresholdParams,
    rng: &mut R,
) -> Result<f64> {
    dp_threshold_traced(set, w, params, rng).map(|o| o.value)
}

/// As [`dp_threshold`], keeping every probe.
pub fn dp_threshold_traced<R: Rng + ?Sized>(
    set: &Dataset,
    w: &ModelVector,
    params: &ThresholdParams,
    rng: &mut R,
) -> Result<ThresholdOutcome> {
    if set.is_empty() {
        return Err(Error::EmptyDataset);
    }
    threshold_search(&residuals(set, w)?, params, rng)
}

/// `s = sqrt(2·alpha·trace_h)·c2·ln(n)^{2a}·gamma`.
pub fn make_clip_scale(gamma: f64, alpha: f64, trace_h: f64, c2: f64, a: f64, n: usize) -> Result<ClipScale> {
    if !(gamma > 0.0 && alpha > 0.0 && trace_h > 0.0 && c2 > 0.0 && a >= 0.0) {
        return Err(Error::invalid(format!(
            "clip scale needs positive gamma, alpha, trace_h, c2 and a >= 0; got \
             ({gamma}, {alpha}, {trace_h}, {c2}, {a})"
        )));
    }
    if n == 0 || (a > 0.0 && n < 2) {
        return Err(Error::invalid("clip scale needs n >= 2 when a > 0"));
    }
    let log_factor = if a == 0.0 { 1.0 } else { (n as f64).ln().powf(2.0 * a) };
    Ok(ClipScale {
        s: (2.0 * alpha * trace_h).sqrt() * c2 * log_factor * gamma,
        gamma,
    })
}

/// `Λ = f·sqrt(2·ln(Υ/Δ)·ln(ln(Υ/Δ)/b_x))`, the count slack of the private search.
pub fn private_count_slack(params: &ThresholdParams, b_x: f64) -> f64 {
    let log_ratio = (params.upsilon / params.delta_grid).ln();
    let inner = (log_ratio / b_x).ln();
    params.noise_multiplier * (2.0 * log_ratio * inner).max(0.0).sqrt()
}
