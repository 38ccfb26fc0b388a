//! Synthetic data for the well-specified ReLU model.
//!
//! Designs are symmetric (`x` and `-x` have the same law): Gaussian and
//! Rademacher vectors shaped by `H^{1/2}`, and the uniform cube used by the
//! lower-bound distribution class. Each dataset index owns its own random
//! stream, so generation order never changes the values.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::model::{relu, Dataset, LabeledExample, ModelVector};
use crate::numeric::{dot, MomentAccumulator, NeumaierSum};
use crate::rng::{stream, Purpose, StreamFamily, StreamRng};

/// The second-moment matrix `H = E[x x^T]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CovarianceSpec {
    Identity { dim: usize },
    Diagonal { eigenvalues: Vec<f64> },
    Explicit { matrix: Vec<Vec<f64>> },
}

impl CovarianceSpec {
    pub fn identity(dim: usize) -> Self {
        CovarianceSpec::Identity { dim }
    }

    pub fn diagonal(eigenvalues: Vec<f64>) -> Result<Self> {
        let spec = CovarianceSpec::Diagonal { eigenvalues };
        spec.validate()?;
        Ok(spec)
    }

    pub fn explicit(matrix: Vec<Vec<f64>>) -> Result<Self> {
        let spec = CovarianceSpec::Explicit { matrix };
        spec.validate()?;
        Ok(spec)
    }

    pub fn dim(&self) -> usize {
        match self {
            CovarianceSpec::Identity { dim } => *dim,
            CovarianceSpec::Diagonal { eigenvalues } => eigenvalues.len(),
            CovarianceSpec::Explicit { matrix } => matrix.len(),
        }
    }

    pub fn is_identity(&self) -> bool {
        match self {
            CovarianceSpec::Identity { .. } => true,
            CovarianceSpec::Diagonal { eigenvalues } => eigenvalues.iter().all(|&l| l == 1.0),
            CovarianceSpec::Explicit { .. } => false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim() == 0 {
            return Err(Error::invalid("covariance dimension must be at least 1"));
        }
        match self {
            CovarianceSpec::Identity { .. } => Ok(()),
            CovarianceSpec::Diagonal { eigenvalues } => {
                if eigenvalues.iter().any(|l| !l.is_finite() || *l < 0.0) {
                    return Err(Error::invalid("diagonal covariance needs finite entries >= 0"));
                }
                Ok(())
            }
            CovarianceSpec::Explicit { matrix } => {
                let d = matrix.len();
                for row in matrix {
                    check_dim(d, row.len())?;
                    if row.iter().any(|v| !v.is_finite()) {
                        return Err(Error::NonFinite("covariance matrix".into()));
                    }
                }
                let scale = (0..d).map(|i| matrix[i][i].abs()).fold(1.0, f64::max);
                for (i, row) in matrix.iter().enumerate() {
                    for (j, &v) in row.iter().enumerate().take(i) {
                        if (v - matrix[j][i]).abs() > 1e-12 * scale {
                            return Err(Error::invalid("covariance matrix is not symmetric"));
                        }
                    }
                }
                if self.eigenvalues().iter().any(|&l| l < -1e-10 * scale) {
                    return Err(Error::invalid("covariance matrix is not positive semi-definite"));
                }
                Ok(())
            }
        }
    }

    /// Dense copy of `H`.
    pub fn matrix(&self) -> DMatrix<f64> {
        let d = self.dim();
        match self {
            CovarianceSpec::Identity { .. } => DMatrix::identity(d, d),
            CovarianceSpec::Diagonal { eigenvalues } => {
                DMatrix::from_diagonal(&DVector::from_column_slice(eigenvalues))
            }
            CovarianceSpec::Explicit { matrix } => DMatrix::from_fn(d, d, |i, j| matrix[i][j]),
        }
    }

    /// Eigenvalues in decreasing order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut ev = match self {
            CovarianceSpec::Identity { dim } => vec![1.0; *dim],
            CovarianceSpec::Diagonal { eigenvalues } => eigenvalues.clone(),
            CovarianceSpec::Explicit { .. } => {
                SymmetricEigen::new(self.matrix()).eigenvalues.iter().copied().collect()
            }
        };
        ev.sort_by(|a, b| b.total_cmp(a));
        ev
    }

    pub fn trace(&self) -> f64 {
        match self {
            CovarianceSpec::Identity { dim } => *dim as f64,
            CovarianceSpec::Diagonal { eigenvalues } => eigenvalues.iter().sum(),
            CovarianceSpec::Explicit { matrix } => (0..matrix.len()).map(|i| matrix[i][i]).sum(),
        }
    }

    /// Spectral norm `||H||_2`.
    pub fn operator_norm(&self) -> f64 {
        self.eigenvalues().first().copied().unwrap_or(0.0)
    }

    /// `lambda_max / lambda_min`, or `None` when `H` is singular.
    pub fn condition_number(&self) -> Option<f64> {
        let ev = self.eigenvalues();
        let (max, min) = (ev[0], *ev.last()?);
        (min > 0.0).then(|| max / min)
    }

    /// `v^T H v`.
    pub fn quadratic_form(&self, v: &[f64]) -> Result<f64> {
        check_dim(self.dim(), v.len())?;
        Ok(match self {
            CovarianceSpec::Identity { .. } => dot(v, v),
            CovarianceSpec::Diagonal { eigenvalues } => {
                eigenvalues.iter().zip(v).map(|(l, x)| l * x * x).sum()
            }
            CovarianceSpec::Explicit { matrix } => matrix
                .iter()
                .zip(v)
                .map(|(row, vi)| vi * dot(row, v))
                .sum(),
        })
    }

    fn root(&self) -> CovarianceRoot {
        match self {
            CovarianceSpec::Identity { .. } => CovarianceRoot::Identity,
            CovarianceSpec::Diagonal { eigenvalues } => {
                CovarianceRoot::Diagonal(eigenvalues.iter().map(|l| l.sqrt()).collect())
            }
            CovarianceSpec::Explicit { .. } => {
                let eig = SymmetricEigen::new(self.matrix());
                let sqrt_l = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
                let root = &eig.eigenvectors
                    * DMatrix::from_diagonal(&sqrt_l)
                    * eig.eigenvectors.transpose();
                let d = root.nrows();
                CovarianceRoot::Dense((0..d).map(|i| root.row(i).iter().copied().collect()).collect())
            }
        }
    }
}

/// `H^{1/2}`, computed once per ground truth.
#[derive(Debug, Clone, PartialEq)]
enum CovarianceRoot {
    Identity,
    Diagonal(Vec<f64>),
    Dense(Vec<Vec<f64>>),
}

impl CovarianceRoot {
    fn apply(&self, z: &[f64], out: &mut [f64]) {
        match self {
            CovarianceRoot::Identity => out.copy_from_slice(z),
            CovarianceRoot::Diagonal(s) => {
                for ((o, zi), si) in out.iter_mut().zip(z).zip(s) {
                    *o = si * zi;
                }
            }
            CovarianceRoot::Dense(m) => {
                for (o, row) in out.iter_mut().zip(m) {
                    *o = dot(row, z);
                }
            }
        }
    }
}

/// Distribution of the isotropic seed vector before shaping by `H^{1/2}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Design {
    Gaussian,
    Rademacher,
    UniformCube,
}

impl Design {
    /// Default fourth-moment constant `alpha` for the design.
    pub fn default_alpha(self) -> f64 {
        3.0
    }
}

impl std::str::FromStr for Design {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gaussian" | "normal" => Ok(Design::Gaussian),
            "rademacher" => Ok(Design::Rademacher),
            "uniform_cube" | "uniform" | "cube" => Ok(Design::UniformCube),
            other => Err(Error::invalid(format!("unknown design `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct GroundTruthConfig {
    w_star: ModelVector,
    sigma: f64,
    cov: CovarianceSpec,
    design: Design,
}

/// A well-specified data distribution: `x ~ D`, `y = ReLU(<x, w*>) + sigma * N(0, 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GroundTruthConfig", into = "GroundTruthConfig")]
pub struct GroundTruth {
    w_star: ModelVector,
    sigma: f64,
    cov: CovarianceSpec,
    design: Design,
    root: CovarianceRoot,
}

impl TryFrom<GroundTruthConfig> for GroundTruth {
    type Error = Error;

    fn try_from(c: GroundTruthConfig) -> Result<Self> {
        GroundTruth::new(c.w_star, c.sigma, c.cov, c.design)
    }
}

impl From<GroundTruth> for GroundTruthConfig {
    fn from(gt: GroundTruth) -> Self {
        GroundTruthConfig {
            w_star: gt.w_star,
            sigma: gt.sigma,
            cov: gt.cov,
            design: gt.design,
        }
    }
}

impl GroundTruth {
    pub fn new(w_star: ModelVector, sigma: f64, cov: CovarianceSpec, design: Design) -> Result<Self> {
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::invalid(format!("sigma must be finite and >= 0, got {sigma}")));
        }
        cov.validate()?;
        check_dim(cov.dim(), w_star.dim())?;
        if design == Design::UniformCube && !cov.is_identity() {
            return Err(Error::invalid("uniform_cube design requires an identity covariance"));
        }
        let root = cov.root();
        Ok(Self {
            w_star,
            sigma,
            cov,
            design,
            root,
        })
    }

    /// Isotropic ground truth with `w*` drawn uniformly on the sphere of radius `norm`.
    pub fn isotropic(dim: usize, norm: f64, sigma: f64, design: Design, seed: u64) -> Result<Self> {
        let mut rng = stream(seed, Purpose::GroundTruth, 0);
        let w_star = sample_w_star(dim, norm, &mut rng)?;
        // For the uniform cube the realised second moment is I/3; see `realized_covariance`.
        GroundTruth::new(w_star, sigma, CovarianceSpec::identity(dim), design)
    }

    pub fn dim(&self) -> usize {
        self.w_star.dim()
    }

    pub fn w_star(&self) -> &ModelVector {
        &self.w_star
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn cov(&self) -> &CovarianceSpec {
        &self.cov
    }

    pub fn design(&self) -> Design {
        self.design
    }

    /// The second-moment matrix actually realised by the design.
    ///
    /// This is `H` for Gaussian and Rademacher designs and `I/3` for the uniform cube.
    pub fn realized_covariance(&self) -> CovarianceSpec {
        match self.design {
            Design::UniformCube => CovarianceSpec::Diagonal {
                eigenvalues: vec![1.0 / 3.0; self.dim()],
            },
            _ => self.cov.clone(),
        }
    }

    /// `||w*||_H` under the realised covariance.
    pub fn w_star_h_norm(&self) -> f64 {
        self.realized_covariance()
            .quadratic_form(&self.w_star)
            .expect("dimensions checked at construction")
            .sqrt()
    }

    pub(crate) fn sample_design_into(&self, out: &mut [f64], rng: &mut StreamRng) -> Result<()> {
        check_dim(self.dim(), out.len())?;
        match self.design {
            Design::Gaussian => {
                let z: Vec<f64> = (0..out.len()).map(|_| rng.sample(StandardNormal)).collect();
                self.root.apply(&z, out);
            }
            Design::Rademacher => {
                let z: Vec<f64> = (0..out.len())
                    .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
                    .collect();
                self.root.apply(&z, out);
            }
            Design::UniformCube => {
                for o in out.iter_mut() {
                    *o = rng.random_range(-1.0..=1.0);
                }
            }
        }
        Ok(())
    }

    pub(crate) fn sample_label_unchecked(&self, x: &[f64], rng: &mut StreamRng) -> f64 {
        let noise: f64 = rng.sample(StandardNormal);
        relu(dot(x, &self.w_star)) + self.sigma * noise
    }
}

/// One draw of `x`.
pub fn sample_design(gt: &GroundTruth, rng: &mut StreamRng) -> Result<Vec<f64>> {
    let mut x = vec![0.0; gt.dim()];
    gt.sample_design_into(&mut x, rng)?;
    Ok(x)
}

/// `ReLU(<x, w*>) + sigma * N(0, 1)`.
pub fn sample_label(gt: &GroundTruth, x: &[f64], rng: &mut StreamRng) -> Result<f64> {
    check_dim(gt.dim(), x.len())?;
    Ok(gt.sample_label_unchecked(x, rng))
}

/// `n` i.i.d. examples. Example `i` is drawn from its own stream of `(seed, Purpose::Data)`.
pub fn generate_dataset(gt: &GroundTruth, n: usize, seed: u64) -> Result<Dataset> {
    generate_with_purpose(gt, n, seed, Purpose::Data)
}

pub(crate) fn generate_with_purpose(
    gt: &GroundTruth,
    n: usize,
    seed: u64,
    purpose: Purpose,
) -> Result<Dataset> {
    generate_range(gt, 0..n, seed, purpose)
}

/// Examples with indices in `range`; identical to the same slice of a full generation.
pub fn generate_range(
    gt: &GroundTruth,
    range: std::ops::Range<usize>,
    seed: u64,
    purpose: Purpose,
) -> Result<Dataset> {
    if range.is_empty() {
        return Err(Error::invalid("dataset size must be at least 1"));
    }
    let family = StreamFamily::new(seed, purpose);
    let examples = range
        .map(|i| {
            let mut rng = family.get(i as u64);
            let x = sample_design(gt, &mut rng)?;
            let y = gt.sample_label_unchecked(&x, &mut rng);
            Ok(LabeledExample { x, y })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset::from_parts_unchecked(gt.dim(), examples))
}

/// Uniform draw from the sphere of radius `norm` in `R^dim`.
pub fn sample_w_star(dim: usize, norm: f64, rng: &mut StreamRng) -> Result<ModelVector> {
    if dim == 0 {
        return Err(Error::invalid("dimension must be at least 1"));
    }
    if !(norm > 0.0 && norm.is_finite()) {
        return Err(Error::invalid(format!("norm must be positive, got {norm}")));
    }
    loop {
        let z: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let len = crate::numeric::norm(&z);
        if len > 1e-300 {
            return ModelVector::new(z.into_iter().map(|v| v * norm / len).collect());
        }
    }
}

/// Tail-condition constants `(C2, a, b_x)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailParams {
    pub c2: f64,
    pub a: f64,
    pub b_x: f64,
}

impl TailParams {
    pub fn new(c2: f64, a: f64, b_x: f64) -> Result<Self> {
        if !(c2 > 0.0) || !(a > 0.0) || !(b_x > 0.0 && b_x < 1.0) {
            return Err(Error::invalid(format!(
                "tail parameters need c2 > 0, a > 0, 0 < b_x < 1; got ({c2}, {a}, {b_x})"
            )));
        }
        Ok(Self { c2, a, b_x })
    }

    /// Defaults for a sample of size `n`: `C2 = 2`, `a = 1/2`, `b_x = 1/n`.
    pub fn for_sample_size(n: usize) -> Self {
        Self {
            c2: 2.0,
            a: 0.5,
            b_x: 1.0 / (n.max(2) as f64),
        }
    }

    /// `log^{2a}(1/b_x)`.
    pub fn log_factor(&self) -> f64 {
        (1.0 / self.b_x).ln().powf(2.0 * self.a)
    }

    /// `R_x^2 = alpha * tr(H) * log^{2a}(1/b_x)`.
    pub fn radius_sq(&self, alpha: f64, trace_h: f64) -> f64 {
        alpha * trace_h * self.log_factor()
    }
}

/// Monte-Carlo estimate of `E[x x^T 1[<x, u> > 0]]` compared with `H/2`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SymmetryReport {
    pub direction: Vec<f64>,
    pub estimate: Vec<Vec<f64>>,
    pub target: Vec<Vec<f64>>,
    pub max_deviation: f64,
    pub samples: usize,
}

/// Checks `E[x x^T 1[<x, u> > 0]] = H/2` for a random unit `u`.
pub fn check_symmetry_moment(gt: &GroundTruth, n_samples: usize, seed: u64) -> Result<SymmetryReport> {
    if n_samples == 0 {
        return Err(Error::invalid("n_samples must be at least 1"));
    }
    let d = gt.dim();
    let mut rng = stream(seed, Purpose::Diagnostics, 0);
    let u = sample_w_star(d, 1.0, &mut rng)?.into_inner();
    let mut sums = vec![NeumaierSum::new(); d * d];
    let family = StreamFamily::new(seed, Purpose::Diagnostics);
    let mut x = vec![0.0; d];
    for i in 0..n_samples {
        if i % 4096 == 0 {
            rng = family.get(1 + (i / 4096) as u64);
        }
        gt.sample_design_into(&mut x, &mut rng)?;
        if dot(&x, &u) > 0.0 {
            for a in 0..d {
                for b in 0..d {
                    sums[a * d + b].add(x[a] * x[b]);
                }
            }
        }
    }
    let h = gt.realized_covariance().matrix();
    let mut estimate = vec![vec![0.0; d]; d];
    let mut target = vec![vec![0.0; d]; d];
    let mut max_deviation = 0.0f64;
    for a in 0..d {
        for b in 0..d {
            estimate[a][b] = sums[a * d + b].total() / n_samples as f64;
            target[a][b] = 0.5 * h[(a, b)];
            max_deviation = max_deviation.max((estimate[a][b] - target[a][b]).abs());
        }
    }
    Ok(SymmetryReport {
        direction: u,
        estimate,
        target,
        max_deviation,
        samples: n_samples,
    })
}

/// Entrywise comparison of the empirical second moment with `H`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CovarianceReport {
    pub max_deviation: f64,
    pub samples: usize,
}

pub fn covariance_check(gt: &GroundTruth, n_samples: usize, seed: u64) -> Result<CovarianceReport> {
    let d = gt.dim();
    let mut sums = vec![NeumaierSum::new(); d * d];
    each_design_draw(gt, n_samples, seed, |x| {
        for a in 0..d {
            for b in 0..d {
                sums[a * d + b].add(x[a] * x[b]);
            }
        }
    })?;
    let h = gt.realized_covariance().matrix();
    let max_deviation = (0..d * d)
        .map(|k| (sums[k].total() / n_samples as f64 - h[(k / d, k % d)]).abs())
        .fold(0.0, f64::max);
    Ok(CovarianceReport {
        max_deviation,
        samples: n_samples,
    })
}

/// Top eigenvalue of `E[x x^T A x x^T]` for a random PSD `A` with `tr(H A) = 1`, relative to `||H||`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FourthMomentReport {
    pub top_eigenvalue: f64,
    pub h_norm: f64,
    pub ratio: f64,
    pub samples: usize,
}

pub fn fourth_moment_check(gt: &GroundTruth, n_samples: usize, seed: u64) -> Result<FourthMomentReport> {
    let d = gt.dim();
    let h_spec = gt.realized_covariance();
    let h = h_spec.matrix();
    let mut rng = stream(seed, Purpose::Diagnostics, u64::MAX);
    let b = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let mut a = &b * b.transpose();
    let scale = (&h * &a).trace();
    a /= scale;
    let a_rows: Vec<Vec<f64>> = (0..d).map(|i| a.row(i).iter().copied().collect()).collect();
    let mut sums = vec![NeumaierSum::new(); d * d];
    each_design_draw(gt, n_samples, seed, |x| {
        let q: f64 = a_rows.iter().zip(x).map(|(row, xi)| xi * dot(row, x)).sum();
        for i in 0..d {
            for j in 0..d {
                sums[i * d + j].add(q * x[i] * x[j]);
            }
        }
    })?;
    let m = DMatrix::from_fn(d, d, |i, j| {
        0.5 * (sums[i * d + j].total() + sums[j * d + i].total()) / n_samples as f64
    });
    let top = SymmetricEigen::new(m).eigenvalues.max();
    let h_norm = h_spec.operator_norm();
    Ok(FourthMomentReport {
        top_eigenvalue: top,
        h_norm,
        ratio: top / h_norm,
        samples: n_samples,
    })
}

/// Empirical `(1 - b_x)`-quantile of `||x||^2` against `E||x||^2 * log^{2a}(1/b_x)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TailReport {
    pub quantile: f64,
    pub bound: f64,
    pub holds: bool,
    pub samples: usize,
}

pub fn tail_check(gt: &GroundTruth, tail: &TailParams, n_samples: usize, seed: u64) -> Result<TailReport> {
    let mut norms = Vec::with_capacity(n_samples);
    each_design_draw(gt, n_samples, seed, |x| norms.push(dot(x, x)))?;
    norms.sort_by(f64::total_cmp);
    let idx = (((1.0 - tail.b_x) * n_samples as f64).ceil() as usize).clamp(1, n_samples) - 1;
    let quantile = norms[idx];
    let bound = gt.realized_covariance().trace() * tail.log_factor();
    Ok(TailReport {
        quantile,
        bound,
        holds: quantile <= bound,
        samples: n_samples,
    })
}

fn each_design_draw(
    gt: &GroundTruth,
    n_samples: usize,
    seed: u64,
    mut visit: impl FnMut(&[f64]),
) -> Result<()> {
    if n_samples == 0 {
        return Err(Error::invalid("n_samples must be at least 1"));
    }
    let family = StreamFamily::new(seed, Purpose::Diagnostics);
    let mut x = vec![0.0; gt.dim()];
    let mut rng = family.get(0);
    for i in 0..n_samples {
        if i % 4096 == 0 {
            rng = family.get(1 + (i / 4096) as u64);
        }
        gt.sample_design_into(&mut x, &mut rng)?;
        visit(&x);
    }
    Ok(())
}

/// Sample mean and standard error of `||x||^2`; used by the `check` command.
pub fn squared_norm_moments(gt: &GroundTruth, n_samples: usize, seed: u64) -> Result<(f64, f64)> {
    let mut acc = MomentAccumulator::new();
    each_design_draw(gt, n_samples, seed, |x| acc.push(dot(x, x)))?;
    Ok((acc.mean(), acc.std_error()))
}
