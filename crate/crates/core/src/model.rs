//! ReLU-regression primitives: data types, predictions, pseudo-gradients and risks.

use serde::{Deserialize, Serialize};

use crate::datagen::{CovarianceSpec, GroundTruth};
use crate::error::{check_dim, Error, Result};
use crate::numeric::{dot, MomentAccumulator, NeumaierSum};
use crate::rng::{Purpose, StreamFamily};

/// One `(x, y)` pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub x: Vec<f64>,
    pub y: f64,
}

impl LabeledExample {
    /// Builds an example, rejecting empty or non-finite inputs.
    pub fn new(x: Vec<f64>, y: f64) -> Result<Self> {
        if x.is_empty() {
            return Err(Error::invalid("example has no features"));
        }
        if !y.is_finite() || x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("labeled example".into()));
        }
        Ok(Self { x, y })
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }

    /// `ReLU(<x, w>) - y`.
    #[inline]
    pub fn residual(&self, w: &[f64]) -> f64 {
        relu(dot(&self.x, w)) - self.y
    }
}

/// An ordered collection of examples of a common dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    dim: usize,
    examples: Vec<LabeledExample>,
}

impl Dataset {
    pub fn new(dim: usize, examples: Vec<LabeledExample>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("dataset dimension must be at least 1"));
        }
        for ex in &examples {
            check_dim(dim, ex.dim())?;
        }
        Ok(Self { dim, examples })
    }

    /// Builds a dataset from parallel feature rows and labels.
    pub fn from_rows(rows: Vec<Vec<f64>>, labels: Vec<f64>) -> Result<Self> {
        if rows.len() != labels.len() {
            return Err(Error::invalid(format!(
                "{} feature rows but {} labels",
                rows.len(),
                labels.len()
            )));
        }
        let dim = rows.first().map_or(0, Vec::len);
        let examples = rows
            .into_iter()
            .zip(labels)
            .map(|(x, y)| LabeledExample::new(x, y))
            .collect::<Result<Vec<_>>>()?;
        Self::new(dim, examples)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn examples(&self) -> &[LabeledExample] {
        &self.examples
    }

    pub fn iter(&self) -> std::slice::Iter<'_, LabeledExample> {
        self.examples.iter()
    }

    pub fn into_examples(self) -> Vec<LabeledExample> {
        self.examples
    }

    /// A new dataset holding the examples at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        Dataset {
            dim: self.dim,
            examples: indices.iter().map(|&i| self.examples[i].clone()).collect(),
        }
    }

    /// Examples `range` as a new dataset.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Dataset {
        Dataset {
            dim: self.dim,
            examples: self.examples[range].to_vec(),
        }
    }

    pub(crate) fn from_parts_unchecked(dim: usize, examples: Vec<LabeledExample>) -> Dataset {
        Dataset { dim, examples }
    }
}

impl<'a> IntoIterator for &'a Dataset {
    type Item = &'a LabeledExample;
    type IntoIter = std::slice::Iter<'a, LabeledExample>;

    fn into_iter(self) -> Self::IntoIter {
        self.examples.iter()
    }
}

/// A parameter point `w`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ModelVector(Vec<f64>);

impl ModelVector {
    pub fn new(w: Vec<f64>) -> Result<Self> {
        if w.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("model vector".into()));
        }
        Ok(Self(w))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn norm(&self) -> f64 {
        crate::numeric::norm(&self.0)
    }

    /// `self - other`.
    pub fn sub(&self, other: &ModelVector) -> Result<Vec<f64>> {
        check_dim(self.dim(), other.dim())?;
        Ok(self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect())
    }

    pub(crate) fn from_vec_unchecked(w: Vec<f64>) -> Self {
        Self(w)
    }
}

impl std::ops::Deref for ModelVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

#[inline]
pub fn relu(z: f64) -> f64 {
    if z > 0.0 {
        z
    } else {
        0.0
    }
}

/// `ReLU(<x, w>)`.
pub fn predict(w: &ModelVector, x: &[f64]) -> Result<f64> {
    check_dim(w.dim(), x.len())?;
    Ok(relu(dot(x, w)))
}

/// GLMtron pseudo-gradient `x * (ReLU(<x, w>) - y)`; the ReLU derivative is dropped.
pub fn glmtron_gradient(w: &ModelVector, ex: &LabeledExample) -> Result<Vec<f64>> {
    check_dim(w.dim(), ex.dim())?;
    let r = ex.residual(w);
    Ok(ex.x.iter().map(|xi| xi * r).collect())
}

/// Squared-loss (sub)gradient `x * (ReLU(<x, w>) - y) * 1[<x, w> > 0]`.
pub fn sgd_gradient(w: &ModelVector, ex: &LabeledExample) -> Result<Vec<f64>> {
    check_dim(w.dim(), ex.dim())?;
    let z = dot(&ex.x, w);
    if z > 0.0 {
        let r = z - ex.y;
        Ok(ex.x.iter().map(|xi| xi * r).collect())
    } else {
        Ok(vec![0.0; ex.dim()])
    }
}

/// `(1/2) * mean (ReLU(<x, w>) - y)^2` over `data`.
pub fn empirical_risk(w: &ModelVector, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    check_dim(data.dim(), w.dim())?;
    let total: NeumaierSum = data.iter().map(|ex| ex.residual(w).powi(2)).collect();
    Ok(0.5 * total.total() / data.len() as f64)
}

/// A Monte-Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub samples: usize,
}

/// Draws per random stream in Monte-Carlo estimators.
const MC_CHUNK: usize = 4096;

/// Visits `n_samples` fresh draws from `gt`, chunked over index-keyed streams.
fn for_each_fresh_draw(
    gt: &GroundTruth,
    n_samples: usize,
    seed: u64,
    mut visit: impl FnMut(&[f64], f64),
) -> Result<()> {
    let family = StreamFamily::new(seed, Purpose::MonteCarlo);
    let mut x = vec![0.0; gt.dim()];
    let mut done = 0usize;
    let mut chunk = 0u64;
    while done < n_samples {
        let mut rng = family.get(chunk);
        let take = MC_CHUNK.min(n_samples - done);
        for _ in 0..take {
            gt.sample_design_into(&mut x, &mut rng)?;
            let y = gt.sample_label_unchecked(&x, &mut rng);
            visit(&x, y);
        }
        done += take;
        chunk += 1;
    }
    Ok(())
}

/// Monte-Carlo population risk `(1/2) E (ReLU(<x, w>) - y)^2` under `gt`.
pub fn population_risk_mc(
    w: &ModelVector,
    gt: &GroundTruth,
    n_samples: usize,
    seed: u64,
) -> Result<f64> {
    Ok(population_risk_estimate(w, gt, n_samples, seed)?.mean)
}

/// [`population_risk_mc`] with its standard error.
pub fn population_risk_estimate(
    w: &ModelVector,
    gt: &GroundTruth,
    n_samples: usize,
    seed: u64,
) -> Result<McEstimate> {
    if n_samples == 0 {
        return Err(Error::invalid("n_samples must be at least 1"));
    }
    check_dim(gt.dim(), w.dim())?;
    let mut acc = MomentAccumulator::new();
    for_each_fresh_draw(gt, n_samples, seed, |x, y| {
        let r = relu(dot(x, w)) - y;
        acc.push(0.5 * r * r);
    })?;
    Ok(McEstimate {
        mean: acc.mean(),
        std_error: acc.std_error(),
        samples: n_samples,
    })
}

/// `L(w) - L(w_star)` estimated on common random numbers.
pub fn excess_risk(
    w: &ModelVector,
    w_star: &ModelVector,
    gt: &GroundTruth,
    n_samples: usize,
    seed: u64,
) -> Result<f64> {
    Ok(excess_risk_estimate(w, w_star, gt, n_samples, seed)?.mean)
}

/// [`excess_risk`] with the standard error of the paired differences.
pub fn excess_risk_estimate(
    w: &ModelVector,
    w_star: &ModelVector,
    gt: &GroundTruth,
    n_samples: usize,
    seed: u64,
) -> Result<McEstimate> {
    if n_samples == 0 {
        return Err(Error::invalid("n_samples must be at least 1"));
    }
    check_dim(w.dim(), w_star.dim())?;
    check_dim(gt.dim(), w.dim())?;
    let mut acc = MomentAccumulator::new();
    for_each_fresh_draw(gt, n_samples, seed, |x, y| {
        let a = relu(dot(x, w)) - y;
        let b = relu(dot(x, w_star)) - y;
        acc.push(0.5 * (a * a - b * b));
    })?;
    Ok(McEstimate {
        mean: acc.mean(),
        std_error: acc.std_error(),
        samples: n_samples,
    })
}

/// `(w - w_star)^T H (w - w_star)`.
pub fn param_error_h(w: &ModelVector, w_star: &ModelVector, h: &CovarianceSpec) -> Result<f64> {
    let diff = w.sub(w_star)?;
    h.quadratic_form(&diff)
}
