//! Tracing-attack statistic and a membership-inference harness.
//!
//! The statistic scores a candidate pair against a released model by
//! correlating the model's deviation from the truth with the pair's
//! residual-weighted, gated feature. Fresh pairs score zero in expectation.

use serde::{Deserialize, Serialize};

use crate::datagen::{generate_range, GroundTruth};
use crate::error::{check_dim, Error, Result};
use crate::model::{relu, Dataset, LabeledExample, ModelVector};
use crate::numeric::{dot, MomentAccumulator};
use crate::parallel::map_indexed;
use crate::rng::{derive_seed, Purpose};

/// Aggregated attack statistics over all trials.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackReport {
    pub in_mean: f64,
    pub out_mean: f64,
    /// Per-trial sum of member statistics, averaged over trials.
    pub in_sum: f64,
    pub out_se: f64,
    pub n_in: usize,
    pub n_out: usize,
    /// One-sided z-score of `in_mean - out_mean`.
    pub separation_z: f64,
}

/// `<m_out - w_ref, (y - relu(<w_ref, x>)) x 1[<w_ref, x> > 0]>`.
pub fn attack_statistic(w_ref: &ModelVector, m_out: &ModelVector, ex: &LabeledExample) -> Result<f64> {
    check_dim(w_ref.dim(), m_out.dim())?;
    check_dim(w_ref.dim(), ex.dim())?;
    let margin = dot(w_ref, &ex.x);
    if margin <= 0.0 {
        return Ok(0.0);
    }
    let residual = ex.y - relu(margin);
    let proj: f64 = m_out
        .iter()
        .zip(w_ref.iter())
        .zip(&ex.x)
        .map(|((m, w), x)| (m - w) * x)
        .sum();
    Ok(residual * proj)
}

/// Seed a trainer receives for `trial`.
pub fn trial_seed(seed: u64, trial: usize) -> u64 {
    derive_seed(seed, Purpose::Trial as u64 ^ ((trial as u64) << 8))
}

struct TrialStats {
    members: MomentAccumulator,
    fresh: MomentAccumulator,
}

/// Runs `trials` independent membership experiments.
///
/// Each trial draws `n` members and `n_fresh` non-members from `gt`, trains
/// `trainer(members, trial_seed)` and scores both groups against `w_star`.
/// The separation z-score uses the spread of per-trial mean differences, which
/// accounts for the members sharing one released model; with a single trial it
/// falls back to treating every statistic as independent.
pub fn membership_experiment<F>(
    trainer: F,
    gt: &GroundTruth,
    n: usize,
    n_fresh: usize,
    trials: usize,
    seed: u64,
    workers: usize,
) -> Result<AttackReport>
where
    F: Fn(&Dataset, u64) -> Result<ModelVector> + Sync,
{
    if trials == 0 || n == 0 || n_fresh == 0 {
        return Err(Error::invalid("membership experiment needs trials, n and n_fresh >= 1"));
    }
    let w_star = gt.w_star();
    let per_trial = map_indexed(trials, workers, |t| -> Result<TrialStats> {
        let tseed = trial_seed(seed, t);
        let members = generate_range(gt, 0..n, tseed, Purpose::Data)?;
        let fresh = generate_range(gt, 0..n_fresh, tseed, Purpose::FreshData)?;
        let released = trainer(&members, tseed)?;
        let score = |set: &Dataset| -> Result<MomentAccumulator> {
            set.iter().map(|ex| attack_statistic(w_star, &released, ex)).collect()
        };
        Ok(TrialStats {
            members: score(&members)?,
            fresh: score(&fresh)?,
        })
    });
    let mut members = MomentAccumulator::new();
    let mut fresh = MomentAccumulator::new();
    let mut diffs = MomentAccumulator::new();
    let mut sums = MomentAccumulator::new();
    for stats in per_trial {
        let stats = stats?;
        members.merge(&stats.members);
        fresh.merge(&stats.fresh);
        diffs.push(stats.members.mean() - stats.fresh.mean());
        sums.push(stats.members.sum());
    }
    let gap = members.mean() - fresh.mean();
    let se = if trials > 1 {
        diffs.std_error()
    } else {
        (members.variance() / members.count() as f64 + fresh.variance() / fresh.count() as f64).sqrt()
    };
    let separation_z = if se > 0.0 {
        gap / se
    } else if gap == 0.0 {
        0.0
    } else {
        gap.signum() * f64::INFINITY
    };
    Ok(AttackReport {
        in_mean: members.mean(),
        out_mean: fresh.mean(),
        in_sum: sums.mean(),
        out_se: fresh.std_error(),
        n_in: members.count(),
        n_out: fresh.count(),
        separation_z,
    })
}
