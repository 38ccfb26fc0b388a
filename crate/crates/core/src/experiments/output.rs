use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::runner::{Cell, RunResult};
use crate::error::{Error, Result};

/// Full-precision float text: 17 significant digits, empty for missing values.
pub fn format_float(v: Option<f64>) -> String {
    match v {
        None => String::new(),
        Some(v) if v.is_nan() => "nan".to_owned(),
        Some(v) if v.is_infinite() => if v > 0.0 { "inf" } else { "-inf" }.to_owned(),
        Some(v) => format!("{v:.16e}"),
    }
}

fn epsilon_label(epsilon: Option<f64>) -> String {
    epsilon.map_or_else(|| "none".to_owned(), |e| format!("{e}"))
}

/// File name of a cell's loss curve.
pub fn curve_file_name(cell: &Cell) -> String {
    format!(
        "{}_eps-{}_seed-{}.csv",
        cell.algorithm,
        epsilon_label(cell.epsilon),
        cell.seed
    )
}

/// Config echo written next to the results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    #[serde(flatten)]
    pub config: ExperimentConfig,
}

impl Manifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Paths produced by [`write_results`].
#[derive(Debug, Clone, PartialEq)]
pub struct WrittenFiles {
    pub curves: Vec<PathBuf>,
    pub summary: PathBuf,
    pub aggregate: PathBuf,
    pub manifest: PathBuf,
    pub failures: Option<PathBuf>,
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Writes per-cell loss curves, `summary.csv`, `aggregate.csv` and `manifest.json` into `dir`.
///
/// `summary.csv` holds one row per seed and one `mean` row per
/// (algorithm, epsilon); `aggregate.csv` adds the standard deviations.
/// Timing is not written, so identical configs give identical files.
pub fn write_results(result: &RunResult, dir: impl AsRef<Path>) -> Result<WrittenFiles> {
    let dir = dir.as_ref();
    let curves_dir = dir.join("curves");
    std::fs::create_dir_all(&curves_dir).map_err(|e| Error::io(&curves_dir, e))?;

    let mut curves = Vec::new();
    let mut failures = String::new();
    for r in &result.cells {
        match &r.outcome {
            Ok(m) => {
                let mut text = String::from("step,train_loss,test_loss\n");
                for rec in &m.curve {
                    let _ = writeln!(
                        text,
                        "{},{},{}",
                        rec.step,
                        format_float(Some(rec.train_loss)),
                        format_float(rec.test_loss)
                    );
                }
                let path = curves_dir.join(curve_file_name(&r.cell));
                write_file(&path, &text)?;
                curves.push(path);
            }
            Err(msg) => {
                let _ = writeln!(
                    failures,
                    "{} eps={} seed={}: {msg}",
                    r.cell.algorithm,
                    epsilon_label(r.cell.epsilon),
                    r.cell.seed
                );
            }
        }
    }

    let mut summary =
        String::from("algorithm,epsilon,seed,final_train,final_test,excess_risk,effective_epsilon\n");
    for agg in &result.aggregates {
        for r in result
            .cells
            .iter()
            .filter(|r| r.cell.algorithm == agg.algorithm && r.cell.epsilon == agg.epsilon)
        {
            let eps = format_float(r.cell.epsilon);
            match &r.outcome {
                Ok(m) => {
                    let _ = writeln!(
                        summary,
                        "{},{eps},{},{},{},{},{}",
                        r.cell.algorithm,
                        r.cell.seed,
                        format_float(Some(m.final_train)),
                        format_float(Some(m.final_test)),
                        format_float(m.excess_risk),
                        format_float(Some(m.effective_privacy.effective_epsilon)),
                    );
                }
                Err(_) => {
                    let _ = writeln!(summary, "{},{eps},{},,,,", r.cell.algorithm, r.cell.seed);
                }
            }
        }
        let _ = writeln!(
            summary,
            "{},{},mean,{},{},{},{}",
            agg.algorithm,
            format_float(agg.epsilon),
            format_float(Some(agg.final_train_mean)),
            format_float(Some(agg.final_test_mean)),
            format_float(agg.excess_risk_mean),
            format_float(Some(agg.effective_epsilon_mean)),
        );
    }
    let summary_path = dir.join("summary.csv");
    write_file(&summary_path, &summary)?;

    let mut aggregate = String::from(
        "algorithm,epsilon,seeds_ok,seeds_failed,final_train_mean,final_train_std,\
         final_test_mean,final_test_std,excess_risk_mean,excess_risk_std,effective_epsilon_mean\n",
    );
    for a in &result.aggregates {
        let _ = writeln!(
            aggregate,
            "{},{},{},{},{},{},{},{},{},{},{}",
            a.algorithm,
            format_float(a.epsilon),
            a.seeds_ok,
            a.seeds_failed,
            format_float(Some(a.final_train_mean)),
            format_float(Some(a.final_train_std)),
            format_float(Some(a.final_test_mean)),
            format_float(Some(a.final_test_std)),
            format_float(a.excess_risk_mean),
            format_float(a.excess_risk_std),
            format_float(Some(a.effective_epsilon_mean)),
        );
    }
    let aggregate_path = dir.join("aggregate.csv");
    write_file(&aggregate_path, &aggregate)?;

    let manifest = Manifest {
        version: crate::VERSION.to_owned(),
        config: result.config.clone(),
    };
    let manifest_path = dir.join("manifest.json");
    write_file(&manifest_path, &(serde_json::to_string_pretty(&manifest)? + "\n"))?;

    let failures_path = if failures.is_empty() {
        None
    } else {
        let path = dir.join("failures.txt");
        write_file(&path, &failures)?;
        Some(path)
    };

    Ok(WrittenFiles {
        curves,
        summary: summary_path,
        aggregate: aggregate_path,
        manifest: manifest_path,
        failures: failures_path,
    })
}
