//! CSV ingestion and preprocessing.

use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Dataset, LabeledExample};
use crate::rng::{stream, Purpose};

/// Reads a numeric CSV with a header row.
///
/// The label is the `target` column, given by name or zero-based index; every
/// other column not listed in `exclude` becomes a feature, in header order.
/// The delimiter is `;` when the header contains semicolons but no commas, and
/// `,` otherwise.
pub fn load_csv(path: impl AsRef<Path>, target: &str, exclude: &[String]) -> Result<Dataset> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let header_line = text.lines().next().unwrap_or("");
    let delimiter = if header_line.contains(';') && !header_line.contains(',') {
        b';'
    } else {
        b','
    };
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| Error::Csv {
            path: path.to_path_buf(),
            row: 0,
            column: String::new(),
            message: e.to_string(),
        })?
        .iter()
        .map(str::to_owned)
        .collect();

    let find = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .or_else(|| name.parse::<usize>().ok().filter(|&i| i < headers.len()))
            .ok_or_else(|| Error::MissingColumn {
                path: path.to_path_buf(),
                column: name.to_owned(),
            })
    };
    let target_idx = find(target)?;
    let mut skipped = vec![false; headers.len()];
    skipped[target_idx] = true;
    for name in exclude {
        skipped[find(name)?] = true;
    }
    let feature_idx: Vec<usize> = (0..headers.len()).filter(|&i| !skipped[i]).collect();
    if feature_idx.is_empty() {
        return Err(Error::invalid(format!("{display}: no feature columns remain")));
    }

    let mut examples = Vec::new();
    for (row, record) in reader.records().enumerate() {
        // header is line 1
        let line = row + 2;
        let record = record.map_err(|e| Error::Csv {
            path: path.to_path_buf(),
            row: line,
            column: String::new(),
            message: e.to_string(),
        })?;
        if record.len() != headers.len() {
            return Err(Error::Csv {
                path: path.to_path_buf(),
                row: line,
                column: String::new(),
                message: format!("expected {} fields, found {}", headers.len(), record.len()),
            });
        }
        let cell = |i: usize| -> Result<f64> {
            let raw = &record[i];
            raw.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Csv {
                    path: path.to_path_buf(),
                    row: line,
                    column: headers[i].clone(),
                    message: format!("non-numeric cell {raw:?}"),
                })
        };
        let x = feature_idx.iter().map(|&i| cell(i)).collect::<Result<Vec<_>>>()?;
        let y = cell(target_idx)?;
        examples.push(LabeledExample { x, y });
    }
    Dataset::new(feature_idx.len(), examples)
}

/// Seeded random partition into `ceil(N (1 - tf))` training and the rest test examples.
pub fn split(data: &Dataset, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::invalid(format!("test fraction must lie in (0, 1), got {test_fraction}")));
    }
    let n = data.len();
    let n_train = ((n as f64) * (1.0 - test_fraction)).ceil() as usize;
    if n_train == 0 || n_train >= n {
        return Err(Error::invalid(format!(
            "split of {n} examples at test fraction {test_fraction} leaves one side empty"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream(seed, Purpose::Split, 0));
    Ok((data.select(&order[..n_train]), data.select(&order[n_train..])))
}

/// Per-feature mean and (population) standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ColumnStats {
    pub fn fit(train: &Dataset) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let n = train.len() as f64;
        let d = train.dim();
        let mut mean = vec![0.0; d];
        for ex in train {
            mean.iter_mut().zip(&ex.x).for_each(|(m, x)| *m += x);
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for ex in train {
            var.iter_mut()
                .zip(&ex.x)
                .zip(&mean)
                .for_each(|((v, x), m)| *v += (x - m).powi(2));
        }
        let std = var
            .into_iter()
            .map(|v| {
                let s = (v / n).sqrt();
                if s > 0.0 { s } else { 1.0 }
            })
            .collect();
        Ok(Self { mean, std })
    }

    pub fn apply(&self, data: &Dataset) -> Dataset {
        let examples = data
            .iter()
            .map(|ex| LabeledExample {
                x: ex
                    .x
                    .iter()
                    .zip(&self.mean)
                    .zip(&self.std)
                    .map(|((x, m), s)| (x - m) / s)
                    .collect(),
                y: ex.y,
            })
            .collect();
        Dataset::from_parts_unchecked(data.dim(), examples)
    }
}

/// Centres and scales features with statistics from `train` only.
/// Zero-variance columns are centred and left unscaled.
pub fn standardize(train: &Dataset, test: &Dataset) -> Result<(Dataset, Dataset, ColumnStats)> {
    let stats = ColumnStats::fit(train)?;
    Ok((stats.apply(train), stats.apply(test), stats))
}

/// Divides every label in both sets by the largest `|y|` over their union.
pub fn normalize_target(train: &Dataset, test: &Dataset) -> Result<(Dataset, Dataset, f64)> {
    let scale = train
        .iter()
        .chain(test.iter())
        .map(|ex| ex.y.abs())
        .fold(0.0, f64::max);
    if !(scale > 0.0) {
        return Err(Error::invalid("all targets are zero; cannot normalise"));
    }
    let rescale = |data: &Dataset| {
        let examples = data
            .iter()
            .map(|ex| LabeledExample {
                x: ex.x.clone(),
                y: ex.y / scale,
            })
            .collect();
        Dataset::from_parts_unchecked(data.dim(), examples)
    };
    Ok((rescale(train), rescale(test), scale))
}
