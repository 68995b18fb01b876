//! Counting error metrics and the constant-prediction baselines.
//!
//! All four metrics average over every `(image, class)` pair, so an image
//! with three labelled classes contributes three terms:
//!
//! ```text
//! MAE  = mean |y - y_hat|
//! RMSE = sqrt(mean (y - y_hat)^2)
//! NAE  = mean |y - y_hat| / y
//! SRE  = sqrt(mean (y - y_hat)^2 / y)
//! ```

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountPair {
    /// Ground-truth count; strictly positive.
    pub y: f64,
    pub y_hat: f64,
    pub image_id: String,
    pub class_index: usize,
}

impl CountPair {
    pub fn new(y: f64, y_hat: f64, image_id: impl Into<String>, class_index: usize) -> Self {
        Self {
            y,
            y_hat,
            image_id: image_id.into(),
            class_index,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub mae: f64,
    pub rmse: f64,
    pub nae: f64,
    pub sre: f64,
    #[serde(rename = "pairs")]
    pub pair_count: usize,
}

pub fn compute_metrics(pairs: &[CountPair]) -> Result<MetricReport> {
    if pairs.is_empty() {
        return Err(Error::InvalidInput("metrics need at least one count pair".into()));
    }
    let (mut abs, mut sq, mut rel_abs, mut rel_sq) = (0.0, 0.0, 0.0, 0.0);
    for p in pairs {
        if !(p.y > 0.0 && p.y.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "ground-truth count must be positive (image {}, class {}): {}",
                p.image_id, p.class_index, p.y
            )));
        }
        let err = p.y - p.y_hat;
        abs += err.abs();
        sq += err * err;
        rel_abs += err.abs() / p.y;
        rel_sq += err * err / p.y;
    }
    let n = pairs.len() as f64;
    Ok(MetricReport {
        mae: abs / n,
        rmse: (sq / n).sqrt(),
        nae: rel_abs / n,
        sre: (rel_sq / n).sqrt(),
        pair_count: pairs.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineMode {
    Mean,
    Median,
}

impl std::fmt::Display for BaselineMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            BaselineMode::Mean => "mean",
            BaselineMode::Median => "median",
        })
    }
}

/// Constant count predicted for every test pair: the training mean or median.
pub fn baseline_predict(train_counts: &[f64], mode: BaselineMode) -> Result<f64> {
    if train_counts.is_empty() {
        return Err(Error::InvalidInput("baseline needs training counts".into()));
    }
    Ok(match mode {
        BaselineMode::Mean => train_counts.iter().sum::<f64>() / train_counts.len() as f64,
        BaselineMode::Median => {
            let mut sorted = train_counts.to_vec();
            sorted.sort_by(f64::total_cmp);
            let mid = sorted.len() / 2;
            if sorted.len() % 2 == 1 {
                sorted[mid]
            } else {
                0.5 * (sorted[mid - 1] + sorted[mid])
            }
        }
    })
}

/// Replaces every prediction with a constant.
pub fn constant_predictions(pairs: &[CountPair], value: f64) -> Vec<CountPair> {
    pairs
        .iter()
        .map(|p| CountPair {
            y_hat: value,
            ..p.clone()
        })
        .collect()
}

/// A labelled row of a results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub method: String,
    pub split: String,
    #[serde(flatten)]
    pub report: MetricReport,
}

pub const CSV_HEADER: &str = "method,split,mae,rmse,nae,sre,pairs";

pub fn write_csv<W: Write>(mut out: W, rows: &[MetricRow]) -> std::io::Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{:.6},{:.6},{:.6},{:.6},{}",
            r.method, r.split, r.report.mae, r.report.rmse, r.report.nae, r.report.sre, r.report.pair_count
        )?;
    }
    Ok(())
}
