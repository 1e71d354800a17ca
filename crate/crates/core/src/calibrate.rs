//! Temperature scaling for binary success predictors, plus binned
//! calibration diagnostics.

use std::io::Read;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng;

pub const DEFAULT_BINS: usize = 10;
pub const T_MIN: f64 = 0.05;
pub const T_MAX: f64 = 20.0;
const T_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CalibrationError {
    #[error("need at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("calibration is degenerate: every label is {0}")]
    Degenerate(bool),
    #[error("sample {index} has a non-finite score")]
    NonFinite { index: usize },
    #[error("bad sample file: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSample {
    /// Pre-calibration logit.
    pub raw_score: f64,
    pub label: bool,
}

impl CalibrationSample {
    pub fn from_probability(p: f64, label: bool) -> Self {
        let p = p.clamp(1e-12, 1.0 - 1e-12);
        CalibrationSample { raw_score: (p / (1.0 - p)).ln(), label }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityBin {
    pub bin_center: f64,
    pub mean_pred: f64,
    pub mean_label: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub temperature: f64,
    pub n_samples: usize,
    pub ece_before: f64,
    pub ece_after: f64,
    /// Bins of the calibrated predictions.
    pub reliability_bins: Vec<ReliabilityBin>,
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn apply_temperature(logit: f64, temperature: f64) -> f64 {
    sigmoid(logit / temperature)
}

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn nll(samples: &[CalibrationSample], temperature: f64) -> f64 {
    samples
        .iter()
        .map(|s| {
            let z = s.raw_score / temperature;
            if s.label {
                softplus(-z)
            } else {
                softplus(z)
            }
        })
        .sum()
}

fn bin_of(p: f64, bins: usize) -> usize {
    ((p * bins as f64) as usize).min(bins - 1)
}

pub fn reliability_bins(predictions: &[(f64, bool)], bins: usize) -> Vec<ReliabilityBin> {
    let bins = bins.max(1);
    let mut sums = vec![(0.0f64, 0.0f64, 0usize); bins];
    for &(p, y) in predictions {
        let b = &mut sums[bin_of(p, bins)];
        b.0 += p;
        b.1 += f64::from(u8::from(y));
        b.2 += 1;
    }
    sums.into_iter()
        .enumerate()
        .map(|(i, (sp, sy, n))| ReliabilityBin {
            bin_center: (i as f64 + 0.5) / bins as f64,
            mean_pred: if n == 0 { 0.0 } else { sp / n as f64 },
            mean_label: if n == 0 { 0.0 } else { sy / n as f64 },
            count: n,
        })
        .collect()
}

/// Binned expected calibration error with equal-width bins.
pub fn ece(predictions: &[(f64, bool)], bins: usize) -> f64 {
    if predictions.is_empty() {
        return 0.0;
    }
    let n = predictions.len() as f64;
    reliability_bins(predictions, bins)
        .iter()
        .map(|b| b.count as f64 / n * (b.mean_pred - b.mean_label).abs())
        .sum()
}

fn predictions(samples: &[CalibrationSample], temperature: f64) -> Vec<(f64, bool)> {
    samples.iter().map(|s| (apply_temperature(s.raw_score, temperature), s.label)).collect()
}

/// Fits `T` minimizing the NLL of `sigmoid(logit / T)` by golden-section
/// search on `[T_MIN, T_MAX]`.
pub fn fit_temperature(samples: &[CalibrationSample]) -> Result<CalibrationResult, CalibrationError> {
    if samples.len() < 2 {
        return Err(CalibrationError::TooFewSamples(samples.len()));
    }
    if let Some(index) = samples.iter().position(|s| !s.raw_score.is_finite()) {
        return Err(CalibrationError::NonFinite { index });
    }
    let first = samples[0].label;
    if samples.iter().all(|s| s.label == first) {
        return Err(CalibrationError::Degenerate(first));
    }

    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (T_MIN, T_MAX);
    let mut c = b - ratio * (b - a);
    let mut d = a + ratio * (b - a);
    let (mut fc, mut fd) = (nll(samples, c), nll(samples, d));
    while b - a > T_TOLERANCE {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - ratio * (b - a);
            fc = nll(samples, c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + ratio * (b - a);
            fd = nll(samples, d);
        }
    }
    let temperature = (a + b) / 2.0;
    let after = predictions(samples, temperature);
    Ok(CalibrationResult {
        temperature,
        n_samples: samples.len(),
        ece_before: ece(&predictions(samples, 1.0), DEFAULT_BINS),
        ece_after: ece(&after, DEFAULT_BINS),
        reliability_bins: reliability_bins(&after, DEFAULT_BINS),
    })
}

/// Samples whose labels follow `sigmoid(logit / t_star)`, with logits
/// uniform on `[-spread, spread]`.
pub fn synthetic_samples(n: usize, t_star: f64, spread: f64, seed: u64) -> Vec<CalibrationSample> {
    let mut rng = rng::stream(seed, "calibration");
    (0..n)
        .map(|_| {
            let raw_score = rng.random_range(-spread..=spread);
            let label = rng.random::<f64>() < sigmoid(raw_score / t_star);
            CalibrationSample { raw_score, label }
        })
        .collect()
}

/// Reads `score,label` lines. A non-numeric first line is taken as a header.
pub fn read_samples(input: impl Read) -> Result<Vec<CalibrationSample>, CalibrationError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(input);
    let mut out = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| CalibrationError::Parse(e.to_string()))?;
        let (Some(score), Some(label)) = (record.get(0), record.get(1)) else {
            return Err(CalibrationError::Parse(format!("line {}: expected score,label", i + 1)));
        };
        let Ok(raw_score) = score.parse::<f64>() else {
            if i == 0 {
                continue;
            }
            return Err(CalibrationError::Parse(format!("line {}: bad score `{score}`", i + 1)));
        };
        let label = match label {
            "1" | "true" => true,
            "0" | "false" => false,
            other => return Err(CalibrationError::Parse(format!("line {}: bad label `{other}`", i + 1))),
        };
        out.push(CalibrationSample { raw_score, label });
    }
    Ok(out)
}
