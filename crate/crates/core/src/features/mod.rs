//! Fixed 40-dimensional fingerprint computed from a ratio vector.
//!
//! Order (index: name):
//!
//! | block | indices | features |
//! |-------|---------|----------|
//! | dispersion | 0-9 | mean, median, std, variance, mean absolute deviation, rms, min, max, peak-to-peak, interquartile range |
//! | shape | 10-15 | skewness, excess kurtosis, 5th/25th/75th/95th percentile |
//! | energy | 16-19 | sum of squares, mean absolute value, ln(sum of squares + 1e-12), crest factor (max / rms) |
//! | first difference | 20-25 | mean, std, rms, max abs, zero crossings of the mean-removed signal, mean abs |
//! | peaks and valleys | 26-39 | peak count, valley count, mean/std peak prominence, mean/std valley depth, mean/std peak width, mean/std valley width, mean/std peak spacing, mean/std valley spacing |
//!
//! Standard deviations are population (divide by n). Percentiles interpolate
//! linearly between order statistics. Peaks need a prominence of at least
//! half the signal's standard deviation; widths are measured at half
//! prominence. With fewer than two peaks (or valleys) the corresponding mean
//! and std features are zero. Degenerate ratios (0/0) are reported as zero.

mod peaks;

pub use peaks::{find_peaks, find_valleys, Peak};

use thiserror::Error;

use crate::acquisition::RatioVector;

pub const FEATURE_COUNT: usize = 40;

/// Fewest ratio samples the extractor accepts.
pub const MIN_FEATURE_SAMPLES: usize = 2;

/// Minimum peak prominence as a multiple of the signal's standard deviation.
pub const PEAK_PROMINENCE_FACTOR: f64 = 0.5;

const FEATURE_NAMES: [&str; FEATURE_COUNT] = [
    "mean",
    "median",
    "std",
    "variance",
    "mean_abs_dev",
    "rms",
    "min",
    "max",
    "peak_to_peak",
    "iqr",
    "skewness",
    "kurtosis",
    "p05",
    "p25",
    "p75",
    "p95",
    "energy",
    "mean_abs",
    "log_energy",
    "crest_factor",
    "diff_mean",
    "diff_std",
    "diff_rms",
    "diff_max_abs",
    "zero_crossings",
    "diff_mean_abs",
    "peak_count",
    "valley_count",
    "peak_height_mean",
    "peak_height_std",
    "valley_depth_mean",
    "valley_depth_std",
    "peak_width_mean",
    "peak_width_std",
    "valley_width_mean",
    "valley_width_std",
    "peak_distance_mean",
    "peak_distance_std",
    "valley_distance_mean",
    "valley_distance_std",
];

pub fn feature_names() -> &'static [&'static str; FEATURE_COUNT] {
    &FEATURE_NAMES
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FeatureError {
    #[error("ratio vector has {0} samples, need at least {MIN_FEATURE_SAMPLES}")]
    InsufficientSignal(usize),
    #[error("expected {FEATURE_COUNT} features, got {0}")]
    Dimension(usize),
}

/// Unlabeled feature values in [`feature_names`] order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureVector(pub [f64; FEATURE_COUNT]);

impl FeatureVector {
    pub fn values(&self) -> &[f64; FEATURE_COUNT] {
        &self.0
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        FEATURE_NAMES.iter().position(|n| *n == name).map(|i| self.0[i])
    }
}

impl TryFrom<&[f64]> for FeatureVector {
    type Error = FeatureError;
    fn try_from(values: &[f64]) -> Result<Self, Self::Error> {
        let arr: [f64; FEATURE_COUNT] = values
            .try_into()
            .map_err(|_| FeatureError::Dimension(values.len()))?;
        Ok(FeatureVector(arr))
    }
}

fn mean(x: &[f64]) -> f64 {
    if x.is_empty() {
        0.0
    } else {
        x.iter().sum::<f64>() / x.len() as f64
    }
}

fn std_dev(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    let m = mean(x);
    (x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / x.len() as f64).sqrt()
}

fn rms(x: &[f64]) -> f64 {
    if x.is_empty() {
        0.0
    } else {
        (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
    }
}

fn ratio_or_zero(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Linear interpolation between closest ranks; `q` in percent.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (sorted[hi] - sorted[lo]) * frac
    }
}

/// Mean and std of a per-peak quantity; both zero with fewer than two peaks.
fn summarize(values: &[f64]) -> (f64, f64) {
    if values.len() < 2 {
        (0.0, 0.0)
    } else {
        (mean(values), std_dev(values))
    }
}

fn peak_block(peaks: &[Peak]) -> [f64; 6] {
    let heights: Vec<f64> = peaks.iter().map(|p| p.prominence).collect();
    let widths: Vec<f64> = peaks.iter().map(|p| p.width).collect();
    let spacing: Vec<f64> = if peaks.len() < 2 {
        Vec::new()
    } else {
        peaks
            .windows(2)
            .map(|w| (w[1].index - w[0].index) as f64)
            .collect()
    };
    let (hm, hs) = summarize(&heights);
    let (wm, ws) = summarize(&widths);
    let (dm, ds) = if peaks.len() < 2 {
        (0.0, 0.0)
    } else {
        (mean(&spacing), std_dev(&spacing))
    };
    [hm, hs, wm, ws, dm, ds]
}

pub fn extract_features(ratio: &RatioVector) -> Result<FeatureVector, FeatureError> {
    let x = ratio.samples();
    let n = x.len();
    if n < MIN_FEATURE_SAMPLES {
        return Err(FeatureError::InsufficientSignal(n));
    }
    let nf = n as f64;
    let mut sorted = x.to_vec();
    sorted.sort_by(f64::total_cmp);

    let m = mean(x);
    let (mut m2, mut m3, mut m4, mut mad) = (0.0, 0.0, 0.0, 0.0);
    for &v in x {
        let d = v - m;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
        mad += d.abs();
    }
    let (m2, m3, m4, mad) = (m2 / nf, m3 / nf, m4 / nf, mad / nf);
    let std = m2.sqrt();
    let energy: f64 = x.iter().map(|v| v * v).sum();
    let rms_v = (energy / nf).sqrt();
    let min = sorted[0];
    let max = sorted[n - 1];
    let p25 = percentile(&sorted, 25.0);
    let p75 = percentile(&sorted, 75.0);
    let (skew, kurt) = if m2 > 0.0 {
        (m3 / m2.powf(1.5), m4 / (m2 * m2) - 3.0)
    } else {
        (0.0, 0.0)
    };

    let diff: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
    let crossings = x
        .windows(2)
        .filter(|w| (w[0] - m) * (w[1] - m) < 0.0)
        .count();

    let threshold = PEAK_PROMINENCE_FACTOR * std;
    let peaks = find_peaks(x, threshold);
    let valleys = find_valleys(x, threshold);
    let pb = peak_block(&peaks);
    let vb = peak_block(&valleys);

    let v = [
        m,
        percentile(&sorted, 50.0),
        std,
        m2,
        mad,
        rms_v,
        min,
        max,
        max - min,
        p75 - p25,
        skew,
        kurt,
        percentile(&sorted, 5.0),
        p25,
        p75,
        percentile(&sorted, 95.0),
        energy,
        x.iter().map(|v| v.abs()).sum::<f64>() / nf,
        (energy + 1e-12).ln(),
        ratio_or_zero(max, rms_v),
        mean(&diff),
        std_dev(&diff),
        rms(&diff),
        diff.iter().fold(0.0f64, |a, d| a.max(d.abs())),
        crossings as f64,
        diff.iter().map(|d| d.abs()).sum::<f64>() / diff.len() as f64,
        peaks.len() as f64,
        valleys.len() as f64,
        pb[0],
        pb[1],
        vb[0],
        vb[1],
        pb[2],
        pb[3],
        vb[2],
        vb[3],
        pb[4],
        pb[5],
        vb[4],
        vb[5],
    ];
    Ok(FeatureVector(v))
}
