//! Peak finding with prominence and half-prominence width.
//!
//! Local maxima follow the usual plateau rule: a flat top counts once, at its
//! middle sample. Prominence is the height above the higher of the two bases,
//! where each base is the lowest point between the peak and the nearest
//! strictly higher sample on that side (or the signal edge).

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Peak {
    pub index: usize,
    pub prominence: f64,
    /// Width in samples at half prominence, linearly interpolated.
    pub width: f64,
}

fn local_maxima(x: &[f64]) -> Vec<usize> {
    let mut peaks = Vec::new();
    if x.len() < 3 {
        return peaks;
    }
    let last = x.len() - 1;
    let mut i = 1;
    while i < last {
        if x[i - 1] < x[i] {
            let mut ahead = i + 1;
            while ahead < last && x[ahead] == x[i] {
                ahead += 1;
            }
            if x[ahead] < x[i] {
                peaks.push((i + ahead - 1) / 2);
                i = ahead;
            }
        }
        i += 1;
    }
    peaks
}

fn prominence(x: &[f64], peak: usize) -> (f64, usize, usize) {
    let top = x[peak];
    let mut left_base = peak;
    let mut left_min = top;
    let mut i = peak;
    while i > 0 {
        i -= 1;
        if x[i] > top {
            break;
        }
        if x[i] < left_min {
            left_min = x[i];
            left_base = i;
        }
    }
    let mut right_base = peak;
    let mut right_min = top;
    for (j, &v) in x.iter().enumerate().skip(peak + 1) {
        if v > top {
            break;
        }
        if v < right_min {
            right_min = v;
            right_base = j;
        }
    }
    (top - left_min.max(right_min), left_base, right_base)
}

fn half_width(x: &[f64], peak: usize, prom: f64, left_base: usize, right_base: usize) -> f64 {
    let height = x[peak] - prom / 2.0;
    let mut i = peak;
    while left_base < i && height < x[i] {
        i -= 1;
    }
    let mut left = i as f64;
    if x[i] < height {
        left += (height - x[i]) / (x[i + 1] - x[i]);
    }
    let mut j = peak;
    while j < right_base && height < x[j] {
        j += 1;
    }
    let mut right = j as f64;
    if x[j] < height {
        right -= (height - x[j]) / (x[j - 1] - x[j]);
    }
    right - left
}

/// Peaks of `x` whose prominence is at least `min_prominence`.
pub fn find_peaks(x: &[f64], min_prominence: f64) -> Vec<Peak> {
    local_maxima(x)
        .into_iter()
        .filter_map(|p| {
            let (prom, lb, rb) = prominence(x, p);
            (prom >= min_prominence && prom > 0.0).then(|| Peak {
                index: p,
                prominence: prom,
                width: half_width(x, p, prom, lb, rb),
            })
        })
        .collect()
}

/// Valleys are peaks of the negated signal; `prominence` is the valley depth.
pub fn find_valleys(x: &[f64], min_depth: f64) -> Vec<Peak> {
    let neg: Vec<f64> = x.iter().map(|v| -v).collect();
    find_peaks(&neg, min_depth)
}
