//! Statistical time-series features (tsfresh-style subset).

use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::FeatureVector;
use crate::error::{Error, Result};
use crate::series::{mean, pop_std};

/// Names emitted by [`stat_features`], in order.
pub const STAT_FEATURE_NAMES: [&str; 10] = [
    "energy",
    "absolute_maximum",
    "count_above_mean",
    "fourier_entropy",
    "kurtosis_g2",
    "longest_strike_above_mean",
    "variation_coefficient",
    "count_above_s",
    "number_cwt_peaks",
    "pct_reoccurring_datapoints",
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StatConfig {
    /// Threshold `s` for `count_above_s`.
    pub count_above_threshold: f64,
    pub cwt_max_width: usize,
    pub fourier_bins: usize,
}

impl Default for StatConfig {
    fn default() -> Self {
        Self { count_above_threshold: 0.0, cwt_max_width: 5, fourier_bins: 10 }
    }
}

pub fn energy(values: &[f64]) -> f64 {
    values.iter().map(|v| v * v).sum()
}

pub fn absolute_maximum(values: &[f64]) -> f64 {
    values.iter().fold(0.0, |m, v| m.max(v.abs()))
}

pub fn count_above_mean(values: &[f64]) -> usize {
    let m = mean(values);
    values.iter().filter(|&&v| v > m).count()
}

pub fn longest_strike_above_mean(values: &[f64]) -> usize {
    let m = mean(values);
    let (mut best, mut run) = (0, 0);
    for &v in values {
        run = if v > m { run + 1 } else { 0 };
        best = best.max(run);
    }
    best
}

/// Fraction of values strictly greater than `s`.
pub fn count_above(values: &[f64], s: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::invalid("count_above on empty series"));
    }
    Ok(values.iter().filter(|&&v| v > s).count() as f64 / values.len() as f64)
}

/// Population standard deviation over mean; 0 when the mean is ~0.
pub fn variation_coefficient(values: &[f64]) -> f64 {
    let m = mean(values);
    if m.abs() < 1e-12 {
        return 0.0;
    }
    pop_std(values, m) / m
}

/// Adjusted Fisher-Pearson excess kurtosis G2. Needs at least 4 points;
/// constant series give 0.
pub fn kurtosis_g2(values: &[f64]) -> Result<f64> {
    let n = values.len();
    if n < 4 {
        return Err(Error::invalid(format!("kurtosis needs at least 4 points, got {n}")));
    }
    let nf = n as f64;
    let m = mean(values);
    let (m2, m4) = values.iter().fold((0.0, 0.0), |(s2, s4), v| {
        let d2 = (v - m).powi(2);
        (s2 + d2, s4 + d2 * d2)
    });
    if m2 <= f64::EPSILON * f64::EPSILON * nf * m.abs().max(1.0).powi(2) {
        return Ok(0.0);
    }
    let k2 = m2 / (nf - 1.0);
    let lead = nf * (nf + 1.0) / ((nf - 1.0) * (nf - 2.0) * (nf - 3.0));
    let tail = 3.0 * (nf - 1.0).powi(2) / ((nf - 2.0) * (nf - 3.0));
    Ok(lead * m4 / (k2 * k2) - tail)
}

/// Share of entries whose value occurs more than once in the series.
pub fn pct_reoccurring_datapoints(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut sorted: Vec<f64> = values.iter().map(|&v| if v == 0.0 { 0.0 } else { v }).collect();
    sorted.sort_by(f64::total_cmp);
    let mut repeated = 0;
    let mut i = 0;
    while i < sorted.len() {
        let j = i + sorted[i..].iter().take_while(|&&v| v == sorted[i]).count();
        if j - i > 1 {
            repeated += j - i;
        }
        i = j;
    }
    repeated as f64 / values.len() as f64
}

/// One-sided periodogram `|X_k|²`, k = 0..=n/2.
pub fn periodogram(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut buf: Vec<Complex<f64>> = values.iter().map(|&v| Complex::new(v, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    buf[..=n / 2].iter().map(|c| c.norm_sqr()).collect()
}

/// Shannon entropy (nats) of the normalized power spectrum, binned into
/// `bins` equal-width bins over `[0, max]` and weighted by spectral mass.
pub fn fourier_entropy(values: &[f64], bins: usize) -> Result<f64> {
    if values.len() < 4 {
        return Err(Error::invalid(format!("fourier_entropy needs at least 4 points, got {}", values.len())));
    }
    if bins == 0 {
        return Err(Error::invalid("fourier_entropy needs at least one bin"));
    }
    Ok(binned_mass_entropy(&periodogram(values), bins))
}

pub fn binned_mass_entropy(psd: &[f64], bins: usize) -> f64 {
    let total: f64 = psd.iter().sum();
    if !(total > 0.0) {
        return 0.0;
    }
    let p: Vec<f64> = psd.iter().map(|v| v / total).collect();
    let max = p.iter().copied().fold(0.0, f64::max);
    let mut mass = vec![0.0; bins];
    for &v in &p {
        let b = ((v / max * bins as f64) as usize).min(bins - 1);
        mass[b] += v;
    }
    -mass.iter().filter(|&&m| m > 0.0).map(|m| m * m.ln()).sum::<f64>()
}

fn ricker(t: f64, a: f64) -> f64 {
    let amp = 2.0 / ((3.0 * a).sqrt() * PI.powf(0.25));
    let r = t * t / (a * a);
    amp * (1.0 - r) * (-r / 2.0).exp()
}

/// Series value at index `j`, extended past both ends by odd reflection
/// about the endpoints (keeps linear trends linear).
fn odd_extended(values: &[f64], j: isize) -> f64 {
    let n = values.len() as isize;
    if (0..n).contains(&j) {
        values[j as usize]
    } else if j < 0 {
        2.0 * values[0] - values[(-j).min(n - 1) as usize]
    } else {
        2.0 * values[(n - 1) as usize] - values[(2 * (n - 1) - j).max(0) as usize]
    }
}

/// Ricker-wavelet response at width `w` (support ±5w).
pub fn ricker_response(values: &[f64], width: usize) -> Vec<f64> {
    let h = 5 * width as isize;
    let a = width as f64;
    let kernel: Vec<f64> = (-h..=h).map(|t| ricker(t as f64, a)).collect();
    (0..values.len() as isize)
        .map(|i| kernel.iter().zip(-h..=h).map(|(k, t)| k * odd_extended(values, i + t)).sum())
        .collect()
}

/// Interior strict local maxima, with a relative tolerance so rounding noise
/// on flat stretches does not register.
fn strict_maxima(c: &[f64]) -> Vec<usize> {
    let scale = c.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let tol = 1e-9 * scale;
    (1..c.len().saturating_sub(1)).filter(|&i| c[i] > c[i - 1] + tol && c[i] > c[i + 1] + tol).collect()
}

struct Ridge {
    last: usize,
    len: usize,
    gap: usize,
}

/// Ridge-line peak count over Ricker widths `1..=max_width`.
///
/// Maxima are linked from the widest scale down; a ridge may skip one width
/// and may move by at most `max(1, ceil(w/4))` samples per step. Ridges
/// present at `ceil(max_width/2)` or more widths count as peaks.
pub fn number_cwt_peaks(values: &[f64], max_width: usize) -> usize {
    if values.len() < 3 || max_width == 0 {
        return 0;
    }
    let maxima: Vec<Vec<usize>> = (1..=max_width).map(|w| strict_maxima(&ricker_response(values, w))).collect();

    let mut active: Vec<Ridge> = Vec::new();
    let mut finished: Vec<Ridge> = Vec::new();
    for w in (1..=max_width).rev() {
        let here = &maxima[w - 1];
        let max_step = w.div_ceil(4).max(1);
        let mut claimed = vec![false; here.len()];
        for ridge in &mut active {
            let pick = here
                .iter()
                .enumerate()
                .filter(|(k, m)| !claimed[*k] && m.abs_diff(ridge.last) <= max_step)
                .min_by_key(|(_, m)| m.abs_diff(ridge.last));
            match pick {
                Some((k, &m)) => {
                    claimed[k] = true;
                    ridge.last = m;
                    ridge.len += 1;
                    ridge.gap = 0;
                }
                None => ridge.gap += 1,
            }
        }
        let (done, still): (Vec<_>, Vec<_>) = active.into_iter().partition(|r| r.gap > 1);
        finished.extend(done);
        active = still;
        active.extend(here.iter().zip(&claimed).filter(|(_, c)| !**c).map(|(&m, _)| Ridge { last: m, len: 1, gap: 0 }));
    }
    finished.extend(active);
    let min_len = max_width.div_ceil(2);
    finished.iter().filter(|r| r.len >= min_len).count()
}

/// All ten statistical features for one series. Kurtosis and Fourier
/// entropy fall back to 0 below 4 points.
pub fn stat_features(values: &[f64], cfg: &StatConfig) -> Result<FeatureVector> {
    if values.is_empty() {
        return Err(Error::invalid("stat_features on empty series"));
    }
    let short = values.len() < 4;
    if short {
        log::debug!("series of length {} too short for kurtosis/fourier_entropy, emitting 0", values.len());
    }
    let kurt = if short { 0.0 } else { kurtosis_g2(values)? };
    let fent = if short { 0.0 } else { fourier_entropy(values, cfg.fourier_bins)? };
    let vals = [
        energy(values),
        absolute_maximum(values),
        count_above_mean(values) as f64,
        fent,
        kurt,
        longest_strike_above_mean(values) as f64,
        variation_coefficient(values),
        count_above(values, cfg.count_above_threshold)?,
        number_cwt_peaks(values, cfg.cwt_max_width) as f64,
        pct_reoccurring_datapoints(values),
    ];
    let mut fv = FeatureVector::default();
    for (name, v) in STAT_FEATURE_NAMES.iter().zip(vals) {
        fv.push(*name, v);
    }
    Ok(fv)
}
