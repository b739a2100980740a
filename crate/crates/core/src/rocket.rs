//! Random convolutional kernel transform.
//!
//! Each kernel yields two features per series: the maximum of the dilated
//! convolution output and the proportion of positive outputs (PPV).

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;

pub const KERNEL_LENGTHS: [usize; 3] = [7, 9, 11];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocketKernel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub dilation: usize,
    pub padding: bool,
}

impl RocketKernel {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Distance between the first and last tap, plus one.
    pub fn span(&self) -> usize {
        (self.len() - 1) * self.dilation + 1
    }

    pub fn pad_width(&self) -> usize {
        if self.padding {
            (self.len() - 1) * self.dilation / 2
        } else {
            0
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RocketConfig {
    pub num_kernels: usize,
    pub seed: u64,
}

impl Default for RocketConfig {
    fn default() -> Self {
        Self { num_kernels: 1_000, seed: 0 }
    }
}

/// Draws kernels from one seeded stream.
///
/// Lengths are uniform over {7, 9, 11}; weights standard normal, then
/// mean-centred; bias uniform on [-1, 1]; dilation `floor(2^a)` with `a`
/// uniform on `[0, log2((input_len - 1) / (length - 1))]`; padding on with
/// probability 1/2, forced on when the dilated span exceeds `input_len`.
pub fn generate_kernels(config: &RocketConfig, input_len: usize) -> Result<Vec<RocketKernel>> {
    if input_len < 7 {
        return Err(Error::invalid(format!("ROCKET needs series of length >= 7, got {input_len}")));
    }
    if config.num_kernels == 0 {
        return Err(Error::invalid("num_kernels must be >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let kernels = (0..config.num_kernels)
        .map(|_| {
            let length = *KERNEL_LENGTHS.choose(&mut rng).unwrap();
            let mut weights: Vec<f64> = (0..length).map(|_| rng.sample(StandardNormal)).collect();
            let m = weights.iter().sum::<f64>() / length as f64;
            weights.iter_mut().for_each(|w| *w -= m);
            let bias = rng.random_range(-1.0..=1.0);
            let upper = (((input_len - 1) as f64) / ((length - 1) as f64)).log2().max(0.0);
            let exponent = if upper > 0.0 { rng.random_range(0.0..upper) } else { 0.0 };
            let dilation = (2f64.powf(exponent).floor() as usize).max(1);
            let padding = rng.random_bool(0.5);
            let mut k = RocketKernel { weights, bias, dilation, padding };
            if k.span() > input_len {
                k.padding = true;
            }
            k
        })
        .collect();
    Ok(kernels)
}

/// Convolution output at every valid position (zero padding outside the
/// series when the kernel pads).
pub fn convolve(series: &[f64], kernel: &RocketKernel) -> Result<Vec<f64>> {
    if kernel.is_empty() {
        return Err(Error::invalid("empty kernel"));
    }
    let pad = kernel.pad_width();
    let padded_len = series.len() + 2 * pad;
    let span = kernel.span();
    if span > padded_len {
        return Err(Error::invalid(format!("kernel span {span} exceeds padded series length {padded_len}")));
    }
    let n = series.len() as isize;
    Ok((0..=padded_len - span)
        .map(|start| {
            let origin = start as isize - pad as isize;
            kernel
                .weights
                .iter()
                .enumerate()
                .filter_map(|(j, w)| {
                    let idx = origin + (j * kernel.dilation) as isize;
                    (0..n).contains(&idx).then(|| w * series[idx as usize])
                })
                .sum::<f64>()
                + kernel.bias
        })
        .collect())
}

/// `(max, ppv)` of one kernel over one series. PPV counts outputs `> 0`.
pub fn apply_kernel(series: &[f64], kernel: &RocketKernel) -> Result<(f64, f64)> {
    let out = convolve(series, kernel)?;
    let max = out.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let ppv = out.iter().filter(|&&v| v > 0.0).count() as f64 / out.len() as f64;
    Ok((max, ppv))
}

/// Column names `k{i}_max`, `k{i}_ppv` in kernel order.
pub fn feature_names(num_kernels: usize) -> Vec<String> {
    (0..num_kernels).flat_map(|i| [format!("k{i}_max"), format!("k{i}_ppv")]).collect()
}

/// `n x 2K` feature rows, parallel across series.
pub fn rocket_transform(series: &[Vec<f64>], kernels: &[RocketKernel]) -> Result<Vec<Vec<f64>>> {
    let indexed: Vec<(usize, &Vec<f64>)> = series.iter().enumerate().collect();
    par::try_map_collect(&indexed, |(i, s)| {
        if s.len() < 2 {
            return Err(Error::invalid(format!("series {i}: length {} < 2", s.len())));
        }
        let mut row = Vec::with_capacity(2 * kernels.len());
        for k in kernels {
            let (max, ppv) = apply_kernel(s, k).map_err(|e| Error::invalid(format!("series {i}: {e}")))?;
            row.push(max);
            row.push(ppv);
        }
        Ok(row)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kernel(weights: &[f64], bias: f64, dilation: usize, padding: bool) -> RocketKernel {
        RocketKernel { weights: weights.to_vec(), bias, dilation, padding }
    }

    #[test]
    fn deterministic_given_seed() {
        let cfg = RocketConfig { num_kernels: 50, seed: 3 };
        assert_eq!(generate_kernels(&cfg, 100).unwrap(), generate_kernels(&cfg, 100).unwrap());
        let other = RocketConfig { seed: 4, ..cfg };
        assert_ne!(generate_kernels(&cfg, 100).unwrap(), generate_kernels(&other, 100).unwrap());
    }

    #[test]
    fn kernel_distribution_support() {
        let ks = generate_kernels(&RocketConfig { num_kernels: 1000, seed: 1 }, 128).unwrap();
        assert!(ks.iter().all(|k| KERNEL_LENGTHS.contains(&k.len())));
        assert!(ks.iter().all(|k| k.weights.iter().sum::<f64>().abs() < 1e-9));
        assert!(ks.iter().all(|k| (-1.0..=1.0).contains(&k.bias) && k.dilation >= 1));
        assert!(ks.iter().all(|k| k.span() <= 128 || k.padding));
        assert!(ks.iter().any(|k| k.dilation > 1));
        let padded = ks.iter().filter(|k| k.padding).count();
        assert!((400..600).contains(&padded), "{padded}");
    }

    #[test]
    fn short_input_means_unit_dilation() {
        let ks = generate_kernels(&RocketConfig { num_kernels: 200, seed: 9 }, 7).unwrap();
        assert!(ks.iter().all(|k| k.dilation == 1));
        assert!(generate_kernels(&RocketConfig::default(), 6).is_err());
        // every kernel is usable on a length-7 series
        let s = [0.5, -1.0, 2.0, 0.0, 1.0, 3.0, -2.0];
        assert!(ks.iter().all(|k| apply_kernel(&s, k).is_ok()));
    }

    #[test]
    fn identity_kernel() {
        let k = kernel(&[1.0], 0.0, 1, false);
        assert_eq!(convolve(&[-1.0, 2.0, 3.0], &k).unwrap(), vec![-1.0, 2.0, 3.0]);
        assert_eq!(apply_kernel(&[-1.0, 2.0, 3.0], &k).unwrap(), (3.0, 2.0 / 3.0));
    }

    #[test]
    fn all_negative_and_sum_kernel() {
        let k = kernel(&[1.0], -10.0, 1, false);
        assert_eq!(apply_kernel(&[1.0, 2.0], &k).unwrap().1, 0.0);
        let k = kernel(&[1.0, 1.0], 0.0, 1, false);
        assert_eq!(convolve(&[1.0, 1.0, 1.0], &k).unwrap(), vec![2.0, 2.0]);
        assert_eq!(apply_kernel(&[1.0, 1.0, 1.0], &k).unwrap(), (2.0, 1.0));
    }

    #[test]
    fn padding_and_dilation() {
        // length 3, dilation 2, padding 2 on each side: output length = n
        let k = kernel(&[1.0, 0.0, -1.0], 0.0, 2, true);
        let out = convolve(&[1.0, 2.0, 3.0, 4.0, 5.0], &k).unwrap();
        assert_eq!(out, vec![-3.0, -4.0, -4.0, 2.0, 3.0]);
        let no_room = kernel(&[1.0; 7], 0.0, 3, false);
        assert!(apply_kernel(&[1.0; 10], &no_room).is_err());
    }

    #[test]
    fn transform_shape_and_duplicates() {
        let ks = generate_kernels(&RocketConfig { num_kernels: 3, seed: 0 }, 20).unwrap();
        let s: Vec<f64> = (0..20).map(|i| (i as f64 * 0.3).sin()).collect();
        let rows = rocket_transform(&vec![s.clone(); 5], &ks).unwrap();
        assert_eq!(rows.len(), 5);
        assert!(rows.iter().all(|r| r.len() == 6));
        assert!(rows.windows(2).all(|w| w[0] == w[1]));
        assert_eq!(feature_names(2), vec!["k0_max", "k0_ppv", "k1_max", "k1_ppv"]);
        assert!(rocket_transform(&[vec![1.0]], &ks).is_err());
    }

    #[test]
    fn bias_shifts_max_and_scaling_keeps_ppv() {
        let ks = generate_kernels(&RocketConfig { num_kernels: 30, seed: 5 }, 40).unwrap();
        let s: Vec<f64> = (0..40).map(|i| ((i * 7 % 11) as f64 - 5.0) * 0.3).collect();
        let scaled: Vec<f64> = s.iter().map(|v| v * 4.0).collect();
        for k in &ks {
            let zero = RocketKernel { bias: 0.0, ..k.clone() };
            let (m0, p0) = apply_kernel(&s, &zero).unwrap();
            let (mb, _) = apply_kernel(&s, k).unwrap();
            assert!((mb - (m0 + k.bias)).abs() < 1e-12);
            assert_eq!(apply_kernel(&scaled, &zero).unwrap().1, p0);
        }
    }
}
