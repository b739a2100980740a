//! Univariate series utilities: resampling, padding, z-normalization, DTW.

use crate::error::{Error, Result};

/// Linear interpolation onto `target_len` uniformly spaced points spanning
/// the original index range. Endpoints are preserved exactly.
pub fn resample_series(values: &[f64], target_len: usize) -> Result<Vec<f64>> {
    if values.len() < 2 {
        return Err(Error::invalid(format!("resample needs at least 2 points, got {}", values.len())));
    }
    if target_len < 2 {
        return Err(Error::invalid(format!("resample target length must be >= 2, got {target_len}")));
    }
    let n = values.len();
    let last = (n - 1) as f64;
    let denom = (target_len - 1) as f64;
    Ok((0..target_len)
        .map(|j| {
            if j == 0 {
                return values[0];
            }
            if j == target_len - 1 {
                return values[n - 1];
            }
            let pos = j as f64 * last / denom;
            let i = (pos.floor() as usize).min(n - 2);
            let frac = pos - i as f64;
            if frac == 0.0 {
                values[i]
            } else {
                values[i] + frac * (values[i + 1] - values[i])
            }
        })
        .collect())
}

/// Right-pads with zeros to `target_len`.
pub fn pad_series(values: &[f64], target_len: usize) -> Result<Vec<f64>> {
    if values.len() > target_len {
        return Err(Error::invalid(format!(
            "series of length {} does not fit target length {target_len}",
            values.len()
        )));
    }
    let mut out = values.to_vec();
    out.resize(target_len, 0.0);
    Ok(out)
}

pub(crate) fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Population standard deviation.
pub(crate) fn pop_std(values: &[f64], mean: f64) -> f64 {
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / values.len() as f64).sqrt()
}

/// Zero mean, unit population standard deviation. Constant inputs map to
/// all zeros.
pub fn znormalize(values: &[f64]) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(Error::invalid("cannot z-normalize an empty series"));
    }
    let m = mean(values);
    let sd = pop_std(values, m);
    if sd <= f64::EPSILON * m.abs().max(1.0) {
        return Ok(vec![0.0; values.len()]);
    }
    Ok(values.iter().map(|v| (v - m) / sd).collect())
}

/// Classic DTW with absolute-difference local cost and no warping window.
pub fn dtw_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("dtw on empty series"));
    }
    // two-row dynamic programme over b
    let m = b.len();
    let mut prev = vec![f64::INFINITY; m + 1];
    let mut cur = vec![f64::INFINITY; m + 1];
    prev[0] = 0.0;
    for &x in a {
        cur[0] = f64::INFINITY;
        for j in 1..=m {
            let best = prev[j].min(cur[j - 1]).min(prev[j - 1]);
            cur[j] = (x - b[j - 1]).abs() + best;
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    Ok(prev[m])
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Enumerates every monotone warping path from (0,0) to (n-1,m-1).
    fn dtw_exhaustive(a: &[f64], b: &[f64]) -> f64 {
        fn go(a: &[f64], b: &[f64], i: usize, j: usize) -> f64 {
            let here = (a[i] - b[j]).abs();
            if i == a.len() - 1 && j == b.len() - 1 {
                return here;
            }
            let mut best = f64::INFINITY;
            if i + 1 < a.len() {
                best = best.min(go(a, b, i + 1, j));
            }
            if j + 1 < b.len() {
                best = best.min(go(a, b, i, j + 1));
            }
            if i + 1 < a.len() && j + 1 < b.len() {
                best = best.min(go(a, b, i + 1, j + 1));
            }
            here + best
        }
        go(a, b, 0, 0)
    }

    #[test]
    fn resample_examples() {
        assert_eq!(resample_series(&[0.0, 1.0], 3).unwrap(), vec![0.0, 0.5, 1.0]);
        assert_eq!(resample_series(&[5.0, 5.0, 5.0], 7).unwrap(), vec![5.0; 7]);
        assert_eq!(resample_series(&[0.0, 2.0, 4.0], 2).unwrap(), vec![0.0, 4.0]);
        assert!(resample_series(&[1.0], 4).is_err());
        assert!(resample_series(&[1.0, 2.0], 1).is_err());
    }

    #[test]
    fn pad_examples() {
        assert_eq!(pad_series(&[0.0, 1.0], 4).unwrap(), vec![0.0, 1.0, 0.0, 0.0]);
        assert_eq!(pad_series(&[], 2).unwrap(), vec![0.0, 0.0]);
        assert_eq!(pad_series(&[3.0], 1).unwrap(), vec![3.0]);
        assert!(pad_series(&[1.0, 2.0], 1).is_err());
    }

    #[test]
    fn znormalize_examples() {
        let z = znormalize(&[1.0, 2.0, 3.0]).unwrap();
        let expect = 1.5f64.sqrt(); // (x - 2) / sqrt(2/3)
        assert!((z[0] + expect).abs() < 1e-12 && z[1].abs() < 1e-12 && (z[2] - expect).abs() < 1e-12);
        assert_eq!(znormalize(&[7.0, 7.0, 7.0]).unwrap(), vec![0.0; 3]);
        let again = znormalize(&z).unwrap();
        for (a, b) in z.iter().zip(&again) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(znormalize(&[]).is_err());
    }

    #[test]
    fn dtw_examples() {
        assert_eq!(dtw_distance(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 0.0);
        assert_eq!(dtw_distance(&[1.0, 2.0, 3.0], &[1.0, 2.0, 2.0, 3.0]).unwrap(), 0.0);
        assert_eq!(dtw_distance(&[0.0], &[3.0]).unwrap(), 3.0);
        assert!(dtw_distance(&[], &[1.0]).is_err());
    }

    proptest! {
        #[test]
        fn resample_identity_at_same_length(v in prop::collection::vec(-100.0f64..100.0, 2..50)) {
            prop_assert_eq!(resample_series(&v, v.len()).unwrap(), v);
        }

        #[test]
        fn znormalize_moments(v in prop::collection::vec(-1e3f64..1e3, 2..64)) {
            let m = mean(&v);
            prop_assume!(pop_std(&v, m) > 1e-6);
            let z = znormalize(&v).unwrap();
            let zm = mean(&z);
            prop_assert!(zm.abs() < 1e-10);
            prop_assert!((pop_std(&z, zm) - 1.0).abs() < 1e-10);
        }

        #[test]
        fn dtw_matches_exhaustive_paths(
            a in prop::collection::vec(-5.0f64..5.0, 1..=5),
            b in prop::collection::vec(-5.0f64..5.0, 1..=5),
        ) {
            let d = dtw_distance(&a, &b).unwrap();
            prop_assert!((d - dtw_exhaustive(&a, &b)).abs() < 1e-12);
            prop_assert_eq!(d, dtw_distance(&b, &a).unwrap());
        }

        #[test]
        fn dtw_bounded_by_lockstep(pairs in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 1..30)) {
            let (a, b): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let lockstep: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum();
            prop_assert!(dtw_distance(&a, &b).unwrap() <= lockstep + 1e-12);
        }
    }
}
