//! Time-series clustering: K-Shape (shape-based distance) and K-Means on
//! equal-length series, plus the within-cluster inertia measure.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;
use crate::series::{dtw_distance, znormalize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum KMeansMetric {
    Euclidean,
    /// DTW for assignment only; centroids are still arithmetic means.
    Dtw,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ClusterMethod {
    KShape,
    KMeans(KMeansMetric),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub method: ClusterMethod,
    pub k: usize,
    pub centroids: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    /// Sum of squared Euclidean distances to the assigned centroid.
    pub inertia: f64,
    /// K-Shape only: sum of squared SBD to the assigned centroid.
    pub sbd_inertia: Option<f64>,
    /// Inertia after each assignment step (K-Means).
    pub inertia_history: Vec<f64>,
    pub iterations: usize,
    pub seed: u64,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// `Σ_i ‖x_i − μ_{assign(i)}‖²`.
pub fn inertia(data: &[Vec<f64>], centroids: &[Vec<f64>], assignments: &[usize]) -> Result<f64> {
    if data.len() != assignments.len() {
        return Err(Error::LengthMismatch { expected: data.len(), got: assignments.len() });
    }
    let mut total = 0.0;
    for (x, &a) in data.iter().zip(assignments) {
        let c = centroids
            .get(a)
            .ok_or_else(|| Error::invalid(format!("assignment {a} out of range for {} centroids", centroids.len())))?;
        if c.len() != x.len() {
            return Err(Error::LengthMismatch { expected: c.len(), got: x.len() });
        }
        total += sq_dist(x, c);
    }
    Ok(total)
}

/// Circular cross-correlation `cc[s] = Σ_i x[i]·y[i−s mod m]` via FFT.
fn circular_cross_correlation(x: &[f64], y: &[f64]) -> Vec<f64> {
    let m = x.len();
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(m);
    let inv = planner.plan_fft_inverse(m);
    let mut fx: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
    let mut fy: Vec<Complex<f64>> = y.iter().map(|&v| Complex::new(v, 0.0)).collect();
    fwd.process(&mut fx);
    fwd.process(&mut fy);
    let mut prod: Vec<Complex<f64>> = fx.iter().zip(&fy).map(|(a, b)| a * b.conj()).collect();
    inv.process(&mut prod);
    prod.iter().map(|c| c.re / m as f64).collect()
}

/// Shape-based distance and the circular shift `s` for which
/// `roll(y, s)` best matches `x`.
pub fn sbd_with_shift(x: &[f64], y: &[f64]) -> Result<(f64, usize)> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch { expected: x.len(), got: y.len() });
    }
    if x.is_empty() {
        return Err(Error::invalid("sbd on empty series"));
    }
    let norm = (x.iter().map(|v| v * v).sum::<f64>() * y.iter().map(|v| v * v).sum::<f64>()).sqrt();
    if norm == 0.0 {
        return Ok((1.0, 0));
    }
    let cc = circular_cross_correlation(x, y);
    let (shift, best) =
        cc.iter().enumerate().fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) });
    Ok(((1.0 - best / norm).clamp(0.0, 2.0), shift))
}

/// `1 − max_s NCC(x, roll(y, s))` over all circular shifts. Zero-energy
/// inputs are at distance 1.
pub fn sbd(x: &[f64], y: &[f64]) -> Result<f64> {
    sbd_with_shift(x, y).map(|(d, _)| d)
}

/// `roll(y, s)[i] = y[i − s mod m]`.
pub fn roll(y: &[f64], shift: usize) -> Vec<f64> {
    let m = y.len();
    (0..m).map(|i| y[(i + m - shift % m) % m]).collect()
}

fn check_equal_lengths(series: &[Vec<f64>], k: usize) -> Result<usize> {
    if k == 0 {
        return Err(Error::invalid("k must be >= 1"));
    }
    if series.len() < k {
        return Err(Error::invalid(format!("k = {k} exceeds the number of series ({})", series.len())));
    }
    let m = series[0].len();
    if m == 0 {
        return Err(Error::invalid("series must be non-empty"));
    }
    if let Some(bad) = series.iter().find(|s| s.len() != m) {
        return Err(Error::LengthMismatch { expected: m, got: bad.len() });
    }
    Ok(m)
}

/// Centroid of a cluster: dominant eigenvector of the centred scatter of the
/// members after aligning each to the previous centroid.
fn extract_shape(members: &[&Vec<f64>], previous: &[f64]) -> Result<Vec<f64>> {
    let m = previous.len();
    let has_reference = previous.iter().any(|&v| v != 0.0);
    let aligned: Vec<Vec<f64>> = members
        .iter()
        .map(|x| {
            let a = if has_reference {
                let (_, shift) = sbd_with_shift(previous, x)?;
                roll(x, shift)
            } else {
                x.to_vec()
            };
            znormalize(&a)
        })
        .collect::<Result<_>>()?;

    let mut scatter = DMatrix::<f64>::zeros(m, m);
    for a in &aligned {
        for i in 0..m {
            for j in 0..m {
                scatter[(i, j)] += a[i] * a[j];
            }
        }
    }
    let q = DMatrix::<f64>::identity(m, m) - DMatrix::<f64>::from_element(m, m, 1.0 / m as f64);
    let mat = &q * scatter * &q;
    let eig = SymmetricEigen::new(mat);
    let top = eig
        .eigenvalues
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
        .0;
    let mut c: Vec<f64> = eig.eigenvectors.column(top).iter().copied().collect();

    // sign: maximize summed correlation with the aligned members
    let corr: f64 = aligned.iter().map(|a| a.iter().zip(&c).map(|(x, y)| x * y).sum::<f64>()).sum();
    let flip = if corr != 0.0 { corr < 0.0 } else { c.iter().find(|v| **v != 0.0).is_some_and(|v| *v < 0.0) };
    if flip {
        c.iter_mut().for_each(|v| *v = -*v);
    }
    znormalize(&c)
}

fn nearest<F>(x: &[f64], centroids: &[Vec<f64>], dist: F) -> Result<(usize, f64)>
where
    F: Fn(&[f64], &[f64]) -> Result<f64>,
{
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = dist(x, c)?;
        if d < best.1 {
            best = (j, d);
        }
    }
    Ok(best)
}

/// Moves the point farthest from its centroid into each empty cluster.
fn repair_empty(assign: &mut [usize], dists: &mut [f64], centroids: &mut [Vec<f64>], data: &[Vec<f64>]) {
    let k = centroids.len();
    loop {
        let mut counts = vec![0usize; k];
        assign.iter().for_each(|&a| counts[a] += 1);
        let Some(empty) = counts.iter().position(|&c| c == 0) else { return };
        let donor = (0..assign.len())
            .filter(|&i| counts[assign[i]] > 1)
            .fold(None, |best: Option<usize>, i| match best {
                Some(b) if dists[b] >= dists[i] => Some(b),
                _ => Some(i),
            })
            .expect("n >= k guarantees a cluster with two members");
        log::debug!("re-seeding empty cluster {empty} from point {donor}");
        centroids[empty] = data[donor].clone();
        assign[donor] = empty;
        dists[donor] = 0.0;
    }
}

/// Indices ordering the series lexicographically. Fitting in this order
/// makes labels independent of the caller's ordering.
fn canonical_order(series: &[Vec<f64>]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..series.len()).collect();
    order.sort_by(|&a, &b| {
        series[a]
            .iter()
            .zip(&series[b])
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    order
}

fn fit_canonical<F>(series: &[Vec<f64>], fit: F) -> Result<ClusterModel>
where
    F: FnOnce(&[Vec<f64>]) -> Result<ClusterModel>,
{
    let order = canonical_order(series);
    let sorted: Vec<Vec<f64>> = order.iter().map(|&i| series[i].clone()).collect();
    let mut model = fit(&sorted)?;
    let mut assignments = vec![0; series.len()];
    for (rank, &i) in order.iter().enumerate() {
        assignments[i] = model.assignments[rank];
    }
    model.assignments = assignments;
    Ok(model)
}

/// K-Shape clustering. Inputs are z-normalized internally; centroids are
/// z-normalized shapes.
pub fn kshape_fit(series: &[Vec<f64>], k: usize, seed: u64, max_iter: usize) -> Result<ClusterModel> {
    check_equal_lengths(series, k)?;
    fit_canonical(series, |sorted| kshape_fit_ordered(sorted, k, seed, max_iter))
}

fn kshape_fit_ordered(series: &[Vec<f64>], k: usize, seed: u64, max_iter: usize) -> Result<ClusterModel> {
    let m = series[0].len();
    let data: Vec<Vec<f64>> = series.iter().map(|s| znormalize(s)).collect::<Result<_>>()?;
    let n = data.len();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut assign = vec![0; n];
    for (rank, &i) in order.iter().enumerate() {
        assign[i] = rank % k;
    }
    let mut centroids = vec![vec![0.0; m]; k];
    let mut iterations = 0;

    for _ in 0..max_iter.max(1) {
        iterations += 1;
        for (j, c) in centroids.iter_mut().enumerate() {
            let members: Vec<&Vec<f64>> = data.iter().zip(&assign).filter(|(_, &a)| a == j).map(|(x, _)| x).collect();
            if !members.is_empty() {
                *c = extract_shape(&members, c)?;
            }
        }
        let nearest_all = par::try_map_collect(&data, |x| nearest(x, &centroids, sbd))?;
        let (mut next, mut dists): (Vec<usize>, Vec<f64>) = nearest_all.into_iter().unzip();
        repair_empty(&mut next, &mut dists, &mut centroids, &data);
        let stable = next == assign;
        assign = next;
        if stable {
            break;
        }
    }

    let sbd_inertia =
        data.iter().zip(&assign).map(|(x, &a)| sbd(x, &centroids[a]).map(|d| d * d)).sum::<Result<f64>>()?;
    Ok(ClusterModel {
        method: ClusterMethod::KShape,
        k,
        inertia: inertia(&data, &centroids, &assign)?,
        centroids,
        assignments: assign,
        sbd_inertia: Some(sbd_inertia),
        inertia_history: Vec::new(),
        iterations,
        seed,
    })
}

fn kmeans_pp_init(data: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = data.len();
    let mut chosen = vec![rng.random_range(0..n)];
    let mut d2: Vec<f64> = data.iter().map(|x| sq_dist(x, &data[chosen[0]])).collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let target = rng.random_range(0.0..total);
            let mut acc = 0.0;
            d2.iter()
                .position(|&d| {
                    acc += d;
                    acc > target
                })
                .unwrap_or_else(|| d2.iter().rposition(|&d| d > 0.0).unwrap())
        } else {
            // all remaining points coincide with a centre
            (0..n).find(|i| !chosen.contains(i)).unwrap()
        };
        chosen.push(next);
        for (i, x) in data.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(x, &data[next]));
        }
    }
    chosen.into_iter().map(|i| data[i].clone()).collect()
}

/// Lloyd's K-Means with k-means++ seeding.
pub fn kmeans_fit(
    series: &[Vec<f64>],
    k: usize,
    seed: u64,
    max_iter: usize,
    metric: KMeansMetric,
) -> Result<ClusterModel> {
    check_equal_lengths(series, k)?;
    let mut model = fit_canonical(series, |sorted| kmeans_fit_ordered(sorted, k, seed, max_iter, metric))?;
    // Summed in caller order so it agrees bit for bit with `inertia`.
    model.inertia = inertia(series, &model.centroids, &model.assignments)?;
    Ok(model)
}

fn kmeans_fit_ordered(
    series: &[Vec<f64>],
    k: usize,
    seed: u64,
    max_iter: usize,
    metric: KMeansMetric,
) -> Result<ClusterModel> {
    let m = series[0].len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = kmeans_pp_init(series, k, &mut rng);
    let dist = |a: &[f64], b: &[f64]| -> Result<f64> {
        match metric {
            KMeansMetric::Euclidean => Ok(sq_dist(a, b)),
            KMeansMetric::Dtw => dtw_distance(a, b),
        }
    };

    let mut assign: Vec<usize> = Vec::new();
    let mut history = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    for _ in 0..max_iter.max(1) {
        iterations += 1;
        let nearest_all = par::try_map_collect(series, |x| nearest(x, &centroids, dist))?;
        let (mut next, mut dists): (Vec<usize>, Vec<f64>) = nearest_all.into_iter().unzip();
        repair_empty(&mut next, &mut dists, &mut centroids, series);
        history.push(inertia(series, &centroids, &next)?);
        let stable = next == assign;
        assign = next;
        if stable {
            converged = true;
            break;
        }
        centroids = update_means(series, &assign, k, m, &centroids);
    }
    if !converged {
        centroids = update_means(series, &assign, k, m, &centroids);
    }
    Ok(ClusterModel {
        method: ClusterMethod::KMeans(metric),
        k,
        inertia: inertia(series, &centroids, &assign)?,
        centroids,
        assignments: assign,
        sbd_inertia: None,
        inertia_history: history,
        iterations,
        seed,
    })
}

fn update_means(data: &[Vec<f64>], assign: &[usize], k: usize, m: usize, previous: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut sums = vec![vec![0.0; m]; k];
    let mut counts = vec![0usize; k];
    for (x, &a) in data.iter().zip(assign) {
        counts[a] += 1;
        sums[a].iter_mut().zip(x).for_each(|(s, v)| *s += v);
    }
    sums.into_iter()
        .zip(counts)
        .zip(previous)
        .map(|((s, c), prev)| if c == 0 { prev.clone() } else { s.into_iter().map(|v| v / c as f64).collect() })
        .collect()
}

impl ClusterModel {
    pub fn series_len(&self) -> usize {
        self.centroids[0].len()
    }

    /// Nearest-centroid labels under the model's own distance.
    pub fn assign(&self, series: &[Vec<f64>]) -> Result<Vec<usize>> {
        let m = self.series_len();
        if let Some(bad) = series.iter().find(|s| s.len() != m) {
            return Err(Error::LengthMismatch { expected: m, got: bad.len() });
        }
        let labels = par::try_map_collect(series, |x| {
            let (label, _) = match self.method {
                ClusterMethod::KShape => nearest(&znormalize(x)?, &self.centroids, sbd)?,
                ClusterMethod::KMeans(KMeansMetric::Euclidean) => {
                    nearest(x, &self.centroids, |a, b| Ok(sq_dist(a, b)))?
                }
                ClusterMethod::KMeans(KMeansMetric::Dtw) => nearest(x, &self.centroids, dtw_distance)?,
            };
            Ok::<_, Error>(label)
        })?;
        Ok(labels)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn brute_inertia(data: &[Vec<f64>], centroids: &[Vec<f64>], assign: &[usize]) -> f64 {
        let mut total = 0.0;
        for i in 0..data.len() {
            for t in 0..data[i].len() {
                let d = data[i][t] - centroids[assign[i]][t];
                total += d * d;
            }
        }
        total
    }

    #[test]
    fn inertia_examples() {
        let pts = vec![vec![0.0], vec![2.0]];
        assert_eq!(inertia(&pts, &[vec![1.0]], &[0, 0]).unwrap(), 2.0);
        assert_eq!(inertia(&pts, &pts, &[0, 1]).unwrap(), 0.0);
        let four = vec![vec![0.0], vec![0.1], vec![10.0], vec![10.1]];
        let cs = vec![vec![0.05], vec![10.05]];
        let v = inertia(&four, &cs, &[0, 0, 1, 1]).unwrap();
        assert!((v - 0.01).abs() < 1e-12);
        assert_eq!(v, brute_inertia(&four, &cs, &[0, 0, 1, 1]));
        assert!(inertia(&pts, &[vec![1.0, 2.0]], &[0, 0]).is_err());
    }

    #[test]
    fn sbd_identity_and_shift() {
        let x: Vec<f64> = (0..16).map(|i| (i as f64 * 0.7).sin() + 0.1 * i as f64).collect();
        let x = znormalize(&x).unwrap();
        assert!(sbd(&x, &x).unwrap().abs() < 1e-12);
        let shifted = roll(&x, 3);
        let (d, s) = sbd_with_shift(&x, &shifted).unwrap();
        assert!(d.abs() < 1e-9);
        assert_eq!(roll(&shifted, s), x);
        assert_eq!(sbd(&[0.0; 4], &[1.0, 2.0, 3.0, 4.0]).unwrap(), 1.0);
        assert!(sbd(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn roll_semantics() {
        assert_eq!(roll(&[1.0, 2.0, 3.0, 4.0], 1), vec![4.0, 1.0, 2.0, 3.0]);
        assert_eq!(roll(&[1.0, 2.0, 3.0], 3), vec![1.0, 2.0, 3.0]);
    }

    fn waves(seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = 64;
        let sine: Vec<f64> = (0..m).map(|i| (2.0 * PI * i as f64 / m as f64).sin()).collect();
        let square: Vec<f64> = (0..m).map(|i| if i < m / 2 { 1.0 } else { -1.0 }).collect();
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for i in 0..20 {
            let base = if i % 2 == 0 { &sine } else { &square };
            data.push(roll(base, rng.random_range(0..m)));
            labels.push(i % 2);
        }
        (data, labels)
    }

    fn purity(assign: &[usize], truth: &[usize], k: usize) -> f64 {
        let mut correct = 0;
        for c in 0..k {
            let mut counts = [0usize; 2];
            assign.iter().zip(truth).filter(|(a, _)| **a == c).for_each(|(_, t)| counts[*t] += 1);
            correct += counts.iter().max().unwrap();
        }
        correct as f64 / assign.len() as f64
    }

    #[test]
    fn kshape_separates_waveforms() {
        for seed in 0..3 {
            let (data, truth) = waves(seed);
            let model = kshape_fit(&data, 2, seed, 100).unwrap();
            assert_eq!(purity(&model.assignments, &truth, 2), 1.0, "seed {seed}");
            assert_eq!(model.assign(&data).unwrap(), model.assignments);
        }
    }

    #[test]
    fn kshape_single_cluster_and_determinism() {
        let (data, _) = waves(7);
        let one = kshape_fit(&data, 1, 1, 100).unwrap();
        assert!(one.assignments.iter().all(|&a| a == 0));
        assert_eq!(kshape_fit(&data, 2, 5, 100).unwrap(), kshape_fit(&data, 2, 5, 100).unwrap());
        assert!(kshape_fit(&data[..1], 2, 0, 10).is_err());
    }

    #[test]
    fn labels_follow_permutation() {
        let (data, _) = waves(3);
        let perm: Vec<usize> = (0..data.len()).rev().collect();
        let permuted: Vec<Vec<f64>> = perm.iter().map(|&i| data[i].clone()).collect();
        for fit in [
            |d: &[Vec<f64>]| kshape_fit(d, 3, 4, 100).unwrap(),
            |d: &[Vec<f64>]| kmeans_fit(d, 3, 4, 100, KMeansMetric::Euclidean).unwrap(),
        ] {
            let a = fit(&data);
            let b = fit(&permuted);
            assert_eq!(a.centroids, b.centroids);
            for (r, &i) in perm.iter().enumerate() {
                assert_eq!(b.assignments[r], a.assignments[i]);
            }
        }
    }

    #[test]
    fn kmeans_blobs() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let means = [[0.0, 0.0, 0.0], [50.0, -20.0, 10.0]];
        let mut data = Vec::new();
        for i in 0..40 {
            let mu = means[i % 2];
            data.push(mu.iter().map(|m| m + rng.random_range(-1.0..1.0)).collect::<Vec<f64>>());
        }
        let model = kmeans_fit(&data, 2, 11, 100, KMeansMetric::Euclidean).unwrap();
        for mu in means {
            let closest = model.centroids.iter().map(|c| sq_dist(c, &mu).sqrt()).fold(f64::INFINITY, f64::min);
            assert!(closest < 1.0, "{closest}");
        }
        assert!(model.inertia_history.windows(2).all(|w| w[1] <= w[0]));
        assert!(model.inertia <= model.inertia_history[0]);
        assert_eq!(model.inertia, brute_inertia(&data, &model.centroids, &model.assignments));
    }

    #[test]
    fn kmeans_k_equals_n() {
        let data = vec![vec![1.0, 2.0], vec![3.0, 1.0], vec![-4.0, 0.5]];
        let model = kmeans_fit(&data, 3, 0, 50, KMeansMetric::Euclidean).unwrap();
        assert_eq!(model.inertia, 0.0);
        let labels = model.assign(&model.centroids).unwrap();
        assert_eq!(labels, vec![0, 1, 2]);
    }

    #[test]
    fn kmeans_dtw_metric_runs() {
        let (data, _) = waves(1);
        let model = kmeans_fit(&data, 2, 3, 20, KMeansMetric::Dtw).unwrap();
        assert!(model.assign(&data).unwrap().iter().all(|&l| l < 2));
        assert!(model.assign(&[vec![0.0; 3]]).is_err());
    }
}
