//! Ridge regression by the closed-form normal equations, a binary sign
//! classifier, and a one-vs-rest multi-class wrapper.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Cholesky;

/// `10^-3, 10^-2, ..., 10^3`.
pub const DEFAULT_ALPHAS: [f64; 7] = [1e-3, 1e-2, 1e-1, 1.0, 1e1, 1e2, 1e3];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RidgeModel {
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub alpha: f64,
}

fn validate(x: &[Vec<f64>], n_targets: usize) -> Result<usize> {
    if x.is_empty() {
        return Err(Error::invalid("ridge needs at least one row"));
    }
    if x.len() != n_targets {
        return Err(Error::LengthMismatch { expected: x.len(), got: n_targets });
    }
    let p = x[0].len();
    for row in x {
        if row.len() != p {
            return Err(Error::LengthMismatch { expected: p, got: row.len() });
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite feature value"));
        }
    }
    Ok(p)
}

/// Column means (zeros without an intercept).
fn centre(x: &[Vec<f64>], fit_intercept: bool) -> Vec<f64> {
    let p = x[0].len();
    if !fit_intercept {
        return vec![0.0; p];
    }
    let mut m = vec![0.0; p];
    for row in x {
        m.iter_mut().zip(row).for_each(|(a, v)| *a += v);
    }
    m.iter_mut().for_each(|a| *a /= x.len() as f64);
    m
}

/// `XcᵀXc` for centred `X`, row-major `p x p`.
fn gram(x: &[Vec<f64>], means: &[f64]) -> Vec<f64> {
    let p = means.len();
    let mut g = vec![0.0; p * p];
    for row in x {
        for i in 0..p {
            let a = row[i] - means[i];
            for j in i..p {
                g[i * p + j] += a * (row[j] - means[j]);
            }
        }
    }
    for i in 0..p {
        for j in 0..i {
            g[i * p + j] = g[j * p + i];
        }
    }
    g
}

fn factor(gram: &[f64], p: usize, alpha: f64) -> Result<Cholesky> {
    let mut a = gram.to_vec();
    for i in 0..p {
        a[i * p + i] += alpha;
    }
    Cholesky::factor(&a, p).map_err(|e| Error::Singular(format!("ridge system with alpha = {alpha}: {e}")))
}

fn solve_targets(
    x: &[Vec<f64>],
    means: &[f64],
    chol: &Cholesky,
    y: &[f64],
    fit_intercept: bool,
    alpha: f64,
) -> RidgeModel {
    let p = means.len();
    let y_mean = if fit_intercept { y.iter().sum::<f64>() / y.len() as f64 } else { 0.0 };
    let mut xty = vec![0.0; p];
    for (row, &t) in x.iter().zip(y) {
        for j in 0..p {
            xty[j] += (row[j] - means[j]) * (t - y_mean);
        }
    }
    let weights = chol.solve(&xty);
    let intercept = y_mean - means.iter().zip(&weights).map(|(m, w)| m * w).sum::<f64>();
    RidgeModel { weights, intercept, alpha }
}

/// Minimizes `‖Xw + b − y‖² + α‖w‖²`; the intercept `b` is unpenalized and
/// fixed at 0 when `fit_intercept` is false.
pub fn ridge_train(x: &[Vec<f64>], y: &[f64], alpha: f64, fit_intercept: bool) -> Result<RidgeModel> {
    let p = validate(x, y.len())?;
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::invalid(format!("alpha must be >= 0, got {alpha}")));
    }
    let means = centre(x, fit_intercept);
    let chol = factor(&gram(x, &means), p, alpha)?;
    Ok(solve_targets(x, &means, &chol, y, fit_intercept, alpha))
}

/// Leave-one-out mean squared error for each target column at one alpha,
/// via `e_i / (1 − H_ii)`.
fn loo_errors(
    x: &[Vec<f64>],
    means: &[f64],
    gram: &[f64],
    targets: &[Vec<f64>],
    alpha: f64,
    fit_intercept: bool,
) -> Result<(f64, Vec<RidgeModel>)> {
    let p = means.len();
    let n = x.len();
    let chol = factor(gram, p, alpha)?;
    let inv = chol.inverse();
    let hat: Vec<f64> = x
        .iter()
        .map(|row| {
            let c: Vec<f64> = row.iter().zip(means).map(|(v, m)| v - m).collect();
            let mut h = if fit_intercept { 1.0 / n as f64 } else { 0.0 };
            for i in 0..p {
                let s: f64 = (0..p).map(|j| inv[i * p + j] * c[j]).sum();
                h += c[i] * s;
            }
            h
        })
        .collect();
    let mut total = 0.0;
    let mut models = Vec::with_capacity(targets.len());
    for y in targets {
        let model = solve_targets(x, means, &chol, y, fit_intercept, alpha);
        for (i, row) in x.iter().enumerate() {
            let fitted = model.score_row(row);
            let denom = 1.0 - hat[i];
            let e = if denom.abs() < 1e-12 { 0.0 } else { (y[i] - fitted) / denom };
            total += e * e;
        }
        models.push(model);
    }
    Ok((total / (n * targets.len()) as f64, models))
}

fn select_alpha(x: &[Vec<f64>], targets: &[Vec<f64>], alphas: &[f64], fit_intercept: bool) -> Result<Vec<RidgeModel>> {
    if alphas.is_empty() || alphas.iter().any(|a| !(*a > 0.0)) {
        return Err(Error::invalid("alpha grid must be non-empty and positive"));
    }
    let means = centre(x, fit_intercept);
    let g = gram(x, &means);
    let mut best: Option<(f64, Vec<RidgeModel>)> = None;
    for &alpha in alphas {
        match loo_errors(x, &means, &g, targets, alpha, fit_intercept) {
            Ok((err, models)) => {
                log::debug!("ridge alpha {alpha}: loo mse {err}");
                if best.as_ref().is_none_or(|(b, _)| err < *b) {
                    best = Some((err, models));
                }
            }
            Err(e) => log::debug!("ridge alpha {alpha} skipped: {e}"),
        }
    }
    best.map(|(_, m)| m).ok_or_else(|| Error::Singular("no alpha in the grid gave a solvable system".into()))
}

/// Picks alpha from `alphas` by closed-form leave-one-out error; ties keep
/// the smaller alpha.
pub fn ridge_train_loo(x: &[Vec<f64>], y: &[f64], alphas: &[f64], fit_intercept: bool) -> Result<RidgeModel> {
    validate(x, y.len())?;
    Ok(select_alpha(x, &[y.to_vec()], alphas, fit_intercept)?.remove(0))
}

impl RidgeModel {
    fn score_row(&self, row: &[f64]) -> f64 {
        self.intercept + row.iter().zip(&self.weights).map(|(v, w)| v * w).sum::<f64>()
    }

    pub fn scores(&self, x: &[Vec<f64>]) -> Result<Vec<f64>> {
        x.iter()
            .map(|row| {
                if row.len() != self.weights.len() {
                    return Err(Error::LengthMismatch { expected: self.weights.len(), got: row.len() });
                }
                Ok(self.score_row(row))
            })
            .collect()
    }
}

/// `+1` when the score is `>= 0`, else `-1`.
pub fn ridge_predict(model: &RidgeModel, x: &[Vec<f64>]) -> Result<Vec<i8>> {
    Ok(model.scores(x)?.into_iter().map(sign_label).collect())
}

pub fn sign_label(score: f64) -> i8 {
    if score >= 0.0 {
        1
    } else {
        -1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaChoice {
    Fixed(f64),
    LeaveOneOut,
}

/// One-vs-rest ridge on `±1` targets, one shared alpha.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RidgeClassifier {
    pub classes: Vec<f64>,
    pub models: Vec<RidgeModel>,
}

impl RidgeClassifier {
    pub fn fit(x: &[Vec<f64>], y: &[f64], classes: &[f64], alpha: AlphaChoice) -> Result<Self> {
        validate(x, y.len())?;
        let labels = super::gbdt::class_indices(y, classes)?;
        let targets: Vec<Vec<f64>> =
            (0..classes.len()).map(|c| labels.iter().map(|&l| if l == c { 1.0 } else { -1.0 }).collect()).collect();
        let models = match alpha {
            AlphaChoice::Fixed(a) => targets.iter().map(|t| ridge_train(x, t, a, true)).collect::<Result<_>>()?,
            AlphaChoice::LeaveOneOut => select_alpha(x, &targets, &DEFAULT_ALPHAS, true)?,
        };
        Ok(Self { classes: classes.to_vec(), models })
    }

    pub fn n_features(&self) -> usize {
        self.models[0].weights.len()
    }

    /// Class with the highest score; ties go to the smaller distance.
    pub fn predict_distance(&self, x: &[Vec<f64>]) -> Result<Vec<f64>> {
        if self.classes.len() == 1 {
            return Ok(vec![self.classes[0]; x.len()]);
        }
        let scores: Vec<Vec<f64>> = self.models.iter().map(|m| m.scores(x)).collect::<Result<_>>()?;
        Ok((0..x.len())
            .map(|i| {
                let mut best = 0;
                for c in 1..self.classes.len() {
                    if scores[c][i] > scores[best][i] {
                        best = c;
                    }
                }
                self.classes[best]
            })
            .collect())
    }
}
