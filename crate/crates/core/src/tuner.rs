//! Gaussian-process Bayesian optimization with expected improvement, for
//! minimizing a noisy scalar objective over a box.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::linalg::Cholesky;
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    Linear,
    Log,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
    pub scale: Scale,
    #[serde(default)]
    pub integer: bool,
}

impl ParamSpec {
    pub fn new(name: &str, lower: f64, upper: f64, scale: Scale, integer: bool) -> Self {
        Self { name: name.to_string(), lower, upper, scale, integer }
    }

    fn value_at(&self, u: f64) -> f64 {
        let u = u.clamp(0.0, 1.0);
        let v = match self.scale {
            Scale::Linear => self.lower + u * (self.upper - self.lower),
            Scale::Log => self.lower * (self.upper / self.lower).powf(u),
        };
        let v = if self.integer { v.round() } else { v };
        v.clamp(self.lower, self.upper)
    }

    fn unit_of(&self, v: f64) -> f64 {
        let u = match self.scale {
            Scale::Linear => (v - self.lower) / (self.upper - self.lower),
            Scale::Log => (v / self.lower).ln() / (self.upper / self.lower).ln(),
        };
        u.clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub params: Vec<ParamSpec>,
}

impl SearchSpace {
    pub fn new(params: Vec<ParamSpec>) -> Result<Self> {
        let s = Self { params };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.params.is_empty() {
            return Err(Error::invalid("search space has no parameters"));
        }
        for p in &self.params {
            if !(p.lower < p.upper) || !p.lower.is_finite() || !p.upper.is_finite() {
                return Err(Error::invalid(format!("{}: need lower < upper", p.name)));
            }
            if p.scale == Scale::Log && !(p.lower > 0.0) {
                return Err(Error::invalid(format!("{}: log scale needs lower > 0", p.name)));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.params.len()
    }

    /// Unit-cube point to parameter values; integers are rounded here.
    pub fn denormalize(&self, unit: &[f64]) -> Vec<f64> {
        self.params.iter().zip(unit).map(|(p, &u)| p.value_at(u)).collect()
    }

    pub fn normalize(&self, values: &[f64]) -> Vec<f64> {
        self.params.iter().zip(values).map(|(p, &v)| p.unit_of(v)).collect()
    }

    /// Default boosting search space.
    pub fn gbdt_default() -> Self {
        Self {
            params: vec![
                ParamSpec::new("n_trees", 50.0, 500.0, Scale::Log, true),
                ParamSpec::new("max_depth", 2.0, 8.0, Scale::Linear, true),
                ParamSpec::new("learning_rate", 0.01, 0.3, Scale::Log, false),
                ParamSpec::new("l2_lambda", 0.1, 10.0, Scale::Log, false),
                ParamSpec::new("subsample", 0.5, 1.0, Scale::Linear, false),
                ParamSpec::new("colsample", 0.5, 1.0, Scale::Linear, false),
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub index: usize,
    pub unit: Vec<f64>,
    pub values: Vec<f64>,
    /// `+inf` when the objective failed.
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TunerConfig {
    pub budget: usize,
    pub n_init: usize,
    pub candidate_pool: usize,
    pub seed: u64,
}

impl Default for TunerConfig {
    fn default() -> Self {
        Self { budget: 40, n_init: 8, candidate_pool: 1024, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub best: Trial,
    pub history: Vec<Trial>,
}

impl TuneResult {
    /// Header `trial,<param...>,objective`.
    pub fn write_history_csv<W: Write>(&self, out: W, space: &SearchSpace) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["trial".to_string()];
        header.extend(space.params.iter().map(|p| p.name.clone()));
        header.push("objective".into());
        w.write_record(&header)?;
        for t in &self.history {
            let mut row = vec![t.index.to_string()];
            row.extend(t.values.iter().map(f64::to_string));
            row.push(t.objective.to_string());
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

const PRIMES: [u64; 16] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53];

/// Radical inverse of `index` in `base`.
pub fn radical_inverse(mut index: u64, base: u64) -> f64 {
    let mut result = 0.0;
    let mut f = 1.0 / base as f64;
    while index > 0 {
        result += f * (index % base) as f64;
        index /= base;
        f /= base as f64;
    }
    result
}

/// Shifted Halton sequence (Cranley-Patterson rotation by `shift`).
struct Halton {
    next: u64,
    shift: Vec<f64>,
}

impl Halton {
    fn new(dim: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        if dim > PRIMES.len() {
            return Err(Error::invalid(format!("at most {} tuned parameters supported", PRIMES.len())));
        }
        Ok(Self { next: 1, shift: (0..dim).map(|_| rng.random::<f64>()).collect() })
    }

    fn sample(&mut self) -> Vec<f64> {
        let i = self.next;
        self.next += 1;
        self.shift.iter().zip(PRIMES).map(|(s, b)| (radical_inverse(i, b) + s).fract()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpHyper {
    pub length_scale: f64,
    pub signal_var: f64,
    pub noise_var: f64,
}

/// Zero-mean GP regression with a squared-exponential kernel.
#[derive(Debug, Clone)]
pub struct GpModel {
    x: Vec<Vec<f64>>,
    hyper: GpHyper,
    chol: Cholesky,
    alpha: Vec<f64>,
    pub jitter: f64,
    pub log_marginal_likelihood: f64,
}

const MAX_JITTER: f64 = 1e-4;

fn se_kernel(a: &[f64], b: &[f64], h: &GpHyper) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    h.signal_var * (-d2 / (2.0 * h.length_scale * h.length_scale)).exp()
}

impl GpModel {
    pub fn fit(x: &[Vec<f64>], y: &[f64], hyper: GpHyper) -> Result<Self> {
        if x.is_empty() {
            return Err(Error::invalid("GP needs at least one observation"));
        }
        if x.len() != y.len() {
            return Err(Error::LengthMismatch { expected: x.len(), got: y.len() });
        }
        if !(hyper.noise_var >= 1e-8) || !(hyper.length_scale > 0.0) || !(hyper.signal_var > 0.0) {
            return Err(Error::invalid("GP needs length_scale > 0, signal_var > 0, noise_var >= 1e-8"));
        }
        let n = x.len();
        let mut k = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let v = se_kernel(&x[i], &x[j], &hyper);
                k[i * n + j] = v;
                k[j * n + i] = v;
            }
            k[i * n + i] += hyper.noise_var;
        }
        let (chol, jitter) = Cholesky::factor_with_jitter(&k, n, 1e-10, MAX_JITTER)?;
        let alpha = chol.solve(y);
        let fit: f64 = y.iter().zip(&alpha).map(|(a, b)| a * b).sum();
        let log_marginal_likelihood =
            -0.5 * fit - 0.5 * chol.log_det() - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
        Ok(Self { x: x.to_vec(), hyper, chol, alpha, jitter, log_marginal_likelihood })
    }

    /// Posterior mean and latent-function variance at `q`.
    pub fn predict(&self, q: &[f64]) -> (f64, f64) {
        let ks: Vec<f64> = self.x.iter().map(|xi| se_kernel(xi, q, &self.hyper)).collect();
        let mean = ks.iter().zip(&self.alpha).map(|(a, b)| a * b).sum();
        let v = self.chol.solve_lower(&ks);
        let var = self.hyper.signal_var - v.iter().map(|a| a * a).sum::<f64>();
        (mean, var.max(0.0))
    }
}

pub fn gp_posterior(x: &[Vec<f64>], y: &[f64], queries: &[Vec<f64>], hyper: GpHyper) -> Result<Vec<(f64, f64)>> {
    let gp = GpModel::fit(x, y, hyper)?;
    Ok(queries.iter().map(|q| gp.predict(q)).collect())
}

/// Minimization form; 0 when `sd <= 0`.
pub fn expected_improvement(mean: f64, sd: f64, best: f64) -> f64 {
    if !(sd > 0.0) {
        return 0.0;
    }
    let n = Normal::standard();
    let z = (best - mean) / sd;
    ((best - mean) * n.cdf(z) + sd * n.pdf(z)).max(0.0)
}

const LENGTH_SCALES: [f64; 6] = [0.05, 0.1, 0.2, 0.4, 0.8, 1.6];
const NOISE_VARS: [f64; 3] = [1e-6, 1e-3, 1e-1];

/// Grid-search hyperparameters by marginal likelihood on standardized `y`.
fn fit_surrogate(x: &[Vec<f64>], y: &[f64]) -> Result<GpModel> {
    let mut best: Option<GpModel> = None;
    for &length_scale in &LENGTH_SCALES {
        for &noise_var in &NOISE_VARS {
            let hyper = GpHyper { length_scale, signal_var: 1.0, noise_var };
            match GpModel::fit(x, y, hyper) {
                Ok(gp) if best.as_ref().is_none_or(|b| gp.log_marginal_likelihood > b.log_marginal_likelihood) => {
                    best = Some(gp)
                }
                Ok(_) => {}
                Err(e) => log::debug!("GP hyper {hyper:?} skipped: {e}"),
            }
        }
    }
    best.ok_or_else(|| Error::Singular("no GP hyperparameters gave a usable covariance".into()))
}

fn evaluate<F>(objective: &mut F, space: &SearchSpace, unit: &[f64], index: usize) -> Trial
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let values = space.denormalize(unit);
    let unit = space.normalize(&values);
    let objective = match objective(&values) {
        Ok(v) if v.is_finite() => v,
        Ok(v) => {
            log::warn!("trial {index}: objective returned {v}; recorded as +inf");
            f64::INFINITY
        }
        Err(e) => {
            log::warn!("trial {index}: objective failed ({e}); recorded as +inf");
            f64::INFINITY
        }
    };
    log::info!("trial {index}: {values:?} -> {objective}");
    Trial { index, unit, values, objective }
}

fn best_of(history: &[Trial]) -> Result<Trial> {
    history
        .iter()
        .fold(None::<&Trial>, |b, t| match b {
            Some(b) if b.objective <= t.objective => Some(b),
            _ => Some(t),
        })
        .filter(|t| t.objective.is_finite())
        .cloned()
        .ok_or_else(|| Error::data("every trial failed"))
}

/// Minimizes `objective` over `space`. The initial design is `seed_points`
/// (parameter values) followed by shifted Halton points up to `n_init`;
/// later points maximize EI over a seeded uniform candidate pool.
pub fn tune<F>(
    mut objective: F,
    space: &SearchSpace,
    config: &TunerConfig,
    seed_points: &[Vec<f64>],
) -> Result<TuneResult>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    space.validate()?;
    if config.n_init < 2 || config.budget < config.n_init {
        return Err(Error::invalid(format!(
            "need budget >= n_init >= 2, got budget {} and n_init {}",
            config.budget, config.n_init
        )));
    }
    if config.candidate_pool == 0 {
        return Err(Error::invalid("candidate_pool must be >= 1"));
    }
    if let Some(p) = seed_points.iter().find(|p| p.len() != space.dim()) {
        return Err(Error::LengthMismatch { expected: space.dim(), got: p.len() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut halton = Halton::new(space.dim(), &mut rng)?;
    let mut history: Vec<Trial> = Vec::with_capacity(config.budget);

    for p in seed_points.iter().take(config.n_init) {
        let unit = space.normalize(p);
        history.push(evaluate(&mut objective, space, &unit, history.len()));
    }
    while history.len() < config.n_init {
        let unit = halton.sample();
        history.push(evaluate(&mut objective, space, &unit, history.len()));
    }

    while history.len() < config.budget {
        let observed: Vec<&Trial> = history.iter().filter(|t| t.objective.is_finite()).collect();
        let pool: Vec<Vec<f64>> =
            (0..config.candidate_pool).map(|_| (0..space.dim()).map(|_| rng.random::<f64>()).collect()).collect();
        let next = if observed.len() < 2 {
            halton.sample()
        } else {
            let x: Vec<Vec<f64>> = observed.iter().map(|t| t.unit.clone()).collect();
            let raw: Vec<f64> = observed.iter().map(|t| t.objective).collect();
            let mu = raw.iter().sum::<f64>() / raw.len() as f64;
            let sd = (raw.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / raw.len() as f64).sqrt();
            let sd = if sd > 0.0 { sd } else { 1.0 };
            let y: Vec<f64> = raw.iter().map(|v| (v - mu) / sd).collect();
            let best = y.iter().copied().fold(f64::INFINITY, f64::min);
            let gp = fit_surrogate(&x, &y)?;
            let ei = par::map_collect(&pool, |q| {
                let (m, v) = gp.predict(q);
                expected_improvement(m, v.sqrt(), best)
            });
            let pick = ei.iter().enumerate().fold(0, |b, (i, &v)| if v > ei[b] { i } else { b });
            pool[pick].clone()
        };
        history.push(evaluate(&mut objective, space, &next, history.len()));
    }
    Ok(TuneResult { best: best_of(&history)?, history })
}

/// Uniform random search with the same trial bookkeeping, for comparison.
pub fn random_search<F>(mut objective: F, space: &SearchSpace, budget: usize, seed: u64) -> Result<TuneResult>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    space.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut history = Vec::with_capacity(budget);
    for i in 0..budget {
        let unit: Vec<f64> = (0..space.dim()).map(|_| rng.random::<f64>()).collect();
        history.push(evaluate(&mut objective, space, &unit, i));
    }
    Ok(TuneResult { best: best_of(&history)?, history })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_space() -> SearchSpace {
        SearchSpace::new(vec![ParamSpec::new("x", 0.0, 1.0, Scale::Linear, false)]).unwrap()
    }

    #[test]
    fn ei_examples() {
        assert_eq!(expected_improvement(0.0, 0.0, 1.0), 0.0);
        assert!((expected_improvement(-5.0, 1e-6, 1.0) - 6.0).abs() < 1e-9);
        assert!((expected_improvement(1.0, 1.0, 1.0) - 0.398_942_280_401_432_7).abs() < 1e-12);
    }

    #[test]
    fn gp_interpolates_and_reverts() {
        let x = vec![vec![0.2], vec![0.6]];
        let y = vec![1.0, -1.0];
        let h = GpHyper { length_scale: 0.1, signal_var: 1.0, noise_var: 1e-8 };
        let post = gp_posterior(&x, &y, &[vec![0.2], vec![50.0], vec![0.4]], h).unwrap();
        assert!((post[0].0 - 1.0).abs() < 1e-4 && post[0].1 < 1e-4);
        assert!(post[1].0.abs() < 1e-12 && (post[1].1 - 1.0).abs() < 1e-12);
        assert!(post[2].0 > -1.0 && post[2].0 < 1.0);
        assert!(GpModel::fit(&x, &y, GpHyper { noise_var: 0.0, ..h }).is_err());
    }

    #[test]
    fn space_mapping() {
        let s = SearchSpace::gbdt_default();
        let v = s.denormalize(&[0.0, 1.0, 0.5, 0.5, 0.0, 1.0]);
        assert_eq!(v[0], 50.0);
        assert_eq!(v[1], 8.0);
        assert!((v[2] - (0.01f64 * 0.3).sqrt()).abs() < 1e-12);
        assert_eq!(s.denormalize(&s.normalize(&v)), v);
        assert!(SearchSpace::new(vec![ParamSpec::new("a", 0.0, 1.0, Scale::Log, false)]).is_err());
        assert!(SearchSpace::new(vec![ParamSpec::new("a", 1.0, 1.0, Scale::Linear, false)]).is_err());
    }

    #[test]
    fn budget_equal_to_init_and_failures() {
        let cfg = TunerConfig { budget: 5, n_init: 5, candidate_pool: 64, seed: 1 };
        let r = tune(|x| Ok((x[0] - 0.3).powi(2)), &unit_space(), &cfg, &[]).unwrap();
        assert_eq!(r.history.len(), 5);
        let min = r.history.iter().map(|t| t.objective).fold(f64::INFINITY, f64::min);
        assert_eq!(r.best.objective, min);

        let cfg = TunerConfig { budget: 10, n_init: 3, candidate_pool: 64, seed: 2 };
        let r = tune(|x| if x[0] < 0.5 { Err(Error::invalid("boom")) } else { Ok(x[0]) }, &unit_space(), &cfg, &[])
            .unwrap();
        assert_eq!(r.history.len(), 10);
        assert!(r.best.values[0] >= 0.5);
        assert!(r.history.iter().any(|t| t.objective.is_infinite()));
        assert!(tune(|_| Ok(0.0), &unit_space(), &TunerConfig { budget: 1, n_init: 2, ..cfg }, &[]).is_err());
    }

    #[test]
    fn integer_rounding_recorded() {
        let space = SearchSpace::new(vec![ParamSpec::new("k", 1.0, 9.0, Scale::Linear, true)]).unwrap();
        let cfg = TunerConfig { budget: 8, n_init: 3, candidate_pool: 32, seed: 5 };
        let r = tune(|x| Ok((x[0] - 4.0).abs()), &space, &cfg, &[vec![7.0]]).unwrap();
        assert_eq!(r.history[0].values, vec![7.0]);
        for t in &r.history {
            assert_eq!(t.values[0].fract(), 0.0);
            assert_eq!(space.denormalize(&t.unit), t.values);
        }
        let mut buf = Vec::new();
        r.write_history_csv(&mut buf, &space).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 9);
    }
}
