//! Second-order gradient boosting with a softmax objective and exact greedy
//! splits.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;

const MIN_HESSIAN: f64 = 1e-16;

/// Which class wins an exact probability tie. Classes are sorted ascending,
/// so `SmallerDistance` favours flagging a contact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieBreak {
    #[default]
    SmallerDistance,
    LargerDistance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GbdtConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub l2_lambda: f64,
    /// Gamma: subtracted from every candidate split gain.
    pub min_split_gain: f64,
    pub min_child_weight: f64,
    pub subsample: f64,
    pub colsample: f64,
    pub seed: u64,
    pub tie_break: TieBreak,
}

impl Default for GbdtConfig {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_depth: 4,
            learning_rate: 0.1,
            l2_lambda: 1.0,
            min_split_gain: 0.0,
            min_child_weight: 1.0,
            subsample: 1.0,
            colsample: 1.0,
            seed: 0,
            tie_break: TieBreak::SmallerDistance,
        }
    }
}

impl GbdtConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| v > 0.0 && v <= 1.0;
        if self.n_trees == 0 {
            return Err(Error::invalid("n_trees must be >= 1"));
        }
        if self.max_depth == 0 {
            return Err(Error::invalid("max_depth must be >= 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid(format!("learning_rate must be > 0, got {}", self.learning_rate)));
        }
        if !(self.l2_lambda >= 0.0) || !(self.min_split_gain >= 0.0) || !(self.min_child_weight >= 0.0) {
            return Err(Error::invalid("l2_lambda, min_split_gain and min_child_weight must be >= 0"));
        }
        if !unit(self.subsample) || !unit(self.colsample) {
            return Err(Error::invalid("subsample and colsample must lie in (0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Node {
    Split { feature: usize, threshold: f64, left: usize, right: usize },
    Leaf { weight: f64 },
}

/// Nodes in creation order; the root is node 0. Rows with
/// `x[feature] < threshold` go left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, row: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { weight } => return weight,
                Node::Split { feature, threshold, left, right } => {
                    i = if row[feature] < threshold { left } else { right };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbdtModel {
    /// Class labels (distances in metres), ascending.
    pub classes: Vec<f64>,
    pub n_features: usize,
    /// Log class priors.
    pub base_score: Vec<f64>,
    /// `trees[round][class]`.
    pub trees: Vec<Vec<Tree>>,
    pub tie_break: TieBreak,
}

/// A candidate partition of a node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Split {
    pub feature: usize,
    pub threshold: f64,
    pub gain: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct SplitParams {
    pub l2_lambda: f64,
    pub min_split_gain: f64,
    pub min_child_weight: f64,
}

fn score(g: f64, h: f64, lambda: f64) -> f64 {
    g * g / (h + lambda)
}

/// Midpoint between consecutive distinct values, nudged to `b` when rounding
/// would put it on `a`.
pub fn split_threshold(a: f64, b: f64) -> f64 {
    let mid = a + (b - a) / 2.0;
    if mid <= a {
        b
    } else {
        mid
    }
}

/// Best split over `features` given rows sorted per feature. Ties go to the
/// lowest feature index, then the lowest threshold.
fn best_split_sorted(
    x: &[Vec<f64>],
    grad: &[f64],
    hess: &[f64],
    sorted: &[Vec<usize>],
    features: &[usize],
    params: &SplitParams,
) -> Option<Split> {
    let first = features.first().map(|&f| &sorted[f])?;
    let g_total: f64 = first.iter().map(|&i| grad[i]).sum();
    let h_total: f64 = first.iter().map(|&i| hess[i]).sum();
    let parent = score(g_total, h_total, params.l2_lambda);

    let per_feature = par::map_collect(features, |&f| {
        let rows = &sorted[f];
        let mut best: Option<Split> = None;
        let (mut gl, mut hl) = (0.0, 0.0);
        for w in 0..rows.len().saturating_sub(1) {
            let i = rows[w];
            gl += grad[i];
            hl += hess[i];
            let (a, b) = (x[i][f], x[rows[w + 1]][f]);
            if a == b {
                continue;
            }
            let (gr, hr) = (g_total - gl, h_total - hl);
            if hl < params.min_child_weight || hr < params.min_child_weight {
                continue;
            }
            let gain = 0.5 * (score(gl, hl, params.l2_lambda) + score(gr, hr, params.l2_lambda) - parent)
                - params.min_split_gain;
            if best.is_none_or(|s| gain > s.gain) {
                best = Some(Split { feature: f, threshold: split_threshold(a, b), gain });
            }
        }
        best
    });
    per_feature
        .into_iter()
        .flatten()
        .fold(None, |acc: Option<Split>, s| match acc {
            Some(b) if b.gain >= s.gain => Some(b),
            _ => Some(s),
        })
        .filter(|s| s.gain > 0.0)
}

/// Best split of `rows` over `features` (ascending) by exact greedy search.
/// Returns `None` when no split has positive gain.
pub fn find_best_split(
    x: &[Vec<f64>],
    grad: &[f64],
    hess: &[f64],
    rows: &[usize],
    features: &[usize],
    params: &SplitParams,
) -> Option<Split> {
    let n_features = x.first().map_or(0, Vec::len);
    let mut sorted = vec![Vec::new(); n_features];
    for &f in features {
        let mut r = rows.to_vec();
        r.sort_by(|&a, &b| x[a][f].total_cmp(&x[b][f]));
        sorted[f] = r;
    }
    best_split_sorted(x, grad, hess, &sorted, features, params)
}

struct TreeBuilder<'a> {
    x: &'a [Vec<f64>],
    grad: &'a [f64],
    hess: &'a [f64],
    features: &'a [usize],
    params: SplitParams,
    max_depth: usize,
    learning_rate: f64,
    nodes: Vec<Node>,
}

impl TreeBuilder<'_> {
    /// `sorted[f]` holds this node's rows ordered by feature `f`; only the
    /// entries for `self.features` are populated.
    fn build(&mut self, sorted: Vec<Vec<usize>>, depth: usize) -> usize {
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf { weight: 0.0 });
        let rows = &sorted[self.features[0]];
        let g: f64 = rows.iter().map(|&i| self.grad[i]).sum();
        let h: f64 = rows.iter().map(|&i| self.hess[i]).sum();

        let split = if depth < self.max_depth {
            best_split_sorted(self.x, self.grad, self.hess, &sorted, self.features, &self.params)
        } else {
            None
        };
        let Some(split) = split else {
            let weight = -g / (h + self.params.l2_lambda) * self.learning_rate;
            self.nodes[id] = Node::Leaf { weight: if weight.is_finite() { weight } else { 0.0 } };
            return id;
        };

        let goes_left = |i: usize| self.x[i][split.feature] < split.threshold;
        let mut left = vec![Vec::new(); sorted.len()];
        let mut right = vec![Vec::new(); sorted.len()];
        for &f in self.features {
            let (l, r): (Vec<usize>, Vec<usize>) = sorted[f].iter().partition(|&&i| goes_left(i));
            left[f] = l;
            right[f] = r;
        }
        drop(sorted);
        let l = self.build(left, depth + 1);
        let r = self.build(right, depth + 1);
        self.nodes[id] = Node::Split { feature: split.feature, threshold: split.threshold, left: l, right: r };
        id
    }
}

pub(crate) fn softmax_in_place(v: &mut [f64]) {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - m).exp();
        sum += *x;
    }
    v.iter_mut().for_each(|x| *x /= sum);
}

fn check_rows(x: &[Vec<f64>], n_features: usize) -> Result<()> {
    for (r, row) in x.iter().enumerate() {
        if row.len() != n_features {
            return Err(Error::LengthMismatch { expected: n_features, got: row.len() });
        }
        if let Some(c) = row.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite feature at row {r}, column {c}")));
        }
    }
    Ok(())
}

/// Maps each label to its index in the sorted class list.
pub fn class_indices(y: &[f64], classes: &[f64]) -> Result<Vec<usize>> {
    if classes.is_empty() {
        return Err(Error::invalid("class list is empty"));
    }
    if classes.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::invalid("class list must be strictly ascending"));
    }
    y.iter()
        .map(|v| {
            classes
                .iter()
                .position(|c| c == v)
                .ok_or_else(|| Error::invalid(format!("label {v} is not one of the classes {classes:?}")))
        })
        .collect()
}

/// Trains one tree per class per round on softmax gradients
/// `g = p − y`, `h = 2p(1 − p)`.
pub fn gbdt_train(x: &[Vec<f64>], y: &[f64], classes: &[f64], config: &GbdtConfig) -> Result<GbdtModel> {
    config.validate()?;
    if x.len() != y.len() {
        return Err(Error::LengthMismatch { expected: x.len(), got: y.len() });
    }
    if x.len() < 2 {
        return Err(Error::invalid(format!("need at least 2 training rows, got {}", x.len())));
    }
    let n = x.len();
    let n_features = x[0].len();
    if n_features == 0 {
        return Err(Error::invalid("no features"));
    }
    check_rows(x, n_features)?;
    let labels = class_indices(y, classes)?;
    let k = classes.len();
    let mut counts = vec![0usize; k];
    labels.iter().for_each(|&c| counts[c] += 1);
    if let Some(c) = counts.iter().position(|&c| c == 0) {
        return Err(Error::invalid(format!("class {} has no training samples", classes[c])));
    }
    let base_score: Vec<f64> = counts.iter().map(|&c| (c as f64 / n as f64).ln()).collect();

    let mut model = GbdtModel {
        classes: classes.to_vec(),
        n_features,
        base_score: base_score.clone(),
        trees: Vec::new(),
        tie_break: config.tie_break,
    };
    if k == 1 {
        return Ok(model);
    }

    let all_sorted: Vec<Vec<usize>> = par::map_range(n_features, |f| {
        let mut r: Vec<usize> = (0..n).collect();
        r.sort_by(|&a, &b| x[a][f].total_cmp(&x[b][f]));
        r
    });
    let mut raw: Vec<Vec<f64>> = vec![base_score; n];
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let params = SplitParams {
        l2_lambda: config.l2_lambda,
        min_split_gain: config.min_split_gain,
        min_child_weight: config.min_child_weight,
    };
    let n_rows = ((config.subsample * n as f64).round() as usize).clamp(1, n);
    let n_cols = ((config.colsample * n_features as f64).ceil() as usize).clamp(1, n_features);

    for _ in 0..config.n_trees {
        let probs: Vec<Vec<f64>> = par::map_collect(&raw, |r| {
            let mut p = r.clone();
            softmax_in_place(&mut p);
            p
        });
        let in_sample: Option<Vec<bool>> = (n_rows < n).then(|| {
            let mut mask = vec![false; n];
            sample(&mut rng, n, n_rows).into_iter().for_each(|i| mask[i] = true);
            mask
        });
        let mut round = Vec::with_capacity(k);
        for c in 0..k {
            let grad: Vec<f64> = (0..n).map(|i| probs[i][c] - f64::from(u8::from(labels[i] == c))).collect();
            let hess: Vec<f64> = (0..n).map(|i| (2.0 * probs[i][c] * (1.0 - probs[i][c])).max(MIN_HESSIAN)).collect();
            let features: Vec<usize> = if n_cols < n_features {
                let mut f = sample(&mut rng, n_features, n_cols).into_vec();
                f.sort_unstable();
                f
            } else {
                (0..n_features).collect()
            };
            let mut sorted = vec![Vec::new(); n_features];
            for &f in &features {
                sorted[f] = match &in_sample {
                    Some(mask) => all_sorted[f].iter().copied().filter(|&i| mask[i]).collect(),
                    None => all_sorted[f].clone(),
                };
            }
            let mut builder = TreeBuilder {
                x,
                grad: &grad,
                hess: &hess,
                features: &features,
                params,
                max_depth: config.max_depth,
                learning_rate: config.learning_rate,
                nodes: Vec::new(),
            };
            builder.build(sorted, 0);
            round.push(Tree { nodes: builder.nodes });
        }
        for (row, r) in x.iter().zip(raw.iter_mut()) {
            for (c, tree) in round.iter().enumerate() {
                r[c] += tree.predict(row);
            }
        }
        model.trees.push(round);
    }
    Ok(model)
}

impl GbdtModel {
    pub fn n_rounds(&self) -> usize {
        self.trees.len()
    }

    fn raw_score(&self, row: &[f64], rounds: usize) -> Vec<f64> {
        let mut raw = self.base_score.clone();
        for round in self.trees.iter().take(rounds) {
            for (c, tree) in round.iter().enumerate() {
                raw[c] += tree.predict(row);
            }
        }
        raw
    }

    /// Class probabilities using only the first `rounds` boosting rounds.
    pub fn predict_proba_staged(&self, x: &[Vec<f64>], rounds: usize) -> Result<Vec<Vec<f64>>> {
        check_rows(x, self.n_features)?;
        Ok(par::map_collect(x, |row| {
            let mut p = self.raw_score(row, rounds);
            softmax_in_place(&mut p);
            p
        }))
    }

    pub fn predict_proba(&self, x: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        self.predict_proba_staged(x, self.n_rounds())
    }

    pub fn predict_distance(&self, x: &[Vec<f64>]) -> Result<Vec<f64>> {
        Ok(self.predict_proba(x)?.iter().map(|p| distance_from_proba(p, &self.classes, self.tie_break)).collect())
    }

    /// Mean cross-entropy after each round; entry 0 is the base score alone.
    pub fn staged_log_loss(&self, x: &[Vec<f64>], y: &[f64]) -> Result<Vec<f64>> {
        let labels = class_indices(y, &self.classes)?;
        (0..=self.n_rounds())
            .map(|r| {
                let p = self.predict_proba_staged(x, r)?;
                Ok(log_loss(&p, &labels))
            })
            .collect()
    }
}

pub fn log_loss(proba: &[Vec<f64>], labels: &[usize]) -> f64 {
    let total: f64 = proba.iter().zip(labels).map(|(p, &c)| -p[c].max(1e-300).ln()).sum();
    total / proba.len().max(1) as f64
}

/// Argmax class label; exact ties resolved by `tie`.
pub fn distance_from_proba(proba: &[f64], classes: &[f64], tie: TieBreak) -> f64 {
    let mut best = 0;
    for (i, &p) in proba.iter().enumerate().skip(1) {
        let better = match tie {
            TieBreak::SmallerDistance => p > proba[best],
            TieBreak::LargerDistance => p >= proba[best],
        };
        if better {
            best = i;
        }
    }
    classes[best]
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn separable() -> (Vec<Vec<f64>>, Vec<f64>) {
        let x: Vec<Vec<f64>> = (0..100).map(|i| vec![i as f64 / 99.0]).collect();
        let y = x.iter().map(|r| if r[0] > 0.5 { 4.5 } else { 1.8 }).collect();
        (x, y)
    }

    #[test]
    fn separable_task_fits_exactly() {
        let (x, y) = separable();
        let cfg = GbdtConfig { n_trees: 10, max_depth: 1, ..Default::default() };
        let model = gbdt_train(&x, &y, &[1.8, 4.5], &cfg).unwrap();
        assert_eq!(model.predict_distance(&x).unwrap(), y);
        for p in model.predict_proba(&x).unwrap() {
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        assert!(model.trees.iter().flatten().all(|t| t.depth() <= 1));
    }

    #[test]
    fn single_class_model() {
        let x = vec![vec![0.0], vec![1.0], vec![2.0]];
        let model = gbdt_train(&x, &[3.0; 3], &[3.0], &GbdtConfig::default()).unwrap();
        assert_eq!(model.predict_proba(&[vec![9.0]]).unwrap(), vec![vec![1.0]]);
        assert_eq!(model.predict_distance(&[vec![-5.0]]).unwrap(), vec![3.0]);
    }

    #[test]
    fn errors() {
        let x = vec![vec![0.0], vec![1.0]];
        assert!(gbdt_train(&x, &[1.8, 1.8], &[1.8, 4.5], &GbdtConfig::default()).is_err());
        assert!(gbdt_train(&x, &[1.8, 2.0], &[1.8, 4.5], &GbdtConfig::default()).is_err());
        assert!(gbdt_train(&[vec![f64::NAN], vec![1.0]], &[1.8, 4.5], &[1.8, 4.5], &GbdtConfig::default()).is_err());
        assert!(gbdt_train(&x, &[1.8, 4.5], &[4.5, 1.8], &GbdtConfig::default()).is_err());
        let bad = GbdtConfig { learning_rate: 0.0, ..Default::default() };
        assert!(gbdt_train(&x, &[1.8, 4.5], &[1.8, 4.5], &bad).is_err());
        let model = gbdt_train(&x, &[1.8, 4.5], &[1.8, 4.5], &GbdtConfig::default()).unwrap();
        assert!(model.predict_proba(&[vec![0.0, 1.0]]).is_err());
    }

    #[test]
    fn tie_rules() {
        assert_eq!(distance_from_proba(&[0.1, 0.9], &[1.8, 4.5], TieBreak::SmallerDistance), 4.5);
        assert_eq!(distance_from_proba(&[0.5, 0.5], &[1.8, 4.5], TieBreak::SmallerDistance), 1.8);
        assert_eq!(distance_from_proba(&[0.5, 0.5], &[1.8, 4.5], TieBreak::LargerDistance), 4.5);
    }

    #[test]
    fn threshold_between_neighbours() {
        assert_eq!(split_threshold(1.0, 2.0), 1.5);
        let a = 1.0f64;
        let b = f64::from_bits(a.to_bits() + 1);
        let t = split_threshold(a, b);
        assert!(a < t && t <= b);
    }

    #[test]
    fn sampling_is_seeded() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x: Vec<Vec<f64>> = (0..60).map(|_| (0..4).map(|_| rng.random::<f64>()).collect()).collect();
        let y: Vec<f64> = (0..60).map(|i| [1.2, 1.8, 3.0][i % 3]).collect();
        let cfg = GbdtConfig { n_trees: 8, subsample: 0.7, colsample: 0.5, seed: 9, ..Default::default() };
        let a = gbdt_train(&x, &y, &[1.2, 1.8, 3.0], &cfg).unwrap();
        assert_eq!(a, gbdt_train(&x, &y, &[1.2, 1.8, 3.0], &cfg).unwrap());
        let b = gbdt_train(&x, &y, &[1.2, 1.8, 3.0], &GbdtConfig { seed: 10, ..cfg }).unwrap();
        assert_ne!(a, b);
    }
}
