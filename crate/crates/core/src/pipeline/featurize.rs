//! Per-grain feature extraction fitted on training events and replayed at
//! prediction time.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::clustering::{kmeans_fit, kshape_fit, ClusterModel};
use crate::error::{Error, Result};
use crate::event::{ContactEvent, Grain, SensorKind};
use crate::features::{
    baseline_features, coarse_engineered, drop_constant_features, normalization_inputs, per_axis_features,
    FeatureMatrix, FeatureVector, NormStats, BASELINE_FEATURE_NAMES, COARSE_FEATURE_NAMES, STAT_FEATURE_NAMES,
};
use crate::par;
use crate::rocket::{feature_names as rocket_names, generate_kernels, rocket_transform, RocketConfig, RocketKernel};
use crate::series::resample_series;

use super::config::{ClusterAlgorithm, FeatureBlock, FeatureRecipe};

/// Stage seed derived from the pipeline seed and a stage name.
pub fn derive_seed(seed: u64, stage: &str) -> u64 {
    let digest = Sha256::digest(format!("{seed}/{stage}").as_bytes());
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

/// BLE RSSI, or the per-sample magnitude of a multi-channel sensor,
/// resampled to `len`. Missing sensors give zeros.
pub fn univariate_series(event: &ContactEvent, sensor: SensorKind, len: usize) -> Result<Vec<f64>> {
    let Some(s) = event.get(sensor).filter(|s| !s.is_empty()) else {
        return Ok(vec![0.0; len]);
    };
    let values = if sensor.arity() == 1 { s.channel(0) } else { s.magnitude() };
    if values.len() == 1 {
        return Ok(vec![values[0]; len]);
    }
    resample_series(&values, len)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorClusters {
    pub sensor: SensorKind,
    pub model: ClusterModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocketState {
    pub sensor: SensorKind,
    pub series_len: usize,
    pub kernels: Vec<RocketKernel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Featurizer {
    pub grain: Grain,
    pub recipe: FeatureRecipe,
    pub norm: NormStats,
    pub clusters: Vec<SensorClusters>,
    pub rocket: Option<RocketState>,
    /// Output columns, after constant-column removal.
    pub schema: Vec<String>,
    /// Columns constant on the training events.
    pub dropped: Vec<String>,
}

pub fn cluster_feature_name(sensor: SensorKind) -> String {
    format!("cluster_{sensor}")
}

/// Every column the recipe can emit, in canonical order.
pub fn recipe_feature_names(recipe: &FeatureRecipe) -> Vec<String> {
    let mut names = Vec::new();
    for block in &recipe.blocks {
        match block {
            FeatureBlock::Baseline => names.extend(BASELINE_FEATURE_NAMES.iter().map(|s| s.to_string())),
            FeatureBlock::PerAxis => {
                for kind in &recipe.sensors {
                    for axis in kind.axis_names() {
                        names.extend(STAT_FEATURE_NAMES.iter().map(|f| format!("{kind}_{axis}_{f}")));
                    }
                }
            }
            FeatureBlock::CoarseEngineered => names.extend(COARSE_FEATURE_NAMES.iter().map(|s| s.to_string())),
            FeatureBlock::Cluster => {
                if let Some(c) = &recipe.cluster {
                    names.extend(c.sensors.iter().map(|&s| cluster_feature_name(s)));
                }
            }
            FeatureBlock::Rocket => {
                if let Some(r) = &recipe.rocket {
                    names.extend(rocket_names(r.num_kernels).into_iter().map(|n| format!("rocket_{}_{n}", r.sensor)));
                }
            }
        }
    }
    names
}

fn check_grain(events: &[&ContactEvent], grain: Grain) -> Result<()> {
    match events.iter().find(|e| e.metadata.grain != grain) {
        Some(e) => Err(Error::invalid(format!("event {} is {} grain, featurizer is {grain}", e.id, e.metadata.grain))),
        None => Ok(()),
    }
}

impl Featurizer {
    /// Fits normalizer, cluster models and kernels on `events`, then returns
    /// the featurizer with its training matrix.
    pub fn fit(
        grain: Grain,
        recipe: &FeatureRecipe,
        events: &[&ContactEvent],
        seed: u64,
    ) -> Result<(Self, FeatureMatrix)> {
        recipe.validate()?;
        if events.is_empty() {
            return Err(Error::invalid(format!("no {grain} training events")));
        }
        check_grain(events, grain)?;
        let inputs = par::try_map_collect(events, |e| normalization_inputs(e, &recipe.tx_power_dbm))?;
        let norm = NormStats::fit_vectors(&inputs)?;

        let mut clusters = Vec::new();
        if let (true, Some(cfg)) = (recipe.blocks.contains(&FeatureBlock::Cluster), &recipe.cluster) {
            for &sensor in &cfg.sensors {
                let series = par::try_map_collect(events, |e| univariate_series(e, sensor, cfg.series_len))?;
                let k = cfg.k_for(sensor);
                let s = derive_seed(seed, &format!("{grain}/cluster/{sensor}"));
                let model = match cfg.algorithm {
                    ClusterAlgorithm::Kshape => kshape_fit(&series, k, s, cfg.max_iter)?,
                    ClusterAlgorithm::Kmeans => kmeans_fit(&series, k, s, cfg.max_iter, cfg.kmeans_metric)?,
                };
                log::info!("{grain}: {sensor} clustered into {k} groups, inertia {:.4}", model.inertia);
                clusters.push(SensorClusters { sensor, model });
            }
        }
        let rocket = match (recipe.blocks.contains(&FeatureBlock::Rocket), &recipe.rocket) {
            (true, Some(cfg)) => {
                let rc =
                    RocketConfig { num_kernels: cfg.num_kernels, seed: derive_seed(seed, &format!("{grain}/rocket")) };
                Some(RocketState {
                    sensor: cfg.sensor,
                    series_len: cfg.series_len,
                    kernels: generate_kernels(&rc, cfg.series_len)?,
                })
            }
            _ => None,
        };

        let mut featurizer = Self {
            grain,
            recipe: recipe.clone(),
            norm,
            clusters,
            rocket,
            schema: recipe_feature_names(recipe),
            dropped: Vec::new(),
        };
        let full = featurizer.matrix(events, &featurizer.schema)?;
        let (matrix, dropped) = drop_constant_features(&full)?;
        if !dropped.is_empty() {
            log::info!("{grain}: dropped {} constant columns", dropped.len());
        }
        featurizer.schema = matrix.names.clone();
        featurizer.dropped = dropped;
        Ok((featurizer, matrix))
    }

    fn raw_vectors(&self, events: &[&ContactEvent]) -> Result<Vec<FeatureVector>> {
        let r = &self.recipe;
        let mut vectors = par::try_map_collect(events, |e| -> Result<FeatureVector> {
            let mut fv = FeatureVector::default();
            for block in &r.blocks {
                match block {
                    FeatureBlock::Baseline => fv.extend(baseline_features(e, &self.norm, &r.tx_power_dbm)?),
                    FeatureBlock::PerAxis => fv.extend(per_axis_features(e, &r.sensors, &r.stats, &r.count_above)?),
                    FeatureBlock::CoarseEngineered => fv.extend(coarse_engineered(e, &self.norm)),
                    FeatureBlock::Cluster | FeatureBlock::Rocket => {}
                }
            }
            Ok(fv)
        })?;

        for c in &self.clusters {
            let len = c.model.series_len();
            let series = par::try_map_collect(events, |e| univariate_series(e, c.sensor, len))?;
            let labels = c.model.assign(&series)?;
            let name = cluster_feature_name(c.sensor);
            for (fv, label) in vectors.iter_mut().zip(labels) {
                fv.push(name.clone(), label as f64);
            }
        }
        if let Some(rs) = &self.rocket {
            let series = par::try_map_collect(events, |e| univariate_series(e, rs.sensor, rs.series_len))?;
            let rows = rocket_transform(&series, &rs.kernels)?;
            let names: Vec<String> =
                rocket_names(rs.kernels.len()).into_iter().map(|n| format!("rocket_{}_{n}", rs.sensor)).collect();
            for (fv, row) in vectors.iter_mut().zip(rows) {
                for (n, v) in names.iter().zip(row) {
                    fv.push(n.clone(), v);
                }
            }
        }
        Ok(vectors)
    }

    fn matrix(&self, events: &[&ContactEvent], schema: &[String]) -> Result<FeatureMatrix> {
        let kept: BTreeSet<&str> = schema.iter().map(String::as_str).collect();
        let known: BTreeSet<&str> = schema.iter().chain(&self.dropped).map(String::as_str).collect();
        let vectors = self.raw_vectors(events)?;
        let mut extra = BTreeSet::new();
        let filtered: Vec<FeatureVector> = vectors
            .into_iter()
            .map(|fv| {
                let mut out = FeatureVector::default();
                for (n, v) in fv.iter() {
                    if kept.contains(n) {
                        out.push(n, v);
                    } else if !known.contains(n) {
                        extra.insert(n.to_string());
                    }
                }
                out
            })
            .collect();
        if !extra.is_empty() {
            return Err(Error::SchemaMismatch { missing: Vec::new(), extra: extra.into_iter().collect() });
        }
        let ids = events.iter().map(|e| e.id.clone()).collect();
        FeatureMatrix::from_vectors(ids, &filtered, Some(schema))
    }

    /// Features for new events in the fitted schema. Columns an event cannot
    /// produce (absent sensors) are 0, as in training.
    pub fn transform(&self, events: &[&ContactEvent]) -> Result<FeatureMatrix> {
        check_grain(events, self.grain)?;
        let expected = recipe_feature_names(&self.recipe);
        let recorded: BTreeSet<&String> = self.schema.iter().chain(&self.dropped).collect();
        let stale: Vec<String> = expected.iter().filter(|n| !recorded.contains(n)).cloned().collect();
        if !stale.is_empty() {
            return Err(Error::SchemaMismatch { missing: stale, extra: Vec::new() });
        }
        self.matrix(events, &self.schema)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::config::{ClusterBlockConfig, RocketBlockConfig};
    use crate::pipeline::synth::{generate_corpus, SyntheticSpec};

    fn events(grain: Grain, n: usize) -> Vec<ContactEvent> {
        let coarse_fraction = if grain == Grain::Coarse { 1.0 } else { 0.0 };
        generate_corpus(&SyntheticSpec { n_events: n, coarse_fraction, ..Default::default() })
            .unwrap()
            .into_iter()
            .map(|(e, _)| e)
            .collect()
    }

    #[test]
    fn fine_and_coarse_recipes() {
        let fine = events(Grain::Fine, 10);
        let refs: Vec<&ContactEvent> = fine.iter().collect();
        let (f, m) = Featurizer::fit(Grain::Fine, &FeatureRecipe::fine(), &refs, 1).unwrap();
        assert_eq!(m.n_rows(), 10);
        assert!(m.names.iter().any(|n| n == "GYR_y_energy"));
        assert!(!m.names.iter().any(|n| n == "grain_flag"), "constant grain flag is dropped");
        assert_eq!(f.transform(&refs).unwrap(), m);

        let coarse = events(Grain::Coarse, 10);
        let refs: Vec<&ContactEvent> = coarse.iter().collect();
        let (_, m) = Featurizer::fit(Grain::Coarse, &FeatureRecipe::coarse(), &refs, 1).unwrap();
        for name in COARSE_FEATURE_NAMES {
            assert!(m.names.iter().any(|n| n == name), "{name}");
        }
        assert!(Featurizer::fit(Grain::Fine, &FeatureRecipe::fine(), &refs, 1).is_err());
    }

    #[test]
    fn cluster_and_rocket_blocks() {
        let fine = events(Grain::Fine, 24);
        let refs: Vec<&ContactEvent> = fine.iter().collect();
        let recipe = FeatureRecipe {
            blocks: vec![FeatureBlock::Baseline, FeatureBlock::Cluster, FeatureBlock::Rocket],
            cluster: Some(ClusterBlockConfig {
                sensors: vec![SensorKind::Acc, SensorKind::Ble],
                default_k: Some(3),
                ..Default::default()
            }),
            rocket: Some(RocketBlockConfig { num_kernels: 5, ..Default::default() }),
            ..FeatureRecipe::fine()
        };
        let (f, m) = Featurizer::fit(Grain::Fine, &recipe, &refs, 2).unwrap();
        let col = m.names.iter().position(|n| n == "cluster_ACC").unwrap();
        assert!(m.column(col).all(|v| v == v.trunc() && (0.0..3.0).contains(&v)));
        assert!(m.names.iter().any(|n| n == "rocket_BLE_k4_ppv"));
        assert_eq!(f.transform(&refs[..5]).unwrap().rows, m.rows[..5].to_vec());
        let json = serde_json::to_string(&f).unwrap();
        assert_eq!(serde_json::from_str::<Featurizer>(&json).unwrap(), f);
    }

    #[test]
    fn univariate_handles_short_and_missing() {
        let fine = events(Grain::Fine, 1);
        assert_eq!(univariate_series(&fine[0], SensorKind::Gra, 8).unwrap(), vec![0.0; 8]);
        assert_eq!(univariate_series(&fine[0], SensorKind::Ble, 16).unwrap().len(), 16);
        assert_ne!(derive_seed(1, "a"), derive_seed(1, "b"));
    }
}
