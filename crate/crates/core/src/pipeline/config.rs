use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::clustering::KMeansMetric;
use crate::error::{Error, Result};
use crate::eval::EvalProtocol;
use crate::event::{Grain, SensorKind};
use crate::features::{StatConfig, TxPowerMap};
use crate::learners::GbdtConfig;
use crate::tuner::{SearchSpace, TunerConfig};

use super::synth::SyntheticSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureBlock {
    Baseline,
    PerAxis,
    CoarseEngineered,
    Cluster,
    Rocket,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterAlgorithm {
    Kshape,
    Kmeans,
}

/// Cluster-label block: one label column `cluster_<SENSOR>` per sensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterBlockConfig {
    pub sensors: Vec<SensorKind>,
    pub algorithm: ClusterAlgorithm,
    /// Per-sensor cluster counts; sensors not listed use `default_k`.
    pub k: BTreeMap<SensorKind, usize>,
    /// Fallback count; when unset, 14 for K-Shape and 4 for K-Means.
    pub default_k: Option<usize>,
    pub series_len: usize,
    pub max_iter: usize,
    pub kmeans_metric: KMeansMetric,
}

impl Default for ClusterBlockConfig {
    fn default() -> Self {
        Self {
            sensors: vec![SensorKind::Acc],
            algorithm: ClusterAlgorithm::Kshape,
            k: BTreeMap::new(),
            default_k: None,
            series_len: 64,
            max_iter: 100,
            kmeans_metric: KMeansMetric::Euclidean,
        }
    }
}

impl ClusterBlockConfig {
    pub fn k_for(&self, sensor: SensorKind) -> usize {
        let fallback = match self.algorithm {
            ClusterAlgorithm::Kshape => 14,
            ClusterAlgorithm::Kmeans => 4,
        };
        self.k.get(&sensor).copied().or(self.default_k).unwrap_or(fallback)
    }
}

/// ROCKET block over one univariate channel (BLE RSSI or an IMU magnitude).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RocketBlockConfig {
    pub sensor: SensorKind,
    pub num_kernels: usize,
    pub series_len: usize,
}

impl Default for RocketBlockConfig {
    fn default() -> Self {
        Self { sensor: SensorKind::Ble, num_kernels: 100, series_len: 64 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureRecipe {
    pub blocks: Vec<FeatureBlock>,
    /// Sensors for the per-axis statistical block.
    pub sensors: Vec<SensorKind>,
    pub stats: StatConfig,
    /// `count_above_s` threshold per sensor; others use `stats.count_above_threshold`.
    pub count_above: BTreeMap<SensorKind, f64>,
    pub tx_power_dbm: TxPowerMap,
    pub cluster: Option<ClusterBlockConfig>,
    pub rocket: Option<RocketBlockConfig>,
}

impl Default for FeatureRecipe {
    fn default() -> Self {
        Self::fine()
    }
}

impl FeatureRecipe {
    pub fn fine() -> Self {
        Self {
            blocks: vec![FeatureBlock::Baseline, FeatureBlock::PerAxis],
            sensors: vec![SensorKind::Ble, SensorKind::Acc, SensorKind::Gyr, SensorKind::Att],
            stats: StatConfig::default(),
            count_above: BTreeMap::from([(SensorKind::Ble, -70.0)]),
            tx_power_dbm: TxPowerMap::default(),
            cluster: None,
            rocket: None,
        }
    }

    pub fn coarse() -> Self {
        Self { blocks: vec![FeatureBlock::Baseline, FeatureBlock::CoarseEngineered], ..Self::fine() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.blocks.is_empty() {
            return Err(Error::invalid("feature recipe has no blocks"));
        }
        if self.blocks.contains(&FeatureBlock::Cluster) && self.cluster.is_none() {
            return Err(Error::invalid("recipe lists the cluster block but has no [cluster] settings"));
        }
        if self.blocks.contains(&FeatureBlock::Rocket) && self.rocket.is_none() {
            return Err(Error::invalid("recipe lists the rocket block but has no [rocket] settings"));
        }
        if let Some(c) = &self.cluster {
            if c.sensors.is_empty() || c.series_len < 2 || c.sensors.iter().any(|&s| c.k_for(s) == 0) {
                return Err(Error::invalid("cluster block needs sensors, series_len >= 2 and k >= 1"));
            }
        }
        if let Some(r) = &self.rocket {
            if r.series_len < 7 || r.num_kernels == 0 {
                return Err(Error::invalid("rocket block needs series_len >= 7 and num_kernels >= 1"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearnerKind {
    Gbdt,
    Ridge,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearnerConfig {
    pub kind: LearnerKind,
    /// Distance classes in metres, ascending.
    pub classes: Vec<f64>,
    pub gbdt: GbdtConfig,
    /// Fixed ridge alpha; leave-one-out selection when absent.
    pub ridge_alpha: Option<f64>,
}

impl LearnerConfig {
    pub fn for_grain(grain: Grain) -> Self {
        let classes = match grain {
            Grain::Fine => vec![1.2, 1.8, 3.0, 4.5],
            Grain::Coarse => vec![1.8, 4.5],
        };
        Self { kind: LearnerKind::Gbdt, classes, gbdt: GbdtConfig::default(), ridge_alpha: None }
    }
}

impl Default for LearnerConfig {
    fn default() -> Self {
        Self::for_grain(Grain::Fine)
    }
}

/// Per-grain defaults for [`GrainSettings`] entries missing from a config.
pub trait GrainDefault: Sized {
    fn grain_default(grain: Grain) -> Self;

    fn fine_default() -> Self {
        Self::grain_default(Grain::Fine)
    }

    fn coarse_default() -> Self {
        Self::grain_default(Grain::Coarse)
    }
}

impl GrainDefault for FeatureRecipe {
    fn grain_default(grain: Grain) -> Self {
        match grain {
            Grain::Fine => Self::fine(),
            Grain::Coarse => Self::coarse(),
        }
    }
}

impl GrainDefault for LearnerConfig {
    fn grain_default(grain: Grain) -> Self {
        Self::for_grain(grain)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, bound(deserialize = "T: Deserialize<'de> + GrainDefault"))]
pub struct GrainSettings<T> {
    #[serde(default = "T::fine_default")]
    pub fine: T,
    #[serde(default = "T::coarse_default")]
    pub coarse: T,
}

impl<T> GrainSettings<T> {
    pub fn get(&self, grain: Grain) -> &T {
        match grain {
            Grain::Fine => &self.fine,
            Grain::Coarse => &self.coarse,
        }
    }

    pub fn get_mut(&mut self, grain: Grain) -> &mut T {
        match grain {
            Grain::Fine => &mut self.fine,
            Grain::Coarse => &mut self.coarse,
        }
    }
}

impl<T: GrainDefault> Default for GrainSettings<T> {
    fn default() -> Self {
        Self { fine: T::fine_default(), coarse: T::coarse_default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TuneSettings {
    pub tuner: TunerConfig,
    pub holdout_fraction: f64,
    pub space: SearchSpace,
}

impl Default for TuneSettings {
    fn default() -> Self {
        Self { tuner: TunerConfig::default(), holdout_fraction: 0.25, space: SearchSpace::gbdt_default() }
    }
}

/// Locations used by the CLI; every entry can be overridden on the command line.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    /// Directory of `<event_id>.txt` files.
    pub data_dir: Option<PathBuf>,
    pub key_file: Option<PathBuf>,
    pub features_dir: Option<PathBuf>,
    pub bundle: Option<PathBuf>,
    pub predictions: Option<PathBuf>,
    pub report_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Largest fraction of unparsable event files tolerated.
    pub max_skip_fraction: f64,
    pub paths: PathsConfig,
    pub features: GrainSettings<FeatureRecipe>,
    pub learner: GrainSettings<LearnerConfig>,
    pub tune: TuneSettings,
    pub eval: EvalProtocol,
    pub gen: SyntheticSpec,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            max_skip_fraction: 0.1,
            paths: PathsConfig::default(),
            features: GrainSettings::default(),
            learner: GrainSettings::default(),
            tune: TuneSettings::default(),
            eval: EvalProtocol::default(),
            gen: SyntheticSpec::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::invalid(format!("config serialization: {e}")))
    }

    /// SHA-256 of the canonical TOML rendering, hex encoded.
    pub fn digest(&self) -> Result<String> {
        Ok(sha256_hex(self.to_toml()?.as_bytes()))
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.max_skip_fraction) {
            return Err(Error::invalid("max_skip_fraction must lie in [0, 1]"));
        }
        for g in Grain::BOTH {
            self.features.get(g).validate()?;
            self.learner.get(g).gbdt.validate()?;
        }
        self.eval.validate()?;
        self.tune.space.validate()?;
        if !(self.tune.holdout_fraction > 0.0 && self.tune.holdout_fraction < 1.0) {
            return Err(Error::invalid("holdout_fraction must lie in (0, 1)"));
        }
        self.gen.validate()
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}
