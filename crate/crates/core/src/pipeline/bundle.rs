//! Trained dual-model artifact: one featurizer and learner per grain plus
//! provenance. Stored as JSON; floats round-trip bit-exactly.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event::{ContactEvent, Grain};
use crate::learners::{GbdtModel, RidgeClassifier};

use super::featurize::Featurizer;

pub const BUNDLE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Learner {
    Gbdt(GbdtModel),
    Ridge(RidgeClassifier),
}

impl Learner {
    pub fn n_features(&self) -> usize {
        match self {
            Learner::Gbdt(m) => m.n_features,
            Learner::Ridge(m) => m.n_features(),
        }
    }

    pub fn classes(&self) -> &[f64] {
        match self {
            Learner::Gbdt(m) => &m.classes,
            Learner::Ridge(m) => &m.classes,
        }
    }

    pub fn predict_distance(&self, rows: &[Vec<f64>]) -> Result<Vec<f64>> {
        match self {
            Learner::Gbdt(m) => m.predict_distance(rows),
            Learner::Ridge(m) => m.predict_distance(rows),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrainModel {
    pub featurizer: Featurizer,
    pub learner: Learner,
    pub train_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub config_sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelBundle {
    pub format_version: u32,
    pub provenance: Provenance,
    pub fine: Option<GrainModel>,
    pub coarse: Option<GrainModel>,
}

impl ModelBundle {
    pub fn model(&self, grain: Grain) -> Option<&GrainModel> {
        match grain {
            Grain::Fine => self.fine.as_ref(),
            Grain::Coarse => self.coarse.as_ref(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.format_version != BUNDLE_FORMAT_VERSION {
            return Err(Error::data(format!(
                "bundle format version {} is not supported (expected {BUNDLE_FORMAT_VERSION})",
                self.format_version
            )));
        }
        if self.fine.is_none() && self.coarse.is_none() {
            return Err(Error::data("bundle contains no models"));
        }
        for g in Grain::BOTH {
            if let Some(m) = self.model(g) {
                if m.featurizer.schema.len() != m.learner.n_features() {
                    return Err(Error::data(format!(
                        "{g} model expects {} features but its schema has {}",
                        m.learner.n_features(),
                        m.featurizer.schema.len()
                    )));
                }
                if m.featurizer.grain != g {
                    return Err(Error::data(format!("{g} slot holds a {} featurizer", m.featurizer.grain)));
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<Vec<u8>> {
        let mut bytes = serde_json::to_vec_pretty(self)?;
        bytes.push(b'\n');
        Ok(bytes)
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let bundle: Self = serde_json::from_slice(bytes)?;
        bundle.validate()?;
        Ok(bundle)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read(path)?)
    }

    /// Routes each event to its grain's model. Output is sorted by event id.
    pub fn predict(&self, events: &[ContactEvent]) -> Result<Vec<(String, f64)>> {
        let mut out = BTreeMap::new();
        for g in Grain::BOTH {
            let group: Vec<&ContactEvent> = events.iter().filter(|e| e.metadata.grain == g).collect();
            if group.is_empty() {
                continue;
            }
            let model = self
                .model(g)
                .ok_or_else(|| Error::data(format!("{} {g} events but the bundle has no {g} model", group.len())))?;
            let matrix = model.featurizer.transform(&group)?;
            let predicted = model.learner.predict_distance(&matrix.rows)?;
            for (id, d) in matrix.ids.into_iter().zip(predicted) {
                if out.insert(id.clone(), d).is_some() {
                    return Err(Error::data(format!("duplicate event id {id}")));
                }
            }
        }
        Ok(out.into_iter().collect())
    }
}
