//! The six pipeline stages, each with an in-memory core and a file-level
//! wrapper used by the CLI.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::eval::{
    evaluate, join_records, read_key, read_predictions, write_predictions, EvalProtocol, EvalReport, KeyEntry,
    TrialRecord,
};
use crate::event::{parse_event_file, ContactEvent, Grain};
use crate::features::{write_schema, FeatureMatrix};
use crate::learners::{gbdt_train, AlphaChoice, GbdtConfig, RidgeClassifier};
use crate::par;
use crate::tuner::{tune, SearchSpace, TuneResult, TunerConfig};

use super::bundle::{GrainModel, Learner, ModelBundle, Provenance, BUNDLE_FORMAT_VERSION};
use super::config::{LearnerConfig, LearnerKind, PipelineConfig};
use super::featurize::{derive_seed, Featurizer};
use super::synth::{generate_corpus, write_corpus, SyntheticSpec};

pub const FEATURIZER_FILE: &str = "featurizer.json";

pub fn features_file(grain: Grain) -> String {
    format!("{grain}_features.csv")
}

pub fn schema_file(grain: Grain) -> String {
    format!("{grain}_schema.txt")
}

/// Fitted featurizer and training matrix per grain; absent grains are `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct Featurized {
    pub fine: Option<(Featurizer, FeatureMatrix)>,
    pub coarse: Option<(Featurizer, FeatureMatrix)>,
}

impl Featurized {
    pub fn get(&self, grain: Grain) -> Option<&(Featurizer, FeatureMatrix)> {
        match grain {
            Grain::Fine => self.fine.as_ref(),
            Grain::Coarse => self.coarse.as_ref(),
        }
    }
}

pub fn cmd_gen(spec: &SyntheticSpec, out_dir: &Path) -> Result<Vec<(ContactEvent, KeyEntry)>> {
    let corpus = generate_corpus(spec)?;
    write_corpus(out_dir, &corpus)?;
    log::info!("wrote {} events to {}", corpus.len(), out_dir.display());
    Ok(corpus)
}

/// Parses every `*.txt` in `dir`, skipping unparsable files. Fails when more
/// than `max_skip_fraction` of the files are skipped. Sorted by id.
pub fn load_corpus(dir: &Path, max_skip_fraction: f64) -> Result<Vec<ContactEvent>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::data(format!("cannot read event directory {}: {e}", dir.display())))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "txt"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::data(format!("no event files in {}", dir.display())));
    }
    let parsed = par::map_collect(&paths, |p| {
        let id = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let result = std::fs::read_to_string(p).map_err(Error::from).and_then(|text| parse_event_file(&id, &text));
        (id, result)
    });
    let total = parsed.len();
    let mut events = Vec::with_capacity(total);
    let mut skipped = 0;
    for (id, result) in parsed {
        match result {
            Ok(e) => events.push(e),
            Err(e) => {
                log::warn!("skipping event {id}: {e}");
                skipped += 1;
            }
        }
    }
    if skipped as f64 > max_skip_fraction * total as f64 {
        return Err(Error::data(format!(
            "{skipped} of {total} event files failed to parse (limit {:.0}%)",
            max_skip_fraction * 100.0
        )));
    }
    events.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(events)
}

/// Fits one featurizer per grain present in `events`.
pub fn featurize_events(config: &PipelineConfig, events: &[ContactEvent]) -> Result<Featurized> {
    let mut out = Featurized { fine: None, coarse: None };
    for g in Grain::BOTH {
        let mut group: Vec<&ContactEvent> = events.iter().filter(|e| e.metadata.grain == g).collect();
        if group.is_empty() {
            log::warn!("no {g} events; {g} model will be absent");
            continue;
        }
        group.sort_by(|a, b| a.id.cmp(&b.id));
        let fitted = Featurizer::fit(g, config.features.get(g), &group, config.seed)?;
        log::info!("{g}: {} events x {} features", fitted.1.n_rows(), fitted.1.n_cols());
        match g {
            Grain::Fine => out.fine = Some(fitted),
            Grain::Coarse => out.coarse = Some(fitted),
        }
    }
    if out.fine.is_none() && out.coarse.is_none() {
        return Err(Error::data("no events to featurize"));
    }
    Ok(out)
}

/// Writes `<grain>_features.csv`, `<grain>_schema.txt` and `featurizer.json`.
pub fn cmd_featurize(config: &PipelineConfig, data_dir: &Path, out_dir: &Path) -> Result<Featurized> {
    let events = load_corpus(data_dir, config.max_skip_fraction)?;
    let featurized = featurize_events(config, &events)?;
    std::fs::create_dir_all(out_dir)?;
    let mut featurizers = BTreeMap::new();
    for g in Grain::BOTH {
        if let Some((f, m)) = featurized.get(g) {
            m.write_csv(BufWriter::new(File::create(out_dir.join(features_file(g)))?))?;
            write_schema(BufWriter::new(File::create(out_dir.join(schema_file(g)))?), &f.schema)?;
            featurizers.insert(g, f);
        }
    }
    let mut json = serde_json::to_vec_pretty(&featurizers)?;
    json.push(b'\n');
    std::fs::write(out_dir.join(FEATURIZER_FILE), json)?;
    Ok(featurized)
}

/// Reads what [`cmd_featurize`] wrote.
pub fn read_featurized(dir: &Path) -> Result<Featurized> {
    let text = std::fs::read(dir.join(FEATURIZER_FILE))
        .map_err(|e| Error::data(format!("cannot read {}: {e}", dir.join(FEATURIZER_FILE).display())))?;
    let mut featurizers: BTreeMap<Grain, Featurizer> = serde_json::from_slice(&text)?;
    let mut out = Featurized { fine: None, coarse: None };
    for g in Grain::BOTH {
        if let Some(f) = featurizers.remove(&g) {
            let m = FeatureMatrix::read_csv(BufReader::new(File::open(dir.join(features_file(g)))?))?;
            if m.names != f.schema {
                return Err(Error::data(format!("{g} feature matrix columns do not match the featurizer schema")));
            }
            match g {
                Grain::Fine => out.fine = Some((f, m)),
                Grain::Coarse => out.coarse = Some((f, m)),
            }
        }
    }
    Ok(out)
}

pub fn read_key_file(path: &Path) -> Result<BTreeMap<String, KeyEntry>> {
    let file = File::open(path).map_err(|e| Error::data(format!("cannot open key file {}: {e}", path.display())))?;
    read_key(BufReader::new(file))
}

fn labels_for(matrix: &FeatureMatrix, key: &BTreeMap<String, KeyEntry>) -> Result<Vec<f64>> {
    let missing: Vec<&str> = matrix.ids.iter().filter(|id| !key.contains_key(*id)).map(String::as_str).collect();
    if !missing.is_empty() {
        return Err(Error::data(format!("missing labels for: {}", missing.join(", "))));
    }
    Ok(matrix.ids.iter().map(|id| key[id].distance_m).collect())
}

pub fn fit_learner(cfg: &LearnerConfig, gbdt: &GbdtConfig, rows: &[Vec<f64>], y: &[f64]) -> Result<Learner> {
    Ok(match cfg.kind {
        LearnerKind::Gbdt => Learner::Gbdt(gbdt_train(rows, y, &cfg.classes, gbdt)?),
        LearnerKind::Ridge => {
            let alpha = cfg.ridge_alpha.map_or(AlphaChoice::LeaveOneOut, AlphaChoice::Fixed);
            Learner::Ridge(RidgeClassifier::fit(rows, y, &cfg.classes, alpha)?)
        }
    })
}

fn grain_gbdt(config: &PipelineConfig, grain: Grain) -> GbdtConfig {
    let base = &config.learner.get(grain).gbdt;
    GbdtConfig { seed: derive_seed(config.seed, &format!("{grain}/gbdt")) ^ base.seed, ..base.clone() }
}

/// Trains both grain models from featurized data.
pub fn train_models(
    config: &PipelineConfig,
    featurized: &Featurized,
    key: &BTreeMap<String, KeyEntry>,
) -> Result<ModelBundle> {
    let mut bundle = ModelBundle {
        format_version: BUNDLE_FORMAT_VERSION,
        provenance: Provenance { seed: config.seed, config_sha256: config.digest()? },
        fine: None,
        coarse: None,
    };
    for g in Grain::BOTH {
        let Some((featurizer, matrix)) = featurized.get(g) else { continue };
        let y = labels_for(matrix, key)?;
        let learner = fit_learner(config.learner.get(g), &grain_gbdt(config, g), &matrix.rows, &y)?;
        let predicted = learner.predict_distance(&matrix.rows)?;
        let correct = predicted.iter().zip(&y).filter(|(p, t)| p == t).count();
        let train_accuracy = correct as f64 / y.len() as f64;
        log::info!("{g}: training accuracy {train_accuracy:.4} on {} events", y.len());
        let model = GrainModel { featurizer: featurizer.clone(), learner, train_accuracy };
        match g {
            Grain::Fine => bundle.fine = Some(model),
            Grain::Coarse => bundle.coarse = Some(model),
        }
    }
    bundle.validate()?;
    Ok(bundle)
}

/// Featurize and train in one step.
pub fn train_pipeline(
    config: &PipelineConfig,
    events: &[ContactEvent],
    key: &BTreeMap<String, KeyEntry>,
) -> Result<ModelBundle> {
    train_models(config, &featurize_events(config, events)?, key)
}

pub fn cmd_train(
    config: &PipelineConfig,
    features_dir: &Path,
    key_file: &Path,
    bundle_path: &Path,
) -> Result<ModelBundle> {
    let featurized = read_featurized(features_dir)?;
    let bundle = train_models(config, &featurized, &read_key_file(key_file)?)?;
    bundle.save(bundle_path)?;
    Ok(bundle)
}

pub fn cmd_predict(
    bundle_path: &Path,
    data_dir: &Path,
    out: &Path,
    max_skip_fraction: f64,
) -> Result<Vec<(String, f64)>> {
    let bundle = ModelBundle::load(bundle_path)?;
    let events = load_corpus(data_dir, max_skip_fraction)?;
    let predictions = bundle.predict(&events)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    write_predictions(BufWriter::new(File::create(out)?), &predictions)?;
    Ok(predictions)
}

pub fn score_predictions(
    predictions: &[(String, f64)],
    key: &BTreeMap<String, KeyEntry>,
    protocol: &EvalProtocol,
) -> Result<EvalReport> {
    evaluate(&join_records(predictions, key)?, protocol)
}

/// Writes `report.txt` and `report.csv` under `out_dir`.
pub fn cmd_score(predictions: &Path, key_file: &Path, protocol: &EvalProtocol, out_dir: &Path) -> Result<EvalReport> {
    let file =
        File::open(predictions).map_err(|e| Error::data(format!("cannot open {}: {e}", predictions.display())))?;
    let preds = read_predictions(BufReader::new(file))?;
    let report = score_predictions(&preds, &read_key_file(key_file)?, protocol)?;
    std::fs::create_dir_all(out_dir)?;
    std::fs::write(out_dir.join("report.txt"), report.to_text())?;
    report.write_csv(BufWriter::new(File::create(out_dir.join("report.csv"))?))?;
    Ok(report)
}

/// Overwrites the named boosting parameters.
pub fn apply_params(base: &GbdtConfig, space: &SearchSpace, values: &[f64]) -> Result<GbdtConfig> {
    let mut cfg = base.clone();
    for (p, &v) in space.params.iter().zip(values) {
        match p.name.as_str() {
            "n_trees" => cfg.n_trees = v as usize,
            "max_depth" => cfg.max_depth = v as usize,
            "learning_rate" => cfg.learning_rate = v,
            "l2_lambda" => cfg.l2_lambda = v,
            "min_split_gain" => cfg.min_split_gain = v,
            "min_child_weight" => cfg.min_child_weight = v,
            "subsample" => cfg.subsample = v,
            "colsample" => cfg.colsample = v,
            other => return Err(Error::invalid(format!("unknown tuning parameter `{other}`"))),
        }
    }
    Ok(cfg)
}

fn params_of(cfg: &GbdtConfig, space: &SearchSpace) -> Result<Vec<f64>> {
    space
        .params
        .iter()
        .map(|p| {
            Ok(match p.name.as_str() {
                "n_trees" => cfg.n_trees as f64,
                "max_depth" => cfg.max_depth as f64,
                "learning_rate" => cfg.learning_rate,
                "l2_lambda" => cfg.l2_lambda,
                "min_split_gain" => cfg.min_split_gain,
                "min_child_weight" => cfg.min_child_weight,
                "subsample" => cfg.subsample,
                "colsample" => cfg.colsample,
                other => return Err(Error::invalid(format!("unknown tuning parameter `{other}`"))),
            })
        })
        .collect()
}

/// Stratified split; every class keeps at least one row on each side.
fn holdout_split(y: &[f64], classes: &[f64], fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut hold) = (Vec::new(), Vec::new());
    for &c in classes {
        let mut idx: Vec<usize> = (0..y.len()).filter(|&i| y[i] == c).collect();
        if idx.len() < 10 {
            return Err(Error::data(format!("class {c} has {} rows; tuning needs at least 10 per class", idx.len())));
        }
        idx.shuffle(&mut rng);
        let n_hold = ((fraction * idx.len() as f64).round() as usize).clamp(1, idx.len() - 1);
        hold.extend_from_slice(&idx[..n_hold]);
        train.extend_from_slice(&idx[n_hold..]);
    }
    train.sort_unstable();
    hold.sort_unstable();
    Ok((train, hold))
}

/// Tunes one grain's booster on a holdout split; the objective is the mean
/// nDCF over that grain's report columns. The configured booster is the
/// first trial.
pub fn tune_grain(
    config: &PipelineConfig,
    grain: Grain,
    matrix: &FeatureMatrix,
    y: &[f64],
) -> Result<(GbdtConfig, TuneResult)> {
    let learner = config.learner.get(grain);
    if learner.kind != LearnerKind::Gbdt {
        return Err(Error::invalid(format!("{grain}: only boosted learners are tuned")));
    }
    let (train, hold) = holdout_split(
        y,
        &learner.classes,
        config.tune.holdout_fraction,
        derive_seed(config.seed, &format!("{grain}/split")),
    )?;
    let rows = |idx: &[usize]| -> Vec<Vec<f64>> { idx.iter().map(|&i| matrix.rows[i].clone()).collect() };
    let (x_train, x_hold) = (rows(&train), rows(&hold));
    let y_train: Vec<f64> = train.iter().map(|&i| y[i]).collect();
    let base = grain_gbdt(config, grain);
    let space = &config.tune.space;

    let objective = |values: &[f64]| -> Result<f64> {
        let cfg = apply_params(&base, space, values)?;
        let model = gbdt_train(&x_train, &y_train, &learner.classes, &cfg)?;
        let predicted = model.predict_distance(&x_hold)?;
        let records: Vec<TrialRecord> = hold
            .iter()
            .zip(predicted)
            .map(|(&i, p)| TrialRecord {
                event_id: matrix.ids[i].clone(),
                grain,
                true_distance_m: y[i],
                predicted_distance_m: p,
            })
            .collect();
        Ok(evaluate(&records, &config.eval)?.mean_ndcf)
    };
    let tuner = TunerConfig {
        seed: derive_seed(config.seed, &format!("{grain}/tune")) ^ config.tune.tuner.seed,
        ..config.tune.tuner.clone()
    };
    let result = tune(objective, space, &tuner, &[params_of(&base, space)?])?;
    let best = apply_params(&config.learner.get(grain).gbdt, space, &result.best.values)?;
    log::info!("{grain}: best holdout nDCF {:.4} after {} trials", result.best.objective, result.history.len());
    Ok((best, result))
}

/// Returns the config with tuned boosters and the per-grain histories.
pub fn tune_models(
    config: &PipelineConfig,
    featurized: &Featurized,
    key: &BTreeMap<String, KeyEntry>,
) -> Result<(PipelineConfig, BTreeMap<Grain, TuneResult>)> {
    let mut tuned = config.clone();
    let mut histories = BTreeMap::new();
    for g in Grain::BOTH {
        let Some((_, matrix)) = featurized.get(g) else { continue };
        let y = labels_for(matrix, key)?;
        let (best, result) = tune_grain(config, g, matrix, &y)?;
        tuned.learner.get_mut(g).gbdt = best;
        histories.insert(g, result);
    }
    Ok((tuned, histories))
}

/// Writes `tuned_config.toml` and `tune_history_<grain>.csv` under `out_dir`.
pub fn cmd_tune(
    config: &PipelineConfig,
    features_dir: &Path,
    key_file: &Path,
    out_dir: &Path,
) -> Result<(PipelineConfig, BTreeMap<Grain, TuneResult>)> {
    let featurized = read_featurized(features_dir)?;
    let (tuned, histories) = tune_models(config, &featurized, &read_key_file(key_file)?)?;
    std::fs::create_dir_all(out_dir)?;
    std::fs::write(out_dir.join("tuned_config.toml"), tuned.to_toml()?)?;
    for (g, result) in &histories {
        let file = File::create(out_dir.join(format!("tune_history_{g}.csv")))?;
        result.write_history_csv(BufWriter::new(file), &config.tune.space)?;
    }
    Ok((tuned, histories))
}
