//! Feature extraction: baseline path-loss features, engineered coarse-grain
//! IMU features, and per-axis statistical features.

mod stats;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

pub use stats::{
    absolute_maximum, count_above, count_above_mean, energy, fourier_entropy, kurtosis_g2, longest_strike_above_mean,
    number_cwt_peaks, pct_reoccurring_datapoints, stat_features, variation_coefficient, StatConfig, STAT_FEATURE_NAMES,
};
#[doc(hidden)]
pub use stats::{binned_mass_entropy, periodogram, ricker_response};

use crate::error::{Error, Result};
use crate::event::{ContactEvent, Grain, SensorKind};
use crate::series::mean;

/// Log-distance path-loss model parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathLossParams {
    /// RSSI at the 1 m reference distance, dBm.
    pub tx_ref_dbm: f64,
    pub exponent_n: f64,
}

impl PathLossParams {
    pub const FINE: PathLossParams = PathLossParams { tx_ref_dbm: -54.0, exponent_n: 2.1 };
    pub const COARSE: PathLossParams = PathLossParams { tx_ref_dbm: -52.0, exponent_n: 2.6 };

    pub fn for_grain(grain: Grain) -> Self {
        match grain {
            Grain::Fine => Self::FINE,
            Grain::Coarse => Self::COARSE,
        }
    }

    /// Expected RSSI at distance `d` metres.
    pub fn rssi_at(&self, d: f64) -> f64 {
        self.tx_ref_dbm - 10.0 * self.exponent_n * d.log10()
    }
}

/// `d = 10^((tx_ref - rssi) / (10 n))`.
pub fn path_loss_distance(params: &PathLossParams, mean_rssi: f64) -> f64 {
    10f64.powf((params.tx_ref_dbm - mean_rssi) / (10.0 * params.exponent_n))
}

/// Transmit-power code to dBm, used in the attenuation feature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TxPowerMap(pub [f64; 3]);

impl Default for TxPowerMap {
    fn default() -> Self {
        TxPowerMap([7.0, 8.0, 12.0])
    }
}

impl TxPowerMap {
    pub fn dbm(&self, code: u8) -> f64 {
        self.0[(code as usize).min(2)]
    }
}

/// Ordered `(name, value)` pairs for one event.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    entries: Vec<(String, f64)>,
}

impl FeatureVector {
    pub fn push(&mut self, name: impl Into<String>, value: f64) {
        let name = name.into();
        debug_assert!(value.is_finite(), "feature {name} is not finite");
        debug_assert!(self.get(&name).is_none(), "duplicate feature {name}");
        self.entries.push((name, value));
    }

    /// Appends every entry of `other`, prefixing names with `prefix`.
    pub fn extend_prefixed(&mut self, prefix: &str, other: FeatureVector) {
        for (n, v) in other.entries {
            self.push(format!("{prefix}{n}"), v);
        }
    }

    pub fn extend(&mut self, other: FeatureVector) {
        for (n, v) in other.entries {
            self.push(n, v);
        }
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.entries.iter().map(|(_, v)| *v)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.entries.iter().map(|(n, v)| (n.as_str(), *v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Rows of named features, one per event.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    pub names: Vec<String>,
    pub ids: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl FeatureMatrix {
    /// Aligns vectors to `schema`, or to the union of their names in order of
    /// first appearance when no schema is given. Names absent from a vector
    /// are filled with 0; names outside the schema are an error.
    pub fn from_vectors(ids: Vec<String>, vectors: &[FeatureVector], schema: Option<&[String]>) -> Result<Self> {
        if ids.len() != vectors.len() {
            return Err(Error::LengthMismatch { expected: ids.len(), got: vectors.len() });
        }
        let names: Vec<String> = match schema {
            Some(s) => s.to_vec(),
            None => {
                let mut seen = HashSet::new();
                vectors
                    .iter()
                    .flat_map(|v| v.names())
                    .filter(|n| seen.insert(n.to_string()))
                    .map(str::to_string)
                    .collect()
            }
        };
        let index: HashMap<&str, usize> = names.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
        let mut extra = Vec::new();
        let rows = vectors
            .iter()
            .zip(&ids)
            .map(|(v, id)| {
                let mut row = vec![0.0; names.len()];
                let mut filled = 0;
                for (n, x) in v.iter() {
                    match index.get(n) {
                        Some(&j) => {
                            row[j] = x;
                            filled += 1;
                        }
                        None => extra.push(n.to_string()),
                    }
                }
                if filled < names.len() {
                    log::debug!("{id}: {} feature(s) absent, filled with 0", names.len() - filled);
                }
                row
            })
            .collect();
        if !extra.is_empty() {
            extra.sort();
            extra.dedup();
            return Err(Error::SchemaMismatch { missing: Vec::new(), extra });
        }
        Ok(Self { names, ids, rows })
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_cols(&self) -> usize {
        self.names.len()
    }

    pub fn column(&self, j: usize) -> impl Iterator<Item = f64> + '_ {
        self.rows.iter().map(move |r| r[j])
    }

    /// Keeps only the given columns, in the given order.
    pub fn select_columns(&self, names: &[String]) -> Result<Self> {
        let index: HashMap<&str, usize> = self.names.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
        let missing: Vec<String> = names.iter().filter(|n| !index.contains_key(n.as_str())).cloned().collect();
        if !missing.is_empty() {
            return Err(Error::SchemaMismatch { missing, extra: Vec::new() });
        }
        let cols: Vec<usize> = names.iter().map(|n| index[n.as_str()]).collect();
        Ok(Self {
            names: names.to_vec(),
            ids: self.ids.clone(),
            rows: self.rows.iter().map(|r| cols.iter().map(|&j| r[j]).collect()).collect(),
        })
    }

    /// Keeps the given rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        Self {
            names: self.names.clone(),
            ids: rows.iter().map(|&i| self.ids[i].clone()).collect(),
            rows: rows.iter().map(|&i| self.rows[i].clone()).collect(),
        }
    }

    /// Column-wise concatenation of two matrices over the same ids.
    pub fn hstack(mut self, other: FeatureMatrix) -> Result<Self> {
        if self.ids != other.ids {
            return Err(Error::invalid("hstack over different row ids"));
        }
        self.names.extend(other.names);
        for (r, o) in self.rows.iter_mut().zip(other.rows) {
            r.extend(o);
        }
        Ok(self)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(std::iter::once("event_id").chain(self.names.iter().map(String::as_str)))?;
        for (id, row) in self.ids.iter().zip(&self.rows) {
            let mut rec = vec![id.clone()];
            rec.extend(row.iter().map(|v| v.to_string()));
            wtr.write_record(&rec)?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let headers = rdr.headers()?.clone();
        if headers.get(0) != Some("event_id") {
            return Err(Error::data("feature matrix must start with an event_id column"));
        }
        let names: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
        let mut ids = Vec::new();
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            ids.push(rec[0].to_string());
            let row = rec
                .iter()
                .skip(1)
                .map(|f| f.parse::<f64>().map_err(|_| Error::data(format!("bad number `{f}` in row {}", &rec[0]))))
                .collect::<Result<Vec<_>>>()?;
            if row.len() != names.len() {
                return Err(Error::LengthMismatch { expected: names.len(), got: row.len() });
            }
            rows.push(row);
        }
        Ok(Self { names, ids, rows })
    }
}

/// Writes a schema file: one feature name per line.
pub fn write_schema<W: Write>(mut w: W, names: &[String]) -> Result<()> {
    for n in names {
        writeln!(w, "{n}")?;
    }
    Ok(())
}

pub fn read_schema(text: &str) -> Vec<String> {
    text.lines().map(str::trim).filter(|l| !l.is_empty()).map(str::to_string).collect()
}

/// Per-feature min/max learned on training data.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub ranges: BTreeMap<String, (f64, f64)>,
}

impl NormStats {
    /// Min-max over whichever vectors carry each name.
    pub fn fit_vectors(vectors: &[FeatureVector]) -> Result<Self> {
        if vectors.is_empty() {
            return Err(Error::invalid("cannot fit normalizer on an empty training set"));
        }
        let mut ranges: BTreeMap<String, (f64, f64)> = BTreeMap::new();
        for (n, v) in vectors.iter().flat_map(FeatureVector::iter) {
            let e = ranges.entry(n.to_string()).or_insert((v, v));
            e.0 = e.0.min(v);
            e.1 = e.1.max(v);
        }
        Ok(Self { ranges })
    }

    /// Scales into `[0, 1]`, clamping outside the training range. Constant
    /// features map to 0. `None` when the name was never fitted.
    pub fn normalize(&self, name: &str, value: f64) -> Option<f64> {
        let &(lo, hi) = self.ranges.get(name)?;
        if hi <= lo {
            return Some(0.0);
        }
        Some(((value - lo) / (hi - lo)).clamp(0.0, 1.0))
    }
}

pub fn fit_normalizer(training: &FeatureMatrix) -> Result<NormStats> {
    if training.rows.is_empty() {
        return Err(Error::invalid("cannot fit normalizer on an empty training set"));
    }
    let ranges = training
        .names
        .iter()
        .enumerate()
        .map(|(j, n)| {
            let (lo, hi) =
                training.column(j).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
            (n.clone(), (lo, hi))
        })
        .collect();
    Ok(NormStats { ranges })
}

pub fn apply_normalizer(stats: &NormStats, fv: &FeatureVector) -> Result<FeatureVector> {
    let mut out = FeatureVector::default();
    let mut missing = Vec::new();
    for (n, v) in fv.iter() {
        match stats.normalize(n, v) {
            Some(x) => out.push(n, x),
            None => missing.push(n.to_string()),
        }
    }
    if !missing.is_empty() {
        return Err(Error::SchemaMismatch { missing, extra: Vec::new() });
    }
    Ok(out)
}

/// Removes columns whose values are all identical.
pub fn drop_constant_features(matrix: &FeatureMatrix) -> Result<(FeatureMatrix, Vec<String>)> {
    if matrix.rows.is_empty() {
        return Err(Error::invalid("cannot drop constant features of an empty matrix"));
    }
    let (keep, removed): (Vec<_>, Vec<_>) = (0..matrix.n_cols()).partition(|&j| {
        let first = matrix.rows[0][j];
        matrix.column(j).any(|v| v != first)
    });
    let keep_names: Vec<String> = keep.iter().map(|&j| matrix.names[j].clone()).collect();
    let removed = removed.into_iter().map(|j| matrix.names[j].clone()).collect();
    Ok((matrix.select_columns(&keep_names)?, removed))
}

pub const MEAN_RSSI: &str = "mean_rssi";
pub const PATH_LOSS_ATTENUATION: &str = "path_loss_attenuation";
const GYR_MEANS: [&str; 3] = ["gyr_x_mean", "gyr_y_mean", "gyr_z_mean"];

/// Raw per-event quantities that the baseline and coarse features normalize:
/// mean RSSI, attenuation (`tx_dbm - 41 - mean RSSI`), and mean GYR per axis.
pub fn normalization_inputs(event: &ContactEvent, tx_power: &TxPowerMap) -> Result<FeatureVector> {
    let ble = event.ble().ok_or_else(|| Error::invalid(format!("{}: empty BLE series", event.id)))?;
    let rssi = mean(&ble.channel(0));
    let mut fv = FeatureVector::default();
    fv.push(MEAN_RSSI, rssi);
    fv.push(PATH_LOSS_ATTENUATION, tx_power.dbm(event.metadata.tx_power_code) - 41.0 - rssi);
    if let Some(gyr) = event.get(SensorKind::Gyr).filter(|s| !s.is_empty()) {
        for (c, name) in GYR_MEANS.iter().enumerate() {
            fv.push(*name, mean(&gyr.channel(c)));
        }
    }
    Ok(fv)
}

pub const BASELINE_FEATURE_NAMES: [&str; 11] = [
    "predicted_distance",
    "normalized_mean_rssi",
    "normalized_path_loss_attenuation",
    "grain_flag",
    "tx_power_code",
    "tx_carry",
    "rx_carry",
    "tx_pose",
    "rx_pose",
    "tx_device",
    "rx_device",
];

/// Baseline features: path-loss distance estimate, normalized RSSI and
/// attenuation, grain flag, and the seven metadata codes.
pub fn baseline_features(event: &ContactEvent, stats: &NormStats, tx_power: &TxPowerMap) -> Result<FeatureVector> {
    let raw = normalization_inputs(event, tx_power)?;
    let rssi = raw.get(MEAN_RSSI).unwrap();
    let atten = raw.get(PATH_LOSS_ATTENUATION).unwrap();
    let m = &event.metadata;
    let norm = |name: &str, v: f64| {
        stats
            .normalize(name, v)
            .ok_or_else(|| Error::SchemaMismatch { missing: vec![name.to_string()], extra: Vec::new() })
    };

    let mut fv = FeatureVector::default();
    fv.push("predicted_distance", path_loss_distance(&PathLossParams::for_grain(m.grain), rssi));
    fv.push("normalized_mean_rssi", norm(MEAN_RSSI, rssi)?);
    fv.push("normalized_path_loss_attenuation", norm(PATH_LOSS_ATTENUATION, atten)?);
    fv.push("grain_flag", m.grain.code() as f64);
    for (name, code) in BASELINE_FEATURE_NAMES[4..].iter().zip(m.codes()) {
        fv.push(*name, code as f64);
    }
    Ok(fv)
}

pub const COARSE_FEATURE_NAMES: [&str; 5] =
    ["magnitude_acc", "magnitude_alt", "gyr_x_norm", "gyr_y_norm", "gyr_z_norm"];

/// Engineered coarse-grain IMU features: mean ACC and ALT magnitudes and
/// min-max normalized mean GYR per axis. Missing sensors yield 0.
pub fn coarse_engineered(event: &ContactEvent, stats: &NormStats) -> FeatureVector {
    let mean_magnitude = |kind: SensorKind| match event.get(kind).filter(|s| !s.is_empty()) {
        Some(s) => mean(&s.magnitude()),
        None => {
            log::warn!("{}: no {kind} samples, magnitude feature set to 0", event.id);
            0.0
        }
    };
    let mut fv = FeatureVector::default();
    fv.push(COARSE_FEATURE_NAMES[0], mean_magnitude(SensorKind::Acc));
    fv.push(COARSE_FEATURE_NAMES[1], mean_magnitude(SensorKind::Alt));
    let gyr = event.get(SensorKind::Gyr).filter(|s| !s.is_empty());
    if gyr.is_none() {
        log::warn!("{}: no GYR samples, gyroscope features set to 0", event.id);
    }
    for (c, name) in COARSE_FEATURE_NAMES[2..].iter().enumerate() {
        let v = gyr.and_then(|g| stats.normalize(GYR_MEANS[c], mean(&g.channel(c)))).unwrap_or(0.0);
        fv.push(*name, v);
    }
    fv
}

/// Statistical features for every axis of every requested sensor, named
/// `SENSOR_axis_feature` (e.g. `GYR_y_energy`, `BLE_rssi_kurtosis_g2`).
/// Absent sensors contribute nothing. `thresholds` overrides the
/// `count_above_s` threshold per sensor.
pub fn per_axis_features(
    event: &ContactEvent,
    sensors: &[SensorKind],
    cfg: &StatConfig,
    thresholds: &BTreeMap<SensorKind, f64>,
) -> Result<FeatureVector> {
    let mut fv = FeatureVector::default();
    for &kind in sensors {
        let Some(series) = event.get(kind).filter(|s| !s.is_empty()) else { continue };
        let cfg = StatConfig {
            count_above_threshold: thresholds.get(&kind).copied().unwrap_or(cfg.count_above_threshold),
            ..*cfg
        };
        for (c, axis) in kind.axis_names().iter().enumerate() {
            let stats = stat_features(&series.channel(c), &cfg)?;
            fv.extend_prefixed(&format!("{kind}_{axis}_"), stats);
        }
    }
    Ok(fv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event::{EventMetadata, SensorSeries};
    use proptest::prelude::*;

    fn event_with(series: Vec<SensorSeries>, grain: Grain, tx_power_code: u8) -> ContactEvent {
        ContactEvent {
            id: "t".into(),
            metadata: EventMetadata { grain, tx_power_code, ..Default::default() },
            series: series.into_iter().map(|s| (s.kind(), s)).collect(),
        }
    }

    fn constant(kind: SensorKind, n: usize, sample: &[f64]) -> SensorSeries {
        let ts = (0..n).map(|i| i as f64 * 0.1).collect();
        let vals = sample.iter().copied().cycle().take(n * sample.len()).collect();
        SensorSeries::new(kind, ts, vals).unwrap()
    }

    #[test]
    fn path_loss_examples() {
        assert!((path_loss_distance(&PathLossParams::FINE, -75.0) - 10.0).abs() < 1e-12);
        assert_eq!(path_loss_distance(&PathLossParams::COARSE, -52.0), 1.0);
        let p = PathLossParams { tx_ref_dbm: -60.0, exponent_n: 3.3 };
        assert!((path_loss_distance(&p, p.tx_ref_dbm - 10.0 * p.exponent_n) - 10.0).abs() < 1e-12);
    }

    #[test]
    fn baseline_attenuation_and_flags() {
        let ev = event_with(vec![constant(SensorKind::Ble, 4, &[-60.0])], Grain::Coarse, 1);
        let raw = normalization_inputs(&ev, &TxPowerMap::default()).unwrap();
        assert_eq!(raw.get(PATH_LOSS_ATTENUATION), Some(27.0));

        let stats = NormStats::fit_vectors(&[raw.clone()]).unwrap();
        let fv = baseline_features(&ev, &stats, &TxPowerMap::default()).unwrap();
        assert_eq!(fv.names().collect::<Vec<_>>(), BASELINE_FEATURE_NAMES);
        assert_eq!(fv.get("grain_flag"), Some(1.0));
        assert_eq!(fv.get("tx_power_code"), Some(1.0));
        // mean RSSI equal to the training minimum
        assert_eq!(fv.get("normalized_mean_rssi"), Some(0.0));
    }

    #[test]
    fn baseline_needs_ble() {
        let ev = event_with(vec![], Grain::Fine, 0);
        let stats = NormStats::default();
        assert!(baseline_features(&ev, &stats, &TxPowerMap::default()).is_err());
    }

    #[test]
    fn normalizer_examples() {
        let m = FeatureMatrix {
            names: vec!["a".into(), "c".into()],
            ids: vec!["1".into(), "2".into()],
            rows: vec![vec![-80.0, 3.0], vec![-40.0, 3.0]],
        };
        let stats = fit_normalizer(&m).unwrap();
        let mut fv = FeatureVector::default();
        fv.push("a", -60.0);
        fv.push("c", 9.0);
        let out = apply_normalizer(&stats, &fv).unwrap();
        assert_eq!(out.get("a"), Some(0.5));
        assert_eq!(out.get("c"), Some(0.0));
        let mut below = FeatureVector::default();
        below.push("a", -100.0);
        assert_eq!(apply_normalizer(&stats, &below).unwrap().get("a"), Some(0.0));
        let mut unknown = FeatureVector::default();
        unknown.push("zzz", 1.0);
        assert!(apply_normalizer(&stats, &unknown).is_err());
        assert!(fit_normalizer(&FeatureMatrix::default()).is_err());
    }

    #[test]
    fn coarse_examples() {
        let ev = event_with(
            vec![
                constant(SensorKind::Ble, 3, &[-60.0]),
                constant(SensorKind::Acc, 5, &[3.0, 4.0, 0.0]),
                constant(SensorKind::Alt, 5, &[3.0, 4.0]),
                constant(SensorKind::Gyr, 5, &[2.0, 0.0, 0.0]),
            ],
            Grain::Coarse,
            0,
        );
        let stats = NormStats { ranges: BTreeMap::from([("gyr_x_mean".to_string(), (0.0, 4.0))]) };
        let fv = coarse_engineered(&ev, &stats);
        assert_eq!(fv.names().collect::<Vec<_>>(), COARSE_FEATURE_NAMES);
        assert_eq!(fv.get("magnitude_acc"), Some(5.0));
        assert_eq!(fv.get("magnitude_alt"), Some(5.0));
        assert_eq!(fv.get("gyr_x_norm"), Some(0.5));

        let bare = event_with(vec![constant(SensorKind::Ble, 3, &[-60.0])], Grain::Coarse, 0);
        assert!(coarse_engineered(&bare, &stats).values().all(|v| v == 0.0));
    }

    #[test]
    fn per_axis_cardinality_and_names() {
        let ev = event_with(
            vec![
                constant(SensorKind::Ble, 8, &[-60.0]),
                constant(SensorKind::Acc, 8, &[0.1, 0.2, 0.3]),
                constant(SensorKind::Gyr, 8, &[0.1, 0.2, 0.3]),
            ],
            Grain::Fine,
            0,
        );
        let cfg = StatConfig::default();
        let none = BTreeMap::new();
        let all =
            per_axis_features(&ev, &[SensorKind::Ble, SensorKind::Acc, SensorKind::Gyr, SensorKind::Att], &cfg, &none)
                .unwrap();
        assert_eq!(all.len(), 10 + 30 + 30);
        assert!(all.get("GYR_y_energy").is_some());
        assert!(all.get("BLE_rssi_energy").is_some());
        assert_eq!(all.names().filter(|n| n.starts_with("ACC_")).count(), 30);
        let ble_only = per_axis_features(&ev, &[SensorKind::Ble], &cfg, &none).unwrap();
        assert_eq!(ble_only.len(), 10);
        let th = BTreeMap::from([(SensorKind::Ble, -70.0)]);
        assert_eq!(
            per_axis_features(&ev, &[SensorKind::Ble], &cfg, &th).unwrap().get("BLE_rssi_count_above_s"),
            Some(1.0)
        );
    }

    #[test]
    fn drop_constant_examples() {
        let m = FeatureMatrix {
            names: vec!["k".into(), "v".into()],
            ids: vec!["1".into(), "2".into()],
            rows: vec![vec![3.7, 0.0], vec![3.7, 1.0]],
        };
        let (kept, removed) = drop_constant_features(&m).unwrap();
        assert_eq!(kept.names, vec!["v".to_string()]);
        assert_eq!(removed, vec!["k".to_string()]);
        let all_const = FeatureMatrix { rows: vec![vec![1.0, 2.0], vec![1.0, 2.0]], ..m };
        let (kept, removed) = drop_constant_features(&all_const).unwrap();
        assert_eq!(kept.n_cols(), 0);
        assert_eq!(removed.len(), 2);
    }

    #[test]
    fn matrix_alignment_and_csv() {
        let mut a = FeatureVector::default();
        a.push("x", 1.5);
        let mut b = FeatureVector::default();
        b.push("y", -2.0);
        b.push("x", 0.1);
        let m = FeatureMatrix::from_vectors(vec!["a".into(), "b".into()], &[a, b], None).unwrap();
        assert_eq!(m.names, vec!["x", "y"]);
        assert_eq!(m.rows, vec![vec![1.5, 0.0], vec![0.1, -2.0]]);
        let mut buf = Vec::new();
        m.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), "event_id,x,y\na,1.5,0\nb,0.1,-2\n");
        assert_eq!(FeatureMatrix::read_csv(&buf[..]).unwrap(), m);

        let mut c = FeatureVector::default();
        c.push("zz", 1.0);
        let err = FeatureMatrix::from_vectors(vec!["c".into()], &[c], Some(&m.names)).unwrap_err();
        assert!(matches!(err, Error::SchemaMismatch { ref extra, .. } if extra == &["zz".to_string()]));
    }

    proptest! {
        #[test]
        fn path_loss_roundtrip(d in 0.05f64..50.0, tx in -70.0f64..-40.0, n in 1.5f64..4.0) {
            let p = PathLossParams { tx_ref_dbm: tx, exponent_n: n };
            prop_assert!((path_loss_distance(&p, p.rssi_at(d)) - d).abs() < 1e-9);
            prop_assert!(path_loss_distance(&p, p.rssi_at(d) + 0.5) < path_loss_distance(&p, p.rssi_at(d)));
        }

        #[test]
        fn normalized_values_in_unit_interval(
            train in prop::collection::vec(-200.0f64..200.0, 1..20),
            probe in -1e4f64..1e4,
        ) {
            let vecs: Vec<FeatureVector> = train.iter().map(|&v| { let mut f = FeatureVector::default(); f.push("a", v); f }).collect();
            let stats = NormStats::fit_vectors(&vecs).unwrap();
            let mut f = FeatureVector::default();
            f.push("a", probe);
            let x = apply_normalizer(&stats, &f).unwrap().get("a").unwrap();
            prop_assert!((0.0..=1.0).contains(&x));
        }
    }
}
