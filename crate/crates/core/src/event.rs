//! Contact-event files: typed sensor series, metadata codes, and look
//! segmentation.
//!
//! Text format (UTF-8):
//!
//! ```text
//! #TXPower=8
//! #TXCarry=1
//! #Grain=fine
//! 0.000,BLE,-61.5
//! 0.100,ACC,0.01,-0.98,0.12
//! ```
//!
//! Header lines are `#KEY=VALUE` with keys `TXPower`, `TXCarry`, `RXCarry`,
//! `TXPose`, `RXPose`, `TXDevice`, `RXDevice` and `Grain`. Missing keys
//! default to code 0 (unknown) and fine grain. Records are
//! `t,SENSOR,v1[,v2[,v3]]`; timestamps must strictly increase within each
//! sensor but sensors may interleave.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::ops::Range;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum SensorKind {
    Ble,
    Acc,
    Gyr,
    Att,
    Alt,
    Gra,
    Mag,
}

impl SensorKind {
    pub const ALL: [SensorKind; 7] = [
        SensorKind::Ble,
        SensorKind::Acc,
        SensorKind::Gyr,
        SensorKind::Att,
        SensorKind::Alt,
        SensorKind::Gra,
        SensorKind::Mag,
    ];

    /// Number of values per sample.
    pub fn arity(self) -> usize {
        match self {
            SensorKind::Ble => 1,
            SensorKind::Alt => 2,
            _ => 3,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SensorKind::Ble => "BLE",
            SensorKind::Acc => "ACC",
            SensorKind::Gyr => "GYR",
            SensorKind::Att => "ATT",
            SensorKind::Alt => "ALT",
            SensorKind::Gra => "GRA",
            SensorKind::Mag => "MAG",
        }
    }

    /// Channel names used in feature names (`rssi` for BLE, `x`/`y`/`z` otherwise).
    pub fn axis_names(self) -> &'static [&'static str] {
        match self.arity() {
            1 => &["rssi"],
            2 => &["x", "y"],
            _ => &["x", "y", "z"],
        }
    }
}

impl fmt::Display for SensorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SensorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SensorKind::ALL
            .into_iter()
            .find(|k| k.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::invalid(format!("unknown sensor `{s}`")))
    }
}

/// One sensor stream. Values are stored row-major, `arity` values per sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorSeries {
    kind: SensorKind,
    timestamps: Vec<f64>,
    values: Vec<f64>,
}

impl SensorSeries {
    pub fn new(kind: SensorKind, timestamps: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if values.len() != timestamps.len() * kind.arity() {
            return Err(Error::LengthMismatch { expected: timestamps.len() * kind.arity(), got: values.len() });
        }
        if let Some(w) = timestamps.windows(2).find(|w| !(w[1] > w[0])) {
            return Err(Error::invalid(format!("{kind} timestamps not strictly increasing ({} then {})", w[0], w[1])));
        }
        Ok(Self { kind, timestamps, values })
    }

    pub fn kind(&self) -> SensorKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn timestamps(&self) -> &[f64] {
        &self.timestamps
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        let a = self.kind.arity();
        &self.values[i * a..(i + 1) * a]
    }

    pub fn samples(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.kind.arity())
    }

    /// One channel as its own series.
    pub fn channel(&self, c: usize) -> Vec<f64> {
        assert!(c < self.kind.arity(), "channel {c} out of range for {}", self.kind);
        self.samples().map(|s| s[c]).collect()
    }

    /// Per-sample Euclidean norm over all channels.
    pub fn magnitude(&self) -> Vec<f64> {
        self.samples().map(|s| s.iter().map(|v| v * v).sum::<f64>().sqrt()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Grain {
    Fine,
    Coarse,
}

impl Grain {
    pub const BOTH: [Grain; 2] = [Grain::Fine, Grain::Coarse];

    /// Serialized flag: 0 = fine, 1 = coarse.
    pub fn code(self) -> u8 {
        match self {
            Grain::Fine => 0,
            Grain::Coarse => 1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Grain::Fine => "fine",
            Grain::Coarse => "coarse",
        }
    }
}

impl fmt::Display for Grain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Grain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "fine" | "0" => Ok(Grain::Fine),
            "coarse" | "1" => Ok(Grain::Coarse),
            other => Err(Error::invalid(format!("unknown grain `{other}`"))),
        }
    }
}

/// Categorical codes follow the baseline encoding: 0 is always "unknown".
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EventMetadata {
    pub tx_power_code: u8,
    pub tx_carry: u8,
    pub rx_carry: u8,
    pub tx_pose: u8,
    pub rx_pose: u8,
    pub tx_device: u8,
    pub rx_device: u8,
    pub grain: Grain,
    /// Known only for training events (from the key file).
    pub true_distance_m: Option<f64>,
}

impl Default for EventMetadata {
    fn default() -> Self {
        Self {
            tx_power_code: 0,
            tx_carry: 0,
            rx_carry: 0,
            tx_pose: 0,
            rx_pose: 0,
            tx_device: 0,
            rx_device: 0,
            grain: Grain::Fine,
            true_distance_m: None,
        }
    }
}

impl EventMetadata {
    /// Codes in header order: TXPower, TXCarry, RXCarry, TXPose, RXPose, TXDevice, RXDevice.
    pub fn codes(&self) -> [u8; 7] {
        [self.tx_power_code, self.tx_carry, self.rx_carry, self.tx_pose, self.rx_pose, self.tx_device, self.rx_device]
    }
}

const HEADER_KEYS: [&str; 7] = ["TXPower", "TXCarry", "RXCarry", "TXPose", "RXPose", "TXDevice", "RXDevice"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContactEvent {
    pub id: String,
    pub metadata: EventMetadata,
    pub series: BTreeMap<SensorKind, SensorSeries>,
}

impl ContactEvent {
    pub fn get(&self, kind: SensorKind) -> Option<&SensorSeries> {
        self.series.get(&kind)
    }

    pub fn ble(&self) -> Option<&SensorSeries> {
        self.get(SensorKind::Ble).filter(|s| !s.is_empty())
    }

    pub fn total_samples(&self) -> usize {
        self.series.values().map(SensorSeries::len).sum()
    }
}

fn parse_tx_power(v: &str) -> Option<u8> {
    match v.trim().to_ascii_lowercase().as_str() {
        "7" | "unknown" | "0" => Some(0),
        "8" => Some(1),
        "12" => Some(2),
        _ => None,
    }
}

fn parse_code(key: &str, v: &str) -> Option<u8> {
    let v = v.trim().to_ascii_lowercase();
    let named = match (key, v.as_str()) {
        (_, "unknown") => Some(0),
        ("TXCarry" | "RXCarry", "hand") => Some(1),
        ("TXCarry" | "RXCarry", "pocket") => Some(2),
        ("TXPose" | "RXPose", "sitting") => Some(1),
        ("TXPose" | "RXPose", "standing") => Some(2),
        _ => None,
    };
    named.or_else(|| v.parse::<u8>().ok().filter(|c| *c <= 2))
}

/// Parses one event file. `id` is usually the file stem.
pub fn parse_event_file(id: &str, text: &str) -> Result<ContactEvent> {
    let mut metadata = EventMetadata::default();
    let mut raw: BTreeMap<SensorKind, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    let mut line_count = 0;

    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        line_count = lineno;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let err = |message: String| Error::Parse { line: lineno, message };

        if let Some(header) = line.strip_prefix('#') {
            let Some((key, value)) = header.split_once('=') else {
                // free-form comment
                continue;
            };
            let key = key.trim();
            match key {
                "TXPower" => {
                    metadata.tx_power_code =
                        parse_tx_power(value).ok_or_else(|| err(format!("bad TXPower `{value}`")))?
                }
                "Grain" => metadata.grain = value.parse().map_err(|_| err(format!("bad Grain `{value}`")))?,
                k if HEADER_KEYS.contains(&k) => {
                    let code = parse_code(k, value).ok_or_else(|| err(format!("bad {k} `{value}`")))?;
                    match k {
                        "TXCarry" => metadata.tx_carry = code,
                        "RXCarry" => metadata.rx_carry = code,
                        "TXPose" => metadata.tx_pose = code,
                        "RXPose" => metadata.rx_pose = code,
                        "TXDevice" => metadata.tx_device = code,
                        _ => metadata.rx_device = code,
                    }
                }
                _ => log::debug!("{id}: ignoring header key `{key}`"),
            }
            continue;
        }

        let mut fields = line.split(',').map(str::trim);
        let t: f64 = fields
            .next()
            .and_then(|f| f.parse().ok())
            .filter(|t: &f64| t.is_finite())
            .ok_or_else(|| err(format!("malformed timestamp in `{line}`")))?;
        let kind: SensorKind = fields
            .next()
            .ok_or_else(|| err("missing sensor field".into()))?
            .parse()
            .map_err(|e: Error| err(e.to_string()))?;
        let values = fields
            .map(|f| f.parse::<f64>().ok().filter(|v| v.is_finite()))
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| err(format!("malformed value in `{line}`")))?;
        if values.len() != kind.arity() {
            return Err(err(format!("{kind} expects {} value(s), found {}", kind.arity(), values.len())));
        }
        let (ts, vs) = raw.entry(kind).or_default();
        if let Some(&last) = ts.last() {
            if t <= last {
                return Err(err(format!("{kind} timestamp {t} does not follow {last}")));
            }
        }
        ts.push(t);
        vs.extend(values);
    }

    if raw.get(&SensorKind::Ble).is_none_or(|(ts, _)| ts.is_empty()) {
        return Err(Error::Parse { line: line_count, message: "missing BLE section".into() });
    }

    let series = raw
        .into_iter()
        .map(|(kind, (ts, vs))| SensorSeries::new(kind, ts, vs).map(|s| (kind, s)))
        .collect::<Result<_>>()?;
    Ok(ContactEvent { id: id.to_string(), metadata, series })
}

/// Renders an event in the canonical text format. Records are ordered by
/// timestamp, then sensor.
pub fn write_event_file(event: &ContactEvent) -> String {
    let m = &event.metadata;
    let mut out = String::new();
    let tx_dbm = ["7", "8", "12"][m.tx_power_code.min(2) as usize];
    let _ = writeln!(out, "#TXPower={tx_dbm}");
    for (key, code) in HEADER_KEYS.iter().zip(m.codes()).skip(1) {
        let _ = writeln!(out, "#{key}={code}");
    }
    let _ = writeln!(out, "#Grain={}", m.grain);

    let mut records: Vec<(f64, SensorKind, usize)> = event
        .series
        .iter()
        .flat_map(|(&k, s)| s.timestamps().iter().enumerate().map(move |(i, &t)| (t, k, i)))
        .collect();
    records.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    for (t, kind, i) in records {
        let _ = write!(out, "{t},{kind}");
        for v in event.series[&kind].sample(i) {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

/// A continuous recording window inside one event.
#[derive(Debug, Clone, PartialEq)]
pub struct Look {
    pub start_s: f64,
    pub end_s: f64,
    /// Sample index range per sensor falling inside `[start_s, end_s]`.
    pub ranges: BTreeMap<SensorKind, Range<usize>>,
}

impl Look {
    pub fn sample_count(&self) -> usize {
        self.ranges.values().map(|r| r.len()).sum()
    }
}

/// Splits an event into looks: consecutive timestamps (union over all
/// sensors) closer than `gap_s` belong to the same look.
pub fn segment_looks(event: &ContactEvent, gap_s: f64) -> Vec<Look> {
    assert!(gap_s > 0.0, "gap_s must be positive");
    let mut times: Vec<f64> = event.series.values().flat_map(|s| s.timestamps().iter().copied()).collect();
    if times.is_empty() {
        return Vec::new();
    }
    times.sort_by(f64::total_cmp);

    let mut bounds = Vec::new();
    let mut start = times[0];
    for w in times.windows(2) {
        if w[1] - w[0] >= gap_s {
            bounds.push((start, w[0]));
            start = w[1];
        }
    }
    bounds.push((start, *times.last().unwrap()));

    bounds
        .into_iter()
        .map(|(start_s, end_s)| {
            let ranges = event
                .series
                .iter()
                .map(|(&k, s)| {
                    let ts = s.timestamps();
                    let lo = ts.partition_point(|&t| t < start_s);
                    let hi = ts.partition_point(|&t| t <= end_s);
                    (k, lo..hi)
                })
                .collect();
            Look { start_s, end_s, ranges }
        })
        .collect()
}
