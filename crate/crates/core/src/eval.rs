//! Contact decisions and nDCF scoring over fine and coarse record subsets.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event::Grain;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub event_id: String,
    pub grain: Grain,
    pub true_distance_m: f64,
    pub predicted_distance_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalProtocol {
    pub fine_thresholds: Vec<f64>,
    pub coarse_thresholds: Vec<f64>,
    pub w_miss: f64,
    pub w_false: f64,
}

impl Default for EvalProtocol {
    fn default() -> Self {
        Self { fine_thresholds: vec![1.2, 1.8, 3.0], coarse_thresholds: vec![1.8], w_miss: 1.0, w_false: 1.0 }
    }
}

impl EvalProtocol {
    pub fn validate(&self) -> Result<()> {
        if self.fine_thresholds.iter().chain(&self.coarse_thresholds).any(|d| !(*d > 0.0)) {
            return Err(Error::invalid("thresholds must be positive"));
        }
        if !(self.w_miss > 0.0 && self.w_false > 0.0) {
            return Err(Error::invalid("weights must be positive"));
        }
        Ok(())
    }

    /// `(grain, D)` in report order.
    pub fn columns(&self) -> Vec<(Grain, f64)> {
        self.fine_thresholds
            .iter()
            .map(|&d| (Grain::Fine, d))
            .chain(self.coarse_thresholds.iter().map(|&d| (Grain::Coarse, d)))
            .collect()
    }
}

/// An event is declared a contact when the predicted distance is `<= D`.
pub fn decide_tc4tl(predicted_distance_m: f64, threshold_m: f64) -> bool {
    predicted_distance_m <= threshold_m
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub n_tc4tl: usize,
    pub n_not: usize,
    pub misses: usize,
    pub false_alarms: usize,
}

impl Confusion {
    /// Miss rate; 0 when there are no true contacts.
    pub fn p_miss(&self) -> f64 {
        if self.n_tc4tl == 0 {
            0.0
        } else {
            self.misses as f64 / self.n_tc4tl as f64
        }
    }

    /// False-alarm rate; 0 when there are no true non-contacts.
    pub fn p_false(&self) -> f64 {
        if self.n_not == 0 {
            0.0
        } else {
            self.false_alarms as f64 / self.n_not as f64
        }
    }
}

pub fn confusion<'a, I>(records: I, threshold_m: f64) -> Confusion
where
    I: IntoIterator<Item = &'a TrialRecord>,
{
    let mut c = Confusion::default();
    for r in records {
        let truth = r.true_distance_m <= threshold_m;
        let decided = decide_tc4tl(r.predicted_distance_m, threshold_m);
        if truth {
            c.n_tc4tl += 1;
            c.misses += usize::from(!decided);
        } else {
            c.n_not += 1;
            c.false_alarms += usize::from(decided);
        }
    }
    c
}

/// `(w_miss·P_miss + w_false·P_false) / min(w_miss, w_false)`.
pub fn ndcf(p_miss: f64, p_false: f64, w_miss: f64, w_false: f64) -> f64 {
    (w_miss * p_miss + w_false * p_false) / w_miss.min(w_false)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnReport {
    pub grain: Grain,
    pub threshold_m: f64,
    pub counts: Confusion,
    pub p_miss: f64,
    pub p_false: f64,
    pub ndcf: f64,
    /// Set when `n_tc4tl == 0` (P_miss reported as 0).
    pub no_tc4tl: bool,
    /// Set when `n_not == 0` (P_false reported as 0).
    pub no_non_tc4tl: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub columns: Vec<ColumnReport>,
    /// Protocol columns whose grain had no records.
    pub absent: Vec<(Grain, f64)>,
    /// Arithmetic mean of the present columns.
    pub mean_ndcf: f64,
}

pub fn evaluate(records: &[TrialRecord], protocol: &EvalProtocol) -> Result<EvalReport> {
    protocol.validate()?;
    if records.is_empty() {
        return Err(Error::invalid("no records to score"));
    }
    if let Some(r) = records.iter().find(|r| !(r.true_distance_m > 0.0 && r.predicted_distance_m > 0.0)) {
        return Err(Error::invalid(format!("event {}: distances must be positive", r.event_id)));
    }
    let mut columns = Vec::new();
    let mut absent = Vec::new();
    for (grain, d) in protocol.columns() {
        let subset: Vec<&TrialRecord> = records.iter().filter(|r| r.grain == grain).collect();
        if subset.is_empty() {
            log::warn!("no {grain} records; column D={d} is absent");
            absent.push((grain, d));
            continue;
        }
        let counts = confusion(subset, d);
        let (p_miss, p_false) = (counts.p_miss(), counts.p_false());
        columns.push(ColumnReport {
            grain,
            threshold_m: d,
            counts,
            p_miss,
            p_false,
            ndcf: ndcf(p_miss, p_false, protocol.w_miss, protocol.w_false),
            no_tc4tl: counts.n_tc4tl == 0,
            no_non_tc4tl: counts.n_not == 0,
        });
    }
    let mean_ndcf = columns.iter().map(|c| c.ndcf).sum::<f64>() / columns.len() as f64;
    Ok(EvalReport { columns, absent, mean_ndcf })
}

fn subset_name(g: Grain) -> &'static str {
    match g {
        Grain::Fine => "Fine",
        Grain::Coarse => "Coarse",
    }
}

impl EvalReport {
    /// Aligned table, one row per column, then the mean.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<8} {:>5} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8}  flags",
            "subset", "D", "n_tc4tl", "n_not", "misses", "fa", "p_miss", "p_false"
        );
        for c in &self.columns {
            let mut flags = Vec::new();
            if c.no_tc4tl {
                flags.push("no-tc4tl");
            }
            if c.no_non_tc4tl {
                flags.push("no-non-tc4tl");
            }
            let _ = writeln!(
                s,
                "{:<8} {:>5.1} {:>8} {:>8} {:>8} {:>8} {:>8.4} {:>8.4}  {}",
                subset_name(c.grain),
                c.threshold_m,
                c.counts.n_tc4tl,
                c.counts.n_not,
                c.counts.misses,
                c.counts.false_alarms,
                c.p_miss,
                c.p_false,
                flags.join(",")
            );
        }
        for (g, d) in &self.absent {
            let _ = writeln!(s, "{:<8} {:>5.1}  absent", subset_name(*g), d);
        }
        let _ = writeln!(s);
        let mut header = String::new();
        let mut values = String::new();
        for c in &self.columns {
            let label = format!("nDCF(D={}|{})", c.threshold_m, subset_name(c.grain));
            let width = label.len().max(8);
            let _ = write!(header, "{label:>width$}  ");
            let _ = write!(values, "{:>width$.4}  ", c.ndcf);
        }
        let _ = writeln!(header, "{:>8}", "mean");
        let _ = writeln!(values, "{:>8.4}", self.mean_ndcf);
        s.push_str(&header);
        s.push_str(&values);
        s
    }

    /// Columns `subset,D,n_tc4tl,n_not,p_miss,p_false,ndcf` and a final mean row.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["subset", "D", "n_tc4tl", "n_not", "p_miss", "p_false", "ndcf"])?;
        for c in &self.columns {
            w.write_record([
                c.grain.as_str().to_string(),
                c.threshold_m.to_string(),
                c.counts.n_tc4tl.to_string(),
                c.counts.n_not.to_string(),
                c.p_miss.to_string(),
                c.p_false.to_string(),
                c.ndcf.to_string(),
            ])?;
        }
        w.write_record(["mean", "", "", "", "", "", &self.mean_ndcf.to_string()])?;
        w.flush()?;
        Ok(())
    }
}

/// `event_id,predicted_distance_m`, rows in the given order.
pub fn write_predictions<W: Write>(out: W, predictions: &[(String, f64)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["event_id", "predicted_distance_m"])?;
    for (id, d) in predictions {
        w.write_record([id.as_str(), &d.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_predictions<R: Read>(input: R) -> Result<Vec<(String, f64)>> {
    let mut r = csv::Reader::from_reader(input);
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for (i, rec) in r.deserialize::<(String, f64)>().enumerate() {
        let (id, d) = rec?;
        if !seen.insert(id.clone()) {
            return Err(Error::Parse { line: i + 2, message: format!("duplicate event id {id}") });
        }
        out.push((id, d));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyEntry {
    pub grain: Grain,
    pub distance_m: f64,
}

/// Key file `event_id,grain,distance_m` with grain `0` (fine) or `1` (coarse).
pub fn write_key<W: Write>(out: W, key: &BTreeMap<String, KeyEntry>) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["event_id", "grain", "distance_m"])?;
    for (id, e) in key {
        w.write_record([id.as_str(), &e.grain.code().to_string(), &e.distance_m.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_key<R: Read>(input: R) -> Result<BTreeMap<String, KeyEntry>> {
    let mut r = csv::Reader::from_reader(input);
    let mut out = BTreeMap::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let field = |j: usize| rec.get(j).ok_or_else(|| Error::Parse { line, message: "expected 3 fields".into() });
        let id = field(0)?.to_string();
        let grain: Grain = field(1)?.parse().map_err(|e: Error| Error::Parse { line, message: e.to_string() })?;
        let distance_m: f64 = field(2)?
            .parse()
            .map_err(|_| Error::Parse { line, message: format!("bad distance {:?}", field(2).unwrap_or("")) })?;
        if out.insert(id.clone(), KeyEntry { grain, distance_m }).is_some() {
            return Err(Error::Parse { line, message: format!("duplicate event id {id}") });
        }
    }
    Ok(out)
}

/// Pairs predictions with ground truth. Prediction ids missing from the key
/// are an error; key entries without a prediction are skipped with a warning.
pub fn join_records(predictions: &[(String, f64)], key: &BTreeMap<String, KeyEntry>) -> Result<Vec<TrialRecord>> {
    let unmatched: Vec<&str> =
        predictions.iter().filter(|(id, _)| !key.contains_key(id)).map(|(id, _)| id.as_str()).collect();
    if !unmatched.is_empty() {
        return Err(Error::data(format!("prediction ids not in key: {}", unmatched.join(", "))));
    }
    let predicted: BTreeSet<&str> = predictions.iter().map(|(id, _)| id.as_str()).collect();
    let missing = key.keys().filter(|id| !predicted.contains(id.as_str())).count();
    if missing > 0 {
        log::warn!("{missing} key entries have no prediction and are not scored");
    }
    Ok(predictions
        .iter()
        .map(|(id, d)| {
            let e = &key[id];
            TrialRecord {
                event_id: id.clone(),
                grain: e.grain,
                true_distance_m: e.distance_m,
                predicted_distance_m: *d,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(grain: Grain, truth: f64, pred: f64) -> TrialRecord {
        TrialRecord { event_id: String::new(), grain, true_distance_m: truth, predicted_distance_m: pred }
    }

    #[test]
    fn decision_boundary() {
        assert!(decide_tc4tl(1.8, 1.8));
        assert!(!decide_tc4tl(4.5, 3.0));
        assert!(decide_tc4tl(1.2, 3.0));
    }

    #[test]
    fn confusion_examples() {
        let total = [rec(Grain::Fine, 1.2, 4.5), rec(Grain::Fine, 4.5, 1.2)];
        let c = confusion(&total, 1.8);
        assert_eq!((c.p_miss(), c.p_false()), (1.0, 1.0));
        let mixed: Vec<_> =
            [(1.2, 1.2), (1.8, 3.0), (3.0, 3.0), (4.5, 4.5)].iter().map(|&(t, p)| rec(Grain::Fine, t, p)).collect();
        let c = confusion(&mixed, 1.8);
        assert_eq!(c, Confusion { n_tc4tl: 2, n_not: 2, misses: 1, false_alarms: 0 });
        assert_eq!((c.p_miss(), c.p_false()), (0.5, 0.0));
    }

    #[test]
    fn ndcf_examples() {
        assert!((ndcf(0.2, 0.3, 1.0, 1.0) - 0.5).abs() < 1e-15);
        assert_eq!(ndcf(0.0, 0.0, 2.0, 3.0), 0.0);
        assert_eq!(ndcf(1.0, 0.0, 1.0, 1.0), 1.0);
    }

    #[test]
    fn report_flags_and_absent_columns() {
        let only_fine = [rec(Grain::Fine, 1.2, 1.2), rec(Grain::Fine, 1.2, 4.5)];
        let report = evaluate(&only_fine, &EvalProtocol::default()).unwrap();
        assert_eq!(report.columns.len(), 3);
        assert_eq!(report.absent, vec![(Grain::Coarse, 1.8)]);
        assert!(report.columns.iter().all(|c| c.no_non_tc4tl));
        assert!((report.mean_ndcf - 0.5).abs() < 1e-15);
        assert!(report.to_text().contains("absent"));
        assert!(evaluate(&[], &EvalProtocol::default()).is_err());
    }

    #[test]
    fn csv_round_trips() {
        let preds = vec![("b".to_string(), 1.8), ("a".to_string(), 4.5)];
        let mut buf = Vec::new();
        write_predictions(&mut buf, &preds).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), "event_id,predicted_distance_m\nb,1.8\na,4.5\n");
        assert_eq!(read_predictions(buf.as_slice()).unwrap(), preds);

        let mut key = BTreeMap::new();
        key.insert("a".to_string(), KeyEntry { grain: Grain::Coarse, distance_m: 4.5 });
        key.insert("b".to_string(), KeyEntry { grain: Grain::Fine, distance_m: 1.2 });
        let mut kb = Vec::new();
        write_key(&mut kb, &key).unwrap();
        assert_eq!(read_key(kb.as_slice()).unwrap(), key);
        let records = join_records(&preds, &key).unwrap();
        assert_eq!(records[0].grain, Grain::Fine);
        let err = join_records(&[("zz".to_string(), 1.0)], &key).unwrap_err();
        assert!(err.to_string().contains("zz"));
    }
}
