//! Curves over fragmentation levels, valley detection and the
//! entropy-offset comparison.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::levels::level_key;
use crate::runner::{CallStatus, EvalRecord};
use crate::score::{micro_f1, score_record, MatchMode, MicroCounts};
use crate::tokenstats::EntropyPoint;

pub const DEFAULT_DELTA: f64 = 0.05;

/// Label written next to every valley verdict.
pub const VALLEY_RULE: &str = "u_shaped iff depth > delta and rebound > delta and 0 < level_at_min < 1 (operational threshold)";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    MicroF1,
    Accuracy,
    EntropyBits,
}

impl Metric {
    pub fn as_str(self) -> &'static str {
        match self {
            Metric::MicroF1 => "micro_f1",
            Metric::Accuracy => "accuracy",
            Metric::EntropyBits => "entropy_bits",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub level: f64,
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    /// Free-form series name, e.g. the model.
    pub label: String,
    pub metric: Metric,
    pub points: Vec<CurvePoint>,
    /// Records dropped because their call did not succeed.
    pub excluded: usize,
}

impl Curve {
    /// Builds a curve from per-level samples; `std` is the sample standard
    /// deviation, 0 for a single sample.
    pub fn from_samples(label: impl Into<String>, metric: Metric, samples: &BTreeMap<i64, Vec<f64>>) -> Self {
        let points = samples
            .iter()
            .filter(|(_, v)| !v.is_empty())
            .map(|(&k, v)| {
                let (mean, std) = mean_std(v);
                CurvePoint { level: k as f64 / 1000.0, mean, std, n: v.len() }
            })
            .collect();
        Curve { label: label.into(), metric, points, excluded: 0 }
    }

    pub fn levels(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.level).collect()
    }

    pub fn means(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.mean).collect()
    }

    pub fn mean_at(&self, level: f64) -> Option<f64> {
        self.points.iter().find(|p| level_key(p.level) == level_key(level)).map(|p| p.mean)
    }
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn record_score(r: &EvalRecord) -> Option<crate::score::RecordScore> {
    r.score.clone().or_else(|| score_record(r, MatchMode::Exact))
}

/// Aggregates records into a curve: per level, the metric is computed per
/// fragmentation seed (Micro-F1 pools counts over documents), then averaged
/// across seeds. Records with a non-ok status are excluded and counted.
/// Records without a stored score are scored in exact mode.
pub fn aggregate_curve(records: &[EvalRecord], metric: Metric) -> Result<Curve> {
    if metric == Metric::EntropyBits {
        return Err(Error::arg("entropy curves come from entropy points, not records"));
    }
    let ok: Vec<&EvalRecord> = records.iter().filter(|r| r.status == CallStatus::Ok).collect();
    let excluded = records.len() - ok.len();
    if ok.is_empty() {
        return Err(Error::arg("no successful records to aggregate"));
    }
    let mut models: Vec<&str> = ok.iter().map(|r| r.model.as_str()).collect();
    models.sort_unstable();
    models.dedup();

    let mut counts: BTreeMap<(i64, u64), Vec<MicroCounts>> = BTreeMap::new();
    let mut hits: BTreeMap<(i64, u64), (usize, usize)> = BTreeMap::new();
    for r in &ok {
        let key = (level_key(r.wfr_level), r.frag_seed);
        let score = record_score(r).ok_or_else(|| Error::Consistency(format!("record {} cannot be scored", r.doc_id)))?;
        match metric {
            Metric::MicroF1 => counts.entry(key).or_default().push(score.counts),
            Metric::Accuracy => {
                let correct = score
                    .correct
                    .ok_or_else(|| Error::arg(format!("record {} has no accuracy (not a math record)", r.doc_id)))?;
                let e = hits.entry(key).or_default();
                e.0 += usize::from(correct);
                e.1 += 1;
            }
            Metric::EntropyBits => unreachable!(),
        }
    }

    let mut samples: BTreeMap<i64, Vec<f64>> = BTreeMap::new();
    for ((level, _), c) in &counts {
        samples.entry(*level).or_default().push(micro_f1(c)?);
    }
    for ((level, _), (h, n)) in &hits {
        samples.entry(*level).or_default().push(*h as f64 / *n as f64);
    }
    let mut curve = Curve::from_samples(models.join("+"), metric, &samples);
    curve.excluded = excluded;
    Ok(curve)
}

/// Mean and spread of entropy across documents at each level.
pub fn entropy_to_curve(points: &[EntropyPoint]) -> Result<Curve> {
    if points.is_empty() {
        return Err(Error::arg("no entropy points"));
    }
    let mut samples: BTreeMap<i64, Vec<f64>> = BTreeMap::new();
    for p in points {
        samples.entry(level_key(p.wfr_level)).or_default().push(p.entropy_bits);
    }
    Ok(Curve::from_samples("entropy", Metric::EntropyBits, &samples))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValleyReport {
    pub label: String,
    pub f1_clean: f64,
    pub f1_min: f64,
    pub level_at_min: f64,
    pub f1_full: f64,
    pub depth: f64,
    pub rebound: f64,
    pub is_u_shaped: bool,
    pub delta: f64,
    pub rule: String,
}

/// Index of the smallest (or largest) mean; ties go to the lowest level.
fn extreme(curve: &Curve, largest: bool) -> usize {
    let mut best = 0;
    for (i, p) in curve.points.iter().enumerate() {
        let b = curve.points[best].mean;
        if (largest && p.mean > b) || (!largest && p.mean < b) {
            best = i;
        }
    }
    best
}

fn sorted_points(curve: &Curve) -> Curve {
    let mut c = curve.clone();
    c.points.sort_by(|a, b| a.level.total_cmp(&b.level));
    c
}

pub fn detect_valley(curve: &Curve, delta: f64) -> Result<ValleyReport> {
    let curve = sorted_points(curve);
    if curve.points.len() < 3 {
        return Err(Error::arg("valley detection needs at least three levels"));
    }
    let clean = curve.mean_at(0.0).ok_or_else(|| Error::arg("curve has no level 0"))?;
    let full = curve.mean_at(1.0).ok_or_else(|| Error::arg("curve has no level 1"))?;
    let m = &curve.points[extreme(&curve, false)];
    let (depth, rebound) = (clean - m.mean, full - m.mean);
    Ok(ValleyReport {
        label: curve.label.clone(),
        f1_clean: clean,
        f1_min: m.mean,
        level_at_min: m.level,
        f1_full: full,
        depth,
        rebound,
        is_u_shaped: depth > delta && rebound > delta && m.level > 0.0 && m.level < 1.0,
        delta,
        rule: VALLEY_RULE.into(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OffsetReport {
    pub level_entropy_peak: f64,
    pub level_f1_min: f64,
    pub offset: f64,
    /// True when entropy peaks at a lower level than the F1 minimum.
    pub entropy_peaks_first: bool,
}

pub fn entropy_offset(f1: &Curve, entropy: &Curve) -> Result<OffsetReport> {
    let (f1, entropy) = (sorted_points(f1), sorted_points(entropy));
    let grid = |c: &Curve| c.points.iter().map(|p| level_key(p.level)).collect::<Vec<_>>();
    if f1.points.is_empty() || grid(&f1) != grid(&entropy) {
        return Err(Error::arg("F1 and entropy curves are on different level grids"));
    }
    let peak = entropy.points[extreme(&entropy, true)].level;
    let min = f1.points[extreme(&f1, false)].level;
    let offset = (level_key(peak) - level_key(min)) as f64 / 1000.0;
    Ok(OffsetReport {
        level_entropy_peak: peak,
        level_f1_min: min,
        offset,
        entropy_peaks_first: offset < 0.0,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub delta: f64,
    pub valleys: Vec<ValleyReport>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub offsets: Vec<OffsetReport>,
    pub excluded_records: usize,
}

fn fmt_num(x: f64) -> String {
    format!("{x:.6}")
}

/// Writes `curves.csv` (one row per curve and level), `long.csv` (one row
/// per point, plot-ready) and `summary.json`. Output depends only on the
/// inputs.
pub fn emit_report(curves: &[Curve], summary: &Summary, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let csv_err = |e: csv::Error| Error::Validation(format!("csv: {e}"));

    let path = dir.join("curves.csv");
    let mut w = csv::Writer::from_path(&path).map_err(csv_err)?;
    w.write_record(["series", "metric", "level", "mean", "std", "n"]).map_err(csv_err)?;
    for c in curves {
        for p in &c.points {
            w.write_record([c.label.clone(), c.metric.as_str().into(), format!("{:.3}", p.level), fmt_num(p.mean), fmt_num(p.std), p.n.to_string()])
                .map_err(csv_err)?;
        }
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let path = dir.join("long.csv");
    let mut w = csv::Writer::from_path(&path).map_err(csv_err)?;
    w.write_record(["series", "metric", "level", "stat", "value"]).map_err(csv_err)?;
    for c in curves {
        for p in &c.points {
            for (stat, v) in [("mean", p.mean), ("lower", p.mean - p.std), ("upper", p.mean + p.std)] {
                w.write_record([c.label.as_str(), c.metric.as_str(), &format!("{:.3}", p.level), stat, &fmt_num(v)])
                    .map_err(csv_err)?;
            }
        }
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let path = dir.join("summary.json");
    let text = serde_json::to_string_pretty(summary)? + "\n";
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
}
