//! Evaluation of monitors over labeled test episodes.
//!
//! Unsafe is the positive class. A terminated episode keeps its final latched
//! prediction for all later time steps. Undefined ratios (0/0) count as 0.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::abstraction::{self, AbstractionTable, FeatureMode};
use crate::dataset::{EpisodeSet, Label};
use crate::error::{Error, Result};
use crate::forest::{self, ForestConfig};
use crate::monitor::{first_fire, Band, Criterion, MonitorModel, Provenance};

/// When (if ever) a monitor fired on one episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FireRecord {
    pub first_fire_step: Option<usize>,
    pub length: usize,
}

impl FireRecord {
    /// Latched prediction at time `t`.
    pub fn fired_by(&self, t: usize) -> bool {
        let t = t.min(self.length.saturating_sub(1));
        self.first_fire_step.is_some_and(|f| f <= t)
    }

    pub fn fired(&self) -> bool {
        self.first_fire_step.is_some()
    }
}

impl From<&crate::monitor::DecisionTrace> for FireRecord {
    fn from(trace: &crate::monitor::DecisionTrace) -> Self {
        FireRecord {
            first_fire_step: trace.first_fire_step,
            length: trace.episode_length,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn f1(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

impl Confusion {
    pub fn from_predictions(labels: &[Label], predicted_unsafe: impl IntoIterator<Item = bool>) -> Self {
        let mut c = Confusion::default();
        for (label, pred) in labels.iter().zip(predicted_unsafe) {
            match (label.is_unsafe(), pred) {
                (true, true) => c.tp += 1,
                (false, true) => c.fp += 1,
                (false, false) => c.tn += 1,
                (true, false) => c.fn_ += 1,
            }
        }
        c
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn unsafe_scores(&self) -> ClassScores {
        let precision = ratio(self.tp, self.tp + self.fp);
        let recall = ratio(self.tp, self.tp + self.fn_);
        ClassScores {
            precision,
            recall,
            f1: f1(precision, recall),
            support: self.tp + self.fn_,
        }
    }

    pub fn safe_scores(&self) -> ClassScores {
        let precision = ratio(self.tn, self.tn + self.fn_);
        let recall = ratio(self.tn, self.tn + self.fp);
        ClassScores {
            precision,
            recall,
            f1: f1(precision, recall),
            support: self.tn + self.fp,
        }
    }

    pub fn macro_f1(&self) -> f64 {
        (self.unsafe_scores().f1 + self.safe_scores().f1) / 2.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub t: usize,
    pub precision_weighted: f64,
    pub recall_weighted: f64,
    pub f1_weighted: f64,
    pub f1_macro: f64,
    pub confusion: Confusion,
}

impl MetricsRow {
    pub fn from_confusion(t: usize, confusion: Confusion) -> Self {
        let (u, s) = (confusion.unsafe_scores(), confusion.safe_scores());
        let total = (u.support + s.support) as f64;
        let weighted = |a: f64, b: f64| {
            if total == 0.0 {
                0.0
            } else {
                (a * u.support as f64 + b * s.support as f64) / total
            }
        };
        MetricsRow {
            t,
            precision_weighted: weighted(u.precision, s.precision),
            recall_weighted: weighted(u.recall, s.recall),
            f1_weighted: weighted(u.f1, s.f1),
            f1_macro: (u.f1 + s.f1) / 2.0,
            confusion,
        }
    }
}

fn check_lengths(records: usize, labels: usize) -> Result<()> {
    if records != labels {
        return Err(Error::DimensionMismatch {
            expected: records,
            actual: labels,
        });
    }
    if records == 0 {
        return Err(Error::EmptyEpisodeSet);
    }
    Ok(())
}

/// One row per time step `0..horizon`.
pub fn metrics_over_time(records: &[FireRecord], labels: &[Label], horizon: usize) -> Result<Vec<MetricsRow>> {
    check_lengths(records.len(), labels.len())?;
    Ok((0..horizon)
        .map(|t| {
            let c = Confusion::from_predictions(labels, records.iter().map(|r| r.fired_by(t)));
            MetricsRow::from_confusion(t, c)
        })
        .collect())
}

/// Longest episode, the natural evaluation horizon.
pub fn default_horizon(records: &[FireRecord]) -> usize {
    records.iter().map(|r| r.length).max().unwrap_or(0)
}

/// End-of-episode metrics (every episode at its final latched prediction).
pub fn final_metrics(records: &[FireRecord], labels: &[Label]) -> Result<MetricsRow> {
    check_lengths(records.len(), labels.len())?;
    let horizon = default_horizon(records);
    let c = Confusion::from_predictions(labels, records.iter().map(FireRecord::fired));
    Ok(MetricsRow::from_confusion(horizon.saturating_sub(1), c))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Triple {
    pub min: f64,
    pub avg: f64,
    pub max: f64,
}

impl Triple {
    fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        Some(Triple {
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            avg: values.iter().sum::<f64>() / values.len() as f64,
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        })
    }
}

/// Decision timing over true positives. The triples are `None` when no unsafe
/// episode was caught.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecisionTimeStats {
    pub decision_step: Option<Triple>,
    pub remaining_steps: Option<Triple>,
    pub remaining_fraction: Option<Triple>,
    pub true_positives: usize,
    pub fp_count: usize,
    pub fn_count: usize,
}

pub fn decision_time_stats(records: &[FireRecord], labels: &[Label]) -> Result<DecisionTimeStats> {
    check_lengths(records.len(), labels.len())?;
    let (mut steps, mut remaining, mut fraction) = (Vec::new(), Vec::new(), Vec::new());
    let (mut fp_count, mut fn_count) = (0, 0);
    for (r, label) in records.iter().zip(labels) {
        match (label.is_unsafe(), r.first_fire_step) {
            (true, Some(f)) => {
                let rem = r.length.saturating_sub(1 + f) as f64;
                steps.push(f as f64);
                remaining.push(rem);
                fraction.push(rem / r.length as f64);
            }
            (true, None) => fn_count += 1,
            (false, Some(_)) => fp_count += 1,
            (false, None) => {}
        }
    }
    Ok(DecisionTimeStats {
        decision_step: Triple::of(&steps),
        remaining_steps: Triple::of(&remaining),
        remaining_fraction: Triple::of(&fraction),
        true_positives: steps.len(),
        fp_count,
        fn_count,
    })
}

/// Per-step bands for every episode of a test set.
pub fn episode_bands(model: &MonitorModel, test: &EpisodeSet) -> Result<Vec<Vec<Band>>> {
    use rayon::prelude::*;
    test.episodes
        .par_iter()
        .map(|ep| model.bands(ep.q_stream()))
        .collect()
}

pub fn fire_records(bands: &[Vec<Band>], criterion: Criterion, theta: f64) -> Vec<FireRecord> {
    bands
        .iter()
        .map(|b| FireRecord {
            first_fire_step: first_fire(b, criterion, theta),
            length: b.len(),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub criterion: Criterion,
    pub theta: f64,
    pub metrics: MetricsRow,
    pub stats: DecisionTimeStats,
}

/// Evaluate every (criterion, threshold) pair on the same band series.
pub fn sweep(bands: &[Vec<Band>], labels: &[Label], criteria: &[Criterion], thetas: &[f64]) -> Result<Vec<SweepRow>> {
    if criteria.is_empty() || thetas.is_empty() {
        return Err(Error::InvalidConfig("sweep grid is empty".into()));
    }
    check_lengths(bands.len(), labels.len())?;
    let mut rows = Vec::new();
    for &criterion in criteria {
        for &theta in thetas {
            let records = fire_records(bands, criterion, theta);
            rows.push(SweepRow {
                criterion,
                theta,
                metrics: final_metrics(&records, labels)?,
                stats: decision_time_stats(&records, labels)?,
            });
        }
    }
    Ok(rows)
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

pub fn write_sweep_csv(rows: &[SweepRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "criterion",
        "theta",
        "precision_weighted",
        "recall_weighted",
        "f1_weighted",
        "f1_macro",
        "tp",
        "fp",
        "tn",
        "fn",
        "decision_step_min",
        "decision_step_avg",
        "decision_step_max",
        "remaining_steps_avg",
        "remaining_fraction_avg",
    ])?;
    for r in rows {
        let m = &r.metrics;
        let s = &r.stats;
        w.write_record([
            r.criterion.name().to_string(),
            r.theta.to_string(),
            m.precision_weighted.to_string(),
            m.recall_weighted.to_string(),
            m.f1_weighted.to_string(),
            m.f1_macro.to_string(),
            m.confusion.tp.to_string(),
            m.confusion.fp.to_string(),
            m.confusion.tn.to_string(),
            m.confusion.fn_.to_string(),
            opt(s.decision_step.map(|t| t.min)),
            opt(s.decision_step.map(|t| t.avg)),
            opt(s.decision_step.map(|t| t.max)),
            opt(s.remaining_steps.map(|t| t.avg)),
            opt(s.remaining_fraction.map(|t| t.avg)),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Metrics-over-time CSV; the header notes the 0/0 convention.
pub fn write_metrics_csv(rows: &[MetricsRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "t",
        "precision_weighted(0/0=0)",
        "recall_weighted(0/0=0)",
        "f1_weighted(0/0=0)",
        "f1_macro(0/0=0)",
        "tp",
        "fp",
        "tn",
        "fn",
    ])?;
    for r in rows {
        w.write_record([
            r.t.to_string(),
            r.precision_weighted.to_string(),
            r.recall_weighted.to_string(),
            r.f1_weighted.to_string(),
            r.f1_macro.to_string(),
            r.confusion.tp.to_string(),
            r.confusion.fp.to_string(),
            r.confusion.tn.to_string(),
            r.confusion.fn_.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Decision-time overview keyed by criterion, for machine comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionSummary {
    pub theta: f64,
    pub episodes: usize,
    pub unsafe_episodes: usize,
    pub rows: Vec<DecisionSummaryRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionSummaryRow {
    pub criterion: Criterion,
    pub decision_step: Option<Triple>,
    pub remaining_steps: Option<Triple>,
    pub remaining_percent: Option<Triple>,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub f1_macro: f64,
}

pub fn decision_summary(bands: &[Vec<Band>], labels: &[Label], theta: f64) -> Result<DecisionSummary> {
    let rows = sweep(bands, labels, &Criterion::ALL, &[theta])?
        .into_iter()
        .map(|r| DecisionSummaryRow {
            criterion: r.criterion,
            decision_step: r.stats.decision_step,
            remaining_steps: r.stats.remaining_steps,
            remaining_percent: r.stats.remaining_fraction.map(|t| Triple {
                min: 100.0 * t.min,
                avg: 100.0 * t.avg,
                max: 100.0 * t.max,
            }),
            false_positives: r.stats.fp_count,
            false_negatives: r.stats.fn_count,
            f1_macro: r.metrics.f1_macro,
        })
        .collect();
    Ok(DecisionSummary {
        theta,
        episodes: labels.len(),
        unsafe_episodes: labels.iter().filter(|l| l.is_unsafe()).count(),
        rows,
    })
}

/// Settings shared by everything that builds monitors from a corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildSettings {
    pub mode: FeatureMode,
    pub forest: ForestConfig,
    pub criterion: Criterion,
    pub theta: f64,
    pub seed: u64,
}

impl Default for BuildSettings {
    fn default() -> Self {
        BuildSettings {
            mode: FeatureMode::Binary,
            forest: ForestConfig::default(),
            criterion: Criterion::UpperBound,
            theta: 0.5,
            seed: 0,
        }
    }
}

/// Build a monitor at level `d` from whole-episode features of `train`.
pub fn build_monitor(train: &EpisodeSet, d: f64, settings: &BuildSettings) -> Result<MonitorModel> {
    if !train.has_both_labels() {
        return Err(Error::SingleClass);
    }
    let table = AbstractionTable::build(train, d)?;
    if table.n() == 0 {
        return Err(Error::EmptyEpisodeSet);
    }
    let features = abstraction::feature_matrix(&table, train, settings.mode)?;
    let labels: Vec<bool> = train.episodes.iter().map(|e| e.label.is_unsafe()).collect();
    let forest = forest::train_forest(&features, &labels, &settings.forest, crate::seed::derive(settings.seed, "forest"))?;
    Ok(MonitorModel {
        table,
        forest,
        mode: settings.mode,
        criterion: settings.criterion,
        theta: settings.theta,
        unseen_policy: abstraction::UnseenPolicy::Ignore,
        provenance: Provenance {
            env: Some(train.env.name().to_owned()),
            agent_fingerprint: train.agent_fingerprint.clone(),
            d,
            seed: settings.seed,
        },
    })
}

/// Macro F1 of whole-episode classification (mean probability >= 0.5).
pub fn post_training_f1(model: &MonitorModel, test: &EpisodeSet) -> Result<f64> {
    let features = abstraction::feature_matrix(&model.table, test, model.mode)?;
    let preds = (0..test.len())
        .map(|i| Ok(model.forest.predict(&features.row(i))?.is_unsafe()))
        .collect::<Result<Vec<_>>>()?;
    Ok(Confusion::from_predictions(&test.labels(), preds).macro_f1())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbstractionRow {
    pub d: f64,
    pub n: usize,
    pub post_training_f1: f64,
    pub horizon_f1: f64,
    /// First step whose macro F1 is within 0.01 of the horizon value.
    pub plateau_step: usize,
    pub f1_curve: Vec<f64>,
}

/// Sensitivity of the monitor to the abstraction level.
pub fn abstraction_report(train: &EpisodeSet, test: &EpisodeSet, candidates: &[f64], settings: &BuildSettings) -> Result<Vec<AbstractionRow>> {
    if candidates.len() < 2 {
        return Err(Error::InvalidConfig("need at least two abstraction levels".into()));
    }
    let labels = test.labels();
    candidates
        .iter()
        .map(|&d| {
            let model = build_monitor(train, d, settings)?;
            let bands = episode_bands(&model, test)?;
            let records = fire_records(&bands, settings.criterion, settings.theta);
            let horizon = default_horizon(&records);
            let curve: Vec<f64> = metrics_over_time(&records, &labels, horizon)?
                .iter()
                .map(|r| r.f1_macro)
                .collect();
            let horizon_f1 = curve.last().copied().unwrap_or(0.0);
            Ok(AbstractionRow {
                d,
                n: model.table.n(),
                post_training_f1: post_training_f1(&model, test)?,
                horizon_f1,
                plateau_step: curve.iter().position(|&f| f >= horizon_f1 - 0.01).unwrap_or(0),
                f1_curve: curve,
            })
        })
        .collect()
}

pub fn write_abstraction_csv(rows: &[AbstractionRow], levels: &Path, curves: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(levels)?;
    w.write_record(["d", "n", "post_training_f1", "horizon_f1", "plateau_step"])?;
    for r in rows {
        w.write_record([
            r.d.to_string(),
            r.n.to_string(),
            r.post_training_f1.to_string(),
            r.horizon_f1.to_string(),
            r.plateau_step.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(levels, e))?;
    let mut w = csv::Writer::from_path(curves)?;
    w.write_record(["d", "t", "f1_macro"])?;
    for r in rows {
        for (t, f) in r.f1_curve.iter().enumerate() {
            w.write_record([r.d.to_string(), t.to_string(), f.to_string()])?;
        }
    }
    w.flush().map_err(|e| Error::io(curves, e))
}
