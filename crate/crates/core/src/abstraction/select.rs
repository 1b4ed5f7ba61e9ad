//! Two-phase choice of the abstraction level.
//!
//! Phase 1 trains one monitor per candidate level on an inner 70% split and
//! keeps every level whose whole-episode macro F1 on the inner 30% is within
//! `f1_slack` of the best. Phase 2 replays the inner test episodes through
//! each kept monitor and picks the level whose true positives fire earliest.
//!
//! [`select_level`] takes an explicit candidate list. [`coarse_to_fine`]
//! builds the list itself: a 1-2-5 ladder of levels restricted to a band of
//! abstract-state counts, refined around the best level by geometric
//! midpoints.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::AbstractionTable;
use crate::dataset::{self, EpisodeSet};
use crate::error::{Error, Result};
use crate::eval::{self, BuildSettings};
use crate::forest::ProbabilitySummary;
use crate::monitor::{criterion_holds, MonitorModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionConfig {
    pub candidates: Vec<f64>,
    pub settings: BuildSettings,
    pub inner_split_seed: u64,
    pub train_fraction: f64,
    /// Width of the optimal range below the best F1.
    pub f1_slack: f64,
}

impl SelectionConfig {
    pub fn new(candidates: Vec<f64>, settings: BuildSettings, inner_split_seed: u64) -> Self {
        SelectionConfig {
            candidates,
            settings,
            inner_split_seed,
            train_fraction: 0.7,
            f1_slack: 0.02,
        }
    }
}

/// Bounds for the automatic search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchBounds {
    /// Abstract-state counts (on the inner training split) a level must fall
    /// between to be considered.
    pub min_states: usize,
    pub max_states: usize,
    /// Rounds of midpoint refinement around the best level.
    pub refine_rounds: usize,
}

impl Default for SearchBounds {
    fn default() -> Self {
        SearchBounds {
            min_states: 300,
            max_states: 30_000,
            refine_rounds: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelReport {
    pub d: f64,
    pub n: usize,
    pub f1: f64,
    /// Mean first-fire step over true positives; `None` when nothing was caught
    /// or the level was not considered in phase 2.
    pub mean_fire_step: Option<f64>,
    pub true_positives: usize,
    /// Forest mean for the empty prefix.
    pub initial_probability: f64,
    pub in_range: bool,
    /// Excluded because the empty prefix already satisfies the decision rule.
    /// Excluded levels neither set the best F1 nor enter the optimal range.
    pub excluded: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub optimal_range: (f64, f64),
    pub d_star: f64,
    /// Sorted by increasing `d`.
    pub report: Vec<LevelReport>,
}

struct Candidate {
    d: f64,
    model: MonitorModel,
    f1: f64,
    initial: ProbabilitySummary,
    excluded: bool,
}

fn check_levels(levels: &[f64]) -> Result<()> {
    if let Some(d) = levels.iter().find(|d| !(**d > 0.0 && d.is_finite())) {
        return Err(Error::InvalidConfig(format!("abstraction level {d} must be positive")));
    }
    Ok(())
}

fn phase1(inner_train: &EpisodeSet, inner_test: &EpisodeSet, levels: &[f64], settings: &BuildSettings) -> Result<Vec<Candidate>> {
    levels
        .par_iter()
        .map(|&d| {
            let model = eval::build_monitor(inner_train, d, settings)?;
            let f1 = eval::post_training_f1(&model, inner_test)?;
            let initial = model.initial_summary()?;
            let excluded = criterion_holds(&initial, settings.criterion, settings.theta);
            Ok(Candidate {
                d,
                model,
                f1,
                initial,
                excluded,
            })
        })
        .collect()
}

/// Index of the highest-F1 level that passes the guard; the smaller index
/// wins ties.
fn best_usable(evaluated: &[Candidate]) -> Option<usize> {
    (0..evaluated.len())
        .filter(|&i| !evaluated[i].excluded)
        .max_by(|&i, &j| evaluated[i].f1.total_cmp(&evaluated[j].f1).then(j.cmp(&i)))
}

fn phase2(mut evaluated: Vec<Candidate>, inner_test: &EpisodeSet, settings: &BuildSettings, f1_slack: f64) -> Result<Selection> {
    evaluated.sort_by(|a, b| a.d.total_cmp(&b.d));
    let best = best_usable(&evaluated)
        .map(|i| evaluated[i].f1)
        .ok_or_else(|| Error::InvalidConfig("every level fails the initial-probability guard".into()))?;
    let labels = inner_test.labels();
    let mut report = Vec::with_capacity(evaluated.len());
    for c in &evaluated {
        let in_range = !c.excluded && c.f1 >= best - f1_slack;
        let (mean_fire_step, true_positives) = if in_range {
            let bands = eval::episode_bands(&c.model, inner_test)?;
            let records = eval::fire_records(&bands, settings.criterion, settings.theta);
            let stats = eval::decision_time_stats(&records, &labels)?;
            (stats.decision_step.map(|t| t.avg), stats.true_positives)
        } else {
            (None, 0)
        };
        report.push(LevelReport {
            d: c.d,
            n: c.model.table.n(),
            f1: c.f1,
            mean_fire_step,
            true_positives,
            initial_probability: c.initial.mean,
            in_range,
            excluded: c.excluded,
        });
    }

    let in_range: Vec<f64> = report.iter().filter(|r| r.in_range).map(|r| r.d).collect();
    let optimal_range = (
        in_range.iter().copied().fold(f64::INFINITY, f64::min),
        in_range.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    );
    let d_star = report
        .iter()
        .filter(|r| r.in_range)
        .min_by(|a, b| {
            let fire = |r: &LevelReport| r.mean_fire_step.unwrap_or(f64::INFINITY);
            fire(a)
                .total_cmp(&fire(b))
                .then(b.f1.total_cmp(&a.f1))
                .then(b.d.total_cmp(&a.d))
        })
        .map(|r| r.d)
        .expect("the best level is in range");

    Ok(Selection {
        optimal_range,
        d_star,
        report,
    })
}

pub fn select_level(train: &EpisodeSet, config: &SelectionConfig) -> Result<Selection> {
    if config.candidates.len() < 2 {
        return Err(Error::InvalidConfig("need at least two candidate levels".into()));
    }
    check_levels(&config.candidates)?;
    let (inner_train, inner_test) = dataset::split(train, config.train_fraction, config.inner_split_seed)?;
    let evaluated = phase1(&inner_train, &inner_test, &config.candidates, &config.settings)?;
    phase2(evaluated, &inner_test, &config.settings, config.f1_slack)
}

/// The 1-2-5 ladder from 1e-3 to 1e3.
pub fn coarse_ladder() -> Vec<f64> {
    (-3..=3)
        .flat_map(|e| {
            let scale = 10f64.powi(e);
            [1.0, 2.0, 5.0].map(|m| m * scale)
        })
        .filter(|&d| d <= 1e3)
        .collect()
}

/// Automatic search: the candidate list of `config` is ignored.
pub fn coarse_to_fine(train: &EpisodeSet, config: &SelectionConfig, bounds: &SearchBounds) -> Result<Selection> {
    if bounds.min_states > bounds.max_states {
        return Err(Error::InvalidConfig("state-count bounds are reversed".into()));
    }
    let (inner_train, inner_test) = dataset::split(train, config.train_fraction, config.inner_split_seed)?;
    let states = |d: f64| AbstractionTable::build(&inner_train, d).map(|t| t.n());
    let within = |n: usize| (bounds.min_states..=bounds.max_states).contains(&n);

    let mut levels = Vec::new();
    for d in coarse_ladder() {
        if within(states(d)?) {
            levels.push(d);
        }
    }
    if levels.len() < 2 {
        return Err(Error::InvalidConfig(format!(
            "fewer than two levels give between {} and {} abstract states",
            bounds.min_states, bounds.max_states
        )));
    }
    let mut evaluated = phase1(&inner_train, &inner_test, &levels, &config.settings)?;

    for _ in 0..bounds.refine_rounds {
        evaluated.sort_by(|a, b| a.d.total_cmp(&b.d));
        let Some(best) = best_usable(&evaluated) else {
            break;
        };
        let mut fresh = Vec::new();
        for neighbour in [best.checked_sub(1), Some(best + 1)].into_iter().flatten() {
            if let Some(other) = evaluated.get(neighbour) {
                let mid = (evaluated[best].d * other.d).sqrt();
                if within(states(mid)?) {
                    fresh.push(mid);
                }
            }
        }
        if fresh.is_empty() {
            break;
        }
        evaluated.extend(phase1(&inner_train, &inner_test, &fresh, &config.settings)?);
    }
    phase2(evaluated, &inner_test, &config.settings, config.f1_slack)
}
