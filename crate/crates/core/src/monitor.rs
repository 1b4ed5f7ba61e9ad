//! Runtime safety monitor.
//!
//! A [`MonitorModel`] bundles the abstraction table, the forest and the
//! decision rule. Each monitored episode owns a [`RunningState`]; every
//! observed Q-vector updates the prefix feature vector, queries the forest and
//! latches the unsafe decision once the criterion holds.

use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::abstraction::{AbstractState, AbstractionTable, FeatureMode, FeatureVector, UnseenPolicy};
use crate::error::{Error, Result};
use crate::forest::{Forest, ProbabilitySummary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    /// `up >= theta`
    UpperBound,
    /// `mean >= theta`
    OutputProbability,
    /// `low > theta`
    LowerBound,
}

impl Criterion {
    pub const ALL: [Criterion; 3] = [Criterion::UpperBound, Criterion::OutputProbability, Criterion::LowerBound];

    pub fn name(self) -> &'static str {
        match self {
            Criterion::UpperBound => "upper_bound",
            Criterion::OutputProbability => "output_probability",
            Criterion::LowerBound => "lower_bound",
        }
    }

    pub fn holds(self, band: &Band, theta: f64) -> bool {
        match self {
            Criterion::UpperBound => band.up >= theta,
            Criterion::OutputProbability => band.mean >= theta,
            Criterion::LowerBound => band.low > theta,
        }
    }
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Criterion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "upper_bound" | "upper" | "up" => Ok(Criterion::UpperBound),
            "output_probability" | "probability" | "mean" => Ok(Criterion::OutputProbability),
            "lower_bound" | "lower" | "low" => Ok(Criterion::LowerBound),
            other => Err(Error::InvalidConfig(format!("unknown criterion `{other}`"))),
        }
    }
}

/// The three numbers a decision criterion looks at.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub mean: f64,
    pub low: f64,
    pub up: f64,
}

impl From<&ProbabilitySummary> for Band {
    fn from(s: &ProbabilitySummary) -> Self {
        Band {
            mean: s.mean,
            low: s.low,
            up: s.up,
        }
    }
}

pub fn criterion_holds(summary: &ProbabilitySummary, criterion: Criterion, theta: f64) -> bool {
    criterion.holds(&Band::from(summary), theta)
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Provenance {
    pub env: Option<String>,
    pub agent_fingerprint: Option<String>,
    pub d: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitorModel {
    pub table: AbstractionTable,
    pub forest: Forest,
    pub mode: FeatureMode,
    pub criterion: Criterion,
    pub theta: f64,
    pub unseen_policy: UnseenPolicy,
    pub provenance: Provenance,
}

/// Per-episode monitor state.
#[derive(Debug, Clone)]
pub struct RunningState {
    features: FeatureVector,
    t: usize,
    fired: bool,
    frozen: bool,
}

impl RunningState {
    pub fn features(&self) -> &FeatureVector {
        &self.features
    }

    pub fn steps_observed(&self) -> usize {
        self.t
    }

    pub fn fired(&self) -> bool {
        self.fired
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepAssessment {
    pub t: usize,
    pub summary: ProbabilitySummary,
    pub fired: bool,
    pub unseen_alert: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTrace {
    pub assessments: Vec<StepAssessment>,
    pub first_fire_step: Option<usize>,
    pub episode_length: usize,
}

impl MonitorModel {
    pub fn validate(&self) -> Result<()> {
        if self.forest.feature_count != self.table.n() {
            return Err(Error::InvalidModel(format!(
                "forest expects {} features but the table has {} abstract states",
                self.forest.feature_count,
                self.table.n()
            )));
        }
        if !(self.theta > 0.0 && self.theta < 1.0) {
            return Err(Error::InvalidModel(format!("threshold {} outside (0, 1)", self.theta)));
        }
        self.forest.validate()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string(self)?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let model: MonitorModel = serde_json::from_str(&text)?;
        model.validate()?;
        Ok(model)
    }

    /// Same model with a different decision rule.
    pub fn with_rule(&self, criterion: Criterion, theta: f64) -> Self {
        MonitorModel {
            criterion,
            theta,
            ..self.clone()
        }
    }

    pub fn start(&self) -> RunningState {
        RunningState {
            features: FeatureVector::new(self.mode, self.table.n()),
            t: 0,
            fired: false,
            frozen: false,
        }
    }

    /// Forest output for the empty prefix (no state observed yet).
    pub fn initial_summary(&self) -> Result<ProbabilitySummary> {
        self.forest.predict(self.start().features.as_slice())
    }

    pub fn observe(&self, state: &mut RunningState, q: &[f64]) -> Result<StepAssessment> {
        if state.frozen {
            return Err(Error::Frozen);
        }
        let mut unseen_alert = false;
        match self.table.lookup(q)? {
            AbstractState::Seen(id) => state.features.record(id)?,
            AbstractState::Unseen => {
                if self.unseen_policy == UnseenPolicy::Stop {
                    unseen_alert = true;
                    state.frozen = true;
                }
            }
        }
        let summary = self.forest.predict(state.features.as_slice())?;
        state.fired |= criterion_holds(&summary, self.criterion, self.theta);
        let t = state.t;
        state.t += 1;
        Ok(StepAssessment {
            t,
            summary,
            fired: state.fired,
            unseen_alert,
        })
    }

    /// Monitor a whole stored episode. Monitoring continues after the decision
    /// fires and ends at the last step (or at a Stop-policy freeze).
    pub fn run_trace<'a>(&self, q_stream: impl IntoIterator<Item = &'a [f64]>) -> Result<DecisionTrace> {
        let mut state = self.start();
        let mut assessments = Vec::new();
        for q in q_stream {
            let a = self.observe(&mut state, q)?;
            let stop = a.unseen_alert;
            assessments.push(a);
            if stop {
                break;
            }
        }
        if assessments.is_empty() {
            return Err(Error::EmptyEpisodeSet);
        }
        let first_fire_step = assessments.iter().position(|a| a.fired);
        Ok(DecisionTrace {
            episode_length: assessments.len(),
            first_fire_step,
            assessments,
        })
    }

    /// Per-step bands for a stored episode, independent of the decision rule.
    pub fn bands<'a>(&self, q_stream: impl IntoIterator<Item = &'a [f64]>) -> Result<Vec<Band>> {
        Ok(self
            .run_trace(q_stream)?
            .assessments
            .iter()
            .map(|a| Band::from(&a.summary))
            .collect())
    }
}

/// First step at which `criterion` holds over a band series.
pub fn first_fire(bands: &[Band], criterion: Criterion, theta: f64) -> Option<usize> {
    bands.iter().position(|b| criterion.holds(b, theta))
}

#[derive(Deserialize)]
struct WatchIn {
    t: i64,
    q: Vec<f64>,
}

#[derive(Serialize)]
struct WatchOut {
    t: i64,
    p: f64,
    low: f64,
    up: f64,
    fired: bool,
    unseen: bool,
}

/// Serve the line protocol: `{"t": int, "q": [..]}` in, one
/// `{"t", "p", "low", "up", "fired", "unseen"}` line out per valid input.
/// Bad lines produce a message on `diag` and are skipped. An input with
/// `t == 0` after earlier observations starts a new episode.
pub fn watch<R: BufRead, W: Write, E: Write>(model: &MonitorModel, input: R, mut out: W, mut diag: E) -> Result<WatchStats> {
    let io = |e| Error::io("<watch stream>", e);
    let mut state = model.start();
    let mut stats = WatchStats::default();
    for (i, line) in input.lines().enumerate() {
        let line = line.map_err(io)?;
        if line.trim().is_empty() {
            continue;
        }
        let msg: WatchIn = match serde_json::from_str(&line) {
            Ok(m) => m,
            Err(e) => {
                writeln!(diag, "line {}: {e}", i + 1).map_err(io)?;
                stats.rejected += 1;
                continue;
            }
        };
        if msg.t == 0 && state.steps_observed() > 0 {
            state = model.start();
        }
        match model.observe(&mut state, &msg.q) {
            Ok(a) => {
                let reply = WatchOut {
                    t: msg.t,
                    p: a.summary.mean,
                    low: a.summary.low,
                    up: a.summary.up,
                    fired: a.fired,
                    unseen: a.unseen_alert,
                };
                serde_json::to_writer(&mut out, &reply)?;
                out.write_all(b"\n").map_err(io)?;
                out.flush().map_err(io)?;
                stats.answered += 1;
            }
            Err(e) => {
                writeln!(diag, "line {}: {e}", i + 1).map_err(io)?;
                stats.rejected += 1;
            }
        }
    }
    Ok(stats)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct WatchStats {
    pub answered: usize,
    pub rejected: usize,
}
