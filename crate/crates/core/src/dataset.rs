//! Labeled episode corpora: collection under the greedy policy, splitting,
//! and JSONL persistence.
//!
//! Each JSONL line holds one episode:
//! `{"label": "safe"|"unsafe", "cause": string, "steps": [{"s": [..], "a": int, "q": [..], "r": number}]}`

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agent::{greedy_action, AgentModel};
use crate::envs::{Env, EnvKind, TerminationCause, MAX_STEPS};
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Safe,
    Unsafe,
}

impl Label {
    pub fn from_cause(cause: TerminationCause) -> Self {
        if cause == TerminationCause::Violation {
            Label::Unsafe
        } else {
            Label::Safe
        }
    }

    pub fn is_unsafe(self) -> bool {
        self == Label::Unsafe
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    #[serde(rename = "s")]
    pub state: Vec<f64>,
    #[serde(rename = "a")]
    pub action: usize,
    #[serde(rename = "q")]
    pub q: Vec<f64>,
    #[serde(rename = "r")]
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub label: Label,
    #[serde(with = "cause_str")]
    pub cause: TerminationCause,
    pub steps: Vec<Step>,
}

mod cause_str {
    use super::TerminationCause;
    use serde::{de::Error as _, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(c: &TerminationCause, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(c.as_str())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<TerminationCause, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(D::Error::custom)
    }
}

impl Episode {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn total_reward(&self) -> f64 {
        self.steps.iter().map(|s| s.reward).sum()
    }

    pub fn q_stream(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.steps.iter().map(|s| s.q.as_slice())
    }

    fn validate(&self) -> std::result::Result<(), String> {
        if self.steps.is_empty() || self.steps.len() > MAX_STEPS as usize {
            return Err(format!("episode length {} outside 1..={MAX_STEPS}", self.steps.len()));
        }
        if self.label != Label::from_cause(self.cause) {
            return Err(format!("label {:?} inconsistent with cause {}", self.label, self.cause.as_str()));
        }
        let dim = self.steps[0].state.len();
        let actions = self.steps[0].q.len();
        if actions == 0 {
            return Err("empty Q-vector".into());
        }
        for step in &self.steps {
            if step.state.len() != dim || step.q.len() != actions || step.action >= actions {
                return Err("steps disagree on state or action dimensions".into());
            }
            if step.q.iter().chain(&step.state).any(|v| !v.is_finite()) || !step.reward.is_finite() {
                return Err("non-finite value in step".into());
            }
        }
        Ok(())
    }
}

/// Roll out the greedy policy from the seeded initial state until termination.
pub fn run_episode(agent: &AgentModel, reset_seed: u64) -> Result<Episode> {
    let mut env = Env::new(agent.env, reset_seed);
    let mut steps = Vec::new();
    loop {
        let state = env.state().to_vec();
        let q = agent.q_values(&state)?;
        let action = greedy_action(q.as_slice())?;
        let out = env.step(action)?;
        steps.push(Step {
            state,
            action,
            q: q.0,
            reward: out.reward,
        });
        if out.terminated {
            return Ok(Episode {
                label: Label::from_cause(out.cause),
                cause: out.cause,
                steps,
            });
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeSet {
    pub env: EnvKind,
    pub episodes: Vec<Episode>,
    pub agent_fingerprint: Option<String>,
    pub seed: Option<u64>,
}

impl EpisodeSet {
    pub fn new(env: EnvKind, episodes: Vec<Episode>) -> Self {
        EpisodeSet {
            env,
            episodes,
            agent_fingerprint: None,
            seed: None,
        }
    }

    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    pub fn unsafe_count(&self) -> usize {
        self.episodes.iter().filter(|e| e.label.is_unsafe()).count()
    }

    pub fn labels(&self) -> Vec<Label> {
        self.episodes.iter().map(|e| e.label).collect()
    }

    pub fn has_both_labels(&self) -> bool {
        let u = self.unsafe_count();
        u > 0 && u < self.len()
    }

    fn with_episodes(&self, episodes: Vec<Episode>) -> Self {
        EpisodeSet {
            env: self.env,
            episodes,
            agent_fingerprint: self.agent_fingerprint.clone(),
            seed: self.seed,
        }
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        for ep in &self.episodes {
            serde_json::to_writer(&mut out, ep)?;
            out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        }
        out.flush().map_err(|e| Error::io(path, e))
    }

    /// Read a corpus written by [`EpisodeSet::write_jsonl`]. The environment is
    /// recovered from the stored state dimensionality.
    pub fn read_jsonl(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut episodes = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            let malformed = |detail: String| Error::MalformedLine {
                path: path.to_owned(),
                line: i + 1,
                detail,
            };
            if line.trim().is_empty() {
                continue;
            }
            let ep: Episode = serde_json::from_str(&line).map_err(|e| malformed(e.to_string()))?;
            ep.validate().map_err(malformed)?;
            episodes.push(ep);
        }
        let first = episodes.first().ok_or(Error::EmptyEpisodeSet)?;
        let dim = first.steps[0].state.len();
        let env = EnvKind::from_state_dim(dim).ok_or_else(|| Error::MalformedLine {
            path: path.to_owned(),
            line: 1,
            detail: format!("unrecognized state dimension {dim}"),
        })?;
        if let Some(i) = episodes.iter().position(|e| e.steps[0].state.len() != dim) {
            return Err(Error::MalformedLine {
                path: path.to_owned(),
                line: i + 1,
                detail: "state dimension differs from the first episode".into(),
            });
        }
        Ok(EpisodeSet::new(env, episodes))
    }
}

/// Collect `count` greedy episodes from seeded resets. Episode `i` uses the
/// reset seed `derive_indexed(seed, "episode", i)`, so the result does not
/// depend on how the work is sharded.
pub fn collect(agent: &AgentModel, count: usize, seed: u64) -> Result<EpisodeSet> {
    if count == 0 {
        return Err(Error::InvalidConfig("episode count must be at least 1".into()));
    }
    let episodes = (0..count)
        .into_par_iter()
        .map(|i| run_episode(agent, seed::derive_indexed(seed, "episode", i as u64)))
        .collect::<Result<Vec<_>>>()?;
    Ok(EpisodeSet {
        env: agent.env,
        episodes,
        agent_fingerprint: Some(agent.fingerprint()),
        seed: Some(seed),
    })
}

/// Seeded shuffle followed by a cut at `round(train_fraction * len)`.
pub fn split(set: &EpisodeSet, train_fraction: f64, seed: u64) -> Result<(EpisodeSet, EpisodeSet)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidConfig(format!("train fraction {train_fraction} outside (0, 1)")));
    }
    let cut = (train_fraction * set.len() as f64).round() as usize;
    if cut == 0 {
        return Err(Error::EmptySplit("train"));
    }
    if cut >= set.len() {
        return Err(Error::EmptySplit("test"));
    }
    let mut order: Vec<usize> = (0..set.len()).collect();
    order.shuffle(&mut seed::rng(seed, "split"));
    let pick = |idx: &[usize]| idx.iter().map(|&i| set.episodes[i].clone()).collect();
    Ok((set.with_episodes(pick(&order[..cut])), set.with_episodes(pick(&order[cut..]))))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_episode(label: Label, len: usize, tag: f64) -> Episode {
        let cause = match label {
            Label::Unsafe => TerminationCause::Violation,
            Label::Safe => TerminationCause::StepLimit,
        };
        Episode {
            label,
            cause,
            steps: (0..len)
                .map(|t| Step {
                    state: vec![tag, t as f64],
                    action: t % 3,
                    q: vec![-(t as f64) * 0.5, tag, 0.25],
                    reward: -1.0,
                })
                .collect(),
        }
    }

    fn toy_set(n: usize) -> EpisodeSet {
        let eps = (0..n)
            .map(|i| toy_episode(if i % 3 == 0 { Label::Unsafe } else { Label::Safe }, 1 + i % 5, i as f64))
            .collect();
        EpisodeSet::new(EnvKind::MountainCar, eps)
    }

    #[test]
    fn jsonl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("eps.jsonl");
        let set = toy_set(3);
        set.write_jsonl(&path).unwrap();
        let back = EpisodeSet::read_jsonl(&path).unwrap();
        assert_eq!(back.episodes, set.episodes);
        assert_eq!(back.env, EnvKind::MountainCar);
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.starts_with(r#"{"label":"unsafe","cause":"violation","steps":[{"s":"#));
    }

    #[test]
    fn truncated_line_reports_its_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("eps.jsonl");
        toy_set(3).write_jsonl(&path).unwrap();
        let mut text = std::fs::read_to_string(&path).unwrap();
        text.truncate(text.len() - 10);
        std::fs::write(&path, text).unwrap();
        match EpisodeSet::read_jsonl(&path) {
            Err(Error::MalformedLine { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn inconsistent_label_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("eps.jsonl");
        let mut f = File::create(&path).unwrap();
        writeln!(f, r#"{{"label":"unsafe","cause":"goal","steps":[{{"s":[0,0],"a":0,"q":[1,2,3],"r":-1}}]}}"#).unwrap();
        assert!(matches!(EpisodeSet::read_jsonl(&path), Err(Error::MalformedLine { line: 1, .. })));
    }

    #[test]
    fn empty_file_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("eps.jsonl");
        File::create(&path).unwrap();
        let err = EpisodeSet::read_jsonl(&path).unwrap_err();
        assert!(matches!(err, Error::EmptyEpisodeSet));
        assert_eq!(err.to_string(), "empty episode set");
    }

    #[test]
    fn split_sizes_and_determinism() {
        let set = toy_set(2200);
        let (train, test) = split(&set, 0.7, 1).unwrap();
        assert_eq!((train.len(), test.len()), (1540, 660));

        let small = toy_set(10);
        let a = split(&small, 0.5, 9).unwrap();
        let b = split(&small, 0.5, 9).unwrap();
        assert_eq!(a, b);
        // disjoint and exhaustive: the tag in state[0] identifies the episode
        let mut tags: Vec<i64> = a.0.episodes.iter().chain(&a.1.episodes).map(|e| e.steps[0].state[0] as i64).collect();
        tags.sort();
        assert_eq!(tags, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn split_rejects_empty_sides() {
        assert!(matches!(split(&toy_set(1), 0.7, 0), Err(Error::EmptySplit("test"))));
        assert!(matches!(split(&toy_set(1), 0.2, 0), Err(Error::EmptySplit("train"))));
        assert!(split(&toy_set(10), 1.0, 0).is_err());
    }

    #[test]
    fn collect_is_deterministic_and_consistent() {
        let agent = AgentModel::new(EnvKind::CartPole, &[8], 0.99, 5);
        let a = collect(&agent, 1, 77).unwrap();
        let b = collect(&agent, 1, 77).unwrap();
        assert_eq!(serde_json::to_string(&a.episodes).unwrap(), serde_json::to_string(&b.episodes).unwrap());
        let many = collect(&agent, 40, 3).unwrap();
        for ep in &many.episodes {
            assert!(ep.validate().is_ok());
            assert!(ep.len() <= MAX_STEPS as usize);
            assert_eq!(ep.label, Label::from_cause(ep.cause));
        }
        assert!(matches!(collect(&agent, 0, 3), Err(Error::InvalidConfig(_))));
    }
}
