//! DQN-lite agent.
//!
//! The monitor only ever sees the agent through [`AgentModel::q_values`]; the
//! training procedure here exists to produce agents whose greedy policy is
//! competent but imperfect, so that collected corpora contain both safe and
//! unsafe episodes.

use std::collections::{BTreeMap, VecDeque};
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::dataset;
use crate::envs::{Env, EnvKind};
use crate::error::{Error, Result};
use crate::nn::{self, Mlp, Optimizer, OptimizerKind, Trace};
use crate::seed;

/// Estimated action values for one state, one entry per discrete action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct QVector(pub Vec<f64>);

impl QVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn greedy_action(q: &[f64]) -> Result<usize> {
    if q.is_empty() {
        return Err(Error::EmptyQVector);
    }
    let mut best = 0;
    for (i, &v) in q.iter().enumerate().skip(1) {
        if v > q[best] {
            best = i;
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentTrainConfig {
    pub total_steps: u64,
    pub replay_capacity: usize,
    pub batch_size: usize,
    /// Environment steps collected before the first gradient update.
    pub learning_starts: u64,
    /// Environment steps between update rounds.
    pub train_freq: u64,
    /// Gradient steps per update round.
    pub gradient_steps: usize,
    pub target_sync_interval: u64,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub epsilon_decay_steps: u64,
    /// Upper bound on how many steps an exploratory action is held for. Each
    /// exploratory choice is repeated for a uniform 1..=hold steps; 1 gives
    /// plain epsilon-greedy.
    pub exploration_hold: u64,
    pub gamma: f64,
    pub hidden: Vec<usize>,
    pub double_q: bool,
    pub max_grad_norm: f64,
    pub checkpoint_interval: u64,
    /// Greedy rollouts used to score each checkpoint.
    pub checkpoint_episodes: usize,
    /// Acceptable unsafe-episode rate for the selected checkpoint.
    pub unsafe_band: (f64, f64),
    /// Rollouts for the final report of the selected model.
    pub eval_episodes: usize,
    pub seed: u64,
}

impl AgentTrainConfig {
    pub fn for_env(kind: EnvKind) -> Self {
        let base = AgentTrainConfig {
            total_steps: 70_000,
            replay_capacity: 50_000,
            batch_size: 64,
            learning_starts: 1_000,
            train_freq: 4,
            gradient_steps: 1,
            target_sync_interval: 500,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::SgdMomentum { momentum: 0.9 },
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_decay_steps: 15_000,
            exploration_hold: 1,
            gamma: 0.99,
            hidden: vec![64, 64],
            double_q: true,
            max_grad_norm: 10.0,
            checkpoint_interval: 5_000,
            checkpoint_episodes: 200,
            unsafe_band: (0.05, 0.20),
            eval_episodes: 100,
            seed: 0,
        };
        match kind {
            EnvKind::CartPole => base,
            // Sparse reward: plain epsilon-greedy rarely reaches the goal, so
            // exploratory actions are held and Adam replaces momentum SGD.
            EnvKind::MountainCar => AgentTrainConfig {
                total_steps: 120_000,
                replay_capacity: 10_000,
                batch_size: 128,
                train_freq: 16,
                gradient_steps: 8,
                target_sync_interval: 600,
                learning_rate: 4e-3,
                optimizer: OptimizerKind::Adam {
                    beta1: 0.9,
                    beta2: 0.999,
                    eps: 1e-8,
                },
                epsilon_end: 0.07,
                epsilon_decay_steps: 40_000,
                exploration_hold: 24,
                gamma: 0.98,
                ..base
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_owned()));
        if self.replay_capacity == 0 || self.batch_size == 0 || self.train_freq == 0 {
            return bad("replay capacity, batch size and train frequency must be positive");
        }
        if self.exploration_hold == 0 {
            return bad("exploration hold must be at least one step");
        }
        if self.gradient_steps == 0 || self.target_sync_interval == 0 || self.checkpoint_interval == 0 {
            return bad("gradient steps, target sync and checkpoint intervals must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be positive");
        }
        for eps in [self.epsilon_start, self.epsilon_end] {
            if !(0.0..=1.0).contains(&eps) {
                return bad("epsilon must lie in [0, 1]");
            }
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("discount factor must lie in [0, 1]");
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad("hidden layers must be non-empty and positive");
        }
        if self.checkpoint_episodes == 0 || self.eval_episodes == 0 {
            return bad("evaluation episode counts must be positive");
        }
        let (lo, hi) = self.unsafe_band;
        if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
            return bad("unsafe band must be an interval inside [0, 1]");
        }
        Ok(())
    }

    fn epsilon(&self, step: u64) -> f64 {
        if step >= self.epsilon_decay_steps {
            return self.epsilon_end;
        }
        let frac = step as f64 / self.epsilon_decay_steps as f64;
        self.epsilon_start + frac * (self.epsilon_end - self.epsilon_start)
    }
}

/// A trained (or freshly initialized) Q-network with its input normalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentModel {
    pub env: EnvKind,
    pub gamma: f64,
    pub input_offset: Vec<f64>,
    pub input_scale: Vec<f64>,
    pub network: Mlp,
    pub steps_trained: u64,
    pub seed: u64,
}

fn input_normalization(kind: EnvKind) -> (Vec<f64>, Vec<f64>) {
    match kind {
        EnvKind::CartPole => (vec![0.0; 4], vec![2.4, 3.0, 0.21, 3.0]),
        EnvKind::MountainCar => (vec![-0.3, 0.0], vec![0.9, 0.07]),
    }
}

impl AgentModel {
    pub fn new(kind: EnvKind, hidden: &[usize], gamma: f64, seed: u64) -> Self {
        let mut sizes = vec![kind.state_dim()];
        sizes.extend_from_slice(hidden);
        sizes.push(kind.action_count());
        let (input_offset, input_scale) = input_normalization(kind);
        AgentModel {
            env: kind,
            gamma,
            input_offset,
            input_scale,
            network: Mlp::new(&sizes, &mut seed::rng(seed, "agent-init")),
            steps_trained: 0,
            seed,
        }
    }

    pub fn action_count(&self) -> usize {
        self.env.action_count()
    }

    fn normalize(&self, state: &[f64]) -> Vec<f64> {
        state
            .iter()
            .zip(&self.input_offset)
            .zip(&self.input_scale)
            .map(|((s, o), k)| (s - o) / k)
            .collect()
    }

    pub fn q_values(&self, state: &[f64]) -> Result<QVector> {
        if state.len() != self.env.state_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.env.state_dim(),
                actual: state.len(),
            });
        }
        let q = self.network.forward(&self.normalize(state));
        if q.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("Q-values"));
        }
        Ok(QVector(q))
    }

    pub fn act(&self, state: &[f64]) -> Result<usize> {
        greedy_action(self.q_values(state)?.as_slice())
    }

    /// Stable short identifier derived from the serialized model.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_vec(self).expect("agent model serializes");
        format!("{:016x}", seed::fnv1a(&json))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string(self)?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let model: AgentModel = serde_json::from_str(&text)?;
        let sizes = model.network.sizes();
        if sizes[0] != model.env.state_dim() || *sizes.last().unwrap() != model.env.action_count() {
            return Err(Error::InvalidModel("network shape does not match environment".into()));
        }
        Ok(model)
    }
}

/// Greedy-policy performance over a fixed set of seeded rollouts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyEval {
    pub episodes: usize,
    pub mean_reward: f64,
    pub mean_length: f64,
    pub unsafe_rate: f64,
}

pub fn evaluate_policy(model: &AgentModel, episodes: usize, root_seed: u64, label: &str) -> Result<PolicyEval> {
    let mut reward = 0.0;
    let mut length = 0usize;
    let mut unsafe_count = 0usize;
    for i in 0..episodes {
        let ep = dataset::run_episode(model, seed::derive_indexed(root_seed, label, i as u64))?;
        reward += ep.total_reward();
        length += ep.len();
        unsafe_count += usize::from(ep.label == dataset::Label::Unsafe);
    }
    let n = episodes as f64;
    Ok(PolicyEval {
        episodes,
        mean_reward: reward / n,
        mean_length: length as f64 / n,
        unsafe_rate: unsafe_count as f64 / n,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointEval {
    pub step: u64,
    #[serde(flatten)]
    pub eval: PolicyEval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub env: EnvKind,
    pub seed: u64,
    pub total_steps: u64,
    /// Termination causes of the exploratory training episodes.
    pub training_episodes: BTreeMap<String, u64>,
    pub checkpoints: Vec<CheckpointEval>,
    pub chosen_step: u64,
    /// False when no checkpoint fell in the unsafe band and the fallback was used.
    pub chosen_in_band: bool,
    pub eval: PolicyEval,
    pub agent_fingerprint: String,
}

pub struct TrainOutcome {
    pub model: AgentModel,
    pub report: TrainReport,
}

struct Transition {
    state: Vec<f64>,
    action: usize,
    reward: f64,
    next: Vec<f64>,
    absorbing: bool,
}

/// Train a DQN agent and select the checkpoint handed to the monitor.
///
/// The latest checkpoint whose greedy unsafe-episode rate lies inside
/// `config.unsafe_band` is returned. When none qualifies, the checkpoint whose
/// rate is closest to the band is used instead (latest on ties).
pub fn train_agent(kind: EnvKind, config: &AgentTrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let root = config.seed;
    let mut online = AgentModel::new(kind, &config.hidden, config.gamma, root);
    let mut target = online.network.clone();
    let mut opt = Optimizer::new(config.optimizer, config.learning_rate, online.network.params().len());
    let mut rng = seed::rng(root, "agent-train");

    let mut replay: VecDeque<Transition> = VecDeque::with_capacity(config.replay_capacity.min(1 << 20));
    let mut episode = 0u64;
    let mut env = Env::new(kind, seed::derive_indexed(root, "train-episode", episode));

    let mut checkpoints = Vec::new();
    let mut snapshots: Vec<AgentModel> = Vec::new();
    let mut grads = vec![0.0; online.network.params().len()];
    let mut trace = Trace::default();

    let mut held: Option<(usize, u64)> = None;
    let mut training_episodes = BTreeMap::new();

    for step in 0..config.total_steps {
        let state = env.state().to_vec();
        let action = match held {
            Some((a, left)) if left > 0 => {
                held = Some((a, left - 1));
                a
            }
            _ if rng.gen::<f64>() < config.epsilon(step) => {
                let a = rng.gen_range(0..kind.action_count());
                held = Some((a, rng.gen_range(0..config.exploration_hold)));
                a
            }
            _ => {
                held = None;
                online.act(&state)?
            }
        };
        let out = env.step(action)?;
        if replay.len() == config.replay_capacity {
            replay.pop_front();
        }
        replay.push_back(Transition {
            state: online.normalize(&state),
            action,
            reward: out.reward,
            next: online.normalize(&out.next_state.to_vec()),
            absorbing: out.cause.is_absorbing(),
        });
        if out.terminated {
            *training_episodes.entry(out.cause.as_str().to_owned()).or_insert(0) += 1;
            held = None;
            episode += 1;
            env = Env::new(kind, seed::derive_indexed(root, "train-episode", episode));
        }

        let done = step + 1;
        if done >= config.learning_starts && done % config.train_freq == 0 && replay.len() >= config.batch_size {
            for _ in 0..config.gradient_steps {
                grads.iter_mut().for_each(|g| *g = 0.0);
                let mut loss = 0.0;
                let scale = 1.0 / config.batch_size as f64;
                for _ in 0..config.batch_size {
                    let t = &replay[rng.gen_range(0..replay.len())];
                    let y = if t.absorbing {
                        t.reward
                    } else {
                        let next_target = target.forward(&t.next);
                        let bootstrap = if config.double_q {
                            next_target[greedy_action(&online.network.forward(&t.next))?]
                        } else {
                            next_target.iter().copied().fold(f64::NEG_INFINITY, f64::max)
                        };
                        t.reward + config.gamma * bootstrap
                    };
                    online.network.forward_trace(&t.state, &mut trace);
                    let (l, dl) = nn::huber(trace.output()[t.action] - y);
                    loss += l * scale;
                    let mut grad_out = vec![0.0; kind.action_count()];
                    grad_out[t.action] = dl * scale;
                    online.network.backward(&trace, &grad_out, &mut grads);
                }
                if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                    return Err(Error::Divergence {
                        step: done,
                        detail: format!("TD loss {loss}"),
                    });
                }
                nn::clip_grad_norm(&mut grads, config.max_grad_norm);
                opt.step(online.network.params_mut(), &grads);
            }
        }
        if done % config.target_sync_interval == 0 {
            target = online.network.clone();
        }
        if done % config.checkpoint_interval == 0 {
            online.steps_trained = done;
            let eval = evaluate_policy(&online, config.checkpoint_episodes, root, "checkpoint-eval")?;
            checkpoints.push(CheckpointEval { step: done, eval });
            snapshots.push(online.clone());
        }
    }
    online.steps_trained = config.total_steps;

    let (lo, hi) = config.unsafe_band;
    let distance = |rate: f64| (lo - rate).max(rate - hi).max(0.0);
    let chosen = checkpoints
        .iter()
        .enumerate()
        .rev()
        .min_by(|(_, a), (_, b)| distance(a.eval.unsafe_rate).total_cmp(&distance(b.eval.unsafe_rate)))
        .map(|(i, _)| i);
    let (model, chosen_step, chosen_in_band) = match chosen {
        Some(i) => (
            snapshots.swap_remove(i),
            checkpoints[i].step,
            distance(checkpoints[i].eval.unsafe_rate) == 0.0,
        ),
        None => (online, config.total_steps, false),
    };

    let eval = evaluate_policy(&model, config.eval_episodes, root, "final-eval")?;
    let report = TrainReport {
        env: kind,
        seed: root,
        total_steps: config.total_steps,
        training_episodes,
        checkpoints,
        chosen_step,
        chosen_in_band,
        eval,
        agent_fingerprint: model.fingerprint(),
    };
    Ok(TrainOutcome { model, report })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn greedy_action_examples() {
        assert_eq!(greedy_action(&[0.2, 0.9]).unwrap(), 1);
        assert_eq!(greedy_action(&[0.5, 0.5]).unwrap(), 0);
        assert_eq!(greedy_action(&[-1.0, -2.0, -0.5]).unwrap(), 2);
        assert!(matches!(greedy_action(&[]), Err(Error::EmptyQVector)));
    }

    #[test]
    fn q_values_shape_and_determinism() {
        let cp = AgentModel::new(EnvKind::CartPole, &[64, 64], 0.99, 1);
        let s = EnvKind::CartPole.reset(4).to_vec();
        assert_eq!(cp.q_values(&s).unwrap().len(), 2);
        assert_eq!(cp.q_values(&s).unwrap(), cp.q_values(&s).unwrap());
        let mc = AgentModel::new(EnvKind::MountainCar, &[64, 64], 0.99, 1);
        let s = EnvKind::MountainCar.reset(4).to_vec();
        assert_eq!(mc.q_values(&s).unwrap().len(), 3);
        assert!(matches!(
            mc.q_values(&[0.0; 4]),
            Err(Error::DimensionMismatch { expected: 2, actual: 4 })
        ));
    }

    #[test]
    fn zero_step_budget_still_evaluates() {
        let config = AgentTrainConfig {
            total_steps: 0,
            checkpoint_episodes: 5,
            eval_episodes: 5,
            ..AgentTrainConfig::for_env(EnvKind::CartPole)
        };
        let out = train_agent(EnvKind::CartPole, &config).unwrap();
        assert_eq!(out.model.steps_trained, 0);
        assert!(out.report.checkpoints.is_empty());
        assert_eq!(out.report.eval.episodes, 5);
        assert!(out.report.eval.mean_reward > 0.0);
    }

    #[test]
    fn invalid_config_rejected() {
        let config = AgentTrainConfig {
            epsilon_end: 1.5,
            ..AgentTrainConfig::for_env(EnvKind::CartPole)
        };
        assert!(matches!(train_agent(EnvKind::CartPole, &config), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn short_training_is_seed_deterministic() {
        let config = AgentTrainConfig {
            total_steps: 1_500,
            learning_starts: 200,
            checkpoint_interval: 500,
            checkpoint_episodes: 3,
            eval_episodes: 3,
            seed: 42,
            ..AgentTrainConfig::for_env(EnvKind::MountainCar)
        };
        let a = train_agent(EnvKind::MountainCar, &config).unwrap();
        let b = train_agent(EnvKind::MountainCar, &config).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.report, b.report);
        assert_eq!(a.report.checkpoints.len(), 3);
    }

    #[test]
    fn save_load_preserves_q_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("agent.json");
        let model = AgentModel::new(EnvKind::CartPole, &[64, 64], 0.99, 8);
        model.save(&path).unwrap();
        let back = AgentModel::load(&path).unwrap();
        for seed in 0..20 {
            let s = EnvKind::CartPole.reset(seed).to_vec();
            let (a, b) = (model.q_values(&s).unwrap(), back.q_values(&s).unwrap());
            for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
                assert!((x - y).abs() <= 1e-9);
            }
        }
    }
}
