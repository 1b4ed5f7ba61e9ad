//! Classic-control environments with safety-violation semantics.
//!
//! Cart-Pole: the cart leaving `|x| <= 2.4` is a safety violation; the pole
//! tipping past 12 degrees ends the episode without a violation.
//!
//! Mountain-Car: the left wall is removed, so the car can leave the track on
//! the left. Crossing `position < -1.2` is a violation and charges the
//! episode a total reward of -200.
//!
//! Both environments stop after 200 steps.

use std::fmt;
use std::str::FromStr;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

pub const MAX_STEPS: u32 = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvKind {
    CartPole,
    MountainCar,
}

impl EnvKind {
    pub fn name(self) -> &'static str {
        match self {
            EnvKind::CartPole => "cartpole",
            EnvKind::MountainCar => "mountaincar",
        }
    }

    pub fn action_count(self) -> usize {
        match self {
            EnvKind::CartPole => 2,
            EnvKind::MountainCar => 3,
        }
    }

    pub fn state_dim(self) -> usize {
        match self {
            EnvKind::CartPole => 4,
            EnvKind::MountainCar => 2,
        }
    }

    /// Guess the environment from the dimensionality of a stored state.
    pub fn from_state_dim(dim: usize) -> Option<Self> {
        match dim {
            4 => Some(EnvKind::CartPole),
            2 => Some(EnvKind::MountainCar),
            _ => None,
        }
    }

    /// Sample an initial state. Identical seeds give identical states.
    pub fn reset(self, seed: u64) -> State {
        let mut rng = seed::rng(seed, "reset");
        match self {
            EnvKind::CartPole => {
                let mut draw = || rng.gen_range(-0.05..=0.05);
                State::CartPole(CartPoleState {
                    x: draw(),
                    x_dot: draw(),
                    theta: draw(),
                    theta_dot: draw(),
                })
            }
            EnvKind::MountainCar => State::MountainCar(MountainCarState {
                position: rng.gen_range(-0.6..=-0.4),
                velocity: 0.0,
            }),
        }
    }
}

impl fmt::Display for EnvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EnvKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "cartpole" => Ok(EnvKind::CartPole),
            "mountaincar" => Ok(EnvKind::MountainCar),
            _ => Err(Error::UnknownEnv(s.to_owned())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CartPoleState {
    pub x: f64,
    pub x_dot: f64,
    pub theta: f64,
    pub theta_dot: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MountainCarState {
    pub position: f64,
    pub velocity: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum State {
    CartPole(CartPoleState),
    MountainCar(MountainCarState),
}

impl State {
    pub fn kind(&self) -> EnvKind {
        match self {
            State::CartPole(_) => EnvKind::CartPole,
            State::MountainCar(_) => EnvKind::MountainCar,
        }
    }

    pub fn to_vec(&self) -> Vec<f64> {
        match *self {
            State::CartPole(s) => vec![s.x, s.x_dot, s.theta, s.theta_dot],
            State::MountainCar(s) => vec![s.position, s.velocity],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_vec().iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminationCause {
    Violation,
    Goal,
    AngleFailure,
    StepLimit,
    None,
}

impl TerminationCause {
    pub fn as_str(self) -> &'static str {
        match self {
            TerminationCause::Violation => "violation",
            TerminationCause::Goal => "goal",
            TerminationCause::AngleFailure => "angle_failure",
            TerminationCause::StepLimit => "step_limit",
            TerminationCause::None => "none",
        }
    }

    /// True when the episode ended because of the dynamics rather than the
    /// step budget, i.e. the value of the next state is zero.
    pub fn is_absorbing(self) -> bool {
        matches!(
            self,
            TerminationCause::Violation | TerminationCause::Goal | TerminationCause::AngleFailure
        )
    }
}

impl FromStr for TerminationCause {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "violation" => TerminationCause::Violation,
            "goal" => TerminationCause::Goal,
            "angle_failure" => TerminationCause::AngleFailure,
            "step_limit" => TerminationCause::StepLimit,
            "none" => TerminationCause::None,
            other => return Err(Error::InvalidModel(format!("unknown termination cause `{other}`"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub next_state: State,
    pub reward: f64,
    pub terminated: bool,
    pub violation: bool,
    pub cause: TerminationCause,
}

mod cartpole {
    pub const GRAVITY: f64 = 9.8;
    pub const MASS_CART: f64 = 1.0;
    pub const MASS_POLE: f64 = 0.1;
    pub const TOTAL_MASS: f64 = MASS_CART + MASS_POLE;
    pub const HALF_LENGTH: f64 = 0.5;
    pub const POLE_MASS_LENGTH: f64 = MASS_POLE * HALF_LENGTH;
    pub const FORCE: f64 = 10.0;
    pub const TAU: f64 = 0.02;
    pub const X_LIMIT: f64 = 2.4;
    // 12 degrees
    pub const THETA_LIMIT: f64 = 12.0 * std::f64::consts::PI / 180.0;
}

mod mountaincar {
    pub const FORCE: f64 = 0.001;
    pub const GRAVITY: f64 = 0.0025;
    pub const MAX_SPEED: f64 = 0.07;
    pub const LEFT_BORDER: f64 = -1.2;
    pub const GOAL: f64 = 0.5;
    pub const VIOLATION_RETURN: f64 = -200.0;
}

/// One running episode of an environment.
#[derive(Debug, Clone, PartialEq)]
pub struct Env {
    state: State,
    elapsed: u32,
    done: bool,
}

impl Env {
    pub fn new(kind: EnvKind, seed: u64) -> Self {
        Self::from_state(kind.reset(seed))
    }

    /// Start an episode from an arbitrary state.
    pub fn from_state(state: State) -> Self {
        Self {
            state,
            elapsed: 0,
            done: false,
        }
    }

    pub fn kind(&self) -> EnvKind {
        self.state.kind()
    }

    pub fn state(&self) -> &State {
        &self.state
    }

    pub fn elapsed(&self) -> u32 {
        self.elapsed
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn step(&mut self, action: usize) -> Result<StepOutcome> {
        if self.done {
            return Err(Error::SteppedTerminal);
        }
        let kind = self.kind();
        if action >= kind.action_count() {
            return Err(Error::InvalidAction {
                env: kind.name(),
                action,
                count: kind.action_count(),
            });
        }
        let prior_steps = self.elapsed;
        self.elapsed += 1;
        let at_limit = self.elapsed >= MAX_STEPS;

        let (next, reward, cause) = match self.state {
            State::CartPole(s) => {
                let n = cartpole_dynamics(s, action);
                let cause = if n.x.abs() > cartpole::X_LIMIT {
                    TerminationCause::Violation
                } else if n.theta.abs() > cartpole::THETA_LIMIT {
                    TerminationCause::AngleFailure
                } else if at_limit {
                    TerminationCause::StepLimit
                } else {
                    TerminationCause::None
                };
                (State::CartPole(n), 1.0, cause)
            }
            State::MountainCar(s) => {
                let n = mountaincar_dynamics(s, action);
                if n.position < mountaincar::LEFT_BORDER {
                    // Whole-episode return becomes -200 regardless of when it happens.
                    let reward = mountaincar::VIOLATION_RETURN + f64::from(prior_steps);
                    (State::MountainCar(n), reward, TerminationCause::Violation)
                } else if n.position >= mountaincar::GOAL {
                    (State::MountainCar(n), -1.0, TerminationCause::Goal)
                } else if at_limit {
                    (State::MountainCar(n), -1.0, TerminationCause::StepLimit)
                } else {
                    (State::MountainCar(n), -1.0, TerminationCause::None)
                }
            }
        };
        if !next.is_finite() {
            return Err(Error::NonFinite("environment state"));
        }

        let terminated = cause != TerminationCause::None;
        self.state = next;
        self.done = terminated;
        Ok(StepOutcome {
            next_state: next,
            reward,
            terminated,
            violation: cause == TerminationCause::Violation,
            cause,
        })
    }
}

fn cartpole_dynamics(s: CartPoleState, action: usize) -> CartPoleState {
    use cartpole::*;
    let force = if action == 1 { FORCE } else { -FORCE };
    let (sin, cos) = s.theta.sin_cos();
    let temp = (force + POLE_MASS_LENGTH * s.theta_dot * s.theta_dot * sin) / TOTAL_MASS;
    let theta_acc = (GRAVITY * sin - cos * temp)
        / (HALF_LENGTH * (4.0 / 3.0 - MASS_POLE * cos * cos / TOTAL_MASS));
    let x_acc = temp - POLE_MASS_LENGTH * theta_acc * cos / TOTAL_MASS;
    CartPoleState {
        x: s.x + TAU * s.x_dot,
        x_dot: s.x_dot + TAU * x_acc,
        theta: s.theta + TAU * s.theta_dot,
        theta_dot: s.theta_dot + TAU * theta_acc,
    }
}

fn mountaincar_dynamics(s: MountainCarState, action: usize) -> MountainCarState {
    use mountaincar::*;
    let push = action as f64 - 1.0;
    let velocity = (s.velocity + push * FORCE - GRAVITY * (3.0 * s.position).cos())
        .clamp(-MAX_SPEED, MAX_SPEED);
    MountainCarState {
        position: s.position + velocity,
        velocity,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reset_is_seed_deterministic() {
        assert_eq!(EnvKind::CartPole.reset(7), EnvKind::CartPole.reset(7));
        assert_ne!(EnvKind::CartPole.reset(7), EnvKind::CartPole.reset(8));
    }

    #[test]
    fn cartpole_reset_bounds() {
        for seed in 0..2_000 {
            let v = EnvKind::CartPole.reset(seed).to_vec();
            assert!(v.iter().all(|c| (-0.05..=0.05).contains(c)));
        }
    }

    #[test]
    fn mountaincar_reset_bounds() {
        for seed in 0..10_000 {
            match EnvKind::MountainCar.reset(seed) {
                State::MountainCar(s) => {
                    assert!((-0.6..=-0.4).contains(&s.position));
                    assert_eq!(s.velocity, 0.0);
                }
                other => panic!("wrong state kind {other:?}"),
            }
        }
    }

    #[test]
    fn unknown_env_is_rejected() {
        assert!(matches!("bogus".parse::<EnvKind>(), Err(Error::UnknownEnv(_))));
        assert_eq!("Mountain-Car".parse::<EnvKind>().unwrap(), EnvKind::MountainCar);
    }

    #[test]
    fn mountaincar_coast_from_valley() {
        let mut env = Env::from_state(State::MountainCar(MountainCarState {
            position: -0.5,
            velocity: 0.0,
        }));
        let out = env.step(1).unwrap();
        let State::MountainCar(n) = out.next_state else { unreachable!() };
        let expected_v = -0.0025 * (-1.5f64).cos();
        assert!((n.velocity - expected_v).abs() < 1e-15);
        assert!((n.velocity - -0.000177).abs() < 1e-6);
        assert!((n.position - -0.500177).abs() < 1e-6);
        assert_eq!(out.reward, -1.0);
        assert!(!out.terminated);
    }

    #[test]
    fn mountaincar_crossing_left_border_is_violation() {
        let mut env = Env::from_state(State::MountainCar(MountainCarState {
            position: -1.19,
            velocity: -0.05,
        }));
        let out = env.step(0).unwrap();
        let State::MountainCar(n) = out.next_state else { unreachable!() };
        assert!(n.position < -1.2);
        assert!(out.violation && out.terminated);
        assert_eq!(out.cause, TerminationCause::Violation);
        assert_eq!(out.reward, -200.0);
        assert!(matches!(env.step(0), Err(Error::SteppedTerminal)));
    }

    #[test]
    fn mountaincar_violation_sets_episode_return() {
        let mut env = Env::from_state(State::MountainCar(MountainCarState {
            position: -1.0,
            velocity: -0.07,
        }));
        let mut total = 0.0;
        loop {
            let out = env.step(0).unwrap();
            total += out.reward;
            if out.terminated {
                assert!(out.violation);
                break;
            }
        }
        assert_eq!(total, -200.0);
    }

    #[test]
    fn cartpole_cart_out_of_bounds_is_violation() {
        let mut env = Env::from_state(State::CartPole(CartPoleState {
            x: 2.39,
            x_dot: 1.0,
            theta: 0.0,
            theta_dot: 0.0,
        }));
        let out = env.step(1).unwrap();
        let State::CartPole(n) = out.next_state else { unreachable!() };
        assert!(n.x > 2.4);
        assert!(out.violation && out.terminated);
        assert_eq!(out.cause, TerminationCause::Violation);
    }

    #[test]
    fn cartpole_pole_fall_is_not_violation() {
        let mut env = Env::from_state(State::CartPole(CartPoleState {
            x: 0.0,
            x_dot: 0.0,
            theta: 0.2,
            theta_dot: 1.0,
        }));
        let out = env.step(1).unwrap();
        assert!(out.terminated && !out.violation);
        assert_eq!(out.cause, TerminationCause::AngleFailure);
    }

    #[test]
    fn violation_checked_before_step_limit() {
        let mut env = Env::from_state(State::CartPole(CartPoleState {
            x: 2.399,
            x_dot: 1.0,
            theta: 0.0,
            theta_dot: 0.0,
        }));
        env.elapsed = MAX_STEPS - 1;
        let out = env.step(1).unwrap();
        assert_eq!(out.cause, TerminationCause::Violation);
    }

    #[test]
    fn invalid_action_is_rejected() {
        let mut env = Env::new(EnvKind::CartPole, 0);
        assert!(matches!(env.step(2), Err(Error::InvalidAction { .. })));
        let mut env = Env::new(EnvKind::MountainCar, 0);
        assert!(env.step(2).is_ok());
        assert!(matches!(env.step(3), Err(Error::InvalidAction { .. })));
    }

    #[test]
    fn step_limit_and_velocity_clip() {
        for (kind, seed) in [(EnvKind::CartPole, 3), (EnvKind::MountainCar, 3)] {
            let mut env = Env::new(kind, seed);
            let mut n = 0;
            let mut violations = 0;
            loop {
                // alternate actions to keep cart-pole alive for a while
                let out = env.step(n % kind.action_count()).unwrap();
                n += 1;
                violations += usize::from(out.violation);
                if let State::MountainCar(s) = out.next_state {
                    if !out.terminated {
                        assert!(s.velocity.abs() <= 0.07);
                    }
                }
                if out.terminated {
                    break;
                }
            }
            assert!(n <= MAX_STEPS as usize);
            assert!(violations <= 1);
        }
    }

    #[test]
    fn identical_actions_give_identical_trajectories() {
        let run = || {
            let mut env = Env::new(EnvKind::CartPole, 11);
            let mut out = Vec::new();
            for i in 0..50 {
                match env.step((i / 3) % 2) {
                    Ok(o) => out.extend(o.next_state.to_vec().iter().map(|v| v.to_bits())),
                    Err(_) => break,
                }
            }
            out
        };
        assert_eq!(run(), run());
    }
}
