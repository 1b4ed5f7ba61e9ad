#![allow(dead_code)]

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use smarla_core::dataset::{Episode, EpisodeSet, Label, Step};
use smarla_core::envs::{EnvKind, TerminationCause};

/// Two-action episodes whose Q-values drift apart as an unsafe episode nears
/// its end. Safe episodes hover around a common level.
pub fn synthetic_set(count: usize, seed: u64) -> EpisodeSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let episodes = (0..count)
        .map(|i| {
            let unsafe_ep = i % 4 == 0;
            let len = rng.gen_range(20..60);
            let steps = (0..len)
                .map(|t| {
                    let drift = if unsafe_ep { 3.0 * t as f64 / len as f64 } else { 0.0 };
                    let noise: f64 = rng.gen_range(-0.5..0.5);
                    Step {
                        state: vec![0.0; 4],
                        action: 0,
                        q: vec![10.0 + noise - drift, 10.0 + noise + drift],
                        reward: 1.0,
                    }
                })
                .collect();
            let (label, cause) = if unsafe_ep {
                (Label::Unsafe, TerminationCause::Violation)
            } else {
                (Label::Safe, TerminationCause::StepLimit)
            };
            Episode { label, cause, steps }
        })
        .collect();
    EpisodeSet::new(EnvKind::CartPole, episodes)
}
