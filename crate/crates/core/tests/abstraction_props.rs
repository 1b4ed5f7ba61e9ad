mod common;

use proptest::prelude::*;

use smarla_core::abstraction::{bucketize, encode, AbstractState, AbstractionTable, FeatureMode, UnseenPolicy};

// Bucket indices are built from integers so the ceiling is exact.
fn q_from_ticks(ticks: &[i32]) -> Vec<f64> {
    ticks.iter().map(|&t| f64::from(t) / 8.0).collect()
}

proptest! {
    #[test]
    fn same_key_iff_every_ceiling_matches(
        a in prop::collection::vec(-4000i32..4000, 3),
        b in prop::collection::vec(-4000i32..4000, 3),
        d_eighths in 1i32..200,
    ) {
        let (qa, qb) = (q_from_ticks(&a), q_from_ticks(&b));
        let d = f64::from(d_eighths) / 8.0;
        let brute = a.iter().zip(&b).all(|(&x, &y)| ceil_div(x, d_eighths) == ceil_div(y, d_eighths));
        prop_assert_eq!(bucketize(&qa, d).unwrap() == bucketize(&qb, d).unwrap(), brute);
    }

    #[test]
    fn coarser_multiple_never_splits_a_bucket(
        a in prop::collection::vec(-500.0f64..500.0, 2),
        b in prop::collection::vec(-500.0f64..500.0, 2),
        d in 0.01f64..20.0,
        k in 1u32..10,
    ) {
        // Force a shared fine bucket by snapping b into a's cell.
        let ka = bucketize(&a, d).unwrap();
        let b: Vec<f64> = ka.0.iter().zip(&b).map(|(&i, &v)| {
            let frac = (v.rem_euclid(1.0)).clamp(0.01, 0.99);
            (i as f64 - 1.0 + frac) * d
        }).collect();
        prop_assume!(bucketize(&b, d).unwrap() == ka);
        let coarse = d * f64::from(k);
        prop_assert_eq!(bucketize(&a, coarse).unwrap(), bucketize(&b, coarse).unwrap());
    }

    #[test]
    fn binary_is_clipped_frequency_and_both_grow(ids in prop::collection::vec(prop::option::of(0usize..12), 1..40)) {
        let ids: Vec<AbstractState> = ids.into_iter().map(|o| o.map_or(AbstractState::Unseen, AbstractState::Seen)).collect();
        let mut last_b = vec![0.0f32; 12];
        let mut last_f = vec![0.0f32; 12];
        for t in 0..=ids.len() {
            let prefix = &ids[..t];
            let b = encode(prefix, 12, FeatureMode::Binary, UnseenPolicy::Ignore).unwrap();
            let f = encode(prefix, 12, FeatureMode::Frequency, UnseenPolicy::Ignore).unwrap();
            let seen: Vec<AbstractState> = prefix.iter().copied().filter(|s| *s != AbstractState::Unseen).collect();
            let f_seen = encode(&seen, 12, FeatureMode::Frequency, UnseenPolicy::Ignore).unwrap();
            prop_assert_eq!(f.as_slice(), f_seen.as_slice());
            for j in 0..12 {
                prop_assert_eq!(b.as_slice()[j], f.as_slice()[j].min(1.0));
                prop_assert!(b.as_slice()[j] >= last_b[j] && f.as_slice()[j] >= last_f[j]);
            }
            last_b = b.as_slice().to_vec();
            last_f = f.as_slice().to_vec();
        }
    }
}

fn ceil_div(x: i32, d: i32) -> i32 {
    x / d + i32::from(x % d != 0 && x > 0)
}

#[test]
fn table_lookup_agrees_with_bucketize() {
    let set = common::synthetic_set(40, 3);
    let table = AbstractionTable::build(&set, 0.25).unwrap();
    for ep in &set.episodes {
        for step in &ep.steps {
            let AbstractState::Seen(id) = table.lookup(&step.q).unwrap() else {
                panic!("training Q-vector must be seen");
            };
            assert_eq!(table.keys()[id], bucketize(&step.q, 0.25).unwrap());
        }
    }
    assert_eq!(table.lookup(&[1e6, -1e6]).unwrap(), AbstractState::Unseen);
}

#[test]
fn finer_levels_never_have_fewer_states() {
    let set = common::synthetic_set(60, 4);
    let counts: Vec<usize> = [4.0, 2.0, 1.0, 0.5, 0.25]
        .iter()
        .map(|&d| AbstractionTable::build(&set, d).unwrap().n())
        .collect();
    assert!(counts.windows(2).all(|w| w[0] <= w[1]), "{counts:?}");
}
