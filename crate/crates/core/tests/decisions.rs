mod common;

use smarla_core::eval::{self, BuildSettings};
use smarla_core::forest::ForestConfig;
use smarla_core::monitor::{first_fire, Criterion};

fn order(f: Option<usize>) -> usize {
    f.unwrap_or(usize::MAX)
}

fn synthetic_bands() -> (Vec<Vec<smarla_core::monitor::Band>>, Vec<smarla_core::dataset::Label>) {
    let train = common::synthetic_set(200, 1);
    let test = common::synthetic_set(120, 2);
    let settings = BuildSettings {
        forest: ForestConfig {
            n_trees: 30,
            ..ForestConfig::default()
        },
        ..BuildSettings::default()
    };
    let model = eval::build_monitor(&train, 0.5, &settings).unwrap();
    (eval::episode_bands(&model, &test).unwrap(), test.labels())
}

#[test]
fn upper_fires_no_later_than_mean_and_mean_no_later_than_lower() {
    let (bands, _) = synthetic_bands();
    for theta in [0.25, 0.5, 0.75] {
        for b in &bands {
            let up = order(first_fire(b, Criterion::UpperBound, theta));
            let mean = order(first_fire(b, Criterion::OutputProbability, theta));
            let low = order(first_fire(b, Criterion::LowerBound, theta));
            assert!(up <= mean && mean <= low, "theta {theta}: {up} {mean} {low}");
        }
    }
}

#[test]
fn raising_the_threshold_delays_decisions() {
    let (bands, labels) = synthetic_bands();
    let rows = eval::sweep(&bands, &labels, &Criterion::ALL, &[0.25, 0.5, 0.75]).unwrap();
    for c in Criterion::ALL {
        let per: Vec<_> = rows.iter().filter(|r| r.criterion == c).collect();
        assert_eq!(per.len(), 3);
        for w in per.windows(2) {
            let (a, b) = (&w[0].stats, &w[1].stats);
            assert!(a.fn_count <= b.fn_count && a.fp_count >= b.fp_count, "{c}");
        }
    }
    // Per-episode latching: a fire at a higher threshold implies an earlier
    // or equal fire at a lower one.
    for b in &bands {
        for c in Criterion::ALL {
            let f: Vec<usize> = [0.25, 0.5, 0.75].iter().map(|&t| order(first_fire(b, c, t))).collect();
            assert!(f[0] <= f[1] && f[1] <= f[2]);
        }
    }
}

#[test]
fn monitor_separates_drifting_episodes() {
    let (bands, labels) = synthetic_bands();
    let records = eval::fire_records(&bands, Criterion::UpperBound, 0.5);
    let m = eval::final_metrics(&records, &labels).unwrap();
    assert!(m.f1_macro > 0.9, "{}", m.f1_macro);
}
