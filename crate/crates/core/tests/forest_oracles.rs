use proptest::prelude::*;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use smarla_core::forest::{train_forest, FeatureMatrix, ForestConfig, MaxFeatures, Node, ProbabilitySummary};

fn random_data(rows: usize, cols: usize, seed: u64) -> (FeatureMatrix, Vec<bool>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data: Vec<Vec<f32>> = (0..rows)
        .map(|_| (0..cols).map(|_| f32::from(rng.gen_range(0u8..2))).collect())
        .collect();
    let mut labels: Vec<bool> = data.iter().map(|r| r[0] > 0.5 || rng.gen_bool(0.1)).collect();
    labels[0] = true;
    labels[1] = false;
    (FeatureMatrix::from_rows(&data).unwrap(), labels)
}

fn exact_config(n_trees: usize) -> ForestConfig {
    ForestConfig {
        n_trees,
        max_features: MaxFeatures::All,
        bootstrap: false,
        ..ForestConfig::default()
    }
}

#[test]
fn forest_mean_is_average_of_trees() {
    let (x, y) = random_data(200, 12, 1);
    let forest = train_forest(&x, &y, &ForestConfig { n_trees: 25, ..ForestConfig::default() }, 9).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..1000 {
        let input: Vec<f32> = (0..12).map(|_| rng.gen_range(0.0..1.5)).collect();
        let s = forest.predict(&input).unwrap();
        let manual: f64 = (0..25).map(|k| forest.tree_probability(k, &input).unwrap()).sum::<f64>() / 25.0;
        assert!((s.mean - manual).abs() < 1e-12);
        assert_eq!(s.per_tree.len(), 25);
    }
}

fn gini_cost(rows: &[Vec<f32>], labels: &[bool], feature: usize, threshold: f64) -> f64 {
    let side = |left: bool| {
        let members: Vec<bool> = rows
            .iter()
            .zip(labels)
            .filter(|(r, _)| (f64::from(r[feature]) <= threshold) == left)
            .map(|(_, &l)| l)
            .collect();
        if members.is_empty() {
            return 0.0;
        }
        let n = members.len() as f64;
        let p = members.iter().filter(|&&l| l).count() as f64 / n;
        n * (1.0 - p * p - (1.0 - p) * (1.0 - p))
    };
    side(true) + side(false)
}

#[test]
fn depth_one_split_minimizes_gini() {
    let rows = vec![
        vec![0.0, 3.0, 1.0],
        vec![1.0, 1.0, 0.0],
        vec![2.0, 2.0, 1.0],
        vec![3.0, 0.0, 0.0],
        vec![4.0, 5.0, 1.0],
        vec![5.0, 4.0, 1.0],
    ];
    let labels = [false, false, true, false, true, true];
    let x = FeatureMatrix::from_rows(&rows).unwrap();
    let config = ForestConfig {
        max_depth: Some(1),
        ..exact_config(1)
    };
    let forest = train_forest(&x, &labels, &config, 0).unwrap();
    let Node::Split(feature, threshold, _, _) = forest.trees[0].nodes[0] else {
        panic!("root should split");
    };

    let mut brute = f64::INFINITY;
    for f in 0..3 {
        let mut values: Vec<f32> = rows.iter().map(|r| r[f]).collect();
        values.sort_by(f32::total_cmp);
        values.dedup();
        for w in values.windows(2) {
            brute = brute.min(gini_cost(&rows, &labels, f, (f64::from(w[0]) + f64::from(w[1])) / 2.0));
        }
    }
    assert!((gini_cost(&rows, &labels, feature, threshold) - brute).abs() < 1e-12);
    assert_eq!(forest.trees[0].depth(), 1);
}

#[test]
fn separable_data_is_fit_exactly() {
    let rows: Vec<Vec<f32>> = (0..40).map(|i| vec![i as f32, (i % 3) as f32]).collect();
    let labels: Vec<bool> = (0..40).map(|i| i >= 25).collect();
    let x = FeatureMatrix::from_rows(&rows).unwrap();
    let forest = train_forest(&x, &labels, &exact_config(5), 3).unwrap();
    for (r, &l) in rows.iter().zip(&labels) {
        let s = forest.predict(r).unwrap();
        assert_eq!(s.mean, if l { 1.0 } else { 0.0 });
        assert_eq!(s.low, s.up);
    }
}

#[test]
fn single_tree_gives_degenerate_interval() {
    let (x, y) = random_data(60, 5, 4);
    let forest = train_forest(&x, &y, &ForestConfig { n_trees: 1, ..ForestConfig::default() }, 1).unwrap();
    let s = forest.predict(&x.row(0)).unwrap();
    assert_eq!(s.std, 0.0);
    assert_eq!(s.low, s.mean);
    assert_eq!(s.up, s.mean);
}

#[test]
fn training_is_deterministic_per_seed() {
    let (x, y) = random_data(150, 8, 5);
    let config = ForestConfig { n_trees: 10, ..ForestConfig::default() };
    let a = train_forest(&x, &y, &config, 77).unwrap();
    let b = train_forest(&x, &y, &config, 77).unwrap();
    let c = train_forest(&x, &y, &config, 78).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.trees, c.trees);
}

#[test]
fn row_order_does_not_change_exact_trees() {
    let (x, y) = random_data(80, 6, 6);
    let rows: Vec<Vec<f32>> = (0..x.rows()).map(|i| x.row(i)).collect();
    let order: Vec<usize> = (0..rows.len()).rev().collect();
    let shuffled = FeatureMatrix::from_rows(&order.iter().map(|&i| rows[i].clone()).collect::<Vec<_>>()).unwrap();
    let shuffled_y: Vec<bool> = order.iter().map(|&i| y[i]).collect();

    let a = train_forest(&x, &y, &exact_config(3), 2).unwrap();
    let b = train_forest(&shuffled, &shuffled_y, &exact_config(3), 2).unwrap();
    for r in &rows {
        assert_eq!(a.predict(r).unwrap(), b.predict(r).unwrap());
    }
}

#[test]
fn interval_matches_hand_computed_example() {
    // Half the trees at 0.5, half at 0.7: mean 0.6, population sigma 0.1.
    let per_tree: Vec<f64> = (0..100).map(|i| if i % 2 == 0 { 0.5 } else { 0.7 }).collect();
    let s = ProbabilitySummary::from_per_tree(per_tree);
    assert!((s.mean - 0.6).abs() < 1e-12);
    assert!((s.std - 0.1).abs() < 1e-12);
    assert!((s.low - 0.5804).abs() < 1e-9);
    assert!((s.up - 0.6196).abs() < 1e-9);
}

proptest! {
    #[test]
    fn width_halves_when_trees_quadruple(m in 2usize..50, lo in 0.3f64..0.45, gap in 0.01f64..0.1) {
        let make = |count: usize| {
            ProbabilitySummary::from_per_tree((0..count).map(|i| if i % 2 == 0 { lo } else { lo + gap }).collect())
        };
        let a = make(2 * m);
        let b = make(8 * m);
        prop_assert!(((a.up - a.low) / (b.up - b.low) - 2.0).abs() < 1e-9);
    }

    #[test]
    fn interval_brackets_mean(per_tree in prop::collection::vec(0.0f64..=1.0, 1..60)) {
        let s = ProbabilitySummary::from_per_tree(per_tree);
        prop_assert!(0.0 <= s.low && s.low <= s.mean + 1e-15);
        prop_assert!(s.mean <= s.up + 1e-15 && s.up <= 1.0);
    }
}
