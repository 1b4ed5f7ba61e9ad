//! Random forest classifier over abstract-state features.
//!
//! Trees are grown on bootstrap resamples with Gini splits over a random
//! subset of features per node. Every tree reports the unsafe fraction of the
//! leaf an input lands in; [`Forest::predict`] summarizes the per-tree
//! probabilities into a mean and a normal-approximation 95% interval
//! `mean ± 1.96 · σ / √m`.

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::{self, Rng};

/// Two-sided 95% critical value of the standard normal.
pub const Z_95: f64 = 1.96;

/// Dense sample-by-feature matrix stored column-major, since tree growth scans
/// one feature at a time.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl FeatureMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        FeatureMatrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut m = FeatureMatrix::zeros(rows.len(), cols);
        for (r, row) in rows.iter().enumerate() {
            if row.len() != cols {
                return Err(Error::DimensionMismatch {
                    expected: cols,
                    actual: row.len(),
                });
            }
            for (c, &v) in row.iter().enumerate() {
                m.set(r, c, v);
            }
        }
        Ok(m)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.data[col * self.rows + row]
    }

    pub fn set(&mut self, row: usize, col: usize, value: f32) {
        self.data[col * self.rows + row] = value;
    }

    pub fn column(&self, col: usize) -> &[f32] {
        &self.data[col * self.rows..(col + 1) * self.rows]
    }

    pub fn row(&self, row: usize) -> Vec<f32> {
        (0..self.cols).map(|c| self.get(row, c)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaxFeatures {
    /// `ceil(sqrt(feature_count))`
    Sqrt,
    All,
    Count(usize),
}

impl MaxFeatures {
    fn resolve(self, feature_count: usize) -> usize {
        let k = match self {
            MaxFeatures::Sqrt => (feature_count as f64).sqrt().ceil() as usize,
            MaxFeatures::All => feature_count,
            MaxFeatures::Count(k) => k,
        };
        k.clamp(1, feature_count.max(1))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_depth: Option<usize>,
    pub min_split: usize,
    pub max_features: MaxFeatures,
    pub bootstrap: bool,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_trees: 100,
            max_depth: None,
            min_split: 2,
            max_features: MaxFeatures::Sqrt,
            bootstrap: true,
        }
    }
}

/// Flat tree node. `Split(feature, threshold, left, right)` routes left when
/// `x[feature] <= threshold`; `Leaf(unsafe_fraction, sample_count)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Node {
    Split(usize, f64, usize, usize),
    Leaf(f64, usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn leaf(fraction: f64, count: usize) -> Self {
        Tree {
            nodes: vec![Node::Leaf(fraction, count)],
        }
    }

    /// Unsafe probability of the leaf reached by `x`. The caller checks `x`'s length.
    pub fn probability(&self, x: &[f32]) -> f64 {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                Node::Leaf(fraction, _) => return fraction,
                Node::Split(feature, threshold, left, right) => {
                    at = if f64::from(x[feature]) <= threshold { left } else { right };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], at: usize) -> usize {
            match nodes[at] {
                Node::Leaf(..) => 0,
                Node::Split(_, _, l, r) => 1 + walk(nodes, l).max(walk(nodes, r)),
            }
        }
        walk(&self.nodes, 0)
    }

    fn validate(&self, feature_count: usize) -> std::result::Result<(), String> {
        if self.nodes.is_empty() {
            return Err("empty tree".into());
        }
        for (i, node) in self.nodes.iter().enumerate() {
            match *node {
                Node::Leaf(fraction, _) if !(0.0..=1.0).contains(&fraction) => {
                    return Err(format!("leaf {i} fraction {fraction} outside [0, 1]"));
                }
                Node::Split(feature, threshold, left, right) => {
                    if feature >= feature_count || !threshold.is_finite() {
                        return Err(format!("split {i} is malformed"));
                    }
                    // children after parents guarantees every path ends in a leaf
                    if left <= i || right <= i || left >= self.nodes.len() || right >= self.nodes.len() {
                        return Err(format!("split {i} has invalid children"));
                    }
                }
                Node::Leaf(..) => {}
            }
        }
        Ok(())
    }
}

/// Per-tree probabilities and their 95% confidence interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbabilitySummary {
    pub per_tree: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation of `per_tree`.
    pub std: f64,
    pub low: f64,
    pub up: f64,
}

impl ProbabilitySummary {
    pub fn from_per_tree(per_tree: Vec<f64>) -> Self {
        assert!(!per_tree.is_empty(), "summary needs at least one estimator");
        let m = per_tree.len() as f64;
        // Unanimous trees get an exact mean and a zero-width interval rather
        // than rounding residue.
        let (mean, std) = if per_tree.iter().all(|&p| p == per_tree[0]) {
            (per_tree[0], 0.0)
        } else {
            let mean = per_tree.iter().sum::<f64>() / m;
            let var = per_tree.iter().map(|p| (p - mean) * (p - mean)).sum::<f64>() / m;
            (mean, var.sqrt())
        };
        let half = Z_95 * std / m.sqrt();
        ProbabilitySummary {
            low: (mean - half).clamp(0.0, 1.0),
            up: (mean + half).clamp(0.0, 1.0),
            mean,
            std,
            per_tree,
        }
    }

    /// Unsafe classification at the conventional 50% cut.
    pub fn is_unsafe(&self) -> bool {
        self.mean >= 0.5
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub feature_count: usize,
    pub config: ForestConfig,
    pub seed: u64,
    pub trees: Vec<Tree>,
}

impl Forest {
    pub fn tree_probability(&self, tree: usize, x: &[f32]) -> Result<f64> {
        self.check_dim(x)?;
        Ok(self.trees[tree].probability(x))
    }

    pub fn predict(&self, x: &[f32]) -> Result<ProbabilitySummary> {
        self.check_dim(x)?;
        Ok(ProbabilitySummary::from_per_tree(
            self.trees.iter().map(|t| t.probability(x)).collect(),
        ))
    }

    fn check_dim(&self, x: &[f32]) -> Result<()> {
        if x.len() != self.feature_count {
            return Err(Error::DimensionMismatch {
                expected: self.feature_count,
                actual: x.len(),
            });
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.trees.is_empty() {
            return Err(Error::InvalidModel("forest has no trees".into()));
        }
        for (i, tree) in self.trees.iter().enumerate() {
            tree.validate(self.feature_count)
                .map_err(|e| Error::InvalidModel(format!("tree {i}: {e}")))?;
        }
        Ok(())
    }
}

/// Train a forest on `features` (one row per sample) with `labels[i] == true`
/// meaning unsafe. Tree `k` uses the stream `derive_indexed(seed, "tree", k)`.
pub fn train_forest(features: &FeatureMatrix, labels: &[bool], config: &ForestConfig, seed: u64) -> Result<Forest> {
    if features.rows() == 0 || labels.is_empty() {
        return Err(Error::EmptyEpisodeSet);
    }
    if features.rows() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: features.rows(),
            actual: labels.len(),
        });
    }
    if labels.iter().all(|&l| l) || labels.iter().all(|&l| !l) {
        return Err(Error::SingleClass);
    }
    if config.n_trees == 0 || config.min_split < 2 {
        return Err(Error::InvalidConfig("forest needs at least one tree and min_split >= 2".into()));
    }
    let trees = (0..config.n_trees)
        .into_par_iter()
        .map(|k| {
            let mut rng = seed::rng_indexed(seed, "tree", k as u64);
            grow_tree(features, labels, config, &mut rng)
        })
        .collect();
    Ok(Forest {
        feature_count: features.cols(),
        config: config.clone(),
        seed,
        trees,
    })
}

struct Grower<'a> {
    features: &'a FeatureMatrix,
    labels: &'a [bool],
    config: &'a ForestConfig,
    mtry: usize,
    order: Vec<usize>,
    nodes: Vec<Node>,
    pairs: Vec<(f32, bool)>,
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    impurity: f64,
}

fn grow_tree(features: &FeatureMatrix, labels: &[bool], config: &ForestConfig, rng: &mut Rng) -> Tree {
    let n = features.rows();
    let samples: Vec<usize> = if config.bootstrap {
        (0..n).map(|_| rng.gen_range(0..n)).collect()
    } else {
        (0..n).collect()
    };
    let mut grower = Grower {
        features,
        labels,
        config,
        mtry: config.max_features.resolve(features.cols()),
        order: (0..features.cols()).collect(),
        nodes: Vec::new(),
        pairs: Vec::with_capacity(n),
    };
    grower.grow(samples, 0, rng);
    Tree { nodes: grower.nodes }
}

impl Grower<'_> {
    /// Grow the subtree over `samples`, returning its root index.
    fn grow(&mut self, samples: Vec<usize>, depth: usize, rng: &mut Rng) -> usize {
        let n = samples.len();
        let positives = samples.iter().filter(|&&i| self.labels[i]).count();
        let at = self.nodes.len();
        self.nodes.push(Node::Leaf(positives as f64 / n as f64, n));

        let pure = positives == 0 || positives == n;
        let depth_capped = self.config.max_depth.is_some_and(|d| depth >= d);
        if pure || n < self.config.min_split || depth_capped {
            return at;
        }
        let Some(best) = self.best_split(&samples, positives, rng) else {
            return at;
        };
        let column = self.features.column(best.feature);
        let (left, right): (Vec<usize>, Vec<usize>) = samples
            .into_iter()
            .partition(|&i| f64::from(column[i]) <= best.threshold);
        let l = self.grow(left, depth + 1, rng);
        let r = self.grow(right, depth + 1, rng);
        self.nodes[at] = Node::Split(best.feature, best.threshold, l, r);
        at
    }

    /// Examine features in random order until `mtry` non-constant ones have
    /// been scored (constant features do not count against the budget).
    fn best_split(&mut self, samples: &[usize], positives: usize, rng: &mut Rng) -> Option<BestSplit> {
        let p = self.order.len();
        let mut scored = 0;
        let mut best: Option<BestSplit> = None;
        for k in 0..p {
            if scored == self.mtry {
                break;
            }
            let j = rng.gen_range(k..p);
            self.order.swap(k, j);
            let feature = self.order[k];
            if let Some(candidate) = self.score_feature(feature, samples, positives) {
                scored += 1;
                if best.as_ref().is_none_or(|b| candidate.impurity < b.impurity) {
                    best = Some(candidate);
                }
            }
        }
        best
    }

    /// Best midpoint threshold on one feature by weighted Gini impurity
    /// `n_l·G_l + n_r·G_r`. `None` when the feature is constant on the node.
    fn score_feature(&mut self, feature: usize, samples: &[usize], positives: usize) -> Option<BestSplit> {
        let column = self.features.column(feature);
        let first = column[samples[0]];
        if samples.iter().all(|&i| column[i] == first) {
            return None;
        }
        self.pairs.clear();
        self.pairs.extend(samples.iter().map(|&i| (column[i], self.labels[i])));
        self.pairs.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));

        let n = samples.len() as f64;
        let total_pos = positives as f64;
        let mut left_n = 0.0;
        let mut left_pos = 0.0;
        let mut best: Option<BestSplit> = None;
        for w in 0..self.pairs.len() - 1 {
            left_n += 1.0;
            left_pos += f64::from(u8::from(self.pairs[w].1));
            let (here, next) = (self.pairs[w].0, self.pairs[w + 1].0);
            if here == next {
                continue;
            }
            let impurity = weighted_gini(left_n, left_pos) + weighted_gini(n - left_n, total_pos - left_pos);
            if best.as_ref().is_none_or(|b| impurity < b.impurity) {
                best = Some(BestSplit {
                    feature,
                    threshold: (f64::from(here) + f64::from(next)) / 2.0,
                    impurity,
                });
            }
        }
        best
    }
}

/// `count · gini(node)` for a node with `count` samples, `pos` of them positive.
fn weighted_gini(count: f64, pos: f64) -> f64 {
    if count == 0.0 {
        return 0.0;
    }
    let p = pos / count;
    count * 2.0 * p * (1.0 - p)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn summary_of(per_tree: Vec<f64>) -> ProbabilitySummary {
        ProbabilitySummary::from_per_tree(per_tree)
    }

    #[test]
    fn zero_variance_interval_is_degenerate() {
        let s = summary_of(vec![1.0; 10]);
        assert_eq!((s.mean, s.std, s.low, s.up), (1.0, 0.0, 1.0, 1.0));
        let s = summary_of(vec![0.3]);
        assert_eq!((s.mean, s.std, s.low, s.up), (0.3, 0.0, 0.3, 0.3));
    }

    #[test]
    fn interval_matches_hand_computation() {
        // 50 trees at 0.5 and 50 at 0.7: mean 0.6, population sigma 0.1
        let per_tree: Vec<f64> = (0..100).map(|i| if i % 2 == 0 { 0.5 } else { 0.7 }).collect();
        let s = summary_of(per_tree);
        assert!((s.mean - 0.6).abs() < 1e-12);
        assert!((s.std - 0.1).abs() < 1e-12);
        assert!((s.low - 0.5804).abs() < 1e-9);
        assert!((s.up - 0.6196).abs() < 1e-9);
    }

    #[test]
    fn interval_is_clamped() {
        let s = summary_of(vec![0.0, 0.0, 0.0, 1.0]);
        assert_eq!(s.low, 0.0);
        let s = summary_of(vec![1.0, 1.0, 1.0, 0.0]);
        assert_eq!(s.up, 1.0);
    }

    #[test]
    fn leaf_routing_rules() {
        assert_eq!(Tree::leaf(0.25, 4).probability(&[3.0, 1.0]), 0.25);
        assert_eq!(Tree::leaf(1.0, 4).probability(&[0.0]), 1.0);
        let tree = Tree {
            nodes: vec![Node::Split(1, 0.5, 1, 2), Node::Leaf(0.1, 3), Node::Leaf(0.9, 3)],
        };
        assert_eq!(tree.probability(&[9.0, 0.5]), 0.1, "ties route left");
        assert_eq!(tree.probability(&[9.0, 0.6]), 0.9);
        assert_eq!(tree.depth(), 1);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let forest = Forest {
            feature_count: 3,
            config: ForestConfig::default(),
            seed: 0,
            trees: vec![Tree::leaf(0.5, 1)],
        };
        assert!(matches!(forest.predict(&[0.0; 2]), Err(Error::DimensionMismatch { expected: 3, actual: 2 })));
        assert!(forest.tree_probability(0, &[0.0; 4]).is_err());
    }

    #[test]
    fn rejects_single_class_and_empty_input() {
        let m = FeatureMatrix::from_rows(&[vec![0.0], vec![1.0]]).unwrap();
        let cfg = ForestConfig::default();
        assert!(matches!(train_forest(&m, &[true, true], &cfg, 0), Err(Error::SingleClass)));
        let empty = FeatureMatrix::zeros(0, 2);
        assert!(train_forest(&empty, &[], &cfg, 0).is_err());
    }

    #[test]
    fn serialized_layout() {
        let forest = Forest {
            feature_count: 2,
            config: ForestConfig::default(),
            seed: 1,
            trees: vec![Tree {
                nodes: vec![Node::Split(1, 0.5, 1, 2), Node::Leaf(0.0, 3), Node::Leaf(1.0, 2)],
            }],
        };
        let json = serde_json::to_value(&forest).unwrap();
        assert_eq!(
            json["trees"],
            serde_json::json!([[{"split": [1, 0.5, 1, 2]}, {"leaf": [0.0, 3]}, {"leaf": [1.0, 2]}]])
        );
        let back: Forest = serde_json::from_value(json).unwrap();
        assert_eq!(back, forest);
        back.validate().unwrap();
    }

    #[test]
    fn validate_catches_cycles() {
        let forest = Forest {
            feature_count: 2,
            config: ForestConfig::default(),
            seed: 1,
            trees: vec![Tree {
                nodes: vec![Node::Split(1, 0.5, 0, 1), Node::Leaf(0.0, 3)],
            }],
        };
        assert!(forest.validate().is_err());
    }
}
