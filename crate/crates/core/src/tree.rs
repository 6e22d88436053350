//! Weighted CART classification trees grown until every leaf is pure.
//!
//! Impurity is weighted Gini. Two split policies exist:
//!
//! * [`SplitPolicy::BestOfSqrtD`]: draw `max(1, round(sqrt(d)))` non-constant
//!   features without replacement and take the (feature, threshold) pair with
//!   the lowest weighted child impurity, thresholds at midpoints between
//!   consecutive distinct values.
//! * [`SplitPolicy::SingleRandomFeature`]: draw one feature and a threshold
//!   uniformly in the node's `[min, max)` for that feature. A constant draw
//!   is retried up to [`RANDOM_SPLIT_RETRIES`] times before the node is closed.
//!
//! Routing: a sample goes left iff `x[feature] <= threshold`.

use ndarray::{ArrayView1, ArrayView2};
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::rng_from_seed;

pub const RANDOM_SPLIT_RETRIES: usize = 10;

/// Relative tolerance under which two split scores count as tied.
const TIE_TOLERANCE: f64 = 1e-12;
const LOW_MASK: u64 = u32::MAX as u64;

/// Dense per-column ranks of a feature matrix: equal values share a rank and
/// rank order is value order. Stored column-major.
#[derive(Debug, Clone, Default)]
pub(crate) struct FeatureRanks {
    n_rows: usize,
    ranks: Vec<u32>,
}

impl FeatureRanks {
    pub(crate) fn new(x: ArrayView2<'_, f64>) -> Self {
        let n_rows = x.nrows();
        let mut ranks = vec![0u32; n_rows * x.ncols()];
        let mut order: Vec<usize> = (0..n_rows).collect();
        for (f, column) in x.columns().into_iter().enumerate() {
            order.sort_unstable_by(|&a, &b| column[a].total_cmp(&column[b]));
            let out = &mut ranks[f * n_rows..(f + 1) * n_rows];
            let mut rank = 0u32;
            for p in 0..order.len() {
                if p > 0 && column[order[p]] != column[order[p - 1]] {
                    rank += 1;
                }
                out[order[p]] = rank;
            }
        }
        Self { n_rows, ranks }
    }

    fn column(&self, feature: usize) -> &[u32] {
        &self.ranks[feature * self.n_rows..(feature + 1) * self.n_rows]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SplitPolicy {
    BestOfSqrtD,
    SingleRandomFeature,
}

impl SplitPolicy {
    /// Number of non-constant candidate features examined per node.
    pub fn candidate_features(self, n_features: usize) -> usize {
        match self {
            SplitPolicy::BestOfSqrtD => ((n_features as f64).sqrt().round() as usize).max(1),
            SplitPolicy::SingleRandomFeature => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        /// Weighted class frequencies, sums to one.
        distribution: Vec<f64>,
        /// Total sample weight that reached the leaf during training.
        weight: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecisionTree {
    nodes: Vec<Node>,
    n_features: usize,
    n_classes: usize,
    seed: u64,
}

/// Fits a tree on `(x, y)` with per-row weights `w`. Rows with zero weight
/// are ignored.
pub fn fit_tree(
    x: ArrayView2<'_, f64>,
    y: &[usize],
    w: &[f64],
    n_classes: usize,
    policy: SplitPolicy,
    seed: u64,
) -> Result<DecisionTree> {
    DecisionTree::fit(x, y, w, n_classes, policy, seed)
}

impl DecisionTree {
    pub fn fit(
        x: ArrayView2<'_, f64>,
        y: &[usize],
        w: &[f64],
        n_classes: usize,
        policy: SplitPolicy,
        seed: u64,
    ) -> Result<Self> {
        let ranks = match policy {
            SplitPolicy::BestOfSqrtD => FeatureRanks::new(x),
            SplitPolicy::SingleRandomFeature => FeatureRanks::default(),
        };
        Self::fit_ranked(x, &ranks, y, w, n_classes, policy, seed)
    }

    /// As [`DecisionTree::fit`] with ranks precomputed from `x`.
    pub(crate) fn fit_ranked(
        x: ArrayView2<'_, f64>,
        ranks: &FeatureRanks,
        y: &[usize],
        w: &[f64],
        n_classes: usize,
        policy: SplitPolicy,
        seed: u64,
    ) -> Result<Self> {
        if x.nrows() == 0 {
            return Err(Error::Empty);
        }
        if x.nrows() != y.len() || y.len() != w.len() {
            return Err(Error::InvalidArgument(format!(
                "rows {} / labels {} / weights {} disagree",
                x.nrows(),
                y.len(),
                w.len()
            )));
        }
        if n_classes == 0 || y.iter().any(|&c| c >= n_classes) {
            return Err(Error::InvalidArgument(format!("labels outside 0..{n_classes}")));
        }
        if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidArgument("weights must be finite and nonnegative".into()));
        }
        let samples: Vec<usize> = (0..y.len()).filter(|&i| w[i] > 0.0).collect();
        if samples.is_empty() {
            return Err(Error::ZeroWeights);
        }

        let mut grower = Grower {
            x,
            y,
            w,
            n_classes,
            policy,
            rng: rng_from_seed(seed),
            samples,
            nodes: Vec::new(),
            ranks,
            sorted: Vec::new(),
            feature_order: (0..x.ncols()).collect(),
        };
        grower.grow();
        Ok(DecisionTree {
            nodes: grower.nodes,
            n_features: x.ncols(),
            n_classes,
            seed,
        })
    }

    /// Rebuilds a tree from raw nodes, checking that it is a well-formed
    /// binary tree in preorder layout.
    pub fn from_nodes(
        nodes: Vec<Node>,
        n_features: usize,
        n_classes: usize,
        seed: u64,
    ) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::InvalidData("tree has no nodes".into()));
        }
        let mut referenced = vec![false; nodes.len()];
        for (i, node) in nodes.iter().enumerate() {
            match node {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    if *feature >= n_features || !threshold.is_finite() {
                        return Err(Error::InvalidData(format!("bad split at node {i}")));
                    }
                    for &child in [left, right] {
                        if child <= i || child >= nodes.len() || referenced[child] {
                            return Err(Error::InvalidData(format!(
                                "bad child link {child} at node {i}"
                            )));
                        }
                        referenced[child] = true;
                    }
                }
                Node::Leaf {
                    distribution,
                    weight,
                } => {
                    if distribution.len() != n_classes || !weight.is_finite() {
                        return Err(Error::InvalidData(format!("bad leaf at node {i}")));
                    }
                }
            }
        }
        if referenced.iter().skip(1).any(|r| !r) {
            return Err(Error::InvalidData("unreachable nodes".into()));
        }
        Ok(DecisionTree {
            nodes,
            n_features,
            n_classes,
            seed,
        })
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, Node::Leaf { .. }))
            .count()
    }

    pub fn n_internal(&self) -> usize {
        self.nodes.len() - self.n_leaves()
    }

    pub fn depth(&self) -> usize {
        let mut depth = vec![0usize; self.nodes.len()];
        let mut max = 0;
        for (i, node) in self.nodes.iter().enumerate() {
            if let Node::Split { left, right, .. } = node {
                depth[*left] = depth[i] + 1;
                depth[*right] = depth[i] + 1;
                max = max.max(depth[i] + 1);
            }
        }
        max
    }

    /// Class distribution of the leaf that `x` reaches.
    pub fn predict_proba(&self, x: &[f64]) -> Result<&[f64]> {
        if x.len() != self.n_features {
            return Err(Error::DimensionMismatch {
                expected: self.n_features,
                actual: x.len(),
            });
        }
        Ok(self.route(|f| x[f]))
    }

    /// Unchecked variant for rows already validated by the caller.
    pub(crate) fn predict_row(&self, x: ArrayView1<'_, f64>) -> &[f64] {
        self.route(|f| x[f])
    }

    fn route(&self, value: impl Fn(usize) -> f64) -> &[f64] {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if value(*feature) <= *threshold { *left } else { *right },
                Node::Leaf { distribution, .. } => return distribution,
            }
        }
    }
}

struct Candidate {
    score: f64,
    feature: usize,
    threshold: f64,
}

struct Grower<'a> {
    x: ArrayView2<'a, f64>,
    y: &'a [usize],
    w: &'a [f64],
    n_classes: usize,
    policy: SplitPolicy,
    rng: crate::rng::Rng,
    /// Sample ids; every open node owns a contiguous range.
    samples: Vec<usize>,
    nodes: Vec<Node>,
    ranks: &'a FeatureRanks,
    sorted: Vec<u64>,
    feature_order: Vec<usize>,
}

impl Grower<'_> {
    fn grow(&mut self) {
        self.nodes.push(Node::Leaf {
            distribution: Vec::new(),
            weight: 0.0,
        });
        let mut stack = vec![(0usize, 0usize, self.samples.len())];
        while let Some((id, start, end)) = stack.pop() {
            let (class_weight, total) = self.class_weights(start, end);
            let pure = class_weight.iter().filter(|&&c| c > 0.0).count() <= 1;
            let split = if pure || end - start < 2 {
                None
            } else {
                match self.policy {
                    SplitPolicy::BestOfSqrtD => self.best_split(start, end, total),
                    SplitPolicy::SingleRandomFeature => self.random_split(start, end),
                }
            };
            match split {
                Some((feature, threshold)) => {
                    let mid = self.partition(start, end, feature, threshold);
                    debug_assert!(mid > start && mid < end);
                    let left = self.nodes.len();
                    let right = left + 1;
                    for _ in 0..2 {
                        self.nodes.push(Node::Leaf {
                            distribution: Vec::new(),
                            weight: 0.0,
                        });
                    }
                    self.nodes[id] = Node::Split {
                        feature,
                        threshold,
                        left,
                        right,
                    };
                    stack.push((right, mid, end));
                    stack.push((left, start, mid));
                }
                None => {
                    let distribution = class_weight.iter().map(|c| c / total).collect();
                    self.nodes[id] = Node::Leaf {
                        distribution,
                        weight: total,
                    };
                }
            }
        }
    }

    fn class_weights(&self, start: usize, end: usize) -> (Vec<f64>, f64) {
        let mut cw = vec![0.0; self.n_classes];
        for &i in &self.samples[start..end] {
            cw[self.y[i]] += self.w[i];
        }
        let total = cw.iter().sum();
        (cw, total)
    }

    fn partition(&mut self, start: usize, end: usize, feature: usize, threshold: f64) -> usize {
        let x = self.x;
        let slice = &mut self.samples[start..end];
        let mut lo = 0;
        for j in 0..slice.len() {
            if x[[slice[j], feature]] <= threshold {
                slice.swap(lo, j);
                lo += 1;
            }
        }
        start + lo
    }

    fn best_split(&mut self, start: usize, end: usize, total: f64) -> Option<(usize, f64)> {
        let n_features = self.x.ncols();
        let wanted = self.policy.candidate_features(n_features);
        let tol = TIE_TOLERANCE * total;
        let mut best: Option<Candidate> = None;
        let mut examined = 0;
        let mut left = vec![0.0; self.n_classes];
        let mut right = vec![0.0; self.n_classes];

        // Partial Fisher-Yates: features are drawn without replacement until
        // enough non-constant ones have been scored.
        for drawn in 0..n_features {
            if examined == wanted {
                break;
            }
            let pick = self.rng.gen_range(drawn..n_features);
            self.feature_order.swap(drawn, pick);
            let feature = self.feature_order[drawn];

            // Sorting (rank, index) keys orders samples by (value, index).
            let column = self.ranks.column(feature);
            self.sorted.clear();
            self.sorted.extend(
                self.samples[start..end]
                    .iter()
                    .map(|&i| (u64::from(column[i]) << 32) | i as u64),
            );
            self.sorted.sort_unstable();
            let first = self.sorted[0] >> 32;
            let last = self.sorted[self.sorted.len() - 1] >> 32;
            if first == last {
                continue;
            }
            examined += 1;

            left.iter_mut().for_each(|v| *v = 0.0);
            right.iter_mut().for_each(|v| *v = 0.0);
            for &key in &self.sorted {
                let i = (key & LOW_MASK) as usize;
                right[self.y[i]] += self.w[i];
            }
            // Running sums of squared class weights on each side, updated in
            // O(1) as one sample moves from right to left.
            let mut sq_left = 0.0;
            let mut sq_right: f64 = right.iter().map(|v| v * v).sum();
            let mut w_left = 0.0;
            for p in 0..self.sorted.len() - 1 {
                let (key, next_key) = (self.sorted[p], self.sorted[p + 1]);
                let i = (key & LOW_MASK) as usize;
                let (c, wi) = (self.y[i], self.w[i]);
                sq_left += wi * (2.0 * left[c] + wi);
                sq_right -= wi * (2.0 * right[c] - wi);
                left[c] += wi;
                right[c] -= wi;
                w_left += wi;
                if key >> 32 == next_key >> 32 {
                    continue;
                }
                let w_right = total - w_left;
                if w_left <= 0.0 || w_right <= 0.0 {
                    continue;
                }
                // Maximizing sum(l^2)/W_l + sum(r^2)/W_r minimizes weighted child Gini.
                let score = sq_left / w_left + sq_right / w_right;
                let value = self.x[[i, feature]];
                let next = self.x[[(next_key & LOW_MASK) as usize, feature]];
                let mut threshold = 0.5 * (value + next);
                if threshold >= next {
                    threshold = value;
                }
                let better = match &best {
                    None => true,
                    Some(b) => {
                        score > b.score + tol
                            || ((score - b.score).abs() <= tol
                                && (feature, threshold) < (b.feature, b.threshold))
                    }
                };
                if better {
                    best = Some(Candidate {
                        score,
                        feature,
                        threshold,
                    });
                }
            }
        }
        best.map(|b| (b.feature, b.threshold))
    }

    fn random_split(&mut self, start: usize, end: usize) -> Option<(usize, f64)> {
        let n_features = self.x.ncols();
        for _ in 0..RANDOM_SPLIT_RETRIES {
            let feature = self.rng.gen_range(0..n_features);
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for &i in &self.samples[start..end] {
                let v = self.x[[i, feature]];
                lo = lo.min(v);
                hi = hi.max(v);
            }
            if lo < hi {
                // Any threshold in [lo, hi) puts lo on the left and hi on the right.
                return Some((feature, self.rng.gen_range(lo..hi)));
            }
        }
        None
    }
}
