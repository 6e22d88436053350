//! Tree ensembles with averaged class-probability output.

use ndarray::{Array2, Array3, ArrayView1, ArrayView2, Axis};
use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from_seed};
use crate::tree::{DecisionTree, FeatureRanks, SplitPolicy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ForestKind {
    /// Bootstrap sample per tree, best split among `round(sqrt(d))` features.
    Random,
    /// Full sample per tree, one random feature and random threshold per split.
    CompletelyRandom,
}

impl ForestKind {
    pub fn split_policy(self) -> SplitPolicy {
        match self {
            ForestKind::Random => SplitPolicy::BestOfSqrtD,
            ForestKind::CompletelyRandom => SplitPolicy::SingleRandomFeature,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ForestKind::Random => "random",
            ForestKind::CompletelyRandom => "completely-random",
        }
    }
}

impl std::str::FromStr for ForestKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "random" | "rf" => Ok(ForestKind::Random),
            "completely-random" | "completely_random" | "cr" | "crf" => {
                Ok(ForestKind::CompletelyRandom)
            }
            other => Err(Error::InvalidArgument(format!("unknown forest kind '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ForestParams {
    pub kind: ForestKind,
    pub n_estimators: usize,
    pub seed: u64,
    /// Draw bootstrap samples proportionally to the sample weights (and train
    /// the drawn rows unweighted) instead of drawing uniformly and carrying the
    /// weights into the trees.
    pub weighted_bootstrap: bool,
}

impl ForestParams {
    pub fn new(kind: ForestKind, n_estimators: usize, seed: u64) -> Self {
        Self {
            kind,
            n_estimators,
            seed,
            weighted_bootstrap: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Forest {
    kind: ForestKind,
    trees: Vec<DecisionTree>,
    n_features: usize,
    n_classes: usize,
    seed: u64,
}

/// Trains `n_estimators` trees. Tree `i` draws all of its randomness from
/// `derive_seed(seed, i)`, so the result does not depend on the thread count.
pub fn fit_forest(
    x: ArrayView2<'_, f64>,
    y: &[usize],
    w: &[f64],
    n_classes: usize,
    params: &ForestParams,
) -> Result<Forest> {
    let ForestParams {
        kind,
        n_estimators,
        seed,
        weighted_bootstrap,
    } = *params;
    if n_estimators == 0 {
        return Err(Error::InvalidArgument("n_estimators must be at least 1".into()));
    }
    if x.nrows() != y.len() || y.len() != w.len() {
        return Err(Error::InvalidArgument(format!(
            "rows {} / labels {} / weights {} disagree",
            x.nrows(),
            y.len(),
            w.len()
        )));
    }
    if x.nrows() == 0 {
        return Err(Error::Empty);
    }
    let ranks = match kind {
        ForestKind::Random => FeatureRanks::new(x),
        ForestKind::CompletelyRandom => FeatureRanks::default(),
    };
    let trees = (0..n_estimators)
        .into_par_iter()
        .map(|i| {
            let tree_seed = derive_seed(seed, i as u64);
            fit_member(x, &ranks, y, w, n_classes, kind, tree_seed, weighted_bootstrap)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Forest {
        kind,
        trees,
        n_features: x.ncols(),
        n_classes,
        seed,
    })
}

#[allow(clippy::too_many_arguments)]
fn fit_member(
    x: ArrayView2<'_, f64>,
    ranks: &FeatureRanks,
    y: &[usize],
    w: &[f64],
    n_classes: usize,
    kind: ForestKind,
    seed: u64,
    weighted_bootstrap: bool,
) -> Result<DecisionTree> {
    match kind {
        ForestKind::CompletelyRandom => {
            DecisionTree::fit_ranked(x, ranks, y, w, n_classes, kind.split_policy(), seed)
        }
        ForestKind::Random => {
            let mut rng = rng_from_seed(seed);
            let m = y.len();
            let mut counts = vec![0u32; m];
            if weighted_bootstrap {
                let dist = WeightedIndex::new(w).map_err(|_| Error::ZeroWeights)?;
                for _ in 0..m {
                    counts[dist.sample(&mut rng)] += 1;
                }
            } else {
                for _ in 0..m {
                    counts[rng.gen_range(0..m)] += 1;
                }
            }
            // Duplicated draws enter as multiplicities on the row weight.
            let bag_weights: Vec<f64> = if weighted_bootstrap {
                counts.iter().map(|&c| c as f64).collect()
            } else {
                counts.iter().zip(w).map(|(&c, &wi)| c as f64 * wi).collect()
            };
            let tree_seed = rng.gen();
            DecisionTree::fit_ranked(x, ranks, y, &bag_weights, n_classes, kind.split_policy(), tree_seed)
        }
    }
}

impl Forest {
    /// Assembles a forest from already-fitted trees.
    pub fn from_trees(kind: ForestKind, trees: Vec<DecisionTree>, seed: u64) -> Result<Self> {
        let first = trees
            .first()
            .ok_or_else(|| Error::InvalidData("forest has no trees".into()))?;
        let (n_features, n_classes) = (first.n_features(), first.n_classes());
        if trees
            .iter()
            .any(|t| t.n_features() != n_features || t.n_classes() != n_classes)
        {
            return Err(Error::InvalidData("trees disagree on shape".into()));
        }
        Ok(Forest {
            kind,
            trees,
            n_features,
            n_classes,
            seed,
        })
    }

    pub fn kind(&self) -> ForestKind {
        self.kind
    }

    pub fn trees(&self) -> &[DecisionTree] {
        &self.trees
    }

    pub fn n_estimators(&self) -> usize {
        self.trees.len()
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

    /// Mean of the trees' leaf distributions for one sample.
    pub fn predict_proba(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x.len())?;
        Ok(self.predict_row(ArrayView1::from(x)))
    }

    pub(crate) fn predict_row(&self, x: ArrayView1<'_, f64>) -> Vec<f64> {
        let mut acc = vec![0.0; self.n_classes];
        self.accumulate_row(x, &mut acc);
        let n = self.trees.len() as f64;
        acc.iter_mut().for_each(|v| *v /= n);
        acc
    }

    /// Adds the unnormalized sum of tree distributions into `acc`.
    fn accumulate_row(&self, x: ArrayView1<'_, f64>, acc: &mut [f64]) {
        for tree in &self.trees {
            for (a, p) in acc.iter_mut().zip(tree.predict_row(x)) {
                *a += p;
            }
        }
    }

    /// Row-wise [`Forest::predict_proba`] over a matrix.
    pub fn predict_proba_matrix(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check_dim(x.ncols())?;
        let mut out = Array2::zeros((x.nrows(), self.n_classes));
        out.axis_iter_mut(Axis(0))
            .into_par_iter()
            .zip(x.axis_iter(Axis(0)).into_par_iter())
            .for_each(|(mut o, row)| {
                let p = self.predict_row(row);
                o.iter_mut().zip(p).for_each(|(o, p)| *o = p);
            });
        Ok(out)
    }

    /// Per-tree trace: entry `(i, t, k)` is tree `t`'s probability of class `k`
    /// on sample `i`, trees in training order.
    pub fn per_tree_predict_proba(&self, x: ArrayView2<'_, f64>) -> Result<Array3<f64>> {
        self.check_dim(x.ncols())?;
        let mut out = Array3::zeros((x.nrows(), self.trees.len(), self.n_classes));
        out.axis_iter_mut(Axis(0))
            .into_par_iter()
            .zip(x.axis_iter(Axis(0)).into_par_iter())
            .for_each(|(mut slab, row)| {
                for (t, tree) in self.trees.iter().enumerate() {
                    for (k, p) in tree.predict_row(row).iter().enumerate() {
                        slab[[t, k]] = *p;
                    }
                }
            });
        Ok(out)
    }

    fn check_dim(&self, actual: usize) -> Result<()> {
        if actual != self.n_features {
            return Err(Error::DimensionMismatch {
                expected: self.n_features,
                actual,
            });
        }
        Ok(())
    }
}
