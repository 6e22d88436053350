//! Linear search for the number of trees per forest.
//!
//! One forest with `hi` trees is trained. On held-out data, the accuracy of
//! the average of the first `j` trees' probability vectors is evaluated for
//! every candidate `j` in the range; the smallest `j` with the highest
//! accuracy wins. Running per-sample sums make the whole scan a single pass
//! over the per-tree trace.

use log::warn;
use ndarray::{Array3, ArrayView3};

use crate::dataio::{stratified_split, Dataset};
use crate::error::{Error, Result};
use crate::forest::{fit_forest, ForestKind, ForestParams};
use crate::util::argmax;

/// Inclusive arithmetic range of candidate tree counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SearchRange {
    lo: usize,
    hi: usize,
    step: usize,
}

/// Training sets smaller than this use [`SearchRange::SMALL`].
pub const SMALL_DATASET_THRESHOLD: usize = 2000;

impl SearchRange {
    pub const DEFAULT: SearchRange = SearchRange {
        lo: 20,
        hi: 600,
        step: 20,
    };
    pub const SMALL: SearchRange = SearchRange {
        lo: 5,
        hi: 200,
        step: 5,
    };

    pub fn new(lo: usize, hi: usize, step: usize) -> Result<Self> {
        if lo == 0 || step == 0 || lo > hi {
            return Err(Error::InvalidArgument(format!(
                "invalid search range lo={lo} hi={hi} step={step}"
            )));
        }
        Ok(Self { lo, hi, step })
    }

    /// The range used when none is configured, chosen by training-set size.
    pub fn for_sample_count(m: usize) -> Self {
        if m < SMALL_DATASET_THRESHOLD {
            Self::SMALL
        } else {
            Self::DEFAULT
        }
    }

    pub fn lo(&self) -> usize {
        self.lo
    }

    pub fn hi(&self) -> usize {
        self.hi
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn candidates(&self) -> Vec<usize> {
        (self.lo..=self.hi).step_by(self.step).collect()
    }

    /// Size of the forest needed to evaluate every candidate.
    pub fn largest(&self) -> usize {
        *self.candidates().last().expect("range is non-empty")
    }
}

impl std::str::FromStr for SearchRange {
    type Err = Error;

    /// Parses `lo:hi:step`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let parse = |p: &str| {
            p.trim()
                .parse::<usize>()
                .map_err(|_| Error::InvalidArgument(format!("bad search range '{s}'")))
        };
        match parts.as_slice() {
            [lo, hi, step] => SearchRange::new(parse(lo)?, parse(hi)?, parse(step)?),
            _ => Err(Error::InvalidArgument(format!(
                "search range '{s}' must look like lo:hi:step"
            ))),
        }
    }
}

impl std::fmt::Display for SearchRange {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}:{}:{}", self.lo, self.hi, self.step)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult {
    pub kind: ForestKind,
    pub best_n: usize,
    /// `(candidate, holdout accuracy)` in increasing candidate order.
    pub curve: Vec<(usize, f64)>,
}

/// Holdout accuracy of the first-`j`-trees average for every `j` in
/// `candidates` (ascending), from a per-tree trace `(samples, trees, classes)`.
pub fn cumulative_accuracy_curve(
    trace: ArrayView3<'_, f64>,
    labels: &[usize],
    candidates: &[usize],
) -> Vec<f64> {
    let (m, n_trees, k) = trace.dim();
    assert_eq!(labels.len(), m);
    debug_assert!(candidates.windows(2).all(|w| w[0] < w[1]));
    debug_assert!(candidates.last().is_none_or(|&j| j <= n_trees));

    let mut running = vec![0.0; m * k];
    let mut curve = Vec::with_capacity(candidates.len());
    let mut summed = 0;
    let mut mean = vec![0.0; k];
    for &j in candidates {
        for t in summed..j {
            for i in 0..m {
                for c in 0..k {
                    running[i * k + c] += trace[[i, t, c]];
                }
            }
        }
        summed = j;
        let hits = (0..m)
            .filter(|&i| {
                for c in 0..k {
                    mean[c] = running[i * k + c] / j as f64;
                }
                argmax(&mean) == labels[i]
            })
            .count();
        curve.push(if m == 0 { 0.0 } else { hits as f64 / m as f64 });
    }
    curve
}

/// First (smallest-candidate) maximum of the curve.
pub fn pick_best(curve: &[(usize, f64)]) -> usize {
    let mut best = curve[0];
    for &(j, acc) in &curve[1..] {
        if acc > best.1 {
            best = (j, acc);
        }
    }
    best.0
}

pub fn search_n_estimators(
    train: &Dataset,
    holdout: &Dataset,
    kind: ForestKind,
    range: SearchRange,
    seed: u64,
) -> Result<SearchResult> {
    if holdout.n_samples() == 0 {
        return Err(Error::InvalidArgument("search holdout is empty".into()));
    }
    if holdout.n_features() != train.n_features() {
        return Err(Error::DimensionMismatch {
            expected: train.n_features(),
            actual: holdout.n_features(),
        });
    }
    let train_counts = train.class_counts();
    for &y in holdout.labels() {
        if train_counts.get(y).copied().unwrap_or(0) == 0 {
            warn!("holdout class {y} does not occur in the search training data");
            break;
        }
    }

    let candidates = range.candidates();
    let weights = vec![1.0 / train.n_samples() as f64; train.n_samples()];
    let forest = fit_forest(
        train.features(),
        train.labels(),
        &weights,
        train.n_classes(),
        &ForestParams::new(kind, range.largest(), seed),
    )?;
    let trace: Array3<f64> = forest.per_tree_predict_proba(holdout.features())?;
    let accs = cumulative_accuracy_curve(trace.view(), holdout.labels(), &candidates);
    let curve: Vec<(usize, f64)> = candidates.into_iter().zip(accs).collect();
    Ok(SearchResult {
        kind,
        best_n: pick_best(&curve),
        curve,
    })
}

/// Carves a stratified holdout of `holdout_fraction` from `ds` and searches.
pub fn search_with_holdout(
    ds: &Dataset,
    kind: ForestKind,
    range: SearchRange,
    holdout_fraction: f64,
    split_seed: u64,
    forest_seed: u64,
) -> Result<SearchResult> {
    let (train, holdout) = stratified_split(ds, holdout_fraction, split_seed)?;
    search_n_estimators(&train, &holdout, kind, range, forest_seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use ndarray::Array2;
    use rand::Rng;

    fn noisy(m: usize, seed: u64) -> Dataset {
        let mut rng = rng_from_seed(seed);
        let labels: Vec<usize> = (0..m).map(|i| i % 3).collect();
        let x = Array2::from_shape_fn((m, 4), |(i, j)| {
            let shift = if j == 0 { labels[i] as f64 } else { 0.0 };
            shift + rng.gen_range(-1.0..1.0)
        });
        Dataset::new(x, labels, 3).unwrap()
    }

    #[test]
    fn range_candidates() {
        assert_eq!(SearchRange::DEFAULT.candidates().len(), 30);
        assert_eq!(SearchRange::DEFAULT.candidates()[29], 600);
        assert_eq!(SearchRange::SMALL.candidates().len(), 40);
        assert_eq!(SearchRange::new(3, 10, 4).unwrap().candidates(), vec![3, 7]);
        assert_eq!(SearchRange::new(3, 10, 4).unwrap().largest(), 7);
        assert!(SearchRange::new(0, 10, 1).is_err());
        assert!(SearchRange::new(5, 4, 1).is_err());
        assert!(SearchRange::new(5, 10, 0).is_err());
        assert_eq!("5:200:5".parse::<SearchRange>().unwrap(), SearchRange::SMALL);
        assert_eq!(SearchRange::for_sample_count(1999), SearchRange::SMALL);
        assert_eq!(SearchRange::for_sample_count(2000), SearchRange::DEFAULT);
    }

    #[test]
    fn single_candidate() {
        let ds = noisy(90, 1);
        let (train, hold) = stratified_split(&ds, 0.3, 1).unwrap();
        let r = search_n_estimators(&train, &hold, ForestKind::Random, SearchRange::new(7, 7, 3).unwrap(), 2)
            .unwrap();
        assert_eq!(r.best_n, 7);
        assert_eq!(r.curve.len(), 1);
    }

    #[test]
    fn ties_prefer_smallest() {
        assert_eq!(pick_best(&[(5, 0.9), (10, 0.95), (15, 0.95), (20, 0.8)]), 10);
        assert_eq!(pick_best(&[(5, 0.5), (10, 0.5)]), 5);
    }

    #[test]
    fn best_is_a_candidate_with_max_accuracy() {
        let ds = noisy(150, 3);
        let (train, hold) = stratified_split(&ds, 0.3, 2).unwrap();
        for kind in [ForestKind::Random, ForestKind::CompletelyRandom] {
            let r = search_n_estimators(&train, &hold, kind, SearchRange::new(1, 30, 1).unwrap(), 5).unwrap();
            let max = r.curve.iter().map(|c| c.1).fold(f64::MIN, f64::max);
            let first = r.curve.iter().find(|c| c.1 == max).unwrap().0;
            assert_eq!(r.best_n, first);
        }
    }

    #[test]
    fn empty_holdout_rejected() {
        let ds = noisy(30, 1);
        let empty = ds.select(&[]);
        assert!(search_n_estimators(&ds, &empty, ForestKind::Random, SearchRange::SMALL, 0).is_err());
    }
}
