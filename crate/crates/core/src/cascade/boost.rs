//! Real-valued multiclass boosting applied per cascade layer.
//!
//! Each layer's probability estimate `P` is mapped to a zero-sum score
//! `h_k = (K - 1) * (log P_k - mean_k' log P_k')`; the model's decision is the
//! sum of `h` over layers. Sample weights are updated with
//! `w_i <- w_i * exp(-lr * (K - 1) / K * code(y_i) . log P(x_i))` and
//! renormalized, where `code(y)` has `1` at the true class and `-1/(K-1)`
//! elsewhere.

use log::warn;
use ndarray::{Array2, ArrayView2, Axis};

/// Target coding: `1` for the true class, `-1/(K-1)` otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClassCoding {
    n_classes: usize,
}

impl ClassCoding {
    pub fn new(n_classes: usize) -> Self {
        assert!(n_classes >= 2, "class coding needs at least two classes");
        Self { n_classes }
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn code(&self, label: usize, class: usize) -> f64 {
        if class == label {
            1.0
        } else {
            -1.0 / (self.n_classes - 1) as f64
        }
    }

    pub fn vector(&self, label: usize) -> Vec<f64> {
        (0..self.n_classes).map(|k| self.code(label, k)).collect()
    }
}

fn clipped_logs(p: &[f64], clip: f64) -> Vec<f64> {
    p.iter().map(|&v| v.clamp(clip, 1.0).ln()).collect()
}

/// Zero-sum score of one probability row; probabilities are clipped to
/// `[clip, 1]` before the log.
pub fn h_transform(p: &[f64], clip: f64) -> Vec<f64> {
    let k = p.len();
    let logs = clipped_logs(p, clip);
    let mean = logs.iter().sum::<f64>() / k as f64;
    let scale = (k - 1) as f64;
    logs.iter().map(|l| scale * (l - mean)).collect()
}

pub fn h_transform_rows(p: ArrayView2<'_, f64>, clip: f64) -> Array2<f64> {
    let mut out = Array2::zeros(p.raw_dim());
    for (mut o, row) in out.axis_iter_mut(Axis(0)).zip(p.axis_iter(Axis(0))) {
        let h = h_transform(&row.to_vec(), clip);
        o.iter_mut().zip(h).for_each(|(o, h)| *o = h);
    }
    out
}

/// Row-wise clipped `log P`.
pub fn log_probability_rows(p: ArrayView2<'_, f64>, clip: f64) -> Array2<f64> {
    p.mapv(|v| v.clamp(clip, 1.0).ln())
}

/// Maps a decision row back to probabilities: `softmax(h / (K - 1))`.
/// For a single layer this recovers the clipped, renormalized `P`.
pub fn decision_to_proba(h: &[f64]) -> Vec<f64> {
    let k = h.len();
    if k < 2 {
        return vec![1.0; k];
    }
    let scale = (k - 1) as f64;
    let max = h.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = h.iter().map(|v| ((v - max) / scale).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// One boosting step on the sample weights; returns weights summing to one.
///
/// If every weight underflows the vector is reset to uniform.
pub fn update_weights(
    weights: &[f64],
    labels: &[usize],
    p: ArrayView2<'_, f64>,
    coding: &ClassCoding,
    learning_rate: f64,
    clip: f64,
) -> Vec<f64> {
    let k = coding.n_classes() as f64;
    let factor = -learning_rate * (k - 1.0) / k;
    let mut next: Vec<f64> = weights
        .iter()
        .zip(labels)
        .zip(p.axis_iter(Axis(0)))
        .map(|((&w, &y), row)| {
            let dot: f64 = row
                .iter()
                .enumerate()
                .map(|(c, &pc)| coding.code(y, c) * pc.clamp(clip, 1.0).ln())
                .sum();
            w * (factor * dot).exp()
        })
        .collect();
    let total: f64 = next.iter().sum();
    if !(total.is_finite() && total > 0.0) {
        warn!("sample weights degenerated (sum = {total}); resetting to uniform");
        let u = 1.0 / next.len() as f64;
        next.iter_mut().for_each(|v| *v = u);
        return next;
    }
    next.iter_mut().for_each(|v| *v /= total);
    next
}

/// Normalized sample weights carried across layers.
#[derive(Debug, Clone, PartialEq)]
pub struct BoostState {
    weights: Vec<f64>,
    learning_rate: f64,
    prob_clip: f64,
}

impl BoostState {
    pub fn new(n_samples: usize, learning_rate: f64, prob_clip: f64) -> Self {
        Self {
            weights: vec![1.0 / n_samples as f64; n_samples],
            learning_rate,
            prob_clip,
        }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn update(&mut self, labels: &[usize], p: ArrayView2<'_, f64>, coding: &ClassCoding) {
        self.weights = update_weights(
            &self.weights,
            labels,
            p,
            coding,
            self.learning_rate,
            self.prob_clip,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::Rng;

    const CLIP: f64 = 1e-9;

    #[test]
    fn coding_sums_to_zero() {
        for k in 2..8 {
            let c = ClassCoding::new(k);
            for y in 0..k {
                assert!(c.vector(y).iter().sum::<f64>().abs() < 1e-12);
                assert_eq!(c.code(y, y), 1.0);
            }
        }
    }

    #[test]
    fn uniform_probability_gives_zero_h() {
        for k in 2..6 {
            let h = h_transform(&vec![1.0 / k as f64; k], CLIP);
            assert!(h.iter().all(|v| v.abs() < 1e-12));
        }
    }

    #[test]
    fn two_class_hand_value() {
        // (K-1) (ln 0.8 - (ln 0.8 + ln 0.2) / 2) = ln(0.8 / 0.2) / 2 = ln 2
        let h = h_transform(&[0.8, 0.2], CLIP);
        let ln2 = std::f64::consts::LN_2;
        assert!((h[0] - ln2).abs() < 1e-12, "{h:?}");
        assert!((h[1] + ln2).abs() < 1e-12);
    }

    #[test]
    fn clipping_keeps_zero_probabilities_finite() {
        let h = h_transform(&[1.0, 0.0, 0.0], CLIP);
        assert!(h.iter().all(|v| v.is_finite()));
        assert!(h.iter().sum::<f64>().abs() < 1e-9);
    }

    #[test]
    fn uniform_p_leaves_weights_unchanged() {
        let w = vec![0.1, 0.2, 0.3, 0.4];
        let p = Array2::from_elem((4, 3), 1.0 / 3.0);
        let next = update_weights(&w, &[0, 1, 2, 0], p.view(), &ClassCoding::new(3), 0.3, CLIP);
        for (a, b) in w.iter().zip(&next) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn confident_correct_sample_loses_weight() {
        // Both samples have label 0. Sample 0: P = (0.9, 0.1) (correct),
        // sample 1: P = (0.1, 0.9) (wrong). With K = 2, lr = 1:
        //   exponent_0 = -1/2 * (ln 0.9 - ln 0.1) = -ln 3
        //   exponent_1 = -1/2 * (ln 0.1 - ln 0.9) = +ln 3
        // so raw weights are (1/3, 3) * 0.5 and normalize to (0.1, 0.9).
        let p = array![[0.9, 0.1], [0.1, 0.9]];
        let next = update_weights(&[0.5, 0.5], &[0, 0], p.view(), &ClassCoding::new(2), 1.0, CLIP);
        assert!((next[0] - 0.1).abs() < 1e-12, "{next:?}");
        assert!((next[1] - 0.9).abs() < 1e-12);
        assert!(next[0] < next[1]);
    }

    #[test]
    fn learning_rate_scales_exponent() {
        let p = array![[0.9, 0.1], [0.1, 0.9]];
        let next = update_weights(&[0.5, 0.5], &[0, 0], p.view(), &ClassCoding::new(2), 0.3, CLIP);
        let ratio = next[1] / next[0];
        assert!((ratio - 9f64.powf(0.3)).abs() < 1e-12);
    }

    #[test]
    fn degenerate_weights_reset() {
        let p = array![[0.5, 0.5], [0.5, 0.5]];
        let next = update_weights(&[0.0, 0.0], &[0, 1], p.view(), &ClassCoding::new(2), 0.3, CLIP);
        assert_eq!(next, vec![0.5, 0.5]);
    }

    #[test]
    fn inverse_recovers_binary_probabilities() {
        for &p0 in &[0.5, 0.8, 0.01, 0.999, 1e-12] {
            let p = [p0, 1.0 - p0];
            let back = decision_to_proba(&h_transform(&p, CLIP));
            let clipped: Vec<f64> = p.iter().map(|v| v.clamp(CLIP, 1.0)).collect();
            let s: f64 = clipped.iter().sum();
            for (b, c) in back.iter().zip(&clipped) {
                assert!((b - c / s).abs() < 1e-9, "{p0}: {back:?}");
            }
        }
        assert_eq!(decision_to_proba(&[0.0, 0.0, 0.0]), vec![1.0 / 3.0; 3]);
    }

    fn random_distribution(rng: &mut crate::rng::Rng, k: usize) -> Vec<f64> {
        let mut v: Vec<f64> = (0..k)
            .map(|_| if rng.gen_bool(0.2) { 0.0 } else { rng.gen::<f64>() })
            .collect();
        if v.iter().sum::<f64>() == 0.0 {
            v[0] = 1.0;
        }
        let s: f64 = v.iter().sum();
        v.iter_mut().for_each(|x| *x /= s);
        v
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn h_sums_to_zero_and_keeps_argmax(seed in any::<u64>(), k in 2usize..12) {
            let mut rng = rng_from_seed(seed);
            let p = random_distribution(&mut rng, k);
            let h = h_transform(&p, CLIP);
            prop_assert!(h.iter().sum::<f64>().abs() < 1e-9);
            let clipped: Vec<f64> = p.iter().map(|v| v.clamp(CLIP, 1.0)).collect();
            prop_assert_eq!(crate::util::argmax(&h), crate::util::argmax(&clipped));
        }

        #[test]
        fn weights_stay_normalized(seed in any::<u64>(), k in 2usize..8, m in 1usize..40) {
            let mut rng = rng_from_seed(seed);
            let mut w: Vec<f64> = (0..m).map(|_| rng.gen_range(0.0..1.0)).collect();
            let s: f64 = w.iter().sum::<f64>().max(1e-300);
            w.iter_mut().for_each(|v| *v /= s);
            let labels: Vec<usize> = (0..m).map(|_| rng.gen_range(0..k)).collect();
            let mut p = Array2::zeros((m, k));
            for i in 0..m {
                for (c, v) in random_distribution(&mut rng, k).into_iter().enumerate() {
                    p[[i, c]] = v;
                }
            }
            let lr = rng.gen_range(0.01..2.0);
            let next = update_weights(&w, &labels, p.view(), &ClassCoding::new(k), lr, CLIP);
            prop_assert!((next.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(next.iter().all(|v| *v >= 0.0));
        }
    }
}
