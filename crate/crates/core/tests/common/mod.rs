//! Checks shared by the property tests and the acceptance report. Each check
//! returns a short detail line on success and a diagnosis on failure.
#![allow(dead_code)]

use std::path::PathBuf;

use daforest::cascade::{
    build_layer_input, h_transform, input_width, update_weights, AugmentedFeatures, ClassCoding, EstimatorSearch,
    OutputMode, TreeCounts,
};
use daforest::dataio::{load_csv, stratified_split, Column, CsvOptions};
use daforest::forest::{fit_forest, ForestKind, ForestParams};
use daforest::persistence::{decode, encode};
use daforest::rng::rng_from_seed;
use daforest::search::{search_n_estimators, SearchRange};
use daforest::util::argmax_rows;
use daforest::{fit, CascadeConfig, Connectivity, Dataset};
use ndarray::Array2;
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::Rng;

pub type Check = Result<String, String>;

pub fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

pub struct NamedData {
    pub name: &'static str,
    pub file: &'static str,
    pub opts: CsvOptions,
}

fn csv(label: Column, drop: &[&str], has_header: bool) -> CsvOptions {
    CsvOptions {
        label_column: label,
        has_header,
        drop_columns: drop.iter().map(|c| Column::Name((*c).into())).collect(),
        impute_missing: true,
        ..Default::default()
    }
}

pub fn bcw() -> NamedData {
    NamedData {
        name: "B.C.W.",
        file: "bcw.csv",
        opts: csv(Column::Name("class".into()), &["id"], true),
    }
}

pub fn parkinsons() -> NamedData {
    NamedData {
        name: "Parkinsons",
        file: "parkinsons.csv",
        opts: csv(Column::Name("status".into()), &["name"], true),
    }
}

pub fn yeast() -> NamedData {
    NamedData {
        name: "Yeast",
        file: "yeast.csv",
        opts: csv(Column::Last, &[], true),
    }
}

pub fn cnae9() -> NamedData {
    NamedData {
        name: "CNAE-9",
        file: "cnae9.csv",
        opts: csv(Column::Index(0), &[], false),
    }
}

impl NamedData {
    pub fn path(&self) -> PathBuf {
        data_dir().join(self.file)
    }

    /// `None` when the file is absent.
    pub fn load(&self) -> Option<Result<Dataset, String>> {
        let path = self.path();
        path.exists()
            .then(|| load_csv(&path, &self.opts).map_err(|e| e.to_string()))
    }
}

/// Three noisy Gaussian-like classes in `d` dimensions.
pub fn toy(m: usize, d: usize, seed: u64) -> Dataset {
    let mut rng = rng_from_seed(seed);
    let labels: Vec<usize> = (0..m).map(|i| i % 3).collect();
    let x = Array2::from_shape_fn((m, d), |(i, j)| {
        let centre = if j % 3 == labels[i] { 1.2 } else { 0.0 };
        centre + rng.gen_range(-1.0..1.0)
    });
    Dataset::new(x, labels, 3).unwrap()
}

pub fn small_config(seed: u64) -> CascadeConfig {
    CascadeConfig {
        random_forests: 2,
        completely_random_forests: 2,
        n_estimators: TreeCounts::uniform(8),
        search: EstimatorSearch::Off,
        seed,
        ..CascadeConfig::default()
    }
}

fn random_distribution(rng: &mut daforest::rng::Rng, k: usize) -> Vec<f64> {
    // Some exact zeros exercise the clip.
    let raw: Vec<f64> = (0..k)
        .map(|_| if rng.gen_bool(0.15) { 0.0 } else { rng.gen_range(0.0..1.0) })
        .collect();
    let s: f64 = raw.iter().sum();
    if s == 0.0 {
        let mut p = vec![0.0; k];
        p[rng.gen_range(0..k)] = 1.0;
        p
    } else {
        raw.iter().map(|v| v / s).collect()
    }
}

/// `h` sums to zero; the weight update matches a direct evaluation of
/// `w_i exp(-lr (K-1)/K sum_k y_ik log p_ik)` and stays normalized.
pub fn check_boost_invariants(cases: u32) -> Check {
    const CLIP: f64 = 1e-9;
    let mut runner = TestRunner::new(Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    });
    let strategy = (any::<u64>(), 2usize..10, 1usize..30);
    runner
        .run(&strategy, |(seed, k, m)| {
            let mut rng = rng_from_seed(seed);
            let p = random_distribution(&mut rng, k);
            let h = h_transform(&p, CLIP);
            let scale = h.iter().map(|v| v.abs()).fold(1.0, f64::max);
            prop_assert!(h.iter().sum::<f64>().abs() <= 1e-12 * scale * k as f64);

            let w0: Vec<f64> = (0..m).map(|_| rng.gen_range(0.01..1.0)).collect();
            let s: f64 = w0.iter().sum();
            let w0: Vec<f64> = w0.iter().map(|v| v / s).collect();
            let labels: Vec<usize> = (0..m).map(|_| rng.gen_range(0..k)).collect();
            let mut probs = Array2::zeros((m, k));
            for i in 0..m {
                for (c, v) in random_distribution(&mut rng, k).into_iter().enumerate() {
                    probs[[i, c]] = v;
                }
            }
            let lr = rng.gen_range(0.01..1.0);
            let got = update_weights(&w0, &labels, probs.view(), &ClassCoding::new(k), lr, CLIP);

            let kf = k as f64;
            let raw: Vec<f64> = (0..m)
                .map(|i| {
                    let mut e = 0.0;
                    for c in 0..k {
                        let y = if c == labels[i] { 1.0 } else { -1.0 / (kf - 1.0) };
                        e += y * probs[[i, c]].max(CLIP).ln();
                    }
                    w0[i] * (-lr * (kf - 1.0) / kf * e).exp()
                })
                .collect();
            let total: f64 = raw.iter().sum();
            prop_assert!((got.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            for i in 0..m {
                let want = raw[i] / total;
                prop_assert!((got[i] - want).abs() <= 1e-12 * want.max(1e-300) + 1e-300);
            }
            Ok(())
        })
        .map(|_| format!("{cases} randomized cases"))
        .map_err(|e| e.to_string())
}

/// Recorded layer widths follow `d + (l-1) K n` (dense) and `d + K n`
/// (sparse) over forced deep runs.
pub fn check_width_law() -> Check {
    let ds = toy(90, 5, 1);
    let mut seen = Vec::new();
    for mode in [Connectivity::Dense, Connectivity::Sparse, Connectivity::Plain] {
        let cfg = CascadeConfig {
            connectivity: mode,
            force_layers: Some(4),
            ..small_config(3)
        };
        let model = fit(&ds, &cfg).map_err(|e| e.to_string())?;
        let (d, block) = (ds.n_features(), ds.n_classes() * cfg.n_slots());
        for (i, rec) in model.history().unwrap().layers.iter().enumerate() {
            let l = i + 1;
            let want = match mode {
                Connectivity::Dense => d + (l - 1) * block,
                Connectivity::Sparse => if l == 1 { d } else { d + block },
                Connectivity::Plain => if l == 1 { d } else { block },
            };
            if rec.input_width != want || input_width(mode, d, block, l) != want {
                return Err(format!("{mode} layer {l}: width {} expected {want}", rec.input_width));
            }
            if model.layers()[i].input_dim() != want {
                return Err(format!("{mode} layer {l}: stored input_dim differs"));
            }
        }
        seen.push(mode.to_string());
    }
    Ok(format!("widths match for {}", seen.join("/")))
}

/// The cached cumulative curve equals holdout accuracy of independently
/// fitted `j`-tree forests for every candidate `j`.
pub fn check_search_oracle() -> Check {
    let ds = toy(200, 6, 4);
    let (train, holdout) = stratified_split(&ds, 0.2, 8).map_err(|e| e.to_string())?;
    let range = SearchRange::SMALL;
    let uniform = vec![1.0 / train.n_samples() as f64; train.n_samples()];
    let mut compared = 0;
    for (kind, seed) in [(ForestKind::Random, 21), (ForestKind::CompletelyRandom, 22)] {
        let cached = search_n_estimators(&train, &holdout, kind, range, seed).map_err(|e| e.to_string())?;
        for &(j, acc) in &cached.curve {
            let forest = fit_forest(
                train.features(),
                train.labels(),
                &uniform,
                train.n_classes(),
                &ForestParams::new(kind, j, seed),
            )
            .map_err(|e| e.to_string())?;
            let p = forest.predict_proba_matrix(holdout.features()).map_err(|e| e.to_string())?;
            let pred = argmax_rows(p.view());
            let hits = pred.iter().zip(holdout.labels()).filter(|(a, b)| a == b).count();
            let brute = hits as f64 / holdout.n_samples() as f64;
            if brute != acc {
                return Err(format!("{} j={j}: cached {acc} brute force {brute}", kind.name()));
            }
            compared += 1;
        }
        let best = cached
            .curve
            .iter()
            .fold((0, -1.0), |b, &(j, a)| if a > b.1 { (j, a) } else { b });
        if best.0 != cached.best_n {
            return Err(format!("{}: best_n {} expected {}", kind.name(), cached.best_n, best.0));
        }
    }
    Ok(format!("{compared} candidates over {range}, both forest kinds"))
}

/// A one-layer plain unboosted cascade predicts exactly like averaging the
/// slot forests refit from their stored seeds on the same fold rows.
pub fn check_reduction() -> Check {
    let ds = toy(120, 4, 5);
    let cfg = CascadeConfig {
        connectivity: Connectivity::Plain,
        boosting: false,
        max_layers: 1,
        ..small_config(6)
    };
    let model = fit(&ds, &cfg).map_err(|e| e.to_string())?;
    if model.n_layers() != 1 {
        return Err(format!("{} layers", model.n_layers()));
    }
    let folds = &model.history().unwrap().folds;
    let test = toy(60, 4, 50);
    let mut mean = Array2::<f64>::zeros((test.n_samples(), ds.n_classes()));
    let slots = model.layers()[0].slots();
    for slot in slots {
        let mut slot_mean = Array2::<f64>::zeros(mean.raw_dim());
        for (f, stored) in slot.fold_models().iter().enumerate() {
            let rows = folds.training(f);
            let part = ds.select(&rows);
            let w = vec![1.0 / rows.len() as f64; rows.len()];
            let refit = fit_forest(
                part.features(),
                part.labels(),
                &w,
                ds.n_classes(),
                &ForestParams::new(slot.kind(), stored.n_estimators(), stored.seed()),
            )
            .map_err(|e| e.to_string())?;
            slot_mean += &refit.predict_proba_matrix(test.features()).map_err(|e| e.to_string())?;
        }
        mean += &(slot_mean / slot.fold_models().len() as f64);
    }
    mean /= slots.len() as f64;

    let probability = &model.layer_outputs(test.features()).map_err(|e| e.to_string())?[0].probability;
    let diff = (probability - &mean).mapv(f64::abs).fold(0.0, |a: f64, &b| a.max(b));
    if diff > 1e-12 {
        return Err(format!("layer probability differs from the ensemble by {diff:e}"));
    }
    let ours = model.predict(test.features()).map_err(|e| e.to_string())?;
    if ours != argmax_rows(mean.view()) {
        return Err("predicted labels differ".into());
    }
    Ok(format!("{} slots x {} folds, max |dP| = {diff:.1e}", slots.len(), folds.k()))
}

/// No training row's out-of-fold block comes from a model that saw it, and
/// each block value equals the held-out fold model's prediction.
pub fn check_oof_hygiene() -> Check {
    let ds = toy(96, 4, 7);
    let cfg = CascadeConfig {
        force_layers: Some(3),
        record_trace: true,
        ..small_config(9)
    };
    let model = fit(&ds, &cfg).map_err(|e| e.to_string())?;
    let hist = model.history().unwrap();
    let fold_of = hist.folds.fold_of();
    let k = ds.n_classes();
    let mut prior: Vec<Array2<f64>> = Vec::new();
    let mut checked = 0;
    for (l, rec) in hist.layers.iter().enumerate() {
        let trace = rec.trace.as_ref().ok_or("no trace recorded")?;
        let input = build_layer_input(ds.features(), &prior, cfg.connectivity, l + 1).map_err(|e| e.to_string())?;
        for (s, slot) in model.layers()[l].slots().iter().enumerate() {
            for (f, forest) in slot.fold_models().iter().enumerate() {
                let rows = &trace.fit_rows[s][f];
                for (i, &fi) in fold_of.iter().enumerate() {
                    if fi != f {
                        continue;
                    }
                    if rows.contains(&i) {
                        return Err(format!("layer {} slot {s}: row {i} used to fit its own scorer", l + 1));
                    }
                    let p = forest.predict_proba(&input.row(i).to_vec()).map_err(|e| e.to_string())?;
                    let stored = trace.oof.row(i);
                    if p.iter().zip(stored.iter().skip(s * k)).any(|(a, b)| a != b) {
                        return Err(format!("layer {} slot {s}: OOF value of row {i} is not its fold model's", l + 1));
                    }
                    checked += 1;
                }
            }
        }
        prior.push(trace.oof.clone());
    }
    Ok(format!("{checked} (row, slot) scores over {} layers", hist.layers.len()))
}

/// Decisions after encode/decode are bit-identical, including non-default
/// output and feature options.
pub fn check_serialization() -> Check {
    let ds = toy(80, 3, 11);
    let probe = toy(40, 3, 12);
    let variants = [
        small_config(1),
        CascadeConfig {
            connectivity: Connectivity::Sparse,
            augmented: AugmentedFeatures::HScores,
            output: OutputMode::LastLayer,
            force_layers: Some(3),
            ..small_config(2)
        },
        CascadeConfig {
            refit_full: true,
            boosting: false,
            ..small_config(3)
        },
    ];
    let mut total = 0;
    for cfg in &variants {
        let model = fit(&ds, cfg).map_err(|e| e.to_string())?;
        let bytes = encode(&model);
        let back = decode(&bytes).map_err(|e| e.to_string())?;
        let a = model.decision(probe.features()).map_err(|e| e.to_string())?;
        let b = back.decision(probe.features()).map_err(|e| e.to_string())?;
        if a.iter().zip(b.iter()).any(|(x, y)| x.to_bits() != y.to_bits()) {
            return Err("decision changed after a round trip".into());
        }
        if encode(&back) != bytes {
            return Err("re-encoding a loaded model changed the bytes".into());
        }
        total += bytes.len();
    }
    Ok(format!("{} configurations, {total} archive bytes", variants.len()))
}

/// The same seed on 1 and 4 worker threads gives identical archives and
/// predictions.
pub fn check_determinism() -> Check {
    let ds = toy(120, 5, 13);
    let cfg = CascadeConfig {
        search: EstimatorSearch::Range(SearchRange::new(2, 12, 2).unwrap()),
        ..small_config(14)
    };
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| fit(&ds, &cfg))
    };
    let one = run(1).map_err(|e| e.to_string())?;
    let four = run(4).map_err(|e| e.to_string())?;
    let (a, b) = (encode(&one), encode(&four));
    if a != b {
        return Err("archives differ between 1 and 4 threads".into());
    }
    let pa = one.predict_proba(ds.features()).map_err(|e| e.to_string())?;
    let pb = four.predict_proba(ds.features()).map_err(|e| e.to_string())?;
    if pa.iter().zip(pb.iter()).any(|(x, y)| x.to_bits() != y.to_bits()) {
        return Err("predictions differ between 1 and 4 threads".into());
    }
    Ok(format!("{} identical archive bytes", a.len()))
}
