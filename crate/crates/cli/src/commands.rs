use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;
use std::time::Instant;

use daforest::benchmark::{benchmark_dataset, evaluate as evaluate_runs, summary_csv, DatasetResult, Summary, Variant};
use daforest::cascade::{resolve_tree_counts, EstimatorSearch};
use daforest::dataio::stratified_split;
use daforest::stats::{analyze, AccuracyMatrix, WilcoxonOptions, ZeroPolicy};
use daforest::util::{accuracy, argmax_rows};
use daforest::{fit, load_model, save_model, CascadeConfig};
use serde::Deserialize;

use crate::data::DataSpec;
use crate::error::{CliError, CliResult, ErrorClass};
use crate::report::{layer_rows, write_json, write_text, DataInfo, EvaluationReport, RunReport, SearchCurve, Seeds};
use crate::settings::Settings;
use crate::{BenchmarkArgs, EvaluateArgs, KindChoice, PredictArgs, SearchArgs, StatsArgs, TrainArgs};

const VERSION: &str = env!("CARGO_PKG_VERSION");

fn check_fraction(name: &str, f: f64, allow_zero: bool) -> CliResult<()> {
    let ok = f < 1.0 && (f > 0.0 || (allow_zero && f == 0.0));
    if ok {
        Ok(())
    } else {
        Err(CliError::config(format!("{name} must be in {}0, 1), got {f}", if allow_zero { "[" } else { "(" })))
    }
}

fn emit(text: &str, output: Option<&Path>) -> CliResult<()> {
    match output {
        Some(p) => write_text(text, p),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| CliError::new(ErrorClass::Io, format!("standard output: {e}"))),
    }
}

pub fn train(a: &TrainArgs) -> CliResult<()> {
    check_fraction("--test-fraction", a.test_fraction, true)?;
    let config = a.config.resolve()?;
    let start = Instant::now();
    let ds = a.data.load()?;
    let (train, test, split) = if a.test_fraction > 0.0 {
        let (tr, te) = stratified_split(&ds, a.test_fraction, config.seed)?;
        (tr, Some(te), Some(config.seed))
    } else {
        (ds.clone(), None, None)
    };

    let model = fit(&train, &config)?;
    let history = model.history().expect("fresh model has a history");
    let train_accuracy = model.score(&train)?;
    let test_curve = match &test {
        Some(t) => Some(
            model
                .decision_by_layer(t.features())?
                .iter()
                .map(|d| accuracy(&argmax_rows(d.view()), t.labels()))
                .collect::<Vec<_>>(),
        ),
        None => None,
    };
    let model_bytes = save_model(&model, &a.model)?;

    let used = CascadeConfig {
        n_estimators: model.n_estimators(),
        ..config.clone()
    };
    let report = RunReport {
        version: VERSION,
        data: DataInfo {
            path: a.data.path.display().to_string(),
            n_samples: ds.n_samples(),
            n_features: ds.n_features(),
            n_classes: ds.n_classes(),
            class_names: ds.class_names().map(<[String]>::to_vec),
        },
        config: Settings::snapshot(&used),
        seeds: Seeds {
            model: config.seed,
            split,
            folds: history.folds.seed(),
        },
        test_fraction: a.test_fraction,
        n_estimators: model.n_estimators().into(),
        search: history.search.iter().map(SearchCurve::from).collect(),
        layers: layer_rows(history, test_curve.as_deref()),
        trained_layers: history.layers.len(),
        kept_layers: model.n_layers(),
        train_accuracy,
        test_accuracy: test_curve.as_ref().and_then(|c| c.last().copied()),
        search_seconds: history.search_seconds,
        total_seconds: start.elapsed().as_secs_f64(),
        model_path: a.model.display().to_string(),
        model_bytes,
    };
    if let Some(p) = &a.report {
        write_json(&report, p)?;
    }
    print!("{}", train_summary(&report));
    Ok(())
}

fn train_summary(r: &RunReport) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "data: {} ({} samples, {} features, {} classes)",
        r.data.path, r.data.n_samples, r.data.n_features, r.data.n_classes
    );
    let _ = writeln!(
        s,
        "trees per forest: random {}, completely-random {}",
        r.n_estimators.random, r.n_estimators.completely_random
    );
    let _ = writeln!(s, "layer  width  oof_acc  layer_acc  test_acc  seconds");
    for l in &r.layers {
        let test = l.test_accuracy.map(|t| format!("{t:.4}")).unwrap_or_else(|| "-".into());
        let _ = writeln!(
            s,
            "{:>5}{} {:>6}  {:.4}   {:.4}     {:>6}   {:.2}",
            l.index,
            if l.kept { ' ' } else { '*' },
            l.input_width,
            l.oof_accuracy,
            l.layer_accuracy,
            test,
            l.seconds
        );
    }
    let _ = writeln!(s, "kept {} of {} layers (* = dropped)", r.kept_layers, r.trained_layers);
    let _ = writeln!(s, "train accuracy: {:.4}", r.train_accuracy);
    if let Some(t) = r.test_accuracy {
        let _ = writeln!(s, "test accuracy: {t:.4}");
    }
    let _ = writeln!(s, "model: {} ({} bytes)", r.model_path, r.model_bytes);
    let _ = writeln!(s, "seconds: {:.2}", r.total_seconds);
    s
}

pub fn predict(a: &PredictArgs) -> CliResult<()> {
    let model = load_model(&a.model)?;
    let (x, truth) = if a.with_labels {
        let ds = a.data.load()?;
        let ds = match (model.class_names(), ds.class_names()) {
            (Some(names), Some(_)) => ds.with_class_order(names)?,
            _ => ds,
        };
        (ds.features().to_owned(), Some(ds.labels().to_vec()))
    } else {
        (a.data.load_features()?, None)
    };
    let proba = model.predict_proba(x.view())?;
    let predicted = argmax_rows(proba.view());
    let names: Vec<String> = match model.class_names() {
        Some(n) => n.to_vec(),
        None => (0..model.n_classes()).map(|k| k.to_string()).collect(),
    };

    let mut out = String::from("row,prediction");
    if a.proba {
        for n in &names {
            let _ = write!(out, ",p_{n}");
        }
    }
    out.push('\n');
    for (i, &c) in predicted.iter().enumerate() {
        let _ = write!(out, "{i},{}", names[c]);
        if a.proba {
            for v in proba.row(i) {
                let _ = write!(out, ",{v}");
            }
        }
        out.push('\n');
    }
    emit(&out, a.output.as_deref())?;
    if let Some(t) = truth {
        eprintln!("accuracy: {:.4} ({} rows)", accuracy(&predicted, &t), t.len());
    }
    Ok(())
}

pub fn evaluate(a: &EvaluateArgs) -> CliResult<()> {
    check_fraction("--test-fraction", a.test_fraction, false)?;
    let config = a.config.resolve()?;
    let ds = a.data.load()?;
    let base = a.base_seed.unwrap_or(config.seed);
    let summary = evaluate_runs(&ds, &config, a.test_fraction, base, a.runs)?;
    let name = a.data.path.display().to_string();
    if let Some(p) = &a.report {
        let r = EvaluationReport::new(&name, "command-line", Settings::snapshot(&config), a.test_fraction, &summary);
        write_json(&r, p)?;
    }
    print!("{}", evaluation_table(&summary));
    Ok(())
}

fn evaluation_table(s: &Summary) -> String {
    let mut out = String::from("seed  test_acc  train_acc  layers  trees(R/CR)  seconds\n");
    for r in &s.runs {
        let _ = writeln!(
            out,
            "{:>4}  {:.4}    {:.4}     {:>2}/{:<2}   {}/{}  {:>9.2}",
            r.seed,
            r.test_accuracy,
            r.train_accuracy,
            r.n_layers,
            r.trained_layers,
            r.n_estimators.random,
            r.n_estimators.completely_random,
            r.seconds
        );
    }
    let _ = writeln!(out, "mean {:.4} +- {:.4} over {} runs", s.mean, s.std, s.runs.len());
    out
}

pub fn search(a: &SearchArgs) -> CliResult<()> {
    check_fraction("--holdout", a.holdout, false)?;
    let search = a
        .range
        .parse::<EstimatorSearch>()
        .map_err(|e| CliError::config(format!("--range: {e}")))?;
    if search == EstimatorSearch::Off {
        return Err(CliError::config("--range off leaves nothing to search"));
    }
    let ds = a.data.load()?;
    let config = CascadeConfig {
        search,
        search_holdout: a.holdout,
        seed: a.seed,
        random_forests: usize::from(a.kind != KindChoice::CompletelyRandom),
        completely_random_forests: usize::from(a.kind != KindChoice::Random),
        ..CascadeConfig::default()
    };
    let (_, results) = resolve_tree_counts(&ds, &config)?;
    let mut out = String::from("kind,n_estimators,accuracy\n");
    for r in &results {
        for (n, acc) in &r.curve {
            let _ = writeln!(out, "{},{n},{acc:.6}", r.kind.name());
        }
    }
    emit(&out, a.output.as_deref())?;
    for r in &results {
        eprintln!("{}: best {} trees", r.kind.name(), r.best_n);
    }
    Ok(())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    #[serde(default = "default_runs")]
    runs: usize,
    #[serde(default)]
    base_seed: u64,
    #[serde(default = "default_test_fraction")]
    test_fraction: f64,
    #[serde(rename = "dataset", default)]
    datasets: Vec<toml::Table>,
    #[serde(rename = "variant", default)]
    variants: Vec<toml::Table>,
}

fn default_runs() -> usize {
    10
}

fn default_test_fraction() -> f64 {
    0.3
}

/// Splits the `name` key off a manifest table and parses the rest as `T`.
fn named<T: serde::de::DeserializeOwned>(mut table: toml::Table, what: &str) -> CliResult<(String, T)> {
    let name = match table.remove("name") {
        Some(toml::Value::String(s)) => s,
        _ => return Err(CliError::config(format!("every {what} needs a string `name`"))),
    };
    let rest = table
        .try_into()
        .map_err(|e| CliError::config(format!("{what} '{name}': {e}")))?;
    Ok((name, rest))
}

pub fn benchmark(a: &BenchmarkArgs) -> CliResult<()> {
    let text = std::fs::read_to_string(&a.manifest).map_err(|e| CliError::io(&a.manifest, e))?;
    let manifest: Manifest =
        toml::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", a.manifest.display())))?;
    let dir = a.manifest.parent().map(Path::to_path_buf).unwrap_or_default();
    let runs = a.runs.unwrap_or(manifest.runs);
    let base_seed = a.base_seed.unwrap_or(manifest.base_seed);
    let test_fraction = a.test_fraction.unwrap_or(manifest.test_fraction);
    check_fraction("test_fraction", test_fraction, false)?;

    let mut variants = Vec::new();
    let mut snapshots = Vec::new();
    for t in manifest.variants {
        let (name, settings): (String, Settings) = named(t, "variant")?;
        if !a.variants.is_empty() && !a.variants.contains(&name) {
            continue;
        }
        let config = settings.to_config()?;
        snapshots.push(Settings::snapshot(&config));
        variants.push(Variant::new(name, config));
    }
    let mut datasets = Vec::new();
    for t in manifest.datasets {
        let (name, spec): (String, DataSpec) = named(t, "dataset")?;
        if a.datasets.is_empty() || a.datasets.contains(&name) {
            datasets.push((name, spec.relative_to(&dir)));
        }
    }
    if variants.is_empty() || datasets.is_empty() {
        return Err(CliError::config("the manifest selects no datasets or no variants"));
    }

    let mut results = Vec::new();
    let mut reports = Vec::new();
    for (name, spec) in &datasets {
        let ds = match spec.load() {
            Ok(ds) => ds,
            Err(e) => {
                log::error!("{name}: {e}");
                results.push(DatasetResult {
                    dataset: name.clone(),
                    variants: variants
                        .iter()
                        .map(|v| (v.name.clone(), Err(daforest::Error::InvalidData(e.to_string()))))
                        .collect(),
                });
                continue;
            }
        };
        let r = benchmark_dataset(name, &ds, &variants, test_fraction, base_seed, runs);
        for ((vname, cell), snap) in r.variants.iter().zip(&snapshots) {
            match cell {
                Ok(s) => {
                    println!("{name:<16} {vname:<16} {:.4} +- {:.4}", s.mean, s.std);
                    reports.push(EvaluationReport::new(name, vname, snap.clone(), test_fraction, s));
                }
                Err(e) => println!("{name:<16} {vname:<16} failed: {e}"),
            }
        }
        results.push(r);
    }

    let summary = summary_csv(&results);
    let matrix = matrix_csv(&results);
    match &a.out_dir {
        Some(d) => {
            std::fs::create_dir_all(d).map_err(|e| CliError::io(d, e))?;
            write_text(&summary, &d.join("summary.csv"))?;
            if let Some(m) = &matrix {
                write_text(m, &d.join("accuracy_matrix.csv"))?;
            }
            write_json(&reports, &d.join("runs.json"))?;
        }
        None => print!("\n{summary}"),
    }
    let failed = results
        .iter()
        .flat_map(|d| d.variants.iter())
        .filter(|(_, r)| r.is_err())
        .count();
    if failed > 0 {
        return Err(CliError::new(
            ErrorClass::Data,
            format!("{failed} benchmark cell(s) failed; the others completed"),
        ));
    }
    Ok(())
}

/// Mean accuracy per dataset (rows) and variant (columns), for `stats`.
/// Datasets with a failed variant are left out.
fn matrix_csv(results: &[DatasetResult]) -> Option<String> {
    let complete: Vec<&DatasetResult> = results
        .iter()
        .filter(|d| d.variants.iter().all(|(_, r)| r.is_ok()))
        .collect();
    let first = complete.first()?;
    let mut out = String::from("Dataset");
    for (name, _) in &first.variants {
        let _ = write!(out, ",{name}");
    }
    out.push('\n');
    for d in complete {
        out.push_str(&d.dataset);
        for s in d.variants.iter().filter_map(|(_, r)| r.as_ref().ok()) {
            let _ = write!(out, ",{:.6}", s.mean);
        }
        out.push('\n');
    }
    Some(out)
}

pub fn stats(a: &StatsArgs) -> CliResult<()> {
    if !(a.alpha > 0.0 && a.alpha < 1.0) {
        return Err(CliError::config(format!("--alpha must be in (0, 1), got {}", a.alpha)));
    }
    let zero_policy: ZeroPolicy = a
        .zero_policy
        .parse()
        .map_err(|e| CliError::config(format!("--zero-policy: {e}")))?;
    let m = AccuracyMatrix::load(&a.input)?;
    let control = match &a.control {
        Some(name) => m
            .column(name)
            .ok_or_else(|| CliError::config(format!("no classifier column '{name}'")))?,
        None => 0,
    };
    let opts = WilcoxonOptions {
        zero_policy,
        continuity: a.continuity,
        exact: a.exact,
    };
    let report = analyze(&m, control, a.alpha, opts)?;
    if let Some(p) = &a.csv {
        write_text(&report.to_csv(), p)?;
    }
    print!("{report}");
    Ok(())
}
