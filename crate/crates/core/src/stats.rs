//! Rank-based comparison of classifiers over several datasets: the Friedman
//! test, the Iman-Davenport correction and Wilcoxon signed-rank post-hoc
//! comparisons against a control classifier.

use std::fmt;
use std::io::Read;
use std::path::Path;
use std::str::FromStr;

use ndarray::Array2;
use statrs::distribution::{ChiSquared, ContinuousCDF, FisherSnedecor, Normal};

use crate::error::{Error, Result};

/// Differences closer than this are treated as tied; exact zero checks use it
/// as well.
const TIE_EPS: f64 = 1e-12;

/// Accuracies of `c` classifiers (columns) on `n` datasets (rows).
#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyMatrix {
    values: Array2<f64>,
    datasets: Vec<String>,
    classifiers: Vec<String>,
}

impl AccuracyMatrix {
    pub fn new(values: Array2<f64>, datasets: Vec<String>, classifiers: Vec<String>) -> Result<Self> {
        let (n, c) = values.dim();
        if n < 2 || c < 2 {
            return Err(Error::InvalidData(format!(
                "need at least 2 datasets and 2 classifiers, got {n} x {c}"
            )));
        }
        if datasets.len() != n || classifiers.len() != c {
            return Err(Error::InvalidData("row or column labels do not match the matrix".into()));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidData(format!("non-finite accuracy {v}")));
        }
        Ok(Self {
            values,
            datasets,
            classifiers,
        })
    }

    /// Reads a table whose first column names the dataset and whose header
    /// names the classifiers. Cells ending in `%` are divided by 100.
    pub fn from_reader<R: Read>(reader: R, delimiter: u8) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .delimiter(delimiter)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let header = rdr.headers().map_err(|e| Error::Parse {
            row: 0,
            column: 0,
            message: e.to_string(),
        })?;
        let classifiers: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
        let mut datasets = Vec::new();
        let mut flat = Vec::new();
        for (r, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| Error::Parse {
                row: r + 1,
                column: 0,
                message: e.to_string(),
            })?;
            if rec.len() != classifiers.len() + 1 {
                return Err(Error::Parse {
                    row: r + 1,
                    column: rec.len(),
                    message: format!("expected {} cells", classifiers.len() + 1),
                });
            }
            datasets.push(rec[0].to_string());
            for (j, cell) in rec.iter().enumerate().skip(1) {
                flat.push(parse_accuracy(cell).ok_or_else(|| Error::Parse {
                    row: r + 1,
                    column: j,
                    message: format!("'{cell}' is not an accuracy"),
                })?);
            }
        }
        let values = Array2::from_shape_vec((datasets.len(), classifiers.len()), flat)
            .map_err(|e| Error::InvalidData(e.to_string()))?;
        Self::new(values, datasets, classifiers)
    }

    /// Loads a CSV (or, for `.tsv`/`.txt`, tab-separated) accuracy table.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let first = text.lines().next().unwrap_or("");
        let delimiter = if first.contains('\t') && !first.contains(',') {
            b'\t'
        } else {
            b','
        };
        Self::from_reader(text.as_bytes(), delimiter)
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn datasets(&self) -> &[String] {
        &self.datasets
    }

    pub fn classifiers(&self) -> &[String] {
        &self.classifiers
    }

    pub fn n_datasets(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_classifiers(&self) -> usize {
        self.values.ncols()
    }

    /// Index of the classifier called `name` (case-insensitive).
    pub fn column(&self, name: &str) -> Option<usize> {
        self.classifiers
            .iter()
            .position(|c| c.eq_ignore_ascii_case(name))
    }

    pub fn column_values(&self, j: usize) -> Vec<f64> {
        self.values.column(j).to_vec()
    }
}

fn parse_accuracy(cell: &str) -> Option<f64> {
    let cell = cell.trim();
    match cell.strip_suffix('%') {
        Some(p) => p.trim().parse::<f64>().ok().map(|v| v / 100.0),
        None => cell.parse().ok(),
    }
}

/// Ranks `1..=n` of `values` in increasing order with midranks for ties.
fn midranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] - values[order[i]] <= TIE_EPS {
            j += 1;
        }
        let mid = (i + j + 1) as f64 / 2.0;
        for &o in &order[i..j] {
            ranks[o] = mid;
        }
        i = j;
    }
    ranks
}

/// Ranks within one dataset: 1 for the highest accuracy, ties share the
/// average rank.
pub fn rank_row(row: &[f64]) -> Vec<f64> {
    let negated: Vec<f64> = row.iter().map(|v| -v).collect();
    midranks(&negated)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FriedmanResult {
    pub chi2: f64,
    pub p_value: f64,
    pub df: f64,
    pub mean_ranks: Vec<f64>,
}

/// `chi2 = 12n / (c(c+1)) * sum_j R_j^2 - 3n(c+1)` over mean ranks `R_j`,
/// compared against chi-squared with `c - 1` degrees of freedom.
pub fn friedman_test(m: &AccuracyMatrix) -> FriedmanResult {
    let (n, c) = m.values.dim();
    let mut mean_ranks = vec![0.0; c];
    for row in m.values.rows() {
        for (acc, r) in mean_ranks.iter_mut().zip(rank_row(&row.to_vec())) {
            *acc += r;
        }
    }
    mean_ranks.iter_mut().for_each(|r| *r /= n as f64);
    let (nf, cf) = (n as f64, c as f64);
    let sum_sq: f64 = mean_ranks.iter().map(|r| r * r).sum();
    let chi2 = (12.0 * nf / (cf * (cf + 1.0)) * sum_sq - 3.0 * nf * (cf + 1.0)).max(0.0);
    let df = cf - 1.0;
    let dist = ChiSquared::new(df).expect("c >= 2");
    FriedmanResult {
        chi2,
        p_value: dist.sf(chi2),
        df,
        mean_ranks,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImanDavenportResult {
    /// `+inf` when `chi2 >= n(c-1)`.
    pub f: f64,
    pub p_value: f64,
    pub df1: f64,
    pub df2: f64,
}

/// `F = (n-1) chi2 / (n(c-1) - chi2)` against `F(c-1, (c-1)(n-1))`.
pub fn iman_davenport(chi2: f64, n: usize, c: usize) -> ImanDavenportResult {
    let (nf, cf) = (n as f64, c as f64);
    let df1 = cf - 1.0;
    let df2 = (cf - 1.0) * (nf - 1.0);
    let denom = nf * (cf - 1.0) - chi2;
    if denom <= 0.0 {
        return ImanDavenportResult {
            f: f64::INFINITY,
            p_value: 0.0,
            df1,
            df2,
        };
    }
    let f = (nf - 1.0) * chi2 / denom;
    let p_value = if f <= 0.0 {
        1.0
    } else {
        FisherSnedecor::new(df1, df2)
            .map(|d| d.sf(f))
            .unwrap_or(f64::NAN)
    };
    ImanDavenportResult {
        f,
        p_value,
        df1,
        df2,
    }
}

/// Treatment of zero differences in the signed-rank test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ZeroPolicy {
    /// Discard zero differences before ranking.
    #[default]
    Drop,
    /// Rank zeros with the others, then discard their ranks and adjust the
    /// null mean and variance.
    Pratt,
    /// Rank zeros with the others and split their rank sum evenly between
    /// `W+` and `W-`.
    ZeroSplit,
}

impl ZeroPolicy {
    pub fn name(self) -> &'static str {
        match self {
            ZeroPolicy::Drop => "drop",
            ZeroPolicy::Pratt => "pratt",
            ZeroPolicy::ZeroSplit => "zsplit",
        }
    }
}

impl fmt::Display for ZeroPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ZeroPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "drop" | "wilcox" => Ok(ZeroPolicy::Drop),
            "pratt" => Ok(ZeroPolicy::Pratt),
            "zsplit" | "zero-split" | "split" => Ok(ZeroPolicy::ZeroSplit),
            other => Err(Error::InvalidArgument(format!("unknown zero policy '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct WilcoxonOptions {
    pub zero_policy: ZeroPolicy,
    /// Shift `|W - mu|` by 0.5 towards zero in the normal approximation.
    pub continuity: bool,
    /// Exact null distribution instead of the normal approximation. Only
    /// valid with [`ZeroPolicy::Drop`].
    pub exact: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WilcoxonResult {
    pub w_plus: f64,
    pub w_minus: f64,
    /// `min(W+, W-)`.
    pub statistic: f64,
    /// Number of pairs entering the ranks.
    pub n: usize,
    /// Normal score; `None` in exact mode.
    pub z: Option<f64>,
    pub p_value: f64,
}

/// Smallest number of non-zero differences accepted.
pub const WILCOXON_MIN_PAIRS: usize = 5;

/// Two-sided Wilcoxon signed-rank test on `a - b`.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64], opts: WilcoxonOptions) -> Result<WilcoxonResult> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let is_zero = |v: f64| v.abs() <= TIE_EPS;
    let n_zero = d.iter().filter(|v| is_zero(**v)).count();
    let n_nonzero = d.len() - n_zero;
    if n_nonzero == 0 {
        return Err(Error::InvalidData("all differences are zero".into()));
    }
    if n_nonzero < WILCOXON_MIN_PAIRS {
        return Err(Error::InvalidData(format!(
            "{n_nonzero} non-zero differences, need at least {WILCOXON_MIN_PAIRS}"
        )));
    }
    if opts.exact && opts.zero_policy != ZeroPolicy::Drop {
        return Err(Error::InvalidArgument(
            "the exact test supports only the drop zero policy".into(),
        ));
    }

    let ranked: Vec<f64> = match opts.zero_policy {
        ZeroPolicy::Drop => d.iter().copied().filter(|v| !is_zero(*v)).collect(),
        ZeroPolicy::Pratt | ZeroPolicy::ZeroSplit => d.clone(),
    };
    let abs: Vec<f64> = ranked.iter().map(|v| v.abs()).collect();
    let ranks = midranks(&abs);
    let (mut w_plus, mut w_minus, mut zero_ranks) = (0.0, 0.0, 0.0);
    for (v, r) in ranked.iter().zip(&ranks) {
        if is_zero(*v) {
            zero_ranks += r;
        } else if *v > 0.0 {
            w_plus += r;
        } else {
            w_minus += r;
        }
    }
    if opts.zero_policy == ZeroPolicy::ZeroSplit {
        w_plus += zero_ranks / 2.0;
        w_minus += zero_ranks / 2.0;
    }
    let statistic = w_plus.min(w_minus);
    let n = ranked.len();

    if opts.exact {
        let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
        let p_value = exact_two_sided(&doubled, (2.0 * statistic).round() as usize);
        return Ok(WilcoxonResult {
            w_plus,
            w_minus,
            statistic,
            n,
            z: None,
            p_value,
        });
    }

    let nf = n as f64;
    let (mut mu, mut var) = (nf * (nf + 1.0) / 4.0, nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0);
    if opts.zero_policy == ZeroPolicy::Pratt && n_zero > 0 {
        let z0 = n_zero as f64;
        mu -= z0 * (z0 + 1.0) / 4.0;
        var -= z0 * (z0 + 1.0) * (2.0 * z0 + 1.0) / 24.0;
    }
    var -= tie_correction(&abs) / 48.0;
    let mut num = statistic - mu;
    if opts.continuity {
        num -= 0.5 * num.signum();
    }
    let z = num / var.sqrt();
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    let p_value = (2.0 * normal.cdf(-z.abs())).min(1.0);
    Ok(WilcoxonResult {
        w_plus,
        w_minus,
        statistic,
        n,
        z: Some(z),
        p_value,
    })
}

/// `sum (t^3 - t)` over groups of tied values.
fn tie_correction(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut total = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i + 1;
        while j < sorted.len() && sorted[j] - sorted[i] <= TIE_EPS {
            j += 1;
        }
        let t = (j - i) as f64;
        total += t * t * t - t;
        i = j;
    }
    total
}

/// `P(W <= w) * 2` under the null where every rank independently counts
/// towards `W+` with probability 1/2. Ranks and `w` are doubled so midranks
/// stay integral.
fn exact_two_sided(doubled_ranks: &[usize], doubled_w: usize) -> f64 {
    let total: usize = doubled_ranks.iter().sum();
    let mut counts = vec![0f64; total + 1];
    counts[0] = 1.0;
    for &r in doubled_ranks {
        for s in (r..=total).rev() {
            counts[s] += counts[s - r];
        }
    }
    let all = 2f64.powi(doubled_ranks.len() as i32);
    let tail: f64 = counts[..=doubled_w.min(total)].iter().sum();
    (2.0 * tail / all).min(1.0)
}

/// Default significance level.
pub const ALPHA: f64 = 0.05;

pub fn hypothesis(p_value: f64, alpha: f64) -> &'static str {
    if p_value < alpha {
        "Rejected"
    } else {
        "Accepted"
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PostHoc {
    pub classifier: String,
    pub result: WilcoxonResult,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StatsReport {
    pub friedman: FriedmanResult,
    pub iman_davenport: ImanDavenportResult,
    pub control: String,
    pub post_hoc: Vec<PostHoc>,
    pub alpha: f64,
    pub options: WilcoxonOptions,
}

/// Friedman and Iman-Davenport over the whole matrix, then the control
/// column against every other column.
pub fn analyze(
    m: &AccuracyMatrix,
    control: usize,
    alpha: f64,
    opts: WilcoxonOptions,
) -> Result<StatsReport> {
    if control >= m.n_classifiers() {
        return Err(Error::InvalidArgument(format!("no classifier column {control}")));
    }
    let friedman = friedman_test(m);
    let id = iman_davenport(friedman.chi2, m.n_datasets(), m.n_classifiers());
    let base = m.column_values(control);
    let post_hoc = (0..m.n_classifiers())
        .filter(|&j| j != control)
        .map(|j| {
            wilcoxon_signed_rank(&base, &m.column_values(j), opts).map(|result| PostHoc {
                classifier: m.classifiers[j].clone(),
                result,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(StatsReport {
        friedman,
        iman_davenport: id,
        control: m.classifiers[control].clone(),
        post_hoc,
        alpha,
        options: opts,
    })
}

impl StatsReport {
    /// `section,name,statistic,p_value,hypothesis` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("section,name,statistic,p_value,hypothesis\n");
        let line = |out: &mut String, section: &str, name: &str, stat: f64, p: f64| {
            out.push_str(&format!(
                "{section},{name},{stat:.6},{p:.6e},{}\n",
                hypothesis(p, self.alpha)
            ));
        };
        line(&mut out, "omnibus", "Friedman", self.friedman.chi2, self.friedman.p_value);
        line(
            &mut out,
            "omnibus",
            "Iman-Davenport",
            self.iman_davenport.f,
            self.iman_davenport.p_value,
        );
        for ph in &self.post_hoc {
            line(&mut out, "wilcoxon", &ph.classifier, ph.result.statistic, ph.result.p_value);
        }
        out
    }
}

impl fmt::Display for StatsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Method           Statistic      p-Value     Hypothesis")?;
        for (name, stat, p) in [
            ("Friedman", self.friedman.chi2, self.friedman.p_value),
            ("Iman-Davenport", self.iman_davenport.f, self.iman_davenport.p_value),
        ] {
            writeln!(f, "{name:<16} {stat:<14.6} {p:<11.3e} {}", hypothesis(p, self.alpha))?;
        }
        writeln!(f)?;
        writeln!(
            f,
            "Wilcoxon signed-rank, control = {} (zeros: {}{}{})",
            self.control,
            self.options.zero_policy,
            if self.options.continuity { ", continuity" } else { "" },
            if self.options.exact { ", exact" } else { "" },
        )?;
        writeln!(f, "i  Algorithm            W        p-Value    Hypothesis")?;
        for (i, ph) in self.post_hoc.iter().enumerate() {
            writeln!(
                f,
                "{:<2} {:<20} {:<8.1} {:<10.6} {}",
                i + 1,
                ph.classifier,
                ph.result.statistic,
                ph.result.p_value,
                hypothesis(ph.result.p_value, self.alpha)
            )?;
        }
        Ok(())
    }
}
