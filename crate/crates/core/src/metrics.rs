//! Confusion matrices and the per-class / aggregate classification metrics.
//!
//! Every rate is kept as an exact rational so results can be compared
//! without floating-point slack; [`Rate::value`] gives the `f64` view.

use std::fmt::Write as _;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};

use crate::{Error, Result};

/// k×k counts; rows are actual classes, columns predicted classes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            counts: vec![0; k * k],
        }
    }

    pub fn from_counts(k: usize, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != k * k {
            return Err(Error::argument(format!(
                "{k}x{k} confusion matrix needs {} counts, got {}",
                k * k,
                counts.len()
            )));
        }
        Ok(Self { k, counts })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn get(&self, actual: usize, predicted: usize) -> u64 {
        self.counts[actual * self.k + predicted]
    }

    pub fn record(&mut self, actual: usize, predicted: usize) {
        self.counts[actual * self.k + predicted] += 1;
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.k).map(|c| self.get(c, c)).sum()
    }

    pub fn row_sum(&self, actual: usize) -> u64 {
        self.counts[actual * self.k..(actual + 1) * self.k]
            .iter()
            .sum()
    }

    pub fn col_sum(&self, predicted: usize) -> u64 {
        (0..self.k).map(|a| self.get(a, predicted)).sum()
    }
}

pub fn confusion_matrix(y_true: &[usize], y_pred: &[usize], k: usize) -> Result<ConfusionMatrix> {
    if y_true.len() != y_pred.len() {
        return Err(Error::argument(format!(
            "{} labels but {} predictions",
            y_true.len(),
            y_pred.len()
        )));
    }
    let mut cm = ConfusionMatrix::new(k);
    for (i, (&a, &p)) in y_true.iter().zip(y_pred).enumerate() {
        if a >= k || p >= k {
            return Err(Error::argument(format!(
                "sample {i}: label {a} / prediction {p} outside 0..{k}"
            )));
        }
        cm.record(a, p);
    }
    Ok(cm)
}

/// An exact rate. A zero denominator gives 0 with the degenerate flag set.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Rate {
    exact: BigRational,
    degenerate: bool,
}

impl Rate {
    pub fn ratio(num: u64, den: u64) -> Self {
        if den == 0 {
            return Self::degenerate();
        }
        Self::exact(BigRational::new(BigInt::from(num), BigInt::from(den)))
    }

    pub fn exact(value: BigRational) -> Self {
        Self {
            exact: value,
            degenerate: false,
        }
    }

    pub fn degenerate() -> Self {
        Self {
            exact: BigRational::zero(),
            degenerate: true,
        }
    }

    pub fn as_ratio(&self) -> &BigRational {
        &self.exact
    }

    pub fn value(&self) -> f64 {
        self.exact.to_f64().unwrap_or(0.0)
    }

    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }
}

/// One-vs-rest counts and rates of one class.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClassMetrics {
    pub class: usize,
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
    pub precision: Rate,
    pub sensitivity: Rate,
    pub specificity: Rate,
    pub f1: Rate,
    pub support: u64,
}

pub fn per_class_metrics(cm: &ConfusionMatrix) -> Vec<ClassMetrics> {
    let total = cm.total();
    (0..cm.k())
        .map(|c| {
            let tp = cm.get(c, c);
            let fp = cm.col_sum(c) - tp;
            let fn_ = cm.row_sum(c) - tp;
            let tn = total - tp - fp - fn_;
            let precision = Rate::ratio(tp, tp + fp);
            let sensitivity = Rate::ratio(tp, tp + fn_);
            let (p, r) = (precision.as_ratio(), sensitivity.as_ratio());
            let f1 = if (p + r).is_zero() {
                Rate::degenerate()
            } else {
                let two = BigRational::from_integer(BigInt::from(2));
                Rate::exact(two * p * r / (p + r))
            };
            ClassMetrics {
                class: c,
                tp,
                fp,
                fn_,
                tn,
                precision,
                sensitivity,
                specificity: Rate::ratio(tn, tn + fp),
                f1,
                support: tp + fn_,
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Averages {
    pub precision: Rate,
    pub sensitivity: Rate,
    pub specificity: Rate,
    pub f1: Rate,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Aggregate {
    pub accuracy: Rate,
    pub macro_avg: Averages,
    pub weighted: Averages,
    pub total: u64,
}

fn average(per_class: &[ClassMetrics], weights: Option<u64>) -> Averages {
    let mean = |pick: fn(&ClassMetrics) -> &Rate| -> Rate {
        match weights {
            None => {
                let sum: BigRational = per_class.iter().map(|m| pick(m).as_ratio().clone()).sum();
                Rate::exact(sum / BigInt::from(per_class.len()))
            }
            Some(0) => Rate::degenerate(),
            Some(total) => {
                let sum: BigRational = per_class
                    .iter()
                    .map(|m| pick(m).as_ratio() * BigInt::from(m.support))
                    .sum();
                Rate::exact(sum / BigInt::from(total))
            }
        }
    };
    Averages {
        precision: mean(|m| &m.precision),
        sensitivity: mean(|m| &m.sensitivity),
        specificity: mean(|m| &m.specificity),
        f1: mean(|m| &m.f1),
    }
}

/// Accuracy (trace / total), unweighted macro averages and support-weighted averages.
pub fn aggregate(per_class: &[ClassMetrics]) -> Result<Aggregate> {
    if per_class.is_empty() {
        return Err(Error::argument("no classes to aggregate"));
    }
    let total: u64 = per_class.iter().map(|m| m.support).sum();
    let correct: u64 = per_class.iter().map(|m| m.tp).sum();
    Ok(Aggregate {
        accuracy: Rate::ratio(correct, total),
        macro_avg: average(per_class, None),
        weighted: average(per_class, Some(total)),
        total,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub class_names: Vec<String>,
    pub confusion: ConfusionMatrix,
    pub per_class: Vec<ClassMetrics>,
    pub aggregate: Aggregate,
    pub mean_loss: Option<f64>,
}

impl MetricsReport {
    pub fn new(
        cm: ConfusionMatrix,
        class_names: &[String],
        mean_loss: Option<f64>,
    ) -> Result<Self> {
        if class_names.len() != cm.k() {
            return Err(Error::argument(format!(
                "{} class names for a {}-class matrix",
                class_names.len(),
                cm.k()
            )));
        }
        let per_class = per_class_metrics(&cm);
        let aggregate = aggregate(&per_class)?;
        Ok(Self {
            class_names: class_names.to_vec(),
            confusion: cm,
            per_class,
            aggregate,
            mean_loss,
        })
    }

    pub fn accuracy(&self) -> f64 {
        self.aggregate.accuracy.value()
    }
}

fn pct(r: &Rate) -> String {
    format!("{:.2}%", r.value() * 100.0)
}

fn class_title(name: &str, index: usize) -> String {
    let mut chars = name.chars();
    let capital: String = chars
        .next()
        .map(|c| c.to_uppercase().chain(chars).collect())
        .unwrap_or_default();
    format!("{capital} ({index})")
}

/// Fixed-width text table: one row per class, then accuracy, loss, macro and
/// weighted averages.
pub fn render_report(report: &MetricsReport) -> String {
    let mut out = String::new();
    let row = |out: &mut String, cells: [&str; 6]| {
        let _ = writeln!(
            out,
            "{:<18}{:>12}{:>13}{:>13}{:>11}{:>10}",
            cells[0], cells[1], cells[2], cells[3], cells[4], cells[5]
        );
    };
    row(
        &mut out,
        [
            "Class",
            "Precision",
            "Sensitivity",
            "Specificity",
            "F1-score",
            "Support",
        ],
    );
    for m in &report.per_class {
        let support = m.support.to_string();
        row(
            &mut out,
            [
                &class_title(&report.class_names[m.class], m.class),
                &pct(&m.precision),
                &pct(&m.sensitivity),
                &pct(&m.specificity),
                &pct(&m.f1),
                &support,
            ],
        );
    }
    let agg = &report.aggregate;
    let total = agg.total.to_string();
    row(
        &mut out,
        ["Accuracy", "", "", "", &pct(&agg.accuracy), &total],
    );
    if let Some(loss) = report.mean_loss {
        row(
            &mut out,
            ["Loss", "", "", "", &format!("{loss:.4}"), &total],
        );
    }
    for (title, avg) in [
        ("Macro Average", &agg.macro_avg),
        ("Weighted Average", &agg.weighted),
    ] {
        row(
            &mut out,
            [
                title,
                &pct(&avg.precision),
                &pct(&avg.sensitivity),
                &pct(&avg.specificity),
                &pct(&avg.f1),
                &total,
            ],
        );
    }
    out
}

/// CSV with header `class,precision,sensitivity,specificity,f1,support`,
/// rates as fractions.
pub fn report_csv(report: &MetricsReport) -> String {
    let mut out = String::from("class,precision,sensitivity,specificity,f1,support\n");
    let f = |r: &Rate| format!("{:.6}", r.value());
    for m in &report.per_class {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            report.class_names[m.class],
            f(&m.precision),
            f(&m.sensitivity),
            f(&m.specificity),
            f(&m.f1),
            m.support
        );
    }
    let agg = &report.aggregate;
    let _ = writeln!(out, "accuracy,,,,{},{}", f(&agg.accuracy), agg.total);
    if let Some(loss) = report.mean_loss {
        let _ = writeln!(out, "loss,,,,{loss:.6},{}", agg.total);
    }
    for (name, avg) in [
        ("macro_avg", &agg.macro_avg),
        ("weighted_avg", &agg.weighted),
    ] {
        let _ = writeln!(
            out,
            "{name},{},{},{},{},{}",
            f(&avg.precision),
            f(&avg.sensitivity),
            f(&avg.specificity),
            f(&avg.f1),
            agg.total
        );
    }
    out
}
