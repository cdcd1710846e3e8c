//! Confusion-matrix accounting and weighted/unweighted REC, PRE, F1.
//!
//! Classes with a zero denominator score 0. Weighted averages weight each
//! class by its gold support fraction, which makes weighted recall equal to
//! overall accuracy.

use std::fmt::Write as _;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: Vec<String>,
    /// Row-major, rows = gold, columns = predicted.
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: Vec<String>) -> Self {
        let c = classes.len();
        ConfusionMatrix {
            classes,
            counts: vec![0; c * c],
        }
    }

    pub fn from_counts(classes: Vec<String>, rows: &[Vec<u64>]) -> Result<Self> {
        let c = classes.len();
        if rows.len() != c || rows.iter().any(|r| r.len() != c) {
            return Err(Error::Dimension(format!(
                "confusion matrix must be {c}x{c}"
            )));
        }
        Ok(ConfusionMatrix {
            classes,
            counts: rows.iter().flatten().copied().collect(),
        })
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    fn class_index(&self, name: &str) -> Result<usize> {
        self.classes
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::UnknownLabel(name.to_string()))
    }

    pub fn accumulate(&mut self, gold: &str, predicted: &str) -> Result<()> {
        let g = self.class_index(gold)?;
        let p = self.class_index(predicted)?;
        self.accumulate_index(g, p)
    }

    pub fn accumulate_index(&mut self, gold: usize, predicted: usize) -> Result<()> {
        let c = self.num_classes();
        if gold >= c || predicted >= c {
            return Err(Error::ClassIndex {
                index: gold.max(predicted),
                classes: c,
            });
        }
        self.counts[gold * c + predicted] += 1;
        Ok(())
    }

    pub fn count(&self, gold: usize, predicted: usize) -> u64 {
        self.counts[gold * self.num_classes() + predicted]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn support(&self, class: usize) -> u64 {
        let c = self.num_classes();
        self.counts[class * c..(class + 1) * c].iter().sum()
    }

    pub fn predicted(&self, class: usize) -> u64 {
        (0..self.num_classes()).map(|g| self.count(g, class)).sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.num_classes()).map(|k| self.count(k, k)).sum()
    }

    /// Adds counts of a matrix over the same classes.
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if self.classes != other.classes {
            return Err(Error::Dimension("merging matrices over different classes".into()));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Scores {
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassScores {
    pub name: String,
    pub support: u64,
    pub scores: Scores,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub per_class: Vec<ClassScores>,
    pub unweighted: Scores,
    pub weighted: Scores,
    pub total: u64,
    pub accuracy: f64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

pub fn derive_metrics(cm: &ConfusionMatrix) -> Result<MetricsReport> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::EmptyEvaluation("confusion matrix is empty".into()));
    }
    let c = cm.num_classes();
    let per_class: Vec<ClassScores> = (0..c)
        .map(|k| {
            let tp = cm.count(k, k);
            let recall = ratio(tp, cm.support(k));
            let precision = ratio(tp, cm.predicted(k));
            ClassScores {
                name: cm.classes()[k].clone(),
                support: cm.support(k),
                scores: Scores {
                    recall,
                    precision,
                    f1: harmonic(precision, recall),
                },
            }
        })
        .collect();

    let mean = |f: fn(&Scores) -> f64| per_class.iter().map(|s| f(&s.scores)).sum::<f64>() / c as f64;
    let weighted_mean = |f: fn(&Scores) -> f64| {
        per_class
            .iter()
            .map(|s| s.support as f64 / total as f64 * f(&s.scores))
            .sum::<f64>()
    };
    let accuracy = cm.trace() as f64 / total as f64;
    Ok(MetricsReport {
        unweighted: Scores {
            recall: mean(|s| s.recall),
            precision: mean(|s| s.precision),
            f1: mean(|s| s.f1),
        },
        weighted: Scores {
            // sum_k (n_k / N) (tp_k / n_k) reduces to trace / N.
            recall: accuracy,
            precision: weighted_mean(|s| s.precision),
            f1: weighted_mean(|s| s.f1),
        },
        per_class,
        total,
        accuracy,
    })
}

impl MetricsReport {
    /// Long-format CSV: `average,metric,value`, four decimals.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("average,metric,value\n");
        let mut block = |name: &str, s: &Scores| {
            for (metric, v) in [("REC", s.recall), ("PRE", s.precision), ("F1", s.f1)] {
                let _ = writeln!(out, "{name},{metric},{v:.4}");
            }
        };
        for cls in &self.per_class {
            block(&format!("class:{}", cls.name), &cls.scores);
        }
        block("unweighted", &self.unweighted);
        block("weighted", &self.weighted);
        out
    }
}
