//! Evaluation metrics (macro F1, RMSE, WER) and split-by-split experiment
//! report tables.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pause::PauseClass;

/// Counts indexed `[true][predicted]` over a fixed class list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix<L> {
    pub classes: Vec<L>,
    pub counts: Vec<Vec<usize>>,
}

impl<L: PartialEq + Clone + std::fmt::Debug> ConfusionMatrix<L> {
    pub fn compute(y_true: &[L], y_pred: &[L], classes: &[L]) -> Result<Self> {
        if y_true.len() != y_pred.len() {
            return Err(Error::dim(y_true.len(), y_pred.len(), "predictions vs truth"));
        }
        let index = |l: &L| {
            classes
                .iter()
                .position(|c| c == l)
                .ok_or_else(|| Error::invalid(format!("label {l:?} not among the classes")))
        };
        let k = classes.len();
        let mut counts = vec![vec![0; k]; k];
        for (t, p) in y_true.iter().zip(y_pred) {
            counts[index(t)?][index(p)?] += 1;
        }
        Ok(ConfusionMatrix {
            classes: classes.to_vec(),
            counts,
        })
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    /// F1 of class `k`; 0 when the class is neither present nor predicted.
    pub fn f1(&self, k: usize) -> f64 {
        let tp = self.counts[k][k];
        let fp: usize = (0..self.classes.len()).map(|t| self.counts[t][k]).sum::<usize>() - tp;
        let fn_: usize = self.counts[k].iter().sum::<usize>() - tp;
        let denom = 2 * tp + fp + fn_;
        if denom == 0 {
            0.0
        } else {
            2.0 * tp as f64 / denom as f64
        }
    }

    pub fn macro_f1(&self) -> f64 {
        let k = self.classes.len();
        if k == 0 {
            return 0.0;
        }
        (0..k).map(|i| self.f1(i)).sum::<f64>() / k as f64
    }
}

/// Unweighted mean of per-class F1 over `classes`.
pub fn macro_f1<L: PartialEq + Clone + std::fmt::Debug>(y_true: &[L], y_pred: &[L], classes: &[L]) -> Result<f64> {
    Ok(ConfusionMatrix::compute(y_true, y_pred, classes)?.macro_f1())
}

pub fn rmse(y_true: &[f64], y_pred: &[f64]) -> Result<f64> {
    if y_true.len() != y_pred.len() {
        return Err(Error::dim(y_true.len(), y_pred.len(), "predictions vs truth"));
    }
    if y_true.is_empty() {
        return Err(Error::invalid("rmse of an empty sample"));
    }
    let mse = y_true
        .iter()
        .zip(y_pred)
        .map(|(t, p)| (t - p) * (t - p))
        .sum::<f64>()
        / y_true.len() as f64;
    Ok(mse.sqrt())
}

/// Word error rate as an exact ratio.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WerResult {
    pub edits: usize,
    pub ref_len: usize,
}

impl WerResult {
    pub fn rate(&self) -> f64 {
        self.edits as f64 / self.ref_len as f64
    }
}

/// Unit-cost Levenshtein distance over token sequences.
pub fn edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut curr = vec![0; b.len() + 1];
    for (i, ai) in a.iter().enumerate() {
        curr[0] = i + 1;
        for (j, bj) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ai != bj);
            curr[j + 1] = sub.min(prev[j + 1] + 1).min(curr[j] + 1);
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    prev[b.len()]
}

/// (substitutions + insertions + deletions) / |reference|.
pub fn wer<S: AsRef<str>>(reference: &[S], hypothesis: &[S]) -> Result<WerResult> {
    if reference.is_empty() {
        return Err(Error::invalid("WER needs a nonempty reference"));
    }
    let r: Vec<&str> = reference.iter().map(AsRef::as_ref).collect();
    let h: Vec<&str> = hypothesis.iter().map(AsRef::as_ref).collect();
    Ok(WerResult {
        edits: edit_distance(&r, &h),
        ref_len: r.len(),
    })
}

/// Lowercased whitespace tokens with pause symbols removed.
pub fn wer_tokens(text: &str) -> Vec<String> {
    text.split_whitespace()
        .filter(|t| PauseClass::from_symbol(t).is_none())
        .map(str::to_lowercase)
        .collect()
}

/// WER between two raw texts after [`wer_tokens`] normalization.
pub fn wer_text(reference: &str, hypothesis: &str) -> Result<WerResult> {
    wer(&wer_tokens(reference), &wer_tokens(hypothesis))
}

/// One method's per-split validation score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodScores {
    pub method: String,
    /// One entry per split, in split order.
    pub validation: Vec<f64>,
}

/// A multi-split ensemble row (e.g. majority voting across all splits).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleRow {
    pub label: String,
    pub method: String,
    /// Score on held-out labelled data, when available.
    pub test: Option<f64>,
}

/// Per-split validation scores for each method plus ensemble rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub metric: String,
    pub split_seeds: Vec<u64>,
    pub methods: Vec<MethodScores>,
    /// Per-split test score of the first method, when test labels exist.
    pub split_test: Vec<Option<f64>>,
    pub ensembles: Vec<EnsembleRow>,
}

impl ExperimentReport {
    pub fn new(metric: &str, split_seeds: Vec<u64>, methods: Vec<MethodScores>, split_test: Vec<Option<f64>>, ensembles: Vec<EnsembleRow>) -> Result<Self> {
        if split_seeds.is_empty() {
            return Err(Error::invalid("experiment report needs at least one split"));
        }
        for m in &methods {
            if m.validation.len() != split_seeds.len() {
                return Err(Error::invalid(format!(
                    "method {} has {} split scores for {} splits",
                    m.method,
                    m.validation.len(),
                    split_seeds.len()
                )));
            }
        }
        if !split_test.is_empty() && split_test.len() != split_seeds.len() {
            return Err(Error::invalid("split test scores do not match the split count"));
        }
        Ok(ExperimentReport {
            metric: metric.into(),
            split_seeds,
            methods,
            split_test,
            ensembles,
        })
    }

    pub fn validation_cells(&self) -> usize {
        self.methods.iter().map(|m| m.validation.len()).sum()
    }

    /// Fixed-width table: one row per split, then the ensemble rows.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = write!(out, "{:<34}", "Split");
        for m in &self.methods {
            let _ = write!(out, " {:>14}", format!("val {}", m.method));
        }
        let _ = writeln!(out, " {:>10}", "test");
        for (s, seed) in self.split_seeds.iter().enumerate() {
            let _ = write!(out, "{:<34}", format!("Split {} (seed {seed})", s + 1));
            for m in &self.methods {
                let _ = write!(out, " {:>14.4}", m.validation[s]);
            }
            match self.split_test.get(s).copied().flatten() {
                Some(t) => {
                    let _ = writeln!(out, " {t:>10.4}");
                }
                None => {
                    let _ = writeln!(out, " {:>10}", "-");
                }
            }
        }
        for e in &self.ensembles {
            let _ = write!(out, "{:<34}", format!("{} [{}]", e.label, e.method));
            for _ in &self.methods {
                let _ = write!(out, " {:>14}", "");
            }
            match e.test {
                Some(t) => {
                    let _ = writeln!(out, " {t:>10.4}");
                }
                None => {
                    let _ = writeln!(out, " {:>10}", "-");
                }
            }
        }
        let _ = writeln!(out, "metric: {}", self.metric);
        out
    }

    /// `row,method,partition,value` records.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("row,method,partition,value\n");
        for m in &self.methods {
            for (s, v) in m.validation.iter().enumerate() {
                let _ = writeln!(out, "split{},{},validation,{v}", s + 1, m.method);
            }
        }
        for (s, t) in self.split_test.iter().enumerate() {
            if let (Some(t), Some(m)) = (t, self.methods.first()) {
                let _ = writeln!(out, "split{},{},test,{t}", s + 1, m.method);
            }
        }
        for e in &self.ensembles {
            let value = e.test.map(|t| t.to_string()).unwrap_or_default();
            let _ = writeln!(out, "{},{},test,{value}", e.label, e.method);
        }
        out
    }
}
