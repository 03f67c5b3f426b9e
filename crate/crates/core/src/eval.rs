use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{map_collect, ExecMode};
use crate::graph::{log_softmax, softmax};
use crate::model::Model;
use crate::text::{Document, EmbeddingTable, LabelSet, LabeledExample};
use crate::trainer::DistillSet;

/// Accuracy with the per-label confusion counts behind it.
#[derive(Clone, Debug, PartialEq)]
pub struct AccuracyReport {
    pub correct: usize,
    pub total: usize,
    /// `confusion[gold][predicted]`.
    pub confusion: Vec<Vec<usize>>,
}

impl AccuracyReport {
    pub fn accuracy(&self) -> f64 {
        self.correct as f64 / self.total as f64
    }

    /// Tab-separated table with gold labels as rows.
    pub fn confusion_table(&self, labels: &LabelSet) -> String {
        let mut out = String::from("gold\\pred");
        for name in labels.names() {
            out.push('\t');
            out.push_str(name);
        }
        out.push('\n');
        for (i, row) in self.confusion.iter().enumerate() {
            out.push_str(labels.name(i));
            for c in row {
                out.push_str(&format!("\t{c}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Scores `predict` on every example. Predictions run through `exec`;
/// counts are aggregated in example order.
pub fn accuracy_with<F>(test: &[LabeledExample], labels: usize, exec: ExecMode, predict: F) -> Result<AccuracyReport>
where
    F: Fn(&Document) -> Result<usize> + Sync,
{
    if test.is_empty() {
        return Err(Error::EmptyInput("accuracy"));
    }
    let predicted = map_collect(exec, test, |e| predict(&e.document));
    let mut report = AccuracyReport {
        correct: 0,
        total: test.len(),
        confusion: vec![vec![0; labels]; labels],
    };
    for (e, p) in test.iter().zip(predicted) {
        let p = p?;
        if e.label >= labels || p >= labels {
            return Err(Error::LabelOutOfRange {
                index: e.label.max(p),
                count: labels,
            });
        }
        report.confusion[e.label][p] += 1;
        if p == e.label {
            report.correct += 1;
        }
    }
    Ok(report)
}

pub fn accuracy(model: &Model, test: &[LabeledExample], exec: ExecMode) -> Result<AccuracyReport> {
    accuracy_with(test, model.labels.len(), exec, |d| Ok(model.predict(d)?.label))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    #[default]
    Euclidean,
    Cosine,
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "euclidean" => Ok(Metric::Euclidean),
            "cosine" => Ok(Metric::Cosine),
            _ => Err(Error::Config(format!("unknown metric {s:?}"))),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::Euclidean => "euclidean",
            Metric::Cosine => "cosine",
        })
    }
}

impl Metric {
    /// Smaller is closer.
    pub fn distance(self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Metric::Euclidean => a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum(),
            Metric::Cosine => {
                let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
                let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
                if na == 0.0 || nb == 0.0 {
                    1.0
                } else {
                    1.0 - dot / (na * nb)
                }
            }
        }
    }
}

/// Index of the candidate row closest to `query`; ties go to the
/// lexicographically smallest word.
pub fn nearest(query: &[f64], candidates: &EmbeddingTable, metric: Metric) -> Result<usize> {
    if candidates.is_empty() {
        return Err(Error::EmptyInput("nearest-neighbor search"));
    }
    let words = candidates.words();
    let mut best = 0;
    let mut best_d = metric.distance(query, candidates.vector(0));
    for i in 1..candidates.len() {
        let d = metric.distance(query, candidates.vector(i));
        match d.total_cmp(&best_d) {
            Ordering::Less => (best, best_d) = (i, d),
            Ordering::Equal if words[i] < words[best] => best = i,
            _ => {}
        }
    }
    Ok(best)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TranslationReport {
    pub hits: usize,
    pub total: usize,
}

impl TranslationReport {
    pub fn precision_at_1(&self) -> f64 {
        self.hits as f64 / self.total as f64
    }
}

/// Nearest-neighbor word translation. `sources` holds the vectors of the
/// gold source words, `candidates` the target-side search space.
pub fn word_translate(
    sources: &EmbeddingTable,
    candidates: &EmbeddingTable,
    gold: &[(String, String)],
    metric: Metric,
    exec: ExecMode,
) -> Result<TranslationReport> {
    if candidates.is_empty() {
        return Err(Error::EmptyInput("word translation candidates"));
    }
    if gold.is_empty() {
        return Err(Error::EmptyInput("word translation dictionary"));
    }
    if sources.dim() != candidates.dim() {
        return Err(Error::Dimension {
            what: "source word vectors".into(),
            expected: candidates.dim(),
            found: sources.dim(),
        });
    }
    let hits = map_collect(exec, gold, |(s, t)| -> Result<bool> {
        let v = sources
            .get(s)
            .ok_or_else(|| Error::Config(format!("no vector for source word {s:?}")))?;
        Ok(candidates.words()[nearest(v, candidates, metric)?] == *t)
    });
    let mut report = TranslationReport {
        hits: 0,
        total: gold.len(),
    };
    for h in hits {
        report.hits += h? as usize;
    }
    Ok(report)
}

/// Mean KL divergence between cached reference outputs and the model's
/// inference-mode predictions on the paired documents.
pub fn distill_divergence(model: &Model, set: &DistillSet, exec: ExecMode) -> Result<f64> {
    if set.is_empty() {
        return Err(Error::EmptyInput("distillation divergence"));
    }
    set.validate(model.labels.len())?;
    let idx: Vec<usize> = (0..set.len()).collect();
    let parts = map_collect(exec, &idx, |&i| -> Result<f64> {
        let logits = model.logits(&set.pairs[i].source)?;
        Ok(kl(&set.references[i], &logits))
    });
    let mut sum = 0.0;
    for p in parts {
        sum += p?;
    }
    Ok(sum / set.len() as f64)
}

fn kl(target: &[f64], logits: &[f64]) -> f64 {
    let logp = log_softmax(logits);
    target
        .iter()
        .zip(&logp)
        .filter(|(p, _)| **p > 0.0)
        .map(|(p, lq)| p * (p.ln() - lq))
        .sum()
}

/// Histogram of argmax labels over a set of distributions.
pub fn argmax_histogram(distributions: &[Vec<f64>], labels: usize) -> Vec<usize> {
    let mut h = vec![0; labels];
    for d in distributions {
        h[crate::classifier::argmax(d)] += 1;
    }
    h
}

/// Probabilities for a batch of raw logits; exposed for reporting.
pub fn probabilities(logits: &[f64]) -> Vec<f64> {
    softmax(logits)
}

/// One line-oriented evaluation record.
#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub metric: String,
    pub value: f64,
    pub seed: Option<u64>,
    pub variant: String,
}

impl fmt::Display for Record {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let seed = self.seed.map_or("-".to_string(), |s| s.to_string());
        write!(f, "{}\t{}\t{}\t{}", self.metric, self.value, seed, self.variant)
    }
}
