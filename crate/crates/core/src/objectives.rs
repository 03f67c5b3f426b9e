//! Classification, dictionary, mimicking and distillation losses and their
//! weighted sum.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::classifier::Dan;
use crate::error::{Error, Result};
use crate::exec::ExecMode;
use crate::graph::{Gradients, Graph, NodeId};
use crate::model::{Model, WordBatch, WordInputs};
use crate::tensor::Tensor;
use crate::text::{LabeledExample, ParallelPair};

/// Weights of the auxiliary terms; classification always has weight 1.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub dictionary: f64,
    pub mimick: f64,
    pub distill: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            dictionary: 1.0,
            mimick: 0.001,
            distill: 1.0,
        }
    }
}

impl LossWeights {
    pub const NONE: LossWeights = LossWeights {
        dictionary: 0.0,
        mimick: 0.0,
        distill: 0.0,
    };

    pub fn validate(&self) -> Result<()> {
        for (name, w) in [("lambda_d", self.dictionary), ("lambda_e", self.mimick), ("lambda_p", self.distill)] {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::Config(format!("{name} must be a nonnegative number, got {w}")));
            }
        }
        Ok(())
    }
}

/// Mean negative log-likelihood of the gold labels.
pub fn loss_classification<R: Rng + ?Sized>(
    g: &mut Graph,
    dan: &Dan,
    words: &WordInputs,
    batch: &[&LabeledExample],
    mut rng: Option<&mut R>,
) -> Result<NodeId> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch("classification"));
    }
    let mut terms = Vec::with_capacity(batch.len());
    for ex in batch {
        let tokens = words.tokens(&ex.document)?;
        let logits = dan.forward(g, &tokens, rng.as_deref_mut())?;
        terms.push((g.softmax_nll(logits, ex.label)?, 1.0 / batch.len() as f64));
    }
    g.weighted_sum(&terms)
}

/// Mean squared distance between the embeddings of translation pairs.
pub fn loss_dict(g: &mut Graph, words: &WordInputs, pairs: &[&(String, String)]) -> Result<NodeId> {
    if pairs.is_empty() {
        return Err(Error::EmptyBatch("dictionary"));
    }
    let mut terms = Vec::with_capacity(pairs.len());
    for (s, t) in pairs {
        let d = g.squared_distance(words.get(s)?, words.get(t)?)?;
        terms.push((d, 1.0 / pairs.len() as f64));
    }
    g.weighted_sum(&terms)
}

/// Mean squared distance between embedder outputs and fixed target rows.
pub fn loss_mimick(g: &mut Graph, words: &WordInputs, rows: &[(&str, &[f64])]) -> Result<NodeId> {
    if rows.is_empty() {
        return Err(Error::EmptyBatch("mimick"));
    }
    let mut terms = Vec::with_capacity(rows.len());
    for (w, target) in rows {
        let e = words.get(w)?;
        let dim = g.value(e).len();
        if target.len() != dim {
            return Err(Error::Dimension {
                what: "pretrained embedding table".into(),
                expected: dim,
                found: target.len(),
            });
        }
        let t = g.input(Tensor::vector(target.to_vec()));
        let d = g.squared_distance(e, t)?;
        terms.push((d, 1.0 / rows.len() as f64));
    }
    g.weighted_sum(&terms)
}

/// Mean `KL(p_ref(·|x_h) ‖ p(·|x_s))` over parallel pairs; `refs[i]` belongs
/// to `pairs[i]`.
pub fn loss_distill<R: Rng + ?Sized>(
    g: &mut Graph,
    dan: &Dan,
    words: &WordInputs,
    pairs: &[&ParallelPair],
    refs: &[&[f64]],
    mut rng: Option<&mut R>,
) -> Result<NodeId> {
    if pairs.is_empty() {
        return Err(Error::EmptyBatch("distillation"));
    }
    let mut terms = Vec::with_capacity(pairs.len());
    for (i, pair) in pairs.iter().enumerate() {
        let reference = refs.get(i).ok_or(Error::MissingReference(i))?;
        let tokens = words.tokens(&pair.source)?;
        let logits = dan.forward(g, &tokens, rng.as_deref_mut())?;
        terms.push((g.kl_divergence(reference, logits)?, 1.0 / pairs.len() as f64));
    }
    g.weighted_sum(&terms)
}

/// Examples drawn for one optimizer step.
#[derive(Clone, Debug, Default)]
pub struct TaskBatches<'a> {
    pub classification: Vec<&'a LabeledExample>,
    pub dictionary: Option<Vec<&'a (String, String)>>,
    pub mimick: Option<Vec<(&'a str, &'a [f64])>>,
    pub distill: Option<(Vec<&'a ParallelPair>, Vec<&'a [f64]>)>,
}

impl TaskBatches<'_> {
    fn words(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for ex in &self.classification {
            out.extend(ex.document.words().iter().map(String::as_str));
        }
        for (s, t) in self.dictionary.iter().flatten() {
            out.push(s);
            out.push(t);
        }
        for (w, _) in self.mimick.iter().flatten() {
            out.push(w);
        }
        for p in self.distill.iter().flat_map(|(p, _)| p) {
            out.extend(p.source.words().iter().map(String::as_str));
        }
        out
    }
}

/// Per-term values of one evaluation. Inactive terms are 0.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub classification: f64,
    pub dictionary: f64,
    pub mimick: f64,
    pub distill: f64,
    pub total: f64,
}

/// `L = Ls + λd Ld + λe Le + λp Lp` and its gradient.
///
/// A term is built only when its weight is positive; a positive weight
/// without a batch is an error. Dropout masks, when `rng` is given, are drawn
/// for the classification documents first and the distillation documents
/// second.
pub fn loss_total<R: Rng + ?Sized>(
    model: &Model,
    batches: &TaskBatches,
    weights: &LossWeights,
    rng: Option<&mut R>,
    exec: ExecMode,
) -> Result<(LossBreakdown, Gradients)> {
    if batches.classification.is_empty() {
        return Err(Error::EmptyBatch("classification"));
    }
    evaluate(model, batches, weights, rng, exec)
}

/// Like [`loss_total`] but the classification term is optional, which allows
/// fitting the embedder on the auxiliary objectives alone.
pub fn evaluate<R: Rng + ?Sized>(
    model: &Model,
    batches: &TaskBatches,
    weights: &LossWeights,
    mut rng: Option<&mut R>,
    exec: ExecMode,
) -> Result<(LossBreakdown, Gradients)> {
    weights.validate()?;
    let missing = |what: &str, lambda: &str| Error::Config(format!("{lambda} > 0 but no {what} batch was supplied"));
    let dictionary = match (&batches.dictionary, weights.dictionary > 0.0) {
        (Some(b), true) => Some(b),
        (None, true) => return Err(missing("dictionary", "lambda_d")),
        _ => None,
    };
    let mimick = match (&batches.mimick, weights.mimick > 0.0) {
        (Some(b), true) => Some(b),
        (None, true) => return Err(missing("mimick", "lambda_e")),
        _ => None,
    };
    let distill = match (&batches.distill, weights.distill > 0.0) {
        (Some(b), true) => Some(b),
        (None, true) => return Err(missing("distillation", "lambda_p")),
        _ => None,
    };

    let active = TaskBatches {
        classification: batches.classification.clone(),
        dictionary: dictionary.cloned(),
        mimick: mimick.cloned(),
        distill: distill.cloned(),
    };
    let word_batch = WordBatch::embed(model, active.words(), exec)?;
    let mut g = Graph::new(&model.params);
    let words = word_batch.attach(&mut g);

    let mut out = LossBreakdown::default();
    let mut terms = Vec::new();
    if !active.classification.is_empty() {
        let n = loss_classification(&mut g, &model.classifier, &words, &active.classification, rng.as_deref_mut())?;
        out.classification = g.value(n).item();
        terms.push((n, 1.0));
    }
    if let Some(pairs) = &active.dictionary {
        let n = loss_dict(&mut g, &words, pairs)?;
        out.dictionary = g.value(n).item();
        terms.push((n, weights.dictionary));
    }
    if let Some(rows) = &active.mimick {
        let n = loss_mimick(&mut g, &words, rows)?;
        out.mimick = g.value(n).item();
        terms.push((n, weights.mimick));
    }
    if let Some((pairs, refs)) = &active.distill {
        let n = loss_distill(&mut g, &model.classifier, &words, pairs, refs, rng)?;
        out.distill = g.value(n).item();
        terms.push((n, weights.distill));
    }
    if terms.is_empty() {
        return Err(Error::EmptyBatch("any task"));
    }
    let total = g.weighted_sum(&terms)?;
    out.total = g.value(total).item();

    let top = g.backward(total)?;
    let mut grads = top.params.clone();
    grads.merge(&word_batch.backprop(&words, &top)?);
    Ok((out, grads))
}
