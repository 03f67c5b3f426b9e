//! Optimization loop, training-set assembly, auxiliary sampling and
//! distillation-document selection.
//!
//! Every random decision of a run comes from one ChaCha8 stream seeded with
//! `TrainConfig::seed`, consumed in this order: source sub-sampling,
//! dictionary sub-sampling, parameter initialization, then per epoch the
//! shuffle and per iteration the auxiliary batches (dictionary, mimick,
//! distillation) followed by dropout masks.

use std::fmt;
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::classifier::argmax;
use crate::error::{Error, Result};
use crate::exec::ExecMode;
use crate::graph::validate_distribution;
use crate::model::{Model, ModelDims, ModelResources, Variant};
use crate::objectives::{evaluate, loss_total, LossBreakdown, LossWeights, TaskBatches};
use crate::optim::{Adam, AdamConfig};
use crate::text::{
    build_char_vocab, sample_indices, BilingualDictionary, CharVocab, Document, EmbeddingTable, LabelSet,
    LabeledExample, ParallelPair, Tokenizer,
};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Schedule {
    /// All active tasks from the first epoch.
    #[default]
    Joint,
    /// Classification only for `pretrain_epochs`, then all tasks.
    PretrainFinetune,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub variant: Variant,
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub aux_batch_size: usize,
    pub weights: LossWeights,
    pub dims: ModelDims,
    pub adam: AdamConfig,
    pub schedule: Schedule,
    pub pretrain_epochs: usize,
    /// Adds the distillation term (the "p" models).
    pub distill: bool,
    /// Dictionary pairs sampled per run; `None` keeps the whole dictionary.
    pub dictionary_sample: Option<usize>,
    pub exec: ExecMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            variant: Variant::Src,
            seed: 1,
            epochs: 100,
            batch_size: 16,
            aux_batch_size: 16,
            weights: LossWeights::default(),
            dims: ModelDims::default(),
            adam: AdamConfig::default(),
            schedule: Schedule::Joint,
            pretrain_epochs: 0,
            distill: false,
            dictionary_sample: Some(100),
            exec: ExecMode::default(),
        }
    }
}

impl TrainConfig {
    /// Loss weights with every term the variant does not train zeroed.
    pub fn effective_weights(&self) -> LossWeights {
        LossWeights {
            dictionary: if self.variant.uses_dictionary() { self.weights.dictionary } else { 0.0 },
            mimick: if self.variant.uses_mimick() { self.weights.mimick } else { 0.0 },
            distill: if self.distill { self.weights.distill } else { 0.0 },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.aux_batch_size == 0 {
            return Err(Error::Config("batch sizes must be positive".into()));
        }
        self.weights.validate()?;
        self.dims.validate()
    }
}

/// One labeled source corpus and how many of its documents to use.
#[derive(Clone, Debug, PartialEq)]
pub struct SourceCorpus {
    pub examples: Vec<LabeledExample>,
    /// `None` uses every document.
    pub count: Option<usize>,
}

/// Parallel pairs with the frozen reference model's output on the
/// reference-language side of each.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DistillSet {
    pub pairs: Vec<ParallelPair>,
    pub references: Vec<Vec<f64>>,
}

impl DistillSet {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn validate(&self, labels: usize) -> Result<()> {
        if self.pairs.len() != self.references.len() {
            return Err(Error::MissingReference(self.references.len()));
        }
        for r in &self.references {
            validate_distribution(r)?;
            if r.len() != labels {
                return Err(Error::Dimension {
                    what: "reference distribution".into(),
                    expected: labels,
                    found: r.len(),
                });
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default)]
pub struct TrainData {
    pub labels: Option<LabelSet>,
    pub sources: Vec<SourceCorpus>,
    pub target_labeled: Option<Vec<LabeledExample>>,
    pub dictionary: Option<BilingualDictionary>,
    pub embeddings: Option<EmbeddingTable>,
    pub clwe: Option<Arc<EmbeddingTable>>,
    pub distill: Option<DistillSet>,
    /// Words whose characters join the shared inventory even though they are
    /// not trained on, typically the target language's alphabet.
    pub alphabet: Vec<String>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub losses: LossBreakdown,
}

impl EpochLog {
    pub const HEADER: &'static str = "epoch\tL_s\tL_d\tL_e\tL_p\ttotal";
}

impl fmt::Display for EpochLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let l = &self.losses;
        write!(
            f,
            "{}\t{}\t{}\t{}\t{}\t{}",
            self.epoch, l.classification, l.dictionary, l.mimick, l.distill, l.total
        )
    }
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub model: Model,
    pub log: Vec<EpochLog>,
    /// Dictionary pairs the run actually trained on.
    pub dictionary: Option<BilingualDictionary>,
}

/// Uniform without-replacement sample per source, concatenated in source
/// order; each sample keeps its corpus order.
pub fn assemble_training_set<R: Rng + ?Sized>(
    sources: &[SourceCorpus],
    rng: &mut R,
) -> Result<Vec<LabeledExample>> {
    let mut out = Vec::new();
    for src in sources {
        match src.count {
            None => out.extend(src.examples.iter().cloned()),
            Some(n) => {
                let mut idx = sample_indices(src.examples.len(), n, rng)?;
                idx.sort_unstable();
                out.extend(idx.into_iter().map(|i| src.examples[i].clone()));
            }
        }
    }
    Ok(out)
}

/// `size` items drawn uniformly with replacement.
pub fn sample_aux_batch<'a, T, R: Rng + ?Sized>(items: &'a [T], size: usize, rng: &mut R) -> Result<Vec<&'a T>> {
    if items.is_empty() {
        return Err(Error::EmptyBatch("auxiliary resource"));
    }
    Ok((0..size).map(|_| &items[rng.gen_range(0..items.len())]).collect())
}

pub struct DistillSelection {
    pub set: DistillSet,
    pub warnings: Vec<String>,
}

/// Picks up to `n / L` pairs per label of the reference model's argmax on the
/// reference side, so the selected outputs are roughly label-balanced, and
/// caches the reference distributions.
pub fn select_distill_docs<R: Rng + ?Sized>(
    reference: &Model,
    pool: &[ParallelPair],
    n: usize,
    rng: &mut R,
    exec: ExecMode,
) -> Result<DistillSelection> {
    if n > pool.len() {
        return Err(Error::Oversample {
            requested: n,
            available: pool.len(),
        });
    }
    let docs: Vec<&Document> = pool.iter().map(|p| &p.reference).collect();
    let predictions = reference.predict_all(&docs, exec)?;
    let labels = reference.labels.len();
    let mut bins: Vec<Vec<usize>> = vec![Vec::new(); labels];
    for (i, p) in predictions.iter().enumerate() {
        bins[argmax(&p.probabilities)].push(i);
    }
    let quota = n / labels;
    let mut set = DistillSet::default();
    let mut warnings = Vec::new();
    for (label, bin) in bins.iter().enumerate() {
        if bin.len() < quota {
            let msg = format!(
                "label {}: only {} of {} requested parallel documents available",
                reference.labels.name(label),
                bin.len(),
                quota
            );
            log::warn!("{msg}");
            warnings.push(msg);
        }
        let take = quota.min(bin.len());
        for j in sample_indices(bin.len(), take, rng)? {
            let i = bin[j];
            set.pairs.push(pool[i].clone());
            set.references.push(predictions[i].probabilities.clone());
        }
    }
    Ok(DistillSelection { set, warnings })
}

/// Checks that `data` carries every resource the configured tasks need.
pub fn check_resources(config: &TrainConfig, data: &TrainData) -> Result<()> {
    let mut problems = Vec::new();
    let w = config.effective_weights();
    if data.sources.iter().all(|s| s.examples.is_empty()) {
        problems.push("source labeled data is missing".to_string());
    }
    if w.dictionary > 0.0 && data.dictionary.as_ref().is_none_or(|d| d.is_empty()) {
        problems.push("dictionary is missing".to_string());
    }
    if w.mimick > 0.0 {
        match &data.embeddings {
            None => problems.push("pretrained source embeddings are missing".to_string()),
            Some(t) if t.is_empty() => problems.push("pretrained source embeddings are empty".to_string()),
            Some(t) if t.dim() != config.dims.word_dim => problems.push(format!(
                "pretrained embeddings have dimension {}, embedder outputs {}",
                t.dim(),
                config.dims.word_dim
            )),
            _ => {}
        }
    }
    if config.variant.uses_clwe() && data.clwe.is_none() {
        problems.push("pretrained CLWE table is missing".to_string());
    }
    if config.variant.uses_target_labeled() && data.target_labeled.as_ref().is_none_or(|t| t.is_empty()) {
        problems.push("target labeled data is missing".to_string());
    }
    if w.distill > 0.0 && data.distill.as_ref().is_none_or(|d| d.is_empty()) {
        problems.push("parallel data with reference outputs is missing".to_string());
    }
    if problems.is_empty() {
        Ok(())
    } else {
        Err(Error::Resources {
            variant: config.variant.to_string(),
            problems,
        })
    }
}

fn labels_of(data: &TrainData, examples: &[LabeledExample]) -> Result<LabelSet> {
    if let Some(l) = &data.labels {
        return Ok(l.clone());
    }
    let max = examples.iter().map(|e| e.label).max().unwrap_or(0);
    LabelSet::new((0..=max).map(|i| i.to_string()))
}

/// Trains a fresh model.
pub fn train(config: &TrainConfig, data: &TrainData) -> Result<TrainOutcome> {
    train_with(config, data, |_, _| {})
}

/// [`train`] with a callback after each epoch.
pub fn train_with<F>(config: &TrainConfig, data: &TrainData, mut on_epoch: F) -> Result<TrainOutcome>
where
    F: FnMut(&Model, &EpochLog),
{
    config.validate()?;
    check_resources(config, data)?;
    let weights = config.effective_weights();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let mut train_set = assemble_training_set(&data.sources, &mut rng)?;
    if config.variant.uses_target_labeled() {
        train_set.extend(data.target_labeled.iter().flatten().cloned());
    }
    let labels = labels_of(data, &train_set)?;
    if let Some(bad) = train_set.iter().find(|e| e.label >= labels.len()) {
        return Err(Error::LabelOutOfRange {
            index: bad.label,
            count: labels.len(),
        });
    }

    let dictionary = match (&data.dictionary, weights.dictionary > 0.0) {
        (Some(d), true) => Some(match config.dictionary_sample {
            Some(n) => d.sample(n, &mut rng)?,
            None => d.clone(),
        }),
        _ => None,
    };
    let mimick: Option<Vec<(String, Vec<f64>)>> = data
        .embeddings
        .as_ref()
        .filter(|_| weights.mimick > 0.0)
        .map(|t| t.rows().map(|(w, v)| (w.to_string(), v.to_vec())).collect());
    let distill = data.distill.as_ref().filter(|_| weights.distill > 0.0);
    if let Some(d) = distill {
        d.validate(labels.len())?;
    }

    let resources = model_resources(config.variant, &train_set, dictionary.as_ref(), data, distill)?;
    let mut model = Model::new(config.variant, labels, config.dims.clone(), resources, &mut rng)?;
    let mut adam = Adam::new(config.adam, &model.params);

    let dict_pairs: &[(String, String)] = dictionary.as_ref().map_or(&[], |d| &d.pairs);
    let mimick_rows: &[(String, Vec<f64>)] = mimick.as_deref().unwrap_or(&[]);
    let distill_idx: Vec<usize> = distill.map_or(Vec::new(), |d| (0..d.len()).collect());

    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut log = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let w = match config.schedule {
            Schedule::PretrainFinetune if epoch < config.pretrain_epochs => LossWeights::NONE,
            _ => weights,
        };
        order.shuffle(&mut rng);
        let mut sum = LossBreakdown::default();
        let mut steps = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let mut batches = TaskBatches {
                classification: chunk.iter().map(|&i| &train_set[i]).collect(),
                ..Default::default()
            };
            if w.dictionary > 0.0 {
                batches.dictionary = Some(sample_aux_batch(dict_pairs, config.aux_batch_size, &mut rng)?);
            }
            if w.mimick > 0.0 {
                let rows = sample_aux_batch(mimick_rows, config.aux_batch_size, &mut rng)?;
                batches.mimick = Some(rows.into_iter().map(|(w, v)| (w.as_str(), v.as_slice())).collect());
            }
            if let (true, Some(d)) = (w.distill > 0.0, distill) {
                let picked = sample_aux_batch(&distill_idx, config.aux_batch_size, &mut rng)?;
                batches.distill = Some((
                    picked.iter().map(|&&i| &d.pairs[i]).collect(),
                    picked.iter().map(|&&i| d.references[i].as_slice()).collect(),
                ));
            }
            let (losses, grads) = loss_total(&model, &batches, &w, Some(&mut rng), config.exec)?;
            adam.step(&mut model.params, &grads)?;
            add(&mut sum, &losses);
            steps += 1;
        }
        let entry = EpochLog {
            epoch,
            losses: scaled(&sum, 1.0 / steps.max(1) as f64),
        };
        log::debug!("{entry}");
        on_epoch(&model, &entry);
        log.push(entry);
    }
    Ok(TrainOutcome { model, log, dictionary })
}

fn model_resources(
    variant: Variant,
    train_set: &[LabeledExample],
    dictionary: Option<&BilingualDictionary>,
    data: &TrainData,
    distill: Option<&DistillSet>,
) -> Result<ModelResources> {
    let mut res = ModelResources {
        clwe: data.clwe.clone(),
        ..Default::default()
    };
    if variant.has_char_embedder() {
        let mut extra: Vec<Document> = Vec::new();
        if let Some(d) = distill {
            extra.extend(d.pairs.iter().map(|p| p.source.clone()));
        }
        if !data.alphabet.is_empty() {
            extra.push(Document::new(data.alphabet.clone())?);
        }
        let extra_refs: Vec<&Document> = extra.iter().collect();
        let dicts: Vec<&BilingualDictionary> = dictionary.into_iter().collect();
        let tables: Vec<&EmbeddingTable> = data.embeddings.iter().collect();
        res.vocab = Some(build_char_vocab(&[train_set], &dicts, &tables, &extra_refs));
    }
    if variant == Variant::Sup {
        let words: std::collections::BTreeSet<&String> =
            train_set.iter().flat_map(|e| e.document.words()).collect();
        res.lookup_words = Some(words.into_iter().cloned().collect());
    }
    Ok(res)
}

fn add(acc: &mut LossBreakdown, l: &LossBreakdown) {
    acc.classification += l.classification;
    acc.dictionary += l.dictionary;
    acc.mimick += l.mimick;
    acc.distill += l.distill;
    acc.total += l.total;
}

fn scaled(l: &LossBreakdown, f: f64) -> LossBreakdown {
    LossBreakdown {
        classification: l.classification * f,
        dictionary: l.dictionary * f,
        mimick: l.mimick * f,
        distill: l.distill * f,
        total: l.total * f,
    }
}

/// Trains only the embedder on the dictionary and/or mimicking objectives.
/// An epoch is `ceil(max resource size / aux_batch_size)` iterations.
#[allow(clippy::too_many_arguments)]
pub fn fit_embedder(
    model: &mut Model,
    dictionary: Option<&BilingualDictionary>,
    embeddings: Option<&EmbeddingTable>,
    weights: &LossWeights,
    epochs: usize,
    aux_batch_size: usize,
    adam: AdamConfig,
    seed: u64,
    exec: ExecMode,
) -> Result<Vec<EpochLog>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut opt = Adam::new(adam, &model.params);
    let pairs: &[(String, String)] = dictionary.map_or(&[], |d| &d.pairs);
    let rows: Vec<(&str, &[f64])> = embeddings.map_or(Vec::new(), |t| t.rows().collect());
    let longest = pairs.len().max(rows.len());
    if longest == 0 || aux_batch_size == 0 {
        return Err(Error::EmptyBatch("embedder fitting"));
    }
    let iterations = longest.div_ceil(aux_batch_size);
    let mut log = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        let mut sum = LossBreakdown::default();
        for _ in 0..iterations {
            let mut batches = TaskBatches::default();
            if weights.dictionary > 0.0 {
                batches.dictionary = Some(sample_aux_batch(pairs, aux_batch_size, &mut rng)?);
            }
            if weights.mimick > 0.0 {
                batches.mimick = Some(sample_aux_batch(&rows, aux_batch_size, &mut rng)?.into_iter().copied().collect());
            }
            let (l, grads) = evaluate(model, &batches, weights, Some(&mut rng), exec)?;
            opt.step(&mut model.params, &grads)?;
            add(&mut sum, &l);
        }
        log.push(EpochLog {
            epoch,
            losses: scaled(&sum, 1.0 / iterations as f64),
        });
    }
    Ok(log)
}

/// Character vocabulary of a trained model, if it has a character embedder.
pub fn char_vocab(model: &Model) -> Option<&CharVocab> {
    model.embedder.char_embedder().map(|c| &c.vocab)
}

/// Writes selected pairs with their reference distributions, one per line:
/// `source text<TAB>reference text<TAB>p_1 p_2 ... p_L`.
pub fn write_distill_cache(path: impl AsRef<Path>, set: &DistillSet) -> Result<()> {
    let path = path.as_ref();
    let mut s = String::new();
    for (pair, r) in set.pairs.iter().zip(&set.references) {
        let probs: Vec<String> = r.iter().map(|p| p.to_string()).collect();
        s.push_str(&format!("{}\t{}\t{}\n", pair.source.text(), pair.reference.text(), probs.join(" ")));
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

pub fn load_distill_cache(path: impl AsRef<Path>, tok: &Tokenizer) -> Result<DistillSet> {
    let path = path.as_ref();
    let content = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut set = DistillSet::default();
    for (i, line) in content.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::parse(path, i + 1, "expected source<TAB>reference<TAB>probabilities"));
        }
        let doc = |t: &str| tok.tokenize(t).map_err(|e| Error::parse(path, i + 1, e.to_string()));
        let probs = fields[2]
            .split_whitespace()
            .map(|p| p.parse::<f64>().map_err(|_| Error::parse(path, i + 1, format!("bad probability {p:?}"))))
            .collect::<Result<Vec<_>>>()?;
        validate_distribution(&probs).map_err(|e| Error::parse(path, i + 1, e.to_string()))?;
        set.pairs.push(ParallelPair {
            source: doc(fields[0])?,
            reference: doc(fields[1])?,
        });
        set.references.push(probs);
    }
    if let Some(len) = set.references.first().map(Vec::len) {
        if set.references.iter().any(|r| r.len() != len) {
            return Err(Error::parse(path, 0, "reference distributions differ in length"));
        }
    }
    Ok(set)
}
