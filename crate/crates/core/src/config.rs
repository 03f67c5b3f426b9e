//! Run configuration files and the resource matrix.
//!
//! A run is described by a flat TOML table. Unknown keys are rejected, every
//! hyperparameter has a default, and the set of data files must match what
//! the chosen variant trains with: a missing resource and an unused one are
//! both errors, and every problem is reported at once.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::ExecMode;
use crate::model::{ModelDims, Variant};
use crate::objectives::LossWeights;
use crate::optim::AdamConfig;
use crate::store::load_model;
use crate::text::{
    load_corpus, load_dictionary, load_embeddings, load_parallel, LabelSet, LabeledExample, Tokenizer,
};
use crate::trainer::{load_distill_cache, select_distill_docs, Schedule, SourceCorpus, TrainConfig, TrainData};

/// Data a variant can train with.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Resource {
    SourceLabeled,
    Dictionary,
    Embeddings,
    Clwe,
    TargetLabeled,
    Parallel,
}

impl Resource {
    pub const ALL: [Resource; 6] = [
        Resource::SourceLabeled,
        Resource::Dictionary,
        Resource::Embeddings,
        Resource::Clwe,
        Resource::TargetLabeled,
        Resource::Parallel,
    ];

    /// The configuration key that provides the resource.
    pub fn key(self) -> &'static str {
        match self {
            Resource::SourceLabeled => "sources",
            Resource::Dictionary => "dictionary",
            Resource::Embeddings => "embeddings",
            Resource::Clwe => "clwe",
            Resource::TargetLabeled => "target_labeled",
            Resource::Parallel => "parallel",
        }
    }
}

impl fmt::Display for Resource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Resource::SourceLabeled => "source labeled data",
            Resource::Dictionary => "dictionary",
            Resource::Embeddings => "pretrained source embeddings",
            Resource::Clwe => "pretrained CLWE",
            Resource::TargetLabeled => "target labeled data",
            Resource::Parallel => "parallel text",
        })
    }
}

/// Resources a variant trains with; distillation adds parallel text.
pub fn required_resources(variant: Variant, distill: bool) -> BTreeSet<Resource> {
    let mut set = BTreeSet::from([Resource::SourceLabeled]);
    if variant.uses_dictionary() {
        set.insert(Resource::Dictionary);
    }
    if variant.uses_mimick() {
        set.insert(Resource::Embeddings);
    }
    if variant.uses_clwe() {
        set.insert(Resource::Clwe);
    }
    if variant.uses_target_labeled() {
        set.insert(Resource::TargetLabeled);
    }
    if distill {
        set.insert(Resource::Parallel);
    }
    set
}

/// Problems with a set of present resources, empty when it matches exactly.
pub fn resource_problems(variant: Variant, distill: bool, present: &BTreeSet<Resource>) -> Vec<String> {
    let required = required_resources(variant, distill);
    let mut problems = Vec::new();
    for r in required.difference(present) {
        problems.push(format!("{r} is missing (set `{}`)", r.key()));
    }
    for r in present.difference(&required) {
        let reason = if *r == Resource::Parallel { " without distill = true" } else { "" };
        problems.push(format!("{r} is not used by {variant}{reason} (remove `{}`)", r.key()));
    }
    problems
}

/// One training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub variant: Variant,
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub aux_batch_size: usize,
    pub lambda_d: f64,
    pub lambda_e: f64,
    pub lambda_p: f64,
    pub distill: bool,
    pub char_dim: usize,
    pub lstm_hidden: usize,
    pub word_dim: usize,
    pub dan_layers: usize,
    pub dan_hidden: usize,
    pub dropout: f64,
    pub dropout_input: bool,
    pub lowercase: bool,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub schedule: Schedule,
    pub pretrain_epochs: usize,
    pub exec: ExecMode,

    /// Labeled source corpora.
    pub sources: Vec<PathBuf>,
    /// Documents sampled from each source; empty means all of them.
    pub source_counts: Vec<usize>,
    /// Label names; inferred from the source corpora when empty.
    pub labels: Vec<String>,
    pub test: Option<PathBuf>,
    pub dictionary: Option<PathBuf>,
    /// Dictionary pairs sampled per run; 0 uses the whole dictionary.
    pub dictionary_sample: usize,
    pub embeddings: Option<PathBuf>,
    pub clwe: Option<PathBuf>,
    pub target_labeled: Option<PathBuf>,
    /// Word list or text whose characters join the character inventory.
    pub alphabet: Option<PathBuf>,
    pub parallel: Option<PathBuf>,
    pub reference_model: Option<PathBuf>,
    pub distill_docs: Option<usize>,
    /// Output of `distill-prepare`; used instead of `parallel`.
    pub distill_cache: Option<PathBuf>,
    pub model_out: Option<PathBuf>,
    pub log_out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        let w = LossWeights::default();
        let a = AdamConfig::default();
        let d = ModelDims::default();
        RunConfig {
            variant: t.variant,
            seed: t.seed,
            epochs: t.epochs,
            batch_size: t.batch_size,
            aux_batch_size: t.aux_batch_size,
            lambda_d: w.dictionary,
            lambda_e: w.mimick,
            lambda_p: w.distill,
            distill: false,
            char_dim: d.char_dim,
            lstm_hidden: d.lstm_hidden,
            word_dim: d.word_dim,
            dan_layers: d.dan_layers,
            dan_hidden: d.dan_hidden,
            dropout: d.dropout,
            dropout_input: d.dropout_input,
            lowercase: true,
            lr: a.lr,
            beta1: a.beta1,
            beta2: a.beta2,
            eps: a.eps,
            schedule: Schedule::Joint,
            pretrain_epochs: 0,
            exec: ExecMode::default(),
            sources: Vec::new(),
            source_counts: Vec::new(),
            labels: Vec::new(),
            test: None,
            dictionary: None,
            dictionary_sample: 100,
            embeddings: None,
            clwe: None,
            target_labeled: None,
            alphabet: None,
            parallel: None,
            reference_model: None,
            distill_docs: None,
            distill_cache: None,
            model_out: None,
            log_out: None,
        }
    }
}

/// Parses `value` as a TOML value, falling back to a bare string.
fn override_value(value: &str) -> toml::Value {
    let doc = format!("v = {value}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(value.to_string()),
    }
}

/// Deserializes a flat TOML table after applying `key=value` overrides.
/// Override values are read as TOML and fall back to bare strings.
pub fn parse_with_overrides<T: DeserializeOwned>(text: &str, overrides: &[String]) -> Result<T> {
    let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
    for o in overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {o:?} is not key=value")))?;
        table.insert(k.trim().to_string(), override_value(v.trim()));
    }
    toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))
}

impl RunConfig {
    /// Parses a config and applies `key=value` overrides on top. Relative
    /// paths are resolved against `base`.
    pub fn parse(text: &str, overrides: &[String], base: Option<&Path>) -> Result<Self> {
        let mut cfg: RunConfig = parse_with_overrides(text, overrides)?;
        if let Some(base) = base {
            cfg.resolve_paths(base);
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>, overrides: &[String]) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, overrides, path.parent())
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        self.sources.iter_mut().for_each(fix);
        for p in [
            &mut self.test,
            &mut self.dictionary,
            &mut self.embeddings,
            &mut self.clwe,
            &mut self.target_labeled,
            &mut self.alphabet,
            &mut self.parallel,
            &mut self.reference_model,
            &mut self.distill_cache,
            &mut self.model_out,
            &mut self.log_out,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
    }

    /// The resolved configuration with every default written out.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn present_resources(&self) -> BTreeSet<Resource> {
        let mut set = BTreeSet::new();
        if !self.sources.is_empty() {
            set.insert(Resource::SourceLabeled);
        }
        for (on, r) in [
            (self.dictionary.is_some(), Resource::Dictionary),
            (self.embeddings.is_some(), Resource::Embeddings),
            (self.clwe.is_some(), Resource::Clwe),
            (self.target_labeled.is_some(), Resource::TargetLabeled),
            (self.parallel.is_some() || self.distill_cache.is_some(), Resource::Parallel),
        ] {
            if on {
                set.insert(r);
            }
        }
        set
    }

    /// Every problem with the configuration, reported together.
    pub fn validate(&self) -> Result<()> {
        let mut problems = resource_problems(self.variant, self.distill, &self.present_resources());
        if !self.source_counts.is_empty() && self.source_counts.len() != self.sources.len() {
            problems.push(format!(
                "source_counts has {} entries for {} sources",
                self.source_counts.len(),
                self.sources.len()
            ));
        }
        if self.distill && self.distill_cache.is_none() && self.parallel.is_some() {
            if self.reference_model.is_none() {
                problems.push("parallel text needs `reference_model` (or use `distill_cache`)".into());
            }
            if self.distill_docs.is_none() {
                problems.push("parallel text needs `distill_docs`".into());
            }
        }
        if self.distill_cache.is_some() && self.parallel.is_some() {
            problems.push("set either `parallel` or `distill_cache`, not both".into());
        }
        if let Err(e) = self.train_config().validate() {
            problems.push(e.to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Resources {
                variant: self.variant.to_string(),
                problems,
            })
        }
    }

    pub fn tokenizer(&self) -> Tokenizer {
        Tokenizer {
            lowercase: self.lowercase,
        }
    }

    pub fn dims(&self) -> ModelDims {
        ModelDims {
            char_dim: self.char_dim,
            lstm_hidden: self.lstm_hidden,
            word_dim: self.word_dim,
            dan_layers: self.dan_layers,
            dan_hidden: self.dan_hidden,
            dropout: self.dropout,
            dropout_input: self.dropout_input,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            variant: self.variant,
            seed: self.seed,
            epochs: self.epochs,
            batch_size: self.batch_size,
            aux_batch_size: self.aux_batch_size,
            weights: LossWeights {
                dictionary: self.lambda_d,
                mimick: self.lambda_e,
                distill: self.lambda_p,
            },
            dims: self.dims(),
            adam: AdamConfig {
                lr: self.lr,
                beta1: self.beta1,
                beta2: self.beta2,
                eps: self.eps,
            },
            schedule: self.schedule,
            pretrain_epochs: self.pretrain_epochs,
            distill: self.distill,
            dictionary_sample: (self.dictionary_sample > 0).then_some(self.dictionary_sample),
            exec: self.exec,
        }
    }

    pub fn label_set(&self) -> Result<LabelSet> {
        if self.labels.is_empty() {
            LabelSet::infer(&self.sources)
        } else {
            LabelSet::new(self.labels.clone())
        }
    }

    /// Reads every file the run uses.
    pub fn load_data(&self) -> Result<TrainData> {
        self.validate()?;
        let tok = self.tokenizer();
        let labels = self.label_set()?;
        let sources = self
            .sources
            .iter()
            .enumerate()
            .map(|(i, p)| {
                Ok(SourceCorpus {
                    examples: load_corpus(p, &labels, &tok)?,
                    count: self.source_counts.get(i).copied(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let target_labeled = self.target_labeled.as_ref().map(|p| load_corpus(p, &labels, &tok)).transpose()?;
        let alphabet = match &self.alphabet {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                text.split_whitespace().map(str::to_string).collect()
            }
            None => Vec::new(),
        };
        let distill = if !self.distill {
            None
        } else if let Some(cache) = &self.distill_cache {
            Some(load_distill_cache(cache, &tok)?)
        } else {
            let reference_path = self.reference_model.as_ref().expect("validated");
            let reference = load_model(reference_path)?;
            if reference.labels != labels {
                return Err(Error::Config(format!(
                    "reference model labels {:?} differ from {:?}",
                    reference.labels.names(),
                    labels.names()
                )));
            }
            let pool = load_parallel(self.parallel.as_ref().expect("validated"), &tok)?;
            let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(self.seed);
            let n = self.distill_docs.expect("validated");
            Some(select_distill_docs(&reference, &pool, n, &mut rng, self.exec)?.set)
        };
        Ok(TrainData {
            labels: Some(labels),
            sources,
            target_labeled,
            dictionary: self.dictionary.as_ref().map(load_dictionary).transpose()?,
            embeddings: self.embeddings.as_ref().map(load_embeddings).transpose()?,
            clwe: self.clwe.as_ref().map(load_embeddings).transpose()?.map(Arc::new),
            distill,
            alphabet,
        })
    }

    pub fn load_test(&self, labels: &LabelSet) -> Result<Option<Vec<LabeledExample>>> {
        self.test.as_ref().map(|p| load_corpus(p, labels, &self.tokenizer())).transpose()
    }
}
