use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::classifier::{argmax, Dan};
use crate::embedder::{CharEmbedder, Embedder, TrainableLookup};
use crate::error::{Error, Result};
use crate::exec::{map_collect, ExecMode};
use crate::graph::{softmax, Backprop, Gradients, Graph, NodeId, ParamStore};
use crate::tensor::Tensor;
use crate::text::{CharVocab, Document, EmbeddingTable, LabelSet};

/// Model variants, by the resources they train with.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Variant {
    /// Source labeled data only.
    Src,
    /// Adds the word-translation loss over a small dictionary.
    Dict,
    /// Adds the embedding-mimicking loss.
    Mim,
    /// Dictionary and mimicking.
    All,
    /// Word-lookup DAN over frozen cross-lingual embeddings.
    Clwe,
    /// Word-lookup DAN with trainable rows, with labeled target data.
    Sup,
    /// Character embedder concatenated with frozen cross-lingual embeddings.
    Com,
}

impl Variant {
    pub const ALL: [Variant; 7] = [
        Variant::Src,
        Variant::Dict,
        Variant::Mim,
        Variant::All,
        Variant::Clwe,
        Variant::Sup,
        Variant::Com,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Src => "SRC",
            Variant::Dict => "DICT",
            Variant::Mim => "MIM",
            Variant::All => "ALL",
            Variant::Clwe => "CLWE",
            Variant::Sup => "SUP",
            Variant::Com => "COM",
        }
    }

    pub fn uses_dictionary(self) -> bool {
        matches!(self, Variant::Dict | Variant::All)
    }

    pub fn uses_mimick(self) -> bool {
        matches!(self, Variant::Mim | Variant::All)
    }

    pub fn uses_clwe(self) -> bool {
        matches!(self, Variant::Clwe | Variant::Com)
    }

    pub fn uses_target_labeled(self) -> bool {
        self == Variant::Sup
    }

    pub fn has_char_embedder(self) -> bool {
        !matches!(self, Variant::Clwe | Variant::Sup)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown variant {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelDims {
    pub char_dim: usize,
    pub lstm_hidden: usize,
    pub word_dim: usize,
    pub dan_layers: usize,
    pub dan_hidden: usize,
    pub dropout: f64,
    pub dropout_input: bool,
}

impl Default for ModelDims {
    fn default() -> Self {
        ModelDims {
            char_dim: 10,
            lstm_hidden: 40,
            word_dim: 40,
            dan_layers: 3,
            dan_hidden: 100,
            dropout: 0.1,
            dropout_input: false,
        }
    }
}

impl ModelDims {
    pub fn validate(&self) -> Result<()> {
        if self.char_dim == 0 || self.lstm_hidden == 0 || self.word_dim == 0 || self.dan_hidden == 0 {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

/// What a model needs besides its dimensions to be constructed.
#[derive(Clone, Debug, Default)]
pub struct ModelResources {
    /// Shared character inventory (character-embedder variants).
    pub vocab: Option<CharVocab>,
    /// Frozen cross-lingual table (CLWE and COM).
    pub clwe: Option<Arc<EmbeddingTable>>,
    /// Known words for the trainable lookup table (SUP).
    pub lookup_words: Option<Vec<String>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub label: usize,
    pub probabilities: Vec<f64>,
}

/// Embedder + DAN classifier with all their parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub variant: Variant,
    pub labels: LabelSet,
    pub dims: ModelDims,
    pub params: ParamStore,
    pub embedder: Embedder,
    pub classifier: Dan,
}

impl Model {
    pub fn new<R: Rng + ?Sized>(
        variant: Variant,
        labels: LabelSet,
        dims: ModelDims,
        resources: ModelResources,
        rng: &mut R,
    ) -> Result<Self> {
        dims.validate()?;
        let mut params = ParamStore::new();
        let need = |what: &str| Error::Config(format!("variant {variant} needs {what}"));
        let char_embedder = |params: &mut ParamStore, rng: &mut R| -> Result<CharEmbedder> {
            let vocab = resources.vocab.clone().ok_or_else(|| need("a character vocabulary"))?;
            Ok(CharEmbedder::init(params, vocab, dims.char_dim, dims.lstm_hidden, dims.word_dim, rng))
        };
        let embedder = match variant {
            Variant::Src | Variant::Dict | Variant::Mim | Variant::All => Embedder::Char(char_embedder(&mut params, rng)?),
            Variant::Com => {
                let c = char_embedder(&mut params, rng)?;
                Embedder::Combined(c, resources.clwe.clone().ok_or_else(|| need("a CLWE table"))?)
            }
            Variant::Clwe => Embedder::Frozen(resources.clwe.clone().ok_or_else(|| need("a CLWE table"))?),
            Variant::Sup => {
                let words = resources.lookup_words.clone().ok_or_else(|| need("a word list"))?;
                Embedder::Trainable(TrainableLookup::init(&mut params, words, dims.word_dim, rng))
            }
        };
        let widths = vec![dims.dan_hidden; dims.dan_layers];
        let mut classifier = Dan::init(&mut params, embedder.output_dim(), &widths, labels.len(), dims.dropout, rng);
        classifier.dropout_input = dims.dropout_input;
        Ok(Model {
            variant,
            labels,
            dims,
            params,
            embedder,
            classifier,
        })
    }

    /// Embedder output for one word.
    pub fn embed_word(&self, word: &str) -> Result<Vec<f64>> {
        self.embedder.embed_value(&self.params, word)
    }

    /// Inference-mode logits.
    pub fn logits(&self, doc: &Document) -> Result<Vec<f64>> {
        let words = WordBatch::embed(self, doc.words().iter().map(String::as_str), ExecMode::Sequential)?;
        let mut g = Graph::new(&self.params);
        let inputs = words.attach(&mut g);
        let nodes = inputs.tokens(doc)?;
        let z = self.classifier.forward::<rand_chacha::ChaCha8Rng>(&mut g, &nodes, None)?;
        Ok(g.value(z).data().to_vec())
    }

    pub fn predict(&self, doc: &Document) -> Result<Prediction> {
        let probabilities = softmax(&self.logits(doc)?);
        Ok(Prediction {
            label: argmax(&probabilities),
            probabilities,
        })
    }

    pub fn predict_all(&self, docs: &[&Document], exec: ExecMode) -> Result<Vec<Prediction>> {
        map_collect(exec, docs, |d| self.predict(d)).into_iter().collect()
    }
}

/// Word nodes attached to a document-level graph.
#[derive(Clone, Debug, Default)]
pub struct WordInputs {
    map: HashMap<String, NodeId>,
}

impl WordInputs {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, word: impl Into<String>, node: NodeId) {
        self.map.insert(word.into(), node);
    }

    pub fn get(&self, word: &str) -> Result<NodeId> {
        self.map
            .get(word)
            .copied()
            .ok_or_else(|| Error::Config(format!("word {word:?} was not embedded for this step")))
    }

    /// One node per token of `doc`.
    pub fn tokens(&self, doc: &Document) -> Result<Vec<NodeId>> {
        doc.words().iter().map(|w| self.get(w)).collect()
    }
}

/// Distinct words of a step, each embedded on its own graph.
///
/// Words are embedded independently (in parallel when enabled), then exposed
/// to the document-level graph as constant leaves. After the document graph
/// is differentiated, the gradient reaching each leaf is pushed back through
/// that word's graph and the per-word parameter gradients are summed in
/// sorted word order, so the result does not depend on scheduling.
pub struct WordBatch<'p> {
    words: Vec<String>,
    graphs: Vec<(Graph<'p>, NodeId)>,
    exec: ExecMode,
}

impl<'p> WordBatch<'p> {
    pub fn embed<'w>(model: &'p Model, words: impl IntoIterator<Item = &'w str>, exec: ExecMode) -> Result<Self> {
        let words: Vec<String> = words
            .into_iter()
            .collect::<BTreeSet<&str>>()
            .into_iter()
            .map(str::to_string)
            .collect();
        let graphs = map_collect(exec, &words, |w| -> Result<(Graph<'p>, NodeId)> {
            let mut g = Graph::new(&model.params);
            let out = model.embedder.embed(&mut g, w)?;
            Ok((g, out))
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        Ok(WordBatch {
            words,
            graphs,
            exec,
        })
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    /// Adds one constant leaf per word to `top`.
    pub fn attach(&self, top: &mut Graph<'p>) -> WordInputs {
        let mut inputs = WordInputs::new();
        for (w, (g, out)) in self.words.iter().zip(&self.graphs) {
            let node = top.input(g.value(*out).clone());
            inputs.insert(w.clone(), node);
        }
        inputs
    }

    /// Parameter gradients through the word graphs, given the document-level
    /// backward pass.
    pub fn backprop(&self, inputs: &WordInputs, top: &Backprop) -> Result<Gradients> {
        let jobs: Vec<(usize, Vec<f64>)> = self
            .words
            .iter()
            .enumerate()
            .filter_map(|(i, w)| {
                let node = inputs.map.get(w)?;
                top.input_grad(*node).map(|g| (i, g.to_vec()))
            })
            .collect();
        let graphs = &self.graphs;
        let parts = map_collect(self.exec, &jobs, |(i, seed)| {
            let (g, out) = &graphs[*i];
            g.backward_from(*out, seed).map(|bp| bp.params)
        });
        let mut total = Gradients::new(graphs.first().map_or(0, |(g, _)| g.store().len()));
        for p in parts {
            total.merge(&p?);
        }
        Ok(total)
    }
}

/// Embedder outputs for a word list, as a table.
pub fn embed_table(model: &Model, words: &[String], exec: ExecMode) -> Result<EmbeddingTable> {
    let rows = map_collect(exec, words, |w| model.embed_word(w).map(|v| (w.clone(), v)))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    EmbeddingTable::new(model.embedder.output_dim(), rows)
}

impl Model {
    /// Replaces one parameter tensor, checking its shape.
    pub fn set_param(&mut self, name: &str, value: Tensor) -> Result<()> {
        let id = self
            .params
            .ids()
            .find(|&id| self.params.name(id) == name)
            .ok_or_else(|| Error::Config(format!("no parameter named {name:?}")))?;
        if self.params.get(id).shape() != value.shape() {
            return Err(Error::ShapeMismatch {
                op: "set_param",
                left: self.params.get(id).shape().to_vec(),
                right: value.shape().to_vec(),
            });
        }
        *self.params.get_mut(id) = value;
        Ok(())
    }
}
