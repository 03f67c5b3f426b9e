//! Word embedders: the character Bi-LSTM plus the lookup-table variants used
//! by the word-based baselines.

use std::collections::HashMap;
use std::sync::Arc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId, ParamId, ParamStore};
use crate::tensor::Tensor;
use crate::text::{CharVocab, EmbeddingTable};

/// `U(-a, a)` with `a = sqrt(6 / (fan_in + fan_out))`.
pub(crate) fn glorot<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Tensor {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.gen_range(-a..=a)).collect();
    Tensor::matrix(rows, cols, data).expect("positive dims")
}

pub(crate) fn uniform<R: Rng + ?Sized>(rows: usize, cols: usize, a: f64, rng: &mut R) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.gen_range(-a..=a)).collect();
    Tensor::matrix(rows, cols, data).expect("positive dims")
}

/// One LSTM direction. The four gates are stacked row-wise in the order
/// input, forget, output, candidate: `w` is `[4h × (d_in + h)]` acting on
/// `[x_t; h_{t-1}]`, `b` is `[4h]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LstmParams {
    pub w: ParamId,
    pub b: ParamId,
    pub input_dim: usize,
    pub hidden: usize,
}

impl LstmParams {
    pub fn init<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, input_dim: usize, hidden: usize, rng: &mut R) -> Self {
        let cols = input_dim + hidden;
        let a = (6.0 / (cols + hidden) as f64).sqrt();
        let w = uniform(4 * hidden, cols, a, rng);
        let mut b = vec![0.0; 4 * hidden];
        b[hidden..2 * hidden].iter_mut().for_each(|v| *v = 1.0);
        LstmParams {
            w: store.add(format!("{name}.w"), w),
            b: store.add(format!("{name}.b"), Tensor::vector(b)),
            input_dim,
            hidden,
        }
    }
}

/// Runs the recurrence from zero `(h₀, c₀)` over `inputs` and returns `h_T`.
pub fn lstm_run(g: &mut Graph, lstm: &LstmParams, inputs: &[NodeId]) -> Result<NodeId> {
    if inputs.is_empty() {
        return Err(Error::EmptyInput("lstm_run"));
    }
    let hd = lstm.hidden;
    let w = g.param(lstm.w);
    let b = g.param(lstm.b);
    let mut h = g.input(Tensor::zeros(&[hd]));
    let mut c = g.input(Tensor::zeros(&[hd]));
    for &x in inputs {
        let xh = g.concat(&[x, h])?;
        let z = g.affine(w, xh, Some(b))?;
        let zi = g.slice(z, 0, hd)?;
        let zf = g.slice(z, hd, hd)?;
        let zo = g.slice(z, 2 * hd, hd)?;
        let zc = g.slice(z, 3 * hd, hd)?;
        let i = g.sigmoid(zi);
        let f = g.sigmoid(zf);
        let o = g.sigmoid(zo);
        let cand = g.tanh(zc);
        let keep = g.mul(f, c)?;
        let write = g.mul(i, cand)?;
        c = g.add(keep, write)?;
        let squashed = g.tanh(c);
        h = g.mul(o, squashed)?;
    }
    Ok(h)
}

/// Character Bi-LSTM word embedder `e(w) = W_e [lstm→(w); lstm←(rev w)] + b_e`.
#[derive(Clone, Debug, PartialEq)]
pub struct CharEmbedder {
    pub vocab: CharVocab,
    pub chars: ParamId,
    pub forward: LstmParams,
    pub backward: LstmParams,
    pub proj_w: ParamId,
    pub proj_b: ParamId,
    pub char_dim: usize,
    pub word_dim: usize,
}

impl CharEmbedder {
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        vocab: CharVocab,
        char_dim: usize,
        hidden: usize,
        word_dim: usize,
        rng: &mut R,
    ) -> Self {
        let chars = store.add("embedder.chars", uniform(vocab.len(), char_dim, 0.1, rng));
        let forward = LstmParams::init(store, "embedder.lstm_fwd", char_dim, hidden, rng);
        let backward = LstmParams::init(store, "embedder.lstm_bwd", char_dim, hidden, rng);
        let proj_w = store.add("embedder.proj.w", glorot(word_dim, 2 * hidden, rng));
        let proj_b = store.add("embedder.proj.b", Tensor::zeros(&[word_dim]));
        CharEmbedder {
            vocab,
            chars,
            forward,
            backward,
            proj_w,
            proj_b,
            char_dim,
            word_dim,
        }
    }

    pub fn embed(&self, g: &mut Graph, word: &str) -> Result<NodeId> {
        let idx = self.vocab.encode(word);
        if idx.is_empty() {
            return Err(Error::EmptyInput("embed_word"));
        }
        let table = g.param(self.chars);
        let xs = idx.iter().map(|&i| g.row(table, i)).collect::<Result<Vec<_>>>()?;
        let fwd = lstm_run(g, &self.forward, &xs)?;
        let rev: Vec<NodeId> = xs.iter().rev().copied().collect();
        let bwd = lstm_run(g, &self.backward, &rev)?;
        let both = g.concat(&[fwd, bwd])?;
        let w = g.param(self.proj_w);
        let b = g.param(self.proj_b);
        g.affine(w, both, Some(b))
    }
}

/// Word table with one trainable row per known word plus a trailing UNK row.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainableLookup {
    pub words: Vec<String>,
    pub index: HashMap<String, usize>,
    pub table: ParamId,
    pub dim: usize,
}

impl TrainableLookup {
    pub fn init<R: Rng + ?Sized>(store: &mut ParamStore, words: Vec<String>, dim: usize, rng: &mut R) -> Self {
        let index = words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        let table = store.add("lookup.table", uniform(words.len() + 1, dim, 0.1, rng));
        TrainableLookup {
            words,
            index,
            table,
            dim,
        }
    }

    pub fn row_of(&self, word: &str) -> usize {
        self.index.get(word).copied().unwrap_or(self.words.len())
    }
}

/// How a model turns a word into the vector fed to the classifier.
#[derive(Clone, Debug, PartialEq)]
pub enum Embedder {
    /// Character Bi-LSTM.
    Char(CharEmbedder),
    /// Frozen pretrained table; unknown words map to zeros.
    Frozen(Arc<EmbeddingTable>),
    /// Trainable table with an UNK row.
    Trainable(TrainableLookup),
    /// `[e(w); clwe(w)]` with the table frozen and zeros for unknown words.
    Combined(CharEmbedder, Arc<EmbeddingTable>),
}

impl Embedder {
    pub fn output_dim(&self) -> usize {
        match self {
            Embedder::Char(c) => c.word_dim,
            Embedder::Frozen(t) => t.dim(),
            Embedder::Trainable(t) => t.dim,
            Embedder::Combined(c, t) => c.word_dim + t.dim(),
        }
    }

    pub fn char_embedder(&self) -> Option<&CharEmbedder> {
        match self {
            Embedder::Char(c) | Embedder::Combined(c, _) => Some(c),
            _ => None,
        }
    }

    pub fn frozen_table(&self) -> Option<&Arc<EmbeddingTable>> {
        match self {
            Embedder::Frozen(t) | Embedder::Combined(_, t) => Some(t),
            _ => None,
        }
    }

    /// Records the word's embedding on `g`.
    pub fn embed(&self, g: &mut Graph, word: &str) -> Result<NodeId> {
        match self {
            Embedder::Char(c) => c.embed(g, word),
            Embedder::Frozen(t) => Ok(g.input(frozen_row(t, word))),
            Embedder::Trainable(t) => {
                let table = g.param(t.table);
                g.row(table, t.row_of(word))
            }
            Embedder::Combined(c, t) => {
                let e = c.embed(g, word)?;
                let clwe = g.input(frozen_row(t, word));
                g.concat(&[e, clwe])
            }
        }
    }

    /// Embedding of one word with the current parameters.
    pub fn embed_value(&self, params: &ParamStore, word: &str) -> Result<Vec<f64>> {
        let mut g = Graph::new(params);
        let n = self.embed(&mut g, word)?;
        Ok(g.value(n).data().to_vec())
    }
}

fn frozen_row(table: &EmbeddingTable, word: &str) -> Tensor {
    match table.get(word) {
        Some(v) => Tensor::vector(v.to_vec()),
        None => Tensor::zeros(&[table.dim()]),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::sigmoid;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(7)
    }

    fn small(store: &mut ParamStore) -> CharEmbedder {
        let vocab = CharVocab::from_words(["tempo", "tiempo", "abc"]);
        CharEmbedder::init(store, vocab, 3, 4, 5, &mut rng())
    }

    #[test]
    fn zero_parameters_give_zero_state() {
        let mut store = ParamStore::new();
        let lstm = LstmParams::init(&mut store, "l", 2, 3, &mut rng());
        store.get_mut(lstm.w).data_mut().fill(0.0);
        store.get_mut(lstm.b).data_mut().fill(0.0);
        let mut g = Graph::new(&store);
        let xs: Vec<NodeId> = (0..4).map(|i| g.input(Tensor::vector(vec![i as f64, 1.0]))).collect();
        let h = lstm_run(&mut g, &lstm, &xs).unwrap();
        assert_eq!(g.value(h).data(), &[0.0; 3]);
        assert!(lstm_run(&mut g, &lstm, &[]).is_err());
    }

    #[test]
    fn one_unit_one_step_by_hand() {
        // Unit weights and zero biases on a 1-unit cell, input x = 0.5:
        // every gate pre-activation is x·1 + h₀·1 = 0.5.
        let mut store = ParamStore::new();
        let lstm = LstmParams::init(&mut store, "l", 1, 1, &mut rng());
        store.get_mut(lstm.w).data_mut().fill(1.0);
        store.get_mut(lstm.b).data_mut().fill(0.0);
        let mut g = Graph::new(&store);
        let x = g.input(Tensor::vector(vec![0.5]));
        let h = lstm_run(&mut g, &lstm, &[x]).unwrap();
        let s = sigmoid(0.5);
        let c1 = s * 0.5f64.tanh();
        let expected = s * c1.tanh();
        assert!((g.value(h).item() - expected).abs() < 1e-15);
    }

    #[test]
    fn embedding_is_a_pure_function_of_the_string() {
        let mut store = ParamStore::new();
        let emb = Embedder::Char(small(&mut store));
        let a = emb.embed_value(&store, "tempo").unwrap();
        let b = emb.embed_value(&store, "tempo").unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 5);
        assert_eq!(emb.embed_value(&store, "t").unwrap().len(), 5);
        assert!(emb.embed_value(&store, "").is_err());
    }

    #[test]
    fn constant_projection() {
        let mut store = ParamStore::new();
        let c = small(&mut store);
        store.get_mut(c.proj_w).data_mut().fill(0.0);
        store.get_mut(c.proj_b).data_mut().copy_from_slice(&[1.0, 2.0, 3.0, 4.0, 5.0]);
        let e = Embedder::Char(c);
        for w in ["tempo", "x", "abcabc"] {
            assert_eq!(e.embed_value(&store, w).unwrap(), vec![1.0, 2.0, 3.0, 4.0, 5.0]);
        }
    }

    #[test]
    fn palindrome_with_tied_directions_has_equal_halves() {
        let mut store = ParamStore::new();
        let c = small(&mut store);
        let fw = store.get(c.forward.w).clone();
        let fb = store.get(c.forward.b).clone();
        *store.get_mut(c.backward.w) = fw;
        *store.get_mut(c.backward.b) = fb;
        let mut g = Graph::new(&store);
        let table = g.param(c.chars);
        let xs: Vec<NodeId> = c.vocab.encode("abcba").iter().map(|&i| g.row(table, i).unwrap()).collect();
        let rev: Vec<NodeId> = xs.iter().rev().copied().collect();
        let f = lstm_run(&mut g, &c.forward, &xs).unwrap();
        let b = lstm_run(&mut g, &c.backward, &rev).unwrap();
        assert_eq!(g.value(f), g.value(b));
    }

    #[test]
    fn unknown_characters_are_interchangeable() {
        let mut store = ParamStore::new();
        let e = Embedder::Char(small(&mut store));
        let a = e.embed_value(&store, "tempoж").unwrap();
        let b = e.embed_value(&store, "tempo語").unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn char_gradient_only_for_present_characters() {
        let mut store = ParamStore::new();
        let c = small(&mut store);
        let mut g = Graph::new(&store);
        let out = c.embed(&mut g, "tempo").unwrap();
        let zero = g.input(Tensor::zeros(&[5]));
        let loss = g.squared_distance(out, zero).unwrap();
        let bp = g.backward(loss).unwrap();
        let grad = bp.params.get(c.chars).unwrap();
        let present: Vec<usize> = c.vocab.encode("tempo");
        for row in 0..c.vocab.len() {
            let norm: f64 = grad[row * 3..row * 3 + 3].iter().map(|v| v.abs()).sum();
            assert_eq!(norm > 0.0, present.contains(&row), "row {row}");
        }
    }

    #[test]
    fn frozen_and_combined_lookups() {
        let table = Arc::new(
            EmbeddingTable::new(2, vec![("tempo".into(), vec![1.0, -1.0])]).unwrap(),
        );
        let store = ParamStore::new();
        let e = Embedder::Frozen(table.clone());
        assert_eq!(e.embed_value(&store, "tempo").unwrap(), vec![1.0, -1.0]);
        assert_eq!(e.embed_value(&store, "nope").unwrap(), vec![0.0, 0.0]);

        let mut store = ParamStore::new();
        let c = small(&mut store);
        let combined = Embedder::Combined(c.clone(), table);
        assert_eq!(combined.output_dim(), 7);
        let v = combined.embed_value(&store, "nope").unwrap();
        assert_eq!(&v[5..], &[0.0, 0.0]);
        assert_eq!(&v[..5], Embedder::Char(c).embed_value(&store, "nope").unwrap().as_slice());
    }

    #[test]
    fn trainable_lookup_uses_unk_row() {
        let mut store = ParamStore::new();
        let t = TrainableLookup::init(&mut store, vec!["a".into(), "b".into()], 3, &mut rng());
        assert_eq!(t.row_of("b"), 1);
        assert_eq!(t.row_of("zzz"), 2);
        let e = Embedder::Trainable(t.clone());
        assert_eq!(e.embed_value(&store, "q").unwrap(), store.get(t.table).row(2));
    }
}
