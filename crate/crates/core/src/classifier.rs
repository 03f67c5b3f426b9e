//! Deep averaging network: mean of word vectors, ReLU layers, softmax layer.

use rand::Rng;

use crate::embedder::glorot;
use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId, ParamId, ParamStore};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Layer {
    pub w: ParamId,
    pub b: ParamId,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dan {
    pub hidden: Vec<Layer>,
    pub output: Layer,
    pub input_dim: usize,
    pub labels: usize,
    /// Drop probability for each hidden layer's output.
    pub dropout: f64,
    /// Also apply dropout to the averaged input `z₀`.
    pub dropout_input: bool,
}

impl Dan {
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        input_dim: usize,
        widths: &[usize],
        labels: usize,
        dropout: f64,
        rng: &mut R,
    ) -> Self {
        let mut prev = input_dim;
        let mut hidden = Vec::with_capacity(widths.len());
        for (i, &width) in widths.iter().enumerate() {
            let w = store.add(format!("dan.{i}.w"), glorot(width, prev, rng));
            let b = store.add(format!("dan.{i}.b"), Tensor::zeros(&[width]));
            hidden.push(Layer { w, b });
            prev = width;
        }
        let w = store.add("dan.out.w", glorot(labels, prev, rng));
        let b = store.add("dan.out.b", Tensor::zeros(&[labels]));
        Dan {
            hidden,
            output: Layer { w, b },
            input_dim,
            labels,
            dropout,
            dropout_input: false,
        }
    }

    /// Logits for a document given its word vectors (one node per token).
    ///
    /// Passing `Some(rng)` selects train mode, where inverted dropout masks are
    /// drawn from `rng`; `None` is inference and consumes no randomness.
    pub fn forward<R: Rng + ?Sized>(&self, g: &mut Graph, vectors: &[NodeId], rng: Option<&mut R>) -> Result<NodeId> {
        if vectors.is_empty() {
            return Err(Error::EmptyDocument);
        }
        for &v in vectors {
            let len = g.value(v).len();
            if len != self.input_dim {
                return Err(Error::Dimension {
                    what: "classifier input".into(),
                    expected: self.input_dim,
                    found: len,
                });
            }
        }
        // Summing in a canonical order keeps the mean bit-identical under any
        // permutation of the words.
        let mut ordered = vectors.to_vec();
        ordered.sort_by(|&a, &b| {
            g.value(a)
                .data()
                .iter()
                .zip(g.value(b).data())
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        let mut z = g.mean(&ordered)?;
        let mut rng = rng;
        if self.dropout_input {
            if let Some(r) = rng.as_deref_mut() {
                z = g.dropout(z, self.dropout, r)?;
            }
        }
        for layer in &self.hidden {
            let w = g.param(layer.w);
            let b = g.param(layer.b);
            let a = g.affine(w, z, Some(b))?;
            z = g.relu(a);
            if let Some(r) = rng.as_deref_mut() {
                z = g.dropout(z, self.dropout, r)?;
            }
        }
        let w = g.param(self.output.w);
        let b = g.param(self.output.b);
        g.affine(w, z, Some(b))
    }
}

/// Index of the largest probability; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::softmax;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(dropout: f64) -> (ParamStore, Dan) {
        let mut store = ParamStore::new();
        let dan = Dan::init(&mut store, 4, &[6, 6, 6], 3, dropout, &mut ChaCha8Rng::seed_from_u64(3));
        (store, dan)
    }

    fn inputs(g: &mut Graph, rows: &[[f64; 4]]) -> Vec<NodeId> {
        rows.iter().map(|r| g.input(Tensor::vector(r.to_vec()))).collect()
    }

    #[test]
    fn permutation_gives_identical_logits() {
        let (store, dan) = setup(0.1);
        let rows = [[0.1, 0.2, -0.3, 0.7], [1.0, -1.0, 0.5, 0.25], [0.3, 0.3, 0.3, -0.9]];
        let mut g = Graph::new(&store);
        let xs = inputs(&mut g, &rows);
        let a = dan.forward::<ChaCha8Rng>(&mut g, &xs, None).unwrap();
        let perm = vec![xs[2], xs[0], xs[1]];
        let b = dan.forward::<ChaCha8Rng>(&mut g, &perm, None).unwrap();
        assert_eq!(g.value(a), g.value(b));
    }

    #[test]
    fn single_word_mean_and_zero_output_layer() {
        let (mut store, dan) = setup(0.0);
        store.get_mut(dan.output.w).data_mut().fill(0.0);
        let mut g = Graph::new(&store);
        let xs = inputs(&mut g, &[[0.5, -0.5, 2.0, 1.0]]);
        let logits = dan.forward::<ChaCha8Rng>(&mut g, &xs, None).unwrap();
        let p = softmax(g.value(logits).data());
        for v in &p {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
        assert_eq!(argmax(&p), 0);
        assert!(dan.forward::<ChaCha8Rng>(&mut g, &[], None).is_err());
    }

    #[test]
    fn zero_dropout_train_equals_infer() {
        let (store, dan) = setup(0.0);
        let mut g = Graph::new(&store);
        let xs = inputs(&mut g, &[[0.1, 0.2, 0.3, 0.4], [-0.4, 0.0, 0.9, 0.1]]);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = dan.forward(&mut g, &xs, Some(&mut rng)).unwrap();
        let b = dan.forward::<ChaCha8Rng>(&mut g, &xs, None).unwrap();
        assert_eq!(g.value(a), g.value(b));
    }

    #[test]
    fn wrong_input_dimension_is_rejected() {
        let (store, dan) = setup(0.0);
        let mut g = Graph::new(&store);
        let x = g.input(Tensor::vector(vec![1.0; 5]));
        assert!(matches!(
            dan.forward::<ChaCha8Rng>(&mut g, &[x], None),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn argmax_ties_to_lowest() {
        assert_eq!(argmax(&[0.25, 0.25, 0.25, 0.25]), 0);
        assert_eq!(argmax(&[0.1, 0.4, 0.4, 0.1]), 1);
    }
}
