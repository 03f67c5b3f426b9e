use caco::gradcheck::grad_check;
use caco::graph::{softmax, Activation, Gradients, Graph, NodeId, ParamStore};
use caco::{ParamId, Result, Tensor};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn vec_in(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, len)
}

/// Reduces a node to a scalar with a fixed linear readout so every output
/// coordinate reaches the loss with its own weight.
fn readout(g: &mut Graph, x: NodeId, weights: &[f64]) -> Result<NodeId> {
    let n = g.value(x).len();
    let w = g.input(Tensor::matrix(1, n, weights[..n].to_vec())?);
    g.affine(w, x, None)
}

fn check<F>(store: &ParamStore, build: F) -> f64
where
    F: Fn(&mut Graph) -> Result<NodeId>,
{
    let report = grad_check(
        |ps| {
            let mut g = Graph::new(ps);
            let y = build(&mut g)?;
            let bp = g.backward(y)?;
            Ok((g.value(y).item(), bp.params))
        },
        store,
        1e-4,
    )
    .unwrap();
    report.max_relative_error
}

fn two_vectors(a: Vec<f64>, b: Vec<f64>) -> (ParamStore, ParamId, ParamId) {
    let mut store = ParamStore::new();
    let pa = store.add("a", Tensor::vector(a));
    let pb = store.add("b", Tensor::vector(b));
    (store, pa, pb)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn affine_gradients(w in vec_in(12), x in vec_in(4), b in vec_in(3), r in vec_in(3)) {
        let mut store = ParamStore::new();
        let pw = store.add("w", Tensor::matrix(3, 4, w).unwrap());
        let px = store.add("x", Tensor::vector(x));
        let pb = store.add("b", Tensor::vector(b));
        let err = check(&store, |g| {
            let (w, x, b) = (g.param(pw), g.param(px), g.param(pb));
            let y = g.affine(w, x, Some(b))?;
            readout(g, y, &r)
        });
        prop_assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn smooth_activation_gradients(x in vec_in(5), r in vec_in(5)) {
        let (store, px, _) = two_vectors(x, vec![0.0]);
        for kind in [Activation::Sigmoid, Activation::Tanh] {
            let err = check(&store, |g| {
                let x = g.param(px);
                let y = g.activation(kind, x);
                readout(g, y, &r)
            });
            prop_assert!(err < 1e-4, "{kind:?} {err}");
        }
    }

    #[test]
    fn relu_gradients_away_from_the_kink(
        x in prop::collection::vec(prop_oneof![-1.0f64..-0.01, 0.01f64..1.0], 5),
        r in vec_in(5),
    ) {
        let (store, px, _) = two_vectors(x, vec![0.0]);
        let err = check(&store, |g| {
            let x = g.param(px);
            let y = g.relu(x);
            readout(g, y, &r)
        });
        prop_assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn elementwise_gradients(a in vec_in(4), b in vec_in(4), r in vec_in(4), s in -1.0f64..1.0) {
        let (store, pa, pb) = two_vectors(a, b);
        let err = check(&store, |g| {
            let (a, b) = (g.param(pa), g.param(pb));
            let sum = g.add(a, b)?;
            let prod = g.mul(sum, a)?;
            let y = g.scale(prod, s);
            readout(g, y, &r)
        });
        prop_assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn structural_gradients(a in vec_in(4), b in vec_in(3), r in vec_in(7), start in 0usize..4) {
        let (store, pa, pb) = two_vectors(a, b);
        let err = check(&store, |g| {
            let (a, b) = (g.param(pa), g.param(pb));
            let c = g.concat(&[a, b])?;
            let s = g.slice(c, start, 3)?;
            let whole = readout(g, c, &r)?;
            let part = readout(g, s, &r)?;
            g.weighted_sum(&[(whole, 0.7), (part, -1.3)])
        });
        prop_assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn mean_and_row_gradients(table in vec_in(12), x in vec_in(4), r in vec_in(4), i in 0usize..3) {
        let mut store = ParamStore::new();
        let pt = store.add("t", Tensor::matrix(3, 4, table).unwrap());
        let px = store.add("x", Tensor::vector(x));
        let err = check(&store, |g| {
            let t = g.param(pt);
            let row = g.row(t, i)?;
            let again = g.row(t, (i + 1) % 3)?;
            let x = g.param(px);
            let m = g.mean(&[row, x, again, row])?;
            readout(g, m, &r)
        });
        prop_assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn mask_and_dropout_gradients(x in vec_in(6), r in vec_in(6), seed in 0u64..1000) {
        let (store, px, _) = two_vectors(x, vec![0.0]);
        let err = check(&store, |g| {
            let x = g.param(px);
            let m = g.mask(x, vec![1.0, 0.0, 2.0, 1.0, 0.5, 0.0])?;
            // Same mask on every call.
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let d = g.dropout(m, 0.3, &mut rng)?;
            readout(g, d, &r)
        });
        prop_assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn loss_gradients(z in vec_in(4), t in vec_in(4), p in prop::collection::vec(0.01f64..1.0, 4), gold in 0usize..4) {
        let (store, pz, pt) = two_vectors(z, t);
        let total: f64 = p.iter().sum();
        let p: Vec<f64> = p.iter().map(|x| x / total).collect();
        let err = check(&store, |g| {
            let (z, t) = (g.param(pz), g.param(pt));
            let nll = g.softmax_nll(z, gold)?;
            let sq = g.squared_distance(z, t)?;
            let kl = g.kl_divergence(&p, z)?;
            g.weighted_sum(&[(nll, 1.0), (sq, 0.5), (kl, 2.0)])
        });
        prop_assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn softmax_is_a_distribution(z in prop::collection::vec(-1e300f64..1e300, 1..12)) {
        let p = softmax(&z);
        prop_assert!(p.iter().all(|&x| x >= 0.0 && x.is_finite()));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn softmax_is_a_distribution_at_moderate_scale(z in prop::collection::vec(-50.0f64..50.0, 1..12)) {
        let p = softmax(&z);
        prop_assert!(p.iter().all(|&x| x >= 0.0));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn kl_is_nonnegative_and_zero_only_at_equality(
        p in prop::collection::vec(0.01f64..1.0, 4),
        z in vec_in(4),
    ) {
        let total: f64 = p.iter().sum();
        let p: Vec<f64> = p.iter().map(|x| x / total).collect();
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let zn = g.input(Tensor::vector(z.clone()));
        let kl = g.kl_divergence(&p, zn).unwrap();
        let value = g.value(kl).item();
        prop_assert!(value >= 0.0);
        let q = softmax(&z);
        let gap: f64 = p.iter().zip(&q).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        if gap > 1e-3 {
            prop_assert!(value > 0.0);
        }

        // Logits whose softmax is exactly p.
        let logits: Vec<f64> = p.iter().map(|x| x.ln()).collect();
        let mut g = Graph::new(&store);
        let zn = g.input(Tensor::vector(logits));
        let kl = g.kl_divergence(&p, zn).unwrap();
        prop_assert!(g.value(kl).item().abs() < 1e-12);
    }

    #[test]
    fn gradient_of_a_sum_is_the_sum_of_gradients(w in vec_in(6), x in vec_in(3), t in vec_in(2), gold in 0usize..2) {
        let mut store = ParamStore::new();
        let pw = store.add("w", Tensor::matrix(2, 3, w).unwrap());
        let px = store.add("x", Tensor::vector(x));
        let grads = |which: u8| -> Gradients {
            let mut g = Graph::new(&store);
            let (w, x) = (g.param(pw), g.param(px));
            let h = g.affine(w, x, None).unwrap();
            let z = g.tanh(h);
            let tn = g.input(Tensor::vector(t.clone()));
            let a = g.softmax_nll(z, gold).unwrap();
            let b = g.squared_distance(z, tn).unwrap();
            let root = match which {
                0 => a,
                1 => b,
                _ => g.add(a, b).unwrap(),
            };
            g.backward(root).unwrap().params
        };
        let (ga, gb, gs) = (grads(0), grads(1), grads(2));
        for id in store.ids() {
            for i in 0..store.get(id).len() {
                let lhs = gs.at(id, i);
                let rhs = ga.at(id, i) + gb.at(id, i);
                prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + rhs.abs()), "{lhs} vs {rhs}");
            }
        }
    }
}
