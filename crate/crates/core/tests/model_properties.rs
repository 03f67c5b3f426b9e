use caco::graph::{Graph, ParamStore};
use caco::model::{ModelResources, WordBatch};
use caco::objectives::{evaluate, loss_total, LossWeights, TaskBatches};
use caco::optim::{Adam, AdamConfig};
use caco::synth::{generate, SyntheticSpec};
use caco::text::{tokenize, CharVocab, Document, LabelSet, LabeledExample, ParallelPair};
use caco::trainer::{train_with, SourceCorpus, TrainConfig, TrainData};
use caco::{ExecMode, Gradients, Model, ModelDims, Tensor, Variant};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_dims() -> ModelDims {
    ModelDims {
        char_dim: 4,
        lstm_hidden: 6,
        word_dim: 5,
        dan_layers: 2,
        dan_hidden: 8,
        dropout: 0.2,
        dropout_input: false,
    }
}

fn model(variant: Variant, seed: u64) -> Model {
    Model::new(
        variant,
        LabelSet::new(["A", "B", "C"]).unwrap(),
        small_dims(),
        ModelResources {
            vocab: Some(CharVocab::from_words(["abcdefghijklmnop"])),
            ..Default::default()
        },
        &mut ChaCha8Rng::seed_from_u64(seed),
    )
    .unwrap()
}

fn known_word() -> impl Strategy<Value = String> {
    "[a-p]{1,7}"
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn embedding_depends_only_on_the_string(w in known_word(), ctx in prop::collection::vec(known_word(), 0..5)) {
        let m = model(Variant::Src, 1);
        let alone = m.embed_word(&w).unwrap();
        prop_assert_eq!(alone.len(), 5);
        // Embedding the word inside a batch of other words changes nothing.
        let mut words: Vec<&str> = ctx.iter().map(String::as_str).collect();
        words.push(&w);
        let batch = WordBatch::embed(&m, words.iter().copied(), ExecMode::Sequential).unwrap();
        let mut g = Graph::new(&m.params);
        let inputs = batch.attach(&mut g);
        let node = inputs.get(&w).unwrap();
        prop_assert_eq!(g.value(node).data(), alone.as_slice());
    }

    #[test]
    fn unseen_characters_are_interchangeable(w in known_word(), a in "[q-zА-я]", b in "[q-zА-я]") {
        let m = model(Variant::Src, 2);
        let x = m.embed_word(&format!("{w}{a}")).unwrap();
        let y = m.embed_word(&format!("{w}{b}")).unwrap();
        prop_assert_eq!(x, y);
    }

    #[test]
    fn inference_is_deterministic_and_order_free(words in prop::collection::vec(known_word(), 1..12), seed in 0u64..50) {
        let m = model(Variant::Src, seed);
        let doc = Document::new(words.clone()).unwrap();
        let p = m.predict(&doc).unwrap();
        prop_assert_eq!(&m.predict(&doc).unwrap(), &p);
        let mut rev = words;
        rev.reverse();
        let q = m.predict(&Document::new(rev).unwrap()).unwrap();
        prop_assert_eq!(p.label, q.label);
        prop_assert!((p.probabilities.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn every_loss_is_nonnegative(seed in 0u64..1000, gold in 0usize..3, words in prop::collection::vec(known_word(), 1..6)) {
        let m = model(Variant::All, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ex = LabeledExample { document: Document::new(words.clone()).unwrap(), label: gold };
        let pair = (words[0].clone(), format!("{}a", words[0]));
        let target: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let para = ParallelPair { source: Document::new(words).unwrap(), reference: tokenize("abc").unwrap() };
        let p_ref = [0.2, 0.5, 0.3];
        let batches = TaskBatches {
            classification: vec![&ex],
            dictionary: Some(vec![&pair]),
            mimick: Some(vec![("abc", target.as_slice())]),
            distill: Some((vec![&para], vec![p_ref.as_slice()])),
        };
        let w = LossWeights { dictionary: 1.0, mimick: 1.0, distill: 1.0 };
        let (l, _) = loss_total(&m, &batches, &w, Some(&mut rng), ExecMode::Sequential).unwrap();
        for v in [l.classification, l.dictionary, l.mimick, l.distill, l.total] {
            prop_assert!(v >= 0.0 && v.is_finite());
        }
    }

    #[test]
    fn adam_keeps_parameters_finite(g in prop::collection::vec(prop_oneof![-1e300f64..1e300, -1e-300f64..1e-300], 4), steps in 1usize..20) {
        let mut store = ParamStore::new();
        let id = store.add("p", Tensor::vector(vec![0.5, -0.5, 1.0, 0.0]));
        let mut grads = Gradients::for_store(&store);
        grads.accumulate(id, &g);
        let mut adam = Adam::new(AdamConfig::default(), &store);
        for _ in 0..steps {
            adam.step(&mut store, &grads).unwrap();
        }
        prop_assert!(store.all_finite());
    }
}

#[test]
fn total_gradient_is_the_weighted_sum_of_task_gradients() {
    let m = model(Variant::All, 9);
    let ex = [
        LabeledExample { document: tokenize("abc dep fog").unwrap(), label: 1 },
        LabeledExample { document: tokenize("ham jig").unwrap(), label: 2 },
    ];
    let pair = ("abc".to_string(), "aabc".to_string());
    let target = [0.3, -0.1, 0.0, 0.7, -0.4];
    let para = ParallelPair { source: tokenize("aabc fog").unwrap(), reference: tokenize("abc").unwrap() };
    let p_ref = [0.6, 0.3, 0.1];
    let batches = TaskBatches {
        classification: ex.iter().collect(),
        dictionary: Some(vec![&pair]),
        mimick: Some(vec![("dep", target.as_slice())]),
        distill: Some((vec![&para], vec![p_ref.as_slice()])),
    };
    let w = LossWeights { dictionary: 0.7, mimick: 0.05, distill: 1.9 };
    let run = |weights: &LossWeights, with_classification: bool| {
        let mut b = batches.clone();
        if !with_classification {
            b.classification.clear();
        }
        evaluate::<ChaCha8Rng>(&m, &b, weights, None, ExecMode::Sequential).unwrap()
    };
    let (total, g_total) = run(&w, true);
    let (_, g_s) = run(&LossWeights::NONE, true);
    let (_, g_d) = run(&LossWeights { dictionary: 1.0, ..LossWeights::NONE }, false);
    let (_, g_e) = run(&LossWeights { mimick: 1.0, ..LossWeights::NONE }, false);
    let (_, g_p) = run(&LossWeights { distill: 1.0, ..LossWeights::NONE }, false);
    let expected_total = total.classification + 0.7 * total.dictionary + 0.05 * total.mimick + 1.9 * total.distill;
    assert!((total.total - expected_total).abs() < 1e-12);
    for id in m.params.ids() {
        for i in 0..m.params.get(id).len() {
            let sum = g_s.at(id, i) + 0.7 * g_d.at(id, i) + 0.05 * g_e.at(id, i) + 1.9 * g_p.at(id, i);
            let got = g_total.at(id, i);
            assert!((got - sum).abs() <= 1e-10 * (1.0 + sum.abs()), "{} {got} {sum}", m.params.name(id));
        }
    }
}

#[test]
fn inverted_dropout_preserves_the_mean() {
    let store = ParamStore::new();
    let z = [0.8, -0.3, 1.5, 0.0, 2.2];
    let rate = 0.3;
    let n = 20_000;
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut sum = [0.0; 5];
    let mut sum_sq = [0.0; 5];
    for _ in 0..n {
        let mut g = Graph::new(&store);
        let x = g.input(Tensor::vector(z.to_vec()));
        let d = g.dropout(x, rate, &mut rng).unwrap();
        for (i, v) in g.value(d).data().iter().enumerate() {
            sum[i] += v;
            sum_sq[i] += v * v;
        }
    }
    for i in 0..5 {
        let mean = sum[i] / n as f64;
        let var = sum_sq[i] / n as f64 - mean * mean;
        let se = (var / n as f64).sqrt();
        assert!((mean - z[i]).abs() <= 3.0 * se + 1e-12, "coordinate {i}: {mean} vs {} (se {se})", z[i]);
    }
}

fn small_pair() -> caco::synth::SyntheticPair {
    generate(&SyntheticSpec {
        seed: 3,
        source_train: 64,
        target_test: 8,
        fillers: 60,
        ..Default::default()
    })
    .unwrap()
}

fn param_bits(m: &Model) -> Vec<u64> {
    m.params.iter().flat_map(|(_, p)| p.value.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>()).collect()
}

#[test]
fn disabled_task_leaves_the_trajectory_unchanged() {
    let pair = small_pair();
    let data = TrainData {
        labels: Some(pair.labels.clone()),
        sources: vec![SourceCorpus { examples: pair.source_train.clone(), count: None }],
        dictionary: Some(pair.dictionary.clone()),
        embeddings: Some(pair.embeddings.clone()),
        ..Default::default()
    };
    let base = TrainConfig {
        epochs: 3,
        seed: 4,
        dims: ModelDims { word_dim: 40, ..small_dims() },
        exec: ExecMode::Sequential,
        ..Default::default()
    };
    let trajectory = |cfg: &TrainConfig| {
        let mut snapshots = Vec::new();
        train_with(cfg, &data, |m, _| snapshots.push(param_bits(m))).unwrap();
        snapshots
    };
    let src = trajectory(&base);
    let mut zeroed = base.clone();
    zeroed.variant = Variant::All;
    zeroed.weights = LossWeights::NONE;
    assert_eq!(trajectory(&zeroed), src);
    let mut dict_off = base.clone();
    dict_off.variant = Variant::Dict;
    dict_off.weights.dictionary = 0.0;
    assert_eq!(trajectory(&dict_off), src);
}

#[test]
fn logged_total_matches_weighted_components() {
    let pair = small_pair();
    let data = TrainData {
        labels: Some(pair.labels.clone()),
        sources: vec![SourceCorpus { examples: pair.source_train.clone(), count: None }],
        dictionary: Some(pair.dictionary.clone()),
        embeddings: Some(pair.embeddings.clone()),
        ..Default::default()
    };
    let cfg = TrainConfig {
        variant: Variant::All,
        epochs: 3,
        dims: ModelDims { word_dim: 40, ..small_dims() },
        exec: ExecMode::Sequential,
        ..Default::default()
    };
    let w = cfg.effective_weights();
    let mut logs = Vec::new();
    train_with(&cfg, &data, |_, e| logs.push(*e)).unwrap();
    assert_eq!(logs.len(), 3);
    for e in logs {
        let l = e.losses;
        let expected = l.classification + w.dictionary * l.dictionary + w.mimick * l.mimick + w.distill * l.distill;
        assert!((l.total - expected).abs() <= 1e-9, "{e}");
        assert!(l.dictionary > 0.0 && l.mimick > 0.0);
    }
}

#[test]
fn training_is_bitwise_reproducible_across_exec_modes() {
    let pair = small_pair();
    let data = TrainData {
        labels: Some(pair.labels.clone()),
        sources: vec![SourceCorpus { examples: pair.source_train.clone(), count: None }],
        dictionary: Some(pair.dictionary.clone()),
        ..Default::default()
    };
    let cfg = TrainConfig {
        variant: Variant::Dict,
        epochs: 2,
        dims: small_dims(),
        exec: ExecMode::Sequential,
        ..Default::default()
    };
    let a = caco::trainer::train(&cfg, &data).unwrap();
    let b = caco::trainer::train(&TrainConfig { exec: ExecMode::Parallel, ..cfg.clone() }, &data).unwrap();
    assert_eq!(param_bits(&a.model), param_bits(&b.model));
    assert_eq!(a.dictionary, b.dictionary);
}
