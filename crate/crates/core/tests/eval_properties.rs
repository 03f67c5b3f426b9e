use caco::eval::{accuracy, accuracy_with, word_translate, Metric};
use caco::model::ModelResources;
use caco::synth::{generate, write_pair, SyntheticSpec};
use caco::text::{CharVocab, EmbeddingTable, LabelSet};
use caco::{ExecMode, Model, ModelDims, Variant};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random orthogonal matrix by Gram-Schmidt on Gaussian-ish columns.
fn rotation(n: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut q: Vec<Vec<f64>> = Vec::with_capacity(n);
    while q.len() < n {
        let mut v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        for u in &q {
            let d: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(u).for_each(|(a, b)| *a -= d * b);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            q.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    q
}

fn rotate(table: &EmbeddingTable, r: &[Vec<f64>]) -> EmbeddingTable {
    let rows = table
        .rows()
        .map(|(w, v)| (w.to_string(), r.iter().map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum()).collect()))
        .collect();
    EmbeddingTable::new(table.dim(), rows).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn translation_survives_a_common_rotation(seed in 0u64..10_000, n in 5usize..40, noise in 0.05f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dim = 8;
        let mut src = Vec::new();
        let mut tgt = Vec::new();
        let mut gold = Vec::new();
        for i in 0..n {
            let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let t: Vec<f64> = v.iter().map(|x| x + noise * rng.gen_range(-1.0..1.0)).collect();
            src.push((format!("s{i:03}"), v));
            tgt.push((format!("t{i:03}"), t));
            gold.push((format!("s{i:03}"), format!("t{i:03}")));
        }
        let s = EmbeddingTable::new(dim, src).unwrap();
        let t = EmbeddingTable::new(dim, tgt).unwrap();
        let r = rotation(dim, &mut rng);
        let before = word_translate(&s, &t, &gold, Metric::Euclidean, ExecMode::Sequential).unwrap();
        let after = word_translate(&rotate(&s, &r), &rotate(&t, &r), &gold, Metric::Euclidean, ExecMode::Sequential).unwrap();
        prop_assert_eq!(before, after);
    }

    #[test]
    fn accuracy_ignores_test_order(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let labels = 4;
        let test: Vec<caco::text::LabeledExample> = (0..50)
            .map(|i| caco::text::LabeledExample {
                document: caco::text::tokenize(&format!("w{} x{}", rng.gen_range(0..9), i % 7)).unwrap(),
                label: rng.gen_range(0..labels),
            })
            .collect();
        let predict = |d: &caco::text::Document| Ok(d.words()[0].len() % labels + d.words()[1].len() % 2);
        let a = accuracy_with(&test, labels + 1, ExecMode::Sequential, predict).unwrap();
        let mut shuffled = test.clone();
        shuffled.shuffle(&mut rng);
        let b = accuracy_with(&shuffled, labels + 1, ExecMode::Sequential, predict).unwrap();
        prop_assert_eq!(a.correct, b.correct);
        prop_assert_eq!(a.confusion, b.confusion);
    }
}

#[test]
fn identical_sets_still_translate_perfectly_after_rotation() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let rows: Vec<(String, Vec<f64>)> =
        (0..20).map(|i| (format!("w{i:02}"), (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect())).collect();
    let s = EmbeddingTable::new(6, rows.clone()).unwrap();
    let t = EmbeddingTable::new(6, rows.iter().map(|(w, v)| (format!("t{w}"), v.clone())).collect()).unwrap();
    let gold: Vec<(String, String)> = rows.iter().map(|(w, _)| (w.clone(), format!("t{w}"))).collect();
    let r = rotation(6, &mut rng);
    let p = word_translate(&rotate(&s, &r), &rotate(&t, &r), &gold, Metric::Euclidean, ExecMode::Sequential).unwrap();
    assert_eq!(p.precision_at_1(), 1.0);
}

#[test]
fn model_accuracy_ignores_test_order() {
    let pair = generate(&SyntheticSpec {
        seed: 12,
        source_train: 8,
        target_test: 120,
        ..Default::default()
    })
    .unwrap();
    let model = Model::new(
        Variant::Src,
        LabelSet::new(["L0", "L1", "L2", "L3"]).unwrap(),
        ModelDims::default(),
        ModelResources {
            vocab: Some(CharVocab::from_words(pair.target_vocabulary().iter().map(String::as_str))),
            ..Default::default()
        },
        &mut ChaCha8Rng::seed_from_u64(1),
    )
    .unwrap();
    let a = accuracy(&model, &pair.target_test, ExecMode::Sequential).unwrap();
    let mut shuffled = pair.target_test.clone();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(2));
    let b = accuracy(&model, &shuffled, ExecMode::Parallel).unwrap();
    assert_eq!(a.correct, b.correct);
    assert_eq!(a.confusion, b.confusion);
}

#[test]
fn synthetic_benchmark_files_are_reproducible() {
    let spec = SyntheticSpec {
        seed: 21,
        parallel: 10,
        target_train: 12,
        ..Default::default()
    };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let fa = write_pair(&generate(&spec).unwrap(), a.path()).unwrap();
    let fb = write_pair(&generate(&spec).unwrap(), b.path()).unwrap();
    for (x, y) in [
        (&fa.source_train, &fb.source_train),
        (&fa.target_test, &fb.target_test),
        (&fa.dictionary, &fb.dictionary),
        (&fa.embeddings, &fb.embeddings),
        (fa.parallel.as_ref().unwrap(), fb.parallel.as_ref().unwrap()),
        (fa.target_train.as_ref().unwrap(), fb.target_train.as_ref().unwrap()),
    ] {
        assert_eq!(std::fs::read(x).unwrap(), std::fs::read(y).unwrap(), "{}", x.display());
    }
}
