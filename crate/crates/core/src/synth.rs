//! Synthetic related-language benchmark.
//!
//! A source language is drawn from consonant-vowel syllables. Each label owns
//! a family of keywords; a document carries a few keywords of its label among
//! shared filler words, so the label is decidable from word presence alone.
//! The target language is the source language passed through ordered
//! orthographic rewrite rules (`o -> uo` turns "corto" into "cuorto"), which
//! keeps cognates close in spelling while changing every surface form.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::{
    write_corpus, write_dictionary, write_embeddings, write_parallel, BilingualDictionary, Document, EmbeddingTable,
    LabelSet, LabeledExample, ParallelPair,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewriteRule {
    pub from: String,
    pub to: String,
    /// Chance that the rule fires on a given word, decided by a hash of the
    /// word, the seed and the rule position.
    #[serde(default = "one")]
    pub probability: f64,
}

fn one() -> f64 {
    1.0
}

impl RewriteRule {
    pub fn new(from: &str, to: &str) -> Self {
        RewriteRule {
            from: from.into(),
            to: to.into(),
            probability: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub seed: u64,
    pub labels: usize,
    pub keywords_per_label: usize,
    pub fillers: usize,
    pub doc_len: usize,
    pub min_keywords: usize,
    pub max_keywords: usize,
    pub min_syllables: usize,
    pub max_syllables: usize,
    /// Chance that a syllable carries a second vowel, so vowel pairs such as
    /// those produced by `e -> ie` also occur in the source language.
    pub diphthong_rate: f64,
    /// Syllables of a stem shared by every keyword of a family; the
    /// syllable range then counts the syllables after the stem. 0 disables
    /// stems.
    pub stem_syllables: usize,
    pub rules: Vec<RewriteRule>,
    /// Regenerate words the rules leave unchanged, so no surface form is
    /// shared between the two languages.
    pub require_change: bool,
    pub source_train: usize,
    pub target_test: usize,
    pub target_train: usize,
    pub parallel: usize,
    pub embedding_dim: usize,
    pub embedding_noise: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            seed: 1,
            labels: 4,
            keywords_per_label: 12,
            fillers: 150,
            doc_len: 8,
            min_keywords: 2,
            max_keywords: 3,
            min_syllables: 1,
            max_syllables: 2,
            diphthong_rate: 0.0,
            stem_syllables: 1,
            rules: vec![RewriteRule::new("o", "uo"), RewriteRule::new("e", "ie")],
            require_change: true,
            source_train: 1500,
            target_test: 200,
            target_train: 0,
            parallel: 0,
            embedding_dim: 40,
            embedding_noise: 0.1,
        }
    }
}

const CONSONANTS: &[char] = &['b', 'c', 'd', 'f', 'g', 'l', 'm', 'n', 'p', 'r', 's', 't', 'v'];
const VOWELS: &[char] = &['a', 'e', 'i', 'o', 'u'];

fn fnv(parts: &[&[u8]]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for part in parts {
        for &b in *part {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        h ^= 0xff;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Applies `rules` in order. Whether a rule fires is a pure function of
/// (word, seed, rule position).
pub fn rewrite(word: &str, rules: &[RewriteRule], seed: u64) -> String {
    let mut out = word.to_string();
    for (i, rule) in rules.iter().enumerate() {
        if rule.from.is_empty() || !out.contains(&rule.from) {
            continue;
        }
        let fires = rule.probability >= 1.0 || {
            let h = fnv(&[word.as_bytes(), &seed.to_le_bytes(), &(i as u64).to_le_bytes()]);
            ((h >> 11) as f64 / (1u64 << 53) as f64) < rule.probability
        };
        if fires {
            out = out.replace(&rule.from, &rule.to);
        }
    }
    out
}

/// Everything the generator produces, in memory.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticPair {
    pub labels: LabelSet,
    /// Keyword families, one per label.
    pub keywords: Vec<Vec<String>>,
    pub fillers: Vec<String>,
    pub source_train: Vec<LabeledExample>,
    pub target_test: Vec<LabeledExample>,
    pub target_train: Vec<LabeledExample>,
    /// Target-language document paired with its source-language original.
    pub parallel: Vec<ParallelPair>,
    /// Source word to target word for the whole source vocabulary.
    pub dictionary: BilingualDictionary,
    /// Source-language vectors: label indicator for keywords plus noise.
    pub embeddings: EmbeddingTable,
}

impl SyntheticPair {
    pub fn source_vocabulary(&self) -> Vec<String> {
        self.dictionary.pairs.iter().map(|(s, _)| s.clone()).collect()
    }

    pub fn target_vocabulary(&self) -> Vec<String> {
        self.dictionary.pairs.iter().map(|(_, t)| t.clone()).collect()
    }

    pub fn translate(&self, doc: &Document) -> Result<Document> {
        let map: HashMap<&str, &str> = self
            .dictionary
            .pairs
            .iter()
            .map(|(s, t)| (s.as_str(), t.as_str()))
            .collect();
        Document::new(doc.words().iter().map(|w| map.get(w.as_str()).map_or(w.clone(), |t| t.to_string())).collect())
    }
}

fn validate(spec: &SyntheticSpec) -> Result<()> {
    let bad = |m: &str| Err(Error::Synthetic(m.to_string()));
    if spec.labels == 0 || spec.keywords_per_label == 0 || spec.doc_len == 0 {
        return bad("labels, keywords_per_label and doc_len must be positive");
    }
    if spec.source_train == 0 || spec.target_test == 0 {
        return bad("corpus sizes must be positive");
    }
    if spec.min_keywords == 0 || spec.min_keywords > spec.max_keywords || spec.max_keywords > spec.doc_len {
        return bad("need 1 <= min_keywords <= max_keywords <= doc_len");
    }
    if spec.max_keywords > spec.keywords_per_label {
        return bad("max_keywords exceeds keywords_per_label");
    }
    if spec.max_keywords < spec.doc_len && spec.fillers == 0 {
        return bad("documents need filler words");
    }
    if spec.min_syllables == 0 || spec.min_syllables > spec.max_syllables {
        return bad("need 1 <= min_syllables <= max_syllables");
    }
    if spec.embedding_dim < spec.labels {
        return bad("embedding_dim must be at least the number of labels");
    }
    if !(0.0..=1.0).contains(&spec.diphthong_rate) {
        return bad("diphthong_rate must lie in [0, 1]");
    }
    if spec.rules.iter().any(|r| !(0.0..=1.0).contains(&r.probability)) {
        return bad("rule probabilities must lie in [0, 1]");
    }
    Ok(())
}

/// Builds the pair described by `spec`. The result depends only on `spec`.
pub fn generate(spec: &SyntheticSpec) -> Result<SyntheticPair> {
    validate(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let needed = spec.labels * spec.keywords_per_label + spec.fillers;
    let syllable = |rng: &mut ChaCha8Rng, w: &mut String| {
        w.push(*CONSONANTS.choose(rng).unwrap());
        w.push(*VOWELS.choose(rng).unwrap());
        if spec.diphthong_rate > 0.0 && rng.gen_bool(spec.diphthong_rate) {
            w.push(*VOWELS.choose(rng).unwrap());
        }
    };
    // Distinct stems, one per keyword family, none a prefix of another.
    let mut stems: Vec<String> = Vec::new();
    if spec.stem_syllables > 0 {
        let mut attempts = 0usize;
        while stems.len() < spec.labels {
            attempts += 1;
            if attempts > 100_000 {
                return Err(Error::Synthetic("could not build distinct family stems".into()));
            }
            let mut stem = String::new();
            for _ in 0..spec.stem_syllables {
                syllable(&mut rng, &mut stem);
            }
            if !stems.iter().any(|s| s.starts_with(&stem) || stem.starts_with(s.as_str())) {
                stems.push(stem);
            }
        }
    }
    let mut seen = BTreeSet::new();
    let mut words = Vec::with_capacity(needed);
    let mut attempts = 0usize;
    while words.len() < needed {
        attempts += 1;
        if attempts > needed * 1000 + 10_000 {
            return Err(Error::Synthetic(format!(
                "could only build {} of {needed} distinct words; widen the syllable range or relax require_change",
                words.len()
            )));
        }
        let family = (words.len() < spec.labels * spec.keywords_per_label).then(|| words.len() / spec.keywords_per_label);
        let mut w = match family {
            Some(f) if !stems.is_empty() => stems[f].clone(),
            _ => String::new(),
        };
        for _ in 0..rng.gen_range(spec.min_syllables..=spec.max_syllables) {
            syllable(&mut rng, &mut w);
        }
        if seen.contains(&w) {
            continue;
        }
        if family.is_none() && stems.iter().any(|s| w.starts_with(s.as_str())) {
            continue;
        }
        if spec.require_change && !spec.rules.is_empty() && rewrite(&w, &spec.rules, spec.seed) == w {
            continue;
        }
        seen.insert(w.clone());
        words.push(w);
    }
    let keywords: Vec<Vec<String>> = words[..spec.labels * spec.keywords_per_label]
        .chunks(spec.keywords_per_label)
        .map(|c| c.to_vec())
        .collect();
    let fillers = words[spec.labels * spec.keywords_per_label..].to_vec();

    // Rewrite map and collapse check.
    let mut owner: BTreeMap<String, (String, Option<usize>)> = BTreeMap::new();
    let mut pairs = Vec::with_capacity(words.len());
    let family_of = |i: usize| (i < spec.labels * spec.keywords_per_label).then(|| i / spec.keywords_per_label);
    for (i, w) in words.iter().enumerate() {
        let t = rewrite(w, &spec.rules, spec.seed);
        let fam = family_of(i);
        if let Some((other, other_fam)) = owner.get(&t) {
            if fam != *other_fam && (fam.is_some() || other_fam.is_some()) {
                return Err(Error::Synthetic(format!(
                    "rules map {other:?} and {w:?} from different keyword families to the same form {t:?}"
                )));
            }
        }
        owner.insert(t.clone(), (w.clone(), fam));
        pairs.push((w.clone(), t));
    }
    let dictionary = BilingualDictionary { pairs };
    let labels = LabelSet::new((0..spec.labels).map(|i| format!("L{i}")))?;

    let make_docs = |n: usize, rng: &mut ChaCha8Rng| -> Result<Vec<LabeledExample>> {
        let mut ys: Vec<usize> = (0..n).map(|i| i % spec.labels).collect();
        ys.shuffle(rng);
        ys.into_iter()
            .map(|y| {
                let k = rng.gen_range(spec.min_keywords..=spec.max_keywords);
                let mut doc: Vec<String> = keywords[y].choose_multiple(rng, k).cloned().collect();
                while doc.len() < spec.doc_len {
                    doc.push(fillers.choose(rng).unwrap().clone());
                }
                doc.shuffle(rng);
                Ok(LabeledExample {
                    document: Document::new(doc)?,
                    label: y,
                })
            })
            .collect()
    };
    let source_train = make_docs(spec.source_train, &mut rng)?;
    let test_src = make_docs(spec.target_test, &mut rng)?;
    let train_src = make_docs(spec.target_train, &mut rng)?;
    let parallel_src = make_docs(spec.parallel, &mut rng)?;

    let embeddings = {
        let noise = spec.embedding_noise;
        let rows = words
            .iter()
            .enumerate()
            .map(|(i, w)| {
                let mut v: Vec<f64> = (0..spec.embedding_dim).map(|_| rng.gen_range(-noise..=noise)).collect();
                if let Some(f) = family_of(i) {
                    v[f] += 1.0;
                }
                (w.clone(), v)
            })
            .collect();
        EmbeddingTable::new(spec.embedding_dim, rows)?
    };

    let mut pair = SyntheticPair {
        labels,
        keywords,
        fillers,
        source_train,
        target_test: Vec::new(),
        target_train: Vec::new(),
        parallel: Vec::new(),
        dictionary,
        embeddings,
    };
    let to_target = |p: &SyntheticPair, docs: Vec<LabeledExample>| -> Result<Vec<LabeledExample>> {
        docs.into_iter()
            .map(|e| {
                Ok(LabeledExample {
                    document: p.translate(&e.document)?,
                    label: e.label,
                })
            })
            .collect()
    };
    pair.target_test = to_target(&pair, test_src)?;
    pair.target_train = to_target(&pair, train_src)?;
    pair.parallel = parallel_src
        .into_iter()
        .map(|e| {
            Ok(ParallelPair {
                source: pair.translate(&e.document)?,
                reference: e.document,
            })
        })
        .collect::<Result<_>>()?;
    Ok(pair)
}

/// Paths written by [`write_pair`].
#[derive(Clone, Debug)]
pub struct SyntheticFiles {
    pub source_train: PathBuf,
    pub target_test: PathBuf,
    pub dictionary: PathBuf,
    pub embeddings: PathBuf,
    pub target_train: Option<PathBuf>,
    pub parallel: Option<PathBuf>,
}

pub fn write_pair(pair: &SyntheticPair, dir: impl AsRef<Path>) -> Result<SyntheticFiles> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let files = SyntheticFiles {
        source_train: dir.join("source_train.tsv"),
        target_test: dir.join("target_test.tsv"),
        dictionary: dir.join("dictionary.tsv"),
        embeddings: dir.join("embeddings.txt"),
        target_train: (!pair.target_train.is_empty()).then(|| dir.join("target_train.tsv")),
        parallel: (!pair.parallel.is_empty()).then(|| dir.join("parallel.tsv")),
    };
    write_corpus(&files.source_train, &pair.source_train, &pair.labels)?;
    write_corpus(&files.target_test, &pair.target_test, &pair.labels)?;
    write_dictionary(&files.dictionary, &pair.dictionary)?;
    write_embeddings(&files.embeddings, &pair.embeddings)?;
    if let Some(p) = &files.target_train {
        write_corpus(p, &pair.target_train, &pair.labels)?;
    }
    if let Some(p) = &files.parallel {
        write_parallel(p, &pair.parallel)?;
    }
    Ok(files)
}
