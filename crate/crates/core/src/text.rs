//! Tokenization, vocabularies and the plain-text resource formats.
//!
//! All files are UTF-8:
//!
//! * labeled corpus: `label<TAB>text` per line
//! * bilingual dictionary: `source_word<TAB>target_word` per line
//! * parallel corpus: `source_text<TAB>reference_text` per line
//! * embedding table: header `V d`, then `V` lines `word v1 … vd`
//!
//! Blank lines are ignored everywhere.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};

/// A tokenized document: a non-empty sequence of non-empty words.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Document {
    words: Vec<String>,
}

impl Document {
    pub fn new(words: Vec<String>) -> Result<Self> {
        if words.is_empty() || words.iter().any(|w| w.is_empty()) {
            return Err(Error::EmptyDocument);
        }
        Ok(Document { words })
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    /// Words joined by single spaces.
    pub fn text(&self) -> String {
        self.words.join(" ")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Tokenizer {
    pub lowercase: bool,
}

impl Default for Tokenizer {
    fn default() -> Self {
        Tokenizer { lowercase: true }
    }
}

impl Tokenizer {
    /// Lowercases (when enabled), splits on whitespace and strips
    /// non-alphanumeric characters from both ends of each token.
    pub fn tokenize(&self, text: &str) -> Result<Document> {
        let text = if self.lowercase {
            text.to_lowercase()
        } else {
            text.to_string()
        };
        let words: Vec<String> = text
            .split_whitespace()
            .map(|t| t.trim_matches(|c: char| !c.is_alphanumeric()))
            .filter(|t| !t.is_empty())
            .map(str::to_string)
            .collect();
        Document::new(words)
    }
}

pub fn tokenize(text: &str) -> Result<Document> {
    Tokenizer::default().tokenize(text)
}

/// Ordered set of class names.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelSet {
    names: Vec<String>,
}

impl LabelSet {
    pub fn new<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Result<Self> {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        if names.is_empty() {
            return Err(Error::Config("label set is empty".into()));
        }
        let unique: BTreeSet<&String> = names.iter().collect();
        if unique.len() != names.len() {
            return Err(Error::Config("label set contains duplicates".into()));
        }
        if let Some(bad) = names.iter().find(|n| n.is_empty() || n.chars().any(char::is_whitespace)) {
            return Err(Error::Config(format!("invalid label name {bad:?}")));
        }
        Ok(LabelSet { names })
    }

    /// Sorted set of labels appearing in the first column of corpus files.
    pub fn infer<P: AsRef<Path>>(paths: &[P]) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for path in paths {
            let path = path.as_ref();
            let content = read(path)?;
            for (n, line) in content.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let (label, _) = line
                    .split_once('\t')
                    .ok_or_else(|| Error::parse(path, n + 1, "missing tab between label and text"))?;
                seen.insert(label.trim().to_string());
            }
        }
        LabelSet::new(seen)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn name(&self, index: usize) -> &str {
        &self.names[index]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabeledExample {
    pub document: Document,
    pub label: usize,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, content: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, content).map_err(|e| Error::io(path, e))
}

pub fn parse_corpus(content: &str, origin: &Path, labels: &LabelSet, tok: &Tokenizer) -> Result<Vec<LabeledExample>> {
    let mut out = Vec::new();
    for (n, line) in content.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (label, text) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse(origin, n + 1, "missing tab between label and text"))?;
        let label = labels
            .index_of(label.trim())
            .ok_or_else(|| Error::parse(origin, n + 1, format!("unknown label {:?}", label.trim())))?;
        let document = tok
            .tokenize(text)
            .map_err(|_| Error::parse(origin, n + 1, "document has no tokens"))?;
        out.push(LabeledExample { document, label });
    }
    Ok(out)
}

pub fn load_corpus(path: impl AsRef<Path>, labels: &LabelSet, tok: &Tokenizer) -> Result<Vec<LabeledExample>> {
    let path = path.as_ref();
    parse_corpus(&read(path)?, path, labels, tok)
}

pub fn write_corpus(path: impl AsRef<Path>, examples: &[LabeledExample], labels: &LabelSet) -> Result<()> {
    let mut s = String::new();
    for ex in examples {
        let _ = writeln!(s, "{}\t{}", labels.name(ex.label), ex.document.text());
    }
    write(path.as_ref(), &s)
}

/// Character inventory shared by every language: sorted code points followed
/// by a single UNK entry at index `len() - 1`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CharVocab {
    chars: Vec<char>,
    index: HashMap<char, usize>,
}

impl CharVocab {
    /// Union of every character in `words`.
    pub fn from_words<'a>(words: impl IntoIterator<Item = &'a str>) -> Self {
        let set: BTreeSet<char> = words.into_iter().flat_map(str::chars).collect();
        Self::from_sorted(set.into_iter().collect())
    }

    /// Rebuilds a vocabulary from its character list; rejects unsorted or
    /// repeated characters.
    pub fn from_chars(chars: Vec<char>) -> Result<Self> {
        if chars.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Archive("character list is not strictly increasing".into()));
        }
        Ok(Self::from_sorted(chars))
    }

    fn from_sorted(chars: Vec<char>) -> Self {
        let index = chars.iter().enumerate().map(|(i, &c)| (c, i)).collect();
        CharVocab { chars, index }
    }

    /// Number of entries including UNK.
    pub fn len(&self) -> usize {
        self.chars.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn unk(&self) -> usize {
        self.chars.len()
    }

    pub fn chars(&self) -> &[char] {
        &self.chars
    }

    pub fn index(&self, c: char) -> usize {
        self.index.get(&c).copied().unwrap_or(self.unk())
    }

    pub fn encode(&self, word: &str) -> Vec<usize> {
        word.chars().map(|c| self.index(c)).collect()
    }
}

/// Builds the shared character vocabulary from every resource a model sees.
pub fn build_char_vocab(
    corpora: &[&[LabeledExample]],
    dictionaries: &[&BilingualDictionary],
    tables: &[&EmbeddingTable],
    extra_documents: &[&Document],
) -> CharVocab {
    let docs = corpora
        .iter()
        .flat_map(|c| c.iter().map(|e| &e.document))
        .chain(extra_documents.iter().copied())
        .flat_map(|d| d.words().iter().map(String::as_str));
    let dict = dictionaries
        .iter()
        .flat_map(|d| d.pairs.iter().flat_map(|(s, t)| [s.as_str(), t.as_str()]));
    let table = tables.iter().flat_map(|t| t.words().iter().map(String::as_str));
    CharVocab::from_words(docs.chain(dict).chain(table))
}

fn check_word(word: &str, origin: &Path, line: usize) -> Result<String> {
    if word.is_empty() || word.chars().any(char::is_whitespace) {
        return Err(Error::parse(origin, line, format!("invalid word {word:?}")));
    }
    Ok(word.to_string())
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BilingualDictionary {
    pub pairs: Vec<(String, String)>,
}

impl BilingualDictionary {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Uniform sample of `n` pairs without replacement; the order is fixed by
    /// the generator state.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Self> {
        let idx = sample_indices(self.pairs.len(), n, rng)?;
        Ok(BilingualDictionary {
            pairs: idx.into_iter().map(|i| self.pairs[i].clone()).collect(),
        })
    }
}

pub fn parse_dictionary(content: &str, origin: &Path) -> Result<BilingualDictionary> {
    let mut pairs = Vec::new();
    for (n, line) in content.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (s, t) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse(origin, n + 1, "missing tab between source and target word"))?;
        pairs.push((check_word(s.trim(), origin, n + 1)?, check_word(t.trim(), origin, n + 1)?));
    }
    Ok(BilingualDictionary { pairs })
}

pub fn load_dictionary(path: impl AsRef<Path>) -> Result<BilingualDictionary> {
    let path = path.as_ref();
    parse_dictionary(&read(path)?, path)
}

pub fn write_dictionary(path: impl AsRef<Path>, dict: &BilingualDictionary) -> Result<()> {
    let mut s = String::new();
    for (a, b) in &dict.pairs {
        let _ = writeln!(s, "{a}\t{b}");
    }
    write(path.as_ref(), &s)
}

pub fn sample_dictionary<R: Rng + ?Sized>(
    dict: &BilingualDictionary,
    n: usize,
    rng: &mut R,
) -> Result<BilingualDictionary> {
    dict.sample(n, rng)
}

/// Uniform sample of `n` distinct indices from `0..len`.
pub fn sample_indices<R: Rng + ?Sized>(len: usize, n: usize, rng: &mut R) -> Result<Vec<usize>> {
    if n > len {
        return Err(Error::Oversample {
            requested: n,
            available: len,
        });
    }
    Ok(rand::seq::index::sample(rng, len, n).into_vec())
}

/// Word vectors of a single dimension with unique words.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    words: Vec<String>,
    vectors: Vec<Vec<f64>>,
    index: HashMap<String, usize>,
}

impl EmbeddingTable {
    pub fn new(dim: usize, rows: Vec<(String, Vec<f64>)>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("embedding dimension must be positive".into()));
        }
        let mut words = Vec::with_capacity(rows.len());
        let mut vectors = Vec::with_capacity(rows.len());
        let mut index = HashMap::with_capacity(rows.len());
        for (w, v) in rows {
            if v.len() != dim {
                return Err(Error::Dimension {
                    what: format!("embedding row {w:?}"),
                    expected: dim,
                    found: v.len(),
                });
            }
            if index.insert(w.clone(), words.len()).is_some() {
                return Err(Error::Config(format!("duplicate embedding word {w:?}")));
            }
            words.push(w);
            vectors.push(v);
        }
        Ok(EmbeddingTable {
            dim,
            words,
            vectors,
            index,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn vector(&self, i: usize) -> &[f64] {
        &self.vectors[i]
    }

    pub fn get(&self, word: &str) -> Option<&[f64]> {
        self.index.get(word).map(|&i| self.vectors[i].as_slice())
    }

    pub fn rows(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.words.iter().map(String::as_str).zip(self.vectors.iter().map(Vec::as_slice))
    }

    /// 64-bit FNV-1a over the serialized table, used to pin archives to the
    /// exact frozen table they were trained with.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        let mut feed = |bytes: &[u8]| {
            for b in bytes {
                h ^= *b as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
        };
        feed(&(self.dim as u64).to_le_bytes());
        for (w, v) in self.rows() {
            feed(w.as_bytes());
            feed(&[0]);
            for x in v {
                feed(&x.to_le_bytes());
            }
        }
        h
    }
}

pub fn parse_embeddings(content: &str, origin: &Path) -> Result<EmbeddingTable> {
    let mut lines = content.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| Error::parse(origin, 1, "missing \"V d\" header"))?;
    let mut hdr = header.split_whitespace();
    let parse_usize = |s: Option<&str>| s.and_then(|s| s.parse::<usize>().ok());
    let (rows, dim) = match (parse_usize(hdr.next()), parse_usize(hdr.next()), hdr.next()) {
        (Some(v), Some(d), None) => (v, d),
        _ => return Err(Error::parse(origin, 1, format!("bad header {header:?}, expected \"V d\""))),
    };
    let mut out = Vec::with_capacity(rows);
    let mut seen = HashMap::new();
    for (n, line) in lines {
        let line_no = n + 1;
        if out.len() == rows {
            return Err(Error::parse(origin, line_no, format!("more than the {rows} rows declared in the header")));
        }
        let mut fields = line.split_whitespace();
        let word = fields.next().expect("non-blank line").to_string();
        let values = fields
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<Vec<f64>, _>>()
            .map_err(|e| Error::parse(origin, line_no, format!("bad number: {e}")))?;
        if values.len() != dim {
            return Err(Error::parse(
                origin,
                line_no,
                format!("row {word:?} has {} values, header declares {dim}", values.len()),
            ));
        }
        if let Some(prev) = seen.insert(word.clone(), line_no) {
            return Err(Error::parse(origin, line_no, format!("duplicate word {word:?} (first on line {prev})")));
        }
        out.push((word, values));
    }
    if out.len() != rows {
        return Err(Error::parse(
            origin,
            1,
            format!("header declares {rows} rows, file has {}", out.len()),
        ));
    }
    EmbeddingTable::new(dim, out)
}

pub fn load_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingTable> {
    let path = path.as_ref();
    parse_embeddings(&read(path)?, path)
}

pub fn format_embeddings(table: &EmbeddingTable) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{} {}", table.len(), table.dim());
    for (w, v) in table.rows() {
        s.push_str(w);
        for x in v {
            // `{}` on f64 prints the shortest string that parses back exactly.
            let _ = write!(s, " {x}");
        }
        s.push('\n');
    }
    s
}

pub fn write_embeddings(path: impl AsRef<Path>, table: &EmbeddingTable) -> Result<()> {
    write(path.as_ref(), &format_embeddings(table))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParallelPair {
    pub source: Document,
    pub reference: Document,
}

pub fn parse_parallel(content: &str, origin: &Path, tok: &Tokenizer) -> Result<Vec<ParallelPair>> {
    let mut out = Vec::new();
    for (n, line) in content.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (s, r) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse(origin, n + 1, "missing tab between source and reference text"))?;
        let source = tok
            .tokenize(s)
            .map_err(|_| Error::parse(origin, n + 1, "empty source side"))?;
        let reference = tok
            .tokenize(r)
            .map_err(|_| Error::parse(origin, n + 1, "empty reference side"))?;
        out.push(ParallelPair { source, reference });
    }
    Ok(out)
}

pub fn load_parallel(path: impl AsRef<Path>, tok: &Tokenizer) -> Result<Vec<ParallelPair>> {
    let path = path.as_ref();
    parse_parallel(&read(path)?, path, tok)
}

pub fn write_parallel(path: impl AsRef<Path>, pairs: &[ParallelPair]) -> Result<()> {
    let mut s = String::new();
    for p in pairs {
        let _ = writeln!(s, "{}\t{}", p.source.text(), p.reference.text());
    }
    write(path.as_ref(), &s)
}

/// Reads a word list: one word per line, first whitespace-separated field.
pub fn load_word_list(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let path = path.as_ref();
    Ok(read(path)?
        .lines()
        .filter_map(|l| l.split_whitespace().next())
        .map(str::to_string)
        .collect())
}
