//! Model archives.
//!
//! An archive is a UTF-8 text header followed by a binary payload:
//!
//! ```text
//! CACO-ARCHIVE 1
//! endianness little
//! variant SRC
//! labels 4 GCAT ECAT MCAT CCAT
//! dims char_dim=10 lstm_hidden=40 word_dim=40 dan_layers=3 dan_hidden=100 dropout=0.1 dropout_input=false
//! chars 27 97 98 99 ...            (decimal code points, or "chars none")
//! lookup 0                         (followed by that many lines, one word each)
//! clwe none                        (or: clwe rows=V dim=d fingerprint=<hex> path=<path>)
//! params 12
//! param embedder.chars 28,10       (one line per parameter, in store order)
//! ...
//! payload <byte count>
//! <little-endian f64 values of every parameter, concatenated in header order>
//! ```
//!
//! The CLWE table of CLWE and COM models is not embedded; the header records
//! where it came from and a fingerprint, and loading fails if the table is
//! missing or differs.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{Model, ModelDims, ModelResources, Variant};
use crate::tensor::Tensor;
use crate::text::{load_embeddings, CharVocab, EmbeddingTable, LabelSet};

pub const MAGIC: &str = "CACO-ARCHIVE";
pub const VERSION: u32 = 1;

/// Where the frozen table of a CLWE/COM model lives.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClweRef {
    pub path: PathBuf,
    pub rows: usize,
    pub dim: usize,
    pub fingerprint: u64,
}

/// Serializes `model`. `clwe_path` is required for models with a frozen
/// table and ignored otherwise.
pub fn encode_model(model: &Model, clwe_path: Option<&Path>) -> Result<Vec<u8>> {
    let mut h = String::new();
    h.push_str(&format!("{MAGIC} {VERSION}\nendianness little\nvariant {}\n", model.variant));
    h.push_str(&format!("labels {}", model.labels.len()));
    for n in model.labels.names() {
        h.push(' ');
        h.push_str(n);
    }
    let d = &model.dims;
    h.push_str(&format!(
        "\ndims char_dim={} lstm_hidden={} word_dim={} dan_layers={} dan_hidden={} dropout={} dropout_input={}\n",
        d.char_dim, d.lstm_hidden, d.word_dim, d.dan_layers, d.dan_hidden, d.dropout, d.dropout_input
    ));
    match model.embedder.char_embedder() {
        Some(c) => {
            h.push_str(&format!("chars {}", c.vocab.chars().len()));
            for ch in c.vocab.chars() {
                h.push_str(&format!(" {}", *ch as u32));
            }
            h.push('\n');
        }
        None => h.push_str("chars none\n"),
    }
    match &model.embedder {
        crate::embedder::Embedder::Trainable(t) => {
            h.push_str(&format!("lookup {}\n", t.words.len()));
            for w in &t.words {
                h.push_str(w);
                h.push('\n');
            }
        }
        _ => h.push_str("lookup 0\n"),
    }
    match model.embedder.frozen_table() {
        Some(t) => {
            let path = clwe_path.ok_or_else(|| {
                Error::Archive(format!("variant {} needs the CLWE table path to be recorded", model.variant))
            })?;
            let p = path.to_str().filter(|s| !s.contains('\n')).ok_or_else(|| {
                Error::Archive(format!("CLWE path {} cannot be stored", path.display()))
            })?;
            h.push_str(&format!(
                "clwe rows={} dim={} fingerprint={:016x} path={p}\n",
                t.len(),
                t.dim(),
                t.fingerprint()
            ));
        }
        None => h.push_str("clwe none\n"),
    }
    h.push_str(&format!("params {}\n", model.params.len()));
    let mut count = 0usize;
    for (_, p) in model.params.iter() {
        let shape: Vec<String> = p.value.shape().iter().map(usize::to_string).collect();
        h.push_str(&format!("param {} {}\n", p.name, shape.join(",")));
        count += p.value.len();
    }
    h.push_str(&format!("payload {}\n", count * 8));
    let mut out = h.into_bytes();
    out.reserve(count * 8);
    for (_, p) in model.params.iter() {
        for v in p.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn save_model(model: &Model, path: impl AsRef<Path>, clwe_path: Option<&Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_model(model, clwe_path)?;
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

struct Header {
    variant: Variant,
    labels: LabelSet,
    dims: ModelDims,
    chars: Option<Vec<char>>,
    lookup: Vec<String>,
    clwe: Option<ClweRef>,
    params: Vec<(String, Vec<usize>)>,
    payload: usize,
}

struct Lines<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Lines<'a> {
    fn next(&mut self, what: &str) -> Result<&'a str> {
        let rest = &self.bytes[self.pos..];
        let end = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::Archive(format!("truncated header: missing {what}")))?;
        self.pos += end + 1;
        std::str::from_utf8(&rest[..end]).map_err(|_| Error::Archive(format!("{what} line is not UTF-8")))
    }

    fn keyed(&mut self, key: &str) -> Result<&'a str> {
        let line = self.next(key)?;
        match line.strip_prefix(key) {
            Some(rest) if rest.is_empty() || rest.starts_with(' ') => Ok(rest.trim_start()),
            _ => Err(Error::Archive(format!("expected {key:?}, found {line:?}"))),
        }
    }
}

fn num<T: std::str::FromStr>(s: &str, what: &str) -> Result<T> {
    s.parse().map_err(|_| Error::Archive(format!("bad {what}: {s:?}")))
}

fn parse_header(lines: &mut Lines) -> Result<Header> {
    let first = lines.next("magic")?;
    let version = first
        .strip_prefix(MAGIC)
        .map(str::trim)
        .ok_or_else(|| Error::Archive("not a model archive".into()))?;
    if version != VERSION.to_string() {
        return Err(Error::Archive(format!(
            "unsupported format version {version}; this build reads version {VERSION}"
        )));
    }
    if lines.keyed("endianness")? != "little" {
        return Err(Error::Archive("unsupported endianness".into()));
    }
    let variant: Variant = lines.keyed("variant")?.parse().map_err(|_| Error::Archive("unknown variant".into()))?;

    let mut it = lines.keyed("labels")?.split(' ');
    let n: usize = num(it.next().unwrap_or(""), "label count")?;
    let names: Vec<&str> = it.collect();
    if names.len() != n {
        return Err(Error::Archive("label count disagrees with label list".into()));
    }
    let labels = LabelSet::new(names).map_err(|e| Error::Archive(e.to_string()))?;

    let mut dims = ModelDims::default();
    for kv in lines.keyed("dims")?.split(' ') {
        let (k, v) = kv.split_once('=').ok_or_else(|| Error::Archive(format!("bad dims entry {kv:?}")))?;
        match k {
            "char_dim" => dims.char_dim = num(v, k)?,
            "lstm_hidden" => dims.lstm_hidden = num(v, k)?,
            "word_dim" => dims.word_dim = num(v, k)?,
            "dan_layers" => dims.dan_layers = num(v, k)?,
            "dan_hidden" => dims.dan_hidden = num(v, k)?,
            "dropout" => dims.dropout = num(v, k)?,
            "dropout_input" => dims.dropout_input = num(v, k)?,
            _ => return Err(Error::Archive(format!("unknown dims key {k:?}"))),
        }
    }

    let chars_line = lines.keyed("chars")?;
    let chars = if chars_line == "none" {
        None
    } else {
        let mut it = chars_line.split(' ');
        let n: usize = num(it.next().unwrap_or(""), "character count")?;
        let chars = it
            .map(|c| {
                num::<u32>(c, "code point")
                    .and_then(|u| char::from_u32(u).ok_or_else(|| Error::Archive(format!("invalid code point {u}"))))
            })
            .collect::<Result<Vec<char>>>()?;
        if chars.len() != n {
            return Err(Error::Archive("character count disagrees with list".into()));
        }
        Some(chars)
    };

    let n_lookup: usize = num(lines.keyed("lookup")?, "lookup size")?;
    let lookup = (0..n_lookup)
        .map(|_| lines.next("lookup word").map(str::to_string))
        .collect::<Result<Vec<_>>>()?;

    let clwe_line = lines.keyed("clwe")?;
    let clwe = if clwe_line == "none" {
        None
    } else {
        let mut parts = clwe_line.splitn(4, ' ');
        let mut field = |key: &str| -> Result<&str> {
            parts
                .next()
                .and_then(|p| p.strip_prefix(key))
                .and_then(|p| p.strip_prefix('='))
                .ok_or_else(|| Error::Archive(format!("clwe record lacks {key}")))
        };
        let rows = num(field("rows")?, "clwe rows")?;
        let dim = num(field("dim")?, "clwe dim")?;
        let fingerprint = u64::from_str_radix(field("fingerprint")?, 16)
            .map_err(|_| Error::Archive("bad clwe fingerprint".into()))?;
        let path = PathBuf::from(field("path")?);
        Some(ClweRef {
            path,
            rows,
            dim,
            fingerprint,
        })
    };

    let n_params: usize = num(lines.keyed("params")?, "parameter count")?;
    let mut params = Vec::with_capacity(n_params);
    for _ in 0..n_params {
        let rest = lines.keyed("param")?;
        let (name, shape) = rest
            .rsplit_once(' ')
            .ok_or_else(|| Error::Archive(format!("bad param record {rest:?}")))?;
        let shape = shape
            .split(',')
            .map(|s| num::<usize>(s, "shape extent"))
            .collect::<Result<Vec<_>>>()?;
        params.push((name.to_string(), shape));
    }
    let payload = num(lines.keyed("payload")?, "payload size")?;
    Ok(Header {
        variant,
        labels,
        dims,
        chars,
        lookup,
        clwe,
        params,
        payload,
    })
}

/// The CLWE record of an archive, if any, without decoding the parameters.
pub fn archive_clwe(bytes: &[u8]) -> Result<Option<ClweRef>> {
    Ok(parse_header(&mut Lines { bytes, pos: 0 })?.clwe)
}

/// Rebuilds a model. `clwe` must be supplied for archives that reference a
/// frozen table and must match the recorded fingerprint.
pub fn decode_model(bytes: &[u8], clwe: Option<Arc<EmbeddingTable>>) -> Result<Model> {
    let mut lines = Lines { bytes, pos: 0 };
    let h = parse_header(&mut lines)?;
    let body = &bytes[lines.pos..];
    if body.len() != h.payload {
        return Err(Error::Archive(format!(
            "payload is {} bytes, header declares {}",
            body.len(),
            h.payload
        )));
    }
    let declared: usize = h.params.iter().map(|(_, s)| s.iter().product::<usize>()).sum();
    if declared * 8 != h.payload {
        return Err(Error::Archive("shape records disagree with payload size".into()));
    }

    let clwe = match (&h.clwe, clwe) {
        (None, _) => None,
        (Some(r), None) => {
            return Err(Error::Archive(format!(
                "variant {} needs its frozen CLWE table ({})",
                h.variant,
                r.path.display()
            )))
        }
        (Some(r), Some(t)) => {
            if t.len() != r.rows || t.dim() != r.dim || t.fingerprint() != r.fingerprint {
                return Err(Error::Archive(format!(
                    "CLWE table does not match the one the model was trained with ({})",
                    r.path.display()
                )));
            }
            Some(t)
        }
    };
    let resources = ModelResources {
        vocab: h.chars.map(CharVocab::from_chars).transpose()?,
        clwe,
        lookup_words: h.variant.uses_target_labeled().then_some(h.lookup),
    };
    // Initialization draws are overwritten below; any seed will do.
    let mut model = Model::new(h.variant, h.labels, h.dims, resources, &mut ChaCha8Rng::seed_from_u64(0))
        .map_err(|e| Error::Archive(e.to_string()))?;
    if model.params.len() != h.params.len() {
        return Err(Error::Archive(format!(
            "archive has {} parameters, the model expects {}",
            h.params.len(),
            model.params.len()
        )));
    }
    let ids: Vec<_> = model.params.ids().collect();
    let mut offset = 0;
    for (id, (name, shape)) in ids.into_iter().zip(&h.params) {
        if model.params.name(id) != name || model.params.get(id).shape() != shape.as_slice() {
            return Err(Error::Archive(format!(
                "parameter {name} {shape:?} does not match expected {} {:?}",
                model.params.name(id),
                model.params.get(id).shape()
            )));
        }
        let n: usize = shape.iter().product();
        let data = body[offset..offset + n * 8]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        offset += n * 8;
        *model.params.get_mut(id) = Tensor::new(shape.clone(), data)?;
    }
    Ok(model)
}

/// Loads a model, reading its CLWE table from the recorded path if needed.
pub fn load_model(path: impl AsRef<Path>) -> Result<Model> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let clwe = match archive_clwe(&bytes)? {
        Some(r) => {
            if !r.path.exists() {
                return Err(Error::Archive(format!(
                    "{}: frozen CLWE table {} is missing",
                    path.display(),
                    r.path.display()
                )));
            }
            Some(Arc::new(load_embeddings(&r.path)?))
        }
        None => None,
    };
    decode_model(&bytes, clwe)
}

/// Loads a model with an explicitly supplied CLWE table.
pub fn load_model_with(path: impl AsRef<Path>, clwe: Option<Arc<EmbeddingTable>>) -> Result<Model> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_model(&bytes, clwe)
}
