//! Datasets, embeddings, and a deterministic hash embedder for tests.
//!
//! A dataset is JSON-lines, one example per line:
//! `{"id":7,"input":"...","output":"...","input_tokens":3,"output_tokens":1}`.
//! Token counts are optional on load; missing counts are recomputed by
//! whitespace tokenization (`str::split_whitespace`).
//!
//! Embeddings come in two interchangeable formats, sniffed by magic bytes:
//! - JSON-lines: `{"id":7,"vector":[0.1,0.2,...]}`
//! - binary: magic `ERSE`, version u32 LE = 1, count u64 LE, dim u32 LE,
//!   then `count` records of (id u64 LE, dim × f32 LE).

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const EMBEDDING_MAGIC: &[u8; 4] = b"ERSE";
pub const EMBEDDING_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct Example {
    pub id: u64,
    pub input: String,
    pub output: String,
    pub input_tokens: u64,
    pub output_tokens: u64,
}

/// Number of whitespace-separated tokens. This is the token model used for
/// all cost accounting in this crate; a real deployment would substitute the
/// serving model's tokenizer.
pub fn whitespace_tokens(text: &str) -> u64 {
    text.split_whitespace().count() as u64
}

/// Examples keyed by id, without embeddings. BTreeMap so that every
/// iteration in the crate sees ascending-id order.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub examples: BTreeMap<u64, Example>,
}

/// A dataset joined with one embedding vector per example.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub examples: BTreeMap<u64, Example>,
    pub embeddings: BTreeMap<u64, Vec<f32>>,
    pub dim: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn insert(&mut self, ex: Example) -> Result<()> {
        if self.examples.contains_key(&ex.id) {
            return Err(Error::DuplicateId(ex.id));
        }
        self.examples.insert(ex.id, ex);
        Ok(())
    }
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// Ascending ids.
    pub fn ids(&self) -> Vec<u64> {
        self.examples.keys().copied().collect()
    }

    pub fn embedding(&self, id: u64) -> Result<&[f32]> {
        self.embeddings
            .get(&id)
            .map(|v| v.as_slice())
            .ok_or(Error::MissingEmbedding(id))
    }

    pub fn example(&self, id: u64) -> Result<&Example> {
        self.examples.get(&id).ok_or(Error::UnknownId(id))
    }

    /// Clone of this corpus without `victim`. Used by replay oracles.
    pub fn without(&self, victim: u64) -> Corpus {
        let mut c = self.clone();
        c.examples.remove(&victim);
        c.embeddings.remove(&victim);
        c
    }
}

#[derive(Deserialize)]
struct ExampleLine {
    id: u64,
    input: String,
    output: String,
    input_tokens: Option<u64>,
    output_tokens: Option<u64>,
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let file = std::fs::File::open(path)?;
    let mut ds = Dataset::default();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ExampleLine = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: lineno + 1,
            msg: e.to_string(),
        })?;
        ds.insert(Example {
            id: rec.id,
            input_tokens: rec.input_tokens.unwrap_or_else(|| whitespace_tokens(&rec.input)),
            output_tokens: rec.output_tokens.unwrap_or_else(|| whitespace_tokens(&rec.output)),
            input: rec.input,
            output: rec.output,
        })?;
    }
    Ok(ds)
}

pub fn save_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    for ex in ds.examples.values() {
        serde_json::to_writer(&mut w, ex)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct EmbeddingLine {
    id: u64,
    vector: Vec<f32>,
}

/// Load embeddings (either format) and join them onto `dataset`.
///
/// Every dataset id must get exactly one finite vector of one common
/// dimension, and every embedding id must exist in the dataset.
pub fn load_embeddings(dataset: &Dataset, path: &Path) -> Result<Corpus> {
    let bytes = std::fs::read(path)?;
    let raw = if bytes.starts_with(EMBEDDING_MAGIC) {
        parse_binary_embeddings(&bytes)?
    } else {
        parse_json_embeddings(&bytes)?
    };

    let mut embeddings: BTreeMap<u64, Vec<f32>> = BTreeMap::new();
    let mut dim: Option<usize> = None;
    for (id, vec) in raw {
        if !dataset.examples.contains_key(&id) {
            return Err(Error::UnknownEmbeddingId(id));
        }
        if embeddings.contains_key(&id) {
            return Err(Error::DuplicateId(id));
        }
        let d = *dim.get_or_insert(vec.len());
        if vec.len() != d {
            return Err(Error::DimMismatch { id, got: vec.len(), expected: d });
        }
        if vec.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFiniteVector(id));
        }
        embeddings.insert(id, vec);
    }
    for id in dataset.examples.keys() {
        if !embeddings.contains_key(id) {
            return Err(Error::MissingEmbedding(*id));
        }
    }
    Ok(Corpus {
        examples: dataset.examples.clone(),
        dim: dim.unwrap_or(0),
        embeddings,
    })
}

fn parse_json_embeddings(bytes: &[u8]) -> Result<Vec<(u64, Vec<f32>)>> {
    let text = std::str::from_utf8(bytes).map_err(|e| Error::Parse { line: 0, msg: e.to_string() })?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: EmbeddingLine = serde_json::from_str(line).map_err(|e| Error::Parse {
            line: lineno + 1,
            msg: e.to_string(),
        })?;
        out.push((rec.id, rec.vector));
    }
    Ok(out)
}

fn parse_binary_embeddings(bytes: &[u8]) -> Result<Vec<(u64, Vec<f32>)>> {
    let bad = |msg: &str| Error::Parse { line: 0, msg: msg.to_string() };
    let mut r = &bytes[4..];
    let mut u32buf = [0u8; 4];
    let mut u64buf = [0u8; 8];
    r.read_exact(&mut u32buf).map_err(|_| bad("truncated header"))?;
    let version = u32::from_le_bytes(u32buf);
    if version != EMBEDDING_VERSION {
        return Err(bad(&format!("unsupported embedding file version {version}")));
    }
    r.read_exact(&mut u64buf).map_err(|_| bad("truncated header"))?;
    let count = u64::from_le_bytes(u64buf);
    r.read_exact(&mut u32buf).map_err(|_| bad("truncated header"))?;
    let dim = u32::from_le_bytes(u32buf) as usize;
    let mut out = Vec::with_capacity(count.min(1 << 20) as usize);
    for _ in 0..count {
        r.read_exact(&mut u64buf).map_err(|_| bad("truncated record"))?;
        let id = u64::from_le_bytes(u64buf);
        let mut vec = Vec::with_capacity(dim);
        for _ in 0..dim {
            r.read_exact(&mut u32buf).map_err(|_| bad("truncated record"))?;
            vec.push(f32::from_le_bytes(u32buf));
        }
        out.push((id, vec));
    }
    if !r.is_empty() {
        return Err(bad("trailing bytes after last record"));
    }
    Ok(out)
}

/// Write embeddings in the binary format (ascending id order).
pub fn save_embeddings(corpus: &Corpus, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    w.write_all(EMBEDDING_MAGIC)?;
    w.write_all(&EMBEDDING_VERSION.to_le_bytes())?;
    w.write_all(&(corpus.embeddings.len() as u64).to_le_bytes())?;
    w.write_all(&(corpus.dim as u32).to_le_bytes())?;
    for (id, vec) in &corpus.embeddings {
        w.write_all(&id.to_le_bytes())?;
        for x in vec {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// FNV-1a over the token bytes, with a seed folded in up front and a
/// splitmix-style finalizer so that nearby seeds give unrelated buckets.
fn token_bucket(token: &str, seed: u64, dim: usize) -> usize {
    let mut h = 0xcbf29ce484222325u64 ^ seed.wrapping_mul(0x9e3779b97f4a7c15);
    for b in token.as_bytes() {
        h = (h ^ u64::from(*b)).wrapping_mul(0x100000001b3);
    }
    h ^= h >> 30;
    h = h.wrapping_mul(0xbf58476d1ce4e5b9);
    h ^= h >> 27;
    h = h.wrapping_mul(0x94d049bb133111eb);
    h ^= h >> 31;
    (h % dim as u64) as usize
}

/// Deterministic embedder for tests and benchmarks: hash each whitespace
/// token of `input` into one of `dim` buckets, count, then scale to unit
/// L2 norm. An input with no tokens maps to the first basis vector.
pub fn test_embed(dataset: &Dataset, dim: usize, seed: u64) -> Result<Corpus> {
    if dim == 0 {
        return Err(Error::InvalidParameter("embedding dim must be >= 1".into()));
    }
    let mut embeddings = BTreeMap::new();
    for (id, ex) in &dataset.examples {
        let mut v = vec![0.0f32; dim];
        for tok in ex.input.split_whitespace() {
            v[token_bucket(tok, seed, dim)] += 1.0;
        }
        let norm = v.iter().map(|x| f64::from(*x) * f64::from(*x)).sum::<f64>().sqrt();
        if norm == 0.0 {
            v[0] = 1.0;
        } else {
            for x in &mut v {
                *x = (f64::from(*x) / norm) as f32;
            }
        }
        embeddings.insert(*id, v);
    }
    Ok(Corpus { examples: dataset.examples.clone(), embeddings, dim })
}
