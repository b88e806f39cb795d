//! Token-embedding collections and query files.
//!
//! Collection file layout (little endian):
//!
//! ```text
//! "WARPEMB1" | u32 version=1 | u64 n_docs | u64 n_tokens | u32 dim=128
//! (n_docs + 1) x u64 document offsets
//! n_tokens x 128 x f32
//! ```
//!
//! Query file layout:
//!
//! ```text
//! "WARPQRY1" | u32 version=1 | u64 n_queries | u32 dim=128
//! per query: u32 n_tokens, n_tokens x 128 x f32
//! ```

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg;

/// Embedding dimensionality of every token vector.
pub const DIM: usize = 128;
/// Maximum number of query tokens.
pub const QUERY_MAXLEN: usize = 32;
/// Allowed deviation of a token norm from 1.
pub const NORM_TOLERANCE: f32 = 1e-3;

pub const COLLECTION_MAGIC: &[u8; 8] = b"WARPEMB1";
pub const QUERY_MAGIC: &[u8; 8] = b"WARPQRY1";
pub const FORMAT_VERSION: u32 = 1;

/// Documents stored as contiguous runs of unit-norm token vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingCollection {
    doc_offsets: Vec<u64>,
    vectors: Vec<f32>,
}

impl EmbeddingCollection {
    /// Validates and wraps raw offsets and vectors.
    pub fn new(doc_offsets: Vec<u64>, vectors: Vec<f32>) -> Result<Self> {
        if vectors.len() % DIM != 0 {
            return Err(Error::DimensionMismatch {
                expected: DIM,
                found: vectors.len() % DIM,
            });
        }
        validate_offsets(&doc_offsets, (vectors.len() / DIM) as u64)?;
        validate_rows(&vectors, 0)?;
        Ok(Self {
            doc_offsets,
            vectors,
        })
    }

    pub fn dim(&self) -> usize {
        DIM
    }

    pub fn n_docs(&self) -> usize {
        self.doc_offsets.len() - 1
    }

    pub fn n_tokens(&self) -> usize {
        self.vectors.len() / DIM
    }

    pub fn doc_offsets(&self) -> &[u64] {
        &self.doc_offsets
    }

    pub fn vectors(&self) -> &[f32] {
        &self.vectors
    }

    pub fn token(&self, t: usize) -> &[f32] {
        &self.vectors[t * DIM..(t + 1) * DIM]
    }

    /// Token range of document `d`.
    pub fn doc_range(&self, d: usize) -> std::ops::Range<usize> {
        self.doc_offsets[d] as usize..self.doc_offsets[d + 1] as usize
    }

    /// Flat token vectors of document `d`.
    pub fn doc(&self, d: usize) -> &[f32] {
        let r = self.doc_range(d);
        &self.vectors[r.start * DIM..r.end * DIM]
    }

    /// Document id of every token, in token order.
    pub fn token_doc_ids(&self) -> Vec<u32> {
        let mut ids = Vec::with_capacity(self.n_tokens());
        for d in 0..self.n_docs() {
            let len = self.doc_range(d).len();
            ids.extend(std::iter::repeat_n(d as u32, len));
        }
        ids
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let write = |w: &mut BufWriter<fs::File>| -> std::io::Result<()> {
            w.write_all(COLLECTION_MAGIC)?;
            w.write_all(&FORMAT_VERSION.to_le_bytes())?;
            w.write_all(&(self.n_docs() as u64).to_le_bytes())?;
            w.write_all(&(self.n_tokens() as u64).to_le_bytes())?;
            w.write_all(&(DIM as u32).to_le_bytes())?;
            for o in &self.doc_offsets {
                w.write_all(&o.to_le_bytes())?;
            }
            write_f32s(w, &self.vectors)?;
            w.flush()
        };
        write(&mut w).map_err(|e| Error::io(path, e))
    }
}

/// The embedded tokens of a single query, 1 to 32 rows.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryEmbeddings {
    vectors: Vec<f32>,
}

impl QueryEmbeddings {
    pub fn new(vectors: Vec<f32>) -> Result<Self> {
        if vectors.len() % DIM != 0 {
            return Err(Error::DimensionMismatch {
                expected: DIM,
                found: vectors.len() % DIM,
            });
        }
        let n_tokens = vectors.len() / DIM;
        if n_tokens == 0 || n_tokens > QUERY_MAXLEN {
            return Err(Error::QueryLength {
                query: 0,
                n_tokens,
                max: QUERY_MAXLEN,
            });
        }
        validate_rows(&vectors, 0)?;
        Ok(Self { vectors })
    }

    pub fn n_tokens(&self) -> usize {
        self.vectors.len() / DIM
    }

    pub fn vectors(&self) -> &[f32] {
        &self.vectors
    }

    pub fn token(&self, i: usize) -> &[f32] {
        &self.vectors[i * DIM..(i + 1) * DIM]
    }
}

fn validate_offsets(offsets: &[u64], n_tokens: u64) -> Result<()> {
    if offsets.len() < 2 {
        return Err(Error::MalformedHeader(
            "collection must contain at least one document".into(),
        ));
    }
    if offsets[0] != 0 {
        return Err(Error::NonMonotoneOffsets { doc: 0 });
    }
    for (doc, w) in offsets.windows(2).enumerate() {
        if w[1] == w[0] {
            return Err(Error::EmptyDocument { doc });
        }
        if w[1] < w[0] {
            return Err(Error::NonMonotoneOffsets { doc });
        }
    }
    if *offsets.last().unwrap() != n_tokens {
        return Err(Error::NonMonotoneOffsets {
            doc: offsets.len() - 2,
        });
    }
    Ok(())
}

fn validate_rows(vectors: &[f32], first_token: usize) -> Result<()> {
    for (i, row) in vectors.chunks_exact(DIM).enumerate() {
        let token = first_token + i;
        if row.iter().any(|x| x.is_nan()) {
            return Err(Error::NanValue { token });
        }
        let norm = linalg::norm(row);
        if !((norm - 1.0).abs() <= NORM_TOLERANCE) {
            return Err(Error::NormViolation {
                token,
                norm,
                tolerance: NORM_TOLERANCE,
            });
        }
    }
    Ok(())
}

pub(crate) fn write_f32s(w: &mut impl Write, values: &[f32]) -> std::io::Result<()> {
    let mut buf = Vec::with_capacity(values.len().min(1 << 16) * 4);
    for chunk in values.chunks(1 << 16) {
        buf.clear();
        for v in chunk {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

pub(crate) fn read_f32s(bytes: &[u8]) -> Vec<f32> {
    bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect()
}

/// Little-endian reader over an in-memory file.
pub(crate) struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&end| end <= self.bytes.len())
            .ok_or_else(|| {
                Error::MalformedHeader(format!("file truncated while reading {what}"))
            })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    pub(crate) fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    pub(crate) fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn check_header(c: &mut Cursor<'_>, magic: &[u8; 8]) -> Result<()> {
    let found = c.take(8, "magic")?;
    if found != magic {
        return Err(Error::MalformedHeader(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(found),
            String::from_utf8_lossy(magic)
        )));
    }
    let version = c.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    Ok(())
}

/// Reads and validates a collection file.
pub fn load_collection(path: impl AsRef<Path>) -> Result<EmbeddingCollection> {
    let bytes = read_file(path.as_ref())?;
    let mut c = Cursor::new(&bytes);
    check_header(&mut c, COLLECTION_MAGIC)?;
    let n_docs = c.u64("n_docs")? as usize;
    let n_tokens = c.u64("n_tokens")? as usize;
    let dim = c.u32("dim")? as usize;
    if dim != DIM {
        return Err(Error::DimensionMismatch {
            expected: DIM,
            found: dim,
        });
    }
    let expected = n_docs
        .checked_add(1)
        .and_then(|n| n.checked_mul(8))
        .and_then(|o| n_tokens.checked_mul(DIM * 4).and_then(|v| v.checked_add(o)))
        .ok_or_else(|| Error::MalformedHeader("header sizes overflow".into()))?;
    if c.remaining() != expected {
        return Err(Error::MalformedHeader(format!(
            "payload is {} bytes, header implies {expected}",
            c.remaining()
        )));
    }
    let offsets: Vec<u64> = c
        .take((n_docs + 1) * 8, "offsets")?
        .chunks_exact(8)
        .map(|b| u64::from_le_bytes(b.try_into().unwrap()))
        .collect();
    let vectors = read_f32s(c.take(n_tokens * DIM * 4, "vectors")?);
    EmbeddingCollection::new(offsets, vectors)
}

pub fn save_queries(queries: &[QueryEmbeddings], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let write = |w: &mut BufWriter<fs::File>| -> std::io::Result<()> {
        w.write_all(QUERY_MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(queries.len() as u64).to_le_bytes())?;
        w.write_all(&(DIM as u32).to_le_bytes())?;
        for q in queries {
            w.write_all(&(q.n_tokens() as u32).to_le_bytes())?;
            write_f32s(w, q.vectors())?;
        }
        w.flush()
    };
    write(&mut w).map_err(|e| Error::io(path, e))
}

/// Reads and validates a query file; queries keep file order.
pub fn load_queries(path: impl AsRef<Path>) -> Result<Vec<QueryEmbeddings>> {
    let bytes = read_file(path.as_ref())?;
    let mut c = Cursor::new(&bytes);
    check_header(&mut c, QUERY_MAGIC)?;
    let n_queries = c.u64("n_queries")? as usize;
    let dim = c.u32("dim")? as usize;
    if dim != DIM {
        return Err(Error::DimensionMismatch {
            expected: DIM,
            found: dim,
        });
    }
    let mut queries = Vec::with_capacity(n_queries.min(1 << 20));
    for query in 0..n_queries {
        let n_tokens = c.u32("query length")? as usize;
        if n_tokens == 0 || n_tokens > QUERY_MAXLEN {
            return Err(Error::QueryLength {
                query,
                n_tokens,
                max: QUERY_MAXLEN,
            });
        }
        let vectors = read_f32s(c.take(n_tokens * DIM * 4, "query vectors")?);
        validate_rows(&vectors, 0)?;
        queries.push(QueryEmbeddings { vectors });
    }
    if c.remaining() != 0 {
        return Err(Error::MalformedHeader(format!(
            "{} trailing bytes after last query",
            c.remaining()
        )));
    }
    Ok(queries)
}

/// Per-dimension standard deviation of the token noise in synthetic corpora.
const SYNTH_TOKEN_NOISE: f32 = 0.06;

fn gaussian_unit(rng: &mut ChaCha8Rng, out: &mut [f32]) {
    loop {
        out.iter_mut().for_each(|x| *x = rng.sample(StandardNormal));
        if linalg::normalize(out) {
            return;
        }
    }
}

fn perturb_into(rng: &mut ChaCha8Rng, center: &[f32], sigma: f32, out: &mut [f32]) {
    loop {
        for (o, c) in out.iter_mut().zip(center) {
            let g: f32 = rng.sample(StandardNormal);
            *o = c + sigma * g;
        }
        if linalg::normalize(out) {
            return;
        }
    }
}

/// Generates a deterministic clustered corpus.
///
/// Latent directions are drawn uniformly on the sphere. Each document picks a
/// private topic near one latent direction and its tokens are Gaussian
/// perturbations of either the topic or a second latent direction, normalized
/// to unit length. Token counts are uniform in `tokens_per_doc`.
pub fn synth_corpus(
    seed: u64,
    n_docs: usize,
    tokens_per_doc: (usize, usize),
    n_latent_clusters: usize,
) -> EmbeddingCollection {
    let (min, max) = tokens_per_doc;
    assert!(n_docs >= 1, "n_docs must be at least 1");
    assert!(min >= 1 && min <= max, "invalid token count range");
    assert!(n_latent_clusters >= 1, "need at least one latent cluster");

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut latent = vec![0.0f32; n_latent_clusters * DIM];
    for row in latent.chunks_exact_mut(DIM) {
        gaussian_unit(&mut rng, row);
    }

    let mut offsets = Vec::with_capacity(n_docs + 1);
    offsets.push(0u64);
    let mut vectors = Vec::new();
    let mut topic = vec![0.0f32; DIM];
    let mut token = vec![0.0f32; DIM];
    for _ in 0..n_docs {
        let primary = rng.random_range(0..n_latent_clusters);
        let secondary = rng.random_range(0..n_latent_clusters);
        perturb_into(
            &mut rng,
            &latent[primary * DIM..(primary + 1) * DIM],
            2.0 * SYNTH_TOKEN_NOISE,
            &mut topic,
        );
        let len = rng.random_range(min..=max);
        for _ in 0..len {
            let center = if rng.random_bool(0.75) {
                &topic[..]
            } else {
                &latent[secondary * DIM..(secondary + 1) * DIM]
            };
            perturb_into(&mut rng, center, SYNTH_TOKEN_NOISE, &mut token);
            vectors.extend_from_slice(&token);
        }
        offsets.push((vectors.len() / DIM) as u64);
    }
    EmbeddingCollection {
        doc_offsets: offsets,
        vectors,
    }
}

/// Generates queries by perturbing tokens drawn from randomly chosen documents.
///
/// Returns the queries and the id of the document each was drawn from.
pub fn synth_queries(
    seed: u64,
    collection: &EmbeddingCollection,
    n_queries: usize,
    tokens_per_query: (usize, usize),
    noise: f32,
) -> (Vec<QueryEmbeddings>, Vec<u32>) {
    let (min, max) = tokens_per_query;
    assert!(min >= 1 && min <= max && max <= QUERY_MAXLEN);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut queries = Vec::with_capacity(n_queries);
    let mut sources = Vec::with_capacity(n_queries);
    let mut token = vec![0.0f32; DIM];
    for _ in 0..n_queries {
        let d = rng.random_range(0..collection.n_docs());
        let range = collection.doc_range(d);
        let len = rng.random_range(min..=max);
        let picks: Vec<usize> = if len <= range.len() {
            sample(&mut rng, range.len(), len).into_vec()
        } else {
            (0..len).map(|_| rng.random_range(0..range.len())).collect()
        };
        let mut vectors = Vec::with_capacity(len * DIM);
        for p in picks {
            perturb_into(
                &mut rng,
                collection.token(range.start + p),
                noise,
                &mut token,
            );
            vectors.extend_from_slice(&token);
        }
        queries.push(QueryEmbeddings { vectors });
        sources.push(d as u32);
    }
    (queries, sources)
}
