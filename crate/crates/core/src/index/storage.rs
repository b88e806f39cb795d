//! On-disk index directory.
//!
//! ```text
//! meta.json            version, b, K, n_docs, n_tokens, seed, config
//! centroids.f32        K x 128 f32
//! buckets.f32          boundaries then representatives, f32
//! cluster_offsets.u64  K + 1 u64
//! codes.bin            n_tokens x (16 * b) bytes
//! doc_ids.u32          n_tokens u32
//! ```
//! All binary files are little endian.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{BucketWeights, CentroidTable, CompressedIndex, IndexConfig};
use crate::corpus::{read_f32s, write_f32s, DIM};
use crate::error::{Error, Result};

pub const INDEX_VERSION: u32 = 1;

pub const META_FILE: &str = "meta.json";
pub const CENTROIDS_FILE: &str = "centroids.f32";
pub const BUCKETS_FILE: &str = "buckets.f32";
pub const OFFSETS_FILE: &str = "cluster_offsets.u64";
pub const CODES_FILE: &str = "codes.bin";
pub const DOC_IDS_FILE: &str = "doc_ids.u32";

const ALL_FILES: [&str; 6] = [
    META_FILE,
    CENTROIDS_FILE,
    BUCKETS_FILE,
    OFFSETS_FILE,
    CODES_FILE,
    DOC_IDS_FILE,
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexMeta {
    pub version: u32,
    pub b: u8,
    pub n_centroids: usize,
    pub n_docs: usize,
    pub n_tokens: usize,
    pub seed: u64,
    pub config: IndexConfig,
}

fn write_file(
    path: &Path,
    f: impl FnOnce(&mut BufWriter<fs::File>) -> std::io::Result<()>,
) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    f(&mut w)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn save_index(index: &CompressedIndex, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let meta = IndexMeta {
        version: INDEX_VERSION,
        b: index.b,
        n_centroids: index.n_centroids(),
        n_docs: index.n_docs,
        n_tokens: index.n_tokens(),
        seed: index.config.seed,
        config: index.config.clone(),
    };
    let json = serde_json::to_string_pretty(&meta)?;
    write_file(&dir.join(META_FILE), |w| w.write_all(json.as_bytes()))?;
    write_file(&dir.join(CENTROIDS_FILE), |w| {
        write_f32s(w, index.centroids.as_slice())
    })?;
    write_file(&dir.join(BUCKETS_FILE), |w| {
        write_f32s(w, index.buckets.boundaries())?;
        write_f32s(w, index.buckets.representatives())
    })?;
    write_file(&dir.join(OFFSETS_FILE), |w| {
        index
            .cluster_offsets
            .iter()
            .try_for_each(|o| w.write_all(&o.to_le_bytes()))
    })?;
    write_file(&dir.join(CODES_FILE), |w| w.write_all(&index.codes))?;
    write_file(&dir.join(DOC_IDS_FILE), |w| {
        let bytes: Vec<u8> = index.doc_ids.iter().flat_map(|d| d.to_le_bytes()).collect();
        w.write_all(&bytes)
    })
}

fn read(dir: &Path, name: &str) -> Result<Vec<u8>> {
    let path = dir.join(name);
    fs::read(&path).map_err(|e| Error::io(path, e))
}

fn expect_len(name: &str, found: usize, expected: usize) -> Result<()> {
    if found != expected {
        return Err(Error::CorruptedIndex(format!(
            "{name} holds {found} bytes, expected {expected}"
        )));
    }
    Ok(())
}

/// Loads an index directory and validates every invariant.
pub fn load_index(dir: impl AsRef<Path>) -> Result<CompressedIndex> {
    let dir = dir.as_ref();
    let meta: IndexMeta = serde_json::from_slice(&read(dir, META_FILE)?)?;
    if meta.version != INDEX_VERSION {
        return Err(Error::VersionMismatch {
            found: meta.version,
            expected: INDEX_VERSION,
        });
    }
    if meta.b != 2 && meta.b != 4 {
        return Err(Error::InvalidConfig(format!(
            "b must be 2 or 4, got {}",
            meta.b
        )));
    }
    let k = meta.n_centroids;
    let n_buckets = 1usize << meta.b;

    let centroid_bytes = read(dir, CENTROIDS_FILE)?;
    expect_len(CENTROIDS_FILE, centroid_bytes.len(), k * DIM * 4)?;
    let centroids = CentroidTable::new(k, read_f32s(&centroid_bytes))?;

    let bucket_bytes = read(dir, BUCKETS_FILE)?;
    expect_len(BUCKETS_FILE, bucket_bytes.len(), (2 * n_buckets - 1) * 4)?;
    let mut bucket_values = read_f32s(&bucket_bytes);
    let representatives = bucket_values.split_off(n_buckets - 1);
    let buckets = BucketWeights::new(bucket_values, representatives)?;

    let offset_bytes = read(dir, OFFSETS_FILE)?;
    expect_len(OFFSETS_FILE, offset_bytes.len(), (k + 1) * 8)?;
    let offsets: Vec<u64> = offset_bytes
        .chunks_exact(8)
        .map(|b| u64::from_le_bytes(b.try_into().unwrap()))
        .collect();
    if offsets.last().copied() != Some(meta.n_tokens as u64) {
        return Err(Error::CorruptedIndex(format!(
            "cluster offsets end at {:?}, metadata says {} tokens",
            offsets.last(),
            meta.n_tokens
        )));
    }

    let codes = read(dir, CODES_FILE)?;
    let expected_codes = meta.n_tokens * DIM * meta.b as usize / 8;
    if codes.len() != expected_codes {
        return Err(Error::CodesLengthMismatch {
            expected: expected_codes,
            found: codes.len(),
        });
    }

    let doc_bytes = read(dir, DOC_IDS_FILE)?;
    expect_len(DOC_IDS_FILE, doc_bytes.len(), meta.n_tokens * 4)?;
    let doc_ids: Vec<u32> = doc_bytes
        .chunks_exact(4)
        .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
        .collect();

    CompressedIndex::from_parts(
        centroids,
        buckets,
        offsets,
        codes,
        doc_ids,
        meta.n_docs,
        meta.b,
        meta.config,
    )
}

/// Total size of the files making up an index directory.
pub fn index_dir_bytes(dir: impl AsRef<Path>) -> Result<u64> {
    let dir = dir.as_ref();
    ALL_FILES.iter().try_fold(0u64, |acc, name| {
        let path = dir.join(name);
        let len = fs::metadata(&path).map_err(|e| Error::io(path, e))?.len();
        Ok(acc + len)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::synth_corpus;
    use crate::index::{build_index, NCentroids};

    fn small_index() -> CompressedIndex {
        let c = synth_corpus(42, 60, (4, 8), 8);
        let cfg = IndexConfig {
            n_centroids: NCentroids::Fixed(16),
            seed: 42,
            ..Default::default()
        };
        build_index(&c, &cfg).unwrap()
    }

    #[test]
    fn save_then_load_is_deep_equal() {
        let dir = tempfile::tempdir().unwrap();
        let idx = small_index();
        save_index(&idx, dir.path()).unwrap();
        assert_eq!(load_index(dir.path()).unwrap(), idx);
        assert!(index_dir_bytes(dir.path()).unwrap() > idx.residual_bytes() as u64);
    }

    #[test]
    fn truncated_codes_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        save_index(&small_index(), dir.path()).unwrap();
        let path = dir.path().join(CODES_FILE);
        let mut codes = fs::read(&path).unwrap();
        codes.truncate(codes.len() - 3);
        fs::write(&path, codes).unwrap();
        let err = load_index(dir.path()).unwrap_err();
        assert!(err.to_string().contains("codes length mismatch"), "{err}");
    }

    fn rewrite_meta(dir: &Path, edit: impl FnOnce(&mut serde_json::Value)) {
        let path = dir.join(META_FILE);
        let mut meta: serde_json::Value =
            serde_json::from_slice(&fs::read(&path).unwrap()).unwrap();
        edit(&mut meta);
        fs::write(&path, serde_json::to_vec(&meta).unwrap()).unwrap();
    }

    #[test]
    fn three_bit_metadata_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        save_index(&small_index(), dir.path()).unwrap();
        rewrite_meta(dir.path(), |m| m["b"] = 3.into());
        assert!(matches!(
            load_index(dir.path()),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn version_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        save_index(&small_index(), dir.path()).unwrap();
        rewrite_meta(dir.path(), |m| m["version"] = 9.into());
        assert!(matches!(
            load_index(dir.path()),
            Err(Error::VersionMismatch { found: 9, .. })
        ));
    }

    #[test]
    fn corrupted_offsets_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let idx = small_index();
        save_index(&idx, dir.path()).unwrap();
        let path = dir.path().join(OFFSETS_FILE);
        let mut bytes = fs::read(&path).unwrap();
        // make offset[1] larger than offset[2]
        let big = (idx.n_tokens() as u64).to_le_bytes();
        bytes[8..16].copy_from_slice(&big);
        bytes[16..24].copy_from_slice(&1u64.to_le_bytes());
        fs::write(&path, bytes).unwrap();
        assert!(matches!(
            load_index(dir.path()),
            Err(Error::CorruptedIndex(_))
        ));
    }
}
