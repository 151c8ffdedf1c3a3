//! On-disk sketch store: one binary file per (corpus, epoch, projector, mask).
//!
//! Layout: magic `STDASKT1`, little-endian u64 header length, JSON header,
//! then `count × d` little-endian floats in row order (`element_bytes` wide).

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::projector::ProjectionScheme;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"STDASKT1";

/// Identifies a set of sketches; any field change invalidates the file.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SketchKey {
    pub corpus_hash: String,
    pub epoch: usize,
    pub projector_seed: u64,
    pub scheme: ProjectionScheme,
    pub dim: usize,
    pub mask_hash: String,
    pub include_classifier: bool,
    pub params_hash: String,
}

impl SketchKey {
    pub fn file_name(&self) -> String {
        let h = crate::hashing::hash_json(self);
        format!("sketch_e{}_{}.bin", self.epoch, &h[..16])
    }
}

/// Sketches of one corpus at one checkpoint, row `i` belonging to `ids[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SketchSet {
    pub ids: Vec<u64>,
    pub dim: usize,
    pub rows: Vec<f64>,
}

impl SketchSet {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i * self.dim..(i + 1) * self.dim]
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    key: SketchKey,
    count: usize,
    element_bytes: usize,
    ids: Vec<u64>,
}

/// Exact-scheme sketches are stored at full precision so cached and
/// in-memory scores agree bit for bit; projected sketches use f32.
fn element_bytes(scheme: ProjectionScheme) -> usize {
    match scheme {
        ProjectionScheme::Exact => 8,
        _ => 4,
    }
}

/// The values a cache hit would return for `set`.
pub fn as_stored(mut set: SketchSet, scheme: ProjectionScheme) -> SketchSet {
    if element_bytes(scheme) == 4 {
        set.rows.iter_mut().for_each(|x| *x = *x as f32 as f64);
    }
    set
}

pub fn write_sketches(path: &Path, key: &SketchKey, set: &SketchSet) -> Result<()> {
    let width = element_bytes(key.scheme);
    let header = Header { key: key.clone(), count: set.len(), element_bytes: width, ids: set.ids.clone() };
    let json = serde_json::to_vec(&header)?;
    let mut buf = Vec::with_capacity(16 + json.len() + set.rows.len() * width);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&json);
    for &x in &set.rows {
        if width == 8 {
            buf.extend_from_slice(&x.to_le_bytes());
        } else {
            buf.extend_from_slice(&(x as f32).to_le_bytes());
        }
    }
    // write then rename so readers never observe a partial file
    let tmp = path.with_extension("partial");
    let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(&buf).map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Reads a sketch file, failing if its key differs from `expected`.
pub fn read_sketches(path: &Path, expected: &SketchKey) -> Result<SketchSet> {
    let mut bytes = Vec::new();
    std::fs::File::open(path).and_then(|mut f| f.read_to_end(&mut bytes)).map_err(|e| Error::io(path, e))?;
    let bad = |m: &str| Error::format(None, format!("{}: {m}", path.display()));
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(bad("not a sketch file"));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body = bytes.get(16..16 + hlen).ok_or_else(|| bad("truncated header"))?;
    let header: Header = serde_json::from_slice(body)?;
    if &header.key != expected {
        return Err(Error::StaleCache {
            dir: path.to_path_buf(),
            expected: crate::hashing::hash_json(expected),
            found: crate::hashing::hash_json(&header.key),
        });
    }
    let dim = header.key.dim;
    let data = &bytes[16 + hlen..];
    let width = header.element_bytes;
    if data.len() != header.count * dim * width || header.ids.len() != header.count {
        return Err(bad("payload length does not match header"));
    }
    let rows = if width == 8 {
        data.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect()
    } else {
        data.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64).collect()
    };
    Ok(SketchSet { ids: header.ids, dim, rows })
}

/// Directory of sketch files addressed by [`SketchKey`].
#[derive(Debug, Clone)]
pub struct SketchCache {
    dir: PathBuf,
}

impl SketchCache {
    pub fn new(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(SketchCache { dir })
    }

    pub fn path(&self, key: &SketchKey) -> PathBuf {
        self.dir.join(key.file_name())
    }

    pub fn get(&self, key: &SketchKey) -> Result<Option<SketchSet>> {
        let path = self.path(key);
        if !path.exists() {
            return Ok(None);
        }
        read_sketches(&path, key).map(Some)
    }

    pub fn put(&self, key: &SketchKey, set: &SketchSet) -> Result<()> {
        write_sketches(&self.path(key), key, set)
    }
}
