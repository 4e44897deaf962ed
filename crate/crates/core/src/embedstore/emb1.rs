//! EMB1 binary dataset format.
//!
//! Little-endian, no padding, no checksum:
//!
//! ```text
//! "EMB1" | version u32 = 1 | n u32 | d u32 | C u32 | flags u32
//! data           n*d f32, row-major
//! noisy_labels   n u32
//! current_labels n u32
//! true_labels    n u32   (only if flags bit 0 is set)
//! ```

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use super::{EmbeddingSet, LabeledDataset};
use crate::error::{Error, Result};
use crate::{ClassId, Scalar};

pub const MAGIC: &[u8; 4] = b"EMB1";
pub const FORMAT_VERSION: u32 = 1;

const FLAG_TRUE_LABELS: u32 = 1;
const HEADER_LEN: usize = 24;

fn format_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Format { offset: offset as u64, message: message.into() }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, len: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(len).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            format_err(
                self.bytes.len(),
                format!(
                    "truncated payload: {what} needs {len} bytes at offset {}, file has {}",
                    self.pos,
                    self.bytes.len()
                ),
            )
        })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn labels(&mut self, n: usize, num_classes: u32, what: &str) -> Result<Vec<ClassId>> {
        let start = self.pos;
        let raw = self.take(n * 4, what)?;
        raw.chunks_exact(4)
            .enumerate()
            .map(|(i, b)| {
                let v = u32::from_le_bytes([b[0], b[1], b[2], b[3]]);
                if v >= num_classes {
                    Err(format_err(
                        start + 4 * i,
                        format!("label out of range: {what}[{i}] = {v} with {num_classes} classes"),
                    ))
                } else {
                    Ok(v)
                }
            })
            .collect()
    }
}

/// Parses an EMB1 byte buffer.
pub fn read_dataset<T: Scalar>(bytes: &[u8]) -> Result<LabeledDataset<T>> {
    let mut cur = Cursor { bytes, pos: 0 };
    let magic = cur.take(4, "magic")?;
    if magic != MAGIC {
        return Err(format_err(0, format!("bad magic {magic:02x?}, expected \"EMB1\"")));
    }
    let version = cur.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(format_err(4, format!("unsupported format version {version}")));
    }
    let n = cur.u32("n")? as usize;
    let d = cur.u32("d")? as usize;
    let num_classes = cur.u32("C")?;
    let flags = cur.u32("flags")?;
    if n == 0 || d == 0 {
        return Err(format_err(8, format!("empty dataset header n={n} d={d}")));
    }
    if num_classes < 2 {
        return Err(format_err(16, format!("class count {num_classes} < 2")));
    }
    if flags & !FLAG_TRUE_LABELS != 0 {
        return Err(format_err(20, format!("unknown flag bits {flags:#x}")));
    }
    debug_assert_eq!(cur.pos, HEADER_LEN);

    let data_start = cur.pos;
    let raw = cur.take(n * d * 4, "embedding data")?;
    let mut data = Vec::with_capacity(n * d);
    for (i, b) in raw.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes([b[0], b[1], b[2], b[3]]);
        if !v.is_finite() {
            return Err(format_err(
                data_start + 4 * i,
                format!("non-finite scalar at row {}, column {}", i / d, i % d),
            ));
        }
        data.push(T::from_f64_lossy(v as f64));
    }
    let noisy = cur.labels(n, num_classes, "noisy_labels")?;
    let current = cur.labels(n, num_classes, "current_labels")?;
    let truth = if flags & FLAG_TRUE_LABELS != 0 {
        Some(cur.labels(n, num_classes, "true_labels")?)
    } else {
        None
    };
    if cur.pos != bytes.len() {
        return Err(format_err(cur.pos, format!("{} trailing bytes", bytes.len() - cur.pos)));
    }
    let embeddings = EmbeddingSet::new(n, d, data)?;
    LabeledDataset::new(embeddings, truth, noisy, current, num_classes as usize)
}

/// Serializes a dataset as EMB1. Scalars are stored as `f32`.
pub fn write_dataset<T: Scalar, W: Write>(dataset: &LabeledDataset<T>, mut out: W) -> std::io::Result<()> {
    let emb = dataset.embeddings();
    let to_u32 = |v: usize| u32::try_from(v).map_err(|_| std::io::Error::other("dimension exceeds u32"));
    let flags = if dataset.true_labels().is_some() { FLAG_TRUE_LABELS } else { 0 };
    out.write_all(MAGIC)?;
    for v in [FORMAT_VERSION, to_u32(emb.len())?, to_u32(emb.dim())?, to_u32(dataset.num_classes())?, flags] {
        out.write_all(&v.to_le_bytes())?;
    }
    for v in emb.as_slice() {
        out.write_all(&(v.as_f64() as f32).to_le_bytes())?;
    }
    let labels = [Some(dataset.noisy_labels()), Some(dataset.current_labels()), dataset.true_labels()];
    for arr in labels.into_iter().flatten() {
        for v in arr {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn load_dataset<T: Scalar>(path: impl AsRef<Path>) -> Result<LabeledDataset<T>> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    read_dataset(&bytes)
}

pub fn save_dataset<T: Scalar>(dataset: &LabeledDataset<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_dataset(dataset, &mut w)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}
