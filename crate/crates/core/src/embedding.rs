//! Embedding tables and cosine similarity.
//!
//! Two on-disk encodings, picked by file extension: `.jsonl` holds one
//! `{"id": str, "vec": [float]}` object per line, anything else is the
//! little-endian `SPECEMB1` layout:
//!
//! ```text
//! magic    8 bytes   "SPECEMB1"
//! version  u32       1
//! dim      u32
//! count    u64
//! entries  count x { id_len: u16, id: [u8; id_len] (UTF-8), vec: [f32; dim] }
//! ```
//!
//! Vectors are stored as given. Normalization happens inside [`cosine`].

use std::collections::HashMap;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jsonl;

pub const MAGIC: &[u8; 8] = b"SPECEMB1";
pub const VERSION: u32 = 1;

/// Cosine of the angle between `a` and `b`, clamped to `[-1, 1]`.
///
/// Accumulates in `f64` whatever the element type.
pub fn cosine<T: Copy + Into<f64>>(a: &[T], b: &[T]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimMismatch { expected: a.len(), actual: b.len() });
    }
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x.into(), y.into());
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
}

/// An image/text similarity, keyed by the ids it was computed from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityPair {
    pub image_id: String,
    pub text_id: String,
    pub theta: f64,
}

/// Ordered id -> vector map with a fixed dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    ids: Vec<String>,
    data: Vec<f32>,
    index: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct JsonEntry {
    id: String,
    vec: Vec<f32>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Self {
        Self { dim, ids: Vec::new(), data: Vec::new(), index: HashMap::new() }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Appends an entry, rejecting duplicates, wrong dimensions and NaN/Inf.
    pub fn insert(&mut self, id: impl Into<String>, vector: &[f32]) -> Result<()> {
        let id = id.into();
        if vector.len() != self.dim {
            return Err(Error::DimMismatch { expected: self.dim, actual: vector.len() });
        }
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(id));
        }
        if self.index.contains_key(&id) {
            return Err(Error::DuplicateId(id));
        }
        self.index.insert(id.clone(), self.ids.len());
        self.ids.push(id);
        self.data.extend_from_slice(vector);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&[f32]> {
        self.index.get(id).map(|&row| self.row(row))
    }

    fn row(&self, row: usize) -> &[f32] {
        &self.data[row * self.dim..(row + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f32])> {
        self.ids.iter().enumerate().map(|(row, id)| (id.as_str(), self.row(row)))
    }

    /// Cosine between two stored vectors, possibly from different tables.
    pub fn similarity(&self, id: &str, other: &EmbeddingTable, other_id: &str) -> Result<f64> {
        let a = self.get(id).ok_or_else(|| Error::DataMissing(format!("embedding {id:?}")))?;
        let b = other.get(other_id).ok_or_else(|| Error::DataMissing(format!("embedding {other_id:?}")))?;
        cosine(a, b)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if is_jsonl(path) {
            Self::read_jsonl(path)
        } else {
            Self::read_binary(BufReader::new(File::open(path)?))
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if is_jsonl(path) {
            let entries: Vec<JsonEntry> =
                self.iter().map(|(id, v)| JsonEntry { id: id.to_owned(), vec: v.to_vec() }).collect();
            jsonl::write_all(path, &entries)
        } else {
            let mut out = BufWriter::new(File::create(path)?);
            self.write_binary(&mut out)?;
            out.flush()?;
            Ok(())
        }
    }

    pub fn write_binary<W: Write>(&self, out: &mut W) -> Result<()> {
        out.write_all(MAGIC)?;
        out.write_all(&VERSION.to_le_bytes())?;
        out.write_all(&(self.dim as u32).to_le_bytes())?;
        out.write_all(&(self.ids.len() as u64).to_le_bytes())?;
        for (id, vector) in self.iter() {
            let len = u16::try_from(id.len()).map_err(|_| Error::IdTooLong(id.to_owned()))?;
            out.write_all(&len.to_le_bytes())?;
            out.write_all(id.as_bytes())?;
            for v in vector {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut input: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        read_exact(&mut input, &mut magic)?;
        if &magic != MAGIC {
            return Err(Error::BadMagic { expected: "SPECEMB1" });
        }
        let version = read_u32(&mut input)?;
        if version != VERSION {
            return Err(Error::BadVersion(version));
        }
        let dim = read_u32(&mut input)? as usize;
        let count = read_u64(&mut input)?;
        let mut table = Self::new(dim);
        let mut vector = vec![0f32; dim];
        let mut raw = vec![0u8; dim * 4];
        for _ in 0..count {
            let mut len = [0u8; 2];
            read_exact(&mut input, &mut len)?;
            let mut id = vec![0u8; u16::from_le_bytes(len) as usize];
            read_exact(&mut input, &mut id)?;
            let id = String::from_utf8(id).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
            read_exact(&mut input, &mut raw)?;
            for (v, bytes) in vector.iter_mut().zip(raw.chunks_exact(4)) {
                *v = f32::from_le_bytes(bytes.try_into().expect("4-byte chunk"));
            }
            table.insert(id, &vector)?;
        }
        Ok(table)
    }

    fn read_jsonl(path: &Path) -> Result<Self> {
        let mut table: Option<Self> = None;
        for entry in jsonl::read_iter::<JsonEntry>(path)? {
            let entry = entry?;
            table.get_or_insert_with(|| Self::new(entry.vec.len())).insert(entry.id, &entry.vec)?;
        }
        table.ok_or_else(|| Error::DataMissing(format!("{} has no entries", path.display())))
    }
}

fn is_jsonl(path: &Path) -> bool {
    matches!(path.extension().and_then(|e| e.to_str()), Some("jsonl" | "json"))
}

pub(crate) fn read_exact<R: Read>(input: &mut R, buf: &mut [u8]) -> Result<()> {
    input.read_exact(buf).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => Error::TruncatedFile,
        _ => Error::Io(e),
    })
}

pub(crate) fn read_u32<R: Read>(input: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    read_exact(input, &mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

pub(crate) fn read_u64<R: Read>(input: &mut R) -> Result<u64> {
    let mut buf = [0u8; 8];
    read_exact(input, &mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn encode(table: &EmbeddingTable) -> Vec<u8> {
        let mut buf = Vec::new();
        table.write_binary(&mut buf).unwrap();
        buf
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine(&[1.0f64, 0.0], &[1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(cosine(&[1.0f64, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        let diag = cosine(&[1.0f64, 1.0], &[1.0, 0.0]).unwrap();
        assert!((diag - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
    }

    #[test]
    fn cosine_errors() {
        assert!(matches!(cosine(&[0.0f64, 0.0], &[1.0, 0.0]), Err(Error::ZeroVector)));
        assert!(matches!(cosine(&[1.0f64, 0.0], &[1.0, 0.0, 0.0]), Err(Error::DimMismatch { expected: 2, actual: 3 })));
    }

    #[test]
    fn empty_table_round_trips() {
        let table = EmbeddingTable::new(4);
        let bytes = encode(&table);
        assert_eq!(bytes.len(), 8 + 4 + 4 + 8);
        assert_eq!(EmbeddingTable::read_binary(bytes.as_slice()).unwrap(), table);
    }

    #[test]
    fn layout_is_little_endian() {
        let mut table = EmbeddingTable::new(1);
        table.insert("ab", &[1.0]).unwrap();
        let bytes = encode(&table);
        let mut expected = b"SPECEMB1".to_vec();
        expected.extend([1, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0, 0, 0, 0, 0]);
        expected.extend([2, 0, b'a', b'b']);
        expected.extend(1.0f32.to_le_bytes());
        assert_eq!(bytes, expected);
    }

    #[test]
    fn dim32_entries_round_trip() {
        let mut table = EmbeddingTable::new(32);
        for i in 0..3 {
            let v: Vec<f32> = (0..32).map(|k| (i * 32 + k) as f32 * 0.37 - 5.0).collect();
            table.insert(format!("e{i}"), &v).unwrap();
        }
        let back = EmbeddingTable::read_binary(encode(&table).as_slice()).unwrap();
        assert_eq!(back, table);
    }

    #[test]
    fn duplicate_id_in_file_is_rejected() {
        let mut table = EmbeddingTable::new(2);
        table.insert("x", &[1.0, 2.0]).unwrap();
        table.insert("y", &[3.0, 4.0]).unwrap();
        let mut bytes = encode(&table);
        // rename "y" to "x"
        let pos = bytes.len() - 8 - 1;
        bytes[pos] = b'x';
        assert!(matches!(
            EmbeddingTable::read_binary(bytes.as_slice()),
            Err(Error::DuplicateId(id)) if id == "x"
        ));
    }

    #[test]
    fn bad_magic_and_truncation() {
        let mut table = EmbeddingTable::new(2);
        table.insert("x", &[1.0, 2.0]).unwrap();
        let bytes = encode(&table);
        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        assert!(matches!(EmbeddingTable::read_binary(wrong.as_slice()), Err(Error::BadMagic { .. })));
        for cut in [3, 12, 20, bytes.len() - 1] {
            assert!(matches!(EmbeddingTable::read_binary(&bytes[..cut]), Err(Error::TruncatedFile)));
        }
    }

    #[test]
    fn insert_rejects_non_finite() {
        let mut table = EmbeddingTable::new(2);
        assert!(matches!(table.insert("n", &[f32::NAN, 0.0]), Err(Error::NonFinite(_))));
        assert!(matches!(table.insert("n", &[1.0]), Err(Error::DimMismatch { .. })));
    }

    #[test]
    fn jsonl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        let mut table = EmbeddingTable::new(3);
        table.insert("a", &[0.1, -2.5, 3.0e-7]).unwrap();
        table.insert("b", &[1.0, 0.0, f32::MAX]).unwrap();
        table.save(&path).unwrap();
        assert_eq!(EmbeddingTable::load(&path).unwrap(), table);
    }

    proptest! {
        #[test]
        fn binary_round_trip_is_bit_exact(
            rows in prop::collection::vec(
                prop::collection::vec(any::<f32>().prop_filter("finite", |v| v.is_finite()), 5),
                0..20,
            )
        ) {
            let mut table = EmbeddingTable::new(5);
            for (i, row) in rows.iter().enumerate() {
                table.insert(format!("id-{i}"), row).unwrap();
            }
            let bytes = encode(&table);
            let back = EmbeddingTable::read_binary(bytes.as_slice()).unwrap();
            prop_assert_eq!(encode(&back), bytes);
        }

        #[test]
        fn cosine_is_symmetric_and_bounded(
            a in prop::collection::vec(-100.0f64..100.0, 6),
            b in prop::collection::vec(-100.0f64..100.0, 6),
        ) {
            prop_assume!(a.iter().any(|v| *v != 0.0) && b.iter().any(|v| *v != 0.0));
            let ab = cosine(&a, &b).unwrap();
            prop_assert_eq!(ab, cosine(&b, &a).unwrap());
            prop_assert!(ab.abs() <= 1.0);
            prop_assert!((cosine(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        }
    }
}
