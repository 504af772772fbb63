//! The toy dual encoder and its `SPECMDL1` file format.
//!
//! Layout (little-endian): magic `SPECMDL1`, u32 version, u32 image feature
//! dim, u32 embed dim, u32 vocabulary buckets, then the image projection
//! (`feature_dim x embed_dim`, row-major) and the token table
//! (`buckets x embed_dim`, row-major) as f64.

use std::fs::File;
use std::hash::Hasher;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use fnv::FnvHasher;
use rand_distr::{Distribution, Normal};

use crate::embedding::{read_exact, read_u32};
use crate::error::{Error, Result};
use crate::rng;

pub const MAGIC: &[u8; 8] = b"SPECMDL1";
pub const VERSION: u32 = 1;

pub const FEATURE_DIM: usize = 64;
pub const EMBED_DIM: usize = 32;
pub const BUCKETS: usize = 1024;

#[derive(Debug, Clone, PartialEq)]
pub struct ToyDualEncoder {
    pub feature_dim: usize,
    pub embed_dim: usize,
    pub buckets: usize,
    /// `feature_dim x embed_dim`, row-major.
    pub image_proj: Vec<f64>,
    /// `buckets x embed_dim`, row-major.
    pub token_table: Vec<f64>,
}

/// Gradients with the same shapes as the model parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub image_proj: Vec<f64>,
    pub token_table: Vec<f64>,
}

impl Gradients {
    pub fn zeros_like(model: &ToyDualEncoder) -> Self {
        Self { image_proj: vec![0.0; model.image_proj.len()], token_table: vec![0.0; model.token_table.len()] }
    }
}

pub(crate) fn normalize(u: &[f64]) -> Result<(Vec<f64>, f64)> {
    let norm = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return Err(Error::ZeroVector);
    }
    Ok((u.iter().map(|x| x / norm).collect(), norm))
}

/// Bucket ids of the lowercased, punctuation-trimmed whitespace tokens.
pub fn token_ids(text: &str, buckets: usize) -> Vec<usize> {
    text.split_whitespace()
        .map(|w| w.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase())
        .filter(|w| !w.is_empty())
        .map(|w| {
            let mut h = FnvHasher::default();
            h.write(w.as_bytes());
            (h.finish() % buckets as u64) as usize
        })
        .collect()
}

impl ToyDualEncoder {
    pub fn new(seed: u64) -> Self {
        Self::with_dims(FEATURE_DIM, EMBED_DIM, BUCKETS, seed)
    }

    pub fn with_dims(feature_dim: usize, embed_dim: usize, buckets: usize, seed: u64) -> Self {
        let mut r = rng::derive(seed, b"model-init");
        let proj = Normal::new(0.0, (1.0 / feature_dim as f64).sqrt()).expect("valid std");
        let tok = Normal::new(0.0, (1.0 / embed_dim as f64).sqrt()).expect("valid std");
        let image_proj = (0..feature_dim * embed_dim).map(|_| proj.sample(&mut r)).collect();
        let token_table = (0..buckets * embed_dim).map(|_| tok.sample(&mut r)).collect();
        Self { feature_dim, embed_dim, buckets, image_proj, token_table }
    }

    pub fn param_count(&self) -> usize {
        self.image_proj.len() + self.token_table.len()
    }

    /// Flat parameter access: image projection first, then the token table.
    pub fn param_mut(&mut self, i: usize) -> &mut f64 {
        let n = self.image_proj.len();
        if i < n {
            &mut self.image_proj[i]
        } else {
            &mut self.token_table[i - n]
        }
    }

    pub fn is_finite(&self) -> bool {
        self.image_proj.iter().chain(&self.token_table).all(|v| v.is_finite())
    }

    /// Unnormalized projection `W^T x`.
    pub fn project_image(&self, features: &[f64]) -> Result<Vec<f64>> {
        if features.len() != self.feature_dim {
            return Err(Error::DimMismatch { expected: self.feature_dim, actual: features.len() });
        }
        let mut u = vec![0.0; self.embed_dim];
        for (a, x) in features.iter().enumerate() {
            let row = &self.image_proj[a * self.embed_dim..(a + 1) * self.embed_dim];
            for (uj, w) in u.iter_mut().zip(row) {
                *uj += x * w;
            }
        }
        Ok(u)
    }

    /// Unnormalized mean of the token embeddings.
    pub fn pool_tokens(&self, ids: &[usize]) -> Result<Vec<f64>> {
        if ids.is_empty() {
            return Err(Error::EmptyInput);
        }
        let mut m = vec![0.0; self.embed_dim];
        for &id in ids {
            let row = &self.token_table[id * self.embed_dim..(id + 1) * self.embed_dim];
            for (mj, e) in m.iter_mut().zip(row) {
                *mj += e;
            }
        }
        let n = ids.len() as f64;
        m.iter_mut().for_each(|v| *v /= n);
        Ok(m)
    }

    pub fn encode_image(&self, features: &[f64]) -> Result<Vec<f64>> {
        Ok(normalize(&self.project_image(features)?)?.0)
    }

    pub fn encode_text(&self, text: &str) -> Result<Vec<f64>> {
        Ok(normalize(&self.pool_tokens(&token_ids(text, self.buckets))?)?.0)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        self.write(&mut out)?;
        out.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read(BufReader::new(File::open(path)?))
    }

    pub fn write<W: Write>(&self, out: &mut W) -> Result<()> {
        out.write_all(MAGIC)?;
        out.write_all(&VERSION.to_le_bytes())?;
        for dim in [self.feature_dim, self.embed_dim, self.buckets] {
            out.write_all(&(dim as u32).to_le_bytes())?;
        }
        for v in self.image_proj.iter().chain(&self.token_table) {
            out.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read<R: Read>(mut input: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        read_exact(&mut input, &mut magic)?;
        if &magic != MAGIC {
            return Err(Error::BadMagic { expected: "SPECMDL1" });
        }
        let version = read_u32(&mut input)?;
        if version != VERSION {
            return Err(Error::BadVersion(version));
        }
        let feature_dim = read_u32(&mut input)? as usize;
        let embed_dim = read_u32(&mut input)? as usize;
        let buckets = read_u32(&mut input)? as usize;
        let mut read_block = |len: usize| -> Result<Vec<f64>> {
            let mut raw = vec![0u8; len * 8];
            read_exact(&mut input, &mut raw)?;
            Ok(raw.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes"))).collect())
        };
        let image_proj = read_block(feature_dim * embed_dim)?;
        let token_table = read_block(buckets * embed_dim)?;
        let model = Self { feature_dim, embed_dim, buckets, image_proj, token_table };
        if !model.is_finite() {
            return Err(Error::NonFinite("model parameters".into()));
        }
        Ok(model)
    }
}

/// Backpropagates `g = dL/dv` through `v = u / |u|`.
pub(crate) fn normalize_backward(g: &[f64], v: &[f64], norm: f64) -> Vec<f64> {
    let dot: f64 = g.iter().zip(v).map(|(a, b)| a * b).sum();
    g.iter().zip(v).map(|(gi, vi)| (gi - dot * vi) / norm).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn encodings_are_unit_norm() {
        let m = ToyDualEncoder::new(3);
        let x: Vec<f64> = (0..FEATURE_DIM).map(|i| (i as f64 * 0.37).sin()).collect();
        for v in [m.encode_image(&x).unwrap(), m.encode_text("a red ball on grass").unwrap()] {
            let n: f64 = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn tokens_are_case_and_punctuation_insensitive() {
        assert_eq!(token_ids("A Park.", BUCKETS), token_ids("a park", BUCKETS));
        assert!(token_ids(" ... ", BUCKETS).is_empty());
        assert!(matches!(ToyDualEncoder::new(0).encode_text("--"), Err(Error::EmptyInput)));
    }

    #[test]
    fn file_round_trip() {
        let m = ToyDualEncoder::with_dims(5, 3, 7, 11);
        let mut buf = Vec::new();
        m.write(&mut buf).unwrap();
        assert_eq!(&buf[..8], MAGIC);
        assert_eq!(buf.len(), 8 + 16 + (15 + 21) * 8);
        assert_eq!(ToyDualEncoder::read(buf.as_slice()).unwrap(), m);
        assert!(matches!(ToyDualEncoder::read(&buf[..40]), Err(Error::TruncatedFile)));
        assert!(matches!(ToyDualEncoder::read(&b"SPECEMB1xxxx"[..]), Err(Error::BadMagic { .. })));
    }

    #[test]
    fn init_is_seeded() {
        assert_eq!(ToyDualEncoder::new(5), ToyDualEncoder::new(5));
        assert_ne!(ToyDualEncoder::new(5), ToyDualEncoder::new(6));
    }
}
