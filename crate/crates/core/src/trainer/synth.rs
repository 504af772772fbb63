//! Planted-attribute corpora.
//!
//! Each attribute owns a random unit direction in feature space and a single
//! caption token. An image's features are the sum of its attributes'
//! directions plus Gaussian noise; its caption lists those attributes, one
//! unit each, in random order.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use super::model::FEATURE_DIM;
use crate::embedding::EmbeddingTable;
use crate::error::{Error, Result};
use crate::rng;
use crate::segment::SegmentedCaption;

pub const MIN_ATTRIBUTES: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthParams {
    /// Per-component standard deviation of the feature noise.
    pub noise_std: f64,
    /// Upper bound on attributes per image (further capped at `n_attributes - 2`).
    pub max_units: usize,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self { noise_std: 0.15, max_units: 8 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub features: EmbeddingTable,
    pub captions: Vec<SegmentedCaption>,
    /// Planted attribute indices per image, in caption order.
    pub planted: Vec<Vec<usize>>,
    /// Unit feature direction of each attribute.
    pub basis: Vec<Vec<f64>>,
}

pub fn attribute_token(attribute: usize) -> String {
    format!("attr{attribute:02}")
}

/// Inverse of [`attribute_token`].
pub fn parse_attribute(token: &str) -> Option<usize> {
    token.strip_prefix("attr")?.parse().ok()
}

pub fn synth_generate(n_images: usize, n_attributes: usize, seed: u64) -> Result<SynthCorpus> {
    synth_generate_with(n_images, n_attributes, seed, &SynthParams::default())
}

pub fn synth_generate_with(
    n_images: usize,
    n_attributes: usize,
    seed: u64,
    params: &SynthParams,
) -> Result<SynthCorpus> {
    if n_attributes < MIN_ATTRIBUTES {
        return Err(Error::InvalidConfig(format!("need at least {MIN_ATTRIBUTES} attributes, got {n_attributes}")));
    }
    let mut basis_rng = rng::derive(seed, b"synth-basis");
    let basis: Vec<Vec<f64>> = (0..n_attributes)
        .map(|_| {
            let v: Vec<f64> = (0..FEATURE_DIM).map(|_| StandardNormal.sample(&mut basis_rng)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / norm).collect()
        })
        .collect();

    let max_k = (n_attributes - 2).min(params.max_units).max(2);
    let noise = Normal::new(0.0, params.noise_std).map_err(|e| Error::InvalidConfig(format!("noise_std: {e}")))?;
    let mut r = rng::derive(seed, b"synth-images");
    let all: Vec<usize> = (0..n_attributes).collect();
    let mut corpus =
        SynthCorpus { features: EmbeddingTable::new(FEATURE_DIM), captions: vec![], planted: vec![], basis: vec![] };
    for i in 0..n_images {
        let k = r.random_range(2..=max_k);
        let mut chosen: Vec<usize> = all.choose_multiple(&mut r, k).copied().collect();
        chosen.shuffle(&mut r);
        let features: Vec<f32> = (0..FEATURE_DIM)
            .map(|d| (chosen.iter().map(|&a| basis[a][d]).sum::<f64>() + noise.sample(&mut r)) as f32)
            .collect();
        let image_id = format!("img{i:05}");
        corpus.features.insert(image_id.clone(), &features)?;
        let units: Vec<String> = chosen.iter().map(|&a| attribute_token(a)).collect();
        corpus.captions.push(SegmentedCaption::from_units(image_id, &units)?);
        corpus.planted.push(chosen);
    }
    corpus.basis = basis;
    Ok(corpus)
}
