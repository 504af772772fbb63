//! Specificity rate and the clipped-cosine caption score.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::embedding::{cosine, EmbeddingTable, SimilarityPair};
use crate::error::{Error, Result};
use crate::triplet::{Polarity, Triplet};

/// Source of image/text similarities.
pub trait Similarity {
    fn theta(&self, image_id: &str, text: &str) -> Result<f64>;
}

/// Similarities looked up in two embedding tables; texts are their own ids.
pub struct TableSimilarity<'a> {
    pub images: &'a EmbeddingTable,
    pub texts: &'a EmbeddingTable,
}

impl Similarity for TableSimilarity<'_> {
    fn theta(&self, image_id: &str, text: &str) -> Result<f64> {
        self.images.similarity(image_id, self.texts, text)
    }
}

/// Precomputed similarities keyed by `(image_id, text_id)`.
#[derive(Debug, Default, Clone)]
pub struct PairTable(HashMap<(String, String), f64>);

impl PairTable {
    pub fn new(pairs: impl IntoIterator<Item = SimilarityPair>) -> Self {
        Self(pairs.into_iter().map(|p| ((p.image_id, p.text_id), p.theta)).collect())
    }
}

impl Similarity for PairTable {
    fn theta(&self, image_id: &str, text: &str) -> Result<f64> {
        self.0
            .get(&(image_id.to_owned(), text.to_owned()))
            .copied()
            .ok_or_else(|| Error::DataMissing(format!("similarity for ({image_id:?}, {text:?})")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredTriplet {
    /// Position of the triplet in its source list.
    pub index: usize,
    pub polarity: Polarity,
    pub theta_base: f64,
    pub theta_ext: f64,
    pub hit: bool,
}

impl ScoredTriplet {
    /// Scores one triplet. Ties are misses for both polarities.
    pub fn new(index: usize, polarity: Polarity, theta_base: f64, theta_ext: f64) -> Self {
        let hit = match polarity {
            Polarity::Positive => theta_ext > theta_base,
            Polarity::Negative => theta_ext < theta_base,
        };
        Self { index, polarity, theta_base, theta_ext, hit }
    }
}

pub fn score_triplets(triplets: &[Triplet], sim: &impl Similarity) -> Result<Vec<ScoredTriplet>> {
    triplets
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let base = sim.theta(&t.image_id, &t.base.text)?;
            let ext = sim.theta(&t.image_id, &t.extended)?;
            Ok(ScoredTriplet::new(i, t.polarity, base, ext))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpecificityReport {
    pub sr_pos: f64,
    pub sr_neg: f64,
    pub average: f64,
    pub n_pos: usize,
    pub n_neg: usize,
}

/// Fraction of positive triplets whose similarity rose and of negative
/// triplets whose similarity fell.
pub fn specificity_rate(scored: &[ScoredTriplet]) -> Result<SpecificityReport> {
    let (mut n_pos, mut n_neg, mut hit_pos, mut hit_neg) = (0usize, 0usize, 0usize, 0usize);
    for s in scored {
        match s.polarity {
            Polarity::Positive => {
                n_pos += 1;
                hit_pos += usize::from(s.hit);
            }
            Polarity::Negative => {
                n_neg += 1;
                hit_neg += usize::from(s.hit);
            }
        }
    }
    if n_pos == 0 {
        return Err(Error::EmptyClass("positive"));
    }
    if n_neg == 0 {
        return Err(Error::EmptyClass("negative"));
    }
    let sr_pos = hit_pos as f64 / n_pos as f64;
    let sr_neg = hit_neg as f64 / n_neg as f64;
    Ok(SpecificityReport { sr_pos, sr_neg, average: (sr_pos + sr_neg) / 2.0, n_pos, n_neg })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredPair {
    pub image_id: String,
    pub caption_id: String,
    pub specs: f64,
}

/// Cosine similarity clipped at zero.
pub fn specs_score<T: Copy + Into<f64>>(image: &[T], caption: &[T]) -> Result<f64> {
    Ok(cosine(image, caption)?.max(0.0))
}

impl ScoredPair {
    pub fn score<T: Copy + Into<f64>>(
        image_id: impl Into<String>,
        caption_id: impl Into<String>,
        image: &[T],
        caption: &[T],
    ) -> Result<Self> {
        Ok(Self { image_id: image_id.into(), caption_id: caption_id.into(), specs: specs_score(image, caption)? })
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn single_hits() {
        let scored =
            [ScoredTriplet::new(0, Polarity::Positive, 0.5, 0.6), ScoredTriplet::new(1, Polarity::Negative, 0.5, 0.4)];
        let r = specificity_rate(&scored).unwrap();
        assert_eq!((r.sr_pos, r.sr_neg, r.average), (1.0, 1.0, 1.0));
    }

    #[test]
    fn ties_are_misses() {
        let scored =
            [ScoredTriplet::new(0, Polarity::Positive, 0.5, 0.5), ScoredTriplet::new(1, Polarity::Negative, 0.5, 0.5)];
        let r = specificity_rate(&scored).unwrap();
        assert_eq!((r.sr_pos, r.sr_neg), (0.0, 0.0));
    }

    #[test]
    fn missing_polarity() {
        let only_pos = [ScoredTriplet::new(0, Polarity::Positive, 0.1, 0.2)];
        assert!(matches!(specificity_rate(&only_pos), Err(Error::EmptyClass("negative"))));
        assert!(matches!(specificity_rate(&[]), Err(Error::EmptyClass("positive"))));
    }

    #[test]
    fn specs_examples() {
        assert_eq!(specs_score(&[0.3f64, -2.0], &[0.3, -2.0]).unwrap(), 1.0);
        assert_eq!(specs_score(&[1.0f64, 2.0], &[-1.0, -2.0]).unwrap(), 0.0);
        let v = specs_score(&[1.0f64, 1.0, 0.0], &[1.0, 0.0, 0.0]).unwrap();
        assert!((v - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
        assert!(matches!(specs_score(&[0.0f64], &[1.0]), Err(Error::ZeroVector)));
    }

    #[test]
    fn minimal_pair_ordering_registers_both_hits() {
        // jumper < blanket < blanket with fringed edges
        let pairs = [
            SimilarityPair { image_id: "cat".into(), text_id: "a cat under a blanket".into(), theta: 0.31 },
            SimilarityPair {
                image_id: "cat".into(),
                text_id: "a cat under a blanket with fringed edges".into(),
                theta: 0.33,
            },
            SimilarityPair { image_id: "cat".into(), text_id: "a cat under a blanket jumper".into(), theta: 0.29 },
        ];
        let table = PairTable::new(pairs);
        let triplets: Vec<Triplet> = [
            ("a cat under a blanket with fringed edges", Polarity::Positive),
            ("a cat under a blanket jumper", Polarity::Negative),
        ]
        .into_iter()
        .map(|(ext, polarity)| Triplet {
            image_id: "cat".into(),
            base: crate::triplet::PartialCaption {
                image_id: "cat".into(),
                text: "a cat under a blanket".into(),
                depth: 1,
            },
            extended: ext.into(),
            polarity,
            detail_source: if polarity == Polarity::Positive { "cat".into() } else { "dog".into() },
            shuffled: false,
        })
        .collect();
        let scored = score_triplets(&triplets, &table).unwrap();
        assert!(scored.iter().all(|s| s.hit));
    }

    proptest! {
        #[test]
        fn scale_invariance(
            a in prop::collection::vec(-10.0f64..10.0, 4),
            b in prop::collection::vec(-10.0f64..10.0, 4),
            la in 0.01f64..100.0,
            lb in 0.01f64..100.0,
        ) {
            prop_assume!(a.iter().any(|v| v.abs() > 1e-3) && b.iter().any(|v| v.abs() > 1e-3));
            let sa: Vec<f64> = a.iter().map(|v| v * la).collect();
            let sb: Vec<f64> = b.iter().map(|v| v * lb).collect();
            let s = specs_score(&a, &b).unwrap();
            prop_assert!((specs_score(&sa, &sb).unwrap() - s).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&s));
        }
    }
}
