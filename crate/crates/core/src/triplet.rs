//! Minimal-pair triplets.
//!
//! For a caption split into units `d_1..d_m`, the partial caption `c_j` is
//! the space-join of `d_1..d_j`. Every step `j -> j+1` yields a positive
//! triplet `(image, c_j, c_{j+1})` and a negative twin `(image, c_j, c_j + d)`
//! where `d` is a unit drawn from another image's caption in the same pool
//! window. With probability `shuffle_rate` the drawn unit's words are
//! permuted before appending.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::segment::SegmentedCaption;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartialCaption {
    pub image_id: String,
    pub text: String,
    /// Number of units included.
    pub depth: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Positive,
    Negative,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Triplet {
    pub image_id: String,
    pub base: PartialCaption,
    pub extended: String,
    pub polarity: Polarity,
    /// Image whose caption supplied the appended unit.
    pub detail_source: String,
    pub shuffled: bool,
}

/// JSONL form of a [`Triplet`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TripletRecord {
    pub image_id: String,
    pub base: String,
    pub extended: String,
    pub polarity: Polarity,
    pub detail_source: String,
    pub shuffled: bool,
    pub depth: usize,
}

impl From<&Triplet> for TripletRecord {
    fn from(t: &Triplet) -> Self {
        Self {
            image_id: t.image_id.clone(),
            base: t.base.text.clone(),
            extended: t.extended.clone(),
            polarity: t.polarity,
            detail_source: t.detail_source.clone(),
            shuffled: t.shuffled,
            depth: t.base.depth,
        }
    }
}

impl From<TripletRecord> for Triplet {
    fn from(r: TripletRecord) -> Self {
        Self {
            base: PartialCaption { image_id: r.image_id.clone(), text: r.base, depth: r.depth },
            image_id: r.image_id,
            extended: r.extended,
            polarity: r.polarity,
            detail_source: r.detail_source,
            shuffled: r.shuffled,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForgeConfig {
    pub shuffle_rate: f64,
    /// Number of consecutive corpus entries negatives are sampled from.
    pub pool_size: usize,
    pub seed: u64,
}

impl Default for ForgeConfig {
    fn default() -> Self {
        Self { shuffle_rate: 0.9, pool_size: 400, seed: 0 }
    }
}

impl ForgeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.shuffle_rate) {
            return Err(Error::InvalidConfig(format!("shuffle_rate {} not in [0, 1]", self.shuffle_rate)));
        }
        if self.pool_size < 2 {
            return Err(Error::InvalidConfig(format!("pool_size {} < 2", self.pool_size)));
        }
        Ok(())
    }
}

/// Cumulative partial captions `c_1..c_m`.
pub fn prefixes(seg: &SegmentedCaption) -> Vec<PartialCaption> {
    let mut text = String::new();
    seg.units
        .iter()
        .enumerate()
        .map(|(j, unit)| {
            if !text.is_empty() {
                text.push(' ');
            }
            text.push_str(&unit.text);
            PartialCaption { image_id: seg.image_id.clone(), text: text.clone(), depth: j + 1 }
        })
        .collect()
}

/// Pool windows over the corpus. A trailing window too small to sample
/// from is folded into its predecessor.
fn windows(len: usize, pool_size: usize) -> Vec<std::ops::Range<usize>> {
    let mut out: Vec<std::ops::Range<usize>> =
        (0..len).step_by(pool_size).map(|s| s..(s + pool_size).min(len)).collect();
    if out.len() > 1 && out.last().is_some_and(|w| w.len() < 2) {
        let tail = out.pop().expect("non-empty");
        out.last_mut().expect("len > 1").end = tail.end;
    }
    out
}

/// Builds positive and negative triplets for every caption in `corpus`.
///
/// Output order is caption order, and within a caption each positive is
/// followed by its negative twin. Negatives never reuse a unit whose text
/// already occurs in the caption being extended.
pub fn forge(corpus: &[SegmentedCaption], cfg: &ForgeConfig) -> Result<Vec<Triplet>> {
    cfg.validate()?;
    if corpus.len() < 2 {
        return Err(Error::CorpusTooSmall {
            image_id: corpus.first().map_or_else(String::new, |c| c.image_id.clone()),
        });
    }
    let mut out = Vec::new();
    for window in windows(corpus.len(), cfg.pool_size) {
        let start = window.start;
        out.extend(forge_window(&corpus[window], start, cfg)?);
    }
    Ok(out)
}

/// Streaming form of [`forge`]: holds at most `pool_size + 1` captions
/// and hands each triplet to `sink`. Returns the number of captions read.
pub fn forge_stream(
    corpus: impl IntoIterator<Item = Result<SegmentedCaption>>,
    cfg: &ForgeConfig,
    mut sink: impl FnMut(Triplet) -> Result<()>,
) -> Result<usize> {
    cfg.validate()?;
    let mut buffer: Vec<SegmentedCaption> = Vec::with_capacity(cfg.pool_size + 2);
    let (mut start, mut seen) = (0, 0);
    let mut first_id = None;
    for seg in corpus {
        let seg = seg?;
        first_id.get_or_insert_with(|| seg.image_id.clone());
        buffer.push(seg);
        seen += 1;
        // a full window can be released once its successor is known to hold two
        if buffer.len() == cfg.pool_size + 2 {
            let rest = buffer.split_off(cfg.pool_size);
            forge_window(&buffer, start, cfg)?.into_iter().try_for_each(&mut sink)?;
            start += cfg.pool_size;
            buffer = rest;
        }
    }
    if seen < 2 {
        return Err(Error::CorpusTooSmall { image_id: first_id.unwrap_or_default() });
    }
    // the remainder holds between 2 and pool_size + 1 captions
    forge_window(&buffer, start, cfg)?.into_iter().try_for_each(&mut sink)?;
    Ok(seen)
}

/// Triplets for one pool window whose first caption sits at corpus
/// position `first_ordinal`. [`forge`] is this applied to every window.
pub fn forge_window(window: &[SegmentedCaption], first_ordinal: usize, cfg: &ForgeConfig) -> Result<Vec<Triplet>> {
    let mut out = Vec::new();
    for (offset, seg) in window.iter().enumerate() {
        if seg.units.len() < 2 {
            continue;
        }
        let own: Vec<&str> = seg.unit_texts().collect();
        let candidates: Vec<(&str, &str)> = window
            .iter()
            .filter(|other| other.image_id != seg.image_id)
            .flat_map(|other| other.unit_texts().map(move |u| (other.image_id.as_str(), u)))
            .filter(|(_, u)| !own.contains(u))
            .collect();
        if candidates.is_empty() {
            return Err(Error::CorpusTooSmall { image_id: seg.image_id.clone() });
        }
        let label = format!("{}\u{0}{}", first_ordinal + offset, seg.image_id);
        let mut rng = rng::derive(cfg.seed, label.as_bytes());
        let steps = prefixes(seg);
        for pair in steps.windows(2) {
            let (base, next) = (&pair[0], &pair[1]);
            out.push(Triplet {
                image_id: seg.image_id.clone(),
                base: base.clone(),
                extended: next.text.clone(),
                polarity: Polarity::Positive,
                detail_source: seg.image_id.clone(),
                shuffled: false,
            });

            let (source, unit) = candidates[rng.random_range(0..candidates.len())];
            let shuffled = rng.random_bool(cfg.shuffle_rate);
            let mut words: Vec<&str> = unit.split(' ').collect();
            if shuffled {
                words.shuffle(&mut rng);
            }
            out.push(Triplet {
                image_id: seg.image_id.clone(),
                base: base.clone(),
                extended: format!("{} {}", base.text, words.join(" ")),
                polarity: Polarity::Negative,
                detail_source: source.to_owned(),
                shuffled,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use std::collections::HashSet;

    use proptest::prelude::*;

    use super::*;

    fn seg(id: &str, units: &[&str]) -> SegmentedCaption {
        SegmentedCaption::from_units(id, units).unwrap()
    }

    fn texts(p: &[PartialCaption]) -> Vec<&str> {
        p.iter().map(|c| c.text.as_str()).collect()
    }

    #[test]
    fn prefix_examples() {
        assert_eq!(texts(&prefixes(&seg("i", &["a cat"]))), ["a cat"]);
        let blanket = prefixes(&seg("i", &["a blanket", "with fringed edges"]));
        assert_eq!(texts(&blanket), ["a blanket", "a blanket with fringed edges"]);
        let three = prefixes(&seg("i", &["u1", "u2", "u3"]));
        assert_eq!(three.iter().map(|p| p.depth).collect::<Vec<_>>(), [1, 2, 3]);
        assert_eq!(three[2].text, "u1 u2 u3");
    }

    #[test]
    fn two_captions_of_three_units() {
        let corpus = [seg("a", &["a cat", "on a mat", "near a door"]), seg("b", &["a dog", "in a yard", "by a fence"])];
        let triplets = forge(&corpus, &ForgeConfig::default()).unwrap();
        let pos = triplets.iter().filter(|t| t.polarity == Polarity::Positive).count();
        let neg = triplets.iter().filter(|t| t.polarity == Polarity::Negative).count();
        assert_eq!((pos, neg), (4, 4));
    }

    #[test]
    fn zero_shuffle_rate_keeps_word_order() {
        let corpus = [
            seg("a", &["a cat", "on a soft mat", "near the door"]),
            seg("b", &["a dog", "in a big yard", "by the old fence"]),
        ];
        let cfg = ForgeConfig { shuffle_rate: 0.0, ..ForgeConfig::default() };
        for t in forge(&corpus, &cfg).unwrap() {
            if t.polarity == Polarity::Negative {
                assert!(!t.shuffled);
                let appended = &t.extended[t.base.text.len() + 1..];
                let source = corpus.iter().find(|c| c.image_id == t.detail_source).unwrap();
                assert!(source.unit_texts().any(|u| u == appended), "{appended}");
            }
        }
    }

    #[test]
    fn shuffle_rate_binomial_bounds() {
        // Binomial(1000, 0.9): mean 900, sd 9.49, so +-3 sd is within [870, 930].
        let corpus: Vec<SegmentedCaption> = (0..100)
            .map(|i| {
                let units: Vec<String> = (0..11).map(|k| format!("w{i}x{k} left{k} right{k}")).collect();
                SegmentedCaption::from_units(format!("img{i}"), &units).unwrap()
            })
            .collect();
        let cfg = ForgeConfig { shuffle_rate: 0.9, pool_size: 400, seed: 20250 };
        let triplets = forge(&corpus, &cfg).unwrap();
        let negatives: Vec<_> = triplets.iter().filter(|t| t.polarity == Polarity::Negative).collect();
        assert_eq!(negatives.len(), 1000);
        let shuffled = negatives.iter().filter(|t| t.shuffled).count();
        assert!((870..=930).contains(&shuffled), "{shuffled}");
    }

    #[test]
    fn tiny_corpus_errors() {
        let cfg = ForgeConfig::default();
        assert!(matches!(forge(&[seg("a", &["x", "y"])], &cfg), Err(Error::CorpusTooSmall { .. })));
        // same image twice: no cross-pair unit
        let same = [seg("a", &["x", "y"]), seg("a", &["z", "w"])];
        assert!(matches!(forge(&same, &cfg), Err(Error::CorpusTooSmall { .. })));
    }

    #[test]
    fn invalid_config() {
        let corpus = [seg("a", &["x", "y"]), seg("b", &["z", "w"])];
        let bad_rate = ForgeConfig { shuffle_rate: 1.5, ..ForgeConfig::default() };
        assert!(matches!(forge(&corpus, &bad_rate), Err(Error::InvalidConfig(_))));
        let bad_pool = ForgeConfig { pool_size: 1, ..ForgeConfig::default() };
        assert!(matches!(forge(&corpus, &bad_pool), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn windows_fold_singleton_tail() {
        assert_eq!(windows(5, 2), [0..2, 2..5]);
        assert_eq!(windows(4, 2), [0..2, 2..4]);
        assert_eq!(windows(3, 400), vec![0..3]);
    }

    #[test]
    fn streaming_matches_batch() {
        let corpus: Vec<SegmentedCaption> = (0..23)
            .map(|i| {
                let units: Vec<String> = (0..2 + i % 3).map(|j| format!("unit {i} {j}")).collect();
                SegmentedCaption::from_units(format!("img{i}"), &units).unwrap()
            })
            .collect();
        for pool_size in [2, 3, 5, 11, 21, 22, 23, 400] {
            let cfg = ForgeConfig { pool_size, seed: 3, ..Default::default() };
            let mut streamed = Vec::new();
            let n = forge_stream(corpus.iter().cloned().map(Ok), &cfg, |t| {
                streamed.push(t);
                Ok(())
            })
            .unwrap();
            assert_eq!(n, corpus.len());
            assert_eq!(streamed, forge(&corpus, &cfg).unwrap(), "pool {pool_size}");
        }
        let one = forge_stream(corpus[..1].iter().cloned().map(Ok), &ForgeConfig::default(), |_| Ok(()));
        assert!(matches!(one, Err(Error::CorpusTooSmall { .. })));
    }

    #[test]
    fn record_round_trip() {
        let corpus = [seg("a", &["x1", "y1"]), seg("b", &["z1", "w1"])];
        for t in forge(&corpus, &ForgeConfig::default()).unwrap() {
            let line = serde_json::to_string(&TripletRecord::from(&t)).unwrap();
            let back: TripletRecord = serde_json::from_str(&line).unwrap();
            assert_eq!(Triplet::from(back), t);
        }
    }

    fn corpus_strategy() -> impl Strategy<Value = Vec<SegmentedCaption>> {
        prop::collection::vec(prop::collection::vec("[a-e]{1,3}( [a-e]{1,3}){0,2}", 1..5), 2..12).prop_map(|captions| {
            captions
                .into_iter()
                .enumerate()
                .map(|(i, units)| SegmentedCaption::from_units(format!("i{}", i % 7), &units).unwrap())
                .collect()
        })
    }

    proptest! {
        #[test]
        fn forge_invariants(corpus in corpus_strategy(), seed in any::<u64>(), pool in 2usize..6) {
            let cfg = ForgeConfig { shuffle_rate: 0.5, pool_size: pool, seed };
            let Ok(triplets) = forge(&corpus, &cfg) else { return Ok(()) };
            let pos: Vec<_> = triplets.iter().filter(|t| t.polarity == Polarity::Positive).collect();
            let neg: Vec<_> = triplets.iter().filter(|t| t.polarity == Polarity::Negative).collect();
            prop_assert_eq!(pos.len(), neg.len());
            let expected: usize = corpus.iter().map(|c| c.units.len().saturating_sub(1)).sum();
            prop_assert_eq!(pos.len(), expected);
            for t in &neg {
                prop_assert_ne!(&t.detail_source, &t.image_id);
            }
            let all_prefixes: HashSet<(String, usize, String)> = corpus
                .iter()
                .flat_map(|c| prefixes(c).into_iter().map(|p| (p.image_id, p.depth, p.text)))
                .collect();
            for t in &pos {
                prop_assert!(all_prefixes.contains(&(t.image_id.clone(), t.base.depth + 1, t.extended.clone())));
            }
            prop_assert_eq!(forge(&corpus, &cfg).unwrap(), triplets);
        }
    }
}
