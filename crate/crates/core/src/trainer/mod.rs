//! Desk-scale dual encoder trained on minimal-pair triplets.
//!
//! Images are embedded by a linear projection of their features, texts by
//! the mean of hashed token embeddings; both are unit-normalized. A batch is
//! a set of images together with all of their positive and negative pairs,
//! and the contrastive term pairs each image with its full caption.

pub mod gradcheck;
pub mod loss;
pub mod model;
pub mod optim;
pub mod synth;

use std::collections::HashMap;
use std::io::Write;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use gradcheck::{gradient_check, GradCheckReport};
pub use loss::{
    contrastive_loss, evaluate, negative_hinge_loss, positive_hinge_loss, Batch, ImageGroup, LossBreakdown,
    LossWeights, MarginMode, Objective,
};
pub use model::{Gradients, ToyDualEncoder};
pub use synth::{synth_generate, synth_generate_with, SynthCorpus, SynthParams};

use crate::embedding::EmbeddingTable;
use crate::error::{Error, Result};
use crate::metrics::{specificity_rate, ScoredTriplet, Similarity, SpecificityReport};
use crate::rng;
use crate::triplet::{Polarity, Triplet};
use optim::AdamW;

/// A stretch of epochs trained with one set of loss weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Phase {
    pub epochs: usize,
    pub weights: LossWeights,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// Images per step.
    pub batch_size: usize,
    pub epochs: usize,
    pub margin_mode: MarginMode,
    pub temperature: f64,
    pub seed: u64,
    /// Trailing share of images kept out of training for evaluation.
    pub holdout_fraction: f64,
    /// Overrides `epochs` and the run's weights when non-empty.
    pub phases: Vec<Phase>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-5,
            weight_decay: 1e-2,
            batch_size: 48,
            epochs: 50,
            margin_mode: MarginMode::Dynamic,
            temperature: 0.07,
            seed: 0,
            holdout_fraction: 0.2,
            phases: Vec::new(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate {} must be positive", self.learning_rate));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return bad(format!("temperature {} must be positive", self.temperature));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight_decay {} must be non-negative", self.weight_decay));
        }
        if self.batch_size < 2 {
            return bad(format!("batch_size {} < 2", self.batch_size));
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return bad(format!("holdout_fraction {} not in [0, 1)", self.holdout_fraction));
        }
        if let MarginMode::Fixed(v) = self.margin_mode {
            if !(0.0..=loss::MARGIN_CAP).contains(&v) {
                return bad(format!("fixed margin {v} not in [0, {}]", loss::MARGIN_CAP));
            }
        }
        self.phases.iter().try_for_each(|p| p.weights.validate())
    }

    fn schedule(&self, weights: &LossWeights) -> Vec<Phase> {
        if self.phases.is_empty() {
            vec![Phase { epochs: self.epochs, weights: *weights }]
        } else {
            self.phases.clone()
        }
    }
}

/// Contents of a training config file: [`TrainConfig`] keys at the top
/// level plus an optional `[weights]` table.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainSettings {
    pub config: TrainConfig,
    pub weights: LossWeights,
}

impl TrainSettings {
    pub fn from_toml(text: &str) -> Result<Self> {
        let invalid = |e: toml::de::Error| Error::InvalidConfig(e.to_string());
        let mut table: toml::Table = toml::from_str(text).map_err(invalid)?;
        let weights = match table.remove("weights") {
            Some(w) => w.try_into().map_err(invalid)?,
            None => LossWeights::default(),
        };
        let settings = Self { config: table.try_into().map_err(invalid)?, weights };
        settings.config.validate()?;
        settings.weights.validate()?;
        Ok(settings)
    }
}

/// Image groups split into a training part and a held-out tail.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingData {
    pub train: Vec<ImageGroup>,
    pub holdout: Vec<ImageGroup>,
}

impl TrainingData {
    /// Groups `triplets` by image in order of first appearance. An image's
    /// full caption is the extension of its deepest positive triplet.
    pub fn assemble(triplets: &[Triplet], features: &EmbeddingTable, holdout_fraction: f64) -> Result<Self> {
        let mut order: Vec<&str> = Vec::new();
        let mut groups: HashMap<&str, (usize, ImageGroup)> = HashMap::new();
        for t in triplets {
            let entry = groups.entry(&t.image_id).or_insert_with(|| {
                order.push(&t.image_id);
                (
                    0,
                    ImageGroup {
                        image_id: t.image_id.clone(),
                        features: Vec::new(),
                        caption: String::new(),
                        positives: Vec::new(),
                        negatives: Vec::new(),
                    },
                )
            });
            let pair = (t.base.text.clone(), t.extended.clone());
            match t.polarity {
                Polarity::Positive => {
                    if t.base.depth + 1 > entry.0 {
                        entry.0 = t.base.depth + 1;
                        entry.1.caption = t.extended.clone();
                    }
                    entry.1.positives.push(pair);
                }
                Polarity::Negative => entry.1.negatives.push(pair),
            }
        }
        let mut all = Vec::with_capacity(order.len());
        for id in order {
            let (_, mut g) = groups.remove(id).expect("grouped");
            if g.positives.is_empty() || g.negatives.is_empty() {
                return Err(Error::DataMissing(format!("image {id:?} lacks positive or negative triplets")));
            }
            let f = features.get(id).ok_or_else(|| Error::DataMissing(format!("features for image {id:?}")))?;
            g.features = f.iter().map(|&v| f64::from(v)).collect();
            all.push(g);
        }
        let held = (all.len() as f64 * holdout_fraction).round() as usize;
        let holdout = all.split_off(all.len() - held);
        if all.len() < 2 {
            return Err(Error::DataMissing(format!("{} training images, need at least 2", all.len())));
        }
        Ok(Self { train: all, holdout })
    }
}

/// Similarities from a trained model and raw image features.
pub struct ModelSimilarity<'a> {
    pub model: &'a ToyDualEncoder,
    pub features: &'a EmbeddingTable,
}

impl Similarity for ModelSimilarity<'_> {
    fn theta(&self, image_id: &str, text: &str) -> Result<f64> {
        let f = self
            .features
            .get(image_id)
            .ok_or_else(|| Error::DataMissing(format!("features for image {image_id:?}")))?;
        let x: Vec<f64> = f.iter().map(|&v| f64::from(v)).collect();
        let v = self.model.encode_image(&x)?;
        let t = self.model.encode_text(text)?;
        Ok(v.iter().zip(&t).map(|(a, b)| a * b).sum())
    }
}

/// Specificity rate of `model` over the pairs held by `groups`.
pub fn group_report(model: &ToyDualEncoder, groups: &[ImageGroup]) -> Result<SpecificityReport> {
    let mut scored = Vec::new();
    for g in groups {
        let v = model.encode_image(&g.features)?;
        let theta =
            |text: &str| -> Result<f64> { Ok(v.iter().zip(&model.encode_text(text)?).map(|(a, b)| a * b).sum()) };
        for (pairs, polarity) in [(&g.positives, Polarity::Positive), (&g.negatives, Polarity::Negative)] {
            for (base, ext) in pairs {
                scored.push(ScoredTriplet::new(scored.len(), polarity, theta(base)?, theta(ext)?));
            }
        }
    }
    specificity_rate(&scored)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean over the epoch's steps.
    pub loss: LossBreakdown,
    pub holdout: Option<SpecificityReport>,
}

pub const LOG_HEADER: &str = "epoch,contrastive,pos,neg,total,eps_pos,eps_neg,sr_pos,sr_neg";

pub fn write_log_csv<W: Write>(log: &[EpochLog], out: &mut W) -> Result<()> {
    writeln!(out, "{LOG_HEADER}")?;
    for e in log {
        let l = &e.loss;
        let (sp, sn) =
            e.holdout.map_or((String::new(), String::new()), |r| (r.sr_pos.to_string(), r.sr_neg.to_string()));
        writeln!(
            out,
            "{},{},{},{},{},{},{},{sp},{sn}",
            e.epoch, l.contrastive, l.pos, l.neg, l.total, l.epsilon_pos, l.epsilon_neg
        )?;
    }
    Ok(())
}

/// Contiguous batches of `size`; a lone trailing image joins the previous batch.
fn batches(order: &[usize], size: usize) -> Vec<&[usize]> {
    let mut out: Vec<&[usize]> = order.chunks(size).collect();
    if out.len() > 1 && out.last().is_some_and(|b| b.len() < 2) {
        out.pop();
        let n = out.len();
        let start = (n - 1) * size;
        out[n - 1] = &order[start..];
    }
    out
}

/// Trains a fresh model. `weights` applies unless `cfg.phases` is set.
pub fn train(data: &TrainingData, cfg: &TrainConfig, weights: &LossWeights) -> Result<(ToyDualEncoder, Vec<EpochLog>)> {
    cfg.validate()?;
    weights.validate()?;
    let feature_dim = data.train.first().map_or(model::FEATURE_DIM, |g| g.features.len());
    let mut model = ToyDualEncoder::with_dims(feature_dim, model::EMBED_DIM, model::BUCKETS, cfg.seed);
    let mut opt = AdamW::new(&model, cfg.learning_rate, cfg.weight_decay);
    let mut log = Vec::new();
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut epoch = 0;
    for phase in cfg.schedule(weights) {
        let objective = Objective { weights: phase.weights, margin: cfg.margin_mode, temperature: cfg.temperature };
        for _ in 0..phase.epochs {
            epoch += 1;
            order.shuffle(&mut rng::derive(cfg.seed, format!("epoch/{epoch}").as_bytes()));
            let mut sum = LossBreakdown::default();
            let steps = batches(&order, cfg.batch_size);
            for (step, idx) in steps.iter().enumerate() {
                let groups: Vec<&ImageGroup> = idx.iter().map(|&i| &data.train[i]).collect();
                let batch = Batch::new(&groups, model.buckets)?;
                let eval = evaluate(&model, &batch, &objective, None, true)?;
                let b = eval.breakdown;
                if !b.total.is_finite() {
                    return Err(Error::NonFiniteLoss { epoch, step, detail: format!("{b:?}") });
                }
                opt.step(&mut model, eval.grads.as_ref().expect("requested"));
                if !model.is_finite() {
                    return Err(Error::NonFiniteLoss { epoch, step, detail: "parameters diverged".into() });
                }
                sum.contrastive += b.contrastive;
                sum.pos += b.pos;
                sum.neg += b.neg;
                sum.total += b.total;
                sum.epsilon_pos += b.epsilon_pos;
                sum.epsilon_neg += b.epsilon_neg;
            }
            let n = steps.len() as f64;
            let loss = LossBreakdown {
                contrastive: sum.contrastive / n,
                pos: sum.pos / n,
                neg: sum.neg / n,
                total: sum.total / n,
                epsilon_pos: sum.epsilon_pos / n,
                epsilon_neg: sum.epsilon_neg / n,
            };
            let holdout = if data.holdout.is_empty() { None } else { Some(group_report(&model, &data.holdout)?) };
            log.push(EpochLog { epoch, loss, holdout });
        }
    }
    Ok((model, log))
}
