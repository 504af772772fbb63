//! Training objective and its analytic gradient.
//!
//! `total = alpha * contrastive + beta * pos + gamma * neg`, where the hinge
//! terms use a batch-level margin that is computed from the current
//! similarities but treated as a constant when differentiating.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::model::{normalize, normalize_backward, token_ids, Gradients, ToyDualEncoder};
use crate::error::{Error, Result};

pub const MARGIN_CAP: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { alpha: 1.0, beta: 8.0, gamma: 0.8 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let w = [self.alpha, self.beta, self.gamma];
        if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidConfig("loss weights must be finite and non-negative".into()));
        }
        if w.iter().all(|v| *v == 0.0) {
            return Err(Error::InvalidConfig("loss weights are all zero".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MarginMode {
    #[default]
    Dynamic,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub contrastive: f64,
    pub pos: f64,
    pub neg: f64,
    pub total: f64,
    pub epsilon_pos: f64,
    pub epsilon_neg: f64,
}

fn hinge(pairs: &[(f64, f64)], mode: MarginMode, gap: impl Fn(f64, f64) -> f64) -> Result<(f64, f64)> {
    if pairs.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let n = pairs.len() as f64;
    let eps = match mode {
        MarginMode::Dynamic => (pairs.iter().map(|&(b, e)| gap(b, e)).sum::<f64>() / n).clamp(0.0, MARGIN_CAP),
        MarginMode::Fixed(v) => v,
    };
    let loss = pairs.iter().map(|&(b, e)| (eps - gap(b, e)).max(0.0)).sum::<f64>() / n;
    Ok((loss, eps))
}

/// Hinge over `(theta_base, theta_pos)` pairs; returns `(loss, epsilon)`.
pub fn positive_hinge_loss(pairs: &[(f64, f64)], mode: MarginMode) -> Result<(f64, f64)> {
    hinge(pairs, mode, |base, pos| pos - base)
}

/// Hinge over `(theta_base, theta_neg)` pairs; returns `(loss, epsilon)`.
pub fn negative_hinge_loss(pairs: &[(f64, f64)], mode: MarginMode) -> Result<(f64, f64)> {
    hinge(pairs, mode, |base, neg| base - neg)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    max + xs.map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Symmetric in-batch cross-entropy; row `i` of both inputs is a matched pair.
pub fn contrastive_loss(images: &[Vec<f64>], texts: &[Vec<f64>], temperature: f64) -> Result<f64> {
    Ok(contrastive(images, texts, temperature, false)?.0)
}

/// Loss plus, if requested, `dL/dS` for the logits `S_ik = v_i . t_k / T`.
fn contrastive(
    images: &[Vec<f64>],
    texts: &[Vec<f64>],
    temperature: f64,
    want_grad: bool,
) -> Result<(f64, Vec<Vec<f64>>)> {
    assert_eq!(images.len(), texts.len(), "encodings must be paired");
    let b = images.len();
    if b < 2 {
        return Err(Error::BatchTooSmall(b));
    }
    let logits: Vec<Vec<f64>> =
        images.iter().map(|v| texts.iter().map(|t| dot(v, t) / temperature).collect()).collect();
    let row_lse: Vec<f64> = logits.iter().map(|r| log_sum_exp(r.iter().copied())).collect();
    let col_lse: Vec<f64> = (0..b).map(|k| log_sum_exp(logits.iter().map(move |r| r[k]))).collect();
    let loss = (0..b).map(|i| row_lse[i] + col_lse[i] - 2.0 * logits[i][i]).sum::<f64>() / (2.0 * b as f64);
    let mut grad = Vec::new();
    if want_grad {
        let scale = 1.0 / (2.0 * b as f64);
        grad = (0..b)
            .map(|i| {
                (0..b)
                    .map(|k| {
                        let delta = if i == k { 2.0 } else { 0.0 };
                        let p_row = (logits[i][k] - row_lse[i]).exp();
                        let p_col = (logits[i][k] - col_lse[k]).exp();
                        scale * (p_row + p_col - delta)
                    })
                    .collect()
            })
            .collect();
    }
    Ok((loss, grad))
}

/// One image of a batch: its features, full caption and minimal pairs as
/// `(base, extended)` texts.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageGroup {
    pub image_id: String,
    pub features: Vec<f64>,
    pub caption: String,
    pub positives: Vec<(String, String)>,
    pub negatives: Vec<(String, String)>,
}

/// Indexed form of a list of image groups with each distinct text stored once.
#[derive(Debug, Clone)]
pub struct Batch {
    features: Vec<Vec<f64>>,
    texts: Vec<Vec<usize>>,
    captions: Vec<usize>,
    /// `(image, base text, extended text)`
    positives: Vec<(usize, usize, usize)>,
    negatives: Vec<(usize, usize, usize)>,
}

impl Batch {
    pub fn new(groups: &[&ImageGroup], buckets: usize) -> Result<Self> {
        let mut index: HashMap<String, usize> = HashMap::new();
        let mut texts = Vec::new();
        let mut intern = |text: &str| -> Result<usize> {
            if let Some(&i) = index.get(text) {
                return Ok(i);
            }
            let ids = token_ids(text, buckets);
            if ids.is_empty() {
                return Err(Error::DataMissing(format!("text {text:?} has no tokens")));
            }
            texts.push(ids);
            index.insert(text.to_owned(), texts.len() - 1);
            Ok(texts.len() - 1)
        };
        let (mut features, mut captions, mut positives, mut negatives) = (vec![], vec![], vec![], vec![]);
        for (i, g) in groups.iter().enumerate() {
            features.push(g.features.clone());
            captions.push(intern(&g.caption)?);
            for (base, ext) in &g.positives {
                positives.push((i, intern(base)?, intern(ext)?));
            }
            for (base, ext) in &g.negatives {
                negatives.push((i, intern(base)?, intern(ext)?));
            }
        }
        Ok(Batch { features, texts, captions, positives, negatives })
    }

    pub fn images(&self) -> usize {
        self.features.len()
    }

    pub(crate) fn token_rows(&self) -> impl Iterator<Item = usize> + '_ {
        self.texts.iter().flatten().copied()
    }
}

/// Everything computed by one forward (and optional backward) pass.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub breakdown: LossBreakdown,
    pub grads: Option<Gradients>,
    /// Hinge arguments `eps - gap` per positive, then per negative pair.
    pub hinge_args: Vec<f64>,
}

/// Settings that shape the objective but are not model parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Objective {
    pub weights: LossWeights,
    pub margin: MarginMode,
    pub temperature: f64,
}

/// Forward pass over `batch`, with margins recomputed unless `frozen`
/// supplies `(epsilon_pos, epsilon_neg)`; margins never receive gradient.
pub fn evaluate(
    model: &ToyDualEncoder,
    batch: &Batch,
    objective: &Objective,
    frozen: Option<(f64, f64)>,
    want_grad: bool,
) -> Result<Evaluation> {
    let mut img_u = Vec::with_capacity(batch.images());
    let mut img = Vec::with_capacity(batch.images());
    for x in &batch.features {
        let u = model.project_image(x)?;
        let (v, n) = normalize(&u)?;
        img_u.push(n);
        img.push(v);
    }
    let mut txt_n = Vec::with_capacity(batch.texts.len());
    let mut txt = Vec::with_capacity(batch.texts.len());
    for ids in &batch.texts {
        let (t, n) = normalize(&model.pool_tokens(ids)?)?;
        txt_n.push(n);
        txt.push(t);
    }

    let LossWeights { alpha, beta, gamma } = objective.weights;
    let mut g_img = vec![vec![0.0; model.embed_dim]; img.len()];
    let mut g_txt = vec![vec![0.0; model.embed_dim]; txt.len()];
    let axpy = |acc: &mut [f64], a: f64, x: &[f64]| acc.iter_mut().zip(x).for_each(|(y, xi)| *y += a * xi);

    let captions: Vec<Vec<f64>> = batch.captions.iter().map(|&c| txt[c].clone()).collect();
    let (contrastive, d_logits) = contrastive(&img, &captions, objective.temperature, want_grad)?;
    if want_grad && alpha != 0.0 {
        for (i, row) in d_logits.iter().enumerate() {
            for (k, &d) in row.iter().enumerate() {
                let d = alpha * d / objective.temperature;
                let ck = batch.captions[k];
                axpy(&mut g_img[i], d, &txt[ck]);
                axpy(&mut g_txt[ck], d, &img[i]);
            }
        }
    }

    let theta = |pairs: &[(usize, usize, usize)]| -> Vec<(f64, f64)> {
        pairs.iter().map(|&(i, b, e)| (dot(&img[i], &txt[b]), dot(&img[i], &txt[e]))).collect()
    };
    let pos_theta = theta(&batch.positives);
    let neg_theta = theta(&batch.negatives);
    let pos_mode = match frozen {
        Some((p, _)) => MarginMode::Fixed(p),
        None => objective.margin,
    };
    let neg_mode = match frozen {
        Some((_, n)) => MarginMode::Fixed(n),
        None => objective.margin,
    };
    let (pos, epsilon_pos) = positive_hinge_loss(&pos_theta, pos_mode)?;
    let (neg, epsilon_neg) = negative_hinge_loss(&neg_theta, neg_mode)?;

    let mut hinge_args = Vec::with_capacity(pos_theta.len() + neg_theta.len());
    // d(hinge arg)/d(theta_base) and d/d(theta_ext): +1/-1 for positives, -1/+1 for negatives
    for (pairs, thetas, eps, weight, sign) in [
        (&batch.positives, &pos_theta, epsilon_pos, beta, 1.0),
        (&batch.negatives, &neg_theta, epsilon_neg, gamma, -1.0),
    ] {
        let scale = weight / pairs.len() as f64;
        for (&(i, b, e), &(tb, te)) in pairs.iter().zip(thetas) {
            let arg = eps - sign * (te - tb);
            hinge_args.push(arg);
            if want_grad && arg > 0.0 && scale != 0.0 {
                let (db, de) = (sign * scale, -sign * scale);
                axpy(&mut g_img[i], db, &txt[b]);
                axpy(&mut g_txt[b], db, &img[i]);
                axpy(&mut g_img[i], de, &txt[e]);
                axpy(&mut g_txt[e], de, &img[i]);
            }
        }
    }

    let total = alpha * contrastive + beta * pos + gamma * neg;
    let breakdown = LossBreakdown { contrastive, pos, neg, total, epsilon_pos, epsilon_neg };

    let grads = want_grad.then(|| {
        let mut grads = Gradients::zeros_like(model);
        let d = model.embed_dim;
        for ((x, g), (v, n)) in batch.features.iter().zip(&g_img).zip(img.iter().zip(&img_u)) {
            let du = normalize_backward(g, v, *n);
            for (a, xa) in x.iter().enumerate() {
                axpy(&mut grads.image_proj[a * d..(a + 1) * d], *xa, &du);
            }
        }
        for ((ids, g), (t, n)) in batch.texts.iter().zip(&g_txt).zip(txt.iter().zip(&txt_n)) {
            let dm = normalize_backward(g, t, *n);
            let share = 1.0 / ids.len() as f64;
            for &id in ids {
                axpy(&mut grads.token_table[id * d..(id + 1) * d], share, &dm);
            }
        }
        grads
    });
    Ok(Evaluation { breakdown, grads, hinge_args })
}
