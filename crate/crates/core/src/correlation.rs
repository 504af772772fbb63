//! Agreement between metric scores and human ratings.
//!
//! Four statistics per sample set: Pearson's r, 1 - R², Kendall's tau-b and
//! Spearman's rho. 1 - R² comes in two flavours:
//!
//! - `one_minus_r2`: metric scores are min-max rescaled onto the range of
//!   the human scores and used as predictions without fitting, so the value
//!   is `SS_res / SS_tot` and is unbounded above;
//! - `one_minus_r2_ols`: the least-squares fit, which is exactly `1 - r²`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgedSample {
    pub image_id: String,
    pub caption_id: String,
    pub metric_score: f64,
    pub human_score: f64,
    pub caption_token_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub pcc: f64,
    pub one_minus_r2: f64,
    pub one_minus_r2_ols: f64,
    pub kendall_tau: f64,
    pub spearman: f64,
    pub n: usize,
    /// Half-open token-count range `[lo, hi)`; `hi = None` is unbounded.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bucket: Option<(usize, Option<usize>)>,
}

fn check(metric: &[f64], human: &[f64]) -> Result<()> {
    assert_eq!(metric.len(), human.len(), "series must be paired");
    if metric.len() < 3 {
        return Err(Error::TooFewSamples(metric.len()));
    }
    if metric.iter().chain(human).any(|v| !v.is_finite()) {
        return Err(Error::InvalidConfig("non-finite score".into()));
    }
    for (series, name) in [(metric, "metric"), (human, "human")] {
        if series.iter().all(|&v| v == series[0]) {
            return Err(Error::ZeroVariance(name));
        }
    }
    Ok(())
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn pearson_unchecked(x: &[f64], y: &[f64]) -> f64 {
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0)
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    check(x, y)?;
    Ok(pearson_unchecked(x, y))
}

/// 1-based ranks with ties sharing the mean of the positions they span.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && x[order[j]] == x[order[i]] {
            j += 1;
        }
        // positions i+1..=j share rank (i+1+j)/2
        let rank = (i + 1 + j) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = rank;
        }
        i = j;
    }
    ranks
}

pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    check(x, y)?;
    Ok(pearson_unchecked(&average_ranks(x), &average_ranks(y)))
}

/// Number of tied pairs among runs of equal adjacent values.
fn tied_pairs<T: PartialEq>(sorted: impl Iterator<Item = T>) -> i64 {
    let mut total = 0i64;
    let mut run = 0i64;
    let mut prev: Option<T> = None;
    for v in sorted {
        if prev.as_ref() == Some(&v) {
            run += 1;
        } else {
            total += run * (run - 1) / 2;
            run = 1;
        }
        prev = Some(v);
    }
    total + run * (run - 1) / 2
}

/// Sorts `values` in place and returns the number of inversions
/// (pairs `i < j` with `values[i] > values[j]`).
fn count_inversions(values: &mut [f64], scratch: &mut [f64]) -> i64 {
    let n = values.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = count_inversions(&mut values[..mid], &mut scratch[..mid])
        + count_inversions(&mut values[mid..], &mut scratch[mid..]);
    let (mut i, mut j, mut k) = (0, mid, 0);
    while i < mid && j < n {
        if values[j] < values[i] {
            scratch[k] = values[j];
            swaps += (mid - i) as i64;
            j += 1;
        } else {
            scratch[k] = values[i];
            i += 1;
        }
        k += 1;
    }
    scratch[k..k + mid - i].copy_from_slice(&values[i..mid]);
    k += mid - i;
    scratch[k..k + n - j].copy_from_slice(&values[j..n]);
    values.copy_from_slice(&scratch[..n]);
    swaps
}

/// Kendall's tau-b in O(n log n) (Knight's merge-sort algorithm).
pub fn kendall_tau_b(x: &[f64], y: &[f64]) -> Result<f64> {
    check(x, y)?;
    let n = x.len() as i64;
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]).then(y[a].total_cmp(&y[b])));

    let pairs = n * (n - 1) / 2;
    let ties_x = tied_pairs(order.iter().map(|&i| x[i]));
    let ties_xy = tied_pairs(order.iter().map(|&i| (x[i], y[i])));
    let mut ys: Vec<f64> = order.iter().map(|&i| y[i]).collect();
    let mut scratch = vec![0.0; ys.len()];
    let discordant = count_inversions(&mut ys, &mut scratch);
    let ties_y = tied_pairs(ys.iter().copied());

    let numerator = pairs - ties_x - ties_y + ties_xy - 2 * discordant;
    let tau = numerator as f64 / (((pairs - ties_x) as f64) * ((pairs - ties_y) as f64)).sqrt();
    Ok(tau.clamp(-1.0, 1.0))
}

/// `SS_res / SS_tot` with the metric min-max rescaled onto the human range.
pub fn one_minus_r2_rescaled(metric: &[f64], human: &[f64]) -> Result<f64> {
    check(metric, human)?;
    let (mlo, mhi) = min_max(metric);
    let (hlo, hhi) = min_max(human);
    let hbar = mean(human);
    let (mut ss_res, mut ss_tot) = (0.0, 0.0);
    for (m, h) in metric.iter().zip(human) {
        let predicted = hlo + (m - mlo) / (mhi - mlo) * (hhi - hlo);
        ss_res += (h - predicted).powi(2);
        ss_tot += (h - hbar).powi(2);
    }
    Ok(ss_res / ss_tot)
}

fn min_max(x: &[f64]) -> (f64, f64) {
    x.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
}

pub fn correlate_series(metric: &[f64], human: &[f64]) -> Result<CorrelationReport> {
    check(metric, human)?;
    let pcc = pearson_unchecked(metric, human);
    Ok(CorrelationReport {
        pcc,
        one_minus_r2: one_minus_r2_rescaled(metric, human)?,
        one_minus_r2_ols: 1.0 - pcc * pcc,
        kendall_tau: kendall_tau_b(metric, human)?,
        spearman: spearman(metric, human)?,
        n: metric.len(),
        bucket: None,
    })
}

pub fn correlate(samples: &[JudgedSample]) -> Result<CorrelationReport> {
    let (metric, human): (Vec<f64>, Vec<f64>) = samples.iter().map(|s| (s.metric_score, s.human_score)).unzip();
    correlate_series(&metric, &human)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum BucketOutcome {
    Ok { report: CorrelationReport },
    Skipped { n: usize, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketReport {
    pub lo: usize,
    pub hi: Option<usize>,
    #[serde(flatten)]
    pub outcome: BucketOutcome,
}

/// One report per half-open token-count interval delimited by `edges`
/// (`[0, e1), [e1, e2), ..., [ek, inf)`). Buckets whose statistics are
/// undefined are reported as skipped.
pub fn bucketed_correlate(samples: &[JudgedSample], edges: &[usize]) -> Result<Vec<BucketReport>> {
    if edges.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::BadEdges);
    }
    let bounds: Vec<(usize, Option<usize>)> = std::iter::once(0)
        .chain(edges.iter().copied())
        .zip(edges.iter().copied().map(Some).chain(std::iter::once(None)))
        .collect();
    Ok(bounds
        .into_iter()
        .map(|(lo, hi)| {
            let inside: Vec<JudgedSample> = samples
                .iter()
                .filter(|s| s.caption_token_count >= lo && hi.is_none_or(|h| s.caption_token_count < h))
                .cloned()
                .collect();
            let outcome = match correlate(&inside) {
                Ok(mut report) => {
                    report.bucket = Some((lo, hi));
                    BucketOutcome::Ok { report }
                }
                Err(e) => BucketOutcome::Skipped { n: inside.len(), reason: e.to_string() },
            };
            BucketReport { lo, hi, outcome }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerImageReport {
    /// Mean of the within-image Kendall tau-b values.
    pub mean_kendall_tau: f64,
    pub images_used: usize,
    pub images_skipped: usize,
}

/// Sample-wise aggregation: Kendall tau-b among the captions of each image,
/// averaged over images. Images with fewer than two captions or with
/// constant scores are skipped.
pub fn per_image_kendall(samples: &[JudgedSample]) -> Result<PerImageReport> {
    let mut groups: BTreeMap<&str, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for s in samples {
        let g = groups.entry(&s.image_id).or_default();
        g.0.push(s.metric_score);
        g.1.push(s.human_score);
    }
    let mut taus = Vec::new();
    let mut skipped = 0;
    for (metric, human) in groups.values() {
        let tau = if metric.len() == 2 {
            // tau-b on a single pair is the sign agreement
            let (dm, dh) = (metric[1] - metric[0], human[1] - human[0]);
            (dm != 0.0 && dh != 0.0).then(|| dm.signum() * dh.signum())
        } else {
            kendall_tau_b(metric, human).ok()
        };
        match tau {
            Some(t) => taus.push(t),
            None => skipped += 1,
        }
    }
    if taus.is_empty() {
        return Err(Error::TooFewSamples(0));
    }
    Ok(PerImageReport { mean_kendall_tau: mean(&taus), images_used: taus.len(), images_skipped: skipped })
}
