//! Finite-difference check of the analytic gradient.

use serde::{Deserialize, Serialize};

use super::loss::{evaluate, Batch, Objective};
use super::model::ToyDualEncoder;
use crate::error::{Error, Result};

pub const STEP: f64 = 1e-5;
/// Hinge arguments this close to zero are reported as kinks.
pub const KINK_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    /// `max |analytic - numeric| / max(1, |numeric|)` over checked parameters.
    pub max_rel_error: f64,
    pub checked: usize,
    /// Parameters whose perturbation moved some hinge across its kink.
    pub excluded: usize,
    /// Hinge terms sitting at their kink in the unperturbed batch.
    pub kinks: usize,
}

fn active(args: &[f64]) -> impl Iterator<Item = bool> + '_ {
    args.iter().map(|a| *a > 0.0)
}

/// Compares the analytic gradient of the total loss with central
/// differences over every parameter. Margins are frozen at their
/// unperturbed values, matching how they are treated in training.
pub fn gradient_check(model: &ToyDualEncoder, batch: &Batch, objective: &Objective) -> Result<GradCheckReport> {
    let base = evaluate(model, batch, objective, None, true)?;
    let frozen = Some((base.breakdown.epsilon_pos, base.breakdown.epsilon_neg));
    let grads = base.grads.expect("requested");
    let analytic: Vec<f64> = grads.image_proj.iter().chain(&grads.token_table).copied().collect();

    // Rows never read by the batch leave the loss bit-for-bit unchanged, so
    // their numeric derivative is exactly zero without evaluating.
    let mut used = vec![false; model.buckets];
    batch.token_rows().for_each(|r| used[r] = true);
    let offset = model.image_proj.len();
    let d = model.embed_dim;

    let mut probe = model.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        excluded: 0,
        kinks: base.hinge_args.iter().filter(|a| a.abs() <= KINK_TOL).count(),
    };
    for (i, &a) in analytic.iter().enumerate() {
        let numeric = if i >= offset && !used[(i - offset) / d] {
            0.0
        } else {
            let original = *probe.param_mut(i);
            *probe.param_mut(i) = original + STEP;
            let plus = evaluate(&probe, batch, objective, frozen, false)?;
            *probe.param_mut(i) = original - STEP;
            let minus = evaluate(&probe, batch, objective, frozen, false)?;
            *probe.param_mut(i) = original;
            let same = |args: &[f64]| active(args).eq(active(&base.hinge_args));
            if !same(&plus.hinge_args) || !same(&minus.hinge_args) {
                report.excluded += 1;
                continue;
            }
            (plus.breakdown.total - minus.breakdown.total) / (2.0 * STEP)
        };
        let err = (a - numeric).abs() / numeric.abs().max(1.0);
        if !err.is_finite() {
            return Err(Error::NonFinite(format!("gradient of parameter {i}")));
        }
        report.max_rel_error = report.max_rel_error.max(err);
        report.checked += 1;
    }
    Ok(report)
}
