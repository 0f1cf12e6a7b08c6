//! The discrete-continuous training loss over anchor grids, pixel-wise BCE
//! for the visible net, and the tensor-graph builders used during training.
//!
//! The grid-level functions here are the reference definitions on plain
//! `AnchorGridSet` values (probabilities clamped away from 0 and 1). The
//! `*_from_heads` builders compute the same quantities on the autograd tape
//! from raw logits, which is the numerically stable differentiable path.

use serde::{Deserialize, Serialize};

use super::real::Real;
use super::tape::{Tape, Var};
use super::tensor::Tensor;
use super::NnError;
use crate::anchor::{AnchorGridSet, ANCHOR_CATEGORIES};
use crate::bev::CurbMask;

/// Probability clamp for the log terms.
pub const PROB_EPS: f64 = 1e-7;

/// Weight of the continuous loss against the discrete loss.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub alpha: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig { alpha: 1.0 }
    }
}

/// Quadratic inside the unit interval, linear outside, continuous and once
/// differentiable at |x| = 1.
pub fn smooth_l1(x: f64) -> f64 {
    let a = x.abs();
    if a < 1.0 {
        0.5 * x * x
    } else {
        a - 0.5
    }
}

fn check_shapes(pred: &AnchorGridSet, gt: &AnchorGridSet) -> Result<(), NnError> {
    if pred.grids.len() != gt.grids.len() {
        return Err(NnError::ShapeMismatch(format!(
            "scale count {} vs {}",
            pred.grids.len(),
            gt.grids.len()
        )));
    }
    for (p, g) in pred.grids.iter().zip(&gt.grids) {
        if p.rows != g.rows || p.cols != g.cols || p.cell_px != g.cell_px {
            return Err(NnError::ShapeMismatch(format!(
                "grid {}px: {}x{} vs {}x{}",
                p.cell_px, p.rows, p.cols, g.rows, g.cols
            )));
        }
    }
    Ok(())
}

/// Binary cross-entropy of category presence over every cell and category,
/// summed across scales. Predictions are clamped to [eps, 1-eps].
pub fn loss_discrete(pred: &AnchorGridSet, gt: &AnchorGridSet) -> Result<f64, NnError> {
    check_shapes(pred, gt)?;
    let mut total = 0.0;
    for (p, g) in pred.grids.iter().zip(&gt.grids) {
        for (pc, gc) in p.cells.iter().zip(&g.cells) {
            for k in 0..ANCHOR_CATEGORIES {
                let y = gc.mask[k] as f64;
                let ph = (pc.presence[k] as f64).clamp(PROB_EPS, 1.0 - PROB_EPS);
                total -= y * ph.ln() + (1.0 - y) * (1.0 - ph).ln();
            }
        }
    }
    Ok(total)
}

/// Masked smooth-L1 regression of the line parameters: omega residuals in
/// radians, beta residuals normalized by the cell size so the smooth-L1
/// transition point is scale-consistent. Cells with mask 0 contribute
/// exactly 0.
pub fn loss_continuous(pred: &AnchorGridSet, gt: &AnchorGridSet) -> Result<f64, NnError> {
    check_shapes(pred, gt)?;
    let mut total = 0.0;
    for (p, g) in pred.grids.iter().zip(&gt.grids) {
        let cell = p.cell_px as f64;
        for (pc, gc) in p.cells.iter().zip(&g.cells) {
            for k in 0..ANCHOR_CATEGORIES {
                let y = gc.mask[k] as f64;
                if y == 0.0 {
                    continue;
                }
                let dw = pc.omega[k] as f64 - gc.omega[k] as f64;
                let db = (pc.beta[k] as f64 - gc.beta[k] as f64) / cell;
                total += y * (smooth_l1(dw) + smooth_l1(db));
            }
        }
    }
    Ok(total)
}

/// Total loss: sum of per-scale discrete losses plus alpha times the sum of
/// per-scale continuous losses.
pub fn loss_total(
    pred: &AnchorGridSet,
    gt: &AnchorGridSet,
    cfg: &LossConfig,
) -> Result<f64, NnError> {
    Ok(loss_discrete(pred, gt)? + cfg.alpha * loss_continuous(pred, gt)?)
}

/// Mean pixel-wise binary cross-entropy with a positive-class weight.
pub fn pixel_bce(pred: &CurbMask, gt: &CurbMask, pos_weight: f64) -> Result<f64, NnError> {
    if pred.spec != gt.spec {
        return Err(NnError::ShapeMismatch(format!(
            "{}x{} vs {}x{}",
            pred.spec.width, pred.spec.height, gt.spec.width, gt.spec.height
        )));
    }
    let mut total = 0.0;
    for (&p, &y) in pred.data.iter().zip(&gt.data) {
        let p = (p as f64).clamp(PROB_EPS, 1.0 - PROB_EPS);
        let y = y as f64;
        total -= pos_weight * y * p.ln() + (1.0 - y) * (1.0 - p).ln();
    }
    Ok(total / pred.data.len() as f64)
}

/// Positive-class weight for a batch: negatives over positives, capped.
pub fn batch_pos_weight(masks: &[&CurbMask], cap: f64) -> f64 {
    let mut pos = 0usize;
    let mut total = 0usize;
    for m in masks {
        pos += m.count_nonzero();
        total += m.data.len();
    }
    if pos == 0 {
        return cap;
    }
    (((total - pos) as f64) / pos as f64).min(cap)
}

/// Ground-truth tensors for one scale of an anchor grid: presence targets,
/// omega targets (radians), beta targets (cell-normalized), each [4, h, w],
/// laid out to match the head channel groups.
pub fn anchor_targets<R: Real>(gt: &AnchorGridSet, scale_idx: usize) -> (Tensor<R>, Tensor<R>, Tensor<R>) {
    let g = &gt.grids[scale_idx];
    let plane = g.rows * g.cols;
    let mut y = Tensor::zeros(&[ANCHOR_CATEGORIES, g.rows, g.cols]);
    let mut omega = Tensor::zeros(&[ANCHOR_CATEGORIES, g.rows, g.cols]);
    let mut beta = Tensor::zeros(&[ANCHOR_CATEGORIES, g.rows, g.cols]);
    for (i, cell) in g.cells.iter().enumerate() {
        for k in 0..ANCHOR_CATEGORIES {
            y.data[k * plane + i] = R::from_f64(cell.mask[k] as f64);
            omega.data[k * plane + i] = R::from_f64(cell.omega[k] as f64);
            beta.data[k * plane + i] = R::from_f64(cell.beta[k] as f64 / g.cell_px as f64);
        }
    }
    (y, omega, beta)
}

/// Differentiable total loss from raw head tensors (logits + regressions)
/// against a ground-truth grid set. Mirrors `loss_total` on the clamp-free
/// logit path.
pub fn occluded_loss_from_heads<R: Real>(
    tape: &mut Tape<R>,
    heads: &[Var],
    gt: &AnchorGridSet,
    alpha: f64,
) -> Var {
    let mut terms = Vec::new();
    for (si, &head) in heads.iter().enumerate() {
        let (y, omega_t, beta_t) = anchor_targets::<R>(gt, si);
        let presence = tape.slice_ch(head, 0, 4);
        let ld = tape.bce_logits_sum(presence, y.clone());
        let omega_pred = tape.slice_ch(head, 4, 8);
        let lw = tape.masked_smooth_l1_sum(omega_pred, omega_t, y.clone());
        let beta_pred = tape.slice_ch(head, 8, 12);
        let lb = tape.masked_smooth_l1_sum(beta_pred, beta_t, y);
        terms.push((ld, 1.0));
        terms.push((lw, alpha));
        terms.push((lb, alpha));
    }
    tape.weighted_sum(terms)
}
