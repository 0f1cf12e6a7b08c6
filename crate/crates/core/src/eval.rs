//! Tolerance-band precision/recall/F1 over thin masks, region cropping,
//! and report tables.
//!
//! A predicted pixel counts as correct when its Euclidean distance to the
//! nearest ground-truth pixel is at most the tolerance (and symmetrically
//! for recall). Distances come from an exact squared Euclidean distance
//! transform, so results match a brute-force all-pairs scan bit for bit.

use std::io::Write;

use thiserror::Error;

use crate::bev::CurbMask;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("mask grids differ: {0}x{1} vs {2}x{3}")]
    GridMismatch(usize, usize, usize, usize),
    #[error("crop region {0}x{1} larger than mask {2}x{3}")]
    RegionTooLarge(usize, usize, usize, usize),
}

/// One report row: crop region, tolerance, and the micro-averaged scores.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub region_w: usize,
    pub region_h: usize,
    pub tol_px: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, Default)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
}

/// Exact squared Euclidean distance transform (two-pass 1D lower-envelope
/// method). Input: foreground = value > 0. Output per pixel: squared
/// distance to the nearest foreground pixel, or infinity when the mask is
/// empty.
pub fn squared_distance_transform(mask: &CurbMask) -> Vec<f64> {
    const INF: f64 = 1e18;
    let w = mask.spec.width;
    let h = mask.spec.height;
    let mut field: Vec<f64> = mask
        .data
        .iter()
        .map(|&v| if v > 0.0 { 0.0 } else { INF })
        .collect();

    // Columns first.
    let mut col_buf = vec![0.0f64; h];
    for c in 0..w {
        for r in 0..h {
            col_buf[r] = field[r * w + c];
        }
        let out = dt_1d(&col_buf);
        for r in 0..h {
            field[r * w + c] = out[r];
        }
    }
    // Then rows.
    for r in 0..h {
        let row = field[r * w..(r + 1) * w].to_vec();
        let out = dt_1d(&row);
        field[r * w..(r + 1) * w].copy_from_slice(&out);
    }
    field
}

/// 1D squared distance transform of a sampled function (Felzenszwalb &
/// Huttenlocher lower envelope of parabolas).
fn dt_1d(f: &[f64]) -> Vec<f64> {
    let n = f.len();
    let mut d = vec![0.0f64; n];
    let mut v = vec![0usize; n];
    let mut z = vec![0.0f64; n + 1];
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        let mut s;
        loop {
            let p = v[k];
            s = ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q - p) as f64);
            if s <= z[k] {
                k -= 1;
            } else {
                break;
            }
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    k = 0;
    for q in 0..n {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let p = v[k];
        let dq = q as f64 - p as f64;
        d[q] = dq * dq + f[p];
    }
    d
}

/// Tolerance-band precision/recall/F1 between binary masks.
///
/// Conventions: both empty -> (1,1,1); empty prediction against non-empty
/// ground truth -> (1,0,0); non-empty prediction against empty ground
/// truth -> (0,1,0).
pub fn tolerance_prf(
    pred: &CurbMask,
    gt: &CurbMask,
    tol_px: usize,
) -> Result<(f64, f64, f64), EvalError> {
    let c = match_counts(pred, gt, tol_px)?;
    Ok(counts_to_prf(&c))
}

/// Raw matched/total pixel counts, the unit that micro-averaging sums.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MatchCounts {
    pub pred_matched: usize,
    pub pred_total: usize,
    pub gt_matched: usize,
    pub gt_total: usize,
}

impl MatchCounts {
    pub fn add(&mut self, o: &MatchCounts) {
        self.pred_matched += o.pred_matched;
        self.pred_total += o.pred_total;
        self.gt_matched += o.gt_matched;
        self.gt_total += o.gt_total;
    }
}

pub fn match_counts(pred: &CurbMask, gt: &CurbMask, tol_px: usize) -> Result<MatchCounts, EvalError> {
    if pred.spec.width != gt.spec.width || pred.spec.height != gt.spec.height {
        return Err(EvalError::GridMismatch(
            pred.spec.width,
            pred.spec.height,
            gt.spec.width,
            gt.spec.height,
        ));
    }
    let tol2 = (tol_px * tol_px) as f64;
    let mut counts = MatchCounts::default();
    counts.pred_total = pred.count_nonzero();
    counts.gt_total = gt.count_nonzero();
    if counts.pred_total > 0 && counts.gt_total > 0 {
        let dt_gt = squared_distance_transform(gt);
        let dt_pred = squared_distance_transform(pred);
        for (i, &v) in pred.data.iter().enumerate() {
            if v > 0.0 && dt_gt[i] <= tol2 {
                counts.pred_matched += 1;
            }
        }
        for (i, &v) in gt.data.iter().enumerate() {
            if v > 0.0 && dt_pred[i] <= tol2 {
                counts.gt_matched += 1;
            }
        }
    }
    Ok(counts)
}

pub fn counts_to_prf(c: &MatchCounts) -> (f64, f64, f64) {
    let precision = if c.pred_total == 0 {
        1.0
    } else {
        c.pred_matched as f64 / c.pred_total as f64
    };
    let recall = if c.gt_total == 0 {
        1.0
    } else {
        c.gt_matched as f64 / c.gt_total as f64
    };
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    (precision, recall, f1)
}

/// Central crop around the vehicle pixel (the image center).
pub fn crop_region(mask: &CurbMask, region_px: (usize, usize)) -> Result<CurbMask, EvalError> {
    let (w, h) = region_px;
    if w > mask.spec.width || h > mask.spec.height {
        return Err(EvalError::RegionTooLarge(
            w,
            h,
            mask.spec.width,
            mask.spec.height,
        ));
    }
    let row0 = (mask.spec.height - h) / 2;
    let col0 = (mask.spec.width - w) / 2;
    let mut out = CurbMask::zeros(crate::grid::GridSpec::new(w, h, mask.spec.resolution));
    for r in 0..h {
        for c in 0..w {
            out.set(r, c, mask.get(row0 + r, col0 + c));
        }
    }
    Ok(out)
}

/// Micro-averaged report over (pred, gt) mask pairs: pixel counts are
/// summed across frames before the ratios, for every region x tolerance.
pub fn aggregate_report(
    pairs: &[(CurbMask, CurbMask)],
    regions: &[(usize, usize)],
    tolerances: &[usize],
) -> Result<EvalReport, EvalError> {
    assert!(!pairs.is_empty(), "need at least one mask pair");
    let mut rows = Vec::new();
    for &(rw, rh) in regions {
        for &tol in tolerances {
            let mut counts = MatchCounts::default();
            for (pred, gt) in pairs {
                let pred_c = crop_region(pred, (rw, rh))?;
                let gt_c = crop_region(gt, (rw, rh))?;
                counts.add(&match_counts(&pred_c, &gt_c, tol)?);
            }
            let (precision, recall, f1) = counts_to_prf(&counts);
            rows.push(EvalRow {
                region_w: rw,
                region_h: rh,
                tol_px: tol,
                precision,
                recall,
                f1,
            });
        }
    }
    Ok(EvalReport { rows })
}

impl EvalReport {
    pub fn write_csv<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "region_w,region_h,tol_px,precision,recall,f1")?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{:.6},{:.6},{:.6}",
                r.region_w, r.region_h, r.tol_px, r.precision, r.recall, r.f1
            )?;
        }
        Ok(())
    }

    /// Human-readable aligned table.
    pub fn write_table<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(
            w,
            "{:>10} {:>6} {:>10} {:>10} {:>10}",
            "region", "tol", "precision", "recall", "f1"
        )?;
        for r in &self.rows {
            writeln!(
                w,
                "{:>10} {:>5}px {:>10.4} {:>10.4} {:>10.4}",
                format!("{}x{}", r.region_w, r.region_h),
                r.tol_px,
                r.precision,
                r.recall,
                r.f1
            )?;
        }
        Ok(())
    }
}
