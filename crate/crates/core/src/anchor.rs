//! Discrete-continuous parameterization of curb lines over multi-scale
//! grids: pixel masks are encoded as per-cell anchor-line parameters
//! (category presence, angle offset omega, perpendicular offset beta) for
//! training targets, and decoded back to masks at inference.
//!
//! Angles are measured in pixel coordinates (x = column, y = row, y grows
//! downward in the image) from the +column axis toward the +row axis and
//! folded to [0, 180). The four anchor orientations are fixed at 22.5, 67.5,
//! 112.5 and 157.5 degrees. Beta is signed along the reconstructed line's
//! normal (direction rotated +90 degrees), so positive beta points toward
//! +row for near-horizontal lines.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bev::CurbMask;
use crate::grid::GridSpec;

/// Number of anchor line categories.
pub const ANCHOR_CATEGORIES: usize = 4;

/// Anchor orientations in radians.
pub fn anchor_angles() -> [f64; ANCHOR_CATEGORIES] {
    [
        22.5f64.to_radians(),
        67.5f64.to_radians(),
        112.5f64.to_radians(),
        157.5f64.to_radians(),
    ]
}

/// Minimum pixels in a cell for a valid line fit.
pub const MIN_FIT_PIXELS: usize = 3;

/// Minimum principal-to-secondary eigenvalue ratio; below this the scatter
/// is isotropic and no line is fitted.
pub const MIN_EIGEN_RATIO: f64 = 1.2;

#[derive(Debug, Error)]
pub enum AnchorFileError {
    #[error("anchor grid i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("anchor grid json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("anchor grid file malformed: {0}")]
    Malformed(String),
}

/// Grid-cell sizes (pixels) per scale plus the fixed anchor orientations.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnchorSpec {
    pub scales: Vec<usize>,
}

impl Default for AnchorSpec {
    fn default() -> Self {
        AnchorSpec {
            scales: vec![8, 16, 32],
        }
    }
}

/// Per-cell parameters: for each category, presence in [0,1], omega
/// (radians, offset to the anchor angle), beta (pixels, signed perpendicular
/// distance from the cell center), and the loss mask (ground truth presence;
/// reserved on predictions).
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct AnchorCell {
    pub presence: [f32; ANCHOR_CATEGORIES],
    pub omega: [f32; ANCHOR_CATEGORIES],
    pub beta: [f32; ANCHOR_CATEGORIES],
    pub mask: [f32; ANCHOR_CATEGORIES],
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnchorGrid {
    pub cell_px: usize,
    pub rows: usize,
    pub cols: usize,
    pub cells: Vec<AnchorCell>,
}

impl AnchorGrid {
    pub fn zeros(cell_px: usize, rows: usize, cols: usize) -> AnchorGrid {
        AnchorGrid {
            cell_px,
            rows,
            cols,
            cells: vec![AnchorCell::default(); rows * cols],
        }
    }

    pub fn cell(&self, row: usize, col: usize) -> &AnchorCell {
        &self.cells[row * self.cols + col]
    }

    pub fn cell_mut(&mut self, row: usize, col: usize) -> &mut AnchorCell {
        &mut self.cells[row * self.cols + col]
    }

    /// Lattice coordinates (row, col) of the cell center.
    pub fn cell_center(&self, row: usize, col: usize) -> (f64, f64) {
        (
            row as f64 * self.cell_px as f64 + (self.cell_px as f64 - 1.0) / 2.0,
            col as f64 * self.cell_px as f64 + (self.cell_px as f64 - 1.0) / 2.0,
        )
    }
}

/// One grid per scale over a width x height pixel image.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorGridSet {
    pub width: usize,
    pub height: usize,
    pub grids: Vec<AnchorGrid>,
}

impl AnchorGridSet {
    pub fn zeros(width: usize, height: usize, spec: &AnchorSpec) -> AnchorGridSet {
        let grids = spec
            .scales
            .iter()
            .map(|&s| AnchorGrid::zeros(s, height.div_ceil(s), width.div_ceil(s)))
            .collect();
        AnchorGridSet {
            width,
            height,
            grids,
        }
    }
}

/// A fitted cell line: total-least-squares direction angle folded to
/// [0, 180) degrees, and the signed perpendicular distance from the cell
/// center (positive toward +row across the line direction).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineFit {
    pub angle_rad: f64,
    pub distance_px: f64,
}

/// Total-least-squares line through pixel scatter: principal direction of
/// the covariance. Returns None for fewer than 3 pixels or isotropic
/// scatter (eigenvalue ratio below 1.2). `center` is (row, col).
pub fn fit_cell_line(pixels: &[(usize, usize)], center: (f64, f64)) -> Option<LineFit> {
    if pixels.len() < MIN_FIT_PIXELS {
        return None;
    }
    let n = pixels.len() as f64;
    let mut mx = 0.0; // column mean
    let mut my = 0.0; // row mean
    for &(r, c) in pixels {
        mx += c as f64;
        my += r as f64;
    }
    mx /= n;
    my /= n;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for &(r, c) in pixels {
        let dx = c as f64 - mx;
        let dy = r as f64 - my;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    let trace = sxx + syy;
    let det = sxx * syy - sxy * sxy;
    let disc = (trace * trace - 4.0 * det).max(0.0).sqrt();
    let l1 = (trace + disc) / 2.0;
    let l2 = ((trace - disc) / 2.0).max(0.0);
    if l1 <= 1e-12 {
        return None;
    }
    if l2 > 0.0 && l1 / l2 < MIN_EIGEN_RATIO {
        return None;
    }
    // Principal eigenvector of [[sxx, sxy], [sxy, syy]].
    let (vx, vy) = if sxy.abs() > 1e-12 {
        (sxy, l1 - sxx)
    } else if sxx >= syy {
        (1.0, 0.0)
    } else {
        (0.0, 1.0)
    };
    let mut angle = vy.atan2(vx);
    if angle < 0.0 {
        angle += std::f64::consts::PI;
    }
    if angle >= std::f64::consts::PI {
        angle -= std::f64::consts::PI;
    }
    let normal = (-angle.sin(), angle.cos());
    let distance = (mx - center.1) * normal.0 + (my - center.0) * normal.1;
    Some(LineFit {
        angle_rad: angle,
        distance_px: distance,
    })
}

/// Wraps an angle difference into (-90, 90] degrees (radians in/out).
fn wrap_half_pi(mut d: f64) -> f64 {
    use std::f64::consts::PI;
    while d > PI / 2.0 {
        d -= PI;
    }
    while d <= -PI / 2.0 {
        d += PI;
    }
    d
}

/// Chooses the anchor category for a fitted angle: the minimal absolute
/// wrapped offset wins; exact ties take the candidate with positive omega,
/// which keeps omega inside (-22.5, +22.5] degrees (for the 45-degree tie
/// this is the lower-index anchor).
fn assign_anchor(angle_rad: f64) -> (usize, f64) {
    let mut best: Option<(usize, f64)> = None;
    for (k, &a) in anchor_angles().iter().enumerate() {
        let omega = wrap_half_pi(angle_rad - a);
        let better = match best {
            None => true,
            Some((_, bo)) => {
                let d = omega.abs() - bo.abs();
                d < -1e-12 || (d.abs() <= 1e-12 && omega > bo)
            }
        };
        if better {
            best = Some((k, omega));
        }
    }
    best.unwrap()
}

/// Converts a binary curb mask into per-scale anchor grids. Each cell with
/// a valid line fit activates exactly one category; omega stays in
/// (-22.5, 22.5] degrees and |beta| is bounded by half the cell diagonal.
pub fn encode_mask(mask: &CurbMask, spec: &AnchorSpec) -> AnchorGridSet {
    let width = mask.spec.width;
    let height = mask.spec.height;
    let mut set = AnchorGridSet::zeros(width, height, spec);
    let pixels: Vec<(usize, usize)> = (0..height)
        .flat_map(|r| (0..width).map(move |c| (r, c)))
        .filter(|&(r, c)| mask.get(r, c) > 0.0)
        .collect();
    for grid in &mut set.grids {
        let s = grid.cell_px;
        let cols = grid.cols;
        let mut buckets: Vec<Vec<(usize, usize)>> = vec![Vec::new(); grid.rows * cols];
        for &(r, c) in &pixels {
            buckets[(r / s) * cols + (c / s)].push((r, c));
        }
        for row in 0..grid.rows {
            for col in 0..cols {
                let bucket = &buckets[row * cols + col];
                let center = grid.cell_center(row, col);
                let Some(fit) = fit_cell_line(bucket, center) else {
                    continue;
                };
                let (k, omega) = assign_anchor(fit.angle_rad);
                // Recompute beta against the normal of the angle decode will
                // reconstruct; a 180-degree wrap flips the normal.
                let theta = anchor_angles()[k] + omega;
                let flip = (theta - fit.angle_rad).cos().signum();
                let beta = fit.distance_px * flip;
                debug_assert!(
                    omega > -(22.5f64.to_radians() + 1e-9) && omega <= 22.5f64.to_radians() + 1e-9,
                    "omega out of range: {omega}"
                );
                debug_assert!(
                    beta.abs() <= (s as f64) * std::f64::consts::SQRT_2 / 2.0 + 1e-9,
                    "beta out of range: {beta}"
                );
                let cell = grid.cell_mut(row, col);
                cell.presence[k] = 1.0;
                cell.omega[k] = omega as f32;
                cell.beta[k] = beta as f32;
                cell.mask[k] = 1.0;
            }
        }
    }
    set
}

/// Reconstructs a mask from anchor grids: every cell/category at or above
/// the presence threshold contributes its line, clipped to the cell
/// rectangle and rasterized one pixel thick. Scales are drawn coarse to
/// fine; the union is the output.
pub fn decode_grids(set: &AnchorGridSet, grid_spec: GridSpec, threshold: f32) -> CurbMask {
    assert!(
        (0.0..1.0).contains(&threshold) && threshold > 0.0,
        "threshold must be in (0, 1)"
    );
    assert_eq!(grid_spec.width, set.width, "grid width mismatch");
    assert_eq!(grid_spec.height, set.height, "grid height mismatch");
    let mut mask = CurbMask::zeros(grid_spec);
    let mut order: Vec<&AnchorGrid> = set.grids.iter().collect();
    order.sort_by(|a, b| b.cell_px.cmp(&a.cell_px));
    for grid in order {
        for row in 0..grid.rows {
            for col in 0..grid.cols {
                let cell = grid.cell(row, col);
                for k in 0..ANCHOR_CATEGORIES {
                    if cell.presence[k] < threshold {
                        continue;
                    }
                    draw_cell_line(&mut mask, grid, row, col, k, cell);
                }
            }
        }
    }
    mask
}

fn draw_cell_line(
    mask: &mut CurbMask,
    grid: &AnchorGrid,
    row: usize,
    col: usize,
    k: usize,
    cell: &AnchorCell,
) {
    let s = grid.cell_px as f64;
    let theta = anchor_angles()[k] + cell.omega[k] as f64;
    let (cy, cx) = grid.cell_center(row, col);
    let beta = cell.beta[k] as f64;
    // Foot of the perpendicular from the cell center, in (x=col, y=row).
    let px = cx - beta * theta.sin();
    let py = cy + beta * theta.cos();
    let (dx, dy) = (theta.cos(), theta.sin());
    // Clip the infinite line to the cell rectangle (pixel footprints).
    let x0 = col as f64 * s - 0.5;
    let x1 = x0 + s;
    let y0 = row as f64 * s - 0.5;
    let y1 = y0 + s;
    let Some((t0, t1)) = clip_line_to_rect((px, py), (dx, dy), (x0, x1), (y0, y1)) else {
        return;
    };
    let a = (px + t0 * dx, py + t0 * dy);
    let b = (px + t1 * dx, py + t1 * dy);
    // Rasterize in lattice coordinates, clamped to the cell and the image.
    let r_lo = (row * grid.cell_px) as i64;
    let r_hi = (((row + 1) * grid.cell_px).min(mask.spec.height) as i64) - 1;
    let c_lo = (col * grid.cell_px) as i64;
    let c_hi = (((col + 1) * grid.cell_px).min(mask.spec.width) as i64) - 1;
    if r_hi < r_lo || c_hi < c_lo {
        return;
    }
    let clamp = |v: f64, lo: i64, hi: i64| -> i64 { (v.round() as i64).clamp(lo, hi) };
    let (mut c, mut r) = (clamp(a.0, c_lo, c_hi), clamp(a.1, r_lo, r_hi));
    let (c1, r1) = (clamp(b.0, c_lo, c_hi), clamp(b.1, r_lo, r_hi));
    let dc = (c1 - c).abs();
    let dr = (r1 - r).abs();
    let sc = if c < c1 { 1 } else { -1 };
    let sr = if r < r1 { 1 } else { -1 };
    let mut err = dc - dr;
    loop {
        mask.set(r as usize, c as usize, 1.0);
        if c == c1 && r == r1 {
            break;
        }
        let e2 = 2 * err;
        if e2 > -dr {
            err -= dr;
            c += sc;
        }
        if e2 < dc {
            err += dc;
            r += sr;
        }
    }
}

/// Liang-Barsky: parameter range of `p + t d` inside the rectangle.
fn clip_line_to_rect(
    p: (f64, f64),
    d: (f64, f64),
    x_range: (f64, f64),
    y_range: (f64, f64),
) -> Option<(f64, f64)> {
    let mut t0 = f64::NEG_INFINITY;
    let mut t1 = f64::INFINITY;
    for (p0, delta, lo, hi) in [
        (p.0, d.0, x_range.0, x_range.1),
        (p.1, d.1, y_range.0, y_range.1),
    ] {
        if delta.abs() < 1e-12 {
            if p0 < lo || p0 > hi {
                return None;
            }
            continue;
        }
        let ta = (lo - p0) / delta;
        let tb = (hi - p0) / delta;
        let (ta, tb) = if ta <= tb { (ta, tb) } else { (tb, ta) };
        t0 = t0.max(ta);
        t1 = t1.min(tb);
    }
    (t0 <= t1).then_some((t0, t1))
}

// --- JSON file format -------------------------------------------------

#[derive(Serialize, Deserialize)]
struct GridRecord {
    scale_px: usize,
    rows: usize,
    cols: usize,
    /// Flattened per cell: presence x4, omega x4, beta x4, mask x4.
    cells: Vec<f32>,
}

#[derive(Serialize, Deserialize)]
struct GridSetRecord {
    width: usize,
    height: usize,
    scales: Vec<GridRecord>,
}

pub fn write_grid_set<W: Write>(w: &mut W, set: &AnchorGridSet) -> Result<(), AnchorFileError> {
    let record = GridSetRecord {
        width: set.width,
        height: set.height,
        scales: set
            .grids
            .iter()
            .map(|g| GridRecord {
                scale_px: g.cell_px,
                rows: g.rows,
                cols: g.cols,
                cells: g
                    .cells
                    .iter()
                    .flat_map(|c| {
                        c.presence
                            .iter()
                            .chain(&c.omega)
                            .chain(&c.beta)
                            .chain(&c.mask)
                            .copied()
                            .collect::<Vec<f32>>()
                    })
                    .collect(),
            })
            .collect(),
    };
    serde_json::to_writer(w, &record)?;
    Ok(())
}

pub fn read_grid_set<R: Read>(r: &mut R) -> Result<AnchorGridSet, AnchorFileError> {
    let record: GridSetRecord = serde_json::from_reader(r)?;
    let mut grids = Vec::with_capacity(record.scales.len());
    for g in record.scales {
        let expect = g.rows * g.cols * ANCHOR_CATEGORIES * 4;
        if g.cells.len() != expect {
            return Err(AnchorFileError::Malformed(format!(
                "scale {}: {} values, expected {}",
                g.scale_px,
                g.cells.len(),
                expect
            )));
        }
        let mut cells = Vec::with_capacity(g.rows * g.cols);
        for chunk in g.cells.chunks_exact(ANCHOR_CATEGORIES * 4) {
            let mut cell = AnchorCell::default();
            cell.presence.copy_from_slice(&chunk[0..4]);
            cell.omega.copy_from_slice(&chunk[4..8]);
            cell.beta.copy_from_slice(&chunk[8..12]);
            cell.mask.copy_from_slice(&chunk[12..16]);
            cells.push(cell);
        }
        grids.push(AnchorGrid {
            cell_px: g.scale_px,
            rows: g.rows,
            cols: g.cols,
            cells,
        });
    }
    Ok(AnchorGridSet {
        width: record.width,
        height: record.height,
        grids,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn mask_64x128() -> CurbMask {
        CurbMask::zeros(GridSpec::new(128, 64, 0.1))
    }

    #[test]
    fn fit_exactly_collinear_pixels_is_exact() {
        // Slope 1/2 lattice points are exactly collinear: (0,0), (1,2), (2,4)
        // with centroid (1, 2). Against center (1, 2) the distance is 0.
        let pixels = [(0usize, 0usize), (1, 2), (2, 4)];
        let fit = fit_cell_line(&pixels, (1.0, 2.0)).unwrap();
        assert!((fit.angle_rad - 0.5f64.atan()).abs() < 1e-12);
        assert!(fit.distance_px.abs() < 1e-12);
    }

    #[test]
    fn fit_long_run_near_anchor_angle() {
        // A dense rounded run along 22.5 degrees across a 32-px cell; TLS
        // averages out the lattice rounding.
        let angle = 22.5f64.to_radians();
        let center = (15.5, 15.5);
        let pixels: Vec<(usize, usize)> = (-45..=45)
            .map(|t| {
                let x = center.1 + t as f64 * 0.33 * angle.cos();
                let y = center.0 + t as f64 * 0.33 * angle.sin();
                (y.round() as usize, x.round() as usize)
            })
            .collect();
        let fit = fit_cell_line(&pixels, center).unwrap();
        assert!((fit.angle_rad - angle).abs() < 0.03, "angle {}", fit.angle_rad);
        assert!(fit.distance_px.abs() < 0.3, "distance {}", fit.distance_px);
    }

    #[test]
    fn fit_horizontal_offset_row_has_signed_distance() {
        // A horizontal run 2.5 px above (smaller row than) the center:
        // angle 0, distance negative (toward -row).
        let center = (3.5, 3.5);
        let pixels: Vec<(usize, usize)> = (0..8).map(|c| (1usize, c)).collect();
        let fit = fit_cell_line(&pixels, center).unwrap();
        assert!(fit.angle_rad.abs() < 1e-9);
        assert!((fit.distance_px - (-2.5)).abs() < 1e-9);
    }

    #[test]
    fn fit_needs_three_pixels() {
        assert!(fit_cell_line(&[(0, 0), (1, 1)], (3.5, 3.5)).is_none());
    }

    #[test]
    fn fit_rejects_isotropic_scatter() {
        // A filled square has equal eigenvalues.
        let pixels: Vec<(usize, usize)> = (0..4)
            .flat_map(|r| (0..4).map(move |c| (r, c)))
            .collect();
        assert!(fit_cell_line(&pixels, (1.5, 1.5)).is_none());
    }

    #[test]
    fn encode_empty_mask_has_no_presence() {
        let set = encode_mask(&mask_64x128(), &AnchorSpec::default());
        for g in &set.grids {
            assert!(g.cells.iter().all(|c| c.presence == [0.0; 4]));
        }
    }

    #[test]
    fn encode_line_along_67_5_hits_category_one() {
        let mut mask = mask_64x128();
        // Full-image line at 67.5 degrees through the image center in
        // lattice coordinates.
        let theta = 67.5f64.to_radians();
        let (cy, cx) = (31.5, 63.5);
        for t in -400..400 {
            let x = cx + t as f64 * 0.1 * theta.cos();
            let y = cy + t as f64 * 0.1 * theta.sin();
            let (r, c) = (y.round() as i64, x.round() as i64);
            if r >= 0 && c >= 0 && r < 64 && c < 128 {
                mask.set(r as usize, c as usize, 1.0);
            }
        }
        let set = encode_mask(&mask, &AnchorSpec::default());
        // Cells the line crosses through the middle (enough pixels for a
        // well-conditioned fit) must pick category 1 with a small offset;
        // 3-pixel corner stubs may legitimately fit a different angle.
        for (g, min_px) in set.grids.iter().zip([6usize, 12, 24]) {
            for (idx, cell) in g.cells.iter().enumerate() {
                if cell.presence == [0.0; 4] {
                    continue;
                }
                let (row, col) = (idx / g.cols, idx % g.cols);
                let n_px = count_cell_pixels(&mask, g.cell_px, row, col);
                if n_px >= min_px {
                    assert_eq!(cell.presence[1], 1.0, "category 1 expected ({n_px} px)");
                    assert!(cell.omega[1].abs() < 0.12, "omega {}", cell.omega[1]);
                }
            }
        }
        // The line crosses cells at every scale.
        assert!(set.grids.iter().all(|g| g
            .cells
            .iter()
            .any(|c| c.presence[1] == 1.0)));
    }

    #[test]
    fn tie_at_45_degrees_goes_to_category_zero_with_positive_omega() {
        let (k, omega) = assign_anchor(45f64.to_radians());
        assert_eq!(k, 0);
        assert!((omega - 22.5f64.to_radians()).abs() < 1e-12);
    }

    #[test]
    fn fold_tie_at_zero_degrees_keeps_omega_in_range() {
        // 0 degrees is equidistant from anchors 0 and 3; the positive-omega
        // candidate (anchor 3) keeps omega inside (-22.5, 22.5].
        let (k, omega) = assign_anchor(0.0);
        assert_eq!(k, 3);
        assert!((omega - 22.5f64.to_radians()).abs() < 1e-12);
    }

    #[test]
    fn encode_invariants_on_random_segments() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..30 {
            let mask = random_segment_mask(&mut rng);
            let set = encode_mask(&mask, &AnchorSpec::default());
            for g in &set.grids {
                let half_diag = g.cell_px as f64 * std::f64::consts::SQRT_2 / 2.0;
                for cell in &g.cells {
                    let active: usize = cell
                        .presence
                        .iter()
                        .filter(|&&p| p > 0.0)
                        .count();
                    assert!(active <= 1, "more than one active category");
                    for k in 0..ANCHOR_CATEGORIES {
                        if cell.presence[k] > 0.0 {
                            let w = cell.omega[k] as f64;
                            assert!(w > -(22.5f64.to_radians() + 1e-6));
                            assert!(w <= 22.5f64.to_radians() + 1e-6);
                            assert!((cell.beta[k] as f64).abs() <= half_diag + 1e-6);
                        } else {
                            assert_eq!(cell.omega[k], 0.0);
                            assert_eq!(cell.beta[k], 0.0);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn decode_empty_set_is_empty_mask() {
        let set = AnchorGridSet::zeros(128, 64, &AnchorSpec::default());
        let m = decode_grids(&set, GridSpec::new(128, 64, 0.1), 0.5);
        assert_eq!(m.count_nonzero(), 0);
    }

    #[test]
    fn decode_single_cell_definition() {
        let mut set = AnchorGridSet::zeros(128, 64, &AnchorSpec::default());
        {
            let g = &mut set.grids[0];
            let cell = g.cell_mut(2, 3);
            cell.presence[0] = 1.0;
        }
        let m = decode_grids(&set, GridSpec::new(128, 64, 0.1), 0.5);
        // A 22.5-degree line through the center of the 8-px cell at
        // (rows 16..24, cols 24..32).
        assert!(m.count_nonzero() >= 6);
        for r in 0..64 {
            for c in 0..128 {
                if m.get(r, c) > 0.0 {
                    assert!((16..24).contains(&r), "row {r} outside cell");
                    assert!((24..32).contains(&c), "col {c} outside cell");
                }
            }
        }
    }

    #[test]
    fn decode_is_monotone_in_threshold() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let mask = random_segment_mask(&mut rng);
        let mut set = encode_mask(&mask, &AnchorSpec::default());
        // Perturb presences into (0, 1) so thresholds discriminate.
        for g in &mut set.grids {
            for cell in &mut g.cells {
                for p in &mut cell.presence {
                    if *p > 0.0 {
                        *p = rng.random_range(0.3..1.0);
                    }
                }
            }
        }
        let spec = GridSpec::new(128, 64, 0.1);
        let low = decode_grids(&set, spec, 0.3);
        let high = decode_grids(&set, spec, 0.8);
        for i in 0..low.data.len() {
            assert!(high.data[i] <= low.data[i], "higher threshold grew mask");
        }
    }

    fn count_cell_pixels(mask: &CurbMask, cell_px: usize, row: usize, col: usize) -> usize {
        let mut n = 0;
        for r in row * cell_px..((row + 1) * cell_px).min(mask.spec.height) {
            for c in col * cell_px..((col + 1) * cell_px).min(mask.spec.width) {
                if mask.get(r, c) > 0.0 {
                    n += 1;
                }
            }
        }
        n
    }

    /// A straight line crossing the whole image (so every crossed cell is a
    /// full crossing, matching the roundtrip precondition).
    fn random_segment_mask(rng: &mut ChaCha8Rng) -> CurbMask {
        let mut mask = mask_64x128();
        let angle: f64 = rng.random_range(0.0..std::f64::consts::PI);
        let cx: f64 = rng.random_range(20.0..108.0);
        let cy: f64 = rng.random_range(10.0..54.0);
        let mut plot = |x: f64, y: f64| {
            let (r, c) = (y.round() as i64, x.round() as i64);
            if r >= 0 && c >= 0 && r < 64 && c < 128 {
                mask.set(r as usize, c as usize, 1.0);
            }
        };
        for i in -500..=500 {
            let t = i as f64 * 0.3;
            plot(cx + t * angle.cos(), cy + t * angle.sin());
        }
        mask
    }

    fn symmetric_chamfer(a: &CurbMask, b: &CurbMask) -> (f64, f64) {
        let pix = |m: &CurbMask| -> Vec<(f64, f64)> {
            let mut v = Vec::new();
            for r in 0..m.spec.height {
                for c in 0..m.spec.width {
                    if m.get(r, c) > 0.0 {
                        v.push((r as f64, c as f64));
                    }
                }
            }
            v
        };
        let pa = pix(a);
        let pb = pix(b);
        assert!(!pa.is_empty() && !pb.is_empty());
        let nearest = |p: (f64, f64), set: &[(f64, f64)]| -> f64 {
            set.iter()
                .map(|q| ((p.0 - q.0).powi(2) + (p.1 - q.1).powi(2)).sqrt())
                .fold(f64::INFINITY, f64::min)
        };
        let mut sum = 0.0;
        let mut max = 0.0f64;
        for &p in &pa {
            let d = nearest(p, &pb);
            sum += d;
            max = max.max(d);
        }
        for &p in &pb {
            let d = nearest(p, &pa);
            sum += d;
            max = max.max(d);
        }
        (sum / (pa.len() + pb.len()) as f64, max)
    }

    #[test]
    fn roundtrip_chamfer_on_random_segments() {
        let mut rng = ChaCha8Rng::seed_from_u64(34);
        let spec = GridSpec::new(128, 64, 0.1);
        let mut means = Vec::new();
        for _ in 0..50 {
            let mask = random_segment_mask(&mut rng);
            if mask.count_nonzero() < 10 {
                continue;
            }
            let set = encode_mask(&mask, &AnchorSpec::default());
            let decoded = decode_grids(&set, spec, 0.5);
            if decoded.count_nonzero() == 0 {
                continue;
            }
            let (mean, _max) = symmetric_chamfer(&mask, &decoded);
            means.push(mean);
        }
        assert!(means.len() >= 40);
        let avg = means.iter().sum::<f64>() / means.len() as f64;
        let worst = means.iter().fold(0.0f64, |a, &b| a.max(b));
        assert!(avg <= 1.0, "mean roundtrip chamfer {avg}");
        assert!(worst <= 2.0, "max roundtrip chamfer {worst}");
    }

    #[test]
    fn grid_set_json_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(35);
        let mask = random_segment_mask(&mut rng);
        let set = encode_mask(&mask, &AnchorSpec::default());
        let mut buf = Vec::new();
        write_grid_set(&mut buf, &set).unwrap();
        let back = read_grid_set(&mut buf.as_slice()).unwrap();
        assert_eq!(back, set);
    }
}
