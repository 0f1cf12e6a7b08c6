//! Visible/occluded partitioning of curb labels.
//!
//! Two visibility operators are provided: the hidden point removal (HPR)
//! operator, which spherically flips points about the viewpoint and keeps
//! the convex hull, and a DDA grid ray-caster over obstacle masks. The
//! ray-caster is the canonical labeler; HPR is retained as the
//! hull-based alternative and cross-check. Both work in the 2D BEV plane,
//! since curb occlusion is horizontal line-of-sight.

use thiserror::Error;

use crate::bev::CurbMask;
use crate::grid::GridSpec;
use crate::pointcloud::LidarScan;

#[derive(Debug, Error)]
pub enum VisibilityError {
    #[error("all points are collinear through the viewpoint; hull is degenerate")]
    DegenerateInput,
}

/// Binary BEV raster of view-blocking returns: cells holding at least one
/// point whose height falls inside `height_band` (metres relative to the
/// sensor, `lo < hi <= 0`).
#[derive(Debug, Clone)]
pub struct ObstacleMask {
    pub mask: CurbMask,
    pub height_band: (f64, f64),
}

/// Default obstacle height band, metres relative to the sensor.
pub const DEFAULT_OBSTACLE_BAND: (f64, f64) = (-3.0, -0.5);

/// Curb labels split by line-of-sight: `visible` and `occluded` are
/// disjoint and their union is the input curb mask, for every input.
#[derive(Debug, Clone)]
pub struct VisibilityPartition {
    pub visible: CurbMask,
    pub occluded: CurbMask,
}

/// Marks cells containing any return inside the height band.
pub fn obstacle_mask(cloud: &LidarScan, spec: GridSpec, band: (f64, f64)) -> ObstacleMask {
    assert!(band.0 < band.1 && band.1 <= 0.0, "band must satisfy lo < hi <= 0");
    let mut mask = CurbMask::zeros(spec);
    for p in &cloud.points {
        let y = p.y as f64;
        if y < band.0 || y > band.1 {
            continue;
        }
        if let Some((row, col)) = spec.pixel_of(p.x as f64, p.z as f64) {
            mask.set(row, col, 1.0);
        }
    }
    ObstacleMask {
        mask,
        height_band: band,
    }
}

/// Hidden point removal: flips every point radially about the viewpoint
/// with radius `gamma * max range`, then keeps indices whose flipped image
/// lies on the convex hull boundary of the flipped set plus the viewpoint.
///
/// The flip `p -> p * (2R/|p| - 1)` preserves radial separations in metres,
/// so hull-boundary membership is tested with a tolerance relative to the
/// flip radius rather than by exact vertex identity.
pub fn hpr_visible(
    points: &[(f64, f64)],
    viewpoint: (f64, f64),
    gamma: f64,
) -> Result<Vec<usize>, VisibilityError> {
    assert!(points.len() >= 3, "need at least 3 points");
    assert!(gamma > 1.0, "gamma must exceed 1");
    let rel: Vec<(f64, f64)> = points
        .iter()
        .map(|&(x, z)| (x - viewpoint.0, z - viewpoint.1))
        .collect();
    let max_d = rel
        .iter()
        .map(|&(x, z)| (x * x + z * z).sqrt())
        .fold(0.0f64, f64::max);
    if max_d == 0.0 {
        // Everything sits on the viewpoint; all trivially visible.
        return Ok((0..points.len()).collect());
    }
    let radius = gamma * max_d;
    // Flipped set: viewpoint sentinel first, then one entry per input point.
    let mut flipped: Vec<(f64, f64)> = Vec::with_capacity(points.len() + 1);
    flipped.push((0.0, 0.0));
    for &(x, z) in &rel {
        let d = (x * x + z * z).sqrt();
        if d < 1e-12 {
            flipped.push((0.0, 0.0));
            continue;
        }
        let k = 2.0 * radius / d - 1.0;
        flipped.push((x * k, z * k));
    }
    let hull = convex_hull(&flipped)?;
    let tol = 1e-9 * 2.0 * radius;
    let mut visible = Vec::new();
    for (i, &p) in flipped.iter().skip(1).enumerate() {
        if distance_to_polygon_boundary(p, &hull) <= tol {
            visible.push(i);
        }
    }
    Ok(visible)
}

/// Strict monotone-chain convex hull (collinear points dropped). Errors
/// when the hull has no area, which for flipped HPR input means all points
/// are collinear through the viewpoint.
fn convex_hull(points: &[(f64, f64)]) -> Result<Vec<(f64, f64)>, VisibilityError> {
    let mut pts: Vec<(f64, f64)> = points.to_vec();
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    pts.dedup();
    let extent = {
        let (x0, z0) = pts[0];
        let (x1, z1) = pts[pts.len() - 1];
        ((x1 - x0).powi(2) + (z1 - z0).powi(2)).max(1.0)
    };
    let eps = 1e-12 * extent;
    let cross = |o: (f64, f64), a: (f64, f64), b: (f64, f64)| -> f64 {
        (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
    };
    let mut lower: Vec<(f64, f64)> = Vec::new();
    for &p in &pts {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= eps {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<(f64, f64)> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= eps {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    if lower.len() < 3 {
        return Err(VisibilityError::DegenerateInput);
    }
    Ok(lower)
}

fn distance_to_polygon_boundary(p: (f64, f64), hull: &[(f64, f64)]) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..hull.len() {
        let a = hull[i];
        let b = hull[(i + 1) % hull.len()];
        best = best.min(distance_to_segment(p, a, b));
    }
    best
}

fn distance_to_segment(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let abx = b.0 - a.0;
    let abz = b.1 - a.1;
    let apx = p.0 - a.0;
    let apz = p.1 - a.1;
    let len2 = abx * abx + abz * abz;
    let t = if len2 > 0.0 {
        ((apx * abx + apz * abz) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let dx = apx - t * abx;
    let dz = apz - t * abz;
    (dx * dx + dz * dz).sqrt()
}

/// Cells whose line of sight from `viewpoint` passes through an obstacle
/// cell strictly closer than the cell itself (DDA traversal). The obstacle
/// cell itself is not shadowed.
pub fn shadow_mask(obstacles: &ObstacleMask, viewpoint: (f64, f64)) -> CurbMask {
    let spec = obstacles.mask.spec;
    let mut out = CurbMask::zeros(spec);
    let (vr, vc) = spec.pixel_of_unchecked(viewpoint.0, viewpoint.1);
    for row in 0..spec.height {
        for col in 0..spec.width {
            if cell_is_shadowed(&obstacles.mask, (vr, vc), (row, col)) {
                out.set(row, col, 1.0);
            }
        }
    }
    out
}

/// Visibility of a single cell via Amanatides-Woo DDA from the viewpoint to
/// the cell center. The traversal stops when it enters the target cell, so
/// only strictly closer obstacle cells count (exposed for sparse queries).
pub fn cell_is_shadowed(
    obstacles: &CurbMask,
    viewpoint_px: (f64, f64),
    cell: (usize, usize),
) -> bool {
    let spec = obstacles.spec;
    let (r0, c0) = viewpoint_px;
    let dr = cell.0 as f64 + 0.5 - r0;
    let dc = cell.1 as f64 + 0.5 - c0;
    let mut cr = r0.floor() as i64;
    let mut cc = c0.floor() as i64;
    let (step_r, mut t_max_r, t_delta_r) = axis_walk(r0, dr);
    let (step_c, mut t_max_c, t_delta_c) = axis_walk(c0, dc);
    loop {
        if cr == cell.0 as i64 && cc == cell.1 as i64 {
            return false;
        }
        if cr >= 0
            && cc >= 0
            && (cr as usize) < spec.height
            && (cc as usize) < spec.width
            && obstacles.get(cr as usize, cc as usize) > 0.0
        {
            return true;
        }
        let t = t_max_r.min(t_max_c);
        if t > 1.0 {
            // Numerical guard: ran past the segment without entering the
            // target cell (can only happen on exact-boundary viewpoints).
            return false;
        }
        if t_max_r <= t_max_c {
            t_max_r += t_delta_r;
            cr += step_r;
        } else {
            t_max_c += t_delta_c;
            cc += step_c;
        }
    }
}

/// Per-axis DDA stepping state: (step direction, t of first boundary
/// crossing, t per cell).
fn axis_walk(origin: f64, delta: f64) -> (i64, f64, f64) {
    if delta > 0.0 {
        let next = origin.floor() + 1.0;
        (1, (next - origin) / delta, 1.0 / delta)
    } else if delta < 0.0 {
        let next = origin.floor();
        (-1, (next - origin) / delta, -1.0 / delta)
    } else {
        (0, f64::INFINITY, f64::INFINITY)
    }
}

/// Splits curb labels: `occluded` is the curb support inside the obstacle
/// shadow, `visible` is the rest.
pub fn partition_labels(
    curb: &CurbMask,
    obstacles: &ObstacleMask,
    viewpoint: (f64, f64),
) -> VisibilityPartition {
    assert_eq!(curb.spec, obstacles.mask.spec, "grid specs differ");
    let shadow = shadow_mask(obstacles, viewpoint);
    let occluded = curb.intersect(&shadow);
    let visible = curb.minus(&occluded);
    VisibilityPartition { visible, occluded }
}
