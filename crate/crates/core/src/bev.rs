//! Bird's-eye-view rasterization: 3-channel metric images from pointclouds,
//! mask rasterization from polylines, mask warping between frames, and
//! morphological dilation.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Transform;
use crate::grid::GridSpec;
use crate::pointcloud::LidarScan;

#[derive(Debug, Error)]
pub enum MaskFileError {
    #[error("mask i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad PGM header: {0}")]
    BadHeader(String),
    #[error("bev sidecar: {0}")]
    Sidecar(#[from] serde_json::Error),
}

/// Single-channel raster of curb probability (or binary labels) over a
/// [`GridSpec`]. Values live in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct CurbMask {
    pub spec: GridSpec,
    pub data: Vec<f32>,
}

impl CurbMask {
    pub fn zeros(spec: GridSpec) -> CurbMask {
        CurbMask {
            data: vec![0.0; spec.len()],
            spec,
        }
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.data[row * self.spec.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, v: f32) {
        self.data[row * self.spec.width + col] = v;
    }

    /// Binary mask of `value > threshold`.
    pub fn threshold(&self, threshold: f32) -> CurbMask {
        CurbMask {
            spec: self.spec,
            data: self
                .data
                .iter()
                .map(|&v| if v > threshold { 1.0 } else { 0.0 })
                .collect(),
        }
    }

    pub fn count_nonzero(&self) -> usize {
        self.data.iter().filter(|&&v| v > 0.0).count()
    }

    /// Pixelwise maximum.
    pub fn union(&self, other: &CurbMask) -> CurbMask {
        assert_eq!(self.spec, other.spec, "mask grid specs differ");
        CurbMask {
            spec: self.spec,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| a.max(b))
                .collect(),
        }
    }

    /// Pixelwise `self AND NOT other` on binary masks.
    pub fn minus(&self, other: &CurbMask) -> CurbMask {
        assert_eq!(self.spec, other.spec, "mask grid specs differ");
        CurbMask {
            spec: self.spec,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| if b > 0.0 { 0.0 } else { a })
                .collect(),
        }
    }

    /// Pixelwise minimum (intersection on binary masks).
    pub fn intersect(&self, other: &CurbMask) -> CurbMask {
        assert_eq!(self.spec, other.spec, "mask grid specs differ");
        CurbMask {
            spec: self.spec,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| a.min(b))
                .collect(),
        }
    }
}

/// 3-channel BEV image: horizontal range, intensity, height. Channels are
/// stored normalized to [0, 1]; the normalization constants travel with the
/// image (and its JSON sidecar) so training and inference share scaling.
#[derive(Debug, Clone, PartialEq)]
pub struct BevImage {
    pub spec: GridSpec,
    /// Horizontal range sqrt(x^2 + z^2) / `range_norm_m`.
    pub range: Vec<f32>,
    /// Sensor intensity, already unitless in [0, 1].
    pub intensity: Vec<f32>,
    /// (y + `height_norm_m`) / `height_norm_m`, i.e. metres above the trim floor.
    pub height: Vec<f32>,
    pub range_norm_m: f64,
    pub height_norm_m: f64,
}

impl BevImage {
    pub fn zeros(spec: GridSpec, range_norm_m: f64, height_norm_m: f64) -> BevImage {
        BevImage {
            range: vec![0.0; spec.len()],
            intensity: vec![0.0; spec.len()],
            height: vec![0.0; spec.len()],
            spec,
            range_norm_m,
            height_norm_m,
        }
    }

    pub fn channels(&self) -> [&[f32]; 3] {
        [&self.range, &self.intensity, &self.height]
    }
}

/// Grid-corner distance: the largest horizontal range representable in the
/// raster, used as the range-channel normalizer.
pub fn default_range_norm(spec: &GridSpec) -> f64 {
    let hx = spec.x_span() / 2.0;
    let hz = spec.z_span() / 2.0;
    (hx * hx + hz * hz).sqrt()
}

/// Rasterizes a (trimmed) cloud. Per cell the highest point wins; its
/// horizontal range, intensity, and height fill the three channels. Cells
/// with no return are zero everywhere. Out-of-grid points are dropped.
pub fn rasterize_cloud(cloud: &LidarScan, spec: GridSpec, height_norm_m: f64) -> BevImage {
    let range_norm_m = default_range_norm(&spec);
    let mut img = BevImage::zeros(spec, range_norm_m, height_norm_m);
    let mut best_y = vec![f32::NEG_INFINITY; spec.len()];
    for p in &cloud.points {
        let Some((row, col)) = spec.pixel_of(p.x as f64, p.z as f64) else {
            continue;
        };
        let idx = row * spec.width + col;
        if p.y > best_y[idx] {
            best_y[idx] = p.y;
            let range = ((p.x as f64).powi(2) + (p.z as f64).powi(2)).sqrt();
            img.range[idx] = (range / range_norm_m).clamp(0.0, 1.0) as f32;
            img.intensity[idx] = p.intensity.clamp(0.0, 1.0);
            img.height[idx] = (((p.y as f64) + height_norm_m) / height_norm_m).clamp(0.0, 1.0) as f32;
        }
    }
    img
}

/// Plots the metric polylines into a binary mask, Bresenham per segment,
/// then dilates to the requested thickness (radius `thickness_px / 2`).
pub fn rasterize_polylines(
    polylines: &[Vec<(f64, f64)>],
    spec: GridSpec,
    thickness_px: usize,
) -> CurbMask {
    assert!(thickness_px >= 1, "thickness must be at least 1 px");
    let mut mask = CurbMask::zeros(spec);
    for line in polylines {
        for seg in line.windows(2) {
            let (r0, c0) = spec.pixel_of_unchecked(seg[0].0, seg[0].1);
            let (r1, c1) = spec.pixel_of_unchecked(seg[1].0, seg[1].1);
            plot_segment(
                &mut mask,
                (r0.floor() as i64, c0.floor() as i64),
                (r1.floor() as i64, c1.floor() as i64),
            );
        }
        if line.len() == 1 {
            let (r, c) = spec.pixel_of_unchecked(line[0].0, line[0].1);
            plot_segment(
                &mut mask,
                (r.floor() as i64, c.floor() as i64),
                (r.floor() as i64, c.floor() as i64),
            );
        }
    }
    let radius = thickness_px / 2;
    if radius > 0 {
        dilate(&mask, radius)
    } else {
        mask
    }
}

fn plot_segment(mask: &mut CurbMask, from: (i64, i64), to: (i64, i64)) {
    let (mut r, mut c) = from;
    let (r1, c1) = to;
    let dr = (r1 - r).abs();
    let dc = (c1 - c).abs();
    let sr = if r < r1 { 1 } else { -1 };
    let sc = if c < c1 { 1 } else { -1 };
    let mut err = dc - dr;
    loop {
        if r >= 0 && c >= 0 && (r as usize) < mask.spec.height && (c as usize) < mask.spec.width {
            mask.set(r as usize, c as usize, 1.0);
        }
        if r == r1 && c == c1 {
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

/// Resamples `mask` into the frame reached by applying `t` to its own frame
/// (ground-plane projection of the motion: yaw plus x/z translation).
/// Inverse mapping with nearest-neighbor lookup; out-of-bounds sources
/// read as 0.
pub fn warp_mask(mask: &CurbMask, t: &Transform) -> CurbMask {
    let spec = mask.spec;
    let inv = t.ground_se2().inverse();
    let mut out = CurbMask::zeros(spec);
    for row in 0..spec.height {
        for col in 0..spec.width {
            let (x, z) = spec.metre_of(row, col);
            let (sx, sz) = inv.apply(x, z);
            if let Some((sr, sc)) = spec.pixel_of(sx, sz) {
                out.set(row, col, mask.get(sr, sc));
            }
        }
    }
    out
}

/// Morphological dilation with a square structuring element of side
/// `2 * radius_px + 1`. Radius 0 returns the mask unchanged. Works on
/// probability masks as a running maximum.
pub fn dilate(mask: &CurbMask, radius_px: usize) -> CurbMask {
    if radius_px == 0 {
        return mask.clone();
    }
    let spec = mask.spec;
    let w = spec.width;
    let h = spec.height;
    let r = radius_px;
    // Separable max filter: rows then columns.
    let mut tmp = vec![0.0f32; spec.len()];
    for row in 0..h {
        let line = &mask.data[row * w..(row + 1) * w];
        let out = &mut tmp[row * w..(row + 1) * w];
        for col in 0..w {
            let lo = col.saturating_sub(r);
            let hi = (col + r).min(w - 1);
            let mut m = 0.0f32;
            for &v in &line[lo..=hi] {
                m = m.max(v);
            }
            out[col] = m;
        }
    }
    let mut data = vec![0.0f32; spec.len()];
    for col in 0..w {
        for row in 0..h {
            let lo = row.saturating_sub(r);
            let hi = (row + r).min(h - 1);
            let mut m = 0.0f32;
            for rr in lo..=hi {
                m = m.max(tmp[rr * w + col]);
            }
            data[row * w + col] = m;
        }
    }
    CurbMask { spec, data }
}

/// PGM (P5) writer: 8-bit, value = round(255 * p).
pub fn write_pgm<W: Write>(w: &mut W, mask: &CurbMask) -> Result<(), MaskFileError> {
    write!(w, "P5\n{} {}\n255\n", mask.spec.width, mask.spec.height)?;
    let bytes: Vec<u8> = mask
        .data
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    w.write_all(&bytes)?;
    Ok(())
}

pub fn read_pgm<R: BufRead>(r: &mut R, resolution: f64) -> Result<CurbMask, MaskFileError> {
    let mut header = Vec::new();
    let mut fields = Vec::new();
    // Header: "P5", width, height, maxval, each separated by whitespace.
    while fields.len() < 4 {
        let mut byte = [0u8; 1];
        r.read_exact(&mut byte)?;
        if byte[0].is_ascii_whitespace() {
            if !header.is_empty() {
                fields.push(String::from_utf8_lossy(&header).into_owned());
                header.clear();
            }
        } else {
            header.push(byte[0]);
        }
    }
    if fields[0] != "P5" {
        return Err(MaskFileError::BadHeader(format!(
            "expected P5, got {}",
            fields[0]
        )));
    }
    let width: usize = fields[1]
        .parse()
        .map_err(|_| MaskFileError::BadHeader(format!("bad width {}", fields[1])))?;
    let height: usize = fields[2]
        .parse()
        .map_err(|_| MaskFileError::BadHeader(format!("bad height {}", fields[2])))?;
    if fields[3] != "255" {
        return Err(MaskFileError::BadHeader(format!(
            "expected maxval 255, got {}",
            fields[3]
        )));
    }
    let mut bytes = vec![0u8; width * height];
    r.read_exact(&mut bytes)?;
    Ok(CurbMask {
        spec: GridSpec::new(width, height, resolution),
        data: bytes.iter().map(|&b| b as f32 / 255.0).collect(),
    })
}

/// JSON sidecar describing a raw BEV image file.
#[derive(Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct BevSidecar {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub resolution_m: f64,
    pub channel_names: Vec<String>,
    pub range_norm_m: f64,
    pub height_norm_m: f64,
}

impl BevSidecar {
    pub fn of(img: &BevImage) -> BevSidecar {
        BevSidecar {
            width: img.spec.width,
            height: img.spec.height,
            channels: 3,
            resolution_m: img.spec.resolution,
            channel_names: vec!["range".into(), "intensity".into(), "height".into()],
            range_norm_m: img.range_norm_m,
            height_norm_m: img.height_norm_m,
        }
    }
}

/// Writes the raw plane-major little-endian f32 image plus its JSON sidecar
/// (same path with ".json" appended).
pub fn write_bev(path: &Path, img: &BevImage) -> Result<(), MaskFileError> {
    let mut raw = Vec::with_capacity(img.spec.len() * 12);
    for plane in img.channels() {
        for &v in plane {
            raw.extend_from_slice(&v.to_le_bytes());
        }
    }
    std::fs::write(path, raw)?;
    let sidecar = BevSidecar::of(img);
    let json = serde_json::to_string_pretty(&sidecar)?;
    std::fs::write(sidecar_path(path), json)?;
    Ok(())
}

pub fn read_bev(path: &Path) -> Result<BevImage, MaskFileError> {
    let sidecar: BevSidecar = serde_json::from_str(&std::fs::read_to_string(sidecar_path(path))?)?;
    let raw = std::fs::read(path)?;
    let expected = sidecar.width * sidecar.height * sidecar.channels * 4;
    if raw.len() != expected {
        return Err(MaskFileError::BadHeader(format!(
            "raw bev size {} does not match sidecar ({} expected)",
            raw.len(),
            expected
        )));
    }
    let spec = GridSpec::new(sidecar.width, sidecar.height, sidecar.resolution_m);
    let n = spec.len();
    let mut planes = vec![vec![0.0f32; n]; 3];
    for (p, plane) in planes.iter_mut().enumerate() {
        for (i, v) in plane.iter_mut().enumerate() {
            let off = (p * n + i) * 4;
            *v = f32::from_le_bytes(raw[off..off + 4].try_into().unwrap());
        }
    }
    let mut it = planes.into_iter();
    Ok(BevImage {
        spec,
        range: it.next().unwrap(),
        intensity: it.next().unwrap(),
        height: it.next().unwrap(),
        range_norm_m: sidecar.range_norm_m,
        height_norm_m: sidecar.height_norm_m,
    })
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut os = path.as_os_str().to_owned();
    os.push(".json");
    std::path::PathBuf::from(os)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pointcloud::LidarPoint;
    use proptest::prelude::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn small_spec() -> GridSpec {
        GridSpec::new(32, 32, 0.1)
    }

    fn random_blob_mask(spec: GridSpec, rng: &mut ChaCha8Rng) -> CurbMask {
        let mut m = CurbMask::zeros(spec);
        for _ in 0..6 {
            let r = rng.random_range(4..spec.height - 4);
            let c = rng.random_range(4..spec.width - 4);
            for dr in 0..3 {
                for dc in 0..3 {
                    m.set(r + dr - 1, c + dc - 1, 1.0);
                }
            }
        }
        m
    }

    #[test]
    fn rasterize_empty_cloud_is_zero() {
        let img = rasterize_cloud(&LidarScan::new(0, vec![]), GridSpec::default(), 3.55);
        assert!(img.range.iter().all(|&v| v == 0.0));
        assert!(img.intensity.iter().all(|&v| v == 0.0));
        assert!(img.height.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rasterize_single_point_lands_on_hand_computed_cell() {
        let cloud = LidarScan::new(0, vec![LidarPoint::new(1.05, -1.0, 2.03, 0.4)]);
        let img = rasterize_cloud(&cloud, GridSpec::default(), 3.55);
        let idx = 459 * 480 + 250;
        assert!(img.intensity[idx] == 0.4);
        let nonzero = img.intensity.iter().filter(|&&v| v != 0.0).count();
        assert_eq!(nonzero, 1);
        let expect_range = (1.05f64.powi(2) + 2.03f64.powi(2)).sqrt() / img.range_norm_m;
        assert!((img.range[idx] as f64 - expect_range).abs() < 1e-6);
        let expect_h = (-1.0 + 3.55) / 3.55;
        assert!((img.height[idx] as f64 - expect_h).abs() < 1e-6);
    }

    #[test]
    fn rasterize_keeps_highest_point_per_cell() {
        let cloud = LidarScan::new(
            0,
            vec![
                LidarPoint::new(1.0, -1.0, 2.0, 0.2),
                LidarPoint::new(1.0, -0.5, 2.0, 0.9),
            ],
        );
        let img = rasterize_cloud(&cloud, GridSpec::default(), 3.55);
        let (row, col) = GridSpec::default().pixel_of(1.0, 2.0).unwrap();
        assert_eq!(img.intensity[row * 480 + col], 0.9);
    }

    #[test]
    fn rasterize_channels_stay_normalized() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let points: Vec<LidarPoint> = (0..500)
            .map(|_| {
                LidarPoint::new(
                    rng.random_range(-30.0..30.0),
                    rng.random_range(-5.0..0.0),
                    rng.random_range(-60.0..60.0),
                    rng.random_range(0.0..1.0),
                )
            })
            .collect();
        let img = rasterize_cloud(&LidarScan::new(0, points), GridSpec::default(), 3.55);
        for plane in img.channels() {
            assert!(plane.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn polyline_empty_gives_zero_mask() {
        let m = rasterize_polylines(&[], small_spec(), 1);
        assert_eq!(m.count_nonzero(), 0);
    }

    #[test]
    fn polyline_axis_aligned_length() {
        // 5 m segment at 0.1 m/px spans about 50 cells.
        let spec = GridSpec::new(480, 960, 0.1);
        let m = rasterize_polylines(&[vec![(0.0, 0.0), (5.0, 0.0)]], spec, 1);
        let n = m.count_nonzero();
        assert!((49..=51).contains(&n), "got {n} pixels");
    }

    #[test]
    fn polyline_thickness_is_superset() {
        let spec = GridSpec::new(480, 960, 0.1);
        let thin = rasterize_polylines(&[vec![(0.0, 0.0), (5.0, 3.0)]], spec, 1);
        let thick = rasterize_polylines(&[vec![(0.0, 0.0), (5.0, 3.0)]], spec, 3);
        for (a, b) in thin.data.iter().zip(&thick.data) {
            assert!(b >= a);
        }
        assert!(thick.count_nonzero() > thin.count_nonzero());
    }

    #[test]
    fn warp_identity_is_bitwise_equal() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let m = random_blob_mask(small_spec(), &mut rng);
        let w = warp_mask(&m, &Transform::identity());
        assert_eq!(m, w);
    }

    #[test]
    fn warp_pure_z_translation_shifts_rows() {
        let spec = small_spec();
        let mut m = CurbMask::zeros(spec);
        m.set(20, 10, 1.0);
        // Motion of +3 pixels forward; content moves toward row 0.
        let t = Transform::from_translation([0.0, 0.0, 3.0 * spec.resolution]);
        let w = warp_mask(&m, &t);
        assert_eq!(w.get(17, 10), 1.0);
        assert_eq!(w.count_nonzero(), 1);
    }

    #[test]
    fn warp_roundtrip_mostly_recovers_mask() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let spec = GridSpec::new(64, 64, 0.1);
        for _ in 0..5 {
            let m = random_blob_mask(spec, &mut rng);
            let t = Transform::from_yaw(
                rng.random_range(-0.3..0.3),
                [rng.random_range(-0.5..0.5), 0.0, rng.random_range(-0.5..0.5)],
            );
            let back = warp_mask(&warp_mask(&m, &t), &t.inverse());
            let agree = m
                .data
                .iter()
                .zip(&back.data)
                .filter(|(a, b)| (**a > 0.5) == (**b > 0.5))
                .count();
            let frac = agree as f64 / m.data.len() as f64;
            assert!(frac >= 0.95, "agreement {frac}");
        }
    }

    #[test]
    fn dilate_radius_zero_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let m = random_blob_mask(small_spec(), &mut rng);
        assert_eq!(dilate(&m, 0), m);
    }

    #[test]
    fn dilate_single_pixel_makes_3x3_block() {
        let mut m = CurbMask::zeros(small_spec());
        m.set(10, 10, 1.0);
        let d = dilate(&m, 1);
        assert_eq!(d.count_nonzero(), 9);
        for dr in 0..3 {
            for dc in 0..3 {
                assert_eq!(d.get(9 + dr, 9 + dc), 1.0);
            }
        }
    }

    #[test]
    fn dilate_composes_like_larger_radius() {
        // Brute-force equivalence on random 32x32 masks.
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        for _ in 0..10 {
            let mut m = CurbMask::zeros(small_spec());
            for _ in 0..40 {
                let r = rng.random_range(0..32);
                let c = rng.random_range(0..32);
                m.set(r, c, 1.0);
            }
            assert_eq!(dilate(&dilate(&m, 1), 1), dilate(&m, 2));
        }
    }

    #[test]
    fn pgm_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let m = random_blob_mask(small_spec(), &mut rng);
        let mut buf = Vec::new();
        write_pgm(&mut buf, &m).unwrap();
        let back = read_pgm(&mut buf.as_slice(), 0.1).unwrap();
        assert_eq!(back.spec, m.spec);
        assert_eq!(back.data, m.data);
    }

    #[test]
    fn bev_file_roundtrip() {
        let dir = std::env::temp_dir().join("curb_bev_io_test");
        std::fs::create_dir_all(&dir).unwrap();
        let cloud = LidarScan::new(
            0,
            vec![
                LidarPoint::new(0.4, -1.2, 0.9, 0.5),
                LidarPoint::new(-0.3, -0.2, -0.8, 0.25),
            ],
        );
        let img = rasterize_cloud(&cloud, small_spec(), 3.55);
        let path = dir.join("frame.f32");
        write_bev(&path, &img).unwrap();
        let back = read_bev(&path).unwrap();
        assert_eq!(back, img);
        std::fs::remove_dir_all(&dir).ok();
    }

    proptest! {
        #[test]
        fn dilate_is_extensive_and_monotone(
            seeds in proptest::collection::vec(0u64..1000, 2),
            radius in 1usize..3,
        ) {
            let mut rng1 = ChaCha8Rng::seed_from_u64(seeds[0]);
            let m1 = random_blob_mask(small_spec(), &mut rng1);
            // m2 = m1 plus extra blobs, so m1 is a subset of m2.
            let mut rng2 = ChaCha8Rng::seed_from_u64(seeds[1]);
            let m2 = m1.union(&random_blob_mask(small_spec(), &mut rng2));
            let d1 = dilate(&m1, radius);
            let d2 = dilate(&m2, radius);
            for i in 0..m1.data.len() {
                prop_assert!(d1.data[i] >= m1.data[i]); // extensive
                prop_assert!(d2.data[i] >= d1.data[i]); // monotone
            }
        }
    }
}
