//! Synthetic world and multi-ring LIDAR raycaster: deterministic scenes,
//! scans, trajectories, curb polylines, and exact visible/occluded
//! partitions. This stands in for real annotated driving data and provides
//! the independent occlusion oracle the visibility operators are checked
//! against.
//!
//! World frame: y up with the road surface at y = 0, x/z horizontal. The
//! vehicle drives the road centerline; the sensor sits `sensor_height_m`
//! above the road. Scene geometry is analytic (straight roads or circular
//! arcs) so every ray intersection is closed form.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::bev::{rasterize_polylines, BevImage, CurbMask};
use crate::geometry::{GeometryError, TimedPose, Trajectory, Transform};
use crate::grid::GridSpec;
use crate::pointcloud::{LidarPoint, LidarScan};

/// Road centerline shape.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RoadShape {
    Straight,
    /// Constant-curvature arc; positive radius curves toward +x.
    Arc { radius: f64 },
}

/// Analytic road model: centerline parameterized by arc length, curbs at
/// signed lateral offsets +-width/2.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoadModel {
    pub shape: RoadShape,
    pub width: f64,
    pub length: f64,
}

impl RoadModel {
    pub fn centerline(&self, l: f64) -> (f64, f64) {
        match self.shape {
            RoadShape::Straight => (0.0, l),
            RoadShape::Arc { radius } => {
                let phi = l / radius;
                (radius * (1.0 - phi.cos()), radius * phi.sin())
            }
        }
    }

    /// Heading of the centerline tangent at arc length `l`.
    pub fn yaw(&self, l: f64) -> f64 {
        match self.shape {
            RoadShape::Straight => 0.0,
            RoadShape::Arc { radius } => l / radius,
        }
    }

    /// Point at arc length `l`, lateral offset `s` (positive toward +x at
    /// the road start).
    pub fn offset_point(&self, l: f64, s: f64) -> (f64, f64) {
        let (x, z) = self.centerline(l);
        let phi = self.yaw(l);
        (x + s * phi.cos(), z - s * phi.sin())
    }

    /// Signed lateral offset of a horizontal point from the centerline.
    pub fn lateral_of(&self, x: f64, z: f64) -> f64 {
        match self.shape {
            RoadShape::Straight => x,
            RoadShape::Arc { radius } => {
                let d = ((x - radius).powi(2) + z.powi(2)).sqrt();
                (radius.abs() - d) * radius.signum()
            }
        }
    }

    /// Arc length of the centerline point nearest to a horizontal point.
    pub fn arc_length_of(&self, x: f64, z: f64) -> f64 {
        match self.shape {
            RoadShape::Straight => z,
            RoadShape::Arc { radius } => {
                let ang = z.atan2(radius - x) * radius.signum();
                ang * radius.abs()
            }
        }
    }

    /// Curb polyline at lateral offset `s`, sampled every `step` metres of
    /// arc length over [l0, l1].
    pub fn curb_polyline(&self, s: f64, l0: f64, l1: f64, step: f64) -> Vec<(f64, f64)> {
        let n = ((l1 - l0) / step).ceil() as usize;
        (0..=n)
            .map(|i| self.offset_point(l0 + i as f64 * step, s))
            .collect()
    }
}

/// Obstacle kinds, with a coarse per-material intensity model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObstacleKind {
    Car,
    Bin,
    Cone,
}

/// Axis-aligned box obstacle standing on the road surface.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObstacleBox {
    pub kind: ObstacleKind,
    /// Footprint center (x, z) in world metres.
    pub center: (f64, f64),
    /// Footprint half extents along world x / z.
    pub half: (f64, f64),
    /// Top of the box above the road surface.
    pub height: f64,
}

impl ObstacleBox {
    pub fn corners(&self) -> [(f64, f64); 4] {
        let (cx, cz) = self.center;
        let (hx, hz) = self.half;
        [
            (cx - hx, cz - hz),
            (cx + hx, cz - hz),
            (cx + hx, cz + hz),
            (cx - hx, cz + hz),
        ]
    }
}

/// Deterministic scene description. The analytic `road` is the source of
/// truth; `curbs` holds the sampled polylines used for label rasterization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub seed: u64,
    pub road: RoadModel,
    pub curb_height: f64,
    pub obstacles: Vec<ObstacleBox>,
    pub curbs: Vec<Vec<(f64, f64)>>,
}

/// Beam pattern and noise model of the simulated sensor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BeamConfig {
    pub rings: usize,
    pub elevation_min_deg: f64,
    pub elevation_max_deg: f64,
    pub azimuth_step_deg: f64,
    pub max_range_m: f64,
    pub range_noise_m: f64,
    pub sensor_height_m: f64,
}

impl Default for BeamConfig {
    fn default() -> Self {
        BeamConfig {
            rings: 32,
            elevation_min_deg: -25.0,
            elevation_max_deg: 15.0,
            azimuth_step_deg: 0.4,
            max_range_m: 100.0,
            range_noise_m: 0.02,
            sensor_height_m: 2.0,
        }
    }
}

const SCENE_LENGTH_M: f64 = 140.0;
const CURB_SAMPLE_STEP_M: f64 = 0.25;
const OBSTACLE_GAP_RANGE_M: (f64, f64) = (0.5, 2.5);

const INTENSITY_ROAD: f32 = 0.2;
const INTENSITY_CURB: f32 = 0.5;
const INTENSITY_OBSTACLE: f32 = 0.7;
const INTENSITY_NOISE: f32 = 0.05;

/// Deterministic scene: a straight or arc road with curbs on both sides and
/// 0..=6 box obstacles parked 0.5-3.0 m from a curb, never intersecting it.
pub fn generate_scene(seed: u64) -> SceneSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = if rng.random::<f64>() < 0.5 {
        RoadShape::Straight
    } else {
        let r: f64 = rng.random_range(60.0..120.0);
        let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
        RoadShape::Arc { radius: r * sign }
    };
    let width: f64 = rng.random_range(5.5..8.5);
    let road = RoadModel {
        shape,
        width,
        length: SCENE_LENGTH_M,
    };
    let curb_height = 0.12;

    let n_obstacles = rng.random_range(0..=6usize);
    let mut obstacles = Vec::with_capacity(n_obstacles);
    for _ in 0..n_obstacles {
        for _attempt in 0..40 {
            let kind = match rng.random_range(0..4u32) {
                0 | 1 => ObstacleKind::Car,
                2 => ObstacleKind::Bin,
                _ => ObstacleKind::Cone,
            };
            let (w_lat, w_lon, height) = match kind {
                ObstacleKind::Car => (1.8, 4.5, 1.5),
                ObstacleKind::Bin => (0.8, 0.8, 1.2),
                ObstacleKind::Cone => (0.3, 0.3, 0.5),
            };
            let side: f64 = if rng.random::<bool>() { 1.0 } else { -1.0 };
            let l: f64 = rng.random_range(8.0..road.length - 10.0);
            let gap_hi = OBSTACLE_GAP_RANGE_M
                .1
                .min(width / 2.0 - w_lat - 0.8)
                .max(OBSTACLE_GAP_RANGE_M.0 + 0.05);
            let gap: f64 = rng.random_range(OBSTACLE_GAP_RANGE_M.0..gap_hi);
            let s_center = side * (width / 2.0 - gap - w_lat / 2.0);
            let center = road.offset_point(l, s_center);
            let candidate = ObstacleBox {
                kind,
                center,
                half: (w_lat / 2.0, w_lon / 2.0),
                height,
            };
            if let Some(d) = footprint_curb_distance(&road, &candidate) {
                if (0.45..=3.05).contains(&d) {
                    obstacles.push(candidate);
                    break;
                }
            }
        }
    }

    let curbs = vec![
        road.curb_polyline(-width / 2.0, -20.0, road.length, CURB_SAMPLE_STEP_M),
        road.curb_polyline(width / 2.0, -20.0, road.length, CURB_SAMPLE_STEP_M),
    ];
    SceneSpec {
        seed,
        road,
        curb_height,
        obstacles,
        curbs,
    }
}

/// Minimum distance from the box footprint to the nearest curb line, or
/// None when the footprint straddles a curb.
pub fn footprint_curb_distance(road: &RoadModel, obstacle: &ObstacleBox) -> Option<f64> {
    // Sample the footprint boundary and use the signed lateral coordinate:
    // the curb lines live at |s| = width/2, so the lateral gap to the
    // nearest curb is | |s| - width/2 | as long as all samples stay on one
    // side.
    let mut min_gap = f64::INFINITY;
    let corners = obstacle.corners();
    let mut inside_road = 0usize;
    let mut samples = 0usize;
    for i in 0..4 {
        let (x0, z0) = corners[i];
        let (x1, z1) = corners[(i + 1) % 4];
        for k in 0..=8 {
            let t = k as f64 / 8.0;
            let (x, z) = (x0 + (x1 - x0) * t, z0 + (z1 - z0) * t);
            let s = road.lateral_of(x, z);
            samples += 1;
            if s.abs() < road.width / 2.0 {
                inside_road += 1;
            }
            min_gap = min_gap.min((s.abs() - road.width / 2.0).abs());
        }
    }
    if inside_road != samples && inside_road != 0 {
        return None; // straddles a curb line
    }
    Some(min_gap)
}

/// Ray materials for the intensity model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Material {
    Road,
    Sidewalk,
    Curb,
    Obstacle,
}

fn material_intensity(m: Material) -> f32 {
    match m {
        Material::Road | Material::Sidewalk => INTENSITY_ROAD,
        Material::Curb => INTENSITY_CURB,
        Material::Obstacle => INTENSITY_OBSTACLE,
    }
}

/// Casts every ring x azimuth ray from the sensor pose against the scene:
/// road plane, sidewalk plane, curb step faces, and obstacle boxes. The
/// nearest hit wins; Gaussian range noise and per-material intensity noise
/// are applied; misses are dropped. Points are returned in the sensor frame.
pub fn simulate_scan(
    scene: &SceneSpec,
    sensor_pose: &Transform,
    beams: &BeamConfig,
    seed: u64,
) -> LidarScan {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::new();
    let n_az = (360.0 / beams.azimuth_step_deg).round() as usize;
    let origin = sensor_pose.translation;
    for ring in 0..beams.rings {
        let frac = if beams.rings > 1 {
            ring as f64 / (beams.rings - 1) as f64
        } else {
            0.0
        };
        let elev = (beams.elevation_min_deg
            + frac * (beams.elevation_max_deg - beams.elevation_min_deg))
            .to_radians();
        let (sin_e, cos_e) = (elev.sin(), elev.cos());
        for a in 0..n_az {
            let az = (a as f64 * beams.azimuth_step_deg).to_radians();
            let dir_sensor = [cos_e * az.sin(), sin_e, cos_e * az.cos()];
            let dir_world = sensor_pose.rotate(dir_sensor);
            let Some((range, material)) = nearest_hit(scene, origin, dir_world, beams.max_range_m)
            else {
                continue;
            };
            let noise: f64 = rng.sample::<f64, _>(StandardNormal) * beams.range_noise_m;
            let r = (range + noise).max(0.05);
            let jitter: f32 = rng.random_range(-INTENSITY_NOISE..INTENSITY_NOISE);
            let intensity = (material_intensity(material) + jitter).clamp(0.0, 1.0);
            points.push(LidarPoint {
                x: (dir_sensor[0] * r) as f32,
                y: (dir_sensor[1] * r) as f32,
                z: (dir_sensor[2] * r) as f32,
                intensity,
            });
        }
    }
    LidarScan::new(0, points)
}

fn nearest_hit(
    scene: &SceneSpec,
    o: [f64; 3],
    d: [f64; 3],
    max_range: f64,
) -> Option<(f64, Material)> {
    let road = &scene.road;
    let half_w = road.width / 2.0;
    let mut best: Option<(f64, Material)> = None;
    let consider = |t: f64, m: Material, best: &mut Option<(f64, Material)>| {
        if t > 1e-6 && t <= max_range && best.map_or(true, |(bt, _)| t < bt) {
            *best = Some((t, m));
        }
    };

    if d[1] < -1e-12 {
        // Road plane y = 0 inside the curbs.
        let t = -o[1] / d[1];
        let (x, z) = (o[0] + t * d[0], o[2] + t * d[2]);
        if road.lateral_of(x, z).abs() < half_w {
            consider(t, Material::Road, &mut best);
        }
        // Sidewalk plane y = curb_height outside the curbs.
        let ts = (scene.curb_height - o[1]) / d[1];
        if ts > 0.0 {
            let (x, z) = (o[0] + ts * d[0], o[2] + ts * d[2]);
            if road.lateral_of(x, z).abs() >= half_w {
                consider(ts, Material::Sidewalk, &mut best);
            }
        }
    }

    // Curb step faces at |s| = width/2, y in [0, curb_height].
    for s_k in [-half_w, half_w] {
        for t in wall_intersections(road, o, d, s_k) {
            let y = o[1] + t * d[1];
            if (0.0..=scene.curb_height).contains(&y) {
                consider(t, Material::Curb, &mut best);
            }
        }
    }

    // Obstacle boxes.
    for ob in &scene.obstacles {
        if let Some(t) = ray_box(o, d, ob) {
            consider(t, Material::Obstacle, &mut best);
        }
    }
    best
}

/// Parameters where the ray's horizontal track crosses the surface of
/// constant lateral offset `s_k` (a plane for straight roads, a cylinder
/// for arcs).
fn wall_intersections(road: &RoadModel, o: [f64; 3], d: [f64; 3], s_k: f64) -> Vec<f64> {
    match road.shape {
        RoadShape::Straight => {
            if d[0].abs() < 1e-12 {
                Vec::new()
            } else {
                vec![(s_k - o[0]) / d[0]]
            }
        }
        RoadShape::Arc { radius } => {
            let r_k = radius.abs() - s_k * radius.signum();
            let cx = radius;
            let (ox, oz) = (o[0] - cx, o[2]);
            let a = d[0] * d[0] + d[2] * d[2];
            if a < 1e-15 {
                return Vec::new();
            }
            let b = 2.0 * (ox * d[0] + oz * d[2]);
            let c = ox * ox + oz * oz - r_k * r_k;
            let disc = b * b - 4.0 * a * c;
            if disc < 0.0 {
                return Vec::new();
            }
            let sq = disc.sqrt();
            vec![(-b - sq) / (2.0 * a), (-b + sq) / (2.0 * a)]
        }
    }
}

/// Slab test against the box volume (y from 0 to height).
fn ray_box(o: [f64; 3], d: [f64; 3], ob: &ObstacleBox) -> Option<f64> {
    let lo = [ob.center.0 - ob.half.0, 0.0, ob.center.1 - ob.half.1];
    let hi = [ob.center.0 + ob.half.0, ob.height, ob.center.1 + ob.half.1];
    let mut t0 = 0.0f64;
    let mut t1 = f64::INFINITY;
    for i in 0..3 {
        if d[i].abs() < 1e-12 {
            if o[i] < lo[i] || o[i] > hi[i] {
                return None;
            }
            continue;
        }
        let inv = 1.0 / d[i];
        let (mut ta, mut tb) = ((lo[i] - o[i]) * inv, (hi[i] - o[i]) * inv);
        if ta > tb {
            std::mem::swap(&mut ta, &mut tb);
        }
        t0 = t0.max(ta);
        t1 = t1.min(tb);
        if t0 > t1 {
            return None;
        }
    }
    (t0 > 1e-9).then_some(t0)
}

/// Exact ground-truth labels for one frame: the curb polylines rasterized
/// in the sensor frame, partitioned into visible and occluded by continuous
/// 2D ray casting against obstacle footprints. Independent of the
/// `visibility` module, which it serves as the oracle for.
pub fn ground_truth_labels(
    scene: &SceneSpec,
    sensor_pose: &Transform,
    grid: GridSpec,
    thickness_px: usize,
) -> (CurbMask, CurbMask, CurbMask) {
    let se2 = sensor_pose.ground_se2();
    let inv = se2.inverse();
    let lines_sensor: Vec<Vec<(f64, f64)>> = scene
        .curbs
        .iter()
        .map(|line| line.iter().map(|&(x, z)| inv.apply(x, z)).collect())
        .collect();
    let curb = rasterize_polylines(&lines_sensor, grid, thickness_px);

    // Obstacle footprints in the sensor frame (rotated rectangles).
    let footprints: Vec<[(f64, f64); 4]> = scene
        .obstacles
        .iter()
        .map(|ob| ob.corners().map(|(x, z)| inv.apply(x, z)))
        .collect();

    let mut occluded = CurbMask::zeros(grid);
    for row in 0..grid.height {
        for col in 0..grid.width {
            if curb.get(row, col) == 0.0 {
                continue;
            }
            let (x, z) = grid.metre_of(row, col);
            if segment_blocked((0.0, 0.0), (x, z), &footprints) {
                occluded.set(row, col, 1.0);
            }
        }
    }
    let visible = curb.minus(&occluded);
    (curb, visible, occluded)
}

/// True when the open segment from the sensor to the target crosses any
/// footprint strictly before the target.
fn segment_blocked(from: (f64, f64), to: (f64, f64), footprints: &[[(f64, f64); 4]]) -> bool {
    for poly in footprints {
        for i in 0..4 {
            let a = poly[i];
            let b = poly[(i + 1) % 4];
            if let Some(t) = segment_intersection_t(from, to, a, b) {
                if t < 1.0 - 1e-9 {
                    return true;
                }
            }
        }
    }
    false
}

/// Parameter along `p..q` of its intersection with segment `a..b`.
fn segment_intersection_t(
    p: (f64, f64),
    q: (f64, f64),
    a: (f64, f64),
    b: (f64, f64),
) -> Option<f64> {
    let r = (q.0 - p.0, q.1 - p.1);
    let s = (b.0 - a.0, b.1 - a.1);
    let denom = r.0 * s.1 - r.1 * s.0;
    if denom.abs() < 1e-15 {
        return None;
    }
    let ap = (a.0 - p.0, a.1 - p.1);
    let t = (ap.0 * s.1 - ap.1 * s.0) / denom;
    let u = (ap.0 * r.1 - ap.1 * r.0) / denom;
    ((0.0..=1.0).contains(&t) && (0.0..=1.0).contains(&u)).then_some(t)
}

/// Per-frame ground-truth labels.
#[derive(Debug, Clone)]
pub struct FrameLabels {
    pub curb: CurbMask,
    pub visible: CurbMask,
    pub occluded: CurbMask,
}

/// A simulated drive: scans at `scan_rate_hz`, a pose stream at
/// `pose_rate_hz` (the odometry stand-in), and exact labels per scan.
#[derive(Debug, Clone)]
pub struct SimSequence {
    pub scans: Vec<LidarScan>,
    pub trajectory: Trajectory,
    pub labels: Vec<FrameLabels>,
}

#[derive(Debug, Clone, Copy)]
pub struct SequenceConfig {
    pub n_frames: usize,
    pub speed_mps: f64,
    pub scan_rate_hz: f64,
    pub pose_rate_hz: f64,
    pub seed: u64,
    pub beams: BeamConfig,
    pub grid: GridSpec,
    pub label_thickness_px: usize,
}

impl Default for SequenceConfig {
    fn default() -> Self {
        SequenceConfig {
            n_frames: 30,
            speed_mps: 10.0,
            scan_rate_hz: 10.0,
            pose_rate_hz: 16.0,
            seed: 0,
            beams: BeamConfig::default(),
            grid: GridSpec::default(),
            label_thickness_px: 2,
        }
    }
}

/// Start of the scan clock, offset from the pose clock so scan timestamps
/// never coincide with pose knots at the default rates (the interpolation
/// path is always exercised).
const FIRST_SCAN_US: i64 = 1_013_337;
/// Arc length of the vehicle at t = 0.
const START_ARC_LENGTH_M: f64 = 2.0;

/// World-from-sensor pose of the vehicle at arc length `l`.
pub fn vehicle_pose(scene: &SceneSpec, l: f64, sensor_height: f64) -> Transform {
    let (x, z) = scene.road.centerline(l);
    let yaw = scene.road.yaw(l);
    Transform::from_yaw(yaw, [x, sensor_height, z])
}

/// Drives the centerline at constant speed, emitting poses and scans on
/// their own clocks, plus exact labels per scan. Deterministic per seed.
pub fn generate_sequence(scene: &SceneSpec, cfg: &SequenceConfig) -> SimSequence {
    let pose_period_us = (1e6 / cfg.pose_rate_hz).round() as i64;
    let scan_period_us = (1e6 / cfg.scan_rate_hz).round() as i64;
    let last_scan_us = FIRST_SCAN_US + (cfg.n_frames.max(1) as i64 - 1) * scan_period_us;
    let l_at = |t_us: i64| START_ARC_LENGTH_M + cfg.speed_mps * t_us as f64 * 1e-6;

    let mut poses = Vec::new();
    let mut t = 0i64;
    while t <= last_scan_us + 2 * pose_period_us {
        poses.push(TimedPose {
            t_us: t,
            pose: vehicle_pose(scene, l_at(t), cfg.beams.sensor_height_m),
        });
        t += pose_period_us;
    }
    let trajectory = Trajectory::new(poses).expect("pose stream is sorted by construction");

    let mut scans = Vec::with_capacity(cfg.n_frames);
    let mut labels = Vec::with_capacity(cfg.n_frames);
    for i in 0..cfg.n_frames {
        let t_us = FIRST_SCAN_US + i as i64 * scan_period_us;
        let pose = vehicle_pose(scene, l_at(t_us), cfg.beams.sensor_height_m);
        let mut scan = simulate_scan(
            scene,
            &pose,
            &cfg.beams,
            cfg.seed ^ (0x9e3779b97f4a7c15u64.wrapping_mul(i as u64 + 1)),
        );
        scan.timestamp_us = t_us;
        let (curb, visible, occluded) =
            ground_truth_labels(scene, &pose, cfg.grid, cfg.label_thickness_px);
        scans.push(scan);
        labels.push(FrameLabels {
            curb,
            visible,
            occluded,
        });
    }
    SimSequence {
        scans,
        trajectory,
        labels,
    }
}

/// Integrates the trailing `window` scans (ending at frame `idx`) into the
/// frame's sensor coordinates.
pub fn integrated_cloud(
    seq: &SimSequence,
    idx: usize,
    window: usize,
) -> Result<LidarScan, GeometryError> {
    let start = idx + 1 - window.min(idx + 1);
    crate::pointcloud::integrate_scans(
        &seq.scans[start..=idx],
        &seq.trajectory,
        seq.scans[idx].timestamp_us,
    )
}

/// Deterministic augmentation parameters: mirror, integer translation, and
/// a small rotation, applied identically to the image and all masks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentParams {
    pub mirror: bool,
    pub dx_px: i32,
    pub dy_px: i32,
    pub rot_deg: f64,
}

impl AugmentParams {
    pub fn identity() -> AugmentParams {
        AugmentParams {
            mirror: false,
            dx_px: 0,
            dy_px: 0,
            rot_deg: 0.0,
        }
    }

    pub fn draw(rng: &mut ChaCha8Rng) -> AugmentParams {
        AugmentParams {
            mirror: rng.random::<bool>(),
            dx_px: rng.random_range(-16..=16),
            dy_px: rng.random_range(-16..=16),
            rot_deg: rng.random_range(-5.0..5.0),
        }
    }
}

/// Applies mirror / translate / rotate with nearest-neighbor sampling to a
/// BEV image and its masks (identical transform everywhere).
pub fn augment_with(
    bev: &BevImage,
    masks: &[&CurbMask],
    params: &AugmentParams,
) -> (BevImage, Vec<CurbMask>) {
    let spec = bev.spec;
    let map_plane = |plane: &[f32]| -> Vec<f32> {
        let mut out = vec![0.0f32; plane.len()];
        for r in 0..spec.height {
            for c in 0..spec.width {
                if let Some((sr, sc)) = source_pixel(spec, r, c, params) {
                    out[r * spec.width + c] = plane[sr * spec.width + sc];
                }
            }
        }
        out
    };
    let out_bev = BevImage {
        spec,
        range: map_plane(&bev.range),
        intensity: map_plane(&bev.intensity),
        height: map_plane(&bev.height),
        range_norm_m: bev.range_norm_m,
        height_norm_m: bev.height_norm_m,
    };
    let out_masks = masks
        .iter()
        .map(|m| {
            assert_eq!(m.spec, spec, "mask grid differs from image grid");
            CurbMask {
                spec,
                data: map_plane(&m.data),
            }
        })
        .collect();
    (out_bev, out_masks)
}

/// Seeded convenience wrapper around [`augment_with`].
pub fn augment(
    bev: &BevImage,
    masks: &[&CurbMask],
    seed: u64,
) -> (BevImage, Vec<CurbMask>, AugmentParams) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = AugmentParams::draw(&mut rng);
    let (b, m) = augment_with(bev, masks, &params);
    (b, m, params)
}

/// Inverse mapping for one destination pixel.
fn source_pixel(
    spec: GridSpec,
    row: usize,
    col: usize,
    params: &AugmentParams,
) -> Option<(usize, usize)> {
    let cy = (spec.height as f64 - 1.0) / 2.0;
    let cx = (spec.width as f64 - 1.0) / 2.0;
    // Forward order: mirror, then translate, then rotate about the center.
    // Inverse: un-rotate, un-translate, un-mirror.
    let (sin_t, cos_t) = params.rot_deg.to_radians().sin_cos();
    let dy = row as f64 - cy;
    let dx = col as f64 - cx;
    let ry = cy - sin_t * dx + cos_t * dy;
    let rx = cx + cos_t * dx + sin_t * dy;
    let ty = ry - params.dy_px as f64;
    let tx = rx - params.dx_px as f64;
    let (fy, fx) = if params.mirror {
        (ty, spec.width as f64 - 1.0 - tx)
    } else {
        (ty, tx)
    };
    let (sr, sc) = (fy.round(), fx.round());
    if sr < 0.0 || sc < 0.0 || sr >= spec.height as f64 || sc >= spec.width as f64 {
        return None;
    }
    Some((sr as usize, sc as usize))
}
