//! Rigid-body transforms, timestamped trajectories, and the interpolation
//! machinery used to align laser frames with a lower-rate pose stream.
//!
//! All rotations are kept orthonormal (determinant +1) to within 1e-9; the
//! composition path re-orthonormalizes whenever accumulated drift exceeds
//! 1e-12 so long chains stay well conditioned.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Mat3 = [[f64; 3]; 3];
pub type Vec3 = [f64; 3];

/// Frobenius drift threshold above which `compose` re-orthonormalizes.
const COMPOSE_DRIFT_TOL: f64 = 1e-12;

/// Tolerance for quaternion norms in pose files.
const QUAT_NORM_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("timestamp {t_us} us outside trajectory span [{lo}, {hi}] us")]
    OutOfRange { t_us: i64, lo: i64, hi: i64 },
    #[error("trajectory needs at least one pose")]
    EmptyTrajectory,
    #[error("trajectory timestamps must be strictly increasing (at index {index})")]
    UnsortedTrajectory { index: usize },
}

#[derive(Debug, Error)]
pub enum PoseFileError {
    #[error("pose file i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("pose file line {line}: {source}")]
    Json {
        line: usize,
        source: serde_json::Error,
    },
    #[error("pose file line {line}: quaternion norm {norm} deviates from 1 by more than 1e-6")]
    QuatNorm { line: usize, norm: f64 },
    #[error(transparent)]
    Trajectory(#[from] GeometryError),
}

/// Unit quaternion (w, x, y, z) used for rotation interpolation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quaternion {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Quaternion {
    pub const IDENTITY: Quaternion = Quaternion {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub fn norm(&self) -> f64 {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn normalized(&self) -> Quaternion {
        let n = self.norm();
        Quaternion {
            w: self.w / n,
            x: self.x / n,
            y: self.y / n,
            z: self.z / n,
        }
    }

    pub fn dot(&self, o: &Quaternion) -> f64 {
        self.w * o.w + self.x * o.x + self.y * o.y + self.z * o.z
    }

    fn neg(&self) -> Quaternion {
        Quaternion {
            w: -self.w,
            x: -self.x,
            y: -self.y,
            z: -self.z,
        }
    }

    /// Shepperd's method: stable for all rotation matrices.
    pub fn from_matrix(m: &Mat3) -> Quaternion {
        let trace = m[0][0] + m[1][1] + m[2][2];
        let q = if trace > 0.0 {
            let s = (trace + 1.0).sqrt() * 2.0;
            Quaternion {
                w: 0.25 * s,
                x: (m[2][1] - m[1][2]) / s,
                y: (m[0][2] - m[2][0]) / s,
                z: (m[1][0] - m[0][1]) / s,
            }
        } else if m[0][0] > m[1][1] && m[0][0] > m[2][2] {
            let s = (1.0 + m[0][0] - m[1][1] - m[2][2]).sqrt() * 2.0;
            Quaternion {
                w: (m[2][1] - m[1][2]) / s,
                x: 0.25 * s,
                y: (m[0][1] + m[1][0]) / s,
                z: (m[0][2] + m[2][0]) / s,
            }
        } else if m[1][1] > m[2][2] {
            let s = (1.0 + m[1][1] - m[0][0] - m[2][2]).sqrt() * 2.0;
            Quaternion {
                w: (m[0][2] - m[2][0]) / s,
                x: (m[0][1] + m[1][0]) / s,
                y: 0.25 * s,
                z: (m[1][2] + m[2][1]) / s,
            }
        } else {
            let s = (1.0 + m[2][2] - m[0][0] - m[1][1]).sqrt() * 2.0;
            Quaternion {
                w: (m[1][0] - m[0][1]) / s,
                x: (m[0][2] + m[2][0]) / s,
                y: (m[1][2] + m[2][1]) / s,
                z: 0.25 * s,
            }
        };
        q.normalized()
    }

    pub fn to_matrix(&self) -> Mat3 {
        let Quaternion { w, x, y, z } = *self;
        [
            [
                1.0 - 2.0 * (y * y + z * z),
                2.0 * (x * y - w * z),
                2.0 * (x * z + w * y),
            ],
            [
                2.0 * (x * y + w * z),
                1.0 - 2.0 * (x * x + z * z),
                2.0 * (y * z - w * x),
            ],
            [
                2.0 * (x * z - w * y),
                2.0 * (y * z + w * x),
                1.0 - 2.0 * (x * x + y * y),
            ],
        ]
    }

    /// Spherical interpolation along the shortest arc; falls back to a
    /// normalized lerp when the quaternions are nearly parallel.
    pub fn slerp(a: &Quaternion, b: &Quaternion, u: f64) -> Quaternion {
        let mut b = *b;
        let mut dot = a.dot(&b);
        if dot < 0.0 {
            b = b.neg();
            dot = -dot;
        }
        if dot > 1.0 - 1e-12 {
            return Quaternion {
                w: a.w + (b.w - a.w) * u,
                x: a.x + (b.x - a.x) * u,
                y: a.y + (b.y - a.y) * u,
                z: a.z + (b.z - a.z) * u,
            }
            .normalized();
        }
        let theta = dot.clamp(-1.0, 1.0).acos();
        let sin_theta = theta.sin();
        let ka = ((1.0 - u) * theta).sin() / sin_theta;
        let kb = (u * theta).sin() / sin_theta;
        Quaternion {
            w: ka * a.w + kb * b.w,
            x: ka * a.x + kb * b.x,
            y: ka * a.y + kb * b.y,
            z: ka * a.z + kb * b.z,
        }
        .normalized()
    }
}

/// Rigid transform: rotation then translation, `p' = R p + t`.
///
/// For poses this maps sensor-frame coordinates into the world frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transform {
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl Default for Transform {
    fn default() -> Self {
        Self::identity()
    }
}

impl Transform {
    pub fn identity() -> Transform {
        Transform {
            rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            translation: [0.0, 0.0, 0.0],
        }
    }

    pub fn from_parts(rotation: Mat3, translation: Vec3) -> Transform {
        Transform {
            rotation,
            translation,
        }
    }

    pub fn from_quat(q: &Quaternion, translation: Vec3) -> Transform {
        Transform {
            rotation: q.normalized().to_matrix(),
            translation,
        }
    }

    pub fn from_translation(translation: Vec3) -> Transform {
        Transform {
            rotation: Transform::identity().rotation,
            translation,
        }
    }

    /// Rotation about the vertical (+y) axis. Positive yaw turns +z toward +x.
    pub fn from_yaw(yaw: f64, translation: Vec3) -> Transform {
        let (s, c) = yaw.sin_cos();
        Transform {
            rotation: [[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]],
            translation,
        }
    }

    pub fn apply(&self, p: Vec3) -> Vec3 {
        let r = &self.rotation;
        [
            r[0][0] * p[0] + r[0][1] * p[1] + r[0][2] * p[2] + self.translation[0],
            r[1][0] * p[0] + r[1][1] * p[1] + r[1][2] * p[2] + self.translation[1],
            r[2][0] * p[0] + r[2][1] * p[1] + r[2][2] * p[2] + self.translation[2],
        ]
    }

    pub fn rotate(&self, p: Vec3) -> Vec3 {
        let r = &self.rotation;
        [
            r[0][0] * p[0] + r[0][1] * p[1] + r[0][2] * p[2],
            r[1][0] * p[0] + r[1][1] * p[1] + r[1][2] * p[2],
            r[2][0] * p[0] + r[2][1] * p[1] + r[2][2] * p[2],
        ]
    }

    /// Applies `other` first, then `self`.
    pub fn compose(&self, other: &Transform) -> Transform {
        let a = &self.rotation;
        let b = &other.rotation;
        let mut rotation = [[0.0; 3]; 3];
        for (i, row) in rotation.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                *cell = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
            }
        }
        let translation = self.apply(other.translation);
        let mut out = Transform {
            rotation,
            translation,
        };
        if out.orthonormality_drift() > COMPOSE_DRIFT_TOL {
            out.re_orthonormalize();
        }
        out
    }

    pub fn inverse(&self) -> Transform {
        let r = &self.rotation;
        let rt = [
            [r[0][0], r[1][0], r[2][0]],
            [r[0][1], r[1][1], r[2][1]],
            [r[0][2], r[1][2], r[2][2]],
        ];
        let t = self.translation;
        let neg = [
            -(rt[0][0] * t[0] + rt[0][1] * t[1] + rt[0][2] * t[2]),
            -(rt[1][0] * t[0] + rt[1][1] * t[1] + rt[1][2] * t[2]),
            -(rt[2][0] * t[0] + rt[2][1] * t[1] + rt[2][2] * t[2]),
        ];
        Transform {
            rotation: rt,
            translation: neg,
        }
    }

    /// Frobenius norm of `R^T R - I`.
    pub fn orthonormality_drift(&self) -> f64 {
        let r = &self.rotation;
        let mut acc = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                let mut dot = 0.0;
                for (k, row) in r.iter().enumerate() {
                    let _ = k;
                    dot += row[i] * row[j];
                }
                let target = if i == j { 1.0 } else { 0.0 };
                acc += (dot - target) * (dot - target);
            }
        }
        acc.sqrt()
    }

    /// Gram-Schmidt on the rotation columns, preserving handedness.
    pub fn re_orthonormalize(&mut self) {
        let r = self.rotation;
        let col = |j: usize| [r[0][j], r[1][j], r[2][j]];
        let c0 = normalize(col(0));
        let c1raw = col(1);
        let d = dot(c1raw, c0);
        let c1 = normalize([c1raw[0] - d * c0[0], c1raw[1] - d * c0[1], c1raw[2] - d * c0[2]]);
        let c2 = cross(c0, c1);
        for i in 0..3 {
            self.rotation[i][0] = c0[i];
            self.rotation[i][1] = c1[i];
            self.rotation[i][2] = c2[i];
        }
    }

    pub fn determinant(&self) -> f64 {
        let r = &self.rotation;
        r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1])
            - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
            + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0])
    }

    pub fn quaternion(&self) -> Quaternion {
        Quaternion::from_matrix(&self.rotation)
    }

    /// Heading of the +z axis after rotation, projected on the ground plane.
    pub fn yaw(&self) -> f64 {
        self.rotation[0][2].atan2(self.rotation[2][2])
    }

    /// Ground-plane (x, z) part of the motion: yaw plus horizontal translation.
    /// Pitch and roll are dropped by the projection.
    pub fn ground_se2(&self) -> GroundMotion {
        GroundMotion {
            yaw: self.yaw(),
            tx: self.translation[0],
            tz: self.translation[2],
        }
    }
}

/// Planar rigid motion used for warping BEV rasters between frames.
#[derive(Debug, Clone, Copy)]
pub struct GroundMotion {
    pub yaw: f64,
    pub tx: f64,
    pub tz: f64,
}

impl GroundMotion {
    pub fn identity() -> GroundMotion {
        GroundMotion {
            yaw: 0.0,
            tx: 0.0,
            tz: 0.0,
        }
    }

    pub fn apply(&self, x: f64, z: f64) -> (f64, f64) {
        let (s, c) = self.yaw.sin_cos();
        (c * x + s * z + self.tx, -s * x + c * z + self.tz)
    }

    pub fn inverse(&self) -> GroundMotion {
        let (s, c) = self.yaw.sin_cos();
        let ix = -(c * self.tx - s * self.tz);
        let iz = -(s * self.tx + c * self.tz);
        GroundMotion {
            yaw: -self.yaw,
            tx: ix,
            tz: iz,
        }
    }
}

fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn normalize(v: Vec3) -> Vec3 {
    let n = dot(v, v).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

/// A world-from-sensor pose at an integer-microsecond timestamp.
#[derive(Debug, Clone, Copy)]
pub struct TimedPose {
    pub t_us: i64,
    pub pose: Transform,
}

/// Ordered pose stream; immutable after construction.
#[derive(Debug, Clone)]
pub struct Trajectory {
    poses: Vec<TimedPose>,
}

impl Trajectory {
    pub fn new(poses: Vec<TimedPose>) -> Result<Trajectory, GeometryError> {
        if poses.is_empty() {
            return Err(GeometryError::EmptyTrajectory);
        }
        for i in 1..poses.len() {
            if poses[i].t_us <= poses[i - 1].t_us {
                return Err(GeometryError::UnsortedTrajectory { index: i });
            }
        }
        Ok(Trajectory { poses })
    }

    pub fn poses(&self) -> &[TimedPose] {
        &self.poses
    }

    pub fn span(&self) -> (i64, i64) {
        (self.poses[0].t_us, self.poses[self.poses.len() - 1].t_us)
    }

    pub fn contains(&self, t_us: i64) -> bool {
        let (lo, hi) = self.span();
        t_us >= lo && t_us <= hi
    }

    /// Pose at `t_us`: exact at stored knots, otherwise translation is
    /// interpolated linearly and rotation along the shortest geodesic.
    pub fn interpolate_at(&self, t_us: i64) -> Result<Transform, GeometryError> {
        let (lo, hi) = self.span();
        if t_us < lo || t_us > hi {
            return Err(GeometryError::OutOfRange { t_us, lo, hi });
        }
        let idx = self.poses.partition_point(|p| p.t_us <= t_us);
        // partition_point > 0 because t_us >= lo.
        let before = &self.poses[idx - 1];
        if before.t_us == t_us {
            return Ok(before.pose);
        }
        let after = &self.poses[idx];
        let u = (t_us - before.t_us) as f64 / (after.t_us - before.t_us) as f64;
        let qa = before.pose.quaternion();
        let qb = after.pose.quaternion();
        let q = Quaternion::slerp(&qa, &qb, u);
        let ta = before.pose.translation;
        let tb = after.pose.translation;
        let t = [
            ta[0] + (tb[0] - ta[0]) * u,
            ta[1] + (tb[1] - ta[1]) * u,
            ta[2] + (tb[2] - ta[2]) * u,
        ];
        Ok(Transform::from_quat(&q, t))
    }

    /// Transform taking points in the sensor frame at `t_from` into the
    /// sensor frame at `t_to`.
    pub fn relative_transform(&self, t_to: i64, t_from: i64) -> Result<Transform, GeometryError> {
        let to = self.interpolate_at(t_to)?;
        let from = self.interpolate_at(t_from)?;
        Ok(to.inverse().compose(&from))
    }
}

#[derive(Serialize, Deserialize)]
struct PoseRecord {
    t_us: i64,
    q: [f64; 4],
    p: [f64; 3],
}

/// Reads a JSON-Lines pose stream: one `{"t_us", "q": [w,x,y,z], "p": [x,y,z]}`
/// record per line. Quaternions must be unit within 1e-6.
pub fn read_pose_jsonl<R: BufRead>(reader: R) -> Result<Trajectory, PoseFileError> {
    let mut poses = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: PoseRecord =
            serde_json::from_str(&line).map_err(|source| PoseFileError::Json {
                line: i + 1,
                source,
            })?;
        let q = Quaternion {
            w: rec.q[0],
            x: rec.q[1],
            y: rec.q[2],
            z: rec.q[3],
        };
        let norm = q.norm();
        if (norm - 1.0).abs() > QUAT_NORM_TOL {
            return Err(PoseFileError::QuatNorm { line: i + 1, norm });
        }
        poses.push(TimedPose {
            t_us: rec.t_us,
            pose: Transform::from_quat(&q, rec.p),
        });
    }
    Ok(Trajectory::new(poses)?)
}

pub fn write_pose_jsonl<W: Write>(w: &mut W, traj: &Trajectory) -> Result<(), PoseFileError> {
    for tp in traj.poses() {
        let q = tp.pose.quaternion();
        let rec = PoseRecord {
            t_us: tp.t_us,
            q: [q.w, q.x, q.y, q.z],
            p: tp.pose.translation,
        };
        serde_json::to_writer(&mut *w, &rec).map_err(|source| PoseFileError::Json {
            line: 0,
            source,
        })?;
        writeln!(w)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_rotation(rng: &mut ChaCha8Rng) -> Quaternion {
        // Uniform random unit quaternion (Shoemake).
        let u1: f64 = rng.random();
        let u2: f64 = rng.random::<f64>() * std::f64::consts::TAU;
        let u3: f64 = rng.random::<f64>() * std::f64::consts::TAU;
        let a = (1.0 - u1).sqrt();
        let b = u1.sqrt();
        Quaternion {
            w: a * u2.sin(),
            x: a * u2.cos(),
            y: b * u3.sin(),
            z: b * u3.cos(),
        }
    }

    fn random_transform(rng: &mut ChaCha8Rng) -> Transform {
        let q = random_rotation(rng);
        let t = [
            rng.random::<f64>() * 10.0 - 5.0,
            rng.random::<f64>() * 10.0 - 5.0,
            rng.random::<f64>() * 10.0 - 5.0,
        ];
        Transform::from_quat(&q, t)
    }

    fn max_abs_diff(a: &Transform, b: &Transform) -> f64 {
        let mut m: f64 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                m = m.max((a.rotation[i][j] - b.rotation[i][j]).abs());
            }
            m = m.max((a.translation[i] - b.translation[i]).abs());
        }
        m
    }

    #[test]
    fn compose_identity() {
        let i = Transform::identity();
        assert_eq!(max_abs_diff(&i.compose(&i), &i), 0.0);
    }

    #[test]
    fn compose_with_inverse_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let t = random_transform(&mut rng);
            let d = max_abs_diff(&t.compose(&t.inverse()), &Transform::identity());
            assert!(d < 1e-9, "drift {d}");
        }
    }

    #[test]
    fn long_composition_keeps_unit_determinant() {
        // Re-orthonormalization oracle: 100 random rotations composed in
        // sequence must stay a proper rotation.
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut acc = Transform::identity();
        for _ in 0..100 {
            acc = acc.compose(&random_transform(&mut rng));
        }
        assert!((acc.determinant() - 1.0).abs() < 1e-9);
        assert!(acc.orthonormality_drift() < 1e-9);
    }

    #[test]
    fn invert_identity_and_translation() {
        let i = Transform::identity();
        assert_eq!(max_abs_diff(&i.inverse(), &i), 0.0);
        let t = Transform::from_translation([1.0, 2.0, 3.0]);
        let inv = t.inverse();
        assert_eq!(inv.translation, [-1.0, -2.0, -3.0]);
    }

    #[test]
    fn double_inverse_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let t = random_transform(&mut rng);
            assert!(max_abs_diff(&t.inverse().inverse(), &t) < 1e-12);
        }
    }

    fn straight_trajectory(n: usize, dt_us: i64, speed_mps: f64) -> Trajectory {
        let poses = (0..n)
            .map(|i| TimedPose {
                t_us: i as i64 * dt_us,
                pose: Transform::from_translation([
                    0.0,
                    0.0,
                    speed_mps * (i as i64 * dt_us) as f64 * 1e-6,
                ]),
            })
            .collect();
        Trajectory::new(poses).unwrap()
    }

    #[test]
    fn interpolate_exact_at_knots() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let poses: Vec<TimedPose> = (0..10)
            .map(|i| TimedPose {
                t_us: i * 100_000,
                pose: random_transform(&mut rng),
            })
            .collect();
        let traj = Trajectory::new(poses.clone()).unwrap();
        for tp in &poses {
            let got = traj.interpolate_at(tp.t_us).unwrap();
            assert_eq!(max_abs_diff(&got, &tp.pose), 0.0);
        }
    }

    #[test]
    fn interpolate_midpoint_translation() {
        let traj = Trajectory::new(vec![
            TimedPose {
                t_us: 0,
                pose: Transform::from_translation([0.0, 0.0, 0.0]),
            },
            TimedPose {
                t_us: 1_000_000,
                pose: Transform::from_translation([2.0, 0.0, 0.0]),
            },
        ])
        .unwrap();
        let mid = traj.interpolate_at(500_000).unwrap();
        assert!(max_abs_diff(&mid, &Transform::from_translation([1.0, 0.0, 0.0])) < 1e-12);
    }

    #[test]
    fn interpolate_midpoint_yaw_closed_form() {
        // Closed-form slerp oracle: halfway between yaw 0 and yaw 10 degrees
        // is yaw 5 degrees.
        let yaw10 = 10f64.to_radians();
        let traj = Trajectory::new(vec![
            TimedPose {
                t_us: 0,
                pose: Transform::identity(),
            },
            TimedPose {
                t_us: 1_000_000,
                pose: Transform::from_yaw(yaw10, [0.0, 0.0, 0.0]),
            },
        ])
        .unwrap();
        let mid = traj.interpolate_at(500_000).unwrap();
        let expect = Transform::from_yaw(5f64.to_radians(), [0.0, 0.0, 0.0]);
        assert!(max_abs_diff(&mid, &expect) < 1e-9);
    }

    #[test]
    fn interpolate_out_of_range() {
        let traj = straight_trajectory(3, 100_000, 1.0);
        assert!(matches!(
            traj.interpolate_at(-1),
            Err(GeometryError::OutOfRange { .. })
        ));
        assert!(matches!(
            traj.interpolate_at(200_001),
            Err(GeometryError::OutOfRange { .. })
        ));
    }

    #[test]
    fn interpolation_is_continuous() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let poses: Vec<TimedPose> = (0..6)
            .map(|i| TimedPose {
                t_us: i * 250_000,
                pose: random_transform(&mut rng),
            })
            .collect();
        let traj = Trajectory::new(poses).unwrap();
        for &t in &[1, 124_999, 250_000, 333_333, 1_249_998] {
            let a = traj.interpolate_at(t).unwrap();
            let b = traj.interpolate_at(t + 1).unwrap();
            assert!(max_abs_diff(&a, &b) < 1e-4, "jump at t={t}");
        }
    }

    #[test]
    fn relative_transform_self_is_identity() {
        let traj = straight_trajectory(5, 100_000, 3.0);
        let rel = traj.relative_transform(150_000, 150_000).unwrap();
        assert!(max_abs_diff(&rel, &Transform::identity()) < 1e-12);
    }

    #[test]
    fn relative_transform_chain_property() {
        // Chain rule over random trajectories: rel(a,b) . rel(b,c) = rel(a,c).
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..100 {
            let poses: Vec<TimedPose> = (0..5)
                .map(|i| TimedPose {
                    t_us: i * 100_000,
                    pose: random_transform(&mut rng),
                })
                .collect();
            let traj = Trajectory::new(poses).unwrap();
            let (a, b, c) = (50_000, 170_000, 390_000);
            let direct = traj.relative_transform(a, c).unwrap();
            let chained = traj
                .relative_transform(a, b)
                .unwrap()
                .compose(&traj.relative_transform(b, c).unwrap());
            assert!(max_abs_diff(&direct, &chained) < 1e-9);
        }
    }

    #[test]
    fn relative_transform_constant_velocity() {
        // 10 m/s straight line, 0.1 s apart -> 1.0 m translation.
        let traj = straight_trajectory(20, 50_000, 10.0);
        let rel = traj.relative_transform(500_000, 400_000).unwrap();
        let t = rel.translation;
        let mag = (t[0] * t[0] + t[1] * t[1] + t[2] * t[2]).sqrt();
        assert!((mag - 1.0).abs() < 1e-9);
    }

    #[test]
    fn rotations_stay_orthonormal_through_interpolation() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let poses: Vec<TimedPose> = (0..4)
            .map(|i| TimedPose {
                t_us: i * 100_000,
                pose: random_transform(&mut rng),
            })
            .collect();
        let traj = Trajectory::new(poses).unwrap();
        for k in 0..30 {
            let t = k * 10_000;
            let p = traj.interpolate_at(t).unwrap();
            assert!(p.orthonormality_drift() < 1e-9);
        }
    }

    #[test]
    fn trajectory_rejects_unsorted() {
        let tp = |t_us| TimedPose {
            t_us,
            pose: Transform::identity(),
        };
        assert!(matches!(
            Trajectory::new(vec![tp(10), tp(10)]),
            Err(GeometryError::UnsortedTrajectory { index: 1 })
        ));
        assert!(matches!(
            Trajectory::new(vec![]),
            Err(GeometryError::EmptyTrajectory)
        ));
    }

    #[test]
    fn pose_jsonl_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let poses: Vec<TimedPose> = (0..5)
            .map(|i| TimedPose {
                t_us: i * 62_500,
                pose: random_transform(&mut rng),
            })
            .collect();
        let traj = Trajectory::new(poses).unwrap();
        let mut buf = Vec::new();
        write_pose_jsonl(&mut buf, &traj).unwrap();
        let back = read_pose_jsonl(&buf[..]).unwrap();
        assert_eq!(back.poses().len(), traj.poses().len());
        for (a, b) in back.poses().iter().zip(traj.poses()) {
            assert_eq!(a.t_us, b.t_us);
            assert!(max_abs_diff(&a.pose, &b.pose) < 1e-9);
        }
    }

    #[test]
    fn pose_jsonl_rejects_bad_quaternion() {
        let line = r#"{"t_us": 0, "q": [1.0, 0.1, 0.0, 0.0], "p": [0.0, 0.0, 0.0]}"#;
        match read_pose_jsonl(line.as_bytes()) {
            Err(PoseFileError::QuatNorm { line: 1, .. }) => {}
            other => panic!("expected QuatNorm error, got {other:?}"),
        }
    }

    #[test]
    fn ground_motion_roundtrip() {
        let m = GroundMotion {
            yaw: 0.3,
            tx: 1.5,
            tz: -2.0,
        };
        let (x, z) = m.apply(2.0, 3.0);
        let (bx, bz) = m.inverse().apply(x, z);
        assert!((bx - 2.0).abs() < 1e-12 && (bz - 3.0).abs() < 1e-12);
    }
}
