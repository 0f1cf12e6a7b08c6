//! Scan representation, pointcloud trimming, and multi-scan integration
//! into a common sensor frame.
//!
//! Axis convention used across the crate: x lateral (right positive),
//! y vertical (up positive, sensor at y = 0), z longitudinal (forward
//! positive). Distances are metres, intensities unitless in [0, 1].

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{GeometryError, Trajectory};

const SCAN_MAGIC: &[u8; 4] = b"LCRB";
const SCAN_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ScanFileError {
    #[error("scan file i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad scan magic {0:?}, expected \"LCRB\"")]
    BadMagic([u8; 4]),
    #[error("unsupported scan version {0}, expected 1")]
    BadVersion(u32),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LidarPoint {
    pub x: f32,
    pub y: f32,
    pub z: f32,
    pub intensity: f32,
}

impl LidarPoint {
    pub fn new(x: f32, y: f32, z: f32, intensity: f32) -> LidarPoint {
        LidarPoint { x, y, z, intensity }
    }
}

/// One revolution of the sensor, points in the sensor frame.
#[derive(Debug, Clone)]
pub struct LidarScan {
    pub timestamp_us: i64,
    pub points: Vec<LidarPoint>,
}

impl LidarScan {
    pub fn new(timestamp_us: i64, points: Vec<LidarPoint>) -> LidarScan {
        LidarScan {
            timestamp_us,
            points,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Keep-region bounds for `trim_scan`. All comparisons are inclusive.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrimConfig {
    /// Maximum depth below the sensor, metres.
    pub max_below: f64,
    /// Lateral half-extent, metres.
    pub max_x_abs: f64,
    /// Longitudinal half-extent, metres.
    pub max_z_abs: f64,
}

impl Default for TrimConfig {
    fn default() -> Self {
        TrimConfig {
            max_below: 3.55,
            max_x_abs: 24.0,
            max_z_abs: 48.0,
        }
    }
}

/// Removes points above the sensor, deeper than `max_below` underneath it
/// (likely under-road reflections), or outside the lateral/longitudinal
/// bounds. Point order is preserved; the result may be empty.
pub fn trim_scan(scan: &LidarScan, cfg: &TrimConfig) -> LidarScan {
    let points = scan
        .points
        .iter()
        .filter(|p| {
            let y = p.y as f64;
            y <= 0.0
                && y >= -cfg.max_below
                && (p.x as f64).abs() <= cfg.max_x_abs
                && (p.z as f64).abs() <= cfg.max_z_abs
        })
        .copied()
        .collect();
    LidarScan::new(scan.timestamp_us, points)
}

/// Maps every scan into the sensor frame at `reference_t_us` using poses
/// interpolated from `traj`, and concatenates the results. Point count and
/// intensities are preserved exactly.
pub fn integrate_scans(
    scans: &[LidarScan],
    traj: &Trajectory,
    reference_t_us: i64,
) -> Result<LidarScan, GeometryError> {
    let total: usize = scans.iter().map(|s| s.points.len()).sum();
    let mut points = Vec::with_capacity(total);
    for scan in scans {
        let rel = traj.relative_transform(reference_t_us, scan.timestamp_us)?;
        for p in &scan.points {
            let q = rel.apply([p.x as f64, p.y as f64, p.z as f64]);
            points.push(LidarPoint {
                x: q[0] as f32,
                y: q[1] as f32,
                z: q[2] as f32,
                intensity: p.intensity,
            });
        }
    }
    Ok(LidarScan::new(reference_t_us, points))
}

/// Binary scan format: magic "LCRB", u32 version, u64 timestamp (us),
/// u32 point count, then x/y/z/intensity as little-endian f32 per point.
pub fn write_scan<W: Write>(w: &mut W, scan: &LidarScan) -> Result<(), ScanFileError> {
    w.write_all(SCAN_MAGIC)?;
    w.write_all(&SCAN_VERSION.to_le_bytes())?;
    w.write_all(&(scan.timestamp_us as u64).to_le_bytes())?;
    w.write_all(&(scan.points.len() as u32).to_le_bytes())?;
    for p in &scan.points {
        w.write_all(&p.x.to_le_bytes())?;
        w.write_all(&p.y.to_le_bytes())?;
        w.write_all(&p.z.to_le_bytes())?;
        w.write_all(&p.intensity.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_scan<R: Read>(r: &mut R) -> Result<LidarScan, ScanFileError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != SCAN_MAGIC {
        return Err(ScanFileError::BadMagic(magic));
    }
    let mut buf4 = [0u8; 4];
    r.read_exact(&mut buf4)?;
    let version = u32::from_le_bytes(buf4);
    if version != SCAN_VERSION {
        return Err(ScanFileError::BadVersion(version));
    }
    let mut buf8 = [0u8; 8];
    r.read_exact(&mut buf8)?;
    let timestamp_us = u64::from_le_bytes(buf8) as i64;
    r.read_exact(&mut buf4)?;
    let count = u32::from_le_bytes(buf4) as usize;
    let mut points = Vec::with_capacity(count);
    for _ in 0..count {
        let mut fields = [0f32; 4];
        for f in &mut fields {
            r.read_exact(&mut buf4)?;
            *f = f32::from_le_bytes(buf4);
        }
        points.push(LidarPoint {
            x: fields[0],
            y: fields[1],
            z: fields[2],
            intensity: fields[3],
        });
    }
    Ok(LidarScan::new(timestamp_us, points))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{TimedPose, Transform};
    use proptest::prelude::*;

    fn scan_of(points: Vec<LidarPoint>) -> LidarScan {
        LidarScan::new(0, points)
    }

    #[test]
    fn trim_removes_points_above_sensor() {
        let s = scan_of(vec![
            LidarPoint::new(0.0, 0.5, 5.0, 0.1),
            LidarPoint::new(0.0, 0.0, 5.0, 0.2),
            LidarPoint::new(0.0, -1.0, 5.0, 0.3),
        ]);
        let t = trim_scan(&s, &TrimConfig::default());
        assert_eq!(t.len(), 2);
        assert!(t.points.iter().all(|p| p.y <= 0.0));
    }

    #[test]
    fn trim_depth_boundary_is_inclusive() {
        let s = scan_of(vec![
            LidarPoint::new(0.0, -3.56, 5.0, 0.1),
            LidarPoint::new(0.0, -3.55, 5.0, 0.2),
        ]);
        let t = trim_scan(&s, &TrimConfig::default());
        assert_eq!(t.len(), 1);
        assert_eq!(t.points[0].y, -3.55);
    }

    #[test]
    fn trim_lateral_boundary_is_inclusive() {
        let s = scan_of(vec![
            LidarPoint::new(25.0, -1.0, 5.0, 0.1),
            LidarPoint::new(24.0, -1.0, 5.0, 0.2),
            LidarPoint::new(0.0, -1.0, 48.0, 0.3),
            LidarPoint::new(0.0, -1.0, 48.1, 0.4),
        ]);
        let t = trim_scan(&s, &TrimConfig::default());
        assert_eq!(t.len(), 2);
        assert_eq!(t.points[0].x, 24.0);
        assert_eq!(t.points[1].z, 48.0);
    }

    #[test]
    fn integrate_single_scan_at_own_timestamp_is_unchanged() {
        let traj = Trajectory::new(vec![
            TimedPose {
                t_us: 0,
                pose: Transform::identity(),
            },
            TimedPose {
                t_us: 1_000_000,
                pose: Transform::from_translation([0.0, 0.0, 10.0]),
            },
        ])
        .unwrap();
        let scan = LidarScan::new(500_000, vec![LidarPoint::new(1.0, -1.0, 2.0, 0.7)]);
        let out = integrate_scans(std::slice::from_ref(&scan), &traj, 500_000).unwrap();
        assert_eq!(out.timestamp_us, 500_000);
        assert_eq!(out.len(), 1);
        let p = out.points[0];
        assert!((p.x - 1.0).abs() < 1e-6 && (p.y + 1.0).abs() < 1e-6 && (p.z - 2.0).abs() < 1e-6);
        assert_eq!(p.intensity, 0.7);
    }

    #[test]
    fn integrate_stationary_is_concatenation() {
        let traj = Trajectory::new(
            (0..6)
                .map(|i| TimedPose {
                    t_us: i * 100_000,
                    pose: Transform::identity(),
                })
                .collect(),
        )
        .unwrap();
        let scans: Vec<LidarScan> = (0..5)
            .map(|i| {
                LidarScan::new(
                    i as i64 * 100_000,
                    vec![LidarPoint::new(i as f32, -1.0, 0.0, 0.5)],
                )
            })
            .collect();
        let out = integrate_scans(&scans, &traj, 400_000).unwrap();
        assert_eq!(out.len(), 5);
        for (i, p) in out.points.iter().enumerate() {
            assert!((p.x - i as f32).abs() < 1e-6);
        }
    }

    #[test]
    fn integrate_compensates_forward_motion() {
        // Vehicle advances 1 m between scans; a wall point static in the
        // world appears 1 m closer in the second scan. After integration
        // into the later frame both copies must coincide.
        let traj = Trajectory::new(vec![
            TimedPose {
                t_us: 0,
                pose: Transform::identity(),
            },
            TimedPose {
                t_us: 100_000,
                pose: Transform::from_translation([0.0, 0.0, 1.0]),
            },
        ])
        .unwrap();
        let wall_world_z = 10.0f32;
        let s0 = LidarScan::new(0, vec![LidarPoint::new(0.0, -1.0, wall_world_z, 0.5)]);
        let s1 = LidarScan::new(
            100_000,
            vec![LidarPoint::new(0.0, -1.0, wall_world_z - 1.0, 0.5)],
        );
        let out = integrate_scans(&[s0, s1], &traj, 100_000).unwrap();
        assert_eq!(out.len(), 2);
        let a = out.points[0];
        let b = out.points[1];
        assert!((a.x - b.x).abs() < 1e-5);
        assert!((a.y - b.y).abs() < 1e-5);
        assert!((a.z - b.z).abs() < 1e-5);
        assert!((a.z - 9.0).abs() < 1e-5);
    }

    #[test]
    fn integrate_out_of_span_propagates() {
        let traj = Trajectory::new(vec![
            TimedPose {
                t_us: 0,
                pose: Transform::identity(),
            },
            TimedPose {
                t_us: 100,
                pose: Transform::identity(),
            },
        ])
        .unwrap();
        let scan = LidarScan::new(500, vec![LidarPoint::new(0.0, -1.0, 0.0, 0.0)]);
        assert!(integrate_scans(&[scan], &traj, 50).is_err());
    }

    #[test]
    fn scan_io_roundtrip() {
        let scan = LidarScan::new(
            123_456_789,
            vec![
                LidarPoint::new(1.5, -2.25, 3.125, 0.5),
                LidarPoint::new(-4.0, -0.5, 10.0, 1.0),
            ],
        );
        let mut buf = Vec::new();
        write_scan(&mut buf, &scan).unwrap();
        let back = read_scan(&mut buf.as_slice()).unwrap();
        assert_eq!(back.timestamp_us, scan.timestamp_us);
        assert_eq!(back.points, scan.points);
    }

    #[test]
    fn scan_io_rejects_bad_magic_and_version() {
        let scan = LidarScan::new(0, vec![]);
        let mut buf = Vec::new();
        write_scan(&mut buf, &scan).unwrap();
        let mut broken = buf.clone();
        broken[0] = b'X';
        assert!(matches!(
            read_scan(&mut broken.as_slice()),
            Err(ScanFileError::BadMagic(_))
        ));
        let mut wrong_ver = buf;
        wrong_ver[4] = 9;
        assert!(matches!(
            read_scan(&mut wrong_ver.as_slice()),
            Err(ScanFileError::BadVersion(9))
        ));
    }

    proptest! {
        #[test]
        fn trim_is_idempotent_and_subset(
            pts in proptest::collection::vec(
                (-30.0f32..30.0, -5.0f32..2.0, -60.0f32..60.0, 0.0f32..1.0),
                0..200,
            )
        ) {
            let scan = scan_of(pts.iter().map(|&(x, y, z, i)| LidarPoint::new(x, y, z, i)).collect());
            let cfg = TrimConfig::default();
            let once = trim_scan(&scan, &cfg);
            let twice = trim_scan(&once, &cfg);
            prop_assert_eq!(once.points.clone(), twice.points);
            // Subset with order preserved.
            let mut it = scan.points.iter();
            for kept in &once.points {
                prop_assert!(it.any(|p| p == kept));
            }
        }
    }
}
