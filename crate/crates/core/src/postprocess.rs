//! Temporal consolidation of per-frame curb masks: a 3-frame overlap
//! filter removes transient noise, then a 3-frame union tracker fills the
//! gaps it leaves. Masks from older frames are warped into the newest frame
//! through the pose trajectory before both steps.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::bev::{dilate, warp_mask, CurbMask};
use crate::geometry::{GeometryError, Trajectory};

/// Frames per window (both steps use the same span).
pub const WINDOW: usize = 3;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PostprocessConfig {
    /// Probability threshold a pixel must exceed to count as detected.
    pub prob_threshold: f32,
    /// Dilation radius applied to each thresholded mask before counting.
    pub dilation_radius_px: usize,
}

impl Default for PostprocessConfig {
    fn default() -> Self {
        PostprocessConfig {
            prob_threshold: 0.7,
            dilation_radius_px: 1,
        }
    }
}

/// One network output with its timestamp (vehicle pose comes from the
/// session trajectory).
#[derive(Debug, Clone)]
pub struct FrameRecord {
    pub t_us: i64,
    pub prob_mask: CurbMask,
}

/// Overlap filter: dilate each frame's super-threshold support, warp the
/// two older frames onto the newest, and keep pixels present in all three.
/// With fewer than three frames the newest thresholded mask passes through
/// unchanged (warm-up).
pub fn filter_frames(
    history: &[FrameRecord],
    traj: &Trajectory,
    cfg: &PostprocessConfig,
) -> Result<CurbMask, GeometryError> {
    assert!(!history.is_empty() && history.len() <= WINDOW);
    let newest = &history[history.len() - 1];
    if history.len() < WINDOW {
        return Ok(newest.prob_mask.threshold(cfg.prob_threshold));
    }
    let mut count = vec![0u8; newest.prob_mask.spec.len()];
    for rec in history {
        let binary = dilate(
            &rec.prob_mask.threshold(cfg.prob_threshold),
            cfg.dilation_radius_px,
        );
        let aligned = if rec.t_us == newest.t_us {
            binary
        } else {
            let rel = traj.relative_transform(newest.t_us, rec.t_us)?;
            warp_mask(&binary, &rel)
        };
        for (c, &v) in count.iter_mut().zip(&aligned.data) {
            if v > 0.0 {
                *c += 1;
            }
        }
    }
    let mut out = CurbMask::zeros(newest.prob_mask.spec);
    for (o, &c) in out.data.iter_mut().zip(&count) {
        if c as usize == WINDOW {
            *o = 1.0;
        }
    }
    Ok(out)
}

/// Union tracker over the filtered masks: warp the older filtered outputs
/// onto the newest frame and take the pixelwise union.
pub fn track_frames(
    filtered: &[(i64, CurbMask)],
    traj: &Trajectory,
) -> Result<CurbMask, GeometryError> {
    assert!(!filtered.is_empty() && filtered.len() <= WINDOW);
    let (t_newest, newest) = &filtered[filtered.len() - 1];
    let mut out = newest.clone();
    for (t, mask) in &filtered[..filtered.len() - 1] {
        let rel = traj.relative_transform(*t_newest, *t)?;
        out = out.union(&warp_mask(mask, &rel));
    }
    Ok(out)
}

/// Per-session sliding-window state: feed frames in time order, get the
/// filtered (upsilon) and tracked (psi) masks back.
#[derive(Debug)]
pub struct Session {
    cfg: PostprocessConfig,
    raw: VecDeque<FrameRecord>,
    filtered: VecDeque<(i64, CurbMask)>,
}

impl Session {
    pub fn new(cfg: PostprocessConfig) -> Session {
        Session {
            cfg,
            raw: VecDeque::new(),
            filtered: VecDeque::new(),
        }
    }

    /// Pushes a frame and returns (filtered, tracked) for it.
    pub fn push(
        &mut self,
        t_us: i64,
        prob_mask: CurbMask,
        traj: &Trajectory,
    ) -> Result<(CurbMask, CurbMask), GeometryError> {
        self.raw.push_back(FrameRecord { t_us, prob_mask });
        if self.raw.len() > WINDOW {
            self.raw.pop_front();
        }
        let history: Vec<FrameRecord> = self.raw.iter().cloned().collect();
        let upsilon = filter_frames(&history, traj, &self.cfg)?;
        self.filtered.push_back((t_us, upsilon.clone()));
        if self.filtered.len() > WINDOW {
            self.filtered.pop_front();
        }
        let window: Vec<(i64, CurbMask)> = self.filtered.iter().cloned().collect();
        let psi = track_frames(&window, traj)?;
        Ok((upsilon, psi))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{TimedPose, Transform};
    use crate::grid::GridSpec;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn spec() -> GridSpec {
        GridSpec::new(48, 48, 0.1)
    }

    fn static_trajectory() -> Trajectory {
        Trajectory::new(
            (0..10)
                .map(|i| TimedPose {
                    t_us: i * 100_000,
                    pose: Transform::identity(),
                })
                .collect(),
        )
        .unwrap()
    }

    fn line_mask(p: f32) -> CurbMask {
        let mut m = CurbMask::zeros(spec());
        for r in 4..44 {
            m.set(r, 20, p);
        }
        m
    }

    #[test]
    fn static_identical_masks_give_dilated_threshold() {
        let traj = static_trajectory();
        let cfg = PostprocessConfig::default();
        let history: Vec<FrameRecord> = (0..3)
            .map(|i| FrameRecord {
                t_us: i * 100_000,
                prob_mask: line_mask(0.9),
            })
            .collect();
        let out = filter_frames(&history, &traj, &cfg).unwrap();
        let expect = dilate(&line_mask(0.9).threshold(0.7), 1);
        assert_eq!(out.data, expect.data);
    }

    #[test]
    fn sub_threshold_probabilities_are_ignored() {
        let traj = static_trajectory();
        let cfg = PostprocessConfig::default();
        let history: Vec<FrameRecord> = (0..3)
            .map(|i| FrameRecord {
                t_us: i * 100_000,
                prob_mask: line_mask(0.5),
            })
            .collect();
        let out = filter_frames(&history, &traj, &cfg).unwrap();
        assert_eq!(out.count_nonzero(), 0);
    }

    #[test]
    fn transient_blob_is_removed() {
        let traj = static_trajectory();
        let cfg = PostprocessConfig::default();
        let mut noisy = line_mask(0.9);
        for r in 10..14 {
            for c in 30..34 {
                noisy.set(r, c, 0.95);
            }
        }
        let history = vec![
            FrameRecord {
                t_us: 0,
                prob_mask: line_mask(0.9),
            },
            FrameRecord {
                t_us: 100_000,
                prob_mask: noisy,
            },
            FrameRecord {
                t_us: 200_000,
                prob_mask: line_mask(0.9),
            },
        ];
        let out = filter_frames(&history, &traj, &cfg).unwrap();
        for r in 10..14 {
            for c in 30..34 {
                assert_eq!(out.get(r, c), 0.0, "blob survived at ({r},{c})");
            }
        }
        // The persistent line survives.
        assert!(out.get(20, 20) > 0.0);
    }

    #[test]
    fn warm_up_passes_thresholded_mask_through() {
        let traj = static_trajectory();
        let cfg = PostprocessConfig::default();
        let history = vec![FrameRecord {
            t_us: 0,
            prob_mask: line_mask(0.9),
        }];
        let out = filter_frames(&history, &traj, &cfg).unwrap();
        assert_eq!(out.data, line_mask(0.9).threshold(0.7).data);
    }

    #[test]
    fn track_is_idempotent_on_identical_masks() {
        let traj = static_trajectory();
        let m = line_mask(1.0).threshold(0.5);
        let window = vec![(0, m.clone()), (100_000, m.clone()), (200_000, m.clone())];
        let out = track_frames(&window, &traj).unwrap();
        assert_eq!(out.data, m.data);
    }

    #[test]
    fn track_fills_gaps_and_is_superset_of_newest() {
        let traj = static_trajectory();
        let full = line_mask(1.0).threshold(0.5);
        let mut gappy = full.clone();
        for r in 20..25 {
            gappy.set(r, 20, 0.0);
        }
        let window = vec![
            (0, full.clone()),
            (100_000, gappy.clone()),
            (200_000, gappy.clone()),
        ];
        let out = track_frames(&window, &traj).unwrap();
        for r in 20..25 {
            assert_eq!(out.get(r, 20), 1.0, "gap not filled at row {r}");
        }
        for i in 0..out.data.len() {
            assert!(out.data[i] >= gappy.data[i]);
        }
    }

    #[test]
    fn session_fixed_point_under_identity_motion() {
        let traj = static_trajectory();
        let mut session = Session::new(PostprocessConfig::default());
        let mut last = None;
        for i in 0..5 {
            last = Some(session.push(i * 100_000, line_mask(0.9), &traj).unwrap());
        }
        let (upsilon, psi) = last.unwrap();
        let expect = dilate(&line_mask(0.9).threshold(0.7), 1);
        assert_eq!(upsilon.data, expect.data);
        assert_eq!(psi.data, expect.data);
    }

    #[test]
    fn filter_removes_noise_and_keeps_signal_under_motion() {
        // Straight-line motion, persistent curb line in world coordinates,
        // fresh random blobs per frame: the filter must remove most noise
        // and keep most of the persistent structure.
        let speed = 5.0; // m/s
        let traj = Trajectory::new(
            (0..10)
                .map(|i| TimedPose {
                    t_us: i * 100_000,
                    pose: Transform::from_translation([
                        0.0,
                        0.0,
                        speed * (i as f64 * 100_000.0) * 1e-6,
                    ]),
                })
                .collect(),
        )
        .unwrap();
        let spec = spec();
        let cfg = PostprocessConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(61);
        // World-space curb at x = -0.8 m spanning a long z range.
        let world_mask = |t_us: i64| -> CurbMask {
            let mut m = CurbMask::zeros(spec);
            let vehicle_z = speed * t_us as f64 * 1e-6;
            for r in 0..spec.height {
                let (_, z) = spec.metre_of(r, 0);
                let _world_z = z + vehicle_z;
                let (x_m, _) = (-0.8, 0.0);
                if let Some((rr, cc)) = spec.pixel_of(x_m, z) {
                    let _ = rr;
                    m.set(r, cc, 0.9);
                }
            }
            m
        };
        let mut session = Session::new(cfg);
        let mut noise_total = 0usize;
        let mut noise_kept = 0usize;
        let mut signal_total = 0usize;
        let mut signal_kept = 0usize;
        for i in 0..8 {
            let t_us = i * 100_000;
            let mut mask = world_mask(t_us);
            let mut noise_px = Vec::new();
            for _ in 0..20 {
                let r = rng.random_range(2..spec.height - 2);
                let c = rng.random_range(2..spec.width - 2);
                if mask.get(r, c) == 0.0 {
                    mask.set(r, c, 0.95);
                    noise_px.push((r, c));
                }
            }
            let (upsilon, _psi) = session.push(t_us, mask.clone(), &traj).unwrap();
            if i >= 2 {
                for &(r, c) in &noise_px {
                    noise_total += 1;
                    if upsilon.get(r, c) > 0.0 {
                        noise_kept += 1;
                    }
                }
                // The vehicle advances 5 px per frame, so the trailing 10
                // rows cannot have 3-frame support; stay clear of them.
                let clean = world_mask(t_us);
                for r in 12..spec.height - 12 {
                    for c in 0..spec.width {
                        if clean.get(r, c) > 0.0 {
                            signal_total += 1;
                            if upsilon.get(r, c) > 0.0 {
                                signal_kept += 1;
                            }
                        }
                    }
                }
            }
        }
        assert!(noise_total > 50);
        let noise_frac = noise_kept as f64 / noise_total as f64;
        let signal_frac = signal_kept as f64 / signal_total as f64;
        assert!(noise_frac <= 0.10, "noise kept {noise_frac}");
        assert!(signal_frac >= 0.95, "signal kept {signal_frac}");
    }
}
