//! Per-frame inference: trim, integrate, rasterize, run both networks,
//! decode, combine, and feed the temporal post-processor.

use curb_core::anchor::decode_grids;
use curb_core::bev::{rasterize_cloud, BevImage, CurbMask};
use curb_core::eval::{counts_to_prf, match_counts, MatchCounts};
use curb_core::geometry::Trajectory;
use curb_core::nn::{OccludedNet, VisibleNet};
use curb_core::pointcloud::{integrate_scans, trim_scan, LidarScan};
use curb_core::postprocess::Session;

use crate::config::PipelineConfig;
use crate::CliError;

pub struct Models {
    pub visible: VisibleNet<f32>,
    pub occluded: OccludedNet<f32>,
}

/// Everything one frame produces on its way through the pipeline.
#[derive(Debug, Clone)]
pub struct FrameOutput {
    pub bev: BevImage,
    pub visible_prob: CurbMask,
    pub occluded_decoded: CurbMask,
    /// Pixelwise max of the visible probabilities and the decoded occluded
    /// lines, before post-processing.
    pub combined: CurbMask,
    pub filtered: CurbMask,
    pub tracked: CurbMask,
}

/// Trims each scan in its own frame, integrates the window into the
/// reference frame, and rasterizes.
pub fn build_frame_bev(
    scans: &[LidarScan],
    traj: &Trajectory,
    reference_t_us: i64,
    cfg: &PipelineConfig,
) -> Result<BevImage, CliError> {
    let trimmed: Vec<LidarScan> = scans.iter().map(|s| trim_scan(s, &cfg.trim)).collect();
    let cloud = integrate_scans(&trimmed, traj, reference_t_us)?;
    Ok(rasterize_cloud(&cloud, cfg.grid, cfg.trim.max_below))
}

/// Stateful session: owns the post-processing ring buffers.
pub struct InferSession {
    session: Session,
}

impl InferSession {
    pub fn new(cfg: &PipelineConfig) -> InferSession {
        InferSession {
            session: Session::new(cfg.postprocess),
        }
    }

    /// Runs the full frame pipeline on a scan window ending at the frame.
    pub fn infer_frame(
        &mut self,
        models: &Models,
        scans: &[LidarScan],
        traj: &Trajectory,
        reference_t_us: i64,
        cfg: &PipelineConfig,
    ) -> Result<FrameOutput, CliError> {
        let bev = build_frame_bev(scans, traj, reference_t_us, cfg)?;
        let visible_prob = models.visible.forward_visible(&bev)?;
        let visible_bin = visible_prob.threshold(0.5);
        let grids = models.occluded.forward_occluded(&bev, &visible_bin)?;
        let occluded_decoded = decode_grids(&grids, cfg.grid, cfg.decode_threshold);
        let combined = visible_prob.union(&occluded_decoded);
        let (filtered, tracked) = self
            .session
            .push(reference_t_us, combined.clone(), traj)?;
        Ok(FrameOutput {
            bev,
            visible_prob,
            occluded_decoded,
            combined,
            filtered,
            tracked,
        })
    }
}

/// Micro-averaged tolerance P/R/F1 of binary prediction masks against
/// ground truth masks.
pub fn micro_prf(
    pairs: &[(CurbMask, CurbMask)],
    tol_px: usize,
) -> Result<(f64, f64, f64), CliError> {
    let mut counts = MatchCounts::default();
    for (pred, gt) in pairs {
        counts.add(
            &match_counts(pred, gt, tol_px)
                .map_err(|e| CliError::Config(e.to_string()))?,
        );
    }
    Ok(counts_to_prf(&counts))
}
