//! Pipeline configuration: one JSON document covering every stage. Unknown
//! keys are rejected so typos fail loudly; defaults follow the reference
//! parameter set (trim 3.55/24/48 m, filter threshold 0.7 over 3 frames,
//! 3 anchor scales with 4 orientations).

use std::path::Path;

use serde::{Deserialize, Serialize};

use curb_core::anchor::AnchorSpec;
use curb_core::grid::GridSpec;
use curb_core::nn::LossConfig;
use curb_core::pointcloud::TrimConfig;
use curb_core::postprocess::PostprocessConfig;
use curb_core::synth::BeamConfig;

use crate::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub trim: TrimConfig,
    pub grid: GridSpec,
    pub anchors: AnchorSpec,
    pub loss: LossConfig,
    pub postprocess: PostprocessConfig,
    pub beams: BeamConfig,
    /// Scans integrated per frame (the window ends at the frame itself).
    pub integration_window: usize,
    /// Presence threshold when decoding predicted anchor grids.
    pub decode_threshold: f32,
    /// Height band (relative to the sensor) for obstacle-mask extraction.
    pub obstacle_band: (f64, f64),
    /// Thickness of rasterized ground-truth curb polylines.
    pub label_thickness_px: usize,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            trim: TrimConfig::default(),
            grid: GridSpec::default(),
            anchors: AnchorSpec::default(),
            loss: LossConfig::default(),
            postprocess: PostprocessConfig::default(),
            beams: BeamConfig::default(),
            integration_window: 5,
            decode_threshold: 0.5,
            obstacle_band: (-1.7, -0.5),
            label_thickness_px: 2,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    /// The desk-scale grid used by the synthetic training demo: 16 x 32 m
    /// at 0.1 m/px. Trim bounds match the raster so integration feeds it
    /// exactly.
    pub fn desk_scale() -> PipelineConfig {
        let grid = GridSpec::new(160, 320, 0.1);
        PipelineConfig {
            trim: TrimConfig {
                max_below: 3.55,
                max_x_abs: grid.x_span() / 2.0,
                max_z_abs: grid.z_span() / 2.0,
            },
            grid,
            ..PipelineConfig::default()
        }
    }

    pub fn load(path: &Path) -> Result<PipelineConfig, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::MissingInput(format!("config {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("config {}: {e}", path.display())))
    }

    pub fn save(&self, path: &Path) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(self).expect("config serializes");
        std::fs::write(path, text)
            .map_err(|e| CliError::Config(format!("writing config {}: {e}", path.display())))
    }

    /// Load from an optional path, falling back to the desk-scale defaults.
    pub fn load_or_default(path: Option<&Path>) -> Result<PipelineConfig, CliError> {
        match path {
            Some(p) => Self::load(p),
            None => Ok(Self::desk_scale()),
        }
    }
}
