//! On-disk sequence layout and loading helpers.
//!
//! A sequence directory holds:
//!   scene.json                     - simulator scene description
//!   meta.json                      - frame timestamps, grid, rates
//!   poses.jsonl                    - pose stream (odometry stand-in)
//!   scans/NNNN.lcrb                - binary scans
//!   labels/NNNN.curb.pgm           - full curb labels
//!   labels/NNNN.visible.pgm        - visible partition
//!   labels/NNNN.occluded.pgm       - occluded partition
//!   bev/NNNN.f32 (+ .json sidecar) - integrated BEV images (build-bev)

use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use curb_core::bev::{read_bev, read_pgm, write_pgm, CurbMask};
use curb_core::geometry::{read_pose_jsonl, Trajectory};
use curb_core::grid::GridSpec;
use curb_core::pointcloud::{read_scan, LidarScan};

use crate::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SequenceMeta {
    pub n_frames: usize,
    pub timestamps_us: Vec<i64>,
    pub grid: GridSpec,
    pub label_thickness_px: usize,
    pub speed_mps: f64,
    pub scan_rate_hz: f64,
    pub pose_rate_hz: f64,
    pub seed: u64,
}

pub fn frame_name(i: usize) -> String {
    format!("{i:04}")
}

pub fn read_meta(dir: &Path) -> Result<SequenceMeta, CliError> {
    let path = dir.join("meta.json");
    let text = fs::read_to_string(&path)
        .map_err(|e| CliError::MissingInput(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

pub fn read_trajectory(dir: &Path) -> Result<Trajectory, CliError> {
    let path = dir.join("poses.jsonl");
    let file = fs::File::open(&path)
        .map_err(|e| CliError::MissingInput(format!("{}: {e}", path.display())))?;
    read_pose_jsonl(BufReader::new(file))
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

pub fn read_scan_file(path: &Path) -> Result<LidarScan, CliError> {
    let mut file = fs::File::open(path)
        .map_err(|e| CliError::MissingInput(format!("{}: {e}", path.display())))?;
    read_scan(&mut file).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

pub fn read_mask_file(path: &Path, resolution: f64) -> Result<CurbMask, CliError> {
    let file = fs::File::open(path)
        .map_err(|e| CliError::MissingInput(format!("{}: {e}", path.display())))?;
    read_pgm(&mut BufReader::new(file), resolution)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

pub fn write_mask_file(path: &Path, mask: &CurbMask) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)
            .map_err(|e| CliError::Config(format!("{}: {e}", parent.display())))?;
    }
    let mut file = fs::File::create(path)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    write_pgm(&mut file, mask).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

/// Sequence directories under a dataset root: the root itself when it holds
/// meta.json directly, otherwise every child directory that does (sorted by
/// name for determinism).
pub fn sequence_dirs(root: &Path) -> Result<Vec<PathBuf>, CliError> {
    if root.join("meta.json").is_file() {
        return Ok(vec![root.to_path_buf()]);
    }
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)
        .map_err(|e| CliError::MissingInput(format!("{}: {e}", root.display())))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.is_dir() && p.join("meta.json").is_file())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(CliError::MissingInput(format!(
            "{}: no sequence directories (meta.json) found",
            root.display()
        )));
    }
    Ok(dirs)
}

/// One training/eval frame loaded from disk.
#[derive(Debug, Clone)]
pub struct LoadedFrame {
    pub bev: curb_core::bev::BevImage,
    pub curb: CurbMask,
    pub visible: CurbMask,
    pub occluded: CurbMask,
}

/// Loads all frames of a sequence that have both BEV artifacts and labels.
pub fn load_frames(dir: &Path) -> Result<Vec<LoadedFrame>, CliError> {
    let meta = read_meta(dir)?;
    let mut frames = Vec::new();
    for i in 0..meta.n_frames {
        let name = frame_name(i);
        let bev_path = dir.join("bev").join(format!("{name}.f32"));
        if !bev_path.is_file() {
            continue;
        }
        let bev = read_bev(&bev_path)
            .map_err(|e| CliError::Config(format!("{}: {e}", bev_path.display())))?;
        let res = meta.grid.resolution;
        let curb = read_mask_file(&dir.join("labels").join(format!("{name}.curb.pgm")), res)?;
        let visible =
            read_mask_file(&dir.join("labels").join(format!("{name}.visible.pgm")), res)?;
        let occluded =
            read_mask_file(&dir.join("labels").join(format!("{name}.occluded.pgm")), res)?;
        frames.push(LoadedFrame {
            bev,
            curb,
            visible,
            occluded,
        });
    }
    if frames.is_empty() {
        return Err(CliError::MissingInput(format!(
            "{}: no frames with both bev/ and labels/ artifacts (run build-bev first)",
            dir.display()
        )));
    }
    Ok(frames)
}

/// Sorted PGM mask files in a directory, optionally filtered by a suffix
/// such as ".curb.pgm".
pub fn mask_files(dir: &Path, suffix: Option<&str>) -> Result<Vec<PathBuf>, CliError> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| CliError::MissingInput(format!("{}: {e}", dir.display())))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| {
            let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
            match suffix {
                Some(s) => name.ends_with(s),
                None => name.ends_with(".pgm"),
            }
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(CliError::MissingInput(format!(
            "{}: no matching .pgm masks",
            dir.display()
        )));
    }
    Ok(files)
}
