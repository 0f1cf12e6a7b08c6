//! Subcommand implementations. Every command reads and writes only the
//! documented file formats and is byte-deterministic for fixed inputs.

use std::fs;
use std::path::{Path, PathBuf};

use curb_core::anchor::{encode_mask, write_grid_set};
use curb_core::bev::{read_bev, write_bev};
use curb_core::eval::aggregate_report;
use curb_core::geometry::write_pose_jsonl;
use curb_core::nn::checkpoint::{load_occluded, load_visible, save_occluded, save_visible};
use curb_core::nn::TrainConfig;
use curb_core::pointcloud::write_scan;
use curb_core::postprocess::Session;
use curb_core::synth::{generate_scene, generate_sequence, SequenceConfig};
use curb_core::visibility::{obstacle_mask, partition_labels};

use crate::config::PipelineConfig;
use crate::dataset::{
    frame_name, load_frames, mask_files, read_mask_file, read_meta, read_scan_file,
    read_trajectory, sequence_dirs, SequenceMeta,
};
use crate::pipeline::{build_frame_bev, InferSession, Models};
use crate::render::{render_overlay, write_png};
use crate::train_loop::{train_occluded_model, train_visible_model};
use crate::CliError;

fn ensure_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

pub struct SynthGenArgs {
    pub seed: u64,
    pub frames: usize,
    pub scenes: usize,
    pub out: PathBuf,
    pub speed_mps: f64,
    pub scan_rate_hz: f64,
    pub pose_rate_hz: f64,
}

/// Generates one or more simulated sequences with scans, poses, and exact
/// labels. With a single scene the layout is written directly into `out`;
/// with several, into `out/seq_NNN`.
pub fn synth_gen(args: &SynthGenArgs, cfg: &PipelineConfig) -> Result<(), CliError> {
    ensure_dir(&args.out)?;
    cfg.save(&args.out.join("config.json"))?;
    for s in 0..args.scenes {
        let dir = if args.scenes == 1 {
            args.out.clone()
        } else {
            args.out.join(format!("seq_{s:03}"))
        };
        ensure_dir(&dir)?;
        let scene_seed = args.seed.wrapping_add(s as u64);
        let scene = generate_scene(scene_seed);
        let seq_cfg = SequenceConfig {
            n_frames: args.frames,
            speed_mps: args.speed_mps,
            scan_rate_hz: args.scan_rate_hz,
            pose_rate_hz: args.pose_rate_hz,
            seed: args.seed.wrapping_mul(1_000_003).wrapping_add(s as u64),
            beams: cfg.beams,
            grid: cfg.grid,
            label_thickness_px: cfg.label_thickness_px,
        };
        let seq = generate_sequence(&scene, &seq_cfg);

        let scene_json = serde_json::to_string_pretty(&scene).expect("scene serializes");
        fs::write(dir.join("scene.json"), scene_json)
            .map_err(|e| CliError::Config(format!("scene.json: {e}")))?;

        let meta = SequenceMeta {
            n_frames: args.frames,
            timestamps_us: seq.scans.iter().map(|s| s.timestamp_us).collect(),
            grid: cfg.grid,
            label_thickness_px: cfg.label_thickness_px,
            speed_mps: args.speed_mps,
            scan_rate_hz: args.scan_rate_hz,
            pose_rate_hz: args.pose_rate_hz,
            seed: scene_seed,
        };
        let meta_json = serde_json::to_string_pretty(&meta).expect("meta serializes");
        fs::write(dir.join("meta.json"), meta_json)
            .map_err(|e| CliError::Config(format!("meta.json: {e}")))?;

        let mut poses = Vec::new();
        write_pose_jsonl(&mut poses, &seq.trajectory)
            .map_err(|e| CliError::Config(format!("poses.jsonl: {e}")))?;
        fs::write(dir.join("poses.jsonl"), poses)
            .map_err(|e| CliError::Config(format!("poses.jsonl: {e}")))?;

        ensure_dir(&dir.join("scans"))?;
        ensure_dir(&dir.join("labels"))?;
        for (i, scan) in seq.scans.iter().enumerate() {
            let name = frame_name(i);
            let mut buf = Vec::new();
            write_scan(&mut buf, scan).map_err(|e| CliError::Config(format!("scan {i}: {e}")))?;
            fs::write(dir.join("scans").join(format!("{name}.lcrb")), buf)
                .map_err(|e| CliError::Config(format!("scan {i}: {e}")))?;
            let labels = &seq.labels[i];
            crate::dataset::write_mask_file(
                &dir.join("labels").join(format!("{name}.curb.pgm")),
                &labels.curb,
            )?;
            crate::dataset::write_mask_file(
                &dir.join("labels").join(format!("{name}.visible.pgm")),
                &labels.visible,
            )?;
            crate::dataset::write_mask_file(
                &dir.join("labels").join(format!("{name}.occluded.pgm")),
                &labels.occluded,
            )?;
        }
    }
    Ok(())
}

/// Integrates the scan window per frame and writes the BEV rasters into
/// `bev/` inside each sequence directory.
pub fn build_bev(data: &Path, cfg: &PipelineConfig) -> Result<(), CliError> {
    for dir in sequence_dirs(data)? {
        let meta = read_meta(&dir)?;
        let traj = read_trajectory(&dir)?;
        let scans: Vec<_> = (0..meta.n_frames)
            .map(|i| read_scan_file(&dir.join("scans").join(format!("{}.lcrb", frame_name(i)))))
            .collect::<Result<_, _>>()?;
        ensure_dir(&dir.join("bev"))?;
        for i in 0..meta.n_frames {
            let start = (i + 1).saturating_sub(cfg.integration_window);
            let bev = build_frame_bev(&scans[start..=i], &traj, meta.timestamps_us[i], cfg)?;
            write_bev(&dir.join("bev").join(format!("{}.f32", frame_name(i))), &bev)
                .map_err(|e| CliError::Config(format!("bev frame {i}: {e}")))?;
        }
    }
    Ok(())
}

/// Partitions curb labels into visible/occluded with the obstacle-mask +
/// shadow-cast path (the from-scan labeling route, as opposed to the exact
/// simulator labels).
pub fn label(data: &Path, out: &Path, cfg: &PipelineConfig) -> Result<(), CliError> {
    for (si, dir) in sequence_dirs(data)?.into_iter().enumerate() {
        let meta = read_meta(&dir)?;
        let traj = read_trajectory(&dir)?;
        let out_dir = if si == 0 && dir == *data {
            out.to_path_buf()
        } else {
            out.join(dir.file_name().expect("sequence dir name"))
        };
        ensure_dir(&out_dir)?;
        let scans: Vec<_> = (0..meta.n_frames)
            .map(|i| read_scan_file(&dir.join("scans").join(format!("{}.lcrb", frame_name(i)))))
            .collect::<Result<_, _>>()?;
        for i in 0..meta.n_frames {
            let name = frame_name(i);
            let curb = read_mask_file(
                &dir.join("labels").join(format!("{name}.curb.pgm")),
                meta.grid.resolution,
            )?
            .threshold(0.5);
            let start = (i + 1).saturating_sub(cfg.integration_window);
            let trimmed: Vec<_> = scans[start..=i]
                .iter()
                .map(|s| curb_core::pointcloud::trim_scan(s, &cfg.trim))
                .collect();
            let cloud =
                curb_core::pointcloud::integrate_scans(&trimmed, &traj, meta.timestamps_us[i])?;
            let obstacles = obstacle_mask(&cloud, cfg.grid, cfg.obstacle_band);
            let part = partition_labels(&curb, &obstacles, (0.0, 0.0));
            crate::dataset::write_mask_file(
                &out_dir.join(format!("{name}.visible.pgm")),
                &part.visible,
            )?;
            crate::dataset::write_mask_file(
                &out_dir.join(format!("{name}.occluded.pgm")),
                &part.occluded,
            )?;
        }
    }
    Ok(())
}

/// Encodes binary masks into anchor-grid JSON files.
pub fn encode(masks: &Path, suffix: &str, out: &Path, cfg: &PipelineConfig) -> Result<(), CliError> {
    ensure_dir(out)?;
    for path in mask_files(masks, Some(suffix))? {
        let mask = read_mask_file(&path, cfg.grid.resolution)?.threshold(0.5);
        let set = encode_mask(&mask, &cfg.anchors);
        let name = path
            .file_name()
            .and_then(|n| n.to_str())
            .expect("mask filename")
            .trim_end_matches(suffix)
            .to_string();
        let mut buf = Vec::new();
        write_grid_set(&mut buf, &set)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        fs::write(out.join(format!("{name}.anchors.json")), buf)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    }
    Ok(())
}

/// Loads every sequence under `data`, keeping frames whose scan window is
/// already full so training sees uniformly dense BEV images.
fn load_training_frames(
    data: &Path,
    cfg: &PipelineConfig,
) -> Result<Vec<crate::dataset::LoadedFrame>, CliError> {
    let mut frames = Vec::new();
    for dir in sequence_dirs(data)? {
        let all = load_frames(&dir)?;
        let skip = cfg.integration_window.saturating_sub(1).min(all.len());
        frames.extend(all.into_iter().skip(skip));
    }
    if frames.is_empty() {
        return Err(CliError::MissingInput(format!(
            "{}: no usable training frames",
            data.display()
        )));
    }
    Ok(frames)
}

pub fn train_visible(
    data: &Path,
    out: &Path,
    train_cfg: &TrainConfig,
    cfg: &PipelineConfig,
) -> Result<(), CliError> {
    let frames = load_training_frames(data, cfg)?;
    eprintln!("training visible net on {} frames", frames.len());
    let net = train_visible_model(&frames, train_cfg, |epoch, loss| {
        eprintln!("epoch {epoch}: mean pixel bce {loss:.5}");
    })?;
    save_visible(out, &net, train_cfg.seed)?;
    Ok(())
}

pub fn train_occluded(
    data: &Path,
    out: &Path,
    train_cfg: &TrainConfig,
    cfg: &PipelineConfig,
) -> Result<(), CliError> {
    let frames = load_training_frames(data, cfg)?;
    eprintln!("training occluded net on {} frames", frames.len());
    let net = train_occluded_model(&frames, train_cfg, |epoch, loss| {
        eprintln!("epoch {epoch}: mean anchor loss {loss:.5}");
    })?;
    save_occluded(out, &net, train_cfg.seed)?;
    Ok(())
}

/// Runs the frame pipeline across a sequence, writing per-frame visible
/// probabilities, decoded occluded lines, the combined mask, and the
/// filtered/tracked post-processing outputs.
pub fn infer(
    data: &Path,
    visible_model: &Path,
    occluded_model: &Path,
    out: &Path,
    cfg: &PipelineConfig,
) -> Result<(), CliError> {
    let models = Models {
        visible: load_visible(visible_model)?,
        occluded: load_occluded(occluded_model)?,
    };
    for (si, dir) in sequence_dirs(data)?.into_iter().enumerate() {
        let meta = read_meta(&dir)?;
        let traj = read_trajectory(&dir)?;
        let out_dir = if si == 0 && dir == *data {
            out.to_path_buf()
        } else {
            out.join(dir.file_name().expect("sequence dir name"))
        };
        ensure_dir(&out_dir)?;
        fs::copy(dir.join("meta.json"), out_dir.join("meta.json"))
            .map_err(|e| CliError::Config(format!("meta.json: {e}")))?;
        let scans: Vec<_> = (0..meta.n_frames)
            .map(|i| read_scan_file(&dir.join("scans").join(format!("{}.lcrb", frame_name(i)))))
            .collect::<Result<_, _>>()?;
        let mut session = InferSession::new(cfg);
        for i in 0..meta.n_frames {
            let name = frame_name(i);
            let start = (i + 1).saturating_sub(cfg.integration_window);
            let output = session.infer_frame(
                &models,
                &scans[start..=i],
                &traj,
                meta.timestamps_us[i],
                cfg,
            )?;
            crate::dataset::write_mask_file(
                &out_dir.join("visible").join(format!("{name}.pgm")),
                &output.visible_prob,
            )?;
            crate::dataset::write_mask_file(
                &out_dir.join("occluded").join(format!("{name}.pgm")),
                &output.occluded_decoded,
            )?;
            crate::dataset::write_mask_file(
                &out_dir.join("combined").join(format!("{name}.pgm")),
                &output.combined,
            )?;
            crate::dataset::write_mask_file(
                &out_dir.join("filtered").join(format!("{name}.pgm")),
                &output.filtered,
            )?;
            crate::dataset::write_mask_file(
                &out_dir.join("tracked").join(format!("{name}.pgm")),
                &output.tracked,
            )?;
        }
    }
    Ok(())
}

/// Re-runs the temporal filter/tracker over an existing directory of
/// probability masks (one `NNNN.pgm` per frame).
pub fn postprocess(
    data: &Path,
    masks: &Path,
    out: &Path,
    cfg: &PipelineConfig,
) -> Result<(), CliError> {
    let meta = read_meta(data)?;
    let traj = read_trajectory(data)?;
    let files = mask_files(masks, None)?;
    let mut session = Session::new(cfg.postprocess);
    ensure_dir(out)?;
    for (i, path) in files.iter().enumerate() {
        if i >= meta.n_frames {
            break;
        }
        let mask = read_mask_file(path, meta.grid.resolution)?;
        let (filtered, tracked) = session
            .push(meta.timestamps_us[i], mask, &traj)
            .map_err(CliError::from)?;
        let name = frame_name(i);
        crate::dataset::write_mask_file(&out.join("filtered").join(format!("{name}.pgm")), &filtered)?;
        crate::dataset::write_mask_file(&out.join("tracked").join(format!("{name}.pgm")), &tracked)?;
    }
    Ok(())
}

pub struct EvalArgs {
    pub pred: PathBuf,
    pub gt: PathBuf,
    pub gt_suffix: String,
    pub tolerances: Vec<usize>,
    pub regions: Vec<(usize, usize)>,
    pub threshold: f32,
    pub out_csv: Option<PathBuf>,
}

/// Pairs prediction masks with ground truth by frame name and prints the
/// micro-averaged tolerance report (optionally also as CSV).
pub fn eval(args: &EvalArgs, cfg: &PipelineConfig) -> Result<(), CliError> {
    let preds = mask_files(&args.pred, None)?;
    let mut pairs = Vec::new();
    for pred_path in &preds {
        let stem = pred_path
            .file_stem()
            .and_then(|s| s.to_str())
            .expect("pred filename");
        let gt_path = args.gt.join(format!("{stem}{}", args.gt_suffix));
        if !gt_path.is_file() {
            return Err(CliError::MissingInput(format!(
                "ground truth {} for prediction {}",
                gt_path.display(),
                pred_path.display()
            )));
        }
        let pred = read_mask_file(pred_path, cfg.grid.resolution)?.threshold(args.threshold);
        let gt = read_mask_file(&gt_path, cfg.grid.resolution)?.threshold(0.5);
        pairs.push((pred, gt));
    }
    let regions = if args.regions.is_empty() {
        vec![(pairs[0].0.spec.width, pairs[0].0.spec.height)]
    } else {
        args.regions.clone()
    };
    let report = aggregate_report(&pairs, &regions, &args.tolerances)
        .map_err(|e| CliError::Config(e.to_string()))?;
    let mut stdout = std::io::stdout();
    report
        .write_table(&mut stdout)
        .map_err(|e| CliError::Config(format!("stdout: {e}")))?;
    if let Some(csv_path) = &args.out_csv {
        let mut buf = Vec::new();
        report
            .write_csv(&mut buf)
            .map_err(|e| CliError::Config(format!("csv: {e}")))?;
        fs::write(csv_path, buf)
            .map_err(|e| CliError::Config(format!("{}: {e}", csv_path.display())))?;
    }
    Ok(())
}

/// Renders PNG overlays for an inference output directory produced by
/// `infer` (visible white, occluded yellow, tracked blue).
pub fn render(data: &Path, infer_dir: &Path, out: &Path) -> Result<(), CliError> {
    let meta = read_meta(data)?;
    ensure_dir(out)?;
    for i in 0..meta.n_frames {
        let name = frame_name(i);
        let bev_path = data.join("bev").join(format!("{name}.f32"));
        if !bev_path.is_file() {
            return Err(CliError::MissingInput(format!(
                "{} (run build-bev first)",
                bev_path.display()
            )));
        }
        let bev = read_bev(&bev_path)
            .map_err(|e| CliError::Config(format!("{}: {e}", bev_path.display())))?;
        let load_optional = |sub: &str| -> Result<Option<curb_core::bev::CurbMask>, CliError> {
            let p = infer_dir.join(sub).join(format!("{name}.pgm"));
            if p.is_file() {
                Ok(Some(read_mask_file(&p, meta.grid.resolution)?))
            } else {
                Ok(None)
            }
        };
        let visible = load_optional("visible")?;
        let occluded = load_optional("occluded")?;
        let tracked = load_optional("tracked")?;
        let rgb = render_overlay(
            &bev,
            visible.as_ref(),
            occluded.as_ref(),
            tracked.as_ref(),
        );
        write_png(
            &out.join(format!("{name}.png")),
            meta.grid.width,
            meta.grid.height,
            &rgb,
        )?;
    }
    Ok(())
}
