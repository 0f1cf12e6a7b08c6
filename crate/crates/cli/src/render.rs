//! PNG overlays of pipeline outputs on the BEV background: tracked curbs in
//! blue, occluded in yellow, visible in white.

use std::path::Path;

use curb_core::bev::{BevImage, CurbMask};

use crate::CliError;

const COLOR_TRACKED: [u8; 3] = [70, 130, 255];
const COLOR_OCCLUDED: [u8; 3] = [255, 220, 40];
const COLOR_VISIBLE: [u8; 3] = [255, 255, 255];

/// Composites the overlay into an RGB8 buffer (row-major, 3 bytes per
/// pixel). Draw order: tracked under occluded under visible.
pub fn render_overlay(
    bev: &BevImage,
    visible: Option<&CurbMask>,
    occluded: Option<&CurbMask>,
    tracked: Option<&CurbMask>,
) -> Vec<u8> {
    let n = bev.spec.len();
    let mut rgb = vec![0u8; n * 3];
    for i in 0..n {
        let g = bev.range[i].max(bev.intensity[i]).max(bev.height[i]);
        let v = (g.clamp(0.0, 1.0) * 170.0) as u8;
        rgb[i * 3] = v;
        rgb[i * 3 + 1] = v;
        rgb[i * 3 + 2] = v;
    }
    let mut paint = |mask: Option<&CurbMask>, color: [u8; 3]| {
        if let Some(m) = mask {
            for (i, &p) in m.data.iter().enumerate() {
                if p > 0.5 {
                    rgb[i * 3] = color[0];
                    rgb[i * 3 + 1] = color[1];
                    rgb[i * 3 + 2] = color[2];
                }
            }
        }
    };
    paint(tracked, COLOR_TRACKED);
    paint(occluded, COLOR_OCCLUDED);
    paint(visible, COLOR_VISIBLE);
    rgb
}

pub fn write_png(path: &Path, width: usize, height: usize, rgb: &[u8]) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)
            .map_err(|e| CliError::Config(format!("{}: {e}", parent.display())))?;
    }
    let file = std::fs::File::create(path)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let mut encoder = png::Encoder::new(std::io::BufWriter::new(file), width as u32, height as u32);
    encoder.set_color(png::ColorType::Rgb);
    encoder.set_depth(png::BitDepth::Eight);
    let mut writer = encoder
        .write_header()
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    writer
        .write_image_data(rgb)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    Ok(())
}
