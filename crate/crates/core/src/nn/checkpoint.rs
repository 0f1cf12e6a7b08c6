//! Model checkpoint format: magic "CRBN", u32 version, a length-prefixed
//! JSON architecture descriptor, then f32 parameter planes in declaration
//! order.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::occluded::OccludedNet;
use super::real::Real;
use super::visible::VisibleNet;
use super::{NnError, ParamSet};

const MAGIC: &[u8; 4] = b"CRBN";
const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize, PartialEq)]
struct Descriptor {
    arch: String,
    widths: Vec<usize>,
    scales: Vec<usize>,
    seed: u64,
}

fn write_params<W: Write, R: Real>(w: &mut W, params: &ParamSet<R>) -> Result<(), NnError> {
    for t in &params.tensors {
        for v in &t.data {
            w.write_all(&(v.to_f64() as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_params<Rd: Read, R: Real>(r: &mut Rd, params: &mut ParamSet<R>) -> Result<(), NnError> {
    let mut buf = [0u8; 4];
    for t in &mut params.tensors {
        for v in &mut t.data {
            r.read_exact(&mut buf)?;
            *v = R::from_f64(f32::from_le_bytes(buf) as f64);
        }
    }
    // The stream must be fully consumed.
    if r.read(&mut buf)? != 0 {
        return Err(NnError::BadCheckpoint(
            "trailing bytes after parameters".into(),
        ));
    }
    Ok(())
}

fn write_checkpoint<W: Write, R: Real>(
    w: &mut W,
    desc: &Descriptor,
    params: &ParamSet<R>,
) -> Result<(), NnError> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    let json = serde_json::to_vec(desc).expect("descriptor serializes");
    w.write_all(&(json.len() as u32).to_le_bytes())?;
    w.write_all(&json)?;
    write_params(w, params)
}

fn read_header<Rd: Read>(r: &mut Rd) -> Result<Descriptor, NnError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(NnError::BadCheckpoint(format!(
            "bad magic {magic:?}, expected \"CRBN\""
        )));
    }
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    let version = u32::from_le_bytes(buf);
    if version != VERSION {
        return Err(NnError::BadCheckpoint(format!(
            "unsupported version {version}"
        )));
    }
    r.read_exact(&mut buf)?;
    let len = u32::from_le_bytes(buf) as usize;
    let mut json = vec![0u8; len];
    r.read_exact(&mut json)?;
    serde_json::from_slice(&json)
        .map_err(|e| NnError::BadCheckpoint(format!("descriptor json: {e}")))
}

pub fn save_visible<R: Real>(path: &Path, net: &VisibleNet<R>, seed: u64) -> Result<(), NnError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    let desc = Descriptor {
        arch: "visible".into(),
        widths: net.widths.to_vec(),
        scales: Vec::new(),
        seed,
    };
    write_checkpoint(&mut f, &desc, &net.params)
}

pub fn load_visible<R: Real>(path: &Path) -> Result<VisibleNet<R>, NnError> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    let desc = read_header(&mut f)?;
    if desc.arch != "visible" {
        return Err(NnError::BadCheckpoint(format!(
            "expected a visible-net checkpoint, found {}",
            desc.arch
        )));
    }
    if desc.widths.len() != 4 {
        return Err(NnError::BadCheckpoint("bad widths".into()));
    }
    let widths = [desc.widths[0], desc.widths[1], desc.widths[2], desc.widths[3]];
    let mut net = VisibleNet::new(widths, desc.seed);
    read_params(&mut f, &mut net.params)?;
    Ok(net)
}

pub fn save_occluded<R: Real>(path: &Path, net: &OccludedNet<R>, seed: u64) -> Result<(), NnError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    let desc = Descriptor {
        arch: "occluded".into(),
        widths: net.widths.to_vec(),
        scales: net.scales.clone(),
        seed,
    };
    write_checkpoint(&mut f, &desc, &net.params)
}

pub fn load_occluded<R: Real>(path: &Path) -> Result<OccludedNet<R>, NnError> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    let desc = read_header(&mut f)?;
    if desc.arch != "occluded" {
        return Err(NnError::BadCheckpoint(format!(
            "expected an occluded-net checkpoint, found {}",
            desc.arch
        )));
    }
    if desc.widths.len() != 3 {
        return Err(NnError::BadCheckpoint("bad widths".into()));
    }
    let widths = [desc.widths[0], desc.widths[1], desc.widths[2]];
    let mut net = OccludedNet::new(widths, desc.scales.clone(), desc.seed);
    read_params(&mut f, &mut net.params)?;
    Ok(net)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn visible_roundtrip_is_bit_exact() {
        let dir = std::env::temp_dir().join("curb_ckpt_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("v.crbn");
        let mut net: VisibleNet<f32> = VisibleNet::new([4, 6, 8, 12], 9);
        net.params.tensors[0].data[0] = 0.123456;
        save_visible(&path, &net, 9).unwrap();
        let back: VisibleNet<f32> = load_visible(&path).unwrap();
        for (a, b) in net.params.tensors.iter().zip(&back.params.tensors) {
            assert_eq!(a.data, b.data);
        }
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn wrong_arch_is_rejected() {
        let dir = std::env::temp_dir().join("curb_ckpt_test2");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("o.crbn");
        let net: OccludedNet<f32> = OccludedNet::new([4, 6, 8], vec![8, 16, 32], 1);
        save_occluded(&path, &net, 1).unwrap();
        assert!(matches!(
            load_visible::<f32>(&path),
            Err(NnError::BadCheckpoint(_))
        ));
        std::fs::remove_dir_all(&dir).ok();
    }
}
