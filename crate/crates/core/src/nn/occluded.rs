//! Occluded-curb inference model: a shared conv trunk over the BEV image
//! plus the visible-curb mask, one intra-layer convolution block (four
//! directional slice-by-slice passes), and one 16-channel head per scale
//! emitting presence logits, omega, beta, and a reserved group per anchor
//! category.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use super::real::Real;
use super::tape::{Tape, Var, SCNN_KERNEL_W, SCNN_ORDER};
use super::tensor::Tensor;
use super::visible::ConvSlots;
use super::{NnError, ParamSet};
use crate::anchor::{AnchorCell, AnchorGrid, AnchorGridSet, ANCHOR_CATEGORIES};
use crate::bev::{BevImage, CurbMask};

pub const OCCLUDED_IN_CHANNELS: usize = 4;
pub const HEAD_CHANNELS: usize = 16;
pub const DEFAULT_OCCLUDED_WIDTHS: [usize; 3] = [16, 32, 64];

#[derive(Debug, Clone)]
pub struct OccludedNet<R: Real> {
    pub params: ParamSet<R>,
    pub widths: [usize; 3],
    pub scales: Vec<usize>,
    trunk: [ConvSlots; 3],
    scnn: [usize; 4],
    mids: Vec<ConvSlots>,
    heads: Vec<ConvSlots>,
}

fn conv_init<R: Real>(
    rng: &mut ChaCha8Rng,
    params: &mut ParamSet<R>,
    name: &str,
    cout: usize,
    cin: usize,
    k: usize,
) -> ConvSlots {
    let fan_in = (cin * k * k) as f64;
    let bound = (6.0 / fan_in).sqrt();
    let n = cout * cin * k * k;
    let data: Vec<R> = (0..n)
        .map(|_| R::from_f64((rng.random::<f64>() * 2.0 - 1.0) * bound))
        .collect();
    let w = params.add(
        &format!("{name}.weight"),
        Tensor::from_vec(&[cout, cin, k, k], data),
    );
    let b = params.add(&format!("{name}.bias"), Tensor::zeros(&[cout]));
    ConvSlots { w, b }
}

impl<R: Real> OccludedNet<R> {
    pub fn new(widths: [usize; 3], scales: Vec<usize>, seed: u64) -> OccludedNet<R> {
        assert_eq!(scales, vec![8, 16, 32], "heads are laid out for scales 8/16/32");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let [t1, t2, t3] = widths;
        let trunk = [
            conv_init(&mut rng, &mut params, "trunk1", t1, OCCLUDED_IN_CHANNELS, 3),
            conv_init(&mut rng, &mut params, "trunk2", t2, t1, 3),
            conv_init(&mut rng, &mut params, "trunk3", t3, t2, 3),
        ];
        // Small-magnitude init keeps the sequential slice recurrences stable.
        let scnn_bound = (1.0 / (t3 * SCNN_KERNEL_W) as f64).sqrt() * 0.5;
        let scnn = SCNN_ORDER.map(|dir| {
            let n = t3 * t3 * SCNN_KERNEL_W;
            let data: Vec<R> = (0..n)
                .map(|_| R::from_f64((rng.random::<f64>() * 2.0 - 1.0) * scnn_bound))
                .collect();
            params.add(
                &format!("scnn_{dir:?}.kernel"),
                Tensor::from_vec(&[t3, t3, SCNN_KERNEL_W], data),
            )
        });
        let mids = vec![
            conv_init(&mut rng, &mut params, "mid16", t3, t3, 3),
            conv_init(&mut rng, &mut params, "mid32", t3, t3, 3),
        ];
        // Heads start at zero: presence logits 0 (probability 0.5), and
        // omega/beta regressions 0.
        let heads = (0..3)
            .map(|i| {
                let w = params.add(
                    &format!("head{i}.weight"),
                    Tensor::zeros(&[HEAD_CHANNELS, t3, 1, 1]),
                );
                let b = params.add(&format!("head{i}.bias"), Tensor::zeros(&[HEAD_CHANNELS]));
                ConvSlots { w, b }
            })
            .collect();
        OccludedNet {
            params,
            widths,
            scales,
            trunk,
            scnn,
            mids,
            heads,
        }
    }

    fn conv_relu(&self, tape: &mut Tape<R>, x: Var, slots: ConvSlots) -> Var {
        let w = tape.param(slots.w, &self.params.tensors[slots.w]);
        let b = tape.param(slots.b, &self.params.tensors[slots.b]);
        let y = tape.conv2d(x, w, b, 1);
        tape.relu(y)
    }

    fn head(&self, tape: &mut Tape<R>, x: Var, slots: ConvSlots) -> Var {
        let w = tape.param(slots.w, &self.params.tensors[slots.w]);
        let b = tape.param(slots.b, &self.params.tensors[slots.b]);
        tape.conv2d(x, w, b, 0)
    }

    /// Raw 16-channel head outputs, one per scale (8, 16, 32).
    pub fn forward_heads(&self, tape: &mut Tape<R>, input: Var) -> Result<Vec<Var>, NnError> {
        let shape = tape.value(input).shape.clone();
        if shape.len() != 3 || shape[0] != OCCLUDED_IN_CHANNELS {
            return Err(NnError::ShapeMismatch(format!(
                "expected [4, H, W] input, got {shape:?}"
            )));
        }
        if shape[1] % 32 != 0 || shape[2] % 32 != 0 {
            return Err(NnError::ShapeMismatch(format!(
                "H and W must be divisible by 32, got {}x{}",
                shape[1], shape[2]
            )));
        }
        let mut x = input;
        for slots in &self.trunk {
            x = self.conv_relu(tape, x, *slots);
            x = tape.maxpool2(x);
        }
        // Intra-layer block in fixed order: down, up, right, left.
        for (slot, dir) in self.scnn.iter().zip(SCNN_ORDER) {
            let k = tape.param(*slot, &self.params.tensors[*slot]);
            x = tape.scnn_pass(x, k, dir);
        }
        let mut heads = Vec::with_capacity(3);
        heads.push(self.head(tape, x, self.heads[0]));
        x = self.conv_relu(tape, x, self.mids[0]);
        x = tape.maxpool2(x);
        heads.push(self.head(tape, x, self.heads[1]));
        x = self.conv_relu(tape, x, self.mids[1]);
        x = tape.maxpool2(x);
        heads.push(self.head(tape, x, self.heads[2]));
        Ok(heads)
    }

    /// Runs the network and packages the heads as an [`AnchorGridSet`]:
    /// presence through the logistic function, omega in radians, beta
    /// scaled back to pixels. The reserved channel group is left zero.
    pub fn forward_occluded(
        &self,
        bev: &BevImage,
        visible: &CurbMask,
    ) -> Result<AnchorGridSet, NnError> {
        if visible.spec != bev.spec {
            return Err(NnError::ShapeMismatch(
                "visible mask grid differs from BEV grid".into(),
            ));
        }
        let mut tape = Tape::new();
        let input = tape.input(occluded_input_tensor(bev, visible));
        let heads = self.forward_heads(&mut tape, input)?;
        let mut grids = Vec::with_capacity(3);
        for (hi, &scale) in self.scales.iter().enumerate() {
            let t = tape.value(heads[hi]);
            grids.push(head_tensor_to_grid(t, scale));
        }
        Ok(AnchorGridSet {
            width: bev.spec.width,
            height: bev.spec.height,
            grids,
        })
    }
}

/// BEV planes plus the visible mask, stacked to [4, H, W].
pub fn occluded_input_tensor<R: Real>(bev: &BevImage, visible: &CurbMask) -> Tensor<R> {
    let n = bev.spec.len();
    let mut data = Vec::with_capacity(4 * n);
    for plane in bev.channels() {
        data.extend(plane.iter().map(|&v| R::from_f64(v as f64)));
    }
    data.extend(visible.data.iter().map(|&v| R::from_f64(v as f64)));
    Tensor::from_vec(&[4, bev.spec.height, bev.spec.width], data)
}

/// Converts a raw [16, h, w] head tensor into an anchor grid at `scale`.
pub fn head_tensor_to_grid<R: Real>(t: &Tensor<R>, scale: usize) -> AnchorGrid {
    assert_eq!(t.shape[0], HEAD_CHANNELS);
    let (rows, cols) = (t.shape[1], t.shape[2]);
    let plane = rows * cols;
    let mut grid = AnchorGrid::zeros(scale, rows, cols);
    for r in 0..rows {
        for c in 0..cols {
            let mut cell = AnchorCell::default();
            for k in 0..ANCHOR_CATEGORIES {
                let logit = t.data[k * plane + r * cols + c].to_f64();
                cell.presence[k] = (1.0 / (1.0 + (-logit).exp())) as f32;
                cell.omega[k] = t.data[(4 + k) * plane + r * cols + c].to_f64() as f32;
                cell.beta[k] =
                    (t.data[(8 + k) * plane + r * cols + c].to_f64() * scale as f64) as f32;
            }
            *grid.cell_mut(r, c) = cell;
        }
    }
    grid
}
