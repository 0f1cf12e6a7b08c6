//! Fully-convolutional encoder-decoder for visible curbs: three down
//! blocks (two 3x3 convs + ReLU + maxpool), a bottleneck, three up blocks
//! (nearest upsample + conv + skip concat + conv), and a final 1x1 conv
//! with sigmoid. Fully convolutional: any input with H, W divisible by 8.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use super::real::Real;
use super::tape::{Tape, Var};
use super::tensor::Tensor;
use super::{NnError, ParamSet};
use crate::bev::{BevImage, CurbMask};

#[derive(Debug, Clone, Copy)]
pub struct ConvSlots {
    pub w: usize,
    pub b: usize,
}

#[derive(Debug, Clone)]
pub struct VisibleNet<R: Real> {
    pub params: ParamSet<R>,
    pub widths: [usize; 4],
    enc: [[ConvSlots; 2]; 3],
    bottleneck: [ConvSlots; 2],
    up: [ConvSlots; 3],
    mix: [ConvSlots; 3],
    fin: ConvSlots,
}

pub const VISIBLE_IN_CHANNELS: usize = 3;
pub const DEFAULT_VISIBLE_WIDTHS: [usize; 4] = [8, 16, 32, 64];

fn kaiming<R: Real>(
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

fn zero_conv<R: Real>(
    params: &mut ParamSet<R>,
    name: &str,
    cout: usize,
    cin: usize,
    k: usize,
) -> ConvSlots {
    let w = params.add(
        &format!("{name}.weight"),
        Tensor::zeros(&[cout, cin, k, k]),
    );
    let b = params.add(&format!("{name}.bias"), Tensor::zeros(&[cout]));
    ConvSlots { w, b }
}

impl<R: Real> VisibleNet<R> {
    /// Builds the network with the final layer zero-initialized, so an
    /// untrained net outputs exactly 0.5 everywhere.
    pub fn new(widths: [usize; 4], seed: u64) -> VisibleNet<R> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let [w1, w2, w3, wb] = widths;
        let enc = [
            [
                kaiming(&mut rng, &mut params, "enc1a", w1, VISIBLE_IN_CHANNELS, 3),
                kaiming(&mut rng, &mut params, "enc1b", w1, w1, 3),
            ],
            [
                kaiming(&mut rng, &mut params, "enc2a", w2, w1, 3),
                kaiming(&mut rng, &mut params, "enc2b", w2, w2, 3),
            ],
            [
                kaiming(&mut rng, &mut params, "enc3a", w3, w2, 3),
                kaiming(&mut rng, &mut params, "enc3b", w3, w3, 3),
            ],
        ];
        let bottleneck = [
            kaiming(&mut rng, &mut params, "bott_a", wb, w3, 3),
            kaiming(&mut rng, &mut params, "bott_b", wb, wb, 3),
        ];
        let up = [
            kaiming(&mut rng, &mut params, "up3", w3, wb, 3),
            kaiming(&mut rng, &mut params, "up2", w2, w3, 3),
            kaiming(&mut rng, &mut params, "up1", w1, w2, 3),
        ];
        let mix = [
            kaiming(&mut rng, &mut params, "mix3", w3, 2 * w3, 3),
            kaiming(&mut rng, &mut params, "mix2", w2, 2 * w2, 3),
            kaiming(&mut rng, &mut params, "mix1", w1, 2 * w1, 3),
        ];
        let fin = zero_conv(&mut params, "final", 1, w1, 1);
        VisibleNet {
            params,
            widths,
            enc,
            bottleneck,
            up,
            mix,
            fin,
        }
    }

    fn conv_relu(&self, tape: &mut Tape<R>, x: Var, slots: ConvSlots, pad: usize) -> Var {
        let w = tape.param(slots.w, &self.params.tensors[slots.w]);
        let b = tape.param(slots.b, &self.params.tensors[slots.b]);
        let y = tape.conv2d(x, w, b, pad);
        tape.relu(y)
    }

    /// Pre-sigmoid logits [1, H, W].
    pub fn forward_logits(&self, tape: &mut Tape<R>, input: Var) -> Result<Var, NnError> {
        let shape = tape.value(input).shape.clone();
        if shape.len() != 3 || shape[0] != VISIBLE_IN_CHANNELS {
            return Err(NnError::ShapeMismatch(format!(
                "expected [3, H, W] input, got {shape:?}"
            )));
        }
        if shape[1] % 8 != 0 || shape[2] % 8 != 0 {
            return Err(NnError::ShapeMismatch(format!(
                "H and W must be divisible by 8, got {}x{}",
                shape[1], shape[2]
            )));
        }
        let mut skips = Vec::with_capacity(3);
        let mut x = input;
        for block in &self.enc {
            x = self.conv_relu(tape, x, block[0], 1);
            x = self.conv_relu(tape, x, block[1], 1);
            skips.push(x);
            x = tape.maxpool2(x);
        }
        x = self.conv_relu(tape, x, self.bottleneck[0], 1);
        x = self.conv_relu(tape, x, self.bottleneck[1], 1);
        for i in 0..3 {
            x = tape.upsample2(x);
            x = self.conv_relu(tape, x, self.up[i], 1);
            x = tape.concat_ch(x, skips[2 - i]);
            x = self.conv_relu(tape, x, self.mix[i], 1);
        }
        let w = tape.param(self.fin.w, &self.params.tensors[self.fin.w]);
        let b = tape.param(self.fin.b, &self.params.tensors[self.fin.b]);
        Ok(tape.conv2d(x, w, b, 0))
    }

    /// Per-pixel probability of visible curb.
    pub fn forward_visible(&self, bev: &BevImage) -> Result<CurbMask, NnError> {
        let mut tape = Tape::new();
        let input = tape.input(bev_input_tensor(bev));
        let logits = self.forward_logits(&mut tape, input)?;
        let probs = tape.sigmoid(logits);
        let data = tape
            .value(probs)
            .data
            .iter()
            .map(|v| v.to_f64() as f32)
            .collect();
        Ok(CurbMask {
            spec: bev.spec,
            data,
        })
    }
}

/// Stacks the three BEV planes into a [3, H, W] tensor.
pub fn bev_input_tensor<R: Real>(bev: &BevImage) -> Tensor<R> {
    let n = bev.spec.len();
    let mut data = Vec::with_capacity(3 * n);
    for plane in bev.channels() {
        data.extend(plane.iter().map(|&v| R::from_f64(v as f64)));
    }
    Tensor::from_vec(&[3, bev.spec.height, bev.spec.width], data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;

    fn bev_with_content(spec: GridSpec) -> BevImage {
        let mut bev = BevImage::zeros(spec, 50.0, 3.55);
        for i in 0..bev.range.len() {
            bev.range[i] = ((i * 7) % 101) as f32 / 101.0;
            bev.intensity[i] = ((i * 13) % 89) as f32 / 89.0;
            bev.height[i] = ((i * 29) % 97) as f32 / 97.0;
        }
        bev
    }

    #[test]
    fn forward_shapes_and_range() {
        let spec = GridSpec::new(128, 64, 0.1);
        let net: VisibleNet<f32> = VisibleNet::new([4, 8, 12, 16], 1);
        let out = net.forward_visible(&bev_with_content(spec)).unwrap();
        assert_eq!(out.spec, spec);
        assert!(out.data.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn zero_final_layer_outputs_half() {
        let spec = GridSpec::new(64, 32, 0.1);
        let net: VisibleNet<f32> = VisibleNet::new([4, 8, 12, 16], 2);
        let out = net.forward_visible(&bev_with_content(spec)).unwrap();
        assert!(out.data.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn rejects_bad_input_shape() {
        let net: VisibleNet<f32> = VisibleNet::new([4, 8, 12, 16], 3);
        let bev = bev_with_content(GridSpec::new(60, 30, 0.1));
        assert!(matches!(
            net.forward_visible(&bev),
            Err(NnError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn translation_covariance_modulo_borders() {
        // Shifting the input by 8 px shifts the output by 8 px away from
        // the padded borders.
        let spec = GridSpec::new(192, 32, 0.1);
        let mut net: VisibleNet<f64> = VisibleNet::new([4, 8, 12, 16], 4);
        // Non-zero final layer so the output carries signal.
        let fin_w = net.fin.w;
        for (j, v) in net.params.tensors[fin_w].data.iter_mut().enumerate() {
            *v = ((j % 5) as f64 - 2.0) * 0.3;
        }
        let bev = bev_with_content(spec);
        let mut shifted = bev.clone();
        let w = spec.width;
        for plane in [&mut shifted.range, &mut shifted.intensity, &mut shifted.height] {
            let orig = plane.clone();
            for r in 0..spec.height {
                for c in 0..w {
                    plane[r * w + c] = if c >= 8 { orig[r * w + c - 8] } else { 0.0 };
                }
            }
        }
        let out_a = net.forward_visible(&bev).unwrap();
        let out_b = net.forward_visible(&shifted).unwrap();
        // Compare out_b[r, c] with out_a[r, c - 8] away from both column
        // borders (the receptive field is well under 64 px).
        for r in 0..spec.height {
            for c in 72..(w - 72) {
                let a = out_a.get(r, c - 8);
                let b = out_b.get(r, c);
                assert!(
                    (a - b).abs() < 1e-9,
                    "covariance broken at ({r},{c}): {a} vs {b}"
                );
            }
        }
    }
}
