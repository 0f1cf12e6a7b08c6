//! Stochastic gradient descent with momentum and the single-step training
//! primitive. With a fixed seed and single-threaded execution every value
//! is bit-reproducible.

use serde::{Deserialize, Serialize};

use super::real::Real;
use super::tape::{Tape, Var};
use super::tensor::Tensor;
use super::{NnError, ParamSet};

/// Training hyperparameters (serialized as the training config file).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub momentum: f64,
    pub alpha: f64,
    pub seed: u64,
    pub epochs: usize,
    pub scales: Vec<usize>,
    pub pos_weight_cap: f64,
    pub augment: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.05,
            momentum: 0.9,
            alpha: 1.0,
            seed: 0,
            epochs: 4,
            scales: vec![8, 16, 32],
            pos_weight_cap: 50.0,
            augment: true,
        }
    }
}

/// Per-parameter velocity buffers.
#[derive(Debug, Clone)]
pub struct SgdState<R: Real> {
    pub velocity: Vec<Tensor<R>>,
    pub momentum: f64,
}

impl<R: Real> SgdState<R> {
    pub fn new(params: &ParamSet<R>, momentum: f64) -> SgdState<R> {
        SgdState {
            velocity: params.tensors.iter().map(|t| Tensor::zeros(&t.shape)).collect(),
            momentum,
        }
    }
}

/// One forward/backward/update. `build_loss` assembles the scalar loss on
/// the tape from the current parameters; a non-finite loss aborts the step
/// with the parameters untouched.
pub fn train_step<R: Real, F>(
    params: &mut ParamSet<R>,
    state: &mut SgdState<R>,
    lr: f64,
    build_loss: F,
) -> Result<f64, NnError>
where
    F: FnOnce(&mut Tape<R>, &ParamSet<R>) -> Result<Var, NnError>,
{
    let mut tape = Tape::new();
    let loss_var = build_loss(&mut tape, params)?;
    let loss = tape.value(loss_var).item().to_f64();
    if !loss.is_finite() {
        return Err(NnError::NonFiniteLoss);
    }
    let grads = tape.backward(loss_var);
    let mu = R::from_f64(state.momentum);
    let step = R::from_f64(lr);
    for (slot, grad) in grads {
        let v = &mut state.velocity[slot];
        let p = &mut params.tensors[slot];
        for j in 0..p.data.len() {
            let vel = v.data[j] * mu + grad.data[j];
            v.data[j] = vel;
            p.data[j] -= step * vel;
        }
    }
    Ok(loss)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bev::{BevImage, CurbMask};
    use crate::grid::GridSpec;
    use crate::nn::loss::batch_pos_weight;
    use crate::nn::visible::{bev_input_tensor, VisibleNet};

    fn toy_batch(spec: GridSpec, n: usize) -> Vec<(BevImage, CurbMask)> {
        (0..n)
            .map(|i| {
                let mut bev = BevImage::zeros(spec, 50.0, 3.55);
                let mut gt = CurbMask::zeros(spec);
                let col = 8 + 4 * i;
                for r in 0..spec.height {
                    bev.intensity[r * spec.width + col] = 0.9;
                    bev.height[r * spec.width + col] = 0.6;
                    gt.set(r, col, 1.0);
                }
                for j in 0..bev.range.len() {
                    bev.range[j] = ((j * 31 + i * 7) % 97) as f32 / 97.0 * 0.2;
                }
                (bev, gt)
            })
            .collect()
    }

    fn visible_batch_loss(
        net: &VisibleNet<f32>,
        tape: &mut Tape<f32>,
        batch: &[(BevImage, CurbMask)],
        pos_weight: f64,
    ) -> Result<Var, NnError> {
        let mut terms = Vec::new();
        for (bev, gt) in batch {
            let input = tape.input(bev_input_tensor(bev));
            let logits = net.forward_logits(tape, input)?;
            let target = Tensor::from_vec(
                &[1, gt.spec.height, gt.spec.width],
                gt.data.iter().map(|&v| v).collect(),
            );
            let l = tape.pixel_bce_logits_mean(logits, target, pos_weight as f32);
            terms.push((l, 1.0 / batch.len() as f64));
        }
        Ok(tape.weighted_sum(terms))
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let spec = GridSpec::new(32, 32, 0.1);
        let batch = toy_batch(spec, 1);
        let mut net: VisibleNet<f32> = VisibleNet::new([4, 6, 8, 12], 5);
        let before = net.params.tensors.clone();
        let mut state = SgdState::new(&net.params, 0.9);
        let w = batch_pos_weight(&batch.iter().map(|(_, g)| g).collect::<Vec<_>>(), 50.0);
        let net_ref = net.clone();
        train_step(&mut net.params, &mut state, 0.0, |tape, _| {
            visible_batch_loss(&net_ref, tape, &batch, w)
        })
        .unwrap();
        for (a, b) in net.params.tensors.iter().zip(&before) {
            assert_eq!(a.data, b.data);
        }
    }

    #[test]
    fn overfits_four_images() {
        let spec = GridSpec::new(32, 32, 0.1);
        let batch = toy_batch(spec, 4);
        let mut net: VisibleNet<f32> = VisibleNet::new([6, 10, 14, 20], 6);
        let mut state = SgdState::new(&net.params, 0.9);
        let w = batch_pos_weight(&batch.iter().map(|(_, g)| g).collect::<Vec<_>>(), 50.0);
        let mut last = f64::INFINITY;
        for _ in 0..200 {
            let snapshot = net.clone();
            last = train_step(&mut net.params, &mut state, 0.03, |tape, _| {
                visible_batch_loss(&snapshot, tape, &batch, w)
            })
            .unwrap();
        }
        assert!(last < 0.05, "final loss {last}");
    }

    #[test]
    fn same_seed_same_losses() {
        let spec = GridSpec::new(32, 32, 0.1);
        let batch = toy_batch(spec, 2);
        let run = || {
            let mut net: VisibleNet<f32> = VisibleNet::new([4, 6, 8, 12], 7);
            let mut state = SgdState::new(&net.params, 0.9);
            let mut losses = Vec::new();
            for _ in 0..10 {
                let snapshot = net.clone();
                losses.push(
                    train_step(&mut net.params, &mut state, 0.05, |tape, _| {
                        visible_batch_loss(&snapshot, tape, &batch, 10.0)
                    })
                    .unwrap(),
                );
            }
            losses
        };
        assert_eq!(run(), run());
    }
}
