//! Desk-scale training loops for both networks: single-sample SGD with
//! momentum, deterministic shuffling and augmentation per (seed, epoch,
//! index), abort on non-finite loss.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use curb_core::anchor::{encode_mask, AnchorSpec};
use curb_core::bev::CurbMask;
use curb_core::nn::loss::{batch_pos_weight, occluded_loss_from_heads};
use curb_core::nn::occluded::{occluded_input_tensor, DEFAULT_OCCLUDED_WIDTHS};
use curb_core::nn::train::train_step;
use curb_core::nn::visible::{bev_input_tensor, DEFAULT_VISIBLE_WIDTHS};
use curb_core::nn::{OccludedNet, SgdState, Tensor, TrainConfig, VisibleNet};
use curb_core::synth::{augment_with, AugmentParams};

use crate::dataset::LoadedFrame;
use crate::CliError;

fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (epoch as u64).wrapping_mul(0x9e3779b9));
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

fn sample_params(seed: u64, epoch: usize, idx: usize, enabled: bool) -> AugmentParams {
    if !enabled || epoch == 0 {
        // First epoch sees the clean data.
        return AugmentParams::identity();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(
        seed.wrapping_mul(0x2545f491_4f6cdd1d) ^ ((epoch as u64) << 32) ^ idx as u64,
    );
    AugmentParams::draw(&mut rng)
}

/// Trains the visible-curb detector on (BEV, visible mask) pairs.
pub fn train_visible_model(
    frames: &[LoadedFrame],
    cfg: &TrainConfig,
    mut log: impl FnMut(usize, f64),
) -> Result<VisibleNet<f32>, CliError> {
    if frames.is_empty() {
        return Err(CliError::MissingInput("no training frames".into()));
    }
    let mut net: VisibleNet<f32> = VisibleNet::new(DEFAULT_VISIBLE_WIDTHS, cfg.seed);
    let mut state = SgdState::new(&net.params, cfg.momentum);
    for epoch in 0..cfg.epochs {
        let mut epoch_loss = 0.0;
        let order = epoch_order(frames.len(), cfg.seed, epoch);
        for (step, &idx) in order.iter().enumerate() {
            let frame = &frames[idx];
            let params = sample_params(cfg.seed, epoch, idx, cfg.augment);
            let (bev, masks) = augment_with(&frame.bev, &[&frame.visible], &params);
            let target_mask = masks.into_iter().next().expect("one mask in, one out");
            let pos_w = batch_pos_weight(&[&target_mask], cfg.pos_weight_cap) as f32;
            let target = Tensor::from_vec(
                &[1, bev.spec.height, bev.spec.width],
                target_mask.data.clone(),
            );
            let snapshot = net.clone();
            let loss = train_step(&mut net.params, &mut state, cfg.lr, |tape, _| {
                let input = tape.input(bev_input_tensor(&bev));
                let logits = snapshot.forward_logits(tape, input)?;
                Ok(tape.pixel_bce_logits_mean(logits, target, pos_w))
            })?;
            epoch_loss += loss;
            let _ = step;
        }
        log(epoch, epoch_loss / frames.len() as f64);
    }
    Ok(net)
}

/// Trains the occluded-curb model on (BEV, visible mask, occluded mask)
/// triples: the occluded mask is anchor-encoded after augmentation.
pub fn train_occluded_model(
    frames: &[LoadedFrame],
    cfg: &TrainConfig,
    mut log: impl FnMut(usize, f64),
) -> Result<OccludedNet<f32>, CliError> {
    if frames.is_empty() {
        return Err(CliError::MissingInput("no training frames".into()));
    }
    let anchor_spec = AnchorSpec {
        scales: cfg.scales.clone(),
    };
    let mut net: OccludedNet<f32> =
        OccludedNet::new(DEFAULT_OCCLUDED_WIDTHS, cfg.scales.clone(), cfg.seed);
    let mut state = SgdState::new(&net.params, cfg.momentum);
    for epoch in 0..cfg.epochs {
        let mut epoch_loss = 0.0;
        let order = epoch_order(frames.len(), cfg.seed.wrapping_add(1), epoch);
        for &idx in &order {
            let frame = &frames[idx];
            let params = sample_params(cfg.seed.wrapping_add(1), epoch, idx, cfg.augment);
            let (bev, masks) =
                augment_with(&frame.bev, &[&frame.visible, &frame.occluded], &params);
            let visible: &CurbMask = &masks[0];
            let occluded = &masks[1];
            let gt = encode_mask(&occluded.threshold(0.5), &anchor_spec);
            let input_t = occluded_input_tensor::<f32>(&bev, &visible.threshold(0.5));
            let alpha = cfg.alpha;
            // The anchor loss is a sum over every cell and category; divide
            // by that fixed count so the step size is geometry-independent.
            let cells: usize = gt.grids.iter().map(|g| g.cells.len() * 4).sum();
            let snapshot = net.clone();
            let loss = train_step(&mut net.params, &mut state, cfg.lr, |tape, _| {
                let input = tape.input(input_t);
                let heads = snapshot.forward_heads(tape, input)?;
                let total = occluded_loss_from_heads(tape, &heads, &gt, alpha);
                Ok(tape.weighted_sum(vec![(total, 1.0 / cells as f64)]))
            })?;
            epoch_loss += loss;
        }
        log(epoch, epoch_loss / frames.len() as f64);
    }
    Ok(net)
}
