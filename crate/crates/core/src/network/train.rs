//! Patch extraction, the training loop, and tiled full-volume inference.

use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use super::{
    adam_step, backward_tensors, forward_only, loss_and_grad_tensor, net_init, LayerGrads,
    NetConfig, NetParams, NetState, Scalar, Tensor4,
};
use crate::error::{invalid, mismatch, Error, Result};
use crate::rng::Rng;
use crate::volume::ComplexVolume;

/// A sub-volume with its origin in the source volume.
#[derive(Debug, Clone)]
pub struct Patch {
    pub origin: [usize; 3],
    pub volume: ComplexVolume,
}

/// Overlapping patch grid with the given stride; the final patch per axis
/// is clamped to the volume edge. A volume smaller than the patch extent
/// yields a single zero-padded patch.
pub fn extract_patches(vol: &ComplexVolume, patch: usize, stride: usize) -> Result<Vec<Patch>> {
    if patch < crate::volume::MIN_DIM {
        return Err(invalid("patch extent below minimum volume extent"));
    }
    if stride == 0 || stride > patch {
        return Err(invalid("stride must be in 1..=patch"));
    }
    if vol.shape.iter().any(|&n| n < patch) {
        // Single centered patch, zero padded out to the patch extent.
        let mut out = ComplexVolume::zeros([patch; 3])?;
        let off: Vec<isize> =
            (0..3).map(|a| patch as isize / 2 - vol.shape[a] as isize / 2).collect();
        for z in 0..vol.shape[2] {
            for y in 0..vol.shape[1] {
                for x in 0..vol.shape[0] {
                    let dst = [
                        (x as isize + off[0]) as usize,
                        (y as isize + off[1]) as usize,
                        (z as isize + off[2]) as usize,
                    ];
                    *out.at_mut(dst[0], dst[1], dst[2]) = vol.at(x, y, z);
                }
            }
        }
        return Ok(vec![Patch { origin: [0, 0, 0], volume: out }]);
    }

    let origins_axis = |n: usize| -> Vec<usize> {
        let mut os = Vec::new();
        let mut o = 0;
        while o + patch < n {
            os.push(o);
            o += stride;
        }
        os.push(n - patch);
        os.dedup();
        os
    };
    let ox = origins_axis(vol.shape[0]);
    let oy = origins_axis(vol.shape[1]);
    let oz = origins_axis(vol.shape[2]);
    let mut patches = Vec::with_capacity(ox.len() * oy.len() * oz.len());
    for &z0 in &oz {
        for &y0 in &oy {
            for &x0 in &ox {
                let mut p = ComplexVolume::zeros([patch; 3])?;
                for z in 0..patch {
                    for y in 0..patch {
                        let src = vol.idx(x0, y0 + y, z0 + z);
                        let dst = p.idx(0, y, z);
                        p.data[dst..dst + patch].copy_from_slice(&vol.data[src..src + patch]);
                    }
                }
                patches.push(Patch { origin: [x0, y0, z0], volume: p });
            }
        }
    }
    Ok(patches)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_l1: f64,
    pub val_l1: f64,
}

/// Callback invoked after every epoch, e.g. to write checkpoints. Errors
/// abort training.
pub trait TrainObserver<T: Scalar> {
    fn on_epoch(&mut self, stats: &EpochStats, state: &NetState<T>) -> Result<()>;
}

pub struct NoopObserver;

impl<T: Scalar> TrainObserver<T> for NoopObserver {
    fn on_epoch(&mut self, _stats: &EpochStats, _state: &NetState<T>) -> Result<()> {
        Ok(())
    }
}

/// Supervised training on (input, target) volume pairs.
///
/// Pairs are cut into patches once, then shuffled into minibatches each
/// epoch with a seeded RNG. Per-item gradients inside a batch may be
/// computed in parallel but are summed in index order, so the loss history
/// is reproducible for a fixed seed at any thread count. A non-finite loss
/// aborts with [`Error::Divergence`]; the observer has already persisted
/// the last good epoch.
pub fn train<T: Scalar>(
    cfg: &NetConfig,
    train_pairs: &[(ComplexVolume, ComplexVolume)],
    val_pairs: &[(ComplexVolume, ComplexVolume)],
    epochs: usize,
    observer: &mut dyn TrainObserver<T>,
) -> Result<(NetState<T>, Vec<EpochStats>)> {
    cfg.validate()?;
    if train_pairs.is_empty() {
        return Err(invalid("training dataset is empty"));
    }
    if epochs == 0 {
        return Err(invalid("epochs must be >= 1"));
    }

    let tensorize = |pairs: &[(ComplexVolume, ComplexVolume)]| -> Result<Vec<(Tensor4<T>, Tensor4<T>)>> {
        let mut out = Vec::new();
        for (input, target) in pairs {
            if input.shape != target.shape {
                return Err(mismatch("input/target pair shapes differ"));
            }
            let pi = extract_patches(input, cfg.patch, cfg.patch_stride)?;
            let pt = extract_patches(target, cfg.patch, cfg.patch_stride)?;
            for (a, b) in pi.iter().zip(&pt) {
                out.push((Tensor4::from_volume(&a.volume), Tensor4::from_volume(&b.volume)));
            }
        }
        Ok(out)
    };
    let train_patches = tensorize(train_pairs)?;
    let val_patches = tensorize(val_pairs)?;

    let mut state = NetState::new(net_init::<T>(cfg)?);
    let mut rng = Rng::new(cfg.seed ^ 0x7261_696e_5f72_6e67);
    let mut order: Vec<usize> = (0..train_patches.len()).collect();
    let mut history = Vec::with_capacity(epochs);

    for epoch in 0..epochs {
        rng.shuffle(&mut order);
        let mut loss_sum = 0.0;
        let mut n_items = 0usize;
        for batch in order.chunks(cfg.batch) {
            let results = crate::par::map_indices(batch.len(), |bi| {
                let (x, t) = &train_patches[batch[bi]];
                backward_tensors(&state.params, x, t)
            });
            let mut grads = state.params.zero_grads();
            let mut batch_loss = 0.0;
            for res in results {
                let (loss, g) = res?;
                batch_loss += loss;
                accumulate(&mut grads, &g);
            }
            scale_grads(&mut grads, 1.0 / batch.len() as f64);
            batch_loss /= batch.len() as f64;
            if !batch_loss.is_finite() {
                return Err(Error::Divergence(alloc::format!(
                    "non-finite training loss at epoch {epoch}"
                )));
            }
            loss_sum += batch_loss * batch.len() as f64;
            n_items += batch.len();
            adam_step(&mut state, &grads, cfg.learning_rate)?;
        }
        let train_l1 = loss_sum / n_items as f64;

        let val_l1 = if val_patches.is_empty() {
            0.0
        } else {
            let losses = crate::par::map_indices(val_patches.len(), |i| {
                let (x, t) = &val_patches[i];
                let y = forward_only(&state.params, x)?;
                Ok::<f64, Error>(loss_and_grad_tensor(&y, t)?.0)
            });
            let mut acc = 0.0;
            for l in losses {
                acc += l?;
            }
            acc / val_patches.len() as f64
        };

        let stats = EpochStats { epoch, train_l1, val_l1 };
        observer.on_epoch(&stats, &state)?;
        history.push(stats);
    }
    Ok((state, history))
}

fn accumulate<T: Scalar>(acc: &mut [LayerGrads<T>], g: &[LayerGrads<T>]) {
    for (a, b) in acc.iter_mut().zip(g) {
        for (x, y) in a.w.iter_mut().zip(&b.w) {
            *x += *y;
        }
        for (x, y) in a.b.iter_mut().zip(&b.b) {
            *x += *y;
        }
    }
}

fn scale_grads<T: Scalar>(grads: &mut [LayerGrads<T>], s: f64) {
    let s = T::from_f64(s);
    for g in grads.iter_mut() {
        for v in g.w.iter_mut() {
            *v *= s;
        }
        for v in g.b.iter_mut() {
            *v *= s;
        }
    }
}

/// Tiled inference with linear-taper blending in the overlap zones. With
/// `tile` at or above the volume extent this is exactly one forward pass.
/// Tile faces within `min(receptive field, overlap/2)` of a seam are
/// trimmed, so with `overlap >= 2 * receptive field` the tiled output
/// equals the untiled one up to floating-point roundoff.
pub fn apply<T: Scalar>(
    p: &NetParams<T>,
    vol: &ComplexVolume,
    tile: usize,
    overlap: usize,
) -> Result<ComplexVolume> {
    p.cfg.validate()?;
    if overlap + 1 < p.cfg.kernel {
        return Err(invalid("overlap must be >= kernel - 1"));
    }
    if tile < p.cfg.kernel.max(crate::volume::MIN_DIM) {
        return Err(invalid("tile extent too small"));
    }
    if vol.shape.iter().all(|&n| n <= tile) {
        return super::net_forward(p, vol);
    }
    if overlap >= tile {
        return Err(invalid("overlap must be below the tile extent"));
    }

    let rf = p.cfg.receptive_field_radius();
    let margin = rf.min(overlap / 2);
    let origins_axis = |n: usize| -> Vec<usize> {
        if n <= tile {
            return vec![0];
        }
        let stride = tile - overlap;
        let mut os = Vec::new();
        let mut o = 0;
        while o + tile < n {
            os.push(o);
            o += stride;
        }
        os.push(n - tile);
        os.dedup();
        os
    };
    let ox = origins_axis(vol.shape[0]);
    let oy = origins_axis(vol.shape[1]);
    let oz = origins_axis(vol.shape[2]);

    // Per-axis blend weight inside a tile: zero in the trimmed seam
    // margin, a linear ramp across the rest of the overlap, one in the
    // interior. Faces on the volume boundary keep full weight.
    let axis_weight = |i: usize, extent: usize, at_lo: bool, at_hi: bool| -> f64 {
        let ramp = (overlap - margin) as f64;
        let lo = if at_lo {
            1.0
        } else if i < margin {
            0.0
        } else {
            (((i - margin) as f64 + 1.0) / (ramp - margin as f64 + 1.0).max(1.0)).min(1.0)
        };
        let j = extent - 1 - i;
        let hi = if at_hi {
            1.0
        } else if j < margin {
            0.0
        } else {
            (((j - margin) as f64 + 1.0) / (ramp - margin as f64 + 1.0).max(1.0)).min(1.0)
        };
        lo.min(hi)
    };

    let mut acc = vec![crate::Complex64::new(0.0, 0.0); vol.len()];
    let mut wsum = vec![0.0f64; vol.len()];
    for &z0 in &oz {
        for &y0 in &oy {
            for &x0 in &ox {
                let ex = tile.min(vol.shape[0]);
                let ey = tile.min(vol.shape[1]);
                let ez = tile.min(vol.shape[2]);
                let mut sub = ComplexVolume::zeros([ex, ey, ez])?;
                for z in 0..ez {
                    for y in 0..ey {
                        let src = vol.idx(x0, y0 + y, z0 + z);
                        let dst = sub.idx(0, y, z);
                        sub.data[dst..dst + ex].copy_from_slice(&vol.data[src..src + ex]);
                    }
                }
                let out = super::net_forward(p, &sub)?;
                for z in 0..ez {
                    let wz = axis_weight(z, ez, z0 == 0, z0 + ez == vol.shape[2]);
                    for y in 0..ey {
                        let wy = axis_weight(y, ey, y0 == 0, y0 + ey == vol.shape[1]);
                        for x in 0..ex {
                            let wx = axis_weight(x, ex, x0 == 0, x0 + ex == vol.shape[0]);
                            let w = wx * wy * wz;
                            if w > 0.0 {
                                let i = vol.idx(x0 + x, y0 + y, z0 + z);
                                acc[i] += out.at(x, y, z) * w;
                                wsum[i] += w;
                            }
                        }
                    }
                }
            }
        }
    }
    for (v, &w) in acc.iter_mut().zip(&wsum) {
        debug_assert!(w > 0.0, "tiling must cover every voxel");
        *v /= w;
    }
    let mut out = ComplexVolume::from_data(vol.shape, acc)?;
    out.spacing_mm = vol.spacing_mm;
    Ok(out)
}
