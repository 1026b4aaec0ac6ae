//! Direct 3D convolution kernels (zero padding, stride 1).
//!
//! For each (output channel, input channel, kz, ky) pair the kernel's x
//! taps are fused into one pass over contiguous rows, split into guarded
//! border columns and an unguarded interior that autovectorizes. Work is
//! parallelized over independent output (or input) channels, which keeps
//! results bit-identical for any thread count.

use alloc::vec;
use alloc::vec::Vec;

use super::{ConvLayer, Scalar, Tensor4};

/// Valid output range along one axis for a kernel offset `d`: indices o
/// with `0 <= o + d < n`.
#[inline]
fn valid_range(n: usize, d: isize) -> (usize, usize) {
    let lo = if d < 0 { (-d) as usize } else { 0 };
    let hi = if d > 0 { n.saturating_sub(d as usize) } else { n };
    (lo, hi.max(lo))
}

/// dw[kx] += sum_x g_row[x] * in_row[x + kx - r] over the valid range.
///
/// Four independent accumulators per tap so the reduction vectorizes.
#[inline]
fn row_conv_weights<T: Scalar>(dw: &mut [T], g_row: &[T], in_row: &[T], r: usize) {
    let nx = g_row.len();
    for (t, slot) in dw.iter_mut().enumerate() {
        let d = t as isize - r as isize;
        let (lo, hi) = valid_range(nx, d);
        if lo >= hi {
            continue;
        }
        let g = &g_row[lo..hi];
        let s = &in_row[(lo as isize + d) as usize..(hi as isize + d) as usize];
        let mut acc = [T::zero(); 4];
        let mut i = 0;
        while i + 4 <= g.len() {
            acc[0] += g[i] * s[i];
            acc[1] += g[i + 1] * s[i + 1];
            acc[2] += g[i + 2] * s[i + 2];
            acc[3] += g[i + 3] * s[i + 3];
            i += 4;
        }
        let mut tail = T::zero();
        while i < g.len() {
            tail += g[i] * s[i];
            i += 1;
        }
        *slot += ((acc[0] + acc[1]) + (acc[2] + acc[3])) + tail;
    }
}

/// Accumulate `w * in` into `out` where the input plane is shifted by
/// (dz, dy, dx); loops run over the valid output region with the x loop as
/// a contiguous multiply-add that autovectorizes.
#[inline]
#[allow(clippy::too_many_arguments)]
fn shifted_saxpy<T: Scalar>(
    out: &mut [T],
    inp: &[T],
    shape: [usize; 3],
    dz: isize,
    dy: isize,
    dx: isize,
    w: T,
) {
    let [nx, ny, nz] = shape;
    let (z_lo, z_hi) = valid_range(nz, dz);
    let (y_lo, y_hi) = valid_range(ny, dy);
    let (x_lo, x_hi) = valid_range(nx, dx);
    if x_lo >= x_hi {
        return;
    }
    let len = x_hi - x_lo;
    for z in z_lo..z_hi {
        let zi = (z as isize + dz) as usize;
        for y in y_lo..y_hi {
            let yi = (y as isize + dy) as usize;
            let o = nx * (y + ny * z) + x_lo;
            let i = (nx as isize * (yi + ny * zi) as isize + dx + x_lo as isize) as usize;
            let dst = &mut out[o..o + len];
            let src = &inp[i..i + len];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += w * *s;
            }
        }
    }
}

/// out[co][p] = b[co] + sum_ci sum_k w[co][ci][k] * in[ci][p + k - r]
pub(crate) fn conv_forward<T: Scalar>(layer: &ConvLayer<T>, input: &Tensor4<T>) -> Tensor4<T> {
    debug_assert_eq!(layer.c_in, input.channels);
    let [nx, ny, nz] = input.shape;
    let sp = nx * ny * nz;
    let k = layer.kernel;
    let r = (k / 2) as isize;
    let k3 = k * k * k;

    let channels = crate::par::map_indices(layer.c_out, |co| {
        let mut out = vec![layer.b[co]; sp];
        for ci in 0..layer.c_in {
            let in_ch = &input.data[ci * sp..(ci + 1) * sp];
            let w_base = (co * layer.c_in + ci) * k3;
            for kz in 0..k {
                for ky in 0..k {
                    for kx in 0..k {
                        let w = layer.w[w_base + kx + k * (ky + k * kz)];
                        if w == T::zero() {
                            continue;
                        }
                        shifted_saxpy(
                            &mut out,
                            in_ch,
                            input.shape,
                            kz as isize - r,
                            ky as isize - r,
                            kx as isize - r,
                            w,
                        );
                    }
                }
            }
        }
        out
    });

    let mut data = Vec::with_capacity(layer.c_out * sp);
    for ch in channels {
        data.extend_from_slice(&ch);
    }
    Tensor4 { channels: layer.c_out, shape: input.shape, data }
}

/// d_in[ci][q] = sum_co sum_k w[co][ci][k] * d_out[co][q - (k - r)]
pub(crate) fn conv_backward_input<T: Scalar>(layer: &ConvLayer<T>, d_out: &Tensor4<T>) -> Tensor4<T> {
    debug_assert_eq!(layer.c_out, d_out.channels);
    let [nx, ny, nz] = d_out.shape;
    let sp = nx * ny * nz;
    let k = layer.kernel;
    let r = (k / 2) as isize;
    let k3 = k * k * k;

    let channels = crate::par::map_indices(layer.c_in, |ci| {
        let mut out = vec![T::zero(); sp];
        for co in 0..layer.c_out {
            let g_ch = &d_out.data[co * sp..(co + 1) * sp];
            let w_base = (co * layer.c_in + ci) * k3;
            for kz in 0..k {
                for ky in 0..k {
                    for kx in 0..k {
                        let w = layer.w[w_base + kx + k * (ky + k * kz)];
                        if w == T::zero() {
                            continue;
                        }
                        shifted_saxpy(
                            &mut out,
                            g_ch,
                            d_out.shape,
                            r - kz as isize,
                            r - ky as isize,
                            r - kx as isize,
                            w,
                        );
                    }
                }
            }
        }
        out
    });

    let mut data = Vec::with_capacity(layer.c_in * sp);
    for ch in channels {
        data.extend_from_slice(&ch);
    }
    Tensor4 { channels: layer.c_in, shape: d_out.shape, data }
}

/// dW[co][ci][k] = sum_p d_out[co][p] * in[ci][p + k - r];  db[co] = sum_p d_out[co][p]
pub(crate) fn conv_backward_weights<T: Scalar>(
    layer: &ConvLayer<T>,
    input: &Tensor4<T>,
    d_out: &Tensor4<T>,
) -> (Vec<T>, Vec<T>) {
    debug_assert_eq!(layer.c_in, input.channels);
    debug_assert_eq!(layer.c_out, d_out.channels);
    let [nx, ny, nz] = input.shape;
    let sp = nx * ny * nz;
    let k = layer.kernel;
    let r = k / 2;
    let k3 = k * k * k;

    let per_co = crate::par::map_indices(layer.c_out, |co| {
        let g_ch = &d_out.data[co * sp..(co + 1) * sp];
        let mut dw = vec![T::zero(); layer.c_in * k3];
        let db: T = g_ch.iter().copied().sum();
        for ci in 0..layer.c_in {
            let in_ch = &input.data[ci * sp..(ci + 1) * sp];
            for kz in 0..k {
                let dz = kz as isize - r as isize;
                let (z_lo, z_hi) = valid_range(nz, dz);
                for ky in 0..k {
                    let dy = ky as isize - r as isize;
                    let (y_lo, y_hi) = valid_range(ny, dy);
                    let slot = k * (ky + k * kz) + k3 * ci;
                    for z in z_lo..z_hi {
                        let zi = (z as isize + dz) as usize;
                        for y in y_lo..y_hi {
                            let yi = (y as isize + dy) as usize;
                            let g = nx * (y + ny * z);
                            let i = nx * (yi + ny * zi);
                            row_conv_weights(
                                &mut dw[slot..slot + k],
                                &g_ch[g..g + nx],
                                &in_ch[i..i + nx],
                                r,
                            );
                        }
                    }
                }
            }
        }
        (dw, db)
    });

    let mut dw = vec![T::zero(); layer.c_out * layer.c_in * k3];
    let mut db = vec![T::zero(); layer.c_out];
    for (co, (w_co, b_co)) in per_co.into_iter().enumerate() {
        dw[co * layer.c_in * k3..(co + 1) * layer.c_in * k3].copy_from_slice(&w_co);
        db[co] = b_co;
    }
    (dw, db)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn rand_tensor(channels: usize, shape: [usize; 3], seed: u64) -> Tensor4<f64> {
        let mut rng = Rng::new(seed);
        let data = (0..channels * shape.iter().product::<usize>()).map(|_| rng.normal()).collect();
        Tensor4 { channels, shape, data }
    }

    fn rand_layer(c_in: usize, c_out: usize, k: usize, seed: u64) -> ConvLayer<f64> {
        let mut rng = Rng::new(seed);
        ConvLayer {
            c_in,
            c_out,
            kernel: k,
            w: (0..c_out * c_in * k * k * k).map(|_| rng.normal()).collect(),
            b: (0..c_out).map(|_| rng.normal()).collect(),
        }
    }

    /// Reference convolution: literal five-nested-loops definition.
    fn conv_naive(layer: &ConvLayer<f64>, input: &Tensor4<f64>) -> Tensor4<f64> {
        let [nx, ny, nz] = input.shape;
        let sp = nx * ny * nz;
        let k = layer.kernel;
        let r = (k / 2) as isize;
        let mut out = Tensor4::zeros(layer.c_out, input.shape);
        for co in 0..layer.c_out {
            for z in 0..nz as isize {
                for y in 0..ny as isize {
                    for x in 0..nx as isize {
                        let mut acc = layer.b[co];
                        for ci in 0..layer.c_in {
                            for kz in 0..k as isize {
                                for ky in 0..k as isize {
                                    for kx in 0..k as isize {
                                        let zi = z + kz - r;
                                        let yi = y + ky - r;
                                        let xi = x + kx - r;
                                        if zi < 0
                                            || yi < 0
                                            || xi < 0
                                            || zi >= nz as isize
                                            || yi >= ny as isize
                                            || xi >= nx as isize
                                        {
                                            continue;
                                        }
                                        let w = layer.w[(kx
                                            + k as isize * (ky + k as isize * kz))
                                            as usize
                                            + k * k * k * (ci + layer.c_in * co)];
                                        acc += w
                                            * input.data[ci * sp
                                                + (xi + nx as isize * (yi + ny as isize * zi))
                                                    as usize];
                                    }
                                }
                            }
                        }
                        out.data[co * sp + (x + nx as isize * (y + ny as isize * z)) as usize] =
                            acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn forward_matches_naive() {
        let layer = rand_layer(3, 2, 3, 1);
        let x = rand_tensor(3, [6, 5, 4], 2);
        let got = conv_forward(&layer, &x);
        let want = conv_naive(&layer, &x);
        for (a, b) in got.data.iter().zip(&want.data) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn backward_input_is_adjoint_of_forward() {
        // <conv(x), y> == <x, conv_backward_input(y)> when biases are zero.
        let mut layer = rand_layer(2, 3, 3, 3);
        layer.b = vec![0.0; 3];
        let x = rand_tensor(2, [5, 6, 4], 4);
        let y = rand_tensor(3, [5, 6, 4], 5);
        let ax = conv_forward(&layer, &x);
        let aty = conv_backward_input(&layer, &y);
        let lhs: f64 = ax.data.iter().zip(&y.data).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data.iter().zip(&aty.data).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10 * lhs.abs().max(1.0));
    }

    #[test]
    fn weight_gradient_matches_finite_difference() {
        let layer = rand_layer(2, 2, 3, 6);
        let x = rand_tensor(2, [5, 4, 4], 7);
        let d_out = rand_tensor(2, [5, 4, 4], 8);
        let (dw, db) = conv_backward_weights(&layer, &x, &d_out);

        // Scalar objective: <conv(x), d_out>.
        let objective = |l: &ConvLayer<f64>| -> f64 {
            conv_forward(l, &x).data.iter().zip(&d_out.data).map(|(a, b)| a * b).sum()
        };
        let h = 1e-6;
        for probe in [0usize, 7, 23, dw.len() - 1] {
            let mut lp = layer.clone();
            lp.w[probe] += h;
            let mut lm = layer.clone();
            lm.w[probe] -= h;
            let fd = (objective(&lp) - objective(&lm)) / (2.0 * h);
            assert!((fd - dw[probe]).abs() < 1e-6 * fd.abs().max(1.0), "w[{probe}]");
        }
        let mut lp = layer.clone();
        lp.b[1] += h;
        let mut lm = layer.clone();
        lm.b[1] -= h;
        let fd = (objective(&lp) - objective(&lm)) / (2.0 * h);
        assert!((fd - db[1]).abs() < 1e-6 * fd.abs().max(1.0));
    }
}
