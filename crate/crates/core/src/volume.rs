//! 3D complex volumes and real-valued field maps.
//!
//! Layout is x-fastest (column-major in the file-format sense): the flat
//! index of voxel (x, y, z) is `x + nx*(y + ny*z)`. Image-domain voxel
//! coordinates are centered, i.e. voxel index `x` sits at coordinate
//! `x - nx/2`; the center voxel `nx/2` is the origin.

use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{invalid, mismatch, Result};
use crate::Complex64;

/// Minimum extent per axis for image volumes.
pub const MIN_DIM: usize = 8;

/// 3D complex image or intermediate array with voxel spacing metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexVolume {
    pub shape: [usize; 3],
    /// Voxel size in mm per axis.
    pub spacing_mm: [f64; 3],
    pub data: Vec<Complex64>,
}

impl ComplexVolume {
    pub fn zeros(shape: [usize; 3]) -> Result<Self> {
        check_shape(shape)?;
        Ok(ComplexVolume {
            shape,
            spacing_mm: [1.0; 3],
            data: vec![Complex64::new(0.0, 0.0); shape[0] * shape[1] * shape[2]],
        })
    }

    pub fn from_data(shape: [usize; 3], data: Vec<Complex64>) -> Result<Self> {
        check_shape(shape)?;
        if data.len() != shape[0] * shape[1] * shape[2] {
            return Err(mismatch(alloc::format!(
                "volume data length {} does not match shape {:?}",
                data.len(),
                shape
            )));
        }
        if !data.iter().all(|v| v.re.is_finite() && v.im.is_finite()) {
            return Err(crate::Error::NonFinite("complex volume"));
        }
        Ok(ComplexVolume { shape, spacing_mm: [1.0; 3], data })
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn idx(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.shape[0] * (y + self.shape[1] * z)
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize, z: usize) -> Complex64 {
        self.data[self.idx(x, y, z)]
    }

    #[inline]
    pub fn at_mut(&mut self, x: usize, y: usize, z: usize) -> &mut Complex64 {
        let i = self.idx(x, y, z);
        &mut self.data[i]
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    pub fn mean(&self) -> Complex64 {
        if self.data.is_empty() {
            return Complex64::new(0.0, 0.0);
        }
        self.data.iter().sum::<Complex64>() / self.data.len() as f64
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.re.is_finite() && v.im.is_finite())
    }

    /// ||a - b||_2 / ||b||_2 over the complex values.
    pub fn rel_l2_error(&self, reference: &ComplexVolume) -> Result<f64> {
        if self.shape != reference.shape {
            return Err(mismatch("volumes differ in shape"));
        }
        let mut num = 0.0;
        let mut den = 0.0;
        for (a, b) in self.data.iter().zip(&reference.data) {
            num += (a - b).norm_sqr();
            den += b.norm_sqr();
        }
        if den == 0.0 {
            return Err(invalid("reference volume has zero norm"));
        }
        Ok((num / den).sqrt())
    }
}

/// Per-voxel off-resonance frequency in Hz.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldMap {
    pub shape: [usize; 3],
    pub data: Vec<f64>,
}

impl FieldMap {
    pub fn zeros(shape: [usize; 3]) -> Result<Self> {
        check_shape(shape)?;
        Ok(FieldMap { shape, data: vec![0.0; shape[0] * shape[1] * shape[2]] })
    }

    pub fn constant(shape: [usize; 3], hz: f64) -> Result<Self> {
        if !hz.is_finite() {
            return Err(crate::Error::NonFinite("field map constant"));
        }
        check_shape(shape)?;
        Ok(FieldMap { shape, data: vec![hz; shape[0] * shape[1] * shape[2]] })
    }

    pub fn from_data(shape: [usize; 3], data: Vec<f64>) -> Result<Self> {
        check_shape(shape)?;
        if data.len() != shape[0] * shape[1] * shape[2] {
            return Err(mismatch("field map data length does not match shape"));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(crate::Error::NonFinite("field map"));
        }
        Ok(FieldMap { shape, data })
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|v| v.abs()).fold(0.0, f64::max)
    }

    pub fn min_max(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &v in &self.data {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        (lo, hi)
    }
}

fn check_shape(shape: [usize; 3]) -> Result<()> {
    if shape.iter().any(|&n| n < MIN_DIM) {
        return Err(invalid(alloc::format!(
            "shape {shape:?} below minimum extent {MIN_DIM} per axis"
        )));
    }
    Ok(())
}

/// Separable Gaussian smoothing of a real volume, truncated at 3 sigma.
/// Border handling renormalizes by the in-range kernel mass.
pub fn gaussian_smooth_real(data: &[f64], shape: [usize; 3], sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return data.to_vec();
    }
    let kernel = gaussian_kernel(sigma);
    let mut out = data.to_vec();
    for axis in 0..3 {
        out = smooth_axis_real(&out, shape, axis, &kernel);
    }
    out
}

/// Separable Gaussian smoothing of a complex volume (real and imaginary
/// parts independently).
pub fn gaussian_smooth_complex(data: &[Complex64], shape: [usize; 3], sigma: f64) -> Vec<Complex64> {
    if sigma <= 0.0 {
        return data.to_vec();
    }
    let kernel = gaussian_kernel(sigma);
    let mut out = data.to_vec();
    for axis in 0..3 {
        out = smooth_axis_complex(&out, shape, axis, &kernel);
    }
    out
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as usize;
    let mut k: Vec<f64> = (0..=2 * radius)
        .map(|i| {
            let d = i as f64 - radius as f64;
            (-0.5 * d * d / (sigma * sigma)).exp()
        })
        .collect();
    let sum: f64 = k.iter().sum();
    for v in k.iter_mut() {
        *v /= sum;
    }
    k
}

fn axis_strides(shape: [usize; 3], axis: usize) -> (usize, usize, [usize; 2]) {
    let [nx, ny, nz] = shape;
    match axis {
        0 => (nx, 1, [ny, nz]),
        1 => (ny, nx, [nx, nz]),
        _ => (nz, nx * ny, [nx, ny]),
    }
}

fn lane_base(shape: [usize; 3], axis: usize, a: usize, b: usize) -> usize {
    let [nx, ny, _] = shape;
    match axis {
        0 => nx * (a + ny * b),
        1 => a + nx * ny * b,
        _ => a + nx * b,
    }
}

fn smooth_axis_real(data: &[f64], shape: [usize; 3], axis: usize, kernel: &[f64]) -> Vec<f64> {
    let (n, stride, others) = axis_strides(shape, axis);
    let radius = kernel.len() / 2;
    let mut out = vec![0.0; data.len()];
    for b in 0..others[1] {
        for a in 0..others[0] {
            let base = lane_base(shape, axis, a, b);
            for i in 0..n {
                let mut acc = 0.0;
                let mut mass = 0.0;
                for (t, &kv) in kernel.iter().enumerate() {
                    let j = i as isize + t as isize - radius as isize;
                    if j >= 0 && (j as usize) < n {
                        acc += kv * data[base + j as usize * stride];
                        mass += kv;
                    }
                }
                out[base + i * stride] = acc / mass;
            }
        }
    }
    out
}

fn smooth_axis_complex(
    data: &[Complex64],
    shape: [usize; 3],
    axis: usize,
    kernel: &[f64],
) -> Vec<Complex64> {
    let (n, stride, others) = axis_strides(shape, axis);
    let radius = kernel.len() / 2;
    let mut out = vec![Complex64::new(0.0, 0.0); data.len()];
    for b in 0..others[1] {
        for a in 0..others[0] {
            let base = lane_base(shape, axis, a, b);
            for i in 0..n {
                let mut acc = Complex64::new(0.0, 0.0);
                let mut mass = 0.0;
                for (t, &kv) in kernel.iter().enumerate() {
                    let j = i as isize + t as isize - radius as isize;
                    if j >= 0 && (j as usize) < n {
                        acc += data[base + j as usize * stride] * kv;
                        mass += kv;
                    }
                }
                out[base + i * stride] = acc / mass;
            }
        }
    }
    out
}

/// Embed `vol` in the center of a larger grid of zeros.
pub(crate) fn pad_center(data: &[Complex64], from: [usize; 3], to: [usize; 3]) -> Vec<Complex64> {
    debug_assert!(from.iter().zip(&to).all(|(s, d)| s <= d));
    let mut out = vec![Complex64::new(0.0, 0.0); to[0] * to[1] * to[2]];
    let off: Vec<usize> = (0..3).map(|i| to[i] / 2 - from[i] / 2).collect();
    for z in 0..from[2] {
        for y in 0..from[1] {
            let src = from[0] * (y + from[1] * z);
            let dst = off[0] + to[0] * ((y + off[1]) + to[1] * (z + off[2]));
            out[dst..dst + from[0]].copy_from_slice(&data[src..src + from[0]]);
        }
    }
    out
}

/// Extract the centered sub-volume; inverse of [`pad_center`].
pub(crate) fn crop_center(data: &[Complex64], from: [usize; 3], to: [usize; 3]) -> Vec<Complex64> {
    debug_assert!(to.iter().zip(&from).all(|(s, d)| s <= d));
    let mut out = vec![Complex64::new(0.0, 0.0); to[0] * to[1] * to[2]];
    let off: Vec<usize> = (0..3).map(|i| from[i] / 2 - to[i] / 2).collect();
    for z in 0..to[2] {
        for y in 0..to[1] {
            let src = off[0] + from[0] * ((y + off[1]) + from[1] * (z + off[2]));
            let dst = to[0] * (y + to[1] * z);
            out[dst..dst + to[0]].copy_from_slice(&data[src..src + to[0]]);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_small_shapes() {
        assert!(ComplexVolume::zeros([4, 8, 8]).is_err());
        assert!(FieldMap::zeros([8, 8, 7]).is_err());
        assert!(ComplexVolume::zeros([8, 8, 8]).is_ok());
    }

    #[test]
    fn rejects_non_finite() {
        let mut data = vec![Complex64::new(0.0, 0.0); 512];
        data[3] = Complex64::new(f64::NAN, 0.0);
        assert!(ComplexVolume::from_data([8, 8, 8], data).is_err());
    }

    #[test]
    fn pad_crop_round_trip() {
        let mut rng = crate::rng::Rng::new(1);
        let from = [8, 10, 12];
        let to = [16, 20, 18];
        let data: Vec<Complex64> =
            (0..from.iter().product()).map(|_| Complex64::new(rng.normal(), rng.normal())).collect();
        let padded = pad_center(&data, from, to);
        let back = crop_center(&padded, to, from);
        assert_eq!(data, back);
        // Padding preserves total energy.
        let e0: f64 = data.iter().map(|v| v.norm_sqr()).sum();
        let e1: f64 = padded.iter().map(|v| v.norm_sqr()).sum();
        assert!((e0 - e1).abs() < 1e-12);
    }

    #[test]
    fn gaussian_smoothing_preserves_constants() {
        let shape = [8, 8, 8];
        let data = vec![3.5; 512];
        let sm = gaussian_smooth_real(&data, shape, 2.0);
        for v in sm {
            assert!((v - 3.5).abs() < 1e-12);
        }
    }

    #[test]
    fn gaussian_smoothing_reduces_variance() {
        let mut rng = crate::rng::Rng::new(2);
        let shape = [12, 12, 12];
        let data: Vec<f64> = (0..12 * 12 * 12).map(|_| rng.normal()).collect();
        let sm = gaussian_smooth_real(&data, shape, 1.5);
        let var = |xs: &[f64]| {
            let m = xs.iter().sum::<f64>() / xs.len() as f64;
            xs.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / xs.len() as f64
        };
        assert!(var(&sm) < 0.2 * var(&data));
    }
}
