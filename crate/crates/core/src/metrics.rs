//! Image quality metrics (NRMSE, SSIM, PSNR) and the iterated-application
//! hallucination diagnostic.
//!
//! All three metrics compare magnitude volumes, so a benign global phase
//! on otherwise identical images scores perfectly.

use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{invalid, mismatch, Result};
use crate::network::{apply, NetParams, Scalar};
use crate::volume::{gaussian_smooth_real, ComplexVolume};

/// `|| |x| - |ref| ||_2 / || |ref| ||_2`.
pub fn nrmse(x: &ComplexVolume, reference: &ComplexVolume) -> Result<f64> {
    if x.shape != reference.shape {
        return Err(mismatch("nrmse operands differ in shape"));
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for (a, b) in x.data.iter().zip(&reference.data) {
        let d = a.norm() - b.norm();
        num += d * d;
        den += b.norm_sqr();
    }
    if den == 0.0 {
        return Err(invalid("reference has zero norm"));
    }
    Ok((num / den).sqrt())
}

/// `20 log10(max|ref| / rmse)`; identical inputs give `f64::INFINITY`.
pub fn psnr(x: &ComplexVolume, reference: &ComplexVolume) -> Result<f64> {
    if x.shape != reference.shape {
        return Err(mismatch("psnr operands differ in shape"));
    }
    let peak = reference.max_abs();
    if peak == 0.0 {
        return Err(invalid("reference has zero peak"));
    }
    let mut mse = 0.0;
    for (a, b) in x.data.iter().zip(&reference.data) {
        let d = a.norm() - b.norm();
        mse += d * d;
    }
    mse /= x.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(20.0 * (peak / mse.sqrt()).log10())
}

/// Mean structural similarity over the volume with Gaussian-weighted local
/// statistics (sigma 1.5 voxels) and the conventional constants.
pub fn ssim(x: &ComplexVolume, reference: &ComplexVolume) -> Result<f64> {
    ssim_with(x, reference, 1.5, 0.01, 0.03, None)
}

/// SSIM with explicit window sigma, k1/k2 and dynamic range; `None` uses
/// `max |ref|`.
pub fn ssim_with(
    x: &ComplexVolume,
    reference: &ComplexVolume,
    window_sigma: f64,
    k1: f64,
    k2: f64,
    dynamic_range: Option<f64>,
) -> Result<f64> {
    if x.shape != reference.shape {
        return Err(mismatch("ssim operands differ in shape"));
    }
    if !(window_sigma > 0.0) {
        return Err(invalid("window sigma must be positive"));
    }
    let shape = x.shape;
    let a: Vec<f64> = x.data.iter().map(|v| v.norm()).collect();
    let b: Vec<f64> = reference.data.iter().map(|v| v.norm()).collect();
    let l = dynamic_range.unwrap_or_else(|| b.iter().cloned().fold(0.0, f64::max));
    if l == 0.0 {
        return Err(invalid("zero dynamic range"));
    }
    let c1 = (k1 * l) * (k1 * l);
    let c2 = (k2 * l) * (k2 * l);

    let smooth = |v: &[f64]| gaussian_smooth_real(v, shape, window_sigma);
    let mu_a = smooth(&a);
    let mu_b = smooth(&b);
    let aa: Vec<f64> = a.iter().map(|v| v * v).collect();
    let bb: Vec<f64> = b.iter().map(|v| v * v).collect();
    let ab: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x * y).collect();
    let e_aa = smooth(&aa);
    let e_bb = smooth(&bb);
    let e_ab = smooth(&ab);

    let mut acc = 0.0;
    for i in 0..a.len() {
        let va = e_aa[i] - mu_a[i] * mu_a[i];
        let vb = e_bb[i] - mu_b[i] * mu_b[i];
        let cov = e_ab[i] - mu_a[i] * mu_b[i];
        let s = ((2.0 * mu_a[i] * mu_b[i] + c1) * (2.0 * cov + c2))
            / ((mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + c1) * (va + vb + c2));
        acc += s;
    }
    Ok(acc / a.len() as f64)
}

/// Consecutive-application diagnostic: feed the corrector its own output
/// `n` times. Returns the volumes, the NRMS of each consecutive
/// difference, and those NRMS values normalized by the first one. Ratios
/// near zero mean the corrector is close to idempotent, i.e. it is not
/// inventing new structure on every pass.
#[derive(Debug, Clone)]
pub struct IterateReport {
    pub volumes: Vec<ComplexVolume>,
    pub diff_nrms: Vec<f64>,
    pub ratios: Vec<f64>,
}

pub fn iterate_apply<T: Scalar>(
    p: &NetParams<T>,
    vol: &ComplexVolume,
    n: usize,
) -> Result<IterateReport> {
    if n < 2 {
        return Err(invalid("iterate_apply needs n >= 2"));
    }
    let tile = *vol.shape.iter().max().unwrap();
    let overlap = (p.cfg.kernel - 1).max(1);
    let mut volumes = alloc::vec![vol.clone()];
    let mut diff_nrms = Vec::with_capacity(n);
    for _ in 0..n {
        let next = apply(p, volumes.last().unwrap(), tile, overlap)?;
        let prev = volumes.last().unwrap();
        let mut acc = 0.0;
        for (a, b) in next.data.iter().zip(&prev.data) {
            acc += (a - b).norm_sqr();
        }
        diff_nrms.push((acc / next.len() as f64).sqrt());
        volumes.push(next);
    }
    let first = diff_nrms[0];
    let ratios = diff_nrms
        .iter()
        .map(|&d| if first > 0.0 { d / first } else { if d > 0.0 { f64::INFINITY } else { 0.0 } })
        .collect();
    Ok(IterateReport { volumes, diff_nrms, ratios })
}
