//! The off-resonance signal equation.
//!
//! Discretized over voxels, the signal sampled at time `t_j` on k-space
//! position `k_j` is
//!
//! ```text
//! s(t_j) = sum_r M(r) exp(-2 pi i k_j.r/N) exp(-2 pi i f(r) t_j)
//! ```
//!
//! with the field map `f` in Hz and centered voxel coordinates `r`. Off
//! resonance therefore accrues phase along the readout and turns the point
//! response into a spatially-varying blur. [`forward_exact`] evaluates the
//! double sum directly and serves as the oracle; [`forward_freq_segmented`]
//! approximates it with one NUFFT per frequency bin.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{invalid, mismatch, Result};
use crate::recon::{grid_forward, GridParams};
use crate::trajectory::ConesTrajectory;
use crate::volume::{ComplexVolume, FieldMap};
use crate::Complex64;

/// Complex sample values aligned index-for-index with a trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct KSpaceData {
    pub values: Vec<Complex64>,
    /// Identifier of the trajectory the samples belong to.
    pub traj_ref: String,
}

impl KSpaceData {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub(crate) fn check_aligned(&self, traj: &ConesTrajectory) -> Result<()> {
        if self.values.len() != traj.len() {
            return Err(mismatch(alloc::format!(
                "k-space data has {} values but trajectory has {} samples",
                self.values.len(),
                traj.len()
            )));
        }
        Ok(())
    }

    pub fn rel_l2_error(&self, reference: &KSpaceData) -> Result<f64> {
        if self.values.len() != reference.values.len() {
            return Err(mismatch("k-space data lengths differ"));
        }
        let mut num = 0.0;
        let mut den = 0.0;
        for (a, b) in self.values.iter().zip(&reference.values) {
            num += (a - b).norm_sqr();
            den += b.norm_sqr();
        }
        if den == 0.0 {
            return Err(invalid("reference k-space has zero norm"));
        }
        Ok((num / den).sqrt())
    }
}

/// Default work guard: nonzero voxels x samples.
pub const EXACT_COST_LIMIT: u128 = 1 << 28;

/// Direct evaluation of the off-resonance signal equation. Zero voxels are
/// skipped, so point sources are cheap; the guard counts nonzero voxels.
pub fn forward_exact(
    img: &ComplexVolume,
    fmap: &FieldMap,
    traj: &ConesTrajectory,
) -> Result<KSpaceData> {
    forward_exact_with_limit(img, fmap, traj, EXACT_COST_LIMIT)
}

pub fn forward_exact_with_limit(
    img: &ComplexVolume,
    fmap: &FieldMap,
    traj: &ConesTrajectory,
    limit: u128,
) -> Result<KSpaceData> {
    check_inputs(img, fmap, traj)?;
    let n = img.shape[0];
    let half = (n / 2) as f64;

    // Gather nonzero voxels with their centered coordinates and frequency.
    let mut voxels: Vec<([f64; 3], Complex64, f64)> = Vec::new();
    for z in 0..n {
        for y in 0..n {
            for x in 0..n {
                let m = img.at(x, y, z);
                if m.re != 0.0 || m.im != 0.0 {
                    let f = fmap.data[img.idx(x, y, z)];
                    voxels.push(([x as f64 - half, y as f64 - half, z as f64 - half], m, f));
                }
            }
        }
    }
    let cost = voxels.len() as u128 * traj.len() as u128;
    if cost > limit {
        return Err(crate::Error::SizeGuard { cost, limit });
    }

    let two_pi_over_n = 2.0 * core::f64::consts::PI / n as f64;
    let two_pi = 2.0 * core::f64::consts::PI;
    let chunk = voxels.len().div_ceil(8).max(1);
    let parts = crate::par::map_chunks(&voxels, chunk, |_, vox| {
        let mut acc = vec![Complex64::new(0.0, 0.0); traj.len()];
        for &(r, m, f) in vox {
            let cx = -two_pi_over_n * r[0];
            let cy = -two_pi_over_n * r[1];
            let cz = -two_pi_over_n * r[2];
            let cf = -two_pi * f;
            for (j, s) in traj.samples.iter().enumerate() {
                let ang = cx * s[0] + cy * s[1] + cz * s[2] + cf * traj.timestamps[j];
                acc[j] += m * Complex64::new(ang.cos(), ang.sin());
            }
        }
        acc
    });
    let mut values = vec![Complex64::new(0.0, 0.0); traj.len()];
    for p in parts {
        for (a, b) in values.iter_mut().zip(&p) {
            *a += b;
        }
    }
    Ok(KSpaceData { values, traj_ref: traj.meta.id.clone() })
}

/// Frequency-segmented forward model: voxels are partitioned into
/// `n_bins` equal-width bins over the field map's range, each bin's masked
/// image goes through one NUFFT and is modulated at the bin center
/// frequency. Converges to [`forward_exact`] as `n_bins` grows.
pub fn forward_freq_segmented(
    img: &ComplexVolume,
    fmap: &FieldMap,
    traj: &ConesTrajectory,
    n_bins: usize,
) -> Result<KSpaceData> {
    forward_freq_segmented_with_params(img, fmap, traj, n_bins, &GridParams::default())
}

pub fn forward_freq_segmented_with_params(
    img: &ComplexVolume,
    fmap: &FieldMap,
    traj: &ConesTrajectory,
    n_bins: usize,
    params: &GridParams,
) -> Result<KSpaceData> {
    check_inputs(img, fmap, traj)?;
    if n_bins < 1 {
        return Err(invalid("n_bins must be >= 1"));
    }
    let (lo, hi) = fmap.min_max();
    let width = (hi - lo) / n_bins as f64;

    // Nearest-bin (hard) assignment; a zero-width range collapses to a
    // single bin at the constant frequency.
    let bin_of = |f: f64| -> usize {
        if width <= 0.0 {
            0
        } else {
            (((f - lo) / width) as usize).min(n_bins - 1)
        }
    };

    let mut values = vec![Complex64::new(0.0, 0.0); traj.len()];
    for b in 0..n_bins {
        let mut masked = ComplexVolume::zeros(img.shape)?;
        let mut occupied = false;
        for (i, v) in img.data.iter().enumerate() {
            if bin_of(fmap.data[i]) == b {
                masked.data[i] = *v;
                occupied = occupied || v.re != 0.0 || v.im != 0.0;
            }
        }
        if !occupied {
            continue;
        }
        let f_bin = if width <= 0.0 { lo } else { lo + (b as f64 + 0.5) * width };
        let ks_bin = grid_forward(&masked, traj, params)?;
        let phases = phase_factors(traj, f_bin, -1.0);
        for ((out, v), ph) in values.iter_mut().zip(&ks_bin.values).zip(&phases) {
            *out += v * ph;
        }
        if width <= 0.0 {
            break;
        }
    }
    Ok(KSpaceData { values, traj_ref: traj.meta.id.clone() })
}

fn phase_factors(traj: &ConesTrajectory, f_hz: f64, sign: f64) -> Vec<Complex64> {
    let c = sign * 2.0 * core::f64::consts::PI * f_hz;
    traj.timestamps
        .iter()
        .map(|&t| {
            let ang = c * t;
            Complex64::new(ang.cos(), ang.sin())
        })
        .collect()
}

/// Multiply the data by `exp(-2 pi i f0 t_j)`: inject a global, zero-order
/// off-resonance frequency.
pub fn add_global_offres(ks: &KSpaceData, traj: &ConesTrajectory, f0_hz: f64) -> Result<KSpaceData> {
    ks.check_aligned(traj)?;
    if !f0_hz.is_finite() {
        return Err(invalid("frequency must be finite"));
    }
    let phases = phase_factors(traj, f0_hz, -1.0);
    Ok(KSpaceData {
        values: ks.values.iter().zip(&phases).map(|(v, p)| v * p).collect(),
        traj_ref: ks.traj_ref.clone(),
    })
}

/// Multiply the data by `exp(+2 pi i f t_j)`: exact inverse of
/// [`add_global_offres`] at the same frequency.
pub fn demodulate_global(ks: &KSpaceData, traj: &ConesTrajectory, f_hz: f64) -> Result<KSpaceData> {
    ks.check_aligned(traj)?;
    if !f_hz.is_finite() {
        return Err(invalid("frequency must be finite"));
    }
    // Conjugate of the injection factors so the round trip cancels exactly.
    let phases = phase_factors(traj, f_hz, -1.0);
    Ok(KSpaceData {
        values: ks.values.iter().zip(&phases).map(|(v, p)| v * p.conj()).collect(),
        traj_ref: ks.traj_ref.clone(),
    })
}

/// Additive complex Gaussian noise with a deterministic seed.
pub fn add_complex_noise(ks: &KSpaceData, sigma: f64, seed: u64) -> Result<KSpaceData> {
    if !(sigma >= 0.0) {
        return Err(invalid("noise sigma must be nonnegative"));
    }
    let mut rng = crate::rng::Rng::new(seed);
    Ok(KSpaceData {
        values: ks
            .values
            .iter()
            .map(|v| v + Complex64::new(sigma * rng.normal(), sigma * rng.normal()))
            .collect(),
        traj_ref: ks.traj_ref.clone(),
    })
}

/// Spatially-localized point spread function: simulate a point source at
/// `location` under constant off-resonance `f0_hz` and reconstruct with
/// gridding.
pub fn psf_local(
    traj: &ConesTrajectory,
    location: [usize; 3],
    f0_hz: f64,
    shape: [usize; 3],
) -> Result<ComplexVolume> {
    let delta = crate::phantom::delta_phantom(shape, location)?;
    let fmap = FieldMap::constant(shape, f0_hz)?;
    let ks = forward_exact(&delta, &fmap, traj)?;
    crate::recon::grid_adjoint(&ks, traj, shape, &GridParams::default())
}

/// Radius of the ball around `center` containing `frac` of the volume's
/// energy (|v|^2), in voxels.
pub fn energy_radius(vol: &ComplexVolume, center: [usize; 3], frac: f64) -> f64 {
    let mut pairs: Vec<(f64, f64)> = Vec::with_capacity(vol.len());
    let [nx, ny, nz] = vol.shape;
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let dx = x as f64 - center[0] as f64;
                let dy = y as f64 - center[1] as f64;
                let dz = z as f64 - center[2] as f64;
                pairs.push((dx * dx + dy * dy + dz * dz, vol.at(x, y, z).norm_sqr()));
            }
        }
    }
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let total: f64 = pairs.iter().map(|p| p.1).sum();
    let mut acc = 0.0;
    for (d2, e) in pairs {
        acc += e;
        if acc >= frac * total {
            return d2.sqrt();
        }
    }
    f64::INFINITY
}

fn check_inputs(img: &ComplexVolume, fmap: &FieldMap, traj: &ConesTrajectory) -> Result<()> {
    if img.shape != fmap.shape {
        return Err(mismatch("image and field map shapes differ"));
    }
    let n = traj.meta.grid_size;
    if img.shape != [n, n, n] {
        return Err(mismatch(alloc::format!(
            "image shape {:?} does not match trajectory grid size {n}",
            img.shape
        )));
    }
    if traj.is_empty() {
        return Err(invalid("empty trajectory"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::delta_phantom;
    use crate::trajectory::generate_cones;

    fn rand_volume(shape: [usize; 3], seed: u64) -> ComplexVolume {
        let mut rng = crate::rng::Rng::new(seed);
        let data = (0..shape.iter().product())
            .map(|_| Complex64::new(rng.normal(), rng.normal()))
            .collect();
        ComplexVolume::from_data(shape, data).unwrap()
    }

    fn smooth_map(shape: [usize; 3], f_max: f64, seed: u64) -> FieldMap {
        crate::phantom::gen_field_map(shape, f_max, 3, seed).unwrap()
    }

    fn test_traj(n: usize) -> ConesTrajectory {
        generate_cones(n / 2, 4, n * 4, 1.0e-3, 2.0, n).unwrap()
    }

    #[test]
    fn constant_field_factorizes_as_global_phase() {
        let traj = test_traj(16);
        let img = rand_volume([16, 16, 16], 1);
        let zero = FieldMap::zeros([16, 16, 16]).unwrap();
        let constant = FieldMap::constant([16, 16, 16], 137.0).unwrap();

        let base = forward_exact(&img, &zero, &traj).unwrap();
        let direct = forward_exact(&img, &constant, &traj).unwrap();
        let factored = add_global_offres(&base, &traj, 137.0).unwrap();
        let rel = direct.rel_l2_error(&factored).unwrap();
        assert!(rel < 1e-10, "factorization error {rel}");
    }

    #[test]
    fn delta_gives_unit_modulus_samples() {
        let traj = test_traj(16);
        let img = delta_phantom([16, 16, 16], [4, 9, 8]).unwrap();
        let zero = FieldMap::zeros([16, 16, 16]).unwrap();
        let ks = forward_exact(&img, &zero, &traj).unwrap();
        for v in &ks.values {
            assert!((v.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn forward_is_linear() {
        let traj = test_traj(16);
        let zero = FieldMap::zeros([16, 16, 16]).unwrap();
        let x = rand_volume([16, 16, 16], 2);
        let y = rand_volume([16, 16, 16], 3);
        let mut comb = ComplexVolume::zeros([16, 16, 16]).unwrap();
        let (a, b) = (Complex64::new(0.3, -1.1), Complex64::new(-2.0, 0.7));
        for i in 0..comb.data.len() {
            comb.data[i] = a * x.data[i] + b * y.data[i];
        }
        let fx = forward_exact(&x, &zero, &traj).unwrap();
        let fy = forward_exact(&y, &zero, &traj).unwrap();
        let fc = forward_exact(&comb, &zero, &traj).unwrap();
        let mut num = 0.0;
        let mut den = 0.0;
        for j in 0..fc.values.len() {
            num += (fc.values[j] - a * fx.values[j] - b * fy.values[j]).norm_sqr();
            den += fc.values[j].norm_sqr();
        }
        assert!((num / den).sqrt() < 1e-10);
    }

    #[test]
    fn inject_demodulate_round_trip() {
        let traj = test_traj(16);
        let img = rand_volume([16, 16, 16], 5);
        let zero = FieldMap::zeros([16, 16, 16]).unwrap();
        let s = forward_exact(&img, &zero, &traj).unwrap();
        let f = 423.7;
        let round = demodulate_global(&add_global_offres(&s, &traj, f).unwrap(), &traj, f).unwrap();
        let rel = round.rel_l2_error(&s).unwrap();
        assert!(rel < 1e-14, "round trip error {rel}");

        let neg = add_global_offres(&add_global_offres(&s, &traj, f).unwrap(), &traj, -f).unwrap();
        assert!(neg.rel_l2_error(&s).unwrap() < 1e-14);

        let id = add_global_offres(&s, &traj, 0.0).unwrap();
        assert_eq!(id.values, s.values);
    }

    #[test]
    fn freq_segmented_single_bin_constant_map() {
        let traj = test_traj(16);
        let img = rand_volume([16, 16, 16], 6);
        let constant = FieldMap::constant([16, 16, 16], -250.0).unwrap();
        let exact = forward_exact(&img, &constant, &traj).unwrap();
        let fast = forward_freq_segmented(&img, &constant, &traj, 1).unwrap();
        let rel = fast.rel_l2_error(&exact).unwrap();
        assert!(rel < 5e-3, "single-bin error {rel}");
    }

    #[test]
    fn freq_segmented_zero_map_ignores_bin_count() {
        let traj = test_traj(16);
        let img = rand_volume([16, 16, 16], 7);
        let zero = FieldMap::zeros([16, 16, 16]).unwrap();
        let a = forward_freq_segmented(&img, &zero, &traj, 1).unwrap();
        let b = forward_freq_segmented(&img, &zero, &traj, 16).unwrap();
        assert_eq!(a.values, b.values);
    }

    #[test]
    fn freq_segmented_error_decreases_with_bins() {
        let traj = test_traj(16);
        let img = rand_volume([16, 16, 16], 8);
        let fmap = smooth_map([16, 16, 16], 120.0, 9);
        let exact = forward_exact(&img, &fmap, &traj).unwrap();
        let mut last = f64::INFINITY;
        for bins in [2usize, 4, 8, 16] {
            let fast = forward_freq_segmented(&img, &fmap, &traj, bins).unwrap();
            let rel = fast.rel_l2_error(&exact).unwrap();
            assert!(rel < last, "bins {bins}: {rel} !< {last}");
            last = rel;
        }
    }

    #[test]
    fn size_guard_rejects_big_inputs() {
        let traj = test_traj(16);
        let img = rand_volume([16, 16, 16], 10);
        let zero = FieldMap::zeros([16, 16, 16]).unwrap();
        let err = forward_exact_with_limit(&img, &zero, &traj, 100).unwrap_err();
        assert!(matches!(err, crate::Error::SizeGuard { .. }));
    }

    #[test]
    fn psf_is_local_and_asymmetric_in_frequency() {
        // Needs a trajectory with enough twist for shell coverage.
        let traj = crate::trajectory::refine_dcf_pipemenon(
            &generate_cones(24, 2, 512, 1.0e-3, 10.0, 16).unwrap(),
            10,
            3.0,
        )
        .unwrap();
        let psf0 = psf_local(&traj, [8, 8, 8], 0.0, [16, 16, 16]).unwrap();
        // On resonance the peak sits at the source location.
        let peak = psf0.at(8, 8, 8).norm();
        let mut max_side = 0.0f64;
        for z in 0..16 {
            for y in 0..16 {
                for x in 0..16 {
                    let d2 = (x as i64 - 8).pow(2) + (y as i64 - 8).pow(2) + (z as i64 - 8).pow(2);
                    if d2 > 4 {
                        max_side = max_side.max(psf0.at(x, y, z).norm());
                    }
                }
            }
        }
        assert!(peak / max_side > 5.0, "peak {peak} sidelobe {max_side}");

        // Off-center source: the kernel is measured at that location.
        let off = psf_local(&traj, [4, 10, 7], 0.0, [16, 16, 16]).unwrap();
        let mut peak_at = [0usize; 3];
        let mut peak_val = 0.0;
        for z in 0..16 {
            for y in 0..16 {
                for x in 0..16 {
                    let v = off.at(x, y, z).norm();
                    if v > peak_val {
                        peak_val = v;
                        peak_at = [x, y, z];
                    }
                }
            }
        }
        assert_eq!(peak_at, [4, 10, 7]);

        let plus = psf_local(&traj, [8, 8, 8], 400.0, [16, 16, 16]).unwrap();
        let minus = psf_local(&traj, [8, 8, 8], -400.0, [16, 16, 16]).unwrap();
        let diff = plus.rel_l2_error(&minus).unwrap();
        assert!(diff > 1e-3, "psf(+f) and psf(-f) should differ, diff {diff}");
    }

    #[test]
    fn noise_is_seeded() {
        let traj = test_traj(16);
        let img = rand_volume([16, 16, 16], 12);
        let zero = FieldMap::zeros([16, 16, 16]).unwrap();
        let s = forward_exact(&img, &zero, &traj).unwrap();
        let a = add_complex_noise(&s, 0.1, 77).unwrap();
        let b = add_complex_noise(&s, 0.1, 77).unwrap();
        let c = add_complex_noise(&s, 0.1, 78).unwrap();
        assert_eq!(a.values, b.values);
        assert_ne!(a.values, c.values);
    }
}
