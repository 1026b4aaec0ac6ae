//! Synthetic complex vessel phantoms and smooth field maps.
//!
//! The phantoms stand in for contrast-enhanced angiography volumes: bright
//! tapering tubes over a dim smooth background, with a low-order polynomial
//! phase so the images are genuinely complex (the autofocus metric depends
//! on the imaginary part after phase removal). All generators are
//! bit-reproducible for a fixed seed.

use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{invalid, Result};
use crate::rng::Rng;
use crate::volume::{ComplexVolume, FieldMap};
use crate::Complex64;

/// Vessel phantom plus the masks used to build it; tests assert on the
/// masks rather than re-deriving them.
#[derive(Debug, Clone)]
pub struct VesselPhantom {
    pub volume: ComplexVolume,
    /// True where a vessel tube dominates the voxel.
    pub vessel_mask: Vec<bool>,
}

/// Generate a complex vessel phantom. See [`gen_vessel_phantom_detailed`]
/// for the variant that also returns the vessel mask.
pub fn gen_vessel_phantom(shape: [usize; 3], n_vessels: usize, seed: u64) -> Result<ComplexVolume> {
    Ok(gen_vessel_phantom_detailed(shape, n_vessels, seed)?.volume)
}

pub fn gen_vessel_phantom_detailed(
    shape: [usize; 3],
    n_vessels: usize,
    seed: u64,
) -> Result<VesselPhantom> {
    if n_vessels < 1 {
        return Err(invalid("n_vessels must be >= 1"));
    }
    let min_dim = *shape.iter().min().unwrap_or(&0);
    if min_dim < 12 {
        return Err(invalid("shape too small to contain a vessel (min extent 12)"));
    }
    let mut vol = ComplexVolume::zeros(shape)?;
    let mut rng = Rng::new(seed);
    let [nx, ny, nz] = shape;

    // Smooth background of soft-edged ellipsoids, magnitudes in [0.1, 0.4].
    let mut magnitude = vec![0.0f64; vol.len()];
    let n_bg = 3 + rng.index(3);
    for _ in 0..n_bg {
        let c = [rng.range(0.2, 0.8) * nx as f64, rng.range(0.2, 0.8) * ny as f64, rng.range(0.2, 0.8) * nz as f64];
        let a = [
            rng.range(0.2, 0.45) * nx as f64,
            rng.range(0.2, 0.45) * ny as f64,
            rng.range(0.2, 0.45) * nz as f64,
        ];
        let amp = rng.range(0.1, 0.4);
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    let q = ((x as f64 - c[0]) / a[0]).powi(2)
                        + ((y as f64 - c[1]) / a[1]).powi(2)
                        + ((z as f64 - c[2]) / a[2]).powi(2);
                    // Logistic edge over ~8% of the radius keeps it smooth.
                    let v = amp / (1.0 + ((q.sqrt() - 1.0) / 0.08).exp());
                    let i = x + nx * (y + ny * z);
                    magnitude[i] = magnitude[i].max(v);
                }
            }
        }
    }

    // Vessels: Catmull-Rom centerlines through a mild random walk, radius
    // tapering toward 1 voxel at the distal end.
    let mut vessel = vec![0.0f64; vol.len()];
    let r_cap = (min_dim as f64 / 4.0).min(6.0);
    for _ in 0..n_vessels {
        let n_ctrl = 4 + rng.index(3);
        let mut ctrl: Vec<[f64; 3]> = Vec::with_capacity(n_ctrl);
        let mut p = [rng.range(0.15, 0.85) * nx as f64, rng.range(0.15, 0.85) * ny as f64, rng.range(0.15, 0.85) * nz as f64];
        let mut dir = random_unit(&mut rng);
        ctrl.push(p);
        let step = 0.3 * min_dim as f64;
        for _ in 1..n_ctrl {
            for (axis, d) in dir.iter_mut().enumerate() {
                *d += 0.6 * rng.normal();
                let _ = axis;
            }
            dir = normalize(dir);
            for a in 0..3 {
                p[a] += dir[a] * step;
                let hi = shape[a] as f64 - 2.0;
                if p[a] < 2.0 {
                    p[a] = 4.0 - p[a];
                    dir[a] = -dir[a];
                } else if p[a] > hi {
                    p[a] = 2.0 * hi - p[a];
                    dir[a] = -dir[a];
                }
            }
            ctrl.push(p);
        }
        let r_start = rng.range(3.0, 6.0).min(r_cap);
        let r_end = 1.0;
        let segments = n_ctrl - 1;
        let steps_per_segment = (4.0 * step) as usize;
        for seg in 0..segments {
            for s in 0..steps_per_segment {
                let t = s as f64 / steps_per_segment as f64;
                let global = (seg as f64 + t) / segments as f64;
                let center = catmull_rom(&ctrl, seg, t);
                let radius = r_end + (r_start - r_end) * (1.0 - global);
                stamp_sphere(&mut vessel, shape, center, radius);
            }
        }
    }

    let vessel_mask: Vec<bool> = vessel.iter().map(|&v| v > 0.5).collect();
    for i in 0..magnitude.len() {
        magnitude[i] = magnitude[i].max(vessel[i]);
    }

    // Low-order polynomial phase in [-pi/2, pi/2].
    let coeffs: Vec<f64> = (0..10).map(|_| rng.range(-1.0, 1.0)).collect();
    let mut phase = vec![0.0f64; vol.len()];
    let mut max_phi = 0.0f64;
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let u = 2.0 * x as f64 / (nx - 1) as f64 - 1.0;
                let v = 2.0 * y as f64 / (ny - 1) as f64 - 1.0;
                let w = 2.0 * z as f64 / (nz - 1) as f64 - 1.0;
                let phi = coeffs[0]
                    + coeffs[1] * u
                    + coeffs[2] * v
                    + coeffs[3] * w
                    + coeffs[4] * u * v
                    + coeffs[5] * v * w
                    + coeffs[6] * u * w
                    + coeffs[7] * u * u
                    + coeffs[8] * v * v
                    + coeffs[9] * w * w;
                phase[x + nx * (y + ny * z)] = phi;
                max_phi = max_phi.max(phi.abs());
            }
        }
    }
    let phase_scale = if max_phi > 0.0 { 0.45 * core::f64::consts::PI / max_phi } else { 0.0 };
    for i in 0..vol.data.len() {
        vol.data[i] = Complex64::from_polar(magnitude[i], phase[i] * phase_scale);
    }
    Ok(VesselPhantom { volume: vol, vessel_mask })
}

fn random_unit(rng: &mut Rng) -> [f64; 3] {
    normalize([rng.normal(), rng.normal(), rng.normal()])
}

fn normalize(v: [f64; 3]) -> [f64; 3] {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt().max(1e-12);
    [v[0] / n, v[1] / n, v[2] / n]
}

/// Catmull-Rom interpolation on control points with clamped ends.
fn catmull_rom(ctrl: &[[f64; 3]], seg: usize, t: f64) -> [f64; 3] {
    let get = |i: isize| -> [f64; 3] { ctrl[i.clamp(0, ctrl.len() as isize - 1) as usize] };
    let p0 = get(seg as isize - 1);
    let p1 = get(seg as isize);
    let p2 = get(seg as isize + 1);
    let p3 = get(seg as isize + 2);
    let t2 = t * t;
    let t3 = t2 * t;
    let mut out = [0.0; 3];
    for a in 0..3 {
        out[a] = 0.5
            * (2.0 * p1[a]
                + (p2[a] - p0[a]) * t
                + (2.0 * p0[a] - 5.0 * p1[a] + 4.0 * p2[a] - p3[a]) * t2
                + (3.0 * p1[a] - p0[a] - 3.0 * p2[a] + p3[a]) * t3);
    }
    out
}

/// Soft-edged sphere: 1 inside, linear falloff over one voxel at the rim.
fn stamp_sphere(field: &mut [f64], shape: [usize; 3], center: [f64; 3], radius: f64) {
    let [nx, ny, nz] = shape;
    let reach = radius + 1.0;
    let lo = |c: f64, n: usize| (((c - reach).floor()).max(0.0) as usize).min(n - 1);
    let hi = |c: f64, n: usize| (((c + reach).ceil()).max(0.0) as usize).min(n - 1);
    for z in lo(center[2], nz)..=hi(center[2], nz) {
        for y in lo(center[1], ny)..=hi(center[1], ny) {
            for x in lo(center[0], nx)..=hi(center[0], nx) {
                let d = ((x as f64 - center[0]).powi(2)
                    + (y as f64 - center[1]).powi(2)
                    + (z as f64 - center[2]).powi(2))
                .sqrt();
                let v = (radius + 0.5 - d).clamp(0.0, 1.0);
                if v > 0.0 {
                    let i = x + nx * (y + ny * z);
                    field[i] = field[i].max(v);
                }
            }
        }
    }
}

/// Smooth synthetic off-resonance map: `n_blobs` Gaussian bumps with
/// random centers, widths and signs, rescaled so `max |value| = f_max`.
pub fn gen_field_map(shape: [usize; 3], f_max_hz: f64, n_blobs: usize, seed: u64) -> Result<FieldMap> {
    gen_field_map_with_ramp(shape, f_max_hz, n_blobs, false, seed)
}

/// [`gen_field_map`] plus an optional linear ramp along x.
pub fn gen_field_map_with_ramp(
    shape: [usize; 3],
    f_max_hz: f64,
    n_blobs: usize,
    ramp: bool,
    seed: u64,
) -> Result<FieldMap> {
    if !(f_max_hz > 0.0) {
        return Err(invalid("f_max must be positive"));
    }
    let mut map = FieldMap::zeros(shape)?;
    let mut rng = Rng::new(seed);
    let [nx, ny, nz] = shape;
    let min_dim = *shape.iter().min().unwrap() as f64;
    for _ in 0..n_blobs {
        let c = [rng.range(0.1, 0.9) * nx as f64, rng.range(0.1, 0.9) * ny as f64, rng.range(0.1, 0.9) * nz as f64];
        let sigma = [
            rng.range(min_dim / 6.0, min_dim / 3.0),
            rng.range(min_dim / 6.0, min_dim / 3.0),
            rng.range(min_dim / 6.0, min_dim / 3.0),
        ];
        let amp = rng.range(0.5, 1.0) * if rng.uniform() < 0.5 { -1.0 } else { 1.0 };
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    let q = ((x as f64 - c[0]) / sigma[0]).powi(2)
                        + ((y as f64 - c[1]) / sigma[1]).powi(2)
                        + ((z as f64 - c[2]) / sigma[2]).powi(2);
                    map.data[x + nx * (y + ny * z)] += amp * (-0.5 * q).exp();
                }
            }
        }
    }
    if ramp {
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    let u = 2.0 * x as f64 / (nx - 1) as f64 - 1.0;
                    map.data[x + nx * (y + ny * z)] += 0.3 * u;
                }
            }
        }
    }
    let peak = map.max_abs();
    if peak > 0.0 {
        let scale = f_max_hz / peak;
        for v in map.data.iter_mut() {
            *v *= scale;
        }
    }
    Ok(map)
}

/// Volume of zeros with a single unit impulse.
pub fn delta_phantom(shape: [usize; 3], location: [usize; 3]) -> Result<ComplexVolume> {
    let mut vol = ComplexVolume::zeros(shape)?;
    if location.iter().zip(&shape).any(|(l, s)| l >= s) {
        return Err(invalid(alloc::format!(
            "delta location {location:?} outside shape {shape:?}"
        )));
    }
    *vol.at_mut(location[0], location[1], location[2]) = Complex64::new(1.0, 0.0);
    Ok(vol)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vessel_phantom_is_deterministic() {
        let a = gen_vessel_phantom([24, 24, 24], 3, 9).unwrap();
        let b = gen_vessel_phantom([24, 24, 24], 3, 9).unwrap();
        assert_eq!(a.data, b.data);
        let c = gen_vessel_phantom([24, 24, 24], 3, 10).unwrap();
        assert_ne!(a.data, c.data);
    }

    #[test]
    fn vessel_phantom_validation() {
        assert!(gen_vessel_phantom([24, 24, 24], 0, 1).is_err());
        assert!(gen_vessel_phantom([8, 8, 8], 1, 1).is_err());
    }

    #[test]
    fn magnitude_histogram_separates_vessels_from_background() {
        let p = gen_vessel_phantom_detailed([32, 32, 32], 4, 3).unwrap();
        let mut n_vessel = 0usize;
        for (i, &m) in p.vessel_mask.iter().enumerate() {
            let mag = p.volume.data[i].norm();
            if m {
                n_vessel += 1;
                assert!(mag > 0.5, "vessel voxel {i} has magnitude {mag}");
            }
        }
        assert!(n_vessel > 100, "phantom should contain a substantial vessel tree");
        // Background stays at or below the ellipsoid amplitude range.
        let n_bright_bg = p
            .vessel_mask
            .iter()
            .enumerate()
            .filter(|(i, &m)| !m && p.volume.data[*i].norm() > 0.45)
            .count();
        // Soft vessel rims may exceed the background cap; they are few.
        assert!(n_bright_bg < p.volume.len() / 20, "{n_bright_bg} bright background voxels");
    }

    #[test]
    fn phantom_is_genuinely_complex() {
        let p = gen_vessel_phantom([24, 24, 24], 2, 5).unwrap();
        let mean_imag: f64 =
            p.data.iter().map(|v| v.im.abs()).sum::<f64>() / p.data.len() as f64;
        assert!(mean_imag > 0.0);
        let max_phase = p.data.iter().map(|v| v.arg().abs()).fold(0.0, f64::max);
        assert!(max_phase <= 0.5 * core::f64::consts::PI + 1e-9);
    }

    #[test]
    fn field_map_normalization_and_scaling() {
        let m = gen_field_map([16, 16, 16], 500.0, 4, 7).unwrap();
        assert!((m.max_abs() - 500.0).abs() < 1e-9);

        let a = gen_field_map([16, 16, 16], 100.0, 4, 7).unwrap();
        let b = gen_field_map([16, 16, 16], 200.0, 4, 7).unwrap();
        for (x, y) in a.data.iter().zip(&b.data) {
            assert!((2.0 * x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn field_map_zero_blobs_is_zero() {
        let m = gen_field_map([16, 16, 16], 300.0, 0, 1).unwrap();
        assert!(m.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn field_map_is_smooth() {
        let m = gen_field_map([24, 24, 24], 400.0, 5, 11).unwrap();
        let mut max_step = 0.0f64;
        for z in 0..24 {
            for y in 0..24 {
                for x in 1..24 {
                    let i = x + 24 * (y + 24 * z);
                    max_step = max_step.max((m.data[i] - m.data[i - 1]).abs());
                }
            }
        }
        assert!(max_step < 100.0, "voxel-to-voxel step {max_step} too large");
    }

    #[test]
    fn delta_phantom_basics() {
        let d = delta_phantom([32, 32, 32], [16, 16, 16]).unwrap();
        let sum: Complex64 = d.data.iter().sum();
        assert_eq!(sum, Complex64::new(1.0, 0.0));
        assert!(delta_phantom([16, 16, 16], [16, 0, 0]).is_err());

        // FFT magnitude of a delta is flat.
        let mut data = d.data.clone();
        crate::fft::fft3(&mut data, [32, 32, 32], false);
        for v in &data {
            assert!((v.norm() - 1.0).abs() < 1e-12);
        }
    }
}
