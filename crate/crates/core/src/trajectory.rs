//! Parameterized 3D cones k-space trajectories.
//!
//! Interleaves spiral outward on cone surfaces with linear radial growth
//! and golden-angle azimuth spacing, densely sampling the k-space center.
//! Sample positions are in grid units (cycles across the field of view),
//! so `|k| <= grid_size/2`; per-sample timestamps cover `[0, t_read]`.
//!
//! Density compensation weights are kept in "k-space cells per sample"
//! units and normalized so that the conjugate-phase reconstruction of
//! all-ones k-space data has unit DC value (see [`normalize_dcf`]); with
//! that convention a gridding reconstruction of simulated k-space from a
//! unit image lands at unit mean.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{invalid, Error, Result};
use crate::Complex64;

/// Golden angle in radians.
const GOLDEN_ANGLE: f64 = 2.399963229728653;

/// Gyromagnetic ratio of 1H over 2*pi, in Hz/T.
const GAMMA_BAR_HZ_PER_T: f64 = 42.576e6;

#[derive(Debug, Clone, PartialEq)]
pub struct TrajMeta {
    /// Cartesian grid size N per axis the trajectory is designed for.
    pub grid_size: usize,
    /// Field of view in cm (used for physical-unit conversions only).
    pub fov_cm: f64,
    /// Readout duration in seconds.
    pub t_read: f64,
    /// Human-readable identifier; k-space data records it for provenance.
    pub id: String,
}

/// Non-Cartesian k-space sampling positions with timestamps and density
/// compensation weights. All per-sample vectors have identical length and
/// samples are stored interleaf-contiguous.
#[derive(Debug, Clone, PartialEq)]
pub struct ConesTrajectory {
    /// (kx, ky, kz) in grid units, |k| <= grid_size/2.
    pub samples: Vec<[f64; 3]>,
    /// Seconds since the start of the sample's own readout.
    pub timestamps: Vec<f64>,
    /// Which interleaf produced each sample.
    pub interleaf_index: Vec<u32>,
    /// Nonnegative density compensation weights.
    pub dcf: Vec<f64>,
    pub meta: TrajMeta,
}

impl ConesTrajectory {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn k_max(&self) -> f64 {
        self.meta.grid_size as f64 / 2.0
    }

    /// Contiguous sample ranges, one per interleaf.
    pub fn interleaf_ranges(&self) -> Vec<core::ops::Range<usize>> {
        let mut ranges = Vec::new();
        let mut start = 0;
        for i in 1..=self.interleaf_index.len() {
            if i == self.interleaf_index.len() || self.interleaf_index[i] != self.interleaf_index[start]
            {
                ranges.push(start..i);
                start = i;
            }
        }
        ranges
    }

    /// Check the structural invariants; used after construction from files.
    pub fn validate(&self) -> Result<()> {
        let n = self.samples.len();
        if self.timestamps.len() != n || self.interleaf_index.len() != n || self.dcf.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "per-sample arrays differ in length: {} / {} / {} / {}",
                n,
                self.timestamps.len(),
                self.interleaf_index.len(),
                self.dcf.len()
            )));
        }
        // Tolerance covers float32 round trips through trajectory files.
        let k_max = self.k_max() * (1.0 + 1e-6);
        for (j, s) in self.samples.iter().enumerate() {
            let r = (s[0] * s[0] + s[1] * s[1] + s[2] * s[2]).sqrt();
            if !r.is_finite() || r > k_max {
                return Err(invalid(format!("sample {j} outside k_max ball: |k| = {r}")));
            }
        }
        if !self.dcf.iter().all(|w| w.is_finite() && *w >= 0.0) {
            return Err(Error::NonFinite("dcf"));
        }
        for range in self.interleaf_ranges() {
            let ts = &self.timestamps[range.clone()];
            if ts.is_empty() || ts[0] != 0.0 {
                return Err(invalid("interleaf timestamps must start at 0"));
            }
            if ts.windows(2).any(|w| w[1] <= w[0]) {
                return Err(invalid("interleaf timestamps must be strictly increasing"));
            }
        }
        Ok(())
    }
}

/// Generate a cones trajectory.
///
/// Each cone `c` has half-angle `theta_c` with `cos(theta_c)` uniformly
/// spaced in `[-1+eps, 1-eps]`; each interleaf follows
/// `k(t) = r(t) * (sin(theta) cos(phi(t)), sin(theta) sin(phi(t)), cos(theta))`
/// with `r(t) = k_max*t/t_read` and `phi(t) = phi0 + 2*pi*twist*t/t_read`.
/// Interleaf start azimuths are golden-angle spaced. Deterministic: no RNG.
pub fn generate_cones(
    n_cones: usize,
    interleaves_per_cone: usize,
    samples_per_interleaf: usize,
    t_read: f64,
    twist: f64,
    grid_size: usize,
) -> Result<ConesTrajectory> {
    if n_cones < 1 || interleaves_per_cone < 1 || samples_per_interleaf < 1 {
        return Err(invalid("cone, interleaf and sample counts must be >= 1"));
    }
    if !(t_read > 0.0) || !t_read.is_finite() {
        return Err(invalid("t_read must be positive"));
    }
    if grid_size < 8 || !grid_size.is_multiple_of(2) {
        return Err(invalid("grid_size must be even and >= 8"));
    }
    if !twist.is_finite() {
        return Err(invalid("twist must be finite"));
    }

    let k_max = grid_size as f64 / 2.0;
    let s = samples_per_interleaf;
    let n_interleaves = n_cones * interleaves_per_cone;
    let eps = 1.0 / (2.0 * n_cones as f64);

    let mut samples = Vec::with_capacity(n_interleaves * s);
    let mut timestamps = Vec::with_capacity(n_interleaves * s);
    let mut interleaf_index = Vec::with_capacity(n_interleaves * s);
    let mut dcf = Vec::with_capacity(n_interleaves * s);

    for cone in 0..n_cones {
        let cos_theta = if n_cones == 1 {
            0.0
        } else {
            let lo = -1.0 + eps;
            let hi = 1.0 - eps;
            lo + (hi - lo) * cone as f64 / (n_cones - 1) as f64
        };
        let sin_theta = (1.0 - cos_theta * cos_theta).sqrt();
        for ilv in 0..interleaves_per_cone {
            let global = (cone * interleaves_per_cone + ilv) as u32;
            let phi0 = GOLDEN_ANGLE * global as f64;
            for j in 0..s {
                let frac = if s == 1 { 0.0 } else { j as f64 / (s - 1) as f64 };
                let t = frac * t_read;
                let r = k_max * frac;
                let phi = phi0 + 2.0 * core::f64::consts::PI * twist * frac;
                samples.push([r * sin_theta * phi.cos(), r * sin_theta * phi.sin(), r * cos_theta]);
                timestamps.push(t);
                interleaf_index.push(global);
                dcf.push(0.0);
            }
        }
    }

    // Analytic density compensation: a shell of thickness dr at radius r
    // holds one sample from each interleaf, so each sample covers
    // 4*pi*r^2*dr / n_interleaves k-space cells. The t = 0 sample takes the
    // mean of its interleaf's two smallest nonzero weights so the image
    // mean is not killed by a zero weight at DC.
    if s >= 2 {
        let dr = k_max / (s - 1) as f64;
        for i in 0..n_interleaves {
            let base = i * s;
            for j in 1..s {
                let r = k_max * j as f64 / (s - 1) as f64;
                dcf[base + j] = 4.0 * core::f64::consts::PI * r * r * dr / n_interleaves as f64;
            }
            dcf[base] = if s >= 3 {
                0.5 * (dcf[base + 1] + dcf[base + 2])
            } else {
                dcf[base + 1]
            };
        }
    } else {
        for w in dcf.iter_mut() {
            *w = 1.0;
        }
    }

    let mut traj = ConesTrajectory {
        samples,
        timestamps,
        interleaf_index,
        dcf,
        meta: TrajMeta {
            grid_size,
            fov_cm: 30.0,
            t_read,
            id: format!(
                "cones-c{n_cones}i{interleaves_per_cone}s{s}g{grid_size}t{:.0}us-tw{twist:.2}",
                t_read * 1e6
            ),
        },
    };
    normalize_dcf(&mut traj);
    Ok(traj)
}

/// Stretch the readout in time: identical sample positions and dcf,
/// timestamps and `t_read` multiplied by `factor`.
pub fn scale_readout(traj: &ConesTrajectory, factor: f64) -> Result<ConesTrajectory> {
    if !(factor > 0.0) || !factor.is_finite() {
        return Err(invalid("readout scale factor must be positive"));
    }
    let mut out = traj.clone();
    for t in out.timestamps.iter_mut() {
        *t *= factor;
    }
    out.meta.t_read *= factor;
    out.meta.id = format!("{}-x{factor:.3}", traj.meta.id);
    Ok(out)
}

/// Per-axis Dirichlet factor of the centered voxel sum:
/// `(1/N) * sum_x exp(2*pi*i*k*x/N)` over x in -N/2..N/2.
fn dirichlet(k: f64, n: usize) -> Complex64 {
    if k.abs() < 1e-12 {
        return Complex64::new(1.0, 0.0);
    }
    let nf = n as f64;
    let ratio = (core::f64::consts::PI * k).sin() / (nf * (core::f64::consts::PI * k / nf).sin());
    Complex64::from_polar(ratio, -core::f64::consts::PI * k / nf)
}

/// Rescale dcf so that unit-DC k-space reconstructs at unit level: the
/// conjugate-phase reconstruction of data simulated from an all-ones image
/// gets mean one, which pins `N^3 * sum_j dcf_j * |D(k_j)|^2 = 1` with `D`
/// the 3D Dirichlet kernel (the discrete spectrum of the all-ones image).
/// Equivalently, the reconstruction of all-ones k-space data has unit DC
/// value up to the sampling discretization of the Dirichlet lobes.
pub fn normalize_dcf(traj: &mut ConesTrajectory) {
    let n = traj.meta.grid_size;
    let mut acc = 0.0;
    for (s, &w) in traj.samples.iter().zip(&traj.dcf) {
        let d = dirichlet(s[0], n) * dirichlet(s[1], n) * dirichlet(s[2], n);
        acc += w * d.norm_sqr();
    }
    let total = acc * (n * n * n) as f64;
    if total.abs() > 1e-300 {
        let scale = 1.0 / total;
        for w in traj.dcf.iter_mut() {
            *w *= scale;
        }
    }
}

/// Iterative density compensation refinement: `w <- w / (C w)` where `C`
/// is gridding followed by degridding with a Kaiser-Bessel kernel, then
/// rescaled by the [`normalize_dcf`] rule.
pub fn refine_dcf_pipemenon(
    traj: &ConesTrajectory,
    iterations: usize,
    kernel_width: f64,
) -> Result<ConesTrajectory> {
    refine_dcf_pipemenon_with_eps(traj, iterations, kernel_width, 1e-12)
}

/// [`refine_dcf_pipemenon`] with a configurable divide-by-zero floor.
pub fn refine_dcf_pipemenon_with_eps(
    traj: &ConesTrajectory,
    iterations: usize,
    kernel_width: f64,
    eps: f64,
) -> Result<ConesTrajectory> {
    if iterations < 1 {
        return Err(invalid("iterations must be >= 1"));
    }
    if traj.is_empty() {
        return Err(invalid("empty trajectory"));
    }
    let mut out = traj.clone();
    let conv = crate::recon::DensityConvolver::new(traj, kernel_width)?;
    for _ in 0..iterations {
        let denom = conv.apply(&out.dcf);
        for (w, d) in out.dcf.iter_mut().zip(&denom) {
            *w /= d.max(eps);
        }
    }
    normalize_dcf(&mut out);
    out.meta.id = format!("{}-pm{iterations}", traj.meta.id);
    Ok(out)
}

/// Gradient and slew-rate summary from finite differences of k(t).
#[derive(Debug, Clone, PartialEq)]
pub struct FeasibilityReport {
    pub max_gradient_mt_per_m: f64,
    pub max_slew_t_per_m_per_s: f64,
    pub gradient_ok: bool,
    pub slew_ok: bool,
    pub feasible: bool,
}

/// Check hardware feasibility against gradient amplitude and slew-rate
/// limits. Gradients are `dk/dt / gamma_bar` with k converted to cycles/m
/// using `fov_cm`; slew is the finite difference of the gradient.
pub fn check_feasibility(
    traj: &ConesTrajectory,
    fov_cm: f64,
    gmax_mt_per_m: f64,
    smax_t_per_m_per_s: f64,
) -> Result<FeasibilityReport> {
    if !(fov_cm > 0.0) || !(gmax_mt_per_m > 0.0) || !(smax_t_per_m_per_s > 0.0) {
        return Err(invalid("physical parameters must be positive"));
    }
    let fov_m = fov_cm / 100.0;
    let mut max_g: f64 = 0.0;
    let mut max_slew: f64 = 0.0;
    for range in traj.interleaf_ranges() {
        if range.len() < 3 {
            return Err(invalid("interleaves need >= 3 samples for finite differences"));
        }
        let ks = &traj.samples[range.clone()];
        let ts = &traj.timestamps[range.clone()];
        // Gradient vectors at segment midpoints, in T/m.
        let mut grads: Vec<[f64; 3]> = Vec::with_capacity(ks.len() - 1);
        for j in 0..ks.len() - 1 {
            let dt = ts[j + 1] - ts[j];
            let mut g = [0.0; 3];
            for a in 0..3 {
                g[a] = (ks[j + 1][a] - ks[j][a]) / fov_m / dt / GAMMA_BAR_HZ_PER_T;
            }
            grads.push(g);
            let mag = (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).sqrt();
            max_g = max_g.max(mag);
        }
        for j in 0..grads.len() - 1 {
            let dt = 0.5 * (ts[j + 2] - ts[j]);
            let mut s = 0.0;
            for a in 0..3 {
                let ds = (grads[j + 1][a] - grads[j][a]) / dt;
                s += ds * ds;
            }
            max_slew = max_slew.max(s.sqrt());
        }
    }
    let gradient_ok = max_g * 1e3 <= gmax_mt_per_m;
    let slew_ok = max_slew <= smax_t_per_m_per_s;
    Ok(FeasibilityReport {
        max_gradient_mt_per_m: max_g * 1e3,
        max_slew_t_per_m_per_s: max_slew,
        gradient_ok,
        slew_ok,
        feasible: gradient_ok && slew_ok,
    })
}
