//! Gridding reconstruction: non-uniform <-> Cartesian with a Kaiser-Bessel
//! kernel, plus a naive conjugate-phase oracle and regridding between
//! trajectories.
//!
//! Conventions (shared with [`crate::forward`]):
//!
//! * forward model (type-2): `s_j = sum_r M(r) exp(-2*pi*i k_j.r/N)` with
//!   centered voxel coordinates r.
//! * adjoint reconstruction:  `I(r) = sum_j dcf_j s_j exp(+2*pi*i k_j.r/N)`.
//!
//! [`grid_forward`] and [`grid_adjoint_nodcf`] are exact adjoints of each
//! other by construction (the same kernel, deapodization and unscaled FFT
//! appear on both sides); [`grid_adjoint`] additionally applies the
//! trajectory's density compensation, which carries the physical
//! normalization (see [`crate::trajectory::normalize_dcf`]).

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{invalid, mismatch, Result};
use crate::fft::{fft3, fftshift3, ifftshift3};
use crate::forward::KSpaceData;
use crate::trajectory::ConesTrajectory;
use crate::volume::{crop_center, pad_center, ComplexVolume};
use crate::Complex64;

/// Gridding parameters. Oversampling 2 with kernel width 4 is the
/// classical accuracy/speed tradeoff and keeps aliasing error well below
/// the 5e-3 oracle tolerance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridParams {
    pub oversamp: f64,
    pub kernel_width: f64,
}

impl Default for GridParams {
    fn default() -> Self {
        GridParams { oversamp: 2.0, kernel_width: 4.0 }
    }
}

impl GridParams {
    fn check(&self) -> Result<()> {
        if !(self.oversamp >= 1.25) {
            return Err(invalid("oversampling must be >= 1.25"));
        }
        if !(self.kernel_width >= 2.0) {
            return Err(invalid("kernel width must be >= 2.0"));
        }
        Ok(())
    }
}

/// Modified Bessel function of the first kind, order zero. The series has
/// all-positive terms, so it is stable for the argument range used here.
fn bessel_i0(x: f64) -> f64 {
    let q = 0.25 * x * x;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..200 {
        term *= q / ((k * k) as f64);
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

/// Kaiser-Bessel interpolation kernel on [-W/2, W/2] in oversampled grid
/// units, with the Beatty beta for the given oversampling factor.
struct KbKernel {
    width: f64,
    beta: f64,
    /// kb as a function of u^2, sampled on a uniform grid for fast lookup.
    table: Vec<f64>,
    table_step_inv: f64,
}

const KB_TABLE_LEN: usize = 8192;

impl KbKernel {
    fn new(width: f64, oversamp: f64) -> Self {
        let w_os = width / oversamp;
        let beta =
            core::f64::consts::PI * (w_os * w_os * (oversamp - 0.5) * (oversamp - 0.5) - 0.8).max(0.0).sqrt();
        let i0b = bessel_i0(beta);
        let u2_max = (width / 2.0) * (width / 2.0);
        let table: Vec<f64> = (0..=KB_TABLE_LEN)
            .map(|i| {
                let u2 = u2_max * i as f64 / KB_TABLE_LEN as f64;
                let arg = 1.0 - u2 / u2_max;
                bessel_i0(beta * arg.max(0.0).sqrt()) / i0b
            })
            .collect();
        KbKernel { width, beta, table, table_step_inv: KB_TABLE_LEN as f64 / u2_max }
    }

    #[inline]
    fn eval(&self, u: f64) -> f64 {
        let pos = u * u * self.table_step_inv;
        if pos >= KB_TABLE_LEN as f64 {
            return 0.0;
        }
        let i = pos as usize;
        let frac = pos - i as f64;
        self.table[i] * (1.0 - frac) + self.table[i + 1] * frac
    }

    /// Continuous Fourier transform of the kernel at image coordinate
    /// `x` (centered voxel index) for oversampled grid size `g`:
    /// `c(x) = (W / I0(beta)) * sinh(sqrt(beta^2 - a^2)) / sqrt(...)`,
    /// `a = pi*W*x/g`, switching to `sin` when `a > beta`.
    fn deapod(&self, x: f64, g: f64) -> f64 {
        let a = core::f64::consts::PI * self.width * x / g;
        let d = self.beta * self.beta - a * a;
        let ratio = if d > 0.0 {
            let t = d.sqrt();
            ((t.exp() - (-t).exp()) * 0.5) / t
        } else if d < 0.0 {
            let t = (-d).sqrt();
            t.sin() / t
        } else {
            1.0
        };
        self.width * ratio / bessel_i0(self.beta)
    }
}

struct Gridder {
    n: usize,
    g: usize,
    ratio: f64,
    kernel: KbKernel,
    /// Per-axis deapodization on the cropped image grid.
    deapod_axis: Vec<f64>,
}

impl Gridder {
    fn new(traj: &ConesTrajectory, shape: [usize; 3], params: &GridParams) -> Result<Self> {
        params.check()?;
        let n = traj.meta.grid_size;
        if shape != [n, n, n] {
            return Err(mismatch(format!(
                "reconstruction shape {shape:?} does not match trajectory grid size {n}"
            )));
        }
        if traj.is_empty() {
            return Err(invalid("empty trajectory"));
        }
        // Even oversampled grid keeps the centered FFT conventions exact.
        let g = 2 * ((params.oversamp * n as f64 / 2.0).ceil() as usize);
        let kernel = KbKernel::new(params.kernel_width, g as f64 / n as f64);
        let deapod_axis: Vec<f64> = (0..n)
            .map(|i| kernel.deapod(i as f64 - (n / 2) as f64, g as f64))
            .collect();
        Ok(Gridder { n, g, ratio: g as f64 / n as f64, kernel, deapod_axis })
    }

    fn g_shape(&self) -> [usize; 3] {
        [self.g; 3]
    }

    fn n_shape(&self) -> [usize; 3] {
        [self.n; 3]
    }

    /// Per-axis taps for one sample: wrapped grid indices and weights.
    #[inline]
    fn taps(&self, k: f64, idx: &mut [usize; 8], w: &mut [f64; 8]) -> usize {
        let u = k * self.ratio + (self.g / 2) as f64;
        let half = self.kernel.width / 2.0;
        let lo = (u - half).ceil() as i64;
        let hi = (u + half).floor() as i64;
        let mut count = 0;
        for i in lo..=hi {
            idx[count] = (i.rem_euclid(self.g as i64)) as usize;
            w[count] = self.kernel.eval(i as f64 - u);
            count += 1;
        }
        count
    }

    fn divide_deapod(&self, data: &mut [Complex64]) {
        let n = self.n;
        for z in 0..n {
            for y in 0..n {
                let row = n * (y + n * z);
                let cyz = self.deapod_axis[y] * self.deapod_axis[z];
                for x in 0..n {
                    data[row + x] /= self.deapod_axis[x] * cyz;
                }
            }
        }
    }

    /// Scatter weighted samples onto the oversampled grid. Samples are
    /// processed in a fixed number of chunks merged in order, so the
    /// result is bit-identical for any thread count.
    fn scatter(&self, traj: &ConesTrajectory, values: &[Complex64]) -> Vec<Complex64> {
        let g = self.g;
        let n_chunks = 4usize;
        let chunk = values.len().div_ceil(n_chunks).max(1);
        let partials = crate::par::map_chunks(values, chunk, |ci, vals| {
            let mut grid = vec![Complex64::new(0.0, 0.0); g * g * g];
            let base = ci * chunk;
            let mut ix = [0usize; 8];
            let mut iy = [0usize; 8];
            let mut iz = [0usize; 8];
            let mut wx = [0.0f64; 8];
            let mut wy = [0.0f64; 8];
            let mut wz = [0.0f64; 8];
            for (o, &v) in vals.iter().enumerate() {
                let k = traj.samples[base + o];
                let cx = self.taps(k[0], &mut ix, &mut wx);
                let cy = self.taps(k[1], &mut iy, &mut wy);
                let cz = self.taps(k[2], &mut iz, &mut wz);
                for a in 0..cz {
                    let vz = v * wz[a];
                    let pz = g * g * iz[a];
                    for b in 0..cy {
                        let vyz = vz * wy[b];
                        let pyz = pz + g * iy[b];
                        for c in 0..cx {
                            grid[pyz + ix[c]] += vyz * wx[c];
                        }
                    }
                }
            }
            grid
        });
        let mut grid = vec![Complex64::new(0.0, 0.0); g * g * g];
        for p in partials {
            for (a, b) in grid.iter_mut().zip(&p) {
                *a += b;
            }
        }
        grid
    }

    /// Interpolate grid values at the sample positions.
    fn gather(&self, traj: &ConesTrajectory, grid: &[Complex64]) -> Vec<Complex64> {
        let g = self.g;
        let chunk = 4096usize;
        let parts = crate::par::map_chunks(&traj.samples, chunk, |_, samples| {
            let mut out = Vec::with_capacity(samples.len());
            let mut ix = [0usize; 8];
            let mut iy = [0usize; 8];
            let mut iz = [0usize; 8];
            let mut wx = [0.0f64; 8];
            let mut wy = [0.0f64; 8];
            let mut wz = [0.0f64; 8];
            for k in samples {
                let cx = self.taps(k[0], &mut ix, &mut wx);
                let cy = self.taps(k[1], &mut iy, &mut wy);
                let cz = self.taps(k[2], &mut iz, &mut wz);
                let mut acc = Complex64::new(0.0, 0.0);
                for a in 0..cz {
                    let pz = g * g * iz[a];
                    let mut acc_z = Complex64::new(0.0, 0.0);
                    for b in 0..cy {
                        let pyz = pz + g * iy[b];
                        let mut acc_y = Complex64::new(0.0, 0.0);
                        for c in 0..cx {
                            acc_y += grid[pyz + ix[c]] * wx[c];
                        }
                        acc_z += acc_y * wy[b];
                    }
                    acc += acc_z * wz[a];
                }
                out.push(acc);
            }
            out
        });
        parts.into_iter().flatten().collect()
    }
}

/// Type-2 NUFFT: evaluate the image's Fourier transform at the trajectory
/// samples (no density compensation).
pub fn grid_forward(
    img: &ComplexVolume,
    traj: &ConesTrajectory,
    params: &GridParams,
) -> Result<KSpaceData> {
    let gr = Gridder::new(traj, img.shape, params)?;
    let mut work = img.data.clone();
    gr.divide_deapod(&mut work);
    let mut padded = pad_center(&work, gr.n_shape(), gr.g_shape());
    padded = ifftshift3(&padded, gr.g_shape());
    fft3(&mut padded, gr.g_shape(), false);
    let grid = fftshift3(&padded, gr.g_shape());
    let values = gr.gather(traj, &grid);
    Ok(KSpaceData { values, traj_ref: traj.meta.id.clone() })
}

/// Density-compensated adjoint NUFFT (the gridding reconstruction).
pub fn grid_adjoint(
    ks: &KSpaceData,
    traj: &ConesTrajectory,
    shape: [usize; 3],
    params: &GridParams,
) -> Result<ComplexVolume> {
    ks.check_aligned(traj)?;
    let weighted: Vec<Complex64> =
        ks.values.iter().zip(&traj.dcf).map(|(v, &w)| v * w).collect();
    adjoint_impl(&weighted, traj, shape, params)
}

/// Adjoint NUFFT without density compensation: the exact adjoint of
/// [`grid_forward`], used by adjointness tests and iterative methods.
pub fn grid_adjoint_nodcf(
    ks: &KSpaceData,
    traj: &ConesTrajectory,
    shape: [usize; 3],
    params: &GridParams,
) -> Result<ComplexVolume> {
    ks.check_aligned(traj)?;
    adjoint_impl(&ks.values, traj, shape, params)
}

fn adjoint_impl(
    values: &[Complex64],
    traj: &ConesTrajectory,
    shape: [usize; 3],
    params: &GridParams,
) -> Result<ComplexVolume> {
    let gr = Gridder::new(traj, shape, params)?;
    let mut grid = gr.scatter(traj, values);
    grid = ifftshift3(&grid, gr.g_shape());
    fft3(&mut grid, gr.g_shape(), true);
    let shifted = fftshift3(&grid, gr.g_shape());
    let mut data = crop_center(&shifted, gr.g_shape(), gr.n_shape());
    gr.divide_deapod(&mut data);
    let mut vol = ComplexVolume::from_data(shape, data)?;
    let mm = traj.meta.fov_cm * 10.0 / gr.n as f64;
    vol.spacing_mm = [mm; 3];
    Ok(vol)
}

/// Default work guard for the naive oracle: voxels x samples.
pub const NAIVE_COST_LIMIT: u128 = 1 << 28;

/// Direct conjugate-phase sum `I(r) = sum_j dcf_j s_j exp(+2 pi i k_j.r/N)`.
/// Small sizes only; this is the reference the gridding path is tested
/// against.
pub fn naive_adjoint_oracle(
    ks: &KSpaceData,
    traj: &ConesTrajectory,
    shape: [usize; 3],
) -> Result<ComplexVolume> {
    naive_adjoint_oracle_with_limit(ks, traj, shape, NAIVE_COST_LIMIT)
}

pub fn naive_adjoint_oracle_with_limit(
    ks: &KSpaceData,
    traj: &ConesTrajectory,
    shape: [usize; 3],
    limit: u128,
) -> Result<ComplexVolume> {
    ks.check_aligned(traj)?;
    let n = traj.meta.grid_size;
    if shape != [n, n, n] {
        return Err(mismatch("oracle shape must match trajectory grid size"));
    }
    let n_vox = (n * n * n) as u128;
    let cost = n_vox * ks.values.len() as u128;
    if cost > limit {
        return Err(crate::Error::SizeGuard { cost, limit });
    }

    // Factor exp(2 pi i k.r/N) into per-axis tables; accumulate partial
    // volumes over fixed sample chunks and merge in order.
    let chunk = 1024usize;
    let half = (n / 2) as f64;
    let parts = crate::par::map_chunks(&ks.values, chunk, |ci, vals| {
        let mut vol = vec![Complex64::new(0.0, 0.0); n * n * n];
        let base = ci * chunk;
        let mut tx = vec![Complex64::new(0.0, 0.0); n];
        let mut ty = vec![Complex64::new(0.0, 0.0); n];
        let mut tz = vec![Complex64::new(0.0, 0.0); n];
        for (o, &v) in vals.iter().enumerate() {
            let j = base + o;
            let k = traj.samples[j];
            let w = v * traj.dcf[j];
            for (axis, tab) in [(0, &mut tx), (1, &mut ty), (2, &mut tz)] {
                for (c, t) in tab.iter_mut().enumerate() {
                    let ang = 2.0 * core::f64::consts::PI * k[axis] * (c as f64 - half) / n as f64;
                    *t = Complex64::new(ang.cos(), ang.sin());
                }
            }
            for z in 0..n {
                let pz = tz[z] * w;
                for y in 0..n {
                    let pyz = ty[y] * pz;
                    let row = n * (y + n * z);
                    for x in 0..n {
                        vol[row + x] += pyz * tx[x];
                    }
                }
            }
        }
        vol
    });
    let mut data = vec![Complex64::new(0.0, 0.0); n * n * n];
    for p in parts {
        for (a, b) in data.iter_mut().zip(&p) {
            *a += b;
        }
    }
    ComplexVolume::from_data(shape, data)
}

/// Move k-space data from one trajectory to another: reconstruct on the
/// source, then evaluate the forward model on the destination. When the
/// sample positions coincide exactly (the readout-scaling augmentation
/// family), the values are carried over unchanged and only the timestamp
/// binding changes.
pub fn regrid_to_trajectory(
    ks_src: &KSpaceData,
    traj_src: &ConesTrajectory,
    traj_dst: &ConesTrajectory,
    shape: [usize; 3],
    params: &GridParams,
) -> Result<KSpaceData> {
    ks_src.check_aligned(traj_src)?;
    if traj_src.meta.grid_size != traj_dst.meta.grid_size {
        return Err(mismatch("source and destination grid sizes differ"));
    }
    if traj_src.samples == traj_dst.samples {
        return Ok(KSpaceData { values: ks_src.values.clone(), traj_ref: traj_dst.meta.id.clone() });
    }
    let img = grid_adjoint(ks_src, traj_src, shape, params)?;
    grid_forward(&img, traj_dst, params)
}

/// Grid-then-degrid convolution used by the Pipe-Menon density iteration.
pub(crate) struct DensityConvolver {
    gridder: Gridder,
    samples: Vec<[f64; 3]>,
}

impl DensityConvolver {
    pub(crate) fn new(traj: &ConesTrajectory, kernel_width: f64) -> Result<Self> {
        let params = GridParams { oversamp: 1.5, kernel_width: kernel_width.max(2.0) };
        let gridder = Gridder::new(traj, [traj.meta.grid_size; 3], &params)?;
        Ok(DensityConvolver { gridder, samples: traj.samples.clone() })
    }

    /// w -> degrid(grid(w)) with real weights.
    pub(crate) fn apply(&self, weights: &[f64]) -> Vec<f64> {
        let g = self.gridder.g;
        let n_chunks = 4usize;
        let chunk = weights.len().div_ceil(n_chunks).max(1);
        let partials = crate::par::map_chunks(weights, chunk, |ci, ws| {
            let mut grid = vec![0.0f64; g * g * g];
            let base = ci * chunk;
            let mut ix = [0usize; 8];
            let mut iy = [0usize; 8];
            let mut iz = [0usize; 8];
            let mut wx = [0.0f64; 8];
            let mut wy = [0.0f64; 8];
            let mut wz = [0.0f64; 8];
            for (o, &wv) in ws.iter().enumerate() {
                let k = self.samples[base + o];
                let cx = self.gridder.taps(k[0], &mut ix, &mut wx);
                let cy = self.gridder.taps(k[1], &mut iy, &mut wy);
                let cz = self.gridder.taps(k[2], &mut iz, &mut wz);
                for a in 0..cz {
                    let vz = wv * wz[a];
                    let pz = g * g * iz[a];
                    for b in 0..cy {
                        let vyz = vz * wy[b];
                        let pyz = pz + g * iy[b];
                        for c in 0..cx {
                            grid[pyz + ix[c]] += vyz * wx[c];
                        }
                    }
                }
            }
            grid
        });
        let mut grid = vec![0.0f64; g * g * g];
        for p in partials {
            for (a, b) in grid.iter_mut().zip(&p) {
                *a += b;
            }
        }

        let chunk = 4096usize;
        let parts = crate::par::map_chunks(&self.samples, chunk, |_, samples| {
            let mut out = Vec::with_capacity(samples.len());
            let mut ix = [0usize; 8];
            let mut iy = [0usize; 8];
            let mut iz = [0usize; 8];
            let mut wx = [0.0f64; 8];
            let mut wy = [0.0f64; 8];
            let mut wz = [0.0f64; 8];
            for k in samples {
                let cx = self.gridder.taps(k[0], &mut ix, &mut wx);
                let cy = self.gridder.taps(k[1], &mut iy, &mut wy);
                let cz = self.gridder.taps(k[2], &mut iz, &mut wz);
                let mut acc = 0.0;
                for a in 0..cz {
                    let pz = g * g * iz[a];
                    let mut acc_z = 0.0;
                    for b in 0..cy {
                        let pyz = pz + g * iy[b];
                        let mut acc_y = 0.0;
                        for c in 0..cx {
                            acc_y += grid[pyz + ix[c]] * wx[c];
                        }
                        acc_z += acc_y * wy[b];
                    }
                    acc += acc_z * wz[a];
                }
                out.push(acc);
            }
            out
        });
        parts.into_iter().flatten().collect()
    }
}
