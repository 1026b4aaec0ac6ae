//! Complex FFTs for arbitrary lengths.
//!
//! Radix-2 Cooley-Tukey for powers of two, Bluestein's chirp-z for
//! everything else. Conventions:
//!
//! * forward:  `X[k] = sum_m x[m] exp(-2*pi*i*k*m/n)` (unscaled)
//! * inverse:  `X[k] = sum_m x[m] exp(+2*pi*i*k*m/n)` (unscaled)
//!
//! Callers apply `1/n` scaling where they need it; reconstruction code
//! relies on the unscaled inverse being the exact adjoint of the forward
//! transform.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use crate::Complex64;

pub struct Fft {
    n: usize,
    kind: Kind,
}

enum Kind {
    Identity,
    Radix2 {
        /// e^{-2*pi*i*k/n} for k in 0..n/2.
        twiddles: Vec<Complex64>,
    },
    Bluestein {
        inner: Box<Fft>,
        /// Chirp c[j] = e^{-pi*i*j^2/n}, j in 0..n.
        chirp: Vec<Complex64>,
        /// Forward FFT of the wrapped conjugate chirp, length inner.n.
        kernel_fft: Vec<Complex64>,
    },
}

fn unit_phase(angle: f64) -> Complex64 {
    Complex64::new(angle.cos(), angle.sin())
}

impl Fft {
    pub fn new(n: usize) -> Self {
        assert!(n > 0, "fft length must be positive");
        if n == 1 {
            return Fft { n, kind: Kind::Identity };
        }
        if n.is_power_of_two() {
            let twiddles = (0..n / 2)
                .map(|k| unit_phase(-2.0 * core::f64::consts::PI * k as f64 / n as f64))
                .collect();
            return Fft { n, kind: Kind::Radix2 { twiddles } };
        }
        // Bluestein: linear convolution of length 2n-1 embedded in a
        // power-of-two circular convolution.
        let m = (2 * n - 1).next_power_of_two();
        let inner = Box::new(Fft::new(m));
        let chirp: Vec<Complex64> = (0..n)
            .map(|j| {
                // j^2 mod 2n keeps the phase argument small and exact.
                let q = (j as u64 * j as u64) % (2 * n as u64);
                unit_phase(-core::f64::consts::PI * q as f64 / n as f64)
            })
            .collect();
        let mut kernel = vec![Complex64::new(0.0, 0.0); m];
        for j in 0..n {
            let b = chirp[j].conj();
            kernel[j] = b;
            if j > 0 {
                kernel[m - j] = b;
            }
        }
        inner.process(&mut kernel, false);
        Fft { n, kind: Kind::Bluestein { inner, chirp, kernel_fft: kernel } }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// In-place transform; `inverse` flips the exponent sign (no scaling).
    pub fn process(&self, data: &mut [Complex64], inverse: bool) {
        assert_eq!(data.len(), self.n, "fft buffer length mismatch");
        if inverse {
            for v in data.iter_mut() {
                *v = v.conj();
            }
        }
        self.forward(data);
        if inverse {
            for v in data.iter_mut() {
                *v = v.conj();
            }
        }
    }

    fn forward(&self, data: &mut [Complex64]) {
        match &self.kind {
            Kind::Identity => {}
            Kind::Radix2 { twiddles } => radix2(data, twiddles),
            Kind::Bluestein { inner, chirp, kernel_fft } => {
                let m = inner.n;
                let n = self.n;
                let mut work = vec![Complex64::new(0.0, 0.0); m];
                for j in 0..n {
                    work[j] = data[j] * chirp[j];
                }
                inner.process(&mut work, false);
                for (w, k) in work.iter_mut().zip(kernel_fft.iter()) {
                    *w *= *k;
                }
                inner.process(&mut work, true);
                let scale = 1.0 / m as f64;
                for k in 0..n {
                    data[k] = work[k] * chirp[k] * scale;
                }
            }
        }
    }
}

fn radix2(data: &mut [Complex64], twiddles: &[Complex64]) {
    let n = data.len();
    // Bit-reversal permutation.
    let mut j = 0usize;
    for i in 0..n - 1 {
        if i < j {
            data.swap(i, j);
        }
        let mut mask = n >> 1;
        while j & mask != 0 {
            j &= !mask;
            mask >>= 1;
        }
        j |= mask;
    }
    let mut half = 1usize;
    while half < n {
        let step = n / (2 * half);
        let mut base = 0;
        while base < n {
            for k in 0..half {
                let w = twiddles[k * step];
                let a = data[base + k];
                let b = data[base + k + half] * w;
                data[base + k] = a + b;
                data[base + k + half] = a - b;
            }
            base += 2 * half;
        }
        half *= 2;
    }
}

/// 3D FFT over an x-fastest volume, in place.
pub fn fft3(data: &mut [Complex64], shape: [usize; 3], inverse: bool) {
    let [nx, ny, nz] = shape;
    assert_eq!(data.len(), nx * ny * nz, "volume length mismatch");
    let plan_x = Fft::new(nx);
    // Rows along x are contiguous.
    crate::par::for_each_chunk_mut(data, nx, |_, row| plan_x.process(row, inverse));

    let plan_y = Fft::new(ny);
    crate::par::for_each_chunk_mut(data, nx * ny, |_, slab| {
        let mut lane = vec![Complex64::new(0.0, 0.0); ny];
        for x in 0..nx {
            for y in 0..ny {
                lane[y] = slab[x + nx * y];
            }
            plan_y.process(&mut lane, inverse);
            for y in 0..ny {
                slab[x + nx * y] = lane[y];
            }
        }
    });

    let plan_z = Fft::new(nz);
    let mut lane = vec![Complex64::new(0.0, 0.0); nz];
    let plane = nx * ny;
    for y in 0..ny {
        for x in 0..nx {
            let base = x + nx * y;
            for z in 0..nz {
                lane[z] = data[base + plane * z];
            }
            plan_z.process(&mut lane, inverse);
            for z in 0..nz {
                data[base + plane * z] = lane[z];
            }
        }
    }
}

/// fftshift: index 0 moves to the center, per axis.
pub fn fftshift3(data: &[Complex64], shape: [usize; 3]) -> Vec<Complex64> {
    shift3(data, shape, |n| n.div_ceil(2))
}

/// ifftshift: inverse of [`fftshift3`] (identical for even sizes).
pub fn ifftshift3(data: &[Complex64], shape: [usize; 3]) -> Vec<Complex64> {
    shift3(data, shape, |n| n / 2)
}

fn shift3(data: &[Complex64], shape: [usize; 3], offset: fn(usize) -> usize) -> Vec<Complex64> {
    let [nx, ny, nz] = shape;
    assert_eq!(data.len(), nx * ny * nz);
    let (ox, oy, oz) = (offset(nx), offset(ny), offset(nz));
    let mut out = vec![Complex64::new(0.0, 0.0); data.len()];
    for z in 0..nz {
        let sz = (z + oz) % nz;
        for y in 0..ny {
            let sy = (y + oy) % ny;
            let src = nx * (y + ny * z);
            let dst = nx * (sy + ny * sz);
            for x in 0..nx {
                out[(x + ox) % nx + dst] = data[x + src];
            }
        }
    }
    out
}
