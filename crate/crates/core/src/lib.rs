//! Off-resonance artifact simulation and correction for 3D cones trajectories.
//!
//! The crate covers the full synthetic pipeline:
//!
//! * [`trajectory`] — parameterized 3D cones k-space trajectories with
//!   timestamps, density compensation and hardware feasibility checks.
//! * [`phantom`] — seed-deterministic complex vessel phantoms and smooth
//!   synthetic field maps.
//! * [`forward`] — the off-resonance signal equation: exact direct-sum
//!   oracle, fast frequency-segmented model, global frequency injection
//!   and demodulation, localized point spread functions.
//! * [`recon`] — Kaiser–Bessel gridding (adjoint and forward NUFFT), a
//!   naive conjugate-phase oracle and trajectory-to-trajectory regridding.
//! * [`autofocus`] — blind correction by exhaustive candidate-frequency
//!   search minimizing a local imaginary-energy metric.
//! * [`network`] — a 3D residual convolutional corrector with two-channel
//!   complex I/O, L1 loss, Adam, patch training and tiled inference.
//! * [`metrics`] — NRMSE / SSIM / PSNR and the iterated-application
//!   hallucination diagnostic.
//!
//! The crate is `no_std`-compatible (`alloc` required); file formats and
//! the command-line pipeline live in the companion `offres-cli` crate.

#![cfg_attr(not(feature = "std"), no_std)]
// Validations use `!(x > 0.0)` so NaN is rejected along with the out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::needless_range_loop)]
#![allow(clippy::type_complexity)]

extern crate alloc;

#[cfg(any(test, feature = "std"))]
extern crate std;

pub mod autofocus;
pub mod error;
pub mod fft;
pub mod forward;
pub mod metrics;
pub mod network;
pub mod phantom;
pub mod recon;
pub mod rng;
pub mod trajectory;
pub mod volume;

mod par;

pub use error::{Error, Result};
pub use forward::KSpaceData;
pub use trajectory::ConesTrajectory;
pub use volume::{ComplexVolume, FieldMap};

/// Complex scalar used by all volume/k-space data.
pub type Complex64 = num_complex::Complex<f64>;
