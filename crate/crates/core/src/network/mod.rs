//! Residual 3D convolutional corrector with two-channel complex I/O.
//!
//! The graph: an input convolution (2 -> C channels) with ReLU, a stack of
//! residual blocks `h <- h + conv(relu(conv(h)))`, and an output
//! convolution (C -> 2) with no activation, optionally adding a global
//! input skip. All convolutions are zero-padded so the output shape equals
//! the input shape at any input size. Real and imaginary parts are the two
//! channels.
//!
//! The residual blocks put ReLU between the two convolutions but not after
//! the add, so the skip path can carry negative (complex) signal
//! components unchanged.

mod adam;
mod conv;
mod train;

pub use adam::adam_step;
pub use train::{
    apply, extract_patches, train, EpochStats, NoopObserver, Patch, TrainObserver,
};

use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{invalid, mismatch, Result};
use crate::rng::Rng;
use crate::volume::ComplexVolume;
use crate::Complex64;

/// Floating-point scalar for network arithmetic; training usually runs in
/// `f32`, gradient checks in `f64`.
pub trait Scalar:
    num_traits::Float
    + core::ops::AddAssign
    + core::ops::SubAssign
    + core::ops::MulAssign
    + core::iter::Sum
    + core::fmt::Debug
    + Send
    + Sync
    + 'static
{
    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetConfig {
    pub n_res_blocks: usize,
    pub channels: usize,
    /// Odd cubic kernel extent.
    pub kernel: usize,
    pub global_skip: bool,
    pub learning_rate: f64,
    pub patch: usize,
    pub patch_stride: usize,
    pub batch: usize,
    pub seed: u64,
}

impl Default for NetConfig {
    fn default() -> Self {
        // Desk-scale defaults; the reference configuration uses 128
        // channels and 64-voxel patches and is reachable through the same
        // fields.
        NetConfig {
            n_res_blocks: 3,
            channels: 32,
            kernel: 5,
            global_skip: true,
            learning_rate: 1e-4,
            patch: 32,
            patch_stride: 16,
            batch: 2,
            seed: 0,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.kernel.is_multiple_of(2) || self.kernel == 0 {
            return Err(invalid("kernel must be odd"));
        }
        if self.channels == 0 || self.n_res_blocks == 0 {
            return Err(invalid("channels and n_res_blocks must be >= 1"));
        }
        if self.patch < self.kernel || self.patch < crate::volume::MIN_DIM {
            return Err(invalid("patch must be >= kernel and >= the minimum volume extent"));
        }
        if self.patch_stride == 0 || self.patch_stride > self.patch {
            return Err(invalid("stride must be in 1..=patch"));
        }
        if self.batch == 0 {
            return Err(invalid("batch must be >= 1"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(invalid("learning rate must be positive"));
        }
        Ok(())
    }

    /// Radius beyond which an input voxel cannot influence an output voxel:
    /// (kernel-1)/2 per convolution, summed over every convolution.
    pub fn receptive_field_radius(&self) -> usize {
        (2 * self.n_res_blocks + 2) * ((self.kernel - 1) / 2)
    }
}

/// One convolution layer's tensors. Weight layout is
/// `[c_out][c_in][kz][ky][kx]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer<T> {
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub w: Vec<T>,
    pub b: Vec<T>,
}

/// Gradient (or moment) storage aligned with one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads<T> {
    pub w: Vec<T>,
    pub b: Vec<T>,
}

pub type Gradients<T> = Vec<LayerGrads<T>>;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: Gradients<T>,
    pub v: Gradients<T>,
    pub step: u64,
}

/// All learnable tensors plus optimizer state. The layer order is: input
/// convolution, the two convolutions of each residual block, output
/// convolution.
#[derive(Debug, Clone, PartialEq)]
pub struct NetParams<T> {
    pub cfg: NetConfig,
    pub layers: Vec<ConvLayer<T>>,
}

impl<T: Scalar> NetParams<T> {
    /// Number of learnable scalars.
    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    pub fn zero_grads(&self) -> Gradients<T> {
        self.layers
            .iter()
            .map(|l| LayerGrads { w: vec![T::zero(); l.w.len()], b: vec![T::zero(); l.b.len()] })
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.w.iter().all(|v| v.is_finite()) && l.b.iter().all(|v| v.is_finite()))
    }
}

/// Full parameter bundle used by training: weights plus Adam state.
#[derive(Debug, Clone, PartialEq)]
pub struct NetState<T> {
    pub params: NetParams<T>,
    pub adam: AdamState<T>,
}

impl<T: Scalar> NetState<T> {
    pub fn new(params: NetParams<T>) -> Self {
        let adam = AdamState { m: params.zero_grads(), v: params.zero_grads(), step: 0 };
        NetState { params, adam }
    }
}

/// He-style fan-in initialization with zero biases, deterministic per seed.
pub fn net_init<T: Scalar>(cfg: &NetConfig) -> Result<NetParams<T>> {
    cfg.validate()?;
    let mut rng = Rng::new(cfg.seed);
    let mut layers = Vec::new();
    let c = cfg.channels;
    let mut dims: Vec<(usize, usize)> = vec![(2, c)];
    for _ in 0..cfg.n_res_blocks {
        dims.push((c, c));
        dims.push((c, c));
    }
    dims.push((c, 2));
    let n_layers = dims.len();
    for (li, (c_in, c_out)) in dims.into_iter().enumerate() {
        let k3 = cfg.kernel * cfg.kernel * cfg.kernel;
        let fan_in = c_in * k3;
        let mut sigma = (2.0 / fan_in as f64).sqrt();
        // The output projection starts at a tenth of the He scale so the
        // untrained corrector sits near the identity when the global skip
        // is on.
        if li == n_layers - 1 {
            sigma *= 0.1;
        }
        let w = (0..c_out * c_in * k3).map(|_| T::from_f64(sigma * rng.normal())).collect();
        layers.push(ConvLayer { c_in, c_out, kernel: cfg.kernel, w, b: vec![T::zero(); c_out] });
    }
    Ok(NetParams { cfg: cfg.clone(), layers })
}

/// Dense multichannel volume, layout `[c][z][y][x]` with x fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4<T> {
    pub channels: usize,
    pub shape: [usize; 3],
    pub data: Vec<T>,
}

impl<T: Scalar> Tensor4<T> {
    pub fn zeros(channels: usize, shape: [usize; 3]) -> Self {
        Tensor4 { channels, shape, data: vec![T::zero(); channels * shape.iter().product::<usize>()] }
    }

    pub fn spatial_len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn from_volume(vol: &ComplexVolume) -> Self {
        let n = vol.len();
        let mut data = vec![T::zero(); 2 * n];
        for (i, v) in vol.data.iter().enumerate() {
            data[i] = T::from_f64(v.re);
            data[n + i] = T::from_f64(v.im);
        }
        Tensor4 { channels: 2, shape: vol.shape, data }
    }

    pub fn to_volume(&self, spacing_mm: [f64; 3]) -> Result<ComplexVolume> {
        if self.channels != 2 {
            return Err(mismatch("tensor must have two channels to become complex"));
        }
        let n = self.spatial_len();
        let data = (0..n)
            .map(|i| Complex64::new(self.data[i].as_f64(), self.data[n + i].as_f64()))
            .collect();
        let mut vol = ComplexVolume::from_data(self.shape, data)?;
        vol.spacing_mm = spacing_mm;
        Ok(vol)
    }
}

/// Cached activations from one forward pass, as needed by backprop.
pub(crate) struct ForwardTrace<T> {
    pub input: Tensor4<T>,
    pub pre_in: Tensor4<T>,
    /// h entering each residual block; `block_inputs[0]` is relu(pre_in).
    pub block_inputs: Vec<Tensor4<T>>,
    pub pre_a: Vec<Tensor4<T>>,
    pub act_a: Vec<Tensor4<T>>,
    pub output: Tensor4<T>,
}

fn relu<T: Scalar>(t: &Tensor4<T>) -> Tensor4<T> {
    Tensor4 {
        channels: t.channels,
        shape: t.shape,
        data: t.data.iter().map(|&v| if v > T::zero() { v } else { T::zero() }).collect(),
    }
}

fn check_input_shape(cfg: &NetConfig, shape: [usize; 3]) -> Result<()> {
    if shape.iter().any(|&n| n < cfg.kernel) {
        return Err(invalid(alloc::format!(
            "input shape {shape:?} below kernel extent {}",
            cfg.kernel
        )));
    }
    Ok(())
}

pub(crate) fn forward_trace<T: Scalar>(p: &NetParams<T>, x: &Tensor4<T>) -> Result<ForwardTrace<T>> {
    check_input_shape(&p.cfg, x.shape)?;
    let blocks = p.cfg.n_res_blocks;
    let pre_in = conv::conv_forward(&p.layers[0], x);
    let mut block_inputs = Vec::with_capacity(blocks + 1);
    block_inputs.push(relu(&pre_in));
    let mut pre_a = Vec::with_capacity(blocks);
    let mut act_a = Vec::with_capacity(blocks);
    for b in 0..blocks {
        let h = &block_inputs[b];
        let pa = conv::conv_forward(&p.layers[1 + 2 * b], h);
        let aa = relu(&pa);
        let pb = conv::conv_forward(&p.layers[2 + 2 * b], &aa);
        let mut h_next = h.clone();
        for (o, v) in h_next.data.iter_mut().zip(&pb.data) {
            *o += *v;
        }
        pre_a.push(pa);
        act_a.push(aa);
        block_inputs.push(h_next);
    }
    let mut output = conv::conv_forward(&p.layers[1 + 2 * blocks], &block_inputs[blocks]);
    if p.cfg.global_skip {
        for (o, v) in output.data.iter_mut().zip(&x.data) {
            *o += *v;
        }
    }
    Ok(ForwardTrace { input: x.clone(), pre_in, block_inputs, pre_a, act_a, output })
}

/// Forward pass that keeps only what inference needs.
pub(crate) fn forward_only<T: Scalar>(p: &NetParams<T>, x: &Tensor4<T>) -> Result<Tensor4<T>> {
    check_input_shape(&p.cfg, x.shape)?;
    let blocks = p.cfg.n_res_blocks;
    let mut h = relu(&conv::conv_forward(&p.layers[0], x));
    for b in 0..blocks {
        let a = relu(&conv::conv_forward(&p.layers[1 + 2 * b], &h));
        let pb = conv::conv_forward(&p.layers[2 + 2 * b], &a);
        for (o, v) in h.data.iter_mut().zip(&pb.data) {
            *o += *v;
        }
    }
    let mut y = conv::conv_forward(&p.layers[1 + 2 * blocks], &h);
    if p.cfg.global_skip {
        for (o, v) in y.data.iter_mut().zip(&x.data) {
            *o += *v;
        }
    }
    Ok(y)
}

/// Run the network on a complex volume (any shape at or above the kernel
/// extent per axis).
pub fn net_forward<T: Scalar>(p: &NetParams<T>, x: &ComplexVolume) -> Result<ComplexVolume> {
    let t = Tensor4::from_volume(x);
    forward_only(p, &t)?.to_volume(x.spacing_mm)
}

/// Mean absolute difference over voxels and both channels.
pub fn loss_l1(pred: &ComplexVolume, target: &ComplexVolume) -> Result<f64> {
    if pred.shape != target.shape {
        return Err(mismatch("loss operands differ in shape"));
    }
    let n = pred.len() as f64;
    let sum: f64 = pred
        .data
        .iter()
        .zip(&target.data)
        .map(|(p, t)| (p.re - t.re).abs() + (p.im - t.im).abs())
        .sum();
    Ok(sum / (2.0 * n))
}

pub(crate) fn loss_and_grad_tensor<T: Scalar>(
    pred: &Tensor4<T>,
    target: &Tensor4<T>,
) -> Result<(f64, Tensor4<T>)> {
    if pred.shape != target.shape || pred.channels != target.channels {
        return Err(mismatch("loss operands differ in shape"));
    }
    let len = pred.data.len();
    let inv = T::from_f64(1.0 / len as f64);
    let mut grad = Tensor4::zeros(pred.channels, pred.shape);
    let mut acc = 0.0f64;
    for i in 0..len {
        let d = pred.data[i] - target.data[i];
        acc += d.abs().as_f64();
        // Subgradient of |.| at zero is zero.
        grad.data[i] = if d > T::zero() {
            inv
        } else if d < T::zero() {
            -inv
        } else {
            T::zero()
        };
    }
    Ok((acc / len as f64, grad))
}

/// Exact gradients of the L1 loss with respect to every parameter tensor.
/// Returns the loss value alongside.
pub fn net_backward<T: Scalar>(
    p: &NetParams<T>,
    x: &ComplexVolume,
    target: &ComplexVolume,
) -> Result<(f64, Gradients<T>)> {
    let tx = Tensor4::from_volume(x);
    let tt = Tensor4::from_volume(target);
    backward_tensors(p, &tx, &tt)
}

pub(crate) fn backward_tensors<T: Scalar>(
    p: &NetParams<T>,
    x: &Tensor4<T>,
    target: &Tensor4<T>,
) -> Result<(f64, Gradients<T>)> {
    let trace = forward_trace(p, x)?;
    let (loss, d_out) = loss_and_grad_tensor(&trace.output, target)?;
    let grads = backward_from_trace(p, &trace, d_out);
    Ok((loss, grads))
}

pub(crate) fn backward_from_trace<T: Scalar>(
    p: &NetParams<T>,
    trace: &ForwardTrace<T>,
    d_out: Tensor4<T>,
) -> Gradients<T> {
    let blocks = p.cfg.n_res_blocks;
    let mut grads = p.zero_grads();

    // Output convolution.
    let out_idx = 1 + 2 * blocks;
    let (dw, db) = conv::conv_backward_weights(&p.layers[out_idx], &trace.block_inputs[blocks], &d_out);
    grads[out_idx] = LayerGrads { w: dw, b: db };
    let mut d_h = conv::conv_backward_input(&p.layers[out_idx], &d_out);

    // Residual blocks, reversed.
    for b in (0..blocks).rev() {
        let idx_a = 1 + 2 * b;
        let idx_b = 2 + 2 * b;
        // d through the second conv of the block.
        let (dw_b, db_b) = conv::conv_backward_weights(&p.layers[idx_b], &trace.act_a[b], &d_h);
        grads[idx_b] = LayerGrads { w: dw_b, b: db_b };
        let mut d_a = conv::conv_backward_input(&p.layers[idx_b], &d_h);
        relu_backward(&mut d_a, &trace.pre_a[b]);
        let (dw_a, db_a) = conv::conv_backward_weights(&p.layers[idx_a], &trace.block_inputs[b], &d_a);
        grads[idx_a] = LayerGrads { w: dw_a, b: db_a };
        let d_through = conv::conv_backward_input(&p.layers[idx_a], &d_a);
        // Skip path adds the incoming gradient unchanged.
        for (o, v) in d_h.data.iter_mut().zip(&d_through.data) {
            *o += *v;
        }
    }

    // Input convolution (no need for the gradient w.r.t. the input data).
    relu_backward(&mut d_h, &trace.pre_in);
    let (dw_in, db_in) = conv::conv_backward_weights(&p.layers[0], &trace.input, &d_h);
    grads[0] = LayerGrads { w: dw_in, b: db_in };
    grads
}

fn relu_backward<T: Scalar>(d: &mut Tensor4<T>, pre: &Tensor4<T>) {
    for (g, &p) in d.data.iter_mut().zip(&pre.data) {
        if p <= T::zero() {
            *g = T::zero();
        }
    }
}
