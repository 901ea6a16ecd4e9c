//! Decoder network mapping a material vector straight to its preview image.
//!
//! The standard stack is
//!
//! ```text
//! 4 × { Conv1d(64 filters, kernel 3, stride 1, same padding) → ELU → Upsample(×2, nearest) }
//!   → Flatten → Dense(1000) → ELU → Dense(res² · 3)
//! ```
//!
//! The input is treated as a one-channel sequence of length `m`; after the
//! four upsamplings it has length `16m`. The flatten step orders features
//! channel-major (`channel · len + position`), and the output is the image in
//! [`ImageBuffer`] pixel order. At `m = 19`, `res = 32` the network holds
//! 22,569,384 parameters.
//!
//! Everything is generic over the float type: training runs in `f32`, while
//! gradient checks use `f64`.

mod io;
mod train;

use std::fmt::Debug;
use std::ops::AddAssign;

use ndarray::{s, Array1, Array2, ArrayView2, Axis, LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, GmsError, Result};
use crate::material::MaterialParams;
use crate::render::ImageBuffer;
use crate::seed;

pub use io::{read_network, write_network, NETWORK_MAGIC, NETWORK_VERSION};
pub use train::{psnr, train, Adam, AdamConfig, EpochRecord, Psnr, TrainConfig, TrainReport};

/// Float types the network can run in.
pub trait Real:
    Float + FromPrimitive + LinalgScalar + ScalarOperand + AddAssign + Send + Sync + Debug + Default + 'static
{
}

impl Real for f32 {}
impl Real for f64 {}

pub(crate) fn real<T: Real>(v: f64) -> T {
    T::from_f64(v).expect("representable constant")
}

/// Shape constants of the standard stack.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub m: usize,
    pub res: usize,
    pub channels: usize,
    pub kernel: usize,
    pub blocks: usize,
    pub hidden: usize,
}

impl Architecture {
    pub fn standard(m: usize, res: usize) -> Self {
        Self {
            m,
            res,
            channels: 64,
            kernel: 3,
            blocks: 4,
            hidden: 1000,
        }
    }

    pub fn sequence_len(&self) -> usize {
        self.m << self.blocks
    }

    pub fn output_len(&self) -> usize {
        self.res * self.res * 3
    }

    fn validate(&self) -> Result<()> {
        if self.m == 0 || self.res == 0 || self.channels == 0 || self.hidden == 0 {
            return Err(GmsError::InvalidDimension("architecture sizes must be positive".into()));
        }
        if self.kernel % 2 == 0 {
            return Err(GmsError::InvalidDimension("same padding needs an odd kernel".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Layer<T> {
    /// `weight[o, i·kernel + j]` multiplies input channel `i` at offset
    /// `j − kernel/2`.
    Conv1d {
        weight: Array2<T>,
        bias: Array1<T>,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
    },
    Elu,
    /// Nearest-neighbour ×2 along the sequence.
    Upsample,
    Flatten,
    /// `y = x · weight + bias` with `weight` stored as `[inputs, outputs]`.
    Dense { weight: Array2<T>, bias: Array1<T> },
}

impl<T: Real> Layer<T> {
    pub fn conv1d(weight: Array2<T>, bias: Array1<T>, kernel: usize) -> Result<Self> {
        let out_channels = weight.nrows();
        if kernel == 0 || kernel % 2 == 0 || weight.ncols() % kernel != 0 {
            return Err(GmsError::InvalidDimension("conv weight must be [out, in·k] with odd k".into()));
        }
        check_dim(out_channels, bias.len())?;
        Ok(Layer::Conv1d {
            in_channels: weight.ncols() / kernel,
            out_channels,
            kernel,
            weight,
            bias,
        })
    }

    pub fn dense(weight: Array2<T>, bias: Array1<T>) -> Result<Self> {
        check_dim(weight.ncols(), bias.len())?;
        Ok(Layer::Dense { weight, bias })
    }

    pub fn parameter_count(&self) -> usize {
        match self {
            Layer::Conv1d { weight, bias, .. } | Layer::Dense { weight, bias } => weight.len() + bias.len(),
            _ => 0,
        }
    }

    fn params(&self) -> Option<(&Array2<T>, &Array1<T>)> {
        match self {
            Layer::Conv1d { weight, bias, .. } | Layer::Dense { weight, bias } => Some((weight, bias)),
            _ => None,
        }
    }

    fn params_mut(&mut self) -> Option<(&mut Array2<T>, &mut Array1<T>)> {
        match self {
            Layer::Conv1d { weight, bias, .. } | Layer::Dense { weight, bias } => Some((weight, bias)),
            _ => None,
        }
    }
}

/// Activations for a batch. Sequences are stored `[channels, batch · len]`
/// so a convolution over the whole batch is one matrix product.
#[derive(Clone, Debug)]
enum Act<T> {
    Seq { data: Array2<T>, len: usize },
    Flat(Array2<T>),
}

/// Per-layer parameter gradients, `None` for parameter-free layers.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<T> {
    pub layers: Vec<Option<(Array2<T>, Array1<T>)>>,
}

impl<T: Real> Gradients<T> {
    /// All gradient entries in parameter order.
    pub fn flatten(&self) -> Vec<T> {
        let mut out = Vec::new();
        for (w, b) in self.layers.iter().flatten() {
            out.extend(w.iter().copied());
            out.extend(b.iter().copied());
        }
        out
    }

    pub fn scale(&mut self, factor: T) {
        for (w, b) in self.layers.iter_mut().flatten() {
            w.mapv_inplace(|v| v * factor);
            b.mapv_inplace(|v| v * factor);
        }
    }
}

/// How the squared error is reduced to a scalar loss.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Reduction {
    #[default]
    Mean,
    Sum,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecoderNetwork<T = f32> {
    input_len: usize,
    layers: Vec<Layer<T>>,
}

/// Cached intermediate values of a forward pass.
struct Tape<T> {
    /// Input to each layer (for convs, the im2col matrix; for ELU, its output).
    saved: Vec<Act<T>>,
    output: Array2<T>,
}

impl<T: Real> DecoderNetwork<T> {
    /// The standard stack with Glorot-uniform weights and zero biases.
    pub fn init_glorot(arch: Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = seed::rng(seed);
        let mut glorot = |rows: usize, cols: usize, fan_in: usize, fan_out: usize| {
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            Array2::from_shape_simple_fn((rows, cols), || real::<T>(rng.random_range(-bound..bound)))
        };
        let mut layers = Vec::new();
        let mut in_ch = 1;
        for _ in 0..arch.blocks {
            let k = arch.kernel;
            layers.push(Layer::conv1d(
                glorot(arch.channels, in_ch * k, in_ch * k, arch.channels * k),
                Array1::zeros(arch.channels),
                k,
            )?);
            layers.push(Layer::Elu);
            layers.push(Layer::Upsample);
            in_ch = arch.channels;
        }
        let flat = arch.channels * arch.sequence_len();
        layers.push(Layer::Flatten);
        layers.push(Layer::Dense {
            weight: glorot(flat, arch.hidden, flat, arch.hidden),
            bias: Array1::zeros(arch.hidden),
        });
        layers.push(Layer::Elu);
        let out = arch.output_len();
        layers.push(Layer::Dense {
            weight: glorot(arch.hidden, out, arch.hidden, out),
            bias: Array1::zeros(out),
        });
        Self::from_layers(arch.m, layers)
    }

    /// Builds a custom stack, checking that consecutive shapes agree.
    pub fn from_layers(input_len: usize, layers: Vec<Layer<T>>) -> Result<Self> {
        if input_len == 0 {
            return Err(GmsError::InvalidDimension("input length must be positive".into()));
        }
        // (channels, len) while sequential, (features, 0) once flat.
        let mut shape = (1usize, input_len);
        let mut flat = false;
        for layer in &layers {
            match layer {
                Layer::Conv1d { in_channels, out_channels, .. } => {
                    if flat {
                        return Err(GmsError::InvalidDimension("convolution after flatten".into()));
                    }
                    check_dim(shape.0, *in_channels)?;
                    shape.0 = *out_channels;
                }
                Layer::Elu => {}
                Layer::Upsample => {
                    if flat {
                        return Err(GmsError::InvalidDimension("upsampling after flatten".into()));
                    }
                    shape.1 *= 2;
                }
                Layer::Flatten => {
                    if !flat {
                        shape = (shape.0 * shape.1, 0);
                        flat = true;
                    }
                }
                Layer::Dense { weight, .. } => {
                    if !flat {
                        return Err(GmsError::InvalidDimension("dense layer needs a flatten first".into()));
                    }
                    check_dim(shape.0, weight.nrows())?;
                    shape.0 = weight.ncols();
                }
            }
        }
        Ok(Self { input_len, layers })
    }

    pub fn input_len(&self) -> usize {
        self.input_len
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    pub fn output_len(&self) -> usize {
        let mut shape = (1usize, self.input_len);
        let mut flat = false;
        for layer in &self.layers {
            match layer {
                Layer::Conv1d { out_channels, .. } => shape.0 = *out_channels,
                Layer::Upsample => shape.1 *= 2,
                Layer::Flatten if !flat => {
                    shape = (shape.0 * shape.1, 1);
                    flat = true;
                }
                Layer::Dense { weight, .. } => shape.0 = weight.ncols(),
                _ => {}
            }
        }
        shape.0 * shape.1
    }

    /// Side length of the square RGB output, if the output is one.
    pub fn resolution(&self) -> Option<usize> {
        let pixels = self.output_len() / 3;
        let res = (pixels as f64).sqrt().round() as usize;
        (res * res * 3 == self.output_len()).then_some(res)
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(Layer::parameter_count).sum()
    }

    /// All parameters in documented order: per layer, weights row-major
    /// then biases.
    pub fn parameters(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.parameter_count());
        for (w, b) in self.layers.iter().filter_map(Layer::params) {
            out.extend(w.iter().copied());
            out.extend(b.iter().copied());
        }
        out
    }

    pub fn set_parameters(&mut self, values: &[T]) -> Result<()> {
        check_dim(self.parameter_count(), values.len())?;
        let mut it = values.iter().copied();
        for (w, b) in self.layers.iter_mut().filter_map(Layer::params_mut) {
            w.iter_mut().chain(b.iter_mut()).for_each(|v| *v = it.next().expect("length checked"));
        }
        Ok(())
    }

    /// Raw outputs for a batch of inputs given as rows.
    pub fn forward_batch(&self, inputs: ArrayView2<T>) -> Result<Array2<T>> {
        Ok(self.run(inputs, false)?.output)
    }

    /// Raw (unclamped) output for one input.
    pub fn forward_raw(&self, x: &[T]) -> Result<Vec<T>> {
        check_dim(self.input_len, x.len())?;
        let view = ArrayView2::from_shape((1, x.len()), x).expect("row shape");
        Ok(self.forward_batch(view)?.into_raw_vec_and_offset().0)
    }

    /// Predicted image for a material, clamped to `[0, 1]`.
    pub fn forward(&self, x: &MaterialParams) -> Result<ImageBuffer> {
        let res = self
            .resolution()
            .ok_or_else(|| GmsError::InvalidDimension("network output is not a square RGB image".into()))?;
        let input: Vec<T> = x.as_slice().iter().map(|v| real(*v)).collect();
        let raw = self.forward_raw(&input)?;
        let raw: Vec<f32> = raw.iter().map(|v| v.to_f32().unwrap_or(f32::NAN)).collect();
        ImageBuffer::from_raw(res, res, &raw)
    }

    fn run(&self, inputs: ArrayView2<T>, record: bool) -> Result<Tape<T>> {
        check_dim(self.input_len, inputs.ncols())?;
        let batch = inputs.nrows();
        let mut act = Act::Seq {
            data: inputs.to_owned().into_shape_with_order((1, batch * self.input_len)).expect("contiguous"),
            len: self.input_len,
        };
        let mut saved = Vec::new();
        for layer in &self.layers {
            let (next, keep) = forward_layer(layer, act);
            if record {
                saved.push(keep);
            }
            act = next;
        }
        let output = match act {
            Act::Flat(d) => d,
            Act::Seq { data, len } => flatten(&data, len),
        };
        Ok(Tape { saved, output })
    }

    /// Squared-error loss against `targets` (rows) and its gradient.
    pub fn loss_and_gradients(
        &self,
        inputs: ArrayView2<T>,
        targets: ArrayView2<T>,
        reduction: Reduction,
    ) -> Result<(T, Gradients<T>)> {
        let tape = self.run(inputs, true)?;
        if tape.output.dim() != targets.dim() {
            return Err(GmsError::DimensionMismatch {
                expected: tape.output.len(),
                actual: targets.len(),
            });
        }
        let diff = &tape.output - &targets;
        let sum_sq = diff.iter().fold(T::zero(), |acc, d| acc + *d * *d);
        let (loss, scale) = match reduction {
            Reduction::Sum => (sum_sq, real::<T>(2.0)),
            Reduction::Mean => {
                let count = real::<T>(diff.len() as f64);
                (sum_sq / count, real::<T>(2.0) / count)
            }
        };
        let grad_out = diff * scale;
        Ok((loss, self.backward(tape, grad_out)))
    }

    fn backward(&self, tape: Tape<T>, grad_out: Array2<T>) -> Gradients<T> {
        let mut grads: Vec<Option<(Array2<T>, Array1<T>)>> = vec![None; self.layers.len()];
        let mut delta = Act::Flat(grad_out);
        for (i, (layer, saved)) in self.layers.iter().zip(tape.saved).enumerate().rev() {
            let (d, g) = backward_layer(layer, saved, delta, i > 0);
            grads[i] = g;
            delta = d;
        }
        Gradients { layers: grads }
    }

    /// Mean squared error and gradients for one material/target pair.
    pub fn gradients_for(&self, x: &[T], target: &[T]) -> Result<(T, Gradients<T>)> {
        check_dim(self.input_len, x.len())?;
        let inputs = ArrayView2::from_shape((1, x.len()), x).expect("row shape");
        let targets = ArrayView2::from_shape((1, target.len()), target)
            .map_err(|_| GmsError::InvalidDimension("target shape".into()))?;
        self.loss_and_gradients(inputs, targets, Reduction::Mean)
    }
}

fn elu<T: Real>(v: T) -> T {
    if v > T::zero() {
        v
    } else {
        v.exp_m1()
    }
}

fn flatten<T: Real>(data: &Array2<T>, len: usize) -> Array2<T> {
    let channels = data.nrows();
    let batch = data.ncols() / len;
    let mut out = Array2::zeros((batch, channels * len));
    for b in 0..batch {
        for c in 0..channels {
            out.slice_mut(s![b, c * len..(c + 1) * len])
                .assign(&data.slice(s![c, b * len..(b + 1) * len]));
        }
    }
    out
}

fn unflatten<T: Real>(flat: &Array2<T>, channels: usize, len: usize) -> Array2<T> {
    let batch = flat.nrows();
    let mut out = Array2::zeros((channels, batch * len));
    for b in 0..batch {
        for c in 0..channels {
            out.slice_mut(s![c, b * len..(b + 1) * len])
                .assign(&flat.slice(s![b, c * len..(c + 1) * len]));
        }
    }
    out
}

/// `[in·k, batch·len]` patch matrix with zero padding at sample borders.
fn im2col<T: Real>(x: &Array2<T>, len: usize, kernel: usize) -> Array2<T> {
    let in_ch = x.nrows();
    let cols = x.ncols();
    let batch = cols / len;
    let pad = kernel / 2;
    let x = x.as_standard_layout();
    let src = x.as_slice().expect("standard layout");
    let mut out = Array2::zeros((in_ch * kernel, cols));
    let dst = out.as_slice_mut().expect("fresh array");
    for c in 0..in_ch {
        for j in 0..kernel {
            let (lo, hi) = valid_span(j, pad, len);
            let row = &mut dst[(c * kernel + j) * cols..][..cols];
            for b in 0..batch {
                let base = b * len;
                let from = c * cols + base + lo + j - pad;
                row[base + lo..base + hi].copy_from_slice(&src[from..from + hi - lo]);
            }
        }
    }
    out
}

fn col2im<T: Real>(dcols: &Array2<T>, in_ch: usize, len: usize, kernel: usize) -> Array2<T> {
    let cols = dcols.ncols();
    let batch = cols / len;
    let pad = kernel / 2;
    let dcols = dcols.as_standard_layout();
    let src = dcols.as_slice().expect("standard layout");
    let mut out = Array2::zeros((in_ch, cols));
    let dst = out.as_slice_mut().expect("fresh array");
    for c in 0..in_ch {
        let acc = &mut dst[c * cols..][..cols];
        for j in 0..kernel {
            let (lo, hi) = valid_span(j, pad, len);
            let row = &src[(c * kernel + j) * cols..][..cols];
            for b in 0..batch {
                let base = b * len;
                let to = base + lo + j - pad;
                for (a, &r) in acc[to..to + hi - lo].iter_mut().zip(&row[base + lo..base + hi]) {
                    *a = *a + r;
                }
            }
        }
    }
    out
}

/// Output positions `lo..hi` whose tap `j` lands inside the sample.
fn valid_span(j: usize, pad: usize, len: usize) -> (usize, usize) {
    let lo = pad.saturating_sub(j);
    let hi = (len + pad).saturating_sub(j).min(len);
    (lo, hi.max(lo))
}

/// Returns the layer output and what backward needs from this layer.
fn forward_layer<T: Real>(layer: &Layer<T>, act: Act<T>) -> (Act<T>, Act<T>) {
    match (layer, act) {
        (Layer::Conv1d { weight, bias, kernel, .. }, Act::Seq { data, len }) => {
            let cols = im2col(&data, len, *kernel);
            let mut out = weight.dot(&cols);
            out += &bias.view().insert_axis(Axis(1));
            (Act::Seq { data: out, len }, Act::Seq { data: cols, len })
        }
        (Layer::Elu, act) => {
            let out = match act {
                Act::Seq { data, len } => Act::Seq { data: data.mapv(elu), len },
                Act::Flat(d) => Act::Flat(d.mapv(elu)),
            };
            (out.clone(), out)
        }
        (Layer::Upsample, Act::Seq { data, len }) => {
            let mut out = Array2::zeros((data.nrows(), data.ncols() * 2));
            for (src, mut dst) in data.rows().into_iter().zip(out.rows_mut()) {
                for (i, v) in src.iter().enumerate() {
                    dst[2 * i] = *v;
                    dst[2 * i + 1] = *v;
                }
            }
            let shape = Act::Seq {
                data: Array2::zeros((data.nrows(), 0)),
                len,
            };
            (Act::Seq { data: out, len: len * 2 }, shape)
        }
        (Layer::Flatten, Act::Seq { data, len }) => {
            let shape = Act::Seq {
                data: Array2::zeros((data.nrows(), 0)),
                len,
            };
            (Act::Flat(flatten(&data, len)), shape)
        }
        (Layer::Flatten, flat) => (flat, Act::Flat(Array2::zeros((0, 0)))),
        (Layer::Dense { weight, bias }, Act::Flat(x)) => {
            let mut out = if x.nrows() == 1 {
                // One row: stream the weight rows once instead of packing
                // the whole matrix for a GEMM.
                let mut acc = Array1::<T>::zeros(weight.ncols());
                for (xi, w) in x.row(0).iter().zip(weight.rows()) {
                    acc.scaled_add(*xi, &w);
                }
                acc.insert_axis(Axis(0))
            } else {
                x.dot(weight)
            };
            out += bias;
            (Act::Flat(out), Act::Flat(x))
        }
        _ => unreachable!("layer shapes validated at construction"),
    }
}

fn backward_layer<T: Real>(
    layer: &Layer<T>,
    saved: Act<T>,
    delta: Act<T>,
    need_input_grad: bool,
) -> (Act<T>, Option<(Array2<T>, Array1<T>)>) {
    match (layer, saved, delta) {
        (Layer::Conv1d { weight, in_channels, kernel, .. }, Act::Seq { data: cols, len }, delta) => {
            let dout = match delta {
                Act::Seq { data, .. } => data,
                Act::Flat(d) => unflatten(&d, weight.nrows(), len),
            };
            let dw = dout.dot(&cols.t());
            let db = dout.sum_axis(Axis(1));
            let dx = if need_input_grad {
                col2im(&weight.t().dot(&dout), *in_channels, len, *kernel)
            } else {
                Array2::zeros((0, 0))
            };
            (Act::Seq { data: dx, len }, Some((dw, db)))
        }
        (Layer::Elu, out, delta) => {
            let d = match (out, delta) {
                (Act::Seq { data: y, len }, Act::Seq { data: dy, .. }) => Act::Seq {
                    data: elu_backward(&y, dy),
                    len,
                },
                (Act::Flat(y), Act::Flat(dy)) => Act::Flat(elu_backward(&y, dy)),
                (Act::Seq { data: y, len }, Act::Flat(dy)) => Act::Seq {
                    data: elu_backward(&y, unflatten(&dy, y.nrows(), len)),
                    len,
                },
                _ => unreachable!("activation kinds agree"),
            };
            (d, None)
        }
        (Layer::Upsample, Act::Seq { data: shape, len }, delta) => {
            let dout = match delta {
                Act::Seq { data, .. } => data,
                Act::Flat(d) => unflatten(&d, shape.nrows(), len * 2),
            };
            let half = dout.ncols() / 2;
            let mut dx = Array2::zeros((dout.nrows(), half));
            for (src, mut dst) in dout.rows().into_iter().zip(dx.rows_mut()) {
                for i in 0..half {
                    dst[i] = src[2 * i] + src[2 * i + 1];
                }
            }
            (Act::Seq { data: dx, len }, None)
        }
        (Layer::Flatten, Act::Seq { data: shape, len }, Act::Flat(d)) => {
            (Act::Seq { data: unflatten(&d, shape.nrows(), len), len }, None)
        }
        (Layer::Flatten, Act::Flat(_), delta) => (delta, None),
        (Layer::Dense { weight, .. }, Act::Flat(x), Act::Flat(dy)) => {
            let dw = x.t().dot(&dy);
            let db = dy.sum_axis(Axis(0));
            let dx = if need_input_grad {
                dy.dot(&weight.t())
            } else {
                Array2::zeros((0, 0))
            };
            (Act::Flat(dx), Some((dw, db)))
        }
        _ => unreachable!("layer shapes validated at construction"),
    }
}

fn elu_backward<T: Real>(y: &Array2<T>, mut dy: Array2<T>) -> Array2<T> {
    dy.zip_mut_with(y, |d, &y| {
        if y <= T::zero() {
            *d = *d * (y + T::one());
        }
    });
    dy
}

/// Converts `[0, 1]` images to training rows.
pub(crate) fn image_row<T: Real>(img: &ImageBuffer) -> Vec<T> {
    img.pixels.iter().map(|v| real(*v as f64)).collect()
}
