//! Complex-valued activation functions, weight initialization, and the
//! real/complex parameter-parity calculator.
//!
//! Every activation comes with the 2x2 real Jacobian its backward pass needs;
//! none of them is holomorphic, so gradients are always taken with respect to
//! the (re, im) pair. Conventions at non-differentiable points: the gradient
//! is zero at ReLU kinks, on the zReLU quadrant boundary, and where
//! `|d| + b <= 0` in modReLU; the cardioid takes Jacobian `I/2` at the origin
//! (the angular mean of its directional limits).

use crate::conv::ConvKernel;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::ComplexTensor;

/// The activation families compared in this crate. `Relu2Ch` labels the
/// two-channel real configuration; it computes the same values as `CRelu`
/// but marks a network built from real convolutions.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ActivationKind {
    Relu2Ch,
    CRelu,
    ZRelu,
    ModRelu,
    Cardioid,
}

impl ActivationKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(ActivationKind::Relu2Ch),
            "crelu" => Ok(ActivationKind::CRelu),
            "zrelu" => Ok(ActivationKind::ZRelu),
            "modrelu" => Ok(ActivationKind::ModRelu),
            "cardioid" => Ok(ActivationKind::Cardioid),
            other => Err(Error::Config(format!(
                "unknown activation '{other}' (valid: relu, crelu, zrelu, modrelu, cardioid)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ActivationKind::Relu2Ch => "relu",
            ActivationKind::CRelu => "crelu",
            ActivationKind::ZRelu => "zrelu",
            ActivationKind::ModRelu => "modrelu",
            ActivationKind::Cardioid => "cardioid",
        }
    }

    /// modReLU carries one learnable real bias per output feature map.
    pub fn has_bias(&self) -> bool {
        matches!(self, ActivationKind::ModRelu)
    }
}

/// ReLU applied independently to the real and imaginary channels.
pub fn relu_two_channel(d: &ComplexTensor) -> ComplexTensor {
    let mut out = d.clone();
    for v in out.re_mut().iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    for v in out.im_mut().iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    out
}

/// CReLU: separate ReLUs on the real and imaginary components.
pub fn crelu(d: &ComplexTensor) -> ComplexTensor {
    relu_two_channel(d)
}

/// zReLU: pass the value exactly when the phase lies in the closed first
/// quadrant `[0, pi/2]`, else zero.
pub fn zrelu(d: &ComplexTensor) -> ComplexTensor {
    let mut out = d.clone();
    let (re, im) = out.planes_mut();
    for i in 0..re.len() {
        if !(re[i] >= 0.0 && im[i] >= 0.0) {
            re[i] = 0.0;
            im[i] = 0.0;
        }
    }
    out
}

/// modReLU: `ReLU(|d| + b) e^{i theta_d}` with one real bias per channel of
/// axis 0 (`bias.len()` must equal `shape[0]`).
pub fn modrelu(d: &ComplexTensor, bias: &[f64]) -> Result<ComplexTensor> {
    let channels = d.shape()[0];
    if bias.len() != channels {
        return Err(Error::ShapeMismatch {
            context: "modrelu bias",
            axis: 0,
            got: bias.len(),
            expected: channels,
        });
    }
    let per = d.numel() / channels;
    let mut out = ComplexTensor::zeros(d.shape());
    let (ore, oim) = out.planes_mut();
    for (c, &b) in bias.iter().enumerate() {
        for t in c * per..(c + 1) * per {
            let (x, y) = (d.re()[t], d.im()[t]);
            let r = x.hypot(y);
            if r > 0.0 && r + b > 0.0 {
                // (1 + b/r) d keeps the phase exactly and is the identity
                // bit-for-bit when b = 0.
                let s = 1.0 + b / r;
                ore[t] = s * x;
                oim[t] = s * y;
            }
        }
    }
    Ok(out)
}

/// Cardioid: `d (1 + cos theta_d) / 2`; scales the magnitude, keeps the phase.
pub fn cardioid(d: &ComplexTensor) -> ComplexTensor {
    let mut out = ComplexTensor::zeros(d.shape());
    let (ore, oim) = out.planes_mut();
    for t in 0..d.numel() {
        let (x, y) = (d.re()[t], d.im()[t]);
        let r = x.hypot(y);
        if r > 0.0 {
            let s = 0.5 * (1.0 + x / r);
            ore[t] = s * x;
            oim[t] = s * y;
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Backward rules. Each takes the forward input and the output adjoint and
// accumulates the input adjoint; modReLU also accumulates its bias gradient.
// ---------------------------------------------------------------------------

pub(crate) fn crelu_backward(input: &ComplexTensor, adj_re: &[f64], adj_im: &[f64], out_re: &mut [f64], out_im: &mut [f64]) {
    for t in 0..input.numel() {
        if input.re()[t] > 0.0 {
            out_re[t] += adj_re[t];
        }
        if input.im()[t] > 0.0 {
            out_im[t] += adj_im[t];
        }
    }
}

pub(crate) fn zrelu_backward(input: &ComplexTensor, adj_re: &[f64], adj_im: &[f64], out_re: &mut [f64], out_im: &mut [f64]) {
    // Strict interior only: the boundary passes the value but gets zero gradient.
    for t in 0..input.numel() {
        if input.re()[t] > 0.0 && input.im()[t] > 0.0 {
            out_re[t] += adj_re[t];
            out_im[t] += adj_im[t];
        }
    }
}

pub(crate) fn modrelu_backward(
    input: &ComplexTensor,
    bias: &[f64],
    adj_re: &[f64],
    adj_im: &[f64],
    out_re: &mut [f64],
    out_im: &mut [f64],
    bias_grad: &mut [f64],
) {
    let channels = input.shape()[0];
    let per = input.numel() / channels;
    for (c, &b) in bias.iter().enumerate() {
        let mut db = 0.0;
        for t in c * per..(c + 1) * per {
            let (x, y) = (input.re()[t], input.im()[t]);
            let r = x.hypot(y);
            if r > 0.0 && r + b > 0.0 {
                let (u, v) = (adj_re[t], adj_im[t]);
                let s = 1.0 + b / r;
                let r3 = r * r * r;
                out_re[t] += u * (s - b * x * x / r3) + v * (-b * x * y / r3);
                out_im[t] += u * (-b * x * y / r3) + v * (s - b * y * y / r3);
                db += (u * x + v * y) / r;
            }
        }
        bias_grad[c] += db;
    }
}

pub(crate) fn cardioid_backward(input: &ComplexTensor, adj_re: &[f64], adj_im: &[f64], out_re: &mut [f64], out_im: &mut [f64]) {
    for t in 0..input.numel() {
        let (x, y) = (input.re()[t], input.im()[t]);
        let r = x.hypot(y);
        let (u, v) = (adj_re[t], adj_im[t]);
        if r > 0.0 {
            let r3 = r * r * r;
            // out_re = (x + x^2/r)/2, out_im = (y + xy/r)/2.
            let drr = 0.5 * (1.0 + 2.0 * x / r - x * x * x / r3);
            let dri = 0.5 * (-x * x * y / r3);
            let dir_ = 0.5 * (y * y * y / r3);
            let dii = 0.5 * (1.0 + x / r - x * y * y / r3);
            out_re[t] += u * drr + v * dir_;
            out_im[t] += u * dri + v * dii;
        } else {
            // Jacobian I/2 at the origin.
            out_re[t] += 0.5 * u;
            out_im[t] += 0.5 * v;
        }
    }
}

// ---------------------------------------------------------------------------
// Initialization and parameter parity.
// ---------------------------------------------------------------------------

/// Structural description of one convolution layer.
#[derive(Clone, Copy, Debug)]
pub struct LayerTemplate {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub activation: Option<ActivationKind>,
}

/// Uniform Glorot-style draw for a complex kernel. Fan counts use real
/// parameter counts, so a complex layer has `fan_in = 2 in_ch k^2`.
pub fn init_conv_weights(template: &LayerTemplate, seed: u64) -> ConvKernel {
    let (i, o, k) = (template.in_ch, template.out_ch, template.kernel);
    let fan_in = 2 * i * k * k;
    let fan_out = 2 * o * k * k;
    let s = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let mut rng = Rng::new(seed);
    let n = o * i * k * k;
    let re: Vec<f64> = (0..n).map(|_| rng.range(-s, s)).collect();
    let im: Vec<f64> = (0..n).map(|_| rng.range(-s, s)).collect();
    ConvKernel::new(
        ComplexTensor::from_parts(vec![o, i, k, k], re, im).unwrap(),
        ComplexTensor::zeros(&[o]),
    )
    .unwrap()
}

/// Real-layer counterpart: one real plane, real fan counts, zero bias.
pub fn init_conv_weights_real(template: &LayerTemplate, seed: u64) -> (ComplexTensor, Vec<f64>) {
    let (i, o, k) = (template.in_ch, template.out_ch, template.kernel);
    let fan_in = i * k * k;
    let fan_out = o * k * k;
    let s = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let mut rng = Rng::new(seed);
    let n = o * i * k * k;
    let re: Vec<f64> = (0..n).map(|_| rng.range(-s, s)).collect();
    (
        ComplexTensor::from_real(vec![o, i, k, k], re).unwrap(),
        vec![0.0; o],
    )
}

/// Channel width of a layer endpoint in a symbolic network template.
/// `Image` is the complex image itself: 1 complex channel, or 2 real channels
/// in the two-channel real configuration. `Hidden(m)` scales with the base
/// hidden width by integer multiplier `m`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Width {
    Image,
    Hidden(usize),
}

#[derive(Clone, Copy, Debug)]
pub struct TemplateLayer {
    pub input: Width,
    pub output: Width,
    pub kernel: usize,
    /// Layer is followed by modReLU (adds out_ch real biases in complex mode).
    pub modrelu_bias: bool,
}

/// Symbolic network template where all hidden widths scale together.
#[derive(Clone, Debug)]
pub struct NetworkTemplate {
    pub layers: Vec<TemplateLayer>,
    /// Real scalars outside the conv layers (e.g. per-iteration step sizes).
    pub extra_real_scalars: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ParityReport {
    /// Smallest real hidden width whose total reaches the complex total
    /// (the fixed image width 2 for templates with no hidden layers).
    pub real_channels: usize,
    pub complex_param_count: usize,
    pub real_param_count: usize,
}

impl NetworkTemplate {
    fn width(w: Width, base: usize, image_channels: usize) -> usize {
        match w {
            Width::Image => image_channels,
            Width::Hidden(m) => m * base,
        }
    }

    /// Real parameter count of the complex instantiation at hidden width `base`.
    pub fn complex_count(&self, base: usize) -> usize {
        let mut total = self.extra_real_scalars;
        for l in &self.layers {
            let cin = Self::width(l.input, base, 1);
            let cout = Self::width(l.output, base, 1);
            total += 2 * l.kernel * l.kernel * cin * cout + 2 * cout;
            if l.modrelu_bias {
                total += cout;
            }
        }
        total
    }

    /// Real parameter count of the two-channel real instantiation. The real
    /// network always uses plain ReLU, so modReLU biases do not appear.
    pub fn real_count(&self, base: usize) -> usize {
        let mut total = self.extra_real_scalars;
        for l in &self.layers {
            let nin = Self::width(l.input, base, 2);
            let nout = Self::width(l.output, base, 2);
            total += l.kernel * l.kernel * nin * nout + nout;
        }
        total
    }

    fn has_hidden(&self) -> bool {
        self.layers
            .iter()
            .any(|l| matches!(l.input, Width::Hidden(_)) || matches!(l.output, Width::Hidden(_)))
    }
}

/// Size the real variant of `template` to parameter parity with the complex
/// variant at `complex_maps` hidden feature maps: the smallest real hidden
/// width whose total real parameter count reaches the complex total.
pub fn parity_feature_maps(template: &NetworkTemplate, complex_maps: usize) -> ParityReport {
    let complex_total = template.complex_count(complex_maps);
    if !template.has_hidden() {
        return ParityReport {
            real_channels: 2,
            complex_param_count: complex_total,
            real_param_count: template.real_count(2),
        };
    }
    let mut n = 1;
    loop {
        let real_total = template.real_count(n);
        if real_total >= complex_total {
            return ParityReport {
                real_channels: n,
                complex_param_count: complex_total,
                real_param_count: real_total,
            };
        }
        n += 1;
    }
}
