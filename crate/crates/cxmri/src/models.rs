//! Reconstruction networks: the unrolled data-consistency + residual-denoiser
//! network and a U-Net, each in a complex-convolution and a two-channel
//! real-convolution variant with matched tensor shapes.

use std::collections::BTreeMap;

use crate::autodiff::{GradientSet, NodeId, ParamKind, Tape};
use crate::error::{Error, Result};
use crate::mri::sense_adjoint;
use crate::nn::{
    self, ActivationKind, LayerTemplate, NetworkTemplate, ParityReport, TemplateLayer, Width,
};
use crate::rng::derive_seed;
use crate::tensor::{Complex, ComplexTensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConvMode {
    Real,
    Complex,
}

impl ConvMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "real" => Ok(ConvMode::Real),
            "complex" => Ok(ConvMode::Complex),
            other => Err(Error::Config(format!(
                "unknown conv mode '{other}' (valid: real, complex)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ConvMode::Real => "real",
            ConvMode::Complex => "complex",
        }
    }
}

/// Reject mode/activation pairings: the real network uses the two-channel
/// ReLU, the complex network uses one of the complex activations.
pub fn validate_mode_activation(mode: ConvMode, activation: ActivationKind) -> Result<()> {
    match (mode, activation) {
        (ConvMode::Real, ActivationKind::Relu2Ch) => Ok(()),
        (ConvMode::Real, _) => Err(Error::Config(
            "complex activations require conv=complex (relu is the real-mode activation)".into(),
        )),
        (ConvMode::Complex, ActivationKind::Relu2Ch) => Err(Error::Config(
            "conv=complex requires a complex activation (crelu, zrelu, modrelu, cardioid)".into(),
        )),
        (ConvMode::Complex, _) => Ok(()),
    }
}

#[derive(Clone, Copy, Debug)]
pub struct UnrolledConfig {
    /// Number of unrolled iterations (0 degenerates to the zero-filled image).
    pub iterations: usize,
    /// Hidden width in channels of the chosen mode (complex channels for
    /// complex convolution, real channels for the two-channel network).
    pub feature_maps: usize,
    pub conv_mode: ConvMode,
    pub activation: ActivationKind,
    /// Conv layers per residual denoising block; all but the last are
    /// followed by the activation.
    pub denoiser_layers: usize,
    pub kernel: usize,
}

impl UnrolledConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations > 16 {
            return Err(Error::Config(format!(
                "iterations {} outside 0..=16",
                self.iterations
            )));
        }
        if self.feature_maps == 0 || self.denoiser_layers == 0 {
            return Err(Error::Config("feature_maps and denoiser_layers must be >= 1".into()));
        }
        if self.kernel.is_multiple_of(2) {
            return Err(Error::Config(format!("kernel {} must be odd", self.kernel)));
        }
        validate_mode_activation(self.conv_mode, self.activation)
    }

    /// (in, out) channel pairs of one denoising block in this mode.
    fn block_channels(&self) -> Vec<(usize, usize)> {
        let image = match self.conv_mode {
            ConvMode::Complex => 1,
            ConvMode::Real => 2,
        };
        let hidden = self.feature_maps;
        let last = self.denoiser_layers - 1;
        (0..self.denoiser_layers)
            .map(|l| {
                (
                    if l == 0 { image } else { hidden },
                    if l == last { image } else { hidden },
                )
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug)]
pub struct UNetConfig {
    /// Resolution scales; input spatial dims must divide by 2^(levels-1).
    pub levels: usize,
    /// Width of the top scale in channels of the chosen mode; doubled at
    /// every scale down.
    pub base_features: usize,
    pub convs_per_level: usize,
    pub conv_mode: ConvMode,
    pub activation: ActivationKind,
    pub kernel: usize,
}

impl UNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 || self.base_features == 0 || self.convs_per_level == 0 {
            return Err(Error::Config(
                "levels, base_features and convs_per_level must be >= 1".into(),
            ));
        }
        if self.kernel.is_multiple_of(2) {
            return Err(Error::Config(format!("kernel {} must be odd", self.kernel)));
        }
        validate_mode_activation(self.conv_mode, self.activation)
    }

    fn image_channels(&self) -> usize {
        match self.conv_mode {
            ConvMode::Complex => 1,
            ConvMode::Real => 2,
        }
    }
}

// ---------------------------------------------------------------------------
// Parameter container.
// ---------------------------------------------------------------------------

/// Role of a parameter tensor in the checkpoint container format.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamRole {
    Weight,
    Bias,
    Scalar,
}

#[derive(Clone, Debug)]
pub struct ParamEntry {
    pub name: String,
    pub kind: ParamKind,
    pub role: ParamRole,
    pub value: ComplexTensor,
}

/// Ordered, uniquely named collection of learnable tensors.
#[derive(Clone, Debug, Default)]
pub struct ModelParams {
    entries: Vec<ParamEntry>,
}

impl ModelParams {
    pub fn new() -> Self {
        ModelParams::default()
    }

    pub fn push(&mut self, name: &str, kind: ParamKind, role: ParamRole, value: ComplexTensor) {
        debug_assert!(self.get(name).is_none(), "duplicate parameter {name}");
        self.entries.push(ParamEntry {
            name: name.to_string(),
            kind,
            role,
            value,
        });
    }

    pub fn get(&self, name: &str) -> Option<&ParamEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn iter(&self) -> impl Iterator<Item = &ParamEntry> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut ParamEntry> {
        self.entries.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total real degrees of freedom: a complex tensor counts twice its
    /// element count, a real-only tensor counts it once.
    pub fn param_count(&self) -> usize {
        self.entries
            .iter()
            .map(|e| match e.kind {
                ParamKind::Complex => 2 * e.value.numel(),
                ParamKind::RealOnly => e.value.numel(),
            })
            .sum()
    }

    /// Register every entry as a named tape leaf.
    pub fn bind(&self, tape: &mut Tape) -> BoundParams {
        let mut ids = BTreeMap::new();
        for e in &self.entries {
            ids.insert(e.name.clone(), tape.param(&e.name, e.value.clone(), e.kind));
        }
        BoundParams { ids }
    }
}

/// Tape node ids of a bound parameter set.
pub struct BoundParams {
    ids: BTreeMap<String, NodeId>,
}

impl BoundParams {
    pub fn id(&self, name: &str) -> Result<NodeId> {
        self.ids
            .get(name)
            .copied()
            .ok_or_else(|| Error::Data(format!("model parameter '{name}' missing")))
    }

    /// Rebind names onto an existing map (used by gradcheck drivers).
    pub fn from_map(ids: BTreeMap<String, NodeId>) -> Self {
        BoundParams { ids }
    }
}

// ---------------------------------------------------------------------------
// Initialization.
// ---------------------------------------------------------------------------

struct LayerInit<'a> {
    params: &'a mut ModelParams,
    mode: ConvMode,
    activation: ActivationKind,
    kernel: usize,
    seed: u64,
    ordinal: u64,
}

impl LayerInit<'_> {
    /// Add weight/bias (and modReLU bias when the layer is activated) under
    /// `prefix`, drawing from a per-layer derived seed.
    fn conv(&mut self, prefix: &str, in_ch: usize, out_ch: usize, activated: bool) {
        let template = LayerTemplate {
            in_ch,
            out_ch,
            kernel: self.kernel,
            activation: activated.then_some(self.activation),
        };
        let layer_seed = derive_seed(self.seed, self.ordinal);
        self.ordinal += 1;
        match self.mode {
            ConvMode::Complex => {
                let kernel = nn::init_conv_weights(&template, layer_seed);
                self.params.push(
                    &format!("{prefix}.weight"),
                    ParamKind::Complex,
                    ParamRole::Weight,
                    kernel.weight,
                );
                self.params.push(
                    &format!("{prefix}.bias"),
                    ParamKind::Complex,
                    ParamRole::Bias,
                    kernel.bias,
                );
                if activated && self.activation == ActivationKind::ModRelu {
                    self.params.push(
                        &format!("{prefix}.abias"),
                        ParamKind::RealOnly,
                        ParamRole::Scalar,
                        ComplexTensor::zeros(&[out_ch]),
                    );
                }
            }
            ConvMode::Real => {
                let (weight, bias) = nn::init_conv_weights_real(&template, layer_seed);
                self.params.push(
                    &format!("{prefix}.weight"),
                    ParamKind::RealOnly,
                    ParamRole::Weight,
                    weight,
                );
                self.params.push(
                    &format!("{prefix}.bias"),
                    ParamKind::RealOnly,
                    ParamRole::Bias,
                    ComplexTensor::from_real(vec![out_ch], bias).unwrap(),
                );
            }
        }
    }
}

/// Fresh unrolled-network parameters: per-iteration step sizes (init 1.0,
/// stable because the acquisition operator has norm at most 1) and untied
/// denoiser blocks.
pub fn init_unrolled_params(cfg: &UnrolledConfig, seed: u64) -> Result<ModelParams> {
    cfg.validate()?;
    let mut params = ModelParams::new();
    let channels = cfg.block_channels();
    for m in 0..cfg.iterations {
        params.push(
            &format!("iter{m}.t"),
            ParamKind::RealOnly,
            ParamRole::Scalar,
            ComplexTensor::scalar(Complex::new(1.0, 0.0)),
        );
        let mut init = LayerInit {
            params: &mut params,
            mode: cfg.conv_mode,
            activation: cfg.activation,
            kernel: cfg.kernel,
            seed,
            ordinal: (m as u64) << 8,
        };
        for (l, &(ci, co)) in channels.iter().enumerate() {
            let activated = l + 1 < cfg.denoiser_layers;
            init.conv(&format!("iter{m}.conv{l}"), ci, co, activated);
        }
    }
    Ok(params)
}

/// Channel plan of the U-Net in its mode: (name, in, out, activated, kernel).
fn unet_layer_plan(cfg: &UNetConfig) -> Vec<(String, usize, usize, bool, usize)> {
    let image = cfg.image_channels();
    let feat = |level: usize| cfg.base_features << level;
    let mut plan = Vec::new();
    for i in 0..cfg.levels {
        for j in 0..cfg.convs_per_level {
            let in_ch = if j == 0 {
                if i == 0 {
                    image
                } else {
                    feat(i - 1)
                }
            } else {
                feat(i)
            };
            plan.push((format!("down{i}.conv{j}"), in_ch, feat(i), true, cfg.kernel));
        }
    }
    for i in (0..cfg.levels.saturating_sub(1)).rev() {
        plan.push((format!("up{i}.upconv"), feat(i + 1), feat(i), true, cfg.kernel));
        for j in 0..cfg.convs_per_level {
            let in_ch = if j == 0 { 2 * feat(i) } else { feat(i) };
            plan.push((format!("up{i}.conv{j}"), in_ch, feat(i), true, cfg.kernel));
        }
    }
    plan.push(("final".to_string(), feat(0), image, false, 1));
    plan
}

pub fn init_unet_params(cfg: &UNetConfig, seed: u64) -> Result<ModelParams> {
    cfg.validate()?;
    let mut params = ModelParams::new();
    let mut init = LayerInit {
        params: &mut params,
        mode: cfg.conv_mode,
        activation: cfg.activation,
        kernel: cfg.kernel,
        seed,
        ordinal: 0,
    };
    for (name, ci, co, activated, k) in unet_layer_plan(cfg) {
        init.kernel = k;
        init.conv(&name, ci, co, activated);
    }
    Ok(params)
}

// ---------------------------------------------------------------------------
// Forward passes.
// ---------------------------------------------------------------------------

/// Pure data-consistency step `y - t A^H (A y - kspace_u)`.
pub fn dc_step(
    y: &ComplexTensor,
    kspace_u: &ComplexTensor,
    maps: &ComplexTensor,
    mask: &ComplexTensor,
    t: f64,
) -> Result<ComplexTensor> {
    let residual = crate::mri::sense_normal(y, maps, mask)?
        .sub(&sense_adjoint(kspace_u, maps, mask)?)?;
    residual.scale(Complex::new(-t, 0.0)).add(y)
}

/// One conv layer plus optional activation, dispatching on mode. The value
/// flowing through is `[C, H, W]` complex in complex mode and `[N, H, W]`
/// real-only in real mode.
fn tape_conv_layer(
    tape: &mut Tape,
    bound: &BoundParams,
    mode: ConvMode,
    activation: ActivationKind,
    prefix: &str,
    x: NodeId,
    activated: bool,
) -> Result<NodeId> {
    let w = bound.id(&format!("{prefix}.weight"))?;
    let b = bound.id(&format!("{prefix}.bias"))?;
    let conv = match mode {
        ConvMode::Complex => tape.conv2d_complex(x, w, b)?,
        ConvMode::Real => tape.conv2d_real(x, w, b)?,
    };
    if !activated {
        return Ok(conv);
    }
    match mode {
        ConvMode::Real => Ok(tape.crelu(conv)),
        ConvMode::Complex => {
            let abias = if activation == ActivationKind::ModRelu {
                Some(bound.id(&format!("{prefix}.abias"))?)
            } else {
                None
            };
            tape.activation(activation, conv, abias)
        }
    }
}

/// Residual denoising block applied to an image node `[H, W]`.
fn tape_denoise_block(
    tape: &mut Tape,
    bound: &BoundParams,
    cfg: &UnrolledConfig,
    prefix: &str,
    y: NodeId,
) -> Result<NodeId> {
    let shape = tape.value(y).shape().to_vec();
    let (h, w) = (shape[0], shape[1]);
    let mut cur = tape.reshape(y, &[1, h, w])?;
    if cfg.conv_mode == ConvMode::Real {
        cur = tape.split_re_im(cur)?;
    }
    for l in 0..cfg.denoiser_layers {
        let activated = l + 1 < cfg.denoiser_layers;
        cur = tape_conv_layer(
            tape,
            bound,
            cfg.conv_mode,
            cfg.activation,
            &format!("{prefix}.conv{l}"),
            cur,
            activated,
        )?;
    }
    if cfg.conv_mode == ConvMode::Real {
        cur = tape.merge_re_im(cur)?;
    }
    let cur = tape.reshape(cur, &[h, w])?;
    tape.add(y, cur)
}

/// Unrolled forward pass recorded on a tape. Starts from the zero-filled
/// image and alternates data-consistency and residual denoising.
pub fn unrolled_forward_on_tape(
    tape: &mut Tape,
    bound: &BoundParams,
    cfg: &UnrolledConfig,
    kspace_u: &ComplexTensor,
    maps: &ComplexTensor,
    mask: &ComplexTensor,
) -> Result<NodeId> {
    cfg.validate()?;
    let zero_filled = sense_adjoint(kspace_u, maps, mask)?;
    let mut y = tape.constant(zero_filled);
    for m in 0..cfg.iterations {
        let t = bound.id(&format!("iter{m}.t"))?;
        y = tape.dc_step(y, t, maps, mask, kspace_u)?;
        y = tape_denoise_block(tape, bound, cfg, &format!("iter{m}"), y)?;
    }
    Ok(y)
}

/// Unrolled reconstruction as a plain function of the inputs.
pub fn unrolled_forward(
    kspace_u: &ComplexTensor,
    maps: &ComplexTensor,
    mask: &ComplexTensor,
    params: &ModelParams,
    cfg: &UnrolledConfig,
) -> Result<ComplexTensor> {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let out = unrolled_forward_on_tape(&mut tape, &bound, cfg, kspace_u, maps, mask)?;
    Ok(tape.value(out).clone())
}

/// U-Net forward pass on a tape. Input and output are `[H, W]` images.
pub fn unet_forward_on_tape(
    tape: &mut Tape,
    bound: &BoundParams,
    cfg: &UNetConfig,
    zero_filled: &ComplexTensor,
) -> Result<NodeId> {
    cfg.validate()?;
    let shape = zero_filled.shape().to_vec();
    if shape.len() != 2 {
        return Err(Error::RankMismatch {
            context: "unet input",
            got: shape.len(),
            expected: 2,
        });
    }
    let (h, w) = (shape[0], shape[1]);
    let down = 1usize << (cfg.levels - 1);
    for &(dim, name) in [(h, "height"), (w, "width")].iter() {
        if dim % down != 0 {
            return Err(Error::NotDivisible {
                context: if name == "height" {
                    "unet input height"
                } else {
                    "unet input width"
                },
                size: dim,
                divisor: down,
            });
        }
    }
    let x = tape.constant(zero_filled.clone());
    let mut cur = tape.reshape(x, &[1, h, w])?;
    if cfg.conv_mode == ConvMode::Real {
        cur = tape.split_re_im(cur)?;
    }
    let mut skips: Vec<NodeId> = Vec::new();
    for i in 0..cfg.levels {
        for j in 0..cfg.convs_per_level {
            cur = tape_conv_layer(
                tape,
                bound,
                cfg.conv_mode,
                cfg.activation,
                &format!("down{i}.conv{j}"),
                cur,
                true,
            )?;
        }
        if i + 1 < cfg.levels {
            skips.push(cur);
            cur = tape.avg_pool2(cur)?;
        }
    }
    for i in (0..cfg.levels.saturating_sub(1)).rev() {
        cur = tape.upsample_nearest2(cur);
        cur = tape_conv_layer(
            tape,
            bound,
            cfg.conv_mode,
            cfg.activation,
            &format!("up{i}.upconv"),
            cur,
            true,
        )?;
        cur = tape.concat_ch(cur, skips[i])?;
        for j in 0..cfg.convs_per_level {
            cur = tape_conv_layer(
                tape,
                bound,
                cfg.conv_mode,
                cfg.activation,
                &format!("up{i}.conv{j}"),
                cur,
                true,
            )?;
        }
    }
    cur = tape_conv_layer(
        tape,
        bound,
        cfg.conv_mode,
        cfg.activation,
        "final",
        cur,
        false,
    )?;
    if cfg.conv_mode == ConvMode::Real {
        cur = tape.merge_re_im(cur)?;
    }
    tape.reshape(cur, &[h, w])
}

pub fn unet_forward(
    zero_filled: &ComplexTensor,
    params: &ModelParams,
    cfg: &UNetConfig,
) -> Result<ComplexTensor> {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let out = unet_forward_on_tape(&mut tape, &bound, cfg, zero_filled)?;
    Ok(tape.value(out).clone())
}

/// Apply a gradient update out-of-band (used by tests); training uses Adam.
pub fn apply_gradients(params: &mut ModelParams, grads: &GradientSet, lr: f64) {
    for e in params.iter_mut() {
        if let Some(g) = grads.get(&e.name) {
            let (re, im) = e.value.planes_mut();
            for (v, gv) in re.iter_mut().zip(g.re()) {
                *v -= lr * gv;
            }
            if e.kind == ParamKind::Complex {
                for (v, gv) in im.iter_mut().zip(g.im()) {
                    *v -= lr * gv;
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Symbolic templates for parameter parity.
// ---------------------------------------------------------------------------

/// Template of the unrolled network with hidden width left symbolic.
pub fn unrolled_template(
    iterations: usize,
    denoiser_layers: usize,
    kernel: usize,
    activation: ActivationKind,
) -> NetworkTemplate {
    let last = denoiser_layers - 1;
    let mut layers = Vec::new();
    for _ in 0..iterations {
        for l in 0..denoiser_layers {
            layers.push(TemplateLayer {
                input: if l == 0 { Width::Image } else { Width::Hidden(1) },
                output: if l == last { Width::Image } else { Width::Hidden(1) },
                kernel,
                modrelu_bias: activation == ActivationKind::ModRelu && l < last,
            });
        }
    }
    NetworkTemplate {
        layers,
        extra_real_scalars: iterations,
    }
}

/// Template of the U-Net with the base width left symbolic.
pub fn unet_template(
    levels: usize,
    convs_per_level: usize,
    kernel: usize,
    activation: ActivationKind,
) -> NetworkTemplate {
    let mut layers = Vec::new();
    let feat = |level: usize| Width::Hidden(1 << level);
    let mut push = |input: Width, output: Width, k: usize, activated: bool| {
        layers.push(TemplateLayer {
            input,
            output,
            kernel: k,
            modrelu_bias: activation == ActivationKind::ModRelu && activated,
        });
    };
    for i in 0..levels {
        for j in 0..convs_per_level {
            let input = if j == 0 {
                if i == 0 {
                    Width::Image
                } else {
                    feat(i - 1)
                }
            } else {
                feat(i)
            };
            push(input, feat(i), kernel, true);
        }
    }
    for i in (0..levels.saturating_sub(1)).rev() {
        push(feat(i + 1), feat(i), kernel, true);
        for j in 0..convs_per_level {
            let input = if j == 0 { Width::Hidden(2 << i) } else { feat(i) };
            push(input, feat(i), kernel, true);
        }
    }
    push(feat(0), Width::Image, 1, false);
    NetworkTemplate {
        layers,
        extra_real_scalars: 0,
    }
}

/// Parity-matched real width for a complex unrolled config.
pub fn unrolled_parity(cfg: &UnrolledConfig) -> ParityReport {
    let template = unrolled_template(
        cfg.iterations,
        cfg.denoiser_layers,
        cfg.kernel,
        cfg.activation,
    );
    nn::parity_feature_maps(&template, cfg.feature_maps)
}
