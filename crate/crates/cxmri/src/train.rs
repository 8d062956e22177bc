//! Training loop (L1 loss, Adam) plus checkpoint serialization and held-out
//! evaluation. Given an identical config the run is bit-reproducible: data
//! order, initialization, gradient accumulation order and checkpoint bytes.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::autodiff::{GradientSet, ParamKind, Tape};
use crate::error::{Error, Result};
use crate::io::{
    self, config_digest, CheckpointManifest, EntryKind, ManifestEntry,
};
use crate::metrics::{aggregate_csv_row, MetricReport};
use crate::models::{
    init_unet_params, init_unrolled_params, unet_forward_on_tape, unrolled_forward_on_tape,
    ConvMode, ModelParams, ParamRole, UNetConfig, UnrolledConfig,
};
use crate::mri::{load_example, sense_adjoint, AcquisitionExample, Dataset};
use crate::nn::ActivationKind;
use crate::rng::Rng;
use crate::tensor::ComplexTensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    Unrolled,
    Unet,
}

impl ModelKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "unrolled" => Ok(ModelKind::Unrolled),
            "unet" => Ok(ModelKind::Unet),
            other => Err(Error::Config(format!(
                "unknown model '{other}' (valid: unrolled, unet)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ModelKind::Unrolled => "unrolled",
            ModelKind::Unet => "unet",
        }
    }
}

/// Model dispatch: one enum the trainer, evaluator and CLI all share.
#[derive(Clone, Copy, Debug)]
pub enum ModelConfig {
    Unrolled(UnrolledConfig),
    Unet(UNetConfig),
}

impl ModelConfig {
    pub fn init_params(&self, seed: u64) -> Result<ModelParams> {
        match self {
            ModelConfig::Unrolled(cfg) => init_unrolled_params(cfg, seed),
            ModelConfig::Unet(cfg) => init_unet_params(cfg, seed),
        }
    }

    /// Forward pass for one example, recorded on `tape`.
    pub fn forward_on_tape(
        &self,
        tape: &mut Tape,
        bound: &crate::models::BoundParams,
        ex: &AcquisitionExample,
    ) -> Result<crate::autodiff::NodeId> {
        match self {
            ModelConfig::Unrolled(cfg) => {
                unrolled_forward_on_tape(tape, bound, cfg, &ex.kspace_u, &ex.maps, &ex.mask)
            }
            ModelConfig::Unet(cfg) => {
                let zf = sense_adjoint(&ex.kspace_u, &ex.maps, &ex.mask)?;
                unet_forward_on_tape(tape, bound, cfg, &zf)
            }
        }
    }

    pub fn forward(&self, params: &ModelParams, ex: &AcquisitionExample) -> Result<ComplexTensor> {
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let out = self.forward_on_tape(&mut tape, &bound, ex)?;
        Ok(tape.value(out).clone())
    }
}

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub model: ModelKind,
    pub conv_mode: ConvMode,
    pub activation: ActivationKind,
    /// Unrolled iterations, or U-Net levels when model = unet.
    pub iterations: usize,
    /// Hidden width in channels of the mode (U-Net base features).
    pub feature_maps: usize,
    pub denoiser_layers: usize,
    pub convs_per_level: usize,
    pub kernel: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch: usize,
    pub steps: u64,
    pub seed: u64,
    pub checkpoint_every: u64,
    pub data: PathBuf,
    pub out: PathBuf,
}

const VALID_KEYS: &[&str] = &[
    "model",
    "conv",
    "activation",
    "iterations",
    "feature_maps",
    "denoiser_layers",
    "convs_per_level",
    "kernel",
    "lr",
    "beta1",
    "beta2",
    "epsilon",
    "batch",
    "steps",
    "seed",
    "checkpoint_every",
    "data",
    "out",
];

impl TrainConfig {
    /// Parse a flat key=value config. Unknown keys are rejected with the list
    /// of valid ones; absent keys take the desk-scale defaults.
    pub fn from_kv(map: &BTreeMap<String, String>) -> Result<TrainConfig> {
        for key in map.keys() {
            if !VALID_KEYS.contains(&key.as_str()) {
                return Err(Error::Config(format!(
                    "unknown key '{key}' (valid keys: {})",
                    VALID_KEYS.join(", ")
                )));
            }
        }
        let get = |k: &str| map.get(k).map(String::as_str);
        let parse_num = |k: &str, v: &str| -> Result<f64> {
            v.parse()
                .map_err(|_| Error::Config(format!("bad numeric value '{v}' for key '{k}'")))
        };
        let model = ModelKind::parse(get("model").unwrap_or("unrolled"))?;
        let conv_mode = ConvMode::parse(get("conv").unwrap_or("complex"))?;
        let activation = ActivationKind::parse(get("activation").unwrap_or(
            match conv_mode {
                ConvMode::Complex => "crelu",
                ConvMode::Real => "relu",
            },
        ))?;
        crate::models::validate_mode_activation(conv_mode, activation)?;
        let int = |k: &str, default: usize| -> Result<usize> {
            match get(k) {
                Some(v) => Ok(parse_num(k, v)? as usize),
                None => Ok(default),
            }
        };
        let float = |k: &str, default: f64| -> Result<f64> {
            match get(k) {
                Some(v) => parse_num(k, v),
                None => Ok(default),
            }
        };
        let cfg = TrainConfig {
            model,
            conv_mode,
            activation,
            iterations: int("iterations", if model == ModelKind::Unet { 3 } else { 2 })?,
            feature_maps: int("feature_maps", 16)?,
            denoiser_layers: int("denoiser_layers", 4)?,
            convs_per_level: int("convs_per_level", 2)?,
            kernel: int("kernel", 3)?,
            lr: float("lr", 0.001)?,
            beta1: float("beta1", 0.9)?,
            beta2: float("beta2", 0.999)?,
            epsilon: float("epsilon", 1e-8)?,
            batch: int("batch", if model == ModelKind::Unet { 3 } else { 2 })?,
            steps: int("steps", 2000)? as u64,
            seed: int("seed", 1)? as u64,
            checkpoint_every: int("checkpoint_every", 500)? as u64,
            data: PathBuf::from(
                get("data").ok_or_else(|| Error::Config("missing key 'data'".into()))?,
            ),
            out: PathBuf::from(
                get("out").ok_or_else(|| Error::Config("missing key 'out'".into()))?,
            ),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.lr <= 0.0 {
            return Err(Error::Config(format!("lr {} must be > 0", self.lr)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} {b} outside [0, 1)")));
            }
        }
        if self.batch == 0 {
            return Err(Error::Config("batch must be >= 1".into()));
        }
        self.model_config().map(|_| ())
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        let mc = match self.model {
            ModelKind::Unrolled => {
                let cfg = UnrolledConfig {
                    iterations: self.iterations,
                    feature_maps: self.feature_maps,
                    conv_mode: self.conv_mode,
                    activation: self.activation,
                    denoiser_layers: self.denoiser_layers,
                    kernel: self.kernel,
                };
                cfg.validate()?;
                ModelConfig::Unrolled(cfg)
            }
            ModelKind::Unet => {
                let cfg = UNetConfig {
                    levels: self.iterations,
                    base_features: self.feature_maps,
                    convs_per_level: self.convs_per_level,
                    conv_mode: self.conv_mode,
                    activation: self.activation,
                    kernel: self.kernel,
                };
                cfg.validate()?;
                ModelConfig::Unet(cfg)
            }
        };
        Ok(mc)
    }

    /// Resolved config as key=value pairs (defaults applied).
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        vec![
            ("model".into(), self.model.name().into()),
            ("conv".into(), self.conv_mode.name().into()),
            ("activation".into(), self.activation.name().into()),
            ("iterations".into(), self.iterations.to_string()),
            ("feature_maps".into(), self.feature_maps.to_string()),
            ("denoiser_layers".into(), self.denoiser_layers.to_string()),
            ("convs_per_level".into(), self.convs_per_level.to_string()),
            ("kernel".into(), self.kernel.to_string()),
            ("lr".into(), format!("{}", self.lr)),
            ("beta1".into(), format!("{}", self.beta1)),
            ("beta2".into(), format!("{}", self.beta2)),
            ("epsilon".into(), format!("{}", self.epsilon)),
            ("batch".into(), self.batch.to_string()),
            ("steps".into(), self.steps.to_string()),
            ("seed".into(), self.seed.to_string()),
            ("checkpoint_every".into(), self.checkpoint_every.to_string()),
            ("data".into(), self.data.display().to_string()),
            ("out".into(), self.out.display().to_string()),
        ]
    }

    /// Digest over the semantic fields (paths excluded, so the same run on a
    /// different machine reports the same digest).
    pub fn digest(&self) -> String {
        let map: BTreeMap<String, String> = self
            .to_pairs()
            .into_iter()
            .filter(|(k, _)| k != "data" && k != "out")
            .collect();
        config_digest(&map)
    }
}

// ---------------------------------------------------------------------------
// Adam.
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

/// First/second moment accumulators, shaped like the parameters, plus the
/// update counter used for bias correction.
#[derive(Clone, Debug)]
pub struct AdamState {
    m: Vec<ComplexTensor>,
    v: Vec<ComplexTensor>,
    step: u64,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> AdamState {
        AdamState {
            m: params.iter().map(|e| ComplexTensor::zeros(e.value.shape())).collect(),
            v: params.iter().map(|e| ComplexTensor::zeros(e.value.shape())).collect(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update, treating every real scalar (re and im of
/// every complex parameter) as an independent coordinate.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &GradientSet,
    state: &mut AdamState,
    hyper: &AdamHyper,
) -> Result<()> {
    state.step += 1;
    let t = state.step;
    let bc1 = 1.0 - hyper.beta1.powi(t as i32);
    let bc2 = 1.0 - hyper.beta2.powi(t as i32);
    for (idx, entry) in params.iter_mut().enumerate() {
        let Some(g) = grads.get(&entry.name) else {
            continue;
        };
        for (i_, &gv) in g.re().iter().chain(g.im()).enumerate() {
            if !gv.is_finite() {
                return Err(Error::NonFinite {
                    what: format!("gradient of {}", entry.name),
                    index: i_,
                });
            }
        }
        let planes = match entry.kind {
            ParamKind::Complex => 2,
            ParamKind::RealOnly => 1,
        };
        for plane in 0..planes {
            let n = entry.value.numel();
            for i_ in 0..n {
                let gv = if plane == 0 { g.re()[i_] } else { g.im()[i_] };
                let (m, v) = (&mut state.m[idx], &mut state.v[idx]);
                let (mp, vp) = if plane == 0 {
                    (&mut m.re_mut()[i_], &mut v.re_mut()[i_])
                } else {
                    (&mut m.im_mut()[i_], &mut v.im_mut()[i_])
                };
                *mp = hyper.beta1 * *mp + (1.0 - hyper.beta1) * gv;
                *vp = hyper.beta2 * *vp + (1.0 - hyper.beta2) * gv * gv;
                let m_hat = *mp / bc1;
                let v_hat = *vp / bc2;
                let delta = hyper.lr * m_hat / (v_hat.sqrt() + hyper.epsilon);
                if plane == 0 {
                    entry.value.re_mut()[i_] -= delta;
                } else {
                    entry.value.im_mut()[i_] -= delta;
                }
            }
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Checkpoints.
// ---------------------------------------------------------------------------

/// Write parameters as CXT containers plus a manifest: complex weights split
/// into kernel-X/kernel-Y planes, biases as one container, scalars real.
pub fn save_checkpoint(dir: &Path, params: &ModelParams, digest: &str) -> Result<()> {
    io::create_dir(dir)?;
    let mut entries = Vec::new();
    for e in params.iter() {
        let base = io::sanitize_filename(&e.name);
        match (e.role, e.kind) {
            (ParamRole::Weight, ParamKind::Complex) => {
                let x = ComplexTensor::from_real(e.value.shape().to_vec(), e.value.re().to_vec())?;
                let y = ComplexTensor::from_real(e.value.shape().to_vec(), e.value.im().to_vec())?;
                let fx = format!("{base}_X.cxt");
                let fy = format!("{base}_Y.cxt");
                io::write_cxt(&dir.join(&fx), &x, true)?;
                io::write_cxt(&dir.join(&fy), &y, true)?;
                entries.push(ManifestEntry {
                    name: format!("{}.X", e.name),
                    file: fx,
                    shape: e.value.shape().to_vec(),
                    kind: EntryKind::KernelX,
                });
                entries.push(ManifestEntry {
                    name: format!("{}.Y", e.name),
                    file: fy,
                    shape: e.value.shape().to_vec(),
                    kind: EntryKind::KernelY,
                });
            }
            (ParamRole::Weight, ParamKind::RealOnly) => {
                let fx = format!("{base}_X.cxt");
                io::write_cxt(&dir.join(&fx), &e.value, true)?;
                entries.push(ManifestEntry {
                    name: format!("{}.X", e.name),
                    file: fx,
                    shape: e.value.shape().to_vec(),
                    kind: EntryKind::KernelX,
                });
            }
            (ParamRole::Bias, kind) => {
                let f = format!("{base}.cxt");
                io::write_cxt(&dir.join(&f), &e.value, kind == ParamKind::RealOnly)?;
                entries.push(ManifestEntry {
                    name: e.name.clone(),
                    file: f,
                    shape: e.value.shape().to_vec(),
                    kind: EntryKind::Bias,
                });
            }
            (ParamRole::Scalar, _) => {
                let f = format!("{base}.cxt");
                io::write_cxt(&dir.join(&f), &e.value, true)?;
                entries.push(ManifestEntry {
                    name: e.name.clone(),
                    file: f,
                    shape: e.value.shape().to_vec(),
                    kind: EntryKind::Scalar,
                });
            }
        }
    }
    CheckpointManifest {
        digest: digest.to_string(),
        entries,
    }
    .write(dir)
}

/// Read a checkpoint directory back into parameters (manifest order).
pub fn load_checkpoint(dir: &Path) -> Result<(ModelParams, String)> {
    let manifest = CheckpointManifest::read(dir)?;
    manifest.validate(dir)?;
    let mut params = ModelParams::new();
    let mut pending_x: Option<(String, ComplexTensor)> = None;
    for entry in &manifest.entries {
        let (tensor, stored_real) = io::read_cxt(&dir.join(&entry.file))?;
        match entry.kind {
            EntryKind::KernelX => {
                if let Some((name, x)) = pending_x.take() {
                    // Previous weight had no Y plane: a real kernel.
                    params.push(&name, ParamKind::RealOnly, ParamRole::Weight, x);
                }
                let name = entry
                    .name
                    .strip_suffix(".X")
                    .ok_or_else(|| Error::Data(format!("kernel-X entry '{}' not named *.X", entry.name)))?;
                pending_x = Some((name.to_string(), tensor));
            }
            EntryKind::KernelY => {
                let (name, x) = pending_x.take().ok_or_else(|| {
                    Error::Data(format!("kernel-Y entry '{}' without preceding X", entry.name))
                })?;
                if entry.name.strip_suffix(".Y") != Some(name.as_str()) {
                    return Err(Error::Data(format!(
                        "kernel planes out of order: {} after {name}.X",
                        entry.name
                    )));
                }
                let weight = ComplexTensor::from_parts(
                    x.shape().to_vec(),
                    x.re().to_vec(),
                    tensor.re().to_vec(),
                )?;
                params.push(&name, ParamKind::Complex, ParamRole::Weight, weight);
            }
            EntryKind::Bias => {
                if let Some((name, x)) = pending_x.take() {
                    params.push(&name, ParamKind::RealOnly, ParamRole::Weight, x);
                }
                let kind = if stored_real {
                    ParamKind::RealOnly
                } else {
                    ParamKind::Complex
                };
                params.push(&entry.name, kind, ParamRole::Bias, tensor);
            }
            EntryKind::Scalar => {
                if let Some((name, x)) = pending_x.take() {
                    params.push(&name, ParamKind::RealOnly, ParamRole::Weight, x);
                }
                params.push(&entry.name, ParamKind::RealOnly, ParamRole::Scalar, tensor);
            }
        }
    }
    if let Some((name, x)) = pending_x.take() {
        params.push(&name, ParamKind::RealOnly, ParamRole::Weight, x);
    }
    Ok((params, manifest.digest))
}

// ---------------------------------------------------------------------------
// Training.
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub out_dir: PathBuf,
    pub best_checkpoint: PathBuf,
    pub best_step: u64,
    pub best_val_nrmse: f64,
    pub loss_log: Vec<(u64, f64)>,
    pub test_reports: Vec<MetricReport>,
}

fn mean_loss_and_grads(
    model: &ModelConfig,
    params: &ModelParams,
    batch: &[&AcquisitionExample],
) -> Result<(f64, GradientSet)> {
    let per_example: Result<Vec<(f64, GradientSet)>> = batch
        .par_iter()
        .map(|ex| {
            let mut tape = Tape::new();
            let bound = params.bind(&mut tape);
            let out = model.forward_on_tape(&mut tape, &bound, ex)?;
            let loss = tape.l1_loss(out, &ex.image)?;
            let value = tape.value(loss).re()[0];
            let grads = tape.backward(loss)?;
            Ok((value, grads))
        })
        .collect();
    let per_example = per_example?;
    let scale = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    let mut total: Option<GradientSet> = None;
    for (value, grads) in per_example {
        loss += value * scale;
        match &mut total {
            None => {
                let mut g = grads;
                g.scale(scale);
                total = Some(g);
            }
            Some(acc) => acc.add_assign_scaled(&grads, scale)?,
        }
    }
    Ok((loss, total.expect("non-empty batch")))
}

/// Mean validation NRMSE of the current parameters.
fn validate_nrmse(
    model: &ModelConfig,
    params: &ModelParams,
    examples: &[AcquisitionExample],
) -> Result<f64> {
    if examples.is_empty() {
        return Ok(f64::NAN);
    }
    let errs: Result<Vec<f64>> = examples
        .par_iter()
        .map(|ex| crate::metrics::nrmse(&model.forward(params, ex)?, &ex.image))
        .collect();
    let errs = errs?;
    Ok(errs.iter().sum::<f64>() / errs.len() as f64)
}

/// Evaluate parameters over a split, one report per example in order.
pub fn evaluate(
    model: &ModelConfig,
    params: &ModelParams,
    examples: &[AcquisitionExample],
    digest: &str,
    seed: u64,
) -> Result<Vec<MetricReport>> {
    examples
        .par_iter()
        .map(|ex| {
            let recon = model.forward(params, ex)?;
            MetricReport::evaluate(&recon, &ex.image, digest, ex.meta.accel_achieved, seed)
        })
        .collect()
}

fn load_split(paths: &[PathBuf]) -> Result<Vec<AcquisitionExample>> {
    paths.par_iter().map(|p| load_example(p)).collect()
}

pub fn write_metrics_csv(path: &Path, reports: &[MetricReport]) -> Result<()> {
    let mut text = String::from(MetricReport::csv_header());
    text.push('\n');
    for (i, r) in reports.iter().enumerate() {
        text.push_str(&r.csv_row(&format!("{i}")));
        text.push('\n');
    }
    if !reports.is_empty() {
        text.push_str(&aggregate_csv_row(reports));
        text.push('\n');
    }
    io::write_text(path, &text)
}

/// Run the full training recipe: deterministic shuffled epochs, Adam updates,
/// periodic checkpoints with best-by-validation-NRMSE retention, and a final
/// metric report of the best parameters on the test split.
pub fn train(cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let model = cfg.model_config()?;
    let digest = cfg.digest();
    let dataset = Dataset::open(&cfg.data)?;
    let train_set = load_split(&dataset.train)?;
    let val_set = load_split(&dataset.val)?;
    let test_set = load_split(&dataset.test)?;
    if cfg.steps > 0 && train_set.len() < cfg.batch {
        return Err(Error::Data(format!(
            "training split has {} examples, batch needs {}",
            train_set.len(),
            cfg.batch
        )));
    }
    io::create_dir(&cfg.out)?;
    io::write_kv_file(&cfg.out.join("config.txt"), &cfg.to_pairs())?;

    let mut params = model.init_params(cfg.seed)?;
    let mut state = AdamState::new(&params);
    let hyper = AdamHyper {
        lr: cfg.lr,
        beta1: cfg.beta1,
        beta2: cfg.beta2,
        epsilon: cfg.epsilon,
    };
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut rng = Rng::new(crate::rng::derive_seed(cfg.seed, 0xba7c));
    rng.shuffle(&mut order);
    let mut cursor = 0usize;
    let mut loss_log = Vec::with_capacity(cfg.steps as usize);
    let mut best: Option<(u64, f64, ModelParams)> = None;

    let pairs = cfg.to_pairs();
    let checkpoint =
        |step: u64, params: &ModelParams, best: &mut Option<(u64, f64, ModelParams)>| -> Result<()> {
            let dir = cfg.out.join(format!("checkpoints/step_{step:06}"));
            save_checkpoint(&dir, params, &digest)?;
            io::write_kv_file(&dir.join("config.txt"), &pairs)?;
            let val = validate_nrmse(&model, params, &val_set)?;
            let improved = match best {
                None => true,
                Some((_, best_val, _)) => val.is_nan() || val < *best_val,
            };
            if improved {
                *best = Some((step, val, params.clone()));
            }
            Ok(())
        };

    if cfg.steps == 0 {
        checkpoint(0, &params, &mut best)?;
    }
    for step in 0..cfg.steps {
        let mut batch: Vec<&AcquisitionExample> = Vec::with_capacity(cfg.batch);
        for _ in 0..cfg.batch {
            if cursor >= order.len() {
                rng.shuffle(&mut order);
                cursor = 0;
            }
            batch.push(&train_set[order[cursor]]);
            cursor += 1;
        }
        let (loss, grads) = mean_loss_and_grads(&model, &params, &batch)?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { step });
        }
        adam_step(&mut params, &grads, &mut state, &hyper)?;
        loss_log.push((step, loss));
        if (step + 1) % cfg.checkpoint_every == 0 || step + 1 == cfg.steps {
            checkpoint(step + 1, &params, &mut best)?;
        }
    }

    let (best_step, best_val, best_params) = best.expect("at least one checkpoint");
    let best_dir = cfg.out.join("best");
    save_checkpoint(&best_dir, &best_params, &digest)?;
    io::write_kv_file(&best_dir.join("config.txt"), &pairs)?;

    let mut loss_csv = String::from("step,loss\n");
    for (step, loss) in &loss_log {
        loss_csv.push_str(&format!("{step},{loss}\n"));
    }
    io::write_text(&cfg.out.join("loss.csv"), &loss_csv)?;

    let test_reports = evaluate(&model, &best_params, &test_set, &digest, cfg.seed)?;
    write_metrics_csv(&cfg.out.join("metrics.csv"), &test_reports)?;

    Ok(TrainOutcome {
        out_dir: cfg.out.clone(),
        best_checkpoint: best_dir,
        best_step,
        best_val_nrmse: best_val,
        loss_log,
        test_reports,
    })
}
