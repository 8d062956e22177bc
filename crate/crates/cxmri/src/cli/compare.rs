//! `cxmri compare`: the real-versus-complex sweep. Trains a grid of unrolled
//! networks over modes x activations x widths x depths (x seeds) with
//! parameter parity enforced per cell, evaluates everything on the test
//! split next to the zero-filled and CS baselines, writes one CSV table, and
//! renders side-by-side reconstruction panels.

use std::path::{Path, PathBuf};

use super::{help_text, Args};
use crate::cs::{ista_wavelet_recon, select_lambda, CsConfig};
use crate::error::{Error, Result};
use crate::metrics::{mean_std, MetricReport};
use crate::mri::{load_example, sense_adjoint, AcquisitionExample, Dataset};
use crate::models::{unrolled_parity, unrolled_template, ConvMode, UnrolledConfig};
use crate::nn::{parity_feature_maps, ActivationKind};
use crate::tensor::ComplexTensor;
use crate::train::{train, ModelKind, TrainConfig};
use crate::viz::Panel;

const FLAGS: &[(&str, &str)] = &[
    ("data", "dataset directory (required)"),
    ("out", "output directory (required)"),
    ("modes", "comma list of conv modes to sweep (default real,complex)"),
    ("activations", "comma list of activations (default relu,crelu,modrelu,zrelu,cardioid)"),
    ("widths", "comma list of complex hidden widths (default 13)"),
    ("depths", "comma list of unrolled iteration counts (default 2)"),
    ("seeds", "comma list of training seeds (default 1)"),
    ("steps", "training steps per cell (default 2000)"),
    ("batch", "batch size (default 2)"),
    ("lr", "learning rate (default 0.001)"),
    ("denoiser-layers", "conv layers per denoising block (default 4)"),
    ("kernel", "conv kernel size (default 3)"),
    ("panels", "number of test examples to render as panels (default 3)"),
    ("diff-scale", "difference-map magnification (default 40)"),
    ("cs-lambdas", "CS lambda grid (default 1e-4,3e-4,1e-3,3e-3,1e-2)"),
    ("cs-iterations", "CS iteration count (default 100)"),
];

struct CellRow {
    method: String,
    mode: String,
    activation: String,
    width: String,
    feature_maps: String,
    depth: String,
    seed: String,
    params: String,
    status: String,
    metrics: Option<(f64, f64, f64, f64)>,
}

impl CellRow {
    fn csv(&self) -> String {
        let (n, p, s, ph) = match self.metrics {
            Some((n, p, s, ph)) => (
                format!("{n:.6}"),
                format!("{p:.4}"),
                format!("{s:.6}"),
                format!("{ph:.6}"),
            ),
            None => Default::default(),
        };
        format!(
            "{},{},{},{},{},{},{},{},{},{n},{p},{s},{ph}",
            self.method,
            self.mode,
            self.activation,
            self.width,
            self.feature_maps,
            self.depth,
            self.seed,
            self.params,
            self.status
        )
    }
}

fn mean_metrics(reports: &[MetricReport]) -> (f64, f64, f64, f64) {
    let col = |f: fn(&MetricReport) -> f64| mean_std(&reports.iter().map(f).collect::<Vec<_>>()).0;
    (
        col(|r| r.nrmse),
        col(|r| r.psnr),
        col(|r| r.ssim),
        col(|r| r.phase_rmse),
    )
}

fn parse_list(text: &str) -> Vec<String> {
    text.split(',')
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect()
}

pub fn run(argv: &[String]) -> Result<()> {
    let Some(args) = Args::parse(
        argv,
        FLAGS,
        &help_text("compare", "Sweep real/complex networks at parameter parity.", FLAGS),
    )?
    else {
        return Ok(());
    };
    let data = PathBuf::from(args.require("data")?);
    let out = PathBuf::from(args.require("out")?);
    crate::io::create_dir(&out)?;
    let modes = parse_list(args.get("modes").unwrap_or("real,complex"));
    let activations = parse_list(
        args.get("activations")
            .unwrap_or("relu,crelu,modrelu,zrelu,cardioid"),
    );
    let widths = parse_list(args.get("widths").unwrap_or("15"));
    let depths = parse_list(args.get("depths").unwrap_or("2"));
    let seeds = parse_list(args.get("seeds").unwrap_or("1"));
    let steps: u64 = args.num("steps", 2000u64)?;
    let batch: usize = args.num("batch", 2usize)?;
    let lr: f64 = args.num("lr", 0.001f64)?;
    let denoiser_layers: usize = args.num("denoiser-layers", 4usize)?;
    let kernel: usize = args.num("kernel", 3usize)?;
    let panel_count: usize = args.num("panels", 3usize)?;
    let diff_scale: f64 = args.num("diff-scale", 40.0f64)?;
    let cs_iterations: usize = args.num("cs-iterations", 100usize)?;
    let cs_lambdas: Vec<f64> = parse_list(args.get("cs-lambdas").unwrap_or("1e-4,3e-4,1e-3,3e-3,1e-2"))
        .iter()
        .map(|s| {
            s.parse::<f64>()
                .map_err(|_| Error::Config(format!("bad lambda '{s}' in --cs-lambdas")))
        })
        .collect::<Result<Vec<_>>>()?;

    let dataset = Dataset::open(&data)?;
    let test_set: Vec<AcquisitionExample> = dataset
        .test
        .iter()
        .map(|p| load_example(p))
        .collect::<Result<_>>()?;
    if test_set.is_empty() {
        return Err(Error::Data("dataset has no test split".into()));
    }
    let val_set: Vec<AcquisitionExample> = dataset
        .val
        .iter()
        .map(|p| load_example(p))
        .collect::<Result<_>>()?;

    let mut rows: Vec<CellRow> = Vec::new();

    // Zero-filled baseline.
    let zf_reports: Vec<MetricReport> = test_set
        .iter()
        .map(|ex| {
            let zf = sense_adjoint(&ex.kspace_u, &ex.maps, &ex.mask)?;
            MetricReport::evaluate(&zf, &ex.image, "zero-filled", ex.meta.accel_achieved, 0)
        })
        .collect::<Result<_>>()?;
    rows.push(CellRow {
        method: "zero_filled".into(),
        mode: String::new(),
        activation: String::new(),
        width: String::new(),
        feature_maps: String::new(),
        depth: String::new(),
        seed: String::new(),
        params: "0".into(),
        status: "ok".into(),
        metrics: Some(mean_metrics(&zf_reports)),
    });

    // CS baseline with lambda picked on the validation split.
    let cs_base = CsConfig {
        iterations: cs_iterations,
        ..Default::default()
    };
    let lambda_pool = if val_set.is_empty() { &test_set } else { &val_set };
    let (lambda, table) = select_lambda(lambda_pool, &cs_base, &cs_lambdas)?;
    println!("cs lambda grid: {table:?} -> lambda = {lambda}");
    let cs_cfg = CsConfig {
        lambda,
        ..cs_base
    };
    let cs_reports: Vec<MetricReport> = test_set
        .iter()
        .map(|ex| {
            let recon = ista_wavelet_recon(&ex.kspace_u, &ex.maps, &ex.mask, &cs_cfg)?;
            MetricReport::evaluate(
                &recon.image,
                &ex.image,
                &format!("cs-lambda-{lambda}"),
                ex.meta.accel_achieved,
                0,
            )
        })
        .collect::<Result<_>>()?;
    rows.push(CellRow {
        method: "cs_l1wavelet".into(),
        mode: String::new(),
        activation: format!("lambda={lambda}"),
        width: String::new(),
        feature_maps: String::new(),
        depth: String::new(),
        seed: String::new(),
        params: "0".into(),
        status: "ok".into(),
        metrics: Some(mean_metrics(&cs_reports)),
    });

    // Sweep cells.
    let mut first_ok: Vec<(ConvMode, PathBuf)> = Vec::new();
    for mode_s in &modes {
        for act_s in &activations {
            for width_s in &widths {
                for depth_s in &depths {
                    let mut seed_rows: Vec<CellRow> = Vec::new();
                    for seed_s in &seeds {
                        let row = run_cell(
                            &data,
                            &out,
                            mode_s,
                            act_s,
                            width_s,
                            depth_s,
                            seed_s,
                            steps,
                            batch,
                            lr,
                            denoiser_layers,
                            kernel,
                            &mut first_ok,
                        );
                        seed_rows.push(row);
                        println!(
                            "cell {mode_s}/{act_s}/w{width_s}/d{depth_s}/s{seed_s}: {}",
                            seed_rows.last().unwrap().status
                        );
                    }
                    if seeds.len() > 1 {
                        let oks: Vec<&CellRow> =
                            seed_rows.iter().filter(|r| r.status == "ok").collect();
                        if !oks.is_empty() {
                            let avg = |f: fn(&(f64, f64, f64, f64)) -> f64| {
                                oks.iter().map(|r| f(&r.metrics.unwrap())).sum::<f64>()
                                    / oks.len() as f64
                            };
                            seed_rows.push(CellRow {
                                method: "unrolled".into(),
                                mode: mode_s.clone(),
                                activation: act_s.clone(),
                                width: width_s.clone(),
                                feature_maps: oks[0].feature_maps.clone(),
                                depth: depth_s.clone(),
                                seed: "mean".into(),
                                params: oks[0].params.clone(),
                                status: "ok".into(),
                                metrics: Some((
                                    avg(|m| m.0),
                                    avg(|m| m.1),
                                    avg(|m| m.2),
                                    avg(|m| m.3),
                                )),
                            });
                        }
                    }
                    rows.append(&mut seed_rows);
                }
            }
        }
    }

    // Table.
    let mut csv = String::from(
        "method,mode,activation,width,feature_maps,depth,seed,params,status,nrmse,psnr,ssim,phase_rmse\n",
    );
    for row in &rows {
        csv.push_str(&row.csv());
        csv.push('\n');
    }
    crate::io::write_text(&out.join("compare.csv"), &csv)?;
    println!("wrote {} rows to {}", rows.len(), out.join("compare.csv").display());

    // Panels: input | real | complex | CS | ground truth.
    let real_ckpt = first_ok.iter().find(|(m, _)| *m == ConvMode::Real);
    let complex_ckpt = first_ok.iter().find(|(m, _)| *m == ConvMode::Complex);
    let panels_dir = out.join("panels");
    crate::io::create_dir(&panels_dir)?;
    for (i, ex) in test_set.iter().take(panel_count).enumerate() {
        let zf = sense_adjoint(&ex.kspace_u, &ex.maps, &ex.mask)?;
        let mut columns: Vec<ComplexTensor> = vec![zf];
        for ckpt in [real_ckpt, complex_ckpt].into_iter().flatten() {
            let (recon, _) = super::recon::reconstruct_with_checkpoint(&ckpt.1, ex)?;
            columns.push(recon);
        }
        columns.push(ista_wavelet_recon(&ex.kspace_u, &ex.maps, &ex.mask, &cs_cfg)?.image);
        columns.push(ex.image.clone());
        let panel = Panel {
            images: columns.iter().collect(),
            diff_scale,
        };
        let (mag, w, h) = panel.magnitude();
        crate::viz::write_gray_png(&panels_dir.join(format!("ex{i:03}_magnitude.png")), w, h, &mag)?;
        let (ph, w, h) = panel.phase();
        crate::viz::write_gray_png(&panels_dir.join(format!("ex{i:03}_phase.png")), w, h, &ph)?;
    }
    println!("panels in {}", panels_dir.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn run_cell(
    data: &Path,
    out: &Path,
    mode_s: &str,
    act_s: &str,
    width_s: &str,
    depth_s: &str,
    seed_s: &str,
    steps: u64,
    batch: usize,
    lr: f64,
    denoiser_layers: usize,
    kernel: usize,
    first_ok: &mut Vec<(ConvMode, PathBuf)>,
) -> CellRow {
    let mut row = CellRow {
        method: "unrolled".into(),
        mode: mode_s.into(),
        activation: act_s.into(),
        width: width_s.into(),
        feature_maps: String::new(),
        depth: depth_s.into(),
        seed: seed_s.into(),
        params: String::new(),
        status: String::new(),
        metrics: None,
    };
    type CellOutcome = (f64, f64, f64, f64, usize, usize, ConvMode, PathBuf);
    let attempt = || -> Result<CellOutcome> {
        let mode = ConvMode::parse(mode_s)?;
        let activation = ActivationKind::parse(act_s)?;
        crate::models::validate_mode_activation(mode, activation)?;
        let width: usize = width_s
            .parse()
            .map_err(|_| Error::Config(format!("bad width '{width_s}'")))?;
        let depth: usize = depth_s
            .parse()
            .map_err(|_| Error::Config(format!("bad depth '{depth_s}'")))?;
        let seed: u64 = seed_s
            .parse()
            .map_err(|_| Error::Config(format!("bad seed '{seed_s}'")))?;
        // Widths are complex hidden widths; the real cell takes the
        // parity-matched channel count for the same template.
        let feature_maps = match mode {
            ConvMode::Complex => width,
            ConvMode::Real => {
                let template = unrolled_template(depth, denoiser_layers, kernel, activation);
                parity_feature_maps(&template, width).real_channels
            }
        };
        let cell_dir = out.join(format!(
            "cells/{mode_s}_{act_s}_w{width_s}_d{depth_s}_s{seed_s}"
        ));
        let cfg = TrainConfig {
            model: ModelKind::Unrolled,
            conv_mode: mode,
            activation,
            iterations: depth,
            feature_maps,
            denoiser_layers,
            convs_per_level: 2,
            kernel,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch,
            steps,
            seed,
            checkpoint_every: 500,
            data: data.to_path_buf(),
            out: cell_dir.clone(),
        };
        let unrolled = UnrolledConfig {
            iterations: depth,
            feature_maps: width,
            conv_mode: ConvMode::Complex,
            activation: if mode == ConvMode::Complex {
                activation
            } else {
                ActivationKind::CRelu
            },
            denoiser_layers,
            kernel,
        };
        let parity = unrolled_parity(&unrolled);
        let outcome = train(&cfg)?;
        let m = mean_metrics(&outcome.test_reports);
        let count = match mode {
            ConvMode::Complex => parity.complex_param_count,
            ConvMode::Real => parity.real_param_count,
        };
        Ok((m.0, m.1, m.2, m.3, count, feature_maps, mode, outcome.best_checkpoint))
    };
    match attempt() {
        Ok((n, p, s, ph, count, feature_maps, mode, ckpt)) => {
            row.metrics = Some((n, p, s, ph));
            row.params = count.to_string();
            row.feature_maps = feature_maps.to_string();
            row.status = "ok".into();
            if !first_ok.iter().any(|(m, _)| *m == mode) {
                first_ok.push((mode, ckpt));
            }
        }
        Err(e) => {
            row.status = match e {
                Error::Config(msg) => format!("invalid: {msg}"),
                other => format!("failed: {other}"),
            }
            .replace(',', ";");
        }
    }
    row
}
