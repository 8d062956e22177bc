//! `cxmri recon`: reconstruct one stored example and export magnitude/phase
//! PNGs plus a metric report against the ground truth.

use std::path::{Path, PathBuf};

use super::{help_text, Args};
use crate::cs::{ista_wavelet_recon, CsConfig};
use crate::error::{Error, Result};
use crate::io::read_kv_file;
use crate::metrics::MetricReport;
use crate::mri::{load_example, sense_adjoint};
use crate::tensor::ComplexTensor;
use crate::train::{load_checkpoint, write_metrics_csv, TrainConfig};
use crate::viz::{magnitude_percentile, magnitude_to_gray, phase_to_gray, write_gray_png};

const FLAGS: &[(&str, &str)] = &[
    ("example", "example directory from a generated dataset (required)"),
    ("out", "output directory (required)"),
    ("method", "net | zf | cs | gt (default net)"),
    ("checkpoint", "checkpoint directory (required for --method net)"),
    ("lambda", "CS sparsity weight (default 5e-4)"),
    ("cs-iterations", "CS iteration count (default 100)"),
];

pub fn run(argv: &[String]) -> Result<()> {
    let Some(args) = Args::parse(
        argv,
        FLAGS,
        &help_text("recon", "Reconstruct one example and write PNGs + metrics.", FLAGS),
    )?
    else {
        return Ok(());
    };
    let example_dir = PathBuf::from(args.require("example")?);
    let out = PathBuf::from(args.require("out")?);
    let ex = load_example(&example_dir)?;
    let method = args.get("method").unwrap_or("net");
    let (recon, digest) = match method {
        "zf" => (sense_adjoint(&ex.kspace_u, &ex.maps, &ex.mask)?, "zero-filled".to_string()),
        "gt" => (ex.image.clone(), "ground-truth".to_string()),
        "cs" => {
            let cfg = CsConfig {
                lambda: args.num("lambda", 5e-4f64)?,
                iterations: args.num("cs-iterations", 100usize)?,
                ..Default::default()
            };
            let result = ista_wavelet_recon(&ex.kspace_u, &ex.maps, &ex.mask, &cfg)?;
            (result.image, format!("cs-lambda-{}", cfg.lambda))
        }
        "net" => {
            let ckpt = Path::new(args.require("checkpoint")?);
            reconstruct_with_checkpoint(ckpt, &ex)?
        }
        other => {
            return Err(Error::Config(format!(
                "unknown method '{other}' (valid: net, zf, cs, gt)"
            )))
        }
    };
    crate::io::create_dir(&out)?;
    write_images(&out, &recon)?;
    let report = MetricReport::evaluate(
        &recon,
        &ex.image,
        &digest,
        ex.meta.accel_achieved,
        ex.meta.phantom_seed,
    )?;
    write_metrics_csv(&out.join("metrics.csv"), std::slice::from_ref(&report))?;
    println!(
        "{method}: NRMSE {:.4}  PSNR {:.2} dB  SSIM {:.4}  phase RMSE {:.4}",
        report.nrmse, report.psnr, report.ssim, report.phase_rmse
    );
    println!("wrote magnitude.png, phase.png, metrics.csv to {}", out.display());
    Ok(())
}

/// Load a checkpoint plus the config stored beside it and run its model.
pub(crate) fn reconstruct_with_checkpoint(
    ckpt: &Path,
    ex: &crate::mri::AcquisitionExample,
) -> Result<(ComplexTensor, String)> {
    let (params, digest) = load_checkpoint(ckpt)?;
    let config_path = if ckpt.join("config.txt").exists() {
        ckpt.join("config.txt")
    } else {
        ckpt.join("..").join("config.txt")
    };
    let cfg = TrainConfig::from_kv(&read_kv_file(&config_path)?)?;
    if cfg.digest() != digest {
        return Err(Error::Data(format!(
            "checkpoint digest {digest} does not match config digest {}",
            cfg.digest()
        )));
    }
    let recon = cfg.model_config()?.forward(&params, ex)?;
    Ok((recon, digest))
}

fn write_images(out: &Path, recon: &ComplexTensor) -> Result<()> {
    let (h, w) = (recon.shape()[0], recon.shape()[1]);
    let hi = magnitude_percentile(recon, 99.5);
    write_gray_png(&out.join("magnitude.png"), w, h, &magnitude_to_gray(recon, hi))?;
    write_gray_png(&out.join("phase.png"), w, h, &phase_to_gray(recon))
}
