//! `cxmri phantom`: synthetic dataset generation.

use std::path::PathBuf;

use super::{help_text, Args};
use crate::error::{Error, Result};
use crate::mri::{generate_dataset, DatasetSpec};

const FLAGS: &[(&str, &str)] = &[
    ("n", "number of examples (required)"),
    ("size", "image side length, power of two (default 64)"),
    ("coils", "number of receive coils (default 8)"),
    ("seed", "dataset seed (default 1)"),
    ("out", "output directory (required)"),
    ("accel", "acceleration target, single value or lo:hi range (default 4)"),
    ("calib", "fully-sampled calibration square side (default 12)"),
    ("density-power", "variable-density radius exponent (default 2.0)"),
    ("snr-db", "k-space SNR in dB, 'inf' for noiseless (default 30)"),
    ("phase-detail", "number of Gaussian phase features (default 10)"),
];

pub fn run(argv: &[String]) -> Result<()> {
    let Some(args) = Args::parse(
        argv,
        FLAGS,
        &help_text("phantom", "Generate a synthetic multi-coil dataset.", FLAGS),
    )?
    else {
        return Ok(());
    };
    let n: usize = args
        .require("n")?
        .parse()
        .map_err(|_| Error::Config("bad value for --n".into()))?;
    let out = PathBuf::from(args.require("out")?);
    let (accel_lo, accel_hi) = parse_accel(args.get("accel").unwrap_or("4"))?;
    let snr_db = match args.get("snr-db") {
        Some("inf") => f64::INFINITY,
        Some(v) => v
            .parse()
            .map_err(|_| Error::Config(format!("bad value '{v}' for --snr-db")))?,
        None => 30.0,
    };
    let spec = DatasetSpec {
        n,
        size: args.num("size", 64usize)?,
        coils: args.num("coils", 8usize)?,
        accel_lo,
        accel_hi,
        calib: args.num("calib", 12usize)?,
        density_power: args.num("density-power", 2.0f64)?,
        snr_db,
        phase_detail: args.num("phase-detail", 10usize)?,
        seed: args.num("seed", 1u64)?,
    };
    let dataset = generate_dataset(&spec, &out)?;
    println!(
        "wrote {} examples ({} train / {} val / {} test) to {}",
        spec.n,
        dataset.train.len(),
        dataset.val.len(),
        dataset.test.len(),
        out.display()
    );
    Ok(())
}

fn parse_accel(text: &str) -> Result<(f64, f64)> {
    if let Some((lo, hi)) = text.split_once(':') {
        let lo: f64 = lo
            .parse()
            .map_err(|_| Error::Config(format!("bad acceleration '{text}'")))?;
        let hi: f64 = hi
            .parse()
            .map_err(|_| Error::Config(format!("bad acceleration '{text}'")))?;
        if hi < lo {
            return Err(Error::Config(format!("empty acceleration range '{text}'")));
        }
        Ok((lo, hi))
    } else {
        let v: f64 = text
            .parse()
            .map_err(|_| Error::Config(format!("bad acceleration '{text}'")))?;
        Ok((v, v))
    }
}
