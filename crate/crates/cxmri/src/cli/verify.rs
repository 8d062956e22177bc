//! `cxmri verify`: audit every invariant of a generated dataset.
//!
//! On-disk tensors live in f32 containers, so the analytic invariants
//! (pixelwise map normalization, magnitude/phase bounds) are audited at f32
//! precision; k-space consistency is exact at container precision.

use std::path::Path;

use super::{help_text, Args};
use crate::error::{Error, Result};
use crate::mri::{audit_mask, load_example, simulate_acquisition, Dataset, MaskSpec};

const FLAGS: &[(&str, &str)] = &[("data", "dataset directory (required)")];

/// Tolerance for invariants stated on f64 values but stored as f32.
const F32_TOL: f64 = 1e-5;

pub fn run(argv: &[String]) -> Result<()> {
    let Some(args) = Args::parse(
        argv,
        FLAGS,
        &help_text("verify", "Audit dataset invariants; nonzero exit on violation.", FLAGS),
    )?
    else {
        return Ok(());
    };
    let root = Path::new(args.require("data")?);
    let dataset = Dataset::open(root)?;
    let mut violations = Vec::new();
    let mut audited = 0usize;
    for dir in dataset
        .train
        .iter()
        .chain(&dataset.val)
        .chain(&dataset.test)
    {
        audited += 1;
        for v in audit_example(dir)? {
            violations.push(format!("{}: {v}", dir.display()));
        }
    }
    if violations.is_empty() {
        println!("verified {audited} examples, zero violations");
        Ok(())
    } else {
        for v in &violations {
            eprintln!("violation: {v}");
        }
        Err(Error::Data(format!(
            "{} violation(s) across {audited} examples",
            violations.len()
        )))
    }
}

pub(crate) fn audit_example(dir: &Path) -> Result<Vec<String>> {
    let ex = load_example(dir)?;
    let mut violations = Vec::new();
    let (h, w) = (ex.image.shape()[0], ex.image.shape()[1]);

    // Mask invariants, including the all-pairs minimum-distance audit at the
    // recorded base radius.
    let spec = MaskSpec {
        h,
        w,
        accel_target: ex.meta.accel_target,
        calib: ex.meta.calib,
        density_power: ex.meta.density_power,
        seed: ex.meta.mask_seed,
    };
    let r0 = (ex.meta.mask_r0 > 0.0).then_some(ex.meta.mask_r0);
    violations.extend(audit_mask(&ex.mask, &spec, r0));

    // Pixelwise map normalization.
    let coils = ex.maps.shape()[0];
    let plane = h * w;
    let mut worst = 0.0f64;
    for t in 0..plane {
        let mut s = 0.0;
        for c in 0..coils {
            s += ex.maps.re()[c * plane + t].powi(2) + ex.maps.im()[c * plane + t].powi(2);
        }
        worst = worst.max((s - 1.0).abs());
    }
    if worst > F32_TOL {
        violations.push(format!("map normalization residual {worst:.2e} above {F32_TOL:.0e}"));
    }

    // Image bounds.
    let mag = ex.image.magnitude();
    if mag.re().iter().any(|&v| v > 1.0 + F32_TOL) {
        violations.push("image magnitude above 1".into());
    }
    let phase = ex.image.phase();
    if phase.re().iter().any(|&v| v.abs() > std::f64::consts::PI + F32_TOL) {
        violations.push("image phase outside [-pi, pi]".into());
    }

    // k-space consistency: re-simulation from the stored inputs reproduces
    // the stored data bit-exactly at container precision.
    let resim = simulate_acquisition(
        &ex.image,
        &ex.maps,
        &ex.mask,
        ex.meta.noise_sigma,
        ex.meta.noise_seed,
    )?;
    for t in 0..resim.numel() {
        if resim.re()[t] as f32 != ex.kspace_u.re()[t] as f32
            || resim.im()[t] as f32 != ex.kspace_u.im()[t] as f32
        {
            violations.push(format!("k-space mismatch at flat index {t}"));
            break;
        }
    }
    Ok(violations)
}
