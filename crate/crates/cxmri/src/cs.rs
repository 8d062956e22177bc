//! Classical compressed-sensing baseline: ISTA with orthonormal Haar-wavelet
//! soft-thresholding against the SENSE acquisition model.

use crate::error::{Error, Result};
use crate::mri::{sense_adjoint, sense_forward, sense_normal};
use crate::tensor::{Complex, ComplexTensor};

#[derive(Clone, Copy, Debug)]
pub struct CsConfig {
    /// Sparsity weight of the L1-wavelet term.
    pub lambda: f64,
    pub iterations: usize,
    /// Gradient step size; must stay in (0, 2) given the unit-norm operator.
    pub step: f64,
    pub wavelet_levels: usize,
}

impl Default for CsConfig {
    fn default() -> Self {
        CsConfig {
            lambda: 0.0,
            iterations: 100,
            step: 1.0,
            wavelet_levels: 2,
        }
    }
}

impl CsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda < 0.0 {
            return Err(Error::Config(format!("lambda {} must be >= 0", self.lambda)));
        }
        if !(self.step > 0.0 && self.step < 2.0) {
            return Err(Error::Config(format!(
                "step {} outside (0, 2), iteration may diverge",
                self.step
            )));
        }
        Ok(())
    }
}

/// Separable orthonormal Haar transform of an `[H, W]` image, applied to the
/// real and imaginary planes independently. `levels` stages shrink the
/// low-pass block by half each time; the inverse reconstructs exactly.
pub fn haar2(x: &ComplexTensor, levels: usize, inverse: bool) -> Result<ComplexTensor> {
    if x.shape().len() != 2 {
        return Err(Error::RankMismatch {
            context: "haar2",
            got: x.shape().len(),
            expected: 2,
        });
    }
    let (h, w) = (x.shape()[0], x.shape()[1]);
    let div = 1usize << levels;
    for (dim, name) in [(h, "haar2 height"), (w, "haar2 width")] {
        if dim % div != 0 {
            return Err(Error::NotDivisible {
                context: if name.contains("height") {
                    "haar2 height"
                } else {
                    "haar2 width"
                },
                size: dim,
                divisor: div,
            });
        }
    }
    let mut out = x.clone();
    let (re, im) = out.planes_mut();
    for plane in [re, im] {
        if inverse {
            for level in (0..levels).rev() {
                let (bh, bw) = (h >> level, w >> level);
                haar_step_inverse(plane, w, bh, bw);
            }
        } else {
            for level in 0..levels {
                let (bh, bw) = (h >> level, w >> level);
                haar_step_forward(plane, w, bh, bw);
            }
        }
    }
    Ok(out)
}

const SQRT2_INV: f64 = std::f64::consts::FRAC_1_SQRT_2;

/// One analysis stage on the top-left `bh x bw` block (row pass then column
/// pass, averages packed in the first half, details in the second).
fn haar_step_forward(plane: &mut [f64], stride: usize, bh: usize, bw: usize) {
    let mut buf = vec![0.0; bh.max(bw)];
    for y in 0..bh {
        for x in 0..bw / 2 {
            let a = plane[y * stride + 2 * x];
            let b = plane[y * stride + 2 * x + 1];
            buf[x] = (a + b) * SQRT2_INV;
            buf[bw / 2 + x] = (a - b) * SQRT2_INV;
        }
        plane[y * stride..y * stride + bw].copy_from_slice(&buf[..bw]);
    }
    for x in 0..bw {
        for y in 0..bh / 2 {
            let a = plane[2 * y * stride + x];
            let b = plane[(2 * y + 1) * stride + x];
            buf[y] = (a + b) * SQRT2_INV;
            buf[bh / 2 + y] = (a - b) * SQRT2_INV;
        }
        for y in 0..bh {
            plane[y * stride + x] = buf[y];
        }
    }
}

fn haar_step_inverse(plane: &mut [f64], stride: usize, bh: usize, bw: usize) {
    let mut buf = vec![0.0; bh.max(bw)];
    for x in 0..bw {
        for y in 0..bh / 2 {
            let avg = plane[y * stride + x];
            let det = plane[(bh / 2 + y) * stride + x];
            buf[2 * y] = (avg + det) * SQRT2_INV;
            buf[2 * y + 1] = (avg - det) * SQRT2_INV;
        }
        for y in 0..bh {
            plane[y * stride + x] = buf[y];
        }
    }
    for y in 0..bh {
        for x in 0..bw / 2 {
            let avg = plane[y * stride + x];
            let det = plane[y * stride + bw / 2 + x];
            buf[2 * x] = (avg + det) * SQRT2_INV;
            buf[2 * x + 1] = (avg - det) * SQRT2_INV;
        }
        plane[y * stride..y * stride + bw].copy_from_slice(&buf[..bw]);
    }
}

/// Complex soft-thresholding: `w max(1 - tau/|w|, 0)` per entry, phase kept.
pub fn soft_threshold(w: &ComplexTensor, tau: f64) -> Result<ComplexTensor> {
    if tau < 0.0 {
        return Err(Error::Config(format!("threshold {tau} must be >= 0")));
    }
    let mut out = ComplexTensor::zeros(w.shape());
    let (ore, oim) = out.planes_mut();
    for t in 0..w.numel() {
        let (a, b) = (w.re()[t], w.im()[t]);
        let r = a.hypot(b);
        if r > tau {
            let s = 1.0 - tau / r;
            ore[t] = s * a;
            oim[t] = s * b;
        }
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct CsResult {
    pub image: ComplexTensor,
    /// Objective `0.5 ||A x - k||^2 + lambda ||W x||_1` at the start and
    /// after every iteration.
    pub objective: Vec<f64>,
}

fn objective(
    x: &ComplexTensor,
    kspace_u: &ComplexTensor,
    maps: &ComplexTensor,
    mask: &ComplexTensor,
    cfg: &CsConfig,
) -> Result<f64> {
    let resid = sense_forward(x, maps, mask)?.sub(kspace_u)?;
    let mut obj = 0.5 * resid.norm2_sq();
    if cfg.lambda > 0.0 {
        let coeffs = haar2(x, cfg.wavelet_levels, false)?;
        let l1: f64 = coeffs
            .re()
            .iter()
            .zip(coeffs.im())
            .map(|(&a, &b)| a.hypot(b))
            .sum();
        obj += cfg.lambda * l1;
    }
    Ok(obj)
}

/// ISTA with L1-wavelet regularization from the zero-filled start. Errors if
/// the objective rises for ten consecutive iterations.
pub fn ista_wavelet_recon(
    kspace_u: &ComplexTensor,
    maps: &ComplexTensor,
    mask: &ComplexTensor,
    cfg: &CsConfig,
) -> Result<CsResult> {
    cfg.validate()?;
    let mut x = sense_adjoint(kspace_u, maps, mask)?;
    let ahk = x.clone();
    let mut trace = vec![objective(&x, kspace_u, maps, mask, cfg)?];
    let mut rising = 0usize;
    for _ in 0..cfg.iterations {
        let grad = sense_normal(&x, maps, mask)?.sub(&ahk)?;
        let stepped = grad.scale(Complex::new(-cfg.step, 0.0)).add(&x)?;
        x = if cfg.lambda > 0.0 {
            let coeffs = haar2(&stepped, cfg.wavelet_levels, false)?;
            let shrunk = soft_threshold(&coeffs, cfg.step * cfg.lambda)?;
            haar2(&shrunk, cfg.wavelet_levels, true)?
        } else {
            stepped
        };
        let obj = objective(&x, kspace_u, maps, mask, cfg)?;
        let prev = *trace.last().unwrap();
        trace.push(obj);
        if obj > prev + 1e-12 * prev.abs().max(1.0) {
            rising += 1;
            if rising >= 10 {
                return Err(Error::Diverged(rising));
            }
        } else {
            rising = 0;
        }
    }
    Ok(CsResult {
        image: x,
        objective: trace,
    })
}

/// Pick the sparsity weight by grid search on mean validation NRMSE.
/// Returns the winning lambda and the (lambda, nrmse) table.
pub fn select_lambda(
    examples: &[crate::mri::AcquisitionExample],
    base: &CsConfig,
    candidates: &[f64],
) -> Result<(f64, Vec<(f64, f64)>)> {
    use rayon::prelude::*;
    if examples.is_empty() || candidates.is_empty() {
        return Err(Error::Data("lambda selection needs examples and candidates".into()));
    }
    let mut table = Vec::new();
    for &lambda in candidates {
        let cfg = CsConfig { lambda, ..*base };
        let errs: Result<Vec<f64>> = examples
            .par_iter()
            .map(|ex| {
                let recon = ista_wavelet_recon(&ex.kspace_u, &ex.maps, &ex.mask, &cfg)?;
                crate::metrics::nrmse(&recon.image, &ex.image)
            })
            .collect();
        let errs = errs?;
        table.push((lambda, errs.iter().sum::<f64>() / errs.len() as f64));
    }
    let best = table
        .iter()
        .cloned()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap();
    Ok((best.0, table))
}
