//! Image-quality metrics. NRMSE and PSNR are evaluated on the complex-valued
//! images; SSIM is evaluated on magnitude images with an 11x11 Gaussian
//! window (sigma 1.5, K1 = 0.01, K2 = 0.03) and the dynamic range set to the
//! target's peak magnitude. Phase RMSE is restricted to pixels where the
//! target magnitude clears a threshold, since phase is meaningless in air.

use crate::error::{Error, Result};
use crate::tensor::ComplexTensor;

/// Mean over entries of `|d re| + |d im|` (component-wise L1 over the real
/// pair, not the complex modulus).
pub fn l1_loss(pred: &ComplexTensor, target: &ComplexTensor) -> Result<f64> {
    let diff = pred.sub(target)?;
    let s: f64 = diff
        .re()
        .iter()
        .zip(diff.im())
        .map(|(&a, &b)| a.abs() + b.abs())
        .sum();
    Ok(s / diff.numel() as f64)
}

/// `||pred - target||_2 / ||target||_2` over complex entries.
pub fn nrmse(pred: &ComplexTensor, target: &ComplexTensor) -> Result<f64> {
    let nt = target.norm2();
    if nt == 0.0 {
        return Err(Error::ZeroTarget("nrmse"));
    }
    Ok(pred.sub(target)?.norm2() / nt)
}

/// `20 log10(max|target| / rmse)` with rmse over complex modulus differences.
/// Equal images report positive infinity.
pub fn psnr(pred: &ComplexTensor, target: &ComplexTensor) -> Result<f64> {
    let peak = target.max_abs();
    if peak == 0.0 {
        return Err(Error::ZeroTarget("psnr"));
    }
    let rmse = (pred.sub(target)?.norm2_sq() / target.numel() as f64).sqrt();
    if rmse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(20.0 * (peak / rmse).log10())
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    for (i, v) in w.iter_mut().enumerate() {
        *v = (-(i as f64 - c).powi(2) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        sum += *v;
    }
    for v in &mut w {
        *v /= sum;
    }
    w
}

/// Separable valid-mode Gaussian filter of an H x W plane; output is
/// (H - 10) x (W - 10).
fn gaussian_filter_valid(plane: &[f64], h: usize, w: usize) -> Vec<f64> {
    let win = gaussian_window();
    let ow = w - SSIM_WINDOW + 1;
    let oh = h - SSIM_WINDOW + 1;
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            let mut s = 0.0;
            for (k, &wv) in win.iter().enumerate() {
                s += wv * plane[y * w + x + k];
            }
            rows[y * ow + x] = s;
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            let mut s = 0.0;
            for (k, &wv) in win.iter().enumerate() {
                s += wv * rows[(y + k) * ow + x];
            }
            out[y * ow + x] = s;
        }
    }
    out
}

/// Mean SSIM between the magnitude images of `pred` and `target` over the
/// last two axes (leading axes, if any, are averaged too).
pub fn ssim(pred: &ComplexTensor, target: &ComplexTensor) -> Result<f64> {
    if pred.shape() != target.shape() {
        return Err(Error::ShapeMismatch {
            context: "ssim",
            axis: 0,
            got: pred.shape()[0],
            expected: target.shape()[0],
        });
    }
    let shape = pred.shape();
    if shape.len() < 2 {
        return Err(Error::RankMismatch {
            context: "ssim",
            got: shape.len(),
            expected: 2,
        });
    }
    let h = shape[shape.len() - 2];
    let w = shape[shape.len() - 1];
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::Data(format!(
            "ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} images, got {h}x{w}"
        )));
    }
    let peak = target.max_abs();
    if peak == 0.0 {
        return Err(Error::ZeroTarget("ssim"));
    }
    let c1 = (SSIM_K1 * peak).powi(2);
    let c2 = (SSIM_K2 * peak).powi(2);
    let pm = pred.magnitude();
    let tm = target.magnitude();
    let plane = h * w;
    let planes = pred.numel() / plane;
    let mut total = 0.0;
    let mut count = 0usize;
    for p in 0..planes {
        let x = &pm.re()[p * plane..(p + 1) * plane];
        let y = &tm.re()[p * plane..(p + 1) * plane];
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(y).map(|(a, b)| a * b).collect();
        let mu_x = gaussian_filter_valid(x, h, w);
        let mu_y = gaussian_filter_valid(y, h, w);
        let m_xx = gaussian_filter_valid(&xx, h, w);
        let m_yy = gaussian_filter_valid(&yy, h, w);
        let m_xy = gaussian_filter_valid(&xy, h, w);
        for i in 0..mu_x.len() {
            let (mx, my) = (mu_x[i], mu_y[i]);
            let var_x = m_xx[i] - mx * mx;
            let var_y = m_yy[i] - my * my;
            let cov = m_xy[i] - mx * my;
            let s = ((2.0 * mx * my + c1) * (2.0 * cov + c2))
                / ((mx * mx + my * my + c1) * (var_x + var_y + c2));
            total += s;
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// RMS of the wrapped phase difference over pixels where `|target|` exceeds
/// `threshold`.
pub fn phase_rmse(pred: &ComplexTensor, target: &ComplexTensor, threshold: f64) -> Result<f64> {
    if pred.shape() != target.shape() {
        return Err(Error::ShapeMismatch {
            context: "phase_rmse",
            axis: 0,
            got: pred.shape()[0],
            expected: target.shape()[0],
        });
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for t in 0..pred.numel() {
        let tv = target.at(t);
        if tv.abs() > threshold {
            let mut d = pred.at(t).arg() - tv.arg();
            if d > std::f64::consts::PI {
                d -= std::f64::consts::TAU;
            } else if d < -std::f64::consts::PI {
                d += std::f64::consts::TAU;
            }
            sum += d * d;
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::Data(
            "phase_rmse: no pixel clears the magnitude threshold".into(),
        ));
    }
    Ok((sum / count as f64).sqrt())
}

/// One evaluated example: the three image metrics plus phase RMSE and the
/// run metadata a report row carries.
#[derive(Clone, Debug)]
pub struct MetricReport {
    pub nrmse: f64,
    pub psnr: f64,
    pub ssim: f64,
    pub phase_rmse: f64,
    pub config_digest: String,
    pub accel: f64,
    pub seed: u64,
}

pub const PHASE_RMSE_THRESHOLD: f64 = 0.1;

impl MetricReport {
    pub fn evaluate(
        pred: &ComplexTensor,
        target: &ComplexTensor,
        config_digest: &str,
        accel: f64,
        seed: u64,
    ) -> Result<MetricReport> {
        Ok(MetricReport {
            nrmse: nrmse(pred, target)?,
            psnr: psnr(pred, target)?,
            ssim: ssim(pred, target)?,
            phase_rmse: phase_rmse(pred, target, PHASE_RMSE_THRESHOLD)?,
            config_digest: config_digest.to_string(),
            accel,
            seed,
        })
    }

    pub fn csv_header() -> &'static str {
        "example,nrmse,psnr,ssim,phase_rmse,accel,seed,config"
    }

    pub fn csv_row(&self, example: &str) -> String {
        format!(
            "{example},{},{},{},{},{},{},{}",
            self.nrmse, self.psnr, self.ssim, self.phase_rmse, self.accel, self.seed,
            self.config_digest
        )
    }
}

/// Mean and standard deviation of a metric column.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Aggregate row over per-example reports: `mean+/-std` per metric column.
pub fn aggregate_csv_row(reports: &[MetricReport]) -> String {
    let col = |f: fn(&MetricReport) -> f64| {
        let vals: Vec<f64> = reports.iter().map(f).collect();
        let (m, s) = mean_std(&vals);
        format!("{m:.6}+/-{s:.6}")
    };
    format!(
        "aggregate,{},{},{},{},,,",
        col(|r| r.nrmse),
        col(|r| r.psnr),
        col(|r| r.ssim),
        col(|r| r.phase_rmse),
    )
}
