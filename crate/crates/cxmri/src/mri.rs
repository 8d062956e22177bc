//! Synthetic acquisition pipeline: phantoms with nontrivial phase, analytic
//! coil sensitivity maps, variable-density Poisson-disc sampling masks, and
//! the SENSE forward/adjoint operators.
//!
//! Everything here is a pure function of its seed, and datasets written to
//! disk are quantized through the f32 container format *before* the k-space
//! is simulated, so re-simulating a stored example from its stored inputs
//! reproduces the stored k-space bit-for-bit.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::fft::fft2c_plane;
use crate::io;
use crate::rng::{derive_seed, Rng};
use crate::tensor::ComplexTensor;

// ---------------------------------------------------------------------------
// Phantom.
// ---------------------------------------------------------------------------

/// Standard Shepp-Logan ellipse table: (intensity, a, b, x0, y0, phi_deg).
const SHEPP_LOGAN: [(f64, f64, f64, f64, f64, f64); 10] = [
    (2.0, 0.69, 0.92, 0.0, 0.0, 0.0),
    (-0.98, 0.6624, 0.8740, 0.0, -0.0184, 0.0),
    (-0.02, 0.1100, 0.3100, 0.22, 0.0, -18.0),
    (-0.02, 0.1600, 0.4100, -0.22, 0.0, 18.0),
    (0.01, 0.2100, 0.2500, 0.0, 0.35, 0.0),
    (0.01, 0.0460, 0.0460, 0.0, 0.1, 0.0),
    (0.01, 0.0460, 0.0460, 0.0, -0.1, 0.0),
    (0.01, 0.0460, 0.0230, -0.08, -0.605, 0.0),
    (0.01, 0.0230, 0.0230, 0.0, -0.606, 0.0),
    (0.01, 0.0230, 0.0460, 0.06, -0.605, 0.0),
];

/// Magnitude part: Shepp-Logan composition scaled to `[0, 1]`.
fn shepp_logan_magnitude(h: usize, w: usize) -> Vec<f64> {
    let mut mag = vec![0.0; h * w];
    for y in 0..h {
        // Pixel centers on [-1, 1]^2; image row 0 is the top (v = +1).
        let v = -((y as f64 + 0.5) / h as f64 * 2.0 - 1.0);
        for x in 0..w {
            let u = (x as f64 + 0.5) / w as f64 * 2.0 - 1.0;
            let mut val = 0.0;
            for &(a_int, ea, eb, x0, y0, phi_deg) in &SHEPP_LOGAN {
                let phi = phi_deg.to_radians();
                let (du, dv) = (u - x0, v - y0);
                let ru = du * phi.cos() + dv * phi.sin();
                let rv = -du * phi.sin() + dv * phi.cos();
                if (ru / ea) * (ru / ea) + (rv / eb) * (rv / eb) <= 1.0 {
                    val += a_int;
                }
            }
            mag[y * w + x] = val.max(0.0);
        }
    }
    let peak = mag.iter().cloned().fold(0.0f64, f64::max);
    if peak > 0.0 {
        for v in &mut mag {
            *v /= peak;
        }
    }
    mag
}

/// One localized Gaussian phase feature.
#[derive(Clone, Copy, Debug)]
pub struct PhaseBump {
    /// Center in pixels.
    pub cy: f64,
    pub cx: f64,
    /// Width in pixels.
    pub sigma: f64,
    /// Peak phase contribution in radians.
    pub amplitude: f64,
}

/// Phantom with explicit phase structure: quadratic polynomial coefficients
/// `[c0, cu, cv, cuu, cuv, cvv]` over normalized coordinates, plus Gaussian
/// bumps. The total phase is clamped to `[-pi, pi]`.
pub(crate) fn phantom_with_phase(
    h: usize,
    w: usize,
    quad: &[f64; 6],
    bumps: &[PhaseBump],
) -> ComplexTensor {
    let mag = shepp_logan_magnitude(h, w);
    let mut re = vec![0.0; h * w];
    let mut im = vec![0.0; h * w];
    for y in 0..h {
        let v = -((y as f64 + 0.5) / h as f64 * 2.0 - 1.0);
        for x in 0..w {
            let u = (x as f64 + 0.5) / w as f64 * 2.0 - 1.0;
            let mut phase =
                quad[0] + quad[1] * u + quad[2] * v + quad[3] * u * u + quad[4] * u * v
                    + quad[5] * v * v;
            for b in bumps {
                let dy = y as f64 - b.cy;
                let dx = x as f64 - b.cx;
                phase += b.amplitude * (-(dy * dy + dx * dx) / (2.0 * b.sigma * b.sigma)).exp();
            }
            phase = phase.clamp(-std::f64::consts::PI, std::f64::consts::PI);
            let m = mag[y * w + x];
            re[y * w + x] = m * phase.cos();
            im[y * w + x] = m * phase.sin();
        }
    }
    ComplexTensor::from_parts(vec![h, w], re, im).unwrap()
}

/// Shepp-Logan magnitude with a seed-drawn smooth quadratic phase and
/// `phase_detail` small Gaussian phase features.
pub fn generate_phantom(h: usize, w: usize, seed: u64, phase_detail: usize) -> ComplexTensor {
    let mut rng = Rng::new(derive_seed(seed, 0x9fa0));
    let mut quad = [0.0; 6];
    for c in &mut quad {
        *c = rng.range(-1.0, 1.0);
    }
    // Scale so the polynomial is bounded by an amplitude below pi/2 on the FOV.
    let amp = rng.range(0.4, std::f64::consts::FRAC_PI_2);
    let sum: f64 = quad.iter().map(|c| c.abs()).sum();
    if sum > 0.0 {
        for c in &mut quad {
            *c *= amp / sum;
        }
    }
    let bumps: Vec<PhaseBump> = (0..phase_detail)
        .map(|_| PhaseBump {
            cy: rng.range(0.15, 0.85) * h as f64,
            cx: rng.range(0.15, 0.85) * w as f64,
            sigma: rng.range(2.0, 5.0),
            amplitude: rng.range(0.2, std::f64::consts::FRAC_PI_2)
                * if rng.uniform() < 0.5 { -1.0 } else { 1.0 },
        })
        .collect();
    phantom_with_phase(h, w, &quad, &bumps)
}

// ---------------------------------------------------------------------------
// Coil sensitivity maps.
// ---------------------------------------------------------------------------

/// Analytic coil maps: Gaussian magnitude falloff from coil centers placed on
/// a ring outside the FOV, a smooth linear phase ramp per coil, normalized
/// pixelwise so `sum_c |S_c|^2 = 1`.
pub fn generate_maps(h: usize, w: usize, coils: usize, seed: u64) -> ComplexTensor {
    assert!(coils >= 1, "coils must be >= 1");
    let mut rng = Rng::new(derive_seed(seed, 0x3a95));
    let side = h.max(w) as f64;
    let ring = 0.75 * side;
    let sigma = 0.55 * side;
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let mut maps = ComplexTensor::zeros(&[coils, h, w]);
    let plane = h * w;
    {
        let (re, im) = maps.planes_mut();
        for c in 0..coils {
            let theta = std::f64::consts::TAU * c as f64 / coils as f64;
            let (coil_y, coil_x) = (cy + ring * theta.sin(), cx + ring * theta.cos());
            let gy = rng.range(-0.03, 0.03);
            let gx = rng.range(-0.03, 0.03);
            let phi0 = theta + rng.range(-0.5, 0.5);
            for y in 0..h {
                for x in 0..w {
                    let d2 = (y as f64 - coil_y).powi(2) + (x as f64 - coil_x).powi(2);
                    let mag = (-d2 / (2.0 * sigma * sigma)).exp();
                    let phase = phi0 + gy * (y as f64 - cy) + gx * (x as f64 - cx);
                    re[c * plane + y * w + x] = mag * phase.cos();
                    im[c * plane + y * w + x] = mag * phase.sin();
                }
            }
        }
        for t in 0..plane {
            let mut norm = 0.0;
            for c in 0..coils {
                let idx = c * plane + t;
                norm += re[idx] * re[idx] + im[idx] * im[idx];
            }
            let inv = 1.0 / norm.sqrt();
            for c in 0..coils {
                let idx = c * plane + t;
                re[idx] *= inv;
                im[idx] *= inv;
            }
        }
    }
    maps
}

// ---------------------------------------------------------------------------
// Variable-density Poisson-disc mask.
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug)]
pub struct MaskSpec {
    pub h: usize,
    pub w: usize,
    /// Target acceleration `H*W / samples`; 1 degenerates to a full mask.
    pub accel_target: f64,
    /// Side of the fully-sampled center square.
    pub calib: usize,
    /// Exponent of the radius growth law away from the k-space center.
    pub density_power: f64,
    pub seed: u64,
}

impl MaskSpec {
    fn validate(&self) -> Result<()> {
        if self.calib > self.h.min(self.w) {
            return Err(Error::InfeasibleMask(format!(
                "calibration {} exceeds min dimension {}",
                self.calib,
                self.h.min(self.w)
            )));
        }
        if self.accel_target < 1.0 {
            return Err(Error::InfeasibleMask(format!(
                "acceleration target {} below 1",
                self.accel_target
            )));
        }
        Ok(())
    }

    fn calib_bounds(&self) -> (usize, usize, usize, usize) {
        let y0 = (self.h - self.calib) / 2;
        let x0 = (self.w - self.calib) / 2;
        (y0, y0 + self.calib, x0, x0 + self.calib)
    }

    /// Local minimum-distance radius at (y, x) for base radius `r0`.
    fn radius(&self, r0: f64, y: f64, x: f64) -> f64 {
        let cy = (self.h / 2) as f64;
        let cx = (self.w / 2) as f64;
        let rho = ((y - cy).powi(2) + (x - cx).powi(2)).sqrt();
        let rho_max = (cy.max(self.h as f64 - cy).powi(2)
            + cx.max(self.w as f64 - cx).powi(2))
        .sqrt();
        r0 * (1.0 + rho / rho_max).powf(self.density_power)
    }
}

/// Bridson dart throwing at a fixed base radius. Returns the mask.
fn poisson_points(spec: &MaskSpec, r0: f64) -> Vec<f64> {
    let (h, w) = (spec.h, spec.w);
    let (cy0, cy1, cx0, cx1) = spec.calib_bounds();
    let in_calib = |y: usize, x: usize| y >= cy0 && y < cy1 && x >= cx0 && x < cx1;
    let mut rng = Rng::new(spec.seed);
    let mut mask = vec![0.0; h * w];
    for y in cy0..cy1 {
        for x in cx0..cx1 {
            mask[y * w + x] = 1.0;
        }
    }
    // Occupied cells outside calibration, with their local radii.
    let mut occupied: Vec<f64> = vec![0.0; h * w]; // radius if sampled, else 0
    let mut points: Vec<(usize, usize)> = Vec::new();
    // Launch the dart throwing from the calibration perimeter so growth
    // starts at the edge of the fully-sampled square and floods outward
    // (candidates spawn within twice the local radius of their parent, so a
    // seed buried at the center could never escape a wide calibration).
    let mut active: Vec<(f64, f64)> = Vec::new();
    if spec.calib > 0 {
        for y in cy0..cy1 {
            for x in cx0..cx1 {
                if y == cy0 || y + 1 == cy1 || x == cx0 || x + 1 == cx1 {
                    active.push((y as f64, x as f64));
                }
            }
        }
    } else {
        active.push(((h / 2) as f64, (w / 2) as f64));
    }
    while let Some(pick) = (!active.is_empty()).then(|| rng.below(active.len())) {
        let (py, px) = active[pick];
        let rp = spec.radius(r0, py, px).max(0.5);
        let mut found = false;
        for _ in 0..30 {
            let rad = rp * (1.0 + rng.uniform());
            let ang = std::f64::consts::TAU * rng.uniform();
            let fy = py + rad * ang.sin();
            let fx = px + rad * ang.cos();
            let (yy, xx) = (fy.round(), fx.round());
            if yy < 0.0 || xx < 0.0 || yy >= h as f64 || xx >= w as f64 {
                continue;
            }
            let (y, x) = (yy as usize, xx as usize);
            if in_calib(y, x) || occupied[y * w + x] > 0.0 {
                continue;
            }
            let rc = spec.radius(r0, yy, xx);
            let win = rc.ceil() as isize;
            let mut ok = true;
            'scan: for ny in (y as isize - win).max(0)..=(y as isize + win).min(h as isize - 1) {
                for nx in (x as isize - win).max(0)..=(x as isize + win).min(w as isize - 1) {
                    let rq = occupied[ny as usize * w + nx as usize];
                    if rq > 0.0 {
                        let d = (((ny - y as isize) * (ny - y as isize)
                            + (nx - x as isize) * (nx - x as isize)) as f64)
                            .sqrt();
                        if d < rc.min(rq) {
                            ok = false;
                            break 'scan;
                        }
                    }
                }
            }
            if ok {
                occupied[y * w + x] = rc;
                mask[y * w + x] = 1.0;
                points.push((y, x));
                active.push((yy, xx));
                found = true;
            }
        }
        if !found {
            active.swap_remove(pick);
        }
    }
    mask
}

/// Acceleration of a binary mask: total locations over sampled locations.
pub fn mask_acceleration(mask: &ComplexTensor) -> f64 {
    let samples: f64 = mask.re().iter().sum();
    mask.numel() as f64 / samples
}

/// Variable-density Poisson-disc mask plus the tuned base radius.
///
/// The achieved sample count of a dart-throwing run is a noisy step function
/// of the base radius, so the radius is bisected until the run lands at or
/// just above the sample budget, and the small excess is then thinned away at
/// random. Thinning only removes samples, so the minimum-distance rule at the
/// returned radius still holds, and the achieved acceleration lands within
/// the +/- 5% contract (a full mask with radius 0 when the target is 1).
pub fn poisson_mask_with_radius(spec: &MaskSpec) -> Result<(ComplexTensor, f64)> {
    spec.validate()?;
    let (h, w) = (spec.h, spec.w);
    if spec.accel_target <= 1.0 + 1e-9 {
        return Ok((
            ComplexTensor::from_real(vec![h, w], vec![1.0; h * w])?,
            0.0,
        ));
    }
    let target = spec.accel_target;
    let needed = ((h * w) as f64 / target).round() as usize;
    if needed < spec.calib * spec.calib {
        return Err(Error::InfeasibleMask(format!(
            "target {target} needs {needed} samples but the calibration square alone has {}",
            spec.calib * spec.calib
        )));
    }
    let count_of = |m: &[f64]| -> usize { m.iter().map(|&v| v as usize).sum() };
    // Bracket: lo keeps at least `needed` samples, hi runs short.
    let mut lo = 0.05;
    let lo_mask = poisson_points(spec, lo);
    if count_of(&lo_mask) < needed {
        return Err(Error::InfeasibleMask(format!(
            "target {target} too dense for the grid spacing"
        )));
    }
    let mut best = (lo_mask, lo);
    let mut hi = 1.0;
    let mut steps = 0;
    loop {
        let mask = poisson_points(spec, hi);
        let c = count_of(&mask);
        if c < needed {
            break;
        }
        best = (mask, hi);
        lo = hi;
        hi *= 2.0;
        steps += 1;
        if steps > 20 {
            return Err(Error::InfeasibleMask(format!(
                "target {target} unreachable: radius growth never thinned the samples"
            )));
        }
    }
    for _ in 0..50 {
        if hi - lo < 1e-4 {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let mask = poisson_points(spec, mid);
        if count_of(&mask) >= needed {
            best = (mask, mid);
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let (mut mask, r0) = best;
    // Thin the excess outside the calibration square.
    let (cy0, cy1, cx0, cx1) = spec.calib_bounds();
    let mut removable: Vec<usize> = (0..h * w)
        .filter(|&t| {
            let (y, x) = (t / w, t % w);
            mask[t] == 1.0 && !(y >= cy0 && y < cy1 && x >= cx0 && x < cx1)
        })
        .collect();
    let excess = count_of(&mask) - needed;
    if excess > removable.len() {
        return Err(Error::InfeasibleMask(format!(
            "cannot thin {excess} samples, only {} outside calibration",
            removable.len()
        )));
    }
    let mut rng = Rng::new(derive_seed(spec.seed, 0x7417));
    rng.shuffle(&mut removable);
    for &t in removable.iter().take(excess) {
        mask[t] = 0.0;
    }
    let mask = ComplexTensor::from_real(vec![h, w], mask)?;
    let achieved = mask_acceleration(&mask);
    if (achieved - target).abs() > 0.05 * target {
        return Err(Error::InfeasibleMask(format!(
            "achieved acceleration {achieved:.3} outside {target} +/- 5%"
        )));
    }
    Ok((mask, r0))
}

pub fn poisson_mask(spec: &MaskSpec) -> Result<ComplexTensor> {
    poisson_mask_with_radius(spec).map(|(mask, _)| mask)
}

/// Audit a mask against its spec: binary values, fully-sampled calibration
/// square, achieved acceleration within 5%, and (when the tuned base radius
/// is known) the all-pairs minimum-distance rule outside calibration.
pub fn audit_mask(mask: &ComplexTensor, spec: &MaskSpec, r0: Option<f64>) -> Vec<String> {
    let mut violations = Vec::new();
    let (h, w) = (spec.h, spec.w);
    if mask.shape() != [h, w] {
        violations.push(format!("mask shape {:?} != [{h}, {w}]", mask.shape()));
        return violations;
    }
    for (i, &v) in mask.re().iter().enumerate() {
        if v != 0.0 && v != 1.0 {
            violations.push(format!("mask[{i}] = {v} is not binary"));
            return violations;
        }
    }
    let (cy0, cy1, cx0, cx1) = spec.calib_bounds();
    for y in cy0..cy1 {
        for x in cx0..cx1 {
            if mask.re()[y * w + x] != 1.0 {
                violations.push(format!("calibration cell ({y}, {x}) not sampled"));
            }
        }
    }
    let accel = mask_acceleration(mask);
    if spec.accel_target > 1.0 + 1e-9
        && (accel - spec.accel_target).abs() > 0.05 * spec.accel_target
    {
        violations.push(format!(
            "achieved acceleration {accel:.3} outside {} +/- 5%",
            spec.accel_target
        ));
    }
    if let Some(r0) = r0 {
        if !check_min_distance(mask, spec, r0) {
            violations.push(format!(
                "two samples outside calibration are closer than the local radius (r0 = {r0})"
            ));
        }
    }
    violations
}

/// All-pairs check that no two samples outside calibration sit closer than
/// the local radius law at base radius `r0`.
pub fn check_min_distance(mask: &ComplexTensor, spec: &MaskSpec, r0: f64) -> bool {
    let (h, w) = (spec.h, spec.w);
    let (cy0, cy1, cx0, cx1) = spec.calib_bounds();
    let samples: Vec<(usize, usize)> = (0..h * w)
        .filter(|&t| mask.re()[t] == 1.0)
        .map(|t| (t / w, t % w))
        .filter(|&(y, x)| !(y >= cy0 && y < cy1 && x >= cx0 && x < cx1))
        .collect();
    for (i, &(y1, x1)) in samples.iter().enumerate() {
        let r1 = spec.radius(r0, y1 as f64, x1 as f64);
        for &(y2, x2) in &samples[i + 1..] {
            let r2 = spec.radius(r0, y2 as f64, x2 as f64);
            let d = ((y1 as f64 - y2 as f64).powi(2) + (x1 as f64 - x2 as f64).powi(2)).sqrt();
            if d < r1.min(r2) - 1e-9 {
                return false;
            }
        }
    }
    true
}

// ---------------------------------------------------------------------------
// SENSE operators.
// ---------------------------------------------------------------------------

fn check_sense_shapes(
    maps: &ComplexTensor,
    mask: &ComplexTensor,
    image: Option<&ComplexTensor>,
    kspace: Option<&ComplexTensor>,
) -> Result<(usize, usize, usize)> {
    if maps.shape().len() != 3 {
        return Err(Error::RankMismatch {
            context: "sense maps",
            got: maps.shape().len(),
            expected: 3,
        });
    }
    let (c, h, w) = (maps.shape()[0], maps.shape()[1], maps.shape()[2]);
    if mask.shape() != [h, w] {
        return Err(Error::ShapeMismatch {
            context: "sense mask",
            axis: 0,
            got: mask.shape()[0],
            expected: h,
        });
    }
    if let Some(img) = image {
        if img.shape() != [h, w] {
            return Err(Error::ShapeMismatch {
                context: "sense image",
                axis: 0,
                got: img.shape()[0],
                expected: h,
            });
        }
    }
    if let Some(k) = kspace {
        if k.shape() != [c, h, w] {
            return Err(Error::ShapeMismatch {
                context: "sense kspace",
                axis: 0,
                got: k.shape()[0],
                expected: c,
            });
        }
    }
    Ok((c, h, w))
}

/// SENSE forward operator `A`: coilwise sensitivity multiply, centered
/// orthonormal FFT, sampling-mask restriction.
pub fn sense_forward(
    image: &ComplexTensor,
    maps: &ComplexTensor,
    mask: &ComplexTensor,
) -> Result<ComplexTensor> {
    let (c, h, w) = check_sense_shapes(maps, mask, Some(image), None)?;
    let plane = h * w;
    let mut out = ComplexTensor::zeros(&[c, h, w]);
    let (ore, oim) = out.planes_mut();
    for ci in 0..c {
        let (mre, mim) = (
            &maps.re()[ci * plane..(ci + 1) * plane],
            &maps.im()[ci * plane..(ci + 1) * plane],
        );
        let (tre, tim) = (
            &mut ore[ci * plane..(ci + 1) * plane],
            &mut oim[ci * plane..(ci + 1) * plane],
        );
        for t in 0..plane {
            tre[t] = mre[t] * image.re()[t] - mim[t] * image.im()[t];
            tim[t] = mim[t] * image.re()[t] + mre[t] * image.im()[t];
        }
        fft2c_plane(tre, tim, h, w, false);
        for t in 0..plane {
            tre[t] *= mask.re()[t];
            tim[t] *= mask.re()[t];
        }
    }
    Ok(out)
}

/// SENSE adjoint `A^H`: mask, inverse FFT, conjugate-map multiply, coil sum.
pub fn sense_adjoint(
    kspace: &ComplexTensor,
    maps: &ComplexTensor,
    mask: &ComplexTensor,
) -> Result<ComplexTensor> {
    let (c, h, w) = check_sense_shapes(maps, mask, None, Some(kspace))?;
    let plane = h * w;
    let mut out = ComplexTensor::zeros(&[h, w]);
    let mut sre = vec![0.0; plane];
    let mut sim = vec![0.0; plane];
    for ci in 0..c {
        for t in 0..plane {
            sre[t] = kspace.re()[ci * plane + t] * mask.re()[t];
            sim[t] = kspace.im()[ci * plane + t] * mask.re()[t];
        }
        fft2c_plane(&mut sre, &mut sim, h, w, true);
        let (mre, mim) = (
            &maps.re()[ci * plane..(ci + 1) * plane],
            &maps.im()[ci * plane..(ci + 1) * plane],
        );
        let (ore, oim) = out.planes_mut();
        for t in 0..plane {
            // conj(S_c) * x
            ore[t] += mre[t] * sre[t] + mim[t] * sim[t];
            oim[t] += mre[t] * sim[t] - mim[t] * sre[t];
        }
    }
    Ok(out)
}

/// `A^H A` applied to an image (used by the data-consistency backward pass
/// and the operator-norm estimate).
pub fn sense_normal(
    image: &ComplexTensor,
    maps: &ComplexTensor,
    mask: &ComplexTensor,
) -> Result<ComplexTensor> {
    sense_adjoint(&sense_forward(image, maps, mask)?, maps, mask)
}

/// Power-iteration estimate of the largest singular value of `A`.
pub fn operator_norm_estimate(
    maps: &ComplexTensor,
    mask: &ComplexTensor,
    iterations: usize,
    seed: u64,
) -> Result<f64> {
    let (_, h, w) = check_sense_shapes(maps, mask, None, None)?;
    let mut rng = Rng::new(seed);
    let n = h * w;
    let mut x = ComplexTensor::from_parts(
        vec![h, w],
        (0..n).map(|_| rng.range(-1.0, 1.0)).collect(),
        (0..n).map(|_| rng.range(-1.0, 1.0)).collect(),
    )?;
    let mut lambda = 0.0;
    for _ in 0..iterations {
        let y = sense_normal(&x, maps, mask)?;
        lambda = y.dot_real(&x)? / x.norm2_sq();
        let norm = y.norm2();
        if norm == 0.0 {
            return Ok(0.0);
        }
        x = y.scale(crate::tensor::Complex::new(1.0 / norm, 0.0));
    }
    Ok(lambda.max(0.0).sqrt())
}

/// SENSE forward plus i.i.d. complex Gaussian noise (std `noise_sigma` per
/// real component) at the sampled locations only.
pub fn simulate_acquisition(
    image: &ComplexTensor,
    maps: &ComplexTensor,
    mask: &ComplexTensor,
    noise_sigma: f64,
    seed: u64,
) -> Result<ComplexTensor> {
    let mut kspace = sense_forward(image, maps, mask)?;
    if noise_sigma > 0.0 {
        let (c, plane) = (kspace.shape()[0], mask.numel());
        let mut rng = Rng::new(seed);
        let (re, im) = kspace.planes_mut();
        for ci in 0..c {
            for t in 0..plane {
                if mask.re()[t] != 0.0 {
                    re[ci * plane + t] += noise_sigma * rng.normal();
                    im[ci * plane + t] += noise_sigma * rng.normal();
                }
            }
        }
    }
    Ok(kspace)
}

// ---------------------------------------------------------------------------
// Examples and datasets.
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct ExampleMeta {
    pub index: usize,
    pub phantom_seed: u64,
    pub maps_seed: u64,
    pub mask_seed: u64,
    pub noise_seed: u64,
    pub noise_sigma: f64,
    pub accel_target: f64,
    pub accel_achieved: f64,
    /// Tuned Poisson-disc base radius (0 for a full mask).
    pub mask_r0: f64,
    pub coils: usize,
    pub calib: usize,
    pub density_power: f64,
    pub phase_detail: usize,
}

#[derive(Clone, Debug)]
pub struct AcquisitionExample {
    pub image: ComplexTensor,
    pub maps: ComplexTensor,
    pub mask: ComplexTensor,
    pub kspace_u: ComplexTensor,
    pub meta: ExampleMeta,
}

#[derive(Clone, Debug)]
pub struct DatasetSpec {
    pub n: usize,
    pub size: usize,
    pub coils: usize,
    /// Acceleration target, or a range sampled per example.
    pub accel_lo: f64,
    pub accel_hi: f64,
    pub calib: usize,
    pub density_power: f64,
    pub snr_db: f64,
    pub phase_detail: usize,
    pub seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            n: 200,
            size: 64,
            coils: 8,
            accel_lo: 4.0,
            accel_hi: 4.0,
            calib: 12,
            density_power: 2.0,
            snr_db: 30.0,
            phase_detail: 10,
            seed: 1,
        }
    }
}

/// Round every value through f32, matching what the container stores.
fn quantize_f32(t: &ComplexTensor) -> ComplexTensor {
    let re = t.re().iter().map(|&v| (v as f32) as f64).collect();
    let im = t.im().iter().map(|&v| (v as f32) as f64).collect();
    ComplexTensor::from_parts(t.shape().to_vec(), re, im).unwrap()
}

/// Build one self-consistent example. The image, maps and mask are quantized
/// to container precision before the k-space is simulated.
pub fn make_example(spec: &DatasetSpec, index: usize) -> Result<AcquisitionExample> {
    let ex_seed = derive_seed(spec.seed, index as u64);
    let phantom_seed = derive_seed(ex_seed, 1);
    let maps_seed = derive_seed(ex_seed, 2);
    let mask_seed = derive_seed(ex_seed, 3);
    let noise_seed = derive_seed(ex_seed, 4);
    let (h, w) = (spec.size, spec.size);
    let accel_target = if spec.accel_hi > spec.accel_lo {
        let mut rng = Rng::new(derive_seed(ex_seed, 5));
        rng.range(spec.accel_lo, spec.accel_hi)
    } else {
        spec.accel_lo
    };
    let image = quantize_f32(&generate_phantom(h, w, phantom_seed, spec.phase_detail));
    let maps = quantize_f32(&generate_maps(h, w, spec.coils, maps_seed));
    let (mask, mask_r0) = poisson_mask_with_radius(&MaskSpec {
        h,
        w,
        accel_target,
        calib: spec.calib,
        density_power: spec.density_power,
        seed: mask_seed,
    })?;
    // Mean signal power per sampled complex entry sets the noise level.
    let clean = sense_forward(&image, &maps, &mask)?;
    let sampled: f64 = mask.re().iter().sum::<f64>() * spec.coils as f64;
    let p_signal = clean.norm2_sq() / sampled;
    let noise_sigma = if spec.snr_db.is_finite() {
        (p_signal / (2.0 * 10f64.powf(spec.snr_db / 10.0))).sqrt()
    } else {
        0.0
    };
    let kspace_u = simulate_acquisition(&image, &maps, &mask, noise_sigma, noise_seed)?;
    Ok(AcquisitionExample {
        meta: ExampleMeta {
            index,
            phantom_seed,
            maps_seed,
            mask_seed,
            noise_seed,
            noise_sigma,
            accel_target,
            accel_achieved: mask_acceleration(&mask),
            mask_r0,
            coils: spec.coils,
            calib: spec.calib,
            density_power: spec.density_power,
            phase_detail: spec.phase_detail,
        },
        image,
        maps,
        mask,
        kspace_u,
    })
}

fn meta_pairs(m: &ExampleMeta) -> Vec<(String, String)> {
    vec![
        ("index".into(), m.index.to_string()),
        ("phantom_seed".into(), m.phantom_seed.to_string()),
        ("maps_seed".into(), m.maps_seed.to_string()),
        ("mask_seed".into(), m.mask_seed.to_string()),
        ("noise_seed".into(), m.noise_seed.to_string()),
        // f64 Display round-trips exactly.
        ("noise_sigma".into(), format!("{}", m.noise_sigma)),
        ("accel_target".into(), format!("{}", m.accel_target)),
        ("accel_achieved".into(), format!("{}", m.accel_achieved)),
        ("mask_r0".into(), format!("{}", m.mask_r0)),
        ("coils".into(), m.coils.to_string()),
        ("calib".into(), m.calib.to_string()),
        ("density_power".into(), format!("{}", m.density_power)),
        ("phase_detail".into(), m.phase_detail.to_string()),
    ]
}

fn parse_meta(map: &std::collections::BTreeMap<String, String>) -> Result<ExampleMeta> {
    let get = |k: &str| -> Result<&String> {
        map.get(k)
            .ok_or_else(|| Error::Data(format!("meta missing key '{k}'")))
    };
    Ok(ExampleMeta {
        index: get("index")?.parse().map_err(|_| Error::Data("bad index".into()))?,
        phantom_seed: get("phantom_seed")?.parse().map_err(|_| Error::Data("bad seed".into()))?,
        maps_seed: get("maps_seed")?.parse().map_err(|_| Error::Data("bad seed".into()))?,
        mask_seed: get("mask_seed")?.parse().map_err(|_| Error::Data("bad seed".into()))?,
        noise_seed: get("noise_seed")?.parse().map_err(|_| Error::Data("bad seed".into()))?,
        noise_sigma: get("noise_sigma")?.parse().map_err(|_| Error::Data("bad sigma".into()))?,
        accel_target: get("accel_target")?.parse().map_err(|_| Error::Data("bad accel".into()))?,
        accel_achieved: get("accel_achieved")?.parse().map_err(|_| Error::Data("bad accel".into()))?,
        mask_r0: get("mask_r0")?.parse().map_err(|_| Error::Data("bad radius".into()))?,
        coils: get("coils")?.parse().map_err(|_| Error::Data("bad coils".into()))?,
        calib: get("calib")?.parse().map_err(|_| Error::Data("bad calib".into()))?,
        density_power: get("density_power")?.parse().map_err(|_| Error::Data("bad power".into()))?,
        phase_detail: get("phase_detail")?.parse().map_err(|_| Error::Data("bad detail".into()))?,
    })
}

pub fn write_example(dir: &Path, ex: &AcquisitionExample) -> Result<()> {
    io::create_dir(dir)?;
    io::write_cxt(&dir.join("image.cxt"), &ex.image, false)?;
    io::write_cxt(&dir.join("maps.cxt"), &ex.maps, false)?;
    io::write_cxt(&dir.join("mask.cxt"), &ex.mask, true)?;
    io::write_cxt(&dir.join("kspace.cxt"), &ex.kspace_u, false)?;
    io::write_kv_file(&dir.join("meta.txt"), &meta_pairs(&ex.meta))
}

pub fn load_example(dir: &Path) -> Result<AcquisitionExample> {
    let (image, _) = io::read_cxt(&dir.join("image.cxt"))?;
    let (maps, _) = io::read_cxt(&dir.join("maps.cxt"))?;
    let (mask, _) = io::read_cxt(&dir.join("mask.cxt"))?;
    let (kspace_u, _) = io::read_cxt(&dir.join("kspace.cxt"))?;
    let meta = parse_meta(&io::read_kv_file(&dir.join("meta.txt"))?)?;
    Ok(AcquisitionExample {
        image,
        maps,
        mask,
        kspace_u,
        meta,
    })
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub root: PathBuf,
    pub train: Vec<PathBuf>,
    pub val: Vec<PathBuf>,
    pub test: Vec<PathBuf>,
}

impl Dataset {
    pub fn open(root: &Path) -> Result<Dataset> {
        let read_split = |name: &str| -> Result<Vec<PathBuf>> {
            let text = io::read_text(&root.join(name))?;
            Ok(text
                .lines()
                .filter(|l| !l.trim().is_empty())
                .map(|l| root.join(l.trim()))
                .collect())
        };
        Ok(Dataset {
            root: root.to_path_buf(),
            train: read_split("train.txt")?,
            val: read_split("val.txt")?,
            test: read_split("test.txt")?,
        })
    }
}

/// Generate `spec.n` examples under `out` with 80/10/10 split manifests.
pub fn generate_dataset(spec: &DatasetSpec, out: &Path) -> Result<Dataset> {
    use rayon::prelude::*;
    io::create_dir(out)?;
    let names: Vec<String> = (0..spec.n).map(|i| format!("ex{i:05}")).collect();
    names
        .par_iter()
        .enumerate()
        .map(|(i, name)| {
            let ex = make_example(spec, i)?;
            write_example(&out.join(name), &ex)
        })
        .collect::<Result<Vec<_>>>()?;
    let n_val = spec.n / 10;
    let n_test = spec.n / 10;
    let n_train = spec.n - n_val - n_test;
    let join = |xs: &[String]| {
        let mut s = xs.join("\n");
        if !s.is_empty() {
            s.push('\n');
        }
        s
    };
    io::write_text(&out.join("train.txt"), &join(&names[..n_train]))?;
    io::write_text(&out.join("val.txt"), &join(&names[n_train..n_train + n_val]))?;
    io::write_text(&out.join("test.txt"), &join(&names[n_train + n_val..]))?;
    let pairs = vec![
        ("n".into(), spec.n.to_string()),
        ("size".into(), spec.size.to_string()),
        ("coils".into(), spec.coils.to_string()),
        ("accel_lo".into(), format!("{}", spec.accel_lo)),
        ("accel_hi".into(), format!("{}", spec.accel_hi)),
        ("calib".into(), spec.calib.to_string()),
        ("density_power".into(), format!("{}", spec.density_power)),
        ("snr_db".into(), format!("{}", spec.snr_db)),
        ("phase_detail".into(), spec.phase_detail.to_string()),
        ("seed".into(), spec.seed.to_string()),
    ];
    io::write_kv_file(&out.join("dataset.txt"), &pairs)?;
    Dataset::open(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Complex;

    #[test]
    fn phantom_bounds_and_determinism() {
        let a = generate_phantom(32, 32, 7, 3);
        let b = generate_phantom(32, 32, 7, 3);
        assert_eq!(a, b);
        let c = generate_phantom(32, 32, 8, 3);
        assert_ne!(a, c);
        let mag = a.magnitude();
        let phase = a.phase();
        for t in 0..a.numel() {
            assert!((0.0..=1.0 + 1e-12).contains(&mag.re()[t]));
            assert!(phase.re()[t].abs() <= std::f64::consts::PI + 1e-12);
        }
    }

    #[test]
    fn phantom_zero_phase_is_purely_real() {
        let p = phantom_with_phase(24, 24, &[0.0; 6], &[]);
        assert!(p.is_real_only());
        assert!(p.re().iter().any(|&v| v > 0.0));
    }

    #[test]
    fn maps_normalized_and_smooth() {
        let maps = generate_maps(64, 64, 8, 3);
        let plane = 64 * 64;
        for t in 0..plane {
            let mut s = 0.0;
            for c in 0..8 {
                s += maps.re()[c * plane + t].powi(2) + maps.im()[c * plane + t].powi(2);
            }
            assert!((s - 1.0).abs() <= 1e-10, "norm residual {}", (s - 1.0).abs());
        }
        // Finite-difference smoothness bound.
        let mut worst: f64 = 0.0;
        for c in 0..8 {
            for y in 0..64 {
                for x in 0..63 {
                    let a = maps.at(c * plane + y * 64 + x);
                    let b = maps.at(c * plane + y * 64 + x + 1);
                    worst = worst.max((a - b).abs());
                }
            }
            for y in 0..63 {
                for x in 0..64 {
                    let a = maps.at(c * plane + y * 64 + x);
                    let b = maps.at(c * plane + (y + 1) * 64 + x);
                    worst = worst.max((a - b).abs());
                }
            }
        }
        assert!(worst <= 0.2, "max map gradient {worst}");
    }

    #[test]
    fn single_coil_maps_have_unit_modulus() {
        let maps = generate_maps(16, 16, 1, 5);
        for t in 0..maps.numel() {
            assert!((maps.at(t).abs() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn poisson_mask_contract() {
        let spec = MaskSpec {
            h: 64,
            w: 64,
            accel_target: 4.0,
            calib: 12,
            density_power: 2.0,
            seed: 7,
        };
        let (mask, r0) = poisson_mask_with_radius(&spec).unwrap();
        let accel = mask_acceleration(&mask);
        assert!((3.8..=4.2).contains(&accel), "accel {accel}");
        assert!(audit_mask(&mask, &spec, Some(r0)).is_empty());
        assert!(check_min_distance(&mask, &spec, r0));
        // Determinism.
        assert_eq!(mask, poisson_mask(&spec).unwrap());
    }

    #[test]
    fn poisson_mask_degenerate_full() {
        let spec = MaskSpec {
            h: 16,
            w: 16,
            accel_target: 1.0,
            calib: 4,
            density_power: 2.0,
            seed: 1,
        };
        let mask = poisson_mask(&spec).unwrap();
        assert!(mask.re().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn poisson_mask_infeasible_target() {
        // Calibration alone forces acceleration below the target.
        let spec = MaskSpec {
            h: 16,
            w: 16,
            accel_target: 9.0,
            calib: 14,
            density_power: 2.0,
            seed: 1,
        };
        assert!(matches!(poisson_mask(&spec), Err(Error::InfeasibleMask(_))));
    }

    #[test]
    fn sense_adjoint_inverts_unitary_case() {
        // Full mask, single coil: A is unitary, so A^H A = I.
        let image = generate_phantom(16, 16, 3, 2);
        let maps = generate_maps(16, 16, 1, 4);
        let mask = ComplexTensor::from_real(vec![16, 16], vec![1.0; 256]).unwrap();
        let k = sense_forward(&image, &maps, &mask).unwrap();
        let back = sense_adjoint(&k, &maps, &mask).unwrap();
        for t in 0..image.numel() {
            assert!((back.at(t) - image.at(t)).abs() < 1e-12);
        }
    }

    #[test]
    fn sense_adjoint_identity_inner_product() {
        let mut rng = Rng::new(17);
        for trial in 0..5 {
            let h = 8;
            let maps = generate_maps(h, h, 4, 100 + trial);
            let spec = MaskSpec {
                h,
                w: h,
                accel_target: 2.0,
                calib: 2,
                density_power: 2.0,
                seed: 200 + trial,
            };
            let mask = poisson_mask(&spec).unwrap();
            let n = h * h;
            let x = ComplexTensor::from_parts(
                vec![h, h],
                (0..n).map(|_| rng.range(-1.0, 1.0)).collect(),
                (0..n).map(|_| rng.range(-1.0, 1.0)).collect(),
            )
            .unwrap();
            let y = ComplexTensor::from_parts(
                vec![4, h, h],
                (0..4 * n).map(|_| rng.range(-1.0, 1.0)).collect(),
                (0..4 * n).map(|_| rng.range(-1.0, 1.0)).collect(),
            )
            .unwrap();
            let ax = sense_forward(&x, &maps, &mask).unwrap();
            let ahy = sense_adjoint(&y, &maps, &mask).unwrap();
            let lhs = ax.inner(&y).unwrap();
            let rhs = x.inner(&ahy).unwrap();
            assert!((lhs.re - rhs.re).abs() < 1e-10, "re {} {}", lhs.re, rhs.re);
            assert!((lhs.im - rhs.im).abs() < 1e-10);
        }
    }

    #[test]
    fn sense_forward_matches_dense_operator() {
        // Build A as a dense matrix on a 4x4 single-coil instance by pushing
        // unit vectors through, then compare A x against the dense product.
        let h = 4;
        let n = h * h;
        let maps = generate_maps(h, h, 1, 9);
        let spec = MaskSpec {
            h,
            w: h,
            accel_target: 1.0,
            calib: 2,
            density_power: 2.0,
            seed: 5,
        };
        let mask = poisson_mask(&spec).unwrap();
        let mut columns = Vec::with_capacity(n);
        for j in 0..n {
            let mut e = ComplexTensor::zeros(&[h, h]);
            e.set(j, Complex::ONE);
            columns.push(sense_forward(&e, &maps, &mask).unwrap());
        }
        let mut rng = Rng::new(31);
        let x = ComplexTensor::from_parts(
            vec![h, h],
            (0..n).map(|_| rng.range(-1.0, 1.0)).collect(),
            (0..n).map(|_| rng.range(-1.0, 1.0)).collect(),
        )
        .unwrap();
        let fast = sense_forward(&x, &maps, &mask).unwrap();
        let mut dense = ComplexTensor::zeros(&[1, h, h]);
        for j in 0..n {
            for t in 0..n {
                let v = dense.at(t) + columns[j].at(t) * x.at(j);
                dense.set(t, v);
            }
        }
        for t in 0..n {
            assert!((fast.at(t) - dense.at(t)).abs() < 1e-12);
        }
    }

    #[test]
    fn operator_norm_at_most_one() {
        let maps = generate_maps(32, 32, 6, 11);
        let spec = MaskSpec {
            h: 32,
            w: 32,
            accel_target: 3.0,
            calib: 8,
            density_power: 2.0,
            seed: 13,
        };
        let mask = poisson_mask(&spec).unwrap();
        let est = operator_norm_estimate(&maps, &mask, 40, 3).unwrap();
        assert!(est <= 1.0 + 1e-6, "norm estimate {est}");
        assert!(est > 0.5);
    }

    #[test]
    fn noise_statistics_and_zero_cases() {
        let image = generate_phantom(32, 32, 1, 2);
        let maps = generate_maps(32, 32, 8, 2);
        let mask = ComplexTensor::from_real(vec![32, 32], vec![1.0; 1024]).unwrap();
        let clean = simulate_acquisition(&image, &maps, &mask, 0.0, 9).unwrap();
        let fwd = sense_forward(&image, &maps, &mask).unwrap();
        assert_eq!(clean, fwd);
        let sigma = 0.05;
        let noisy = simulate_acquisition(&image, &maps, &mask, sigma, 9).unwrap();
        let mut sq = 0.0;
        let n = noisy.numel();
        for t in 0..n {
            let d = noisy.at(t) - fwd.at(t);
            sq += d.re * d.re + d.im * d.im;
        }
        let std = (sq / (2.0 * n as f64)).sqrt();
        assert!(
            (std - sigma).abs() < 0.05 * sigma,
            "std {std} vs sigma {sigma}"
        );
    }

    #[test]
    fn unsampled_locations_are_zero() {
        let spec = MaskSpec {
            h: 32,
            w: 32,
            accel_target: 4.0,
            calib: 8,
            density_power: 2.0,
            seed: 3,
        };
        let mask = poisson_mask(&spec).unwrap();
        let image = generate_phantom(32, 32, 4, 1);
        let maps = generate_maps(32, 32, 4, 4);
        let k = simulate_acquisition(&image, &maps, &mask, 0.01, 77).unwrap();
        let plane = 1024;
        for c in 0..4 {
            for t in 0..plane {
                if mask.re()[t] == 0.0 {
                    assert_eq!(k.at(c * plane + t), Complex::ZERO);
                }
            }
        }
    }

    #[test]
    fn example_self_consistency_at_container_precision() {
        let spec = DatasetSpec {
            n: 1,
            size: 32,
            coils: 4,
            ..Default::default()
        };
        let ex = make_example(&spec, 0).unwrap();
        let resim = simulate_acquisition(
            &ex.image,
            &ex.maps,
            &ex.mask,
            ex.meta.noise_sigma,
            ex.meta.noise_seed,
        )
        .unwrap();
        for t in 0..resim.numel() {
            assert_eq!(resim.at(t).re as f32, ex.kspace_u.at(t).re as f32);
            assert_eq!(resim.at(t).im as f32, ex.kspace_u.at(t).im as f32);
        }
    }

    #[test]
    fn dataset_round_trip_and_splits() {
        let dir = std::env::temp_dir().join(format!("cxmri_ds_{}", std::process::id()));
        let spec = DatasetSpec {
            n: 10,
            size: 16,
            coils: 2,
            calib: 4,
            ..Default::default()
        };
        let ds = generate_dataset(&spec, &dir).unwrap();
        assert_eq!(ds.train.len(), 8);
        assert_eq!(ds.val.len(), 1);
        assert_eq!(ds.test.len(), 1);
        let ex = load_example(&ds.train[0]).unwrap();
        let again = make_example(&spec, 0).unwrap();
        // Stored tensors are f32-quantized, and quantized inputs reproduce
        // themselves exactly.
        assert_eq!(ex.image, again.image);
        assert_eq!(ex.mask, again.mask);
        for t in 0..ex.kspace_u.numel() {
            assert_eq!(ex.kspace_u.at(t).re, (again.kspace_u.at(t).re as f32) as f64);
        }
        std::fs::remove_dir_all(&dir).ok();
    }
}
