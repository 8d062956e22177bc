//! Centered orthonormal 2-D FFT over the trailing two axes.
//!
//! The transform is `shift -> DFT -> shift` with a `1/sqrt(H*W)` scale, so it
//! is unitary and the k-space origin sits at the array center. Sizes are
//! restricted to powers of two and handled by an iterative radix-2 kernel.

use crate::error::{Error, Result};
use crate::tensor::ComplexTensor;

/// Centered, orthonormal 2-D DFT over the last two axes of `x`.
/// With `inverse` set this is the exact inverse map.
pub fn fft2c(x: &ComplexTensor, inverse: bool) -> Result<ComplexTensor> {
    let shape = x.shape();
    if shape.len() < 2 {
        return Err(Error::RankMismatch {
            context: "fft2c",
            got: shape.len(),
            expected: 2,
        });
    }
    let h = shape[shape.len() - 2];
    let w = shape[shape.len() - 1];
    if !h.is_power_of_two() {
        return Err(Error::NonPowerOfTwo { size: h });
    }
    if !w.is_power_of_two() {
        return Err(Error::NonPowerOfTwo { size: w });
    }
    let mut out = x.clone();
    let plane = h * w;
    let planes = x.numel() / plane;
    let (re, im) = out.planes_mut();
    for p in 0..planes {
        let r = &mut re[p * plane..(p + 1) * plane];
        let i = &mut im[p * plane..(p + 1) * plane];
        fft2c_plane(r, i, h, w, inverse);
    }
    Ok(out)
}

/// In-place centered orthonormal transform of one H x W plane.
pub(crate) fn fft2c_plane(re: &mut [f64], im: &mut [f64], h: usize, w: usize, inverse: bool) {
    if inverse {
        // The forward map is S F S / sqrt(N) with F the (symmetric) DFT
        // matrix and S the center shift, so its inverse is conj . forward . conj.
        for v in im.iter_mut() {
            *v = -*v;
        }
        fft2c_plane(re, im, h, w, false);
        for v in im.iter_mut() {
            *v = -*v;
        }
        return;
    }
    shift2(re, h, w);
    shift2(im, h, w);
    // Rows.
    for y in 0..h {
        fft_radix2(&mut re[y * w..(y + 1) * w], &mut im[y * w..(y + 1) * w]);
    }
    // Columns, via transpose so the kernel always runs on contiguous rows.
    let mut tre = vec![0.0; h * w];
    let mut tim = vec![0.0; h * w];
    transpose(re, &mut tre, h, w);
    transpose(im, &mut tim, h, w);
    for x in 0..w {
        fft_radix2(&mut tre[x * h..(x + 1) * h], &mut tim[x * h..(x + 1) * h]);
    }
    transpose(&tre, re, w, h);
    transpose(&tim, im, w, h);
    shift2(re, h, w);
    shift2(im, h, w);
    let scale = 1.0 / ((h * w) as f64).sqrt();
    for v in re.iter_mut() {
        *v *= scale;
    }
    for v in im.iter_mut() {
        *v *= scale;
    }
}

/// Swap halves along both axes. For even sizes fftshift and ifftshift agree,
/// and power-of-two sizes are even (or 1, where the shift is the identity).
fn shift2(data: &mut [f64], h: usize, w: usize) {
    let (hh, hw) = (h / 2, w / 2);
    if hw > 0 {
        for y in 0..h {
            let row = &mut data[y * w..(y + 1) * w];
            for x in 0..hw {
                row.swap(x, x + hw);
            }
        }
    }
    if hh > 0 {
        for y in 0..hh {
            for x in 0..w {
                data.swap(y * w + x, (y + hh) * w + x);
            }
        }
    }
}

fn transpose(src: &[f64], dst: &mut [f64], rows: usize, cols: usize) {
    for r in 0..rows {
        for c in 0..cols {
            dst[c * rows + r] = src[r * cols + c];
        }
    }
}

/// Iterative radix-2 Cooley-Tukey DFT (unnormalized, e^{-2pi i jk/n} kernel).
fn fft_radix2(re: &mut [f64], im: &mut [f64]) {
    let n = re.len();
    debug_assert!(n.is_power_of_two());
    if n <= 1 {
        return;
    }
    // Bit-reversal permutation.
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if j > i {
            re.swap(i, j);
            im.swap(i, j);
        }
    }
    let mut len = 2;
    while len <= n {
        let ang = -std::f64::consts::TAU / len as f64;
        let (w_im, w_re) = ang.sin_cos();
        for start in (0..n).step_by(len) {
            let mut cur_re = 1.0;
            let mut cur_im = 0.0;
            for k in 0..len / 2 {
                let a = start + k;
                let b = a + len / 2;
                let tre = re[b] * cur_re - im[b] * cur_im;
                let tim = im[b] * cur_re + re[b] * cur_im;
                re[b] = re[a] - tre;
                im[b] = im[a] - tim;
                re[a] += tre;
                im[a] += tim;
                let nre = cur_re * w_re - cur_im * w_im;
                cur_im = cur_re * w_im + cur_im * w_re;
                cur_re = nre;
            }
        }
        len <<= 1;
    }
}
