//! Real and complex 2-D convolution with "same" zero padding.
//!
//! Convolution here means cross-correlation (no kernel flip), the deep
//! learning convention. A complex convolution with filter `W = X + iY` on
//! data `d = a + ib` evaluates as four real convolutions:
//!
//! ```text
//! Re(W * d) = X * a - Y * b
//! Im(W * d) = Y * a + X * b
//! ```
//!
//! The raw kernels below are accumulate-with-sign so the four-term
//! decomposition and its backward passes never allocate scratch planes.

use crate::error::{Error, Result};
use crate::tensor::ComplexTensor;

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvDims {
    pub in_ch: usize,
    pub out_ch: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
}

impl ConvDims {
    fn pad(&self) -> usize {
        (self.k - 1) / 2
    }
}

/// Channel-parallel work is worth spawning only for full-size planes; the
/// split is over disjoint output channels with unchanged inner accumulation
/// order, so results are bit-identical either way.
fn parallel_worthwhile(d: ConvDims) -> bool {
    d.h * d.w * d.in_ch * d.out_ch >= 1 << 18
}

/// `out[o] += sign * sum_i wgt[o,i] (*) inp[i]` with "same" zero padding.
pub(crate) fn conv_acc(inp: &[f64], wgt: &[f64], sign: f64, d: ConvDims, out: &mut [f64]) {
    use rayon::prelude::*;
    if parallel_worthwhile(d) {
        out.par_chunks_exact_mut(d.h * d.w)
            .enumerate()
            .for_each(|(o, plane)| conv_acc_one(inp, wgt, sign, d, o, plane));
    } else {
        for (o, plane) in out.chunks_exact_mut(d.h * d.w).enumerate() {
            conv_acc_one(inp, wgt, sign, d, o, plane);
        }
    }
}

fn conv_acc_one(inp: &[f64], wgt: &[f64], sign: f64, d: ConvDims, o: usize, out_plane: &mut [f64]) {
    let (h, w, k, p) = (d.h, d.w, d.k, d.pad() as isize);
    {
        for i in 0..d.in_ch {
            let in_plane = &inp[i * h * w..(i + 1) * h * w];
            let w_base = (o * d.in_ch + i) * k * k;
            for dy in 0..k {
                let sy = dy as isize - p;
                let y0 = (-sy).max(0) as usize;
                let y1 = (h as isize - sy.max(0)) as usize;
                for dx in 0..k {
                    let wv = sign * wgt[w_base + dy * k + dx];
                    if wv == 0.0 {
                        continue;
                    }
                    let sx = dx as isize - p;
                    let x0 = (-sx).max(0) as usize;
                    let x1 = (w as isize - sx.max(0)) as usize;
                    if x0 >= x1 {
                        continue;
                    }
                    for y in y0..y1 {
                        let src = (y as isize + sy) as usize * w;
                        let orow = &mut out_plane[y * w + x0..y * w + x1];
                        let irow =
                            &in_plane[(src as isize + x0 as isize + sx) as usize..][..x1 - x0];
                        for (ov, iv) in orow.iter_mut().zip(irow) {
                            *ov += wv * iv;
                        }
                    }
                }
            }
        }
    }
}

/// Input gradient: `din[i] += sign * sum_o wgt[o,i] (*)^T dout[o]`.
pub(crate) fn conv_bwd_input_acc(
    dout: &[f64],
    wgt: &[f64],
    sign: f64,
    d: ConvDims,
    din: &mut [f64],
) {
    use rayon::prelude::*;
    if parallel_worthwhile(d) {
        din.par_chunks_exact_mut(d.h * d.w)
            .enumerate()
            .for_each(|(i, plane)| conv_bwd_input_one(dout, wgt, sign, d, i, plane));
    } else {
        for (i, plane) in din.chunks_exact_mut(d.h * d.w).enumerate() {
            conv_bwd_input_one(dout, wgt, sign, d, i, plane);
        }
    }
}

fn conv_bwd_input_one(
    dout: &[f64],
    wgt: &[f64],
    sign: f64,
    d: ConvDims,
    i: usize,
    din_plane: &mut [f64],
) {
    let (h, w, k, p) = (d.h, d.w, d.k, d.pad() as isize);
    {
        for o in 0..d.out_ch {
            let dout_plane = &dout[o * h * w..(o + 1) * h * w];
            let w_base = (o * d.in_ch + i) * k * k;
            for dy in 0..k {
                let sy = dy as isize - p;
                // din[i, y, x] receives dout[o, y - sy, x - sx].
                let y0 = sy.max(0) as usize;
                let y1 = (h as isize + sy.min(0)) as usize;
                for dx in 0..k {
                    let wv = sign * wgt[w_base + dy * k + dx];
                    if wv == 0.0 {
                        continue;
                    }
                    let sx = dx as isize - p;
                    let x0 = sx.max(0) as usize;
                    let x1 = (w as isize + sx.min(0)) as usize;
                    if x0 >= x1 {
                        continue;
                    }
                    for y in y0..y1 {
                        let src = ((y as isize - sy) as usize) * w;
                        let drow = &mut din_plane[y * w + x0..y * w + x1];
                        let srow =
                            &dout_plane[(src as isize + x0 as isize - sx) as usize..][..x1 - x0];
                        for (dv, sv) in drow.iter_mut().zip(srow) {
                            *dv += wv * sv;
                        }
                    }
                }
            }
        }
    }
}

/// Weight gradient: `dwgt[o,i,dy,dx] += sign * sum_{y,x} dout[o,y,x] inp[i,y+sy,x+sx]`.
pub(crate) fn conv_bwd_weights_acc(
    dout: &[f64],
    inp: &[f64],
    sign: f64,
    d: ConvDims,
    dwgt: &mut [f64],
) {
    use rayon::prelude::*;
    if parallel_worthwhile(d) {
        dwgt.par_chunks_exact_mut(d.in_ch * d.k * d.k)
            .enumerate()
            .for_each(|(o, slab)| conv_bwd_weights_one(dout, inp, sign, d, o, slab));
    } else {
        for (o, slab) in dwgt.chunks_exact_mut(d.in_ch * d.k * d.k).enumerate() {
            conv_bwd_weights_one(dout, inp, sign, d, o, slab);
        }
    }
}

fn conv_bwd_weights_one(
    dout: &[f64],
    inp: &[f64],
    sign: f64,
    d: ConvDims,
    o: usize,
    dw_slab: &mut [f64],
) {
    let (h, w, k, p) = (d.h, d.w, d.k, d.pad() as isize);
    {
        let dout_plane = &dout[o * h * w..(o + 1) * h * w];
        for i in 0..d.in_ch {
            let in_plane = &inp[i * h * w..(i + 1) * h * w];
            for dy in 0..k {
                let sy = dy as isize - p;
                let y0 = (-sy).max(0) as usize;
                let y1 = (h as isize - sy.max(0)) as usize;
                for dx in 0..k {
                    let sx = dx as isize - p;
                    let x0 = (-sx).max(0) as usize;
                    let x1 = (w as isize - sx.max(0)) as usize;
                    if x0 >= x1 {
                        continue;
                    }
                    let mut acc = 0.0;
                    for y in y0..y1 {
                        let drow = &dout_plane[y * w + x0..y * w + x1];
                        let irow = &in_plane
                            [((y as isize + sy) as usize * w) + (x0 as isize + sx) as usize..]
                            [..x1 - x0];
                        let mut s = 0.0;
                        for (dv, iv) in drow.iter().zip(irow) {
                            s += dv * iv;
                        }
                        acc += s;
                    }
                    dw_slab[i * k * k + dy * k + dx] += sign * acc;
                }
            }
        }
    }
}

fn validate_conv(
    input: &ComplexTensor,
    weights_shape: &[usize],
    bias_len: usize,
) -> Result<ConvDims> {
    if input.shape().len() != 3 {
        return Err(Error::RankMismatch {
            context: "conv2d input",
            got: input.shape().len(),
            expected: 3,
        });
    }
    if weights_shape.len() != 4 {
        return Err(Error::RankMismatch {
            context: "conv2d weights",
            got: weights_shape.len(),
            expected: 4,
        });
    }
    let (out_ch, in_ch, k) = (weights_shape[0], weights_shape[1], weights_shape[2]);
    if weights_shape[3] != k {
        return Err(Error::ShapeMismatch {
            context: "conv2d weights (square kernel)",
            axis: 3,
            got: weights_shape[3],
            expected: k,
        });
    }
    if k % 2 == 0 {
        return Err(Error::Data(format!("kernel size {k} must be odd")));
    }
    if input.shape()[0] != in_ch {
        return Err(Error::ShapeMismatch {
            context: "conv2d input channels",
            axis: 0,
            got: input.shape()[0],
            expected: in_ch,
        });
    }
    if bias_len != out_ch {
        return Err(Error::ShapeMismatch {
            context: "conv2d bias",
            axis: 0,
            got: bias_len,
            expected: out_ch,
        });
    }
    Ok(ConvDims {
        in_ch,
        out_ch,
        h: input.shape()[1],
        w: input.shape()[2],
        k,
    })
}

/// Real 2-D convolution over the real planes of `input` and `weights`.
/// Imaginary planes are ignored; the output is real-only.
pub fn conv2d_real(
    input: &ComplexTensor,
    weights: &ComplexTensor,
    bias: &[f64],
) -> Result<ComplexTensor> {
    let d = validate_conv(input, weights.shape(), bias.len())?;
    let mut out = vec![0.0; d.out_ch * d.h * d.w];
    for (o, plane) in out.chunks_exact_mut(d.h * d.w).enumerate() {
        plane.fill(bias[o]);
    }
    conv_acc(input.re(), weights.re(), 1.0, d, &mut out);
    ComplexTensor::from_real(vec![d.out_ch, d.h, d.w], out)
}

/// Complex filter bank. `weight` holds X in its real plane and Y in its
/// imaginary plane; `bias` is one complex value per output channel.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvKernel {
    pub weight: ComplexTensor,
    pub bias: ComplexTensor,
}

impl ConvKernel {
    pub fn new(weight: ComplexTensor, bias: ComplexTensor) -> Result<Self> {
        if weight.shape().len() != 4 {
            return Err(Error::RankMismatch {
                context: "ConvKernel weight",
                got: weight.shape().len(),
                expected: 4,
            });
        }
        let k = weight.shape()[2];
        if weight.shape()[3] != k || k.is_multiple_of(2) {
            return Err(Error::Data(format!(
                "ConvKernel requires an odd square kernel, got {:?}",
                &weight.shape()[2..]
            )));
        }
        if bias.shape() != [weight.shape()[0]] {
            return Err(Error::ShapeMismatch {
                context: "ConvKernel bias",
                axis: 0,
                got: bias.numel(),
                expected: weight.shape()[0],
            });
        }
        Ok(ConvKernel { weight, bias })
    }

    pub fn out_ch(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn in_ch(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn k(&self) -> usize {
        self.weight.shape()[2]
    }

    /// Real filter plane X.
    pub fn x(&self) -> &[f64] {
        self.weight.re()
    }

    /// Imaginary filter plane Y.
    pub fn y(&self) -> &[f64] {
        self.weight.im()
    }
}

/// Complex 2-D convolution via the four-real-convolution decomposition.
pub fn conv2d_complex(input: &ComplexTensor, kernel: &ConvKernel) -> Result<ComplexTensor> {
    let d = validate_conv(input, kernel.weight.shape(), kernel.bias.numel())?;
    let mut out = ComplexTensor::zeros(&[d.out_ch, d.h, d.w]);
    let (out_re, out_im) = out.planes_mut();
    for (o, plane) in out_re.chunks_exact_mut(d.h * d.w).enumerate() {
        plane.fill(kernel.bias.re()[o]);
    }
    for (o, plane) in out_im.chunks_exact_mut(d.h * d.w).enumerate() {
        plane.fill(kernel.bias.im()[o]);
    }
    conv_acc(input.re(), kernel.x(), 1.0, d, out_re);
    conv_acc(input.im(), kernel.y(), -1.0, d, out_re);
    conv_acc(input.re(), kernel.y(), 1.0, d, out_im);
    conv_acc(input.im(), kernel.x(), 1.0, d, out_im);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use crate::tensor::Complex;

    fn random(shape: &[usize], rng: &mut Rng) -> ComplexTensor {
        let n: usize = shape.iter().product();
        let re = (0..n).map(|_| rng.range(-1.0, 1.0)).collect();
        let im = (0..n).map(|_| rng.range(-1.0, 1.0)).collect();
        ComplexTensor::from_parts(shape.to_vec(), re, im).unwrap()
    }

    /// Sliding-window oracle with native complex multiply-accumulate.
    pub(crate) fn conv2d_complex_oracle(
        input: &ComplexTensor,
        kernel: &ConvKernel,
    ) -> ComplexTensor {
        let (in_ch, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
        let (out_ch, k) = (kernel.out_ch(), kernel.k());
        let p = (k - 1) / 2;
        let mut out = ComplexTensor::zeros(&[out_ch, h, w]);
        for o in 0..out_ch {
            for y in 0..h {
                for x in 0..w {
                    let mut acc = kernel.bias.at(o);
                    for i in 0..in_ch {
                        for dy in 0..k {
                            for dx in 0..k {
                                let yy = y as isize + dy as isize - p as isize;
                                let xx = x as isize + dx as isize - p as isize;
                                if yy < 0 || yy >= h as isize || xx < 0 || xx >= w as isize {
                                    continue;
                                }
                                let wv = kernel.weight.at(((o * in_ch + i) * k + dy) * k + dx);
                                let iv = input.at((i * h + yy as usize) * w + xx as usize);
                                acc = acc + wv * iv;
                            }
                        }
                    }
                    out.set((o * h + y) * w + x, acc);
                }
            }
        }
        out
    }

    fn kernel_1x1(w: Complex, bias: Complex) -> ConvKernel {
        ConvKernel::new(
            ComplexTensor::from_parts(vec![1, 1, 1, 1], vec![w.re], vec![w.im]).unwrap(),
            ComplexTensor::scalar(bias),
        )
        .unwrap()
    }

    #[test]
    fn real_identity_1x1() {
        let mut rng = Rng::new(31);
        let x = random(&[1, 4, 4], &mut rng);
        let w = ComplexTensor::from_real(vec![1, 1, 1, 1], vec![1.0]).unwrap();
        let y = conv2d_real(&x, &w, &[0.0]).unwrap();
        assert_eq!(y.re(), x.re());
        assert!(y.is_real_only());
    }

    #[test]
    fn real_zero_weights_give_bias() {
        let x = ComplexTensor::zeros(&[2, 3, 3]);
        let w = ComplexTensor::from_real(vec![2, 2, 3, 3], vec![0.0; 36]).unwrap();
        let y = conv2d_real(&x, &w, &[1.5, -0.25]).unwrap();
        assert!(y.re()[..9].iter().all(|&v| v == 1.5));
        assert!(y.re()[9..].iter().all(|&v| v == -0.25));
    }

    #[test]
    fn real_matches_sliding_window_oracle() {
        let mut rng = Rng::new(32);
        let x = random(&[2, 5, 5], &mut rng);
        let w = random(&[3, 2, 3, 3], &mut rng);
        let bias = [0.3, -0.7, 0.1];
        let got = conv2d_real(&x, &w, &bias).unwrap();
        // Direct summation on the real planes.
        for o in 0..3 {
            for y in 0..5 {
                for xx in 0..5 {
                    let mut acc = bias[o];
                    for i in 0..2 {
                        for dy in 0..3 {
                            for dx in 0..3 {
                                let yy = y as isize + dy - 1;
                                let xs = xx as isize + dx - 1;
                                if yy < 0 || yy >= 5 || xs < 0 || xs >= 5 {
                                    continue;
                                }
                                acc += w.re()[((o * 2 + i) * 3 + dy as usize) * 3 + dx as usize]
                                    * x.re()[(i * 5 + yy as usize) * 5 + xs as usize];
                            }
                        }
                    }
                    let v = got.re()[(o * 5 + y) * 5 + xx];
                    assert!((v - acc).abs() < 1e-12, "o={o} y={y} x={xx}");
                }
            }
        }
    }

    #[test]
    fn complex_identity_1x1() {
        let mut rng = Rng::new(33);
        let x = random(&[1, 4, 4], &mut rng);
        let y = conv2d_complex(&x, &kernel_1x1(Complex::ONE, Complex::ZERO)).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn complex_multiply_by_i() {
        let x = ComplexTensor::from_parts(vec![1, 1, 1], vec![1.0], vec![2.0]).unwrap();
        let y = conv2d_complex(&x, &kernel_1x1(Complex::I, Complex::ZERO)).unwrap();
        assert_eq!(y.at(0), Complex::new(-2.0, 1.0));
    }

    #[test]
    fn complex_matches_oracle() {
        let mut rng = Rng::new(34);
        let x = random(&[1, 5, 5], &mut rng);
        let kernel = ConvKernel::new(random(&[2, 1, 3, 3], &mut rng), random(&[2], &mut rng))
            .unwrap();
        let fast = conv2d_complex(&x, &kernel).unwrap();
        let slow = conv2d_complex_oracle(&x, &kernel);
        for i in 0..fast.numel() {
            assert!((fast.at(i).re - slow.at(i).re).abs() < 1e-12);
            assert!((fast.at(i).im - slow.at(i).im).abs() < 1e-12);
        }
    }

    #[test]
    fn complex_linearity_under_complex_scalar() {
        let mut rng = Rng::new(35);
        let x = random(&[2, 6, 6], &mut rng);
        let kernel = ConvKernel::new(
            random(&[3, 2, 3, 3], &mut rng),
            ComplexTensor::zeros(&[3]),
        )
        .unwrap();
        let alpha = Complex::new(0.3, -1.2);
        let lhs = conv2d_complex(&x.scale(alpha), &kernel).unwrap();
        let rhs = conv2d_complex(&x, &kernel).unwrap().scale(alpha);
        for i in 0..lhs.numel() {
            assert!((lhs.at(i).re - rhs.at(i).re).abs() < 1e-10);
            assert!((lhs.at(i).im - rhs.at(i).im).abs() < 1e-10);
        }
    }

    /// The matrix form [X -Y; Y X] applied to stacked (a, b) as one real
    /// convolution must equal the complex convolution.
    #[test]
    fn complex_equals_block_real_form() {
        let mut rng = Rng::new(36);
        let x = random(&[2, 4, 4], &mut rng);
        let kernel = ConvKernel::new(
            random(&[3, 2, 3, 3], &mut rng),
            ComplexTensor::zeros(&[3]),
        )
        .unwrap();
        let complex_out = conv2d_complex(&x, &kernel).unwrap();

        // Stack (a, b) into 4 real channels.
        let mut stacked = Vec::with_capacity(2 * x.numel());
        stacked.extend_from_slice(x.re());
        stacked.extend_from_slice(x.im());
        let stacked = ComplexTensor::from_real(vec![4, 4, 4], stacked).unwrap();

        // Block weights [[X, -Y], [Y, X]] of shape [6, 4, 3, 3].
        let (oc, ic, kk) = (3, 2, 9);
        let mut bw = vec![0.0; 6 * 4 * kk];
        for o in 0..oc {
            for i in 0..ic {
                for t in 0..kk {
                    let xv = kernel.x()[(o * ic + i) * kk + t];
                    let yv = kernel.y()[(o * ic + i) * kk + t];
                    bw[((o) * 4 + i) * kk + t] = xv;
                    bw[((o) * 4 + ic + i) * kk + t] = -yv;
                    bw[((oc + o) * 4 + i) * kk + t] = yv;
                    bw[((oc + o) * 4 + ic + i) * kk + t] = xv;
                }
            }
        }
        let bw = ComplexTensor::from_real(vec![6, 4, 3, 3], bw).unwrap();
        let block_out = conv2d_real(&stacked, &bw, &[0.0; 6]).unwrap();
        let plane = 16;
        for o in 0..oc {
            for t in 0..plane {
                let got_re = block_out.re()[o * plane + t];
                let got_im = block_out.re()[(oc + o) * plane + t];
                assert!((got_re - complex_out.re()[o * plane + t]).abs() < 1e-12);
                assert!((got_im - complex_out.im()[o * plane + t]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn channel_mismatch_reports_axis() {
        let x = ComplexTensor::zeros(&[3, 4, 4]);
        let kernel =
            ConvKernel::new(ComplexTensor::zeros(&[2, 2, 3, 3]), ComplexTensor::zeros(&[2]))
                .unwrap();
        match conv2d_complex(&x, &kernel) {
            Err(Error::ShapeMismatch { axis: 0, got: 3, expected: 2, .. }) => {}
            other => panic!("unexpected: {other:?}"),
        }
    }

    #[test]
    fn deterministic_repeat() {
        let mut rng = Rng::new(37);
        let x = random(&[2, 8, 8], &mut rng);
        let kernel = ConvKernel::new(random(&[2, 2, 3, 3], &mut rng), random(&[2], &mut rng))
            .unwrap();
        let a = conv2d_complex(&x, &kernel).unwrap();
        let b = conv2d_complex(&x, &kernel).unwrap();
        assert_eq!(a, b);
    }
}
