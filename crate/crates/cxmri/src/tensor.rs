//! N-dimensional complex tensor with planar storage.
//!
//! Real and imaginary parts live in two separate row-major `f64` arrays, so a
//! complex convolution decomposes into four real convolutions without any
//! repacking, and masks or magnitudes are just tensors whose imaginary plane
//! is identically zero.

use crate::error::{Error, Result};

/// Complex scalar used for biases, inner products and scalar multiplication.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Complex {
    pub re: f64,
    pub im: f64,
}

impl Complex {
    pub const ZERO: Complex = Complex { re: 0.0, im: 0.0 };
    pub const ONE: Complex = Complex { re: 1.0, im: 0.0 };
    pub const I: Complex = Complex { re: 0.0, im: 1.0 };

    pub fn new(re: f64, im: f64) -> Self {
        Complex { re, im }
    }

    pub fn conj(self) -> Self {
        Complex::new(self.re, -self.im)
    }

    pub fn abs(self) -> f64 {
        self.re.hypot(self.im)
    }

    pub fn arg(self) -> f64 {
        self.im.atan2(self.re)
    }
}

impl std::ops::Add for Complex {
    type Output = Complex;
    fn add(self, rhs: Complex) -> Complex {
        Complex::new(self.re + rhs.re, self.im + rhs.im)
    }
}

impl std::ops::Sub for Complex {
    type Output = Complex;
    fn sub(self, rhs: Complex) -> Complex {
        Complex::new(self.re - rhs.re, self.im - rhs.im)
    }
}

impl std::ops::Mul for Complex {
    type Output = Complex;
    fn mul(self, rhs: Complex) -> Complex {
        Complex::new(
            self.re * rhs.re - self.im * rhs.im,
            self.im * rhs.re + self.re * rhs.im,
        )
    }
}

/// Dense complex tensor. Immutable in spirit: operations return new tensors,
/// and in-place mutation is confined to constructors and private kernels.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexTensor {
    shape: Vec<usize>,
    re: Vec<f64>,
    im: Vec<f64>,
}

fn numel_of(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl ComplexTensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = numel_of(shape);
        debug_assert!(shape.iter().all(|&d| d >= 1));
        ComplexTensor {
            shape: shape.to_vec(),
            re: vec![0.0; n],
            im: vec![0.0; n],
        }
    }

    /// Build from explicit planes. Validates the planar-storage invariants:
    /// both planes have length `product(shape)` and every dimension is >= 1.
    pub fn from_parts(shape: Vec<usize>, re: Vec<f64>, im: Vec<f64>) -> Result<Self> {
        if let Some(axis) = shape.iter().position(|&d| d == 0) {
            return Err(Error::ShapeMismatch {
                context: "tensor shape",
                axis,
                got: 0,
                expected: 1,
            });
        }
        let n = numel_of(&shape);
        if re.len() != n || im.len() != n {
            return Err(Error::Data(format!(
                "plane length {}/{} does not match shape product {}",
                re.len(),
                im.len(),
                n
            )));
        }
        Ok(ComplexTensor { shape, re, im })
    }

    /// Real-only tensor (imaginary plane zero).
    pub fn from_real(shape: Vec<usize>, re: Vec<f64>) -> Result<Self> {
        let n = re.len();
        Self::from_parts(shape, re, vec![0.0; n])
    }

    pub fn scalar(v: Complex) -> Self {
        ComplexTensor {
            shape: vec![1],
            re: vec![v.re],
            im: vec![v.im],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.re.len()
    }

    pub fn re(&self) -> &[f64] {
        &self.re
    }

    pub fn im(&self) -> &[f64] {
        &self.im
    }

    pub(crate) fn re_mut(&mut self) -> &mut [f64] {
        &mut self.re
    }

    pub(crate) fn im_mut(&mut self) -> &mut [f64] {
        &mut self.im
    }

    pub(crate) fn planes_mut(&mut self) -> (&mut [f64], &mut [f64]) {
        (&mut self.re, &mut self.im)
    }

    pub fn at(&self, flat: usize) -> Complex {
        Complex::new(self.re[flat], self.im[flat])
    }

    pub fn set(&mut self, flat: usize, v: Complex) {
        self.re[flat] = v.re;
        self.im[flat] = v.im;
    }

    pub fn is_real_only(&self) -> bool {
        self.im.iter().all(|&v| v == 0.0)
    }

    /// Reshape without moving data. The element count must be preserved.
    pub fn reshaped(&self, shape: &[usize]) -> Result<Self> {
        if numel_of(shape) != self.numel() {
            return Err(Error::Data(format!(
                "cannot reshape {:?} into {:?}",
                self.shape, shape
            )));
        }
        let mut out = self.clone();
        out.shape = shape.to_vec();
        Ok(out)
    }

    fn check_same_shape(&self, other: &Self, context: &'static str) -> Result<()> {
        if self.shape.len() != other.shape.len() {
            return Err(Error::RankMismatch {
                context,
                got: other.shape.len(),
                expected: self.shape.len(),
            });
        }
        for (axis, (&a, &b)) in self.shape.iter().zip(&other.shape).enumerate() {
            if a != b {
                return Err(Error::ShapeMismatch {
                    context,
                    axis,
                    got: b,
                    expected: a,
                });
            }
        }
        Ok(())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_same_shape(other, "add")?;
        let mut out = self.clone();
        for (o, x) in out.re.iter_mut().zip(&other.re) {
            *o += x;
        }
        for (o, x) in out.im.iter_mut().zip(&other.im) {
            *o += x;
        }
        Ok(out)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.check_same_shape(other, "sub")?;
        let mut out = self.clone();
        for (o, x) in out.re.iter_mut().zip(&other.re) {
            *o -= x;
        }
        for (o, x) in out.im.iter_mut().zip(&other.im) {
            *o -= x;
        }
        Ok(out)
    }

    /// Complex Hadamard product.
    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.check_same_shape(other, "mul")?;
        let mut out = Self::zeros(&self.shape);
        for i in 0..self.numel() {
            out.re[i] = self.re[i] * other.re[i] - self.im[i] * other.im[i];
            out.im[i] = self.im[i] * other.re[i] + self.re[i] * other.im[i];
        }
        Ok(out)
    }

    pub fn conj(&self) -> Self {
        let mut out = self.clone();
        for v in out.im.iter_mut() {
            *v = -*v;
        }
        out
    }

    /// Pointwise modulus; the result is real-only.
    pub fn magnitude(&self) -> Self {
        let re = self
            .re
            .iter()
            .zip(&self.im)
            .map(|(&a, &b)| a.hypot(b))
            .collect();
        ComplexTensor {
            shape: self.shape.clone(),
            re,
            im: vec![0.0; self.numel()],
        }
    }

    /// Pointwise phase `atan2(im, re)` in `(-pi, pi]`; real-only result.
    pub fn phase(&self) -> Self {
        let re = self
            .re
            .iter()
            .zip(&self.im)
            .map(|(&a, &b)| b.atan2(a))
            .collect();
        ComplexTensor {
            shape: self.shape.clone(),
            re,
            im: vec![0.0; self.numel()],
        }
    }

    /// `alpha * self + other` for a complex scalar `alpha`.
    pub fn scale_add(&self, alpha: Complex, other: &Self) -> Result<Self> {
        self.check_same_shape(other, "scale_add")?;
        let mut out = Self::zeros(&self.shape);
        for i in 0..self.numel() {
            out.re[i] = alpha.re * self.re[i] - alpha.im * self.im[i] + other.re[i];
            out.im[i] = alpha.im * self.re[i] + alpha.re * self.im[i] + other.im[i];
        }
        Ok(out)
    }

    pub fn scale(&self, alpha: Complex) -> Self {
        let mut out = Self::zeros(&self.shape);
        for i in 0..self.numel() {
            out.re[i] = alpha.re * self.re[i] - alpha.im * self.im[i];
            out.im[i] = alpha.im * self.re[i] + alpha.re * self.im[i];
        }
        out
    }

    /// Euclidean norm over complex entries.
    pub fn norm2(&self) -> f64 {
        self.norm2_sq().sqrt()
    }

    pub fn norm2_sq(&self) -> f64 {
        let mut s = 0.0;
        for i in 0..self.numel() {
            s += self.re[i] * self.re[i] + self.im[i] * self.im[i];
        }
        s
    }

    pub fn max_abs(&self) -> f64 {
        let mut m: f64 = 0.0;
        for i in 0..self.numel() {
            m = m.max(self.re[i].hypot(self.im[i]));
        }
        m
    }

    /// Real inner product of the stacked (re, im) coordinate vectors.
    pub fn dot_real(&self, other: &Self) -> Result<f64> {
        self.check_same_shape(other, "dot_real")?;
        let mut s = 0.0;
        for i in 0..self.numel() {
            s += self.re[i] * other.re[i] + self.im[i] * other.im[i];
        }
        Ok(s)
    }

    /// Complex inner product `sum_i self_i * conj(other_i)`.
    pub fn inner(&self, other: &Self) -> Result<Complex> {
        self.check_same_shape(other, "inner")?;
        let mut re = 0.0;
        let mut im = 0.0;
        for i in 0..self.numel() {
            re += self.re[i] * other.re[i] + self.im[i] * other.im[i];
            im += self.im[i] * other.re[i] - self.re[i] * other.im[i];
        }
        Ok(Complex::new(re, im))
    }

    pub fn iter(&self) -> impl Iterator<Item = Complex> + '_ {
        self.re
            .iter()
            .zip(&self.im)
            .map(|(&a, &b)| Complex::new(a, b))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    pub(crate) fn random_tensor(shape: &[usize], rng: &mut Rng) -> ComplexTensor {
        let n: usize = shape.iter().product();
        let re = (0..n).map(|_| rng.range(-1.0, 1.0)).collect();
        let im = (0..n).map(|_| rng.range(-1.0, 1.0)).collect();
        ComplexTensor::from_parts(shape.to_vec(), re, im).unwrap()
    }

    #[test]
    fn conj_is_involution() {
        let mut rng = Rng::new(5);
        let x = random_tensor(&[3, 4], &mut rng);
        assert_eq!(x.conj().conj(), x);
    }

    #[test]
    fn magnitude_and_phase_basics() {
        let t = ComplexTensor::from_parts(vec![2], vec![3.0, 0.0], vec![4.0, 1.0]).unwrap();
        let m = t.magnitude();
        assert_eq!(m.re()[0], 5.0);
        assert!(m.is_real_only());
        let p = t.phase();
        assert_eq!(p.re()[1], std::f64::consts::FRAC_PI_2);
    }

    #[test]
    fn mul_with_conj_gives_squared_magnitude() {
        let mut rng = Rng::new(9);
        let x = random_tensor(&[4, 4], &mut rng);
        let prod = x.mul(&x.conj()).unwrap();
        for i in 0..x.numel() {
            let expect = x.re()[i] * x.re()[i] + x.im()[i] * x.im()[i];
            assert!((prod.re()[i] - expect).abs() < 1e-14);
            assert!(prod.im()[i].abs() < 1e-14);
        }
    }

    #[test]
    fn scale_add_matches_manual() {
        let mut rng = Rng::new(11);
        let x = random_tensor(&[5], &mut rng);
        let y = random_tensor(&[5], &mut rng);
        let alpha = Complex::new(0.5, -2.0);
        let z = x.scale_add(alpha, &y).unwrap();
        for i in 0..5 {
            let want = alpha * x.at(i) + y.at(i);
            assert!((z.at(i).re - want.re).abs() < 1e-15);
            assert!((z.at(i).im - want.im).abs() < 1e-15);
        }
    }

    #[test]
    fn shape_mismatch_names_axis() {
        let a = ComplexTensor::zeros(&[2, 3]);
        let b = ComplexTensor::zeros(&[2, 4]);
        match a.add(&b) {
            Err(Error::ShapeMismatch { axis, got, expected, .. }) => {
                assert_eq!(axis, 1);
                assert_eq!(got, 4);
                assert_eq!(expected, 3);
            }
            other => panic!("expected shape mismatch, got {other:?}"),
        }
    }

    #[test]
    fn zero_dimension_rejected() {
        assert!(ComplexTensor::from_parts(vec![2, 0], vec![], vec![]).is_err());
    }
}
