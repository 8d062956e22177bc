//! Define-by-run reverse-mode automatic differentiation.
//!
//! Every tape value is a `ComplexTensor`; gradients are taken with respect to
//! the real pair (re, im) of each named parameter, which makes the
//! non-holomorphic activations unambiguous and directly checkable against
//! central finite differences. A tape is built per forward pass, owned by one
//! driver, and consumed by `backward` into a `GradientSet`.

use std::collections::BTreeMap;

use crate::conv::{conv_bwd_input_acc, conv_bwd_weights_acc, ConvDims};
use crate::error::{Error, Result};
use crate::mri::{sense_adjoint, sense_normal};
use crate::nn;
use crate::tensor::{Complex, ComplexTensor};

/// How a parameter's coordinates count and update: a `Complex` parameter owns
/// both planes; a `RealOnly` parameter (step sizes, modReLU biases, real conv
/// weights) owns just the real plane and its imaginary plane stays zero.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    Complex,
    RealOnly,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

enum Op {
    Leaf {
        name: Option<String>,
        kind: ParamKind,
    },
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Scale {
        x: NodeId,
        alpha: Complex,
    },
    MulElem(NodeId, NodeId),
    Conj(NodeId),
    Reshape(NodeId),
    SumRe(NodeId),
    NormSq(NodeId),
    ConvComplex {
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
    },
    ConvReal {
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
    },
    SplitReIm(NodeId),
    MergeReIm(NodeId),
    CRelu(NodeId),
    ZRelu(NodeId),
    ModRelu {
        input: NodeId,
        bias: NodeId,
    },
    Cardioid(NodeId),
    DcStep {
        y: NodeId,
        t: NodeId,
        maps: ComplexTensor,
        mask: ComplexTensor,
        /// Saved forward residual `A^H (A y - k)`.
        residual: ComplexTensor,
    },
    AvgPool2(NodeId),
    UpsampleNearest2(NodeId),
    ConcatCh(NodeId, NodeId),
    L1Loss {
        pred: NodeId,
        target: ComplexTensor,
    },
    Nrmse {
        pred: NodeId,
        target: ComplexTensor,
        norm_diff: f64,
        norm_target: f64,
    },
}

struct Node {
    op: Op,
    value: ComplexTensor,
}

/// Recorded computation graph. Nodes are appended in execution order, so the
/// list is topologically sorted by construction.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients keyed by parameter name; real-pair gradient stored in the
/// (re, im) planes of a tensor shaped like the parameter.
#[derive(Clone, Debug, Default)]
pub struct GradientSet {
    grads: BTreeMap<String, ComplexTensor>,
}

impl GradientSet {
    pub fn get(&self, name: &str) -> Option<&ComplexTensor> {
        self.grads.get(name)
    }

    /// Multiply every gradient by `c` (batch averaging).
    pub fn scale(&mut self, c: f64) {
        for g in self.grads.values_mut() {
            let (re, im) = g.planes_mut();
            for v in re.iter_mut().chain(im.iter_mut()) {
                *v *= c;
            }
        }
    }

    /// Accumulate `scale * other` into self, inserting missing entries.
    pub fn add_assign_scaled(&mut self, other: &GradientSet, scale: f64) -> crate::error::Result<()> {
        for (name, g) in &other.grads {
            match self.grads.get_mut(name) {
                Some(acc) => {
                    let (re, im) = acc.planes_mut();
                    for (v, s) in re.iter_mut().zip(g.re()) {
                        *v += scale * s;
                    }
                    for (v, s) in im.iter_mut().zip(g.im()) {
                        *v += scale * s;
                    }
                }
                None => {
                    let mut copy = g.clone();
                    let (re, im) = copy.planes_mut();
                    for v in re.iter_mut().chain(im.iter_mut()) {
                        *v *= scale;
                    }
                    self.grads.insert(name.clone(), copy);
                }
            }
        }
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &ComplexTensor)> {
        self.grads.iter()
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn value(&self, id: NodeId) -> &ComplexTensor {
        &self.nodes[id.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: ComplexTensor) -> NodeId {
        self.nodes.push(Node { op, value });
        NodeId(self.nodes.len() - 1)
    }

    /// Non-trainable input.
    pub fn constant(&mut self, value: ComplexTensor) -> NodeId {
        self.push(
            Op::Leaf {
                name: None,
                kind: ParamKind::Complex,
            },
            value,
        )
    }

    /// Named trainable leaf.
    pub fn param(&mut self, name: &str, value: ComplexTensor, kind: ParamKind) -> NodeId {
        self.push(
            Op::Leaf {
                name: Some(name.to_string()),
                kind,
            },
            value,
        )
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.value(a).add(self.value(b))?;
        Ok(self.push(Op::Add(a, b), value))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.value(a).sub(self.value(b))?;
        Ok(self.push(Op::Sub(a, b), value))
    }

    pub fn scale(&mut self, x: NodeId, alpha: Complex) -> NodeId {
        let value = self.value(x).scale(alpha);
        self.push(Op::Scale { x, alpha }, value)
    }

    pub fn mul_elem(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.value(a).mul(self.value(b))?;
        Ok(self.push(Op::MulElem(a, b), value))
    }

    pub fn conj(&mut self, x: NodeId) -> NodeId {
        let value = self.value(x).conj();
        self.push(Op::Conj(x), value)
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId> {
        let value = self.value(x).reshaped(shape)?;
        Ok(self.push(Op::Reshape(x), value))
    }

    /// Scalar `sum(re(x))`.
    pub fn sum_re(&mut self, x: NodeId) -> NodeId {
        let s: f64 = self.value(x).re().iter().sum();
        self.push(Op::SumRe(x), ComplexTensor::scalar(Complex::new(s, 0.0)))
    }

    /// Scalar `sum(re^2 + im^2)`.
    pub fn norm_sq(&mut self, x: NodeId) -> NodeId {
        let s = self.value(x).norm2_sq();
        self.push(Op::NormSq(x), ComplexTensor::scalar(Complex::new(s, 0.0)))
    }

    pub fn conv2d_complex(&mut self, input: NodeId, weight: NodeId, bias: NodeId) -> Result<NodeId> {
        let kernel = crate::conv::ConvKernel::new(
            self.value(weight).clone(),
            self.value(bias).clone(),
        )?;
        let value = crate::conv::conv2d_complex(self.value(input), &kernel)?;
        Ok(self.push(Op::ConvComplex { input, weight, bias }, value))
    }

    /// Real convolution over the real planes only; used by the two-channel
    /// real configuration. Weight and bias must be real-only leaves.
    pub fn conv2d_real(&mut self, input: NodeId, weight: NodeId, bias: NodeId) -> Result<NodeId> {
        let value = crate::conv::conv2d_real(
            self.value(input),
            self.value(weight),
            self.value(bias).re(),
        )?;
        Ok(self.push(Op::ConvReal { input, weight, bias }, value))
    }

    /// Complex `[C, H, W]` to real-only `[2C, H, W]`: real channels first,
    /// then imaginary channels.
    pub fn split_re_im(&mut self, x: NodeId) -> Result<NodeId> {
        let v = self.value(x);
        if v.shape().len() != 3 {
            return Err(Error::RankMismatch {
                context: "split_re_im",
                got: v.shape().len(),
                expected: 3,
            });
        }
        let (c, h, w) = (v.shape()[0], v.shape()[1], v.shape()[2]);
        let mut re = Vec::with_capacity(2 * v.numel());
        re.extend_from_slice(v.re());
        re.extend_from_slice(v.im());
        let value = ComplexTensor::from_real(vec![2 * c, h, w], re)?;
        Ok(self.push(Op::SplitReIm(x), value))
    }

    /// Real-only `[2C, H, W]` back to complex `[C, H, W]`.
    pub fn merge_re_im(&mut self, x: NodeId) -> Result<NodeId> {
        let v = self.value(x);
        if v.shape().len() != 3 || !v.shape()[0].is_multiple_of(2) {
            return Err(Error::Data(format!(
                "merge_re_im expects [2C, H, W], got {:?}",
                v.shape()
            )));
        }
        let (c2, h, w) = (v.shape()[0], v.shape()[1], v.shape()[2]);
        let half = c2 / 2 * h * w;
        let value = ComplexTensor::from_parts(
            vec![c2 / 2, h, w],
            v.re()[..half].to_vec(),
            v.re()[half..].to_vec(),
        )?;
        Ok(self.push(Op::MergeReIm(x), value))
    }

    pub fn activation(
        &mut self,
        kind: nn::ActivationKind,
        x: NodeId,
        bias: Option<NodeId>,
    ) -> Result<NodeId> {
        match kind {
            nn::ActivationKind::Relu2Ch | nn::ActivationKind::CRelu => Ok(self.crelu(x)),
            nn::ActivationKind::ZRelu => Ok(self.zrelu(x)),
            nn::ActivationKind::Cardioid => Ok(self.cardioid(x)),
            nn::ActivationKind::ModRelu => {
                let bias = bias.ok_or_else(|| {
                    Error::Config("modrelu activation requires a bias parameter".into())
                })?;
                self.modrelu(x, bias)
            }
        }
    }

    pub fn crelu(&mut self, x: NodeId) -> NodeId {
        let value = nn::crelu(self.value(x));
        self.push(Op::CRelu(x), value)
    }

    pub fn zrelu(&mut self, x: NodeId) -> NodeId {
        let value = nn::zrelu(self.value(x));
        self.push(Op::ZRelu(x), value)
    }

    pub fn modrelu(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let value = nn::modrelu(self.value(x), self.value(bias).re())?;
        Ok(self.push(Op::ModRelu { input: x, bias }, value))
    }

    pub fn cardioid(&mut self, x: NodeId) -> NodeId {
        let value = nn::cardioid(self.value(x));
        self.push(Op::Cardioid(x), value)
    }

    /// Data-consistency gradient step `y - t A^H (A y - k)`; `t` is a
    /// real-only scalar leaf, the acquisition tensors are constants.
    pub fn dc_step(
        &mut self,
        y: NodeId,
        t: NodeId,
        maps: &ComplexTensor,
        mask: &ComplexTensor,
        kspace: &ComplexTensor,
    ) -> Result<NodeId> {
        if self.value(t).shape() != [1] {
            return Err(Error::Data("dc step size must be a scalar".into()));
        }
        let t_val = self.value(t).re()[0];
        let ahay = sense_normal(self.value(y), maps, mask)?;
        let ahk = sense_adjoint(kspace, maps, mask)?;
        let residual = ahay.sub(&ahk)?;
        let value = residual
            .scale(Complex::new(-t_val, 0.0))
            .add(self.value(y))?;
        Ok(self.push(
            Op::DcStep {
                y,
                t,
                maps: maps.clone(),
                mask: mask.clone(),
                residual,
            },
            value,
        ))
    }

    pub fn avg_pool2(&mut self, x: NodeId) -> Result<NodeId> {
        let v = self.value(x);
        let (c, h, w) = (v.shape()[0], v.shape()[1], v.shape()[2]);
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::NotDivisible {
                context: "avg_pool2",
                size: h.max(w),
                divisor: 2,
            });
        }
        let (oh, ow) = (h / 2, w / 2);
        let mut out = ComplexTensor::zeros(&[c, oh, ow]);
        let (ore, oim) = out.planes_mut();
        for ci in 0..c {
            for y in 0..oh {
                for xx in 0..ow {
                    let mut sre = 0.0;
                    let mut sim = 0.0;
                    for dy in 0..2 {
                        for dx in 0..2 {
                            let t = (ci * h + 2 * y + dy) * w + 2 * xx + dx;
                            sre += v.re()[t];
                            sim += v.im()[t];
                        }
                    }
                    ore[(ci * oh + y) * ow + xx] = 0.25 * sre;
                    oim[(ci * oh + y) * ow + xx] = 0.25 * sim;
                }
            }
        }
        Ok(self.push(Op::AvgPool2(x), out))
    }

    pub fn upsample_nearest2(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x);
        let (c, h, w) = (v.shape()[0], v.shape()[1], v.shape()[2]);
        let mut out = ComplexTensor::zeros(&[c, 2 * h, 2 * w]);
        let (ore, oim) = out.planes_mut();
        for ci in 0..c {
            for y in 0..2 * h {
                for xx in 0..2 * w {
                    let s = (ci * h + y / 2) * w + xx / 2;
                    ore[(ci * 2 * h + y) * 2 * w + xx] = v.re()[s];
                    oim[(ci * 2 * h + y) * 2 * w + xx] = v.im()[s];
                }
            }
        }
        self.push(Op::UpsampleNearest2(x), out)
    }

    pub fn concat_ch(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape()[1..] != vb.shape()[1..] {
            return Err(Error::ShapeMismatch {
                context: "concat_ch",
                axis: 1,
                got: vb.shape()[1],
                expected: va.shape()[1],
            });
        }
        let c = va.shape()[0] + vb.shape()[0];
        let mut re = Vec::with_capacity(va.numel() + vb.numel());
        let mut im = Vec::with_capacity(va.numel() + vb.numel());
        re.extend_from_slice(va.re());
        re.extend_from_slice(vb.re());
        im.extend_from_slice(va.im());
        im.extend_from_slice(vb.im());
        let value =
            ComplexTensor::from_parts(vec![c, va.shape()[1], va.shape()[2]], re, im)?;
        Ok(self.push(Op::ConcatCh(a, b), value))
    }

    /// Mean over entries of `|d re| + |d im|`; real scalar output.
    pub fn l1_loss(&mut self, pred: NodeId, target: &ComplexTensor) -> Result<NodeId> {
        let p = self.value(pred);
        let diff = p.sub(target)?;
        let n = diff.numel() as f64;
        let s: f64 = diff
            .re()
            .iter()
            .zip(diff.im())
            .map(|(&a, &b)| a.abs() + b.abs())
            .sum();
        Ok(self.push(
            Op::L1Loss {
                pred,
                target: target.clone(),
            },
            ComplexTensor::scalar(Complex::new(s / n, 0.0)),
        ))
    }

    /// `||pred - target||_2 / ||target||_2` over complex entries.
    pub fn nrmse(&mut self, pred: NodeId, target: &ComplexTensor) -> Result<NodeId> {
        let nt = target.norm2();
        if nt == 0.0 {
            return Err(Error::ZeroTarget("nrmse"));
        }
        let diff = self.value(pred).sub(target)?;
        let nd = diff.norm2();
        Ok(self.push(
            Op::Nrmse {
                pred,
                target: target.clone(),
                norm_diff: nd,
                norm_target: nt,
            },
            ComplexTensor::scalar(Complex::new(nd / nt, 0.0)),
        ))
    }

    /// Smallest distance of any recorded activation or L1 input coordinate to
    /// its non-differentiability set: component zeros for the ReLU family,
    /// `|d| + b = 0` for modReLU, the origin for cardioid, and prediction ==
    /// target for the L1 loss. Gradient checks re-draw their evaluation point
    /// until this margin clears the finite-difference step comfortably.
    pub fn kink_margin(&self) -> f64 {
        fn component_zeros(v: &ComplexTensor) -> f64 {
            let mut m = f64::INFINITY;
            for t in 0..v.numel() {
                m = m.min(v.re()[t].abs()).min(v.im()[t].abs());
            }
            m
        }
        let mut margin = f64::INFINITY;
        for node in &self.nodes {
            match &node.op {
                Op::CRelu(x) | Op::ZRelu(x) => {
                    margin = margin.min(component_zeros(self.value(*x)));
                }
                Op::Cardioid(x) => {
                    let v = self.value(*x);
                    for t in 0..v.numel() {
                        margin = margin.min(v.re()[t].hypot(v.im()[t]));
                    }
                }
                Op::ModRelu { input, bias } => {
                    let v = self.value(*input);
                    let b = self.value(*bias);
                    let per = v.numel() / v.shape()[0];
                    for t in 0..v.numel() {
                        let r = v.re()[t].hypot(v.im()[t]);
                        margin = margin.min((r + b.re()[t / per]).abs());
                    }
                }
                Op::L1Loss { pred, target } => {
                    let p = self.value(*pred);
                    for t in 0..p.numel() {
                        margin = margin
                            .min((p.re()[t] - target.re()[t]).abs())
                            .min((p.im()[t] - target.im()[t]).abs());
                    }
                }
                _ => {}
            }
        }
        margin
    }

    /// Reverse pass from a real scalar loss node. Returns gradients for every
    /// named leaf; parameters the loss does not reach get zero gradients.
    pub fn backward(&self, loss: NodeId) -> Result<GradientSet> {
        let lv = self.value(loss);
        if lv.shape() != [1] || lv.im()[0] != 0.0 {
            return Err(Error::LossNotScalar);
        }
        let n = self.nodes.len();
        let mut adj: Vec<Option<ComplexTensor>> = Vec::with_capacity(n);
        adj.resize_with(n, || None);
        adj[loss.0] = Some(ComplexTensor::scalar(Complex::ONE));

        fn ensure<'a>(
            adj: &'a mut [Option<ComplexTensor>],
            id: NodeId,
            shape: &[usize],
        ) -> &'a mut ComplexTensor {
            adj[id.0].get_or_insert_with(|| ComplexTensor::zeros(shape))
        }

        for i in (0..n).rev() {
            let Some(out_adj) = adj[i].take() else {
                continue;
            };
            let (u, v) = (out_adj.re(), out_adj.im());
            match &self.nodes[i].op {
                Op::Leaf { .. } => {
                    // Restored below when gradients are collected.
                    adj[i] = Some(out_adj);
                }
                Op::Add(a, b) => {
                    for id in [*a, *b] {
                        let g = ensure(&mut adj, id, self.value(id).shape());
                        let (gr, gi) = g.planes_mut();
                        for t in 0..u.len() {
                            gr[t] += u[t];
                            gi[t] += v[t];
                        }
                    }
                }
                Op::Sub(a, b) => {
                    {
                        let g = ensure(&mut adj, *a, self.value(*a).shape());
                        let (gr, gi) = g.planes_mut();
                        for t in 0..u.len() {
                            gr[t] += u[t];
                            gi[t] += v[t];
                        }
                    }
                    let g = ensure(&mut adj, *b, self.value(*b).shape());
                    let (gr, gi) = g.planes_mut();
                    for t in 0..u.len() {
                        gr[t] -= u[t];
                        gi[t] -= v[t];
                    }
                }
                Op::Scale { x, alpha } => {
                    // d/dx of alpha*x under the real pairing: J^T = [re -im; im re]^T.
                    let g = ensure(&mut adj, *x, self.value(*x).shape());
                    let (gr, gi) = g.planes_mut();
                    for t in 0..u.len() {
                        gr[t] += alpha.re * u[t] + alpha.im * v[t];
                        gi[t] += -alpha.im * u[t] + alpha.re * v[t];
                    }
                }
                Op::MulElem(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    {
                        let g = ensure(&mut adj, *a, va.shape());
                        let (gr, gi) = g.planes_mut();
                        for t in 0..u.len() {
                            gr[t] += u[t] * vb.re()[t] + v[t] * vb.im()[t];
                            gi[t] += -u[t] * vb.im()[t] + v[t] * vb.re()[t];
                        }
                    }
                    let g = ensure(&mut adj, *b, vb.shape());
                    let (gr, gi) = g.planes_mut();
                    for t in 0..u.len() {
                        gr[t] += u[t] * va.re()[t] + v[t] * va.im()[t];
                        gi[t] += -u[t] * va.im()[t] + v[t] * va.re()[t];
                    }
                }
                Op::Conj(x) => {
                    let g = ensure(&mut adj, *x, self.value(*x).shape());
                    let (gr, gi) = g.planes_mut();
                    for t in 0..u.len() {
                        gr[t] += u[t];
                        gi[t] -= v[t];
                    }
                }
                Op::Reshape(x) => {
                    let g = ensure(&mut adj, *x, self.value(*x).shape());
                    let (gr, gi) = g.planes_mut();
                    for t in 0..u.len() {
                        gr[t] += u[t];
                        gi[t] += v[t];
                    }
                }
                Op::SumRe(x) => {
                    let s = u[0];
                    let g = ensure(&mut adj, *x, self.value(*x).shape());
                    for t in g.re_mut().iter_mut() {
                        *t += s;
                    }
                }
                Op::NormSq(x) => {
                    let s = u[0];
                    let val = self.value(*x).clone();
                    let g = ensure(&mut adj, *x, val.shape());
                    let (gr, gi) = g.planes_mut();
                    for t in 0..val.numel() {
                        gr[t] += s * 2.0 * val.re()[t];
                        gi[t] += s * 2.0 * val.im()[t];
                    }
                }
                Op::ConvComplex { input, weight, bias } => {
                    let x = self.value(*input);
                    let wt = self.value(*weight);
                    let dims = ConvDims {
                        in_ch: x.shape()[0],
                        out_ch: wt.shape()[0],
                        h: x.shape()[1],
                        w: x.shape()[2],
                        k: wt.shape()[2],
                    };
                    {
                        // da = X^T dRe + Y^T dIm ; db = -Y^T dRe + X^T dIm.
                        let g = ensure(&mut adj, *input, x.shape());
                        let (gr, gi) = g.planes_mut();
                        conv_bwd_input_acc(u, wt.re(), 1.0, dims, gr);
                        conv_bwd_input_acc(v, wt.im(), 1.0, dims, gr);
                        conv_bwd_input_acc(u, wt.im(), -1.0, dims, gi);
                        conv_bwd_input_acc(v, wt.re(), 1.0, dims, gi);
                    }
                    {
                        // dX = dRe . a + dIm . b ; dY = -dRe . b + dIm . a.
                        let g = ensure(&mut adj, *weight, wt.shape());
                        let (gr, gi) = g.planes_mut();
                        conv_bwd_weights_acc(u, x.re(), 1.0, dims, gr);
                        conv_bwd_weights_acc(v, x.im(), 1.0, dims, gr);
                        conv_bwd_weights_acc(u, x.im(), -1.0, dims, gi);
                        conv_bwd_weights_acc(v, x.re(), 1.0, dims, gi);
                    }
                    let g = ensure(&mut adj, *bias, &[dims.out_ch]);
                    let plane = dims.h * dims.w;
                    let (gr, gi) = g.planes_mut();
                    for o in 0..dims.out_ch {
                        gr[o] += u[o * plane..(o + 1) * plane].iter().sum::<f64>();
                        gi[o] += v[o * plane..(o + 1) * plane].iter().sum::<f64>();
                    }
                }
                Op::ConvReal { input, weight, bias } => {
                    let x = self.value(*input);
                    let wt = self.value(*weight);
                    let dims = ConvDims {
                        in_ch: x.shape()[0],
                        out_ch: wt.shape()[0],
                        h: x.shape()[1],
                        w: x.shape()[2],
                        k: wt.shape()[2],
                    };
                    {
                        let g = ensure(&mut adj, *input, x.shape());
                        conv_bwd_input_acc(u, wt.re(), 1.0, dims, g.re_mut());
                    }
                    {
                        let g = ensure(&mut adj, *weight, wt.shape());
                        conv_bwd_weights_acc(u, x.re(), 1.0, dims, g.re_mut());
                    }
                    let g = ensure(&mut adj, *bias, &[dims.out_ch]);
                    let plane = dims.h * dims.w;
                    for o in 0..dims.out_ch {
                        g.re_mut()[o] += u[o * plane..(o + 1) * plane].iter().sum::<f64>();
                    }
                }
                Op::SplitReIm(x) => {
                    let g = ensure(&mut adj, *x, self.value(*x).shape());
                    let half = g.numel();
                    let (gr, gi) = g.planes_mut();
                    for t in 0..half {
                        gr[t] += u[t];
                        gi[t] += u[half + t];
                    }
                }
                Op::MergeReIm(x) => {
                    let g = ensure(&mut adj, *x, self.value(*x).shape());
                    let half = u.len();
                    let gr = g.re_mut();
                    for t in 0..half {
                        gr[t] += u[t];
                        gr[half + t] += v[t];
                    }
                }
                Op::CRelu(x) => {
                    let val = self.value(*x).clone();
                    let g = ensure(&mut adj, *x, val.shape());
                    let (gr, gi) = g.planes_mut();
                    nn::crelu_backward(&val, u, v, gr, gi);
                }
                Op::ZRelu(x) => {
                    let val = self.value(*x).clone();
                    let g = ensure(&mut adj, *x, val.shape());
                    let (gr, gi) = g.planes_mut();
                    nn::zrelu_backward(&val, u, v, gr, gi);
                }
                Op::ModRelu { input, bias } => {
                    let val = self.value(*input).clone();
                    let bias_val = self.value(*bias).clone();
                    {
                        let mut bias_grad = vec![0.0; bias_val.numel()];
                        {
                            let g = ensure(&mut adj, *input, val.shape());
                            let (gr, gi) = g.planes_mut();
                            nn::modrelu_backward(
                                &val,
                                bias_val.re(),
                                u,
                                v,
                                gr,
                                gi,
                                &mut bias_grad,
                            );
                        }
                        let g = ensure(&mut adj, *bias, bias_val.shape());
                        for (o, db) in bias_grad.iter().enumerate() {
                            g.re_mut()[o] += db;
                        }
                    }
                }
                Op::Cardioid(x) => {
                    let val = self.value(*x).clone();
                    let g = ensure(&mut adj, *x, val.shape());
                    let (gr, gi) = g.planes_mut();
                    nn::cardioid_backward(&val, u, v, gr, gi);
                }
                Op::DcStep {
                    y,
                    t,
                    maps,
                    mask,
                    residual,
                } => {
                    let t_val = self.value(*t).re()[0];
                    // d/dy is the self-adjoint I - t A^H A.
                    let normal = sense_normal(&out_adj, maps, mask)?;
                    {
                        let g = ensure(&mut adj, *y, self.value(*y).shape());
                        let (gr, gi) = g.planes_mut();
                        for idx in 0..u.len() {
                            gr[idx] += u[idx] - t_val * normal.re()[idx];
                            gi[idx] += v[idx] - t_val * normal.im()[idx];
                        }
                    }
                    // d/dt = -residual.
                    let dt = -out_adj.dot_real(residual)?;
                    let g = ensure(&mut adj, *t, &[1]);
                    g.re_mut()[0] += dt;
                }
                Op::AvgPool2(x) => {
                    let shape = self.value(*x).shape().to_vec();
                    let (c, h, w) = (shape[0], shape[1], shape[2]);
                    let (oh, ow) = (h / 2, w / 2);
                    let g = ensure(&mut adj, *x, &shape);
                    let (gr, gi) = g.planes_mut();
                    for ci in 0..c {
                        for y in 0..oh {
                            for xx in 0..ow {
                                let s = 0.25;
                                let o = (ci * oh + y) * ow + xx;
                                for dy in 0..2 {
                                    for dx in 0..2 {
                                        let ti = (ci * h + 2 * y + dy) * w + 2 * xx + dx;
                                        gr[ti] += s * u[o];
                                        gi[ti] += s * v[o];
                                    }
                                }
                            }
                        }
                    }
                }
                Op::UpsampleNearest2(x) => {
                    let shape = self.value(*x).shape().to_vec();
                    let (c, h, w) = (shape[0], shape[1], shape[2]);
                    let g = ensure(&mut adj, *x, &shape);
                    let (gr, gi) = g.planes_mut();
                    for ci in 0..c {
                        for y in 0..2 * h {
                            for xx in 0..2 * w {
                                let o = (ci * 2 * h + y) * 2 * w + xx;
                                let s = (ci * h + y / 2) * w + xx / 2;
                                gr[s] += u[o];
                                gi[s] += v[o];
                            }
                        }
                    }
                }
                Op::ConcatCh(a, b) => {
                    let na = self.value(*a).numel();
                    {
                        let g = ensure(&mut adj, *a, self.value(*a).shape());
                        let (gr, gi) = g.planes_mut();
                        for t in 0..na {
                            gr[t] += u[t];
                            gi[t] += v[t];
                        }
                    }
                    let g = ensure(&mut adj, *b, self.value(*b).shape());
                    let nb = g.numel();
                    let (gr, gi) = g.planes_mut();
                    for t in 0..nb {
                        gr[t] += u[na + t];
                        gi[t] += v[na + t];
                    }
                }
                Op::L1Loss { pred, target } => {
                    let s = u[0];
                    let p = self.value(*pred).clone();
                    let n = p.numel() as f64;
                    let g = ensure(&mut adj, *pred, p.shape());
                    let (gr, gi) = g.planes_mut();
                    for t in 0..p.numel() {
                        // Subgradient 0 at exact zeros.
                        let dr = p.re()[t] - target.re()[t];
                        let di = p.im()[t] - target.im()[t];
                        gr[t] += s * dr.signum() * ((dr != 0.0) as i8 as f64) / n;
                        gi[t] += s * di.signum() * ((di != 0.0) as i8 as f64) / n;
                    }
                }
                Op::Nrmse {
                    pred,
                    target,
                    norm_diff,
                    norm_target,
                } => {
                    let s = u[0];
                    if *norm_diff > 0.0 {
                        let scale = s / (norm_diff * norm_target);
                        let p = self.value(*pred).clone();
                        let g = ensure(&mut adj, *pred, p.shape());
                        let (gr, gi) = g.planes_mut();
                        for t in 0..p.numel() {
                            gr[t] += scale * (p.re()[t] - target.re()[t]);
                            gi[t] += scale * (p.im()[t] - target.im()[t]);
                        }
                    }
                }
            }
        }

        // Collect gradients for every named leaf; disconnected ones are zero.
        let mut grads = BTreeMap::new();
        for (i, node) in self.nodes.iter().enumerate() {
            if let Op::Leaf {
                name: Some(name),
                kind,
            } = &node.op
            {
                let mut g = adj[i]
                    .clone()
                    .unwrap_or_else(|| ComplexTensor::zeros(node.value.shape()));
                if *kind == ParamKind::RealOnly {
                    // The imaginary plane is not a coordinate of this parameter.
                    g.im_mut().fill(0.0);
                }
                grads.insert(name.clone(), g);
            }
        }
        Ok(GradientSet { grads })
    }
}

// ---------------------------------------------------------------------------
// Finite-difference gradient checking.
// ---------------------------------------------------------------------------

fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

fn eval_scalar<F>(f: &F, params: &[(String, ComplexTensor, ParamKind)]) -> Result<f64>
where
    F: Fn(&mut Tape, &BTreeMap<String, NodeId>) -> Result<NodeId>,
{
    let mut tape = Tape::new();
    let mut ids = BTreeMap::new();
    for (name, value, kind) in params {
        ids.insert(name.clone(), tape.param(name, value.clone(), *kind));
    }
    let out = f(&mut tape, &ids)?;
    let v = tape.value(out);
    if v.shape() != [1] {
        return Err(Error::LossNotScalar);
    }
    Ok(v.re()[0])
}

/// Compare `backward` against central finite differences on every real
/// coordinate of every parameter; returns the worst relative error with
/// denominator `max(|analytic|, |numeric|, 1e-8)`.
pub fn gradcheck_many<F>(
    f: &F,
    params: &[(String, ComplexTensor, ParamKind)],
    step: f64,
) -> Result<f64>
where
    F: Fn(&mut Tape, &BTreeMap<String, NodeId>) -> Result<NodeId> + Sync,
{
    use rayon::prelude::*;
    // Analytic gradients once.
    let mut tape = Tape::new();
    let mut ids = BTreeMap::new();
    for (name, value, kind) in params {
        ids.insert(name.clone(), tape.param(name, value.clone(), *kind));
    }
    let out = f(&mut tape, &ids)?;
    let grads = tape.backward(out)?;

    // One job per real coordinate.
    let mut jobs: Vec<(usize, usize, bool)> = Vec::new(); // (param idx, flat idx, imaginary?)
    for (pi, (_, value, kind)) in params.iter().enumerate() {
        for t in 0..value.numel() {
            jobs.push((pi, t, false));
            if *kind == ParamKind::Complex {
                jobs.push((pi, t, true));
            }
        }
    }
    let errors: Result<Vec<f64>> = jobs
        .par_iter()
        .map(|&(pi, t, imag)| {
            let perturb = |delta: f64| -> Result<f64> {
                let mut shifted: Vec<(String, ComplexTensor, ParamKind)> = params.to_vec();
                {
                    let tensor = &mut shifted[pi].1;
                    if imag {
                        tensor.im_mut()[t] += delta;
                    } else {
                        tensor.re_mut()[t] += delta;
                    }
                }
                eval_scalar(f, &shifted)
            };
            let plus = perturb(step)?;
            let minus = perturb(-step)?;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::NonFinite {
                    what: format!("gradcheck eval of {}", params[pi].0),
                    index: t,
                });
            }
            let numeric = (plus - minus) / (2.0 * step);
            let g = grads.get(&params[pi].0).expect("named parameter");
            let analytic = if imag { g.im()[t] } else { g.re()[t] };
            if !analytic.is_finite() {
                return Err(Error::NonFinite {
                    what: format!("gradient of {}", params[pi].0),
                    index: t,
                });
            }
            Ok(relative_error(analytic, numeric))
        })
        .collect();
    Ok(errors?.into_iter().fold(0.0, f64::max))
}

/// Single-tensor gradient check of a scalar function built on the tape.
pub fn gradcheck<F>(f: &F, x: &ComplexTensor, step: f64) -> Result<f64>
where
    F: Fn(&mut Tape, NodeId) -> Result<NodeId> + Sync,
{
    let params = vec![("x".to_string(), x.clone(), ParamKind::Complex)];
    let wrapped = |tape: &mut Tape, ids: &BTreeMap<String, NodeId>| f(tape, ids["x"]);
    gradcheck_many(&wrapped, &params, step)
}
