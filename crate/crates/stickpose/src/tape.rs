//! Reverse-mode differentiation over a fixed op set.
//!
//! A `Tape` records every executed op in order; `backward` replays the record
//! in exact reverse order, accumulating adjoints additively on fan-out. Tapes
//! are cheap and short-lived: one per forward/backward pass, never shared
//! between passes. Reduction order inside every op is fixed, so replaying the
//! same computation is bit-identical regardless of available parallelism.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a value recorded on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

/// Convolution geometry. Cross-correlation, no kernel flip.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
}

impl ConvSpec {
    pub fn new(stride: usize, padding: usize, dilation: usize) -> Self {
        ConvSpec { stride, padding, dilation }
    }

    /// Stride 1, dilation 1, padding chosen so an odd k x k kernel preserves H x W.
    pub fn same(k: usize) -> Self {
        ConvSpec { stride: 1, padding: (k - 1) / 2, dilation: 1 }
    }

    pub fn out_size(&self, input: usize, k: usize) -> Option<usize> {
        let span = self.dilation * (k - 1) + 1;
        let padded = input + 2 * self.padding;
        if padded < span {
            return None;
        }
        Some((padded - span) / self.stride + 1)
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Conv2d { input: usize, kernel: usize, bias: usize, spec: ConvSpec },
    Add { a: usize, b: usize },
    Sub { a: usize, b: usize },
    Mul { a: usize, b: usize },
    Sigmoid { x: usize },
    Tanh { x: usize },
    Relu { x: usize },
    Scale { x: usize, c: f64 },
    Recip { x: usize },
    ScaleByScalar { x: usize, s: usize },
    Sum { x: usize },
    SumSqDiff { a: usize, b: usize },
    SliceChannel { x: usize, c: usize },
    ConcatChannels { xs: Vec<usize> },
}

pub struct Tape {
    values: Vec<Tensor>,
    ops: Vec<Op>,
    needs_grad: Vec<bool>,
    grads: Vec<Option<Vec<f64>>>,
    backward_done: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            values: Vec::new(),
            ops: Vec::new(),
            needs_grad: Vec::new(),
            grads: Vec::new(),
            backward_done: false,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Record an input value. Gradients are accumulated for it (and anything
    /// computed from it) only when `requires_grad` is set.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.values[v.0]
    }

    /// Gradient of the backward objective w.r.t. `v`. Zero if the objective
    /// does not depend on `v`.
    pub fn grad(&self, v: Var) -> Result<Tensor> {
        if !self.backward_done {
            return Err(Error::BackwardNotRun);
        }
        let t = self.values.get(v.0).ok_or(Error::NotOnTape(v.0))?;
        match &self.grads[v.0] {
            Some(g) => Tensor::new(t.shape().to_vec(), g.clone()),
            None => Ok(Tensor::zeros(t.shape())),
        }
    }

    fn push(&mut self, value: Tensor, op: Op, needs: bool) -> Var {
        let id = self.values.len();
        self.values.push(value);
        self.ops.push(op);
        self.needs_grad.push(needs);
        self.grads.push(None);
        Var(id)
    }

    fn check(&self, v: Var) -> Result<()> {
        if v.0 >= self.values.len() {
            return Err(Error::NotOnTape(v.0));
        }
        Ok(())
    }

    fn needs(&self, ids: &[usize]) -> bool {
        ids.iter().any(|&i| self.needs_grad[i])
    }

    // ── Forward ops ─────────────────────────────────────────────────────

    /// Cross-correlation of `input` [B, Cin, H, W] with `kernel`
    /// [Cout, Cin, k, k] plus per-channel `bias` [Cout].
    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Var, spec: ConvSpec) -> Result<Var> {
        self.check(input)?;
        self.check(kernel)?;
        self.check(bias)?;
        if spec.stride < 1 {
            return Err(Error::BadConvParam("stride"));
        }
        if spec.dilation < 1 {
            return Err(Error::BadConvParam("dilation"));
        }
        let (ish, ksh, bsh) = (
            self.values[input.0].shape().to_vec(),
            self.values[kernel.0].shape().to_vec(),
            self.values[bias.0].shape().to_vec(),
        );
        if ish.len() != 4 {
            return Err(Error::Shape {
                op: "conv2d",
                detail: format!("input must be rank 4 [B,Cin,H,W], got {:?}", ish),
            });
        }
        if ksh.len() != 4 {
            return Err(Error::Shape {
                op: "conv2d",
                detail: format!("kernel must be rank 4 [Cout,Cin,kh,kw], got {:?}", ksh),
            });
        }
        if ksh[1] != ish[1] {
            return Err(Error::Shape {
                op: "conv2d",
                detail: format!("kernel Cin {} != input Cin {}", ksh[1], ish[1]),
            });
        }
        if ksh[2] < 1 || ksh[3] < 1 {
            return Err(Error::BadConvParam("kernel size"));
        }
        if bsh != [ksh[0]] {
            return Err(Error::Shape {
                op: "conv2d",
                detail: format!("bias must be [Cout]={:?}, got {:?}", [ksh[0]], bsh),
            });
        }
        let (h, w) = (ish[2], ish[3]);
        let (kh, kw) = (ksh[2], ksh[3]);
        let ho = spec.out_size(h, kh);
        let wo = spec.out_size(w, kw);
        let (ho, wo) = match (ho, wo) {
            (Some(a), Some(b)) if a >= 1 && b >= 1 => (a, b),
            _ => {
                return Err(Error::EmptyConvOutput {
                    h,
                    w,
                    k: kh.max(kw),
                    stride: spec.stride,
                    padding: spec.padding,
                    dilation: spec.dilation,
                })
            }
        };
        let (batch, cout) = (ish[0], ksh[0]);
        let mut out = vec![0.0; batch * cout * ho * wo];
        kernels::conv2d_forward(
            self.values[input.0].data(),
            &ish,
            self.values[kernel.0].data(),
            &ksh,
            Some(self.values[bias.0].data()),
            spec,
            &mut out,
            (ho, wo),
        );
        let needs = self.needs(&[input.0, kernel.0, bias.0]);
        Ok(self.push(
            Tensor::new(vec![batch, cout, ho, wo], out)?,
            Op::Conv2d { input: input.0, kernel: kernel.0, bias: bias.0, spec },
            needs,
        ))
    }

    fn binary_same_shape(&mut self, op_name: &'static str, a: Var, b: Var) -> Result<(Vec<usize>, usize, usize)> {
        self.check(a)?;
        self.check(b)?;
        let sa = self.values[a.0].shape();
        let sb = self.values[b.0].shape();
        if sa != sb {
            return Err(Error::Shape {
                op: op_name,
                detail: format!("{:?} vs {:?}", sa, sb),
            });
        }
        Ok((sa.to_vec(), a.0, b.0))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (shape, ia, ib) = self.binary_same_shape("add", a, b)?;
        let data: Vec<f64> = self.values[ia]
            .data()
            .iter()
            .zip(self.values[ib].data())
            .map(|(x, y)| x + y)
            .collect();
        let needs = self.needs(&[ia, ib]);
        Ok(self.push(Tensor::new(shape, data)?, Op::Add { a: ia, b: ib }, needs))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (shape, ia, ib) = self.binary_same_shape("sub", a, b)?;
        let data: Vec<f64> = self.values[ia]
            .data()
            .iter()
            .zip(self.values[ib].data())
            .map(|(x, y)| x - y)
            .collect();
        let needs = self.needs(&[ia, ib]);
        Ok(self.push(Tensor::new(shape, data)?, Op::Sub { a: ia, b: ib }, needs))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (shape, ia, ib) = self.binary_same_shape("mul", a, b)?;
        let data: Vec<f64> = self.values[ia]
            .data()
            .iter()
            .zip(self.values[ib].data())
            .map(|(x, y)| x * y)
            .collect();
        let needs = self.needs(&[ia, ib]);
        Ok(self.push(Tensor::new(shape, data)?, Op::Mul { a: ia, b: ib }, needs))
    }

    fn unary(&mut self, x: Var, op: Op, f: impl Fn(f64) -> f64) -> Result<Var> {
        self.check(x)?;
        let data: Vec<f64> = self.values[x.0].data().iter().map(|&v| f(v)).collect();
        let shape = self.values[x.0].shape().to_vec();
        let needs = self.needs_grad[x.0];
        Ok(self.push(Tensor::new(shape, data)?, op, needs))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Sigmoid { x: x.0 }, |v| 1.0 / (1.0 + (-v).exp()))
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Tanh { x: x.0 }, f64::tanh)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Relu { x: x.0 }, |v| v.max(0.0))
    }

    /// Multiply by a compile-time constant (the only broadcasting we allow).
    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        self.unary(x, Op::Scale { x: x.0, c }, |v| c * v)
    }

    pub fn recip(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Recip { x: x.0 }, |v| 1.0 / v)
    }

    /// Multiply every element of `x` by the scalar tensor `s` (shape [1]).
    pub fn scale_by(&mut self, x: Var, s: Var) -> Result<Var> {
        self.check(x)?;
        self.check(s)?;
        if self.values[s.0].numel() != 1 {
            return Err(Error::Shape {
                op: "scale_by",
                detail: format!("scale factor must be a scalar, got {:?}", self.values[s.0].shape()),
            });
        }
        let sv = self.values[s.0].item();
        let data: Vec<f64> = self.values[x.0].data().iter().map(|&v| v * sv).collect();
        let shape = self.values[x.0].shape().to_vec();
        let needs = self.needs(&[x.0, s.0]);
        Ok(self.push(Tensor::new(shape, data)?, Op::ScaleByScalar { x: x.0, s: s.0 }, needs))
    }

    /// Sum of all elements, as a scalar tensor. Fixed left-to-right order.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let mut acc = 0.0;
        for &v in self.values[x.0].data() {
            acc += v;
        }
        let needs = self.needs_grad[x.0];
        Ok(self.push(Tensor::scalar(acc), Op::Sum { x: x.0 }, needs))
    }

    /// Σ (a - b)² over all elements, as a scalar tensor.
    pub fn sum_sq_diff(&mut self, a: Var, b: Var) -> Result<Var> {
        let (_, ia, ib) = self.binary_same_shape("sum_sq_diff", a, b)?;
        let mut acc = 0.0;
        for (x, y) in self.values[ia].data().iter().zip(self.values[ib].data()) {
            let d = x - y;
            acc += d * d;
        }
        let needs = self.needs(&[ia, ib]);
        Ok(self.push(Tensor::scalar(acc), Op::SumSqDiff { a: ia, b: ib }, needs))
    }

    /// View channel `c` of a rank-4 tensor as [B, 1, H, W].
    pub fn slice_channel(&mut self, x: Var, c: usize) -> Result<Var> {
        self.check(x)?;
        let sh = self.values[x.0].shape().to_vec();
        if sh.len() != 4 {
            return Err(Error::Shape {
                op: "slice_channel",
                detail: format!("expected rank 4, got {:?}", sh),
            });
        }
        if c >= sh[1] {
            return Err(Error::Shape {
                op: "slice_channel",
                detail: format!("channel {} out of range for {:?}", c, sh),
            });
        }
        let (b, ch, h, w) = (sh[0], sh[1], sh[2], sh[3]);
        let plane = h * w;
        let mut data = Vec::with_capacity(b * plane);
        let src = self.values[x.0].data();
        for bi in 0..b {
            let base = (bi * ch + c) * plane;
            data.extend_from_slice(&src[base..base + plane]);
        }
        let needs = self.needs_grad[x.0];
        Ok(self.push(
            Tensor::new(vec![b, 1, h, w], data)?,
            Op::SliceChannel { x: x.0, c },
            needs,
        ))
    }

    /// Concatenate rank-4 tensors along the channel axis.
    pub fn concat_channels(&mut self, xs: &[Var]) -> Result<Var> {
        if xs.is_empty() {
            return Err(Error::Shape { op: "concat_channels", detail: "empty input list".into() });
        }
        for &v in xs {
            self.check(v)?;
        }
        let first = self.values[xs[0].0].shape().to_vec();
        if first.len() != 4 {
            return Err(Error::Shape {
                op: "concat_channels",
                detail: format!("expected rank 4, got {:?}", first),
            });
        }
        let (b, h, w) = (first[0], first[2], first[3]);
        let mut c_total = 0;
        for &v in xs {
            let sh = self.values[v.0].shape();
            if sh.len() != 4 || sh[0] != b || sh[2] != h || sh[3] != w {
                return Err(Error::Shape {
                    op: "concat_channels",
                    detail: format!("inconsistent member shape {:?} vs [{},_,{},{}]", sh, b, h, w),
                });
            }
            c_total += sh[1];
        }
        let plane = h * w;
        let mut data = vec![0.0; b * c_total * plane];
        for bi in 0..b {
            let mut c_off = 0;
            for &v in xs {
                let sh = self.values[v.0].shape();
                let ci = sh[1];
                let src = self.values[v.0].data();
                let dst_base = (bi * c_total + c_off) * plane;
                let src_base = bi * ci * plane;
                data[dst_base..dst_base + ci * plane]
                    .copy_from_slice(&src[src_base..src_base + ci * plane]);
                c_off += ci;
            }
        }
        let ids: Vec<usize> = xs.iter().map(|v| v.0).collect();
        let needs = self.needs(&ids);
        Ok(self.push(
            Tensor::new(vec![b, c_total, h, w], data)?,
            Op::ConcatChannels { xs: ids },
            needs,
        ))
    }

    /// Smallest |x| over all elements feeding a relu on this tape
    /// (infinity when none). Finite differences are only trustworthy when
    /// this margin comfortably exceeds the probe step.
    pub fn min_abs_relu_input(&self) -> f64 {
        let mut m = f64::INFINITY;
        for op in &self.ops {
            if let Op::Relu { x } = op {
                for &v in self.values[*x].data() {
                    m = m.min(v.abs());
                }
            }
        }
        m
    }

    /// The input values of every relu on the tape, in execution order.
    pub fn relu_inputs(&self) -> Vec<Vec<f64>> {
        self.ops
            .iter()
            .filter_map(|op| match op {
                Op::Relu { x } => Some(self.values[*x].data().to_vec()),
                _ => None,
            })
            .collect()
    }

    // ── Backward ────────────────────────────────────────────────────────

    /// Accumulate gradients of the scalar `objective` into every
    /// requires-grad leaf. May be called once per tape.
    pub fn backward(&mut self, objective: Var) -> Result<()> {
        self.check(objective)?;
        if self.backward_done {
            return Err(Error::BackwardAlreadyRun);
        }
        let obj_shape = self.values[objective.0].shape();
        if self.values[objective.0].numel() != 1 {
            return Err(Error::NonScalarObjective(obj_shape.to_vec()));
        }
        self.backward_done = true;
        self.grads[objective.0] = Some(vec![1.0]);

        for i in (0..=objective.0).rev() {
            let g = match self.grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            let op = self.ops[i].clone();
            self.apply_adjoint(i, &op, &g);
            // keep the grad so leaves (and any inspected node) can report it
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    fn accum(&mut self, id: usize, f: impl FnOnce(&mut [f64])) {
        if !self.needs_grad[id] {
            return;
        }
        let n = self.values[id].numel();
        let buf = self.grads[id].get_or_insert_with(|| vec![0.0; n]);
        f(buf);
    }

    fn apply_adjoint(&mut self, out_id: usize, op: &Op, g: &[f64]) {
        match *op {
            Op::Leaf => {}
            Op::Conv2d { input, kernel, bias, spec } => {
                let ish = self.values[input].shape().to_vec();
                let ksh = self.values[kernel].shape().to_vec();
                let osh = self.values[out_id].shape().to_vec();
                if self.needs_grad[bias] {
                    let cout = ksh[0];
                    let plane = osh[2] * osh[3];
                    let batch = osh[0];
                    self.accum(bias, |dst| {
                        for b in 0..batch {
                            for co in 0..cout {
                                let base = (b * cout + co) * plane;
                                let mut acc = 0.0;
                                for &gv in &g[base..base + plane] {
                                    acc += gv;
                                }
                                dst[co] += acc;
                            }
                        }
                    });
                }
                if self.needs_grad[kernel] {
                    let inp = self.values[input].data();
                    let mut dker = vec![0.0; self.values[kernel].numel()];
                    kernels::conv2d_backward_kernel(inp, &ish, &ksh, spec, g, (osh[2], osh[3]), &mut dker);
                    // split borrow: write after compute
                    let buf = {
                        let n = self.values[kernel].numel();
                        self.grads[kernel].get_or_insert_with(|| vec![0.0; n])
                    };
                    for (d, s) in buf.iter_mut().zip(&dker) {
                        *d += s;
                    }
                }
                if self.needs_grad[input] {
                    let ker = self.values[kernel].data();
                    let mut dinp = vec![0.0; self.values[input].numel()];
                    kernels::conv2d_backward_input(ker, &ish, &ksh, spec, g, (osh[2], osh[3]), &mut dinp);
                    let buf = {
                        let n = self.values[input].numel();
                        self.grads[input].get_or_insert_with(|| vec![0.0; n])
                    };
                    for (d, s) in buf.iter_mut().zip(&dinp) {
                        *d += s;
                    }
                }
            }
            Op::Add { a, b } => {
                self.accum(a, |dst| {
                    for (d, gv) in dst.iter_mut().zip(g) {
                        *d += gv;
                    }
                });
                self.accum(b, |dst| {
                    for (d, gv) in dst.iter_mut().zip(g) {
                        *d += gv;
                    }
                });
            }
            Op::Sub { a, b } => {
                self.accum(a, |dst| {
                    for (d, gv) in dst.iter_mut().zip(g) {
                        *d += gv;
                    }
                });
                self.accum(b, |dst| {
                    for (d, gv) in dst.iter_mut().zip(g) {
                        *d -= gv;
                    }
                });
            }
            Op::Mul { a, b } => {
                if self.needs_grad[a] {
                    let bv: Vec<f64> = self.values[b].data().to_vec();
                    self.accum(a, |dst| {
                        for ((d, gv), x) in dst.iter_mut().zip(g).zip(&bv) {
                            *d += gv * x;
                        }
                    });
                }
                if self.needs_grad[b] {
                    let av: Vec<f64> = self.values[a].data().to_vec();
                    self.accum(b, |dst| {
                        for ((d, gv), x) in dst.iter_mut().zip(g).zip(&av) {
                            *d += gv * x;
                        }
                    });
                }
            }
            Op::Sigmoid { x } => {
                let out: Vec<f64> = self.values[out_id].data().to_vec();
                self.accum(x, |dst| {
                    for ((d, gv), s) in dst.iter_mut().zip(g).zip(&out) {
                        *d += gv * s * (1.0 - s);
                    }
                });
            }
            Op::Tanh { x } => {
                let out: Vec<f64> = self.values[out_id].data().to_vec();
                self.accum(x, |dst| {
                    for ((d, gv), t) in dst.iter_mut().zip(g).zip(&out) {
                        *d += gv * (1.0 - t * t);
                    }
                });
            }
            Op::Relu { x } => {
                let inp: Vec<f64> = self.values[x].data().to_vec();
                self.accum(x, |dst| {
                    for ((d, gv), v) in dst.iter_mut().zip(g).zip(&inp) {
                        if *v > 0.0 {
                            *d += gv;
                        }
                    }
                });
            }
            Op::Scale { x, c } => {
                self.accum(x, |dst| {
                    for (d, gv) in dst.iter_mut().zip(g) {
                        *d += c * gv;
                    }
                });
            }
            Op::Recip { x } => {
                let out: Vec<f64> = self.values[out_id].data().to_vec();
                self.accum(x, |dst| {
                    for ((d, gv), y) in dst.iter_mut().zip(g).zip(&out) {
                        *d -= gv * y * y;
                    }
                });
            }
            Op::ScaleByScalar { x, s } => {
                let sv = self.values[s].item();
                if self.needs_grad[x] {
                    self.accum(x, |dst| {
                        for (d, gv) in dst.iter_mut().zip(g) {
                            *d += sv * gv;
                        }
                    });
                }
                if self.needs_grad[s] {
                    let xv: Vec<f64> = self.values[x].data().to_vec();
                    self.accum(s, |dst| {
                        let mut acc = 0.0;
                        for (gv, x) in g.iter().zip(&xv) {
                            acc += gv * x;
                        }
                        dst[0] += acc;
                    });
                }
            }
            Op::Sum { x } => {
                let g0 = g[0];
                self.accum(x, |dst| {
                    for d in dst.iter_mut() {
                        *d += g0;
                    }
                });
            }
            Op::SumSqDiff { a, b } => {
                let g0 = g[0];
                if self.needs_grad[a] || self.needs_grad[b] {
                    let diff: Vec<f64> = self.values[a]
                        .data()
                        .iter()
                        .zip(self.values[b].data())
                        .map(|(x, y)| x - y)
                        .collect();
                    self.accum(a, |dst| {
                        for (d, dv) in dst.iter_mut().zip(&diff) {
                            *d += 2.0 * g0 * dv;
                        }
                    });
                    self.accum(b, |dst| {
                        for (d, dv) in dst.iter_mut().zip(&diff) {
                            *d -= 2.0 * g0 * dv;
                        }
                    });
                }
            }
            Op::SliceChannel { x, c } => {
                let sh = self.values[x].shape().to_vec();
                let (b, ch, h, w) = (sh[0], sh[1], sh[2], sh[3]);
                let plane = h * w;
                self.accum(x, |dst| {
                    for bi in 0..b {
                        let base = (bi * ch + c) * plane;
                        let gbase = bi * plane;
                        for j in 0..plane {
                            dst[base + j] += g[gbase + j];
                        }
                    }
                });
            }
            Op::ConcatChannels { ref xs } => {
                let osh = self.values[out_id].shape().to_vec();
                let (b, c_total, h, w) = (osh[0], osh[1], osh[2], osh[3]);
                let plane = h * w;
                let mut c_off = 0;
                for &xid in xs {
                    let ci = self.values[xid].shape()[1];
                    if self.needs_grad[xid] {
                        self.accum(xid, |dst| {
                            for bi in 0..b {
                                let src_base = (bi * c_total + c_off) * plane;
                                let dst_base = bi * ci * plane;
                                for j in 0..ci * plane {
                                    dst[dst_base + j] += g[src_base + j];
                                }
                            }
                        });
                    }
                    c_off += ci;
                }
            }
        }
    }
}

/// Raw convolution loops shared by forward and both adjoints. Output
/// positions are visited in a fixed order for exact replayability.
pub(crate) mod kernels {
    use super::ConvSpec;

    /// Valid output coordinate range [lo, hi] for one kernel tap, i.e. all o
    /// with 0 <= o*stride + k_off - pad < in_size.
    #[inline]
    fn tap_range(k_off: i64, pad: i64, stride: i64, in_size: i64, out_size: i64) -> (i64, i64) {
        let lo = (pad - k_off + stride - 1).div_euclid(stride).max(0);
        let hi = (in_size - 1 + pad - k_off).div_euclid(stride).min(out_size - 1);
        (lo, hi)
    }

    pub fn conv2d_forward(
        inp: &[f64],
        ish: &[usize],
        ker: &[f64],
        ksh: &[usize],
        bias: Option<&[f64]>,
        spec: ConvSpec,
        out: &mut [f64],
        (ho, wo): (usize, usize),
    ) {
        let (batch, cin, h, w) = (ish[0], ish[1], ish[2], ish[3]);
        let (cout, kh, kw) = (ksh[0], ksh[2], ksh[3]);
        let (s, p, d) = (spec.stride as i64, spec.padding as i64, spec.dilation as i64);
        for b in 0..batch {
            for co in 0..cout {
                let out_plane = &mut out[(b * cout + co) * ho * wo..][..ho * wo];
                if let Some(bias) = bias {
                    out_plane.fill(bias[co]);
                }
                for ci in 0..cin {
                    let in_plane = &inp[(b * cin + ci) * h * w..][..h * w];
                    for ky in 0..kh {
                        let kyd = ky as i64 * d;
                        let (oy_lo, oy_hi) = tap_range(kyd, p, s, h as i64, ho as i64);
                        for kx in 0..kw {
                            let wv = ker[((co * cin + ci) * kh + ky) * kw + kx];
                            let kxd = kx as i64 * d;
                            let (ox_lo, ox_hi) = tap_range(kxd, p, s, w as i64, wo as i64);
                            if oy_lo > oy_hi || ox_lo > ox_hi {
                                continue;
                            }
                            for oy in oy_lo..=oy_hi {
                                let iy = oy * s + kyd - p;
                                let orow = &mut out_plane[(oy as usize) * wo..][..wo];
                                let irow = &in_plane[(iy as usize) * w..][..w];
                                let ix0 = ox_lo * s + kxd - p;
                                if s == 1 {
                                    let n = (ox_hi - ox_lo + 1) as usize;
                                    let orow = &mut orow[ox_lo as usize..][..n];
                                    let irow = &irow[ix0 as usize..][..n];
                                    for i in 0..n {
                                        orow[i] += wv * irow[i];
                                    }
                                } else {
                                    let mut ix = ix0;
                                    for ox in ox_lo..=ox_hi {
                                        orow[ox as usize] += wv * irow[ix as usize];
                                        ix += s;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    pub fn conv2d_backward_input(
        ker: &[f64],
        ish: &[usize],
        ksh: &[usize],
        spec: ConvSpec,
        g: &[f64],
        (ho, wo): (usize, usize),
        dinp: &mut [f64],
    ) {
        let (batch, cin, h, w) = (ish[0], ish[1], ish[2], ish[3]);
        let (cout, kh, kw) = (ksh[0], ksh[2], ksh[3]);
        let (s, p, d) = (spec.stride as i64, spec.padding as i64, spec.dilation as i64);
        for b in 0..batch {
            for co in 0..cout {
                let g_plane = &g[(b * cout + co) * ho * wo..][..ho * wo];
                for ci in 0..cin {
                    let din_plane = &mut dinp[(b * cin + ci) * h * w..][..h * w];
                    for ky in 0..kh {
                        let kyd = ky as i64 * d;
                        let (oy_lo, oy_hi) = tap_range(kyd, p, s, h as i64, ho as i64);
                        for kx in 0..kw {
                            let wv = ker[((co * cin + ci) * kh + ky) * kw + kx];
                            let kxd = kx as i64 * d;
                            let (ox_lo, ox_hi) = tap_range(kxd, p, s, w as i64, wo as i64);
                            if oy_lo > oy_hi || ox_lo > ox_hi {
                                continue;
                            }
                            for oy in oy_lo..=oy_hi {
                                let iy = oy * s + kyd - p;
                                let grow = &g_plane[(oy as usize) * wo..][..wo];
                                let drow = &mut din_plane[(iy as usize) * w..][..w];
                                let ix0 = ox_lo * s + kxd - p;
                                if s == 1 {
                                    let n = (ox_hi - ox_lo + 1) as usize;
                                    let grow = &grow[ox_lo as usize..][..n];
                                    let drow = &mut drow[ix0 as usize..][..n];
                                    for i in 0..n {
                                        drow[i] += wv * grow[i];
                                    }
                                } else {
                                    let mut ix = ix0;
                                    for ox in ox_lo..=ox_hi {
                                        drow[ix as usize] += wv * grow[ox as usize];
                                        ix += s;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    pub fn conv2d_backward_kernel(
        inp: &[f64],
        ish: &[usize],
        ksh: &[usize],
        spec: ConvSpec,
        g: &[f64],
        (ho, wo): (usize, usize),
        dker: &mut [f64],
    ) {
        let (batch, cin, h, w) = (ish[0], ish[1], ish[2], ish[3]);
        let (cout, kh, kw) = (ksh[0], ksh[2], ksh[3]);
        let (s, p, d) = (spec.stride as i64, spec.padding as i64, spec.dilation as i64);
        for b in 0..batch {
            for co in 0..cout {
                let g_plane = &g[(b * cout + co) * ho * wo..][..ho * wo];
                for ci in 0..cin {
                    let in_plane = &inp[(b * cin + ci) * h * w..][..h * w];
                    for ky in 0..kh {
                        let kyd = ky as i64 * d;
                        let (oy_lo, oy_hi) = tap_range(kyd, p, s, h as i64, ho as i64);
                        for kx in 0..kw {
                            let kxd = kx as i64 * d;
                            let (ox_lo, ox_hi) = tap_range(kxd, p, s, w as i64, wo as i64);
                            if oy_lo > oy_hi || ox_lo > ox_hi {
                                continue;
                            }
                            let mut acc = 0.0;
                            for oy in oy_lo..=oy_hi {
                                let iy = oy * s + kyd - p;
                                let grow = &g_plane[(oy as usize) * wo..][..wo];
                                let irow = &in_plane[(iy as usize) * w..][..w];
                                let ix0 = ox_lo * s + kxd - p;
                                if s == 1 {
                                    let n = (ox_hi - ox_lo + 1) as usize;
                                    let grow = &grow[ox_lo as usize..][..n];
                                    let irow = &irow[ix0 as usize..][..n];
                                    for i in 0..n {
                                        acc += grow[i] * irow[i];
                                    }
                                } else {
                                    let mut ix = ix0;
                                    for ox in ox_lo..=ox_hi {
                                        acc += grow[ox as usize] * irow[ix as usize];
                                        ix += s;
                                    }
                                }
                            }
                            dker[((co * cin + ci) * kh + ky) * kw + kx] += acc;
                        }
                    }
                }
            }
        }
    }
}
