//! Reverse-mode automatic differentiation over dense matrices.
//!
//! A [`Tape`] owns every value produced during a forward pass. Values that do
//! not depend on a gradient-requiring leaf are stored as constants and carry
//! no recorded operation, so they are skipped entirely by [`Tape::backward`].
//! Handles ([`Var`]) are tagged with the tape generation and become invalid
//! after [`Tape::clear`].

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{gemm_acc, gemm_at_acc, gemm_bt_acc, Tensor};

/// Variance floor used by [`Tape::layer_norm`].
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Handle to a value stored on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    index: u32,
    generation: u32,
}

impl Var {
    pub fn index(self) -> usize {
        self.index as usize
    }
}

#[derive(Debug)]
enum Op {
    Constant,
    Leaf,
    MatMul(usize, usize),
    Transpose(usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddRow(usize, usize),
    Scale(usize, f64),
    Relu(usize),
    Softmax(usize),
    MaskFill(usize, Vec<bool>),
    LayerNorm {
        x: usize,
        gain: usize,
        bias: usize,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    ConcatRows(usize, usize),
    ConcatCols(Vec<usize>),
    Dropout(usize, Vec<f64>),
    Reshape(usize),
    Sum(usize),
    Rmse {
        pred: usize,
        target: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    requires_grad: bool,
    op: Op,
}

/// Single-owner computation graph in topological (insertion) order.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    generation: u32,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of values currently held, constants included.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Number of recorded operations that participate in backpropagation.
    pub fn recorded_len(&self) -> usize {
        self.nodes.iter().filter(|n| n.requires_grad).count()
    }

    /// Drops every node. All outstanding [`Var`]s become stale.
    pub fn clear(&mut self) {
        self.nodes.clear();
        self.grads.clear();
        self.generation = self.generation.wrapping_add(1);
    }

    fn idx(&self, v: Var) -> usize {
        assert_eq!(
            v.generation, self.generation,
            "stale Var used after Tape::clear"
        );
        v.index as usize
    }

    fn push(&mut self, value: Tensor, requires_grad: bool, op: Op) -> Var {
        let index = self.nodes.len();
        let op = if requires_grad { op } else { Op::Constant };
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        self.grads.push(None);
        Var {
            index: index as u32,
            generation: self.generation,
        }
    }

    /// Stores a value that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, false, Op::Constant)
    }

    /// Stores a gradient-requiring leaf (a trainable parameter or an input
    /// under test).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, true, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[self.idx(v)].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[self.idx(v)].requires_grad
    }

    /// Accumulated gradient, if any backward pass reached `v`.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads[self.idx(v)].as_deref()
    }

    pub fn zero_grads(&mut self) {
        for g in &mut self.grads {
            *g = None;
        }
    }

    fn rg(&self, i: usize) -> bool {
        self.nodes[i].requires_grad
    }

    fn dims(&self, v: Var) -> Result<(usize, usize)> {
        self.value(v).dims()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.idx(a), self.idx(b));
        let (m, k) = self.dims(a)?;
        let (k2, n) = self.dims(b)?;
        if k != k2 {
            return Err(Error::Dimension {
                op: "matmul",
                lhs: self.value(a).shape().to_vec(),
                rhs: self.value(b).shape().to_vec(),
            });
        }
        let mut out = vec![0.0; m * n];
        gemm_acc(
            self.nodes[ia].value.data(),
            self.nodes[ib].value.data(),
            &mut out,
            m,
            k,
            n,
        );
        let rg = self.rg(ia) || self.rg(ib);
        Ok(self.push(Tensor::matrix(m, n, out)?, rg, Op::MatMul(ia, ib)))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a);
        let t = self.nodes[ia].value.transposed()?;
        let rg = self.rg(ia);
        Ok(self.push(t, rg, Op::Transpose(ia)))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::Dimension {
                op,
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (va, vb) = (self.value(a), self.value(b));
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(va.shape().to_vec(), data).expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let t = self.zip_with(a, b, |x, y| x + y);
        let (ia, ib) = (self.idx(a), self.idx(b));
        let rg = self.rg(ia) || self.rg(ib);
        Ok(self.push(t, rg, Op::Add(ia, ib)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let t = self.zip_with(a, b, |x, y| x - y);
        let (ia, ib) = (self.idx(a), self.idx(b));
        let rg = self.rg(ia) || self.rg(ib);
        Ok(self.push(t, rg, Op::Sub(ia, ib)))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let t = self.zip_with(a, b, |x, y| x * y);
        let (ia, ib) = (self.idx(a), self.idx(b));
        let rg = self.rg(ia) || self.rg(ib);
        Ok(self.push(t, rg, Op::Mul(ia, ib)))
    }

    /// Adds a length-`n` row vector to every row of an `m × n` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (m, n) = self.dims(a)?;
        if self.value(row).numel() != n {
            return Err(Error::Dimension {
                op: "add_row",
                lhs: self.value(a).shape().to_vec(),
                rhs: self.value(row).shape().to_vec(),
            });
        }
        let (ia, ib) = (self.idx(a), self.idx(row));
        let bias = self.nodes[ib].value.data();
        let mut out = self.nodes[ia].value.data().to_vec();
        for r in 0..m {
            for (o, &b) in out[r * n..(r + 1) * n].iter_mut().zip(bias) {
                *o += b;
            }
        }
        let rg = self.rg(ia) || self.rg(ib);
        let shape = self.nodes[ia].value.shape().to_vec();
        Ok(self.push(Tensor::new(shape, out)?, rg, Op::AddRow(ia, ib)))
    }

    /// `x · w + b` with `b` broadcast over rows.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xw = self.matmul(x, w)?;
        self.add_row(xw, b)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let ia = self.idx(a);
        let t = self.nodes[ia].value.map(|x| x * c);
        let rg = self.rg(ia);
        self.push(t, rg, Op::Scale(ia, c))
    }

    /// Elementwise `max(0, x)`; the subgradient at 0 is 0.
    pub fn relu(&mut self, a: Var) -> Var {
        let ia = self.idx(a);
        let t = self.nodes[ia].value.map(|x| if x > 0.0 { x } else { 0.0 });
        let rg = self.rg(ia);
        self.push(t, rg, Op::Relu(ia))
    }

    /// Row-wise softmax with max subtraction. Entries equal to `-inf` get zero
    /// weight; a row made entirely of `-inf` maps to an all-zero row.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a);
        let (m, n) = self.dims(a)?;
        let src = self.nodes[ia].value.data();
        if src.iter().any(|x| x.is_nan()) {
            return Err(Error::Numeric("softmax_rows input".into()));
        }
        let mut out = vec![0.0; m * n];
        for r in 0..m {
            let row = &src[r * n..(r + 1) * n];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                continue;
            }
            let dst = &mut out[r * n..(r + 1) * n];
            let mut total = 0.0;
            for (d, &x) in dst.iter_mut().zip(row) {
                *d = libm::exp(x - max);
                total += *d;
            }
            for d in dst.iter_mut() {
                *d /= total;
            }
        }
        let rg = self.rg(ia);
        let shape = self.nodes[ia].value.shape().to_vec();
        Ok(self.push(Tensor::new(shape, out)?, rg, Op::Softmax(ia)))
    }

    /// Overwrites entries whose mask flag is `true` with `-inf`.
    pub fn mask_fill_neg_inf(&mut self, a: Var, mask: &[bool]) -> Result<Var> {
        let ia = self.idx(a);
        if mask.len() != self.nodes[ia].value.numel() {
            return Err(Error::Dimension {
                op: "mask_fill",
                lhs: self.value(a).shape().to_vec(),
                rhs: vec![mask.len()],
            });
        }
        let mut t = self.nodes[ia].value.clone();
        for (x, &m) in t.data_mut().iter_mut().zip(mask) {
            if m {
                *x = f64::NEG_INFINITY;
            }
        }
        let rg = self.rg(ia);
        Ok(self.push(t, rg, Op::MaskFill(ia, mask.to_vec())))
    }

    /// Per-row normalisation to zero mean and unit variance followed by a
    /// learned gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let (m, n) = self.dims(x)?;
        if n == 0 {
            return Err(Error::Usage("layer_norm needs at least one column".into()));
        }
        for p in [gain, bias] {
            if self.value(p).numel() != n {
                return Err(Error::Dimension {
                    op: "layer_norm",
                    lhs: self.value(x).shape().to_vec(),
                    rhs: self.value(p).shape().to_vec(),
                });
            }
        }
        let (ix, ig, ib) = (self.idx(x), self.idx(gain), self.idx(bias));
        let src = self.nodes[ix].value.data();
        let g = self.nodes[ig].value.data();
        let b = self.nodes[ib].value.data();
        let mut xhat = vec![0.0; m * n];
        let mut inv_std = vec![0.0; m];
        let mut out = vec![0.0; m * n];
        for r in 0..m {
            let row = &src[r * n..(r + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let inv = 1.0 / libm::sqrt(var + LAYER_NORM_EPS);
            inv_std[r] = inv;
            for j in 0..n {
                let h = (row[j] - mean) * inv;
                xhat[r * n + j] = h;
                out[r * n + j] = h * g[j] + b[j];
            }
        }
        let rg = self.rg(ix) || self.rg(ig) || self.rg(ib);
        let shape = self.nodes[ix].value.shape().to_vec();
        let op = Op::LayerNorm {
            x: ix,
            gain: ig,
            bias: ib,
            xhat: if rg { xhat } else { Vec::new() },
            inv_std,
        };
        Ok(self.push(Tensor::new(shape, out)?, rg, op))
    }

    /// Stacks `a` above `b`.
    pub fn concat_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ma, na) = self.dims(a)?;
        let (mb, nb) = self.dims(b)?;
        if na != nb {
            return Err(Error::Dimension {
                op: "concat_rows",
                lhs: self.value(a).shape().to_vec(),
                rhs: self.value(b).shape().to_vec(),
            });
        }
        let (ia, ib) = (self.idx(a), self.idx(b));
        let mut out = Vec::with_capacity((ma + mb) * na);
        out.extend_from_slice(self.nodes[ia].value.data());
        out.extend_from_slice(self.nodes[ib].value.data());
        let rg = self.rg(ia) || self.rg(ib);
        Ok(self.push(Tensor::matrix(ma + mb, na, out)?, rg, Op::ConcatRows(ia, ib)))
    }

    /// Places the inputs side by side along the column axis.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::Usage("concat_cols of nothing".into()))?;
        let (m, _) = self.dims(first)?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (mp, np) = self.dims(p)?;
            if mp != m {
                return Err(Error::Dimension {
                    op: "concat_cols",
                    lhs: self.value(first).shape().to_vec(),
                    rhs: self.value(p).shape().to_vec(),
                });
            }
            widths.push(np);
        }
        let total: usize = widths.iter().sum();
        let ids: Vec<usize> = parts.iter().map(|&p| self.idx(p)).collect();
        let mut out = vec![0.0; m * total];
        let mut offset = 0;
        for (&id, &w) in ids.iter().zip(&widths) {
            let src = self.nodes[id].value.data();
            for r in 0..m {
                out[r * total + offset..r * total + offset + w]
                    .copy_from_slice(&src[r * w..(r + 1) * w]);
            }
            offset += w;
        }
        let rg = ids.iter().any(|&i| self.rg(i));
        Ok(self.push(Tensor::matrix(m, total, out)?, rg, Op::ConcatCols(ids)))
    }

    /// Inverted dropout: in training mode each element is zeroed with
    /// probability `rate` and survivors are scaled by `1 / (1 - rate)`.
    /// Outside training, or at rate 0, the input is returned unchanged.
    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        a: Var,
        rate: f64,
        training: bool,
        rng: &mut R,
    ) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")));
        }
        if !training || rate == 0.0 {
            return Ok(a);
        }
        let ia = self.idx(a);
        let keep = 1.0 / (1.0 - rate);
        let n = self.nodes[ia].value.numel();
        let mask: Vec<f64> = (0..n)
            .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
            .collect();
        let src = &self.nodes[ia].value;
        let data = src.data().iter().zip(&mask).map(|(x, m)| x * m).collect();
        let t = Tensor::new(src.shape().to_vec(), data)?;
        let rg = self.rg(ia);
        Ok(self.push(t, rg, Op::Dropout(ia, mask)))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let ia = self.idx(a);
        let t = self.nodes[ia].value.clone().reshaped(shape)?;
        let rg = self.rg(ia);
        Ok(self.push(t, rg, Op::Reshape(ia)))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let ia = self.idx(a);
        let s = self.nodes[ia].value.data().iter().sum();
        let rg = self.rg(ia);
        self.push(Tensor::scalar(s), rg, Op::Sum(ia))
    }

    /// `sqrt(mean((pred - target)^2))` as a scalar. Where the error is exactly
    /// zero the gradient is defined to be zero.
    pub fn rmse_loss(&mut self, pred: Var, target: &[f64]) -> Result<Var> {
        let ip = self.idx(pred);
        let p = self.nodes[ip].value.data();
        if p.is_empty() {
            return Err(Error::Usage("rmse_loss of an empty vector".into()));
        }
        if p.len() != target.len() {
            return Err(Error::Dimension {
                op: "rmse_loss",
                lhs: self.value(pred).shape().to_vec(),
                rhs: vec![target.len()],
            });
        }
        let mse = p
            .iter()
            .zip(target)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / p.len() as f64;
        let rg = self.rg(ip);
        Ok(self.push(
            Tensor::scalar(libm::sqrt(mse)),
            rg,
            Op::Rmse {
                pred: ip,
                target: target.to_vec(),
            },
        ))
    }

    /// Backpropagates from a scalar loss. Gradients are added to whatever
    /// earlier backward passes left behind until [`Tape::zero_grads`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let v = self.value(loss);
        if v.numel() != 1 {
            return Err(Error::Rank {
                op: "backward",
                expected: 0,
                shape: v.shape().to_vec(),
            });
        }
        self.backward_with_seed(loss, &[1.0])
    }

    /// Backpropagates an arbitrary upstream gradient `seed` (same length as
    /// the value of `root`).
    pub fn backward_with_seed(&mut self, root: Var, seed: &[f64]) -> Result<()> {
        let ir = self.idx(root);
        if seed.len() != self.nodes[ir].value.numel() {
            return Err(Error::Dimension {
                op: "backward",
                lhs: self.nodes[ir].value.shape().to_vec(),
                rhs: vec![seed.len()],
            });
        }
        if !self.nodes[ir].requires_grad {
            return Err(Error::Usage(
                "backward from a value that does not depend on any leaf".into(),
            ));
        }
        let mut scratch: Vec<Option<Vec<f64>>> = vec![None; ir + 1];
        scratch[ir] = Some(seed.to_vec());
        for i in (0..=ir).rev() {
            let Some(g) = scratch[i].take() else {
                continue;
            };
            self.propagate(i, &g, &mut scratch);
            scratch[i] = Some(g);
        }
        for (i, g) in scratch.into_iter().enumerate() {
            let Some(g) = g else { continue };
            match &mut self.grads[i] {
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                slot @ None => *slot = Some(g),
            }
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[f64], scratch: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let nodes = &self.nodes;
        let wants = |j: usize| nodes[j].requires_grad;
        let numel = |j: usize| nodes[j].value.numel();
        fn slot(scratch: &mut [Option<Vec<f64>>], j: usize, len: usize) -> &mut [f64] {
            scratch[j].get_or_insert_with(|| vec![0.0; len])
        }
        match &node.op {
            Op::Constant | Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = nodes[*a].value.dims().expect("matrix");
                let n = node.value.cols();
                if wants(*a) {
                    let da = slot(scratch, *a, m * k);
                    gemm_bt_acc(g, nodes[*b].value.data(), da, m, n, k);
                }
                if wants(*b) {
                    let db = slot(scratch, *b, k * n);
                    gemm_at_acc(nodes[*a].value.data(), g, db, m, k, n);
                }
            }
            Op::Transpose(a) => {
                if wants(*a) {
                    let (r, c) = nodes[*a].value.dims().expect("matrix");
                    let da = slot(scratch, *a, r * c);
                    for x in 0..r {
                        for y in 0..c {
                            da[x * c + y] += g[y * r + x];
                        }
                    }
                }
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                if wants(*a) {
                    let da = slot(scratch, *a, g.len());
                    da.iter_mut().zip(g).for_each(|(d, x)| *d += x);
                }
                if wants(*b) {
                    let db = slot(scratch, *b, g.len());
                    db.iter_mut().zip(g).for_each(|(d, x)| *d += sign * x);
                }
            }
            Op::Mul(a, b) => {
                if wants(*a) {
                    let other = nodes[*b].value.data();
                    let da = slot(scratch, *a, g.len());
                    for ((d, x), o) in da.iter_mut().zip(g).zip(other) {
                        *d += x * o;
                    }
                }
                if wants(*b) {
                    let other = nodes[*a].value.data();
                    let db = slot(scratch, *b, g.len());
                    for ((d, x), o) in db.iter_mut().zip(g).zip(other) {
                        *d += x * o;
                    }
                }
            }
            Op::AddRow(a, b) => {
                if wants(*a) {
                    let da = slot(scratch, *a, g.len());
                    da.iter_mut().zip(g).for_each(|(d, x)| *d += x);
                }
                if wants(*b) {
                    let n = numel(*b);
                    let db = slot(scratch, *b, n);
                    for row in g.chunks_exact(n) {
                        db.iter_mut().zip(row).for_each(|(d, x)| *d += x);
                    }
                }
            }
            Op::Scale(a, c) => {
                if wants(*a) {
                    let da = slot(scratch, *a, g.len());
                    da.iter_mut().zip(g).for_each(|(d, x)| *d += c * x);
                }
            }
            Op::Relu(a) => {
                if wants(*a) {
                    let src = nodes[*a].value.data();
                    let da = slot(scratch, *a, g.len());
                    for ((d, x), s) in da.iter_mut().zip(g).zip(src) {
                        if *s > 0.0 {
                            *d += x;
                        }
                    }
                }
            }
            Op::Softmax(a) => {
                if wants(*a) {
                    let n = node.value.cols();
                    let y = node.value.data();
                    let da = slot(scratch, *a, g.len());
                    for ((dr, gr), yr) in da
                        .chunks_exact_mut(n)
                        .zip(g.chunks_exact(n))
                        .zip(y.chunks_exact(n))
                    {
                        let dot: f64 = gr.iter().zip(yr).map(|(p, q)| p * q).sum();
                        for ((d, gv), yv) in dr.iter_mut().zip(gr).zip(yr) {
                            *d += yv * (gv - dot);
                        }
                    }
                }
            }
            Op::MaskFill(a, mask) => {
                if wants(*a) {
                    let da = slot(scratch, *a, g.len());
                    for ((d, x), m) in da.iter_mut().zip(g).zip(mask) {
                        if !m {
                            *d += x;
                        }
                    }
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let n = numel(*gain);
                let gv = nodes[*gain].value.data();
                if wants(*gain) {
                    let dg = slot(scratch, *gain, n);
                    for (gr, hr) in g.chunks_exact(n).zip(xhat.chunks_exact(n)) {
                        for ((d, a), b) in dg.iter_mut().zip(gr).zip(hr) {
                            *d += a * b;
                        }
                    }
                }
                if wants(*bias) {
                    let db = slot(scratch, *bias, n);
                    for gr in g.chunks_exact(n) {
                        db.iter_mut().zip(gr).for_each(|(d, a)| *d += a);
                    }
                }
                if wants(*x) {
                    let dx = slot(scratch, *x, g.len());
                    let nf = n as f64;
                    let mut dxhat = vec![0.0; n];
                    for (r, inv) in inv_std.iter().enumerate() {
                        let gr = &g[r * n..(r + 1) * n];
                        let hr = &xhat[r * n..(r + 1) * n];
                        for j in 0..n {
                            dxhat[j] = gr[j] * gv[j];
                        }
                        let s1: f64 = dxhat.iter().sum();
                        let s2: f64 = dxhat.iter().zip(hr).map(|(a, b)| a * b).sum();
                        for j in 0..n {
                            dx[r * n + j] += inv / nf * (nf * dxhat[j] - s1 - hr[j] * s2);
                        }
                    }
                }
            }
            Op::ConcatRows(a, b) => {
                let split = numel(*a);
                if wants(*a) {
                    let da = slot(scratch, *a, split);
                    da.iter_mut().zip(&g[..split]).for_each(|(d, x)| *d += x);
                }
                if wants(*b) {
                    let db = slot(scratch, *b, g.len() - split);
                    db.iter_mut().zip(&g[split..]).for_each(|(d, x)| *d += x);
                }
            }
            Op::ConcatCols(parts) => {
                let total = node.value.cols();
                let m = node.value.rows();
                let mut offset = 0;
                for &p in parts {
                    let w = nodes[p].value.cols();
                    if wants(p) {
                        let dp = slot(scratch, p, m * w);
                        for r in 0..m {
                            let src = &g[r * total + offset..r * total + offset + w];
                            dp[r * w..(r + 1) * w]
                                .iter_mut()
                                .zip(src)
                                .for_each(|(d, x)| *d += x);
                        }
                    }
                    offset += w;
                }
            }
            Op::Dropout(a, mask) => {
                if wants(*a) {
                    let da = slot(scratch, *a, g.len());
                    for ((d, x), m) in da.iter_mut().zip(g).zip(mask) {
                        *d += x * m;
                    }
                }
            }
            Op::Reshape(a) => {
                if wants(*a) {
                    let da = slot(scratch, *a, g.len());
                    da.iter_mut().zip(g).for_each(|(d, x)| *d += x);
                }
            }
            Op::Sum(a) => {
                if wants(*a) {
                    let da = slot(scratch, *a, numel(*a));
                    da.iter_mut().for_each(|d| *d += g[0]);
                }
            }
            Op::Rmse { pred, target } => {
                if wants(*pred) {
                    let loss = node.value.data()[0];
                    let p = nodes[*pred].value.data();
                    let dp = slot(scratch, *pred, p.len());
                    if loss > 0.0 {
                        let scale = g[0] / (p.len() as f64 * loss);
                        for ((d, pv), t) in dp.iter_mut().zip(p).zip(target) {
                            *d += scale * (pv - t);
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn matmul_identity_and_hand_case() {
        let mut t = Tape::new();
        let i2 = t.constant(Tensor::identity(2));
        let a = t.constant(m(&[&[1.0, 2.0], &[3.0, 4.0]]));
        let b = t.constant(m(&[&[5.0, 6.0], &[7.0, 8.0]]));
        let ia = t.matmul(i2, a).unwrap();
        assert_eq!(t.value(ia).data(), &[1.0, 2.0, 3.0, 4.0]);
        let ab = t.matmul(a, b).unwrap();
        assert_eq!(t.value(ab).data(), &[19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::zeros(&[2, 3]));
        let b = t.constant(Tensor::zeros(&[2, 3]));
        match t.matmul(a, b) {
            Err(Error::Dimension { lhs, rhs, .. }) => {
                assert_eq!(lhs, alloc::vec![2, 3]);
                assert_eq!(rhs, alloc::vec![2, 3]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn transpose_rejects_non_matrix() {
        let mut t = Tape::new();
        let v = t.constant(Tensor::vector(alloc::vec![1.0, 2.0]));
        assert!(matches!(t.transpose(v), Err(Error::Rank { .. })));
        let a = t.constant(m(&[&[1.0, 2.0], &[3.0, 4.0]]));
        let at = t.transpose(a).unwrap();
        assert_eq!(t.value(at).data(), &[1.0, 3.0, 2.0, 4.0]);
    }

    #[test]
    fn softmax_cases() {
        let mut t = Tape::new();
        let a = t.constant(m(&[&[0.0, 0.0, 0.0]]));
        let s = t.softmax_rows(a).unwrap();
        for &x in t.value(s).data() {
            assert!((x - 1.0 / 3.0).abs() < 1e-15);
        }
        let b = t.constant(m(&[&[core::f64::consts::LN_2, 0.0]]));
        let s = t.softmax_rows(b).unwrap();
        assert!((t.value(s).data()[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((t.value(s).data()[1] - 1.0 / 3.0).abs() < 1e-15);
        let c = t.constant(m(&[&[0.0, f64::NEG_INFINITY], &[f64::NEG_INFINITY, f64::NEG_INFINITY]]));
        let s = t.softmax_rows(c).unwrap();
        assert_eq!(t.value(s).data(), &[1.0, 0.0, 0.0, 0.0]);
        let d = t.constant(m(&[&[f64::NAN, 0.0]]));
        assert!(matches!(t.softmax_rows(d), Err(Error::Numeric(_))));
    }

    #[test]
    fn layer_norm_cases() {
        let mut t = Tape::new();
        let g = t.constant(Tensor::filled(&[2], 1.0));
        let b = t.constant(Tensor::zeros(&[2]));
        let x = t.constant(m(&[&[3.0, 3.0], &[-1.0, 1.0]]));
        let y = t.layer_norm(x, g, b).unwrap();
        let v = t.value(y).data();
        assert_eq!(&v[..2], &[0.0, 0.0]);
        let expect = 1.0 / libm::sqrt(1.0 + LAYER_NORM_EPS);
        assert!((v[2] + expect).abs() < 1e-15 && (v[3] - expect).abs() < 1e-15);
    }

    #[test]
    fn affine_zero_weights_and_identity() {
        let mut t = Tape::new();
        let x = t.constant(m(&[&[1.0, 2.0], &[3.0, 4.0], &[5.0, 6.0]]));
        let w0 = t.constant(Tensor::zeros(&[2, 2]));
        let b = t.constant(Tensor::vector(alloc::vec![7.0, -1.0]));
        let y = t.affine(x, w0, b).unwrap();
        for r in 0..3 {
            assert_eq!(t.value(y).row(r), &[7.0, -1.0]);
        }
        let id = t.constant(Tensor::identity(2));
        let z = t.constant(Tensor::zeros(&[2]));
        let y = t.affine(x, id, z).unwrap();
        assert_eq!(t.value(y).data(), t.value(x).data());
    }

    #[test]
    fn relu_and_concat() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::vector(alloc::vec![-1.0, 0.0, 2.0]));
        let r = t.relu(a);
        assert_eq!(t.value(r).data(), &[0.0, 0.0, 2.0]);
        let top = t.constant(m(&[&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]]));
        let bottom = t.constant(m(&[&[7.0, 8.0, 9.0]]));
        let c = t.concat_rows(top, bottom).unwrap();
        assert_eq!(t.value(c).shape(), &[3, 3]);
        assert_eq!(t.value(c).row(2), &[7.0, 8.0, 9.0]);
        let empty = t.constant(Tensor::zeros(&[0, 3]));
        let c = t.concat_rows(top, empty).unwrap();
        assert_eq!(t.value(c), t.value(top));
        let bad = t.constant(Tensor::zeros(&[1, 2]));
        assert!(t.concat_rows(top, bad).is_err());
    }

    #[test]
    fn backward_sum_and_square() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::vector(alloc::vec![1.0, -2.0, 3.0]));
        let s = t.sum(x);
        t.backward(s).unwrap();
        assert_eq!(t.grad(x).unwrap(), &[1.0, 1.0, 1.0]);
        assert_eq!(t.grad(s).unwrap(), &[1.0]);

        t.zero_grads();
        let sq = t.mul(x, x).unwrap();
        let s = t.sum(sq);
        t.backward(s).unwrap();
        assert_eq!(t.grad(x).unwrap(), &[2.0, -4.0, 6.0]);
        // a second pass accumulates
        t.backward(s).unwrap();
        assert_eq!(t.grad(x).unwrap(), &[4.0, -8.0, 12.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::zeros(&[2, 2]));
        assert!(matches!(t.backward(x), Err(Error::Rank { .. })));
    }

    #[test]
    fn constants_are_not_recorded() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::identity(3));
        let b = t.constant(Tensor::identity(3));
        let c = t.matmul(a, b).unwrap();
        assert!(!t.requires_grad(c));
        assert_eq!(t.recorded_len(), 0);
        let w = t.leaf(Tensor::identity(3));
        let _ = t.matmul(c, w).unwrap();
        assert_eq!(t.recorded_len(), 2);
    }

    #[test]
    #[should_panic(expected = "stale Var")]
    fn clear_invalidates_handles() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::scalar(1.0));
        t.clear();
        let _ = t.value(a);
    }

    #[test]
    fn rmse_loss_values_and_zero_guard() {
        let mut t = Tape::new();
        let p = t.leaf(Tensor::vector(alloc::vec![2.0, 2.0]));
        let l = t.rmse_loss(p, &[0.0, 0.0]).unwrap();
        assert_eq!(t.value(l).data(), &[2.0]);
        let q = t.leaf(Tensor::vector(alloc::vec![1.5, -3.0]));
        let l0 = t.rmse_loss(q, &[1.5, -3.0]).unwrap();
        assert_eq!(t.value(l0).data(), &[0.0]);
        t.backward(l0).unwrap();
        assert_eq!(t.grad(q).unwrap(), &[0.0, 0.0]);
        assert!(t.rmse_loss(q, &[]).is_err());
    }
}
