//! Reverse-mode differentiation over a linear operation record.
//!
//! Every operation appends a node whose inputs already exist on the tape, so
//! node order is a topological order and `backward` is a single reverse sweep.

use std::borrow::Cow;

use super::tensor::{gemm, gemm_nt, gemm_tn, PROB_FLOOR};
use super::{NumericsError, Tensor};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Mul(Var, Var),
    Gelu(Var),
    Sigmoid(Var),
    Softmax(Var),
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Vec<f64>, rstd: Vec<f64> },
    Embed { table: Var, ids: Vec<usize> },
    SliceCols { x: Var, start: usize },
    ConcatCols(Vec<Var>),
    SumAll(Var),
    PointerMix { vocab: Var, copy: Var, pgen: Var, ext_ids: Vec<usize> },
    Nll { probs: Var, targets: Vec<usize> },
}

struct Node<'p> {
    value: Cow<'p, Tensor>,
    op: Op,
    needs_grad: bool,
}

/// Operation record for one forward pass. Parameters are borrowed, never copied.
pub struct Tape<'p> {
    nodes: Vec<Node<'p>>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`; zero when `v` did not
    /// influence the loss.
    pub fn get(&self, v: Var) -> Tensor {
        let shape = &self.shapes[v.0];
        match &self.grads[v.0] {
            Some(g) => Tensor::new(shape.clone(), g.clone()).expect("gradient shape"),
            None => Tensor::zeros(shape),
        }
    }

    pub fn data(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }
}

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

impl Default for Tape<'_> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'p> Tape<'p> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    /// Trainable leaf borrowed from the caller.
    pub fn param(&mut self, t: &'p Tensor) -> Var {
        self.nodes.push(Node {
            value: Cow::Borrowed(t),
            op: Op::Leaf,
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Non-trainable leaf borrowed from the caller.
    pub fn borrowed_constant(&mut self, t: &'p Tensor) -> Var {
        self.nodes.push(Node {
            value: Cow::Borrowed(t),
            op: Op::Leaf,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        let g = t.requires_grad();
        self.push(t, Op::Leaf, g)
    }

    /// Owned leaf that receives a gradient.
    pub fn variable(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    fn dims2(&self, v: Var, op: &'static str) -> Result<(usize, usize), NumericsError> {
        let s = self.value(v).shape();
        match s {
            [r, c] => Ok((*r, *c)),
            _ => Err(NumericsError::ShapeMismatch {
                op,
                left: s.to_vec(),
                right: vec![],
            }),
        }
    }

    fn mismatch(&self, op: &'static str, a: Var, b: Var) -> NumericsError {
        NumericsError::ShapeMismatch {
            op,
            left: self.value(a).shape().to_vec(),
            right: self.value(b).shape().to_vec(),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (m, k) = self.dims2(a, "matmul")?;
        let (k2, n) = self.dims2(b, "matmul")?;
        if k != k2 {
            return Err(self.mismatch("matmul", a, b));
        }
        let mut out = vec![0.0; m * n];
        gemm(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let ng = self.ng(&[a, b]);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), ng))
    }

    /// `a · bᵀ` without materializing the transpose.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (m, k) = self.dims2(a, "matmul_nt")?;
        let (n, k2) = self.dims2(b, "matmul_nt")?;
        if k != k2 {
            return Err(self.mismatch("matmul_nt", a, b));
        }
        let mut out = vec![0.0; m * n];
        gemm_nt(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let ng = self.ng(&[a, b]);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMulNt(a, b), ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let out = self.value(a).add(self.value(b)).map_err(|_| self.mismatch("add", a, b))?;
        let ng = self.ng(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), ng))
    }

    /// Adds a bias vector to every row.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var, NumericsError> {
        let xt = self.value(x);
        let bt = self.value(bias);
        if bt.numel() != xt.cols() {
            return Err(self.mismatch("add_row", x, bias));
        }
        let c = xt.cols();
        let mut out = xt.clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            *v += bt.data()[i % c];
        }
        let ng = self.ng(&[x, bias]);
        Ok(self.push(out.with_requires_grad(false), Op::AddRow(x, bias), ng))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let out = self.value(x).scale(s);
        let ng = self.ng(&[x]);
        self.push(out, Op::Scale(x, s), ng)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (at, bt) = (self.value(a), self.value(b));
        if at.shape() != bt.shape() {
            return Err(self.mismatch("mul", a, b));
        }
        let data = at.data().iter().zip(bt.data()).map(|(x, y)| x * y).collect();
        let out = Tensor::new(at.shape().to_vec(), data)?;
        let ng = self.ng(&[a, b]);
        Ok(self.push(out, Op::Mul(a, b), ng))
    }

    /// Tanh-approximated GELU; smooth everywhere so finite differences stay clean.
    pub fn gelu(&mut self, x: Var) -> Var {
        let xt = self.value(x);
        let data = xt
            .data()
            .iter()
            .map(|&v| 0.5 * v * (1.0 + (GELU_C * (v + 0.044715 * v * v * v)).tanh()))
            .collect();
        let out = Tensor::new(xt.shape().to_vec(), data).expect("same shape");
        let ng = self.ng(&[x]);
        self.push(out, Op::Gelu(x), ng)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let xt = self.value(x);
        let data = xt.data().iter().map(|&v| logistic(v)).collect();
        let out = Tensor::new(xt.shape().to_vec(), data).expect("same shape");
        let ng = self.ng(&[x]);
        self.push(out, Op::Sigmoid(x), ng)
    }

    /// Row-wise softmax. With `causal`, entry (i, j) for j > i gets probability 0.
    pub fn softmax_rows(&mut self, x: Var, causal: bool) -> Result<Var, NumericsError> {
        let xt = self.value(x);
        let (r, c) = (xt.rows(), xt.cols());
        let mut out = xt.data().to_vec();
        for i in 0..r {
            let row = &mut out[i * c..(i + 1) * c];
            let live = if causal { (i + 1).min(c) } else { c };
            super::softmax_in_place(&mut row[..live])?;
            row[live..].iter_mut().for_each(|v| *v = 0.0);
        }
        let out = Tensor::new(xt.shape().to_vec(), out)?;
        let ng = self.ng(&[x]);
        Ok(self.push(out, Op::Softmax(x), ng))
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var, NumericsError> {
        let xt = self.value(x);
        let (r, c) = (xt.rows(), xt.cols());
        if self.value(gain).numel() != c || self.value(bias).numel() != c {
            return Err(self.mismatch("layer_norm", x, gain));
        }
        let (g, b) = (self.value(gain).data(), self.value(bias).data());
        let mut xhat = vec![0.0; r * c];
        let mut rstd = vec![0.0; r];
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = xt.row(i);
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let rs = 1.0 / (var + LN_EPS).sqrt();
            rstd[i] = rs;
            for j in 0..c {
                let h = (row[j] - mean) * rs;
                xhat[i * c + j] = h;
                out[i * c + j] = h * g[j] + b[j];
            }
        }
        let out = Tensor::new(xt.shape().to_vec(), out)?;
        let ng = self.ng(&[x, gain, bias]);
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
            ng,
        ))
    }

    /// Gathers rows of `table` (shape `[vocab, d]`).
    pub fn embed(&mut self, table: Var, ids: &[usize]) -> Result<Var, NumericsError> {
        let (rows, d) = self.dims2(table, "embed")?;
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= rows {
                return Err(NumericsError::IndexOutOfRange { index: id, len: rows });
            }
            out.extend_from_slice(self.value(table).row(id));
        }
        let out = Tensor::new(vec![ids.len(), d], out)?;
        let ng = self.ng(&[table]);
        Ok(self.push(
            out,
            Op::Embed {
                table,
                ids: ids.to_vec(),
            },
            ng,
        ))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var, NumericsError> {
        let (r, c) = self.dims2(x, "slice_cols")?;
        if start + len > c || len == 0 {
            return Err(NumericsError::IndexOutOfRange {
                index: start + len,
                len: c,
            });
        }
        let xt = self.value(x);
        let mut out = Vec::with_capacity(r * len);
        for i in 0..r {
            out.extend_from_slice(&xt.row(i)[start..start + len]);
        }
        let out = Tensor::new(vec![r, len], out)?;
        let ng = self.ng(&[x]);
        Ok(self.push(out, Op::SliceCols { x, start }, ng))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, NumericsError> {
        let r = self.dims2(parts[0], "concat_cols")?.0;
        let mut total = 0;
        for &p in parts {
            let (pr, pc) = self.dims2(p, "concat_cols")?;
            if pr != r {
                return Err(self.mismatch("concat_cols", parts[0], p));
            }
            total += pc;
        }
        let mut out = Vec::with_capacity(r * total);
        for i in 0..r {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(i));
            }
        }
        let out = Tensor::new(vec![r, total], out)?;
        let ng = self.ng(parts);
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), ng))
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let ng = self.ng(&[x]);
        self.push(Tensor::scalar(s), Op::SumAll(x), ng)
    }

    /// Pointer-generator mixture over the extended vocabulary.
    ///
    /// `vocab`: `[T, V]` generation distribution, `copy`: `[T, S]` attention over
    /// source positions, `pgen`: `[T, 1]`, `ext_ids[i]`: extended-vocabulary id of
    /// source position `i`. Output is `[T, ext_size]`.
    pub fn pointer_mix(
        &mut self,
        vocab: Var,
        copy: Var,
        pgen: Var,
        ext_ids: &[usize],
        ext_size: usize,
    ) -> Result<Var, NumericsError> {
        let (t, v) = self.dims2(vocab, "pointer_mix")?;
        let (t2, s) = self.dims2(copy, "pointer_mix")?;
        if t != t2 || s != ext_ids.len() || self.value(pgen).numel() != t || ext_size < v {
            return Err(self.mismatch("pointer_mix", vocab, copy));
        }
        if let Some(&bad) = ext_ids.iter().find(|&&e| e >= ext_size) {
            return Err(NumericsError::IndexOutOfRange {
                index: bad,
                len: ext_size,
            });
        }
        let (vd, cd, pd) = (
            self.value(vocab).data(),
            self.value(copy).data(),
            self.value(pgen).data(),
        );
        let mut out = vec![0.0; t * ext_size];
        for r in 0..t {
            let p = pd[r];
            let orow = &mut out[r * ext_size..(r + 1) * ext_size];
            for w in 0..v {
                orow[w] = p * vd[r * v + w];
            }
            for (i, &e) in ext_ids.iter().enumerate() {
                orow[e] += (1.0 - p) * cd[r * s + i];
            }
        }
        let out = Tensor::new(vec![t, ext_size], out)?;
        let ng = self.ng(&[vocab, copy, pgen]);
        Ok(self.push(
            out,
            Op::PointerMix {
                vocab,
                copy,
                pgen,
                ext_ids: ext_ids.to_vec(),
            },
            ng,
        ))
    }

    /// Mean of `-ln(max(probs[t, targets[t]], floor))` over rows.
    pub fn nll(&mut self, probs: Var, targets: &[usize]) -> Result<Var, NumericsError> {
        let pt = self.value(probs);
        let (r, c) = (pt.rows(), pt.cols());
        if targets.len() != r || r == 0 {
            return Err(NumericsError::ShapeMismatch {
                op: "nll",
                left: pt.shape().to_vec(),
                right: vec![targets.len()],
            });
        }
        let mut total = 0.0;
        for (i, &y) in targets.iter().enumerate() {
            if y >= c {
                return Err(NumericsError::IndexOutOfRange { index: y, len: c });
            }
            total += -pt.data()[i * c + y].max(PROB_FLOOR).ln();
        }
        let ng = self.ng(&[probs]);
        Ok(self.push(
            Tensor::scalar(total / r as f64),
            Op::Nll {
                probs,
                targets: targets.to_vec(),
            },
            ng,
        ))
    }

    /// One reverse sweep from the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients, NumericsError> {
        let lt = self.value(loss);
        if !lt.is_scalar() {
            return Err(NumericsError::NonScalarLoss {
                shape: lt.shape().to_vec(),
            });
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if node.needs_grad {
                self.propagate(idx, &g, &mut grads);
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    fn propagate(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let out = &self.nodes[idx].value;
        let val = |v: Var| self.nodes[v.0].value.as_ref();
        let wants = |v: Var| self.nodes[v.0].needs_grad;
        match &self.nodes[idx].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (at, bt) = (val(*a), val(*b));
                let (m, k, n) = (at.shape()[0], at.shape()[1], bt.shape()[1]);
                if wants(*a) {
                    // dA = G · Bᵀ
                    let mut da = vec![0.0; m * k];
                    gemm_nt(g, bt.data(), &mut da, m, n, k);
                    accumulate(grads, *a, &da);
                }
                if wants(*b) {
                    // dB = Aᵀ · G
                    let mut db = vec![0.0; k * n];
                    gemm_tn(at.data(), g, &mut db, m, k, n);
                    accumulate(grads, *b, &db);
                }
            }
            Op::MatMulNt(a, b) => {
                let (at, bt) = (val(*a), val(*b));
                let (m, k, n) = (at.shape()[0], at.shape()[1], bt.shape()[0]);
                if wants(*a) {
                    // dA = G · B
                    let mut da = vec![0.0; m * k];
                    gemm(g, bt.data(), &mut da, m, n, k);
                    accumulate(grads, *a, &da);
                }
                if wants(*b) {
                    // dB = Gᵀ · A
                    let mut db = vec![0.0; n * k];
                    gemm_tn(g, at.data(), &mut db, m, n, k);
                    accumulate(grads, *b, &db);
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if wants(v) {
                        accumulate(grads, v, g);
                    }
                }
            }
            Op::AddRow(x, bias) => {
                if wants(*x) {
                    accumulate(grads, *x, g);
                }
                if wants(*bias) {
                    let c = out.cols();
                    let mut db = vec![0.0; c];
                    for (i, gv) in g.iter().enumerate() {
                        db[i % c] += gv;
                    }
                    accumulate(grads, *bias, &db);
                }
            }
            Op::Scale(x, s) => {
                let d: Vec<f64> = g.iter().map(|v| v * s).collect();
                accumulate(grads, *x, &d);
            }
            Op::Mul(a, b) => {
                let (ad, bd) = (val(*a).data(), val(*b).data());
                if wants(*a) {
                    let d: Vec<f64> = g.iter().zip(bd).map(|(x, y)| x * y).collect();
                    accumulate(grads, *a, &d);
                }
                if wants(*b) {
                    let d: Vec<f64> = g.iter().zip(ad).map(|(x, y)| x * y).collect();
                    accumulate(grads, *b, &d);
                }
            }
            Op::Gelu(x) => {
                let d: Vec<f64> = val(*x)
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&v, gv)| {
                        let u = GELU_C * (v + 0.044715 * v * v * v);
                        let th = u.tanh();
                        let du = GELU_C * (1.0 + 3.0 * 0.044715 * v * v);
                        gv * (0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * du)
                    })
                    .collect();
                accumulate(grads, *x, &d);
            }
            Op::Sigmoid(x) => {
                let d: Vec<f64> = out
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(s, gv)| gv * s * (1.0 - s))
                    .collect();
                accumulate(grads, *x, &d);
            }
            Op::Softmax(x) => {
                let (r, c) = (out.rows(), out.cols());
                let y = out.data();
                let mut d = vec![0.0; r * c];
                for i in 0..r {
                    let yr = &y[i * c..(i + 1) * c];
                    let gr = &g[i * c..(i + 1) * c];
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..c {
                        d[i * c + j] = yr[j] * (gr[j] - dot);
                    }
                }
                accumulate(grads, *x, &d);
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let (r, c) = (out.rows(), out.cols());
                let gd = val(*gain).data();
                if wants(*gain) {
                    let mut dg = vec![0.0; c];
                    for i in 0..r * c {
                        dg[i % c] += g[i] * xhat[i];
                    }
                    accumulate(grads, *gain, &dg);
                }
                if wants(*bias) {
                    let mut db = vec![0.0; c];
                    for i in 0..r * c {
                        db[i % c] += g[i];
                    }
                    accumulate(grads, *bias, &db);
                }
                if wants(*x) {
                    let mut dx = vec![0.0; r * c];
                    for i in 0..r {
                        let mut sum_dh = 0.0;
                        let mut sum_dh_h = 0.0;
                        for j in 0..c {
                            let dh = g[i * c + j] * gd[j];
                            sum_dh += dh;
                            sum_dh_h += dh * xhat[i * c + j];
                        }
                        for j in 0..c {
                            let dh = g[i * c + j] * gd[j];
                            dx[i * c + j] = rstd[i] / c as f64
                                * (c as f64 * dh - sum_dh - xhat[i * c + j] * sum_dh_h);
                        }
                    }
                    accumulate(grads, *x, &dx);
                }
            }
            Op::Embed { table, ids } => {
                let tt = val(*table);
                let d = tt.cols();
                let mut dt = vec![0.0; tt.numel()];
                for (r, &id) in ids.iter().enumerate() {
                    for j in 0..d {
                        dt[id * d + j] += g[r * d + j];
                    }
                }
                accumulate(grads, *table, &dt);
            }
            Op::SliceCols { x, start } => {
                let xt = val(*x);
                let (r, c) = (xt.rows(), xt.cols());
                let len = out.cols();
                let mut d = vec![0.0; r * c];
                for i in 0..r {
                    d[i * c + start..i * c + start + len].copy_from_slice(&g[i * len..(i + 1) * len]);
                }
                accumulate(grads, *x, &d);
            }
            Op::ConcatCols(parts) => {
                let (r, total) = (out.rows(), out.cols());
                let mut offset = 0;
                for &p in parts {
                    let pc = val(p).cols();
                    if wants(p) {
                        let mut d = Vec::with_capacity(r * pc);
                        for i in 0..r {
                            d.extend_from_slice(&g[i * total + offset..i * total + offset + pc]);
                        }
                        accumulate(grads, p, &d);
                    }
                    offset += pc;
                }
            }
            Op::SumAll(x) => {
                let d = vec![g[0]; val(*x).numel()];
                accumulate(grads, *x, &d);
            }
            Op::PointerMix {
                vocab,
                copy,
                pgen,
                ext_ids,
            } => {
                let (vt, ct, pt) = (val(*vocab), val(*copy), val(*pgen));
                let (t, v, s, e) = (vt.rows(), vt.cols(), ct.cols(), out.cols());
                let mut dv = vec![0.0; t * v];
                let mut dc = vec![0.0; t * s];
                let mut dp = vec![0.0; t];
                for r in 0..t {
                    let p = pt.data()[r];
                    let grow = &g[r * e..(r + 1) * e];
                    let mut acc = 0.0;
                    for w in 0..v {
                        dv[r * v + w] = p * grow[w];
                        acc += vt.data()[r * v + w] * grow[w];
                    }
                    for (i, &ext) in ext_ids.iter().enumerate() {
                        dc[r * s + i] = (1.0 - p) * grow[ext];
                        acc -= ct.data()[r * s + i] * grow[ext];
                    }
                    dp[r] = acc;
                }
                if wants(*vocab) {
                    accumulate(grads, *vocab, &dv);
                }
                if wants(*copy) {
                    accumulate(grads, *copy, &dc);
                }
                if wants(*pgen) {
                    accumulate(grads, *pgen, &dp);
                }
            }
            Op::Nll { probs, targets } => {
                let pt = val(*probs);
                let c = pt.cols();
                let scale = g[0] / targets.len() as f64;
                let mut d = vec![0.0; pt.numel()];
                for (i, &y) in targets.iter().enumerate() {
                    let p = pt.data()[i * c + y];
                    if p > PROB_FLOOR {
                        d[i * c + y] = -scale / p;
                    }
                }
                accumulate(grads, *probs, &d);
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], v: Var, d: &[f64]) {
    match &mut grads[v.0] {
        Some(acc) => acc.iter_mut().zip(d).for_each(|(a, b)| *a += b),
        slot @ None => *slot = Some(d.to_vec()),
    }
}

fn logistic(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}
