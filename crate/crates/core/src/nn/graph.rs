//! Tape-based reverse-mode automatic differentiation over 2-D tensors.
//!
//! A [`Graph`] records every operation as a node holding its output value.
//! [`Graph::backward`] walks the tape in reverse, accumulating the gradient
//! of a scalar output into every node that requires one. Parameter leaves
//! borrow their values from a [`ParamStore`], so many graphs (independent
//! walks, ensemble members) can read the same parameters concurrently.
//!
//! Besides the elementwise and linear-algebra primitives, three fused ops
//! carry hand-written backward rules because they dominate run time:
//! [`Graph::gru_scan`] (a full recurrent pass with BPTT),
//! [`Graph::rms_norm`] and [`Graph::grouped_softmax_pool`].

use std::rc::Rc;

use super::param::{ParamGrads, ParamId, ParamStore};
use super::tensor::{gemm, Tensor};
use crate::error::{contract, FlockError, Result};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

/// Marker for rows that belong to no pooling group.
pub const NO_GROUP: u32 = u32::MAX;

enum Value<'p> {
    Owned(Tensor),
    Borrowed(&'p Tensor),
}

impl Value<'_> {
    fn get(&self) -> &Tensor {
        match self {
            Value::Owned(t) => t,
            Value::Borrowed(t) => t,
        }
    }
}

struct GruCache {
    hprev: Vec<f64>,
    z: Vec<f64>,
    r: Vec<f64>,
    n: Vec<f64>,
    rh: Vec<f64>,
}

enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Affine(Var, f64),
    MulConst(Var, Rc<[f64]>),
    Sigmoid(Var),
    Tanh(Var),
    Swish(Var),
    Log(Var),
    Exp(Var),
    Clamp(Var, f64, f64),
    Softmax(Var, usize),
    Concat(Vec<Var>, usize),
    Slice {
        src: Var,
        axis: usize,
        start: usize,
    },
    Sum(Var),
    Mean(Var),
    GatherRows(Var, Rc<[usize]>),
    BroadcastRows(Var),
    RmsNorm {
        x: Var,
        gain: Var,
        inv_rms: Vec<f64>,
    },
    Gru {
        xw: Var,
        u_zr: Var,
        u_n: Var,
        h0: Option<Var>,
        steps: usize,
        batch: usize,
        reverse: bool,
        cache: GruCache,
    },
    Pool {
        values: Var,
        logits: Var,
        groups: Rc<[u32]>,
        heads: usize,
        weights: Vec<f64>,
    },
}

struct Node<'p> {
    value: Value<'p>,
    op: Op,
    requires_grad: bool,
}

/// A recording of one differentiable computation.
pub struct Graph<'p> {
    store: Option<&'p ParamStore>,
    nodes: Vec<Node<'p>>,
}

impl Default for Graph<'_> {
    fn default() -> Self {
        Self::new()
    }
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> FlockError {
    FlockError::Shape {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl<'p> Graph<'p> {
    pub fn new() -> Self {
        Self {
            store: None,
            nodes: Vec::new(),
        }
    }

    pub fn with_params(store: &'p ParamStore) -> Self {
        Self {
            store: Some(store),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        self.nodes[v.0].value.get()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Constant input; no gradient is tracked.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Input whose gradient is tracked (for gradient checks).
    pub fn variable(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        let store = self.store.expect("graph created without a parameter store");
        let p = store.get(id);
        self.nodes.push(Node {
            value: Value::Borrowed(&p.tensor),
            op: Op::Param(id),
            requires_grad: p.trainable,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.cols() != tb.rows() {
            return Err(shape_err("matmul", ta, tb));
        }
        let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, ta.data(), false, tb.data(), false, 0.0, &mut out);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::matrix(m, n, out), Op::MatMul(a, b), rg))
    }

    fn zip_same(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<(Tensor, bool)> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.len() != tb.len() || ta.cols() != tb.cols() {
            return Err(shape_err(name, ta, tb));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| f(*x, *y)).collect();
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        Ok((t, self.rg(a) || self.rg(b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, rg) = self.zip_same(a, b, "add", |x, y| x + y)?;
        Ok(self.push(t, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, rg) = self.zip_same(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(t, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, rg) = self.zip_same(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(t, Op::Mul(a, b), rg))
    }

    /// Adds a length-`cols` vector to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (ta, tr) = (self.value(a), self.value(row));
        if tr.len() != ta.cols() {
            return Err(shape_err("add_row", ta, tr));
        }
        let c = ta.cols();
        let mut data = ta.data().to_vec();
        for chunk in data.chunks_mut(c) {
            chunk.iter_mut().zip(tr.data()).for_each(|(x, b)| *x += b);
        }
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        let rg = self.rg(a) || self.rg(row);
        Ok(self.push(t, Op::AddRow(a, row), rg))
    }

    fn map(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let ta = self.value(a);
        let data = ta.data().iter().map(|x| f(*x)).collect();
        let t = Tensor::new(ta.shape().to_vec(), data).expect("same shape");
        let rg = self.rg(a);
        self.push(t, op, rg)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.map(a, Op::Scale(a, s), |x| s * x)
    }

    /// `s * a + c`.
    pub fn affine(&mut self, a: Var, s: f64, c: f64) -> Var {
        self.map(a, Op::Affine(a, s), |x| s * x + c)
    }

    /// Elementwise product with a constant (no gradient to the constant).
    pub fn mul_const(&mut self, a: Var, c: &[f64]) -> Result<Var> {
        let ta = self.value(a);
        if ta.len() != c.len() {
            return Err(FlockError::Shape {
                op: "mul_const",
                left: ta.shape().to_vec(),
                right: vec![c.len()],
            });
        }
        let data = ta.data().iter().zip(c).map(|(x, y)| x * y).collect();
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        let rg = self.rg(a);
        Ok(self.push(t, Op::MulConst(a, c.into()), rg))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, Op::Sigmoid(a), sigmoid)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, Op::Tanh(a), f64::tanh)
    }

    /// `x * sigmoid(x)`.
    pub fn swish(&mut self, a: Var) -> Var {
        self.map(a, Op::Swish(a), |x| x * sigmoid(x))
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.map(a, Op::Log(a), f64::ln)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.map(a, Op::Exp(a), f64::exp)
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        self.map(a, Op::Clamp(a, lo, hi), |x| x.clamp(lo, hi))
    }

    /// Softmax along `axis` (0 = down columns, 1 = along rows).
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let ta = self.value(a);
        let (m, n) = (ta.rows(), ta.cols());
        let mut out = ta.data().to_vec();
        match axis {
            1 => {
                for row in out.chunks_mut(n) {
                    softmax_in_place(row.iter_mut());
                }
            }
            0 => {
                for c in 0..n {
                    softmax_in_place(out.iter_mut().skip(c).step_by(n).take(m));
                }
            }
            _ => return Err(contract(format!("softmax axis {axis} out of range"))),
        }
        let t = Tensor::new(ta.shape().to_vec(), out)?;
        let rg = self.rg(a);
        Ok(self.push(t, Op::Softmax(a, axis), rg))
    }

    /// Concatenates 2-D values along `axis` (0 = stack rows, 1 = join columns).
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| contract("concat of nothing"))?;
        let t0 = self.value(first);
        let out = match axis {
            0 => {
                let c = t0.cols();
                let mut data = Vec::new();
                let mut rows = 0;
                for &p in parts {
                    let tp = self.value(p);
                    if tp.cols() != c {
                        return Err(shape_err("concat", t0, tp));
                    }
                    rows += tp.rows();
                    data.extend_from_slice(tp.data());
                }
                Tensor::matrix(rows, c, data)
            }
            1 => {
                let m = t0.rows();
                let mut total = 0;
                for &p in parts {
                    let tp = self.value(p);
                    if tp.rows() != m {
                        return Err(shape_err("concat", t0, tp));
                    }
                    total += tp.cols();
                }
                let mut data = Vec::with_capacity(m * total);
                for r in 0..m {
                    for &p in parts {
                        data.extend_from_slice(self.value(p).row(r));
                    }
                }
                Tensor::matrix(m, total, data)
            }
            _ => return Err(contract(format!("concat axis {axis} out of range"))),
        };
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(out, Op::Concat(parts.to_vec(), axis), rg))
    }

    /// Rows (`axis = 0`) or columns (`axis = 1`) in `start..end`.
    pub fn slice(&mut self, src: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        let ts = self.value(src);
        let (m, n) = (ts.rows(), ts.cols());
        let out = match axis {
            0 if start <= end && end <= m => Tensor::matrix(end - start, n, ts.data()[start * n..end * n].to_vec()),
            1 if start <= end && end <= n => {
                let w = end - start;
                let mut data = Vec::with_capacity(m * w);
                for r in 0..m {
                    data.extend_from_slice(&ts.row(r)[start..end]);
                }
                Tensor::matrix(m, w, data)
            }
            _ => {
                return Err(FlockError::Shape {
                    op: "slice",
                    left: ts.shape().to_vec(),
                    right: vec![axis, start, end],
                })
            }
        };
        let rg = self.rg(src);
        Ok(self.push(out, Op::Slice { src, axis, start }, rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s = t.data().iter().sum::<f64>() / t.len().max(1) as f64;
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Mean(a), rg)
    }

    /// Embedding lookup: row `idx[i]` of `table` becomes output row `i`.
    pub fn gather_rows(&mut self, table: Var, idx: Rc<[usize]>) -> Result<Var> {
        let tt = self.value(table);
        let (m, c) = (tt.rows(), tt.cols());
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx.iter() {
            if i >= m {
                return Err(FlockError::Shape {
                    op: "gather_rows",
                    left: tt.shape().to_vec(),
                    right: vec![i],
                });
            }
            data.extend_from_slice(tt.row(i));
        }
        let out = Tensor::matrix(idx.len(), c, data);
        let rg = self.rg(table);
        Ok(self.push(out, Op::GatherRows(table, idx), rg))
    }

    /// Repeats a single row `times` times.
    pub fn broadcast_rows(&mut self, row: Var, times: usize) -> Var {
        let tr = self.value(row);
        let c = tr.len();
        let mut data = Vec::with_capacity(times * c);
        for _ in 0..times {
            data.extend_from_slice(tr.data());
        }
        let rg = self.rg(row);
        self.push(Tensor::matrix(times, c, data), Op::BroadcastRows(row), rg)
    }

    /// Row-wise `x / sqrt(mean(x^2) + eps) * gain`.
    pub fn rms_norm(&mut self, x: Var, gain: Var, eps: f64) -> Result<Var> {
        let (tx, tg) = (self.value(x), self.value(gain));
        let c = tx.cols();
        if tg.len() != c {
            return Err(shape_err("rms_norm", tx, tg));
        }
        let mut inv_rms = Vec::with_capacity(tx.rows());
        let mut out = Vec::with_capacity(tx.len());
        for row in tx.data().chunks(c) {
            let ms = row.iter().map(|v| v * v).sum::<f64>() / c as f64;
            let ms = ms + eps;
            let inv = if ms > 0.0 { 1.0 / ms.sqrt() } else { 0.0 };
            inv_rms.push(inv);
            out.extend(row.iter().zip(tg.data()).map(|(v, g)| v * inv * g));
        }
        let t = Tensor::new(tx.shape().to_vec(), out)?;
        let rg = self.rg(x) || self.rg(gain);
        Ok(self.push(t, Op::RmsNorm { x, gain, inv_rms }, rg))
    }

    /// One recurrent GRU pass over a time-major sequence.
    ///
    /// `xw` holds the precomputed input projections `W x + b` for all
    /// `steps * batch` positions (row `t * batch + i` is time `t` of
    /// sequence `i`), with gate columns ordered `[z | r | n]`. With hidden
    /// size `d`, `u_zr` is `d x 2d` and `u_n` is `d x d`:
    ///
    /// ```text
    /// z  = sigmoid(xw_z + h U_z)        r = sigmoid(xw_r + h U_r)
    /// h~ = tanh(xw_n + (r * h) U_n)     h' = z * h + (1 - z) * h~
    /// ```
    ///
    /// With `reverse` the sequence is consumed from the last step to the
    /// first. Output row layout matches `xw`.
    #[allow(clippy::too_many_arguments)]
    pub fn gru_scan(
        &mut self,
        xw: Var,
        u_zr: Var,
        u_n: Var,
        h0: Option<Var>,
        steps: usize,
        batch: usize,
        reverse: bool,
    ) -> Result<Var> {
        let (txw, tzr, tn) = (self.value(xw), self.value(u_zr), self.value(u_n));
        let d = tn.cols();
        if tn.rows() != d || tzr.rows() != d || tzr.cols() != 2 * d {
            return Err(shape_err("gru_scan", tzr, tn));
        }
        if txw.cols() != 3 * d || txw.rows() != steps * batch {
            return Err(shape_err("gru_scan", txw, tn));
        }
        let h_init = match h0 {
            Some(h) => {
                let th = self.value(h);
                if th.rows() != batch || th.cols() != d {
                    return Err(shape_err("gru_scan", th, tn));
                }
                th.data().to_vec()
            }
            None => vec![0.0; batch * d],
        };
        let total = steps * batch * d;
        let mut h_out = vec![0.0; total];
        let mut cache = GruCache {
            hprev: vec![0.0; total],
            z: vec![0.0; total],
            r: vec![0.0; total],
            n: vec![0.0; total],
            rh: vec![0.0; total],
        };
        let bd = batch * d;
        let mut hz = vec![0.0; batch * 2 * d];
        let mut hn = vec![0.0; bd];
        let mut prev_t: Option<usize> = None;
        for idx in 0..steps {
            let t = if reverse { steps - 1 - idx } else { idx };
            let span = t * bd..(t + 1) * bd;
            let hp: Vec<f64> = match prev_t {
                None => h_init.clone(),
                Some(p) => h_out[p * bd..(p + 1) * bd].to_vec(),
            };
            cache.hprev[span.clone()].copy_from_slice(&hp);
            gemm(batch, d, 2 * d, &hp, false, tzr.data(), false, 0.0, &mut hz);
            for i in 0..batch {
                let xrow = txw.row(t * batch + i);
                for j in 0..d {
                    let o = t * bd + i * d + j;
                    let z = sigmoid(xrow[j] + hz[i * 2 * d + j]);
                    let r = sigmoid(xrow[d + j] + hz[i * 2 * d + d + j]);
                    cache.z[o] = z;
                    cache.r[o] = r;
                    cache.rh[o] = r * hp[i * d + j];
                }
            }
            gemm(
                batch,
                d,
                d,
                &cache.rh[span.clone()],
                false,
                tn.data(),
                false,
                0.0,
                &mut hn,
            );
            for i in 0..batch {
                let xrow = txw.row(t * batch + i);
                for j in 0..d {
                    let o = t * bd + i * d + j;
                    let n = (xrow[2 * d + j] + hn[i * d + j]).tanh();
                    cache.n[o] = n;
                    let z = cache.z[o];
                    h_out[o] = z * hp[i * d + j] + (1.0 - z) * n;
                }
            }
            prev_t = Some(t);
        }
        let rg = self.rg(xw) || self.rg(u_zr) || self.rg(u_n) || h0.is_some_and(|h| self.rg(h));
        let out = Tensor::matrix(steps * batch, d, h_out);
        Ok(self.push(
            out,
            Op::Gru {
                xw,
                u_zr,
                u_n,
                h0,
                steps,
                batch,
                reverse,
                cache,
            },
            rg,
        ))
    }

    /// Multi-head softmax-weighted average of `values` rows per group.
    ///
    /// `values` is `M x (heads * head_dim)`, `logits` is `M x heads`, and
    /// `groups[i]` names the output row that input row `i` contributes to
    /// ([`NO_GROUP`] to skip). For every group `g` and head `k`:
    /// `out[g, k] = sum_i exp(logit[i,k]) * value[i,k] / sum_i exp(logit[i,k])`.
    /// Groups with no members produce zeros. Contributions are summed in
    /// the order given by `order` (row order when `None`), so two calls
    /// whose groups differ only by a relabelling produce bit-identical rows.
    pub fn grouped_softmax_pool(
        &mut self,
        values: Var,
        logits: Var,
        groups: Rc<[u32]>,
        num_groups: usize,
        heads: usize,
        order: Option<Rc<[usize]>>,
    ) -> Result<Var> {
        let (tv, tl) = (self.value(values), self.value(logits));
        let m = tv.rows();
        let width = tv.cols();
        if tl.rows() != m || tl.cols() != heads || heads == 0 || width % heads != 0 || groups.len() != m {
            return Err(shape_err("grouped_softmax_pool", tv, tl));
        }
        if let Some(o) = &order {
            if o.len() != m {
                return Err(contract("pool order length differs from row count"));
            }
        }
        let hd = width / heads;
        let row_at = |i: usize| order.as_ref().map_or(i, |o| o[i]);
        let mut maxes = vec![f64::NEG_INFINITY; num_groups * heads];
        for i in 0..m {
            let row = row_at(i);
            let g = groups[row];
            if g == NO_GROUP {
                continue;
            }
            let g = g as usize;
            if g >= num_groups {
                return Err(contract(format!("pool group {g} >= {num_groups}")));
            }
            for k in 0..heads {
                let a = tl.get(row, k);
                let slot = &mut maxes[g * heads + k];
                if a > *slot {
                    *slot = a;
                }
            }
        }
        let mut denom = vec![0.0; num_groups * heads];
        let mut out = vec![0.0; num_groups * width];
        let mut weights = vec![0.0; m * heads];
        for i in 0..m {
            let row = row_at(i);
            let g = groups[row];
            if g == NO_GROUP {
                continue;
            }
            let g = g as usize;
            let vrow = tv.row(row);
            for k in 0..heads {
                let e = (tl.get(row, k) - maxes[g * heads + k]).exp();
                weights[row * heads + k] = e;
                denom[g * heads + k] += e;
                let dst = &mut out[g * width + k * hd..g * width + (k + 1) * hd];
                dst.iter_mut()
                    .zip(&vrow[k * hd..(k + 1) * hd])
                    .for_each(|(o, v)| *o += e * v);
            }
        }
        for g in 0..num_groups {
            for k in 0..heads {
                let s = denom[g * heads + k];
                if s > 0.0 {
                    out[g * width + k * hd..g * width + (k + 1) * hd]
                        .iter_mut()
                        .for_each(|o| *o /= s);
                }
            }
        }
        for row in 0..m {
            let g = groups[row];
            if g == NO_GROUP {
                continue;
            }
            for k in 0..heads {
                weights[row * heads + k] /= denom[g as usize * heads + k];
            }
        }
        let rg = self.rg(values) || self.rg(logits);
        Ok(self.push(
            Tensor::matrix(num_groups, width, out),
            Op::Pool {
                values,
                logits,
                groups,
                heads,
                weights,
            },
            rg,
        ))
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lt = self.value(loss);
        if lt.len() != 1 {
            return Err(contract(format!("backward from non-scalar {:?}", lt.shape())));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(dy) = grads[i].take() else { continue };
            self.backprop_node(i, &dy, &mut grads);
            grads[i] = Some(dy);
        }
        let num_params = self.store.map_or(0, |s| s.len());
        let mut params = ParamGrads::empty(num_params);
        for (i, node) in self.nodes.iter().enumerate() {
            if let (Op::Param(id), Some(g)) = (&node.op, &grads[i]) {
                params.accumulate_slice(*id, g);
            }
        }
        Ok(Gradients {
            nodes: grads,
            params,
            shapes: self.nodes.iter().map(|n| n.value.get().shape().to_vec()).collect(),
        })
    }

    fn backprop_node(&self, i: usize, dy: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let y = node.value.get();
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                if self.rg(*a) {
                    let ga = grad_buf(grads, *a, m * k);
                    gemm(m, n, k, dy, false, tb.data(), true, 1.0, ga);
                }
                if self.rg(*b) {
                    let gb = grad_buf(grads, *b, k * n);
                    gemm(k, m, n, ta.data(), true, dy, false, 1.0, gb);
                }
            }
            Op::Add(a, b) => {
                self.acc(grads, *a, |g| add_into(g, dy));
                self.acc(grads, *b, |g| add_into(g, dy));
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, |g| add_into(g, dy));
                self.acc(grads, *b, |g| g.iter_mut().zip(dy).for_each(|(x, d)| *x -= d));
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                self.acc(grads, *a, |g| {
                    g.iter_mut().zip(dy).zip(tb.data()).for_each(|((x, d), v)| *x += d * v)
                });
                self.acc(grads, *b, |g| {
                    g.iter_mut().zip(dy).zip(ta.data()).for_each(|((x, d), v)| *x += d * v)
                });
            }
            Op::AddRow(a, row) => {
                self.acc(grads, *a, |g| add_into(g, dy));
                let c = y.cols();
                self.acc(grads, *row, |g| {
                    for chunk in dy.chunks(c) {
                        add_into(g, chunk);
                    }
                });
            }
            Op::Scale(a, s) | Op::Affine(a, s) => {
                self.acc(grads, *a, |g| g.iter_mut().zip(dy).for_each(|(x, d)| *x += s * d));
            }
            Op::MulConst(a, c) => {
                self.acc(grads, *a, |g| {
                    g.iter_mut().zip(dy).zip(c.iter()).for_each(|((x, d), v)| *x += d * v)
                });
            }
            Op::Sigmoid(a) => self.acc(grads, *a, |g| {
                g.iter_mut()
                    .zip(dy)
                    .zip(y.data())
                    .for_each(|((x, d), s)| *x += d * s * (1.0 - s))
            }),
            Op::Tanh(a) => self.acc(grads, *a, |g| {
                g.iter_mut()
                    .zip(dy)
                    .zip(y.data())
                    .for_each(|((x, d), t)| *x += d * (1.0 - t * t))
            }),
            Op::Swish(a) => {
                let ta = self.value(*a);
                self.acc(grads, *a, |g| {
                    g.iter_mut().zip(dy).zip(ta.data()).for_each(|((x, d), v)| {
                        let s = sigmoid(*v);
                        *x += d * (s + v * s * (1.0 - s));
                    })
                })
            }
            Op::Log(a) => {
                let ta = self.value(*a);
                self.acc(grads, *a, |g| {
                    g.iter_mut().zip(dy).zip(ta.data()).for_each(|((x, d), v)| *x += d / v)
                })
            }
            Op::Exp(a) => self.acc(grads, *a, |g| {
                g.iter_mut().zip(dy).zip(y.data()).for_each(|((x, d), e)| *x += d * e)
            }),
            Op::Clamp(a, lo, hi) => {
                let ta = self.value(*a);
                self.acc(grads, *a, |g| {
                    g.iter_mut().zip(dy).zip(ta.data()).for_each(|((x, d), v)| {
                        if *v >= *lo && *v <= *hi {
                            *x += d;
                        }
                    })
                })
            }
            Op::Softmax(a, axis) => {
                let (m, n) = (y.rows(), y.cols());
                let yd = y.data();
                self.acc(grads, *a, |g| {
                    if *axis == 1 {
                        for r in 0..m {
                            let s: f64 = (0..n).map(|c| dy[r * n + c] * yd[r * n + c]).sum();
                            for c in 0..n {
                                g[r * n + c] += yd[r * n + c] * (dy[r * n + c] - s);
                            }
                        }
                    } else {
                        for c in 0..n {
                            let s: f64 = (0..m).map(|r| dy[r * n + c] * yd[r * n + c]).sum();
                            for r in 0..m {
                                g[r * n + c] += yd[r * n + c] * (dy[r * n + c] - s);
                            }
                        }
                    }
                })
            }
            Op::Concat(parts, axis) => {
                if *axis == 0 {
                    let mut off = 0;
                    for &p in parts {
                        let len = self.value(p).len();
                        self.acc(grads, p, |g| add_into(g, &dy[off..off + len]));
                        off += len;
                    }
                } else {
                    let total = y.cols();
                    let mut col = 0;
                    for &p in parts {
                        let w = self.value(p).cols();
                        self.acc(grads, p, |g| {
                            for r in 0..y.rows() {
                                add_into(&mut g[r * w..(r + 1) * w], &dy[r * total + col..r * total + col + w]);
                            }
                        });
                        col += w;
                    }
                }
            }
            Op::Slice { src, axis, start } => {
                let ts = self.value(*src);
                let n = ts.cols();
                self.acc(grads, *src, |g| {
                    if *axis == 0 {
                        add_into(&mut g[start * n..start * n + dy.len()], dy);
                    } else {
                        let w = y.cols();
                        for r in 0..y.rows() {
                            add_into(&mut g[r * n + start..r * n + start + w], &dy[r * w..(r + 1) * w]);
                        }
                    }
                })
            }
            Op::Sum(a) => self.acc(grads, *a, |g| g.iter_mut().for_each(|x| *x += dy[0])),
            Op::Mean(a) => {
                let len = self.value(*a).len().max(1) as f64;
                self.acc(grads, *a, |g| g.iter_mut().for_each(|x| *x += dy[0] / len))
            }
            Op::GatherRows(table, idx) => {
                let c = y.cols();
                self.acc(grads, *table, |g| {
                    for (r, &i) in idx.iter().enumerate() {
                        add_into(&mut g[i * c..(i + 1) * c], &dy[r * c..(r + 1) * c]);
                    }
                })
            }
            Op::BroadcastRows(row) => {
                let c = y.cols();
                self.acc(grads, *row, |g| {
                    for chunk in dy.chunks(c) {
                        add_into(g, chunk);
                    }
                })
            }
            Op::RmsNorm { x, gain, inv_rms } => {
                let (tx, tg) = (self.value(*x), self.value(*gain));
                let c = tx.cols();
                if self.rg(*gain) {
                    let gg = grad_buf(grads, *gain, c);
                    for (r, row) in tx.data().chunks(c).enumerate() {
                        for j in 0..c {
                            gg[j] += dy[r * c + j] * row[j] * inv_rms[r];
                        }
                    }
                }
                if self.rg(*x) {
                    let gx = grad_buf(grads, *x, tx.len());
                    for (r, row) in tx.data().chunks(c).enumerate() {
                        let inv = inv_rms[r];
                        let mut dot = 0.0;
                        for j in 0..c {
                            dot += dy[r * c + j] * tg.data()[j] * row[j] * inv;
                        }
                        let mean = dot / c as f64;
                        for j in 0..c {
                            let dxhat = dy[r * c + j] * tg.data()[j];
                            let xhat = row[j] * inv;
                            gx[r * c + j] += inv * (dxhat - xhat * mean);
                        }
                    }
                }
            }
            Op::Gru {
                xw,
                u_zr,
                u_n,
                h0,
                steps,
                batch,
                reverse,
                cache,
            } => self.backprop_gru(dy, grads, *xw, *u_zr, *u_n, *h0, *steps, *batch, *reverse, cache),
            Op::Pool {
                values,
                logits,
                groups,
                heads,
                weights,
            } => {
                let tv = self.value(*values);
                let width = tv.cols();
                let hd = width / heads;
                let m = tv.rows();
                if self.rg(*values) {
                    let gv = grad_buf(grads, *values, tv.len());
                    for row in 0..m {
                        let g = groups[row];
                        if g == NO_GROUP {
                            continue;
                        }
                        let g = g as usize;
                        for k in 0..*heads {
                            let w = weights[row * heads + k];
                            for j in k * hd..(k + 1) * hd {
                                gv[row * width + j] += w * dy[g * width + j];
                            }
                        }
                    }
                }
                if self.rg(*logits) {
                    let gl = grad_buf(grads, *logits, m * heads);
                    for row in 0..m {
                        let g = groups[row];
                        if g == NO_GROUP {
                            continue;
                        }
                        let g = g as usize;
                        let vrow = tv.row(row);
                        for k in 0..*heads {
                            let w = weights[row * heads + k];
                            let mut dot = 0.0;
                            for j in k * hd..(k + 1) * hd {
                                dot += (vrow[j] - y.data()[g * width + j]) * dy[g * width + j];
                            }
                            gl[row * heads + k] += w * dot;
                        }
                    }
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn backprop_gru(
        &self,
        dh_out: &[f64],
        grads: &mut [Option<Vec<f64>>],
        xw: Var,
        u_zr: Var,
        u_n: Var,
        h0: Option<Var>,
        steps: usize,
        batch: usize,
        reverse: bool,
        cache: &GruCache,
    ) {
        let (tzr, tn) = (self.value(u_zr), self.value(u_n));
        let d = tn.cols();
        let bd = batch * d;
        let total = steps * bd;
        let mut da_zr = vec![0.0; steps * batch * 2 * d];
        let mut da_n = vec![0.0; total];
        let mut carry = vec![0.0; bd];
        let mut drh = vec![0.0; bd];
        for idx in (0..steps).rev() {
            let t = if reverse { steps - 1 - idx } else { idx };
            let base = t * bd;
            let mut dhp = vec![0.0; bd];
            for o in 0..bd {
                let dh = dh_out[base + o] + carry[o];
                let (z, n, hp) = (cache.z[base + o], cache.n[base + o], cache.hprev[base + o]);
                let dz = dh * (hp - n);
                let dn = dh * (1.0 - z);
                dhp[o] = dh * z;
                da_n[base + o] = dn * (1.0 - n * n);
                let i = o / d;
                let j = o % d;
                da_zr[(t * batch + i) * 2 * d + j] = dz * z * (1.0 - z);
            }
            gemm(
                batch,
                d,
                d,
                &da_n[base..base + bd],
                false,
                tn.data(),
                true,
                0.0,
                &mut drh,
            );
            for o in 0..bd {
                let (r, hp) = (cache.r[base + o], cache.hprev[base + o]);
                let dr = drh[o] * hp;
                dhp[o] += drh[o] * r;
                let i = o / d;
                let j = o % d;
                da_zr[(t * batch + i) * 2 * d + d + j] = dr * r * (1.0 - r);
            }
            let zr_span = t * batch * 2 * d..(t + 1) * batch * 2 * d;
            gemm(batch, 2 * d, d, &da_zr[zr_span], false, tzr.data(), true, 1.0, &mut dhp);
            carry = dhp;
        }
        let rows = steps * batch;
        if self.rg(u_zr) {
            let g = grad_buf(grads, u_zr, d * 2 * d);
            gemm(d, rows, 2 * d, &cache.hprev, true, &da_zr, false, 1.0, g);
        }
        if self.rg(u_n) {
            let g = grad_buf(grads, u_n, d * d);
            gemm(d, rows, d, &cache.rh, true, &da_n, false, 1.0, g);
        }
        if self.rg(xw) {
            let g = grad_buf(grads, xw, rows * 3 * d);
            for row in 0..rows {
                let dst = &mut g[row * 3 * d..(row + 1) * 3 * d];
                add_into(&mut dst[..2 * d], &da_zr[row * 2 * d..(row + 1) * 2 * d]);
                add_into(&mut dst[2 * d..], &da_n[row * d..(row + 1) * d]);
            }
        }
        if let Some(h) = h0 {
            if self.rg(h) {
                let g = grad_buf(grads, h, bd);
                add_into(g, &carry);
            }
        }
    }

    fn acc(&self, grads: &mut [Option<Vec<f64>>], v: Var, f: impl FnOnce(&mut [f64])) {
        if self.rg(v) {
            let len = self.value(v).len();
            f(grad_buf(grads, v, len));
        }
    }
}

fn grad_buf(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut [f64] {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(a, b)| *a += b);
}

fn softmax_in_place<'a>(it: impl Iterator<Item = &'a mut f64>) {
    let mut xs: Vec<&mut f64> = it.collect();
    let max = xs.iter().map(|x| **x).fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in xs.iter_mut() {
        **x = (**x - max).exp();
        sum += **x;
    }
    for x in xs.iter_mut() {
        **x /= sum;
    }
}

/// Result of [`Graph::backward`].
pub struct Gradients {
    nodes: Vec<Option<Vec<f64>>>,
    params: ParamGrads,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient with respect to a node, or zeros if none reached it.
    pub fn grad(&self, v: Var) -> Tensor {
        let shape = &self.shapes[v.0];
        match &self.nodes[v.0] {
            Some(g) => Tensor::new(shape.clone(), g.clone()).expect("grad shape"),
            None => Tensor::zeros(shape),
        }
    }

    pub fn params(&self) -> &ParamGrads {
        &self.params
    }

    pub fn into_params(self) -> ParamGrads {
        self.params
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let mut g = Graph::new();
        let x = g.input(Tensor::row_vector(&[0.0, 0.0]));
        let y = g.softmax(x, 1).unwrap();
        assert_eq!(g.value(y).data(), &[0.5, 0.5]);
    }

    #[test]
    fn sigmoid_value_and_slope_at_zero() {
        let mut g = Graph::new();
        let x = g.variable(Tensor::scalar(0.0));
        let y = g.sigmoid(x);
        assert_eq!(g.value(y).item(), 0.5);
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.grad(x).item(), 0.25);
    }

    #[test]
    fn matmul_by_hand() {
        let mut g = Graph::new();
        let a = g.input(Tensor::from_rows(&[&[1.0, 2.0]]));
        let b = g.input(Tensor::from_rows(&[&[3.0], &[4.0]]));
        let c = g.matmul(a, b).unwrap();
        assert_eq!(g.value(c).data(), &[11.0]);
    }

    #[test]
    fn shape_errors_name_both_shapes() {
        let mut g = Graph::new();
        let a = g.input(Tensor::zeros(&[2, 3]));
        let b = g.input(Tensor::zeros(&[2, 3]));
        let err = g.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]") && err.contains("matmul"), "{err}");
    }

    #[test]
    fn gru_zero_weights_halves_initial_state() {
        // z = sigmoid(0) = 0.5, candidate = tanh(0) = 0, so h1 = 0.5 * h0.
        let mut g = Graph::new();
        let xw = g.input(Tensor::zeros(&[1, 6]));
        let uzr = g.input(Tensor::zeros(&[2, 4]));
        let un = g.input(Tensor::zeros(&[2, 2]));
        let h0 = g.input(Tensor::from_rows(&[&[1.0, 0.0]]));
        let h = g.gru_scan(xw, uzr, un, Some(h0), 1, 1, false).unwrap();
        assert_eq!(g.value(h).data(), &[0.5, 0.0]);
    }

    #[test]
    fn gru_zero_everything_stays_zero() {
        let mut g = Graph::new();
        let xw = g.input(Tensor::zeros(&[4 * 3, 6]));
        let uzr = g.input(Tensor::zeros(&[2, 4]));
        let un = g.input(Tensor::zeros(&[2, 2]));
        let h = g.gru_scan(xw, uzr, un, None, 4, 3, true).unwrap();
        assert!(g.value(h).data().iter().all(|x| *x == 0.0));
    }

    #[test]
    fn pool_matches_hand_softmax_average() {
        // Two proposals [1,0] and [0,1], confidences 0 and ln 3, one head.
        let mut g = Graph::new();
        let v = g.input(Tensor::from_rows(&[&[1.0, 0.0], &[0.0, 1.0]]));
        let a = g.input(Tensor::from_rows(&[&[0.0], &[3f64.ln()]]));
        let out = g.grouped_softmax_pool(v, a, vec![0u32, 0].into(), 2, 1, None).unwrap();
        let o = g.value(out);
        assert!(close(o.get(0, 0), 0.25, 1e-15) && close(o.get(0, 1), 0.75, 1e-15));
        // The second group has no members.
        assert_eq!(o.row(1), &[0.0, 0.0]);
    }

    #[test]
    fn pool_skips_ungrouped_rows() {
        let mut g = Graph::new();
        let v = g.input(Tensor::from_rows(&[&[5.0], &[7.0]]));
        let a = g.input(Tensor::from_rows(&[&[0.0], &[0.0]]));
        let out = g
            .grouped_softmax_pool(v, a, vec![NO_GROUP, 0].into(), 1, 1, None)
            .unwrap();
        assert_eq!(g.value(out).data(), &[7.0]);
    }

    #[test]
    fn rms_norm_by_hand() {
        let mut g = Graph::new();
        let x = g.input(Tensor::row_vector(&[3.0, 4.0]));
        let gain = g.input(Tensor::row_vector(&[1.0, 1.0]));
        let y = g.rms_norm(x, gain, 0.0).unwrap();
        let rms = 12.5f64.sqrt();
        assert!(close(g.value(y).get(0, 0), 3.0 / rms, 1e-15));
        assert!(close(g.value(y).get(0, 1), 4.0 / rms, 1e-15));
    }

    #[test]
    fn rms_norm_degenerate_inputs() {
        let mut g = Graph::new();
        let x = g.input(Tensor::row_vector(&[0.0, 0.0]));
        let ones = g.input(Tensor::row_vector(&[1.0, 1.0]));
        let y = g.rms_norm(x, ones, 1e-6).unwrap();
        assert_eq!(g.value(y).data(), &[0.0, 0.0]);
        let x = g.input(Tensor::row_vector(&[3.0, 4.0]));
        let zeros = g.input(Tensor::row_vector(&[0.0, 0.0]));
        let y = g.rms_norm(x, zeros, 1e-6).unwrap();
        assert_eq!(g.value(y).data(), &[0.0, 0.0]);
    }

    #[test]
    fn backward_through_shared_node_accumulates() {
        let mut g = Graph::new();
        let x = g.variable(Tensor::row_vector(&[1.0, 2.0]));
        let y = g.mul(x, x).unwrap();
        let s = g.sum(y);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.grad(x).data(), &[2.0, 4.0]);
    }
}
