//! Recording tape and reverse-mode differentiation.
//!
//! Every op appends one node holding its forward value; [`Tape::backward`]
//! walks the nodes in reverse and accumulates vector-Jacobian products into
//! the [`ParamStore`] gradients. Nodes that do not depend on any parameter are
//! skipped during the reverse sweep.

use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::Arc;

use crate::{Array, NumericsError, ParamId, ParamStore, Real, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<T> {
    Constant,
    Param(ParamId),
    MatMul { a: Var, b: Var, tb: bool },
    BatchMatMul { a: Var, b: Var, tb: bool },
    Add(Var, Var),
    AddBroadcast(Var, Var),
    Mul(Var, Var),
    MulConst(Var, Arc<Array<T>>),
    Scale(Var, T),
    Gelu(Var),
    Softmax(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<T>, inv_std: Vec<T> },
    Embedding { table: Var, ids: Vec<usize> },
    MaskedFill { a: Var, mask: Arc<Vec<bool>> },
    MaskedMean { x: Var, mask: Arc<Vec<bool>>, counts: Vec<usize> },
    CrossEntropy { logits: Var, labels: Vec<Option<usize>>, probs: Vec<T>, count: usize },
    Reshape(Var),
    SwapAxes12(Var),
    Sum(Var),
}

#[derive(Debug)]
struct Node<T> {
    value: Arc<Array<T>>,
    op: Op<T>,
    needs_grad: bool,
}

/// A computation graph recorded op by op.
///
/// Ops take `&self`; the tape is single-threaded and meant to live for one
/// forward/backward pass.
#[derive(Debug, Default)]
pub struct Tape<T> {
    nodes: RefCell<Vec<Node<T>>>,
    params: RefCell<HashMap<ParamId, Var>>,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

fn shape_err<V>(msg: String) -> Result<V> {
    Err(NumericsError::Shape(msg))
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: RefCell::new(Vec::new()), params: RefCell::new(HashMap::new()) }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Array<T>, op: Op<T>, needs_grad: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value: Arc::new(value), op, needs_grad });
        Var(nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        let nodes = self.nodes.borrow();
        vars.iter().any(|v| nodes[v.0].needs_grad)
    }

    pub fn value(&self, v: Var) -> Arc<Array<T>> {
        self.nodes.borrow()[v.0].value.clone()
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape().to_vec()
    }

    pub fn constant(&self, value: Array<T>) -> Var {
        self.push(value, Op::Constant, false)
    }

    /// Leaf for a parameter; repeated calls return the same node.
    pub fn param(&self, store: &ParamStore<T>, id: ParamId) -> Var {
        if let Some(&v) = self.params.borrow().get(&id) {
            return v;
        }
        let value = store.get(id).value.clone();
        let v = {
            let mut nodes = self.nodes.borrow_mut();
            nodes.push(Node { value, op: Op::Param(id), needs_grad: true });
            Var(nodes.len() - 1)
        };
        self.params.borrow_mut().insert(id, v);
        v
    }

    /// `a[..., k] · b[k, n]`, or `a · bᵀ` with `b` stored `[n, k]` when `tb`.
    pub fn matmul(&self, a: Var, b: Var, tb: bool) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if bv.shape().len() != 2 {
            return shape_err(format!("matmul rhs must be 2-d, got {:?}", bv.shape()));
        }
        let k = av.last_dim();
        let (bk, n) = if tb { (bv.shape()[1], bv.shape()[0]) } else { (bv.shape()[0], bv.shape()[1]) };
        if bk != k {
            return shape_err(format!("matmul {:?} x {:?} (tb={tb})", av.shape(), bv.shape()));
        }
        let m = av.len() / k;
        let mut out = vec![T::zero(); m * n];
        T::gemm(m, k, n, av.data(), false, bv.data(), tb, T::zero(), &mut out);
        let mut shape = av.shape().to_vec();
        *shape.last_mut().unwrap() = n;
        Ok(self.push(Array::new(shape, out)?, Op::MatMul { a, b, tb }, self.needs(&[a, b])))
    }

    /// Batched `a[b, m, k] · b[b, k, n]` (or `b[b, n, k]` transposed when `tb`).
    pub fn batch_matmul(&self, a: Var, b: Var, tb: bool) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (sa, sb) = (av.shape(), bv.shape());
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] {
            return shape_err(format!("batch_matmul {sa:?} x {sb:?}"));
        }
        let (batch, m, k) = (sa[0], sa[1], sa[2]);
        let (bk, n) = if tb { (sb[2], sb[1]) } else { (sb[1], sb[2]) };
        if bk != k {
            return shape_err(format!("batch_matmul {sa:?} x {sb:?} (tb={tb})"));
        }
        let mut out = vec![T::zero(); batch * m * n];
        for i in 0..batch {
            T::gemm(
                m,
                k,
                n,
                &av.data()[i * m * k..],
                false,
                &bv.data()[i * k * n..],
                tb,
                T::zero(),
                &mut out[i * m * n..(i + 1) * m * n],
            );
        }
        Ok(self.push(Array::new(vec![batch, m, n], out)?, Op::BatchMatMul { a, b, tb }, self.needs(&[a, b])))
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return shape_err(format!("add {:?} + {:?}", av.shape(), bv.shape()));
        }
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| x + y).collect();
        Ok(self.push(Array::new(av.shape().to_vec(), data)?, Op::Add(a, b), self.needs(&[a, b])))
    }

    /// `a + b` with `b` tiled over the leading axes of `a`.
    pub fn add_broadcast(&self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (sa, sb) = (av.shape(), bv.shape());
        if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != *sb {
            return shape_err(format!("add_broadcast {sa:?} + {sb:?}"));
        }
        let pattern = bv.data();
        let data = av
            .data()
            .chunks(pattern.len())
            .flat_map(|chunk| chunk.iter().zip(pattern).map(|(&x, &y)| x + y))
            .collect();
        Ok(self.push(Array::new(sa.to_vec(), data)?, Op::AddBroadcast(a, b), self.needs(&[a, b])))
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return shape_err(format!("mul {:?} * {:?}", av.shape(), bv.shape()));
        }
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| x * y).collect();
        Ok(self.push(Array::new(av.shape().to_vec(), data)?, Op::Mul(a, b), self.needs(&[a, b])))
    }

    /// Elementwise product with a non-differentiable array (dropout masks).
    pub fn mul_const(&self, a: Var, c: Array<T>) -> Result<Var> {
        let av = self.value(a);
        if av.shape() != c.shape() {
            return shape_err(format!("mul_const {:?} * {:?}", av.shape(), c.shape()));
        }
        let data = av.data().iter().zip(c.data()).map(|(&x, &y)| x * y).collect();
        Ok(self.push(Array::new(av.shape().to_vec(), data)?, Op::MulConst(a, Arc::new(c)), self.needs(&[a])))
    }

    pub fn scale(&self, a: Var, s: T) -> Var {
        let av = self.value(a);
        let out = av.map(|x| x * s);
        self.push(out, Op::Scale(a, s), self.needs(&[a]))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&self, a: Var) -> Var {
        let av = self.value(a);
        let (c, k) = (T::of(GELU_C), T::of(GELU_A));
        let half = T::of(0.5);
        let out = av.map(|x| half * x * (T::one() + (c * (x + k * x * x * x)).tanh()));
        self.push(out, Op::Gelu(a), self.needs(&[a]))
    }

    /// Softmax over the last axis, stabilized by subtracting the row max.
    pub fn softmax(&self, a: Var) -> Var {
        let av = self.value(a);
        let d = av.last_dim();
        let mut out = av.data().to_vec();
        for row in out.chunks_mut(d) {
            softmax_in_place(row);
        }
        let out = Array::new(av.shape().to_vec(), out).expect("same shape");
        self.push(out, Op::Softmax(a), self.needs(&[a]))
    }

    /// Layer normalization over the last axis with affine `gamma`, `beta`.
    pub fn layer_norm(&self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (xv, gv, bv) = (self.value(x), self.value(gamma), self.value(beta));
        let d = xv.last_dim();
        if gv.shape() != [d] || bv.shape() != [d] {
            return shape_err(format!("layer_norm x {:?}, gamma {:?}, beta {:?}", xv.shape(), gv.shape(), bv.shape()));
        }
        let eps = T::of(eps);
        let dn = T::of(d as f64);
        let rows = xv.len() / d;
        let mut xhat = vec![T::zero(); xv.len()];
        let mut inv_std = vec![T::zero(); rows];
        let mut out = vec![T::zero(); xv.len()];
        for r in 0..rows {
            let row = &xv.data()[r * d..(r + 1) * d];
            let mean = row.iter().copied().sum::<T>() / dn;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dn;
            let inv = T::one() / (var + eps).sqrt();
            inv_std[r] = inv;
            for j in 0..d {
                let h = (row[j] - mean) * inv;
                xhat[r * d + j] = h;
                out[r * d + j] = h * gv.data()[j] + bv.data()[j];
            }
        }
        let needs = self.needs(&[x, gamma, beta]);
        Ok(self.push(
            Array::new(xv.shape().to_vec(), out)?,
            Op::LayerNorm { x, gamma, beta, xhat, inv_std },
            needs,
        ))
    }

    /// Rows of `table[v, d]` selected by `ids`, shaped `[ids.len(), d]`.
    pub fn embedding(&self, table: Var, ids: &[usize]) -> Result<Var> {
        let tv = self.value(table);
        if tv.shape().len() != 2 {
            return shape_err(format!("embedding table must be 2-d, got {:?}", tv.shape()));
        }
        let (v, d) = (tv.shape()[0], tv.shape()[1]);
        if ids.is_empty() {
            return shape_err("embedding lookup with no ids".into());
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
            return shape_err(format!("embedding id {bad} out of range {v}"));
        }
        let mut out = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            out.extend_from_slice(tv.row(i));
        }
        Ok(self.push(
            Array::new(vec![ids.len(), d], out)?,
            Op::Embedding { table, ids: ids.to_vec() },
            self.needs(&[table]),
        ))
    }

    /// Replace entries where `mask` is true with [`crate::MASK_VALUE`].
    pub fn masked_fill(&self, a: Var, mask: Arc<Vec<bool>>) -> Result<Var> {
        let av = self.value(a);
        if mask.len() != av.len() {
            return shape_err(format!("mask of {} for array of {}", mask.len(), av.len()));
        }
        let fill = T::of(crate::MASK_VALUE);
        let data = av.data().iter().zip(mask.iter()).map(|(&x, &m)| if m { fill } else { x }).collect();
        Ok(self.push(Array::new(av.shape().to_vec(), data)?, Op::MaskedFill { a, mask }, self.needs(&[a])))
    }

    /// Mean of the rows of `x[b, t, d]` selected by `mask[b·t]`, giving `[b, d]`.
    pub fn masked_mean(&self, x: Var, mask: Arc<Vec<bool>>) -> Result<Var> {
        let xv = self.value(x);
        let s = xv.shape();
        if s.len() != 3 || mask.len() != s[0] * s[1] {
            return shape_err(format!("masked_mean x {s:?} with mask of {}", mask.len()));
        }
        let (b, t, d) = (s[0], s[1], s[2]);
        let mut out = vec![T::zero(); b * d];
        let mut counts = vec![0usize; b];
        for i in 0..b {
            let acc = &mut out[i * d..(i + 1) * d];
            for j in 0..t {
                if mask[i * t + j] {
                    counts[i] += 1;
                    for (o, &v) in acc.iter_mut().zip(&xv.data()[(i * t + j) * d..(i * t + j + 1) * d]) {
                        *o += v;
                    }
                }
            }
            if counts[i] == 0 {
                return shape_err(format!("masked_mean: batch row {i} selects no positions"));
            }
            let n = T::of(counts[i] as f64);
            acc.iter_mut().for_each(|o| *o /= n);
        }
        Ok(self.push(Array::new(vec![b, d], out)?, Op::MaskedMean { x, mask, counts }, self.needs(&[x])))
    }

    /// Mean negative log-likelihood of `labels` under `softmax(logits)`.
    ///
    /// `logits` is viewed as `[n, vocab]`; rows whose label is `None` are padding
    /// and contribute neither loss nor gradient.
    pub fn cross_entropy(&self, logits: Var, labels: &[Option<usize>]) -> Result<Var> {
        let lv = self.value(logits);
        let v = lv.last_dim();
        let n = lv.len() / v;
        if labels.len() != n {
            return shape_err(format!("{} labels for {n} logit rows", labels.len()));
        }
        let mut probs = lv.data().to_vec();
        let mut total = 0.0f64;
        let mut count = 0usize;
        for (r, label) in labels.iter().enumerate() {
            let row = &mut probs[r * v..(r + 1) * v];
            let log_z = log_sum_exp(row);
            if let Some(y) = *label {
                if y >= v {
                    return shape_err(format!("label {y} out of range {v}"));
                }
                total += (log_z - row[y]).as_f64();
                count += 1;
            }
            row.iter_mut().for_each(|x| *x = (*x - log_z).exp());
        }
        if count == 0 {
            return shape_err("cross_entropy with no labelled rows".into());
        }
        let loss = Array::scalar(T::of(total / count as f64));
        Ok(self.push(
            loss,
            Op::CrossEntropy { logits, labels: labels.to_vec(), probs, count },
            self.needs(&[logits]),
        ))
    }

    pub fn reshape(&self, a: Var, shape: &[usize]) -> Result<Var> {
        let av = self.value(a);
        let out = (*av).clone().reshaped(shape)?;
        Ok(self.push(out, Op::Reshape(a), self.needs(&[a])))
    }

    /// `[p, q, r, s] -> [p, r, q, s]`.
    pub fn swap_axes12(&self, a: Var) -> Result<Var> {
        let av = self.value(a);
        let s = av.shape();
        if s.len() != 4 {
            return shape_err(format!("swap_axes12 needs 4-d input, got {s:?}"));
        }
        let out = swap12(av.data(), s);
        Ok(self.push(Array::new(vec![s[0], s[2], s[1], s[3]], out)?, Op::SwapAxes12(a), self.needs(&[a])))
    }

    pub fn sum(&self, a: Var) -> Var {
        let av = self.value(a);
        self.push(Array::scalar(av.sum()), Op::Sum(a), self.needs(&[a]))
    }

    /// Accumulate `d(loss)/d(param)` into every parameter reached from `loss`.
    ///
    /// Gradients add onto whatever the store already holds.
    pub fn backward(&self, loss: Var, store: &mut ParamStore<T>) -> Result<()> {
        let nodes = self.nodes.borrow();
        let lv = &nodes[loss.0].value;
        if !lv.is_scalar() {
            return Err(NumericsError::NonScalarLoss(lv.shape().to_vec()));
        }
        if !lv.all_finite() {
            return Err(NumericsError::NonFinite("loss".into()));
        }
        let mut grads: Vec<Option<Array<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Array::full(lv.shape(), T::one()));

        for idx in (0..=loss.0).rev() {
            let node = &nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            let mut acc = |v: Var, contribution: Array<T>| {
                if !nodes[v.0].needs_grad {
                    return;
                }
                match &mut grads[v.0] {
                    Some(existing) => existing.add_assign(&contribution),
                    slot @ None => *slot = Some(contribution),
                }
            };
            let val = |v: Var| nodes[v.0].value.clone();
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => {
                    let p = store.get_mut(*id);
                    if p.grad.shape() != g.shape() {
                        return shape_err(format!("gradient shape mismatch for {}", p.name));
                    }
                    p.grad.add_assign(&g);
                }
                Op::MatMul { a, b, tb } => {
                    let (av, bv) = (val(*a), val(*b));
                    let k = av.last_dim();
                    let m = av.len() / k;
                    let n = g.last_dim();
                    if nodes[a.0].needs_grad {
                        let mut da = vec![T::zero(); m * k];
                        // dA = dC · Bᵀ
                        T::gemm(m, n, k, g.data(), false, bv.data(), !*tb, T::zero(), &mut da);
                        acc(*a, Array::new(av.shape().to_vec(), da)?);
                    }
                    if nodes[b.0].needs_grad {
                        let mut db = vec![T::zero(); k * n];
                        if *tb {
                            T::gemm(n, m, k, g.data(), true, av.data(), false, T::zero(), &mut db);
                        } else {
                            T::gemm(k, m, n, av.data(), true, g.data(), false, T::zero(), &mut db);
                        }
                        acc(*b, Array::new(bv.shape().to_vec(), db)?);
                    }
                }
                Op::BatchMatMul { a, b, tb } => {
                    let (av, bv) = (val(*a), val(*b));
                    let (batch, m, k) = (av.shape()[0], av.shape()[1], av.shape()[2]);
                    let n = g.shape()[2];
                    if nodes[a.0].needs_grad {
                        let mut da = vec![T::zero(); batch * m * k];
                        for i in 0..batch {
                            T::gemm(
                                m,
                                n,
                                k,
                                &g.data()[i * m * n..],
                                false,
                                &bv.data()[i * k * n..],
                                !*tb,
                                T::zero(),
                                &mut da[i * m * k..(i + 1) * m * k],
                            );
                        }
                        acc(*a, Array::new(av.shape().to_vec(), da)?);
                    }
                    if nodes[b.0].needs_grad {
                        let mut db = vec![T::zero(); batch * k * n];
                        for i in 0..batch {
                            let out = &mut db[i * k * n..(i + 1) * k * n];
                            if *tb {
                                T::gemm(n, m, k, &g.data()[i * m * n..], true, &av.data()[i * m * k..], false, T::zero(), out);
                            } else {
                                T::gemm(k, m, n, &av.data()[i * m * k..], true, &g.data()[i * m * n..], false, T::zero(), out);
                            }
                        }
                        acc(*b, Array::new(bv.shape().to_vec(), db)?);
                    }
                }
                Op::Add(a, b) => {
                    acc(*a, g.clone());
                    acc(*b, g);
                }
                Op::AddBroadcast(a, b) => {
                    let bv = val(*b);
                    if nodes[b.0].needs_grad {
                        let mut db = vec![T::zero(); bv.len()];
                        for chunk in g.data().chunks(bv.len()) {
                            for (d, &x) in db.iter_mut().zip(chunk) {
                                *d += x;
                            }
                        }
                        acc(*b, Array::new(bv.shape().to_vec(), db)?);
                    }
                    acc(*a, g);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (val(*a), val(*b));
                    let da = g.data().iter().zip(bv.data()).map(|(&x, &y)| x * y).collect();
                    let db = g.data().iter().zip(av.data()).map(|(&x, &y)| x * y).collect();
                    acc(*a, Array::new(g.shape().to_vec(), da)?);
                    acc(*b, Array::new(g.shape().to_vec(), db)?);
                }
                Op::MulConst(a, c) => {
                    let da = g.data().iter().zip(c.data()).map(|(&x, &y)| x * y).collect();
                    acc(*a, Array::new(g.shape().to_vec(), da)?);
                }
                Op::Scale(a, s) => {
                    let s = *s;
                    acc(*a, g.map(|x| x * s));
                }
                Op::Gelu(a) => {
                    let av = val(*a);
                    let (c, k, half) = (T::of(GELU_C), T::of(GELU_A), T::of(0.5));
                    let three = T::of(3.0);
                    let da = g
                        .data()
                        .iter()
                        .zip(av.data())
                        .map(|(&gy, &x)| {
                            let t = (c * (x + k * x * x * x)).tanh();
                            let dt = (T::one() - t * t) * c * (T::one() + three * k * x * x);
                            gy * (half * (T::one() + t) + half * x * dt)
                        })
                        .collect();
                    acc(*a, Array::new(g.shape().to_vec(), da)?);
                }
                Op::Softmax(a) => {
                    let y = &node.value;
                    let d = y.last_dim();
                    let mut da = vec![T::zero(); y.len()];
                    for ((dx, yr), gr) in da.chunks_mut(d).zip(y.data().chunks(d)).zip(g.data().chunks(d)) {
                        let dot: T = yr.iter().zip(gr).map(|(&p, &q)| p * q).sum();
                        for j in 0..d {
                            dx[j] = yr[j] * (gr[j] - dot);
                        }
                    }
                    acc(*a, Array::new(y.shape().to_vec(), da)?);
                }
                Op::LayerNorm { x, gamma, beta, xhat, inv_std } => {
                    let gv = val(*gamma);
                    let d = gv.len();
                    let dn = T::of(d as f64);
                    let mut dgamma = vec![T::zero(); d];
                    let mut dbeta = vec![T::zero(); d];
                    let mut dx = vec![T::zero(); g.len()];
                    for (r, &inv) in inv_std.iter().enumerate() {
                        let gr = &g.data()[r * d..(r + 1) * d];
                        let hr = &xhat[r * d..(r + 1) * d];
                        let mut sum_dh = T::zero();
                        let mut sum_dh_h = T::zero();
                        for j in 0..d {
                            dgamma[j] += gr[j] * hr[j];
                            dbeta[j] += gr[j];
                            let dh = gr[j] * gv.data()[j];
                            sum_dh += dh;
                            sum_dh_h += dh * hr[j];
                        }
                        for j in 0..d {
                            let dh = gr[j] * gv.data()[j];
                            dx[r * d + j] = inv / dn * (dn * dh - sum_dh - hr[j] * sum_dh_h);
                        }
                    }
                    acc(*x, Array::new(g.shape().to_vec(), dx)?);
                    acc(*gamma, Array::new(vec![d], dgamma)?);
                    acc(*beta, Array::new(vec![d], dbeta)?);
                }
                Op::Embedding { table, ids } => {
                    let tv = val(*table);
                    let d = tv.last_dim();
                    let mut dt = Array::zeros(tv.shape());
                    for (r, &i) in ids.iter().enumerate() {
                        for (o, &x) in dt.data_mut()[i * d..(i + 1) * d].iter_mut().zip(&g.data()[r * d..(r + 1) * d]) {
                            *o += x;
                        }
                    }
                    acc(*table, dt);
                }
                Op::MaskedFill { a, mask } => {
                    let da = g.data().iter().zip(mask.iter()).map(|(&x, &m)| if m { T::zero() } else { x }).collect();
                    acc(*a, Array::new(g.shape().to_vec(), da)?);
                }
                Op::MaskedMean { x, mask, counts } => {
                    let xv = val(*x);
                    let (b, t, d) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
                    let mut dx = vec![T::zero(); xv.len()];
                    for i in 0..b {
                        let n = T::of(counts[i] as f64);
                        for j in 0..t {
                            if mask[i * t + j] {
                                for c in 0..d {
                                    dx[(i * t + j) * d + c] = g.data()[i * d + c] / n;
                                }
                            }
                        }
                    }
                    acc(*x, Array::new(xv.shape().to_vec(), dx)?);
                }
                Op::CrossEntropy { logits, labels, probs, count } => {
                    let lv = val(*logits);
                    let v = lv.last_dim();
                    let scale = g.data()[0] / T::of(*count as f64);
                    let mut dl = vec![T::zero(); probs.len()];
                    for (r, label) in labels.iter().enumerate() {
                        if let Some(y) = *label {
                            for j in 0..v {
                                dl[r * v + j] = probs[r * v + j] * scale;
                            }
                            dl[r * v + y] -= scale;
                        }
                    }
                    acc(*logits, Array::new(lv.shape().to_vec(), dl)?);
                }
                Op::Reshape(a) => {
                    let shape = nodes[a.0].value.shape().to_vec();
                    acc(*a, g.reshaped(&shape)?);
                }
                Op::SwapAxes12(a) => {
                    let s = g.shape().to_vec();
                    let back = swap12(g.data(), &s);
                    acc(*a, Array::new(vec![s[0], s[2], s[1], s[3]], back)?);
                }
                Op::Sum(a) => {
                    let shape = nodes[a.0].value.shape().to_vec();
                    acc(*a, Array::full(&shape, g.data()[0]));
                }
            }
        }
        Ok(())
    }
}

fn swap12<T: Copy>(data: &[T], s: &[usize]) -> Vec<T> {
    let (p, q, r, w) = (s[0], s[1], s[2], s[3]);
    let mut out = Vec::with_capacity(data.len());
    for i in 0..p {
        for k in 0..r {
            for j in 0..q {
                let base = ((i * q + j) * r + k) * w;
                out.extend_from_slice(&data[base..base + w]);
            }
        }
    }
    out
}

fn log_sum_exp<T: Real>(row: &[T]) -> T {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let s: T = row.iter().map(|&x| (x - max).exp()).sum();
    max + s.ln()
}

/// Numerically stable in-place softmax of one row.
pub(crate) fn softmax_in_place<T: Real>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut s = T::zero();
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        s += *x;
    }
    for x in row.iter_mut() {
        *x /= s;
    }
}
