use std::borrow::Cow;

use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Affine(Var, Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    MaxRows { input: Var, argmax: Vec<usize> },
    Extremum { input: Var, index: usize },
    L2Normalize { input: Var, norm: f64 },
    ConcatRows(Vec<Var>),
    Slice { input: Var, start: usize },
    Gather { input: Var, indices: Vec<usize> },
    Sum(Var),
    SumCols(Var),
    Dot(Var, Var),
    Powi(Var, i32),
    Exp(Var),
    Log(Var),
    LogSumExpRows { input: Var, mask: Vec<bool> },
}

#[derive(Debug)]
struct Node<'a> {
    value: Cow<'a, Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Record of one forward computation.
///
/// Leaves either own their value or borrow it for the tape's lifetime
/// (parameters are borrowed, so binding weights never copies them).
#[derive(Debug, Default)]
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
}

/// Gradients of a scalar with respect to every node that depends on a
/// trainable leaf.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// `None` when the node was not reached from the loss.
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }
}

/// `c[m×n] = beta·c + a[m×k]·b[k×n]` with arbitrary strides on `a` and `b`.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    assert!(c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c[..m * n].iter_mut().for_each(|x| *x *= beta);
        return;
    }
    assert!(a.len() > (m - 1) * rsa + (k - 1) * csa);
    assert!(b.len() > (k - 1) * rsb + (n - 1) * csb);
    // SAFETY: the asserts above bound every element dgemm reads or writes.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn shape_error(op: &str, a: &[usize], b: &[usize]) -> Error {
    Error::InvalidShape(format!("{op}: incompatible shapes {a:?} and {b:?}"))
}

fn column_sums(rows: usize, cols: usize, data: &[f64], out: &mut [f64]) {
    for r in 0..rows {
        for (o, v) in out.iter_mut().zip(&data[r * cols..(r + 1) * cols]) {
            *o += v;
        }
    }
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Cow<'a, Tensor>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn derived(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.push(Cow::Owned(value), op, requires_grad)
    }

    /// Owned leaf that does not receive gradients.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(Cow::Owned(value), Op::Leaf, false)
    }

    /// Borrowed leaf that does not receive gradients.
    pub fn constant_ref(&mut self, value: &'a Tensor) -> Var {
        self.push(Cow::Borrowed(value), Op::Leaf, false)
    }

    /// Owned trainable leaf.
    pub fn variable(&mut self, value: Tensor) -> Var {
        self.push(Cow::Owned(value), Op::Leaf, true)
    }

    /// Borrowed trainable leaf.
    pub fn param(&mut self, value: &'a Tensor) -> Var {
        self.push(Cow::Borrowed(value), Op::Leaf, true)
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn scalar_value(&self, var: Var) -> Result<f64> {
        self.value(var).item()
    }

    /// True when an [`l2_normalize`](Self::l2_normalize) node hit a zero
    /// input and returned the fallback basis vector.
    pub fn normalize_fell_back(&self, var: Var) -> bool {
        matches!(self.nodes[var.0].op, Op::L2Normalize { norm, .. } if norm == 0.0)
    }

    /// Index selected by a [`max_all`](Self::max_all) or [`min_all`](Self::min_all) node.
    pub fn extremum_index(&self, var: Var) -> Option<usize> {
        match self.nodes[var.0].op {
            Op::Extremum { index, .. } => Some(index),
            _ => None,
        }
    }

    /// Hash of every branch decision taken on this tape (relu signs, max and
    /// min selections, normalization fallbacks). Two forward passes with the
    /// same signature lie on the same smooth piece of the function.
    pub fn branch_signature(&self) -> u64 {
        const PRIME: u64 = 0x0000_0100_0000_01b3;
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut mix = |x: u64| h = (h ^ x).wrapping_mul(PRIME);
        for (i, node) in self.nodes.iter().enumerate() {
            match &node.op {
                Op::Relu(_) => {
                    mix(i as u64);
                    for chunk in node.value.data().chunks(64) {
                        let bits = chunk
                            .iter()
                            .enumerate()
                            .fold(0u64, |acc, (j, &v)| acc | ((v > 0.0) as u64) << j);
                        mix(bits);
                    }
                }
                Op::MaxRows { argmax, .. } => argmax.iter().for_each(|&j| mix(j as u64)),
                Op::Extremum { index, .. } => mix(*index as u64),
                Op::L2Normalize { norm, .. } => mix((*norm == 0.0) as u64),
                _ => {}
            }
        }
        h
    }

    /// `a · b` for `a` of shape `[n, k]` (or a `[k]` row vector) and `b` of shape `[k, m]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (n, k) = av.as_matrix()?;
        let (kb, m) = match bv.shape() {
            [kb, m] => (*kb, *m),
            s => return Err(shape_error("matmul", av.shape(), s)),
        };
        if k != kb {
            return Err(shape_error("matmul", av.shape(), bv.shape()));
        }
        let mut out = vec![0.0; n * m];
        gemm(n, k, m, av.data(), (k, 1), bv.data(), (m, 1), 0.0, &mut out);
        let shape = if av.rank() == 1 { vec![m] } else { vec![n, m] };
        let value = Tensor::new(shape, out)?;
        Ok(self.derived(value, Op::MatMul(a, b), &[a, b]))
    }

    /// `a · bᵀ` for `a: [n, k]`, `b: [m, k]`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (n, k) = av.as_matrix()?;
        let (m, kb) = bv.as_matrix()?;
        if k != kb || av.rank() != 2 || bv.rank() != 2 {
            return Err(shape_error("matmul_t", av.shape(), bv.shape()));
        }
        let mut out = vec![0.0; n * m];
        gemm(n, k, m, av.data(), (k, 1), bv.data(), (1, k), 0.0, &mut out);
        let value = Tensor::matrix(n, m, out)?;
        Ok(self.derived(value, Op::MatMulT(a, b), &[a, b]))
    }

    /// `x · w + b`, the bias broadcast over rows.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        let (n, k) = xv.as_matrix()?;
        let (kw, m) = match wv.shape() {
            [kw, m] => (*kw, *m),
            s => return Err(shape_error("affine", xv.shape(), s)),
        };
        if k != kw || bv.shape() != [m] {
            return Err(Error::InvalidShape(format!(
                "affine: input {:?}, weight {:?}, bias {:?}",
                xv.shape(),
                wv.shape(),
                bv.shape()
            )));
        }
        let mut out = Vec::with_capacity(n * m);
        for _ in 0..n {
            out.extend_from_slice(bv.data());
        }
        gemm(n, k, m, xv.data(), (k, 1), wv.data(), (m, 1), 1.0, &mut out);
        let shape = if xv.rank() == 1 { vec![m] } else { vec![n, m] };
        let value = Tensor::new(shape, out)?;
        Ok(self.derived(value, Op::Affine(x, w, b), &[x, w, b]))
    }

    fn zip_same(&self, op: &str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(shape_error(op, av.shape(), bv.shape()));
        }
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(av.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip_same("add", a, b, |x, y| x + y)?;
        Ok(self.derived(value, Op::Add(a, b), &[a, b]))
    }

    /// `a[n, m] + b[m]`, broadcasting `b` over the rows of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (_, m) = av.as_matrix()?;
        if bv.shape() != [m] {
            return Err(shape_error("add_row", av.shape(), bv.shape()));
        }
        let data = av
            .data()
            .chunks(m)
            .flat_map(|row| row.iter().zip(bv.data()).map(|(x, y)| x + y))
            .collect();
        let value = Tensor::new(av.shape().to_vec(), data)?;
        Ok(self.derived(value, Op::AddRow(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip_same("sub", a, b, |x, y| x - y)?;
        Ok(self.derived(value, Op::Sub(a, b), &[a, b]))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip_same("mul", a, b, |x, y| x * y)?;
        Ok(self.derived(value, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).map(|x| x * c);
        self.derived(value, Op::Scale(a, c), &[a])
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).map(|x| x + c);
        self.derived(value, Op::AddScalar(a), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| if x > 0.0 { x } else { 0.0 });
        self.derived(value, Op::Relu(a), &[a])
    }

    /// Column-wise maximum of `a[n, m]`, giving `[m]`. Ties go to the lowest row.
    pub fn max_over_rows(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        let (n, m) = match av.shape() {
            [n, m] if *n > 0 => (*n, *m),
            s => return Err(Error::InvalidShape(format!("max_over_rows: shape {s:?}"))),
        };
        let data = av.data();
        let mut best = data[..m].to_vec();
        let mut argmax = vec![0usize; m];
        for r in 1..n {
            for (c, v) in data[r * m..(r + 1) * m].iter().enumerate() {
                if *v > best[c] {
                    best[c] = *v;
                    argmax[c] = r;
                }
            }
        }
        let value = Tensor::vector(best);
        Ok(self.derived(value, Op::MaxRows { input: a, argmax }, &[a]))
    }

    fn extremum(&mut self, a: Var, want_max: bool) -> Result<Var> {
        let data = self.value(a).data();
        if data.is_empty() {
            return Err(Error::InvalidShape("extremum of an empty tensor".into()));
        }
        let mut index = 0;
        for (i, v) in data.iter().enumerate().skip(1) {
            let better = if want_max { *v > data[index] } else { *v < data[index] };
            if better {
                index = i;
            }
        }
        let value = Tensor::scalar(data[index]);
        Ok(self.derived(value, Op::Extremum { input: a, index }, &[a]))
    }

    /// Largest element as a scalar; ties go to the lowest flat index.
    pub fn max_all(&mut self, a: Var) -> Result<Var> {
        self.extremum(a, true)
    }

    /// Smallest element as a scalar; ties go to the lowest flat index.
    pub fn min_all(&mut self, a: Var) -> Result<Var> {
        self.extremum(a, false)
    }

    /// Scales a vector to unit length. A zero vector maps to the last basis
    /// vector with zero gradient.
    pub fn l2_normalize(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        if av.rank() != 1 || av.is_empty() {
            return Err(Error::InvalidShape(format!("l2_normalize: shape {:?}", av.shape())));
        }
        let norm = av.data().iter().map(|x| x * x).sum::<f64>().sqrt();
        let value = if norm > 0.0 {
            av.map(|x| x / norm)
        } else {
            let mut e = vec![0.0; av.len()];
            *e.last_mut().unwrap() = 1.0;
            Tensor::vector(e)
        };
        Ok(self.derived(value, Op::L2Normalize { input: a, norm }, &[a]))
    }

    /// Stacks inputs as row blocks (a vector counts as one row).
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let mut rows = 0;
        let mut cols = None;
        let mut data = Vec::new();
        for &p in parts {
            let v = self.value(p);
            let (r, c) = v.as_matrix()?;
            if *cols.get_or_insert(c) != c {
                return Err(Error::InvalidShape(format!("concat_rows: column mismatch at {:?}", v.shape())));
            }
            rows += r;
            data.extend_from_slice(v.data());
        }
        let cols = cols.ok_or_else(|| Error::InvalidShape("concat_rows: no inputs".into()))?;
        let value = Tensor::matrix(rows, cols, data)?;
        Ok(self.derived(value, Op::ConcatRows(parts.to_vec()), parts))
    }

    /// Elements `start..start + len` of a vector.
    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let av = self.value(a);
        if av.rank() != 1 || start + len > av.len() {
            return Err(Error::InvalidShape(format!(
                "slice {start}..{} of shape {:?}",
                start + len,
                av.shape()
            )));
        }
        let value = Tensor::vector(av.data()[start..start + len].to_vec());
        Ok(self.derived(value, Op::Slice { input: a, start }, &[a]))
    }

    /// Picks elements by flat index into a vector.
    pub fn gather(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        let data = self.value(a).data();
        if let Some(&bad) = indices.iter().find(|&&i| i >= data.len()) {
            return Err(Error::InvalidShape(format!("gather index {bad} out of {}", data.len())));
        }
        let value = Tensor::vector(indices.iter().map(|&i| data[i]).collect());
        Ok(self.derived(
            value,
            Op::Gather {
                input: a,
                indices: indices.to_vec(),
            },
            &[a],
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).data().iter().sum());
        self.derived(value, Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len().max(1) as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Row sums of `a[n, m]`, giving `[n]`.
    pub fn sum_cols(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        let m = match av.shape() {
            [_, m] if *m > 0 => *m,
            s => return Err(Error::InvalidShape(format!("sum_cols: shape {s:?}"))),
        };
        let value = Tensor::vector(av.data().chunks(m).map(|r| r.iter().sum()).collect());
        Ok(self.derived(value, Op::SumCols(a), &[a]))
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(shape_error("dot", av.shape(), bv.shape()));
        }
        let value = Tensor::scalar(av.data().iter().zip(bv.data()).map(|(x, y)| x * y).sum());
        Ok(self.derived(value, Op::Dot(a, b), &[a, b]))
    }

    pub fn powi(&mut self, a: Var, n: i32) -> Var {
        let value = self.value(a).map(|x| x.powi(n));
        self.derived(value, Op::Powi(a, n), &[a])
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::exp);
        self.derived(value, Op::Exp(a), &[a])
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::ln);
        self.derived(value, Op::Log(a), &[a])
    }

    /// Per-row `log Σ_j exp(a[i, j])` over the entries where `mask` is true.
    pub fn logsumexp_rows(&mut self, a: Var, mask: &[bool]) -> Result<Var> {
        let av = self.value(a);
        let (n, m) = match av.shape() {
            [n, m] => (*n, *m),
            s => return Err(Error::InvalidShape(format!("logsumexp_rows: shape {s:?}"))),
        };
        if mask.len() != n * m {
            return Err(Error::InvalidShape(format!(
                "logsumexp_rows: mask of {} for {n}x{m}",
                mask.len()
            )));
        }
        let mut out = Vec::with_capacity(n);
        for r in 0..n {
            let row = &av.data()[r * m..(r + 1) * m];
            let keep = &mask[r * m..(r + 1) * m];
            let hi = row
                .iter()
                .zip(keep)
                .filter(|(_, &k)| k)
                .map(|(&x, _)| x)
                .fold(f64::NEG_INFINITY, f64::max);
            if hi == f64::NEG_INFINITY {
                return Err(Error::InvalidInput(format!("logsumexp_rows: row {r} is fully masked")));
            }
            let s: f64 = row
                .iter()
                .zip(keep)
                .filter(|(_, &k)| k)
                .map(|(&x, _)| (x - hi).exp())
                .sum();
            out.push(hi + s.ln());
        }
        let value = Tensor::vector(out);
        Ok(self.derived(
            value,
            Op::LogSumExpRows {
                input: a,
                mask: mask.to_vec(),
            },
            &[a],
        ))
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::InvalidInput(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        let mut seed = Tensor::zeros(lv.shape());
        seed.data_mut()[0] = 1.0;
        grads[loss.0] = Some(seed);

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, f: impl FnOnce(&mut [f64])) {
        let node = &self.nodes[v.0];
        if node.requires_grad {
            let slot = grads[v.0].get_or_insert_with(|| Tensor::zeros(node.value.shape()));
            f(slot.data_mut());
        }
    }

    fn propagate(&self, node: &Node<'a>, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (n, k) = av.as_matrix().unwrap();
                let m = bv.shape()[1];
                self.accumulate(grads, *a, |d: &mut [f64]| gemm(n, m, k, gd, (m, 1), bv.data(), (1, m), 1.0, d));
                self.accumulate(grads, *b, |d: &mut [f64]| gemm(k, n, m, av.data(), (1, k), gd, (m, 1), 1.0, d));
            }
            Op::MatMulT(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (n, k) = av.as_matrix().unwrap();
                let m = bv.shape()[0];
                self.accumulate(grads, *a, |d: &mut [f64]| gemm(n, m, k, gd, (m, 1), bv.data(), (k, 1), 1.0, d));
                self.accumulate(grads, *b, |d: &mut [f64]| gemm(m, n, k, gd, (1, m), av.data(), (k, 1), 1.0, d));
            }
            Op::Affine(x, w, b) => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let (n, k) = xv.as_matrix().unwrap();
                let m = wv.shape()[1];
                self.accumulate(grads, *x, |d: &mut [f64]| gemm(n, m, k, gd, (m, 1), wv.data(), (1, m), 1.0, d));
                self.accumulate(grads, *w, |d: &mut [f64]| gemm(k, n, m, xv.data(), (1, k), gd, (m, 1), 1.0, d));
                self.accumulate(grads, *b, |d: &mut [f64]| column_sums(n, m, gd, d));
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, |d: &mut [f64]| d.iter_mut().zip(gd).for_each(|(x, y)| *x += y));
                self.accumulate(grads, *b, |d: &mut [f64]| d.iter_mut().zip(gd).for_each(|(x, y)| *x += y));
            }
            Op::AddRow(a, b) => {
                let m = self.value(*b).len();
                self.accumulate(grads, *a, |d: &mut [f64]| d.iter_mut().zip(gd).for_each(|(x, y)| *x += y));
                self.accumulate(grads, *b, |d: &mut [f64]| column_sums(gd.len() / m, m, gd, d));
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, |d: &mut [f64]| d.iter_mut().zip(gd).for_each(|(x, y)| *x += y));
                self.accumulate(grads, *b, |d: &mut [f64]| d.iter_mut().zip(gd).for_each(|(x, y)| *x -= y));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                self.accumulate(grads, *a, |d: &mut [f64]| {
                    for ((x, gi), bi) in d.iter_mut().zip(gd).zip(bv) {
                        *x += gi * bi;
                    }
                });
                self.accumulate(grads, *b, |d: &mut [f64]| {
                    for ((x, gi), ai) in d.iter_mut().zip(gd).zip(av) {
                        *x += gi * ai;
                    }
                });
            }
            Op::Scale(a, c) => {
                self.accumulate(grads, *a, |d: &mut [f64]| d.iter_mut().zip(gd).for_each(|(x, y)| *x += c * y));
            }
            Op::AddScalar(a) => {
                self.accumulate(grads, *a, |d: &mut [f64]| d.iter_mut().zip(gd).for_each(|(x, y)| *x += y));
            }
            Op::Relu(a) => {
                let out = node.value.data();
                self.accumulate(grads, *a, |d: &mut [f64]| {
                    for ((x, gi), o) in d.iter_mut().zip(gd).zip(out) {
                        if *o > 0.0 {
                            *x += gi;
                        }
                    }
                });
            }
            Op::MaxRows { input, argmax } => {
                let m = argmax.len();
                self.accumulate(grads, *input, |d: &mut [f64]| {
                    for (c, &r) in argmax.iter().enumerate() {
                        d[r * m + c] += gd[c];
                    }
                });
            }
            Op::Extremum { input, index } => {
                self.accumulate(grads, *input, |d: &mut [f64]| d[*index] += gd[0]);
            }
            Op::L2Normalize { input, norm } => {
                if *norm > 0.0 {
                    let y = node.value.data();
                    let proj: f64 = y.iter().zip(gd).map(|(a, b)| a * b).sum();
                    self.accumulate(grads, *input, |d: &mut [f64]| {
                        for ((x, gi), yi) in d.iter_mut().zip(gd).zip(y) {
                            *x += (gi - yi * proj) / norm;
                        }
                    });
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    self.accumulate(grads, p, |d: &mut [f64]| {
                        d.iter_mut()
                            .zip(&gd[offset..offset + len])
                            .for_each(|(x, y)| *x += y)
                    });
                    offset += len;
                }
            }
            Op::Slice { input, start } => {
                self.accumulate(grads, *input, |d: &mut [f64]| {
                    d[*start..*start + gd.len()]
                        .iter_mut()
                        .zip(gd)
                        .for_each(|(x, y)| *x += y)
                });
            }
            Op::Gather { input, indices } => {
                self.accumulate(grads, *input, |d: &mut [f64]| {
                    for (&i, gi) in indices.iter().zip(gd) {
                        d[i] += gi;
                    }
                });
            }
            Op::Sum(a) => {
                self.accumulate(grads, *a, |d: &mut [f64]| d.iter_mut().for_each(|x| *x += gd[0]));
            }
            Op::SumCols(a) => {
                let n = gd.len();
                self.accumulate(grads, *a, |d: &mut [f64]| {
                    let m = d.len() / n;
                    for (row, gi) in d.chunks_mut(m).zip(gd) {
                        row.iter_mut().for_each(|x| *x += gi);
                    }
                });
            }
            Op::Dot(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                self.accumulate(grads, *a, |d: &mut [f64]| d.iter_mut().zip(bv).for_each(|(x, y)| *x += gd[0] * y));
                self.accumulate(grads, *b, |d: &mut [f64]| d.iter_mut().zip(av).for_each(|(x, y)| *x += gd[0] * y));
            }
            Op::Powi(a, n) => {
                let av = self.value(*a).data();
                let n = *n;
                self.accumulate(grads, *a, |d: &mut [f64]| {
                    if n != 0 {
                        for ((x, gi), ai) in d.iter_mut().zip(gd).zip(av) {
                            *x += gi * f64::from(n) * ai.powi(n - 1);
                        }
                    }
                });
            }
            Op::Exp(a) => {
                let out = node.value.data();
                self.accumulate(grads, *a, |d: &mut [f64]| {
                    for ((x, gi), o) in d.iter_mut().zip(gd).zip(out) {
                        *x += gi * o;
                    }
                });
            }
            Op::Log(a) => {
                let av = self.value(*a).data();
                self.accumulate(grads, *a, |d: &mut [f64]| {
                    for ((x, gi), ai) in d.iter_mut().zip(gd).zip(av) {
                        *x += gi / ai;
                    }
                });
            }
            Op::LogSumExpRows { input, mask } => {
                let av = self.value(*input).data();
                let out = node.value.data();
                let m = av.len() / out.len();
                self.accumulate(grads, *input, |d: &mut [f64]| {
                    for (i, x) in d.iter_mut().enumerate() {
                        if mask[i] {
                            let r = i / m;
                            *x += gd[r] * (av[i] - out[r]).exp();
                        }
                    }
                });
            }
        }
    }
}
