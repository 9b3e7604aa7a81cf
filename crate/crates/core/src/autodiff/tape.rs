use rand::{Rng, RngCore};

use super::kernels::{gemm_nn, gemm_nt, gemm_tn};
use super::tensor::{numel, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul {
        a: Var,
        b: Var,
        batch: usize,
        m: usize,
        k: usize,
        n: usize,
        shared_b: bool,
    },
    Add { a: Var, b: Var, reps: usize },
    Sub { a: Var, b: Var, reps: usize },
    Mul { a: Var, b: Var, reps: usize },
    Scale { a: Var, c: f64 },
    Concat { parts: Vec<(Var, usize)>, outer: usize, inner: usize },
    Slice { a: Var, outer: usize, axis_len: usize, start: usize, len: usize, inner: usize },
    Reshape { a: Var },
    Transpose { a: Var, dims: [usize; 5] },
    Softmax { a: Var, outer: usize, n: usize, inner: usize },
    LayerNorm { a: Var, inv_std: Vec<f64>, width: usize },
    Gelu { a: Var },
    Dropout { a: Var, mask: Vec<f64> },
    MeanAll { a: Var },
    SumAll { a: Var },
    SumAxis { a: Var, outer: usize, n: usize, inner: usize },
    Sqrt { a: Var },
    GatherRows { table: Var, rows: Vec<usize>, width: usize },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Records operations in execution order; [`Tape::backward`] replays them
/// in reverse.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of one backward pass, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient of `v`; zeros when the loss does not depend on it.
    pub fn get(&self, v: Var) -> Tensor {
        let shape = self.shapes[v.0].clone();
        match &self.grads[v.0] {
            Some(g) => Tensor::from_parts(shape, g.clone()),
            None => Tensor::zeros(&shape),
        }
    }

    pub fn get_data(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }

    /// Moves the gradient of `v` out, leaving nothing behind.
    pub fn take(&mut self, v: Var) -> Option<Vec<f64>> {
        self.grads[v.0].take()
    }
}

/// Splits a shape around `axis` into `(outer, axis_len, inner)`.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    (
        numel(&shape[..axis]),
        shape[axis],
        numel(&shape[axis + 1..]),
    )
}

fn gelu_parts(x: f64) -> (f64, f64) {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    const A: f64 = 0.044_715;
    let u = C * (x + A * x * x * x);
    let t = u.tanh();
    let y = 0.5 * x * (1.0 + t);
    let dy = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * C * (1.0 + 3.0 * A * x * x);
    (y, dy)
}

/// Swaps two axes of a shape viewed as `(outer, d0, mid, d1, inner)`.
fn swap_axes(data: &[f64], dims: [usize; 5]) -> Vec<f64> {
    let [outer, d0, mid, d1, inner] = dims;
    let mut out = vec![0.0; data.len()];
    for o in 0..outer {
        for i in 0..d0 {
            for m in 0..mid {
                for j in 0..d1 {
                    let src = (((o * d0 + i) * mid + m) * d1 + j) * inner;
                    let dst = (((o * d1 + j) * mid + m) * d0 + i) * inner;
                    out[dst..dst + inner].copy_from_slice(&data[src..src + inner]);
                }
            }
        }
    }
    out
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// A differentiable input.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// A non-differentiable input.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Matrix product over the last two axes. `a` is `(..., m, k)`; `b` is
    /// either `(..., k, n)` with the same leading axes or a shared `(k, n)`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() < 2 || sb.len() < 2 {
            return Err(Error::shape("matmul", format!("need rank >= 2, got {sa:?} x {sb:?}")));
        }
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (k2, n) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        let shared_b = sb.len() == 2;
        if k != k2 || (!shared_b && sa[..sa.len() - 2] != sb[..sb.len() - 2]) {
            return Err(Error::shape("matmul", format!("{sa:?} x {sb:?}")));
        }
        let batch = numel(&sa[..sa.len() - 2]);
        let mut out_shape = sa[..sa.len() - 2].to_vec();
        out_shape.extend([m, n]);
        let mut c = vec![0.0; batch * m * n];
        {
            let (av, bv) = (self.value(a).data(), self.value(b).data());
            if shared_b {
                gemm_nn(batch * m, k, n, av, bv, &mut c);
            } else {
                for i in 0..batch {
                    gemm_nn(
                        m,
                        k,
                        n,
                        &av[i * m * k..(i + 1) * m * k],
                        &bv[i * k * n..(i + 1) * k * n],
                        &mut c[i * m * n..(i + 1) * m * n],
                    );
                }
            }
        }
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(
            Tensor::from_parts(out_shape, c),
            Op::MatMul {
                a,
                b,
                batch,
                m,
                k,
                n,
                shared_b,
            },
            needs,
        ))
    }

    /// `b`'s shape must equal `a`'s or be a suffix of it; returns the repeat count.
    fn broadcast_reps(&self, op: &'static str, a: Var, b: Var) -> Result<usize> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != *sb {
            return Err(Error::shape(op, format!("{sa:?} with {sb:?}")));
        }
        Ok(self.value(a).len() / self.value(b).len())
    }

    fn binary(
        &mut self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        make: impl FnOnce(Var, Var, usize) -> Op,
    ) -> Result<Var> {
        let reps = self.broadcast_reps(op, a, b)?;
        let (va, vb) = (self.value(a), self.value(b));
        let nb = vb.len();
        let data: Vec<f64> = va
            .data()
            .chunks(nb)
            .flat_map(|chunk| chunk.iter().zip(vb.data()).map(|(x, y)| f(*x, *y)))
            .collect();
        let out = Tensor::from_parts(va.shape().to_vec(), data);
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(out, make(a, b, reps), needs))
    }

    /// Elementwise `a + b`, with `b` repeated over leading axes if its shape is a suffix of `a`'s.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, |a, b, reps| Op::Add { a, b, reps })
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, |a, b, reps| Op::Sub { a, b, reps })
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, |a, b, reps| Op::Mul { a, b, reps })
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a);
        let out = Tensor::from_parts(v.shape().to_vec(), v.data().iter().map(|x| x * c).collect());
        let needs = self.needs(a);
        self.push(out, Op::Scale { a, c }, needs)
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("concat", "no inputs"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::shape("concat", format!("axis {axis} for rank {}", base.len())));
        }
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            if s.len() != base.len()
                || s[..axis] != base[..axis]
                || s[axis + 1..] != base[axis + 1..]
            {
                return Err(Error::shape("concat", format!("{base:?} with {s:?} on axis {axis}")));
            }
            widths.push(s[axis]);
        }
        let (outer, _, inner) = split_axis(&base, axis);
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (&p, &w) in parts.iter().zip(&widths) {
                let src = self.value(p).data();
                data.extend_from_slice(&src[o * w * inner..(o + 1) * w * inner]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let needs = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(
            Tensor::from_parts(shape, data),
            Op::Concat {
                parts: parts.iter().copied().zip(widths).collect(),
                outer,
                inner,
            },
            needs,
        ))
    }

    /// `len` entries of `axis` starting at `start`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(Error::shape(
                "slice",
                format!("{start}..{} on axis {axis} of {shape:?}", start + len),
            ));
        }
        let (outer, axis_len, inner) = split_axis(&shape, axis);
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * axis_len + start) * inner;
            data.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        let needs = self.needs(a);
        Ok(self.push(
            Tensor::from_parts(out_shape, data),
            Op::Slice {
                a,
                outer,
                axis_len,
                start,
                len,
                inner,
            },
            needs,
        ))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).reshaped(shape)?;
        let needs = self.needs(a);
        Ok(self.push(out, Op::Reshape { a }, needs))
    }

    /// Swaps two axes.
    pub fn transpose(&mut self, a: Var, ax0: usize, ax1: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if ax0 >= shape.len() || ax1 >= shape.len() || ax0 == ax1 {
            return Err(Error::shape("transpose", format!("axes {ax0},{ax1} of {shape:?}")));
        }
        let (lo, hi) = (ax0.min(ax1), ax0.max(ax1));
        let dims = [
            numel(&shape[..lo]),
            shape[lo],
            numel(&shape[lo + 1..hi]),
            shape[hi],
            numel(&shape[hi + 1..]),
        ];
        let data = swap_axes(self.value(a).data(), dims);
        let mut out_shape = shape;
        out_shape.swap(lo, hi);
        let needs = self.needs(a);
        Ok(self.push(Tensor::from_parts(out_shape, data), Op::Transpose { a, dims }, needs))
    }

    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() {
            return Err(Error::shape("softmax", format!("axis {axis} of {shape:?}")));
        }
        let (outer, n, inner) = split_axis(&shape, axis);
        let src = self.value(a).data();
        let mut data = vec![0.0; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |j: usize| (o * n + j) * inner + i;
                let max = (0..n).map(|j| src[idx(j)]).fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for j in 0..n {
                    let e = (src[idx(j)] - max).exp();
                    data[idx(j)] = e;
                    total += e;
                }
                for j in 0..n {
                    data[idx(j)] /= total;
                }
            }
        }
        let needs = self.needs(a);
        Ok(self.push(
            Tensor::from_parts(shape, data),
            Op::Softmax { a, outer, n, inner },
            needs,
        ))
    }

    /// Normalizes each row of the last axis to zero mean and unit variance.
    pub fn layer_norm(&mut self, a: Var, eps: f64) -> Var {
        let v = self.value(a);
        let width = *v.shape().last().expect("rank >= 1");
        let rows = v.len() / width;
        let mut data = vec![0.0; v.len()];
        let mut inv_std = Vec::with_capacity(rows);
        for r in 0..rows {
            let x = &v.data()[r * width..(r + 1) * width];
            let mean = x.iter().sum::<f64>() / width as f64;
            let var = x.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>() / width as f64;
            let is = 1.0 / (var + eps).sqrt();
            for (o, t) in data[r * width..(r + 1) * width].iter_mut().zip(x) {
                *o = (t - mean) * is;
            }
            inv_std.push(is);
        }
        let out = Tensor::from_parts(v.shape().to_vec(), data);
        let needs = self.needs(a);
        self.push(out, Op::LayerNorm { a, inv_std, width }, needs)
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let out = Tensor::from_parts(
            v.shape().to_vec(),
            v.data().iter().map(|&x| gelu_parts(x).0).collect(),
        );
        let needs = self.needs(a);
        self.push(out, Op::Gelu { a }, needs)
    }

    /// Inverted dropout. Without an RNG (inference) or at rate 0 this is the identity.
    pub fn dropout<R: RngCore + ?Sized>(&mut self, a: Var, rate: f64, rng: Option<&mut R>) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Invalid(format!("dropout rate {rate} outside [0, 1)")));
        }
        let Some(rng) = rng else { return Ok(a) };
        if rate == 0.0 {
            return Ok(a);
        }
        let keep = 1.0 - rate;
        let v = self.value(a);
        let mask: Vec<f64> = (0..v.len())
            .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let out = Tensor::from_parts(
            v.shape().to_vec(),
            v.data().iter().zip(&mask).map(|(x, m)| x * m).collect(),
        );
        let needs = self.needs(a);
        Ok(self.push(out, Op::Dropout { a, mask }, needs))
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let m = v.data().iter().sum::<f64>() / v.len() as f64;
        let needs = self.needs(a);
        self.push(Tensor::scalar(m), Op::MeanAll { a }, needs)
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum::<f64>();
        let needs = self.needs(a);
        self.push(Tensor::scalar(s), Op::SumAll { a }, needs)
    }

    /// Sums out `axis`; a rank-1 input becomes shape `[1]`.
    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() {
            return Err(Error::shape("sum_axis", format!("axis {axis} of {shape:?}")));
        }
        let (outer, n, inner) = split_axis(&shape, axis);
        let src = self.value(a).data();
        let mut data = vec![0.0; outer * inner];
        for o in 0..outer {
            for j in 0..n {
                let row = &src[(o * n + j) * inner..(o * n + j + 1) * inner];
                for (d, x) in data[o * inner..(o + 1) * inner].iter_mut().zip(row) {
                    *d += x;
                }
            }
        }
        let mut out_shape = shape;
        out_shape.remove(axis);
        if out_shape.is_empty() {
            out_shape.push(1);
        }
        let needs = self.needs(a);
        Ok(self.push(
            Tensor::from_parts(out_shape, data),
            Op::SumAxis { a, outer, n, inner },
            needs,
        ))
    }

    /// Elementwise square root. The backward pass treats the derivative at 0 as 0.
    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a);
        if let Some(x) = v.data().iter().find(|x| **x < 0.0) {
            return Err(Error::Invalid(format!("sqrt of negative value {x}")));
        }
        let out = Tensor::from_parts(v.shape().to_vec(), v.data().iter().map(|x| x.sqrt()).collect());
        let needs = self.needs(a);
        Ok(self.push(out, Op::Sqrt { a }, needs))
    }

    /// Rows of a rank-2 `table` selected by index: `(rows.len(), width)`.
    pub fn gather_rows(&mut self, table: Var, rows: &[usize]) -> Result<Var> {
        let shape = self.shape(table).to_vec();
        if shape.len() != 2 || rows.is_empty() {
            return Err(Error::shape("gather_rows", format!("table {shape:?}, {} rows", rows.len())));
        }
        let (count, width) = (shape[0], shape[1]);
        if let Some(r) = rows.iter().find(|r| **r >= count) {
            return Err(Error::shape("gather_rows", format!("row {r} of {count}")));
        }
        let src = self.value(table).data();
        let mut data = Vec::with_capacity(rows.len() * width);
        for &r in rows {
            data.extend_from_slice(&src[r * width..(r + 1) * width]);
        }
        let needs = self.needs(table);
        Ok(self.push(
            Tensor::from_parts(vec![rows.len(), width], data),
            Op::GatherRows {
                table,
                rows: rows.to_vec(),
                width,
            },
            needs,
        ))
    }

    /// `x w + b` over the last axis of `x`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let y = self.matmul(x, w)?;
        match b {
            Some(b) => self.add(y, b),
            None => Ok(y),
        }
    }

    /// Reverse pass from a one-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss must be scalar, got {:?}", self.shape(loss)),
            ));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.backward_node(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    fn backward_node(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.len()]);
            f(slot);
        };
        match &node.op {
            Op::Leaf => {}
            &Op::MatMul {
                a,
                b,
                batch,
                m,
                k,
                n,
                shared_b,
            } => {
                let (av, bv) = (self.value(a).data(), self.value(b).data());
                acc(a, &mut |ga| {
                    if shared_b {
                        gemm_nt(batch * m, n, k, g, bv, ga);
                    } else {
                        for i in 0..batch {
                            gemm_nt(
                                m,
                                n,
                                k,
                                &g[i * m * n..(i + 1) * m * n],
                                &bv[i * k * n..(i + 1) * k * n],
                                &mut ga[i * m * k..(i + 1) * m * k],
                            );
                        }
                    }
                });
                acc(b, &mut |gb| {
                    if shared_b {
                        gemm_tn(k, batch * m, n, av, g, gb);
                    } else {
                        for i in 0..batch {
                            gemm_tn(
                                k,
                                m,
                                n,
                                &av[i * m * k..(i + 1) * m * k],
                                &g[i * m * n..(i + 1) * m * n],
                                &mut gb[i * k * n..(i + 1) * k * n],
                            );
                        }
                    }
                });
            }
            &Op::Add { a, b, reps } | &Op::Sub { a, b, reps } => {
                let sign = if matches!(node.op, Op::Sub { .. }) { -1.0 } else { 1.0 };
                acc(a, &mut |ga| {
                    for (x, y) in ga.iter_mut().zip(g) {
                        *x += y;
                    }
                });
                acc(b, &mut |gb| {
                    let nb = gb.len();
                    for r in 0..reps {
                        for (x, y) in gb.iter_mut().zip(&g[r * nb..(r + 1) * nb]) {
                            *x += sign * y;
                        }
                    }
                });
            }
            &Op::Mul { a, b, reps } => {
                let (av, bv) = (self.value(a).data(), self.value(b).data());
                let nb = bv.len();
                acc(a, &mut |ga| {
                    for (i, x) in ga.iter_mut().enumerate() {
                        *x += g[i] * bv[i % nb];
                    }
                });
                acc(b, &mut |gb| {
                    for r in 0..reps {
                        for (j, x) in gb.iter_mut().enumerate() {
                            *x += g[r * nb + j] * av[r * nb + j];
                        }
                    }
                });
            }
            &Op::Scale { a, c } => acc(a, &mut |ga| {
                for (x, y) in ga.iter_mut().zip(g) {
                    *x += c * y;
                }
            }),
            Op::Concat { parts, outer, inner } => {
                let total: usize = parts.iter().map(|p| p.1).sum();
                let mut offset = 0;
                for &(p, w) in parts {
                    acc(p, &mut |gp| {
                        for o in 0..*outer {
                            let src = (o * total + offset) * inner;
                            for (x, y) in gp[o * w * inner..(o + 1) * w * inner]
                                .iter_mut()
                                .zip(&g[src..src + w * inner])
                            {
                                *x += y;
                            }
                        }
                    });
                    offset += w;
                }
            }
            &Op::Slice {
                a,
                outer,
                axis_len,
                start,
                len,
                inner,
            } => acc(a, &mut |ga| {
                for o in 0..outer {
                    let dst = (o * axis_len + start) * inner;
                    for (x, y) in ga[dst..dst + len * inner]
                        .iter_mut()
                        .zip(&g[o * len * inner..(o + 1) * len * inner])
                    {
                        *x += y;
                    }
                }
            }),
            &Op::Reshape { a } => acc(a, &mut |ga| {
                for (x, y) in ga.iter_mut().zip(g) {
                    *x += y;
                }
            }),
            &Op::Transpose { a, dims } => {
                let [outer, d0, mid, d1, inner] = dims;
                let back = swap_axes(g, [outer, d1, mid, d0, inner]);
                acc(a, &mut |ga| {
                    for (x, y) in ga.iter_mut().zip(&back) {
                        *x += y;
                    }
                });
            }
            &Op::Softmax { a, outer, n, inner } => {
                let y = node.value.data();
                acc(a, &mut |ga| {
                    for o in 0..outer {
                        for i in 0..inner {
                            let idx = |j: usize| (o * n + j) * inner + i;
                            let dot: f64 = (0..n).map(|j| g[idx(j)] * y[idx(j)]).sum();
                            for j in 0..n {
                                ga[idx(j)] += y[idx(j)] * (g[idx(j)] - dot);
                            }
                        }
                    }
                });
            }
            Op::LayerNorm { a, inv_std, width } => {
                let y = node.value.data();
                let w = *width;
                acc(*a, &mut |ga| {
                    for (r, is) in inv_std.iter().enumerate() {
                        let gr = &g[r * w..(r + 1) * w];
                        let yr = &y[r * w..(r + 1) * w];
                        let mg = gr.iter().sum::<f64>() / w as f64;
                        let mgy = gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / w as f64;
                        for ((x, gv), yv) in ga[r * w..(r + 1) * w].iter_mut().zip(gr).zip(yr) {
                            *x += is * (gv - mg - yv * mgy);
                        }
                    }
                });
            }
            &Op::Gelu { a } => {
                let av = self.value(a).data();
                acc(a, &mut |ga| {
                    for ((x, gv), xv) in ga.iter_mut().zip(g).zip(av) {
                        *x += gv * gelu_parts(*xv).1;
                    }
                });
            }
            Op::Dropout { a, mask } => acc(*a, &mut |ga| {
                for ((x, gv), m) in ga.iter_mut().zip(g).zip(mask) {
                    *x += gv * m;
                }
            }),
            &Op::MeanAll { a } => {
                let n = self.value(a).len() as f64;
                acc(a, &mut |ga| {
                    for x in ga.iter_mut() {
                        *x += g[0] / n;
                    }
                });
            }
            &Op::SumAll { a } => acc(a, &mut |ga| {
                for x in ga.iter_mut() {
                    *x += g[0];
                }
            }),
            &Op::SumAxis { a, outer, n, inner } => acc(a, &mut |ga| {
                for o in 0..outer {
                    let gr = &g[o * inner..(o + 1) * inner];
                    for j in 0..n {
                        for (x, y) in ga[(o * n + j) * inner..(o * n + j + 1) * inner]
                            .iter_mut()
                            .zip(gr)
                        {
                            *x += y;
                        }
                    }
                }
            }),
            &Op::Sqrt { a } => {
                let y = node.value.data();
                acc(a, &mut |ga| {
                    for ((x, gv), yv) in ga.iter_mut().zip(g).zip(y) {
                        if *yv > 0.0 {
                            *x += gv * 0.5 / yv;
                        }
                    }
                });
            }
            Op::GatherRows { table, rows, width } => acc(*table, &mut |gt| {
                for (i, &r) in rows.iter().enumerate() {
                    for (x, y) in gt[r * width..(r + 1) * width]
                        .iter_mut()
                        .zip(&g[i * width..(i + 1) * width])
                    {
                        *x += y;
                    }
                }
            }),
        }
    }
}
