//! Reverse-mode automatic differentiation over a recorded operation list.
//!
//! A [`Graph`] is built by one forward pass and confined to one thread. Nodes
//! are appended in execution order, so the node list is already a topological
//! order and [`Graph::backward`] simply walks it in reverse. Gradients that
//! reach a node along several paths are summed.

use std::borrow::Cow;

use crate::error::{Error, Result};
use crate::param::{ParamId, ParamStore};
use crate::tensor::{self, ConvGeometry, RowStats, Scalar, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// How many times each non-trivial operation was recorded.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct OpCounts {
    pub matmul: usize,
    pub conv2d: usize,
    pub layer_norm: usize,
    pub gelu: usize,
    pub softmax: usize,
}

enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    AddRowBias(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Sum(Var),
    Reshape(Var),
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeometry,
        cols: Vec<T>,
    },
    LayerNorm {
        x: Var,
        gain: Var,
        stats: RowStats<T>,
        shift: Var,
    },
    Gelu(Var),
    Softmax(Var),
    NarrowCols {
        x: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    GatherRows {
        x: Var,
        rows: Vec<usize>,
    },
    ReplaceRows {
        x: Var,
        fill: Var,
        rows: Vec<usize>,
    },
    CrossEntropy {
        logits: Var,
        probs: Vec<T>,
        targets: Vec<usize>,
        classes: usize,
        scale: T,
    },
}

struct Node<'a, T: Scalar> {
    value: Cow<'a, Tensor<T>>,
    op: Op<T>,
    requires_grad: bool,
}

pub struct Graph<'a, T: Scalar> {
    nodes: Vec<Node<'a, T>>,
    params: Vec<(ParamId, Var)>,
    counts: OpCounts,
}

impl<T: Scalar> Default for Graph<'_, T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'a, T: Scalar> Graph<'a, T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            params: Vec::new(),
            counts: OpCounts::default(),
        }
    }

    pub fn counts(&self) -> OpCounts {
        self.counts
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Cow<'a, Tensor<T>>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_op(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let rg = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.push(Cow::Owned(value), op, rg)
    }

    /// Differentiable leaf that owns its value.
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.push(Cow::Owned(value), Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(Cow::Owned(value), Op::Leaf, false)
    }

    /// Borrowed differentiable leaf.
    pub fn input_ref(&mut self, value: &'a Tensor<T>) -> Var {
        self.push(Cow::Borrowed(value), Op::Leaf, true)
    }

    /// Leaf bound to a stored parameter. Repeated calls return the same node,
    /// so a parameter used in several places accumulates one gradient.
    pub fn param(&mut self, store: &'a ParamStore<T>, id: ParamId) -> Var {
        if let Some(&(_, v)) = self.params.iter().find(|(p, _)| *p == id) {
            return v;
        }
        let v = self.push(Cow::Borrowed(store.value(id)), Op::Leaf, true);
        self.params.push((id, v));
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = tensor::matmul(self.value(a), self.value(b))?;
        self.counts.matmul += 1;
        Ok(self.push_op(out, Op::MatMul(a, b), &[a, b]))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let out = tensor::transpose(self.value(a))?;
        Ok(self.push_op(out, Op::Transpose(a), &[a]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::dim("add", va.shape(), vb.shape()));
        }
        let mut out = va.clone();
        out.add_assign(vb);
        Ok(self.push_op(out, Op::Add(a, b), &[a, b]))
    }

    /// `x[r, j] + bias[j]` for every row `r`.
    pub fn add_row_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (vx, vb) = (self.value(x), self.value(bias));
        let cols = *vx.shape().last().unwrap();
        if vb.shape() != [cols] {
            return Err(Error::dim("add_row_bias", vx.shape(), vb.shape()));
        }
        let mut out = vx.clone();
        for row in out.data_mut().chunks_mut(cols) {
            for (o, &b) in row.iter_mut().zip(vb.data()) {
                *o += b;
            }
        }
        Ok(self.push_op(out, Op::AddRowBias(x, bias), &[x, bias]))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::dim("mul", va.shape(), vb.shape()));
        }
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(&x, &y)| x * y)
            .collect();
        let out = Tensor::new(va.shape().to_vec(), data)?;
        Ok(self.push_op(out, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let out = self.value(a).map(|v| v * s);
        self.push_op(out, Op::Scale(a, s), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        self.push_op(out, Op::Sum(a), &[a])
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).clone().reshape(shape)?;
        Ok(self.push_op(out, Op::Reshape(a), &[a]))
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let geom = ConvGeometry::new(self.shape(x), self.shape(w))?;
        if let Some(b) = b {
            if self.shape(b) != [geom.c_out] {
                return Err(Error::dim("conv2d bias", self.shape(w), self.shape(b)));
            }
        }
        let bias = b.map(|b| self.value(b).data());
        let (out, cols) =
            tensor::conv2d_forward(self.value(x).data(), self.value(w).data(), bias, &geom);
        let out = Tensor::new(vec![geom.c_out, geom.height, geom.width], out)?;
        self.counts.conv2d += 1;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push_op(
            out,
            Op::Conv2d {
                x,
                w,
                b,
                geom,
                cols,
            },
            &inputs,
        ))
    }

    /// Layer normalization over the last axis.
    pub fn layer_norm(&mut self, x: Var, gain: Var, shift: Var, eps: f64) -> Result<Var> {
        let vx = self.value(x);
        let d = *vx.shape().last().unwrap();
        if self.shape(gain) != [d] || self.shape(shift) != [d] {
            return Err(Error::dim("layer_norm", vx.shape(), self.shape(gain)));
        }
        let (out, stats) = tensor::layer_norm_forward(
            vx.data(),
            d,
            self.value(gain).data(),
            self.value(shift).data(),
            T::of(eps),
        );
        let out = Tensor::new(vx.shape().to_vec(), out)?;
        self.counts.layer_norm += 1;
        Ok(self.push_op(
            out,
            Op::LayerNorm {
                x,
                gain,
                stats,
                shift,
            },
            &[x, gain, shift],
        ))
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let out = tensor::gelu(self.value(x));
        self.counts.gelu += 1;
        self.push_op(out, Op::Gelu(x), &[x])
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Var {
        let out = tensor::softmax(self.value(x));
        self.counts.softmax += 1;
        self.push_op(out, Op::Softmax(x), &[x])
    }

    /// Columns `start..start + len` of a matrix.
    pub fn narrow_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (rows, cols) = self.value(x).dims2()?;
        if start + len > cols || len == 0 {
            return Err(Error::Range(format!(
                "column slice {start}..{} of {cols}",
                start + len
            )));
        }
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(rows * len);
        for r in 0..rows {
            data.extend_from_slice(&src[r * cols + start..r * cols + start + len]);
        }
        let out = Tensor::new(vec![rows, len], data)?;
        Ok(self.push_op(out, Op::NarrowCols { x, start }, &[x]))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.value(parts[0]).dims2()?.0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.value(p).dims2()?;
            if r != rows {
                return Err(Error::dim(
                    "concat_cols",
                    self.shape(parts[0]),
                    self.shape(p),
                ));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        let out = Tensor::new(vec![rows, total], data)?;
        Ok(self.push_op(out, Op::ConcatCols(parts.to_vec()), parts))
    }

    /// Selects rows of a matrix (also serves as an embedding lookup).
    pub fn gather_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let (n, cols) = self.value(x).dims2()?;
        if let Some(&bad) = rows.iter().find(|&&r| r >= n) {
            return Err(Error::Range(format!("row index {bad} (rows: {n})")));
        }
        if rows.is_empty() {
            return Err(Error::Input("gather_rows needs at least one row".into()));
        }
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(rows.len() * cols);
        for &r in rows {
            data.extend_from_slice(&src[r * cols..(r + 1) * cols]);
        }
        let out = Tensor::new(vec![rows.len(), cols], data)?;
        Ok(self.push_op(
            out,
            Op::GatherRows {
                x,
                rows: rows.to_vec(),
            },
            &[x],
        ))
    }

    /// Overwrites the listed rows of `x` with the vector `fill`.
    pub fn replace_rows(&mut self, x: Var, fill: Var, rows: &[usize]) -> Result<Var> {
        let (n, cols) = self.value(x).dims2()?;
        if self.shape(fill) != [cols] {
            return Err(Error::dim("replace_rows", self.shape(x), self.shape(fill)));
        }
        if let Some(&bad) = rows.iter().find(|&&r| r >= n) {
            return Err(Error::Range(format!("row index {bad} (rows: {n})")));
        }
        let mut out = self.value(x).clone();
        let fill_data = self.value(fill).data().to_vec();
        for &r in rows {
            out.data_mut()[r * cols..(r + 1) * cols].copy_from_slice(&fill_data);
        }
        Ok(self.push_op(
            out,
            Op::ReplaceRows {
                x,
                fill,
                rows: rows.to_vec(),
            },
            &[x, fill],
        ))
    }

    /// Softmax cross-entropy summed over every `classes`-wide group of
    /// `logits` and multiplied by `scale`. `targets` holds one class index per
    /// group in row-major group order.
    pub fn cross_entropy(
        &mut self,
        logits: Var,
        targets: &[usize],
        classes: usize,
        scale: T,
    ) -> Result<Var> {
        let vl = self.value(logits);
        if classes == 0 || vl.numel() != targets.len() * classes {
            return Err(Error::dim(
                "cross_entropy",
                vl.shape(),
                &[targets.len(), classes],
            ));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= classes) {
            return Err(Error::Range(format!(
                "target class {bad} (classes: {classes})"
            )));
        }
        let probs = tensor::softmax_rows(vl.data(), classes);
        let mut total = T::zero();
        for (g, &t) in vl.data().chunks(classes).zip(targets) {
            total += tensor::log_sum_exp(g) - g[t];
        }
        let out = Tensor::scalar(total * scale);
        Ok(self.push_op(
            out,
            Op::CrossEntropy {
                logits,
                probs,
                targets: targets.to_vec(),
                classes,
                scale,
            },
            &[logits],
        ))
    }

    /// Propagates `d loss / d node` to every node that requires a gradient.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.shape(loss), T::one()));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) || !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads)?;
        }
        Ok(Gradients { grads })
    }

    fn propagate(
        &self,
        node: &Node<'a, T>,
        g: &Tensor<T>,
        grads: &mut [Option<Tensor<T>>],
    ) -> Result<()> {
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.value(*a).dims2()?;
                let n = self.value(*b).dims2()?.1;
                if let Some(ga) = self.slot(grads, *a) {
                    T::gemm(
                        m,
                        n,
                        k,
                        gd,
                        false,
                        self.value(*b).data(),
                        true,
                        ga.data_mut(),
                        T::one(),
                    );
                }
                if let Some(gb) = self.slot(grads, *b) {
                    T::gemm(
                        k,
                        m,
                        n,
                        self.value(*a).data(),
                        true,
                        gd,
                        false,
                        gb.data_mut(),
                        T::one(),
                    );
                }
            }
            Op::Transpose(a) => {
                if let Some(ga) = self.slot(grads, *a) {
                    let (r, c) = g.dims2()?;
                    let mut t = vec![T::zero(); r * c];
                    tensor::transpose_into(gd, r, c, &mut t);
                    add_into(ga.data_mut(), &t);
                }
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    if let Some(gv) = self.slot(grads, *v) {
                        add_into(gv.data_mut(), gd);
                    }
                }
            }
            Op::AddRowBias(x, bias) => {
                if let Some(gx) = self.slot(grads, *x) {
                    add_into(gx.data_mut(), gd);
                }
                if let Some(gb) = self.slot(grads, *bias) {
                    let cols = gb.numel();
                    for row in gd.chunks(cols) {
                        add_into(gb.data_mut(), row);
                    }
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                if let Some(ga) = self.slot(grads, *a) {
                    for ((o, &gi), &bi) in ga.data_mut().iter_mut().zip(gd).zip(vb) {
                        *o += gi * bi;
                    }
                }
                if let Some(gb) = self.slot(grads, *b) {
                    for ((o, &gi), &ai) in gb.data_mut().iter_mut().zip(gd).zip(va) {
                        *o += gi * ai;
                    }
                }
            }
            Op::Scale(a, s) => {
                if let Some(ga) = self.slot(grads, *a) {
                    for (o, &gi) in ga.data_mut().iter_mut().zip(gd) {
                        *o += gi * *s;
                    }
                }
            }
            Op::Sum(a) => {
                if let Some(ga) = self.slot(grads, *a) {
                    let s = gd[0];
                    for o in ga.data_mut() {
                        *o += s;
                    }
                }
            }
            Op::Reshape(a) => {
                if let Some(ga) = self.slot(grads, *a) {
                    add_into(ga.data_mut(), gd);
                }
            }
            Op::Conv2d {
                x,
                w,
                b,
                geom,
                cols,
            } => {
                let hw = geom.positions();
                if let Some(gw) = self.slot(grads, *w) {
                    T::gemm(
                        geom.c_out,
                        hw,
                        geom.patch_len(),
                        gd,
                        false,
                        cols,
                        true,
                        gw.data_mut(),
                        T::one(),
                    );
                }
                if let Some(b) = b {
                    if let Some(gb) = self.slot(grads, *b) {
                        for (o, plane) in gb.data_mut().iter_mut().zip(gd.chunks(hw)) {
                            *o += plane.iter().copied().sum::<T>();
                        }
                    }
                }
                if self.nodes[x.0].requires_grad {
                    let mut dcols = vec![T::zero(); geom.patch_len() * hw];
                    T::gemm(
                        geom.patch_len(),
                        geom.c_out,
                        hw,
                        self.value(*w).data(),
                        true,
                        gd,
                        false,
                        &mut dcols,
                        T::zero(),
                    );
                    let gx = self.slot(grads, *x).expect("requires grad");
                    tensor::col2im(&dcols, geom, gx.data_mut());
                }
            }
            Op::LayerNorm {
                x,
                gain,
                stats,
                shift,
            } => {
                let d = self.value(*gain).numel();
                let gain_v = self.value(*gain).data();
                if let Some(gg) = self.slot(grads, *gain) {
                    for (grow, hrow) in gd.chunks(d).zip(stats.xhat.chunks(d)) {
                        for ((o, &gi), &h) in gg.data_mut().iter_mut().zip(grow).zip(hrow) {
                            *o += gi * h;
                        }
                    }
                }
                if let Some(gs) = self.slot(grads, *shift) {
                    for grow in gd.chunks(d) {
                        add_into(gs.data_mut(), grow);
                    }
                }
                if let Some(gx) = self.slot(grads, *x) {
                    let inv_d = T::one() / T::of(d as f64);
                    let mut dxhat = vec![T::zero(); d];
                    for (r, (grow, hrow)) in gd.chunks(d).zip(stats.xhat.chunks(d)).enumerate() {
                        let mut mean_dh = T::zero();
                        let mut mean_dh_h = T::zero();
                        for j in 0..d {
                            dxhat[j] = grow[j] * gain_v[j];
                            mean_dh += dxhat[j];
                            mean_dh_h += dxhat[j] * hrow[j];
                        }
                        mean_dh *= inv_d;
                        mean_dh_h *= inv_d;
                        let rs = stats.rstd[r];
                        let out = &mut gx.data_mut()[r * d..(r + 1) * d];
                        for j in 0..d {
                            out[j] += rs * (dxhat[j] - mean_dh - hrow[j] * mean_dh_h);
                        }
                    }
                }
            }
            Op::Gelu(x) => {
                let vx = self.value(*x).data();
                if let Some(gx) = self.slot(grads, *x) {
                    for ((o, &gi), &xi) in gx.data_mut().iter_mut().zip(gd).zip(vx) {
                        *o += gi * tensor::gelu_grad_scalar(xi);
                    }
                }
            }
            Op::Softmax(x) => {
                let y = node.value.data();
                let n = *node.value.shape().last().unwrap();
                if let Some(gx) = self.slot(grads, *x) {
                    for ((out, grow), yrow) in gx
                        .data_mut()
                        .chunks_mut(n)
                        .zip(gd.chunks(n))
                        .zip(y.chunks(n))
                    {
                        let dot: T = grow.iter().zip(yrow).map(|(&a, &b)| a * b).sum();
                        for j in 0..n {
                            out[j] += yrow[j] * (grow[j] - dot);
                        }
                    }
                }
            }
            Op::NarrowCols { x, start } => {
                let (rows, len) = g.dims2()?;
                let cols = self.value(*x).dims2()?.1;
                if let Some(gx) = self.slot(grads, *x) {
                    for r in 0..rows {
                        let dst = &mut gx.data_mut()[r * cols + start..r * cols + start + len];
                        add_into(dst, &gd[r * len..(r + 1) * len]);
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let (rows, total) = g.dims2()?;
                let mut offset = 0;
                for p in parts {
                    let w = self.value(*p).dims2()?.1;
                    if let Some(gp) = self.slot(grads, *p) {
                        for r in 0..rows {
                            let src = &gd[r * total + offset..r * total + offset + w];
                            add_into(&mut gp.data_mut()[r * w..(r + 1) * w], src);
                        }
                    }
                    offset += w;
                }
            }
            Op::GatherRows { x, rows } => {
                let cols = g.dims2()?.1;
                if let Some(gx) = self.slot(grads, *x) {
                    for (i, &r) in rows.iter().enumerate() {
                        add_into(
                            &mut gx.data_mut()[r * cols..(r + 1) * cols],
                            &gd[i * cols..(i + 1) * cols],
                        );
                    }
                }
            }
            Op::ReplaceRows { x, fill, rows } => {
                let cols = g.dims2()?.1;
                if let Some(gx) = self.slot(grads, *x) {
                    let mut masked = gd.to_vec();
                    for &r in rows {
                        masked[r * cols..(r + 1) * cols].fill(T::zero());
                    }
                    add_into(gx.data_mut(), &masked);
                }
                if let Some(gf) = self.slot(grads, *fill) {
                    for &r in rows {
                        add_into(gf.data_mut(), &gd[r * cols..(r + 1) * cols]);
                    }
                }
            }
            Op::CrossEntropy {
                logits,
                probs,
                targets,
                classes,
                scale,
            } => {
                if let Some(gl) = self.slot(grads, *logits) {
                    let s = gd[0] * *scale;
                    for ((out, p), &t) in gl
                        .data_mut()
                        .chunks_mut(*classes)
                        .zip(probs.chunks(*classes))
                        .zip(targets)
                    {
                        for j in 0..*classes {
                            let onehot = if j == t { T::one() } else { T::zero() };
                            out[j] += s * (p[j] - onehot);
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Gradient buffer for `v`, allocated on first use. `None` when `v` does
    /// not take part in differentiation.
    fn slot<'g>(&self, grads: &'g mut [Option<Tensor<T>>], v: Var) -> Option<&'g mut Tensor<T>> {
        if !self.nodes[v.0].requires_grad {
            return None;
        }
        Some(grads[v.0].get_or_insert_with(|| Tensor::zeros(self.shape(v))))
    }

    /// Adds the gradient of every bound parameter into `acc` (indexed by
    /// [`ParamId`]). Parameters not reached by the loss are left untouched.
    pub fn accumulate_param_grads(&self, grads: &Gradients<T>, acc: &mut [Tensor<T>]) {
        for &(id, v) in &self.params {
            if let Some(g) = grads.wrt(v) {
                acc[id.index()].add_assign(g);
            }
        }
    }

    /// Moves the gradients of bound parameters out of `grads`.
    pub fn take_param_grads(&self, mut grads: Gradients<T>) -> Vec<(ParamId, Tensor<T>)> {
        self.params
            .iter()
            .filter_map(|&(id, v)| grads.grads[v.0].take().map(|g| (id, g)))
            .collect()
    }
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Leaf gradients produced by [`Graph::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of the loss with respect to a leaf, `None` if the leaf is
    /// unreachable from the loss (i.e. the gradient is zero).
    pub fn wrt(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads[v.0].as_ref()
    }

    /// Like [`Gradients::wrt`] but materializes zeros for unreachable leaves.
    pub fn wrt_or_zero(&self, graph: &Graph<'_, T>, v: Var) -> Tensor<T> {
        self.wrt(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(graph.shape(v)))
    }
}
