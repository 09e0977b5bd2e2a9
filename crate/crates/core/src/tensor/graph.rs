use super::kernels::{self, ConvGeom, MatRef};
use rayon::prelude::*;

use super::Tensor;
use crate::error::{Result, VinceError};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Elementwise {
    Add,
    Sub,
    Mul,
    Exp,
    Log,
    Relu,
    LeakyRelu(f32),
}

impl Elementwise {
    fn arity(self) -> usize {
        match self {
            Elementwise::Add | Elementwise::Sub | Elementwise::Mul => 2,
            _ => 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reduce {
    Sum,
    Mean,
    Max,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dSpec {
    pub stride: usize,
    pub padding: usize,
}

impl Default for Conv2dSpec {
    fn default() -> Self {
        Self {
            stride: 1,
            padding: 0,
        }
    }
}

impl Conv2dSpec {
    pub fn output_size(&self, input: usize, kernel: usize) -> Option<usize> {
        let padded = input + 2 * self.padding;
        if self.stride == 0 || padded < kernel {
            return None;
        }
        Some((padded - kernel) / self.stride + 1)
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Binary(Elementwise, Var, Var),
    Unary(Elementwise, Var),
    Scale(Var, f32),
    Reduce {
        op: Reduce,
        input: Var,
        outer: usize,
        axis_len: usize,
        inner: usize,
        argmax: Vec<usize>,
    },
    L2NormalizeRows {
        input: Var,
        inv_norms: Vec<f32>,
    },
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        geom: ConvGeom,
        batch: usize,
        out_channels: usize,
        cols: Vec<f32>,
    },
    Linear {
        x: Var,
        w: Var,
        b: Var,
    },
    Reshape(Var),
    ConcatRows(Vec<Var>),
    Gather {
        input: Var,
        indices: Vec<usize>,
    },
    BroadcastCols {
        input: Var,
        cols: usize,
    },
    Contrastive {
        anchors: Var,
        compare: Var,
        scale: f64,
        /// d(loss)/d(logits), row-major `n × cols`.
        dlogits: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Define-by-run tape. Nodes are appended in creation order, which is a
/// topological order, so backward is a single reverse sweep.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
}

fn check_finite(t: &Tensor, what: &str) -> Result<()> {
    if t.is_finite() {
        Ok(())
    } else {
        Err(VinceError::NonFinite(what.to_string()))
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that receives a gradient.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    /// Copies `v` into a fresh gradient-free leaf.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last `backward` loss w.r.t. `v`, if `v` took part.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var], what: &str) -> Result<Var> {
        check_finite(&value, what)?;
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        // Saved activations are only needed when something upstream wants a gradient.
        let op = match op {
            Op::Conv2d {
                input,
                kernel,
                bias,
                geom,
                batch,
                out_channels,
                cols,
            } => Op::Conv2d {
                input,
                kernel,
                bias,
                geom,
                batch,
                out_channels,
                cols: if requires_grad { cols } else { Vec::new() },
            },
            other => other,
        };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    // ---- linear algebra -------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (p, q) = self.value(a).dims2()?;
        let (q2, r) = self.value(b).dims2()?;
        if q != q2 {
            return Err(VinceError::dim(format!(
                "matmul inner dimensions differ: {p}×{q} · {q2}×{r}"
            )));
        }
        let mut out = vec![0.0; p * r];
        kernels::gemm(
            MatRef::new(self.value(a).data(), p, q),
            MatRef::new(self.value(b).data(), q, r),
            0.0,
            &mut out,
        );
        let value = Tensor::new([p, r], out)?;
        self.push(value, Op::MatMul(a, b), &[a, b], "matmul")
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.value(a).dims2()?;
        let src = self.value(a).data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = src[i * c + j];
            }
        }
        let value = Tensor::new([c, r], out)?;
        self.push(value, Op::Transpose(a), &[a], "transpose")
    }

    /// `x · w + b` with `x: n×i`, `w: i×o`, `b: o`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (n, i) = self.value(x).dims2()?;
        let (i2, o) = self.value(w).dims2()?;
        if i != i2 || self.value(b).shape() != [o] {
            return Err(VinceError::dim(format!(
                "linear: x {n}×{i}, w {i2}×{o}, b {:?}",
                self.value(b).shape()
            )));
        }
        let mut out = vec![0.0; n * o];
        for row in out.chunks_mut(o) {
            row.copy_from_slice(self.value(b).data());
        }
        kernels::gemm(
            MatRef::new(self.value(x).data(), n, i),
            MatRef::new(self.value(w).data(), i, o),
            1.0,
            &mut out,
        );
        let value = Tensor::new([n, o], out)?;
        self.push(value, Op::Linear { x, w, b }, &[x, w, b], "linear")
    }

    // ---- element-wise ---------------------------------------------------

    /// Applies an element-wise op. Binary ops accept equal shapes or one
    /// single-element operand, nothing else.
    pub fn elementwise(&mut self, op: Elementwise, inputs: &[Var]) -> Result<Var> {
        if inputs.len() != op.arity() {
            return Err(VinceError::dim(format!(
                "{op:?} takes {} inputs, got {}",
                op.arity(),
                inputs.len()
            )));
        }
        if op.arity() == 2 {
            return self.binary(op, inputs[0], inputs[1]);
        }
        let x = inputs[0];
        let src = self.value(x);
        let data: Vec<f32> = match op {
            Elementwise::Exp => src.data().iter().map(|v| v.exp()).collect(),
            Elementwise::Log => {
                if let Some(bad) = src.data().iter().find(|&&v| v <= 0.0) {
                    return Err(VinceError::Domain(format!("log of non-positive value {bad}")));
                }
                src.data().iter().map(|v| v.ln()).collect()
            }
            Elementwise::Relu => src.data().iter().map(|&v| v.max(0.0)).collect(),
            Elementwise::LeakyRelu(slope) => src
                .data()
                .iter()
                .map(|&v| if v > 0.0 { v } else { slope * v })
                .collect(),
            _ => unreachable!("binary ops handled above"),
        };
        let value = Tensor::new(src.shape().to_vec(), data)?;
        self.push(value, Op::Unary(op, x), &[x], "elementwise")
    }

    fn binary(&mut self, op: Elementwise, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let shape = if ta.shape() == tb.shape() || tb.len() == 1 {
            ta.shape().to_vec()
        } else if ta.len() == 1 {
            tb.shape().to_vec()
        } else {
            return Err(VinceError::dim(format!(
                "{op:?}: shapes {:?} and {:?} are neither equal nor scalar-vs-tensor",
                ta.shape(),
                tb.shape()
            )));
        };
        let len: usize = shape.iter().product();
        let at = |t: &Tensor, i: usize| if t.len() == 1 { t.data()[0] } else { t.data()[i] };
        let f: fn(f32, f32) -> f32 = match op {
            Elementwise::Add => |x, y| x + y,
            Elementwise::Sub => |x, y| x - y,
            Elementwise::Mul => |x, y| x * y,
            _ => unreachable!("unary ops handled by caller"),
        };
        let data = (0..len).map(|i| f(at(ta, i), at(tb, i))).collect();
        let value = Tensor::new(shape, data)?;
        self.push(value, Op::Binary(op, a, b), &[a, b], "elementwise")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Elementwise::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Elementwise::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Elementwise::Mul, a, b)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.elementwise(Elementwise::Exp, &[a])
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.elementwise(Elementwise::Log, &[a])
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.elementwise(Elementwise::Relu, &[a])
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f32) -> Result<Var> {
        self.elementwise(Elementwise::LeakyRelu(slope), &[a])
    }

    /// Multiplies by a compile-time constant (no gradient to the factor).
    pub fn scale(&mut self, a: Var, factor: f32) -> Result<Var> {
        let src = self.value(a);
        let value = Tensor::new(
            src.shape().to_vec(),
            src.data().iter().map(|v| v * factor).collect(),
        )?;
        self.push(value, Op::Scale(a, factor), &[a], "scale")
    }

    // ---- reductions -----------------------------------------------------

    /// Reduces over `axis`, removing it from the shape. Accumulates in f64.
    pub fn reduce(&mut self, op: Reduce, input: Var, axis: usize) -> Result<Var> {
        let src = self.value(input);
        let shape = src.shape();
        if axis >= shape.len() {
            return Err(VinceError::dim(format!(
                "reduce axis {axis} on rank-{} tensor",
                shape.len()
            )));
        }
        let outer: usize = shape[..axis].iter().product();
        let axis_len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        if op == Reduce::Max && axis_len == 0 {
            return Err(VinceError::dim("max over an empty axis"));
        }
        let mut out = vec![0.0f32; outer * inner];
        let mut argmax = Vec::new();
        if op == Reduce::Max {
            argmax = vec![0usize; outer * inner];
        }
        let data = src.data();
        for o in 0..outer {
            for i in 0..inner {
                let at = |k: usize| data[(o * axis_len + k) * inner + i];
                let slot = o * inner + i;
                match op {
                    Reduce::Sum | Reduce::Mean => {
                        let s: f64 = (0..axis_len).map(|k| at(k) as f64).sum();
                        out[slot] = if op == Reduce::Mean {
                            (s / axis_len as f64) as f32
                        } else {
                            s as f32
                        };
                    }
                    Reduce::Max => {
                        let mut best = 0;
                        for k in 1..axis_len {
                            // strict comparison keeps the lowest index on ties
                            if at(k) > at(best) {
                                best = k;
                            }
                        }
                        argmax[slot] = best;
                        out[slot] = at(best);
                    }
                }
            }
        }
        let mut out_shape = shape.to_vec();
        out_shape.remove(axis);
        let value = Tensor::new(out_shape, out)?;
        self.push(
            value,
            Op::Reduce {
                op,
                input,
                outer,
                axis_len,
                inner,
                argmax,
            },
            &[input],
            "reduce",
        )
    }

    pub fn sum_all(&mut self, a: Var) -> Result<Var> {
        let flat = self.reshape(a, [self.value(a).len()])?;
        self.reduce(Reduce::Sum, flat, 0)
    }

    pub fn mean_all(&mut self, a: Var) -> Result<Var> {
        let flat = self.reshape(a, [self.value(a).len()])?;
        self.reduce(Reduce::Mean, flat, 0)
    }

    // ---- normalization --------------------------------------------------

    /// Scales each row of an `n × d` matrix to unit L2 norm. Rows with norm
    /// below `eps` are rejected.
    pub fn l2_normalize_rows(&mut self, input: Var, eps: f32) -> Result<Var> {
        let (n, d) = self.value(input).dims2()?;
        if n == 0 || d == 0 {
            return Err(VinceError::Degenerate(format!(
                "l2_normalize_rows on {n}×{d}"
            )));
        }
        let src = self.value(input).data();
        let mut out = vec![0.0f32; n * d];
        let mut inv_norms = Vec::with_capacity(n);
        for r in 0..n {
            let row = &src[r * d..(r + 1) * d];
            let norm = row.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt();
            if norm < eps as f64 {
                return Err(VinceError::Degenerate(format!(
                    "row {r} has norm {norm:e} below {eps:e}"
                )));
            }
            let inv = 1.0 / norm;
            for (o, &v) in out[r * d..(r + 1) * d].iter_mut().zip(row) {
                *o = (v as f64 * inv) as f32;
            }
            inv_norms.push(inv as f32);
        }
        let value = Tensor::new([n, d], out)?;
        self.push(
            value,
            Op::L2NormalizeRows { input, inv_norms },
            &[input],
            "l2_normalize_rows",
        )
    }

    // ---- convolution ----------------------------------------------------

    /// Cross-correlation of `input: n×c×h×w` with `kernel: o×c×kh×kw`, plus
    /// an optional per-output-channel bias.
    pub fn conv2d(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        spec: Conv2dSpec,
    ) -> Result<Var> {
        let (n, c, h, w) = self.value(input).dims4()?;
        let (o, kc, kh, kw) = self.value(kernel).dims4()?;
        if c != kc {
            return Err(VinceError::dim(format!(
                "conv2d: input has {c} channels, kernel expects {kc}"
            )));
        }
        if let Some(b) = bias {
            if self.value(b).shape() != [o] {
                return Err(VinceError::dim(format!(
                    "conv2d bias shape {:?}, expected [{o}]",
                    self.value(b).shape()
                )));
            }
        }
        let (Some(out_h), Some(out_w)) = (spec.output_size(h, kh), spec.output_size(w, kw)) else {
            return Err(VinceError::dim(format!(
                "conv2d: padded input {h}×{w} (pad {}) smaller than kernel {kh}×{kw}",
                spec.padding
            )));
        };
        let geom = ConvGeom {
            channels: c,
            height: h,
            width: w,
            kernel_h: kh,
            kernel_w: kw,
            stride: spec.stride,
            padding: spec.padding,
            out_h,
            out_w,
        };
        let wants_grad = self.requires_grad(input)
            || self.requires_grad(kernel)
            || bias.is_some_and(|b| self.requires_grad(b));
        let (out, cols) = kernels::conv_forward(
            self.value(input).data(),
            n,
            self.value(kernel).data(),
            o,
            bias.map(|b| self.value(b).data()),
            &geom,
            wants_grad,
        );
        let value = Tensor::new([n, o, out_h, out_w], out)?;
        let mut inputs = vec![input, kernel];
        inputs.extend(bias);
        self.push(
            value,
            Op::Conv2d {
                input,
                kernel,
                bias,
                geom,
                batch: n,
                out_channels: o,
                cols: cols.unwrap_or_default(),
            },
            &inputs,
            "conv2d",
        )
    }

    // ---- structural -----------------------------------------------------

    pub fn reshape(&mut self, a: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let value = self.value(a).clone().reshape(shape)?;
        self.push(value, Op::Reshape(a), &[a], "reshape")
    }

    /// Stacks matrices with equal column counts on top of each other.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(VinceError::dim("concat_rows of nothing"));
        };
        let (_, cols) = self.value(first).dims2()?;
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let (r, c) = self.value(p).dims2()?;
            if c != cols {
                return Err(VinceError::dim(format!(
                    "concat_rows: {c} columns vs {cols}"
                )));
            }
            rows += r;
            data.extend_from_slice(self.value(p).data());
        }
        let value = Tensor::new([rows, cols], data)?;
        self.push(value, Op::ConcatRows(parts.to_vec()), parts, "concat_rows")
    }

    /// Picks flat elements of `input` by index into a tensor of `shape`.
    pub fn gather(
        &mut self,
        input: Var,
        indices: Vec<usize>,
        shape: impl Into<Vec<usize>>,
    ) -> Result<Var> {
        let src = self.value(input);
        if let Some(&bad) = indices.iter().find(|&&i| i >= src.len()) {
            return Err(VinceError::dim(format!(
                "gather index {bad} out of range for {} elements",
                src.len()
            )));
        }
        let data = indices.iter().map(|&i| src.data()[i]).collect();
        let value = Tensor::new(shape, data)?;
        self.push(value, Op::Gather { input, indices }, &[input], "gather")
    }

    /// Repeats an `n` (or `n×1`) column across `cols` columns.
    pub fn broadcast_cols(&mut self, input: Var, cols: usize) -> Result<Var> {
        let src = self.value(input);
        let n = match src.shape() {
            [n] | [n, 1] => *n,
            s => {
                return Err(VinceError::dim(format!(
                    "broadcast_cols expects [n] or [n, 1], got {s:?}"
                )))
            }
        };
        let mut data = Vec::with_capacity(n * cols);
        for &v in src.data() {
            data.extend(std::iter::repeat_n(v, cols));
        }
        let value = Tensor::new([n, cols], data)?;
        self.push(value, Op::BroadcastCols { input, cols }, &[input], "broadcast_cols")
    }

    /// Fused contrastive loss over `logits = scale · anchors · compareᵀ`:
    /// the mean over every listed positive `(i, p)` of
    /// `−log(e^{s_ip} / (e^{s_ip} + Σ_{q ∈ competitors_i} e^{s_iq}))`.
    /// Logits and the log-sum-exp are evaluated in f64, shifted by each
    /// row's maximum over its positive and competing entries.
    pub fn contrastive_loss(
        &mut self,
        anchors: Var,
        compare: Var,
        scale: f32,
        positives: &[Vec<usize>],
        competitors: &[Vec<usize>],
    ) -> Result<Var> {
        let (n, d) = self.value(anchors).dims2()?;
        let (cols, d2) = self.value(compare).dims2()?;
        if d != d2 || positives.len() != n || competitors.len() != n {
            return Err(VinceError::dim(format!(
                "contrastive loss over {n}×{d} anchors, {cols}×{d2} columns, {} / {} index rows",
                positives.len(),
                competitors.len()
            )));
        }
        if let Some(&bad) = positives.iter().chain(competitors).flatten().find(|&&j| j >= cols) {
            return Err(VinceError::dim(format!("column {bad} outside {cols}")));
        }
        let total: usize = positives.iter().map(Vec::len).sum();
        if total == 0 {
            return Err(VinceError::dim("contrastive loss needs at least one positive"));
        }
        let scale = scale as f64;
        let a = self.value(anchors).data();
        let c = self.value(compare).data();
        let logits: Vec<f64> = (0..n * cols)
            .into_par_iter()
            .map(|ij| {
                let (i, j) = (ij / cols, ij % cols);
                let row = &a[i * d..(i + 1) * d];
                let col = &c[j * d..(j + 1) * d];
                scale * row.iter().zip(col).map(|(&x, &y)| x as f64 * y as f64).sum::<f64>()
            })
            .collect();

        let mut loss = 0.0f64;
        let mut dlogits = vec![0.0f64; n * cols];
        let weight = 1.0 / total as f64;
        for i in 0..n {
            let s = &logits[i * cols..(i + 1) * cols];
            let shift = positives[i]
                .iter()
                .chain(&competitors[i])
                .map(|&j| s[j])
                .fold(f64::NEG_INFINITY, f64::max);
            let neg_sum: f64 = competitors[i].iter().map(|&j| (s[j] - shift).exp()).sum();
            let grad = &mut dlogits[i * cols..(i + 1) * cols];
            for &p in &positives[i] {
                let e = (s[p] - shift).exp();
                let denom = e + neg_sum;
                loss -= weight * ((s[p] - shift) - denom.ln());
                grad[p] -= weight * (1.0 - e / denom);
                for &q in &competitors[i] {
                    grad[q] += weight * (s[q] - shift).exp() / denom;
                }
            }
        }
        let value = Tensor::scalar(loss as f32);
        self.push(
            value,
            Op::Contrastive {
                anchors,
                compare,
                scale,
                dlogits,
            },
            &[anchors, compare],
            "contrastive_loss",
        )
    }

    // ---- backward -------------------------------------------------------

    /// Reverse sweep from a single-element `loss`. Replaces any gradients
    /// from a previous call.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(VinceError::dim(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f32>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(dy) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            self.propagate(node, &dy, &mut grads);
            grads[idx] = Some(dy);
        }

        self.grads = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, node)| {
                g.filter(|_| node.requires_grad)
                    .map(|g| Tensor::new(node.value.shape().to_vec(), g))
                    .transpose()
            })
            .collect::<Result<_>>()?;
        if self.grads.iter().flatten().any(|g| !g.is_finite()) {
            return Err(VinceError::NonFinite("backward".into()));
        }
        Ok(())
    }

    fn propagate(&self, node: &Node, dy: &[f32], grads: &mut [Option<Vec<f32>>]) {
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        let val = |v: Var| &self.nodes[v.0].value;
        let mut acc = |v: Var, delta: Vec<f32>| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(g) => g.iter_mut().zip(&delta).for_each(|(a, d)| *a += d),
                slot @ None => *slot = Some(delta),
            }
        };

        match &node.op {
            Op::Leaf => {}
            &Op::MatMul(a, b) => {
                let (p, q) = (val(a).shape()[0], val(a).shape()[1]);
                let r = val(b).shape()[1];
                let dc = MatRef::new(dy, p, r);
                if wants(a) {
                    let mut da = vec![0.0; p * q];
                    kernels::gemm(dc, MatRef::new(val(b).data(), q, r).t(), 0.0, &mut da);
                    acc(a, da);
                }
                if wants(b) {
                    let mut db = vec![0.0; q * r];
                    kernels::gemm(MatRef::new(val(a).data(), p, q).t(), dc, 0.0, &mut db);
                    acc(b, db);
                }
            }
            &Op::Transpose(a) => {
                let (r, c) = (val(a).shape()[0], val(a).shape()[1]);
                let mut da = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..c {
                        da[i * c + j] = dy[j * r + i];
                    }
                }
                acc(a, da);
            }
            &Op::Linear { x, w, b } => {
                let (n, i) = (val(x).shape()[0], val(x).shape()[1]);
                let o = val(w).shape()[1];
                let dout = MatRef::new(dy, n, o);
                if wants(x) {
                    let mut dx = vec![0.0; n * i];
                    kernels::gemm(dout, MatRef::new(val(w).data(), i, o).t(), 0.0, &mut dx);
                    acc(x, dx);
                }
                if wants(w) {
                    let mut dw = vec![0.0; i * o];
                    kernels::gemm(MatRef::new(val(x).data(), n, i).t(), dout, 0.0, &mut dw);
                    acc(w, dw);
                }
                if wants(b) {
                    let mut db = vec![0.0f64; o];
                    for row in dy.chunks(o) {
                        db.iter_mut().zip(row).for_each(|(a, &v)| *a += v as f64);
                    }
                    acc(b, db.into_iter().map(|v| v as f32).collect());
                }
            }
            &Op::Binary(op, a, b) => {
                let (ta, tb) = (val(a), val(b));
                let at = |t: &Tensor, i: usize| if t.len() == 1 { t.data()[0] } else { t.data()[i] };
                // d(out)/d(a), d(out)/d(b) per element
                let (ga, gb): (Vec<f32>, Vec<f32>) = match op {
                    Elementwise::Add => (dy.to_vec(), dy.to_vec()),
                    Elementwise::Sub => (dy.to_vec(), dy.iter().map(|v| -v).collect()),
                    Elementwise::Mul => (
                        dy.iter().enumerate().map(|(i, g)| g * at(tb, i)).collect(),
                        dy.iter().enumerate().map(|(i, g)| g * at(ta, i)).collect(),
                    ),
                    _ => unreachable!(),
                };
                let fold = |g: Vec<f32>, t: &Tensor| {
                    if t.len() == 1 && g.len() != 1 {
                        vec![g.iter().map(|&v| v as f64).sum::<f64>() as f32]
                    } else {
                        g
                    }
                };
                if wants(a) {
                    acc(a, fold(ga, ta));
                }
                if wants(b) {
                    acc(b, fold(gb, tb));
                }
            }
            &Op::Unary(op, a) => {
                let x = val(a).data();
                let out = node.value.data();
                let da = match op {
                    Elementwise::Exp => dy.iter().zip(out).map(|(g, y)| g * y).collect(),
                    Elementwise::Log => dy.iter().zip(x).map(|(g, x)| g / x).collect(),
                    Elementwise::Relu => dy
                        .iter()
                        .zip(x)
                        .map(|(g, &x)| if x > 0.0 { *g } else { 0.0 })
                        .collect(),
                    Elementwise::LeakyRelu(slope) => dy
                        .iter()
                        .zip(x)
                        .map(|(g, &x)| if x > 0.0 { *g } else { slope * g })
                        .collect(),
                    _ => unreachable!(),
                };
                acc(a, da);
            }
            &Op::Scale(a, factor) => acc(a, dy.iter().map(|g| g * factor).collect()),
            Op::Reduce {
                op,
                input,
                outer,
                axis_len,
                inner,
                argmax,
            } => {
                let (outer, axis_len, inner) = (*outer, *axis_len, *inner);
                let mut dx = vec![0.0f32; outer * axis_len * inner];
                for o in 0..outer {
                    for i in 0..inner {
                        let slot = o * inner + i;
                        let g = dy[slot];
                        match op {
                            Reduce::Sum => {
                                for k in 0..axis_len {
                                    dx[(o * axis_len + k) * inner + i] = g;
                                }
                            }
                            Reduce::Mean => {
                                let g = g / axis_len as f32;
                                for k in 0..axis_len {
                                    dx[(o * axis_len + k) * inner + i] = g;
                                }
                            }
                            Reduce::Max => dx[(o * axis_len + argmax[slot]) * inner + i] = g,
                        }
                    }
                }
                acc(*input, dx);
            }
            Op::L2NormalizeRows { input, inv_norms } => {
                let d = node.value.shape()[1];
                let y = node.value.data();
                let mut dx = vec![0.0f32; y.len()];
                for (r, &inv) in inv_norms.iter().enumerate() {
                    let yr = &y[r * d..(r + 1) * d];
                    let gr = &dy[r * d..(r + 1) * d];
                    let dot: f64 = yr.iter().zip(gr).map(|(&a, &b)| a as f64 * b as f64).sum();
                    for k in 0..d {
                        dx[r * d + k] = ((gr[k] as f64 - yr[k] as f64 * dot) * inv as f64) as f32;
                    }
                }
                acc(*input, dx);
            }
            Op::Conv2d {
                input,
                kernel,
                bias,
                geom,
                batch,
                out_channels,
                cols,
            } => {
                let grads_out = kernels::conv_backward(
                    dy,
                    *batch,
                    val(*kernel).data(),
                    *out_channels,
                    cols,
                    geom,
                    wants(*input),
                    wants(*kernel),
                    bias.is_some_and(&wants),
                );
                if let Some(dx) = grads_out.input {
                    acc(*input, dx);
                }
                if let Some(dk) = grads_out.kernel {
                    acc(*kernel, dk);
                }
                if let (Some(b), Some(db)) = (bias, grads_out.bias) {
                    acc(*b, db);
                }
            }
            &Op::Reshape(a) => acc(a, dy.to_vec()),
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = val(p).len();
                    if wants(p) {
                        acc(p, dy[offset..offset + len].to_vec());
                    }
                    offset += len;
                }
            }
            Op::Gather { input, indices } => {
                let mut dx = vec![0.0f32; val(*input).len()];
                for (&i, &g) in indices.iter().zip(dy) {
                    dx[i] += g;
                }
                acc(*input, dx);
            }
            &Op::BroadcastCols { input, cols } => {
                let dx = if cols == 0 {
                    vec![0.0; val(input).len()]
                } else {
                    dy.chunks(cols)
                        .map(|row| row.iter().map(|&v| v as f64).sum::<f64>() as f32)
                        .collect()
                };
                acc(input, dx);
            }
            Op::Contrastive {
                anchors,
                compare,
                scale,
                dlogits,
            } => {
                let (a, c) = (val(*anchors), val(*compare));
                let (n, d) = (a.shape()[0], a.shape()[1]);
                let cols = c.shape()[0];
                let k = dy[0] as f64 * scale;
                if wants(*anchors) {
                    let da: Vec<f32> = (0..n * d)
                        .into_par_iter()
                        .map(|ik| {
                            let (i, e) = (ik / d, ik % d);
                            let g = &dlogits[i * cols..(i + 1) * cols];
                            (k * (0..cols).map(|j| g[j] * c.data()[j * d + e] as f64).sum::<f64>()) as f32
                        })
                        .collect();
                    acc(*anchors, da);
                }
                if wants(*compare) {
                    let dc: Vec<f32> = (0..cols * d)
                        .into_par_iter()
                        .map(|je| {
                            let (j, e) = (je / d, je % d);
                            (k * (0..n).map(|i| dlogits[i * cols + j] * a.data()[i * d + e] as f64).sum::<f64>()) as f32
                        })
                        .collect();
                    acc(*compare, dc);
                }
            }
        }
    }
}
