//! Tape-based reverse-mode differentiation over [`DenseArray`] values.
//!
//! Every op appends a node whose parents already live on the tape, so the
//! node index order is a topological order. [`Tape::backward`] walks it once
//! in reverse.
//!
//! Per-pixel networks work on `[features, pixels]` matrices: a hyperspectral
//! cube stored band-major is exactly such a matrix, and a fully connected
//! layer applied to every pixel is one matrix product.

use crate::array::DenseArray;
use crate::error::{Error, Result};
use crate::kernels::{self, BlurGrid};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Kinds of recorded operations. Also used to select a backward rule for
/// fault injection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OpKind {
    Leaf,
    FullyConnected,
    LeakyRelu,
    Clamp01,
    Concat,
    Blur,
    Subsample,
    Crop,
    Reshape,
    L1,
    Add,
    Scale,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    FullyConnected {
        x: usize,
        w: usize,
        b: Option<usize>,
    },
    LeakyRelu {
        x: usize,
        slope: f64,
    },
    Clamp01 {
        x: usize,
    },
    Concat {
        xs: Vec<usize>,
    },
    Blur {
        x: usize,
        kernel: usize,
        grid: BlurGrid,
    },
    Subsample {
        x: usize,
        factor: usize,
        offset: usize,
    },
    Crop {
        x: usize,
        rows: (usize, usize),
        cols: (usize, usize),
    },
    Reshape {
        x: usize,
    },
    L1 {
        a: usize,
        b: usize,
    },
    Add {
        a: usize,
        b: usize,
    },
    Scale {
        x: usize,
        factor: f64,
    },
}

impl Op {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::FullyConnected { .. } => OpKind::FullyConnected,
            Op::LeakyRelu { .. } => OpKind::LeakyRelu,
            Op::Clamp01 { .. } => OpKind::Clamp01,
            Op::Concat { .. } => OpKind::Concat,
            Op::Blur { .. } => OpKind::Blur,
            Op::Subsample { .. } => OpKind::Subsample,
            Op::Crop { .. } => OpKind::Crop,
            Op::Reshape { .. } => OpKind::Reshape,
            Op::L1 { .. } => OpKind::L1,
            Op::Add { .. } => OpKind::Add,
            Op::Scale { .. } => OpKind::Scale,
        }
    }
}

#[derive(Debug)]
struct Node {
    value: DenseArray,
    op: Op,
    requires_grad: bool,
}

/// Records a computation for reverse-mode differentiation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    fault: Option<OpKind>,
}

/// Gradients of a scalar with respect to every node that required them.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<DenseArray>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&DenseArray> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    /// Number of nodes the backward pass visited.
    pub fn visited(&self) -> usize {
        self.grads.iter().filter(|g| g.is_some()).count()
    }
}

fn check_same_shape(a: &DenseArray, b: &DenseArray, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::dim(format!(
            "{what}: shapes {:?} and {:?} differ",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// Splits a `[planes.., height, width]` shape.
fn plane_dims(shape: &[usize], what: &str) -> Result<(usize, usize, usize)> {
    if shape.len() < 2 {
        return Err(Error::dim(format!(
            "{what}: expected at least 2 dimensions, got {shape:?}"
        )));
    }
    let n = shape.len();
    let planes = shape[..n - 2].iter().product();
    Ok((planes, shape[n - 2], shape[n - 1]))
}

/// Neumaier summation. Losses are sums of thousands of terms, and plain
/// accumulation noise would swamp finite-difference checks.
fn compensated_sum(values: impl Iterator<Item = f64>) -> f64 {
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for v in values {
        let t = sum + v;
        comp += if sum.abs() >= v.abs() {
            (sum - t) + v
        } else {
            (v - t) + sum
        };
        sum = t;
    }
    sum + comp
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

    /// Corrupts the backward rule of one op kind (scales its gradient by 1.5).
    /// Exists so gradient checks can be shown to catch a broken rule.
    #[doc(hidden)]
    pub fn inject_fault(&mut self, kind: Option<OpKind>) {
        self.fault = kind;
    }

    fn push(&mut self, value: DenseArray, op: Op, parents: &[usize]) -> Var {
        debug_assert!(parents.iter().all(|&p| p < self.nodes.len()));
        let requires_grad = parents.iter().any(|&p| self.nodes[p].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn val(&self, v: usize) -> &DenseArray {
        &self.nodes[v].value
    }

    pub fn value(&self, var: Var) -> &DenseArray {
        &self.nodes[var.0].value
    }

    /// A trainable leaf.
    pub fn leaf(&mut self, value: DenseArray) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: DenseArray) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// `W·x + b`, applied column-wise when `x` is `[n_in, pixels]`.
    pub fn fully_connected(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        self.affine(x, w, Some(b))
    }

    /// `W·x` without a bias.
    pub fn matmul(&mut self, w: Var, x: Var) -> Result<Var> {
        self.affine(x, w, None)
    }

    fn affine(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (xv, wv) = (self.val(x.0), self.val(w.0));
        if wv.ndim() != 2 {
            return Err(Error::dim(format!(
                "weight must be 2-D, got {:?}",
                wv.shape()
            )));
        }
        let (n_out, n_in) = (wv.shape()[0], wv.shape()[1]);
        let (rows, cols) = match xv.shape() {
            [r] => (*r, 1),
            [r, c] => (*r, *c),
            s => return Err(Error::dim(format!("input must be 1-D or 2-D, got {s:?}"))),
        };
        if rows != n_in {
            return Err(Error::dim(format!(
                "weight {:?} does not accept input {:?}",
                wv.shape(),
                xv.shape()
            )));
        }
        let mut out = vec![0.0; n_out * cols];
        if let Some(b) = b {
            let bv = self.val(b.0);
            if bv.shape() != [n_out] {
                return Err(Error::dim(format!(
                    "bias {:?} does not match {n_out} outputs",
                    bv.shape()
                )));
            }
            for (row, &bias) in out.chunks_exact_mut(cols).zip(bv.data()) {
                row.iter_mut().for_each(|o| *o = bias);
            }
        }
        kernels::matmul_acc(wv.data(), xv.data(), &mut out, n_out, n_in, cols);
        let shape = if xv.ndim() == 1 {
            vec![n_out]
        } else {
            vec![n_out, cols]
        };
        let value = DenseArray::new(shape, out)?;
        let mut parents = vec![x.0, w.0];
        parents.extend(b.map(|b| b.0));
        Ok(self.push(
            value,
            Op::FullyConnected {
                x: x.0,
                w: w.0,
                b: b.map(|b| b.0),
            },
            &parents,
        ))
    }

    /// Elementwise `max(x, slope·x)`.
    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let value = self
            .val(x.0)
            .map(|v| if v > 0.0 { v } else { slope * v });
        self.push(value, Op::LeakyRelu { x: x.0, slope }, &[x.0])
    }

    /// Elementwise clamp to `[0, 1]`.
    pub fn clamp01(&mut self, x: Var) -> Var {
        let value = self.val(x.0).map(|v| v.clamp(0.0, 1.0));
        self.push(value, Op::Clamp01 { x: x.0 }, &[x.0])
    }

    /// Concatenates along the first axis; trailing dimensions must agree.
    pub fn concat(&mut self, xs: &[Var]) -> Result<Var> {
        let first = xs
            .first()
            .ok_or_else(|| Error::arg("concat needs at least one input"))?;
        let tail = self.val(first.0).shape().get(1..).unwrap_or(&[]).to_vec();
        if self.val(first.0).ndim() == 0 {
            return Err(Error::dim("concat inputs must be at least 1-D"));
        }
        let mut lead = 0;
        let mut data = Vec::new();
        for x in xs {
            let v = self.val(x.0);
            if v.ndim() == 0 || v.shape()[1..] != tail[..] {
                return Err(Error::dim(format!(
                    "concat: {:?} does not match trailing dims {tail:?}",
                    v.shape()
                )));
            }
            lead += v.shape()[0];
            data.extend_from_slice(v.data());
        }
        let mut shape = vec![lead];
        shape.extend(&tail);
        let value = DenseArray::new(shape, data)?;
        let ids: Vec<usize> = xs.iter().map(|v| v.0).collect();
        Ok(self.push(value, Op::Concat { xs: ids.clone() }, &ids))
    }

    /// Correlates every trailing `H×W` plane of `x` with the odd-sized square
    /// `kernel` under mirror padding with edge repetition.
    pub fn conv2d_perband(&mut self, x: Var, kernel: Var) -> Result<Var> {
        self.blur_decimate(x, kernel, 1, 0)
    }

    /// Fused `subsample(conv2d_perband(x, kernel), factor, offset)`; only the
    /// retained samples are computed.
    pub fn blur_decimate(
        &mut self,
        x: Var,
        kernel: Var,
        factor: usize,
        offset: usize,
    ) -> Result<Var> {
        let (xv, kv) = (self.val(x.0), self.val(kernel.0));
        let (planes, h, w) = plane_dims(xv.shape(), "blur")?;
        let k = match kv.shape() {
            [a, b] if a == b => *a,
            s => return Err(Error::dim(format!("kernel must be square, got {s:?}"))),
        };
        if k % 2 == 0 {
            return Err(Error::arg(format!("kernel size must be odd, got {k}")));
        }
        if k > h.min(w) {
            return Err(Error::dim(format!(
                "kernel size {k} exceeds plane size {h}×{w}"
            )));
        }
        check_decimation(h, w, factor, offset)?;
        let grid = BlurGrid {
            height: h,
            width: w,
            ksize: k,
            stride: factor,
            offset,
        };
        let mut out = vec![0.0; planes * grid.out_height() * grid.out_width()];
        kernels::blur_sample(xv.data(), kv.data(), grid, &mut out);
        let mut shape = xv.shape().to_vec();
        let n = shape.len();
        shape[n - 2] = grid.out_height();
        shape[n - 1] = grid.out_width();
        let value = DenseArray::new(shape, out)?;
        Ok(self.push(
            value,
            Op::Blur {
                x: x.0,
                kernel: kernel.0,
                grid,
            },
            &[x.0, kernel.0],
        ))
    }

    /// Keeps the samples at `factor·i + offset` of every trailing plane.
    pub fn subsample(&mut self, x: Var, factor: usize, offset: usize) -> Result<Var> {
        let xv = self.val(x.0);
        let (planes, h, w) = plane_dims(xv.shape(), "subsample")?;
        check_decimation(h, w, factor, offset)?;
        let (oh, ow) = (h / factor, w / factor);
        let mut out = Vec::with_capacity(planes * oh * ow);
        for p in xv.data().chunks_exact(h * w) {
            for i in 0..oh {
                for j in 0..ow {
                    out.push(p[(factor * i + offset) * w + factor * j + offset]);
                }
            }
        }
        let mut shape = xv.shape().to_vec();
        let n = shape.len();
        shape[n - 2] = oh;
        shape[n - 1] = ow;
        let value = DenseArray::new(shape, out)?;
        Ok(self.push(
            value,
            Op::Subsample {
                x: x.0,
                factor,
                offset,
            },
            &[x.0],
        ))
    }

    /// Keeps rows `rows.0..rows.1` and columns `cols.0..cols.1` of every plane.
    pub fn crop2d(&mut self, x: Var, rows: (usize, usize), cols: (usize, usize)) -> Result<Var> {
        let xv = self.val(x.0);
        let (_, h, w) = plane_dims(xv.shape(), "crop")?;
        if rows.0 >= rows.1 || rows.1 > h || cols.0 >= cols.1 || cols.1 > w {
            return Err(Error::dim(format!(
                "crop rows {rows:?} cols {cols:?} invalid for {h}×{w} planes"
            )));
        }
        let mut out = Vec::new();
        for p in xv.data().chunks_exact(h * w) {
            for i in rows.0..rows.1 {
                out.extend_from_slice(&p[i * w + cols.0..i * w + cols.1]);
            }
        }
        let mut shape = xv.shape().to_vec();
        let n = shape.len();
        shape[n - 2] = rows.1 - rows.0;
        shape[n - 1] = cols.1 - cols.0;
        let value = DenseArray::new(shape, out)?;
        Ok(self.push(value, Op::Crop { x: x.0, rows, cols }, &[x.0]))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.val(x.0).clone().reshaped(shape)?;
        Ok(self.push(value, Op::Reshape { x: x.0 }, &[x.0]))
    }

    /// `Σ|a − b|` as a scalar.
    pub fn l1_loss(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.val(a.0), self.val(b.0));
        check_same_shape(av, bv, "l1_loss")?;
        let s = compensated_sum(av.data().iter().zip(bv.data()).map(|(x, y)| (x - y).abs()));
        Ok(self.push(DenseArray::scalar(s), Op::L1 { a: a.0, b: b.0 }, &[a.0, b.0]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.val(a.0), self.val(b.0));
        check_same_shape(av, bv, "add")?;
        let mut value = av.clone();
        value.add_assign(bv);
        Ok(self.push(value, Op::Add { a: a.0, b: b.0 }, &[a.0, b.0]))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let value = self.val(x.0).map(|v| v * factor);
        self.push(value, Op::Scale { x: x.0, factor }, &[x.0])
    }

    /// Region labels of every non-smooth elementwise op input. Two evaluations
    /// of the same graph with equal signatures lie on one smooth piece.
    pub fn kink_signature(&self) -> Vec<u8> {
        let mut sig = Vec::new();
        for node in &self.nodes {
            match node.op {
                Op::LeakyRelu { x, .. } => {
                    sig.extend(self.val(x).data().iter().map(|&v| u8::from(v > 0.0)))
                }
                Op::Clamp01 { x } => sig.extend(self.val(x).data().iter().map(|&v| {
                    if v < 0.0 {
                        0
                    } else if v > 1.0 {
                        2
                    } else {
                        1
                    }
                })),
                Op::L1 { a, b } => sig.extend(
                    self.val(a)
                        .data()
                        .iter()
                        .zip(self.val(b).data())
                        .map(|(x, y)| match x.partial_cmp(y) {
                            Some(std::cmp::Ordering::Less) => 0,
                            Some(std::cmp::Ordering::Equal) => 1,
                            _ => 2,
                        }),
                ),
                _ => {}
            }
        }
        sig
    }

    /// Back-propagates from the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.val(loss.0).len() != 1 {
            return Err(Error::dim(format!(
                "backward needs a scalar, got shape {:?}",
                self.val(loss.0).shape()
            )));
        }
        let mut grads: Vec<Option<DenseArray>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(DenseArray::full(self.val(loss.0).shape(), 1.0));
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let g = if self.fault == Some(node.op.kind()) {
                g.map(|v| 1.5 * v)
            } else {
                g
            };
            self.backward_node(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn wants(&self, i: usize) -> bool {
        self.nodes[i].requires_grad
    }

    fn backward_node(&self, node: &Node, g: &DenseArray, grads: &mut [Option<DenseArray>]) {
        let mut acc = |i: usize, f: &dyn Fn(&mut [f64])| {
            let slot = grads[i].get_or_insert_with(|| DenseArray::zeros(self.val(i).shape()));
            f(slot.data_mut());
        };
        match &node.op {
            Op::Leaf => {}
            &Op::FullyConnected { x, w, b } => {
                let (xv, wv) = (self.val(x), self.val(w));
                let (n_out, n_in) = (wv.shape()[0], wv.shape()[1]);
                let cols = xv.len() / n_in;
                if self.wants(x) {
                    acc(x, &|d| {
                        kernels::matmul_tn_acc(wv.data(), g.data(), d, n_out, n_in, cols)
                    });
                }
                if self.wants(w) {
                    acc(w, &|d| {
                        kernels::matmul_nt_acc(g.data(), xv.data(), d, n_out, n_in, cols)
                    });
                }
                if let Some(b) = b.filter(|&b| self.wants(b)) {
                    acc(b, &|d| {
                        for (db, row) in d.iter_mut().zip(g.data().chunks_exact(cols)) {
                            *db += row.iter().sum::<f64>();
                        }
                    });
                }
            }
            &Op::LeakyRelu { x, slope } => {
                let xv = self.val(x);
                acc(x, &|d| {
                    for ((d, &gv), &v) in d.iter_mut().zip(g.data()).zip(xv.data()) {
                        *d += if v > 0.0 { gv } else { slope * gv };
                    }
                });
            }
            &Op::Clamp01 { x } => {
                let xv = self.val(x);
                acc(x, &|d| {
                    for ((d, &gv), &v) in d.iter_mut().zip(g.data()).zip(xv.data()) {
                        if (0.0..=1.0).contains(&v) {
                            *d += gv;
                        }
                    }
                });
            }
            Op::Concat { xs } => {
                let mut start = 0;
                for &x in xs {
                    let n = self.val(x).len();
                    if self.wants(x) {
                        let seg = &g.data()[start..start + n];
                        acc(x, &|d| {
                            for (d, &gv) in d.iter_mut().zip(seg) {
                                *d += gv;
                            }
                        });
                    }
                    start += n;
                }
            }
            &Op::Blur { x, kernel, grid } => {
                let (xv, kv) = (self.val(x), self.val(kernel));
                let mut gx = self.wants(x).then(|| vec![0.0; xv.len()]);
                let mut gk = self.wants(kernel).then(|| vec![0.0; kv.len()]);
                kernels::blur_sample_backward(
                    xv.data(),
                    kv.data(),
                    grid,
                    g.data(),
                    gx.as_deref_mut(),
                    gk.as_deref_mut(),
                );
                for (i, part) in [(x, gx), (kernel, gk)] {
                    if let Some(part) = part {
                        acc(i, &|d| {
                            for (d, v) in d.iter_mut().zip(&part) {
                                *d += v;
                            }
                        });
                    }
                }
            }
            &Op::Subsample { x, factor, offset } => {
                let xv = self.val(x);
                let n = xv.ndim();
                let (h, w) = (xv.shape()[n - 2], xv.shape()[n - 1]);
                let (oh, ow) = (h / factor, w / factor);
                acc(x, &|d| {
                    for (dp, gp) in d.chunks_exact_mut(h * w).zip(g.data().chunks_exact(oh * ow)) {
                        for i in 0..oh {
                            for j in 0..ow {
                                dp[(factor * i + offset) * w + factor * j + offset] +=
                                    gp[i * ow + j];
                            }
                        }
                    }
                });
            }
            &Op::Crop { x, rows, cols } => {
                let xv = self.val(x);
                let n = xv.ndim();
                let (h, w) = (xv.shape()[n - 2], xv.shape()[n - 1]);
                let cw = cols.1 - cols.0;
                let ch = rows.1 - rows.0;
                acc(x, &|d| {
                    for (dp, gp) in d.chunks_exact_mut(h * w).zip(g.data().chunks_exact(ch * cw)) {
                        for (ri, i) in (rows.0..rows.1).enumerate() {
                            let dst = &mut dp[i * w + cols.0..i * w + cols.1];
                            for (dv, gv) in dst.iter_mut().zip(&gp[ri * cw..(ri + 1) * cw]) {
                                *dv += gv;
                            }
                        }
                    }
                });
            }
            &Op::Reshape { x } => acc(x, &|d| {
                for (d, gv) in d.iter_mut().zip(g.data()) {
                    *d += gv;
                }
            }),
            &Op::L1 { a, b } => {
                let gv = g.item();
                let (av, bv) = (self.val(a), self.val(b));
                let sign = |x: f64, y: f64| {
                    if x > y {
                        1.0
                    } else if x < y {
                        -1.0
                    } else {
                        0.0
                    }
                };
                if self.wants(a) {
                    acc(a, &|d| {
                        for ((d, &x), &y) in d.iter_mut().zip(av.data()).zip(bv.data()) {
                            *d += gv * sign(x, y);
                        }
                    });
                }
                if self.wants(b) {
                    acc(b, &|d| {
                        for ((d, &x), &y) in d.iter_mut().zip(av.data()).zip(bv.data()) {
                            *d -= gv * sign(x, y);
                        }
                    });
                }
            }
            &Op::Add { a, b } => {
                for i in [a, b] {
                    if self.wants(i) {
                        acc(i, &|d| {
                            for (d, gv) in d.iter_mut().zip(g.data()) {
                                *d += gv;
                            }
                        });
                    }
                }
            }
            &Op::Scale { x, factor } => acc(x, &|d| {
                for (d, gv) in d.iter_mut().zip(g.data()) {
                    *d += factor * gv;
                }
            }),
        }
    }
}

pub(crate) fn check_decimation(h: usize, w: usize, factor: usize, offset: usize) -> Result<()> {
    if factor == 0 {
        return Err(Error::arg("decimation factor must be at least 1"));
    }
    if offset >= factor {
        return Err(Error::arg(format!(
            "sample offset {offset} must be below the factor {factor}"
        )));
    }
    if h % factor != 0 || w % factor != 0 {
        return Err(Error::dim(format!(
            "plane size {h}×{w} is not divisible by {factor}"
        )));
    }
    Ok(())
}
