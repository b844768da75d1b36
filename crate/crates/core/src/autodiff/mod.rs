//! Define-by-run reverse-mode automatic differentiation over [`DenseTensor`]s.
//!
//! A [`Graph`] is a tape: every node is appended after its inputs, so the
//! graph is acyclic by construction and backward runs in reverse insertion
//! order. Complex quantities are carried as a trailing real/imag mode; the
//! engine itself only sees real scalars.

pub mod gradcheck;
pub mod optim;

use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::mri::encode::{sense_combine, sense_expand};
use crate::mri::fft::fft2c_split;
use crate::tensor::{mode_product_factor_grad, mode_product_kernel, DenseTensor};

pub use gradcheck::{check_gradients, GradCheckReport};
pub use optim::{adam_step, AdamState, DecayMode, DecayTarget, LrSchedule, Param, ParamGroup, ParamStore, WeightDecay};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    /// inputs: x `(n, in)`, w `(out, in)`, b `(out)`
    Linear,
    Sine { freq: f64 },
    Add,
    Scale { alpha: f64 },
    Mul,
    /// inputs: tensor, factor `(rows, cols)`
    ModeProduct { mode: usize },
    Gather { indices: Arc<Vec<usize>> },
    ScatterAdd { indices: Arc<Vec<usize>> },
    Fft2c { inverse: bool },
    AbsDiffSum { mode: usize },
    NuclearNorm { subgradient: DenseTensor },
    ComplexNuclearNorm { subgradient: DenseTensor },
    FrobeniusSq,
    Sum,
    Reshape,
    SenseExpand { maps: Arc<DenseTensor> },
    Magnitude,
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    inputs: Vec<NodeId>,
    value: DenseTensor,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Per-node gradients produced by [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<DenseTensor>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&DenseTensor> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, id: NodeId) -> Option<DenseTensor> {
        self.grads.get_mut(id.0).and_then(|g| g.take())
    }
}

fn mismatch(what: &str, a: &[usize], b: &[usize]) -> Error {
    Error::invalid(format!("{what}: shape {a:?} vs {b:?}"))
}

fn accumulate(slot: &mut Option<DenseTensor>, g: DenseTensor) {
    match slot {
        Some(acc) => {
            for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                *a += b;
            }
        }
        None => *slot = Some(g),
    }
}

/// Splits a channel-last complex tensor `(nx, ny, .., 2)` into `(nx, ny, slabs)`.
fn fft_layout(shape: &[usize]) -> Result<(usize, usize, usize)> {
    if shape.len() < 3 || *shape.last().unwrap() != 2 {
        return Err(Error::invalid(format!(
            "fft node needs shape (nx, ny, .., 2), got {shape:?}"
        )));
    }
    let slabs = shape[2..shape.len() - 1].iter().product();
    Ok((shape[0], shape[1], slabs))
}

fn svd_failure(rows: usize, cols: usize, data: &[f64]) -> Error {
    let fro = data.iter().map(|v| v * v).sum::<f64>().sqrt();
    let max = data.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    Error::Numerical(format!(
        "SVD did not converge for a {rows}x{cols} matrix (frobenius norm {fro:e}, max |entry| {max:e}, finite: {})",
        data.iter().all(|v| v.is_finite())
    ))
}

fn singular_cutoff(rows: usize, cols: usize, sigma_max: f64) -> f64 {
    rows.max(cols) as f64 * f64::EPSILON * sigma_max
}

/// Sum of singular values and the `U V^T` subgradient over the numerically
/// nonzero ones.
fn real_nuclear(m: DMatrix<f64>) -> Result<(f64, DMatrix<f64>)> {
    let (rows, cols) = m.shape();
    let snapshot = m.as_slice().to_vec();
    // non-finite input never converges
    if !snapshot.iter().all(|v| v.is_finite()) {
        return Err(svd_failure(rows, cols, &snapshot));
    }
    // nalgebra's own default tolerance; a tighter one can stall on rank-deficient input.
    // The sweep cap only guards against overflow inside the iteration.
    let max_sweeps = 1000 * rows.max(cols).max(1);
    let svd = nalgebra::linalg::SVD::try_new(m, true, true, 5.0 * f64::EPSILON, max_sweeps)
        .ok_or_else(|| svd_failure(rows, cols, &snapshot))?;
    let (u, vt) = (svd.u.as_ref().unwrap(), svd.v_t.as_ref().unwrap());
    let smax = svd.singular_values.iter().fold(0.0_f64, |a, &b| a.max(b));
    let cut = singular_cutoff(rows, cols, smax);
    let mut g = DMatrix::<f64>::zeros(rows, cols);
    let mut total = 0.0;
    for (k, &s) in svd.singular_values.iter().enumerate() {
        total += s;
        if s > cut {
            g += u.column(k) * vt.row(k);
        }
    }
    if !total.is_finite() {
        return Err(svd_failure(rows, cols, &snapshot));
    }
    Ok((total, g))
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

    pub fn value(&self, id: NodeId) -> &DenseTensor {
        &self.nodes[id.0].value
    }

    pub fn scalar(&self, id: NodeId) -> f64 {
        self.nodes[id.0].value.data()[0]
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn push(&mut self, op: Op, inputs: Vec<NodeId>, value: DenseTensor) -> NodeId {
        let requires_grad = inputs.iter().any(|i| self.nodes[i.0].requires_grad);
        self.nodes.push(Node {
            op,
            inputs,
            value,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn check(&self, id: NodeId) -> Result<()> {
        if id.0 >= self.nodes.len() {
            return Err(Error::invalid(format!("unknown node {}", id.0)));
        }
        Ok(())
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: DenseTensor) -> NodeId {
        self.nodes.push(Node {
            op: Op::Leaf,
            inputs: vec![],
            value,
            requires_grad: true,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Constant leaf; no gradient is propagated into it.
    pub fn constant(&mut self, value: DenseTensor) -> NodeId {
        self.nodes.push(Node {
            op: Op::Leaf,
            inputs: vec![],
            value,
            requires_grad: false,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Dense layer `x w^T + b` with `x: (n, in)`, `w: (out, in)`, `b: (out)`.
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        for id in [x, w, b] {
            self.check(id)?;
        }
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        let (n, fan_in) = matrix_dims(xv)?;
        let (out, w_in) = matrix_dims(wv)?;
        if w_in != fan_in || bv.len() != out {
            return Err(Error::invalid(format!(
                "linear: x {:?}, w {:?}, b {:?}",
                xv.shape(),
                wv.shape(),
                bv.shape()
            )));
        }
        let (xd, wd, bd) = (xv.data(), wv.data(), bv.data());
        let mut y = vec![0.0; n * out];
        for o in 0..out {
            let col = &mut y[o * n..(o + 1) * n];
            col.fill(bd[o]);
            for k in 0..fan_in {
                let wok = wd[o + out * k];
                for (yi, xi) in col.iter_mut().zip(&xd[k * n..(k + 1) * n]) {
                    *yi += xi * wok;
                }
            }
        }
        let value = DenseTensor::from_vec(&[n, out], y)?;
        Ok(self.push(Op::Linear, vec![x, w, b], value))
    }

    /// `sin(freq * x)` elementwise.
    pub fn sine(&mut self, x: NodeId, freq: f64) -> Result<NodeId> {
        self.check(x)?;
        let value = self.value(x).map(|v| (freq * v).sin());
        Ok(self.push(Op::Sine { freq }, vec![x], value))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check(a)?;
        self.check(b)?;
        let value = self
            .value(a)
            .axpby(1.0, self.value(b), 1.0)
            .map_err(|_| mismatch("add", self.value(a).shape(), self.value(b).shape()))?;
        Ok(self.push(Op::Add, vec![a, b], value))
    }

    pub fn scale(&mut self, a: NodeId, alpha: f64) -> Result<NodeId> {
        self.check(a)?;
        let value = self.value(a).scaled(alpha);
        Ok(self.push(Op::Scale { alpha }, vec![a], value))
    }

    /// Elementwise product of equally shaped tensors.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check(a)?;
        self.check(b)?;
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(mismatch("mul", av.shape(), bv.shape()));
        }
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x * y).collect();
        let value = DenseTensor::from_vec(av.shape(), data)?;
        Ok(self.push(Op::Mul, vec![a, b], value))
    }

    /// `t ×_mode a` where `a` is a `(rows, cols)` matrix node.
    pub fn mode_product(&mut self, t: NodeId, a: NodeId, mode: usize) -> Result<NodeId> {
        self.check(t)?;
        self.check(a)?;
        let (tv, av) = (self.value(t), self.value(a));
        let (rows, cols) = matrix_dims(av)?;
        if mode >= tv.rank() || tv.shape()[mode] != cols {
            return Err(Error::invalid(format!(
                "mode_product: factor {:?} against mode {mode} of {:?}",
                av.shape(),
                tv.shape()
            )));
        }
        let (left, _, right) = tv.split_at_mode(mode);
        let data = mode_product_kernel(tv.data(), left, right, av.data(), rows, cols);
        let mut shape = tv.shape().to_vec();
        shape[mode] = rows;
        let value = DenseTensor::from_vec(&shape, data)?;
        Ok(self.push(Op::ModeProduct { mode }, vec![t, a], value))
    }

    /// `out[i] = x[indices[i]]`, reshaped to `shape`.
    pub fn gather(&mut self, x: NodeId, indices: Arc<Vec<usize>>, shape: &[usize]) -> Result<NodeId> {
        self.check(x)?;
        let xv = self.value(x);
        if indices.len() != shape.iter().product::<usize>() {
            return Err(Error::invalid(format!(
                "gather: {} indices for output shape {shape:?}",
                indices.len()
            )));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= xv.len()) {
            return Err(Error::invalid(format!(
                "gather: index {bad} out of bounds for {} elements",
                xv.len()
            )));
        }
        let data = indices.iter().map(|&i| xv.data()[i]).collect();
        let value = DenseTensor::from_vec(shape, data)?;
        Ok(self.push(Op::Gather { indices }, vec![x], value))
    }

    /// `out[indices[i]] += x[i]` into a zero tensor of `shape`.
    pub fn scatter_add(&mut self, x: NodeId, indices: Arc<Vec<usize>>, shape: &[usize]) -> Result<NodeId> {
        self.check(x)?;
        let xv = self.value(x);
        if indices.len() != xv.len() {
            return Err(Error::invalid(format!(
                "scatter_add: {} indices for {} elements",
                indices.len(),
                xv.len()
            )));
        }
        let mut value = DenseTensor::zeros(shape)?;
        let out = value.data_mut();
        for (&i, v) in indices.iter().zip(xv.data()) {
            if i >= out.len() {
                return Err(Error::invalid(format!(
                    "scatter_add: index {i} out of bounds for {} elements",
                    out.len()
                )));
            }
            out[i] += v;
        }
        Ok(self.push(Op::ScatterAdd { indices }, vec![x], value))
    }

    /// Centered orthonormal 2-D FFT over the first two modes of `(nx, ny, .., 2)`.
    pub fn fft2c(&mut self, x: NodeId) -> Result<NodeId> {
        self.fft_node(x, false)
    }

    pub fn ifft2c(&mut self, x: NodeId) -> Result<NodeId> {
        self.fft_node(x, true)
    }

    fn fft_node(&mut self, x: NodeId, inverse: bool) -> Result<NodeId> {
        self.check(x)?;
        let mut value = self.value(x).clone();
        let (nx, ny, slabs) = fft_layout(value.shape())?;
        fft2c_split(value.data_mut(), nx, ny, slabs, inverse);
        Ok(self.push(Op::Fft2c { inverse }, vec![x], value))
    }

    /// `sum |x[.., i+1, ..] - x[.., i, ..]|` along `mode`, no wraparound.
    pub fn abs_diff_sum(&mut self, x: NodeId, mode: usize) -> Result<NodeId> {
        self.check(x)?;
        let xv = self.value(x);
        if mode >= xv.rank() {
            return Err(Error::invalid(format!("abs_diff_sum: mode {mode} of {:?}", xv.shape())));
        }
        let (left, n, right) = xv.split_at_mode(mode);
        let d = xv.data();
        let mut total = 0.0;
        for r in 0..right {
            for i in 0..n.saturating_sub(1) {
                let a = (r * n + i) * left;
                let b = a + left;
                for l in 0..left {
                    total += (d[b + l] - d[a + l]).abs();
                }
            }
        }
        Ok(self.push(Op::AbsDiffSum { mode }, vec![x], DenseTensor::scalar(total)))
    }

    /// Nuclear norm of a real matrix; backward uses the `U V^T` subgradient.
    pub fn nuclear_norm(&mut self, x: NodeId) -> Result<NodeId> {
        self.check(x)?;
        let xv = self.value(x);
        let (rows, cols) = matrix_dims(xv)?;
        let (total, g) = real_nuclear(DMatrix::from_column_slice(rows, cols, xv.data()))?;
        let subgradient = DenseTensor::from_vec(&[rows, cols], g.as_slice().to_vec())?;
        Ok(self.push(Op::NuclearNorm { subgradient }, vec![x], DenseTensor::scalar(total)))
    }

    /// Nuclear norm of a complex `(m, n)` matrix given as an `(m, n, 2)` tensor.
    ///
    /// Evaluated on the real embedding `[[A, -B], [B, A]]` of `C = A + iB`,
    /// whose singular values are those of `C`, each twice.
    pub fn complex_nuclear_norm(&mut self, x: NodeId) -> Result<NodeId> {
        self.check(x)?;
        let xv = self.value(x);
        let (rows, cols) = match *xv.shape() {
            [r, c, 2] => (r, c),
            _ => {
                return Err(Error::invalid(format!(
                    "complex_nuclear_norm needs (m, n, 2), got {:?}",
                    xv.shape()
                )))
            }
        };
        let h = rows * cols;
        let d = xv.data();
        let embed = DMatrix::from_fn(2 * rows, 2 * cols, |i, j| {
            let (bi, ii) = (i / rows, i % rows);
            let (bj, jj) = (j / cols, j % cols);
            let (re, im) = (d[ii + rows * jj], d[h + ii + rows * jj]);
            match (bi, bj) {
                (0, 0) | (1, 1) => re,
                (0, 1) => -im,
                _ => im,
            }
        });
        let (total, g) = real_nuclear(embed)?;
        let mut sub = vec![0.0; 2 * h];
        for j in 0..cols {
            for i in 0..rows {
                sub[i + rows * j] = 0.5 * (g[(i, j)] + g[(rows + i, cols + j)]);
                sub[h + i + rows * j] = 0.5 * (g[(rows + i, j)] - g[(i, cols + j)]);
            }
        }
        let subgradient = DenseTensor::from_vec(&[rows, cols, 2], sub)?;
        Ok(self.push(Op::ComplexNuclearNorm { subgradient }, vec![x], DenseTensor::scalar(0.5 * total)))
    }

    pub fn frobenius_sq(&mut self, x: NodeId) -> Result<NodeId> {
        self.check(x)?;
        let v = self.value(x).norm_sq();
        Ok(self.push(Op::FrobeniusSq, vec![x], DenseTensor::scalar(v)))
    }

    pub fn sum(&mut self, x: NodeId) -> Result<NodeId> {
        self.check(x)?;
        let v = self.value(x).data().iter().sum();
        Ok(self.push(Op::Sum, vec![x], DenseTensor::scalar(v)))
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId> {
        self.check(x)?;
        let value = self.value(x).reshape(shape)?;
        Ok(self.push(Op::Reshape, vec![x], value))
    }

    /// Coil expansion `(nx, ny, nt, 2) -> (nx, ny, nt, ns, 2)` by complex
    /// multiplication with constant `(nx, ny, ns, 2)` maps.
    pub fn sense_expand(&mut self, x: NodeId, maps: Arc<DenseTensor>) -> Result<NodeId> {
        self.check(x)?;
        let xv = self.value(x);
        let (nx, ny, nt, ns) = match (xv.shape(), maps.shape()) {
            (&[nx, ny, nt, 2], &[mx, my, ns, 2]) if (mx, my) == (nx, ny) => (nx, ny, nt, ns),
            (a, b) => return Err(mismatch("sense_expand", a, b)),
        };
        let data = sense_expand(xv.data(), maps.data(), nx, ny, nt, ns);
        let value = DenseTensor::from_vec(&[nx, ny, nt, ns, 2], data)?;
        Ok(self.push(Op::SenseExpand { maps }, vec![x], value))
    }

    /// Complex magnitude over a trailing real/imag mode.
    pub fn magnitude(&mut self, x: NodeId) -> Result<NodeId> {
        self.check(x)?;
        let xv = self.value(x);
        let shape = xv.shape();
        if shape.len() < 2 || shape[shape.len() - 1] != 2 {
            return Err(Error::invalid(format!("magnitude needs a trailing 2, got {shape:?}")));
        }
        let h = xv.len() / 2;
        let d = xv.data();
        let data = (0..h).map(|i| d[i].hypot(d[i + h])).collect();
        let value = DenseTensor::from_vec(&shape[..shape.len() - 1], data)?;
        Ok(self.push(Op::Magnitude, vec![x], value))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        self.check(loss)?;
        if self.value(loss).len() != 1 {
            return Err(Error::invalid(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<DenseTensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(DenseTensor::from_vec(self.value(loss).shape(), vec![1.0])?);

        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad || node.inputs.is_empty() {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            if node.inputs.iter().any(|i| i.0 >= id) {
                return Err(Error::Internal(format!("node {id} depends on a later node: cycle")));
            }
            let contributions = self.local_grads(node, &g)?;
            for (input, cg) in node.inputs.iter().zip(contributions) {
                if let Some(cg) = cg {
                    accumulate(&mut grads[input.0], cg);
                }
            }
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn wants(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn local_grads(&self, node: &Node, g: &DenseTensor) -> Result<Vec<Option<DenseTensor>>> {
        let inp = &node.inputs;
        let gs = g.data()[0];
        let out = match &node.op {
            Op::Leaf => vec![],
            Op::Linear => {
                let (x, w) = (self.value(inp[0]), self.value(inp[1]));
                let (n, fan_in) = matrix_dims(x)?;
                let (out, _) = matrix_dims(w)?;
                let (xd, wd, gd) = (x.data(), w.data(), g.data());
                let dx = self.wants(inp[0]).then(|| {
                    let mut dx = vec![0.0; n * fan_in];
                    for k in 0..fan_in {
                        for o in 0..out {
                            let wok = wd[o + out * k];
                            for (d, go) in dx[k * n..(k + 1) * n].iter_mut().zip(&gd[o * n..(o + 1) * n]) {
                                *d += go * wok;
                            }
                        }
                    }
                    DenseTensor::from_vec(x.shape(), dx)
                });
                let dw = self.wants(inp[1]).then(|| {
                    let mut dw = vec![0.0; out * fan_in];
                    for k in 0..fan_in {
                        for o in 0..out {
                            dw[o + out * k] = gd[o * n..(o + 1) * n]
                                .iter()
                                .zip(&xd[k * n..(k + 1) * n])
                                .map(|(a, b)| a * b)
                                .sum();
                        }
                    }
                    DenseTensor::from_vec(w.shape(), dw)
                });
                let db = self.wants(inp[2]).then(|| {
                    let db = (0..out).map(|o| gd[o * n..(o + 1) * n].iter().sum()).collect();
                    DenseTensor::from_vec(self.value(inp[2]).shape(), db)
                });
                vec![dx.transpose()?, dw.transpose()?, db.transpose()?]
            }
            Op::Sine { freq } => {
                let x = self.value(inp[0]);
                let data = x
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(v, gv)| gv * freq * (freq * v).cos())
                    .collect();
                vec![Some(DenseTensor::from_vec(x.shape(), data)?)]
            }
            Op::Add => vec![
                self.wants(inp[0]).then(|| g.clone()),
                self.wants(inp[1]).then(|| g.clone()),
            ],
            Op::Scale { alpha } => vec![Some(g.scaled(*alpha))],
            Op::Mul => {
                let (a, b) = (self.value(inp[0]), self.value(inp[1]));
                let prod = |other: &DenseTensor| {
                    let d = g.data().iter().zip(other.data()).map(|(x, y)| x * y).collect();
                    DenseTensor::from_vec(g.shape(), d)
                };
                vec![
                    self.wants(inp[0]).then(|| prod(b)).transpose()?,
                    self.wants(inp[1]).then(|| prod(a)).transpose()?,
                ]
            }
            Op::ModeProduct { mode } => {
                let (t, a) = (self.value(inp[0]), self.value(inp[1]));
                let (rows, cols) = matrix_dims(a)?;
                let (left, _, right) = t.split_at_mode(*mode);
                let dt = self.wants(inp[0]).then(|| {
                    let mut at = vec![0.0; rows * cols];
                    for j in 0..cols {
                        for i in 0..rows {
                            at[j + cols * i] = a.data()[i + rows * j];
                        }
                    }
                    let d = mode_product_kernel(g.data(), left, right, &at, cols, rows);
                    DenseTensor::from_vec(t.shape(), d)
                });
                let da = self.wants(inp[1]).then(|| {
                    let d = mode_product_factor_grad(g.data(), t.data(), left, right, rows, cols);
                    DenseTensor::from_vec(a.shape(), d)
                });
                vec![dt.transpose()?, da.transpose()?]
            }
            Op::Gather { indices } => {
                let x = self.value(inp[0]);
                let mut d = vec![0.0; x.len()];
                for (&i, gv) in indices.iter().zip(g.data()) {
                    d[i] += gv;
                }
                vec![Some(DenseTensor::from_vec(x.shape(), d)?)]
            }
            Op::ScatterAdd { indices } => {
                let x = self.value(inp[0]);
                let d = indices.iter().map(|&i| g.data()[i]).collect();
                vec![Some(DenseTensor::from_vec(x.shape(), d)?)]
            }
            Op::Fft2c { inverse } => {
                let mut d = g.clone();
                let (nx, ny, slabs) = fft_layout(d.shape())?;
                fft2c_split(d.data_mut(), nx, ny, slabs, !inverse);
                vec![Some(d)]
            }
            Op::AbsDiffSum { mode } => {
                let x = self.value(inp[0]);
                let (left, n, right) = x.split_at_mode(*mode);
                let xd = x.data();
                let mut d = vec![0.0; x.len()];
                for r in 0..right {
                    for i in 0..n.saturating_sub(1) {
                        let a = (r * n + i) * left;
                        let b = a + left;
                        for l in 0..left {
                            let diff = xd[b + l] - xd[a + l];
                            let s = if diff > 0.0 {
                                gs
                            } else if diff < 0.0 {
                                -gs
                            } else {
                                0.0
                            };
                            d[b + l] += s;
                            d[a + l] -= s;
                        }
                    }
                }
                vec![Some(DenseTensor::from_vec(x.shape(), d)?)]
            }
            Op::NuclearNorm { subgradient } | Op::ComplexNuclearNorm { subgradient } => {
                vec![Some(subgradient.scaled(gs))]
            }
            Op::FrobeniusSq => vec![Some(self.value(inp[0]).scaled(2.0 * gs))],
            Op::Sum => {
                let x = self.value(inp[0]);
                vec![Some(DenseTensor::filled(x.shape(), gs)?)]
            }
            Op::Reshape => vec![Some(g.reshape(self.value(inp[0]).shape())?)],
            Op::SenseExpand { maps } => {
                let x = self.value(inp[0]);
                let s = x.shape();
                let ns = maps.shape()[2];
                let d = sense_combine(g.data(), maps.data(), s[0], s[1], s[2], ns);
                vec![Some(DenseTensor::from_vec(s, d)?)]
            }
            Op::Magnitude => {
                let x = self.value(inp[0]);
                let h = x.len() / 2;
                let (xd, mag) = (x.data(), node.value.data());
                let mut d = vec![0.0; x.len()];
                for i in 0..h {
                    if mag[i] > 0.0 {
                        d[i] = g.data()[i] * xd[i] / mag[i];
                        d[i + h] = g.data()[i] * xd[i + h] / mag[i];
                    }
                }
                vec![Some(DenseTensor::from_vec(x.shape(), d)?)]
            }
        };
        Ok(out)
    }
}

/// `(rows, cols)` of a matrix-valued tensor; 1-D tensors are column vectors.
fn matrix_dims(t: &DenseTensor) -> Result<(usize, usize)> {
    match *t.shape() {
        [r, c] => Ok((r, c)),
        [r] => Ok((r, 1)),
        _ => Err(Error::invalid(format!("expected a matrix, got {:?}", t.shape()))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], seed: u64) -> DenseTensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DenseTensor::from_fn(shape, |_| rng.random_range(-1.0..1.0)).unwrap()
    }

    /// Central differences of `f` around `x`, used as the oracle.
    fn numeric_grad(x: &DenseTensor, f: impl Fn(&DenseTensor) -> f64, h: f64) -> DenseTensor {
        let mut out = x.clone();
        for i in 0..x.len() {
            let mut p = x.clone();
            p.data_mut()[i] += h;
            let mut m = x.clone();
            m.data_mut()[i] -= h;
            out.data_mut()[i] = (f(&p) - f(&m)) / (2.0 * h);
        }
        out
    }

    fn max_rel(a: &DenseTensor, b: &DenseTensor, floor: f64) -> f64 {
        a.data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
            .fold(0.0, f64::max)
    }

    fn check_unary(x: DenseTensor, build: impl Fn(&mut Graph, NodeId) -> NodeId) {
        let mut g = Graph::new();
        let leaf = g.param(x.clone());
        let loss = build(&mut g, leaf);
        let grads = g.backward(loss).unwrap();
        let analytic = grads.get(leaf).unwrap().clone();
        let numeric = numeric_grad(
            &x,
            |v| {
                let mut g = Graph::new();
                let leaf = g.param(v.clone());
                let loss = build(&mut g, leaf);
                g.scalar(loss)
            },
            1e-6,
        );
        let err = max_rel(&analytic, &numeric, 1e-4);
        assert!(err < 1e-4, "relative error {err}");
    }

    #[test]
    fn sum_and_frobenius() {
        let x = random(&[3, 4], 1);
        let mut g = Graph::new();
        let leaf = g.param(x.clone());
        let s = g.sum(leaf).unwrap();
        assert_eq!(g.backward(s).unwrap().get(leaf).unwrap().data(), &[1.0; 12]);

        let mut g = Graph::new();
        let leaf = g.param(x.clone());
        let f = g.frobenius_sq(leaf).unwrap();
        assert_eq!(g.backward(f).unwrap().get(leaf).unwrap(), &x.scaled(2.0));
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut g = Graph::new();
        let leaf = g.param(random(&[2, 2], 2));
        assert!(matches!(g.backward(leaf), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn nuclear_norm_values_and_gradients() {
        let diag = DenseTensor::from_vec(&[2, 2], vec![3.0, 0.0, 0.0, 4.0]).unwrap();
        let mut g = Graph::new();
        let leaf = g.param(diag);
        let n = g.nuclear_norm(leaf).unwrap();
        assert!((g.scalar(n) - 7.0).abs() < 1e-12);
        let grad = g.backward(n).unwrap();
        let gd = grad.get(leaf).unwrap();
        assert!(gd.max_abs_diff(&DenseTensor::identity(2).unwrap()) < 1e-12);

        let signed = DenseTensor::from_vec(&[3, 3], vec![2.0, 0.0, 0.0, 0.0, -1.5, 0.0, 0.0, 0.0, 0.7]).unwrap();
        check_unary(signed, |g, x| g.nuclear_norm(x).unwrap());

        let mut g = Graph::new();
        let z = g.param(DenseTensor::zeros(&[3, 2]).unwrap());
        let n = g.nuclear_norm(z).unwrap();
        assert_eq!(g.scalar(n), 0.0);

        check_unary(random(&[8, 5], 3), |g, x| g.nuclear_norm(x).unwrap());
        check_unary(random(&[6, 3, 2], 4), |g, x| g.complex_nuclear_norm(x).unwrap());
    }

    #[test]
    fn nuclear_norm_of_non_finite_input_is_numerical_error() {
        for bad in [f64::INFINITY, f64::NAN] {
            let t = DenseTensor::from_vec(&[3, 2], vec![1.0, bad, 0.5, -bad, 2.0, bad]).unwrap();
            let mut g = Graph::new();
            let n = g.constant(t.clone());
            assert!(matches!(g.nuclear_norm(n), Err(Error::Numerical(_))), "{bad}");
            let c = g.constant(t.reshape(&[3, 1, 2]).unwrap());
            assert!(matches!(g.complex_nuclear_norm(c), Err(Error::Numerical(_))), "{bad}");
        }
    }

    fn complex_value(t: &DenseTensor) -> f64 {
        let mut g = Graph::new();
        let n = g.constant(t.clone());
        let v = g.complex_nuclear_norm(n).unwrap();
        g.scalar(v)
    }

    #[test]
    fn complex_nuclear_norm_values() {
        // rank one: u v^H has the single singular value |u| |v|
        let u = random(&[7, 1, 2], 20);
        let v = random(&[4, 1, 2], 21);
        let cu = |i: usize| Complex64::new(u.data()[i], u.data()[7 + i]);
        let cv = |j: usize| Complex64::new(v.data()[j], v.data()[4 + j]);
        let outer = DenseTensor::from_fn(&[7, 4, 2], |ix| {
            let z = cu(ix[0]) * cv(ix[1]).conj();
            if ix[2] == 0 {
                z.re
            } else {
                z.im
            }
        })
        .unwrap();
        let expect = u.norm_sq().sqrt() * v.norm_sq().sqrt();
        assert!((complex_value(&outer) - expect).abs() < 1e-12 * expect);

        // two columns: singular values from the 2x2 Gram matrix
        let c = random(&[9, 2, 2], 22);
        let cd = c.data().to_vec();
        let col = |j: usize| -> Vec<Complex64> { (0..9).map(|i| Complex64::new(cd[i + 9 * j], cd[18 + i + 9 * j])).collect() };
        let a: f64 = col(0).iter().map(|z| z.norm_sqr()).sum();
        let d: f64 = col(1).iter().map(|z| z.norm_sqr()).sum();
        let b: Complex64 = col(0).iter().zip(col(1)).map(|(p, q)| p.conj() * q).sum();
        let disc = (((a - d) / 2.0).powi(2) + b.norm_sqr()).sqrt();
        let expect = ((a + d) / 2.0 + disc).sqrt() + ((a + d) / 2.0 - disc).max(0.0).sqrt();
        assert!((complex_value(&c) - expect).abs() < 1e-12 * expect);

        // real input reduces to the real nuclear norm
        let r = random(&[5, 3], 23);
        let mut ri = r.data().to_vec();
        ri.extend(std::iter::repeat_n(0.0, 15));
        let mut g = Graph::new();
        let n = g.constant(r);
        let rn = g.nuclear_norm(n).unwrap();
        let rv = g.scalar(rn);
        assert!((complex_value(&DenseTensor::from_vec(&[5, 3, 2], ri).unwrap()) - rv).abs() < 1e-12);
    }

    #[test]
    fn elementwise_ops_gradients() {
        check_unary(random(&[4, 3], 5), |g, x| {
            let s = g.sine(x, 30.0).unwrap();
            let c = g.scale(s, 0.5).unwrap();
            let m = g.mul(c, x).unwrap();
            let a = g.add(m, x).unwrap();
            g.frobenius_sq(a).unwrap()
        });
        check_unary(random(&[3, 4, 2], 6), |g, x| {
            let m = g.magnitude(x).unwrap();
            g.sum(m).unwrap()
        });
        for mode in 0..3 {
            check_unary(random(&[3, 4, 2], 7 + mode as u64), |g, x| g.abs_diff_sum(x, mode).unwrap());
        }
    }

    #[test]
    fn linear_and_mode_product_gradients() {
        let w = random(&[5, 3], 8);
        let b = random(&[5], 9);
        check_unary(random(&[4, 3], 10), |g, x| {
            let (wn, bn) = (g.param(w.clone()), g.param(b.clone()));
            let y = g.linear(x, wn, bn).unwrap();
            g.frobenius_sq(y).unwrap()
        });
        // weight gradient
        let x = random(&[4, 3], 11);
        check_unary(w.clone(), |g, wn| {
            let (xn, bn) = (g.constant(x.clone()), g.param(b.clone()));
            let y = g.linear(xn, wn, bn).unwrap();
            let s = g.sine(y, 2.0).unwrap();
            g.sum(s).unwrap()
        });
        let t = random(&[2, 3, 4], 12);
        let a = random(&[5, 3], 13);
        check_unary(t.clone(), |g, tn| {
            let an = g.constant(a.clone());
            let y = g.mode_product(tn, an, 1).unwrap();
            g.frobenius_sq(y).unwrap()
        });
        check_unary(a, |g, an| {
            let tn = g.constant(t.clone());
            let y = g.mode_product(tn, an, 1).unwrap();
            g.frobenius_sq(y).unwrap()
        });
    }

    #[test]
    fn gather_scatter_are_adjoint_in_the_graph() {
        // permutation: gather then scatter back gives identity, gradient is the inverse permutation
        let perm = Arc::new(vec![3usize, 0, 2, 1]);
        let x = DenseTensor::from_vec(&[4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let w = DenseTensor::from_vec(&[4], vec![10.0, 20.0, 30.0, 40.0]).unwrap();
        let mut g = Graph::new();
        let leaf = g.param(x.clone());
        let gathered = g.gather(leaf, perm.clone(), &[4]).unwrap();
        let weights = g.constant(w.clone());
        let prod = g.mul(gathered, weights).unwrap();
        let loss = g.sum(prod).unwrap();
        let grad = g.backward(loss).unwrap();
        // d/dx[perm[i]] = w[i]
        let mut expect = vec![0.0; 4];
        for (i, &p) in perm.iter().enumerate() {
            expect[p] = w.data()[i];
        }
        assert_eq!(grad.get(leaf).unwrap().data(), expect.as_slice());

        // random index map with duplicates
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let idx = Arc::new((0..12).map(|_| rng.random_range(0..5)).collect::<Vec<usize>>());
        let (i1, i2) = (idx.clone(), idx.clone());
        check_unary(random(&[5], 15), move |g, x| {
            let y = g.gather(x, i1.clone(), &[12]).unwrap();
            let s = g.sine(y, 1.5).unwrap();
            let z = g.scatter_add(s, i2.clone(), &[5]).unwrap();
            g.frobenius_sq(z).unwrap()
        });

        // empty selection
        let mut g = Graph::new();
        let leaf = g.param(random(&[3], 16));
        let y = g.scatter_add(leaf, Arc::new(vec![0, 0, 0]), &[2]).unwrap();
        let e = g.gather(y, Arc::new(vec![1]), &[1]).unwrap();
        let loss = g.sum(e).unwrap();
        assert!(g.backward(loss).unwrap().get(leaf).unwrap().data().iter().all(|&v| v == 0.0));

        let mut g = Graph::new();
        let leaf = g.param(random(&[3], 17));
        assert!(g.gather(leaf, Arc::new(vec![3]), &[1]).is_err());
        assert!(g.scatter_add(leaf, Arc::new(vec![0, 1, 5]), &[4]).is_err());
    }

    #[test]
    fn fft_and_sense_nodes() {
        let maps = Arc::new(random(&[4, 3, 2, 2], 18));
        check_unary(random(&[4, 3, 2, 2], 19), move |g, x| {
            let s = g.sense_expand(x, maps.clone()).unwrap();
            let k = g.fft2c(s).unwrap();
            let w = g.constant(random(&[4, 3, 2, 2, 2], 20));
            let p = g.mul(k, w).unwrap();
            let i = g.ifft2c(p).unwrap();
            g.frobenius_sq(i).unwrap()
        });
        let x = random(&[5, 4, 3, 2], 21);
        let mut g = Graph::new();
        let leaf = g.constant(x.clone());
        let k = g.fft2c(leaf).unwrap();
        assert!((g.value(k).norm_sq() - x.norm_sq()).abs() < 1e-12);
        let back = g.ifft2c(k).unwrap();
        assert!(g.value(back).max_abs_diff(&x) < 1e-12);
    }

    #[test]
    fn backward_is_deterministic_and_linear() {
        let x = random(&[6, 4, 2], 22);
        let build = |alpha: f64| {
            let mut g = Graph::new();
            let leaf = g.param(x.clone());
            let r = g.reshape(leaf, &[6, 4, 2]).unwrap();
            let a = g.complex_nuclear_norm(r).unwrap();
            let b = g.abs_diff_sum(leaf, 0).unwrap();
            let s = g.add(a, b).unwrap();
            let l = g.scale(s, alpha).unwrap();
            let grads = g.backward(l).unwrap();
            grads.get(leaf).unwrap().clone()
        };
        assert_eq!(build(1.0), build(1.0));
        assert!(build(2.5).max_abs_diff(&build(1.0).scaled(2.5)) < 1e-12);
    }
}
