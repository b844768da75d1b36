//! Dense real tensors and the mode algebra used by the Tucker models.
//!
//! Storage is "mode-0 fastest": the element at multi-index `(i0, i1, ..)`
//! lives at `i0 + n0 * (i1 + n1 * (i2 + ..))`. Mode unfoldings use the
//! canonical column order (remaining modes ascending, lower modes fastest),
//! so unfolding mode 0 is a plain reshape. Modes are 0-based throughout.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_MODES: usize = 6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() || shape.len() > MAX_MODES {
        return Err(Error::invalid(format!(
            "tensor must have 1..={MAX_MODES} modes, got {}",
            shape.len()
        )));
    }
    if shape.contains(&0) {
        return Err(Error::invalid(format!("zero extent in shape {shape:?}")));
    }
    Ok(shape.iter().product())
}

impl DenseTensor {
    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::filled(shape, 0.0)
    }

    pub fn filled(shape: &[usize], value: f64) -> Result<Self> {
        let len = check_shape(shape)?;
        Ok(Self {
            shape: shape.to_vec(),
            data: vec![value; len],
        })
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let len = check_shape(shape)?;
        if len != data.len() {
            return Err(Error::invalid(format!(
                "shape {shape:?} needs {len} elements, got {}",
                data.len()
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(&[usize]) -> f64) -> Result<Self> {
        let len = check_shape(shape)?;
        let mut idx = vec![0usize; shape.len()];
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            data.push(f(&idx));
            for (i, n) in idx.iter_mut().zip(shape) {
                *i += 1;
                if *i < *n {
                    break;
                }
                *i = 0;
            }
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Square identity matrix.
    pub fn identity(n: usize) -> Result<Self> {
        Self::from_fn(&[n, n], |ix| if ix[0] == ix[1] { 1.0 } else { 0.0 })
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn offset(&self, index: &[usize]) -> usize {
        debug_assert_eq!(index.len(), self.shape.len());
        let mut off = 0;
        for (i, n) in index.iter().zip(&self.shape).rev() {
            debug_assert!(i < n);
            off = off * n + i;
        }
        off
    }

    pub fn get(&self, index: &[usize]) -> f64 {
        self.data[self.offset(index)]
    }

    pub fn set(&mut self, index: &[usize], value: f64) {
        let off = self.offset(index);
        self.data[off] = value;
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        Self::from_vec(shape, self.data.clone())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        self.map(|v| alpha * v)
    }

    /// `alpha * self + beta * other`.
    pub fn axpby(&self, alpha: f64, other: &Self, beta: f64) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::invalid(format!(
                "shape mismatch {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| alpha * a + beta * b)
            .collect();
        Ok(Self {
            shape: self.shape.clone(),
            data,
        })
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `(left, extent, right)` view of the tensor around `mode`.
    pub(crate) fn split_at_mode(&self, mode: usize) -> (usize, usize, usize) {
        let left = self.shape[..mode].iter().product();
        let right = self.shape[mode + 1..].iter().product();
        (left, self.shape[mode], right)
    }

    fn check_mode(&self, mode: usize) -> Result<()> {
        if mode >= self.rank() {
            return Err(Error::invalid(format!(
                "mode {mode} out of range for a {}-mode tensor",
                self.rank()
            )));
        }
        Ok(())
    }
}

/// A matrix stored column-major, i.e. element `(r, c)` at `r + rows * c`.
/// This is the same layout as a 2-mode [`DenseTensor`].
#[derive(Debug, Clone, PartialEq)]
pub struct ModeMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl ModeMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows * cols != data.len() || rows == 0 || cols == 0 {
            return Err(Error::invalid(format!(
                "{rows}x{cols} matrix cannot hold {} elements",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(rows * cols);
        for c in 0..cols {
            for r in 0..rows {
                data.push(f(r, c));
            }
        }
        Self::new(rows, cols, data)
    }

    pub fn identity(n: usize) -> Result<Self> {
        Self::from_fn(n, n, |r, c| if r == c { 1.0 } else { 0.0 })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r + self.rows * c]
    }

    pub fn matmul(&self, other: &ModeMatrix) -> Result<ModeMatrix> {
        if self.cols != other.rows {
            return Err(Error::invalid(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = vec![0.0; self.rows * other.cols];
        for c in 0..other.cols {
            for k in 0..self.cols {
                let b = other.data[k + other.rows * c];
                let col = &self.data[k * self.rows..(k + 1) * self.rows];
                for (o, a) in out[c * self.rows..(c + 1) * self.rows].iter_mut().zip(col) {
                    *o += a * b;
                }
            }
        }
        ModeMatrix::new(self.rows, other.cols, out)
    }

    pub fn transpose(&self) -> ModeMatrix {
        let mut data = vec![0.0; self.data.len()];
        for c in 0..self.cols {
            for r in 0..self.rows {
                data[c + self.cols * r] = self.data[r + self.rows * c];
            }
        }
        ModeMatrix {
            rows: self.cols,
            cols: self.rows,
            data,
        }
    }
}

impl From<ModeMatrix> for DenseTensor {
    fn from(m: ModeMatrix) -> Self {
        DenseTensor {
            shape: vec![m.rows, m.cols],
            data: m.data,
        }
    }
}

impl TryFrom<&DenseTensor> for ModeMatrix {
    type Error = Error;

    fn try_from(t: &DenseTensor) -> Result<Self> {
        match *t.shape() {
            [rows, cols] => ModeMatrix::new(rows, cols, t.data.clone()),
            [rows] => ModeMatrix::new(rows, 1, t.data.clone()),
            _ => Err(Error::invalid(format!(
                "expected a matrix, got shape {:?}",
                t.shape()
            ))),
        }
    }
}

/// Mode-`mode` unfolding: row `r` holds every element whose `mode` index is `r`.
pub fn unfold(t: &DenseTensor, mode: usize) -> Result<ModeMatrix> {
    t.check_mode(mode)?;
    let (left, n, right) = t.split_at_mode(mode);
    let cols = left * right;
    let mut data = vec![0.0; t.len()];
    for r in 0..right {
        for i in 0..n {
            let src = &t.data[(r * n + i) * left..(r * n + i + 1) * left];
            for (l, v) in src.iter().enumerate() {
                data[i + n * (l + left * r)] = *v;
            }
        }
    }
    ModeMatrix::new(n, cols, data)
}

/// Inverse of [`unfold`].
pub fn fold(m: &ModeMatrix, mode: usize, shape: &[usize]) -> Result<DenseTensor> {
    let mut out = DenseTensor::zeros(shape)?;
    out.check_mode(mode)?;
    let (left, n, right) = out.split_at_mode(mode);
    if m.rows != n || m.cols != left * right {
        return Err(Error::invalid(format!(
            "{}x{} matrix does not fold into mode {mode} of {shape:?}",
            m.rows, m.cols
        )));
    }
    for r in 0..right {
        for i in 0..n {
            let dst = &mut out.data[(r * n + i) * left..(r * n + i + 1) * left];
            for (l, v) in dst.iter_mut().enumerate() {
                *v = m.data[i + n * (l + left * r)];
            }
        }
    }
    Ok(out)
}

/// Below this leading extent each leading index is handled by one strided
/// matrix product instead of looping over contiguous fibers.
const SHORT_FIBER: usize = 16;
/// Contracted extents up to this size skip the matrix-product call overhead.
const TINY_FACTOR: usize = 4;
/// Trailing slices per work item in the strided path.
const TRAILING_BLOCK: usize = 256;

/// Raw mode product kernel on a `(left, cols, right)` view:
/// `out[l, i, r] = sum_j a[i, j] * t[l, j, r]`, `a` column-major `rows x cols`.
pub(crate) fn mode_product_kernel(
    t: &[f64],
    left: usize,
    right: usize,
    a: &[f64],
    rows: usize,
    cols: usize,
) -> Vec<f64> {
    let mut out = vec![0.0; left * rows * right];
    if left < SHORT_FIBER && cols <= TINY_FACTOR {
        let (src_len, dst_len) = (cols * left, rows * left);
        crate::parallel::for_each_chunk(&mut out, dst_len * TRAILING_BLOCK, 1 << 16, |blk, chunk| {
            let src = &t[blk * TRAILING_BLOCK * src_len..];
            for (dst, src) in chunk.chunks_exact_mut(dst_len).zip(src.chunks_exact(src_len)) {
                for (i, row) in dst.chunks_exact_mut(left).enumerate() {
                    for (l, o) in row.iter_mut().enumerate() {
                        let mut acc = 0.0;
                        for j in 0..cols {
                            acc += a[i + rows * j] * src[l + left * j];
                        }
                        *o = acc;
                    }
                }
            }
        });
        return out;
    }
    if left < SHORT_FIBER {
        let (ls, cs) = (left as isize, (left * cols) as isize);
        crate::parallel::for_each_chunk(&mut out, rows * left * TRAILING_BLOCK, 1 << 16, |blk, chunk| {
            let n = chunk.len() / (rows * left);
            let src = &t[blk * TRAILING_BLOCK * cols * left..];
            for l in 0..left {
                // SAFETY: strides address `n` trailing slices of `src` and `chunk`,
                // both of which hold at least that many.
                unsafe {
                    matrixmultiply::dgemm(
                        rows,
                        cols,
                        n,
                        1.0,
                        a.as_ptr(),
                        1,
                        rows as isize,
                        src.as_ptr().add(l),
                        ls,
                        cs,
                        0.0,
                        chunk.as_mut_ptr().add(l),
                        ls,
                        (left * rows) as isize,
                    );
                }
            }
        });
        return out;
    }
    if cols <= TINY_FACTOR && rows <= TINY_FACTOR {
        crate::parallel::for_each_chunk(&mut out, rows * left, 1 << 16, |r, block| {
            for j in 0..cols {
                let src = &t[(r * cols + j) * left..(r * cols + j + 1) * left];
                for i in 0..rows {
                    let aij = a[i + rows * j];
                    let dst = &mut block[i * left..(i + 1) * left];
                    for (o, s) in dst.iter_mut().zip(src) {
                        *o += aij * s;
                    }
                }
            }
        });
        return out;
    }
    crate::parallel::for_each_chunk(&mut out, rows * left, 1 << 16, |r, block| {
        let src = &t[r * cols * left..(r + 1) * cols * left];
        // SAFETY: `src` is `left x cols`, `block` is `left x rows`, column-major.
        unsafe {
            matrixmultiply::dgemm(
                left,
                cols,
                rows,
                1.0,
                src.as_ptr(),
                1,
                left as isize,
                a.as_ptr(),
                rows as isize,
                1,
                0.0,
                block.as_mut_ptr(),
                1,
                left as isize,
            );
        }
    });
    out
}

/// Gradient of the mode product with respect to its factor:
/// `g[i, j] = sum_{l, r} dy[l, i, r] * t[l, j, r]`.
pub(crate) fn mode_product_factor_grad(
    dy: &[f64],
    t: &[f64],
    left: usize,
    right: usize,
    rows: usize,
    cols: usize,
) -> Vec<f64> {
    let mut g = vec![0.0; rows * cols];
    if left < SHORT_FIBER {
        assert!(dy.len() >= left * rows * right && t.len() >= left * cols * right);
        for l in 0..left {
            // SAFETY: lengths checked above; strides stay within both views.
            unsafe {
                matrixmultiply::dgemm(
                    rows,
                    right,
                    cols,
                    1.0,
                    dy.as_ptr().add(l),
                    left as isize,
                    (left * rows) as isize,
                    t.as_ptr().add(l),
                    (left * cols) as isize,
                    left as isize,
                    1.0,
                    g.as_mut_ptr(),
                    1,
                    rows as isize,
                );
            }
        }
        return g;
    }
    for r in 0..right {
        let ds = &dy[r * rows * left..(r + 1) * rows * left];
        let ts = &t[r * cols * left..(r + 1) * cols * left];
        // SAFETY: `ds` is `left x rows` and `ts` is `left x cols`, both column-major.
        unsafe {
            matrixmultiply::dgemm(
                rows,
                left,
                cols,
                1.0,
                ds.as_ptr(),
                left as isize,
                1,
                ts.as_ptr(),
                1,
                left as isize,
                1.0,
                g.as_mut_ptr(),
                1,
                rows as isize,
            );
        }
    }
    g
}

/// `t ×_mode a`: replaces the extent of `mode` by `a.rows()`.
pub fn mode_product(t: &DenseTensor, a: &ModeMatrix, mode: usize) -> Result<DenseTensor> {
    t.check_mode(mode)?;
    let (left, n, right) = t.split_at_mode(mode);
    if a.cols != n {
        return Err(Error::invalid(format!(
            "factor has {} columns but mode {mode} has extent {n}",
            a.cols
        )));
    }
    let data = mode_product_kernel(&t.data, left, right, &a.data, a.rows, a.cols);
    let mut shape = t.shape.clone();
    shape[mode] = a.rows;
    DenseTensor::from_vec(&shape, data)
}

/// Core tensor times one factor per mode, applied in ascending mode order.
pub fn tucker_reconstruct(core: &DenseTensor, factors: &[ModeMatrix]) -> Result<DenseTensor> {
    if factors.len() != core.rank() {
        return Err(Error::invalid(format!(
            "{} factors for a {}-mode core",
            factors.len(),
            core.rank()
        )));
    }
    factors
        .iter()
        .enumerate()
        .try_fold(core.clone(), |acc, (mode, f)| mode_product(&acc, f, mode))
}
