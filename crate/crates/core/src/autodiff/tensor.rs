use std::fmt;
use std::sync::Arc;

use super::tape::{NodeRef, Tape};
use crate::error::{Error, Result};

/// Dense row-major array of `f64` with an optional handle into a [`Tape`].
///
/// A tensor without a tape handle is a constant: it takes part in
/// computation but never receives a gradient.
#[derive(Clone)]
pub struct Tensor {
    pub(crate) shape: Vec<usize>,
    pub(crate) data: Arc<Vec<f64>>,
    pub(crate) node: Option<NodeRef>,
}

impl Tensor {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<f64>) -> Result<Self> {
        let shape = shape.into();
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::shape(
                "new",
                format!("shape {shape:?} holds {numel} elements, got {}", data.len()),
            ));
        }
        Ok(Self::from_parts(shape, Arc::new(data)))
    }

    pub(crate) fn from_parts(shape: Vec<usize>, data: Arc<Vec<f64>>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor {
            shape,
            data,
            node: None,
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self::from_parts(Vec::new(), Arc::new(vec![value]))
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: f64) -> Self {
        let shape = shape.into();
        let n = shape.iter().product();
        Self::from_parts(shape, Arc::new(vec![value; n]))
    }

    /// Builds a `[rows.len(), width]` matrix from equal-length rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let width = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != width) {
            return Err(Error::shape("from_rows", "rows have differing lengths"));
        }
        Tensor::new(vec![rows.len(), width], rows.concat())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.data.as_ref().clone()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.numel() != 1 {
            return Err(Error::shape(
                "item",
                format!("expected one element, shape is {:?}", self.shape),
            ));
        }
        Ok(self.data[0])
    }

    pub fn is_scalar(&self) -> bool {
        self.numel() == 1
    }

    /// Size of the leading axis of a matrix (1 for lower ranks).
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            0 | 1 => 1,
            _ => self.shape[0],
        }
    }

    /// Size of the trailing axis (1 for scalars).
    pub fn cols(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    pub fn is_attached(&self) -> bool {
        self.node.is_some()
    }

    pub fn tape(&self) -> Option<&Tape> {
        self.node.as_ref().map(|n| &n.tape)
    }

    /// The same values with no tape handle.
    pub fn detach(&self) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: Arc::clone(&self.data),
            node: None,
        }
    }

    /// Mutable access to the values. Drops any tape handle, since an
    /// in-place edit invalidates what the tape recorded.
    pub fn data_mut(&mut self) -> &mut [f64] {
        self.node = None;
        Arc::make_mut(&mut self.data).as_mut_slice()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("attached", &self.is_attached())
            .field("data", &self.data)
            .finish()
    }
}

// Tape-free kernels shared by forward and backward passes.

pub(crate) fn matmul_kernel(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    if m == 0 || n == 0 || k == 0 {
        return c;
    }
    // SAFETY: slices have exactly m*k, k*n and m*n elements with the
    // row-major strides passed below.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            n as isize,
            1,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
    c
}

pub(crate) fn transpose_kernel(a: &[f64], m: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a[i * n + j];
        }
    }
    out
}

/// Right-aligns `src` against `dst`, returning the padded source shape,
/// or `None` when `src` cannot broadcast to `dst`.
pub(crate) fn broadcast_compatible(src: &[usize], dst: &[usize]) -> Option<Vec<usize>> {
    if src.len() > dst.len() {
        return None;
    }
    let mut padded = vec![1; dst.len() - src.len()];
    padded.extend_from_slice(src);
    padded
        .iter()
        .zip(dst)
        .all(|(&s, &d)| s == d || s == 1)
        .then_some(padded)
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut st = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        st[i] = st[i + 1] * shape[i + 1];
    }
    st
}

/// For each element of `dst`, the flat index of the source element it
/// broadcasts from.
fn broadcast_index_map(padded_src: &[usize], dst: &[usize]) -> Vec<usize> {
    let src_strides = strides(padded_src);
    let n: usize = dst.iter().product();
    let mut map = Vec::with_capacity(n);
    let mut idx = vec![0usize; dst.len()];
    for _ in 0..n {
        let off = idx
            .iter()
            .zip(padded_src)
            .zip(&src_strides)
            .map(|((&i, &s), &st)| if s == 1 { 0 } else { i * st })
            .sum();
        map.push(off);
        for ax in (0..dst.len()).rev() {
            idx[ax] += 1;
            if idx[ax] < dst[ax] {
                break;
            }
            idx[ax] = 0;
        }
    }
    map
}

pub(crate) fn broadcast_kernel(src: &[f64], padded_src: &[usize], dst: &[usize]) -> Vec<f64> {
    let n: usize = dst.iter().product();
    if src.len() == 1 {
        return vec![src[0]; n];
    }
    if dst.len() == 2 && padded_src[0] == 1 && padded_src[1] == dst[1] {
        let mut out = Vec::with_capacity(n);
        for _ in 0..dst[0] {
            out.extend_from_slice(src);
        }
        return out;
    }
    if dst.len() == 2 && padded_src[1] == 1 && padded_src[0] == dst[0] {
        let mut out = Vec::with_capacity(n);
        for &v in src {
            out.extend(std::iter::repeat_n(v, dst[1]));
        }
        return out;
    }
    broadcast_index_map(padded_src, dst)
        .into_iter()
        .map(|i| src[i])
        .collect()
}

pub(crate) fn sum_to_kernel(src: &[f64], src_shape: &[usize], padded_dst: &[usize]) -> Vec<f64> {
    let m: usize = padded_dst.iter().product();
    if m == 1 {
        return vec![src.iter().sum()];
    }
    let mut out = vec![0.0; m];
    if src_shape.len() == 2 && padded_dst[0] == 1 && padded_dst[1] == src_shape[1] {
        for row in src.chunks_exact(src_shape[1]) {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        return out;
    }
    if src_shape.len() == 2 && padded_dst[1] == 1 && padded_dst[0] == src_shape[0] {
        for (o, row) in out.iter_mut().zip(src.chunks_exact(src_shape[1])) {
            *o = row.iter().sum();
        }
        return out;
    }
    for (v, i) in src.iter().zip(broadcast_index_map(padded_dst, src_shape)) {
        out[i] += v;
    }
    out
}

pub(crate) fn softplus_scalar(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub(crate) fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
