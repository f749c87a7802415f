//! Differentiable primitives. Every method records onto the tape of its
//! attached inputs; on constants it just computes.

use super::tape::{common_tape, record, Op};
use super::tensor::{
    broadcast_compatible, broadcast_kernel, matmul_kernel, sigmoid_scalar, softplus_scalar,
    sum_to_kernel, transpose_kernel, Tensor,
};
use crate::error::{Error, Result};

impl Tensor {
    fn unary(&self, op: Op, f: impl Fn(f64) -> f64) -> Tensor {
        let data = self.data.iter().map(|&v| f(v)).collect();
        record(
            self.tape().cloned(),
            op,
            &[self],
            self.shape.clone(),
            data,
        )
    }

    /// Elementwise binary op. A one-element operand is broadcast against
    /// the other through an explicit broadcast node; any other mismatch is
    /// an error.
    fn binary(
        &self,
        other: &Tensor,
        name: &'static str,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        if self.shape != other.shape {
            if other.is_scalar() && !self.is_scalar() {
                let b = other.broadcast_to(&self.shape)?;
                return self.binary(&b, name, op, f);
            }
            if self.is_scalar() && !other.is_scalar() {
                let a = self.broadcast_to(&other.shape)?;
                return a.binary(other, name, op, f);
            }
            if !(self.is_scalar() && other.is_scalar()) {
                return Err(Error::shape(
                    name,
                    format!("{:?} vs {:?}", self.shape, other.shape),
                ));
            }
            // Two one-element tensors of different rank: use the left shape.
            let b = other.reshape(&self.shape)?;
            return self.binary(&b, name, op, f);
        }
        let tape = common_tape(name, &[self, other])?;
        let data = self
            .data
            .iter()
            .zip(other.data.iter())
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(record(tape, op, &[self, other], self.shape.clone(), data))
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, "add", Op::Add, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, "sub", Op::Sub, |a, b| a - b)
    }

    /// Elementwise product.
    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, "mul", Op::Mul, |a, b| a * b)
    }

    pub fn div(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, "div", Op::Div, |a, b| a / b)
    }

    /// Multiplication by a constant.
    pub fn scale(&self, c: f64) -> Tensor {
        self.unary(Op::Scale(c), |v| c * v)
    }

    pub fn neg(&self) -> Tensor {
        self.scale(-1.0)
    }

    /// Adds a constant to every element.
    pub fn offset(&self, c: f64) -> Tensor {
        self.unary(Op::Offset(c), |v| v + c)
    }

    pub fn tanh(&self) -> Tensor {
        self.unary(Op::Tanh, f64::tanh)
    }

    /// `ln(1 + e^x)`, evaluated as `max(x, 0) + ln(1 + e^{-|x|})`.
    pub fn softplus(&self) -> Tensor {
        self.unary(Op::Softplus, softplus_scalar)
    }

    pub fn sigmoid(&self) -> Tensor {
        self.unary(Op::Sigmoid, sigmoid_scalar)
    }

    pub fn square(&self) -> Tensor {
        self.unary(Op::Square, |v| v * v)
    }

    pub fn sqrt(&self) -> Tensor {
        self.unary(Op::Sqrt, f64::sqrt)
    }

    /// Sum of all elements, as a rank-0 tensor.
    pub fn sum(&self) -> Tensor {
        let s = self.data.iter().sum();
        record(self.tape().cloned(), Op::Sum, &[self], Vec::new(), vec![s])
    }

    pub fn mean(&self) -> Result<Tensor> {
        if self.numel() == 0 {
            return Err(Error::shape("mean", "empty tensor"));
        }
        let m = self.data.iter().sum::<f64>() / self.numel() as f64;
        Ok(record(
            self.tape().cloned(),
            Op::Mean,
            &[self],
            Vec::new(),
            vec![m],
        ))
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        if self.rank() != 2 || other.rank() != 2 || self.shape[1] != other.shape[0] {
            return Err(Error::shape(
                "matmul",
                format!("{:?} x {:?}", self.shape, other.shape),
            ));
        }
        let tape = common_tape("matmul", &[self, other])?;
        let (m, k, n) = (self.shape[0], self.shape[1], other.shape[1]);
        let data = matmul_kernel(&self.data, &other.data, m, k, n);
        Ok(record(tape, Op::MatMul, &[self, other], vec![m, n], data))
    }

    pub fn transpose(&self) -> Result<Tensor> {
        if self.rank() != 2 {
            return Err(Error::shape(
                "transpose",
                format!("expected a matrix, got {:?}", self.shape),
            ));
        }
        let (m, n) = (self.shape[0], self.shape[1]);
        let data = transpose_kernel(&self.data, m, n);
        Ok(record(
            self.tape().cloned(),
            Op::Transpose,
            &[self],
            vec![n, m],
            data,
        ))
    }

    /// Concatenates along the last axis. All parts must agree on every
    /// other axis.
    pub fn concat(parts: &[&Tensor]) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("concat", "no inputs"))?;
        if first.rank() == 0 {
            return Err(Error::shape("concat", "cannot concatenate scalars"));
        }
        let lead = &first.shape[..first.rank() - 1];
        for p in parts {
            if p.rank() != first.rank() || &p.shape[..p.rank() - 1] != lead {
                return Err(Error::shape(
                    "concat",
                    format!("{:?} vs {:?}", first.shape, p.shape),
                ));
            }
        }
        let tape = common_tape("concat", parts)?;
        let widths: Vec<usize> = parts.iter().map(|p| p.cols()).collect();
        let total: usize = widths.iter().sum();
        let rows = first.numel() / first.cols().max(1);
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&p.data[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead.to_vec();
        shape.push(total);
        Ok(record(tape, Op::Concat(widths), parts, shape, data))
    }

    /// Columns `start..end` of the last axis.
    pub fn slice(&self, start: usize, end: usize) -> Result<Tensor> {
        if self.rank() == 0 || start > end || end > self.cols() {
            return Err(Error::shape(
                "slice",
                format!("range {start}..{end} on shape {:?}", self.shape),
            ));
        }
        let w = self.cols();
        let rows = self.numel() / w.max(1);
        let mut data = Vec::with_capacity(rows * (end - start));
        for r in 0..rows {
            data.extend_from_slice(&self.data[r * w + start..r * w + end]);
        }
        let mut shape = self.shape.clone();
        *shape.last_mut().unwrap() = end - start;
        Ok(record(
            self.tape().cloned(),
            Op::Slice(start, end),
            &[self],
            shape,
            data,
        ))
    }

    /// Repeats size-1 axes (and missing leading axes) up to `shape`.
    pub fn broadcast_to(&self, shape: &[usize]) -> Result<Tensor> {
        if self.shape == shape {
            return Ok(self.clone());
        }
        let padded = broadcast_compatible(&self.shape, shape).ok_or_else(|| {
            Error::shape("broadcast", format!("{:?} -> {:?}", self.shape, shape))
        })?;
        let data = broadcast_kernel(&self.data, &padded, shape);
        Ok(record(
            self.tape().cloned(),
            Op::Broadcast,
            &[self],
            shape.to_vec(),
            data,
        ))
    }

    /// Sums over the axes that `shape` broadcasts along; the adjoint of
    /// [`Tensor::broadcast_to`].
    pub fn sum_to(&self, shape: &[usize]) -> Result<Tensor> {
        if self.shape == shape {
            return Ok(self.clone());
        }
        let padded = broadcast_compatible(shape, &self.shape).ok_or_else(|| {
            Error::shape("sum_to", format!("{:?} -> {:?}", self.shape, shape))
        })?;
        let data = sum_to_kernel(&self.data, &self.shape, &padded);
        Ok(record(
            self.tape().cloned(),
            Op::SumTo,
            &[self],
            shape.to_vec(),
            data,
        ))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if shape.iter().product::<usize>() != self.numel() {
            return Err(Error::shape(
                "reshape",
                format!("{:?} -> {:?}", self.shape, shape),
            ));
        }
        if self.shape == shape {
            return Ok(self.clone());
        }
        Ok(record(
            self.tape().cloned(),
            Op::Reshape,
            &[self],
            shape.to_vec(),
            self.data.as_ref().clone(),
        ))
    }

    fn check_batched(&self, op: &'static str, other: &Tensor, mk: usize, v: usize) -> Result<()> {
        if self.rank() != 2
            || other.rank() != 2
            || self.shape[0] != other.shape[0]
            || self.shape[1] != mk
            || other.shape[1] != v
        {
            return Err(Error::shape(
                op,
                format!("{:?} with {:?}", self.shape, other.shape),
            ));
        }
        Ok(())
    }

    /// Row-wise matrix-vector product: each row of `self` is a row-major
    /// `m x k` matrix applied to the matching row of `v`.
    pub fn bmv(&self, v: &Tensor, m: usize, k: usize) -> Result<Tensor> {
        self.check_batched("bmv", v, m * k, k)?;
        let tape = common_tape("bmv", &[self, v])?;
        let b = self.shape[0];
        let mut out = vec![0.0; b * m];
        for r in 0..b {
            let s = &self.data[r * m * k..(r + 1) * m * k];
            let x = &v.data[r * k..(r + 1) * k];
            for i in 0..m {
                out[r * m + i] = s[i * k..(i + 1) * k]
                    .iter()
                    .zip(x)
                    .map(|(a, b)| a * b)
                    .sum();
            }
        }
        Ok(record(tape, Op::Bmv(m, k), &[self, v], vec![b, m], out))
    }

    /// Row-wise transposed matrix-vector product (`S^T u` per row).
    pub fn bmtv(&self, u: &Tensor, m: usize, k: usize) -> Result<Tensor> {
        self.check_batched("bmtv", u, m * k, m)?;
        let tape = common_tape("bmtv", &[self, u])?;
        let b = self.shape[0];
        let mut out = vec![0.0; b * k];
        for r in 0..b {
            let s = &self.data[r * m * k..(r + 1) * m * k];
            let o = &mut out[r * k..(r + 1) * k];
            for i in 0..m {
                let ui = u.data[r * m + i];
                for (oj, sij) in o.iter_mut().zip(&s[i * k..(i + 1) * k]) {
                    *oj += sij * ui;
                }
            }
        }
        Ok(record(tape, Op::Bmtv(m, k), &[self, u], vec![b, k], out))
    }

    /// Row-wise outer product, flattened row-major to `[B, m*k]`.
    pub fn bouter(&self, v: &Tensor) -> Result<Tensor> {
        if self.rank() != 2 || v.rank() != 2 || self.shape[0] != v.shape[0] {
            return Err(Error::shape(
                "bouter",
                format!("{:?} with {:?}", self.shape, v.shape),
            ));
        }
        let tape = common_tape("bouter", &[self, v])?;
        let (b, m, k) = (self.shape[0], self.shape[1], v.shape[1]);
        let mut out = Vec::with_capacity(b * m * k);
        for r in 0..b {
            let x = &v.data[r * k..(r + 1) * k];
            for i in 0..m {
                let ui = self.data[r * m + i];
                out.extend(x.iter().map(|xj| ui * xj));
            }
        }
        Ok(record(tape, Op::Bouter(m, k), &[self, v], vec![b, m * k], out))
    }
}
