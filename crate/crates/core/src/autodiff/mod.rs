//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! Operations on tape-attached tensors append nodes to a shared [`Tape`];
//! [`gradient`] replays the tape backward. Backward rules are expressed in
//! the same recordable primitives, so with `create_graph` the gradient is
//! itself differentiable. The gradient penalty relies on this.
//!
//! Elementwise ops only broadcast a one-element operand against a tensor.
//! Anything else must go through [`Tensor::broadcast_to`] explicitly.

mod backward;
mod ops;
mod tape;
mod tensor;

pub use backward::{gradient, leaves};
pub use tape::Tape;
pub use tensor::Tensor;

#[cfg(test)]
pub(crate) use backward::FLIP_TANH_BACKWARD;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn tanh_of_zero() {
        assert_eq!(t(&[1], &[0.0]).tanh().data(), &[0.0]);
    }

    #[test]
    fn matmul_shape_contract() {
        let a = t(&[2, 3], &[1., 2., 3., 4., 5., 6.]);
        let b = t(&[3, 1], &[1., 0., -1.]);
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.shape(), &[2, 1]);
        assert_eq!(c.data(), &[-2.0, -2.0]);
    }

    #[test]
    fn softplus_of_zero_is_ln2() {
        let v = t(&[1], &[0.0]).softplus().data()[0];
        assert!((v - 0.6931471805599453).abs() < 1e-15);
        // stable at the tails
        let big = t(&[2], &[800.0, -800.0]).softplus();
        assert_eq!(big.data()[0], 800.0);
        assert!(big.data()[1] >= 0.0 && big.data()[1] < 1e-300);
    }

    #[test]
    fn shape_mismatch_names_op_and_shapes() {
        let err = t(&[2], &[1., 2.]).add(&t(&[3], &[1., 2., 3.])).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("add") && msg.contains("[2]") && msg.contains("[3]"), "{msg}");
        let err = t(&[2, 3], &[0.; 6]).matmul(&t(&[2, 3], &[0.; 6])).unwrap_err();
        assert!(matches!(err, Error::Shape { op: "matmul", .. }));
    }

    #[test]
    fn scalar_broadcasts_but_vectors_do_not() {
        let x = t(&[3], &[1., 2., 3.]);
        let y = x.mul(&Tensor::scalar(2.0)).unwrap();
        assert_eq!(y.data(), &[2., 4., 6.]);
        assert!(t(&[1, 3], &[1., 2., 3.]).add(&t(&[2, 3], &[0.; 6])).is_err());
    }

    #[test]
    fn gradient_of_sum_is_ones() {
        let tape = Tape::new();
        let x = tape.leaf(&t(&[2, 2], &[0.3, -1.0, 2.0, 5.0]));
        let g = gradient(&x.sum(), &[&x], false).unwrap();
        assert_eq!(g[0].shape(), &[2, 2]);
        assert_eq!(g[0].data(), &[1.0; 4]);
    }

    #[test]
    fn gradient_of_tanh_matches_finite_difference() {
        let tape = Tape::new();
        let x = tape.leaf(&t(&[1], &[0.5]));
        let g = gradient(&x.tanh().sum(), &[&x], false).unwrap()[0].data()[0];
        let h = 1e-5;
        let fd = ((0.5f64 + h).tanh() - (0.5f64 - h).tanh()) / (2.0 * h);
        assert!((g - fd).abs() < 1e-9);
        assert!((g - 0.786448).abs() < 1e-6);
    }

    #[test]
    fn double_backward_of_gradient_norm() {
        // objective ||d/dx (w . x)||^2 = ||w||^2, so d/dw = 2w
        let tape = Tape::new();
        let w = tape.leaf(&t(&[3, 1], &[0.5, -1.5, 2.0]));
        let x = tape.leaf(&t(&[1, 3], &[0.1, 0.2, 0.3]));
        let score = x.matmul(&w).unwrap().sum();
        let gx = gradient(&score, &[&x], true).unwrap().remove(0);
        assert!(gx.is_attached());
        let obj = gx.square().sum();
        let gw = gradient(&obj, &[&w], false).unwrap().remove(0);
        assert_eq!(gw.data(), &[1.0, -3.0, 4.0]);
    }

    #[test]
    fn gradient_errors() {
        let tape = Tape::new();
        let x = tape.leaf(&t(&[2], &[1., 2.]));
        assert!(matches!(gradient(&x, &[&x], false), Err(Error::Autodiff(_))));
        let c = t(&[2], &[1., 2.]);
        assert!(gradient(&x.sum(), &[&c], false).is_err());
        assert!(gradient(&c.sum(), &[&x], false).is_err());
        let other = Tape::new().leaf(&c);
        assert!(gradient(&x.sum(), &[&other], false).is_err());
        assert!(x.add(&other).is_err());
    }

    #[test]
    fn constants_get_no_contribution() {
        let tape = Tape::new();
        let x = tape.leaf(&t(&[2], &[1., 2.]));
        let c = t(&[2], &[10., 20.]);
        let y = x.mul(&c).unwrap().add(&c).unwrap().sum();
        let g = gradient(&y, &[&x], false).unwrap();
        assert_eq!(g[0].data(), &[10., 20.]);
        // a leaf that the output never touches gets zeros
        let unused = tape.leaf(&t(&[3], &[1., 1., 1.]));
        let g = gradient(&y, &[&unused], false).unwrap();
        assert_eq!(g[0].data(), &[0.0; 3]);
    }

    #[test]
    fn shared_subexpression_visited_once() {
        // y = s + s with s = x^2 -> dy/dx = 4x
        let tape = Tape::new();
        let x = tape.leaf(&t(&[1], &[3.0]));
        let s = x.square();
        let y = s.add(&s).unwrap().sum();
        assert_eq!(gradient(&y, &[&x], false).unwrap()[0].data(), &[12.0]);
    }

    #[test]
    fn batched_products() {
        // 2 rows of 2x3 matrices
        let s = t(&[2, 6], &[1., 2., 3., 4., 5., 6., 0., 1., 0., 1., 0., 1.]);
        let v = t(&[2, 3], &[1., 1., 1., 2., 3., 4.]);
        assert_eq!(s.bmv(&v, 2, 3).unwrap().data(), &[6., 15., 3., 6.]);
        let u = t(&[2, 2], &[1., -1., 2., 0.]);
        assert_eq!(s.bmtv(&u, 2, 3).unwrap().data(), &[-3., -3., -3., 0., 2., 0.]);
        let o = u.bouter(&v).unwrap();
        assert_eq!(o.shape(), &[2, 6]);
        assert_eq!(&o.data()[..6], &[1., 1., 1., -1., -1., -1.]);
    }

    #[test]
    fn slice_concat_broadcast_reshape() {
        let a = t(&[2, 3], &[1., 2., 3., 4., 5., 6.]);
        assert_eq!(a.slice(1, 3).unwrap().data(), &[2., 3., 5., 6.]);
        let c = Tensor::concat(&[&a.slice(0, 1).unwrap(), &a.slice(1, 3).unwrap()]).unwrap();
        assert_eq!(c.data(), a.data());
        let row = t(&[1, 3], &[1., 2., 3.]);
        let b = row.broadcast_to(&[2, 3]).unwrap();
        assert_eq!(b.data(), &[1., 2., 3., 1., 2., 3.]);
        assert_eq!(b.sum_to(&[1, 3]).unwrap().data(), &[2., 4., 6.]);
        assert_eq!(a.sum_to(&[2, 1]).unwrap().data(), &[6., 15.]);
        assert!(a.reshape(&[4]).is_err());
        assert_eq!(a.reshape(&[3, 2]).unwrap().shape(), &[3, 2]);
    }
}
