use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Per-parameter Adadelta accumulators.
///
/// Weight decay is decoupled: it shrinks parameters directly and never
/// enters the squared-gradient average.
#[derive(Clone, Debug, PartialEq)]
pub struct AdadeltaState {
    /// Running average of squared gradients, `E[g^2]`.
    pub sq_grad: Vec<Vec<f64>>,
    /// Running average of squared updates, `E[dx^2]`.
    pub sq_update: Vec<Vec<f64>>,
    pub rho: f64,
    pub eps: f64,
}

impl AdadeltaState {
    pub fn new(sizes: &[usize], rho: f64, eps: f64) -> Self {
        AdadeltaState {
            sq_grad: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            sq_update: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            rho,
            eps,
        }
    }

    pub fn for_params(params: &[&Tensor], rho: f64, eps: f64) -> Self {
        let sizes: Vec<usize> = params.iter().map(|p| p.numel()).collect();
        Self::new(&sizes, rho, eps)
    }
}

/// One Adadelta update with decoupled weight decay:
///
/// ```text
/// E[g^2]  <- rho E[g^2] + (1 - rho) g^2
/// delta    = -sqrt(E[dx^2] + eps) / sqrt(E[g^2] + eps) * g
/// E[dx^2] <- rho E[dx^2] + (1 - rho) delta^2
/// param   <- param + lr delta - lr wd param
/// ```
pub fn adadelta_step(
    params: &mut [&mut Tensor],
    grads: &[Tensor],
    state: &mut AdadeltaState,
    lr: f64,
    weight_decay: f64,
) -> Result<()> {
    if !(lr > 0.0) {
        return Err(Error::InvalidArgument(format!("learning rate must be positive, got {lr}")));
    }
    if !(weight_decay >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "weight decay must be non-negative, got {weight_decay}"
        )));
    }
    if params.len() != grads.len() || params.len() != state.sq_grad.len() {
        return Err(Error::InvalidArgument(format!(
            "adadelta: {} params, {} grads, {} accumulators",
            params.len(),
            grads.len(),
            state.sq_grad.len()
        )));
    }
    let (rho, eps) = (state.rho, state.eps);
    for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        if p.numel() != g.numel() || state.sq_grad[k].len() != g.numel() {
            return Err(Error::shape(
                "adadelta_step",
                format!("param {k}: {:?} vs grad {:?}", p.shape(), g.shape()),
            ));
        }
        let sg = &mut state.sq_grad[k];
        let su = &mut state.sq_update[k];
        let values = p.data_mut();
        for i in 0..values.len() {
            let gi = g.data()[i];
            sg[i] = rho * sg[i] + (1.0 - rho) * gi * gi;
            let delta = -((su[i] + eps).sqrt() / (sg[i] + eps).sqrt()) * gi;
            su[i] = rho * su[i] + (1.0 - rho) * delta * delta;
            values[i] = values[i] + lr * delta - lr * weight_decay * values[i];
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn one(v: f64) -> Tensor {
        Tensor::new(vec![1], vec![v]).unwrap()
    }

    #[test]
    fn first_step_matches_hand_computation() {
        let mut p = one(0.0);
        let mut st = AdadeltaState::new(&[1], 0.9, 1e-6);
        adadelta_step(&mut [&mut p], &[one(1.0)], &mut st, 1.0, 0.0).unwrap();
        // -sqrt(1e-6 / (0.1 + 1e-6))
        assert!((p.data()[0] + 0.003_162_261_848_898_663).abs() < 1e-15);
        assert!((st.sq_grad[0][0] - 0.1).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap();
        let mut st = AdadeltaState::new(&[3], 0.9, 1e-6);
        adadelta_step(&mut [&mut p], &[Tensor::zeros(vec![3])], &mut st, 0.5, 0.0).unwrap();
        assert_eq!(p.data(), &[1.0, -2.0, 0.5]);
    }

    #[test]
    fn pure_decay() {
        let mut p = one(1.0);
        let mut st = AdadeltaState::new(&[1], 0.9, 1e-6);
        adadelta_step(&mut [&mut p], &[one(0.0)], &mut st, 1.0, 0.01).unwrap();
        assert!((p.data()[0] - 0.99).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_arguments() {
        let mut p = one(1.0);
        let mut st = AdadeltaState::new(&[1], 0.9, 1e-6);
        assert!(adadelta_step(&mut [&mut p], &[one(0.0)], &mut st, 0.0, 0.0).is_err());
        assert!(adadelta_step(&mut [&mut p], &[one(0.0)], &mut st, -1.0, 0.0).is_err());
        assert!(adadelta_step(&mut [&mut p], &[Tensor::zeros(vec![2])], &mut st, 1.0, 0.0).is_err());
        assert!(adadelta_step(&mut [&mut p], &[], &mut st, 1.0, 0.0).is_err());
    }

    proptest! {
        #[test]
        fn updates_stay_finite_and_bounded(
            exps in proptest::collection::vec(-12i32..=12, 1..40),
            signs in proptest::collection::vec(any::<bool>(), 40),
        ) {
            let mut p = one(0.0);
            let mut st = AdadeltaState::new(&[1], 0.9, 1e-6);
            for (k, e) in exps.iter().enumerate() {
                let g = if signs[k] { 10f64.powi(*e) } else { -(10f64.powi(*e)) };
                let before = p.data()[0];
                let bound = ((st.sq_update[0][0] + st.eps) / st.eps).sqrt();
                adadelta_step(&mut [&mut p], &[one(g)], &mut st, 1.0, 0.0).unwrap();
                let step = (p.data()[0] - before).abs();
                prop_assert!(p.data()[0].is_finite());
                prop_assert!(st.sq_grad[0][0].is_finite() && st.sq_grad[0][0] >= 0.0);
                prop_assert!(st.sq_update[0][0].is_finite() && st.sq_update[0][0] >= 0.0);
                prop_assert!(step <= bound * (1.0 + 1e-12), "step {step} > bound {bound}");
            }
        }
    }
}
