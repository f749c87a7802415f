//! Feedforward networks, the Adadelta optimizer with decoupled weight
//! decay, Adam, stochastic weight averaging and the checkpoint format.

mod adadelta;
mod adam;
mod checkpoint;
mod mlp;
mod swa;

pub use adadelta::{adadelta_step, AdadeltaState};
pub use adam::{adam_step, AdamState};
pub use checkpoint::{Checkpoint, NamedParam, CHECKPOINT_VERSION};
pub use mlp::{Linear, Mlp};
pub use swa::SwaAccumulator;

use crate::autodiff::{Tape, Tensor};

/// A named, ordered collection of parameter tensors.
///
/// `params` and `params_mut` must visit the same tensors in the same order.
pub trait Parameterized: Clone {
    fn params(&self) -> Vec<(String, &Tensor)>;
    fn params_mut(&mut self) -> Vec<&mut Tensor>;

    /// A copy whose parameters are fresh leaves on `tape`.
    fn attach(&self, tape: &Tape) -> Self {
        let mut out = self.clone();
        for p in out.params_mut() {
            *p = tape.leaf(p);
        }
        out
    }

    /// A copy with every parameter detached from its tape.
    fn detached(&self) -> Self {
        let mut out = self.clone();
        for p in out.params_mut() {
            *p = p.detach();
        }
        out
    }

    /// A copy whose parameters are replaced, in order, by `tensors`.
    fn with_tensors(&self, tensors: &[Tensor]) -> crate::Result<Self> {
        let mut out = self.clone();
        let mut ps = out.params_mut();
        if ps.len() != tensors.len() {
            return Err(crate::Error::InvalidArgument(format!(
                "expected {} parameter tensors, got {}",
                ps.len(),
                tensors.len()
            )));
        }
        for (p, t) in ps.iter_mut().zip(tensors) {
            if p.shape() != t.shape() {
                return Err(crate::Error::InvalidArgument(format!(
                    "parameter of shape {:?} cannot take {:?}",
                    p.shape(),
                    t.shape()
                )));
            }
            **p = t.clone();
        }
        drop(ps);
        Ok(out)
    }

    fn param_tensors(&self) -> Vec<&Tensor> {
        self.params().into_iter().map(|(_, t)| t).collect()
    }

    fn param_count(&self) -> usize {
        self.params().iter().map(|(_, t)| t.numel()).sum()
    }

    fn flat_values(&self) -> Vec<Vec<f64>> {
        self.params().iter().map(|(_, t)| t.to_vec()).collect()
    }

    /// Overwrites parameter values in order; shapes must already agree.
    fn load_flat(&mut self, values: &[Vec<f64>]) -> crate::Result<()> {
        let mut ps = self.params_mut();
        if ps.len() != values.len() {
            return Err(crate::Error::InvalidArgument(format!(
                "expected {} parameter tensors, got {}",
                ps.len(),
                values.len()
            )));
        }
        for (p, v) in ps.iter_mut().zip(values) {
            if p.numel() != v.len() {
                return Err(crate::Error::InvalidArgument(format!(
                    "parameter of shape {:?} cannot take {} values",
                    p.shape(),
                    v.len()
                )));
            }
            p.data_mut().copy_from_slice(v);
        }
        Ok(())
    }
}

pub(crate) fn prefixed<'a>(prefix: &str, items: Vec<(String, &'a Tensor)>) -> Vec<(String, &'a Tensor)> {
    items
        .into_iter()
        .map(|(n, t)| (format!("{prefix}.{n}"), t))
        .collect()
}
