//! Adam with bias correction, in the step-size form: the learning rate is
//! rescaled by `sqrt(1 - beta2^t) / (1 - beta1^t)` and epsilon is applied to
//! the uncorrected second moment.

use crate::error::{Error, Result};
use crate::params::ParamSet;
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamHyper {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper { learning_rate: 1e-3, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

impl AdamHyper {
    pub fn with_lr(learning_rate: f64) -> Self {
        AdamHyper { learning_rate, ..Default::default() }
    }
}

#[derive(Clone, Debug)]
pub struct AdamState<T> {
    pub step_count: u64,
    pub first_moment: ParamSet<T>,
    pub second_moment: ParamSet<T>,
    pub hyper: AdamHyper,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &ParamSet<T>, hyper: AdamHyper) -> Self {
        let mut first = ParamSet::new();
        let mut second = ParamSet::new();
        for (name, tensor) in params.iter() {
            first.insert(name, Tensor::zeros(tensor.shape()));
            second.insert(name, Tensor::zeros(tensor.shape()));
        }
        AdamState { step_count: 0, first_moment: first, second_moment: second, hyper }
    }

    /// One optimizer step over all parameters. Rejects non-finite gradients
    /// before touching anything, so parameters stay unchanged on error.
    ///
    /// Parameters whose gradient is identically zero are skipped entirely
    /// (no update, no moment decay). Task heads off the sampled task's path
    /// therefore stay bitwise-unchanged for that step.
    pub fn step(&mut self, params: &mut ParamSet<T>, grads: &ParamSet<T>) -> Result<()> {
        for (name, param) in params.iter() {
            let g = grads.get(name)?;
            if g.shape() != param.shape() {
                return Err(Error::shape(
                    "adam_step",
                    format!("grad {:?} vs param {:?} for {name:?}", g.shape(), param.shape()),
                ));
            }
            if !g.is_finite() {
                return Err(Error::Numeric {
                    op: "adam_step".into(),
                    detail: Some(format!("non-finite gradient for {name:?}")),
                });
            }
        }

        self.step_count += 1;
        let t = self.step_count as i32;
        let h = self.hyper;
        let beta1 = T::from_f64(h.beta1);
        let beta2 = T::from_f64(h.beta2);
        let one = T::one();
        let eps = T::from_f64(h.epsilon);
        let step_size =
            T::from_f64(h.learning_rate * (1.0 - h.beta2.powi(t)).sqrt() / (1.0 - h.beta1.powi(t)));

        let names: Vec<String> = params.names().map(String::from).collect();
        for name in &names {
            let g = grads.get(name)?.clone();
            if g.data().iter().all(|&v| v == T::zero()) {
                continue;
            }
            let m = self.first_moment.get_mut(name)?;
            for (mv, &gv) in m.data_mut().iter_mut().zip(g.data()) {
                *mv = beta1 * *mv + (one - beta1) * gv;
            }
            let m = m.clone();
            let v = self.second_moment.get_mut(name)?;
            for (vv, &gv) in v.data_mut().iter_mut().zip(g.data()) {
                *vv = beta2 * *vv + (one - beta2) * gv * gv;
            }
            let v = v.clone();
            let p = params.get_mut(name)?;
            for i in 0..p.len() {
                let update = step_size * m.data()[i] / (v.data()[i].sqrt() + eps);
                p.data_mut()[i] = p.data()[i] - update;
            }
        }
        Ok(())
    }
}
