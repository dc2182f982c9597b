//! Mini-batch SGD with momentum over the detector's named parameters.

use std::collections::HashMap;

use crate::detector::DetectorState;
use crate::tensor::{Scalar, Tensor};

/// Velocity buffers aligned with [`DetectorState::params`] order.
#[derive(Clone, Debug)]
pub struct SgdState<T: Scalar> {
    pub velocities: Vec<(String, Tensor<T>)>,
}

impl<T: Scalar> SgdState<T> {
    pub fn new(model: &DetectorState<T>) -> Self {
        SgdState {
            velocities: model
                .params()
                .into_iter()
                .map(|(name, t)| (name, Tensor::zeros(t.shape())))
                .collect(),
        }
    }

    /// v <- momentum * v + g;  p <- p - lr * v.
    /// Parameters without a gradient this step still decay their velocity.
    pub fn step(
        &mut self,
        model: &mut DetectorState<T>,
        grads: &HashMap<String, Tensor<T>>,
        learning_rate: f64,
        momentum: f64,
    ) {
        let lr = T::from_f64(learning_rate);
        let mom = T::from_f64(momentum);
        for ((vel_name, vel), (name, param)) in
            self.velocities.iter_mut().zip(model.params_mut())
        {
            debug_assert_eq!(vel_name, &name, "optimizer/parameter order drift");
            match grads.get(&name) {
                Some(g) => {
                    for (v, &gi) in vel.data_mut().iter_mut().zip(g.data().iter()) {
                        *v = mom * *v + gi;
                    }
                }
                None => {
                    for v in vel.data_mut() {
                        *v = mom * *v;
                    }
                }
            }
            param.add_scaled(vel, -lr);
        }
    }
}
