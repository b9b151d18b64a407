use crate::scalar::{lit, Scalar};

use super::mlp::{Mlp, MlpGrads};

pub const DEFAULT_LR: f64 = 0.001;

#[derive(Clone, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: DEFAULT_LR,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam moments, one buffer per parameter tensor in [`Mlp::param_slices`] order.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub first_moment: Vec<Vec<T>>,
    pub second_moment: Vec<Vec<T>>,
    pub step_count: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(model: &Mlp<T>, config: AdamConfig) -> Self {
        let zeros: Vec<Vec<T>> = model.param_slices().iter().map(|s| vec![T::zero(); s.len()]).collect();
        AdamState {
            config,
            first_moment: zeros.clone(),
            second_moment: zeros,
            step_count: 0,
        }
    }

    /// Bias-corrected Adam update on flat parameter buffers.
    pub fn step_slices(&mut self, params: Vec<&mut [T]>, grads: Vec<&[T]>) {
        assert_eq!(params.len(), grads.len(), "parameter/gradient tensor count");
        assert_eq!(params.len(), self.first_moment.len(), "optimizer built for another model");
        self.step_count += 1;
        let t = self.step_count as i32;
        let b1 = self.config.beta1;
        let b2 = self.config.beta2;
        let lr = lit::<T>(self.config.lr);
        let eps = lit::<T>(self.config.epsilon);
        let c1 = lit::<T>(1.0 - b1.powi(t));
        let c2 = lit::<T>(1.0 - b2.powi(t));
        let (b1, b2) = (lit::<T>(b1), lit::<T>(b2));
        let one = T::one();
        for (((p, g), m), v) in params
            .into_iter()
            .zip(grads)
            .zip(&mut self.first_moment)
            .zip(&mut self.second_moment)
        {
            assert_eq!(p.len(), g.len(), "gradient shaped unlike its parameter");
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (one - b1) * g[i];
                v[i] = b2 * v[i] + (one - b2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] = p[i] - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

pub fn adam_step<T: Scalar>(model: &mut Mlp<T>, grads: &MlpGrads<T>, state: &mut AdamState<T>) {
    state.step_slices(model.param_slices_mut(), grads.slices());
}
