use super::{Gradients, NumericsError, ParamStore, Tensor};

/// Adam moments and hyperparameters for one [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl AdamState {
    pub fn new(params: &ParamStore, lr: f64) -> Self {
        Self::with_hyper(params, lr, 0.9, 0.999, 1e-8)
    }

    pub fn with_hyper(params: &ParamStore, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros = || {
            params
                .iter()
                .map(|(_, _, t)| Tensor::zeros(t.shape()))
                .collect()
        };
        Self {
            lr,
            beta1,
            beta2,
            eps,
            step: 0,
            first: zeros(),
            second: zeros(),
        }
    }

    /// Number of updates applied so far.
    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self, index: usize) -> &Tensor {
        &self.first[index]
    }

    pub fn second_moment(&self, index: usize) -> &Tensor {
        &self.second[index]
    }

    /// Applies one bias-corrected update. A gradient containing NaN or
    /// infinity is rejected before anything is modified.
    pub fn update(
        &mut self,
        params: &mut ParamStore,
        grads: &Gradients,
    ) -> Result<(), NumericsError> {
        if grads.len() != params.len() || grads.len() != self.first.len() {
            return Err(NumericsError::Dimension {
                context: "adam update",
                left: vec![params.len()],
                right: vec![grads.len()],
            });
        }
        for (id, g) in grads.iter() {
            if g.shape() != params.get(id).shape() {
                return Err(NumericsError::Dimension {
                    context: "adam update",
                    left: params.get(id).shape().to_vec(),
                    right: g.shape().to_vec(),
                });
            }
        }
        if !grads.all_finite() {
            return Err(NumericsError::NonFinite("gradient passed to adam".into()));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (id, g) in grads.iter() {
            let i = id.index();
            let theta = params.get_mut(id).data_mut();
            let m = self.first[i].data_mut();
            let v = self.second[i].data_mut();
            for j in 0..theta.len() {
                let gj = g.data()[j];
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gj;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gj * gj;
                let m_hat = m[j] / c1;
                let v_hat = v[j] / c2;
                theta[j] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Free-function form of [`AdamState::update`].
pub fn adam_update(
    params: &mut ParamStore,
    grads: &Gradients,
    state: &mut AdamState,
) -> Result<(), NumericsError> {
    state.update(params, grads)
}
