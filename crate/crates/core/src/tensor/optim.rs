use super::{ParameterStore, Real, Tensor};

/// Rescales all gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm measured before clipping.
pub fn clip_gradients<T: Real>(store: &mut ParameterStore<T>, max_norm: T) -> T {
    let norm = store.global_grad_norm();
    if norm > max_norm {
        let factor = max_norm / norm;
        for id in store.ids().collect::<Vec<_>>() {
            for g in store.grad_mut(id).data_mut() {
                *g = *g * factor;
            }
        }
    }
    norm
}

/// Adam moments and hyperparameters for one parameter store.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    step: u64,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T: Real> AdamState<T> {
    pub fn new(store: &ParameterStore<T>, lr: T) -> Self {
        Self::with_betas(store, lr, T::lit(0.9), T::lit(0.999), T::lit(1e-8))
    }

    pub fn with_betas(store: &ParameterStore<T>, lr: T, beta1: T, beta2: T, eps: T) -> Self {
        let zeros = |store: &ParameterStore<T>| {
            store
                .ids()
                .map(|id| Tensor::zeros(store.value(id).shape().to_vec()))
                .collect::<Vec<_>>()
        };
        Self {
            lr,
            beta1,
            beta2,
            eps,
            step: 0,
            m: zeros(store),
            v: zeros(store),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self, idx: usize) -> &Tensor<T> {
        &self.m[idx]
    }

    pub fn second_moment(&self, idx: usize) -> &Tensor<T> {
        &self.v[idx]
    }

    /// One bias-corrected Adam update of every parameter; gradients are
    /// zeroed afterwards.
    pub fn step(&mut self, store: &mut ParameterStore<T>) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = T::one() - self.beta1.powi(t);
        let bc2 = T::one() - self.beta2.powi(t);
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let k = id.index();
            let grad = store.grad(id).data().to_vec();
            let m = self.m[k].data_mut();
            let v = self.v[k].data_mut();
            let value = store.value_mut(id).data_mut();
            for i in 0..grad.len() {
                let g = grad[i];
                m[i] = self.beta1 * m[i] + (T::one() - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (T::one() - self.beta2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                value[i] = value[i] - self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        store.zero_grads();
    }
}
