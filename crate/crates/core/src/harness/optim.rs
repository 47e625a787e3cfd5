//! Adam with coupled (L2) weight decay.

use crate::network::Network;
use crate::scalar::Scalar;

#[derive(Debug, Clone)]
pub struct Adam<S> {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<S>>,
    v: Vec<Vec<S>>,
}

impl<S: Scalar> Adam<S> {
    pub fn new(network: &Network<S>, lr: f64, weight_decay: f64) -> Self {
        let zeros: Vec<Vec<S>> = network.tensors().iter().map(|(_, _, t)| vec![S::zero(); t.len()]).collect();
        Adam { lr, weight_decay, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: zeros.clone(), v: zeros }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn update(&mut self, network: &mut Network<S>, grads: &Network<S>) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = S::from_f64_lossy(1.0 - self.beta1.powi(t));
        let c2 = S::from_f64_lossy(1.0 - self.beta2.powi(t));
        let (b1, b2) = (S::from_f64_lossy(self.beta1), S::from_f64_lossy(self.beta2));
        let (lr, wd, eps) = (S::from_f64_lossy(self.lr), S::from_f64_lossy(self.weight_decay), S::from_f64_lossy(self.eps));
        let one = S::one();
        let grad_tensors = grads.tensors();
        for (i, params) in network.tensors_mut().into_iter().enumerate() {
            let g = grad_tensors[i].2;
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for j in 0..params.len() {
                let gj = g[j] + wd * params[j];
                m[j] = b1 * m[j] + (one - b1) * gj;
                v[j] = b2 * v[j] + (one - b2) * gj * gj;
                let m_hat = m[j] / c1;
                let v_hat = v[j] / c2;
                params[j] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}
