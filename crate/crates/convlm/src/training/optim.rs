//! Optimizers over a [`ParamStore`]: plain SGD and an Adam-style adaptive
//! method with bias correction, plus global-norm gradient clipping.

use serde::{Deserialize, Serialize};

use crate::numerics::{ParamStore, Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

/// Optimizer state: first/second moments per parameter (Adam) and the
/// bias-correction step count.
#[derive(Debug, Clone)]
pub struct OptState<R: Real> {
    pub kind: OptimizerKind,
    pub step: u64,
    pub m: Vec<Tensor<R>>,
    pub v: Vec<Tensor<R>>,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl<R: Real> OptState<R> {
    pub fn new(kind: OptimizerKind, params: &ParamStore<R>) -> Self {
        let zeros: Vec<Tensor<R>> = params
            .iter()
            .map(|(_, p)| Tensor::zeros(p.tensor.shape().to_vec()))
            .collect();
        OptState {
            kind,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// Scale gradients in place so the global L2 norm is at most `clip`.
    /// Returns the pre-clip norm.
    pub fn clip_global_norm(grads: &mut [Option<Tensor<R>>], clip: f64) -> f64 {
        let mut sq = 0.0f64;
        for g in grads.iter().flatten() {
            for v in g.data() {
                let x = v.to_f64();
                sq += x * x;
            }
        }
        let norm = sq.sqrt();
        if clip > 0.0 && norm > clip {
            let factor = R::from_f64(clip / norm);
            for g in grads.iter_mut().flatten() {
                for v in g.data_mut() {
                    *v *= factor;
                }
            }
        }
        norm
    }

    /// Apply one update. `grads[i]` aligns with parameter `i`; `None` means
    /// zero gradient this step.
    pub fn apply(&mut self, params: &mut ParamStore<R>, grads: &[Option<Tensor<R>>], lr: f64) {
        self.step += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                let lr = R::from_f64(lr);
                for (i, g) in grads.iter().enumerate() {
                    let Some(g) = g else { continue };
                    let t = params.tensor_mut(crate::numerics::ParamId(i));
                    for (p, gv) in t.data_mut().iter_mut().zip(g.data()) {
                        *p -= lr * *gv;
                    }
                }
            }
            OptimizerKind::Adam => {
                let b1 = R::from_f64(BETA1);
                let b2 = R::from_f64(BETA2);
                let one_m_b1 = R::from_f64(1.0 - BETA1);
                let one_m_b2 = R::from_f64(1.0 - BETA2);
                let bc1 = R::from_f64(1.0 - BETA1.powi(self.step as i32));
                let bc2 = R::from_f64(1.0 - BETA2.powi(self.step as i32));
                let eps = R::from_f64(ADAM_EPS);
                let lr = R::from_f64(lr);
                for (i, g) in grads.iter().enumerate() {
                    let Some(g) = g else { continue };
                    let m = self.m[i].data_mut();
                    let v = self.v[i].data_mut();
                    let t = params.tensor_mut(crate::numerics::ParamId(i));
                    for ((p, gv), (mi, vi)) in t
                        .data_mut()
                        .iter_mut()
                        .zip(g.data())
                        .zip(m.iter_mut().zip(v.iter_mut()))
                    {
                        *mi = b1 * *mi + one_m_b1 * *gv;
                        *vi = b2 * *vi + one_m_b2 * *gv * *gv;
                        let mhat = *mi / bc1;
                        let vhat = *vi / bc2;
                        *p -= lr * mhat / (vhat.sqrt() + eps);
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.register("w", Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap())
            .unwrap();
        s
    }

    #[test]
    fn sgd_moves_against_gradient() {
        let mut params = store();
        let mut opt = OptState::new(OptimizerKind::Sgd, &params);
        let grads = vec![Some(Tensor::new(vec![3], vec![1.0, 0.0, -1.0]).unwrap())];
        opt.apply(&mut params, &grads, 0.1);
        let t = params.tensor(crate::numerics::ParamId(0));
        assert_eq!(t.data(), &[0.9, -2.0, 0.6]);
    }

    #[test]
    fn zero_learning_rate_is_bit_identity() {
        for kind in [OptimizerKind::Sgd, OptimizerKind::Adam] {
            let mut params = store();
            let before: Vec<u64> = params
                .tensor(crate::numerics::ParamId(0))
                .data()
                .iter()
                .map(|v| v.to_bits())
                .collect();
            let mut opt = OptState::new(kind, &params);
            let grads = vec![Some(Tensor::new(vec![3], vec![0.3, -0.7, 2.0]).unwrap())];
            opt.apply(&mut params, &grads, 0.0);
            let after: Vec<u64> = params
                .tensor(crate::numerics::ParamId(0))
                .data()
                .iter()
                .map(|v| v.to_bits())
                .collect();
            assert_eq!(before, after, "{kind:?}");
        }
    }

    #[test]
    fn clipping_caps_global_norm() {
        let mut grads = vec![Some(Tensor::new(vec![2], vec![3.0f64, 4.0]).unwrap())];
        let norm = OptState::clip_global_norm(&mut grads, 1.0);
        assert!((norm - 5.0).abs() < 1e-12);
        let g = grads[0].as_ref().unwrap();
        let new_norm = (g.data()[0].powi(2) + g.data()[1].powi(2)).sqrt();
        assert!((new_norm - 1.0).abs() < 1e-12);

        let mut small = vec![Some(Tensor::new(vec![2], vec![0.3f64, 0.4]).unwrap())];
        OptState::clip_global_norm(&mut small, 1.0);
        assert_eq!(small[0].as_ref().unwrap().data(), &[0.3, 0.4]);
    }

    #[test]
    fn adam_step_reduces_simple_quadratic() {
        // minimize f(w) = w^2 from w=1
        let mut params = ParamStore::<f64>::new();
        params.register("w", Tensor::new(vec![1], vec![1.0]).unwrap()).unwrap();
        let mut opt = OptState::new(OptimizerKind::Adam, &params);
        for _ in 0..300 {
            let w = params.tensor(crate::numerics::ParamId(0)).data()[0];
            let grads = vec![Some(Tensor::new(vec![1], vec![2.0 * w]).unwrap())];
            opt.apply(&mut params, &grads, 1e-2);
        }
        let w = params.tensor(crate::numerics::ParamId(0)).data()[0];
        assert!(w.abs() < 0.05, "w = {w}");
    }
}
