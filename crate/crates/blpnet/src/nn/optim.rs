//! First-order optimizers over the flat parameter list of a network:
//! SGD with classical momentum and Adam with bias correction.

use super::exec::Gradients;
use crate::tensor::Tensor;

/// Optimizer state. Slot buffers are allocated lazily on the first step so an
/// optimizer can be constructed before the network it will drive.
#[derive(Debug, Clone)]
pub enum Optimizer {
    Sgd {
        lr: f32,
        momentum: f32,
        velocity: Vec<Vec<f32>>,
    },
    Adam {
        lr: f32,
        beta1: f32,
        beta2: f32,
        eps: f32,
        m: Vec<Vec<f32>>,
        v: Vec<Vec<f32>>,
        t: u64,
    },
}

impl Optimizer {
    pub fn sgd(lr: f32, momentum: f32) -> Self {
        Optimizer::Sgd {
            lr,
            momentum,
            velocity: Vec::new(),
        }
    }

    pub fn adam(lr: f32) -> Self {
        Self::adam_with(lr, 0.9, 0.999, 1e-8)
    }

    pub fn adam_with(lr: f32, beta1: f32, beta2: f32, eps: f32) -> Self {
        Optimizer::Adam {
            lr,
            beta1,
            beta2,
            eps,
            m: Vec::new(),
            v: Vec::new(),
            t: 0,
        }
    }

    pub fn lr(&self) -> f32 {
        match self {
            Optimizer::Sgd { lr, .. } | Optimizer::Adam { lr, .. } => *lr,
        }
    }

    pub fn set_lr(&mut self, new_lr: f32) {
        match self {
            Optimizer::Sgd { lr, .. } | Optimizer::Adam { lr, .. } => *lr = new_lr,
        }
    }

    /// Apply one update in place. `params` and `grads` must be aligned (same
    /// order and shapes), as produced by `Network::param_tensors_mut` and
    /// `Network::backward`.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &Gradients) {
        assert_eq!(params.len(), grads.0.len(), "param/grad arity mismatch");
        match self {
            Optimizer::Sgd { lr, momentum, velocity } => {
                if velocity.is_empty() {
                    *velocity = params.iter().map(|p| vec![0.0; p.len()]).collect();
                }
                for ((p, g), vel) in params.iter_mut().zip(&grads.0).zip(velocity.iter_mut()) {
                    for ((pv, &gv), vv) in
                        p.data_mut().iter_mut().zip(g.data()).zip(vel.iter_mut())
                    {
                        *vv = *momentum * *vv - *lr * gv;
                        *pv += *vv;
                    }
                }
            }
            Optimizer::Adam { lr, beta1, beta2, eps, m, v, t } => {
                if m.is_empty() {
                    *m = params.iter().map(|p| vec![0.0; p.len()]).collect();
                    *v = params.iter().map(|p| vec![0.0; p.len()]).collect();
                }
                *t += 1;
                let bc1 = 1.0 - beta1.powi(*t as i32);
                let bc2 = 1.0 - beta2.powi(*t as i32);
                for (i, (p, g)) in params.iter_mut().zip(&grads.0).enumerate() {
                    let mi = &mut m[i];
                    let vi = &mut v[i];
                    for (j, (pv, &gv)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                        mi[j] = *beta1 * mi[j] + (1.0 - *beta1) * gv;
                        vi[j] = *beta2 * vi[j] + (1.0 - *beta2) * gv * gv;
                        let mhat = mi[j] / bc1;
                        let vhat = vi[j] / bc2;
                        *pv -= *lr * mhat / (vhat.sqrt() + *eps);
                    }
                }
            }
        }
    }
}
