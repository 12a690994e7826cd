use crate::error::{Error, Result};
use crate::numerics::{ParamTree, Scalar, Tensor};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Global L2 norm across all gradient leaves.
pub fn global_norm<T: Scalar>(grads: &[Tensor<T>]) -> f64 {
    grads
        .iter()
        .flat_map(|g| g.data())
        .map(|x| x.as_f64() * x.as_f64())
        .sum::<f64>()
        .sqrt()
}

/// Rescale so the global norm is at most `max_norm`; returns the norm before clipping.
pub fn clip_gradients<T: Scalar>(grads: &mut [Tensor<T>], max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm {
        let s = T::from_f64_lossy(max_norm / norm);
        for g in grads.iter_mut() {
            g.scale_assign(s);
        }
    }
    norm
}

/// Adam with decoupled weight decay, applied only to decay-eligible leaves.
#[derive(Clone, Debug)]
pub struct AdamW<T> {
    pub step: u64,
    pub first: Vec<Tensor<T>>,
    pub second: Vec<Tensor<T>>,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(params: &ParamTree<T>) -> AdamW<T> {
        let zeros = || {
            params
                .leaves()
                .iter()
                .map(|l| Tensor::zeros(l.tensor.rows(), l.tensor.cols()))
                .collect()
        };
        AdamW {
            step: 0,
            first: zeros(),
            second: zeros(),
        }
    }

    pub fn update(&mut self, params: &mut ParamTree<T>, grads: &[Tensor<T>], lr: f64, weight_decay: f64) -> Result<()> {
        if grads.len() != params.len() || self.first.len() != params.len() {
            return Err(Error::shape("adamw", format!("{} grads for {} leaves", grads.len(), params.len())));
        }
        if let Some((leaf, _)) = params.leaves().iter().zip(grads).find(|(_, g)| !g.all_finite()) {
            return Err(Error::Numerical(format!("non-finite gradient for {}", leaf.name)));
        }
        self.step += 1;
        let c1 = 1.0 - ADAM_BETA1.powf(self.step as f64);
        let c2 = 1.0 - ADAM_BETA2.powf(self.step as f64);
        for (i, leaf) in params.leaves_mut().iter_mut().enumerate() {
            if leaf.tensor.shape() != grads[i].shape() {
                return Err(Error::shape("adamw", format!("leaf {} vs gradient {:?}", leaf.name, grads[i].shape())));
            }
            let decay = if leaf.decay_eligible { 1.0 - lr * weight_decay } else { 1.0 };
            let (m, v) = (self.first[i].data_mut(), self.second[i].data_mut());
            for (j, p) in leaf.tensor.data_mut().iter_mut().enumerate() {
                let g = grads[i].data()[j].as_f64();
                let mj = ADAM_BETA1 * m[j].as_f64() + (1.0 - ADAM_BETA1) * g;
                let vj = ADAM_BETA2 * v[j].as_f64() + (1.0 - ADAM_BETA2) * g * g;
                m[j] = T::from_f64_lossy(mj);
                v[j] = T::from_f64_lossy(vj);
                let step = lr * (mj / c1) / ((vj / c2).sqrt() + ADAM_EPS);
                *p = T::from_f64_lossy(p.as_f64() * decay - step);
            }
        }
        Ok(())
    }
}
