//! Adam with bias correction.

use crate::param::ParamStore;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Adam {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl Adam {
    pub fn new(lr: f32) -> Self {
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }

    /// Updates every parameter that carries a gradient, then clears the
    /// gradients. Parameters without one are left alone and counted.
    pub fn step(&self, store: &mut ParamStore) -> AdamReport {
        let mut report = AdamReport::default();
        for p in store.params_mut() {
            let Some(grad) = p.tensor.take_grad() else {
                report.skipped += 1;
                continue;
            };
            p.step_count += 1;
            let t = p.step_count as f64;
            let bc1 = (1.0 - libm::pow(self.beta1 as f64, t)) as f32;
            let bc2 = (1.0 - libm::pow(self.beta2 as f64, t)) as f32;
            let (b1, b2) = (self.beta1, self.beta2);
            let data = p.tensor.data_mut();
            for i in 0..data.len() {
                let g = grad[i];
                let m = b1 * p.adam_m[i] + (1.0 - b1) * g;
                let v = b2 * p.adam_v[i] + (1.0 - b2) * g * g;
                p.adam_m[i] = m;
                p.adam_v[i] = v;
                let m_hat = m / bc1;
                let v_hat = v / bc2;
                data[i] -= self.lr * m_hat / (libm::sqrtf(v_hat) + self.eps);
            }
            report.updated += 1;
        }
        report
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct AdamReport {
    pub updated: usize,
    /// Parameters skipped because backward never reached them.
    pub skipped: usize,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Shape, Tensor};

    fn store_with(values: &[f32], grad: Option<&[f32]>) -> ParamStore {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::from_vec(Shape::vector(values.len()), values.to_vec()).unwrap()).unwrap();
        if let Some(g) = grad {
            store.get_mut(id).tensor.accumulate_grad(g);
        }
        store
    }

    #[test]
    fn first_step_moves_by_lr_against_sign() {
        // t = 1: m̂ = g, v̂ = g², so the update is lr·g/(|g| + eps)
        let mut store = store_with(&[1.0, 1.0, 1.0], Some(&[0.5, -2.0, 1e-3]));
        let adam = Adam::new(0.01);
        adam.step(&mut store);
        let w = store.params()[0].tensor.data();
        for (wi, sign) in w.iter().zip([1.0f32, -1.0, 1.0]) {
            assert!((wi - (1.0 - 0.01 * sign)).abs() < 1e-6, "{wi}");
        }
        assert!(store.params()[0].tensor.grad().is_none());
        assert_eq!(store.params()[0].step_count, 1);
    }

    #[test]
    fn zero_grad_leaves_parameter() {
        let mut store = store_with(&[0.3, -0.4], Some(&[0.0, 0.0]));
        Adam::new(0.1).step(&mut store);
        assert_eq!(store.params()[0].tensor.data(), &[0.3, -0.4]);
    }

    #[test]
    fn two_steps_match_scalar_recurrence() {
        let (lr, b1, b2, eps) = (0.05f64, 0.9f64, 0.999f64, 1e-8f64);
        let g = 0.7f64;
        let (mut w, mut m, mut v) = (0.2f64, 0.0f64, 0.0f64);
        for t in 1..=2 {
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t));
            let vh = v / (1.0 - b2.powi(t));
            w -= lr * mh / (vh.sqrt() + eps);
        }
        let mut store = store_with(&[0.2], None);
        let adam = Adam::new(lr as f32);
        for _ in 0..2 {
            let p = store.get_mut(crate::param::ParamId(0));
            p.tensor.accumulate_grad(&[g as f32]);
            adam.step(&mut store);
        }
        let got = store.params()[0].tensor.data()[0] as f64;
        assert!((got - w).abs() < 1e-6, "{got} vs {w}");
    }

    #[test]
    fn missing_grad_is_counted() {
        let mut store = store_with(&[1.0], None);
        let report = Adam::new(0.1).step(&mut store);
        assert_eq!(report, AdamReport { updated: 0, skipped: 1 });
        assert_eq!(store.params()[0].step_count, 0);
    }
}
