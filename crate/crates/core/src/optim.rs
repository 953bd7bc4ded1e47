//! Adam with decoupled weight decay.

use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub step: u64,
    pub first_moment: Vec<Tensor>,
    pub second_moment: Vec<Tensor>,
}

impl AdamW {
    pub fn new(learning_rate: f64, beta1: f64, beta2: f64, eps: f64, weight_decay: f64) -> Self {
        Self {
            learning_rate,
            beta1,
            beta2,
            eps,
            weight_decay,
            step: 0,
            first_moment: Vec::new(),
            second_moment: Vec::new(),
        }
    }

    /// Applies one update. `params` and `grads` must list tensors in the same
    /// order on every call.
    pub fn update(&mut self, params: Vec<&mut Tensor>, grads: &[&Tensor]) {
        assert_eq!(params.len(), grads.len(), "parameter/gradient count mismatch");
        if self.first_moment.is_empty() {
            self.first_moment = grads.iter().map(|g| g.zeros_like()).collect();
            self.second_moment = grads.iter().map(|g| g.zeros_like()).collect();
        }
        self.step += 1;
        let t = self.step as i32;
        let bias1 = 1.0 - self.beta1.powi(t);
        let bias2 = 1.0 - self.beta2.powi(t);
        for (((p, g), m), v) in params
            .into_iter()
            .zip(grads)
            .zip(&mut self.first_moment)
            .zip(&mut self.second_moment)
        {
            for (((pv, &gv), mv), vv) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mv = self.beta1 * *mv + (1.0 - self.beta1) * gv;
                *vv = self.beta2 * *vv + (1.0 - self.beta2) * gv * gv;
                let m_hat = *mv / bias1;
                let v_hat = *vv / bias2;
                *pv -= self.learning_rate * (m_hat / (v_hat.sqrt() + self.eps) + self.weight_decay * *pv);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = Tensor::from_vec(&[2], vec![1.0, -1.0]).unwrap();
        let g = Tensor::from_vec(&[2], vec![0.5, -2.0]).unwrap();
        let mut opt = AdamW::new(0.1, 0.9, 0.999, 1e-8, 0.0);
        opt.update(vec![&mut p], &[&g]);
        assert!((p.data()[0] - 0.9).abs() < 1e-6);
        assert!((p.data()[1] + 0.9).abs() < 1e-6);
    }

    #[test]
    fn decoupled_decay_shrinks_without_gradient() {
        let mut p = Tensor::from_vec(&[1], vec![2.0]).unwrap();
        let g = Tensor::from_vec(&[1], vec![0.0]).unwrap();
        let mut opt = AdamW::new(0.1, 0.9, 0.999, 1e-8, 0.5);
        opt.update(vec![&mut p], &[&g]);
        assert!((p.data()[0] - (2.0 - 0.1 * 0.5 * 2.0)).abs() < 1e-12);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut p = Tensor::from_vec(&[1], vec![3.0]).unwrap();
        let mut opt = AdamW::new(0.05, 0.9, 0.999, 1e-8, 0.0);
        for _ in 0..500 {
            let g = Tensor::from_vec(&[1], vec![2.0 * (p.data()[0] - 1.0)]).unwrap();
            opt.update(vec![&mut p], &[&g]);
        }
        assert!((p.data()[0] - 1.0).abs() < 1e-2);
    }
}
