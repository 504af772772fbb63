//! Adam with decoupled weight decay.

use super::model::{Gradients, ToyDualEncoder};

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct AdamW {
    lr: f64,
    weight_decay: f64,
    step: i32,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamW {
    pub fn new(model: &ToyDualEncoder, lr: f64, weight_decay: f64) -> Self {
        let n = model.param_count();
        Self { lr, weight_decay, step: 0, m: vec![0.0; n], v: vec![0.0; n] }
    }

    pub fn step(&mut self, model: &mut ToyDualEncoder, grads: &Gradients) {
        self.step += 1;
        let c1 = 1.0 - BETA1.powi(self.step);
        let c2 = 1.0 - BETA2.powi(self.step);
        let params = model.image_proj.iter_mut().chain(model.token_table.iter_mut());
        let g = grads.image_proj.iter().chain(&grads.token_table);
        for (((p, g), m), v) in params.zip(g).zip(&mut self.m).zip(&mut self.v) {
            *m = BETA1 * *m + (1.0 - BETA1) * g;
            *v = BETA2 * *v + (1.0 - BETA2) * g * g;
            let update = (*m / c1) / ((*v / c2).sqrt() + EPS);
            *p -= self.lr * (update + self.weight_decay * *p);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr_against_gradient() {
        let mut model = ToyDualEncoder::with_dims(2, 1, 1, 0);
        let before = model.clone();
        let mut opt = AdamW::new(&model, 0.01, 0.0);
        let grads = Gradients { image_proj: vec![3.0, -0.5], token_table: vec![0.0] };
        opt.step(&mut model, &grads);
        assert!((model.image_proj[0] - (before.image_proj[0] - 0.01)).abs() < 1e-9);
        assert!((model.image_proj[1] - (before.image_proj[1] + 0.01)).abs() < 1e-9);
        assert_eq!(model.token_table, before.token_table);
    }

    #[test]
    fn decay_is_decoupled() {
        let mut model = ToyDualEncoder::with_dims(1, 1, 1, 0);
        model.image_proj[0] = 2.0;
        let mut opt = AdamW::new(&model, 0.1, 0.5);
        let zero = Gradients::zeros_like(&model);
        opt.step(&mut model, &zero);
        assert!((model.image_proj[0] - (2.0 - 0.1 * 0.5 * 2.0)).abs() < 1e-15);
    }
}
