use super::params::{ParamId, ParamStore};
use super::tensor::{Real, Tensor};

/// Polynomial decay: `lr0 * (1 - t/total)^power`, clamped to zero past the end.
pub fn poly_lr(lr0: f64, step: usize, total: usize, power: f64) -> f64 {
    if total == 0 {
        return lr0;
    }
    let frac = (step as f64 / total as f64).min(1.0);
    lr0 * (1.0 - frac).powf(power)
}

/// Adam with bias correction.
pub struct Adam<F> {
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
    moments: Vec<Option<(Tensor<F>, Tensor<F>)>>,
}

impl<F: Real> Adam<F> {
    pub fn new(num_params: usize) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            moments: (0..num_params).map(|_| None).collect(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update with learning rate `lr` to every parameter that has a gradient.
    pub fn step<'a>(
        &mut self,
        store: &mut ParamStore<F>,
        grads: impl IntoIterator<Item = (ParamId, &'a Tensor<F>)>,
        lr: f64,
    ) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2) = (F::lit(self.beta1), F::lit(self.beta2));
        let (one_b1, one_b2) = (F::lit(1.0 - self.beta1), F::lit(1.0 - self.beta2));
        let step_size = F::lit(lr / bc1);
        let bc2_sqrt = F::lit(bc2.sqrt());
        let eps = F::lit(self.eps);
        for (id, g) in grads {
            if !store.is_trainable(id) {
                continue;
            }
            let idx = id.index();
            if idx >= self.moments.len() {
                self.moments.resize_with(idx + 1, || None);
            }
            let (m, v) = self.moments[idx]
                .get_or_insert_with(|| (Tensor::zeros(g.rows(), g.cols()), Tensor::zeros(g.rows(), g.cols())));
            let p = store.get_mut(id);
            for (((pv, &gv), mv), vv) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mv = b1 * *mv + one_b1 * gv;
                *vv = b2 * *vv + one_b2 * gv * gv;
                *pv -= step_size * *mv / ((*vv).sqrt() / bc2_sqrt + eps);
            }
        }
    }
}
