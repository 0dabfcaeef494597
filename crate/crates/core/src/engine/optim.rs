use super::Tensor;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

/// Adam moments for an ordered list of parameter tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamState {
    pub fn for_shapes<'a>(shapes: impl IntoIterator<Item = &'a [usize]>) -> Self {
        let (m, v) = shapes
            .into_iter()
            .map(|s| (Tensor::zeros(s), Tensor::zeros(s)))
            .unzip();
        Self { step: 0, m, v }
    }

    /// One bias-corrected Adam update of `params` with `grads`, index-aligned.
    pub fn update<'a>(
        &mut self,
        params: impl IntoIterator<Item = &'a mut Tensor>,
        grads: &[Tensor],
        lr: f64,
    ) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - ADAM_BETA1.powi(t);
        let c2 = 1.0 - ADAM_BETA2.powi(t);
        let mut count = 0;
        for (((p, g), m), v) in params
            .into_iter()
            .zip(grads)
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            count += 1;
            debug_assert_eq!(p.shape(), g.shape());
            let iter = p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut().iter_mut().zip(v.data_mut()));
            for ((p, &g), (m, v)) in iter {
                *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *p -= lr * m_hat / (v_hat.sqrt() + ADAM_EPSILON);
            }
        }
        debug_assert_eq!(count, grads.len());
    }
}

/// Step-decay schedule: `initial · 0.5^floor(epoch / period)`.
pub fn learning_rate(initial: f64, halving_period: usize, epoch: usize) -> f64 {
    initial * 0.5f64.powi((epoch / halving_period) as i32)
}
