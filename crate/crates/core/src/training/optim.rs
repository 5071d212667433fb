use crate::encoder::{Gradients, Parameters};
use crate::tensor::Matrix;

/// Number of warmup steps, `warmup_proportion · total_steps` rounded up.
pub fn warmup_steps(total_steps: usize, warmup_proportion: f64) -> usize {
    let exact = warmup_proportion * total_steps as f64;
    let nearest = exact.round();
    if (exact - nearest).abs() < 1e-9 {
        nearest as usize
    } else {
        exact.ceil() as usize
    }
}

/// Linear ramp from 0 to `peak_lr` over the warmup steps, then linear
/// decay to 0 at `total_steps`. Steps are 0-based update indices.
pub fn lr_schedule(step: usize, total_steps: usize, peak_lr: f64, warmup_proportion: f64) -> f64 {
    let warmup = warmup_steps(total_steps, warmup_proportion);
    if step < warmup {
        return peak_lr * (step as f64 / warmup as f64);
    }
    if step >= total_steps {
        return 0.0;
    }
    peak_lr * ((total_steps - step) as f64 / (total_steps - warmup) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam with bias correction and no weight decay.
#[derive(Debug, Clone)]
pub struct Adam {
    config: AdamConfig,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
    t: i32,
}

impl Adam {
    pub fn new(params: &Parameters, config: AdamConfig) -> Self {
        let zeros = || params.tensors().iter().map(|t| Matrix::zeros(t.rows(), t.cols())).collect();
        Adam { config, m: zeros(), v: zeros(), t: 0 }
    }

    pub fn steps_taken(&self) -> i32 {
        self.t
    }

    pub fn step(&mut self, params: &mut Parameters, grads: &Gradients, lr: f64) {
        self.t += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.t);
        let c2 = 1.0 - beta2.powi(self.t);
        for (((p, g), m), v) in params.tensors_mut().iter_mut().zip(&grads.tensors).zip(&mut self.m).zip(&mut self.v) {
            let (p, g, m, v) = (p.as_mut_slice(), g.as_slice(), m.as_mut_slice(), v.as_mut_slice());
            for i in 0..p.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
            }
        }
    }
}

/// Rescale so the global norm is at most `max_norm`. Returns the norm
/// before clipping.
pub fn clip_gradients(grads: &mut Gradients, max_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if norm > max_norm && norm > 0.0 {
        grads.scale(max_norm / norm);
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_shape() {
        assert_eq!(lr_schedule(10, 100, 1e-4, 0.1), 1e-4);
        assert_eq!(lr_schedule(0, 100, 1e-4, 0.1), 0.0);
        assert!((lr_schedule(5, 100, 1e-4, 0.1) - 5e-5).abs() < 1e-20);
        assert_eq!(lr_schedule(100, 100, 1e-4, 0.1), 0.0);
        assert!((lr_schedule(55, 100, 1e-4, 0.1) - 5e-5).abs() < 1e-20);
        assert_eq!(lr_schedule(0, 100, 5e-5, 0.0), 5e-5);
        assert_eq!(lr_schedule(0, 0, 5e-5, 0.0), 0.0);
    }

    #[test]
    fn first_adam_step_moves_by_lr() {
        use crate::encoder::{IdFusion, ModelConfig};
        let config = ModelConfig {
            vocab_size: 10,
            hidden_dim: 4,
            num_heads: 1,
            ffn_dim: 4,
            encoder_layers: 1,
            decoder_layers: 1,
            max_session_len: 4,
            dropout_rate: 0.0,
            id_fusion: IdFusion::Off,
        };
        let mut params = Parameters::init(&config, 3).unwrap();
        let before = params.tensors()[0].get(0, 0);
        let mut grads =
            Gradients { tensors: params.tensors().iter().map(|t| Matrix::zeros(t.rows(), t.cols())).collect() };
        grads.tensors[0].set(0, 0, 0.3);
        let mut adam = Adam::new(&params, AdamConfig::default());
        adam.step(&mut params, &grads, 0.01);
        assert!((params.tensors()[0].get(0, 0) - (before - 0.01)).abs() < 1e-9);
        assert_eq!(params.tensors()[0].get(0, 1), Parameters::init(&config, 3).unwrap().tensors()[0].get(0, 1));
    }

    #[test]
    fn clipping() {
        let mut g = Gradients { tensors: vec![Matrix::from_vec(1, 2, vec![3.0, 4.0])] };
        assert_eq!(clip_gradients(&mut g, 1.0), 5.0);
        assert!((g.global_norm() - 1.0).abs() < 1e-12);
    }
}
