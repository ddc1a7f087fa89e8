use ndarray::Zip;

use super::{Mlp, MlpGrads};
use crate::error::{LespError, Result};

/// Adam with bias correction. Moments mirror the parameter shapes of the
/// network they were created for.
#[derive(Clone, Debug)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step_count: u64,
    first_moment: MlpGrads,
    second_moment: MlpGrads,
}

impl Adam {
    pub fn new(net: &Mlp, learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step_count: 0,
            first_moment: MlpGrads::zeros_like(net),
            second_moment: MlpGrads::zeros_like(net),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn step(&mut self, params: &mut Mlp, grads: &MlpGrads) -> Result<()> {
        if !grads.same_shape(params) || !self.first_moment.same_shape(params) {
            return Err(LespError::Shape("gradient/moment shapes do not match parameters".into()));
        }
        if !grads.is_finite() {
            return Err(LespError::NonFinite("non-finite gradient passed to Adam".into()));
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let (b1, b2, eps, lr) = (self.beta1, self.beta2, self.epsilon, self.learning_rate);
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        let update = |p: &mut f64, m: &mut f64, v: &mut f64, g: f64| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        };
        for l in 0..params.weights.len() {
            Zip::from(&mut params.weights[l])
                .and(&mut self.first_moment.weights[l])
                .and(&mut self.second_moment.weights[l])
                .and(&grads.weights[l])
                .for_each(|p, m, v, &g| update(p, m, v, g));
            Zip::from(&mut params.biases[l])
                .and(&mut self.first_moment.biases[l])
                .and(&mut self.second_moment.biases[l])
                .and(&grads.biases[l])
                .for_each(|p, m, v, &g| update(p, m, v, g));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Activation;
    use ndarray::{Array1, Array2};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scalar_net(w: f64) -> Mlp {
        Mlp::from_parts(
            &[1, 1],
            Activation::Identity,
            vec![Array2::from_elem((1, 1), w)],
            vec![Array1::zeros(1)],
        )
        .unwrap()
    }

    fn grads_for(w: f64) -> MlpGrads {
        MlpGrads { weights: vec![Array2::from_elem((1, 1), w)], biases: vec![Array1::zeros(1)] }
    }

    #[test]
    fn zero_gradient_leaves_params_bit_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut net = Mlp::new(&[3, 6, 2], Activation::Relu, &mut rng).unwrap();
        let before = net.clone();
        let mut adam = Adam::new(&net, 1e-3);
        adam.step(&mut net, &MlpGrads::zeros_like(&before)).unwrap();
        assert_eq!(net, before);
        assert_eq!(adam.step_count(), 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut net = scalar_net(0.5);
        let mut adam = Adam::new(&net, 0.01);
        adam.step(&mut net, &grads_for(3.7)).unwrap();
        assert!((net.weights(0)[[0, 0]] - (0.5 - 0.01)).abs() < 1e-9);
        let mut net = scalar_net(0.5);
        let mut adam = Adam::new(&net, 0.01);
        adam.step(&mut net, &grads_for(-0.2)).unwrap();
        assert!((net.weights(0)[[0, 0]] - (0.5 + 0.01)).abs() < 1e-9);
    }

    #[test]
    fn quadratic_descent_is_monotone() {
        let mut net = scalar_net(1.0);
        let mut adam = Adam::new(&net, 0.1);
        let mut prev = 1.0f64;
        for _ in 0..10 {
            let w = net.weights(0)[[0, 0]];
            adam.step(&mut net, &grads_for(2.0 * w)).unwrap();
            let now = net.weights(0)[[0, 0]].abs();
            assert!(now < prev, "{now} !< {prev}");
            prev = now;
        }
    }

    #[test]
    fn non_finite_gradient_is_an_error() {
        let mut net = scalar_net(1.0);
        let mut adam = Adam::new(&net, 0.1);
        let err = adam.step(&mut net, &grads_for(f64::NAN)).unwrap_err();
        assert!(matches!(err, LespError::NonFinite(_)));
        assert_eq!(adam.step_count(), 0);
    }
}
