//! Adaptive-moment optimizer for the embedding network.

use super::{GradStore, Network, Scalar};

/// Adam with bias correction. The caller is responsible for re-projecting the
/// embedding-layer weight rows after each step.
#[derive(Debug, Clone)]
pub struct Adam<S: Scalar> {
    pub learning_rate: S,
    pub beta1: S,
    pub beta2: S,
    pub epsilon: S,
    t: u64,
    m: GradStore<S>,
    v: GradStore<S>,
}

impl<S: Scalar> Adam<S> {
    pub fn new(net: &Network<S>, learning_rate: S, beta1: S, beta2: S) -> Self {
        Self {
            learning_rate,
            beta1,
            beta2,
            epsilon: S::from_f64(1e-8),
            t: 0,
            m: GradStore::zeros_like(net),
            v: GradStore::zeros_like(net),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// One update step in-place.
    pub fn step(&mut self, net: &mut Network<S>, grads: &GradStore<S>) {
        self.t += 1;
        let t = S::from_f64(self.t as f64);
        let one = S::one();
        let bc1 = one - self.beta1.powf(t);
        let bc2 = one - self.beta2.powf(t);
        let lr = self.learning_rate;
        let (b1, b2, eps) = (self.beta1, self.beta2, self.epsilon);

        let params = net.param_slices_mut();
        let g = grads.tensors();
        let m = self.m.tensors_mut();
        let v = self.v.tensors_mut();
        for (((p, g), m), v) in params.into_iter().zip(g).zip(m).zip(v) {
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (one - b1) * g[i];
                v[i] = b2 * v[i] + (one - b2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] = p[i] - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ArchDescriptor;
    use crate::rng::rng_for;
    use ndarray::{Array1, Array3};
    use rand::Rng;

    #[test]
    fn adam_descends_a_simple_objective() {
        let arch = ArchDescriptor {
            input: (8, 8, 1),
            conv_channels: vec![4],
            kernel: 3,
            embedding_dim: 4,
        };
        let mut net = crate::nn::Network::<f32>::init(arch, &mut rng_for(1, &[0])).unwrap();
        let mut rng = rng_for(1, &[1]);
        let img = Array3::from_shape_fn((8, 8, 1), |_| rng.random_range(0.0..1.0f32));
        let target: Array1<f32> = Array1::from_shape_fn(4, |_| rng.random_range(-0.5..0.5));
        let loss = |n: &crate::nn::Network<f32>| -> f32 {
            let e = n.forward(&img).unwrap();
            e.iter().zip(target.iter()).map(|(a, b)| (a - b) * (a - b)).sum()
        };
        let mut opt = Adam::new(&net, 0.01, 0.9, 0.999);
        let initial = loss(&net);
        for _ in 0..50 {
            let (e, tape) = net.forward_cached(&img).unwrap();
            let d_emb: Array1<f32> = (&e - &target) * 2.0f32;
            let (_, grads) = net.backward(&tape, &d_emb, false, true);
            opt.step(&mut net, &grads.unwrap());
        }
        assert!(loss(&net) < 0.5 * initial);
    }

    #[test]
    fn row_norms_hold_after_optimizer_steps() {
        let arch = ArchDescriptor {
            input: (8, 8, 1),
            conv_channels: vec![4],
            kernel: 3,
            embedding_dim: 4,
        };
        let mut net = crate::nn::Network::<f32>::init(arch, &mut rng_for(2, &[0])).unwrap();
        let mut rng = rng_for(2, &[1]);
        let img = Array3::from_shape_fn((8, 8, 1), |_| rng.random_range(0.0..1.0f32));
        let mut opt = Adam::new(&net, 0.01, 0.9, 0.999);
        for _ in 0..5 {
            let (e, tape) = net.forward_cached(&img).unwrap();
            let d_emb = e.mapv(|v| 2.0 * v);
            let (_, grads) = net.backward(&tape, &d_emb, false, true);
            opt.step(&mut net, &grads.unwrap());
            net.renormalize_embedding_rows();
            for n in net.embedding_row_norms() {
                assert!((n - 1.0).abs() <= 1e-6);
            }
        }
    }
}
