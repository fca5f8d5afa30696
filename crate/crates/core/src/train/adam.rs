use serde::{Deserialize, Serialize};

use super::backprop::ShadowLayer;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 0.005,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First and second moment estimates, shaped like the parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<ShadowLayer>,
    pub v: Vec<ShadowLayer>,
}

impl AdamState {
    pub fn new(shapes: &[ShadowLayer]) -> Self {
        let zeros: Vec<ShadowLayer> = shapes
            .iter()
            .map(|l| ShadowLayer {
                weights: vec![0.0; l.weights.len()],
                theta: vec![0.0; l.theta.len()],
            })
            .collect();
        AdamState {
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// One bias-corrected Adam step on `params`.
    pub fn update(&mut self, cfg: &AdamConfig, params: &mut [ShadowLayer], grads: &[ShadowLayer]) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - cfg.beta1.powi(t);
        let c2 = 1.0 - cfg.beta2.powi(t);
        let apply = |p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
            for i in 0..p.len() {
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
            }
        };
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            apply(
                &mut p.weights,
                &g.weights,
                &mut self.m[k].weights,
                &mut self.v[k].weights,
            );
            apply(
                &mut p.theta,
                &g.theta,
                &mut self.m[k].theta,
                &mut self.v[k].theta,
            );
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = vec![ShadowLayer {
            weights: vec![1.0, -1.0],
            theta: vec![0.0],
        }];
        let g = vec![ShadowLayer {
            weights: vec![0.3, -20.0],
            theta: vec![0.0],
        }];
        let mut s = AdamState::new(&p);
        let cfg = AdamConfig {
            learning_rate: 0.1,
            ..Default::default()
        };
        s.update(&cfg, &mut p, &g);
        // bias correction makes the first step ~lr * sign(g)
        assert!((p[0].weights[0] - 0.9).abs() < 1e-6);
        assert!((p[0].weights[1] + 0.9).abs() < 1e-6);
        assert_eq!(p[0].theta[0], 0.0);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn minimizes_quadratic() {
        let mut p = vec![ShadowLayer {
            weights: vec![5.0],
            theta: vec![],
        }];
        let mut s = AdamState::new(&p);
        let cfg = AdamConfig {
            learning_rate: 0.05,
            ..Default::default()
        };
        for _ in 0..2000 {
            let g = vec![ShadowLayer {
                weights: vec![2.0 * (p[0].weights[0] - 2.0)],
                theta: vec![],
            }];
            s.update(&cfg, &mut p, &g);
        }
        assert!((p[0].weights[0] - 2.0).abs() < 1e-2);
    }
}
