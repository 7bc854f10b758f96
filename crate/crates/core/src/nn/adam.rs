use serde::{Deserialize, Serialize};

use super::mlp::{Gradients, Mlp};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adaptive-moment optimizer state for one network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub config: AdamConfig,
    pub steps: u64,
    first: Gradients,
    second: Gradients,
}

impl Adam {
    pub fn new(net: &Mlp, config: AdamConfig) -> Self {
        Self {
            config,
            steps: 0,
            first: Gradients::zeros_like(net),
            second: Gradients::zeros_like(net),
        }
    }

    /// One bias-corrected update of `net` along `grads` (descent).
    pub fn step(&mut self, net: &mut Mlp, grads: &Gradients) -> Result<()> {
        if !grads.all_finite() {
            return Err(Error::NonFinite(format!(
                "gradient at optimizer step {} (max |g| = {:e})",
                self.steps + 1,
                grads.max_abs()
            )));
        }
        if grads.layers.len() != net.layers.len() {
            return Err(Error::Shape("gradient layer count differs from network".into()));
        }
        self.steps += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.steps as i32);
        let c2 = 1.0 - beta2.powi(self.steps as i32);
        let update = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
        };
        for (((layer, (gw, gb)), (mw, mb)), (vw, vb)) in net
            .layers
            .iter_mut()
            .zip(&grads.layers)
            .zip(self.first.layers.iter_mut())
            .zip(self.second.layers.iter_mut())
        {
            if layer.weight.dim() != gw.dim() || layer.bias.dim() != gb.dim() {
                return Err(Error::Shape("gradient shape differs from parameters".into()));
            }
            ndarray::Zip::from(&mut layer.weight)
                .and(gw)
                .and(mw)
                .and(vw)
                .for_each(|p, &g, m, v| update(p, g, m, v));
            ndarray::Zip::from(&mut layer.bias)
                .and(gb)
                .and(mb)
                .and(vb)
                .for_each(|p, &g, m, v| update(p, g, m, v));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Dense, Head};
    use approx::assert_relative_eq;
    use ndarray::array;

    fn scalar_net(w: f64) -> Mlp {
        Mlp::from_layers(
            vec![Dense {
                weight: array![[w]],
                bias: array![0.0],
            }],
            Head::Linear { outputs: 1 },
        )
        .unwrap()
    }

    fn grad(g: f64) -> Gradients {
        Gradients {
            layers: vec![(array![[g]], array![0.0])],
        }
    }

    #[test]
    fn zero_gradient_is_fixed_point() {
        let mut net = scalar_net(0.4);
        let mut opt = Adam::new(&net, AdamConfig::with_lr(1e-2));
        for _ in 0..10 {
            opt.step(&mut net, &grad(0.0)).unwrap();
        }
        assert_eq!(net.layers[0].weight[(0, 0)], 0.4);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut net = scalar_net(1.0);
        let mut opt = Adam::new(&net, AdamConfig::with_lr(1e-3));
        opt.step(&mut net, &grad(3.7)).unwrap();
        // m̂ = g, v̂ = g², so the step is lr·g/(|g| + eps).
        assert_relative_eq!(net.layers[0].weight[(0, 0)], 1.0 - 1e-3 * 3.7 / (3.7 + 1e-8), max_relative = 1e-15);
    }

    #[test]
    fn minimizes_square() {
        let mut net = scalar_net(1.0);
        let mut opt = Adam::new(&net, AdamConfig::with_lr(1e-2));
        let mut prev = 1.0f64;
        let mut reached = None;
        for k in 0..2000 {
            let w = net.layers[0].weight[(0, 0)];
            opt.step(&mut net, &grad(2.0 * w)).unwrap();
            let now = net.layers[0].weight[(0, 0)].abs();
            if reached.is_none() {
                assert!(now < prev, "not monotone at step {k}");
                if now < 1e-3 {
                    reached = Some(k);
                }
            }
            prev = now;
        }
        assert!(reached.is_some());
    }

    #[test]
    fn non_finite_gradient_rejected() {
        let mut net = scalar_net(1.0);
        let mut opt = Adam::new(&net, AdamConfig::with_lr(1e-2));
        assert!(matches!(opt.step(&mut net, &grad(f64::NAN)), Err(Error::NonFinite(_))));
        assert_eq!(opt.steps, 0);
    }
}
