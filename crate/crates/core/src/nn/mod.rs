//! Dense networks with hand-written reverse mode, the two-head power output,
//! an adaptive-moment optimizer and a ring replay buffer.

mod adam;
mod head;
mod mlp;
mod replay;

pub use adam::{Adam, AdamConfig};
pub use head::{power_head, sigmoid, softmax, Head};
pub use mlp::{ArchDescriptor, Dense, ForwardPass, Gradients, Mlp};
pub use replay::ReplayBuffer;

use ndarray::{Array2, ArrayView2};
use rand::Rng;

use crate::error::Result;

/// Outcome of comparing analytic gradients with central differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientCheck {
    pub probes: usize,
    pub max_relative_error: f64,
}

fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Checks `∂(Σ w ⊙ f(x))/∂θ` at `probes` random parameters with central
/// differences of step `h`, where `f` is the network output (head included)
/// and `w` a fixed random weighting of the outputs.
pub fn gradient_check<R: Rng + ?Sized>(
    net: &Mlp,
    input: ArrayView2<f64>,
    probes: usize,
    h: f64,
    rng: &mut R,
) -> Result<GradientCheck> {
    let rows = input.nrows();
    let weights = Array2::from_shape_simple_fn((rows, net.output_dim()), || rng.random_range(-1.0..1.0));
    let objective = |n: &Mlp| -> Result<f64> { Ok((n.predict(input)? * &weights).sum()) };

    let pass = net.forward(input)?;
    let (grads, _) = net.backward(&pass, weights.view())?;

    let mut probe_net = net.clone();
    let mut worst: f64 = 0.0;
    for _ in 0..probes {
        let i = rng.random_range(0..net.param_count());
        let base = probe_net.param(i);
        probe_net.set_param(i, base + h);
        let up = objective(&probe_net)?;
        probe_net.set_param(i, base - h);
        let down = objective(&probe_net)?;
        probe_net.set_param(i, base);
        worst = worst.max(relative_error(grads.get(i), (up - down) / (2.0 * h)));
    }
    Ok(GradientCheck {
        probes,
        max_relative_error: worst,
    })
}

/// Same as [`gradient_check`] but for the gradient with respect to the input.
pub fn input_gradient_check<R: Rng + ?Sized>(
    net: &Mlp,
    input: ArrayView2<f64>,
    probes: usize,
    h: f64,
    rng: &mut R,
) -> Result<GradientCheck> {
    let weights = Array2::from_shape_simple_fn((input.nrows(), net.output_dim()), || rng.random_range(-1.0..1.0));
    let pass = net.forward(input)?;
    let (_, dx) = net.backward(&pass, weights.view())?;
    let mut x = input.to_owned();
    let mut worst: f64 = 0.0;
    for _ in 0..probes {
        let r = rng.random_range(0..x.nrows());
        let c = rng.random_range(0..x.ncols());
        let base = x[(r, c)];
        x[(r, c)] = base + h;
        let up = (net.predict(x.view())? * &weights).sum();
        x[(r, c)] = base - h;
        let down = (net.predict(x.view())? * &weights).sum();
        x[(r, c)] = base;
        worst = worst.max(relative_error(dx[(r, c)], (up - down) / (2.0 * h)));
    }
    Ok(GradientCheck {
        probes,
        max_relative_error: worst,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{substream, Substream};

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = substream(1, Substream::Init);
        let nets = [
            Mlp::new(&[6, 32, 32, 1], Head::Linear { outputs: 1 }, 1.0, &mut rng).unwrap(),
            Mlp::new(&[6, 32, 32, 3 * 3], Head::power(3, 2, 20.0), 1.0, &mut rng).unwrap(),
            Mlp::new(&[3, 16, 16, 4], Head::power(1, 3, 20.0), 1.0, &mut rng).unwrap(),
        ];
        for net in &nets {
            let x = Array2::from_shape_simple_fn((4, net.input_dim()), || rng.random_range(0.0..1.0));
            let c = gradient_check(net, x.view(), 10, 1e-5, &mut rng).unwrap();
            assert!(c.max_relative_error < 1e-4, "{c:?}");
            let c = input_gradient_check(net, x.view(), 10, 1e-5, &mut rng).unwrap();
            assert!(c.max_relative_error < 1e-4, "{c:?}");
        }
    }
}
