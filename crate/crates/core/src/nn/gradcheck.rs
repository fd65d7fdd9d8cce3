//! Central-difference gradient verification.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Gradients, Network};
use crate::error::Result;

/// Fixed scalar loss `Σ_t Σ_k (w_tk · y_tk + ½ y_tk²)` over a sequence of
/// outputs, with probe weights drawn once from a seed.
#[derive(Clone, Debug)]
pub struct GradCheckLoss {
    weights: Vec<Vec<f64>>,
}

impl GradCheckLoss {
    pub fn new(steps: usize, width: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        GradCheckLoss {
            weights: (0..steps)
                .map(|_| (0..width).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect(),
        }
    }

    pub fn value(&self, outputs: &[Vec<f64>]) -> f64 {
        let mut l = 0.0;
        for (y, w) in outputs.iter().zip(&self.weights) {
            for (a, b) in y.iter().zip(w) {
                l += b * a + 0.5 * a * a;
            }
        }
        l
    }

    pub fn grad(&self, outputs: &[Vec<f64>]) -> Vec<Vec<f64>> {
        outputs
            .iter()
            .zip(&self.weights)
            .map(|(y, w)| y.iter().zip(w).map(|(a, b)| b + a).collect())
            .collect()
    }
}

/// Loss and analytic gradient of the probe loss for `xs`.
pub fn probe_loss(net: &Network, xs: &[Vec<f64>], loss: &GradCheckLoss) -> Result<(f64, Gradients)> {
    let trace = net.forward_trace(xs)?;
    let d = loss.grad(&trace.outputs);
    Ok((loss.value(&trace.outputs), net.backward(&trace, &d)?))
}

pub fn numerical_gradient(
    net: &Network,
    xs: &[Vec<f64>],
    loss: &GradCheckLoss,
    epsilon: f64,
) -> Result<Gradients> {
    let mut probe = net.clone();
    let mut out = vec![0.0; net.param_count()];
    for (i, o) in out.iter_mut().enumerate() {
        let orig = probe.params()[i];
        probe.params_mut()[i] = orig + epsilon;
        let plus = loss.value(&probe.forward_sequence(xs)?);
        probe.params_mut()[i] = orig - epsilon;
        let minus = loss.value(&probe.forward_sequence(xs)?);
        probe.params_mut()[i] = orig;
        *o = (plus - minus) / (2.0 * epsilon);
    }
    Ok(Gradients(out))
}

/// Max over entries of `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn max_relative_error(analytic: &Gradients, numeric: &Gradients) -> f64 {
    analytic
        .0
        .iter()
        .zip(&numeric.0)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-8))
        .fold(0.0, f64::max)
}

/// Compare backpropagated gradients of a fixed probe loss against central
/// differences. `xs` may hold a single observation.
pub fn grad_check(net: &Network, xs: &[Vec<f64>], epsilon: f64) -> Result<f64> {
    assert!(epsilon > 0.0, "epsilon must be positive");
    let loss = GradCheckLoss::new(xs.len(), net.output_width(), 0x9e37);
    let (_, analytic) = probe_loss(net, xs, &loss)?;
    let numeric = numerical_gradient(net, xs, &loss, epsilon)?;
    Ok(max_relative_error(&analytic, &numeric))
}
