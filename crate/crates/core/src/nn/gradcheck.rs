//! Central finite-difference check of [`Network::backward`].
//!
//! Each trial samples a random network (1 to 3 dense layers, widths 1..=8,
//! an activation after every dense layer), random parameters and inputs, and
//! a random linear read-out `L = sum(c ⊙ forward(x))`. Analytic gradients of
//! `L` with respect to every parameter and every input are compared against
//! `(L(θ + h) - L(θ - h)) / 2h`, which only ever calls `forward`.

use rand::Rng;

use crate::error::Result;
use crate::nn::matrix::Matrix;
use crate::nn::network::Network;
use crate::nn::spec::{Activation, LayerSpec, NetworkSpec};
use crate::rng::{stream_rng, SimRng};

pub const DEFAULT_STEP: f64 = 1e-5;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;
/// Denominator floor for the relative error, so coordinates whose true
/// gradient is zero compare on an absolute scale.
pub const RELATIVE_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy)]
pub struct GradcheckOptions {
    pub trials: usize,
    pub seed: u64,
    pub step: f64,
    pub tolerance: f64,
    /// Negates analytic gradients before comparison. Used to prove the check fails.
    pub inject_sign_flip: bool,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self {
            trials: 100,
            seed: 0,
            step: DEFAULT_STEP,
            tolerance: DEFAULT_TOLERANCE,
            inject_sign_flip: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub trials: usize,
    pub coordinates: usize,
    pub max_relative_error: f64,
    pub worst_trial: usize,
    pub tolerance: f64,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.max_relative_error < self.tolerance
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

const KINDS: [Activation; 5] = [
    Activation::Relu,
    Activation::LeakyRelu { slope: 0.1 },
    Activation::Sigmoid,
    Activation::Tanh,
    Activation::Identity,
];

/// Random spec for trial `trial`; the activation after the first dense layer
/// cycles through every kind so all of them are exercised.
pub fn random_spec(rng: &mut SimRng, trial: usize) -> NetworkSpec {
    let depth = rng.random_range(1..=3);
    let widths: Vec<usize> = (0..=depth).map(|_| rng.random_range(1..=8)).collect();
    let mut layers = Vec::new();
    for k in 0..depth {
        layers.push(LayerSpec::dense(widths[k], widths[k + 1]));
        let act = if k == 0 {
            KINDS[trial % KINDS.len()]
        } else {
            KINDS[rng.random_range(0..KINDS.len())]
        };
        layers.push(LayerSpec::Activation(act));
    }
    NetworkSpec::new(widths[0], widths[depth], layers).expect("widths chain by construction")
}

fn readout(net: &Network, x: &Matrix, c: &Matrix) -> Result<f64> {
    let y = net.forward(x)?;
    Ok(y.as_slice().iter().zip(c.as_slice()).map(|(a, b)| a * b).sum())
}

pub fn run(opts: &GradcheckOptions) -> Result<GradcheckReport> {
    let mut rng = stream_rng(opts.seed, 0x6772_6164);
    let mut report = GradcheckReport {
        trials: opts.trials,
        coordinates: 0,
        max_relative_error: 0.0,
        worst_trial: 0,
        tolerance: opts.tolerance,
    };
    let h = opts.step;
    for trial in 0..opts.trials {
        let spec = random_spec(&mut rng, trial);
        let mut net = Network::build(spec.clone(), rng.random())?;
        for v in net.params_mut().values_mut() {
            *v = rng.random_range(-1.0..1.0);
        }
        let rows = rng.random_range(1..=4);
        let x = random_matrix(&mut rng, rows, spec.input_dim(), 2.0);
        let c = random_matrix(&mut rng, rows, spec.output_dim(), 1.0);

        let grads = net.backward(&x, &c)?;
        let sign = if opts.inject_sign_flip { -1.0 } else { 1.0 };
        let mut worst = 0.0f64;

        for i in 0..net.params().len() {
            let orig = net.params().values()[i];
            net.params_mut().values_mut()[i] = orig + h;
            let plus = readout(&net, &x, &c)?;
            net.params_mut().values_mut()[i] = orig - h;
            let minus = readout(&net, &x, &c)?;
            net.params_mut().values_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            worst = worst.max(relative_error(sign * grads.params.values()[i], numeric));
        }
        let mut xp = x.clone();
        for i in 0..x.as_slice().len() {
            let orig = x.as_slice()[i];
            xp.as_mut_slice()[i] = orig + h;
            let plus = readout(&net, &xp, &c)?;
            xp.as_mut_slice()[i] = orig - h;
            let minus = readout(&net, &xp, &c)?;
            xp.as_mut_slice()[i] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            worst = worst.max(relative_error(sign * grads.input.as_slice()[i], numeric));
        }
        report.coordinates += net.params().len() + x.as_slice().len();
        if worst > report.max_relative_error {
            report.max_relative_error = worst;
            report.worst_trial = trial;
        }
    }
    Ok(report)
}

fn random_matrix(rng: &mut SimRng, rows: usize, cols: usize, scale: f64) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.random_range(-scale..scale)).collect();
    Matrix::new(rows, cols, data).expect("sized")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_uses_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!((relative_error(1e-9, 0.0) - 0.1).abs() < 1e-12);
        assert!((relative_error(2.0, 1.0) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn random_specs_cycle_all_activation_kinds() {
        let mut rng = stream_rng(1, 2);
        let mut seen = std::collections::HashSet::new();
        for t in 0..10 {
            let spec = random_spec(&mut rng, t);
            if let Some(LayerSpec::Activation(a)) = spec.layers().get(1) {
                seen.insert(a.name());
            }
        }
        assert_eq!(seen.len(), 5);
    }

    #[test]
    fn sign_flip_is_caught() {
        let report = run(&GradcheckOptions {
            trials: 5,
            inject_sign_flip: true,
            ..Default::default()
        })
        .unwrap();
        assert!(!report.passed());
    }
}
