//! Generator/discriminator pair, binary cross-entropy losses and the two
//! players' SGD steps.
//!
//! The discriminator maximises `Σ ln D(x) + Σ ln(1 - D(G(z)))`, implemented as
//! minimising BCE with real samples labelled 1 and fakes labelled 0. The
//! generator always uses the non-saturating form, minimising
//! `BCE(critic(G(z)), 1) = -mean ln critic(G(z))`.
//!
//! Generator updates go through [`DiscriminatorOracle`], which only exposes
//! per-sample scores and their input gradients. That is the seam the
//! strategies use to put a server model, an averaged ensemble or a remote
//! user's discriminator on the other side of the game.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Batch, GradVector, Matrix, Network};
use crate::rng::SimRng;

/// Predictions are clamped to `[EPS, 1 - EPS]` before taking logs.
pub const PRED_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Real samples per discriminator minibatch.
    pub batch_real: usize,
    /// Generated samples per discriminator minibatch and per generator step.
    pub batch_fake: usize,
    pub lr_d: f64,
    pub lr_g: f64,
    pub d_steps_per_g_step: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_real: 64,
            batch_fake: 64,
            lr_d: 0.05,
            lr_g: 0.05,
            d_steps_per_g_step: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_real == 0 || self.batch_fake == 0 || self.d_steps_per_g_step == 0 {
            return Err(Error::Config(
                "batch_real, batch_fake and d_steps_per_g_step must be positive".into(),
            ));
        }
        if !(self.lr_d > 0.0 && self.lr_d.is_finite() && self.lr_g > 0.0 && self.lr_g.is_finite()) {
            return Err(Error::Config("lr_d and lr_g must be positive and finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseDistribution {
    #[default]
    Normal,
    /// Uniform on `[-1, 1)`.
    Uniform,
}

/// Seeded source of generator noise vectors.
#[derive(Debug, Clone)]
pub struct NoiseSource {
    dim: usize,
    distribution: NoiseDistribution,
    rng: SimRng,
}

impl NoiseSource {
    pub fn new(dim: usize, seed: u64) -> Self {
        Self::from_rng(dim, NoiseDistribution::Normal, rand::SeedableRng::seed_from_u64(seed))
    }

    pub fn from_rng(dim: usize, distribution: NoiseDistribution, rng: SimRng) -> Self {
        Self {
            dim,
            distribution,
            rng,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn sample(&mut self, n: usize) -> Matrix {
        let len = n * self.dim;
        let data: Vec<f64> = match self.distribution {
            NoiseDistribution::Normal => {
                (0..len).map(|_| StandardNormal.sample(&mut self.rng)).collect()
            }
            NoiseDistribution::Uniform => {
                let u = Uniform::new(-1.0, 1.0).expect("valid range");
                (0..len).map(|_| u.sample(&mut self.rng)).collect()
            }
        };
        Matrix::new(n, self.dim, data).expect("sized")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GanPair {
    pub generator: Network,
    pub discriminator: Network,
    noise_dim: usize,
}

impl GanPair {
    pub fn new(generator: Network, discriminator: Network) -> Result<Self> {
        check_adversaries(&generator, &discriminator)?;
        let noise_dim = generator.input_dim();
        Ok(Self {
            generator,
            discriminator,
            noise_dim,
        })
    }

    pub fn noise_dim(&self) -> usize {
        self.noise_dim
    }

    pub fn sample_dim(&self) -> usize {
        self.generator.output_dim()
    }

    pub fn generate(&self, noise: &Matrix) -> Result<Matrix> {
        self.generator.forward(noise)
    }
}

/// Checks that `discriminator` can judge `generator`'s output.
pub fn check_adversaries(generator: &Network, discriminator: &Network) -> Result<()> {
    check_discriminator(discriminator)?;
    if generator.output_dim() != discriminator.input_dim() {
        return Err(Error::shape(
            "generator output vs discriminator input",
            discriminator.input_dim(),
            generator.output_dim(),
        ));
    }
    Ok(())
}

pub fn check_discriminator(discriminator: &Network) -> Result<()> {
    if discriminator.output_dim() != 1 {
        return Err(Error::shape("discriminator output", 1, discriminator.output_dim()));
    }
    if discriminator.spec().final_activation() != Some(crate::nn::Activation::Sigmoid) {
        return Err(Error::Spec("discriminator must end with a sigmoid".into()));
    }
    Ok(())
}

#[inline]
fn clamp_prediction(p: f64) -> f64 {
    p.clamp(PRED_EPS, 1.0 - PRED_EPS)
}

/// Mean binary cross-entropy and its gradient with respect to the predictions.
/// The gradient is evaluated at the clamped prediction.
pub fn bce_loss(predictions: &[f64], targets: &[f64]) -> Result<(f64, Vec<f64>)> {
    if predictions.len() != targets.len() {
        return Err(Error::shape("bce_loss", predictions.len(), targets.len()));
    }
    if predictions.is_empty() {
        return Err(Error::InvalidArgument("bce_loss on empty input".into()));
    }
    let n = predictions.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(predictions.len());
    for (&p, &t) in predictions.iter().zip(targets) {
        if p.is_nan() {
            return Err(Error::NonFiniteValue("prediction"));
        }
        let p = clamp_prediction(p);
        loss -= t * libm::log(p) + (1.0 - t) * libm::log(1.0 - p);
        grad.push((p - t) / (p * (1.0 - p)) / n);
    }
    Ok((loss / n, grad))
}

/// The original minimax generator objective `mean ln(1 - p)` (to be minimised)
/// and its gradient. Not used by the training loops.
pub fn saturating_generator_loss(scores: &[f64]) -> Result<(f64, Vec<f64>)> {
    if scores.is_empty() {
        return Err(Error::InvalidArgument("empty scores".into()));
    }
    let n = scores.len() as f64;
    let loss = scores.iter().map(|&p| libm::log(1.0 - clamp_prediction(p))).sum::<f64>() / n;
    let grad = scores
        .iter()
        .map(|&p| -1.0 / (1.0 - clamp_prediction(p)) / n)
        .collect();
    Ok((loss, grad))
}

/// Scores of a batch of candidate samples and `d score / d sample` for each.
#[derive(Debug, Clone, PartialEq)]
pub struct CriticFeedback {
    pub scores: Vec<f64>,
    pub score_grads: Matrix,
}

impl CriticFeedback {
    pub fn validate(&self, samples: &Matrix) -> Result<()> {
        if self.scores.len() != samples.rows() || self.score_grads.shape() != samples.shape() {
            return Err(Error::shape(
                "critic feedback",
                format!("{:?}", samples.shape()),
                format!("{} scores, {:?} grads", self.scores.len(), self.score_grads.shape()),
            ));
        }
        if self.scores.iter().any(|s| !(0.0..=1.0).contains(s)) {
            return Err(Error::NonFiniteValue("critic score outside [0, 1]"));
        }
        Ok(())
    }
}

/// Adversary seen by a generator step.
pub trait DiscriminatorOracle {
    fn input_dim(&self) -> usize;
    fn evaluate(&mut self, samples: &Matrix) -> Result<CriticFeedback>;
}

/// Scores and input gradients of a sigmoid-output discriminator.
pub fn critic_feedback(discriminator: &Network, samples: &Matrix) -> Result<CriticFeedback> {
    let trace = discriminator.forward_trace(samples)?;
    let ones = Matrix::filled(samples.rows(), 1, 1.0);
    let grads = discriminator.backward_from_trace(&trace, &ones)?;
    Ok(CriticFeedback {
        scores: trace.into_output().into_vec(),
        score_grads: grads.input,
    })
}

/// A local discriminator network used directly as the oracle.
pub struct NetworkCritic<'a>(pub &'a Network);

impl DiscriminatorOracle for NetworkCritic<'_> {
    fn input_dim(&self) -> usize {
        self.0.input_dim()
    }

    fn evaluate(&mut self, samples: &Matrix) -> Result<CriticFeedback> {
        critic_feedback(self.0, samples)
    }
}

/// Arithmetic mean of several oracles. Scores and gradients are summed in
/// member order, then divided by the member count.
pub struct MeanCritic<O> {
    members: Vec<O>,
}

impl<O: DiscriminatorOracle> MeanCritic<O> {
    pub fn new(members: Vec<O>) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::InvalidArgument("mean critic needs at least one member".into()));
        }
        let dim = members[0].input_dim();
        if members.iter().any(|m| m.input_dim() != dim) {
            return Err(Error::shape("mean critic member input", dim, "mixed widths"));
        }
        Ok(Self { members })
    }
}

/// Mean of per-member feedback, accumulated in the given order.
pub fn mean_feedback(parts: &[CriticFeedback]) -> Result<CriticFeedback> {
    let first = parts
        .first()
        .ok_or_else(|| Error::InvalidArgument("no feedback to average".into()))?;
    let mut scores = vec![0.0; first.scores.len()];
    let mut grads = Matrix::zeros(first.score_grads.rows(), first.score_grads.cols());
    for part in parts {
        if part.scores.len() != scores.len() || part.score_grads.shape() != grads.shape() {
            return Err(Error::shape("feedback to average", scores.len(), part.scores.len()));
        }
        for (a, s) in scores.iter_mut().zip(&part.scores) {
            *a += s;
        }
        for (a, g) in grads.as_mut_slice().iter_mut().zip(part.score_grads.as_slice()) {
            *a += g;
        }
    }
    let n = parts.len() as f64;
    scores.iter_mut().for_each(|s| *s /= n);
    grads.as_mut_slice().iter_mut().for_each(|g| *g /= n);
    Ok(CriticFeedback {
        scores,
        score_grads: grads,
    })
}

impl<O: DiscriminatorOracle> DiscriminatorOracle for MeanCritic<O> {
    fn input_dim(&self) -> usize {
        self.members[0].input_dim()
    }

    fn evaluate(&mut self, samples: &Matrix) -> Result<CriticFeedback> {
        let parts = self
            .members
            .iter_mut()
            .map(|m| m.evaluate(samples))
            .collect::<Result<Vec<_>>>()?;
        mean_feedback(&parts)
    }
}

/// `BCE(D(real), 1) + BCE(D(fake), 0)` and its parameter gradient.
pub fn discriminator_loss_and_gradient(
    discriminator: &Network,
    real: &Matrix,
    fake: &Matrix,
) -> Result<(f64, GradVector)> {
    let half = |inputs: &Matrix, label: f64| -> Result<(f64, GradVector)> {
        let trace = discriminator.forward_trace(inputs)?;
        let (loss, dp) = bce_loss(trace.output().as_slice(), &vec![label; inputs.rows()])?;
        let upstream = Matrix::column(dp);
        Ok((loss, discriminator.backward_from_trace(&trace, &upstream)?.params))
    };
    let (real_loss, mut grad) = half(real, 1.0)?;
    let (fake_loss, fake_grad) = half(fake, 0.0)?;
    grad.axpy(1.0, &fake_grad)?;
    let loss = real_loss + fake_loss;
    if !loss.is_finite() || !grad.is_finite() {
        return Err(Error::NonFiniteValue("discriminator loss"));
    }
    Ok((loss, grad))
}

/// One SGD step of the discriminator; returns the loss before the step.
pub fn discriminator_step(
    discriminator: &mut Network,
    real: &Matrix,
    fake: &Matrix,
    lr: f64,
) -> Result<f64> {
    let (loss, grad) = discriminator_loss_and_gradient(discriminator, real, fake)?;
    discriminator.sgd_step(&grad, lr)?;
    Ok(loss)
}

/// Non-saturating generator loss `-mean ln critic(G(z))` and its gradient
/// with respect to the generator parameters.
pub fn generator_loss_and_gradient(
    generator: &Network,
    noise: &Matrix,
    critic: &mut dyn DiscriminatorOracle,
) -> Result<(f64, GradVector)> {
    if critic.input_dim() != generator.output_dim() {
        return Err(Error::shape("critic input", generator.output_dim(), critic.input_dim()));
    }
    let trace = generator.forward_trace(noise)?;
    let fakes = trace.output();
    let feedback = critic.evaluate(fakes)?;
    feedback.validate(fakes)?;
    let (loss, dp) = bce_loss(&feedback.scores, &vec![1.0; fakes.rows()])?;
    let mut upstream = feedback.score_grads;
    for (r, d) in dp.iter().enumerate() {
        upstream.row_mut(r).iter_mut().for_each(|g| *g *= d);
    }
    let grad = generator.backward_from_trace(&trace, &upstream)?.params;
    if !loss.is_finite() || !grad.is_finite() {
        return Err(Error::NonFiniteValue("generator loss"));
    }
    Ok((loss, grad))
}

/// One non-saturating SGD step of the generator; returns the loss before the step.
pub fn generator_step(
    generator: &mut Network,
    noise: &Matrix,
    critic: &mut dyn DiscriminatorOracle,
    lr: f64,
) -> Result<f64> {
    let (loss, grad) = generator_loss_and_gradient(generator, noise, critic)?;
    generator.sgd_step(&grad, lr)?;
    Ok(loss)
}

/// Discriminator step on `real` against `cfg.batch_fake` fresh fakes.
pub fn d_train_step(
    pair: &mut GanPair,
    real: &Batch,
    noise: &mut NoiseSource,
    cfg: &TrainConfig,
) -> Result<f64> {
    let z = noise.sample(cfg.batch_fake);
    let fake = pair.generator.forward(&z)?;
    discriminator_step(&mut pair.discriminator, real.inputs(), &fake, cfg.lr_d)
}

/// Generator step against an arbitrary critic, on `cfg.batch_fake` fresh noise vectors.
pub fn g_train_step_nonsaturating(
    generator: &mut Network,
    noise: &mut NoiseSource,
    cfg: &TrainConfig,
    critic: &mut dyn DiscriminatorOracle,
) -> Result<f64> {
    let z = noise.sample(cfg.batch_fake);
    generator_step(generator, &z, critic, cfg.lr_g)
}

impl GanPair {
    /// Generator step against this pair's own discriminator.
    pub fn g_step(&mut self, noise: &mut NoiseSource, cfg: &TrainConfig) -> Result<f64> {
        let mut critic = NetworkCritic(&self.discriminator);
        g_train_step_nonsaturating(&mut self.generator, noise, cfg, &mut critic)
    }
}

/// Plain alternating training on an in-memory sample matrix: each step draws
/// `d_steps_per_g_step` real minibatches (with replacement) for discriminator
/// steps, then takes one generator step. Returns the last (d_loss, g_loss).
pub fn train_alternating(
    pair: &mut GanPair,
    data: &Matrix,
    noise: &mut NoiseSource,
    rng: &mut SimRng,
    cfg: &TrainConfig,
    steps: usize,
) -> Result<(f64, f64)> {
    cfg.validate()?;
    let mut last = (f64::NAN, f64::NAN);
    for _ in 0..steps {
        for _ in 0..cfg.d_steps_per_g_step {
            let idx: Vec<usize> = (0..cfg.batch_real)
                .map(|_| rng.random_range(0..data.rows()))
                .collect();
            let batch = Batch::new(data.select_rows(&idx), None)?;
            last.0 = d_train_step(pair, &batch, noise, cfg)?;
        }
        last.1 = pair.g_step(noise, cfg)?;
    }
    Ok(last)
}
