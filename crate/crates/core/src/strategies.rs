//! The three multi-user GAN training loops and the single-user baseline.
//!
//! * **Federated**: users jointly train one discriminator through the
//!   parameter server ([`crate::protocol`]); the generator lives on the server
//!   and trains against the server's copy of the discriminator.
//! * **Averaged**: every user trains its own discriminator; the generator
//!   trains against the arithmetic mean of all users' scores.
//! * **RoundRobin**: within an epoch, user `j` trains its discriminator and the
//!   generator immediately takes one step against that discriminator alone,
//!   for `j = 0..U` in ascending order.
//! * **Baseline**: ordinary alternating GAN training on one dataset.
//!
//! One epoch of local training is one pass over the user's partition in
//! shuffled minibatches of `batch_real` (repeated `d_steps_per_g_step`
//! times), each paired with `batch_fake` generated samples. Fakes for a pass
//! are drawn in a single block from the generator's noise stream, then the
//! generator-step noise is drawn; all runners follow this order, which is what
//! makes a one-user round-robin run bitwise-identical to the baseline.
//!
//! Users only ever send gradients or discriminator feedback on generated
//! samples; their partition stays inside [`UserNode`].

use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, PartitionSet};
use crate::error::{Error, Result};
use crate::gan::{
    check_adversaries, critic_feedback, discriminator_loss_and_gradient, discriminator_step, generator_step,
    CriticFeedback, DiscriminatorOracle, MeanCritic, NetworkCritic, NoiseDistribution, NoiseSource, TrainConfig,
};
use crate::metrics::MetricsRecord;
use crate::nn::{GradVector, Matrix, Network, NetworkSpec, ParamVector};
use crate::protocol::{
    broadcast, select_upload, BroadcastReceiver, Channel, ChannelMessage, Party, Payload, SelectionPolicy,
    ServerState,
};
use crate::rng::{derive_seed, stream_rng, streams, SimRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    Federated,
    Averaged,
    RoundRobin,
    Baseline,
}

impl StrategyKind {
    pub fn name(&self) -> &'static str {
        match self {
            StrategyKind::Federated => "federated",
            StrategyKind::Averaged => "averaged",
            StrategyKind::RoundRobin => "round_robin",
            StrategyKind::Baseline => "baseline",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StrategyConfig {
    pub kind: StrategyKind,
    pub epochs: u64,
    pub users: usize,
    pub gan: TrainConfig,
    /// Server combination rule; Federated only.
    pub policy: Option<SelectionPolicy>,
    /// Epochs between fresh fake batches pushed to users; Federated only.
    pub fake_refresh: u64,
    /// Generator steps per protocol round; Federated only.
    pub g_steps: usize,
    /// Share of local gradient coordinates each user uploads; Federated only.
    pub upload_fraction: f64,
    /// Server learning rate; defaults to `gan.lr_d`, which keeps user and
    /// server copies of the discriminator in lockstep.
    pub lr_server: Option<f64>,
}

impl StrategyConfig {
    pub fn new(kind: StrategyKind, epochs: u64, users: usize, gan: TrainConfig) -> Self {
        Self {
            kind,
            epochs,
            users,
            gan,
            policy: (kind == StrategyKind::Federated).then_some(SelectionPolicy::MaxMagnitude),
            fake_refresh: 1,
            g_steps: 1,
            upload_fraction: 1.0,
            lr_server: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.gan.validate()?;
        if self.users == 0 {
            return Err(Error::Config("at least one user is required".into()));
        }
        if self.kind == StrategyKind::Baseline && self.users != 1 {
            return Err(Error::Config("the baseline trains exactly one user".into()));
        }
        if self.kind == StrategyKind::Federated {
            let policy = self
                .policy
                .ok_or_else(|| Error::Config("federated strategy requires a selection policy".into()))?;
            policy.validate()?;
            if self.fake_refresh == 0 || self.g_steps == 0 {
                return Err(Error::Config("fake_refresh and g_steps must be positive".into()));
            }
            if !(self.upload_fraction > 0.0 && self.upload_fraction <= 1.0) {
                return Err(Error::Config("upload_fraction must lie in (0, 1]".into()));
            }
            if let Some(lr) = self.lr_server {
                if !(lr > 0.0 && lr.is_finite()) {
                    return Err(Error::Config("lr_server must be positive".into()));
                }
            }
        }
        Ok(())
    }

    pub fn server_lr(&self) -> f64 {
        self.lr_server.unwrap_or(self.gan.lr_d)
    }
}

/// Outcome of one user's local pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalOutcome {
    pub mean_d_loss: f64,
    pub work_units: u64,
    pub steps: usize,
    pub wall_ms: f64,
}

/// Number of discriminator minibatch steps in one local epoch over `n` samples.
pub fn local_step_count(n: usize, cfg: &TrainConfig) -> usize {
    cfg.d_steps_per_g_step * n.div_ceil(cfg.batch_real)
}

/// One simulated participant. The partition never leaves this struct.
#[derive(Debug, Clone)]
pub struct UserNode {
    id: usize,
    data: Matrix,
    discriminator: Network,
    rng: SimRng,
    local_lr: f64,
    fake_cache: Option<Arc<Matrix>>,
}

impl UserNode {
    pub fn new(id: usize, data: Matrix, discriminator: Network, shuffle_rng: SimRng, local_lr: f64) -> Result<Self> {
        if data.rows() == 0 {
            return Err(Error::Partition(format!("user {id} has no samples")));
        }
        if data.cols() != discriminator.input_dim() {
            return Err(Error::shape("user data width", discriminator.input_dim(), data.cols()));
        }
        crate::gan::check_discriminator(&discriminator)?;
        Ok(Self {
            id,
            data,
            discriminator,
            rng: shuffle_rng,
            local_lr,
            fake_cache: None,
        })
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn party(&self) -> Party {
        Party::User(self.id)
    }

    pub fn partition_size(&self) -> usize {
        self.data.rows()
    }

    pub fn sample_dim(&self) -> usize {
        self.data.cols()
    }

    pub fn discriminator(&self) -> &Network {
        &self.discriminator
    }

    pub fn local_steps(&self, cfg: &TrainConfig) -> usize {
        local_step_count(self.data.rows(), cfg)
    }

    /// Minibatch index lists for one local epoch; a fresh shuffle of
    /// `0..n` per pass.
    fn minibatches(&mut self, cfg: &TrainConfig) -> Vec<Vec<usize>> {
        let n = self.data.rows();
        let mut out = Vec::with_capacity(self.local_steps(cfg));
        for _ in 0..cfg.d_steps_per_g_step {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut self.rng);
            out.extend(order.chunks(cfg.batch_real).map(<[usize]>::to_vec));
        }
        out
    }

    fn check_fakes(&self, fakes: &Matrix, cfg: &TrainConfig) -> Result<()> {
        let need = self.local_steps(cfg) * cfg.batch_fake;
        if fakes.rows() < need || fakes.cols() != self.data.cols() {
            return Err(Error::shape(
                "fake batch for local pass",
                format!("{need} x {}", self.data.cols()),
                format!("{} x {}", fakes.rows(), fakes.cols()),
            ));
        }
        Ok(())
    }

    /// One local epoch of discriminator SGD against the given fakes; step
    /// `s` uses fake rows `s·batch_fake .. (s+1)·batch_fake`.
    pub fn train_local(&mut self, fakes: &Matrix, cfg: &TrainConfig, timed: bool) -> Result<LocalOutcome> {
        self.check_fakes(fakes, cfg)?;
        let start = timed.then(Instant::now);
        let batches = self.minibatches(cfg);
        let mut loss = 0.0;
        for (s, idx) in batches.iter().enumerate() {
            let real = self.data.select_rows(idx);
            let fake = fakes.slice_rows(s * cfg.batch_fake..(s + 1) * cfg.batch_fake);
            loss += discriminator_step(&mut self.discriminator, &real, &fake, cfg.lr_d)?;
        }
        Ok(LocalOutcome {
            mean_d_loss: loss / batches.len() as f64,
            work_units: (cfg.d_steps_per_g_step * self.data.rows()) as u64,
            steps: batches.len(),
            wall_ms: elapsed_ms(start),
        })
    }

    /// Runs the local epoch on a scratch copy of the discriminator and returns
    /// the summed minibatch gradients. The local model itself only moves when
    /// the server's aggregate arrives.
    pub fn compute_update(&mut self, fakes: &Matrix, cfg: &TrainConfig, timed: bool) -> Result<(LocalOutcome, GradVector)> {
        self.check_fakes(fakes, cfg)?;
        let start = timed.then(Instant::now);
        let batches = self.minibatches(cfg);
        let mut scratch = self.discriminator.clone();
        let mut total = ParamVector::zeros(scratch.params().layout().clone());
        let mut loss = 0.0;
        for (s, idx) in batches.iter().enumerate() {
            let real = self.data.select_rows(idx);
            let fake = fakes.slice_rows(s * cfg.batch_fake..(s + 1) * cfg.batch_fake);
            let (l, g) = discriminator_loss_and_gradient(&scratch, &real, &fake)?;
            scratch.sgd_step(&g, cfg.lr_d)?;
            total.axpy(1.0, &g)?;
            loss += l;
        }
        let outcome = LocalOutcome {
            mean_d_loss: loss / batches.len() as f64,
            work_units: (cfg.d_steps_per_g_step * self.data.rows()) as u64,
            steps: batches.len(),
            wall_ms: elapsed_ms(start),
        };
        Ok((outcome, total))
    }

    /// Scores and score gradients of this user's discriminator on generated samples.
    pub fn feedback(&self, samples: &Matrix) -> Result<CriticFeedback> {
        critic_feedback(&self.discriminator, samples)
    }
}

impl BroadcastReceiver for UserNode {
    fn party(&self) -> Party {
        Party::User(self.id)
    }

    fn receive_global(&mut self, agg: &GradVector) -> Result<()> {
        self.discriminator.sgd_step(agg, self.local_lr)
    }
}

/// A user's discriminator seen from the generator through the channel:
/// samples go out as `FakeSampleBatch`, feedback comes back as `ScalarScores`.
pub struct RemoteCritic<'a> {
    user: &'a UserNode,
    channel: &'a Channel,
    epoch: u64,
}

impl<'a> RemoteCritic<'a> {
    pub fn new(user: &'a UserNode, channel: &'a Channel, epoch: u64) -> Self {
        Self { user, channel, epoch }
    }
}

impl DiscriminatorOracle for RemoteCritic<'_> {
    fn input_dim(&self) -> usize {
        self.user.discriminator.input_dim()
    }

    fn evaluate(&mut self, samples: &Matrix) -> Result<CriticFeedback> {
        let user = self.user.party();
        self.channel.send(
            self.epoch,
            Party::Generator,
            user,
            Payload::FakeSampleBatch(Arc::new(samples.clone())),
        )?;
        let feedback = self.user.feedback(samples)?;
        self.channel.send(
            self.epoch,
            user,
            Party::Generator,
            Payload::ScalarScores(Arc::new(feedback.clone())),
        )?;
        Ok(feedback)
    }
}

/// The generator and its noise stream.
#[derive(Debug, Clone)]
pub struct GeneratorSide {
    network: Network,
    noise: NoiseSource,
}

impl GeneratorSide {
    pub fn new(network: Network, noise: NoiseSource) -> Result<Self> {
        if noise.dim() != network.input_dim() {
            return Err(Error::shape("noise dim", network.input_dim(), noise.dim()));
        }
        Ok(Self { network, noise })
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn into_network(self) -> Network {
        self.network
    }

    pub fn fakes(&mut self, n: usize) -> Result<Matrix> {
        let z = self.noise.sample(n);
        self.network.forward(&z)
    }

    pub fn step(&mut self, critic: &mut dyn DiscriminatorOracle, cfg: &TrainConfig) -> Result<f64> {
        let z = self.noise.sample(cfg.batch_fake);
        generator_step(&mut self.network, &z, critic, cfg.lr_g)
    }
}

/// Called with the number of completed epochs (starting at 0, before any
/// training) and the current generator.
pub trait EpochObserver {
    fn after_epoch(&mut self, completed: u64, generator: &Network) -> Result<()>;
}

#[derive(Default)]
pub struct RunOptions<'a> {
    /// Worker threads for user-local training in Federated and Averaged; 0 or 1 runs inline.
    pub workers: usize,
    pub retain_payloads: bool,
    pub measure_wall_clock: bool,
    pub observer: Option<&'a mut dyn EpochObserver>,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub kind: StrategyKind,
    pub epochs_completed: u64,
    pub metrics: Vec<MetricsRecord>,
    pub generator: Network,
    /// Final discriminators (server model first for Federated, then users).
    pub discriminators: Vec<(Party, Network)>,
    pub message_log: Vec<ChannelMessage>,
}

/// A run that stopped early; `partial` holds everything up to the failure.
#[derive(Debug)]
pub struct RunFailure {
    pub partial: Box<RunResult>,
    pub error: Error,
}

impl std::fmt::Display for RunFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "run failed after {} epochs: {}", self.partial.epochs_completed, self.error)
    }
}

impl std::error::Error for RunFailure {}

pub type RunOutcome = std::result::Result<RunResult, RunFailure>;

fn elapsed_ms(start: Option<Instant>) -> f64 {
    start.map_or(0.0, |s| s.elapsed().as_secs_f64() * 1e3)
}

struct Driver<'a> {
    cfg: StrategyConfig,
    timed: bool,
    observer: Option<&'a mut dyn EpochObserver>,
    pool: Option<rayon::ThreadPool>,
    channel: Channel,
    metrics: Vec<MetricsRecord>,
    completed: u64,
}

impl<'a> Driver<'a> {
    fn new(cfg: &StrategyConfig, opts: RunOptions<'a>) -> Result<Self> {
        let pool = if opts.workers > 1 {
            Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(opts.workers)
                    .build()
                    .map_err(|e| Error::Config(format!("worker pool: {e}")))?,
            )
        } else {
            None
        };
        Ok(Self {
            cfg: cfg.clone(),
            timed: opts.measure_wall_clock,
            observer: opts.observer,
            pool,
            channel: Channel::new(opts.retain_payloads),
            metrics: Vec::new(),
            completed: 0,
        })
    }

    fn now(&self) -> Option<Instant> {
        self.timed.then(Instant::now)
    }

    fn observe(&mut self, generator: &Network) -> Result<()> {
        match self.observer.as_mut() {
            Some(o) => o.after_epoch(self.completed, generator),
            None => Ok(()),
        }
    }

    /// Runs `f` for every user, in parallel when a pool exists; results keep user order.
    fn map_users<T, F>(&self, users: &mut [UserNode], f: F) -> Result<Vec<T>>
    where
        T: Send,
        F: Fn(usize, &mut UserNode) -> Result<T> + Sync + Send,
    {
        match &self.pool {
            Some(pool) => pool.install(|| {
                users
                    .par_iter_mut()
                    .enumerate()
                    .map(|(i, u)| f(i, u))
                    .collect::<Result<Vec<T>>>()
            }),
            None => users.iter_mut().enumerate().map(|(i, u)| f(i, u)).collect(),
        }
    }

    fn record_user(&mut self, epoch: u64, user: usize, o: &LocalOutcome) {
        self.metrics.push(MetricsRecord {
            epoch,
            user: Some(user),
            d_loss: Some(o.mean_d_loss),
            g_loss: None,
            work_units: o.work_units,
            wall_ms: o.wall_ms,
        });
    }

    fn record_generator(&mut self, epoch: u64, losses: &[f64], start: Option<Instant>) {
        self.metrics.push(MetricsRecord {
            epoch,
            user: None,
            d_loss: None,
            g_loss: Some(losses.iter().sum::<f64>() / losses.len() as f64),
            work_units: losses.len() as u64,
            wall_ms: elapsed_ms(start),
        });
    }

    fn finish(
        self,
        outcome: Result<()>,
        generator: Network,
        discriminators: Vec<(Party, Network)>,
    ) -> RunOutcome {
        let result = RunResult {
            kind: self.cfg.kind,
            epochs_completed: self.completed,
            metrics: self.metrics,
            generator,
            discriminators,
            message_log: self.channel.into_log(),
        };
        match outcome {
            Ok(()) => Ok(result),
            Err(error) => Err(RunFailure {
                partial: Box::new(result),
                error,
            }),
        }
    }
}

fn early_failure(kind: StrategyKind, generator: Network, error: Error) -> RunFailure {
    RunFailure {
        partial: Box::new(RunResult {
            kind,
            epochs_completed: 0,
            metrics: Vec::new(),
            generator,
            discriminators: Vec::new(),
            message_log: Vec::new(),
        }),
        error,
    }
}

fn check_users(users: &[UserNode], generator: &GeneratorSide, cfg: &StrategyConfig) -> Result<()> {
    cfg.validate()?;
    if users.len() != cfg.users {
        return Err(Error::Config(format!(
            "config expects {} users, {} supplied",
            cfg.users,
            users.len()
        )));
    }
    for (k, u) in users.iter().enumerate() {
        if u.id != k {
            return Err(Error::Config(format!("user ids must be 0..U in order, found {} at {k}", u.id)));
        }
        check_adversaries(&generator.network, &u.discriminator)?;
    }
    Ok(())
}

fn user_discriminators(users: Vec<UserNode>) -> Vec<(Party, Network)> {
    users.into_iter().map(|u| (u.party(), u.discriminator)).collect()
}

/// Federated discriminator, server-side generator.
pub fn run_federated(
    mut users: Vec<UserNode>,
    mut server: ServerState,
    mut generator: GeneratorSide,
    cfg: &StrategyConfig,
    opts: RunOptions<'_>,
) -> RunOutcome {
    let checked = check_users(&users, &generator, cfg).and_then(|()| {
        for u in &users {
            if u.discriminator.spec() != server.spec() {
                return Err(Error::Spec(format!("user {} does not share the server architecture", u.id)));
            }
        }
        if cfg.kind != StrategyKind::Federated {
            return Err(Error::Config("run_federated called with a non-federated config".into()));
        }
        Ok(())
    });
    if let Err(e) = checked {
        return Err(early_failure(cfg.kind, generator.into_network(), e));
    }
    let mut d = match Driver::new(cfg, opts) {
        Ok(d) => d,
        Err(e) => return Err(early_failure(cfg.kind, generator.into_network(), e)),
    };
    let outcome = federated_epochs(&mut d, &mut users, &mut server, &mut generator);
    let mut discs = Vec::with_capacity(users.len() + 1);
    if let Ok(model) = server.model() {
        discs.push((Party::Server, model));
    }
    discs.extend(user_discriminators(users));
    d.finish(outcome, generator.into_network(), discs)
}

fn federated_epochs(
    d: &mut Driver<'_>,
    users: &mut [UserNode],
    server: &mut ServerState,
    generator: &mut GeneratorSide,
) -> Result<()> {
    let cfg = d.cfg.clone();
    let gan = cfg.gan;
    d.observe(&generator.network)?;
    for epoch in 0..cfg.epochs {
        let start = d.now();
        if epoch % cfg.fake_refresh == 0 {
            for u in users.iter_mut() {
                let fakes = Arc::new(generator.fakes(u.local_steps(&gan) * gan.batch_fake)?);
                d.channel
                    .send(epoch, Party::Server, u.party(), Payload::FakeSampleBatch(fakes.clone()))?;
                u.fake_cache = Some(fakes);
            }
        }
        let timed = d.timed;
        let updates = d.map_users(users, |_, u| {
            let fakes = u.fake_cache.clone().expect("fakes are pushed on the first epoch");
            u.compute_update(&fakes, &gan, timed)
        })?;

        let mut uploads = Vec::with_capacity(users.len());
        for (u, (outcome, grad)) in users.iter().zip(&updates) {
            d.record_user(epoch, u.id, outcome);
            let upload = select_upload(grad, cfg.upload_fraction, u.id, server.epoch())?;
            d.channel
                .send(epoch, u.party(), Party::Server, Payload::GradUpload(upload.clone()))?;
            uploads.push(upload);
        }
        let agg = server.aggregate(&uploads)?;
        server.apply_global(&agg)?;
        broadcast(&agg, epoch, users, &d.channel)?;

        let critic_net = server.model()?;
        let mut losses = Vec::with_capacity(cfg.g_steps);
        for _ in 0..cfg.g_steps {
            losses.push(generator.step(&mut NetworkCritic(&critic_net), &gan)?);
        }
        d.record_generator(epoch, &losses, start);
        d.completed = epoch + 1;
        d.observe(&generator.network)?;
    }
    Ok(())
}

/// Generator trained against the mean of all users' discriminator scores.
pub fn run_averaged(
    mut users: Vec<UserNode>,
    mut generator: GeneratorSide,
    cfg: &StrategyConfig,
    opts: RunOptions<'_>,
) -> RunOutcome {
    let mut d = match check_users(&users, &generator, cfg).and_then(|()| Driver::new(cfg, opts)) {
        Ok(d) => d,
        Err(e) => return Err(early_failure(cfg.kind, generator.into_network(), e)),
    };
    let outcome = averaged_epochs(&mut d, &mut users, &mut generator);
    d.finish(outcome, generator.into_network(), user_discriminators(users))
}

fn averaged_epochs(d: &mut Driver<'_>, users: &mut [UserNode], generator: &mut GeneratorSide) -> Result<()> {
    let cfg = d.cfg.clone();
    let gan = cfg.gan;
    d.observe(&generator.network)?;
    for epoch in 0..cfg.epochs {
        let start = d.now();
        let mut fakes = Vec::with_capacity(users.len());
        for u in users.iter() {
            let f = Arc::new(generator.fakes(u.local_steps(&gan) * gan.batch_fake)?);
            d.channel
                .send(epoch, Party::Generator, u.party(), Payload::FakeSampleBatch(f.clone()))?;
            fakes.push(f);
        }
        let timed = d.timed;
        let outcomes = d.map_users(users, |i, u| u.train_local(&fakes[i], &gan, timed))?;
        for (u, o) in users.iter().zip(&outcomes) {
            d.record_user(epoch, u.id, o);
        }
        let remotes = users
            .iter()
            .map(|u| RemoteCritic::new(u, &d.channel, epoch))
            .collect();
        let mut critic = MeanCritic::new(remotes)?;
        let loss = generator.step(&mut critic, &gan)?;
        d.record_generator(epoch, &[loss], start);
        d.completed = epoch + 1;
        d.observe(&generator.network)?;
    }
    Ok(())
}

/// One generator visiting each user's discriminator in turn.
pub fn run_round_robin(
    mut users: Vec<UserNode>,
    mut generator: GeneratorSide,
    cfg: &StrategyConfig,
    opts: RunOptions<'_>,
) -> RunOutcome {
    let mut d = match check_users(&users, &generator, cfg).and_then(|()| Driver::new(cfg, opts)) {
        Ok(d) => d,
        Err(e) => return Err(early_failure(cfg.kind, generator.into_network(), e)),
    };
    let outcome = round_robin_epochs(&mut d, &mut users, &mut generator);
    d.finish(outcome, generator.into_network(), user_discriminators(users))
}

fn round_robin_epochs(d: &mut Driver<'_>, users: &mut [UserNode], generator: &mut GeneratorSide) -> Result<()> {
    let cfg = d.cfg.clone();
    let gan = cfg.gan;
    d.observe(&generator.network)?;
    for epoch in 0..cfg.epochs {
        let start = d.now();
        let mut losses = Vec::with_capacity(users.len());
        let mut outcomes = Vec::with_capacity(users.len());
        for u in users.iter_mut() {
            let fakes = Arc::new(generator.fakes(u.local_steps(&gan) * gan.batch_fake)?);
            d.channel
                .send(epoch, Party::Generator, u.party(), Payload::FakeSampleBatch(fakes.clone()))?;
            outcomes.push((u.id, u.train_local(&fakes, &gan, d.timed)?));
            let mut critic = RemoteCritic::new(u, &d.channel, epoch);
            losses.push(generator.step(&mut critic, &gan)?);
        }
        for (id, o) in &outcomes {
            d.record_user(epoch, *id, o);
        }
        d.record_generator(epoch, &losses, start);
        d.completed = epoch + 1;
        d.observe(&generator.network)?;
    }
    Ok(())
}

/// Standard single-discriminator alternation on `data`. Written without the
/// user/channel machinery; records use user id 0.
pub fn run_baseline(
    data: &Matrix,
    mut discriminator: Network,
    mut shuffle_rng: SimRng,
    mut generator: GeneratorSide,
    cfg: &StrategyConfig,
    opts: RunOptions<'_>,
) -> RunOutcome {
    let checked = cfg
        .gan
        .validate()
        .and_then(|()| check_adversaries(&generator.network, &discriminator))
        .and_then(|()| {
            if data.rows() == 0 || data.cols() != discriminator.input_dim() {
                Err(Error::shape("baseline data", discriminator.input_dim(), data.cols()))
            } else {
                Ok(())
            }
        });
    if let Err(e) = checked {
        return Err(early_failure(cfg.kind, generator.into_network(), e));
    }
    let mut d = match Driver::new(cfg, opts) {
        Ok(d) => d,
        Err(e) => return Err(early_failure(cfg.kind, generator.into_network(), e)),
    };
    let gan = cfg.gan;
    let outcome = (|| -> Result<()> {
        d.observe(&generator.network)?;
        let n = data.rows();
        for epoch in 0..cfg.epochs {
            let start = d.now();
            let steps = local_step_count(n, &gan);
            let fakes = generator.fakes(steps * gan.batch_fake)?;
            let d_start = d.now();
            let mut loss = 0.0;
            let mut s = 0;
            for _ in 0..gan.d_steps_per_g_step {
                let mut order: Vec<usize> = (0..n).collect();
                order.shuffle(&mut shuffle_rng);
                for idx in order.chunks(gan.batch_real) {
                    let real = data.select_rows(idx);
                    let fake = fakes.slice_rows(s * gan.batch_fake..(s + 1) * gan.batch_fake);
                    loss += discriminator_step(&mut discriminator, &real, &fake, gan.lr_d)?;
                    s += 1;
                }
            }
            let outcome = LocalOutcome {
                mean_d_loss: loss / steps as f64,
                work_units: (gan.d_steps_per_g_step * n) as u64,
                steps,
                wall_ms: elapsed_ms(d_start),
            };
            d.record_user(epoch, 0, &outcome);
            let g_loss = generator.step(&mut NetworkCritic(&discriminator), &gan)?;
            d.record_generator(epoch, &[g_loss], start);
            d.completed = epoch + 1;
            d.observe(&generator.network)?;
        }
        Ok(())
    })();
    d.finish(outcome, generator.into_network(), vec![(Party::User(0), discriminator)])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    pub data: u64,
    pub init: u64,
    pub train: u64,
}

impl Seeds {
    pub fn all(seed: u64) -> Self {
        Self {
            data: seed,
            init: seed,
            train: seed,
        }
    }
}

/// Everything a runner needs, built deterministically from seeds.
#[derive(Debug, Clone)]
pub struct Participants {
    pub users: Vec<UserNode>,
    pub generator: GeneratorSide,
}

/// Builds one user per partition. All discriminators start from the same
/// initialization (the users agree on the architecture); user `u` shuffles
/// with train-stream `USER_BASE + u`, and the generator draws noise from the
/// `GENERATOR_NOISE` stream.
pub fn build_participants(
    ds: &Dataset,
    parts: &PartitionSet,
    generator_spec: NetworkSpec,
    discriminator_spec: NetworkSpec,
    noise: NoiseDistribution,
    seeds: &Seeds,
    cfg: &StrategyConfig,
) -> Result<Participants> {
    let generator = Network::build(generator_spec, derive_seed(seeds.init, streams::GENERATOR_INIT))?;
    let disc = Network::build(discriminator_spec, derive_seed(seeds.init, streams::DISCRIMINATOR_INIT))?;
    check_adversaries(&generator, &disc)?;
    if ds.dim() != disc.input_dim() {
        return Err(Error::shape("dataset width", disc.input_dim(), ds.dim()));
    }
    let noise = NoiseSource::from_rng(
        generator.input_dim(),
        noise,
        stream_rng(seeds.train, streams::GENERATOR_NOISE),
    );
    let users = parts
        .parts
        .iter()
        .enumerate()
        .map(|(u, p)| {
            UserNode::new(
                u,
                ds.samples().select_rows(&p.indices),
                disc.clone(),
                stream_rng(seeds.train, streams::USER_BASE + u as u64),
                cfg.gan.lr_d,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Participants {
        users,
        generator: GeneratorSide::new(generator, noise)?,
    })
}

/// Uniform entry point: dispatches on `cfg.kind`. The baseline uses the
/// single participant's data and discriminator.
pub fn run_strategy(participants: Participants, cfg: &StrategyConfig, opts: RunOptions<'_>) -> RunOutcome {
    let Participants { users, generator } = participants;
    match cfg.kind {
        StrategyKind::Federated => {
            let server = users
                .first()
                .ok_or_else(|| Error::Config("no users".into()))
                .and_then(|u| {
                    let disc = &u.discriminator;
                    ServerState::new(
                        disc.spec().clone(),
                        disc.params().clone(),
                        cfg.policy.unwrap_or(SelectionPolicy::MaxMagnitude),
                        cfg.server_lr(),
                    )
                });
            match server {
                Ok(server) => run_federated(users, server, generator, cfg, opts),
                Err(e) => Err(early_failure(cfg.kind, generator.into_network(), e)),
            }
        }
        StrategyKind::Averaged => run_averaged(users, generator, cfg, opts),
        StrategyKind::RoundRobin => run_round_robin(users, generator, cfg, opts),
        StrategyKind::Baseline => {
            if users.len() != 1 {
                let e = Error::Config(format!("baseline needs exactly one participant, got {}", users.len()));
                return Err(early_failure(cfg.kind, generator.into_network(), e));
            }
            let user = users.into_iter().next().expect("one user");
            run_baseline(&user.data, user.discriminator, user.rng, generator, cfg, opts)
        }
    }
}
