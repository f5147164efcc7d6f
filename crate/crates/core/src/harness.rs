//! Experiment runner: config parsing, seeding, strategy execution, coverage
//! evaluation and the CSV/text reports written to the output directory.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{load_idx, make_ring, partition, write_samples_csv, Dataset, Partition, PartitionScheme, PartitionSet};
use crate::error::{Error, Result};
use crate::gan::{NoiseDistribution, NoiseSource, TrainConfig};
use crate::metrics::{
    mode_coverage, read_coverage_csv, read_metrics_csv, write_coverage_csv, write_metrics_csv, CoveragePoint,
    CoverageReport, MetricsRecord,
};
use crate::nn::gradcheck::{self, GradcheckOptions, GradcheckReport};
use crate::nn::{Matrix, Network, NetworkSpec, Preset, DEFAULT_LEAKY_SLOPE};
use crate::protocol::{audit_channel, scan_for_raw_rows, write_channel_log, AuditReport, SelectionPolicy};
use crate::rng::{stream_rng, streams};
use crate::strategies::{
    build_participants, run_strategy, EpochObserver, RunOptions, RunResult, Seeds, StrategyConfig, StrategyKind,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;
pub const EXIT_ASSERT: i32 = 4;

/// Process exit code for a failed experiment.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::NonFinite { .. } | Error::NonFiniteValue(_) => EXIT_NUMERIC,
        Error::Io(_) | Error::Csv(_) => EXIT_IO,
        _ => EXIT_CONFIG,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    Ring {
        modes: usize,
        radius: f64,
        sigma: f64,
        per_mode: usize,
    },
    Idx {
        images: PathBuf,
        labels: PathBuf,
        /// Keep only the first `limit` samples.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        limit: Option<usize>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrategySection {
    pub kind: StrategyKind,
    pub epochs: u64,
    /// Defaults to the number of partitions.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub users: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy: Option<SelectionPolicy>,
    #[serde(default = "one_u64")]
    pub fake_refresh: u64,
    #[serde(default = "one_usize")]
    pub g_steps: usize,
    #[serde(default = "one_f64")]
    pub upload_fraction: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lr_server: Option<f64>,
    /// Partition the baseline trains on; the whole dataset when no partition is given.
    #[serde(default)]
    pub baseline_user: usize,
}

fn one_u64() -> u64 {
    1
}

fn one_usize() -> usize {
    1
}

fn one_f64() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworksConfig {
    pub preset: Preset,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hidden: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_dim: Option<usize>,
    #[serde(default = "default_slope")]
    pub slope: f64,
    #[serde(default)]
    pub noise: NoiseDistribution,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<NetworkSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub discriminator: Option<NetworkSpec>,
}

fn default_slope() -> f64 {
    DEFAULT_LEAKY_SLOPE
}

impl NetworksConfig {
    pub fn hidden(&self) -> usize {
        self.hidden.unwrap_or_else(|| self.preset.default_hidden())
    }

    pub fn noise_dim(&self) -> usize {
        self.noise_dim.unwrap_or(match self.preset {
            Preset::Mnist => 100,
            Preset::Ring => 2,
        })
    }

    pub fn resolve(&self, sample_dim: usize) -> Result<(NetworkSpec, NetworkSpec)> {
        let generator = match &self.generator {
            Some(s) => s.clone(),
            None => self.preset.generator(self.noise_dim(), self.hidden(), sample_dim)?,
        };
        let discriminator = match &self.discriminator {
            Some(s) => s.clone(),
            None => self.preset.discriminator(sample_dim, self.hidden(), self.slope)?,
        };
        Ok((generator, discriminator))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    #[serde(default = "default_eval_samples")]
    pub samples: usize,
    #[serde(default = "default_threshold")]
    pub threshold_count: usize,
    /// Epochs between coverage evaluations; `max(1, epochs / 20)` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cadence: Option<u64>,
    /// Coverage radius unit; the ring's sigma when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
}

fn default_eval_samples() -> usize {
    2000
}

fn default_threshold() -> usize {
    20
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            samples: default_eval_samples(),
            threshold_count: default_threshold(),
            cadence: None,
            sigma: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_out_dir")]
    pub dir: PathBuf,
    /// Record wall-clock milliseconds; off keeps metrics.csv byte-reproducible.
    #[serde(default)]
    pub wall_clock: bool,
    /// Keep message payloads for the bitwise raw-row scan.
    #[serde(default)]
    pub retain_payloads: bool,
    /// Worker threads; defaults to the user count capped at hardware parallelism.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("runs/latest")
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: default_out_dir(),
            wall_clock: false,
            retain_payloads: false,
            workers: None,
        }
    }
}

/// Thresholds checked in `--assert` mode.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssertConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_covered_modes: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_covered_modes: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_quality: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub partition: Option<PartitionScheme>,
    pub strategy: StrategySection,
    #[serde(default)]
    pub train: TrainConfig,
    pub networks: NetworksConfig,
    #[serde(default = "default_seeds")]
    pub seeds: Seeds,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default, rename = "assert", skip_serializing_if = "Option::is_none")]
    pub assertions: Option<AssertConfig>,
}

fn default_seeds() -> Seeds {
    Seeds::all(0)
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
            _ => Error::Io(e),
        })?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("experiment config serializes")
    }

    pub fn cadence(&self) -> u64 {
        self.eval.cadence.unwrap_or((self.strategy.epochs / 20).max(1))
    }

    /// Field checks that need no data.
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        match &self.dataset {
            DatasetConfig::Ring {
                modes,
                radius,
                sigma,
                per_mode,
            } => {
                if *modes == 0 || *per_mode == 0 || !(*sigma > 0.0) || !radius.is_finite() {
                    return Err(Error::Config("ring needs modes, per_mode >= 1 and sigma > 0".into()));
                }
            }
            DatasetConfig::Idx { limit, .. } => {
                if *limit == Some(0) {
                    return Err(Error::Config("idx limit must be positive".into()));
                }
            }
        }
        if self.eval.samples == 0 || self.eval.threshold_count == 0 || self.eval.cadence == Some(0) {
            return Err(Error::Config("eval samples, threshold_count and cadence must be positive".into()));
        }
        if let Some(s) = self.eval.sigma {
            if !(s > 0.0) {
                return Err(Error::Config("eval sigma must be positive".into()));
            }
        }
        if self.output.workers == Some(0) {
            return Err(Error::Config("workers must be positive".into()));
        }
        if !(self.networks.slope > 0.0 && self.networks.slope < 1.0) {
            return Err(Error::Config("leaky slope must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

/// A config resolved against its data: everything needed to start training.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub config: ExperimentConfig,
    pub dataset: Dataset,
    pub partitions: PartitionSet,
    pub strategy: StrategyConfig,
    pub generator_spec: NetworkSpec,
    pub discriminator_spec: NetworkSpec,
    pub workers: usize,
}

pub fn load_dataset(cfg: &DatasetConfig, seed: u64) -> Result<Dataset> {
    match cfg {
        DatasetConfig::Ring {
            modes,
            radius,
            sigma,
            per_mode,
        } => make_ring(*modes, *radius, *sigma, *per_mode, seed),
        DatasetConfig::Idx { images, labels, limit } => {
            let ds = load_idx(images, labels)?;
            match limit {
                Some(n) if *n < ds.len() => Ok(ds.subset(&(0..*n).collect::<Vec<_>>())),
                _ => Ok(ds),
            }
        }
    }
}

/// Validates the config, builds the dataset and partitions and resolves all
/// defaults. Nothing is trained or written.
pub fn prepare(mut config: ExperimentConfig) -> Result<Prepared> {
    config.validate()?;
    let dataset = load_dataset(&config.dataset, crate::rng::derive_seed(config.seeds.data, streams::DATASET))?;
    let all = || PartitionSet {
        parts: vec![Partition {
            owner: 0,
            indices: (0..dataset.len()).collect(),
        }],
    };
    let mut partitions = match &config.partition {
        Some(scheme) => partition(&dataset, scheme)?,
        None => all(),
    };
    let s = &config.strategy;
    if s.kind == StrategyKind::Baseline {
        let chosen = partitions
            .parts
            .get(s.baseline_user)
            .ok_or_else(|| Error::Config(format!("baseline_user {} has no partition", s.baseline_user)))?;
        partitions = PartitionSet {
            parts: vec![Partition {
                owner: 0,
                indices: chosen.indices.clone(),
            }],
        };
    }
    let users = partitions.users();
    if let Some(u) = s.users {
        if u != users {
            return Err(Error::Config(format!("strategy.users = {u} but the partition yields {users}")));
        }
    }
    config.strategy.users = Some(users);
    let s = &config.strategy;
    let policy = match s.kind {
        StrategyKind::Federated => Some(s.policy.unwrap_or(SelectionPolicy::MaxMagnitude)),
        _ => s.policy,
    };
    config.strategy.policy = policy;
    let s = &config.strategy;
    let strategy = StrategyConfig {
        kind: s.kind,
        epochs: s.epochs,
        users,
        gan: config.train,
        policy,
        fake_refresh: s.fake_refresh,
        g_steps: s.g_steps,
        upload_fraction: s.upload_fraction,
        lr_server: s.lr_server,
    };
    strategy.validate()?;
    if config.eval.sigma.is_none() {
        if let DatasetConfig::Ring { sigma, .. } = config.dataset {
            config.eval.sigma = Some(sigma);
        }
    }
    config.eval.cadence = Some(config.cadence());
    let hw = std::thread::available_parallelism().map_or(1, |n| n.get());
    let workers = config.output.workers.unwrap_or_else(|| users.min(hw)).max(1);
    config.output.workers = Some(workers);
    config.networks.hidden = Some(config.networks.hidden());
    config.networks.noise_dim = Some(config.networks.noise_dim());
    let (generator_spec, discriminator_spec) = config.networks.resolve(dataset.dim())?;
    crate::gan::check_adversaries(
        &Network::build(generator_spec.clone(), 0)?,
        &Network::build(discriminator_spec.clone(), 0)?,
    )?;
    if discriminator_spec.input_dim() != dataset.dim() {
        return Err(Error::shape("discriminator input vs dataset", dataset.dim(), discriminator_spec.input_dim()));
    }
    Ok(Prepared {
        config,
        dataset,
        partitions,
        strategy,
        generator_spec,
        discriminator_spec,
        workers,
    })
}

/// Evaluates coverage on a fixed noise batch at the configured cadence.
struct CoverageObserver<'a> {
    noise: Matrix,
    centers: Option<&'a Matrix>,
    sigma: f64,
    threshold: usize,
    cadence: u64,
    epochs: u64,
    points: Vec<CoveragePoint>,
    last: Option<CoverageReport>,
}

impl EpochObserver for CoverageObserver<'_> {
    fn after_epoch(&mut self, completed: u64, generator: &Network) -> Result<()> {
        let Some(centers) = self.centers else {
            return Ok(());
        };
        if completed % self.cadence != 0 && completed != self.epochs {
            return Ok(());
        }
        let samples = generator.forward(&self.noise)?;
        let report = mode_coverage(&samples, centers, self.sigma, self.threshold)?;
        self.points.push(CoveragePoint {
            epoch: completed,
            covered_modes: report.covered_modes,
            quality: report.high_quality_fraction,
        });
        self.last = Some(report);
        Ok(())
    }
}

/// What a completed (or partially completed) experiment produced.
#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub out_dir: PathBuf,
    pub run: RunResult,
    pub coverage: Vec<CoveragePoint>,
    pub final_coverage: Option<CoverageReport>,
    pub audit: AuditReport,
    /// Threshold violations; only populated when asserting.
    pub assert_failures: Vec<String>,
}

impl ExperimentReport {
    pub fn exit_code(&self) -> i32 {
        if self.assert_failures.is_empty() {
            EXIT_OK
        } else {
            EXIT_ASSERT
        }
    }
}

/// Command-line overrides applied on top of a config document.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub workers: Option<usize>,
    pub assert: bool,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut ExperimentConfig) {
        if let Some(seed) = self.seed {
            cfg.seeds = Seeds::all(seed);
        }
        if let Some(out) = &self.out {
            cfg.output.dir = out.clone();
        }
        if let Some(w) = self.workers {
            cfg.output.workers = Some(w);
        }
    }
}

/// Failure after output was partially written.
#[derive(Debug)]
pub struct ExperimentFailure {
    pub error: Error,
    pub partial: Option<Box<ExperimentReport>>,
}

impl From<Error> for ExperimentFailure {
    fn from(error: Error) -> Self {
        Self { error, partial: None }
    }
}

impl std::fmt::Display for ExperimentFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        self.error.fmt(f)
    }
}

impl std::error::Error for ExperimentFailure {}

impl ExperimentFailure {
    pub fn exit_code(&self) -> i32 {
        exit_code(&self.error)
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn write_checkpoint(dir: &Path, name: &str, net: &Network) -> Result<()> {
    fs::write(dir.join(format!("{name}.toml")), net.spec().to_toml())?;
    let mut out = create(&dir.join(format!("{name}.bin")))?;
    net.params().write_blob(&mut out)?;
    out.flush()?;
    Ok(())
}

/// Runs one experiment end to end and writes every report file.
pub fn run_experiment(config: ExperimentConfig, overrides: &Overrides) -> std::result::Result<ExperimentReport, ExperimentFailure> {
    let mut config = config;
    overrides.apply(&mut config);
    let prepared = prepare(config)?;
    run_prepared(&prepared, overrides.assert)
}

pub fn run_prepared(p: &Prepared, assert: bool) -> std::result::Result<ExperimentReport, ExperimentFailure> {
    let cfg = &p.config;
    let out_dir = cfg.output.dir.clone();
    fs::create_dir_all(out_dir.join("checkpoint")).map_err(Error::from)?;
    fs::write(out_dir.join("config_echo.toml"), cfg.to_toml()).map_err(Error::from)?;

    let participants = build_participants(
        &p.dataset,
        &p.partitions,
        p.generator_spec.clone(),
        p.discriminator_spec.clone(),
        cfg.networks.noise,
        &cfg.seeds,
        &p.strategy,
    )?;
    let noise_dim = participants.generator.network().input_dim();
    let mut eval_noise = NoiseSource::from_rng(
        noise_dim,
        cfg.networks.noise,
        stream_rng(cfg.seeds.train, streams::EVALUATION),
    );
    let mut observer = CoverageObserver {
        noise: eval_noise.sample(cfg.eval.samples),
        centers: p.dataset.mode_centers(),
        sigma: cfg.eval.sigma.unwrap_or(1.0),
        threshold: cfg.eval.threshold_count,
        cadence: cfg.cadence(),
        epochs: p.strategy.epochs,
        points: Vec::new(),
        last: None,
    };
    let opts = RunOptions {
        workers: p.workers,
        retain_payloads: cfg.output.retain_payloads,
        measure_wall_clock: cfg.output.wall_clock,
        observer: Some(&mut observer),
    };
    let (run, failure) = match run_strategy(participants, &p.strategy, opts) {
        Ok(r) => (r, None),
        Err(f) => (*f.partial, Some(f.error)),
    };

    let report = write_reports(p, &out_dir, run, observer.points, observer.last, observer.noise, assert)?;
    match failure {
        None => Ok(report),
        Some(error) => Err(ExperimentFailure {
            error,
            partial: Some(Box::new(report)),
        }),
    }
}

fn write_reports(
    p: &Prepared,
    out_dir: &Path,
    run: RunResult,
    coverage: Vec<CoveragePoint>,
    final_coverage: Option<CoverageReport>,
    eval_noise: Matrix,
    assert: bool,
) -> Result<ExperimentReport> {
    let cfg = &p.config;
    write_metrics_csv(&run.metrics, create(&out_dir.join("metrics.csv"))?)?;
    write_coverage_csv(&coverage, create(&out_dir.join("coverage.csv"))?)?;
    write_channel_log(&run.message_log, create(&out_dir.join("channel_log.txt"))?)?;

    // A generator that blew up yields no usable samples; the partial metrics above still stand.
    if let Ok(samples) = run.generator.forward(&eval_noise) {
        write_samples_csv(&samples, None, create(&out_dir.join("samples_final.csv"))?)?;
    }

    let ckpt = out_dir.join("checkpoint");
    write_checkpoint(&ckpt, "generator", &run.generator)?;
    for (party, net) in &run.discriminators {
        write_checkpoint(&ckpt, &format!("discriminator_{party}"), net)?;
    }

    let mut audit = audit_channel(&run.message_log, p.dataset.dim());
    let scanned = cfg.output.retain_payloads;
    if scanned {
        audit.flags.extend(scan_for_raw_rows(&run.message_log, &[p.dataset.samples()]));
    }
    let mut text = audit.render_table();
    text.push_str(&format!(
        "raw-row scan: {}\n\n",
        if scanned { "performed" } else { "skipped (payloads not retained)" }
    ));
    text.push_str(&audit.to_structured());
    fs::write(out_dir.join("audit.txt"), text)?;

    let mut assert_failures = Vec::new();
    if assert {
        if !audit.is_clean() {
            assert_failures.push(format!("audit reported {} privacy flags", audit.flags.len()));
        }
        if let Some(a) = &cfg.assertions {
            let covered = final_coverage.as_ref().map(|c| c.covered_modes);
            let quality = final_coverage.as_ref().map(|c| c.high_quality_fraction);
            if let Some(min) = a.min_covered_modes {
                match covered {
                    Some(c) if c >= min => {}
                    c => assert_failures.push(format!("covered_modes {c:?} below required {min}")),
                }
            }
            if let Some(max) = a.max_covered_modes {
                match covered {
                    Some(c) if c <= max => {}
                    c => assert_failures.push(format!("covered_modes {c:?} above allowed {max}")),
                }
            }
            if let Some(min) = a.min_quality {
                match quality {
                    Some(q) if q >= min => {}
                    q => assert_failures.push(format!("quality {q:?} below required {min}")),
                }
            }
        }
    }

    Ok(ExperimentReport {
        out_dir: out_dir.to_path_buf(),
        run,
        coverage,
        final_coverage,
        audit,
        assert_failures,
    })
}

/// One row of the cross-run comparison table.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub run: String,
    pub strategy: StrategyKind,
    pub users: usize,
    pub total_work_units: u64,
    /// Largest per-user real-sample work in any single epoch.
    pub max_user_work_units: u64,
    pub wall_ms: f64,
    pub covered_modes: Option<usize>,
    pub final_g_loss: Option<f64>,
}

pub const COMPARISON_HEADER: [&str; 8] = [
    "run",
    "strategy",
    "users",
    "total_work_units",
    "max_user_work_units",
    "wall_ms",
    "covered_modes",
    "final_g_loss",
];

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        _ => Error::Io(e),
    })
}

pub fn summarize_run(dir: &Path) -> Result<ComparisonRow> {
    let metrics: Vec<MetricsRecord> = read_metrics_csv(open(&dir.join("metrics.csv"))?)?;
    let echo = fs::read_to_string(dir.join("config_echo.toml")).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(dir.join("config_echo.toml")),
        _ => Error::Io(e),
    })?;
    let cfg = ExperimentConfig::from_toml(&echo)?;
    let coverage = match File::open(dir.join("coverage.csv")) {
        Ok(f) => read_coverage_csv(f)?,
        Err(_) => Vec::new(),
    };
    let user_rows = metrics.iter().filter(|m| m.user.is_some());
    Ok(ComparisonRow {
        run: dir.display().to_string(),
        strategy: cfg.strategy.kind,
        users: cfg.strategy.users.unwrap_or(1),
        total_work_units: user_rows.clone().map(|m| m.work_units).sum(),
        max_user_work_units: user_rows.map(|m| m.work_units).max().unwrap_or(0),
        wall_ms: metrics.iter().filter(|m| m.user.is_none()).map(|m| m.wall_ms).sum(),
        covered_modes: coverage.last().map(|c| c.covered_modes),
        final_g_loss: metrics.iter().rev().find_map(|m| m.g_loss),
    })
}

pub fn compare_runs(dirs: &[PathBuf]) -> Result<Vec<ComparisonRow>> {
    if dirs.len() < 2 {
        return Err(Error::InvalidArgument("compare needs at least two run directories".into()));
    }
    dirs.iter().map(|d| summarize_run(d)).collect()
}

pub fn write_comparison_csv<W: Write>(rows: &[ComparisonRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(COMPARISON_HEADER)?;
    for r in rows {
        w.write_record([
            r.run.clone(),
            r.strategy.name().to_string(),
            r.users.to_string(),
            r.total_work_units.to_string(),
            r.max_user_work_units.to_string(),
            format!("{:.3}", r.wall_ms),
            r.covered_modes.map(|c| c.to_string()).unwrap_or_default(),
            r.final_g_loss.map(|g| g.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn render_comparison(rows: &[ComparisonRow]) -> String {
    let mut s = format!(
        "{:<28} {:<12} {:>5} {:>16} {:>14} {:>12} {:>7} {:>12}\n",
        "run", "strategy", "users", "total_work", "max_user_work", "wall_ms", "modes", "final_g_loss"
    );
    for r in rows {
        s.push_str(&format!(
            "{:<28} {:<12} {:>5} {:>16} {:>14} {:>12.1} {:>7} {:>12}\n",
            r.run,
            r.strategy.name(),
            r.users,
            r.total_work_units,
            r.max_user_work_units,
            r.wall_ms,
            r.covered_modes.map(|c| c.to_string()).unwrap_or_else(|| "-".into()),
            r.final_g_loss.map(|g| format!("{g:.4}")).unwrap_or_else(|| "-".into()),
        ));
    }
    s
}

/// Finite-difference check over random small networks; exit 0 only when the
/// worst relative error is under tolerance.
pub fn gradcheck_command(opts: &GradcheckOptions) -> Result<(GradcheckReport, i32)> {
    let report = gradcheck::run(opts)?;
    let code = if report.passed() { EXIT_OK } else { EXIT_NUMERIC };
    Ok((report, code))
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[dataset]
kind = "ring"
modes = 4
radius = 1.0
sigma = 0.1
per_mode = 10

[strategy]
kind = "averaged"
epochs = 2

[partition]
scheme = "shard"
users = 2
seed = 1

[networks]
preset = "ring"
hidden = 4
"#;

    #[test]
    fn minimal_config_resolves_defaults() {
        let cfg = ExperimentConfig::from_toml(MINIMAL).unwrap();
        let p = prepare(cfg).unwrap();
        assert_eq!(p.strategy.users, 2);
        assert_eq!(p.config.cadence(), 1);
        assert_eq!(p.config.eval.sigma, Some(0.1));
        assert_eq!(p.config.eval.samples, 2000);
        assert_eq!(p.config.train, TrainConfig::default());
    }

    #[test]
    fn echo_round_trips() {
        let p = prepare(ExperimentConfig::from_toml(MINIMAL).unwrap()).unwrap();
        let echo = p.config.to_toml();
        let back = ExperimentConfig::from_toml(&echo).unwrap();
        assert_eq!(back, p.config);
    }

    #[test]
    fn unknown_keys_are_rejected_with_line() {
        let bad = MINIMAL.replace("epochs = 2", "epochs = 2\nepochz = 3");
        match ExperimentConfig::from_toml(&bad) {
            Err(Error::Config(msg)) => {
                assert!(msg.contains("epochz"), "{msg}");
                assert!(msg.contains("line"), "{msg}");
            }
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn user_count_mismatch_is_config_error() {
        let bad = MINIMAL.replace("epochs = 2", "epochs = 2\nusers = 3");
        let err = prepare(ExperimentConfig::from_toml(&bad).unwrap()).unwrap_err();
        assert_eq!(exit_code(&err), EXIT_CONFIG);
    }

    #[test]
    fn federated_defaults_to_max_magnitude() {
        let text = MINIMAL.replace("\"averaged\"", "\"federated\"");
        let p = prepare(ExperimentConfig::from_toml(&text).unwrap()).unwrap();
        assert_eq!(p.strategy.policy, Some(SelectionPolicy::MaxMagnitude));
    }

    #[test]
    fn baseline_takes_selected_partition() {
        let text = MINIMAL.replace("\"averaged\"", "\"baseline\"\nbaseline_user = 1");
        let p = prepare(ExperimentConfig::from_toml(&text).unwrap()).unwrap();
        assert_eq!(p.partitions.users(), 1);
        assert_eq!(p.partitions.parts[0].indices.len(), 20);
    }

    #[test]
    fn exit_codes_by_error_class() {
        assert_eq!(exit_code(&Error::NonFinite { layer: 2 }), EXIT_NUMERIC);
        assert_eq!(exit_code(&Error::Config("x".into())), EXIT_CONFIG);
        assert_eq!(exit_code(&Error::MissingFile("a".into())), EXIT_CONFIG);
    }
}
