//! Selective gradient sharing between users and a parameter server.
//!
//! A round is a synchronous barrier: every user uploads a [`GradUpdate`]
//! holding the largest-magnitude coordinates of its local gradient, the server
//! combines them under its [`SelectionPolicy`], applies the result to its own
//! weights and broadcasts the same aggregate to every user.
//!
//! All inter-party traffic goes through a [`Channel`]. [`Payload`] has no
//! variant that can hold real training samples, so the privacy property is a
//! consequence of the types; [`audit_channel`] and [`scan_for_raw_rows`] check
//! it on recorded logs anyway.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::Write;
use std::sync::{Arc, Mutex};

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gan::CriticFeedback;
use crate::nn::{GradVector, Layout, Matrix, Network, NetworkSpec, ParamVector};
use crate::rng::SimRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Party {
    Server,
    Generator,
    User(usize),
}

impl fmt::Display for Party {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Party::Server => f.write_str("server"),
            Party::Generator => f.write_str("generator"),
            Party::User(u) => write!(f, "user{u}"),
        }
    }
}

/// A user's sparse gradient upload for one round.
#[derive(Debug, Clone, PartialEq)]
pub struct GradUpdate {
    pub user_id: usize,
    pub epoch: u64,
    entries: Vec<(usize, f64)>,
}

impl GradUpdate {
    /// `entries` must have strictly increasing indices below `param_count`.
    pub fn new(user_id: usize, epoch: u64, entries: Vec<(usize, f64)>, param_count: usize) -> Result<Self> {
        for (k, &(i, v)) in entries.iter().enumerate() {
            if i >= param_count {
                return Err(Error::Protocol(format!(
                    "user {user_id}: index {i} out of range for {param_count} parameters"
                )));
            }
            if k > 0 && entries[k - 1].0 >= i {
                return Err(Error::Protocol(format!(
                    "user {user_id}: upload indices must be strictly increasing"
                )));
            }
            if !v.is_finite() {
                return Err(Error::NonFiniteValue("uploaded gradient"));
            }
        }
        Ok(Self {
            user_id,
            epoch,
            entries,
        })
    }

    pub fn entries(&self) -> &[(usize, f64)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SelectionPolicy {
    /// Average contributions per index, then keep a random `⌈f·c⌉` of the `c`
    /// contributed indices.
    RandomFraction { fraction: f64, seed: u64 },
    /// Average contributions per index, then zero every entry with `|v| <= tau`.
    Threshold { tau: f64 },
    /// Per index, keep the single contribution of largest magnitude.
    MaxMagnitude,
}

impl SelectionPolicy {
    pub fn validate(&self) -> Result<()> {
        match *self {
            SelectionPolicy::RandomFraction { fraction, .. } => validate_fraction(fraction),
            SelectionPolicy::Threshold { tau } if !(tau > 0.0 && tau.is_finite()) => {
                Err(Error::Config(format!("threshold tau must be positive, got {tau}")))
            }
            _ => Ok(()),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SelectionPolicy::RandomFraction { .. } => "random_fraction",
            SelectionPolicy::Threshold { .. } => "threshold",
            SelectionPolicy::MaxMagnitude => "max_magnitude",
        }
    }
}

fn validate_fraction(fraction: f64) -> Result<()> {
    if fraction > 0.0 && fraction <= 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("fraction must lie in (0, 1], got {fraction}")))
    }
}

/// `⌈fraction · len⌉`, treating products within 1e-9 of an integer as that
/// integer so `0.7 · 10` yields 7 rather than 8.
pub fn upload_count(fraction: f64, len: usize) -> usize {
    let x = fraction * len as f64;
    let nearest = x.round();
    let k = if (x - nearest).abs() <= 1e-9 * x.max(1.0) {
        nearest
    } else {
        x.ceil()
    };
    (k as usize).min(len)
}

/// Keeps the `⌈fraction · len⌉` largest-magnitude coordinates of `grad`; ties
/// go to the lower flat index. Entries come back in index order.
pub fn select_upload(grad: &GradVector, fraction: f64, user_id: usize, epoch: u64) -> Result<GradUpdate> {
    validate_fraction(fraction).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    if grad.is_empty() {
        return Err(Error::InvalidArgument("cannot select from an empty gradient".into()));
    }
    let values = grad.values();
    let k = upload_count(fraction, values.len());
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| {
        values[b]
            .abs()
            .total_cmp(&values[a].abs())
            .then(a.cmp(&b))
    });
    order.truncate(k);
    order.sort_unstable();
    let entries = order.into_iter().map(|i| (i, values[i])).collect();
    GradUpdate::new(user_id, epoch, entries, values.len())
}

/// Parameter-server state: the shared architecture, the server copy of the
/// weights and the combination policy.
#[derive(Debug, Clone)]
pub struct ServerState {
    spec: NetworkSpec,
    weights: ParamVector,
    policy: SelectionPolicy,
    lr_server: f64,
    epoch: u64,
    policy_rng: SimRng,
}

impl ServerState {
    pub fn new(spec: NetworkSpec, weights: ParamVector, policy: SelectionPolicy, lr_server: f64) -> Result<Self> {
        policy.validate()?;
        if *weights.layout().as_ref() != Layout::from_spec(&spec) {
            return Err(Error::Layout);
        }
        if !(lr_server > 0.0 && lr_server.is_finite()) {
            return Err(Error::Config("lr_server must be positive".into()));
        }
        let seed = match policy {
            SelectionPolicy::RandomFraction { seed, .. } => seed,
            _ => 0,
        };
        Ok(Self {
            spec,
            weights,
            policy,
            lr_server,
            epoch: 0,
            policy_rng: rand::SeedableRng::seed_from_u64(seed),
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn weights(&self) -> &ParamVector {
        &self.weights
    }

    pub fn policy(&self) -> SelectionPolicy {
        self.policy
    }

    pub fn lr_server(&self) -> f64 {
        self.lr_server
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    /// The server weights as a runnable network.
    pub fn model(&self) -> Result<Network> {
        Network::from_params(self.spec.clone(), self.weights.clone(), 0)
    }

    /// Combines one round of uploads. All uploads must carry the server's
    /// current epoch and come from distinct users.
    pub fn aggregate(&mut self, uploads: &[GradUpdate]) -> Result<GradVector> {
        let n = self.weights.len();
        let mut ordered: Vec<&GradUpdate> = uploads.iter().collect();
        ordered.sort_by_key(|u| u.user_id);
        for (k, u) in ordered.iter().enumerate() {
            if u.epoch != self.epoch {
                return Err(Error::Protocol(format!(
                    "epoch mismatch: upload from user {} is for epoch {}, server is at {}",
                    u.user_id, u.epoch, self.epoch
                )));
            }
            if k > 0 && ordered[k - 1].user_id == u.user_id {
                return Err(Error::Protocol(format!("duplicate upload from user {}", u.user_id)));
            }
            if let Some(&(i, _)) = u.entries.iter().find(|(i, _)| *i >= n) {
                return Err(Error::Protocol(format!("index {i} out of range for {n} parameters")));
            }
        }

        let mut out = vec![0.0f64; n];
        match self.policy {
            SelectionPolicy::MaxMagnitude => {
                let mut seen = vec![false; n];
                for u in &ordered {
                    for &(i, v) in &u.entries {
                        if !seen[i] || v.abs() > out[i].abs() {
                            out[i] = v;
                            seen[i] = true;
                        }
                    }
                }
            }
            SelectionPolicy::Threshold { tau } => {
                average_into(&ordered, &mut out);
                for v in &mut out {
                    if v.abs() <= tau {
                        *v = 0.0;
                    }
                }
            }
            SelectionPolicy::RandomFraction { fraction, .. } => {
                let counts = average_into(&ordered, &mut out);
                let contributed: Vec<usize> = (0..n).filter(|&i| counts[i] > 0).collect();
                let keep = upload_count(fraction, contributed.len());
                let mut chosen = vec![false; n];
                for j in index::sample(&mut self.policy_rng, contributed.len(), keep) {
                    chosen[contributed[j]] = true;
                }
                for (v, keep) in out.iter_mut().zip(chosen) {
                    if !keep {
                        *v = 0.0;
                    }
                }
            }
        }
        ParamVector::from_values(self.weights.layout().clone(), out)
    }

    /// `w_s -= lr_server * agg`, then advances the epoch.
    pub fn apply_global(&mut self, agg: &GradVector) -> Result<()> {
        self.weights.axpy(-self.lr_server, agg)?;
        self.epoch += 1;
        Ok(())
    }
}

/// Per-index mean over contributing users (summed in user order). Returns the
/// contribution count per index.
fn average_into(uploads: &[&GradUpdate], out: &mut [f64]) -> Vec<u32> {
    let mut counts = vec![0u32; out.len()];
    for u in uploads {
        for &(i, v) in &u.entries {
            out[i] += v;
            counts[i] += 1;
        }
    }
    for (v, &c) in out.iter_mut().zip(&counts) {
        if c > 0 {
            *v /= f64::from(c);
        }
    }
    counts
}

pub fn aggregate(server: &mut ServerState, uploads: &[GradUpdate]) -> Result<GradVector> {
    server.aggregate(uploads)
}

pub fn apply_global(server: &mut ServerState, agg: &GradVector) -> Result<()> {
    server.apply_global(agg)
}

/// Anything that can take the server's aggregate.
pub trait BroadcastReceiver {
    fn party(&self) -> Party;
    fn receive_global(&mut self, agg: &GradVector) -> Result<()>;
}

/// Delivers the identical aggregate to every receiver, logging one
/// `GlobalGradBroadcast` per delivery.
pub fn broadcast<R: BroadcastReceiver>(
    agg: &GradVector,
    epoch: u64,
    receivers: &mut [R],
    channel: &Channel,
) -> Result<()> {
    let shared = Arc::new(agg.clone());
    for r in receivers.iter_mut() {
        channel.send(epoch, Party::Server, r.party(), Payload::GlobalGradBroadcast(shared.clone()))?;
        r.receive_global(agg)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageKind {
    GradUpload,
    GlobalGradBroadcast,
    FakeSampleBatch,
    ScalarScores,
    WeightSnapshot,
}

impl MessageKind {
    pub const ALL: [MessageKind; 5] = [
        MessageKind::GradUpload,
        MessageKind::GlobalGradBroadcast,
        MessageKind::FakeSampleBatch,
        MessageKind::ScalarScores,
        MessageKind::WeightSnapshot,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            MessageKind::GradUpload => "GradUpload",
            MessageKind::GlobalGradBroadcast => "GlobalGradBroadcast",
            MessageKind::FakeSampleBatch => "FakeSampleBatch",
            MessageKind::ScalarScores => "ScalarScores",
            MessageKind::WeightSnapshot => "WeightSnapshot",
        }
    }
}

impl fmt::Display for MessageKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Where the rows of a payload came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    /// Samples produced by the generator.
    GeneratorOutput,
    /// Per-sample values computed on generator output (scores, score gradients).
    GeneratorFeedback,
    /// Parameter-space vectors (gradients, weights).
    ParameterSpace,
}

/// Everything that may cross a party boundary. There is intentionally no
/// variant for real training data.
#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    GradUpload(GradUpdate),
    GlobalGradBroadcast(Arc<GradVector>),
    FakeSampleBatch(Arc<Matrix>),
    ScalarScores(Arc<CriticFeedback>),
    WeightSnapshot(Arc<ParamVector>),
}

pub const BYTES_PER_REAL: u64 = 8;
pub const BYTES_PER_ENTRY_HEADER: u64 = 12;

impl Payload {
    pub fn kind(&self) -> MessageKind {
        match self {
            Payload::GradUpload(_) => MessageKind::GradUpload,
            Payload::GlobalGradBroadcast(_) => MessageKind::GlobalGradBroadcast,
            Payload::FakeSampleBatch(_) => MessageKind::FakeSampleBatch,
            Payload::ScalarScores(_) => MessageKind::ScalarScores,
            Payload::WeightSnapshot(_) => MessageKind::WeightSnapshot,
        }
    }

    pub fn provenance(&self) -> Provenance {
        match self {
            Payload::GradUpload(_) | Payload::GlobalGradBroadcast(_) | Payload::WeightSnapshot(_) => {
                Provenance::ParameterSpace
            }
            Payload::FakeSampleBatch(_) => Provenance::GeneratorOutput,
            Payload::ScalarScores(_) => Provenance::GeneratorFeedback,
        }
    }

    /// Width of per-sample rows, for payloads made of per-sample rows.
    pub fn row_width(&self) -> Option<usize> {
        match self {
            Payload::FakeSampleBatch(m) => Some(m.cols()),
            Payload::ScalarScores(f) => Some(f.score_grads.cols()),
            _ => None,
        }
    }

    /// 8 bytes per real plus 12 bytes per entry header. Sparse uploads have
    /// one entry per coordinate, row payloads one per row, dense vectors one.
    pub fn byte_size(&self) -> u64 {
        let (reals, entries) = match self {
            Payload::GradUpload(u) => (u.len(), u.len()),
            Payload::GlobalGradBroadcast(g) => (g.len(), 1),
            Payload::FakeSampleBatch(m) => (m.rows() * m.cols(), m.rows()),
            Payload::ScalarScores(f) => (f.scores.len() + f.score_grads.as_slice().len(), f.scores.len()),
            Payload::WeightSnapshot(w) => (w.len(), 1),
        };
        BYTES_PER_REAL * reals as u64 + BYTES_PER_ENTRY_HEADER * entries as u64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelMessage {
    pub epoch: u64,
    pub from: Party,
    pub to: Party,
    pub kind: MessageKind,
    pub byte_size: u64,
    pub provenance: Provenance,
    pub row_width: Option<usize>,
    /// Present only when the channel retains payloads.
    pub payload: Option<Payload>,
}

/// Append-only, lock-protected message log shared by every party of a run.
#[derive(Debug, Default)]
pub struct Channel {
    retain_payloads: bool,
    log: Mutex<Vec<ChannelMessage>>,
}

impl Channel {
    pub fn new(retain_payloads: bool) -> Self {
        Self {
            retain_payloads,
            log: Mutex::new(Vec::new()),
        }
    }

    pub fn retains_payloads(&self) -> bool {
        self.retain_payloads
    }

    pub fn send(&self, epoch: u64, from: Party, to: Party, payload: Payload) -> Result<()> {
        let mut log = self.log.lock().expect("channel lock poisoned");
        if let Some(last) = log.last() {
            if epoch < last.epoch {
                return Err(Error::Protocol(format!(
                    "message for epoch {epoch} after epoch {}",
                    last.epoch
                )));
            }
        }
        log.push(ChannelMessage {
            epoch,
            from,
            to,
            kind: payload.kind(),
            byte_size: payload.byte_size(),
            provenance: payload.provenance(),
            row_width: payload.row_width(),
            payload: self.retain_payloads.then_some(payload),
        });
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.log.lock().expect("channel lock poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn snapshot(&self) -> Vec<ChannelMessage> {
        self.log.lock().expect("channel lock poisoned").clone()
    }

    pub fn into_log(self) -> Vec<ChannelMessage> {
        self.log.into_inner().expect("channel lock poisoned")
    }
}

pub const CHANNEL_LOG_HEADER: &str = "epoch,from,to,kind,bytes";

/// One line per message: `epoch,from,to,kind,bytes`, preceded by a header.
pub fn write_channel_log<W: Write>(log: &[ChannelMessage], mut out: W) -> Result<()> {
    writeln!(out, "{CHANNEL_LOG_HEADER}")?;
    for m in log {
        writeln!(out, "{},{},{},{},{}", m.epoch, m.from, m.to, m.kind, m.byte_size)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct KindStats {
    pub count: u64,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AuditFlag {
    pub message_index: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct AuditReport {
    pub messages: u64,
    pub kinds: BTreeMap<MessageKind, KindStats>,
    pub flags: Vec<AuditFlag>,
}

impl AuditReport {
    pub fn is_clean(&self) -> bool {
        self.flags.is_empty()
    }

    pub fn kinds_present(&self) -> Vec<MessageKind> {
        self.kinds.keys().copied().collect()
    }

    pub fn render_table(&self) -> String {
        let mut s = format!("{:<22} {:>10} {:>14}\n", "kind", "count", "bytes");
        for (kind, stats) in &self.kinds {
            s.push_str(&format!("{:<22} {:>10} {:>14}\n", kind.as_str(), stats.count, stats.bytes));
        }
        s.push_str(&format!("messages: {}, privacy flags: {}\n", self.messages, self.flags.len()));
        for f in &self.flags {
            s.push_str(&format!("  flag @{}: {}\n", f.message_index, f.reason));
        }
        s
    }

    /// TOML rendering used for `audit.txt`.
    pub fn to_structured(&self) -> String {
        toml::to_string(self).expect("audit report serializes")
    }
}

/// Counts and bytes per kind, plus a flag for every message carrying
/// per-sample rows of the users' raw sample width that did not originate from
/// the generator.
pub fn audit_channel(log: &[ChannelMessage], raw_sample_dim: usize) -> AuditReport {
    let mut report = AuditReport::default();
    for (i, m) in log.iter().enumerate() {
        report.messages += 1;
        let stats = report.kinds.entry(m.kind).or_default();
        stats.count += 1;
        stats.bytes += m.byte_size;
        let data_like = !matches!(
            m.provenance,
            Provenance::GeneratorOutput | Provenance::GeneratorFeedback
        );
        if m.row_width == Some(raw_sample_dim) && data_like {
            report.flags.push(AuditFlag {
                message_index: i,
                reason: format!("{} carries sample-shaped rows of non-generated origin", m.kind),
            });
        }
    }
    report
}

/// Bitwise comparison of every retained per-sample payload row against the
/// users' raw samples. Needs a channel that retains payloads.
pub fn scan_for_raw_rows(log: &[ChannelMessage], raw: &[&Matrix]) -> Vec<AuditFlag> {
    let key = |row: &[f64]| row.iter().map(|v| v.to_bits()).collect::<Vec<u64>>();
    let known: HashSet<Vec<u64>> = raw.iter().flat_map(|m| m.iter_rows().map(key)).collect();
    let mut flags = Vec::new();
    for (i, m) in log.iter().enumerate() {
        let rows: Option<&Matrix> = match &m.payload {
            Some(Payload::FakeSampleBatch(b)) => Some(b),
            Some(Payload::ScalarScores(f)) => Some(&f.score_grads),
            _ => None,
        };
        if let Some(rows) = rows {
            if rows.iter_rows().any(|r| known.contains(&key(r))) {
                flags.push(AuditFlag {
                    message_index: i,
                    reason: format!("{} contains a row identical to a raw training sample", m.kind),
                });
            }
        }
    }
    flags
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, NetworkSpec};

    fn layout(n: usize) -> Arc<Layout> {
        // Dense(1 -> n-1) has n-1 weights and n-1 biases; use Dense(k->1): k+1 params.
        let spec = NetworkSpec::mlp(&[n - 1, 1], Activation::Relu, Activation::Identity).unwrap();
        Arc::new(Layout::from_spec(&spec))
    }

    fn grad(values: &[f64]) -> GradVector {
        ParamVector::from_values(layout(values.len()), values.to_vec()).unwrap()
    }

    fn server(n: usize, policy: SelectionPolicy) -> ServerState {
        let spec = NetworkSpec::mlp(&[n - 1, 1], Activation::Relu, Activation::Identity).unwrap();
        let w = ParamVector::zeros(layout(n));
        ServerState::new(spec, w, policy, 1.0).unwrap()
    }

    #[test]
    fn top_two_by_magnitude() {
        let u = select_upload(&grad(&[0.1, -0.5, 0.3, 0.0]), 0.5, 0, 0).unwrap();
        assert_eq!(u.entries(), &[(1, -0.5), (2, 0.3)]);
        let all = select_upload(&grad(&[0.1, -0.5, 0.3, 0.0]), 1.0, 0, 0).unwrap();
        assert_eq!(all.len(), 4);
    }

    #[test]
    fn ties_go_to_lower_index() {
        let u = select_upload(&grad(&[0.2, -0.2, 0.2]), 0.5, 0, 0).unwrap();
        assert_eq!(u.entries(), &[(0, 0.2), (1, -0.2)]);
    }

    #[test]
    fn upload_count_is_exact_at_integers() {
        assert_eq!(upload_count(0.7, 10), 7);
        assert_eq!(upload_count(0.1, 100), 10);
        assert_eq!(upload_count(0.01, 10), 1);
        assert_eq!(upload_count(0.34, 3), 2);
        assert_eq!(upload_count(1.0, 5), 5);
    }

    #[test]
    fn select_rejects_bad_fraction() {
        assert!(select_upload(&grad(&[1.0, 2.0]), 0.0, 0, 0).is_err());
        assert!(select_upload(&grad(&[1.0, 2.0]), 1.5, 0, 0).is_err());
    }

    #[test]
    fn grad_update_validation() {
        assert!(GradUpdate::new(0, 0, vec![(1, 0.0), (1, 0.0)], 3).is_err());
        assert!(GradUpdate::new(0, 0, vec![(2, 0.0), (1, 0.0)], 3).is_err());
        assert!(GradUpdate::new(0, 0, vec![(3, 0.0)], 3).is_err());
        assert!(GradUpdate::new(0, 0, vec![(0, f64::NAN)], 3).is_err());
    }

    #[test]
    fn max_magnitude_per_index() {
        let mut s = server(2, SelectionPolicy::MaxMagnitude);
        let a = GradUpdate::new(0, 0, vec![(0, 0.1), (1, 0.9)], 2).unwrap();
        let b = GradUpdate::new(1, 0, vec![(0, 0.4), (1, 0.2)], 2).unwrap();
        assert_eq!(s.aggregate(&[a, b]).unwrap().values(), &[0.4, 0.9]);
    }

    #[test]
    fn max_magnitude_tie_prefers_lowest_user() {
        let mut s = server(2, SelectionPolicy::MaxMagnitude);
        let a = GradUpdate::new(3, 0, vec![(0, -0.5)], 2).unwrap();
        let b = GradUpdate::new(1, 0, vec![(0, 0.5)], 2).unwrap();
        assert_eq!(s.aggregate(&[a, b]).unwrap().values(), &[0.5, 0.0]);
    }

    #[test]
    fn threshold_zeroes_small_averages() {
        let mut s = server(3, SelectionPolicy::Threshold { tau: 0.2 });
        let a = GradUpdate::new(0, 0, vec![(0, 0.1), (1, -0.5), (2, 0.3)], 3).unwrap();
        assert_eq!(s.aggregate(&[a]).unwrap().values(), &[0.0, -0.5, 0.3]);
    }

    #[test]
    fn aggregate_errors() {
        let mut s = server(2, SelectionPolicy::MaxMagnitude);
        let stale = GradUpdate::new(0, 5, vec![(0, 1.0)], 2).unwrap();
        assert!(matches!(s.aggregate(&[stale]), Err(Error::Protocol(_))));
        let wide = GradUpdate::new(0, 0, vec![(7, 1.0)], 10).unwrap();
        assert!(matches!(s.aggregate(&[wide]), Err(Error::Protocol(_))));
        let a = GradUpdate::new(0, 0, vec![(0, 1.0)], 2).unwrap();
        assert!(s.aggregate(&[a.clone(), a]).is_err());
    }

    #[test]
    fn apply_global_moves_and_counts_epochs() {
        let mut s = server(3, SelectionPolicy::MaxMagnitude);
        s.apply_global(&grad(&[0.0, 0.0, 0.0])).unwrap();
        assert_eq!(s.weights().values(), &[0.0, 0.0, 0.0]);
        assert_eq!(s.epoch(), 1);
        s.apply_global(&grad(&[0.0, 2.0, 0.0])).unwrap();
        assert_eq!(s.weights().values(), &[0.0, -2.0, 0.0]);
        assert!(s.apply_global(&grad(&[1.0, 1.0])).is_err());
    }

    #[test]
    fn random_fraction_keeps_exact_count_of_contributed() {
        let mut s = server(10, SelectionPolicy::RandomFraction { fraction: 0.5, seed: 9 });
        let a = GradUpdate::new(0, 0, (0..6).map(|i| (i, 1.0 + i as f64)).collect(), 10).unwrap();
        let out = s.aggregate(&[a]).unwrap();
        let kept: Vec<usize> = (0..10).filter(|&i| out.values()[i] != 0.0).collect();
        assert_eq!(kept.len(), 3);
        assert!(kept.iter().all(|&i| i < 6 && out.values()[i] == 1.0 + i as f64));
    }

    #[test]
    fn channel_rejects_epoch_regression_and_logs_lines() {
        let ch = Channel::new(false);
        let fake = Payload::FakeSampleBatch(Arc::new(Matrix::zeros(2, 3)));
        ch.send(1, Party::Generator, Party::User(0), fake.clone()).unwrap();
        assert!(ch.send(0, Party::Generator, Party::User(0), fake).is_err());
        let log = ch.into_log();
        assert!(log[0].payload.is_none());
        assert_eq!(log[0].byte_size, 8 * 6 + 12 * 2);
        let mut out = Vec::new();
        write_channel_log(&log, &mut out).unwrap();
        assert_eq!(
            String::from_utf8(out).unwrap(),
            "epoch,from,to,kind,bytes\n1,generator,user0,FakeSampleBatch,72\n"
        );
    }

    #[test]
    fn empty_log_audits_empty() {
        let r = audit_channel(&[], 2);
        assert_eq!(r, AuditReport::default());
        assert!(r.is_clean());
    }

    #[test]
    fn content_scan_detects_copied_rows() {
        let raw = Matrix::from_rows(&[vec![1.5, -2.0], vec![0.25, 0.5]]).unwrap();
        let ch = Channel::new(true);
        let clean = Matrix::from_rows(&[vec![1.5, -2.0000001]]).unwrap();
        ch.send(0, Party::Generator, Party::User(0), Payload::FakeSampleBatch(Arc::new(clean))).unwrap();
        let leaked = raw.select_rows(&[1]);
        ch.send(0, Party::Generator, Party::User(1), Payload::FakeSampleBatch(Arc::new(leaked))).unwrap();
        let log = ch.into_log();
        let flags = scan_for_raw_rows(&log, &[&raw]);
        assert_eq!(flags.len(), 1);
        assert_eq!(flags[0].message_index, 1);
        assert!(audit_channel(&log, 2).is_clean());
    }
}
