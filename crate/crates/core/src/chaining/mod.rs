//! Lawful contact chaining.
//!
//! Agencies run a breadth-first search from a target `x` by querying the
//! telecoms, one full queue drain per BFS depth. A telecom answers a query
//! for a vertex it serves with an agency ciphertext of that vertex and, if
//! hops remain, telecom ciphertexts of all its neighbors. Agencies never see
//! a plaintext identifier; telecoms only see the identifiers they serve.
//!
//! * [`Protocol::Revealing`]: queries go straight to the owning telecom, so
//!   agencies learn which telecom serves each vertex in the output.
//! * [`Protocol::Hiding`]: queries are broadcast to every telecom and replies
//!   travel through the anonymity hub, so agencies learn nothing about
//!   ownership.
//!
//! A vertex whose degree exceeds `d` is placed in the output but its
//! neighbors are dropped, except for `x` itself. Each telecom answers a
//! vertex at most once per warrant and marks later queries as duplicates,
//! which keeps the output a set.

mod agency;
pub mod audit;
mod messages;
mod telecom;
mod warrant;
mod zero;

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::anonymity::{self, AnonError};
use crate::codec::DecodeError;
use crate::crypto::rng::Seed;
use crate::crypto::{AgencyCiphertext, CryptoError, ParamSet, TelecomId};
use crate::deploy::Deployment;
use crate::graph::{GraphError, GraphPartition};
use crate::intersection::{EncryptedSet, SetFile};
use crate::metrics::RunMetrics;
use crate::party::PartyId;
use crate::transport::{NetConfig, Network, Tap, TransportError, TransportKind};

pub use agency::{agency_round, RoundOutcome};
pub use messages::{QueueEntry, ResponseItem, TelecomResponse};
pub use telecom::{telecom_serve, TelecomContext};
pub use warrant::{SignedWarrant, Warrant, WarrantFileError};
pub use zero::{run_zero_crypto, ZeroOutput};

#[derive(Debug, Error)]
pub enum ChainError {
    #[error("a telecom rejected a message lacking a valid signature from every agency")]
    UnsignedMessageRejected,
    #[error("warrant is not signed by every agency")]
    UnsignedWarrant,
    #[error("expected {expected} responses, got {got}")]
    ResponseCountMismatch { expected: usize, got: usize },
    #[error("identifier {0} has no serving telecom")]
    UnknownTelecom(u64),
    #[error("invalid warrant: {0}")]
    InvalidWarrant(String),
    #[error("sign request does not match this agency's queue")]
    SignRequestMismatch,
    #[error("agencies computed different outputs")]
    CrossCheckFailed,
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("{0} aborted the run: {1}")]
    PeerAborted(PartyId, String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error(transparent)]
    Anonymity(#[from] AnonError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Protocol {
    /// Queries are addressed to the owning telecom.
    Revealing,
    /// Queries are broadcast; replies go through the anonymity hub.
    Hiding,
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Protocol::Revealing => "protocol1",
            Protocol::Hiding => "protocol2",
        })
    }
}

/// Deliberate misbehavior for audit tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// The lead omits `agency`'s signature from every telecom-bound
    /// envelope of `round`.
    DropSignature { round: u32, agency: u8 },
}

#[derive(Debug, Clone)]
pub struct ChainConfig {
    pub protocol: Protocol,
    /// Worker threads per telecom.
    pub workers: usize,
    pub transport: TransportKind,
    /// Messages per anonymity instance.
    pub anon_capacity: usize,
    /// Keep every envelope delivered to an agency.
    pub record: bool,
    pub seed: u64,
    pub fault: Option<Fault>,
    pub recv_timeout: Duration,
    pub frame_cap: usize,
}

impl Default for ChainConfig {
    fn default() -> Self {
        ChainConfig {
            protocol: Protocol::Revealing,
            workers: 8,
            transport: TransportKind::InProc,
            anon_capacity: 4096,
            record: false,
            seed: 0,
            fault: None,
            recv_timeout: Duration::from_secs(600),
            frame_cap: crate::transport::DEFAULT_FRAME_CAP,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChainEntry {
    pub ct: AgencyCiphertext,
    /// Hops from `x`, i.e. `k - j`.
    pub distance: u8,
    /// Serving telecom; protocol 1 only.
    pub owner: Option<TelecomId>,
}

/// The agencies' result `C`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ChainOutput {
    pub entries: Vec<ChainEntry>,
}

impl ChainOutput {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Joint decryption with every agency key: `(identifier, distance)`.
    pub fn decrypt(&self, dep: &Deployment) -> Result<Vec<(u64, u8)>, CryptoError> {
        self.entries.iter().map(|e| Ok((dep.joint_decrypt(&e.ct)?, e.distance))).collect()
    }

    /// Encrypted-set file annotated with distances, and with owners when
    /// every entry carries one.
    pub fn to_set_file(&self, param_set: ParamSet, roster: Vec<String>, label: &str) -> SetFile {
        let set = EncryptedSet { label: label.to_owned(), ciphertexts: self.entries.iter().map(|e| e.ct.clone()).collect() };
        let mut file = SetFile::new(param_set, roster, set);
        file.distances = Some(self.entries.iter().map(|e| e.distance).collect());
        let owners: Option<Vec<TelecomId>> = self.entries.iter().map(|e| e.owner).collect();
        file.owners = owners.filter(|o| !o.is_empty());
        file
    }
}

/// `L_T`: identifiers a telecom handed to the agencies, with the BFS depth
/// at which it did so.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TelecomAuditLog {
    pub telecom: TelecomId,
    pub entries: Vec<(u64, u32)>,
    seen: HashSet<u64>,
}

impl TelecomAuditLog {
    pub fn new(telecom: TelecomId) -> Self {
        TelecomAuditLog { telecom, entries: Vec::new(), seen: HashSet::new() }
    }

    pub fn contains(&self, id: u64) -> bool {
        self.seen.contains(&id)
    }

    /// Returns false if `id` was already logged.
    pub fn record(&mut self, id: u64, round: u32) -> bool {
        if !self.seen.insert(id) {
            return false;
        }
        self.entries.push((id, round));
        true
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn render(&self) -> String {
        self.entries.iter().map(|(id, r)| format!("{id} {r}\n")).collect()
    }
}

#[derive(Debug)]
pub struct ChainRun {
    pub output: ChainOutput,
    pub logs: Vec<TelecomAuditLog>,
    pub metrics: RunMetrics,
    /// `(round, delta)` for every degree the agencies were told.
    pub deltas: Vec<(u32, u32)>,
    pub transcript: Option<Arc<Tap>>,
}

/// A failed run with whatever the parties recorded before stopping.
#[derive(Debug)]
pub struct ChainFailure {
    pub error: ChainError,
    pub logs: Vec<TelecomAuditLog>,
    pub transcript: Option<Arc<Tap>>,
}

impl fmt::Display for ChainFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.error.fmt(f)
    }
}

impl std::error::Error for ChainFailure {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

impl From<ChainError> for Box<ChainFailure> {
    fn from(error: ChainError) -> Self {
        Box::new(ChainFailure { error, logs: Vec::new(), transcript: None })
    }
}

/// Everything every party of one run can see.
pub(crate) struct Shared<'a> {
    pub dep: &'a Deployment,
    pub warrant: &'a Warrant,
    pub warrant_id: [u8; 32],
    pub cfg: &'a ChainConfig,
    pub roster: Vec<(PartyId, crate::crypto::VerificationKey)>,
    pub y: crate::crypto::CombinedAgencyKey,
    pub telecom_keys: Vec<crate::crypto::TelecomPublicKey>,
    pub root: Seed,
}

impl Shared<'_> {
    pub fn agencies(&self) -> impl Iterator<Item = PartyId> {
        (0..self.dep.agencies.len() as u8).map(PartyId::Agency)
    }

    pub fn followers(&self) -> impl Iterator<Item = PartyId> {
        (1..self.dep.agencies.len() as u8).map(PartyId::Agency)
    }

    pub fn telecoms(&self) -> impl Iterator<Item = PartyId> {
        (0..self.dep.telecoms.len() as u8).map(PartyId::Telecom)
    }

    pub fn anon_participants(&self) -> Vec<PartyId> {
        self.agencies().chain(self.telecoms()).collect()
    }
}

fn run_root(seed: u64, warrant_id: &[u8; 32]) -> Seed {
    crate::crypto::rng::derive_seed(&crate::crypto::rng::seed_from_u64(seed), &hex::encode(warrant_id), &[])
}

enum PartyOutcome {
    Agency(PartyId, Result<agency::AgencyResult, ChainError>),
    Telecom(telecom::TelecomResult, Option<ChainError>),
    Hub(Duration, Result<anonymity::HubStats, AnonError>),
}

/// Runs one chaining warrant with every party on its own thread.
pub fn run_chain(
    dep: &Deployment,
    partitions: &[GraphPartition],
    warrant: &SignedWarrant,
    cfg: &ChainConfig,
) -> Result<ChainRun, Box<ChainFailure>> {
    let roster = dep.agency_roster();
    if !warrant.verify(&roster) {
        return Err(ChainError::UnsignedWarrant.into());
    }
    let w = &warrant.warrant;
    w.check_deployment(dep, partitions)?;
    let warrant_id = w.id();
    let shared = Shared {
        dep,
        warrant: w,
        warrant_id,
        cfg,
        roster,
        y: dep.combined_key(),
        telecom_keys: dep.telecom_keys(),
        root: run_root(cfg.seed, &warrant_id),
    };

    let mut parties: Vec<PartyId> = shared.agencies().chain(shared.telecoms()).collect();
    if cfg.protocol == Protocol::Hiding {
        parties.push(PartyId::AnonHub);
    }
    let net_cfg = NetConfig { frame_cap: cfg.frame_cap, recv_timeout: cfg.recv_timeout, record: cfg.record };
    let net = Network::build(cfg.transport, &parties, net_cfg).map_err(ChainError::from)?;
    let Network { endpoints, traffic, tap } = net;

    let start = Instant::now();
    let outcomes: Vec<PartyOutcome> = thread::scope(|s| {
        let shared = &shared;
        let handles: Vec<_> = endpoints
            .into_iter()
            .map(|ep| {
                let me = ep.id();
                thread::Builder::new()
                    .name(format!("{me}"))
                    .spawn_scoped(s, move || match me {
                        PartyId::Agency(0) => PartyOutcome::Agency(me, agency::run_lead(&ep, shared)),
                        PartyId::Agency(_) => PartyOutcome::Agency(me, agency::run_follower(&ep, shared)),
                        PartyId::Telecom(t) => {
                            let (res, err) = telecom::run_telecom(&ep, shared, &partitions[t as usize]);
                            PartyOutcome::Telecom(res, err)
                        }
                        PartyId::AnonHub => {
                            let meter = crate::metrics::CpuMeter::start();
                            let participants = shared.anon_participants();
                            let res = anonymity::run_hub(&ep, &participants, warrant_id, cfg.anon_capacity);
                            PartyOutcome::Hub(meter.finish(None), res)
                        }
                    })
                    .expect("spawn party thread")
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("party thread panicked")).collect()
    });
    let wall_time = start.elapsed();

    let mut metrics = RunMetrics { wall_time, ..RunMetrics::default() };
    let mut logs = Vec::new();
    let mut lead = None;
    let mut followers = Vec::new();
    let mut errors: Vec<(PartyId, ChainError)> = Vec::new();
    for o in outcomes {
        match o {
            PartyOutcome::Agency(p, Ok(r)) => {
                metrics.cpu.insert(p, r.cpu);
                if p == PartyId::LEAD {
                    lead = Some(r);
                } else {
                    followers.push(r);
                }
            }
            PartyOutcome::Agency(p, Err(e)) => errors.push((p, e)),
            PartyOutcome::Telecom(r, err) => {
                let p = PartyId::telecom(r.log.telecom);
                metrics.cpu.insert(p, r.cpu);
                metrics.telecom_ciphertexts += r.telecom_cts;
                if let Some(e) = err {
                    errors.push((p, e));
                }
                logs.push(r.log);
            }
            PartyOutcome::Hub(cpu, res) => {
                metrics.cpu.insert(PartyId::AnonHub, cpu);
                if let Err(e) = res {
                    errors.push((PartyId::AnonHub, e.into()));
                }
            }
        }
    }
    logs.sort_by_key(|l| l.telecom);
    if let Some(error) = pick_error(errors) {
        return Err(Box::new(ChainFailure { error, logs, transcript: tap }));
    }
    let lead = lead.expect("lead result present when no party failed");
    if followers.iter().any(|f| f.output != lead.output) {
        return Err(Box::new(ChainFailure { error: ChainError::CrossCheckFailed, logs, transcript: tap }));
    }
    metrics.bytes_total = traffic.total_bytes();
    metrics.frames = traffic.total_frames();
    metrics.bytes_sent = traffic.snapshot().into_iter().map(|(p, t)| (p, t.bytes_sent)).collect();
    metrics.ciphertexts_out = lead.output.len();
    metrics.duplicates = lead.duplicates;
    metrics.rounds = lead.rounds;
    // The target's ciphertext is made by the agencies.
    metrics.telecom_ciphertexts += 1;
    Ok(ChainRun { output: lead.output, logs, metrics, deltas: lead.deltas, transcript: tap })
}

/// Prefers the error that started an abort over the aborts it caused.
fn pick_error(errors: Vec<(PartyId, ChainError)>) -> Option<ChainError> {
    let secondary = |e: &ChainError| {
        matches!(e, ChainError::PeerAborted(..) | ChainError::Anonymity(AnonError::Aborted(..)))
            || matches!(e, ChainError::Transport(TransportError::PeerDisconnected(_)))
    };
    let mut errors = errors;
    errors.sort_by_key(|(p, e)| (secondary(e), *p != PartyId::LEAD));
    errors.into_iter().next().map(|(_, e)| e)
}

/// Convenience: sign with every agency of `dep` and run.
pub fn run_protocol(
    dep: &Deployment,
    partitions: &[GraphPartition],
    warrant: &Warrant,
    cfg: &ChainConfig,
) -> Result<ChainRun, Box<ChainFailure>> {
    run_chain(dep, partitions, &SignedWarrant::sign_all(warrant.clone(), dep), cfg)
}

pub fn run_protocol1(
    dep: &Deployment,
    partitions: &[GraphPartition],
    warrant: &Warrant,
    cfg: &ChainConfig,
) -> Result<ChainRun, Box<ChainFailure>> {
    run_protocol(dep, partitions, warrant, &ChainConfig { protocol: Protocol::Revealing, ..cfg.clone() })
}

pub fn run_protocol2(
    dep: &Deployment,
    partitions: &[GraphPartition],
    warrant: &Warrant,
    cfg: &ChainConfig,
) -> Result<ChainRun, Box<ChainFailure>> {
    run_protocol(dep, partitions, warrant, &ChainConfig { protocol: Protocol::Hiding, ..cfg.clone() })
}

/// Decrypted output as `identifier -> distance`. A repeated identifier is
/// an error since the output is a set.
pub fn decrypted_map(run: &ChainRun, dep: &Deployment) -> Result<BTreeMap<u64, u8>, ChainError> {
    let mut out = BTreeMap::new();
    for (id, dist) in run.output.decrypt(dep)? {
        if out.insert(id, dist).is_some() {
            return Err(ChainError::Protocol(format!("identifier {id} appears twice in the output")));
        }
    }
    Ok(out)
}
