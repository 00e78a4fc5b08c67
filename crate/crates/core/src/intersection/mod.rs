//! Lawful set intersection.
//!
//! Agencies take turns. On its turn an agency strips its ElGamal share from
//! every ciphertext and applies its per-warrant Pohlig-Hellman key, then hands
//! the state to the next agency. After the last turn each ciphertext has
//! collapsed to a deterministic tag, so equal identifiers compare equal.
//! If the intersection is larger than the warrant allows, any agency can
//! destroy its PH key and nothing can be revealed; otherwise the agencies
//! strip their PH layers from the intersecting tags only.

mod net;
mod setfile;

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::codec::{DecodeError, Reader, Writer};
use crate::crypto::{
    AgencyCiphertext, AgencyId, CryptoError, DeterministicTag, ElGamalKeyPair, GroupParams, LayerSet, PhKey,
};

pub use net::run_intersection_net;
pub use setfile::{SetFile, SetFileError};

#[derive(Debug, Error)]
pub enum IntersectError {
    #[error("{0} is out of turn; expected agency-{1}")]
    OutOfTurn(AgencyId, u8),
    #[error("conversion has not finished for every agency")]
    ConversionIncomplete,
    #[error("input ciphertext in set {0:?} already carries conversion layers")]
    NotFresh(String),
    #[error("invalid warrant: {0}")]
    InvalidWarrant(String),
    #[error("reveal refused: oversight check aborted")]
    Aborted,
    #[error("agencies computed different intersections")]
    CrossCheckFailed,
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("{0} aborted the run: {1}")]
    PeerAborted(crate::party::PartyId, String),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error(transparent)]
    Transport(#[from] crate::transport::TransportError),
}

/// Authorization for one intersection: which sets, how many reveals at most.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IntersectWarrant {
    pub set_ids: Vec<String>,
    pub max_reveal: usize,
    pub roster: Vec<String>,
}

impl IntersectWarrant {
    pub fn new(set_ids: Vec<String>, max_reveal: usize, roster: Vec<String>) -> Result<Self, IntersectError> {
        if set_ids.len() < 2 {
            return Err(IntersectError::InvalidWarrant("at least two input sets are required".into()));
        }
        if roster.len() < 2 || roster.len() > crate::crypto::MAX_AGENCIES {
            return Err(IntersectError::InvalidWarrant(format!(
                "roster must hold 2..={} agencies",
                crate::crypto::MAX_AGENCIES
            )));
        }
        Ok(IntersectWarrant { set_ids, max_reveal, roster })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncryptedSet {
    pub label: String,
    pub ciphertexts: Vec<AgencyCiphertext>,
}

/// Sets in flight between agencies, plus whose turn it is.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConversionState {
    roster_len: usize,
    next: u8,
    sets: Vec<EncryptedSet>,
}

impl ConversionState {
    pub fn new(sets: Vec<EncryptedSet>, roster_len: usize) -> Result<Self, IntersectError> {
        for set in &sets {
            if set.ciphertexts.iter().any(|ct| !ct.removed.is_empty() || !ct.ph.is_empty()) {
                return Err(IntersectError::NotFresh(set.label.clone()));
            }
        }
        Ok(ConversionState { roster_len, next: 0, sets })
    }

    pub fn sets(&self) -> &[EncryptedSet] {
        &self.sets
    }

    pub fn next_agency(&self) -> Option<AgencyId> {
        ((self.next as usize) < self.roster_len).then_some(AgencyId(self.next))
    }

    pub fn is_complete(&self) -> bool {
        self.next as usize == self.roster_len
    }

    pub fn ciphertext_count(&self) -> usize {
        self.sets.iter().map(|s| s.ciphertexts.len()).sum()
    }

    pub fn to_bytes(&self, params: &GroupParams) -> Vec<u8> {
        let ct_len = AgencyCiphertext::wire_len(params);
        let mut w = Writer::with_capacity(16 + self.ciphertext_count() * ct_len);
        w.u8(self.roster_len as u8).u8(self.next).u32(self.sets.len() as u32);
        let mut body = Vec::with_capacity(ct_len);
        for set in &self.sets {
            w.bytes(set.label.as_bytes()).u64(set.ciphertexts.len() as u64);
            for ct in &set.ciphertexts {
                body.clear();
                ct.write(params, &mut body);
                w.fixed(&body);
            }
        }
        w.into_bytes()
    }

    pub fn from_bytes(params: &GroupParams, bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader::new(bytes);
        let roster_len = r.u8()? as usize;
        let next = r.u8()?;
        let n_sets = r.u32()? as usize;
        let mut sets = Vec::with_capacity(n_sets.min(1024));
        for _ in 0..n_sets {
            let label = String::from_utf8(r.bytes()?.to_vec())
                .map_err(|e| DecodeError::invalid("set label", e.to_string()))?;
            let n = r.u64()? as usize;
            let ciphertexts =
                (0..n).map(|_| AgencyCiphertext::read(params, &mut r)).collect::<Result<Vec<_>, _>>()?;
            sets.push(EncryptedSet { label, ciphertexts });
        }
        r.finish()?;
        Ok(ConversionState { roster_len, next, sets })
    }
}

/// Builds a worker pool; every parallel stage in the crate runs inside one.
pub fn worker_pool(workers: usize) -> rayon::ThreadPool {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .thread_name(|i| format!("lawful-worker-{i}"))
        .build()
        .expect("thread pool")
}

/// One agency's turn: strip its ElGamal share, then apply its PH layer,
/// for every ciphertext in every set.
pub fn convert_pass(
    state: ConversionState,
    eg: &ElGamalKeyPair,
    ph: &PhKey,
    pool: &rayon::ThreadPool,
) -> Result<ConversionState, IntersectError> {
    let me = eg.owner();
    if ph.owner() != me || state.next_agency() != Some(me) {
        return Err(IntersectError::OutOfTurn(me, state.next));
    }
    let ConversionState { roster_len, next, sets } = state;
    let sets = pool.install(|| {
        sets.into_iter()
            .map(|set| {
                let ciphertexts = set
                    .ciphertexts
                    .par_iter()
                    .map(|ct| ph.apply(&eg.strip_layer(ct)?))
                    .collect::<Result<Vec<_>, CryptoError>>()?;
                Ok(EncryptedSet { label: set.label, ciphertexts })
            })
            .collect::<Result<Vec<_>, IntersectError>>()
    })?;
    Ok(ConversionState { roster_len, next: next + 1, sets })
}

/// Tags present in every set, in ascending order. Duplicates within a set
/// count once.
pub fn compute_intersection(state: &ConversionState) -> Result<Vec<DeterministicTag>, IntersectError> {
    if !state.is_complete() {
        return Err(IntersectError::ConversionIncomplete);
    }
    let full = LayerSet::full(state.roster_len);
    let mut per_set = state.sets.iter().map(|set| {
        set.ciphertexts
            .iter()
            .map(|ct| {
                if ct.ph != full {
                    return Err(IntersectError::ConversionIncomplete);
                }
                Ok(DeterministicTag::from_converted(ct, state.roster_len)?)
            })
            .collect::<Result<HashSet<_>, _>>()
    });
    let Some(first) = per_set.next() else {
        return Ok(Vec::new());
    };
    let mut common = first?;
    for set in per_set {
        let set = set?;
        common.retain(|t| set.contains(t));
    }
    let mut out: Vec<_> = common.into_iter().collect();
    out.sort();
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Oversight {
    Proceed,
    Abort,
}

/// Aborts iff the intersection exceeds `max_reveal`. On abort the checking
/// agency destroys its PH key, which makes any later reveal impossible.
pub fn oversight_check(tags: &[DeterministicTag], warrant: &IntersectWarrant, key: &mut PhKey) -> Oversight {
    if tags.len() > warrant.max_reveal {
        key.destroy();
        Oversight::Abort
    } else {
        Oversight::Proceed
    }
}

/// Strips every PH layer from the given tags and decodes them.
pub fn reveal(
    params: &GroupParams,
    tags: &[DeterministicTag],
    keys: &[PhKey],
    transcript: &mut Transcript,
) -> Result<Vec<u64>, IntersectError> {
    let keys: Vec<&PhKey> = keys.iter().collect();
    reveal_refs(params, tags, &keys, transcript)
}

/// Short stable digest of a tag, used in transcripts instead of the tag itself.
pub fn tag_digest(params: &GroupParams, tag: &DeterministicTag) -> [u8; 16] {
    let h: [u8; 32] = Sha256::new()
        .chain_update(params.element_to_bytes(&tag.value))
        .chain_update([tag.layers.bits()])
        .finalize()
        .into();
    h[..16].try_into().unwrap()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Event {
    Pass { agency: AgencyId, ciphertexts: usize, bytes_in: usize },
    Intersection { agency: AgencyId, tags: usize },
    Check { agency: AgencyId, tags: usize, decision: Oversight },
    Unwrap { tag: [u8; 16] },
    Reveal { count: usize },
}

impl fmt::Display for Event {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Event::Pass { agency, ciphertexts, bytes_in } => {
                write!(f, "pass agency={} ciphertexts={ciphertexts} bytes_in={bytes_in}", agency.0)
            }
            Event::Intersection { agency, tags } => write!(f, "intersection agency={} tags={tags}", agency.0),
            Event::Check { agency, tags, decision } => {
                let d = match decision {
                    Oversight::Proceed => "proceed",
                    Oversight::Abort => "abort",
                };
                write!(f, "check agency={} tags={tags} decision={d}", agency.0)
            }
            Event::Unwrap { tag } => write!(f, "unwrap tag={}", hex::encode(tag)),
            Event::Reveal { count } => write!(f, "reveal count={count}"),
        }
    }
}

/// Append-only record of one intersection run.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Transcript {
    events: Vec<Event>,
}

impl Transcript {
    pub fn push(&mut self, e: Event) {
        self.events.push(e);
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    /// One line per event.
    pub fn render(&self) -> String {
        self.events.iter().map(|e| format!("{e}\n")).collect()
    }

    /// Every tag that was unwrapped belongs to `allowed`.
    pub fn unwraps_within(&self, params: &GroupParams, allowed: &[DeterministicTag]) -> bool {
        let allowed: HashSet<[u8; 16]> = allowed.iter().map(|t| tag_digest(params, t)).collect();
        self.events.iter().all(|e| match e {
            Event::Unwrap { tag } => allowed.contains(tag),
            _ => true,
        })
    }
}

/// One agency's inputs to a run.
pub struct AgencyKeys {
    pub eg: ElGamalKeyPair,
    pub ph: PhKey,
}

#[derive(Debug)]
pub struct IntersectOutcome {
    /// `None` when an agency aborted.
    pub revealed: Option<Vec<u64>>,
    pub tags: Vec<DeterministicTag>,
    pub transcript: Transcript,
    pub wall_time: Duration,
    /// Bytes handed between agencies: serialized state in memory, whole
    /// frames over a transport.
    pub bytes_transferred: usize,
    /// CPU time summed over every agency and its workers.
    pub agency_cpu: Duration,
}

fn check_inputs(warrant: &IntersectWarrant, sets: &[EncryptedSet], agencies: usize) -> Result<(), IntersectError> {
    if agencies != warrant.roster.len() {
        return Err(IntersectError::InvalidWarrant("agency count differs from warrant roster".into()));
    }
    let by_label: HashMap<&str, usize> = sets.iter().enumerate().map(|(i, s)| (s.label.as_str(), i)).collect();
    let wanted: BTreeSet<&str> = warrant.set_ids.iter().map(String::as_str).collect();
    if wanted.len() != sets.len() || wanted.iter().any(|l| !by_label.contains_key(l)) {
        return Err(IntersectError::InvalidWarrant("input sets do not match the warrant".into()));
    }
    Ok(())
}

/// Full protocol: sequential passes, cross-checked intersection, oversight
/// by every agency in roster order, then reveal. Keys are consumed since PH
/// keys are per-warrant; destroyed keys stay destroyed in `agencies`.
pub fn run_intersection(
    params: &Arc<GroupParams>,
    warrant: &IntersectWarrant,
    sets: Vec<EncryptedSet>,
    agencies: &mut [AgencyKeys],
    workers: usize,
) -> Result<IntersectOutcome, IntersectError> {
    check_inputs(warrant, &sets, agencies.len())?;

    let start = Instant::now();
    let meter = crate::metrics::CpuMeter::start();
    let pool = worker_pool(workers);
    let mut transcript = Transcript::default();
    let mut bytes_transferred = 0;
    let mut wire = ConversionState::new(sets, agencies.len())?.to_bytes(params);
    for a in agencies.iter() {
        // State moves between agencies by value, as bytes.
        bytes_transferred += wire.len();
        let state = ConversionState::from_bytes(params, &wire)?;
        let n = state.ciphertext_count();
        let state = convert_pass(state, &a.eg, &a.ph, &pool)?;
        transcript.push(Event::Pass { agency: a.eg.owner(), ciphertexts: n, bytes_in: wire.len() });
        wire = state.to_bytes(params);
    }
    let state = ConversionState::from_bytes(params, &wire)?;

    let mut tags: Option<Vec<DeterministicTag>> = None;
    for a in agencies.iter() {
        let mine = compute_intersection(&state)?;
        transcript.push(Event::Intersection { agency: a.eg.owner(), tags: mine.len() });
        match &tags {
            Some(prev) if *prev != mine => return Err(IntersectError::CrossCheckFailed),
            Some(_) => {}
            None => tags = Some(mine),
        }
    }
    let tags = tags.unwrap_or_default();

    let mut aborted = false;
    for a in agencies.iter_mut() {
        let decision = oversight_check(&tags, warrant, &mut a.ph);
        transcript.push(Event::Check { agency: a.eg.owner(), tags: tags.len(), decision });
        if decision == Oversight::Abort {
            aborted = true;
            break;
        }
    }
    let revealed = if aborted {
        None
    } else {
        let keys: Vec<&PhKey> = agencies.iter().map(|a| &a.ph).collect();
        Some(reveal_refs(params, &tags, &keys, &mut transcript)?)
    };
    let agency_cpu = meter.finish(Some(&pool));
    Ok(IntersectOutcome { revealed, tags, transcript, wall_time: start.elapsed(), bytes_transferred, agency_cpu })
}

fn reveal_refs(
    params: &GroupParams,
    tags: &[DeterministicTag],
    keys: &[&PhKey],
    transcript: &mut Transcript,
) -> Result<Vec<u64>, IntersectError> {
    if let Some(k) = keys.iter().find(|k| k.is_destroyed()) {
        return Err(CryptoError::PhKeyDestroyed(k.owner()).into());
    }
    let mut ids = Vec::with_capacity(tags.len());
    for tag in tags {
        transcript.push(Event::Unwrap { tag: tag_digest(params, tag) });
        let mut t = tag.clone();
        for k in keys {
            t = k.strip_tag(&t)?;
        }
        ids.push(t.decode(params)?);
    }
    ids.sort_unstable();
    transcript.push(Event::Reveal { count: ids.len() });
    Ok(ids)
}

/// Reveal with borrowed keys from an [`AgencyKeys`] roster.
pub fn reveal_with(
    params: &GroupParams,
    tags: &[DeterministicTag],
    agencies: &[AgencyKeys],
    transcript: &mut Transcript,
) -> Result<Vec<u64>, IntersectError> {
    let keys: Vec<&PhKey> = agencies.iter().map(|a| &a.ph).collect();
    reveal_refs(params, tags, &keys, transcript)
}
