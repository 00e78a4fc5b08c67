//! Simulated anonymous broadcast.
//!
//! Every participant submits one slot per round, possibly empty. The hub
//! releases the non-empty messages to everyone, ordered by a salted digest of
//! their content, so output bytes depend only on the message multiset and
//! never on who sent what. Rounds holding more messages than the configured
//! capacity are split into several consecutive anonymity instances.

use std::collections::{BTreeMap, BTreeSet};

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::codec::{DecodeError, Reader, Writer};
use crate::party::PartyId;
use crate::transport::{Endpoint, Envelope, MsgKind, TransportError};

#[derive(Debug, Error)]
pub enum AnonError {
    #[error("{0} did not submit a slot")]
    MissingParticipant(PartyId),
    #[error("{0} is not a registered participant")]
    UnknownParticipant(PartyId),
    #[error("{0} submitted twice in one round")]
    DuplicateSubmission(PartyId),
    #[error("{count} messages exceed the per-instance capacity of {capacity}")]
    CapacityExceeded { count: usize, capacity: usize },
    #[error("capacity must be at least 1")]
    ZeroCapacity,
    #[error("{0} aborted the run: {1}")]
    Aborted(PartyId, String),
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error(transparent)]
    Decode(#[from] DecodeError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Submission {
    pub sender: PartyId,
    /// Empty for a cover slot.
    pub messages: Vec<Vec<u8>>,
}

impl Submission {
    pub fn empty(sender: PartyId) -> Self {
        Submission { sender, messages: Vec::new() }
    }
}

/// Number of anonymity instances needed for `count` messages.
pub fn batch_capacity(count: usize, capacity: usize) -> Result<usize, AnonError> {
    if capacity == 0 {
        return Err(AnonError::ZeroCapacity);
    }
    Ok(count.div_ceil(capacity))
}

pub fn round_salt(warrant_id: &[u8; 32], round: u32) -> [u8; 32] {
    Sha256::new()
        .chain_update(b"lawful/anon-salt/v1")
        .chain_update(warrant_id)
        .chain_update(round.to_be_bytes())
        .finalize()
        .into()
}

fn check_slots(participants: &[PartyId], submissions: &[Submission]) -> Result<(), AnonError> {
    let registered: BTreeSet<PartyId> = participants.iter().copied().collect();
    let mut seen = BTreeSet::new();
    for s in submissions {
        if !registered.contains(&s.sender) {
            return Err(AnonError::UnknownParticipant(s.sender));
        }
        if !seen.insert(s.sender) {
            return Err(AnonError::DuplicateSubmission(s.sender));
        }
    }
    match registered.difference(&seen).next() {
        Some(&missing) => Err(AnonError::MissingParticipant(missing)),
        None => Ok(()),
    }
}

fn sorted_messages(submissions: Vec<Submission>, salt: &[u8; 32]) -> Vec<Vec<u8>> {
    let mut keyed: Vec<([u8; 32], Vec<u8>)> = submissions
        .into_iter()
        .flat_map(|s| s.messages)
        .map(|m| (Sha256::new().chain_update(salt).chain_update(&m).finalize().into(), m))
        .collect();
    keyed.sort_unstable();
    keyed.into_iter().map(|(_, m)| m).collect()
}

/// One anonymity instance. Fails if a registered participant is missing or
/// the round holds more than `capacity` messages.
pub fn anon_round(
    participants: &[PartyId],
    submissions: Vec<Submission>,
    salt: &[u8; 32],
    capacity: usize,
) -> Result<Vec<Vec<u8>>, AnonError> {
    check_slots(participants, &submissions)?;
    let count = submissions.iter().map(|s| s.messages.len()).sum();
    batch_capacity(count, capacity)?;
    if count > capacity {
        return Err(AnonError::CapacityExceeded { count, capacity });
    }
    Ok(sorted_messages(submissions, salt))
}

/// Splits a protocol round into as many instances as capacity requires.
/// Always returns at least one (possibly empty) instance so that the round
/// acts as a barrier.
pub fn anon_broadcast(
    participants: &[PartyId],
    submissions: Vec<Submission>,
    salt: &[u8; 32],
    capacity: usize,
) -> Result<Vec<Vec<Vec<u8>>>, AnonError> {
    check_slots(participants, &submissions)?;
    batch_capacity(0, capacity)?;
    let all = sorted_messages(submissions, salt);
    if all.is_empty() {
        return Ok(vec![Vec::new()]);
    }
    Ok(all.chunks(capacity).map(<[_]>::to_vec).collect())
}

pub fn encode_slot(messages: &[Vec<u8>]) -> Vec<u8> {
    let mut w = Writer::new();
    w.u32(messages.len() as u32);
    for m in messages {
        w.bytes(m);
    }
    w.into_bytes()
}

pub fn decode_slot(bytes: &[u8]) -> Result<Vec<Vec<u8>>, DecodeError> {
    let mut r = Reader::new(bytes);
    let n = r.u32()?;
    let out = (0..n).map(|_| r.bytes().map(<[u8]>::to_vec)).collect::<Result<Vec<_>, _>>()?;
    r.finish()?;
    Ok(out)
}

/// One released instance: `(index, total instances in the round, messages)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnonOutput {
    pub index: u32,
    pub total: u32,
    pub messages: Vec<Vec<u8>>,
}

impl AnonOutput {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.u32(self.index).u32(self.total).fixed(&encode_slot(&self.messages));
        w.into_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader::new(bytes);
        let index = r.u32()?;
        let total = r.u32()?;
        let messages = decode_slot(r.fixed(r.remaining())?)?;
        Ok(AnonOutput { index, total, messages })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct HubStats {
    pub rounds: u32,
    pub instances: u32,
    pub messages: u64,
}

/// Hub party loop: collects one slot per participant per round, then sends
/// each participant every instance of that round. Returns on `Done`.
pub fn run_hub(
    ep: &Endpoint,
    participants: &[PartyId],
    warrant_id: [u8; 32],
    capacity: usize,
) -> Result<HubStats, AnonError> {
    batch_capacity(0, capacity)?;
    let mut pending: BTreeMap<u32, Vec<Submission>> = BTreeMap::new();
    let mut stats = HubStats::default();
    loop {
        let env = ep.recv()?;
        match env.kind {
            MsgKind::AnonSubmit => {
                let slot = pending.entry(env.round).or_default();
                slot.push(Submission { sender: env.from, messages: decode_slot(&env.payload)? });
                if slot.len() < participants.len() {
                    continue;
                }
                let subs = pending.remove(&env.round).unwrap_or_default();
                let instances = anon_broadcast(participants, subs, &round_salt(&warrant_id, env.round), capacity)?;
                let total = instances.len() as u32;
                stats.rounds += 1;
                stats.instances += total;
                for (i, messages) in instances.into_iter().enumerate() {
                    stats.messages += messages.len() as u64;
                    let out = AnonOutput { index: i as u32, total, messages };
                    let env = Envelope::new(MsgKind::AnonOutput, ep.id(), warrant_id, env.round, out.to_bytes());
                    for &p in participants {
                        ep.send(p, &env)?;
                    }
                }
            }
            MsgKind::Done => return Ok(stats),
            MsgKind::Abort => {
                return Err(AnonError::Aborted(env.from, String::from_utf8_lossy(&env.payload).into_owned()))
            }
            _ => {}
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn telecoms(n: u8) -> Vec<PartyId> {
        (0..n).map(PartyId::Telecom).collect()
    }

    fn subs(assign: &[(u8, &[&[u8]])], all: &[PartyId]) -> Vec<Submission> {
        all.iter()
            .map(|&p| {
                let messages = assign
                    .iter()
                    .filter(|(t, _)| PartyId::Telecom(*t) == p)
                    .flat_map(|(_, ms)| ms.iter().map(|m| m.to_vec()))
                    .collect();
                Submission { sender: p, messages }
            })
            .collect()
    }

    #[test]
    fn single_message_passes_through() {
        let all = telecoms(4);
        let out = anon_round(&all, subs(&[(2, &[b"hello"])], &all), &[0; 32], 8).unwrap();
        assert_eq!(out, vec![b"hello".to_vec()]);
    }

    #[test]
    fn output_ignores_sender_assignment() {
        let all = telecoms(4);
        let salt = round_salt(&[9; 32], 3);
        let a = anon_round(&all, subs(&[(0, &[b"x"]), (2, &[b"y"]), (3, &[b"z"])], &all), &salt, 8).unwrap();
        let b = anon_round(&all, subs(&[(1, &[b"z"]), (2, &[b"x"]), (3, &[b"y"])], &all), &salt, 8).unwrap();
        assert_eq!(a, b);
        let c = anon_round(&all, subs(&[(3, &[b"x", b"y", b"z"])], &all), &salt, 8).unwrap();
        assert_eq!(a, c);
    }

    #[test]
    fn empty_round_and_missing_slot() {
        let all = telecoms(3);
        assert!(anon_round(&all, subs(&[], &all), &[0; 32], 8).unwrap().is_empty());
        let mut s = subs(&[], &all);
        s.pop();
        assert!(matches!(anon_round(&all, s, &[0; 32], 8), Err(AnonError::MissingParticipant(PartyId::Telecom(2)))));
        let mut s = subs(&[], &all);
        s.push(Submission::empty(PartyId::Agency(0)));
        assert!(matches!(anon_round(&all, s, &[0; 32], 8), Err(AnonError::UnknownParticipant(_))));
    }

    #[test]
    fn capacity_scheduling() {
        assert_eq!(batch_capacity(5, 8).unwrap(), 1);
        assert_eq!(batch_capacity(20, 8).unwrap(), 3);
        assert_eq!(batch_capacity(7, 1).unwrap(), 7);
        assert!(matches!(batch_capacity(1, 0), Err(AnonError::ZeroCapacity)));

        let all = telecoms(2);
        let msgs: Vec<Vec<u8>> = (0..20u8).map(|i| vec![i]).collect();
        let s = vec![Submission { sender: all[0], messages: msgs.clone() }, Submission::empty(all[1])];
        assert!(matches!(anon_round(&all, s.clone(), &[0; 32], 8), Err(AnonError::CapacityExceeded { .. })));
        let instances = anon_broadcast(&all, s, &[0; 32], 8).unwrap();
        assert_eq!(instances.iter().map(Vec::len).collect::<Vec<_>>(), vec![8, 8, 4]);
        let mut flat: Vec<_> = instances.concat();
        flat.sort();
        assert_eq!(flat, msgs);
    }

    #[test]
    fn slot_and_output_encoding() {
        let out = AnonOutput { index: 1, total: 3, messages: vec![vec![], vec![1, 2]] };
        assert_eq!(AnonOutput::from_bytes(&out.to_bytes()).unwrap(), out);
        assert!(decode_slot(&[0, 0, 0, 1]).is_err());
    }
}
