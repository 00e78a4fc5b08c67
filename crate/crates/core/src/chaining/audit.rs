//! After-the-fact checks over what agencies received and what telecoms
//! logged.

use std::collections::BTreeMap;

use super::ResponseItem;
use crate::anonymity::AnonOutput;
use crate::crypto::GroupParams;
use crate::graph::ServingMap;
use crate::party::PartyId;
use crate::transport::{Envelope, MsgKind};

use super::TelecomAuditLog;

/// Checks that an agency's protocol-2 transcript carries no ownership
/// information: nothing arrived directly from a telecom, and every
/// anonymous message decodes under the owner-free encoding.
pub fn check_ownership_hidden(params: &GroupParams, received: &[Envelope]) -> Result<(), String> {
    for env in received {
        if env.from.is_telecom() {
            return Err(format!("{:?} in round {} came straight from {}", env.kind, env.round, env.from));
        }
        if env.kind == MsgKind::AnonOutput {
            let out = AnonOutput::from_bytes(&env.payload).map_err(|e| e.to_string())?;
            for m in &out.messages {
                ResponseItem::from_bytes(params, m).map_err(|e| format!("round {}: {e}", env.round))?;
            }
        }
    }
    Ok(())
}

/// Shape of one received envelope with ciphertext bytes abstracted away.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum SkeletonItem {
    Envelope { kind: u8, from: PartyId, round: u32, len: usize },
    /// All anonymous messages of a round as sorted lengths; instance
    /// boundaries and order depend on ciphertext bytes.
    Anonymous { round: u32, lens: Vec<usize> },
}

/// Projection of an agency transcript that two runs must share when the
/// agency cannot tell them apart beyond ciphertext randomness.
pub fn skeleton(received: &[Envelope]) -> Vec<SkeletonItem> {
    let mut items = Vec::new();
    let mut anon: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for env in received {
        match env.kind {
            MsgKind::AnonOutput => {
                let lens = anon.entry(env.round).or_default();
                if let Ok(out) = AnonOutput::from_bytes(&env.payload) {
                    lens.extend(out.messages.iter().map(Vec::len));
                }
            }
            kind => items.push(SkeletonItem::Envelope {
                kind: kind as u8,
                from: env.from,
                round: env.round,
                len: env.payload.len(),
            }),
        }
    }
    items.extend(anon.into_iter().map(|(round, mut lens)| {
        lens.sort_unstable();
        SkeletonItem::Anonymous { round, lens }
    }));
    items.sort();
    items
}

/// Checks that every output identifier was logged exactly once, by the
/// telecom serving it, and that nothing else was logged. An identifier no
/// telecom serves must be logged by `fallback`.
pub fn logs_match_output(
    logs: &[TelecomAuditLog],
    serving: &ServingMap,
    fallback: crate::crypto::TelecomId,
    output: &BTreeMap<u64, u8>,
) -> Result<(), String> {
    let mut seen: BTreeMap<u64, crate::crypto::TelecomId> = BTreeMap::new();
    for log in logs {
        for &(id, round) in &log.entries {
            let expected = serving.owner_of(id).unwrap_or(fallback);
            if expected != log.telecom {
                return Err(format!("{} logged {id}, which {expected} serves", log.telecom));
            }
            if seen.insert(id, log.telecom).is_some() {
                return Err(format!("{id} logged twice"));
            }
            match output.get(&id) {
                None => return Err(format!("{} logged {id}, which is not in the output", log.telecom)),
                Some(&dist) if u32::from(dist) != round => {
                    return Err(format!("{id} logged in round {round} but found at distance {dist}"))
                }
                Some(_) => {}
            }
        }
    }
    if let Some(id) = output.keys().find(|id| !seen.contains_key(id)) {
        return Err(format!("{id} is in the output but no telecom logged it"));
    }
    Ok(())
}
