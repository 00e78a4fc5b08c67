//! Plaintext baseline: the same search, dedup and degree rules, and message
//! pattern as protocol 1, with identifiers sent in the clear and no
//! signatures. Used to measure what the cryptography costs.

use std::collections::{BTreeMap, HashMap};
use std::thread;
use std::time::Instant;

use super::{ChainConfig, ChainError, TelecomAuditLog, Warrant};
use crate::codec::{DecodeError, Reader, Writer};
use crate::crypto::TelecomId;
use crate::graph::GraphPartition;
use crate::metrics::{CpuMeter, RunMetrics};
use crate::party::PartyId;
use crate::transport::{Endpoint, Envelope, NetConfig, Network};

#[derive(Debug)]
pub struct ZeroOutput {
    /// Identifier to distance from `x`.
    pub vertices: BTreeMap<u64, u8>,
    pub logs: Vec<TelecomAuditLog>,
    pub metrics: RunMetrics,
}

struct ZeroReply {
    /// `None` marks a duplicate.
    served: Option<(Option<u32>, Vec<(u64, TelecomId)>)>,
}

fn encode_queries(q: &[(u64, u8)]) -> Vec<u8> {
    let mut w = Writer::with_capacity(4 + q.len() * 9);
    w.u32(q.len() as u32);
    for &(id, j) in q {
        w.u64(id).u8(j);
    }
    w.into_bytes()
}

fn decode_queries(bytes: &[u8]) -> Result<Vec<(u64, u8)>, DecodeError> {
    let mut r = Reader::new(bytes);
    let out = (0..r.u32()?).map(|_| Ok((r.u64()?, r.u8()?))).collect::<Result<Vec<_>, DecodeError>>()?;
    r.finish()?;
    Ok(out)
}

fn encode_replies(replies: &[ZeroReply]) -> Vec<u8> {
    let mut w = Writer::new();
    w.u32(replies.len() as u32);
    for rep in replies {
        match &rep.served {
            None => {
                w.u8(1);
            }
            Some((delta, nbrs)) => {
                w.u8(0).u32(delta.map_or(u32::MAX, |d| d)).u32(nbrs.len() as u32);
                for (b, t) in nbrs {
                    w.u64(*b).u8(t.0);
                }
            }
        }
    }
    w.into_bytes()
}

fn decode_replies(bytes: &[u8]) -> Result<Vec<ZeroReply>, DecodeError> {
    let mut r = Reader::new(bytes);
    let n = r.u32()?;
    let mut out = Vec::new();
    for _ in 0..n {
        let served = match r.u8()? {
            1 => None,
            0 => {
                let delta = Some(r.u32()?).filter(|&d| d != u32::MAX);
                let m = r.u32()?;
                let nbrs = (0..m).map(|_| Ok((r.u64()?, TelecomId(r.u8()?)))).collect::<Result<Vec<_>, DecodeError>>()?;
                Some((delta, nbrs))
            }
            other => return Err(DecodeError::invalid("zero reply", other.to_string())),
        };
        out.push(ZeroReply { served });
    }
    r.finish()?;
    Ok(out)
}

/// Runs the plaintext search with the lead agency and every telecom on
/// their own threads over `cfg.transport`.
pub fn run_zero_crypto(
    partitions: &[GraphPartition],
    warrant: &Warrant,
    cfg: &ChainConfig,
) -> Result<ZeroOutput, ChainError> {
    if partitions.is_empty() || partitions.len() > u8::MAX as usize {
        return Err(ChainError::InvalidWarrant("need 1..=255 telecom partitions".into()));
    }
    if warrant.target_telecom.0 as usize >= partitions.len() {
        return Err(ChainError::InvalidWarrant(format!("target telecom {} out of range", warrant.target_telecom)));
    }
    let wid = warrant.id();
    let mut parties = vec![PartyId::LEAD];
    parties.extend((0..partitions.len() as u8).map(PartyId::Telecom));
    let net_cfg = NetConfig { frame_cap: cfg.frame_cap, recv_timeout: cfg.recv_timeout, record: false };
    let Network { endpoints, traffic, .. } = Network::build(cfg.transport, &parties, net_cfg)?;
    let n_telecoms = partitions.len();

    let start = Instant::now();
    let (lead, telecoms) = thread::scope(|s| {
        let mut eps = endpoints.into_iter();
        let lead_ep = eps.next().expect("lead endpoint");
        let handles: Vec<_> = eps
            .zip(partitions)
            .map(|(ep, part)| s.spawn(move || zero_telecom(&ep, part, wid)))
            .collect();
        let lead = s.spawn(move || {
            let meter = CpuMeter::start();
            let res = zero_lead(&lead_ep, warrant, wid, n_telecoms);
            let kind = if res.is_ok() { crate::transport::MsgKind::Done } else { crate::transport::MsgKind::Abort };
            for t in 0..n_telecoms as u8 {
                let _ = lead_ep.send(PartyId::Telecom(t), &Envelope::new(kind, PartyId::LEAD, wid, 0, Vec::new()));
            }
            (meter.finish(None), res)
        });
        let lead = lead.join().expect("lead thread panicked");
        let telecoms: Vec<_> = handles.into_iter().map(|h| h.join().expect("telecom thread panicked")).collect();
        (lead, telecoms)
    });
    let wall_time = start.elapsed();

    let (lead_cpu, lead_res) = lead;
    let (vertices, rounds, duplicates) = lead_res?;
    let mut metrics = RunMetrics { wall_time, rounds, duplicates, ..RunMetrics::default() };
    metrics.cpu.insert(PartyId::LEAD, lead_cpu);
    let mut logs = Vec::new();
    for (t, (cpu, res)) in telecoms.into_iter().enumerate() {
        metrics.cpu.insert(PartyId::Telecom(t as u8), cpu);
        logs.push(res?);
    }
    metrics.bytes_total = traffic.total_bytes();
    metrics.frames = traffic.total_frames();
    metrics.bytes_sent = traffic.snapshot().into_iter().map(|(p, t)| (p, t.bytes_sent)).collect();
    metrics.ciphertexts_out = vertices.len();
    Ok(ZeroOutput { vertices, logs, metrics })
}

type LeadResult = (BTreeMap<u64, u8>, u32, u64);

fn zero_lead(ep: &Endpoint, w: &Warrant, wid: [u8; 32], n_telecoms: usize) -> Result<LeadResult, ChainError> {
    use crate::transport::MsgKind;
    let mut out = BTreeMap::new();
    let mut q: Vec<(u64, TelecomId, u8)> = vec![(w.x, w.target_telecom, w.k)];
    let mut round = 0u32;
    let mut duplicates = 0u64;
    while !q.is_empty() {
        let mut groups: BTreeMap<TelecomId, Vec<usize>> = BTreeMap::new();
        for (i, &(_, t, _)) in q.iter().enumerate() {
            if t.0 as usize >= n_telecoms {
                return Err(ChainError::Protocol(format!("owner {t} out of range")));
            }
            groups.entry(t).or_default().push(i);
        }
        for (t, idx) in &groups {
            let payload = encode_queries(&idx.iter().map(|&i| (q[i].0, q[i].2)).collect::<Vec<_>>());
            ep.send(PartyId::telecom(*t), &Envelope::new(MsgKind::ZeroQuery, PartyId::LEAD, wid, round, payload))?;
        }
        let mut replies: HashMap<TelecomId, Vec<ZeroReply>> = HashMap::new();
        while replies.len() < groups.len() {
            let env = ep.recv()?;
            match (env.kind, env.from) {
                (MsgKind::ZeroResponse, PartyId::Telecom(t)) if env.round == round => {
                    replies.insert(TelecomId(t), decode_replies(&env.payload)?);
                }
                (MsgKind::Abort, from) => {
                    return Err(ChainError::PeerAborted(from, String::from_utf8_lossy(&env.payload).into_owned()))
                }
                (kind, from) => return Err(ChainError::Protocol(format!("unexpected {kind:?} from {from}"))),
            }
        }
        let mut next = Vec::new();
        for (t, idx) in groups {
            let reps = replies.remove(&t).unwrap_or_default();
            if reps.len() != idx.len() {
                return Err(ChainError::ResponseCountMismatch { expected: idx.len(), got: reps.len() });
            }
            for (i, rep) in idx.into_iter().zip(reps) {
                let (id, _, j) = q[i];
                let Some((delta, nbrs)) = rep.served else {
                    duplicates += 1;
                    continue;
                };
                out.insert(id, w.k - j);
                if j == 0 {
                    continue;
                }
                let delta = delta.unwrap_or(nbrs.len() as u32);
                if delta > w.d && j != w.k {
                    continue;
                }
                next.extend(nbrs.into_iter().map(|(b, t)| (b, t, j - 1)));
            }
        }
        q = next;
        round += 1;
    }
    Ok((out, round, duplicates))
}

fn zero_telecom(
    ep: &Endpoint,
    part: &GraphPartition,
    wid: [u8; 32],
) -> (std::time::Duration, Result<TelecomAuditLog, ChainError>) {
    use crate::transport::MsgKind;
    let meter = CpuMeter::start();
    let mut log = TelecomAuditLog::new(part.owner());
    let serving = part.serving();
    let res = loop {
        let env = match ep.recv() {
            Ok(env) => env,
            Err(e) => break Err(e.into()),
        };
        match env.kind {
            MsgKind::Done => break Ok(()),
            MsgKind::Abort => break Err(ChainError::PeerAborted(env.from, String::new())),
            MsgKind::ZeroQuery => {
                let mut step = || -> Result<(), ChainError> {
                    let mut replies = Vec::new();
                    for (id, j) in decode_queries(&env.payload)? {
                        if !log.record(id, env.round) {
                            replies.push(ZeroReply { served: None });
                            continue;
                        }
                        if j == 0 {
                            replies.push(ZeroReply { served: Some((None, Vec::new())) });
                            continue;
                        }
                        let nb = if serving.owner_of(id).is_none() { &[][..] } else { part.neighbors(id)? };
                        let nbrs = nb
                            .iter()
                            .map(|&b| Ok((b, serving.owner_of(b).ok_or(ChainError::UnknownTelecom(b))?)))
                            .collect::<Result<Vec<_>, ChainError>>()?;
                        replies.push(ZeroReply { served: Some((Some(nbrs.len() as u32), nbrs)) });
                    }
                    let out = Envelope::new(MsgKind::ZeroResponse, ep.id(), wid, env.round, encode_replies(&replies));
                    Ok(ep.send(PartyId::LEAD, &out)?)
                };
                if let Err(e) = step() {
                    let _ = ep.send(
                        PartyId::LEAD,
                        &Envelope::new(MsgKind::Abort, ep.id(), wid, env.round, e.to_string().into_bytes()),
                    );
                    break Err(e);
                }
            }
            other => break Err(ChainError::Protocol(format!("unexpected {other:?} from {}", env.from))),
        }
    };
    (meter.finish(None), res.map(|()| log))
}
