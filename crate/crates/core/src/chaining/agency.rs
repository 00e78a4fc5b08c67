use std::collections::BTreeMap;
use std::time::Duration;

use super::messages::{
    decode_forward, decode_response_batch, decode_sign_request, encode_forward, encode_queries, encode_sign_request,
    QueueEntry, ResponseItem,
};
use super::{ChainEntry, ChainError, ChainOutput, Fault, Protocol, Shared, Warrant};
use crate::anonymity::{encode_slot, AnonOutput};
use crate::crypto::rng::derive_rng;
use crate::crypto::{Signature, TelecomId};
use crate::metrics::CpuMeter;
use crate::party::PartyId;
use crate::transport::{Endpoint, Envelope, Mailbox, MsgKind};

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RoundOutcome {
    pub added: Vec<ChainEntry>,
    pub next: Vec<QueueEntry>,
    pub duplicates: u64,
    /// Degrees reported this round.
    pub deltas: Vec<u32>,
}

/// Applies one round of responses to the drained queue. `responses[i]`
/// answers `drained[i]` in protocol 1; in protocol 2 responses are unordered
/// but every drained entry has the same `remaining`, so position does not
/// matter.
pub fn agency_round(
    drained: &[QueueEntry],
    responses: Vec<ResponseItem>,
    warrant: &Warrant,
) -> Result<RoundOutcome, ChainError> {
    if responses.iter().any(|r| matches!(r, ResponseItem::Reject)) {
        return Err(ChainError::UnsignedMessageRejected);
    }
    if responses.len() != drained.len() {
        return Err(ChainError::ResponseCountMismatch { expected: drained.len(), got: responses.len() });
    }
    let mut out = RoundOutcome::default();
    for (entry, resp) in drained.iter().zip(responses) {
        let j = entry.remaining;
        let r = match resp {
            ResponseItem::Served(r) => r,
            ResponseItem::Duplicate => {
                out.duplicates += 1;
                continue;
            }
            ResponseItem::Reject => unreachable!("checked above"),
        };
        out.added.push(ChainEntry { ct: r.agency_ct, distance: warrant.k - j, owner: entry.owner });
        if j == 0 {
            if !r.neighbor_cts.is_empty() {
                return Err(ChainError::Protocol("neighbors returned for a j = 0 query".into()));
            }
            continue;
        }
        let delta = r.delta.unwrap_or(r.neighbor_cts.len() as u32);
        out.deltas.push(delta);
        if delta > warrant.d && j != warrant.k {
            continue;
        }
        out.next.extend(r.neighbor_cts.into_iter().map(|(ct, owner)| QueueEntry { ct, owner, remaining: j - 1 }));
    }
    Ok(out)
}

pub(crate) struct AgencyResult {
    pub output: ChainOutput,
    pub cpu: Duration,
    pub rounds: u32,
    pub duplicates: u64,
    pub deltas: Vec<(u32, u32)>,
}

/// Queue and output as every agency tracks them.
struct Mirror {
    q: Vec<QueueEntry>,
    out: Vec<ChainEntry>,
    round: u32,
    duplicates: u64,
    deltas: Vec<(u32, u32)>,
}

impl Mirror {
    /// The target's telecom ciphertext is derived from the run seed, so
    /// every agency starts from the same queue.
    fn new(sh: &Shared) -> Self {
        let w = sh.warrant;
        let mut rng = derive_rng(&sh.root, "target", &[]);
        let ct = sh.telecom_keys[w.target_telecom.0 as usize].encrypt(w.x, &mut rng);
        let owner = (sh.cfg.protocol == Protocol::Revealing).then_some(w.target_telecom);
        Mirror {
            q: vec![QueueEntry { ct, owner, remaining: w.k }],
            out: Vec::new(),
            round: 0,
            duplicates: 0,
            deltas: Vec::new(),
        }
    }

    fn apply(&mut self, sh: &Shared, responses: Vec<ResponseItem>) -> Result<(), ChainError> {
        let o = agency_round(&self.q, responses, sh.warrant)?;
        self.out.extend(o.added);
        self.duplicates += o.duplicates;
        self.deltas.extend(o.deltas.into_iter().map(|d| (self.round, d)));
        self.q = o.next;
        self.round += 1;
        Ok(())
    }

    fn finish(self, cpu: Duration) -> AgencyResult {
        AgencyResult {
            output: ChainOutput { entries: self.out },
            cpu,
            rounds: self.round,
            duplicates: self.duplicates,
            deltas: self.deltas,
        }
    }
}

type RoundItems = (Vec<(MsgKind, Vec<u8>)>, Vec<(TelecomId, Vec<usize>)>);

/// Telecom-bound payloads for the current queue. Protocol 1 sends one batch
/// per owning telecom, in telecom order; protocol 2 one broadcast.
fn round_items(q: &[QueueEntry], protocol: Protocol) -> Result<RoundItems, ChainError> {
    match protocol {
        Protocol::Revealing => {
            let mut groups: BTreeMap<TelecomId, Vec<usize>> = BTreeMap::new();
            for (i, e) in q.iter().enumerate() {
                let owner = e.owner.ok_or_else(|| ChainError::Protocol("queue entry without owner".into()))?;
                groups.entry(owner).or_default().push(i);
            }
            let items = groups
                .values()
                .map(|idx| (MsgKind::QueryBatch, encode_queries(idx.iter().map(|&i| &q[i]))))
                .collect();
            Ok((items, groups.into_iter().collect()))
        }
        Protocol::Hiding => Ok((vec![(MsgKind::Broadcast, encode_queries(q.iter()))], Vec::new())),
    }
}

/// Next envelope of one of `kinds` for `round`; others wait in the mailbox.
fn expect(mb: &mut Mailbox, sh: &Shared, kinds: &[MsgKind], round: u32) -> Result<Envelope, ChainError> {
    let env = mb.recv_where(|e| kinds.contains(&e.kind) && e.round == round && e.warrant_id == sh.warrant_id)?;
    if env.kind == MsgKind::Abort {
        return Err(ChainError::PeerAborted(env.from, String::from_utf8_lossy(&env.payload).into_owned()));
    }
    Ok(env)
}

pub(crate) fn send_abort(ep: &Endpoint, sh: &Shared, to: impl IntoIterator<Item = PartyId>, err: &ChainError) {
    let env = Envelope::new(MsgKind::Abort, ep.id(), sh.warrant_id, 0, err.to_string().into_bytes());
    for p in to {
        if p != ep.id() {
            let _ = ep.send(p, &env);
        }
    }
}

fn everyone_else(sh: &Shared) -> Vec<PartyId> {
    let mut all: Vec<PartyId> = sh.followers().chain(sh.telecoms()).collect();
    if sh.cfg.protocol == Protocol::Hiding {
        all.push(PartyId::AnonHub);
    }
    all
}

fn gather_signatures(
    mb: &mut Mailbox,
    sh: &Shared,
    round: u32,
    items: &[(MsgKind, Vec<u8>)],
) -> Result<Vec<Vec<(PartyId, Signature)>>, ChainError> {
    let lead_key = &sh.dep.agencies[0].sig;
    let mut sigs: Vec<Vec<(PartyId, Signature)>> = items
        .iter()
        .map(|(k, p)| vec![(PartyId::LEAD, lead_key.sign(&Envelope::signing_bytes(*k, &sh.warrant_id, round, p)))])
        .collect();
    let req = Envelope::new(MsgKind::SignRequest, PartyId::LEAD, sh.warrant_id, round, encode_sign_request(items));
    for f in sh.followers() {
        mb.endpoint().send(f, &req)?;
    }
    for _ in sh.followers() {
        let env = expect(mb, sh, &[MsgKind::SignResponse], round)?;
        if env.signatures.len() != items.len() || env.signatures.iter().any(|(who, _)| *who != env.from) {
            return Err(ChainError::Protocol(format!("malformed signature response from {}", env.from)));
        }
        for (slot, s) in sigs.iter_mut().zip(env.signatures) {
            slot.push(s);
        }
    }
    for slot in &mut sigs {
        slot.sort_by_key(|(p, _)| *p);
        if let Some(Fault::DropSignature { round: r, agency }) = sh.cfg.fault {
            if r == round {
                slot.retain(|(p, _)| *p != PartyId::Agency(agency));
            }
        }
    }
    Ok(sigs)
}

/// Places each telecom's replies back at the queue positions it was asked.
fn assemble(
    sh: &Shared,
    q: &[QueueEntry],
    groups: &[(TelecomId, Vec<usize>)],
    replies: &[(TelecomId, Vec<u8>)],
) -> Result<Vec<ResponseItem>, ChainError> {
    if replies.len() != groups.len() {
        return Err(ChainError::ResponseCountMismatch { expected: groups.len(), got: replies.len() });
    }
    let mut placed: Vec<Option<ResponseItem>> = vec![None; q.len()];
    for ((t, idx), (rt, payload)) in groups.iter().zip(replies) {
        if t != rt {
            return Err(ChainError::Protocol(format!("reply from {rt} where {t} was expected")));
        }
        let items = decode_response_batch(&sh.dep.params, payload)?.ok_or(ChainError::UnsignedMessageRejected)?;
        if items.len() != idx.len() {
            return Err(ChainError::ResponseCountMismatch { expected: idx.len(), got: items.len() });
        }
        for (&i, item) in idx.iter().zip(items) {
            placed[i] = Some(item);
        }
    }
    Ok(placed.into_iter().map(|p| p.expect("every queue position belongs to one group")).collect())
}

fn submit_empty_slot(ep: &Endpoint, sh: &Shared, round: u32) -> Result<(), ChainError> {
    let env = Envelope::new(MsgKind::AnonSubmit, ep.id(), sh.warrant_id, round, encode_slot(&[]));
    Ok(ep.send(PartyId::AnonHub, &env)?)
}

/// Every anonymity instance of one round, decoded in release order.
fn collect_anon(mb: &mut Mailbox, sh: &Shared, round: u32) -> Result<Vec<ResponseItem>, ChainError> {
    let mut parts: BTreeMap<u32, Vec<Vec<u8>>> = BTreeMap::new();
    loop {
        let env = expect(mb, sh, &[MsgKind::AnonOutput], round)?;
        let out = AnonOutput::from_bytes(&env.payload)?;
        parts.insert(out.index, out.messages);
        if parts.len() as u32 >= out.total {
            break;
        }
    }
    parts
        .into_values()
        .flatten()
        .map(|m| Ok(ResponseItem::from_bytes(&sh.dep.params, &m)?))
        .collect()
}

pub(crate) fn run_lead(ep: &Endpoint, sh: &Shared) -> Result<AgencyResult, ChainError> {
    let meter = CpuMeter::start();
    match lead_loop(&mut Mailbox::new(ep), sh) {
        Ok(m) => {
            let done = Envelope::new(MsgKind::Done, ep.id(), sh.warrant_id, m.round, Vec::new());
            for p in everyone_else(sh) {
                ep.send(p, &done)?;
            }
            Ok(m.finish(meter.finish(None)))
        }
        Err(e) => {
            send_abort(ep, sh, everyone_else(sh), &e);
            Err(e)
        }
    }
}

fn lead_loop(mb: &mut Mailbox, sh: &Shared) -> Result<Mirror, ChainError> {
    let ep = mb.endpoint();
    let mut m = Mirror::new(sh);
    while !m.q.is_empty() {
        let round = m.round;
        let (items, groups) = round_items(&m.q, sh.cfg.protocol)?;
        let sigs = gather_signatures(mb, sh, round, &items)?;
        let responses = match sh.cfg.protocol {
            Protocol::Revealing => {
                for (((kind, payload), (t, _)), sigs) in items.into_iter().zip(&groups).zip(sigs) {
                    let mut env = Envelope::new(kind, PartyId::LEAD, sh.warrant_id, round, payload);
                    env.signatures = sigs;
                    ep.send(PartyId::telecom(*t), &env)?;
                }
                let mut replies: BTreeMap<TelecomId, Vec<u8>> = BTreeMap::new();
                while replies.len() < groups.len() {
                    let env = expect(mb, sh, &[MsgKind::ResponseBatch], round)?;
                    let PartyId::Telecom(t) = env.from else {
                        return Err(ChainError::Protocol(format!("response batch from {}", env.from)));
                    };
                    replies.insert(TelecomId(t), env.payload);
                }
                let replies: Vec<_> = replies.into_iter().collect();
                let responses = assemble(sh, &m.q, &groups, &replies)?;
                let fwd = Envelope::new(MsgKind::Forward, PartyId::LEAD, sh.warrant_id, round, encode_forward(&replies));
                for f in sh.followers() {
                    ep.send(f, &fwd)?;
                }
                responses
            }
            Protocol::Hiding => {
                let (kind, payload) = items.into_iter().next().expect("one broadcast per round");
                let mut env = Envelope::new(kind, PartyId::LEAD, sh.warrant_id, round, payload);
                env.signatures = sigs.into_iter().next().expect("one signature set");
                for t in sh.telecoms() {
                    ep.send(t, &env)?;
                }
                submit_empty_slot(ep, sh, round)?;
                collect_anon(mb, sh, round)?
            }
        };
        m.apply(sh, responses)?;
    }
    Ok(m)
}

pub(crate) fn run_follower(ep: &Endpoint, sh: &Shared) -> Result<AgencyResult, ChainError> {
    let meter = CpuMeter::start();
    match follower_loop(&mut Mailbox::new(ep), sh) {
        Ok(m) => Ok(m.finish(meter.finish(None))),
        Err(e) => {
            if !matches!(e, ChainError::PeerAborted(..)) {
                let mut to = vec![PartyId::LEAD];
                if sh.cfg.protocol == Protocol::Hiding {
                    to.push(PartyId::AnonHub);
                }
                send_abort(ep, sh, to, &e);
            }
            Err(e)
        }
    }
}

fn follower_loop(mb: &mut Mailbox, sh: &Shared) -> Result<Mirror, ChainError> {
    let ep = mb.endpoint();
    let me = ep.id();
    let PartyId::Agency(idx) = me else { unreachable!("followers are agencies") };
    let key = &sh.dep.agencies[idx as usize].sig;
    let mut m = Mirror::new(sh);
    loop {
        let env = expect(mb, sh, &[MsgKind::SignRequest, MsgKind::Forward, MsgKind::Done], m.round)?;
        match env.kind {
            MsgKind::SignRequest => {
                let asked = decode_sign_request(&env.payload)?;
                let (mine, _) = round_items(&m.q, sh.cfg.protocol)?;
                let same = asked.len() == mine.len()
                    && asked.iter().zip(&mine).all(|((k, p), (mk, mp))| *k == *mk as u8 && p == mp);
                if !same {
                    return Err(ChainError::SignRequestMismatch);
                }
                let mut reply = Envelope::new(MsgKind::SignResponse, me, sh.warrant_id, m.round, Vec::new());
                reply.signatures = mine
                    .iter()
                    .map(|(k, p)| (me, key.sign(&Envelope::signing_bytes(*k, &sh.warrant_id, m.round, p))))
                    .collect();
                ep.send(PartyId::LEAD, &reply)?;
                if sh.cfg.protocol == Protocol::Hiding {
                    submit_empty_slot(ep, sh, m.round)?;
                    let responses = collect_anon(mb, sh, m.round)?;
                    m.apply(sh, responses)?;
                }
            }
            MsgKind::Forward => {
                let (_, groups) = round_items(&m.q, sh.cfg.protocol)?;
                let replies = decode_forward(&env.payload)?;
                let responses = assemble(sh, &m.q, &groups, &replies)?;
                m.apply(sh, responses)?;
            }
            MsgKind::Done => return Ok(m),
            _ => unreachable!("filtered by expect"),
        }
    }
}
