//! The intersection protocol with each agency on its own thread, exchanging
//! state over a transport.

use std::cell::RefCell;
use std::thread;
use std::time::{Duration, Instant};

use sha2::{Digest, Sha256};

use super::{
    check_inputs, compute_intersection, convert_pass, oversight_check, tag_digest, worker_pool, AgencyKeys,
    ConversionState, EncryptedSet, Event, IntersectError, IntersectOutcome, IntersectWarrant, Oversight, Transcript,
};
use crate::codec::{DecodeError, Reader, Writer};
use crate::crypto::{DeterministicTag, GroupParams, LayerSet};
use crate::metrics::CpuMeter;
use crate::party::PartyId;
use crate::transport::{Endpoint, Envelope, Mailbox, MsgKind, NetConfig, Network, TransportKind};

/// Large enough for 150,000 prod-2048 ciphertexts in one frame.
const STATE_FRAME_CAP: usize = 1 << 30;

fn warrant_id(w: &IntersectWarrant) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(b"lawful/intersect/v1");
    for s in &w.set_ids {
        h.update((s.len() as u32).to_be_bytes());
        h.update(s.as_bytes());
    }
    h.update((w.max_reveal as u64).to_be_bytes());
    for a in &w.roster {
        h.update((a.len() as u32).to_be_bytes());
        h.update(a.as_bytes());
    }
    h.finalize().into()
}

fn encode_tags(params: &GroupParams, tags: &[DeterministicTag]) -> Vec<u8> {
    let mut w = Writer::with_capacity(4 + tags.len() * (params.element_len() + 1));
    w.u32(tags.len() as u32);
    for t in tags {
        w.fixed(&params.element_to_bytes(&t.value)).u8(t.layers.bits());
    }
    w.into_bytes()
}

fn decode_tags(params: &GroupParams, bytes: &[u8]) -> Result<Vec<DeterministicTag>, DecodeError> {
    let mut r = Reader::new(bytes);
    let n = r.u32()?;
    let out = (0..n)
        .map(|_| {
            let value = params.element_from_bytes(r.fixed(params.element_len())?)?;
            Ok(DeterministicTag { value, layers: LayerSet::from_bits(r.u8()?) })
        })
        .collect::<Result<Vec<_>, DecodeError>>()?;
    r.finish()?;
    Ok(out)
}

fn intersection_digest(params: &GroupParams, tags: &[DeterministicTag]) -> [u8; 32] {
    let mut h = Sha256::new();
    for t in tags {
        h.update(tag_digest(params, t));
    }
    h.finalize().into()
}

struct Report {
    events: Vec<Event>,
    tags: Vec<DeterministicTag>,
    revealed: Option<Vec<u64>>,
    cpu: Duration,
}

struct Party<'a> {
    ep: &'a Endpoint,
    inbox: RefCell<Mailbox<'a>>,
    params: &'a GroupParams,
    wid: [u8; 32],
    index: u8,
    n: u8,
}

impl Party<'_> {
    fn others(&self) -> impl Iterator<Item = PartyId> + use<> {
        let me = self.index;
        (0..self.n).filter(move |&i| i != me).map(PartyId::Agency)
    }

    fn send(&self, to: PartyId, kind: MsgKind, round: u32, payload: Vec<u8>) -> Result<(), IntersectError> {
        Ok(self.ep.send(to, &Envelope::new(kind, self.ep.id(), self.wid, round, payload))?)
    }

    fn expect(&self, kind: MsgKind, round: u32) -> Result<Envelope, IntersectError> {
        let env =
            self.inbox.borrow_mut().recv_where(|e| e.kind == kind && e.round == round && e.warrant_id == self.wid)?;
        if env.kind == MsgKind::Abort {
            return Err(IntersectError::PeerAborted(env.from, String::from_utf8_lossy(&env.payload).into_owned()));
        }
        Ok(env)
    }

    fn run(
        &self,
        warrant: &IntersectWarrant,
        initial: Option<Vec<u8>>,
        keys: &mut AgencyKeys,
        workers: usize,
    ) -> Result<Report, IntersectError> {
        let meter = CpuMeter::start();
        let pool = worker_pool(workers);
        let (params, i, last) = (self.params, self.index, self.n - 1);
        let mut events = Vec::new();

        // Conversion: a chain from agency 0 to the last agency, which hands
        // the finished state to everyone.
        let wire = match initial {
            Some(w) => w,
            None => self.expect(MsgKind::Conversion, 0)?.payload,
        };
        let state = ConversionState::from_bytes(params, &wire)?;
        let count = state.ciphertext_count();
        let state = convert_pass(state, &keys.eg, &keys.ph, &pool)?;
        events.push(Event::Pass { agency: keys.eg.owner(), ciphertexts: count, bytes_in: wire.len() });
        drop(wire);
        let state = if i < last {
            self.send(PartyId::Agency(i + 1), MsgKind::Conversion, 0, state.to_bytes(params))?;
            drop(state);
            ConversionState::from_bytes(params, &self.expect(MsgKind::Conversion, 1)?.payload)?
        } else {
            let out = state.to_bytes(params);
            for p in self.others() {
                self.send(p, MsgKind::Conversion, 1, out.clone())?;
            }
            state
        };

        let tags = compute_intersection(&state)?;
        drop(state);
        events.push(Event::Intersection { agency: keys.eg.owner(), tags: tags.len() });
        let digest = intersection_digest(params, &tags);
        let decision = oversight_check(&tags, warrant, &mut keys.ph);
        events.push(Event::Check { agency: keys.eg.owner(), tags: tags.len(), decision });
        let mut msg = vec![u8::from(decision == Oversight::Abort)];
        msg.extend_from_slice(&digest);
        for p in self.others() {
            self.send(p, MsgKind::Decision, 0, msg.clone())?;
        }
        let mut aborted = decision == Oversight::Abort;
        for _ in self.others() {
            let env = self.expect(MsgKind::Decision, 0)?;
            if env.payload.len() != 33 {
                return Err(IntersectError::Protocol(format!("malformed decision from {}", env.from)));
            }
            if env.payload[1..] != digest {
                return Err(IntersectError::CrossCheckFailed);
            }
            aborted |= env.payload[0] == 1;
        }
        if aborted {
            return Ok(Report { events, tags, revealed: None, cpu: meter.finish(Some(&pool)) });
        }

        // Reveal: the intersecting tags travel the same chain, each agency
        // stripping its own layer; the last one decodes.
        let incoming = if i == 0 {
            events.extend(tags.iter().map(|t| Event::Unwrap { tag: tag_digest(params, t) }));
            tags.clone()
        } else {
            decode_tags(params, &self.expect(MsgKind::Unwrap, 0)?.payload)?
        };
        let stripped = incoming.iter().map(|t| keys.ph.strip_tag(t)).collect::<Result<Vec<_>, _>>()?;
        let revealed = if i < last {
            self.send(PartyId::Agency(i + 1), MsgKind::Unwrap, 0, encode_tags(params, &stripped))?;
            let env = self.expect(MsgKind::Revealed, 0)?;
            let mut r = Reader::new(&env.payload);
            let ids = (0..r.u32()?).map(|_| r.u64()).collect::<Result<Vec<_>, _>>()?;
            r.finish()?;
            ids
        } else {
            let mut ids = stripped.iter().map(|t| t.decode(params)).collect::<Result<Vec<_>, _>>()?;
            ids.sort_unstable();
            events.push(Event::Reveal { count: ids.len() });
            let mut w = Writer::with_capacity(4 + 8 * ids.len());
            w.u32(ids.len() as u32);
            for &id in &ids {
                w.u64(id);
            }
            let payload = w.into_bytes();
            for p in self.others() {
                self.send(p, MsgKind::Revealed, 0, payload.clone())?;
            }
            ids
        };
        Ok(Report { events, tags, revealed: Some(revealed), cpu: meter.finish(Some(&pool)) })
    }
}

/// Same protocol and outcome as [`super::run_intersection`], with every
/// agency on its own thread and state moving over `transport`.
pub fn run_intersection_net(
    params: &GroupParams,
    warrant: &IntersectWarrant,
    sets: Vec<EncryptedSet>,
    agencies: &mut [AgencyKeys],
    workers: usize,
    transport: TransportKind,
) -> Result<IntersectOutcome, IntersectError> {
    check_inputs(warrant, &sets, agencies.len())?;
    let n = agencies.len() as u8;
    let initial = ConversionState::new(sets, agencies.len())?.to_bytes(params);
    let parties: Vec<PartyId> = (0..n).map(PartyId::Agency).collect();
    let cfg = NetConfig { frame_cap: STATE_FRAME_CAP, ..NetConfig::default() };
    let Network { endpoints, traffic, .. } = Network::build(transport, &parties, cfg)?;
    let wid = warrant_id(warrant);

    let start = Instant::now();
    let mut initial = Some(initial);
    let results: Vec<Result<Report, IntersectError>> = thread::scope(|s| {
        let handles: Vec<_> = endpoints
            .iter()
            .zip(agencies.iter_mut())
            .enumerate()
            .map(|(i, (ep, keys))| {
                let init = if i == 0 { initial.take() } else { None };
                s.spawn(move || {
                    let party = Party { ep, inbox: RefCell::new(Mailbox::new(ep)), params, wid, index: i as u8, n };
                    let res = party.run(warrant, init, keys, workers);
                    if let Err(e) = &res {
                        if !matches!(e, IntersectError::PeerAborted(..)) {
                            let abort = Envelope::new(MsgKind::Abort, ep.id(), wid, 0, e.to_string().into_bytes());
                            for p in party.others() {
                                let _ = ep.send(p, &abort);
                            }
                        }
                    }
                    res
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("agency thread panicked")).collect()
    });
    let wall_time = start.elapsed();

    let mut reports = Vec::new();
    let mut errors = Vec::new();
    for r in results {
        match r {
            Ok(rep) => reports.push(rep),
            Err(e) => errors.push(e),
        }
    }
    if !errors.is_empty() {
        errors.sort_by_key(|e| matches!(e, IntersectError::PeerAborted(..) | IntersectError::Transport(_)));
        return Err(errors.remove(0));
    }

    let mut transcript = Transcript::default();
    let order = |e: &Event| match e {
        Event::Pass { .. } => 0,
        Event::Intersection { .. } => 1,
        Event::Check { .. } => 2,
        Event::Unwrap { .. } => 3,
        Event::Reveal { .. } => 4,
    };
    for phase in 0..5 {
        for rep in &reports {
            for e in rep.events.iter().filter(|e| order(e) == phase) {
                transcript.push(e.clone());
            }
        }
    }
    let agency_cpu = reports.iter().map(|r| r.cpu).sum();
    let lead = reports.swap_remove(0);
    Ok(IntersectOutcome {
        revealed: lead.revealed,
        tags: lead.tags,
        transcript,
        wall_time,
        bytes_transferred: traffic.total_bytes() as usize,
        agency_cpu,
    })
}
