//! Signed envelopes and the two interchangeable transports.
//!
//! Every message is an [`Envelope`] serialized canonically and sent as one
//! frame: a 4-byte big-endian length followed by the envelope bytes. The
//! in-process transport moves those bytes over channels; the TCP transport
//! moves them over one loopback or LAN connection per party pair. Both count
//! the same frame lengths, so byte totals agree across transports.

mod inproc;
mod tcp;

use std::collections::{BTreeMap, VecDeque};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use thiserror::Error;

use crate::codec::{DecodeError, Reader, Writer};
use crate::crypto::{Signature, SIGNATURE_LEN};
use crate::party::PartyId;

pub use tcp::establish as tcp_establish;

pub const FRAME_HEADER_LEN: usize = 4;
pub const DEFAULT_FRAME_CAP: usize = 64 << 20;

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("{0} disconnected")]
    PeerDisconnected(PartyId),
    #[error("frame of {len} bytes exceeds the {cap}-byte cap")]
    FrameTooLarge { len: usize, cap: usize },
    #[error("no connection to {0}")]
    UnknownPeer(PartyId),
    #[error("envelope claims sender {claimed} but arrived from {actual}")]
    SenderMismatch { claimed: PartyId, actual: PartyId },
    #[error("timed out after {0:?} waiting for a message")]
    Timeout(Duration),
    #[error("handshake failed: {0}")]
    Handshake(String),
    #[error("{0} envelopes held back without being asked for")]
    Backlog(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Decode(#[from] DecodeError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum MsgKind {
    SignRequest = 1,
    SignResponse = 2,
    QueryBatch = 3,
    ResponseBatch = 4,
    Forward = 5,
    Broadcast = 6,
    AnonSubmit = 7,
    AnonOutput = 8,
    ZeroQuery = 9,
    ZeroResponse = 10,
    Done = 11,
    Abort = 12,
    /// Intersection: serialized conversion state.
    Conversion = 13,
    /// Intersection: oversight decision and intersection digest.
    Decision = 14,
    /// Intersection: tags with some PH layers stripped.
    Unwrap = 15,
    /// Intersection: the revealed identifiers.
    Revealed = 16,
}

impl MsgKind {
    fn from_u8(v: u8) -> Result<Self, DecodeError> {
        use MsgKind::*;
        Ok(match v {
            1 => SignRequest,
            2 => SignResponse,
            3 => QueryBatch,
            4 => ResponseBatch,
            5 => Forward,
            6 => Broadcast,
            7 => AnonSubmit,
            8 => AnonOutput,
            9 => ZeroQuery,
            10 => ZeroResponse,
            11 => Done,
            12 => Abort,
            13 => Conversion,
            14 => Decision,
            15 => Unwrap,
            16 => Revealed,
            other => return Err(DecodeError::invalid("message kind", other.to_string())),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Envelope {
    pub kind: MsgKind,
    pub from: PartyId,
    pub warrant_id: [u8; 32],
    pub round: u32,
    pub payload: Vec<u8>,
    pub signatures: Vec<(PartyId, Signature)>,
}

impl Envelope {
    pub fn new(kind: MsgKind, from: PartyId, warrant_id: [u8; 32], round: u32, payload: Vec<u8>) -> Self {
        Envelope { kind, from, warrant_id, round, payload, signatures: Vec::new() }
    }

    /// The bytes agencies sign: everything except sender and signatures.
    pub fn signing_bytes(kind: MsgKind, warrant_id: &[u8; 32], round: u32, payload: &[u8]) -> Vec<u8> {
        let mut w = Writer::with_capacity(payload.len() + 48);
        w.fixed(b"lawful/env/v1").u8(kind as u8).fixed(warrant_id).u32(round).bytes(payload);
        w.into_bytes()
    }

    pub fn signed_message(&self) -> Vec<u8> {
        Self::signing_bytes(self.kind, &self.warrant_id, self.round, &self.payload)
    }

    pub fn encoded_len(&self) -> usize {
        1 + 2 + 32 + 4 + 4 + self.payload.len() + 1 + self.signatures.len() * (2 + SIGNATURE_LEN)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::with_capacity(self.encoded_len());
        w.u8(self.kind as u8);
        self.from.write(&mut w);
        w.fixed(&self.warrant_id).u32(self.round).bytes(&self.payload).u8(self.signatures.len() as u8);
        for (who, sig) in &self.signatures {
            who.write(&mut w);
            w.fixed(&sig.0);
        }
        w.into_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader::new(bytes);
        let kind = MsgKind::from_u8(r.u8()?)?;
        let from = PartyId::read(&mut r)?;
        let warrant_id = r.array()?;
        let round = r.u32()?;
        let payload = r.bytes()?.to_vec();
        let n = r.u8()?;
        let signatures = (0..n)
            .map(|_| Ok((PartyId::read(&mut r)?, Signature(r.array()?))))
            .collect::<Result<Vec<_>, DecodeError>>()?;
        r.finish()?;
        Ok(Envelope { kind, from, warrant_id, round, payload, signatures })
    }

    /// Length-prefixed wire frame.
    pub fn frame(&self) -> Vec<u8> {
        let body = self.to_bytes();
        let mut out = Vec::with_capacity(FRAME_HEADER_LEN + body.len());
        out.extend_from_slice(&(body.len() as u32).to_be_bytes());
        out.extend_from_slice(&body);
        out
    }
}

#[derive(Debug, Clone, Copy)]
pub struct NetConfig {
    pub frame_cap: usize,
    pub recv_timeout: Duration,
    /// Keep a copy of every envelope delivered to an agency.
    pub record: bool,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig { frame_cap: DEFAULT_FRAME_CAP, recv_timeout: Duration::from_secs(600), record: false }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PartyTraffic {
    pub bytes_sent: u64,
    pub bytes_received: u64,
    pub frames_sent: u64,
}

/// Frame-length accounting shared by all endpoints of one network.
#[derive(Debug, Default)]
pub struct Traffic {
    parties: Mutex<BTreeMap<PartyId, PartyTraffic>>,
}

impl Traffic {
    fn sent(&self, who: PartyId, frame_len: usize) {
        let mut p = self.parties.lock().unwrap();
        let e = p.entry(who).or_default();
        e.bytes_sent += frame_len as u64;
        e.frames_sent += 1;
    }

    fn received(&self, who: PartyId, frame_len: usize) {
        self.parties.lock().unwrap().entry(who).or_default().bytes_received += frame_len as u64;
    }

    pub fn snapshot(&self) -> BTreeMap<PartyId, PartyTraffic> {
        self.parties.lock().unwrap().clone()
    }

    pub fn total_bytes(&self) -> u64 {
        self.parties.lock().unwrap().values().map(|t| t.bytes_sent).sum()
    }

    pub fn total_frames(&self) -> u64 {
        self.parties.lock().unwrap().values().map(|t| t.frames_sent).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Delivery {
    pub to: PartyId,
    pub envelope: Envelope,
}

/// Envelopes delivered to agencies, in each agency's consumption order.
#[derive(Debug, Default)]
pub struct Tap {
    log: Mutex<Vec<Delivery>>,
}

impl Tap {
    pub fn deliveries(&self) -> Vec<Delivery> {
        self.log.lock().unwrap().clone()
    }

    /// Deliveries to one party, in the order it consumed them.
    pub fn received_by(&self, who: PartyId) -> Vec<Envelope> {
        self.log.lock().unwrap().iter().filter(|d| d.to == who).map(|d| d.envelope.clone()).collect()
    }
}

enum Link {
    InProc(inproc::InProcLink),
    Tcp(tcp::TcpLink),
}

/// One party's view of the network.
pub struct Endpoint {
    me: PartyId,
    link: Link,
    cfg: NetConfig,
    traffic: Arc<Traffic>,
    tap: Option<Arc<Tap>>,
}

impl Endpoint {
    pub fn id(&self) -> PartyId {
        self.me
    }

    pub fn send(&self, to: PartyId, env: &Envelope) -> Result<(), TransportError> {
        let body = env.to_bytes();
        if body.len() > self.cfg.frame_cap {
            return Err(TransportError::FrameTooLarge { len: body.len(), cap: self.cfg.frame_cap });
        }
        match &self.link {
            Link::InProc(l) => l.send(to, body.clone())?,
            Link::Tcp(l) => l.send(to, &body)?,
        }
        self.traffic.sent(self.me, FRAME_HEADER_LEN + body.len());
        Ok(())
    }

    pub fn recv(&self) -> Result<Envelope, TransportError> {
        let (from, body) = match &self.link {
            Link::InProc(l) => l.recv(self.cfg.recv_timeout)?,
            Link::Tcp(l) => l.recv(self.cfg.recv_timeout)?,
        };
        self.traffic.received(self.me, FRAME_HEADER_LEN + body.len());
        let env = Envelope::from_bytes(&body)?;
        if env.from != from {
            return Err(TransportError::SenderMismatch { claimed: env.from, actual: from });
        }
        if let (Some(tap), true) = (&self.tap, self.me.is_agency()) {
            tap.log.lock().unwrap().push(Delivery { to: self.me, envelope: env.clone() });
        }
        Ok(env)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TransportKind {
    #[default]
    InProc,
    Tcp,
}

impl std::str::FromStr for TransportKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "inproc" => Ok(TransportKind::InProc),
            "tcp" => Ok(TransportKind::Tcp),
            other => Err(format!("unknown transport {other:?}")),
        }
    }
}

impl std::fmt::Display for TransportKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TransportKind::InProc => "inproc",
            TransportKind::Tcp => "tcp",
        })
    }
}

/// Receive side that tolerates reordering across senders: envelopes that
/// arrive before the caller asks for them are held until it does. `Abort`
/// is always delivered immediately.
pub struct Mailbox<'a> {
    ep: &'a Endpoint,
    held: VecDeque<Envelope>,
}

impl<'a> Mailbox<'a> {
    /// Bound on held envelopes; each protocol step has at most a few
    /// messages in flight per peer.
    pub const MAX_HELD: usize = 4096;

    pub fn new(ep: &'a Endpoint) -> Self {
        Mailbox { ep, held: VecDeque::new() }
    }

    pub fn endpoint(&self) -> &'a Endpoint {
        self.ep
    }

    pub fn recv_where(&mut self, want: impl Fn(&Envelope) -> bool) -> Result<Envelope, TransportError> {
        if let Some(i) = self.held.iter().position(&want) {
            return Ok(self.held.remove(i).expect("index from position"));
        }
        loop {
            let env = self.ep.recv()?;
            if env.kind == MsgKind::Abort || want(&env) {
                return Ok(env);
            }
            if self.held.len() >= Self::MAX_HELD {
                return Err(TransportError::Backlog(self.held.len()));
            }
            self.held.push_back(env);
        }
    }
}

/// A connected set of endpoints plus their shared accounting.
pub struct Network {
    pub endpoints: Vec<Endpoint>,
    pub traffic: Arc<Traffic>,
    pub tap: Option<Arc<Tap>>,
}

impl Network {
    /// Endpoints are returned in the order of `parties`.
    pub fn build(kind: TransportKind, parties: &[PartyId], cfg: NetConfig) -> Result<Network, TransportError> {
        let traffic = Arc::new(Traffic::default());
        let tap = cfg.record.then(|| Arc::new(Tap::default()));
        let links: Vec<Link> = match kind {
            TransportKind::InProc => inproc::mesh(parties).into_iter().map(Link::InProc).collect(),
            TransportKind::Tcp => tcp::loopback_mesh(parties, &cfg)?.into_iter().map(Link::Tcp).collect(),
        };
        let endpoints = parties
            .iter()
            .zip(links)
            .map(|(&me, link)| Endpoint { me, link, cfg, traffic: traffic.clone(), tap: tap.clone() })
            .collect();
        Ok(Network { endpoints, traffic, tap })
    }
}

/// Wraps a TCP link built by [`tcp_establish`] for a single-party process.
pub fn tcp_endpoint(link: tcp::TcpLink, cfg: NetConfig, traffic: Arc<Traffic>) -> Endpoint {
    Endpoint { me: link.me(), link: Link::Tcp(link), cfg, traffic, tap: None }
}

pub use tcp::TcpLink;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{verify_envelope, SignatureKeyPair};
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn signed(n_sigs: usize, payload: Vec<u8>) -> (Envelope, Vec<(PartyId, crate::crypto::VerificationKey)>) {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let keys: Vec<_> = (0..3).map(|_| SignatureKeyPair::generate(&mut rng)).collect();
        let mut env = Envelope::new(MsgKind::QueryBatch, PartyId::LEAD, [7; 32], 2, payload);
        let msg = env.signed_message();
        env.signatures = keys.iter().enumerate().take(n_sigs).map(|(i, k)| (PartyId::Agency(i as u8), k.sign(&msg))).collect();
        let roster = keys.iter().enumerate().map(|(i, k)| (PartyId::Agency(i as u8), k.public())).collect();
        (env, roster)
    }

    #[test]
    fn envelope_bytes_are_canonical() {
        let (env, _) = signed(3, vec![1, 2, 3]);
        let bytes = env.to_bytes();
        assert_eq!(bytes.len(), env.encoded_len());
        let back = Envelope::from_bytes(&bytes).unwrap();
        assert_eq!(back, env);
        assert_eq!(back.to_bytes(), bytes);
        assert!(Envelope::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }

    fn round_trip(kind: TransportKind) {
        let parties = [PartyId::Agency(0), PartyId::Telecom(0)];
        let net = Network::build(kind, &parties, NetConfig { record: true, ..NetConfig::default() }).unwrap();
        let (env, roster) = signed(3, b"batch".to_vec());
        net.endpoints[0].send(PartyId::Telecom(0), &env).unwrap();
        let got = net.endpoints[1].recv().unwrap();
        assert_eq!(got, env);
        assert!(verify_envelope(&got.signed_message(), &got.signatures, &roster));
        let frame_len = env.frame().len() as u64;
        assert_eq!(net.traffic.total_bytes(), frame_len);
        assert_eq!(net.traffic.snapshot()[&PartyId::Telecom(0)].bytes_received, frame_len);
        // Only agency-bound deliveries are tapped.
        assert!(net.tap.as_ref().unwrap().deliveries().is_empty());
        net.endpoints[1].send(PartyId::Agency(0), &Envelope::new(MsgKind::Done, PartyId::Telecom(0), [0; 32], 0, vec![]))
            .unwrap();
        net.endpoints[0].recv().unwrap();
        assert_eq!(net.tap.as_ref().unwrap().received_by(PartyId::Agency(0)).len(), 1);
    }

    #[test]
    fn inproc_round_trip() {
        round_trip(TransportKind::InProc);
    }

    #[test]
    fn tcp_round_trip() {
        round_trip(TransportKind::Tcp);
    }

    #[test]
    fn mailbox_holds_early_envelopes_but_not_aborts() {
        let parties = [PartyId::Agency(0), PartyId::Agency(1)];
        let net = Network::build(TransportKind::InProc, &parties, NetConfig::default()).unwrap();
        let send = |kind, round| {
            let env = Envelope::new(kind, PartyId::Agency(0), [0; 32], round, Vec::new());
            net.endpoints[0].send(PartyId::Agency(1), &env).unwrap();
        };
        send(MsgKind::SignRequest, 2);
        send(MsgKind::AnonOutput, 1);
        send(MsgKind::Abort, 0);
        let mut mb = Mailbox::new(&net.endpoints[1]);
        assert_eq!(mb.recv_where(|e| e.kind == MsgKind::AnonOutput).unwrap().round, 1);
        assert_eq!(mb.recv_where(|e| e.kind == MsgKind::Done).unwrap().kind, MsgKind::Abort);
        assert_eq!(mb.recv_where(|e| e.round == 2).unwrap().kind, MsgKind::SignRequest);
    }

    #[test]
    fn altered_payload_fails_verification() {
        let (mut env, roster) = signed(3, b"batch".to_vec());
        env.payload[0] ^= 1;
        assert!(!verify_envelope(&env.signed_message(), &env.signatures, &roster));
    }

    #[test]
    fn large_batch_is_one_frame() {
        let payload = vec![0xAB; 10_000 * 65];
        for kind in [TransportKind::InProc, TransportKind::Tcp] {
            let parties = [PartyId::Agency(0), PartyId::Telecom(1)];
            let net = Network::build(kind, &parties, NetConfig::default()).unwrap();
            let (env, _) = signed(3, payload.clone());
            net.endpoints[0].send(PartyId::Telecom(1), &env).unwrap();
            assert_eq!(net.endpoints[1].recv().unwrap(), env);
            let t = net.traffic.snapshot()[&PartyId::Agency(0)];
            assert_eq!(t.frames_sent, 1);
            assert_eq!(t.bytes_sent, (FRAME_HEADER_LEN + 1 + 2 + 32 + 4 + 4 + payload.len() + 1 + 3 * 66) as u64);
        }
    }

    #[test]
    fn frame_cap_is_enforced() {
        let parties = [PartyId::Agency(0), PartyId::Telecom(0)];
        let cfg = NetConfig { frame_cap: 100, ..NetConfig::default() };
        let net = Network::build(TransportKind::InProc, &parties, cfg).unwrap();
        let env = Envelope::new(MsgKind::Forward, PartyId::LEAD, [0; 32], 0, vec![0; 200]);
        let err = net.endpoints[0].send(PartyId::Telecom(0), &env).unwrap_err();
        assert!(matches!(err, TransportError::FrameTooLarge { cap: 100, .. }));
        assert_eq!(net.traffic.total_bytes(), 0);
    }

    #[test]
    fn spoofed_sender_is_rejected() {
        let parties = [PartyId::Agency(0), PartyId::Telecom(0), PartyId::Telecom(1)];
        let net = Network::build(TransportKind::InProc, &parties, NetConfig::default()).unwrap();
        let env = Envelope::new(MsgKind::Done, PartyId::Telecom(1), [0; 32], 0, vec![]);
        net.endpoints[1].send(PartyId::Agency(0), &env).unwrap();
        assert!(matches!(net.endpoints[0].recv(), Err(TransportError::SenderMismatch { .. })));
    }

    #[test]
    fn recv_times_out() {
        let parties = [PartyId::Agency(0), PartyId::Telecom(0)];
        let cfg = NetConfig { recv_timeout: Duration::from_millis(20), ..NetConfig::default() };
        for kind in [TransportKind::InProc, TransportKind::Tcp] {
            let net = Network::build(kind, &parties, cfg).unwrap();
            assert!(matches!(net.endpoints[0].recv(), Err(TransportError::Timeout(_))));
        }
    }
}
