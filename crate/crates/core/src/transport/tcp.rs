use std::collections::{HashMap, HashSet};
use std::io::{self, Read, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use crossbeam_channel::{unbounded, Receiver, RecvTimeoutError, Sender};

use super::{NetConfig, TransportError, FRAME_HEADER_LEN};
use crate::codec::{Reader, Writer};
use crate::party::PartyId;

enum Inbound {
    Frame(PartyId, Vec<u8>),
    Closed(PartyId, Option<TransportError>),
}

/// One connection per peer; a reader thread per connection feeds a single
/// inbox. Writes to a connection are serialized by its mutex.
pub struct TcpLink {
    me: PartyId,
    peers: HashMap<PartyId, Mutex<TcpStream>>,
    inbox: Receiver<Inbound>,
    closed: Mutex<HashSet<PartyId>>,
}

impl TcpLink {
    pub fn me(&self) -> PartyId {
        self.me
    }

    pub(super) fn send(&self, to: PartyId, body: &[u8]) -> Result<(), TransportError> {
        let stream = self.peers.get(&to).ok_or(TransportError::UnknownPeer(to))?;
        let mut stream = stream.lock().unwrap();
        let header = (body.len() as u32).to_be_bytes();
        stream
            .write_all(&header)
            .and_then(|_| stream.write_all(body))
            .map_err(|_| TransportError::PeerDisconnected(to))
    }

    pub(super) fn recv(&self, timeout: Duration) -> Result<(PartyId, Vec<u8>), TransportError> {
        let deadline = Instant::now() + timeout;
        loop {
            let left = deadline.saturating_duration_since(Instant::now());
            match self.inbox.recv_timeout(left) {
                Ok(Inbound::Frame(from, body)) => return Ok((from, body)),
                Ok(Inbound::Closed(peer, err)) => {
                    if let Some(err) = err {
                        return Err(err);
                    }
                    // A finished peer is not an error until nobody is left.
                    let mut closed = self.closed.lock().unwrap();
                    closed.insert(peer);
                    if closed.len() == self.peers.len() {
                        return Err(TransportError::PeerDisconnected(peer));
                    }
                }
                Err(RecvTimeoutError::Timeout) => return Err(TransportError::Timeout(timeout)),
                Err(RecvTimeoutError::Disconnected) => return Err(TransportError::PeerDisconnected(self.me)),
            }
        }
    }
}

impl Drop for TcpLink {
    fn drop(&mut self) {
        for s in self.peers.values() {
            let _ = s.lock().unwrap().shutdown(Shutdown::Both);
        }
    }
}

fn read_frame(stream: &mut TcpStream, cap: usize) -> Result<Option<Vec<u8>>, TransportError> {
    let mut header = [0u8; FRAME_HEADER_LEN];
    match stream.read_exact(&mut header) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) if e.kind() == io::ErrorKind::ConnectionReset => return Ok(None),
        Err(e) => return Err(e.into()),
    }
    let len = u32::from_be_bytes(header) as usize;
    if len > cap {
        return Err(TransportError::FrameTooLarge { len, cap });
    }
    let mut body = vec![0u8; len];
    stream.read_exact(&mut body)?;
    Ok(Some(body))
}

fn write_frame(stream: &mut TcpStream, body: &[u8]) -> io::Result<()> {
    stream.write_all(&(body.len() as u32).to_be_bytes())?;
    stream.write_all(body)
}

fn spawn_reader(mut stream: TcpStream, peer: PartyId, cap: usize, tx: Sender<Inbound>) {
    thread::Builder::new()
        .name(format!("tcp-reader-{peer}"))
        .spawn(move || loop {
            match read_frame(&mut stream, cap) {
                Ok(Some(body)) => {
                    if tx.send(Inbound::Frame(peer, body)).is_err() {
                        return;
                    }
                }
                Ok(None) => {
                    let _ = tx.send(Inbound::Closed(peer, None));
                    return;
                }
                Err(e) => {
                    let _ = tx.send(Inbound::Closed(peer, Some(e)));
                    return;
                }
            }
        })
        .expect("spawn reader thread");
}

/// Connects `me` to every peer: dials peers that sort after `me`, accepts
/// the rest on `listener`. Each dialer opens with a handshake frame naming
/// itself.
pub fn establish(
    me: PartyId,
    listener: TcpListener,
    peers: &[(PartyId, SocketAddr)],
    cfg: &NetConfig,
) -> Result<TcpLink, TransportError> {
    let deadline = Instant::now() + cfg.recv_timeout;
    let mut streams = HashMap::new();
    for &(peer, addr) in peers.iter().filter(|(p, _)| *p > me) {
        let mut stream = loop {
            match TcpStream::connect(addr) {
                Ok(s) => break s,
                Err(e) if Instant::now() < deadline => {
                    let _ = e;
                    thread::sleep(Duration::from_millis(20));
                }
                Err(e) => return Err(e.into()),
            }
        };
        let mut w = Writer::new();
        me.write(&mut w);
        write_frame(&mut stream, &w.into_bytes())?;
        streams.insert(peer, stream);
    }
    let expected: HashSet<PartyId> = peers.iter().map(|(p, _)| *p).filter(|p| *p < me).collect();
    while streams.len() < peers.len() {
        let (mut stream, _) = listener.accept()?;
        let hello = read_frame(&mut stream, 16)?.ok_or_else(|| TransportError::Handshake("closed".into()))?;
        let mut r = Reader::new(&hello);
        let peer = PartyId::read(&mut r)?;
        r.finish()?;
        if !expected.contains(&peer) || streams.contains_key(&peer) {
            return Err(TransportError::Handshake(format!("unexpected peer {peer}")));
        }
        streams.insert(peer, stream);
    }
    let (tx, inbox) = unbounded();
    let mut writers = HashMap::new();
    for (peer, stream) in streams {
        stream.set_nodelay(true)?;
        spawn_reader(stream.try_clone()?, peer, cfg.frame_cap, tx.clone());
        writers.insert(peer, Mutex::new(stream));
    }
    Ok(TcpLink { me, peers: writers, inbox, closed: Mutex::new(HashSet::new()) })
}

/// Full mesh over 127.0.0.1, one thread per party during setup.
pub(super) fn loopback_mesh(parties: &[PartyId], cfg: &NetConfig) -> Result<Vec<TcpLink>, TransportError> {
    let listeners = parties
        .iter()
        .map(|_| TcpListener::bind(("127.0.0.1", 0)))
        .collect::<io::Result<Vec<_>>>()?;
    let addrs = listeners.iter().map(|l| l.local_addr()).collect::<io::Result<Vec<_>>>()?;
    let book: Vec<(PartyId, SocketAddr)> = parties.iter().copied().zip(addrs).collect();
    thread::scope(|s| {
        let handles: Vec<_> = parties
            .iter()
            .zip(listeners)
            .map(|(&me, listener)| {
                let peers: Vec<_> = book.iter().copied().filter(|(p, _)| *p != me).collect();
                s.spawn(move || establish(me, listener, &peers, cfg))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("setup thread")).collect()
    })
}
