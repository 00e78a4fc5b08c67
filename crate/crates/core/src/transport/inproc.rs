use std::collections::HashMap;
use std::time::Duration;

use crossbeam_channel::{unbounded, Receiver, RecvTimeoutError, Sender};

use super::TransportError;
use crate::party::PartyId;

type Frame = (PartyId, Vec<u8>);

pub(super) struct InProcLink {
    me: PartyId,
    inbox: Receiver<Frame>,
    peers: HashMap<PartyId, Sender<Frame>>,
}

pub(super) fn mesh(parties: &[PartyId]) -> Vec<InProcLink> {
    let (txs, rxs): (Vec<_>, Vec<_>) = parties.iter().map(|_| unbounded::<Frame>()).unzip();
    let all: HashMap<PartyId, Sender<Frame>> = parties.iter().copied().zip(txs).collect();
    parties
        .iter()
        .zip(rxs)
        .map(|(&me, inbox)| InProcLink {
            me,
            inbox,
            peers: all.iter().filter(|(p, _)| **p != me).map(|(p, tx)| (*p, tx.clone())).collect(),
        })
        .collect()
}

impl InProcLink {
    pub(super) fn send(&self, to: PartyId, body: Vec<u8>) -> Result<(), TransportError> {
        let tx = self.peers.get(&to).ok_or(TransportError::UnknownPeer(to))?;
        tx.send((self.me, body)).map_err(|_| TransportError::PeerDisconnected(to))
    }

    pub(super) fn recv(&self, timeout: Duration) -> Result<Frame, TransportError> {
        self.inbox.recv_timeout(timeout).map_err(|e| match e {
            RecvTimeoutError::Timeout => TransportError::Timeout(timeout),
            RecvTimeoutError::Disconnected => TransportError::PeerDisconnected(self.me),
        })
    }
}
