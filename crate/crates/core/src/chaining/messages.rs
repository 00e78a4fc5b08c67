//! Payload encodings for chaining envelopes.

use crate::codec::{DecodeError, Reader, Writer};
use crate::crypto::{AgencyCiphertext, GroupParams, TelecomCiphertext, TelecomId};
use crate::transport::MsgKind;

/// An unexplored vertex: its telecom ciphertext, its owner (protocol 1 only),
/// and the number of hops still allowed from it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueueEntry {
    pub ct: TelecomCiphertext,
    pub owner: Option<TelecomId>,
    pub remaining: u8,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TelecomResponse {
    pub agency_ct: AgencyCiphertext,
    /// Owners are present in protocol 1 and absent in protocol 2.
    pub neighbor_cts: Vec<(TelecomCiphertext, Option<TelecomId>)>,
    /// Absent for `j = 0` queries.
    pub delta: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ResponseItem {
    Served(TelecomResponse),
    /// The vertex was already handed to the agencies under this warrant.
    Duplicate,
    /// A telecom refused an envelope that lacked a valid signature from
    /// every agency.
    Reject,
}

const ITEM_SERVED: u8 = 0;
const ITEM_DUPLICATE: u8 = 1;
const ITEM_REJECT: u8 = 2;

impl ResponseItem {
    pub fn write(&self, params: &GroupParams, with_owner: bool, w: &mut Writer) {
        match self {
            ResponseItem::Served(r) => {
                w.u8(ITEM_SERVED).fixed(&r.agency_ct.to_bytes(params));
                match r.delta {
                    Some(d) => w.u8(1).u32(d),
                    None => w.u8(0),
                };
                w.u32(r.neighbor_cts.len() as u32);
                for (ct, owner) in &r.neighbor_cts {
                    w.fixed(&ct.to_bytes());
                    if with_owner {
                        w.u8(owner.expect("protocol 1 neighbors carry owners").0);
                    }
                }
            }
            ResponseItem::Duplicate => {
                w.u8(ITEM_DUPLICATE);
            }
            ResponseItem::Reject => {
                w.u8(ITEM_REJECT);
            }
        }
    }

    pub fn read(params: &GroupParams, with_owner: bool, r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        match r.u8()? {
            ITEM_SERVED => {
                let agency_ct = AgencyCiphertext::read(params, r)?;
                let delta = match r.u8()? {
                    0 => None,
                    1 => Some(r.u32()?),
                    other => return Err(DecodeError::invalid("delta flag", other.to_string())),
                };
                let n = r.u32()? as usize;
                let mut neighbor_cts = Vec::with_capacity(n.min(r.remaining() / TelecomCiphertext::WIRE_LEN));
                for _ in 0..n {
                    let ct = TelecomCiphertext::read(r)?;
                    let owner = if with_owner { Some(TelecomId(r.u8()?)) } else { None };
                    neighbor_cts.push((ct, owner));
                }
                Ok(ResponseItem::Served(TelecomResponse { agency_ct, neighbor_cts, delta }))
            }
            ITEM_DUPLICATE => Ok(ResponseItem::Duplicate),
            ITEM_REJECT => Ok(ResponseItem::Reject),
            other => Err(DecodeError::invalid("response item", other.to_string())),
        }
    }

    /// Standalone encoding, used for anonymous protocol-2 messages.
    pub fn to_bytes(&self, params: &GroupParams) -> Vec<u8> {
        let mut w = Writer::new();
        self.write(params, false, &mut w);
        w.into_bytes()
    }

    pub fn from_bytes(params: &GroupParams, bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader::new(bytes);
        let item = Self::read(params, false, &mut r)?;
        r.finish()?;
        Ok(item)
    }
}

/// Queries as `(ciphertext, j)`; used by both the protocol-1 batch and the
/// protocol-2 broadcast.
pub fn encode_queries<'a>(entries: impl ExactSizeIterator<Item = &'a QueueEntry>) -> Vec<u8> {
    let mut w = Writer::with_capacity(4 + entries.len() * (TelecomCiphertext::WIRE_LEN + 1));
    w.u32(entries.len() as u32);
    for e in entries {
        w.fixed(&e.ct.to_bytes()).u8(e.remaining);
    }
    w.into_bytes()
}

pub fn decode_queries(bytes: &[u8]) -> Result<Vec<(TelecomCiphertext, u8)>, DecodeError> {
    let mut r = Reader::new(bytes);
    let n = r.u32()? as usize;
    let mut out = Vec::with_capacity(n.min(bytes.len() / TelecomCiphertext::WIRE_LEN));
    for _ in 0..n {
        out.push((TelecomCiphertext::read(&mut r)?, r.u8()?));
    }
    r.finish()?;
    Ok(out)
}

/// Protocol-1 telecom reply: a status byte, then one item per query.
pub fn encode_response_batch(params: &GroupParams, items: Option<&[ResponseItem]>) -> Vec<u8> {
    let mut w = Writer::new();
    match items {
        None => {
            w.u8(1);
        }
        Some(items) => {
            w.u8(0).u32(items.len() as u32);
            for item in items {
                item.write(params, true, &mut w);
            }
        }
    }
    w.into_bytes()
}

/// `None` when the telecom rejected the batch.
pub fn decode_response_batch(params: &GroupParams, bytes: &[u8]) -> Result<Option<Vec<ResponseItem>>, DecodeError> {
    let mut r = Reader::new(bytes);
    let out = match r.u8()? {
        1 => None,
        0 => {
            let n = r.u32()? as usize;
            Some((0..n).map(|_| ResponseItem::read(params, true, &mut r)).collect::<Result<Vec<_>, _>>()?)
        }
        other => return Err(DecodeError::invalid("batch status", other.to_string())),
    };
    r.finish()?;
    Ok(out)
}

/// Items an agency is asked to sign: `(kind, payload)` pairs.
pub fn encode_sign_request(items: &[(MsgKind, Vec<u8>)]) -> Vec<u8> {
    let mut w = Writer::new();
    w.u32(items.len() as u32);
    for (kind, payload) in items {
        w.u8(*kind as u8).bytes(payload);
    }
    w.into_bytes()
}

pub fn decode_sign_request(bytes: &[u8]) -> Result<Vec<(u8, Vec<u8>)>, DecodeError> {
    let mut r = Reader::new(bytes);
    let n = r.u32()?;
    let out = (0..n).map(|_| Ok((r.u8()?, r.bytes()?.to_vec()))).collect::<Result<Vec<_>, DecodeError>>()?;
    r.finish()?;
    Ok(out)
}

/// Lead-to-follower relay of one round's telecom replies.
pub fn encode_forward(batches: &[(TelecomId, Vec<u8>)]) -> Vec<u8> {
    let mut w = Writer::new();
    w.u32(batches.len() as u32);
    for (t, payload) in batches {
        w.u8(t.0).bytes(payload);
    }
    w.into_bytes()
}

pub fn decode_forward(bytes: &[u8]) -> Result<Vec<(TelecomId, Vec<u8>)>, DecodeError> {
    let mut r = Reader::new(bytes);
    let n = r.u32()?;
    let out = (0..n).map(|_| Ok((TelecomId(r.u8()?), r.bytes()?.to_vec()))).collect::<Result<Vec<_>, DecodeError>>()?;
    r.finish()?;
    Ok(out)
}
