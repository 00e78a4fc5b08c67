use std::time::Duration;

use rand::Rng;
use rayon::prelude::*;

use super::agency::send_abort;
use super::messages::{decode_queries, encode_response_batch, ResponseItem, TelecomResponse};
use super::{ChainError, Protocol, Shared, TelecomAuditLog};
use crate::anonymity::encode_slot;
use crate::crypto::rng::{derive_rng, derive_seed, Seed};
use crate::crypto::{
    verify_envelope, CombinedAgencyKey, CryptoError, TelecomCiphertext, TelecomKeyPair, TelecomPublicKey,
};
use crate::graph::GraphPartition;
use crate::intersection::worker_pool;
use crate::metrics::CpuMeter;
use crate::party::PartyId;
use crate::transport::{Endpoint, Envelope, MsgKind};

/// What a telecom needs to answer queries.
pub struct TelecomContext<'a> {
    pub keys: &'a TelecomKeyPair,
    pub partition: &'a GraphPartition,
    pub agency_key: &'a CombinedAgencyKey,
    pub telecom_keys: &'a [TelecomPublicKey],
    /// Attach neighbor owners (protocol 1).
    pub with_owner: bool,
}

/// Builds the reply for a fresh identifier. An identifier no telecom serves
/// is answered as an isolated vertex.
fn respond<R: Rng + ?Sized>(
    ctx: &TelecomContext,
    id: u64,
    j: u8,
    rng: &mut R,
) -> Result<TelecomResponse, ChainError> {
    let agency_ct = ctx.agency_key.encrypt_id(id, rng)?;
    if j == 0 {
        return Ok(TelecomResponse { agency_ct, neighbor_cts: Vec::new(), delta: None });
    }
    let serving = ctx.partition.serving();
    let neighbors = match serving.owner_of(id) {
        None => &[][..],
        Some(_) => ctx.partition.neighbors(id)?,
    };
    let neighbor_cts = neighbors
        .iter()
        .map(|&b| {
            let owner = serving.owner_of(b).ok_or(ChainError::UnknownTelecom(b))?;
            let key = ctx.telecom_keys.get(owner.0 as usize).ok_or(ChainError::UnknownTelecom(b))?;
            Ok((key.encrypt(b, rng), ctx.with_owner.then_some(owner)))
        })
        .collect::<Result<Vec<_>, ChainError>>()?;
    Ok(TelecomResponse { agency_ct, delta: Some(neighbor_cts.len() as u32), neighbor_cts })
}

/// Answers one query: decrypt, check `L_T`, respond.
pub fn telecom_serve<R: Rng + ?Sized>(
    ctx: &TelecomContext,
    ct: &TelecomCiphertext,
    j: u8,
    round: u32,
    log: &mut TelecomAuditLog,
    rng: &mut R,
) -> Result<ResponseItem, ChainError> {
    let id = ctx.keys.try_decrypt(ct)?;
    if !log.record(id, round) {
        return Ok(ResponseItem::Duplicate);
    }
    Ok(ResponseItem::Served(respond(ctx, id, j, rng)?))
}

/// Serves a batch on the pool. With `anonymous`, ciphertexts addressed to
/// other telecoms are skipped instead of failing. Within a batch the first
/// occurrence of an identifier is served and later ones are duplicates.
fn serve_batch(
    ctx: &TelecomContext,
    pool: &rayon::ThreadPool,
    queries: &[(TelecomCiphertext, u8)],
    round: u32,
    log: &mut TelecomAuditLog,
    seed: &Seed,
    anonymous: bool,
) -> Result<Vec<ResponseItem>, ChainError> {
    let ids: Vec<Result<u64, CryptoError>> =
        pool.install(|| queries.par_iter().map(|(ct, _)| ctx.keys.try_decrypt(ct)).collect());
    let mut items: Vec<Option<ResponseItem>> = vec![None; queries.len()];
    let mut fresh = Vec::new();
    for (i, r) in ids.into_iter().enumerate() {
        match r {
            Ok(id) if log.record(id, round) => fresh.push((i, id)),
            Ok(_) => items[i] = Some(ResponseItem::Duplicate),
            Err(CryptoError::NotAddressee) if anonymous => {}
            Err(e) => return Err(e.into()),
        }
    }
    let served: Vec<(usize, TelecomResponse)> = pool.install(|| {
        fresh
            .par_iter()
            .map(|&(i, id)| {
                let mut rng = derive_rng(seed, "serve", &[round as u64, i as u64]);
                respond(ctx, id, queries[i].1, &mut rng).map(|r| (i, r))
            })
            .collect::<Result<_, _>>()
    })?;
    for (i, r) in served {
        items[i] = Some(ResponseItem::Served(r));
    }
    Ok(items.into_iter().flatten().collect())
}

pub(crate) struct TelecomResult {
    pub log: TelecomAuditLog,
    pub cpu: Duration,
    pub telecom_cts: u64,
}

pub(crate) fn run_telecom(
    ep: &Endpoint,
    sh: &Shared,
    partition: &GraphPartition,
) -> (TelecomResult, Option<ChainError>) {
    let meter = CpuMeter::start();
    let pool = worker_pool(sh.cfg.workers);
    let t = partition.owner();
    let mut res = TelecomResult { log: TelecomAuditLog::new(t), cpu: Duration::ZERO, telecom_cts: 0 };
    let err = telecom_loop(ep, sh, partition, &pool, &mut res).err();
    if let Some(e) = &err {
        if !matches!(e, ChainError::PeerAborted(..)) {
            let mut to = vec![PartyId::LEAD];
            if sh.cfg.protocol == Protocol::Hiding {
                to.push(PartyId::AnonHub);
            }
            send_abort(ep, sh, to, e);
        }
    }
    res.cpu = meter.finish(Some(&pool));
    (res, err)
}

fn telecom_loop(
    ep: &Endpoint,
    sh: &Shared,
    partition: &GraphPartition,
    pool: &rayon::ThreadPool,
    res: &mut TelecomResult,
) -> Result<(), ChainError> {
    let t = partition.owner();
    let hiding = sh.cfg.protocol == Protocol::Hiding;
    let ctx = TelecomContext {
        keys: &sh.dep.telecoms[t.0 as usize].keys,
        partition,
        agency_key: &sh.y,
        telecom_keys: &sh.telecom_keys,
        with_owner: !hiding,
    };
    let seed = derive_seed(&sh.root, "telecom", &[t.0 as u64]);
    let query_kind = if hiding { MsgKind::Broadcast } else { MsgKind::QueryBatch };
    loop {
        let env = ep.recv()?;
        match env.kind {
            MsgKind::Done => return Ok(()),
            MsgKind::Abort => {
                return Err(ChainError::PeerAborted(env.from, String::from_utf8_lossy(&env.payload).into_owned()))
            }
            MsgKind::AnonOutput => continue,
            k if k == query_kind && env.warrant_id == sh.warrant_id => {
                let signed =
                    env.from == PartyId::LEAD && verify_envelope(&env.signed_message(), &env.signatures, &sh.roster);
                let items = if signed {
                    let queries = decode_queries(&env.payload)?;
                    let items = serve_batch(&ctx, pool, &queries, env.round, &mut res.log, &seed, hiding)?;
                    res.telecom_cts += items
                        .iter()
                        .map(|i| match i {
                            ResponseItem::Served(r) => r.neighbor_cts.len() as u64,
                            _ => 0,
                        })
                        .sum::<u64>();
                    Some(items)
                } else {
                    None
                };
                if hiding {
                    let messages = match &items {
                        Some(items) => items.iter().map(|i| i.to_bytes(&sh.dep.params)).collect::<Vec<_>>(),
                        None => vec![ResponseItem::Reject.to_bytes(&sh.dep.params)],
                    };
                    let out = Envelope::new(MsgKind::AnonSubmit, ep.id(), sh.warrant_id, env.round, encode_slot(&messages));
                    ep.send(PartyId::AnonHub, &out)?;
                } else {
                    let payload = encode_response_batch(&sh.dep.params, items.as_deref());
                    let out = Envelope::new(MsgKind::ResponseBatch, ep.id(), sh.warrant_id, env.round, payload);
                    ep.send(PartyId::LEAD, &out)?;
                }
            }
            other => return Err(ChainError::Protocol(format!("{t} got unexpected {other:?} from {}", env.from))),
        }
    }
}
