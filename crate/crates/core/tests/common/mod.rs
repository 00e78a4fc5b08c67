//! Plaintext oracles and instance generators shared by integration tests and
//! the acceptance suite. Nothing here calls the code under test except to
//! build inputs.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::sync::Arc;

use lawful_core::crypto::TelecomId;
use lawful_core::graph::{partition, CommGraph, GraphPartition, ServingMap};
use rand::{Rng, RngExt};

/// Undirected simple graph as adjacency sets.
pub fn adjacency(edges: &[(u64, u64)]) -> BTreeMap<u64, BTreeSet<u64>> {
    let mut adj: BTreeMap<u64, BTreeSet<u64>> = BTreeMap::new();
    for &(a, b) in edges.iter().filter(|(a, b)| a != b) {
        adj.entry(a).or_default().insert(b);
        adj.entry(b).or_default().insert(a);
    }
    adj
}

fn degree(adj: &BTreeMap<u64, BTreeSet<u64>>, v: u64) -> usize {
    adj.get(&v).map_or(0, BTreeSet::len)
}

/// Enumerates every simple path from `x` of at most `k` edges whose
/// intermediate vertices all have degree `<= d`; returns each endpoint with
/// its shortest such length. Exponential; meant for tiny graphs.
pub fn path_oracle(edges: &[(u64, u64)], x: u64, k: u8, d: u32) -> BTreeMap<u64, u8> {
    let adj = adjacency(edges);
    let mut best = BTreeMap::from([(x, 0u8)]);
    let mut path = vec![x];
    fn walk(
        adj: &BTreeMap<u64, BTreeSet<u64>>,
        path: &mut Vec<u64>,
        k: u8,
        d: u32,
        best: &mut BTreeMap<u64, u8>,
    ) {
        let len = (path.len() - 1) as u8;
        if len == k {
            return;
        }
        let tail = *path.last().unwrap();
        if path.len() > 1 && degree(adj, tail) > d as usize {
            return;
        }
        for &nb in adj.get(&tail).into_iter().flatten() {
            if path.contains(&nb) {
                continue;
            }
            let e = best.entry(nb).or_insert(len + 1);
            *e = (*e).min(len + 1);
            path.push(nb);
            walk(adj, path, k, d, best);
            path.pop();
        }
    }
    walk(&adj, &mut path, k, d, &mut best);
    best
}

/// Level-synchronous BFS with the same legality rule as [`path_oracle`],
/// usable on large graphs.
pub fn bfs_oracle(adj: &BTreeMap<u64, BTreeSet<u64>>, x: u64, k: u8, d: u32) -> BTreeMap<u64, u8> {
    let mut dist = BTreeMap::from([(x, 0u8)]);
    let mut queue = VecDeque::from([x]);
    while let Some(v) = queue.pop_front() {
        let dv = dist[&v];
        if dv == k || (v != x && degree(adj, v) > d as usize) {
            continue;
        }
        for &nb in adj.get(&v).into_iter().flatten() {
            if !dist.contains_key(&nb) {
                dist.insert(nb, dv + 1);
                queue.push_back(nb);
            }
        }
    }
    dist
}

/// Audit-log entries of every telecom, sorted; order within a round is
/// not part of the contract.
pub fn sorted_logs(logs: &[lawful_core::chaining::TelecomAuditLog]) -> Vec<(TelecomId, Vec<(u64, u32)>)> {
    logs.iter()
        .map(|l| {
            let mut e = l.entries.clone();
            e.sort_unstable();
            (l.telecom, e)
        })
        .collect()
}

/// Plain BFS distances up to `k`, ignoring degrees.
pub fn within(adj: &BTreeMap<u64, BTreeSet<u64>>, x: u64, k: u8) -> BTreeMap<u64, u8> {
    bfs_oracle(adj, x, k, u32::MAX)
}

pub struct Instance {
    pub edges: Vec<(u64, u64)>,
    pub owners: HashMap<u64, TelecomId>,
    pub telecoms: usize,
    pub x: u64,
    pub k: u8,
    pub d: u32,
}

impl Instance {
    pub fn partitions(&self) -> Vec<GraphPartition> {
        let g = CommGraph::from_edges(self.owners.keys().copied(), self.edges.iter().copied());
        partition(&g, Arc::new(ServingMap::new(self.owners.clone(), self.telecoms).unwrap())).unwrap()
    }

    pub fn adjacency(&self) -> BTreeMap<u64, BTreeSet<u64>> {
        adjacency(&self.edges)
    }
}

/// Random sparse graph with a few planted hubs so the degree cap bites.
/// Identifiers start at 1. `x` is drawn from the vertices, or lies outside
/// the graph with small probability.
pub fn random_instance(rng: &mut impl Rng, n: usize, avg_degree: f64, telecoms: usize, k_max: u8) -> Instance {
    let mut edges = Vec::new();
    let m = (n as f64 * avg_degree / 2.0).round() as usize;
    for _ in 0..m {
        let a = rng.random_range(1..=n as u64);
        let b = rng.random_range(1..=n as u64);
        edges.push((a, b));
    }
    for _ in 0..rng.random_range(0..=2) {
        let hub = rng.random_range(1..=n as u64);
        for _ in 0..rng.random_range(5.min(n)..=15.min(n)) {
            edges.push((hub, rng.random_range(1..=n as u64)));
        }
    }
    let owners = (1..=n as u64).map(|v| (v, TelecomId(rng.random_range(0..telecoms) as u8))).collect();
    let x = if rng.random_bool(0.03) { n as u64 + 1 } else { rng.random_range(1..=n as u64) };
    Instance { edges, owners, telecoms, x, k: rng.random_range(0..=k_max), d: rng.random_range(1..=50) }
}
