//! The communication graph and its split across telecoms.
//!
//! `G = (V, E)` is undirected. Each identifier is served by exactly one
//! telecom, and a telecom sees every edge with at least one endpoint it
//! serves, including calls to numbers served elsewhere.

mod ingest;
mod synthetic;

use std::collections::{BTreeSet, HashMap};
use std::sync::Arc;

use thiserror::Error;

use crate::crypto::{GroupParams, TelecomId};

pub use ingest::{load_edge_list, parse_edge_list, parse_serving_map, LoadedGraph, ServingSpec};
pub use synthetic::{gen_power_law, gen_synthetic};

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("identifier {0} is not covered by the serving map")]
    DanglingVertex(u64),
    #[error("identifier {id} is not served by {owner}")]
    NotServed { id: u64, owner: TelecomId },
    #[error("unknown telecom {0:?}")]
    UnknownTelecom(String),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("identifier {id} outside the encodable range [1, {max}]")]
    IdentifierOutOfRange { id: u64, max: u64 },
}

/// Undirected graph; edges are stored once as `(min, max)`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CommGraph {
    vertices: BTreeSet<u64>,
    edges: Vec<(u64, u64)>,
}

impl CommGraph {
    /// Builds a graph from raw pairs: self-loops are dropped, direction is
    /// forgotten, duplicates collapse. Endpoints join `vertices`.
    pub fn from_edges(vertices: impl IntoIterator<Item = u64>, edges: impl IntoIterator<Item = (u64, u64)>) -> Self {
        let mut vertices: BTreeSet<u64> = vertices.into_iter().collect();
        let mut canon: Vec<(u64, u64)> = edges
            .into_iter()
            .filter(|(a, b)| a != b)
            .map(|(a, b)| if a < b { (a, b) } else { (b, a) })
            .collect();
        canon.sort_unstable();
        canon.dedup();
        for &(a, b) in &canon {
            vertices.insert(a);
            vertices.insert(b);
        }
        CommGraph { vertices, edges: canon }
    }

    pub fn vertices(&self) -> &BTreeSet<u64> {
        &self.vertices
    }

    pub fn edges(&self) -> &[(u64, u64)] {
        &self.edges
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn mean_degree(&self) -> f64 {
        if self.vertices.is_empty() {
            return 0.0;
        }
        2.0 * self.edges.len() as f64 / self.vertices.len() as f64
    }

    /// Full adjacency with sorted neighbor lists.
    pub fn adjacency(&self) -> HashMap<u64, Vec<u64>> {
        let mut adj: HashMap<u64, Vec<u64>> = self.vertices.iter().map(|&v| (v, Vec::new())).collect();
        for &(a, b) in &self.edges {
            adj.get_mut(&a).expect("endpoint is a vertex").push(b);
            adj.get_mut(&b).expect("endpoint is a vertex").push(a);
        }
        for list in adj.values_mut() {
            list.sort_unstable();
        }
        adj
    }

    /// Rejects identifiers the group cannot encode.
    pub fn check_domain(&self, params: &GroupParams) -> Result<(), GraphError> {
        let max = params.max_identifier();
        match self.vertices.iter().find(|&&v| v == 0 || v > max) {
            Some(&id) => Err(GraphError::IdentifierOutOfRange { id, max }),
            None => Ok(()),
        }
    }
}

/// `T(.)`: which telecom serves each identifier.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ServingMap {
    owner: HashMap<u64, TelecomId>,
    telecoms: usize,
}

impl ServingMap {
    pub fn new(owner: HashMap<u64, TelecomId>, telecoms: usize) -> Result<Self, GraphError> {
        if let Some(t) = owner.values().find(|t| t.0 as usize >= telecoms) {
            return Err(GraphError::UnknownTelecom(t.to_string()));
        }
        Ok(ServingMap { owner, telecoms })
    }

    /// Splits `vertices` among telecoms in proportion to `weights`.
    ///
    /// Quotas use largest remainders, so each telecom's share is within one
    /// of `weight * |V|`. Which identifiers land where is a seeded shuffle.
    pub fn proportional(vertices: &BTreeSet<u64>, weights: &[f64], seed: u64) -> Result<Self, GraphError> {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;

        if weights.is_empty() || weights.len() > u8::MAX as usize {
            return Err(GraphError::InvalidParams(format!("need 1..=255 weights, got {}", weights.len())));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) || weights.iter().sum::<f64>() <= 0.0 {
            return Err(GraphError::InvalidParams("weights must be non-negative with positive sum".into()));
        }
        let n = vertices.len();
        let total: f64 = weights.iter().sum();
        let exact: Vec<f64> = weights.iter().map(|w| w / total * n as f64).collect();
        let mut quota: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
        let mut order: Vec<usize> = (0..weights.len()).collect();
        order.sort_by(|&a, &b| {
            let fa = exact[a] - exact[a].floor();
            let fb = exact[b] - exact[b].floor();
            fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
        });
        let short = n - quota.iter().sum::<usize>();
        for &i in order.iter().take(short) {
            quota[i] += 1;
        }

        let mut ids: Vec<u64> = vertices.iter().copied().collect();
        ids.shuffle(&mut rand_chacha::ChaCha20Rng::seed_from_u64(seed));
        let mut owner = HashMap::with_capacity(n);
        let mut it = ids.into_iter();
        for (t, &q) in quota.iter().enumerate() {
            for id in it.by_ref().take(q) {
                owner.insert(id, TelecomId(t as u8));
            }
        }
        Ok(ServingMap { owner, telecoms: weights.len() })
    }

    pub fn telecom_count(&self) -> usize {
        self.telecoms
    }

    pub fn owner_of(&self, id: u64) -> Option<TelecomId> {
        self.owner.get(&id).copied()
    }

    pub fn len(&self) -> usize {
        self.owner.len()
    }

    pub fn is_empty(&self) -> bool {
        self.owner.is_empty()
    }

    pub fn served_by(&self, t: TelecomId) -> usize {
        self.owner.values().filter(|&&o| o == t).count()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u64, TelecomId)> + '_ {
        self.owner.iter().map(|(&id, &t)| (id, t))
    }

    /// Relabels telecoms through `perm` (`perm[old] = new`).
    pub fn permuted(&self, perm: &[u8]) -> Self {
        let owner = self.owner.iter().map(|(&id, t)| (id, TelecomId(perm[t.0 as usize]))).collect();
        ServingMap { owner, telecoms: self.telecoms }
    }
}

/// What one telecom knows: `E_T`, plus neighbor lists for its own subscribers.
#[derive(Debug, Clone)]
pub struct GraphPartition {
    owner: TelecomId,
    serving: Arc<ServingMap>,
    edges: Vec<(u64, u64)>,
    adjacency: HashMap<u64, Vec<u64>>,
}

impl GraphPartition {
    pub fn owner(&self) -> TelecomId {
        self.owner
    }

    pub fn serving(&self) -> &Arc<ServingMap> {
        &self.serving
    }

    /// `E_T = {(a, b) in E : T(a) = owner or T(b) = owner}`.
    pub fn edge_set(&self) -> &[(u64, u64)] {
        &self.edges
    }

    pub fn serves(&self, a: u64) -> bool {
        self.serving.owner_of(a) == Some(self.owner)
    }

    /// Every contact of `a`, wherever it is served. `a` must be served here.
    pub fn neighbors(&self, a: u64) -> Result<&[u64], GraphError> {
        if !self.serves(a) {
            return Err(GraphError::NotServed { id: a, owner: self.owner });
        }
        Ok(self.adjacency.get(&a).map(Vec::as_slice).unwrap_or(&[]))
    }

    pub fn degree(&self, a: u64) -> Result<usize, GraphError> {
        self.neighbors(a).map(<[u64]>::len)
    }
}

/// Builds one partition per telecom. Every vertex must be served.
pub fn partition(graph: &CommGraph, serving: Arc<ServingMap>) -> Result<Vec<GraphPartition>, GraphError> {
    if let Some(&v) = graph.vertices.iter().find(|&&v| serving.owner_of(v).is_none()) {
        return Err(GraphError::DanglingVertex(v));
    }
    let mut parts: Vec<GraphPartition> = (0..serving.telecom_count())
        .map(|t| GraphPartition {
            owner: TelecomId(t as u8),
            serving: serving.clone(),
            edges: Vec::new(),
            adjacency: HashMap::new(),
        })
        .collect();
    for &(a, b) in &graph.edges {
        let ta = serving.owner_of(a).expect("checked above");
        let tb = serving.owner_of(b).expect("checked above");
        let pa = &mut parts[ta.0 as usize];
        pa.edges.push((a, b));
        pa.adjacency.entry(a).or_default().push(b);
        if ta == tb {
            pa.adjacency.entry(b).or_default().push(a);
        } else {
            let pb = &mut parts[tb.0 as usize];
            pb.edges.push((a, b));
            pb.adjacency.entry(b).or_default().push(a);
        }
    }
    for p in &mut parts {
        for list in p.adjacency.values_mut() {
            list.sort_unstable();
        }
    }
    Ok(parts)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn serving(pairs: &[(u64, u8)], telecoms: usize) -> Arc<ServingMap> {
        Arc::new(ServingMap::new(pairs.iter().map(|&(v, t)| (v, TelecomId(t))).collect(), telecoms).unwrap())
    }

    #[test]
    fn edge_sets_follow_the_incidence_rule() {
        let g = CommGraph::from_edges([], [(1, 2), (2, 3)]);
        let parts = partition(&g, serving(&[(1, 0), (2, 0), (3, 1)], 2)).unwrap();
        assert_eq!(parts[0].edge_set(), &[(1, 2), (2, 3)]);
        assert_eq!(parts[1].edge_set(), &[(2, 3)]);
    }

    #[test]
    fn neighbors_include_cross_telecom_contacts() {
        let g = CommGraph::from_edges([], [(1, 2), (2, 3)]);
        let parts = partition(&g, serving(&[(1, 0), (2, 1), (3, 0)], 2)).unwrap();
        assert_eq!(parts[1].neighbors(2).unwrap(), &[1, 3]);
        assert_eq!(parts[1].degree(2).unwrap(), 2);
        assert!(matches!(parts[0].neighbors(2), Err(GraphError::NotServed { id: 2, .. })));
    }

    #[test]
    fn isolated_vertex_and_star() {
        let mut edges: Vec<(u64, u64)> = (2..=101).map(|leaf| (1, leaf)).collect();
        edges.push((1, 1));
        let g = CommGraph::from_edges([500], edges);
        let owners: Vec<(u64, u8)> = g.vertices().iter().map(|&v| (v, (v % 2) as u8)).collect();
        let parts = partition(&g, serving(&owners, 2)).unwrap();
        assert_eq!(parts[1].degree(1).unwrap(), 100);
        assert_eq!(parts[0].neighbors(500).unwrap(), &[] as &[u64]);
    }

    #[test]
    fn unserved_vertex_is_dangling() {
        let g = CommGraph::from_edges([], [(1, 2)]);
        assert!(matches!(partition(&g, serving(&[(1, 0)], 1)), Err(GraphError::DanglingVertex(2))));
    }

    #[test]
    fn canonical_edges() {
        let g = CommGraph::from_edges([], [(3, 1), (1, 3), (2, 2), (1, 2)]);
        assert_eq!(g.edges(), &[(1, 2), (1, 3)]);
        assert_eq!(g.vertex_count(), 3);
    }

    #[test]
    fn proportional_split_hits_quotas() {
        let vertices: BTreeSet<u64> = (1..=1000).collect();
        let map = ServingMap::proportional(&vertices, &[0.4, 0.3, 0.2, 0.1], 17).unwrap();
        let sizes: Vec<usize> = (0..4).map(|t| map.served_by(TelecomId(t))).collect();
        for (got, want) in sizes.iter().zip([400usize, 300, 200, 100]) {
            assert!(got.abs_diff(want) <= 1, "{sizes:?}");
        }
        assert_eq!(map, ServingMap::proportional(&vertices, &[0.4, 0.3, 0.2, 0.1], 17).unwrap());

        let odd: BTreeSet<u64> = (1..=7).collect();
        let map = ServingMap::proportional(&odd, &[1.0, 1.0, 1.0], 1).unwrap();
        let sizes: Vec<usize> = (0..3).map(|t| map.served_by(TelecomId(t))).collect();
        assert_eq!(sizes.iter().sum::<usize>(), 7);
        assert!(sizes.iter().all(|&s| (2..=3).contains(&s)));
    }

    #[test]
    fn bad_weights_rejected() {
        let v: BTreeSet<u64> = (1..=10).collect();
        assert!(ServingMap::proportional(&v, &[], 0).is_err());
        assert!(ServingMap::proportional(&v, &[0.0, 0.0], 0).is_err());
        assert!(ServingMap::proportional(&v, &[-1.0, 2.0], 0).is_err());
    }
}

#[cfg(test)]
mod props {
    use std::collections::BTreeMap;

    use super::*;
    use proptest::prelude::*;

    fn instance() -> impl Strategy<Value = (Vec<(u64, u64)>, Vec<u8>, usize)> {
        (1usize..5, 2u64..30).prop_flat_map(|(telecoms, n)| {
            (
                proptest::collection::vec((0..n, 0..n), 0..80),
                proptest::collection::vec(0..telecoms as u8, n as usize),
                Just(telecoms),
            )
        })
    }

    proptest! {
        #[test]
        fn partitions_cover_edges_and_agree_on_degrees((raw, owners, telecoms) in instance()) {
            let owner: HashMap<u64, TelecomId> = owners.iter().enumerate().map(|(v, &t)| (v as u64, TelecomId(t))).collect();
            let g = CommGraph::from_edges(0..owners.len() as u64, raw.iter().copied());
            let parts = partition(&g, Arc::new(ServingMap::new(owner, telecoms).unwrap())).unwrap();

            // Oracle adjacency straight from the raw pairs.
            let mut adj: BTreeMap<u64, BTreeSet<u64>> = BTreeMap::new();
            for &(a, b) in raw.iter().filter(|(a, b)| a != b) {
                adj.entry(a).or_default().insert(b);
                adj.entry(b).or_default().insert(a);
            }

            let mut count: BTreeMap<(u64, u64), usize> = BTreeMap::new();
            for p in &parts {
                for &e in p.edge_set() {
                    *count.entry(e).or_default() += 1;
                }
            }
            prop_assert_eq!(count.len(), g.edge_count());
            for (&(a, b), &c) in &count {
                let split = owners[a as usize] != owners[b as usize];
                prop_assert_eq!(c, if split { 2 } else { 1 });
            }

            for v in 0..owners.len() as u64 {
                let p = &parts[owners[v as usize] as usize];
                let nb = p.neighbors(v).unwrap();
                let want: Vec<u64> = adj.get(&v).map(|s| s.iter().copied().collect()).unwrap_or_default();
                prop_assert_eq!(nb, &want[..]);
                for &b in nb {
                    let pb = &parts[owners[b as usize] as usize];
                    prop_assert!(pb.neighbors(b).unwrap().contains(&v));
                }
            }
        }
    }
}
