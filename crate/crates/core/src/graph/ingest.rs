use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use super::{partition, CommGraph, GraphError, GraphPartition, ServingMap};
use crate::crypto::TelecomId;

/// How identifiers are assigned to telecoms at load time.
#[derive(Debug, Clone)]
pub enum ServingSpec {
    /// `<id> <telecom-name>` per line; `telecoms` fixes name order.
    MapFile { path: PathBuf, telecoms: Vec<String> },
    Proportional { weights: Vec<f64>, seed: u64 },
}

#[derive(Debug, Clone)]
pub struct LoadedGraph {
    pub graph: CommGraph,
    pub serving: Arc<ServingMap>,
    pub partitions: Vec<GraphPartition>,
}

impl LoadedGraph {
    pub fn from_graph(graph: CommGraph, serving: ServingMap) -> Result<Self, GraphError> {
        let serving = Arc::new(serving);
        let partitions = partition(&graph, serving.clone())?;
        Ok(LoadedGraph { graph, serving, partitions })
    }
}

fn lines(reader: impl BufRead) -> impl Iterator<Item = (usize, Result<String, std::io::Error>)> {
    reader.lines().enumerate().map(|(i, l)| (i + 1, l))
}

fn content(line: &str) -> &str {
    line.split('#').next().unwrap_or("").trim()
}

/// Whitespace-separated integer pairs, one edge per line; `#` starts a
/// comment. Edges are symmetrized.
pub fn parse_edge_list(reader: impl BufRead) -> Result<CommGraph, GraphError> {
    let mut edges = Vec::new();
    for (line, text) in lines(reader) {
        let text = text?;
        let body = content(&text);
        if body.is_empty() {
            continue;
        }
        let mut fields = body.split_whitespace();
        let mut next = || -> Result<u64, GraphError> {
            let field = fields.next().ok_or_else(|| GraphError::Parse { line, msg: "expected two identifiers".into() })?;
            field.parse().map_err(|_| GraphError::Parse { line, msg: format!("bad identifier {field:?}") })
        };
        let (a, b) = (next()?, next()?);
        if fields.next().is_some() {
            return Err(GraphError::Parse { line, msg: "more than two fields".into() });
        }
        edges.push((a, b));
    }
    Ok(CommGraph::from_edges([], edges))
}

/// `<id> <telecom-name>` per line.
pub fn parse_serving_map(reader: impl BufRead, telecoms: &[String]) -> Result<ServingMap, GraphError> {
    let index: HashMap<&str, TelecomId> =
        telecoms.iter().enumerate().map(|(i, n)| (n.as_str(), TelecomId(i as u8))).collect();
    let mut owner = HashMap::new();
    for (line, text) in lines(reader) {
        let text = text?;
        let body = content(&text);
        if body.is_empty() {
            continue;
        }
        let mut fields = body.split_whitespace();
        let (Some(id), Some(name), None) = (fields.next(), fields.next(), fields.next()) else {
            return Err(GraphError::Parse { line, msg: "expected `<id> <telecom>`".into() });
        };
        let id: u64 = id.parse().map_err(|_| GraphError::Parse { line, msg: format!("bad identifier {id:?}") })?;
        let t = *index.get(name).ok_or_else(|| GraphError::UnknownTelecom(name.to_owned()))?;
        if owner.insert(id, t).is_some_and(|prev| prev != t) {
            return Err(GraphError::Parse { line, msg: format!("identifier {id} assigned twice") });
        }
    }
    ServingMap::new(owner, telecoms.len())
}

pub fn load_edge_list(path: &Path, spec: &ServingSpec) -> Result<LoadedGraph, GraphError> {
    let graph = parse_edge_list(BufReader::new(File::open(path)?))?;
    let serving = match spec {
        ServingSpec::MapFile { path, telecoms } => {
            let map = parse_serving_map(BufReader::new(File::open(path)?), telecoms)?;
            // Identifiers listed only in the map are isolated subscribers.
            let graph = CommGraph::from_edges(map.iter().map(|(id, _)| id), graph.edges().iter().copied());
            return LoadedGraph::from_graph(graph, map);
        }
        ServingSpec::Proportional { weights, seed } => ServingMap::proportional(graph.vertices(), weights, *seed)?,
    };
    LoadedGraph::from_graph(graph, serving)
}
