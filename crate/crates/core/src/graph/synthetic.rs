//! Seeded random graphs. Identifiers run `1..=n`.

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha20Rng;

use super::{CommGraph, GraphError};

/// Erdős–Rényi `G(n, p)` with `p = avg_degree / (n - 1)`.
///
/// Uses geometric skipping over the lower-triangular pair order, so cost is
/// linear in `n + |E|` rather than quadratic.
pub fn gen_synthetic(n: usize, avg_degree: f64, seed: u64) -> Result<CommGraph, GraphError> {
    if n < 2 {
        return Err(GraphError::InvalidParams(format!("need n >= 2, got {n}")));
    }
    if !(avg_degree >= 0.0 && avg_degree < (n - 1) as f64) {
        return Err(GraphError::InvalidParams(format!("avg_degree must lie in [0, n-1), got {avg_degree}")));
    }
    let p = avg_degree / (n - 1) as f64;
    let mut edges = Vec::with_capacity((avg_degree * n as f64 / 2.0 * 1.05) as usize);
    if p > 0.0 {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let log_q = (1.0 - p).ln();
        let (mut v, mut w): (i64, i64) = (1, -1);
        let n = n as i64;
        while v < n {
            let r: f64 = rng.random();
            w += 1 + ((1.0 - r).ln() / log_q).floor() as i64;
            while w >= v && v < n {
                w -= v;
                v += 1;
            }
            if v < n {
                edges.push((w as u64 + 1, v as u64 + 1));
            }
        }
    }
    Ok(CommGraph::from_edges(1..=n as u64, edges))
}

/// Preferential attachment: each new vertex links to `m` distinct earlier
/// vertices chosen in proportion to degree. Produces the hub vertices the
/// degree cap exists for; mean degree is close to `2m`.
pub fn gen_power_law(n: usize, m: usize, seed: u64) -> Result<CommGraph, GraphError> {
    if m == 0 || n <= m {
        return Err(GraphError::InvalidParams(format!("need 1 <= m < n, got m={m}, n={n}")));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut endpoints: Vec<u64> = Vec::with_capacity(2 * n * m);
    let mut edges = Vec::with_capacity(n * m);
    // Vertex m+1 attaches to the seed vertices 1..=m.
    for t in 1..=m as u64 {
        edges.push((t, m as u64 + 1));
        endpoints.extend([t, m as u64 + 1]);
    }
    let mut chosen = Vec::with_capacity(m);
    for new in (m as u64 + 2)..=n as u64 {
        chosen.clear();
        while chosen.len() < m {
            let t = endpoints[rng.random_range(0..endpoints.len())];
            if !chosen.contains(&t) {
                chosen.push(t);
            }
        }
        for &t in &chosen {
            edges.push((t, new));
            endpoints.extend([t, new]);
        }
    }
    Ok(CommGraph::from_edges(1..=n as u64, edges))
}
