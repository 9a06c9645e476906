use std::collections::HashMap;
use std::f64::consts::FRAC_PI_2;

use petgraph::algo::dijkstra;
use petgraph::graph::{NodeIndex, UnGraph};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::map::{chains, dist, PlainGraph, Point};
use crate::{Error, Result};

/// Degree-1 nodes closer than this fraction of the fov to the frame edge are lanes leaving
/// the patch, not dead ends.
pub const DEAD_END_MARGIN_FRAC: f64 = 0.05;

/// Per-map urban-planning features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureSample {
    /// Mean lane length between key points, m.
    pub length: f64,
    /// Mean segment angle folded into `[0, π/2)`, rad.
    pub orientation: f64,
    /// Mean node degree.
    pub connectivity: f64,
    /// Mean node count within the region radius of a probe.
    pub density: f64,
    /// Mean count of edges reachable from a probe without leaving its region.
    pub reach: f64,
    /// Mean shortest-path length over connected node pairs, m; `None` if no pair was connected.
    pub convenience: Option<f64>,
}

impl FeatureSample {
    pub const NAMES: [&'static str; 6] = ["length", "orientation", "connectivity", "density", "reach", "convenience"];

    pub fn get(&self, name: &str) -> Option<f64> {
        match name {
            "length" => Some(self.length),
            "orientation" => Some(self.orientation),
            "connectivity" => Some(self.connectivity),
            "density" => Some(self.density),
            "reach" => Some(self.reach),
            "convenience" => self.convenience,
            _ => None,
        }
    }
}

fn fold(angle: f64) -> f64 {
    let f = angle.rem_euclid(FRAC_PI_2);
    // Rounding can land an axis-aligned segment just below π/2.
    if FRAC_PI_2 - f < 1e-12 {
        0.0
    } else {
        f
    }
}

fn weighted(g: &PlainGraph) -> UnGraph<(), f64> {
    let mut pg = UnGraph::with_capacity(g.nodes.len(), g.edges.len());
    for _ in &g.nodes {
        pg.add_node(());
    }
    for (e, &(a, b)) in g.edges.iter().enumerate() {
        pg.add_edge(NodeIndex::new(a), NodeIndex::new(b), g.edge_length(e));
    }
    pg
}

/// Mean Dijkstra distance over the given node pairs; unconnected pairs are skipped.
pub fn mean_path_length(g: &PlainGraph, pairs: &[(usize, usize)]) -> Option<f64> {
    let pg = weighted(g);
    let mut cache: HashMap<usize, HashMap<NodeIndex, f64>> = HashMap::new();
    let (mut sum, mut n) = (0.0, 0usize);
    for &(a, b) in pairs {
        let from = cache
            .entry(a)
            .or_insert_with(|| dijkstra(&pg, NodeIndex::new(a), None, |e| *e.weight()));
        if let Some(d) = from.get(&NodeIndex::new(b)) {
            sum += d;
            n += 1;
        }
    }
    (n > 0).then(|| sum / n as f64)
}

fn probe_point(g: &PlainGraph, rng: &mut impl Rng) -> Point {
    if g.edges.is_empty() {
        return g.nodes[rng.gen_range(0..g.nodes.len())];
    }
    let (a, b) = g.edges[rng.gen_range(0..g.edges.len())];
    let t: f64 = rng.gen();
    let (p, q) = (g.nodes[a], g.nodes[b]);
    [p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]
}

/// Edges reachable from the node nearest to `probe` through nodes within `radius` of it.
fn reach_from(g: &PlainGraph, adj: &[Vec<usize>], probe: Point, radius: f64) -> usize {
    let inside: Vec<bool> = g.nodes.iter().map(|&p| dist(p, probe) <= radius).collect();
    let start = (0..g.nodes.len())
        .min_by(|&i, &j| dist(g.nodes[i], probe).total_cmp(&dist(g.nodes[j], probe)))
        .unwrap();
    if !inside[start] {
        return 0;
    }
    let mut seen = vec![false; g.nodes.len()];
    seen[start] = true;
    let mut stack = vec![start];
    while let Some(v) = stack.pop() {
        for &u in &adj[v] {
            if inside[u] && !seen[u] {
                seen[u] = true;
                stack.push(u);
            }
        }
    }
    g.edges.iter().filter(|&&(a, b)| seen[a] && seen[b]).count()
}

/// Urban features of a map in meters, probing `n_probes` random points on its lanes.
pub fn urban_features(g: &PlainGraph, radius: f64, n_probes: usize, rng: &mut impl Rng) -> Result<FeatureSample> {
    if g.nodes.is_empty() {
        return Err(Error::EmptyMap);
    }
    if !(radius > 0.0) || n_probes == 0 {
        return Err(Error::Config("urban features need radius > 0 and at least one probe".into()));
    }
    let n = g.nodes.len();
    let deg = g.degrees();
    let connectivity = deg.iter().sum::<usize>() as f64 / n as f64;

    let lanes = chains(g);
    let length = if lanes.is_empty() {
        0.0
    } else {
        lanes.iter().map(|c| c.edges.iter().map(|&e| g.edge_length(e)).sum::<f64>()).sum::<f64>() / lanes.len() as f64
    };
    let orientation = if g.edges.is_empty() {
        0.0
    } else {
        g.edges
            .iter()
            .map(|&(a, b)| {
                let (p, q) = (g.nodes[a], g.nodes[b]);
                fold((q[1] - p[1]).atan2(q[0] - p[0]))
            })
            .sum::<f64>()
            / g.edges.len() as f64
    };

    let adj = g.neighbors();
    let (mut density, mut reach) = (0.0, 0.0);
    for _ in 0..n_probes {
        let p = probe_point(g, rng);
        density += g.nodes.iter().filter(|&&q| dist(p, q) <= radius).count() as f64;
        reach += reach_from(g, &adj, p, radius) as f64;
    }
    density /= n_probes as f64;
    reach /= n_probes as f64;

    let mut comp = vec![0; n];
    for (c, nodes) in g.components().iter().enumerate() {
        for &v in nodes {
            comp[v] = c;
        }
    }
    let mut pairs = Vec::with_capacity(n_probes);
    if n > 1 {
        for _ in 0..4 * n_probes {
            if pairs.len() == n_probes {
                break;
            }
            let a = rng.gen_range(0..n);
            let b = rng.gen_range(0..n);
            if a != b && comp[a] == comp[b] {
                pairs.push((a, b));
            }
        }
    }
    Ok(FeatureSample {
        length,
        orientation,
        connectivity,
        density,
        reach,
        convenience: mean_path_length(g, &pairs),
    })
}

/// Number of degree-1 nodes farther than `margin_m` from the frame boundary.
pub fn dead_ends(g: &PlainGraph, margin_m: f64) -> usize {
    let f = g.fov_m;
    g.degrees()
        .iter()
        .zip(&g.nodes)
        .filter(|&(&d, p)| d == 1 && p[0].min(p[1]).min(f - p[0]).min(f - p[1]) > margin_m)
        .count()
}
