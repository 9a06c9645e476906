//! In-memory map representations: plain spatial graphs, two-level hierarchical graphs,
//! and stroke sequences, plus validation and conversions between them.

mod chains;
mod flatten;
pub mod io;
pub mod iso;
mod sequence;

use std::collections::BTreeMap;
use std::fmt;

pub use chains::{chains, chains_with_keys, key_points, Chain};
pub(crate) use flatten::{EdgeSet, PointMerger};
pub use flatten::{flatten, MERGE_TOL_M};
pub use sequence::{from_sequence, to_sequence, OriginRule, PenState, SeqStep, SequenceRep};

/// A 2D coordinate, meters in the map frame unless stated otherwise.
pub type Point = [f64; 2];

/// Two nodes closer than this are considered the same location.
pub const DUPLICATE_NODE_TOL_M: f64 = 1e-9;

pub(crate) fn dist(a: Point, b: Point) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Undirected spatial graph of control points.
#[derive(Clone, Debug, PartialEq)]
pub struct PlainGraph {
    /// Side length of the square frame `[0, fov_m]²` the map lives in.
    pub fov_m: f64,
    pub nodes: Vec<Point>,
    pub edges: Vec<(usize, usize)>,
    /// Per-edge traffic-light flag, parallel to `edges`.
    pub traffic_light: Vec<bool>,
}

impl PlainGraph {
    pub fn new(fov_m: f64, nodes: Vec<Point>, edges: Vec<(usize, usize)>) -> Self {
        let traffic_light = vec![false; edges.len()];
        Self {
            fov_m,
            nodes,
            edges,
            traffic_light,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// `(min_x, min_y, max_x, max_y)`; all zeros for an empty graph.
    pub fn bbox(&self) -> (f64, f64, f64, f64) {
        if self.nodes.is_empty() {
            return (0.0, 0.0, 0.0, 0.0);
        }
        let mut b = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in &self.nodes {
            b.0 = b.0.min(p[0]);
            b.1 = b.1.min(p[1]);
            b.2 = b.2.max(p[0]);
            b.3 = b.3.max(p[1]);
        }
        b
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.nodes.len()];
        for &(a, b) in &self.edges {
            deg[a] += 1;
            deg[b] += 1;
        }
        deg
    }

    /// Sorted neighbor lists.
    pub fn neighbors(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.nodes.len()];
        for &(a, b) in &self.edges {
            adj[a].push(b);
            adj[b].push(a);
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        adj
    }

    pub fn edge_length(&self, e: usize) -> f64 {
        let (a, b) = self.edges[e];
        dist(self.nodes[a], self.nodes[b])
    }

    /// Node sets of connected components, each sorted, ordered by smallest member.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let adj = self.neighbors();
        let mut seen = vec![false; self.nodes.len()];
        let mut out = Vec::new();
        for start in 0..self.nodes.len() {
            if seen[start] {
                continue;
            }
            seen[start] = true;
            let mut stack = vec![start];
            let mut comp = Vec::new();
            while let Some(v) = stack.pop() {
                comp.push(v);
                for &u in &adj[v] {
                    if !seen[u] {
                        seen[u] = true;
                        stack.push(u);
                    }
                }
            }
            comp.sort_unstable();
            out.push(comp);
        }
        out
    }

    /// Keeps only the listed nodes (in the given order), remapping edges.
    pub fn induced(&self, keep: &[usize]) -> PlainGraph {
        let mut remap = vec![usize::MAX; self.nodes.len()];
        for (new, &old) in keep.iter().enumerate() {
            remap[old] = new;
        }
        let nodes = keep.iter().map(|&i| self.nodes[i]).collect();
        let mut edges = Vec::new();
        let mut lights = Vec::new();
        for (e, &(a, b)) in self.edges.iter().enumerate() {
            if remap[a] != usize::MAX && remap[b] != usize::MAX {
                edges.push((remap[a], remap[b]));
                lights.push(self.traffic_light[e]);
            }
        }
        PlainGraph {
            fov_m: self.fov_m,
            nodes,
            edges,
            traffic_light: lights,
        }
    }
}

/// Unordered edge between two global nodes, stored with the smaller index first.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EdgeKey(pub usize, pub usize);

impl EdgeKey {
    pub fn new(a: usize, b: usize) -> Self {
        if a <= b {
            EdgeKey(a, b)
        } else {
            EdgeKey(b, a)
        }
    }
}

impl fmt::Display for EdgeKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.0, self.1)
    }
}

/// Dense boolean adjacency matrix. Symmetry is an invariant checked by `validate`,
/// not enforced by the type.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Adjacency {
    n: usize,
    cells: Vec<bool>,
}

impl Adjacency {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            cells: vec![false; n * n],
        }
    }

    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Self {
        let mut adj = Self::new(n);
        for &(a, b) in edges {
            adj.connect(a, b);
        }
        adj
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.cells[i * self.n + j]
    }

    /// Sets a single cell; use `connect` for the symmetric update.
    pub fn set(&mut self, i: usize, j: usize, v: bool) {
        self.cells[i * self.n + j] = v;
    }

    pub fn connect(&mut self, i: usize, j: usize) {
        self.set(i, j, true);
        self.set(j, i, true);
    }

    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.n).filter(move |&j| self.get(i, j))
    }

    /// Upper-triangle edges `(i, j)` with `i < j`, row-major.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..self.n {
            for j in i + 1..self.n {
                if self.get(i, j) || self.get(j, i) {
                    out.push((i, j));
                }
            }
        }
        out
    }

    pub fn edge_count(&self) -> usize {
        self.edges().len()
    }

    /// `out[new][..] = self[perm[new]][perm[..]]`, i.e. the matrix in generation order.
    pub fn permuted(&self, perm: &[usize]) -> Adjacency {
        let mut out = Adjacency::new(self.n);
        for (a, &pa) in perm.iter().enumerate() {
            for (b, &pb) in perm.iter().enumerate() {
                out.set(a, b, self.get(pa, pb));
            }
        }
        out
    }
}

/// Padded interior control points of one global edge.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalPath {
    pub coords: Vec<Point>,
    pub mask: Vec<bool>,
}

impl LocalPath {
    pub fn empty(w: usize) -> Self {
        Self {
            coords: vec![[0.0, 0.0]; w],
            mask: vec![false; w],
        }
    }

    /// Pads `points` to width `w`. Panics if there are more points than slots.
    pub fn from_points(points: &[Point], w: usize) -> Self {
        assert!(points.len() <= w, "{} points exceed W = {w}", points.len());
        let mut path = Self::empty(w);
        for (slot, p) in points.iter().enumerate() {
            path.coords[slot] = *p;
            path.mask[slot] = true;
        }
        path
    }

    /// Masked-in points, in path order.
    pub fn valid_points(&self) -> Vec<Point> {
        self.coords
            .iter()
            .zip(&self.mask)
            .take_while(|(_, &m)| m)
            .map(|(p, _)| *p)
            .collect()
    }

    pub fn valid_len(&self) -> usize {
        self.mask.iter().take_while(|&&m| m).count()
    }
}

/// Global key-point graph plus per-edge local paths and semantic flags.
#[derive(Clone, Debug, PartialEq)]
pub struct HierGraph {
    pub fov_m: f64,
    pub global_nodes: Vec<Point>,
    pub global_adj: Adjacency,
    /// Interior points run from the lower-ranked endpoint (under `order`) to the higher one.
    pub local_paths: BTreeMap<EdgeKey, LocalPath>,
    pub semantics: BTreeMap<EdgeKey, bool>,
    pub w: usize,
    /// `order[k]` is the global node generated at step `k`.
    pub order: Vec<usize>,
}

impl HierGraph {
    pub fn node_count(&self) -> usize {
        self.global_nodes.len()
    }

    pub fn edges(&self) -> Vec<EdgeKey> {
        self.global_adj
            .edges()
            .into_iter()
            .map(|(a, b)| EdgeKey(a, b))
            .collect()
    }

    /// `rank[node]` = generation step of `node`.
    pub fn ranks(&self) -> Vec<usize> {
        let mut rank = vec![0; self.order.len()];
        for (k, &v) in self.order.iter().enumerate() {
            rank[v] = k;
        }
        rank
    }

    /// Endpoints of `e` as (lower-ranked, higher-ranked).
    pub fn oriented(&self, e: EdgeKey) -> (usize, usize) {
        let rank = self.ranks();
        if rank[e.0] <= rank[e.1] {
            (e.0, e.1)
        } else {
            (e.1, e.0)
        }
    }

    /// Count of masked-in local points over all edges.
    pub fn local_point_count(&self) -> usize {
        self.local_paths.values().map(LocalPath::valid_len).sum()
    }
}

/// One violated invariant.
#[derive(Clone, Debug, PartialEq)]
pub enum Violation {
    SelfLoop { edge: usize, node: usize },
    DuplicateEdge { a: usize, b: usize },
    IndexOutOfRange { edge: usize, index: usize, nodes: usize },
    DuplicateNode { a: usize, b: usize },
    NonFinite { node: usize },
    LightCountMismatch { edges: usize, flags: usize },
    AsymmetricAdjacency { i: usize, j: usize },
    NonZeroDiagonal { node: usize },
    DanglingLocalPath(EdgeKey),
    DanglingSemantic(EdgeKey),
    WidthMismatch { edge: EdgeKey, coords: usize, mask: usize, w: usize },
    NonPrefixMask(EdgeKey),
    BadOrder,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::SelfLoop { edge, node } => write!(f, "self-loop: edge {edge} at node {node}"),
            Violation::DuplicateEdge { a, b } => write!(f, "duplicate edge ({a}, {b})"),
            Violation::IndexOutOfRange { edge, index, nodes } => {
                write!(f, "edge {edge} references node {index} of {nodes}")
            }
            Violation::DuplicateNode { a, b } => write!(f, "duplicate node: {a} and {b} coincide"),
            Violation::NonFinite { node } => write!(f, "non-finite coordinate at node {node}"),
            Violation::LightCountMismatch { edges, flags } => {
                write!(f, "{flags} traffic-light flags for {edges} edges")
            }
            Violation::AsymmetricAdjacency { i, j } => write!(f, "asymmetric adjacency at ({i}, {j})"),
            Violation::NonZeroDiagonal { node } => write!(f, "self-loop: adjacency diagonal set at {node}"),
            Violation::DanglingLocalPath(e) => write!(f, "local path on non-edge {e}"),
            Violation::DanglingSemantic(e) => write!(f, "semantic flag on non-edge {e}"),
            Violation::WidthMismatch { edge, coords, mask, w } => write!(
                f,
                "local path {edge}: {coords} coords / {mask} mask slots, W = {w}"
            ),
            Violation::NonPrefixMask(e) => write!(f, "non-prefix mask on {e}"),
            Violation::BadOrder => write!(f, "order is not a permutation of the global nodes"),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn contains(&self, needle: &str) -> bool {
        self.violations.iter().any(|v| v.to_string().contains(needle))
    }

    pub fn into_result(self) -> crate::Result<()> {
        if self.is_ok() {
            Ok(())
        } else {
            Err(crate::Error::Validation(self))
        }
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return write!(f, "ok");
        }
        let parts: Vec<String> = self.violations.iter().map(|v| v.to_string()).collect();
        write!(f, "{}", parts.join("; "))
    }
}

/// Anything `validate` understands.
pub trait Validate {
    fn validate(&self) -> ValidationReport;
}

pub fn validate<G: Validate + ?Sized>(graph: &G) -> ValidationReport {
    graph.validate()
}

fn duplicate_points(points: &[Point], tol: f64) -> Vec<(usize, usize)> {
    let mut idx: Vec<usize> = (0..points.len()).collect();
    idx.sort_by(|&a, &b| points[a][0].total_cmp(&points[b][0]).then(a.cmp(&b)));
    let mut out = Vec::new();
    for (pos, &i) in idx.iter().enumerate() {
        for &j in &idx[pos + 1..] {
            if points[j][0] - points[i][0] > tol {
                break;
            }
            if (points[j][1] - points[i][1]).abs() <= tol {
                out.push((i.min(j), i.max(j)));
            }
        }
    }
    out.sort_unstable();
    out
}

impl Validate for PlainGraph {
    fn validate(&self) -> ValidationReport {
        let mut v = Vec::new();
        let n = self.nodes.len();
        for (i, p) in self.nodes.iter().enumerate() {
            if !p[0].is_finite() || !p[1].is_finite() {
                v.push(Violation::NonFinite { node: i });
            }
        }
        let mut seen = std::collections::HashSet::new();
        for (e, &(a, b)) in self.edges.iter().enumerate() {
            for idx in [a, b] {
                if idx >= n {
                    v.push(Violation::IndexOutOfRange {
                        edge: e,
                        index: idx,
                        nodes: n,
                    });
                }
            }
            if a == b {
                v.push(Violation::SelfLoop { edge: e, node: a });
            }
            if !seen.insert(EdgeKey::new(a, b)) {
                v.push(Violation::DuplicateEdge { a, b });
            }
        }
        for (a, b) in duplicate_points(&self.nodes, DUPLICATE_NODE_TOL_M) {
            v.push(Violation::DuplicateNode { a, b });
        }
        if self.traffic_light.len() != self.edges.len() {
            v.push(Violation::LightCountMismatch {
                edges: self.edges.len(),
                flags: self.traffic_light.len(),
            });
        }
        ValidationReport { violations: v }
    }
}

impl Validate for HierGraph {
    fn validate(&self) -> ValidationReport {
        let mut v = Vec::new();
        let n = self.global_nodes.len();
        for (i, p) in self.global_nodes.iter().enumerate() {
            if !p[0].is_finite() || !p[1].is_finite() {
                v.push(Violation::NonFinite { node: i });
            }
        }
        if self.global_adj.len() != n {
            v.push(Violation::IndexOutOfRange {
                edge: 0,
                index: self.global_adj.len(),
                nodes: n,
            });
            return ValidationReport { violations: v };
        }
        for i in 0..n {
            if self.global_adj.get(i, i) {
                v.push(Violation::NonZeroDiagonal { node: i });
            }
            for j in i + 1..n {
                if self.global_adj.get(i, j) != self.global_adj.get(j, i) {
                    v.push(Violation::AsymmetricAdjacency { i, j });
                }
            }
        }
        let is_edge = |e: &EdgeKey| e.0 < n && e.1 < n && e.0 != e.1 && self.global_adj.get(e.0, e.1);
        for (e, path) in &self.local_paths {
            if !is_edge(e) {
                v.push(Violation::DanglingLocalPath(*e));
            }
            if path.coords.len() != self.w || path.mask.len() != self.w {
                v.push(Violation::WidthMismatch {
                    edge: *e,
                    coords: path.coords.len(),
                    mask: path.mask.len(),
                    w: self.w,
                });
            }
            let valid = path.valid_len();
            if path.mask[valid..].iter().any(|&m| m) {
                v.push(Violation::NonPrefixMask(*e));
            }
            if path.valid_points().iter().any(|p| !p[0].is_finite() || !p[1].is_finite()) {
                v.push(Violation::NonFinite { node: usize::MAX });
            }
        }
        for e in self.semantics.keys() {
            if !is_edge(e) {
                v.push(Violation::DanglingSemantic(*e));
            }
        }
        let mut sorted = self.order.clone();
        sorted.sort_unstable();
        if sorted != (0..n).collect::<Vec<_>>() {
            v.push(Violation::BadOrder);
        }
        ValidationReport { violations: v }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn triangle() -> PlainGraph {
        PlainGraph::new(
            10.0,
            vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]],
            vec![(0, 1), (1, 2), (0, 2)],
        )
    }

    fn two_node_hier(mask: Vec<bool>) -> HierGraph {
        let w = mask.len();
        let mut local_paths = BTreeMap::new();
        local_paths.insert(
            EdgeKey(0, 1),
            LocalPath {
                coords: vec![[0.5, 0.5]; w],
                mask,
            },
        );
        HierGraph {
            fov_m: 10.0,
            global_nodes: vec![[0.0, 0.0], [1.0, 1.0]],
            global_adj: Adjacency::from_edges(2, &[(0, 1)]),
            local_paths,
            semantics: BTreeMap::new(),
            w,
            order: vec![0, 1],
        }
    }

    #[test]
    fn triangle_is_valid() {
        assert!(validate(&triangle()).is_ok());
    }

    #[test]
    fn self_loop_reported() {
        let mut g = triangle();
        g.edges.push((0, 0));
        g.traffic_light.push(false);
        let report = validate(&g);
        assert!(report.contains("self-loop"), "{report}");
    }

    #[test]
    fn duplicate_edge_and_node_reported() {
        let mut g = triangle();
        g.edges.push((1, 0));
        g.traffic_light.push(false);
        g.nodes.push([1.0, 1e-12]);
        let report = validate(&g);
        assert!(report.contains("duplicate edge"));
        assert!(report.contains("duplicate node"));
    }

    #[test]
    fn out_of_range_index_reported() {
        let mut g = triangle();
        g.edges.push((0, 7));
        g.traffic_light.push(false);
        assert!(validate(&g).contains("references node 7"));
    }

    #[test]
    fn non_prefix_mask_reported() {
        let h = two_node_hier(vec![true, false, true, false]);
        let report = validate(&h);
        assert!(report.contains("non-prefix mask"), "{report}");
        assert!(validate(&two_node_hier(vec![true, true, false, false])).is_ok());
    }

    #[test]
    fn asymmetric_adjacency_and_dangling_path_reported() {
        let mut h = two_node_hier(vec![false; 3]);
        h.global_adj.set(1, 0, false);
        assert!(validate(&h).contains("asymmetric"));
        let mut h = two_node_hier(vec![false; 3]);
        h.global_adj = Adjacency::new(2);
        assert!(validate(&h).contains("non-edge"));
    }

    #[test]
    fn validate_does_not_mutate() {
        let g = triangle();
        let before = g.clone();
        let _ = validate(&g);
        assert_eq!(g, before);
    }

    #[test]
    fn permuted_adjacency_follows_order() {
        let adj = Adjacency::from_edges(3, &[(0, 2)]);
        let p = adj.permuted(&[2, 1, 0]);
        assert!(p.get(0, 2) && p.get(2, 0));
        assert!(!p.get(0, 1));
    }
}
