use std::collections::HashMap;

use super::{validate, EdgeKey, HierGraph, PlainGraph, Point};
use crate::Result;

/// Points closer than this are merged when a hierarchical graph is flattened.
pub const MERGE_TOL_M: f64 = 1e-6;

/// Deduplicates points within a tolerance using a uniform hash grid.
pub(crate) struct PointMerger {
    tol: f64,
    cells: HashMap<(i64, i64), Vec<usize>>,
    pub points: Vec<Point>,
}

impl PointMerger {
    pub fn new(tol: f64) -> Self {
        Self {
            tol,
            cells: HashMap::new(),
            points: Vec::new(),
        }
    }

    fn cell(&self, p: Point) -> (i64, i64) {
        ((p[0] / self.tol).floor() as i64, (p[1] / self.tol).floor() as i64)
    }

    /// Index of an existing point within `tol`, or of the newly inserted `p`.
    pub fn insert(&mut self, p: Point) -> usize {
        let (cx, cy) = self.cell(p);
        for dx in -1..=1 {
            for dy in -1..=1 {
                if let Some(ids) = self.cells.get(&(cx + dx, cy + dy)) {
                    for &id in ids {
                        let q = self.points[id];
                        if (q[0] - p[0]).abs() <= self.tol && (q[1] - p[1]).abs() <= self.tol {
                            return id;
                        }
                    }
                }
            }
        }
        let id = self.points.len();
        self.points.push(p);
        self.cells.entry((cx, cy)).or_default().push(id);
        id
    }
}

/// Edge accumulator that drops self-loops and merges duplicates (OR-ing their flags).
#[derive(Default)]
pub(crate) struct EdgeSet {
    index: HashMap<EdgeKey, usize>,
    pub edges: Vec<(usize, usize)>,
    pub lights: Vec<bool>,
}

impl EdgeSet {
    pub fn add(&mut self, a: usize, b: usize, light: bool) {
        if a == b {
            return;
        }
        let key = EdgeKey::new(a, b);
        match self.index.get(&key) {
            Some(&e) => self.lights[e] |= light,
            None => {
                self.index.insert(key, self.edges.len());
                self.edges.push((a, b));
                self.lights.push(light);
            }
        }
    }
}

/// Expands every global edge into the chain endpoint → local points → endpoint.
///
/// Nodes (global or local) within [`MERGE_TOL_M`] of each other become one node; edges
/// collapsed by the merge are dropped.
pub fn flatten(h: &HierGraph) -> Result<PlainGraph> {
    validate(h).into_result()?;
    let mut points = PointMerger::new(MERGE_TOL_M);
    let global: Vec<usize> = h.global_nodes.iter().map(|&p| points.insert(p)).collect();
    let mut edges = EdgeSet::default();
    for e in h.edges() {
        let (a, b) = h.oriented(e);
        let light = h.semantics.get(&e).copied().unwrap_or(false);
        let mut prev = global[a];
        if let Some(path) = h.local_paths.get(&e) {
            for p in path.valid_points() {
                let id = points.insert(p);
                edges.add(prev, id, light);
                prev = id;
            }
        }
        edges.add(prev, global[b], light);
    }
    Ok(PlainGraph {
        fov_m: h.fov_m,
        nodes: points.points,
        edges: edges.edges,
        traffic_light: edges.lights,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::map::{Adjacency, LocalPath};
    use std::collections::BTreeMap;

    fn one_edge(interior: &[Point], w: usize) -> HierGraph {
        let mut local_paths = BTreeMap::new();
        local_paths.insert(EdgeKey(0, 1), LocalPath::from_points(interior, w));
        HierGraph {
            fov_m: 10.0,
            global_nodes: vec![[0.0, 0.0], [4.0, 0.0]],
            global_adj: Adjacency::from_edges(2, &[(0, 1)]),
            local_paths,
            semantics: BTreeMap::new(),
            w,
            order: vec![0, 1],
        }
    }

    #[test]
    fn no_interior_points() {
        let g = flatten(&one_edge(&[], 4)).unwrap();
        assert_eq!(g.nodes.len(), 2);
        assert_eq!(g.edges.len(), 1);
    }

    #[test]
    fn three_interior_points() {
        let g = flatten(&one_edge(&[[1.0, 0.5], [2.0, 0.7], [3.0, 0.5]], 4)).unwrap();
        assert_eq!(g.nodes.len(), 5);
        assert_eq!(g.edges.len(), 4);
        let deg = g.degrees();
        assert_eq!(&deg[2..], &[2, 2, 2]);
        assert!(validate(&g).is_ok());
    }

    #[test]
    fn coincident_global_nodes_merge() {
        let mut h = one_edge(&[[2.0, 1.0]], 2);
        h.global_nodes.push([4.0 + 1e-8, 0.0]);
        h.global_adj = Adjacency::from_edges(3, &[(0, 1), (0, 2)]);
        h.order = vec![0, 1, 2];
        let g = flatten(&h).unwrap();
        assert_eq!(g.nodes.len(), 3);
        // edge 0-2 duplicates nothing: 0-(2,1)-1 plus 0-1' where 1' merged into 1
        assert_eq!(g.edges.len(), 3);
    }

    #[test]
    fn path_direction_follows_order() {
        let mut h = one_edge(&[[3.0, 0.5], [1.0, 0.5]], 2);
        h.order = vec![1, 0];
        let g = flatten(&h).unwrap();
        // node 1 is generated first, so the first interior point hangs off node 1
        assert!(g.edges.contains(&(1, 2)));
        assert!(g.edges.contains(&(3, 0)));
    }

    #[test]
    fn invalid_input_rejected() {
        let mut h = one_edge(&[], 3);
        h.local_paths.get_mut(&EdgeKey(0, 1)).unwrap().mask = vec![false, true, false];
        assert!(flatten(&h).is_err());
    }
}
