//! Graph isomorphism checks (VF2) used to verify representation round trips.

use petgraph::algo::{is_isomorphic as vf2, is_isomorphic_matching};
use petgraph::graph::UnGraph;

use super::{PlainGraph, Point};

fn to_petgraph(g: &PlainGraph) -> UnGraph<Point, ()> {
    let mut pg = UnGraph::with_capacity(g.nodes.len(), g.edges.len());
    let ids: Vec<_> = g.nodes.iter().map(|&p| pg.add_node(p)).collect();
    for &(a, b) in &g.edges {
        pg.add_edge(ids[a], ids[b], ());
    }
    pg
}

/// Structural isomorphism, ignoring coordinates.
pub fn is_isomorphic(a: &PlainGraph, b: &PlainGraph) -> bool {
    vf2(&to_petgraph(a), &to_petgraph(b))
}

/// Isomorphism where matched nodes must also agree in position within `tol` meters.
pub fn is_isomorphic_with_coords(a: &PlainGraph, b: &PlainGraph, tol: f64) -> bool {
    is_isomorphic_matching(
        &to_petgraph(a),
        &to_petgraph(b),
        |p: &Point, q: &Point| (p[0] - q[0]).abs() <= tol && (p[1] - q[1]).abs() <= tol,
        |_: &(), _: &()| true,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relabeled_path_is_isomorphic() {
        let a = PlainGraph::new(1.0, vec![[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]], vec![(0, 1), (1, 2)]);
        let b = PlainGraph::new(1.0, vec![[1.0, 0.0], [2.0, 0.0], [0.0, 0.0]], vec![(2, 0), (0, 1)]);
        assert!(is_isomorphic(&a, &b));
        assert!(is_isomorphic_with_coords(&a, &b, 1e-12));
        let c = PlainGraph::new(1.0, vec![[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]], vec![(0, 1), (0, 2)]);
        assert!(is_isomorphic(&a, &c));
        assert!(!is_isomorphic_with_coords(&a, &c, 1e-12));
    }
}
