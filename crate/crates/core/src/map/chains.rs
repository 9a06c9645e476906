use super::PlainGraph;

/// A maximal run of degree-2 nodes between two key points (which may coincide for loops).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Chain {
    /// Node path, key point first and last.
    pub nodes: Vec<usize>,
    /// Edge indices along the path; `edges[i]` joins `nodes[i]` and `nodes[i + 1]`.
    pub edges: Vec<usize>,
}

impl Chain {
    pub fn start(&self) -> usize {
        self.nodes[0]
    }

    pub fn end(&self) -> usize {
        *self.nodes.last().unwrap()
    }

    pub fn interior(&self) -> &[usize] {
        &self.nodes[1..self.nodes.len() - 1]
    }

    pub fn is_loop(&self) -> bool {
        self.start() == self.end()
    }
}

struct Decomposition {
    keys: Vec<usize>,
    chains: Vec<Chain>,
}

fn decompose(g: &PlainGraph, extra_keys: &[usize]) -> Decomposition {
    let n = g.nodes.len();
    let mut incident: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    for (e, &(a, b)) in g.edges.iter().enumerate() {
        incident[a].push((b, e));
        incident[b].push((a, e));
    }
    for list in &mut incident {
        list.sort_unstable();
    }
    let mut is_key: Vec<bool> = incident.iter().map(|l| l.len() != 2).collect();
    for &k in extra_keys {
        is_key[k] = true;
    }
    let mut used = vec![false; g.edges.len()];
    let mut chains = Vec::new();

    let walk = |start: usize, first: (usize, usize), used: &mut Vec<bool>, is_key: &[bool]| {
        let mut nodes = vec![start];
        let mut edges = vec![first.1];
        used[first.1] = true;
        let mut cur = first.0;
        while !is_key[cur] {
            nodes.push(cur);
            let next = incident[cur]
                .iter()
                .find(|&&(_, e)| !used[e])
                .copied()
                .expect("degree-2 node with both edges consumed");
            used[next.1] = true;
            edges.push(next.1);
            cur = next.0;
        }
        nodes.push(cur);
        Chain { nodes, edges }
    };

    for v in 0..n {
        if !is_key[v] {
            continue;
        }
        for &(u, e) in &incident[v] {
            if !used[e] {
                chains.push(walk(v, (u, e), &mut used, &is_key));
            }
        }
    }

    // Whatever is left is a union of cycles made only of degree-2 nodes.
    loop {
        let Some(seed_edge) = used.iter().position(|&u| !u) else {
            break;
        };
        let (a, _) = g.edges[seed_edge];
        let mut cycle = vec![a];
        let mut prev = usize::MAX;
        let mut cur = a;
        loop {
            let next = incident[cur]
                .iter()
                .map(|&(u, _)| u)
                .find(|&u| u != prev)
                .unwrap();
            if next == a {
                break;
            }
            cycle.push(next);
            prev = cur;
            cur = next;
        }
        let start = *cycle
            .iter()
            .min_by(|&&p, &&q| {
                let (pp, qq) = (g.nodes[p], g.nodes[q]);
                pp[0].total_cmp(&qq[0]).then(pp[1].total_cmp(&qq[1])).then(p.cmp(&q))
            })
            .unwrap();
        is_key[start] = true;
        let first = incident[start][0];
        chains.push(walk(start, first, &mut used, &is_key));
    }

    let keys = (0..n).filter(|&v| is_key[v]).collect();
    Decomposition { keys, chains }
}

/// Nodes of degree ≠ 2, plus the lexicographically smallest node of every cycle made
/// only of degree-2 nodes. Sorted ascending.
pub fn key_points(g: &PlainGraph) -> Vec<usize> {
    decompose(g, &[]).keys
}

/// Decomposes every edge of `g` into exactly one chain between key points.
/// Chains are emitted per key point in ascending order, neighbors ascending.
pub fn chains(g: &PlainGraph) -> Vec<Chain> {
    decompose(g, &[]).chains
}

/// Like [`chains`], treating `extra_keys` as key points as well. Returns the full key set
/// alongside the chains.
pub fn chains_with_keys(g: &PlainGraph, extra_keys: &[usize]) -> (Vec<usize>, Vec<Chain>) {
    let d = decompose(g, extra_keys);
    (d.keys, d.chains)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path3() -> PlainGraph {
        PlainGraph::new(10.0, vec![[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]], vec![(0, 1), (1, 2)])
    }

    fn plus() -> PlainGraph {
        PlainGraph::new(
            10.0,
            vec![[0.0, 0.0], [1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]],
            vec![(0, 1), (0, 2), (0, 3), (0, 4)],
        )
    }

    fn square_cycle() -> PlainGraph {
        PlainGraph::new(
            10.0,
            vec![[1.0, 1.0], [0.0, 1.0], [0.0, 0.0], [1.0, 0.0]],
            vec![(0, 1), (1, 2), (2, 3), (3, 0)],
        )
    }

    #[test]
    fn path_endpoints_are_keys() {
        assert_eq!(key_points(&path3()), vec![0, 2]);
        let c = chains(&path3());
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].nodes, vec![0, 1, 2]);
    }

    #[test]
    fn plus_center_and_tips_are_keys() {
        assert_eq!(key_points(&plus()), vec![0, 1, 2, 3, 4]);
        assert_eq!(chains(&plus()).len(), 4);
    }

    #[test]
    fn pure_cycle_promotes_one_node() {
        let g = square_cycle();
        let keys = key_points(&g);
        // (0,0) is node 2.
        assert_eq!(keys, vec![2]);
        let c = chains(&g);
        assert_eq!(c.len(), 1);
        assert!(c[0].is_loop());
        assert_eq!(c[0].edges.len(), 4);
    }

    #[test]
    fn every_edge_in_exactly_one_chain() {
        let mut g = plus();
        // hang a 2-chain off a tip
        g.nodes.push([2.0, 0.0]);
        g.nodes.push([3.0, 0.5]);
        g.edges.push((1, 5));
        g.edges.push((5, 6));
        g.traffic_light = vec![false; g.edges.len()];
        let mut seen: Vec<usize> = chains(&g).into_iter().flat_map(|c| c.edges).collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..g.edges.len()).collect::<Vec<_>>());
    }
}
