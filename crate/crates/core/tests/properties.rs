use lanegraph::map::iso::is_isomorphic_with_coords;
use lanegraph::map::{flatten, from_sequence, to_sequence, validate, Adjacency, OriginRule, PlainGraph, Point};
use lanegraph::preprocess::{
    build_hierarchical, decimate, decimate_graph, dfs_order, sample_patches, PatchConfig,
};
use lanegraph::synth::{generate_city, CityConfig};
use proptest::prelude::*;

fn small_city(seed: u64) -> PlainGraph {
    let cfg = CityConfig {
        size_m: 300.0,
        block_m: 75.0,
        seed,
        ..Default::default()
    };
    generate_city(&cfg).unwrap().map
}

fn polyline() -> impl Strategy<Value = Vec<Point>> {
    prop::collection::vec((-50.0..50.0f64, -50.0..50.0f64), 2..30)
        .prop_map(|v| v.into_iter().map(|(x, y)| [x, y]).collect())
}

fn random_graph() -> impl Strategy<Value = (usize, Vec<(usize, usize)>)> {
    (1usize..15).prop_flat_map(|n| {
        let edges = prop::collection::vec((0..n, 0..n), 0..3 * n)
            .prop_map(|v| v.into_iter().filter(|(a, b)| a != b).collect());
        (Just(n), edges)
    })
}

fn connected(adj: &Adjacency, nodes: &[usize]) -> bool {
    let mut seen = vec![nodes[0]];
    let mut stack = vec![nodes[0]];
    while let Some(v) = stack.pop() {
        for u in adj.neighbors(v) {
            if nodes.contains(&u) && !seen.contains(&u) {
                seen.push(u);
                stack.push(u);
            }
        }
    }
    seen.len() == nodes.len()
}

fn component_of(adj: &Adjacency, v: usize) -> Vec<usize> {
    let mut seen = vec![v];
    let mut stack = vec![v];
    while let Some(x) = stack.pop() {
        for u in adj.neighbors(x) {
            if !seen.contains(&u) {
                seen.push(u);
                stack.push(u);
            }
        }
    }
    seen
}

proptest! {
    #[test]
    fn decimate_is_idempotent(line in polyline(), tol in 0.0..1.5f64) {
        let once = decimate(&line, tol).unwrap();
        let twice = decimate(&once.points, tol).unwrap();
        prop_assert_eq!(twice.points, once.points);
    }

    #[test]
    fn dfs_prefixes_stay_connected((n, edges) in random_graph(), seed in any::<u64>()) {
        let adj = Adjacency::from_edges(n, &edges);
        let order = dfs_order(&adj, seed);
        let mut sorted = order.clone();
        sorted.sort_unstable();
        prop_assert_eq!(sorted, (0..n).collect::<Vec<_>>());
        for t in 1..=n {
            let prefix = &order[..t];
            let comp = component_of(&adj, order[t - 1]);
            let inside: Vec<usize> = prefix.iter().copied().filter(|v| comp.contains(v)).collect();
            prop_assert!(connected(&adj, &inside), "prefix {:?} of {:?}", prefix, order);
        }
    }

    #[test]
    fn sequence_reconstructs_node_coordinates(line in polyline()) {
        let n = line.len();
        let g = PlainGraph::new(100.0, line, (0..n - 1).map(|i| (i, i + 1)).collect());
        prop_assume!(validate(&g).is_ok());
        let seq = to_sequence(&g, OriginRule::Fixed([0.0, 0.0])).unwrap();
        prop_assert!(seq.is_well_formed());
        let mut pos = seq.origin;
        let mut visited = Vec::new();
        for s in &seq.steps {
            pos = [pos[0] + s.dx, pos[1] + s.dy];
            visited.push(pos);
        }
        for p in &g.nodes {
            let hit = visited.iter().any(|q| (q[0] - p[0]).abs() < 1e-9 && (q[1] - p[1]).abs() < 1e-9);
            prop_assert!(hit, "node {:?} not reached", p);
        }
        prop_assert!(is_isomorphic_with_coords(&from_sequence(&seq, 100.0), &g, 1e-9));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn synthetic_cities_are_valid_and_have_intersections(seed in any::<u64>()) {
        let city = small_city(seed);
        prop_assert!(validate(&city).is_ok());
        prop_assert!(city.degrees().iter().any(|&d| d > 2));
    }

    #[test]
    fn patches_are_valid_and_inside_the_frame(seed in any::<u64>()) {
        let city = small_city(seed);
        let cfg = PatchConfig::new(120.0, 0.05, seed);
        for p in sample_patches(&city, &cfg, 5).unwrap() {
            prop_assert!(validate(&p).is_ok());
            for q in &p.nodes {
                prop_assert!((0.0..=120.0).contains(&q[0]) && (0.0..=120.0).contains(&q[1]), "{:?}", q);
            }
        }
    }

    #[test]
    fn hierarchy_round_trips_decimated_patches(seed in any::<u64>(), tol in 0.01..0.3f64) {
        let city = small_city(seed);
        let cfg = PatchConfig::new(120.0, tol, seed);
        for p in sample_patches(&city, &cfg, 5).unwrap() {
            let dec = decimate_graph(&p, tol).unwrap();
            let Ok(h) = build_hierarchical(&dec, &cfg) else { continue };
            prop_assert!(validate(&h).is_ok());
            let flat = flatten(&h).unwrap();
            prop_assert!(validate(&flat).is_ok());
            prop_assert!(is_isomorphic_with_coords(&flat, &dec, 1e-9));
        }
    }
}
