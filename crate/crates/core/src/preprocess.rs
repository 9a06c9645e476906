//! Raw vector maps → training-ready hierarchical graphs.
//!
//! The pipeline for one patch is `sample_patches` → `decimate_graph` →
//! `build_hierarchical` → `normalize`.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::map::{
    chains, chains_with_keys, validate, Adjacency, EdgeKey, EdgeSet, HierGraph, LocalPath,
    PlainGraph, Point, PointMerger, MERGE_TOL_M,
};
use crate::{Error, Result};

/// Local path width used for a field of view: 8 slots for 200 m patches, 20 for 120 m.
pub fn default_w_for_fov(fov_m: f64) -> usize {
    if fov_m <= 150.0 {
        20
    } else {
        8
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatchConfig {
    pub fov_m: f64,
    pub max_local_w: usize,
    /// Turning-angle threshold (radians) below which interior points are dropped.
    pub curvature_tol: f64,
    pub seed: u64,
}

impl PatchConfig {
    pub fn new(fov_m: f64, curvature_tol: f64, seed: u64) -> Self {
        Self {
            fov_m,
            max_local_w: default_w_for_fov(fov_m),
            curvature_tol,
            seed,
        }
    }

    pub fn check(&self) -> Result<()> {
        if !(self.fov_m > 0.0) {
            return Err(Error::Config(format!("fov_m must be > 0, got {}", self.fov_m)));
        }
        if self.max_local_w < 1 {
            return Err(Error::Config("max_local_w must be >= 1".into()));
        }
        if !(0.0..std::f64::consts::PI).contains(&self.curvature_tol) {
            return Err(Error::Config(format!(
                "curvature_tol must lie in [0, pi), got {}",
                self.curvature_tol
            )));
        }
        Ok(())
    }
}

/// Splitmix-style derivation of independent per-index seeds.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

// ---------------------------------------------------------------------------
// decimation

/// Turning angle in `[0, π]` between consecutive direction vectors; 0 if either is degenerate.
fn turning_angle(a: Point, b: Point) -> f64 {
    let cross = a[0] * b[1] - a[1] * b[0];
    let dot = a[0] * b[0] + a[1] * b[1];
    if a == [0.0, 0.0] || b == [0.0, 0.0] {
        return 0.0;
    }
    cross.abs().atan2(dot)
}

fn sub(a: Point, b: Point) -> Point {
    [a[0] - b[0], a[1] - b[1]]
}

fn point_segment_dist(p: Point, a: Point, b: Point) -> f64 {
    let ab = sub(b, a);
    let len2 = ab[0] * ab[0] + ab[1] * ab[1];
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p[0] - a[0]) * ab[0] + (p[1] - a[1]) * ab[1]) / len2).clamp(0.0, 1.0)
    };
    let q = [a[0] + t * ab[0], a[1] + t * ab[1]];
    crate::map::dist(p, q)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Decimated {
    pub points: Vec<Point>,
    /// Indices of the retained points in the input.
    pub kept: Vec<usize>,
    /// Largest distance from an input point to the simplified polyline.
    pub hausdorff_m: f64,
}

fn decimate_pass(points: &[Point], idx: &[usize], tol: f64) -> Vec<usize> {
    let mut kept = vec![idx[0]];
    let mut last = points[idx[0]];
    for w in idx.windows(3) {
        let (cur, next) = (points[w[1]], points[w[2]]);
        if turning_angle(sub(cur, last), sub(next, cur)) >= tol {
            kept.push(w[1]);
            last = cur;
        }
    }
    kept.push(*idx.last().unwrap());
    kept
}

/// Drops interior points whose turning angle (measured from the last retained point) is
/// below `tol`, repeating until stable. Endpoints are always kept, order is preserved, and
/// every retained interior point turns by at least `tol` relative to its retained
/// neighbors, which makes the operation idempotent.
pub fn decimate(polyline: &[Point], tol: f64) -> Result<Decimated> {
    if polyline.len() < 2 {
        return Err(Error::DegeneratePolyline(polyline.len()));
    }
    let mut idx: Vec<usize> = (0..polyline.len()).collect();
    loop {
        let next = decimate_pass(polyline, &idx, tol);
        if next.len() == idx.len() {
            break;
        }
        idx = next;
    }
    let points: Vec<Point> = idx.iter().map(|&i| polyline[i]).collect();
    let hausdorff_m = polyline
        .iter()
        .map(|&p| {
            points
                .windows(2)
                .map(|s| point_segment_dist(p, s[0], s[1]))
                .fold(f64::INFINITY, f64::min)
        })
        .fold(0.0, f64::max);
    Ok(Decimated {
        points,
        kept: idx,
        hausdorff_m,
    })
}

/// Decimates every chain between key points of `g`. Chains whose decimation would create
/// a duplicate edge or a self-loop keep enough interior points to stay simple.
pub fn decimate_graph(g: &PlainGraph, tol: f64) -> Result<PlainGraph> {
    let mut keep = vec![false; g.nodes.len()];
    for k in crate::map::key_points(g) {
        keep[k] = true;
    }
    let mut direct: BTreeSet<EdgeKey> = BTreeSet::new();
    let mut spans: Vec<(Vec<usize>, Vec<usize>)> = Vec::new();
    for chain in chains(g) {
        let coords: Vec<Point> = chain.nodes.iter().map(|&v| g.nodes[v]).collect();
        let mut kept = decimate(&coords, tol)?.kept;
        let interior = chain.nodes.len() - 2;
        if chain.is_loop() && kept.len() < 4 {
            kept = vec![0, 1 + interior / 3, 1 + (2 * interior) / 3, chain.nodes.len() - 1];
            kept.dedup();
        } else if kept.len() == 2 {
            let key = EdgeKey::new(chain.start(), chain.end());
            if !direct.insert(key) {
                kept = vec![0, 1 + interior / 2, chain.nodes.len() - 1];
            }
        }
        spans.push((chain.nodes.clone(), kept.clone()));
        for &k in &kept {
            keep[chain.nodes[k]] = true;
        }
        let _ = chain.edges;
    }
    let order: Vec<usize> = (0..g.nodes.len()).filter(|&v| keep[v]).collect();
    let mut remap = vec![usize::MAX; g.nodes.len()];
    for (new, &old) in order.iter().enumerate() {
        remap[old] = new;
    }
    let light_of: HashMap<EdgeKey, bool> = g
        .edges
        .iter()
        .zip(&g.traffic_light)
        .map(|(&(a, b), &l)| (EdgeKey::new(a, b), l))
        .collect();
    let mut edges = EdgeSet::default();
    for (nodes, kept) in &spans {
        for pair in kept.windows(2) {
            let light = (pair[0]..pair[1])
                .any(|i| light_of[&EdgeKey::new(nodes[i], nodes[i + 1])]);
            edges.add(remap[nodes[pair[0]]], remap[nodes[pair[1]]], light);
        }
    }
    Ok(PlainGraph {
        fov_m: g.fov_m,
        nodes: order.iter().map(|&v| g.nodes[v]).collect(),
        edges: edges.edges,
        traffic_light: edges.lights,
    })
}

/// Fraction of control points removed by decimating `g` at `tol`.
pub fn removal_fraction(graphs: &[PlainGraph], tol: f64) -> Result<f64> {
    let (mut before, mut after) = (0usize, 0usize);
    for g in graphs {
        before += g.nodes.len();
        after += decimate_graph(g, tol)?.nodes.len();
    }
    if before == 0 {
        return Ok(0.0);
    }
    Ok(1.0 - after as f64 / before as f64)
}

/// Bisects the curvature tolerance so that pooled removal over `graphs` hits `target`.
pub fn calibrate_curvature_tol(graphs: &[PlainGraph], target: f64) -> Result<f64> {
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    for _ in 0..30 {
        let mid = 0.5 * (lo + hi);
        if removal_fraction(graphs, mid)? < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

// ---------------------------------------------------------------------------
// key points, hierarchy, ordering

/// Nodes with degree ≠ 2, plus one promoted node per pure degree-2 cycle.
pub fn extract_keypoints(g: &PlainGraph) -> BTreeSet<usize> {
    crate::map::key_points(g).into_iter().collect()
}

/// Depth-first order from `start`; neighbors ascending, remaining components in
/// ascending order of their smallest unvisited node.
pub fn dfs_order_from(adj: &Adjacency, start: usize) -> Vec<usize> {
    let n = adj.len();
    let mut seen = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let nbrs: Vec<Vec<usize>> = (0..n).map(|i| adj.neighbors(i).collect()).collect();
    let roots = std::iter::once(start).chain(0..n);
    for root in roots {
        if root >= n || seen[root] {
            continue;
        }
        seen[root] = true;
        order.push(root);
        let mut stack: Vec<(usize, usize)> = vec![(root, 0)];
        while let Some((v, pos)) = stack.last_mut() {
            let v = *v;
            match nbrs[v][*pos..].iter().position(|&u| !seen[u]) {
                Some(off) => {
                    let u = nbrs[v][*pos + off];
                    *pos += off + 1;
                    seen[u] = true;
                    order.push(u);
                    stack.push((u, 0));
                }
                None => {
                    stack.pop();
                }
            }
        }
    }
    order
}

/// DFS generation order with a start node drawn uniformly from `seed`.
pub fn dfs_order(adj: &Adjacency, seed: u64) -> Vec<usize> {
    if adj.is_empty() {
        return Vec::new();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = rng.gen_range(0..adj.len());
    dfs_order_from(adj, start)
}

/// Splits `g` into key points (global nodes) and the degree-2 chains between them (local
/// paths). Loops get two promoted interior points and parallel chains between the same
/// key-point pair get their midpoint promoted, so the global graph stays simple.
pub fn build_hierarchical(g: &PlainGraph, cfg: &PatchConfig) -> Result<HierGraph> {
    cfg.check()?;
    validate(g).into_result()?;
    let mut promoted: Vec<usize> = Vec::new();
    let mut groups: BTreeMap<EdgeKey, Vec<Vec<usize>>> = BTreeMap::new();
    for chain in chains(g) {
        let interior = chain.interior().to_vec();
        if chain.is_loop() {
            let m = interior.len();
            promoted.push(chain.start());
            promoted.push(interior[m / 3]);
            promoted.push(interior[(2 * m) / 3]);
        } else {
            groups
                .entry(EdgeKey::new(chain.start(), chain.end()))
                .or_default()
                .push(interior);
        }
    }
    for mut parallel in groups.into_values().filter(|p| p.len() > 1) {
        parallel.sort_by(|a, b| a.len().cmp(&b.len()).then(a.first().cmp(&b.first())));
        for interior in &parallel[1..] {
            promoted.push(interior[interior.len() / 2]);
        }
    }
    let (keys, all_chains) = chains_with_keys(g, &promoted);

    let mut global_index = vec![usize::MAX; g.nodes.len()];
    for (i, &k) in keys.iter().enumerate() {
        global_index[k] = i;
    }
    let n = keys.len();
    let mut adj = Adjacency::new(n);
    let mut raw_paths: Vec<(usize, usize, Vec<Point>, bool)> = Vec::new();
    for chain in &all_chains {
        let (a, b) = (global_index[chain.start()], global_index[chain.end()]);
        let interior: Vec<Point> = chain.interior().iter().map(|&v| g.nodes[v]).collect();
        if interior.len() > cfg.max_local_w {
            return Err(Error::LocalOverflow {
                from: chain.start(),
                to: chain.end(),
                interior: interior.len(),
                w: cfg.max_local_w,
            });
        }
        let light = chain.edges.iter().any(|&e| g.traffic_light[e]);
        adj.connect(a, b);
        raw_paths.push((a, b, interior, light));
    }
    let order = dfs_order(&adj, cfg.seed);
    let mut rank = vec![0; n];
    for (k, &v) in order.iter().enumerate() {
        rank[v] = k;
    }
    let mut local_paths = BTreeMap::new();
    let mut semantics = BTreeMap::new();
    for (a, b, mut interior, light) in raw_paths {
        if rank[a] > rank[b] {
            interior.reverse();
        }
        let key = EdgeKey::new(a, b);
        local_paths.insert(key, LocalPath::from_points(&interior, cfg.max_local_w));
        semantics.insert(key, light);
    }
    Ok(HierGraph {
        fov_m: g.fov_m,
        global_nodes: keys.iter().map(|&k| g.nodes[k]).collect(),
        global_adj: adj,
        local_paths,
        semantics,
        w: cfg.max_local_w,
        order,
    })
}

// ---------------------------------------------------------------------------
// patches

/// Liang–Barsky clip of segment `p→q` to `[0, s]²`; returns the parameter interval.
fn clip_segment(p: Point, q: Point, s: f64) -> Option<(f64, f64)> {
    let d = sub(q, p);
    let (mut t0, mut t1) = (0.0_f64, 1.0_f64);
    for (num, den) in [(p[0], -d[0]), (s - p[0], d[0]), (p[1], -d[1]), (s - p[1], d[1])] {
        // constraint: den * t <= num
        if den == 0.0 {
            if num < 0.0 {
                return None;
            }
        } else {
            let t = num / den;
            if den < 0.0 {
                t0 = t0.max(t);
            } else {
                t1 = t1.min(t);
            }
        }
    }
    (t0 <= t1).then_some((t0, t1))
}

/// Square crop with corner `(x0, y0)`, translated so the corner becomes the origin.
/// Edges crossing the boundary end at a new node on the boundary. Only the largest
/// connected component is kept.
pub fn crop(map: &PlainGraph, x0: f64, y0: f64, fov: f64) -> PlainGraph {
    let local = |p: Point| [p[0] - x0, p[1] - y0];
    let inside = |p: Point| p[0] >= 0.0 && p[0] <= fov && p[1] >= 0.0 && p[1] <= fov;
    let mut points = PointMerger::new(MERGE_TOL_M);
    let mut id_of = vec![usize::MAX; map.nodes.len()];
    for (v, &p) in map.nodes.iter().enumerate() {
        if inside(local(p)) {
            id_of[v] = points.insert(local(p));
        }
    }
    let mut edges = EdgeSet::default();
    for (e, &(a, b)) in map.edges.iter().enumerate() {
        let (p, q) = (local(map.nodes[a]), local(map.nodes[b]));
        let Some((t0, t1)) = clip_segment(p, q, fov) else {
            continue;
        };
        let at = |t: f64| {
            [
                (p[0] + t * (q[0] - p[0])).clamp(0.0, fov),
                (p[1] + t * (q[1] - p[1])).clamp(0.0, fov),
            ]
        };
        let u = if t0 == 0.0 && id_of[a] != usize::MAX {
            id_of[a]
        } else {
            points.insert(at(t0))
        };
        let w = if t1 == 1.0 && id_of[b] != usize::MAX {
            id_of[b]
        } else {
            points.insert(at(t1))
        };
        edges.add(u, w, map.traffic_light[e]);
    }
    let g = PlainGraph {
        fov_m: fov,
        nodes: points.points,
        edges: edges.edges,
        traffic_light: edges.lights,
    };
    let largest = g
        .components()
        .into_iter()
        .filter(|c| c.len() > 1)
        .max_by(|a, b| a.len().cmp(&b.len()).then(b[0].cmp(&a[0])));
    match largest {
        Some(comp) => g.induced(&comp),
        None => PlainGraph::new(fov, Vec::new(), Vec::new()),
    }
}

struct PatchSampler<'a> {
    map: &'a PlainGraph,
    fov: f64,
    origin: Point,
    range: Point,
}

impl<'a> PatchSampler<'a> {
    fn new(map: &'a PlainGraph, fov: f64) -> Result<Self> {
        let (x_min, y_min, x_max, y_max) = map.bbox();
        let (width, height) = (x_max - x_min, y_max - y_min);
        if width < fov || height < fov {
            return Err(Error::MapSmallerThanFov { width, height, fov });
        }
        Ok(Self {
            map,
            fov,
            origin: [x_min, y_min],
            range: [width - fov, height - fov],
        })
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> Option<PlainGraph> {
        let x0 = self.origin[0] + rng.gen::<f64>() * self.range[0];
        let y0 = self.origin[1] + rng.gen::<f64>() * self.range[1];
        let patch = crop(self.map, x0, y0, self.fov);
        (!patch.edges.is_empty()).then_some(patch)
    }
}

/// `n` random square crops of `map`. Patch `i` draws from its own seed derived from
/// `(cfg.seed, i)`; empty crops are redrawn, with a total budget of `100 n` attempts.
pub fn sample_patches(map: &PlainGraph, cfg: &PatchConfig, n: usize) -> Result<Vec<PlainGraph>> {
    cfg.check()?;
    let sampler = PatchSampler::new(map, cfg.fov_m)?;
    let budget = 100 * n.max(1);
    let mut attempts = 0;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, i as u64));
        loop {
            attempts += 1;
            if attempts > budget {
                return Err(Error::SparseMap { attempts: budget });
            }
            if let Some(patch) = sampler.draw(&mut rng) {
                out.push(patch);
                break;
            }
        }
    }
    Ok(out)
}

/// Patch `index` alone, with its own budget of `attempts` redraws.
pub fn sample_patch(
    map: &PlainGraph,
    cfg: &PatchConfig,
    index: usize,
    attempts: usize,
) -> Result<PlainGraph> {
    cfg.check()?;
    let sampler = PatchSampler::new(map, cfg.fov_m)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, index as u64));
    (0..attempts)
        .find_map(|_| sampler.draw(&mut rng))
        .ok_or(Error::SparseMap { attempts })
}

// ---------------------------------------------------------------------------
// normalization

/// Affine map of the `[0, fov]²` patch square onto `[-1, 1]²`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormTransform {
    pub fov_m: f64,
}

impl NormTransform {
    pub fn apply(&self, p: Point) -> Point {
        [2.0 * p[0] / self.fov_m - 1.0, 2.0 * p[1] / self.fov_m - 1.0]
    }

    pub fn invert(&self, p: Point) -> Point {
        [(p[0] + 1.0) * 0.5 * self.fov_m, (p[1] + 1.0) * 0.5 * self.fov_m]
    }

    fn map_hier(&self, h: &HierGraph, f: impl Fn(Point) -> Point) -> HierGraph {
        let mut out = h.clone();
        for p in &mut out.global_nodes {
            *p = f(*p);
        }
        for path in out.local_paths.values_mut() {
            for (p, &m) in path.coords.iter_mut().zip(&path.mask) {
                *p = if m { f(*p) } else { [0.0, 0.0] };
            }
        }
        out
    }

    /// Meters → normalized units.
    pub fn normalize_hier(&self, h: &HierGraph) -> HierGraph {
        self.map_hier(h, |p| self.apply(p))
    }

    /// Normalized units → meters.
    pub fn denormalize_hier(&self, h: &HierGraph) -> HierGraph {
        self.map_hier(h, |p| self.invert(p))
    }

    pub fn normalize_plain(&self, g: &PlainGraph) -> PlainGraph {
        let mut out = g.clone();
        for p in &mut out.nodes {
            *p = self.apply(*p);
        }
        out
    }

    pub fn denormalize_plain(&self, g: &PlainGraph) -> PlainGraph {
        let mut out = g.clone();
        for p in &mut out.nodes {
            *p = self.invert(*p);
        }
        out
    }
}

/// Normalizes a patch whose coordinates lie in `[0, fov_m]²`.
pub fn normalize(h: &HierGraph, fov_m: f64) -> Result<(HierGraph, NormTransform)> {
    let slack = 1e-9 * fov_m.max(1.0);
    let check = |p: Point| {
        let ok = |v: f64| v >= -slack && v <= fov_m + slack;
        if ok(p[0]) && ok(p[1]) {
            Ok(())
        } else {
            Err(Error::OutOfRange {
                x: p[0],
                y: p[1],
                fov: fov_m,
            })
        }
    };
    for &p in &h.global_nodes {
        check(p)?;
    }
    for path in h.local_paths.values() {
        for p in path.valid_points() {
            check(p)?;
        }
    }
    let t = NormTransform { fov_m };
    Ok((t.normalize_hier(h), t))
}

// ---------------------------------------------------------------------------
// statistics

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CountSummary {
    pub max: usize,
    pub mean: f64,
    pub values: Vec<usize>,
}

impl CountSummary {
    pub fn of(values: Vec<usize>) -> Self {
        let max = values.iter().copied().max().unwrap_or(0);
        let mean = if values.is_empty() {
            0.0
        } else {
            values.iter().sum::<usize>() as f64 / values.len() as f64
        };
        Self { max, mean, values }
    }
}

/// Graph statistics of a patch corpus, plain graph versus hierarchical graph.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub patches: usize,
    pub plain_nodes: CountSummary,
    pub plain_edges: CountSummary,
    /// Mean ratio of absent to present edges in the plain adjacency matrix.
    pub plain_no_edge_ratio: f64,
    pub global_nodes: CountSummary,
    pub global_edges: CountSummary,
    pub global_no_edge_ratio: f64,
    pub local_max_len: usize,
    /// Fraction of (decimated) control points that became global nodes.
    pub global_node_share: f64,
    pub removal_fraction: f64,
    pub curvature_tol: f64,
    pub w: usize,
}

fn no_edge_ratio(n: usize, e: usize) -> f64 {
    if e == 0 {
        return 0.0;
    }
    let pairs = n * n.saturating_sub(1) / 2;
    (pairs - e) as f64 / e as f64
}

impl CorpusStats {
    /// `plain` are the decimated plain graphs, `hier` their hierarchical forms.
    pub fn compute(
        plain: &[PlainGraph],
        hier: &[HierGraph],
        removal_fraction: f64,
        curvature_tol: f64,
        w: usize,
    ) -> Self {
        let mean = |v: Vec<f64>| {
            if v.is_empty() {
                0.0
            } else {
                v.iter().sum::<f64>() / v.len() as f64
            }
        };
        let plain_nodes: usize = plain.iter().map(|g| g.nodes.len()).sum();
        let global_nodes: usize = hier.iter().map(|h| h.node_count()).sum();
        Self {
            patches: hier.len(),
            plain_nodes: CountSummary::of(plain.iter().map(|g| g.nodes.len()).collect()),
            plain_edges: CountSummary::of(plain.iter().map(|g| g.edges.len()).collect()),
            plain_no_edge_ratio: mean(
                plain.iter().map(|g| no_edge_ratio(g.nodes.len(), g.edges.len())).collect(),
            ),
            global_nodes: CountSummary::of(hier.iter().map(|h| h.node_count()).collect()),
            global_edges: CountSummary::of(hier.iter().map(|h| h.global_adj.edge_count()).collect()),
            global_no_edge_ratio: mean(
                hier.iter()
                    .map(|h| no_edge_ratio(h.node_count(), h.global_adj.edge_count()))
                    .collect(),
            ),
            local_max_len: hier
                .iter()
                .flat_map(|h| h.local_paths.values().map(LocalPath::valid_len))
                .max()
                .unwrap_or(0),
            global_node_share: if plain_nodes == 0 {
                0.0
            } else {
                global_nodes as f64 / plain_nodes as f64
            },
            removal_fraction,
            curvature_tol,
            w,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::map::{flatten, iso::is_isomorphic_with_coords};
    use std::f64::consts::PI;

    #[test]
    fn collinear_interior_removed() {
        let d = decimate(&[[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]], 0.01).unwrap();
        assert_eq!(d.points, vec![[0.0, 0.0], [2.0, 0.0]]);
        assert_eq!(d.hausdorff_m, 0.0);
    }

    #[test]
    fn sharp_corner_kept() {
        let line = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0]];
        assert_eq!(decimate(&line, 0.01).unwrap().points, line.to_vec());
    }

    #[test]
    fn degenerate_polyline_rejected() {
        assert!(matches!(decimate(&[[0.0, 0.0]], 0.1), Err(Error::DegeneratePolyline(1))));
    }

    #[test]
    fn quarter_arc_removal_tunable_to_seventy_percent() {
        let arc: Vec<Point> = (0..100)
            .map(|i| {
                let a = 0.5 * PI * i as f64 / 99.0;
                [50.0 * a.cos(), 50.0 * a.sin()]
            })
            .collect();
        let g = PlainGraph::new(
            100.0,
            arc.clone(),
            (0..99).map(|i| (i, i + 1)).collect(),
        );
        let tol = calibrate_curvature_tol(std::slice::from_ref(&g), 0.7).unwrap();
        let kept = decimate(&arc, tol).unwrap().points.len();
        let removed = 1.0 - kept as f64 / 100.0;
        assert!((removed - 0.7).abs() <= 0.05, "removed {removed} at tol {tol}");
    }

    #[test]
    fn dfs_triangle_from_zero() {
        let adj = Adjacency::from_edges(3, &[(0, 1), (1, 2), (0, 2)]);
        assert_eq!(dfs_order_from(&adj, 0), vec![0, 1, 2]);
    }

    #[test]
    fn dfs_single_node() {
        assert_eq!(dfs_order(&Adjacency::new(1), 42), vec![0]);
    }

    #[test]
    fn dfs_two_components_from_three() {
        let adj = Adjacency::from_edges(4, &[(0, 1), (2, 3)]);
        assert_eq!(dfs_order_from(&adj, 3), vec![3, 2, 0, 1]);
    }

    #[test]
    fn dfs_backtracks_to_unvisited_neighbors() {
        // star with a tail: 0-1, 0-2, 1-3
        let adj = Adjacency::from_edges(4, &[(0, 1), (0, 2), (1, 3)]);
        assert_eq!(dfs_order_from(&adj, 0), vec![0, 1, 3, 2]);
    }

    #[test]
    fn single_lane_hierarchy() {
        let g = PlainGraph::new(
            10.0,
            vec![[0.0, 0.0], [1.0, 0.2], [2.0, 0.2], [3.0, 0.0]],
            vec![(0, 1), (1, 2), (2, 3)],
        );
        let h = build_hierarchical(&g, &PatchConfig::new(10.0, 0.05, 1)).unwrap();
        assert_eq!(h.node_count(), 2);
        assert_eq!(h.global_adj.edge_count(), 1);
        assert_eq!(h.local_paths[&EdgeKey(0, 1)].valid_len(), 2);
        assert!(is_isomorphic_with_coords(&flatten(&h).unwrap(), &g, 1e-12));
    }

    #[test]
    fn empty_interior_gives_zero_mask() {
        let g = PlainGraph::new(10.0, vec![[0.0, 0.0], [1.0, 0.0]], vec![(0, 1)]);
        let h = build_hierarchical(&g, &PatchConfig::new(10.0, 0.05, 1)).unwrap();
        assert!(h.local_paths.values().all(|p| p.mask.iter().all(|&m| !m)));
    }

    #[test]
    fn overflow_names_the_chain() {
        let nodes: Vec<Point> = (0..12).map(|i| [i as f64, (i % 2) as f64]).collect();
        let g = PlainGraph::new(20.0, nodes, (0..11).map(|i| (i, i + 1)).collect());
        let mut cfg = PatchConfig::new(20.0, 0.05, 1);
        cfg.max_local_w = 8;
        match build_hierarchical(&g, &cfg) {
            Err(Error::LocalOverflow { from, to, interior, w }) => {
                assert_eq!((from, to, interior, w), (0, 11, 10, 8));
            }
            other => panic!("expected overflow, got {other:?}"),
        }
    }

    #[test]
    fn parallel_chains_promote_midpoint() {
        // two routes between 0 and 1: direct and via 2
        let g = PlainGraph::new(
            10.0,
            vec![[0.0, 0.0], [2.0, 0.0], [1.0, 1.0], [-1.0, 0.0], [3.0, 0.0]],
            vec![(0, 1), (0, 2), (2, 1), (0, 3), (1, 4)],
        );
        let h = build_hierarchical(&g, &PatchConfig::new(10.0, 0.05, 3)).unwrap();
        assert_eq!(h.node_count(), 5);
        assert!(is_isomorphic_with_coords(&flatten(&h).unwrap(), &g, 1e-12));
    }

    #[test]
    fn pure_cycle_round_trips() {
        let g = PlainGraph::new(
            10.0,
            vec![[1.0, 1.0], [0.0, 1.0], [0.0, 0.0], [1.0, 0.0]],
            vec![(0, 1), (1, 2), (2, 3), (3, 0)],
        );
        assert_eq!(extract_keypoints(&g).len(), 1);
        let h = build_hierarchical(&g, &PatchConfig::new(10.0, 0.05, 0)).unwrap();
        assert!(validate(&h).is_ok());
        assert!(is_isomorphic_with_coords(&flatten(&h).unwrap(), &g, 1e-12));
    }

    #[test]
    fn normalize_corner_center_and_inverse() {
        let t = NormTransform { fov_m: 200.0 };
        assert_eq!(t.apply([100.0, 100.0]), [0.0, 0.0]);
        assert_eq!(t.apply([0.0, 0.0]), [-1.0, -1.0]);
        let p = [37.25, 181.5];
        let back = t.invert(t.apply(p));
        assert!((back[0] - p[0]).abs() < 1e-9 && (back[1] - p[1]).abs() < 1e-9);
    }

    #[test]
    fn normalize_rejects_out_of_range() {
        let g = PlainGraph::new(10.0, vec![[0.0, 0.0], [12.0, 0.0]], vec![(0, 1)]);
        let h = build_hierarchical(&g, &PatchConfig::new(10.0, 0.05, 0)).unwrap();
        assert!(matches!(normalize(&h, 10.0), Err(Error::OutOfRange { .. })));
    }

    #[test]
    fn clip_crossing_segment() {
        let (t0, t1) = clip_segment([-1.0, 0.5], [2.0, 0.5], 1.0).unwrap();
        assert!((t0 - 1.0 / 3.0).abs() < 1e-12 && (t1 - 2.0 / 3.0).abs() < 1e-12);
        assert!(clip_segment([-1.0, -1.0], [-0.5, 2.0], 1.0).is_none());
    }

    #[test]
    fn whole_map_patch_when_fov_equals_bbox() {
        let g = PlainGraph::new(
            10.0,
            vec![[0.0, 0.0], [10.0, 0.0], [10.0, 10.0], [3.0, 4.0]],
            vec![(0, 1), (1, 2), (2, 3)],
        );
        let cfg = PatchConfig::new(10.0, 0.05, 9);
        let patches = sample_patches(&g, &cfg, 1).unwrap();
        assert_eq!(patches[0], g);
    }

    #[test]
    fn map_smaller_than_fov_rejected() {
        let g = PlainGraph::new(5.0, vec![[0.0, 0.0], [5.0, 5.0]], vec![(0, 1)]);
        let cfg = PatchConfig::new(10.0, 0.05, 9);
        assert!(matches!(sample_patches(&g, &cfg, 1), Err(Error::MapSmallerThanFov { .. })));
    }

    #[test]
    fn sparse_map_exhausts_budget() {
        // a single short edge in a corner of a large empty area
        let g = PlainGraph::new(
            1000.0,
            vec![[0.0, 0.0], [0.5, 0.0], [1000.0, 1000.0], [999.0, 1000.0]],
            vec![(0, 1), (2, 3)],
        );
        let cfg = PatchConfig::new(10.0, 0.05, 9);
        assert!(matches!(sample_patches(&g, &cfg, 2), Err(Error::SparseMap { .. })));
    }

    #[test]
    fn crop_clips_at_boundary() {
        let g = PlainGraph::new(
            30.0,
            vec![[5.0, 15.0], [25.0, 15.0]],
            vec![(0, 1)],
        );
        let p = crop(&g, 0.0, 0.0, 20.0);
        assert_eq!(p.nodes, vec![[5.0, 15.0], [20.0, 15.0]]);
        assert_eq!(p.edges, vec![(0, 1)]);
    }
}
