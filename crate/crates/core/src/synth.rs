//! Procedural cities: a perturbed grid of two-lane roads with optional arcs, dropped
//! road segments (T-junctions) and signalized intersections.

use std::collections::{HashMap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::map::{io, validate, EdgeSet, PlainGraph, Point, PointMerger, MERGE_TOL_M};
use crate::{Error, Result};

/// Lateral offset of each lane from the road centerline.
pub const LANE_OFFSET_M: f64 = 1.75;
/// Control-point spacing along arcs.
pub const ARC_SPACING_M: f64 = 2.0;
/// Control-point spacing along straight roads.
pub const STRAIGHT_SPACING_M: f64 = 4.0;
/// Lateral survey noise on straight control points.
pub const NOISE_M: f64 = 0.05;
/// Lanes are extended this far past a terminal intersection so they meet the crossing lanes.
const OVERSHOOT_M: f64 = 5.0;
/// Lane edges within this distance of a signalized intersection carry a traffic light.
pub const LIGHT_RADIUS_M: f64 = 20.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CityConfig {
    pub size_m: f64,
    pub block_m: f64,
    /// Grid-point displacement as a fraction of the block size.
    pub jitter: f64,
    pub curve_prob: f64,
    pub light_prob: f64,
    /// Probability that a road segment between two grid points is missing.
    pub drop_prob: f64,
    pub seed: u64,
}

impl Default for CityConfig {
    fn default() -> Self {
        Self {
            size_m: 1000.0,
            block_m: 120.0,
            jitter: 0.15,
            curve_prob: 0.3,
            light_prob: 0.5,
            drop_prob: 0.1,
            seed: 0,
        }
    }
}

impl CityConfig {
    pub fn check(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.block_m > 0.0) || !(self.size_m >= 2.0 * self.block_m) {
            return bad(format!(
                "need size_m >= 2 * block_m > 0, got size {} block {}",
                self.size_m, self.block_m
            ));
        }
        for (name, p) in [
            ("curve_prob", self.curve_prob),
            ("light_prob", self.light_prob),
            ("drop_prob", self.drop_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} must lie in [0, 1], got {p}"));
            }
        }
        if !(0.0..0.5).contains(&self.jitter) {
            return bad(format!("jitter must lie in [0, 0.5), got {}", self.jitter));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Intersection {
    pub position: Point,
    /// Number of road segments meeting here.
    pub roads: usize,
    pub signalized: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct City {
    pub map: PlainGraph,
    pub intersections: Vec<Intersection>,
}

impl City {
    /// Map JSON with an extra `"intersections"` array.
    pub fn to_json(&self) -> String {
        let mut doc: serde_json::Value =
            serde_json::from_str(&io::plain_to_json(&self.map)).expect("valid map json");
        doc["intersections"] =
            serde_json::to_value(&self.intersections).expect("intersections serialize");
        serde_json::to_string(&doc).expect("json serialize")
    }
}

fn lerp(a: Point, b: Point, t: f64) -> Point {
    [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]
}

fn norm(v: Point) -> f64 {
    v[0].hypot(v[1])
}

/// Points strictly after `a` up to and including `b` along a straight segment or an arc
/// with the given sagitta (signed, left of `a→b` positive).
fn sample_segment(
    a: Point,
    b: Point,
    sagitta: Option<f64>,
    rng: &mut ChaCha8Rng,
    noise: &Normal<f64>,
) -> Vec<Point> {
    let d = [b[0] - a[0], b[1] - a[1]];
    let c = norm(d);
    let left = [-d[1] / c, d[0] / c];
    match sagitta {
        None => {
            let k = (c / STRAIGHT_SPACING_M).ceil().max(1.0) as usize;
            (1..=k)
                .map(|i| {
                    let p = lerp(a, b, i as f64 / k as f64);
                    if i == k {
                        p
                    } else {
                        let e = noise.sample(rng);
                        [p[0] + e * left[0], p[1] + e * left[1]]
                    }
                })
                .collect()
        }
        Some(s) => {
            let r = (c * c / 4.0 + s * s) / (2.0 * s.abs());
            let half = (c / 2.0 / r).clamp(-1.0, 1.0).asin();
            let mid = lerp(a, b, 0.5);
            // center sits on the opposite side of the bulge
            let off = (r - s.abs()) * s.signum();
            let center = [mid[0] - off * left[0], mid[1] - off * left[1]];
            let a0 = (a[1] - center[1]).atan2(a[0] - center[0]);
            let sweep = 2.0 * half * -s.signum();
            let k = ((r * 2.0 * half) / ARC_SPACING_M).ceil().max(1.0) as usize;
            (1..=k)
                .map(|i| {
                    if i == k {
                        return b;
                    }
                    let ang = a0 + sweep * i as f64 / k as f64;
                    [center[0] + r * ang.cos(), center[1] + r * ang.sin()]
                })
                .collect()
        }
    }
}

/// Offset polyline using per-vertex averaged normals.
fn offset(line: &[Point], dist: f64) -> Vec<Point> {
    let n = line.len();
    (0..n)
        .map(|i| {
            let a = line[i.saturating_sub(1)];
            let b = line[(i + 1).min(n - 1)];
            let t = [b[0] - a[0], b[1] - a[1]];
            let l = norm(t);
            [line[i][0] - dist * t[1] / l, line[i][1] + dist * t[0] / l]
        })
        .collect()
}

struct Lane {
    points: Vec<Point>,
    /// Arc length of the overshoot at the start / end (0 when not extended).
    trim: [f64; 2],
}

#[derive(Clone, Copy)]
struct Crossing {
    seg: usize,
    t: f64,
    point: Point,
}

fn segment_cross(p: Point, p2: Point, q: Point, q2: Point) -> Option<(f64, f64)> {
    let r = [p2[0] - p[0], p2[1] - p[1]];
    let s = [q2[0] - q[0], q2[1] - q[1]];
    let den = r[0] * s[1] - r[1] * s[0];
    if den.abs() < 1e-12 {
        return None;
    }
    let qp = [q[0] - p[0], q[1] - p[1]];
    let t = (qp[0] * s[1] - qp[1] * s[0]) / den;
    let u = (qp[0] * r[1] - qp[1] * r[0]) / den;
    ((0.0..=1.0).contains(&t) && (0.0..=1.0).contains(&u)).then_some((t, u))
}

/// All pairwise crossings between segments of different lanes, bucketed on a coarse grid.
fn crossings(lanes: &[Lane]) -> Vec<Vec<Crossing>> {
    const CELL: f64 = 10.0;
    let mut grid: HashMap<(i64, i64), Vec<(usize, usize)>> = HashMap::new();
    for (l, lane) in lanes.iter().enumerate() {
        for (s, w) in lane.points.windows(2).enumerate() {
            let (x0, x1) = (w[0][0].min(w[1][0]), w[0][0].max(w[1][0]));
            let (y0, y1) = (w[0][1].min(w[1][1]), w[0][1].max(w[1][1]));
            for cx in (x0 / CELL).floor() as i64..=(x1 / CELL).floor() as i64 {
                for cy in (y0 / CELL).floor() as i64..=(y1 / CELL).floor() as i64 {
                    grid.entry((cx, cy)).or_default().push((l, s));
                }
            }
        }
    }
    let mut keys: Vec<_> = grid.keys().copied().collect();
    keys.sort_unstable();
    let mut seen = HashSet::new();
    let mut out = vec![Vec::new(); lanes.len()];
    for key in keys {
        let cell = &grid[&key];
        for (i, &(la, sa)) in cell.iter().enumerate() {
            for &(lb, sb) in &cell[i + 1..] {
                if la == lb || !seen.insert((la, sa, lb, sb)) {
                    continue;
                }
                let (pa, pb) = (&lanes[la].points, &lanes[lb].points);
                if let Some((t, u)) = segment_cross(pa[sa], pa[sa + 1], pb[sb], pb[sb + 1]) {
                    let point = lerp(pa[sa], pa[sa + 1], t);
                    out[la].push(Crossing { seg: sa, t, point });
                    out[lb].push(Crossing { seg: sb, t: u, point });
                }
            }
        }
    }
    out
}

/// Lane vertices and crossings in order along the lane, trimmed at the overshoots.
fn lane_sequence(lane: &Lane, mut cross: Vec<Crossing>) -> Vec<Point> {
    cross.sort_by(|a, b| a.seg.cmp(&b.seg).then(a.t.total_cmp(&b.t)));
    let pts = &lane.points;
    let mut cum = vec![0.0];
    for w in pts.windows(2) {
        cum.push(cum.last().unwrap() + norm([w[1][0] - w[0][0], w[1][1] - w[0][1]]));
    }
    let total = *cum.last().unwrap();
    // (arc length, point, is_crossing)
    let mut seq: Vec<(f64, Point, bool)> = Vec::new();
    let mut ci = 0;
    for (i, &p) in pts.iter().enumerate() {
        seq.push((cum[i], p, false));
        while ci < cross.len() && cross[ci].seg == i {
            let c = cross[ci];
            seq.push((cum[i] + c.t * (cum[i + 1] - cum[i]), c.point, true));
            ci += 1;
        }
    }
    seq.sort_by(|a, b| a.0.total_cmp(&b.0));
    let window = 2.0 * LANE_OFFSET_M + 1.0;
    let lo = if lane.trim[0] > 0.0 {
        seq.iter()
            .filter(|c| c.2 && c.0 <= lane.trim[0] + window)
            .map(|c| c.0)
            .fold(None, |m: Option<f64>, s| Some(m.map_or(s, |m| m.min(s))))
            .unwrap_or(lane.trim[0])
    } else {
        0.0
    };
    let hi = if lane.trim[1] > 0.0 {
        seq.iter()
            .filter(|c| c.2 && c.0 >= total - lane.trim[1] - window)
            .map(|c| c.0)
            .fold(None, |m: Option<f64>, s| Some(m.map_or(s, |m| m.max(s))))
            .unwrap_or(total - lane.trim[1])
    } else {
        total
    };
    seq.into_iter()
        .filter(|c| c.0 >= lo - 1e-9 && c.0 <= hi + 1e-9)
        .map(|c| c.1)
        .collect()
}

/// Builds a city; deterministic in `cfg`.
pub fn generate_city(cfg: &CityConfig) -> Result<City> {
    cfg.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let noise = Normal::new(0.0, NOISE_M).expect("valid normal");
    let n = ((cfg.size_m / cfg.block_m).round() as usize).max(2) + 1;
    let spacing = cfg.size_m / (n - 1) as f64;
    let amp = cfg.jitter * spacing;
    let mut grid = vec![vec![[0.0; 2]; n]; n];
    for (i, col) in grid.iter_mut().enumerate() {
        for (j, p) in col.iter_mut().enumerate() {
            let jx = if amp > 0.0 { rng.gen_range(-amp..=amp) } else { 0.0 };
            let jy = if amp > 0.0 { rng.gen_range(-amp..=amp) } else { 0.0 };
            *p = [i as f64 * spacing + jx, j as f64 * spacing + jy];
        }
    }
    // present[dir][i][j]: road segment from grid point (i, j) to its +x (dir 0) or +y (dir 1) neighbor
    let mut present = vec![vec![vec![false; n]; n]; 2];
    for dir in 0..2 {
        for i in 0..n {
            for j in 0..n {
                let inside = if dir == 0 { i + 1 < n } else { j + 1 < n };
                present[dir][i][j] = inside && !rng.gen_bool(cfg.drop_prob);
            }
        }
    }
    let mut roads_at = vec![vec![0usize; n]; n];
    for i in 0..n {
        for j in 0..n {
            if present[0][i][j] {
                roads_at[i][j] += 1;
                roads_at[i + 1][j] += 1;
            }
            if present[1][i][j] {
                roads_at[i][j] += 1;
                roads_at[i][j + 1] += 1;
            }
        }
    }

    let mut lanes: Vec<Lane> = Vec::new();
    for dir in 0..2 {
        for line in 0..n {
            let at = |k: usize| if dir == 0 { (k, line) } else { (line, k) };
            let mut k = 0;
            while k + 1 < n {
                let (i, j) = at(k);
                if !present[dir][i][j] {
                    k += 1;
                    continue;
                }
                let start = k;
                let mut center = vec![grid[i][j]];
                while k + 1 < n && {
                    let (i, j) = at(k);
                    present[dir][i][j]
                } {
                    let (i0, j0) = at(k);
                    let (i1, j1) = at(k + 1);
                    let (a, b) = (grid[i0][j0], grid[i1][j1]);
                    let sag = rng.gen_bool(cfg.curve_prob).then(|| {
                        let c = norm([b[0] - a[0], b[1] - a[1]]);
                        let s = rng.gen_range(0.08..0.2) * c;
                        if rng.gen_bool(0.5) {
                            s
                        } else {
                            -s
                        }
                    });
                    center.extend(sample_segment(a, b, sag, &mut rng, &noise));
                    k += 1;
                }
                let end = k;
                // extend into terminal intersections that other roads pass through
                let mut trim = [0.0, 0.0];
                let (si, sj) = at(start);
                if roads_at[si][sj] > 1 {
                    let (a, b) = (center[0], center[1]);
                    let d = [a[0] - b[0], a[1] - b[1]];
                    let l = norm(d);
                    center.insert(0, [a[0] + OVERSHOOT_M * d[0] / l, a[1] + OVERSHOOT_M * d[1] / l]);
                    trim[0] = OVERSHOOT_M;
                }
                let (ei, ej) = at(end);
                if roads_at[ei][ej] > 1 {
                    let m = center.len();
                    let (a, b) = (center[m - 1], center[m - 2]);
                    let d = [a[0] - b[0], a[1] - b[1]];
                    let l = norm(d);
                    center.push([a[0] + OVERSHOOT_M * d[0] / l, a[1] + OVERSHOOT_M * d[1] / l]);
                    trim[1] = OVERSHOOT_M;
                }
                for side in [LANE_OFFSET_M, -LANE_OFFSET_M] {
                    lanes.push(Lane {
                        points: offset(&center, side),
                        trim,
                    });
                }
            }
        }
    }

    let cross = crossings(&lanes);
    let mut points = PointMerger::new(MERGE_TOL_M);
    let mut edges = EdgeSet::default();
    for (lane, c) in lanes.iter().zip(cross) {
        let ids: Vec<usize> = lane_sequence(lane, c).into_iter().map(|p| points.insert(p)).collect();
        for w in ids.windows(2) {
            edges.add(w[0], w[1], false);
        }
    }

    let mut intersections = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if roads_at[i][j] >= 2 {
                intersections.push(Intersection {
                    position: grid[i][j],
                    roads: roads_at[i][j],
                    signalized: rng.gen_bool(cfg.light_prob),
                });
            }
        }
    }
    let nodes = points.points;
    let signals: Vec<Point> = intersections
        .iter()
        .filter(|s| s.signalized)
        .map(|s| s.position)
        .collect();
    let near = |p: Point| signals.iter().any(|&s| crate::map::dist(p, s) <= LIGHT_RADIUS_M);
    let lights = edges
        .edges
        .iter()
        .map(|&(a, b)| near(nodes[a]) && near(nodes[b]))
        .collect();
    let map = PlainGraph {
        fov_m: cfg.size_m,
        nodes,
        edges: edges.edges,
        traffic_light: lights,
    };
    validate(&map).into_result()?;
    Ok(City { map, intersections })
}
