use serde::{Deserialize, Serialize};

use super::chains::chains;
use super::flatten::{EdgeSet, PointMerger, MERGE_TOL_M};
use super::{PlainGraph, Point};
use crate::{Error, Result};

/// State attached to each step, describing what the *next* point does.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum PenState {
    /// The next point starts a new lane.
    NewLane = 1,
    /// The next point continues the current lane.
    Continue = 2,
    /// The map is complete.
    End = 3,
}

impl PenState {
    pub fn index(self) -> usize {
        self as usize - 1
    }

    pub fn from_index(i: usize) -> Self {
        match i {
            0 => PenState::NewLane,
            1 => PenState::Continue,
            _ => PenState::End,
        }
    }
}

impl From<PenState> for u8 {
    fn from(q: PenState) -> u8 {
        q as u8
    }
}

impl TryFrom<u8> for PenState {
    type Error = String;
    fn try_from(v: u8) -> std::result::Result<Self, String> {
        match v {
            1 => Ok(PenState::NewLane),
            2 => Ok(PenState::Continue),
            3 => Ok(PenState::End),
            other => Err(format!("pen state {other} not in {{1,2,3}}")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeqStep {
    pub dx: f64,
    pub dy: f64,
    pub q: PenState,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceRep {
    pub origin: Point,
    /// Whether `origin` is itself a map point (the start of the first stroke).
    /// When false the first step is a pen-up jump onto the map.
    pub origin_is_point: bool,
    pub steps: Vec<SeqStep>,
}

impl SequenceRep {
    /// Steps up to and including the first `End`.
    pub fn is_well_formed(&self) -> bool {
        let ends = self.steps.iter().filter(|s| s.q == PenState::End).count();
        ends == 1 && self.steps.last().map(|s| s.q) == Some(PenState::End)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OriginRule {
    /// Start at the first stroke's first point.
    FirstPoint,
    /// Start at a fixed location (e.g. the patch corner) and jump onto the map.
    Fixed(Point),
}

fn cmp_point(a: Point, b: Point) -> std::cmp::Ordering {
    a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1]))
}

/// Flattens `g` into strokes, one per chain between key points, ordered by ascending
/// (x, y) of the stroke start, ties broken by lower node index. Intersection points are
/// revisited once per incident stroke.
pub fn to_sequence(g: &PlainGraph, origin: OriginRule) -> Result<SequenceRep> {
    if g.edges.is_empty() {
        return Err(Error::EmptyMap);
    }
    let mut strokes: Vec<Vec<usize>> = chains(g)
        .into_iter()
        .map(|c| {
            let mut nodes = c.nodes;
            let (s, e) = (nodes[0], *nodes.last().unwrap());
            let flip = cmp_point(g.nodes[e], g.nodes[s]).then(e.cmp(&s)).is_lt();
            if flip {
                nodes.reverse();
            }
            nodes
        })
        .collect();
    let deg = g.degrees();
    strokes.extend((0..g.nodes.len()).filter(|&v| deg[v] == 0).map(|v| vec![v]));
    strokes.sort_by(|a, b| {
        cmp_point(g.nodes[a[0]], g.nodes[b[0]])
            .then(a[0].cmp(&b[0]))
            .then(a.get(1).cmp(&b.get(1)))
    });

    let (start, origin_is_point) = match origin {
        OriginRule::FirstPoint => (g.nodes[strokes[0][0]], true),
        OriginRule::Fixed(p) => (p, false),
    };
    // (target point, is_jump)
    let mut moves: Vec<(Point, bool)> = Vec::new();
    for (i, stroke) in strokes.iter().enumerate() {
        if !(i == 0 && origin_is_point) {
            moves.push((g.nodes[stroke[0]], true));
        }
        for &v in &stroke[1..] {
            moves.push((g.nodes[v], false));
        }
    }
    let mut steps = Vec::with_capacity(moves.len());
    let mut pos = start;
    for (i, &(target, _)) in moves.iter().enumerate() {
        let q = match moves.get(i + 1) {
            None => PenState::End,
            Some(&(_, true)) => PenState::NewLane,
            Some(_) => PenState::Continue,
        };
        steps.push(SeqStep {
            dx: target[0] - pos[0],
            dy: target[1] - pos[1],
            q,
        });
        pos = target;
    }
    Ok(SequenceRep {
        origin: start,
        origin_is_point,
        steps,
    })
}

/// Rebuilds a plain graph by cumulative summation. Points within [`MERGE_TOL_M`] are one
/// node; a step following a `NewLane` state is a pen-up jump. Anything after the first
/// `End` is ignored.
pub fn from_sequence(seq: &SequenceRep, fov_m: f64) -> PlainGraph {
    let mut points = PointMerger::new(MERGE_TOL_M);
    let mut edges = EdgeSet::default();
    let mut pos = seq.origin;
    let mut prev = seq.origin_is_point.then(|| points.insert(pos));
    let mut pen_down = seq.origin_is_point;
    for step in &seq.steps {
        pos = [pos[0] + step.dx, pos[1] + step.dy];
        let id = points.insert(pos);
        if let (true, Some(p)) = (pen_down, prev) {
            edges.add(p, id, false);
        }
        prev = Some(id);
        match step.q {
            PenState::End => break,
            PenState::NewLane => pen_down = false,
            PenState::Continue => pen_down = true,
        }
    }
    PlainGraph {
        fov_m,
        nodes: points.points,
        edges: edges.edges,
        traffic_light: edges.lights,
    }
}
