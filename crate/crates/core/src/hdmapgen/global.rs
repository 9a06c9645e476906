//! Autoregressive global-graph model: node states from padded adjacency rows and
//! coordinates, stacked attentive propagation, a Gaussian-mixture coordinate head and a
//! Bernoulli-mixture topology head.
//!
//! Teacher-forced training scores every step of a graph at once by laying out one
//! disjoint copy of the prefix graph per step (and per re-encode) in a single batch.

use std::rc::Rc;
use std::str::FromStr;

use ndarray::Array2;
use rand::seq::index::sample as sample_index;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::map::Point;
use crate::nn::mixture::{bernmix_loss, gmm_nll_loss};
use crate::nn::{BernMixParams, EdgeIndex, GatLayer, GmmParams2D, Mlp, ParamId, ParamStore, Tape, Var};
use crate::train::{LossParts, LossWeights};
use crate::{Error, Result};

/// Factorization of the per-step joint over the new node's coordinate and edges.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    CoordinateFirst,
    TopologyFirst,
    Independent,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::CoordinateFirst, Variant::TopologyFirst, Variant::Independent];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::CoordinateFirst => "coordinate_first",
            Variant::TopologyFirst => "topology_first",
            Variant::Independent => "independent",
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlobalConfig {
    pub variant: Variant,
    pub hidden: usize,
    pub layers: usize,
    /// Propagation rounds per layer (same weights each round).
    pub rounds: usize,
    pub k_mix: usize,
    pub kb_mix: usize,
    /// Width of the padded adjacency row in the initial node state.
    pub max_nodes: usize,
    /// Score at most this many steps per graph per training batch.
    pub max_steps: Option<usize>,
}

impl GlobalConfig {
    pub fn check(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.hidden == 0 || self.layers == 0 || self.k_mix == 0 || self.kb_mix == 0 {
            return bad("hidden, layers and mixture counts must be >= 1");
        }
        if self.rounds == 0 {
            return bad("rounds must be >= 1");
        }
        if self.max_nodes == 0 {
            return bad("max_nodes must be >= 1");
        }
        if self.max_steps == Some(0) {
            return bad("max_steps must be >= 1");
        }
        Ok(())
    }
}

/// A graph in generation order: `rows[t][s]` for `s < t` says whether node `t` links to
/// the earlier node `s`. Coordinates are normalized.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GraphSeq {
    pub coords: Vec<Point>,
    pub rows: Vec<Vec<bool>>,
}

impl GraphSeq {
    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn linked(&self, i: usize, j: usize) -> bool {
        match i.cmp(&j) {
            std::cmp::Ordering::Greater => self.rows[i][j],
            std::cmp::Ordering::Less => self.rows[j][i],
            std::cmp::Ordering::Equal => false,
        }
    }

    /// Edges `(s, t)` with `s < t`, ordered by `t` then `s`.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (t, row) in self.rows.iter().enumerate() {
            for (s, &e) in row.iter().enumerate() {
                if e {
                    out.push((s, t));
                }
            }
        }
        out
    }

    /// Builds from nodes and undirected edges, relabeled so that `order[k]` becomes node `k`.
    pub fn from_parts(coords: &[Point], edges: &[(usize, usize)], order: &[usize]) -> Self {
        let n = coords.len();
        let mut rank = vec![0; n];
        for (k, &v) in order.iter().enumerate() {
            rank[v] = k;
        }
        let mut rows: Vec<Vec<bool>> = (0..n).map(|t| vec![false; t]).collect();
        for &(a, b) in edges {
            let (x, y) = (rank[a], rank[b]);
            if x != y {
                let (s, t) = (x.min(y), x.max(y));
                rows[t][s] = true;
            }
        }
        Self {
            coords: order.iter().map(|&v| coords[v]).collect(),
            rows,
        }
    }
}

/// What the under-construction node's initial state carries.
#[derive(Clone, Debug, PartialEq)]
pub enum Inject {
    Nothing,
    Coord(Point),
    Edges(Vec<bool>),
}

/// Where one prefix copy landed in a batch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CopyRef {
    pub base: usize,
    pub t: usize,
}

impl CopyRef {
    pub fn new_row(&self) -> usize {
        self.base + self.t
    }

    pub fn row(&self, s: usize) -> usize {
        self.base + s
    }
}

/// Disjoint prefix copies laid out for one encoder pass.
#[derive(Default)]
pub struct Batch {
    width: usize,
    xl: Vec<f64>,
    xc: Vec<f64>,
    prefix: Vec<f64>,
    fresh: Vec<f64>,
    pairs: Vec<(usize, usize)>,
    rows: usize,
}

impl Batch {
    pub fn new(max_nodes: usize) -> Self {
        Self {
            width: max_nodes,
            ..Default::default()
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Adds nodes `0..t` of `g` plus an under-construction node `t`. The new node links
    /// to every earlier node (candidate edges) unless `inject` carries its actual edges.
    pub fn add_copy(&mut self, g: &GraphSeq, t: usize, inject: &Inject) -> Result<CopyRef> {
        if t >= self.width {
            return Err(Error::Shape(format!(
                "graph needs more than max_nodes = {} adjacency slots",
                self.width
            )));
        }
        let base = self.rows;
        for s in 0..t {
            for u in 0..self.width {
                self.xl.push(if u < t && g.linked(s, u) { 1.0 } else { 0.0 });
            }
            self.xc.extend(g.coords[s]);
            self.prefix.push(1.0);
            self.fresh.push(0.0);
            for u in 0..s {
                if g.rows[s][u] {
                    self.pairs.push((base + s, base + u));
                }
            }
        }
        let (row, coord) = match inject {
            Inject::Nothing => (None, [0.0, 0.0]),
            Inject::Coord(c) => (None, *c),
            Inject::Edges(l) => (Some(l), [0.0, 0.0]),
        };
        for u in 0..self.width {
            let on = row.is_some_and(|l| u < t && l[u]);
            self.xl.push(if on { 1.0 } else { 0.0 });
        }
        self.xc.extend(coord);
        self.prefix.push(0.0);
        self.fresh.push(1.0);
        for s in 0..t {
            if row.map_or(true, |l| l[s]) {
                self.pairs.push((base + t, base + s));
            }
        }
        self.rows += t + 1;
        Ok(CopyRef { base, t })
    }
}

fn col(v: &[f64]) -> Array2<f64> {
    Array2::from_shape_vec((v.len(), 1), v.to_vec()).expect("column")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlobalModel {
    pub cfg: GlobalConfig,
    pub w_l: ParamId,
    pub w_c: ParamId,
    pub b: ParamId,
    pub start: ParamId,
    pub layers: Vec<GatLayer>,
    pub coord_head: Mlp,
    pub topo_head: Mlp,
}

/// Outcome of one generation step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlobalStep {
    pub t: usize,
    pub coord: Point,
    pub edges: Vec<bool>,
    /// Negative log-likelihood of `coord` under the coordinate head.
    pub coord_nll: f64,
    /// Negative log-likelihood of `edges` under the topology head (0 for the first node).
    pub topo_nll: f64,
}

/// Per-step encodings kept for the local and semantic decoders.
pub struct StepStates {
    /// Final node states of the step's prefix copy; row `t` is the new node.
    pub states: Array2<f64>,
}

impl GlobalModel {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, cfg: GlobalConfig) -> Result<Self> {
        cfg.check()?;
        let h = cfg.hidden;
        Ok(Self {
            w_l: store.weight(&format!("{name}.w_l"), cfg.max_nodes, h, rng)?,
            w_c: store.weight(&format!("{name}.w_c"), 2, h, rng)?,
            b: store.zeros(&format!("{name}.b"), 1, h)?,
            start: store.weight(&format!("{name}.start"), 1, h, rng)?,
            layers: (0..cfg.layers)
                .map(|i| GatLayer::new(store, rng, &format!("{name}.gnn{i}"), h))
                .collect::<Result<_>>()?,
            coord_head: Mlp::new(store, rng, &format!("{name}.coord"), &[h, h, 5 * cfg.k_mix])?,
            topo_head: Mlp::new(store, rng, &format!("{name}.topo"), &[h, h, 2 * cfg.kb_mix])?,
            cfg,
        })
    }

    /// Initial states `E⁰ = X_L W_L + X_C W_C + P b + Q start`, where `P` flags prefix
    /// rows and `Q` the under-construction rows. Returns `E⁰` and `Q`.
    pub fn initial(&self, tape: &mut Tape, batch: &Batch) -> (Var, Var) {
        let n = batch.rows;
        let xl = tape.constant(Array2::from_shape_vec((n, batch.width), batch.xl.clone()).expect("xl"));
        let xc = tape.constant(Array2::from_shape_vec((n, 2), batch.xc.clone()).expect("xc"));
        let p = tape.constant(col(&batch.prefix));
        let q = tape.constant(col(&batch.fresh));
        let (wl, wc, b, st) = (tape.param(self.w_l), tape.param(self.w_c), tape.param(self.b), tape.param(self.start));
        let a = tape.matmul(xl, wl);
        let c = tape.matmul(xc, wc);
        let pb = tape.matmul(p, b);
        let qs = tape.matmul(q, st);
        let e = tape.add(a, c);
        let e = tape.add(e, pb);
        (tape.add(e, qs), q)
    }

    /// Node states for every row of `batch`.
    pub fn encode(&self, tape: &mut Tape, batch: &Batch) -> Result<Var> {
        let n = batch.rows;
        let (mut e, q) = self.initial(tape, batch);
        let edges = EdgeIndex::from_pairs(n, &batch.pairs);
        for layer in &self.layers {
            for _ in 0..self.cfg.rounds {
                e = layer.apply(tape, e, &edges, q)?;
            }
        }
        Ok(e)
    }

    pub fn coord_raw(&self, tape: &mut Tape, e: Var, rows: Vec<usize>) -> Result<Var> {
        let x = tape.gather(e, Rc::from(rows));
        self.coord_head.apply(tape, x)
    }

    /// Raw topology rows for `(new, earlier)` row pairs.
    pub fn topo_raw(&self, tape: &mut Tape, e: Var, new_rows: Vec<usize>, old_rows: Vec<usize>) -> Result<Var> {
        let a = tape.gather(e, Rc::from(new_rows));
        let b = tape.gather(e, Rc::from(old_rows));
        let d = tape.sub(a, b);
        self.topo_head.apply(tape, d)
    }

    fn steps_for(&self, n: usize, subsample: Option<u64>, graph: usize) -> Vec<usize> {
        match (self.cfg.max_steps, subsample) {
            (Some(m), Some(seed)) if n > m => {
                use rand::SeedableRng;
                let mut rng = ChaCha8Rng::seed_from_u64(crate::preprocess::derive_seed(seed, graph as u64));
                let mut v = sample_index(&mut rng, n, m).into_vec();
                v.sort_unstable();
                v
            }
            _ => (0..n).collect(),
        }
    }

    /// Teacher-forced global loss for a batch. Each graph contributes
    /// `(λ_coord · mean coord NLL + λ_topo · mean row NLL) / B`, both per step.
    /// Returns the loss node, the encoded states, and for every graph the final copy of
    /// each scored step.
    pub fn loss(
        &self,
        tape: &mut Tape,
        graphs: &[&GraphSeq],
        w: &LossWeights,
        parts: &mut [LossParts],
        subsample: Option<u64>,
    ) -> Result<(Option<Var>, Var, Vec<Vec<CopyRef>>)> {
        let mut batch = Batch::new(self.cfg.max_nodes);
        let mut coord_rows = Vec::new();
        let mut coord_targets = Vec::new();
        let mut coord_w = Vec::new();
        let mut coord_graph = Vec::new();
        let (mut tn, mut to) = (Vec::new(), Vec::new());
        let mut targets = Vec::new();
        let mut segments = Vec::new();
        let mut seg_w = Vec::new();
        let mut seg_graph = Vec::new();
        let mut finals = Vec::with_capacity(graphs.len());
        let bsz = graphs.len() as f64;
        for (gi, g) in graphs.iter().enumerate() {
            if g.is_empty() {
                return Err(Error::Dataset("empty graph in batch".into()));
            }
            let steps = self.steps_for(g.len(), subsample, gi);
            let mut fin = Vec::with_capacity(steps.len());
            for &t in &steps {
                let first = batch.add_copy(g, t, &Inject::Nothing)?;
                let second = match self.cfg.variant {
                    Variant::CoordinateFirst => Some(batch.add_copy(g, t, &Inject::Coord(g.coords[t]))?),
                    Variant::TopologyFirst => Some(batch.add_copy(g, t, &Inject::Edges(g.rows[t].clone()))?),
                    Variant::Independent => None,
                };
                let (coord_copy, topo_copy) = match (self.cfg.variant, second) {
                    (Variant::CoordinateFirst, Some(s)) => (first, s),
                    (Variant::TopologyFirst, Some(s)) => (s, first),
                    _ => (first, first),
                };
                coord_rows.push(coord_copy.new_row());
                coord_targets.push(g.coords[t]);
                coord_w.push(w.coord / steps.len() as f64 / bsz);
                coord_graph.push(gi);
                if t > 0 {
                    segments.push((tn.len(), t));
                    seg_w.push(w.topo / steps.len() as f64 / bsz);
                    seg_graph.push(gi);
                    for s in 0..t {
                        tn.push(topo_copy.new_row());
                        to.push(topo_copy.row(s));
                        targets.push(g.rows[t][s]);
                    }
                }
                fin.push(second.unwrap_or(first));
            }
            finals.push(fin);
        }
        let e = self.encode(tape, &batch)?;
        let raw = self.coord_raw(tape, e, coord_rows)?;
        let (coord_loss, nll) = gmm_nll_loss(tape, raw, &coord_targets, &coord_w);
        for (i, &gi) in coord_graph.iter().enumerate() {
            parts[gi].coord.add(nll[i], 1.0);
            parts[gi].total.sum += nll[i] * coord_w[i] * bsz;
        }
        let mut loss = coord_loss;
        if !segments.is_empty() {
            let raw = self.topo_raw(tape, e, tn, to)?;
            let (topo_loss, nll) = bernmix_loss(tape, raw, &segments, &targets, &seg_w);
            for (i, &gi) in seg_graph.iter().enumerate() {
                parts[gi].topo.add(nll[i], segments[i].1 as f64);
                parts[gi].total.sum += nll[i] * seg_w[i] * bsz;
            }
            loss = tape.add(loss, topo_loss);
        }
        Ok((Some(loss), e, finals))
    }

    /// Encodes one prefix copy and returns its states.
    pub fn encode_copy(&self, store: &ParamStore, g: &GraphSeq, t: usize, inject: &Inject) -> Result<Array2<f64>> {
        let mut batch = Batch::new(self.cfg.max_nodes);
        batch.add_copy(g, t, inject)?;
        let mut tape = Tape::new(store);
        let e = self.encode(&mut tape, &batch)?;
        Ok(tape.value(e).clone())
    }

    pub fn coord_params(&self, store: &ParamStore, states: &Array2<f64>, t: usize) -> Result<GmmParams2D> {
        let mut tape = Tape::new(store);
        let x = tape.constant(states.row(t).to_owned().insert_axis(ndarray::Axis(0)));
        let raw = self.coord_head.apply(&mut tape, x)?;
        Ok(GmmParams2D::from_raw(tape.value(raw).row(0).as_slice().expect("row")))
    }

    pub fn topo_params(&self, store: &ParamStore, states: &Array2<f64>, t: usize) -> Result<BernMixParams> {
        let mut tape = Tape::new(store);
        let h = states.ncols();
        let diff = Array2::from_shape_fn((t, h), |(s, c)| states[[t, c]] - states[[s, c]]);
        let x = tape.constant(diff);
        let raw = self.topo_head.apply(&mut tape, x)?;
        Ok(BernMixParams::from_raw(tape.value(raw)))
    }

    fn draw_coord(
        &self,
        store: &ParamStore,
        states: &Array2<f64>,
        t: usize,
        tau: f64,
        rng: &mut impl Rng,
    ) -> Result<(Point, f64)> {
        let p = self.coord_params(store, states, t)?;
        let c = p.sample(tau, rng);
        Ok((c, p.nll(c)))
    }

    fn draw_edges(&self, store: &ParamStore, states: &Array2<f64>, t: usize, rng: &mut impl Rng) -> Result<(Vec<bool>, f64)> {
        if t == 0 {
            return Ok((Vec::new(), 0.0));
        }
        let p = self.topo_params(store, states, t)?;
        let e = p.sample(rng);
        let nll = -p.logprob(&e);
        Ok((e, nll))
    }

    /// Generates node `t = g.len()` given the prefix `g`, following the variant's
    /// factorization. Returns the step and the final states of its prefix copy.
    pub fn step(
        &self,
        store: &ParamStore,
        g: &GraphSeq,
        tau: f64,
        rng: &mut impl Rng,
    ) -> Result<(GlobalStep, StepStates)> {
        let t = g.len();
        let mut work = g.clone();
        work.coords.push([0.0, 0.0]);
        work.rows.push(vec![false; t]);
        let first = self.encode_copy(store, &work, t, &Inject::Nothing)?;
        let (coord, coord_nll, edges, topo_nll, states) = match self.cfg.variant {
            Variant::Independent => {
                let (c, cn) = self.draw_coord(store, &first, t, tau, rng)?;
                let (e, en) = self.draw_edges(store, &first, t, rng)?;
                (c, cn, e, en, first)
            }
            Variant::CoordinateFirst => {
                let (c, cn) = self.draw_coord(store, &first, t, tau, rng)?;
                work.coords[t] = c;
                let second = self.encode_copy(store, &work, t, &Inject::Coord(c))?;
                let (e, en) = self.draw_edges(store, &second, t, rng)?;
                (c, cn, e, en, second)
            }
            Variant::TopologyFirst => {
                let (e, en) = self.draw_edges(store, &first, t, rng)?;
                let second = self.encode_copy(store, &work, t, &Inject::Edges(e.clone()))?;
                let (c, cn) = self.draw_coord(store, &second, t, tau, rng)?;
                (c, cn, e, en, second)
            }
        };
        Ok((
            GlobalStep {
                t,
                coord,
                edges,
                coord_nll,
                topo_nll,
            },
            StepStates { states },
        ))
    }

    /// Autoregressive generation: stops when a node after the first links to nothing
    /// (that node is dropped) or after `max_nodes` nodes.
    pub fn generate(
        &self,
        store: &ParamStore,
        max_nodes: usize,
        tau: f64,
        rng: &mut impl Rng,
        mut on_step: impl FnMut(&GraphSeq, &GlobalStep, &StepStates) -> Result<()>,
    ) -> Result<(GraphSeq, Vec<GlobalStep>)> {
        let cap = max_nodes.min(self.cfg.max_nodes);
        let mut g = GraphSeq::default();
        let mut steps = Vec::new();
        while g.len() < cap {
            let (step, states) = self.step(store, &g, tau, rng)?;
            if step.t > 0 && step.edges.iter().all(|&e| !e) {
                steps.push(step);
                break;
            }
            g.coords.push(step.coord);
            g.rows.push(step.edges.clone());
            on_step(&g, &step, &states)?;
            steps.push(step);
        }
        Ok((g, steps))
    }
}
