//! Hierarchical generator: the global key-point graph is generated node by node, then
//! every generated edge gets its local path and traffic-light flag in one decoder pass.

pub mod global;

use std::collections::BTreeMap;
use std::path::Path;
use std::rc::Rc;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use global::{GlobalConfig, GlobalModel, GlobalStep, GraphSeq, Inject, Variant};

use crate::dataset::Dataset;
use crate::map::{validate, Adjacency, EdgeKey, HierGraph, LocalPath, Point};
use crate::nn::mixture::{bce_logits_loss, logistic};
use crate::nn::{Adam, AdamConfig, Checkpoint, Grads, Mlp, ParamStore, Tape, Var};
use crate::preprocess::{derive_seed, NormTransform};
use crate::train::{fit, EpochReport, FitConfig, LossParts, LossWeights, Objective};
use crate::{Error, Result};

pub const CHECKPOINT_KIND: &str = "hdmapgen";

/// Architecture and optimization settings shared by the graph generators.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub variant: Variant,
    pub layers: usize,
    pub rounds: usize,
    pub hidden: usize,
    pub k_mix: usize,
    pub kb_mix: usize,
    /// Teacher-forced steps scored per graph per batch; `None` scores all of them.
    pub max_steps: Option<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub clip: Option<f64>,
    pub seed: u64,
    pub weights: LossWeights,
    /// Stop early once the training loss has dropped by this fraction of epoch 1's.
    pub stop_at_reduction: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            variant: Variant::CoordinateFirst,
            layers: 7,
            rounds: 1,
            hidden: 128,
            k_mix: 20,
            kb_mix: 20,
            max_steps: None,
            epochs: 20,
            batch_size: 8,
            lr: 1e-4,
            clip: Some(5.0),
            seed: 0,
            weights: LossWeights::default(),
            stop_at_reduction: None,
        }
    }
}

impl TrainConfig {
    pub fn check(&self) -> Result<()> {
        self.weights.check()?;
        self.global(1).check()?;
        self.fit().check()
    }

    pub fn global(&self, max_nodes: usize) -> GlobalConfig {
        GlobalConfig {
            variant: self.variant,
            hidden: self.hidden,
            layers: self.layers,
            rounds: self.rounds,
            k_mix: self.k_mix,
            kb_mix: self.kb_mix,
            max_nodes,
            max_steps: self.max_steps,
        }
    }

    pub fn fit(&self) -> FitConfig {
        FitConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            adam: AdamConfig {
                lr: self.lr,
                clip: self.clip,
                ..AdamConfig::default()
            },
            seed: derive_seed(self.seed, 1),
            stop_at_reduction: self.stop_at_reduction,
        }
    }
}

/// Node budget for a corpus: its largest graph plus 25%.
pub fn node_budget(max_count: usize) -> usize {
    (max_count as f64 * 1.25).ceil().max(1.0) as usize
}

/// What sampling needs besides the weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub fov_m: f64,
    /// Node counts of the training graphs; the sampler's cap is drawn from these.
    pub node_counts: Vec<usize>,
}

impl SampleMeta {
    pub fn draw_max_nodes(&self, rng: &mut impl Rng) -> usize {
        if self.node_counts.is_empty() {
            return 1;
        }
        self.node_counts[rng.gen_range(0..self.node_counts.len())].max(1)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub global: GlobalConfig,
    pub w: usize,
    pub weights: LossWeights,
}

/// Local paths and flags decoded for one edge.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalDecodeOut {
    /// `W` interior points from the earlier endpoint towards the later one (normalized).
    pub coords: Vec<Point>,
    pub mask: Vec<f64>,
    pub light: f64,
}

impl LocalDecodeOut {
    /// Leading slots with probability at least 0.5; the first failing slot ends the path.
    pub fn valid_len(&self) -> usize {
        prefix_len(&self.mask)
    }

    pub fn path(&self) -> LocalPath {
        LocalPath::from_points(&self.coords[..self.valid_len()], self.coords.len())
    }
}

pub fn prefix_len(probs: &[f64]) -> usize {
    probs.iter().take_while(|&&p| p >= 0.5).count()
}

/// Teacher targets for one edge `(s, t)`, `s < t` in generation order.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeTarget {
    pub s: usize,
    pub path: Vec<Point>,
    pub light: bool,
}

/// A normalized patch laid out for teacher forcing.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainItem {
    pub seq: GraphSeq,
    /// `edges[t]`: edges from node `t` back to earlier nodes.
    pub edges: Vec<Vec<EdgeTarget>>,
}

impl TrainItem {
    pub fn from_hier(h: &HierGraph) -> Result<Self> {
        let n = h.node_count();
        if n == 0 {
            return Err(Error::EmptyMap);
        }
        let pairs: Vec<(usize, usize)> = h.global_adj.edges();
        let seq = GraphSeq::from_parts(&h.global_nodes, &pairs, &h.order);
        let rank = h.ranks();
        let mut edges: Vec<Vec<EdgeTarget>> = vec![Vec::new(); n];
        for e in h.edges() {
            let (lo, hi) = h.oriented(e);
            let path = h.local_paths.get(&e).ok_or_else(|| Error::Dataset(format!("edge {e} has no local path")))?;
            if path.coords.len() != h.w {
                return Err(Error::Dataset(format!("edge {e}: local width {} != {}", path.coords.len(), h.w)));
            }
            edges[rank[hi]].push(EdgeTarget {
                s: rank[lo],
                path: path.valid_points(),
                light: h.semantics.get(&e).copied().unwrap_or(false),
            });
        }
        for row in &mut edges {
            row.sort_by_key(|e| e.s);
        }
        Ok(Self { seq, edges })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HdMapGen {
    pub cfg: ModelConfig,
    pub global: GlobalModel,
    pub local: Mlp,
    pub sem: Mlp,
    pub meta: SampleMeta,
}

fn edge_input(states: &Array2<f64>, t: usize, s: usize, ct: Point, cs: Point) -> Vec<f64> {
    let mut v: Vec<f64> = states.row(t).to_vec();
    v.extend(states.row(s).iter());
    v.extend([ct[0], ct[1], cs[0], cs[1]]);
    v
}

/// Slot `j` of a local path expressed in the frame of the chord `C_s → C_t`.
fn place(u: f64, v: f64, ct: Point, cs: Point) -> Point {
    let d = [ct[0] - cs[0], ct[1] - cs[1]];
    [cs[0] + u * d[0] - v * d[1], cs[1] + u * d[1] + v * d[0]]
}

fn bce(logit: f64, y: bool) -> f64 {
    logit.max(0.0) - if y { logit } else { 0.0 } + (-logit.abs()).exp().ln_1p()
}

/// Squared error over valid slots plus mask BCE over all slots. `raw` rows are
/// `[u × W, v × W, mask logits × W]`. Returns the loss and per-row (squared error, BCE) sums.
fn local_loss(
    tape: &mut Tape,
    raw: Var,
    chords: &[(Point, Point)],
    targets: &[&[Point]],
    w_local: &[f64],
    w_mask: &[f64],
) -> (Var, Vec<(f64, f64)>) {
    let r = tape.value(raw);
    let (rows, width) = r.dim();
    let w = width / 3;
    let mut grad = Array2::zeros((rows, width));
    let mut total = 0.0;
    let mut each = Vec::with_capacity(rows);
    for i in 0..rows {
        let (ct, cs) = chords[i];
        let d = [ct[0] - cs[0], ct[1] - cs[1]];
        let p = [-d[1], d[0]];
        let (mut se, mut bc) = (0.0, 0.0);
        for j in 0..w {
            let valid = j < targets[i].len();
            if valid {
                let q = place(r[[i, j]], r[[i, w + j]], ct, cs);
                let err = [q[0] - targets[i][j][0], q[1] - targets[i][j][1]];
                se += err[0] * err[0] + err[1] * err[1];
                grad[[i, j]] = 2.0 * w_local[i] * (err[0] * d[0] + err[1] * d[1]);
                grad[[i, w + j]] = 2.0 * w_local[i] * (err[0] * p[0] + err[1] * p[1]);
            }
            let m = r[[i, 2 * w + j]];
            bc += bce(m, valid);
            grad[[i, 2 * w + j]] = w_mask[i] * (logistic(m) - if valid { 1.0 } else { 0.0 });
        }
        total += w_local[i] * se + w_mask[i] * bc;
        each.push((se, bc));
    }
    (tape.fused(total, vec![(raw, grad)]), each)
}

/// Result of one sampling run.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    /// The generated map in meters.
    pub graph: HierGraph,
    pub steps: Vec<GlobalStep>,
    /// A single node and no edges.
    pub degenerate: bool,
}

impl HdMapGen {
    /// Builds a freshly initialized model and its parameters.
    pub fn init(cfg: ModelConfig, meta: SampleMeta, seed: u64) -> Result<(Self, ParamStore)> {
        let mut store = ParamStore::new(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = Self::build(&mut store, &mut rng, cfg, meta)?;
        Ok((model, store))
    }

    fn build(store: &mut ParamStore, rng: &mut ChaCha8Rng, cfg: ModelConfig, meta: SampleMeta) -> Result<Self> {
        if cfg.w == 0 {
            return Err(Error::Config("W must be >= 1".into()));
        }
        cfg.weights.check()?;
        let h = cfg.global.hidden;
        let global = GlobalModel::new(store, rng, "global", cfg.global.clone())?;
        let local = Mlp::new(store, rng, "local", &[2 * h + 4, h, 3 * cfg.w])?;
        let sem = Mlp::new(store, rng, "sem", &[2 * h + 4, h, 1])?;
        Ok(Self {
            cfg,
            global,
            local,
            sem,
            meta,
        })
    }

    pub fn w(&self) -> usize {
        self.cfg.w
    }

    /// Node states of the prefix `g` with node `t = g.len()` under construction.
    pub fn encode_context(&self, store: &ParamStore, g: &GraphSeq) -> Result<Array2<f64>> {
        let t = g.len();
        let mut work = g.clone();
        work.coords.push([0.0, 0.0]);
        work.rows.push(vec![false; t]);
        self.global.encode_copy(store, &work, t, &Inject::Nothing)
    }

    pub fn decode_local(
        &self,
        store: &ParamStore,
        states: &Array2<f64>,
        t: usize,
        s: usize,
        ct: Point,
        cs: Point,
    ) -> Result<LocalDecodeOut> {
        let x = Array2::from_shape_vec((1, 2 * states.ncols() + 4), edge_input(states, t, s, ct, cs)).expect("row");
        let raw = crate::nn::mlp_apply(store, &self.local, &x)?;
        let w = self.cfg.w;
        let light = crate::nn::mlp_apply(store, &self.sem, &x)?[[0, 0]];
        Ok(LocalDecodeOut {
            coords: (0..w).map(|j| place(raw[[0, j]], raw[[0, w + j]], ct, cs)).collect(),
            mask: (0..w).map(|j| logistic(raw[[0, 2 * w + j]])).collect(),
            light: logistic(light),
        })
    }

    /// Probability that edge `(s, t)` is signal controlled.
    pub fn decode_semantic(
        &self,
        store: &ParamStore,
        states: &Array2<f64>,
        t: usize,
        s: usize,
        ct: Point,
        cs: Point,
    ) -> Result<f64> {
        let x = Array2::from_shape_vec((1, 2 * states.ncols() + 4), edge_input(states, t, s, ct, cs)).expect("row");
        Ok(logistic(crate::nn::mlp_apply(store, &self.sem, &x)?[[0, 0]]))
    }

    /// Generates one map. `max_nodes` caps the global graph.
    pub fn sample(&self, store: &ParamStore, tau: f64, max_nodes: usize, rng: &mut ChaCha8Rng) -> Result<Sample> {
        if !(tau >= 0.0) {
            return Err(Error::Config(format!("temperature must be >= 0, got {tau}")));
        }
        if max_nodes == 0 {
            return Err(Error::Config("max_nodes must be >= 1".into()));
        }
        let w = self.cfg.w;
        let mut paths = BTreeMap::new();
        let mut lights = BTreeMap::new();
        let mut decode_rng = ChaCha8Rng::seed_from_u64(rng.gen());
        let (g, steps) = self.global.generate(store, max_nodes, tau, rng, |g, step, st| {
            let t = step.t;
            for (s, _) in step.edges.iter().enumerate().filter(|(_, &e)| e) {
                let out = self.decode_local(store, &st.states, t, s, g.coords[t], g.coords[s])?;
                paths.insert(EdgeKey::new(s, t), out.path());
                lights.insert(EdgeKey::new(s, t), decode_rng.gen::<f64>() < out.light);
            }
            Ok(())
        })?;
        let n = g.len();
        let mut adj = Adjacency::new(n);
        for (s, t) in g.edges() {
            adj.connect(s, t);
        }
        let norm = HierGraph {
            fov_m: self.meta.fov_m,
            global_nodes: g.coords.clone(),
            global_adj: adj,
            local_paths: paths,
            semantics: lights,
            w,
            order: (0..n).collect(),
        };
        let graph = NormTransform { fov_m: self.meta.fov_m }.denormalize_hier(&norm);
        validate(&graph).into_result()?;
        Ok(Sample {
            degenerate: n <= 1 && graph.global_adj.edge_count() == 0,
            graph,
            steps,
        })
    }

    /// Sample `i` of a seeded batch; the node cap comes from the training size distribution.
    pub fn sample_indexed(&self, store: &ParamStore, tau: f64, seed: u64, i: usize) -> Result<Sample> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, i as u64));
        let cap = self.meta.draw_max_nodes(&mut rng);
        self.sample(store, tau, cap, &mut rng)
    }

    pub fn checkpoint(&self, store: &ParamStore, adam: Option<&Adam>) -> Result<Checkpoint> {
        Ok(Checkpoint {
            kind: CHECKPOINT_KIND.into(),
            params: store.clone(),
            adam: adam.cloned(),
            rng: None,
            config: serde_json::to_value(&self.cfg)?,
            meta: serde_json::to_value(&self.meta)?,
        })
    }

    /// Rebuilds the model described by a checkpoint and checks its tensors against it.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.kind != CHECKPOINT_KIND {
            return Err(Error::Checkpoint(format!("expected a {CHECKPOINT_KIND} checkpoint, got {}", ck.kind)));
        }
        let cfg: ModelConfig = serde_json::from_value(ck.config.clone())?;
        let meta: SampleMeta = serde_json::from_value(ck.meta.clone())?;
        let (model, fresh) = Self::init(cfg, meta, ck.params.seed)?;
        crate::nn::checkpoint::check_layout(&fresh, &ck.params)?;
        Ok(model)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<(Self, Checkpoint)> {
        let ck = Checkpoint::load(path)?;
        Ok((Self::from_checkpoint(&ck)?, ck))
    }
}

impl Objective for HdMapGen {
    type Item = TrainItem;

    fn batch_loss(
        &self,
        store: &ParamStore,
        batch: &[&TrainItem],
        grad: bool,
        subsample: Option<u64>,
    ) -> Result<(LossParts, Option<Grads>)> {
        let mut tape = Tape::new(store);
        let mut parts = vec![LossParts::default(); batch.len()];
        let seqs: Vec<&GraphSeq> = batch.iter().map(|b| &b.seq).collect();
        let wts = &self.cfg.weights;
        let (loss, e, finals) = self.global.loss(&mut tape, &seqs, wts, &mut parts, subsample)?;
        let mut loss = loss.expect("non-empty batch");
        let bsz = batch.len() as f64;

        let (mut rt, mut rs) = (Vec::new(), Vec::new());
        let mut chords = Vec::new();
        let mut targets: Vec<&[Point]> = Vec::new();
        let mut lights = Vec::new();
        let mut owner = Vec::new();
        for (gi, (item, copies)) in batch.iter().zip(&finals).enumerate() {
            for c in copies {
                for et in &item.edges[c.t] {
                    rt.push(c.row(c.t));
                    rs.push(c.row(et.s));
                    chords.push((item.seq.coords[c.t], item.seq.coords[et.s]));
                    targets.push(&et.path);
                    lights.push(et.light);
                    owner.push(gi);
                }
            }
        }
        if !rt.is_empty() {
            let w = self.cfg.w as f64;
            let mut n_points = vec![0usize; batch.len()];
            let mut n_edges = vec![0usize; batch.len()];
            for (i, &gi) in owner.iter().enumerate() {
                n_points[gi] += targets[i].len();
                n_edges[gi] += 1;
            }
            let w_local: Vec<f64> = owner
                .iter()
                .map(|&gi| if n_points[gi] > 0 { wts.local / n_points[gi] as f64 / bsz } else { 0.0 })
                .collect();
            let w_mask: Vec<f64> = owner.iter().map(|&gi| wts.mask / (n_edges[gi] as f64 * w) / bsz).collect();
            let w_sem: Vec<f64> = owner.iter().map(|&gi| wts.sem / n_edges[gi] as f64 / bsz).collect();

            let et = tape.gather(e, Rc::from(rt));
            let es = tape.gather(e, Rc::from(rs));
            let ctx = Array2::from_shape_fn((chords.len(), 4), |(i, k)| match k {
                0 => chords[i].0[0],
                1 => chords[i].0[1],
                2 => chords[i].1[0],
                _ => chords[i].1[1],
            });
            let ctx = tape.constant(ctx);
            let x = tape.concat_cols(&[et, es, ctx]);
            let raw = self.local.apply(&mut tape, x)?;
            let (l_local, each) = local_loss(&mut tape, raw, &chords, &targets, &w_local, &w_mask);
            let logit = self.sem.apply(&mut tape, x)?;
            let (l_sem, sem_each) = bce_logits_loss(&mut tape, logit, &lights, &w_sem);
            for (i, &gi) in owner.iter().enumerate() {
                let p = &mut parts[gi];
                p.local.add(each[i].0, targets[i].len() as f64);
                p.mask.add(each[i].1, w);
                p.sem.add(sem_each[i], 1.0);
                p.total.sum += (w_local[i] * each[i].0 + w_mask[i] * each[i].1 + w_sem[i] * sem_each[i]) * bsz;
            }
            loss = tape.add(loss, l_local);
            loss = tape.add(loss, l_sem);
        }
        let mut out = LossParts::default();
        for p in &mut parts {
            p.total.count = 1.0;
            out.merge(p);
        }
        let total = tape.scalar(loss);
        if !total.is_finite() {
            return Err(Error::NonFinite("training loss".into()));
        }
        let grads = grad.then(|| tape.backward(loss));
        Ok((out, grads))
    }
}

/// A trained model with its parameters, optimizer state and per-epoch reports.
pub struct Trained<M> {
    pub model: M,
    pub store: ParamStore,
    pub adam: Adam,
    pub reports: Vec<EpochReport>,
}

/// Normalized teacher-forcing items of a dataset's train and validation splits.
pub fn prepare(ds: &Dataset) -> Result<(Vec<TrainItem>, Vec<TrainItem>)> {
    if ds.patches.is_empty() {
        return Err(Error::Dataset("empty dataset".into()));
    }
    if let Some(h) = ds.patches.iter().find(|h| h.w != ds.w) {
        return Err(Error::Dataset(format!("inconsistent W: patch has {}, dataset has {}", h.w, ds.w)));
    }
    let norm = ds.norm();
    let item = |h: &HierGraph| TrainItem::from_hier(&norm.normalize_hier(h));
    let train = ds.split.train.iter().map(|&i| item(&ds.patches[i])).collect::<Result<_>>()?;
    let val = ds.split.val.iter().map(|&i| item(&ds.patches[i])).collect::<Result<_>>()?;
    Ok((train, val))
}

pub fn train(ds: &Dataset, cfg: &TrainConfig, on_epoch: impl FnMut(&EpochReport)) -> Result<Trained<HdMapGen>> {
    cfg.check()?;
    let (train_items, val_items) = prepare(ds)?;
    if train_items.is_empty() {
        return Err(Error::Dataset("empty training split".into()));
    }
    let max_count = ds.patches.iter().map(HierGraph::node_count).max().unwrap_or(1);
    let model_cfg = ModelConfig {
        global: cfg.global(node_budget(max_count)),
        w: ds.w,
        weights: cfg.weights,
    };
    let meta = SampleMeta {
        fov_m: ds.fov_m,
        node_counts: train_items.iter().map(|t| t.seq.len()).collect(),
    };
    let (model, mut store) = HdMapGen::init(model_cfg, meta, cfg.seed)?;
    let fit_cfg = cfg.fit();
    let mut adam = Adam::new(fit_cfg.adam.clone(), &store);
    let tr: Vec<&TrainItem> = train_items.iter().collect();
    let va: Vec<&TrainItem> = val_items.iter().collect();
    let reports = fit(&model, &mut store, &mut adam, &tr, &va, &fit_cfg, on_epoch)?;
    Ok(Trained {
        model,
        store,
        adam,
        reports,
    })
}
