//! The global graph generator applied directly to the full plain graph: every control
//! point is a node, there is no local decoder and no semantics.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::hdmapgen::{node_budget, GlobalConfig, GlobalModel, GlobalStep, GraphSeq, SampleMeta, TrainConfig, Trained};
use crate::map::{validate, Adjacency, EdgeSet, PlainGraph, PointMerger, MERGE_TOL_M};
use crate::nn::checkpoint::check_layout;
use crate::nn::{Adam, Checkpoint, Grads, ParamStore, Tape};
use crate::preprocess::{derive_seed, dfs_order, NormTransform};
use crate::train::{fit, EpochReport, LossParts, LossWeights, Objective};
use crate::{Error, Result};

pub const CHECKPOINT_KIND: &str = "plaingen";

const DFS_SALT: u64 = 0x91a1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlainConfig {
    pub global: GlobalConfig,
    pub weights: LossWeights,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlainGen {
    pub cfg: PlainConfig,
    pub global: GlobalModel,
    pub meta: SampleMeta,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlainSample {
    /// The generated map in meters.
    pub graph: PlainGraph,
    pub steps: Vec<GlobalStep>,
    pub degenerate: bool,
}

/// Generation-ordered view of a normalized plain graph.
pub fn plain_seq(g: &PlainGraph, seed: u64) -> GraphSeq {
    let adj = Adjacency::from_edges(g.nodes.len(), &g.edges);
    GraphSeq::from_parts(&g.nodes, &g.edges, &dfs_order(&adj, seed))
}

/// Turns a generated sequence into a plain graph, merging coincident nodes.
pub fn seq_to_plain(g: &GraphSeq, fov_m: f64) -> PlainGraph {
    let mut points = PointMerger::new(MERGE_TOL_M);
    let ids: Vec<usize> = g.coords.iter().map(|&p| points.insert(p)).collect();
    let mut edges = EdgeSet::default();
    for (s, t) in g.edges() {
        edges.add(ids[s], ids[t], false);
    }
    PlainGraph {
        fov_m,
        nodes: points.points,
        edges: edges.edges,
        traffic_light: edges.lights,
    }
}

impl PlainGen {
    pub fn init(cfg: PlainConfig, meta: SampleMeta, seed: u64) -> Result<(Self, ParamStore)> {
        cfg.weights.check()?;
        let mut store = ParamStore::new(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let global = GlobalModel::new(&mut store, &mut rng, "plain", cfg.global.clone())?;
        Ok((Self { cfg, global, meta }, store))
    }

    /// Generates one map of at most `max_nodes` nodes.
    pub fn sample(&self, store: &ParamStore, tau: f64, max_nodes: usize, rng: &mut ChaCha8Rng) -> Result<PlainSample> {
        if !(tau >= 0.0) {
            return Err(Error::Config(format!("temperature must be >= 0, got {tau}")));
        }
        if max_nodes == 0 {
            return Err(Error::Config("max_nodes must be >= 1".into()));
        }
        let (g, steps) = self.global.generate(store, max_nodes, tau, rng, |_, _, _| Ok(()))?;
        let norm = NormTransform { fov_m: self.meta.fov_m };
        let graph = norm.denormalize_plain(&seq_to_plain(&g, self.meta.fov_m));
        validate(&graph).into_result()?;
        Ok(PlainSample {
            degenerate: graph.edges.is_empty(),
            graph,
            steps,
        })
    }

    pub fn sample_indexed(&self, store: &ParamStore, tau: f64, seed: u64, i: usize) -> Result<PlainSample> {
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

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.kind != CHECKPOINT_KIND {
            return Err(Error::Checkpoint(format!("expected a {CHECKPOINT_KIND} checkpoint, got {}", ck.kind)));
        }
        let cfg: PlainConfig = serde_json::from_value(ck.config.clone())?;
        let meta: SampleMeta = serde_json::from_value(ck.meta.clone())?;
        let (model, fresh) = Self::init(cfg, meta, ck.params.seed)?;
        check_layout(&fresh, &ck.params)?;
        Ok(model)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<(Self, Checkpoint)> {
        let ck = Checkpoint::load(path)?;
        Ok((Self::from_checkpoint(&ck)?, ck))
    }
}

impl Objective for PlainGen {
    type Item = GraphSeq;

    fn batch_loss(
        &self,
        store: &ParamStore,
        batch: &[&GraphSeq],
        grad: bool,
        subsample: Option<u64>,
    ) -> Result<(LossParts, Option<Grads>)> {
        let mut tape = Tape::new(store);
        let mut parts = vec![LossParts::default(); batch.len()];
        let (loss, _, _) = self.global.loss(&mut tape, batch, &self.cfg.weights, &mut parts, subsample)?;
        let loss = loss.expect("non-empty batch");
        let mut out = LossParts::default();
        for p in &mut parts {
            p.total.count = 1.0;
            out.merge(p);
        }
        if !tape.scalar(loss).is_finite() {
            return Err(Error::NonFinite("training loss".into()));
        }
        Ok((out, grad.then(|| tape.backward(loss))))
    }
}

/// Normalized, generation-ordered plain graphs of the train and validation splits.
pub fn prepare(ds: &Dataset, seed: u64) -> Result<(Vec<GraphSeq>, Vec<GraphSeq>)> {
    if ds.patches.is_empty() {
        return Err(Error::Dataset("empty dataset".into()));
    }
    let norm = ds.norm();
    let seqs = |idx: &[usize]| -> Result<Vec<GraphSeq>> {
        let plain = ds.plain(idx)?;
        Ok(plain
            .iter()
            .zip(idx)
            .map(|(g, &i)| plain_seq(&norm.normalize_plain(g), derive_seed(seed ^ DFS_SALT, i as u64)))
            .collect())
    };
    Ok((seqs(&ds.split.train)?, seqs(&ds.split.val)?))
}

pub fn train(ds: &Dataset, cfg: &TrainConfig, on_epoch: impl FnMut(&EpochReport)) -> Result<Trained<PlainGen>> {
    cfg.check()?;
    let (train_items, val_items) = prepare(ds, cfg.seed)?;
    if train_items.is_empty() {
        return Err(Error::Dataset("empty training split".into()));
    }
    let max_count = train_items.iter().chain(&val_items).map(GraphSeq::len).max().unwrap_or(1);
    let pcfg = PlainConfig {
        global: cfg.global(node_budget(max_count)),
        weights: cfg.weights,
    };
    let meta = SampleMeta {
        fov_m: ds.fov_m,
        node_counts: train_items.iter().map(GraphSeq::len).collect(),
    };
    let (model, mut store) = PlainGen::init(pcfg, meta, cfg.seed)?;
    let fit_cfg = cfg.fit();
    let mut adam = Adam::new(fit_cfg.adam.clone(), &store);
    let tr: Vec<&GraphSeq> = train_items.iter().collect();
    let va: Vec<&GraphSeq> = val_items.iter().collect();
    let reports = fit(&model, &mut store, &mut adam, &tr, &va, &fit_cfg, on_epoch)?;
    Ok(Trained {
        model,
        store,
        adam,
        reports,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::grad_check;
    use crate::hdmapgen::Variant;

    fn model(variant: Variant) -> (PlainGen, ParamStore) {
        let cfg = PlainConfig {
            global: GlobalConfig {
                variant,
                hidden: 5,
                layers: 2,
                rounds: 2,
                k_mix: 2,
                kb_mix: 3,
                max_nodes: 12,
                max_steps: None,
            },
            weights: LossWeights::default(),
        };
        let meta = SampleMeta {
            fov_m: 50.0,
            node_counts: vec![4, 7],
        };
        PlainGen::init(cfg, meta, 4).unwrap()
    }

    fn square() -> GraphSeq {
        let g = PlainGraph::new(
            2.0,
            vec![[-0.5, -0.5], [0.5, -0.5], [0.5, 0.5], [-0.5, 0.5], [0.0, 0.9]],
            vec![(0, 1), (1, 2), (2, 3), (3, 0), (2, 4)],
        );
        plain_seq(&g, 1)
    }

    #[test]
    fn sequence_keeps_every_edge() {
        let s = square();
        assert_eq!(s.len(), 5);
        assert_eq!(s.edges().len(), 5);
        // DFS order: every node after the first links back into the prefix.
        assert!(s.rows.iter().skip(1).all(|r| r.iter().any(|&e| e)));
    }

    #[test]
    fn gradients_match_finite_differences() {
        for v in [Variant::CoordinateFirst, Variant::TopologyFirst] {
            let (m, store) = model(v);
            let s = square();
            let f = |p: &ParamStore| {
                let (parts, g) = m.batch_loss(p, &[&s], true, None)?;
                Ok((parts.report().total, g.unwrap()))
            };
            let r = grad_check(f, &store, 1e-5, 200, 2).unwrap();
            assert!(r.max_rel_err < 1e-4, "{v}: {r:?}");
        }
    }

    #[test]
    fn sampling_is_reproducible() {
        let (m, store) = model(Variant::TopologyFirst);
        let a = m.sample_indexed(&store, 0.3, 5, 0).unwrap();
        let b = m.sample_indexed(&store, 0.3, 5, 0).unwrap();
        assert_eq!(a, b);
        assert!(a.graph.nodes.len() <= 7);
    }

    #[test]
    fn coincident_nodes_merge() {
        let g = GraphSeq {
            coords: vec![[0.0, 0.0], [0.5, 0.0], [0.0, 0.0]],
            rows: vec![vec![], vec![true], vec![true, true]],
        };
        let p = seq_to_plain(&g, 2.0);
        assert_eq!(p.nodes.len(), 2);
        assert_eq!(p.edges, vec![(0, 1)]);
    }
}
