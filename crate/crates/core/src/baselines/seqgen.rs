//! Recurrent stroke-sequence generator: a stack of gated cells reads the previous offset
//! and pen state and emits a 2D Gaussian mixture over the next offset and a 3-way pen
//! distribution.

use std::path::Path;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::hdmapgen::Trained;
use crate::map::{from_sequence, to_sequence, validate, OriginRule, PenState, PlainGraph, SeqStep, SequenceRep};
use crate::nn::checkpoint::check_layout;
use crate::nn::mixture::{cross_entropy_loss, gmm_nll_loss, sample_categorical};
use crate::nn::{gru_step, Adam, AdamConfig, Checkpoint, GmmParams2D, Grads, Gru, Linear, ParamStore, Tape, Var};
use crate::preprocess::{derive_seed, NormTransform};
use crate::train::{fit, EpochReport, FitConfig, LossParts, LossWeights, Objective};
use crate::{Error, Result};

pub const CHECKPOINT_KIND: &str = "seqgen";

/// Every sequence starts from the lower-left patch corner (normalized units).
pub const ORIGIN: [f64; 2] = [-1.0, -1.0];

const INPUT: usize = 5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SeqTrainConfig {
    pub hidden: usize,
    pub layers: usize,
    pub k_mix: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub clip: Option<f64>,
    pub seed: u64,
    /// `coord` weighs the offset NLL and `topo` the pen-state cross-entropy.
    pub weights: LossWeights,
    pub stop_at_reduction: Option<f64>,
}

impl Default for SeqTrainConfig {
    fn default() -> Self {
        Self {
            hidden: 256,
            layers: 2,
            k_mix: 20,
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

impl SeqTrainConfig {
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

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeqModelConfig {
    pub hidden: usize,
    pub layers: usize,
    pub k_mix: usize,
    pub weights: LossWeights,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeqMeta {
    pub fov_m: f64,
    /// Sampling stops here if no end state has been drawn.
    pub max_len: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeqGen {
    pub cfg: SeqModelConfig,
    pub cells: Vec<Gru>,
    pub offset_head: Linear,
    pub pen_head: Linear,
    pub meta: SeqMeta,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SeqSample {
    /// Normalized sequence as generated.
    pub seq: SequenceRep,
    /// The reconstructed map in meters.
    pub graph: PlainGraph,
    /// No end state before `max_len`; the sequence was cut there.
    pub truncated: bool,
    /// The sequence ended on its first step, leaving no lanes.
    pub empty: bool,
}

/// Normalized stroke sequence of a plain graph given in meters.
pub fn map_sequence(g: &PlainGraph, norm: &NormTransform) -> Result<SequenceRep> {
    to_sequence(&norm.normalize_plain(g), OriginRule::Fixed(ORIGIN))
}

fn input_row(prev: Option<&SeqStep>) -> [f64; INPUT] {
    match prev {
        None => [0.0, 0.0, 1.0, 0.0, 0.0],
        Some(s) => {
            let mut r = [s.dx, s.dy, 0.0, 0.0, 0.0];
            r[2 + s.q.index()] = 1.0;
            r
        }
    }
}

impl SeqGen {
    pub fn init(cfg: SeqModelConfig, meta: SeqMeta, seed: u64) -> Result<(Self, ParamStore)> {
        if cfg.layers == 0 || cfg.hidden == 0 || cfg.k_mix == 0 {
            return Err(Error::Config("seqgen needs layers, hidden and k_mix >= 1".into()));
        }
        cfg.weights.check()?;
        let mut store = ParamStore::new(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cells = (0..cfg.layers)
            .map(|i| {
                let input = if i == 0 { INPUT } else { cfg.hidden };
                Gru::new(&mut store, &mut rng, &format!("seq.cell{i}"), input, cfg.hidden)
            })
            .collect::<Result<_>>()?;
        let offset_head = Linear::new(&mut store, &mut rng, "seq.offset", cfg.hidden, 5 * cfg.k_mix)?;
        let pen_head = Linear::new(&mut store, &mut rng, "seq.pen", cfg.hidden, 3)?;
        Ok((
            Self {
                cfg,
                cells,
                offset_head,
                pen_head,
                meta,
            },
            store,
        ))
    }

    fn zero_state(&self, rows: usize) -> Vec<Array2<f64>> {
        vec![Array2::zeros((rows, self.cfg.hidden)); self.cells.len()]
    }

    /// One recurrent step on plain arrays; returns the raw offset and pen rows.
    fn advance(&self, store: &ParamStore, h: &mut [Array2<f64>], x: &[f64; INPUT]) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut inp = Array2::from_shape_vec((1, INPUT), x.to_vec()).expect("row");
        for (cell, state) in self.cells.iter().zip(h.iter_mut()) {
            *state = gru_step(store, cell, state, &inp)?;
            inp = state.clone();
        }
        let mut tape = Tape::new(store);
        let top = tape.constant(inp);
        let off = self.offset_head.apply(&mut tape, top)?;
        let pen = self.pen_head.apply(&mut tape, top)?;
        Ok((tape.value(off).row(0).to_vec(), tape.value(pen).row(0).to_vec()))
    }

    /// Samples one sequence and rebuilds its map.
    pub fn sample(&self, store: &ParamStore, tau: f64, rng: &mut ChaCha8Rng) -> Result<SeqSample> {
        if !(tau >= 0.0) {
            return Err(Error::Config(format!("temperature must be >= 0, got {tau}")));
        }
        let mut h = self.zero_state(1);
        let mut steps: Vec<SeqStep> = Vec::new();
        let mut truncated = true;
        while steps.len() < self.meta.max_len {
            let (off, pen) = self.advance(store, &mut h, &input_row(steps.last()))?;
            let d = GmmParams2D::from_raw(&off).sample(tau, rng);
            let q = PenState::from_index(sample_categorical(&pen, tau, rng));
            steps.push(SeqStep { dx: d[0], dy: d[1], q });
            if q == PenState::End {
                truncated = false;
                break;
            }
        }
        let empty = steps.len() == 1 && !truncated;
        let seq = SequenceRep {
            origin: ORIGIN,
            origin_is_point: false,
            steps,
        };
        let norm = NormTransform { fov_m: self.meta.fov_m };
        let graph = norm.denormalize_plain(&from_sequence(&seq, self.meta.fov_m));
        validate(&graph).into_result()?;
        Ok(SeqSample {
            seq,
            graph,
            truncated,
            empty,
        })
    }

    pub fn sample_indexed(&self, store: &ParamStore, tau: f64, seed: u64, i: usize) -> Result<SeqSample> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, i as u64));
        self.sample(store, tau, &mut rng)
    }

    /// Feeds the true prefix at every step and keeps the most likely offset and pen state.
    pub fn teacher_forced_argmax(&self, store: &ParamStore, seq: &SequenceRep) -> Result<SequenceRep> {
        let mut h = self.zero_state(1);
        let mut out = Vec::with_capacity(seq.steps.len());
        for i in 0..seq.steps.len() {
            let prev = i.checked_sub(1).map(|j| &seq.steps[j]);
            let (off, pen) = self.advance(store, &mut h, &input_row(prev))?;
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let d = GmmParams2D::from_raw(&off).sample(0.0, &mut rng);
            let q = PenState::from_index(sample_categorical(&pen, 0.0, &mut rng));
            out.push(SeqStep { dx: d[0], dy: d[1], q });
        }
        Ok(SequenceRep {
            steps: out,
            ..seq.clone()
        })
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
        let cfg: SeqModelConfig = serde_json::from_value(ck.config.clone())?;
        let meta: SeqMeta = serde_json::from_value(ck.meta.clone())?;
        let (model, fresh) = Self::init(cfg, meta, ck.params.seed)?;
        check_layout(&fresh, &ck.params)?;
        Ok(model)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<(Self, Checkpoint)> {
        let ck = Checkpoint::load(path)?;
        Ok((Self::from_checkpoint(&ck)?, ck))
    }
}

impl Objective for SeqGen {
    type Item = SequenceRep;

    /// Per sequence: `λ_coord · mean offset NLL + λ_topo · mean pen cross-entropy` over its
    /// steps; the batch loss is the mean over sequences.
    fn batch_loss(
        &self,
        store: &ParamStore,
        batch: &[&SequenceRep],
        grad: bool,
        _subsample: Option<u64>,
    ) -> Result<(LossParts, Option<Grads>)> {
        let b = batch.len();
        let len = batch.iter().map(|s| s.steps.len()).max().unwrap_or(0);
        if b == 0 || len == 0 {
            return Err(Error::Dataset("empty sequence batch".into()));
        }
        let w = &self.cfg.weights;
        let mut tape = Tape::new(store);
        let mut h: Vec<Var> = self.zero_state(b).into_iter().map(|a| tape.constant(a)).collect();
        let mut outs = Vec::with_capacity(len);
        for t in 0..len {
            let mut x = Array2::zeros((b, INPUT));
            for (r, s) in batch.iter().enumerate() {
                if t < s.steps.len() {
                    let row = input_row(t.checked_sub(1).map(|j| &s.steps[j]));
                    x.row_mut(r).assign(&ndarray::ArrayView1::from(&row));
                }
            }
            let mut inp = tape.constant(x);
            for (cell, state) in self.cells.iter().zip(h.iter_mut()) {
                *state = cell.step(&mut tape, *state, inp)?;
                inp = *state;
            }
            outs.push(inp);
        }
        // Rows are time-major: row t·b + r is step t of sequence r.
        let top = tape.concat_rows(&outs);
        let off = self.offset_head.apply(&mut tape, top)?;
        let pen = self.pen_head.apply(&mut tape, top)?;
        let mut targets = Vec::with_capacity(len * b);
        let mut pens = Vec::with_capacity(len * b);
        let (mut wc, mut wp) = (Vec::with_capacity(len * b), Vec::with_capacity(len * b));
        for t in 0..len {
            for s in batch {
                match s.steps.get(t) {
                    Some(st) => {
                        let n = s.steps.len() as f64 * b as f64;
                        targets.push([st.dx, st.dy]);
                        pens.push(st.q.index());
                        wc.push(w.coord / n);
                        wp.push(w.topo / n);
                    }
                    None => {
                        targets.push([0.0, 0.0]);
                        pens.push(0);
                        wc.push(0.0);
                        wp.push(0.0);
                    }
                }
            }
        }
        let (l_off, nll) = gmm_nll_loss(&mut tape, off, &targets, &wc);
        let (l_pen, ce) = cross_entropy_loss(&mut tape, pen, &pens, &wp);
        let loss = tape.add(l_off, l_pen);
        let mut parts = LossParts::default();
        for t in 0..len {
            for (r, s) in batch.iter().enumerate() {
                if t < s.steps.len() {
                    let i = t * b + r;
                    parts.coord.add(nll[i], 1.0);
                    parts.topo.add(ce[i], 1.0);
                    parts.total.sum += (wc[i] * nll[i] + wp[i] * ce[i]) * b as f64;
                }
            }
        }
        parts.total.count = b as f64;
        if !tape.scalar(loss).is_finite() {
            return Err(Error::NonFinite("training loss".into()));
        }
        Ok((parts, grad.then(|| tape.backward(loss))))
    }
}

/// Normalized stroke sequences of the train and validation splits.
pub fn prepare(ds: &Dataset) -> Result<(Vec<SequenceRep>, Vec<SequenceRep>)> {
    if ds.patches.is_empty() {
        return Err(Error::Dataset("empty dataset".into()));
    }
    let norm = ds.norm();
    let seqs = |idx: &[usize]| -> Result<Vec<SequenceRep>> {
        ds.plain(idx)?.iter().map(|g| map_sequence(g, &norm)).collect()
    };
    Ok((seqs(&ds.split.train)?, seqs(&ds.split.val)?))
}

pub fn train(ds: &Dataset, cfg: &SeqTrainConfig, on_epoch: impl FnMut(&EpochReport)) -> Result<Trained<SeqGen>> {
    let fit_cfg = cfg.fit();
    fit_cfg.check()?;
    let (train_items, val_items) = prepare(ds)?;
    if train_items.is_empty() {
        return Err(Error::Dataset("empty training split".into()));
    }
    let longest = train_items.iter().chain(&val_items).map(|s| s.steps.len()).max().unwrap_or(1);
    let mcfg = SeqModelConfig {
        hidden: cfg.hidden,
        layers: cfg.layers,
        k_mix: cfg.k_mix,
        weights: cfg.weights,
    };
    let meta = SeqMeta {
        fov_m: ds.fov_m,
        max_len: crate::hdmapgen::node_budget(longest),
    };
    let (model, mut store) = SeqGen::init(mcfg, meta, cfg.seed)?;
    let mut adam = Adam::new(fit_cfg.adam.clone(), &store);
    let tr: Vec<&SequenceRep> = train_items.iter().collect();
    let va: Vec<&SequenceRep> = val_items.iter().collect();
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

    fn small(max_len: usize) -> (SeqGen, ParamStore) {
        let cfg = SeqModelConfig {
            hidden: 6,
            layers: 2,
            k_mix: 2,
            weights: LossWeights::default(),
        };
        SeqGen::init(cfg, SeqMeta { fov_m: 20.0, max_len }, 3).unwrap()
    }

    fn two_lanes() -> SequenceRep {
        let g = PlainGraph::new(
            20.0,
            vec![[2.0, 2.0], [8.0, 3.0], [15.0, 4.0], [5.0, 15.0], [12.0, 16.0]],
            vec![(0, 1), (1, 2), (3, 4)],
        );
        map_sequence(&g, &NormTransform { fov_m: 20.0 }).unwrap()
    }

    #[test]
    fn sequence_starts_with_a_jump_from_the_corner() {
        let s = two_lanes();
        assert!(s.is_well_formed());
        assert_eq!(s.origin, ORIGIN);
        assert!(!s.origin_is_point);
        // Reconstruction from the corner recovers the normalized map.
        let g = from_sequence(&s, 20.0);
        assert_eq!(g.nodes.len(), 5);
        assert_eq!(g.edges.len(), 3);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let (m, store) = small(10);
        let a = two_lanes();
        let mut b = a.clone();
        b.steps.truncate(2);
        b.steps[1].q = PenState::End;
        let f = |p: &ParamStore| {
            let (parts, g) = m.batch_loss(p, &[&a, &b], true, None)?;
            Ok((parts.report().total, g.unwrap()))
        };
        let r = grad_check(f, &store, 1e-5, 200, 8).unwrap();
        assert!(r.max_rel_err < 1e-4, "{r:?}");
    }

    #[test]
    fn immediate_end_is_an_empty_map() {
        let (m, mut store) = small(10);
        // Force the end state with a large bias.
        let b = m.pen_head.b;
        store.value_mut(b)[[0, 2]] = 50.0;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = m.sample(&store, 0.2, &mut rng).unwrap();
        assert!(s.empty && !s.truncated);
        assert!(s.graph.edges.is_empty());
    }

    #[test]
    fn runaway_sequence_is_truncated() {
        let (m, mut store) = small(7);
        let b = m.pen_head.b;
        store.value_mut(b)[[0, 2]] = -50.0;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = m.sample(&store, 0.2, &mut rng).unwrap();
        assert!(s.truncated);
        assert_eq!(s.seq.steps.len(), 7);
    }

    #[test]
    fn padding_does_not_change_a_sequence_loss() {
        let (m, store) = small(10);
        let a = two_lanes();
        let mut short = a.clone();
        short.steps.truncate(1);
        short.steps[0].q = PenState::End;
        let alone = m.batch_loss(&store, &[&short], false, None).unwrap().0;
        let both = m.batch_loss(&store, &[&short, &a], false, None).unwrap().0;
        let a_alone = m.batch_loss(&store, &[&a], false, None).unwrap().0;
        let sum = alone.total.sum + a_alone.total.sum;
        assert!((both.total.sum - sum).abs() < 1e-12);
    }
}
