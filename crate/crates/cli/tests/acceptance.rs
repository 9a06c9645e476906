//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and fails if any
//! criterion fails. Criteria run one after another so the timing checks see an idle CPU.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use lanegraph::baselines::plaingen::{self, PlainGen};
use lanegraph::baselines::seqgen::{self, SeqGen, SeqModelConfig, SeqMeta, SeqTrainConfig};
use lanegraph::dataset::{synth_corpus, Dataset, DatasetConfig};
use lanegraph::generator::Generator;
use lanegraph::hdmapgen::{self, HdMapGen, ModelConfig, SampleMeta, TrainConfig, Variant};
use lanegraph::map::iso::is_isomorphic_with_coords;
use lanegraph::map::{flatten, validate, PlainGraph, Point};
use lanegraph::metrics::{
    chamfer, degree_hist, diversity_report, evaluate, frechet_normal, l1, latency_bench, map_points, median_sigma,
    mmd, pooled_degree_dist, EvalConfig, Histogram,
};
use lanegraph::nn::{grad_check, ParamStore};
use lanegraph::preprocess::{
    build_hierarchical, calibrate_curvature_tol, decimate_graph, derive_seed, removal_fraction, sample_patches,
    PatchConfig,
};
use lanegraph::synth::{generate_city, CityConfig};
use lanegraph::train::{evaluate as eval_loss, reduction, LossWeights, Objective};

const FOV: f64 = 120.0;
const W: usize = 20;
const SEEDS: [u64; 3] = [0, 1, 2];
const EPOCHS: usize = 15;
const LR: f64 = 1e-3;
const TAU: f64 = 0.2;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn city(seed: u64) -> CityConfig {
    CityConfig {
        size_m: 600.0,
        block_m: 90.0,
        seed,
        ..Default::default()
    }
}

fn corpus(n_cities: usize, per_map: usize, fov_m: f64) -> Dataset {
    let cfg = DatasetConfig {
        fov_m,
        w: W,
        curvature_tol: None,
        patches_per_map: per_map,
        seed: 7,
    };
    synth_corpus(&city(100), n_cities, &cfg).unwrap()
}

fn all_train(ds: &Dataset) -> Dataset {
    let mut d = ds.clone();
    d.split.train = (0..d.patches.len()).collect();
    d.split.val.clear();
    d
}

fn train_only(ds: &Dataset) -> Dataset {
    let mut d = ds.clone();
    d.split.val.clear();
    d
}

/// Architecture used for the graph models in every trained criterion.
fn graph_cfg(variant: Variant, seed: u64, epochs: usize, batch_size: usize) -> TrainConfig {
    TrainConfig {
        variant,
        hidden: 16,
        layers: 3,
        k_mix: 4,
        kb_mix: 4,
        epochs,
        batch_size,
        lr: LR,
        seed,
        ..Default::default()
    }
}

fn plain_cfg(seed: u64, epochs: usize, batch_size: usize) -> TrainConfig {
    TrainConfig {
        max_steps: Some(8),
        ..graph_cfg(Variant::CoordinateFirst, seed, epochs, batch_size)
    }
}

fn seq_cfg(seed: u64, epochs: usize, batch_size: usize) -> SeqTrainConfig {
    SeqTrainConfig {
        epochs,
        batch_size,
        lr: LR,
        seed,
        ..Default::default()
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn unit(seed: u64, i: u64) -> f64 {
    (derive_seed(seed, i) >> 11) as f64 / (1u64 << 53) as f64
}

fn gen_hd(m: &HdMapGen, s: &ParamStore) -> Generator {
    Generator::from_checkpoint(m.checkpoint(s, None).unwrap()).unwrap()
}

fn gen_plain(m: &PlainGen, s: &ParamStore) -> Generator {
    Generator::from_checkpoint(m.checkpoint(s, None).unwrap()).unwrap()
}

fn gen_seq(m: &SeqGen, s: &ParamStore) -> Generator {
    Generator::from_checkpoint(m.checkpoint(s, None).unwrap()).unwrap()
}

fn draw(g: &Generator, tau: f64, seed: u64, n: usize) -> Vec<PlainGraph> {
    (0..n).map(|i| g.sample(tau, seed, i).unwrap().map.to_plain().unwrap()).collect()
}

// ---------------------------------------------------------------------------
// 1. gradients

fn max_err<O: Objective>(m: &O, store: &ParamStore, items: &[&O::Item], seed: u64) -> f64 {
    let f = |p: &ParamStore| {
        let (parts, g) = m.batch_loss(p, items, true, None)?;
        Ok((parts.report().total, g.unwrap()))
    };
    grad_check(f, store, 1e-5, 250, seed).unwrap().max_rel_err
}

fn only(coord: f64, topo: f64, local: f64, mask: f64, sem: f64) -> LossWeights {
    LossWeights { coord, topo, local, mask, sem }
}

fn gradients() -> Verdict {
    let ds = corpus(1, 30, FOV);
    let mut by_size: Vec<usize> = (0..ds.patches.len()).collect();
    by_size.sort_by_key(|&i| (ds.patches[i].node_count(), i));
    let small = ds.subset(&by_size[..2]);
    let small = all_train(&small);
    let terms = [
        ("coord", only(1.0, 0.0, 0.0, 0.0, 0.0)),
        ("topo", only(0.0, 1.0, 0.0, 0.0, 0.0)),
        ("local", only(0.0, 0.0, 1.0, 1.0, 0.0)),
        ("sem", only(0.0, 0.0, 0.0, 0.0, 1.0)),
    ];
    let mut worst = 0.0f64;
    let mut checks = 0;
    let (items, _) = hdmapgen::prepare(&small).unwrap();
    let items: Vec<_> = items.iter().collect();
    let max_nodes = hdmapgen::node_budget(small.patches.iter().map(|h| h.node_count()).max().unwrap());
    for v in Variant::ALL {
        for seed in SEEDS {
            for (_, weights) in &terms {
                let mut tc = graph_cfg(v, seed, 1, 2);
                tc.hidden = 6;
                tc.layers = 2;
                tc.k_mix = 3;
                tc.kb_mix = 3;
                let cfg = ModelConfig {
                    global: tc.global(max_nodes),
                    w: W,
                    weights: *weights,
                };
                let meta = SampleMeta {
                    fov_m: FOV,
                    node_counts: vec![2],
                };
                let (m, store) = HdMapGen::init(cfg, meta, seed).unwrap();
                worst = worst.max(max_err(&m, &store, &items, seed));
                checks += 1;
            }
        }
    }
    for seed in SEEDS {
        let (seqs, _) = plaingen::prepare(&small, seed).unwrap();
        let seqs: Vec<_> = seqs.iter().collect();
        let mut tc = plain_cfg(seed, 1, 2);
        tc.hidden = 6;
        tc.layers = 2;
        tc.max_steps = None;
        let cfg = plaingen::PlainConfig {
            global: tc.global(hdmapgen::node_budget(seqs.iter().map(|s| s.len()).max().unwrap())),
            weights: LossWeights::default(),
        };
        let meta = SampleMeta {
            fov_m: FOV,
            node_counts: vec![2],
        };
        let (m, store) = PlainGen::init(cfg, meta, seed).unwrap();
        worst = worst.max(max_err(&m, &store, &seqs, seed));
        let (seqs, _) = seqgen::prepare(&small).unwrap();
        let seqs: Vec<_> = seqs.iter().collect();
        let cfg = SeqModelConfig {
            hidden: 6,
            layers: 2,
            k_mix: 3,
            weights: LossWeights::default(),
        };
        let (m, store) = SeqGen::init(cfg, SeqMeta { fov_m: FOV, max_len: 200 }, seed).unwrap();
        worst = worst.max(max_err(&m, &store, &seqs, seed));
        checks += 2;
    }
    verdict(worst < 1e-4, format!("{checks} checks, max rel err {worst:.2e}"))
}

// ---------------------------------------------------------------------------
// 2. round trip

fn round_trip() -> Verdict {
    // Patches are drawn, calibrated and filtered for W as the dataset builder does.
    let mut pool = Vec::new();
    for s in 0..6 {
        let map = generate_city(&city(200 + s)).unwrap().map;
        pool.extend(sample_patches(&map, &PatchConfig::new(FOV, 0.0, s), 25).unwrap());
    }
    let tol = calibrate_curvature_tol(&pool, 0.7).unwrap();
    let mut cfg = PatchConfig::new(FOV, tol, 0);
    cfg.max_local_w = W;
    let (mut kept, mut overflow, mut bad) = (Vec::new(), 0, 0);
    for p in &pool {
        if kept.len() == 100 {
            break;
        }
        let dec = decimate_graph(p, tol).unwrap();
        match build_hierarchical(&dec, &cfg) {
            Ok(h) => {
                if !is_isomorphic_with_coords(&flatten(&h).unwrap(), &dec, 1e-9) {
                    bad += 1;
                }
                kept.push(p.clone());
            }
            Err(lanegraph::Error::LocalOverflow { .. }) => overflow += 1,
            Err(e) => panic!("{e}"),
        }
    }
    let removed = removal_fraction(&kept, tol).unwrap();
    let pass = kept.len() == 100 && bad == 0 && (removed - 0.7).abs() <= 0.05;
    verdict(
        pass,
        format!(
            "{} of {} patches isomorphic after the round trip ({overflow} skipped for W={W}); removal {removed:.3} at tol {tol:.4}",
            kept.len() - bad,
            kept.len()
        ),
    )
}

// ---------------------------------------------------------------------------
// 3. metric oracles

/// W1 between two histograms through their quantile functions.
fn w1_quantile(a: &Histogram, b: &Histogram) -> f64 {
    let cdf = |h: &Histogram| {
        let total: f64 = h.counts.iter().sum();
        let mut acc = 0.0;
        h.counts
            .iter()
            .map(|c| {
                acc += c / total;
                acc
            })
            .collect::<Vec<_>>()
    };
    let (ca, cb) = (cdf(a), cdf(b));
    let quantile = |c: &[f64], u: f64| c.iter().position(|&x| x >= u - 1e-15).unwrap_or(c.len() - 1) as f64;
    let mut cuts: Vec<f64> = ca.iter().chain(&cb).copied().chain([0.0, 1.0]).collect();
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let mut d = 0.0;
    for w in cuts.windows(2) {
        let u = 0.5 * (w[0] + w[1]);
        d += (w[1] - w[0]) * (quantile(&ca, u) - quantile(&cb, u)).abs();
    }
    d * a.bin_width
}

fn oracles() -> Verdict {
    let ds = corpus(1, 12, FOV);
    let plain = ds.plain(&(0..12).collect::<Vec<_>>()).unwrap();
    let hists: Vec<Histogram> = plain.iter().map(|g| degree_hist(g).unwrap()).collect();
    let (a, b) = (&hists[..5], &hists[5..10]);
    let sigma = median_sigma(b);
    let k = |p: &Histogram, q: &Histogram| (-w1_quantile(p, q).powi(2) / (2.0 * sigma * sigma)).exp();
    let mut oracle = 0.0;
    for (x, y) in [(a, a), (b, b), (a, b)] {
        let mut s = 0.0;
        for p in x {
            for q in y {
                s += k(p, q);
            }
        }
        let w = if std::ptr::eq(x, y) { 1.0 } else { -2.0 };
        oracle += w * s / 25.0;
    }
    let mmd_err = (mmd(a, b, sigma).unwrap() - oracle).abs();

    let xa: Vec<f64> = (0..40).map(|i| 3.0 * unit(1, i) - 1.0).collect();
    let xb: Vec<f64> = (0..30).map(|i| 2.0 * unit(2, i) + 0.5).collect();
    let moments = |v: &[f64]| {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64;
        (m, var.sqrt())
    };
    let ((ma, sa), (mb, sb)) = (moments(&xa), moments(&xb));
    let closed = (ma - mb).powi(2) + (sa - sb).powi(2);
    let fre_err = (frechet_normal(&xa, &xb).unwrap() - closed).abs();

    let pts = |seed: u64| -> Vec<Point> { (0..50).map(|i| [2.0 * unit(seed, 2 * i) - 1.0, 2.0 * unit(seed, 2 * i + 1) - 1.0]).collect() };
    let (pa, pb) = (pts(3), pts(4));
    let dir = |x: &[Point], y: &[Point]| {
        x.iter()
            .map(|p| y.iter().map(|q| (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).fold(f64::INFINITY, f64::min))
            .sum::<f64>()
            / x.len() as f64
    };
    let brute = dir(&pa, &pb) + dir(&pb, &pa);
    let ch_err = (chamfer(&pa, &pb).unwrap() - brute).abs();
    let pass = mmd_err <= 1e-10 && fre_err <= 1e-12 && ch_err <= 1e-12;
    verdict(pass, format!("mmd err {mmd_err:.1e}, frechet err {fre_err:.1e}, chamfer err {ch_err:.1e}"))
}

// ---------------------------------------------------------------------------
// 4. overfit

const OVERFIT_EPOCHS: usize = 500;
const OVERFIT_BATCH: usize = 4;
const OVERFIT_TARGET: f64 = 0.9;

fn overfit() -> Verdict {
    let ds = corpus(1, 16, FOV);
    let ds = all_train(&ds);
    let stop = Some(0.95);
    let mut lines = Vec::new();
    let mut pass = true;
    let mut record = |name: String, before: f64, after: f64, epochs: usize| {
        let r = reduction(before, after);
        pass &= r >= OVERFIT_TARGET && epochs <= OVERFIT_EPOCHS;
        lines.push(format!("{name} {r:.3} ({epochs} ep)"));
    };
    let mut hd_cf = None;
    for v in Variant::ALL {
        let cfg = TrainConfig {
            stop_at_reduction: stop,
            ..graph_cfg(v, 0, OVERFIT_EPOCHS, OVERFIT_BATCH)
        };
        let tr = hdmapgen::train(&ds, &cfg, |_| {}).unwrap();
        let (items, _) = hdmapgen::prepare(&ds).unwrap();
        let items: Vec<_> = items.iter().collect();
        let (m0, s0) = HdMapGen::init(tr.model.cfg.clone(), tr.model.meta.clone(), cfg.seed).unwrap();
        let before = eval_loss(&m0, &s0, &items, 4).unwrap().report().total;
        let after = eval_loss(&tr.model, &tr.store, &items, 4).unwrap().report().total;
        record(format!("hdmapgen/{v}"), before, after, tr.reports.len());
        if v == Variant::CoordinateFirst {
            hd_cf = Some(tr);
        }
    }
    let cfg = TrainConfig {
        stop_at_reduction: stop,
        ..plain_cfg(0, OVERFIT_EPOCHS, OVERFIT_BATCH)
    };
    let tr = plaingen::train(&ds, &cfg, |_| {}).unwrap();
    let (items, _) = plaingen::prepare(&ds, cfg.seed).unwrap();
    let items: Vec<_> = items.iter().collect();
    let (m0, s0) = PlainGen::init(tr.model.cfg.clone(), tr.model.meta.clone(), cfg.seed).unwrap();
    let before = eval_loss(&m0, &s0, &items, 4).unwrap().report().total;
    let after = eval_loss(&tr.model, &tr.store, &items, 4).unwrap().report().total;
    record("plaingen".into(), before, after, tr.reports.len());

    let cfg = SeqTrainConfig {
        stop_at_reduction: stop,
        ..seq_cfg(0, OVERFIT_EPOCHS, OVERFIT_BATCH)
    };
    let tr = seqgen::train(&ds, &cfg, |_| {}).unwrap();
    let (items, _) = seqgen::prepare(&ds).unwrap();
    let items: Vec<_> = items.iter().collect();
    let (m0, s0) = SeqGen::init(tr.model.cfg.clone(), tr.model.meta.clone(), cfg.seed).unwrap();
    let before = eval_loss(&m0, &s0, &items, 4).unwrap().report().total;
    let after = eval_loss(&tr.model, &tr.store, &items, 4).unwrap().report().total;
    record("seqgen".into(), before, after, tr.reports.len());

    let tr = hd_cf.unwrap();
    let samples = draw(&gen_hd(&tr.model, &tr.store), 0.0, 0, 64);
    let reference = ds.plain(&ds.split.train).unwrap();
    let d = l1(&pooled_degree_dist(&samples), &pooled_degree_dist(&reference));
    pass &= d <= 0.15;
    let nodes = |gs: &[PlainGraph]| gs.iter().map(|g| g.nodes.len()).sum::<usize>() as f64 / gs.len() as f64;
    eprintln!("  sampled degrees {:?}", pooled_degree_dist(&samples));
    eprintln!("  training degrees {:?}", pooled_degree_dist(&reference));
    verdict(
        pass,
        format!(
            "loss reduction {}; tau=0 degree L1 {d:.3}, mean nodes {:.1} vs {:.1}",
            lines.join(", "),
            nodes(&samples),
            nodes(&reference)
        ),
    )
}

// ---------------------------------------------------------------------------
// 5-8. the 1000-patch corpus

struct SeedRun {
    val: HashMap<Variant, (f64, f64)>,
    mmd: [f64; 3],
    dead: [f64; 3],
    hd: Generator,
    plain: Generator,
    seq: Generator,
}

fn seed_run(ds: &Dataset, seed: u64) -> SeedRun {
    let mut val = HashMap::new();
    let mut hd = None;
    for v in Variant::ALL {
        let tr = hdmapgen::train(ds, &graph_cfg(v, seed, EPOCHS, 8), |_| {}).unwrap();
        let last = tr.reports.last().unwrap().val.clone().unwrap();
        val.insert(v, (last.coord_nll.unwrap(), last.topo_bce.unwrap()));
        eprintln!("  seed {seed} {v}: val nll {:.4} bce {:.4}", val[&v].0, val[&v].1);
        if v == Variant::CoordinateFirst {
            hd = Some(gen_hd(&tr.model, &tr.store));
        }
    }
    let base = train_only(ds);
    let tr = plaingen::train(&base, &plain_cfg(seed, EPOCHS, 8), |_| {}).unwrap();
    let plain = gen_plain(&tr.model, &tr.store);
    let tr = seqgen::train(&base, &seq_cfg(seed, EPOCHS, 8), |_| {}).unwrap();
    let seq = gen_seq(&tr.model, &tr.store);
    let hd = hd.unwrap();
    let reference = ds.plain(&ds.split.val).unwrap();
    let cfg = EvalConfig {
        seed,
        ..Default::default()
    };
    let mut mmd = [0.0; 3];
    let mut dead = [0.0; 3];
    for (k, g) in [&hd, &plain, &seq].into_iter().enumerate() {
        let r = evaluate(&draw(g, TAU, seed, 64), &reference, &cfg).unwrap();
        mmd[k] = r.mmd_degree;
        dead[k] = r.dead_end_rate;
    }
    eprintln!("  seed {seed}: degree mmd {mmd:?}, dead-ends {dead:?}");
    SeedRun {
        val,
        mmd,
        dead,
        hd,
        plain,
        seq,
    }
}

fn ablation(runs: &[SeedRun], elapsed: Duration) -> Verdict {
    let med = |v: Variant, k: usize| median(runs.iter().map(|r| if k == 0 { r.val[&v].0 } else { r.val[&v].1 }).collect());
    let (cf, tf, ind) = (Variant::CoordinateFirst, Variant::TopologyFirst, Variant::Independent);
    let nll = [med(cf, 0), med(tf, 0), med(ind, 0)];
    let bce = [med(cf, 1), med(tf, 1), med(ind, 1)];
    let bce_ok = bce[0] < bce[1] && bce[0] < bce[2];
    let nll_ok = nll[1] < nll[0] && nll[1] < nll[2];
    let ind_worst = nll[2] >= nll[0].max(nll[1]) || bce[2] >= bce[0].max(bce[1]);
    let in_time = elapsed < Duration::from_secs(2 * 3600);
    verdict(
        bce_ok && nll_ok && ind_worst && in_time,
        format!(
            "median val NLL cf/tf/ind {:.3}/{:.3}/{:.3}, BCE {:.4}/{:.4}/{:.4}; {:.0} min",
            nll[0],
            nll[1],
            nll[2],
            bce[0],
            bce[1],
            bce[2],
            elapsed.as_secs_f64() / 60.0
        ),
    )
}

fn fidelity(runs: &[SeedRun]) -> Verdict {
    let m: Vec<f64> = (0..3).map(|k| median(runs.iter().map(|r| r.mmd[k]).collect())).collect();
    let d: Vec<f64> = (0..3).map(|k| median(runs.iter().map(|r| r.dead[k]).collect())).collect();
    let pass = m[0] < m[1] && m[1] < m[2] && d[2] >= 2.0 * d[0];
    verdict(
        pass,
        format!(
            "median degree MMD hd/plain/seq {:.4}/{:.4}/{:.4}; dead-ends per map hd {:.3}, seq {:.3}",
            m[0], m[1], m[2], d[0], d[2]
        ),
    )
}

fn diversity(run: &SeedRun, ds: &Dataset) -> Verdict {
    let t = Instant::now();
    let reference: Vec<Vec<Point>> = ds.plain(&ds.split.val).unwrap().iter().map(map_points).collect();
    let mut scores = Vec::new();
    for tau in [0.1, 0.2, 0.3, 0.4, 0.5] {
        let pts: Vec<Vec<Point>> = draw(&run.hd, tau, 0, 64).iter().map(map_points).collect();
        scores.push(diversity_report(&pts, &reference).unwrap().1);
    }
    let increasing = scores.windows(2).all(|w| w[1] > w[0]);
    let pass = increasing && t.elapsed() < Duration::from_secs(600);
    let s: Vec<String> = scores.iter().map(|x| format!("{x:.2}")).collect();
    verdict(pass, format!("chamfer_internal over tau 0.1..0.5: {}", s.join(" ")))
}

fn latency(run: &SeedRun) -> Verdict {
    let t = Instant::now();
    let mut means = Vec::new();
    for g in [&run.hd, &run.plain, &run.seq] {
        means.push(latency_bench(20, 2, |i| g.sample(TAU, 0, i).map(|_| ())).unwrap().mean_s);
    }
    let pass = means[0] < means[1] && means[1] < means[2] && t.elapsed() < Duration::from_secs(300);
    verdict(
        pass,
        format!(
            "s/map hd {:.4}, plain {:.4}, seq {:.4}; plain/hd {:.2}x, seq/hd {:.2}x",
            means[0],
            means[1],
            means[2],
            means[1] / means[0],
            means[2] / means[0]
        ),
    )
}

// ---------------------------------------------------------------------------
// 9. scale

fn scale(small: &Dataset) -> Verdict {
    let t = Instant::now();
    let big = corpus(2, 20, 2.0 * FOV);
    let ratio = big.stats.global_nodes.mean / small.stats.global_nodes.mean;
    let cfg = TrainConfig {
        max_steps: Some(16),
        ..graph_cfg(Variant::CoordinateFirst, 0, 20, 8)
    };
    let tr = hdmapgen::train(&big, &cfg, |_| {}).unwrap();
    let (mut ok, mut nodes) = (0, 0);
    for i in 0..16 {
        let s = tr.model.sample_indexed(&tr.store, TAU, 9, i).unwrap();
        nodes += s.graph.node_count();
        if validate(&s.graph).is_ok() && validate(&flatten(&s.graph).unwrap()).is_ok() {
            ok += 1;
        }
    }
    let pass = ok == 16 && t.elapsed() < Duration::from_secs(600);
    verdict(
        pass,
        format!(
            "{ok}/16 samples valid at fov {:.0} m; corpus global nodes {:.1} ({:.1}x the base corpus), sampled {:.1}",
            2.0 * FOV,
            big.stats.global_nodes.mean,
            ratio,
            nodes as f64 / 16.0
        ),
    )
}

// ---------------------------------------------------------------------------
// 10. CLI determinism

fn cli(dir: &Path, args: &[&str]) {
    let out = Command::new(env!("CARGO_BIN_EXE_lanegraph"))
        .current_dir(dir)
        .env_remove("LANEGRAPH_SEED")
        .args(args)
        .output()
        .unwrap();
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn pipeline(dir: &Path) {
    let _ = std::fs::remove_dir_all(dir);
    std::fs::create_dir_all(dir).unwrap();
    let steps: &[&[&str]] = &[
        &["synth", "--size", "400", "--block", "80", "--n-cities", "2", "--seed", "3", "--out", "cities"],
        &["preprocess", "--in", "cities", "--fov", "120", "--n", "10", "--seed", "4", "--out", "data"],
        &["train", "--data", "data", "--epochs", "1", "--hidden", "8", "--layers", "2", "--seed", "5", "--out", "hd.ckpt"],
        &["train", "--data", "data", "--model", "plaingen", "--epochs", "1", "--hidden", "8", "--layers", "2", "--max-steps", "4", "--seed", "5", "--out", "plain.ckpt"],
        &["train", "--data", "data", "--model", "seqgen", "--epochs", "1", "--hidden", "16", "--seed", "5", "--out", "seq.ckpt"],
        &["sample", "--ckpt", "hd.ckpt", "--n", "4", "--seed", "6", "--out", "hd_maps"],
        &["sample", "--ckpt", "plain.ckpt", "--n", "4", "--seed", "6", "--out", "plain_maps"],
        &["sample", "--ckpt", "seq.ckpt", "--n", "4", "--seed", "6", "--out", "seq_maps"],
        &["eval", "--samples", "hd_maps", "--reference", "data", "--seed", "7", "--out", "eval.json"],
        &["render", "--in", "hd_maps/map_00000.json", "--out", "map.svg"],
        &["bench", "--ckpt", "hd.ckpt", "--ckpt", "plain.ckpt", "--ckpt", "seq.ckpt", "--n", "2", "--warmup", "0", "--seed", "8", "--out", "bench.json"],
    ];
    for s in steps {
        cli(dir, s);
    }
}

fn files(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(dir).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

/// File contents with wall-clock fields dropped from manifests and the bench report.
fn comparable(path: &Path) -> Vec<u8> {
    let name = path.file_name().unwrap().to_str().unwrap();
    let bytes = std::fs::read(path).unwrap();
    let timing: &[&str] = if name == "bench.json.manifest.json" {
        // its output hash covers the timings in bench.json
        &["started_unix_s", "wall_time_s", "outputs"]
    } else if name == "manifest.json" || name.ends_with(".manifest.json") {
        &["started_unix_s", "wall_time_s"]
    } else if name == "bench.json" {
        &["latency", "ratios"]
    } else {
        return bytes;
    };
    let mut v: serde_json::Value = serde_json::from_slice(&bytes).unwrap();
    strip(&mut v, timing);
    serde_json::to_vec(&v).unwrap()
}

fn strip(v: &mut serde_json::Value, keys: &[&str]) {
    match v {
        serde_json::Value::Object(m) => {
            for k in keys {
                m.remove(*k);
            }
            m.values_mut().for_each(|x| strip(x, keys));
        }
        serde_json::Value::Array(a) => a.iter_mut().for_each(|x| strip(x, keys)),
        _ => {}
    }
}

fn determinism() -> Verdict {
    let t = Instant::now();
    let root = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance_cli");
    let (a, b) = (root.join("a"), root.join("b"));
    pipeline(&a);
    pipeline(&b);
    let (fa, fb) = (files(&a), files(&b));
    let mut differ = Vec::new();
    if fa != fb {
        differ.push("file lists".to_string());
    }
    for f in fa.iter().filter(|f| fb.contains(f)) {
        if comparable(&a.join(f)) != comparable(&b.join(f)) {
            differ.push(f.display().to_string());
        }
    }
    let pass = differ.is_empty() && t.elapsed() < Duration::from_secs(300);
    verdict(pass, format!("{} files compared over 7 commands; differing: {differ:?}", fa.len()))
}

// ---------------------------------------------------------------------------

/// `ACCEPTANCE_ONLY=1,3,10` restricts the run to the listed criteria.
fn selected(id: usize) -> bool {
    match std::env::var("ACCEPTANCE_ONLY") {
        Ok(list) => list.split(',').any(|x| x.trim().parse() == Ok(id)),
        Err(_) => true,
    }
}

#[test]
fn acceptance() {
    let mut results: Vec<(usize, &str, Verdict, Duration)> = Vec::new();
    let mut run = |id: usize, name: &'static str, f: &mut dyn FnMut() -> Verdict| {
        if !selected(id) {
            return;
        }
        let t = Instant::now();
        let v = f();
        let dt = t.elapsed();
        println!("{} {id:>2} {name}: {} [{:.1} s]", if v.pass { "PASS" } else { "FAIL" }, v.detail, dt.as_secs_f64());
        results.push((id, name, v, dt));
    };
    run(1, "gradient correctness", &mut || gradients());
    run(2, "round-trip fidelity", &mut || round_trip());
    run(3, "metric oracles", &mut || oracles());
    run(4, "overfit sanity", &mut || overfit());

    let ds = corpus(10, 100, FOV);
    if (5..=8).any(selected) {
        let t = Instant::now();
        let runs: Vec<SeedRun> = SEEDS.iter().map(|&s| seed_run(&ds, s)).collect();
        let elapsed = t.elapsed();
        run(5, "ablation ordering", &mut || ablation(&runs, elapsed));
        run(6, "fidelity ordering", &mut || fidelity(&runs));
        run(7, "diversity trend", &mut || diversity(&runs[0], &ds));
        run(8, "latency ordering", &mut || latency(&runs[0]));
    }
    run(9, "scalability", &mut || scale(&ds));
    run(10, "determinism", &mut || determinism());

    let failed: Vec<usize> = results.iter().filter(|r| !r.2.pass).map(|r| r.0).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
