use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::json;

use lanegraph::baselines::{plaingen, seqgen};
use lanegraph::dataset::{build_dataset, Dataset, DatasetConfig};
use lanegraph::generator::Generator;
use lanegraph::hdmapgen::{self, TrainConfig, Variant};
use lanegraph::map::io::{hier_to_json, plain_to_json, read_map, MapDoc};
use lanegraph::map::PlainGraph;
use lanegraph::metrics::{evaluate, latency_bench, EvalConfig, LatencyStats};
use lanegraph::render::RenderOptions;
use lanegraph::synth::{generate_city, CityConfig};
use lanegraph::train::EpochReport;

use crate::config::{section, FileConfig};
use crate::manifest::{manifest_path, sha256_hex, Run};
use crate::{BenchArgs, EvalArgs, ModelKind, PreprocessArgs, RenderArgs, SampleArgs, SynthArgs, TrainArgs, Usage};

const DEFAULT_TAU: f64 = 0.2;

/// Files that live in map directories but are not maps.
const NOT_MAPS: [&str; 3] = ["manifest.json", "split.json", "stats.json"];

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

fn require(path: &Path, what: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(usage(format!("{what} {} does not exist", path.display())))
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

/// Map JSON files of a directory in name order, or the file itself.
fn map_files(path: &Path) -> Result<Vec<PathBuf>> {
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut out = Vec::new();
    for entry in std::fs::read_dir(path).with_context(|| format!("listing {}", path.display()))? {
        let p = entry?.path();
        let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
        if p.extension().is_some_and(|e| e == "json") && !NOT_MAPS.contains(&name) && !name.ends_with(".manifest.json") {
            out.push(p);
        }
    }
    out.sort();
    if out.is_empty() {
        return Err(usage(format!("no map files in {}", path.display())));
    }
    Ok(out)
}

fn read_plain_maps(path: &Path) -> Result<Vec<PlainGraph>> {
    map_files(path)?
        .iter()
        .map(|p| {
            let doc = read_map(p).with_context(|| format!("reading {}", p.display()))?;
            Ok(doc.to_plain()?)
        })
        .collect()
}

fn doc_json(doc: &MapDoc) -> Result<String> {
    Ok(match doc {
        MapDoc::Plain(g) => plain_to_json(g),
        MapDoc::Hier(h) => hier_to_json(h)?,
    })
}

#[derive(Default, Deserialize)]
struct SynthExtra {
    n_cities: Option<usize>,
}

pub fn synth(file: &FileConfig, a: SynthArgs) -> Result<()> {
    let mut run = Run::start("synth");
    let mut city: CityConfig = section(&file.synth, "synth")?;
    let extra: SynthExtra = section(&file.synth, "synth")?;
    if let Some(s) = a.size {
        city.size_m = s;
    }
    if let Some(b) = a.block {
        city.block_m = b;
    }
    city.seed = file.seed(a.seed, &file.synth)?;
    let n = a.n_cities.or(extra.n_cities).unwrap_or(1);
    if n == 0 {
        return Err(usage("--n-cities must be >= 1"));
    }
    city.check()?;
    create_dir(&a.out)?;
    for i in 0..n {
        let c = CityConfig {
            seed: city.seed.wrapping_add(i as u64),
            ..city.clone()
        };
        let map = generate_city(&c)?;
        run.write(a.out.join(format!("city_{i:03}.json")), map.to_json() + "\n")?;
    }
    let config = json!({ "city": city, "n_cities": n });
    run.finish(manifest_path(&a.out, true), config, Some(city.seed))
}

#[derive(Default, Serialize, Deserialize)]
#[serde(default)]
struct PreprocessSection {
    fov_m: Option<f64>,
    n: Option<usize>,
    w: Option<usize>,
    curvature_tol: Option<f64>,
}

pub fn preprocess(file: &FileConfig, a: PreprocessArgs) -> Result<()> {
    let mut run = Run::start("preprocess");
    let sec: PreprocessSection = section(&file.preprocess, "preprocess")?;
    let seed = file.seed(a.seed, &file.preprocess)?;
    let cfg = DatasetConfig {
        fov_m: a.fov.or(sec.fov_m).unwrap_or(200.0),
        w: a.w.or(sec.w).unwrap_or(8),
        curvature_tol: a.curvature_tol.or(sec.curvature_tol),
        patches_per_map: a.n.or(sec.n).unwrap_or(100),
        seed,
    };
    if cfg.patches_per_map == 0 {
        return Err(usage("--n must be >= 1"));
    }
    let mut maps = Vec::new();
    for input in &a.inputs {
        require(input, "input")?;
        for p in map_files(input)? {
            let doc = read_map(&p).with_context(|| format!("reading {}", p.display()))?;
            maps.push(doc.to_plain()?);
            run.input(&p);
        }
    }
    let ds = build_dataset(&maps, &cfg)?;
    ds.write(&a.out)?;
    for i in 0..ds.patches.len() {
        run.output(a.out.join(format!("patch_{i:05}.json")));
    }
    run.output(a.out.join("split.json"));
    run.output(a.out.join("stats.json"));
    println!(
        "{} patches ({} train / {} val), removal {:.3}",
        ds.patches.len(),
        ds.split.train.len(),
        ds.split.val.len(),
        ds.stats.removal_fraction
    );
    run.finish(manifest_path(&a.out, true), serde_json::to_value(&cfg)?, Some(seed))
}

fn report_line(r: &EpochReport) -> String {
    serde_json::to_string(r).expect("epoch reports serialize") + "\n"
}

pub fn train(file: &FileConfig, a: TrainArgs) -> Result<()> {
    let mut run = Run::start("train");
    require(&a.data, "dataset")?;
    let seed = file.seed(a.seed, &file.train)?;
    run.input(&a.data);
    let ds = Dataset::read(&a.data)?;
    let mut lines = String::new();
    let on_epoch = |r: &EpochReport| {
        eprintln!("epoch {} loss {:.5}", r.epoch, r.train.total);
        lines.push_str(&report_line(r));
    };
    let (ck, config) = match a.model {
        ModelKind::Hdmapgen | ModelKind::Plaingen => {
            let mut cfg: TrainConfig = section(&file.train, "train")?;
            if let Some(v) = &a.variant {
                cfg.variant = v.parse::<Variant>()?;
            }
            if let Some(e) = a.epochs {
                cfg.epochs = e;
            }
            if let Some(b) = a.batch_size {
                cfg.batch_size = b;
            }
            if let Some(lr) = a.lr {
                cfg.lr = lr;
            }
            if let Some(h) = a.hidden {
                cfg.hidden = h;
            }
            if let Some(l) = a.layers {
                cfg.layers = l;
            }
            if a.max_steps.is_some() {
                cfg.max_steps = a.max_steps;
            }
            cfg.seed = seed;
            cfg.check()?;
            let ck = if a.model == ModelKind::Hdmapgen {
                let t = hdmapgen::train(&ds, &cfg, on_epoch)?;
                t.model.checkpoint(&t.store, Some(&t.adam))?
            } else {
                let t = plaingen::train(&ds, &cfg, on_epoch)?;
                t.model.checkpoint(&t.store, Some(&t.adam))?
            };
            (ck, serde_json::to_value(&cfg)?)
        }
        ModelKind::Seqgen => {
            if a.variant.is_some() || a.max_steps.is_some() {
                return Err(usage("--variant and --max-steps do not apply to seqgen"));
            }
            let mut cfg: seqgen::SeqTrainConfig = section(&file.train, "train")?;
            if let Some(e) = a.epochs {
                cfg.epochs = e;
            }
            if let Some(b) = a.batch_size {
                cfg.batch_size = b;
            }
            if let Some(lr) = a.lr {
                cfg.lr = lr;
            }
            if let Some(h) = a.hidden {
                cfg.hidden = h;
            }
            if let Some(l) = a.layers {
                cfg.layers = l;
            }
            cfg.seed = seed;
            let t = seqgen::train(&ds, &cfg, on_epoch)?;
            (t.model.checkpoint(&t.store, Some(&t.adam))?, serde_json::to_value(&cfg)?)
        }
    };
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    ck.save(&a.out)?;
    run.output(&a.out);
    let report = PathBuf::from(format!("{}.report.jsonl", a.out.display()));
    run.write(&report, lines)?;
    run.finish(manifest_path(&a.out, false), config, Some(seed))
}

#[derive(Default, Deserialize)]
#[serde(default)]
struct SampleSection {
    tau: Option<f64>,
}

pub fn sample(file: &FileConfig, a: SampleArgs) -> Result<()> {
    let mut run = Run::start("sample");
    require(&a.ckpt, "checkpoint")?;
    let sec: SampleSection = section(&file.sample, "sample")?;
    let tau = a.tau.or(sec.tau).unwrap_or(DEFAULT_TAU);
    if !(tau >= 0.0) {
        return Err(usage(format!("--tau must be >= 0, got {tau}")));
    }
    let seed = file.seed(a.seed, &file.sample)?;
    let gen = Generator::load(&a.ckpt)?;
    run.input(&a.ckpt);
    create_dir(&a.out)?;
    let mut degenerate = 0;
    for i in 0..a.n {
        let g = gen.sample(tau, seed, i)?;
        degenerate += g.degenerate as usize;
        run.write(a.out.join(format!("map_{i:05}.json")), doc_json(&g.map)? + "\n")?;
    }
    let config = json!({ "model": gen.kind(), "n": a.n, "tau": tau, "degenerate": degenerate });
    run.finish(manifest_path(&a.out, true), config, Some(seed))
}

pub fn eval(file: &FileConfig, a: EvalArgs) -> Result<()> {
    let mut run = Run::start("eval");
    require(&a.samples, "samples")?;
    require(&a.reference, "reference")?;
    let mut cfg: EvalConfig = section(&file.eval, "eval")?;
    if let Some(r) = a.radius {
        cfg.region_radius_m = r;
    }
    if let Some(p) = a.probes {
        cfg.n_probes = p;
    }
    cfg.seed = file.seed(a.seed, &file.eval)?;
    let samples = read_plain_maps(&a.samples)?;
    let reference = read_plain_maps(&a.reference)?;
    run.input(&a.samples);
    run.input(&a.reference);
    let report = evaluate(&samples, &reference, &cfg)?;
    run.write(&a.out, serde_json::to_string_pretty(&report)? + "\n")?;
    run.finish(manifest_path(&a.out, false), serde_json::to_value(&cfg)?, Some(cfg.seed))
}

pub fn render(file: &FileConfig, a: RenderArgs) -> Result<()> {
    let mut run = Run::start("render");
    require(&a.input, "map")?;
    let mut opts: RenderOptions = section(&file.render, "render")?;
    if let Some(s) = a.size {
        if !(s > 0.0) {
            return Err(usage(format!("--size must be > 0, got {s}")));
        }
        opts.size_px = s;
    }
    if a.no_legend {
        opts.legend = false;
    }
    let doc = read_map(&a.input)?;
    run.input(&a.input);
    run.write(&a.out, lanegraph::render::render(&doc, &opts)?)?;
    run.finish(manifest_path(&a.out, false), serde_json::to_value(&opts)?, None)
}

#[derive(Serialize)]
struct BenchEntry {
    model: String,
    ckpt: PathBuf,
    latency: LatencyStats,
    /// Digest of the timed samples, so runs can be checked for identical output.
    samples_sha256: String,
}

#[derive(Serialize)]
struct BenchReport {
    n: usize,
    warmup: usize,
    tau: f64,
    entries: Vec<BenchEntry>,
    /// Mean time of each entry over the first entry's.
    ratios: BTreeMap<String, f64>,
}

pub fn bench(file: &FileConfig, a: BenchArgs) -> Result<()> {
    let mut run = Run::start("bench");
    #[derive(Default, Deserialize)]
    #[serde(default)]
    struct BenchSection {
        tau: Option<f64>,
    }
    let sec: BenchSection = section(&file.bench, "bench")?;
    let tau = a.tau.or(sec.tau).unwrap_or(DEFAULT_TAU);
    let seed = file.seed(a.seed, &file.bench)?;
    if a.n == 0 {
        return Err(usage("--n must be >= 1"));
    }
    let mut entries = Vec::new();
    for ckpt in &a.ckpts {
        require(ckpt, "checkpoint")?;
        run.input(ckpt);
        let gen = Generator::load(ckpt)?;
        let mut maps = Vec::with_capacity(a.n);
        let latency = latency_bench(a.n, a.warmup, |i| {
            let g = gen.sample(tau, seed, i)?;
            if i >= a.warmup {
                maps.push(g.map);
            }
            Ok(())
        })?;
        let mut all = String::new();
        for m in &maps {
            all.push_str(&doc_json(m)?);
        }
        eprintln!("{}: {:.4} s/map", gen.kind(), latency.mean_s);
        entries.push(BenchEntry {
            model: gen.kind().to_string(),
            ckpt: ckpt.clone(),
            latency,
            samples_sha256: sha256_hex(all.as_bytes()),
        });
    }
    let base = entries[0].latency.mean_s;
    let ratios = entries
        .iter()
        .enumerate()
        .map(|(i, e)| (format!("{i}:{}", e.model), e.latency.mean_s / base))
        .collect();
    let report = BenchReport {
        n: a.n,
        warmup: a.warmup,
        tau,
        entries,
        ratios,
    };
    run.write(&a.out, serde_json::to_string_pretty(&report)? + "\n")?;
    run.finish(manifest_path(&a.out, false), json!({ "n": a.n, "warmup": a.warmup, "tau": tau }), Some(seed))
}
