//! Patch corpora: building, splitting and on-disk layout.
//!
//! A dataset directory holds `patch_00000.json` … (hierarchical maps in meters, patch
//! corner at the origin), `split.json` and `stats.json`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::map::{flatten, io, HierGraph, PlainGraph};
use crate::preprocess::{
    build_hierarchical, calibrate_curvature_tol, decimate_graph, derive_seed, removal_fraction,
    sample_patch, CorpusStats, NormTransform, PatchConfig,
};
use crate::synth::{generate_city, CityConfig};
use crate::{Error, Result};

/// Share of control points removed by decimation when the tolerance is calibrated.
pub const REMOVAL_TARGET: f64 = 0.7;

/// Validation membership: within each run of ten consecutive patch indices exactly one,
/// picked by a hash of the run number, is held out. Membership never changes as the
/// corpus grows.
pub fn is_val_index(index: usize) -> bool {
    let block = (index / 10) as u64;
    derive_seed(SPLIT_SALT, block) % 10 == (index % 10) as u64
}

const SPLIT_SALT: u64 = 0x5eed_5911;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
}

impl Split {
    pub fn of(n: usize) -> Self {
        let (val, train) = (0..n).partition(|&i| is_val_index(i));
        Self { train, val }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub fov_m: f64,
    pub w: usize,
    /// Patches in meters, corner at the origin.
    pub patches: Vec<HierGraph>,
    pub split: Split,
    pub stats: CorpusStats,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub fov_m: f64,
    pub w: usize,
    /// Fixed decimation tolerance; calibrated to [`REMOVAL_TARGET`] when absent.
    pub curvature_tol: Option<f64>,
    pub patches_per_map: usize,
    pub seed: u64,
}

/// Samples, decimates and converts patches from each map. Patches whose chains overflow
/// `w` after decimation are discarded and redrawn from further indices.
pub fn build_dataset(maps: &[PlainGraph], cfg: &DatasetConfig) -> Result<Dataset> {
    let mut base = PatchConfig::new(cfg.fov_m, 0.0, cfg.seed);
    base.max_local_w = cfg.w;
    base.check()?;
    let per = cfg.patches_per_map;
    let budget = 100 * per.max(1);
    let raw_for = |m: usize, k: usize| {
        let mut pc = base.clone();
        pc.seed = derive_seed(cfg.seed, m as u64);
        sample_patch(&maps[m], &pc, k, 100)
    };

    let tol = match cfg.curvature_tol {
        Some(t) => t,
        None => {
            let mut pool = Vec::new();
            for m in 0..maps.len() {
                for k in 0..per {
                    pool.push(raw_for(m, k)?);
                }
            }
            calibrate_curvature_tol(&pool, REMOVAL_TARGET)?
        }
    };

    let mut raw = Vec::new();
    let mut plain = Vec::new();
    let mut patches = Vec::new();
    for m in 0..maps.len() {
        let mut accepted = 0;
        let mut k = 0;
        while accepted < per {
            if k >= budget {
                return Err(Error::Dataset(format!(
                    "map {m}: only {accepted} of {per} patches fit W={} after {budget} draws",
                    cfg.w
                )));
            }
            let patch = raw_for(m, k)?;
            k += 1;
            let dec = decimate_graph(&patch, tol)?;
            let mut pc = base.clone();
            pc.curvature_tol = tol;
            pc.seed = derive_seed(cfg.seed ^ 0xdf5, (patches.len()) as u64);
            match build_hierarchical(&dec, &pc) {
                Ok(h) => {
                    raw.push(patch);
                    plain.push(dec);
                    patches.push(h);
                    accepted += 1;
                }
                Err(Error::LocalOverflow { .. }) => continue,
                Err(e) => return Err(e),
            }
        }
    }
    let removal = removal_fraction(&raw, tol)?;
    let stats = CorpusStats::compute(&plain, &patches, removal, tol, cfg.w);
    Ok(Dataset {
        fov_m: cfg.fov_m,
        w: cfg.w,
        split: Split::of(patches.len()),
        patches,
        stats,
    })
}

/// Generates `n_cities` cities (seeds `city.seed + i`) and builds a dataset from them.
pub fn synth_corpus(city: &CityConfig, n_cities: usize, cfg: &DatasetConfig) -> Result<Dataset> {
    let maps = (0..n_cities)
        .map(|i| {
            let c = CityConfig {
                seed: city.seed.wrapping_add(i as u64),
                ..city.clone()
            };
            generate_city(&c).map(|c| c.map)
        })
        .collect::<Result<Vec<_>>>()?;
    build_dataset(&maps, cfg)
}

impl Dataset {
    pub fn norm(&self) -> NormTransform {
        NormTransform { fov_m: self.fov_m }
    }

    pub fn train(&self) -> Vec<&HierGraph> {
        self.split.train.iter().map(|&i| &self.patches[i]).collect()
    }

    pub fn val(&self) -> Vec<&HierGraph> {
        self.split.val.iter().map(|&i| &self.patches[i]).collect()
    }

    /// Plain (flattened) views of the given patches.
    pub fn plain(&self, idx: &[usize]) -> Result<Vec<PlainGraph>> {
        idx.iter().map(|&i| flatten(&self.patches[i])).collect()
    }

    /// The given patches, all in the training split.
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        let patches: Vec<HierGraph> = idx.iter().map(|&i| self.patches[i].clone()).collect();
        let train = (0..patches.len()).collect();
        Dataset {
            fov_m: self.fov_m,
            w: self.w,
            patches,
            split: Split { train, val: vec![] },
            stats: self.stats.clone(),
        }
    }

    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        for (i, h) in self.patches.iter().enumerate() {
            io::write_hier(dir.join(format!("patch_{i:05}.json")), h)?;
        }
        std::fs::write(dir.join("split.json"), serde_json::to_string_pretty(&self.split)? + "\n")?;
        std::fs::write(dir.join("stats.json"), serde_json::to_string_pretty(&self.stats)? + "\n")?;
        Ok(())
    }

    pub fn read(dir: impl AsRef<Path>) -> Result<Dataset> {
        let dir = dir.as_ref();
        let split: Split = serde_json::from_str(&std::fs::read_to_string(dir.join("split.json"))?)?;
        let stats: CorpusStats =
            serde_json::from_str(&std::fs::read_to_string(dir.join("stats.json"))?)?;
        let mut patches = Vec::new();
        loop {
            let path = dir.join(format!("patch_{:05}.json", patches.len()));
            if !path.exists() {
                break;
            }
            match io::read_map(&path)? {
                io::MapDoc::Hier(h) => patches.push(h),
                io::MapDoc::Plain(_) => {
                    return Err(Error::Dataset(format!(
                        "{} is not a hierarchical map",
                        path.display()
                    )))
                }
            }
        }
        if patches.is_empty() {
            return Err(Error::Dataset(format!("no patches in {}", dir.display())));
        }
        let n = patches.len();
        if split.train.iter().chain(&split.val).any(|&i| i >= n) {
            return Err(Error::Dataset("split references a missing patch".into()));
        }
        Ok(Dataset {
            fov_m: patches[0].fov_m,
            w: patches[0].w,
            patches,
            split,
            stats,
        })
    }
}
