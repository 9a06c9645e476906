use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    degree_hist, diversity_report, frechet_normal, laplacian_spectrum, map_points, median_sigma, mmd, urban_features,
    dead_ends, FeatureSample, Histogram, LatencyStats, DEAD_END_MARGIN_FRAC, SPECTRUM_BINS,
};
use crate::map::PlainGraph;
use crate::preprocess::derive_seed;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub seed: u64,
    pub region_radius_m: f64,
    pub n_probes: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            region_radius_m: 20.0,
            n_probes: 32,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalMeta {
    pub seed: u64,
    pub sigma_degree: f64,
    pub sigma_spectrum: f64,
    pub region_radius_m: f64,
    pub n_probes: usize,
    pub spectrum_bins: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mmd_degree: f64,
    pub mmd_spectrum: f64,
    /// Per urban feature; features missing on one side are left out.
    pub frechet: BTreeMap<String, f64>,
    /// Absent when fewer than two samples are non-empty.
    pub chamfer_to_gt: Option<f64>,
    pub chamfer_internal: Option<f64>,
    /// Mean interior degree-1 nodes per sample map.
    pub dead_end_rate: f64,
    pub reference_dead_end_rate: f64,
    pub latency: BTreeMap<String, LatencyStats>,
    pub n_samples: usize,
    /// Samples with no nodes; they are counted but excluded from every score.
    pub n_empty_samples: usize,
    pub n_reference: usize,
    pub meta: EvalMeta,
}

/// Probe streams depend only on the seed and the map's position, so a set compared with
/// itself gets identical features.
fn features(maps: &[&PlainGraph], cfg: &EvalConfig) -> Result<Vec<FeatureSample>> {
    maps.iter()
        .enumerate()
        .map(|(i, g)| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, i as u64));
            urban_features(g, cfg.region_radius_m, cfg.n_probes, &mut rng)
        })
        .collect()
}

fn mean_dead_ends(maps: &[&PlainGraph]) -> f64 {
    let total: usize = maps.iter().map(|g| dead_ends(g, DEAD_END_MARGIN_FRAC * g.fov_m)).sum();
    total as f64 / maps.len() as f64
}

/// Scores generated maps against reference maps, both in meters.
pub fn evaluate(samples: &[PlainGraph], reference: &[PlainGraph], cfg: &EvalConfig) -> Result<MetricsReport> {
    let sams: Vec<&PlainGraph> = samples.iter().filter(|g| !g.nodes.is_empty()).collect();
    let refs: Vec<&PlainGraph> = reference.iter().filter(|g| !g.nodes.is_empty()).collect();
    if sams.is_empty() || refs.len() < 2 {
        return Err(Error::Config(
            "evaluation needs at least one non-empty sample and two non-empty reference maps".into(),
        ));
    }
    let hists = |maps: &[&PlainGraph], f: fn(&PlainGraph) -> Result<Histogram>| -> Result<Vec<Histogram>> {
        maps.iter().map(|g| f(g)).collect()
    };
    let (deg_s, deg_r) = (hists(&sams, degree_hist)?, hists(&refs, degree_hist)?);
    let (spec_s, spec_r) = (hists(&sams, laplacian_spectrum)?, hists(&refs, laplacian_spectrum)?);
    let sigma_degree = median_sigma(&deg_r);
    let sigma_spectrum = median_sigma(&spec_r);

    let fs = features(&sams, cfg)?;
    let fr = features(&refs, cfg)?;
    let mut frechet = BTreeMap::new();
    for name in FeatureSample::NAMES {
        let a: Vec<f64> = fs.iter().filter_map(|f| f.get(name)).collect();
        let b: Vec<f64> = fr.iter().filter_map(|f| f.get(name)).collect();
        if a.len() >= 2 && b.len() >= 2 {
            frechet.insert(name.to_string(), frechet_normal(&a, &b)?);
        }
    }

    let (chamfer_to_gt, chamfer_internal) = if sams.len() >= 2 {
        let ps: Vec<_> = sams.iter().map(|g| map_points(g)).collect();
        let pr: Vec<_> = refs.iter().map(|g| map_points(g)).collect();
        let (a, b) = diversity_report(&ps, &pr)?;
        (Some(a), Some(b))
    } else {
        (None, None)
    };

    Ok(MetricsReport {
        // Tiny negative values are rounding in the V-statistic.
        mmd_degree: mmd(&deg_s, &deg_r, sigma_degree)?.max(0.0),
        mmd_spectrum: mmd(&spec_s, &spec_r, sigma_spectrum)?.max(0.0),
        frechet,
        chamfer_to_gt,
        chamfer_internal,
        dead_end_rate: mean_dead_ends(&sams),
        reference_dead_end_rate: mean_dead_ends(&refs),
        latency: BTreeMap::new(),
        n_samples: samples.len(),
        n_empty_samples: samples.len() - sams.len(),
        n_reference: reference.len(),
        meta: EvalMeta {
            seed: cfg.seed,
            sigma_degree,
            sigma_spectrum,
            region_radius_m: cfg.region_radius_m,
            n_probes: cfg.n_probes,
            spectrum_bins: SPECTRUM_BINS,
        },
    })
}
