//! Fidelity, diversity and latency measures over sets of generated maps.

mod chamfer;
mod report;
mod urban;

use std::time::Instant;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::map::PlainGraph;
use crate::{Error, Result};

pub use chamfer::{chamfer, chamfer_brute, diversity_report, map_points};
pub use report::{evaluate, EvalConfig, EvalMeta, MetricsReport};
pub use urban::{dead_ends, mean_path_length, urban_features, FeatureSample, DEAD_END_MARGIN_FRAC};

pub const SPECTRUM_BINS: usize = 200;

/// A histogram over equal-width bins starting at zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub counts: Vec<f64>,
    pub bin_width: f64,
}

impl Histogram {
    fn normalized(&self) -> Vec<f64> {
        let total: f64 = self.counts.iter().sum();
        if total > 0.0 {
            self.counts.iter().map(|c| c / total).collect()
        } else {
            self.counts.clone()
        }
    }

    /// First Wasserstein distance between the two normalized histograms.
    pub fn w1(&self, other: &Histogram) -> f64 {
        let (a, b) = (self.normalized(), other.normalized());
        let n = a.len().max(b.len());
        let (mut ca, mut cb, mut d) = (0.0, 0.0, 0.0);
        for i in 0..n {
            ca += a.get(i).copied().unwrap_or(0.0);
            cb += b.get(i).copied().unwrap_or(0.0);
            d += (ca - cb).abs();
        }
        d * self.bin_width
    }
}

/// Node count per degree, `0..=max_degree`.
pub fn degree_hist(g: &PlainGraph) -> Result<Histogram> {
    if g.nodes.is_empty() {
        return Err(Error::EmptyMap);
    }
    let deg = g.degrees();
    let mut counts = vec![0.0; deg.iter().max().unwrap() + 1];
    for d in deg {
        counts[d] += 1.0;
    }
    Ok(Histogram { counts, bin_width: 1.0 })
}

/// Ascending eigenvalues of `I - D^-1/2 A D^-1/2`; isolated nodes get a zero diagonal.
pub fn laplacian_eigenvalues(g: &PlainGraph) -> Result<Vec<f64>> {
    let n = g.nodes.len();
    if n == 0 {
        return Err(Error::EmptyMap);
    }
    let deg = g.degrees();
    let mut l = DMatrix::<f64>::zeros(n, n);
    for (i, &d) in deg.iter().enumerate() {
        if d > 0 {
            l[(i, i)] = 1.0;
        }
    }
    for &(a, b) in &g.edges {
        let w = 1.0 / ((deg[a] * deg[b]) as f64).sqrt();
        l[(a, b)] -= w;
        l[(b, a)] -= w;
    }
    let mut ev: Vec<f64> = SymmetricEigen::new(l).eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    Ok(ev)
}

/// Normalized Laplacian spectrum binned into [`SPECTRUM_BINS`] bins over `[0, 2]`.
pub fn laplacian_spectrum(g: &PlainGraph) -> Result<Histogram> {
    let width = 2.0 / SPECTRUM_BINS as f64;
    let mut counts = vec![0.0; SPECTRUM_BINS];
    for ev in laplacian_eigenvalues(g)? {
        let bin = ((ev / width).floor().max(0.0) as usize).min(SPECTRUM_BINS - 1);
        counts[bin] += 1.0;
    }
    Ok(Histogram { counts, bin_width: width })
}

fn kernel(a: &Histogram, b: &Histogram, sigma: f64) -> f64 {
    let d = a.w1(b);
    (-d * d / (2.0 * sigma * sigma)).exp()
}

/// Biased squared MMD with the Gaussian-of-W1 kernel.
pub fn mmd(a: &[Histogram], b: &[Histogram], sigma: f64) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Config("mmd needs two non-empty sets".into()));
    }
    if !(sigma > 0.0) {
        return Err(Error::Config(format!("mmd bandwidth must be > 0, got {sigma}")));
    }
    let mean = |x: &[Histogram], y: &[Histogram]| {
        let mut s = 0.0;
        for p in x {
            for q in y {
                s += kernel(p, q, sigma);
            }
        }
        s / (x.len() * y.len()) as f64
    };
    Ok(mean(a, a) + mean(b, b) - 2.0 * mean(a, b))
}

/// Median pairwise W1 distance of a reference set, or 1 when it has no positive pair.
pub fn median_sigma(reference: &[Histogram]) -> f64 {
    let mut d = Vec::new();
    for (i, p) in reference.iter().enumerate() {
        for q in &reference[i + 1..] {
            d.push(p.w1(q));
        }
    }
    d.retain(|&x| x > 0.0);
    if d.is_empty() {
        return 1.0;
    }
    d.sort_by(f64::total_cmp);
    let m = d.len() / 2;
    if d.len() % 2 == 1 {
        d[m]
    } else {
        0.5 * (d[m - 1] + d[m])
    }
}

fn moments(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mu = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n;
    (mu, var.sqrt())
}

/// Squared Fréchet distance between 1D normals fitted to each side by moments.
pub fn frechet_normal(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::Config("frechet distance needs at least 2 samples per side".into()));
    }
    let (ma, sa) = moments(a);
    let (mb, sb) = moments(b);
    Ok((ma - mb).powi(2) + (sa - sb).powi(2))
}

/// Pooled degree distribution of a set of maps, normalized to sum 1.
pub fn pooled_degree_dist(maps: &[PlainGraph]) -> Vec<f64> {
    let mut counts: Vec<f64> = Vec::new();
    for g in maps {
        for d in g.degrees() {
            if counts.len() <= d {
                counts.resize(d + 1, 0.0);
            }
            counts[d] += 1.0;
        }
    }
    let total: f64 = counts.iter().sum();
    if total > 0.0 {
        counts.iter_mut().for_each(|c| *c /= total);
    }
    counts
}

/// L1 distance between two distributions over `0..`.
pub fn l1(a: &[f64], b: &[f64]) -> f64 {
    (0..a.len().max(b.len()))
        .map(|i| (a.get(i).unwrap_or(&0.0) - b.get(i).unwrap_or(&0.0)).abs())
        .sum()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub mean_s: f64,
    pub std_s: f64,
    pub n: usize,
}

/// Times `n` calls of `f` after `warmup` untimed ones, on the calling thread.
pub fn latency_bench(n: usize, warmup: usize, mut f: impl FnMut(usize) -> Result<()>) -> Result<LatencyStats> {
    if n == 0 {
        return Err(Error::Config("latency bench needs at least one sample".into()));
    }
    for i in 0..warmup {
        f(i)?;
    }
    let mut times = Vec::with_capacity(n);
    for i in 0..n {
        let t0 = Instant::now();
        f(warmup + i)?;
        times.push(t0.elapsed().as_secs_f64());
    }
    let (mean_s, std_s) = moments(&times);
    Ok(LatencyStats { mean_s, std_s, n })
}
