//! Mixture output heads: diagonal 2D Gaussian mixtures for coordinates and mixtures of
//! independent Bernoullis for adjacency rows, plus the scalar classification losses.
//!
//! Raw GMM rows are laid out `[logits(K), μx(K), μy(K), log σx(K), log σy(K)]`; raw
//! Bernoulli-mixture rows are `[θ logits(Kb), α logits(Kb)]`, one row per candidate edge.

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::tape::{Tape, Var};
use crate::map::Point;
use crate::{Error, Result};

/// Bernoulli probabilities are kept inside `[THETA_CLAMP, 1 − THETA_CLAMP]`.
pub const THETA_CLAMP: f64 = 1e-7;
/// Log-scales are clamped to this range; the gradient is zero outside it.
pub const LOG_SIGMA_RANGE: (f64, f64) = (-9.0, 4.0);

const LN_2PI: f64 = 1.837_877_066_409_345_5;

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|&l| (l - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

fn logsumexp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|&x| (x - m).exp()).sum::<f64>().ln()
}

fn pick(weights: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (k, &w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return k;
        }
    }
    weights.len() - 1
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (k, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = k;
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GmmParams2D {
    pub pi: Vec<f64>,
    pub mu: Vec<Point>,
    pub sigma: Vec<Point>,
}

impl GmmParams2D {
    pub fn new(pi: Vec<f64>, mu: Vec<Point>, sigma: Vec<Point>) -> Result<Self> {
        let k = pi.len();
        if k == 0 || mu.len() != k || sigma.len() != k {
            return Err(Error::Shape(format!(
                "gmm: {} weights, {} means, {} scales",
                k,
                mu.len(),
                sigma.len()
            )));
        }
        if sigma.iter().any(|s| !(s[0] > 0.0 && s[1] > 0.0)) {
            return Err(Error::Config("gmm scale must be positive".into()));
        }
        if (pi.iter().sum::<f64>() - 1.0).abs() > 1e-6 || pi.iter().any(|&p| p < 0.0) {
            return Err(Error::Config("gmm weights must lie on the simplex".into()));
        }
        Ok(Self { pi, mu, sigma })
    }

    /// Decodes one raw head row of width `5K`.
    pub fn from_raw(raw: &[f64]) -> Self {
        let k = raw.len() / 5;
        let ls = |v: f64| v.clamp(LOG_SIGMA_RANGE.0, LOG_SIGMA_RANGE.1).exp();
        Self {
            pi: softmax(&raw[..k]),
            mu: (0..k).map(|j| [raw[k + j], raw[2 * k + j]]).collect(),
            sigma: (0..k).map(|j| [ls(raw[3 * k + j]), ls(raw[4 * k + j])]).collect(),
        }
    }

    pub fn k(&self) -> usize {
        self.pi.len()
    }

    fn log_components(&self, p: Point) -> Vec<f64> {
        (0..self.k())
            .map(|j| {
                let zx = (p[0] - self.mu[j][0]) / self.sigma[j][0];
                let zy = (p[1] - self.mu[j][1]) / self.sigma[j][1];
                self.pi[j].ln() - LN_2PI - self.sigma[j][0].ln() - self.sigma[j][1].ln() - 0.5 * (zx * zx + zy * zy)
            })
            .collect()
    }

    /// `−log Σ_k π_k N(p; μ_k, diag σ_k²)`.
    pub fn nll(&self, p: Point) -> f64 {
        -logsumexp(&self.log_components(p))
    }

    /// Draws a component then a Gaussian with scales `σ τ`; at `τ = 0` returns the mean of
    /// the heaviest component.
    pub fn sample(&self, tau: f64, rng: &mut impl Rng) -> Point {
        if tau <= 0.0 {
            return self.mu[argmax(&self.pi)];
        }
        let k = pick(&self.pi, rng.gen::<f64>());
        let nx: f64 = StandardNormal.sample(rng);
        let ny: f64 = StandardNormal.sample(rng);
        [
            self.mu[k][0] + tau * self.sigma[k][0] * nx,
            self.mu[k][1] + tau * self.sigma[k][1] * ny,
        ]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BernMixParams {
    pub alpha: Vec<f64>,
    /// `theta[k][s]`: probability of candidate edge `s` under component `k`.
    pub theta: Vec<Vec<f64>>,
}

impl BernMixParams {
    pub fn new(alpha: Vec<f64>, theta: Vec<Vec<f64>>) -> Result<Self> {
        if alpha.len() != theta.len() || alpha.is_empty() {
            return Err(Error::Shape("bernoulli mixture: alpha and theta disagree".into()));
        }
        if (alpha.iter().sum::<f64>() - 1.0).abs() > 1e-6 {
            return Err(Error::Config("mixture weights must lie on the simplex".into()));
        }
        let theta = theta
            .into_iter()
            .map(|row| row.into_iter().map(|t| t.clamp(THETA_CLAMP, 1.0 - THETA_CLAMP)).collect())
            .collect();
        Ok(Self { alpha, theta })
    }

    /// Decodes the raw rows of one step (one row per candidate edge).
    pub fn from_raw(raw: &Array2<f64>) -> Self {
        let kb = raw.ncols() / 2;
        let s = raw.nrows();
        let mean: Vec<f64> = (0..kb)
            .map(|k| (0..s).map(|r| raw[[r, kb + k]]).sum::<f64>() / s.max(1) as f64)
            .collect();
        Self {
            alpha: softmax(&mean),
            theta: (0..kb)
                .map(|k| {
                    (0..s)
                        .map(|r| sigmoid(raw[[r, k]]).clamp(THETA_CLAMP, 1.0 - THETA_CLAMP))
                        .collect()
                })
                .collect(),
        }
    }

    fn log_components(&self, edges: &[bool]) -> Vec<f64> {
        self.theta
            .iter()
            .zip(&self.alpha)
            .map(|(th, a)| {
                a.ln()
                    + th.iter()
                        .zip(edges)
                        .map(|(&t, &e)| if e { t.ln() } else { (1.0 - t).ln() })
                        .sum::<f64>()
            })
            .collect()
    }

    /// `log Σ_k α_k Π_s θ_ks^e_s (1 − θ_ks)^(1 − e_s)`.
    pub fn logprob(&self, edges: &[bool]) -> f64 {
        logsumexp(&self.log_components(edges))
    }

    /// Draws a component, then every edge independently.
    pub fn sample(&self, rng: &mut impl Rng) -> Vec<bool> {
        let k = pick(&self.alpha, rng.gen::<f64>());
        self.theta[k].iter().map(|&t| rng.gen::<f64>() < t).collect()
    }
}

/// Weighted sum of GMM negative log-likelihoods, one raw row per target point.
/// Returns the loss node and the per-row NLL.
pub fn gmm_nll_loss(tape: &mut Tape, raw: Var, targets: &[Point], weights: &[f64]) -> (Var, Vec<f64>) {
    let r = tape.value(raw);
    let (rows, width) = r.dim();
    assert_eq!(rows, targets.len());
    let k = width / 5;
    let mut grad = Array2::zeros((rows, width));
    let mut nlls = Vec::with_capacity(rows);
    let mut total = 0.0;
    for i in 0..rows {
        let row = r.row(i);
        let row = row.as_slice().expect("contiguous row");
        let p = GmmParams2D::from_raw(row);
        let comps = p.log_components(targets[i]);
        let lse = logsumexp(&comps);
        nlls.push(-lse);
        total += weights[i] * -lse;
        let w = weights[i];
        for j in 0..k {
            let gamma = (comps[j] - lse).exp();
            let (sx, sy) = (p.sigma[j][0], p.sigma[j][1]);
            let dx = targets[i][0] - p.mu[j][0];
            let dy = targets[i][1] - p.mu[j][1];
            grad[[i, j]] = w * (p.pi[j] - gamma);
            grad[[i, k + j]] = w * -gamma * dx / (sx * sx);
            grad[[i, 2 * k + j]] = w * -gamma * dy / (sy * sy);
            let inside = |v: f64| v > LOG_SIGMA_RANGE.0 && v < LOG_SIGMA_RANGE.1;
            if inside(row[3 * k + j]) {
                grad[[i, 3 * k + j]] = w * -gamma * (dx * dx / (sx * sx) - 1.0);
            }
            if inside(row[4 * k + j]) {
                grad[[i, 4 * k + j]] = w * -gamma * (dy * dy / (sy * sy) - 1.0);
            }
        }
    }
    (tape.fused(total, vec![(raw, grad)]), nlls)
}

/// Weighted sum of Bernoulli-mixture negative log-likelihoods. `segments[i] = (start, len)`
/// selects the candidate rows of step `i`; `targets` holds one flag per row.
/// Returns the loss node and the per-segment negative log-likelihood.
pub fn bernmix_loss(
    tape: &mut Tape,
    raw: Var,
    segments: &[(usize, usize)],
    targets: &[bool],
    weights: &[f64],
) -> (Var, Vec<f64>) {
    let r = tape.value(raw);
    let (rows, width) = r.dim();
    assert_eq!(rows, targets.len());
    let kb = width / 2;
    let mut grad = Array2::zeros((rows, width));
    let mut out = Vec::with_capacity(segments.len());
    let mut total = 0.0;
    for (seg, &(start, len)) in segments.iter().enumerate() {
        if len == 0 {
            out.push(0.0);
            continue;
        }
        let block = r.slice(ndarray::s![start..start + len, ..]).to_owned();
        let p = BernMixParams::from_raw(&block);
        let edges = &targets[start..start + len];
        let comps = p.log_components(edges);
        let lse = logsumexp(&comps);
        out.push(-lse);
        let w = weights[seg];
        total += w * -lse;
        for k in 0..kb {
            let gamma = (comps[k] - lse).exp();
            let ga = w * (p.alpha[k] - gamma) / len as f64;
            for s in 0..len {
                let raw_t = block[[s, k]];
                let t = sigmoid(raw_t);
                let clamped = t <= THETA_CLAMP || t >= 1.0 - THETA_CLAMP;
                if !clamped {
                    let e = if edges[s] { 1.0 } else { 0.0 };
                    grad[[start + s, k]] = w * -gamma * (e - t);
                }
                grad[[start + s, kb + k]] = ga;
            }
        }
    }
    (tape.fused(total, vec![(raw, grad)]), out)
}

/// Weighted binary cross-entropy on logits (`rows×1`). Returns the loss and per-row BCE.
pub fn bce_logits_loss(tape: &mut Tape, logits: Var, targets: &[bool], weights: &[f64]) -> (Var, Vec<f64>) {
    let l = tape.value(logits);
    let rows = l.nrows();
    let mut grad = Array2::zeros((rows, 1));
    let mut each = Vec::with_capacity(rows);
    let mut total = 0.0;
    for i in 0..rows {
        let x = l[[i, 0]];
        let y = if targets[i] { 1.0 } else { 0.0 };
        // log(1 + e^x) − y x, evaluated stably
        let bce = x.max(0.0) - x * y + (-x.abs()).exp().ln_1p();
        each.push(bce);
        total += weights[i] * bce;
        grad[[i, 0]] = weights[i] * (sigmoid(x) - y);
    }
    (tape.fused(total, vec![(logits, grad)]), each)
}

/// Weighted softmax cross-entropy. Returns the loss and per-row cross-entropy.
pub fn cross_entropy_loss(tape: &mut Tape, logits: Var, targets: &[usize], weights: &[f64]) -> (Var, Vec<f64>) {
    let l = tape.value(logits);
    let (rows, c) = l.dim();
    let mut grad = Array2::zeros((rows, c));
    let mut each = Vec::with_capacity(rows);
    let mut total = 0.0;
    for i in 0..rows {
        let row: Vec<f64> = l.row(i).to_vec();
        let lse = logsumexp(&row);
        let ce = lse - row[targets[i]];
        each.push(ce);
        total += weights[i] * ce;
        for j in 0..c {
            let p = (row[j] - lse).exp();
            grad[[i, j]] = weights[i] * (p - f64::from(u8::from(j == targets[i])));
        }
    }
    (tape.fused(total, vec![(logits, grad)]), each)
}

pub fn sample_categorical(logits: &[f64], tau: f64, rng: &mut impl Rng) -> usize {
    if tau <= 0.0 {
        return argmax(logits);
    }
    pick(&softmax(logits), rng.gen::<f64>())
}

pub fn logistic(x: f64) -> f64 {
    sigmoid(x)
}
