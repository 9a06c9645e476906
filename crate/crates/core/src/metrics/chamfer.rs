use crate::map::{PlainGraph, Point};
use crate::preprocess::NormTransform;
use crate::{Error, Result};

/// Reported Chamfer scores are multiplied by this.
pub const CHAMFER_SCALE: f64 = 1e4;

/// All control points of a map in normalized coordinates.
pub fn map_points(g: &PlainGraph) -> Vec<Point> {
    let n = NormTransform { fov_m: g.fov_m };
    g.nodes.iter().map(|&p| n.apply(p)).collect()
}

fn d2(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

/// Mean over `a` of the squared distance to the nearest point of `b`, which must be sorted by x.
fn directed(a: &[Point], b: &[Point]) -> f64 {
    let mut sum = 0.0;
    for &p in a {
        let start = b.partition_point(|q| q[0] < p[0]);
        let mut best = f64::INFINITY;
        for q in &b[start..] {
            if (q[0] - p[0]).powi(2) >= best {
                break;
            }
            best = best.min(d2(p, *q));
        }
        for q in b[..start].iter().rev() {
            if (q[0] - p[0]).powi(2) >= best {
                break;
            }
            best = best.min(d2(p, *q));
        }
        sum += best;
    }
    sum / a.len() as f64
}

fn sorted(p: &[Point]) -> Vec<Point> {
    let mut v = p.to_vec();
    v.sort_by(|a, b| a[0].total_cmp(&b[0]));
    v
}

/// Symmetric Chamfer distance between two point sets.
pub fn chamfer(a: &[Point], b: &[Point]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyMap);
    }
    Ok(directed(a, &sorted(b)) + directed(b, &sorted(a)))
}

/// Quadratic reference implementation of [`chamfer`].
pub fn chamfer_brute(a: &[Point], b: &[Point]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyMap);
    }
    let dir = |x: &[Point], y: &[Point]| {
        x.iter()
            .map(|&p| y.iter().map(|&q| d2(p, q)).fold(f64::INFINITY, f64::min))
            .sum::<f64>()
            / x.len() as f64
    };
    Ok(dir(a, b) + dir(b, a))
}

/// `(chamfer_to_gt, chamfer_internal)`, both scaled by [`CHAMFER_SCALE`]: the mean over
/// samples of the closest reference map, and the mean over distinct sample pairs.
pub fn diversity_report(samples: &[Vec<Point>], reference: &[Vec<Point>]) -> Result<(f64, f64)> {
    if samples.len() < 2 || reference.is_empty() {
        return Err(Error::Config("diversity needs at least 2 samples and 1 reference map".into()));
    }
    let refs: Vec<Vec<Point>> = reference.iter().map(|r| sorted(r)).collect();
    let sams: Vec<Vec<Point>> = samples.iter().map(|s| sorted(s)).collect();
    let pair = |a: &Vec<Point>, b: &Vec<Point>| -> Result<f64> {
        if a.is_empty() || b.is_empty() {
            return Err(Error::EmptyMap);
        }
        Ok(directed(a, b) + directed(b, a))
    };
    let mut to_gt = 0.0;
    for s in &sams {
        let mut best = f64::INFINITY;
        for r in &refs {
            best = best.min(pair(s, r)?);
        }
        to_gt += best;
    }
    let mut internal = 0.0;
    let mut pairs = 0usize;
    for (i, a) in sams.iter().enumerate() {
        for b in &sams[i + 1..] {
            internal += pair(a, b)?;
            pairs += 1;
        }
    }
    Ok((
        CHAMFER_SCALE * to_gt / sams.len() as f64,
        CHAMFER_SCALE * internal / pairs as f64,
    ))
}
