//! Student-t location posterior under a flat prior.
//!
//! `log pi(x) = -(nu+d)/2 * sum_j log(nu + |x - Y_j|^2)` up to an additive
//! constant. The score `S_n = sum_j (x - Y_j)/(nu + |x - Y_j|^2)` equals
//! `-grad log pi / (nu + d)` and its Jacobian `S'_n` is the information
//! matrix. No normalization constant is ever computed.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{config, domain, Error, Result};
use crate::heavytail::{norm, Dataset};

/// Likelihood degrees of freedom and dimension.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub nu: f64,
    pub d: usize,
}

impl Model {
    pub fn new(nu: f64, d: usize) -> Result<Self> {
        if !(nu > 0.0 && nu.is_finite()) {
            return Err(config(format!("nu must be positive and finite, got {nu}")));
        }
        if d < 1 {
            return Err(config("dimension must be at least 1"));
        }
        Ok(Model { nu, d })
    }

    /// Global bound `1/(2 sqrt(nu))` on `|S(x, y)|`.
    pub fn term_bound(&self) -> f64 {
        0.5 / self.nu.sqrt()
    }

    pub(crate) fn check(&self, ds: &Dataset, x: &[f64]) -> Result<()> {
        if ds.dim() != self.d {
            return Err(Error::Shape { expected: self.d, got: ds.dim() });
        }
        if x.len() != self.d {
            return Err(Error::Shape { expected: self.d, got: x.len() });
        }
        Ok(())
    }
}

/// Score, information matrix and unnormalized log density at one point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub value: Vec<f64>,
    /// Row-major `d x d`, symmetric.
    pub info: Vec<f64>,
    pub log_density: f64,
}

/// Single-observation score `(x - y)/(nu + |x - y|^2)`.
pub fn score_term(model: &Model, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
    if x.len() != y.len() {
        return Err(Error::Shape { expected: x.len(), got: y.len() });
    }
    let q = model.nu + x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    Ok(x.iter().zip(y).map(|(a, b)| (a - b) / q).collect())
}

#[inline]
pub(crate) fn term_1d(nu: f64, u: f64) -> f64 {
    u / (nu + u * u)
}

#[inline]
pub(crate) fn score_1d(nu: f64, pts: &[f64], x: f64) -> f64 {
    pts.iter().map(|&y| term_1d(nu, x - y)).sum()
}

pub(crate) fn score_into(model: &Model, pts: &[f64], x: &[f64], skip: Option<usize>, out: &mut [f64]) {
    let d = model.d;
    out.iter_mut().for_each(|v| *v = 0.0);
    if d == 1 {
        let x0 = x[0];
        let mut s = 0.0;
        for (j, &y) in pts.iter().enumerate() {
            if Some(j) != skip {
                s += term_1d(model.nu, x0 - y);
            }
        }
        out[0] = s;
        return;
    }
    let mut diff = vec![0.0; d];
    for (j, y) in pts.chunks_exact(d).enumerate() {
        if Some(j) == skip {
            continue;
        }
        let mut q = model.nu;
        for i in 0..d {
            diff[i] = x[i] - y[i];
            q += diff[i] * diff[i];
        }
        for i in 0..d {
            out[i] += diff[i] / q;
        }
    }
}

/// Empirical score `S_n(x)`.
pub fn score(model: &Model, ds: &Dataset, x: &[f64]) -> Result<Vec<f64>> {
    model.check(ds, x)?;
    let mut out = vec![0.0; model.d];
    score_into(model, ds.flat(), x, None, &mut out);
    Ok(out)
}

pub(crate) fn info_into(model: &Model, pts: &[f64], x: &[f64], out: &mut [f64]) {
    let d = model.d;
    out.iter_mut().for_each(|v| *v = 0.0);
    if d == 1 {
        let nu = model.nu;
        out[0] = pts
            .iter()
            .map(|&y| {
                let u2 = (x[0] - y) * (x[0] - y);
                (nu - u2) / ((nu + u2) * (nu + u2))
            })
            .sum();
        return;
    }
    let mut diff = vec![0.0; d];
    for y in pts.chunks_exact(d) {
        let mut q = model.nu;
        for i in 0..d {
            diff[i] = x[i] - y[i];
            q += diff[i] * diff[i];
        }
        let a = 1.0 / q;
        let b = 2.0 / (q * q);
        for i in 0..d {
            out[i * d + i] += a;
            for j in 0..d {
                out[i * d + j] -= b * diff[i] * diff[j];
            }
        }
    }
    // exact symmetry regardless of summation order
    for i in 0..d {
        for j in 0..i {
            let m = 0.5 * (out[i * d + j] + out[j * d + i]);
            out[i * d + j] = m;
            out[j * d + i] = m;
        }
    }
}

/// Information matrix `S'_n(x)` (row-major `d x d`).
pub fn info_matrix(model: &Model, ds: &Dataset, x: &[f64]) -> Result<Vec<f64>> {
    model.check(ds, x)?;
    let mut out = vec![0.0; model.d * model.d];
    info_into(model, ds.flat(), x, &mut out);
    Ok(out)
}

pub(crate) fn log_density_flat(model: &Model, pts: &[f64], x: &[f64]) -> f64 {
    let d = model.d;
    let nu = model.nu;
    let s: f64 = if d == 1 {
        pts.iter().map(|&y| (nu + (x[0] - y) * (x[0] - y)).ln()).sum()
    } else {
        pts.chunks_exact(d)
            .map(|y| (nu + y.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()).ln())
            .sum()
    };
    -0.5 * (nu + d as f64) * s
}

/// Unnormalized log posterior density.
pub fn log_density_unnorm(model: &Model, ds: &Dataset, x: &[f64]) -> Result<f64> {
    model.check(ds, x)?;
    Ok(log_density_flat(model, ds.flat(), x))
}

pub fn evaluate(model: &Model, ds: &Dataset, x: &[f64]) -> Result<ScoreReport> {
    Ok(ScoreReport {
        value: score(model, ds, x)?,
        info: info_matrix(model, ds, x)?,
        log_density: log_density_unnorm(model, ds, x)?,
    })
}

/// The ball `F_n = {x : |x - Y_(n-k)| < 2|Y_(n-k)|/n}` around an anchor.
#[derive(Debug, Clone)]
pub struct AnchorBall {
    pub anchor_index: usize,
    pub center: Vec<f64>,
    pub radius: f64,
}

impl AnchorBall {
    pub fn new(ds: &Dataset, k: usize) -> Result<Self> {
        let a = ds.order_index(k)?;
        let center = ds.point(a).to_vec();
        let r = norm(&center);
        if r == 0.0 {
            return Err(domain("anchor at the origin: F_n is degenerate"));
        }
        Ok(AnchorBall { anchor_index: a, radius: 2.0 * r / ds.len() as f64, center })
    }

    /// Strict membership.
    pub fn contains(&self, x: &[f64]) -> bool {
        crate::heavytail::dist(x, &self.center) < self.radius
    }
}

/// Approximate score: `S_n` outside `F_n`, and
/// `(n-1) x/|x|^2 + S(x, Y_(n-k))` inside it.
pub fn approx_score(model: &Model, ds: &Dataset, k: usize, x: &[f64]) -> Result<Vec<f64>> {
    model.check(ds, x)?;
    let ball = AnchorBall::new(ds, k)?;
    if !ball.contains(x) {
        return score(model, ds, x);
    }
    let n1 = (ds.len() - 1) as f64;
    let r2: f64 = x.iter().map(|v| v * v).sum();
    let t = score_term(model, x, &ball.center)?;
    Ok(x.iter().zip(t).map(|(xi, ti)| n1 * xi / r2 + ti).collect())
}

/// Deterministic unit directions. In 1D the two signs; in 2D `m` equally
/// spaced angles (nested under doubling); in higher dimension the first `m`
/// points of a Halton sequence pushed through the Gaussian quantile and
/// normalized (prefix-nested).
pub fn sphere_directions(d: usize, m: usize) -> Vec<Vec<f64>> {
    match d {
        1 => vec![vec![1.0], vec![-1.0]],
        2 => (0..m)
            .map(|j| {
                let th = std::f64::consts::TAU * j as f64 / m as f64;
                vec![th.cos(), th.sin()]
            })
            .collect(),
        _ => {
            const PRIMES: [u64; 16] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53];
            let mut out = Vec::with_capacity(m);
            let mut i = 1u64;
            while out.len() < m {
                let v: Vec<f64> = (0..d)
                    .map(|c| {
                        let u = radical_inverse(i, PRIMES[c % PRIMES.len()]);
                        std::f64::consts::SQRT_2 * statrs::function::erf::erf_inv(2.0 * u - 1.0)
                    })
                    .collect();
                let len = norm(&v);
                if len > 0.0 && len.is_finite() {
                    out.push(v.iter().map(|c| c / len).collect());
                }
                i += 1;
            }
            out
        }
    }
}

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while i > 0 {
        f /= base as f64;
        r += f * (i % base) as f64;
        i /= base;
    }
    r
}

/// Grid over a ball of radius `radius` about `center`: in 1D `m` uniform
/// steps across the diameter, in d >= 2 `m` radii times `m` directions.
/// Dyadic refinement (`m -> 2m`) produces a superset.
pub(crate) fn ball_grid(center: &[f64], radius: f64, m: usize, closed: bool) -> Vec<Vec<f64>> {
    let d = center.len();
    let mut pts = Vec::new();
    if d == 1 {
        let range = if closed { 0..=m } else { 1..=(m - 1) };
        for i in range {
            let t = 2.0 * i as f64 / m as f64 - 1.0;
            pts.push(vec![center[0] + radius * t]);
        }
        return pts;
    }
    pts.push(center.to_vec());
    let dirs = sphere_directions(d, m);
    let top = if closed { m } else { m - 1 };
    for i in 1..=top {
        let r = radius * i as f64 / m as f64;
        for v in &dirs {
            pts.push(center.iter().zip(v).map(|(c, vi)| c + r * vi).collect());
        }
    }
    pts
}

/// Grid supremum over `F_n` of `|S_n - S^_n|`. Outside `F_n` the two agree,
/// so this is the supremum over all of R^d up to grid resolution.
pub fn score_deviation_sup(model: &Model, ds: &Dataset, k: usize, grid_resolution: usize) -> Result<f64> {
    if grid_resolution < 64 {
        return Err(config(format!("grid resolution must be at least 64, got {grid_resolution}")));
    }
    if ds.dim() != model.d {
        return Err(Error::Shape { expected: model.d, got: ds.dim() });
    }
    let ball = AnchorBall::new(ds, k)?;
    let grid = ball_grid(&ball.center, ball.radius, grid_resolution, false);
    let n1 = (ds.len() - 1) as f64;
    let pts = ds.flat();
    let sup = grid
        .par_iter()
        .map(|x| {
            let mut s = vec![0.0; model.d];
            score_into(model, pts, x, Some(ball.anchor_index), &mut s);
            let r2: f64 = x.iter().map(|v| v * v).sum();
            if n1 == 0.0 {
                return norm(&s);
            }
            if r2 == 0.0 {
                return f64::INFINITY;
            }
            s.iter().zip(x).map(|(si, xi)| (si - n1 * xi / r2).powi(2)).sum::<f64>().sqrt()
        })
        .reduce(|| 0.0, f64::max);
    Ok(sup)
}

/// Grid supremum over the closed ball `|x - z| <= 2|z|/n` of
/// `(2|z|/n) |S_n(x) - n x/|x|^2|`.
pub fn score_roughness(model: &Model, ds: &Dataset, z: &[f64], grid_resolution: usize) -> Result<f64> {
    model.check(ds, z)?;
    if grid_resolution < 2 {
        return Err(config("grid resolution must be at least 2"));
    }
    let rz = norm(z);
    if rz == 0.0 {
        return Err(domain("z must be nonzero"));
    }
    let n = ds.len() as f64;
    let radius = 2.0 * rz / n;
    let grid = ball_grid(z, radius, grid_resolution, true);
    let pts = ds.flat();
    let sup = grid
        .par_iter()
        .filter_map(|x| {
            let r2: f64 = x.iter().map(|v| v * v).sum();
            if r2 == 0.0 {
                return None;
            }
            let mut s = vec![0.0; model.d];
            score_into(model, pts, x, None, &mut s);
            Some(s.iter().zip(x).map(|(si, xi)| (si - n * xi / r2).powi(2)).sum::<f64>().sqrt())
        })
        .reduce(|| 0.0, f64::max);
    Ok(radius * sup)
}
