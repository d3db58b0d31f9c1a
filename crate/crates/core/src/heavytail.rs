//! Heavy-tailed data generation and extreme order statistics.
//!
//! Data are i.i.d. standard multivariate Student-t with `beta` degrees of
//! freedom, built as a standard Gaussian vector divided by the square root
//! of an independent chi-square(beta)/beta variate. The radial law has a
//! regularly varying tail `P(|Y| > r) ~ A r^{-beta}`.

use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::{beta::beta_reg, gamma::ln_gamma};

use crate::error::{config, domain, Error, Result};
use crate::rng;

/// Generation parameters of a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    pub beta: f64,
    pub d: usize,
    pub n: usize,
    pub seed: u64,
}

impl DataConfig {
    pub fn new(beta: f64, d: usize, n: usize, seed: u64) -> Result<Self> {
        let cfg = DataConfig { beta, d, n, seed };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(config(format!("beta must be positive and finite, got {}", self.beta)));
        }
        if self.d < 1 {
            return Err(config("dimension must be at least 1"));
        }
        if self.n < 2 {
            return Err(config(format!("sample size must be at least 2, got {}", self.n)));
        }
        Ok(())
    }
}

/// An immutable point cloud with its points sorted by Euclidean norm.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    d: usize,
    points: Vec<f64>,
    norms: Vec<f64>,
    radius_order: Vec<usize>,
    config: Option<DataConfig>,
}

impl Dataset {
    /// Builds a dataset from row-major coordinates (`n * d` values).
    pub fn from_flat(d: usize, points: Vec<f64>) -> Result<Self> {
        if d == 0 {
            return Err(config("dimension must be at least 1"));
        }
        if !points.len().is_multiple_of(d) {
            return Err(Error::Shape { expected: d, got: points.len() % d });
        }
        if points.iter().any(|v| !v.is_finite()) {
            return Err(domain("dataset contains non-finite coordinates"));
        }
        let norms: Vec<f64> = points.chunks_exact(d).map(norm).collect();
        let mut radius_order: Vec<usize> = (0..norms.len()).collect();
        // stable: equal radii keep their original index order
        radius_order.sort_by(|&a, &b| norms[a].total_cmp(&norms[b]));
        Ok(Dataset { d, points, norms, radius_order, config: None })
    }

    pub fn from_points(points: &[Vec<f64>]) -> Result<Self> {
        let d = points.first().map(|p| p.len()).unwrap_or(1);
        let mut flat = Vec::with_capacity(points.len() * d);
        for p in points {
            if p.len() != d {
                return Err(Error::Shape { expected: d, got: p.len() });
            }
            flat.extend_from_slice(p);
        }
        Self::from_flat(d, flat)
    }

    /// One-dimensional convenience constructor.
    pub fn from_scalars(values: &[f64]) -> Result<Self> {
        Self::from_flat(1, values.to_vec())
    }

    fn with_config(mut self, cfg: DataConfig) -> Self {
        self.config = Some(cfg);
        self
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn len(&self) -> usize {
        self.norms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.norms.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.d..(i + 1) * self.d]
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.points.chunks_exact(self.d)
    }

    /// Row-major coordinates.
    pub fn flat(&self) -> &[f64] {
        &self.points
    }

    pub fn norm_of(&self, i: usize) -> f64 {
        self.norms[i]
    }

    pub fn radius_order(&self) -> &[usize] {
        &self.radius_order
    }

    pub fn config(&self) -> Option<&DataConfig> {
        self.config.as_ref()
    }

    /// Index (into the original point list) of `Y_(n-k)`, the point with the
    /// (k+1)-th largest norm.
    pub fn order_index(&self, k: usize) -> Result<usize> {
        let n = self.len();
        if k >= n {
            return Err(Error::Index { index: k, len: n });
        }
        Ok(self.radius_order[n - 1 - k])
    }

    /// Copy with every coordinate shifted by `c`.
    pub fn translated(&self, c: &[f64]) -> Result<Self> {
        if c.len() != self.d {
            return Err(Error::Shape { expected: self.d, got: c.len() });
        }
        let pts = self
            .points
            .chunks_exact(self.d)
            .flat_map(|p| p.iter().zip(c).map(|(a, b)| a + b))
            .collect();
        Self::from_flat(self.d, pts)
    }

    /// Copy reflected through the origin.
    pub fn mirrored(&self) -> Self {
        let mut out = self.clone();
        out.points.iter_mut().for_each(|v| *v = -*v);
        out
    }
}

pub(crate) fn norm(p: &[f64]) -> f64 {
    p.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub(crate) fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn draw_t_point<R: Rng + ?Sized>(rng: &mut R, chi: &ChiSquared<f64>, beta: f64, out: &mut [f64]) {
    let w: f64 = chi.sample(rng) / beta;
    let scale = w.sqrt().recip();
    for v in out.iter_mut() {
        let z: f64 = StandardNormal.sample(rng);
        *v = z * scale;
    }
}

/// Draws `n` i.i.d. standard multivariate-t points. Identical configs give
/// bit-identical datasets.
pub fn sample_dataset(cfg: &DataConfig) -> Result<Dataset> {
    cfg.validate()?;
    let mut rng = rng::stream(cfg.seed, &[0]);
    let chi = ChiSquared::new(cfg.beta).map_err(|e| config(e.to_string()))?;
    let mut pts = vec![0.0; cfg.n * cfg.d];
    for p in pts.chunks_exact_mut(cfg.d) {
        draw_t_point(&mut rng, &chi, cfg.beta, p);
    }
    Ok(Dataset::from_flat(cfg.d, pts)?.with_config(*cfg))
}

/// Draws a dataset whose `top` largest radii come from the Rényi
/// representation of the upper order statistics, followed by `n - top`
/// points drawn conditionally below the smallest of those radii.
///
/// The marginal law of the dataset is exactly that of [`sample_dataset`];
/// what changes is the coupling across `n`: configs that differ only in `n`
/// share the uniforms driving the top radii and their directions, so
/// `|Y_(n-k)| / n^{1/beta}` is nearly identical across sample sizes.
pub fn sample_dataset_coupled(cfg: &DataConfig, top: usize) -> Result<Dataset> {
    cfg.validate()?;
    if top == 0 || top > cfg.n {
        return Err(config(format!("top must lie in 1..={}, got {top}", cfg.n)));
    }
    let mut rng = rng::stream(cfg.seed, &[1]);
    let chi = ChiSquared::new(cfg.beta).map_err(|e| config(e.to_string()))?;
    let d = cfg.d;
    // log U_(n), log U_(n-1), ... of the uniform order statistics
    let mut log_u = 0.0;
    let mut radii = Vec::with_capacity(top);
    for i in 0..top {
        let v: f64 = 1.0 - rng.random::<f64>();
        log_u += v.ln() / (cfg.n - i) as f64;
        let tail = -log_u.exp_m1();
        radii.push(radial_tail_inverse(cfg.beta, d, tail)?);
    }
    let mut pts = Vec::with_capacity(cfg.n * d);
    let mut top_pts = Vec::with_capacity(top * d);
    for &r in &radii {
        let mut dir = vec![0.0; d];
        loop {
            for v in dir.iter_mut() {
                *v = StandardNormal.sample(&mut rng);
            }
            let len = norm(&dir);
            if len > 0.0 {
                dir.iter_mut().for_each(|v| *v *= r / len);
                break;
            }
        }
        top_pts.extend_from_slice(&dir);
    }
    let cap = *radii.last().expect("top >= 1");
    let mut buf = vec![0.0; d];
    while pts.len() < (cfg.n - top) * d {
        draw_t_point(&mut rng, &chi, cfg.beta, &mut buf);
        if norm(&buf) < cap {
            pts.extend_from_slice(&buf);
        }
    }
    pts.extend_from_slice(&top_pts);
    Ok(Dataset::from_flat(d, pts)?.with_config(*cfg))
}

/// Returns `Y_(n-k)`, the point with the (k+1)-th largest norm (k = 0 is the
/// most extreme point).
pub fn order_statistic(ds: &Dataset, k: usize) -> Result<&[f64]> {
    Ok(ds.point(ds.order_index(k)?))
}

/// `ln K(beta, d)`, the log tail constant of the standard multivariate-t
/// radial density: `t^{beta+d} h(t) -> K`.
pub fn ln_tail_constant(beta: f64, d: usize) -> f64 {
    let df = d as f64;
    0.5 * (beta + df) * beta.ln() + ln_gamma(0.5 * (beta + df))
        - ln_gamma(0.5 * beta)
        - 0.5 * df * (beta * std::f64::consts::PI).ln()
}

/// Log surface area of the unit sphere in R^d.
fn ln_sphere_area(d: usize) -> f64 {
    let df = d as f64;
    std::f64::consts::LN_2 + 0.5 * df * std::f64::consts::PI.ln() - ln_gamma(0.5 * df)
}

/// Tail constant `A = omega_{d-1} K(beta, d) / beta`, so that
/// `P(|Y| > r) ~ A r^{-beta}`.
pub fn evt_constant_a(beta: f64, d: usize) -> f64 {
    (ln_sphere_area(d) + ln_tail_constant(beta, d) - beta.ln()).exp()
}

/// Radial density `h(t)` of the standard multivariate t (density of the
/// point at any `y` with `|y| = t`).
pub fn radial_density(beta: f64, d: usize, t: f64) -> f64 {
    let df = d as f64;
    let ln_c = ln_gamma(0.5 * (beta + df)) - ln_gamma(0.5 * beta) - 0.5 * df * (beta * std::f64::consts::PI).ln();
    (ln_c - 0.5 * (beta + df) * (t * t / beta).ln_1p()).exp()
}

/// `P(|Y| > r)` for the standard multivariate t.
pub fn radial_tail(beta: f64, d: usize, r: f64) -> f64 {
    if r <= 0.0 {
        return 1.0;
    }
    let x = beta / (beta + r * r);
    beta_reg(0.5 * beta, 0.5 * d as f64, x)
}

/// Radius `r` with `P(|Y| > r) = tail`.
pub fn radial_tail_inverse(beta: f64, d: usize, tail: f64) -> Result<f64> {
    if !(tail > 0.0 && tail < 1.0) {
        return Err(domain(format!("tail probability must lie in (0,1), got {tail}")));
    }
    let target = tail.ln();
    let f = |lr: f64| radial_tail(beta, d, lr.exp()).ln() - target;
    // bracket in log-radius around the asymptotic guess
    let guess = ((evt_constant_a(beta, d) / tail).ln() / beta).max(-30.0);
    let (mut lo, mut hi) = (guess - 1.0, guess + 1.0);
    while f(lo) < 0.0 {
        lo -= 2.0;
        if lo < -200.0 {
            return Ok(0.0);
        }
    }
    while f(hi) > 0.0 {
        hi += 2.0;
        if hi > 700.0 {
            return Err(domain("radial quantile overflows f64"));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 * hi.abs().max(1.0) {
            break;
        }
    }
    Ok((0.5 * (lo + hi)).exp())
}

/// Distance from `Y_(n-k)` to its nearest other data point.
pub fn isolation_gap(ds: &Dataset, k: usize) -> Result<f64> {
    if ds.len() < 2 {
        return Err(domain("isolation gap needs at least two points"));
    }
    let a = ds.order_index(k)?;
    let anchor = ds.point(a);
    Ok((0..ds.len())
        .filter(|&j| j != a)
        .map(|j| dist(ds.point(j), anchor))
        .fold(f64::INFINITY, f64::min))
}

/// Finite-n plug-in for the Gamma(k+1, 1) limit:
/// `A * (|Y_(n-k)| / n^{1/beta})^{-beta}`.
pub fn gk_proxy(ds: &Dataset, k: usize, beta: f64) -> Result<f64> {
    let r = ds.norm_of(ds.order_index(k)?);
    if r == 0.0 {
        return Err(domain("order statistic sits at the origin"));
    }
    let n = ds.len() as f64;
    let ln = (evt_constant_a(beta, ds.dim())).ln() - beta * (r.ln() - n.ln() / beta);
    Ok(ln.exp())
}

/// `|Y_(n-k)| / n^{1/beta}`: the radial scale that the micromode location,
/// width and excess-rate bounds are written in.
pub fn radial_scale(ds: &Dataset, k: usize, beta: f64) -> Result<f64> {
    let r = ds.norm_of(ds.order_index(k)?);
    Ok((r.ln() - (ds.len() as f64).ln() / beta).exp())
}
