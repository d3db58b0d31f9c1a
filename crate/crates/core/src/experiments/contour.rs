use rand::Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{dataset_seed, StudyConfig, StudyKind, StudyResult, Table};
use crate::error::{config, Error, Result};
use crate::heavytail::{dist, sample_dataset, DataConfig, Dataset};
use crate::micromode::detect;
use crate::posterior::Model;
use crate::rng::stream;

/// Log-density values on a regular grid; `values[iy * x.len() + ix]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContourGrid {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub values: Vec<f64>,
}

impl ContourGrid {
    pub fn at(&self, ix: usize, iy: usize) -> f64 {
        self.values[iy * self.x.len() + ix]
    }
}

/// `sum_j ln(q_j)` with the logs taken four factors at a time; groups whose
/// product leaves the normal range fall back to one log per factor.
fn sum_ln(qs: impl Iterator<Item = f64>) -> f64 {
    let mut acc = 0.0;
    let mut buf = [1.0f64; 4];
    let mut fill = 0;
    let flush = |buf: &[f64], acc: &mut f64| {
        let p: f64 = buf.iter().product();
        if p.is_normal() {
            *acc += p.ln();
        } else {
            *acc += buf.iter().map(|q| q.ln()).sum::<f64>();
        }
    };
    for q in qs {
        buf[fill] = q;
        fill += 1;
        if fill == 4 {
            flush(&buf, &mut acc);
            fill = 0;
        }
    }
    if fill > 0 {
        flush(&buf[..fill], &mut acc);
    }
    acc
}

const LANES: usize = 8;
const MANTISSA: u64 = (1 << 52) - 1;
const ONE_BITS: u64 = 1023 << 52;

/// `sum_j ln(nu + |p - y_j|^2)` without a logarithm per term: each lane keeps
/// a running product renormalized to `[1, 2)` after every factor, with the
/// binary exponent accumulated separately. Returns `None` if any factor
/// product leaves the normal range, in which case the caller sums logs.
fn sum_ln_2d(nu: f64, xs: &[f64], ys: &[f64], p: [f64; 2]) -> Option<f64> {
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx512f")
        && std::arch::is_x86_feature_detected!("avx512dq")
        && std::arch::is_x86_feature_detected!("avx512vl")
    {
        // SAFETY: the required CPU feature was detected at runtime.
        return unsafe { sum_ln_2d_avx512(nu, xs, ys, p) };
    }
    sum_ln_2d_portable(nu, xs, ys, p)
}

/// Same code compiled for wider vectors. Rust never contracts `a * b + c`
/// into a fused multiply-add, so results are bit-identical to the portable path.
#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx512f,avx512dq,avx512vl")]
unsafe fn sum_ln_2d_avx512(nu: f64, xs: &[f64], ys: &[f64], p: [f64; 2]) -> Option<f64> {
    sum_ln_2d_portable(nu, xs, ys, p)
}

#[inline(always)]
fn sum_ln_2d_portable(nu: f64, xs: &[f64], ys: &[f64], p: [f64; 2]) -> Option<f64> {
    let mut mant = [1.0f64; LANES];
    let mut expo = [0i64; LANES];
    let mut bad = 0u64;
    let blocks = xs.len() / LANES;
    for b in 0..blocks {
        let (bx, by) = (&xs[b * LANES..(b + 1) * LANES], &ys[b * LANES..(b + 1) * LANES]);
        for l in 0..LANES {
            let (u, v) = (p[0] - bx[l], p[1] - by[l]);
            let m = mant[l] * (nu + u * u + v * v);
            let bits = m.to_bits();
            let e = (bits >> 52) & 0x7ff;
            bad |= (e == 0 || e == 0x7ff) as u64;
            // bounded by 1023 per factor; wrapping keeps the loop free of overflow checks
            expo[l] = expo[l].wrapping_add(e as i64).wrapping_sub(1023);
            mant[l] = f64::from_bits((bits & MANTISSA) | ONE_BITS);
        }
    }
    if bad != 0 {
        return None;
    }
    let mut total = expo.iter().sum::<i64>() as f64 * std::f64::consts::LN_2;
    total += mant.iter().map(|m| m.ln()).sum::<f64>();
    for j in blocks * LANES..xs.len() {
        let (u, v) = (p[0] - xs[j], p[1] - ys[j]);
        total += (nu + u * u + v * v).ln();
    }
    Some(total)
}

/// Unnormalized log posterior at many 2D points.
pub fn log_density_grid(model: &Model, ds: &Dataset, points: &[[f64; 2]]) -> Result<Vec<f64>> {
    if model.d != 2 || ds.dim() != 2 {
        return Err(Error::UnsupportedDimension(ds.dim()));
    }
    let nu = model.nu;
    let pts = ds.flat();
    let xs: Vec<f64> = pts.iter().step_by(2).copied().collect();
    let ys: Vec<f64> = pts.iter().skip(1).step_by(2).copied().collect();
    let c = -0.5 * (nu + 2.0);
    Ok(points
        .par_iter()
        .map(|p| {
            let s = sum_ln_2d(nu, &xs, &ys, *p).unwrap_or_else(|| {
                xs.iter().zip(&ys).map(|(x, y)| (nu + (p[0] - x).powi(2) + (p[1] - y).powi(2)).ln()).sum()
            });
            c * s
        })
        .collect())
}

fn axis(lo: f64, hi: f64, m: usize) -> Vec<f64> {
    (0..m).map(|i| lo + (hi - lo) * i as f64 / (m - 1) as f64).collect()
}

fn check_resolution(resolution: usize) -> Result<()> {
    if !(2..=2048).contains(&resolution) {
        return Err(config(format!("resolution must lie in 2..=2048, got {resolution}")));
    }
    Ok(())
}

/// Evaluates the log posterior on `resolution^2` points of
/// `[x_lo, x_hi] x [y_lo, y_hi]`.
pub fn contour_grid(model: &Model, ds: &Dataset, bbox: [f64; 4], resolution: usize) -> Result<ContourGrid> {
    check_resolution(resolution)?;
    let [x_lo, x_hi, y_lo, y_hi] = bbox;
    if !(x_lo < x_hi && y_lo < y_hi) {
        return Err(config("empty bounding box"));
    }
    let x = axis(x_lo, x_hi, resolution);
    let y = axis(y_lo, y_hi, resolution);
    let points: Vec<[f64; 2]> = y.iter().flat_map(|&b| x.iter().map(move |&a| [a, b])).collect();
    let values = log_density_grid(model, ds, &points)?;
    Ok(ContourGrid { x, y, values })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridMax {
    pub ix: usize,
    pub iy: usize,
    pub x: [f64; 2],
    pub value: f64,
}

/// Interior grid points strictly above all eight neighbours.
pub fn strict_local_maxima(grid: &ContourGrid) -> Vec<GridMax> {
    let (nx, ny) = (grid.x.len(), grid.y.len());
    let mut out = Vec::new();
    for iy in 1..ny.saturating_sub(1) {
        for ix in 1..nx.saturating_sub(1) {
            let v = grid.at(ix, iy);
            let strict = (-1i64..=1)
                .flat_map(|dy| (-1i64..=1).map(move |dx| (dx, dy)))
                .filter(|&d| d != (0, 0))
                .all(|(dx, dy)| v > grid.at((ix as i64 + dx) as usize, (iy as i64 + dy) as usize));
            if strict {
                out.push(GridMax { ix, iy, x: [grid.x[ix], grid.y[iy]], value: v });
            }
        }
    }
    out
}

pub fn contour_study(cfg: &StudyConfig) -> Result<StudyResult> {
    cfg.validate()?;
    let (beta, nu, n) = (cfg.beta[0], cfg.nu[0], cfg.n[0]);
    let model = Model::new(nu, 2)?;
    let rows = Table::new(&["ix", "iy", "x1", "x2", "log_density", "distance_to_anchor"]);
    let summary = Table::new(&["seed_index", "anchor_x1", "anchor_x2", "anchor_norm", "a_n", "maxima", "maxima_near_anchor"]);
    let mut res = StudyResult::new(StudyKind::Contour, rows, summary);
    let mut chosen = None;
    for s in 0..cfg.seed_search.max(1) {
        let ds = sample_dataset(&DataConfig::new(beta, 2, n, dataset_seed(cfg.seed, s))?)?;
        let a_n = ds.norm_of(ds.order_index(0)?) > 2.0 * n as f64 * nu.sqrt();
        let last = s + 1 == cfg.seed_search.max(1);
        if a_n || last {
            if !a_n {
                res.warnings.push(format!("A_n failed for all {} seeds tried; showing the last", cfg.seed_search));
            }
            chosen = Some((s, ds, a_n));
            break;
        }
    }
    let (s, ds, a_n) = chosen.expect("at least one seed");
    let anchor = ds.point(ds.order_index(0)?).to_vec();
    let h = cfg.zoom * nu.sqrt();
    let grid = contour_grid(&model, &ds, [anchor[0] - h, anchor[0] + h, anchor[1] - h, anchor[1] + h], cfg.resolution)?;
    let maxima = strict_local_maxima(&grid);
    let mut near = 0;
    for m in &maxima {
        let dd = dist(&m.x, &anchor);
        near += (dd < nu.sqrt()) as usize;
        res.rows.push(vec![m.ix.into(), m.iy.into(), m.x[0].into(), m.x[1].into(), m.value.into(), dd.into()]);
    }
    res.summary.push(vec![
        s.into(),
        anchor[0].into(),
        anchor[1].into(),
        crate::heavytail::norm(&anchor).into(),
        a_n.into(),
        maxima.len().into(),
        near.into(),
    ]);
    res.metrics.insert("seed_index".into(), s as f64);
    res.metrics.insert("a_n".into(), a_n as u8 as f64);
    res.metrics.insert("maxima_near_anchor".into(), near as f64);
    if let Some(mm) = detect(&model, &ds, 0)?.certified() {
        let best = maxima.iter().map(|m| dist(&m.x, &mm.x_plus)).fold(f64::INFINITY, f64::min);
        res.metrics.insert("detected_mode_to_grid_max".into(), best);
    }
    res.grid = Some(grid);
    Ok(res)
}

/// `y_j = A_j . x + e_j` with Gaussian covariates, Student-t noise and
/// `x = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionData {
    pub covariates: Vec<[f64; 2]>,
    pub response: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RidgeMax {
    pub line: usize,
    pub observation: usize,
    pub s: f64,
    pub x: [f64; 2],
    pub log_post: f64,
    /// Whether ascent from the line maximum converges to a 2D mode.
    pub is_2d_mode: bool,
    pub mode: [f64; 2],
}

impl RegressionData {
    pub fn sample(n: usize, noise_dof: f64, seed: u64) -> Result<Self> {
        if n < 2 {
            return Err(config("sample size must be at least 2"));
        }
        let t = StudentT::new(noise_dof).map_err(|e| config(e.to_string()))?;
        let mut rng = stream(seed, &[3]);
        let mut covariates = Vec::with_capacity(n);
        let mut response = Vec::with_capacity(n);
        for _ in 0..n {
            let a: [f64; 2] = [StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng)];
            covariates.push(a);
            response.push(t.sample(&mut rng));
        }
        // keep the stream position independent of the Rng trait's default methods
        let _ = rng.random::<u32>();
        Ok(RegressionData { covariates, response })
    }

    fn residuals<'a>(&'a self, x: [f64; 2]) -> impl Iterator<Item = (f64, &'a [f64; 2])> + 'a {
        self.response.iter().zip(&self.covariates).map(move |(y, a)| (y - a[0] * x[0] - a[1] * x[1], a))
    }

    pub fn log_posterior(&self, nu: f64, x: [f64; 2]) -> f64 {
        -0.5 * (nu + 1.0) * sum_ln(self.residuals(x).map(|(r, _)| nu + r * r))
    }

    fn grad_hess(&self, nu: f64, x: [f64; 2]) -> ([f64; 2], [f64; 3]) {
        let (mut g, mut h) = ([0.0; 2], [0.0; 3]);
        for (r, a) in self.residuals(x) {
            let q = nu + r * r;
            let w = r / q;
            g[0] += w * a[0];
            g[1] += w * a[1];
            let c = (nu - r * r) / (q * q);
            h[0] -= c * a[0] * a[0];
            h[1] -= c * a[0] * a[1];
            h[2] -= c * a[1] * a[1];
        }
        let s = nu + 1.0;
        ([s * g[0], s * g[1]], [s * h[0], s * h[1], s * h[2]])
    }

    /// Damped Newton ascent; returns the limit and whether it is a strict
    /// local maximum.
    fn ascend(&self, nu: f64, start: [f64; 2]) -> ([f64; 2], bool) {
        let mut x = start;
        let mut f = self.log_posterior(nu, x);
        for _ in 0..200 {
            let (g, h) = self.grad_hess(nu, x);
            let det = h[0] * h[2] - h[1] * h[1];
            let neg_def = h[0] < 0.0 && det > 0.0;
            let gn = g[0].hypot(g[1]);
            if gn < 1e-9 * (self.response.len() as f64).sqrt() {
                return (x, neg_def);
            }
            let step = if neg_def {
                [-(h[2] * g[0] - h[1] * g[1]) / det, -(-h[1] * g[0] + h[0] * g[1]) / det]
            } else {
                [g[0] / gn, g[1] / gn]
            };
            let mut t = 1.0;
            loop {
                let cand = [x[0] + t * step[0], x[1] + t * step[1]];
                let fc = self.log_posterior(nu, cand);
                if fc > f {
                    x = cand;
                    f = fc;
                    break;
                }
                t *= 0.5;
                if t < 1e-14 {
                    let (_, h) = self.grad_hess(nu, x);
                    return (x, h[0] < 0.0 && h[0] * h[2] - h[1] * h[1] > 0.0);
                }
            }
        }
        (x, false)
    }

    /// Local maxima of the log posterior along `{x : y_i = A_i . x}`,
    /// parameterized by arc length from the point nearest the origin.
    pub fn ridge_maxima(&self, nu: f64, line: usize, i: usize, samples: usize) -> Vec<RidgeMax> {
        let a = self.covariates[i];
        let a2 = a[0] * a[0] + a[1] * a[1];
        let base = [self.response[i] * a[0] / a2, self.response[i] * a[1] / a2];
        let an = a2.sqrt();
        let u = [-a[1] / an, a[0] / an];
        let span = 3.0 * base[0].hypot(base[1]) + 10.0 * nu.sqrt();
        let at = |s: f64| [base[0] + s * u[0], base[1] + s * u[1]];
        let ss: Vec<f64> = (0..samples).map(|j| -span + 2.0 * span * j as f64 / (samples - 1) as f64).collect();
        let fs: Vec<f64> = ss.par_iter().map(|&s| self.log_posterior(nu, at(s))).collect();
        let mut out = Vec::new();
        for j in 1..samples - 1 {
            if !(fs[j] > fs[j - 1] && fs[j] > fs[j + 1]) {
                continue;
            }
            // golden-section refinement on the bracketing cells
            let (mut lo, mut hi) = (ss[j - 1], ss[j + 1]);
            let r = 0.5 * (5f64.sqrt() - 1.0);
            let mut c = hi - r * (hi - lo);
            let mut d = lo + r * (hi - lo);
            let (mut fc, mut fd) = (self.log_posterior(nu, at(c)), self.log_posterior(nu, at(d)));
            for _ in 0..80 {
                if fc > fd {
                    hi = d;
                    d = c;
                    fd = fc;
                    c = hi - r * (hi - lo);
                    fc = self.log_posterior(nu, at(c));
                } else {
                    lo = c;
                    c = d;
                    fc = fd;
                    d = lo + r * (hi - lo);
                    fd = self.log_posterior(nu, at(d));
                }
            }
            let s = 0.5 * (lo + hi);
            let x = at(s);
            let (mode, is_2d_mode) = self.ascend(nu, x);
            out.push(RidgeMax { line, observation: i, s, x, log_post: self.log_posterior(nu, x), is_2d_mode, mode });
        }
        out
    }

    /// Observations whose zero-residual lines lie farthest from the truth.
    pub fn extreme_lines(&self, count: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.response.len()).collect();
        let far = |j: usize| {
            let a = self.covariates[j];
            self.response[j].abs() / a[0].hypot(a[1])
        };
        idx.sort_by(|&p, &q| far(q).total_cmp(&far(p)).then(p.cmp(&q)));
        idx.truncate(count);
        idx
    }
}

pub fn regression_study(cfg: &StudyConfig) -> Result<StudyResult> {
    cfg.validate()?;
    let (noise, nu, n) = (cfg.beta[0], cfg.nu[0], cfg.n[0]);
    let data = RegressionData::sample(n, noise, dataset_seed(cfg.seed, 0))?;
    let rows = Table::new(&["line", "observation", "s", "x1", "x2", "log_post", "is_2d_mode", "mode_x1", "mode_x2"]);
    let summary = Table::new(&["line", "observation", "response", "maxima"]);
    let mut res = StudyResult::new(StudyKind::Regression, rows, summary);
    let lines = data.extreme_lines(2);
    let mut reach: f64 = 0.0;
    for (line, &i) in lines.iter().enumerate() {
        let maxima = data.ridge_maxima(nu, line, i, 4096);
        for m in &maxima {
            reach = reach.max(m.x[0].abs()).max(m.x[1].abs());
            res.rows.push(vec![
                line.into(),
                i.into(),
                m.s.into(),
                m.x[0].into(),
                m.x[1].into(),
                m.log_post.into(),
                m.is_2d_mode.into(),
                m.mode[0].into(),
                m.mode[1].into(),
            ]);
        }
        res.summary.push(vec![line.into(), i.into(), data.response[i].into(), maxima.len().into()]);
        res.metrics.insert(format!("maxima_line{line}"), maxima.len() as f64);
        res.metrics.insert(format!("modes_2d_line{line}"), maxima.iter().filter(|m| m.is_2d_mode).count() as f64);
    }
    if cfg.emit_grid {
        let h = 1.2 * reach + 5.0 * nu.sqrt();
        let x = axis(-h, h, cfg.resolution);
        let points: Vec<[f64; 2]> = x.iter().flat_map(|&b| x.iter().map(move |&a| [a, b])).collect();
        let values = points.par_iter().map(|&p| data.log_posterior(nu, p)).collect();
        res.grid = Some(ContourGrid { x: x.clone(), y: x, values });
    }
    Ok(res)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dispatched_kernel_matches_portable_bitwise() {
        let ds = sample_dataset(&DataConfig::new(1.0, 2, 1003, 5).unwrap()).unwrap();
        let xs: Vec<f64> = ds.flat().iter().step_by(2).copied().collect();
        let ys: Vec<f64> = ds.flat().iter().skip(1).step_by(2).copied().collect();
        for p in [[0.0, 0.0], [1e3, -2.5], [1e9, 1e9]] {
            let a = sum_ln_2d(0.7, &xs, &ys, p);
            let b = sum_ln_2d_portable(0.7, &xs, &ys, p);
            assert_eq!(a.map(f64::to_bits), b.map(f64::to_bits));
        }
    }

    #[test]
    fn grid_is_rotation_symmetric() {
        let c = 3.0;
        let ds = Dataset::from_points(&[vec![c, 0.0], vec![-c, 0.0], vec![0.0, c], vec![0.0, -c]]).unwrap();
        let m = Model::new(1.0, 2).unwrap();
        let g = contour_grid(&m, &ds, [-5.0, 5.0, -5.0, 5.0], 41).unwrap();
        let r = g.x.len();
        for iy in 0..r {
            for ix in 0..r {
                // (x, y) -> (-y, x)
                let (jx, jy) = (r - 1 - iy, ix);
                let (a, b) = (g.at(ix, iy), g.at(jx, jy));
                assert!((a - b).abs() <= 1e-13 * a.abs().max(1.0), "{a} vs {b}");
            }
        }
        let maxima = strict_local_maxima(&g);
        assert!(maxima.iter().all(|m| m.ix > 0 && m.iy > 0));
    }

    #[test]
    fn grid_matches_direct_evaluation() {
        let ds = Dataset::from_points(&[vec![1.0, 2.0], vec![-3.0, 0.5], vec![1e8, -1e8], vec![0.0, 0.0], vec![2.0, 2.0]]).unwrap();
        let m = Model::new(0.7, 2).unwrap();
        let pts = [[0.3, -0.2], [5.0, 5.0]];
        let fast = log_density_grid(&m, &ds, &pts).unwrap();
        for (p, f) in pts.iter().zip(fast) {
            let slow = crate::posterior::log_density_unnorm(&m, &ds, p).unwrap();
            assert!((f - slow).abs() <= 1e-12 * slow.abs());
        }
    }

    #[test]
    fn oversized_grid_is_rejected() {
        let ds = Dataset::from_points(&[vec![0.0, 0.0], vec![1.0, 1.0]]).unwrap();
        let m = Model::new(1.0, 2).unwrap();
        assert!(contour_grid(&m, &ds, [0.0, 1.0, 0.0, 1.0], 4096).is_err());
        assert!(contour_grid(&Model::new(1.0, 1).unwrap(), &Dataset::from_scalars(&[0.0, 1.0]).unwrap(), [0.0, 1.0, 0.0, 1.0], 8).is_err());
    }

    #[test]
    fn ridge_search_finds_line_maximum() {
        let data = RegressionData::sample(500, 1.0, 4).unwrap();
        let lines = data.extreme_lines(2);
        assert_eq!(lines.len(), 2);
        for (l, &i) in lines.iter().enumerate() {
            let maxima = data.ridge_maxima(1.0, l, i, 1024);
            assert!(!maxima.is_empty());
            for m in maxima {
                let a = data.covariates[i];
                assert!((data.response[i] - a[0] * m.x[0] - a[1] * m.x[1]).abs() < 1e-8);
            }
        }
    }
}
