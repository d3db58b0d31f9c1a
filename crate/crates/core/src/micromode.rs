//! Detection, certification and measurement of micromodes.
//!
//! A micromode is a root of `S_n` with positive-definite `S'_n` inside the
//! `sqrt(nu)`-ball of an extreme order statistic. Detection runs a
//! safeguarded Newton iteration from the anchor point itself. Uniqueness
//! inside a ball `B_r(anchor)` is certified by the two sufficient
//! conditions: outward-pointing score on the boundary sphere and a
//! positive-definite information matrix on the closed ball.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{config, domain, Error, Result};
use crate::heavytail::{dist, isolation_gap, norm, radial_scale, Dataset};
use crate::posterior::{
    ball_grid, info_into, log_density_flat, score_deviation_sup, score_into, sphere_directions, Model,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectOptions {
    pub max_iter: usize,
    /// Residual tolerance relative to the score scale `n/(2 sqrt(nu))`.
    pub root_tol: f64,
    /// Boundary directions for the certificate and the width (d >= 2).
    pub directions: usize,
    /// Interior grid resolution for the curvature certificate.
    pub interior: usize,
}

impl Default for DetectOptions {
    fn default() -> Self {
        DetectOptions { max_iter: 100, root_tol: 1e-10, directions: 256, interior: 64 }
    }
}

/// Evidence for uniqueness of the root inside `B_radius(anchor)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub radius: f64,
    pub boundary_min_outward_gradient: f64,
    pub min_eigenvalue_on_ball: f64,
    pub directions: usize,
}

impl Certificate {
    pub fn passes(&self) -> bool {
        self.boundary_min_outward_gradient > 0.0 && self.min_eigenvalue_on_ball > 0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Micromode {
    pub k: usize,
    pub anchor_index: usize,
    pub anchor: Vec<f64>,
    pub x_plus: Vec<f64>,
    /// `W_n`; `+inf` when the density decreases without bound in every
    /// direction. `None` until certified.
    pub width: Option<f64>,
    /// `x_plus` moved by the width toward the bulk (1D only).
    pub x_minus: Option<f64>,
    pub certified: bool,
    pub certificate: Certificate,
    pub residual: f64,
    pub iterations: usize,
}

/// Why no micromode was reported.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Absence {
    /// The score has no sign change in the anchor's `sqrt(nu)`-ball (1D).
    NoRootInBall,
    /// The iteration was pushed out of the `sqrt(nu)`-ball.
    LeftBall,
    /// A root was found but `S'_n` is not positive definite there.
    NotPositiveDefinite,
    /// No convergence within the iteration budget.
    NoConvergence,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Detection {
    Found(Micromode),
    Absent(Absence),
}

impl Detection {
    pub fn micromode(&self) -> Option<&Micromode> {
        match self {
            Detection::Found(m) => Some(m),
            Detection::Absent(_) => None,
        }
    }

    pub fn certified(&self) -> Option<&Micromode> {
        self.micromode().filter(|m| m.certified)
    }
}

fn min_eigenvalue(d: usize, h: &[f64]) -> f64 {
    if d == 1 {
        return h[0];
    }
    let m = DMatrix::from_row_slice(d, d, h);
    m.symmetric_eigenvalues().iter().copied().fold(f64::INFINITY, f64::min)
}

/// Residual accepted at `x`: the requested tolerance plus what a few ulps of
/// `x` move the score, so far-out anchors stay decidable.
fn residual_tolerance(tol: f64, x: &[f64], h: &[f64]) -> f64 {
    let h_norm = h.iter().map(|v| v * v).sum::<f64>().sqrt();
    tol + 8.0 * f64::EPSILON * norm(x) * h_norm
}

fn root_1d(model: &Model, pts: &[f64], a: f64, opts: &DetectOptions) -> std::result::Result<(f64, usize), Absence> {
    let nu = model.nu;
    let s = nu.sqrt();
    let f = |x: f64| crate::posterior::score_1d(nu, pts, x);
    let df = |x: f64| {
        let mut h = [0.0];
        info_into(model, pts, &[x], &mut h);
        h[0]
    };
    let fa = f(a);
    if fa == 0.0 {
        return Ok((a, 0));
    }
    let (mut lo, mut hi) = if fa > 0.0 {
        if f(a - s) >= 0.0 {
            return Err(Absence::NoRootInBall);
        }
        (a - s, a)
    } else {
        if f(a + s) <= 0.0 {
            return Err(Absence::NoRootInBall);
        }
        (a, a + s)
    };
    let mut x = a;
    let mut fx = fa;
    for it in 1..=opts.max_iter {
        let d = df(x);
        let newton = x - fx / d;
        let next = if d > 0.0 && newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
        let step = (next - x).abs();
        x = next;
        fx = f(x);
        if fx == 0.0 {
            return Ok((x, it));
        }
        if fx < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        if step <= 4.0 * f64::EPSILON * x.abs().max(1.0) || hi - lo <= 4.0 * f64::EPSILON * x.abs().max(1.0) {
            return Ok((x, it));
        }
    }
    Err(Absence::NoConvergence)
}

fn root_nd(model: &Model, pts: &[f64], a: &[f64], opts: &DetectOptions, scale: f64) -> std::result::Result<(Vec<f64>, usize), Absence> {
    let d = model.d;
    let s = model.nu.sqrt();
    let potential = |x: &[f64]| -log_density_flat(model, pts, x) / (model.nu + d as f64);
    let mut x = a.to_vec();
    let mut g = vec![0.0; d];
    let mut h = vec![0.0; d * d];
    let mut u = potential(&x);
    for it in 1..=opts.max_iter {
        score_into(model, pts, &x, None, &mut g);
        let gnorm = norm(&g);
        if gnorm <= 1e-3 * opts.root_tol * scale {
            return Ok((x, it));
        }
        info_into(model, pts, &x, &mut h);
        let hm = DMatrix::from_row_slice(d, d, &h);
        let gv = DVector::from_column_slice(&g);
        let p: Vec<f64> = match hm.cholesky() {
            Some(ch) => (-ch.solve(&gv)).iter().copied().collect(),
            None => g.iter().map(|v| -v).collect(),
        };
        let slope: f64 = p.iter().zip(&g).map(|(a, b)| a * b).sum();
        let mut alpha = 1.0;
        let mut accepted = false;
        let mut left_ball = false;
        while alpha > 1e-14 {
            let trial: Vec<f64> = x.iter().zip(&p).map(|(xi, pi)| xi + alpha * pi).collect();
            if dist(&trial, a) >= s {
                left_ball = true;
                alpha *= 0.5;
                continue;
            }
            let ut = potential(&trial);
            if ut <= u + 1e-4 * alpha * slope {
                let moved = dist(&trial, &x);
                x = trial;
                u = ut;
                accepted = true;
                if moved <= 4.0 * f64::EPSILON * norm(&x).max(1.0) {
                    return Ok((x, it));
                }
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            // no further decrease available: either converged to rounding or stuck at the ball edge
            score_into(model, pts, &x, None, &mut g);
            info_into(model, pts, &x, &mut h);
            if norm(&g) < residual_tolerance(opts.root_tol * scale, &x, &h) {
                return Ok((x, it));
            }
            return Err(if left_ball { Absence::LeftBall } else { Absence::NoConvergence });
        }
    }
    Err(Absence::NoConvergence)
}

/// Certification radius: halfway between the root's distance from the
/// anchor and `sqrt(nu)`, so the ball contains the root and stays inside the
/// region where the anchor's own curvature term is positive.
pub fn certification_radius(model: &Model, anchor: &[f64], x_plus: &[f64]) -> f64 {
    0.5 * (dist(anchor, x_plus) + model.nu.sqrt())
}

/// Evaluates both certificate conditions on `B_radius(anchor)`.
pub fn certify(model: &Model, ds: &Dataset, anchor: &[f64], radius: f64, opts: &DetectOptions) -> Result<Certificate> {
    model.check(ds, anchor)?;
    let d = model.d;
    let pts = ds.flat();
    let dirs = sphere_directions(d, opts.directions);
    let mut s = vec![0.0; d];
    let mut boundary = f64::INFINITY;
    for v in &dirs {
        let x: Vec<f64> = anchor.iter().zip(v).map(|(a, vi)| a + radius * vi).collect();
        score_into(model, pts, &x, None, &mut s);
        boundary = boundary.min(v.iter().zip(&s).map(|(a, b)| a * b).sum());
    }
    let mut h = vec![0.0; d * d];
    let mut min_eig = f64::INFINITY;
    for x in ball_grid(anchor, radius, opts.interior.max(2), true) {
        info_into(model, pts, &x, &mut h);
        min_eig = min_eig.min(min_eigenvalue(d, &h));
    }
    Ok(Certificate { radius, boundary_min_outward_gradient: boundary, min_eigenvalue_on_ball: min_eig, directions: dirs.len() })
}

/// Looks for the micromode attached to `Y_(n-k)`.
pub fn detect(model: &Model, ds: &Dataset, k: usize) -> Result<Detection> {
    detect_with(model, ds, k, &DetectOptions::default())
}

pub fn detect_with(model: &Model, ds: &Dataset, k: usize, opts: &DetectOptions) -> Result<Detection> {
    let a_idx = ds.order_index(k)?;
    let anchor = ds.point(a_idx).to_vec();
    model.check(ds, &anchor)?;
    let d = model.d;
    let pts = ds.flat();
    let scale = ds.len() as f64 * model.term_bound();
    let found = if d == 1 {
        root_1d(model, pts, anchor[0], opts).map(|(x, it)| (vec![x], it))
    } else {
        root_nd(model, pts, &anchor, opts, scale)
    };
    let (x_plus, iterations) = match found {
        Ok(v) => v,
        Err(a) => return Ok(Detection::Absent(a)),
    };
    if dist(&x_plus, &anchor) >= model.nu.sqrt() {
        return Ok(Detection::Absent(Absence::LeftBall));
    }
    let mut s = vec![0.0; d];
    score_into(model, pts, &x_plus, None, &mut s);
    let residual = norm(&s);
    let mut h = vec![0.0; d * d];
    info_into(model, pts, &x_plus, &mut h);
    if residual >= residual_tolerance(opts.root_tol * scale, &x_plus, &h) {
        return Ok(Detection::Absent(Absence::NoConvergence));
    }
    if min_eigenvalue(d, &h) <= 0.0 {
        return Ok(Detection::Absent(Absence::NotPositiveDefinite));
    }
    let radius = certification_radius(model, &anchor, &x_plus);
    let certificate = certify(model, ds, &anchor, radius, opts)?;
    let mut mm = Micromode {
        k,
        anchor_index: a_idx,
        anchor,
        x_plus,
        width: None,
        x_minus: None,
        certified: certificate.passes(),
        certificate,
        residual,
        iterations,
    };
    if mm.certified {
        let w = width_with(model, ds, &mm, opts.directions)?;
        mm.width = Some(w);
        if d == 1 && w.is_finite() {
            mm.x_minus = Some(mm.x_plus[0] - mm.anchor[0].signum() * w);
        }
    }
    Ok(Detection::Found(mm))
}

/// Distance along `v` from `x0` to the first point where `v . S_n` stops
/// being positive, or `+inf` if it never does.
pub fn first_sign_change(model: &Model, ds: &Dataset, x0: &[f64], v: &[f64]) -> f64 {
    let d = model.d;
    let pts = ds.flat();
    let mut s = vec![0.0; d];
    let mut x = vec![0.0; d];
    let g = |t: f64, x: &mut Vec<f64>, s: &mut Vec<f64>| {
        for i in 0..d {
            x[i] = x0[i] + v[i] * t;
        }
        score_into(model, pts, x, None, s);
        v.iter().zip(s.iter()).map(|(a, b)| a * b).sum::<f64>()
    };
    let h0 = model.nu.sqrt() / 8.0;
    let mut t = 0.0;
    for _ in 0..1_000_000 {
        for i in 0..d {
            x[i] = x0[i] + v[i] * t;
        }
        // every data point behind the moving point: v.S_n stays positive
        let mut all_behind = true;
        let mut dmin = f64::INFINITY;
        for y in pts.chunks_exact(d) {
            let ahead: f64 = v.iter().zip(x.iter().zip(y)).map(|(vi, (xi, yi))| vi * (yi - xi)).sum();
            if ahead >= 0.0 {
                all_behind = false;
            }
            dmin = dmin.min(dist(&x, y));
        }
        if all_behind && g(t.max(0.0), &mut x, &mut s) > 0.0 {
            return f64::INFINITY;
        }
        let t_next = t + h0.max(0.25 * dmin);
        if g(t_next, &mut x, &mut s) <= 0.0 {
            let (mut lo, mut hi) = (t, t_next);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if mid <= lo || mid >= hi {
                    break;
                }
                if g(mid, &mut x, &mut s) > 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            return hi;
        }
        t = t_next;
    }
    f64::INFINITY
}

/// Width `W_n` of a certified micromode: exact (to bisection precision) in
/// 1D, the minimum over `directions` sampled directions in d >= 2.
pub fn width(model: &Model, ds: &Dataset, mm: &Micromode) -> Result<f64> {
    width_with(model, ds, mm, DetectOptions::default().directions)
}

pub fn width_with(model: &Model, ds: &Dataset, mm: &Micromode, directions: usize) -> Result<f64> {
    if !mm.certified {
        return Err(Error::Contract("width requires a certified micromode".into()));
    }
    model.check(ds, &mm.x_plus)?;
    Ok(sphere_directions(model.d, directions)
        .iter()
        .map(|v| first_sign_change(model, ds, &mm.x_plus, v))
        .fold(f64::INFINITY, f64::min))
}

/// Constant `c_beta` of the location bound: 0 for beta < 1, `2 sqrt(nu)` at
/// beta = 1.
pub fn c_beta(beta: f64, nu: f64) -> Result<f64> {
    if !(beta > 0.0) {
        return Err(domain(format!("beta must be positive, got {beta}")));
    }
    if beta > 1.0 {
        return Err(domain(format!("no micromode regime for beta = {beta} > 1")));
    }
    Ok(if beta < 1.0 { 0.0 } else { 2.0 * nu.sqrt() })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DnCertificate {
    pub d_n: f64,
    pub d_n_plus: f64,
    pub d_n_minus: f64,
    pub m1: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum DnBounds {
    Real(DnCertificate),
    /// `4 d_n^2 nu >= 1`: the annulus radii are complex for this n.
    NotYetReal { d_n: f64, m1: f64 },
}

/// `d_n = n^{1-1/beta}/m1` and `d_n^{+-} = (1 -+ sqrt(1 - 4 d_n^2 nu))/(2 d_n)`.
pub fn dn_bounds(n: usize, beta: f64, nu: f64, m1: f64) -> Result<DnBounds> {
    let c = c_beta(beta, nu)?;
    if !(m1 > c) {
        return Err(config(format!("m1 = {m1} must exceed c_beta = {c}")));
    }
    let d_n = (n as f64).powf(1.0 - 1.0 / beta) / m1;
    let disc = 1.0 - 4.0 * d_n * d_n * nu;
    if disc < 0.0 {
        return Ok(DnBounds::NotYetReal { d_n, m1 });
    }
    let r = disc.sqrt();
    // d_n^+ written without cancellation: (1 - r)/(2 d) = 2 d nu / (1 + r)
    Ok(DnBounds::Real(DnCertificate { d_n, d_n_plus: 2.0 * d_n * nu / (1.0 + r), d_n_minus: (1.0 + r) / (2.0 * d_n), m1 }))
}

/// Location and width inequalities evaluated with a plug-in `g` for the
/// Gamma limit. Margins are positive when the inequality holds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundsReport {
    pub location_ok: bool,
    pub width_lo_ok: bool,
    pub width_hi_ok: bool,
    pub location_margin: f64,
    pub width_lo_margin: f64,
    pub width_hi_margin: f64,
}

impl BoundsReport {
    pub fn all(&self) -> bool {
        self.location_ok && self.width_lo_ok && self.width_hi_ok
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum BoundsOutcome {
    Checked(BoundsReport),
    /// `g <= c_beta`: the conditioning event fails and the bounds say nothing.
    EventAViolated,
}

pub fn theorem_bounds_check(model: &Model, ds: &Dataset, mm: &Micromode, g: f64, beta: f64) -> Result<BoundsOutcome> {
    if !mm.certified {
        return Err(Error::Contract("bounds check requires a certified micromode".into()));
    }
    let c = c_beta(beta, model.nu)?;
    if !(g > c) {
        return Ok(BoundsOutcome::EventAViolated);
    }
    let w = match mm.width {
        Some(w) => w,
        None => width(model, ds, mm)?,
    };
    let n = ds.len() as f64;
    let sn = model.nu.sqrt();
    let loc_bound = 4.0 * model.nu / (g + c) * n.powf(1.0 - 1.0 / beta);
    // the root is only resolved to a few ulps of the anchor's coordinates
    let loc = (dist(&mm.anchor, &mm.x_plus) - 8.0 * f64::EPSILON * norm(&mm.anchor)).max(0.0);
    let lo = 0.5 * (g + c) * n.powf(1.0 / beta - 1.0) - 2.0 * sn;
    let hi = 4.0 * g * n.powf(1.0 / beta - 1.0) + sn;
    Ok(BoundsOutcome::Checked(BoundsReport {
        location_ok: loc <= loc_bound,
        width_lo_ok: lo < w,
        width_hi_ok: w < hi,
        location_margin: loc_bound - loc,
        width_lo_margin: w - lo,
        width_hi_margin: hi - w,
    }))
}

/// Parameters of the conditioning events.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EventParams {
    pub beta: f64,
    pub eps: f64,
    pub delta: f64,
    pub grid_resolution: usize,
}

impl EventParams {
    pub fn new(beta: f64, eps: f64, delta: f64) -> Self {
        EventParams { beta, eps, delta, grid_resolution: 1024 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EventFlags {
    pub a_n: bool,
    pub a_prime_n: bool,
    pub b_n: bool,
    pub a: bool,
    pub e_n: bool,
    pub anchor_norm: f64,
    pub gap: f64,
    pub gap_threshold: f64,
    pub deviation_sup: f64,
    pub deviation_threshold: f64,
    pub scale_proxy: f64,
}

/// Evaluates `A_n`, `A'_n`, `B_n`, `A` and `E_n = A'_n & B_n & A` for
/// `Y_(n-k)`. `A` compares the radial scale `|Y_(n-k)|/n^{1/beta}` with
/// `c_beta`; for beta > 1 it is false.
pub fn event_flags(model: &Model, ds: &Dataset, k: usize, p: &EventParams) -> Result<EventFlags> {
    if !(p.eps > 0.0 && p.eps < 0.5) || !(p.delta > 0.0 && p.delta < 0.5) {
        return Err(config("eps and delta must lie in (0, 1/2)"));
    }
    let n = ds.len() as f64;
    let a_idx = ds.order_index(k)?;
    let r = ds.norm_of(a_idx);
    let gap = isolation_gap(ds, k)?;
    let gap_threshold = r / (2.0 * n.powf(p.eps));
    let deviation_sup = if r > 0.0 {
        score_deviation_sup(model, ds, k, p.grid_resolution)?
    } else {
        f64::INFINITY
    };
    let deviation_threshold = n.powf(1.0 - 1.0 / p.beta - p.delta);
    let scale_proxy = radial_scale(ds, k, p.beta)?;
    let a = match c_beta(p.beta, model.nu) {
        Ok(c) => scale_proxy > c,
        Err(_) => false,
    };
    let a_n = r > 2.0 * n * model.nu.sqrt();
    let a_prime_n = gap > gap_threshold;
    let b_n = deviation_sup < deviation_threshold;
    Ok(EventFlags {
        a_n,
        a_prime_n,
        b_n,
        a,
        e_n: a_prime_n && b_n && a,
        anchor_norm: r,
        gap,
        gap_threshold,
        deviation_sup,
        deviation_threshold,
        scale_proxy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn nu1() -> Model {
        Model::new(1.0, 1).unwrap()
    }

    #[test]
    fn two_point_modes() {
        let ds = Dataset::from_scalars(&[-2.0, 2.0]).unwrap();
        let r3 = 3f64.sqrt();
        let mm = detect(&nu1(), &ds, 0).unwrap();
        let mm = mm.certified().expect("certified");
        assert!((mm.x_plus[0] - r3).abs() < 1e-10);
        assert!((mm.width.unwrap() - r3).abs() < 1e-8);
        assert!(mm.x_minus.unwrap().abs() < 1e-8);
        let left = detect(&nu1(), &ds, 1).unwrap();
        assert!((left.micromode().unwrap().x_plus[0] + r3).abs() < 1e-10);
        assert!(matches!(detect(&nu1(), &ds, 2), Err(Error::Index { .. })));
    }

    #[test]
    fn single_point_has_unbounded_width() {
        let ds = Dataset::from_scalars(&[0.3]).unwrap();
        let mm = detect(&Model::new(2.5, 1).unwrap(), &ds, 0).unwrap();
        let mm = mm.certified().unwrap();
        assert_eq!(mm.x_plus, vec![0.3]);
        assert_eq!(mm.width, Some(f64::INFINITY));
    }

    #[test]
    fn close_pair_is_unimodal() {
        // a <= 1: the score has a single root at 0, outside the anchor's ball
        let ds = Dataset::from_scalars(&[-0.8, 0.8]).unwrap();
        match detect(&nu1(), &ds, 0).unwrap() {
            Detection::Absent(_) => {}
            Detection::Found(m) => assert!(m.x_plus[0].abs() < 1e-9),
        }
    }

    #[test]
    fn uncertified_width_is_contract_error() {
        let ds = Dataset::from_scalars(&[-2.0, 2.0]).unwrap();
        let mut mm = detect(&nu1(), &ds, 0).unwrap().micromode().unwrap().clone();
        mm.certified = false;
        assert!(matches!(width(&nu1(), &ds, &mm), Err(Error::Contract(_))));
    }

    #[test]
    fn c_beta_values() {
        assert_eq!(c_beta(0.5, 1.0).unwrap(), 0.0);
        assert_eq!(c_beta(1.0, 1.0).unwrap(), 2.0);
        assert_eq!(c_beta(1.0, 4.0).unwrap(), 4.0);
        assert!(c_beta(1.5, 1.0).is_err());
    }

    #[test]
    fn dn_examples() {
        match dn_bounds(10, 1.0, 1.0, 4.0).unwrap() {
            DnBounds::Real(c) => {
                assert_eq!(c.d_n, 0.25);
                assert!((c.d_n_plus - (1.0 - 0.75f64.sqrt()) / 0.5).abs() < 1e-14);
                assert!((c.d_n_minus - (1.0 + 0.75f64.sqrt()) / 0.5).abs() < 1e-14);
            }
            other => panic!("{other:?}"),
        }
        // d_n = 1/(2 sqrt(nu)) exactly: double root at sqrt(nu)
        match dn_bounds(2, 0.5, 1.0, 1.0).unwrap() {
            DnBounds::Real(c) => {
                assert_eq!(c.d_n, 0.5);
                assert_eq!(c.d_n_plus, 1.0);
                assert_eq!(c.d_n_minus, 1.0);
            }
            other => panic!("{other:?}"),
        }
        // small d_n: d_n^+ ~ d_n nu, d_n^- ~ 1/d_n
        match dn_bounds(1, 0.5, 1.0, 1e4).unwrap() {
            DnBounds::Real(c) => {
                assert!(c.d_n_plus >= 0.99e-4 && c.d_n_plus <= 1.01e-4);
                assert!((c.d_n_minus * c.d_n - 1.0).abs() < 1e-6);
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(dn_bounds(1, 0.5, 1.0, 0.1).unwrap(), DnBounds::NotYetReal { .. }));
        assert!(dn_bounds(10, 1.0, 1.0, 2.0).is_err());
    }

    #[test]
    fn event_flag_boundaries() {
        let ds = Dataset::from_scalars(&[0.0, 1.0]).unwrap();
        let f = event_flags(&nu1(), &ds, 0, &EventParams::new(0.5, 0.25, 0.25)).unwrap();
        assert!(!f.a_n);
        // gap exactly at threshold: |Y|/(2 n^eps) with n = 16, eps = 1/4 -> 4/ (2*2) = 1
        let mut v = vec![0.0; 15];
        v.push(4.0);
        v[0] = 3.0;
        let ds = Dataset::from_scalars(&v).unwrap();
        let f = event_flags(&nu1(), &ds, 0, &EventParams::new(0.5, 0.25, 0.25)).unwrap();
        assert_eq!(f.gap, 1.0);
        assert_eq!(f.gap_threshold, 1.0);
        assert!(!f.a_prime_n);
        assert!(event_flags(&nu1(), &ds, 0, &EventParams::new(0.5, 0.5, 0.25)).is_err());
    }

    #[test]
    fn bounds_event_a_violation() {
        let ds = Dataset::from_scalars(&[-2.0, 2.0]).unwrap();
        let mm = detect(&nu1(), &ds, 0).unwrap().certified().unwrap().clone();
        assert_eq!(theorem_bounds_check(&nu1(), &ds, &mm, 2.0, 1.0).unwrap(), BoundsOutcome::EventAViolated);
    }

    #[test]
    fn planar_two_point_mode() {
        let ds = Dataset::from_points(&[vec![-2.0, 0.0], vec![2.0, 0.0]]).unwrap();
        let m = Model::new(1.0, 2).unwrap();
        let det = detect(&m, &ds, 0).unwrap();
        let mm = det.certified().expect("certified");
        // d = 2: score (x-y)/(nu+|x-y|^2) has the same roots on the axis
        assert!((mm.x_plus[0] - 3f64.sqrt()).abs() < 1e-9);
        assert!(mm.x_plus[1].abs() < 1e-12);
        assert!(mm.width.unwrap() <= 3f64.sqrt() + 1e-9);
    }

    #[test]
    fn far_anchor_is_detected_despite_coarse_ulp() {
        // one ulp at 1e12 shifts the score by more than the nominal tolerance
        let mut ys: Vec<f64> = (0..1000).map(|i| (i as f64 - 500.0) * 0.01).collect();
        ys.push(1e12 + 0.37);
        let ds = Dataset::from_scalars(&ys).unwrap();
        let mm = detect(&nu1(), &ds, 0).unwrap();
        let mm = mm.certified().expect("certified micromode");
        assert!((mm.x_plus[0] - mm.anchor[0]).abs() < 1e-3);
    }
}
