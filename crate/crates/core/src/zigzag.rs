//! One-dimensional Zig-Zag process under canonical and subsampling
//! switching rates, simulated exactly by Poisson thinning.
//!
//! Two dominating envelopes are available. [`GlobalBound`] uses the constant
//! `n(nu+1)/(2 sqrt(nu))` everywhere. [`MicromodeWindow`] applies to the
//! right tail of an isolated extreme point: above a level that every other
//! observation sits at least `sqrt(nu)` below, the bulk score is positive and
//! decreasing, so a tabulated bulk score plus the closed-form extremes of the
//! anchor's own term bound the rate on short segments. Both are exact in law.

use rand::Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{config, domain, Error, Result};
use crate::heavytail::Dataset;
use crate::micromode::Micromode;
use crate::posterior::{log_density_flat, term_1d, Model};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RateKind {
    Canonical,
    Subsampling,
}

impl RateKind {
    pub const ALL: [RateKind; 2] = [RateKind::Canonical, RateKind::Subsampling];

    pub fn name(self) -> &'static str {
        match self {
            RateKind::Canonical => "canonical",
            RateKind::Subsampling => "subsampling",
        }
    }
}

impl std::str::FromStr for RateKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "canonical" => Ok(RateKind::Canonical),
            "subsampling" => Ok(RateKind::Subsampling),
            other => Err(config(format!("unknown rate kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZigZagState {
    pub x: f64,
    /// +1 or -1.
    pub v: f64,
    pub t: f64,
}

impl ZigZagState {
    pub fn new(x: f64, v: f64) -> Result<Self> {
        if v != 1.0 && v != -1.0 {
            return Err(domain(format!("velocity must be +1 or -1, got {v}")));
        }
        if !x.is_finite() {
            return Err(domain("position must be finite"));
        }
        Ok(ZigZagState { x, v, t: 0.0 })
    }
}

/// A velocity flip: time, position, and the velocity after the flip.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SwitchEvent {
    pub t: f64,
    pub x: f64,
    pub v: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopReason {
    /// `t_max` reached with no stop level requested.
    Horizon,
    /// Crossed the lower level moving left.
    ExitLeft,
    /// Crossed the upper level moving right.
    ReturnedToStart,
    /// `t_max` reached before any requested stop level.
    Censored,
}

/// Levels at which a trajectory stops: `lower` is checked while moving
/// left, `upper` while moving right.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StopRule {
    pub lower: Option<f64>,
    pub upper: Option<f64>,
}

impl StopRule {
    pub fn none() -> Self {
        StopRule::default()
    }

    pub fn below(level: f64) -> Self {
        StopRule { lower: Some(level), upper: None }
    }

    pub fn band(lower: f64, upper: f64) -> Self {
        StopRule { lower: Some(lower), upper: Some(upper) }
    }

    fn is_none(&self) -> bool {
        self.lower.is_none() && self.upper.is_none()
    }

    /// Travel distance until a stop level is crossed, if any.
    fn distance(&self, x: f64, v: f64) -> f64 {
        match (v < 0.0, self.lower, self.upper) {
            (true, Some(lo), _) if x >= lo => x - lo,
            (false, _, Some(hi)) if x <= hi => hi - x,
            _ => f64::INFINITY,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventLog {
    pub initial: ZigZagState,
    /// Empty unless recording was requested.
    pub events: Vec<SwitchEvent>,
    pub proposals: u64,
    pub acceptances: u64,
    pub final_state: ZigZagState,
    pub stop_reason: StopReason,
}

impl EventLog {
    /// Replays the recorded events from the initial state.
    pub fn reconstruct_final(&self) -> ZigZagState {
        let (mut x, mut t, mut v) = (self.initial.x, self.initial.t, self.initial.v);
        for e in &self.events {
            x += v * (e.t - t);
            t = e.t;
            v = e.v;
        }
        let tf = self.final_state.t;
        ZigZagState { x: x + v * (tf - t), v, t: tf }
    }

    /// Occupation-measure CDF at each query point: the fraction of
    /// `[0, final time]` spent at positions `<= z`. Requires a recorded log.
    pub fn occupation_cdf(&self, queries: &[f64]) -> Vec<f64> {
        let mut lows = Vec::with_capacity(self.events.len() + 1);
        let mut highs = Vec::with_capacity(self.events.len() + 1);
        let (mut x, mut t, mut v) = (self.initial.x, self.initial.t, self.initial.v);
        let mut push = |a: f64, b: f64| {
            lows.push(a.min(b));
            highs.push(a.max(b));
        };
        for e in &self.events {
            let xe = x + v * (e.t - t);
            push(x, xe);
            x = xe;
            t = e.t;
            v = e.v;
        }
        push(x, x + v * (self.final_state.t - t));
        let total = self.final_state.t - self.initial.t;
        // time at positions <= z summed over segments: sum (z - lo)_+ - (z - hi)_+
        let ramp = |sorted: &mut Vec<f64>| {
            sorted.sort_by(f64::total_cmp);
            let mut prefix = Vec::with_capacity(sorted.len() + 1);
            prefix.push(0.0);
            for &s in sorted.iter() {
                prefix.push(prefix.last().unwrap() + s);
            }
            prefix
        };
        let pl = ramp(&mut lows);
        let ph = ramp(&mut highs);
        queries
            .iter()
            .map(|&z| {
                let il = lows.partition_point(|&a| a < z);
                let ih = highs.partition_point(|&b| b < z);
                let below = (il as f64 * z - pl[il]) - (ih as f64 * z - ph[ih]);
                (below / total).clamp(0.0, 1.0)
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExitResult {
    /// Exit time, or the elapsed time at censoring.
    pub tau: f64,
    pub censored: bool,
    pub n_switches: u64,
    pub proposals: u64,
}

fn require_1d(model: &Model, ds: &Dataset) -> Result<()> {
    if model.d != 1 {
        return Err(Error::UnsupportedDimension(model.d));
    }
    if ds.dim() != 1 {
        return Err(Error::Shape { expected: 1, got: ds.dim() });
    }
    Ok(())
}

fn rate_1d(nu: f64, pts: &[f64], kind: RateKind, x: f64, v: f64) -> f64 {
    let c = nu + 1.0;
    match kind {
        RateKind::Canonical => c * (v * pts.iter().map(|y| term_1d(nu, x - y)).sum::<f64>()).max(0.0),
        RateKind::Subsampling => c * pts.iter().map(|y| (v * term_1d(nu, x - y)).max(0.0)).sum::<f64>(),
    }
}

/// Switching rate `lambda_n(x, v)`.
pub fn switching_rate(model: &Model, ds: &Dataset, kind: RateKind, x: f64, v: f64) -> Result<f64> {
    require_1d(model, ds)?;
    Ok(rate_1d(model.nu, ds.flat(), kind, x, v))
}

/// Excess rate `lambda^ss - lambda^can`, identical for both velocities.
pub fn excess_rate(model: &Model, ds: &Dataset, x: f64) -> Result<f64> {
    require_1d(model, ds)?;
    let pts = ds.flat();
    Ok(rate_1d(model.nu, pts, RateKind::Subsampling, x, 1.0) - rate_1d(model.nu, pts, RateKind::Canonical, x, 1.0))
}

/// Constant rate bound on a stretch of trajectory.
struct Segment {
    bound: f64,
    len: f64,
}

trait Envelope {
    fn segment(&self, x: f64, v: f64) -> Segment;
    /// Decides a proposal at `(x, v)`; `level` is uniform on `[0, bound)`.
    fn accept<R: Rng + ?Sized>(&self, x: f64, v: f64, level: f64, rng: &mut R) -> bool;
}

/// Constant bound `n(nu+1)/(2 sqrt(nu))` on every per-observation term.
pub struct GlobalBound<'a> {
    nu: f64,
    pts: &'a [f64],
    kind: RateKind,
    bound: f64,
}

impl<'a> GlobalBound<'a> {
    pub fn new(model: &Model, ds: &'a Dataset, kind: RateKind) -> Result<Self> {
        require_1d(model, ds)?;
        let bound = ds.len() as f64 * (model.nu + 1.0) * model.term_bound();
        if !bound.is_finite() {
            return Err(config("thinning bound overflows"));
        }
        Ok(GlobalBound { nu: model.nu, pts: ds.flat(), kind, bound })
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }
}

impl Envelope for GlobalBound<'_> {
    fn segment(&self, _x: f64, _v: f64) -> Segment {
        Segment { bound: self.bound, len: f64::INFINITY }
    }

    fn accept<R: Rng + ?Sized>(&self, x: f64, v: f64, level: f64, rng: &mut R) -> bool {
        match self.kind {
            RateKind::Canonical => level < rate_1d(self.nu, self.pts, RateKind::Canonical, x, v),
            RateKind::Subsampling => {
                // one uniformly drawn observation, scaled by n
                let j = rng.random_range(0..self.pts.len());
                let n = self.pts.len() as f64;
                level < n * (self.nu + 1.0) * (v * term_1d(self.nu, x - self.pts[j])).max(0.0)
            }
        }
    }
}

const WINDOW_CELLS: usize = 4096;
const INFLATE: f64 = 1.0 + 1e-12;

/// Bulk score tabulated on `[lower, upper]` around an isolated maximum.
#[derive(Debug, Clone)]
pub struct WindowTable {
    anchor_index: usize,
    anchor: f64,
    lower: f64,
    upper: f64,
    step: f64,
    /// Bulk score at the grid nodes, non-increasing.
    bulk: Vec<f64>,
}

impl WindowTable {
    /// Tabulates when the largest observation sits above `lower` and every
    /// other observation is at most `lower - sqrt(nu)`.
    pub fn new(model: &Model, ds: &Dataset, lower: f64, reach: f64) -> Result<Option<Self>> {
        require_1d(model, ds)?;
        let pts = ds.flat();
        let s = model.nu.sqrt();
        let anchor_index = (0..pts.len()).max_by(|&i, &j| pts[i].total_cmp(&pts[j])).unwrap();
        let anchor = pts[anchor_index];
        let second = pts
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != anchor_index)
            .map(|(_, &y)| y)
            .fold(f64::NEG_INFINITY, f64::max);
        if !(anchor > lower) || !(second <= lower - s) || !reach.is_finite() {
            return Ok(None);
        }
        let upper = anchor + 64.0 * s + reach.max(0.0);
        let step = (upper - lower) / WINDOW_CELLS as f64;
        let bulk = (0..=WINDOW_CELLS)
            .map(|i| {
                let x = if i == WINDOW_CELLS { upper } else { lower + step * i as f64 };
                bulk_score(model.nu, pts, anchor_index, x)
            })
            .collect();
        Ok(Some(WindowTable { anchor_index, anchor, lower, upper, step, bulk }))
    }

    /// Bulk score range over the cell containing `x`.
    fn cell(&self, x: f64) -> (f64, f64) {
        if x >= self.upper {
            return (0.0, self.bulk[WINDOW_CELLS]);
        }
        let i = (((x - self.lower) / self.step) as usize).min(WINDOW_CELLS - 1);
        (self.bulk[i + 1], self.bulk[i])
    }

    /// Bulk score range over `[a, b]`, `lower <= a <= b`.
    fn span(&self, a: f64, b: f64) -> (f64, f64) {
        (self.cell(b).0, self.cell(a).1)
    }
}

/// Segment-wise envelope on `[lower, inf)` backed by a [`WindowTable`];
/// below `lower` it falls back to the global bound.
pub struct MicromodeWindow<'a> {
    nu: f64,
    pts: &'a [f64],
    kind: RateKind,
    table: &'a WindowTable,
    global: GlobalBound<'a>,
}

impl<'a> MicromodeWindow<'a> {
    pub fn new(model: &Model, ds: &'a Dataset, kind: RateKind, table: &'a WindowTable) -> Result<Self> {
        Ok(MicromodeWindow { nu: model.nu, pts: ds.flat(), kind, table, global: GlobalBound::new(model, ds, kind)? })
    }

    fn anchor_range(&self, a: f64, b: f64) -> (f64, f64) {
        let (u0, u1) = (a - self.table.anchor, b - self.table.anchor);
        let s = self.nu.sqrt();
        let f0 = term_1d(self.nu, u0);
        let f1 = term_1d(self.nu, u1);
        let peak = 0.5 / s;
        let max = if u0 <= s && s <= u1 { peak } else { f0.max(f1) };
        let min = if u0 <= -s && -s <= u1 { -peak } else { f0.min(f1) };
        (min, max)
    }

    /// Rate given the anchor term and the bulk score.
    fn rate(&self, v: f64, own: f64, bulk: f64) -> f64 {
        let c = self.nu + 1.0;
        match (self.kind, v > 0.0) {
            (RateKind::Canonical, true) => c * (own + bulk).max(0.0),
            (RateKind::Canonical, false) => c * (-own - bulk).max(0.0),
            (RateKind::Subsampling, true) => c * (bulk + own.max(0.0)),
            (RateKind::Subsampling, false) => c * (-own).max(0.0),
        }
    }
}

fn bulk_score(nu: f64, pts: &[f64], skip: usize, x: f64) -> f64 {
    pts.iter().enumerate().filter(|&(i, _)| i != skip).map(|(_, y)| term_1d(nu, x - y)).sum()
}

impl Envelope for MicromodeWindow<'_> {
    fn segment(&self, x: f64, v: f64) -> Segment {
        let t = self.table;
        if x < t.lower {
            let len = if v > 0.0 { t.lower - x } else { f64::INFINITY };
            return Segment { bound: self.global.bound, len };
        }
        let mut len = (0.5 * (x - t.anchor).abs()).max(2.0 * self.nu.sqrt());
        if v < 0.0 {
            len = len.min(x - t.lower);
        }
        let (a, b) = if v > 0.0 { (x, x + len) } else { (x - len, x) };
        let (smin, smax) = self.anchor_range(a, b);
        let (rmin, rmax) = t.span(a, b);
        let bound = if v > 0.0 { self.rate(v, smax, rmax) } else { self.rate(v, smin, rmin) };
        Segment { bound: bound * INFLATE + f64::MIN_POSITIVE, len }
    }

    fn accept<R: Rng + ?Sized>(&self, x: f64, v: f64, level: f64, rng: &mut R) -> bool {
        let t = self.table;
        if x < t.lower {
            return self.global.accept(x, v, level, rng);
        }
        let own = term_1d(self.nu, x - t.anchor);
        let (rmin, rmax) = t.cell(x);
        // the rate is monotone in the bulk score
        let (r_lo, r_hi) = {
            let a = self.rate(v, own, rmin);
            let b = self.rate(v, own, rmax);
            (a.min(b), a.max(b))
        };
        if level < r_lo / INFLATE {
            return true;
        }
        if level >= r_hi * INFLATE {
            return false;
        }
        level < self.rate(v, own, bulk_score(self.nu, self.pts, t.anchor_index, x))
    }
}

fn run<E: Envelope, R: Rng + ?Sized>(env: &E, init: ZigZagState, stop: &StopRule, t_max: f64, record: bool, rng: &mut R) -> EventLog {
    let mut events = Vec::new();
    let (mut xe, mut te, mut v) = (init.x, init.t, init.v);
    let mut t = init.t;
    let (mut proposals, mut acceptances) = (0u64, 0u64);
    let end = init.t + t_max;
    let reason = loop {
        let x = xe + v * (t - te);
        let seg = env.segment(x, v);
        let dt_prop = if seg.bound > 0.0 { rng.sample::<f64, _>(Exp1) / seg.bound } else { f64::INFINITY };
        let dt_stop = stop.distance(x, v);
        let dt_horizon = end - t;
        let m = dt_prop.min(dt_stop).min(seg.len).min(dt_horizon);
        if m == dt_stop {
            t += dt_stop;
            break if v < 0.0 { StopReason::ExitLeft } else { StopReason::ReturnedToStart };
        }
        if m == dt_horizon {
            t = end;
            break if stop.is_none() { StopReason::Horizon } else { StopReason::Censored };
        }
        t += m;
        if m < dt_prop {
            continue;
        }
        proposals += 1;
        let xp = xe + v * (t - te);
        let level = rng.random::<f64>() * seg.bound;
        if env.accept(xp, v, level, rng) {
            acceptances += 1;
            xe = xp;
            te = t;
            v = -v;
            if record {
                events.push(SwitchEvent { t, x: xe, v });
            }
        }
    };
    EventLog {
        initial: init,
        events,
        proposals,
        acceptances,
        final_state: ZigZagState { x: xe + v * (t - te), v, t },
        stop_reason: reason,
    }
}

/// Simulates with the global thinning bound until a stop level is crossed
/// or `t_max` time units elapse. Events are stored only when `record` is set.
#[allow(clippy::too_many_arguments)]
pub fn simulate<R: Rng + ?Sized>(
    model: &Model,
    ds: &Dataset,
    kind: RateKind,
    init: ZigZagState,
    stop: &StopRule,
    t_max: f64,
    record: bool,
    rng: &mut R,
) -> Result<EventLog> {
    if !(t_max > 0.0) {
        return Err(config(format!("t_max must be positive, got {t_max}")));
    }
    ZigZagState::new(init.x, init.v)?;
    let env = GlobalBound::new(model, ds, kind)?;
    Ok(run(&env, init, stop, t_max, record, rng))
}

/// Exit problem for a certified 1D micromode, mirrored onto the positive
/// half-line when its anchor is negative.
pub struct ExitSetup {
    model: Model,
    ds: Dataset,
    pub mirrored: bool,
    pub x_plus: f64,
    pub x_minus: f64,
    pub width: f64,
    pub anchor: f64,
    window: Option<WindowTable>,
}

impl ExitSetup {
    pub fn new(model: &Model, ds: &Dataset, mm: &Micromode) -> Result<Self> {
        require_1d(model, ds)?;
        if !mm.certified {
            return Err(Error::Contract("exit time requires a certified micromode".into()));
        }
        let width = mm.width.ok_or_else(|| Error::Contract("micromode width missing".into()))?;
        if !width.is_finite() {
            return Err(Error::Contract("micromode has unbounded width; no exit level".into()));
        }
        let mirrored = mm.anchor[0] < 0.0;
        let (ds, x_plus, anchor) = if mirrored {
            (ds.mirrored(), -mm.x_plus[0], -mm.anchor[0])
        } else {
            (ds.clone(), mm.x_plus[0], mm.anchor[0])
        };
        let x_minus = x_plus - width;
        let window = WindowTable::new(model, &ds, x_minus, width)?;
        Ok(ExitSetup { model: *model, ds, mirrored, x_plus, x_minus, width, anchor, window })
    }

    pub fn dataset(&self) -> &Dataset {
        &self.ds
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    /// Whether the fast window envelope applies.
    pub fn uses_window(&self) -> bool {
        self.window.is_some()
    }

    fn simulate<R: Rng + ?Sized>(&self, kind: RateKind, init: ZigZagState, stop: &StopRule, t_max: f64, rng: &mut R) -> Result<EventLog> {
        if !(t_max > 0.0) {
            return Err(config(format!("t_max must be positive, got {t_max}")));
        }
        match &self.window {
            Some(table) => Ok(run(&MicromodeWindow::new(&self.model, &self.ds, kind, table)?, init, stop, t_max, false, rng)),
            None => Ok(run(&GlobalBound::new(&self.model, &self.ds, kind)?, init, stop, t_max, false, rng)),
        }
    }

    pub fn simulate_global<R: Rng + ?Sized>(&self, kind: RateKind, init: ZigZagState, stop: &StopRule, t_max: f64, rng: &mut R) -> Result<EventLog> {
        simulate(&self.model, &self.ds, kind, init, stop, t_max, false, rng)
    }

    pub fn exit_time<R: Rng + ?Sized>(&self, kind: RateKind, t_max: f64, rng: &mut R) -> Result<ExitResult> {
        let init = ZigZagState { x: self.x_plus, v: -1.0, t: 0.0 };
        let log = self.simulate(kind, init, &StopRule::below(self.x_minus), t_max, rng)?;
        Ok(ExitResult {
            tau: log.final_state.t,
            censored: log.stop_reason == StopReason::Censored,
            n_switches: log.acceptances,
            proposals: log.proposals,
        })
    }

    /// Runs excursions from `(x_plus, -1)` until `x_minus` or `x_plus` is
    /// reached, plus the same number of return times `T_n(x_plus, +1)`.
    pub fn excursion_stats<R: Rng + ?Sized>(&self, kind: RateKind, n_excursions: usize, t_max: f64, rng: &mut R) -> Result<ExcursionStats> {
        self.excursions_with(kind, n_excursions, t_max, rng, false)
    }

    /// As [`ExitSetup::excursion_stats`] but always with the global bound.
    pub fn excursion_stats_global<R: Rng + ?Sized>(&self, kind: RateKind, n_excursions: usize, t_max: f64, rng: &mut R) -> Result<ExcursionStats> {
        self.excursions_with(kind, n_excursions, t_max, rng, true)
    }

    fn excursions_with<R: Rng + ?Sized>(&self, kind: RateKind, n: usize, t_max: f64, rng: &mut R, global: bool) -> Result<ExcursionStats> {
        if n == 0 {
            return Err(config("need at least one excursion"));
        }
        let band = StopRule::band(self.x_minus, self.x_plus);
        let back = StopRule::below(self.x_plus);
        let mut eta = Vec::with_capacity(n);
        let mut t_return = Vec::with_capacity(n);
        let (mut exits, mut censored) = (0usize, 0usize);
        for _ in 0..n {
            let down = ZigZagState { x: self.x_plus, v: -1.0, t: 0.0 };
            let log = if global { self.simulate_global(kind, down, &band, t_max, rng)? } else { self.simulate(kind, down, &band, t_max, rng)? };
            match log.stop_reason {
                StopReason::ExitLeft => exits += 1,
                StopReason::Censored => censored += 1,
                _ => {}
            }
            eta.push(log.final_state.t);
            let up = ZigZagState { x: self.x_plus, v: 1.0, t: 0.0 };
            let log = if global { self.simulate_global(kind, up, &back, t_max, rng)? } else { self.simulate(kind, up, &back, t_max, rng)? };
            if log.stop_reason == StopReason::Censored {
                censored += 1;
            }
            t_return.push(log.final_state.t);
        }
        let p = exits as f64 / n as f64;
        Ok(ExcursionStats { eta, t_return, exits, censored, p_tau_hat: p, p_tau_se: (p * (1.0 - p) / n as f64).sqrt() })
    }

    pub fn pn(&self) -> f64 {
        pn_log(&self.model, self.ds.flat(), self.x_minus, self.x_plus).exp()
    }

    /// Exit probability of one excursion by quadrature.
    pub fn exact_exit_probability(&self, kind: RateKind) -> f64 {
        exit_probability(&self.model, self.ds.flat(), kind, self.x_minus, self.x_plus)
    }

    /// Renewal sandwich `[p_n / (1 + c W), p_n]` for the one-excursion exit
    /// probability, where `c` bounds the excess switching rate
    /// `lambda(x, +1)` on `(x_minus, x_plus)`.
    pub fn exit_probability_bounds(&self, excess_bound: f64) -> (f64, f64) {
        let pn = self.pn();
        (pn / (1.0 + excess_bound * self.width), pn)
    }

    /// Supremum of the excess rate over `(x_minus, x_plus)` on a grid.
    pub fn excess_rate_sup(&self, grid: usize) -> f64 {
        let pts = self.ds.flat();
        let nu = self.model.nu;
        (1..grid)
            .map(|i| {
                let x = self.x_minus + (self.x_plus - self.x_minus) * i as f64 / grid as f64;
                rate_1d(nu, pts, RateKind::Subsampling, x, 1.0) - rate_1d(nu, pts, RateKind::Canonical, x, 1.0)
            })
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcursionStats {
    pub eta: Vec<f64>,
    pub t_return: Vec<f64>,
    pub exits: usize,
    pub censored: usize,
    pub p_tau_hat: f64,
    pub p_tau_se: f64,
}

impl ExcursionStats {
    /// Renewal identity `E tau = E eta / p + (1 - p)/p E T`.
    pub fn renewal_mean_tau(&self) -> f64 {
        let p = self.p_tau_hat;
        if p == 0.0 {
            return f64::INFINITY;
        }
        crate::stats::mean(&self.eta) / p + (1.0 - p) / p * crate::stats::mean(&self.t_return)
    }
}

pub fn exit_time<R: Rng + ?Sized>(model: &Model, ds: &Dataset, kind: RateKind, mm: &Micromode, t_max: f64, rng: &mut R) -> Result<ExitResult> {
    ExitSetup::new(model, ds, mm)?.exit_time(kind, t_max, rng)
}

pub fn excursion_stats<R: Rng + ?Sized>(
    model: &Model,
    ds: &Dataset,
    kind: RateKind,
    mm: &Micromode,
    n_excursions: usize,
    t_max: f64,
    rng: &mut R,
) -> Result<ExcursionStats> {
    ExitSetup::new(model, ds, mm)?.excursion_stats(kind, n_excursions, t_max, rng)
}

fn pn_log(model: &Model, pts: &[f64], x_minus: f64, x_plus: f64) -> f64 {
    log_density_flat(model, pts, &[x_minus]) - log_density_flat(model, pts, &[x_plus])
}

/// `p_n = pi(x_minus)/pi(x_plus)`.
pub fn pn_exact(model: &Model, ds: &Dataset, x_minus: f64, x_plus: f64) -> Result<f64> {
    require_1d(model, ds)?;
    if x_minus > x_plus {
        return Err(domain(format!("x_minus = {x_minus} exceeds x_plus = {x_plus}")));
    }
    Ok(pn_log(model, ds.flat(), x_minus, x_plus).exp())
}

/// Closed-form approximation of `p_n` with the bulk collapsed to the origin.
pub fn phat_n(model: &Model, ds: &Dataset, x_minus: f64, x_plus: f64, y_max: f64) -> Result<f64> {
    require_1d(model, ds)?;
    if !(x_minus > 0.0) {
        return Err(domain(format!("x_minus must be positive, got {x_minus}")));
    }
    if x_minus > x_plus {
        return Err(domain(format!("x_minus = {x_minus} exceeds x_plus = {x_plus}")));
    }
    let (nu, n) = (model.nu, ds.len() as f64);
    let c = nu + 1.0;
    let ln = c * (n - 1.0) * (x_plus / x_minus).ln()
        + 0.5 * c * ((nu + (x_plus - y_max).powi(2)).ln() - (nu + (x_minus - y_max).powi(2)).ln());
    Ok(ln.exp())
}

/// `n^{1-1/beta}/(g + c_b)`.
pub fn gamma_bar(n: usize, beta: f64, g: f64, c_b: f64) -> Result<f64> {
    if !(g + c_b > 0.0) {
        return Err(domain("g + c_beta must be positive"));
    }
    Ok((n as f64).powf(1.0 - 1.0 / beta) / (g + c_b))
}

/// `sqrt(nu) + sqrt(nu pi)/2 Gamma(nu/2)/Gamma((nu+1)/2)`.
pub fn c_nu(nu: f64) -> Result<f64> {
    if !(nu > 0.0) {
        return Err(domain(format!("nu must be positive, got {nu}")));
    }
    Ok(nu.sqrt() + 0.5 * (nu * std::f64::consts::PI).sqrt() * (ln_gamma(nu / 2.0) - ln_gamma((nu + 1.0) / 2.0)).exp())
}

/// One-excursion exit probability from `(x_plus, -1)`, assuming the score is
/// negative on `(x_minus, x_plus)`:
/// `p_n / (1 + pi(x_minus) * int lambda(x, +1)/pi(x) dx)`.
pub fn exit_probability(model: &Model, pts: &[f64], kind: RateKind, x_minus: f64, x_plus: f64) -> f64 {
    let nu = model.nu;
    let base = log_density_flat(model, pts, &[x_minus]);
    let f = |x: f64| {
        let r = rate_1d(nu, pts, kind, x, 1.0);
        if r == 0.0 {
            0.0
        } else {
            r * (base - log_density_flat(model, pts, &[x])).exp()
        }
    };
    let integral = if kind == RateKind::Canonical && (0..=64).all(|i| f(x_minus + (x_plus - x_minus) * i as f64 / 64.0) == 0.0) {
        0.0
    } else {
        adaptive_simpson(&f, x_minus, x_plus, 1e-10, 40)
    };
    pn_log(model, pts, x_minus, x_plus).exp() / (1.0 + integral)
}

pub(crate) fn adaptive_simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
    #[allow(clippy::too_many_arguments)]
    fn rec(f: &impl Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) + rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
    // split first so narrow features are not missed by the top-level rule
    let pieces = 32;
    let h = (b - a) / pieces as f64;
    (0..pieces)
        .map(|i| {
            let (lo, hi) = (a + h * i as f64, a + h * (i + 1) as f64);
            let (flo, fmid, fhi) = (f(lo), f(0.5 * (lo + hi)), f(hi));
            let whole = (hi - lo) / 6.0 * (flo + 4.0 * fmid + fhi);
            rec(f, lo, hi, flo, fmid, fhi, whole, tol / pieces as f64, depth)
        })
        .sum()
}
