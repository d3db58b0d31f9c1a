//! Study orchestration: every study is a pure function of its
//! [`StudyConfig`], runs its (configuration, replicate) tasks on the rayon
//! pool and reduces the results in task order.

mod contour;
mod exit;
mod tail;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{config, Result};
use crate::stats::LinearFit;
use crate::zigzag::RateKind;

pub use contour::{
    contour_grid, contour_study, log_density_grid, regression_study, strict_local_maxima, ContourGrid, GridMax,
    RegressionData, RidgeMax,
};
pub use exit::{exit_scaling_study, phase_transition_study};
pub use tail::{evt_study, prevalence_study, score_approx_study, width_scaling_study};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StudyKind {
    ExitScaling,
    PhaseTransition,
    Prevalence,
    WidthScaling,
    ScoreApprox,
    Evt,
    Contour,
    Regression,
}

impl fmt::Display for StudyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).ok().and_then(|v| v.as_str().map(str::to_owned)).unwrap_or_default();
        f.write_str(&s)
    }
}

fn default_k() -> Vec<usize> {
    vec![0]
}
fn default_d() -> usize {
    1
}
fn default_one() -> usize {
    1
}
fn default_trajectories() -> usize {
    40
}
fn default_t_max() -> f64 {
    1e6
}
fn default_quarter() -> f64 {
    0.25
}
fn default_kinds() -> Vec<RateKind> {
    RateKind::ALL.to_vec()
}
fn default_grid_resolution() -> usize {
    1024
}
fn default_resolution() -> usize {
    512
}
fn default_zoom() -> f64 {
    4.0
}
fn default_seed_search() -> usize {
    64
}
fn default_top() -> usize {
    8
}

/// Flat study configuration. `t_max` is in process time units; `zoom` is the
/// contour half-width in units of `sqrt(nu)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    pub study: StudyKind,
    pub seed: u64,
    #[serde(default)]
    pub beta: Vec<f64>,
    #[serde(default)]
    pub nu: Vec<f64>,
    #[serde(default)]
    pub n: Vec<usize>,
    #[serde(default = "default_k")]
    pub k: Vec<usize>,
    #[serde(default = "default_d")]
    pub d: usize,
    #[serde(default = "default_one")]
    pub replicates: usize,
    #[serde(default = "default_trajectories")]
    pub trajectories: usize,
    #[serde(default = "default_t_max")]
    pub t_max: f64,
    #[serde(default = "default_quarter")]
    pub delta: f64,
    #[serde(default = "default_quarter")]
    pub eps: f64,
    #[serde(default = "default_kinds")]
    pub kinds: Vec<RateKind>,
    /// Points per axis of the score-deviation grid.
    #[serde(default = "default_grid_resolution")]
    pub grid_resolution: usize,
    /// Points per axis of a contour grid.
    #[serde(default = "default_resolution")]
    pub resolution: usize,
    #[serde(default = "default_zoom")]
    pub zoom: f64,
    /// Seeds tried by the contour study until the anchor event holds.
    #[serde(default = "default_seed_search")]
    pub seed_search: usize,
    /// Upper order statistics shared across sample sizes.
    #[serde(default = "default_top")]
    pub coupled_top: usize,
    /// Exit studies skip a (replicate, n) cell whose exact one-excursion exit
    /// probability implies more expected excursions than this.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub excursion_budget: Option<f64>,
    /// Whether the regression study also emits a contour grid.
    #[serde(default)]
    pub emit_grid: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
}

impl StudyConfig {
    /// A configuration with defaults for everything but the study and seed.
    pub fn new(study: StudyKind, seed: u64) -> Self {
        StudyConfig {
            study,
            seed,
            beta: Vec::new(),
            nu: Vec::new(),
            n: Vec::new(),
            k: default_k(),
            d: default_d(),
            replicates: 1,
            trajectories: default_trajectories(),
            t_max: default_t_max(),
            delta: 0.25,
            eps: 0.25,
            kinds: default_kinds(),
            grid_resolution: default_grid_resolution(),
            resolution: default_resolution(),
            zoom: default_zoom(),
            seed_search: default_seed_search(),
            coupled_top: default_top(),
            excursion_budget: None,
            emit_grid: false,
            output: None,
        }
    }

    /// Checks every field and returns all violations at once.
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        let need = |name: &str, empty: bool, bad: &mut Vec<String>| {
            if empty {
                bad.push(format!("`{name}` grid is empty"));
            }
        };
        need("beta", self.beta.is_empty(), &mut bad);
        need("n", self.n.is_empty(), &mut bad);
        if !matches!(self.study, StudyKind::Evt) {
            need("nu", self.nu.is_empty(), &mut bad);
        }
        need("k", self.k.is_empty(), &mut bad);
        if self.beta.iter().any(|b| !(*b > 0.0 && b.is_finite())) {
            bad.push("`beta` values must be positive and finite".into());
        }
        if self.nu.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            bad.push("`nu` values must be positive and finite".into());
        }
        if self.n.iter().any(|&n| n < 2) {
            bad.push("`n` values must be at least 2".into());
        }
        if self.n.iter().any(|&n| self.k.iter().any(|&k| k >= n)) {
            bad.push("`k` must be smaller than every `n`".into());
        }
        if self.d < 1 {
            bad.push("`d` must be at least 1".into());
        }
        if self.replicates < 1 {
            bad.push("`replicates` must be at least 1".into());
        }
        if self.trajectories < 1 {
            bad.push("`trajectories` must be at least 1".into());
        }
        if !(self.t_max > 0.0) {
            bad.push("`t_max` must be positive".into());
        }
        if !(self.delta > 0.0 && self.delta < 0.5) {
            bad.push("`delta` must lie in (0, 1/2)".into());
        }
        if !(self.eps > 0.0 && self.eps < 0.5) {
            bad.push("`eps` must lie in (0, 1/2)".into());
        }
        if self.kinds.is_empty() {
            bad.push("`kinds` is empty".into());
        }
        if self.grid_resolution < 64 {
            bad.push("`grid_resolution` must be at least 64".into());
        }
        if !(2..=2048).contains(&self.resolution) {
            bad.push("`resolution` must lie in 2..=2048".into());
        }
        if !(self.zoom > 0.0) {
            bad.push("`zoom` must be positive".into());
        }
        if self.excursion_budget.is_some_and(|b| !(b >= 1.0)) {
            bad.push("`excursion_budget` must be at least 1".into());
        }
        if self.coupled_top < 1 || self.n.iter().any(|&n| self.coupled_top > n) {
            bad.push("`coupled_top` must lie in 1..=n".into());
        }
        let sub_critical = self.beta.iter().all(|&b| b < 1.0);
        match self.study {
            StudyKind::ExitScaling | StudyKind::WidthScaling if self.beta.iter().any(|&b| b > 1.0) => {
                bad.push(format!("{} needs beta <= 1", self.study))
            }
            StudyKind::PhaseTransition if !sub_critical => bad.push("phase_transition needs 0 < beta < 1".into()),
            StudyKind::ExitScaling | StudyKind::PhaseTransition if self.d != 1 => {
                bad.push(format!("{} is one-dimensional", self.study))
            }
            StudyKind::Contour if self.d != 2 => bad.push("contour needs d = 2".into()),
            _ => {}
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(config(bad.join("; ")))
        }
    }
}

/// One table cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Cell {
    Bool(bool),
    Int(i64),
    Float(f64),
    Text(String),
}

impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Cell::Bool(v)
    }
}
impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}
impl From<u64> for Cell {
    fn from(v: u64) -> Self {
        Cell::Int(v as i64)
    }
}
impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}
impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_owned())
    }
}
impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::Text(v)
    }
}

impl Cell {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Cell::Float(v) => Some(*v),
            Cell::Int(v) => Some(*v as f64),
            _ => None,
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match self {
            Cell::Bool(b) => Some(*b),
            _ => None,
        }
    }
}

/// Column-named rows.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(columns: &[&str]) -> Self {
        Table { columns: columns.iter().map(|c| c.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        assert_eq!(row.len(), self.columns.len(), "row width");
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    /// Values of a numeric column.
    pub fn floats(&self, name: &str) -> Vec<f64> {
        let i = self.column(name).unwrap_or_else(|| panic!("no column `{name}`"));
        self.rows.iter().filter_map(|r| r[i].as_f64()).collect()
    }
}

/// A (configuration, replicate) task excluded by conditioning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    pub config: String,
    pub replicate: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyResult {
    pub study: StudyKind,
    /// Per-(configuration, replicate) records.
    pub rows: Table,
    /// Per-configuration aggregates.
    pub summary: Table,
    pub fits: BTreeMap<String, LinearFit>,
    pub metrics: BTreeMap<String, f64>,
    pub rejections: Vec<Rejection>,
    pub warnings: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid: Option<ContourGrid>,
}

impl StudyResult {
    fn new(study: StudyKind, rows: Table, summary: Table) -> Self {
        StudyResult {
            study,
            rows,
            summary,
            fits: BTreeMap::new(),
            metrics: BTreeMap::new(),
            rejections: Vec::new(),
            warnings: Vec::new(),
            grid: None,
        }
    }

    pub fn metric(&self, key: &str) -> Option<f64> {
        self.metrics.get(key).copied()
    }

    pub fn fit(&self, key: &str) -> Option<&LinearFit> {
        self.fits.get(key)
    }
}

/// Runs the study named in the configuration.
pub fn run_study(cfg: &StudyConfig) -> Result<StudyResult> {
    cfg.validate()?;
    match cfg.study {
        StudyKind::ExitScaling => exit_scaling_study(cfg),
        StudyKind::PhaseTransition => phase_transition_study(cfg),
        StudyKind::Prevalence => prevalence_study(cfg),
        StudyKind::WidthScaling => width_scaling_study(cfg),
        StudyKind::ScoreApprox => score_approx_study(cfg),
        StudyKind::Evt => evt_study(cfg),
        StudyKind::Contour => contour_study(cfg),
        StudyKind::Regression => regression_study(cfg),
    }
}

/// Seed of replicate `r`; independent of `n` so coupled datasets line up.
pub(crate) fn dataset_seed(master: u64, replicate: usize) -> u64 {
    crate::rng::derive_seed(master, &[0, replicate as u64])
}

pub(crate) fn kind_index(kind: RateKind) -> u64 {
    match kind {
        RateKind::Canonical => 0,
        RateKind::Subsampling => 1,
    }
}

/// `name[beta=..,nu=..]`-style metric keys.
pub fn key(name: &str, parts: &[(&str, f64)]) -> String {
    if parts.is_empty() {
        return name.to_owned();
    }
    let inner: Vec<String> = parts.iter().map(|(k, v)| format!("{k}={v}")).collect();
    format!("{name}[{}]", inner.join(","))
}
