use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Context;
use clap::Args;
use micromode_core::experiments::{run_study, StudyConfig, StudyKind, StudyResult};
use micromode_core::heavytail::{gk_proxy, radial_scale, sample_dataset, sample_dataset_coupled};
use micromode_core::micromode::{
    c_beta, detect, event_flags, theorem_bounds_check, BoundsOutcome, BoundsReport, Certificate, Detection, EventFlags, EventParams,
};
use micromode_core::rng::stream;
use micromode_core::zigzag::{gamma_bar, simulate, ExitSetup, RateKind, StopRule, ZigZagState};
use micromode_core::{DataConfig, Dataset, Error, Model};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::io::{dataset_rows, fmt_f64, read_dataset, OutputDigest, OutputDir};

/// How a command failed; decides the process exit code.
#[derive(Debug)]
pub enum Failure {
    /// Bad flags or configuration: exit code 2.
    Usage(String),
    /// Unreadable input or a failed computation: exit code 1.
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::Index { .. } => Failure::Usage(e.to_string()),
            other => Failure::Runtime(other.into()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

pub type CmdResult<T> = Result<T, Failure>;

/// Prints to stdout; a closed pipe is not an error.
fn emit(text: &str) {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{text}");
}

fn usage<T>(msg: impl Into<String>) -> CmdResult<T> {
    Err(Failure::Usage(msg.into()))
}

/// Where the data come from: a points file, or sampling flags.
#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct DataArgs {
    /// Points CSV with header y1,...,yd.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Tail index of the sampled data; with --data it labels the file's tail
    /// index for the event flags and bounds.
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long, default_value_t = 1)]
    pub dim: usize,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// SHA-256 of the data file, filled in when the run is recorded.
    #[arg(skip)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_sha256: Option<String>,
}

impl DataArgs {
    fn load(&mut self) -> CmdResult<Dataset> {
        match &self.data {
            Some(path) => {
                let bytes = fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
                let digest = crate::io::sha256_hex(&bytes);
                if let Some(expected) = &self.data_sha256 {
                    if *expected != digest {
                        return Err(Failure::Runtime(anyhow::anyhow!("{} changed since the run was recorded", path.display())));
                    }
                }
                self.data_sha256 = Some(digest);
                Ok(read_dataset(path)?)
            }
            None => {
                let (Some(beta), Some(n)) = (self.beta, self.n) else {
                    return usage("either --data or both --beta and --n are required");
                };
                Ok(sample_dataset(&DataConfig::new(beta, self.dim, n, self.seed)?)?)
            }
        }
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[command(allow_negative_numbers = true)]
pub struct GenerateArgs {
    #[arg(long)]
    pub beta: f64,
    #[arg(long, default_value_t = 1)]
    pub dim: usize,
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Sample the top order statistics from their joint law so that datasets
    /// differing only in n share them.
    #[arg(long)]
    pub coupled_top: Option<usize>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[command(allow_negative_numbers = true)]
pub struct MicromodeArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub nu: f64,
    /// Order-statistic index; 0 is the most extreme point.
    #[arg(long, default_value_t = 0)]
    pub k: usize,
    #[arg(long, default_value_t = 0.25)]
    pub eps: f64,
    #[arg(long, default_value_t = 0.25)]
    pub delta: f64,
    /// Also write the report and a manifest here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[command(allow_negative_numbers = true, group(clap::ArgGroup::new("mode").required(true).args(["horizon", "exit"])))]
pub struct ZigzagArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub nu: f64,
    /// canonical or subsampling.
    #[arg(long)]
    pub kind: RateKind,
    /// Simulate for this long and record every switch.
    #[arg(long)]
    pub horizon: Option<f64>,
    /// Simulate exits from the micromode of Y_(n-k).
    #[arg(long)]
    pub exit: bool,
    #[arg(long, default_value_t = 1)]
    pub traj: usize,
    #[arg(long, default_value_t = 0)]
    pub k: usize,
    /// Censoring time of each exit trajectory.
    #[arg(long, default_value_t = 1e9)]
    pub t_max: f64,
    /// Excursions used to estimate the one-excursion exit probability.
    #[arg(long, default_value_t = 10_000)]
    pub excursions: usize,
    /// Start position for --horizon; defaults to Y_(n).
    #[arg(long)]
    pub x0: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    pub v0: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[command(allow_negative_numbers = true)]
pub struct StudyArgs {
    /// Study configuration, TOML or JSON (by extension).
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory; defaults to the config's `output`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ReplayArgs {
    /// manifest.json of an earlier run.
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

/// A fully resolved run, enough to reproduce its outputs exactly.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "snake_case")]
pub enum Invocation {
    Generate(GenerateArgs),
    Micromode(MicromodeArgs),
    Zigzag(ZigzagArgs),
    Study(StudyConfig),
}

impl Invocation {
    fn seed(&self) -> u64 {
        match self {
            Invocation::Generate(a) => a.seed,
            Invocation::Micromode(a) => a.data.seed,
            Invocation::Zigzag(a) => a.data.seed,
            Invocation::Study(c) => c.seed,
        }
    }

    pub fn set_seed(&mut self, seed: u64) {
        match self {
            Invocation::Generate(a) => a.seed = seed,
            Invocation::Micromode(a) => a.data.seed = seed,
            Invocation::Zigzag(a) => a.data.seed = seed,
            Invocation::Study(c) => c.seed = seed,
        }
    }

    fn out_dir(&self) -> Option<&Path> {
        match self {
            Invocation::Generate(a) => Some(&a.out),
            Invocation::Micromode(a) => a.out.as_deref(),
            Invocation::Zigzag(a) => Some(&a.out),
            Invocation::Study(c) => c.output.as_deref().map(Path::new),
        }
    }

    fn set_out_dir(&mut self, dir: PathBuf) {
        match self {
            Invocation::Generate(a) => a.out = dir,
            Invocation::Micromode(a) => a.out = Some(dir),
            Invocation::Zigzag(a) => a.out = dir,
            Invocation::Study(c) => c.output = Some(dir.to_string_lossy().into_owned()),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub invocation: Invocation,
    pub seed: u64,
    pub threads: usize,
    pub runtime_seconds: f64,
    pub outputs: Vec<OutputDigest>,
}

/// What a run wrote to disk and what it reports on stdout.
pub struct Execution {
    pub outputs: Vec<OutputDigest>,
    pub stdout: Option<String>,
}

/// Prints a run's stdout report.
pub fn emit_report(run: &Execution) {
    if let Some(text) = &run.stdout {
        emit(text);
    }
}

/// Runs an invocation and writes its manifest next to the outputs.
pub fn execute(mut inv: Invocation) -> CmdResult<Execution> {
    let start = Instant::now();
    let mut out = match inv.out_dir() {
        Some(dir) => Some(OutputDir::create(dir)?),
        None => None,
    };
    let stdout = match &mut inv {
        Invocation::Generate(a) => generate(a, out.as_mut().expect("generate has an output directory")).map(|_| None)?,
        Invocation::Micromode(a) => Some(micromode(a, out.as_mut())?),
        Invocation::Zigzag(a) => zigzag(a, out.as_mut().expect("zigzag has an output directory"))?,
        Invocation::Study(c) => study(c, out.as_mut().expect("study has an output directory")).map(|_| None)?,
    };
    let Some(mut out) = out else { return Ok(Execution { outputs: Vec::new(), stdout }) };
    let outputs = out.digests().to_vec();
    let manifest = RunManifest {
        tool: "micromode".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        seed: inv.seed(),
        invocation: inv,
        threads: rayon::current_num_threads(),
        runtime_seconds: start.elapsed().as_secs_f64(),
        outputs: outputs.clone(),
    };
    out.write_json("manifest.json", &manifest)?;
    Ok(Execution { outputs, stdout })
}

fn generate(a: &GenerateArgs, out: &mut OutputDir) -> CmdResult<()> {
    let cfg = DataConfig::new(a.beta, a.dim, a.n, a.seed)?;
    let ds = match a.coupled_top {
        Some(top) => sample_dataset_coupled(&cfg, top)?,
        None => sample_dataset(&cfg)?,
    };
    let (header, rows) = dataset_rows(&ds);
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    out.write_csv("points.csv", &header, rows)?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct BoundsSummary {
    /// Bounds with the radial scale `|Y_(n-k)|/n^{1/beta}` as the plug-in.
    radial: Option<BoundsReport>,
    /// Bounds with the Gamma-limit proxy as the plug-in.
    gamma_proxy: Option<BoundsReport>,
}

#[derive(Debug, Serialize)]
struct MicromodeReport {
    found: bool,
    certified: bool,
    absence: Option<String>,
    k: usize,
    n: usize,
    anchor: Vec<f64>,
    x_plus: Option<Vec<f64>>,
    width: Option<f64>,
    x_minus: Option<f64>,
    residual: Option<f64>,
    iterations: Option<usize>,
    certificate: Option<Certificate>,
    flags: Option<EventFlags>,
    bounds: Option<BoundsSummary>,
}

fn checked(o: BoundsOutcome) -> Option<BoundsReport> {
    match o {
        BoundsOutcome::Checked(r) => Some(r),
        BoundsOutcome::EventAViolated => None,
    }
}

fn micromode(a: &mut MicromodeArgs, out: Option<&mut OutputDir>) -> CmdResult<String> {
    let ds = a.data.load()?;
    let model = Model::new(a.nu, ds.dim())?;
    let anchor = ds.point(ds.order_index(a.k)?).to_vec();
    let det = detect(&model, &ds, a.k)?;
    let beta = a.data.beta;
    let flags = match beta {
        Some(b) if ds.len() >= 2 => Some(event_flags(&model, &ds, a.k, &EventParams::new(b, a.eps, a.delta))?),
        _ => None,
    };
    let mm = det.micromode();
    let bounds = match (beta, det.certified()) {
        (Some(b), Some(m)) if b <= 1.0 => Some(BoundsSummary {
            radial: checked(theorem_bounds_check(&model, &ds, m, radial_scale(&ds, a.k, b)?, b)?),
            gamma_proxy: checked(theorem_bounds_check(&model, &ds, m, gk_proxy(&ds, a.k, b)?, b)?),
        }),
        _ => None,
    };
    let report = MicromodeReport {
        found: det.micromode().is_some(),
        certified: det.certified().is_some(),
        absence: match &det {
            Detection::Absent(r) => Some(format!("{r:?}")),
            Detection::Found(m) if !m.certified => Some("NotCertified".into()),
            Detection::Found(_) => None,
        },
        k: a.k,
        n: ds.len(),
        anchor,
        x_plus: mm.map(|m| m.x_plus.clone()),
        width: mm.and_then(|m| m.width),
        x_minus: mm.and_then(|m| m.x_minus),
        residual: mm.map(|m| m.residual),
        iterations: mm.map(|m| m.iterations),
        certificate: mm.map(|m| m.certificate.clone()),
        flags,
        bounds,
    };
    if let Some(out) = out {
        out.write_json("report.json", &report)?;
    }
    Ok(serde_json::to_string_pretty(&report)?)
}

#[derive(Debug, Serialize)]
struct TrajectorySummary {
    trajectory: usize,
    switches: u64,
    proposals: u64,
    acceptance_rate: f64,
    final_x: f64,
    final_v: f64,
}

#[derive(Debug, Serialize)]
struct HorizonSummary {
    kind: RateKind,
    horizon: f64,
    x0: f64,
    v0: f64,
    trajectories: Vec<TrajectorySummary>,
    /// Single-observation targets only: KS distance between the pooled
    /// occupation measure and the Student-t posterior.
    occupation_ks: Option<f64>,
}

#[derive(Debug, Serialize)]
struct Sandwich {
    excess_bound: f64,
    lower: f64,
    upper: f64,
}

#[derive(Debug, Serialize)]
struct ExitSummary {
    kind: RateKind,
    trajectories: usize,
    t_max: f64,
    mean_tau: f64,
    mean_tau_uncensored: Option<f64>,
    censoring_rate: f64,
    x_plus: f64,
    x_minus: f64,
    width: f64,
    mirrored: bool,
    p_n: f64,
    p_exit_exact: f64,
    excursions: usize,
    p_exit: f64,
    p_exit_se: f64,
    /// Renewal sandwich with the measured excess-rate supremum.
    sandwich_measured: Sandwich,
    /// Renewal sandwich with the theoretical excess-rate bound (needs beta < 1).
    sandwich_theory: Option<Sandwich>,
}

fn zigzag(a: &mut ZigzagArgs, out: &mut OutputDir) -> CmdResult<Option<String>> {
    if a.traj == 0 {
        return usage("--traj must be at least 1");
    }
    let ds = a.data.load()?;
    let model = Model::new(a.nu, ds.dim())?;
    let seed = a.data.seed;
    if let Some(horizon) = a.horizon {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return usage("--horizon must be positive and finite");
        }
        let x0 = match a.x0 {
            Some(x) => x,
            None => ds.point(ds.order_index(0)?)[0],
        };
        let init = ZigZagState::new(x0, a.v0)?;
        let logs = (0..a.traj)
            .into_par_iter()
            .map(|j| {
                let mut rng = stream(seed, &[10, j as u64]);
                simulate(&model, &ds, a.kind, init, &StopRule::none(), horizon, true, &mut rng)
            })
            .collect::<Result<Vec<_>, _>>()?;
        let mut trajectories = Vec::new();
        for (j, log) in logs.iter().enumerate() {
            let first = std::iter::once(vec![fmt_f64(0.0), fmt_f64(log.initial.x), fmt_f64(log.initial.v)]);
            let rows = first.chain(log.events.iter().map(|e| vec![fmt_f64(e.t), fmt_f64(e.x), fmt_f64(e.v)]));
            out.write_csv(&format!("events_{j}.csv"), &["t", "x", "v"], rows)?;
            trajectories.push(TrajectorySummary {
                trajectory: j,
                switches: log.acceptances,
                proposals: log.proposals,
                acceptance_rate: log.acceptances as f64 / log.proposals.max(1) as f64,
                final_x: log.final_state.x,
                final_v: log.final_state.v,
            });
        }
        let occupation_ks = if ds.len() == 1 {
            let y = ds.point(0)[0];
            let t = StudentsT::new(y, 1.0, a.nu).map_err(|e| Failure::Runtime(anyhow::anyhow!("{e}")))?;
            let qs: Vec<f64> = (1..2000).map(|i| t.inverse_cdf(i as f64 / 2000.0)).collect();
            let pooled: Vec<f64> = logs.iter().map(|l| l.occupation_cdf(&qs)).fold(vec![0.0; qs.len()], |acc, c| {
                acc.iter().zip(c).map(|(s, v)| s + v / logs.len() as f64).collect()
            });
            Some(qs.iter().zip(&pooled).map(|(&q, &c)| (c - t.cdf(q)).abs()).fold(0.0, f64::max))
        } else {
            None
        };
        let summary = HorizonSummary { kind: a.kind, horizon, x0, v0: a.v0, trajectories, occupation_ks };
        out.write_json("summary.json", &summary)?;
        return Ok(None);
    }

    if a.excursions == 0 {
        return usage("--excursions must be at least 1");
    }
    let det = detect(&model, &ds, a.k)?;
    let Some(mm) = det.certified() else {
        return Err(Failure::Runtime(anyhow::anyhow!("no certified micromode at Y_(n-{}); --exit needs one", a.k)));
    };
    let setup = ExitSetup::new(&model, &ds, mm)?;
    let runs = (0..a.traj)
        .into_par_iter()
        .map(|j| {
            let mut rng = stream(seed, &[11, j as u64]);
            setup.exit_time(a.kind, a.t_max, &mut rng)
        })
        .collect::<Result<Vec<_>, _>>()?;
    out.write_csv(
        "exits.csv",
        &["trajectory", "tau", "censored", "switches", "proposals"],
        runs.iter().enumerate().map(|(j, r)| {
            vec![j.to_string(), fmt_f64(r.tau), r.censored.to_string(), r.n_switches.to_string(), r.proposals.to_string()]
        }),
    )?;
    let mut rng = stream(seed, &[12]);
    let exc = setup.excursion_stats(a.kind, a.excursions, a.t_max, &mut rng)?;
    let taus: Vec<f64> = runs.iter().map(|r| r.tau).collect();
    let unc: Vec<f64> = runs.iter().filter(|r| !r.censored).map(|r| r.tau).collect();
    let excess = |bound: f64| {
        let (lower, upper) = setup.exit_probability_bounds(bound);
        Sandwich { excess_bound: bound, lower, upper }
    };
    let measured = match a.kind {
        RateKind::Canonical => 0.0,
        RateKind::Subsampling => setup.excess_rate_sup(4096),
    };
    let sandwich_theory = match a.data.beta {
        Some(b) if b < 1.0 && a.kind == RateKind::Subsampling => {
            let g = radial_scale(&ds, a.k, b)?;
            Some(excess((a.nu + 1.0) * gamma_bar(ds.len(), b, g, c_beta(b, a.nu)?)?))
        }
        Some(_) if a.kind == RateKind::Canonical => Some(excess(0.0)),
        _ => None,
    };
    let summary = ExitSummary {
        kind: a.kind,
        trajectories: a.traj,
        t_max: a.t_max,
        mean_tau: micromode_core::stats::mean(&taus),
        mean_tau_uncensored: (!unc.is_empty()).then(|| micromode_core::stats::mean(&unc)),
        censoring_rate: (runs.len() - unc.len()) as f64 / runs.len() as f64,
        x_plus: setup.x_plus,
        x_minus: setup.x_minus,
        width: setup.width,
        mirrored: setup.mirrored,
        p_n: setup.pn(),
        p_exit_exact: setup.exact_exit_probability(a.kind),
        excursions: a.excursions,
        p_exit: exc.p_tau_hat,
        p_exit_se: exc.p_tau_se,
        sandwich_measured: excess(measured),
        sandwich_theory,
    };
    out.write_json("summary.json", &summary)?;
    Ok(Some(serde_json::to_string_pretty(&summary)?))
}

/// Keys a study configuration may contain.
fn known_keys() -> BTreeSet<String> {
    let mut cfg = StudyConfig::new(StudyKind::Evt, 0);
    cfg.excursion_budget = Some(1.0);
    cfg.output = Some(String::new());
    match serde_json::to_value(&cfg) {
        Ok(serde_json::Value::Object(m)) => m.keys().cloned().collect(),
        _ => unreachable!("StudyConfig serializes to an object"),
    }
}

/// Parses a TOML or JSON study configuration, reporting every unknown key.
pub fn load_study_config(path: &Path) -> CmdResult<StudyConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    let value: serde_json::Value = if is_json {
        match serde_json::from_str(&text) {
            Ok(v) => v,
            Err(e) => return usage(format!("{}: {e}", path.display())),
        }
    } else {
        match toml::from_str::<toml::Table>(&text) {
            Ok(t) => serde_json::to_value(t)?,
            Err(e) => return usage(format!("{}: {e}", path.display())),
        }
    };
    let Some(obj) = value.as_object() else {
        return usage(format!("{}: expected a table of keys", path.display()));
    };
    let known = known_keys();
    let unknown: Vec<&str> = obj.keys().filter(|k| !known.contains(*k)).map(String::as_str).collect();
    if !unknown.is_empty() {
        return usage(format!("{}: unknown keys: {}", path.display(), unknown.join(", ")));
    }
    match serde_json::from_value::<StudyConfig>(value) {
        Ok(cfg) => Ok(cfg),
        Err(e) => usage(format!("{}: {e}", path.display())),
    }
}

#[derive(Debug, Serialize)]
struct StudySummary<'a> {
    study: StudyKind,
    seed: u64,
    config: &'a StudyConfig,
    fits: &'a std::collections::BTreeMap<String, micromode_core::stats::LinearFit>,
    metrics: &'a std::collections::BTreeMap<String, f64>,
    rejections: &'a [micromode_core::experiments::Rejection],
    warnings: &'a [String],
}

fn study(cfg: &StudyConfig, out: &mut OutputDir) -> CmdResult<()> {
    cfg.validate()?;
    // the output directory is not part of the result, so replays compare equal
    let cfg = StudyConfig { output: None, ..cfg.clone() };
    let res: StudyResult = run_study(&cfg)?;
    out.write_table("rows.csv", &res.rows)?;
    out.write_table("summary.csv", &res.summary)?;
    if let Some(g) = &res.grid {
        let nx = g.x.len();
        out.write_csv(
            "grid.csv",
            &["x1", "x2", "log_density"],
            g.values.iter().enumerate().map(|(i, v)| vec![fmt_f64(g.x[i % nx]), fmt_f64(g.y[i / nx]), fmt_f64(*v)]),
        )?;
    }
    out.write_json(
        "result.json",
        &StudySummary {
            study: res.study,
            seed: cfg.seed,
            config: &cfg,
            fits: &res.fits,
            metrics: &res.metrics,
            rejections: &res.rejections,
            warnings: &res.warnings,
        },
    )?;
    for w in &res.warnings {
        eprintln!("warning: {w}");
    }
    Ok(())
}

/// Resolves a study invocation: config file, seed override, output dir.
pub fn study_invocation(a: &StudyArgs, seed_override: Option<u64>) -> CmdResult<Invocation> {
    let mut cfg = load_study_config(&a.config)?;
    if let Some(s) = seed_override {
        cfg.seed = s;
    }
    if let Some(dir) = &a.out {
        cfg.output = Some(dir.to_string_lossy().into_owned());
    }
    if cfg.output.is_none() {
        return usage("no output directory: pass --out or set `output` in the config");
    }
    cfg.validate()?;
    Ok(Invocation::Study(cfg))
}

#[derive(Debug, Serialize)]
struct ReplayReport {
    identical: bool,
    mismatched: Vec<String>,
}

/// Re-runs a recorded invocation into a new directory and compares digests.
pub fn replay(a: &ReplayArgs) -> CmdResult<bool> {
    let text = fs::read_to_string(&a.manifest).with_context(|| format!("cannot read {}", a.manifest.display()))?;
    let manifest: RunManifest = match serde_json::from_str(&text) {
        Ok(m) => m,
        Err(e) => return usage(format!("{}: not a run manifest: {e}", a.manifest.display())),
    };
    let mut inv = manifest.invocation.clone();
    inv.set_out_dir(a.out.clone());
    // the re-run's own stdout report is dropped; only the verdict is printed
    let outputs = execute(inv)?.outputs;
    let mut mismatched: Vec<String> = manifest
        .outputs
        .iter()
        .filter(|o| !outputs.contains(o))
        .map(|o| o.file.clone())
        .collect();
    mismatched.extend(outputs.iter().filter(|o| !manifest.outputs.iter().any(|m| m.file == o.file)).map(|o| o.file.clone()));
    let report = ReplayReport { identical: mismatched.is_empty(), mismatched };
    emit(&serde_json::to_string_pretty(&report)?);
    Ok(report.identical)
}
