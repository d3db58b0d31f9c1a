use rayon::prelude::*;

use super::{dataset_seed, key, kind_index, Rejection, StudyConfig, StudyKind, StudyResult, Table};
use crate::error::Result;
use crate::heavytail::{sample_dataset, sample_dataset_coupled, DataConfig, Dataset};
use crate::micromode::{detect, event_flags, Detection, EventParams};
use crate::posterior::Model;
use crate::rng::stream;
use crate::stats::{five_number, linear_fit, mean, spearman};
use crate::zigzag::{ExitResult, ExitSetup, RateKind};

/// Detects and certifies the micromode, optionally conditions on `E_n`, and
/// builds the exit problem. The inner error is the rejection reason.
fn prepare(model: &Model, ds: &Dataset, k: usize, beta: f64, cfg: &StudyConfig, condition: bool) -> Result<std::result::Result<ExitSetup, String>> {
    let mm = match detect(model, ds, k)? {
        Detection::Found(m) if m.certified => m,
        Detection::Found(_) => return Ok(Err("micromode not certified".into())),
        Detection::Absent(a) => return Ok(Err(format!("no micromode ({a:?})"))),
    };
    if condition {
        let p = EventParams { beta, eps: cfg.eps, delta: cfg.delta, grid_resolution: cfg.grid_resolution };
        let f = event_flags(model, ds, k, &p)?;
        if !f.e_n {
            return Ok(Err(format!("E_n fails (isolation {}, score approximation {}, scale {})", f.a_prime_n, f.b_n, f.a)));
        }
    }
    if !mm.width.is_some_and(f64::is_finite) {
        return Ok(Err("unbounded width".into()));
    }
    let setup = ExitSetup::new(model, ds, &mm)?;
    if let Some(budget) = cfg.excursion_budget {
        let p = cfg.kinds.iter().map(|&kind| setup.exact_exit_probability(kind)).fold(1.0, f64::min);
        if !(p * budget >= 1.0) {
            return Ok(Err(format!("expected excursions to exit 1/p = {:.3e} exceed the budget {budget:.3e}", 1.0 / p)));
        }
    }
    Ok(Ok(setup))
}

/// Runs `count` exit trajectories per (setup, kind) pair in parallel,
/// returned in task order.
fn run_trajectories(
    jobs: &[(usize, RateKind)],
    setups: &[&ExitSetup],
    count: usize,
    t_max: f64,
    path: impl Fn(usize, RateKind, usize) -> Vec<u64> + Sync,
    master: u64,
) -> Result<Vec<ExitResult>> {
    let tasks: Vec<(usize, RateKind, usize)> =
        jobs.iter().flat_map(|&(s, kind)| (0..count).map(move |j| (s, kind, j))).collect();
    tasks
        .par_iter()
        .map(|&(s, kind, j)| {
            let mut rng = stream(master, &path(s, kind, j));
            setups[s].exit_time(kind, t_max, &mut rng)
        })
        .collect()
}

fn mean_tau(rs: &[ExitResult], uncensored_only: bool) -> f64 {
    let v: Vec<f64> = rs.iter().filter(|r| !(uncensored_only && r.censored)).map(|r| r.tau).collect();
    if v.is_empty() {
        f64::NAN
    } else {
        mean(&v)
    }
}

pub fn exit_scaling_study(cfg: &StudyConfig) -> Result<StudyResult> {
    cfg.validate()?;
    let rows = Table::new(&["beta", "nu", "n", "replicate", "kind", "trajectory", "tau", "censored", "switches", "width", "anchor"]);
    let summary = Table::new(&[
        "beta", "nu", "n", "kind", "replicates", "trajectories", "mean_tau", "mean_tau_uncensored", "censoring_rate",
    ]);
    let mut res = StudyResult::new(StudyKind::ExitScaling, rows, summary);
    let k = cfg.k[0];
    let reps = cfg.replicates;
    for &beta in &cfg.beta {
        for &nu in &cfg.nu {
            let model = Model::new(nu, 1)?;
            let cells: Vec<(usize, usize)> = (0..reps).flat_map(|r| cfg.n.iter().map(move |&n| (r, n))).collect();
            let prepared: Vec<std::result::Result<ExitSetup, String>> = cells
                .par_iter()
                .map(|&(r, n)| {
                    let dc = DataConfig::new(beta, 1, n, dataset_seed(cfg.seed, r))?;
                    let ds = sample_dataset_coupled(&dc, cfg.coupled_top)?;
                    prepare(&model, &ds, k, beta, cfg, true)
                })
                .collect::<Result<_>>()?;
            let mut accepted = Vec::new();
            for (ci, p) in prepared.iter().enumerate() {
                let (r, n) = cells[ci];
                match p {
                    Ok(s) => accepted.push((ci, s)),
                    Err(reason) => res.rejections.push(Rejection {
                        config: key("exit", &[("beta", beta), ("nu", nu), ("n", n as f64)]),
                        replicate: r,
                        reason: reason.clone(),
                    }),
                }
            }
            let setups: Vec<&ExitSetup> = accepted.iter().map(|(_, s)| *s).collect();
            let jobs: Vec<(usize, RateKind)> =
                (0..setups.len()).flat_map(|s| cfg.kinds.iter().map(move |&kind| (s, kind))).collect();
            let out = run_trajectories(
                &jobs,
                &setups,
                cfg.trajectories,
                cfg.t_max,
                |s, kind, j| {
                    let (r, n) = cells[accepted[s].0];
                    vec![1, r as u64, n as u64, kind_index(kind), j as u64]
                },
                cfg.seed,
            )?;
            // per (cell, kind) trajectory blocks, in job order
            let block = |s: usize, kind: RateKind| -> &[ExitResult] {
                let b = jobs.iter().position(|&jb| jb == (s, kind)).unwrap();
                &out[b * cfg.trajectories..(b + 1) * cfg.trajectories]
            };
            for (b, &(s, kind)) in jobs.iter().enumerate() {
                let (r, n) = cells[accepted[s].0];
                let setup = setups[s];
                for (j, e) in out[b * cfg.trajectories..(b + 1) * cfg.trajectories].iter().enumerate() {
                    res.rows.push(vec![
                        beta.into(),
                        nu.into(),
                        n.into(),
                        r.into(),
                        kind.name().into(),
                        j.into(),
                        e.tau.into(),
                        e.censored.into(),
                        e.n_switches.into(),
                        setup.width.into(),
                        setup.anchor.into(),
                    ]);
                }
            }
            for &kind in &cfg.kinds {
                let mut ln_n = Vec::new();
                let (mut y_all, mut y_unc) = (Vec::new(), Vec::new());
                // replicates accepted at every n keep the coupling intact
                let complete: Vec<usize> = (0..reps)
                    .filter(|&r| cfg.n.iter().all(|&n| accepted.iter().any(|(ci, _)| cells[*ci] == (r, n))))
                    .collect();
                if complete.is_empty() {
                    res.warnings.push(format!(
                        "{}: no replicate accepted at every n; slope uses all accepted replicates",
                        key(kind.name(), &[("beta", beta), ("nu", nu)])
                    ));
                }
                for &n in &cfg.n {
                    let members: Vec<usize> = (0..setups.len())
                        .filter(|&s| {
                            let (r, nn) = cells[accepted[s].0];
                            nn == n && (complete.is_empty() || complete.contains(&r))
                        })
                        .collect();
                    let all: Vec<ExitResult> = members.iter().flat_map(|&s| block(s, kind).to_vec()).collect();
                    let censored = all.iter().filter(|e| e.censored).count();
                    res.summary.push(vec![
                        beta.into(),
                        nu.into(),
                        n.into(),
                        kind.name().into(),
                        members.len().into(),
                        all.len().into(),
                        mean_tau(&all, false).into(),
                        mean_tau(&all, true).into(),
                        (if all.is_empty() { f64::NAN } else { censored as f64 / all.len() as f64 }).into(),
                    ]);
                    if members.is_empty() {
                        res.warnings.push(format!("all replicates rejected at n = {n} (beta = {beta}, nu = {nu})"));
                        continue;
                    }
                    let la: Vec<f64> = members.iter().map(|&s| mean_tau(block(s, kind), false).ln()).collect();
                    let lu: Vec<f64> = members.iter().map(|&s| mean_tau(block(s, kind), true).ln()).filter(|v| v.is_finite()).collect();
                    ln_n.push((n as f64).ln());
                    y_all.push(mean(&la));
                    y_unc.push(if lu.is_empty() { f64::NAN } else { mean(&lu) });
                }
                let tag = [("beta", beta), ("nu", nu)];
                if let Some(f) = linear_fit(&ln_n, &y_all) {
                    res.fits.insert(key(&format!("exit_slope.{}", kind.name()), &tag), f);
                }
                let (xu, yu): (Vec<f64>, Vec<f64>) = ln_n.iter().zip(&y_unc).filter(|(_, y)| y.is_finite()).map(|(a, b)| (*a, *b)).unzip();
                if let Some(f) = linear_fit(&xu, &yu) {
                    res.fits.insert(key(&format!("exit_slope_uncensored.{}", kind.name()), &tag), f);
                }
            }
            let tag = [("beta", beta), ("nu", nu)];
            res.metrics.insert(key("theory_slope", &tag), (1.0 / beta - 1.0) * (nu + 1.0));
            let total = out.len();
            let cens = out.iter().filter(|e| e.censored).count();
            res.metrics.insert(key("censoring_rate", &tag), if total == 0 { f64::NAN } else { cens as f64 / total as f64 });
            res.metrics.insert(key("rejection_rate", &tag), 1.0 - accepted.len() as f64 / cells.len() as f64);
            let slope = |kind: RateKind| res.fits.get(&key(&format!("exit_slope.{}", kind.name()), &tag)).map(|f| f.slope);
            if let (Some(a), Some(b)) = (slope(RateKind::Canonical), slope(RateKind::Subsampling)) {
                res.metrics.insert(key("slope_gap", &tag), (a - b).abs());
            }
        }
    }
    Ok(res)
}

pub fn phase_transition_study(cfg: &StudyConfig) -> Result<StudyResult> {
    cfg.validate()?;
    let rows = Table::new(&[
        "beta", "nu", "n", "replicate", "kind", "trajectory", "tau", "tau_over_anchor", "censored", "critical",
    ]);
    let summary = Table::new(&[
        "beta", "nu", "n", "kind", "trajectories", "mean_ratio", "censoring_rate", "min", "q1", "median", "q3", "max", "critical",
    ]);
    let mut res = StudyResult::new(StudyKind::PhaseTransition, rows, summary);
    let k = cfg.k[0];
    for &beta in &cfg.beta {
        let critical_nu = beta / (1.0 - beta);
        for &n in &cfg.n {
            let datasets: Vec<Dataset> = (0..cfg.replicates)
                .map(|r| sample_dataset(&DataConfig::new(beta, 1, n, dataset_seed(cfg.seed, r))?))
                .collect::<Result<_>>()?;
            let cells: Vec<(usize, usize)> = (0..cfg.nu.len()).flat_map(|i| (0..cfg.replicates).map(move |r| (i, r))).collect();
            let prepared: Vec<std::result::Result<ExitSetup, String>> = cells
                .par_iter()
                .map(|&(i, r)| prepare(&Model::new(cfg.nu[i], 1)?, &datasets[r], k, beta, cfg, false))
                .collect::<Result<_>>()?;
            let mut accepted = Vec::new();
            for (ci, p) in prepared.iter().enumerate() {
                let (i, r) = cells[ci];
                match p {
                    Ok(s) => accepted.push((ci, s)),
                    Err(reason) => res.rejections.push(Rejection {
                        config: key("phase", &[("beta", beta), ("nu", cfg.nu[i]), ("n", n as f64)]),
                        replicate: r,
                        reason: reason.clone(),
                    }),
                }
            }
            let setups: Vec<&ExitSetup> = accepted.iter().map(|(_, s)| *s).collect();
            let jobs: Vec<(usize, RateKind)> =
                (0..setups.len()).flat_map(|s| cfg.kinds.iter().map(move |&kind| (s, kind))).collect();
            let out = run_trajectories(
                &jobs,
                &setups,
                cfg.trajectories,
                cfg.t_max,
                |s, kind, j| {
                    let (i, r) = cells[accepted[s].0];
                    vec![2, r as u64, n as u64, i as u64, kind_index(kind), j as u64]
                },
                cfg.seed,
            )?;
            for &kind in &cfg.kinds {
                let (mut nus, mut means) = (Vec::new(), Vec::new());
                for (i, &nu) in cfg.nu.iter().enumerate() {
                    let critical = (nu - critical_nu).abs() <= 1e-12 * critical_nu.max(1.0);
                    let mut ratios = Vec::new();
                    let mut censored = 0usize;
                    for (b, &(s, kd)) in jobs.iter().enumerate() {
                        let (ii, r) = cells[accepted[s].0];
                        if kd != kind || ii != i {
                            continue;
                        }
                        for (j, e) in out[b * cfg.trajectories..(b + 1) * cfg.trajectories].iter().enumerate() {
                            let ratio = e.tau / setups[s].anchor;
                            ratios.push(ratio);
                            censored += e.censored as usize;
                            res.rows.push(vec![
                                beta.into(),
                                nu.into(),
                                n.into(),
                                r.into(),
                                kind.name().into(),
                                j.into(),
                                e.tau.into(),
                                ratio.into(),
                                e.censored.into(),
                                critical.into(),
                            ]);
                        }
                    }
                    if ratios.is_empty() {
                        res.warnings.push(format!("no certified micromode at nu = {nu} (beta = {beta}, n = {n})"));
                        continue;
                    }
                    let m = mean(&ratios);
                    let f = five_number(&ratios);
                    res.summary.push(vec![
                        beta.into(),
                        nu.into(),
                        n.into(),
                        kind.name().into(),
                        ratios.len().into(),
                        m.into(),
                        (censored as f64 / ratios.len() as f64).into(),
                        f.min.into(),
                        f.q1.into(),
                        f.median.into(),
                        f.q3.into(),
                        f.max.into(),
                        critical.into(),
                    ]);
                    nus.push(nu);
                    means.push(m);
                }
                let tag = [("beta", beta), ("n", n as f64)];
                res.metrics.insert(key("critical_nu", &tag), critical_nu);
                if nus.len() >= 2 {
                    let lo = nus.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
                    let hi = nus.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
                    res.metrics.insert(key(&format!("ratio_max_over_min_nu.{}", kind.name()), &tag), means[hi] / means[lo]);
                    res.metrics.insert(key(&format!("spearman.{}", kind.name()), &tag), spearman(&nus, &means));
                }
            }
            let cens = out.iter().filter(|e| e.censored).count();
            if cens > 0 {
                res.warnings.push(format!(
                    "{cens} of {} trajectories censored at t_max = {}; their tau enters means as a lower bound",
                    out.len(),
                    cfg.t_max
                ));
            }
        }
    }
    Ok(res)
}
