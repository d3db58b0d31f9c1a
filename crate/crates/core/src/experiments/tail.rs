use rayon::prelude::*;

use super::{dataset_seed, key, Rejection, StudyConfig, StudyKind, StudyResult, Table};
use crate::error::Result;
use crate::heavytail::{evt_constant_a, gk_proxy, radial_scale, sample_dataset, sample_dataset_coupled, DataConfig};
use crate::micromode::{detect, event_flags, theorem_bounds_check, BoundsOutcome, EventParams};
use crate::posterior::{score_deviation_sup, Model};
use crate::stats::{gamma_cdf, ks_distance, linear_fit, mean};

fn rate(hits: usize, total: usize) -> f64 {
    if total == 0 {
        f64::NAN
    } else {
        hits as f64 / total as f64
    }
}

/// `Some(pass)` when the bounds were checked, `None` when event A fails.
fn bounds_pass(outcome: BoundsOutcome) -> Option<bool> {
    match outcome {
        BoundsOutcome::Checked(r) => Some(r.all()),
        BoundsOutcome::EventAViolated => None,
    }
}

fn opt_cell(v: Option<bool>) -> super::Cell {
    match v {
        Some(b) => b.into(),
        None => "".into(),
    }
}

pub fn prevalence_study(cfg: &StudyConfig) -> Result<StudyResult> {
    cfg.validate()?;
    let rows = Table::new(&[
        "beta", "nu", "n", "k", "replicate", "a_n", "a_prime_n", "b_n", "a", "e_n", "detected", "certified",
        "bounds_radial", "bounds_gk", "x_plus", "width",
    ]);
    let summary = Table::new(&[
        "beta", "nu", "n", "k", "replicates", "p_a_n", "p_certified_given_a_n", "p_absent", "p_e_n",
        "bounds_radial_rate", "bounds_gk_rate",
    ]);
    let mut res = StudyResult::new(StudyKind::Prevalence, rows, summary);
    let d = cfg.d;
    for &beta in &cfg.beta {
        for &nu in &cfg.nu {
            let model = Model::new(nu, d)?;
            for &n in &cfg.n {
                for &k in &cfg.k {
                    let p = EventParams { beta, eps: cfg.eps, delta: cfg.delta, grid_resolution: cfg.grid_resolution };
                    let recs: Vec<_> = (0..cfg.replicates)
                        .into_par_iter()
                        .map(|r| -> Result<_> {
                            let ds = sample_dataset(&DataConfig::new(beta, d, n, dataset_seed(cfg.seed, r))?)?;
                            let flags = event_flags(&model, &ds, k, &p)?;
                            let det = detect(&model, &ds, k)?;
                            let (mut radial, mut gk) = (None, None);
                            if let Some(mm) = det.certified() {
                                if beta <= 1.0 {
                                    radial = bounds_pass(theorem_bounds_check(&model, &ds, mm, radial_scale(&ds, k, beta)?, beta)?);
                                    gk = bounds_pass(theorem_bounds_check(&model, &ds, mm, gk_proxy(&ds, k, beta)?, beta)?);
                                }
                            }
                            Ok((flags, det, radial, gk))
                        })
                        .collect::<Result<_>>()?;
                    let (mut a_n, mut cert_a, mut absent, mut e_n) = (0, 0, 0, 0);
                    let (mut rad_ok, mut rad_tot, mut gk_ok, mut gk_tot) = (0, 0, 0, 0);
                    for (r, (f, det, radial, gk)) in recs.iter().enumerate() {
                        let mm = det.micromode();
                        let certified = det.certified().is_some();
                        a_n += f.a_n as usize;
                        cert_a += (f.a_n && certified) as usize;
                        absent += (!certified) as usize;
                        e_n += f.e_n as usize;
                        if let Some(b) = radial {
                            rad_tot += 1;
                            rad_ok += *b as usize;
                        }
                        if let Some(b) = gk {
                            gk_tot += 1;
                            gk_ok += *b as usize;
                        }
                        res.rows.push(vec![
                            beta.into(),
                            nu.into(),
                            n.into(),
                            k.into(),
                            r.into(),
                            f.a_n.into(),
                            f.a_prime_n.into(),
                            f.b_n.into(),
                            f.a.into(),
                            f.e_n.into(),
                            mm.is_some().into(),
                            certified.into(),
                            opt_cell(*radial),
                            opt_cell(*gk),
                            mm.map_or(f64::NAN, |m| m.x_plus[0]).into(),
                            mm.and_then(|m| m.width).unwrap_or(f64::NAN).into(),
                        ]);
                    }
                    let reps = cfg.replicates;
                    let row = [
                        rate(a_n, reps),
                        rate(cert_a, a_n),
                        rate(absent, reps),
                        rate(e_n, reps),
                        rate(rad_ok, rad_tot),
                        rate(gk_ok, gk_tot),
                    ];
                    let mut cells = vec![beta.into(), nu.into(), n.into(), k.into(), reps.into()];
                    cells.extend(row.iter().map(|&v| v.into()));
                    res.summary.push(cells);
                    let tag = [("beta", beta), ("nu", nu), ("n", n as f64), ("k", k as f64)];
                    for (name, v) in ["p_a_n", "p_certified_given_a_n", "p_absent", "p_e_n", "bounds_radial_rate", "bounds_gk_rate"].iter().zip(row) {
                        res.metrics.insert(key(name, &tag), v);
                    }
                }
            }
        }
    }
    Ok(res)
}

pub fn width_scaling_study(cfg: &StudyConfig) -> Result<StudyResult> {
    cfg.validate()?;
    let rows = Table::new(&[
        "beta", "nu", "n", "replicate", "certified", "width", "x_plus", "anchor", "bounds_radial", "bounds_gk",
        "width_lo_margin", "width_hi_margin",
    ]);
    let summary = Table::new(&["beta", "nu", "n", "certified", "mean_log_width", "bounds_radial_rate", "bounds_gk_rate"]);
    let mut res = StudyResult::new(StudyKind::WidthScaling, rows, summary);
    let k = cfg.k[0];
    for &beta in &cfg.beta {
        for &nu in &cfg.nu {
            let model = Model::new(nu, 1)?;
            let cells: Vec<(usize, usize)> = (0..cfg.replicates).flat_map(|r| cfg.n.iter().map(move |&n| (r, n))).collect();
            let recs: Vec<_> = cells
                .par_iter()
                .map(|&(r, n)| -> Result<_> {
                    let ds = sample_dataset_coupled(&DataConfig::new(beta, 1, n, dataset_seed(cfg.seed, r))?, cfg.coupled_top)?;
                    let det = detect(&model, &ds, k)?;
                    let Some(mm) = det.certified() else { return Ok(None) };
                    let radial = theorem_bounds_check(&model, &ds, mm, radial_scale(&ds, k, beta)?, beta)?;
                    let gk = theorem_bounds_check(&model, &ds, mm, gk_proxy(&ds, k, beta)?, beta)?;
                    Ok(Some((mm.clone(), radial, gk)))
                })
                .collect::<Result<_>>()?;
            for (ci, rec) in recs.iter().enumerate() {
                let (r, n) = cells[ci];
                match rec {
                    None => {
                        res.rejections.push(Rejection {
                            config: key("width", &[("beta", beta), ("nu", nu), ("n", n as f64)]),
                            replicate: r,
                            reason: "no certified micromode".into(),
                        });
                        res.rows.push(vec![
                            beta.into(),
                            nu.into(),
                            n.into(),
                            r.into(),
                            false.into(),
                            f64::NAN.into(),
                            f64::NAN.into(),
                            f64::NAN.into(),
                            "".into(),
                            "".into(),
                            f64::NAN.into(),
                            f64::NAN.into(),
                        ]);
                    }
                    Some((mm, radial, gk)) => {
                        let (lo, hi) = match radial {
                            BoundsOutcome::Checked(b) => (b.width_lo_margin, b.width_hi_margin),
                            BoundsOutcome::EventAViolated => (f64::NAN, f64::NAN),
                        };
                        res.rows.push(vec![
                            beta.into(),
                            nu.into(),
                            n.into(),
                            r.into(),
                            true.into(),
                            mm.width.unwrap_or(f64::NAN).into(),
                            mm.x_plus[0].into(),
                            mm.anchor[0].into(),
                            opt_cell(bounds_pass(*radial)),
                            opt_cell(bounds_pass(*gk)),
                            lo.into(),
                            hi.into(),
                        ]);
                    }
                }
            }
            let certified_at = |r: usize, n: usize| -> Option<f64> {
                let ci = cells.iter().position(|&c| c == (r, n))?;
                recs[ci].as_ref().and_then(|(m, _, _)| m.width).filter(|w| w.is_finite())
            };
            let complete: Vec<usize> = (0..cfg.replicates).filter(|&r| cfg.n.iter().all(|&n| certified_at(r, n).is_some())).collect();
            let (mut xs, mut ys) = (Vec::new(), Vec::new());
            let (mut px, mut py) = (Vec::new(), Vec::new());
            let tag = [("beta", beta), ("nu", nu)];
            let (mut rad_ok, mut rad_tot, mut gk_ok, mut gk_tot) = (0usize, 0usize, 0usize, 0usize);
            for &n in &cfg.n {
                let lw: Vec<f64> = complete.iter().filter_map(|&r| certified_at(r, n)).map(f64::ln).collect();
                let (mut ro, mut rt, mut go, mut gt) = (0, 0, 0, 0);
                for (ci, rec) in recs.iter().enumerate() {
                    if cells[ci].1 != n {
                        continue;
                    }
                    if let Some((m, radial, gk)) = rec {
                        if m.width.is_some_and(f64::is_finite) {
                            px.push((n as f64).ln());
                            py.push(m.width.unwrap().ln());
                        }
                        if let Some(b) = bounds_pass(*radial) {
                            rt += 1;
                            ro += b as usize;
                        }
                        if let Some(b) = bounds_pass(*gk) {
                            gt += 1;
                            go += b as usize;
                        }
                    }
                }
                let certified = recs.iter().enumerate().filter(|(ci, rec)| cells[*ci].1 == n && rec.is_some()).count();
                res.summary.push(vec![
                    beta.into(),
                    nu.into(),
                    n.into(),
                    certified.into(),
                    (if lw.is_empty() { f64::NAN } else { mean(&lw) }).into(),
                    rate(ro, rt).into(),
                    rate(go, gt).into(),
                ]);
                if !lw.is_empty() {
                    xs.push((n as f64).ln());
                    ys.push(mean(&lw));
                }
                rad_ok += ro;
                rad_tot += rt;
                gk_ok += go;
                gk_tot += gt;
            }
            if let Some(f) = linear_fit(&xs, &ys) {
                res.fits.insert(key("width_slope", &tag), f);
            }
            if let Some(f) = linear_fit(&px, &py) {
                res.fits.insert(key("width_slope_pooled", &tag), f);
            }
            res.metrics.insert(key("complete_replicates", &tag), complete.len() as f64);
            res.metrics.insert(key("bounds_radial_rate", &tag), rate(rad_ok, rad_tot));
            res.metrics.insert(key("bounds_gk_rate", &tag), rate(gk_ok, gk_tot));
            res.metrics.insert(key("theory_slope", &tag), 1.0 / beta - 1.0);
        }
    }
    Ok(res)
}

pub fn score_approx_study(cfg: &StudyConfig) -> Result<StudyResult> {
    cfg.validate()?;
    let rows = Table::new(&["beta", "nu", "n", "replicate", "a_n", "deviation_sup", "threshold", "exceeds"]);
    let summary = Table::new(&["beta", "nu", "n", "replicates", "a_n_count", "exceedance_given_a_n"]);
    let mut res = StudyResult::new(StudyKind::ScoreApprox, rows, summary);
    let k = cfg.k[0];
    for &beta in &cfg.beta {
        for &nu in &cfg.nu {
            let model = Model::new(nu, 1)?;
            let mut freqs = Vec::new();
            for &n in &cfg.n {
                let threshold = (n as f64).powf(1.0 - 1.0 / beta - cfg.delta);
                let recs: Vec<(bool, f64)> = (0..cfg.replicates)
                    .into_par_iter()
                    .map(|r| -> Result<_> {
                        let ds = sample_dataset_coupled(&DataConfig::new(beta, 1, n, dataset_seed(cfg.seed, r))?, cfg.coupled_top)?;
                        let a = ds.order_index(k)?;
                        let a_n = ds.norm_of(a) > 2.0 * n as f64 * nu.sqrt();
                        let sup = score_deviation_sup(&model, &ds, k, cfg.grid_resolution)?;
                        Ok((a_n, sup))
                    })
                    .collect::<Result<_>>()?;
                let (mut given, mut hits) = (0, 0);
                for (r, &(a_n, sup)) in recs.iter().enumerate() {
                    let exceeds = sup > threshold;
                    if a_n {
                        given += 1;
                        hits += exceeds as usize;
                    } else {
                        res.rejections.push(Rejection {
                            config: key("score", &[("beta", beta), ("nu", nu), ("n", n as f64)]),
                            replicate: r,
                            reason: "A_n fails".into(),
                        });
                    }
                    res.rows.push(vec![beta.into(), nu.into(), n.into(), r.into(), a_n.into(), sup.into(), threshold.into(), exceeds.into()]);
                }
                let f = rate(hits, given);
                res.summary.push(vec![beta.into(), nu.into(), n.into(), cfg.replicates.into(), given.into(), f.into()]);
                res.metrics.insert(key("exceedance", &[("beta", beta), ("nu", nu), ("n", n as f64)]), f);
                freqs.push(f);
            }
            let decreasing = freqs.windows(2).all(|w| w[1] < w[0]);
            res.metrics.insert(key("strictly_decreasing", &[("beta", beta), ("nu", nu)]), decreasing as u8 as f64);
        }
    }
    Ok(res)
}

pub fn evt_study(cfg: &StudyConfig) -> Result<StudyResult> {
    cfg.validate()?;
    let rows = Table::new(&["beta", "d", "k", "n", "replicate", "gk", "gk_wrong_exponent"]);
    let summary = Table::new(&["beta", "d", "k", "n", "replicates", "ks", "ks_wrong_exponent", "mean_gk"]);
    let mut res = StudyResult::new(StudyKind::Evt, rows, summary);
    let d = cfg.d;
    for &beta in &cfg.beta {
        let a_const = evt_constant_a(beta, d);
        for &n in &cfg.n {
            let kmax = *cfg.k.iter().max().unwrap();
            // one dataset per replicate serves every k
            let radii: Vec<Vec<f64>> = (0..cfg.replicates)
                .into_par_iter()
                .map(|r| -> Result<_> {
                    let ds = sample_dataset(&DataConfig::new(beta, d, n, dataset_seed(cfg.seed, r))?)?;
                    (0..=kmax).map(|k| Ok(ds.norm_of(ds.order_index(k)?))).collect()
                })
                .collect::<Result<_>>()?;
            for &k in &cfg.k {
                let nf = n as f64;
                let g: Vec<f64> = radii.iter().map(|rs| a_const * (rs[k] / nf.powf(1.0 / beta)).powf(-beta)).collect();
                let wrong: Vec<f64> = radii.iter().map(|rs| a_const * (rs[k] / nf.powf(0.5 / beta)).powf(-beta)).collect();
                for (r, (a, b)) in g.iter().zip(&wrong).enumerate() {
                    res.rows.push(vec![beta.into(), d.into(), k.into(), n.into(), r.into(), (*a).into(), (*b).into()]);
                }
                let shape = k as f64 + 1.0;
                let ks = ks_distance(&g, |x| gamma_cdf(shape, x));
                let ks_wrong = ks_distance(&wrong, |x| gamma_cdf(shape, x));
                res.summary.push(vec![
                    beta.into(),
                    d.into(),
                    k.into(),
                    n.into(),
                    cfg.replicates.into(),
                    ks.into(),
                    ks_wrong.into(),
                    mean(&g).into(),
                ]);
                let tag = [("beta", beta), ("d", d as f64), ("k", k as f64), ("n", nf)];
                res.metrics.insert(key("ks", &tag), ks);
                res.metrics.insert(key("ks_wrong_exponent", &tag), ks_wrong);
            }
        }
    }
    Ok(res)
}
