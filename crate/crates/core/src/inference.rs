//! Log-rank type comparison of excess mortality between groups.
//!
//! Each group `g` contributes weighted processes on the common mesh:
//! `Y_g = sum Y_i / c_i`, the excess counting increments
//! `dN_g = sum dN_i / a_i - h sum b_i Y_i / (a_i c_i)` and the variance
//! increments `dQ_g = sum dN_i / a_i^2`. With `R_g = Y_g / sum_l Y_l`,
//!
//! ```text
//! Z_g       = N_g(T) - int R_g dN_total
//! Gamma_gh  = sum_l int (d_lg - R_g)(d_lh - R_h) dQ_l
//! statistic = Z' Gamma^+ Z  ~  chi2(|G| - 1)
//! ```
//!
//! [`logrank_observable`] builds the processes from group-wise fits under a
//! hypothesized copula. [`logrank_oracle`] uses the true coefficients of a
//! simulated cohort.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::cohort::Cohort;
use crate::copula::CopulaSpec;
use crate::error::{Error, Result};
use crate::estimator::{fit_generalized, fit_pohar_perme, Mesh, NetSurvivalFit, SolverConfig};
use crate::lifetable::{hazard_path, RateTable};
use crate::simulation::LatentPatient;

/// Relative eigenvalue cut-off of the pseudo-inverse.
pub const PINV_REL_TOL: f64 = 1e-10;

/// Upper tail of the chi-square distribution.
pub fn chi2_sf(x: f64, df: u32) -> Result<f64> {
    if df == 0 {
        return Err(Error::domain("chi-square degrees of freedom must be positive"));
    }
    if !(x >= 0.0) {
        return Err(Error::domain(format!(
            "chi-square statistic must be non-negative, got {x}"
        )));
    }
    if x == 0.0 {
        return Ok(1.0);
    }
    if x.is_infinite() {
        return Ok(0.0);
    }
    Ok(statrs::function::gamma::gamma_ur(f64::from(df) / 2.0, x / 2.0))
}

/// Weighted processes of one group on a shared mesh. Index `k` holds the
/// increments of step `(t_{k-1}, t_k]`; index 0 is unused.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupProcess {
    pub label: String,
    /// Deaths up to each mesh point.
    pub events: Vec<usize>,
    pub y: Vec<f64>,
    pub dn: Vec<f64>,
    pub dq: Vec<f64>,
}

impl GroupProcess {
    /// Reads the processes of a group-wise fit, padding past truncation.
    pub fn from_fit(label: impl Into<String>, cohort: &Cohort, fit: &NetSurvivalFit, mesh: &Mesh) -> Self {
        let m = mesh.len();
        let mut y = vec![0.0; m];
        let mut dn = vec![0.0; m];
        let mut dq = vec![0.0; m];
        for k in 1..fit.len() {
            y[k] = fit.y_over_c[k];
            dn[k] = fit.excess_increment(k);
            dq[k] = fit.dn_over_a2[k];
        }
        Self {
            label: label.into(),
            events: event_counts(cohort, mesh),
            y,
            dn,
            dq,
        }
    }
}

fn event_counts(cohort: &Cohort, mesh: &Mesh) -> Vec<usize> {
    let mut jumps = vec![0usize; mesh.len()];
    for r in cohort.records().iter().filter(|r| r.status) {
        if r.time <= mesh.horizon() {
            jumps[mesh.index_at_or_before(r.time)] += 1;
        }
    }
    jumps
        .iter()
        .scan(0, |acc, &j| {
            *acc += j;
            Some(*acc)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogRankResult {
    pub groups: Vec<String>,
    /// Deaths observed in each group up to the horizon.
    pub events: Vec<usize>,
    pub z: Vec<f64>,
    /// Row-major `|G| x |G|`.
    pub gamma: Vec<Vec<f64>>,
    pub statistic: f64,
    pub df: u32,
    pub p_value: f64,
    pub horizon: f64,
}

/// Test statistic at `horizon` from per-group processes on `mesh`.
pub fn logrank_from_processes(groups: &[GroupProcess], mesh: &Mesh, horizon: f64) -> Result<LogRankResult> {
    let ng = groups.len();
    if ng < 2 {
        return Err(Error::input("a log-rank test needs at least two groups"));
    }
    if !(horizon > 0.0) || horizon > mesh.horizon() + 1e-12 {
        return Err(Error::domain(format!(
            "test horizon {horizon} must lie in (0, {}]",
            mesh.horizon()
        )));
    }
    let kmax = mesh.index_at_or_before(horizon);
    let events: Vec<usize> = groups.iter().map(|g| g.events[kmax]).collect();
    if let Some(g) = groups.iter().zip(&events).find(|(_, &e)| e == 0) {
        return Err(Error::input(format!(
            "group {:?} has no events before {horizon}",
            g.0.label
        )));
    }

    let mut z = vec![0.0; ng];
    let mut gamma = DMatrix::<f64>::zeros(ng, ng);
    let mut r = vec![0.0; ng];
    for k in 1..=kmax {
        let y_tot: f64 = groups.iter().map(|g| g.y[k]).sum();
        if !(y_tot > 0.0) {
            continue;
        }
        let dn_tot: f64 = groups.iter().map(|g| g.dn[k]).sum();
        let dq_tot: f64 = groups.iter().map(|g| g.dq[k]).sum();
        for (rg, g) in r.iter_mut().zip(groups) {
            *rg = g.y[k] / y_tot;
        }
        for g in 0..ng {
            z[g] += groups[g].dn[k] - r[g] * dn_tot;
            for h in 0..ng {
                let delta = if g == h { groups[g].dq[k] } else { 0.0 };
                gamma[(g, h)] += delta - r[h] * groups[g].dq[k] - r[g] * groups[h].dq[k] + r[g] * r[h] * dq_tot;
            }
        }
    }
    let gamma = 0.5 * (&gamma + gamma.transpose());
    let statistic = pinv_quadratic_form(&gamma, &DVector::from_column_slice(&z), ng - 1)?;
    let df = (ng - 1) as u32;
    Ok(LogRankResult {
        groups: groups.iter().map(|g| g.label.clone()).collect(),
        events,
        z,
        gamma: gamma.row_iter().map(|row| row.iter().copied().collect()).collect(),
        statistic,
        df,
        p_value: chi2_sf(statistic, df)?,
        horizon,
    })
}

/// `z' G^+ z` keeping eigenvalues above `PINV_REL_TOL` times the largest.
fn pinv_quadratic_form(gamma: &DMatrix<f64>, z: &DVector<f64>, expected_rank: usize) -> Result<f64> {
    let eig = gamma.clone().symmetric_eigen();
    let max = eig.eigenvalues.iter().fold(0.0_f64, |m, &l| m.max(l.abs()));
    if !(max > 0.0) || !max.is_finite() {
        return Err(Error::Numeric("covariance matrix is zero".into()));
    }
    let kept: Vec<usize> = (0..eig.eigenvalues.len())
        .filter(|&j| eig.eigenvalues[j] > PINV_REL_TOL * max)
        .collect();
    if kept.len() != expected_rank {
        return Err(Error::Numeric(format!(
            "covariance matrix has rank {}, expected {expected_rank}",
            kept.len()
        )));
    }
    Ok(kept
        .into_iter()
        .map(|j| {
            let proj = eig.eigenvectors.column(j).dot(z);
            proj * proj / eig.eigenvalues[j]
        })
        .sum::<f64>()
        .max(0.0))
}

fn fit_groups(cohort: &Cohort, table: &RateTable, copula: &CopulaSpec, mesh: &Mesh) -> Result<Vec<GroupProcess>> {
    let groups: Vec<(String, Cohort)> = cohort.by_group()?.into_iter().collect();
    if groups.len() < 2 {
        return Err(Error::input("a log-rank test needs at least two groups"));
    }
    groups
        .par_iter()
        .map(|(label, sub)| {
            let fit = if copula.is_independence() {
                fit_pohar_perme(sub, table, mesh)?
            } else {
                fit_generalized(sub, table, copula, mesh, &SolverConfig::default())?
            };
            Ok(GroupProcess::from_fit(label.clone(), sub, &fit, mesh))
        })
        .collect()
}

/// The observable statistic from group-wise fits under `copula`.
pub fn logrank_observable(
    cohort: &Cohort,
    table: &RateTable,
    copula: &CopulaSpec,
    mesh: &Mesh,
    horizon: f64,
) -> Result<LogRankResult> {
    let procs = fit_groups(cohort, table, copula, mesh)?;
    logrank_from_processes(&procs, mesh, horizon)
}

/// [`logrank_observable`] at several horizons, fitting each group once.
pub fn logrank_observable_at(
    cohort: &Cohort,
    table: &RateTable,
    copula: &CopulaSpec,
    mesh: &Mesh,
    horizons: &[f64],
) -> Result<Vec<LogRankResult>> {
    let procs = fit_groups(cohort, table, copula, mesh)?;
    horizons
        .iter()
        .map(|&t| logrank_from_processes(&procs, mesh, t))
        .collect()
}

/// Group processes built from the true coefficients of a simulated cohort:
/// excess survival `exp(-t / mu_i)` and the generating copula.
pub fn oracle_processes(
    cohort: &Cohort,
    truth: &[LatentPatient],
    copula: &CopulaSpec,
    table: &RateTable,
    mesh: &Mesh,
) -> Result<Vec<GroupProcess>> {
    if truth.len() != cohort.len() {
        return Err(Error::input(format!(
            "latent truth covers {} patients, cohort has {}",
            truth.len(),
            cohort.len()
        )));
    }
    let floor = SolverConfig::default().floor;
    let pts = mesh.points();
    let mut labels: Vec<String> = Vec::new();
    let mut procs: Vec<GroupProcess> = Vec::new();
    for (rec, lat) in cohort.records().iter().zip(truth) {
        let label = rec
            .group
            .clone()
            .ok_or_else(|| Error::input("record without group label"))?;
        let g = match labels.iter().position(|l| *l == label) {
            Some(g) => g,
            None => {
                labels.push(label.clone());
                procs.push(GroupProcess {
                    label,
                    events: Vec::new(),
                    y: vec![0.0; pts.len()],
                    dn: vec![0.0; pts.len()],
                    dq: vec![0.0; pts.len()],
                });
                procs.len() - 1
            }
        };
        let path = hazard_path(table, &rec.demo, mesh.horizon())?;
        let exit = if rec.time > mesh.horizon() + 1e-12 {
            usize::MAX
        } else {
            mesh.index_of(rec.time)
                .ok_or_else(|| Error::input(format!("observed time {} is not a mesh point", rec.time)))?
        };
        let p = &mut procs[g];
        let mut seg = 0;
        for k in 1..pts.len().min(exit.saturating_add(1)) {
            let t = pts[k];
            let h = t - pts[k - 1];
            seg = path.advance(seg, t);
            let v = (-path.cumulative_in(seg, t)).exp();
            let u = (-t / lat.excess_mean).exp();
            let (mu, mv) = (copula.prepare(u), copula.prepare(v));
            let (c, c1, c2) = copula.eval_prepared(&mu, &mv);
            let a = c1.max(floor);
            let cc = (c / u).max(floor);
            let b = c2 * path.rate_in(seg) * v / u;
            p.y[k] += 1.0 / cc;
            p.dn[k] -= h * b / (a * cc);
            if rec.status && k == exit {
                p.dn[k] += 1.0 / a;
                p.dq[k] += 1.0 / (a * a);
            }
        }
    }
    let groups = cohort.by_group()?;
    let mut out = Vec::with_capacity(procs.len());
    for mut p in procs {
        p.events = event_counts(&groups[&p.label], mesh);
        out.push(p);
    }
    out.sort_by(|a, b| a.label.cmp(&b.label));
    Ok(out)
}

/// The oracle statistic, available only when the latent truth is known.
pub fn logrank_oracle(
    cohort: &Cohort,
    truth: &[LatentPatient],
    copula: &CopulaSpec,
    table: &RateTable,
    mesh: &Mesh,
    horizon: f64,
) -> Result<LogRankResult> {
    let procs = oracle_processes(cohort, truth, copula, table, mesh)?;
    logrank_from_processes(&procs, mesh, horizon)
}
