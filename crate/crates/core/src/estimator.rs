//! Net survival estimation on a dense time mesh.
//!
//! The excess cumulative hazard solves
//!
//! ```text
//! dL(t) = [ sum_i dN_i(t) / a_i(t) - sum_i b_i(t) Y_i(t) / (a_i(t) c_i(t)) dt ] / sum_i Y_i(t) / c_i(t)
//! ```
//!
//! where, writing `u = S_E(t) = exp(-L(t))` and `v_i = S_P,i(t)`,
//!
//! ```text
//! a_i = C1(u, v_i),   b_i = C2(u, v_i) lambda_P,i(t) v_i / u,   c_i = C(u, v_i) / u.
//! ```
//!
//! Under independence `a_i = c_i = v_i` and `b_i = lambda_P,i v_i` do not
//! involve `L`, and [`fit_pohar_perme`] integrates the equation directly.
//! For any other copula the coefficients depend on the unknown `L(t)`, and
//! [`fit_generalized`] takes implicit Euler steps, solving a scalar
//! fixed-point problem at every mesh point.

use rand::Rng;
use rayon::prelude::*;

use crate::cohort::Cohort;
use crate::copula::{CopulaSpec, Family, Margin};
use crate::error::{Error, Result};
use crate::lifetable::{hazard_path, HazardPath, RateTable, DAYS_PER_YEAR};
use crate::rng;

/// Mesh points closer than this (in years) are merged.
pub const MESH_MERGE_TOL: f64 = 1e-12;

/// A fitted `|L(t)|` beyond this is reported as a solver failure.
pub const DIVERGENCE_LIMIT: f64 = 1e3;

/// Time grid for the step-wise integration.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    points: Vec<f64>,
}

impl Mesh {
    /// Regular grid of `step_days` from 0 to `horizon` (inclusive) merged
    /// with every distinct observed time up to the horizon.
    pub fn build(cohort: &Cohort, horizon: f64, step_days: f64) -> Result<Self> {
        if cohort.is_empty() {
            return Err(Error::input("cannot build a mesh for an empty cohort"));
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::domain(format!("horizon must be positive, got {horizon}")));
        }
        if !(step_days > 0.0 && step_days.is_finite()) {
            return Err(Error::domain(format!("step must be positive, got {step_days} days")));
        }
        let step = step_days / DAYS_PER_YEAR;
        let n_steps = (horizon / step).floor() as usize;
        let mut points: Vec<f64> = (0..=n_steps).map(|k| k as f64 * step).collect();
        points.push(horizon);
        points.extend(cohort.records().iter().map(|r| r.time).filter(|&t| t <= horizon));
        points.sort_by(f64::total_cmp);
        points.retain(|&t| t <= horizon);
        points.dedup_by(|b, a| *b - *a <= MESH_MERGE_TOL);
        Self::from_points(points)
    }

    /// Validates an explicit list of points.
    pub fn from_points(points: Vec<f64>) -> Result<Self> {
        if points.len() < 2 || points[0] != 0.0 {
            return Err(Error::input("a mesh needs 0 and at least one positive point"));
        }
        if points.windows(2).any(|w| !(w[1] > w[0]) || !w[1].is_finite()) {
            return Err(Error::input("mesh points must be finite and strictly increasing"));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Number of integration steps (`len() - 1`).
    pub fn steps(&self) -> usize {
        self.points.len() - 1
    }

    pub fn horizon(&self) -> f64 {
        *self.points.last().expect("non-empty mesh")
    }

    /// Index of the mesh point equal to `t` within the merge tolerance.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let j = self.points.partition_point(|&p| p < t - MESH_MERGE_TOL);
        (j < self.points.len() && (self.points[j] - t).abs() <= MESH_MERGE_TOL).then_some(j)
    }

    /// Index of the last mesh point not after `t`.
    pub fn index_at_or_before(&self, t: f64) -> usize {
        self.points
            .partition_point(|&p| p <= t + MESH_MERGE_TOL)
            .saturating_sub(1)
    }

    /// A copy cut at `t` (kept points are `<= t`), with `t` appended if missing.
    pub fn truncated(&self, t: f64) -> Result<Self> {
        let mut points: Vec<f64> = self
            .points
            .iter()
            .copied()
            .filter(|&p| p <= t + MESH_MERGE_TOL)
            .collect();
        if let Some(&last) = points.last() {
            if t - last > MESH_MERGE_TOL && t <= self.horizon() {
                points.push(t);
            }
        }
        Self::from_points(points)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Scheme {
    /// Coefficients at the unknown end-of-step value.
    #[default]
    Implicit,
    /// Coefficients at the start-of-step value; diagnostics only.
    Explicit,
}

/// Settings of the per-step nonlinear solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    /// Lower bound applied to `a_i` and `c_i`.
    pub floor: f64,
    /// Absolute tolerance on the cumulative hazard.
    pub tol: f64,
    pub max_iter: usize,
    /// Relaxation factor of the fixed-point iteration, in `(0, 1]`.
    pub damping: f64,
    pub scheme: Scheme,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            floor: 1e-10,
            tol: 1e-12,
            max_iter: 100,
            damping: 1.0,
            scheme: Scheme::Implicit,
        }
    }
}

/// Counters collected while fitting.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FitDiagnostics {
    /// Patient-steps where `a_i` or `c_i` hit the floor.
    pub floor_hits: usize,
    /// Patient-steps outside the copula support.
    pub degenerate_support: usize,
    pub solver_evaluations: usize,
    pub max_iterations: usize,
    pub bisection_fallbacks: usize,
    /// Steps ending with `S_E > 1`.
    pub steps_above_one: usize,
    /// Set when the risk set emptied before the mesh horizon.
    pub truncated_at: Option<f64>,
    /// Hazard-path segments read from clamped rate-table cells.
    pub clamped_segments: usize,
}

/// Estimated excess cumulative hazard, survival and variance on a mesh.
///
/// Index 0 is `t = 0`. The coefficient sums at index `k` are those used on
/// the step `(t_{k-1}, t_k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct NetSurvivalFit {
    pub times: Vec<f64>,
    pub cum_hazard: Vec<f64>,
    pub survival: Vec<f64>,
    pub variance: Vec<f64>,
    /// `sum_i dN_i / a_i`
    pub dn_over_a: Vec<f64>,
    /// `sum_i Y_i / c_i`
    pub y_over_c: Vec<f64>,
    /// `sum_i b_i Y_i / (a_i c_i)`
    pub by_over_ac: Vec<f64>,
    /// `sum_i dN_i / a_i^2`
    pub dn_over_a2: Vec<f64>,
    pub diagnostics: FitDiagnostics,
}

impl NetSurvivalFit {
    fn with_capacity(n: usize) -> Self {
        let mut fit = Self {
            times: Vec::with_capacity(n),
            cum_hazard: Vec::with_capacity(n),
            survival: Vec::with_capacity(n),
            variance: Vec::with_capacity(n),
            dn_over_a: Vec::with_capacity(n),
            y_over_c: Vec::with_capacity(n),
            by_over_ac: Vec::with_capacity(n),
            dn_over_a2: Vec::with_capacity(n),
            diagnostics: FitDiagnostics::default(),
        };
        fit.push(0.0, 0.0, 0.0, StepSums::default());
        fit
    }

    fn push(&mut self, t: f64, cum: f64, var: f64, s: StepSums) {
        self.times.push(t);
        self.cum_hazard.push(cum);
        self.survival.push((-cum).exp());
        self.variance.push(var);
        self.dn_over_a.push(s.dn_over_a);
        self.y_over_c.push(s.y_over_c);
        self.by_over_ac.push(s.by_over_ac);
        self.dn_over_a2.push(s.dn_over_a2);
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Index of the last fitted point not after `t`.
    pub fn index_at(&self, t: f64) -> usize {
        self.times
            .partition_point(|&p| p <= t + MESH_MERGE_TOL)
            .saturating_sub(1)
    }

    pub fn cum_hazard_at(&self, t: f64) -> f64 {
        self.cum_hazard[self.index_at(t)]
    }

    pub fn survival_at(&self, t: f64) -> f64 {
        self.survival[self.index_at(t)]
    }

    pub fn std_err_at(&self, t: f64) -> f64 {
        self.variance[self.index_at(t)].sqrt()
    }

    /// Increment of the estimated excess counting process on step `k`:
    /// `sum dN/a - h sum bY/(ac)`.
    pub fn excess_increment(&self, k: usize) -> f64 {
        if k == 0 {
            return 0.0;
        }
        let h = self.times[k] - self.times[k - 1];
        self.dn_over_a[k] - h * self.by_over_ac[k]
    }

    /// Pointwise `exp(-L +/- z sigma)` bounds.
    pub fn log_ci(&self, z: f64) -> (Vec<f64>, Vec<f64>) {
        self.cum_hazard
            .iter()
            .zip(&self.variance)
            .map(|(l, v)| {
                let s = v.sqrt();
                ((-l - z * s).exp(), (-l + z * s).exp())
            })
            .unzip()
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct StepSums {
    dn_over_a: f64,
    y_over_c: f64,
    by_over_ac: f64,
    dn_over_a2: f64,
    floor_hits: usize,
    degenerate: usize,
}

struct Subject {
    /// Mesh index of the exit time; `usize::MAX` when it lies past the horizon.
    exit: usize,
    event: bool,
    path: HazardPath,
}

#[derive(Debug, Clone, Copy)]
struct AtRisk {
    sp: f64,
    rate: f64,
    event: bool,
}

/// Patients sorted by exit index, with their hazard paths over the mesh.
struct RiskSet {
    subjects: Vec<Subject>,
    clamped_segments: usize,
}

impl RiskSet {
    fn new(cohort: &Cohort, table: &RateTable, mesh: &Mesh) -> Result<Self> {
        if cohort.is_empty() {
            return Err(Error::input("empty cohort"));
        }
        let horizon = mesh.horizon();
        let mut subjects = Vec::with_capacity(cohort.len());
        let mut clamped_segments = 0;
        for r in cohort.records() {
            let exit = if r.time > horizon + MESH_MERGE_TOL {
                usize::MAX
            } else {
                mesh.index_of(r.time)
                    .ok_or_else(|| Error::input(format!("observed time {} is not a mesh point", r.time)))?
            };
            let path = hazard_path(table, &r.demo, horizon)?;
            clamped_segments += path.clamped_segments();
            subjects.push(Subject {
                exit,
                event: r.status && exit != usize::MAX,
                path,
            });
        }
        subjects.sort_by_key(|s| s.exit);
        Ok(Self {
            subjects,
            clamped_segments,
        })
    }
}

/// Walks the mesh, yielding the at-risk set with `S_P` and `lambda_P` at
/// each step end.
struct Scanner<'a> {
    set: &'a RiskSet,
    start: usize,
    cursors: Vec<usize>,
    buf: Vec<AtRisk>,
}

impl<'a> Scanner<'a> {
    fn new(set: &'a RiskSet) -> Self {
        Self {
            set,
            start: 0,
            cursors: vec![0; set.subjects.len()],
            buf: Vec::with_capacity(set.subjects.len()),
        }
    }

    /// At-risk patients at mesh index `k` (those with exit index `>= k`);
    /// events first.
    fn at(&mut self, k: usize, t: f64) -> &[AtRisk] {
        let subjects = &self.set.subjects;
        while self.start < subjects.len() && subjects[self.start].exit < k {
            self.start += 1;
        }
        self.buf.clear();
        for (s, cur) in subjects[self.start..].iter().zip(&mut self.cursors[self.start..]) {
            *cur = s.path.advance(*cur, t);
            let cum = s.path.cumulative_in(*cur, t);
            self.buf.push(AtRisk {
                sp: (-cum).exp(),
                rate: s.path.rate_in(*cur),
                event: s.event && s.exit == k,
            });
        }
        &self.buf
    }
}

/// The Pohar Perme estimator: the independence case, where every weight
/// is `1 / S_P,i` and no equation needs solving.
///
/// Its variance is `sum_k sum_i dN_i / S_P,i^2 / (sum_i Y_i / S_P,i)^2`.
pub fn fit_pohar_perme(cohort: &Cohort, table: &RateTable, mesh: &Mesh) -> Result<NetSurvivalFit> {
    let set = RiskSet::new(cohort, table, mesh)?;
    let mut scanner = Scanner::new(&set);
    let pts = mesh.points();
    let mut fit = NetSurvivalFit::with_capacity(pts.len());
    fit.diagnostics.clamped_segments = set.clamped_segments;
    let (mut cum, mut var) = (0.0, 0.0);
    for k in 1..pts.len() {
        let (t, h) = (pts[k], pts[k] - pts[k - 1]);
        let at_risk = scanner.at(k, t);
        if at_risk.is_empty() {
            fit.diagnostics.truncated_at = Some(pts[k - 1]);
            break;
        }
        let mut s = StepSums::default();
        for p in at_risk {
            let w = 1.0 / p.sp;
            s.y_over_c += w;
            s.by_over_ac += p.rate * w;
            if p.event {
                s.dn_over_a += w;
                s.dn_over_a2 += w * w;
            }
        }
        cum += (s.dn_over_a - h * s.by_over_ac) / s.y_over_c;
        var += s.dn_over_a2 / (s.y_over_c * s.y_over_c);
        if cum < 0.0 {
            fit.diagnostics.steps_above_one += 1;
        }
        fit.push(t, cum, var, s);
    }
    Ok(fit)
}

/// Per-step evaluation of the right-hand side at a trial value of `L`.
struct StepProblem<'a> {
    copula: &'a CopulaSpec,
    at_risk: &'a [AtRisk],
    margins: &'a [Margin],
    floor: f64,
    h: f64,
    prev: f64,
}

impl StepProblem<'_> {
    /// Coefficient sums at `cum`, and the updated value they imply.
    fn eval(&self, cum: f64) -> (f64, StepSums) {
        // S_E above 1 (negative L) is evaluated on the boundary u = 1.
        let u = (-cum).exp().min(1.0);
        let mu = self.copula.prepare(u);
        let floor = self.floor;
        let mut s = StepSums::default();
        for (p, m) in self.at_risk.iter().zip(self.margins) {
            let (c, c1, c2) = self.copula.eval_prepared(&mu, m);
            if c == 0.0 {
                s.degenerate += 1;
            }
            let mut a = c1;
            let mut cc = c / u;
            if a < floor || cc < floor {
                s.floor_hits += 1;
                a = a.max(floor);
                cc = cc.max(floor);
            }
            let b = c2 * p.rate * p.sp / u;
            s.y_over_c += 1.0 / cc;
            s.by_over_ac += b / (a * cc);
            if p.event {
                s.dn_over_a += 1.0 / a;
                s.dn_over_a2 += 1.0 / (a * a);
            }
        }
        let next = self.prev + (s.dn_over_a - self.h * s.by_over_ac) / s.y_over_c;
        (next, s)
    }
}

/// Net survival under a hypothesized survival copula between excess and
/// population mortality.
///
/// Each step solves `L = g(L)` by damped fixed-point iteration started from
/// a drift extrapolation, falling back to bisection on
/// `[L_prev - 10h, L_prev + 1 + 10h]` (widened if needed). The variance is
/// the plug-in `sum dN/a^2 / (sum Y/c)^2` at the converged coefficients.
pub fn fit_generalized(
    cohort: &Cohort,
    table: &RateTable,
    copula: &CopulaSpec,
    mesh: &Mesh,
    solver: &SolverConfig,
) -> Result<NetSurvivalFit> {
    if !(solver.damping > 0.0 && solver.damping <= 1.0) {
        return Err(Error::domain(format!(
            "damping must lie in (0, 1], got {}",
            solver.damping
        )));
    }
    if !(solver.floor > 0.0) || !(solver.tol > 0.0) || solver.max_iter == 0 {
        return Err(Error::domain(
            "solver floor, tolerance and iteration cap must be positive",
        ));
    }
    if copula.family() == Family::Gumbel {
        return Err(Error::domain(
            "the gumbel copula has C1(1, v) = 0, so the estimating equation has no solution while S_E is near 1",
        ));
    }
    let set = RiskSet::new(cohort, table, mesh)?;
    let mut scanner = Scanner::new(&set);
    let pts = mesh.points();
    let mut fit = NetSurvivalFit::with_capacity(pts.len());
    fit.diagnostics.clamped_segments = set.clamped_segments;
    let mut margins: Vec<Margin> = Vec::with_capacity(set.subjects.len());
    let (mut cum, mut var) = (0.0_f64, 0.0_f64);
    let mut drift_rate = 0.0_f64;

    for k in 1..pts.len() {
        let (t, h) = (pts[k], pts[k] - pts[k - 1]);
        let at_risk = scanner.at(k, t);
        if at_risk.is_empty() {
            fit.diagnostics.truncated_at = Some(pts[k - 1]);
            break;
        }
        margins.clear();
        margins.extend(at_risk.iter().map(|p| copula.prepare(p.sp)));
        let problem = StepProblem {
            copula,
            at_risk,
            margins: &margins,
            floor: solver.floor,
            h,
            prev: cum,
        };
        let has_event = at_risk.first().is_some_and(|p| p.event);

        let (next, sums) = match solver.scheme {
            Scheme::Explicit => {
                fit.diagnostics.solver_evaluations += 1;
                problem.eval(cum)
            }
            Scheme::Implicit => solve_step(&problem, cum + drift_rate * h, solver, t, &mut fit.diagnostics)?,
        };
        if !has_event && h > 0.0 {
            drift_rate = (next - cum) / h;
        }
        if !(next.abs() <= DIVERGENCE_LIMIT) {
            return Err(Error::Solver {
                time: t,
                residual: next.abs(),
                msg: "cumulative hazard diverged".into(),
            });
        }
        cum = next;
        var += sums.dn_over_a2 / (sums.y_over_c * sums.y_over_c);
        fit.diagnostics.floor_hits += sums.floor_hits;
        fit.diagnostics.degenerate_support += sums.degenerate;
        if cum < 0.0 {
            fit.diagnostics.steps_above_one += 1;
        }
        fit.push(t, cum, var, sums);
    }
    Ok(fit)
}

fn solve_step(
    problem: &StepProblem<'_>,
    guess: f64,
    cfg: &SolverConfig,
    t: f64,
    diag: &mut FitDiagnostics,
) -> Result<(f64, StepSums)> {
    let mut x = guess;
    for iter in 1..=cfg.max_iter {
        let (gx, sums) = problem.eval(x);
        diag.solver_evaluations += 1;
        if !gx.is_finite() {
            break;
        }
        if (gx - x).abs() <= cfg.tol {
            diag.max_iterations = diag.max_iterations.max(iter);
            return Ok((gx, sums));
        }
        x = (1.0 - cfg.damping) * x + cfg.damping * gx;
    }
    diag.bisection_fallbacks += 1;
    bisect_step(problem, cfg, t, diag)
}

fn bisect_step(
    problem: &StepProblem<'_>,
    cfg: &SolverConfig,
    t: f64,
    diag: &mut FitDiagnostics,
) -> Result<(f64, StepSums)> {
    let residual = |x: f64, diag: &mut FitDiagnostics| {
        diag.solver_evaluations += 1;
        let (gx, s) = problem.eval(x);
        (x - gx, s)
    };
    let mut lo = problem.prev - 10.0 * problem.h;
    let mut hi = problem.prev + 1.0 + 10.0 * problem.h;
    let (mut flo, _) = residual(lo, diag);
    let (mut fhi, _) = residual(hi, diag);
    let mut widen = 0;
    while flo.signum() == fhi.signum() && widen < 12 {
        let width = hi - lo;
        lo -= width;
        hi += width;
        flo = residual(lo, diag).0;
        fhi = residual(hi, diag).0;
        widen += 1;
    }
    if !(flo.is_finite() && fhi.is_finite()) || flo.signum() == fhi.signum() {
        return Err(Error::Solver {
            time: t,
            residual: flo.abs().min(fhi.abs()),
            msg: "no sign change in the fallback bracket".into(),
        });
    }
    while hi - lo > cfg.tol {
        let mid = 0.5 * (lo + hi);
        let (fm, _) = residual(mid, diag);
        if fm == 0.0 {
            lo = mid;
            hi = mid;
            break;
        }
        if fm.signum() == flo.signum() {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    let x = 0.5 * (lo + hi);
    let (gx, sums) = problem.eval(x);
    diag.solver_evaluations += 1;
    if !gx.is_finite() || (gx - x).abs() > 1e3 * cfg.tol.max(f64::EPSILON * x.abs()) {
        return Err(Error::Solver {
            time: t,
            residual: (gx - x).abs(),
            msg: "bisection did not reach a fixed point".into(),
        });
    }
    Ok((x, sums))
}

/// Pointwise bootstrap standard error of the cumulative excess hazard.
#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapSe {
    pub times: Vec<f64>,
    pub std_err: Vec<f64>,
    pub replicates: usize,
    pub failures: usize,
}

/// Resamples patients with replacement `reps` times, refits each resample
/// on `mesh`, and returns the pointwise standard deviation (divisor `N`) of
/// the cumulative excess hazard.
///
/// Fits cut short by an empty risk set carry their last value forward.
/// Failed fits are skipped; more than 10% failures is an error.
pub fn bootstrap_se(
    cohort: &Cohort,
    table: &RateTable,
    copula: &CopulaSpec,
    mesh: &Mesh,
    reps: usize,
    seed: u64,
) -> Result<BootstrapSe> {
    let n = cohort.len();
    bootstrap_se_with(cohort, table, copula, mesh, reps, |rep| {
        let mut rng = rng::substream(seed, rep as u64, 0);
        (0..n).map(|_| rng.gen_range(0..n)).collect()
    })
}

/// [`bootstrap_se`] with a caller-provided resampling scheme: `resample(rep)`
/// returns the record indices of replicate `rep`.
pub fn bootstrap_se_with<F>(
    cohort: &Cohort,
    table: &RateTable,
    copula: &CopulaSpec,
    mesh: &Mesh,
    reps: usize,
    resample: F,
) -> Result<BootstrapSe>
where
    F: Fn(usize) -> Vec<usize> + Sync,
{
    if reps < 2 {
        return Err(Error::domain("bootstrap needs at least 2 replicates"));
    }
    let solver = SolverConfig::default();
    let fits: Vec<Option<Vec<f64>>> = (0..reps)
        .into_par_iter()
        .map(|rep| {
            let sample = cohort.select(&resample(rep));
            let fit = if copula.is_independence() {
                fit_pohar_perme(&sample, table, mesh)
            } else {
                fit_generalized(&sample, table, copula, mesh, &solver)
            };
            fit.ok().map(|f| {
                let mut cum = f.cum_hazard;
                let last = *cum.last().expect("fit has t = 0");
                cum.resize(mesh.len(), last);
                cum
            })
        })
        .collect();
    let failures = fits.iter().filter(|f| f.is_none()).count();
    if failures * 10 > reps {
        return Err(Error::Numeric(format!("{failures} of {reps} bootstrap fits failed")));
    }
    let ok: Vec<&Vec<f64>> = fits.iter().flatten().collect();
    let m = ok.len() as f64;
    let std_err = (0..mesh.len())
        .map(|k| {
            let mean = ok.iter().map(|c| c[k]).sum::<f64>() / m;
            (ok.iter().map(|c| (c[k] - mean).powi(2)).sum::<f64>() / m).sqrt()
        })
        .collect();
    Ok(BootstrapSe {
        times: mesh.points().to_vec(),
        std_err,
        replicates: ok.len(),
        failures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::PatientRecord;
    use crate::lifetable::{Demographics, Sex};
    use approx::assert_relative_eq;

    fn rec(time: f64, status: bool) -> PatientRecord {
        PatientRecord::new(
            time,
            status,
            Demographics {
                sex: Sex::Male,
                age: 60.0,
                diagnosis_year: 2000.0,
            },
        )
        .unwrap()
    }

    fn zero_table() -> RateTable {
        RateTable::constant(0.0, 110, 1990..=2020).unwrap()
    }

    #[test]
    fn mesh_counts_grid_and_events() {
        let cohort = Cohort::new(vec![rec(1.2345, true), rec(3.3, false), rec(7.77, true)]).unwrap();
        let mesh = Mesh::build(&cohort, 15.0, 1.0).unwrap();
        // 5479 grid points (k = 0..=5478), the horizon, and three observed times
        assert_eq!(mesh.len(), 5479 + 1 + 3);
        assert_eq!(mesh.points()[0], 0.0);
        assert_eq!(mesh.horizon(), 15.0);
        assert!(mesh
            .points()
            .windows(2)
            .all(|w| w[1] - w[0] <= 1.0 / DAYS_PER_YEAR + 1e-12));
    }

    #[test]
    fn mesh_does_not_duplicate_grid_times() {
        let on_grid = 365.0 / DAYS_PER_YEAR;
        let cohort = Cohort::new(vec![rec(on_grid, true)]).unwrap();
        let mesh = Mesh::build(&cohort, 2.0, 1.0).unwrap();
        let grid_only = (2.0 * DAYS_PER_YEAR).floor() as usize + 1 + 1;
        assert_eq!(mesh.len(), grid_only);
        assert!(mesh.index_of(on_grid).is_some());
    }

    #[test]
    fn mesh_errors() {
        let cohort = Cohort::new(vec![rec(1.0, true)]).unwrap();
        assert!(Mesh::build(&cohort, 0.0, 1.0).is_err());
        assert!(Mesh::build(&cohort, 1.0, 0.0).is_err());
        assert!(Mesh::build(&Cohort::default(), 1.0, 1.0).is_err());
    }

    #[test]
    fn single_death_without_population_hazard() {
        let cohort = Cohort::new(vec![rec(1.0, true)]).unwrap();
        let mesh = Mesh::build(&cohort, 1.0, 1.0).unwrap();
        let fit = fit_pohar_perme(&cohort, &zero_table(), &mesh).unwrap();
        assert_eq!(*fit.cum_hazard.last().unwrap(), 1.0);
        assert_eq!(*fit.variance.last().unwrap(), 1.0);
    }

    #[test]
    fn single_death_with_constant_population_hazard() {
        let table = RateTable::constant(0.2, 110, 1990..=2020).unwrap();
        let cohort = Cohort::new(vec![rec(1.0, true)]).unwrap();
        let mesh = Mesh::build(&cohort, 1.0, 1.0).unwrap();
        let pp = fit_pohar_perme(&cohort, &table, &mesh).unwrap();
        assert_relative_eq!(*pp.cum_hazard.last().unwrap(), 0.8, epsilon = 1e-12);
        let gen = fit_generalized(
            &cohort,
            &table,
            &CopulaSpec::independence(),
            &mesh,
            &SolverConfig::default(),
        )
        .unwrap();
        assert_relative_eq!(*gen.cum_hazard.last().unwrap(), 0.8, epsilon = 1e-12);
    }

    #[test]
    fn empty_risk_set_truncates() {
        let cohort = Cohort::new(vec![rec(0.5, true), rec(1.0, false)]).unwrap();
        let mesh = Mesh::build(&cohort, 3.0, 1.0).unwrap();
        let fit = fit_pohar_perme(&cohort, &zero_table(), &mesh).unwrap();
        assert_eq!(fit.diagnostics.truncated_at, Some(1.0));
        assert_eq!(*fit.times.last().unwrap(), 1.0);
        let gen = fit_generalized(
            &cohort,
            &zero_table(),
            &"clayton(tau=0.3)".parse().unwrap(),
            &mesh,
            &SolverConfig::default(),
        )
        .unwrap();
        assert_eq!(gen.diagnostics.truncated_at, Some(1.0));
    }

    #[test]
    fn tied_deaths_jump_together() {
        let cohort = Cohort::new(vec![rec(1.0, true), rec(1.0, true), rec(2.0, false), rec(2.0, true)]).unwrap();
        let mesh = Mesh::build(&cohort, 2.0, 7.0).unwrap();
        let fit = fit_pohar_perme(&cohort, &zero_table(), &mesh).unwrap();
        let k = mesh.index_of(1.0).unwrap();
        assert_relative_eq!(fit.cum_hazard[k] - fit.cum_hazard[k - 1], 0.5);
        assert_relative_eq!(*fit.cum_hazard.last().unwrap(), 0.5 + 0.5);
    }

    #[test]
    fn explicit_scheme_runs() {
        let table = RateTable::constant(0.05, 110, 1990..=2020).unwrap();
        let cohort = Cohort::new((1..40).map(|i| rec(i as f64 * 0.2, i % 3 != 0)).collect()).unwrap();
        let mesh = Mesh::build(&cohort, 8.0, 1.0).unwrap();
        let cop: CopulaSpec = "frank(tau=0.3)".parse().unwrap();
        let imp = fit_generalized(&cohort, &table, &cop, &mesh, &SolverConfig::default()).unwrap();
        let exp = fit_generalized(
            &cohort,
            &table,
            &cop,
            &mesh,
            &SolverConfig {
                scheme: Scheme::Explicit,
                ..SolverConfig::default()
            },
        )
        .unwrap();
        let gap = imp
            .cum_hazard
            .iter()
            .zip(&exp.cum_hazard)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(gap > 0.0 && gap < 0.05, "gap {gap}");
    }

    #[test]
    fn rejects_bad_solver_config() {
        let cohort = Cohort::new(vec![rec(1.0, true)]).unwrap();
        let mesh = Mesh::build(&cohort, 1.0, 1.0).unwrap();
        let cfg = SolverConfig {
            damping: 0.0,
            ..SolverConfig::default()
        };
        assert!(fit_generalized(&cohort, &zero_table(), &CopulaSpec::independence(), &mesh, &cfg).is_err());
    }

    #[test]
    fn bootstrap_identical_resamples_have_zero_spread() {
        let table = RateTable::constant(0.02, 110, 1990..=2020).unwrap();
        let cohort = Cohort::new((1..30).map(|i| rec(i as f64 * 0.3, i % 2 == 0)).collect()).unwrap();
        let mesh = Mesh::build(&cohort, 9.0, 1.0).unwrap();
        let n = cohort.len();
        let se = bootstrap_se_with(&cohort, &table, &CopulaSpec::independence(), &mesh, 2, |_| {
            (0..n).collect()
        })
        .unwrap();
        assert!(se.std_err.iter().all(|&s| s == 0.0));
        assert!(bootstrap_se(&cohort, &table, &CopulaSpec::independence(), &mesh, 1, 3).is_err());
    }

    #[test]
    fn bootstrap_is_deterministic_per_seed() {
        let table = RateTable::constant(0.02, 110, 1990..=2020).unwrap();
        let cohort = Cohort::new((1..30).map(|i| rec(i as f64 * 0.3, i % 2 == 0)).collect()).unwrap();
        let mesh = Mesh::build(&cohort, 9.0, 5.0).unwrap();
        let cop = CopulaSpec::independence();
        let a = bootstrap_se(&cohort, &table, &cop, &mesh, 5, 42).unwrap();
        let b = bootstrap_se(&cohort, &table, &cop, &mesh, 5, 42).unwrap();
        assert_eq!(a, b);
        assert!(a.std_err.iter().any(|&s| s > 0.0));
    }
}
