//! Monte Carlo studies with known ground truth.
//!
//! Patients get a sex (fair coin), a diagnosis date and an age at diagnosis
//! (uniform), a pair `(U_E, U_P)` from the true survival copula, an
//! exponential excess time `E = -mu ln U_E`, a population time `P` with
//! `S_P(P) = U_P`, and a censoring time `min(Exp(mean), cut)`.
//!
//! Studies are described by [`ScenarioConfig`], which reads a small
//! `key = value` text format:
//!
//! ```text
//! # comments start with '#'
//! name = accuracy-t15
//! kind = metrics            # or logrank
//! n = 500
//! reps = 200
//! seed = 1
//! excess_mean = 10          # metrics only
//! scenario = 1              # logrank only: 1 or 2
//! hypothesis = H0           # logrank only: H0, H1 or H2
//! true_copulas = indep, clayton(tau=0.3)
//! hyp_copulas = indep, clayton(tau=0.3)
//! pairing = cross           # or matched
//! times = 5, 10, 15
//! ```
//!
//! Optional keys: `censor_mean` (20), `admin_cut` (15), `age` (`35-75`),
//! `diag` (`1990-2010`), `step_days` (1), `alpha` (0.05), `plot_step`
//! (0.25) and `rate_table` (a path, resolved by the caller).

use std::fmt;
use std::str::FromStr;

use rand::distributions::Open01;
use rand::Rng;
use rayon::prelude::*;

use crate::cohort::{Cohort, PatientRecord};
use crate::copula::CopulaSpec;
use crate::error::{Error, Result};
use crate::estimator::{fit_generalized, fit_pohar_perme, Mesh, NetSurvivalFit, SolverConfig};
use crate::inference::logrank_observable_at;
use crate::lifetable::{hazard_path, sample_population_time, Demographics, RateTable, Sex};
use crate::report::fmt_num;
use crate::rng;

/// Two-sided 95% normal quantile.
pub const Z_975: f64 = 1.959964;

/// Unobserved quantities of one simulated patient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatentPatient {
    pub excess_mean: f64,
    pub excess_time: f64,
    /// Beyond the administrative cut when the population hazard is too small to reach `U_P`.
    pub population_time: f64,
    pub censoring_time: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupDesign {
    pub label: String,
    pub excess_mean: f64,
    pub age: (f64, f64),
}

/// How one cohort is drawn. Patients are split into the groups in order,
/// in equal parts, the last group taking any remainder.
#[derive(Debug, Clone, PartialEq)]
pub struct CohortDesign {
    pub n: usize,
    pub groups: Vec<GroupDesign>,
    pub censor_mean: f64,
    pub admin_cut: f64,
    pub diag: (f64, f64),
}

impl CohortDesign {
    /// One group with exponential excess mortality of mean `mu`, ages 35 to
    /// 75, diagnosis between 1990 and 2010, censoring `Exp(20)` cut at 15.
    pub fn single(n: usize, mu: f64) -> Self {
        Self {
            n,
            groups: vec![GroupDesign {
                label: "all".into(),
                excess_mean: mu,
                age: (35.0, 75.0),
            }],
            censor_mean: 20.0,
            admin_cut: 15.0,
            diag: (1990.0, 2010.0),
        }
    }

    /// Two groups of `n / 2` for the log-rank studies.
    pub fn two_groups(n: usize, scenario: TestScenario, hypothesis: Hypothesis) -> Self {
        let (mu_a, mu_b) = hypothesis.excess_means();
        let (age_a, age_b) = match scenario {
            TestScenario::SamePopulation => ((35.0, 75.0), (35.0, 75.0)),
            TestScenario::SplitByAge => ((35.0, 65.0), (65.0, 75.0)),
        };
        Self {
            n,
            groups: vec![
                GroupDesign {
                    label: "a".into(),
                    excess_mean: mu_a,
                    age: age_a,
                },
                GroupDesign {
                    label: "b".into(),
                    excess_mean: mu_b,
                    age: age_b,
                },
            ],
            ..Self::single(n, 10.0)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.groups.is_empty() || self.n < self.groups.len() {
            return Err(Error::input("a cohort needs at least one patient per group"));
        }
        if !(self.censor_mean > 0.0 && self.admin_cut > 0.0) {
            return Err(Error::domain("censoring mean and cut must be positive"));
        }
        if !(self.diag.0 <= self.diag.1) {
            return Err(Error::domain("diagnosis range is reversed"));
        }
        for g in &self.groups {
            if !(g.excess_mean > 0.0 && g.excess_mean.is_finite()) {
                return Err(Error::domain(format!(
                    "excess mean must be positive, got {}",
                    g.excess_mean
                )));
            }
            if !(0.0 <= g.age.0 && g.age.0 <= g.age.1) {
                return Err(Error::domain(format!("bad age range {:?}", g.age)));
            }
        }
        Ok(())
    }

    fn group_of(&self, i: usize) -> usize {
        let size = self.n / self.groups.len();
        (i / size).min(self.groups.len() - 1)
    }
}

/// A cohort together with its unobserved truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedCohort {
    pub cohort: Cohort,
    pub truth: Vec<LatentPatient>,
}

/// Draws replicate `rep` of `design` under the true copula `c0`.
///
/// Patient `i` uses its own random stream, so the result depends only on
/// `(seed, rep, i)` and not on scheduling.
pub fn generate_cohort(
    design: &CohortDesign,
    c0: &CopulaSpec,
    table: &RateTable,
    seed: u64,
    rep: u64,
) -> Result<SimulatedCohort> {
    design.validate()?;
    let mut records = Vec::with_capacity(design.n);
    let mut truth = Vec::with_capacity(design.n);
    for i in 0..design.n {
        let g = &design.groups[design.group_of(i)];
        let mut r = rng::substream(seed, rep, i as u64);
        let sex = if r.gen_bool(0.5) { Sex::Male } else { Sex::Female };
        let diagnosis_year = design.diag.0 + (design.diag.1 - design.diag.0) * r.gen::<f64>();
        let age = g.age.0 + (g.age.1 - g.age.0) * r.gen::<f64>();
        let demo = Demographics {
            sex,
            age,
            diagnosis_year,
        };
        let pair = c0.sample_pair(&mut r);
        let excess_time = -g.excess_mean * pair.u.ln();
        let path = hazard_path(table, &demo, design.admin_cut)?;
        let population_time = sample_population_time(&path, pair.v)?;
        let w: f64 = r.sample(Open01);
        let censoring_time = (-design.censor_mean * w.ln()).min(design.admin_cut);
        let death = excess_time.min(population_time);
        let time = death.min(censoring_time);
        records.push(PatientRecord::new(time, death <= censoring_time, demo)?.with_group(g.label.clone()));
        truth.push(LatentPatient {
            excess_mean: g.excess_mean,
            excess_time,
            population_time,
            censoring_time,
        });
    }
    Ok(SimulatedCohort {
        cohort: Cohort::new(records)?,
        truth,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StudyKind {
    Metrics,
    LogRank,
}

/// Group layouts of the log-rank studies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TestScenario {
    /// Both groups drawn from the same demographics.
    SamePopulation,
    /// Ages 35 to 65 against 65 to 75.
    SplitByAge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Hypothesis {
    /// Excess means 5 and 5.
    H0,
    /// 5 and 6.
    H1,
    /// 5 and 10.
    H2,
}

impl Hypothesis {
    pub fn excess_means(self) -> (f64, f64) {
        match self {
            Hypothesis::H0 => (5.0, 5.0),
            Hypothesis::H1 => (5.0, 6.0),
            Hypothesis::H2 => (5.0, 10.0),
        }
    }
}

impl fmt::Display for Hypothesis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Hypothesis::H0 => "H0",
            Hypothesis::H1 => "H1",
            Hypothesis::H2 => "H2",
        })
    }
}

impl FromStr for Hypothesis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "H0" => Ok(Hypothesis::H0),
            "H1" => Ok(Hypothesis::H1),
            "H2" => Ok(Hypothesis::H2),
            _ => Err(Error::parse(format!("unknown hypothesis {s:?}"))),
        }
    }
}

/// A simulation study.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub name: String,
    pub kind: StudyKind,
    pub reps: usize,
    pub seed: u64,
    pub design: CohortDesign,
    /// `(true, hypothesized)` copula cells.
    pub pairs: Vec<(CopulaSpec, CopulaSpec)>,
    /// Evaluation times (metrics) or test horizons (log-rank).
    pub times: Vec<f64>,
    pub step_days: f64,
    pub alpha: f64,
    pub plot_step: f64,
    pub rate_table: Option<String>,
}

impl ScenarioConfig {
    pub fn metrics(n: usize, reps: usize, seed: u64, pairs: Vec<(CopulaSpec, CopulaSpec)>) -> Self {
        Self {
            name: "metrics".into(),
            kind: StudyKind::Metrics,
            reps,
            seed,
            design: CohortDesign::single(n, 10.0),
            pairs,
            times: vec![5.0, 10.0, 15.0],
            step_days: 1.0,
            alpha: 0.05,
            plot_step: 0.25,
            rate_table: None,
        }
    }

    pub fn logrank(
        n: usize,
        reps: usize,
        seed: u64,
        scenario: TestScenario,
        hypothesis: Hypothesis,
        pairs: Vec<(CopulaSpec, CopulaSpec)>,
    ) -> Self {
        Self {
            name: format!("logrank-{hypothesis}"),
            kind: StudyKind::LogRank,
            design: CohortDesign::two_groups(n, scenario, hypothesis),
            ..Self::metrics(n, reps, seed, pairs)
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.design.validate()?;
        if self.reps == 0 {
            return Err(Error::input("reps must be at least 1"));
        }
        if self.pairs.is_empty() {
            return Err(Error::input("no copula cells"));
        }
        if self.times.is_empty() || self.times.iter().any(|&t| !(t > 0.0 && t <= self.design.admin_cut)) {
            return Err(Error::domain(format!(
                "times must lie in (0, {}]",
                self.design.admin_cut
            )));
        }
        if !(self.step_days > 0.0 && self.plot_step > 0.0) {
            return Err(Error::domain("step sizes must be positive"));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::domain("alpha must lie in (0, 1)"));
        }
        if self.kind == StudyKind::LogRank && self.design.groups.len() < 2 {
            return Err(Error::input("log-rank studies need two groups"));
        }
        if self.kind == StudyKind::Metrics && self.design.groups.len() != 1 {
            return Err(Error::input("metric studies use a single group"));
        }
        Ok(())
    }

    fn horizon(&self) -> f64 {
        self.times.iter().copied().fold(0.0, f64::max)
    }
}

fn parse_range(key: &str, v: &str) -> Result<(f64, f64)> {
    let (a, b) = v
        .split_once('-')
        .ok_or_else(|| Error::parse(format!("{key}: expected lo-hi, got {v:?}")))?;
    Ok((parse_num(key, a)?, parse_num(key, b)?))
}

fn parse_num<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim()
        .parse()
        .map_err(|_| Error::parse(format!("{key}: cannot read {v:?}")))
}

fn parse_list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>>
where
    T::Err: fmt::Display,
{
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|e| Error::parse(format!("{key}: {e}"))))
        .collect()
}

impl FromStr for ScenarioConfig {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let mut kv: Vec<(usize, String, String)> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::parse_at(i + 1, format!("expected key = value, got {line:?}")))?;
            let k = k.trim().to_ascii_lowercase();
            if kv.iter().any(|(_, seen, _)| *seen == k) {
                return Err(Error::parse_at(i + 1, format!("duplicate key {k:?}")));
            }
            kv.push((i + 1, k, v.trim().to_string()));
        }
        let get = |k: &str| kv.iter().find(|(_, key, _)| key == k).map(|(_, _, v)| v.as_str());
        let at = |k: &str| kv.iter().find(|(_, key, _)| key == k).map_or(0, |(l, _, _)| *l);
        let wrap = |k: &str, e: Error| match e {
            Error::Parse(m) => Error::parse_at(at(k), m),
            other => other,
        };
        const KNOWN: &[&str] = &[
            "name",
            "kind",
            "n",
            "reps",
            "seed",
            "excess_mean",
            "scenario",
            "hypothesis",
            "true_copulas",
            "hyp_copulas",
            "pairing",
            "times",
            "censor_mean",
            "admin_cut",
            "age",
            "diag",
            "step_days",
            "alpha",
            "plot_step",
            "rate_table",
        ];
        if let Some((line, k, _)) = kv.iter().find(|(_, k, _)| !KNOWN.contains(&k.as_str())) {
            return Err(Error::parse_at(*line, format!("unknown key {k:?}")));
        }
        let required = |k: &str| get(k).ok_or_else(|| Error::parse(format!("missing key {k:?}")));

        let kind = match required("kind")? {
            "metrics" => StudyKind::Metrics,
            "logrank" => StudyKind::LogRank,
            other => return Err(Error::parse_at(at("kind"), format!("unknown kind {other:?}"))),
        };
        let n: usize = parse_num("n", required("n")?).map_err(|e| wrap("n", e))?;
        let reps: usize = parse_num("reps", required("reps")?).map_err(|e| wrap("reps", e))?;
        let seed: u64 = parse_num("seed", required("seed")?).map_err(|e| wrap("seed", e))?;

        let mut design = match kind {
            StudyKind::Metrics => {
                let mu = get("excess_mean").map_or(Ok(10.0), |v| {
                    parse_num("excess_mean", v).map_err(|e| wrap("excess_mean", e))
                })?;
                CohortDesign::single(n, mu)
            }
            StudyKind::LogRank => {
                let scenario = match required("scenario")? {
                    "1" => TestScenario::SamePopulation,
                    "2" => TestScenario::SplitByAge,
                    other => {
                        return Err(Error::parse_at(
                            at("scenario"),
                            format!("scenario must be 1 or 2, got {other:?}"),
                        ))
                    }
                };
                let hyp: Hypothesis = required("hypothesis")?.parse().map_err(|e| wrap("hypothesis", e))?;
                CohortDesign::two_groups(n, scenario, hyp)
            }
        };
        if let Some(v) = get("censor_mean") {
            design.censor_mean = parse_num("censor_mean", v).map_err(|e| wrap("censor_mean", e))?;
        }
        if let Some(v) = get("admin_cut") {
            design.admin_cut = parse_num("admin_cut", v).map_err(|e| wrap("admin_cut", e))?;
        }
        if let Some(v) = get("diag") {
            design.diag = parse_range("diag", v).map_err(|e| wrap("diag", e))?;
        }
        if let Some(v) = get("age") {
            if kind == StudyKind::LogRank {
                return Err(Error::parse_at(
                    at("age"),
                    "age ranges of log-rank studies are set by the scenario",
                ));
            }
            design.groups[0].age = parse_range("age", v).map_err(|e| wrap("age", e))?;
        }

        let trues: Vec<CopulaSpec> =
            parse_list("true_copulas", required("true_copulas")?).map_err(|e| wrap("true_copulas", e))?;
        let hyps: Vec<CopulaSpec> =
            parse_list("hyp_copulas", required("hyp_copulas")?).map_err(|e| wrap("hyp_copulas", e))?;
        let pairs = match get("pairing").unwrap_or("cross") {
            "cross" => trues.iter().flat_map(|t| hyps.iter().map(move |h| (*t, *h))).collect(),
            "matched" => {
                if trues.len() != hyps.len() {
                    return Err(Error::parse_at(
                        at("pairing"),
                        "matched pairing needs lists of equal length",
                    ));
                }
                trues.into_iter().zip(hyps).collect()
            }
            other => return Err(Error::parse_at(at("pairing"), format!("unknown pairing {other:?}"))),
        };
        let times = match get("times") {
            Some(v) => parse_list("times", v).map_err(|e| wrap("times", e))?,
            None => vec![5.0, 10.0, 15.0],
        };
        let opt = |k: &str, default: f64| -> Result<f64> {
            get(k).map_or(Ok(default), |v| parse_num(k, v).map_err(|e| wrap(k, e)))
        };
        let config = ScenarioConfig {
            name: get("name").unwrap_or("scenario").to_string(),
            kind,
            reps,
            seed,
            design,
            pairs,
            times,
            step_days: opt("step_days", 1.0)?,
            alpha: opt("alpha", 0.05)?,
            plot_step: opt("plot_step", 0.25)?,
            rate_table: get("rate_table").map(str::to_string),
        };
        config.validate()?;
        Ok(config)
    }
}

/// Accuracy of the survival estimates of one copula cell at one time.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub true_copula: CopulaSpec,
    pub hyp_copula: CopulaSpec,
    pub t: f64,
    /// Mean of `S_hat(t) - S(t)`.
    pub bias: f64,
    pub rmse: f64,
    /// Share of replicates with `|ln S(t) - ln S_hat(t)| <= z sigma_hat(t)`.
    pub ecr: f64,
    pub reps: usize,
    pub n: usize,
    pub failures: usize,
    /// More than 5% of the fits in the cell failed.
    pub flagged: bool,
}

/// `S_hat(t) / S(t)` of one replicate, on the plotting grid.
#[derive(Debug, Clone, PartialEq)]
pub struct RatioCurve {
    pub true_copula: CopulaSpec,
    pub hyp_copula: CopulaSpec,
    pub rep: usize,
    pub times: Vec<f64>,
    pub ratio: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricGrid {
    pub rows: Vec<MetricsRow>,
    pub curves: Vec<RatioCurve>,
}

fn fit_with(cohort: &Cohort, table: &RateTable, copula: &CopulaSpec, mesh: &Mesh) -> Result<NetSurvivalFit> {
    if copula.is_independence() {
        fit_pohar_perme(cohort, table, mesh)
    } else {
        fit_generalized(cohort, table, copula, mesh, &SolverConfig::default())
    }
}

/// Cohort draws are shared by every cell with the same true copula.
fn distinct_true(pairs: &[(CopulaSpec, CopulaSpec)]) -> Vec<CopulaSpec> {
    let mut out: Vec<CopulaSpec> = Vec::new();
    for (t, _) in pairs {
        if !out.contains(t) {
            out.push(*t);
        }
    }
    out
}

/// Runs every cell of a metric study.
pub fn run_metric_grid(config: &ScenarioConfig, table: &RateTable) -> Result<MetricGrid> {
    config.validate()?;
    if config.kind != StudyKind::Metrics {
        return Err(Error::input("not a metrics scenario"));
    }
    let mu = config.design.groups[0].excess_mean;
    let horizon = config.horizon();
    let n_plot = (horizon / config.plot_step).floor() as usize;
    let plot_times: Vec<f64> = (0..=n_plot).map(|j| j as f64 * config.plot_step).collect();
    let trues = distinct_true(&config.pairs);

    // per (true copula, rep): per pair index, Some((estimates at times, sigma at times, ratio curve))
    type Out = Option<(Vec<f64>, Vec<f64>, Vec<f64>)>;
    let work: Vec<(usize, usize)> = (0..trues.len())
        .flat_map(|c| (0..config.reps).map(move |r| (c, r)))
        .collect();
    let results: Vec<Result<Vec<(usize, Out)>>> = work
        .par_iter()
        .map(|&(c, rep)| {
            let c0 = &trues[c];
            let sim = generate_cohort(&config.design, c0, table, config.seed, rep as u64)?;
            let mesh = Mesh::build(&sim.cohort, horizon, config.step_days)?;
            Ok(config
                .pairs
                .iter()
                .enumerate()
                .filter(|(_, (t, _))| t == c0)
                .map(|(j, (_, hyp))| {
                    let out = fit_with(&sim.cohort, table, hyp, &mesh).ok().map(|fit| {
                        let s: Vec<f64> = config.times.iter().map(|&t| fit.survival_at(t)).collect();
                        let sd: Vec<f64> = config.times.iter().map(|&t| fit.std_err_at(t)).collect();
                        let ratio = plot_times
                            .iter()
                            .map(|&t| fit.survival_at(t) / (-t / mu).exp())
                            .collect();
                        (s, sd, ratio)
                    });
                    (j, out)
                })
                .collect())
        })
        .collect();

    let mut per_pair: Vec<Vec<(usize, Out)>> = vec![Vec::new(); config.pairs.len()];
    for (&(_, rep), res) in work.iter().zip(results) {
        for (j, out) in res? {
            per_pair[j].push((rep, out));
        }
    }

    let mut rows = Vec::new();
    let mut curves = Vec::new();
    for (j, (c0, hyp)) in config.pairs.iter().enumerate() {
        let outs = &per_pair[j];
        let failures = outs.iter().filter(|(_, o)| o.is_none()).count();
        let ok: Vec<&(Vec<f64>, Vec<f64>, Vec<f64>)> = outs.iter().filter_map(|(_, o)| o.as_ref()).collect();
        let m = ok.len() as f64;
        for (ti, &t) in config.times.iter().enumerate() {
            let truth = (-t / mu).exp();
            let (mut sum, mut sq, mut cover) = (0.0, 0.0, 0usize);
            for (s, sd, _) in &ok {
                let d = s[ti] - truth;
                sum += d;
                sq += d * d;
                if (-t / mu - s[ti].ln()).abs() <= Z_975 * sd[ti] {
                    cover += 1;
                }
            }
            rows.push(MetricsRow {
                true_copula: *c0,
                hyp_copula: *hyp,
                t,
                bias: sum / m,
                rmse: (sq / m).sqrt(),
                ecr: cover as f64 / m,
                reps: ok.len(),
                n: config.design.n,
                failures,
                flagged: failures * 20 > outs.len(),
            });
        }
        for (rep, out) in outs {
            if let Some((_, _, ratio)) = out {
                curves.push(RatioCurve {
                    true_copula: *c0,
                    hyp_copula: *hyp,
                    rep: *rep,
                    times: plot_times.clone(),
                    ratio: ratio.clone(),
                });
            }
        }
    }
    Ok(MetricGrid { rows, curves })
}

/// Rejection frequency of one copula cell at one horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct RejectionRow {
    pub true_copula: CopulaSpec,
    pub hyp_copula: CopulaSpec,
    pub horizon: f64,
    pub rate: f64,
    /// Half-width of the normal-approximation 95% interval.
    pub ci_half_width: f64,
    pub reps: usize,
    pub failures: usize,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PValue {
    pub true_copula: CopulaSpec,
    pub hyp_copula: CopulaSpec,
    pub rep: usize,
    pub horizon: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TestGrid {
    pub rows: Vec<RejectionRow>,
    pub p_values: Vec<PValue>,
}

/// `(cell, p-values at each horizon)` for one replicate; `None` when the test failed.
type RepOutcome = Vec<(usize, Option<Vec<f64>>)>;

/// Runs every cell of a log-rank study.
pub fn run_test_grid(config: &ScenarioConfig, table: &RateTable) -> Result<TestGrid> {
    config.validate()?;
    if config.kind != StudyKind::LogRank {
        return Err(Error::input("not a log-rank scenario"));
    }
    let horizon = config.horizon();
    let trues = distinct_true(&config.pairs);
    let work: Vec<(usize, usize)> = (0..trues.len())
        .flat_map(|c| (0..config.reps).map(move |r| (c, r)))
        .collect();
    let results: Vec<Result<RepOutcome>> = work
        .par_iter()
        .map(|&(c, rep)| {
            let c0 = &trues[c];
            let sim = generate_cohort(&config.design, c0, table, config.seed, rep as u64)?;
            let mesh = Mesh::build(&sim.cohort, horizon, config.step_days)?;
            Ok(config
                .pairs
                .iter()
                .enumerate()
                .filter(|(_, (t, _))| t == c0)
                .map(|(j, (_, hyp))| {
                    let p = logrank_observable_at(&sim.cohort, table, hyp, &mesh, &config.times)
                        .ok()
                        .map(|rs| rs.iter().map(|r| r.p_value).collect());
                    (j, p)
                })
                .collect())
        })
        .collect();

    let mut per_pair: Vec<Vec<(usize, Option<Vec<f64>>)>> = vec![Vec::new(); config.pairs.len()];
    for (&(_, rep), res) in work.iter().zip(results) {
        for (j, out) in res? {
            per_pair[j].push((rep, out));
        }
    }

    let mut rows = Vec::new();
    let mut p_values = Vec::new();
    for (j, (c0, hyp)) in config.pairs.iter().enumerate() {
        let outs = &per_pair[j];
        let failures = outs.iter().filter(|(_, o)| o.is_none()).count();
        let ok: Vec<&Vec<f64>> = outs.iter().filter_map(|(_, o)| o.as_ref()).collect();
        let m = ok.len() as f64;
        for (ti, &t) in config.times.iter().enumerate() {
            let rejected = ok.iter().filter(|p| p[ti] < config.alpha).count();
            let rate = rejected as f64 / m;
            rows.push(RejectionRow {
                true_copula: *c0,
                hyp_copula: *hyp,
                horizon: t,
                rate,
                ci_half_width: Z_975 * (rate * (1.0 - rate) / m).sqrt(),
                reps: ok.len(),
                failures,
                flagged: failures * 20 > outs.len(),
            });
        }
        for (rep, out) in outs {
            if let Some(ps) = out {
                for (&t, &p) in config.times.iter().zip(ps) {
                    p_values.push(PValue {
                        true_copula: *c0,
                        hyp_copula: *hyp,
                        rep: *rep,
                        horizon: t,
                        p_value: p,
                    });
                }
            }
        }
    }
    Ok(TestGrid { rows, p_values })
}

pub fn write_metrics_csv<W: std::io::Write>(mut w: W, rows: &[MetricsRow]) -> std::io::Result<()> {
    writeln!(w, "true_copula,hyp_copula,t,bias,rmse,ecr,reps,n,failures,flagged")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{}",
            r.true_copula,
            r.hyp_copula,
            fmt_num(r.t),
            fmt_num(r.bias),
            fmt_num(r.rmse),
            fmt_num(r.ecr),
            r.reps,
            r.n,
            r.failures,
            r.flagged
        )?;
    }
    Ok(())
}

pub fn write_ratio_csv<W: std::io::Write>(mut w: W, curves: &[RatioCurve]) -> std::io::Result<()> {
    writeln!(w, "true_copula,hyp_copula,rep,t,ratio")?;
    for c in curves {
        for (t, r) in c.times.iter().zip(&c.ratio) {
            writeln!(
                w,
                "{},{},{},{},{}",
                c.true_copula,
                c.hyp_copula,
                c.rep,
                fmt_num(*t),
                fmt_num(*r)
            )?;
        }
    }
    Ok(())
}

pub fn write_rejection_csv<W: std::io::Write>(mut w: W, rows: &[RejectionRow]) -> std::io::Result<()> {
    writeln!(
        w,
        "true_copula,hyp_copula,horizon,rate,ci_low,ci_high,reps,failures,flagged"
    )?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{}",
            r.true_copula,
            r.hyp_copula,
            fmt_num(r.horizon),
            fmt_num(r.rate),
            fmt_num(r.rate - r.ci_half_width),
            fmt_num(r.rate + r.ci_half_width),
            r.reps,
            r.failures,
            r.flagged
        )?;
    }
    Ok(())
}

pub fn write_pvalue_csv<W: std::io::Write>(mut w: W, rows: &[PValue]) -> std::io::Result<()> {
    writeln!(w, "true_copula,hyp_copula,rep,horizon,p_value")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{}",
            r.true_copula,
            r.hyp_copula,
            r.rep,
            fmt_num(r.horizon),
            fmt_num(r.p_value)
        )?;
    }
    Ok(())
}
