//! End-to-end acceptance checks, one line per criterion.
//!
//! Set `ACCEPTANCE_ONLY=3,4` to run a subset.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use netsurv::cohort::Cohort;
use netsurv::copula::{
    copula_cdf, copula_partial, sample_pairs, tau_to_theta, theta_to_tau, Axis, CopulaSpec, Family, UnitPair,
};
use netsurv::estimator::{bootstrap_se, fit_generalized, fit_pohar_perme, Mesh, NetSurvivalFit, SolverConfig};
use netsurv::inference::chi2_sf;
use netsurv::lifetable::{synthetic_rate_table, RateTable};
use netsurv::simulation::{
    generate_cohort, run_metric_grid, run_test_grid, CohortDesign, Hypothesis, MetricsRow, RejectionRow,
    ScenarioConfig, TestScenario,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn cop(s: &str) -> CopulaSpec {
    s.parse().unwrap()
}

fn seeded_cohort(n: usize, seed: u64) -> Cohort {
    generate_cohort(
        &CohortDesign::single(n, 10.0),
        &CopulaSpec::independence(),
        &synthetic_rate_table(),
        seed,
        0,
    )
    .unwrap()
    .cohort
}

fn max_gap(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn independence_reduction() -> Outcome {
    let table = synthetic_rate_table();
    let cohort = seeded_cohort(500, 20_240_601);
    let mesh = Mesh::build(&cohort, 15.0, 1.0).unwrap();
    let start = Instant::now();
    let pp = fit_pohar_perme(&cohort, &table, &mesh).unwrap();
    let gen = fit_generalized(
        &cohort,
        &table,
        &CopulaSpec::independence(),
        &mesh,
        &SolverConfig::default(),
    )
    .unwrap();
    let secs = start.elapsed().as_secs_f64();
    let gap = max_gap(&pp.cum_hazard, &gen.cum_hazard);
    outcome(gap < 1e-8 && secs < 5.0, format!("max gap {gap:.2e}, {secs:.2} s"))
}

fn nelson_aalen(cohort: &Cohort, at: &[f64]) -> Vec<f64> {
    let mut rows: Vec<(f64, bool)> = cohort.records().iter().map(|r| (r.time, r.status)).collect();
    rows.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n = rows.len();
    let mut steps = Vec::new();
    let mut cum = 0.0;
    let mut i = 0;
    while i < n {
        let t = rows[i].0;
        let mut j = i;
        let mut d = 0.0;
        while j < n && rows[j].0 == t {
            if rows[j].1 {
                d += 1.0;
            }
            j += 1;
        }
        cum += d / (n - i) as f64;
        steps.push((t, cum));
        i = j;
    }
    at.iter()
        .map(|&t| steps.iter().take_while(|s| s.0 <= t).last().map_or(0.0, |s| s.1))
        .collect()
}

fn nelson_aalen_oracle() -> Outcome {
    let zero = RateTable::constant(0.0, 110, 1970..=2030).unwrap();
    let cohort = seeded_cohort(500, 7);
    let mesh = Mesh::build(&cohort, 15.0, 1.0).unwrap();
    let start = Instant::now();
    let fits: Vec<NetSurvivalFit> = vec![
        fit_pohar_perme(&cohort, &zero, &mesh).unwrap(),
        fit_generalized(
            &cohort,
            &zero,
            &cop("clayton(tau=0.3)"),
            &mesh,
            &SolverConfig::default(),
        )
        .unwrap(),
        fit_generalized(&cohort, &zero, &cop("frank(tau=-0.3)"), &mesh, &SolverConfig::default()).unwrap(),
    ];
    let secs = start.elapsed().as_secs_f64();
    let gap = fits
        .iter()
        .map(|f| max_gap(&f.cum_hazard, &nelson_aalen(&cohort, &f.times)))
        .fold(0.0, f64::max);
    outcome(gap <= 1e-12 && secs < 1.0, format!("max gap {gap:.2e}, {secs:.2} s"))
}

fn metric_cell<'a>(rows: &'a [MetricsRow], c0: &str, c: &str, t: f64) -> &'a MetricsRow {
    rows.iter()
        .find(|r| r.true_copula == cop(c0) && r.hyp_copula == cop(c) && r.t == t)
        .unwrap()
}

fn accuracy_run() -> (Vec<MetricsRow>, Duration) {
    let pairs = vec![
        (cop("clayton(tau=0.3)"), cop("clayton(tau=0.3)")),
        (cop("frank(tau=0.3)"), cop("frank(tau=-0.3)")),
        (cop("frank(tau=-0.3)"), cop("frank(tau=0.3)")),
    ];
    let config = ScenarioConfig::metrics(500, 200, 15, pairs);
    let start = Instant::now();
    let grid = run_metric_grid(&config, &synthetic_rate_table()).unwrap();
    (grid.rows, start.elapsed())
}

fn unbiasedness(rows: &[MetricsRow], took: Duration) -> Outcome {
    let r = metric_cell(rows, "clayton(tau=0.3)", "clayton(tau=0.3)", 15.0);
    let secs = took.as_secs_f64();
    outcome(
        r.bias.abs() <= 0.02 && (0.90..=0.98).contains(&r.ecr) && secs < 900.0 && !r.flagged,
        format!(
            "bias(15) {:+.4}, ecr(15) {:.3}, {} failures, {secs:.0} s",
            r.bias, r.ecr, r.failures
        ),
    )
}

fn sign_pattern(rows: &[MetricsRow]) -> Outcome {
    let up = metric_cell(rows, "frank(tau=0.3)", "frank(tau=-0.3)", 15.0);
    let down = metric_cell(rows, "frank(tau=-0.3)", "frank(tau=0.3)", 15.0);
    outcome(
        up.bias >= 0.10 && down.bias <= -0.05,
        format!(
            "frank(+0.3)/frank(-0.3) {:+.4}, frank(-0.3)/frank(+0.3) {:+.4}",
            up.bias, down.bias
        ),
    )
}

const MATCHED: [&str; 5] = [
    "indep",
    "clayton(tau=0.3)",
    "clayton(tau=-0.3)",
    "frank(tau=0.3)",
    "frank(tau=-0.3)",
];

fn rejection_rows(
    scenario: TestScenario,
    hyp: Hypothesis,
    reps: usize,
    pairs: Vec<(CopulaSpec, CopulaSpec)>,
) -> (Vec<RejectionRow>, Duration) {
    let mut config = ScenarioConfig::logrank(500, reps, 57, scenario, hyp, pairs);
    config.times = vec![15.0];
    let start = Instant::now();
    let grid = run_test_grid(&config, &synthetic_rate_table()).unwrap();
    (grid.rows, start.elapsed())
}

fn matched_pairs() -> Vec<(CopulaSpec, CopulaSpec)> {
    MATCHED.iter().map(|s| (cop(s), cop(s))).collect()
}

fn calibration(h0: &[RejectionRow], took: Duration) -> Outcome {
    let secs = took.as_secs_f64();
    let rates: Vec<String> = h0.iter().map(|r| format!("{} {:.3}", r.hyp_copula, r.rate)).collect();
    let pass = h0.iter().all(|r| (0.025..=0.075).contains(&r.rate) && !r.flagged) && secs < 1800.0;
    outcome(pass, format!("{}; {secs:.0} s", rates.join(", ")))
}

fn anti_conservatism() -> Outcome {
    let (rows, took) = rejection_rows(
        TestScenario::SplitByAge,
        Hypothesis::H0,
        200,
        vec![(cop("frank(tau=0.3)"), cop("frank(tau=-0.3)"))],
    );
    outcome(
        rows[0].rate >= 0.25,
        format!(
            "rejection {:.3} ± {:.3}, {:.0} s",
            rows[0].rate,
            rows[0].ci_half_width,
            took.as_secs_f64()
        ),
    )
}

fn power_ordering(h0: &[RejectionRow], h1: &[RejectionRow], h2: &[RejectionRow]) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for ((a, b), c) in h0.iter().zip(h1).zip(h2) {
        assert_eq!(a.hyp_copula, c.hyp_copula);
        pass &= c.rate >= b.rate && b.rate >= a.rate && c.rate >= 0.99;
        parts.push(format!("{} {:.3}/{:.3}/{:.3}", a.hyp_copula, a.rate, b.rate, c.rate));
    }
    outcome(pass, format!("H0/H1/H2: {}", parts.join(", ")))
}

fn kendall_tau(pairs: &[UnitPair]) -> f64 {
    let mut sorted: Vec<(f64, f64)> = pairs.iter().map(|p| (p.u, p.v)).collect();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut v: Vec<f64> = sorted.into_iter().map(|p| p.1).collect();
    let n = v.len();
    let inversions = merge_count(&mut v);
    1.0 - 4.0 * inversions as f64 / (n as f64 * (n as f64 - 1.0))
}

fn merge_count(v: &mut [f64]) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let (left, right) = v.split_at_mut(n / 2);
    let mut count = merge_count(left) + merge_count(right);
    let mut merged = Vec::with_capacity(n);
    let (mut i, mut j) = (0, 0);
    while i < left.len() && j < right.len() {
        if left[i] <= right[j] {
            merged.push(left[i]);
            i += 1;
        } else {
            merged.push(right[j]);
            count += (left.len() - i) as u64;
            j += 1;
        }
    }
    merged.extend_from_slice(&left[i..]);
    merged.extend_from_slice(&right[j..]);
    v.copy_from_slice(&merged);
    count
}

/// Central differences at `h` and `h / 2` combined to cancel the `h^2` term.
fn richardson(diff: impl Fn(f64) -> f64, h: f64) -> f64 {
    (4.0 * diff(h / 2.0) - diff(h)) / 3.0
}

fn copula_suite() -> Outcome {
    let start = Instant::now();
    let mut specs = Vec::new();
    for tau in [-0.5, -0.3, 0.3, 0.5] {
        for fam in [Family::Clayton, Family::Frank, Family::Gumbel] {
            if fam == Family::Gumbel && tau < 0.0 {
                continue;
            }
            specs.push(CopulaSpec::from_tau(fam, tau).unwrap());
        }
    }
    let c = |s: &CopulaSpec, u: f64, v: f64| copula_cdf(s, UnitPair::new(u, v).unwrap());
    let h = 1e-5;
    let (mut worst_fd, mut checked, mut worst_rt, mut worst_tau) = (0.0f64, 0, 0.0f64, 0.0f64);
    for spec in &specs {
        for i in 1..=9 {
            for j in 1..=9 {
                let (u, v) = (i as f64 / 10.0, j as f64 / 10.0);
                let stencil = [c(spec, u - h, v - h), c(spec, u - h, v + h), c(spec, u + h, v - h)];
                if stencil.iter().any(|&x| x <= 0.0) {
                    continue;
                }
                let p = UnitPair::new(u, v).unwrap();
                let fd1 = richardson(|d| (c(spec, u + d, v) - c(spec, u - d, v)) / (2.0 * d), h);
                let fd2 = richardson(|d| (c(spec, u, v + d) - c(spec, u, v - d)) / (2.0 * d), h);
                let p1 = copula_partial(spec, p, Axis::First).unwrap().value;
                let p2 = copula_partial(spec, p, Axis::Second).unwrap().value;
                worst_fd = worst_fd.max(((p1 - fd1) / p1).abs()).max(((p2 - fd2) / p2).abs());
                checked += 1;
            }
        }
        let back = theta_to_tau(spec.family(), tau_to_theta(spec.family(), spec.tau()).unwrap()).unwrap();
        worst_rt = worst_rt.max((back - spec.tau()).abs());
        let tau_hat = kendall_tau(&sample_pairs(spec, 100_000, 99));
        worst_tau = worst_tau.max((tau_hat - spec.tau()).abs());
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst_fd <= 1e-6 && worst_rt <= 1e-9 && worst_tau <= 0.02 && secs < 30.0,
        format!(
            "{} families, {checked} grid points, fd rel {worst_fd:.1e}, round trip {worst_rt:.1e}, kendall {worst_tau:.4}, {secs:.1} s",
            specs.len()
        ),
    )
}

#[allow(clippy::excessive_precision)]
fn chi_square_tail() -> Outcome {
    let cases = [
        (3.841459, 1, 0.04999999465319576639),
        (5.991465, 2, 0.04999998867770083615),
        (18.307, 10, 0.05000058909139812029),
    ];
    let worst = cases
        .iter()
        .map(|&(x, df, want)| (chi2_sf(x, df).unwrap() - want).abs())
        .fold(0.0, f64::max);
    outcome(worst <= 1e-8, format!("max error {worst:.1e}"))
}

fn bootstrap_agreement() -> Outcome {
    let table = synthetic_rate_table();
    let cohort = seeded_cohort(500, 314);
    let mesh = Mesh::build(&cohort, 15.0, 1.0).unwrap();
    let start = Instant::now();
    let fit = fit_pohar_perme(&cohort, &table, &mesh).unwrap();
    let boot = bootstrap_se(&cohort, &table, &CopulaSpec::independence(), &mesh, 200, 2718).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for k in 0..fit.len() {
        if (1.0..=10.0).contains(&fit.times[k]) {
            let ratio = fit.variance[k].sqrt() / boot.std_err[k];
            lo = lo.min(ratio);
            hi = hi.max(ratio);
        }
    }
    outcome(
        lo >= 0.8 && hi <= 1.25 && secs < 600.0,
        format!(
            "ratio in [{lo:.3}, {hi:.3}] on [1, 10], {} replicates, {secs:.1} s",
            boot.replicates
        ),
    )
}

fn main() -> ExitCode {
    let only: Option<Vec<u32>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let wanted = |k: u32| match &only {
        Some(o) => o.contains(&k),
        None => true,
    };
    let mut results: Vec<(u32, Outcome)> = Vec::new();
    let mut report = |k: u32, o: Outcome| {
        println!(
            "criterion {k:>2}: {} {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        results.push((k, o));
    };

    if wanted(1) {
        report(1, independence_reduction());
    }
    if wanted(2) {
        report(2, nelson_aalen_oracle());
    }
    if wanted(3) || wanted(4) {
        let (rows, took) = accuracy_run();
        if wanted(3) {
            report(3, unbiasedness(&rows, took));
        }
        if wanted(4) {
            report(4, sign_pattern(&rows));
        }
    }
    if wanted(5) || wanted(7) {
        let (h0, took) = rejection_rows(TestScenario::SamePopulation, Hypothesis::H0, 400, matched_pairs());
        if wanted(5) {
            report(5, calibration(&h0, took));
        }
        if wanted(7) {
            let (h1, _) = rejection_rows(TestScenario::SamePopulation, Hypothesis::H1, 200, matched_pairs());
            let (h2, _) = rejection_rows(TestScenario::SamePopulation, Hypothesis::H2, 200, matched_pairs());
            report(7, power_ordering(&h0, &h1, &h2));
        }
    }
    if wanted(6) {
        report(6, anti_conservatism());
    }
    if wanted(8) {
        report(8, copula_suite());
    }
    if wanted(9) {
        report(9, chi_square_tail());
    }
    if wanted(10) {
        report(10, bootstrap_agreement());
    }

    let failed = results.iter().filter(|(_, o)| !o.pass).count();
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
