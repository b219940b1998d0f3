use netsurv::copula::{copula_cdf, CopulaSpec, UnitPair};
use netsurv::lifetable::{hazard_path, population_survival, synthetic_rate_table, RateTable};
use netsurv::simulation::{
    generate_cohort, run_metric_grid, run_test_grid, write_metrics_csv, write_pvalue_csv, write_rejection_csv,
    CohortDesign, Hypothesis, ScenarioConfig, TestScenario,
};

fn binomial_se(p: f64, n: usize) -> f64 {
    (p * (1.0 - p) / n as f64).sqrt()
}

#[test]
fn uncensored_independent_times_are_exponential() {
    let table = RateTable::constant(0.0, 110, 1980..=2020).unwrap();
    let design = CohortDesign {
        censor_mean: 1e12,
        ..CohortDesign::single(10_000, 10.0)
    };
    let sim = generate_cohort(&design, &CopulaSpec::independence(), &table, 8, 0).unwrap();
    let n = sim.cohort.len();
    for t in [1.0, 5.0, 10.0] {
        let s = (-t / 10.0f64).exp();
        let emp = sim.cohort.records().iter().filter(|r| r.time > t).count() as f64 / n as f64;
        assert!((emp - s).abs() <= 3.0 * binomial_se(s, n), "t = {t}: {emp} vs {s}");
    }
    assert!(sim
        .truth
        .iter()
        .zip(sim.cohort.records())
        .all(|(l, r)| r.time == l.excess_time.min(15.0)));
}

#[test]
fn about_a_third_of_patients_are_censored() {
    let sim = generate_cohort(
        &CohortDesign::single(10_000, 10.0),
        &CopulaSpec::independence(),
        &synthetic_rate_table(),
        8,
        1,
    )
    .unwrap();
    let censored = sim.cohort.records().iter().filter(|r| !r.status).count() as f64 / 1e4;
    assert!((censored - 1.0 / 3.0).abs() <= 0.05, "censoring fraction {censored}");
}

#[test]
fn joint_survival_follows_the_true_copula() {
    let table = synthetic_rate_table();
    for spec in ["clayton(tau=0.3)", "frank(tau=-0.3)", "gumbel(tau=0.5)"] {
        let c0: CopulaSpec = spec.parse().unwrap();
        let sim = generate_cohort(&CohortDesign::single(10_000, 10.0), &c0, &table, 21, 0).unwrap();
        let t = 5.0;
        let se = (-t / 10.0f64).exp();
        let mut expected = 0.0;
        let mut hits = 0usize;
        for (rec, lat) in sim.cohort.records().iter().zip(&sim.truth) {
            let path = hazard_path(&table, &rec.demo, 15.0).unwrap();
            let sp = population_survival(&path, t).unwrap();
            expected += copula_cdf(&c0, UnitPair::new(se, sp).unwrap());
            if lat.excess_time > t && lat.population_time > t {
                hits += 1;
            }
        }
        let n = sim.truth.len();
        let expected = expected / n as f64;
        let emp = hits as f64 / n as f64;
        assert!(
            (emp - expected).abs() <= 3.0 * binomial_se(expected, n),
            "{spec}: {emp} vs {expected}"
        );
    }
}

#[test]
fn metric_study_is_reproducible_and_consistent() {
    let pairs = vec![
        ("clayton(tau=0.3)".parse().unwrap(), "clayton(tau=0.3)".parse().unwrap()),
        ("clayton(tau=0.3)".parse().unwrap(), CopulaSpec::independence()),
    ];
    let config = ScenarioConfig::metrics(120, 6, 3, pairs);
    let table = synthetic_rate_table();
    let a = run_metric_grid(&config, &table).unwrap();
    let b = run_metric_grid(&config, &table).unwrap();
    assert_eq!(a, b);
    let (mut x, mut y) = (Vec::new(), Vec::new());
    write_metrics_csv(&mut x, &a.rows).unwrap();
    write_metrics_csv(&mut y, &b.rows).unwrap();
    assert_eq!(x, y);
    assert_eq!(a.rows.len(), 2 * 3);
    for row in &a.rows {
        assert!(row.rmse + 1e-15 >= row.bias.abs());
        assert!((0.0..=1.0).contains(&row.ecr));
    }
    assert_eq!(a.curves.len(), 2 * 6);
}

#[test]
fn single_replicate_gives_degenerate_but_finite_metrics() {
    let config = ScenarioConfig::metrics(80, 1, 5, vec![(CopulaSpec::independence(), CopulaSpec::independence())]);
    let grid = run_metric_grid(&config, &synthetic_rate_table()).unwrap();
    for row in &grid.rows {
        assert!(row.bias.is_finite() && row.rmse.is_finite());
        assert!(row.ecr == 0.0 || row.ecr == 1.0);
        assert!((row.rmse - row.bias.abs()).abs() < 1e-15);
    }
}

#[test]
fn test_study_is_reproducible() {
    let c: CopulaSpec = "frank(tau=0.3)".parse().unwrap();
    let config = ScenarioConfig::logrank(100, 5, 9, TestScenario::SplitByAge, Hypothesis::H2, vec![(c, c)]);
    let table = synthetic_rate_table();
    let a = run_test_grid(&config, &table).unwrap();
    let b = run_test_grid(&config, &table).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.rows.len(), 3);
    assert_eq!(a.p_values.len(), 5 * 3);
    for row in &a.rows {
        assert!((0.0..=1.0).contains(&row.rate));
        assert!(row.ci_half_width >= 0.0);
    }
    let (mut x, mut y) = (Vec::new(), Vec::new());
    write_rejection_csv(&mut x, &a.rows).unwrap();
    write_pvalue_csv(&mut y, &a.p_values).unwrap();
    assert_eq!(String::from_utf8(x).unwrap().lines().count(), 4);
    assert_eq!(String::from_utf8(y).unwrap().lines().count(), 16);
}
