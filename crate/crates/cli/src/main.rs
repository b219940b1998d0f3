use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use netsurv::cohort::{load_cohort_csv, Cohort, CohortUnits, TimeUnit};
use netsurv::copula::{sample_pairs, CopulaSpec};
use netsurv::estimator::{bootstrap_se, fit_generalized, fit_pohar_perme, Mesh, NetSurvivalFit, SolverConfig};
use netsurv::inference::logrank_observable_at;
use netsurv::lifetable::{load_rate_table, synthetic_rate_table, RateTable, TableUnit};
use netsurv::report::{fmt_num, write_bootstrap_csv, write_fit_csv};
use netsurv::simulation::{
    run_metric_grid, run_test_grid, write_metrics_csv, write_pvalue_csv, write_ratio_csv, write_rejection_csv,
    ScenarioConfig, StudyKind, Z_975,
};
use netsurv::Error;

/// Net survival under dependent excess and population mortality.
#[derive(Parser)]
#[command(name = "netsurv", version)]
struct Cli {
    /// Worker threads for bootstrap, group fits and simulations.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate net survival with pointwise 95% intervals.
    Fit(FitArgs),
    /// Compare excess mortality between groups.
    Test(TestArgs),
    /// Bootstrap standard errors next to the plug-in ones.
    Bootstrap(BootArgs),
    /// Run a simulation study described by a scenario file.
    Simulate(SimArgs),
    /// Draw pairs from a copula.
    SampleCopula(SampleArgs),
}

#[derive(Args)]
struct Inputs {
    /// Cohort CSV with columns time,status,sex,age,diag_date and an optional group.
    #[arg(long)]
    cohort: PathBuf,
    /// Rate table CSV (sex,age,year,hazard), or "synthetic" for the built-in table.
    #[arg(long)]
    rate_table: String,
    /// Hypothesized copula, e.g. indep, clayton(tau=0.3), frank(theta=5).
    #[arg(long, default_value = "indep")]
    copula: String,
    #[arg(long, value_enum, default_value_t = Unit::Days)]
    time_unit: Unit,
    #[arg(long, value_enum, default_value_t = Unit::Years)]
    age_unit: Unit,
    #[arg(long, value_enum, default_value_t = RateUnit::Hazard)]
    table_unit: RateUnit,
    /// Mesh step in days.
    #[arg(long, default_value_t = 1.0)]
    step_days: f64,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    inputs: Inputs,
    /// Last time of the fit, in the time unit; defaults to the largest follow-up time.
    #[arg(long)]
    horizon: Option<f64>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TestArgs {
    #[command(flatten)]
    inputs: Inputs,
    /// Test horizon in the time unit; repeat for several.
    #[arg(long, required = true)]
    horizon: Vec<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BootArgs {
    #[command(flatten)]
    inputs: Inputs,
    /// Last time of the fit, in the time unit.
    #[arg(long)]
    horizon: Option<f64>,
    #[arg(long, default_value_t = 200)]
    reps: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimArgs {
    /// Scenario file.
    scenario: PathBuf,
    /// Directory for the output CSVs.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Override the number of replicates.
    #[arg(long)]
    reps: Option<usize>,
    /// Override the cohort size.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long)]
    copula: String,
    #[arg(long, default_value_t = 5000)]
    n: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Unit {
    Days,
    Years,
}

impl From<Unit> for TimeUnit {
    fn from(u: Unit) -> Self {
        match u {
            Unit::Days => TimeUnit::Days,
            Unit::Years => TimeUnit::Years,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum RateUnit {
    Hazard,
    Prob,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(k) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(k).build_global() {
            eprintln!("error: cannot set up {k} threads: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match cli.command {
        Command::Fit(a) => cmd_fit(a),
        Command::Test(a) => cmd_test(a),
        Command::Bootstrap(a) => cmd_bootstrap(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::SampleCopula(a) => cmd_sample(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numeric() { 3 } else { 2 })
        }
    }
}

fn open(path: &Path) -> Result<BufReader<File>, Error> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::Input(format!("{}: {e}", path.display())))
}

fn load_table(spec: &str, unit: RateUnit) -> Result<RateTable, Error> {
    if spec == "synthetic" {
        return Ok(synthetic_rate_table());
    }
    let unit = match unit {
        RateUnit::Hazard => TableUnit::Hazard,
        RateUnit::Prob => TableUnit::Prob,
    };
    load_rate_table(open(Path::new(spec))?, unit)
}

struct Loaded {
    time_unit: TimeUnit,
    cohort: Cohort,
    table: RateTable,
    copula: CopulaSpec,
}

impl Loaded {
    fn horizon(&self, given: Option<f64>) -> f64 {
        given.map_or_else(|| self.cohort.max_time(), |h| self.time_unit.to_years(h))
    }
}

fn load_inputs(i: &Inputs) -> Result<Loaded, Error> {
    let copula: CopulaSpec = i.copula.parse()?;
    let units = CohortUnits {
        time: i.time_unit.into(),
        age: i.age_unit.into(),
    };
    let cohort =
        load_cohort_csv(open(&i.cohort)?, units).map_err(|e| Error::Input(format!("{}: {e}", i.cohort.display())))?;
    let table = load_table(&i.rate_table, i.table_unit)?;
    Ok(Loaded {
        time_unit: units.time,
        cohort,
        table,
        copula,
    })
}

fn sink(out: &Option<PathBuf>) -> Result<Box<dyn Write>, Error> {
    Ok(match out {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn fit(l: &Loaded, mesh: &Mesh) -> Result<NetSurvivalFit, Error> {
    if l.copula.is_independence() {
        fit_pohar_perme(&l.cohort, &l.table, mesh)
    } else {
        fit_generalized(&l.cohort, &l.table, &l.copula, mesh, &SolverConfig::default())
    }
}

fn warn_fit(f: &NetSurvivalFit) {
    let d = &f.diagnostics;
    if let Some(t) = d.truncated_at {
        eprintln!("warning: nobody at risk after t = {t}; fit truncated");
    }
    if d.floor_hits > 0 {
        eprintln!("warning: coefficient floor hit {} times", d.floor_hits);
    }
    if d.clamped_segments > 0 {
        eprintln!(
            "warning: {} hazard segments read from the edge of the rate table",
            d.clamped_segments
        );
    }
}

fn cmd_fit(a: FitArgs) -> Result<(), Error> {
    let l = load_inputs(&a.inputs)?;
    let horizon = l.horizon(a.horizon);
    let mesh = Mesh::build(&l.cohort, horizon, a.inputs.step_days)?;
    let f = fit(&l, &mesh)?;
    warn_fit(&f);
    let mut w = sink(&a.out)?;
    match a.format {
        Format::Csv => write_fit_csv(&mut w, &f, Z_975)?,
        Format::Json => {
            let (lo, hi) = f.log_ci(Z_975);
            let sd: Vec<f64> = f.variance.iter().map(|v| v.sqrt()).collect();
            let doc = json!({
                "copula": l.copula.to_string(),
                "time": f.times,
                "cum_hazard": f.cum_hazard,
                "survival": f.survival,
                "std_err": sd,
                "ci_lower": lo,
                "ci_upper": hi,
                "diagnostics": {
                    "floor_hits": f.diagnostics.floor_hits,
                    "degenerate_support": f.diagnostics.degenerate_support,
                    "bisection_fallbacks": f.diagnostics.bisection_fallbacks,
                    "steps_above_one": f.diagnostics.steps_above_one,
                    "truncated_at": f.diagnostics.truncated_at,
                },
            });
            serde_json::to_writer_pretty(&mut w, &doc).map_err(io::Error::from)?;
            writeln!(w)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn cmd_test(a: TestArgs) -> Result<(), Error> {
    let l = load_inputs(&a.inputs)?;
    let horizons: Vec<f64> = a.horizon.iter().map(|&h| l.time_unit.to_years(h)).collect();
    let mesh = Mesh::build(
        &l.cohort,
        horizons.iter().copied().fold(0.0, f64::max),
        a.inputs.step_days,
    )?;
    let results = logrank_observable_at(&l.cohort, &l.table, &l.copula, &mesh, &horizons)?;
    let docs: Vec<Value> = results
        .iter()
        .map(|r| {
            let per_group: serde_json::Map<String, Value> = r
                .groups
                .iter()
                .zip(&r.events)
                .zip(&r.z)
                .map(|((g, e), z)| (g.clone(), json!({ "events": e, "Z": z })))
                .collect();
            json!({
                "statistic": r.statistic,
                "df": r.df,
                "p_value": r.p_value,
                "T": r.horizon,
                "per_group": per_group,
            })
        })
        .collect();
    let mut w = sink(&a.out)?;
    serde_json::to_writer_pretty(&mut w, &docs).map_err(io::Error::from)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn cmd_bootstrap(a: BootArgs) -> Result<(), Error> {
    let l = load_inputs(&a.inputs)?;
    let horizon = l.horizon(a.horizon);
    let mesh = Mesh::build(&l.cohort, horizon, a.inputs.step_days)?;
    let f = fit(&l, &mesh)?;
    warn_fit(&f);
    let boot = bootstrap_se(&l.cohort, &l.table, &l.copula, &mesh, a.reps, a.seed)?;
    if boot.failures > 0 {
        eprintln!("warning: {} of {} resample fits failed", boot.failures, a.reps);
    }
    let mut w = sink(&a.out)?;
    write_bootstrap_csv(&mut w, &f, &boot)?;
    w.flush()?;
    Ok(())
}

fn cmd_simulate(a: SimArgs) -> Result<(), Error> {
    let text = fs::read_to_string(&a.scenario).map_err(|e| Error::Input(format!("{}: {e}", a.scenario.display())))?;
    let mut cfg: ScenarioConfig = text
        .parse()
        .map_err(|e| Error::Input(format!("{}: {e}", a.scenario.display())))?;
    if let Some(r) = a.reps {
        cfg.reps = r;
    }
    if let Some(n) = a.n {
        cfg.design.n = n;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    let table = match &cfg.rate_table {
        Some(p) => {
            let base = a.scenario.parent().unwrap_or(Path::new("."));
            load_table(&base.join(p).to_string_lossy(), RateUnit::Hazard)?
        }
        None => synthetic_rate_table(),
    };
    fs::create_dir_all(&a.out)?;
    let stem = &cfg.name;
    let mut stdout = io::stdout().lock();
    match cfg.kind {
        StudyKind::Metrics => {
            let grid = run_metric_grid(&cfg, &table)?;
            write_metrics_csv(
                BufWriter::new(File::create(a.out.join(format!("{stem}-metrics.csv")))?),
                &grid.rows,
            )?;
            write_ratio_csv(
                BufWriter::new(File::create(a.out.join(format!("{stem}-ratios.csv")))?),
                &grid.curves,
            )?;
            writeln!(
                stdout,
                "{:<20} {:<20} {:>5} {:>9} {:>9} {:>7}",
                "true", "hypothesized", "t", "bias", "rmse", "ecr"
            )?;
            for r in &grid.rows {
                writeln!(
                    stdout,
                    "{:<20} {:<20} {:>5} {:>9.4} {:>9.4} {:>7.4}{}",
                    r.true_copula.to_string(),
                    r.hyp_copula.to_string(),
                    r.t,
                    r.bias,
                    r.rmse,
                    r.ecr,
                    if r.flagged { "  (failures)" } else { "" }
                )?;
            }
        }
        StudyKind::LogRank => {
            let grid = run_test_grid(&cfg, &table)?;
            write_rejection_csv(
                BufWriter::new(File::create(a.out.join(format!("{stem}-rejection.csv")))?),
                &grid.rows,
            )?;
            write_pvalue_csv(
                BufWriter::new(File::create(a.out.join(format!("{stem}-pvalues.csv")))?),
                &grid.p_values,
            )?;
            writeln!(
                stdout,
                "{:<20} {:<20} {:>5} {:>16}",
                "true", "hypothesized", "T", "rejection"
            )?;
            for r in &grid.rows {
                writeln!(
                    stdout,
                    "{:<20} {:<20} {:>5} {:>7.1} +/- {:<4.1}{}",
                    r.true_copula.to_string(),
                    r.hyp_copula.to_string(),
                    r.horizon,
                    100.0 * r.rate,
                    100.0 * r.ci_half_width,
                    if r.flagged { "  (failures)" } else { "" }
                )?;
            }
        }
    }
    Ok(())
}

fn cmd_sample(a: SampleArgs) -> Result<(), Error> {
    let copula: CopulaSpec = a.copula.parse()?;
    if a.n == 0 {
        return Err(Error::Input("n must be at least 1".into()));
    }
    let mut w = sink(&a.out)?;
    writeln!(w, "u,v")?;
    for p in sample_pairs(&copula, a.n, a.seed) {
        writeln!(w, "{},{}", fmt_num(p.u), fmt_num(p.v))?;
    }
    w.flush()?;
    Ok(())
}
