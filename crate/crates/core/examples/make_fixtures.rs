//! Regenerates the sample data under `data/`.
//!
//! ```sh
//! cargo run -p netsurv --example make_fixtures -- data
//! ```

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use netsurv::cohort::Cohort;
use netsurv::copula::CopulaSpec;
use netsurv::lifetable::{synthetic_rate_table, DAYS_PER_YEAR};
use netsurv::simulation::{generate_cohort, CohortDesign, Hypothesis, TestScenario};

fn write_cohort(path: PathBuf, cohort: &Cohort, with_group: bool) -> std::io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "time,status,sex,age,diag_date")?;
    writeln!(w, "{}", if with_group { ",group" } else { "" })?;
    for r in cohort.records() {
        write!(
            w,
            "{:.3},{},{},{:.2},{:.4}",
            r.time * DAYS_PER_YEAR,
            u8::from(r.status),
            r.demo.sex,
            r.demo.age,
            r.demo.diagnosis_year
        )?;
        if with_group {
            write!(w, ",{}", r.group.as_deref().unwrap_or(""))?;
        }
        writeln!(w)?;
    }
    w.flush()
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "data".into()));
    let table = synthetic_rate_table();
    table.write_csv(BufWriter::new(File::create(dir.join("synthetic_rate_table.csv"))?))?;

    let frank: CopulaSpec = "frank(tau=0.3)".parse()?;
    let single = generate_cohort(&CohortDesign::single(200, 10.0), &frank, &table, 2024, 0)?;
    write_cohort(dir.join("cohort_small.csv"), &single.cohort, false)?;

    let design = CohortDesign::two_groups(400, TestScenario::SplitByAge, Hypothesis::H2);
    let groups = generate_cohort(&design, &frank, &table, 2024, 1)?;
    write_cohort(dir.join("cohort_two_groups.csv"), &groups.cohort, true)?;

    let half = generate_cohort(&CohortDesign::single(100, 10.0), &frank, &table, 2024, 2)?;
    let twice: Cohort = ["a", "b"]
        .iter()
        .flat_map(|g| half.cohort.records().iter().map(move |r| r.clone().with_group(*g)))
        .collect();
    write_cohort(dir.join("cohort_duplicated.csv"), &twice, true)?;
    Ok(())
}
