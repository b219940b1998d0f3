//! Population mortality: rate tables and per-individual hazard paths.
//!
//! A [`RateTable`] stores annual hazard rates on a sex x attained age x
//! calendar year grid. An individual's hazard, followed along the Lexis
//! diagonal from diagnosis, is piecewise constant and changes at every
//! birthday and every New Year; [`hazard_path`] materializes it as a
//! [`HazardPath`].

use std::fmt;
use std::io::BufRead;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Days per year used for every days/years conversion.
pub const DAYS_PER_YEAR: f64 = 365.241;

/// Breakpoints closer than this (in years) are merged.
const MERGE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Sex {
    Male,
    Female,
}

impl Sex {
    fn index(self) -> usize {
        match self {
            Sex::Male => 0,
            Sex::Female => 1,
        }
    }
}

impl FromStr for Sex {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "male" | "m" | "1" => Ok(Sex::Male),
            "female" | "f" | "2" => Ok(Sex::Female),
            other => Err(Error::parse(format!("unknown sex {other:?}"))),
        }
    }
}

impl fmt::Display for Sex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sex::Male => "male",
            Sex::Female => "female",
        })
    }
}

/// How the fourth CSV column is to be read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TableUnit {
    /// Annual hazard rates.
    #[default]
    Hazard,
    /// Annual death probabilities `q`, converted with `-ln(1 - q)`.
    Prob,
}

impl FromStr for TableUnit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hazard" => Ok(TableUnit::Hazard),
            "prob" => Ok(TableUnit::Prob),
            other => Err(Error::parse(format!("unknown table unit {other:?}"))),
        }
    }
}

/// Annual population hazard by sex, integer age and calendar year.
#[derive(Debug, Clone, PartialEq)]
pub struct RateTable {
    max_age: u32,
    first_year: i32,
    n_years: usize,
    // [sex][age][year], row-major
    hazard: Vec<f64>,
}

impl RateTable {
    /// Builds a table from a generator function. Both sexes are filled.
    pub fn from_fn<F>(max_age: u32, years: std::ops::RangeInclusive<i32>, mut f: F) -> Result<Self>
    where
        F: FnMut(Sex, u32, i32) -> f64,
    {
        let first_year = *years.start();
        let n_years = (years.end() - years.start() + 1).max(0) as usize;
        if n_years == 0 {
            return Err(Error::input("rate table needs at least one year"));
        }
        let mut hazard = Vec::with_capacity(2 * (max_age as usize + 1) * n_years);
        for sex in [Sex::Male, Sex::Female] {
            for age in 0..=max_age {
                for y in 0..n_years {
                    let h = f(sex, age, first_year + y as i32);
                    if !(h.is_finite() && h >= 0.0) {
                        return Err(Error::input(format!(
                            "invalid hazard {h} at ({sex}, {age}, {})",
                            first_year + y as i32
                        )));
                    }
                    hazard.push(h);
                }
            }
        }
        Ok(Self {
            max_age,
            first_year,
            n_years,
            hazard,
        })
    }

    /// A table with the same hazard everywhere.
    pub fn constant(rate: f64, max_age: u32, years: std::ops::RangeInclusive<i32>) -> Result<Self> {
        Self::from_fn(max_age, years, |_, _, _| rate)
    }

    pub fn max_age(&self) -> u32 {
        self.max_age
    }

    pub fn years(&self) -> std::ops::RangeInclusive<i32> {
        self.first_year..=self.first_year + self.n_years as i32 - 1
    }

    pub fn n_cells(&self) -> usize {
        self.hazard.len()
    }

    /// Hazard at a cell, with ages and years clamped to the table edges.
    /// The flag reports whether clamping happened.
    pub fn lookup(&self, sex: Sex, age: i64, year: i64) -> (f64, bool) {
        let last_year = self.first_year as i64 + self.n_years as i64 - 1;
        let a = age.clamp(0, self.max_age as i64);
        let y = year.clamp(self.first_year as i64, last_year);
        let clamped = a != age || y != year;
        let idx = (sex.index() * (self.max_age as usize + 1) + a as usize) * self.n_years
            + (y - self.first_year as i64) as usize;
        (self.hazard[idx], clamped)
    }

    /// Writes the table as long CSV (`sex,age,year,hazard`).
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "sex,age,year,hazard")?;
        for sex in [Sex::Male, Sex::Female] {
            for age in 0..=self.max_age {
                for year in self.years() {
                    let (h, _) = self.lookup(sex, age as i64, year as i64);
                    writeln!(w, "{sex},{age},{year},{h:e}")?;
                }
            }
        }
        Ok(())
    }
}

/// Reads a long-format CSV rate table with header `sex,age,year,hazard`.
///
/// Ages must cover `0..=max_age` and years a gap-free range, for both sexes,
/// each cell exactly once.
pub fn load_rate_table<R: BufRead>(source: R, unit: TableUnit) -> Result<RateTable> {
    let mut lines = source.lines().enumerate();
    let header = match lines.next() {
        Some((_, line)) => line?,
        None => return Err(Error::parse_at(1, "empty rate table")),
    };
    let cols: Vec<String> = header.split(',').map(|c| c.trim().to_ascii_lowercase()).collect();
    if cols.len() != 4 || cols[..3] != ["sex", "age", "year"] || !matches!(cols[3].as_str(), "hazard" | "prob") {
        return Err(Error::parse_at(
            1,
            format!("expected header \"sex,age,year,hazard\", got {header:?}"),
        ));
    }

    let mut cells: Vec<(Sex, u32, i32, f64, usize)> = Vec::new();
    for (i, line) in lines {
        let lineno = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 4 {
            return Err(Error::parse_at(
                lineno,
                format!("expected 4 fields, got {}", fields.len()),
            ));
        }
        let sex: Sex = fields[0]
            .parse()
            .map_err(|e: Error| Error::parse_at(lineno, e.to_string()))?;
        let age: u32 = fields[1]
            .parse()
            .map_err(|_| Error::parse_at(lineno, format!("bad age {:?}", fields[1])))?;
        let year: i32 = fields[2]
            .parse()
            .map_err(|_| Error::parse_at(lineno, format!("bad year {:?}", fields[2])))?;
        let value: f64 = fields[3]
            .parse()
            .map_err(|_| Error::parse_at(lineno, format!("bad value {:?}", fields[3])))?;
        if !value.is_finite() {
            return Err(Error::parse_at(lineno, format!("non-finite value at line {lineno}")));
        }
        if value < 0.0 {
            return Err(Error::parse_at(lineno, format!("negative hazard at line {lineno}")));
        }
        let hazard = match unit {
            TableUnit::Hazard => value,
            TableUnit::Prob => {
                if value >= 1.0 {
                    return Err(Error::parse_at(
                        lineno,
                        format!("death probability {value} must be below 1"),
                    ));
                }
                -(-value).ln_1p()
            }
        };
        cells.push((sex, age, year, hazard, lineno));
    }
    if cells.is_empty() {
        return Err(Error::parse("rate table has no rows"));
    }

    let max_age = cells.iter().map(|c| c.1).max().unwrap_or(0);
    let first_year = cells.iter().map(|c| c.2).min().unwrap_or(0);
    let last_year = cells.iter().map(|c| c.2).max().unwrap_or(0);
    let n_years = (last_year - first_year + 1) as usize;
    let n_ages = max_age as usize + 1;
    let mut grid = vec![f64::NAN; 2 * n_ages * n_years];
    for &(sex, age, year, h, lineno) in &cells {
        let idx = (sex.index() * n_ages + age as usize) * n_years + (year - first_year) as usize;
        if !grid[idx].is_nan() {
            return Err(Error::parse_at(
                lineno,
                format!("duplicate cell ({sex}, {age}, {year})"),
            ));
        }
        grid[idx] = h;
    }
    if let Some(pos) = grid.iter().position(|h| h.is_nan()) {
        let sex = if pos / (n_ages * n_years) == 0 {
            Sex::Male
        } else {
            Sex::Female
        };
        let age = (pos / n_years) % n_ages;
        let year = first_year + (pos % n_years) as i32;
        return Err(Error::parse(format!("missing cell ({sex}, {age}, {year})")));
    }
    Ok(RateTable {
        max_age,
        first_year,
        n_years,
        hazard: grid,
    })
}

/// Covariates that select a row of the rate table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Demographics {
    pub sex: Sex,
    /// Age at diagnosis, in years.
    pub age: f64,
    /// Diagnosis date as a fractional calendar year.
    pub diagnosis_year: f64,
}

/// Piecewise-constant population hazard on `[0, horizon]`, time measured
/// from diagnosis in years.
#[derive(Debug, Clone, PartialEq)]
pub struct HazardPath {
    /// `breakpoints[0] = 0`, last entry is the horizon.
    breakpoints: Vec<f64>,
    /// `rates[j]` applies on `[breakpoints[j], breakpoints[j + 1])`.
    rates: Vec<f64>,
    /// Cumulative hazard at each breakpoint.
    cumulative: Vec<f64>,
    clamped_segments: usize,
}

impl HazardPath {
    /// Builds a path from segment boundaries (starting at 0) and rates.
    pub fn from_segments(breakpoints: Vec<f64>, rates: Vec<f64>) -> Result<Self> {
        if breakpoints.len() != rates.len() + 1 || rates.is_empty() {
            return Err(Error::input("need one more breakpoint than rates"));
        }
        if breakpoints[0] != 0.0 || breakpoints.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::input("breakpoints must start at 0 and increase"));
        }
        if rates.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
            return Err(Error::input("rates must be finite and non-negative"));
        }
        let mut cumulative = Vec::with_capacity(breakpoints.len());
        cumulative.push(0.0);
        for (j, r) in rates.iter().enumerate() {
            let prev = cumulative[j];
            cumulative.push(prev + r * (breakpoints[j + 1] - breakpoints[j]));
        }
        Ok(Self {
            breakpoints,
            rates,
            cumulative,
            clamped_segments: 0,
        })
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    pub fn horizon(&self) -> f64 {
        *self.breakpoints.last().expect("non-empty path")
    }

    /// Number of segments whose rate was read from a clamped table cell.
    pub fn clamped_segments(&self) -> usize {
        self.clamped_segments
    }

    /// Index of the segment containing `t` (right-continuous).
    #[inline]
    pub fn segment(&self, t: f64) -> usize {
        let j = self.breakpoints.partition_point(|&b| b <= t);
        j.saturating_sub(1).min(self.rates.len() - 1)
    }

    #[inline]
    pub(crate) fn cumulative_in(&self, seg: usize, t: f64) -> f64 {
        self.cumulative[seg] + self.rates[seg] * (t - self.breakpoints[seg])
    }

    #[inline]
    pub(crate) fn rate_in(&self, seg: usize) -> f64 {
        self.rates[seg]
    }

    /// Advances a segment cursor so that it contains `t`, for monotone scans.
    #[inline]
    pub(crate) fn advance(&self, mut seg: usize, t: f64) -> usize {
        let last = self.rates.len() - 1;
        while seg < last && self.breakpoints[seg + 1] <= t {
            seg += 1;
        }
        seg
    }

    pub fn cumulative_hazard(&self, t: f64) -> Result<f64> {
        self.check_range(t)?;
        Ok(self.cumulative_in(self.segment(t), t))
    }

    /// Hazard rate at `t` (right-continuous at breakpoints).
    pub fn rate(&self, t: f64) -> Result<f64> {
        self.check_range(t)?;
        Ok(self.rates[self.segment(t)])
    }

    fn check_range(&self, t: f64) -> Result<()> {
        let h = self.horizon();
        if !(t >= 0.0 && t <= h * (1.0 + 1e-12) + 1e-12) {
            return Err(Error::domain(format!("t = {t} outside [0, {h}]")));
        }
        Ok(())
    }
}

/// The hazard an individual experiences from diagnosis up to `horizon`
/// years, walking age and calendar time together.
///
/// Segments change at each birthday and each New Year; a birthday that falls
/// on New Year produces a single breakpoint. Cells beyond the table are
/// clamped to the nearest edge and counted in
/// [`HazardPath::clamped_segments`].
pub fn hazard_path(table: &RateTable, demo: &Demographics, horizon: f64) -> Result<HazardPath> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::domain(format!("horizon must be positive, got {horizon}")));
    }
    if !(demo.age >= 0.0 && demo.age.is_finite() && demo.diagnosis_year.is_finite()) {
        return Err(Error::input(format!("invalid demographics {demo:?}")));
    }
    let mut age_idx = demo.age.floor() as i64;
    let mut year_idx = demo.diagnosis_year.floor() as i64;
    let mut next_birthday = (age_idx + 1) as f64 - demo.age;
    let mut next_new_year = (year_idx + 1) as f64 - demo.diagnosis_year;

    let mut breakpoints = vec![0.0];
    let mut rates = Vec::new();
    let mut clamped_segments = 0;
    let mut t = 0.0;
    while t < horizon {
        let (rate, clamped) = table.lookup(demo.sex, age_idx, year_idx);
        clamped_segments += clamped as usize;
        let next = next_birthday.min(next_new_year);
        let end = if next >= horizon - MERGE_TOL { horizon } else { next };
        rates.push(rate);
        breakpoints.push(end);
        t = end;
        if (next_birthday - end).abs() <= MERGE_TOL {
            age_idx += 1;
            next_birthday += 1.0;
        }
        if (next_new_year - end).abs() <= MERGE_TOL {
            year_idx += 1;
            next_new_year += 1.0;
        }
    }
    let mut path = HazardPath::from_segments(breakpoints, rates)?;
    path.clamped_segments = clamped_segments;
    Ok(path)
}

/// `S_P(t) = exp(-int_0^t lambda_P)`, exact for the piecewise-constant path.
pub fn population_survival(path: &HazardPath, t: f64) -> Result<f64> {
    Ok((-path.cumulative_hazard(t)?).exp())
}

/// `lambda_P(t) S_P(t)`, the density of the population death time at `t`.
pub fn population_density_increment(path: &HazardPath, t: f64) -> Result<f64> {
    let seg = {
        path.check_range(t)?;
        path.segment(t)
    };
    Ok(path.rate_in(seg) * (-path.cumulative_in(seg, t)).exp())
}

/// The time `t` with `S_P(t) = u`.
///
/// When the path never accumulates `-ln u` of hazard, the individual
/// outlives the horizon and `horizon + 1` is returned.
pub fn sample_population_time(path: &HazardPath, u: f64) -> Result<f64> {
    if !(u > 0.0 && u < 1.0) {
        return Err(Error::domain(format!("u = {u} outside (0, 1)")));
    }
    let target = -u.ln();
    let total = *path.cumulative.last().expect("non-empty path");
    if total < target {
        return Ok(path.horizon() + 1.0);
    }
    // First breakpoint whose cumulative hazard reaches the target.
    let j = path.cumulative.partition_point(|&c| c < target);
    let seg = j.saturating_sub(1);
    let rate = path.rates[seg];
    if rate == 0.0 {
        return Ok(path.breakpoints[j]);
    }
    let t = path.breakpoints[seg] + (target - path.cumulative[seg]) / rate;
    Ok(t.min(path.breakpoints[seg + 1]))
}

/// A smooth stand-in for a national life table: Gompertz-Makeham hazards
/// with a male excess and a secular decline, ages `0..=110`, years
/// `1970..=2030`.
pub fn synthetic_rate_table() -> RateTable {
    RateTable::from_fn(110, 1970..=2030, |sex, age, year| {
        let level = match sex {
            Sex::Male => 0.020,
            Sex::Female => 0.011,
        };
        let trend = (-0.015 * (year - 2000) as f64).exp();
        let h = 2e-4 + level * (0.095 * (age as f64 - 65.0)).exp() * trend;
        h.min(4.0)
    })
    .expect("synthetic table is valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn demo(age: f64, year: f64) -> Demographics {
        Demographics {
            sex: Sex::Female,
            age,
            diagnosis_year: year,
        }
    }

    #[test]
    fn fixture_cardinality() {
        let mut csv = String::from("sex,age,year,hazard\n");
        for sex in ["male", "female"] {
            for age in 0..=110 {
                for year in 1980..=2020 {
                    csv.push_str(&format!("{sex},{age},{year},0.01\n"));
                }
            }
        }
        let t = load_rate_table(csv.as_bytes(), TableUnit::Hazard).unwrap();
        assert_eq!(t.n_cells(), 2 * 111 * 41);
        assert_eq!(t.years(), 1980..=2020);
    }

    #[test]
    fn negative_hazard_reports_line() {
        let csv = "sex,age,year,hazard\nmale,40,1995,0.1\nmale,40,1995,-0.1\n";
        let err = load_rate_table(csv.as_bytes(), TableUnit::Hazard).unwrap_err();
        assert!(err.to_string().contains("negative hazard at line 3"), "{err}");
    }

    #[test]
    fn duplicate_and_missing_cells() {
        let dup = "sex,age,year,hazard\nmale,0,2000,0.1\nfemale,0,2000,0.1\nmale,0,2000,0.1\n";
        let err = load_rate_table(dup.as_bytes(), TableUnit::Hazard).unwrap_err();
        assert!(err.to_string().contains("duplicate"), "{err}");
        let missing = "sex,age,year,hazard\nmale,0,2000,0.1\nmale,1,2000,0.1\nfemale,0,2000,0.1\n";
        let err = load_rate_table(missing.as_bytes(), TableUnit::Hazard).unwrap_err();
        assert!(err.to_string().contains("missing cell (female, 1, 2000)"), "{err}");
    }

    #[test]
    fn malformed_rows() {
        let bad = "sex,age,year,hazard\nmale,0,2000\n";
        assert!(matches!(
            load_rate_table(bad.as_bytes(), TableUnit::Hazard),
            Err(Error::ParseAt { line: 2, .. })
        ));
        let bad = "age,sex,year,hazard\n";
        assert!(load_rate_table(bad.as_bytes(), TableUnit::Hazard).is_err());
        let bad = "sex,age,year,hazard\nalien,0,2000,0.1\n";
        assert!(load_rate_table(bad.as_bytes(), TableUnit::Hazard).is_err());
    }

    #[test]
    fn probabilities_convert_to_hazards() {
        let csv = "sex,age,year,prob\nmale,0,2000,0.5\nfemale,0,2000,0.0\n";
        let t = load_rate_table(csv.as_bytes(), TableUnit::Prob).unwrap();
        assert_relative_eq!(t.lookup(Sex::Male, 0, 2000).0, 2f64.ln());
        assert_eq!(t.lookup(Sex::Female, 0, 2000).0, 0.0);
    }

    #[test]
    fn constant_table_lookups_and_clamping() {
        let t = RateTable::constant(0.2, 100, 1990..=2000).unwrap();
        assert_eq!(t.lookup(Sex::Male, 40, 1995), (0.2, false));
        assert_eq!(t.lookup(Sex::Female, 140, 2030), (0.2, true));
        let p = hazard_path(&t, &demo(50.3, 1995.2), 15.0).unwrap();
        assert!(p.rates().iter().all(|&r| r == 0.2));
        assert!(p.clamped_segments() > 0);
        assert_relative_eq!(population_survival(&p, 1.0).unwrap(), (-0.2f64).exp(), epsilon = 1e-14);
    }

    #[test]
    fn coincident_birthday_and_new_year_merge() {
        let t = RateTable::constant(0.2, 100, 1990..=2010).unwrap();
        let p = hazard_path(&t, &demo(64.5, 1999.5), 1.0).unwrap();
        assert_eq!(p.breakpoints(), &[0.0, 0.5, 1.0]);
    }

    #[test]
    fn lexis_walk_interleaves_crossings() {
        let t = RateTable::from_fn(100, 1990..=2010, |_, age, year| {
            age as f64 * 0.001 + (year - 1990) as f64 * 0.0001
        })
        .unwrap();
        // Birthday at 0.25, New Year at 0.75, next birthday at 1.25.
        let p = hazard_path(&t, &demo(60.75, 1999.25), 1.5).unwrap();
        let bp = p.breakpoints();
        assert_eq!(bp.len(), 5);
        assert_relative_eq!(bp[1], 0.25, epsilon = 1e-12);
        assert_relative_eq!(bp[2], 0.75, epsilon = 1e-12);
        assert_relative_eq!(bp[3], 1.25, epsilon = 1e-12);
        assert_relative_eq!(p.rates()[0], 0.060 + 0.0009, epsilon = 1e-15);
        assert_relative_eq!(p.rates()[1], 0.061 + 0.0009, epsilon = 1e-15);
        assert_relative_eq!(p.rates()[2], 0.061 + 0.0010, epsilon = 1e-15);
        assert_relative_eq!(p.rates()[3], 0.062 + 0.0010, epsilon = 1e-15);
    }

    #[test]
    fn survival_and_density_values() {
        let p = HazardPath::from_segments(vec![0.0, 20.0], vec![0.2]).unwrap();
        assert_eq!(population_survival(&p, 0.0).unwrap(), 1.0);
        assert_relative_eq!(population_survival(&p, 5.0).unwrap(), (-1f64).exp(), epsilon = 1e-15);
        assert_eq!(population_density_increment(&p, 0.0).unwrap(), 0.2);
        assert_relative_eq!(
            population_density_increment(&p, 5.0).unwrap(),
            0.2 * (-1f64).exp(),
            epsilon = 1e-15
        );
        assert!(population_survival(&p, 21.0).is_err());

        let two = HazardPath::from_segments(vec![0.0, 1.0, 2.0], vec![0.1, 0.3]).unwrap();
        assert_relative_eq!(
            population_survival(&two, 2.0).unwrap(),
            (-0.4f64).exp(),
            epsilon = 1e-15
        );

        let zero = HazardPath::from_segments(vec![0.0, 10.0], vec![0.0]).unwrap();
        assert_eq!(population_density_increment(&zero, 3.0).unwrap(), 0.0);
    }

    #[test]
    fn inversion_values() {
        let p = HazardPath::from_segments(vec![0.0, 20.0], vec![0.2]).unwrap();
        assert_relative_eq!(sample_population_time(&p, (-1f64).exp()).unwrap(), 5.0, epsilon = 1e-12);
        assert!(sample_population_time(&p, 1.0 - 1e-15).unwrap() < 1e-12);
        assert!(sample_population_time(&p, 0.0).is_err());
        assert!(sample_population_time(&p, 1.0).is_err());
        // Total hazard 4 < -ln(1e-3): the individual outlives the horizon.
        assert_eq!(sample_population_time(&p, 1e-3).unwrap(), 21.0);

        let two = HazardPath::from_segments(vec![0.0, 1.0, 2.0], vec![0.1, 0.3]).unwrap();
        assert_relative_eq!(
            sample_population_time(&two, (-0.4f64).exp()).unwrap(),
            2.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn synthetic_table_is_plausible() {
        let t = synthetic_rate_table();
        let m65 = t.lookup(Sex::Male, 65, 2000).0;
        let f65 = t.lookup(Sex::Female, 65, 2000).0;
        assert!(m65 > f65 && m65 > 0.01 && m65 < 0.05);
        assert!(t.lookup(Sex::Male, 30, 2000).0 < 0.003);
    }
}
