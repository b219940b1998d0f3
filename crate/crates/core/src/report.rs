//! Plain-text output of fits.

use std::io::Write;

use crate::estimator::{BootstrapSe, NetSurvivalFit};

/// Scientific notation with 17 significant digits, which round-trips.
pub fn fmt_num(x: f64) -> String {
    if x.is_nan() {
        return "NaN".into();
    }
    if x == 0.0 || x.is_infinite() {
        return format!("{x}");
    }
    format!("{x:.16e}")
}

/// `time,cum_hazard,survival,std_err,ci_lower,ci_upper`, one row per fitted
/// point, with log-scale bounds `exp(-L -/+ z sigma)`.
pub fn write_fit_csv<W: Write>(mut w: W, fit: &NetSurvivalFit, z: f64) -> std::io::Result<()> {
    writeln!(w, "time,cum_hazard,survival,std_err,ci_lower,ci_upper")?;
    let (lo, hi) = fit.log_ci(z);
    for k in 0..fit.len() {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            fmt_num(fit.times[k]),
            fmt_num(fit.cum_hazard[k]),
            fmt_num(fit.survival[k]),
            fmt_num(fit.variance[k].sqrt()),
            fmt_num(lo[k]),
            fmt_num(hi[k])
        )?;
    }
    Ok(())
}

/// `time,cum_hazard,std_err,boot_std_err`, on the points of `fit`.
pub fn write_bootstrap_csv<W: Write>(mut w: W, fit: &NetSurvivalFit, boot: &BootstrapSe) -> std::io::Result<()> {
    writeln!(w, "time,cum_hazard,std_err,boot_std_err")?;
    for k in 0..fit.len() {
        writeln!(
            w,
            "{},{},{},{}",
            fmt_num(fit.times[k]),
            fmt_num(fit.cum_hazard[k]),
            fmt_num(fit.variance[k].sqrt()),
            fmt_num(boot.std_err[k])
        )?;
    }
    Ok(())
}
