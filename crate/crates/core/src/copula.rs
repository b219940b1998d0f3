//! Bivariate Archimedean copulas.
//!
//! Every family is handled through its generator `phi`, so that
//! `C(u, v) = phi(phi_inv(u) + phi_inv(v))` and the partial derivatives follow
//! from the chain rule:
//!
//! ```text
//! C1(u, v) = phi'(s) / phi'(phi_inv(u)),   C2(u, v) = phi'(s) / phi'(phi_inv(v)),
//! s = phi_inv(u) + phi_inv(v).
//! ```
//!
//! Closed forms used per family:
//!
//! | family       | `phi(t)`                                  | `phi_inv(u)`                                  |
//! |--------------|-------------------------------------------|-----------------------------------------------|
//! | Independence | `exp(-t)`                                 | `-ln u`                                       |
//! | Clayton      | `max(1 + theta t, 0)^(-1/theta)`          | `(u^-theta - 1) / theta`                      |
//! | Gumbel       | `exp(-t^(1/theta))`                       | `(-ln u)^theta`                               |
//! | Frank        | `-ln(1 + exp(-t) K) / theta`, `K = expm1(-theta)` | `ln|K| - ln|expm1(-theta u)|`          |
//!
//! Frank quantities are evaluated through `expm1`/`log1p` and logarithms of
//! `|expm1|`, which keeps them finite for large `|theta|`.

use std::fmt;
use std::str::FromStr;

use rand::distributions::Open01;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::quadrature;

/// Largest `|theta|` accepted for the Frank family; `expm1(|theta|)` overflows beyond it.
pub const FRANK_THETA_MAX: f64 = 700.0;

/// Above this `|theta|` Frank terms go through the log-space generator.
const FRANK_DIRECT_MAX: f64 = 30.0;

/// Bisection tolerance on `v` in conditional-inversion sampling.
const SAMPLING_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Family {
    Independence,
    Clayton,
    Frank,
    Gumbel,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::Independence => "indep",
            Family::Clayton => "clayton",
            Family::Frank => "frank",
            Family::Gumbel => "gumbel",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A point of the unit square.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitPair {
    pub u: f64,
    pub v: f64,
}

impl UnitPair {
    pub fn new(u: f64, v: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&u) || !(0.0..=1.0).contains(&v) {
            return Err(Error::domain(format!("({u}, {v}) is outside the unit square")));
        }
        Ok(Self { u, v })
    }
}

/// Which argument a partial derivative is taken against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    First,
    Second,
}

/// A partial derivative together with a flag raised when the point lies
/// outside the copula's support (negative-dependence Clayton frontier).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Partial {
    pub value: f64,
    pub degenerate: bool,
}

/// An Archimedean family with its generator parameter.
///
/// `theta` and `tau` are kept consistent by construction; the independence
/// copula carries `theta = 0` and `tau = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CopulaSpec {
    family: Family,
    theta: f64,
    tau: f64,
    /// `expm1(-theta)`, used by Frank.
    k: f64,
}

impl CopulaSpec {
    pub fn independence() -> Self {
        Self {
            family: Family::Independence,
            theta: 0.0,
            tau: 0.0,
            k: 0.0,
        }
    }

    pub fn from_theta(family: Family, theta: f64) -> Result<Self> {
        if family == Family::Independence {
            return Ok(Self::independence());
        }
        let tau = theta_to_tau(family, theta)?;
        Ok(Self {
            family,
            theta,
            tau,
            k: (-theta).exp_m1(),
        })
    }

    pub fn from_tau(family: Family, tau: f64) -> Result<Self> {
        if family == Family::Independence {
            if tau != 0.0 {
                return Err(Error::domain("the independence copula has tau = 0"));
            }
            return Ok(Self::independence());
        }
        let theta = tau_to_theta(family, tau)?;
        Ok(Self {
            family,
            theta,
            tau,
            k: (-theta).exp_m1(),
        })
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn is_independence(&self) -> bool {
        self.family == Family::Independence
    }

    /// Generator inverse `phi_inv(u)`; `+inf` at `u = 0` except for the
    /// bounded Clayton generator with `theta < 0`.
    pub fn phi_inv(&self, u: f64) -> f64 {
        let th = self.theta;
        match self.family {
            Family::Independence => -u.ln(),
            Family::Clayton => (u.powf(-th) - 1.0) / th,
            Family::Gumbel => (-u.ln()).powf(th),
            Family::Frank => ln_abs_expm1(-th) - ln_abs_expm1(-th * u),
        }
    }

    /// Generator `phi(t)` for `t >= 0`.
    pub fn phi(&self, t: f64) -> f64 {
        let th = self.theta;
        match self.family {
            Family::Independence => (-t).exp(),
            Family::Clayton => {
                let base = 1.0 + th * t;
                if base <= 0.0 {
                    0.0
                } else {
                    base.powf(-1.0 / th)
                }
            }
            Family::Gumbel => (-t.powf(1.0 / th)).exp(),
            Family::Frank => -frank_w(th, t).ln_1p() / th,
        }
    }

    /// Generator derivative `phi'(t)` (non-positive).
    pub fn phi_deriv(&self, t: f64) -> f64 {
        let th = self.theta;
        match self.family {
            Family::Independence => -(-t).exp(),
            Family::Clayton => {
                let base = 1.0 + th * t;
                if base <= 0.0 {
                    0.0
                } else {
                    -base.powf(-1.0 / th - 1.0)
                }
            }
            Family::Gumbel => {
                if t == 0.0 {
                    return if th == 1.0 { -1.0 } else { f64::NEG_INFINITY };
                }
                let r = t.powf(1.0 / th);
                -r / (th * t) * (-r).exp()
            }
            Family::Frank => {
                let w = frank_w(th, t);
                w / (1.0 + w) / th
            }
        }
    }

    /// Precomputes the generator terms of one margin value, for repeated
    /// evaluations sharing that margin.
    pub fn prepare(&self, x: f64) -> Margin {
        if self.frank_direct() {
            return Margin {
                x,
                inv: f64::NAN,
                deriv: f64::NAN,
                aux: (-self.theta * x).exp_m1(),
            };
        }
        if self.family == Family::Clayton {
            return Margin {
                x,
                inv: f64::NAN,
                deriv: f64::NAN,
                aux: x.powf(-self.theta),
            };
        }
        let inv = self.phi_inv(x);
        // phi'(phi_inv(x)) in closed form per family, avoiding a round trip.
        let th = self.theta;
        let deriv = match self.family {
            Family::Independence => -x,
            Family::Clayton => unreachable!("clayton margins are prepared directly"),
            Family::Gumbel => self.phi_deriv(inv),
            Family::Frank => -(th * x).exp_m1() / th,
        };
        Margin {
            x,
            inv,
            deriv,
            aux: 0.0,
        }
    }

    /// `(C, C1, C2)` at a pair of prepared margins.
    ///
    /// Outside the Clayton support all three are zero.
    #[inline]
    pub fn eval_prepared(&self, a: &Margin, b: &Margin) -> (f64, f64, f64) {
        if self.family == Family::Independence {
            return (a.x * b.x, b.x, a.x);
        }
        if a.x == 0.0 || b.x == 0.0 {
            return (0.0, 0.0, 0.0);
        }
        if a.x == 1.0 && b.x == 1.0 {
            return (1.0, 1.0, 1.0);
        }
        if self.frank_direct() {
            // C = -ln(1 + e_u e_v / K) / theta with e_x = expm1(-theta x), K = e_1
            let k = self.k;
            let prod = a.aux * b.aux;
            let den = k + prod;
            let c = -(prod / k).ln_1p() / self.theta;
            let c1 = (a.aux + 1.0) * b.aux / den;
            let c2 = (b.aux + 1.0) * a.aux / den;
            return (c.clamp(0.0, a.x.min(b.x)), c1.clamp(0.0, 1.0), c2.clamp(0.0, 1.0));
        }
        if self.family == Family::Clayton {
            // C = s^(-1/theta) with s = u^-theta + v^-theta - 1, clamped at the support frontier
            let s = a.aux + b.aux - 1.0;
            if s <= 0.0 || s.is_infinite() {
                return (0.0, 0.0, 0.0);
            }
            let c = s.powf(-1.0 / self.theta);
            let c1 = c * a.aux / (s * a.x);
            let c2 = c * b.aux / (s * b.x);
            return (c.clamp(0.0, a.x.min(b.x)), c1.clamp(0.0, 1.0), c2.clamp(0.0, 1.0));
        }
        let s = a.inv + b.inv;
        let (phi, dphi) = self.phi_and_deriv(s);
        let c1 = ratio(dphi, a.deriv);
        let c2 = ratio(dphi, b.deriv);
        (phi.clamp(0.0, a.x.min(b.x)), c1.clamp(0.0, 1.0), c2.clamp(0.0, 1.0))
    }

    /// Frank with moderate `theta` is evaluated directly on `expm1` terms.
    #[inline]
    fn frank_direct(&self) -> bool {
        self.family == Family::Frank && self.theta.abs() <= FRANK_DIRECT_MAX
    }

    #[inline]
    fn phi_and_deriv(&self, t: f64) -> (f64, f64) {
        let th = self.theta;
        match self.family {
            Family::Independence => {
                let e = (-t).exp();
                (e, -e)
            }
            Family::Clayton => {
                let base = 1.0 + th * t;
                if base <= 0.0 {
                    (0.0, 0.0)
                } else {
                    let phi = base.powf(-1.0 / th);
                    (phi, -phi / base)
                }
            }
            Family::Gumbel => {
                let r = t.powf(1.0 / th);
                let phi = (-r).exp();
                let d = if t == 0.0 {
                    if th == 1.0 {
                        -1.0
                    } else {
                        f64::NEG_INFINITY
                    }
                } else {
                    -r / (th * t) * phi
                };
                (phi, d)
            }
            Family::Frank => {
                let w = frank_w(th, t);
                (-w.ln_1p() / th, w / (1.0 + w) / th)
            }
        }
    }

    /// Draws one pair by conditional inversion.
    pub fn sample_pair<R: Rng + ?Sized>(&self, rng: &mut R) -> UnitPair {
        let u: f64 = rng.sample(Open01);
        let w: f64 = rng.sample(Open01);
        UnitPair {
            u,
            v: self.conditional_quantile(u, w),
        }
    }

    /// Solves `C1(u, v) = w` for `v`, i.e. the `w`-quantile of `V | U = u`.
    ///
    /// Returns the upper end of the final bracket, which always lies in the
    /// copula's support.
    pub fn conditional_quantile(&self, u: f64, w: f64) -> f64 {
        if self.is_independence() {
            return w;
        }
        let mu = self.prepare(u);
        let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
        while hi - lo > SAMPLING_TOL {
            let mid = 0.5 * (lo + hi);
            let (_, c1, _) = self.eval_prepared(&mu, &self.prepare(mid));
            if c1 >= w {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        hi
    }
}

impl fmt::Display for CopulaSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.family {
            Family::Independence => f.write_str("indep"),
            fam => write!(f, "{}(tau={})", fam, self.tau),
        }
    }
}

impl FromStr for CopulaSpec {
    type Err = Error;

    /// Parses `indep`, `clayton(tau=-0.3)`, `frank(theta=5)`, ...
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        if s == "indep" || s == "independence" || s == "pi" {
            return Ok(Self::independence());
        }
        let bad = || Error::parse(format!("cannot parse copula spec {s:?}"));
        let open = s.find('(').ok_or_else(bad)?;
        if !s.ends_with(')') {
            return Err(bad());
        }
        let family = match s[..open].trim() {
            "clayton" => Family::Clayton,
            "frank" => Family::Frank,
            "gumbel" => Family::Gumbel,
            "indep" | "independence" => Family::Independence,
            _ => return Err(bad()),
        };
        let inner = &s[open + 1..s.len() - 1];
        let (key, value) = inner.split_once('=').ok_or_else(bad)?;
        let value: f64 = value.trim().parse().map_err(|_| bad())?;
        match key.trim() {
            "tau" => {
                if value == 0.0 && family != Family::Independence {
                    return Err(Error::degenerate("use indep for tau=0"));
                }
                Self::from_tau(family, value)
            }
            "theta" => Self::from_theta(family, value),
            _ => Err(bad()),
        }
    }
}

/// Generator terms of one margin: the value, `phi_inv(x)` and `phi'(phi_inv(x))`.
#[derive(Debug, Clone, Copy)]
pub struct Margin {
    pub x: f64,
    inv: f64,
    deriv: f64,
    aux: f64,
}

/// `C(u, v)`.
///
/// For Clayton with `theta < 0` the inner term `u^-theta + v^-theta - 1` is
/// clamped at zero.
pub fn copula_cdf(spec: &CopulaSpec, p: UnitPair) -> f64 {
    let UnitPair { u, v } = p;
    if u == 0.0 || v == 0.0 {
        return 0.0;
    }
    if u == 1.0 {
        return v;
    }
    if v == 1.0 {
        return u;
    }
    match spec.family {
        Family::Independence => u * v,
        Family::Clayton => {
            let th = spec.theta;
            let inner = (u.powf(-th) + v.powf(-th) - 1.0).max(0.0);
            if inner == 0.0 {
                0.0
            } else {
                inner.powf(-1.0 / th).min(u.min(v))
            }
        }
        _ => spec.eval_prepared(&spec.prepare(u), &spec.prepare(v)).0,
    }
}

/// `dC/du` or `dC/dv` in closed form.
///
/// Points outside the Clayton support return zero with `degenerate` set.
pub fn copula_partial(spec: &CopulaSpec, p: UnitPair, axis: Axis) -> Result<Partial> {
    let UnitPair { u, v } = p;
    if !(u > 0.0 && u <= 1.0 && v > 0.0 && v <= 1.0) {
        return Err(Error::domain(format!(
            "partial derivative requested at ({u}, {v}), outside (0,1]^2"
        )));
    }
    let (x, y) = match axis {
        Axis::First => (u, v),
        Axis::Second => (v, u),
    };
    if spec.family == Family::Clayton && spec.theta < 0.0 {
        let th = spec.theta;
        let inner = x.powf(-th) + y.powf(-th) - 1.0;
        if inner <= 0.0 {
            return Ok(Partial {
                value: 0.0,
                degenerate: true,
            });
        }
        // x^(-theta-1) (x^-theta + y^-theta - 1)^(-1/theta - 1)
        let value = x.powf(-th - 1.0) * inner.powf(-1.0 / th - 1.0);
        return Ok(Partial {
            value: value.clamp(0.0, 1.0),
            degenerate: false,
        });
    }
    let (_, c1, _) = spec.eval_prepared(&spec.prepare(x), &spec.prepare(y));
    Ok(Partial {
        value: c1,
        degenerate: false,
    })
}

/// Kendall's tau to generator parameter.
pub fn tau_to_theta(family: Family, tau: f64) -> Result<f64> {
    if tau == 0.0 {
        return match family {
            Family::Independence => Ok(0.0),
            _ => Err(Error::degenerate("use indep for tau=0")),
        };
    }
    if !(tau > -1.0 && tau < 1.0) {
        return Err(Error::domain(format!("tau = {tau} outside (-1, 1)")));
    }
    match family {
        Family::Independence => Err(Error::domain("the independence copula has tau = 0")),
        Family::Clayton => Ok(2.0 * tau / (1.0 - tau)),
        Family::Gumbel => {
            if tau < 0.0 {
                return Err(Error::domain("Gumbel requires tau >= 0"));
            }
            Ok(1.0 / (1.0 - tau))
        }
        Family::Frank => frank_theta_from_tau(tau),
    }
}

/// Generator parameter to Kendall's tau.
pub fn theta_to_tau(family: Family, theta: f64) -> Result<f64> {
    if !theta.is_finite() {
        return Err(Error::domain(format!("theta = {theta} is not finite")));
    }
    match family {
        Family::Independence => Ok(0.0),
        Family::Clayton => {
            if theta <= -1.0 || theta == 0.0 {
                return Err(Error::domain(format!(
                    "Clayton requires theta in (-1, 0) or (0, inf), got {theta}"
                )));
            }
            Ok(theta / (theta + 2.0))
        }
        Family::Gumbel => {
            if theta < 1.0 {
                return Err(Error::domain(format!("Gumbel requires theta >= 1, got {theta}")));
            }
            Ok(1.0 - 1.0 / theta)
        }
        Family::Frank => {
            if theta == 0.0 || theta.abs() > FRANK_THETA_MAX {
                return Err(Error::domain(format!(
                    "Frank requires 0 < |theta| <= {FRANK_THETA_MAX}, got {theta}"
                )));
            }
            Ok(frank_tau(theta))
        }
    }
}

/// `tau(theta) = 1 + 4 (D1(theta) - 1) / theta` with `D1` the first Debye function.
fn frank_tau(theta: f64) -> f64 {
    if theta.abs() < 1e-3 {
        // Series expansion; the closed form cancels catastrophically near 0.
        let t2 = theta * theta;
        return theta / 9.0 * (1.0 - t2 / 100.0 + t2 * t2 / 5880.0);
    }
    1.0 + 4.0 * (debye1(theta) - 1.0) / theta
}

/// First Debye function `D1(x) = (1/x) int_0^x t / (e^t - 1) dt`.
pub fn debye1(x: f64) -> f64 {
    if x == 0.0 {
        return 1.0;
    }
    let integral = quadrature::adaptive_gauss_legendre(|t| if t == 0.0 { 1.0 } else { t / t.exp_m1() }, 0.0, x, 1e-12);
    integral / x
}

fn frank_theta_from_tau(tau: f64) -> Result<f64> {
    let tau_max = frank_tau(FRANK_THETA_MAX);
    if tau.abs() > tau_max {
        return Err(Error::domain(format!(
            "Frank tau = {tau} exceeds the attainable |tau| <= {tau_max:.6}"
        )));
    }
    // tau(theta) is odd and increasing; search on (0, max] and mirror.
    let target = tau.abs();
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    while frank_tau(hi) < target {
        lo = hi;
        hi = (hi * 2.0).min(FRANK_THETA_MAX);
    }
    while hi - lo > 1e-15 * hi {
        let mid = 0.5 * (lo + hi);
        if frank_tau(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let theta = 0.5 * (lo + hi);
    Ok(theta.copysign(tau))
}

/// `exp(-t) * expm1(-theta)` computed in log space.
#[inline]
fn frank_w(theta: f64, t: f64) -> f64 {
    let k = (-theta).exp_m1();
    if theta > 0.0 || t.is_infinite() {
        (-t).exp() * k
    } else {
        (ln_abs_expm1(-theta) - t).exp()
    }
}

/// `ln |expm1(x)|`, finite for large positive `x`.
#[inline]
fn ln_abs_expm1(x: f64) -> f64 {
    if x > 30.0 {
        x + (-(-x).exp()).ln_1p()
    } else {
        x.exp_m1().abs().ln()
    }
}

#[inline]
fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 || !den.is_finite() {
        if num == 0.0 || den.is_infinite() {
            return 0.0;
        }
        return 1.0;
    }
    num / den
}

/// `n` i.i.d. pairs from `spec`, reproducible from `seed`.
pub fn sample_pairs(spec: &CopulaSpec, n: usize, seed: u64) -> Vec<UnitPair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| spec.sample_pair(&mut rng)).collect()
}
