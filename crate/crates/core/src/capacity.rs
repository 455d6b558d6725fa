//! Diagonal strips, cutoff functions and capacity estimates.
//!
//! Every cutoff in the catalog is radial, `h(x, y) = g(|x - y|)`, so the
//! integrals over `nu x nu` reduce to expectations of a function of the
//! distance `rho = |x - y|`. Monte Carlo estimates draw `x ~ nu` and then
//! `rho` from a mixture adapted to the scales of the cutoff (uniform in the
//! ball where `h = 1`, log-uniform across the transition layer), which keeps
//! the estimator unbiased with small variance even for tiny `eps`.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::stream;
use crate::sampling::BaseLaw;
use crate::stats::{ls_slope, Estimate};

/// Slope of the log cutoff profile on its plateau.
const LOG_PLATEAU: f64 = 4.0 / 3.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum CutoffFunction {
    /// `eta((log r - log eps) / (log R - log eps))`: 1 below `eps`, 0 above `R`.
    Log { eps: f64, r_outer: f64 },
    /// Indicator of `{r < 2 eps}` smoothed radially at scale `eps / 2`:
    /// 1 below `1.5 eps`, 0 above `2.5 eps`.
    Mollified { eps: f64 },
    /// `exp(-r^2 / (2 sigma^2))`
    Gaussian { sigma: f64 },
    /// `h = 1`
    Constant,
}

/// `h(x, y)` with its partial gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct CutoffEval {
    pub value: f64,
    pub grad_x: Vec<f64>,
    pub grad_y: Vec<f64>,
}

impl CutoffEval {
    /// Norm of the full gradient in `R^{2d}`.
    pub fn grad_norm(&self) -> f64 {
        self.grad_x
            .iter()
            .chain(&self.grad_y)
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }
}

/// Profile of the log cutoff: `eta(0) = 1`, `eta(1) = 0`, `C^1`, with `|eta'|`
/// rising linearly to 4/3 on `[0, 1/4]`, flat on `[1/4, 3/4]` and falling
/// back to 0 on `[3/4, 1]`.
pub fn eta(t: f64) -> (f64, f64) {
    let m = LOG_PLATEAU;
    if t <= 0.0 {
        (1.0, 0.0)
    } else if t < 0.25 {
        (1.0 - 2.0 * m * t * t, -4.0 * m * t)
    } else if t <= 0.75 {
        (1.0 - m * (t - 0.125), -m)
    } else if t < 1.0 {
        let s = 1.0 - t;
        (2.0 * m * s * s, -4.0 * m * s)
    } else {
        (0.0, 0.0)
    }
}

// CDF of the density (15/16)(1 - v^2)^2 on [-1, 1].
fn mollifier_cdf(u: f64) -> (f64, f64) {
    if u <= -1.0 {
        (0.0, 0.0)
    } else if u >= 1.0 {
        (1.0, 0.0)
    } else {
        let c = 15.0 / 16.0;
        (
            c * (u - 2.0 * u.powi(3) / 3.0 + u.powi(5) / 5.0) + 0.5,
            c * (1.0 - u * u).powi(2),
        )
    }
}

impl CutoffFunction {
    pub fn log(eps: f64, r_outer: f64) -> Result<Self> {
        if !(eps > 0.0 && r_outer > eps && r_outer.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "log cutoff needs 0 < eps < R (eps = {eps}, R = {r_outer})"
            )));
        }
        Ok(CutoffFunction::Log { eps, r_outer })
    }

    /// Log cutoff with `R = sqrt(eps)`.
    pub fn log_sqrt(eps: f64) -> Result<Self> {
        Self::log(eps, eps.sqrt())
    }

    pub fn mollified(eps: f64) -> Result<Self> {
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "mollified cutoff needs eps > 0 (eps = {eps})"
            )));
        }
        Ok(CutoffFunction::Mollified { eps })
    }

    pub fn gaussian(sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "gaussian cutoff needs sigma > 0 (sigma = {sigma})"
            )));
        }
        Ok(CutoffFunction::Gaussian { sigma })
    }

    pub fn constant() -> Self {
        CutoffFunction::Constant
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            CutoffFunction::Log { eps, r_outer } => Self::log(eps, r_outer).map(|_| ()),
            CutoffFunction::Mollified { eps } => Self::mollified(eps).map(|_| ()),
            CutoffFunction::Gaussian { sigma } => Self::gaussian(sigma).map(|_| ()),
            CutoffFunction::Constant => Ok(()),
        }
    }

    /// `(g(r), g'(r))` for the radial profile.
    pub fn radial(&self, r: f64) -> (f64, f64) {
        match *self {
            CutoffFunction::Log { eps, r_outer } => {
                if r <= eps {
                    (1.0, 0.0)
                } else if r >= r_outer {
                    (0.0, 0.0)
                } else {
                    let l = (r_outer / eps).ln();
                    let (v, dv) = eta((r / eps).ln() / l);
                    (v, dv / (r * l))
                }
            }
            CutoffFunction::Mollified { eps } => {
                let delta = 0.5 * eps;
                let (v, dv) = mollifier_cdf((2.0 * eps - r) / delta);
                (v, -dv / delta)
            }
            CutoffFunction::Gaussian { sigma } => {
                let v = (-r * r / (2.0 * sigma * sigma)).exp();
                (v, -v * r / (sigma * sigma))
            }
            CutoffFunction::Constant => (1.0, 0.0),
        }
    }

    /// `(r_in, r_out)`: `h = 1` for `r <= r_in` and `h = 0` for `r >= r_out`.
    pub fn radii(&self) -> Option<(f64, f64)> {
        match *self {
            CutoffFunction::Log { eps, r_outer } => Some((eps, r_outer)),
            CutoffFunction::Mollified { eps } => Some((1.5 * eps, 2.5 * eps)),
            _ => None,
        }
    }

    /// Radii where the profile is not smooth enough for finite differences.
    pub fn kinks(&self) -> Vec<f64> {
        match *self {
            CutoffFunction::Log { eps, r_outer } => {
                let q = r_outer / eps;
                vec![eps, eps * q.powf(0.25), eps * q.powf(0.75), r_outer]
            }
            CutoffFunction::Mollified { eps } => vec![1.5 * eps, 2.5 * eps],
            _ => Vec::new(),
        }
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> CutoffEval {
        let diff: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
        let r = diff.iter().map(|v| v * v).sum::<f64>().sqrt();
        let (value, dg) = self.radial(r);
        let grad_x: Vec<f64> = if r > 0.0 && dg != 0.0 {
            diff.iter().map(|v| dg * v / r).collect()
        } else {
            vec![0.0; x.len()]
        };
        let grad_y = grad_x.iter().map(|g| -g).collect();
        CutoffEval { value, grad_x, grad_y }
    }

    /// `|h|^r + |grad h|^r` as a function of the distance.
    pub fn capacity_integrand(&self, rho: f64, r: f64) -> f64 {
        let (g, dg) = self.radial(rho);
        g.abs().powf(r) + (std::f64::consts::SQRT_2 * dg.abs()).powf(r)
    }
}

pub fn eval_cutoff(h: &CutoffFunction, x: &[f64], y: &[f64]) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    h.validate()?;
    let e = h.eval(x, y);
    Ok((e.value, e.grad_x, e.grad_y))
}

/// How to evaluate an integral against `nu x nu`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum Method {
    MonteCarlo {
        n: usize,
        seed: u64,
    },
    /// Composite Gauss-Legendre in the distance variable with `m` nodes per
    /// panel; available when the distance law is one-dimensional in closed
    /// form (intervals, the circle and the sphere).
    Grid {
        m: usize,
    },
}

/// Volume of the unit ball in `R^d`.
pub fn unit_ball_volume(d: usize) -> f64 {
    match d {
        0 => 1.0,
        1 => 2.0,
        _ => unit_ball_volume(d - 2) * 2.0 * std::f64::consts::PI / d as f64,
    }
}

fn random_direction<R: Rng>(rng: &mut R, d: usize) -> Vec<f64> {
    loop {
        let z: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        let n = z.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 1e-12 {
            return z.into_iter().map(|v| v / n).collect();
        }
    }
}

/// Density of the chord length between two independent uniform points.
fn chord_density(base: &BaseLaw, rho: f64) -> f64 {
    match base {
        BaseLaw::UniformCircle if rho < 2.0 => 2.0 / (std::f64::consts::PI * (4.0 - rho * rho).sqrt()),
        BaseLaw::UniformSphere if rho < 2.0 => rho / 2.0,
        _ => 0.0,
    }
}

fn is_chord_law(base: &BaseLaw) -> bool {
    matches!(base, BaseLaw::UniformCircle | BaseLaw::UniformSphere)
}

/// `E[G(|x - y|)]` for `x, y ~ nu` independent, by radial importance sampling.
///
/// `G` is assumed to vanish beyond `r_out`; `r_in` marks the inner scale.
fn radial_mc<G>(base: &BaseLaw, g: G, r_in: f64, r_out: f64, n: usize, seed: u64) -> Result<Estimate>
where
    G: Fn(f64) -> f64 + Sync,
{
    if n < 2 {
        return Err(Error::InvalidParameter(
            "at least 2 Monte Carlo samples are required".into(),
        ));
    }
    let chord = is_chord_law(base);
    let (r_in, r_out) = if chord {
        (r_in.min(2.0), r_out.min(2.0))
    } else {
        (r_in, r_out)
    };
    // Power of rho matching the small-distance density of the law.
    let k = match base {
        BaseLaw::UniformCircle => 1,
        BaseLaw::UniformSphere => 2,
        b => b.dim(),
    };
    let d = base.dim();
    let sphere_area = d as f64 * unit_ball_volume(d);
    let has_outer = r_out > r_in * (1.0 + 1e-12);
    let p_in = if has_outer { 0.5 } else { 1.0 };
    let log_ratio = if has_outer { (r_out / r_in).ln() } else { 1.0 };
    let q = |rho: f64| {
        let mut v = 0.0;
        if rho < r_in {
            v += p_in * k as f64 * rho.powi(k as i32 - 1) / r_in.powi(k as i32);
        } else if has_outer && rho < r_out {
            v += (1.0 - p_in) / (rho * log_ratio);
        }
        v
    };
    let samples: Vec<f64> = (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(seed, "radial-mc", i);
            let u: f64 = rng.random();
            let inner = !has_outer || rng.random::<f64>() < p_in;
            let rho = if inner {
                r_in * u.powf(1.0 / k as f64)
            } else {
                r_in * (r_out / r_in).powf(u)
            };
            let qr = q(rho);
            if !(qr > 0.0) || !(rho > 0.0) {
                return 0.0;
            }
            let gv = g(rho);
            if gv == 0.0 {
                return 0.0;
            }
            if chord {
                gv * chord_density(base, rho) / qr
            } else {
                let x = base.sample(&mut rng);
                let dir = random_direction(&mut rng, d);
                let y: Vec<f64> = x.iter().zip(&dir).map(|(a, b)| a + rho * b).collect();
                let fy = base.density(&y).unwrap_or(0.0);
                gv * fy * sphere_area * rho.powi(d as i32 - 1) / qr
            }
        })
        .collect();
    Ok(Estimate::from_samples(&samples))
}

/// `E[G(|x - y|)]` by plain pair sampling.
fn pair_mc<G>(base: &BaseLaw, g: G, n: usize, seed: u64) -> Result<Estimate>
where
    G: Fn(f64) -> f64 + Sync,
{
    if n < 2 {
        return Err(Error::InvalidParameter(
            "at least 2 Monte Carlo samples are required".into(),
        ));
    }
    let samples: Vec<f64> = (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(seed, "pair-mc", i);
            let x = base.sample(&mut rng);
            let y = base.sample(&mut rng);
            g(crate::measures::euclidean(&x, &y))
        })
        .collect();
    Ok(Estimate::from_samples(&samples))
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 1 { z } else { p1 };
            let pm = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (z * pn - pm) / (z * z - 1.0);
            let dz = pn / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

/// `int_a^b f` by composite Gauss-Legendre over the given breakpoints,
/// with log-spaced panels on subintervals away from zero.
fn composite<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, breaks: &[f64], m: usize) -> f64 {
    let (gx, gw) = gauss_legendre(m);
    let mut pts: Vec<f64> = vec![a, b];
    pts.extend(breaks.iter().copied().filter(|&t| t > a && t < b));
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    let mut panels = Vec::new();
    for w in pts.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        if lo > 0.0 && hi / lo > 2.0 {
            let k = (hi / lo).log2().ceil() as usize;
            for j in 0..k {
                panels.push((
                    lo * (hi / lo).powf(j as f64 / k as f64),
                    lo * (hi / lo).powf((j + 1) as f64 / k as f64),
                ));
            }
        } else {
            panels.push((lo, hi));
        }
    }
    let mut total = 0.0;
    for (lo, hi) in panels {
        let (c, h) = (0.5 * (lo + hi), 0.5 * (hi - lo));
        total += h * gx.iter().zip(&gw).map(|(x, w)| w * f(c + h * x)).sum::<f64>();
    }
    total
}

/// `E[G(|x - y|)]` by quadrature over the exact distance law.
fn radial_grid<G: Fn(f64) -> f64>(base: &BaseLaw, g: G, breaks: &[f64], m: usize) -> Result<f64> {
    if m < 2 {
        return Err(Error::InvalidParameter(
            "grid method needs at least 2 nodes per panel".into(),
        ));
    }
    match base {
        BaseLaw::UniformBox { lower, upper } if lower.len() == 1 => {
            let l = upper[0] - lower[0];
            Ok(composite(|r| g(r) * 2.0 * (l - r) / (l * l), 0.0, l, breaks, m))
        }
        BaseLaw::Gaussian { cov, .. } if cov.len() == 1 => {
            let s = (2.0 * cov[0][0]).sqrt();
            let dens = |r: f64| 2.0 * (-0.5 * (r / s).powi(2)).exp() / (s * (2.0 * std::f64::consts::PI).sqrt());
            Ok(composite(|r| g(r) * dens(r), 0.0, 40.0 * s, breaks, m))
        }
        BaseLaw::UniformCircle => {
            let tb: Vec<f64> = breaks
                .iter()
                .filter(|&&r| r < 2.0)
                .map(|r| 2.0 * (r / 2.0).asin())
                .collect();
            Ok(composite(
                |t| g(2.0 * (t / 2.0).sin()) / std::f64::consts::PI,
                0.0,
                std::f64::consts::PI,
                &tb,
                m,
            ))
        }
        BaseLaw::UniformSphere => Ok(composite(|r| g(r) * r / 2.0, 0.0, 2.0, breaks, m)),
        _ => Err(Error::InvalidParameter(
            "the grid method needs a one-dimensional distance law (d = 1, circle or sphere)".into(),
        )),
    }
}

/// `nu x nu({|x - y| < eps})`.
pub fn strip_mass(base: &BaseLaw, eps: f64, method: Method) -> Result<Estimate> {
    base.validate()?;
    if !(eps > 0.0) {
        return Err(Error::InvalidParameter(format!("eps = {eps} must be positive")));
    }
    if eps >= base.diameter() {
        return Ok(Estimate::exact(1.0));
    }
    let g = |r: f64| f64::from(r < eps);
    match method {
        Method::Grid { m } => radial_grid(base, g, &[eps], m).map(Estimate::exact),
        Method::MonteCarlo { n, seed } => radial_mc(base, g, eps, eps, n, seed),
    }
}

/// `int |h|^r + |grad h|^r d(nu x nu)`.
pub fn capacity_functional(h: &CutoffFunction, base: &BaseLaw, r: f64, method: Method) -> Result<Estimate> {
    h.validate()?;
    base.validate()?;
    if !(r >= 1.0) {
        return Err(Error::InvalidParameter(format!("exponent r = {r} must be >= 1")));
    }
    let g = |rho: f64| h.capacity_integrand(rho, r);
    match (method, h.radii()) {
        (_, Some((r_in, _))) if r_in >= base.diameter() => Ok(Estimate::exact(1.0)),
        (_, None) if *h == CutoffFunction::Constant => Ok(Estimate::exact(1.0)),
        (Method::Grid { m }, _) => radial_grid(base, g, &h.kinks(), m).map(Estimate::exact),
        (Method::MonteCarlo { n, seed }, Some((r_in, r_out))) => radial_mc(base, g, r_in, r_out, n, seed),
        (Method::MonteCarlo { n, seed }, None) => pair_mc(base, g, n, seed),
    }
}

/// Family used by the rate audit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuditFamily {
    /// Log cutoff with `R = sqrt(eps)`.
    LogSqrt,
    Mollified,
}

impl std::str::FromStr for AuditFamily {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "log" | "log_sqrt" => Ok(AuditFamily::LogSqrt),
            "mollified" => Ok(AuditFamily::Mollified),
            _ => Err(Error::Parse(format!("unknown cutoff family {s:?}"))),
        }
    }
}

impl AuditFamily {
    pub fn cutoff(self, eps: f64) -> Result<CutoffFunction> {
        match self {
            AuditFamily::LogSqrt => CutoffFunction::log_sqrt(eps),
            AuditFamily::Mollified => CutoffFunction::mollified(eps),
        }
    }
}

/// Upper bound for the capacity functional of `h` against a law with density
/// bounded by `f_inf` in `R^d`.
///
/// Log family: `omega_d f R^d + d omega_d 2^r f L^{-r} int_eps^R rho^{d-1-r} drho`
/// with `L = log(R/eps)`; for `r = d` the second term is
/// `d omega_d 2^d f L^{1-d}`. Mollified family: the strip of radius
/// `2.5 eps` times `1 + (sqrt(2) 15 / (8 eps))^r`.
pub fn capacity_bound(h: &CutoffFunction, d: usize, r: f64, f_inf: f64) -> f64 {
    let om = unit_ball_volume(d);
    let df = d as f64;
    match *h {
        CutoffFunction::Log { eps, r_outer } => {
            let l = (r_outer / eps).ln();
            let radial = if (df - r).abs() < 1e-12 {
                l
            } else {
                (r_outer.powf(df - r) - eps.powf(df - r)) / (df - r)
            };
            om * f_inf * r_outer.powi(d as i32) + df * om * 2f64.powf(r) * f_inf * l.powf(-r) * radial
        }
        CutoffFunction::Mollified { eps } => {
            let strip = (om * f_inf * (2.5 * eps).powi(d as i32)).min(1.0);
            strip * (1.0 + (std::f64::consts::SQRT_2 * 15.0 / (8.0 * eps)).powf(r))
        }
        _ => f64::INFINITY,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub eps: f64,
    /// Outer radius (log family) or `2.5 eps` (mollified family).
    pub r_outer: f64,
    pub value: Estimate,
    pub bound: f64,
    pub below_bound: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateAudit {
    pub d: usize,
    pub r: f64,
    pub family: AuditFamily,
    pub rows: Vec<RateRow>,
    /// Least-squares slope of `log value` against `log log(R/eps)`.
    pub fitted_log_exponent: f64,
    pub decreasing: bool,
    pub pass: bool,
}

/// Capacity values over an `eps` sweep with their bounds.
///
/// A row is below the bound when `value <= 1.1 bound + 3 stderr`.
pub fn capacity_rate_audit(
    base: &BaseLaw,
    r: f64,
    family: AuditFamily,
    eps_sweep: &[f64],
    n: usize,
    seed: u64,
) -> Result<RateAudit> {
    base.validate()?;
    let f_inf = base
        .density_bound()
        .ok_or_else(|| Error::InvalidBase("the rate audit needs a law with bounded Lebesgue density".into()))?;
    let d = base.dim();
    let mut rows = Vec::with_capacity(eps_sweep.len());
    for (k, &eps) in eps_sweep.iter().enumerate() {
        let h = family.cutoff(eps)?;
        let method = Method::MonteCarlo {
            n,
            seed: crate::rng::child_seed(seed, "rate-audit", k as u64),
        };
        let value = capacity_functional(&h, base, r, method)?;
        let bound = capacity_bound(&h, d, r, f_inf);
        let r_outer = h.radii().map(|p| p.1).unwrap_or(f64::INFINITY);
        rows.push(RateRow {
            eps,
            r_outer,
            below_bound: value.mean <= 1.1 * bound + 3.0 * value.stderr,
            value,
            bound,
        });
    }
    let xs: Vec<f64> = rows.iter().map(|row| (row.r_outer / row.eps).ln().ln()).collect();
    let ys: Vec<f64> = rows
        .iter()
        .map(|row| row.value.mean.max(f64::MIN_POSITIVE).ln())
        .collect();
    let fitted_log_exponent = if rows.len() >= 2 { ls_slope(&xs, &ys) } else { f64::NAN };
    let mut sorted: Vec<&RateRow> = rows.iter().collect();
    sorted.sort_by(|a, b| b.eps.total_cmp(&a.eps));
    let decreasing = sorted
        .windows(2)
        .all(|w| w[1].value.mean <= w[0].value.mean + 3.0 * w[0].value.stderr.hypot(w[1].value.stderr));
    Ok(RateAudit {
        d,
        r,
        family,
        pass: rows.iter().all(|row| row.below_bound),
        rows,
        fitted_log_exponent,
        decreasing,
    })
}

/// The map `p_eps` on `R^d x R^d`: pairs in the strip `||pi_perp|| < eps`
/// go to their diagonal projection, the others move by `eps` towards the
/// diagonal.
pub fn lipschitz_projection(x: &[f64], y: &[f64], eps: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            found: y.len(),
        });
    }
    if !(eps > 0.0) {
        return Err(Error::InvalidParameter(format!("eps = {eps} must be positive")));
    }
    let mid: Vec<f64> = x.iter().zip(y).map(|(a, b)| 0.5 * (a + b)).collect();
    let half: Vec<f64> = x.iter().zip(y).map(|(a, b)| 0.5 * (a - b)).collect();
    // pi_perp(x, y) = (half, -half).
    let norm = (2.0 * half.iter().map(|v| v * v).sum::<f64>()).sqrt();
    if norm < eps {
        return Ok((mid.clone(), mid));
    }
    let alpha = 1.0 - eps / norm;
    let px = mid.iter().zip(&half).map(|(m, h)| m + alpha * h).collect();
    let py = mid.iter().zip(&half).map(|(m, h)| m - alpha * h).collect();
    Ok((px, py))
}
