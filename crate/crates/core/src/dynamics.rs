//! Particle flows for continuity equations with non-local velocity fields.
//!
//! An atomic initial measure `sum a_i delta_{x_i}` is transported by moving
//! each atom along `x_i' = b(t, x_i, mu_t)` with frozen weights, where `mu_t`
//! is rebuilt from the current positions. The result is stored as a
//! [`Lifting`]: the weights plus one trajectory per atom on a shared grid.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cylinder::Functional;
use crate::error::{Error, Result};
use crate::measures::{check_grid, AtomicMeasure, MeasureCurve};
use crate::sampling::{sample_measure_indexed, RandomMeasureLaw};
use crate::transport::wasserstein_p;

/// Non-local vector fields `b(t, x, mu)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NonLocalField {
    Zero,
    /// `b = v`
    Constant {
        v: Vec<f64>,
    },
    /// `b = -rate x`
    LinearDecay {
        rate: f64,
    },
    /// `b = omega (-x_2, x_1)` in the plane.
    Rotation {
        omega: f64,
    },
    /// `b = k (mean(mu) - x)`
    MeanAttraction {
        k: f64,
    },
    /// `b = s int (y - x) exp(-|x-y|^2 / (2 sigma^2)) dmu(y)`
    GaussianInteraction {
        strength: f64,
        sigma: f64,
    },
    /// `b = -grad V` with `V(x) = sum_i a_i x_i^2 / 2`, `a_i > 0`.
    ConvexGradient {
        a: Vec<f64>,
    },
    /// `b = v cos(omega t)`
    Oscillating {
        v: Vec<f64>,
        omega: f64,
    },
}

impl NonLocalField {
    /// Checks parameters against the spatial dimension.
    pub fn validate(&self, dim: usize) -> Result<()> {
        let need = |k: usize| {
            if k == dim {
                Ok(())
            } else {
                Err(Error::DimensionMismatch {
                    expected: k,
                    found: dim,
                })
            }
        };
        match self {
            NonLocalField::Constant { v } | NonLocalField::Oscillating { v, .. } => need(v.len()),
            NonLocalField::Rotation { .. } => need(2),
            NonLocalField::ConvexGradient { a } => {
                need(a.len())?;
                if a.iter().any(|c| !(*c > 0.0)) {
                    return Err(Error::InvalidParameter(
                        "convex potential needs positive coefficients".into(),
                    ));
                }
                Ok(())
            }
            NonLocalField::GaussianInteraction { sigma, .. } if !(*sigma > 0.0) => {
                Err(Error::InvalidParameter("interaction width must be positive".into()))
            }
            _ => Ok(()),
        }
    }

    /// Lipschitz constant of `b` jointly in `t`, `x` and `mu` (for `W_1`).
    pub fn lipschitz(&self) -> f64 {
        match self {
            NonLocalField::Zero | NonLocalField::Constant { .. } => 0.0,
            NonLocalField::LinearDecay { rate } => rate.abs(),
            NonLocalField::Rotation { omega } => omega.abs(),
            NonLocalField::MeanAttraction { k } => 2.0 * k.abs(),
            NonLocalField::GaussianInteraction { strength, .. } => 2.0 * strength.abs(),
            NonLocalField::ConvexGradient { a } => a.iter().fold(0.0f64, |m, c| m.max(c.abs())),
            NonLocalField::Oscillating { v, omega } => omega.abs() * v.iter().map(|c| c * c).sum::<f64>().sqrt(),
        }
    }

    /// Bound on `|b|` over `|x| <= radius` (for measures supported there).
    pub fn sup_bound(&self, radius: f64) -> f64 {
        let norm = |v: &[f64]| v.iter().map(|c| c * c).sum::<f64>().sqrt();
        match self {
            NonLocalField::Zero => 0.0,
            NonLocalField::Constant { v } | NonLocalField::Oscillating { v, .. } => norm(v),
            NonLocalField::LinearDecay { rate } => rate.abs() * radius,
            NonLocalField::Rotation { omega } => omega.abs() * radius,
            NonLocalField::MeanAttraction { k } => 2.0 * k.abs() * radius,
            NonLocalField::GaussianInteraction { strength, sigma } => strength.abs() * sigma * (-0.5f64).exp(),
            NonLocalField::ConvexGradient { a } => a.iter().fold(0.0f64, |m, c| m.max(c.abs())) * radius,
        }
    }

    /// Velocity of every atom position (flat, `n x dim`) under `mu`.
    pub fn velocities(&self, t: f64, positions: &[f64], dim: usize, mu: &AtomicMeasure) -> Result<Vec<f64>> {
        let mut out = vec![0.0; positions.len()];
        match self {
            NonLocalField::Zero => {}
            NonLocalField::Constant { v } => {
                for (o, k) in out.iter_mut().zip((0..dim).cycle()) {
                    *o = v[k];
                }
            }
            NonLocalField::Oscillating { v, omega } => {
                let c = (omega * t).cos();
                for (o, k) in out.iter_mut().zip((0..dim).cycle()) {
                    *o = c * v[k];
                }
            }
            NonLocalField::LinearDecay { rate } => {
                for (o, x) in out.iter_mut().zip(positions) {
                    *o = -rate * x;
                }
            }
            NonLocalField::ConvexGradient { a } => {
                for ((o, x), k) in out.iter_mut().zip(positions).zip((0..dim).cycle()) {
                    *o = -a[k] * x;
                }
            }
            NonLocalField::Rotation { omega } => {
                for (o, x) in out.chunks_mut(2).zip(positions.chunks(2)) {
                    o[0] = -omega * x[1];
                    o[1] = omega * x[0];
                }
            }
            NonLocalField::MeanAttraction { k } => {
                let mut m = vec![0.0; dim];
                for (w, y) in mu.atoms() {
                    for (mc, yc) in m.iter_mut().zip(y) {
                        *mc += w * yc;
                    }
                }
                for (o, x) in out.chunks_mut(dim).zip(positions.chunks(dim)) {
                    for c in 0..dim {
                        o[c] = k * (m[c] - x[c]);
                    }
                }
            }
            NonLocalField::GaussianInteraction { strength, sigma } => {
                let s2 = 2.0 * sigma * sigma;
                for (o, x) in out.chunks_mut(dim).zip(positions.chunks(dim)) {
                    for (w, y) in mu.atoms() {
                        let r2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
                        let kx = strength * w * (-r2 / s2).exp();
                        for c in 0..dim {
                            o[c] += kx * (y[c] - x[c]);
                        }
                    }
                }
            }
        }
        if out.iter().any(|v| !v.is_finite()) && positions.iter().all(|v| v.is_finite()) {
            return Err(Error::FieldEvaluationFailure(format!("non-finite velocity at t = {t}")));
        }
        Ok(out)
    }

    /// `b(t, x, mu)` at a single point.
    pub fn eval(&self, t: f64, x: &[f64], mu: &AtomicMeasure) -> Result<Vec<f64>> {
        self.velocities(t, x, x.len(), mu)
    }
}

/// Constant weights and one piecewise-linear trajectory per atom.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lifting {
    pub dim: usize,
    pub weights: Vec<f64>,
    #[serde(default)]
    pub tail_mass: f64,
    pub times: Vec<f64>,
    /// `trajectories[i]` holds `times.len() * dim` coordinates of atom `i`.
    pub trajectories: Vec<Vec<f64>>,
}

impl Lifting {
    pub fn new(dim: usize, weights: Vec<f64>, times: Vec<f64>, trajectories: Vec<Vec<f64>>) -> Result<Self> {
        check_grid(&times)?;
        if trajectories.len() != weights.len() {
            return Err(Error::LengthMismatch {
                what: "trajectories",
                expected: weights.len(),
                found: trajectories.len(),
            });
        }
        if let Some(t) = trajectories.iter().find(|t| t.len() != times.len() * dim) {
            return Err(Error::LengthMismatch {
                what: "trajectory coordinates",
                expected: times.len() * dim,
                found: t.len(),
            });
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > crate::measures::INPUT_MASS_TOL {
            return Err(Error::MassNotOne { sum });
        }
        Ok(Lifting {
            dim,
            weights,
            tail_mass: 0.0,
            times,
            trajectories,
        })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Position of atom `i` at node `k`.
    pub fn position(&self, i: usize, k: usize) -> &[f64] {
        &self.trajectories[i][k * self.dim..(k + 1) * self.dim]
    }

    /// All positions at node `k`, flat.
    pub fn positions_at(&self, k: usize) -> Vec<f64> {
        let mut c = Vec::with_capacity(self.len() * self.dim);
        for i in 0..self.len() {
            c.extend_from_slice(self.position(i, k));
        }
        c
    }

    /// Time marginal at node `k`; colliding atoms merge.
    pub fn marginal(&self, k: usize) -> Result<AtomicMeasure> {
        Ok(AtomicMeasure::from_flat(self.dim, &self.weights, self.positions_at(k))?.with_tail_mass(self.tail_mass))
    }

    pub fn to_curve(&self) -> Result<MeasureCurve> {
        let states = (0..self.times.len()).map(|k| self.marginal(k)).collect::<Result<_>>()?;
        MeasureCurve::new(self.times.clone(), states)
    }
}

/// `n` steps of equal size covering `[0, T]`, with `T/n <= dt`.
pub fn time_grid(t_end: f64, dt: f64) -> Result<Vec<f64>> {
    if !(dt > 0.0) || !(t_end >= dt) || !t_end.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "need dt > 0 and T >= dt (T = {t_end}, dt = {dt})"
        )));
    }
    let n = (t_end / dt - 1e-9).ceil().max(1.0) as usize;
    let h = t_end / n as f64;
    let mut times: Vec<f64> = (0..=n).map(|k| k as f64 * h).collect();
    times[n] = t_end;
    Ok(times)
}

/// Classical RK4 for the coupled particle system with frozen weights.
///
/// The grid is `k T / n` with `n = ceil(T / dt)`.
pub fn integrate_particles(mu0: &AtomicMeasure, b: &NonLocalField, t_end: f64, dt: f64) -> Result<Lifting> {
    let dim = mu0.dim();
    b.validate(dim)?;
    let times = time_grid(t_end, dt)?;
    let n_atoms = mu0.len();
    let w = mu0.weights().to_vec();
    let mut x = mu0.coords().to_vec();
    let mut traj: Vec<Vec<f64>> = (0..n_atoms).map(|_| Vec::with_capacity(times.len() * dim)).collect();
    let record = |traj: &mut Vec<Vec<f64>>, x: &[f64]| {
        for (i, t) in traj.iter_mut().enumerate() {
            t.extend_from_slice(&x[i * dim..(i + 1) * dim]);
        }
    };
    record(&mut traj, &x);
    let stage = |t: f64, pos: &[f64]| -> Result<Vec<f64>> {
        let mu = AtomicMeasure::from_flat(dim, &w, pos.to_vec())?;
        b.velocities(t, pos, dim, &mu)
    };
    let shifted = |x: &[f64], k: &[f64], s: f64| -> Vec<f64> { x.iter().zip(k).map(|(a, v)| a + s * v).collect() };
    for step in 0..times.len() - 1 {
        let (t, h) = (times[step], times[step + 1] - times[step]);
        let guard = |r: Result<Vec<f64>>| match r {
            Err(Error::InvalidParameter(_)) => Err(Error::StepTooLarge { step }),
            other => other,
        };
        let k1 = guard(stage(t, &x))?;
        let k2 = guard(stage(t + 0.5 * h, &shifted(&x, &k1, 0.5 * h)))?;
        let k3 = guard(stage(t + 0.5 * h, &shifted(&x, &k2, 0.5 * h)))?;
        let k4 = guard(stage(t + h, &shifted(&x, &k3, h)))?;
        for i in 0..x.len() {
            x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::StepTooLarge { step });
        }
        record(&mut traj, &x);
    }
    Ok(Lifting {
        dim,
        weights: w,
        tail_mass: mu0.tail_mass(),
        times,
        trajectories: traj,
    })
}

/// Compactly supported time weights `xi` for the weak formulation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TimeWeight {
    /// `s^2 (1 - s)^3` with `s = (t - start) / (end - start)`.
    Polynomial { start: f64, end: f64 },
    /// `exp(1 - 1 / (1 - u^2))` with `u` the position in the window mapped to `(-1, 1)`.
    Bump { start: f64, end: f64 },
}

impl TimeWeight {
    pub fn support(&self) -> (f64, f64) {
        match *self {
            TimeWeight::Polynomial { start, end } | TimeWeight::Bump { start, end } => (start, end),
        }
    }

    pub fn id(&self) -> String {
        let (a, b) = self.support();
        match self {
            TimeWeight::Polynomial { .. } => format!("poly[{a},{b}]"),
            TimeWeight::Bump { .. } => format!("bump[{a},{b}]"),
        }
    }

    /// `(xi(t), xi'(t))`.
    pub fn eval(&self, t: f64) -> (f64, f64) {
        let (a, b) = self.support();
        let len = b - a;
        match self {
            TimeWeight::Polynomial { .. } => {
                let s = (t - a) / len;
                if !(0.0..=1.0).contains(&s) {
                    return (0.0, 0.0);
                }
                let v = s * s * (1.0 - s).powi(3);
                let dv = (2.0 * s * (1.0 - s).powi(3) - 3.0 * s * s * (1.0 - s).powi(2)) / len;
                (v, dv)
            }
            TimeWeight::Bump { .. } => {
                let u = 2.0 * (t - a) / len - 1.0;
                if u.abs() >= 1.0 {
                    return (0.0, 0.0);
                }
                let q = 1.0 - u * u;
                let v = (1.0 - 1.0 / q).exp();
                (v, v * (-2.0 * u / (q * q)) * 2.0 / len)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    pub residual: f64,
    /// `int xi' F(mu_t) dt`
    pub time_term: f64,
    /// `int xi int grad F . b dmu_t dt`
    pub flux_term: f64,
    pub grid_step: f64,
    pub nodes_in_support: usize,
    pub xi: String,
}

/// Minimal number of grid nodes inside the support of `xi`.
pub const MIN_SUPPORT_NODES: usize = 8;

fn trapezoid_weights(times: &[f64]) -> Vec<f64> {
    let n = times.len();
    let mut w = vec![0.0; n];
    for k in 0..n - 1 {
        let h = times[k + 1] - times[k];
        w[k] += 0.5 * h;
        w[k + 1] += 0.5 * h;
    }
    w
}

/// `|int xi'(t) F(mu_t) dt + int xi(t) int grad_W F . b dmu_t dt|` by the
/// trapezoid rule on the curve's grid.
pub fn ce_residual<F: Functional + ?Sized>(
    curve: &MeasureCurve,
    b: &NonLocalField,
    f: &F,
    xi: &TimeWeight,
) -> Result<ResidualReport> {
    b.validate(curve.dim())?;
    let times = curve.times();
    let (a, e) = xi.support();
    let inside = times.iter().filter(|&&t| t > a && t < e).count();
    if inside < MIN_SUPPORT_NODES {
        return Err(Error::GridTooCoarse {
            nodes: inside,
            required: MIN_SUPPORT_NODES,
        });
    }
    let w = trapezoid_weights(times);
    let terms: Vec<(f64, f64)> = (0..times.len())
        .into_par_iter()
        .map(|k| {
            let t = times[k];
            let (v, dv) = xi.eval(t);
            if v == 0.0 && dv == 0.0 {
                return Ok((0.0, 0.0));
            }
            let mu = &curve.states()[k];
            let time_term = if dv != 0.0 { w[k] * dv * f.value(mu)? } else { 0.0 };
            let mut flux = 0.0;
            if v != 0.0 {
                let vel = b.velocities(t, mu.coords(), mu.dim(), mu)?;
                for (i, (ai, x)) in mu.atoms().enumerate() {
                    let g = f.gradient(x, mu)?;
                    flux += ai
                        * g.iter()
                            .zip(&vel[i * mu.dim()..(i + 1) * mu.dim()])
                            .map(|(p, q)| p * q)
                            .sum::<f64>();
                }
            }
            Ok((time_term, w[k] * v * flux))
        })
        .collect::<Result<_>>()?;
    let time_term: f64 = terms.iter().map(|p| p.0).sum();
    let flux_term: f64 = terms.iter().map(|p| p.1).sum();
    let grid_step = times.windows(2).map(|p| p[1] - p[0]).fold(0.0, f64::max);
    Ok(ResidualReport {
        residual: (time_term + flux_term).abs(),
        time_term,
        flux_term,
        grid_step,
        nodes_in_support: inside,
        xi: xi.id(),
    })
}

/// Central difference `W_p(mu_{k-1}, mu_{k+1}) / (t_{k+1} - t_{k-1})`.
pub fn metric_derivative(curve: &MeasureCurve, p: f64, t_index: usize) -> Result<f64> {
    let n = curve.len();
    if t_index == 0 || t_index + 1 >= n {
        return Err(Error::BoundaryIndex { index: t_index, len: n });
    }
    let s = curve.states();
    let t = curve.times();
    Ok(wasserstein_p(&s[t_index - 1], &s[t_index + 1], p)?.distance / (t[t_index + 1] - t[t_index - 1]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveEnsemble {
    pub members: Vec<MeasureCurve>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiftingEnsemble {
    pub members: Vec<Lifting>,
}

/// Samples `n_members` initial measures and integrates each one.
///
/// Member `i` uses the streams indexed by `i`, so the result does not depend
/// on scheduling.
pub fn evolve_ensemble(
    law: &RandomMeasureLaw,
    b: &NonLocalField,
    n_members: usize,
    t_end: f64,
    dt: f64,
    seed: u64,
) -> Result<(CurveEnsemble, LiftingEnsemble)> {
    law.validate()?;
    b.validate(law.dim())?;
    let pairs: Vec<(MeasureCurve, Lifting)> = (0..n_members as u64)
        .into_par_iter()
        .map(|i| {
            let mu0 = sample_measure_indexed(law, seed, i)?;
            let lifting = integrate_particles(&mu0, b, t_end, dt)?;
            Ok((lifting.to_curve()?, lifting))
        })
        .collect::<Result<_>>()?;
    let (curves, liftings) = pairs.into_iter().unzip();
    Ok((CurveEnsemble { members: curves }, LiftingEnsemble { members: liftings }))
}

/// Ensemble mean of `int |x|^2 dmu_t` at every grid node.
pub fn ensemble_second_moment(ens: &CurveEnsemble) -> Vec<f64> {
    let Some(first) = ens.members.first() else {
        return Vec::new();
    };
    let n = ens.members.len() as f64;
    (0..first.len())
        .map(|k| {
            ens.members
                .iter()
                .map(|c| c.states()[k].integrate(|x| x.iter().map(|v| v * v).sum()))
                .sum::<f64>()
                / n
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::make_atomic;

    fn line(w: &[f64], x: &[f64]) -> AtomicMeasure {
        make_atomic(w, &x.iter().map(|&v| vec![v]).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn zero_field_is_static() {
        let mu = line(&[0.6, 0.4], &[0.0, 1.0]);
        let l = integrate_particles(&mu, &NonLocalField::Zero, 1.0, 0.1).unwrap();
        assert_eq!(l.marginal(l.times.len() - 1).unwrap(), mu);
    }

    #[test]
    fn translation_is_exact() {
        let mu = line(&[0.6, 0.4], &[0.0, 1.0]);
        let l = integrate_particles(&mu, &NonLocalField::Constant { v: vec![0.5] }, 1.0, 0.01).unwrap();
        let last = l.times.len() - 1;
        assert!((l.position(0, last)[0] - 0.5).abs() < 1e-12);
        assert!((l.position(1, last)[0] - 1.5).abs() < 1e-12);
    }

    #[test]
    fn exponential_decay() {
        let mu = line(&[0.5, 0.5], &[1.0, 2.0]);
        let l = integrate_particles(&mu, &NonLocalField::LinearDecay { rate: 1.0 }, 1.0, 1e-3).unwrap();
        let m = l.marginal(l.times.len() - 1).unwrap();
        let e = (-1.0f64).exp();
        let mut xs: Vec<f64> = m.coords().to_vec();
        xs.sort_by(f64::total_cmp);
        assert!((xs[0] - e).abs() < 1e-8 && (xs[1] - 2.0 * e).abs() < 1e-8);
        let speed = metric_derivative(&l.to_curve().unwrap(), 2.0, 1).unwrap();
        assert!((speed - 2.5f64.sqrt()).abs() < 0.02 * 2.5f64.sqrt());
        assert!(matches!(
            metric_derivative(&l.to_curve().unwrap(), 2.0, 0),
            Err(Error::BoundaryIndex { .. })
        ));
    }

    #[test]
    fn static_residual_is_zero() {
        let mu = line(&[0.6, 0.4], &[0.0, 1.0]);
        let l = integrate_particles(&mu, &NonLocalField::Zero, 1.0, 0.01).unwrap();
        let f = crate::cylinder::CylinderFn::new(
            vec![crate::cylinder::Inner::Cos {
                freq: vec![1.0],
                phase: 0.0,
            }],
            crate::cylinder::Outer::identity(),
        )
        .unwrap();
        let xi = TimeWeight::Bump { start: 0.2, end: 0.8 };
        let r = ce_residual(&l.to_curve().unwrap(), &NonLocalField::Zero, &f, &xi).unwrap();
        assert!(r.residual < 1e-12);
        assert_eq!(r.flux_term, 0.0);
        let coarse = integrate_particles(&mu, &NonLocalField::Zero, 1.0, 0.2).unwrap();
        assert!(matches!(
            ce_residual(&coarse.to_curve().unwrap(), &NonLocalField::Zero, &f, &xi),
            Err(Error::GridTooCoarse { .. })
        ));
    }

    #[test]
    fn time_weight_derivatives() {
        for xi in [
            TimeWeight::Polynomial { start: 0.2, end: 0.8 },
            TimeWeight::Bump { start: 0.1, end: 0.9 },
        ] {
            for k in 1..100 {
                let t = 0.1 + 0.8 * k as f64 / 100.0;
                let h = 1e-6;
                let fd = (xi.eval(t + h).0 - xi.eval(t - h).0) / (2.0 * h);
                assert!((fd - xi.eval(t).1).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn step_too_large_detected() {
        let mu = line(&[0.5, 0.5], &[1.0, 2.0]);
        let r = integrate_particles(&mu, &NonLocalField::LinearDecay { rate: 1e200 }, 10.0, 1.0);
        assert!(matches!(
            r,
            Err(Error::StepTooLarge { .. }) | Err(Error::FieldEvaluationFailure(_))
        ));
    }
}
