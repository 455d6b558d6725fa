//! The round circle and the round 2-sphere as embedded manifolds.
//!
//! Intrinsic coordinates are the angle `theta` on S^1 and
//! `(colatitude, longitude)` on S^2. Measures, curves and liftings move
//! between intrinsic and ambient coordinates through [`embed`]/[`unembed`].
//! Particle flows use exact rotations along great circles.

use std::f64::consts::PI;

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::capacity::{capacity_functional, CutoffFunction, Method};
use crate::cylinder::{eval_gc, GenCylinderFn, Outer};
use crate::dynamics::{time_grid, Lifting, NonLocalField};
use crate::error::{Error, Result};
use crate::measures::{strictly_decreasing, AtomicMeasure, MeasureCurve};
use crate::rng::{child_seed, stream};
use crate::sampling::BaseLaw;
use crate::stats::{pairwise_sum, Estimate};
use crate::transport::{wasserstein_p_with, Transport};

/// Points farther than this from the unit sphere are rejected.
pub const SURFACE_TOL: f64 = 1e-9;
/// `d_S <= C |x - y|` on both manifolds.
pub const EQUIVALENCE_CONSTANT: f64 = PI / 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ManifoldKind {
    Circle,
    Sphere2,
}

impl std::str::FromStr for ManifoldKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "circle" | "s1" => Ok(ManifoldKind::Circle),
            "sphere" | "sphere2" | "s2" => Ok(ManifoldKind::Sphere2),
            _ => Err(Error::Parse(format!("unknown manifold {s:?}"))),
        }
    }
}

impl ManifoldKind {
    pub fn intrinsic_dim(self) -> usize {
        match self {
            ManifoldKind::Circle => 1,
            ManifoldKind::Sphere2 => 2,
        }
    }

    pub fn ambient_dim(self) -> usize {
        self.intrinsic_dim() + 1
    }

    pub fn uniform_law(self) -> BaseLaw {
        match self {
            ManifoldKind::Circle => BaseLaw::UniformCircle,
            ManifoldKind::Sphere2 => BaseLaw::UniformSphere,
        }
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|c| c * c).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

/// Checks that `x` is an ambient point of `kind`.
pub fn check_on_surface(kind: ManifoldKind, x: &[f64]) -> Result<()> {
    if x.len() != kind.ambient_dim() {
        return Err(Error::DimensionMismatch {
            expected: kind.ambient_dim(),
            found: x.len(),
        });
    }
    let distance = (norm(x) - 1.0).abs();
    if !(distance <= SURFACE_TOL) {
        return Err(Error::OffSurface { distance });
    }
    Ok(())
}

pub fn embed(kind: ManifoldKind, q: &[f64]) -> Result<Vec<f64>> {
    if q.len() != kind.intrinsic_dim() {
        return Err(Error::DimensionMismatch {
            expected: kind.intrinsic_dim(),
            found: q.len(),
        });
    }
    Ok(match kind {
        ManifoldKind::Circle => vec![q[0].cos(), q[0].sin()],
        ManifoldKind::Sphere2 => {
            let (st, ct) = q[0].sin_cos();
            let (sp, cp) = q[1].sin_cos();
            vec![st * cp, st * sp, ct]
        }
    })
}

/// Intrinsic coordinates of an ambient point; angles in `(-pi, pi]`,
/// colatitude in `[0, pi]`.
pub fn unembed(kind: ManifoldKind, x: &[f64]) -> Result<Vec<f64>> {
    check_on_surface(kind, x)?;
    Ok(match kind {
        ManifoldKind::Circle => vec![x[1].atan2(x[0])],
        ManifoldKind::Sphere2 => vec![x[0].hypot(x[1]).atan2(x[2]), x[1].atan2(x[0])],
    })
}

/// Great-circle distance between ambient points.
pub fn intrinsic_distance(kind: ManifoldKind, x: &[f64], y: &[f64]) -> Result<f64> {
    check_on_surface(kind, x)?;
    check_on_surface(kind, y)?;
    Ok(angle(x, y))
}

fn angle(x: &[f64], y: &[f64]) -> f64 {
    let s = match x.len() {
        2 => (x[0] * y[1] - x[1] * y[0]).abs(),
        _ => norm(&cross([x[0], x[1], x[2]], [y[0], y[1], y[2]])),
    };
    s.atan2(dot(x, y))
}

/// Pushforward of an intrinsic measure into ambient coordinates.
pub fn embed_measure(kind: ManifoldKind, mu: &AtomicMeasure) -> Result<AtomicMeasure> {
    let k = kind.ambient_dim();
    let mut coords = Vec::with_capacity(mu.len() * k);
    for (_, q) in mu.atoms() {
        coords.extend(embed(kind, q)?);
    }
    Ok(AtomicMeasure::from_flat(k, mu.weights(), coords)?.with_tail_mass(mu.tail_mass()))
}

/// Pullback of an ambient measure supported on the manifold.
pub fn unembed_measure(kind: ManifoldKind, mu: &AtomicMeasure) -> Result<AtomicMeasure> {
    let mut coords = Vec::with_capacity(mu.len() * kind.intrinsic_dim());
    for (_, x) in mu.atoms() {
        coords.extend(unembed(kind, x)?);
    }
    Ok(AtomicMeasure::from_flat(kind.intrinsic_dim(), mu.weights(), coords)?.with_tail_mass(mu.tail_mass()))
}

pub fn embed_curve(kind: ManifoldKind, curve: &MeasureCurve) -> Result<MeasureCurve> {
    let states = curve
        .states()
        .iter()
        .map(|m| embed_measure(kind, m))
        .collect::<Result<_>>()?;
    MeasureCurve::new(curve.times().to_vec(), states)
}

pub fn unembed_curve(kind: ManifoldKind, curve: &MeasureCurve) -> Result<MeasureCurve> {
    let states = curve
        .states()
        .iter()
        .map(|m| unembed_measure(kind, m))
        .collect::<Result<_>>()?;
    MeasureCurve::new(curve.times().to_vec(), states)
}

fn map_lifting<F>(l: &Lifting, out_dim: usize, f: F) -> Result<Lifting>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let trajectories = l
        .trajectories
        .iter()
        .map(|tr| {
            let mut out = Vec::with_capacity(l.times.len() * out_dim);
            for p in tr.chunks(l.dim) {
                out.extend(f(p)?);
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    Ok(Lifting {
        dim: out_dim,
        weights: l.weights.clone(),
        tail_mass: l.tail_mass,
        times: l.times.clone(),
        trajectories,
    })
}

pub fn embed_lifting(kind: ManifoldKind, l: &Lifting) -> Result<Lifting> {
    map_lifting(l, kind.ambient_dim(), |q| embed(kind, q))
}

/// Pullback of an ambient lifting. Circle angles are unwrapped along each
/// trajectory so that they stay continuous.
pub fn unembed_lifting(kind: ManifoldKind, l: &Lifting) -> Result<Lifting> {
    let mut out = map_lifting(l, kind.intrinsic_dim(), |x| unembed(kind, x))?;
    if kind == ManifoldKind::Circle {
        for tr in &mut out.trajectories {
            for k in 1..tr.len() {
                let d = tr[k] - tr[k - 1];
                tr[k] -= 2.0 * PI * (d / (2.0 * PI)).round();
            }
        }
    }
    Ok(out)
}

/// `W_p` with the intrinsic distance as ground cost.
pub fn intrinsic_wasserstein(kind: ManifoldKind, mu: &AtomicMeasure, nu: &AtomicMeasure, p: f64) -> Result<Transport> {
    for m in [mu, nu] {
        for (_, x) in m.atoms() {
            check_on_surface(kind, x)?;
        }
    }
    wasserstein_p_with(mu, nu, p, angle)
}

/// Tangent non-local fields in ambient coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TangentField {
    Zero,
    /// Rotation about `axis` (the z axis on the circle) at angular speed `omega`.
    Rotation {
        axis: Vec<f64>,
        omega: f64,
    },
    /// `b = k P_x(mean(mu))`, the tangential pull towards the barycenter.
    MeanAlignment {
        k: f64,
    },
    /// `b(x, mu) = beta(t, theta(x), theta_# mu) tau(x)` on the circle, for an
    /// intrinsic field `beta`.
    CirclePushforward {
        field: NonLocalField,
    },
    /// An arbitrary ambient field; rejected when it leaves the tangent space.
    Ambient {
        field: NonLocalField,
    },
}

fn tau(x: &[f64]) -> [f64; 2] {
    [-x[1], x[0]]
}

impl TangentField {
    /// Velocities of all atoms (flat ambient coordinates) under `mu`.
    pub fn velocities(&self, kind: ManifoldKind, t: f64, pos: &[f64], mu: &AtomicMeasure) -> Result<Vec<f64>> {
        let k = kind.ambient_dim();
        let mut out = vec![0.0; pos.len()];
        match self {
            TangentField::Zero => {}
            TangentField::Rotation { axis, omega } => {
                let a = match (kind, axis.len()) {
                    (ManifoldKind::Circle, _) => [0.0, 0.0, 1.0],
                    (ManifoldKind::Sphere2, 3) => {
                        let n = norm(axis);
                        [axis[0] / n, axis[1] / n, axis[2] / n]
                    }
                    _ => {
                        return Err(Error::DimensionMismatch {
                            expected: 3,
                            found: axis.len(),
                        })
                    }
                };
                for (o, x) in out.chunks_mut(k).zip(pos.chunks(k)) {
                    let v = cross(a, lift3(x));
                    o.copy_from_slice(&v[..k]);
                    o.iter_mut().for_each(|c| *c *= omega);
                }
            }
            TangentField::MeanAlignment { k: gain } => {
                let mut m = vec![0.0; k];
                for (w, y) in mu.atoms() {
                    m.iter_mut().zip(y).for_each(|(a, b)| *a += w * b);
                }
                for (o, x) in out.chunks_mut(k).zip(pos.chunks(k)) {
                    let s = dot(&m, x);
                    for c in 0..k {
                        o[c] = gain * (m[c] - s * x[c]);
                    }
                }
            }
            TangentField::CirclePushforward { field } => {
                if kind != ManifoldKind::Circle {
                    return Err(Error::InvalidParameter(
                        "pushforward fields are defined on the circle".into(),
                    ));
                }
                let theta: Vec<f64> = pos.chunks(2).map(|x| x[1].atan2(x[0])).collect();
                let nu = unembed_measure(kind, mu)?;
                let beta = field.velocities(t, &theta, 1, &nu)?;
                for ((o, x), b) in out.chunks_mut(2).zip(pos.chunks(2)).zip(beta) {
                    let tx = tau(x);
                    o[0] = b * tx[0];
                    o[1] = b * tx[1];
                }
            }
            TangentField::Ambient { field } => {
                out = field.velocities(t, pos, k, mu)?;
            }
        }
        for (v, x) in out.chunks(k).zip(pos.chunks(k)) {
            let normal = dot(v, x).abs();
            if normal >= 1e-9 {
                return Err(Error::NonTangentField { normal });
            }
        }
        Ok(out)
    }
}

fn lift3(x: &[f64]) -> [f64; 3] {
    [x[0], x[1], if x.len() > 2 { x[2] } else { 0.0 }]
}

/// Rodrigues rotation of `x` by the rotation vector `u`.
fn rotate(u: [f64; 3], x: [f64; 3]) -> [f64; 3] {
    let th = norm(&u);
    if th == 0.0 {
        return x;
    }
    let a = [u[0] / th, u[1] / th, u[2] / th];
    let (s, c) = th.sin_cos();
    let axx = cross(a, x);
    let ad = dot(&a, &x);
    [0, 1, 2].map(|i| x[i] * c + axx[i] * s + a[i] * ad * (1.0 - c))
}

/// `dexp_u^{-1}(v)` on so(3) to third order.
fn dexpinv(u: [f64; 3], v: [f64; 3]) -> [f64; 3] {
    let c1 = cross(u, v);
    let c2 = cross(u, c1);
    [0, 1, 2].map(|i| v[i] - 0.5 * c1[i] + c2[i] / 12.0)
}

/// Particle flow on the manifold by fourth-order Runge-Kutta-Munthe-Kaas
/// steps in the rotation group; weights are frozen.
pub fn geodesic_particle_flow(
    kind: ManifoldKind,
    mu0: &AtomicMeasure,
    b: &TangentField,
    t_end: f64,
    dt: f64,
) -> Result<Lifting> {
    for (_, x) in mu0.atoms() {
        check_on_surface(kind, x)?;
    }
    let k = kind.ambient_dim();
    let times = time_grid(t_end, dt)?;
    let w = mu0.weights().to_vec();
    let n = w.len();
    let mut x: Vec<[f64; 3]> = mu0.coords().chunks(k).map(lift3).collect();
    let mut traj: Vec<Vec<f64>> = (0..n).map(|_| Vec::with_capacity(times.len() * k)).collect();
    let record = |traj: &mut Vec<Vec<f64>>, x: &[[f64; 3]]| {
        for (t, p) in traj.iter_mut().zip(x) {
            t.extend_from_slice(&p[..k]);
        }
    };
    record(&mut traj, &x);
    let flatten = |x: &[[f64; 3]]| -> Vec<f64> { x.iter().flat_map(|p| p[..k].to_vec()).collect() };
    // Angular velocity `x cross v` of each atom at the given positions.
    let omegas = |t: f64, p: &[[f64; 3]]| -> Result<Vec<[f64; 3]>> {
        let flat = flatten(p);
        let mu = AtomicMeasure::from_flat(k, &w, flat.clone())?;
        let v = b.velocities(kind, t, &flat, &mu)?;
        Ok(p.iter()
            .zip(v.chunks(k))
            .map(|(xi, vi)| cross(*xi, lift3(vi)))
            .collect())
    };
    for step in 0..times.len() - 1 {
        let (t, h) = (times[step], times[step + 1] - times[step]);
        let scaled = |u: &[[f64; 3]], s: f64| -> Vec<[f64; 3]> { u.iter().map(|a| a.map(|c| c * s)).collect() };
        let moved = |u: &[[f64; 3]]| -> Vec<[f64; 3]> { x.iter().zip(u).map(|(p, a)| rotate(*a, *p)).collect() };
        let k1 = omegas(t, &x)?;
        let u2 = scaled(&k1, 0.5 * h);
        let k2: Vec<[f64; 3]> = omegas(t + 0.5 * h, &moved(&u2))?
            .into_iter()
            .zip(&u2)
            .map(|(v, u)| dexpinv(*u, v))
            .collect();
        let u3 = scaled(&k2, 0.5 * h);
        let k3: Vec<[f64; 3]> = omegas(t + 0.5 * h, &moved(&u3))?
            .into_iter()
            .zip(&u3)
            .map(|(v, u)| dexpinv(*u, v))
            .collect();
        let u4 = scaled(&k3, h);
        let k4: Vec<[f64; 3]> = omegas(t + h, &moved(&u4))?
            .into_iter()
            .zip(&u4)
            .map(|(v, u)| dexpinv(*u, v))
            .collect();
        for i in 0..n {
            let u = [0, 1, 2].map(|c| h / 6.0 * (k1[i][c] + 2.0 * k2[i][c] + 2.0 * k3[i][c] + k4[i][c]));
            x[i] = rotate(u, x[i]);
        }
        if x.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::StepTooLarge { step });
        }
        record(&mut traj, &x);
    }
    Ok(Lifting {
        dim: k,
        weights: w,
        tail_mass: mu0.tail_mass(),
        times,
        trajectories: traj,
    })
}

/// `exp_x(v)` for a tangent vector `v` at `x`.
pub fn exp_map(x: &[f64], v: &[f64]) -> Vec<f64> {
    let n = norm(v);
    if n == 0.0 {
        return x.to_vec();
    }
    let (s, c) = n.sin_cos();
    x.iter().zip(v).map(|(a, b)| c * a + s * b / n).collect()
}

/// Tangent vector at `x` pointing to `y` with length `d_S(x, y)`.
pub fn log_map(x: &[f64], y: &[f64]) -> Vec<f64> {
    let th = angle(x, y);
    let c = dot(x, y);
    let perp: Vec<f64> = y.iter().zip(x).map(|(a, b)| a - c * b).collect();
    let n = norm(&perp);
    if n == 0.0 {
        return vec![0.0; x.len()];
    }
    perp.into_iter().map(|v| th * v / n).collect()
}

/// Per atom `max_k |log_{x_k}(x_{k+1}) / h - b(t_k, x_k, mu_k)|` for an ambient lifting.
pub fn manifold_ode_residual(kind: ManifoldKind, l: &Lifting, b: &TangentField) -> Result<Vec<f64>> {
    let k = kind.ambient_dim();
    let mut res = vec![0.0f64; l.len()];
    for s in 0..l.times.len() - 1 {
        let h = l.times[s + 1] - l.times[s];
        let mu = l.marginal(s)?;
        let pos = l.positions_at(s);
        let v = b.velocities(kind, l.times[s], &pos, &mu)?;
        for (i, r) in res.iter_mut().enumerate() {
            let g = log_map(l.position(i, s), l.position(i, s + 1));
            let e = (0..k).map(|c| (g[c] / h - v[i * k + c]).powi(2)).sum::<f64>().sqrt();
            *r = r.max(e);
        }
    }
    Ok(res)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifoldCapacityRow {
    pub eps: f64,
    pub r_outer: f64,
    pub value: Estimate,
    /// `log(R / eps)^{1 - k}`.
    pub predicted_scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifoldCapacityReport {
    pub kind: ManifoldKind,
    pub r: f64,
    pub rows: Vec<ManifoldCapacityRow>,
    /// `(v_i / v_{i+1}) / (s_i / s_{i+1})` for consecutive rows.
    pub ratio_agreement: Vec<f64>,
    pub decreasing: bool,
    pub ratios_within_25pct: bool,
}

/// Capacity of the log cutoff with `R = sqrt(eps)` against the uniform law,
/// computed with ambient gradients and chord distances.
pub fn manifold_capacity_audit(
    kind: ManifoldKind,
    eps_sweep: &[f64],
    n: usize,
    seed: u64,
) -> Result<ManifoldCapacityReport> {
    let k = kind.intrinsic_dim();
    let r = k as f64;
    let base = kind.uniform_law();
    let mut rows = Vec::with_capacity(eps_sweep.len());
    for (i, &eps) in eps_sweep.iter().enumerate() {
        if !(eps > 0.0) {
            return Err(Error::InvalidParameter(format!("eps = {eps} must be positive")));
        }
        let method = Method::MonteCarlo {
            n,
            seed: child_seed(seed, "manifold-capacity", i as u64),
        };
        // For eps >= 1 the log cutoff has no room (sqrt(eps) <= eps) and h = 1.
        let (h, r_outer) = if eps >= 1.0 {
            (CutoffFunction::constant(), f64::INFINITY)
        } else {
            (CutoffFunction::log_sqrt(eps)?, eps.sqrt())
        };
        let value = capacity_functional(&h, &base, r, method)?;
        let predicted_scale = if eps >= 1.0 {
            1.0
        } else {
            (r_outer / eps).ln().powf(1.0 - r)
        };
        rows.push(ManifoldCapacityRow {
            eps,
            r_outer,
            value,
            predicted_scale,
        });
    }
    let mut sorted = rows.clone();
    sorted.sort_by(|a, b| b.eps.total_cmp(&a.eps));
    let ratio_agreement: Vec<f64> = sorted
        .windows(2)
        .filter(|p| p[0].eps < 1.0)
        .map(|p| (p[0].value.mean / p[1].value.mean) / (p[0].predicted_scale / p[1].predicted_scale))
        .collect();
    let decreasing = sorted.windows(2).all(|p| p[1].value.mean < p[0].value.mean);
    Ok(ManifoldCapacityReport {
        kind,
        r,
        ratios_within_25pct: ratio_agreement.iter().all(|q| (q - 1.0).abs() <= 0.25),
        rows,
        ratio_agreement,
        decreasing,
    })
}

/// Number of angle nodes for heat-kernel quadrature.
pub const HEAT_NODES: usize = 512;
/// Images kept in the wrapped Gaussian.
pub const WRAP_IMAGES: i32 = 10;

/// Wrapped Gaussian density of variance `var` at angle `d`.
pub fn wrapped_gaussian(d: f64, var: f64) -> f64 {
    let norm = 1.0 / (2.0 * PI * var).sqrt();
    (-WRAP_IMAGES..=WRAP_IMAGES)
        .map(|m| {
            let z = d + 2.0 * PI * m as f64;
            (-z * z / (2.0 * var)).exp()
        })
        .sum::<f64>()
        * norm
}

/// `(P f)(theta0) = E f(theta0 + sqrt(var) Z)` on the circle.
pub fn circle_heat_expectation<F: Fn(f64) -> f64>(f: F, theta0: f64, var: f64) -> f64 {
    if var == 0.0 {
        return f(theta0);
    }
    let h = 2.0 * PI / HEAT_NODES as f64;
    let terms: Vec<f64> = (0..HEAT_NODES)
        .map(|j| {
            let d = -PI + j as f64 * h;
            f(theta0 + d) * wrapped_gaussian(d, var)
        })
        .collect();
    h * pairwise_sum(&terms)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BakryEmeryAtom {
    /// `((P_s f)')^2` at the atom, `s = t / a_i`.
    pub lhs: f64,
    /// `P_s(f'^2)` at the atom.
    pub rhs: f64,
    /// Monte Carlo estimate of `rhs`.
    pub rhs_mc: Estimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatReport {
    pub t: f64,
    pub mc: Estimate,
    pub exact: f64,
    pub agrees: bool,
    /// Per atom and inner term: gradient bound at curvature 0.
    pub bakry_emery: Vec<BakryEmeryAtom>,
    pub bakry_emery_holds: bool,
}

/// Monte Carlo and quadrature values of `E[F(em(a, Y_t))]` for Brownian
/// atoms `Y^i` on the circle with variance `2t / a_i`.
///
/// `mu` is given in ambient coordinates. The exact side needs an affine
/// outer function.
pub fn circle_heat_check(f: &GenCylinderFn, mu: &AtomicMeasure, t: f64, n_mc: usize, seed: u64) -> Result<HeatReport> {
    let kind = ManifoldKind::Circle;
    for (_, x) in mu.atoms() {
        check_on_surface(kind, x)?;
    }
    if let Err(index) = strictly_decreasing(mu.weights(), 1e-12) {
        return Err(Error::TiedWeights { index });
    }
    if !(t >= 0.0) || n_mc < 2 {
        return Err(Error::InvalidParameter("need t >= 0 and at least two samples".into()));
    }
    let (w, b0) = match &f.outer {
        Outer::Affine { w, b } => (w.clone(), *b),
        _ => return Err(Error::NonSeparableFn),
    };
    let a = mu.weights().to_vec();
    let theta: Vec<f64> = mu.coords().chunks(2).map(|x| x[1].atan2(x[0])).collect();
    let on = |th: f64| [th.cos(), th.sin()];

    let mut exact = b0;
    let mut bakry_emery = Vec::new();
    for (j, g) in f.inner.iter().enumerate() {
        for (i, (&ai, &th)) in a.iter().zip(&theta).enumerate() {
            let var = 2.0 * t / ai;
            exact += w[j] * ai * circle_heat_expectation(|s| g.value(&on(s), ai), th, var);
            let deriv = |s: f64| {
                let x = on(s);
                let gr = g.spatial_gradient(&x, ai);
                gr[0] * -x[1] + gr[1] * x[0]
            };
            let lhs = circle_heat_expectation(deriv, th, var).powi(2);
            let rhs = circle_heat_expectation(|s| deriv(s).powi(2), th, var);
            let mut rng = stream(seed, "heat-bakry-emery", (j * a.len() + i) as u64);
            let samples: Vec<f64> = (0..n_mc)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    deriv(th + var.sqrt() * z).powi(2)
                })
                .collect();
            bakry_emery.push(BakryEmeryAtom {
                lhs,
                rhs,
                rhs_mc: Estimate::from_samples(&samples),
            });
        }
    }

    const BLOCK: usize = 1024;
    let blocks = n_mc.div_ceil(BLOCK);
    let values: Vec<f64> = (0..blocks)
        .into_par_iter()
        .map(|blk| {
            let mut rng = stream(seed, "heat", blk as u64);
            let m = BLOCK.min(n_mc - blk * BLOCK);
            let mut out = Vec::with_capacity(m);
            for _ in 0..m {
                let mut coords = Vec::with_capacity(2 * a.len());
                for (&ai, &th) in a.iter().zip(&theta) {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    coords.extend(on(th + (2.0 * t / ai).sqrt() * z));
                }
                let nu = AtomicMeasure::from_flat(2, &a, coords)?;
                out.push(eval_gc(f, &nu)?);
            }
            Ok(out)
        })
        .collect::<Result<Vec<Vec<f64>>>>()?
        .into_iter()
        .flatten()
        .collect();
    let mc = Estimate::from_samples(&values);
    let agrees = (mc.mean - exact).abs() <= 3.0 * mc.stderr + 1e-9 * exact.abs().max(1.0);
    let bakry_emery_holds = bakry_emery
        .iter()
        .all(|e| e.lhs <= e.rhs + 1e-6 && (e.rhs_mc.mean - e.rhs).abs() <= 3.0 * e.rhs_mc.stderr + 1e-6);
    Ok(HeatReport {
        t,
        mc,
        exact,
        agrees,
        bakry_emery,
        bakry_emery_holds,
    })
}
