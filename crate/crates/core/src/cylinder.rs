//! Cylinder and generalized cylinder functionals with Wasserstein gradients.
//!
//! Inner and outer functions come from a closed-form catalog with hand-coded
//! derivatives. A cylinder functional is `F(mu) = Psi(int phi_1 dmu, ..., int phi_k dmu)`;
//! a generalized cylinder functional lets each inner function also see the
//! mass of the atom it is evaluated at, `phi_i(x, mu[x])`.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::capacity::CutoffFunction;
use crate::error::{Error, Result};
use crate::measures::AtomicMeasure;
use crate::rng::stream;
use crate::sampling::{sample_measure_indexed, RandomMeasureLaw};
use crate::stats::Estimate;

/// Relative tolerance for deciding that an atom mass equals a class weight.
pub const CLASS_TOL: f64 = 1e-9;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn axpy(acc: &mut [f64], s: f64, v: &[f64]) {
    for (a, x) in acc.iter_mut().zip(v) {
        *a += s * x;
    }
}

/// Spatial test functions `R^d -> R`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Inner {
    Const {
        c: f64,
    },
    /// `w . x + b`
    Linear {
        w: Vec<f64>,
        b: f64,
    },
    /// `(1 - |x-c|^2/r^2)^3` inside the ball, 0 outside.
    Bump {
        center: Vec<f64>,
        radius: f64,
    },
    /// `exp(-|x-c|^2 / (2 sigma^2))`
    Gaussian {
        center: Vec<f64>,
        sigma: f64,
    },
    /// `cos(k . x + phase)`
    Cos {
        freq: Vec<f64>,
        phase: f64,
    },
    Product {
        factors: Vec<Inner>,
    },
}

impl Inner {
    /// Spatial dimension the function is tied to, if any.
    pub fn dim(&self) -> Option<usize> {
        match self {
            Inner::Const { .. } => None,
            Inner::Linear { w, .. } => Some(w.len()),
            Inner::Bump { center, .. } | Inner::Gaussian { center, .. } => Some(center.len()),
            Inner::Cos { freq, .. } => Some(freq.len()),
            Inner::Product { factors } => factors.iter().find_map(Inner::dim),
        }
    }

    fn check_dim(&self, d: usize) -> Result<()> {
        match self {
            Inner::Product { factors } => factors.iter().try_for_each(|f| f.check_dim(d)),
            _ => match self.dim() {
                Some(e) if e != d => Err(Error::DimensionMismatch { expected: e, found: d }),
                _ => Ok(()),
            },
        }
    }

    /// Radius of a ball containing the support, when compact.
    pub fn support_radius(&self) -> Option<f64> {
        match self {
            Inner::Bump { radius, .. } => Some(*radius),
            Inner::Product { factors } => factors.iter().filter_map(Inner::support_radius).reduce(f64::min),
            _ => None,
        }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            Inner::Const { c } => *c,
            Inner::Linear { w, b } => dot(w, x) + b,
            Inner::Bump { center, radius } => {
                let s = dist2(x, center) / (radius * radius);
                if s < 1.0 {
                    (1.0 - s).powi(3)
                } else {
                    0.0
                }
            }
            Inner::Gaussian { center, sigma } => (-dist2(x, center) / (2.0 * sigma * sigma)).exp(),
            Inner::Cos { freq, phase } => (dot(freq, x) + phase).cos(),
            Inner::Product { factors } => factors.iter().map(|f| f.value(x)).product(),
        }
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let d = x.len();
        match self {
            Inner::Const { .. } => vec![0.0; d],
            Inner::Linear { w, .. } => w.clone(),
            Inner::Bump { center, radius } => {
                let r2 = radius * radius;
                let s = dist2(x, center) / r2;
                if s < 1.0 {
                    let k = -6.0 * (1.0 - s).powi(2) / r2;
                    x.iter().zip(center).map(|(a, c)| k * (a - c)).collect()
                } else {
                    vec![0.0; d]
                }
            }
            Inner::Gaussian { center, sigma } => {
                let v = self.value(x);
                let s2 = sigma * sigma;
                x.iter().zip(center).map(|(a, c)| -v * (a - c) / s2).collect()
            }
            Inner::Cos { freq, phase } => {
                let s = -(dot(freq, x) + phase).sin();
                freq.iter().map(|k| s * k).collect()
            }
            Inner::Product { factors } => {
                let vals: Vec<f64> = factors.iter().map(|f| f.value(x)).collect();
                let mut g = vec![0.0; d];
                for (i, f) in factors.iter().enumerate() {
                    let others: f64 = vals
                        .iter()
                        .enumerate()
                        .filter(|(j, _)| *j != i)
                        .map(|(_, v)| v)
                        .product();
                    axpy(&mut g, others, &f.gradient(x));
                }
                g
            }
        }
    }
}

/// Smooth outer functions `R^k -> R`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Outer {
    /// `w . u + b`
    Affine { w: Vec<f64>, b: f64 },
    /// `sum a_i u_i^2 + w . u + b`
    Quadratic { a: Vec<f64>, w: Vec<f64>, b: f64 },
    /// `tanh(w . u + b)`
    Tanh { w: Vec<f64>, b: f64 },
    /// `prod u_i`
    Product,
}

impl Outer {
    pub fn identity() -> Self {
        Outer::Affine { w: vec![1.0], b: 0.0 }
    }

    /// Number of arguments, when fixed by the parameters.
    pub fn arity(&self) -> Option<usize> {
        match self {
            Outer::Affine { w, .. } | Outer::Tanh { w, .. } => Some(w.len()),
            Outer::Quadratic { a, .. } => Some(a.len()),
            Outer::Product => None,
        }
    }

    pub fn value(&self, u: &[f64]) -> f64 {
        match self {
            Outer::Affine { w, b } => dot(w, u) + b,
            Outer::Quadratic { a, w, b } => u.iter().zip(a).map(|(x, c)| c * x * x).sum::<f64>() + dot(w, u) + b,
            Outer::Tanh { w, b } => (dot(w, u) + b).tanh(),
            Outer::Product => u.iter().product(),
        }
    }

    pub fn partials(&self, u: &[f64]) -> Vec<f64> {
        match self {
            Outer::Affine { w, .. } => w.clone(),
            Outer::Quadratic { a, w, .. } => u.iter().zip(a).zip(w).map(|((x, c), l)| 2.0 * c * x + l).collect(),
            Outer::Tanh { w, b } => {
                let t = (dot(w, u) + b).tanh();
                w.iter().map(|c| c * (1.0 - t * t)).collect()
            }
            Outer::Product => (0..u.len())
                .map(|i| u.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, v)| v).product())
                .collect(),
        }
    }
}

/// Scalar profiles of an atom mass `r` (also used as the outer map `rho` of
/// interaction functionals).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MassProfile {
    /// `r`
    Identity,
    /// `slope * r + intercept`
    Affine { slope: f64, intercept: f64 },
    /// `1` on `[a, 1]`, else 0.
    Above { a: f64 },
    /// `1` when `r` equals `a` up to [`CLASS_TOL`] relative, else 0.
    Equal { a: f64 },
    /// Smoothstep from 0 at `lo` to 1 at `hi` (`C^2`).
    Ramp { lo: f64, hi: f64 },
    /// `(1 - ((r - center)/width)^2)^3` inside the window, 0 outside.
    Bump { center: f64, width: f64 },
}

impl MassProfile {
    pub fn value(&self, r: f64) -> f64 {
        match self {
            MassProfile::Identity => r,
            MassProfile::Affine { slope, intercept } => slope * r + intercept,
            MassProfile::Above { a } => f64::from(r >= *a),
            MassProfile::Equal { a } => f64::from((r - a).abs() <= CLASS_TOL * a.abs().max(f64::MIN_POSITIVE)),
            MassProfile::Ramp { lo, hi } => {
                let s = ((r - lo) / (hi - lo)).clamp(0.0, 1.0);
                s * s * s * (10.0 - 15.0 * s + 6.0 * s * s)
            }
            MassProfile::Bump { center, width } => {
                let s = (r - center) / width;
                if s.abs() < 1.0 {
                    (1.0 - s * s).powi(3)
                } else {
                    0.0
                }
            }
        }
    }

    /// Derivative; zero for the indicator profiles.
    pub fn derivative(&self, r: f64) -> f64 {
        match self {
            MassProfile::Identity => 1.0,
            MassProfile::Affine { slope, .. } => *slope,
            MassProfile::Above { .. } | MassProfile::Equal { .. } => 0.0,
            MassProfile::Ramp { lo, hi } => {
                let s = (r - lo) / (hi - lo);
                if (0.0..=1.0).contains(&s) {
                    30.0 * s * s * (1.0 - s) * (1.0 - s) / (hi - lo)
                } else {
                    0.0
                }
            }
            MassProfile::Bump { center, width } => {
                let s = (r - center) / width;
                if s.abs() < 1.0 {
                    -6.0 * s * (1.0 - s * s).powi(2) / width
                } else {
                    0.0
                }
            }
        }
    }

    pub fn is_smooth(&self) -> bool {
        !matches!(self, MassProfile::Above { .. } | MassProfile::Equal { .. })
    }

    /// Largest `a_min` with the profile vanishing on `(0, a_min)`.
    pub fn a_min(&self) -> Option<f64> {
        match self {
            MassProfile::Above { a } | MassProfile::Equal { a } => Some(*a),
            MassProfile::Ramp { lo, .. } if *lo > 0.0 => Some(*lo),
            MassProfile::Bump { center, width } if center - width > 0.0 => Some(center - width),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            MassProfile::Ramp { lo, hi } if !(hi > lo) => Err(Error::InvalidProfile("ramp needs lo < hi".into())),
            MassProfile::Bump { width, .. } if !(*width > 0.0) => {
                Err(Error::InvalidProfile("bump width must be positive".into()))
            }
            _ => Ok(()),
        }
    }
}

/// Anything with a value on atomic measures and a Wasserstein gradient.
pub trait Functional: Sync {
    fn value(&self, mu: &AtomicMeasure) -> Result<f64>;
    fn gradient(&self, x: &[f64], mu: &AtomicMeasure) -> Result<Vec<f64>>;
}

/// `F(mu) = Psi(int phi_1 dmu, ..., int phi_k dmu)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CylinderFn {
    pub inner: Vec<Inner>,
    pub outer: Outer,
}

impl CylinderFn {
    pub fn new(inner: Vec<Inner>, outer: Outer) -> Result<Self> {
        if inner.is_empty() {
            return Err(Error::InvalidParameter(
                "a cylinder function needs k >= 1 inner functions".into(),
            ));
        }
        if let Some(k) = outer.arity() {
            if k != inner.len() {
                return Err(Error::LengthMismatch {
                    what: "outer arguments",
                    expected: inner.len(),
                    found: k,
                });
            }
        }
        Ok(CylinderFn { inner, outer })
    }

    fn check(&self, d: usize) -> Result<()> {
        self.inner.iter().try_for_each(|f| f.check_dim(d))
    }

    /// The vector `L_Phi(mu)`.
    pub fn statistics(&self, mu: &AtomicMeasure) -> Vec<f64> {
        self.inner.iter().map(|f| mu.integrate(|x| f.value(x))).collect()
    }
}

impl Functional for CylinderFn {
    fn value(&self, mu: &AtomicMeasure) -> Result<f64> {
        self.check(mu.dim())?;
        Ok(self.outer.value(&self.statistics(mu)))
    }

    fn gradient(&self, x: &[f64], mu: &AtomicMeasure) -> Result<Vec<f64>> {
        self.check(mu.dim())?;
        if x.len() != mu.dim() {
            return Err(Error::DimensionMismatch {
                expected: mu.dim(),
                found: x.len(),
            });
        }
        let dpsi = self.outer.partials(&self.statistics(mu));
        let mut g = vec![0.0; x.len()];
        for (f, c) in self.inner.iter().zip(dpsi) {
            axpy(&mut g, c, &f.gradient(x));
        }
        Ok(g)
    }
}

pub fn eval_cyl(f: &CylinderFn, mu: &AtomicMeasure) -> Result<f64> {
    f.value(mu)
}

pub fn grad_cyl(f: &CylinderFn, x: &[f64], mu: &AtomicMeasure) -> Result<Vec<f64>> {
    f.gradient(x, mu)
}

/// Inner function `phi(x, r)` of a generalized cylinder functional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GcInner {
    /// `f(x) * rho(r)`
    Factorized { f: Inner, rho: MassProfile },
    /// `sum_j f_j(x) rho_j(r)`
    Sum { terms: Vec<(Inner, MassProfile)> },
}

impl GcInner {
    pub fn factorized(f: Inner, rho: MassProfile) -> Self {
        GcInner::Factorized { f, rho }
    }

    fn terms(&self) -> Vec<(&Inner, &MassProfile)> {
        match self {
            GcInner::Factorized { f, rho } => vec![(f, rho)],
            GcInner::Sum { terms } => terms.iter().map(|(f, r)| (f, r)).collect(),
        }
    }

    pub fn value(&self, x: &[f64], r: f64) -> f64 {
        self.terms()
            .iter()
            .map(|(f, rho)| {
                let m = rho.value(r);
                if m == 0.0 {
                    0.0
                } else {
                    f.value(x) * m
                }
            })
            .sum()
    }

    pub fn spatial_gradient(&self, x: &[f64], r: f64) -> Vec<f64> {
        let mut g = vec![0.0; x.len()];
        for (f, rho) in self.terms() {
            let m = rho.value(r);
            if m != 0.0 {
                axpy(&mut g, m, &f.gradient(x));
            }
        }
        g
    }

    fn check_dim(&self, d: usize) -> Result<()> {
        self.terms().iter().try_for_each(|(f, _)| f.check_dim(d))
    }
}

/// `F(mu) = Psi(int phi_1(x, mu[x]) dmu(x), ...)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenCylinderFn {
    pub inner: Vec<GcInner>,
    pub outer: Outer,
}

impl GenCylinderFn {
    pub fn new(inner: Vec<GcInner>, outer: Outer) -> Result<Self> {
        if inner.is_empty() {
            return Err(Error::InvalidParameter(
                "a generalized cylinder function needs k >= 1 inner functions".into(),
            ));
        }
        if let Some(k) = outer.arity() {
            if k != inner.len() {
                return Err(Error::LengthMismatch {
                    what: "outer arguments",
                    expected: inner.len(),
                    found: k,
                });
            }
        }
        for g in &inner {
            for (_, rho) in g.terms() {
                rho.validate()?;
            }
        }
        Ok(GenCylinderFn { inner, outer })
    }

    /// Single-term `L_phi` with `Psi = id`.
    pub fn linear(f: Inner, rho: MassProfile) -> Self {
        GenCylinderFn {
            inner: vec![GcInner::factorized(f, rho)],
            outer: Outer::identity(),
        }
    }

    pub fn statistics(&self, mu: &AtomicMeasure) -> Vec<f64> {
        self.inner
            .iter()
            .map(|phi| mu.atoms().map(|(a, x)| a * phi.value(x, a)).sum())
            .collect()
    }

    /// The `(f_i, rho_i)` pairs when every inner function factorizes.
    pub fn factors(&self) -> Result<Vec<(Inner, MassProfile)>> {
        self.inner
            .iter()
            .map(|g| match g {
                GcInner::Factorized { f, rho } => Ok((f.clone(), rho.clone())),
                GcInner::Sum { terms } if terms.len() == 1 => Ok(terms[0].clone()),
                GcInner::Sum { .. } => Err(Error::NonFactorizedInner),
            })
            .collect()
    }
}

impl Functional for GenCylinderFn {
    fn value(&self, mu: &AtomicMeasure) -> Result<f64> {
        self.inner.iter().try_for_each(|g| g.check_dim(mu.dim()))?;
        Ok(self.outer.value(&self.statistics(mu)))
    }

    /// `sum_i d_i Psi(L(mu)) grad_x phi_i(x, mu[x])`; zero away from atoms.
    fn gradient(&self, x: &[f64], mu: &AtomicMeasure) -> Result<Vec<f64>> {
        self.inner.iter().try_for_each(|g| g.check_dim(mu.dim()))?;
        if x.len() != mu.dim() {
            return Err(Error::DimensionMismatch {
                expected: mu.dim(),
                found: x.len(),
            });
        }
        let r = mu.atom_mass(x);
        let mut g = vec![0.0; x.len()];
        if r == 0.0 {
            return Ok(g);
        }
        let dpsi = self.outer.partials(&self.statistics(mu));
        for (phi, c) in self.inner.iter().zip(dpsi) {
            axpy(&mut g, c, &phi.spatial_gradient(x, r));
        }
        Ok(g)
    }
}

pub fn eval_gc(f: &GenCylinderFn, mu: &AtomicMeasure) -> Result<f64> {
    f.value(mu)
}

pub fn grad_gc(f: &GenCylinderFn, x: &[f64], mu: &AtomicMeasure) -> Result<Vec<f64>> {
    f.gradient(x, mu)
}

/// Interaction kernels `h(x, y)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Kernel {
    Zero,
    Const {
        c: f64,
    },
    /// `x . y`
    Dot,
    /// `exp(-|x-y|^2 / (2 sigma^2))`
    Gaussian {
        sigma: f64,
    },
    Cutoff {
        cutoff: CutoffFunction,
    },
}

impl Kernel {
    /// `(h, grad_x h, grad_y h)`.
    pub fn eval(&self, x: &[f64], y: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
        let d = x.len();
        match self {
            Kernel::Zero => (0.0, vec![0.0; d], vec![0.0; d]),
            Kernel::Const { c } => (*c, vec![0.0; d], vec![0.0; d]),
            Kernel::Dot => (dot(x, y), y.to_vec(), x.to_vec()),
            Kernel::Gaussian { sigma } => {
                let s2 = sigma * sigma;
                let v = (-dist2(x, y) / (2.0 * s2)).exp();
                let gx: Vec<f64> = x.iter().zip(y).map(|(a, b)| -v * (a - b) / s2).collect();
                let gy = gx.iter().map(|g| -g).collect();
                (v, gx, gy)
            }
            Kernel::Cutoff { cutoff } => {
                let e = cutoff.eval(x, y);
                (e.value, e.grad_x, e.grad_y)
            }
        }
    }
}

/// `F(mu) = int f(x) rho(int h(x,y) dmu(y)) dmu(x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionFn {
    pub f: Inner,
    pub rho: MassProfile,
    pub h: Kernel,
}

impl InteractionFn {
    fn field(&self, x: &[f64], mu: &AtomicMeasure) -> (f64, Vec<f64>) {
        let mut l = 0.0;
        let mut gl = vec![0.0; x.len()];
        for (a, y) in mu.atoms() {
            let (h, gx, _) = self.h.eval(x, y);
            l += a * h;
            axpy(&mut gl, a, &gx);
        }
        (l, gl)
    }

    /// Value and three-term Wasserstein gradient at `x`.
    pub fn eval_grad(&self, mu: &AtomicMeasure, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.f.check_dim(mu.dim())?;
        if x.len() != mu.dim() {
            return Err(Error::DimensionMismatch {
                expected: mu.dim(),
                found: x.len(),
            });
        }
        let mut value = 0.0;
        let mut g = vec![0.0; x.len()];
        for (a, y) in mu.atoms() {
            let (ly, _) = self.field(y, mu);
            let fy = self.f.value(y);
            value += a * fy * self.rho.value(ly);
            let (_, _, gy) = self.h.eval(y, x);
            axpy(&mut g, a * fy * self.rho.derivative(ly), &gy);
        }
        let (lx, glx) = self.field(x, mu);
        axpy(&mut g, self.rho.value(lx), &self.f.gradient(x));
        axpy(&mut g, self.rho.derivative(lx) * self.f.value(x), &glx);
        Ok((value, g))
    }
}

impl Functional for InteractionFn {
    fn value(&self, mu: &AtomicMeasure) -> Result<f64> {
        self.f.check_dim(mu.dim())?;
        Ok(mu
            .atoms()
            .map(|(a, x)| a * self.f.value(x) * self.rho.value(self.field(x, mu).0))
            .sum())
    }

    fn gradient(&self, x: &[f64], mu: &AtomicMeasure) -> Result<Vec<f64>> {
        self.eval_grad(mu, x).map(|p| p.1)
    }
}

pub fn interaction_eval_grad(g: &InteractionFn, mu: &AtomicMeasure, x: &[f64]) -> Result<(f64, Vec<f64>)> {
    g.eval_grad(mu, x)
}

/// Serialized functional of any of the three kinds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum FunctionalSpec {
    Cylinder(CylinderFn),
    Generalized(GenCylinderFn),
    Interaction(InteractionFn),
}

impl Functional for FunctionalSpec {
    fn value(&self, mu: &AtomicMeasure) -> Result<f64> {
        match self {
            FunctionalSpec::Cylinder(f) => f.value(mu),
            FunctionalSpec::Generalized(f) => f.value(mu),
            FunctionalSpec::Interaction(f) => f.value(mu),
        }
    }

    fn gradient(&self, x: &[f64], mu: &AtomicMeasure) -> Result<Vec<f64>> {
        match self {
            FunctionalSpec::Cylinder(f) => f.gradient(x, mu),
            FunctionalSpec::Generalized(f) => f.gradient(x, mu),
            FunctionalSpec::Interaction(f) => f.gradient(x, mu),
        }
    }
}

/// The cylinder approximation `F_n = Psi(F_{h, rho_1, f_1}, ..., F_{h, rho_k, f_k})`
/// of a generalized cylinder functional with factorized inner functions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CutoffApproximation {
    pub parts: Vec<InteractionFn>,
    pub outer: Outer,
}

impl CutoffApproximation {
    pub fn new(f: &GenCylinderFn, cutoff: &CutoffFunction) -> Result<Self> {
        let factors = f.factors()?;
        let mut parts = Vec::with_capacity(factors.len());
        for (inner, rho) in factors {
            if !rho.is_smooth() {
                return Err(Error::InvalidProfile(
                    "the cutoff approximation needs a differentiable mass profile".into(),
                ));
            }
            parts.push(InteractionFn {
                f: inner,
                rho,
                h: Kernel::Cutoff { cutoff: cutoff.clone() },
            });
        }
        Ok(CutoffApproximation {
            parts,
            outer: f.outer.clone(),
        })
    }
}

impl Functional for CutoffApproximation {
    fn value(&self, mu: &AtomicMeasure) -> Result<f64> {
        let u: Vec<f64> = self.parts.iter().map(|p| p.value(mu)).collect::<Result<_>>()?;
        Ok(self.outer.value(&u))
    }

    fn gradient(&self, x: &[f64], mu: &AtomicMeasure) -> Result<Vec<f64>> {
        let mut u = Vec::with_capacity(self.parts.len());
        let mut grads = Vec::with_capacity(self.parts.len());
        for p in &self.parts {
            let (v, g) = p.eval_grad(mu, x)?;
            u.push(v);
            grads.push(g);
        }
        let mut g = vec![0.0; x.len()];
        for (c, gi) in self.outer.partials(&u).into_iter().zip(&grads) {
            axpy(&mut g, c, gi);
        }
        Ok(g)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApproximationReport {
    pub r: f64,
    /// `E_Q |F_n - F|^r`
    pub value_error: Estimate,
    /// `E_Q int |grad F_n - grad F|^r dmu`
    pub gradient_error: Estimate,
    pub cutoff: CutoffFunction,
}

/// Monte Carlo `L^r(Q)` errors between a generalized cylinder functional and
/// its cutoff approximation.
pub fn gc_cutoff_approximation(
    f: &GenCylinderFn,
    cutoff: &CutoffFunction,
    law: &RandomMeasureLaw,
    r: f64,
    n_mc: usize,
    seed: u64,
) -> Result<ApproximationReport> {
    let approx = CutoffApproximation::new(f, cutoff)?;
    law.validate()?;
    if !(r >= 1.0) {
        return Err(Error::InvalidParameter(format!("exponent r = {r} must be >= 1")));
    }
    if n_mc < 2 {
        return Err(Error::InvalidParameter(
            "at least 2 Monte Carlo samples are required".into(),
        ));
    }
    let samples: Vec<(f64, f64)> = (0..n_mc as u64)
        .into_par_iter()
        .map(|i| {
            let mu = sample_measure_indexed(law, seed, i)?;
            let ve = (approx.value(&mu)? - f.value(&mu)?).abs().powf(r);
            let mut ge = 0.0;
            for (a, x) in mu.atoms() {
                let gn = approx.gradient(x, &mu)?;
                let gf = f.gradient(x, &mu)?;
                ge += a * dist2(&gn, &gf).sqrt().powf(r);
            }
            Ok((ve, ge))
        })
        .collect::<Result<_>>()?;
    let v: Vec<f64> = samples.iter().map(|s| s.0).collect();
    let g: Vec<f64> = samples.iter().map(|s| s.1).collect();
    Ok(ApproximationReport {
        r,
        value_error: Estimate::from_samples(&v),
        gradient_error: Estimate::from_samples(&g),
        cutoff: cutoff.clone(),
    })
}

fn rand_vec<R: Rng>(rng: &mut R, d: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..d).map(|_| rng.random_range(lo..hi)).collect()
}

/// A random smooth inner function on `R^d`.
pub fn random_inner<R: Rng>(rng: &mut R, d: usize) -> Inner {
    match rng.random_range(0..6) {
        0 => Inner::Linear {
            w: rand_vec(rng, d, -1.0, 1.0),
            b: rng.random_range(-1.0..1.0),
        },
        1 => Inner::Bump {
            center: rand_vec(rng, d, 0.0, 1.0),
            radius: rng.random_range(0.5..1.5),
        },
        2 => Inner::Gaussian {
            center: rand_vec(rng, d, 0.0, 1.0),
            sigma: rng.random_range(0.3..1.0),
        },
        3 => Inner::Cos {
            freq: rand_vec(rng, d, -3.0, 3.0),
            phase: rng.random_range(0.0..std::f64::consts::TAU),
        },
        4 => Inner::Product {
            factors: vec![
                Inner::Cos {
                    freq: rand_vec(rng, d, -2.0, 2.0),
                    phase: rng.random_range(0.0..1.0),
                },
                Inner::Gaussian {
                    center: rand_vec(rng, d, 0.0, 1.0),
                    sigma: rng.random_range(0.5..1.0),
                },
            ],
        },
        _ => Inner::Const {
            c: rng.random_range(-1.0..1.0),
        },
    }
}

/// A random smooth outer function of `k` arguments.
pub fn random_outer<R: Rng>(rng: &mut R, k: usize) -> Outer {
    match rng.random_range(0..4) {
        0 => Outer::Affine {
            w: rand_vec(rng, k, -1.0, 1.0),
            b: rng.random_range(-1.0..1.0),
        },
        1 => Outer::Quadratic {
            a: rand_vec(rng, k, -1.0, 1.0),
            w: rand_vec(rng, k, -1.0, 1.0),
            b: 0.0,
        },
        2 => Outer::Tanh {
            w: rand_vec(rng, k, -1.0, 1.0),
            b: rng.random_range(-0.5..0.5),
        },
        _ => Outer::Product,
    }
}

pub fn random_cylinder<R: Rng>(rng: &mut R, d: usize) -> CylinderFn {
    let k = rng.random_range(1..=3);
    CylinderFn {
        inner: (0..k).map(|_| random_inner(rng, d)).collect(),
        outer: random_outer(rng, k),
    }
}

/// A random smooth mass profile.
pub fn random_profile<R: Rng>(rng: &mut R) -> MassProfile {
    match rng.random_range(0..4) {
        0 => MassProfile::Identity,
        1 => MassProfile::Affine {
            slope: rng.random_range(-1.0..1.0),
            intercept: rng.random_range(-1.0..1.0),
        },
        2 => {
            let lo = rng.random_range(0.0..0.3);
            MassProfile::Ramp {
                lo,
                hi: lo + rng.random_range(0.2..0.7),
            }
        }
        _ => MassProfile::Bump {
            center: rng.random_range(0.2..0.6),
            width: rng.random_range(0.3..0.8),
        },
    }
}

pub fn random_gen_cylinder<R: Rng>(rng: &mut R, d: usize) -> GenCylinderFn {
    let k = rng.random_range(1..=3);
    GenCylinderFn {
        inner: (0..k)
            .map(|_| GcInner::factorized(random_inner(rng, d), random_profile(rng)))
            .collect(),
        outer: random_outer(rng, k),
    }
}

pub fn random_interaction<R: Rng>(rng: &mut R, d: usize) -> InteractionFn {
    let h = match rng.random_range(0..4) {
        0 => Kernel::Dot,
        1 => Kernel::Gaussian {
            sigma: rng.random_range(0.3..1.0),
        },
        2 => Kernel::Const {
            c: rng.random_range(-1.0..1.0),
        },
        _ => Kernel::Zero,
    };
    InteractionFn {
        f: random_inner(rng, d),
        rho: random_profile(rng),
        h,
    }
}

/// Central finite difference of `F` when atom `i` moves along `v`, next to
/// the predicted `a_i grad_W F(x_i) . v`. Returns `(fd, predicted)`.
pub fn single_atom_derivative<F: Functional + ?Sized>(
    f: &F,
    mu: &AtomicMeasure,
    i: usize,
    v: &[f64],
    s: f64,
) -> Result<(f64, f64)> {
    let d = mu.dim();
    let shifted = |sign: f64| {
        let mut c = mu.coords().to_vec();
        for k in 0..d {
            c[i * d + k] += sign * s * v[k];
        }
        AtomicMeasure::from_flat(d, mu.weights(), c)
    };
    let fd = (f.value(&shifted(1.0)?)? - f.value(&shifted(-1.0)?)?) / (2.0 * s);
    let pred = mu.weights()[i] * dot(&f.gradient(mu.location(i), mu)?, v);
    Ok((fd, pred))
}

/// Seeded helper for probes: a reproducible generator for catalog draws.
pub fn catalog_rng(seed: u64, index: u64) -> crate::rng::StreamRng {
    stream(seed, "catalog", index)
}
