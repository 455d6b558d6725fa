//! Random atomic measures: a weight law on the simplex combined with i.i.d.
//! locations from an atomless base law.

use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measures::{em, AtomicMeasure, WeightSequence, DEFAULT_TRUNCATION};
use crate::rng::{stream, StreamRng};
use crate::stats::Estimate;

/// Law of the weight sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WeightLaw {
    /// GEM weights: sticks `V_i ~ Beta(1, beta)`.
    StickBreaking { beta: f64 },
    /// `N ~ Poisson(lambda)`, then `N + 1` equal weights.
    Poisson { lambda: f64 },
    /// A deterministic weight vector.
    Fixed { weights: Vec<f64> },
}

/// Atomless law of the atom locations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BaseLaw {
    UniformBox {
        lower: Vec<f64>,
        upper: Vec<f64>,
    },
    /// Gaussian with row-major covariance matrix.
    Gaussian {
        mean: Vec<f64>,
        cov: Vec<Vec<f64>>,
    },
    /// Uniform on the unit circle in `R^2`.
    UniformCircle,
    /// Uniform on the unit sphere in `R^3`.
    UniformSphere,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomMeasureLaw {
    pub weight_law: WeightLaw,
    pub base_law: BaseLaw,
    #[serde(default = "default_truncation")]
    pub truncation: f64,
}

fn default_truncation() -> f64 {
    DEFAULT_TRUNCATION
}

impl WeightLaw {
    pub fn validate(&self) -> Result<()> {
        match self {
            WeightLaw::StickBreaking { beta } if !(*beta > 0.0 && beta.is_finite()) => Err(Error::InvalidParameter(
                format!("stick-breaking beta = {beta} must be positive"),
            )),
            WeightLaw::Poisson { lambda } if !(*lambda > 0.0 && lambda.is_finite()) => Err(Error::InvalidParameter(
                format!("poisson lambda = {lambda} must be positive"),
            )),
            WeightLaw::Fixed { weights } => WeightSequence::new(weights.clone(), 0.0).map(|_| ()),
            _ => Ok(()),
        }
    }
}

impl std::str::FromStr for WeightLaw {
    type Err = Error;

    /// `poisson:1`, `stick:2`, `fixed:0.5,0.3,0.2`.
    fn from_str(s: &str) -> Result<Self> {
        let (kind, arg) = s.split_once(':').unwrap_or((s, ""));
        let num = |a: &str| {
            a.trim()
                .parse::<f64>()
                .map_err(|_| Error::Parse(format!("bad number {a:?} in weight law {s:?}")))
        };
        let law = match kind {
            "poisson" => WeightLaw::Poisson { lambda: num(arg)? },
            "stick" | "stick_breaking" => WeightLaw::StickBreaking { beta: num(arg)? },
            "fixed" => WeightLaw::Fixed {
                weights: arg.split(',').map(num).collect::<Result<_>>()?,
            },
            "uniform" => {
                let n = arg
                    .trim()
                    .parse::<usize>()
                    .map_err(|_| Error::Parse(format!("bad atom count in {s:?}")))?;
                WeightLaw::Fixed {
                    weights: vec![1.0 / n as f64; n],
                }
            }
            _ => return Err(Error::Parse(format!("unknown weight law {s:?}"))),
        };
        law.validate()?;
        Ok(law)
    }
}

impl BaseLaw {
    pub fn unit_box(d: usize) -> Self {
        BaseLaw::UniformBox {
            lower: vec![0.0; d],
            upper: vec![1.0; d],
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            BaseLaw::UniformBox { lower, .. } => lower.len(),
            BaseLaw::Gaussian { mean, .. } => mean.len(),
            BaseLaw::UniformCircle => 2,
            BaseLaw::UniformSphere => 3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            BaseLaw::UniformBox { lower, upper } => {
                if lower.is_empty() || lower.len() != upper.len() {
                    return Err(Error::InvalidBase(
                        "box bounds must be non-empty and of equal length".into(),
                    ));
                }
                if lower
                    .iter()
                    .zip(upper)
                    .any(|(l, u)| !(u > l) || !l.is_finite() || !u.is_finite())
                {
                    return Err(Error::InvalidBase(
                        "box must have lower < upper in every coordinate".into(),
                    ));
                }
                Ok(())
            }
            BaseLaw::Gaussian { mean, cov } => {
                if mean.is_empty() || cov.len() != mean.len() || cov.iter().any(|r| r.len() != mean.len()) {
                    return Err(Error::InvalidBase("covariance shape does not match the mean".into()));
                }
                cholesky(cov).map(|_| ())
            }
            _ => Ok(()),
        }
    }

    /// Diameter of the support (`inf` for the Gaussian).
    pub fn diameter(&self) -> f64 {
        match self {
            BaseLaw::UniformBox { lower, upper } => lower
                .iter()
                .zip(upper)
                .map(|(l, u)| (u - l) * (u - l))
                .sum::<f64>()
                .sqrt(),
            BaseLaw::Gaussian { .. } => f64::INFINITY,
            BaseLaw::UniformCircle | BaseLaw::UniformSphere => 2.0,
        }
    }

    /// Sup of the Lebesgue density, where one exists.
    pub fn density_bound(&self) -> Option<f64> {
        match self {
            BaseLaw::UniformBox { lower, upper } => {
                Some(1.0 / lower.iter().zip(upper).map(|(l, u)| u - l).product::<f64>())
            }
            BaseLaw::Gaussian { cov, .. } => {
                let l = cholesky(cov).ok()?;
                let d = cov.len();
                let det_sqrt: f64 = (0..d).map(|i| l[i][i]).product();
                Some(1.0 / ((2.0 * std::f64::consts::PI).powf(d as f64 / 2.0) * det_sqrt))
            }
            BaseLaw::UniformCircle | BaseLaw::UniformSphere => None,
        }
    }

    /// Lebesgue density at `x` for the flat laws (`None` on the circle and sphere).
    pub fn density(&self, x: &[f64]) -> Option<f64> {
        match self {
            BaseLaw::UniformBox { lower, upper } => {
                let inside = x
                    .iter()
                    .zip(lower.iter().zip(upper))
                    .all(|(v, (l, u))| *v >= *l && *v <= *u);
                Some(if inside { self.density_bound()? } else { 0.0 })
            }
            BaseLaw::Gaussian { mean, cov } => {
                let l = cholesky(cov).ok()?;
                let d = mean.len();
                // Solve L z = x - mean.
                let mut z = vec![0.0; d];
                for i in 0..d {
                    let s: f64 = (0..i).map(|k| l[i][k] * z[k]).sum();
                    z[i] = (x[i] - mean[i] - s) / l[i][i];
                }
                let q: f64 = z.iter().map(|v| v * v).sum();
                Some(self.density_bound()? * (-0.5 * q).exp())
            }
            BaseLaw::UniformCircle | BaseLaw::UniformSphere => None,
        }
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        match self {
            BaseLaw::UniformBox { lower, upper } => lower
                .iter()
                .zip(upper)
                .map(|(l, u)| l + (u - l) * rng.random::<f64>())
                .collect(),
            BaseLaw::Gaussian { mean, cov } => {
                let l = cholesky(cov).expect("validated covariance");
                let z: Vec<f64> = (0..mean.len()).map(|_| StandardNormal.sample(rng)).collect();
                (0..mean.len())
                    .map(|i| mean[i] + (0..=i).map(|k| l[i][k] * z[k]).sum::<f64>())
                    .collect()
            }
            BaseLaw::UniformCircle => {
                let th = std::f64::consts::TAU * rng.random::<f64>();
                vec![th.cos(), th.sin()]
            }
            BaseLaw::UniformSphere => loop {
                let z: [f64; 3] = [
                    StandardNormal.sample(rng),
                    StandardNormal.sample(rng),
                    StandardNormal.sample(rng),
                ];
                let r = (z[0] * z[0] + z[1] * z[1] + z[2] * z[2]).sqrt();
                if r > 1e-12 {
                    break vec![z[0] / r, z[1] / r, z[2] / r];
                }
            },
        }
    }
}

impl std::str::FromStr for BaseLaw {
    type Err = Error;

    /// `box:d` (unit cube), `gaussian:d` (standard), `circle`, `sphere`.
    fn from_str(s: &str) -> Result<Self> {
        let (kind, arg) = s.split_once(':').unwrap_or((s, ""));
        let dim = || {
            arg.trim()
                .parse::<usize>()
                .ok()
                .filter(|&d| d > 0)
                .ok_or_else(|| Error::Parse(format!("bad dimension in base law {s:?}")))
        };
        match kind {
            "box" | "uniform_box" => Ok(BaseLaw::unit_box(dim()?)),
            "gaussian" => {
                let d = dim()?;
                Ok(BaseLaw::Gaussian {
                    mean: vec![0.0; d],
                    cov: (0..d)
                        .map(|i| (0..d).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
                        .collect(),
                })
            }
            "circle" | "uniform_circle" => Ok(BaseLaw::UniformCircle),
            "sphere" | "uniform_sphere" => Ok(BaseLaw::UniformSphere),
            _ => Err(Error::Parse(format!("unknown base law {s:?}"))),
        }
    }
}

/// Lower Cholesky factor of a symmetric positive definite matrix.
pub fn cholesky(a: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let n = a.len();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            if (a[i][j] - a[j][i]).abs() > 1e-12 * (1.0 + a[i][j].abs()) {
                return Err(Error::InvalidBase("covariance is not symmetric".into()));
            }
            let s: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
            if i == j {
                let v = a[i][i] - s;
                if !(v > 0.0) {
                    return Err(Error::InvalidBase("covariance is not positive definite".into()));
                }
                l[i][j] = v.sqrt();
            } else {
                l[i][j] = (a[i][j] - s) / l[j][j];
            }
        }
    }
    Ok(l)
}

impl RandomMeasureLaw {
    pub fn new(weight_law: WeightLaw, base_law: BaseLaw) -> Self {
        RandomMeasureLaw {
            weight_law,
            base_law,
            truncation: DEFAULT_TRUNCATION,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.weight_law.validate()?;
        self.base_law.validate()?;
        if !(self.truncation > 0.0 && self.truncation <= 1e-2) {
            return Err(Error::InvalidParameter(format!(
                "truncation {} outside (0, 1e-2]",
                self.truncation
            )));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.base_law.dim()
    }
}

/// Unsorted stick-breaking weights `a_i = V_i prod_{j<i} (1 - V_j)`, stopped
/// once the remaining stick is below `tau`. Returns the weights and the
/// remaining stick.
pub fn stick_breaking_sticks<R: Rng>(beta: f64, tau: f64, rng: &mut R) -> (Vec<f64>, f64) {
    let mut rest = 1.0;
    let mut w = Vec::new();
    while rest >= tau {
        let u: f64 = rng.random();
        let v = 1.0 - u.powf(1.0 / beta);
        let a = v * rest;
        if a > 0.0 {
            w.push(a);
        }
        rest -= a;
    }
    (w, rest.max(0.0))
}

/// Draw a weight sequence using an explicit generator.
pub fn sample_weights_with<R: Rng>(law: &RandomMeasureLaw, rng: &mut R) -> Result<WeightSequence> {
    match &law.weight_law {
        WeightLaw::StickBreaking { beta } => {
            let (w, _) = stick_breaking_sticks(*beta, law.truncation, rng);
            let tail = (1.0 - w.iter().sum::<f64>()).max(0.0);
            if w.is_empty() {
                return WeightSequence::new(vec![1.0], 0.0);
            }
            WeightSequence::new(w, tail)
        }
        WeightLaw::Poisson { lambda } => {
            let n = Poisson::new(*lambda)
                .map_err(|e| Error::InvalidParameter(e.to_string()))?
                .sample(rng) as usize;
            WeightSequence::uniform(n + 1)
        }
        WeightLaw::Fixed { weights } => WeightSequence::new(weights.clone(), 0.0),
    }
}

/// Draw a weight sequence from the stream `(seed, "weights", 0)`.
pub fn sample_weights(law: &RandomMeasureLaw, seed: u64) -> Result<WeightSequence> {
    law.validate()?;
    sample_weights_with(law, &mut stream(seed, "weights", 0))
}

/// Draw a measure using separate generators for weights and locations.
///
/// A truncated tail becomes one extra atom at a freshly sampled location;
/// its mass is recorded as the measure's tail mass.
pub fn sample_measure_with(
    law: &RandomMeasureLaw,
    wrng: &mut StreamRng,
    xrng: &mut StreamRng,
) -> Result<AtomicMeasure> {
    let ws = sample_weights_with(law, wrng)?;
    let w = ws.concrete_weights();
    let mut locs: Vec<Vec<f64>> = Vec::with_capacity(w.len());
    while locs.len() < w.len() {
        let x = law.base_law.sample(xrng);
        if !locs.contains(&x) {
            locs.push(x);
        }
    }
    Ok(em(&w, &locs)?.with_tail_mass(ws.tail_mass()))
}

pub fn sample_measure(law: &RandomMeasureLaw, seed: u64) -> Result<AtomicMeasure> {
    law.validate()?;
    sample_measure_with(law, &mut stream(seed, "weights", 0), &mut stream(seed, "locations", 0))
}

/// The `index`-th member of a reproducible family of samples.
pub fn sample_measure_indexed(law: &RandomMeasureLaw, seed: u64, index: u64) -> Result<AtomicMeasure> {
    sample_measure_with(
        law,
        &mut stream(seed, "weights", index),
        &mut stream(seed, "locations", index),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BarycenterCoefficients {
    /// `E[sum_{i != j} a_i a_j]`
    pub c1: Estimate,
    /// `E[sum_i a_i^2]`
    pub c2: Estimate,
}

fn pair_sums(w: &[f64]) -> (f64, f64) {
    let s: f64 = w.iter().sum();
    let q: f64 = w.iter().map(|a| a * a).sum();
    (s * s - q, q)
}

pub fn estimate_barycenter_coeffs(
    law: &RandomMeasureLaw,
    n_samples: usize,
    seed: u64,
) -> Result<BarycenterCoefficients> {
    law.validate()?;
    if n_samples < 100 {
        return Err(Error::InvalidParameter("at least 100 samples are required".into()));
    }
    let pairs: Vec<(f64, f64)> = (0..n_samples as u64)
        .into_par_iter()
        .map(|i| {
            sample_weights_with(law, &mut stream(seed, "bary-weights", i)).map(|w| pair_sums(&w.concrete_weights()))
        })
        .collect::<Result<_>>()?;
    let c1: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let c2: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    Ok(BarycenterCoefficients {
        c1: Estimate::from_samples(&c1),
        c2: Estimate::from_samples(&c2),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BarycenterReport {
    /// `E_Q[int f dmu]`
    pub first_lhs: Estimate,
    /// `E_nu[f]`
    pub first_rhs: Estimate,
    /// `E_Q[int g dmu x mu]`
    pub second_lhs: Estimate,
    /// `c1 E[g(x,y)] + c2 E[g(z,z)]`
    pub second_rhs: Estimate,
    pub coefficients: BarycenterCoefficients,
    pub first_order_ok: bool,
    pub second_order_ok: bool,
    /// `|c1 + c2 - 1| <= 3 sigma`
    pub normalization_ok: bool,
}

/// Monte Carlo check of the first- and second-order barycenter identities.
///
/// The right-hand sides are estimated from independent streams: each sample
/// draws fresh weights `a` and points `x, y, z ~ nu` and scores
/// `(1 - sum a_i^2) g(x,y) + sum a_i^2 g(z,z)`, an unbiased estimator of
/// `c1 E g(x,y) + c2 E g(z,z)`. Agreement is judged at 3 pooled standard errors.
pub fn verify_barycenter_identity<F, G>(
    law: &RandomMeasureLaw,
    f: F,
    g: G,
    n_samples: usize,
    seed: u64,
) -> Result<BarycenterReport>
where
    F: Fn(&[f64]) -> f64 + Sync,
    G: Fn(&[f64], &[f64]) -> f64 + Sync,
{
    law.validate()?;
    if n_samples < 2 {
        return Err(Error::InvalidParameter("at least 2 samples are required".into()));
    }
    let lhs: Vec<(f64, f64)> = (0..n_samples as u64)
        .into_par_iter()
        .map(|i| {
            let mu = sample_measure_indexed(law, seed, i)?;
            let first = mu.integrate(&f);
            let mut second = 0.0;
            for (a, x) in mu.atoms() {
                for (b, y) in mu.atoms() {
                    second += a * b * g(x, y);
                }
            }
            Ok((first, second))
        })
        .collect::<Result<_>>()?;
    let rhs: Vec<(f64, f64, f64)> = (0..n_samples as u64)
        .into_par_iter()
        .map(|i| {
            let w = sample_weights_with(law, &mut stream(seed, "rhs-weights", i))?.concrete_weights();
            let (_, q) = pair_sums(&w);
            let mut r = stream(seed, "rhs-points", i);
            let x = law.base_law.sample(&mut r);
            let y = law.base_law.sample(&mut r);
            let z = law.base_law.sample(&mut r);
            Ok((f(&x), (1.0 - q) * g(&x, &y) + q * g(&z, &z), q))
        })
        .collect::<Result<_>>()?;
    let col = |v: &[(f64, f64)], k: usize| v.iter().map(|p| if k == 0 { p.0 } else { p.1 }).collect::<Vec<_>>();
    let first_lhs = Estimate::from_samples(&col(&lhs, 0));
    let second_lhs = Estimate::from_samples(&col(&lhs, 1));
    let first_rhs = Estimate::from_samples(&rhs.iter().map(|t| t.0).collect::<Vec<_>>());
    let second_rhs = Estimate::from_samples(&rhs.iter().map(|t| t.1).collect::<Vec<_>>());
    let coefficients = estimate_barycenter_coeffs(law, n_samples.max(100), seed)?;
    let sum = Estimate {
        mean: coefficients.c1.mean + coefficients.c2.mean,
        // c1 + c2 is computed per sample; its error is that of the sum of the two columns.
        stderr: coefficients.c1.stderr.hypot(coefficients.c2.stderr),
        n: coefficients.c1.n,
    };
    Ok(BarycenterReport {
        first_order_ok: first_lhs.agrees_with(&first_rhs, 3.0),
        second_order_ok: second_lhs.agrees_with(&second_rhs, 3.0),
        normalization_ok: sum.agrees_with(&Estimate::exact(1.0), 3.0) || (sum.mean - 1.0).abs() < 1e-12,
        first_lhs,
        first_rhs,
        second_lhs,
        second_rhs,
        coefficients,
    })
}
