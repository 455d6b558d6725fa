//! Rebuilding atomic liftings from sampled curves, and checks on them.
//!
//! A curve of atomic measures admits a lifting with constant weights only if
//! its weight spectrum (the weight classes and their sizes) does not change in
//! time. [`weight_spectrum_audit`] tests that, [`reconstruct_lifting`] pairs
//! atoms inside each class between consecutive nodes, and
//! [`verify_lifting`] measures how well a lifting reproduces a curve.

use serde::{Deserialize, Serialize};

use crate::dynamics::{Lifting, LiftingEnsemble, NonLocalField};
use crate::error::{Error, Result};
use crate::measures::{euclidean, AtomicMeasure, MeasureCurve};
use crate::rng::stream;
use crate::sampling::{sample_weights_with, RandomMeasureLaw};
use crate::stats::{variance_estimate, Estimate};
use crate::transport::{hungarian, wasserstein_p};

/// Default relative tolerance for grouping weights.
pub const SPECTRUM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightClass {
    pub weight: f64,
    pub size: usize,
    /// `members[k]` lists the atom indices of node `k` in this class.
    pub members: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightClassDecomposition {
    pub classes: Vec<WeightClass>,
    pub tol: f64,
}

impl WeightClassDecomposition {
    /// `sum_a a N_a`.
    pub fn total_mass(&self) -> f64 {
        self.classes.iter().map(|c| c.weight * c.size as f64).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumRejection {
    pub from: usize,
    pub to: usize,
    /// Weight of the first class that differs.
    pub class_weight: f64,
    pub size_before: usize,
    pub size_after: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum SpectrumAudit {
    Accepted(WeightClassDecomposition),
    Rejected(SpectrumRejection),
}

impl SpectrumAudit {
    pub fn is_accepted(&self) -> bool {
        matches!(self, SpectrumAudit::Accepted(_))
    }
}

/// Groups sorted-by-weight atoms into classes: `(weight, indices)`.
fn group_weights(mu: &AtomicMeasure, tol: f64) -> Vec<(f64, Vec<usize>)> {
    let mut order: Vec<usize> = (0..mu.len()).collect();
    let w = mu.weights();
    order.sort_by(|&i, &j| w[j].total_cmp(&w[i]).then(i.cmp(&j)));
    let mut classes: Vec<(f64, Vec<usize>)> = Vec::new();
    for i in order {
        match classes.last_mut() {
            Some((a, idx)) if (w[i] - *a).abs() <= tol * *a => idx.push(i),
            _ => classes.push((w[i], vec![i])),
        }
    }
    classes
}

/// Checks that weight classes and their sizes are the same at every node.
pub fn weight_spectrum_audit(curve: &MeasureCurve, tol: f64) -> SpectrumAudit {
    let states = curve.states();
    let first = group_weights(&states[0], tol);
    let mut members: Vec<Vec<Vec<usize>>> = first.iter().map(|(_, idx)| vec![idx.clone()]).collect();
    for k in 1..states.len() {
        let cur = group_weights(&states[k], tol);
        for c in 0..first.len().max(cur.len()) {
            let before = first.get(c);
            let after = cur.get(c);
            let ok = match (before, after) {
                (Some((a, ia)), Some((b, ib))) => (a - b).abs() <= tol * a && ia.len() == ib.len(),
                _ => false,
            };
            if !ok {
                let class_weight = before.or(after).map(|p| p.0).unwrap_or(0.0);
                let size_before = before.map_or(0, |p| p.1.len());
                let size_after = match (before, after) {
                    (Some((a, _)), _) => cur
                        .iter()
                        .find(|(b, _)| (a - b).abs() <= tol * a)
                        .map_or(0, |p| p.1.len()),
                    (None, Some(p)) => p.1.len(),
                    (None, None) => 0,
                };
                let atoms_before = states[k - 1].len();
                let atoms_after = states[k].len();
                return SpectrumAudit::Rejected(SpectrumRejection {
                    from: k - 1,
                    to: k,
                    class_weight,
                    size_before,
                    size_after,
                    reason: format!(
                        "class of weight {class_weight} has {size_before} atoms at node {} and {size_after} at node {k} ({atoms_before} vs {atoms_after} atoms)",
                        k - 1
                    ),
                });
            }
        }
        for (m, (_, idx)) in members.iter_mut().zip(cur) {
            m.push(idx);
        }
    }
    SpectrumAudit::Accepted(WeightClassDecomposition {
        classes: first
            .into_iter()
            .zip(members)
            .map(|((weight, idx), members)| WeightClass {
                weight,
                size: idx.len(),
                members,
            })
            .collect(),
        tol,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionReport {
    pub classes: usize,
    /// Sum over steps and classes of the optimal matching cost.
    pub matching_cost: f64,
    /// Nodes where two same-class atoms were closer than twice the step displacement.
    pub ambiguous_nodes: Vec<usize>,
    pub predicted: bool,
}

/// Pairs atoms of each weight class between consecutive nodes by min-cost
/// assignment with cost `|x_hat - y|^p`, where `x_hat` is the explicit Euler
/// prediction under `b` (or the previous position).
pub fn reconstruct_lifting(
    curve: &MeasureCurve,
    b: Option<&NonLocalField>,
    p: f64,
) -> Result<(Lifting, ReconstructionReport)> {
    if !(p >= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "matching exponent must be >= 1, got {p}"
        )));
    }
    let decomp = match weight_spectrum_audit(curve, SPECTRUM_TOL) {
        SpectrumAudit::Accepted(d) => d,
        SpectrumAudit::Rejected(r) => {
            return Err(Error::SpectrumRejected {
                from: r.from,
                to: r.to,
                reason: r.reason,
            })
        }
    };
    let dim = curve.dim();
    if let Some(b) = b {
        b.validate(dim)?;
    }
    let states = curve.states();
    let times = curve.times();
    let n_nodes = times.len();

    let mut weights = Vec::new();
    let mut traj: Vec<Vec<f64>> = Vec::new();
    // Per class: index of the node-k atom currently held by each trajectory.
    let mut slots: Vec<(usize, Vec<usize>)> = Vec::new();
    for class in &decomp.classes {
        let mut held = Vec::with_capacity(class.size);
        for &i in &class.members[0] {
            weights.push(states[0].weights()[i]);
            let mut t = Vec::with_capacity(n_nodes * dim);
            t.extend_from_slice(states[0].location(i));
            held.push(traj.len());
            traj.push(t);
        }
        slots.push((class.size, held));
    }

    let mut total_cost = 0.0;
    let mut ambiguous = Vec::new();
    for k in 0..n_nodes - 1 {
        let h = times[k + 1] - times[k];
        let vel = match b {
            Some(b) => Some(b.velocities(times[k], states[k].coords(), dim, &states[k])?),
            None => None,
        };
        let mut flagged = false;
        for (class, (n, held)) in decomp.classes.iter().zip(&slots) {
            let n = *n;
            let src: Vec<Vec<f64>> = held
                .iter()
                .map(|&tr| traj[tr][k * dim..(k + 1) * dim].to_vec())
                .collect();
            let predicted: Vec<Vec<f64>> = class.members[k]
                .iter()
                .zip(&src)
                .map(|(&i, x)| match &vel {
                    Some(v) => x
                        .iter()
                        .zip(&v[i * dim..(i + 1) * dim])
                        .map(|(a, s)| a + h * s)
                        .collect(),
                    None => x.clone(),
                })
                .collect();
            let dst: Vec<&[f64]> = class.members[k + 1]
                .iter()
                .map(|&j| states[k + 1].location(j))
                .collect();
            let mut cost = vec![0.0; n * n];
            for r in 0..n {
                for c in 0..n {
                    cost[r * n + c] = euclidean(&predicted[r], dst[c]).powf(p);
                }
            }
            let (assign, c) = hungarian(&cost, n)?;
            total_cost += c;
            let disp = (0..n).map(|r| euclidean(&src[r], dst[assign[r]])).fold(0.0, f64::max);
            if !flagged && n > 1 {
                'pairs: for r in 0..n {
                    for s in r + 1..n {
                        if euclidean(&src[r], &src[s]) < 2.0 * disp {
                            flagged = true;
                            break 'pairs;
                        }
                    }
                }
            }
            for r in 0..n {
                traj[held[r]].extend_from_slice(dst[assign[r]]);
            }
        }
        if flagged {
            ambiguous.push(k);
        }
    }

    let lifting = Lifting {
        dim,
        weights,
        tail_mass: states[0].tail_mass(),
        times: times.to_vec(),
        trajectories: traj,
    };
    Ok((
        lifting,
        ReconstructionReport {
            classes: decomp.classes.len(),
            matching_cost: total_cost,
            ambiguous_nodes: ambiguous,
            predicted: b.is_some(),
        },
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiftingReport {
    /// `W_p(em(a, gamma(t_k)), mu_{t_k})` per node.
    pub marginal_errors: Vec<f64>,
    pub max_marginal_error: f64,
    /// Per atom `max_k |(gamma(t_{k+1}) - gamma(t_k)) / h - b(t_k, gamma(t_k), mu_k)|`.
    pub ode_residuals: Option<Vec<f64>>,
    pub max_ode_residual: Option<f64>,
}

/// Marginal errors against `curve` and, given `b`, the discrete ODE residual.
pub fn verify_lifting(
    lambda: &Lifting,
    curve: &MeasureCurve,
    b: Option<&NonLocalField>,
    p: f64,
) -> Result<LiftingReport> {
    let times = curve.times();
    if lambda.times.len() != times.len() || lambda.times.iter().zip(times).any(|(a, b)| (a - b).abs() > 1e-12) {
        return Err(Error::GridMismatch);
    }
    if lambda.dim != curve.dim() {
        return Err(Error::DimensionMismatch {
            expected: curve.dim(),
            found: lambda.dim,
        });
    }
    let states = curve.states();
    let marginal_errors = (0..times.len())
        .map(|k| Ok(wasserstein_p(&lambda.marginal(k)?, &states[k], p)?.distance))
        .collect::<Result<Vec<f64>>>()?;
    let max_marginal_error = marginal_errors.iter().copied().fold(0.0, f64::max);
    let ode_residuals = match b {
        None => None,
        Some(b) => {
            b.validate(lambda.dim)?;
            let d = lambda.dim;
            let mut res = vec![0.0f64; lambda.len()];
            for k in 0..times.len() - 1 {
                let h = times[k + 1] - times[k];
                let pos = lambda.positions_at(k);
                let vel = b.velocities(times[k], &pos, d, &states[k])?;
                for (i, r) in res.iter_mut().enumerate() {
                    let (x0, x1) = (lambda.position(i, k), lambda.position(i, k + 1));
                    let e = (0..d)
                        .map(|c| ((x1[c] - x0[c]) / h - vel[i * d + c]).powi(2))
                        .sum::<f64>()
                        .sqrt();
                    *r = r.max(e);
                }
            }
            Some(res)
        }
    };
    let max_ode_residual = ode_residuals.as_ref().map(|r| r.iter().copied().fold(0.0, f64::max));
    Ok(LiftingReport {
        marginal_errors,
        max_marginal_error,
        ode_residuals,
        max_ode_residual,
    })
}

/// `F_a(mu) = #{atoms with weight >= a}`.
pub fn f_a_count(mu: &AtomicMeasure, a: f64) -> f64 {
    mu.weights().iter().filter(|&&w| w >= a).count() as f64
}

/// `F_a(mu) = int 1_{[a,1]}(mu[x]) dmu(x)`, the total mass of atoms with weight `>= a`.
pub fn f_a_mass(mu: &AtomicMeasure, a: f64) -> f64 {
    mu.weights().iter().filter(|&&w| w >= a).sum()
}

fn count_weights(w: &[f64], a: f64) -> f64 {
    w.iter().filter(|&&x| x >= a).count() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SobolevReport {
    pub a: f64,
    pub liftings: usize,
    /// Largest `max_t F_a - min_t F_a` over the ensemble liftings.
    pub max_variation: f64,
    pub constant_along_liftings: bool,
    pub mean: Estimate,
    pub variance: Estimate,
    /// Variance exceeds three standard errors while `|DF_a| = 0` along every lifting.
    pub poincare_fails: bool,
    pub n_mc: usize,
}

/// Evaluates the counting functional `F_a` along liftings and under the law.
pub fn sobolev_counterexample(
    law: &RandomMeasureLaw,
    a: f64,
    ensemble: &LiftingEnsemble,
    n_mc: usize,
    seed: u64,
) -> Result<SobolevReport> {
    law.validate()?;
    if !(a > 0.0 && a <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "threshold must lie in (0, 1], got {a}"
        )));
    }
    if n_mc < 2 {
        return Err(Error::InvalidParameter("need at least two Monte Carlo samples".into()));
    }
    let mut rng = stream(seed, "sobolev", 0);
    let mut values = Vec::with_capacity(n_mc);
    let mut first: Option<Vec<f64>> = None;
    let mut degenerate = true;
    for _ in 0..n_mc {
        let w = sample_weights_with(law, &mut rng)?;
        let c = w.concrete_weights();
        values.push(count_weights(&c, a));
        match &first {
            None => first = Some(c),
            Some(f) if degenerate && *f != c => degenerate = false,
            _ => {}
        }
    }
    if degenerate {
        return Err(Error::DegenerateLaw);
    }
    let mut max_variation = 0.0f64;
    for lifting in &ensemble.members {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for k in 0..lifting.times.len() {
            let v = f_a_count(&lifting.marginal(k)?, a);
            lo = lo.min(v);
            hi = hi.max(v);
        }
        max_variation = max_variation.max(hi - lo);
    }
    let mean = Estimate::from_samples(&values);
    let variance = variance_estimate(&values);
    Ok(SobolevReport {
        a,
        liftings: ensemble.members.len(),
        max_variation,
        constant_along_liftings: max_variation == 0.0,
        mean,
        variance,
        poincare_fails: max_variation == 0.0 && variance.mean > 3.0 * variance.stderr,
        n_mc,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::integrate_particles;
    use crate::measures::make_atomic;

    fn pts(w: &[f64], x: &[f64]) -> AtomicMeasure {
        make_atomic(w, &x.iter().map(|&v| vec![v]).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn static_curve_accepted() {
        let mu = pts(&[0.5, 0.25, 0.25], &[0.0, 1.0, 2.0]);
        let c = MeasureCurve::new(vec![0.0, 1.0], vec![mu.clone(), mu]).unwrap();
        match weight_spectrum_audit(&c, SPECTRUM_TOL) {
            SpectrumAudit::Accepted(d) => {
                assert_eq!(d.classes.len(), 2);
                assert!((d.total_mass() - 1.0).abs() < 1e-12);
            }
            r => panic!("{r:?}"),
        }
    }

    #[test]
    fn branching_rejected() {
        let m0 = pts(&[0.5, 0.5], &[0.0, 1.0]);
        let m1 = pts(&[0.25; 4], &[0.0, 0.1, 1.0, 1.1]);
        let c = MeasureCurve::new(vec![0.0, 1.0], vec![m0, m1]).unwrap();
        match weight_spectrum_audit(&c, SPECTRUM_TOL) {
            SpectrumAudit::Rejected(r) => {
                assert_eq!((r.from, r.to), (0, 1));
                assert_eq!(r.class_weight, 0.5);
            }
            r => panic!("{r:?}"),
        }
    }

    #[test]
    fn translating_pair_round_trip() {
        let mu = pts(&[0.7, 0.3], &[0.0, 5.0]);
        let b = NonLocalField::Constant { v: vec![1.0] };
        let l = integrate_particles(&mu, &b, 1.0, 0.1).unwrap();
        let curve = l.to_curve().unwrap();
        let (r, rep) = reconstruct_lifting(&curve, Some(&b), 2.0).unwrap();
        assert!(rep.ambiguous_nodes.is_empty());
        for i in 0..2 {
            let j = r.weights.iter().position(|&w| w == l.weights[i]).unwrap();
            for k in 0..l.times.len() {
                assert!(euclidean(r.position(j, k), l.position(i, k)) < 1e-12);
            }
        }
        let v = verify_lifting(&r, &curve, Some(&b), 2.0).unwrap();
        assert_eq!(v.max_marginal_error, 0.0);
        assert!(v.max_ode_residual.unwrap() < 1e-9);
    }

    #[test]
    fn permuted_class_keeps_marginals() {
        let mu = pts(&[0.5, 0.5], &[0.0, 1.0]);
        let b = NonLocalField::Constant { v: vec![0.5] };
        let l = integrate_particles(&mu, &b, 1.0, 0.25).unwrap();
        let curve = l.to_curve().unwrap();
        let mut swapped = l.clone();
        let d = l.dim;
        for k in 2..l.times.len() {
            for c in 0..d {
                let (a, bb) = (swapped.trajectories[0][k * d + c], swapped.trajectories[1][k * d + c]);
                swapped.trajectories[0][k * d + c] = bb;
                swapped.trajectories[1][k * d + c] = a;
            }
        }
        let v = verify_lifting(&swapped, &curve, None, 2.0).unwrap();
        assert_eq!(v.max_marginal_error, 0.0);
    }

    #[test]
    fn grid_mismatch() {
        let mu = pts(&[1.0], &[0.0]);
        let l = integrate_particles(&mu, &NonLocalField::Zero, 1.0, 0.5).unwrap();
        let c = MeasureCurve::new(vec![0.0, 1.0], vec![mu.clone(), mu]).unwrap();
        assert_eq!(verify_lifting(&l, &c, None, 1.0), Err(Error::GridMismatch));
    }

    #[test]
    fn f_a_versions() {
        let mu = pts(&[0.5, 0.3, 0.2], &[0.0, 1.0, 2.0]);
        assert_eq!(f_a_count(&mu, 0.3), 2.0);
        assert!((f_a_mass(&mu, 0.3) - 0.8).abs() < 1e-15);
    }
}
