//! Finite purely atomic probability measures in canonical form.
//!
//! An [`AtomicMeasure`] is `sum_i a_i delta_{x_i}` with distinct locations.
//! The canonical form orders atoms by non-increasing weight and breaks ties
//! by lexicographic order of the coordinates, so two measures describing the
//! same mass distribution compare equal field-by-field.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Atoms closer than this are merged at construction.
pub const MERGE_RADIUS: f64 = 1e-12;
/// Accepted deviation of the input total mass from one.
pub const INPUT_MASS_TOL: f64 = 1e-9;
/// Deviation from one after which weights are renormalized.
pub const RENORMALIZE_TOL: f64 = 1e-12;
/// Default truncation level for infinite weight sequences.
pub const DEFAULT_TRUNCATION: f64 = 1e-6;

/// Lexicographic comparison of two points of equal dimension.
pub fn lex_cmp(a: &[f64], b: &[f64]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            Ordering::Equal => continue,
            o => return o,
        }
    }
    Ordering::Equal
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Non-increasing mass fractions plus the residual mass left by truncation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightSequence {
    weights: Vec<f64>,
    tail_mass: f64,
}

impl WeightSequence {
    /// Sorts `weights` in non-increasing order and checks the mass balance.
    pub fn new(mut weights: Vec<f64>, tail_mass: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&tail_mass) {
            return Err(Error::InvalidParameter(format!("tail mass {tail_mass} outside [0,1)")));
        }
        for (index, &value) in weights.iter().enumerate() {
            if !(value > 0.0) || !value.is_finite() {
                return Err(Error::NonPositiveWeight { index, value });
            }
        }
        let sum: f64 = weights.iter().sum::<f64>() + tail_mass;
        if (sum - 1.0).abs() > INPUT_MASS_TOL {
            return Err(Error::MassNotOne { sum });
        }
        weights.sort_by(|a, b| b.total_cmp(a));
        Ok(WeightSequence { weights, tail_mass })
    }

    /// `n` equal weights `1/n`.
    pub fn uniform(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidParameter("uniform weights need n >= 1".into()));
        }
        Ok(WeightSequence {
            weights: vec![1.0 / n as f64; n],
            tail_mass: 0.0,
        })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn tail_mass(&self) -> f64 {
        self.tail_mass
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Weights of a concrete measure: the tail, if any, becomes one extra atom.
    pub fn concrete_weights(&self) -> Vec<f64> {
        let mut w = self.weights.clone();
        if self.tail_mass > 0.0 {
            w.push(self.tail_mass);
        }
        w
    }

    /// Strictly decreasing up to `tol`: consecutive gaps all exceed `tol`.
    pub fn is_strictly_decreasing(&self, tol: f64) -> bool {
        strictly_decreasing(&self.weights, tol).is_ok()
    }
}

/// `Err(i)` names the first index with `w[i] - w[i+1] <= tol`.
pub fn strictly_decreasing(weights: &[f64], tol: f64) -> std::result::Result<(), usize> {
    match weights.windows(2).position(|p| p[0] - p[1] <= tol) {
        Some(i) => Err(i),
        None => Ok(()),
    }
}

/// Canonical finite purely atomic probability measure on `R^dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MeasureRecord", into = "MeasureRecord")]
pub struct AtomicMeasure {
    dim: usize,
    weights: Vec<f64>,
    coords: Vec<f64>,
    tail_mass: f64,
}

/// Serialized shape of a measure.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MeasureRecord {
    pub dim: usize,
    pub weights: Vec<f64>,
    pub locations: Vec<Vec<f64>>,
    #[serde(default)]
    pub tail_mass: f64,
}

impl TryFrom<MeasureRecord> for AtomicMeasure {
    type Error = Error;

    fn try_from(r: MeasureRecord) -> Result<Self> {
        let mut m = make_atomic_with_dim(r.dim, &r.weights, &r.locations)?;
        m.tail_mass = r.tail_mass;
        Ok(m)
    }
}

impl From<AtomicMeasure> for MeasureRecord {
    fn from(m: AtomicMeasure) -> Self {
        MeasureRecord {
            dim: m.dim,
            locations: m.coords.chunks(m.dim).map(<[f64]>::to_vec).collect(),
            weights: m.weights,
            tail_mass: m.tail_mass,
        }
    }
}

/// Build a canonical measure from weights and points.
///
/// Duplicate (or near-duplicate, closer than [`MERGE_RADIUS`]) locations are
/// merged by summing their weights.
pub fn make_atomic(weights: &[f64], locations: &[Vec<f64>]) -> Result<AtomicMeasure> {
    let dim = locations.first().map(Vec::len).unwrap_or(0);
    make_atomic_with_dim(dim, weights, locations)
}

fn make_atomic_with_dim(dim: usize, weights: &[f64], locations: &[Vec<f64>]) -> Result<AtomicMeasure> {
    if weights.len() != locations.len() {
        return Err(Error::LengthMismatch {
            what: "locations",
            expected: weights.len(),
            found: locations.len(),
        });
    }
    let mut coords = Vec::with_capacity(dim * locations.len());
    for loc in locations {
        if loc.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: loc.len(),
            });
        }
        coords.extend_from_slice(loc);
    }
    AtomicMeasure::from_flat(dim, weights, coords)
}

/// `em(a, x) = sum_i a_i delta_{x_i}` for pairwise distinct `x`.
///
/// `a` must have the same length as `x` (use
/// [`WeightSequence::concrete_weights`] for truncated sequences).
pub fn em(weights: &[f64], x: &[Vec<f64>]) -> Result<AtomicMeasure> {
    if weights.len() != x.len() {
        return Err(Error::LengthMismatch {
            what: "locations",
            expected: weights.len(),
            found: x.len(),
        });
    }
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&i, &j| lex_cmp(&x[i], &x[j]));
    for p in order.windows(2) {
        if x[p[0]] == x[p[1]] {
            let (first, second) = (p[0].min(p[1]), p[0].max(p[1]));
            return Err(Error::DuplicateLocation { first, second });
        }
    }
    make_atomic(weights, x)
}

impl AtomicMeasure {
    /// Canonicalize from a flat coordinate buffer (`coords.len() == dim * weights.len()`).
    pub fn from_flat(dim: usize, weights: &[f64], coords: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter("dimension must be positive".into()));
        }
        if coords.len() != dim * weights.len() {
            return Err(Error::LengthMismatch {
                what: "coordinates",
                expected: dim * weights.len(),
                found: coords.len(),
            });
        }
        if weights.is_empty() {
            return Err(Error::MassNotOne { sum: 0.0 });
        }
        for (index, &value) in weights.iter().enumerate() {
            if !(value > 0.0) || !value.is_finite() {
                return Err(Error::NonPositiveWeight { index, value });
            }
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidParameter("non-finite coordinate".into()));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > INPUT_MASS_TOL {
            return Err(Error::MassNotOne { sum });
        }

        let n = weights.len();
        let loc = |i: usize| &coords[i * dim..(i + 1) * dim];
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| lex_cmp(loc(i), loc(j)));

        // Greedy clustering in lexicographic order. Any representative within
        // MERGE_RADIUS of a point has its first coordinate within MERGE_RADIUS
        // too, so only a window of recent representatives needs checking.
        let mut reps: Vec<usize> = Vec::with_capacity(n);
        let mut mass: Vec<f64> = Vec::with_capacity(n);
        for &i in &order {
            let xi = loc(i);
            let mut merged = false;
            for r in (0..reps.len()).rev() {
                let xr = loc(reps[r]);
                if xi[0] - xr[0] >= MERGE_RADIUS {
                    break;
                }
                if xi == xr || euclidean(xi, xr) < MERGE_RADIUS {
                    mass[r] += weights[i];
                    merged = true;
                    break;
                }
            }
            if !merged {
                reps.push(i);
                mass.push(weights[i]);
            }
        }

        let total: f64 = mass.iter().sum();
        if (total - 1.0).abs() > RENORMALIZE_TOL {
            for m in &mut mass {
                *m /= total;
            }
        }

        let mut atoms: Vec<(f64, usize)> = mass.into_iter().zip(reps).collect();
        atoms.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| lex_cmp(loc(a.1), loc(b.1))));
        let mut out_w = Vec::with_capacity(atoms.len());
        let mut out_c = Vec::with_capacity(atoms.len() * dim);
        for (w, i) in atoms {
            out_w.push(w);
            out_c.extend_from_slice(loc(i));
        }
        Ok(AtomicMeasure {
            dim,
            weights: out_w,
            coords: out_c,
            tail_mass: 0.0,
        })
    }

    /// Dirac mass at `x`.
    pub fn dirac(x: &[f64]) -> Self {
        AtomicMeasure {
            dim: x.len(),
            weights: vec![1.0],
            coords: x.to_vec(),
            tail_mass: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn location(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn locations(&self) -> Vec<Vec<f64>> {
        self.coords.chunks(self.dim).map(<[f64]>::to_vec).collect()
    }

    /// Iterate over `(weight, location)` pairs in canonical order.
    pub fn atoms(&self) -> impl Iterator<Item = (f64, &[f64])> {
        self.weights.iter().copied().zip(self.coords.chunks(self.dim))
    }

    /// Mass of the atom standing in for a truncated tail (0 when none).
    pub fn tail_mass(&self) -> f64 {
        self.tail_mass
    }

    pub fn with_tail_mass(mut self, tail_mass: f64) -> Self {
        self.tail_mass = tail_mass;
        self
    }

    pub fn total_mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// `mu[x] = mu({x})`, exact location equality.
    pub fn atom_mass(&self, x: &[f64]) -> f64 {
        if x.len() != self.dim {
            return 0.0;
        }
        self.atoms().find(|(_, y)| *y == x).map(|(w, _)| w).unwrap_or(0.0)
    }

    /// Total mass of `mu* = sum_x mu({x})^2 delta_x`.
    pub fn mu_star_mass(&self) -> f64 {
        self.weights.iter().map(|a| a * a).sum()
    }

    pub fn weight_sequence(&self) -> WeightSequence {
        WeightSequence {
            weights: self.weights.clone(),
            tail_mass: 0.0,
        }
    }

    /// Image measure under `f`; atoms mapped to the same point merge.
    pub fn pushforward<F>(&self, out_dim: usize, mut f: F) -> Result<AtomicMeasure>
    where
        F: FnMut(&[f64]) -> Vec<f64>,
    {
        let mut coords = Vec::with_capacity(out_dim * self.len());
        for (_, x) in self.atoms() {
            let y = f(x);
            if y.len() != out_dim {
                return Err(Error::DimensionMismatch {
                    expected: out_dim,
                    found: y.len(),
                });
            }
            coords.extend(y);
        }
        Ok(AtomicMeasure::from_flat(out_dim, &self.weights, coords)?.with_tail_mass(self.tail_mass))
    }

    /// `int f dmu`.
    pub fn integrate<F: Fn(&[f64]) -> f64>(&self, f: F) -> f64 {
        self.atoms().map(|(w, x)| w * f(x)).sum()
    }
}

/// Mass fractions `Σ a_i²`.
pub fn mu_star_mass(mu: &AtomicMeasure) -> f64 {
    mu.mu_star_mass()
}

pub fn atom_mass(mu: &AtomicMeasure, x: &[f64]) -> f64 {
    mu.atom_mass(x)
}

/// A curve of atomic measures sampled on a strictly increasing time grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CurveRecord", into = "CurveRecord")]
pub struct MeasureCurve {
    times: Vec<f64>,
    states: Vec<AtomicMeasure>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CurveRecord {
    pub times: Vec<f64>,
    pub states: Vec<AtomicMeasure>,
}

impl TryFrom<CurveRecord> for MeasureCurve {
    type Error = Error;

    fn try_from(r: CurveRecord) -> Result<Self> {
        MeasureCurve::new(r.times, r.states)
    }
}

impl From<MeasureCurve> for CurveRecord {
    fn from(c: MeasureCurve) -> Self {
        CurveRecord {
            times: c.times,
            states: c.states,
        }
    }
}

pub fn check_grid(times: &[f64]) -> Result<()> {
    if times.is_empty() {
        return Err(Error::InvalidGrid("empty time grid".into()));
    }
    if times.iter().any(|t| !t.is_finite()) {
        return Err(Error::InvalidGrid("non-finite time".into()));
    }
    if times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidGrid("times must be strictly increasing".into()));
    }
    Ok(())
}

impl MeasureCurve {
    pub fn new(times: Vec<f64>, states: Vec<AtomicMeasure>) -> Result<Self> {
        check_grid(&times)?;
        if times.len() != states.len() {
            return Err(Error::LengthMismatch {
                what: "states",
                expected: times.len(),
                found: states.len(),
            });
        }
        let dim = states[0].dim();
        if let Some(s) = states.iter().find(|s| s.dim() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: s.dim(),
            });
        }
        Ok(MeasureCurve { times, states })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn states(&self) -> &[AtomicMeasure] {
        &self.states
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.states[0].dim()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(x: &[f64]) -> Vec<f64> {
        x.to_vec()
    }

    #[test]
    fn dirac_at_origin() {
        let m = make_atomic(&[1.0], &[p(&[0.0, 0.0])]).unwrap();
        assert_eq!(m.len(), 1);
        assert_eq!(m.weights(), &[1.0]);
        assert_eq!(m.location(0), &[0.0, 0.0]);
    }

    #[test]
    fn duplicate_locations_merge() {
        let m = make_atomic(&[0.6, 0.4], &[p(&[1.0]), p(&[1.0])]).unwrap();
        assert_eq!(m.len(), 1);
        assert_eq!(m.weights(), &[1.0]);
        assert_eq!(m.location(0), &[1.0]);
    }

    #[test]
    fn near_duplicates_merge() {
        let m = make_atomic(&[0.5, 0.5], &[p(&[1.0]), p(&[1.0 + 1e-13])]).unwrap();
        assert_eq!(m.len(), 1);
        let m = make_atomic(&[0.5, 0.5], &[p(&[1.0]), p(&[1.0 + 1e-9])]).unwrap();
        assert_eq!(m.len(), 2);
    }

    #[test]
    fn weights_sorted_with_locations() {
        let m = make_atomic(&[0.2, 0.5, 0.3], &[p(&[0.0]), p(&[1.0]), p(&[2.0])]).unwrap();
        assert_eq!(m.weights(), &[0.5, 0.3, 0.2]);
        assert_eq!(m.location(0), &[1.0]);
        assert_eq!(m.location(1), &[2.0]);
        assert_eq!(m.location(2), &[0.0]);
    }

    #[test]
    fn ties_broken_lexicographically() {
        let m = make_atomic(&[0.5, 0.5], &[p(&[1.0, 0.0]), p(&[0.0, 3.0])]).unwrap();
        assert_eq!(m.location(0), &[0.0, 3.0]);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(
            make_atomic(&[1.5, -0.5], &[p(&[0.0]), p(&[1.0])]),
            Err(Error::NonPositiveWeight { index: 1, .. })
        ));
        assert!(matches!(
            make_atomic(&[0.5, 0.4], &[p(&[0.0]), p(&[1.0])]),
            Err(Error::MassNotOne { .. })
        ));
        assert!(matches!(
            make_atomic(&[0.5, 0.5], &[p(&[0.0]), p(&[1.0, 2.0])]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn em_requires_distinct_points() {
        assert!(matches!(
            em(&[0.5, 0.5], &[p(&[0.0]), p(&[0.0])]),
            Err(Error::DuplicateLocation { first: 0, second: 1 })
        ));
        let d = em(&[1.0], &[p(&[0.0])]).unwrap();
        assert_eq!(d, AtomicMeasure::dirac(&[0.0]));
        let two = em(&[0.5, 0.5], &[p(&[0.0]), p(&[1.0])]).unwrap();
        assert_eq!(two.weights(), &[0.5, 0.5]);
    }

    #[test]
    fn atom_mass_reads_off() {
        let x = [p(&[0.0]), p(&[1.0]), p(&[-2.0])];
        let m = em(&[0.5, 0.3, 0.2], &x).unwrap();
        assert_eq!(m.atom_mass(&x[0]), 0.5);
        assert_eq!(m.atom_mass(&x[1]), 0.3);
        assert_eq!(m.atom_mass(&[2.0]), 0.0);
        let half = em(&[0.5, 0.5], &[p(&[0.0]), p(&[1.0])]).unwrap();
        assert_eq!(half.atom_mass(&[2.0]), 0.0);
        assert_eq!(AtomicMeasure::dirac(&[0.0]).atom_mass(&[0.0]), 1.0);
    }

    #[test]
    fn mu_star_examples() {
        assert_eq!(AtomicMeasure::dirac(&[3.0]).mu_star_mass(), 1.0);
        let m = em(&[0.5, 0.3, 0.2], &[p(&[0.0]), p(&[1.0]), p(&[2.0])]).unwrap();
        assert!((m.mu_star_mass() - 0.38).abs() < 1e-15);
        let n = 7;
        let u: Vec<Vec<f64>> = (0..n).map(|i| vec![i as f64]).collect();
        let m = em(&vec![1.0 / n as f64; n], &u).unwrap();
        assert!((m.mu_star_mass() - 1.0 / n as f64).abs() < 1e-15);
    }

    #[test]
    fn strictness_predicate() {
        let w = WeightSequence::new(vec![0.5, 0.3, 0.2], 0.0).unwrap();
        assert!(w.is_strictly_decreasing(1e-12));
        let w = WeightSequence::new(vec![0.25; 4], 0.0).unwrap();
        assert!(!w.is_strictly_decreasing(1e-12));
    }

    #[test]
    fn json_shape() {
        let m = em(&[0.75, 0.25], &[p(&[0.0, 1.0]), p(&[2.0, 3.0])]).unwrap();
        let v = serde_json::to_value(&m).unwrap();
        assert_eq!(v["dim"], 2);
        assert_eq!(v["weights"][0], 0.75);
        assert_eq!(v["locations"][1][1], 3.0);
        assert_eq!(v["tail_mass"], 0.0);
        let back: AtomicMeasure = serde_json::from_value(v).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn curve_requires_increasing_times() {
        let d = AtomicMeasure::dirac(&[0.0]);
        assert!(MeasureCurve::new(vec![0.0, 0.0], vec![d.clone(), d.clone()]).is_err());
        assert!(MeasureCurve::new(vec![0.0, 1.0], vec![d.clone()]).is_err());
        assert!(MeasureCurve::new(vec![0.0, 1.0], vec![d.clone(), AtomicMeasure::dirac(&[0.0, 1.0])]).is_err());
        assert!(MeasureCurve::new(vec![0.0, 1.0], vec![d.clone(), d]).is_ok());
    }
}
