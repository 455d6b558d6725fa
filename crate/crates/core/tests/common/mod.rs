#![allow(dead_code)]

use std::collections::HashMap;

use atomflow::measures::{euclidean, AtomicMeasure};
use atomflow::rng::StreamRng;
use rand::Rng;

/// Minimal transport cost by exhaustive search over the vertices of the
/// transport polytope.
///
/// Every vertex has a forest as support, and a forest has a leaf: some row
/// (or column) whose whole mass goes to a single partner. Removing the leaf
/// leaves a vertex of the reduced problem, so recursing over all
/// (leaf, partner) choices reaches every vertex.
pub fn brute_force_cost(a: &[f64], b: &[f64], cost: &[Vec<f64>]) -> f64 {
    let mut memo = HashMap::new();
    solve(a.to_vec(), b.to_vec(), cost, false, &mut memo)
}

/// Smallest bottleneck `max c_ij` over the vertices; the bottleneck optimum
/// is attained at a vertex of the face of plans supported below it.
pub fn brute_force_bottleneck(a: &[f64], b: &[f64], cost: &[Vec<f64>]) -> f64 {
    let mut memo = HashMap::new();
    solve(a.to_vec(), b.to_vec(), cost, true, &mut memo)
}

const ZERO: f64 = 1e-13;

fn key(a: &[f64], b: &[f64]) -> Vec<u64> {
    a.iter()
        .chain(b)
        .map(|v| if v.abs() <= ZERO { 0 } else { v.to_bits() })
        .collect()
}

fn solve(a: Vec<f64>, b: Vec<f64>, cost: &[Vec<f64>], bottleneck: bool, memo: &mut HashMap<Vec<u64>, f64>) -> f64 {
    let rows: Vec<usize> = (0..a.len()).filter(|&i| a[i] > ZERO).collect();
    let cols: Vec<usize> = (0..b.len()).filter(|&j| b[j] > ZERO).collect();
    if rows.is_empty() || cols.is_empty() {
        return 0.0;
    }
    let k = key(&a, &b);
    if let Some(&v) = memo.get(&k) {
        return v;
    }
    let mut best = f64::INFINITY;
    let mut join = |m: f64, c: f64, rest: f64| {
        let v = if bottleneck { c.max(rest) } else { m * c + rest };
        best = best.min(v);
    };
    for &i in &rows {
        for &j in &cols {
            // Row i as a leaf attached to column j.
            if a[i] <= b[j] + ZERO {
                let (mut a2, mut b2) = (a.clone(), b.clone());
                let m = a[i];
                a2[i] = 0.0;
                b2[j] = (b[j] - m).max(0.0);
                join(m, cost[i][j], solve(a2, b2, cost, bottleneck, memo));
            }
            // Column j as a leaf attached to row i.
            if b[j] <= a[i] + ZERO {
                let (mut a2, mut b2) = (a.clone(), b.clone());
                let m = b[j];
                b2[j] = 0.0;
                a2[i] = (a[i] - m).max(0.0);
                join(m, cost[i][j], solve(a2, b2, cost, bottleneck, memo));
            }
        }
    }
    memo.insert(k, best);
    best
}

/// `W_p` of the brute-force optimum.
pub fn brute_force_wasserstein(mu: &AtomicMeasure, nu: &AtomicMeasure, p: f64) -> f64 {
    let cost: Vec<Vec<f64>> = (0..mu.len())
        .map(|i| {
            (0..nu.len())
                .map(|j| euclidean(mu.location(i), nu.location(j)).powf(p))
                .collect()
        })
        .collect();
    brute_force_cost(mu.weights(), nu.weights(), &cost).powf(1.0 / p)
}

/// Random measure with `1..=max_atoms` atoms in `[0,1]^d`.
pub fn random_measure(rng: &mut StreamRng, d: usize, max_atoms: usize) -> AtomicMeasure {
    let n = rng.random_range(1..=max_atoms);
    let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
    let s: f64 = w.iter().sum();
    let w: Vec<f64> = w.iter().map(|v| v / s).collect();
    let x: Vec<f64> = (0..n * d).map(|_| rng.random::<f64>()).collect();
    AtomicMeasure::from_flat(d, &w, x).unwrap()
}

/// Central difference of `f` at `x` along `v` with step `h`.
pub fn central_difference<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], v: &[f64], h: f64) -> f64 {
    let p: Vec<f64> = x.iter().zip(v).map(|(a, b)| a + h * b).collect();
    let m: Vec<f64> = x.iter().zip(v).map(|(a, b)| a - h * b).collect();
    (f(&p) - f(&m)) / (2.0 * h)
}

pub fn random_unit<R: Rng>(rng: &mut R, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let n = v.iter().map(|c| c * c).sum::<f64>().sqrt();
        if n > 0.1 && n <= 1.0 {
            return v.into_iter().map(|c| c / n).collect();
        }
    }
}
