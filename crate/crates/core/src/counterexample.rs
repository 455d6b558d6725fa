//! The binary branching curve on `[0, 1]`.
//!
//! At times `t_k = 1 - 2^-k` every atom splits in two; the branch that takes
//! bit `omega_k = 1` moves right at unit speed until `t_{k+1}`. The curve is
//! `W_inf`-Lipschitz and purely atomic at every time, yet its atom count
//! doubles at every branch time, so no lifting with constant weights exists.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measures::{AtomicMeasure, MeasureCurve};
use crate::rng::stream;
use crate::superposition::{weight_spectrum_audit, SpectrumAudit, SPECTRUM_TOL};
use crate::transport::wasserstein_inf;

/// Largest enumeration depth (`2^21` atoms).
pub const MAX_DEPTH: usize = 20;

/// `t_k = 1 - 2^-k`.
pub fn branch_time(k: usize) -> f64 {
    1.0 - 0.5f64.powi(k as i32)
}

/// The `n` with `t in [t_n, t_{n+1})`.
pub fn level(t: f64) -> Result<usize> {
    if !(0.0..1.0).contains(&t) {
        return Err(Error::InvalidParameter(format!("level needs t in [0, 1), got {t}")));
    }
    let mut n = 0;
    while branch_time(n + 1) <= t {
        n += 1;
    }
    Ok(n)
}

fn check_time(t: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::InvalidParameter(format!("time must lie in [0, 1], got {t}")));
    }
    Ok(())
}

/// Position of branch `omega` at time `t`, times `1 - t` when `distorted`.
pub fn branch_position(omega: &[bool], t: f64, distorted: bool) -> Result<f64> {
    check_time(t)?;
    if t == 1.0 {
        if distorted {
            return Ok(0.0);
        }
        return Err(Error::InsufficientDepth {
            len: omega.len(),
            level: omega.len(),
        });
    }
    let n = level(t)?;
    if omega.len() <= n {
        return Err(Error::InsufficientDepth {
            len: omega.len(),
            level: n,
        });
    }
    let mut x: f64 = (0..n).filter(|&k| omega[k]).map(|k| 0.5f64.powi(k as i32 + 1)).sum();
    if omega[n] {
        x += t - branch_time(n);
    }
    Ok(if distorted { (1.0 - t) * x } else { x })
}

/// Positions of all `2^{n+1}` branches of length `n + 1` at `t` (level `n`).
/// Bit `k` of the index is `omega_k`.
fn all_positions(t: f64, n: usize, distorted: bool) -> Vec<f64> {
    let m = 1usize << (n + 1);
    let tail = t - branch_time(n);
    let scale = if distorted { 1.0 - t } else { 1.0 };
    (0..m)
        .map(|code| {
            let mut x = 0.0;
            for k in 0..n {
                if code >> k & 1 == 1 {
                    x += 0.5f64.powi(k as i32 + 1);
                }
            }
            if code >> n & 1 == 1 {
                x += tail;
            }
            scale * x
        })
        .collect()
}

/// The measure at time `t`: uniform over the branch positions, merged.
pub fn counterexample_measure(t: f64, distorted: bool, max_depth: usize) -> Result<AtomicMeasure> {
    check_time(t)?;
    if t == 1.0 {
        if distorted {
            return Ok(AtomicMeasure::dirac(&[0.0]));
        }
        return Err(Error::InvalidParameter(
            "the undistorted curve is only built on [0, 1)".into(),
        ));
    }
    let cap = max_depth.min(MAX_DEPTH);
    let n = level(t)?;
    if n > cap {
        return Err(Error::InsufficientDepth { len: cap + 1, level: n });
    }
    let x = all_positions(t, n, distorted);
    let w = vec![0.5f64.powi(n as i32 + 1); x.len()];
    AtomicMeasure::from_flat(1, &w, x)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LipschitzReport {
    pub pairs: usize,
    pub depth: usize,
    pub distorted: bool,
    pub max_ratio: f64,
    pub argmax: (f64, f64),
    /// Undistorted: `max_ratio <= 1 + 1e-9`. Distorted: always true.
    pub within_bound: bool,
}

/// Exact `W_inf(mu_s, mu_t) / |t - s|` over random pairs with `s, t < t_{depth+1}`.
pub fn lipschitz_audit(n_pairs: usize, seed: u64, distorted: bool, depth: usize) -> Result<LipschitzReport> {
    let depth = depth.min(MAX_DEPTH);
    let hi = branch_time(depth + 1);
    let mut rng = stream(seed, "lipschitz-pairs", 0);
    let mut max_ratio = 0.0f64;
    let mut argmax = (0.0, 0.0);
    let mut done = 0;
    while done < n_pairs {
        let s = rng.random_range(0.0..hi);
        let t = rng.random_range(0.0..hi);
        if s == t {
            continue;
        }
        let (s, t) = if s < t { (s, t) } else { (t, s) };
        let w = wasserstein_inf(
            &counterexample_measure(s, distorted, depth)?,
            &counterexample_measure(t, distorted, depth)?,
        )?;
        let r = w.distance / (t - s);
        if r > max_ratio {
            max_ratio = r;
            argmax = (s, t);
        }
        done += 1;
    }
    Ok(LipschitzReport {
        pairs: n_pairs,
        depth,
        distorted,
        max_ratio,
        argmax,
        within_bound: distorted || max_ratio <= 1.0 + 1e-9,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObstructionReport {
    pub depth: usize,
    /// `t_n - 2^{-(n+3)}` and `t_n + 2^{-(n+3)}`.
    pub times: (f64, f64),
    pub atoms_before: usize,
    pub atoms_after: usize,
    pub spectrum: SpectrumAudit,
    pub spectrum_rejected: bool,
    /// Number of branch curves of the depth-`n` lifting.
    pub lifting_curves: usize,
    pub distinct_curves: usize,
    pub max_atom_mass: f64,
}

/// Weight-spectrum audit across `t_n` and the atom masses of the depth-`n` lifting.
pub fn lifting_obstruction_audit(depth: usize) -> Result<ObstructionReport> {
    if depth == 0 || depth > MAX_DEPTH {
        return Err(Error::InvalidParameter(format!(
            "depth must lie in 1..={MAX_DEPTH}, got {depth}"
        )));
    }
    let tn = branch_time(depth);
    let delta = 0.5f64.powi(depth as i32 + 3);
    let (s, t) = (tn - delta, tn + delta);
    let before = counterexample_measure(s, false, depth)?;
    let after = counterexample_measure(t, false, depth)?;
    let (atoms_before, atoms_after) = (before.len(), after.len());
    let curve = MeasureCurve::new(vec![s, t], vec![before, after])?;
    let spectrum = weight_spectrum_audit(&curve, SPECTRUM_TOL);

    // Curves are determined by their endpoints at t_{n+1}, which are the binary
    // expansions of omega.
    let mut ends = all_positions(branch_time(depth + 1) - f64::EPSILON, depth, false);
    let m = ends.len();
    ends.sort_by(f64::total_cmp);
    let mut distinct = 0;
    let mut max_mult = 0;
    let mut i = 0;
    while i < m {
        let mut j = i;
        while j < m && ends[j] == ends[i] {
            j += 1;
        }
        distinct += 1;
        max_mult = max_mult.max(j - i);
        i = j;
    }
    Ok(ObstructionReport {
        depth,
        times: (s, t),
        atoms_before,
        atoms_after,
        spectrum_rejected: !spectrum.is_accepted(),
        spectrum,
        lifting_curves: m,
        distinct_curves: distinct,
        max_atom_mass: max_mult as f64 / m as f64,
    })
}
