//! Exact optimal transport between finite atomic measures.
//!
//! The general solver is a successive-shortest-path min-cost flow on the
//! bipartite atom graph with Dijkstra on reduced costs. On the line the
//! monotone (quantile) coupling is optimal for every convex cost of `|x-y|`
//! and for the bottleneck cost, and is used directly.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measures::{euclidean, AtomicMeasure};

/// Masses below this are treated as zero inside the solvers.
const MASS_EPS: f64 = 1e-14;
/// Complementary slackness tolerance, relative to the largest cost.
const SLACKNESS_TOL: f64 = 1e-10;
/// Max-flow value accepted as a full transport in the bottleneck search.
const FEASIBILITY_TOL: f64 = 1e-9;

/// Sparse coupling between two atom lists: `(row, col, mass)` triples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransportPlan {
    pub rows: usize,
    pub cols: usize,
    pub entries: Vec<(usize, usize, f64)>,
}

impl TransportPlan {
    pub fn row_sums(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.rows];
        for &(i, _, m) in &self.entries {
            s[i] += m;
        }
        s
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.cols];
        for &(_, j, m) in &self.entries {
            s[j] += m;
        }
        s
    }

    /// `sum_ij pi_ij c(i,j)`.
    pub fn cost<F: Fn(usize, usize) -> f64>(&self, c: F) -> f64 {
        self.entries.iter().map(|&(i, j, m)| m * c(i, j)).sum()
    }

    /// Largest `c(i,j)` over the support of the plan.
    pub fn max_cost<F: Fn(usize, usize) -> f64>(&self, c: F) -> f64 {
        self.entries
            .iter()
            .filter(|e| e.2 > MASS_EPS)
            .map(|&(i, j, _)| c(i, j))
            .fold(0.0, f64::max)
    }

    /// Largest deviation of the marginals from `a` and `b`.
    pub fn marginal_error(&self, a: &[f64], b: &[f64]) -> f64 {
        let r = self
            .row_sums()
            .iter()
            .zip(a)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        let c = self
            .col_sums()
            .iter()
            .zip(b)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        r.max(c)
    }
}

/// Value of a transport problem together with an optimal plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transport {
    /// `W_p` (the cost raised to `1/p`), or the bottleneck value for `W_inf`.
    pub distance: f64,
    /// Optimal total cost `sum pi_ij c_ij` (equal to `distance` for `W_inf`).
    pub cost: f64,
    pub plan: TransportPlan,
}

fn check_dims(mu: &AtomicMeasure, nu: &AtomicMeasure) -> Result<()> {
    if mu.dim() != nu.dim() {
        return Err(Error::DimensionMismatch {
            expected: mu.dim(),
            found: nu.dim(),
        });
    }
    Ok(())
}

fn check_p(p: f64) -> Result<()> {
    if !(p >= 1.0) || !p.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "exponent p = {p} must be finite and >= 1"
        )));
    }
    Ok(())
}

/// Exact `W_p` for the Euclidean distance.
pub fn wasserstein_p(mu: &AtomicMeasure, nu: &AtomicMeasure, p: f64) -> Result<Transport> {
    check_dims(mu, nu)?;
    check_p(p)?;
    if mu == nu {
        return Ok(identity_transport(mu));
    }
    if mu.dim() == 1 {
        let plan = monotone_plan(mu, nu);
        let cost = plan.cost(|i, j| (mu.location(i)[0] - nu.location(j)[0]).abs().powf(p));
        return Ok(Transport {
            distance: cost.max(0.0).powf(1.0 / p),
            cost,
            plan,
        });
    }
    wasserstein_p_with(mu, nu, p, euclidean)
}

/// Exact `W_p` for an arbitrary ground distance, always via min-cost flow.
pub fn wasserstein_p_with<D>(mu: &AtomicMeasure, nu: &AtomicMeasure, p: f64, dist: D) -> Result<Transport>
where
    D: Fn(&[f64], &[f64]) -> f64,
{
    check_dims(mu, nu)?;
    check_p(p)?;
    let (n, m) = (mu.len(), nu.len());
    let mut c = Vec::with_capacity(n * m);
    for i in 0..n {
        for j in 0..m {
            c.push(dist(mu.location(i), nu.location(j)).powf(p));
        }
    }
    let (cost, plan) = min_cost_transport(mu.weights(), nu.weights(), &c)?;
    Ok(Transport {
        distance: cost.max(0.0).powf(1.0 / p),
        cost,
        plan,
    })
}

fn identity_transport(mu: &AtomicMeasure) -> Transport {
    Transport {
        distance: 0.0,
        cost: 0.0,
        plan: TransportPlan {
            rows: mu.len(),
            cols: mu.len(),
            entries: mu.weights().iter().enumerate().map(|(i, &w)| (i, i, w)).collect(),
        },
    }
}

/// Monotone coupling of two measures on the line.
pub fn monotone_plan(mu: &AtomicMeasure, nu: &AtomicMeasure) -> TransportPlan {
    let sorted = |m: &AtomicMeasure| {
        let mut idx: Vec<usize> = (0..m.len()).collect();
        idx.sort_by(|&i, &j| m.location(i)[0].total_cmp(&m.location(j)[0]));
        idx
    };
    let (ia, ib) = (sorted(mu), sorted(nu));
    let (wa, wb) = (mu.weights(), nu.weights());
    let mut entries = Vec::with_capacity(ia.len() + ib.len());
    let (mut k, mut l) = (0, 0);
    let (mut ra, mut rb) = (wa[ia[0]], wb[ib[0]]);
    loop {
        let t = ra.min(rb);
        if t > 0.0 {
            entries.push((ia[k], ib[l], t));
        }
        ra -= t;
        rb -= t;
        let a_done = ra <= MASS_EPS;
        let b_done = rb <= MASS_EPS;
        if a_done && k + 1 < ia.len() {
            k += 1;
            ra = wa[ia[k]];
        } else if a_done {
            // Leftover rounding mass on the other side goes to the last pair.
            if l + 1 < ib.len() {
                for &j in &ib[l + 1..] {
                    entries.push((ia[k], j, wb[j]));
                }
            }
            break;
        }
        if b_done && l + 1 < ib.len() {
            l += 1;
            rb = wb[ib[l]];
        } else if b_done {
            if !a_done {
                for &i in &ia[k + 1..] {
                    entries.push((i, ib[l], wa[i]));
                }
            }
            break;
        }
    }
    TransportPlan {
        rows: mu.len(),
        cols: nu.len(),
        entries,
    }
}

/// Min-cost transport between marginals `a` and `b` with dense row-major costs.
///
/// Returns the optimal value and plan. The result is checked against the
/// dual potentials produced by the solver; a violation of complementary
/// slackness is reported as [`Error::SolverFailure`].
pub fn min_cost_transport(a: &[f64], b: &[f64], cost: &[f64]) -> Result<(f64, TransportPlan)> {
    let (n, m) = (a.len(), b.len());
    if cost.len() != n * m {
        return Err(Error::LengthMismatch {
            what: "cost matrix",
            expected: n * m,
            found: cost.len(),
        });
    }
    if n == 0 || m == 0 {
        return Err(Error::InvalidParameter("empty marginal".into()));
    }
    if cost.iter().any(|c| !c.is_finite()) {
        return Err(Error::SolverFailure("non-finite cost".into()));
    }
    let mut solver = Ssp::new(a, b, cost);
    solver.run()?;
    solver.check_slackness()?;
    let mut entries = Vec::new();
    for i in 0..n {
        for j in 0..m {
            let f = solver.flow[i * m + j];
            if f > 0.0 {
                entries.push((i, j, f));
            }
        }
    }
    let plan = TransportPlan {
        rows: n,
        cols: m,
        entries,
    };
    let value = plan.cost(|i, j| cost[i * m + j]);
    Ok((value, plan))
}

// Node layout: 0 = source, 1..=n rows, n+1..=n+m columns, n+m+1 = sink.
struct Ssp<'a> {
    n: usize,
    m: usize,
    cost: &'a [f64],
    supply: Vec<f64>,
    demand: Vec<f64>,
    sent: Vec<f64>,
    received: Vec<f64>,
    flow: Vec<f64>,
    phi: Vec<f64>,
    scale: f64,
}

impl<'a> Ssp<'a> {
    fn new(a: &[f64], b: &[f64], cost: &'a [f64]) -> Self {
        let (n, m) = (a.len(), b.len());
        let scale = cost.iter().fold(0.0f64, |s, c| s.max(c.abs())).max(1.0);
        Ssp {
            n,
            m,
            cost,
            supply: a.to_vec(),
            demand: b.to_vec(),
            sent: vec![0.0; n],
            received: vec![0.0; m],
            flow: vec![0.0; n * m],
            phi: vec![0.0; n + m + 2],
            scale,
        }
    }

    fn run(&mut self) -> Result<()> {
        let (n, m) = (self.n, self.m);
        let total = n + m + 2;
        let sink = total - 1;
        let max_iter = 4 * (n + m) * (n + m) + 64;
        let mut dist = vec![f64::INFINITY; total];
        let mut prev = vec![usize::MAX; total];
        let mut done = vec![false; total];
        for _ in 0..max_iter {
            let remaining: f64 = self.supply.iter().sum();
            if remaining <= 1e-13 || self.demand.iter().sum::<f64>() <= 1e-13 {
                return Ok(());
            }
            dist.fill(f64::INFINITY);
            prev.fill(usize::MAX);
            done.fill(false);
            dist[0] = 0.0;
            loop {
                let mut u = usize::MAX;
                let mut best = f64::INFINITY;
                for (v, &d) in dist.iter().enumerate() {
                    if !done[v] && d < best {
                        best = d;
                        u = v;
                    }
                }
                if u == usize::MAX {
                    break;
                }
                done[u] = true;
                self.relax(u, &mut dist, &mut prev, &done);
            }
            if !dist[sink].is_finite() {
                return Ok(());
            }
            let dmax = dist[sink];
            for (phi, d) in self.phi.iter_mut().zip(&dist[..total]) {
                *phi += d.min(dmax);
            }
            self.augment(&prev)?;
        }
        Err(Error::SolverFailure(
            "successive shortest paths did not terminate".into(),
        ))
    }

    fn reduced(&self, from: usize, to: usize, c: f64) -> f64 {
        (c + self.phi[from] - self.phi[to]).max(0.0)
    }

    fn relax(&self, u: usize, dist: &mut [f64], prev: &mut [usize], done: &[bool]) {
        let (n, m) = (self.n, self.m);
        let sink = n + m + 1;
        let du = dist[u];
        let push = |v: usize, c: f64, dist: &mut [f64], prev: &mut [usize]| {
            if !done[v] {
                let nd = du + self.reduced(u, v, c);
                if nd < dist[v] {
                    dist[v] = nd;
                    prev[v] = u;
                }
            }
        };
        if u == 0 {
            for i in 0..n {
                if self.supply[i] > MASS_EPS {
                    push(1 + i, 0.0, dist, prev);
                }
            }
        } else if u <= n {
            let i = u - 1;
            for j in 0..m {
                push(1 + n + j, self.cost[i * m + j], dist, prev);
            }
            if self.sent[i] > MASS_EPS {
                push(0, 0.0, dist, prev);
            }
        } else if u < sink {
            let j = u - 1 - n;
            for i in 0..n {
                if self.flow[i * m + j] > MASS_EPS {
                    push(1 + i, -self.cost[i * m + j], dist, prev);
                }
            }
            if self.demand[j] > MASS_EPS {
                push(sink, 0.0, dist, prev);
            }
        } else {
            for j in 0..m {
                if self.received[j] > MASS_EPS {
                    push(1 + n + j, 0.0, dist, prev);
                }
            }
        }
    }

    fn residual(&self, from: usize, to: usize) -> f64 {
        let (n, m) = (self.n, self.m);
        let sink = n + m + 1;
        match (from, to) {
            (0, v) => self.supply[v - 1],
            (u, 0) => self.sent[u - 1],
            (u, t) if t == sink => self.demand[u - 1 - n],
            (s, v) if s == sink => self.received[v - 1 - n],
            (u, v) if u <= n => {
                let _ = v;
                f64::INFINITY
            }
            (u, v) => self.flow[(v - 1) * m + (u - 1 - n)],
        }
    }

    fn augment(&mut self, prev: &[usize]) -> Result<()> {
        let (n, m) = (self.n, self.m);
        let sink = n + m + 1;
        let mut path = vec![sink];
        let mut v = sink;
        while v != 0 {
            let u = prev[v];
            if u == usize::MAX || path.len() > n + m + 2 {
                return Err(Error::SolverFailure("broken augmenting path".into()));
            }
            path.push(u);
            v = u;
        }
        path.reverse();
        let delta = path
            .windows(2)
            .map(|e| self.residual(e[0], e[1]))
            .fold(f64::INFINITY, f64::min);
        if !(delta > 0.0) || !delta.is_finite() {
            return Err(Error::SolverFailure("zero-capacity augmenting path".into()));
        }
        for e in path.windows(2) {
            let (u, v) = (e[0], e[1]);
            match (u, v) {
                (0, v) => {
                    self.supply[v - 1] -= delta;
                    self.sent[v - 1] += delta;
                    clamp(&mut self.supply[v - 1]);
                }
                (u, 0) => {
                    self.sent[u - 1] -= delta;
                    self.supply[u - 1] += delta;
                    clamp(&mut self.sent[u - 1]);
                }
                (u, t) if t == sink => {
                    self.demand[u - 1 - n] -= delta;
                    self.received[u - 1 - n] += delta;
                    clamp(&mut self.demand[u - 1 - n]);
                }
                (s, v) if s == sink => {
                    self.received[v - 1 - n] -= delta;
                    self.demand[v - 1 - n] += delta;
                    clamp(&mut self.received[v - 1 - n]);
                }
                (u, v) if u <= n => self.flow[(u - 1) * m + (v - 1 - n)] += delta,
                (u, v) => {
                    let f = &mut self.flow[(v - 1) * m + (u - 1 - n)];
                    *f -= delta;
                    clamp(f);
                }
            }
        }
        Ok(())
    }

    fn check_slackness(&self) -> Result<()> {
        let (n, m) = (self.n, self.m);
        let tol = SLACKNESS_TOL * self.scale;
        for i in 0..n {
            for j in 0..m {
                let rc = self.cost[i * m + j] + self.phi[1 + i] - self.phi[1 + n + j];
                if rc < -tol || (self.flow[i * m + j] > MASS_EPS && rc > tol) {
                    return Err(Error::SolverFailure(format!(
                        "complementary slackness violated at ({i},{j}): reduced cost {rc}"
                    )));
                }
            }
        }
        Ok(())
    }
}

fn clamp(x: &mut f64) {
    if *x < MASS_EPS {
        *x = 0.0;
    }
}

/// Exact `W_inf`: the smallest `d` such that some coupling moves mass only
/// along pairs at distance at most `d`.
pub fn wasserstein_inf(mu: &AtomicMeasure, nu: &AtomicMeasure) -> Result<Transport> {
    check_dims(mu, nu)?;
    if mu == nu {
        return Ok(identity_transport(mu));
    }
    if mu.dim() == 1 {
        let plan = monotone_plan(mu, nu);
        let d = plan.max_cost(|i, j| (mu.location(i)[0] - nu.location(j)[0]).abs());
        return Ok(Transport {
            distance: d,
            cost: d,
            plan,
        });
    }
    wasserstein_inf_with(mu, nu, euclidean)
}

/// Bottleneck transport for an arbitrary ground distance.
pub fn wasserstein_inf_with<D>(mu: &AtomicMeasure, nu: &AtomicMeasure, dist: D) -> Result<Transport>
where
    D: Fn(&[f64], &[f64]) -> f64,
{
    check_dims(mu, nu)?;
    let (n, m) = (mu.len(), nu.len());
    let mut d = Vec::with_capacity(n * m);
    for i in 0..n {
        for j in 0..m {
            d.push(dist(mu.location(i), nu.location(j)));
        }
    }
    let mut cand = d.clone();
    cand.sort_by(f64::total_cmp);
    cand.dedup();
    let (mut lo, mut hi) = (0usize, cand.len() - 1);
    while lo < hi {
        let mid = (lo + hi) / 2;
        if bottleneck_feasible(mu.weights(), nu.weights(), &d, cand[mid]).0 {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    let value = cand[lo];
    let (ok, plan) = bottleneck_feasible(mu.weights(), nu.weights(), &d, value);
    if !ok {
        return Err(Error::SolverFailure("bottleneck search found no feasible plan".into()));
    }
    Ok(Transport {
        distance: value,
        cost: value,
        plan,
    })
}

/// Whether a full coupling exists using only pairs with `d_ij <= threshold`.
pub fn bottleneck_feasible(a: &[f64], b: &[f64], d: &[f64], threshold: f64) -> (bool, TransportPlan) {
    let (n, m) = (a.len(), b.len());
    let mut net = FlowNetwork::new(n + m + 2);
    let (s, t) = (0, n + m + 1);
    for (i, &w) in a.iter().enumerate() {
        net.add_edge(s, 1 + i, w);
    }
    for (j, &w) in b.iter().enumerate() {
        net.add_edge(1 + n + j, t, w);
    }
    let mut pair_edges = Vec::new();
    for i in 0..n {
        for j in 0..m {
            if d[i * m + j] <= threshold {
                pair_edges.push((i, j, net.add_edge(1 + i, 1 + n + j, f64::INFINITY)));
            }
        }
    }
    let total = net.max_flow(s, t);
    let entries = pair_edges
        .into_iter()
        .filter_map(|(i, j, e)| {
            let f = net.flow(e);
            (f > 0.0).then_some((i, j, f))
        })
        .collect();
    (
        total >= 1.0 - FEASIBILITY_TOL,
        TransportPlan {
            rows: n,
            cols: m,
            entries,
        },
    )
}

/// Dinic max-flow on real capacities.
pub struct FlowNetwork {
    head: Vec<Vec<usize>>,
    to: Vec<usize>,
    cap: Vec<f64>,
    orig: Vec<f64>,
}

impl FlowNetwork {
    pub fn new(nodes: usize) -> Self {
        FlowNetwork {
            head: vec![Vec::new(); nodes],
            to: Vec::new(),
            cap: Vec::new(),
            orig: Vec::new(),
        }
    }

    /// Adds `u -> v` with capacity `c`; returns the edge id.
    pub fn add_edge(&mut self, u: usize, v: usize, c: f64) -> usize {
        let id = self.to.len();
        self.head[u].push(id);
        self.to.push(v);
        self.cap.push(c);
        self.orig.push(c);
        self.head[v].push(id + 1);
        self.to.push(u);
        self.cap.push(0.0);
        self.orig.push(0.0);
        id
    }

    pub fn flow(&self, e: usize) -> f64 {
        self.cap[e ^ 1]
    }

    pub fn max_flow(&mut self, s: usize, t: usize) -> f64 {
        let nodes = self.head.len();
        let mut total = 0.0;
        loop {
            let mut level = vec![usize::MAX; nodes];
            level[s] = 0;
            let mut queue = std::collections::VecDeque::from([s]);
            while let Some(u) = queue.pop_front() {
                for &e in &self.head[u] {
                    let v = self.to[e];
                    if level[v] == usize::MAX && self.cap[e] > MASS_EPS {
                        level[v] = level[u] + 1;
                        queue.push_back(v);
                    }
                }
            }
            if level[t] == usize::MAX {
                return total;
            }
            let mut it = vec![0usize; nodes];
            loop {
                let f = self.dfs(s, t, f64::INFINITY, &level, &mut it);
                if f <= MASS_EPS {
                    break;
                }
                total += f;
            }
        }
    }

    fn dfs(&mut self, u: usize, t: usize, limit: f64, level: &[usize], it: &mut [usize]) -> f64 {
        if u == t {
            return limit;
        }
        while it[u] < self.head[u].len() {
            let e = self.head[u][it[u]];
            let v = self.to[e];
            if self.cap[e] > MASS_EPS && level[v] == level[u] + 1 {
                let f = self.dfs(v, t, limit.min(self.cap[e]), level, it);
                if f > 0.0 {
                    self.cap[e] -= f;
                    self.cap[e ^ 1] += f;
                    return f;
                }
            }
            it[u] += 1;
        }
        0.0
    }
}

/// Minimum-cost perfect assignment on a square row-major cost matrix.
///
/// Returns `assign` with row `i` matched to column `assign[i]`, and the total
/// cost. O(n^3) Hungarian method with row and column potentials.
pub fn hungarian(cost: &[f64], n: usize) -> Result<(Vec<usize>, f64)> {
    if cost.len() != n * n {
        return Err(Error::LengthMismatch {
            what: "assignment cost matrix",
            expected: n * n,
            found: cost.len(),
        });
    }
    if cost.iter().any(|c| !c.is_finite()) {
        return Err(Error::MatchingInfeasible("non-finite assignment cost".into()));
    }
    if n == 0 {
        return Ok((Vec::new(), 0.0));
    }
    // 1-based arrays; column 0 is a virtual start.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            if j1 == 0 {
                return Err(Error::MatchingInfeasible("no augmenting column".into()));
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assign = vec![0usize; n];
    for j in 1..=n {
        assign[p[j] - 1] = j - 1;
    }
    let total = assign.iter().enumerate().map(|(i, &j)| cost[i * n + j]).sum();
    Ok((assign, total))
}

/// Profile `Psi` in the atomic-topology distance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// `max(0, 1 - r)`
    Tent,
    /// `exp(-r)`
    Exp,
}

impl Profile {
    pub fn eval(self, r: f64) -> f64 {
        match self {
            Profile::Tent => (1.0 - r).max(0.0),
            Profile::Exp => (-r).exp(),
        }
    }
}

impl std::str::FromStr for Profile {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tent" => Ok(Profile::Tent),
            "exp" => Ok(Profile::Exp),
            other => Err(Error::InvalidProfile(format!(
                "unknown profile {other:?}; expected tent or exp"
            ))),
        }
    }
}

/// Default grid for the supremum over `eps`: 64 log-spaced points in `[1e-4, 1)`.
pub fn default_eps_grid() -> Vec<f64> {
    let n = 64;
    let (a, b) = (1e-4f64.ln(), 0.0f64);
    (0..n).map(|i| (a + (b - a) * i as f64 / n as f64).exp()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtomicDistance {
    pub distance: f64,
    pub wasserstein: f64,
    /// Max over the grid; a lower bound for the supremum over `(0,1)`.
    pub sup_term: f64,
    pub argmax_eps: f64,
    pub eps_grid: Vec<f64>,
}

fn self_interaction(mu: &AtomicMeasure, psi: Profile, eps: f64) -> f64 {
    let mut s = 0.0;
    for (i, (ai, xi)) in mu.atoms().enumerate() {
        s += ai * ai;
        for (aj, xj) in mu.atoms().skip(i + 1) {
            s += 2.0 * ai * aj * psi.eval(euclidean(xi, xj) / eps);
        }
    }
    s
}

/// `W_p(mu, nu) + max_{eps in grid} |int Psi(|x-y|/eps) d(mu x mu - nu x nu)|`.
pub fn atomic_metric(
    mu: &AtomicMeasure,
    nu: &AtomicMeasure,
    p: f64,
    psi: Profile,
    eps_grid: &[f64],
) -> Result<AtomicDistance> {
    if eps_grid.is_empty() || eps_grid.iter().any(|&e| !(e > 0.0 && e < 1.0)) {
        return Err(Error::InvalidProfile(
            "epsilon grid must be a non-empty subset of (0,1)".into(),
        ));
    }
    let w = wasserstein_p(mu, nu, p)?.distance;
    let mut sup_term = 0.0;
    let mut argmax_eps = eps_grid[0];
    for &eps in eps_grid {
        let gap = (self_interaction(mu, psi, eps) - self_interaction(nu, psi, eps)).abs();
        if gap > sup_term {
            sup_term = gap;
            argmax_eps = eps;
        }
    }
    Ok(AtomicDistance {
        distance: w + sup_term,
        wasserstein: w,
        sup_term,
        argmax_eps,
        eps_grid: eps_grid.to_vec(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    /// `sum_i |a_i^(n) - a_i|` with sorted weights padded by zeros.
    pub weight_gaps: Vec<f64>,
    pub wasserstein: Vec<f64>,
    pub tol: f64,
    pub converges: bool,
}

/// Sorted-weight gap `sum_i |a_i - b_i|`, shorter list padded with zeros.
pub fn weight_gap(a: &[f64], b: &[f64]) -> f64 {
    let sorted = |w: &[f64]| {
        let mut v = w.to_vec();
        v.sort_by(|x, y| y.total_cmp(x));
        v
    };
    let (a, b) = (sorted(a), sorted(b));
    let n = a.len().max(b.len());
    (0..n)
        .map(|i| (a.get(i).copied().unwrap_or(0.0) - b.get(i).copied().unwrap_or(0.0)).abs())
        .sum()
}

/// Per-term weight gaps and `W_p` distances of `seq` to `limit`.
///
/// The sequence is flagged convergent in the atomic topology when the last
/// weight gap and the last `W_p` value are both at most `tol`.
pub fn atomic_convergence_report(
    seq: &[AtomicMeasure],
    limit: &AtomicMeasure,
    p: f64,
    tol: f64,
) -> Result<ConvergenceReport> {
    let mut weight_gaps = Vec::with_capacity(seq.len());
    let mut wasserstein = Vec::with_capacity(seq.len());
    for mu in seq {
        weight_gaps.push(weight_gap(mu.weights(), limit.weights()));
        wasserstein.push(wasserstein_p(mu, limit, p)?.distance);
    }
    let converges = matches!((weight_gaps.last(), wasserstein.last()), (Some(&g), Some(&w)) if g <= tol && w <= tol);
    Ok(ConvergenceReport {
        weight_gaps,
        wasserstein,
        tol,
        converges,
    })
}

/// Orders candidate distances; exposed for tests of the bottleneck search.
pub fn sorted_distances(mu: &AtomicMeasure, nu: &AtomicMeasure) -> Vec<f64> {
    let mut d: Vec<f64> = mu
        .atoms()
        .flat_map(|(_, x)| nu.atoms().map(move |(_, y)| euclidean(x, y)))
        .collect();
    d.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
    d.dedup();
    d
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::make_atomic;

    fn m1(w: &[f64], x: &[f64]) -> AtomicMeasure {
        let locs: Vec<Vec<f64>> = x.iter().map(|&v| vec![v]).collect();
        make_atomic(w, &locs).unwrap()
    }

    #[test]
    fn diracs() {
        let a = AtomicMeasure::dirac(&[0.0]);
        let b = AtomicMeasure::dirac(&[1.0]);
        assert_eq!(wasserstein_p(&a, &b, 1.0).unwrap().distance, 1.0);
        assert_eq!(wasserstein_inf(&a, &b).unwrap().distance, 1.0);
        assert_eq!(wasserstein_p(&a, &a, 2.0).unwrap().distance, 0.0);
        assert_eq!(wasserstein_inf(&a, &a).unwrap().distance, 0.0);
    }

    #[test]
    fn half_half_example() {
        let a = m1(&[0.5, 0.5], &[0.0, 1.0]);
        let b = m1(&[0.5, 0.5], &[0.0, 2.0]);
        assert!((wasserstein_p(&a, &b, 1.0).unwrap().distance - 0.5).abs() < 1e-15);
        let a2 = a.pushforward(2, |x| vec![x[0], 0.0]).unwrap();
        let b2 = b.pushforward(2, |x| vec![x[0], 0.0]).unwrap();
        assert!((wasserstein_p(&a2, &b2, 1.0).unwrap().distance - 0.5).abs() < 1e-12);
    }

    #[test]
    fn dimension_mismatch() {
        let a = AtomicMeasure::dirac(&[0.0]);
        let b = AtomicMeasure::dirac(&[0.0, 0.0]);
        assert!(matches!(
            wasserstein_p(&a, &b, 1.0),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(wasserstein_inf(&a, &b), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn ssp_matches_monotone_on_line() {
        let a = m1(&[0.1, 0.2, 0.3, 0.4], &[0.3, -1.0, 2.0, 0.7]);
        let b = m1(&[0.25, 0.25, 0.5], &[0.0, 1.5, -0.2]);
        for p in [1.0, 2.0, 3.0] {
            let fast = wasserstein_p(&a, &b, p).unwrap();
            let slow = wasserstein_p_with(&a, &b, p, euclidean).unwrap();
            assert!((fast.cost - slow.cost).abs() < 1e-12, "p={p}");
            assert!(slow.plan.marginal_error(a.weights(), b.weights()) < 1e-12);
        }
    }

    #[test]
    fn bottleneck_general_matches_line() {
        let a = m1(&[0.1, 0.2, 0.3, 0.4], &[0.3, -1.0, 2.0, 0.7]);
        let b = m1(&[0.25, 0.25, 0.5], &[0.0, 1.5, -0.2]);
        let fast = wasserstein_inf(&a, &b).unwrap();
        let slow = wasserstein_inf_with(&a, &b, euclidean).unwrap();
        assert!((fast.distance - slow.distance).abs() < 1e-15);
    }

    #[test]
    fn hungarian_small() {
        let c = [4.0, 1.0, 3.0, 2.0, 0.0, 5.0, 3.0, 2.0, 2.0];
        let (assign, total) = hungarian(&c, 3).unwrap();
        assert_eq!(total, 5.0);
        assert_eq!(assign, vec![1, 0, 2]);
    }

    #[test]
    fn atomic_metric_examples() {
        let grid = default_eps_grid();
        let a = m1(&[0.5, 0.3, 0.2], &[0.0, 0.4, 0.9]);
        let d = atomic_metric(&a, &a, 1.0, Profile::Tent, &grid).unwrap();
        assert_eq!(d.distance, 0.0);

        let n = 10.0;
        let mun = m1(&[0.5, 0.5], &[0.0, 1.0 / n]);
        let delta = AtomicMeasure::dirac(&[0.0]);
        let d = atomic_metric(&mun, &delta, 1.0, Profile::Tent, &grid).unwrap();
        assert!((d.wasserstein - 0.05).abs() < 1e-15);
        assert!((d.sup_term - 0.5).abs() < 1e-12);
        assert!(atomic_metric(&a, &a, 1.0, Profile::Tent, &[1.5]).is_err());
    }

    #[test]
    fn convergence_report_examples() {
        let delta = AtomicMeasure::dirac(&[0.0]);
        let seq: Vec<_> = (2..30).map(|n| m1(&[0.5, 0.5], &[0.0, 1.0 / n as f64])).collect();
        let r = atomic_convergence_report(&seq, &delta, 1.0, 1e-2).unwrap();
        assert!(r.weight_gaps.iter().all(|&g| (g - 1.0).abs() < 1e-15));
        assert!(!r.converges);

        let limit = m1(&[0.5, 0.5], &[0.0, 1.0]);
        let seq: Vec<_> = (3..400)
            .map(|n| {
                let e = 1.0 / n as f64;
                m1(&[0.5 + e, 0.5 - e], &[0.0, 1.0])
            })
            .collect();
        let r = atomic_convergence_report(&seq, &limit, 1.0, 1e-2).unwrap();
        for (k, g) in r.weight_gaps.iter().enumerate() {
            assert!((g - 2.0 / (k + 3) as f64).abs() < 1e-12);
        }
        assert!(r.converges);
    }
}
