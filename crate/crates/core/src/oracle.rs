//! Exact finite-box model of the queue chain.
//!
//! The chain is restricted to `{0..N}^M`: every transition is enumerated from
//! the product law of the per-user arrival and window draws, and coordinates
//! that would exceed `N` are clamped to `N`. The clamped probability is kept as
//! `boundary_mass` so callers can judge how much the box distorts the answer.
//!
//! Expected return times to the origin come from the hitting-time system
//! `(I - P_R) h = 1` on the non-origin states, solved by sparse LU up to
//! [`DIRECT_SOLVE_LIMIT`] unknowns and by BiCGSTAB above that. A second solve
//! with the transposed system yields the expected visits per excursion, from
//! which the stationary occupancy of the box boundary follows.

use std::collections::{BTreeMap, VecDeque};
use std::fmt::Write as _;

use faer::linalg::solvers::Solve;
use faer::sparse::{SparseColMat, Triplet};
use faer::Mat;
use rayon::prelude::*;
use serde::Serialize;

use crate::chain::NetworkConfig;
use crate::error::{AlohaError, Result};
use crate::region::offered_rates;

/// Bound on `M * (N + 1)^M`.
pub const MAX_STATE_WORK: u64 = 10_000_000;

/// Unknowns up to which the hitting-time system is factorized directly.
pub const DIRECT_SOLVE_LIMIT: usize = 100_000;

/// Relative residual at which BiCGSTAB stops.
pub const ITERATIVE_TOLERANCE: f64 = 1e-10;

/// Boundary influence above which an exact answer is refused.
pub const TRUNCATION_THRESHOLD: f64 = 1e-6;

/// Tolerance on row sums.
pub const ROW_SUM_TOLERANCE: f64 = 1e-12;

/// Row-compressed sparse matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub cols: Vec<usize>,
    pub vals: Vec<f64>,
}

impl CsrMatrix {
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        self.cols[span.clone()].iter().copied().zip(self.vals[span].iter().copied())
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.row(r).find(|&(j, _)| j == c).map_or(0.0, |(_, v)| v)
    }

    pub fn row_sum(&self, r: usize) -> f64 {
        self.row(r).map(|(_, v)| v).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TruncatedChain {
    pub m: usize,
    /// Per-queue cap `N`.
    pub cap: u64,
    pub transitions: CsrMatrix,
    /// Clamped probability out of each state.
    pub clamped: Vec<f64>,
    /// Total clamped probability over all rows.
    pub boundary_mass: f64,
    /// Whether some unbounded law had to be cut at its tail.
    pub laws_truncated: bool,
}

impl TruncatedChain {
    pub fn num_states(&self) -> usize {
        self.transitions.n
    }

    /// Index of a state; user 0 is the fastest-varying coordinate.
    pub fn index_of(&self, q: &[u64]) -> usize {
        state_index(q, self.cap)
    }

    pub fn state_of(&self, idx: usize) -> Vec<u64> {
        let base = self.cap as usize + 1;
        let mut rest = idx;
        (0..self.m)
            .map(|_| {
                let x = rest % base;
                rest /= base;
                x as u64
            })
            .collect()
    }

    pub fn on_boundary(&self, idx: usize) -> bool {
        self.state_of(idx).iter().any(|&x| x == self.cap)
    }

    pub fn prob(&self, from: &[u64], to: &[u64]) -> f64 {
        self.transitions.get(self.index_of(from), self.index_of(to))
    }

    /// Largest deviation of a row sum from one.
    pub fn max_row_defect(&self) -> f64 {
        (0..self.num_states())
            .map(|r| (self.transitions.row_sum(r) - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// One `row col prob` line per nonzero after a `# states M N nnz` header.
    pub fn to_triplets(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# {} {} {} {}", self.num_states(), self.m, self.cap, self.transitions.nnz());
        for r in 0..self.num_states() {
            for (c, v) in self.transitions.row(r) {
                let _ = writeln!(out, "{r} {c} {v:e}");
            }
        }
        out
    }
}

fn state_index(q: &[u64], cap: u64) -> usize {
    let base = cap as usize + 1;
    q.iter().rev().fold(0, |acc, &x| acc * base + x as usize)
}

/// Enumerates the exact transition law of the chain on `{0..cap}^M`.
pub fn build_truncated_chain(config: &NetworkConfig, cap: u64) -> Result<TruncatedChain> {
    let m = config.num_users();
    if cap == 0 {
        return Err(AlohaError::InvalidArgument("truncation level must be at least 1".into()));
    }
    let states = (cap + 1).checked_pow(m as u32).unwrap_or(u64::MAX);
    let work = states.saturating_mul(m as u64);
    if work > MAX_STATE_WORK {
        return Err(AlohaError::StateSpaceTooLarge { states: work, limit: MAX_STATE_WORK });
    }
    let mut laws_truncated = false;
    let mut arrival_laws = Vec::with_capacity(m);
    let mut window_laws = Vec::with_capacity(m);
    for u in config.users() {
        let (a, ta) = u.arrival.law_points();
        let (w, tw) = u.window.law_points();
        laws_truncated |= ta || tw;
        arrival_laws.push(a);
        window_laws.push(w);
    }
    let window_zero: Vec<f64> = window_laws
        .iter()
        .map(|pts| pts.iter().find(|(k, _)| *k == 0).map_or(0.0, |(_, p)| *p))
        .collect();

    // Joint arrival vectors with their probabilities.
    let mut arrivals: Vec<(Vec<u64>, f64)> = vec![(Vec::new(), 1.0)];
    for pts in &arrival_laws {
        arrivals = arrivals
            .into_iter()
            .flat_map(|(v, p)| {
                pts.iter().map(move |&(a, pa)| {
                    let mut v = v.clone();
                    v.push(a);
                    (v, p * pa)
                })
            })
            .collect();
    }

    let n = states as usize;
    let rows: Vec<(Vec<(usize, f64)>, f64)> = (0..n)
        .into_par_iter()
        .map(|idx| {
            let base = cap as usize + 1;
            let mut rest = idx;
            let q: Vec<u64> = (0..m)
                .map(|_| {
                    let x = rest % base;
                    rest /= base;
                    x as u64
                })
                .collect();

            // Law of the post-service state: (user, packets removed) or no success.
            let contenders: Vec<usize> = (0..m).filter(|&i| q[i] >= 1).collect();
            let mut services: Vec<(Option<(usize, u64)>, f64)> = Vec::new();
            let mut success_total = 0.0;
            for &i in &contenders {
                let silent: f64 = contenders.iter().filter(|&&j| j != i).map(|&j| window_zero[j]).product();
                if silent == 0.0 {
                    continue;
                }
                let mut by_amount: BTreeMap<u64, f64> = BTreeMap::new();
                for &(w, pw) in &window_laws[i] {
                    if w >= 1 {
                        *by_amount.entry(w.min(q[i])).or_default() += pw * silent;
                    }
                }
                for (s, p) in by_amount {
                    success_total += p;
                    services.push((Some((i, s)), p));
                }
            }
            services.push((None, 1.0 - success_total));

            let mut row: BTreeMap<usize, f64> = BTreeMap::new();
            let mut clamped = 0.0;
            let mut next = vec![0u64; m];
            for (svc, ps) in &services {
                if *ps <= 0.0 {
                    continue;
                }
                for (a, pa) in &arrivals {
                    let mut hit_cap = false;
                    for i in 0..m {
                        let served = match svc {
                            Some((j, s)) if *j == i => *s,
                            _ => 0,
                        };
                        let x = q[i] - served + a[i];
                        if x > cap {
                            hit_cap = true;
                            next[i] = cap;
                        } else {
                            next[i] = x;
                        }
                    }
                    let p = ps * pa;
                    if hit_cap {
                        clamped += p;
                    }
                    *row.entry(state_index(&next, cap)).or_default() += p;
                }
            }
            (row.into_iter().filter(|(_, p)| *p > 0.0).collect(), clamped)
        })
        .collect();

    let mut row_ptr = Vec::with_capacity(n + 1);
    let mut cols = Vec::new();
    let mut vals = Vec::new();
    let mut clamped = Vec::with_capacity(n);
    row_ptr.push(0);
    for (row, c) in rows {
        for (j, p) in row {
            cols.push(j);
            vals.push(p);
        }
        row_ptr.push(cols.len());
        clamped.push(c);
    }
    let boundary_mass = clamped.iter().sum();
    Ok(TruncatedChain {
        m,
        cap,
        transitions: CsrMatrix { n, row_ptr, cols, vals },
        clamped,
        boundary_mass,
        laws_truncated,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    SparseLu,
    Bicgstab,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExactReturnTime {
    pub expected_return_time: f64,
    /// Stationary probability of states with some queue at the cap.
    pub boundary_occupancy: f64,
    /// Expected clamped probability accumulated over one excursion from the origin.
    pub clamped_per_cycle: f64,
    pub solver: SolverKind,
    /// Normwise backward error of the hitting-time solve.
    pub residual: f64,
    pub states: usize,
}

/// States (other than the origin) from which the origin cannot be reached.
fn states_cut_off_from_origin(p: &CsrMatrix) -> Vec<usize> {
    let n = p.n;
    let mut incoming: Vec<Vec<usize>> = vec![Vec::new(); n];
    for r in 0..n {
        for (c, v) in p.row(r) {
            if v > 0.0 && c != r {
                incoming[c].push(r);
            }
        }
    }
    let mut reach = vec![false; n];
    let mut queue = VecDeque::from([0usize]);
    reach[0] = true;
    while let Some(s) = queue.pop_front() {
        for &r in &incoming[s] {
            if !reach[r] {
                reach[r] = true;
                queue.push_back(r);
            }
        }
    }
    (0..n).filter(|&s| !reach[s]).collect()
}

/// `y = (I - P_R) x` or its transpose, on the non-origin block (index shift by one).
fn reduced_matvec(p: &CsrMatrix, x: &[f64], transpose: bool, y: &mut [f64]) {
    y.copy_from_slice(x);
    for r in 1..p.n {
        for (c, v) in p.row(r) {
            if c == 0 {
                continue;
            }
            if transpose {
                y[c - 1] -= v * x[r - 1];
            } else {
                y[r - 1] -= v * x[c - 1];
            }
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn max_abs(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Normwise backward error `|b - Ax| / (|A| |x| + |b|)` in the max norm.
///
/// `|I - P_R|` is at most 2 for a substochastic `P_R`.
fn backward_error(p: &CsrMatrix, x: &[f64], b: &[f64], transpose: bool) -> f64 {
    let mut ax = vec![0.0; x.len()];
    reduced_matvec(p, x, transpose, &mut ax);
    let r: Vec<f64> = b.iter().zip(&ax).map(|(b, a)| b - a).collect();
    max_abs(&r) / (2.0 * max_abs(x) + max_abs(b)).max(f64::MIN_POSITIVE)
}

/// Unpreconditioned BiCGSTAB on the reduced system.
fn bicgstab(p: &CsrMatrix, b: &[f64], transpose: bool) -> Result<Vec<f64>> {
    let n = b.len();
    let max_iter = 20 * n + 1000;
    let bnorm = norm(b).max(f64::MIN_POSITIVE);
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let r_hat = r.clone();
    let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    let mut v = vec![0.0; n];
    let mut pv = vec![0.0; n];
    let mut s = vec![0.0; n];
    let mut t = vec![0.0; n];
    for iter in 0..max_iter {
        let rho_new = dot(&r_hat, &r);
        if rho_new == 0.0 || !rho_new.is_finite() {
            return Err(AlohaError::NoConvergence { residual: norm(&r) / bnorm, iterations: iter });
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            pv[i] = r[i] + beta * (pv[i] - omega * v[i]);
        }
        reduced_matvec(p, &pv, transpose, &mut v);
        alpha = rho / dot(&r_hat, &v);
        for i in 0..n {
            s[i] = r[i] - alpha * v[i];
        }
        if norm(&s) / bnorm < ITERATIVE_TOLERANCE {
            for i in 0..n {
                x[i] += alpha * pv[i];
            }
            return Ok(x);
        }
        reduced_matvec(p, &s, transpose, &mut t);
        omega = dot(&t, &s) / dot(&t, &t);
        for i in 0..n {
            x[i] += alpha * pv[i] + omega * s[i];
            r[i] = s[i] - omega * t[i];
        }
        if norm(&r) / bnorm < ITERATIVE_TOLERANCE {
            return Ok(x);
        }
    }
    Err(AlohaError::NoConvergence { residual: norm(&r) / bnorm, iterations: max_iter })
}

fn sparse_lu_solve(p: &CsrMatrix, rhs: &[&[f64]]) -> Result<Vec<Vec<f64>>> {
    let n = p.n - 1;
    let mut entries = Vec::with_capacity(p.nnz() + n);
    for r in 1..p.n {
        let mut diag = 1.0;
        for (c, v) in p.row(r) {
            if c == 0 {
                continue;
            }
            if c == r {
                diag -= v;
            } else {
                entries.push(Triplet::new(r - 1, c - 1, -v));
            }
        }
        entries.push(Triplet::new(r - 1, r - 1, diag));
    }
    let a = SparseColMat::<usize, f64>::try_new_from_triplets(n, n, &entries)
        .map_err(|e| AlohaError::SingularSystem(format!("{e:?}")))?;
    let lu = a.sp_lu().map_err(|e| AlohaError::SingularSystem(format!("{e:?}")))?;
    // first right-hand side: plain system; second: transposed
    let mut out = Vec::new();
    for (k, b) in rhs.iter().enumerate() {
        let bm = Mat::<f64>::from_fn(n, 1, |i, _| b[i]);
        let x = if k == 0 { lu.solve(&bm) } else { lu.solve_transpose(&bm) };
        out.push((0..n).map(|i| x[(i, 0)]).collect());
    }
    Ok(out)
}

/// Expected return time to the origin of the truncated chain.
pub fn exact_return_time(chain: &TruncatedChain) -> Result<ExactReturnTime> {
    let p = &chain.transitions;
    let n = p.n;
    if n == 1 {
        return Ok(ExactReturnTime {
            expected_return_time: 1.0,
            boundary_occupancy: 0.0,
            clamped_per_cycle: chain.clamped[0],
            solver: SolverKind::SparseLu,
            residual: 0.0,
            states: 1,
        });
    }
    let cut_off = states_cut_off_from_origin(p);
    if let Some(&s) = cut_off.first() {
        return Err(AlohaError::SingularSystem(format!(
            "{} states cannot reach the origin, e.g. {:?}",
            cut_off.len(),
            chain.state_of(s)
        )));
    }
    let ones = vec![1.0; n - 1];
    // visits per excursion: nu^T (I - P_R) = P(0, .) restricted
    let from_origin: Vec<f64> = (1..n).map(|s| p.get(0, s)).collect();

    let (h, visits, solver) = if n - 1 <= DIRECT_SOLVE_LIMIT {
        let mut sols = sparse_lu_solve(p, &[&ones, &from_origin])?;
        let visits = sols.pop().expect("two solutions");
        let h = sols.pop().expect("two solutions");
        (h, visits, SolverKind::SparseLu)
    } else {
        let h = bicgstab(p, &ones, false)?;
        let visits = bicgstab(p, &from_origin, true)?;
        (h, visits, SolverKind::Bicgstab)
    };
    if h.iter().chain(&visits).any(|x| !x.is_finite()) {
        return Err(AlohaError::SingularSystem("solution is not finite".into()));
    }
    let residual = backward_error(p, &h, &ones, false);
    if residual > 1e-8 {
        return Err(AlohaError::SingularSystem(format!("backward error {residual:.3e}")));
    }

    let expected_return_time = 1.0 + dot(&from_origin, &h);
    let boundary_visits: f64 = (1..n)
        .filter(|&s| chain.on_boundary(s))
        .map(|s| visits[s - 1])
        .sum();
    let boundary_occupancy = boundary_visits / expected_return_time;
    let clamped_per_cycle = chain.clamped[0] + (1..n).map(|s| visits[s - 1] * chain.clamped[s]).sum::<f64>();

    if boundary_occupancy > TRUNCATION_THRESHOLD || clamped_per_cycle > TRUNCATION_THRESHOLD {
        return Err(AlohaError::TruncationDominated {
            boundary_occupancy,
            clamped_per_cycle,
            threshold: TRUNCATION_THRESHOLD,
        });
    }
    Ok(ExactReturnTime {
        expected_return_time,
        boundary_occupancy,
        clamped_per_cycle,
        solver,
        residual,
        states: n,
    })
}

/// Mean one-slot increment `lambda_i - v_i` of each queue when all queues are backlogged.
pub fn saturated_drift(config: &NetworkConfig) -> Vec<f64> {
    let v = offered_rates(config.capacity(), config.attempt()).expect("attempt probabilities lie in [0, 1]");
    config.lambda().iter().zip(&v).map(|(l, vi)| l - vi).collect()
}
