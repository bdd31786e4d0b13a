//! Recurrence classification and the inner/outer rate regions.
//!
//! With `v_i = C_i * prod_{j != i} (1 - p_j)` the rate user `i` is served at
//! while backlogged and alone on the channel:
//!
//! * a network whose windows are all supported on {0, 1} and whose load sum
//!   `sum_i lambda_i / v_i` is below one is positive recurrent;
//! * a network with finite fourth moments and `lambda_i > v_i` for every user
//!   is transient;
//! * anything else is left undecided.
//!
//! For single-packet windows `C_i = p_i`, which gives the inner region
//! `C1(p)` (load sum below one) and the outer region `C2(p)` (some user below
//! its offered rate). Their unions over `p` bracket the recurrence region.

use rayon::prelude::*;
use serde::Serialize;

use crate::chain::NetworkConfig;
use crate::error::{AlohaError, Result};
use crate::rng::RngState;

/// Attempt probabilities are kept in `[P_CLAMP, 1 - P_CLAMP]` by the witness search.
pub const P_CLAMP: f64 = 1e-9;

/// A witness is accepted as soon as its load drops below `1 - EARLY_EXIT_MARGIN`.
pub const EARLY_EXIT_MARGIN: f64 = 1e-12;

fn check_probs(p: &[f64]) -> Result<()> {
    match p.iter().find(|x| !(x.is_finite() && (0.0..=1.0).contains(*x))) {
        Some(x) => Err(AlohaError::DomainError(format!("probability {x} is not in [0, 1]"))),
        None => Ok(()),
    }
}

fn check_open_unit(name: &str, xs: &[f64]) -> Result<()> {
    match xs.iter().find(|x| !(x.is_finite() && **x > 0.0 && **x < 1.0)) {
        Some(x) => Err(AlohaError::DomainError(format!("{name} entry {x} is not in (0, 1)"))),
        None => Ok(()),
    }
}

fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(AlohaError::DimensionMismatch { expected, got })
    }
}

/// `v_i = C_i * prod_{j != i} (1 - p_j)`.
pub fn offered_rates(capacity: &[f64], p: &[f64]) -> Result<Vec<f64>> {
    check_len(capacity.len(), p.len())?;
    check_probs(p)?;
    Ok(offered_rates_unchecked(capacity, p))
}

fn offered_rates_unchecked(capacity: &[f64], p: &[f64]) -> Vec<f64> {
    capacity
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            let others: f64 = p
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, &pj)| 1.0 - pj)
                .product();
            c * others
        })
        .collect()
}

/// `sum_i lambda_i / v_i`.
pub fn load_sum(lambda: &[f64], capacity: &[f64], p: &[f64]) -> Result<f64> {
    check_len(capacity.len(), lambda.len())?;
    let v = offered_rates(capacity, p)?;
    if let Some(user) = v.iter().position(|&vi| vi <= 0.0) {
        return Err(AlohaError::ZeroOfferedRate { user });
    }
    Ok(lambda.iter().zip(&v).map(|(l, vi)| l / vi).sum())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum VerdictLabel {
    Recurrent,
    Transient,
    Indeterminate,
}

impl VerdictLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            VerdictLabel::Recurrent => "Recurrent",
            VerdictLabel::Transient => "Transient",
            VerdictLabel::Indeterminate => "Indeterminate",
        }
    }
}

impl std::fmt::Display for VerdictLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Which hypotheses of the two recurrence criteria hold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct HypothesisFlags {
    pub window_binary: bool,
    pub fourth_moments_finite: bool,
    /// Load sum below one.
    pub load_condition: bool,
    /// Every user's rate above its offered rate.
    pub saturation_condition: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Verdict {
    pub label: VerdictLabel,
    /// Infinite when some offered rate is zero.
    pub load_sum: f64,
    pub offered_rates: Vec<f64>,
    /// `lambda_i - v_i`.
    pub margins: Vec<f64>,
    pub flags: HypothesisFlags,
    pub notes: Vec<String>,
}

pub fn classify(config: &NetworkConfig) -> Verdict {
    let lambda = config.lambda();
    let v = offered_rates_unchecked(config.capacity(), config.attempt());
    let load_sum = if v.iter().any(|&vi| vi <= 0.0) {
        f64::INFINITY
    } else {
        lambda.iter().zip(&v).map(|(l, vi)| l / vi).sum()
    };
    let margins: Vec<f64> = lambda.iter().zip(&v).map(|(l, vi)| l - vi).collect();
    let flags = HypothesisFlags {
        window_binary: config.is_single_packet(),
        fourth_moments_finite: config
            .users()
            .iter()
            .all(|u| u.arrival.has_finite_fourth_moment() && u.window.has_finite_fourth_moment()),
        load_condition: load_sum < 1.0,
        saturation_condition: margins.iter().all(|&m| m > 0.0),
    };
    let mut notes = Vec::new();
    let label = if flags.load_condition && flags.window_binary {
        VerdictLabel::Recurrent
    } else if flags.saturation_condition && flags.fourth_moments_finite {
        VerdictLabel::Transient
    } else {
        if flags.load_condition {
            notes.push("load condition holds but window-binary hypothesis fails".to_string());
        }
        VerdictLabel::Indeterminate
    };
    Verdict { label, load_sum, offered_rates: v, margins, flags, notes }
}

/// Single-packet load `sum_i lambda_i / (p_i prod_{j != i} (1 - p_j))`.
pub fn single_packet_load(lambda: &[f64], p: &[f64]) -> Result<f64> {
    load_sum(lambda, p, p)
}

fn check_rate_point(lambda: &[f64], p: &[f64]) -> Result<()> {
    check_len(lambda.len(), p.len())?;
    check_open_unit("lambda", lambda)?;
    check_open_unit("p", p)
}

/// Is `lambda` in `C1(p)`?
pub fn c1_membership(lambda: &[f64], p: &[f64]) -> Result<bool> {
    check_rate_point(lambda, p)?;
    Ok(single_packet_load(lambda, p)? < 1.0)
}

/// Is `lambda` in `C2(p)`?
pub fn c2_membership(lambda: &[f64], p: &[f64]) -> Result<bool> {
    check_rate_point(lambda, p)?;
    let v = offered_rates_unchecked(p, p);
    Ok(lambda.iter().zip(&v).any(|(l, vi)| l < vi))
}

/// Options of the `C1` witness search.
#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WitnessOptions {
    /// Grid points per axis for the initial scan when `M <= 3`.
    pub grid_points: usize,
    /// Random starts when `M > 3`.
    pub random_starts: usize,
    /// Stop when a sweep improves the load by less than this.
    pub tolerance: f64,
    /// Maximum coordinate sweeps per start.
    pub max_iterations: usize,
    pub seed: u64,
}

impl Default for WitnessOptions {
    fn default() -> Self {
        WitnessOptions {
            grid_points: 25,
            random_starts: 64,
            tolerance: 1e-9,
            max_iterations: 10_000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WitnessResult {
    /// Attempt vector certifying membership in `C1`, if one was found.
    pub witness: Option<Vec<f64>>,
    pub best_p: Vec<f64>,
    pub best_f: f64,
    /// Best load among the starting points, before refinement.
    pub initial_f: f64,
    pub sweeps: usize,
}

impl WitnessResult {
    pub fn found(&self) -> bool {
        self.witness.is_some()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn clamp_p(p: f64) -> f64 {
    p.clamp(P_CLAMP, 1.0 - P_CLAMP)
}

/// Load with every coordinate clamped into the open cube.
fn objective(lambda: &[f64], p: &[f64]) -> f64 {
    let m = p.len();
    let mut total = 0.0;
    for i in 0..m {
        let mut v = clamp_p(p[i]);
        for (j, &pj) in p.iter().enumerate() {
            if j != i {
                v *= 1.0 - clamp_p(pj);
            }
        }
        total += lambda[i] / v;
    }
    total
}

const INV_PHI: f64 = 0.618_033_988_749_894_9;

/// Golden-section minimization over `[lo, hi]`.
fn golden_min(mut lo: f64, mut hi: f64, mut f: impl FnMut(f64) -> f64) -> (f64, f64) {
    let mut a = hi - INV_PHI * (hi - lo);
    let mut b = lo + INV_PHI * (hi - lo);
    let mut fa = f(a);
    let mut fb = f(b);
    while hi - lo > 1e-11 {
        if fa <= fb {
            hi = b;
            b = a;
            fb = fa;
            a = hi - INV_PHI * (hi - lo);
            fa = f(a);
        } else {
            lo = a;
            a = b;
            fa = fb;
            b = lo + INV_PHI * (hi - lo);
            fb = f(b);
        }
    }
    if fa <= fb {
        (a, fa)
    } else {
        (b, fb)
    }
}

struct Descent {
    p: Vec<f64>,
    f: f64,
    sweeps: usize,
}

/// Coordinate descent on logit coordinates, starting from `start`.
fn coordinate_descent(lambda: &[f64], start: Vec<f64>, opts: &WitnessOptions) -> Descent {
    let bound = logit(1.0 - P_CLAMP);
    let mut p: Vec<f64> = start.into_iter().map(clamp_p).collect();
    let mut f = objective(lambda, &p);
    let mut sweeps = 0;
    while sweeps < opts.max_iterations && f >= 1.0 - EARLY_EXIT_MARGIN {
        sweeps += 1;
        let before = f;
        for i in 0..p.len() {
            let mut trial = p.clone();
            let (x, fx) = golden_min(-bound, bound, |x| {
                trial[i] = clamp_p(sigmoid(x));
                objective(lambda, &trial)
            });
            if fx < f {
                p[i] = clamp_p(sigmoid(x));
                f = fx;
            }
            if f < 1.0 - EARLY_EXIT_MARGIN {
                break;
            }
        }
        if before - f < opts.tolerance {
            break;
        }
    }
    Descent { p, f, sweeps }
}

fn grid_best(lambda: &[f64], points: usize) -> (Vec<f64>, f64) {
    let m = lambda.len();
    let axis: Vec<f64> = (0..points).map(|k| (k as f64 + 0.5) / points as f64).collect();
    let mut idx = vec![0usize; m];
    let mut best = (vec![axis[0]; m], f64::INFINITY);
    let mut p = vec![0.0; m];
    loop {
        for (pi, &k) in p.iter_mut().zip(&idx) {
            *pi = axis[k];
        }
        let f = objective(lambda, &p);
        if f < best.1 {
            best = (p.clone(), f);
        }
        // odometer increment
        let mut d = 0;
        loop {
            if d == m {
                return best;
            }
            idx[d] += 1;
            if idx[d] < points {
                break;
            }
            idx[d] = 0;
            d += 1;
        }
    }
}

fn lexicographic_lt(a: &[f64], b: &[f64]) -> bool {
    a.iter().zip(b).find(|(x, y)| x != y).is_some_and(|(x, y)| x < y)
}

/// Searches `(0,1)^M` for an attempt vector putting `lambda` inside `C1(p)`.
///
/// Starts from the best point of a uniform grid when `M <= 3`, otherwise from
/// seeded random starts run in parallel; the lowest load wins, ties going to
/// the lexicographically smallest vector. A returned witness has been
/// re-checked with [`c1_membership`].
pub fn find_c1_witness(lambda: &[f64], opts: &WitnessOptions) -> Result<WitnessResult> {
    if lambda.is_empty() {
        return Err(AlohaError::NoUsers);
    }
    check_open_unit("lambda", lambda)?;
    if opts.grid_points == 0 || opts.random_starts == 0 {
        return Err(AlohaError::InvalidArgument("witness search needs at least one start".into()));
    }
    let m = lambda.len();
    let starts: Vec<Vec<f64>> = if m <= 3 {
        vec![grid_best(lambda, opts.grid_points).0]
    } else {
        let mut rng = RngState::new(opts.seed);
        (0..opts.random_starts)
            .map(|_| {
                (0..m)
                    .map(|_| {
                        let (u, r) = rng.next_unit();
                        rng = r;
                        clamp_p(u)
                    })
                    .collect()
            })
            .collect()
    };
    let initial_f = starts.iter().map(|s| objective(lambda, s)).fold(f64::INFINITY, f64::min);
    let runs: Vec<Descent> = starts
        .into_par_iter()
        .map(|s| coordinate_descent(lambda, s, opts))
        .collect();
    let sweeps = runs.iter().map(|d| d.sweeps).sum();
    let best = runs
        .into_iter()
        .reduce(|a, b| {
            if b.f < a.f || (b.f == a.f && lexicographic_lt(&b.p, &a.p)) {
                b
            } else {
                a
            }
        })
        .expect("at least one start");
    let witness = if c1_membership(lambda, &best.p)? { Some(best.p.clone()) } else { None };
    Ok(WitnessResult { witness, best_p: best.p, best_f: best.f, initial_f, sweeps })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dists::DistributionSpec;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    #[test]
    fn offered_rate_examples() {
        assert_eq!(offered_rates(&[1.0, 1.0], &[0.5, 0.5]).unwrap(), vec![0.5, 0.5]);
        assert_eq!(offered_rates(&[2.0, 1.0, 1.0], &[0.5, 0.5, 0.5]).unwrap(), vec![0.5, 0.25, 0.25]);
        assert_eq!(offered_rates(&[3.0], &[0.9]).unwrap(), vec![3.0]);
        assert!(matches!(
            offered_rates(&[1.0], &[0.5, 0.5]),
            Err(AlohaError::DimensionMismatch { .. })
        ));
        assert!(offered_rates(&[1.0], &[1.5]).is_err());
    }

    #[test]
    fn load_sum_examples() {
        assert!(close(load_sum(&[0.1, 0.1], &[0.5, 0.5], &[0.5, 0.5]).unwrap(), 0.8));
        assert!(close(load_sum(&[0.5], &[1.0], &[0.3]).unwrap(), 0.5));
        let l = load_sum(&[0.2, 0.3], &[0.4, 0.6], &[0.4, 0.6]).unwrap();
        assert!(close(l, 0.2 / 0.16 + 0.3 / 0.36), "{l}");
        assert!((l - 2.083_333_333_333).abs() < 1e-9);
        assert!(matches!(
            load_sum(&[0.1, 0.1], &[0.5, 0.5], &[1.0, 0.5]),
            Err(AlohaError::ZeroOfferedRate { user: 1 })
        ));
    }

    #[test]
    fn classify_examples() {
        let v = classify(&NetworkConfig::bernoulli(&[0.1, 0.1], &[0.5, 0.5]).unwrap());
        assert_eq!(v.label, VerdictLabel::Recurrent);
        assert!(close(v.load_sum, 0.8));

        let v = classify(&NetworkConfig::bernoulli(&[0.3, 0.3], &[0.5, 0.5]).unwrap());
        assert_eq!(v.label, VerdictLabel::Transient);
        assert!(v.margins.iter().all(|&m| close(m, 0.05)));

        let v = classify(&NetworkConfig::bernoulli(&[0.26, 0.20], &[0.5, 0.5]).unwrap());
        assert_eq!(v.label, VerdictLabel::Indeterminate);
        assert!(close(v.load_sum, 1.84));
        assert!(close(v.margins[1], -0.05));
    }

    #[test]
    fn multipacket_window_is_never_called_recurrent() {
        // C = 1.5, p = 0.9: load 0.1 / 1.5 < 1 but the window is not binary.
        let c = NetworkConfig::from_specs(&[(
            DistributionSpec::bernoulli(0.1),
            DistributionSpec::finite_pmf(vec![0.1, 0.3, 0.6]),
        )])
        .unwrap();
        let v = classify(&c);
        assert!(v.flags.load_condition && !v.flags.window_binary);
        assert_eq!(v.label, VerdictLabel::Indeterminate);
        assert_eq!(v.notes.len(), 1);
    }

    #[test]
    fn zero_offered_rate_gives_infinite_load() {
        let c = NetworkConfig::bernoulli(&[0.1, 0.9], &[1.0, 1.0]).unwrap();
        let v = classify(&c);
        assert!(v.load_sum.is_infinite());
        assert_eq!(v.label, VerdictLabel::Transient);
    }

    #[test]
    fn membership_examples() {
        assert!(c1_membership(&[0.1, 0.1], &[0.5, 0.5]).unwrap());
        assert!(!c1_membership(&[0.3, 0.3], &[0.5, 0.5]).unwrap());
        assert!(c1_membership(&[0.9], &[0.95]).unwrap());
        assert!(c2_membership(&[0.9, 0.9], &[0.99, 0.001]).unwrap());
        assert!(!c2_membership(&[0.5, 0.5], &[0.5, 0.5]).unwrap());
        assert!(c2_membership(&[0.2, 0.9], &[0.5, 0.5]).unwrap());
        assert!(matches!(c1_membership(&[1.0], &[0.5]), Err(AlohaError::DomainError(_))));
        assert!(matches!(c2_membership(&[0.5], &[0.0]), Err(AlohaError::DomainError(_))));
    }

    #[test]
    fn golden_section_finds_quadratic_minimum() {
        let (x, fx) = golden_min(-5.0, 5.0, |x| (x - 1.25).powi(2) + 3.0);
        assert!((x - 1.25).abs() < 1e-6);
        assert!((fx - 3.0).abs() < 1e-12);
    }

    #[test]
    fn single_user_witness() {
        let r = find_c1_witness(&[0.5], &WitnessOptions::default()).unwrap();
        let p = r.witness.expect("witness");
        assert!(p[0] > 0.5);
        assert!(r.best_f < 1.0);
    }

    #[test]
    fn witness_rejects_bad_rates() {
        let o = WitnessOptions::default();
        assert!(find_c1_witness(&[0.0, 0.5], &o).is_err());
        assert!(find_c1_witness(&[], &o).is_err());
    }

    #[test]
    fn four_user_random_starts_are_deterministic() {
        let o = WitnessOptions { seed: 17, ..WitnessOptions::default() };
        let a = find_c1_witness(&[0.02, 0.03, 0.01, 0.02], &o).unwrap();
        let b = find_c1_witness(&[0.02, 0.03, 0.01, 0.02], &o).unwrap();
        assert_eq!(a, b);
        assert!(a.found());
        // Symmetric load above the symmetric optimum (1 - 1/M)^(M - 1) / M.
        let r = find_c1_witness(&[0.2; 4], &o).unwrap();
        assert!(!r.found());
        assert!(r.best_f > 1.0);
    }
}
