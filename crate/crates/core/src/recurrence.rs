//! Monte Carlo views of recurrence and transience.
//!
//! * Return time `T`: first slot `k >= 1` at which every queue is empty again,
//!   for the chain started at the origin. Runs that hit their horizon first are
//!   censored and only bound `T` from below.
//! * Lyapunov trace: estimates of `y_n = sum_i E[Q_i(n) 1(T >= n)] / v_i` and of
//!   `P(T >= n)`, together with the per-slot drift statistic
//!   `y_{n+1} - y_n + eps * P(T >= n + 1)`, which is nonpositive in expectation
//!   when `eps = 1 - sum_i lambda_i / v_i > 0`.
//! * Escape probability: fraction of runs from a large start state that never
//!   reach the origin within the horizon.
//!
//! Replication `r` uses the stream seed `replication_seed(master, r)`. Work is
//! split into fixed chunks of [`CHUNK`] replications and partial sums are merged
//! in chunk order, so results do not depend on the number of threads.

use rayon::prelude::*;
use serde::Serialize;

use crate::chain::{step_in_place, NetworkConfig, QueueState};
use crate::error::{AlohaError, Result};
use crate::region::offered_rates;
use crate::rng::replication_seed;

/// Replications per work unit.
pub const CHUNK: u64 = 256;

pub const DEFAULT_RETURN_HORIZON: u64 = 1_000_000;
pub const DEFAULT_ESCAPE_HORIZON: u64 = 100_000;
/// Default `K` in the escape start state `ceil(delta * K)`.
pub const DEFAULT_ESCAPE_SCALE: u64 = 10;

/// Two-sided 95% normal quantile.
const Z95: f64 = 1.959_963_984_540_054;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ReturnTimeOutcome {
    Returned(u64),
    Censored { horizon: u64 },
}

impl ReturnTimeOutcome {
    /// The observed value, or the horizon for a censored run.
    pub fn lower_bound(&self) -> u64 {
        match *self {
            ReturnTimeOutcome::Returned(t) => t,
            ReturnTimeOutcome::Censored { horizon } => horizon,
        }
    }

    pub fn is_censored(&self) -> bool {
        matches!(self, ReturnTimeOutcome::Censored { .. })
    }

    /// Whether `T >= k` is known (or, for censored runs, assumed) to hold.
    fn at_least(&self, k: u64) -> bool {
        match *self {
            ReturnTimeOutcome::Returned(t) => t >= k,
            ReturnTimeOutcome::Censored { .. } => true,
        }
    }
}

fn check_dims(config: &NetworkConfig, state: &QueueState) -> Result<()> {
    let m = config.num_users();
    if state.q.len() != m {
        return Err(AlohaError::DimensionMismatch { expected: m, got: state.q.len() });
    }
    Ok(())
}

fn check_positive(name: &str, x: u64) -> Result<()> {
    if x == 0 {
        Err(AlohaError::InvalidArgument(format!("{name} must be at least 1")))
    } else {
        Ok(())
    }
}

/// Runs from `init` until the origin is reached or `horizon` slots elapse.
/// Returns the hitting slot, if any.
fn first_origin_visit(config: &NetworkConfig, init: &[u64], horizon: u64, seed: u64) -> Option<u64> {
    let m = config.num_users();
    let mut q = init.to_vec();
    let mut arrivals = vec![0; m];
    let mut windows = vec![0; m];
    for slot in 1..=horizon {
        config.draw_slot(seed, slot, &mut arrivals, &mut windows);
        step_in_place(&mut q, &arrivals, &windows);
        if q.iter().all(|&x| x == 0) {
            return Some(slot);
        }
    }
    None
}

/// One return time from the origin using stream `seed`.
pub fn sample_return_time(config: &NetworkConfig, horizon: u64, seed: u64) -> Result<ReturnTimeOutcome> {
    check_positive("horizon", horizon)?;
    let origin = vec![0; config.num_users()];
    Ok(match first_origin_visit(config, &origin, horizon, seed) {
        Some(t) => ReturnTimeOutcome::Returned(t),
        None => ReturnTimeOutcome::Censored { horizon },
    })
}

/// `replications` return times, replication `r` seeded from `(seed, r)`.
pub fn sample_return_times(
    config: &NetworkConfig,
    horizon: u64,
    replications: u64,
    seed: u64,
) -> Result<Vec<ReturnTimeOutcome>> {
    check_positive("horizon", horizon)?;
    check_positive("replications", replications)?;
    (0..replications)
        .into_par_iter()
        .map(|r| sample_return_time(config, horizon, replication_seed(seed, r)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReturnTimeStats {
    pub n_total: u64,
    pub n_censored: u64,
    /// Sample mean, only when nothing was censored.
    pub mean: Option<f64>,
    /// Mean with censored runs counted at their horizon.
    pub mean_lower_bound: f64,
    /// Standard error of `mean`.
    pub std_error: Option<f64>,
    /// `(k, fraction of runs with T >= k)`; censored runs count as exceeding every k.
    pub tail: Vec<(u64, f64)>,
}

pub fn return_time_stats(outcomes: &[ReturnTimeOutcome], tail_at: &[u64]) -> Result<ReturnTimeStats> {
    if outcomes.is_empty() {
        return Err(AlohaError::EmptyInput);
    }
    let n = outcomes.len() as f64;
    let n_censored = outcomes.iter().filter(|o| o.is_censored()).count() as u64;
    let mean_lower_bound = outcomes.iter().map(|o| o.lower_bound() as f64).sum::<f64>() / n;
    let (mean, std_error) = if n_censored == 0 {
        let var = if outcomes.len() > 1 {
            outcomes
                .iter()
                .map(|o| (o.lower_bound() as f64 - mean_lower_bound).powi(2))
                .sum::<f64>()
                / (n - 1.0)
        } else {
            0.0
        };
        (Some(mean_lower_bound), Some((var / n).sqrt()))
    } else {
        (None, None)
    };
    let mut ks = tail_at.to_vec();
    ks.sort_unstable();
    ks.dedup();
    let tail = ks
        .into_iter()
        .map(|k| (k, outcomes.iter().filter(|o| o.at_least(k)).count() as f64 / n))
        .collect();
    Ok(ReturnTimeStats {
        n_total: outcomes.len() as u64,
        n_censored,
        mean,
        mean_lower_bound,
        std_error,
        tail,
    })
}

/// Monte Carlo estimates along the first `n_max` slots from the origin.
///
/// Vectors indexed by `n - 1` for `n = 1..=n_max`; the drift vectors cover
/// `n = 1..n_max`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LyapunovTrace {
    pub n_max: u64,
    pub replications: u64,
    pub offered_rates: Vec<f64>,
    /// `1 - sum_i lambda_i / v_i`.
    pub epsilon: f64,
    pub y: Vec<f64>,
    pub y_se: Vec<f64>,
    /// `y_user[i][n - 1]` estimates `E[Q_i(n) 1(T >= n)]`.
    pub y_user: Vec<Vec<f64>>,
    /// `P(T >= n)`.
    pub survival: Vec<f64>,
    pub survival_se: Vec<f64>,
    /// `y_{n+1} - y_n + epsilon * P(T >= n + 1)`.
    pub drift: Vec<f64>,
    /// Standard error of `drift`, from the paired per-run differences.
    pub drift_se: Vec<f64>,
}

#[derive(Clone)]
struct TracePartial {
    y: Vec<f64>,
    y2: Vec<f64>,
    y_user: Vec<Vec<f64>>,
    alive: Vec<f64>,
    d: Vec<f64>,
    d2: Vec<f64>,
}

impl TracePartial {
    fn zeros(n_max: usize, m: usize) -> Self {
        TracePartial {
            y: vec![0.0; n_max],
            y2: vec![0.0; n_max],
            y_user: vec![vec![0.0; n_max]; m],
            alive: vec![0.0; n_max],
            d: vec![0.0; n_max.saturating_sub(1)],
            d2: vec![0.0; n_max.saturating_sub(1)],
        }
    }

    fn merge(mut self, other: &TracePartial) -> Self {
        let add = |a: &mut Vec<f64>, b: &Vec<f64>| a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        add(&mut self.y, &other.y);
        add(&mut self.y2, &other.y2);
        add(&mut self.alive, &other.alive);
        add(&mut self.d, &other.d);
        add(&mut self.d2, &other.d2);
        for (a, b) in self.y_user.iter_mut().zip(&other.y_user) {
            add(a, b);
        }
        self
    }
}

fn mean_se(sum: f64, sum_sq: f64, n: f64) -> (f64, f64) {
    let mean = sum / n;
    if n < 2.0 {
        return (mean, 0.0);
    }
    let var = ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0);
    (mean, (var / n).sqrt())
}

pub fn lyapunov_trace(config: &NetworkConfig, replications: u64, n_max: u64, seed: u64) -> Result<LyapunovTrace> {
    if let Some(user) = config.users().iter().position(|u| !u.window.is_binary()) {
        return Err(AlohaError::NotSinglePacket { user });
    }
    check_positive("replications", replications)?;
    if n_max == 0 {
        return Err(AlohaError::InvalidArgument("n_max must be at least 1".into()));
    }
    let m = config.num_users();
    let v = offered_rates(config.capacity(), config.attempt())?;
    if let Some(user) = v.iter().position(|&x| x <= 0.0) {
        return Err(AlohaError::ZeroOfferedRate { user });
    }
    let epsilon = 1.0 - config.lambda().iter().zip(&v).map(|(l, vi)| l / vi).sum::<f64>();
    let len = n_max as usize;

    let run = |partial: &mut TracePartial, rep: u64| {
        let stream = replication_seed(seed, rep);
        let mut q = vec![0u64; m];
        let mut arrivals = vec![0; m];
        let mut windows = vec![0; m];
        // x(n) = sum_i Q_i(n) 1(T >= n) / v_i. Once the origin is hit at slot T,
        // x and 1(T >= n) vanish for n > T, and so does every later drift term.
        let mut prev_x: Option<f64> = None;
        for n in 1..=n_max {
            let idx = (n - 1) as usize;
            config.draw_slot(stream, n, &mut arrivals, &mut windows);
            step_in_place(&mut q, &arrivals, &windows);
            let x: f64 = q.iter().zip(&v).map(|(&qi, vi)| qi as f64 / vi).sum();
            for (acc, &qi) in partial.y_user.iter_mut().zip(&q) {
                acc[idx] += qi as f64;
            }
            partial.y[idx] += x;
            partial.y2[idx] += x * x;
            partial.alive[idx] += 1.0;
            if let Some(px) = prev_x {
                let d = x - px + epsilon;
                partial.d[idx - 1] += d;
                partial.d2[idx - 1] += d * d;
            }
            prev_x = Some(x);
            if q.iter().all(|&qi| qi == 0) {
                break;
            }
        }
    };

    let chunks = replications.div_ceil(CHUNK);
    let partials: Vec<TracePartial> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut p = TracePartial::zeros(len, m);
            for rep in c * CHUNK..((c + 1) * CHUNK).min(replications) {
                run(&mut p, rep);
            }
            p
        })
        .collect();
    let total = partials
        .iter()
        .fold(TracePartial::zeros(len, m), |acc, p| acc.merge(p));

    let n = replications as f64;
    let (y, y_se): (Vec<f64>, Vec<f64>) = (0..len).map(|k| mean_se(total.y[k], total.y2[k], n)).unzip();
    let (survival, survival_se): (Vec<f64>, Vec<f64>) = total
        .alive
        .iter()
        .map(|&a| {
            let p = a / n;
            (p, (p * (1.0 - p) / n).sqrt())
        })
        .unzip();
    let (drift, drift_se): (Vec<f64>, Vec<f64>) =
        (0..len.saturating_sub(1)).map(|k| mean_se(total.d[k], total.d2[k], n)).unzip();
    let y_user = total.y_user.iter().map(|row| row.iter().map(|s| s / n).collect()).collect();
    Ok(LyapunovTrace {
        n_max,
        replications,
        offered_rates: v,
        epsilon,
        y,
        y_se,
        y_user,
        survival,
        survival_se,
        drift,
        drift_se,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EscapeEstimate {
    pub init: Vec<u64>,
    pub horizon: u64,
    pub replications: u64,
    pub escaped: u64,
    pub estimate: f64,
    /// Wilson 95% interval.
    pub ci_low: f64,
    pub ci_high: f64,
}

fn wilson_interval(successes: u64, n: u64) -> (f64, f64) {
    let n = n as f64;
    let p = successes as f64 / n;
    let z2 = Z95 * Z95;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let half = Z95 * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    let low = if successes == 0 { 0.0 } else { (centre - half).max(0.0) };
    let high = if successes as f64 == n { 1.0 } else { (centre + half).min(1.0) };
    (low, high)
}

/// Start state `ceil(3 * max_i C_i * scale)` in every coordinate.
pub fn default_escape_init(config: &NetworkConfig, scale: u64) -> QueueState {
    let delta = 3.0 * config.capacity().iter().copied().fold(0.0, f64::max);
    let level = (delta * scale as f64).ceil().max(1.0) as u64;
    QueueState::new(vec![level; config.num_users()])
}

/// Fraction of runs from `init` that stay away from the origin for `horizon` slots.
pub fn escape_probability(
    config: &NetworkConfig,
    init: &QueueState,
    horizon: u64,
    replications: u64,
    seed: u64,
) -> Result<EscapeEstimate> {
    check_dims(config, init)?;
    if init.is_origin() {
        return Err(AlohaError::InitIsOrigin);
    }
    check_positive("horizon", horizon)?;
    check_positive("replications", replications)?;
    let escaped = (0..replications)
        .into_par_iter()
        .filter(|&r| first_origin_visit(config, &init.q, horizon, replication_seed(seed, r)).is_none())
        .count() as u64;
    let (ci_low, ci_high) = wilson_interval(escaped, replications);
    Ok(EscapeEstimate {
        init: init.q.clone(),
        horizon,
        replications,
        escaped,
        estimate: escaped as f64 / replications as f64,
        ci_low,
        ci_high,
    })
}

/// Per-user mean one-slot increment over saturated slots, with standard errors.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DriftEstimate {
    pub saturated_slots: u64,
    pub mean: Vec<f64>,
    pub std_error: Vec<f64>,
}

/// Averages `Q_i(n + 1) - Q_i(n)` over slots where every queue holds at least
/// `threshold` packets before the slot, across `replications` runs from `init`.
///
/// With `threshold` at least the largest window value, service is never capped
/// by the queue length in the averaged slots.
pub fn saturated_increments(
    config: &NetworkConfig,
    init: &QueueState,
    horizon: u64,
    replications: u64,
    threshold: u64,
    seed: u64,
) -> Result<DriftEstimate> {
    check_dims(config, init)?;
    check_positive("horizon", horizon)?;
    check_positive("replications", replications)?;
    let m = config.num_users();
    let threshold = threshold.max(1);
    let per_rep: Vec<(u64, Vec<f64>, Vec<f64>)> = (0..replications)
        .into_par_iter()
        .map(|r| {
            let stream = replication_seed(seed, r);
            let mut q = init.q.clone();
            let mut arrivals = vec![0; m];
            let mut windows = vec![0; m];
            let mut count = 0u64;
            let mut sum = vec![0.0; m];
            let mut sum_sq = vec![0.0; m];
            for slot in 1..=horizon {
                let saturated = q.iter().all(|&x| x >= threshold);
                let before = q.clone();
                config.draw_slot(stream, slot, &mut arrivals, &mut windows);
                step_in_place(&mut q, &arrivals, &windows);
                if saturated {
                    count += 1;
                    for i in 0..m {
                        let d = q[i] as f64 - before[i] as f64;
                        sum[i] += d;
                        sum_sq[i] += d * d;
                    }
                }
            }
            (count, sum, sum_sq)
        })
        .collect();
    let count: u64 = per_rep.iter().map(|r| r.0).sum();
    let mut sum = vec![0.0; m];
    let mut sum_sq = vec![0.0; m];
    for (_, s, s2) in &per_rep {
        for i in 0..m {
            sum[i] += s[i];
            sum_sq[i] += s2[i];
        }
    }
    let (mean, std_error) = (0..m).map(|i| mean_se(sum[i], sum_sq[i], count as f64)).unzip();
    Ok(DriftEstimate { saturated_slots: count, mean, std_error })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stats_uncensored() {
        let o = [ReturnTimeOutcome::Returned(1), ReturnTimeOutcome::Returned(1), ReturnTimeOutcome::Returned(3)];
        let s = return_time_stats(&o, &[1, 2, 3, 4]).unwrap();
        assert_eq!(s.n_censored, 0);
        assert!((s.mean.unwrap() - 5.0 / 3.0).abs() < 1e-15);
        assert_eq!(s.tail, vec![(1, 1.0), (2, 1.0 / 3.0), (3, 1.0 / 3.0), (4, 0.0)]);
        // sample sd of {1,1,3} is 2/sqrt(3)
        assert!((s.std_error.unwrap() - (4.0f64 / 3.0 / 3.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn stats_censored() {
        let o = [ReturnTimeOutcome::Returned(2), ReturnTimeOutcome::Censored { horizon: 100 }];
        let s = return_time_stats(&o, &[]).unwrap();
        assert_eq!(s.mean, None);
        assert_eq!(s.std_error, None);
        assert_eq!(s.mean_lower_bound, 51.0);
        assert_eq!(s.n_censored, 1);
    }

    #[test]
    fn stats_empty() {
        assert!(matches!(return_time_stats(&[], &[1]), Err(AlohaError::EmptyInput)));
    }

    #[test]
    fn immediate_return_when_first_slot_is_empty() {
        // No arrivals possible in the first slot: arrival law is Bernoulli but we pick a seed
        // whose first arrival draw is zero by searching.
        let c = NetworkConfig::bernoulli(&[0.3, 0.2], &[0.5, 0.5]).unwrap();
        let mut a = vec![0; 2];
        let mut w = vec![0; 2];
        let seed = (0..)
            .find(|&s| {
                c.draw_slot(s, 1, &mut a, &mut w);
                a.iter().all(|&x| x == 0)
            })
            .unwrap();
        assert_eq!(sample_return_time(&c, 10, seed).unwrap(), ReturnTimeOutcome::Returned(1));
    }

    #[test]
    fn return_time_is_reproducible() {
        let c = NetworkConfig::bernoulli(&[0.1, 0.1], &[0.5, 0.5]).unwrap();
        for s in 0..20 {
            assert_eq!(sample_return_time(&c, 1000, s).unwrap(), sample_return_time(&c, 1000, s).unwrap());
        }
    }

    #[test]
    fn trace_argument_errors() {
        let c = NetworkConfig::bernoulli(&[0.1, 0.1], &[0.5, 0.5]).unwrap();
        assert!(matches!(lyapunov_trace(&c, 10, 0, 1), Err(AlohaError::InvalidArgument(_))));
        let multi = NetworkConfig::from_specs(&[(
            crate::dists::DistributionSpec::bernoulli(0.1),
            crate::dists::DistributionSpec::finite_pmf(vec![0.5, 0.25, 0.25]),
        )])
        .unwrap();
        assert!(matches!(lyapunov_trace(&multi, 10, 5, 1), Err(AlohaError::NotSinglePacket { user: 0 })));
    }

    #[test]
    fn trace_first_slot_is_exact_for_point_masses() {
        let c = NetworkConfig::bernoulli(&[1.0], &[0.5]).unwrap();
        let t = lyapunov_trace(&c, 50, 3, 9).unwrap();
        // Q(1) = 1 always, v = 0.5.
        assert_eq!(t.y[0], 2.0);
        assert_eq!(t.y_se[0], 0.0);
        assert_eq!(t.survival[0], 1.0);
    }

    #[test]
    fn escape_errors() {
        let c = NetworkConfig::bernoulli(&[0.3], &[0.7]).unwrap();
        assert!(matches!(
            escape_probability(&c, &QueueState::origin(1), 10, 10, 0),
            Err(AlohaError::InitIsOrigin)
        ));
        assert!(escape_probability(&c, &QueueState::new(vec![1, 1]), 10, 10, 0).is_err());
    }

    #[test]
    fn default_init_uses_three_times_max_capacity() {
        let c = NetworkConfig::bernoulli(&[0.6, 0.6], &[0.5, 0.5]).unwrap();
        assert_eq!(default_escape_init(&c, 10).q, vec![15, 15]);
    }

    #[test]
    fn wilson_bounds() {
        let (lo, hi) = wilson_interval(1000, 1000);
        assert!(lo > 0.99 && hi == 1.0);
        let (lo, hi) = wilson_interval(0, 100);
        assert_eq!(lo, 0.0);
        assert!(hi > 0.0 && hi < 0.05);
    }
}
