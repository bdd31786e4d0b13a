//! The queue-length chain `Q(n)` of a finite-user slotted Aloha network.
//!
//! In slot `n + 1` user `i` receives `A_i(n + 1)` packets and draws a window
//! `W_i(n + 1)`. The user is *active* when its queue before the slot is
//! nonempty and its window is at least one. A slot succeeds for user `i`
//! exactly when `i` is the only active user, in which case
//! `min(Q_i(n), W_i(n + 1))` packets leave its queue. Arrivals of a slot are
//! never served in that same slot, and an empty user drawing a positive
//! window neither transmits nor blocks anyone.

use std::fmt::Write as _;

use serde::Serialize;

use crate::dists::{Distribution, DistributionSpec};
use crate::error::{AlohaError, LawRole, Result};
use crate::rng::{slot_uniform, DrawTag};

/// Slot count up to which [`simulate_trajectory`] keeps every state by default.
pub const FULL_STORAGE_LIMIT: u64 = 100_000;

/// Per-user arrival and window laws.
#[derive(Debug, Clone, PartialEq)]
pub struct UserLaws {
    pub arrival: Distribution,
    pub window: Distribution,
}

/// Validated network: one pair of laws per user plus derived rates.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkConfig {
    users: Vec<UserLaws>,
    lambda: Vec<f64>,
    capacity: Vec<f64>,
    attempt: Vec<f64>,
}

impl NetworkConfig {
    /// Assembles a network, enforcing the irreducibility hypotheses
    /// `P(A_i = 1) > 0` and `P(W_i = 1) > 0` for every user.
    pub fn new(users: Vec<UserLaws>) -> Result<Self> {
        for (i, u) in users.iter().enumerate() {
            if !u.arrival.has_mass_at_one() {
                return Err(AlohaError::ZeroProbOfOne { user: i, role: LawRole::Arrival });
            }
            if !u.window.has_mass_at_one() {
                return Err(AlohaError::ZeroProbOfOne { user: i, role: LawRole::Window });
            }
        }
        Self::new_unchecked(users)
    }

    /// Assembles a network without the irreducibility checks. The state space
    /// may then be reducible; useful for studying degenerate laws.
    pub fn new_unchecked(users: Vec<UserLaws>) -> Result<Self> {
        if users.is_empty() {
            return Err(AlohaError::NoUsers);
        }
        let lambda = users.iter().map(|u| u.arrival.mean()).collect();
        let capacity = users.iter().map(|u| u.window.mean()).collect();
        let attempt = users.iter().map(|u| attempt_probability(&u.window)).collect();
        Ok(NetworkConfig { users, lambda, capacity, attempt })
    }

    pub fn from_specs(specs: &[(DistributionSpec, DistributionSpec)]) -> Result<Self> {
        let users = specs
            .iter()
            .map(|(a, w)| {
                Ok(UserLaws {
                    arrival: Distribution::new(a.clone())?,
                    window: Distribution::new(w.clone())?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(users)
    }

    /// Bernoulli arrivals with rates `lambda` and Bernoulli windows with attempt probabilities `p`.
    pub fn bernoulli(lambda: &[f64], p: &[f64]) -> Result<Self> {
        if lambda.len() != p.len() {
            return Err(AlohaError::DimensionMismatch { expected: lambda.len(), got: p.len() });
        }
        let specs: Vec<_> = lambda
            .iter()
            .zip(p)
            .map(|(&l, &q)| (DistributionSpec::bernoulli(l), DistributionSpec::bernoulli(q)))
            .collect();
        Self::from_specs(&specs)
    }

    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    pub fn users(&self) -> &[UserLaws] {
        &self.users
    }

    /// Mean arrivals per slot, one entry per user.
    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    /// Mean window per slot, one entry per user.
    pub fn capacity(&self) -> &[f64] {
        &self.capacity
    }

    /// Attempt probabilities `P(W_i >= 1)`.
    pub fn attempt(&self) -> &[f64] {
        &self.attempt
    }

    /// True when every window law is supported on {0, 1}.
    pub fn is_single_packet(&self) -> bool {
        self.users.iter().all(|u| u.window.is_binary())
    }

    pub fn specs(&self) -> Vec<(DistributionSpec, DistributionSpec)> {
        self.users
            .iter()
            .map(|u| (u.arrival.spec().clone(), u.window.spec().clone()))
            .collect()
    }

    /// Draws slot `slot` (1-based) of the stream identified by `seed` into the buffers.
    #[inline]
    pub fn draw_slot(&self, seed: u64, slot: u64, arrivals: &mut [u64], windows: &mut [u64]) {
        for (i, u) in self.users.iter().enumerate() {
            arrivals[i] = u.arrival.sample_unit(slot_uniform(seed, slot, i, DrawTag::Arrival));
            windows[i] = u.window.sample_unit(slot_uniform(seed, slot, i, DrawTag::Window));
        }
    }
}

/// `P(W >= 1)`.
pub fn attempt_probability(window: &Distribution) -> f64 {
    window.prob_geq_one()
}

/// Queue lengths of all users.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct QueueState {
    pub q: Vec<u64>,
}

impl QueueState {
    pub fn new(q: Vec<u64>) -> Self {
        QueueState { q }
    }

    pub fn origin(m: usize) -> Self {
        QueueState { q: vec![0; m] }
    }

    pub fn is_origin(&self) -> bool {
        self.q.iter().all(|&x| x == 0)
    }

    pub fn total(&self) -> u64 {
        self.q.iter().sum()
    }
}

/// The random inputs of one slot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SlotDraw {
    pub arrivals: Vec<u64>,
    pub windows: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StepOutcome {
    pub next: QueueState,
    pub success: Vec<bool>,
    pub served: Vec<u64>,
}

impl StepOutcome {
    pub fn success_user(&self) -> Option<usize> {
        self.success.iter().position(|&s| s)
    }
}

/// Which user, if any, is alone on the channel given pre-slot queues and windows.
#[inline]
pub fn sole_active(q: &[u64], windows: &[u64]) -> Option<usize> {
    let mut winner = None;
    for (i, (&qi, &wi)) in q.iter().zip(windows).enumerate() {
        if qi >= 1 && wi >= 1 {
            if winner.is_some() {
                return None;
            }
            winner = Some(i);
        }
    }
    winner
}

/// Applies one slot in place. Returns the successful user and how many packets it cleared.
#[inline]
pub fn step_in_place(q: &mut [u64], arrivals: &[u64], windows: &[u64]) -> Option<(usize, u64)> {
    let winner = sole_active(q, windows).map(|i| {
        let served = q[i].min(windows[i]);
        q[i] -= served;
        (i, served)
    });
    for (qi, &a) in q.iter_mut().zip(arrivals) {
        *qi += a;
    }
    winner
}

/// One transition of the chain.
pub fn step(state: &QueueState, draw: &SlotDraw) -> Result<StepOutcome> {
    let m = state.q.len();
    for len in [draw.arrivals.len(), draw.windows.len()] {
        if len != m {
            return Err(AlohaError::DimensionMismatch { expected: m, got: len });
        }
    }
    let mut next = state.q.clone();
    let mut success = vec![false; m];
    let mut served = vec![0; m];
    if let Some((i, s)) = step_in_place(&mut next, &draw.arrivals, &draw.windows) {
        success[i] = true;
        served[i] = s;
    }
    Ok(StepOutcome { next: QueueState { q: next }, success, served })
}

/// One recorded slot of a trajectory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TrajectoryRow {
    pub slot: u64,
    pub q: Vec<u64>,
    pub success_user: Option<usize>,
    pub served: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryRecord {
    pub seed: u64,
    pub horizon: u64,
    /// Rows are kept for slots that are multiples of `stride`.
    pub stride: u64,
    pub initial: QueueState,
    pub rows: Vec<TrajectoryRow>,
    pub final_state: QueueState,
    pub successes: Vec<u64>,
    pub served_total: Vec<u64>,
    /// Slots `n` in `1..=horizon` after which some queue is nonempty.
    pub nonempty_slots: u64,
}

impl TrajectoryRecord {
    pub fn nonempty_fraction(&self) -> f64 {
        self.nonempty_slots as f64 / self.horizon as f64
    }

    /// CSV with header `slot,q_1..q_M,success_user,served`; `success_user` is 1-based, 0 for none.
    pub fn to_csv(&self) -> String {
        let m = self.initial.q.len();
        let mut out = String::from("slot");
        for i in 1..=m {
            let _ = write!(out, ",q_{i}");
        }
        out.push_str(",success_user,served\n");
        for row in &self.rows {
            let _ = write!(out, "{}", row.slot);
            for x in &row.q {
                let _ = write!(out, ",{x}");
            }
            let user = row.success_user.map_or(0, |i| i + 1);
            let _ = writeln!(out, ",{user},{}", row.served);
        }
        out
    }
}

/// Default row stride: every slot up to [`FULL_STORAGE_LIMIT`], thinned beyond.
pub fn default_stride(horizon: u64) -> u64 {
    if horizon <= FULL_STORAGE_LIMIT {
        1
    } else {
        horizon.div_ceil(FULL_STORAGE_LIMIT)
    }
}

/// Runs the chain for `horizon` slots from `init`.
///
/// `stride` overrides [`default_stride`]. The result is a pure function of
/// `(config, init, horizon, seed, stride)`.
pub fn simulate_trajectory(
    config: &NetworkConfig,
    init: &QueueState,
    horizon: u64,
    seed: u64,
    stride: Option<u64>,
) -> Result<TrajectoryRecord> {
    let m = config.num_users();
    if init.q.len() != m {
        return Err(AlohaError::DimensionMismatch { expected: m, got: init.q.len() });
    }
    if horizon == 0 {
        return Err(AlohaError::InvalidArgument("horizon must be at least 1".into()));
    }
    let stride = stride.unwrap_or_else(|| default_stride(horizon));
    if stride == 0 {
        return Err(AlohaError::InvalidArgument("stride must be at least 1".into()));
    }
    let mut q = init.q.clone();
    let mut arrivals = vec![0; m];
    let mut windows = vec![0; m];
    let mut successes = vec![0; m];
    let mut served_total = vec![0; m];
    let mut nonempty_slots = 0;
    let mut rows = Vec::with_capacity((horizon / stride) as usize);
    for slot in 1..=horizon {
        config.draw_slot(seed, slot, &mut arrivals, &mut windows);
        let win = step_in_place(&mut q, &arrivals, &windows);
        if let Some((i, s)) = win {
            successes[i] += 1;
            served_total[i] += s;
        }
        if q.iter().any(|&x| x > 0) {
            nonempty_slots += 1;
        }
        if slot % stride == 0 {
            rows.push(TrajectoryRow {
                slot,
                q: q.clone(),
                success_user: win.map(|w| w.0),
                served: win.map_or(0, |w| w.1),
            });
        }
    }
    Ok(TrajectoryRecord {
        seed,
        horizon,
        stride,
        initial: init.clone(),
        rows,
        final_state: QueueState { q },
        successes,
        served_total,
        nonempty_slots,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn draw(a: &[u64], w: &[u64]) -> SlotDraw {
        SlotDraw { arrivals: a.to_vec(), windows: w.to_vec() }
    }

    #[test]
    fn empty_user_does_not_block() {
        let out = step(&QueueState::new(vec![0, 3]), &draw(&[1, 0], &[1, 1])).unwrap();
        assert_eq!(out.next.q, vec![1, 2]);
        assert_eq!(out.success, vec![false, true]);
        assert_eq!(out.served, vec![0, 1]);
    }

    #[test]
    fn collision_serves_nobody() {
        let out = step(&QueueState::new(vec![2, 3]), &draw(&[0, 0], &[1, 1])).unwrap();
        assert_eq!(out.next.q, vec![2, 3]);
        assert_eq!(out.success, vec![false, false]);
    }

    #[test]
    fn multipacket_service_is_capped_by_window() {
        let out = step(&QueueState::new(vec![5, 0]), &draw(&[0, 0], &[3, 0])).unwrap();
        assert_eq!(out.next.q, vec![2, 0]);
        assert_eq!(out.success, vec![true, false]);
        assert_eq!(out.served, vec![3, 0]);
        let out = step(&QueueState::new(vec![2]), &draw(&[0], &[7])).unwrap();
        assert_eq!(out.next.q, vec![0]);
        assert_eq!(out.served, vec![2]);
    }

    #[test]
    fn origin_step_adds_arrivals_only() {
        let out = step(&QueueState::origin(3), &draw(&[2, 0, 1], &[1, 4, 1])).unwrap();
        assert_eq!(out.next.q, vec![2, 0, 1]);
        assert!(out.success.iter().all(|s| !s));
    }

    #[test]
    fn dimension_mismatch() {
        let e = step(&QueueState::origin(2), &draw(&[0], &[0, 0])).unwrap_err();
        assert!(matches!(e, AlohaError::DimensionMismatch { expected: 2, got: 1 }));
    }

    #[test]
    fn attempt_probabilities() {
        let p = |s| attempt_probability(&Distribution::new(s).unwrap());
        assert_eq!(p(DistributionSpec::bernoulli(0.5)), 0.5);
        assert!((p(DistributionSpec::finite_pmf(vec![0.2, 0.5, 0.3])) - 0.8).abs() < 1e-15);
        assert!((p(DistributionSpec::poisson(1.0)) - 0.632_121).abs() < 1e-6);
    }

    #[test]
    fn config_rejects_laws_without_mass_at_one() {
        let e = NetworkConfig::from_specs(&[(
            DistributionSpec::bernoulli(0.3),
            DistributionSpec::finite_pmf(vec![0.5, 0.0, 0.5]),
        )])
        .unwrap_err();
        assert!(matches!(e, AlohaError::ZeroProbOfOne { user: 0, role: LawRole::Window }));
        let e = NetworkConfig::bernoulli(&[0.1, 0.0], &[0.5, 0.5]).unwrap_err();
        assert!(matches!(e, AlohaError::ZeroProbOfOne { user: 1, role: LawRole::Arrival }));
        assert!(matches!(NetworkConfig::new(vec![]), Err(AlohaError::NoUsers)));
    }

    #[test]
    fn deterministic_single_user() {
        let c = NetworkConfig::bernoulli(&[1.0], &[1.0]).unwrap();
        let t = simulate_trajectory(&c, &QueueState::origin(1), 3, 0, None).unwrap();
        let states: Vec<_> = t.rows.iter().map(|r| r.q[0]).collect();
        assert_eq!(states, vec![1, 1, 1]);
        assert_eq!(t.rows[0].success_user, None);
        assert_eq!(t.rows[1].success_user, Some(0));
        assert_eq!(t.successes, vec![2]);
    }

    #[test]
    fn permanent_collision() {
        let c = NetworkConfig::bernoulli(&[0.4, 0.7], &[1.0, 1.0]).unwrap();
        let t = simulate_trajectory(&c, &QueueState::new(vec![1, 2]), 5000, 11, None).unwrap();
        assert_eq!(t.successes, vec![0, 0]);
    }

    #[test]
    fn thinning() {
        let c = NetworkConfig::bernoulli(&[0.3], &[0.7]).unwrap();
        let t = simulate_trajectory(&c, &QueueState::origin(1), 250_000, 5, None).unwrap();
        assert_eq!(t.stride, 3);
        assert_eq!(t.rows.len(), 83_333);
        assert!(t.rows.iter().all(|r| r.slot % 3 == 0));
        let e = simulate_trajectory(&c, &QueueState::origin(1), 0, 5, None).unwrap_err();
        assert!(matches!(e, AlohaError::InvalidArgument(_)));
    }

    #[test]
    fn csv_layout() {
        let c = NetworkConfig::bernoulli(&[1.0, 1.0], &[1.0, 0.5]).unwrap();
        let t = simulate_trajectory(&c, &QueueState::origin(2), 2, 3, None).unwrap();
        let csv = t.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("slot,q_1,q_2,success_user,served"));
        assert_eq!(lines.next(), Some("1,1,1,0,0"));
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.ends_with('\n') && !csv.contains('\r'));
    }
}
