//! Statistical checks of the simulators against closed forms and the exact solver.

use aloha_core::chain::{simulate_trajectory, QueueState};
use aloha_core::oracle::{build_truncated_chain, exact_return_time, saturated_drift, ROW_SUM_TOLERANCE};
use aloha_core::recurrence::{
    lyapunov_trace, return_time_stats, sample_return_times, saturated_increments, DEFAULT_RETURN_HORIZON,
};
use aloha_core::rng::RngState;
use aloha_core::{AlohaError, Distribution, DistributionSpec, NetworkConfig};

fn law_mean_and_variance_match(spec: DistributionSpec) {
    let d = Distribution::new(spec.clone()).unwrap();
    let m = d.moments();
    let n = 200_000;
    let mut rng = RngState::new(17);
    let mut xs = Vec::with_capacity(n);
    for _ in 0..n {
        let (x, next) = d.sample(rng);
        xs.push(x as f64);
        rng = next;
    }
    let nf = n as f64;
    let mean = xs.iter().sum::<f64>() / nf;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (nf - 1.0);
    let mean_se = (m.variance / nf).sqrt();
    let var_se = ((m.fourth_central - m.variance * m.variance) / nf).sqrt();
    assert!((mean - m.mean).abs() <= 4.0 * mean_se, "{spec:?}: mean {mean} vs {}", m.mean);
    assert!((var - m.variance).abs() <= 4.0 * var_se, "{spec:?}: variance {var} vs {}", m.variance);
}

#[test]
fn sampled_moments_match_closed_forms() {
    for spec in [
        DistributionSpec::bernoulli(0.3),
        DistributionSpec::finite_pmf([0.2, 0.5, 0.0, 0.3]),
        DistributionSpec::poisson(2.0),
        DistributionSpec::poisson(0.05),
        DistributionSpec::geometric(0.4),
    ] {
        law_mean_and_variance_match(spec);
    }
}

#[test]
fn single_user_busy_fraction() {
    // birth-death chain with P(empty) = 4/7
    let cfg = NetworkConfig::bernoulli(&[0.3], &[0.7]).unwrap();
    let rec = simulate_trajectory(&cfg, &QueueState::origin(1), 1_000_000, 11, None).unwrap();
    assert!((rec.nonempty_fraction() - 3.0 / 7.0).abs() < 0.01, "{}", rec.nonempty_fraction());
    assert!(rec.rows.len() <= 100_001);
}

#[test]
fn telescoped_bound_holds_for_exact_return_times() {
    // Summing the drift inequality gives E[T] <= 1 + L / (1 - L) with L the load sum.
    for (lambda, p) in [
        (vec![0.1, 0.1], vec![0.5, 0.5]),
        (vec![0.05, 0.15], vec![0.3, 0.6]),
        (vec![0.3], vec![0.7]),
        (vec![0.03, 0.03, 0.03], vec![0.3, 0.3, 0.3]),
    ] {
        let cfg = NetworkConfig::bernoulli(&lambda, &p).unwrap();
        let load = aloha_core::classify(&cfg).load_sum;
        assert!(load < 1.0);
        let cap = if lambda.len() == 3 { 20 } else { 60 };
        let exact = exact_return_time(&build_truncated_chain(&cfg, cap).unwrap()).unwrap();
        assert!(exact.expected_return_time <= 1.0 + load / (1.0 - load), "{lambda:?}: {exact:?}");
    }
}

#[test]
fn lyapunov_trace_sums_to_the_bound() {
    let cfg = NetworkConfig::bernoulli(&[0.05, 0.15], &[0.3, 0.6]).unwrap();
    let t = lyapunov_trace(&cfg, 5_000, 40, 3).unwrap();
    let tail: f64 = t.survival[1..].iter().sum();
    assert!(t.epsilon * tail <= t.y[0] + 4.0 * t.y_se[0]);
    for (d, se) in t.drift.iter().zip(&t.drift_se) {
        assert!(*d <= 4.0 * se + 1e-12);
    }
}

#[test]
fn saturated_increments_match_drift_formula() {
    let cfg = NetworkConfig::bernoulli(&[0.6, 0.4], &[0.5, 0.4]).unwrap();
    let exact = saturated_drift(&cfg);
    let est = saturated_increments(&cfg, &QueueState::new(vec![40, 40]), 2_000, 50, 1, 21).unwrap();
    assert!(est.saturated_slots > 50_000);
    for i in 0..2 {
        assert!((est.mean[i] - exact[i]).abs() <= 4.0 * est.std_error[i], "{i}: {est:?} vs {exact:?}");
    }
}

#[test]
fn truncated_chains_are_stochastic() {
    let cfgs = [
        NetworkConfig::bernoulli(&[0.2, 0.1], &[0.6, 0.3]).unwrap(),
        NetworkConfig::from_specs(&[
            (DistributionSpec::poisson(0.3), DistributionSpec::finite_pmf([0.2, 0.5, 0.3])),
            (DistributionSpec::geometric(0.8), DistributionSpec::bernoulli(0.5)),
        ])
        .unwrap(),
    ];
    for cfg in &cfgs {
        let chain = build_truncated_chain(cfg, 8).unwrap();
        assert!(chain.max_row_defect() <= ROW_SUM_TOLERANCE);
        for r in 0..chain.num_states() {
            assert!(chain.transitions.row(r).all(|(_, v)| v >= 0.0));
        }
    }
}

fn clamped_per_cycle(cfg: &NetworkConfig, cap: u64) -> f64 {
    match exact_return_time(&build_truncated_chain(cfg, cap).unwrap()) {
        Ok(r) => r.clamped_per_cycle,
        Err(AlohaError::TruncationDominated { clamped_per_cycle, .. }) => clamped_per_cycle,
        Err(e) => panic!("{e}"),
    }
}

#[test]
fn clamping_shrinks_as_the_cap_grows() {
    let cfg = NetworkConfig::bernoulli(&[0.1, 0.1], &[0.5, 0.5]).unwrap();
    let seq: Vec<f64> = (2..=16).map(|n| clamped_per_cycle(&cfg, n)).collect();
    for w in seq.windows(2) {
        assert!(w[1] <= w[0], "{seq:?}");
    }
    assert!(seq[seq.len() - 1] < 1e-6);
}

#[test]
fn exact_solver_agrees_with_simulation_for_batch_laws() {
    let cfg = NetworkConfig::from_specs(&[
        (DistributionSpec::poisson(0.1), DistributionSpec::finite_pmf([0.3, 0.4, 0.3])),
        (DistributionSpec::geometric(0.9), DistributionSpec::bernoulli(0.6)),
    ])
    .unwrap();
    let exact = exact_return_time(&build_truncated_chain(&cfg, 40).unwrap()).unwrap();
    let outcomes = sample_return_times(&cfg, DEFAULT_RETURN_HORIZON, 20_000, 8).unwrap();
    let s = return_time_stats(&outcomes, &[]).unwrap();
    let (mean, se) = (s.mean.unwrap(), s.std_error.unwrap());
    assert!((mean - exact.expected_return_time).abs() <= 4.0 * se, "{mean} +/- {se} vs {exact:?}");
}
