//! Discrete laws for per-slot arrivals and transmission windows.
//!
//! Four families are supported, all with finite fourth moments:
//!
//! | kind         | parameters                    | support        |
//! |--------------|-------------------------------|----------------|
//! | `bernoulli`  | `p` in [0, 1]                 | {0, 1}         |
//! | `finite_pmf` | `probs[k] = P(X = k)`         | {0, ..., K}    |
//! | `poisson`    | `mu` in (0, 1e4]              | {0, 1, ...}    |
//! | `geometric`  | `success_prob` in (0, 1]      | {0, 1, ...}    |
//!
//! The geometric law counts failures before the first success, so
//! `P(X = k) = (1 - s)^k s`.
//!
//! Sampling is by inversion of a single uniform variate. Poisson and
//! finite-pmf laws invert a precomputed CDF table; the Poisson table is
//! enumerated until the cumulative mass reaches `1 - 1e-12` and any uniform
//! beyond the last entry is clamped to the last enumerated value. The
//! geometric law is inverted in closed form.

use serde::{Deserialize, Serialize};

use crate::error::{AlohaError, Result};
use crate::rng::RngState;

/// Absolute tolerance on the total mass of a finite pmf.
pub const PMF_SUM_TOLERANCE: f64 = 1e-12;

/// Cumulative mass at which unbounded laws are cut off when tabulated.
pub const TAIL_CUTOFF: f64 = 1e-12;

/// Largest accepted Poisson mean.
pub const MAX_POISSON_MEAN: f64 = 1e4;

/// Serialized description of a law, as it appears in config files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DistributionSpec {
    Bernoulli { p: f64 },
    FinitePmf { probs: Vec<f64> },
    Poisson { mu: f64 },
    Geometric { success_prob: f64 },
}

impl DistributionSpec {
    pub fn bernoulli(p: f64) -> Self {
        DistributionSpec::Bernoulli { p }
    }

    pub fn finite_pmf(probs: impl Into<Vec<f64>>) -> Self {
        DistributionSpec::FinitePmf { probs: probs.into() }
    }

    pub fn poisson(mu: f64) -> Self {
        DistributionSpec::Poisson { mu }
    }

    pub fn geometric(success_prob: f64) -> Self {
        DistributionSpec::Geometric { success_prob }
    }
}

/// Closed-form summary of a law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DistributionMoments {
    pub mean: f64,
    pub variance: f64,
    pub fourth_central: f64,
    pub prob_eq_one: f64,
    pub prob_geq_one: f64,
}

#[derive(Debug, Clone)]
enum Sampler {
    /// CDF table over {0, ..., len - 1}.
    Table { cdf: Vec<f64>, last: u64 },
    /// Failures before success with `ln(1 - s)` cached; `None` when s = 1.
    Geometric { log_fail: Option<f64> },
}

/// A validated, immutable law. Cheap to share across threads.
#[derive(Debug, Clone)]
pub struct Distribution {
    spec: DistributionSpec,
    sampler: Sampler,
    moments: DistributionMoments,
    support_max: Option<u64>,
}

impl PartialEq for Distribution {
    fn eq(&self, other: &Self) -> bool {
        self.spec == other.spec
    }
}

fn check_prob(name: &str, x: f64) -> Result<()> {
    if x.is_finite() && (0.0..=1.0).contains(&x) {
        Ok(())
    } else {
        Err(AlohaError::InvalidParameter(format!("{name} = {x} is not in [0, 1]")))
    }
}

fn cumulative(pmf: &[f64]) -> Vec<f64> {
    pmf.iter()
        .scan(0.0, |acc, &p| {
            *acc += p;
            Some(*acc)
        })
        .collect()
}

/// Poisson pmf enumerated in log space until the cumulative mass reaches `1 - TAIL_CUTOFF`.
fn poisson_pmf(mu: f64) -> Vec<f64> {
    let log_mu = mu.ln();
    let mut log_p = -mu;
    let mut total = 0.0;
    let mut pmf = Vec::new();
    let mut k = 0u64;
    loop {
        let p = log_p.exp();
        pmf.push(p);
        total += p;
        if total >= 1.0 - TAIL_CUTOFF {
            break;
        }
        // Past the mode and numerically negligible: stop even if rounding kept the sum short.
        if k as f64 > mu + 50.0 * mu.sqrt() + 50.0 {
            break;
        }
        k += 1;
        log_p += log_mu - (k as f64).ln();
    }
    pmf
}

fn table_moments(pmf: &[f64]) -> DistributionMoments {
    let mean: f64 = pmf.iter().enumerate().map(|(k, p)| k as f64 * p).sum();
    let central = |r: i32| -> f64 {
        pmf.iter()
            .enumerate()
            .map(|(k, p)| (k as f64 - mean).powi(r) * p)
            .sum()
    };
    let p0 = pmf.first().copied().unwrap_or(0.0);
    DistributionMoments {
        mean,
        variance: central(2),
        fourth_central: central(4),
        prob_eq_one: pmf.get(1).copied().unwrap_or(0.0),
        prob_geq_one: 1.0 - p0,
    }
}

impl Distribution {
    /// Validates a spec and precomputes its sampler and moments.
    ///
    /// A law with `P(X = 1) = 0` is accepted here; [`Distribution::has_mass_at_one`]
    /// reports it and network assembly rejects it.
    pub fn new(spec: DistributionSpec) -> Result<Self> {
        match &spec {
            DistributionSpec::Bernoulli { p } => {
                check_prob("p", *p)?;
                let q = *p;
                let moments = DistributionMoments {
                    mean: q,
                    variance: q * (1.0 - q),
                    fourth_central: q * (1.0 - q) * ((1.0 - q).powi(3) + q.powi(3)),
                    prob_eq_one: q,
                    prob_geq_one: q,
                };
                let sampler = Sampler::Table { cdf: vec![1.0 - q, 1.0], last: if q > 0.0 { 1 } else { 0 } };
                Ok(Distribution { spec, sampler, moments, support_max: Some(if q > 0.0 { 1 } else { 0 }) })
            }
            DistributionSpec::FinitePmf { probs } => {
                if probs.is_empty() {
                    return Err(AlohaError::InvalidPmf("empty probability vector".into()));
                }
                if let Some((k, p)) = probs.iter().enumerate().find(|(_, p)| !p.is_finite() || **p < 0.0) {
                    return Err(AlohaError::InvalidPmf(format!("entry {k} is {p}")));
                }
                let sum: f64 = probs.iter().sum();
                if (sum - 1.0).abs() > PMF_SUM_TOLERANCE {
                    return Err(AlohaError::InvalidPmf(format!("probabilities sum to {sum}")));
                }
                let last = probs.iter().rposition(|&p| p > 0.0).unwrap_or(0) as u64;
                let moments = table_moments(probs);
                let sampler = Sampler::Table { cdf: cumulative(probs), last };
                Ok(Distribution { spec, sampler, moments, support_max: Some(last) })
            }
            DistributionSpec::Poisson { mu } => {
                if !(mu.is_finite() && *mu > 0.0 && *mu <= MAX_POISSON_MEAN) {
                    return Err(AlohaError::InvalidParameter(format!(
                        "poisson mu = {mu} is not in (0, {MAX_POISSON_MEAN}]"
                    )));
                }
                let mu = *mu;
                let pmf = poisson_pmf(mu);
                let moments = DistributionMoments {
                    mean: mu,
                    variance: mu,
                    fourth_central: mu * (1.0 + 3.0 * mu),
                    prob_eq_one: mu * (-mu).exp(),
                    prob_geq_one: -(-mu).exp_m1(),
                };
                let last = pmf.len() as u64 - 1;
                let sampler = Sampler::Table { cdf: cumulative(&pmf), last };
                Ok(Distribution { spec, sampler, moments, support_max: None })
            }
            DistributionSpec::Geometric { success_prob } => {
                let s = *success_prob;
                if !(s.is_finite() && s > 0.0 && s <= 1.0) {
                    return Err(AlohaError::InvalidParameter(format!(
                        "geometric success_prob = {s} is not in (0, 1]"
                    )));
                }
                let fail = 1.0 - s;
                let var = fail / (s * s);
                // Excess kurtosis of the failure count is 6 + s^2 / (1 - s).
                let fourth_central = 9.0 * var * var + fail / (s * s);
                let moments = DistributionMoments {
                    mean: fail / s,
                    variance: var,
                    fourth_central,
                    prob_eq_one: fail * s,
                    prob_geq_one: fail,
                };
                let log_fail = if s < 1.0 { Some(fail.ln()) } else { None };
                Ok(Distribution {
                    spec,
                    sampler: Sampler::Geometric { log_fail },
                    moments,
                    support_max: if s < 1.0 { None } else { Some(0) },
                })
            }
        }
    }

    pub fn spec(&self) -> &DistributionSpec {
        &self.spec
    }

    pub fn moments(&self) -> DistributionMoments {
        self.moments
    }

    pub fn mean(&self) -> f64 {
        self.moments.mean
    }

    /// `P(X >= 1)`.
    pub fn prob_geq_one(&self) -> f64 {
        self.moments.prob_geq_one
    }

    pub fn has_mass_at_one(&self) -> bool {
        self.moments.prob_eq_one > 0.0
    }

    /// Largest value with positive mass, `None` for unbounded laws.
    pub fn support_max(&self) -> Option<u64> {
        self.support_max
    }

    /// True when the law puts all its mass on {0, 1}.
    pub fn is_binary(&self) -> bool {
        matches!(self.support_max, Some(m) if m <= 1)
    }

    /// Always true for the supported families.
    pub fn has_finite_fourth_moment(&self) -> bool {
        self.moments.fourth_central.is_finite()
    }

    /// Inverts a uniform variate in [0, 1).
    #[inline]
    pub fn sample_unit(&self, u: f64) -> u64 {
        match &self.sampler {
            Sampler::Table { cdf, last } => {
                let k = cdf.partition_point(|&c| c <= u) as u64;
                k.min(*last)
            }
            Sampler::Geometric { log_fail: None } => 0,
            Sampler::Geometric { log_fail: Some(lf) } => {
                let x = ((-u).ln_1p() / lf).floor();
                if x >= u64::MAX as f64 {
                    u64::MAX
                } else {
                    x as u64
                }
            }
        }
    }

    /// Draws one value and returns the advanced RNG state.
    pub fn sample(&self, rng: RngState) -> (u64, RngState) {
        let (u, next) = rng.next_unit();
        (self.sample_unit(u), next)
    }

    /// Support points with positive mass and their probabilities.
    ///
    /// Unbounded laws are cut where the cumulative mass reaches `1 - TAIL_CUTOFF`;
    /// the leftover mass is added to the last point so the result sums to one.
    /// The boolean reports whether such a cut happened.
    pub fn law_points(&self) -> (Vec<(u64, f64)>, bool) {
        match (&self.spec, &self.sampler) {
            (DistributionSpec::Geometric { success_prob }, Sampler::Geometric { .. }) => {
                let s = *success_prob;
                if s >= 1.0 {
                    return (vec![(0, 1.0)], false);
                }
                let mut pts = Vec::new();
                let mut p = s;
                let mut total = 0.0;
                let mut k = 0u64;
                while total < 1.0 - TAIL_CUTOFF && p > 0.0 {
                    pts.push((k, p));
                    total += p;
                    p *= 1.0 - s;
                    k += 1;
                }
                if let Some(last) = pts.last_mut() {
                    last.1 += 1.0 - total;
                }
                (pts, true)
            }
            (DistributionSpec::Bernoulli { p }, _) => {
                let pts = [(0, 1.0 - p), (1, *p)].into_iter().filter(|(_, x)| *x > 0.0).collect();
                (pts, false)
            }
            (_, Sampler::Table { cdf, last }) => {
                let mut prev = 0.0;
                let mut pts = Vec::with_capacity(cdf.len());
                for (k, &c) in cdf.iter().enumerate().take(*last as usize + 1) {
                    let p = c - prev;
                    prev = c;
                    if p > 0.0 {
                        pts.push((k as u64, p));
                    }
                }
                let truncated = matches!(self.spec, DistributionSpec::Poisson { .. });
                let total: f64 = pts.iter().map(|(_, p)| p).sum();
                if let Some(last) = pts.last_mut() {
                    last.1 += 1.0 - total;
                }
                (pts, truncated)
            }
            _ => unreachable!("sampler always matches its spec"),
        }
    }
}
