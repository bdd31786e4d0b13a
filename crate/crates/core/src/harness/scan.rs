//! Rate-grid scans of the inner region.
//!
//! Grid syntax:
//!
//! * `0.1,0.2;0.3,0.4` lists values per axis (axes separated by `;`) and scans
//!   their product;
//! * `diag2:0.05,0.1` scans symmetric points `(x, x)` in two dimensions;
//! * any value list entry may be a range `a..b/n`, meaning `n` evenly spaced
//!   values from `a` to `b` inclusive.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::Serialize;

use crate::chain::NetworkConfig;
use crate::error::{AlohaError, Result};
use crate::recurrence::{return_time_stats, sample_return_times};
use crate::region::{c1_membership, classify, find_c1_witness, VerdictLabel, WitnessOptions};

/// Largest number of grid points a scan accepts.
pub const MAX_GRID_POINTS: usize = 100_000;

/// Automatically chosen Monte Carlo validation points per scan.
pub const MAX_AUTO_MC_POINTS: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub enum GridSpec {
    Product(Vec<Vec<f64>>),
    Diagonal { users: usize, values: Vec<f64> },
}

fn parse_values(text: &str) -> Result<Vec<f64>> {
    let bad = |t: &str| AlohaError::InvalidArgument(format!("cannot parse grid entry {t:?}"));
    let mut out = Vec::new();
    for tok in text.split(',').map(str::trim).filter(|t| !t.is_empty()) {
        if let Some((range, count)) = tok.split_once('/') {
            let (a, b) = range.split_once("..").ok_or_else(|| bad(tok))?;
            let a: f64 = a.trim().parse().map_err(|_| bad(tok))?;
            let b: f64 = b.trim().parse().map_err(|_| bad(tok))?;
            let n: usize = count.trim().parse().map_err(|_| bad(tok))?;
            match n {
                0 => {}
                1 => out.push(a),
                _ => out.extend((0..n).map(|k| a + (b - a) * k as f64 / (n - 1) as f64)),
            }
        } else {
            out.push(tok.parse().map_err(|_| bad(tok))?);
        }
    }
    Ok(out)
}

impl GridSpec {
    pub fn parse(text: &str) -> Result<Self> {
        let text = text.trim();
        if let Some(rest) = text.strip_prefix("diag") {
            let (dim, values) = rest
                .split_once(':')
                .ok_or_else(|| AlohaError::InvalidArgument("diagonal grid needs `diagM:values`".into()))?;
            let users = dim
                .parse()
                .map_err(|_| AlohaError::InvalidArgument(format!("bad dimension {dim:?}")))?;
            return Ok(GridSpec::Diagonal { users, values: parse_values(values)? });
        }
        let axes = text.split(';').map(parse_values).collect::<Result<Vec<_>>>()?;
        Ok(GridSpec::Product(axes))
    }

    pub fn dimension(&self) -> usize {
        match self {
            GridSpec::Product(axes) => axes.len(),
            GridSpec::Diagonal { users, .. } => *users,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            GridSpec::Product(axes) => axes.iter().map(Vec::len).product(),
            GridSpec::Diagonal { values, .. } => values.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Points in grid order; the last axis varies fastest.
    pub fn points(&self) -> Vec<Vec<f64>> {
        match self {
            GridSpec::Diagonal { users, values } => values.iter().map(|&x| vec![x; *users]).collect(),
            GridSpec::Product(axes) => {
                let mut pts: Vec<Vec<f64>> = vec![Vec::new()];
                for axis in axes {
                    pts = pts
                        .into_iter()
                        .flat_map(|p| {
                            axis.iter().map(move |&x| {
                                let mut p = p.clone();
                                p.push(x);
                                p
                            })
                        })
                        .collect();
                }
                pts
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McValidation {
    pub replications: u64,
    pub horizon: u64,
    pub seed: u64,
    /// Grid indices to validate.
    pub points: Vec<usize>,
    /// Add up to [`MAX_AUTO_MC_POINTS`] witness points with load closest to one.
    pub auto: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScanOptions {
    pub witness: WitnessOptions,
    pub mc: Option<McValidation>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub lambda: Vec<f64>,
    pub witness_found: bool,
    pub best_f: f64,
    /// The witness when found, otherwise the best attempt vector seen.
    pub p: Vec<f64>,
    pub verdict: VerdictLabel,
    pub load_sum: f64,
    pub mc_mean: Option<f64>,
    pub mc_censored: Option<u64>,
}

impl SweepRow {
    /// Recomputes the witness-dependent fields from the row's own inputs.
    pub fn reverify(&self) -> Result<bool> {
        let member = c1_membership(&self.lambda, &self.p)?;
        if member != self.witness_found {
            return Ok(false);
        }
        if !self.witness_found {
            return Ok(self.verdict == VerdictLabel::Indeterminate);
        }
        let v = classify(&NetworkConfig::bernoulli(&self.lambda, &self.p)?);
        Ok(v.label == self.verdict && v.load_sum == self.load_sum)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepTable {
    pub users: usize,
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    /// CSV: `lambda_1..lambda_M,witness_found,best_f,verdict,load_sum,mc_mean,mc_censored`.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for i in 1..=self.users {
            let _ = write!(out, "lambda_{i},");
        }
        out.push_str("witness_found,best_f,verdict,load_sum,mc_mean,mc_censored\n");
        for r in &self.rows {
            for l in &r.lambda {
                let _ = write!(out, "{l},");
            }
            let mc_mean = r.mc_mean.map(|m| m.to_string()).unwrap_or_default();
            let mc_censored = r.mc_censored.map(|m| m.to_string()).unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                r.witness_found, r.best_f, r.verdict, r.load_sum, mc_mean, mc_censored
            );
        }
        out
    }
}

/// Runs the witness search at every grid point, in parallel, keeping grid order.
pub fn region_scan(grid: &GridSpec, opts: &ScanOptions) -> Result<SweepTable> {
    let users = grid.dimension();
    if !(1..=3).contains(&users) {
        return Err(AlohaError::InvalidArgument(format!("tabular scans need 1 to 3 users, got {users}")));
    }
    let n = grid.len();
    if n == 0 {
        return Err(AlohaError::EmptyGrid);
    }
    if n > MAX_GRID_POINTS {
        return Err(AlohaError::GridTooLarge { points: n, limit: MAX_GRID_POINTS });
    }
    let points = grid.points();
    let mut rows: Vec<SweepRow> = points
        .into_par_iter()
        .map(|lambda| {
            let w = find_c1_witness(&lambda, &opts.witness)?;
            let (verdict, load_sum, p) = match &w.witness {
                Some(p) => {
                    let v = classify(&NetworkConfig::bernoulli(&lambda, p)?);
                    (v.label, v.load_sum, p.clone())
                }
                None => (VerdictLabel::Indeterminate, w.best_f, w.best_p.clone()),
            };
            Ok(SweepRow {
                lambda,
                witness_found: w.witness.is_some(),
                best_f: w.best_f,
                p,
                verdict,
                load_sum,
                mc_mean: None,
                mc_censored: None,
            })
        })
        .collect::<Result<_>>()?;

    if let Some(mc) = &opts.mc {
        let mut chosen: Vec<usize> = mc.points.iter().copied().filter(|&i| i < rows.len()).collect();
        if mc.auto {
            let mut near: Vec<usize> = (0..rows.len()).filter(|&i| rows[i].witness_found).collect();
            near.sort_by(|&a, &b| rows[b].best_f.total_cmp(&rows[a].best_f).then(a.cmp(&b)));
            chosen.extend(near.into_iter().take(MAX_AUTO_MC_POINTS));
        }
        chosen.sort_unstable();
        chosen.dedup();
        for i in chosen {
            let row = &rows[i];
            let cfg = NetworkConfig::bernoulli(&row.lambda, &row.p)?;
            let outcomes = sample_return_times(&cfg, mc.horizon, mc.replications, crate::rng::mix(&[mc.seed, i as u64]))?;
            let stats = return_time_stats(&outcomes, &[])?;
            rows[i].mc_mean = stats.mean;
            rows[i].mc_censored = Some(stats.n_censored);
        }
    }
    Ok(SweepTable { users, rows })
}
