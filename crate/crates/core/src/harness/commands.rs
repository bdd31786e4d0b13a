//! Subcommand implementations. Each returns the JSON document for stdout and,
//! where the command has one, a secondary artifact (CSV table or sparse
//! triplets) for the `--out` path. Outputs are pure functions of the effective
//! config, so identical inputs give byte-identical results.

use serde_json::{json, Value};

use super::config::{digest_str, ConfigFile, ExperimentConfig};
use super::scan::{region_scan, GridSpec, McValidation, ScanOptions};
use crate::chain::{simulate_trajectory, QueueState};
use crate::error::{AlohaError, Result};
use crate::oracle::{build_truncated_chain, exact_return_time, saturated_drift};
use crate::recurrence::{
    default_escape_init, escape_probability, lyapunov_trace, return_time_stats, sample_return_times,
    DEFAULT_ESCAPE_HORIZON, DEFAULT_ESCAPE_SCALE, DEFAULT_RETURN_HORIZON,
};
use crate::region::{classify, WitnessOptions};

pub const DEFAULT_SIMULATE_HORIZON: u64 = 10_000;
pub const DEFAULT_REPLICATIONS: u64 = 1_000;
pub const DEFAULT_TRACE_LENGTH: u64 = 50;
pub const DEFAULT_TRUNCATION: u64 = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Classify,
    Witness,
    Simulate,
    ReturnTimes,
    Lyapunov,
    Escape,
    Oracle,
    RegionScan,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Classify => "classify",
            Command::Witness => "witness",
            Command::Simulate => "simulate",
            Command::ReturnTimes => "return-times",
            Command::Lyapunov => "lyapunov",
            Command::Escape => "escape",
            Command::Oracle => "oracle",
            Command::RegionScan => "region-scan",
        }
    }
}

/// Command-line values that take precedence over the config file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub horizon: Option<u64>,
    pub replications: Option<u64>,
    pub grid: Option<String>,
    pub truncation: Option<u64>,
    pub tolerance: Option<f64>,
    pub grid_points: Option<usize>,
    pub random_starts: Option<usize>,
    pub max_iterations: Option<usize>,
    pub n_max: Option<u64>,
    pub init: Option<Vec<u64>>,
}

impl Overrides {
    fn touches_witness(&self) -> bool {
        self.tolerance.is_some() || self.grid_points.is_some() || self.random_starts.is_some() || self.max_iterations.is_some()
    }

    /// Folds the overrides into a config file.
    pub fn apply(&self, file: &mut ConfigFile) {
        if let Some(s) = self.seed {
            file.seed = s;
        }
        if self.horizon.is_some() {
            file.horizon = self.horizon;
        }
        if self.replications.is_some() {
            file.replications = self.replications;
        }
        if self.init.is_some() {
            file.init = self.init.clone();
        }
        if let Some(t) = self.truncation {
            file.oracle = Some(super::config::OracleBlock { truncation: t });
        }
        if let Some(n) = self.n_max {
            file.lyapunov = Some(super::config::LyapunovBlock { n_max: n });
        }
        if let Some(g) = &self.grid {
            match &mut file.sweep {
                Some(s) => s.grid = g.clone(),
                None => {
                    file.sweep = Some(super::config::SweepBlock { grid: g.clone(), mc_points: vec![], mc_auto: false })
                }
            }
        }
        if self.touches_witness() {
            let w = file.witness.get_or_insert_with(WitnessOptions::default);
            if let Some(t) = self.tolerance {
                w.tolerance = t;
            }
            if let Some(g) = self.grid_points {
                w.grid_points = g;
            }
            if let Some(r) = self.random_starts {
                w.random_starts = r;
            }
            if let Some(m) = self.max_iterations {
                w.max_iterations = m;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommandOutput {
    pub json: String,
    /// CSV table or triplet listing, written to `--out` when given.
    pub artifact: Option<String>,
}

fn header(command: Command, digest: &str, seed: u64) -> serde_json::Map<String, Value> {
    let mut m = serde_json::Map::new();
    m.insert("command".into(), json!(command.name()));
    m.insert("config_digest".into(), json!(digest));
    m.insert("seed".into(), json!(seed));
    m
}

fn finish(map: serde_json::Map<String, Value>, artifact: Option<String>) -> CommandOutput {
    let mut json = serde_json::to_string_pretty(&Value::Object(map)).expect("json value serializes");
    json.push('\n');
    CommandOutput { json, artifact }
}

fn merge(map: &mut serde_json::Map<String, Value>, v: Value) {
    if let Value::Object(o) = v {
        map.extend(o);
    }
}

fn default_tail(horizon: u64) -> Vec<u64> {
    std::iter::successors(Some(1u64), |k| k.checked_mul(10)).take_while(|&k| k <= horizon).collect()
}

/// Runs `command` on an already-validated config (overrides applied).
pub fn run(command: Command, cfg: &ExperimentConfig, lambda: Option<&[f64]>) -> Result<CommandOutput> {
    let file = &cfg.file;
    let digest = cfg.digest();
    let seed = file.seed;
    let mut out = header(command, &digest, seed);
    match command {
        Command::Classify => {
            let net = cfg.network()?;
            let v = classify(net);
            merge(&mut out, serde_json::to_value(&v)?);
            out.insert("lambda".into(), json!(net.lambda()));
            out.insert("capacity".into(), json!(net.capacity()));
            out.insert("attempt".into(), json!(net.attempt()));
            Ok(finish(out, None))
        }
        Command::Witness => {
            let lambda: Vec<f64> = match lambda {
                Some(l) => l.to_vec(),
                None => cfg.network()?.lambda().to_vec(),
            };
            let opts = file.witness.clone().unwrap_or_default();
            let digest = digest_str(&format!("{}|{}", cfg.to_json(), serde_json::to_string(&lambda)?));
            out.insert("config_digest".into(), json!(digest));
            let r = crate::region::find_c1_witness(&lambda, &opts)?;
            out.insert("lambda".into(), json!(lambda));
            out.insert("found".into(), json!(r.found()));
            out.insert("best_f".into(), json!(r.best_f));
            out.insert("initial_f".into(), json!(r.initial_f));
            out.insert("p".into(), json!(r.witness.as_ref().unwrap_or(&r.best_p)));
            out.insert("sweeps".into(), json!(r.sweeps));
            out.insert("options".into(), serde_json::to_value(&opts)?);
            Ok(finish(out, None))
        }
        Command::Simulate => {
            let net = cfg.network()?;
            let horizon = file.horizon.unwrap_or(DEFAULT_SIMULATE_HORIZON);
            let init = file.init.clone().map(QueueState::new).unwrap_or_else(|| QueueState::origin(net.num_users()));
            let t = simulate_trajectory(net, &init, horizon, seed, None)?;
            out.insert("horizon".into(), json!(horizon));
            out.insert("stride".into(), json!(t.stride));
            out.insert("init".into(), json!(t.initial.q));
            out.insert("final_state".into(), json!(t.final_state.q));
            out.insert("successes".into(), json!(t.successes));
            out.insert("served_total".into(), json!(t.served_total));
            out.insert("nonempty_fraction".into(), json!(t.nonempty_fraction()));
            out.insert("rows".into(), json!(t.rows.len()));
            let csv = t.to_csv();
            Ok(finish(out, Some(csv)))
        }
        Command::ReturnTimes => {
            let net = cfg.network()?;
            let horizon = file.horizon.unwrap_or(DEFAULT_RETURN_HORIZON);
            let reps = file.replications.unwrap_or(DEFAULT_REPLICATIONS);
            let outcomes = sample_return_times(net, horizon, reps, seed)?;
            let tail_at = file.tail.clone().unwrap_or_else(|| default_tail(horizon));
            let s = return_time_stats(&outcomes, &tail_at)?;
            out.insert("horizon".into(), json!(horizon));
            out.insert("replications".into(), json!(reps));
            out.insert("verdict".into(), json!(classify(net).label));
            if let Some(m) = s.mean {
                out.insert("mean".into(), json!(m));
            }
            if let Some(se) = s.std_error {
                out.insert("std_error".into(), json!(se));
            }
            out.insert("mean_lower_bound".into(), json!(s.mean_lower_bound));
            out.insert("n_censored".into(), json!(s.n_censored));
            out.insert("tail".into(), json!(s.tail.iter().map(|(k, p)| json!([k, p])).collect::<Vec<_>>()));
            Ok(finish(out, None))
        }
        Command::Lyapunov => {
            let net = cfg.network()?;
            let reps = file.replications.unwrap_or(DEFAULT_REPLICATIONS);
            let n_max = file.lyapunov.as_ref().map_or(DEFAULT_TRACE_LENGTH, |l| l.n_max);
            let t = lyapunov_trace(net, reps, n_max, seed)?;
            let mut csv = String::from("n,y,y_se,survival,survival_se,drift,drift_se\n");
            for k in 0..t.y.len() {
                let (d, dse) = match (t.drift.get(k), t.drift_se.get(k)) {
                    (Some(d), Some(s)) => (d.to_string(), s.to_string()),
                    _ => (String::new(), String::new()),
                };
                csv.push_str(&format!(
                    "{},{},{},{},{},{},{}\n",
                    k + 1,
                    t.y[k],
                    t.y_se[k],
                    t.survival[k],
                    t.survival_se[k],
                    d,
                    dse
                ));
            }
            merge(&mut out, serde_json::to_value(&t)?);
            Ok(finish(out, Some(csv)))
        }
        Command::Escape => {
            let net = cfg.network()?;
            let horizon = file.horizon.unwrap_or(DEFAULT_ESCAPE_HORIZON);
            let reps = file.replications.unwrap_or(DEFAULT_REPLICATIONS);
            let scale = file.escape.as_ref().map_or(DEFAULT_ESCAPE_SCALE, |e| e.scale);
            let init = file.init.clone().map(QueueState::new).unwrap_or_else(|| default_escape_init(net, scale));
            let e = escape_probability(net, &init, horizon, reps, seed)?;
            merge(&mut out, serde_json::to_value(&e)?);
            out.insert("verdict".into(), json!(classify(net).label));
            out.insert("saturated_drift".into(), json!(saturated_drift(net)));
            Ok(finish(out, None))
        }
        Command::Oracle => {
            let net = cfg.network()?;
            let cap = file.oracle.as_ref().map_or(DEFAULT_TRUNCATION, |o| o.truncation);
            let chain = build_truncated_chain(net, cap)?;
            out.insert("truncation".into(), json!(cap));
            out.insert("states".into(), json!(chain.num_states()));
            out.insert("nonzeros".into(), json!(chain.transitions.nnz()));
            out.insert("boundary_mass".into(), json!(chain.boundary_mass));
            out.insert("laws_truncated".into(), json!(chain.laws_truncated));
            out.insert("max_row_defect".into(), json!(chain.max_row_defect()));
            match exact_return_time(&chain) {
                Ok(r) => {
                    out.insert("status".into(), json!("ok"));
                    merge(&mut out, serde_json::to_value(&r)?);
                }
                Err(AlohaError::TruncationDominated { boundary_occupancy, clamped_per_cycle, threshold }) => {
                    out.insert("status".into(), json!("truncation_dominated"));
                    out.insert("boundary_occupancy".into(), json!(boundary_occupancy));
                    out.insert("clamped_per_cycle".into(), json!(clamped_per_cycle));
                    out.insert("threshold".into(), json!(threshold));
                }
                Err(e) => return Err(e),
            }
            Ok(finish(out, Some(chain.to_triplets())))
        }
        Command::RegionScan => {
            let sweep = file.sweep.as_ref().ok_or_else(|| {
                AlohaError::InvalidArgument("region-scan needs a grid (--grid or sweep.grid)".into())
            })?;
            let grid = GridSpec::parse(&sweep.grid)?;
            let mc = (!sweep.mc_points.is_empty() || sweep.mc_auto).then(|| McValidation {
                replications: file.replications.unwrap_or(DEFAULT_REPLICATIONS),
                horizon: file.horizon.unwrap_or(DEFAULT_RETURN_HORIZON),
                seed,
                points: sweep.mc_points.clone(),
                auto: sweep.mc_auto,
            });
            let opts = ScanOptions { witness: file.witness.clone().unwrap_or_default(), mc };
            let table = region_scan(&grid, &opts)?;
            out.insert("grid".into(), json!(sweep.grid));
            out.insert("points".into(), json!(table.rows.len()));
            out.insert("witnesses".into(), json!(table.rows.iter().filter(|r| r.witness_found).count()));
            out.insert("rows".into(), serde_json::to_value(&table.rows)?);
            Ok(finish(out, Some(table.to_csv())))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::parse_config;

    const TWO_USERS: &str = r#"{"users":[
        {"arrival":{"kind":"bernoulli","p":0.1},"window":{"kind":"bernoulli","p":0.5}},
        {"arrival":{"kind":"bernoulli","p":0.1},"window":{"kind":"bernoulli","p":0.5}}],
        "seed":7,"horizon":2000,"replications":200}"#;

    fn cfg() -> ExperimentConfig {
        parse_config(TWO_USERS.as_bytes()).unwrap()
    }

    #[test]
    fn classify_output() {
        let o = run(Command::Classify, &cfg(), None).unwrap();
        let v: Value = serde_json::from_str(&o.json).unwrap();
        assert_eq!(v["label"], "Recurrent");
        assert!((v["load_sum"].as_f64().unwrap() - 0.8).abs() < 1e-12);
        assert_eq!(v["seed"], 7);
        assert_eq!(v["config_digest"].as_str().unwrap().len(), 16);
    }

    #[test]
    fn witness_output() {
        let c = ExperimentConfig::from_file(serde_json::from_str("{}").unwrap()).unwrap();
        let o = run(Command::Witness, &c, Some(&[0.3, 0.3])).unwrap();
        let v: Value = serde_json::from_str(&o.json).unwrap();
        assert_eq!(v["found"], false);
        assert!((v["best_f"].as_f64().unwrap() - 2.4).abs() < 1e-6);
    }

    #[test]
    fn overrides_change_the_digest() {
        let base = cfg();
        let mut file = base.file.clone();
        Overrides { seed: Some(8), ..Default::default() }.apply(&mut file);
        let changed = ExperimentConfig::from_file(file).unwrap();
        assert_ne!(base.digest(), changed.digest());
    }

    #[test]
    fn every_command_is_deterministic() {
        let mut file = cfg().file;
        Overrides {
            grid: Some("diag2:0.1,0.2".into()),
            truncation: Some(12),
            init: Some(vec![3, 3]),
            n_max: Some(10),
            ..Default::default()
        }
        .apply(&mut file);
        let c = ExperimentConfig::from_file(file).unwrap();
        for cmd in [
            Command::Classify,
            Command::Witness,
            Command::Simulate,
            Command::ReturnTimes,
            Command::Lyapunov,
            Command::Escape,
            Command::Oracle,
            Command::RegionScan,
        ] {
            let a = run(cmd, &c, None).unwrap();
            let b = run(cmd, &c, None).unwrap();
            assert_eq!(a, b, "{}", cmd.name());
        }
    }

    #[test]
    fn transient_oracle_reports_status() {
        let text = r#"{"users":[
            {"arrival":{"kind":"bernoulli","p":0.6},"window":{"kind":"bernoulli","p":0.5}},
            {"arrival":{"kind":"bernoulli","p":0.6},"window":{"kind":"bernoulli","p":0.5}}],
            "oracle":{"truncation":20}}"#;
        let o = run(Command::Oracle, &parse_config(text.as_bytes()).unwrap(), None).unwrap();
        let v: Value = serde_json::from_str(&o.json).unwrap();
        assert_eq!(v["status"], "truncation_dominated");
        assert!(o.artifact.unwrap().starts_with("# 441 2 20 "));
    }

    #[test]
    fn scan_needs_a_grid() {
        assert!(matches!(run(Command::RegionScan, &cfg(), None), Err(AlohaError::InvalidArgument(_))));
    }
}
