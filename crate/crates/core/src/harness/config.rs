//! Experiment configuration files.
//!
//! ```json
//! {
//!   "users": [
//!     {"arrival": {"kind": "bernoulli", "p": 0.3},
//!      "window":  {"kind": "bernoulli", "p": 0.7}}
//!   ],
//!   "seed": 42,
//!   "horizon": 1000,
//!   "replications": 100
//! }
//! ```
//!
//! Optional blocks: `init` (start state), `tail` (k values for return-time
//! tails), `witness` (search options), `oracle` (`truncation`), `sweep`
//! (`grid` plus Monte Carlo validation settings), `lyapunov` (`n_max`) and
//! `escape` (`scale`). Unknown keys are rejected everywhere.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::chain::{NetworkConfig, UserLaws};
use crate::dists::{Distribution, DistributionSpec};
use crate::error::{AlohaError, LawRole, Result};
use crate::region::WitnessOptions;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserSpec {
    pub arrival: DistributionSpec,
    pub window: DistributionSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleBlock {
    pub truncation: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LyapunovBlock {
    pub n_max: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EscapeBlock {
    pub scale: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepBlock {
    /// Grid in the textual form accepted by `GridSpec::parse`.
    pub grid: String,
    /// Grid indices to validate by simulation.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub mc_points: Vec<usize>,
    /// Also validate up to 20 automatically chosen points next to the boundary.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub mc_auto: bool,
}

/// The file as written by the user. Serializing this is the canonical form.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(default)]
    pub users: Vec<UserSpec>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replications: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init: Option<Vec<u64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tail: Option<Vec<u64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub witness: Option<WitnessOptions>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle: Option<OracleBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lyapunov: Option<LyapunovBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub escape: Option<EscapeBlock>,
}

/// A parsed file plus the network it describes (absent when `users` is empty,
/// which only region scans and witness searches allow).
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub file: ConfigFile,
    pub network: Option<NetworkConfig>,
}

fn build_network(users: &[UserSpec]) -> Result<NetworkConfig> {
    let schema = |i: usize, role: LawRole, e: AlohaError| AlohaError::SchemaError {
        path: format!("users[{i}].{role}"),
        message: e.to_string(),
    };
    let laws = users
        .iter()
        .enumerate()
        .map(|(i, u)| {
            Ok(UserLaws {
                arrival: Distribution::new(u.arrival.clone()).map_err(|e| schema(i, LawRole::Arrival, e))?,
                window: Distribution::new(u.window.clone()).map_err(|e| schema(i, LawRole::Window, e))?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    NetworkConfig::new(laws)
}

impl ExperimentConfig {
    pub fn from_file(file: ConfigFile) -> Result<Self> {
        let network = if file.users.is_empty() { None } else { Some(build_network(&file.users)?) };
        if let (Some(init), Some(net)) = (&file.init, &network) {
            if init.len() != net.num_users() {
                return Err(AlohaError::SchemaError {
                    path: "init".into(),
                    message: format!("expected {} entries, got {}", net.num_users(), init.len()),
                });
            }
        }
        Ok(ExperimentConfig { file, network })
    }

    /// The network, or a schema error when the file lists no users.
    pub fn network(&self) -> Result<&NetworkConfig> {
        self.network.as_ref().ok_or_else(|| AlohaError::SchemaError {
            path: "users".into(),
            message: "at least one user is required".into(),
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.file).expect("config serializes")
    }

    /// First 8 bytes of SHA-256 over the canonical JSON, as 16 hex digits.
    pub fn digest(&self) -> String {
        digest_str(&self.to_json())
    }
}

pub fn digest_str(canonical: &str) -> String {
    let hash = Sha256::digest(canonical.as_bytes());
    hash[..8].iter().map(|b| format!("{b:02x}")).collect()
}

/// Parses and validates a UTF-8 JSON config.
pub fn parse_config(text: &[u8]) -> Result<ExperimentConfig> {
    let mut de = serde_json::Deserializer::from_slice(text);
    let file: ConfigFile = serde_path_to_error::deserialize(&mut de).map_err(|e| AlohaError::SchemaError {
        path: e.path().to_string(),
        message: e.inner().to_string(),
    })?;
    de.end().map_err(|e| AlohaError::SchemaError { path: ".".into(), message: e.to_string() })?;
    ExperimentConfig::from_file(file)
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASIC: &str = r#"{"users":[{"arrival":{"kind":"bernoulli","p":0.3},"window":{"kind":"bernoulli","p":0.7}}],"seed":42,"horizon":1000,"replications":100}"#;

    #[test]
    fn basic_config() {
        let c = parse_config(BASIC.as_bytes()).unwrap();
        assert_eq!(c.network().unwrap().num_users(), 1);
        assert_eq!(c.file.seed, 42);
        assert_eq!(c.file.horizon, Some(1000));
        assert_eq!(c.file.replications, Some(100));
    }

    #[test]
    fn window_without_mass_at_one() {
        let text = r#"{"users":[{"arrival":{"kind":"bernoulli","p":0.3},"window":{"kind":"finite_pmf","probs":[0.5,0,0.5]}}]}"#;
        let e = parse_config(text.as_bytes()).unwrap_err();
        assert!(matches!(e, AlohaError::ZeroProbOfOne { user: 0, role: LawRole::Window }), "{e}");
    }

    #[test]
    fn pmf_summing_past_one_is_a_schema_error() {
        let text = r#"{"users":[
            {"arrival":{"kind":"bernoulli","p":0.3},"window":{"kind":"bernoulli","p":0.7}},
            {"arrival":{"kind":"finite_pmf","probs":[0.6,0.5]},"window":{"kind":"bernoulli","p":0.7}}]}"#;
        match parse_config(text.as_bytes()).unwrap_err() {
            AlohaError::SchemaError { path, .. } => assert_eq!(path, "users[1].arrival"),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn unknown_keys_report_their_path() {
        let text = r#"{"users":[{"arrival":{"kind":"bernoulli","p":0.3},"window":{"kind":"bernoulli","p":0.7,"x":1}}]}"#;
        match parse_config(text.as_bytes()).unwrap_err() {
            AlohaError::SchemaError { path, .. } => assert!(path.starts_with("users[0].window"), "{path}"),
            e => panic!("unexpected {e}"),
        }
        let e = parse_config(br#"{"users":[],"colour":"red"}"#).unwrap_err();
        assert!(matches!(e, AlohaError::SchemaError { .. }));
        assert!(parse_config(b"{not json").is_err());
    }

    #[test]
    fn init_length_is_checked() {
        let text = r#"{"users":[{"arrival":{"kind":"bernoulli","p":0.3},"window":{"kind":"bernoulli","p":0.7}}],"init":[1,2]}"#;
        assert!(matches!(parse_config(text.as_bytes()), Err(AlohaError::SchemaError { .. })));
    }

    #[test]
    fn digest_is_stable_under_formatting() {
        let a = parse_config(BASIC.as_bytes()).unwrap();
        let pretty = serde_json::to_string_pretty(&serde_json::from_str::<serde_json::Value>(BASIC).unwrap()).unwrap();
        let b = parse_config(pretty.as_bytes()).unwrap();
        assert_eq!(a.digest(), b.digest());
        assert_eq!(a.digest().len(), 16);
    }
}
