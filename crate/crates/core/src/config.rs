//! Experiment configuration: a single JSON object with flat dotted keys.
//!
//! ```json
//! { "rounds": 50, "rule": "krum", "ibi": true, "attack.alie.z": 0.9 }
//! ```
//!
//! Every key is optional; missing keys take their defaults and unknown keys
//! are rejected. [`ExperimentConfig::to_json`] writes every key back out, so
//! parsing an echo yields the same config.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::attacks::{AlieParams, AlieSign, AttackParams, GaussianMode, GaussianParams};
use crate::nn::{ModelConfig, Optimizer};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("malformed config: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregationRule {
    Krum,
    TrimmedMean,
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupBackend {
    P256,
    Toy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransportKind {
    InMemory,
    Tcp,
}

macro_rules! keyword_enum {
    ($ty:ty { $($word:literal => $variant:expr),+ $(,)? }) => {
        impl FromStr for $ty {
            type Err = ConfigError;
            fn from_str(s: &str) -> Result<Self, ConfigError> {
                match s {
                    $($word => Ok($variant),)+
                    other => Err(invalid(format!(
                        "unknown {} '{other}' (expected one of: {})",
                        stringify!($ty),
                        [$($word),+].join(", ")
                    ))),
                }
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                let word = match self {
                    $(v if *v == $variant => $word,)+
                    _ => unreachable!(),
                };
                f.write_str(word)
            }
        }
    };
}

keyword_enum!(AggregationRule {
    "krum" => AggregationRule::Krum,
    "trimmed_mean" => AggregationRule::TrimmedMean,
    "mean" => AggregationRule::Mean,
});
keyword_enum!(GroupBackend { "p256" => GroupBackend::P256, "toy" => GroupBackend::Toy });
keyword_enum!(TransportKind { "in_memory" => TransportKind::InMemory, "tcp" => TransportKind::Tcp });

#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    /// CSV with a `Diabetes_binary` column. `None` uses the synthetic surrogate.
    pub path: Option<PathBuf>,
    pub test_fraction: f64,
    pub synthetic_rows: usize,
    pub synthetic_separation: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            path: None,
            test_fraction: 0.2,
            synthetic_rows: crate::data::synth::BRFSS_ROWS,
            synthetic_separation: crate::data::synth::DEFAULT_SEPARATION,
        }
    }
}

/// When a client counts as flagged, and how many consecutive flags it takes
/// to be disconnected.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicyConfig {
    pub strike_threshold: u32,
    /// Trimmed mean: flagged if more than this fraction of coordinates was trimmed.
    pub trim_flag_fraction: f64,
    /// Krum: flagged if the score exceeds this multiple of the median score.
    pub krum_flag_ratio: f64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self { strike_threshold: 3, trim_flag_fraction: 0.5, krum_flag_ratio: 1.5 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub label: Option<String>,
    pub n_clients: usize,
    pub n_malicious: usize,
    pub rounds: usize,
    pub rule: AggregationRule,
    pub ibi_enabled: bool,
    pub group: GroupBackend,
    pub trim_beta: f64,
    /// Byzantine count assumed by Krum; `None` means `n_malicious`.
    pub krum_f: Option<usize>,
    pub attack: AttackParams,
    /// Malicious clients reconnect after a forced disconnect.
    pub rmc_enabled: bool,
    /// `input_dim` is overwritten with the dataset width at run time.
    pub model: ModelConfig,
    pub policy: PolicyConfig,
    pub data: DataConfig,
    pub seed: u64,
    pub transport: TransportKind,
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            label: None,
            n_clients: 20,
            n_malicious: 5,
            rounds: 50,
            rule: AggregationRule::Krum,
            ibi_enabled: true,
            group: GroupBackend::P256,
            trim_beta: 0.25,
            krum_f: None,
            attack: AttackParams::default(),
            rmc_enabled: true,
            model: ModelConfig::default(),
            policy: PolicyConfig::default(),
            data: DataConfig::default(),
            seed: 42,
            transport: TransportKind::InMemory,
            out_dir: PathBuf::from("out"),
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigOverrides {
    pub rounds: Option<usize>,
    pub rule: Option<AggregationRule>,
    pub ibi_enabled: Option<bool>,
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub transport: Option<TransportKind>,
    pub n_clients: Option<usize>,
    pub n_malicious: Option<usize>,
    pub label: Option<String>,
}

/// On-disk shape. Every field is optional so that absent keys fall back to
/// defaults.
#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FlatConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    label: Option<String>,
    n_clients: Option<usize>,
    n_malicious: Option<usize>,
    rounds: Option<usize>,
    rule: Option<AggregationRule>,
    ibi: Option<bool>,
    group: Option<GroupBackend>,
    seed: Option<u64>,
    transport: Option<TransportKind>,
    out_dir: Option<PathBuf>,
    #[serde(rename = "trim.beta")]
    trim_beta: Option<f64>,
    #[serde(rename = "krum.f", skip_serializing_if = "Option::is_none")]
    krum_f: Option<usize>,
    #[serde(rename = "attack.gaussian.mu")]
    gaussian_mu: Option<f64>,
    #[serde(rename = "attack.gaussian.sigma")]
    gaussian_sigma: Option<f64>,
    #[serde(rename = "attack.gaussian.mode")]
    gaussian_mode: Option<GaussianMode>,
    #[serde(rename = "attack.alie.z")]
    alie_z: Option<f64>,
    #[serde(rename = "attack.alie.sign")]
    alie_sign: Option<AlieSign>,
    #[serde(rename = "attack.rmc")]
    rmc: Option<bool>,
    #[serde(rename = "model.hidden")]
    hidden: Option<Vec<usize>>,
    #[serde(rename = "model.dropout_hidden")]
    dropout_hidden: Option<f64>,
    #[serde(rename = "model.dropout_preoutput")]
    dropout_preoutput: Option<f64>,
    #[serde(rename = "model.learning_rate")]
    learning_rate: Option<f64>,
    #[serde(rename = "model.batch_size")]
    batch_size: Option<usize>,
    #[serde(rename = "model.local_epochs")]
    local_epochs: Option<usize>,
    #[serde(rename = "model.optimizer")]
    optimizer: Option<Optimizer>,
    #[serde(rename = "policy.strike_threshold")]
    strike_threshold: Option<u32>,
    #[serde(rename = "policy.trim_flag_fraction")]
    trim_flag_fraction: Option<f64>,
    #[serde(rename = "policy.krum_flag_ratio")]
    krum_flag_ratio: Option<f64>,
    #[serde(rename = "data.path", skip_serializing_if = "Option::is_none")]
    data_path: Option<PathBuf>,
    #[serde(rename = "data.test_fraction")]
    test_fraction: Option<f64>,
    #[serde(rename = "data.synthetic_rows")]
    synthetic_rows: Option<usize>,
    #[serde(rename = "data.synthetic_separation")]
    synthetic_separation: Option<f64>,
}

impl ExperimentConfig {
    /// Parses a config document (an empty or whitespace-only document means
    /// all defaults) and validates it.
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        Self::from_json_with(text, &ConfigOverrides::default())
    }

    pub fn from_json_with(text: &str, overrides: &ConfigOverrides) -> Result<Self, ConfigError> {
        let flat: FlatConfig = if text.trim().is_empty() {
            FlatConfig::default()
        } else {
            serde_json::from_str(text)?
        };
        let mut config = Self::default();
        config.apply_flat(flat);
        config.apply_overrides(overrides);
        config.validate()?;
        Ok(config)
    }

    /// Writes every key, including defaults.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_flat()).expect("config serializes")
    }

    pub fn apply_overrides(&mut self, o: &ConfigOverrides) {
        macro_rules! take {
            ($field:ident => $target:expr) => {
                if let Some(v) = &o.$field {
                    $target = v.clone();
                }
            };
        }
        take!(rounds => self.rounds);
        take!(rule => self.rule);
        take!(ibi_enabled => self.ibi_enabled);
        take!(seed => self.seed);
        take!(out_dir => self.out_dir);
        take!(transport => self.transport);
        take!(n_clients => self.n_clients);
        take!(n_malicious => self.n_malicious);
        if o.label.is_some() {
            self.label = o.label.clone();
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.n_clients == 0 {
            return Err(invalid("n_clients must be at least 1"));
        }
        let max_malicious = self.n_clients.div_ceil(2) - 1;
        if self.n_malicious > max_malicious {
            return Err(invalid(format!(
                "n_malicious = {} exceeds ⌈n_clients/2⌉ − 1 = {max_malicious} for n_clients = {}",
                self.n_malicious, self.n_clients
            )));
        }
        if !(0.0..0.5).contains(&self.trim_beta) {
            return Err(invalid(format!("trim.beta = {} must lie in [0, 0.5)", self.trim_beta)));
        }
        if self.rule == AggregationRule::Krum && self.n_clients < 3 {
            return Err(invalid("krum needs at least 3 clients"));
        }
        if let Some(f) = self.krum_f {
            if f + 3 > self.n_clients {
                return Err(invalid(format!(
                    "krum.f = {f} leaves no neighbours for n_clients = {} (need f ≤ n − 3)",
                    self.n_clients
                )));
            }
        }
        self.attack.validate().map_err(|e| invalid(e.to_string()))?;
        self.model.validate().map_err(|e| invalid(e.to_string()))?;
        let p = &self.policy;
        if p.strike_threshold == 0 {
            return Err(invalid("policy.strike_threshold must be at least 1"));
        }
        if !(0.0..=1.0).contains(&p.trim_flag_fraction) {
            return Err(invalid("policy.trim_flag_fraction must lie in [0, 1]"));
        }
        if !(p.krum_flag_ratio > 0.0 && p.krum_flag_ratio.is_finite()) {
            return Err(invalid("policy.krum_flag_ratio must be positive"));
        }
        let d = &self.data;
        if !(d.test_fraction > 0.0 && d.test_fraction < 1.0) {
            return Err(invalid(format!("data.test_fraction = {} must lie in (0, 1)", d.test_fraction)));
        }
        if d.path.is_none() && d.synthetic_rows < 2 * self.n_clients {
            return Err(invalid("data.synthetic_rows too small for the number of clients"));
        }
        if !(0.0..=1.0).contains(&d.synthetic_separation) {
            return Err(invalid("data.synthetic_separation must lie in [0, 1]"));
        }
        Ok(())
    }

    pub fn krum_f(&self) -> usize {
        self.krum_f.unwrap_or(self.n_malicious)
    }

    /// Legend text: the configured label, else rule plus IBI setting.
    pub fn display_label(&self) -> String {
        match &self.label {
            Some(l) => l.clone(),
            None => format!("{} {}", self.rule, if self.ibi_enabled { "ibi" } else { "no-ibi" }),
        }
    }

    pub fn client_ids(&self) -> Vec<String> {
        (1..=self.n_clients).map(|i| format!("client-{i}")).collect()
    }

    /// Independent stream seed for one purpose, e.g. `derive_seed(&["train", id, "7"])`.
    pub fn derive_seed(&self, parts: &[&str]) -> u64 {
        derive_seed(self.seed, parts)
    }

    fn apply_flat(&mut self, f: FlatConfig) {
        macro_rules! set {
            ($($src:ident => $dst:expr),+ $(,)?) => {
                $(if let Some(v) = f.$src { $dst = v; })+
            };
        }
        set! {
            n_clients => self.n_clients,
            n_malicious => self.n_malicious,
            rounds => self.rounds,
            rule => self.rule,
            ibi => self.ibi_enabled,
            group => self.group,
            seed => self.seed,
            transport => self.transport,
            out_dir => self.out_dir,
            trim_beta => self.trim_beta,
            gaussian_mu => self.attack.gaussian.mu,
            gaussian_sigma => self.attack.gaussian.sigma,
            gaussian_mode => self.attack.gaussian.mode,
            alie_z => self.attack.alie.z,
            alie_sign => self.attack.alie.sign,
            rmc => self.rmc_enabled,
            hidden => self.model.hidden_dims,
            dropout_hidden => self.model.dropout_hidden,
            dropout_preoutput => self.model.dropout_preoutput,
            learning_rate => self.model.learning_rate,
            batch_size => self.model.batch_size,
            local_epochs => self.model.local_epochs,
            optimizer => self.model.optimizer,
            strike_threshold => self.policy.strike_threshold,
            trim_flag_fraction => self.policy.trim_flag_fraction,
            krum_flag_ratio => self.policy.krum_flag_ratio,
            test_fraction => self.data.test_fraction,
            synthetic_rows => self.data.synthetic_rows,
            synthetic_separation => self.data.synthetic_separation,
        }
        if f.label.is_some() {
            self.label = f.label;
        }
        if f.krum_f.is_some() {
            self.krum_f = f.krum_f;
        }
        if f.data_path.is_some() {
            self.data.path = f.data_path;
        }
    }

    fn to_flat(&self) -> FlatConfig {
        let AttackParams {
            gaussian: GaussianParams { mu, sigma, mode },
            alie: AlieParams { z, sign },
        } = self.attack;
        FlatConfig {
            label: self.label.clone(),
            n_clients: Some(self.n_clients),
            n_malicious: Some(self.n_malicious),
            rounds: Some(self.rounds),
            rule: Some(self.rule),
            ibi: Some(self.ibi_enabled),
            group: Some(self.group),
            seed: Some(self.seed),
            transport: Some(self.transport),
            out_dir: Some(self.out_dir.clone()),
            trim_beta: Some(self.trim_beta),
            krum_f: self.krum_f,
            gaussian_mu: Some(mu),
            gaussian_sigma: Some(sigma),
            gaussian_mode: Some(mode),
            alie_z: Some(z),
            alie_sign: Some(sign),
            rmc: Some(self.rmc_enabled),
            hidden: Some(self.model.hidden_dims.clone()),
            dropout_hidden: Some(self.model.dropout_hidden),
            dropout_preoutput: Some(self.model.dropout_preoutput),
            learning_rate: Some(self.model.learning_rate),
            batch_size: Some(self.model.batch_size),
            local_epochs: Some(self.model.local_epochs),
            optimizer: Some(self.model.optimizer),
            strike_threshold: Some(self.policy.strike_threshold),
            trim_flag_fraction: Some(self.policy.trim_flag_fraction),
            krum_flag_ratio: Some(self.policy.krum_flag_ratio),
            data_path: self.data.path.clone(),
            test_fraction: Some(self.data.test_fraction),
            synthetic_rows: Some(self.data.synthetic_rows),
            synthetic_separation: Some(self.data.synthetic_separation),
        }
    }
}

/// Reads, overrides and validates a config file.
pub fn parse_config(path: &Path, overrides: &ConfigOverrides) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| ConfigError::Io { path: path.to_owned(), source })?;
    ExperimentConfig::from_json_with(&text, overrides)
}

/// First 8 bytes (big-endian) of SHA-256 over the master seed and the
/// length-prefixed parts.
pub fn derive_seed(master: u64, parts: &[&str]) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_be_bytes());
    for p in parts {
        h.update((p.len() as u32).to_be_bytes());
        h.update(p.as_bytes());
    }
    let digest = h.finalize();
    u64::from_be_bytes(digest[..8].try_into().expect("8 bytes"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_all_defaults() {
        assert_eq!(ExperimentConfig::from_json("").unwrap(), ExperimentConfig::default());
        assert_eq!(ExperimentConfig::from_json("{}").unwrap(), ExperimentConfig::default());
        let c = ExperimentConfig::default();
        assert_eq!((c.n_clients, c.n_malicious, c.rounds), (20, 5, 50));
        assert_eq!((c.model.learning_rate, c.model.batch_size), (0.01, 32));
        assert_eq!((c.trim_beta, c.krum_f(), c.attack.alie.z), (0.25, 5, 0.9));
        assert_eq!((c.attack.gaussian.mu, c.attack.gaussian.sigma), (2.0, 2.0));
        assert_eq!(c.policy.strike_threshold, 3);
    }

    #[test]
    fn echo_round_trips() {
        let c = ExperimentConfig::from_json(r#"{"rule":"trimmed_mean","ibi":false,"krum.f":4,"label":"x","data.path":"d.csv"}"#)
            .unwrap();
        let echoed = c.to_json();
        let again = ExperimentConfig::from_json(&echoed).unwrap();
        assert_eq!(again, c);
        assert_eq!(again.to_json(), echoed);
        assert_eq!(ExperimentConfig::from_json(&ExperimentConfig::default().to_json()).unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn overrides_win() {
        let o = ConfigOverrides { rounds: Some(5), rule: Some(AggregationRule::Mean), ..Default::default() };
        let c = ExperimentConfig::from_json_with(r#"{"rounds": 9, "seed": 3}"#, &o).unwrap();
        assert_eq!(c.rounds, 5);
        assert_eq!(c.rule, AggregationRule::Mean);
        assert_eq!(c.seed, 3);
        assert_eq!(c.n_clients, 20);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(ExperimentConfig::from_json(r#"{"roundz": 3}"#), Err(ConfigError::Json(_))));
        let o = ConfigOverrides { n_malicious: Some(12), ..Default::default() };
        let err = ExperimentConfig::from_json_with("", &o).unwrap_err();
        assert!(err.to_string().contains("= 9"), "{err}");
        assert!(ExperimentConfig::from_json(r#"{"n_malicious": 10}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"n_malicious": 9}"#).is_ok());
        assert!(ExperimentConfig::from_json(r#"{"trim.beta": 0.5}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"krum.f": 18}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"rule": "median"}"#).is_err());
        assert!(ExperimentConfig::from_json("[1,2]").is_err());
    }

    #[test]
    fn keywords_parse_and_print() {
        for rule in [AggregationRule::Krum, AggregationRule::TrimmedMean, AggregationRule::Mean] {
            assert_eq!(rule.to_string().parse::<AggregationRule>().unwrap(), rule);
        }
        assert_eq!("tcp".parse::<TransportKind>().unwrap(), TransportKind::Tcp);
        assert!("udp".parse::<TransportKind>().is_err());
    }

    #[test]
    fn seeds_are_stable_and_distinct() {
        assert_eq!(derive_seed(1, &["a", "b"]), derive_seed(1, &["a", "b"]));
        assert_ne!(derive_seed(1, &["a", "b"]), derive_seed(1, &["ab"]));
        assert_ne!(derive_seed(1, &["a"]), derive_seed(2, &["a"]));
    }
}
