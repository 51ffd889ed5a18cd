//! Experiment configuration: a flat TOML file of `key = value` lines, with
//! `--set key=value` overrides applied on top.
//!
//! Every key is optional; a missing key takes the default shown in
//! [`ExperimentConfig::default`]. The dataset is synthetic unless
//! `embeddings` names a CSV file.

use std::path::{Path, PathBuf};

use decomp_core::datastream::{gen_synthetic, load_embeddings, Caps, Dataset, SyntheticSpec};
use decomp_core::memory::ExemplarSelection;
use decomp_core::training::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Default run seeds: the task sequences every experiment compares on.
pub const DEFAULT_SEEDS: [u64; 5] = [0, 1, 2, 3, 4];
pub const DEFAULT_DATA_SEED: u64 = 2024;
pub const DEFAULT_SWEEP_VALUES: [f64; 4] = [0.0, 1e-6, 1e-5, 1e-4];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Pre-encoded embedding CSV; the synthetic generator is used when unset.
    pub embeddings: Option<PathBuf>,

    pub num_relations: usize,
    pub per_relation: usize,
    pub feature_dim: usize,
    pub spread: f64,
    pub pair_offset: f64,
    pub analogous_pairs: Vec<(u32, u32)>,
    pub data_seed: u64,

    pub epochs_stage1: usize,
    pub epochs_stage2: usize,
    pub batch_size: usize,
    pub alpha_cur: f64,
    pub alpha_prev: f64,
    pub alpha_enc: f64,
    pub alpha_enc_stage1: Option<f64>,
    pub use_empirical_init: bool,
    pub use_adversarial_tuning: bool,
    pub memory_size: usize,
    pub exemplar_selection: ExemplarSelection,
    pub num_tasks: usize,
    pub hidden_dim: usize,
    pub repr_dim: usize,
    pub separate_pairs: bool,
    pub max_train_per_relation: Option<usize>,
    pub max_test_per_relation: Option<usize>,

    /// Run seeds; kept sorted so outputs do not depend on the order given.
    pub seeds: Vec<u64>,
    /// Where outputs go; not echoed into them, so reruns elsewhere match.
    #[serde(skip_serializing)]
    pub out_dir: PathBuf,
    pub sweep_values: Vec<f64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let spec = SyntheticSpec::default();
        let train = TrainConfig::default();
        Self {
            embeddings: None,
            num_relations: spec.num_relations,
            per_relation: spec.per_relation,
            feature_dim: spec.feature_dim,
            spread: spec.spread,
            pair_offset: spec.pair_offset,
            analogous_pairs: spec.analogous_pairs,
            data_seed: DEFAULT_DATA_SEED,
            epochs_stage1: train.epochs_stage1,
            epochs_stage2: train.epochs_stage2,
            batch_size: train.batch_size,
            alpha_cur: train.alpha_cur,
            alpha_prev: train.alpha_prev,
            alpha_enc: train.alpha_enc,
            alpha_enc_stage1: train.alpha_enc_stage1,
            use_empirical_init: train.use_empirical_init,
            use_adversarial_tuning: train.use_adversarial_tuning,
            memory_size: train.memory_size,
            exemplar_selection: train.exemplar_selection,
            num_tasks: train.num_tasks,
            hidden_dim: train.hidden_dim,
            repr_dim: train.repr_dim,
            separate_pairs: train.separate_pairs,
            max_train_per_relation: train.caps.max_train_per_relation,
            max_test_per_relation: train.caps.max_test_per_relation,
            seeds: DEFAULT_SEEDS.to_vec(),
            out_dir: PathBuf::from("out"),
            sweep_values: DEFAULT_SWEEP_VALUES.to_vec(),
        }
    }
}

/// Parses one `key=value` override. The value is read as a TOML value when
/// it is one (`3`, `1e-5`, `true`, `[[0, 1]]`, `"x"`) and as a bare string
/// otherwise, so paths need no quoting.
pub fn parse_override(arg: &str) -> Result<(String, toml::Value), CliError> {
    let (key, raw) = arg
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override {arg:?} is not of the form key=value")))?;
    let key = key.trim();
    if key.is_empty() || !key.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
        return Err(CliError::Config(format!("invalid override key {key:?}")));
    }
    let raw = raw.trim();
    let value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) if t.len() == 1 => t.remove("v").expect("single key"),
        _ => toml::Value::String(raw.to_string()),
    };
    Ok((key.to_string(), value))
}

/// Parses a comma-separated list such as `0,1,2` or `0,1e-6,1e-5`.
pub fn parse_list<T: std::str::FromStr>(what: &str, text: &str) -> Result<Vec<T>, CliError> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse()
                .map_err(|_| CliError::Config(format!("invalid {what} value {s:?}")))
        })
        .collect()
}

impl ExperimentConfig {
    /// Parses a config document and applies overrides in order.
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self, CliError> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        for arg in overrides {
            let (key, value) = parse_override(arg)?;
            table.insert(key, value);
        }
        let mut cfg: Self = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(e.message().to_string()))?;
        cfg.seeds.sort_unstable();
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path` (or starts from defaults when `None`) and applies
    /// overrides.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p)
                .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", p.display())))?,
            None => String::new(),
        };
        Self::from_toml_str(&text, overrides)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.seeds.is_empty() {
            return Err(CliError::Config("at least one seed is required".into()));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return Err(CliError::Config("seeds must be distinct".into()));
        }
        if self.sweep_values.is_empty() {
            return Err(CliError::Config("sweep_values must not be empty".into()));
        }
        if let Some(v) = self.sweep_values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(CliError::Config(format!("sweep value {v} must be finite and >= 0")));
        }
        self.train_config(0).validate().map_err(|e| CliError::Config(e.to_string()))?;
        if self.embeddings.is_none() {
            self.synthetic_spec()
                .validate()
                .map_err(|e| CliError::Config(e.to_string()))?;
        }
        Ok(())
    }

    pub fn synthetic_spec(&self) -> SyntheticSpec {
        SyntheticSpec {
            num_relations: self.num_relations,
            per_relation: self.per_relation,
            feature_dim: self.feature_dim,
            spread: self.spread,
            analogous_pairs: self.analogous_pairs.clone(),
            pair_offset: self.pair_offset,
        }
    }

    /// Training settings for one run seed.
    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs_stage1: self.epochs_stage1,
            epochs_stage2: self.epochs_stage2,
            batch_size: self.batch_size,
            alpha_cur: self.alpha_cur,
            alpha_prev: self.alpha_prev,
            alpha_enc: self.alpha_enc,
            alpha_enc_stage1: self.alpha_enc_stage1,
            use_empirical_init: self.use_empirical_init,
            use_adversarial_tuning: self.use_adversarial_tuning,
            seed,
            memory_size: self.memory_size,
            exemplar_selection: self.exemplar_selection,
            num_tasks: self.num_tasks,
            hidden_dim: self.hidden_dim,
            repr_dim: self.repr_dim,
            separate_pairs: self.separate_pairs,
            caps: Caps {
                max_train_per_relation: self.max_train_per_relation,
                max_test_per_relation: self.max_test_per_relation,
            },
        }
    }

    /// Loads or generates the dataset. A missing or malformed embedding file
    /// is a configuration error.
    pub fn dataset(&self) -> Result<Dataset, CliError> {
        match &self.embeddings {
            Some(path) => {
                if !path.is_file() {
                    return Err(CliError::Config(format!("dataset file not found: {}", path.display())));
                }
                load_embeddings(path).map_err(|e| CliError::Config(e.to_string()))
            }
            None => gen_synthetic(&self.synthetic_spec(), self.data_seed).map_err(|e| CliError::Config(e.to_string())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        let cfg = ExperimentConfig::from_toml_str("", &[]).unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        assert_eq!(cfg.train_config(3).seed, 3);
        assert_eq!(cfg.train_config(0).alpha_prev, 1e-5);
    }

    #[test]
    fn overrides_win_over_file() {
        let text = "alpha_prev = 1e-4\nepochs_stage1 = 3\n";
        let sets = ["alpha_prev=0".to_string(), "analogous_pairs=[[0, 5]]".into(), "out_dir=a/b".into()];
        let cfg = ExperimentConfig::from_toml_str(text, &sets).unwrap();
        assert_eq!(cfg.alpha_prev, 0.0);
        assert_eq!(cfg.epochs_stage1, 3);
        assert_eq!(cfg.analogous_pairs, vec![(0, 5)]);
        assert_eq!(cfg.out_dir, PathBuf::from("a/b"));
    }

    #[test]
    fn rejects_bad_configs() {
        for (text, sets) in [
            ("unknown_key = 1", vec![]),
            ("alpha_prev = -1.0", vec![]),
            ("seeds = []", vec![]),
            ("seeds = [1, 1]", vec![]),
            ("", vec!["batch_size=0".to_string()]),
            ("", vec!["sweep_values=[0, -1e-5]".to_string()]),
            ("", vec!["noequals".to_string()]),
            ("", vec!["=3".to_string()]),
            ("num_tasks = \"ten\"", vec![]),
            ("this is not toml", vec![]),
        ] {
            assert!(
                matches!(ExperimentConfig::from_toml_str(text, &sets), Err(CliError::Config(_))),
                "{text:?} {sets:?}"
            );
        }
    }

    #[test]
    fn missing_dataset_names_the_path() {
        let cfg = ExperimentConfig::from_toml_str("", &["embeddings=/nonexistent/x.csv".into()]).unwrap();
        let err = cfg.dataset().unwrap_err();
        assert!(err.to_string().contains("/nonexistent/x.csv"), "{err}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn list_parsing() {
        assert_eq!(parse_list::<u64>("seeds", "0, 1,2").unwrap(), vec![0, 1, 2]);
        assert_eq!(parse_list::<f64>("values", "0,1e-6").unwrap(), vec![0.0, 1e-6]);
        assert!(parse_list::<u64>("seeds", "0,x").is_err());
    }
}
