use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::OrchestrateError;
use crate::abstention::ReservationPolicy;
use crate::attention::FidelityOptions;
use crate::llm::{FailureMode, LlmRunConfig};
use crate::metrics::Averaging;
use crate::modeling::LossKind;
use crate::schema::TaskKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Multiwd,
    Wellxplain,
    Synthetic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub kind: DatasetKind,
    /// CSV file for `multiwd` / `wellxplain`.
    pub path: Option<PathBuf>,
    /// Schema size; defaults to 6 for multi-label data and 4 otherwise.
    pub label_count: Option<usize>,
    /// Synthetic data only; the file datasets fix their own task.
    pub task: Option<TaskKind>,
    pub samples: usize,
    pub generator_seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            kind: DatasetKind::Synthetic,
            path: None,
            label_count: None,
            task: None,
            samples: 400,
            generator_seed: 8,
        }
    }
}

impl DatasetConfig {
    pub fn task_kind(&self) -> TaskKind {
        match self.kind {
            DatasetKind::Multiwd => TaskKind::MultiLabel,
            DatasetKind::Wellxplain => TaskKind::MultiClass,
            DatasetKind::Synthetic => self.task.unwrap_or(TaskKind::MultiClass),
        }
    }

    pub fn resolved_label_count(&self) -> usize {
        self.label_count.unwrap_or(match self.task_kind() {
            TaskKind::MultiLabel => 6,
            TaskKind::MultiClass => 4,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Reference,
    Imported,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    /// Report label; derived from the parameters when empty.
    pub name: String,
    pub vocab_size: usize,
    pub dims: usize,
    pub heads: usize,
    pub hidden: usize,
    /// Token budget including the two special tokens.
    pub max_length: usize,
    pub fine_tune: bool,
    pub batch_size: usize,
    /// Gambler's-loss payoff; see `HeadConfig::payoff`.
    pub payoff: Option<f64>,
    /// Directory of exported predictions for `imported` models.
    pub predictions: Option<PathBuf>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            kind: ModelKind::Reference,
            name: String::new(),
            vocab_size: 4096,
            dims: 32,
            heads: 2,
            hidden: 32,
            max_length: 64,
            fine_tune: true,
            batch_size: 16,
            payoff: None,
            predictions: None,
        }
    }
}

impl ModelConfig {
    pub fn label(&self) -> String {
        if !self.name.is_empty() {
            return self.name.clone();
        }
        match self.kind {
            ModelKind::Reference => format!("reference-d{}-h{}-len{}", self.dims, self.heads, self.max_length),
            ModelKind::Imported => "imported".into(),
        }
    }
}

/// Prompted-LLM settings. With `replay` the transcript is the only source
/// of replies; otherwise live replies are appended to it.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct LlmSection {
    #[serde(flatten)]
    pub run: LlmRunConfig,
    pub replay: bool,
    pub transcript: Option<PathBuf>,
    pub failure_mode: FailureMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    pub loss: LossKind,
    pub seeds: Vec<u64>,
    pub epochs: usize,
    pub learning_rate: f64,
    pub train_fraction: f64,
    pub averaging: Averaging,
    pub reservation: ReservationPolicy,
    pub attention: FidelityOptions,
    pub llm: LlmSection,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            name: "experiment".into(),
            dataset: DatasetConfig::default(),
            model: ModelConfig::default(),
            loss: LossKind::Sce,
            seeds: vec![200, 345, 546],
            epochs: 5,
            learning_rate: 1e-5,
            train_fraction: 0.8,
            averaging: Averaging::Macro,
            reservation: ReservationPolicy::default(),
            attention: FidelityOptions::default(),
            llm: LlmSection::default(),
            output_dir: PathBuf::from("results"),
        }
    }
}

fn invalid(msg: impl Into<String>) -> OrchestrateError {
    OrchestrateError::Config(msg.into())
}

/// Sets a dotted key (`model.dims`) in a TOML table. The value is read as
/// a TOML literal when possible, otherwise as a bare string.
pub fn apply_override(table: &mut toml::Table, key: &str, raw: &str) -> Result<(), OrchestrateError> {
    let value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(invalid(format!("bad override key {key:?}")));
    }
    let mut node = table;
    for part in &parts[..parts.len() - 1] {
        node = node
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| invalid(format!("override {key}: {part} is not a table")))?;
    }
    node.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str, overrides: &[(String, String)]) -> Result<Self, OrchestrateError> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| invalid(format!("config: {e}")))?;
        for (k, v) in overrides {
            apply_override(&mut table, k, v)?;
        }
        let cfg: ExperimentConfig = toml::Value::Table(table).try_into().map_err(|e| invalid(format!("config: {e}")))?;
        cfg.resolved()
    }

    /// Reads a config file; relative dataset and prediction paths are
    /// taken relative to the file's directory.
    pub fn load(path: &Path, overrides: &[(String, String)]) -> Result<Self, OrchestrateError> {
        let text = std::fs::read_to_string(path).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml_str(&text, overrides)?;
        let base = path.parent().unwrap_or(Path::new(""));
        let rebase = |p: &mut Option<PathBuf>| {
            if let Some(inner) = p {
                if inner.is_relative() {
                    *inner = base.join(&*inner);
                }
            }
        };
        rebase(&mut cfg.dataset.path);
        rebase(&mut cfg.model.predictions);
        rebase(&mut cfg.llm.transcript);
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String, OrchestrateError> {
        toml::to_string(self).map_err(|e| invalid(format!("serialize config: {e}")))
    }

    /// Fills defaults and validates. Sigmoid cross-entropy runs have no
    /// reservation score, so their levels collapse to `[1.0]`.
    pub fn resolved(mut self) -> Result<Self, OrchestrateError> {
        self.dataset.label_count = Some(self.dataset.resolved_label_count());
        if self.dataset.kind == DatasetKind::Synthetic {
            self.dataset.task = Some(self.dataset.task_kind());
        }
        if self.loss == LossKind::Sce {
            self.reservation.levels = vec![1.0];
        }
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), OrchestrateError> {
        if self.seeds.is_empty() {
            return Err(invalid("at least one seed is required"));
        }
        if self.seeds.iter().collect::<HashSet<_>>().len() != self.seeds.len() {
            return Err(invalid("seeds must be distinct"));
        }
        if self.epochs == 0 {
            return Err(invalid("epochs must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(invalid("learning_rate must be positive"));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(invalid("train_fraction must lie in (0, 1)"));
        }
        self.reservation.validate().map_err(|e| invalid(e.to_string()))?;
        if self.attention.k == 0 {
            return Err(invalid("attention.k must be at least 1"));
        }
        let d = &self.dataset;
        let labels = d.resolved_label_count();
        match (d.kind, d.task_kind()) {
            (DatasetKind::Multiwd | DatasetKind::Wellxplain, _) if d.path.is_none() => {
                return Err(invalid("dataset.path is required for file datasets"));
            }
            (DatasetKind::Wellxplain, _) | (DatasetKind::Synthetic, TaskKind::MultiClass) if labels != 4 => {
                return Err(invalid(format!("multi-class data has 4 classes, label_count is {labels}")));
            }
            (_, TaskKind::MultiLabel) if !(4..=6).contains(&labels) => {
                return Err(invalid(format!("label_count {labels} not in 4..=6")));
            }
            _ => {}
        }
        if d.kind != DatasetKind::Synthetic && d.task.is_some_and(|t| t != d.task_kind()) {
            return Err(invalid("dataset.task can only be set for synthetic data"));
        }
        if d.kind == DatasetKind::Synthetic && d.samples < 2 {
            return Err(invalid("synthetic dataset needs at least 2 samples"));
        }
        let m = &self.model;
        match m.kind {
            ModelKind::Reference => {
                if m.dims == 0 || m.heads == 0 || !m.dims.is_multiple_of(m.heads) {
                    return Err(invalid(format!("model.dims {} must be a positive multiple of model.heads {}", m.dims, m.heads)));
                }
                if m.hidden == 0 || m.batch_size == 0 || m.vocab_size <= 2 || m.max_length < 3 {
                    return Err(invalid("model.hidden, batch_size must be positive, vocab_size > 2, max_length >= 3"));
                }
            }
            ModelKind::Imported if m.predictions.is_none() => {
                return Err(invalid("model.predictions is required for imported models"));
            }
            ModelKind::Imported => {}
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form, excluding `output_dir`.
    pub fn config_hash(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serializes");
        if let Some(map) = value.as_object_mut() {
            map.remove("output_dir");
        }
        let digest = Sha256::digest(value.to_string().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_published_protocol() {
        let cfg = ExperimentConfig::from_toml_str("", &[]).unwrap();
        assert_eq!(cfg.seeds, vec![200, 345, 546]);
        assert_eq!(cfg.epochs, 5);
        assert_eq!(cfg.learning_rate, 1e-5);
        assert_eq!(cfg.train_fraction, 0.8);
        assert_eq!(cfg.reservation.levels, vec![1.0]);
        let gl = ExperimentConfig::from_toml_str("loss = \"gl\"", &[]).unwrap();
        assert_eq!(gl.reservation.levels, vec![1.0, 0.95, 0.85, 0.75]);
    }

    #[test]
    fn overrides_and_rejections() {
        let cfg = ExperimentConfig::from_toml_str(
            "[model]\ndims = 16",
            &[("model.heads".into(), "4".into()), ("name".into(), "demo run".into()), ("seeds".into(), "[1, 2]".into())],
        )
        .unwrap();
        assert_eq!((cfg.model.dims, cfg.model.heads, cfg.name.as_str()), (16, 4, "demo run"));
        assert_eq!(cfg.seeds, vec![1, 2]);
        assert!(ExperimentConfig::from_toml_str("[dataset]\nkind = \"imdb\"", &[]).is_err());
        assert!(ExperimentConfig::from_toml_str("[dataset]\nkind = \"multiwd\"", &[]).is_err());
        assert!(ExperimentConfig::from_toml_str("epochs = 0", &[]).is_err());
        assert!(ExperimentConfig::from_toml_str("bogus = 1", &[]).is_err());
        assert!(ExperimentConfig::from_toml_str("[model]\ndims = 30\nheads = 4", &[]).is_err());
    }

    #[test]
    fn hash_ignores_output_dir_only() {
        let a = ExperimentConfig::from_toml_str("", &[]).unwrap();
        let b = ExperimentConfig { output_dir: "elsewhere".into(), ..a.clone() };
        assert_eq!(a.config_hash(), b.config_hash());
        let c = ExperimentConfig { epochs: 6, ..a.clone() };
        assert_ne!(a.config_hash(), c.config_hash());
        let reparsed = ExperimentConfig::from_toml_str(&a.to_toml().unwrap(), &[]).unwrap();
        assert_eq!(reparsed.config_hash(), a.config_hash());
    }
}
