//! Declarative run configuration: a TOML file with `[data]`, `[model]`,
//! `[train]`, `[synth]`, and `[eval]` sections, individually overridable
//! with dotted `key=value` pairs. Unknown keys are rejected. The config
//! digest (a truncated SHA-256 of the canonical JSON form) stamps logs,
//! reports, and checkpoints.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{FillMethod, SynthParams};
use crate::error::{FdinError, Result};
use crate::model::ModelConfig;

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Dataset manifest for train/eval/robustness.
    pub manifest: Option<PathBuf>,
    /// Frame directory for infer.
    pub frames_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Learning rate is halved once, at the start of epoch
    /// `lr_halve_epoch + 1`.
    pub lr_halve_epoch: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Training window stride (evaluation always uses stride t_c).
    pub stride: usize,
    pub flip_prob: f64,
    /// Optional checkpoint whose tensors initialize the model instead of
    /// random weights; its model config must match.
    pub pretrained_weights: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            lr_halve_epoch: 10,
            epochs: 20,
            batch_size: 4,
            seed: 0,
            stride: 1,
            flip_prob: 0.5,
            pretrained_weights: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 || !self.learning_rate.is_finite() {
            return Err(FdinError::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.stride == 0 {
            return Err(FdinError::Config(
                "epochs, batch_size, and stride must be positive".into(),
            ));
        }
        if self.lr_halve_epoch == 0 || self.lr_halve_epoch > self.epochs {
            return Err(FdinError::Config(format!(
                "lr_halve_epoch must be in [1, epochs]; got {} with {} epochs",
                self.lr_halve_epoch, self.epochs
            )));
        }
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return Err(FdinError::Config(format!(
                "flip_prob must be in [0, 1], got {}",
                self.flip_prob
            )));
        }
        Ok(())
    }

    /// Step-function schedule: one halving after `lr_halve_epoch` epochs.
    pub fn lr_at_epoch(&self, epoch: usize) -> f64 {
        if epoch > self.lr_halve_epoch {
            self.learning_rate * 0.5
        } else {
            self.learning_rate
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub threshold: f32,
    pub qf_list: Vec<u8>,
    /// Checkpoint to evaluate / infer / stress.
    pub checkpoint: Option<PathBuf>,
    /// Score an external prediction set (mask image directories per clip)
    /// instead of running the model.
    pub predictions_dir: Option<PathBuf>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            threshold: 0.5,
            qf_list: vec![70, 90],
            checkpoint: None,
            predictions_dir: None,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.threshold && self.threshold < 1.0) {
            return Err(FdinError::Config(format!(
                "threshold must be in (0, 1), got {}",
                self.threshold
            )));
        }
        for &qf in &self.qf_list {
            if !(1..=100).contains(&qf) {
                return Err(FdinError::Config(format!(
                    "quality factors must be in [1, 100], got {qf}"
                )));
            }
        }
        Ok(())
    }
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            seed: 0,
            n_clips: 20,
            t: 8,
            h: 64,
            w: 112,
            method: FillMethod::BlurFill,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub synth: SynthParams,
    pub eval: EvalConfig,
}

impl RunConfig {
    /// Load a TOML config file (or start from defaults when `path` is
    /// None) and apply dotted-path overrides like
    /// `train.learning_rate=3e-4`.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig> {
        let mut value: toml::Value = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| FdinError::io(format!("read config {}", p.display()), e))?;
                text.parse::<toml::Value>()
                    .map_err(|e| FdinError::Config(format!("parse {}: {e}", p.display())))?
            }
            None => toml::Value::Table(toml::map::Map::new()),
        };
        for ov in overrides {
            apply_override(&mut value, ov)?;
        }
        value
            .try_into()
            .map_err(|e| FdinError::Config(format!("invalid configuration: {e}")))
    }

    /// Truncated SHA-256 of the canonical JSON serialization.
    pub fn digest(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let hash = Sha256::digest(json.as_bytes());
        hash.iter()
            .take(8)
            .map(|b| format!("{b:02x}"))
            .collect::<String>()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes to toml")
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.eval.validate()
    }
}

/// Set `a.b.c=value` inside a TOML value tree, creating tables as needed.
fn apply_override(root: &mut toml::Value, spec: &str) -> Result<()> {
    let (path, raw) = spec.split_once('=').ok_or_else(|| {
        FdinError::Config(format!("override {spec:?} must look like key.path=value"))
    })?;
    let segments: Vec<&str> = path.trim().split('.').collect();
    if segments.iter().any(|s| s.is_empty()) {
        return Err(FdinError::Config(format!("bad override path {path:?}")));
    }
    // parse the value as TOML; fall back to a plain string
    let parsed: toml::Value = format!("v = {}", raw.trim())
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.trim().to_string()));
    let mut cursor = root;
    for seg in &segments[..segments.len() - 1] {
        let table = cursor.as_table_mut().ok_or_else(|| {
            FdinError::Config(format!("override path {path:?} crosses a non-table value"))
        })?;
        cursor = table
            .entry(seg.to_string())
            .or_insert_with(|| toml::Value::Table(toml::map::Map::new()));
    }
    let table = cursor.as_table_mut().ok_or_else(|| {
        FdinError::Config(format!("override path {path:?} crosses a non-table value"))
    })?;
    table.insert(segments.last().unwrap().to_string(), parsed);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn defaults_are_valid_and_stable() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.train.learning_rate, 1e-4);
        assert_eq!(cfg.train.lr_halve_epoch, 10);
        assert_eq!(cfg.train.epochs, 20);
        let d1 = cfg.digest();
        let d2 = RunConfig::default().digest();
        assert_eq!(d1, d2);
        assert_eq!(d1.len(), 16);
    }

    #[test]
    fn lr_schedule_is_a_single_halving() {
        let cfg = TrainConfig::default();
        for e in 1..=10 {
            assert_eq!(cfg.lr_at_epoch(e), 1e-4);
        }
        for e in 11..=20 {
            assert_eq!(cfg.lr_at_epoch(e), 5e-5);
        }
    }

    #[test]
    fn loads_toml_with_overrides() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(
            &path,
            "[train]\nlearning_rate = 2e-4\n[model]\nresolution = [32, 32]\nchannels = [4, 8]\n",
        )
        .unwrap();
        let cfg = RunConfig::load(
            Some(&path),
            &[
                "train.batch_size=2".to_string(),
                "synth.method=\"temporal_copy\"".to_string(),
                "data.manifest=\"/tmp/m.tsv\"".to_string(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.train.learning_rate, 2e-4);
        assert_eq!(cfg.train.batch_size, 2);
        assert_eq!(cfg.model.resolution, (32, 32));
        assert_eq!(cfg.synth.method, FillMethod::TemporalCopy);
        assert_eq!(cfg.data.manifest.as_deref(), Some(Path::new("/tmp/m.tsv")));
        // digest changes with content
        assert_ne!(cfg.digest(), RunConfig::default().digest());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "[train]\nlerning_rate = 2e-4\n").unwrap();
        let err = RunConfig::load(Some(&path), &[]).unwrap_err();
        assert!(err.to_string().contains("lerning_rate"), "{err}");
        let err = RunConfig::load(None, &["train.nope=1".to_string()]).unwrap_err();
        assert!(err.is_config());
    }

    #[test]
    fn invalid_values_fail_validation() {
        let mut cfg = RunConfig::default();
        cfg.train.lr_halve_epoch = 30;
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::default();
        cfg.eval.qf_list = vec![0];
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::default();
        cfg.eval.threshold = 1.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn string_overrides_fall_back_gracefully() {
        let cfg = RunConfig::load(None, &["synth.method=blur_fill".to_string()]);
        // bare string (unquoted) still parses via the string fallback
        assert!(cfg.is_ok());
        assert_eq!(cfg.unwrap().synth.method, FillMethod::BlurFill);
    }
}
