//! JSON run configuration with dataset profiles and `key=value` overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::data::ResampleMode;
use crate::error::{ensure, Error, Result};
use crate::network::{Architecture, Padding};
use crate::objectives::LossFlags;
use crate::types::HyperParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    #[default]
    Thumos,
    Activitynet,
}

/// Head widths and regularization not fixed by the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub embed_kernel: usize,
    pub cls_kernel: usize,
    /// Hidden width of the classification head; `None` means the input width.
    pub hidden_dim: Option<usize>,
    pub attention_kernel: usize,
    pub dropout: f64,
    pub padding: Padding,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let a = Architecture::new(1, 1);
        ModelConfig {
            embed_kernel: a.embed_kernel,
            cls_kernel: a.cls_kernel,
            hidden_dim: None,
            attention_kernel: a.attention_kernel,
            dropout: a.dropout,
            padding: a.padding,
        }
    }
}

impl ModelConfig {
    pub fn architecture(&self, input_dim: usize, num_classes: usize) -> Architecture {
        Architecture {
            input_dim,
            num_classes,
            embed_kernel: self.embed_kernel,
            cls_kernel: self.cls_kernel,
            hidden_dim: self.hidden_dim.unwrap_or(input_dim),
            attention_kernel: self.attention_kernel,
            dropout: self.dropout,
            padding: self.padding,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub profile: Profile,
    pub feature_dir: PathBuf,
    pub annotations: PathBuf,
    /// Subset tag of training videos; `None` trains on everything.
    pub train_subset: Option<String>,
    /// Subset tag of evaluation videos; `None` evaluates on everything.
    pub eval_subset: Option<String>,
    /// `num_classes` is taken from the annotation file at run time.
    pub hyper: HyperParams,
    pub model: ModelConfig,
    pub flags: LossFlags,
    pub resample: ResampleMode,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Final checkpoint path; periodic ones get an `.epochN` suffix.
    pub checkpoint: Option<PathBuf>,
    /// Save every N epochs (0 disables periodic checkpoints).
    pub checkpoint_every: usize,
    /// Line-delimited JSON training log.
    pub log: Option<PathBuf>,
    pub detections: Option<PathBuf>,
    pub report: Option<PathBuf>,
}

impl TrainConfig {
    pub fn profile(profile: Profile) -> Self {
        let (hyper, batch_size, weight_decay, epochs) = match profile {
            Profile::Thumos => (HyperParams::thumos(0), 16, 5e-4, 200),
            Profile::Activitynet => (HyperParams::activitynet(0), 64, 1e-3, 100),
        };
        TrainConfig {
            profile,
            feature_dir: PathBuf::from("features"),
            annotations: PathBuf::from("annotations.json"),
            train_subset: Some("train".into()),
            eval_subset: Some("test".into()),
            hyper,
            model: ModelConfig::default(),
            flags: LossFlags::all(),
            resample: ResampleMode::Linear,
            batch_size,
            learning_rate: 1e-4,
            weight_decay,
            epochs,
            seed: 0,
            checkpoint: None,
            checkpoint_every: 0,
            log: None,
            detections: None,
            report: None,
        }
    }

    /// Layers `user` (a possibly partial config document) over its profile defaults,
    /// then applies `key=value` overrides with dotted keys.
    pub fn from_value(user: Value, overrides: &[String]) -> Result<Self> {
        let profile: Profile = match user.get("profile") {
            Some(p) => serde_json::from_value(p.clone()).map_err(|e| Error::Validation(format!("profile: {e}")))?,
            None => Profile::default(),
        };
        let mut merged = serde_json::to_value(Self::profile(profile)).expect("config serializes");
        merge(&mut merged, user);
        for ov in overrides {
            apply_override(&mut merged, ov)?;
        }
        let cfg: TrainConfig =
            serde_json::from_value(merged).map_err(|e| Error::Validation(format!("invalid config: {e}")))?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let value: Value = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let mut cfg = Self::from_value(value, overrides)?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.rebase(base);
        Ok(cfg)
    }

    /// Makes relative paths relative to `base`.
    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.feature_dir);
        fix(&mut self.annotations);
        for p in [&mut self.checkpoint, &mut self.log, &mut self.detections, &mut self.report]
            .into_iter()
            .flatten()
        {
            fix(p);
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.batch_size >= 1, Validation, "batch size must be >= 1");
        ensure!(self.learning_rate > 0.0, Validation, "learning rate must be positive");
        ensure!(self.weight_decay >= 0.0, Validation, "weight decay must be non-negative");
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }
}

fn merge(base: &mut Value, user: Value) {
    match (base, user) {
        (Value::Object(b), Value::Object(u)) => {
            for (k, v) in u {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// `a.b.c=value`; the value is parsed as JSON, falling back to a plain string.
pub fn apply_override(config: &mut Value, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Validation(format!("override `{spec}` is not key=value")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = config;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| Error::Validation(format!("override `{key}`: `{part}` is not inside an object")))?;
        if i + 1 == parts.len() {
            if !obj.contains_key(*part) {
                return Err(Error::Validation(format!("override `{key}`: unknown key `{part}`")));
            }
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        node = obj
            .get_mut(*part)
            .ok_or_else(|| Error::Validation(format!("override `{key}`: unknown key `{part}`")))?;
    }
    unreachable!("split always yields at least one part")
}
