//! Experiment matrices over loss flags and snippet counts.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::pipeline::run_experiment;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::evaluation::EvalReport;
use crate::objectives::LossFlags;

/// One experiment row. Unset fields keep the base config's value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationCell {
    pub name: String,
    #[serde(default)]
    pub flags: Option<LossFlags>,
    #[serde(default)]
    pub snippets: Option<usize>,
    /// Extra `key=value` overrides.
    #[serde(default)]
    pub overrides: Vec<String>,
}

impl AblationCell {
    fn flags(name: &str, flags: LossFlags) -> Self {
        AblationCell { name: name.into(), flags: Some(flags), snippets: None, overrides: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationMatrix {
    pub cells: Vec<AblationCell>,
}

pub const PRESETS: [&str; 4] = ["branches", "branch-stack", "auxiliary", "snippets"];

impl AblationMatrix {
    /// Built-in matrices: `branches` and `branch-stack` vary the classification branches,
    /// `auxiliary` the auxiliary losses and `snippets` the snippet count.
    pub fn preset(name: &str) -> Option<Self> {
        let aux = |guide, feat, sparse| LossFlags { guide, feat, sparse, ..LossFlags::all() };
        let cells = match name {
            "branches" => vec![
                AblationCell::flags("Exp1", LossFlags::cls(true, false, false, false)),
                AblationCell::flags("Exp2", LossFlags::cls(true, false, true, false)),
                AblationCell::flags("Exp3", LossFlags::cls(true, true, false, false)),
                AblationCell::flags("Exp4", LossFlags::cls(true, true, true, false)),
                AblationCell::flags("Exp5", LossFlags::all()),
            ],
            "branch-stack" => vec![
                AblationCell::flags("Exp1", LossFlags::cls(true, false, false, false)),
                AblationCell::flags("Exp2", LossFlags::cls(true, true, false, false)),
                AblationCell::flags("Exp3", LossFlags::cls(true, true, true, false)),
                AblationCell::flags("Exp4", LossFlags::all()),
            ],
            "auxiliary" => vec![
                AblationCell::flags("Exp1", aux(false, false, false)),
                AblationCell::flags("Exp2", aux(true, false, false)),
                AblationCell::flags("Exp3", aux(false, true, false)),
                AblationCell::flags("Exp4", aux(false, false, true)),
                AblationCell::flags("Exp5", aux(true, true, false)),
                AblationCell::flags("Exp6", aux(true, true, true)),
            ],
            "snippets" => [250, 500, 750, 900, 1000]
                .into_iter()
                .map(|t| AblationCell {
                    name: format!("T={t}"),
                    flags: None,
                    snippets: Some(t),
                    overrides: Vec::new(),
                })
                .collect(),
            _ => return None,
        };
        Some(AblationMatrix { cells })
    }

    /// A preset name or a path to a matrix JSON document.
    pub fn resolve(spec: &str) -> Result<Self> {
        if let Some(m) = Self::preset(spec) {
            return Ok(m);
        }
        let path = Path::new(spec);
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse { path: path.to_path_buf(), message: e.to_string() })
    }

    /// The base config with one cell's changes applied.
    pub fn cell_config(base: &TrainConfig, cell: &AblationCell) -> Result<TrainConfig> {
        let value = serde_json::to_value(base).expect("config serializes");
        let mut config = TrainConfig::from_value(value, &cell.overrides)?;
        if let Some(flags) = cell.flags {
            config.flags = flags;
        }
        if let Some(t) = cell.snippets {
            config.hyper.snippets = t;
        }
        Ok(config)
    }
}

/// Trains and evaluates every cell with the base seed.
pub fn run_ablation_matrix(
    base: &TrainConfig,
    dataset: &Dataset,
    matrix: &AblationMatrix,
) -> Result<Vec<(String, EvalReport)>> {
    matrix
        .cells
        .iter()
        .map(|cell| {
            let config = AblationMatrix::cell_config(base, cell)?;
            Ok((cell.name.clone(), run_experiment(&config, dataset)?.report))
        })
        .collect()
}
