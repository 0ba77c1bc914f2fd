//! Optional TOML run configuration. Every key mirrors a command-line flag;
//! flags win when both are given.

use std::path::{Path, PathBuf};

use anyhow::Context;
use nbr::tuning::SearchSpace;
use serde::Deserialize;

use crate::Usage;

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub out_dir: Option<PathBuf>,
    pub ingest: IngestConfig,
    pub synth: SynthSection,
    pub model: ModelConfig,
    pub evaluate: EvaluateConfig,
    pub tune: TuneConfig,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestConfig {
    pub input: Option<PathBuf>,
    pub dataset: Option<String>,
    pub user_col: Option<String>,
    pub basket_col: Option<String>,
    pub item_col: Option<String>,
    pub timestamp_col: Option<String>,
    pub order_col: Option<String>,
    pub min_baskets: Option<usize>,
    pub min_item_users: Option<usize>,
    pub min_basket_size: Option<usize>,
    pub until_stable: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub users: Option<usize>,
    pub items: Option<usize>,
    pub min_baskets: Option<usize>,
    pub max_baskets: Option<usize>,
    pub min_size: Option<usize>,
    pub max_size: Option<usize>,
    pub skew: Option<f64>,
    pub repeat_ratio: Option<f64>,
    pub pool_size: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub name: Option<String>,
    pub preset: Option<String>,
    pub k: Option<usize>,
    pub r_b: Option<f64>,
    pub r_g: Option<f64>,
    pub m: Option<usize>,
    pub alpha: Option<f64>,
    pub k_items: Option<usize>,
    pub no_padding: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateConfig {
    pub ks: Option<Vec<usize>>,
    pub mrr_k: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TuneConfig {
    pub trials: Option<usize>,
    pub grid: Option<bool>,
    pub space: Option<SearchSpace>,
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        if !path.exists() {
            return Err(Usage(format!("config file {} does not exist", path.display())).into());
        }
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).map_err(|e| Usage(format!("invalid config {}: {e}", path.display())).into())
    }
}
