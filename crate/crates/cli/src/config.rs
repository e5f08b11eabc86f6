//! Pipeline configuration assembled from defaults, a config file and flags.

use std::fs;
use std::path::Path;

use clap::Args;
use refocus_core::PipelineConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// A partial [`PipelineConfig`]: every field is optional and only present
/// fields override. Config files deserialize into this with the same field
/// names as the full config.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize, Args)]
#[serde(deny_unknown_fields)]
pub struct ConfigPatch {
    #[arg(long = "n-drafts")]
    pub n_drafts: Option<usize>,
    #[arg(long = "k-keep")]
    pub k_keep: Option<usize>,
    #[arg(long = "m-variants")]
    pub m_variants: Option<usize>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub rounds: Option<u32>,
    #[arg(long = "alpha-refine")]
    pub alpha_refine: Option<f64>,
    #[arg(long = "gen-steps")]
    pub gen_steps: Option<u32>,
    #[arg(long = "gen-guidance")]
    pub gen_guidance: Option<f64>,
    #[arg(long = "refine-guidance")]
    pub refine_guidance: Option<f64>,
    /// Base seed; sampled from system entropy when unset everywhere.
    #[arg(long = "seed")]
    pub base_seed: Option<u64>,
    #[arg(long = "retry-budget")]
    pub retry_budget: Option<u32>,
    #[arg(long = "incumbent-retention")]
    pub incumbent_retention: Option<bool>,
    #[arg(long)]
    pub width: Option<u32>,
    #[arg(long)]
    pub height: Option<u32>,
    #[arg(long)]
    pub parallelism: Option<usize>,
}

macro_rules! apply_fields {
    ($target:expr, $patch:expr, $($field:ident),+ $(,)?) => {
        $(if let Some(v) = $patch.$field.clone() {
            $target.$field = v;
        })+
    };
}

impl ConfigPatch {
    pub fn apply_to(&self, config: &mut PipelineConfig) {
        apply_fields!(
            config,
            self,
            n_drafts,
            k_keep,
            m_variants,
            lambda,
            delta,
            rounds,
            alpha_refine,
            gen_steps,
            gen_guidance,
            refine_guidance,
            base_seed,
            retry_budget,
            incumbent_retention,
            width,
            height,
            parallelism,
        );
    }

    /// Read a `.toml` or `.json` config file.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config file {}: {e}", path.display())))?;
        let ext = path.extension().and_then(|e| e.to_str()).unwrap_or_default();
        match ext.to_ascii_lowercase().as_str() {
            "toml" => toml::from_str(&text).map_err(|e| e.to_string()),
            "json" => serde_json::from_str(&text).map_err(|e| e.to_string()),
            _ => Err("expected a .toml or .json extension".to_string()),
        }
        .map_err(|e| CliError::Config(format!("config file {}: {e}", path.display())))
    }
}

/// Flags over file over defaults. The seed stays `None` if neither layer
/// sets it, so the caller can sample and record one.
pub fn resolve(file: Option<&ConfigPatch>, flags: &ConfigPatch) -> (PipelineConfig, bool) {
    let mut config = PipelineConfig::default();
    if let Some(file) = file {
        file.apply_to(&mut config);
    }
    flags.apply_to(&mut config);
    let seeded = flags.base_seed.is_some() || file.is_some_and(|f| f.base_seed.is_some());
    (config, seeded)
}
