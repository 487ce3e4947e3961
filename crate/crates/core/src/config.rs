//! Run configuration. Resolution order: command-line flag, then config file,
//! then the defaults below.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::AdasynParams;
use crate::features::{FeatureSchema, Label};
use crate::model::{HyperParams, ModelKind};
use crate::{Error, Result};

/// Names the config file used when `--config` is absent.
pub const CONFIG_ENV: &str = "TLSXAI_CONFIG";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OversampleConfig {
    pub enabled: bool,
    pub k_neighbors: usize,
    pub beta: f64,
    pub target_class: Option<Label>,
    pub target_fraction: Option<f64>,
}

impl Default for OversampleConfig {
    fn default() -> Self {
        OversampleConfig {
            enabled: false,
            k_neighbors: 5,
            beta: 1.0,
            target_class: None,
            target_fraction: None,
        }
    }
}

impl OversampleConfig {
    pub fn params(&self, schema: &FeatureSchema) -> Option<AdasynParams> {
        self.enabled.then(|| AdasynParams {
            k_neighbors: self.k_neighbors,
            beta: self.beta,
            target_class: self.target_class,
            target_fraction: self.target_fraction,
            binary_mask: schema.binary_mask(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub schema_path: Option<PathBuf>,
    pub window_seconds: u32,
    pub bin_width: f64,
    pub n_states: usize,
    pub per_direction_markov: bool,
    pub model: ModelKind,
    pub rf: HyperParams,
    pub xgb: HyperParams,
    pub extra: HyperParams,
    pub oversample: OversampleConfig,
    pub cv_folds: usize,
    pub test_fraction: f64,
    pub seed: u64,
    pub top_k: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            schema_path: None,
            window_seconds: crate::flow::DEFAULT_WINDOW_SECONDS,
            bin_width: crate::features::DEFAULT_BIN_WIDTH,
            n_states: crate::features::DEFAULT_N_STATES,
            per_direction_markov: false,
            model: ModelKind::Boosted,
            rf: HyperParams::random_forest(),
            xgb: HyperParams::boosted(),
            extra: HyperParams::extra_trees(),
            oversample: OversampleConfig::default(),
            cv_folds: 10,
            test_fraction: 0.2,
            seed: 42,
            top_k: 10,
        }
    }
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let c: PipelineConfig = serde_json::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn params(&self, kind: ModelKind) -> &HyperParams {
        match kind {
            ModelKind::Forest => &self.rf,
            ModelKind::Boosted => &self.xgb,
            ModelKind::Extra => &self.extra,
        }
    }

    pub fn params_mut(&mut self, kind: ModelKind) -> &mut HyperParams {
        match kind {
            ModelKind::Forest => &mut self.rf,
            ModelKind::Boosted => &mut self.xgb,
            ModelKind::Extra => &mut self.extra,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.window_seconds == 0 {
            return bad("window_seconds must be positive");
        }
        if !(self.bin_width > 0.0) || self.n_states == 0 {
            return bad("bin_width and n_states must be positive");
        }
        if self.cv_folds < 2 {
            return bad("cv_folds must be at least 2");
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return bad("test_fraction must lie in (0, 1)");
        }
        for p in [&self.rf, &self.xgb, &self.extra] {
            p.validate()?;
        }
        Ok(())
    }

    /// The schema file (or the default schema) with this config's
    /// extraction parameters applied.
    pub fn schema(&self) -> Result<FeatureSchema> {
        let mut schema = match &self.schema_path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p.display().to_string(), e))?;
                FeatureSchema::from_json(&text)?
            }
            None => FeatureSchema::default(),
        };
        let reshaped = schema.n_states != self.n_states || schema.per_direction_markov != self.per_direction_markov;
        schema.window_seconds = self.window_seconds;
        schema.bin_width = self.bin_width;
        schema.n_states = self.n_states;
        schema.per_direction_markov = self.per_direction_markov;
        if reshaped {
            schema.features = schema.derive_features();
        }
        Ok(schema.validate()?)
    }
}
