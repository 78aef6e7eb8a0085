//! Pipeline configuration: one TOML file drives every stage. Unknown keys
//! are rejected so typos surface immediately; every field has a default
//! matching the benchmark system, so an empty file is a valid config.

use fragsurr_core::gm::{GmmPriors, SynthSettings};
use fragsurr_core::structure::{DamageThresholds, ShearModelConfig};
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{PipelineError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SequenceConfig {
    pub events_per_sequence: usize,
    pub sequences_per_dataset: usize,
    pub n_datasets: usize,
    /// Write one CSV per motion under gm/motions/. Disable for large runs;
    /// the manifest still records every seed and parameter draw.
    pub persist_motions: bool,
}

impl Default for SequenceConfig {
    fn default() -> Self {
        SequenceConfig {
            events_per_sequence: 10,
            sequences_per_dataset: 1000,
            n_datasets: 1,
            persist_motions: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PcaConfig {
    pub components: usize,
    /// Retain by cumulative explained variance instead of a fixed count.
    pub auto_retention: bool,
    pub retention_target: f64,
}

impl Default for PcaConfig {
    fn default() -> Self {
        PcaConfig { components: 10, auto_retention: false, retention_target: 0.99 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PceConfig {
    pub max_degree: usize,
    pub q_norm: f64,
    pub max_interaction: usize,
    pub sp_k_grid: usize,
    pub bootstrap_replicates: usize,
    /// Training rows subsampled per initial damage state.
    pub doe_size: usize,
}

impl Default for PceConfig {
    fn default() -> Self {
        PceConfig {
            max_degree: 5,
            q_norm: 0.5,
            max_interaction: 2,
            sp_k_grid: 8,
            bootstrap_replicates: 500,
            doe_size: 250,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FragilityConfig {
    pub grid_cells: usize,
    pub window_cells: usize,
    pub min_window_count: usize,
    /// Monte Carlo draws fed to the surrogate per fragility curve.
    pub mcs_draws: usize,
    /// IM used for the reported state-dependent curves.
    pub im: String,
    pub band_percents: Vec<u8>,
}

impl Default for FragilityConfig {
    fn default() -> Self {
        FragilityConfig {
            grid_cells: 200,
            window_cells: 20,
            min_window_count: 10,
            mcs_draws: 20000,
            im: "PGA".into(),
            band_percents: vec![1, 10, 50, 90, 99],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ValidateConfig {
    /// Transitions compared between brute-force and surrogate medians
    /// (exceedance form).
    pub transitions: Vec<String>,
}

impl Default for ValidateConfig {
    fn default() -> Self {
        ValidateConfig { transitions: vec!["0-1".into(), "0-2".into(), "1-2".into()] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub master_seed: u64,
    pub gmm: GmmPriors,
    pub synth: SynthSettings,
    pub sequences: SequenceConfig,
    pub structure: ShearModelConfig,
    pub thresholds: DamageThresholds,
    pub pca: PcaConfig,
    pub pce: PceConfig,
    pub fragility: FragilityConfig,
    pub validate: ValidateConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            master_seed: 20260810,
            gmm: GmmPriors::default(),
            synth: SynthSettings::default(),
            sequences: SequenceConfig::default(),
            structure: ShearModelConfig::default(),
            thresholds: DamageThresholds::default(),
            pca: PcaConfig::default(),
            pce: PceConfig::default(),
            fragility: FragilityConfig::default(),
            validate: ValidateConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_file(path: &Path) -> Result<PipelineConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            PipelineError::Config(format!("cannot read config {}: {e}", path.display()))
        })?;
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<PipelineConfig> {
        let cfg: PipelineConfig = toml::from_str(text)
            .map_err(|e| PipelineError::Config(format!("config parse error: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.gmm.validate().map_err(PipelineError::from)?;
        self.synth.validate().map_err(PipelineError::from)?;
        self.thresholds.validate().map_err(PipelineError::from)?;
        let s = &self.sequences;
        if s.events_per_sequence == 0 || s.sequences_per_dataset == 0 || s.n_datasets == 0 {
            return Err(PipelineError::Config("sequence sizes must be positive".into()));
        }
        if self.pca.components == 0 {
            return Err(PipelineError::Config("pca.components must be >= 1".into()));
        }
        if self.pce.bootstrap_replicates < 2 {
            return Err(PipelineError::Config("pce.bootstrap_replicates must be >= 2".into()));
        }
        if self.fragility.grid_cells < 2 {
            return Err(PipelineError::Config("fragility.grid_cells must be >= 2".into()));
        }
        if fragsurr_core::im::im_index(&self.fragility.im).is_none() {
            return Err(PipelineError::Config(format!(
                "fragility.im '{}' is not a known IM name",
                self.fragility.im
            )));
        }
        for t in &self.validate.transitions {
            t.parse::<fragsurr_core::fragility::Transition>()
                .map_err(|e| PipelineError::Config(e.to_string()))?;
        }
        Ok(())
    }

    /// Motions needed per dataset.
    pub fn pool_size(&self) -> usize {
        self.sequences.events_per_sequence * self.sequences.sequences_per_dataset
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_the_default() {
        let cfg = PipelineConfig::from_toml("").unwrap();
        assert_eq!(cfg, PipelineConfig::default());
        assert_eq!(cfg.pool_size(), 10_000);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = PipelineConfig::from_toml("master_sead = 3").unwrap_err();
        assert!(err.to_string().contains("master_sead"));
        let err = PipelineConfig::from_toml("[pce]\nmax_degre = 3").unwrap_err();
        assert!(err.to_string().contains("max_degre"));
    }

    #[test]
    fn nested_overrides_apply() {
        let cfg = PipelineConfig::from_toml(
            r#"
master_seed = 7
[sequences]
sequences_per_dataset = 10
persist_motions = false
[structure]
storey_height = 2.0
[pce]
bootstrap_replicates = 25
"#,
        )
        .unwrap();
        assert_eq!(cfg.master_seed, 7);
        assert_eq!(cfg.sequences.sequences_per_dataset, 10);
        assert_eq!(cfg.structure.storey_height, 2.0);
        assert_eq!(cfg.pce.bootstrap_replicates, 25);
        // untouched sections keep defaults
        assert_eq!(cfg.pca, PcaConfig::default());
    }

    #[test]
    fn invalid_values_are_config_errors() {
        assert!(PipelineConfig::from_toml("[thresholds]\nds1 = 0.03\nds2 = 0.02").is_err());
        assert!(PipelineConfig::from_toml("[fragility]\nim = \"NOPE\"").is_err());
        assert!(PipelineConfig::from_toml("[validate]\ntransitions = [\"9-9\"]").is_err());
    }
}
