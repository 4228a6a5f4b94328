use std::path::Path;

use serde::{Deserialize, Serialize};

use eaf_model::KernelParity;

use crate::Result;

/// Optional overrides read from `--config <file.json>`. Unknown keys are
/// rejected so typos fail loudly instead of silently using defaults.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub lr_initial: Option<f64>,
    pub lr_floor_fraction: Option<f64>,
    pub weight_decay: Option<f64>,
    pub widths: Option<[usize; 5]>,
    pub blocks_per_stage: Option<usize>,
    pub decoder_width: Option<usize>,
    pub spp_levels: Option<Vec<usize>>,
    pub kernel_parity: Option<KernelParity>,
    pub synth_height: Option<usize>,
    pub synth_width: Option<usize>,
    pub synth_train_count: Option<usize>,
    pub synth_val_count: Option<usize>,
    pub bins: Option<usize>,
}

/// The fully resolved settings a command actually runs with; echoed as JSON
/// so a run can be reproduced from its log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EffectiveConfig {
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_initial: f64,
    pub lr_floor_fraction: f64,
    pub weight_decay: f64,
    pub widths: [usize; 5],
    pub blocks_per_stage: usize,
    pub decoder_width: usize,
    pub spp_levels: Vec<usize>,
    pub kernel_parity: KernelParity,
    pub synth_height: usize,
    pub synth_width: usize,
    pub synth_train_count: usize,
    pub synth_val_count: usize,
    pub bins: usize,
}

impl Default for EffectiveConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            epochs: 3,
            batch_size: 8,
            lr_initial: 4e-4,
            lr_floor_fraction: 2.5e-3,
            weight_decay: 1e-4,
            widths: [8, 12, 16, 20, 24],
            blocks_per_stage: 1,
            decoder_width: 12,
            spp_levels: vec![1, 2],
            kernel_parity: KernelParity::Paper,
            synth_height: 64,
            synth_width: 64,
            synth_train_count: 200,
            synth_val_count: 50,
            bins: 100,
        }
    }
}

impl EffectiveConfig {
    /// Defaults, overlaid by the config file, overlaid by command-line flags.
    pub fn resolve(file: Option<&Path>, seed_flag: Option<u64>) -> Result<Self> {
        let mut cfg = Self::default();
        if let Some(path) = file {
            let text = std::fs::read_to_string(path)?;
            let f: FileConfig = serde_json::from_str(&text)?;
            cfg.apply(&f);
        }
        if let Some(seed) = seed_flag {
            cfg.seed = seed;
        }
        Ok(cfg)
    }

    fn apply(&mut self, f: &FileConfig) {
        macro_rules! take {
            ($($field:ident),+) => {
                $(if let Some(v) = f.$field.clone() { self.$field = v; })+
            };
        }
        take!(
            seed,
            epochs,
            batch_size,
            lr_initial,
            lr_floor_fraction,
            weight_decay,
            widths,
            blocks_per_stage,
            decoder_width,
            spp_levels,
            kernel_parity,
            synth_height,
            synth_width,
            synth_train_count,
            synth_val_count,
            bins
        );
    }
}
