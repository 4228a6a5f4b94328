use serde::{Deserialize, Serialize};

use crate::{ModelError, Result};

/// What a branch consumes; training wires sample planes accordingly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BranchKind {
    Rgb,
    Aolp,
    Dolp,
    AolpDolp,
    Disparity,
}

impl BranchKind {
    pub fn channels(&self) -> usize {
        match self {
            BranchKind::Rgb => 3,
            BranchKind::AolpDolp => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BranchSpec {
    pub kind: BranchKind,
    pub in_channels: usize,
}

impl BranchSpec {
    pub fn of(kind: BranchKind) -> Self {
        Self {
            kind,
            in_channels: kind.channels(),
        }
    }
}

/// Parity rule for the adaptive channel-attention kernel size.
///
/// `Paper` rounds odd t up to the next even value; `Odd` is the opposite
/// convention common in efficient-channel-attention implementations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelParity {
    #[default]
    Paper,
    Odd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EafnetConfig {
    /// Input branches. A single entry degenerates to the plain
    /// encoder-decoder baseline with no attention or fusion.
    pub branches: Vec<BranchSpec>,
    /// Widths of stem + four stages.
    pub widths: [usize; 5],
    pub blocks_per_stage: usize,
    pub num_classes: usize,
    /// Pyramid pooling grids; grids above the feature size are skipped.
    pub spp_levels: Vec<usize>,
    pub decoder_width: usize,
    #[serde(default)]
    pub kernel_parity: KernelParity,
}

impl Default for EafnetConfig {
    fn default() -> Self {
        Self {
            branches: vec![BranchSpec::of(BranchKind::Rgb), BranchSpec::of(BranchKind::Aolp)],
            widths: [16, 24, 32, 48, 64],
            blocks_per_stage: 2,
            num_classes: 9,
            spp_levels: vec![1, 2, 4, 8],
            decoder_width: 32,
            kernel_parity: KernelParity::Paper,
        }
    }
}

impl EafnetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.branches.is_empty() {
            return Err(ModelError::InvalidConfig("at least one branch required".into()));
        }
        if self.widths.iter().any(|&w| w == 0) || self.decoder_width == 0 {
            return Err(ModelError::InvalidConfig("widths must be positive".into()));
        }
        if self.num_classes < 2 {
            return Err(ModelError::InvalidConfig(format!(
                "num_classes {} < 2",
                self.num_classes
            )));
        }
        if self.blocks_per_stage == 0 {
            return Err(ModelError::InvalidConfig("blocks_per_stage must be positive".into()));
        }
        if self.branches.iter().any(|b| b.in_channels == 0) {
            return Err(ModelError::InvalidConfig("branch channels must be positive".into()));
        }
        if self.spp_levels.is_empty() || self.spp_levels.iter().any(|&g| g == 0) {
            return Err(ModelError::InvalidConfig("spp levels must be positive".into()));
        }
        Ok(())
    }

    pub fn is_multibranch(&self) -> bool {
        self.branches.len() >= 2
    }
}
