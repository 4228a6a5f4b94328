use ndarray::{Array2, Array3};
use thiserror::Error;

/// Class ids for the street-scene label set: 8 named classes plus Background.
pub const CLASS_NAMES: [&str; 9] = [
    "Background",
    "Building",
    "Glass",
    "Car",
    "Road",
    "Vegetation",
    "Sky",
    "Pedestrian",
    "Bicycle",
];

pub const NUM_CLASSES: usize = CLASS_NAMES.len();

/// Fixed render palette so segmentation outputs are comparable across runs.
pub const CLASS_PALETTE: [[u8; 3]; 9] = [
    [0, 0, 0],       // Background
    [70, 70, 70],    // Building
    [0, 170, 255],   // Glass
    [0, 0, 142],     // Car
    [128, 64, 128],  // Road
    [107, 142, 35],  // Vegetation
    [70, 130, 180],  // Sky
    [220, 20, 60],   // Pedestrian
    [119, 11, 32],   // Bicycle
];

#[derive(Debug, Error)]
pub enum DataError {
    #[error("missing file: {0}")]
    MissingFile(String),
    #[error("failed to read {path}: {source}")]
    ImageRead {
        path: String,
        source: image::ImageError,
    },
    #[error("failed to write {path}: {source}")]
    ImageWrite {
        path: String,
        source: image::ImageError,
    },
    #[error("dimension mismatch in {0}")]
    DimensionMismatch(String),
    #[error("label id {id} out of range for {num_classes} classes in {path}")]
    LabelOutOfRange {
        id: usize,
        num_classes: usize,
        path: String,
    },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("PDER format error: {0}")]
    Format(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("empty sample set")]
    EmptyInput,
    #[error(transparent)]
    Polar(#[from] eaf_polarimetry::PolarError),
}

pub type Result<T> = std::result::Result<T, DataError>;

/// What a single modality plane holds; flip semantics dispatch on this.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModalityKind {
    Aolp,
    Dolp,
    Disparity,
}

impl ModalityKind {
    pub fn label(&self) -> &'static str {
        match self {
            ModalityKind::Aolp => "aolp",
            ModalityKind::Dolp => "dolp",
            ModalityKind::Disparity => "disparity",
        }
    }
}

/// Which modality stack a sample should carry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ModalityMode {
    #[default]
    Aolp,
    Dolp,
    /// AoLP then DoLP, concatenated along the channel axis.
    AolpDolp,
    Disparity,
    /// RGB only; the modality stack is empty.
    None,
}

impl ModalityMode {
    pub fn kinds(&self) -> Vec<ModalityKind> {
        match self {
            ModalityMode::Aolp => vec![ModalityKind::Aolp],
            ModalityMode::Dolp => vec![ModalityKind::Dolp],
            ModalityMode::AolpDolp => vec![ModalityKind::Aolp, ModalityKind::Dolp],
            ModalityMode::Disparity => vec![ModalityKind::Disparity],
            ModalityMode::None => vec![],
        }
    }

    pub fn plane_count(&self) -> usize {
        self.kinds().len()
    }
}

/// One tagged single-channel plane, values normalized to [0, 1].
#[derive(Debug, Clone)]
pub struct ModalityPlane {
    pub kind: ModalityKind,
    pub plane: Array2<f64>,
}

/// A training/eval unit: RGB, tagged modality planes and a class-id label
/// map, all sharing height and width.
#[derive(Debug, Clone)]
pub struct Sample {
    pub id: String,
    pub rgb: Array3<f64>,
    pub modality: Vec<ModalityPlane>,
    pub label: Array2<usize>,
}

impl Sample {
    pub fn height(&self) -> usize {
        self.rgb.dim().0
    }

    pub fn width(&self) -> usize {
        self.rgb.dim().1
    }

    pub fn validate(&self, num_classes: usize) -> Result<()> {
        let (h, w, c) = self.rgb.dim();
        if c != 3 {
            return Err(DataError::DimensionMismatch(format!(
                "sample {}: rgb has {c} channels",
                self.id
            )));
        }
        if self.label.dim() != (h, w) {
            return Err(DataError::DimensionMismatch(format!(
                "sample {}: label {:?} vs rgb {:?}",
                self.id,
                self.label.dim(),
                (h, w)
            )));
        }
        for p in &self.modality {
            if p.plane.dim() != (h, w) {
                return Err(DataError::DimensionMismatch(format!(
                    "sample {}: {} plane {:?} vs rgb {:?}",
                    self.id,
                    p.kind.label(),
                    p.plane.dim(),
                    (h, w)
                )));
            }
        }
        if let Some(&id) = self.label.iter().find(|&&v| v >= num_classes) {
            return Err(DataError::LabelOutOfRange {
                id,
                num_classes,
                path: self.id.clone(),
            });
        }
        Ok(())
    }
}

/// Scale / crop / horizontal-flip recipe.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentationConfig {
    pub scale_min: f64,
    pub scale_max: f64,
    pub crop: usize,
    pub hflip_prob: f64,
    pub seed: u64,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        Self {
            scale_min: 0.75,
            scale_max: 1.25,
            crop: 768,
            hflip_prob: 0.5,
            seed: 0,
        }
    }
}

impl AugmentationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.scale_min > 0.0 && self.scale_min <= self.scale_max) {
            return Err(DataError::InvalidConfig(format!(
                "scale range [{}, {}]",
                self.scale_min, self.scale_max
            )));
        }
        if self.crop == 0 {
            return Err(DataError::InvalidConfig("crop must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.hflip_prob) {
            return Err(DataError::InvalidConfig(format!(
                "hflip_prob {}",
                self.hflip_prob
            )));
        }
        Ok(())
    }
}
