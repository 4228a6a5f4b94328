use ndarray::{Array2, Array3};

use crate::{Result, TrainError};

/// Pixel confusion counts; rows are ground truth, columns predictions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub num_classes: usize,
    pub counts: Array2<u64>,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Self {
        Self {
            num_classes,
            counts: Array2::zeros((num_classes, num_classes)),
        }
    }

    /// Accumulate one image. Pixels whose ground truth is in `ignore_ids`
    /// do not count.
    pub fn update(
        &mut self,
        pred: &Array2<usize>,
        truth: &Array2<usize>,
        ignore_ids: &[usize],
    ) -> Result<()> {
        if pred.dim() != truth.dim() {
            return Err(TrainError::Shape(format!(
                "prediction {:?} vs label {:?}",
                pred.dim(),
                truth.dim()
            )));
        }
        for (&p, &t) in pred.iter().zip(truth.iter()) {
            if ignore_ids.contains(&t) {
                continue;
            }
            if p >= self.num_classes || t >= self.num_classes {
                return Err(TrainError::Shape(format!(
                    "class id out of range: pred {p}, truth {t}, {} classes",
                    self.num_classes
                )));
            }
            self.counts[[t, p]] += 1;
        }
        Ok(())
    }

    pub fn update_batch(
        &mut self,
        pred: &Array3<usize>,
        truth: &Array3<usize>,
        ignore_ids: &[usize],
    ) -> Result<()> {
        if pred.dim() != truth.dim() {
            return Err(TrainError::Shape(format!(
                "prediction {:?} vs label {:?}",
                pred.dim(),
                truth.dim()
            )));
        }
        for (p, t) in pred.outer_iter().zip(truth.outer_iter()) {
            self.update(&p.to_owned(), &t.to_owned(), ignore_ids)?;
        }
        Ok(())
    }

    /// Elementwise sum; sharded evaluation merges to the same totals as a
    /// single pass.
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if self.num_classes != other.num_classes {
            return Err(TrainError::Shape(format!(
                "merge of {} vs {} classes",
                self.num_classes, other.num_classes
            )));
        }
        self.counts += &other.counts;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassMetrics {
    pub iou: f64,
    pub precision: f64,
    pub recall: f64,
    /// False when the class appears in neither truth nor prediction, in
    /// which case the ratios above are meaningless and hold 0.
    pub defined: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub per_class: Vec<ClassMetrics>,
    /// Mean IoU over defined, non-excluded classes.
    pub mean_iou: f64,
    pub pixel_accuracy: f64,
}

/// Ratios from raw confusion counts. `exclude` lists class ids left out of
/// the mean (for example a background class).
pub fn compute_metrics(cm: &ConfusionMatrix, exclude: &[usize]) -> Metrics {
    let k = cm.num_classes;
    let mut per_class = Vec::with_capacity(k);
    let mut iou_sum = 0.0;
    let mut iou_n = 0usize;
    let mut diag = 0u64;
    let mut total = 0u64;
    for c in 0..k {
        let tp = cm.counts[[c, c]];
        let truth_total: u64 = (0..k).map(|j| cm.counts[[c, j]]).sum();
        let pred_total: u64 = (0..k).map(|i| cm.counts[[i, c]]).sum();
        let union = truth_total + pred_total - tp;
        let defined = union > 0;
        let m = ClassMetrics {
            iou: if defined { tp as f64 / union as f64 } else { 0.0 },
            precision: if pred_total > 0 {
                tp as f64 / pred_total as f64
            } else {
                0.0
            },
            recall: if truth_total > 0 {
                tp as f64 / truth_total as f64
            } else {
                0.0
            },
            defined,
        };
        if defined && !exclude.contains(&c) {
            iou_sum += m.iou;
            iou_n += 1;
        }
        diag += tp;
        per_class.push(m);
    }
    for row in cm.counts.iter() {
        total += row;
    }
    Metrics {
        per_class,
        mean_iou: if iou_n > 0 { iou_sum / iou_n as f64 } else { 0.0 },
        pixel_accuracy: if total > 0 { diag as f64 / total as f64 } else { 0.0 },
    }
}
