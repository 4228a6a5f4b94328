use eaf_autograd::{adam_step, AdamState, Element, Tape};
use eaf_data::{augment, per_sample_seed, AugmentationConfig, ModalityKind, Sample};
use eaf_model::{BranchKind, Eafnet};
use ndarray::{Array3, ArrayD, IxDyn};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::metrics::{compute_metrics, ConfusionMatrix, Metrics};
use crate::{Result, TrainError};

/// The input wiring of each experiment from the ablation table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentPreset {
    /// RGB only, no fusion.
    Baseline,
    /// RGB + angle-of-polarization branch.
    AolpEx,
    /// RGB + degree-of-polarization branch.
    DolpEx,
    /// RGB + stacked AoLP/DoLP branch.
    AdEx,
    /// RGB + separate AoLP and DoLP branches.
    ThreePathEx,
    /// RGB + disparity branch.
    Rgbd,
}

impl ExperimentPreset {
    pub fn branches(&self) -> Vec<BranchKind> {
        match self {
            ExperimentPreset::Baseline => vec![BranchKind::Rgb],
            ExperimentPreset::AolpEx => vec![BranchKind::Rgb, BranchKind::Aolp],
            ExperimentPreset::DolpEx => vec![BranchKind::Rgb, BranchKind::Dolp],
            ExperimentPreset::AdEx => vec![BranchKind::Rgb, BranchKind::AolpDolp],
            ExperimentPreset::ThreePathEx => {
                vec![BranchKind::Rgb, BranchKind::Aolp, BranchKind::Dolp]
            }
            ExperimentPreset::Rgbd => vec![BranchKind::Rgb, BranchKind::Disparity],
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ExperimentPreset::Baseline => "baseline",
            ExperimentPreset::AolpEx => "aolp-ex",
            ExperimentPreset::DolpEx => "dolp-ex",
            ExperimentPreset::AdEx => "ad-ex",
            ExperimentPreset::ThreePathEx => "3path-ex",
            ExperimentPreset::Rgbd => "rgbd",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_initial: f64,
    /// Final learning rate as a fraction of the initial one.
    pub lr_floor_fraction: f64,
    pub weight_decay: f64,
    pub seed: u64,
    /// Label ids excluded from the loss.
    pub ignore_ids: Vec<usize>,
    /// Class ids excluded from the mean IoU.
    pub exclude_from_miou: Vec<usize>,
    /// None disables augmentation (synthetic fixed-size data).
    pub augment_crop: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 8,
            batch_size: 4,
            lr_initial: 4e-4,
            lr_floor_fraction: 2.5e-3,
            weight_decay: 1e-4,
            seed: 0,
            ignore_ids: Vec::new(),
            exclude_from_miou: Vec::new(),
            augment_crop: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(TrainError::Config(
                "epochs and batch_size must be positive".into(),
            ));
        }
        if self.lr_initial <= 0.0 || !(0.0..=1.0).contains(&self.lr_floor_fraction) {
            return Err(TrainError::Config(format!(
                "bad learning-rate schedule: initial {}, floor fraction {}",
                self.lr_initial, self.lr_floor_fraction
            )));
        }
        if self.weight_decay < 0.0 {
            return Err(TrainError::Config("negative weight decay".into()));
        }
        Ok(())
    }
}

/// Stack sample fields into one NCHW tensor per model branch.
pub fn batch_inputs<E: Element>(
    samples: &[&Sample],
    branches: &[BranchKind],
) -> Result<Vec<ArrayD<E>>> {
    let n = samples.len();
    let (h, w) = (samples[0].height(), samples[0].width());
    for s in samples {
        if s.height() != h || s.width() != w {
            return Err(TrainError::Shape(format!(
                "sample {} is {}x{}, batch is {h}x{w}",
                s.id,
                s.height(),
                s.width()
            )));
        }
    }
    let plane = |s: &Sample, kind: ModalityKind| -> Result<ndarray::Array2<f64>> {
        s.modality
            .iter()
            .find(|p| p.kind == kind)
            .map(|p| p.plane.clone())
            .ok_or_else(|| {
                TrainError::Config(format!(
                    "sample {} carries no {} plane required by the branch layout",
                    s.id,
                    kind.label()
                ))
            })
    };
    branches
        .iter()
        .map(|branch| {
            let kinds: Vec<ModalityKind> = match branch {
                BranchKind::Rgb => vec![],
                BranchKind::Aolp => vec![ModalityKind::Aolp],
                BranchKind::Dolp => vec![ModalityKind::Dolp],
                BranchKind::AolpDolp => vec![ModalityKind::Aolp, ModalityKind::Dolp],
                BranchKind::Disparity => vec![ModalityKind::Disparity],
            };
            let c = if kinds.is_empty() { 3 } else { kinds.len() };
            let mut out = ArrayD::<E>::zeros(IxDyn(&[n, c, h, w]));
            for (si, s) in samples.iter().enumerate() {
                if kinds.is_empty() {
                    for ci in 0..3 {
                        for iy in 0..h {
                            for ix in 0..w {
                                out[[si, ci, iy, ix]] = E::from_f64(s.rgb[[iy, ix, ci]]);
                            }
                        }
                    }
                } else {
                    for (ci, &kind) in kinds.iter().enumerate() {
                        let p = plane(s, kind)?;
                        for iy in 0..h {
                            for ix in 0..w {
                                out[[si, ci, iy, ix]] = E::from_f64(p[[iy, ix]]);
                            }
                        }
                    }
                }
            }
            Ok(out)
        })
        .collect()
}

pub fn batch_labels(samples: &[&Sample]) -> Array3<usize> {
    let n = samples.len();
    let (h, w) = (samples[0].height(), samples[0].width());
    Array3::from_shape_fn((n, h, w), |(s, y, x)| samples[s].label[[y, x]])
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepLog {
    pub epoch: usize,
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub val_miou: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub steps: Vec<StepLog>,
    pub epochs: Vec<EpochLog>,
    pub best_val_miou: f64,
    pub best_epoch: usize,
}

impl TrainReport {
    /// One row per optimizer step; epoch-end rows carry the validation mIoU.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,step,lr,loss,val_miou\n");
        for s in &self.steps {
            let val = self
                .epochs
                .iter()
                .find(|e| e.epoch == s.epoch && Some(s) == self.last_step_of(s.epoch))
                .map(|e| format!("{:.6}", e.val_miou))
                .unwrap_or_default();
            out.push_str(&format!(
                "{},{},{:.8},{:.6},{}\n",
                s.epoch, s.step, s.lr, s.loss, val
            ));
        }
        out
    }

    fn last_step_of(&self, epoch: usize) -> Option<&StepLog> {
        self.steps.iter().rev().find(|s| s.epoch == epoch)
    }
}

/// Hook invoked after each validation pass with (epoch, net, val mIoU).
pub type EpochCallback<'a, E> = dyn FnMut(usize, &Eafnet<E>, f64) + 'a;

/// Single-threaded deterministic training loop: shuffled mini-batches,
/// optional scale/crop/flip augmentation, softmax cross entropy, Adam with
/// decoupled-from-buffers L2 decay and a cosine learning-rate schedule.
pub fn train<E: Element>(
    net: &mut Eafnet<E>,
    train_set: &[Sample],
    val_set: &[Sample],
    cfg: &TrainConfig,
    mut on_epoch: Option<&mut EpochCallback<'_, E>>,
) -> Result<TrainReport> {
    cfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(TrainError::Config("empty train or validation set".into()));
    }
    let branches: Vec<BranchKind> = net.config.branches.iter().map(|b| b.kind).collect();
    let steps_per_epoch = train_set.len().div_ceil(cfg.batch_size);
    let total_steps = (steps_per_epoch * cfg.epochs) as u64;
    let schedule = eaf_autograd::CosineSchedule::new(
        cfg.lr_initial,
        cfg.lr_floor_fraction,
        total_steps.max(1),
    );

    // Trainable parameter ids in store order; Adam state lines up with them.
    let trainable: Vec<usize> = (0..net.store.entries.len())
        .filter(|&i| net.store.entries[i].trainable)
        .collect();
    let values: Vec<ArrayD<E>> = trainable
        .iter()
        .map(|&i| net.store.entries[i].value.clone())
        .collect();
    let decay_mask: Vec<bool> = trainable
        .iter()
        .map(|&i| net.store.entries[i].decay)
        .collect();
    let mut adam = AdamState::new(&values);
    drop(values);

    let mut report = TrainReport {
        steps: Vec::new(),
        epochs: Vec::new(),
        best_val_miou: f64::NEG_INFINITY,
        best_epoch: 0,
    };
    let mut global_step = 0u64;
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed.wrapping_add(epoch as u64));
        use rand::seq::SliceRandom;
        order.shuffle(&mut rng);

        for (step, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let augmented: Vec<Sample> = chunk
                .iter()
                .map(|&i| {
                    let s = &train_set[i];
                    match cfg.augment_crop {
                        Some(crop) => {
                            let acfg = AugmentationConfig {
                                crop,
                                seed: cfg.seed,
                                ..AugmentationConfig::default()
                            };
                            let mut arng = ChaCha20Rng::seed_from_u64(per_sample_seed(
                                cfg.seed,
                                &s.id,
                                epoch as u64,
                            ));
                            Ok(augment(s, &acfg, &mut arng)?)
                        }
                        None => Ok(s.clone()),
                    }
                })
                .collect::<Result<_>>()?;
            let refs: Vec<&Sample> = augmented.iter().collect();
            let inputs = batch_inputs::<E>(&refs, &branches)?;
            let labels = batch_labels(&refs);

            let mut tape = Tape::new();
            let out = net.forward(&mut tape, &inputs, true)?;
            let (loss_var, _) = tape.softmax_cross_entropy(out.logits, &labels, &cfg.ignore_ids)?;
            let loss = tape.scalar(loss_var).to_f64();
            if !loss.is_finite() {
                return Err(TrainError::Diverged {
                    epoch,
                    step,
                    loss,
                    lr: schedule.lr(global_step),
                });
            }
            tape.backward(loss_var)?;

            // Gradients in the same order as the Adam state.
            let by_id: std::collections::HashMap<usize, eaf_autograd::Var> =
                out.params.iter().map(|(id, v)| (id.0, *v)).collect();
            let grads: Vec<ArrayD<E>> = trainable
                .iter()
                .map(|&i| match by_id.get(&i).and_then(|&v| tape.grad(v)) {
                    Some(g) => g.clone(),
                    None => ArrayD::zeros(net.store.entries[i].value.raw_dim()),
                })
                .collect();
            let mut params: Vec<ArrayD<E>> = trainable
                .iter()
                .map(|&i| net.store.entries[i].value.clone())
                .collect();
            let lr = schedule.lr(global_step);
            adam_step(&mut adam, &mut params, &grads, &decay_mask, lr, cfg.weight_decay)?;
            for (&i, p) in trainable.iter().zip(params) {
                net.store.entries[i].value = p;
            }

            report.steps.push(StepLog {
                epoch,
                step,
                lr,
                loss,
            });
            global_step += 1;
        }

        let (metrics, _) = evaluate(net, val_set, cfg)?;
        report.epochs.push(EpochLog {
            epoch,
            val_miou: metrics.mean_iou,
        });
        if metrics.mean_iou > report.best_val_miou {
            report.best_val_miou = metrics.mean_iou;
            report.best_epoch = epoch;
        }
        if let Some(cb) = on_epoch.as_deref_mut() {
            cb(epoch, net, metrics.mean_iou);
        }
    }
    Ok(report)
}

/// Batched evaluation pass; returns metrics plus the raw confusion matrix.
pub fn evaluate<E: Element>(
    net: &mut Eafnet<E>,
    samples: &[Sample],
    cfg: &TrainConfig,
) -> Result<(Metrics, ConfusionMatrix)> {
    if samples.is_empty() {
        return Err(TrainError::Config("empty evaluation set".into()));
    }
    let branches: Vec<BranchKind> = net.config.branches.iter().map(|b| b.kind).collect();
    let mut cm = ConfusionMatrix::new(net.config.num_classes);
    for chunk in samples.chunks(cfg.batch_size) {
        let refs: Vec<&Sample> = chunk.iter().collect();
        let inputs = batch_inputs::<E>(&refs, &branches)?;
        let labels = batch_labels(&refs);
        let mut tape = Tape::new();
        let out = net.forward(&mut tape, &inputs, false)?;
        let pred = Eafnet::<E>::argmax_classes(tape.value(out.logits));
        cm.update_batch(&pred, &labels, &cfg.ignore_ids)?;
    }
    let metrics = compute_metrics(&cm, &cfg.exclude_from_miou);
    Ok((metrics, cm))
}
