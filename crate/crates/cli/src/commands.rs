use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use eaf_data::{
    histogram, list_ids, load_quad, load_sample, save_derived, synthesize_dataset,
    synthesize_quad, write_sample_dir, ModalityKind, ModalityMode, PderTensor, Sample,
    SyntheticSceneConfig, CLASS_NAMES, CLASS_PALETTE, NUM_CLASSES,
};
use eaf_model::{BranchSpec, Eafnet, EafnetConfig};
use eaf_polarimetry::{compute_stokes, derive_polarization, AolpConvention};
use eaf_train::{
    batch_inputs, evaluate, load_checkpoint, save_checkpoint, train,
    ExperimentPreset, Metrics, TrainConfig,
};

use crate::config::EffectiveConfig;
use crate::render::{aolp_preview, dolp_preview, save_indexed_png};
use crate::{CliError, Result};

pub fn parse_preset(name: &str) -> Result<ExperimentPreset> {
    match name.to_ascii_lowercase().as_str() {
        "baseline" => Ok(ExperimentPreset::Baseline),
        "aolp-ex" => Ok(ExperimentPreset::AolpEx),
        "dolp-ex" => Ok(ExperimentPreset::DolpEx),
        "ad-ex" => Ok(ExperimentPreset::AdEx),
        "3path-ex" => Ok(ExperimentPreset::ThreePathEx),
        "rgbd" => Ok(ExperimentPreset::Rgbd),
        other => Err(CliError::Args(format!(
            "unknown preset '{other}'; expected one of \
             baseline, aolp-ex, dolp-ex, ad-ex, 3path-ex, rgbd"
        ))),
    }
}

/// The channel stack a preset needs each sample to carry.
fn mode_for_preset(preset: ExperimentPreset) -> ModalityMode {
    match preset {
        ExperimentPreset::Baseline => ModalityMode::None,
        ExperimentPreset::AolpEx => ModalityMode::Aolp,
        ExperimentPreset::DolpEx => ModalityMode::Dolp,
        ExperimentPreset::AdEx | ExperimentPreset::ThreePathEx => ModalityMode::AolpDolp,
        ExperimentPreset::Rgbd => ModalityMode::Disparity,
    }
}

fn model_config(
    preset: ExperimentPreset,
    cfg: &EffectiveConfig,
    num_classes: usize,
) -> EafnetConfig {
    EafnetConfig {
        branches: preset.branches().iter().map(|&k| BranchSpec::of(k)).collect(),
        widths: cfg.widths,
        blocks_per_stage: cfg.blocks_per_stage,
        num_classes,
        spp_levels: cfg.spp_levels.clone(),
        decoder_width: cfg.decoder_width,
        kernel_parity: cfg.kernel_parity,
    }
}

fn train_config(cfg: &EffectiveConfig, exclude_from_miou: Vec<usize>) -> TrainConfig {
    TrainConfig {
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        lr_initial: cfg.lr_initial,
        lr_floor_fraction: cfg.lr_floor_fraction,
        weight_decay: cfg.weight_decay,
        seed: cfg.seed,
        ignore_ids: Vec::new(),
        exclude_from_miou,
        augment_crop: None,
    }
}

const VAL_SEED_OFFSET: u64 = 0x5eed_0fff;

fn synth_cfg(cfg: &EffectiveConfig, seed: u64) -> SyntheticSceneConfig {
    SyntheticSceneConfig {
        height: cfg.synth_height,
        width: cfg.synth_width,
        seed,
        ..SyntheticSceneConfig::default()
    }
}

/// Either the on-disk dataset or the color-uninformative synthetic analog.
pub enum DataSource<'a> {
    Disk { root: &'a Path },
    Synthetic,
}

impl DataSource<'_> {
    pub fn num_classes(&self) -> usize {
        match self {
            DataSource::Disk { .. } => NUM_CLASSES,
            DataSource::Synthetic => 2,
        }
    }

    /// Background (class 0) stays out of the disk-dataset mean IoU; the
    /// two-class synthetic set evaluates both classes.
    pub fn excluded_classes(&self) -> Vec<usize> {
        match self {
            DataSource::Disk { .. } => vec![0],
            DataSource::Synthetic => vec![],
        }
    }

    pub fn load_split(
        &self,
        split: &str,
        mode: ModalityMode,
        cfg: &EffectiveConfig,
    ) -> Result<Vec<Sample>> {
        match self {
            DataSource::Disk { root } => {
                let ids = list_ids(root, split)?;
                if ids.is_empty() {
                    return Err(CliError::Args(format!(
                        "no samples under {}/{split}",
                        root.display()
                    )));
                }
                ids.iter()
                    .map(|id| {
                        Ok(load_sample(
                            root,
                            split,
                            id,
                            mode,
                            NUM_CLASSES,
                            AolpConvention::S1OverS2,
                        )?)
                    })
                    .collect()
            }
            DataSource::Synthetic => {
                let (seed, count) = match split {
                    "val" => (cfg.seed.wrapping_add(VAL_SEED_OFFSET), cfg.synth_val_count),
                    _ => (cfg.seed, cfg.synth_train_count),
                };
                let mode = if mode == ModalityMode::None {
                    // keep synthetic sets comparable across presets
                    ModalityMode::AolpDolp
                } else {
                    mode
                };
                Ok(synthesize_dataset(&synth_cfg(cfg, seed), mode, count)?)
            }
        }
    }
}

fn class_name(source: &DataSource<'_>, c: usize) -> String {
    match source {
        DataSource::Disk { .. } => CLASS_NAMES[c].to_string(),
        DataSource::Synthetic => ["background", "foreground"]
            .get(c)
            .map(|s| s.to_string())
            .unwrap_or_else(|| format!("class{c}")),
    }
}

/// CSV rows `class,iou,precision,recall` plus a trailing mIoU row.
pub fn metrics_csv(metrics: &Metrics, source: &DataSource<'_>) -> String {
    let mut out = String::from("class,iou,precision,recall\n");
    for (c, m) in metrics.per_class.iter().enumerate() {
        out.push_str(&format!(
            "{},{:.6},{:.6},{:.6}\n",
            class_name(source, c),
            m.iou,
            m.precision,
            m.recall
        ));
    }
    out.push_str(&format!("mIoU,{:.6},,\n", metrics.mean_iou));
    out
}

fn echo_config(cfg: &EffectiveConfig) -> Result<()> {
    println!("effective config: {}", serde_json::to_string(cfg)?);
    Ok(())
}

/// Derive AoLP/DoLP tensors for every sample of a split, with previews.
pub fn cmd_derive(root: &Path, split: &str, out: &Path, cfg: &EffectiveConfig) -> Result<()> {
    echo_config(cfg)?;
    let ids = list_ids(root, split)?;
    if ids.is_empty() {
        return Err(CliError::Args(format!(
            "no samples under {}/{split}",
            root.display()
        )));
    }
    for id in &ids {
        let quad = load_quad(root, split, id)?;
        let stokes = compute_stokes(&quad);
        let derived = derive_polarization(&stokes, AolpConvention::S1OverS2);
        let dir = out.join(id);
        fs::create_dir_all(&dir)?;
        save_derived(
            &PderTensor::F64(derived.dolp.clone().into_dyn()),
            &dir.join("dolp.pder"),
        )?;
        save_derived(
            &PderTensor::F64(derived.aolp_deg.clone().into_dyn()),
            &dir.join("aolp.pder"),
        )?;
        let dolp_mono = derived.dolp.mean_axis(Axis(2)).unwrap();
        let aolp_mono = derived.aolp_deg.mean_axis(Axis(2)).unwrap() / 180.0;
        dolp_preview(&dolp_mono).save(dir.join("dolp_preview.png"))?;
        aolp_preview(&aolp_mono).save(dir.join("aolp_preview.png"))?;
        println!("derived {id}");
    }
    Ok(())
}

/// Histogram of one normalized channel over a split.
pub fn cmd_stats(
    source: &DataSource<'_>,
    split: &str,
    kind: ModalityKind,
    out: &Path,
    cfg: &EffectiveConfig,
) -> Result<PathBuf> {
    echo_config(cfg)?;
    let mode = match kind {
        ModalityKind::Aolp => ModalityMode::Aolp,
        ModalityKind::Dolp => ModalityMode::Dolp,
        ModalityKind::Disparity => ModalityMode::Disparity,
    };
    let samples = source.load_split(split, mode, cfg)?;
    let stats = histogram(&samples, kind, cfg.bins)?;
    fs::create_dir_all(out)?;
    let path = out.join(format!("stats_{}.csv", kind.label()));
    fs::write(&path, stats.to_csv())?;
    println!(
        "{} pixels over {} bins; {:.1}% of mass at or below 0.4 -> {}",
        stats.pixel_total,
        cfg.bins,
        stats.mass_below(0.4) * 100.0,
        path.display()
    );
    Ok(path)
}

/// Write a synthetic split to the on-disk dataset layout.
pub fn cmd_synth(out_root: &Path, split: &str, count: usize, cfg: &EffectiveConfig) -> Result<()> {
    echo_config(cfg)?;
    for k in 0..count {
        let mut scfg = synth_cfg(cfg, cfg.seed.wrapping_add(k as u64));
        scfg.seed = cfg.seed.wrapping_add(k as u64);
        let mut rng = ChaCha20Rng::seed_from_u64(scfg.seed);
        let (quad, label) = synthesize_quad(&scfg, &mut rng)?;
        write_sample_dir(out_root, split, &format!("synth-{k:05}"), &quad, &label)?;
    }
    println!("wrote {count} samples under {}/{split}", out_root.display());
    Ok(())
}

pub struct RunArtifacts {
    pub metrics_csv: PathBuf,
    pub last_checkpoint: PathBuf,
    pub best_checkpoint: PathBuf,
    pub final_val_miou: f64,
}

/// Train a preset and leave the log plus last/best checkpoints in `out`.
pub fn cmd_run(
    preset: ExperimentPreset,
    source: &DataSource<'_>,
    out: &Path,
    cfg: &EffectiveConfig,
) -> Result<RunArtifacts> {
    echo_config(cfg)?;
    let mode = mode_for_preset(preset);
    let train_set = source.load_split("train", mode, cfg)?;
    let val_set = source.load_split("val", mode, cfg)?;
    let mcfg = model_config(preset, cfg, source.num_classes());
    let tcfg = train_config(cfg, source.excluded_classes());
    let mut net = Eafnet::<f32>::new(mcfg, cfg.seed)?;

    fs::create_dir_all(out)?;
    let best_path = out.join(format!("{}_best.eafc", preset.name()));
    let last_path = out.join(format!("{}_last.eafc", preset.name()));
    let mut best = f64::NEG_INFINITY;
    let mut save_err: Option<CliError> = None;
    let report = {
        let mut on_epoch = |epoch: usize, net: &Eafnet<f32>, miou: f64| {
            println!("epoch {epoch}: val mIoU {miou:.4}");
            if miou > best && save_err.is_none() {
                best = miou;
                if let Err(e) = save_checkpoint(net, &best_path) {
                    save_err = Some(e.into());
                }
            }
        };
        train(&mut net, &train_set, &val_set, &tcfg, Some(&mut on_epoch))?
    };
    if let Some(e) = save_err {
        return Err(e);
    }
    save_checkpoint(&net, &last_path)?;
    let metrics_path = out.join(format!("{}_metrics.csv", preset.name()));
    fs::write(&metrics_path, report.to_csv())?;
    let final_val_miou = report.epochs.last().map(|e| e.val_miou).unwrap_or(0.0);
    println!(
        "{}: final val mIoU {final_val_miou:.4}, best {:.4} (epoch {})",
        preset.name(),
        report.best_val_miou,
        report.best_epoch
    );
    Ok(RunArtifacts {
        metrics_csv: metrics_path,
        last_checkpoint: last_path,
        best_checkpoint: best_path,
        final_val_miou,
    })
}

/// Evaluate a checkpoint on the validation split; returns the metrics and
/// writes the per-class CSV.
pub fn cmd_eval(
    checkpoint: &Path,
    source: &DataSource<'_>,
    out: &Path,
    cfg: &EffectiveConfig,
) -> Result<Metrics> {
    echo_config(cfg)?;
    let mut net = load_checkpoint::<f32>(checkpoint)?;
    let preset = preset_of(&net)?;
    let val_set = source.load_split("val", mode_for_preset(preset), cfg)?;
    let tcfg = train_config(cfg, source.excluded_classes());
    let (metrics, _) = evaluate(&mut net, &val_set, &tcfg)?;
    fs::create_dir_all(out)?;
    let path = out.join("eval.csv");
    fs::write(&path, metrics_csv(&metrics, source))?;
    println!("mIoU {:.6} -> {}", metrics.mean_iou, path.display());
    Ok(metrics)
}

/// Reverse-map a checkpoint's branch layout to its preset.
fn preset_of(net: &Eafnet<f32>) -> Result<ExperimentPreset> {
    let kinds: Vec<_> = net.config.branches.iter().map(|b| b.kind).collect();
    [
        ExperimentPreset::Baseline,
        ExperimentPreset::AolpEx,
        ExperimentPreset::DolpEx,
        ExperimentPreset::AdEx,
        ExperimentPreset::ThreePathEx,
        ExperimentPreset::Rgbd,
    ]
    .into_iter()
    .find(|p| p.branches() == kinds)
    .ok_or_else(|| CliError::Args(format!("checkpoint has unknown branch layout {kinds:?}")))
}

/// Segment the validation split and write indexed-palette PNGs.
pub fn cmd_infer(
    checkpoint: &Path,
    source: &DataSource<'_>,
    out: &Path,
    cfg: &EffectiveConfig,
) -> Result<Vec<PathBuf>> {
    echo_config(cfg)?;
    let mut net = load_checkpoint::<f32>(checkpoint)?;
    let preset = preset_of(&net)?;
    let val_set = source.load_split("val", mode_for_preset(preset), cfg)?;
    let branches: Vec<_> = net.config.branches.iter().map(|b| b.kind).collect();
    fs::create_dir_all(out)?;
    let mut written = Vec::new();
    for chunk in val_set.chunks(cfg.batch_size) {
        let refs: Vec<&Sample> = chunk.iter().collect();
        let inputs = batch_inputs::<f32>(&refs, &branches)?;
        let mut tape = eaf_autograd::Tape::new();
        let fwd = net.forward(&mut tape, &inputs, false)?;
        let pred = Eafnet::<f32>::argmax_classes(tape.value(fwd.logits));
        for (i, s) in chunk.iter().enumerate() {
            let map: Array2<usize> = pred.index_axis(Axis(0), i).to_owned();
            let path = out.join(format!("{}.png", s.id));
            save_indexed_png(&path, &map, &CLASS_PALETTE)?;
            written.push(path);
        }
    }
    println!("wrote {} segmentation maps to {}", written.len(), out.display());
    Ok(written)
}

/// Dump per-stage, per-branch channel-attention weights as CSV.
pub fn cmd_attn(
    checkpoint: &Path,
    source: &DataSource<'_>,
    out: &Path,
    cfg: &EffectiveConfig,
) -> Result<PathBuf> {
    echo_config(cfg)?;
    let mut net = load_checkpoint::<f32>(checkpoint)?;
    net.require_attention()?;
    let preset = preset_of(&net)?;
    let val_set = source.load_split("val", mode_for_preset(preset), cfg)?;
    let branches: Vec<_> = net.config.branches.iter().map(|b| b.kind).collect();
    let take = val_set.len().min(cfg.batch_size);
    let refs: Vec<&Sample> = val_set.iter().take(take).collect();
    let inputs = batch_inputs::<f32>(&refs, &branches)?;
    let mut tape = eaf_autograd::Tape::new();
    let fwd = net.forward(&mut tape, &inputs, false)?;

    let mut csv = String::from("stage,branch,kind,sample,channel,weight\n");
    for cap in &fwd.attention {
        for ((s, c), &w) in cap.weights.indexed_iter() {
            csv.push_str(&format!(
                "{},{},{:?},{},{},{:.6}\n",
                cap.stage, cap.branch, cap.kind, refs[s].id, c, w
            ));
        }
    }
    fs::create_dir_all(out)?;
    let path = out.join("attention.csv");
    fs::write(&path, csv)?;
    println!("wrote attention weights to {}", path.display());
    Ok(path)
}

/// Run the self-check suite; returns false if any check failed.
pub fn cmd_verify() -> Result<bool> {
    Ok(crate::verify::run_all(&mut std::io::stdout())?)
}
