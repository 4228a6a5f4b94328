//! Acceptance gate: one timed pass/fail line per criterion.
//! Run with `cargo test --test acceptance -- --nocapture` to see the lines.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use eaf_cli::commands::{cmd_run, DataSource};
use eaf_cli::config::EffectiveConfig;
use eaf_data::{
    load_derived, synthesize_dataset, ModalityMode, PderTensor, SyntheticSceneConfig,
};
use eaf_model::{BranchKind, BranchSpec, Eafnet, EafnetConfig, KernelParity, ParamStore};
use eaf_polarimetry::{flip_aolp_value_deg, flip_aolp_values};
use eaf_train::{
    batch_inputs, load_checkpoint, save_checkpoint, train, ExperimentPreset, TrainConfig,
};

fn named_check(name: &str) -> Result<(), String> {
    let (_, f) = eaf_cli::verify::CHECKS
        .iter()
        .find(|(n, _)| *n == name)
        .unwrap_or_else(|| panic!("no check named {name}"));
    f()
}

fn timed(
    budget: Duration,
    f: impl FnOnce() -> Result<(), String>,
) -> Result<(), String> {
    let t0 = Instant::now();
    f()?;
    let took = t0.elapsed();
    if took > budget {
        return Err(format!("took {took:?}, budget {budget:?}"));
    }
    Ok(())
}

fn c1_stokes_round_trip() -> Result<(), String> {
    timed(Duration::from_secs(1), || named_check("stokes-round-trip"))
}

fn c2_ranges() -> Result<(), String> {
    named_check("polarization-ranges")
}

fn c3_fresnel() -> Result<(), String> {
    named_check("fresnel-brewster")
}

fn c4_kernel_table() -> Result<(), String> {
    named_check("kernel-size-table")
}

fn c5_flip_involution() -> Result<(), String> {
    named_check("aolp-flip-involution")?;
    // hand case plus a full-plane double flip
    if (flip_aolp_value_deg(30.0) - 150.0).abs() > 1e-12 {
        return Err("flip(30) != 150".into());
    }
    let mut rng = ChaCha20Rng::seed_from_u64(5);
    let plane = Array3::from_shape_fn((16, 16, 1), |_| rng.gen_range(0.0..180.0));
    let back = flip_aolp_values(&flip_aolp_values(&plane));
    for (a, b) in plane.iter().zip(back.iter()) {
        if (a - b).abs() >= 1e-6 {
            return Err(format!("plane double flip drifted: {a} vs {b}"));
        }
    }
    Ok(())
}

fn c6_gradient_suite() -> Result<(), String> {
    timed(Duration::from_secs(300), || {
        named_check("gradient-ops")?;
        named_check("gradient-end-to-end")
    })
}

fn c7_metrics_oracle() -> Result<(), String> {
    use eaf_train::{compute_metrics, ConfusionMatrix};
    let mut rng = ChaCha20Rng::seed_from_u64(7);
    let k = 5;
    let pairs: Vec<(Array2<usize>, Array2<usize>)> = (0..100)
        .map(|_| {
            (
                Array2::from_shape_fn((16, 16), |_| rng.gen_range(0..k)),
                Array2::from_shape_fn((16, 16), |_| rng.gen_range(0..k)),
            )
        })
        .collect();
    let mut sequential = ConfusionMatrix::new(k);
    for (p, t) in &pairs {
        sequential.update(p, t, &[]).map_err(|e| e.to_string())?;
        // brute-force per-pair oracle
        let mut cm = ConfusionMatrix::new(k);
        cm.update(p, t, &[]).map_err(|e| e.to_string())?;
        let m = compute_metrics(&cm, &[]);
        for c in 0..k {
            let tp = p.iter().zip(t.iter()).filter(|&(&a, &b)| a == c && b == c).count() as f64;
            let fp = p.iter().zip(t.iter()).filter(|&(&a, &b)| a == c && b != c).count() as f64;
            let fnn = p.iter().zip(t.iter()).filter(|&(&a, &b)| a != c && b == c).count() as f64;
            let union = tp + fp + fnn;
            let want_iou = if union > 0.0 { tp / union } else { 0.0 };
            let want_p = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
            let want_r = if tp + fnn > 0.0 { tp / (tp + fnn) } else { 0.0 };
            let got = m.per_class[c];
            if got.iou != want_iou || got.precision != want_p || got.recall != want_r {
                return Err(format!("class {c}: metrics differ from oracle"));
            }
        }
    }
    // sharded == sequential, exactly
    let mut sharded = ConfusionMatrix::new(k);
    for shard in pairs.chunks(7) {
        let mut cm = ConfusionMatrix::new(k);
        for (p, t) in shard {
            cm.update(p, t, &[]).map_err(|e| e.to_string())?;
        }
        sharded.merge(&cm).map_err(|e| e.to_string())?;
    }
    if sharded != sequential {
        return Err("sharded counts differ from sequential".into());
    }
    if compute_metrics(&sharded, &[]) != compute_metrics(&sequential, &[]) {
        return Err("sharded metrics differ from sequential".into());
    }
    Ok(())
}

fn c8_eac_contract() -> Result<(), String> {
    named_check("eac-contract")?;
    // branch-permutation equivariance of the fusion sum
    use eaf_autograd::Tape;
    use eaf_model::{ForwardCtx, FuseStage};
    use ndarray::{ArrayD, IxDyn};
    let mut store = ParamStore::<f64>::new(8);
    let fuse = FuseStage::new(&mut store, "fuse", 8, 3, KernelParity::Paper);
    let mut rng = ChaCha20Rng::seed_from_u64(88);
    let feats: Vec<ArrayD<f64>> = (0..3)
        .map(|_| ArrayD::from_shape_fn(IxDyn(&[1, 8, 4, 4]), |_| rng.gen_range(-1.0..1.0)))
        .collect();
    let run = |order: &[usize]| -> ArrayD<f64> {
        let mut tape = Tape::new();
        let mut ctx = ForwardCtx::new(&mut tape, &store, false);
        let mut acc = None;
        for &i in order {
            let xv = ctx.tape.leaf(feats[i].clone(), false);
            let d = fuse.eacs[i].weights(&mut ctx, &store, xv).unwrap();
            let s = ctx.tape.channel_scale(xv, d).unwrap();
            acc = Some(match acc {
                Some(a) => ctx.tape.add(a, s).unwrap(),
                None => s,
            });
        }
        tape.value(acc.unwrap()).clone()
    };
    let a = run(&[0, 1, 2]);
    let b = run(&[1, 2, 0]);
    for (x, y) in a.iter().zip(b.iter()) {
        if (x - y).abs() >= 1e-6 {
            return Err(format!("fusion not permutation-equivariant: {x} vs {y}"));
        }
    }
    Ok(())
}

fn c9_fusion_gap() -> Result<(), String> {
    timed(Duration::from_secs(600), || {
        let cfg = EffectiveConfig::default(); // 200 train / 50 val, 64x64, 3 epochs
        assert!(cfg.synth_train_count >= 200 && cfg.synth_val_count >= 50);
        let source = DataSource::Synthetic;
        let mut gaps = Vec::new();
        for seed in [1u64, 2, 3] {
            let mut run_cfg = cfg.clone();
            run_cfg.seed = seed;
            let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
            let base = cmd_run(ExperimentPreset::Baseline, &source, dir.path(), &run_cfg)
                .map_err(|e| e.to_string())?;
            let fused = cmd_run(ExperimentPreset::AolpEx, &source, dir.path(), &run_cfg)
                .map_err(|e| e.to_string())?;
            gaps.push(fused.final_val_miou - base.final_val_miou);
        }
        let mean_gap = 100.0 * gaps.iter().sum::<f64>() / gaps.len() as f64;
        if mean_gap < 10.0 {
            return Err(format!(
                "mean mIoU gap {mean_gap:.2} points (per seed: {gaps:?})"
            ));
        }
        Ok(())
    })
}

fn c10_determinism() -> Result<(), String> {
    let bin = env!("CARGO_BIN_EXE_eaf");
    let run_once = |dir: &Path| -> Result<(), String> {
        let status = Command::new(bin)
            .args(["--seed", "7", "run", "aolp-ex", "--synthetic"])
            .arg("--out")
            .arg(dir)
            .output()
            .map_err(|e| e.to_string())?;
        if !status.status.success() {
            return Err(format!(
                "run failed: {}",
                String::from_utf8_lossy(&status.stderr)
            ));
        }
        Ok(())
    };
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    run_once(a.path())?;
    run_once(b.path())?;
    for file in ["aolp-ex_metrics.csv", "aolp-ex_last.eafc", "aolp-ex_best.eafc"] {
        let xa = std::fs::read(a.path().join(file)).map_err(|e| format!("{file}: {e}"))?;
        let xb = std::fs::read(b.path().join(file)).map_err(|e| format!("{file}: {e}"))?;
        if xa != xb {
            return Err(format!("{file} differs between identical runs"));
        }
    }
    Ok(())
}

fn c11_persistence() -> Result<(), String> {
    named_check("pder-round-trip")?;
    named_check("checkpoint-round-trip")?;
    // post-load forward outputs equal pre-save outputs bitwise
    let mcfg = EafnetConfig {
        branches: vec![BranchSpec::of(BranchKind::Rgb), BranchSpec::of(BranchKind::Aolp)],
        widths: [4, 6, 8, 10, 12],
        blocks_per_stage: 1,
        num_classes: 2,
        spp_levels: vec![1, 2],
        decoder_width: 8,
        kernel_parity: KernelParity::Paper,
    };
    let scfg = SyntheticSceneConfig {
        height: 32,
        width: 32,
        ..SyntheticSceneConfig::default()
    };
    let samples = synthesize_dataset(&scfg, ModalityMode::Aolp, 4).map_err(|e| e.to_string())?;
    let tcfg = TrainConfig {
        epochs: 1,
        batch_size: 2,
        ..TrainConfig::default()
    };
    let mut net = Eafnet::<f32>::new(mcfg, 9).map_err(|e| e.to_string())?;
    train(&mut net, &samples, &samples, &tcfg, None).map_err(|e| e.to_string())?;

    let refs: Vec<&eaf_data::Sample> = samples.iter().collect();
    let branches: Vec<BranchKind> = net.config.branches.iter().map(|b| b.kind).collect();
    let inputs = batch_inputs::<f32>(&refs, &branches).map_err(|e| e.to_string())?;
    let logits_of = |net: &mut Eafnet<f32>| -> Result<Vec<u32>, String> {
        let mut tape = eaf_autograd::Tape::new();
        let out = net.forward(&mut tape, &inputs, false).map_err(|e| e.to_string())?;
        Ok(tape.value(out.logits).iter().map(|v| v.to_bits()).collect())
    };
    let before = logits_of(&mut net)?;

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("m.eafc");
    save_checkpoint(&net, &path).map_err(|e| e.to_string())?;
    let mut restored = load_checkpoint::<f32>(&path).map_err(|e| e.to_string())?;
    let after = logits_of(&mut restored)?;
    if before != after {
        return Err("restored forward pass is not bit-identical".into());
    }
    Ok(())
}

fn c12_stats() -> Result<(), String> {
    named_check("stats-dolp-mass")
}

#[test]
fn acceptance() {
    let criteria: Vec<(&str, fn() -> Result<(), String>)> = vec![
        ("criterion 1: Stokes round-trip < 1e-9 within 1 s", c1_stokes_round_trip),
        ("criterion 2: DoLP/AoLP ranges and hand cases", c2_ranges),
        ("criterion 3: Fresnel Brewster zero and normal incidence", c3_fresnel),
        ("criterion 4: adaptive kernel-size table", c4_kernel_table),
        ("criterion 5: AoLP flip involution", c5_flip_involution),
        ("criterion 6: gradient suite (ops + end-to-end)", c6_gradient_suite),
        ("criterion 7: metrics vs brute-force oracle, sharded merge", c7_metrics_oracle),
        ("criterion 8: EAC contract and fusion equivariance", c8_eac_contract),
        ("criterion 9: AoLP fusion beats RGB baseline by >= 10 mIoU", c9_fusion_gap),
        ("criterion 10: byte-identical repeated runs", c10_determinism),
        ("criterion 11: bit-exact persistence round trips", c11_persistence),
        ("criterion 12: histogram totals and low-DoLP mass", c12_stats),
    ];
    let mut failed = Vec::new();
    for (name, f) in criteria {
        let t0 = Instant::now();
        match f() {
            Ok(()) => println!("PASS {name} ({:.1} s)", t0.elapsed().as_secs_f64()),
            Err(msg) => {
                println!("FAIL {name} ({:.1} s): {msg}", t0.elapsed().as_secs_f64());
                failed.push(name);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}

// Spec'd edge behaviors around the acceptance gate.

#[test]
fn attn_on_single_branch_checkpoint_is_an_error() {
    let bin = env!("CARGO_BIN_EXE_eaf");
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(bin)
        .args(["--seed", "3", "run", "baseline", "--synthetic", "--epochs", "1"])
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let out = Command::new(bin)
        .args(["--seed", "3", "attn", "--synthetic"])
        .arg("--checkpoint")
        .arg(dir.path().join("baseline_last.eafc"))
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("single-branch model has no attention"), "{err}");
}

#[test]
fn derive_reports_missing_file_and_writes_bitwise_consistent_tensors() {
    use eaf_polarimetry::{compute_stokes, derive_polarization, AolpConvention};
    let bin = env!("CARGO_BIN_EXE_eaf");
    let data = tempfile::tempdir().unwrap();
    let status = Command::new(bin)
        .args(["--seed", "11", "synth", "--count", "2", "--split", "train"])
        .arg("--out")
        .arg(data.path())
        .status()
        .unwrap();
    assert!(status.success());

    let derived = tempfile::tempdir().unwrap();
    let status = Command::new(bin)
        .args(["derive", "--split", "train"])
        .arg("--root")
        .arg(data.path())
        .arg("--out")
        .arg(derived.path())
        .status()
        .unwrap();
    assert!(status.success());

    // PDER contents match an independent in-memory derivation bitwise.
    let quad = eaf_data::load_quad(data.path(), "train", "synth-00000").unwrap();
    let expect = derive_polarization(&compute_stokes(&quad), AolpConvention::S1OverS2);
    match load_derived(&derived.path().join("synth-00000/dolp.pder")).unwrap() {
        PderTensor::F64(got) => {
            assert!(expect
                .dolp
                .iter()
                .zip(got.iter())
                .all(|(a, b)| a.to_bits() == b.to_bits()));
        }
        other => panic!("unexpected dtype {other:?}"),
    }

    // a missing polarization image names the file in the error
    std::fs::remove_file(data.path().join("train/synth-00001/i135.png")).unwrap();
    let out = Command::new(bin)
        .args(["derive", "--split", "train"])
        .arg("--root")
        .arg(data.path())
        .arg("--out")
        .arg(derived.path())
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("i135.png"));
}

#[test]
fn unpolarized_quad_gives_black_dolp_preview() {
    use eaf_cli::render::dolp_preview;
    let plane = Array2::zeros((8, 8));
    let img = dolp_preview(&plane);
    assert!(img.pixels().all(|p| p.0[0] == 0));
}

#[test]
fn corrupted_backward_is_caught_by_the_gradient_check() {
    use eaf_autograd::{grad_check, Tape};
    use ndarray::{ArrayD, IxDyn};
    let mut rng = ChaCha20Rng::seed_from_u64(13);
    let x = ArrayD::from_shape_fn(IxDyn(&[2, 3]), |_| rng.gen_range(-1.0..1.0));
    let err = grad_check(
        |t: &mut Tape<f64>, v| {
            let y = t.sigmoid_corrupted(v[0]);
            Ok(t.sum(y))
        },
        &[x],
        1e-6,
    )
    .unwrap();
    assert!(err > 1e-4, "corrupted backward slipped through: {err:e}");
}
