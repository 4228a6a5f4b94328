//! Self-check suite: fast re-runs of the core numeric contracts with
//! per-check timing, used by the `verify` subcommand.

use std::io::Write;
use std::time::Instant;

use ndarray::{Array2, Array3, ArrayD, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use eaf_autograd::{grad_check, Tape};
use eaf_data::{
    histogram, load_derived, save_derived, synthesize_dataset, ModalityKind, ModalityMode,
    PderTensor, SyntheticSceneConfig,
};
use eaf_model::{
    adaptive_kernel_size, end_to_end_grad_check, BranchKind, BranchSpec, Eac, Eafnet,
    EafnetConfig, ForwardCtx, KernelParity, ParamStore,
};
use eaf_polarimetry::{
    aolp_pixel_deg, brewster_angle_deg, compute_stokes, dolp_pixel, flip_aolp_value_deg,
    fresnel_coefficients, synthesize_intensities, AolpConvention, StokesMap,
};
use eaf_train::{compute_metrics, load_checkpoint, save_checkpoint, ConfusionMatrix};

type Check = (&'static str, fn() -> Result<(), String>);

fn fail(msg: String) -> Result<(), String> {
    Err(msg)
}

fn stokes_round_trip() -> Result<(), String> {
    let mut rng = ChaCha20Rng::seed_from_u64(1);
    let n = 10_000;
    let mut s0 = Array3::zeros((1, n, 1));
    let mut s1 = Array3::zeros((1, n, 1));
    let mut s2 = Array3::zeros((1, n, 1));
    for i in 0..n {
        let total: f64 = rng.gen_range(0.05..1.0);
        let dolp: f64 = rng.gen_range(0.0..1.0);
        let phi: f64 = rng.gen_range(0.0..std::f64::consts::PI);
        s0[[0, i, 0]] = total;
        s1[[0, i, 0]] = total * dolp * (2.0 * phi).sin();
        s2[[0, i, 0]] = total * dolp * (2.0 * phi).cos();
    }
    let stokes = StokesMap { s0: s0.clone(), s1: s1.clone(), s2: s2.clone() };
    let quad = synthesize_intensities(&stokes).map_err(|e| e.to_string())?;
    let back = compute_stokes(&quad);
    for i in 0..n {
        let r = (back.s0[[0, i, 0]] - s0[[0, i, 0]]).abs()
            + (back.s1[[0, i, 0]] - s1[[0, i, 0]]).abs()
            + (back.s2[[0, i, 0]] - s2[[0, i, 0]]).abs();
        if r >= 1e-9 {
            return fail(format!("pixel {i}: round-trip residual {r:e}"));
        }
    }
    Ok(())
}

fn polarization_ranges() -> Result<(), String> {
    let mut rng = ChaCha20Rng::seed_from_u64(2);
    for _ in 0..10_000 {
        let s0: f64 = rng.gen_range(1e-6..2.0);
        let s1: f64 = rng.gen_range(-1.0..1.0);
        let s2: f64 = rng.gen_range(-1.0..1.0);
        let d = dolp_pixel(s0, s1, s2);
        if !(0.0..=1.0).contains(&d) {
            return fail(format!("DoLP {d} outside [0,1]"));
        }
        let a = aolp_pixel_deg(s1, s2, AolpConvention::S1OverS2);
        if !(0.0..180.0).contains(&a) {
            return fail(format!("AoLP {a} outside [0,180)"));
        }
    }
    let d = dolp_pixel(1.0, 1.0, 0.0);
    let a = aolp_pixel_deg(1.0, 0.0, AolpConvention::S1OverS2);
    if (d - 1.0).abs() >= 1e-9 || (a - 45.0).abs() >= 1e-9 {
        return fail(format!("hand case (1,1,0): DoLP {d}, AoLP {a}"));
    }
    let a90 = aolp_pixel_deg(0.0, -1.0, AolpConvention::S1OverS2);
    if (a90 - 90.0).abs() >= 1e-9 {
        return fail(format!("hand case (1,0,-1): AoLP {a90}"));
    }
    Ok(())
}

fn fresnel_brewster() -> Result<(), String> {
    for n2 in [1.33, 1.5, 2.4] {
        let theta_b = brewster_angle_deg(1.0, n2);
        let f = fresnel_coefficients(1.0, n2, theta_b).map_err(|e| e.to_string())?;
        if f.r_p.abs() >= 1e-9 {
            return fail(format!("r_p({theta_b}) = {} for n2 = {n2}", f.r_p));
        }
    }
    let f = fresnel_coefficients(1.0, 1.5, 0.0).map_err(|e| e.to_string())?;
    for (got, want, name) in [
        (f.r_s, -0.2, "r_s"),
        (f.r_p, 0.2, "r_p"),
        (f.t_s, 0.8, "t_s"),
        (f.t_p, 0.8, "t_p"),
    ] {
        if (got - want).abs() >= 1e-12 {
            return fail(format!("normal incidence {name}: {got} vs {want}"));
        }
    }
    Ok(())
}

fn kernel_size_table() -> Result<(), String> {
    let expect = [(16, 2), (32, 4), (64, 4), (128, 4), (256, 4), (512, 6)];
    for (c, k) in expect {
        let got = adaptive_kernel_size(c, KernelParity::Paper);
        if got != k {
            return fail(format!("C={c}: K={got}, expected {k}"));
        }
    }
    Ok(())
}

fn aolp_flip_involution() -> Result<(), String> {
    let mut rng = ChaCha20Rng::seed_from_u64(3);
    for _ in 0..1_000_000 {
        let a: f64 = rng.gen_range(0.0..180.0);
        let back = flip_aolp_value_deg(flip_aolp_value_deg(a));
        if (back - a).abs() >= 1e-12 {
            return fail(format!("double flip of {a} gave {back}"));
        }
    }
    Ok(())
}

fn gradient_ops() -> Result<(), String> {
    let mut rng = ChaCha20Rng::seed_from_u64(4);
    let rand = |shape: &[usize], rng: &mut ChaCha20Rng| {
        ArrayD::from_shape_fn(IxDyn(shape), |_| rng.gen_range(-1.0..1.0))
    };
    // conv2d
    let x = rand(&[1, 2, 6, 6], &mut rng);
    let w = rand(&[3, 2, 3, 3], &mut rng);
    let b = rand(&[3], &mut rng);
    let err = grad_check(
        |t: &mut Tape<f64>, v| {
            let y = t.conv2d(v[0], v[1], v[2], 1, 1)?;
            Ok(t.sum(y))
        },
        &[x, w, b],
        1e-6,
    )
    .map_err(|e| e.to_string())?;
    if err >= 1e-4 {
        return fail(format!("conv2d grad err {err:e}"));
    }
    // sigmoid -> channel_scale path
    let x = rand(&[2, 4, 3, 3], &mut rng);
    let k = rand(&[3], &mut rng);
    let err = grad_check(
        |t: &mut Tape<f64>, v| {
            let p = t.global_avg_pool(v[0])?;
            let m = t.conv1d_channels(p, v[1])?;
            let d = t.sigmoid(m);
            let y = t.channel_scale(v[0], d)?;
            Ok(t.sum(y))
        },
        &[x, k],
        1e-6,
    )
    .map_err(|e| e.to_string())?;
    if err >= 1e-4 {
        return fail(format!("attention-path grad err {err:e}"));
    }
    Ok(())
}

fn gradient_end_to_end() -> Result<(), String> {
    let cfg = EafnetConfig {
        branches: vec![BranchSpec::of(BranchKind::Rgb), BranchSpec::of(BranchKind::Aolp)],
        widths: [3, 4, 5, 6, 7],
        blocks_per_stage: 1,
        num_classes: 4,
        spp_levels: vec![1, 2],
        decoder_width: 4,
        kernel_parity: KernelParity::Paper,
    };
    let worst = end_to_end_grad_check(&cfg, 42, 1, 1e-5).map_err(|e| e.to_string())?;
    if worst >= 1e-3 {
        return fail(format!("end-to-end grad err {worst:e}"));
    }
    Ok(())
}

fn metrics_oracle() -> Result<(), String> {
    let mut rng = ChaCha20Rng::seed_from_u64(5);
    for round in 0..20 {
        let k = 4;
        let truth = Array2::from_shape_fn((16, 16), |_| rng.gen_range(0..k));
        let pred = Array2::from_shape_fn((16, 16), |_| rng.gen_range(0..k));
        let mut cm = ConfusionMatrix::new(k);
        cm.update(&pred, &truth, &[]).map_err(|e| e.to_string())?;
        let metrics = compute_metrics(&cm, &[]);
        for c in 0..k {
            let tp = pred
                .iter()
                .zip(truth.iter())
                .filter(|&(&p, &t)| p == c && t == c)
                .count() as f64;
            let union = pred
                .iter()
                .zip(truth.iter())
                .filter(|&(&p, &t)| p == c || t == c)
                .count() as f64;
            let iou = if union > 0.0 { tp / union } else { 0.0 };
            if (metrics.per_class[c].iou - iou).abs() > 0.0 {
                return fail(format!(
                    "round {round} class {c}: IoU {} vs oracle {iou}",
                    metrics.per_class[c].iou
                ));
            }
        }
    }
    Ok(())
}

fn eac_contract() -> Result<(), String> {
    let mut store = ParamStore::<f64>::new(6);
    let eac = Eac::new(&mut store, "eac", 16, KernelParity::Paper);
    let mut rng = ChaCha20Rng::seed_from_u64(7);
    let x = ArrayD::from_shape_fn(IxDyn(&[2, 16, 4, 4]), |_| rng.gen_range(-1.0..1.0));
    let mut tape = Tape::new();
    let mut ctx = ForwardCtx::new(&mut tape, &store, false);
    let xv = ctx.tape.leaf(x.clone(), false);
    let d = eac.weights(&mut ctx, &store, xv).map_err(|e| e.to_string())?;
    let dv = tape.value(d).clone();
    if !dv.iter().all(|&w| w > 0.0 && w < 1.0) {
        return fail("attention weight outside (0,1)".into());
    }
    let mut tape = Tape::new();
    let mut ctx = ForwardCtx::new(&mut tape, &store, false);
    let xv = ctx.tape.leaf(x.clone(), false);
    let e = eac.forward(&mut ctx, &store, xv).map_err(|e| e.to_string())?;
    let ev = tape.value(e);
    for s in 0..2 {
        for c in 0..16 {
            for iy in 0..4 {
                for ix in 0..4 {
                    let want = x[[s, c, iy, ix]] * dv[[s, c]];
                    let got = ev[[s, c, iy, ix]];
                    if (want - got).abs() >= 1e-6 {
                        return fail(format!("E mismatch at ({s},{c}): {got} vs {want}"));
                    }
                }
            }
        }
    }
    // zero kernel -> D = 0.5 exactly
    let mut store = ParamStore::<f64>::new(6);
    let eac = Eac::new(&mut store, "eac", 16, KernelParity::Paper);
    store.value_mut(eac.kernel).fill(0.0);
    let mut tape = Tape::new();
    let mut ctx = ForwardCtx::new(&mut tape, &store, false);
    let xv = ctx.tape.leaf(x, false);
    let d = eac.weights(&mut ctx, &store, xv).map_err(|e| e.to_string())?;
    if tape.value(d).iter().any(|&w| w != 0.5) {
        return fail("zero kernel did not give D = 0.5".into());
    }
    Ok(())
}

fn pder_round_trip() -> Result<(), String> {
    let mut rng = ChaCha20Rng::seed_from_u64(8);
    let arr = ArrayD::from_shape_fn(IxDyn(&[3, 5, 2]), |_| rng.gen_range(-10.0..10.0f64));
    let dir = tempfile_dir()?;
    let path = dir.join("t.pder");
    save_derived(&PderTensor::F64(arr.clone()), &path).map_err(|e| e.to_string())?;
    match load_derived(&path).map_err(|e| e.to_string())? {
        PderTensor::F64(back) => {
            let same = arr
                .iter()
                .zip(back.iter())
                .all(|(a, b)| a.to_bits() == b.to_bits());
            if !same {
                return fail("f64 payload not bit-exact".into());
            }
        }
        _ => return fail("dtype changed in round trip".into()),
    }
    std::fs::remove_dir_all(&dir).ok();
    Ok(())
}

fn checkpoint_round_trip() -> Result<(), String> {
    let cfg = EafnetConfig {
        branches: vec![BranchSpec::of(BranchKind::Rgb)],
        widths: [3, 4, 5, 6, 7],
        blocks_per_stage: 1,
        num_classes: 3,
        spp_levels: vec![1],
        decoder_width: 4,
        kernel_parity: KernelParity::Paper,
    };
    let net = Eafnet::<f32>::new(cfg, 17).map_err(|e| e.to_string())?;
    let dir = tempfile_dir()?;
    let path = dir.join("m.eafc");
    save_checkpoint(&net, &path).map_err(|e| e.to_string())?;
    let restored = load_checkpoint::<f32>(&path).map_err(|e| e.to_string())?;
    for (a, b) in net.store.entries.iter().zip(restored.store.entries.iter()) {
        let exact = a
            .value
            .iter()
            .zip(b.value.iter())
            .all(|(x, y)| x.to_bits() == y.to_bits());
        if a.name != b.name || !exact {
            return fail(format!("tensor {} not bit-exact", a.name));
        }
    }
    std::fs::remove_dir_all(&dir).ok();
    Ok(())
}

fn stats_dolp_mass() -> Result<(), String> {
    let cfg = SyntheticSceneConfig::default();
    let samples =
        synthesize_dataset(&cfg, ModalityMode::Dolp, 20).map_err(|e| e.to_string())?;
    let stats = histogram(&samples, ModalityKind::Dolp, 100).map_err(|e| e.to_string())?;
    let expect: u64 = samples.iter().map(|s| (s.height() * s.width()) as u64).sum();
    if stats.pixel_total != expect {
        return fail(format!(
            "histogram total {} vs pixel count {expect}",
            stats.pixel_total
        ));
    }
    let mass = stats.mass_below(0.4);
    if mass < 0.8 {
        return fail(format!("only {:.1}% of DoLP mass at or below 0.4", mass * 100.0));
    }
    Ok(())
}

fn tempfile_dir() -> Result<std::path::PathBuf, String> {
    let dir = std::env::temp_dir().join(format!("eaf-verify-{}", std::process::id()));
    std::fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
    Ok(dir)
}

pub const CHECKS: &[Check] = &[
    ("stokes-round-trip", stokes_round_trip),
    ("polarization-ranges", polarization_ranges),
    ("fresnel-brewster", fresnel_brewster),
    ("kernel-size-table", kernel_size_table),
    ("aolp-flip-involution", aolp_flip_involution),
    ("gradient-ops", gradient_ops),
    ("gradient-end-to-end", gradient_end_to_end),
    ("metrics-oracle", metrics_oracle),
    ("eac-contract", eac_contract),
    ("pder-round-trip", pder_round_trip),
    ("checkpoint-round-trip", checkpoint_round_trip),
    ("stats-dolp-mass", stats_dolp_mass),
];

/// Run every check once, printing one timed line each; true when all pass.
pub fn run_all(out: &mut dyn Write) -> std::io::Result<bool> {
    let mut all_ok = true;
    for (name, check) in CHECKS {
        let t0 = Instant::now();
        let result = check();
        let ms = t0.elapsed().as_millis();
        match result {
            Ok(()) => writeln!(out, "PASS {name} ({ms} ms)")?,
            Err(msg) => {
                all_ok = false;
                writeln!(out, "FAIL {name} ({ms} ms): {msg}")?;
            }
        }
    }
    Ok(all_ok)
}
