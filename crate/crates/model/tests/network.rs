use eaf_autograd::Tape;
use eaf_model::{
    end_to_end_grad_check, BranchKind, BranchSpec, Eafnet, EafnetConfig, KernelParity, ParamStore,
};
use ndarray::{ArrayD, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

fn micro_config(branches: &[BranchKind]) -> EafnetConfig {
    EafnetConfig {
        branches: branches.iter().map(|&k| BranchSpec::of(k)).collect(),
        widths: [3, 4, 5, 6, 7],
        blocks_per_stage: 1,
        num_classes: 4,
        spp_levels: vec![1, 2, 4],
        decoder_width: 4,
        kernel_parity: KernelParity::Paper,
    }
}

fn random_input(shape: &[usize], seed: u64) -> ArrayD<f64> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    ArrayD::from_shape_fn(IxDyn(shape), |_| rng.gen_range(0.0..1.0))
}

#[test]
fn logits_match_input_resolution_and_class_count() {
    let cfg = EafnetConfig {
        num_classes: 9,
        ..micro_config(&[BranchKind::Rgb, BranchKind::Aolp])
    };
    let mut net = Eafnet::<f64>::new(cfg, 7).unwrap();
    let mut tape = Tape::new();
    let inputs = [
        random_input(&[1, 3, 64, 64], 1),
        random_input(&[1, 1, 64, 64], 2),
    ];
    let out = net.forward(&mut tape, &inputs, false).unwrap();
    assert_eq!(tape.shape(out.logits), &[1, 9, 64, 64]);
}

#[test]
fn attention_weights_lie_in_unit_interval() {
    let cfg = micro_config(&[BranchKind::Rgb, BranchKind::Dolp]);
    let mut net = Eafnet::<f64>::new(cfg, 11).unwrap();
    let mut tape = Tape::new();
    let inputs = [
        random_input(&[2, 3, 32, 32], 3),
        random_input(&[2, 1, 32, 32], 4),
    ];
    let out = net.forward(&mut tape, &inputs, false).unwrap();
    // 5 fusion levels x 2 branches.
    assert_eq!(out.attention.len(), 10);
    for cap in &out.attention {
        assert!(cap.weights.iter().all(|&w| w > 0.0 && w < 1.0));
        assert_eq!(cap.weights.nrows(), 2);
    }
}

#[test]
fn single_branch_has_no_attention() {
    let cfg = micro_config(&[BranchKind::Rgb]);
    let mut net = Eafnet::<f64>::new(cfg, 5).unwrap();
    assert!(net.require_attention().is_err());
    let mut tape = Tape::new();
    let out = net
        .forward(&mut tape, &[random_input(&[1, 3, 32, 32], 9)], false)
        .unwrap();
    assert!(out.attention.is_empty());
}

#[test]
fn rejects_wrong_input_channels() {
    let cfg = micro_config(&[BranchKind::Rgb]);
    let mut net = Eafnet::<f64>::new(cfg, 5).unwrap();
    let mut tape = Tape::new();
    let err = net
        .forward(&mut tape, &[random_input(&[1, 2, 32, 32], 9)], false)
        .unwrap_err();
    assert!(err.to_string().contains("branch 0"));
}

#[test]
fn rejects_non_multiple_of_32_input() {
    let cfg = micro_config(&[BranchKind::Rgb]);
    let mut net = Eafnet::<f64>::new(cfg, 5).unwrap();
    let mut tape = Tape::new();
    assert!(net
        .forward(&mut tape, &[random_input(&[1, 3, 48, 48], 9)], false)
        .is_err());
}

// Channel attention with an all-zero kernel gives sigmoid(0) = 0.5 on every
// channel, so the module output is exactly half the input.
#[test]
fn eac_zero_kernel_halves_input() {
    use eaf_model::Eac;
    let mut store = ParamStore::<f64>::new(0);
    let eac = Eac::new(&mut store, "eac", 16, KernelParity::Paper);
    store.value_mut(eac.kernel).fill(0.0);
    let mut tape = Tape::new();
    let mut ctx = eaf_model::ForwardCtx::new(&mut tape, &store, false);
    let x = random_input(&[2, 16, 5, 5], 21);
    let xv = ctx.tape.leaf(x.clone(), false);
    let y = eac.forward(&mut ctx, &store, xv).unwrap();
    let yv = tape.value(y);
    for (a, b) in x.iter().zip(yv.iter()) {
        assert!((0.5 * a - b).abs() < 1e-12);
    }
}

// The module must equal channel_scale(x, sigmoid(conv1d(gap(x), k))) computed
// by hand.
#[test]
fn eac_matches_composed_oracle() {
    use eaf_model::Eac;
    let mut store = ParamStore::<f64>::new(3);
    let eac = Eac::new(&mut store, "eac", 8, KernelParity::Paper);
    let kernel: Vec<f64> = store.value(eac.kernel).iter().copied().collect();
    let x = random_input(&[1, 8, 3, 3], 33);

    let mut tape = Tape::new();
    let mut ctx = eaf_model::ForwardCtx::new(&mut tape, &store, false);
    let xv = ctx.tape.leaf(x.clone(), false);
    let y = eac.forward(&mut ctx, &store, xv).unwrap();
    let got = tape.value(y).clone();

    // Hand-rolled reference.
    let c = 8usize;
    let mut pooled = vec![0.0f64; c];
    for ci in 0..c {
        let mut acc = 0.0;
        for iy in 0..3 {
            for ix in 0..3 {
                acc += x[[0, ci, iy, ix]];
            }
        }
        pooled[ci] = acc / 9.0;
    }
    let pad_left = (kernel.len() - 1) / 2;
    for ci in 0..c {
        let mut mixed = 0.0;
        for (j, &kj) in kernel.iter().enumerate() {
            let src = ci as isize + j as isize - pad_left as isize;
            if src >= 0 && (src as usize) < c {
                mixed += pooled[src as usize] * kj;
            }
        }
        let d = 1.0 / (1.0 + (-mixed).exp());
        for iy in 0..3 {
            for ix in 0..3 {
                let want = x[[0, ci, iy, ix]] * d;
                assert!(
                    (got[[0, ci, iy, ix]] - want).abs() < 1e-6,
                    "channel {ci}: {} vs {}",
                    got[[0, ci, iy, ix]],
                    want
                );
            }
        }
    }
}

// Scaling one channel of the input up must not decrease that channel's
// attention weight when the kernel is non-negative.
#[test]
fn eac_weight_monotone_in_channel_energy() {
    use eaf_model::Eac;
    let mut store = ParamStore::<f64>::new(4);
    let eac = Eac::new(&mut store, "eac", 16, KernelParity::Paper);
    store.value_mut(eac.kernel).mapv_inplace(f64::abs);
    let base = random_input(&[1, 16, 4, 4], 50);
    let weight_of = |x: &ArrayD<f64>, ch: usize| -> f64 {
        let mut tape = Tape::new();
        let mut ctx = eaf_model::ForwardCtx::new(&mut tape, &store, false);
        let xv = ctx.tape.leaf(x.clone(), false);
        let d = eac.weights(&mut ctx, &store, xv).unwrap();
        tape.value(d)[[0, ch]]
    };
    for ch in [0usize, 7, 15] {
        let w0 = weight_of(&base, ch);
        let mut boosted = base.clone();
        for iy in 0..4 {
            for ix in 0..4 {
                boosted[[0, ch, iy, ix]] *= 3.0;
            }
        }
        let w1 = weight_of(&boosted, ch);
        assert!(w1 >= w0, "channel {ch}: {w1} < {w0}");
    }
}

// Summation over branches is order-independent, so permuting which feature
// map feeds which attention head while permuting the heads identically must
// give the same fused map.
#[test]
fn fuse_stage_is_permutation_equivariant() {
    use eaf_model::FuseStage;
    let mut store = ParamStore::<f64>::new(8);
    let fuse = FuseStage::new(&mut store, "fuse", 8, 3, KernelParity::Paper);
    let feats: Vec<ArrayD<f64>> = (0..3).map(|i| random_input(&[2, 8, 4, 4], 60 + i)).collect();

    let run = |order: &[usize]| -> ArrayD<f64> {
        let mut tape = Tape::new();
        let mut ctx = eaf_model::ForwardCtx::new(&mut tape, &store, false);
        let mut scaled_sum: Option<eaf_autograd::Var> = None;
        for &i in order {
            let xv = ctx.tape.leaf(feats[i].clone(), false);
            let d = fuse.eacs[i].weights(&mut ctx, &store, xv).unwrap();
            let s = ctx.tape.channel_scale(xv, d).unwrap();
            scaled_sum = Some(match scaled_sum {
                Some(a) => ctx.tape.add(a, s).unwrap(),
                None => s,
            });
        }
        tape.value(scaled_sum.unwrap()).clone()
    };

    let a = run(&[0, 1, 2]);
    let b = run(&[2, 0, 1]);
    for (x, y) in a.iter().zip(b.iter()) {
        assert!((x - y).abs() < 1e-6);
    }
}

// As the pre-sigmoid response grows, attention weights saturate toward 1 and
// the module approaches the identity.
#[test]
fn eac_saturates_to_identity_for_large_response() {
    use eaf_model::Eac;
    let mut store = ParamStore::<f64>::new(9);
    let eac = Eac::new(&mut store, "eac", 16, KernelParity::Paper);
    store.value_mut(eac.kernel).fill(100.0);
    let x = random_input(&[1, 16, 4, 4], 77).mapv(|v| v + 1.0);
    let mut tape = Tape::new();
    let mut ctx = eaf_model::ForwardCtx::new(&mut tape, &store, false);
    let xv = ctx.tape.leaf(x.clone(), false);
    let y = eac.forward(&mut ctx, &store, xv).unwrap();
    let yv = tape.value(y);
    for (a, b) in x.iter().zip(yv.iter()) {
        assert!((a - b).abs() < 1e-9);
    }
}

#[test]
fn config_validation_rejects_bad_setups() {
    let mut cfg = micro_config(&[BranchKind::Rgb]);
    cfg.branches.clear();
    assert!(cfg.validate().is_err());

    let mut cfg = micro_config(&[BranchKind::Rgb]);
    cfg.num_classes = 1;
    assert!(cfg.validate().is_err());

    let mut cfg = micro_config(&[BranchKind::Rgb]);
    cfg.widths[2] = 0;
    assert!(cfg.validate().is_err());
}

#[test]
fn end_to_end_gradients_match_finite_differences() {
    let cfg = micro_config(&[BranchKind::Rgb, BranchKind::Aolp]);
    let worst = end_to_end_grad_check(&cfg, 42, 2, 1e-5).unwrap();
    assert!(worst < 1e-3, "worst relative error {worst}");
}

#[test]
fn single_branch_gradients_match_finite_differences() {
    let cfg = micro_config(&[BranchKind::AolpDolp]);
    let worst = end_to_end_grad_check(&cfg, 43, 2, 1e-5).unwrap();
    assert!(worst < 1e-3, "worst relative error {worst}");
}
