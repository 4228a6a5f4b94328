use eaf_autograd::Tape;
use ndarray::{Array3, ArrayD, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::config::EafnetConfig;
use crate::net::Eafnet;
use crate::Result;

/// Finite-difference check of the full model loss against the analytic
/// parameter gradients.
///
/// Runs one forward/backward in f64, then central differences on a
/// deterministic subsample of at most `per_param` elements of each trainable
/// parameter. Returns the worst relative error
/// |analytic - numeric| / max(1e-8, |analytic| + |numeric|).
pub fn end_to_end_grad_check(
    config: &EafnetConfig,
    seed: u64,
    per_param: usize,
    eps: f64,
) -> Result<f64> {
    let mut net = Eafnet::<f64>::new(config.clone(), seed)?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);

    let (h, w) = (32usize, 32usize);
    let inputs: Vec<ArrayD<f64>> = config
        .branches
        .iter()
        .map(|b| {
            ArrayD::from_shape_fn(IxDyn(&[2, b.in_channels, h, w]), |_| rng.gen_range(0.0..1.0))
        })
        .collect();
    let labels =
        Array3::from_shape_fn((2, h, w), |_| rng.gen_range(0..config.num_classes));

    let loss_of = |net: &mut Eafnet<f64>| -> Result<f64> {
        let mut tape = Tape::new();
        let out = net.forward(&mut tape, &inputs, true)?;
        let (loss, _) = tape.softmax_cross_entropy(out.logits, &labels, &[])?;
        Ok(tape.scalar(loss))
    };

    // Analytic gradients.
    let mut tape = Tape::new();
    let out = net.forward(&mut tape, &inputs, true)?;
    let (loss, _) = tape.softmax_cross_entropy(out.logits, &labels, &[])?;
    tape.backward(loss)?;
    let analytic: Vec<(usize, ArrayD<f64>)> = out
        .params
        .iter()
        .filter(|(id, _)| net.store.entries[id.0].trainable)
        .map(|(id, var)| (id.0, tape.grad(*var).expect("trainable grad").clone()))
        .collect();

    let mut worst = 0.0f64;
    for (idx, grad) in analytic {
        let len = grad.len();
        let take = per_param.min(len).max(1);
        let stride = (len / take).max(1);
        for j in (0..len).step_by(stride).take(take) {
            let orig = net.store.entries[idx].value.as_slice_mut().unwrap()[j];
            net.store.entries[idx].value.as_slice_mut().unwrap()[j] = orig + eps;
            let up = loss_of(&mut net)?;
            net.store.entries[idx].value.as_slice_mut().unwrap()[j] = orig - eps;
            let down = loss_of(&mut net)?;
            net.store.entries[idx].value.as_slice_mut().unwrap()[j] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let a = grad.as_slice().unwrap()[j];
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
            if rel > worst {
                worst = rel;
            }
        }
    }
    Ok(worst)
}
