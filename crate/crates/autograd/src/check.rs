//! Central finite-difference verification of reverse-mode gradients.

use ndarray::ArrayD;

use crate::tape::{Tape, Var};
use crate::Result;

/// Relative error with |a - b| / max(1e-8, |a| + |b|) normalization.
fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs() + b.abs()).max(1e-8)
}

/// Compares the reverse-mode gradient of a scalar-valued closure against
/// central finite differences, element by element, and returns the maximum
/// relative error over all input elements.
///
/// The closure receives a fresh tape and one `Var` per input; it must return
/// a scalar output. All arithmetic is f64.
pub fn grad_check<F>(f: F, inputs: &[ArrayD<f64>], eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let eval = |arrays: &[ArrayD<f64>]| -> Result<f64> {
        let mut tape = Tape::<f64>::new();
        let vars: Vec<Var> = arrays.iter().map(|a| tape.leaf(a.clone(), false)).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.scalar(out))
    };

    // analytic gradients
    let mut tape = Tape::<f64>::new();
    let vars: Vec<Var> = inputs.iter().map(|a| tape.leaf(a.clone(), true)).collect();
    let out = f(&mut tape, &vars)?;
    tape.backward(out)?;
    let analytic: Vec<ArrayD<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, a)| {
            tape.grad(v)
                .cloned()
                .unwrap_or_else(|| ArrayD::zeros(a.raw_dim()))
        })
        .collect();

    let mut work: Vec<ArrayD<f64>> = inputs.to_vec();
    let mut max_err = 0.0f64;
    for (pi, input) in inputs.iter().enumerate() {
        for idx in 0..input.len() {
            let orig = input.as_slice().unwrap()[idx];
            work[pi].as_slice_mut().unwrap()[idx] = orig + eps;
            let fp = eval(&work)?;
            work[pi].as_slice_mut().unwrap()[idx] = orig - eps;
            let fm = eval(&work)?;
            work[pi].as_slice_mut().unwrap()[idx] = orig;
            let numeric = (fp - fm) / (2.0 * eps);
            let a = analytic[pi].as_slice().unwrap()[idx];
            max_err = max_err.max(rel_err(a, numeric));
        }
    }
    Ok(max_err)
}

/// [`grad_check`] for closures with non-scalar outputs: the output is reduced
/// by a fixed projection supplied by the caller.
pub fn grad_check_projected<F>(
    f: F,
    inputs: &[ArrayD<f64>],
    proj: ArrayD<f64>,
    eps: f64,
) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    grad_check(
        |tape, vars| {
            let out = f(tape, vars)?;
            tape.dot_const(out, proj.clone())
        },
        inputs,
        eps,
    )
}
