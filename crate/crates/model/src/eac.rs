use eaf_autograd::{Element, Var};

use crate::config::KernelParity;
use crate::params::{ForwardCtx, ParamId, ParamStore};
use crate::Result;

/// Kernel size for the channel-attention 1-d convolution as a function of
/// the channel count.
///
/// With `KernelParity::Paper`, t = trunc(|log2(C) + 1| / 2) and K = t when t
/// is even, t + 1 otherwise; K is clamped to at least 1. `KernelParity::Odd`
/// flips the parity branch so K is odd, matching common channel-attention
/// implementations.
pub fn adaptive_kernel_size(channels: usize, parity: KernelParity) -> usize {
    assert!(channels > 0, "channel count must be positive");
    let t = ((channels as f64).log2() + 1.0).abs() / 2.0;
    let t = t.trunc() as usize;
    let k = match parity {
        KernelParity::Paper => {
            if t % 2 == 0 {
                t
            } else {
                t + 1
            }
        }
        KernelParity::Odd => {
            if t % 2 == 1 {
                t
            } else {
                t + 1
            }
        }
    };
    k.max(1)
}

/// Efficient channel attention: squeeze to per-channel means, mix neighboring
/// channels with a learned 1-d kernel, gate through a sigmoid, and rescale
/// the input channels by the resulting weights.
#[derive(Debug, Clone)]
pub struct Eac {
    pub kernel: ParamId,
    pub kernel_size: usize,
}

impl Eac {
    pub fn new(
        store: &mut ParamStore<impl Element>,
        name: &str,
        channels: usize,
        parity: KernelParity,
    ) -> Self {
        let kernel_size = adaptive_kernel_size(channels, parity);
        let kernel = store.add_weight(&format!("{name}.kernel"), &[kernel_size], kernel_size);
        Self { kernel, kernel_size }
    }

    /// Channel weights D(x): (N, C, H, W) -> (N, C) in (0, 1).
    pub fn weights<E: Element>(
        &self,
        ctx: &mut ForwardCtx<'_, E>,
        store: &ParamStore<E>,
        x: Var,
    ) -> Result<Var> {
        let pooled = ctx.tape.global_avg_pool(x)?;
        let k = ctx.param(store, self.kernel);
        let mixed = ctx.tape.conv1d_channels(pooled, k)?;
        Ok(ctx.tape.sigmoid(mixed))
    }

    /// Full module output E(x) = D(x) applied channel-wise to x.
    pub fn forward<E: Element>(
        &self,
        ctx: &mut ForwardCtx<'_, E>,
        store: &ParamStore<E>,
        x: Var,
    ) -> Result<Var> {
        let d = self.weights(ctx, store, x)?;
        Ok(ctx.tape.channel_scale(x, d)?)
    }
}

/// One step of the attention-bridged fusion recurrence: each branch feature
/// is reweighted by its own channel attention and the results are summed,
/// plus the previous fusion state when there is one.
#[derive(Debug, Clone)]
pub struct FuseStage {
    pub eacs: Vec<Eac>,
}

impl FuseStage {
    pub fn new(
        store: &mut ParamStore<impl Element>,
        name: &str,
        channels: usize,
        branches: usize,
        parity: KernelParity,
    ) -> Self {
        let eacs = (0..branches)
            .map(|b| Eac::new(store, &format!("{name}.eac{b}"), channels, parity))
            .collect();
        Self { eacs }
    }

    /// Returns the fused map plus the per-branch attention weight vars.
    pub fn forward<E: Element>(
        &self,
        ctx: &mut ForwardCtx<'_, E>,
        store: &ParamStore<E>,
        branch_feats: &[Var],
        m_prev: Option<Var>,
    ) -> Result<(Var, Vec<Var>)> {
        assert_eq!(branch_feats.len(), self.eacs.len());
        let mut weights = Vec::with_capacity(self.eacs.len());
        let mut acc: Option<Var> = m_prev;
        for (eac, &feat) in self.eacs.iter().zip(branch_feats) {
            let d = eac.weights(ctx, store, feat)?;
            let scaled = ctx.tape.channel_scale(feat, d)?;
            weights.push(d);
            acc = Some(match acc {
                Some(a) => ctx.tape.add(a, scaled)?,
                None => scaled,
            });
        }
        Ok((acc.unwrap(), weights))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_table_matches_paper_parity() {
        let expect = [(16, 2), (32, 4), (64, 4), (128, 4), (256, 4), (512, 6)];
        for (c, k) in expect {
            assert_eq!(adaptive_kernel_size(c, KernelParity::Paper), k, "C={c}");
        }
    }

    #[test]
    fn paper_parity_is_always_even_and_positive() {
        for c in 2..=4096 {
            let k = adaptive_kernel_size(c, KernelParity::Paper);
            assert!(k >= 1, "C={c}");
            assert_eq!(k % 2, 0, "C={c} gave odd K={k}");
        }
    }

    #[test]
    fn odd_parity_is_always_odd() {
        for c in 2..=4096 {
            let k = adaptive_kernel_size(c, KernelParity::Odd);
            assert!(k >= 1 && k % 2 == 1, "C={c} gave K={k}");
        }
    }

    #[test]
    fn kernel_grows_monotonically_in_channels() {
        for parity in [KernelParity::Paper, KernelParity::Odd] {
            let mut prev = 0;
            for c in 1..=4096 {
                let k = adaptive_kernel_size(c, parity);
                assert!(k >= prev, "K dropped at C={c}");
                prev = k;
            }
        }
    }
}
