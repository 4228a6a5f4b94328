use eaf_autograd::{Element, Var};
use ndarray::Ix1;

use crate::params::{ForwardCtx, ParamId, ParamStore};
use crate::Result;

const BN_MOMENTUM: f64 = 0.1;
const BN_EPS: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct Conv2dLayer {
    pub weight: ParamId,
    /// Absent on convolutions followed by batch norm, where a bias would be
    /// cancelled by the mean subtraction.
    pub bias: Option<ParamId>,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2dLayer {
    pub fn new(
        store: &mut ParamStore<impl Element>,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        k: usize,
        stride: usize,
    ) -> Self {
        Self::build(store, name, in_ch, out_ch, k, stride, true)
    }

    pub fn new_no_bias(
        store: &mut ParamStore<impl Element>,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        k: usize,
        stride: usize,
    ) -> Self {
        Self::build(store, name, in_ch, out_ch, k, stride, false)
    }

    fn build(
        store: &mut ParamStore<impl Element>,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        k: usize,
        stride: usize,
        with_bias: bool,
    ) -> Self {
        let weight = store.add_weight(
            &format!("{name}.weight"),
            &[out_ch, in_ch, k, k],
            in_ch * k * k,
        );
        let bias = with_bias.then(|| store.add_zeros(&format!("{name}.bias"), &[out_ch], true));
        Self {
            weight,
            bias,
            stride,
            pad: k / 2,
        }
    }

    pub fn forward<E: Element>(
        &self,
        ctx: &mut ForwardCtx<'_, E>,
        store: &ParamStore<E>,
        x: Var,
    ) -> Result<Var> {
        let w = ctx.param(store, self.weight);
        let b = match self.bias {
            Some(id) => ctx.param(store, id),
            None => {
                let out_ch = ctx.tape.shape(w)[0];
                ctx.tape.leaf(ndarray::ArrayD::zeros(ndarray::IxDyn(&[out_ch])), false)
            }
        };
        Ok(ctx.tape.conv2d(x, w, b, self.stride, self.pad)?)
    }
}

#[derive(Debug, Clone)]
pub struct BnLayer {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

impl BnLayer {
    pub fn new(store: &mut ParamStore<impl Element>, name: &str, ch: usize) -> Self {
        Self {
            gamma: store.add_ones(&format!("{name}.gamma"), &[ch], true),
            beta: store.add_zeros(&format!("{name}.beta"), &[ch], true),
            running_mean: store.add_zeros(&format!("{name}.running_mean"), &[ch], false),
            running_var: store.add_ones(&format!("{name}.running_var"), &[ch], false),
        }
    }

    pub fn forward<E: Element>(
        &self,
        ctx: &mut ForwardCtx<'_, E>,
        store: &mut ParamStore<E>,
        x: Var,
    ) -> Result<Var> {
        let gamma = ctx.param(store, self.gamma);
        let beta = ctx.param(store, self.beta);
        let rm = store
            .value(self.running_mean)
            .view()
            .into_dimensionality::<Ix1>()
            .unwrap()
            .to_owned();
        let rv = store
            .value(self.running_var)
            .view()
            .into_dimensionality::<Ix1>()
            .unwrap()
            .to_owned();
        let (y, mean, var) = ctx
            .tape
            .batch_norm(x, gamma, beta, &rm, &rv, ctx.training, BN_EPS)?;
        if ctx.training {
            let mom = E::from_f64(BN_MOMENTUM);
            let keep = E::one() - mom;
            let rm_new = rm.mapv(|v| v * keep) + mean.mapv(|v| v * mom);
            let rv_new = rv.mapv(|v| v * keep) + var.mapv(|v| v * mom);
            store.value_mut(self.running_mean).assign(&rm_new.into_dyn());
            store.value_mut(self.running_var).assign(&rv_new.into_dyn());
        }
        Ok(y)
    }
}

/// conv-bn-relu-conv-bn with identity or projected skip, then relu.
#[derive(Debug, Clone)]
pub struct ResidualBlock {
    conv1: Conv2dLayer,
    bn1: BnLayer,
    conv2: Conv2dLayer,
    bn2: BnLayer,
    downsample: Option<(Conv2dLayer, BnLayer)>,
}

impl ResidualBlock {
    pub fn new(
        store: &mut ParamStore<impl Element>,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        stride: usize,
    ) -> Self {
        let conv1 = Conv2dLayer::new_no_bias(store, &format!("{name}.conv1"), in_ch, out_ch, 3, stride);
        let bn1 = BnLayer::new(store, &format!("{name}.bn1"), out_ch);
        let conv2 = Conv2dLayer::new_no_bias(store, &format!("{name}.conv2"), out_ch, out_ch, 3, 1);
        let bn2 = BnLayer::new(store, &format!("{name}.bn2"), out_ch);
        let downsample = if stride != 1 || in_ch != out_ch {
            Some((
                Conv2dLayer::new_no_bias(store, &format!("{name}.down.conv"), in_ch, out_ch, 1, stride),
                BnLayer::new(store, &format!("{name}.down.bn"), out_ch),
            ))
        } else {
            None
        };
        Self {
            conv1,
            bn1,
            conv2,
            bn2,
            downsample,
        }
    }

    pub fn forward<E: Element>(
        &self,
        ctx: &mut ForwardCtx<'_, E>,
        store: &mut ParamStore<E>,
        x: Var,
    ) -> Result<Var> {
        let mut y = self.conv1.forward(ctx, store, x)?;
        y = self.bn1.forward(ctx, store, y)?;
        y = ctx.tape.relu(y);
        y = self.conv2.forward(ctx, store, y)?;
        y = self.bn2.forward(ctx, store, y)?;
        let skip = match &self.downsample {
            Some((conv, bn)) => {
                let s = conv.forward(ctx, store, x)?;
                bn.forward(ctx, store, s)?
            }
            None => x,
        };
        let sum = ctx.tape.add(y, skip)?;
        Ok(ctx.tape.relu(sum))
    }
}

/// A stride-2 stack of residual blocks.
#[derive(Debug, Clone)]
pub struct Stage {
    blocks: Vec<ResidualBlock>,
}

impl Stage {
    pub fn new(
        store: &mut ParamStore<impl Element>,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        blocks: usize,
    ) -> Self {
        let blocks = (0..blocks)
            .map(|i| {
                let (ic, stride) = if i == 0 { (in_ch, 2) } else { (out_ch, 1) };
                ResidualBlock::new(store, &format!("{name}.block{i}"), ic, out_ch, stride)
            })
            .collect();
        Self { blocks }
    }

    pub fn forward<E: Element>(
        &self,
        ctx: &mut ForwardCtx<'_, E>,
        store: &mut ParamStore<E>,
        mut x: Var,
    ) -> Result<Var> {
        for b in &self.blocks {
            x = b.forward(ctx, store, x)?;
        }
        Ok(x)
    }
}

/// Stride-2 stem: conv-bn-relu.
#[derive(Debug, Clone)]
pub struct Stem {
    conv: Conv2dLayer,
    bn: BnLayer,
}

impl Stem {
    pub fn new(store: &mut ParamStore<impl Element>, name: &str, in_ch: usize, out_ch: usize) -> Self {
        Self {
            conv: Conv2dLayer::new_no_bias(store, &format!("{name}.conv"), in_ch, out_ch, 3, 2),
            bn: BnLayer::new(store, &format!("{name}.bn"), out_ch),
        }
    }

    pub fn forward<E: Element>(
        &self,
        ctx: &mut ForwardCtx<'_, E>,
        store: &mut ParamStore<E>,
        x: Var,
    ) -> Result<Var> {
        let y = self.conv.forward(ctx, store, x)?;
        let y = self.bn.forward(ctx, store, y)?;
        Ok(ctx.tape.relu(y))
    }
}
