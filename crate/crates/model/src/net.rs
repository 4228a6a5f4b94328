use eaf_autograd::{Element, Tape, Var};
use ndarray::{ArrayD, Ix4};

use crate::config::{BranchKind, EafnetConfig};
use crate::eac::FuseStage;
use crate::layers::{Conv2dLayer, Stage, Stem};
use crate::params::{ForwardCtx, ParamId, ParamStore};
use crate::{ModelError, Result};

/// Channel-attention weights observed at one fusion stage for one branch,
/// shape (batch, channels), values in (0, 1).
#[derive(Debug, Clone)]
pub struct AttentionCapture {
    pub stage: usize,
    pub branch: usize,
    pub kind: BranchKind,
    pub weights: ndarray::Array2<f64>,
}

#[derive(Debug)]
pub struct ForwardOutput {
    /// (N, num_classes, H, W) logits at input resolution.
    pub logits: Var,
    /// Empty for single-branch configurations.
    pub attention: Vec<AttentionCapture>,
    /// Every parameter touched by the pass and its tape leaf.
    pub params: Vec<(ParamId, Var)>,
}

struct BranchEncoder {
    stem: Stem,
    stages: Vec<Stage>,
}

pub struct Eafnet<E: Element> {
    pub config: EafnetConfig,
    pub store: ParamStore<E>,
    branches: Vec<BranchEncoder>,
    /// One fusion step per pyramid level; empty for single-branch models.
    fuse: Vec<FuseStage>,
    /// Residual stages carrying the fused map between levels.
    fusion_trunk: Vec<Stage>,
    spp_project: Conv2dLayer,
    spp_levels: Vec<(usize, Conv2dLayer)>,
    laterals: Vec<Conv2dLayer>,
    classifier: Conv2dLayer,
}

impl<E: Element> Eafnet<E> {
    pub fn new(config: EafnetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new(seed);
        let w = config.widths;
        let multibranch = config.is_multibranch();

        let branches = config
            .branches
            .iter()
            .enumerate()
            .map(|(b, spec)| BranchEncoder {
                stem: Stem::new(&mut store, &format!("branch{b}.stem"), spec.in_channels, w[0]),
                stages: (1..5)
                    .map(|i| {
                        Stage::new(
                            &mut store,
                            &format!("branch{b}.stage{i}"),
                            w[i - 1],
                            w[i],
                            config.blocks_per_stage,
                        )
                    })
                    .collect(),
            })
            .collect();

        let (fuse, fusion_trunk) = if multibranch {
            let fuse = (0..5)
                .map(|i| {
                    FuseStage::new(
                        &mut store,
                        &format!("fuse{i}"),
                        w[i],
                        config.branches.len(),
                        config.kernel_parity,
                    )
                })
                .collect();
            let trunk = (1..5)
                .map(|i| {
                    Stage::new(
                        &mut store,
                        &format!("fusion.stage{i}"),
                        w[i - 1],
                        w[i],
                        config.blocks_per_stage,
                    )
                })
                .collect();
            (fuse, trunk)
        } else {
            (Vec::new(), Vec::new())
        };

        let dw = config.decoder_width;
        let spp_project = Conv2dLayer::new(&mut store, "spp.project", w[4], dw, 1, 1);
        let spp_levels = config
            .spp_levels
            .iter()
            .map(|&g| {
                (
                    g,
                    Conv2dLayer::new(&mut store, &format!("spp.level{g}"), w[4], dw, 1, 1),
                )
            })
            .collect();
        let laterals = (0..4)
            .map(|i| Conv2dLayer::new(&mut store, &format!("decoder.lateral{i}"), w[i], dw, 1, 1))
            .collect();
        let classifier = Conv2dLayer::new(&mut store, "classifier", dw, config.num_classes, 3, 1);

        Ok(Self {
            config,
            store,
            branches,
            fuse,
            fusion_trunk,
            spp_project,
            spp_levels,
            laterals,
            classifier,
        })
    }

    fn check_inputs(&self, tape: &Tape<E>, inputs: &[Var]) -> Result<(usize, usize)> {
        if inputs.len() != self.config.branches.len() {
            return Err(ModelError::InputMismatch(format!(
                "expected {} branch inputs, got {}",
                self.config.branches.len(),
                inputs.len()
            )));
        }
        let mut dims = None;
        for (i, (&v, spec)) in inputs.iter().zip(&self.config.branches).enumerate() {
            let shape = tape.shape(v);
            if shape.len() != 4 || shape[1] != spec.in_channels {
                return Err(ModelError::InputMismatch(format!(
                    "branch {i} expects (N, {}, H, W), got {:?}",
                    spec.in_channels, shape
                )));
            }
            let nhw = (shape[0], shape[2], shape[3]);
            if *dims.get_or_insert(nhw) != nhw {
                return Err(ModelError::InputMismatch(format!(
                    "branch {i} batch/spatial dims {:?} disagree with earlier branches",
                    nhw
                )));
            }
        }
        let (_, h, wd) = dims.unwrap();
        if h % 32 != 0 || wd % 32 != 0 {
            return Err(ModelError::InputMismatch(format!(
                "spatial dims {h}x{wd} must be multiples of 32"
            )));
        }
        Ok((h, wd))
    }

    /// Run the network on one NCHW tensor per branch. Updates batch-norm
    /// running statistics when `training` is set.
    pub fn forward(
        &mut self,
        tape: &mut Tape<E>,
        inputs: &[ArrayD<E>],
        training: bool,
    ) -> Result<ForwardOutput> {
        let input_vars: Vec<Var> = inputs.iter().map(|x| tape.leaf(x.clone(), false)).collect();
        let (in_h, in_w) = self.check_inputs(tape, &input_vars)?;
        let mut ctx = ForwardCtx::new(tape, &self.store, training);
        let store = &mut self.store;
        let multibranch = self.fuse.len() == 5;

        // Per-branch pyramid features, levels 0..5 (strides /2 .. /32).
        let mut feats: Vec<Vec<Var>> = Vec::with_capacity(self.branches.len());
        for (enc, &x) in self.branches.iter().zip(&input_vars) {
            let mut levels = Vec::with_capacity(5);
            let mut y = enc.stem.forward(&mut ctx, store, x)?;
            levels.push(y);
            for stage in &enc.stages {
                y = stage.forward(&mut ctx, store, y)?;
                levels.push(y);
            }
            feats.push(levels);
        }

        // Fusion recurrence; with one branch the branch features are the
        // fused maps directly.
        let mut attention = Vec::new();
        let mut fused = Vec::with_capacity(5);
        if multibranch {
            let mut m_prev: Option<Var> = None;
            for level in 0..5 {
                let branch_feats: Vec<Var> = feats.iter().map(|f| f[level]).collect();
                let carried = match m_prev {
                    Some(m) => Some(self.fusion_trunk[level - 1].forward(&mut ctx, store, m)?),
                    None => None,
                };
                let (m, weights) =
                    self.fuse[level].forward(&mut ctx, store, &branch_feats, carried)?;
                for (b, d) in weights.into_iter().enumerate() {
                    let arr = ctx
                        .tape
                        .value(d)
                        .mapv(eaf_autograd::Element::to_f64)
                        .into_dimensionality::<ndarray::Ix2>()
                        .unwrap();
                    attention.push(AttentionCapture {
                        stage: level + 1,
                        branch: b,
                        kind: self.config.branches[b].kind,
                        weights: arr,
                    });
                }
                fused.push(m);
                m_prev = Some(m);
            }
        } else {
            fused = feats.pop().unwrap();
        }

        // Pyramid pooling on the deepest map; grids that don't fit the
        // feature size are skipped.
        let top = fused[4];
        let top_shape = ctx.tape.shape(top);
        let (fh, fw) = (top_shape[2], top_shape[3]);
        let mut spp = self.spp_project.forward(&mut ctx, store, top)?;
        for (grid, conv) in &self.spp_levels {
            if *grid > fh || *grid > fw {
                continue;
            }
            let pooled = ctx.tape.avg_pool_grid(top, *grid)?;
            let mixed = conv.forward(&mut ctx, store, pooled)?;
            let up = ctx.tape.bilinear_resize(mixed, fh, fw)?;
            spp = ctx.tape.add(spp, up)?;
        }
        let mut d = ctx.tape.relu(spp);

        // Ladder decoder over levels 3..0.
        for level in (0..4).rev() {
            let lateral = self.laterals[level].forward(&mut ctx, store, fused[level])?;
            let up = ctx.tape.bilinear_upsample2(d)?;
            let sum = ctx.tape.add(lateral, up)?;
            d = ctx.tape.relu(sum);
        }

        let logits_half = self.classifier.forward(&mut ctx, store, d)?;
        let logits = ctx.tape.bilinear_resize(logits_half, in_h, in_w)?;
        let params = ctx.used_params();
        Ok(ForwardOutput {
            logits,
            attention,
            params,
        })
    }

    /// Attention weights require at least two branches.
    pub fn require_attention(&self) -> Result<()> {
        if self.config.is_multibranch() {
            Ok(())
        } else {
            Err(ModelError::NoAttention)
        }
    }

    /// Class index per pixel from a logits value tensor.
    pub fn argmax_classes(logits: &ArrayD<E>) -> ndarray::Array3<usize> {
        let l = logits.view().into_dimensionality::<Ix4>().unwrap();
        let (n, k, h, w) = l.dim();
        ndarray::Array3::from_shape_fn((n, h, w), |(s, y, x)| {
            let mut best = 0usize;
            for c in 1..k {
                if l[[s, c, y, x]] > l[[s, best, y, x]] {
                    best = c;
                }
            }
            best
        })
    }
}
