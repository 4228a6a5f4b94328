//! Forward kernels and their recorded backward ops.

use ndarray::{Array1, Array2, Array3, Array4, ArrayD, ArrayView2, ArrayView3, ArrayView4, Axis, Ix1, Ix2, Ix4, IxDyn};

use crate::tape::{BackwardOp, Tape, Var};
use crate::{AutogradError, Element, Result};

fn as4<E: Element>(a: &ArrayD<E>) -> Result<ArrayView4<'_, E>> {
    a.view()
        .into_dimensionality::<Ix4>()
        .map_err(|_| AutogradError::ShapeMismatch(format!("expected NCHW, got {:?}", a.shape())))
}

fn as2<E: Element>(a: &ArrayD<E>) -> Result<ArrayView2<'_, E>> {
    a.view()
        .into_dimensionality::<Ix2>()
        .map_err(|_| AutogradError::ShapeMismatch(format!("expected 2-d, got {:?}", a.shape())))
}

fn scalar_value<E: Element>(v: E) -> ArrayD<E> {
    ArrayD::from_elem(IxDyn(&[]), v)
}

// ---------------------------------------------------------------------------
// elementwise

struct AddOp;

impl<E: Element> BackwardOp<E> for AddOp {
    fn backward(&self, _i: &[&ArrayD<E>], _o: &ArrayD<E>, g: &ArrayD<E>) -> Vec<Option<ArrayD<E>>> {
        vec![Some(g.clone()), Some(g.clone())]
    }
}

struct ReluOp;

impl<E: Element> BackwardOp<E> for ReluOp {
    fn backward(&self, i: &[&ArrayD<E>], _o: &ArrayD<E>, g: &ArrayD<E>) -> Vec<Option<ArrayD<E>>> {
        let mut gx = g.clone();
        gx.zip_mut_with(i[0], |gv, &xv| {
            if xv <= E::zero() {
                *gv = E::zero();
            }
        });
        vec![Some(gx)]
    }
}

struct SigmoidOp;

impl<E: Element> BackwardOp<E> for SigmoidOp {
    fn backward(&self, _i: &[&ArrayD<E>], o: &ArrayD<E>, g: &ArrayD<E>) -> Vec<Option<ArrayD<E>>> {
        let mut gx = g.clone();
        gx.zip_mut_with(o, |gv, &y| {
            *gv = *gv * y * (E::one() - y);
        });
        vec![Some(gx)]
    }
}

struct SumOp;

impl<E: Element> BackwardOp<E> for SumOp {
    fn backward(&self, i: &[&ArrayD<E>], _o: &ArrayD<E>, g: &ArrayD<E>) -> Vec<Option<ArrayD<E>>> {
        let gv = *g.iter().next().unwrap();
        vec![Some(ArrayD::from_elem(i[0].raw_dim(), gv))]
    }
}

struct DotConstOp<E: Element> {
    proj: ArrayD<E>,
}

impl<E: Element> BackwardOp<E> for DotConstOp<E> {
    fn backward(&self, _i: &[&ArrayD<E>], _o: &ArrayD<E>, g: &ArrayD<E>) -> Vec<Option<ArrayD<E>>> {
        let gv = *g.iter().next().unwrap();
        vec![Some(&self.proj * gv)]
    }
}

// ---------------------------------------------------------------------------
// convolution

fn im2col_sample<E: Element>(
    x: &ArrayView3<'_, E>,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
) -> Array2<E> {
    let (cin, h, w) = x.dim();
    let mut col = Array2::zeros((cin * k * k, ho * wo));
    for c in 0..cin {
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                for oy in 0..ho {
                    let iy = (oy * stride + ki) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for ox in 0..wo {
                        let ix = (ox * stride + kj) as isize - pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        col[[row, oy * wo + ox]] = x[[c, iy as usize, ix as usize]];
                    }
                }
            }
        }
    }
    col
}

fn col2im_sample<E: Element>(
    gcol: &ArrayView2<'_, E>,
    cin: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
) -> Array3<E> {
    let mut gx = Array3::zeros((cin, h, w));
    for c in 0..cin {
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                for oy in 0..ho {
                    let iy = (oy * stride + ki) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for ox in 0..wo {
                        let ix = (ox * stride + kj) as isize - pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        gx[[c, iy as usize, ix as usize]] =
                            gx[[c, iy as usize, ix as usize]] + gcol[[row, oy * wo + ox]];
                    }
                }
            }
        }
    }
    gx
}

struct Conv2dOp<E: Element> {
    k: usize,
    stride: usize,
    pad: usize,
    cols: Vec<Array2<E>>,
}

impl<E: Element> BackwardOp<E> for Conv2dOp<E> {
    fn backward(&self, i: &[&ArrayD<E>], o: &ArrayD<E>, g: &ArrayD<E>) -> Vec<Option<ArrayD<E>>> {
        let x = as4(i[0]).unwrap();
        let w = as4(i[1]).unwrap();
        let (n, cin, h, wd) = x.dim();
        let (oc, _, _, _) = w.dim();
        let (_, _, ho, wo) = as4(o).unwrap().dim();
        let ckk = cin * self.k * self.k;
        let wmat = w
            .to_owned()
            .into_shape((oc, ckk))
            .unwrap();
        let g4 = as4(g).unwrap();

        let mut gx = Array4::<E>::zeros((n, cin, h, wd));
        let mut gw = Array2::<E>::zeros((oc, ckk));
        let mut gb = Array1::<E>::zeros(oc);
        for s in 0..n {
            let gs = g4
                .index_axis(Axis(0), s)
                .to_owned()
                .into_shape((oc, ho * wo))
                .unwrap();
            gb += &gs.sum_axis(Axis(1));
            gw = gw + gs.dot(&self.cols[s].t());
            let gcol = wmat.t().dot(&gs);
            let gxs = col2im_sample(&gcol.view(), cin, h, wd, self.k, self.stride, self.pad, ho, wo);
            gx.index_axis_mut(Axis(0), s).assign(&gxs);
        }
        vec![
            Some(gx.into_dyn()),
            Some(gw.into_shape((oc, cin, self.k, self.k)).unwrap().into_dyn()),
            Some(gb.into_dyn()),
        ]
    }
}

struct Conv1dChannelsOp {
    pad_left: usize,
}

impl<E: Element> BackwardOp<E> for Conv1dChannelsOp {
    fn backward(&self, i: &[&ArrayD<E>], _o: &ArrayD<E>, g: &ArrayD<E>) -> Vec<Option<ArrayD<E>>> {
        let v = as2(i[0]).unwrap();
        let kern = i[1].view().into_dimensionality::<Ix1>().unwrap();
        let g2 = as2(g).unwrap();
        let (n, c) = v.dim();
        let klen = kern.len();
        let mut gv = Array2::<E>::zeros((n, c));
        let mut gk = Array1::<E>::zeros(klen);
        for s in 0..n {
            for ci in 0..c {
                let go = g2[[s, ci]];
                for j in 0..klen {
                    let src = ci as isize + j as isize - self.pad_left as isize;
                    if src < 0 || src >= c as isize {
                        continue;
                    }
                    gv[[s, src as usize]] = gv[[s, src as usize]] + go * kern[j];
                    gk[j] = gk[j] + go * v[[s, src as usize]];
                }
            }
        }
        vec![Some(gv.into_dyn()), Some(gk.into_dyn())]
    }
}

// ---------------------------------------------------------------------------
// pooling

struct GlobalAvgPoolOp;

impl<E: Element> BackwardOp<E> for GlobalAvgPoolOp {
    fn backward(&self, i: &[&ArrayD<E>], _o: &ArrayD<E>, g: &ArrayD<E>) -> Vec<Option<ArrayD<E>>> {
        let x = as4(i[0]).unwrap();
        let (n, c, h, w) = x.dim();
        let g2 = as2(g).unwrap();
        let inv = E::from_f64(1.0 / (h * w) as f64);
        let mut gx = Array4::<E>::zeros((n, c, h, w));
        for s in 0..n {
            for ci in 0..c {
                let gv = g2[[s, ci]] * inv;
                gx.slice_mut(ndarray::s![s, ci, .., ..]).fill(gv);
            }
        }
        vec![Some(gx.into_dyn())]
    }
}

struct MaxPool2dOp {
    // flat (iy, ix) source per output element, row-major over (n, c, ho, wo)
    argmax: Vec<(usize, usize)>,
}

impl<E: Element> BackwardOp<E> for MaxPool2dOp {
    fn backward(&self, i: &[&ArrayD<E>], o: &ArrayD<E>, g: &ArrayD<E>) -> Vec<Option<ArrayD<E>>> {
        let x = as4(i[0]).unwrap();
        let (n, c, h, w) = x.dim();
        let (_, _, ho, wo) = as4(o).unwrap().dim();
        let g4 = as4(g).unwrap();
        let mut gx = Array4::<E>::zeros((n, c, h, w));
        let mut idx = 0;
        for s in 0..n {
            for ci in 0..c {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let (iy, ix) = self.argmax[idx];
                        gx[[s, ci, iy, ix]] = gx[[s, ci, iy, ix]] + g4[[s, ci, oy, ox]];
                        idx += 1;
                    }
                }
            }
        }
        vec![Some(gx.into_dyn())]
    }
}

fn grid_bounds(size: usize, bins: usize, i: usize) -> (usize, usize) {
    (i * size / bins, (i + 1) * size / bins)
}

struct AvgPoolGridOp {
    grid: usize,
}

impl<E: Element> BackwardOp<E> for AvgPoolGridOp {
    fn backward(&self, i: &[&ArrayD<E>], _o: &ArrayD<E>, g: &ArrayD<E>) -> Vec<Option<ArrayD<E>>> {
        let x = as4(i[0]).unwrap();
        let (n, c, h, w) = x.dim();
        let g4 = as4(g).unwrap();
        let mut gx = Array4::<E>::zeros((n, c, h, w));
        for s in 0..n {
            for ci in 0..c {
                for gy in 0..self.grid {
                    let (y0, y1) = grid_bounds(h, self.grid, gy);
                    for gx_i in 0..self.grid {
                        let (x0, x1) = grid_bounds(w, self.grid, gx_i);
                        let inv = E::from_f64(1.0 / ((y1 - y0) * (x1 - x0)) as f64);
                        let gv = g4[[s, ci, gy, gx_i]] * inv;
                        for iy in y0..y1 {
                            for ix in x0..x1 {
                                gx[[s, ci, iy, ix]] = gx[[s, ci, iy, ix]] + gv;
                            }
                        }
                    }
                }
            }
        }
        vec![Some(gx.into_dyn())]
    }
}

// ---------------------------------------------------------------------------
// channel reweighting / concat / resize

struct ChannelScaleOp;

impl<E: Element> BackwardOp<E> for ChannelScaleOp {
    fn backward(&self, i: &[&ArrayD<E>], _o: &ArrayD<E>, g: &ArrayD<E>) -> Vec<Option<ArrayD<E>>> {
        let x = as4(i[0]).unwrap();
        let d = as2(i[1]).unwrap();
        let g4 = as4(g).unwrap();
        let (n, c, h, w) = x.dim();
        let mut gx = Array4::<E>::zeros((n, c, h, w));
        let mut gd = Array2::<E>::zeros((n, c));
        for s in 0..n {
            for ci in 0..c {
                let dv = d[[s, ci]];
                let mut acc = E::zero();
                for iy in 0..h {
                    for ix in 0..w {
                        let gv = g4[[s, ci, iy, ix]];
                        gx[[s, ci, iy, ix]] = gv * dv;
                        acc = acc + gv * x[[s, ci, iy, ix]];
                    }
                }
                gd[[s, ci]] = acc;
            }
        }
        vec![Some(gx.into_dyn()), Some(gd.into_dyn())]
    }
}

struct ConcatChannelsOp {
    widths: Vec<usize>,
}

impl<E: Element> BackwardOp<E> for ConcatChannelsOp {
    fn backward(&self, _i: &[&ArrayD<E>], _o: &ArrayD<E>, g: &ArrayD<E>) -> Vec<Option<ArrayD<E>>> {
        let g4 = as4(g).unwrap();
        let mut out = Vec::with_capacity(self.widths.len());
        let mut start = 0;
        for &w in &self.widths {
            out.push(Some(
                g4.slice(ndarray::s![.., start..start + w, .., ..])
                    .to_owned()
                    .into_dyn(),
            ));
            start += w;
        }
        out
    }
}

/// Half-pixel sampling coordinates for one axis.
fn resize_axis(input: usize, output: usize) -> Vec<(usize, usize, f64, f64)> {
    let ratio = input as f64 / output as f64;
    (0..output)
        .map(|o| {
            let src = ((o as f64 + 0.5) * ratio - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(input - 1);
            let i1 = (i0 + 1).min(input - 1);
            let f = src - i0 as f64;
            (i0, i1, 1.0 - f, f)
        })
        .collect()
}

struct BilinearResizeOp {
    rows: Vec<(usize, usize, f64, f64)>,
    cols: Vec<(usize, usize, f64, f64)>,
}

impl<E: Element> BackwardOp<E> for BilinearResizeOp {
    fn backward(&self, i: &[&ArrayD<E>], _o: &ArrayD<E>, g: &ArrayD<E>) -> Vec<Option<ArrayD<E>>> {
        let x = as4(i[0]).unwrap();
        let (n, c, h, w) = x.dim();
        let g4 = as4(g).unwrap();
        let mut gx = Array4::<E>::zeros((n, c, h, w));
        for s in 0..n {
            for ci in 0..c {
                for (oy, &(y0, y1, wy0, wy1)) in self.rows.iter().enumerate() {
                    for (ox, &(x0, x1, wx0, wx1)) in self.cols.iter().enumerate() {
                        let gv = g4[[s, ci, oy, ox]];
                        gx[[s, ci, y0, x0]] = gx[[s, ci, y0, x0]] + gv * E::from_f64(wy0 * wx0);
                        gx[[s, ci, y0, x1]] = gx[[s, ci, y0, x1]] + gv * E::from_f64(wy0 * wx1);
                        gx[[s, ci, y1, x0]] = gx[[s, ci, y1, x0]] + gv * E::from_f64(wy1 * wx0);
                        gx[[s, ci, y1, x1]] = gx[[s, ci, y1, x1]] + gv * E::from_f64(wy1 * wx1);
                    }
                }
            }
        }
        vec![Some(gx.into_dyn())]
    }
}

// ---------------------------------------------------------------------------
// normalization

struct BatchNormOp<E: Element> {
    xhat: Array4<E>,
    inv_std: Array1<E>,
    // true when normalization used batch statistics (training mode)
    batch_stats: bool,
}

impl<E: Element> BackwardOp<E> for BatchNormOp<E> {
    fn backward(&self, i: &[&ArrayD<E>], _o: &ArrayD<E>, g: &ArrayD<E>) -> Vec<Option<ArrayD<E>>> {
        let x = as4(i[0]).unwrap();
        let gamma = i[1].view().into_dimensionality::<Ix1>().unwrap();
        let g4 = as4(g).unwrap();
        let (n, c, h, w) = x.dim();
        let m = E::from_f64((n * h * w) as f64);
        let mut gx = Array4::<E>::zeros((n, c, h, w));
        let mut ggamma = Array1::<E>::zeros(c);
        let mut gbeta = Array1::<E>::zeros(c);
        for ci in 0..c {
            let mut sum_dxhat = E::zero();
            let mut sum_dxhat_xhat = E::zero();
            let mut sum_g = E::zero();
            for s in 0..n {
                for iy in 0..h {
                    for ix in 0..w {
                        let gv = g4[[s, ci, iy, ix]];
                        let dxhat = gv * gamma[ci];
                        sum_g = sum_g + gv;
                        sum_dxhat = sum_dxhat + dxhat;
                        sum_dxhat_xhat = sum_dxhat_xhat + dxhat * self.xhat[[s, ci, iy, ix]];
                    }
                }
            }
            gbeta[ci] = sum_g;
            let mut acc_gamma = E::zero();
            for s in 0..n {
                for iy in 0..h {
                    for ix in 0..w {
                        let gv = g4[[s, ci, iy, ix]];
                        let xh = self.xhat[[s, ci, iy, ix]];
                        acc_gamma = acc_gamma + gv * xh;
                        let dxhat = gv * gamma[ci];
                        gx[[s, ci, iy, ix]] = if self.batch_stats {
                            (dxhat - sum_dxhat / m - xh * sum_dxhat_xhat / m) * self.inv_std[ci]
                        } else {
                            dxhat * self.inv_std[ci]
                        };
                    }
                }
            }
            ggamma[ci] = acc_gamma;
        }
        vec![
            Some(gx.into_dyn()),
            Some(ggamma.into_dyn()),
            Some(gbeta.into_dyn()),
        ]
    }
}

#[cfg(any(test, feature = "mutation"))]
struct SigmoidCorruptOp;

#[cfg(any(test, feature = "mutation"))]
impl<E: Element> BackwardOp<E> for SigmoidCorruptOp {
    fn backward(&self, _i: &[&ArrayD<E>], o: &ArrayD<E>, g: &ArrayD<E>) -> Vec<Option<ArrayD<E>>> {
        let mut gx = g.clone();
        let off = E::from_f64(1.05);
        gx.zip_mut_with(o, |gv, &y| {
            *gv = *gv * y * (E::one() - y) * off;
        });
        vec![Some(gx)]
    }
}

// ---------------------------------------------------------------------------
// loss

struct SoftmaxCrossEntropyOp<E: Element> {
    softmax: Array4<E>,
    labels: Array3<usize>,
    mask: Array3<bool>,
    count: usize,
}

impl<E: Element> BackwardOp<E> for SoftmaxCrossEntropyOp<E> {
    fn backward(&self, i: &[&ArrayD<E>], _o: &ArrayD<E>, g: &ArrayD<E>) -> Vec<Option<ArrayD<E>>> {
        let (n, k, h, w) = as4(i[0]).unwrap().dim();
        let gv = *g.iter().next().unwrap();
        let mut gx = Array4::<E>::zeros((n, k, h, w));
        if self.count == 0 {
            return vec![Some(gx.into_dyn())];
        }
        let inv = E::from_f64(1.0 / self.count as f64);
        for s in 0..n {
            for iy in 0..h {
                for ix in 0..w {
                    if !self.mask[[s, iy, ix]] {
                        continue;
                    }
                    let lab = self.labels[[s, iy, ix]];
                    for cl in 0..k {
                        let p = self.softmax[[s, cl, iy, ix]];
                        let onehot = if cl == lab { E::one() } else { E::zero() };
                        gx[[s, cl, iy, ix]] = gv * (p - onehot) * inv;
                    }
                }
            }
        }
        vec![Some(gx.into_dyn())]
    }
}

// ---------------------------------------------------------------------------
// public surface

impl<E: Element> Tape<E> {
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(AutogradError::ShapeMismatch(format!(
                "add: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let v = self.value(a) + self.value(b);
        Ok(self.push(v, vec![a.0, b.0], Box::new(AddOp)))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.value(x).mapv(|e| if e > E::zero() { e } else { E::zero() });
        self.push(v, vec![x.0], Box::new(ReluOp))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let v = self
            .value(x)
            .mapv(|e| E::one() / (E::one() + (-e).exp()));
        self.push(v, vec![x.0], Box::new(SigmoidOp))
    }

    /// Sigmoid with a deliberately wrong backward pass. Exists only so the
    /// gradient checker's sensitivity can itself be tested.
    #[cfg(any(test, feature = "mutation"))]
    pub fn sigmoid_corrupted(&mut self, x: Var) -> Var {
        let v = self
            .value(x)
            .mapv(|e| E::one() / (E::one() + (-e).exp()));
        self.push(v, vec![x.0], Box::new(SigmoidCorruptOp))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.value(x).iter().fold(E::zero(), |a, &b| a + b);
        self.push(scalar_value(total), vec![x.0], Box::new(SumOp))
    }

    /// Fixed projection to a scalar: sum(x * proj). Used by the gradient checker.
    pub fn dot_const(&mut self, x: Var, proj: ArrayD<E>) -> Result<Var> {
        if self.shape(x) != proj.shape() {
            return Err(AutogradError::ShapeMismatch(format!(
                "dot_const: {:?} vs {:?}",
                self.shape(x),
                proj.shape()
            )));
        }
        let total = self
            .value(x)
            .iter()
            .zip(proj.iter())
            .fold(E::zero(), |a, (&x, &p)| a + x * p);
        Ok(self.push(scalar_value(total), vec![x.0], Box::new(DotConstOp { proj })))
    }

    /// 2-d cross-correlation over NCHW input with OIkk kernels.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        let xv = as4(self.value(x))?;
        let wv = as4(self.value(w))?;
        let bv = self.value(b);
        let (n, cin, h, wd) = xv.dim();
        let (oc, cin2, kh, kw) = wv.dim();
        if cin != cin2 || kh != kw || bv.len() != oc {
            return Err(AutogradError::ShapeMismatch(format!(
                "conv2d: x {:?}, w {:?}, b {:?}",
                xv.dim(),
                wv.dim(),
                bv.shape()
            )));
        }
        let k = kh;
        if h + 2 * pad < k || wd + 2 * pad < k || stride == 0 {
            return Err(AutogradError::InvalidArgument(format!(
                "conv2d: input {h}x{wd} with pad {pad} too small for kernel {k} (stride {stride})"
            )));
        }
        let ho = (h + 2 * pad - k) / stride + 1;
        let wo = (wd + 2 * pad - k) / stride + 1;
        let ckk = cin * k * k;
        let wmat = wv.to_owned().into_shape((oc, ckk)).unwrap();
        let mut out = Array4::<E>::zeros((n, oc, ho, wo));
        let mut cols = Vec::with_capacity(n);
        for s in 0..n {
            let col = im2col_sample(&xv.index_axis(Axis(0), s), k, stride, pad, ho, wo);
            let mut o2 = wmat.dot(&col);
            for (oi, mut row) in o2.axis_iter_mut(Axis(0)).enumerate() {
                let bias = bv[[oi]];
                row.mapv_inplace(|v| v + bias);
            }
            out.index_axis_mut(Axis(0), s)
                .assign(&o2.into_shape((oc, ho, wo)).unwrap());
            cols.push(col);
        }
        Ok(self.push(
            out.into_dyn(),
            vec![x.0, w.0, b.0],
            Box::new(Conv2dOp { k, stride, pad, cols }),
        ))
    }

    /// 1-d convolution across the channel axis of a (N, C) vector batch.
    ///
    /// Zero padding is asymmetric (left (K-1)/2, right the remainder) so the
    /// output length stays C for both even and odd K.
    pub fn conv1d_channels(&mut self, v: Var, kernel: Var) -> Result<Var> {
        let vv = as2(self.value(v))?;
        let kv = self.value(kernel);
        if kv.ndim() != 1 || kv.is_empty() {
            return Err(AutogradError::ShapeMismatch(format!(
                "conv1d kernel must be non-empty 1-d, got {:?}",
                kv.shape()
            )));
        }
        let (n, c) = vv.dim();
        let klen = kv.len();
        let pad_left = (klen - 1) / 2;
        let kern = kv.view().into_dimensionality::<Ix1>().unwrap();
        let mut out = Array2::<E>::zeros((n, c));
        for s in 0..n {
            for ci in 0..c {
                let mut acc = E::zero();
                for j in 0..klen {
                    let src = ci as isize + j as isize - pad_left as isize;
                    if src < 0 || src >= c as isize {
                        continue;
                    }
                    acc = acc + vv[[s, src as usize]] * kern[j];
                }
                out[[s, ci]] = acc;
            }
        }
        Ok(self.push(
            out.into_dyn(),
            vec![v.0, kernel.0],
            Box::new(Conv1dChannelsOp { pad_left }),
        ))
    }

    /// Mean over the spatial extent of each channel: (N, C, H, W) -> (N, C).
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let xv = as4(self.value(x))?;
        let (n, c, h, w) = xv.dim();
        let inv = E::from_f64(1.0 / (h * w) as f64);
        let mut out = Array2::<E>::zeros((n, c));
        for s in 0..n {
            for ci in 0..c {
                let mut acc = E::zero();
                for iy in 0..h {
                    for ix in 0..w {
                        acc = acc + xv[[s, ci, iy, ix]];
                    }
                }
                out[[s, ci]] = acc * inv;
            }
        }
        Ok(self.push(out.into_dyn(), vec![x.0], Box::new(GlobalAvgPoolOp)))
    }

    /// 2x2 max pooling with stride 2. Ties resolve to the first maximum in
    /// row-major scan order.
    pub fn max_pool2d(&mut self, x: Var) -> Result<Var> {
        let xv = as4(self.value(x))?;
        let (n, c, h, w) = xv.dim();
        if h < 2 || w < 2 {
            return Err(AutogradError::InvalidArgument(format!(
                "max_pool2d: spatial dims {h}x{w} below pool size"
            )));
        }
        let (ho, wo) = (h / 2, w / 2);
        let mut out = Array4::<E>::zeros((n, c, ho, wo));
        let mut argmax = Vec::with_capacity(n * c * ho * wo);
        for s in 0..n {
            for ci in 0..c {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut best = xv[[s, ci, oy * 2, ox * 2]];
                        let mut best_at = (oy * 2, ox * 2);
                        for dy in 0..2 {
                            for dx in 0..2 {
                                let (iy, ix) = (oy * 2 + dy, ox * 2 + dx);
                                if xv[[s, ci, iy, ix]] > best {
                                    best = xv[[s, ci, iy, ix]];
                                    best_at = (iy, ix);
                                }
                            }
                        }
                        out[[s, ci, oy, ox]] = best;
                        argmax.push(best_at);
                    }
                }
            }
        }
        Ok(self.push(out.into_dyn(), vec![x.0], Box::new(MaxPool2dOp { argmax })))
    }

    /// Adaptive average pooling to a g x g output.
    pub fn avg_pool_grid(&mut self, x: Var, grid: usize) -> Result<Var> {
        let xv = as4(self.value(x))?;
        let (n, c, h, w) = xv.dim();
        if grid == 0 || h < grid || w < grid {
            return Err(AutogradError::InvalidArgument(format!(
                "avg_pool_grid: {h}x{w} input below grid {grid}"
            )));
        }
        let mut out = Array4::<E>::zeros((n, c, grid, grid));
        for s in 0..n {
            for ci in 0..c {
                for gy in 0..grid {
                    let (y0, y1) = grid_bounds(h, grid, gy);
                    for gx in 0..grid {
                        let (x0, x1) = grid_bounds(w, grid, gx);
                        let mut acc = E::zero();
                        for iy in y0..y1 {
                            for ix in x0..x1 {
                                acc = acc + xv[[s, ci, iy, ix]];
                            }
                        }
                        out[[s, ci, gy, gx]] =
                            acc * E::from_f64(1.0 / ((y1 - y0) * (x1 - x0)) as f64);
                    }
                }
            }
        }
        Ok(self.push(out.into_dyn(), vec![x.0], Box::new(AvgPoolGridOp { grid })))
    }

    /// Multiply channel k of x by the per-sample scalar d[n, k].
    pub fn channel_scale(&mut self, x: Var, d: Var) -> Result<Var> {
        let xv = as4(self.value(x))?;
        let dv = as2(self.value(d))?;
        let (n, c, h, w) = xv.dim();
        if dv.dim() != (n, c) {
            return Err(AutogradError::ShapeMismatch(format!(
                "channel_scale: x {:?} vs d {:?}",
                xv.dim(),
                dv.dim()
            )));
        }
        let mut out = Array4::<E>::zeros((n, c, h, w));
        for s in 0..n {
            for ci in 0..c {
                let scale = dv[[s, ci]];
                for iy in 0..h {
                    for ix in 0..w {
                        out[[s, ci, iy, ix]] = xv[[s, ci, iy, ix]] * scale;
                    }
                }
            }
        }
        Ok(self.push(out.into_dyn(), vec![x.0, d.0], Box::new(ChannelScaleOp)))
    }

    /// Concatenate NCHW tensors along the channel axis.
    pub fn concat_channels(&mut self, xs: &[Var]) -> Result<Var> {
        if xs.is_empty() {
            return Err(AutogradError::InvalidArgument("concat of zero tensors".into()));
        }
        let first = as4(self.value(xs[0]))?.dim();
        let mut widths = Vec::with_capacity(xs.len());
        for &v in xs {
            let d = as4(self.value(v))?.dim();
            if (d.0, d.2, d.3) != (first.0, first.2, first.3) {
                return Err(AutogradError::ShapeMismatch(format!(
                    "concat_channels: {:?} vs {:?}",
                    d, first
                )));
            }
            widths.push(d.1);
        }
        let views: Vec<_> = xs.iter().map(|&v| as4(self.value(v)).unwrap()).collect();
        let out = ndarray::concatenate(Axis(1), &views).unwrap();
        let parents = xs.iter().map(|v| v.0).collect();
        Ok(self.push(out.into_dyn(), parents, Box::new(ConcatChannelsOp { widths })))
    }

    /// Bilinear resampling to an arbitrary spatial size (half-pixel centers).
    pub fn bilinear_resize(&mut self, x: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let xv = as4(self.value(x))?;
        let (n, c, h, w) = xv.dim();
        if out_h == 0 || out_w == 0 {
            return Err(AutogradError::InvalidArgument("resize to empty output".into()));
        }
        let rows = resize_axis(h, out_h);
        let cols = resize_axis(w, out_w);
        let mut out = Array4::<E>::zeros((n, c, out_h, out_w));
        for s in 0..n {
            for ci in 0..c {
                for (oy, &(y0, y1, wy0, wy1)) in rows.iter().enumerate() {
                    for (ox, &(x0, x1, wx0, wx1)) in cols.iter().enumerate() {
                        let v = xv[[s, ci, y0, x0]].to_f64() * (wy0 * wx0)
                            + xv[[s, ci, y0, x1]].to_f64() * (wy0 * wx1)
                            + xv[[s, ci, y1, x0]].to_f64() * (wy1 * wx0)
                            + xv[[s, ci, y1, x1]].to_f64() * (wy1 * wx1);
                        out[[s, ci, oy, ox]] = E::from_f64(v);
                    }
                }
            }
        }
        Ok(self.push(
            out.into_dyn(),
            vec![x.0],
            Box::new(BilinearResizeOp { rows, cols }),
        ))
    }

    /// x2 bilinear upsampling.
    pub fn bilinear_upsample2(&mut self, x: Var) -> Result<Var> {
        let xv = as4(self.value(x))?;
        let (_, _, h, w) = xv.dim();
        self.bilinear_resize(x, h * 2, w * 2)
    }

    /// Per-channel standardization.
    ///
    /// Training mode normalizes with batch statistics and returns the biased
    /// batch mean/variance so the caller can update its running estimates;
    /// eval mode normalizes with the provided running statistics.
    #[allow(clippy::too_many_arguments)]
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &Array1<E>,
        running_var: &Array1<E>,
        training: bool,
        eps: f64,
    ) -> Result<(Var, Array1<E>, Array1<E>)> {
        let xv = as4(self.value(x))?.to_owned();
        let (n, c, h, w) = xv.dim();
        let gv = self.value(gamma);
        let bv = self.value(beta);
        if gv.len() != c || bv.len() != c || running_mean.len() != c || running_var.len() != c {
            return Err(AutogradError::ShapeMismatch(format!(
                "batch_norm: C={c}, gamma {}, beta {}, stats {}/{}",
                gv.len(),
                bv.len(),
                running_mean.len(),
                running_var.len()
            )));
        }
        if training && n < 2 {
            return Err(AutogradError::InvalidArgument(
                "batch_norm training mode requires batch >= 2".into(),
            ));
        }
        let m = (n * h * w) as f64;
        let (mean, var) = if training {
            let mut mean = Array1::<E>::zeros(c);
            let mut var = Array1::<E>::zeros(c);
            for ci in 0..c {
                let mut acc = E::zero();
                for s in 0..n {
                    for iy in 0..h {
                        for ix in 0..w {
                            acc = acc + xv[[s, ci, iy, ix]];
                        }
                    }
                }
                let mu = acc * E::from_f64(1.0 / m);
                let mut vacc = E::zero();
                for s in 0..n {
                    for iy in 0..h {
                        for ix in 0..w {
                            let d = xv[[s, ci, iy, ix]] - mu;
                            vacc = vacc + d * d;
                        }
                    }
                }
                mean[ci] = mu;
                var[ci] = vacc * E::from_f64(1.0 / m);
            }
            (mean, var)
        } else {
            (running_mean.clone(), running_var.clone())
        };
        let gv = gv.view().into_dimensionality::<Ix1>().unwrap().to_owned();
        let bv = bv.view().into_dimensionality::<Ix1>().unwrap().to_owned();
        let mut inv_std = Array1::<E>::zeros(c);
        for ci in 0..c {
            inv_std[ci] = E::one() / (var[ci] + E::from_f64(eps)).sqrt();
        }
        let mut xhat = Array4::<E>::zeros((n, c, h, w));
        let mut out = Array4::<E>::zeros((n, c, h, w));
        for s in 0..n {
            for ci in 0..c {
                for iy in 0..h {
                    for ix in 0..w {
                        let xh = (xv[[s, ci, iy, ix]] - mean[ci]) * inv_std[ci];
                        xhat[[s, ci, iy, ix]] = xh;
                        out[[s, ci, iy, ix]] = gv[ci] * xh + bv[ci];
                    }
                }
            }
        }
        let var_out = var.clone();
        let v = self.push(
            out.into_dyn(),
            vec![x.0, gamma.0, beta.0],
            Box::new(BatchNormOp {
                xhat,
                inv_std,
                batch_stats: training,
            }),
        );
        Ok((v, mean, var_out))
    }

    /// Mean cross entropy over non-ignored pixels.
    ///
    /// Returns the scalar loss and the number of contributing pixels; a zero
    /// count yields a zero loss with zero gradient.
    pub fn softmax_cross_entropy(
        &mut self,
        logits: Var,
        labels: &Array3<usize>,
        ignore_ids: &[usize],
    ) -> Result<(Var, usize)> {
        let lv = as4(self.value(logits))?;
        let (n, k, h, w) = lv.dim();
        if labels.dim() != (n, h, w) {
            return Err(AutogradError::ShapeMismatch(format!(
                "cross_entropy: logits {:?} vs labels {:?}",
                lv.dim(),
                labels.dim()
            )));
        }
        let mut softmax = Array4::<E>::zeros((n, k, h, w));
        let mut mask = Array3::<bool>::from_elem((n, h, w), false);
        let mut count = 0usize;
        let mut loss = 0.0f64;
        for s in 0..n {
            for iy in 0..h {
                for ix in 0..w {
                    let lab = labels[[s, iy, ix]];
                    let ignored = ignore_ids.contains(&lab);
                    if !ignored && lab >= k {
                        return Err(AutogradError::InvalidArgument(format!(
                            "label {lab} out of range for {k} classes at ({s},{iy},{ix})"
                        )));
                    }
                    let mut maxv = lv[[s, 0, iy, ix]];
                    for cl in 1..k {
                        if lv[[s, cl, iy, ix]] > maxv {
                            maxv = lv[[s, cl, iy, ix]];
                        }
                    }
                    let mut denom = 0.0f64;
                    for cl in 0..k {
                        denom += (lv[[s, cl, iy, ix]] - maxv).to_f64().exp();
                    }
                    for cl in 0..k {
                        softmax[[s, cl, iy, ix]] =
                            E::from_f64((lv[[s, cl, iy, ix]] - maxv).to_f64().exp() / denom);
                    }
                    if !ignored {
                        mask[[s, iy, ix]] = true;
                        count += 1;
                        loss -= ((lv[[s, lab, iy, ix]] - maxv).to_f64() - denom.ln()).min(0.0);
                    }
                }
            }
        }
        let loss = if count == 0 { 0.0 } else { loss / count as f64 };
        let v = self.push(
            scalar_value(E::from_f64(loss)),
            vec![logits.0],
            Box::new(SoftmaxCrossEntropyOp {
                softmax,
                labels: labels.clone(),
                mask,
                count,
            }),
        );
        Ok((v, count))
    }
}
