//! Deterministic scale / crop / flip augmentation.
//!
//! The same geometric transform is applied to every plane of a sample;
//! continuous planes resample bilinearly, labels nearest-neighbor. When a
//! horizontal flip fires, AoLP planes additionally pass through the value
//! remap a -> (1 - a) mod 1 (the normalized form of the 180 - AoLP rule).

use ndarray::{Array2, Array3};
use rand::Rng;
use rand_chacha::ChaCha20Rng;

use crate::types::{AugmentationConfig, ModalityKind, ModalityPlane, Result, Sample};

/// Seed for one sample's transform, derived from the global seed and the
/// sample id so any parallel schedule yields identical outputs.
pub fn per_sample_seed(global_seed: u64, id: &str, epoch: u64) -> u64 {
    // FNV-1a over the id, mixed with seed and epoch
    let mut h: u64 = 0xcbf29ce484222325;
    for b in id.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h ^ global_seed.rotate_left(17) ^ epoch.wrapping_mul(0x9e3779b97f4a7c15)
}

fn resize_plane_bilinear(plane: &Array2<f64>, oh: usize, ow: usize) -> Array2<f64> {
    let (h, w) = plane.dim();
    if (h, w) == (oh, ow) {
        return plane.clone();
    }
    let map = |o: usize, input: usize, output: usize| -> (usize, usize, f64) {
        let src = ((o as f64 + 0.5) * input as f64 / output as f64 - 0.5).max(0.0);
        let i0 = (src.floor() as usize).min(input - 1);
        let i1 = (i0 + 1).min(input - 1);
        (i0, i1, src - i0 as f64)
    };
    Array2::from_shape_fn((oh, ow), |(y, x)| {
        let (y0, y1, fy) = map(y, h, oh);
        let (x0, x1, fx) = map(x, w, ow);
        plane[[y0, x0]] * (1.0 - fy) * (1.0 - fx)
            + plane[[y0, x1]] * (1.0 - fy) * fx
            + plane[[y1, x0]] * fy * (1.0 - fx)
            + plane[[y1, x1]] * fy * fx
    })
}

fn resize_label_nearest(label: &Array2<usize>, oh: usize, ow: usize) -> Array2<usize> {
    let (h, w) = label.dim();
    if (h, w) == (oh, ow) {
        return label.clone();
    }
    Array2::from_shape_fn((oh, ow), |(y, x)| {
        let sy = (((y as f64 + 0.5) * h as f64 / oh as f64 - 0.5).round().max(0.0) as usize).min(h - 1);
        let sx = (((x as f64 + 0.5) * w as f64 / ow as f64 - 0.5).round().max(0.0) as usize).min(w - 1);
        label[[sy, sx]]
    })
}

/// Reflect index i into [0, n).
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let mut i = i;
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    i = i.rem_euclid(period);
    if i >= n {
        i = period - i;
    }
    i as usize
}

fn pad_plane_reflect(plane: &Array2<f64>, th: usize, tw: usize) -> Array2<f64> {
    let (h, w) = plane.dim();
    if h >= th && w >= tw {
        return plane.clone();
    }
    let (oh, ow) = (h.max(th), w.max(tw));
    Array2::from_shape_fn((oh, ow), |(y, x)| {
        plane[[reflect(y as isize, h), reflect(x as isize, w)]]
    })
}

fn pad_label_background(label: &Array2<usize>, th: usize, tw: usize) -> Array2<usize> {
    let (h, w) = label.dim();
    if h >= th && w >= tw {
        return label.clone();
    }
    let (oh, ow) = (h.max(th), w.max(tw));
    Array2::from_shape_fn((oh, ow), |(y, x)| {
        if y < h && x < w {
            label[[y, x]]
        } else {
            0
        }
    })
}

fn crop_plane(plane: &Array2<f64>, y0: usize, x0: usize, size: usize) -> Array2<f64> {
    plane.slice(ndarray::s![y0..y0 + size, x0..x0 + size]).to_owned()
}

fn flip_plane(plane: &Array2<f64>) -> Array2<f64> {
    let (h, w) = plane.dim();
    Array2::from_shape_fn((h, w), |(y, x)| plane[[y, w - 1 - x]])
}

fn rgb_planes(rgb: &Array3<f64>) -> [Array2<f64>; 3] {
    let (h, w, _) = rgb.dim();
    [0, 1, 2].map(|c| Array2::from_shape_fn((h, w), |(y, x)| rgb[[y, x, c]]))
}

fn planes_to_rgb(planes: &[Array2<f64>; 3]) -> Array3<f64> {
    let (h, w) = planes[0].dim();
    Array3::from_shape_fn((h, w, 3), |(y, x, c)| planes[c][[y, x]])
}

/// Apply the scale / crop / flip recipe to one sample.
///
/// A deterministic function of `(sample, rng state)`; pass an rng seeded by
/// [`per_sample_seed`] for reproducible parallel pipelines.
pub fn augment(sample: &Sample, cfg: &AugmentationConfig, rng: &mut ChaCha20Rng) -> Result<Sample> {
    cfg.validate()?;
    let scale = if cfg.scale_min == cfg.scale_max {
        cfg.scale_min
    } else {
        rng.gen_range(cfg.scale_min..cfg.scale_max)
    };
    let (h, w) = (sample.height(), sample.width());
    let (sh, sw) = (
        ((h as f64 * scale).round() as usize).max(1),
        ((w as f64 * scale).round() as usize).max(1),
    );

    let mut cont: Vec<Array2<f64>> = rgb_planes(&sample.rgb).to_vec();
    cont.extend(sample.modality.iter().map(|p| p.plane.clone()));
    let mut cont: Vec<Array2<f64>> = cont
        .iter()
        .map(|p| pad_plane_reflect(&resize_plane_bilinear(p, sh, sw), cfg.crop, cfg.crop))
        .collect();
    let mut label = pad_label_background(&resize_label_nearest(&sample.label, sh, sw), cfg.crop, cfg.crop);

    let (ph, pw) = (sh.max(cfg.crop), sw.max(cfg.crop));
    let y0 = if ph > cfg.crop { rng.gen_range(0..=ph - cfg.crop) } else { 0 };
    let x0 = if pw > cfg.crop { rng.gen_range(0..=pw - cfg.crop) } else { 0 };
    for p in cont.iter_mut() {
        *p = crop_plane(p, y0, x0, cfg.crop);
    }
    label = label.slice(ndarray::s![y0..y0 + cfg.crop, x0..x0 + cfg.crop]).to_owned();

    let flip = rng.gen_range(0.0..1.0) < cfg.hflip_prob;
    if flip {
        for p in cont.iter_mut() {
            *p = flip_plane(p);
        }
        label = {
            let (lh, lw) = label.dim();
            Array2::from_shape_fn((lh, lw), |(y, x)| label[[y, lw - 1 - x]])
        };
        for (i, mp) in sample.modality.iter().enumerate() {
            if mp.kind == ModalityKind::Aolp {
                cont[3 + i].mapv_inplace(|a| {
                    let v = 1.0 - a;
                    if v >= 1.0 {
                        v - 1.0
                    } else {
                        v
                    }
                });
            }
        }
    }

    let mut out_planes = cont;
    let modality: Vec<ModalityPlane> = sample
        .modality
        .iter()
        .enumerate()
        .map(|(i, mp)| ModalityPlane {
            kind: mp.kind,
            plane: out_planes[3 + i].mapv(|v| v.clamp(0.0, 1.0)),
        })
        .collect();
    for p in out_planes[..3].iter_mut() {
        p.mapv_inplace(|v| v.clamp(0.0, 1.0));
    }
    let rgb = planes_to_rgb(&[
        out_planes[0].clone(),
        out_planes[1].clone(),
        out_planes[2].clone(),
    ]);
    Ok(Sample {
        id: sample.id.clone(),
        rgb,
        modality,
        label,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn sample_2x2() -> Sample {
        Sample {
            id: "t".into(),
            rgb: Array3::from_shape_fn((4, 4, 3), |(y, x, c)| (y * 4 + x + c) as f64 / 20.0),
            modality: vec![ModalityPlane {
                kind: ModalityKind::Aolp,
                plane: Array2::from_elem((4, 4), 30.0 / 180.0),
            }],
            label: Array2::from_shape_fn((4, 4), |(y, x)| (y + x) % 2),
        }
    }

    fn cfg(crop: usize) -> AugmentationConfig {
        AugmentationConfig {
            scale_min: 1.0,
            scale_max: 1.0,
            crop,
            hflip_prob: 0.0,
            seed: 0,
        }
    }

    #[test]
    fn identity_transform_is_bitwise() {
        let s = sample_2x2();
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let out = augment(&s, &cfg(4), &mut rng).unwrap();
        assert_eq!(out.rgb, s.rgb);
        assert_eq!(out.label, s.label);
        assert_eq!(out.modality[0].plane, s.modality[0].plane);
    }

    #[test]
    fn flip_applies_aolp_value_map() {
        let s = sample_2x2();
        let mut c = cfg(4);
        c.hflip_prob = 1.0;
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let out = augment(&s, &c, &mut rng).unwrap();
        for &v in out.modality[0].plane.iter() {
            assert!((v - 150.0 / 180.0).abs() < 1e-12);
        }
    }

    #[test]
    fn double_flip_restores_aolp() {
        let mut s = sample_2x2();
        s.modality[0].plane = Array2::from_shape_fn((4, 4), |(y, x)| ((y * 4 + x) as f64) / 16.0);
        let mut c = cfg(4);
        c.hflip_prob = 1.0;
        let mut r1 = ChaCha20Rng::seed_from_u64(2);
        let once = augment(&s, &c, &mut r1).unwrap();
        let mut r2 = ChaCha20Rng::seed_from_u64(2);
        let twice = augment(&once, &c, &mut r2).unwrap();
        for (a, b) in twice.modality[0].plane.iter().zip(s.modality[0].plane.iter()) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn same_seed_identical_output() {
        let s = sample_2x2();
        let c = AugmentationConfig {
            scale_min: 0.75,
            scale_max: 1.25,
            crop: 4,
            hflip_prob: 0.5,
            seed: 0,
        };
        let run = |seed| {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            augment(&s, &c, &mut rng).unwrap()
        };
        let (a, b) = (run(9), run(9));
        assert_eq!(a.rgb, b.rgb);
        assert_eq!(a.label, b.label);
        assert_eq!(a.modality[0].plane, b.modality[0].plane);
    }

    #[test]
    fn alignment_preserved_and_pad_when_small() {
        let s = sample_2x2();
        let c = AugmentationConfig {
            scale_min: 0.8,
            scale_max: 1.2,
            crop: 8, // larger than the 4x4 input, forces padding
            hflip_prob: 0.5,
            seed: 0,
        };
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let out = augment(&s, &c, &mut rng).unwrap();
        assert_eq!(out.rgb.dim(), (8, 8, 3));
        assert_eq!(out.label.dim(), (8, 8));
        assert_eq!(out.modality[0].plane.dim(), (8, 8));
    }

    #[test]
    fn outputs_stay_normalized() {
        let s = sample_2x2();
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let c = AugmentationConfig {
            scale_min: 0.75,
            scale_max: 1.25,
            crop: 4,
            hflip_prob: 1.0,
            seed: 0,
        };
        let out = augment(&s, &c, &mut rng).unwrap();
        assert!(out.rgb.iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert!(out.modality[0].plane.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }
}
