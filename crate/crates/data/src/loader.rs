//! On-disk dataset layout:
//! `<root>/<split>/<id>/` with `i0.png i45.png i90.png i135.png label.png`
//! plus optional `rgb.png` and `disparity.png`.

use std::path::{Path, PathBuf};

use image::DynamicImage;
use ndarray::{Array2, Array3, Axis};

use eaf_polarimetry::{
    compute_aolp, compute_dolp, compute_stokes, AolpConvention, IntensityQuad,
};

use crate::types::{DataError, ModalityKind, ModalityMode, ModalityPlane, Result, Sample};

fn sample_dir(root: &Path, split: &str, id: &str) -> PathBuf {
    root.join(split).join(id)
}

/// Sorted sample ids present under `<root>/<split>/`.
pub fn list_ids(root: &Path, split: &str) -> Result<Vec<String>> {
    let dir = root.join(split);
    let entries = std::fs::read_dir(&dir).map_err(|e| DataError::Io {
        path: dir.display().to_string(),
        source: e,
    })?;
    let mut ids: Vec<String> = entries
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_dir())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .collect();
    ids.sort();
    Ok(ids)
}

/// Decode a PNG into (H, W, C) planes normalized to [0, 1] by the maximum
/// value of its bit depth.
fn read_intensity_png(path: &Path) -> Result<Array3<f64>> {
    if !path.exists() {
        return Err(DataError::MissingFile(path.display().to_string()));
    }
    let img = image::open(path).map_err(|e| DataError::ImageRead {
        path: path.display().to_string(),
        source: e,
    })?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let arr = match img {
        DynamicImage::ImageLuma8(b) => {
            Array3::from_shape_fn((h, w, 1), |(y, x, _)| b[(x as u32, y as u32)].0[0] as f64 / 255.0)
        }
        DynamicImage::ImageLuma16(b) => Array3::from_shape_fn((h, w, 1), |(y, x, _)| {
            b[(x as u32, y as u32)].0[0] as f64 / 65535.0
        }),
        DynamicImage::ImageRgb8(b) => Array3::from_shape_fn((h, w, 3), |(y, x, c)| {
            b[(x as u32, y as u32)].0[c] as f64 / 255.0
        }),
        DynamicImage::ImageRgb16(b) => Array3::from_shape_fn((h, w, 3), |(y, x, c)| {
            b[(x as u32, y as u32)].0[c] as f64 / 65535.0
        }),
        DynamicImage::ImageRgba8(b) => Array3::from_shape_fn((h, w, 3), |(y, x, c)| {
            b[(x as u32, y as u32)].0[c] as f64 / 255.0
        }),
        other => {
            return Err(DataError::Format(format!(
                "{}: unsupported pixel format {:?}",
                path.display(),
                other.color()
            )))
        }
    };
    Ok(arr)
}

fn read_label_png(path: &Path, num_classes: usize) -> Result<Array2<usize>> {
    if !path.exists() {
        return Err(DataError::MissingFile(path.display().to_string()));
    }
    let img = image::open(path).map_err(|e| DataError::ImageRead {
        path: path.display().to_string(),
        source: e,
    })?;
    let luma = img.to_luma8();
    let (w, h) = (luma.width() as usize, luma.height() as usize);
    let label = Array2::from_shape_fn((h, w), |(y, x)| luma[(x as u32, y as u32)].0[0] as usize);
    if let Some(&id) = label.iter().find(|&&v| v >= num_classes) {
        return Err(DataError::LabelOutOfRange {
            id,
            num_classes,
            path: path.display().to_string(),
        });
    }
    Ok(label)
}

fn channel_mean(plane: &Array3<f64>) -> Array2<f64> {
    plane.mean_axis(Axis(2)).expect("non-empty channel axis")
}

fn broadcast_rgb(plane: Array3<f64>) -> Array3<f64> {
    let (h, w, c) = plane.dim();
    if c == 3 {
        plane
    } else {
        let mono = channel_mean(&plane);
        Array3::from_shape_fn((h, w, 3), |(y, x, _)| mono[[y, x]])
    }
}

/// Derive a [`Sample`] from an intensity quad plus label.
///
/// RGB defaults to the mean of the four polarized images (S0 / 2 per
/// channel) unless an explicit RGB image is supplied. Modality planes are the
/// channel mean of the per-channel derivations; AoLP in degrees is divided by
/// 180 so every network input shares [0, 1].
#[allow(clippy::too_many_arguments)]
pub fn sample_from_quad(
    id: &str,
    quad: &IntensityQuad,
    explicit_rgb: Option<Array3<f64>>,
    disparity: Option<Array2<f64>>,
    label: Array2<usize>,
    mode: ModalityMode,
    num_classes: usize,
    convention: AolpConvention,
) -> Result<Sample> {
    let rgb = match explicit_rgb {
        Some(r) => broadcast_rgb(r),
        None => {
            let mean = (&quad.i0 + &quad.i45 + &quad.i90 + &quad.i135) / 4.0;
            broadcast_rgb(mean)
        }
    };
    let stokes = compute_stokes(quad);
    let mut modality = Vec::new();
    for kind in mode.kinds() {
        let plane = match kind {
            ModalityKind::Aolp => channel_mean(&compute_aolp(&stokes, convention)) / 180.0,
            ModalityKind::Dolp => channel_mean(&compute_dolp(&stokes)),
            ModalityKind::Disparity => disparity.clone().ok_or_else(|| {
                DataError::MissingFile(format!("{id}: disparity plane requested but absent"))
            })?,
        };
        modality.push(ModalityPlane { kind, plane });
    }
    let sample = Sample {
        id: id.to_string(),
        rgb,
        modality,
        label,
    };
    sample.validate(num_classes)?;
    Ok(sample)
}

/// Load just the four-direction intensity quad of one sample.
pub fn load_quad(root: &Path, split: &str, id: &str) -> Result<IntensityQuad> {
    let dir = sample_dir(root, split, id);
    let i0 = read_intensity_png(&dir.join("i0.png"))?;
    let i45 = read_intensity_png(&dir.join("i45.png"))?;
    let i90 = read_intensity_png(&dir.join("i90.png"))?;
    let i135 = read_intensity_png(&dir.join("i135.png"))?;
    Ok(IntensityQuad::new(i0, i45, i90, i135)?)
}

/// Load one sample from the directory layout.
pub fn load_sample(
    root: &Path,
    split: &str,
    id: &str,
    mode: ModalityMode,
    num_classes: usize,
    convention: AolpConvention,
) -> Result<Sample> {
    let dir = sample_dir(root, split, id);
    let quad = load_quad(root, split, id)?;
    let rgb_path = dir.join("rgb.png");
    let explicit_rgb = if rgb_path.exists() {
        Some(read_intensity_png(&rgb_path)?)
    } else {
        None
    };
    let disparity = if mode == ModalityMode::Disparity {
        Some(channel_mean(&read_intensity_png(&dir.join("disparity.png"))?))
    } else {
        None
    };
    let label = read_label_png(&dir.join("label.png"), num_classes)?;
    if label.dim() != (quad.height(), quad.width()) {
        return Err(DataError::DimensionMismatch(format!(
            "{}: label {:?} vs quad {:?}",
            dir.display(),
            label.dim(),
            (quad.height(), quad.width())
        )));
    }
    sample_from_quad(id, &quad, explicit_rgb, disparity, label, mode, num_classes, convention)
}

fn write_png16(plane: &Array3<f64>, path: &Path) -> Result<()> {
    let (h, w, c) = plane.dim();
    let to_u16 = |v: f64| (v.clamp(0.0, 1.0) * 65535.0).round() as u16;
    let result = if c == 3 {
        let mut img = image::ImageBuffer::<image::Rgb<u16>, Vec<u16>>::new(w as u32, h as u32);
        for y in 0..h {
            for x in 0..w {
                let px = image::Rgb([
                    to_u16(plane[[y, x, 0]]),
                    to_u16(plane[[y, x, 1]]),
                    to_u16(plane[[y, x, 2]]),
                ]);
                img.put_pixel(x as u32, y as u32, px);
            }
        }
        img.save(path)
    } else {
        let mut img = image::ImageBuffer::<image::Luma<u16>, Vec<u16>>::new(w as u32, h as u32);
        for ((y, x, _), &v) in plane.indexed_iter() {
            img.put_pixel(x as u32, y as u32, image::Luma([to_u16(v)]));
        }
        img.save(path)
    };
    result.map_err(|e| DataError::ImageWrite {
        path: path.display().to_string(),
        source: e,
    })
}

/// Write a quad + label as a dataset directory entry (16-bit intensity PNGs,
/// 8-bit label PNG).
pub fn write_sample_dir(
    root: &Path,
    split: &str,
    id: &str,
    quad: &IntensityQuad,
    label: &Array2<usize>,
) -> Result<()> {
    let dir = sample_dir(root, split, id);
    std::fs::create_dir_all(&dir).map_err(|e| DataError::Io {
        path: dir.display().to_string(),
        source: e,
    })?;
    write_png16(&quad.i0, &dir.join("i0.png"))?;
    write_png16(&quad.i45, &dir.join("i45.png"))?;
    write_png16(&quad.i90, &dir.join("i90.png"))?;
    write_png16(&quad.i135, &dir.join("i135.png"))?;
    let (h, w) = label.dim();
    let mut img = image::GrayImage::new(w as u32, h as u32);
    for ((y, x), &v) in label.indexed_iter() {
        img.put_pixel(x as u32, y as u32, image::Luma([v as u8]));
    }
    img.save(dir.join("label.png")).map_err(|e| DataError::ImageWrite {
        path: dir.join("label.png").display().to_string(),
        source: e,
    })
}
