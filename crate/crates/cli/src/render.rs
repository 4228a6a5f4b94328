use std::path::Path;

use image::{GrayImage, RgbImage};
use ndarray::Array2;

use crate::Result;

/// DoLP preview: [0, 1] mapped linearly to 8-bit grayscale.
pub fn dolp_preview(plane: &Array2<f64>) -> GrayImage {
    let (h, w) = plane.dim();
    GrayImage::from_fn(w as u32, h as u32, |x, y| {
        let v = plane[[y as usize, x as usize]].clamp(0.0, 1.0);
        image::Luma([(v * 255.0).round() as u8])
    })
}

fn hsv_to_rgb(h_deg: f64, s: f64, v: f64) -> [u8; 3] {
    let h = h_deg.rem_euclid(360.0) / 60.0;
    let c = v * s;
    let x = c * (1.0 - (h % 2.0 - 1.0).abs());
    let (r, g, b) = match h as usize {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    let q = |u: f64| ((u + m).clamp(0.0, 1.0) * 255.0).round() as u8;
    [q(r), q(g), q(b)]
}

/// AoLP preview: the angle is cyclic with period 180 degrees, so hue is
/// twice the angle and 0 / 180 degrees render as the same color.
///
/// `plane` holds normalized angles in [0, 1) (degrees / 180).
pub fn aolp_preview(plane: &Array2<f64>) -> RgbImage {
    let (h, w) = plane.dim();
    RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let hue = plane[[y as usize, x as usize]].rem_euclid(1.0) * 360.0;
        image::Rgb(hsv_to_rgb(hue, 1.0, 1.0))
    })
}

/// Write a class-id map as an indexed-color PNG with the given palette.
pub fn save_indexed_png(path: &Path, labels: &Array2<usize>, palette: &[[u8; 3]]) -> Result<()> {
    let (h, w) = labels.dim();
    let file = std::fs::File::create(path)?;
    let mut enc = png::Encoder::new(std::io::BufWriter::new(file), w as u32, h as u32);
    enc.set_color(png::ColorType::Indexed);
    enc.set_depth(png::BitDepth::Eight);
    enc.set_palette(palette.iter().flatten().copied().collect::<Vec<u8>>());
    let mut writer = enc.write_header()?;
    let data: Vec<u8> = labels.iter().map(|&c| c as u8).collect();
    writer.write_image_data(&data)?;
    Ok(())
}

/// Read an indexed PNG back to class ids (used by tests).
pub fn load_indexed_png(path: &Path) -> Result<Array2<usize>> {
    let decoder = png::Decoder::new(std::fs::File::open(path)?);
    let mut reader = decoder
        .read_info()
        .map_err(|e| crate::CliError::Check(format!("{}: {e}", path.display())))?;
    let mut buf = vec![0u8; reader.output_buffer_size()];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| crate::CliError::Check(format!("{}: {e}", path.display())))?;
    let (w, h) = (info.width as usize, info.height as usize);
    Ok(Array2::from_shape_fn((h, w), |(y, x)| buf[y * w + x] as usize))
}
