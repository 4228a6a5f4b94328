//! Synthetic RGB-P scene generator.
//!
//! Desk-scale stand-in for a real polarization dataset: random axis-aligned
//! shapes are assigned materials; each shape's surface orientation sets an
//! incidence angle and an in-plane polarization azimuth, the reflected s/p
//! intensities follow the Fresnel coefficients, and the resulting Stokes
//! parameters are converted back into a four-direction intensity quad.
//!
//! Same-material surfaces share similar orientation statistics, so AoLP acts
//! as a class cue while base colors can be made identical across materials
//! to starve the RGB channel of information.

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use eaf_polarimetry::{fresnel_coefficients, synthesize_intensities, AolpConvention, IntensityQuad, StokesMap};

use crate::loader::sample_from_quad;
use crate::types::{DataError, ModalityMode, Result, Sample};

/// Surface description for one class.
#[derive(Debug, Clone)]
pub struct Material {
    pub refractive_index: f64,
    pub base_color: [f64; 3],
    /// Scale of per-shape orientation jitter, in degrees.
    pub roughness: f64,
    /// Typical incidence angle of light on this class's surfaces, degrees.
    pub incidence_deg: f64,
    /// Typical in-plane polarization azimuth for this class, degrees.
    pub azimuth_deg: f64,
}

#[derive(Debug, Clone)]
pub struct SyntheticSceneConfig {
    pub height: usize,
    pub width: usize,
    pub materials: Vec<Material>,
    /// Unit-ish direction of the dominant light; perturbs incidence angles.
    pub light_direction: [f64; 3],
    /// When false, every material renders with material 0's base color so
    /// only polarization separates the classes.
    pub color_informative: bool,
    pub shapes_min: usize,
    pub shapes_max: usize,
    pub seed: u64,
}

impl Default for SyntheticSceneConfig {
    fn default() -> Self {
        Self {
            height: 64,
            width: 64,
            materials: vec![
                // matte background: low incidence, weak polarization
                Material {
                    refractive_index: 1.5,
                    base_color: [0.55, 0.55, 0.55],
                    roughness: 6.0,
                    incidence_deg: 15.0,
                    azimuth_deg: 30.0,
                },
                // glass-like foreground near the Brewster angle, strongly polarized
                Material {
                    refractive_index: 1.5,
                    base_color: [0.55, 0.55, 0.55],
                    roughness: 6.0,
                    incidence_deg: 55.0,
                    azimuth_deg: 120.0,
                },
            ],
            light_direction: [0.0, -0.4, -0.9],
            color_informative: false,
            shapes_min: 2,
            shapes_max: 4,
            seed: 0,
        }
    }
}

impl SyntheticSceneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.materials.len() < 2 {
            return Err(DataError::InvalidConfig(format!(
                "need >= 2 materials, got {}",
                self.materials.len()
            )));
        }
        if let Some(m) = self.materials.iter().find(|m| m.refractive_index <= 1.0) {
            return Err(DataError::InvalidConfig(format!(
                "refractive index {} must exceed 1",
                m.refractive_index
            )));
        }
        if self.height == 0 || self.width == 0 {
            return Err(DataError::InvalidConfig("empty image size".into()));
        }
        if self.shapes_min > self.shapes_max {
            return Err(DataError::InvalidConfig("shapes_min > shapes_max".into()));
        }
        Ok(())
    }
}

struct Region {
    y0: usize,
    y1: usize,
    x0: usize,
    x1: usize,
    material: usize,
    incidence_deg: f64,
    azimuth_deg: f64,
}

/// DoLP of unpolarized light after one specular reflection.
fn reflection_dolp(n: f64, theta_deg: f64) -> f64 {
    let f = fresnel_coefficients(1.0, n, theta_deg.clamp(0.0, 89.9)).expect("no TIR for n > 1");
    let rs = f.r_s * f.r_s;
    let rp = f.r_p * f.r_p;
    if rs + rp <= 0.0 {
        0.0
    } else {
        ((rs - rp) / (rs + rp)).clamp(0.0, 1.0)
    }
}

/// Tilt of the light direction away from the image normal, degrees; shifts
/// every region's incidence angle.
fn light_tilt_deg(dir: [f64; 3]) -> f64 {
    let norm = (dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2]).sqrt();
    if norm == 0.0 {
        return 0.0;
    }
    (dir[2].abs() / norm).acos().to_degrees()
}

/// Render one scene to its raw intensity quad and label map.
pub fn synthesize_quad(
    cfg: &SyntheticSceneConfig,
    rng: &mut ChaCha20Rng,
) -> Result<(IntensityQuad, Array2<usize>)> {
    cfg.validate()?;
    let (h, w) = (cfg.height, cfg.width);
    let n_mat = cfg.materials.len();
    let tilt = light_tilt_deg(cfg.light_direction);

    let draw_region =
        |rng: &mut ChaCha20Rng, mat: usize, y0: usize, y1: usize, x0: usize, x1: usize| {
            let m = &cfg.materials[mat];
            Region {
                y0,
                y1,
                x0,
                x1,
                material: mat,
                incidence_deg: (m.incidence_deg
                    + 0.15 * tilt
                    + rng.gen_range(-1.0..1.0) * m.roughness)
                    .clamp(1.0, 85.0),
                azimuth_deg: (m.azimuth_deg + rng.gen_range(-1.0..1.0) * m.roughness)
                    .rem_euclid(180.0),
            }
        };

    let mut regions = vec![draw_region(rng, 0, 0, h, 0, w)];
    let count = if cfg.shapes_min == cfg.shapes_max {
        cfg.shapes_min
    } else {
        rng.gen_range(cfg.shapes_min..=cfg.shapes_max)
    };
    for _ in 0..count {
        let mat = rng.gen_range(1..n_mat.max(2)).min(n_mat - 1);
        let sh = rng.gen_range(h / 8..=h / 3);
        let sw = rng.gen_range(w / 8..=w / 3);
        let y0 = rng.gen_range(0..h - sh);
        let x0 = rng.gen_range(0..w - sw);
        regions.push(draw_region(rng, mat, y0, y0 + sh, x0, x0 + sw));
    }

    let mut label = Array2::<usize>::zeros((h, w));
    let mut s0 = Array3::<f64>::zeros((h, w, 3));
    let mut s1 = Array3::<f64>::zeros((h, w, 3));
    let mut s2 = Array3::<f64>::zeros((h, w, 3));
    // later regions overdraw earlier ones
    for region in &regions {
        let m = &cfg.materials[region.material];
        let color = if cfg.color_informative {
            m.base_color
        } else {
            cfg.materials[0].base_color
        };
        let dolp = reflection_dolp(m.refractive_index, region.incidence_deg);
        for y in region.y0..region.y1 {
            for x in region.x0..region.x1 {
                label[[y, x]] = region.material;
                let phi = (region.azimuth_deg
                    + rng.gen_range(-1.0..1.0) * m.roughness * 0.3)
                    .rem_euclid(180.0)
                    .to_radians();
                let gain = 1.0 + rng.gen_range(-1.0..1.0) * 0.03;
                for c in 0..3 {
                    let total = (color[c] * gain).clamp(0.0, 1.0);
                    // chosen so the AoLP recovered via atan2(S1, S2)/2 equals phi
                    s0[[y, x, c]] = total;
                    s1[[y, x, c]] = total * dolp * (2.0 * phi).sin();
                    s2[[y, x, c]] = total * dolp * (2.0 * phi).cos();
                }
            }
        }
    }
    let quad = synthesize_intensities(&StokesMap { s0, s1, s2 })?;
    Ok((quad, label))
}

/// Render one scene deterministically from `(cfg, rng state)`.
pub fn synthesize_scene(
    cfg: &SyntheticSceneConfig,
    mode: ModalityMode,
    rng: &mut ChaCha20Rng,
) -> Result<Sample> {
    let (quad, label) = synthesize_quad(cfg, rng)?;
    sample_from_quad(
        &format!("synth-{}", cfg.seed),
        &quad,
        None,
        None,
        label,
        mode,
        cfg.materials.len(),
        AolpConvention::S1OverS2,
    )
}

/// A deterministic batch of scenes; sample k uses seed `cfg.seed + k`.
pub fn synthesize_dataset(
    cfg: &SyntheticSceneConfig,
    mode: ModalityMode,
    count: usize,
) -> Result<Vec<Sample>> {
    (0..count)
        .map(|k| {
            let mut sub = cfg.clone();
            sub.seed = cfg.seed.wrapping_add(k as u64);
            let mut rng = ChaCha20Rng::seed_from_u64(sub.seed);
            let mut s = synthesize_scene(&sub, mode, &mut rng)?;
            s.id = format!("synth-{:05}", k);
            Ok(s)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::histogram;
    use crate::types::ModalityKind;

    #[test]
    fn same_seed_identical_sample() {
        let cfg = SyntheticSceneConfig::default();
        let gen = || {
            let mut rng = ChaCha20Rng::seed_from_u64(42);
            synthesize_scene(&cfg, ModalityMode::AolpDolp, &mut rng).unwrap()
        };
        let (a, b) = (gen(), gen());
        assert_eq!(a.rgb, b.rgb);
        assert_eq!(a.label, b.label);
        assert_eq!(a.modality[0].plane, b.modality[0].plane);
        assert_eq!(a.modality[1].plane, b.modality[1].plane);
    }

    #[test]
    fn single_material_means_constant_label() {
        let mut cfg = SyntheticSceneConfig::default();
        cfg.shapes_min = 0;
        cfg.shapes_max = 0;
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let s = synthesize_scene(&cfg, ModalityMode::Aolp, &mut rng).unwrap();
        assert!(s.label.iter().all(|&v| v == 0));
    }

    #[test]
    fn color_uninformative_but_polarization_separates() {
        let cfg = SyntheticSceneConfig::default();
        let samples = synthesize_dataset(&cfg, ModalityMode::AolpDolp, 12).unwrap();
        let mut rgb_sum = [0.0f64; 2];
        let mut rgb_cnt = [0usize; 2];
        let mut dolp_sum = [0.0f64; 2];
        for s in &samples {
            let dolp = &s.modality[1].plane;
            for ((y, x), &cls) in s.label.indexed_iter() {
                rgb_sum[cls] += (s.rgb[[y, x, 0]] + s.rgb[[y, x, 1]] + s.rgb[[y, x, 2]]) / 3.0;
                dolp_sum[cls] += dolp[[y, x]];
                rgb_cnt[cls] += 1;
            }
        }
        assert!(rgb_cnt[0] > 0 && rgb_cnt[1] > 0);
        let rgb_means = [rgb_sum[0] / rgb_cnt[0] as f64, rgb_sum[1] / rgb_cnt[1] as f64];
        let dolp_means = [dolp_sum[0] / rgb_cnt[0] as f64, dolp_sum[1] / rgb_cnt[1] as f64];
        assert!(
            (rgb_means[0] - rgb_means[1]).abs() < 0.02,
            "rgb means {rgb_means:?} should be identical within noise"
        );
        assert!(
            (dolp_means[0] - dolp_means[1]).abs() > 0.1,
            "dolp means {dolp_means:?} should differ"
        );
    }

    #[test]
    fn low_polarization_dolp_mass() {
        let cfg = SyntheticSceneConfig::default();
        let samples = synthesize_dataset(&cfg, ModalityMode::Dolp, 20).unwrap();
        let st = histogram(samples.iter(), ModalityKind::Dolp, 100).unwrap();
        assert!(
            st.mass_below(0.4) >= 0.8,
            "low-polarization set has only {:.3} of DoLP mass below 0.4",
            st.mass_below(0.4)
        );
    }

    #[test]
    fn rejects_single_material_config() {
        let mut cfg = SyntheticSceneConfig::default();
        cfg.materials.truncate(1);
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        assert!(synthesize_scene(&cfg, ModalityMode::Aolp, &mut rng).is_err());
    }
}
