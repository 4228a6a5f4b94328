//! Polarization optics: Stokes parameters from four-direction intensity
//! captures, DoLP/AoLP derivation, Fresnel reflection coefficients and the
//! AoLP value remap used under horizontal flips.
//!
//! All math is double precision and every function is a pure function of
//! its inputs. Image planes are `(height, width, channels)` arrays.

use ndarray::Array3;
use thiserror::Error;

/// Pixels with total intensity at or below this are treated as unpolarized.
pub const S0_EPSILON: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum PolarError {
    #[error("plane dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("negative intensity would result at pixel ({y},{x},{c}): s1^2+s2^2 > s0^2")]
    InvalidStokes { y: usize, x: usize, c: usize },
    #[error("total internal reflection: n1*sin(theta_i)/n2 = {0} > 1, real coefficients undefined")]
    TotalInternalReflection(f64),
    #[error("invalid refractive index or angle: {0}")]
    InvalidInput(String),
}

pub type Result<T> = std::result::Result<T, PolarError>;

/// Four pixel-aligned intensity images at polarizer angles 0/45/90/135 degrees.
#[derive(Debug, Clone)]
pub struct IntensityQuad {
    pub i0: Array3<f64>,
    pub i45: Array3<f64>,
    pub i90: Array3<f64>,
    pub i135: Array3<f64>,
}

impl IntensityQuad {
    pub fn new(
        i0: Array3<f64>,
        i45: Array3<f64>,
        i90: Array3<f64>,
        i135: Array3<f64>,
    ) -> Result<Self> {
        let d = i0.dim();
        for (name, p) in [("i45", &i45), ("i90", &i90), ("i135", &i135)] {
            if p.dim() != d {
                return Err(PolarError::DimensionMismatch(format!(
                    "{name} is {:?}, i0 is {:?}",
                    p.dim(),
                    d
                )));
            }
        }
        Ok(Self { i0, i45, i90, i135 })
    }

    pub fn height(&self) -> usize {
        self.i0.dim().0
    }
    pub fn width(&self) -> usize {
        self.i0.dim().1
    }
    pub fn channels(&self) -> usize {
        self.i0.dim().2
    }

    /// Per-pixel residual |(i0+i90) - (i45+i135)|, reported, never enforced.
    pub fn consistency_residual(&self) -> Array3<f64> {
        let mut r = &self.i0 + &self.i90;
        r -= &self.i45;
        r -= &self.i135;
        r.mapv_inplace(f64::abs);
        r
    }
}

/// Per-pixel linear Stokes parameters. Circular polarization is out of scope.
#[derive(Debug, Clone)]
pub struct StokesMap {
    pub s0: Array3<f64>,
    pub s1: Array3<f64>,
    pub s2: Array3<f64>,
}

/// DoLP in `[0,1]` and AoLP in degrees `[0, 180)`.
#[derive(Debug, Clone)]
pub struct PolarDerived {
    pub dolp: Array3<f64>,
    pub aolp_deg: Array3<f64>,
}

/// Fresnel amplitude coefficients at a dielectric interface.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FresnelResult {
    pub r_s: f64,
    pub r_p: f64,
    pub t_s: f64,
    pub t_p: f64,
    pub theta_t_deg: f64,
}

/// Argument order for the AoLP arctangent.
///
/// The default follows the source convention atan(S1/S2); `S2OverS1` is the
/// more common atan(S2/S1) form, exposed as a switch but never silently applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AolpConvention {
    #[default]
    S1OverS2,
    S2OverS1,
}

/// s0 = i0 + i90, s1 = i0 - i90, s2 = i45 - i135, elementwise per channel.
pub fn compute_stokes(quad: &IntensityQuad) -> StokesMap {
    StokesMap {
        s0: &quad.i0 + &quad.i90,
        s1: &quad.i0 - &quad.i90,
        s2: &quad.i45 - &quad.i135,
    }
}

/// sqrt(s1^2 + s2^2) / s0, clamped to [0,1]; degenerate pixels (s0 <= eps) map to 0.
pub fn compute_dolp(stokes: &StokesMap) -> Array3<f64> {
    let mut out = Array3::zeros(stokes.s0.dim());
    ndarray::Zip::from(&mut out)
        .and(&stokes.s0)
        .and(&stokes.s1)
        .and(&stokes.s2)
        .for_each(|d, &s0, &s1, &s2| {
            *d = dolp_pixel(s0, s1, s2);
        });
    out
}

pub fn dolp_pixel(s0: f64, s1: f64, s2: f64) -> f64 {
    if s0 <= S0_EPSILON {
        return 0.0;
    }
    ((s1 * s1 + s2 * s2).sqrt() / s0).clamp(0.0, 1.0)
}

/// Half the quadrant-resolving arctangent, in degrees mapped into [0, 180).
pub fn compute_aolp(stokes: &StokesMap, convention: AolpConvention) -> Array3<f64> {
    let mut out = Array3::zeros(stokes.s0.dim());
    ndarray::Zip::from(&mut out)
        .and(&stokes.s1)
        .and(&stokes.s2)
        .for_each(|a, &s1, &s2| {
            *a = aolp_pixel_deg(s1, s2, convention);
        });
    out
}

pub fn aolp_pixel_deg(s1: f64, s2: f64, convention: AolpConvention) -> f64 {
    if s1 == 0.0 && s2 == 0.0 {
        return 0.0;
    }
    let half = match convention {
        AolpConvention::S1OverS2 => 0.5 * s1.atan2(s2),
        AolpConvention::S2OverS1 => 0.5 * s2.atan2(s1),
    };
    let mut deg = half.to_degrees();
    if deg < 0.0 {
        deg += 180.0;
    }
    // atan2 may round to exactly 180 after the shift
    if deg >= 180.0 {
        deg -= 180.0;
    }
    deg
}

/// Inverse of `compute_stokes`: the unique quad with the given linear Stokes
/// parameters and equal-split residual. Rejects maps that would imply a
/// negative intensity.
pub fn synthesize_intensities(stokes: &StokesMap) -> Result<IntensityQuad> {
    let dim = stokes.s0.dim();
    if stokes.s1.dim() != dim || stokes.s2.dim() != dim {
        return Err(PolarError::DimensionMismatch(format!(
            "s0 {:?}, s1 {:?}, s2 {:?}",
            dim,
            stokes.s1.dim(),
            stokes.s2.dim()
        )));
    }
    for ((y, x, c), (&s0, (&s1, &s2))) in stokes
        .s0
        .indexed_iter()
        .zip(stokes.s1.iter().zip(stokes.s2.iter()))
        .map(|((idx, s0), s12)| (idx, (s0, s12)))
    {
        if s1 * s1 + s2 * s2 > s0 * s0 * (1.0 + 1e-12) + 1e-30 {
            return Err(PolarError::InvalidStokes { y, x, c });
        }
    }
    let i0 = (&stokes.s0 + &stokes.s1) * 0.5;
    let i90 = (&stokes.s0 - &stokes.s1) * 0.5;
    let i45 = (&stokes.s0 + &stokes.s2) * 0.5;
    let i135 = (&stokes.s0 - &stokes.s2) * 0.5;
    IntensityQuad::new(i0, i45, i90, i135)
}

/// DoLP and AoLP for a Stokes map.
pub fn derive_polarization(stokes: &StokesMap, convention: AolpConvention) -> PolarDerived {
    PolarDerived {
        dolp: compute_dolp(stokes),
        aolp_deg: compute_aolp(stokes, convention),
    }
}

/// Fresnel amplitude coefficients for a dielectric interface, with the
/// refraction angle from Snell's law.
pub fn fresnel_coefficients(n1: f64, n2: f64, theta_i_deg: f64) -> Result<FresnelResult> {
    if !(n1 > 0.0 && n2 > 0.0) {
        return Err(PolarError::InvalidInput(format!("n1={n1}, n2={n2}")));
    }
    if !(0.0..90.0).contains(&theta_i_deg) {
        return Err(PolarError::InvalidInput(format!(
            "theta_i={theta_i_deg} outside [0, 90)"
        )));
    }
    let theta_i = theta_i_deg.to_radians();
    let sin_t = n1 * theta_i.sin() / n2;
    if sin_t > 1.0 {
        return Err(PolarError::TotalInternalReflection(sin_t));
    }
    let theta_t = sin_t.asin();
    let (ci, ct) = (theta_i.cos(), theta_t.cos());
    let r_s = (n1 * ci - n2 * ct) / (n1 * ci + n2 * ct);
    let t_s = 2.0 * n1 * ci / (n1 * ci + n2 * ct);
    let r_p = (n2 * ci - n1 * ct) / (n2 * ci + n1 * ct);
    let t_p = 2.0 * n1 * ci / (n2 * ci + n1 * ct);
    Ok(FresnelResult {
        r_s,
        r_p,
        t_s,
        t_p,
        theta_t_deg: theta_t.to_degrees(),
    })
}

/// Brewster angle arctan(n2/n1) in degrees, where r_p vanishes.
pub fn brewster_angle_deg(n1: f64, n2: f64) -> f64 {
    (n2 / n1).atan().to_degrees()
}

/// Value remap applied to AoLP under a horizontal flip: a -> (180 - a) mod 180.
///
/// Purely the value map; the spatial mirror is composed by the caller.
pub fn flip_aolp_value_deg(aolp_deg: f64) -> f64 {
    let v = 180.0 - aolp_deg;
    if v >= 180.0 {
        v - 180.0
    } else {
        v
    }
}

/// Elementwise [`flip_aolp_value_deg`].
pub fn flip_aolp_values(aolp_deg: &Array3<f64>) -> Array3<f64> {
    aolp_deg.mapv(flip_aolp_value_deg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn plane(v: f64) -> Array3<f64> {
        Array3::from_elem((1, 1, 1), v)
    }

    fn quad(i0: f64, i45: f64, i90: f64, i135: f64) -> IntensityQuad {
        IntensityQuad::new(plane(i0), plane(i45), plane(i90), plane(i135)).unwrap()
    }

    fn stokes(s0: f64, s1: f64, s2: f64) -> StokesMap {
        StokesMap {
            s0: plane(s0),
            s1: plane(s1),
            s2: plane(s2),
        }
    }

    #[test]
    fn stokes_unpolarized() {
        let s = compute_stokes(&quad(0.5, 0.5, 0.5, 0.5));
        assert_eq!(s.s0[[0, 0, 0]], 1.0);
        assert_eq!(s.s1[[0, 0, 0]], 0.0);
        assert_eq!(s.s2[[0, 0, 0]], 0.0);
    }

    #[test]
    fn stokes_hand_case() {
        let s = compute_stokes(&quad(0.8, 0.5, 0.2, 0.5));
        assert!((s.s0[[0, 0, 0]] - 1.0).abs() < 1e-15);
        assert!((s.s1[[0, 0, 0]] - 0.6).abs() < 1e-15);
        assert_eq!(s.s2[[0, 0, 0]], 0.0);
    }

    #[test]
    fn stokes_fully_polarized() {
        let s = compute_stokes(&quad(1.0, 0.5, 0.0, 0.5));
        assert_eq!(
            (s.s0[[0, 0, 0]], s.s1[[0, 0, 0]], s.s2[[0, 0, 0]]),
            (1.0, 1.0, 0.0)
        );
    }

    #[test]
    fn stokes_rejects_mismatched_planes() {
        let r = IntensityQuad::new(
            Array3::zeros((2, 2, 1)),
            Array3::zeros((2, 2, 1)),
            Array3::zeros((2, 3, 1)),
            Array3::zeros((2, 2, 1)),
        );
        assert!(matches!(r, Err(PolarError::DimensionMismatch(_))));
    }

    #[test]
    fn dolp_cases() {
        assert_eq!(compute_dolp(&stokes(1.0, 0.0, 0.0))[[0, 0, 0]], 0.0);
        assert_eq!(compute_dolp(&stokes(1.0, 1.0, 0.0))[[0, 0, 0]], 1.0);
        assert!((compute_dolp(&stokes(1.0, 0.6, 0.0))[[0, 0, 0]] - 0.6).abs() < 1e-15);
        // degenerate pixel convention
        assert_eq!(compute_dolp(&stokes(0.0, 0.0, 0.0))[[0, 0, 0]], 0.0);
    }

    #[test]
    fn aolp_cases() {
        let c = AolpConvention::S1OverS2;
        assert_eq!(aolp_pixel_deg(0.0, 0.0, c), 0.0);
        assert!((aolp_pixel_deg(1.0, 0.0, c) - 45.0).abs() < 1e-12);
        assert!((aolp_pixel_deg(0.0, -1.0, c) - 90.0).abs() < 1e-12);
    }

    #[test]
    fn aolp_alternate_convention() {
        let c = AolpConvention::S2OverS1;
        assert!((aolp_pixel_deg(0.0, 1.0, c) - 45.0).abs() < 1e-12);
    }

    #[test]
    fn aolp_range_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10_000 {
            let s1 = rng.gen_range(-2.0..2.0);
            let s2 = rng.gen_range(-2.0..2.0);
            let a = aolp_pixel_deg(s1, s2, AolpConvention::S1OverS2);
            assert!((0.0..180.0).contains(&a), "aolp {a} out of range");
        }
    }

    #[test]
    fn synthesize_round_trip_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 10_000;
        let mut s0 = Array3::zeros((n, 1, 1));
        let mut s1 = Array3::zeros((n, 1, 1));
        let mut s2 = Array3::zeros((n, 1, 1));
        for i in 0..n {
            let t0 = rng.gen_range(0.0..2.0);
            let dolp = rng.gen_range(0.0..1.0);
            let psi = rng.gen_range(0.0..std::f64::consts::TAU);
            s0[[i, 0, 0]] = t0;
            s1[[i, 0, 0]] = t0 * dolp * psi.cos();
            s2[[i, 0, 0]] = t0 * dolp * psi.sin();
        }
        let sm = StokesMap { s0, s1, s2 };
        let q = synthesize_intensities(&sm).unwrap();
        let back = compute_stokes(&q);
        for i in 0..n {
            assert!((back.s0[[i, 0, 0]] - sm.s0[[i, 0, 0]]).abs() < 1e-9);
            assert!((back.s1[[i, 0, 0]] - sm.s1[[i, 0, 0]]).abs() < 1e-9);
            assert!((back.s2[[i, 0, 0]] - sm.s2[[i, 0, 0]]).abs() < 1e-9);
        }
    }

    #[test]
    fn synthesize_trivial_cases() {
        let q = synthesize_intensities(&stokes(1.0, 0.0, 0.0)).unwrap();
        for p in [&q.i0, &q.i45, &q.i90, &q.i135] {
            assert_eq!(p[[0, 0, 0]], 0.5);
        }
        let q = synthesize_intensities(&stokes(1.0, 1.0, 0.0)).unwrap();
        assert_eq!(q.i0[[0, 0, 0]], 1.0);
        assert_eq!(q.i90[[0, 0, 0]], 0.0);
        assert_eq!(q.i45[[0, 0, 0]], 0.5);
        assert_eq!(q.i135[[0, 0, 0]], 0.5);
    }

    #[test]
    fn synthesize_rejects_overpolarized() {
        let r = synthesize_intensities(&stokes(1.0, 1.0, 1.0));
        assert!(matches!(r, Err(PolarError::InvalidStokes { .. })));
    }

    #[test]
    fn fresnel_normal_incidence() {
        let f = fresnel_coefficients(1.0, 1.5, 0.0).unwrap();
        assert!((f.r_s + 0.2).abs() < 1e-12);
        assert!((f.r_p - 0.2).abs() < 1e-12);
        assert!((f.t_s - 0.8).abs() < 1e-12);
        assert!((f.t_p - 0.8).abs() < 1e-12);
    }

    #[test]
    fn fresnel_brewster() {
        for n2 in [1.33, 1.5, 2.4] {
            let b = brewster_angle_deg(1.0, n2);
            let f = fresnel_coefficients(1.0, n2, b).unwrap();
            assert!(f.r_p.abs() < 1e-9, "r_p at Brewster = {}", f.r_p);
        }
    }

    #[test]
    fn fresnel_no_interface() {
        let f = fresnel_coefficients(1.4, 1.4, 30.0).unwrap();
        assert_eq!(f.r_s, 0.0);
        assert_eq!(f.r_p, 0.0);
        assert!((f.t_s - 1.0).abs() < 1e-12);
        assert!((f.t_p - 1.0).abs() < 1e-12);
        assert!((f.theta_t_deg - 30.0).abs() < 1e-12);
    }

    #[test]
    fn fresnel_total_internal_reflection() {
        let r = fresnel_coefficients(1.5, 1.0, 80.0);
        assert!(matches!(r, Err(PolarError::TotalInternalReflection(_))));
    }

    #[test]
    fn fresnel_rp_single_zero_crossing() {
        // r_p changes sign exactly once in (0, 90) for n2 > n1, at the Brewster angle
        let n2 = 1.5;
        let brewster = brewster_angle_deg(1.0, n2);
        let mut crossings = 0;
        let mut prev = fresnel_coefficients(1.0, n2, 0.001).unwrap().r_p;
        let steps = 10_000;
        for k in 1..steps {
            let th = 0.001 + (89.998 - 0.001) * k as f64 / steps as f64;
            let cur = fresnel_coefficients(1.0, n2, th).unwrap().r_p;
            if prev.signum() != cur.signum() && prev != 0.0 && cur != 0.0 {
                crossings += 1;
                assert!((th - brewster).abs() < 0.05);
            }
            prev = cur;
        }
        assert_eq!(crossings, 1);
    }

    #[test]
    fn fresnel_amplitude_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let n2 = rng.gen_range(1.01..3.0);
            let th = rng.gen_range(0.0..89.9);
            let f = fresnel_coefficients(1.0, n2, th).unwrap();
            assert!(f.r_s.abs() <= 1.0 + 1e-12);
            assert!(f.r_p.abs() <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn flip_aolp_cases() {
        assert_eq!(flip_aolp_value_deg(30.0), 150.0);
        assert_eq!(flip_aolp_value_deg(0.0), 0.0);
    }

    #[test]
    fn flip_aolp_involution() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100_000 {
            let a = rng.gen_range(0.0..180.0);
            let b = flip_aolp_value_deg(flip_aolp_value_deg(a));
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn consistency_residual_reported() {
        let q = quad(0.8, 0.5, 0.2, 0.5);
        assert!(q.consistency_residual()[[0, 0, 0]] < 1e-15);
        let q2 = quad(0.8, 0.9, 0.2, 0.5);
        assert!((q2.consistency_residual()[[0, 0, 0]] - 0.4).abs() < 1e-12);
    }

    #[test]
    fn dolp_is_one_iff_fully_polarized() {
        let d = compute_dolp(&StokesMap {
            s0: arr3(&[[[1.0, 1.0]]]),
            s1: arr3(&[[[0.6, 1.0]]]),
            s2: arr3(&[[[0.8, 0.0]]]),
        });
        assert!((d[[0, 0, 0]] - 1.0).abs() < 1e-9);
        assert!((d[[0, 0, 1]] - 1.0).abs() < 1e-9);
    }
}
