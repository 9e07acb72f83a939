//! Crystal orientations, texture components, and texture-weight sampling.
//!
//! Orientations use Bunge Euler angles (ZXZ convention). A grain's rotation
//! matrix maps crystal-frame vectors into the sample frame. Texture components
//! are idealized orientations (Cube, Goss, Brass, S1–S3, Copper, Taylor) around
//! which grain orientations scatter; the `Random` filler covers the untextured
//! remainder of the volume.

use nalgebra::{Matrix3, Unit, Vector3};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of named texture components (excluding the Random filler).
pub const N_COMPONENTS: usize = 8;

/// Fixed component name abbreviations, in canonical order.
pub const COMPONENT_ABBREVS: [&str; N_COMPONENTS] =
    ["Cb", "Gs", "Bs", "S1", "S2", "S3", "Cu", "Ty"];

#[derive(Debug, Error)]
pub enum OrientationError {
    #[error("texture weights sum to {sum} > 1 after normalization")]
    WeightsExceedUnity { sum: f64 },
    #[error("invalid texture bounds for {name}: min {min} > max {max}")]
    InvalidBounds { name: String, min: f64, max: f64 },
    #[error("texture bounds out of percent range for {name}: [{min}, {max}]")]
    BoundsOutOfRange { name: String, min: f64, max: f64 },
    #[error("unknown texture component name: {0}")]
    UnknownComponent(String),
    #[error("bounds file I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("bounds file parse: {0}")]
    Parse(#[from] serde_json::Error),
}

/// Bunge Euler angles in degrees: phi1, Phi, phi2 (ZXZ).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EulerAngles {
    pub phi1: f64,
    pub phi: f64,
    pub phi2: f64,
}

impl EulerAngles {
    pub fn new(phi1: f64, phi: f64, phi2: f64) -> Self {
        Self { phi1, phi, phi2 }.wrapped()
    }

    /// Wraps phi1/phi2 into [0, 360) and Phi into [0, 180].
    pub fn wrapped(self) -> Self {
        let wrap360 = |a: f64| a.rem_euclid(360.0);
        let mut phi = self.phi.rem_euclid(360.0);
        let mut phi1 = self.phi1;
        let mut phi2 = self.phi2;
        if phi > 180.0 {
            // (phi1, Phi, phi2) and (phi1+180, 360-Phi, phi2+180) are the same rotation
            phi = 360.0 - phi;
            phi1 += 180.0;
            phi2 += 180.0;
        }
        Self {
            phi1: wrap360(phi1),
            phi,
            phi2: wrap360(phi2),
        }
    }

    /// Rotation matrix mapping crystal-frame vectors to the sample frame.
    ///
    /// Composition is Rz(phi1) * Rx(Phi) * Rz(phi2) with active rotation
    /// matrices, i.e. the transpose of the Bunge sample-to-crystal matrix.
    /// Column convention: with (90, 0, 0) degrees, crystal (1,0,0) maps to
    /// sample (0,1,0).
    pub fn to_matrix(self) -> Matrix3<f64> {
        let (s1, c1) = self.phi1.to_radians().sin_cos();
        let (s, c) = self.phi.to_radians().sin_cos();
        let (s2, c2) = self.phi2.to_radians().sin_cos();
        Matrix3::new(
            c1 * c2 - s1 * c * s2,
            -c1 * s2 - s1 * c * c2,
            s1 * s,
            s1 * c2 + c1 * c * s2,
            -s1 * s2 + c1 * c * c2,
            -c1 * s,
            s * s2,
            s * c2,
            c,
        )
    }

    /// Recovers Bunge angles from a crystal-to-sample rotation matrix.
    ///
    /// At the gimbal configurations (Phi = 0 or 180) phi2 is set to zero and
    /// the full in-plane rotation is carried by phi1.
    pub fn from_matrix(r: &Matrix3<f64>) -> Self {
        // g is the sample-to-crystal (Bunge) matrix
        let g = r.transpose();
        let c = g[(2, 2)].clamp(-1.0, 1.0);
        let phi = c.acos();
        let eps = 1e-9;
        let (phi1, phi2) = if phi.sin().abs() > eps {
            (
                g[(2, 0)].atan2(-g[(2, 1)]),
                g[(0, 2)].atan2(g[(1, 2)]),
            )
        } else if c > 0.0 {
            (g[(0, 1)].atan2(g[(0, 0)]), 0.0)
        } else {
            (g[(0, 1)].atan2(g[(0, 0)]), 0.0)
        };
        Self::new(phi1.to_degrees(), phi.to_degrees(), phi2.to_degrees())
    }
}

/// Rotation angle in degrees between two orientations (no symmetry reduction).
pub fn misorientation_angle_deg(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    let m = a.transpose() * b;
    let t = ((m.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
    t.acos().to_degrees()
}

/// Canonical component identity. `Random` fills the untextured remainder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ComponentName {
    Cb,
    Gs,
    Bs,
    S1,
    S2,
    S3,
    Cu,
    Ty,
    Random,
}

impl ComponentName {
    pub fn abbrev(self) -> &'static str {
        match self {
            ComponentName::Cb => "Cb",
            ComponentName::Gs => "Gs",
            ComponentName::Bs => "Bs",
            ComponentName::S1 => "S1",
            ComponentName::S2 => "S2",
            ComponentName::S3 => "S3",
            ComponentName::Cu => "Cu",
            ComponentName::Ty => "Ty",
            ComponentName::Random => "Random",
        }
    }

    pub fn from_abbrev(s: &str) -> Result<Self, OrientationError> {
        Ok(match s {
            "Cb" => ComponentName::Cb,
            "Gs" => ComponentName::Gs,
            "Bs" => ComponentName::Bs,
            "S1" => ComponentName::S1,
            "S2" => ComponentName::S2,
            "S3" => ComponentName::S3,
            "Cu" => ComponentName::Cu,
            "Ty" => ComponentName::Ty,
            "Random" => ComponentName::Random,
            other => return Err(OrientationError::UnknownComponent(other.to_string())),
        })
    }

    /// The eight named components in canonical order.
    pub fn named() -> [ComponentName; N_COMPONENTS] {
        [
            ComponentName::Cb,
            ComponentName::Gs,
            ComponentName::Bs,
            ComponentName::S1,
            ComponentName::S2,
            ComponentName::S3,
            ComponentName::Cu,
            ComponentName::Ty,
        ]
    }
}

/// One texture component: ideal orientation plus angular spread.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TextureComponent {
    pub name: ComponentName,
    /// Ideal orientation; absent for the Random filler.
    pub ideal: Option<EulerAngles>,
    /// Full width at half maximum of the misorientation spread, degrees.
    pub spread_fwhm: f64,
}

/// The component definitions used when converting weights to orientations.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TextureComponentSet {
    pub components: Vec<TextureComponent>,
}

impl Default for TextureComponentSet {
    fn default() -> Self {
        Self::with_spread(15.0)
    }
}

impl TextureComponentSet {
    /// Standard rolling/recrystallization component definitions with a common spread.
    pub fn with_spread(spread_fwhm: f64) -> Self {
        let ideal = |p1, p, p2| Some(EulerAngles::new(p1, p, p2));
        let mk = |name, ideal| TextureComponent {
            name,
            ideal,
            spread_fwhm,
        };
        Self {
            components: vec![
                mk(ComponentName::Cb, ideal(0.0, 0.0, 0.0)),
                mk(ComponentName::Gs, ideal(0.0, 45.0, 0.0)),
                mk(ComponentName::Bs, ideal(35.0, 45.0, 0.0)),
                mk(ComponentName::S1, ideal(59.0, 34.0, 65.0)),
                mk(ComponentName::S2, ideal(47.0, 37.0, 63.0)),
                mk(ComponentName::S3, ideal(59.0, 37.0, 63.0)),
                mk(ComponentName::Cu, ideal(90.0, 35.0, 45.0)),
                mk(ComponentName::Ty, ideal(90.0, 27.0, 45.0)),
                mk(ComponentName::Random, None),
            ],
        }
    }

    pub fn get(&self, name: ComponentName) -> Option<&TextureComponent> {
        self.components.iter().find(|c| c.name == name)
    }
}

/// Volume fractions of the eight named components; the remainder is Random.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextureWeights {
    /// Fractions in [0, 1], canonical component order.
    pub fractions: [f64; N_COMPONENTS],
}

impl TextureWeights {
    pub fn sum(&self) -> f64 {
        self.fractions.iter().sum()
    }

    pub fn random_fraction(&self) -> f64 {
        (1.0 - self.sum()).max(0.0)
    }

    pub fn fraction(&self, name: ComponentName) -> f64 {
        match name {
            ComponentName::Random => self.random_fraction(),
            named => {
                let idx = ComponentName::named()
                    .iter()
                    .position(|&n| n == named)
                    .expect("named component");
                self.fractions[idx]
            }
        }
    }
}

/// Converts raw component percentages into normalized volume fractions.
///
/// If the raw percentages sum above 100 they are rescaled to exactly 100;
/// whatever remains below unity is assigned to Random. Idempotent when fed
/// back its own fractions expressed as percent.
pub fn normalize_weights(raw_percent: &[f64; N_COMPONENTS]) -> TextureWeights {
    debug_assert!(raw_percent.iter().all(|&v| v >= 0.0));
    let sum: f64 = raw_percent.iter().sum();
    let scale = if sum > 100.0 { 100.0 / sum } else { 1.0 };
    let mut fractions = [0.0; N_COMPONENTS];
    for (f, &r) in fractions.iter_mut().zip(raw_percent) {
        *f = r * scale / 100.0;
    }
    TextureWeights { fractions }
}

/// Per-component min/max volume percentages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextureBounds {
    /// (min, max) percent per component, canonical order.
    pub ranges: [(f64, f64); N_COMPONENTS],
}

#[derive(Serialize, Deserialize)]
struct BoundsEntry {
    name: String,
    min: f64,
    max: f64,
}

#[derive(Serialize, Deserialize)]
struct BoundsFile {
    components: Vec<BoundsEntry>,
}

impl TextureBounds {
    pub fn new(ranges: [(f64, f64); N_COMPONENTS]) -> Result<Self, OrientationError> {
        for (i, &(lo, hi)) in ranges.iter().enumerate() {
            let name = COMPONENT_ABBREVS[i].to_string();
            if lo > hi {
                return Err(OrientationError::InvalidBounds { name, min: lo, max: hi });
            }
            if !(0.0..=100.0).contains(&lo) || !(0.0..=100.0).contains(&hi) {
                return Err(OrientationError::BoundsOutOfRange { name, min: lo, max: hi });
            }
        }
        Ok(Self { ranges })
    }

    /// Component bounds measured on electron-beam-welded 316L EBSD sections.
    pub fn weld_ebsd_defaults() -> Self {
        Self {
            ranges: [
                (2.5, 73.81),
                (0.71, 63.25),
                (0.0, 44.86),
                (0.01, 16.01),
                (0.0, 18.68),
                (0.02, 50.25),
                (0.0, 11.48),
                (0.0, 14.86),
            ],
        }
    }

    pub fn to_json(&self) -> String {
        let file = BoundsFile {
            components: self
                .ranges
                .iter()
                .enumerate()
                .map(|(i, &(min, max))| BoundsEntry {
                    name: COMPONENT_ABBREVS[i].to_string(),
                    min,
                    max,
                })
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("bounds serialize")
    }

    pub fn from_json(s: &str) -> Result<Self, OrientationError> {
        let file: BoundsFile = serde_json::from_str(s)?;
        let mut ranges = [(f64::NAN, f64::NAN); N_COMPONENTS];
        for entry in &file.components {
            let idx = COMPONENT_ABBREVS
                .iter()
                .position(|&a| a == entry.name)
                .ok_or_else(|| OrientationError::UnknownComponent(entry.name.clone()))?;
            ranges[idx] = (entry.min, entry.max);
        }
        for (i, r) in ranges.iter().enumerate() {
            if r.0.is_nan() {
                return Err(OrientationError::UnknownComponent(format!(
                    "missing component {}",
                    COMPONENT_ABBREVS[i]
                )));
            }
        }
        Self::new(ranges)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), OrientationError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self, OrientationError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Uniform random rotation on SO(3) via normalized 4-vector quaternions.
fn uniform_rotation<R: Rng + ?Sized>(rng: &mut R) -> Matrix3<f64> {
    loop {
        let q: [f64; 4] = [
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        ];
        let norm = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
        if norm < 1e-12 {
            continue;
        }
        let (w, x, y, z) = (q[0] / norm, q[1] / norm, q[2] / norm, q[3] / norm);
        return quaternion_to_matrix(w, x, y, z);
    }
}

pub(crate) fn quaternion_to_matrix(w: f64, x: f64, y: f64, z: f64) -> Matrix3<f64> {
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Converts a spread FWHM (degrees) to the sigma of the underlying normal.
fn fwhm_to_sigma(fwhm: f64) -> f64 {
    fwhm / (2.0 * (2.0_f64.ln() * 2.0).sqrt())
}

/// Draws one orientation from a texture component.
///
/// Named components return the ideal orientation composed with a random
/// misorientation: uniformly random axis, angle drawn half-normal with the
/// component's FWHM. The Random component draws uniformly on SO(3).
pub fn sample_orientation<R: Rng + ?Sized>(c: &TextureComponent, rng: &mut R) -> EulerAngles {
    match c.ideal {
        None => EulerAngles::from_matrix(&uniform_rotation(rng)),
        Some(ideal) => {
            debug_assert!(c.spread_fwhm > 0.0);
            let sigma = fwhm_to_sigma(c.spread_fwhm);
            let angle_deg: f64 = {
                let z: f64 = StandardNormal.sample(rng);
                sigma * z.abs()
            };
            let axis: Unit<Vector3<f64>> = loop {
                let v = Vector3::new(
                    StandardNormal.sample(rng),
                    StandardNormal.sample(rng),
                    StandardNormal.sample(rng),
                );
                if v.norm() > 1e-12 {
                    break Unit::new_normalize(v);
                }
            };
            let delta = nalgebra::Rotation3::from_axis_angle(&axis, angle_deg.to_radians());
            let r = ideal.to_matrix() * delta.matrix();
            EulerAngles::from_matrix(&r)
        }
    }
}

/// Assigns each grain a component by its volume fraction, then samples an
/// orientation from that component. Reproducible for a fixed RNG stream.
pub fn generate_grain_orientations<R: Rng + ?Sized>(
    set: &TextureComponentSet,
    w: &TextureWeights,
    n_grains: usize,
    rng: &mut R,
) -> Result<Vec<EulerAngles>, OrientationError> {
    let sum = w.sum();
    if sum > 1.0 + 1e-9 {
        return Err(OrientationError::WeightsExceedUnity { sum });
    }
    let named = ComponentName::named();
    let random = set
        .get(ComponentName::Random)
        .expect("component set must include Random");
    let mut out = Vec::with_capacity(n_grains);
    for _ in 0..n_grains {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut chosen = random;
        for (i, &name) in named.iter().enumerate() {
            acc += w.fractions[i];
            if u < acc {
                chosen = set.get(name).expect("component set must cover all names");
                break;
            }
        }
        out.push(sample_orientation(chosen, rng));
    }
    Ok(out)
}

/// Latin-hypercube sample of the bounds box, in raw percent units.
///
/// Each dimension is split into `n_samples` equal strata with exactly one
/// draw per stratum; strata are assigned by a seeded shuffle so the joint
/// design is space-filling.
pub fn sample_weight_vectors<R: Rng + ?Sized>(
    bounds: &TextureBounds,
    n_samples: usize,
    rng: &mut R,
) -> Vec<[f64; N_COMPONENTS]> {
    crate::sampling::latin_hypercube(&bounds.ranges, n_samples, rng)
        .into_iter()
        .map(|v| {
            let mut arr = [0.0; N_COMPONENTS];
            arr.copy_from_slice(&v);
            arr
        })
        .collect()
}

/// LHS draw of normalized texture weights over the bounds box.
pub fn sample_weights<R: Rng + ?Sized>(
    bounds: &TextureBounds,
    n_samples: usize,
    rng: &mut R,
) -> Vec<TextureWeights> {
    sample_weight_vectors(bounds, n_samples, rng)
        .iter()
        .map(normalize_weights)
        .collect()
}
