//! Campaign configuration: strict JSON schema with documented defaults.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::calibrate::FreeParameter;
use crate::cpcore::MaterialParams;
use crate::orientations::{TextureBounds, TextureComponentSet, COMPONENT_ABBREVS, N_COMPONENTS};
use crate::polycrystal::{GrainSizeSpec, LoadingProgram};

use super::PipelineError;

/// Which aggregate simulator produces the per-sample curves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SimulatorKind {
    Taylor,
    Fem,
}

/// Material definition: explicit constants, or a reference curve the plastic
/// constants are calibrated against before the campaign starts.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MaterialSource {
    Params(MaterialParams),
    Calibration(MaterialCalibration),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaterialCalibration {
    /// CSV with header `strain,stress_mpa`.
    pub reference_csv: PathBuf,
    #[serde(default = "default_calibration_evals")]
    pub max_evals: usize,
    #[serde(default = "default_calibration_tolerance")]
    pub tolerance: f64,
    /// Free parameters with search boxes; the standard five when omitted.
    #[serde(default)]
    pub free_parameters: Option<Vec<FreeParameter>>,
    /// Grain count of the fixed calibration aggregate.
    #[serde(default = "default_calibration_grains")]
    pub n_grains: usize,
}

fn default_calibration_evals() -> usize {
    300
}

fn default_calibration_tolerance() -> f64 {
    1e-3
}

fn default_calibration_grains() -> usize {
    40
}

/// Default search boxes for the standard five-parameter free set.
pub fn default_free_parameters() -> Vec<FreeParameter> {
    [
        ("rho_ssd_init", 2.0, 100.0),
        ("C_hard", 0.05, 2.0),
        ("D_soft", 5.0, 300.0),
        ("E_kin", 500.0, 20_000.0),
        ("F_kin", 20.0, 600.0),
    ]
    .into_iter()
    .map(|(name, lo, hi)| FreeParameter {
        name: name.into(),
        lo,
        hi,
    })
    .collect()
}

/// Texture bounds entry mirroring the bounds file schema.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsEntry {
    pub name: String,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FemConfig {
    #[serde(default = "default_fem_elements")]
    pub n_elem_per_edge: usize,
    /// RVE cube edge, um.
    #[serde(default = "default_fem_edge")]
    pub edge_length: f64,
}

fn default_fem_elements() -> usize {
    6
}

fn default_fem_edge() -> f64 {
    40.0
}

impl Default for FemConfig {
    fn default() -> Self {
        Self {
            n_elem_per_edge: default_fem_elements(),
            edge_length: default_fem_edge(),
        }
    }
}

/// Loading program as configured (output grid optional, defaults to a uniform
/// grid of `n_output` points).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadingConfig {
    #[serde(default = "default_target_strain")]
    pub target_strain: f64,
    #[serde(default = "default_strain_rate")]
    pub strain_rate: f64,
    #[serde(default = "default_n_steps")]
    pub n_steps: usize,
    #[serde(default = "default_n_output")]
    pub n_output: usize,
    #[serde(default)]
    pub output_grid: Option<Vec<f64>>,
}

fn default_target_strain() -> f64 {
    0.04
}
fn default_strain_rate() -> f64 {
    1e-3
}
fn default_n_steps() -> usize {
    80
}
fn default_n_output() -> usize {
    101
}

impl Default for LoadingConfig {
    fn default() -> Self {
        Self {
            target_strain: default_target_strain(),
            strain_rate: default_strain_rate(),
            n_steps: default_n_steps(),
            n_output: default_n_output(),
            output_grid: None,
        }
    }
}

impl LoadingConfig {
    pub fn to_program(&self) -> LoadingProgram {
        match &self.output_grid {
            Some(grid) => LoadingProgram {
                target_strain: self.target_strain,
                strain_rate: self.strain_rate,
                n_steps: self.n_steps,
                output_grid: grid.clone(),
            },
            None => LoadingProgram::to_strain(
                self.target_strain,
                self.strain_rate,
                self.n_steps,
                self.n_output,
            ),
        }
    }
}

/// Full campaign configuration. Unknown keys are rejected.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub workers: Option<usize>,
    #[serde(default)]
    pub material: Option<MaterialSource>,
    /// Texture bounds entries; weld EBSD defaults when omitted.
    #[serde(default)]
    pub texture_bounds: Option<Vec<BoundsEntry>>,
    /// Misorientation spread FWHM for all named components, degrees.
    #[serde(default = "default_spread")]
    pub component_spread_fwhm: f64,
    #[serde(default = "default_n_samples")]
    pub n_samples: usize,
    #[serde(default = "default_grain_count")]
    pub grain_count: usize,
    #[serde(default)]
    pub grain_size: GrainSizeSpecConfig,
    #[serde(default)]
    pub loading: LoadingConfig,
    #[serde(default = "default_pce_degree")]
    pub pce_degree: usize,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    #[serde(default = "default_simulator")]
    pub simulator: SimulatorKind,
    #[serde(default)]
    pub fem: FemConfig,
    /// Offset strains reported by the analysis.
    #[serde(default = "default_offsets")]
    pub offsets: Vec<f64>,
}

fn default_seed() -> u64 {
    42
}
fn default_spread() -> f64 {
    15.0
}
fn default_n_samples() -> usize {
    200
}
fn default_grain_count() -> usize {
    615
}
fn default_pce_degree() -> usize {
    2
}
fn default_train_fraction() -> f64 {
    0.8
}
fn default_simulator() -> SimulatorKind {
    SimulatorKind::Taylor
}
fn default_offsets() -> Vec<f64> {
    vec![0.002, 0.01, 0.03]
}

/// Grain-size block with serde defaults mirroring `GrainSizeSpec`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GrainSizeSpecConfig {
    #[serde(default = "default_gs_mean")]
    pub mean: f64,
    #[serde(default = "default_gs_std")]
    pub std: f64,
    #[serde(default = "default_gs_min")]
    pub min_cut: f64,
    #[serde(default = "default_gs_max")]
    pub max_cut: f64,
}

fn default_gs_mean() -> f64 {
    20.0
}
fn default_gs_std() -> f64 {
    8.0
}
fn default_gs_min() -> f64 {
    4.0
}
fn default_gs_max() -> f64 {
    36.0
}

impl Default for GrainSizeSpecConfig {
    fn default() -> Self {
        Self {
            mean: default_gs_mean(),
            std: default_gs_std(),
            min_cut: default_gs_min(),
            max_cut: default_gs_max(),
        }
    }
}

impl GrainSizeSpecConfig {
    pub fn to_spec(&self) -> GrainSizeSpec {
        GrainSizeSpec {
            mean: self.mean,
            std: self.std,
            min_cut: self.min_cut,
            max_cut: self.max_cut,
        }
    }
}

impl Default for CampaignConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

impl CampaignConfig {
    pub fn from_json(text: &str) -> Result<Self, PipelineError> {
        let config: Self = serde_json::from_str(text)
            .map_err(|e| PipelineError::Config(format!("config parse: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("reading {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(PipelineError::Config(format!(
                "train_fraction {} must be in (0, 1)",
                self.train_fraction
            )));
        }
        if self.n_samples < 2 {
            return Err(PipelineError::Config(format!(
                "n_samples {} must be >= 2",
                self.n_samples
            )));
        }
        if self.grain_count < 1 {
            return Err(PipelineError::Config("grain_count must be >= 1".into()));
        }
        self.grain_size
            .to_spec()
            .validate()
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        self.bounds()?;
        Ok(())
    }

    /// Texture bounds resolved against the canonical component order.
    pub fn bounds(&self) -> Result<TextureBounds, PipelineError> {
        match &self.texture_bounds {
            None => Ok(TextureBounds::weld_ebsd_defaults()),
            Some(entries) => {
                let mut ranges = [(f64::NAN, f64::NAN); N_COMPONENTS];
                for entry in entries {
                    let idx = COMPONENT_ABBREVS
                        .iter()
                        .position(|&a| a == entry.name)
                        .ok_or_else(|| {
                            PipelineError::Config(format!(
                                "unknown texture component {:?}",
                                entry.name
                            ))
                        })?;
                    ranges[idx] = (entry.min, entry.max);
                }
                for (i, r) in ranges.iter().enumerate() {
                    if r.0.is_nan() {
                        return Err(PipelineError::Config(format!(
                            "texture_bounds missing component {}",
                            COMPONENT_ABBREVS[i]
                        )));
                    }
                }
                TextureBounds::new(ranges).map_err(|e| PipelineError::Config(e.to_string()))
            }
        }
    }

    pub fn component_set(&self) -> TextureComponentSet {
        TextureComponentSet::with_spread(self.component_spread_fwhm)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_uses_documented_defaults() {
        let config = CampaignConfig::from_json("{}").unwrap();
        assert_eq!(config.seed, 42);
        assert_eq!(config.n_samples, 200);
        assert_eq!(config.grain_count, 615);
        assert_eq!(config.pce_degree, 2);
        assert_eq!(config.train_fraction, 0.8);
        assert_eq!(config.simulator, SimulatorKind::Taylor);
        assert_eq!(config.offsets, vec![0.002, 0.01, 0.03]);
        let load = config.loading.to_program();
        assert_eq!(load.n_steps, 80);
        assert_eq!(load.output_grid.len(), 101);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = CampaignConfig::from_json(r#"{"n_smaples": 100}"#).unwrap_err();
        assert!(err.to_string().contains("n_smaples") || err.to_string().contains("unknown"));
    }

    #[test]
    fn invalid_train_fraction_is_rejected() {
        assert!(CampaignConfig::from_json(r#"{"train_fraction": 1.5}"#).is_err());
        assert!(CampaignConfig::from_json(r#"{"n_samples": 1}"#).is_err());
    }

    #[test]
    fn material_source_accepts_inline_params() {
        let params = serde_json::to_string(&MaterialParams::default()).unwrap();
        let config =
            CampaignConfig::from_json(&format!(r#"{{"material": {params}}}"#)).unwrap();
        assert!(matches!(config.material, Some(MaterialSource::Params(_))));
    }

    #[test]
    fn material_source_accepts_calibration_reference() {
        let config = CampaignConfig::from_json(
            r#"{"material": {"reference_csv": "ref.csv", "max_evals": 50}}"#,
        )
        .unwrap();
        match config.material {
            Some(MaterialSource::Calibration(c)) => {
                assert_eq!(c.max_evals, 50);
                assert_eq!(c.n_grains, 40);
            }
            other => panic!("unexpected material source: {other:?}"),
        }
    }

    #[test]
    fn custom_bounds_resolve_in_canonical_order() {
        let entries: Vec<String> = COMPONENT_ABBREVS
            .iter()
            .enumerate()
            .map(|(i, name)| format!(r#"{{"name": "{name}", "min": {i}, "max": {}}}"#, i + 10))
            .collect();
        let json = format!(r#"{{"texture_bounds": [{}]}}"#, entries.join(","));
        let config = CampaignConfig::from_json(&json).unwrap();
        let bounds = config.bounds().unwrap();
        assert_eq!(bounds.ranges[0], (0.0, 10.0));
        assert_eq!(bounds.ranges[7], (7.0, 17.0));
    }
}
