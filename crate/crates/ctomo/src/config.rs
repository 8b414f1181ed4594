//! Scenario configuration: one TOML file describing acquisition geometry,
//! phantom, reconstruction grid and algorithms, and metric options.
//!
//! Parsing is strict: unknown keys anywhere are errors, and every numeric
//! constraint is checked up front so a bad config fails before any stage
//! runs. Fields carrying units have a `_mm` or `_deg` suffix.

use crate::geometry::{view_angles, CArmGeometry, Point3};
use crate::recon::{FbpConfig, FilterWindow, MlemConfig, SartConfig};
use crate::volume::VolumeGeometry;
use serde::Deserialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config parse: {0}")]
    Parse(String),
    #[error("config invalid: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Bp,
    Fbp,
    Sart,
    Mlem,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Bp => "bp",
            Algorithm::Fbp => "fbp",
            Algorithm::Sart => "sart",
            Algorithm::Mlem => "mlem",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometrySection {
    pub d_mm: f64,
    pub n_views: usize,
    pub span_deg: f64,
    pub nu: usize,
    pub nv: usize,
    pub pitch_mm: f64,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomSection {
    /// Phantom description file, resolved relative to the config file.
    pub file: String,
    /// Incident photons per pixel. Present: projections are stored as
    /// intensities. Absent: noiseless line integrals.
    pub i0: Option<f64>,
    #[serde(default)]
    pub noise: bool,
    /// 8× supersampling when voxelizing the ground-truth volume.
    #[serde(default)]
    pub supersample: bool,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FbpSection {
    pub window: String,
    pub cutoff: f64,
    pub cosine_weight: bool,
}

impl Default for FbpSection {
    fn default() -> Self {
        let d = FbpConfig::default();
        Self { window: "ramp_hann".into(), cutoff: d.cutoff, cosine_weight: d.cosine_weight }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SartSection {
    pub iterations: usize,
    pub lambda0: f64,
    pub decay: f64,
    pub nonneg: bool,
}

impl Default for SartSection {
    fn default() -> Self {
        let d = SartConfig::default();
        Self { iterations: d.iterations, lambda0: d.lambda0, decay: d.decay, nonneg: d.nonneg }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MlemSection {
    pub iterations: usize,
    pub initial_mu: f64,
    pub floor: f64,
}

impl Default for MlemSection {
    fn default() -> Self {
        Self { iterations: 20, initial_mu: 0.001, floor: 0.0 }
    }
}

fn default_algorithms() -> Vec<Algorithm> {
    vec![Algorithm::Bp, Algorithm::Fbp, Algorithm::Sart, Algorithm::Mlem]
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReconSection {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub spacing_mm: f64,
    /// Center of voxel (0, 0, 0); the grid is centered on the isocenter
    /// when absent.
    pub origin_mm: Option<[f64; 3]>,
    #[serde(default = "default_algorithms")]
    pub algorithms: Vec<Algorithm>,
    #[serde(default)]
    pub fbp: FbpSection,
    #[serde(default)]
    pub sart: SartSection,
    #[serde(default)]
    pub mlem: MlemSection,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
#[serde(default)]
pub struct MetricsSection {
    pub profile: bool,
    pub mtf: bool,
    pub asf: bool,
    /// Feature ROI half-width in voxels (3×3 by default).
    pub feature_half: usize,
    /// Background ROI half-width in voxels (9×9 by default).
    pub bg_half: usize,
    /// Lateral (y) offset of the background ROI from the object center.
    pub bg_offset_mm: f64,
}

impl Default for MetricsSection {
    fn default() -> Self {
        Self {
            profile: true,
            mtf: true,
            asf: true,
            feature_half: 1,
            bg_half: 4,
            bg_offset_mm: 5.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub geometry: GeometrySection,
    pub phantom: PhantomSection,
    pub recon: ReconSection,
    #[serde(default)]
    pub metrics: MetricsSection,
}

impl ScenarioConfig {
    /// Parse and fully validate a scenario config. Total over arbitrary
    /// input: always `Ok` or a structured error, never a panic.
    pub fn from_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: ScenarioConfig =
            toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), ConfigError> {
        self.carm_geometry()?;
        self.grid()?;
        self.fbp_config()?;
        self.sart_config()?;
        if let Some(i0) = self.phantom.i0 {
            if !(i0 > 0.0) || !i0.is_finite() {
                return Err(ConfigError::Invalid(format!("phantom.i0 must be > 0, got {i0}")));
            }
            self.mlem_config(i0)?;
        } else {
            if self.phantom.noise {
                return Err(ConfigError::Invalid(
                    "phantom.noise requires phantom.i0".into(),
                ));
            }
            if self.recon.algorithms.contains(&Algorithm::Mlem) {
                return Err(ConfigError::Invalid(
                    "mlem reconstruction requires phantom.i0".into(),
                ));
            }
            // Validate the section's own numbers even when unused.
            self.mlem_config(1.0)?;
        }
        if self.phantom.file.is_empty() {
            return Err(ConfigError::Invalid("phantom.file must not be empty".into()));
        }
        let m = &self.recon.mlem;
        if !(m.initial_mu > 0.0) || !m.initial_mu.is_finite() {
            return Err(ConfigError::Invalid(format!(
                "recon.mlem.initial_mu must be > 0, got {}",
                m.initial_mu
            )));
        }
        for (i, a) in self.recon.algorithms.iter().enumerate() {
            if self.recon.algorithms[..i].contains(a) {
                return Err(ConfigError::Invalid(format!(
                    "algorithm {:?} listed twice",
                    a.name()
                )));
            }
        }
        if !self.metrics.bg_offset_mm.is_finite() || self.metrics.bg_offset_mm == 0.0 {
            return Err(ConfigError::Invalid(
                "metrics.bg_offset_mm must be finite and nonzero".into(),
            ));
        }
        Ok(())
    }

    pub fn carm_geometry(&self) -> Result<CArmGeometry, ConfigError> {
        let g = &self.geometry;
        let angles = view_angles(g.n_views, g.span_deg)
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        CArmGeometry::new(g.d_mm, angles, g.nu, g.nv, g.pitch_mm)
            .map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    /// The same geometry with the view count replaced (CLI `--views`).
    pub fn carm_geometry_with_views(&self, n_views: usize) -> Result<CArmGeometry, ConfigError> {
        let g = &self.geometry;
        let angles = view_angles(n_views, g.span_deg)
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        CArmGeometry::new(g.d_mm, angles, g.nu, g.nv, g.pitch_mm)
            .map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn grid(&self) -> Result<VolumeGeometry, ConfigError> {
        let r = &self.recon;
        match r.origin_mm {
            Some([x, y, z]) => VolumeGeometry::new(
                r.nx,
                r.ny,
                r.nz,
                r.spacing_mm,
                Point3::new(x, y, z),
            ),
            None => VolumeGeometry::centered(r.nx, r.ny, r.nz, r.spacing_mm),
        }
        .map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn fbp_config(&self) -> Result<FbpConfig, ConfigError> {
        let f = &self.recon.fbp;
        let window = match f.window.as_str() {
            "ramp" => FilterWindow::RampOnly,
            "ramp_hann" => FilterWindow::RampHann,
            other => {
                return Err(ConfigError::Invalid(format!(
                    "recon.fbp.window must be \"ramp\" or \"ramp_hann\", got {other:?}"
                )))
            }
        };
        let cfg = FbpConfig { window, cutoff: f.cutoff, cosine_weight: f.cosine_weight };
        cfg.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(cfg)
    }

    pub fn sart_config(&self) -> Result<SartConfig, ConfigError> {
        let s = &self.recon.sart;
        let cfg = SartConfig {
            iterations: s.iterations,
            lambda0: s.lambda0,
            decay: s.decay,
            nonneg: s.nonneg,
        };
        cfg.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(cfg)
    }

    pub fn mlem_config(&self, i0: f64) -> Result<MlemConfig, ConfigError> {
        let m = &self.recon.mlem;
        let cfg = MlemConfig { iterations: m.iterations, i0, floor: m.floor };
        cfg.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[geometry]
d_mm = 440.0
n_views = 25
span_deg = 40.0
nu = 256
nv = 256
pitch_mm = 0.24

[phantom]
file = "sphere.phantom"
i0 = 1e5

[recon]
nx = 128
ny = 128
nz = 64
spacing_mm = 0.12
"#;

    #[test]
    fn minimal_config_uses_documented_defaults() {
        let cfg = ScenarioConfig::from_str(MINIMAL).unwrap();
        assert_eq!(cfg.recon.algorithms, default_algorithms());
        assert_eq!(cfg.recon.sart.lambda0, 1.0);
        assert_eq!(cfg.recon.sart.decay, 0.8);
        assert_eq!(cfg.recon.mlem.iterations, 20);
        assert_eq!(cfg.recon.mlem.initial_mu, 0.001);
        assert!(cfg.metrics.profile && cfg.metrics.mtf && cfg.metrics.asf);
        assert_eq!(cfg.metrics.bg_offset_mm, 5.0);
        assert!(!cfg.phantom.noise);
        assert_eq!(cfg.phantom.seed, 0);

        let geom = cfg.carm_geometry().unwrap();
        assert_eq!(geom.n_views(), 25);
        assert_eq!(geom.angles[0], -20.0);
        assert_eq!(geom.angles[24], 20.0);
        let grid = cfg.grid().unwrap();
        assert_eq!((grid.nx, grid.ny, grid.nz), (128, 128, 64));
        // Centered by default.
        assert!((grid.origin.x + 127.0 / 2.0 * 0.12).abs() < 1e-12);
    }

    #[test]
    fn sections_override_defaults() {
        let text = format!(
            "{MINIMAL}
[recon.fbp]
window = \"ramp\"
cutoff = 0.8
cosine_weight = true

[recon.sart]
iterations = 4
lambda0 = 0.5
decay = 1.0
nonneg = false

[recon.mlem]
iterations = 7
initial_mu = 0.002
floor = 0.0001

[metrics]
asf = false
bg_offset_mm = -4.0
"
        );
        let cfg = ScenarioConfig::from_str(&text).unwrap();
        let fbp = cfg.fbp_config().unwrap();
        assert_eq!(fbp.window, FilterWindow::RampOnly);
        assert_eq!(fbp.cutoff, 0.8);
        assert!(fbp.cosine_weight);
        let sart = cfg.sart_config().unwrap();
        assert_eq!((sart.iterations, sart.lambda0, sart.decay), (4, 0.5, 1.0));
        assert!(!sart.nonneg);
        let mlem = cfg.mlem_config(1e5).unwrap();
        assert_eq!(mlem.iterations, 7);
        assert_eq!(mlem.floor, 0.0001);
        assert!(!cfg.metrics.asf);
        assert!(cfg.metrics.profile);
    }

    #[test]
    fn partial_sections_keep_remaining_defaults() {
        let text = format!(
            "{MINIMAL}
[recon.sart]
iterations = 3

[recon.mlem]
iterations = 6
"
        );
        let cfg = ScenarioConfig::from_str(&text).unwrap();
        let sart = cfg.sart_config().unwrap();
        assert_eq!((sart.iterations, sart.lambda0, sart.decay, sart.nonneg), (3, 1.0, 0.8, true));
        let mlem = cfg.mlem_config(1e5).unwrap();
        assert_eq!((mlem.iterations, mlem.floor), (6, 0.0));
        assert_eq!(cfg.recon.mlem.initial_mu, 0.001);
    }

    #[test]
    fn unknown_keys_fail_fast() {
        let err = |t: &str| ScenarioConfig::from_str(t).unwrap_err();
        assert!(matches!(err(&format!("{MINIMAL}\nstray = 1\n")), ConfigError::Parse(_)));
        assert!(matches!(
            err(&MINIMAL.replace("pitch_mm = 0.24", "pitch_mm = 0.24\ntypo_key = 3")),
            ConfigError::Parse(_)
        ));
        assert!(matches!(err("[geometry]\n"), ConfigError::Parse(_)));
        assert!(matches!(err("not toml ]["), ConfigError::Parse(_)));
    }

    #[test]
    fn semantic_validation_catches_bad_values() {
        let invalid = |t: String| {
            assert!(
                matches!(ScenarioConfig::from_str(&t), Err(ConfigError::Invalid(_))),
                "expected Invalid for:\n{t}"
            );
        };
        invalid(MINIMAL.replace("span_deg = 40.0", "span_deg = 200.0"));
        invalid(MINIMAL.replace("nx = 128", "nx = 0"));
        invalid(MINIMAL.replace("spacing_mm = 0.12", "spacing_mm = -0.12"));
        invalid(MINIMAL.replace("i0 = 1e5", "i0 = -1.0"));
        invalid(MINIMAL.replace("i0 = 1e5", "noise = true"));
        invalid(MINIMAL.replace(
            "i0 = 1e5",
            "i0 = 1e5\n\n[recon.sart]\niterations = 10\nlambda0 = 3.0\ndecay = 0.8\nnonneg = true",
        ));
        invalid(format!(
            "{}\nalgorithms = [\"bp\", \"bp\"]",
            MINIMAL.trim_end()
        ));
        invalid(MINIMAL.replace("file = \"sphere.phantom\"", "file = \"\""));
        // MLEM without photon counts cannot run.
        invalid(format!(
            "{}\nalgorithms = [\"mlem\"]",
            MINIMAL.replace("i0 = 1e5", "").trim_end()
        ));
    }

    #[test]
    fn views_override_replaces_angle_grid() {
        let cfg = ScenarioConfig::from_str(MINIMAL).unwrap();
        let g = cfg.carm_geometry_with_views(1).unwrap();
        assert_eq!(g.angles, vec![0.0]);
        let g = cfg.carm_geometry_with_views(3).unwrap();
        assert_eq!(g.angles, vec![-20.0, 0.0, 20.0]);
        assert!(cfg.carm_geometry_with_views(0).is_err());
    }
}
