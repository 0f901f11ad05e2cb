use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use segfb_core::almgren::FrequencyConfig;
use segfb_core::blowup::FitConfig;
use segfb_core::flatness::FlatnessConfig;
use segfb_core::linearized::{ExpansionConfig, LinearizedConfig};
use segfb_core::solver::SolveConfig;
use segfb_core::verify::VerifyConfig;
use segfb_core::ExtensionGrid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Solve,
    Frequency,
    Blowup,
    Classify,
    Linearize,
    Flatness,
    Spectral,
    VerifyAll,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub command: Command,
    #[serde(default)]
    pub grid: GridSpec,
    #[serde(default)]
    pub input: Input,
    #[serde(default)]
    pub solver: SolveConfig,
    #[serde(default)]
    pub frequency: FrequencyParams,
    #[serde(default)]
    pub blowup: BlowupParams,
    #[serde(default)]
    pub classify: ClassifyParams,
    #[serde(default)]
    pub linearize: LinearizeParams,
    #[serde(default)]
    pub flatness: FlatnessParams,
    #[serde(default)]
    pub spectral: SpectralParams,
    #[serde(default)]
    pub verify: VerifyConfig,
    #[serde(default)]
    pub out: Option<PathBuf>,
    /// Recorded in the manifest; every pipeline is deterministic.
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub n: usize,
    /// `(lo, hi)` per trace axis; `[-1, 1]` on every axis when absent.
    pub x_extents: Option<Vec<(f64, f64)>>,
    pub z_max: f64,
    pub h: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self { n: 2, x_extents: None, z_max: 1.0, h: 1.0 / 32.0 }
    }
}

impl GridSpec {
    pub fn build(&self) -> segfb_core::Result<Arc<ExtensionGrid>> {
        let ext = self.x_extents.clone().unwrap_or_else(|| vec![(-1.0, 1.0); self.n]);
        Ok(Arc::new(ExtensionGrid::new(self.n, &ext, self.z_max, self.h)?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileName {
    /// `(a₁U(t, z), a₂Ū(t, z))` with `t = ν·x + shift - cubic x₁³`.
    HalfPlanePair,
    /// Homogeneous pair on opposite quadrant pairs (`n = 2`).
    QuadrantCross,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProfileSpec {
    pub name: ProfileName,
    pub amplitudes: [f64; 2],
    /// Tilt of `ν` from `e_n` towards `e_1`, radians.
    pub angle: f64,
    pub shift: f64,
    pub cubic: f64,
    /// Angular resolution for the cross eigenfunction.
    pub polar_cells: usize,
}

impl Default for ProfileSpec {
    fn default() -> Self {
        Self {
            name: ProfileName::HalfPlanePair,
            amplitudes: [1.0, 1.0],
            angle: 0.0,
            shift: 0.0,
            cubic: 0.0,
            polar_cells: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Input {
    /// Sample the profile on every node.
    Exact {
        #[serde(default)]
        profile: ProfileSpec,
    },
    /// Segregated solve with the profile as boundary data.
    Solve {
        #[serde(default)]
        profile: ProfileSpec,
    },
    /// Read a `.sfld` file.
    Field { path: PathBuf },
}

impl Default for Input {
    fn default() -> Self {
        Input::Exact { profile: ProfileSpec::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FrequencyParams {
    /// Trace coordinates; the origin when absent.
    pub center: Option<Vec<f64>>,
    pub radii: Vec<f64>,
    pub settings: FrequencyConfig,
}

impl Default for FrequencyParams {
    fn default() -> Self {
        Self { center: None, radii: vec![0.1, 0.2, 0.3, 0.4, 0.5], settings: FrequencyConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BlowupParams {
    pub center: Option<Vec<f64>>,
    /// Rescaling radius.
    pub t: f64,
    pub fit: FitConfig,
}

impl Default for BlowupParams {
    fn default() -> Self {
        Self { center: None, t: 0.5, fit: FitConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifyParams {
    pub delta: f64,
    pub radii: Vec<f64>,
    /// Interface points with every trace coordinate within this bound are
    /// classified, unless `candidates` is given.
    pub window: f64,
    pub candidates: Option<Vec<Vec<f64>>>,
}

impl Default for ClassifyParams {
    fn default() -> Self {
        Self { delta: 0.1, radii: vec![0.1, 0.2, 0.3, 0.4], window: 0.5, candidates: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LinearBoundary {
    /// The explicit minimizer pair times `scale`.
    Explicit { scale: f64 },
    /// `g_i = c₀ + Σ_k c_{k+1} x_k` over all `n + 1` coordinates.
    Affine { g1: Vec<f64>, g2: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinearizeParams {
    pub boundary: LinearBoundary,
    pub points: Vec<Vec<f64>>,
    pub settings: LinearizedConfig,
    pub expansion: ExpansionConfig,
}

impl Default for LinearizeParams {
    fn default() -> Self {
        Self {
            boundary: LinearBoundary::Explicit { scale: 1.0 / 7.0 },
            points: [-0.4, -0.2, 0.0, 0.2, 0.4].iter().map(|&x| vec![x, 0.0]).collect(),
            settings: LinearizedConfig::default(),
            expansion: ExpansionConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlatnessParams {
    pub rho: f64,
    /// Input flatness; measured against `e_n` on the outer ball when absent.
    pub epsilon: Option<f64>,
    pub settings: FlatnessConfig,
}

impl Default for FlatnessParams {
    fn default() -> Self {
        Self { rho: 0.25, epsilon: None, settings: FlatnessConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpectralParams {
    pub openings: Vec<f64>,
    pub polar_cells: usize,
}

impl Default for SpectralParams {
    fn default() -> Self {
        Self { openings: vec![FRAC_PI_4, FRAC_PI_2, 3.0 * FRAC_PI_4], polar_cells: 64 }
    }
}

#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "config error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        let mut cfg: Self = serde_json::from_str(&text).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let Input::Field { path: p } = &mut cfg.input {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if let Some(o) = &mut cfg.out {
            if o.is_relative() {
                *o = base.join(&*o);
            }
        }
        Ok(cfg)
    }

    pub fn override_h(&mut self, h: f64) {
        self.grid.h = h;
        self.verify.h = h;
    }

    /// Checks everything that can be checked without running.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError(m));
        if self.command == Command::VerifyAll {
            if !(self.verify.h > 0.0 && self.verify.recovery_h > 0.0) {
                return bad("verify spacings must be positive".into());
            }
            if self.verify.only.iter().any(|&id| !(1..=12).contains(&id)) {
                return bad(format!("verify.only {:?} names unknown checks", self.verify.only));
            }
            return Ok(());
        }
        if self.command == Command::Spectral {
            if self.spectral.openings.is_empty() {
                return bad("spectral.openings is empty".into());
            }
            if let Some(o) = self.spectral.openings.iter().find(|o| !(**o > 0.0 && **o < std::f64::consts::PI)) {
                return bad(format!("opening {o} outside (0, π)"));
            }
            return Ok(());
        }
        let g = self.grid.build().map_err(|e| ConfigError(format!("grid: {e}")))?;
        let n = g.n();
        match &self.input {
            Input::Field { path } => {
                if !path.is_file() {
                    return bad(format!("input field {} does not exist", path.display()));
                }
            }
            Input::Exact { profile } | Input::Solve { profile } => {
                if profile.name == ProfileName::QuadrantCross && n != 2 {
                    return bad("quadrant_cross needs n = 2".into());
                }
                if profile.amplitudes.iter().any(|a| !(*a >= 0.0) || !a.is_finite()) {
                    return bad("profile amplitudes must be nonnegative".into());
                }
            }
        }
        let trace_point = |what: &str, c: &Option<Vec<f64>>| match c {
            Some(c) if c.len() != n => bad(format!("{what} has {} coordinates, trace has {n}", c.len())),
            _ => Ok(()),
        };
        match self.command {
            Command::Solve => {
                if !matches!(self.input, Input::Solve { .. }) {
                    return bad("solve needs input.kind = \"solve\"".into());
                }
            }
            Command::Frequency => {
                trace_point("frequency.center", &self.frequency.center)?;
                if self.frequency.radii.is_empty() || self.frequency.radii.iter().any(|r| !(*r > 0.0)) {
                    return bad("frequency.radii must be positive and nonempty".into());
                }
            }
            Command::Blowup => {
                trace_point("blowup.center", &self.blowup.center)?;
                if !(self.blowup.t > 0.0) {
                    return bad("blowup.t must be positive".into());
                }
            }
            Command::Classify => {
                if !(self.classify.delta >= 0.0) || self.classify.radii.len() < 3 {
                    return bad("classify needs delta >= 0 and at least three radii".into());
                }
                if let Some(cs) = &self.classify.candidates {
                    for c in cs {
                        trace_point("candidate", &Some(c.clone()))?;
                    }
                }
            }
            Command::Linearize => {
                if n < 2 {
                    return bad("linearize needs n >= 2".into());
                }
                if let LinearBoundary::Affine { g1, g2 } = &self.linearize.boundary {
                    if g1.len() != n + 2 || g2.len() != n + 2 {
                        return bad(format!("affine coefficients need {} entries", n + 2));
                    }
                }
                for p in &self.linearize.points {
                    trace_point("linearize point", &Some(p.clone()))?;
                }
            }
            Command::Flatness => {
                if !(self.flatness.rho > 0.0) {
                    return bad("flatness.rho must be positive".into());
                }
            }
            Command::Spectral | Command::VerifyAll => {}
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> Result<ExperimentConfig, serde_json::Error> {
        serde_json::from_str(s)
    }

    #[test]
    fn defaults_fill_missing_sections() {
        let c = parse(r#"{ "command": "frequency" }"#).unwrap();
        assert_eq!(c.grid.n, 2);
        assert!(c.validate().is_ok());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(parse(r#"{ "command": "solve", "grid": { "hh": 0.1 } }"#).is_err());
        assert!(parse(r#"{ "command": "solve", "input": { "kind": "exact", "profil": {} } }"#).is_err());
    }

    #[test]
    fn validation_catches_shape_errors() {
        let c = parse(r#"{ "command": "frequency", "frequency": { "center": [0.0] } }"#).unwrap();
        assert!(c.validate().is_err());
        let c = parse(r#"{ "command": "spectral", "spectral": { "openings": [3.5] } }"#).unwrap();
        assert!(c.validate().is_err());
        let c = parse(r#"{ "command": "solve", "input": { "kind": "exact" } }"#).unwrap();
        assert!(c.validate().is_err());
        let c = parse(r#"{ "command": "verify-all", "verify": { "only": [13] } }"#).unwrap();
        assert!(c.validate().is_err());
    }

    #[test]
    fn relative_paths_follow_the_config() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, r#"{ "command": "solve", "input": { "kind": "solve" }, "out": "res" }"#).unwrap();
        let c = ExperimentConfig::load(&p).unwrap();
        assert_eq!(c.out.unwrap(), dir.path().join("res"));
    }
}
