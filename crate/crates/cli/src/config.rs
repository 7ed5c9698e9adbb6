//! Scenario configuration files.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use tipwarn::drift::{
    DriftModel, OuLinearization, SaddleNodeLinearDrift, SaddleNodeNonlinearDrift, StraightDrift,
};
use tipwarn::grid::{DensityState, SpatialGrid, TimeGrid};
use tipwarn::monsoon::{AlbedoPath, MonsoonModel, MonsoonParams, SweepGrid};

use crate::CliError;

pub const ARTIFACT_VERSION: &str = concat!("tipwarn ", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub model: ModelConfig,
    pub grid: GridConfig,
    pub time: TimeConfig,
    pub d: f64,
    #[serde(default)]
    pub initial: InitialConfig,
    #[serde(default)]
    pub outputs: OutputsConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mc: Option<McConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bifurcation: Option<BifurcationConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate_threshold: Option<RateThresholdConfig>,
    #[serde(default)]
    pub strict_admissibility: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
#[allow(clippy::large_enum_variant)]
pub enum ModelConfig {
    Straight {
        #[serde(default)]
        x0: f64,
    },
    SaddleLinear {
        p0: f64,
        eps: f64,
    },
    SaddleNonlinear {
        p0: f64,
        eps: f64,
        lambda_max: f64,
    },
    Ou {
        kappa: f64,
        center: f64,
    },
    Monsoon {
        #[serde(default)]
        params: MonsoonParams,
        eps: f64,
    },
}

/// `n` interior-plus-one nodes: `dx = (x_end - x_start) / (n + 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub x_start: f64,
    pub x_end: f64,
    pub n: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeConfig {
    pub t0: f64,
    pub t_end: f64,
    pub m: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialConfig {
    /// Leading eigenvector of the stationary operator at `t0`.
    #[default]
    Stationary,
    Gaussian { mean: f64, variance: f64 },
    /// Exact straight-drift density at `t0` for a release at `x0`, `t = 0`.
    Analytic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputsConfig {
    #[serde(default = "yes")]
    pub series: bool,
    /// Times at which to write the density.
    #[serde(default)]
    pub densities: Vec<f64>,
    #[serde(default = "yes")]
    pub lag1: bool,
    #[serde(default = "yes")]
    pub kramers: bool,
    #[serde(default = "yes")]
    pub quasi_static: bool,
    /// Source of the nonlinear quasi-static table; omitted means no
    /// nonlinear reference.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline: Option<BaselineSource>,
}

fn yes() -> bool {
    true
}

impl Default for OutputsConfig {
    fn default() -> Self {
        Self {
            series: true,
            densities: Vec::new(),
            lag1: true,
            kramers: true,
            quasi_static: true,
            baseline: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum BaselineSource {
    /// Build the table on the default noise grid.
    Build,
    /// Read a table written by the `baseline` subcommand, relative to the
    /// config file.
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McConfig {
    pub n_paths: usize,
    pub dt_mc: f64,
    pub seed: u64,
    pub sample_times: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BifurcationConfig {
    pub q_min: f64,
    pub q_max: f64,
    pub samples: usize,
}

/// Points overriding the base scenario. Monsoon sweeps run to the point's
/// `t_end` with the albedo ramp `eps`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub points: Vec<SweepPointConfig>,
    /// Let monsoon points refine the grid to stay admissible.
    #[serde(default = "yes")]
    pub refine: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct SweepPointConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_end: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateThresholdConfig {
    pub eps_lo: f64,
    pub eps_hi: f64,
    pub tol: f64,
}

impl ScenarioConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg: Self = serde_json::from_str(&text)
            .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
        if let Some(BaselineSource::File(f)) = &mut cfg.outputs.baseline {
            if f.is_relative() {
                if let Some(dir) = path.parent() {
                    *f = dir.join(&*f);
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Validation(m));
        if self.name.is_empty()
            || !self
                .name
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
        {
            return bad(format!("name {:?} must be non-empty [A-Za-z0-9_-]", self.name));
        }
        if !(self.d > 0.0) || !self.d.is_finite() {
            return bad(format!("d must be positive, got {}", self.d));
        }
        if !(self.grid.x_end > self.grid.x_start) || self.grid.n < 2 {
            return bad("grid needs x_end > x_start and n >= 2".into());
        }
        if !(self.time.t_end >= self.time.t0) || (self.time.m == 0) != (self.time.t_end == self.time.t0) {
            return bad("time needs t_end >= t0 and m > 0 unless t_end == t0".into());
        }
        if matches!(self.initial, InitialConfig::Analytic) {
            if !matches!(self.model, ModelConfig::Straight { .. }) {
                return bad("analytic initial density needs the straight model".into());
            }
            if !(self.time.t0 > 0.0) {
                return bad("analytic initial density needs t0 > 0".into());
            }
        }
        if let InitialConfig::Gaussian { variance, .. } = self.initial {
            if !(variance > 0.0) {
                return bad("gaussian variance must be positive".into());
            }
        }
        for &t in &self.outputs.densities {
            if !(t >= self.time.t0 && t <= self.time.t_end) {
                return bad(format!("density time {t} outside the time window"));
            }
        }
        if let Some(mc) = &self.mc {
            if mc.n_paths == 0 || !(mc.dt_mc > 0.0) || mc.sample_times.is_empty() {
                return bad("mc needs n_paths > 0, dt_mc > 0 and sample times".into());
            }
        }
        if let Some(b) = &self.bifurcation {
            if !(b.q_min > 0.0 && b.q_max > b.q_min) || b.samples < 3 {
                return bad("bifurcation needs 0 < q_min < q_max and samples >= 3".into());
            }
        }
        if let Some(s) = &self.sweep {
            if s.points.is_empty() {
                return bad("sweep needs at least one point".into());
            }
        }
        self.spatial_grid()?;
        self.time_grid()?;
        self.build_model()?;
        Ok(())
    }

    pub fn spatial_grid(&self) -> Result<SpatialGrid, CliError> {
        Ok(SpatialGrid::new(self.grid.x_start, self.grid.x_end, self.grid.n)?)
    }

    pub fn time_grid(&self) -> Result<TimeGrid, CliError> {
        Ok(TimeGrid::new(self.time.t0, self.time.t_end, self.time.m)?)
    }

    pub fn build_model(&self) -> Result<Box<dyn DriftModel>, CliError> {
        Ok(match &self.model {
            ModelConfig::Straight { .. } => Box::new(StraightDrift),
            ModelConfig::SaddleLinear { p0, eps } => Box::new(SaddleNodeLinearDrift::new(*p0, *eps)?),
            ModelConfig::SaddleNonlinear {
                p0,
                eps,
                lambda_max,
            } => Box::new(SaddleNodeNonlinearDrift::new(*p0, *eps, *lambda_max)?),
            ModelConfig::Ou { kappa, center } => Box::new(OuLinearization::new(*kappa, *center)?),
            ModelConfig::Monsoon { .. } => Box::new(self.monsoon_model()?),
        })
    }

    pub fn monsoon_model(&self) -> Result<MonsoonModel, CliError> {
        let ModelConfig::Monsoon { params, eps } = &self.model else {
            return Err(CliError::Validation("scenario is not a monsoon model".into()));
        };
        let window = tipwarn::monsoon::SearchWindow {
            lo: self.grid.x_start,
            hi: self.grid.x_end,
            stencil: self.spatial_grid()?.dx(),
            ..Default::default()
        };
        Ok(MonsoonModel::new(*params)?
            .with_albedo(AlbedoPath {
                a0: params.a_sys0,
                eps: *eps,
            })
            .with_window(window))
    }

    pub fn monsoon_sweep_grid(&self) -> Result<SweepGrid, CliError> {
        let g = self.spatial_grid()?;
        Ok(SweepGrid {
            x_start: self.grid.x_start,
            x_end: self.grid.x_end,
            dx: g.dx(),
            dt: self.time_grid()?.dt(),
            refine: self.sweep.as_ref().is_none_or(|s| s.refine),
        })
    }

    /// Initial density on `g` at `t0`.
    pub fn initial_density(
        &self,
        model: &dyn DriftModel,
        g: &SpatialGrid,
    ) -> Result<DensityState, CliError> {
        Ok(match &self.initial {
            InitialConfig::Stationary => {
                tipwarn::solver::solve_stationary(model, g, self.d, self.time.t0)?.density
            }
            InitialConfig::Gaussian { mean, variance } => DensityState::gaussian(g, *mean, *variance),
            InitialConfig::Analytic => {
                DensityState::from_fn(g, |x| self.analytic_density(x, self.time.t0).unwrap_or(0.0))
            }
        })
    }

    /// Exact straight-drift density (free space) for a release at `x0`, `t = 0`.
    pub fn analytic_density(&self, x: f64, t: f64) -> Option<f64> {
        let ModelConfig::Straight { x0 } = self.model else {
            return None;
        };
        let var = 2.0 * self.d * t;
        Some((-(x - (x0 - t)).powi(2) / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt())
    }

    /// Canonical single-line serialization of the resolved config.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_json().as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "name": "t",
        "model": {"kind": "saddle_linear", "p0": 1.0, "eps": 0.0075},
        "grid": {"x_start": -2.5, "x_end": 2.0, "n": 89},
        "time": {"t0": 0.0, "t_end": 1.0, "m": 100},
        "d": 0.2
    }"#;

    #[test]
    fn minimal_config_gets_defaults() {
        let c: ScenarioConfig = serde_json::from_str(MINIMAL).unwrap();
        c.validate().unwrap();
        assert_eq!(c.initial, InitialConfig::Stationary);
        assert!(c.outputs.series && c.outputs.lag1);
        assert!((c.spatial_grid().unwrap().dx() - 0.05).abs() < 1e-15);
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = MINIMAL.replace("\"d\": 0.2", "\"d\": 0.2, \"noise\": 1");
        assert!(serde_json::from_str::<ScenarioConfig>(&text).is_err());
        let text = MINIMAL.replace("\"eps\": 0.0075", "\"eps\": 0.0075, \"q\": 1");
        assert!(serde_json::from_str::<ScenarioConfig>(&text).is_err());
    }

    #[test]
    fn invalid_values_rejected() {
        let c: ScenarioConfig = serde_json::from_str(&MINIMAL.replace("0.2", "-0.2")).unwrap();
        assert!(matches!(c.validate(), Err(CliError::Validation(_))));
        let c: ScenarioConfig =
            serde_json::from_str(&MINIMAL.replace("\"name\": \"t\"", "\"name\": \"a/b\"")).unwrap();
        assert!(c.validate().is_err());
        let text = MINIMAL.replace("\"d\": 0.2", "\"d\": 0.2, \"initial\": {\"kind\": \"analytic\"}");
        let c: ScenarioConfig = serde_json::from_str(&text).unwrap();
        assert!(c.validate().is_err());
    }

    #[test]
    fn hash_ignores_formatting_and_key_order() {
        let a: ScenarioConfig = serde_json::from_str(MINIMAL).unwrap();
        let shuffled = r#"{"d":0.2,"time":{"m":100,"t_end":1.0,"t0":0.0},
            "grid":{"n":89,"x_end":2.0,"x_start":-2.5},
            "model":{"eps":0.0075,"p0":1.0,"kind":"saddle_linear"},"name":"t"}"#;
        let b: ScenarioConfig = serde_json::from_str(shuffled).unwrap();
        assert_eq!(a.hash(), b.hash());
        let pretty = serde_json::to_string_pretty(&a).unwrap();
        let c: ScenarioConfig = serde_json::from_str(&pretty).unwrap();
        assert_eq!(a.hash(), c.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn analytic_density_is_normalized() {
        let text = MINIMAL
            .replace(r#"{"kind": "saddle_linear", "p0": 1.0, "eps": 0.0075}"#, r#"{"kind": "straight"}"#);
        let c: ScenarioConfig = serde_json::from_str(&text).unwrap();
        let h = 1e-3;
        let mass: f64 = (-8000..8000).map(|k| c.analytic_density(k as f64 * h, 1.0).unwrap() * h).sum();
        assert!((mass - 1.0).abs() < 1e-9);
    }
}
