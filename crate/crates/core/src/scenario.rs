//! Scenario configuration: TOML ingestion, derived grids and kernel rules,
//! and the bundled suite (uniform sanity, symmetric well, asymmetric well,
//! single-column equilibrium).

use crate::coefficients::{AssumptionBounds, CoefficientModel, CoefficientSet, InitialCondition};
use crate::eigen::EigenEngine;
use crate::grid::{AgeGrid, TraitGrid};
use crate::kernel::{KernelKind, KernelQuad, MutationKernel};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("could not parse scenario config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("unknown bundled scenario '{0}'")]
    UnknownBundled(String),
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error(transparent)]
    Kernel(#[from] crate::kernel::KernelError),
    #[error(transparent)]
    Eigen(#[from] crate::eigen::EigenError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    #[serde(default = "default_dim")]
    pub dim: usize,
    pub y_min: Vec<f64>,
    pub y_max: Vec<f64>,
    pub dy: Vec<f64>,
    pub dx: f64,
    /// Age cut; derived from the decay rule when absent.
    #[serde(default)]
    pub x_max: Option<f64>,
    #[serde(default)]
    pub periodic_y: bool,
}

fn default_dim() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicsSpec {
    pub enabled: bool,
    #[serde(default)]
    pub y0: Vec<f64>,
    #[serde(default = "default_dyn_dt")]
    pub dt: f64,
    #[serde(default = "default_dyn_t")]
    pub t_final: f64,
}

fn default_dyn_dt() -> f64 {
    0.005
}
fn default_dyn_t() -> f64 {
    0.5
}

impl Default for DynamicsSpec {
    fn default() -> Self {
        DynamicsSpec {
            enabled: false,
            y0: vec![0.0, 0.0],
            dt: default_dyn_dt(),
            t_final: default_dyn_t(),
        }
    }
}

/// The on-disk scenario format (TOML).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub name: String,
    /// Suite role: s1 | s2 | s3 | s4 | custom. Gates which acceptance
    /// criteria are meaningful for this scenario.
    #[serde(default = "default_role")]
    pub role: String,
    pub epsilons: Vec<f64>,
    pub t_final: f64,
    #[serde(default = "default_t_record")]
    pub t_record: f64,
    pub coefficients: CoefficientModel,
    pub kernel: KernelKind,
    pub bounds: AssumptionBounds,
    pub initial: InitialCondition,
    pub grid: GridSpec,
    #[serde(default)]
    pub dynamics: DynamicsSpec,
}

fn default_role() -> String {
    "custom".into()
}
fn default_t_record() -> f64 {
    0.05
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self, ScenarioError> {
        Ok(toml::from_str(text)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("scenario serializes")
    }
}

/// A fully-built scenario: grids, kernel rules, eigen engine.
pub struct Scenario {
    pub config: ScenarioConfig,
    pub coeffs: CoefficientSet,
    pub kernel: MutationKernel,
    /// Main quadrature rule for every solver path.
    pub kq: KernelQuad,
    /// Coarser rule for expensive diagnostics.
    pub kq_diag: KernelQuad,
    pub engine: EigenEngine,
    pub grid: TraitGrid,
    pub age: AgeGrid,
}

impl Scenario {
    pub fn build(config: ScenarioConfig) -> Result<Scenario, ScenarioError> {
        let dim = config.grid.dim;
        if !(dim == 1 || dim == 2) {
            return Err(ScenarioError::Invalid(format!(
                "trait dimension {dim} unsupported (1 or 2)"
            )));
        }
        let coeffs = CoefficientSet::new(config.coefficients.clone(), dim);
        let kernel = MutationKernel::new(config.kernel.clone(), dim);
        let growth = config.bounds.kernel_growth(config.t_final);
        let kq = KernelQuad::build(&kernel, growth, 1e-12)?;
        let kq_diag = KernelQuad::build_coarse(&kernel, growth, 1e-12, 8);

        let grid = if dim == 1 {
            TraitGrid::new_1d(
                config.grid.y_min[0],
                config.grid.y_max[0],
                config.grid.dy[0],
                config.grid.periodic_y,
            )
        } else {
            TraitGrid::new_2d(
                [config.grid.y_min[0], config.grid.y_min[1]],
                [config.grid.y_max[0], config.grid.y_max[1]],
                [config.grid.dy[0], config.grid.dy[1]],
                config.grid.periodic_y,
            )
        };
        let engine = EigenEngine::new(coeffs.clone(), config.bounds.clone(), grid.spacing[0]);

        let x_max = match config.grid.x_max {
            Some(x) => x,
            None => derive_age_cut(&coeffs, &config.bounds, &grid, config.grid.dx),
        };
        let age = AgeGrid::new(x_max, config.grid.dx);

        // the age grid must resolve the birth-support edge exactly
        let x_bar = coeffs.x_bar();
        if x_bar.is_finite() {
            let cells = x_bar / config.grid.dx;
            if (cells - cells.round()).abs() > 1e-9 {
                return Err(ScenarioError::Invalid(format!(
                    "dx = {} does not divide the birth support bound {}",
                    config.grid.dx, x_bar
                )));
            }
        }
        Ok(Scenario {
            config,
            coeffs,
            kernel,
            kq,
            kq_diag,
            engine,
            grid,
            age,
        })
    }

    pub fn from_toml(text: &str) -> Result<Scenario, ScenarioError> {
        Scenario::build(ScenarioConfig::from_toml(text)?)
    }

    /// Initial phase on the grid.
    pub fn u0_field(&self) -> Vec<f64> {
        self.grid
            .nodes()
            .map(|(_, y)| self.config.initial.u0(y, self.grid.dim))
            .collect()
    }

    /// Initial corrector weight on the grid.
    pub fn gamma0_field(&self) -> Vec<f64> {
        self.grid
            .nodes()
            .map(|(_, y)| self.config.initial.gamma0(y))
            .collect()
    }
}

/// Smallest age where the slowest profile weight exp(lam_up curly - dcum)
/// decays below 1e-14, maximized over traits and capped at 50 x_bar.
fn derive_age_cut(
    coeffs: &CoefficientSet,
    bounds: &AssumptionBounds,
    grid: &TraitGrid,
    dx: f64,
) -> f64 {
    let x_bar = coeffs.x_bar();
    let cap = 50.0 * if x_bar.is_finite() { x_bar.max(1.0) } else { 1.0 };
    let target = (1e-14f64).ln();
    let mut x_cut = 0.0f64;
    let stride = (grid.len() / 8).max(1);
    for i in (0..grid.len()).step_by(stride) {
        let y = grid.node(i);
        let mut x = if x_bar.is_finite() { x_bar } else { 1.0 };
        while bounds.lambda_upper * coeffs.curly_a(x, y) - coeffs.death_integral(x, y) > target
            && x < cap
        {
            x += 16.0 * dx;
        }
        x_cut = x_cut.max(x);
    }
    (x_cut.min(cap) / dx).ceil() * dx
}

/// Bundled scenario suite.
pub const BUNDLED: &[(&str, &str)] = &[
    ("s1-uniform", include_str!("../scenarios/s1-uniform.toml")),
    (
        "s2-symmetric-gaussian",
        include_str!("../scenarios/s2-symmetric-gaussian.toml"),
    ),
    (
        "s3-asymmetric-well",
        include_str!("../scenarios/s3-asymmetric-well.toml"),
    ),
    (
        "s4-single-column",
        include_str!("../scenarios/s4-single-column.toml"),
    ),
    ("s2-mini", include_str!("../scenarios/s2-mini.toml")),
];

pub fn bundled(name: &str) -> Result<ScenarioConfig, ScenarioError> {
    for (n, text) in BUNDLED {
        if *n == name {
            return ScenarioConfig::from_toml(text);
        }
    }
    Err(ScenarioError::UnknownBundled(name.to_string()))
}

/// Load a scenario from a bundled name or a TOML file path.
pub fn load(name_or_path: &str) -> Result<ScenarioConfig, ScenarioError> {
    if let Ok(cfg) = bundled(name_or_path) {
        return Ok(cfg);
    }
    match std::fs::read_to_string(name_or_path) {
        Ok(text) => ScenarioConfig::from_toml(&text),
        Err(e) => Err(ScenarioError::Invalid(format!(
            "scenario '{name_or_path}' is neither bundled nor a readable file: {e}"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_scenarios_parse_and_build() {
        for (name, _) in BUNDLED {
            let cfg = bundled(name).unwrap();
            let sc = Scenario::build(cfg).unwrap_or_else(|e| panic!("{name}: {e}"));
            assert!(sc.age.n_nodes() > 10, "{name}");
            assert!(sc.grid.len() >= 1);
        }
    }

    #[test]
    fn config_roundtrips_through_toml() {
        let cfg = bundled("s2-symmetric-gaussian").unwrap();
        let text = cfg.to_toml();
        let back = ScenarioConfig::from_toml(&text).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn misaligned_dx_rejected() {
        let mut cfg = bundled("s2-mini").unwrap();
        cfg.grid.dx = 0.03;
        assert!(matches!(
            Scenario::build(cfg),
            Err(ScenarioError::Invalid(_))
        ));
    }

    #[test]
    fn age_cut_covers_the_slow_decay() {
        let cfg = bundled("s2-symmetric-gaussian").unwrap();
        let sc = Scenario::build(cfg).unwrap();
        // weight at the cut is below 1e-14 for the slowest fitness
        let y = [0.0, 0.0];
        let w = sc.config.bounds.lambda_upper * sc.coeffs.curly_a(sc.age.x_max(), y)
            - sc.coeffs.death_integral(sc.age.x_max(), y);
        assert!(w < (1e-13f64).ln());
    }
}
