use std::path::PathBuf;
use std::sync::Arc;

use fourier_closure::collision::{scaling_transfer, BracketVariant, CollisionConfig, KineticCollision};
use fourier_closure::langevin::ChainConfig;
use fourier_closure::lattice::{build_grid, Dispersion, Regularization, SpacingRule, DEFAULT_EPSILON_FACTOR};
use fourier_closure::linear_ops::DEFAULT_CONDITION_LIMIT;
use fourier_closure::transport::{Boundary, HydroConfig, KineticConfig};
use serde::{Deserialize, Serialize};

use crate::CliError;

/// One flat JSON document per run. Missing keys take the defaults below,
/// unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dim: usize,
    pub points_per_axis: usize,
    pub mass_sq: f64,

    /// Fixed width; otherwise `epsilon_factor` times the level spacing.
    pub epsilon: Option<f64>,
    pub epsilon_factor: f64,
    pub spacing_rule: SpacingRule,
    pub bracket: BracketVariant,
    pub conservative: bool,
    pub halvings: usize,
    pub random_fields: usize,
    pub condition_limit: f64,
    pub spectrum: bool,

    pub temperature: f64,
    pub chem: f64,
    /// Grid for the `diffusion` table.
    pub temperatures: Vec<f64>,
    pub chems: Vec<f64>,

    /// Kinetic coupling `R`; `null` means `length · λ²`.
    pub coupling: Option<f64>,
    pub lambda: f64,
    pub length: usize,

    pub t_left: f64,
    pub t_right: f64,
    pub a_left: f64,
    pub a_right: f64,
    pub cells: usize,
    pub tolerance: Option<f64>,
    pub current_tolerance: f64,
    pub max_iterations: Option<usize>,
    pub damping_floor: f64,
    pub node_spacing: f64,

    pub chain_dim: usize,
    pub transverse: usize,
    pub gamma: f64,
    pub dt: Option<f64>,
    pub steps: u64,
    pub burn_in: Option<u64>,
    pub sample_every: u64,
    pub batches: usize,
    pub replicas: usize,
    pub seed: u64,

    /// CSV files joined by `compare`.
    pub left: Option<PathBuf>,
    pub right: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dim: 3,
            points_per_axis: 8,
            mass_sq: 1.0,
            epsilon: None,
            epsilon_factor: DEFAULT_EPSILON_FACTOR,
            spacing_rule: SpacingRule::AllValues,
            bracket: BracketVariant::Corrected,
            conservative: true,
            halvings: 3,
            random_fields: 10,
            condition_limit: DEFAULT_CONDITION_LIMIT,
            spectrum: true,
            temperature: 1.0,
            chem: 0.0,
            temperatures: vec![1.0],
            chems: vec![0.0],
            coupling: Some(1.0),
            lambda: 0.0,
            length: 16,
            t_left: 1.0,
            t_right: 1.25,
            a_left: 0.0,
            a_right: 0.0,
            cells: 32,
            tolerance: None,
            current_tolerance: 1e-6,
            max_iterations: None,
            damping_floor: 1.0 / 1024.0,
            node_spacing: 0.05,
            chain_dim: 1,
            transverse: 1,
            gamma: 1.0,
            dt: None,
            steps: 2_000_000,
            burn_in: None,
            sample_every: 10,
            batches: 64,
            replicas: 1,
            seed: 0,
            left: None,
            right: None,
        }
    }
}

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::config(msg)
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| invalid(format!("config: {e}")))
    }

    pub fn regularization(&self, disp: &Dispersion) -> Result<Regularization, CliError> {
        Ok(match self.epsilon {
            Some(e) => Regularization::new(e)?,
            None => Regularization::from_spacing_rule(disp, self.epsilon_factor, self.spacing_rule)?,
        })
    }

    pub fn collision(&self) -> Result<Arc<KineticCollision>, CliError> {
        let grid = Arc::new(build_grid(self.dim, self.points_per_axis, None)?);
        let disp = Arc::new(Dispersion::new(&grid, self.mass_sq)?);
        let reg = self.regularization(&disp)?;
        let mut cfg = CollisionConfig::new(reg);
        cfg.bracket = self.bracket;
        cfg.conservative = self.conservative;
        Ok(Arc::new(KineticCollision::new(grid, disp, cfg)?))
    }

    pub fn coupling(&self) -> Result<f64, CliError> {
        let r = self.coupling.unwrap_or_else(|| scaling_transfer(self.lambda, self.length));
        if !(r > 0.0 && r.is_finite()) {
            return Err(invalid("coupling R must be positive; set `coupling` or a nonzero `lambda`"));
        }
        Ok(r)
    }

    pub fn boundary(&self) -> Boundary {
        Boundary { t_left: self.t_left, t_right: self.t_right, a_left: self.a_left, a_right: self.a_right }
    }

    pub fn hydro(&self) -> Result<HydroConfig, CliError> {
        let d = HydroConfig::default();
        Ok(HydroConfig {
            cells: self.cells,
            coupling: self.coupling()?,
            tolerance: self.tolerance.unwrap_or(d.tolerance),
            max_iterations: self.max_iterations.unwrap_or(d.max_iterations),
            damping_floor: self.damping_floor,
            max_relative_gap: d.max_relative_gap,
        })
    }

    pub fn kinetic(&self) -> Result<KineticConfig, CliError> {
        let d = KineticConfig::default();
        Ok(KineticConfig {
            cells: self.cells,
            coupling: self.coupling()?,
            tolerance: self.tolerance.unwrap_or(d.tolerance),
            current_tolerance: self.current_tolerance,
            max_iterations: self.max_iterations.unwrap_or(d.max_iterations),
        })
    }

    pub fn chain(&self) -> Result<ChainConfig, CliError> {
        let mut c = ChainConfig::chain(self.length, self.lambda, self.t_left, self.t_right);
        c.dim = self.chain_dim;
        c.transverse = self.transverse;
        c.mass_sq = self.mass_sq;
        c.gamma = self.gamma;
        c.dt = self.dt.unwrap_or_else(|| c.default_dt());
        c.steps = self.steps;
        c.burn_in = self.burn_in.unwrap_or(self.steps / 10);
        c.sample_every = self.sample_every;
        c.batches = self.batches;
        c.seed = self.seed;
        c.validate()?;
        if self.replicas == 0 {
            return Err(invalid("replicas must be at least 1"));
        }
        Ok(c)
    }

    /// Checks that do not need any computation.
    pub fn validate(&self) -> Result<(), CliError> {
        if self.halvings == 0 {
            return Err(invalid("halvings must be at least 1"));
        }
        if !(self.epsilon_factor > 0.0) {
            return Err(invalid("epsilon_factor must be positive"));
        }
        if self.temperatures.is_empty() || self.chems.is_empty() {
            return Err(invalid("temperatures and chems must be nonempty"));
        }
        if !(self.node_spacing > 0.0) {
            return Err(invalid("node_spacing must be positive"));
        }
        if !(self.damping_floor > 0.0 && self.damping_floor < 1.0) {
            return Err(invalid("damping_floor must lie in (0, 1)"));
        }
        Ok(())
    }
}
