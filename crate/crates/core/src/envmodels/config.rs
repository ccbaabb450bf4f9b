use super::geometry::{Circle, Geometry, Rect, StartDistribution};
use super::{IntegratorModel, Model, ModelError, State, TaxiModel, UnicycleModel};
use crate::experts::{ExpertConfig, MpcConfig, PidConfig};
use crate::gridcore::{Axis, Grid, GridError};
use crate::reach::SolverParams;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::f64::consts::PI;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("reading environment file: {0}")]
    Io(#[from] std::io::Error),
    #[error("parsing environment JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("invalid environment: {0}")]
    Invalid(String),
}

fn default_start_margin() -> f64 {
    0.2
}

/// Environment file contents. Everything an experiment needs to rebuild a
/// case study: dynamics, failure set, start distribution, integration
/// rates, the reachability grid and the expert.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub name: String,
    pub model: Model,
    pub geometry: Geometry,
    pub start: StartDistribution,
    /// Largest injected disturbance bound.
    pub dbar_max: f64,
    /// Integrator substep (s).
    pub dt: f64,
    /// Control period (s); inputs are held for this long.
    pub control_period: f64,
    /// Episode timeout (s).
    pub timeout: f64,
    pub grid: Vec<Axis>,
    pub solver: SolverParams,
    pub expert: ExpertConfig,
    /// Evaluation starts must have `V(x0; 0)` above this.
    #[serde(default = "default_start_margin")]
    pub eval_start_margin: f64,
}

impl EnvConfig {
    pub fn unicycle_default() -> Self {
        let c = |x: f64, y: f64, r: f64| Circle {
            center: [x, y],
            radius: r,
        };
        let levels = (0..=6).map(|i| i as f64 * 0.1).collect();
        EnvConfig {
            name: "unicycle".into(),
            model: Model::Unicycle(UnicycleModel::default()),
            geometry: Geometry::Obstacles {
                workspace: Rect {
                    lo: [-5.0, -5.0],
                    hi: [5.0, 5.0],
                },
                obstacles: vec![c(0.0, 1.5, 1.0), c(-2.0, -1.5, 1.0), c(2.5, -1.0, 0.8)],
                goal: c(3.5, 3.5, 0.5),
            },
            start: StartDistribution::Box {
                region: Rect {
                    lo: [-4.5, -4.5],
                    hi: [-3.0, -3.0],
                },
                heading_spread: PI / 4.0,
            },
            dbar_max: 0.6,
            dt: 0.05,
            control_period: 0.1,
            timeout: 15.0,
            grid: vec![
                Axis::new(-5.0, 5.0, 101),
                Axis::new(-5.0, 5.0, 101),
                Axis::periodic(-PI, PI, 101),
            ],
            solver: SolverParams {
                dbar_levels: levels,
                ..SolverParams::default()
            },
            expert: ExpertConfig::Mpc(MpcConfig::default()),
            eval_start_margin: default_start_margin(),
        }
    }

    pub fn taxi_default() -> Self {
        EnvConfig {
            name: "taxi".into(),
            model: Model::Taxi(TaxiModel::default()),
            geometry: Geometry::Runway {
                half_width: 10.0,
                length: 200.0,
            },
            start: StartDistribution::Runway {
                px: [-6.0, 6.0],
                theta: [-0.3, 0.3],
            },
            dbar_max: 0.3,
            dt: 0.05,
            control_period: 0.1,
            timeout: 60.0,
            grid: vec![
                Axis::new(-12.0, 12.0, 97),
                Axis::new(0.0, 200.0, 3),
                Axis::periodic(-PI, PI, 101),
            ],
            solver: SolverParams {
                dbar_levels: vec![0.0, 0.1, 0.2, 0.3],
                ..SolverParams::default()
            },
            expert: ExpertConfig::Pid(PidConfig::default()),
            eval_start_margin: default_start_margin(),
        }
    }

    /// Scalar integrator with `l(x) = x` on `[0, 4]`.
    pub fn integrator_default() -> Self {
        EnvConfig {
            name: "integrator".into(),
            model: Model::Integrator(IntegratorModel::default()),
            geometry: Geometry::HalfLine { goal: 3.5 },
            start: StartDistribution::Interval { lo: 1.0, hi: 2.0 },
            dbar_max: 0.5,
            dt: 0.05,
            control_period: 0.1,
            timeout: 5.0,
            grid: vec![Axis::new(0.0, 4.0, 201)],
            solver: SolverParams {
                dbar_levels: vec![0.0, 0.25, 0.5],
                ..SolverParams::default()
            },
            expert: ExpertConfig::Constant { u: 1.0 },
            eval_start_margin: default_start_margin(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, EnvError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, EnvError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("env config serializes")
    }

    /// SHA-256 of the canonical JSON form (object keys sorted, compact).
    pub fn hash(&self) -> String {
        let value = serde_json::to_value(self).expect("env config serializes");
        let canonical = serde_json::to_string(&value).expect("value serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn build(self) -> Result<Env, EnvError> {
        Env::new(self)
    }
}

/// Validated environment ready for simulation.
#[derive(Debug, Clone)]
pub struct Env {
    config: EnvConfig,
    model: Model,
    grid: Grid,
    hash: String,
}

impl Env {
    pub fn new(config: EnvConfig) -> Result<Self, EnvError> {
        let mut model = config.model;
        if let Model::Unicycle(m) = &mut model {
            m.dbar_max = config.dbar_max;
        }
        model.validate()?;
        let invalid = |m: &str| Err(EnvError::Invalid(m.to_string()));
        if !(config.dbar_max >= 0.0) {
            return invalid("dbar_max must be non-negative");
        }
        if !matches!(model, Model::Integrator(_)) && config.dbar_max > model.control_bound() {
            return invalid("dbar_max exceeds the control bound");
        }
        if !(config.dt > 0.0 && config.control_period > 0.0 && config.timeout > 0.0) {
            return invalid("dt, control_period and timeout must be positive");
        }
        let substeps = config.control_period / config.dt;
        if (substeps - substeps.round()).abs() > 1e-9 {
            return invalid("control_period must be a whole number of integrator steps");
        }
        config.geometry.validate().map_err(EnvError::Invalid)?;
        config
            .start
            .validate(&config.geometry)
            .map_err(EnvError::Invalid)?;
        let kinds_match = matches!(
            (&model, &config.geometry),
            (Model::Unicycle(_), Geometry::Obstacles { .. })
                | (Model::Taxi(_), Geometry::Runway { .. })
                | (Model::Integrator(_), Geometry::HalfLine { .. })
        );
        if !kinds_match {
            return invalid("model and geometry kinds do not match");
        }
        let grid = Grid::new(config.grid.clone())?;
        if grid.ndim() != model.dim() {
            return invalid("grid dimension differs from the state dimension");
        }
        if let Some(h) = model.heading_axis() {
            let a = grid.axes()[h];
            if !(a.periodic && (a.hi - a.lo - 2.0 * PI).abs() < 1e-9) {
                return invalid("heading axis must be periodic over a full turn");
            }
        }
        config
            .solver
            .validate(model.control_bound(), matches!(model, Model::Integrator(_)))
            .map_err(EnvError::Invalid)?;
        let hash = config.hash();
        Ok(Env {
            config,
            model,
            grid,
            hash,
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn hash(&self) -> &str {
        &self.hash
    }

    pub fn dbar_max(&self) -> f64 {
        self.config.dbar_max
    }

    pub fn target(&self, x: &[f64]) -> f64 {
        self.config.geometry.target(x)
    }

    pub fn reached_goal(&self, x: &[f64]) -> bool {
        self.config.geometry.reached_goal(x)
    }

    pub fn sample_start<R: Rng + ?Sized>(&self, rng: &mut R) -> State {
        self.config.start.sample(&self.config.geometry, rng)
    }

    /// Integrator substeps per control period.
    pub fn substeps(&self) -> usize {
        (self.config.control_period / self.config.dt).round() as usize
    }

    /// Advances one control period with `u` and `d` held, stopping early at
    /// the first substep that enters the failure set. Returns the final
    /// state and whether failure occurred.
    pub fn advance(&self, x: &[f64], u: f64, d: f64) -> Result<(State, bool), ModelError> {
        let mut s = State::from_slice(x);
        for _ in 0..self.substeps() {
            s = self.model.step_rk4(&s, u, d, self.config.dt)?;
            if self.target(&s) <= 0.0 {
                return Ok((s, true));
            }
        }
        Ok((s, false))
    }
}
