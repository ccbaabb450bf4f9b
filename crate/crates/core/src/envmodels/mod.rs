//! Dynamics models, closed-form Hamiltonians and optimal inputs, target
//! functions and environment configuration for the case studies.
//!
//! Every model here has a single scalar input entering one state axis, so
//! the Hamiltonian splits into a control-free drift term and a term
//! proportional to the magnitude of the costate on that axis:
//!
//! ```text
//! H(x, p; dbar) = <p, drift(x)> + gain(dbar) * |p[input_axis]|
//! ```

mod config;
mod geometry;
mod state;

pub use config::{Env, EnvConfig, EnvError};
pub use geometry::{Circle, Geometry, Rect, StartDistribution};
pub use state::{State, MAX_DIM};

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("non-finite input to dynamics")]
    NonFinite,
    #[error("disturbance bound {dbar} outside [0, {max}]")]
    DisturbanceBound { dbar: f64, max: f64 },
    #[error("state has dimension {got}, model expects {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("invalid model parameter: {0}")]
    Parameter(&'static str),
}

/// Unicycle with constant forward speed and bounded turn rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnicycleModel {
    pub v: f64,
    pub omega_max: f64,
    /// Largest disturbance the environment injects; the applied turn rate
    /// saturates at `omega_max + dbar_max`. Filled in from the environment.
    #[serde(default, skip_serializing_if = "is_zero")]
    pub dbar_max: f64,
}

fn is_zero(x: &f64) -> bool {
    *x == 0.0
}

impl Default for UnicycleModel {
    fn default() -> Self {
        Self {
            v: 1.0,
            omega_max: 1.0,
            dbar_max: 0.0,
        }
    }
}

/// Taxiing aircraft in runway coordinates: crosstrack error, downtrack
/// position, heading error. Steering is a wheel angle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaxiModel {
    pub v: f64,
    /// Wheelbase.
    pub h: f64,
    pub omega_max: f64,
}

impl Default for TaxiModel {
    fn default() -> Self {
        Self {
            v: 5.0,
            h: 5.0,
            omega_max: 1.0,
        }
    }
}

/// Scalar integrator `x' = u + d`. Used to check the solver against closed
/// forms; the disturbance may exceed the control bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegratorModel {
    pub u_max: f64,
}

impl Default for IntegratorModel {
    fn default() -> Self {
        Self { u_max: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Model {
    Unicycle(UnicycleModel),
    Taxi(TaxiModel),
    Integrator(IntegratorModel),
}

/// `sign` with `sign(0) = 0`.
pub fn sign0(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Wraps an angle into `[-pi, pi)`.
pub fn wrap_angle(theta: f64) -> f64 {
    let mut t = (theta + PI).rem_euclid(2.0 * PI) - PI;
    if t >= PI {
        t = -PI;
    }
    t
}

impl Model {
    pub fn name(&self) -> &'static str {
        match self {
            Model::Unicycle(_) => "unicycle",
            Model::Taxi(_) => "taxi",
            Model::Integrator(_) => "integrator",
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Model::Integrator(_) => 1,
            _ => 3,
        }
    }

    /// Control bound (`omega_max`, or `u_max` for the integrator).
    pub fn control_bound(&self) -> f64 {
        match self {
            Model::Unicycle(m) => m.omega_max,
            Model::Taxi(m) => m.omega_max,
            Model::Integrator(m) => m.u_max,
        }
    }

    /// State axis the scalar input acts on.
    pub fn input_axis(&self) -> usize {
        match self {
            Model::Integrator(_) => 0,
            _ => 2,
        }
    }

    /// Axis holding an angle, wrapped to `[-pi, pi)` after every step.
    pub fn heading_axis(&self) -> Option<usize> {
        match self {
            Model::Integrator(_) => None,
            _ => Some(2),
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let ok = match self {
            Model::Unicycle(m) => m.v > 0.0 && m.omega_max > 0.0 && m.dbar_max >= 0.0,
            Model::Taxi(m) => m.v > 0.0 && m.h > 0.0 && m.omega_max > 0.0 && m.omega_max < PI / 2.0,
            Model::Integrator(m) => m.u_max > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(ModelError::Parameter(
                "speeds, bounds and wheelbase must be positive",
            ))
        }
    }

    fn check_dbar(&self, dbar: f64) -> Result<(), ModelError> {
        let max = match self {
            Model::Integrator(_) => f64::INFINITY,
            _ => self.control_bound(),
        };
        if !(0.0..=max).contains(&dbar) {
            return Err(ModelError::DisturbanceBound { dbar, max });
        }
        Ok(())
    }

    fn check_state(&self, x: &[f64]) -> Result<(), ModelError> {
        if x.len() != self.dim() {
            return Err(ModelError::Dimension {
                expected: self.dim(),
                got: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::NonFinite);
        }
        Ok(())
    }

    /// Input actually reaching the plant after saturation.
    pub fn applied_input(&self, u: f64, d: f64) -> f64 {
        let raw = u + d;
        match self {
            Model::Unicycle(m) => {
                let lim = m.omega_max + m.dbar_max;
                raw.clamp(-lim, lim)
            }
            Model::Taxi(m) => raw.clamp(-m.omega_max, m.omega_max),
            Model::Integrator(_) => raw,
        }
    }

    /// Control-independent part of the vector field.
    pub fn drift(&self, x: &[f64]) -> State {
        match self {
            Model::Unicycle(m) => {
                let (s, c) = x[2].sin_cos();
                State::from_slice(&[m.v * c, m.v * s, 0.0])
            }
            Model::Taxi(m) => {
                let (s, c) = x[2].sin_cos();
                State::from_slice(&[m.v * s, m.v * c, 0.0])
            }
            Model::Integrator(_) => State::from_slice(&[0.0]),
        }
    }

    /// Disturbance-injected dynamics `f(x, u + d)`.
    pub fn flow(&self, x: &[f64], u: f64, d: f64) -> Result<State, ModelError> {
        self.check_state(x)?;
        if !(u.is_finite() && d.is_finite()) {
            return Err(ModelError::NonFinite);
        }
        let w = self.applied_input(u, d);
        let mut dx = self.drift(x);
        let k = self.input_axis();
        dx[k] = match self {
            Model::Taxi(m) => (m.v / m.h) * w.tan(),
            _ => w,
        };
        Ok(dx)
    }

    /// One classical RK4 step with `u` and `d` held over `dt`.
    pub fn step_rk4(&self, x: &[f64], u: f64, d: f64, dt: f64) -> Result<State, ModelError> {
        let x0 = State::from_slice(x);
        if dt == 0.0 {
            self.check_state(x)?;
            return Ok(x0);
        }
        let k1 = self.flow(&x0, u, d)?;
        let k2 = self.flow(&x0.axpy(0.5 * dt, &k1), u, d)?;
        let k3 = self.flow(&x0.axpy(0.5 * dt, &k2), u, d)?;
        let k4 = self.flow(&x0.axpy(dt, &k3), u, d)?;
        let mut out = x0;
        for i in 0..x0.len() {
            out[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        if let Some(h) = self.heading_axis() {
            out[h] = wrap_angle(out[h]);
        }
        Ok(out)
    }

    /// Coefficient of `|p[input_axis]|` in the Hamiltonian: the net input
    /// authority left to the controller against a disturbance of size `dbar`.
    pub fn input_gain(&self, dbar: f64) -> Result<f64, ModelError> {
        self.check_dbar(dbar)?;
        Ok(match self {
            Model::Unicycle(m) => m.omega_max - dbar,
            Model::Taxi(m) => (m.v / m.h) * (m.omega_max - dbar).tan(),
            Model::Integrator(m) => m.u_max - dbar,
        })
    }

    /// `max_u min_d <p, f(x, u + d)>` in closed form.
    pub fn hamiltonian(&self, x: &[f64], p: &[f64], dbar: f64) -> Result<f64, ModelError> {
        let gain = self.input_gain(dbar)?;
        let drift = self.drift(x);
        let lin: f64 = drift.iter().zip(p).map(|(a, b)| a * b).sum();
        Ok(lin + gain * p[self.input_axis()].abs())
    }

    /// Lax-Friedrichs dissipation coefficients `max |dH/dp_i|` over the state
    /// space.
    pub fn dissipation_bounds(&self, dbar: f64) -> Result<Vec<f64>, ModelError> {
        let gain = self.input_gain(dbar)?.abs();
        Ok(match self {
            Model::Unicycle(m) => vec![m.v, m.v, gain],
            Model::Taxi(m) => vec![m.v, m.v, gain],
            Model::Integrator(_) => vec![gain],
        })
    }

    /// Maximizing control `u* = u_max * sign(p_c)`.
    pub fn optimal_control(&self, _x: &[f64], p: &[f64]) -> f64 {
        self.control_bound() * sign0(p[self.input_axis()])
    }

    /// Minimizing disturbance `d* = -dbar * sign(p_c)`.
    pub fn optimal_disturbance(&self, _x: &[f64], p: &[f64], dbar: f64) -> f64 {
        if dbar == 0.0 {
            return 0.0;
        }
        -dbar * sign0(p[self.input_axis()])
    }
}
