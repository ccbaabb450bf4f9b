//! Least-restrictive safety filter: pass the policy action through unless
//! the safety value is at or below a threshold, then apply the
//! safety-maximizing control.

use crate::reach::{ReachError, ValueFunction};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConfig {
    /// Engage when `V(x; dbar) <= threshold`.
    pub threshold: f64,
    /// Slice used for filtering; the value function's largest bound when
    /// unset.
    pub dbar: Option<f64>,
    /// Once engaged, stay engaged until the value exceeds
    /// `threshold + hysteresis`.
    pub hysteresis: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            threshold: 0.05,
            dbar: None,
            hysteresis: 0.0,
        }
    }
}

impl FilterConfig {
    pub fn slice(&self, vf: &ValueFunction) -> f64 {
        self.dbar.unwrap_or_else(|| vf.dbar_max())
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.threshold >= 0.0 && self.hysteresis >= 0.0 {
            Ok(())
        } else {
            Err("filter threshold and hysteresis must be non-negative".into())
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterDecision {
    pub u: f64,
    pub engaged: bool,
    /// The state left the value function's grid and was clamped onto it.
    pub flagged: bool,
}

/// Stateless filter rule.
pub fn filtered_action(
    vf: &ValueFunction,
    x: &[f64],
    u_policy: f64,
    cfg: &FilterConfig,
) -> Result<FilterDecision, ReachError> {
    decide(vf, x, u_policy, cfg, cfg.threshold)
}

fn decide(
    vf: &ValueFunction,
    x: &[f64],
    u_policy: f64,
    cfg: &FilterConfig,
    threshold: f64,
) -> Result<FilterDecision, ReachError> {
    let dbar = cfg.slice(vf);
    let (v, off_grid) = vf.query_value_clamped(x, dbar)?;
    if off_grid || v <= threshold {
        let (u, flagged) = vf.query_safe_control_clamped(x, dbar)?;
        return Ok(FilterDecision {
            u,
            engaged: true,
            flagged: flagged || off_grid,
        });
    }
    Ok(FilterDecision {
        u: u_policy,
        engaged: false,
        flagged: false,
    })
}

/// Filter with hysteresis memory for one trajectory.
#[derive(Debug, Clone)]
pub struct SafetyFilter<'a> {
    vf: &'a ValueFunction,
    cfg: FilterConfig,
    engaged: bool,
}

impl<'a> SafetyFilter<'a> {
    pub fn new(vf: &'a ValueFunction, cfg: FilterConfig) -> Self {
        Self {
            vf,
            cfg,
            engaged: false,
        }
    }

    pub fn reset(&mut self) {
        self.engaged = false;
    }

    pub fn apply(&mut self, x: &[f64], u_policy: f64) -> Result<FilterDecision, ReachError> {
        let threshold = if self.engaged {
            self.cfg.threshold + self.cfg.hysteresis
        } else {
            self.cfg.threshold
        };
        let d = decide(self.vf, x, u_policy, &self.cfg, threshold)?;
        self.engaged = d.engaged;
        Ok(d)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envmodels::{IntegratorModel, Model};
    use crate::gridcore::{Axis, Field, Grid};
    use crate::reach::{SolveReport, SolverParams, VfMetadata};

    /// `V(x) = x - 1` on `[0, 4]` with levels {0, 0.5}.
    fn ramp() -> ValueFunction {
        let grid = Grid::new(vec![Axis::new(0.0, 4.0, 41)]).unwrap();
        let f = Field::from_fn(grid.clone(), |x| x[0] - 1.0).unwrap();
        let meta = VfMetadata {
            model: Model::Integrator(IntegratorModel::default()),
            env_hash: "test".into(),
            params: SolverParams {
                dbar_levels: vec![0.0, 0.5],
                ..SolverParams::default()
            },
            report: SolveReport::default(),
        };
        ValueFunction::from_parts(grid, vec![0.0, 0.5], vec![f.clone(), f], meta).unwrap()
    }

    #[test]
    fn passes_through_when_safe() {
        let vf = ramp();
        let d = filtered_action(&vf, &[3.0], -0.7, &FilterConfig::default()).unwrap();
        assert_eq!(
            d,
            FilterDecision {
                u: -0.7,
                engaged: false,
                flagged: false
            }
        );
    }

    #[test]
    fn engages_near_the_boundary() {
        let vf = ramp();
        let d = filtered_action(&vf, &[1.01], -0.7, &FilterConfig::default()).unwrap();
        assert!(d.engaged);
        assert_eq!(d.u, 1.0);
    }

    #[test]
    fn infinite_threshold_always_engages() {
        let vf = ramp();
        let cfg = FilterConfig {
            threshold: f64::INFINITY,
            ..FilterConfig::default()
        };
        for x in [0.5, 2.0, 3.9] {
            assert!(filtered_action(&vf, &[x], 0.0, &cfg).unwrap().engaged);
        }
    }

    #[test]
    fn off_grid_states_are_clamped_and_flagged() {
        let vf = ramp();
        let d = filtered_action(&vf, &[5.0], 0.3, &FilterConfig::default()).unwrap();
        assert!(d.engaged && d.flagged);
    }

    #[test]
    fn hysteresis_holds_engagement() {
        let vf = ramp();
        let cfg = FilterConfig {
            hysteresis: 0.2,
            ..FilterConfig::default()
        };
        let mut f = SafetyFilter::new(&vf, cfg);
        assert!(f.apply(&[1.0], 0.0).unwrap().engaged);
        assert!(f.apply(&[1.2], 0.0).unwrap().engaged);
        assert!(!f.apply(&[1.3], 0.0).unwrap().engaged);
        assert!(!f.apply(&[1.2], 0.0).unwrap().engaged);
    }
}
