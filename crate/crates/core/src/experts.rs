//! Scripted experts: a cross-entropy-method MPC for obstacle navigation and
//! a crosstrack/heading tracker for taxiing.

use crate::envmodels::{Env, Model, State, TaxiModel};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MpcConfig {
    /// Planning steps.
    pub horizon: usize,
    /// Planning step (s).
    pub dt: f64,
    pub w_goal: f64,
    pub w_obs: f64,
    pub w_u: f64,
    /// Distance to the failure set below which penetration is penalized (m).
    pub margin: f64,
    pub population: usize,
    pub elites: usize,
    pub iterations: usize,
    /// Initial sampling std as a fraction of the control bound.
    pub init_std: f64,
}

impl Default for MpcConfig {
    fn default() -> Self {
        Self {
            horizon: 20,
            dt: 0.1,
            w_goal: 1.0,
            w_obs: 100.0,
            w_u: 0.1,
            margin: 0.2,
            population: 64,
            elites: 8,
            iterations: 3,
            init_std: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PidConfig {
    /// Heading setpoint per metre of crosstrack error (rad/m).
    pub k_cte: f64,
    /// Steering per radian of heading error.
    pub k_he: f64,
    /// Bound on the heading setpoint (rad).
    pub heading_cap: f64,
}

impl Default for PidConfig {
    fn default() -> Self {
        Self {
            k_cte: 0.08,
            k_he: 1.2,
            heading_cap: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExpertConfig {
    Mpc(MpcConfig),
    Pid(PidConfig),
    /// Fixed input, for the scalar test environment.
    Constant {
        u: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpertAction {
    pub u: f64,
    /// MPC only: every sampled plan entered the failure set.
    pub flagged: bool,
}

impl ExpertConfig {
    pub fn validate(&self) -> Result<(), String> {
        match self {
            ExpertConfig::Mpc(c) => {
                let ok = c.horizon >= 1
                    && c.dt > 0.0
                    && c.w_goal >= 0.0
                    && c.w_obs >= 0.0
                    && c.w_u >= 0.0
                    && c.margin >= 0.0
                    && c.elites >= 1
                    && c.population > c.elites
                    && c.iterations >= 1
                    && c.init_std > 0.0;
                ok.then_some(())
                    .ok_or_else(|| "invalid MPC configuration".into())
            }
            ExpertConfig::Pid(c) => (c.k_cte > 0.0 && c.k_he > 0.0 && c.heading_cap > 0.0)
                .then_some(())
                .ok_or_else(|| "PID gains must be positive".into()),
            ExpertConfig::Constant { u } => u
                .is_finite()
                .then_some(())
                .ok_or_else(|| "constant input must be finite".into()),
        }
    }

    /// Clean expert action at `x`. Deterministic given the rng state.
    pub fn act<R: Rng + ?Sized>(&self, env: &Env, x: &[f64], rng: &mut R) -> ExpertAction {
        let ub = env.model().control_bound();
        match self {
            ExpertConfig::Mpc(cfg) => mpc_expert(env, x, cfg, rng),
            ExpertConfig::Pid(cfg) => {
                let m = match env.model() {
                    Model::Taxi(m) => *m,
                    _ => TaxiModel {
                        omega_max: ub,
                        ..TaxiModel::default()
                    },
                };
                ExpertAction {
                    u: pid_expert(&m, x, cfg),
                    flagged: false,
                }
            }
            ExpertConfig::Constant { u } => ExpertAction {
                u: u.clamp(-ub, ub),
                flagged: false,
            },
        }
    }
}

fn hinge(margin: f64, l: f64) -> f64 {
    let p = (margin - l).max(0.0);
    p * p
}

/// Stage-wise cost of a planned trajectory. `states` holds the current state
/// followed by one state per control, so `states.len() == controls.len() + 1`;
/// the last state adds a terminal goal and penetration term.
pub fn mpc_cost(env: &Env, states: &[State], controls: &[f64], cfg: &MpcConfig) -> f64 {
    debug_assert_eq!(states.len(), controls.len() + 1);
    let goal = env.config().geometry.goal_position().unwrap_or([0.0, 0.0]);
    let place = |x: &State| {
        let dx = x[0] - goal[0];
        let dy = x[1] - goal[1];
        cfg.w_goal * (dx * dx + dy * dy) + cfg.w_obs * hinge(cfg.margin, env.target(x))
    };
    let stages: f64 = states
        .iter()
        .zip(controls)
        .map(|(x, u)| place(x) + cfg.w_u * u * u)
        .sum();
    stages + states.last().map(place).unwrap_or(0.0)
}

/// Stage cost of one executed control step, used to score rollouts.
pub fn stage_cost(env: &Env, x: &[f64], u: f64, cfg: &MpcConfig) -> f64 {
    let goal = env.config().geometry.goal_position().unwrap_or([0.0, 0.0]);
    let dx = x[0] - goal[0];
    let dy = x[1] - goal[1];
    cfg.w_goal * (dx * dx + dy * dy)
        + cfg.w_obs * hinge(cfg.margin, env.target(x))
        + cfg.w_u * u * u
}

struct Plan {
    cost: f64,
    collides: bool,
}

fn evaluate_plan(
    env: &Env,
    x0: &State,
    controls: &[f64],
    cfg: &MpcConfig,
    buf: &mut Vec<State>,
) -> Plan {
    buf.clear();
    buf.push(*x0);
    let mut collides = false;
    let mut x = *x0;
    // integrate at the simulator's step so grazing contacts are not missed
    let substeps = (cfg.dt / env.config().dt).ceil().max(1.0) as usize;
    let h = cfg.dt / substeps as f64;
    for &u in controls {
        // failure is absorbing: a collided plan stays where it hit
        for _ in 0..substeps {
            if collides {
                break;
            }
            x = env
                .model()
                .step_rk4(&x, u, 0.0, h)
                .expect("finite plan state");
            collides = env.target(&x) <= 0.0;
        }
        buf.push(x);
    }
    Plan {
        cost: mpc_cost(env, buf, controls, cfg),
        collides,
    }
}

/// Cross-entropy MPC. Samples come in antithetic pairs around the current
/// mean, joined each round by the constant plans `-ub`, `0` and `ub`. Plans
/// are ranked collision-free first, then by cost. After the last refinement
/// the first control of the better of the elite mean and the best sample is
/// returned.
pub fn mpc_expert<R: Rng + ?Sized>(
    env: &Env,
    x: &[f64],
    cfg: &MpcConfig,
    rng: &mut R,
) -> ExpertAction {
    let ub = env.model().control_bound();
    let h = cfg.horizon;
    let x0 = State::from_slice(x);
    let mut mean = vec![0.0; h];
    let mut std = vec![cfg.init_std * ub; h];
    let mut buf = Vec::with_capacity(h + 1);
    let mut samples: Vec<Vec<f64>> = vec![vec![0.0; h]; cfg.population];
    samples.extend([-ub, 0.0, ub].map(|u| vec![u; h]));
    let mut scored: Vec<(bool, f64, usize)> = Vec::with_capacity(samples.len());
    let mut all_collide = false;
    let mut best: (bool, f64, usize) = (true, f64::INFINITY, 0);

    for _ in 0..cfg.iterations {
        for pair in 0..cfg.population.div_ceil(2) {
            let eps: Vec<f64> = (0..h)
                .map(|_| rng.sample::<f64, _>(StandardNormal))
                .collect();
            for (sign, slot) in [(1.0, 2 * pair), (-1.0, 2 * pair + 1)] {
                if slot >= cfg.population {
                    break;
                }
                for t in 0..h {
                    samples[slot][t] = (mean[t] + sign * std[t] * eps[t]).clamp(-ub, ub);
                }
            }
        }
        scored.clear();
        all_collide = true;
        for (i, s) in samples.iter().enumerate() {
            let plan = evaluate_plan(env, &x0, s, cfg, &mut buf);
            all_collide &= plan.collides;
            scored.push((plan.collides, plan.cost, i));
        }
        scored.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)).then(a.2.cmp(&b.2)));
        best = scored[0];
        let elites = &scored[..cfg.elites];
        let ne = elites.len() as f64;
        for t in 0..h {
            let m = elites.iter().map(|&(_, _, i)| samples[i][t]).sum::<f64>() / ne;
            let var = elites
                .iter()
                .map(|&(_, _, i)| (samples[i][t] - m).powi(2))
                .sum::<f64>()
                / ne;
            mean[t] = m;
            std[t] = var.sqrt();
        }
    }

    if all_collide {
        return ExpertAction {
            u: samples[best.2][0],
            flagged: true,
        };
    }
    let mean_plan = evaluate_plan(env, &x0, &mean, cfg, &mut buf);
    let u = if !mean_plan.collides && mean_plan.cost <= best.1 {
        mean[0]
    } else {
        samples[best.2][0]
    };
    ExpertAction { u, flagged: false }
}

/// Steers toward a heading setpoint proportional to the crosstrack error.
/// With `p_x' = v sin(theta)`, a negative heading reduces positive `p_x`.
pub fn pid_expert(model: &TaxiModel, x: &[f64], cfg: &PidConfig) -> f64 {
    let theta_des = -(cfg.k_cte * x[0]).clamp(-cfg.heading_cap, cfg.heading_cap);
    (-cfg.k_he * (x[2] - theta_des)).clamp(-model.omega_max, model.omega_max)
}
