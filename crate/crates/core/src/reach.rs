//! Grid-based solution of the Hamilton-Jacobi-Isaacs variational inequality
//! for avoid problems, conditioned on the disturbance bound.
//!
//! Each disturbance level is an independent slice: the bound behaves like an
//! extra state with zero dynamics, which contributes nothing to the
//! Hamiltonian, so the slices decouple. All slices are advanced in lockstep
//! with a common time step and dissipation, which makes the scheme monotone
//! across slices as well as within one.
//!
//! Discretization: first-order one-sided differences, global Lax-Friedrichs
//! numerical Hamiltonian, two-stage TVD Runge-Kutta in backward time. After
//! each stage the field is clamped from above by the target function. The
//! backward-time rate is `min(0, H_num)`, so values never increase and the
//! converged field is the infinite-horizon value.

use crate::envmodels::{Env, Model, ModelError};
use crate::gridcore::{Field, Grid, GridError};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ReachError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(
        "disturbance bound {dbar} outside the solved range [{lo}, {hi}]; clamped value {clamped}"
    )]
    DbarOutOfRange {
        dbar: f64,
        lo: f64,
        hi: f64,
        clamped: f64,
    },
    #[error("value function does not match the environment: {0}")]
    Mismatch(String),
    #[error("invalid solver parameters: {0}")]
    Params(String),
    #[error("value function violates {what} at node {node} (by {excess})")]
    Invariant {
        what: &'static str,
        node: usize,
        excess: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverParams {
    pub cfl: f64,
    /// Stop when the max-norm change per unit backward time drops below this.
    pub convergence_tol: f64,
    /// Backward-time horizon cap (s).
    pub max_horizon: f64,
    pub dbar_levels: Vec<f64>,
}

impl Default for SolverParams {
    fn default() -> Self {
        Self {
            cfl: 0.5,
            convergence_tol: 1e-4,
            max_horizon: 10.0,
            dbar_levels: (0..=6).map(|i| i as f64 * 0.1).collect(),
        }
    }
}

impl SolverParams {
    pub(crate) fn validate(&self, control_bound: f64, allow_excess: bool) -> Result<(), String> {
        if !(self.cfl > 0.0 && self.cfl <= 1.0) {
            return Err("cfl must lie in (0, 1]".into());
        }
        if !(self.convergence_tol > 0.0 && self.max_horizon > 0.0) {
            return Err("tolerance and horizon must be positive".into());
        }
        if self.dbar_levels.is_empty() {
            return Err("need at least one disturbance level".into());
        }
        if self.dbar_levels.windows(2).any(|w| w[0] >= w[1]) {
            return Err("disturbance levels must be strictly increasing".into());
        }
        let hi = if allow_excess {
            f64::INFINITY
        } else {
            control_bound
        };
        if self.dbar_levels.iter().any(|d| !(0.0..=hi).contains(d)) {
            return Err("disturbance levels outside [0, control bound]".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceReport {
    pub dbar: f64,
    /// Largest amount by which this slice exceeded the next-weaker slice
    /// before the monotonicity projection (rounding level when healthy).
    pub monotonicity_repair: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SolveReport {
    pub converged: bool,
    /// Backward time reached (s).
    pub horizon: f64,
    pub steps: usize,
    pub dt: f64,
    /// Final max-norm change per unit time.
    pub final_rate: f64,
    pub slices: Vec<SliceReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VfMetadata {
    pub model: Model,
    pub env_hash: String,
    pub params: SolverParams,
    pub report: SolveReport,
}

/// Converged `V(x; dbar)` sampled on a state grid times a list of
/// disturbance levels.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueFunction {
    grid: Grid,
    dbar_levels: Vec<f64>,
    slices: Vec<Field>,
    meta: VfMetadata,
}

/// Solves every disturbance slice for the environment's grid, model and
/// solver parameters.
pub fn solve_env(env: &Env) -> Result<ValueFunction, ReachError> {
    solve_hji(env.grid(), env.model(), env, &env.config().solver)
}

/// Solves the HJI-VI to convergence (or the horizon cap) for each level in
/// `params.dbar_levels`. An unconverged result is returned with
/// `report.converged == false`.
pub fn solve_hji(
    grid: &Grid,
    model: &Model,
    env: &Env,
    params: &SolverParams,
) -> Result<ValueFunction, ReachError> {
    params
        .validate(model.control_bound(), matches!(model, Model::Integrator(_)))
        .map_err(ReachError::Params)?;
    let target: Vec<f64> = (0..grid.len())
        .map(|i| env.target(&grid.node_coords(i)))
        .collect();
    let mut solver = LevelSetSolver::new(grid, model, target, &params.dbar_levels, params.cfl)?;
    let report = solver.run(StopRule::Converge {
        tol: params.convergence_tol,
        max_horizon: params.max_horizon,
    });
    let (slices, slice_reports) = solver.finish()?;
    let meta = VfMetadata {
        model: *model,
        env_hash: env.hash().to_string(),
        params: params.clone(),
        report: SolveReport {
            slices: slice_reports,
            ..report
        },
    };
    ValueFunction::from_parts(grid.clone(), params.dbar_levels.clone(), slices, meta)
}

/// Evolves a single slice for exactly `horizon` seconds of backward time
/// from `V = l`, without the convergence test. Used for finite-horizon
/// checks.
pub fn solve_finite_horizon(
    grid: &Grid,
    model: &Model,
    target: impl Fn(&[f64]) -> f64,
    dbar: f64,
    horizon: f64,
    cfl: f64,
) -> Result<(Field, SolveReport), ReachError> {
    let l: Vec<f64> = (0..grid.len())
        .map(|i| target(&grid.node_coords(i)))
        .collect();
    let mut solver = LevelSetSolver::new(grid, model, l, &[dbar], cfl)?;
    let report = solver.run(StopRule::Horizon(horizon));
    let (mut slices, reports) = solver.finish()?;
    Ok((
        slices.remove(0),
        SolveReport {
            slices: reports,
            ..report
        },
    ))
}

enum StopRule {
    Converge { tol: f64, max_horizon: f64 },
    Horizon(f64),
}

struct LevelSetSolver<'a> {
    grid: &'a Grid,
    model: &'a Model,
    target: Vec<f64>,
    levels: Vec<f64>,
    gains: Vec<f64>,
    /// Per-axis drift; `None` for axes with no drift.
    drift: Vec<Option<DriftColumn>>,
    alpha: Vec<f64>,
    dt: f64,
    values: Vec<Vec<f64>>,
    stage1: Vec<Vec<f64>>,
    next: Vec<Vec<f64>>,
}

impl<'a> LevelSetSolver<'a> {
    fn new(
        grid: &'a Grid,
        model: &'a Model,
        target: Vec<f64>,
        levels: &[f64],
        cfl: f64,
    ) -> Result<Self, ReachError> {
        if grid.ndim() != model.dim() {
            return Err(ReachError::Mismatch(format!(
                "grid has {} axes, model state has {}",
                grid.ndim(),
                model.dim()
            )));
        }
        if target.iter().any(|v| !v.is_finite()) {
            return Err(ReachError::Params(
                "target function is not finite on the grid".into(),
            ));
        }
        let gains = levels
            .iter()
            .map(|&d| model.input_gain(d))
            .collect::<Result<Vec<_>, _>>()?;
        // Common dissipation: the componentwise max over all levels keeps
        // every slice monotone under one time step.
        let mut alpha = vec![0.0f64; grid.ndim()];
        for &d in levels {
            for (a, b) in alpha.iter_mut().zip(model.dissipation_bounds(d)?) {
                *a = a.max(b);
            }
        }
        let denom: f64 = alpha.iter().zip(grid.spacing()).map(|(a, h)| a / h).sum();
        let dt = if denom > 0.0 {
            cfl / denom
        } else {
            f64::INFINITY
        };

        let mut drift: Vec<Option<DriftColumn>> = vec![None; grid.ndim()];
        let mut columns = vec![Vec::with_capacity(grid.len()); grid.ndim()];
        for i in 0..grid.len() {
            let f = model.drift(&grid.node_coords(i));
            for (k, col) in columns.iter_mut().enumerate() {
                col.push(f[k]);
            }
        }
        let line = grid.axes()[grid.ndim() - 1].n;
        for (k, col) in columns.into_iter().enumerate() {
            if col.iter().any(|&v| v != 0.0) {
                drift[k] = Some(DriftColumn::compact(col, line));
            }
        }
        let values = vec![target.clone(); levels.len()];
        let stage1 = vec![vec![0.0; grid.len()]; levels.len()];
        let next = stage1.clone();
        Ok(Self {
            grid,
            model,
            target,
            levels: levels.to_vec(),
            gains,
            drift,
            alpha,
            dt,
            values,
            stage1,
            next,
        })
    }

    fn run(&mut self, stop: StopRule) -> SolveReport {
        let mut t = 0.0;
        let mut steps = 0;
        let mut rate = f64::INFINITY;
        let (horizon, tol) = match stop {
            StopRule::Converge { tol, max_horizon } => (max_horizon, Some(tol)),
            StopRule::Horizon(h) => (h, None),
        };
        let mut converged = false;
        while t < horizon - 1e-12 {
            let dt = self.dt.min(horizon - t);
            if !dt.is_finite() {
                // No dynamics and no dissipation: the field is stationary.
                converged = true;
                rate = 0.0;
                break;
            }
            let change = self.step(dt);
            t += dt;
            steps += 1;
            rate = change / dt;
            if let Some(tol) = tol {
                if rate < tol {
                    converged = true;
                    break;
                }
            }
        }
        if tol.is_none() {
            converged = true;
        }
        SolveReport {
            converged,
            horizon: t,
            steps,
            dt: self.dt,
            final_rate: rate,
            slices: vec![],
        }
    }

    /// One TVD-RK2 step on every slice; returns the max-norm change.
    fn step(&mut self, dt: f64) -> f64 {
        let kernel = Kernel {
            grid: self.grid,
            drift: &self.drift,
            input_axis: self.model.input_axis(),
            alpha: &self.alpha,
            target: &self.target,
        };
        let gains = &self.gains;
        let change = self
            .values
            .par_iter()
            .zip(self.stage1.par_iter_mut())
            .zip(self.next.par_iter_mut())
            .zip(gains.par_iter())
            .map(|(((v, s), out), &g)| {
                kernel.stage(g, dt, v, None, s);
                kernel.stage(g, dt, s, Some(v), out)
            })
            .reduce(|| 0.0, f64::max);
        std::mem::swap(&mut self.values, &mut self.next);
        change
    }

    fn finish(mut self) -> Result<(Vec<Field>, Vec<SliceReport>), ReachError> {
        let mut reports = Vec::with_capacity(self.levels.len());
        for j in 0..self.values.len() {
            let mut repair: f64 = 0.0;
            if j > 0 {
                let (weaker, rest) = self.values.split_at_mut(j);
                let weaker = &weaker[j - 1];
                for (v, w) in rest[0].iter_mut().zip(weaker) {
                    if *v > *w {
                        repair = repair.max(*v - *w);
                        *v = *w;
                    }
                }
            }
            reports.push(SliceReport {
                dbar: self.levels[j],
                monotonicity_repair: repair,
            });
        }
        let fields = self
            .values
            .into_iter()
            .map(|v| Field::new(self.grid.clone(), v))
            .collect::<Result<Vec<_>, _>>()?;
        Ok((fields, reports))
    }
}

/// Drift of one state component at every node. When it only varies along
/// the last axis a single grid line is stored.
#[derive(Clone)]
struct DriftColumn {
    values: Vec<f64>,
    per_line: bool,
}

impl DriftColumn {
    fn compact(values: Vec<f64>, line: usize) -> Self {
        let repeats = values.chunks(line).all(|c| c == &values[..line]);
        if repeats {
            Self {
                values: values[..line].to_vec(),
                per_line: true,
            }
        } else {
            Self {
                values,
                per_line: false,
            }
        }
    }

    fn line(&self, base: usize, n: usize) -> &[f64] {
        if self.per_line {
            &self.values
        } else {
            &self.values[base..base + n]
        }
    }
}

struct Kernel<'a> {
    grid: &'a Grid,
    drift: &'a [Option<DriftColumn>],
    input_axis: usize,
    alpha: &'a [f64],
    target: &'a [f64],
}

/// Where a node sits along one axis. At a non-periodic end the missing
/// neighbour is a linearly extrapolated ghost node, so both one-sided
/// differences coincide.
#[derive(Clone, Copy, PartialEq)]
enum Side {
    Inner,
    NoLeft,
    NoRight,
}

#[derive(Clone, Copy)]
struct Stencil {
    left: isize,
    right: isize,
    side: Side,
}

fn stencil(n: usize, stride: usize, periodic: bool, i: usize) -> Stencil {
    let s = stride as isize;
    let wrap = ((n - 1) * stride) as isize;
    match (i == 0, i + 1 == n) {
        (false, false) => Stencil {
            left: -s,
            right: s,
            side: Side::Inner,
        },
        (true, _) if periodic => Stencil {
            left: wrap,
            right: s,
            side: Side::Inner,
        },
        (_, true) if periodic => Stencil {
            left: -s,
            right: -wrap,
            side: Side::Inner,
        },
        (true, _) => Stencil {
            left: 0,
            right: s,
            side: Side::NoLeft,
        },
        (_, true) => Stencil {
            left: -s,
            right: 0,
            side: Side::NoRight,
        },
    }
}

impl Kernel<'_> {
    /// Euler stage `out = min(l, V + dt * min(0, H_num(V)))`, optionally
    /// averaged with `prev`: `out = min(l, (prev + V + dt * rate) / 2)`.
    /// Returns the max-norm distance between `out` and `prev` (zero without
    /// `prev`).
    fn stage(&self, gain: f64, dt: f64, src: &[f64], prev: Option<&[f64]>, out: &mut [f64]) -> f64 {
        match self.grid.ndim() {
            1 => self.stage_d::<1>(gain, dt, src, prev, out),
            2 => self.stage_d::<2>(gain, dt, src, prev, out),
            3 => self.stage_d::<3>(gain, dt, src, prev, out),
            d => unreachable!("unsupported dimension {d}"),
        }
    }

    fn stage_d<const D: usize>(
        &self,
        gain: f64,
        dt: f64,
        src: &[f64],
        prev: Option<&[f64]>,
        out: &mut [f64],
    ) -> f64 {
        let axes = self.grid.axes();
        let strides = self.grid.strides();
        let last = axes[D - 1];
        let n = last.n;
        let spacing = self.grid.spacing();
        let c = self.input_axis;
        let target = self.target;
        let lines_per_chunk = (4096 / n).max(1);

        out.par_chunks_mut(lines_per_chunk * n)
            .enumerate()
            .map_init(
                || vec![0.0; n],
                |acc, (chunk_id, chunk)| {
                    let mut change = 0.0f64;
                    let first_line = chunk_id * lines_per_chunk;
                    for (li, line) in chunk.chunks_mut(n).enumerate() {
                        let base = (first_line + li) * n;
                        let v = &src[base..base + n];
                        acc.fill(0.0);
                        for k in 0..D - 1 {
                            let i = (base / strides[k]) % axes[k].n;
                            let st = stencil(axes[k].n, strides[k], axes[k].periodic, i);
                            let at = |off: isize| {
                                let b = (base as isize + off) as usize;
                                &src[b..b + n]
                            };
                            let axis = AxisTerms {
                                inv_h: 1.0 / spacing[k],
                                half_alpha: 0.5 * self.alpha[k],
                                drift: self.drift[k].as_ref().map(|d| d.line(base, n)),
                                gain: if k == c { gain } else { 0.0 },
                            };
                            match st.side {
                                Side::Inner => axis.accumulate(acc, v, at(st.left), at(st.right)),
                                Side::NoLeft => {
                                    axis.accumulate_one_sided(acc, v, at(st.right), 1.0)
                                }
                                Side::NoRight => {
                                    axis.accumulate_one_sided(acc, v, at(st.left), -1.0)
                                }
                            }
                        }
                        let k = D - 1;
                        let axis = AxisTerms {
                            inv_h: 1.0 / spacing[k],
                            half_alpha: 0.5 * self.alpha[k],
                            drift: self.drift[k].as_ref().map(|d| d.line(base, n)),
                            gain: if k == c { gain } else { 0.0 },
                        };
                        axis.accumulate_line(acc, v, last.periodic);
                        let t = &target[base..base + n];
                        match prev {
                            Some(p) => {
                                let p = &p[base..base + n];
                                for j in 0..n {
                                    let euler = v[j] + dt * acc[j].min(0.0);
                                    line[j] = (0.5 * (p[j] + euler)).min(t[j]);
                                    change = change.max((line[j] - p[j]).abs());
                                }
                            }
                            None => {
                                for j in 0..n {
                                    line[j] = (v[j] + dt * acc[j].min(0.0)).min(t[j]);
                                }
                            }
                        }
                    }
                    change
                },
            )
            .reduce(|| 0.0, f64::max)
    }
}

/// Contribution of one axis to the numerical Hamiltonian along a grid line:
/// `drift * p_avg + gain * |p_avg| + half_alpha * (p+ - p-)`.
struct AxisTerms<'a> {
    inv_h: f64,
    half_alpha: f64,
    drift: Option<&'a [f64]>,
    gain: f64,
}

impl AxisTerms<'_> {
    #[inline(always)]
    fn term(&self, j: usize, avg: f64, jump: f64) -> f64 {
        let f = self.drift.map_or(0.0, |d| d[j]);
        f * avg + self.gain * avg.abs() + self.half_alpha * jump
    }

    /// Neighbour lines on both sides.
    fn accumulate(&self, acc: &mut [f64], v: &[f64], left: &[f64], right: &[f64]) {
        let (ih, ha, g) = (self.inv_h, self.half_alpha, self.gain);
        let half = 0.5 * ih;
        match self.drift {
            Some(d) => {
                for j in 0..acc.len() {
                    let avg = (right[j] - left[j]) * half;
                    let jump = (right[j] - 2.0 * v[j] + left[j]) * ih;
                    acc[j] += d[j] * avg + g * avg.abs() + ha * jump;
                }
            }
            None => {
                for j in 0..acc.len() {
                    let avg = (right[j] - left[j]) * half;
                    let jump = (right[j] - 2.0 * v[j] + left[j]) * ih;
                    acc[j] += g * avg.abs() + ha * jump;
                }
            }
        }
    }

    /// Boundary line: the ghost node mirrors the one existing difference,
    /// so the jump vanishes. `dir` is +1 when the neighbour is to the right.
    fn accumulate_one_sided(&self, acc: &mut [f64], v: &[f64], other: &[f64], dir: f64) {
        let s = dir * self.inv_h;
        for j in 0..acc.len() {
            let avg = (other[j] - v[j]) * s;
            acc[j] += self.term(j, avg, 0.0);
        }
    }

    /// Differences along the line itself.
    fn accumulate_line(&self, acc: &mut [f64], v: &[f64], periodic: bool) {
        let n = v.len();
        let ih = self.inv_h;
        let mut end = |j: usize, l: Option<f64>, r: Option<f64>| {
            let (avg, jump) = match (l, r) {
                (Some(l), Some(r)) => ((r - l) * 0.5 * ih, (r - 2.0 * v[j] + l) * ih),
                (None, Some(r)) => ((r - v[j]) * ih, 0.0),
                (Some(l), None) => ((v[j] - l) * ih, 0.0),
                (None, None) => (0.0, 0.0),
            };
            acc[j] += self.term(j, avg, jump);
        };
        let wrap = |i: usize| periodic.then_some(v[i]);
        end(0, wrap(n - 1), Some(v[1]));
        end(n - 1, Some(v[n - 2]), wrap(0));
        let (ha, g) = (self.half_alpha, self.gain);
        let half = 0.5 * ih;
        let inner = &mut acc[1..n - 1];
        let (l, c, r) = (&v[..n - 2], &v[1..n - 1], &v[2..]);
        match self.drift {
            Some(d) => {
                let d = &d[1..n - 1];
                for j in 0..inner.len() {
                    let avg = (r[j] - l[j]) * half;
                    let jump = (r[j] - 2.0 * c[j] + l[j]) * ih;
                    inner[j] += d[j] * avg + g * avg.abs() + ha * jump;
                }
            }
            None => {
                for j in 0..inner.len() {
                    let avg = (r[j] - l[j]) * half;
                    let jump = (r[j] - 2.0 * c[j] + l[j]) * ih;
                    inner[j] += g * avg.abs() + ha * jump;
                }
            }
        }
    }
}

impl ValueFunction {
    pub fn from_parts(
        grid: Grid,
        dbar_levels: Vec<f64>,
        slices: Vec<Field>,
        meta: VfMetadata,
    ) -> Result<Self, ReachError> {
        if slices.len() != dbar_levels.len() || slices.is_empty() {
            return Err(ReachError::Mismatch(
                "one slice per disturbance level required".into(),
            ));
        }
        if slices.iter().any(|s| s.grid() != &grid) {
            return Err(ReachError::Mismatch(
                "slice grid differs from value-function grid".into(),
            ));
        }
        if dbar_levels.windows(2).any(|w| w[0] >= w[1]) {
            return Err(ReachError::Mismatch(
                "disturbance levels must be increasing".into(),
            ));
        }
        if meta.model.dim() != grid.ndim() {
            return Err(ReachError::Mismatch(
                "model dimension differs from grid".into(),
            ));
        }
        Ok(Self {
            grid,
            dbar_levels,
            slices,
            meta,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn dbar_levels(&self) -> &[f64] {
        &self.dbar_levels
    }

    pub fn dbar_max(&self) -> f64 {
        *self.dbar_levels.last().expect("non-empty levels")
    }

    pub fn slices(&self) -> &[Field] {
        &self.slices
    }

    pub fn metadata(&self) -> &VfMetadata {
        &self.meta
    }

    pub fn model(&self) -> &Model {
        &self.meta.model
    }

    pub fn converged(&self) -> bool {
        self.meta.report.converged
    }

    /// Errors unless this value function was solved for `env`.
    pub fn check_env(&self, env: &Env) -> Result<(), ReachError> {
        if self.meta.env_hash != env.hash() {
            return Err(ReachError::Mismatch(format!(
                "env hash {} differs from value function's {}",
                env.hash(),
                self.meta.env_hash
            )));
        }
        Ok(())
    }

    /// Bracketing slice indices and the weight of the upper one; flags
    /// out-of-range bounds after clamping.
    fn dbar_bracket(&self, dbar: f64) -> (usize, usize, f64, bool) {
        let lv = &self.dbar_levels;
        let last = lv.len() - 1;
        if !(dbar >= lv[0]) {
            return (0, 0, 0.0, true);
        }
        if dbar > lv[last] {
            return (last, last, 0.0, true);
        }
        if lv.len() == 1 {
            return (0, 0, 0.0, false);
        }
        let j = lv.partition_point(|&l| l <= dbar).clamp(1, last) - 1;
        let w = (dbar - lv[j]) / (lv[j + 1] - lv[j]);
        (j, j + 1, w, false)
    }

    /// Value and out-of-range flag, clamping both the state and `dbar`.
    pub fn query_value_clamped(&self, x: &[f64], dbar: f64) -> Result<(f64, bool), ReachError> {
        let (a, b, w, dflag) = self.dbar_bracket(dbar);
        let (va, fa) = self.slices[a].interpolate_clamped(x)?;
        let v = if w > 0.0 {
            let (vb, _) = self.slices[b].interpolate_clamped(x)?;
            (1.0 - w) * va + w * vb
        } else {
            va
        };
        Ok((v, dflag || fa))
    }

    /// Multilinear in the state, linear in `dbar`.
    pub fn query_value(&self, x: &[f64], dbar: f64) -> Result<f64, ReachError> {
        let (a, b, w, dflag) = self.dbar_bracket(dbar);
        let va = self.slices[a].interpolate(x)?;
        let v = if w > 0.0 {
            (1.0 - w) * va + w * self.slices[b].interpolate(x)?
        } else {
            va
        };
        if dflag {
            let lo = self.dbar_levels[0];
            return Err(ReachError::DbarOutOfRange {
                dbar,
                lo,
                hi: self.dbar_max(),
                clamped: v,
            });
        }
        Ok(v)
    }

    /// Gradient of the `dbar`-interpolated field at the clamped query.
    pub fn gradient_clamped(&self, x: &[f64], dbar: f64) -> Result<(Vec<f64>, bool), ReachError> {
        let (a, b, w, dflag) = self.dbar_bracket(dbar);
        let (mut g, fa) = self.slices[a].gradient_clamped(x)?;
        if w > 0.0 {
            let (gb, _) = self.slices[b].gradient_clamped(x)?;
            for (ga, gb) in g.iter_mut().zip(gb) {
                *ga = (1.0 - w) * *ga + w * gb;
            }
        }
        Ok((g, fa || dflag))
    }

    fn strict_gradient(&self, x: &[f64], dbar: f64) -> Result<Vec<f64>, ReachError> {
        let (g, flagged) = self.gradient_clamped(x, dbar)?;
        if flagged {
            // reproduce the precise error
            self.query_value(x, dbar)?;
        }
        Ok(g)
    }

    /// Worst-case disturbance `d*(x; dbar)` steering toward lower values.
    pub fn query_disturbance(&self, x: &[f64], dbar: f64) -> Result<f64, ReachError> {
        let g = self.strict_gradient(x, dbar)?;
        Ok(self.meta.model.optimal_disturbance(x, &g, dbar))
    }

    /// Like [`query_disturbance`](Self::query_disturbance) at the clamped
    /// query, with the clamping flag.
    pub fn query_disturbance_clamped(
        &self,
        x: &[f64],
        dbar: f64,
    ) -> Result<(f64, bool), ReachError> {
        let (g, flagged) = self.gradient_clamped(x, dbar)?;
        Ok((self.meta.model.optimal_disturbance(x, &g, dbar), flagged))
    }

    /// Safety-maximizing control from the most robust slice.
    pub fn query_safe_control(&self, x: &[f64]) -> Result<f64, ReachError> {
        self.query_safe_control_at(x, self.dbar_max())
    }

    pub fn query_safe_control_at(&self, x: &[f64], dbar: f64) -> Result<f64, ReachError> {
        let g = self.strict_gradient(x, dbar)?;
        Ok(self.meta.model.optimal_control(x, &g))
    }

    pub fn query_safe_control_clamped(
        &self,
        x: &[f64],
        dbar: f64,
    ) -> Result<(f64, bool), ReachError> {
        let (g, flagged) = self.gradient_clamped(x, dbar)?;
        Ok((self.meta.model.optimal_control(x, &g), flagged))
    }

    /// Whether `x` lies in the backward reachable tube for bound `dbar`.
    pub fn brt_membership(&self, x: &[f64], dbar: f64) -> Result<bool, ReachError> {
        Ok(self.query_value(x, dbar)? <= 0.0)
    }

    /// Checks `V(x; d1) >= V(x; d2)` for `d1 < d2` at every node and, when an
    /// environment is given, `V <= l`.
    pub fn check_invariants(&self, env: Option<&Env>) -> Result<(), ReachError> {
        for w in self.slices.windows(2) {
            for (node, (a, b)) in w[0].values().iter().zip(w[1].values()).enumerate() {
                if b > a {
                    return Err(ReachError::Invariant {
                        what: "disturbance monotonicity",
                        node,
                        excess: b - a,
                    });
                }
            }
        }
        if let Some(env) = env {
            for node in 0..self.grid.len() {
                let l = env.target(&self.grid.node_coords(node));
                for s in &self.slices {
                    let v = s.values()[node];
                    if v > l + 1e-12 {
                        return Err(ReachError::Invariant {
                            what: "value below target",
                            node,
                            excess: v - l,
                        });
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envmodels::{EnvConfig, IntegratorModel};
    use crate::gridcore::Axis;

    fn integrator_env(dbar_max: f64, levels: Vec<f64>) -> Env {
        let mut cfg = EnvConfig::integrator_default();
        cfg.dbar_max = dbar_max;
        cfg.solver.dbar_levels = levels;
        cfg.build().unwrap()
    }

    #[test]
    fn integrator_value_is_identity_when_control_dominates() {
        let env = integrator_env(0.5, vec![0.0, 0.5]);
        let vf = solve_env(&env).unwrap();
        assert!(vf.converged());
        let h = vf.grid().spacing()[0];
        for s in vf.slices() {
            for (i, v) in s.values().iter().enumerate().skip(1).take(199) {
                let x = vf.grid().node_coords(i)[0];
                assert!((v - x).abs() <= 2.0 * h);
            }
        }
    }

    #[test]
    fn finite_horizon_drift_when_disturbance_dominates() {
        let grid = Grid::new(vec![Axis::new(0.0, 4.0, 201)]).unwrap();
        let model = Model::Integrator(IntegratorModel { u_max: 1.0 });
        let (f, rep) = solve_finite_horizon(&grid, &model, |x| x[0], 1.5, 1.0, 0.5).unwrap();
        assert!((rep.horizon - 1.0).abs() < 1e-12);
        let h = grid.spacing()[0];
        for i in 1..200 {
            let x = grid.node_coords(i)[0];
            assert!((f.values()[i] - (x - 0.5)).abs() <= 2.0 * h);
        }
    }

    #[test]
    fn query_value_interpolates_dbar_linearly() {
        let env = integrator_env(0.5, vec![0.0, 0.5]);
        let vf = solve_env(&env).unwrap();
        let x = [vf.grid().node_coords(37)[0]];
        let a = vf.query_value(&x, 0.0).unwrap();
        let b = vf.query_value(&x, 0.5).unwrap();
        assert_eq!(a, vf.slices()[0].values()[37]);
        let mid = vf.query_value(&x, 0.25).unwrap();
        assert!((mid - 0.5 * (a + b)).abs() < 1e-15);
        match vf.query_value(&x, 0.9) {
            Err(ReachError::DbarOutOfRange { clamped, .. }) => assert_eq!(clamped, b),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn disturbance_and_control_from_uniform_gradient() {
        let grid = Grid::new(vec![Axis::new(0.0, 4.0, 21)]).unwrap();
        let rising = Field::from_fn(grid.clone(), |x| 2.0 * x[0]).unwrap();
        let falling = Field::from_fn(grid.clone(), |x| -x[0]).unwrap();
        let model = Model::Integrator(IntegratorModel { u_max: 1.0 });
        let meta = |m| VfMetadata {
            model: m,
            env_hash: String::new(),
            params: SolverParams::default(),
            report: SolveReport {
                converged: true,
                horizon: 0.0,
                steps: 0,
                dt: 0.0,
                final_rate: 0.0,
                slices: vec![],
            },
        };
        let up = ValueFunction::from_parts(
            grid.clone(),
            vec![0.0, 0.6],
            vec![rising.clone(), rising],
            meta(model),
        )
        .unwrap();
        for q in [0.1, 1.3, 3.9] {
            assert_eq!(up.query_disturbance(&[q], 0.6).unwrap(), -0.6);
            assert_eq!(up.query_disturbance(&[q], 0.0).unwrap(), 0.0);
        }
        let down =
            ValueFunction::from_parts(grid.clone(), vec![0.0], vec![falling], meta(model)).unwrap();
        assert_eq!(down.query_safe_control(&[2.0]).unwrap(), -1.0);
        let flat = Field::from_fn(grid.clone(), |_| 1.0).unwrap();
        let flat = ValueFunction::from_parts(grid, vec![0.0], vec![flat], meta(model)).unwrap();
        assert_eq!(flat.query_safe_control(&[2.0]).unwrap(), 0.0);
    }

    #[test]
    fn finite_solve_is_monotone_in_backward_time() {
        let grid = Grid::new(vec![Axis::new(0.0, 4.0, 81)]).unwrap();
        let model = Model::Integrator(IntegratorModel { u_max: 1.0 });
        let l = |x: &[f64]| (x[0] - 2.0).abs() - 0.5;
        let mut prev: Option<Vec<f64>> = None;
        for h in [0.1, 0.3, 0.6, 1.0] {
            let (f, _) = solve_finite_horizon(&grid, &model, l, 1.3, h, 0.5).unwrap();
            if let Some(p) = &prev {
                assert!(f.values().iter().zip(p).all(|(a, b)| a <= b));
            }
            prev = Some(f.into_values());
        }
    }
}
