//! Closed-loop rollouts, evaluation metrics and the method-by-data-size
//! experiment sweep.

use crate::collect::{self, stream, CollectError, CollectionPlan, Dataset, Method, Stream};
use crate::envmodels::{Env, Geometry, ModelError, State};
use crate::experts::{stage_cost, ExpertConfig, MpcConfig};
use crate::policy::{MlpPolicy, PolicyError, TrainConfig};
use crate::reach::{ReachError, ValueFunction};
use crate::shield::{FilterConfig, SafetyFilter};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error(transparent)]
    Reach(#[from] ReachError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Collect(#[from] CollectError),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Action {
    pub u: f64,
    pub engaged: bool,
}

impl Action {
    pub fn plain(u: f64) -> Self {
        Self { u, engaged: false }
    }
}

/// Anything that maps states to controls during a rollout.
pub trait Controller {
    fn act(&mut self, x: &State) -> Result<Action, BenchError>;

    /// Clears per-trajectory memory.
    fn reset(&mut self) {}
}

/// The environment's scripted expert with its own random stream.
pub struct ExpertController<'a> {
    env: &'a Env,
    rng: ChaCha8Rng,
}

impl<'a> ExpertController<'a> {
    pub fn new(env: &'a Env, rng: ChaCha8Rng) -> Self {
        Self { env, rng }
    }
}

impl Controller for ExpertController<'_> {
    fn act(&mut self, x: &State) -> Result<Action, BenchError> {
        Ok(Action::plain(
            self.env.config().expert.act(self.env, x, &mut self.rng).u,
        ))
    }
}

impl Controller for &MlpPolicy {
    fn act(&mut self, x: &State) -> Result<Action, BenchError> {
        Ok(Action::plain(self.forward(x)?))
    }
}

/// Safety-maximizing control of one value-function slice.
pub struct SafeController<'a> {
    pub vf: &'a ValueFunction,
    pub dbar: f64,
}

impl Controller for SafeController<'_> {
    fn act(&mut self, x: &State) -> Result<Action, BenchError> {
        Ok(Action {
            u: self.vf.query_safe_control_clamped(x, self.dbar)?.0,
            engaged: true,
        })
    }
}

pub struct ConstantController(pub f64);

impl Controller for ConstantController {
    fn act(&mut self, _: &State) -> Result<Action, BenchError> {
        Ok(Action::plain(self.0))
    }
}

/// Wraps a controller with the least-restrictive filter.
pub struct Filtered<'a, C> {
    pub inner: C,
    pub filter: SafetyFilter<'a>,
}

impl<'a, C: Controller> Filtered<'a, C> {
    pub fn new(inner: C, vf: &'a ValueFunction, cfg: FilterConfig) -> Self {
        Self {
            inner,
            filter: SafetyFilter::new(vf, cfg),
        }
    }
}

impl<C: Controller> Controller for Filtered<'_, C> {
    fn act(&mut self, x: &State) -> Result<Action, BenchError> {
        let proposed = self.inner.act(x)?;
        let d = self.filter.apply(x, proposed.u)?;
        Ok(Action {
            u: d.u,
            engaged: d.engaged,
        })
    }

    fn reset(&mut self) {
        self.inner.reset();
        self.filter.reset();
    }
}

/// Disturbance acting on the plant during a rollout.
pub enum Disturbance<'a> {
    None,
    /// Worst-case disturbance of bound `dbar` from the value function.
    Adversarial {
        vf: &'a ValueFunction,
        dbar: f64,
    },
    /// Uniform on `[-bound, bound]`, fresh every control step.
    Uniform {
        bound: f64,
        rng: ChaCha8Rng,
    },
}

impl Disturbance<'_> {
    fn draw(&mut self, x: &State) -> Result<f64, BenchError> {
        Ok(match self {
            Disturbance::None => 0.0,
            Disturbance::Adversarial { vf, dbar } => vf.query_disturbance_clamped(x, *dbar)?.0,
            Disturbance::Uniform { bound, rng } => {
                if *bound > 0.0 {
                    rng.random_range(-*bound..*bound)
                } else {
                    0.0
                }
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Goal,
    Collision,
    Timeout,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<State>,
    pub actions: Vec<f64>,
    pub engaged: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutResult {
    pub outcome: Outcome,
    /// Task cost accrued along the trajectory (see [`task_cost_kind`]).
    pub cost: f64,
    /// Smallest `l(x)` reached.
    pub min_value: f64,
    /// Mean of `p_x^2` over visited states.
    pub msd_centerline: f64,
    pub final_state: State,
    pub steps: usize,
    pub engaged_steps: usize,
    pub trajectory: Option<Trajectory>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskCost {
    /// Sum of the MPC stage cost per control step.
    MpcStage,
    /// Mean squared crosstrack distance.
    Centerline,
    /// Elapsed time.
    Time,
}

pub fn task_cost_kind(env: &Env) -> TaskCost {
    match env.config().geometry {
        Geometry::Obstacles { .. } => TaskCost::MpcStage,
        Geometry::Runway { .. } => TaskCost::Centerline,
        Geometry::HalfLine { .. } => TaskCost::Time,
    }
}

fn mpc_weights(env: &Env) -> MpcConfig {
    match &env.config().expert {
        ExpertConfig::Mpc(c) => c.clone(),
        _ => MpcConfig::default(),
    }
}

#[derive(Default)]
pub struct RolloutOptions<'a> {
    pub disturbance: Option<Disturbance<'a>>,
    /// Overrides the environment timeout (s).
    pub timeout: Option<f64>,
    pub record: bool,
}

/// Simulates `controller` from `x0` at the control rate until the goal,
/// the failure set or the timeout.
pub fn rollout<C: Controller + ?Sized>(
    env: &Env,
    controller: &mut C,
    x0: &[f64],
    mut opts: RolloutOptions<'_>,
) -> Result<RolloutResult, BenchError> {
    if env.target(x0) <= 0.0 {
        return Err(BenchError::Invalid(
            "rollout must start outside the failure set".into(),
        ));
    }
    controller.reset();
    let period = env.config().control_period;
    let timeout = opts.timeout.unwrap_or(env.config().timeout);
    let max_steps = (timeout / period).round() as usize;
    let kind = task_cost_kind(env);
    let weights = mpc_weights(env);
    let mut disturbance = opts.disturbance.take().unwrap_or(Disturbance::None);
    let mut traj = opts.record.then(Trajectory::default);

    let mut x = State::from_slice(x0);
    let mut min_value = env.target(&x);
    let mut stage_sum = 0.0;
    let mut sq_px = x[0] * x[0];
    let mut visited = 1usize;
    let mut engaged_steps = 0;
    let mut steps = 0;
    let outcome = loop {
        if env.reached_goal(&x) {
            break Outcome::Goal;
        }
        if steps >= max_steps {
            break Outcome::Timeout;
        }
        let a = controller.act(&x)?;
        let d = disturbance.draw(&x)?;
        if let Some(tr) = traj.as_mut() {
            tr.times.push(steps as f64 * period);
            tr.states.push(x);
            tr.actions.push(a.u);
            tr.engaged.push(a.engaged);
        }
        engaged_steps += usize::from(a.engaged);
        if kind == TaskCost::MpcStage {
            stage_sum += stage_cost(env, &x, a.u, &weights);
        }
        let (next, failed) = env.advance(&x, a.u, d)?;
        steps += 1;
        x = next;
        min_value = min_value.min(env.target(&x));
        sq_px += x[0] * x[0];
        visited += 1;
        if failed {
            break Outcome::Collision;
        }
    };
    if let Some(tr) = traj.as_mut() {
        tr.times.push(steps as f64 * period);
        tr.states.push(x);
    }
    let msd_centerline = sq_px / visited as f64;
    let cost = match kind {
        TaskCost::MpcStage => stage_sum,
        TaskCost::Centerline => msd_centerline,
        TaskCost::Time => steps as f64 * period,
    };
    Ok(RolloutResult {
        outcome,
        cost,
        min_value,
        msd_centerline,
        final_state: x,
        steps,
        engaged_steps,
        trajectory: traj,
    })
}

/// Evaluation starts: start-distribution samples outside the failure set
/// and, when `vf` is given, with `V(x0; 0) > margin`. Start `i` depends only
/// on `(seed, i)`.
pub fn eval_starts(
    env: &Env,
    vf: Option<&ValueFunction>,
    margin: f64,
    n: usize,
    seed: u64,
) -> Result<Vec<State>, BenchError> {
    const MAX_TRIES: usize = 10_000;
    (0..n)
        .map(|i| {
            let mut rng = stream(seed, i as u64, Stream::EvalStart);
            for _ in 0..MAX_TRIES {
                let x = env.sample_start(&mut rng);
                if env.target(&x) <= 0.0 || env.reached_goal(&x) {
                    continue;
                }
                match vf {
                    Some(vf) if vf.query_value_clamped(&x, 0.0)?.0 <= margin => continue,
                    _ => return Ok(x),
                }
            }
            Err(BenchError::Invalid(format!(
                "no admissible start found after {MAX_TRIES} draws"
            )))
        })
        .collect()
}

/// Aggregate metrics of one controller over a set of starts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub episodes: usize,
    pub goals: usize,
    pub failures: usize,
    pub timeouts: usize,
    pub failure_rate: f64,
    /// Mean task cost over runs that reached the goal.
    pub safe_cost: Option<f64>,
    /// Mean over all runs of the per-run mean squared crosstrack distance.
    pub msd_centerline: f64,
    /// Mean final `|p_x|` over runs that reached the goal.
    pub final_abs_px: Option<f64>,
    /// Fraction of control steps with the filter engaged.
    pub engagement_rate: f64,
    pub start_margin: f64,
}

impl EvalSummary {
    pub fn from_results(results: &[RolloutResult], start_margin: f64) -> Self {
        let n = results.len();
        let count = |o| results.iter().filter(|r| r.outcome == o).count();
        let safe: Vec<&RolloutResult> = results
            .iter()
            .filter(|r| r.outcome == Outcome::Goal)
            .collect();
        let mean = |v: Vec<f64>| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
        let steps: usize = results.iter().map(|r| r.steps).sum();
        let engaged: usize = results.iter().map(|r| r.engaged_steps).sum();
        Self {
            episodes: n,
            goals: safe.len(),
            failures: count(Outcome::Collision),
            timeouts: count(Outcome::Timeout),
            failure_rate: count(Outcome::Collision) as f64 / n.max(1) as f64,
            safe_cost: mean(safe.iter().map(|r| r.cost).collect()),
            msd_centerline: mean(results.iter().map(|r| r.msd_centerline).collect()).unwrap_or(0.0),
            final_abs_px: mean(safe.iter().map(|r| r.final_state[0].abs()).collect()),
            engagement_rate: if steps > 0 {
                engaged as f64 / steps as f64
            } else {
                0.0
            },
            start_margin,
        }
    }
}

/// Rolls out a fresh controller from each start. `make(i)` builds the
/// controller for episode `i`.
pub fn evaluate<C, F>(
    env: &Env,
    starts: &[State],
    make: F,
) -> Result<Vec<RolloutResult>, BenchError>
where
    C: Controller,
    F: Fn(usize) -> C + Sync,
{
    starts
        .par_iter()
        .enumerate()
        .map(|(i, x0)| rollout(env, &mut make(i), x0, RolloutOptions::default()))
        .collect()
}

/// Summary statistics of `V(x; dbar_max)` over a dataset's states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueHistogram {
    pub count: usize,
    pub mean: f64,
    pub median: f64,
    pub p10: f64,
    /// `(lower edge, count)` per bin; bins share a common width.
    pub bins: Vec<(f64, usize)>,
    pub bin_width: f64,
}

pub fn dataset_value_histogram(
    data: &Dataset,
    vf: &ValueFunction,
    bins: usize,
) -> Result<ValueHistogram, BenchError> {
    if data.is_empty() {
        return Err(BenchError::Invalid(
            "empty dataset has no value histogram".into(),
        ));
    }
    let mut values = data
        .records
        .iter()
        .map(|r| Ok(vf.query_value_clamped(&r.x, vf.dbar_max())?.0))
        .collect::<Result<Vec<f64>, ReachError>>()?;
    values.sort_by(f64::total_cmp);
    let n = values.len();
    let quantile = |q: f64| {
        let pos = q * (n - 1) as f64;
        let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
        values[lo] + (pos - lo as f64) * (values[hi] - values[lo])
    };
    let (lo, hi) = (values[0], values[n - 1]);
    let bins = bins.max(1);
    let width = if hi > lo {
        (hi - lo) / bins as f64
    } else {
        1.0
    };
    let mut counts = vec![0usize; bins];
    for v in &values {
        let b = (((v - lo) / width) as usize).min(bins - 1);
        counts[b] += 1;
    }
    Ok(ValueHistogram {
        count: n,
        mean: values.iter().sum::<f64>() / n as f64,
        median: quantile(0.5),
        p10: quantile(0.1),
        bins: counts
            .into_iter()
            .enumerate()
            .map(|(i, c)| (lo + i as f64 * width, c))
            .collect(),
        bin_width: width,
    })
}

/// One curve of an experiment: a collection method, optionally filtered
/// at test time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSpec {
    pub label: String,
    pub method: Method,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dbar_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_sigma: Option<f64>,
    #[serde(default)]
    pub filter: bool,
}

impl MethodSpec {
    pub fn new(label: &str, method: Method) -> Self {
        Self {
            label: label.into(),
            method,
            dbar_max: None,
            noise_sigma: None,
            filter: false,
        }
    }

    pub fn filtered(mut self) -> Self {
        self.filter = true;
        self
    }

    pub fn with_dbar(mut self, dbar: f64) -> Self {
        self.dbar_max = Some(dbar);
        self
    }

    /// Identifies the dataset and policy this curve is built from; curves
    /// that differ only in filtering share them.
    fn data_key(&self) -> (Method, Option<u64>, Option<u64>) {
        (
            self.method,
            self.dbar_max.map(f64::to_bits),
            self.noise_sigma.map(f64::to_bits),
        )
    }
}

fn default_eval_starts() -> usize {
    100
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub name: String,
    /// Environment file, relative to the experiment file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub env: Option<String>,
    /// Value-function file, relative to the experiment file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vf: Option<String>,
    pub methods: Vec<MethodSpec>,
    pub k_values: Vec<usize>,
    pub seeds: Vec<u64>,
    #[serde(default = "default_eval_starts")]
    pub eval_starts: usize,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub filter: FilterConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dart_iterations: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dagger_iterations: Option<usize>,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<(), BenchError> {
        let bad = |m: &str| Err(BenchError::Invalid(m.into()));
        if self.methods.is_empty() || self.k_values.is_empty() || self.seeds.is_empty() {
            return bad("experiment needs methods, K values and seeds");
        }
        if self.k_values.contains(&0) || self.eval_starts == 0 {
            return bad("K values and evaluation starts must be positive");
        }
        let mut labels: Vec<&str> = self.methods.iter().map(|m| m.label.as_str()).collect();
        labels.sort_unstable();
        if labels.windows(2).any(|w| w[0] == w[1]) {
            return bad("method labels must be unique");
        }
        self.filter.validate().map_err(BenchError::Invalid)?;
        self.train.validate()?;
        Ok(())
    }

    pub fn plan(&self, env: &Env, m: &MethodSpec, k: usize, seed: u64) -> CollectionPlan {
        let mut plan = CollectionPlan::new(m.method, k, env, seed);
        if let Some(d) = m.dbar_max {
            plan.dbar_max = d;
        }
        if let Some(s) = m.noise_sigma {
            plan.noise_sigma = s;
        }
        if let Some(n) = self.dart_iterations {
            plan.dart_iterations = n;
        }
        if let Some(n) = self.dagger_iterations {
            plan.dagger_iterations = n;
        }
        plan.train = TrainConfig {
            seed,
            ..self.train.clone()
        };
        plan
    }
}

/// Result of one (method, K, seed) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub label: String,
    pub method: Method,
    pub k: usize,
    pub seed: u64,
    pub dbar_max: f64,
    pub filter: bool,
    pub summary: EvalSummary,
    pub dataset_size: usize,
    pub expert_failure_rate: f64,
    /// Mean `V(x; dbar_max)` over the dataset, when a value function is
    /// available.
    pub dataset_value_mean: Option<f64>,
    pub env_hash: String,
    /// Wall-clock seconds spent on collection and training.
    #[serde(skip)]
    pub seconds: f64,
}

/// Artifacts of one trained cell, kept when requested.
pub struct CellArtifacts {
    pub method: Method,
    pub label: String,
    pub k: usize,
    pub seed: u64,
    pub dataset: Dataset,
    pub policy: MlpPolicy,
}

/// A cell whose collection, training or evaluation failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub labels: Vec<String>,
    pub k: usize,
    pub seed: u64,
    pub error: String,
}

pub struct ExperimentOutput {
    pub cells: Vec<CellResult>,
    pub failures: Vec<CellFailure>,
    pub artifacts: Vec<CellArtifacts>,
}

/// Runs every (method, K, seed) cell: collect, train, evaluate. Curves that
/// share a dataset (filtered and unfiltered) share one training. Evaluation
/// starts depend only on the seed, so all methods face the same starts. A
/// failing cell is recorded in `failures` and the sweep continues.
pub fn run_experiment(
    env: &Env,
    vf: Option<&ValueFunction>,
    spec: &ExperimentSpec,
    keep_artifacts: bool,
) -> Result<ExperimentOutput, BenchError> {
    spec.validate()?;
    if let Some(vf) = vf {
        vf.check_env(env)?;
    }
    let margin = env.config().eval_start_margin;
    let starts: BTreeMap<u64, Vec<State>> = spec
        .seeds
        .iter()
        .map(|&s| Ok((s, eval_starts(env, vf, margin, spec.eval_starts, s)?)))
        .collect::<Result<_, BenchError>>()?;

    let mut groups: Vec<Vec<&MethodSpec>> = Vec::new();
    for m in &spec.methods {
        if m.filter && vf.is_none() {
            return Err(BenchError::Invalid(format!(
                "{} needs a value function",
                m.label
            )));
        }
        match groups.iter_mut().find(|g| g[0].data_key() == m.data_key()) {
            Some(g) => g.push(m),
            None => groups.push(vec![m]),
        }
    }
    let jobs: Vec<(&Vec<&MethodSpec>, usize, u64)> = groups
        .iter()
        .flat_map(|g| {
            spec.k_values
                .iter()
                .flat_map(move |&k| spec.seeds.iter().map(move |&s| (g, k, s)))
        })
        .collect();

    let run_cell = |group: &[&MethodSpec], k: usize, seed: u64| -> Result<_, BenchError> {
        let started = Instant::now();
        let base = group[0];
        let plan = spec.plan(env, base, k, seed);
        let data = collect::collect(env, vf, &plan)?;
        let (policy, _) = collect::train_on_dataset(&data, &plan.train)?;
        let seconds = started.elapsed().as_secs_f64();
        let value_mean = match vf {
            Some(vf) => Some(dataset_value_histogram(&data, vf, 1)?.mean),
            None => None,
        };
        let starts = &starts[&seed];
        let mut cells = Vec::new();
        for m in group {
            let results = match (m.filter, vf) {
                (true, Some(vf)) => evaluate(env, starts, |_| {
                    Filtered::new(&policy, vf, spec.filter.clone())
                })?,
                _ => evaluate(env, starts, |_| &policy)?,
            };
            cells.push(CellResult {
                label: m.label.clone(),
                method: m.method,
                k,
                seed,
                dbar_max: plan.dbar_max,
                filter: m.filter,
                summary: EvalSummary::from_results(&results, margin),
                dataset_size: data.len(),
                expert_failure_rate: data.manifest.failure_rate(),
                dataset_value_mean: value_mean,
                env_hash: env.hash().to_string(),
                seconds,
            });
        }
        let artifacts = keep_artifacts.then(|| CellArtifacts {
            method: base.method,
            label: base.label.clone(),
            k,
            seed,
            dataset: data,
            policy,
        });
        Ok((cells, artifacts))
    };
    let done: Vec<_> = jobs
        .par_iter()
        .map(|&(group, k, seed)| {
            run_cell(group, k, seed).map_err(|e| CellFailure {
                labels: group.iter().map(|m| m.label.clone()).collect(),
                k,
                seed,
                error: e.to_string(),
            })
        })
        .collect();

    let label_rank = |l: &str| {
        spec.methods
            .iter()
            .position(|m| m.label == l)
            .unwrap_or(usize::MAX)
    };
    let mut cells: Vec<CellResult> = Vec::new();
    let mut artifacts = Vec::new();
    let mut failures = Vec::new();
    for cell in done {
        match cell {
            Ok((c, a)) => {
                cells.extend(c);
                artifacts.extend(a);
            }
            Err(f) => failures.push(f),
        }
    }
    cells.sort_by_key(|c| (label_rank(&c.label), c.k, c.seed));
    Ok(ExperimentOutput {
        cells,
        failures,
        artifacts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envmodels::EnvConfig;
    use rand::SeedableRng;

    #[test]
    fn expert_reaches_goal_from_a_typical_start() {
        let env = EnvConfig::unicycle_default().build().unwrap();
        let x0 = [-3.8, -3.8, std::f64::consts::FRAC_PI_4];
        let mut ctrl = ExpertController::new(&env, ChaCha8Rng::seed_from_u64(1));
        let r = rollout(&env, &mut ctrl, &x0, RolloutOptions::default()).unwrap();
        assert_eq!(r.outcome, Outcome::Goal);
        assert!(r.min_value > 0.0);
    }

    #[test]
    fn straight_into_an_obstacle_collides() {
        let env = EnvConfig::unicycle_default().build().unwrap();
        // obstacle centred at (-2, -1.5), radius 1, straight ahead
        let r = rollout(
            &env,
            &mut ConstantController(0.0),
            &[-4.0, -1.5, 0.0],
            RolloutOptions::default(),
        )
        .unwrap();
        assert_eq!(r.outcome, Outcome::Collision);
        assert!(r.min_value <= 0.0);
    }

    #[test]
    fn circling_in_place_times_out() {
        let env = EnvConfig::unicycle_default().build().unwrap();
        let r = rollout(
            &env,
            &mut ConstantController(1.0),
            &[1.0, -4.0, 0.0],
            RolloutOptions::default(),
        )
        .unwrap();
        assert_eq!(r.outcome, Outcome::Timeout);
        assert_eq!(r.steps, 150);
    }

    #[test]
    fn centerline_metric_of_a_pinned_track() {
        let env = EnvConfig::taxi_default().build().unwrap();
        let r = rollout(
            &env,
            &mut ConstantController(0.0),
            &[2.0, 0.0, 0.0],
            RolloutOptions::default(),
        )
        .unwrap();
        assert_eq!(r.outcome, Outcome::Goal);
        assert!((r.msd_centerline - 4.0).abs() < 1e-12);
        assert!((r.final_state[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn summary_rates() {
        let mk = |o| RolloutResult {
            outcome: o,
            cost: 2.0,
            min_value: 1.0,
            msd_centerline: 0.0,
            final_state: State::from_slice(&[0.0]),
            steps: 10,
            engaged_steps: 0,
            trajectory: None,
        };
        let mut rs: Vec<RolloutResult> = (0..88).map(|_| mk(Outcome::Goal)).collect();
        rs.extend((0..12).map(|_| mk(Outcome::Collision)));
        let s = EvalSummary::from_results(&rs, 0.2);
        assert_eq!(s.failure_rate, 0.12);
        assert_eq!(s.safe_cost, Some(2.0));
    }

    #[test]
    fn eval_starts_are_reproducible() {
        let env = EnvConfig::unicycle_default().build().unwrap();
        let a = eval_starts(&env, None, 0.2, 20, 3).unwrap();
        let b = eval_starts(&env, None, 0.2, 20, 3).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, eval_starts(&env, None, 0.2, 20, 4).unwrap());
    }
}
