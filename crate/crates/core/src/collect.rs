//! Demonstration collection: plain expert rollouts, disturbance-guided
//! rollouts driven by the reachability value function, random noise
//! injection, DART and DAgger.

use crate::envmodels::{Env, Model, ModelError, State};
use crate::policy::{self, FeatureMap, MlpPolicy, PolicyError, Samples, TrainConfig};
use crate::reach::{ReachError, ValueFunction};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CollectError {
    #[error(transparent)]
    Reach(#[from] ReachError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("invalid collection plan: {0}")]
    Plan(String),
    #[error("dataset violates {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Safegil,
    Bc,
    Gauss,
    Uniform,
    Dart,
    Dagger,
    DaggerSafegil,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Safegil,
        Method::Bc,
        Method::Gauss,
        Method::Uniform,
        Method::Dart,
        Method::Dagger,
        Method::DaggerSafegil,
    ];

    pub fn tag(&self) -> &'static str {
        match self {
            Method::Safegil => "safegil",
            Method::Bc => "bc",
            Method::Gauss => "gauss",
            Method::Uniform => "uniform",
            Method::Dart => "dart",
            Method::Dagger => "dagger",
            Method::DaggerSafegil => "dagger_safegil",
        }
    }

    pub fn needs_value_function(&self) -> bool {
        matches!(self, Method::Safegil | Method::DaggerSafegil)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Method {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Method::ALL
            .into_iter()
            .find(|m| m.tag() == s)
            .ok_or_else(|| format!("unknown method {s:?}"))
    }
}

/// Everything that determines a dataset besides the environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollectionPlan {
    pub method: Method,
    /// Number of demonstrations (episodes) in total.
    pub demos: usize,
    /// Disturbance bound for guided and random injection.
    pub dbar_max: f64,
    /// Standard deviation of Gaussian injection.
    pub noise_sigma: f64,
    pub dart_iterations: usize,
    pub dart_alpha: f64,
    pub dagger_iterations: usize,
    /// Training used for DART and DAgger interim policies.
    pub train: TrainConfig,
    pub seed: u64,
}

impl CollectionPlan {
    /// Defaults for `env`: full disturbance bound, Gaussian standard
    /// deviation of half the bound, two DART tranches, four DAgger rounds.
    pub fn new(method: Method, demos: usize, env: &Env, seed: u64) -> Self {
        Self {
            method,
            demos,
            dbar_max: env.dbar_max(),
            noise_sigma: 0.5 * env.dbar_max(),
            dart_iterations: 2,
            dart_alpha: 1.0,
            dagger_iterations: 4,
            train: TrainConfig {
                seed,
                ..TrainConfig::default()
            },
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), CollectError> {
        let bad = |m: &str| Err(CollectError::Plan(m.into()));
        if self.demos == 0 {
            return bad("at least one demonstration is required");
        }
        if !(self.dbar_max >= 0.0 && self.noise_sigma >= 0.0 && self.dart_alpha >= 0.0) {
            return bad("disturbance bound, noise scale and DART scale must be non-negative");
        }
        match self.method {
            Method::Dart if self.dart_iterations == 0 => bad("DART needs at least one iteration"),
            Method::Dagger | Method::DaggerSafegil if self.dagger_iterations == 0 => {
                bad("DAgger needs at least one iteration")
            }
            _ => self.train.validate().map_err(CollectError::from),
        }
    }
}

/// One control step of a demonstration. The label is always the clean
/// expert action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemoRecord {
    pub demo: usize,
    pub t: f64,
    pub x: State,
    pub u_expert: f64,
    pub u_applied: f64,
    /// Disturbance bound drawn for this step (guided runs) or magnitude of
    /// the injected noise (random runs).
    pub dbar: f64,
    /// `V(x; dbar_max)` of the value function used during collection.
    pub v_safe: Option<f64>,
    /// The demonstration ended in failure, or the expert found no
    /// collision-free plan at this step.
    pub flag: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub method: Method,
    pub env_hash: String,
    pub seed: u64,
    pub model: Model,
    pub plan: CollectionPlan,
    pub records: usize,
    pub failed_demos: usize,
}

impl DatasetManifest {
    pub fn failure_rate(&self) -> f64 {
        self.failed_demos as f64 / self.plan.demos as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub records: Vec<DemoRecord>,
    pub manifest: DatasetManifest,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn states(&self) -> Vec<Vec<f64>> {
        self.records.iter().map(|r| r.x.to_vec()).collect()
    }

    pub fn labels(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.u_expert).collect()
    }

    /// Checks the record invariants: contiguous demo ids in order, strictly
    /// increasing times within a demo, labels within the control bound and
    /// guided perturbations within their recorded bound.
    pub fn validate(&self) -> Result<(), CollectError> {
        let bad = |m: String| Err(CollectError::Invalid(m));
        let ub = self.manifest.model.control_bound();
        let dmax = self.manifest.plan.dbar_max;
        let guided = self.manifest.method == Method::Safegil;
        let mut prev: Option<&DemoRecord> = None;
        for (i, r) in self.records.iter().enumerate() {
            if let Some(p) = prev {
                let next_demo = r.demo == p.demo + 1;
                if !(next_demo || (r.demo == p.demo && r.t > p.t)) {
                    return bad(format!("demo ids or timestamps out of order at record {i}"));
                }
            } else if r.demo != 0 {
                return bad("demo ids must start at 0".into());
            }
            if r.u_expert.abs() > ub + 1e-12 {
                return bad(format!("label bound at record {i}"));
            }
            if !(r.dbar >= 0.0 && r.dbar <= dmax + 1e-12) {
                return bad(format!("disturbance bound range at record {i}"));
            }
            if guided && (r.u_applied - r.u_expert).abs() > r.dbar + 1e-12 {
                return bad(format!("applied-minus-label bound at record {i}"));
            }
            prev = Some(r);
        }
        Ok(())
    }
}

/// Independent random streams of one demonstration or evaluation episode.
#[derive(Debug, Clone, Copy)]
pub enum Stream {
    Start = 0,
    Expert = 1,
    Disturbance = 2,
    EvalStart = 3,
    EvalController = 4,
    EvalDisturbance = 5,
}

/// Deterministic generator for `(seed, id, purpose)`.
pub fn stream(seed: u64, id: u64, purpose: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((id << 8) | purpose as u64);
    rng
}

/// Per-demo generators handed to the step rule.
pub struct DemoRngs {
    pub expert: ChaCha8Rng,
    pub disturbance: ChaCha8Rng,
}

#[derive(Debug, Clone, Copy)]
struct Choice {
    u_expert: f64,
    u_applied: f64,
    dbar: f64,
    flagged: bool,
}

struct Episode {
    records: Vec<DemoRecord>,
    failed: bool,
}

fn run_demo<F>(
    env: &Env,
    demo: usize,
    seed: u64,
    log_vf: Option<&ValueFunction>,
    choose: F,
) -> Result<Episode, CollectError>
where
    F: Fn(&State, &mut DemoRngs) -> Result<Choice, CollectError>,
{
    let id = demo as u64;
    let mut start_rng = stream(seed, id, Stream::Start);
    let mut rngs = DemoRngs {
        expert: stream(seed, id, Stream::Expert),
        disturbance: stream(seed, id, Stream::Disturbance),
    };
    let period = env.config().control_period;
    let max_steps = (env.config().timeout / period).round() as usize;
    let mut x = env.sample_start(&mut start_rng);
    let mut records = Vec::new();
    for k in 0..max_steps {
        if env.reached_goal(&x) {
            break;
        }
        let c = choose(&x, &mut rngs)?;
        let v_safe = match log_vf {
            Some(vf) => Some(vf.query_value_clamped(&x, vf.dbar_max())?.0),
            None => None,
        };
        records.push(DemoRecord {
            demo,
            t: k as f64 * period,
            x,
            u_expert: c.u_expert,
            u_applied: c.u_applied,
            dbar: c.dbar,
            v_safe,
            flag: c.flagged,
        });
        let (next, failed) = env.advance(&x, c.u_applied, 0.0)?;
        if failed {
            records.iter_mut().for_each(|r| r.flag = true);
            return Ok(Episode {
                records,
                failed: true,
            });
        }
        x = next;
    }
    Ok(Episode {
        records,
        failed: false,
    })
}

fn run_tranche<F>(
    env: &Env,
    demos: std::ops::Range<usize>,
    seed: u64,
    log_vf: Option<&ValueFunction>,
    choose: F,
) -> Result<Vec<Episode>, CollectError>
where
    F: Fn(&State, &mut DemoRngs) -> Result<Choice, CollectError> + Sync,
{
    demos
        .into_par_iter()
        .map(|d| run_demo(env, d, seed, log_vf, &choose))
        .collect()
}

fn assemble(env: &Env, plan: &CollectionPlan, episodes: &[Episode]) -> Dataset {
    let failed_demos = episodes.iter().filter(|e| e.failed).count();
    let records: Vec<DemoRecord> = episodes
        .iter()
        .flat_map(|e| e.records.iter().cloned())
        .collect();
    Dataset {
        manifest: DatasetManifest {
            method: plan.method,
            env_hash: env.hash().to_string(),
            seed: plan.seed,
            model: *env.model(),
            plan: plan.clone(),
            records: records.len(),
            failed_demos,
        },
        records,
    }
}

fn expert_choice(env: &Env, x: &State, rngs: &mut DemoRngs) -> Choice {
    let a = env.config().expert.act(env, x, &mut rngs.expert);
    Choice {
        u_expert: a.u,
        u_applied: a.u,
        dbar: 0.0,
        flagged: a.flagged,
    }
}

fn guided_choice(
    env: &Env,
    vf: &ValueFunction,
    dbar_max: f64,
    x: &State,
    rngs: &mut DemoRngs,
) -> Result<Choice, CollectError> {
    let mut c = expert_choice(env, x, rngs);
    let dbar = if dbar_max > 0.0 {
        rngs.disturbance.random_range(0.0..dbar_max)
    } else {
        0.0
    };
    let (d, _) = vf.query_disturbance_clamped(x, dbar)?;
    c.u_applied = c.u_expert + d;
    c.dbar = dbar;
    Ok(c)
}

/// Zero-mean Gaussian with standard deviation `sigma`, truncated to
/// `[-bound, bound]` by rejection.
fn truncated_normal<R: Rng + ?Sized>(rng: &mut R, sigma: f64, bound: f64) -> f64 {
    if sigma <= 0.0 || bound <= 0.0 {
        return 0.0;
    }
    loop {
        let d = sigma * rng.sample::<f64, _>(StandardNormal);
        if d.abs() <= bound {
            return d;
        }
    }
}

fn noisy_choice<G>(env: &Env, x: &State, rngs: &mut DemoRngs, draw: G) -> Choice
where
    G: Fn(&mut ChaCha8Rng) -> f64,
{
    let mut c = expert_choice(env, x, rngs);
    let d = draw(&mut rngs.disturbance);
    c.u_applied = c.u_expert + d;
    c.dbar = d.abs();
    c
}

fn check_vf(env: &Env, vf: &ValueFunction, plan: &CollectionPlan) -> Result<(), CollectError> {
    vf.check_env(env)?;
    if plan.dbar_max > vf.dbar_max() + 1e-12 {
        return Err(CollectError::Plan(format!(
            "disturbance bound {} exceeds the value function's {}",
            plan.dbar_max,
            vf.dbar_max()
        )));
    }
    Ok(())
}

/// Splits `total` episodes over `rounds` tranches, earlier tranches taking
/// the remainder.
fn tranche_sizes(total: usize, rounds: usize) -> Vec<usize> {
    (0..rounds)
        .map(|i| total / rounds + usize::from(i < total % rounds))
        .collect()
}

/// Expert demonstrations with no perturbation.
pub fn collect_bc(
    env: &Env,
    plan: &CollectionPlan,
    log_vf: Option<&ValueFunction>,
) -> Result<Dataset, CollectError> {
    plan.validate()?;
    let eps = run_tranche(env, 0..plan.demos, plan.seed, log_vf, |x, r| {
        Ok(expert_choice(env, x, r))
    })?;
    Ok(assemble(env, plan, &eps))
}

/// Expert demonstrations with the worst-case disturbance for a bound drawn
/// uniformly from `[0, dbar_max]` at every control step added to the
/// applied input. Labels stay clean.
pub fn collect_safegil(
    env: &Env,
    vf: &ValueFunction,
    plan: &CollectionPlan,
) -> Result<Dataset, CollectError> {
    plan.validate()?;
    check_vf(env, vf, plan)?;
    let eps = run_tranche(env, 0..plan.demos, plan.seed, Some(vf), |x, r| {
        guided_choice(env, vf, plan.dbar_max, x, r)
    })?;
    Ok(assemble(env, plan, &eps))
}

/// Expert demonstrations with zero-mean random perturbations: truncated
/// Gaussian for [`Method::Gauss`], uniform on `[-dbar_max, dbar_max]` for
/// [`Method::Uniform`].
pub fn collect_noise(
    env: &Env,
    plan: &CollectionPlan,
    log_vf: Option<&ValueFunction>,
) -> Result<Dataset, CollectError> {
    plan.validate()?;
    let (sigma, bound) = (plan.noise_sigma, plan.dbar_max);
    let eps = match plan.method {
        Method::Gauss => run_tranche(env, 0..plan.demos, plan.seed, log_vf, |x, r| {
            Ok(noisy_choice(env, x, r, |g| {
                truncated_normal(g, sigma, bound)
            }))
        })?,
        Method::Uniform => run_tranche(env, 0..plan.demos, plan.seed, log_vf, |x, r| {
            Ok(noisy_choice(env, x, r, |g| {
                if bound > 0.0 {
                    g.random_range(-bound..bound)
                } else {
                    0.0
                }
            }))
        })?,
        m => {
            return Err(CollectError::Plan(format!(
                "{m} is not a noise-injection method"
            )))
        }
    };
    Ok(assemble(env, plan, &eps))
}

/// Fits a policy to a dataset's `(state, label)` pairs.
pub fn train_on_dataset(
    data: &Dataset,
    cfg: &TrainConfig,
) -> Result<(MlpPolicy, Vec<f64>), PolicyError> {
    let states = data.states();
    let labels = data.labels();
    let model = &data.manifest.model;
    let (mut p, curve) = policy::train(
        Samples {
            states: &states,
            labels: &labels,
        },
        FeatureMap::for_model(model),
        model.control_bound(),
        cfg,
    )?;
    p.provenance.env_hash = Some(data.manifest.env_hash.clone());
    p.provenance.method = Some(data.manifest.method.tag().to_string());
    p.provenance.seed = Some(cfg.seed);
    Ok((p, curve))
}

/// Mean squared disagreement between labels and a policy over a dataset.
pub fn policy_error_variance(data: &Dataset, p: &MlpPolicy) -> Result<f64, PolicyError> {
    let mut total = 0.0;
    for r in &data.records {
        total += (r.u_expert - p.forward(&r.x)?).powi(2);
    }
    Ok(if data.is_empty() {
        0.0
    } else {
        total / data.len() as f64
    })
}

/// DART: a noise-free first tranche, then tranches with Gaussian noise
/// whose variance is `alpha` times the current learner's squared error on
/// all data so far.
pub fn dart_collect(
    env: &Env,
    plan: &CollectionPlan,
    log_vf: Option<&ValueFunction>,
) -> Result<Dataset, CollectError> {
    plan.validate()?;
    let sizes = tranche_sizes(plan.demos, plan.dart_iterations);
    let mut episodes: Vec<Episode> = Vec::new();
    let mut first = 0;
    let mut variance = 0.0;
    for (i, &n) in sizes.iter().enumerate() {
        if i > 0 {
            let so_far = assemble(env, plan, &episodes);
            let (p, _) = train_on_dataset(&so_far, &plan.train)?;
            variance = policy_error_variance(&so_far, &p)?;
        }
        let sigma = (plan.dart_alpha * variance).sqrt();
        let bound = plan.dbar_max;
        let mut tranche = run_tranche(env, first..first + n, plan.seed, log_vf, |x, r| {
            Ok(noisy_choice(env, x, r, |g| {
                truncated_normal(g, sigma, bound)
            }))
        })?;
        episodes.append(&mut tranche);
        first += n;
    }
    Ok(assemble(env, plan, &episodes))
}

/// DAgger: the first tranche is expert-driven (with guided disturbances
/// when `vf` is given), later tranches roll out the policy trained on all
/// data so far and label every visited state with the expert action.
pub fn dagger_collect<T>(
    env: &Env,
    plan: &CollectionPlan,
    vf: Option<&ValueFunction>,
    train_fn: T,
) -> Result<Dataset, CollectError>
where
    T: Fn(&Dataset) -> Result<MlpPolicy, PolicyError>,
{
    plan.validate()?;
    if let Some(vf) = vf {
        check_vf(env, vf, plan)?;
    } else if plan.method == Method::DaggerSafegil {
        return Err(CollectError::Plan(
            "guided DAgger needs a value function".into(),
        ));
    }
    let sizes = tranche_sizes(plan.demos, plan.dagger_iterations);
    let mut episodes = match vf {
        Some(vf) if plan.method == Method::DaggerSafegil => {
            run_tranche(env, 0..sizes[0], plan.seed, Some(vf), |x, r| {
                guided_choice(env, vf, plan.dbar_max, x, r)
            })?
        }
        _ => run_tranche(env, 0..sizes[0], plan.seed, vf, |x, r| {
            Ok(expert_choice(env, x, r))
        })?,
    };
    let mut first = sizes[0];
    for &n in &sizes[1..] {
        if n == 0 {
            continue;
        }
        let learner = train_fn(&assemble(env, plan, &episodes))?;
        let mut tranche = run_tranche(env, first..first + n, plan.seed, vf, |x, r| {
            let mut c = expert_choice(env, x, r);
            c.u_applied = learner.forward(x)?;
            Ok(c)
        })?;
        episodes.append(&mut tranche);
        first += n;
    }
    Ok(assemble(env, plan, &episodes))
}

/// Dispatches on `plan.method`. Interim DAgger policies use `plan.train`.
pub fn collect(
    env: &Env,
    vf: Option<&ValueFunction>,
    plan: &CollectionPlan,
) -> Result<Dataset, CollectError> {
    let need_vf =
        || vf.ok_or_else(|| CollectError::Plan(format!("{} needs a value function", plan.method)));
    match plan.method {
        Method::Bc => collect_bc(env, plan, vf),
        Method::Safegil => collect_safegil(env, need_vf()?, plan),
        Method::Gauss | Method::Uniform => collect_noise(env, plan, vf),
        Method::Dart => dart_collect(env, plan, vf),
        Method::Dagger | Method::DaggerSafegil => {
            if plan.method == Method::DaggerSafegil {
                need_vf()?;
            }
            dagger_collect(env, plan, vf, |d| Ok(train_on_dataset(d, &plan.train)?.0))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envmodels::EnvConfig;

    fn integrator() -> Env {
        EnvConfig::integrator_default().build().unwrap()
    }

    #[test]
    fn tranche_split_front_loads_remainder() {
        assert_eq!(tranche_sizes(10, 4), vec![3, 3, 2, 2]);
        assert_eq!(tranche_sizes(5, 1), vec![5]);
        assert_eq!(tranche_sizes(2, 3), vec![1, 1, 0]);
    }

    #[test]
    fn streams_are_independent_and_reproducible() {
        let a: u64 = stream(1, 2, Stream::Start).random();
        let b: u64 = stream(1, 2, Stream::Start).random();
        let c: u64 = stream(1, 2, Stream::Expert).random();
        let d: u64 = stream(1, 3, Stream::Start).random();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
    }

    #[test]
    fn bc_labels_equal_applied_and_ids_are_contiguous() {
        let env = integrator();
        let plan = CollectionPlan::new(Method::Bc, 4, &env, 9);
        let data = collect_bc(&env, &plan, None).unwrap();
        data.validate().unwrap();
        assert!(data
            .records
            .iter()
            .all(|r| r.u_applied == r.u_expert && r.v_safe.is_none()));
        let ids: std::collections::BTreeSet<_> = data.records.iter().map(|r| r.demo).collect();
        assert_eq!(ids.len(), 4);
    }

    #[test]
    fn zero_sigma_noise_equals_bc() {
        let env = integrator();
        let bc = collect_bc(&env, &CollectionPlan::new(Method::Bc, 3, &env, 4), None).unwrap();
        let mut plan = CollectionPlan::new(Method::Gauss, 3, &env, 4);
        plan.noise_sigma = 0.0;
        assert_eq!(
            collect_noise(&env, &plan, None).unwrap().records,
            bc.records
        );
    }

    #[test]
    fn truncated_normal_respects_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..10_000 {
            assert!(truncated_normal(&mut rng, 1.0, 0.3).abs() <= 0.3);
        }
        assert_eq!(truncated_normal(&mut rng, 0.0, 0.3), 0.0);
    }
}
