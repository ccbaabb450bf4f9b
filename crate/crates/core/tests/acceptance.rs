//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails.

mod support;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use safegil::bench::{
    eval_starts, evaluate, rollout, run_experiment, Disturbance, EvalSummary, ExperimentSpec,
    ExpertController, Outcome, RolloutOptions, SafeController,
};
use safegil::collect::{collect, stream, train_on_dataset, CollectionPlan, Method, Stream};
use safegil::envmodels::{Env, EnvConfig, IntegratorModel, Model};
use safegil::gridcore::{Axis, Grid};
use safegil::persist::{
    decode_vf, encode_vf, load_dataset, load_policy, manifest_path, save_dataset, save_policy,
};
use safegil::policy::{grad_check, Samples, TrainConfig};
use safegil::reach::{solve_env, solve_finite_horizon, ValueFunction};
use safegil::report::{decode_report, encode_report, stat_at, Metric, ReportRow};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;
use support::oracles::analytic_1d_value;

type Check = Result<String, String>;

fn repo_path(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../..")
        .join(rel)
}

fn load_env(name: &str) -> Env {
    EnvConfig::load(repo_path(&format!("configs/{name}.json")))
        .expect("env config")
        .build()
        .expect("valid env")
}

fn load_spec(name: &str) -> ExperimentSpec {
    let text = std::fs::read_to_string(repo_path(&format!("configs/experiments/{name}.json")))
        .expect("experiment spec");
    serde_json::from_str(&text).expect("valid experiment spec")
}

fn ensure(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn mean_of(rows: &[ReportRow], label: &str, k: usize, metric: Metric) -> f64 {
    stat_at(rows, label, k, metric)
        .unwrap_or_else(|| panic!("no {metric:?} data for {label} at K={k}"))
        .mean
}

fn sweep(env: &Env, vf: &ValueFunction, spec: &ExperimentSpec) -> Vec<ReportRow> {
    let started = Instant::now();
    let out = run_experiment(env, Some(vf), spec, false).expect("experiment runs");
    assert!(out.failures.is_empty(), "failed cells: {:?}", out.failures);
    println!(
        "  sweep {}: {} cells in {:.0}s",
        spec.name,
        out.cells.len(),
        started.elapsed().as_secs_f64()
    );
    out.cells.iter().map(ReportRow::from).collect()
}

/// Rows of `from` under `label`, renamed to `as_label`.
fn borrow_rows(from: &[ReportRow], label: &str, k: usize, as_label: &str) -> Vec<ReportRow> {
    from.iter()
        .filter(|r| r.method == label && r.k == k)
        .map(|r| ReportRow {
            method: as_label.into(),
            ..r.clone()
        })
        .collect()
}

fn without(mut spec: ExperimentSpec, labels: &[&str]) -> ExperimentSpec {
    spec.methods.retain(|m| !labels.contains(&m.label.as_str()));
    spec
}

fn analytic_solver() -> Check {
    let started = Instant::now();
    let grid = Grid::new(vec![Axis::new(0.0, 4.0, 201)]).unwrap();
    let h = grid.spacing()[0];
    let mut worst: f64 = 0.0;
    for &(ubar, dbar, horizon) in &[
        (1.0, 0.5, 1.0),
        (1.0, 1.0, 1.0),
        (1.0, 1.5, 1.0),
        (0.5, 1.5, 0.5),
    ] {
        let model = Model::Integrator(IntegratorModel { u_max: ubar });
        let (v, _) = solve_finite_horizon(&grid, &model, |x| x[0], dbar, horizon, 0.5).unwrap();
        // nodes whose domain of dependence stays inside the grid
        let reach = (dbar - ubar).max(0.0) * horizon;
        for i in 0..grid.len() {
            let x = grid.node_coords(i)[0];
            if x - reach < 2.0 * h || x > 4.0 - 2.0 * h {
                continue;
            }
            worst = worst.max((v.values()[i] - analytic_1d_value(x, ubar, dbar, horizon)).abs());
        }
    }
    let secs = started.elapsed().as_secs_f64();
    ensure(
        worst <= 2.0 * h && secs < 1.0,
        format!("max error {worst:.2e} vs 2dx {:.2e}, {secs:.2}s", 2.0 * h),
    )
}

fn solver_invariants(env: &Env, vf: &ValueFunction, solve_secs: f64) -> Check {
    let grid = vf.grid();
    let model = env.model();
    let mut above_target = 0usize;
    let mut non_monotone = 0usize;
    for node in 0..grid.len() {
        let l = env.target(&grid.node_coords(node));
        above_target += vf.slices().iter().filter(|s| s.values()[node] > l).count();
        non_monotone += vf
            .slices()
            .windows(2)
            .filter(|w| w[1].values()[node] > w[0].values()[node])
            .count();
    }

    const DT: f64 = 0.05;
    let dx = grid.min_spacing();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    let mut probed = 0;
    while probed < 500 {
        let multi: Vec<usize> = grid
            .axes()
            .iter()
            .map(|a| {
                if a.periodic {
                    rng.random_range(0..a.n)
                } else {
                    rng.random_range(2..a.n - 2)
                }
            })
            .collect();
        let node = grid.index_of(&multi);
        let x = grid.node_coords(node);
        let level = rng.random_range(0..vf.dbar_levels().len());
        let dbar = vf.dbar_levels()[level];
        let v = vf.slices()[level].values()[node];
        if env.target(&x) <= v + dx {
            continue;
        }
        let b = model.control_bound();
        let backup = [-b, 0.0, b]
            .iter()
            .map(|&u| {
                [-dbar, 0.0, dbar]
                    .iter()
                    .map(|&d| {
                        let f = model.flow(&x, u, d).unwrap();
                        let next: Vec<f64> = x
                            .iter()
                            .zip(f.iter())
                            .map(|(xi, fi)| xi + DT * fi)
                            .collect();
                        vf.query_value(&next, dbar).unwrap()
                    })
                    .fold(f64::INFINITY, f64::min)
            })
            .fold(f64::NEG_INFINITY, f64::max);
        worst = worst.max((v - backup).abs());
        probed += 1;
    }
    const C: f64 = 1.0;
    ensure(
        above_target == 0 && non_monotone == 0 && worst <= C * dx && solve_secs <= 120.0,
        format!(
            "solve {solve_secs:.1}s, V>l at {above_target}, non-monotone at {non_monotone}, \
             max Bellman residual {worst:.4} vs {:.4}",
            C * dx
        ),
    )
}

fn random_state(env: &Env, rng: &mut ChaCha8Rng) -> Vec<f64> {
    env.grid()
        .axes()
        .iter()
        .map(|a| {
            let pad = if a.periodic {
                0.0
            } else {
                0.05 * (a.hi - a.lo)
            };
            rng.random_range(a.lo + pad..a.hi - pad)
        })
        .collect()
}

fn disturbance_descent(env: &Env, vf: &ValueFunction) -> Check {
    let eps = 2.0 * vf.grid().min_spacing();
    let dt = env.config().control_period;
    let b = env.model().control_bound();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut held = 0;
    const PROBES: usize = 1000;
    for _ in 0..PROBES {
        let x = random_state(env, &mut rng);
        let dbar = rng.random_range(0.0..=vf.dbar_max());
        let u = rng.random_range(-b..=b);
        let d = if dbar > 0.0 {
            rng.random_range(-dbar..=dbar)
        } else {
            0.0
        };
        let d_star = vf.query_disturbance(&x, dbar).unwrap();
        let after = |d: f64| {
            let next = env.model().step_rk4(&x, u, d, dt).unwrap();
            vf.query_value_clamped(&next, dbar).unwrap().0
        };
        if after(d_star) <= after(d) + eps {
            held += 1;
        }
    }
    let frac = held as f64 / PROBES as f64;
    ensure(
        frac >= 0.99,
        format!("descent held on {held}/{PROBES} probes"),
    )
}

fn safe_control_soundness(env: &Env, vf: &ValueFunction) -> Check {
    let dbar = vf.dbar_max();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut starts = Vec::new();
    while starts.len() < 100 {
        let x = random_state(env, &mut rng);
        if vf.query_value(&x, dbar).unwrap() >= 0.3 {
            starts.push(x);
        }
    }
    let mut entries = 0;
    let mut closest = f64::INFINITY;
    for x0 in &starts {
        let r = rollout(
            env,
            &mut SafeController { vf, dbar },
            x0,
            RolloutOptions {
                disturbance: Some(Disturbance::Adversarial { vf, dbar }),
                timeout: Some(10.0),
                record: false,
            },
        )
        .unwrap();
        closest = closest.min(r.min_value);
        if r.outcome == Outcome::Collision || r.min_value <= 0.0 {
            entries += 1;
        }
    }
    ensure(
        entries == 0,
        format!("{entries} entries into L, closest approach {closest:.3}"),
    )
}

fn expert_runs(env: &Env, seed: u64) -> EvalSummary {
    let starts = eval_starts(env, None, 0.0, 100, seed).unwrap();
    let results = evaluate(env, &starts, |i| {
        ExpertController::new(env, stream(seed, i as u64, Stream::Expert))
    })
    .unwrap();
    EvalSummary::from_results(&results, 0.0)
}

fn expert_competence(unicycle: &Env, taxi: &Env) -> Check {
    let mpc = expert_runs(unicycle, 500);
    let pid = expert_runs(taxi, 501);
    let goal_rate = mpc.goals as f64 / mpc.episodes as f64;
    ensure(
        goal_rate >= 0.98 && mpc.failures == 0 && pid.failures == 0,
        format!(
            "MPC goal rate {goal_rate:.2} with {} collisions, PID {} excursions",
            mpc.failures, pid.failures
        ),
    )
}

fn headline(rows: &[ReportRow], ks: &[usize]) -> Check {
    let gaps: Vec<(usize, f64)> = ks
        .iter()
        .map(|&k| {
            let bc = mean_of(rows, "BC", k, Metric::FailureRate);
            let sg = mean_of(rows, "SAFE-GIL", k, Metric::FailureRate);
            println!("  K={k:>2}: BC {bc:.3}  SAFE-GIL {sg:.3}");
            (k, bc - sg)
        })
        .collect();
    let gap_at = |k: usize| gaps.iter().find(|g| g.0 == k).unwrap().1;
    let smallest = *ks.iter().min().unwrap();
    let largest_at_smallest = gaps.iter().all(|g| g.1 <= gap_at(smallest));
    ensure(
        gap_at(5) > 0.0 && gap_at(10) > 0.0 && largest_at_smallest,
        format!(
            "gaps (BC - SAFE-GIL) {}",
            gaps.iter()
                .map(|(k, g)| format!("K={k}:{g:+.3}"))
                .collect::<Vec<_>>()
                .join(" ")
        ),
    )
}

fn cost_tradeoff(rows: &[ReportRow], ks: &[usize]) -> Check {
    let mut ok = true;
    let mut parts = Vec::new();
    for &k in ks {
        let bc = mean_of(rows, "BC", k, Metric::SafeCost);
        let sg = mean_of(rows, "SAFE-GIL", k, Metric::SafeCost);
        ok &= sg >= bc;
        parts.push(format!("K={k}: {sg:.1} vs {bc:.1}"));
    }
    ensure(ok, format!("SAFE-GIL vs BC safe cost {}", parts.join(", ")))
}

fn noise_baselines(rows: &[ReportRow]) -> Check {
    let sg = mean_of(rows, "SAFE-GIL", 10, Metric::FailureRate);
    let mut ok = true;
    let mut parts = vec![format!("SAFE-GIL {sg:.3}")];
    for label in ["Gaussian Noise BC", "Uniform Noise BC", "DART"] {
        let other = mean_of(rows, label, 10, Metric::FailureRate);
        ok &= sg < other;
        parts.push(format!("{label} {other:.3}"));
    }
    ensure(ok, parts.join(", "))
}

fn dagger_combination(rows: &[ReportRow]) -> Check {
    let fr = |l: &str| mean_of(rows, l, 10, Metric::FailureRate);
    let cost = |l: &str| mean_of(rows, l, 10, Metric::SafeCost);
    let (combo, dagger) = (fr("SAFE-GIL+DAgger"), fr("DAgger"));
    let (combo_cost, sg_cost) = (cost("SAFE-GIL+DAgger"), cost("SAFE-GIL"));
    ensure(
        combo < dagger && combo_cost < sg_cost,
        format!(
            "failure {combo:.3} vs DAgger {dagger:.3}; safe cost {combo_cost:.1} vs SAFE-GIL {sg_cost:.1}"
        ),
    )
}

fn dbar_direction(rows: &[ReportRow]) -> Check {
    let labels = ["dbar=0", "dbar=0.2", "dbar=0.4", "dbar=0.6"];
    let fr: Vec<f64> = labels
        .iter()
        .map(|l| mean_of(rows, l, 10, Metric::FailureRate))
        .collect();
    let cost: Vec<f64> = labels
        .iter()
        .map(|l| mean_of(rows, l, 10, Metric::SafeCost))
        .collect();
    let table = labels
        .iter()
        .zip(fr.iter().zip(&cost))
        .map(|(l, (f, c))| format!("{l}: {f:.3}/{c:.1}"))
        .collect::<Vec<_>>()
        .join(", ");
    let monotone = fr.windows(2).all(|w| w[1] <= w[0]) && cost.windows(2).all(|w| w[1] >= w[0]);
    ensure(monotone, format!("failure/cost {table}"))
}

fn taxi_results(rows: &[ReportRow], low_k: usize, hist_k: usize) -> Check {
    let bc = mean_of(rows, "BC", low_k, Metric::FailureRate);
    let sg = mean_of(rows, "SAFE-GIL", low_k, Metric::FailureRate);
    let v_bc = mean_of(rows, "BC", hist_k, Metric::DatasetValueMean);
    let v_sg = mean_of(rows, "SAFE-GIL", hist_k, Metric::DatasetValueMean);
    ensure(
        sg < bc && v_sg < v_bc,
        format!(
            "excursion at K={low_k}: SAFE-GIL {sg:.3} vs BC {bc:.3}; dataset value mean at K={hist_k}: {v_sg:.3} vs {v_bc:.3}"
        ),
    )
}

fn taxi_filtering(rows: &[ReportRow]) -> Check {
    let filtered: Vec<&ReportRow> = rows.iter().filter(|r| r.method == "BC+Filter").collect();
    let excursions: usize = filtered.iter().map(|r| r.failures).sum();
    let mean_px = |label: &str| {
        let v: Vec<f64> = rows
            .iter()
            .filter(|r| r.method == label)
            .filter_map(|r| Metric::FinalAbsPx.of(r))
            .collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    let (sg, bcf) = (mean_px("SAFE-GIL"), mean_px("BC+Filter"));
    ensure(
        excursions == 0 && !filtered.is_empty() && sg < bcf,
        format!(
            "BC+Filter excursions {excursions}; final |px| SAFE-GIL {sg:.3} vs BC+Filter {bcf:.3}"
        ),
    )
}

fn cli(args: &[&str], dir: &Path) {
    let out = Command::new(env!("CARGO_BIN_EXE_safegil"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs");
    assert!(
        out.status.success(),
        "safegil {args:?} failed with {}: {}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
}

fn pipeline(dir: &Path) -> Vec<(String, Vec<u8>)> {
    std::fs::copy(repo_path("configs/integrator.json"), dir.join("env.json")).unwrap();
    cli(&["solve", "--env", "env.json", "--out", "vf.sgvf"], dir);
    cli(
        &[
            "collect",
            "--method",
            "safegil",
            "--env",
            "env.json",
            "--vf",
            "vf.sgvf",
            "-K",
            "4",
            "--seed",
            "3",
            "--out",
            "demos.jsonl",
        ],
        dir,
    );
    cli(
        &[
            "train",
            "--data",
            "demos.jsonl",
            "--seed",
            "3",
            "--out",
            "policy.json",
        ],
        dir,
    );
    cli(
        &[
            "eval",
            "--policy",
            "policy.json",
            "--env",
            "env.json",
            "--vf",
            "vf.sgvf",
            "--filter",
            "-n",
            "20",
            "--seed",
            "3",
            "--out",
            "eval.json",
        ],
        dir,
    );
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                std::fs::read(&p).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

fn hygiene(unicycle_vf: &ValueFunction, main_rows: &[ReportRow]) -> Check {
    let env = load_env("integrator");
    let vf = solve_env(&env).unwrap();
    let data = collect(
        &env,
        Some(&vf),
        &CollectionPlan::new(Method::Safegil, 6, &env, 9),
    )
    .unwrap();
    let (policy, _) = train_on_dataset(
        &data,
        &TrainConfig {
            epochs: 30,
            ..TrainConfig::default()
        },
    )
    .unwrap();
    let states = data.states();
    let labels = data.labels();
    let grad_err = grad_check(
        &policy,
        Samples {
            states: &states,
            labels: &labels,
        },
        500,
        0,
    )
    .unwrap();

    let vf_bytes = encode_vf(unicycle_vf);
    let vf_ok = encode_vf(&decode_vf(&vf_bytes).unwrap()) == vf_bytes;
    let scratch = tempfile::tempdir().unwrap();
    let file_round_trip =
        |name: &str, save: &dyn Fn(&Path), reload_and_save: &dyn Fn(&Path, &Path)| {
            let (first, second) = (
                scratch.path().join(format!("a-{name}")),
                scratch.path().join(format!("b-{name}")),
            );
            save(&first);
            reload_and_save(&first, &second);
            std::fs::read(&first).unwrap() == std::fs::read(&second).unwrap()
        };
    let data_ok = file_round_trip(
        "demos.jsonl",
        &|p| save_dataset(p, &data).unwrap(),
        &|from, to| save_dataset(to, &load_dataset(from).unwrap()).unwrap(),
    ) && std::fs::read(manifest_path(&scratch.path().join("a-demos.jsonl"))).unwrap()
        == std::fs::read(manifest_path(&scratch.path().join("b-demos.jsonl"))).unwrap();
    let policy_ok = file_round_trip(
        "policy.json",
        &|p| save_policy(p, &policy).unwrap(),
        &|from, to| save_policy(to, &load_policy(from).unwrap()).unwrap(),
    );
    let report_bytes = encode_report(main_rows).unwrap();
    let report_ok = encode_report(&decode_report(&report_bytes).unwrap()).unwrap() == report_bytes;

    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (run_a, run_b) = (pipeline(a.path()), pipeline(b.path()));
    let identical = run_a == run_b && run_a.len() >= 6;
    ensure(
        grad_err < 1e-4 && vf_ok && data_ok && policy_ok && report_ok && identical,
        format!(
            "grad_check {grad_err:.2e}; round trips vf={vf_ok} dataset={data_ok} policy={policy_ok} report={report_ok}; \
             {} CLI artifacts identical={identical}",
            run_a.len()
        ),
    )
}

struct Verdicts(Vec<(u32, &'static str, Check)>);

impl Verdicts {
    fn run(&mut self, id: u32, name: &'static str, f: impl FnOnce() -> Check) {
        let started = Instant::now();
        let check = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into());
            Err(msg)
        });
        let (tag, detail) = match &check {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        println!(
            "criterion {id:>2} {name}: {tag} ({detail}) [{:.0}s]",
            started.elapsed().as_secs_f64()
        );
        self.0.push((id, name, check));
    }
}

fn main() {
    let mut v = Verdicts(Vec::new());
    v.run(1, "analytic 1D solver", analytic_solver);

    let unicycle = load_env("unicycle");
    let started = Instant::now();
    let uvf = solve_env(&unicycle).expect("unicycle solve");
    let solve_secs = started.elapsed().as_secs_f64();
    v.run(2, "HJI-VI invariants", || {
        solver_invariants(&unicycle, &uvf, solve_secs)
    });
    v.run(3, "disturbance optimality", || {
        disturbance_descent(&unicycle, &uvf)
    });
    v.run(4, "safe-control soundness", || {
        safe_control_soundness(&unicycle, &uvf)
    });

    let taxi = load_env("taxi");
    v.run(5, "expert competence", || {
        expert_competence(&unicycle, &taxi)
    });

    let main_spec = load_spec("main");
    let ks = main_spec.k_values.clone();
    let mut main_rows = Vec::new();
    v.run(6, "headline ordering", || {
        main_rows = sweep(&unicycle, &uvf, &main_spec);
        headline(&main_rows, &ks)
    });
    v.run(7, "performance trade-off", || {
        cost_tradeoff(&main_rows, &ks)
    });

    // SAFE-GIL at K=10 and BC at K=10 are shared with the main sweep
    v.run(8, "adversarial vs random noise", || {
        let mut rows = sweep(&unicycle, &uvf, &without(load_spec("noise"), &["SAFE-GIL"]));
        rows.extend(borrow_rows(&main_rows, "SAFE-GIL", 10, "SAFE-GIL"));
        noise_baselines(&rows)
    });
    v.run(9, "DAgger combination", || {
        let mut rows = sweep(
            &unicycle,
            &uvf,
            &without(load_spec("dagger"), &["SAFE-GIL"]),
        );
        rows.extend(borrow_rows(&main_rows, "SAFE-GIL", 10, "SAFE-GIL"));
        dagger_combination(&rows)
    });

    let tvf = solve_env(&taxi).expect("taxi solve");
    let mut taxi_rows = Vec::new();
    v.run(10, "taxi excursions and dataset values", || {
        taxi_rows = sweep(&taxi, &tvf, &load_spec("taxi"));
        taxi_results(&taxi_rows, 2, 10)
    });
    v.run(11, "taxi filtering", || taxi_filtering(&taxi_rows));

    v.run(12, "disturbance-bound direction", || {
        let mut rows = sweep(
            &unicycle,
            &uvf,
            &without(load_spec("dbar"), &["dbar=0", "dbar=0.6"]),
        );
        rows.extend(borrow_rows(&main_rows, "BC", 10, "dbar=0"));
        rows.extend(borrow_rows(&main_rows, "SAFE-GIL", 10, "dbar=0.6"));
        dbar_direction(&rows)
    });
    v.run(13, "numerical hygiene", || hygiene(&uvf, &main_rows));

    let failed: Vec<u32> = v.0.iter().filter(|c| c.2.is_err()).map(|c| c.0).collect();
    println!(
        "{} of {} criteria passed",
        v.0.len() - failed.len(),
        v.0.len()
    );
    if !failed.is_empty() {
        println!("failed: {failed:?}");
        std::process::exit(1);
    }
}
