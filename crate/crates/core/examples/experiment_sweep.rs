//! Runs a small method x K x seed sweep on the taxi task and writes the
//! report CSV and SVG curves to the directory given as the first argument
//! (default `sweep-out`).

use safegil::bench::{run_experiment, ExperimentSpec, MethodSpec};
use safegil::collect::Method;
use safegil::envmodels::EnvConfig;
use safegil::reach::solve_env;
use safegil::report::{plot_svg, write_report, Metric, ReportRow};
use std::path::PathBuf;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = PathBuf::from(
        std::env::args()
            .nth(1)
            .unwrap_or_else(|| "sweep-out".into()),
    );
    std::fs::create_dir_all(&out)?;
    let env = EnvConfig::taxi_default().build()?;
    let vf = solve_env(&env)?;
    let spec = ExperimentSpec {
        name: "taxi-small".into(),
        env: None,
        vf: None,
        methods: vec![
            MethodSpec::new("BC", Method::Bc),
            MethodSpec::new("SAFE-GIL", Method::Safegil),
            MethodSpec::new("BC+Filter", Method::Bc).filtered(),
        ],
        k_values: vec![2, 5],
        seeds: vec![0, 1],
        eval_starts: 16,
        train: Default::default(),
        filter: Default::default(),
        dart_iterations: None,
        dagger_iterations: None,
    };
    let result = run_experiment(&env, Some(&vf), &spec, false)?;
    let rows: Vec<ReportRow> = result.cells.iter().map(ReportRow::from).collect();
    write_report(&out.join("taxi-small.csv"), &rows)?;
    std::fs::write(
        out.join("taxi-small-failure.svg"),
        plot_svg(
            &rows,
            Metric::FailureRate,
            "excursion rate vs demonstrations",
        )?,
    )?;
    for row in &rows {
        println!(
            "{:<10} K={} seed={} excursion rate={:.3}",
            row.method, row.k, row.seed, row.failure_rate
        );
    }
    println!("wrote {}", out.display());
    Ok(())
}
