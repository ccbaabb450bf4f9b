//! Solves the unicycle safety value function on the default 101^3 grid and
//! prints the solve report plus the BRT volume at each disturbance level.

use safegil::envmodels::EnvConfig;
use safegil::reach::solve_env;
use std::time::Instant;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let env = EnvConfig::unicycle_default().build()?;
    let started = Instant::now();
    let vf = solve_env(&env)?;
    let report = &vf.metadata().report;
    println!(
        "converged={} horizon={:.2}s steps={} dt={:.4} wall={:.1}s",
        report.converged,
        report.horizon,
        report.steps,
        report.dt,
        started.elapsed().as_secs_f64()
    );
    for (level, slice) in vf.dbar_levels().iter().zip(vf.slices()) {
        let inside = slice.values().iter().filter(|v| **v <= 0.0).count();
        println!(
            "dbar={level:.2} brt_fraction={:.3}",
            inside as f64 / slice.values().len() as f64
        );
    }
    Ok(())
}
