//! Collects taxiing demonstrations with and without adversarial guidance
//! and compares where each dataset sits in the safety value landscape.

use safegil::bench::dataset_value_histogram;
use safegil::collect::{collect, CollectionPlan, Method};
use safegil::envmodels::EnvConfig;
use safegil::reach::solve_env;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let env = EnvConfig::taxi_default().build()?;
    let vf = solve_env(&env)?;
    for method in [Method::Bc, Method::Safegil] {
        let plan = CollectionPlan::new(method, 10, &env, 7);
        let data = collect(&env, Some(&vf), &plan)?;
        let hist = dataset_value_histogram(&data, &vf, 10)?;
        println!(
            "{:<8} records={:>5} failed_demos={} value mean={:.3} median={:.3} p10={:.3}",
            method.tag(),
            data.len(),
            data.manifest.failed_demos,
            hist.mean,
            hist.median,
            hist.p10
        );
    }
    Ok(())
}
