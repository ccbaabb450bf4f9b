//! Wraps a weak behavior-cloned taxi policy in the least-restrictive filter
//! and reports how often the filter takes over.

use safegil::bench::{eval_starts, evaluate, EvalSummary, Filtered};
use safegil::collect::{collect, train_on_dataset, CollectionPlan, Method};
use safegil::envmodels::EnvConfig;
use safegil::policy::TrainConfig;
use safegil::reach::solve_env;
use safegil::shield::FilterConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let env = EnvConfig::taxi_default().build()?;
    let vf = solve_env(&env)?;
    let margin = env.config().eval_start_margin;
    let starts = eval_starts(&env, Some(&vf), margin, 32, 3)?;
    let data = collect(
        &env,
        Some(&vf),
        &CollectionPlan::new(Method::Bc, 2, &env, 3),
    )?;
    let (policy, _) = train_on_dataset(
        &data,
        &TrainConfig {
            epochs: 100,
            ..TrainConfig::default()
        },
    )?;

    let plain = EvalSummary::from_results(&evaluate(&env, &starts, |_| &policy)?, margin);
    let filtered = EvalSummary::from_results(
        &evaluate(&env, &starts, |_| {
            Filtered::new(&policy, &vf, FilterConfig::default())
        })?,
        margin,
    );
    println!("bc         excursion rate={:.3}", plain.failure_rate);
    println!(
        "bc+filter  excursion rate={:.3} engagement={:.3} final |px|={}",
        filtered.failure_rate,
        filtered.engagement_rate,
        filtered
            .final_abs_px
            .map_or("n/a".into(), |p| format!("{p:.3}"))
    );
    Ok(())
}
