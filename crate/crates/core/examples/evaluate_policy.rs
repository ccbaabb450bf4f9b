//! Evaluates the scripted expert and a behavior-cloned policy on the same
//! taxiing starts.

use safegil::bench::{eval_starts, evaluate, EvalSummary, ExpertController};
use safegil::collect::{collect, stream, train_on_dataset, CollectionPlan, Method, Stream};
use safegil::envmodels::EnvConfig;
use safegil::policy::TrainConfig;
use safegil::reach::solve_env;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let env = EnvConfig::taxi_default().build()?;
    let vf = solve_env(&env)?;
    let margin = env.config().eval_start_margin;
    let starts = eval_starts(&env, Some(&vf), margin, 32, 0)?;

    let expert = evaluate(&env, &starts, |i| {
        ExpertController::new(&env, stream(0, i as u64, Stream::Expert))
    })?;
    let data = collect(
        &env,
        Some(&vf),
        &CollectionPlan::new(Method::Bc, 5, &env, 0),
    )?;
    let (policy, _) = train_on_dataset(&data, &TrainConfig::default())?;
    let learned = evaluate(&env, &starts, |_| &policy)?;

    for (name, results) in [("expert", &expert), ("bc", &learned)] {
        let s = EvalSummary::from_results(results, margin);
        println!(
            "{name:<7} excursion rate={:.3} goals={}/{} msd centerline={:.3}",
            s.failure_rate, s.goals, s.episodes, s.msd_centerline
        );
    }
    Ok(())
}
