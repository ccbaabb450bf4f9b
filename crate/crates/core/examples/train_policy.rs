//! Trains an MLP imitation policy on SAFE-GIL taxiing data, checks its
//! backpropagation against finite differences, and prints the loss curve.

use safegil::collect::{collect, train_on_dataset, CollectionPlan, Method};
use safegil::envmodels::EnvConfig;
use safegil::policy::{grad_check, Samples, TrainConfig};
use safegil::reach::solve_env;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let env = EnvConfig::taxi_default().build()?;
    let vf = solve_env(&env)?;
    let data = collect(
        &env,
        Some(&vf),
        &CollectionPlan::new(Method::Safegil, 5, &env, 1),
    )?;
    let cfg = TrainConfig {
        epochs: 200,
        seed: 1,
        ..TrainConfig::default()
    };
    let (policy, curve) = train_on_dataset(&data, &cfg)?;
    for (epoch, loss) in curve.iter().enumerate().step_by(25) {
        println!("epoch {epoch:>3} loss {loss:.5}");
    }
    let states = data.states();
    let labels = data.labels();
    let n = states.len().min(64);
    let err = grad_check(
        &policy,
        Samples {
            states: &states[..n],
            labels: &labels[..n],
        },
        200,
        0,
    )?;
    println!(
        "parameters={} grad_check max relative error={err:.2e}",
        policy.param_count()
    );
    Ok(())
}
