//! Drives the taxi with the safety-maximizing control while the value
//! function's worst-case disturbance pushes it toward the runway edge.

use safegil::bench::{rollout, Disturbance, Outcome, RolloutOptions, SafeController};
use safegil::envmodels::EnvConfig;
use safegil::reach::solve_env;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let env = EnvConfig::taxi_default().build()?;
    let vf = solve_env(&env)?;
    let dbar = vf.dbar_max();
    for px in [-8.0, -4.0, 0.0, 4.0, 8.0] {
        let x0 = [px, 0.0, 0.2];
        let result = rollout(
            &env,
            &mut SafeController { vf: &vf, dbar },
            &x0,
            RolloutOptions {
                disturbance: Some(Disturbance::Adversarial { vf: &vf, dbar }),
                ..Default::default()
            },
        )?;
        println!(
            "px0={px:>5.1} V={:.3} outcome={:?} closest approach={:.3} safe={}",
            vf.query_value(&x0, dbar)?,
            result.outcome,
            result.min_value,
            result.outcome != Outcome::Collision
        );
    }
    Ok(())
}
