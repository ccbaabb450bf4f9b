//! Writes a value function, dataset and policy to disk and reads them back,
//! confirming every round trip is bitwise.

use safegil::collect::{collect, train_on_dataset, CollectionPlan, Method};
use safegil::envmodels::EnvConfig;
use safegil::persist::{
    encode_dataset, encode_vf, load_dataset, load_policy, load_vf, save_dataset, save_policy,
    save_vf,
};
use safegil::policy::TrainConfig;
use safegil::reach::solve_env;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join(format!("safegil-formats-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    let env = EnvConfig::integrator_default().build()?;
    let vf = solve_env(&env)?;
    save_vf(&dir.join("integrator.sgvf"), &vf)?;
    let vf_back = load_vf(&dir.join("integrator.sgvf"), Some(&env))?;
    println!(
        "value function  identical={}",
        encode_vf(&vf_back) == encode_vf(&vf)
    );

    let data = collect(
        &env,
        Some(&vf),
        &CollectionPlan::new(Method::Safegil, 4, &env, 2),
    )?;
    save_dataset(&dir.join("demos.jsonl"), &data)?;
    let data_back = load_dataset(&dir.join("demos.jsonl"))?;
    println!(
        "dataset         identical={}",
        encode_dataset(&data_back) == encode_dataset(&data)
    );

    let (policy, _) = train_on_dataset(
        &data,
        &TrainConfig {
            epochs: 20,
            ..TrainConfig::default()
        },
    )?;
    save_policy(&dir.join("policy.json"), &policy)?;
    println!(
        "policy          identical={}",
        load_policy(&dir.join("policy.json"))? == policy
    );
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}
