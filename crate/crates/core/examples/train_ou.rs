//! Trains a one-dimensional latent SDE on Ornstein-Uhlenbeck data and
//! reports the validation objective and predictive coverage before and
//! after training.
//!
//! Usage: cargo run --release --example train_ou [seed] [steps]

use sldi::train::run::eval_config;
use sldi::train::{evaluate, init_model, train, TrainConfig};

fn config(seed: u64, steps: Option<usize>) -> sldi::Result<TrainConfig> {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/configs/ou_1d.cfg");
    let mut cfg = TrainConfig::load(std::path::Path::new(path))?;
    cfg.seed = seed;
    if let Some(s) = steps {
        cfg.steps = s;
    }
    Ok(cfg)
}

fn main() -> sldi::Result<()> {
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().map_or(0, |s| s.parse().expect("seed"));
    let steps = args.next().map(|s| s.parse().expect("steps"));
    let cfg = config(seed, steps)?;
    let data = cfg.generate_data(seed)?;
    let val = data.split(sldi::data::Split::Val);
    let (model, init) = init_model(&cfg)?;
    let before = evaluate(&model, init.flat(), &val, &eval_config(&cfg))?;
    let out = train(&cfg, &data, None)?;
    let after = evaluate(&out.model, out.store.flat(), &val, &eval_config(&cfg))?;
    println!("before: {}", before.to_text().trim_end());
    println!("after:  {}", after.to_text().trim_end());
    for r in &out.records {
        println!("step {:5} objective {:10.3}", r.step, r.breakdown.total);
    }
    Ok(())
}
