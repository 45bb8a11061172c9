//! Evaluates the training objective of a freshly initialized model on a
//! batch of OU sequences and prints each term, for both posterior
//! parameterizations.
//!
//! Usage: cargo run --release --example elbo_breakdown [seed]

use sldi::data::Split;
use sldi::train::{init_model, TrainConfig};
use sldi::variational::{elbo, ElboConfig, PosteriorMode};

fn main() -> sldi::Result<()> {
    let seed: u64 = std::env::args().nth(1).map_or(0, |s| s.parse().expect("seed"));
    for posterior in [PosteriorMode::Shared, PosteriorMode::Separate] {
        let cfg = TrainConfig { seed, posterior, n_sequences: 16, ..Default::default() };
        let data = cfg.generate_data(seed)?;
        let (model, store) = init_model(&cfg)?;
        let seqs = data.split(Split::Train);
        let ec = ElboConfig { dt: cfg.dt, scheme: cfg.scheme, lambda: cfg.lambda, beta: 0.0, n_samples: 4, ..Default::default() };
        let b = elbo(&model, store.flat(), &seqs, &ec, seed)?;
        println!(
            "{:>8}: total {:10.4} recon {:10.4} kl_z0 {:8.4} kl_path {:8.4} drift_energy {:8.4}",
            posterior.name(),
            b.total,
            b.recon,
            b.kl_z0,
            b.kl_path,
            b.r_path
        );
    }
    Ok(())
}
