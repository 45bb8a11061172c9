//! Generates an irregularly sampled OU dataset, writes it to a directory,
//! reads it back and prints a summary of each split.
//!
//! Usage: cargo run --release --example generate_data [out_dir]

use sldi::data::{load_dataset, save_dataset, Split};
use sldi::train::{DataKind, TrainConfig};

fn main() -> sldi::Result<()> {
    let dir = std::env::args().nth(1).unwrap_or_else(|| "out".into());
    std::fs::create_dir_all(&dir)?;
    let cfg = TrainConfig { data_kind: DataKind::Ou, n_sequences: 50, keep_prob: 0.6, ..Default::default() };
    let ds = cfg.generate_data(cfg.seed)?;
    let path = std::path::Path::new(&dir).join("dataset.txt");
    save_dataset(&path, &ds)?;
    let back = load_dataset(&path)?;
    assert_eq!(back, ds);
    println!("wrote {} sequences to {}", ds.len(), path.display());
    for split in [Split::Train, Split::Val, Split::Test] {
        let seqs = back.split(split);
        let points: usize = seqs.iter().map(|s| s.len()).sum();
        println!("{:>5}: {} sequences, {} observations", split.name(), seqs.len(), points);
    }
    Ok(())
}
