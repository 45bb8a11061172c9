//! Dataset text format: arbitrary finite data survives a write/read cycle
//! bit for bit, and generated data is reproducible from its seed.

use proptest::prelude::*;

use sldi::data::{dataset_from_strings, dataset_to_strings, load_dataset, save_dataset, Dataset, ObservationSeq, Split};
use sldi::train::{DataKind, TrainConfig};

fn seq_strategy(dim: usize) -> impl Strategy<Value = ObservationSeq> {
    (1usize..8).prop_flat_map(move |n| {
        (
            prop::collection::vec(1e-6f64..10.0, n),
            prop::collection::vec(prop::collection::vec(prop::num::f64::NORMAL, dim), n),
        )
            .prop_map(|(gaps, values)| {
                let times: Vec<f64> = gaps.iter().scan(0.0, |t, g| {
                    *t += g;
                    Some(*t)
                }).collect();
                ObservationSeq::new("s", times, values, vec![("seed".into(), "1".into())]).unwrap()
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn text_round_trip_is_exact(seqs in (1usize..4).prop_flat_map(|d| prop::collection::vec(seq_strategy(d), 1..5))) {
        let seqs: Vec<ObservationSeq> = seqs
            .into_iter()
            .enumerate()
            .map(|(i, mut s)| { s.id = format!("seq{i}"); s })
            .collect();
        let splits = (0..seqs.len()).map(|i| [Split::Train, Split::Val, Split::Test][i % 3]).collect();
        let ds = Dataset::new(seqs, splits, vec![("kind".into(), "test".into())]).unwrap();
        let (header, body) = dataset_to_strings(&ds).unwrap();
        prop_assert_eq!(dataset_from_strings(&header, &body).unwrap(), ds);
    }
}

#[test]
fn generated_data_is_seed_deterministic_and_survives_files() {
    let dir = tempfile::tempdir().unwrap();
    for kind in [DataKind::Ou, DataKind::Gbm, DataKind::Sinusoid] {
        let cfg = TrainConfig { data_kind: kind, n_sequences: 12, keep_prob: 0.7, z0_mean: 1.0, ..Default::default() };
        let a = cfg.generate_data(5).unwrap();
        assert_eq!(a, cfg.generate_data(5).unwrap());
        assert_ne!(a, cfg.generate_data(6).unwrap());
        let p = dir.path().join(format!("{}.txt", kind.name()));
        save_dataset(&p, &a).unwrap();
        assert_eq!(load_dataset(&p).unwrap(), a);
        assert!(a.sequences.iter().all(|s| s.len() >= 2));
    }
    let bad = TrainConfig { data_kind: DataKind::Gbm, ..Default::default() };
    assert!(matches!(bad.generate_data(1), Err(sldi::SldiError::ConfigError(_))));
}
