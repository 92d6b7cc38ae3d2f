use legoqml_core::Dataset;
use legoqml_harness::config::ExperimentConfig;
use legoqml_harness::io::{read_dataset_csv, write_dataset_csv, Provenance};
use legoqml_harness::runner::stratified_split;
use proptest::prelude::*;

const BASE: &str = r#"
schema_version = 1
run_name = "p"
seed = 1
[dataset]
kind = "quantum-dot"
n = 20
[block]
kind = "pca"
dim = 2
[head]
kind = "vqc"
depth = 1
[train]
epochs = 1
batch_size = 4
"#;

fn dataset() -> impl Strategy<Value = Dataset> {
    (1usize..4, 2usize..40).prop_flat_map(|(d, n)| {
        (prop::collection::vec(prop::collection::vec(-1e6f64..1e6, d), n), prop::collection::vec(0usize..3, n))
            .prop_filter_map("rows of equal width", |(x, y)| Dataset::new(x, y).ok())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn split_partitions_and_keeps_every_class(data in dataset(), frac in 0.05f64..0.5, seed in any::<u64>()) {
        let (train, test) = stratified_split(&data, frac, seed);
        prop_assert_eq!(train.len() + test.len(), data.len());
        for c in 0..data.num_classes() {
            let total = data.labels.iter().filter(|&&l| l == c).count();
            let in_test = test.labels.iter().filter(|&&l| l == c).count();
            let in_train = train.labels.iter().filter(|&&l| l == c).count();
            prop_assert_eq!(in_test + in_train, total);
            if total >= 2 {
                prop_assert!(in_test >= 1 && in_train >= 1);
            }
        }
        // Every original row appears exactly once across the two halves.
        let mut all: Vec<_> = train.features.iter().chain(&test.features).map(|r| r.iter().map(|v| v.to_bits()).collect::<Vec<_>>()).collect();
        let mut orig: Vec<_> = data.features.iter().map(|r| r.iter().map(|v| v.to_bits()).collect::<Vec<_>>()).collect();
        all.sort();
        orig.sort();
        prop_assert_eq!(all, orig);
        prop_assert_eq!(stratified_split(&data, frac, seed), (train, test));
    }

    #[test]
    fn dataset_csv_round_trips_bit_exactly(data in dataset()) {
        let dir = tempfile::TempDir::new().unwrap();
        let p = dir.path().join("d.csv");
        write_dataset_csv(&p, &data, &Provenance::new("h", 0)).unwrap();
        let back = read_dataset_csv(&p).unwrap();
        prop_assert_eq!(back.labels, data.labels);
        for (a, b) in back.features.iter().flatten().zip(data.features.iter().flatten()) {
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn config_hash_tracks_seed_but_not_output_dir(seed in any::<u64>(), dir in "[a-z]{1,8}") {
        let mut a = ExperimentConfig::from_toml_str(BASE).unwrap();
        a.seed = seed;
        let mut b = a.clone();
        b.output_dir = Some(dir.into());
        prop_assert_eq!(a.hash(), b.hash());
        b.seed = seed.wrapping_add(1);
        prop_assert_ne!(a.hash(), b.hash());
    }
}
