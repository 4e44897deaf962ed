use deepknn::embedstore::{
    load_dataset, read_dataset, save_dataset, synth_gaussian, write_dataset, EmbeddingSet, LabeledDataset,
};
use deepknn::ClassId;
use proptest::prelude::*;

fn dataset_strategy() -> impl Strategy<Value = LabeledDataset<f32>> {
    (1usize..20, 1usize..6, 2usize..5, any::<bool>()).prop_flat_map(|(n, d, c, with_truth)| {
        let labels = || proptest::collection::vec(0..c as ClassId, n);
        (
            proptest::collection::vec(-1e6f32..1e6, n * d),
            labels(),
            labels(),
            labels(),
        )
            .prop_map(move |(data, noisy, current, truth)| {
                let emb = EmbeddingSet::new(n, d, data).unwrap();
                LabeledDataset::new(emb, with_truth.then_some(truth), noisy, current, c).unwrap()
            })
    })
}

proptest! {
    #[test]
    fn save_then_load_is_identity(ds in dataset_strategy()) {
        let mut bytes = Vec::new();
        write_dataset(&ds, &mut bytes).unwrap();
        let back: LabeledDataset<f32> = read_dataset(&bytes).unwrap();
        prop_assert_eq!(&back, &ds);
        let mut again = Vec::new();
        write_dataset(&back, &mut again).unwrap();
        prop_assert_eq!(again, bytes);
    }

    #[test]
    fn normalize_preserves_cosine_and_is_idempotent(
        rows in proptest::collection::vec(proptest::collection::vec(0.1f64..10.0, 4), 2..8)
    ) {
        let set = EmbeddingSet::from_rows(&rows).unwrap();
        let unit = set.normalize_rows().unwrap();
        let cos = |a: &[f64], b: &[f64]| {
            let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
            dot / (na * nb)
        };
        for i in 0..rows.len() {
            for j in 0..rows.len() {
                prop_assert!((cos(set.row(i), set.row(j)) - cos(unit.row(i), unit.row(j))).abs() < 1e-12);
            }
        }
        let twice = unit.normalize_rows().unwrap();
        for (a, b) in unit.as_slice().iter().zip(twice.as_slice()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn file_round_trip_and_byte_identical_saves() {
    let dir = tempfile::tempdir().unwrap();
    let ds = synth_gaussian::<f32>(3, 7, 5, 4.0, 11).unwrap();
    let (a, b) = (dir.path().join("a.emb"), dir.path().join("b.emb"));
    save_dataset(&ds, &a).unwrap();
    save_dataset(&ds, &b).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let back: LabeledDataset<f32> = load_dataset(&a).unwrap();
    assert_eq!(back, ds);

    let no_truth = ds.with_true_labels(None).unwrap();
    save_dataset(&no_truth, &a).unwrap();
    let back: LabeledDataset<f32> = load_dataset(&a).unwrap();
    assert!(back.true_labels().is_none());
}

#[test]
fn missing_file_is_io_error() {
    let err = load_dataset::<f32>("/nonexistent/path.emb").unwrap_err();
    assert!(matches!(err, deepknn::Error::Io { .. }));
}

/// Brute-force all-pairs check that each point's nearest other point shares its class.
#[test]
fn synth_clusters_are_nearest_neighbor_consistent() {
    let ds = synth_gaussian::<f64>(10, 100, 32, 8.0, 1).unwrap();
    let emb = ds.embeddings();
    let labels = ds.true_labels().unwrap();
    let n = ds.len();
    let mut consistent = 0;
    for i in 0..n {
        let mut best = (f64::INFINITY, usize::MAX);
        for j in 0..n {
            if i == j {
                continue;
            }
            let d: f64 = emb.row(i).iter().zip(emb.row(j)).map(|(a, b)| (a - b) * (a - b)).sum();
            if d < best.0 {
                best = (d, j);
            }
        }
        if labels[best.1] == labels[i] {
            consistent += 1;
        }
    }
    let frac = consistent as f64 / n as f64;
    assert!(frac >= 0.99, "1-NN self-consistency {frac}");
}

#[test]
fn synth_centers_are_separated() {
    let ds = synth_gaussian::<f64>(6, 400, 3, 10.0, 4).unwrap();
    let labels = ds.true_labels().unwrap();
    let mut means = vec![vec![0.0; 3]; 6];
    for (row, &c) in ds.embeddings().rows().zip(labels) {
        for (m, v) in means[c as usize].iter_mut().zip(row) {
            *m += v / 400.0;
        }
    }
    for i in 0..6 {
        for j in 0..i {
            let d: f64 = means[i].iter().zip(&means[j]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            // sample means wobble by ~0.05 around the true centers
            assert!(d > 9.5, "classes {i},{j} at {d}");
        }
    }
}
