use deepknn::embedstore::{synth_gaussian, EmbeddingSet, LabelView};
use deepknn::knn::{
    correct_iterknn, correct_selknn, knn_query, predict_deep_knn, select_reference, vote, vote_hard, vote_soft,
    vote_weighted, Metric, Neighbor, ReferenceQuota, TieRule, VoteConfig, VoteScheme,
};
use deepknn::noise::inject_symmetric;
use deepknn::ClassId;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rows_strategy(max_n: usize, d: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    proptest::collection::vec(proptest::collection::vec(-5.0f64..5.0, d), 3..max_n)
}

/// Random orthogonal matrix from Gram-Schmidt on a random square matrix.
fn orthogonal(d: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut basis: Vec<Vec<f64>> = Vec::new();
    while basis.len() < d {
        let mut v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        for b in &basis {
            let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= dot * y);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-3 {
            basis.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    basis
}

fn view(labels: &[ClassId]) -> LabelView<'_> {
    LabelView { noisy: labels, current: labels, num_classes: 3 }
}

proptest! {
    #[test]
    fn neighbors_sorted_and_self_excluded(rows in rows_strategy(40, 4), k in 1usize..10) {
        let set = EmbeddingSet::from_rows(&rows).unwrap();
        let k = k.min(rows.len() - 1);
        for metric in [Metric::L2, Metric::Cosine] {
            let nb = knn_query(&set, set.row(0), k, metric, Some(0)).unwrap();
            prop_assert_eq!(nb.len(), k);
            prop_assert!(nb.iter().all(|n| n.index != 0));
            prop_assert!(nb.windows(2).all(|w| w[0].distance <= w[1].distance));
        }
    }

    #[test]
    fn l2_order_invariant_under_rotation(rows in rows_strategy(30, 3), seed in any::<u64>()) {
        let q = orthogonal(3, seed);
        let rotated: Vec<Vec<f64>> = rows
            .iter()
            .map(|r| q.iter().map(|qr| qr.iter().zip(r).map(|(a, b)| a * b).sum()).collect())
            .collect();
        let a = EmbeddingSet::from_rows(&rows).unwrap();
        let b = EmbeddingSet::from_rows(&rotated).unwrap();
        let k = rows.len() - 1;
        let na = knn_query(&a, a.row(0), k, Metric::L2, Some(0)).unwrap();
        let nb = knn_query(&b, b.row(0), k, Metric::L2, Some(0)).unwrap();
        // Rotation perturbs distances by rounding only, so the sorted distance
        // profiles agree even where near-ties swap indices.
        for (x, y) in na.iter().zip(&nb) {
            prop_assert!((x.distance - y.distance).abs() < 1e-9);
        }
    }

    #[test]
    fn cosine_order_invariant_under_positive_scaling(
        rows in rows_strategy(30, 3),
        scales in proptest::collection::vec(0.1f64..10.0, 30),
    ) {
        prop_assume!(rows.iter().all(|r| r.iter().map(|x| x * x).sum::<f64>() > 1e-6));
        let scaled: Vec<Vec<f64>> = rows.iter().zip(&scales).map(|(r, s)| r.iter().map(|x| x * s).collect()).collect();
        let a = EmbeddingSet::from_rows(&rows).unwrap();
        let b = EmbeddingSet::from_rows(&scaled).unwrap();
        let k = rows.len() - 1;
        let na = knn_query(&a, a.row(0), k, Metric::Cosine, Some(0)).unwrap();
        let nb = knn_query(&b, b.row(0), k, Metric::Cosine, Some(0)).unwrap();
        for (x, y) in na.iter().zip(&nb) {
            prop_assert!((x.distance - y.distance).abs() < 1e-9);
        }
    }

    #[test]
    fn hard_vote_ignores_neighbor_order_when_distances_equal(
        labels in proptest::collection::vec(0u32..4, 1..12),
        perm_seed in any::<u64>(),
    ) {
        let nb: Vec<Neighbor> = (0..labels.len()).map(|i| Neighbor { index: i, distance: 1.0 }).collect();
        let cfg = VoteConfig { tie_rule: TieRule::LowestClassId, ..Default::default() };
        let mut shuffled = nb.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(perm_seed);
        for i in (1..shuffled.len()).rev() {
            shuffled.swap(i, rng.random_range(0..=i));
        }
        prop_assert_eq!(vote_hard(&nb, &labels, &cfg), vote_hard(&shuffled, &labels, &cfg));
    }

    #[test]
    fn hard_equals_weighted_at_uniform_distance(
        labels in proptest::collection::vec(0u32..4, 1..12),
        dist in 0.0f64..5.0,
    ) {
        let nb: Vec<Neighbor> = (0..labels.len()).map(|i| Neighbor { index: i, distance: dist }).collect();
        for tie_rule in [TieRule::LowestClassId, TieRule::NearestNeighborWins] {
            let cfg = VoteConfig { tie_rule, ..Default::default() };
            prop_assert_eq!(vote_hard(&nb, &labels, &cfg), vote_weighted(&nb, &labels, &cfg));
        }
    }

    #[test]
    fn selknn_mask_counts(
        current in proptest::collection::vec(0u32..4, 1..80),
        losses_seed in any::<u64>(),
        m in 1usize..30,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(losses_seed);
        let losses: Vec<f64> = current.iter().map(|_| rng.random_range(0.0..3.0)).collect();
        let mask = select_reference(&current, 4, &losses, ReferenceQuota::PerClass(m)).unwrap();
        for c in 0..4u32 {
            let pop = current.iter().filter(|&&x| x == c).count();
            let picked = current.iter().zip(&mask).filter(|(&x, &s)| x == c && s).count();
            prop_assert_eq!(picked, m.min(pop));
            // every selected loss is at most every unselected loss of the same class
            let max_sel = (0..current.len()).filter(|&i| current[i] == c && mask[i]).map(|i| losses[i]).fold(f64::MIN, f64::max);
            let min_rest = (0..current.len()).filter(|&i| current[i] == c && !mask[i]).map(|i| losses[i]).fold(f64::MAX, f64::min);
            prop_assert!(max_sel <= min_rest);
        }
    }

    #[test]
    fn correction_is_row_permutation_equivariant(
        rows in rows_strategy(25, 3),
        labels_seed in any::<u64>(),
        perm_seed in any::<u64>(),
    ) {
        let n = rows.len();
        let mut rng = ChaCha8Rng::seed_from_u64(labels_seed);
        let labels: Vec<ClassId> = (0..n).map(|_| rng.random_range(0..3)).collect();
        let losses: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(perm_seed);
        for i in (1..n).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let p_rows: Vec<Vec<f64>> = perm.iter().map(|&i| rows[i].clone()).collect();
        let p_labels: Vec<ClassId> = perm.iter().map(|&i| labels[i]).collect();
        let p_losses: Vec<f64> = perm.iter().map(|&i| losses[i]).collect();
        let a = EmbeddingSet::from_rows(&rows).unwrap();
        let b = EmbeddingSet::from_rows(&p_rows).unwrap();
        // Continuous random coordinates make distance ties vanishingly unlikely,
        // so neighbor sets do not depend on index tie-breaking.
        let cfg = VoteConfig::default();
        let k = 3.min(n - 1);
        let out = correct_iterknn(&a, view(&labels), k, Metric::L2, &cfg).unwrap();
        let p_out = correct_iterknn(&b, view(&p_labels), k, Metric::L2, &cfg).unwrap();
        for (j, &i) in perm.iter().enumerate() {
            prop_assert_eq!(p_out[j], out[i]);
        }
        let quota = ReferenceQuota::PerClass(2);
        let (out, mask) = correct_selknn(&a, view(&labels), &losses, quota, 1, Metric::L2, &cfg).unwrap();
        let (p_out, p_mask) = correct_selknn(&b, view(&p_labels), &p_losses, quota, 1, Metric::L2, &cfg).unwrap();
        for (j, &i) in perm.iter().enumerate() {
            prop_assert_eq!(p_out[j], out[i]);
            prop_assert_eq!(p_mask[j], mask[i]);
        }
    }
}

#[test]
fn soft_argmax_matches_hard_vote() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let cfg = VoteConfig { tie_rule: TieRule::LowestClassId, ..Default::default() };
    for _ in 0..100 {
        let k = rng.random_range(1..15);
        let labels: Vec<ClassId> = (0..k).map(|_| rng.random_range(0..5)).collect();
        let nb: Vec<Neighbor> = (0..k).map(|i| Neighbor { index: i, distance: i as f64 }).collect();
        let soft = vote_soft(&nb, &labels, 5);
        assert!((soft.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let best = soft.iter().cloned().fold(f64::MIN, f64::max);
        let argmax = soft.iter().position(|&p| p == best).unwrap() as ClassId;
        assert_eq!(argmax, vote_hard(&nb, &labels, &cfg));
        let soft_cfg = VoteConfig { scheme: VoteScheme::Soft, ..cfg };
        assert_eq!(vote(&nb, &labels, &soft_cfg), argmax);
    }
}

fn two_clusters(per: usize, separation: f64, seed: u64) -> (EmbeddingSet<f64>, Vec<ClassId>) {
    let ds = synth_gaussian::<f64>(2, per, 8, separation, seed).unwrap();
    (ds.embeddings().clone(), ds.true_labels().unwrap().to_vec())
}

#[test]
fn iterknn_recovers_separated_clusters() {
    let (emb, truth) = two_clusters(200, 10.0, 2);
    let noisy = inject_symmetric(&truth, 2, 0.4, 8).unwrap();
    let view = LabelView { noisy: &noisy, current: &noisy, num_classes: 2 };
    // k spans one whole cluster, so every vote is that cluster's majority.
    let out = correct_iterknn(&emb, view, 199, Metric::L2, &VoteConfig::default()).unwrap();
    let agree = out.iter().zip(&truth).filter(|(a, b)| a == b).count() as f64 / truth.len() as f64;
    assert!(agree >= 0.99, "{agree}");
}

#[test]
fn iterknn_leaves_clean_clusters_unchanged() {
    let (emb, truth) = two_clusters(50, 10.0, 3);
    let view = LabelView { noisy: &truth, current: &truth, num_classes: 2 };
    for scheme in [VoteScheme::HardMajority, VoteScheme::DistanceWeighted, VoteScheme::Soft] {
        let cfg = VoteConfig { scheme, ..Default::default() };
        assert_eq!(correct_iterknn(&emb, view, 10, Metric::L2, &cfg).unwrap(), truth);
    }
}

#[test]
fn deep_knn_predicts_held_out_points() {
    let ds = synth_gaussian::<f64>(4, 120, 6, 10.0, 5).unwrap();
    let truth = ds.true_labels().unwrap();
    let train: Vec<usize> = (0..ds.len()).filter(|i| i % 3 != 0).collect();
    let test: Vec<usize> = (0..ds.len()).filter(|i| i % 3 == 0).collect();
    let reference = ds.embeddings().select(&train).unwrap();
    let queries = ds.embeddings().select(&test).unwrap();
    let ref_labels: Vec<ClassId> = train.iter().map(|&i| truth[i]).collect();
    let pred = predict_deep_knn(&reference, &ref_labels, &queries, 25, Metric::Cosine, &VoteConfig::default()).unwrap();
    let acc = pred.iter().zip(&test).filter(|(&p, &i)| p == truth[i]).count() as f64 / test.len() as f64;
    assert!(acc >= 0.99, "{acc}");
}

#[test]
fn deep_knn_and_iterknn_share_the_vote() {
    let ds = synth_gaussian::<f64>(3, 20, 4, 2.0, 6).unwrap();
    let labels = inject_symmetric(ds.true_labels().unwrap(), 3, 0.5, 1).unwrap();
    let emb = ds.embeddings();
    let cfg = VoteConfig { scheme: VoteScheme::DistanceWeighted, ..Default::default() };
    let view = LabelView { noisy: &labels, current: &labels, num_classes: 3 };
    let iter = correct_iterknn(emb, view, 5, Metric::L2, &cfg).unwrap();
    for (i, &expected) in iter.iter().enumerate() {
        let rest: Vec<usize> = (0..ds.len()).filter(|&j| j != i).collect();
        let reference = emb.select(&rest).unwrap();
        let rest_labels: Vec<ClassId> = rest.iter().map(|&j| labels[j]).collect();
        let query = emb.select(&[i]).unwrap();
        let p = predict_deep_knn(&reference, &rest_labels, &query, 5, Metric::L2, &cfg).unwrap();
        assert_eq!(p[0], expected, "row {i}");
    }
}
