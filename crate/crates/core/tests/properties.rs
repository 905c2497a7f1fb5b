//! Property-based invariants over randomized inputs.

use proptest::collection::vec;
use proptest::prelude::*;

use fedistill::data::{
    class_probability_vector, split_distillation, LabeledDataset, PartitionKind, PartitionScheme,
};
use fedistill::dlmh::{build_mask_dict, remap_local_labels, unmask_logits, ClientUploadMh, MaskDict};
use fedistill::dlsh::normalize_confidence;
use fedistill::idlmh::transform_logits_for_client;
use fedistill::nn::{argmax, softmax_t};
use fedistill::Tensor;

proptest! {
    #[test]
    fn softmax_rows_sum_to_one_and_keep_argmax(
        row in vec(-100.0f64..100.0, 1..12),
        t in 0.01f64..50.0,
        shift in -40.0f64..40.0,
    ) {
        let out = softmax_t(&row, t).unwrap();
        let sum: f64 = out.iter().sum();
        prop_assert!((sum - 1.0).abs() < 1e-12);
        prop_assert!(out.iter().all(|&p| p >= 0.0));
        prop_assert_eq!(argmax(&out), argmax(&row));
        let shifted: Vec<f64> = row.iter().map(|v| v + shift).collect();
        let out2 = softmax_t(&shifted, t).unwrap();
        for (a, b) in out.iter().zip(&out2) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn confidence_rows_always_normalize(
        scores in vec(vec(0.0f64..1.0, 1..40), 1..6),
        t in 0.05f64..20.0,
    ) {
        let n = scores[0].len();
        let trimmed: Vec<Vec<f64>> = scores.iter().map(|s| {
            let mut s = s.clone();
            s.resize(n, 0.5);
            s
        }).collect();
        let conf = normalize_confidence(&trimmed, t).unwrap();
        for s in 0..conf.n_samples() {
            let sum: f64 = conf.weights().row(s).iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn transform_puts_one_row_max_inside_the_class_list(
        rows in vec(vec(-10.0f64..10.0, 2..10), 1..8),
        class_seed in any::<u64>(),
    ) {
        let width = rows[0].len();
        let rows: Vec<Vec<f64>> = rows.iter().map(|r| {
            let mut r = r.clone();
            r.resize(width, 0.0);
            r
        }).collect();
        // Deterministic nonempty class subset from the seed.
        let mut classes: Vec<usize> =
            (0..width).filter(|&c| (class_seed >> (c % 64)) & 1 == 1).collect();
        if classes.is_empty() {
            classes.push((class_seed as usize) % width);
        }
        let logits = Tensor::from_rows(&rows).unwrap();
        let out = transform_logits_for_client(&logits, &classes).unwrap();
        for (s, row) in rows.iter().enumerate() {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let nonzero: Vec<usize> = (0..width).filter(|&g| out.row(s)[g] != 0.0).collect();
            if max == 0.0 {
                prop_assert!(nonzero.is_empty());
            } else {
                prop_assert_eq!(nonzero.len(), 1);
                prop_assert!(classes.contains(&nonzero[0]));
                prop_assert_eq!(out.row(s)[nonzero[0]], max);
            }
        }
    }

    #[test]
    fn unmasked_logits_vanish_outside_the_schema(
        rows in vec(vec(-5.0f64..5.0, 1..6), 1..6),
        extra in 0usize..6,
        class_seed in any::<u64>(),
    ) {
        let k = rows[0].len();
        let rows: Vec<Vec<f64>> = rows.iter().map(|r| {
            let mut r = r.clone();
            r.resize(k, 1.0);
            r
        }).collect();
        let width = k + extra;
        // Choose k distinct globals deterministically.
        let mut classes: Vec<usize> = (0..width).collect();
        for i in (1..classes.len()).rev() {
            let j = ((class_seed >> (i % 48)) as usize) % (i + 1);
            classes.swap(i, j);
        }
        classes.truncate(k);
        classes.sort_unstable();
        let schema = build_mask_dict(&classes).unwrap();
        let upload = ClientUploadMh::new(
            Tensor::from_rows(&rows).unwrap(),
            vec![0.5; rows.len()],
            schema.clone(),
        ).unwrap();
        let wide = unmask_logits(&upload, width).unwrap();
        for (s, row) in rows.iter().enumerate() {
            for g in 0..width {
                match schema.local_of(g) {
                    Some(local) => prop_assert_eq!(wide.row(s)[g], row[local]),
                    None => prop_assert_eq!(wide.row(s)[g], 0.0),
                }
            }
        }
    }

    #[test]
    fn remap_round_trips_through_the_schema(
        classes in vec(0usize..20, 1..8),
        labels_seed in any::<u64>(),
    ) {
        let schema = build_mask_dict(&classes).unwrap();
        let k = schema.len();
        let n = 12;
        let labels: Vec<usize> = (0..n)
            .map(|i| schema.class_list()[((labels_seed >> (i % 50)) as usize) % k])
            .collect();
        let data = LabeledDataset::new(
            Tensor::from_rows(&vec![vec![0.0]; n]).unwrap(),
            labels.clone(),
            20,
        ).unwrap();
        let local = remap_local_labels(&data, &schema).unwrap();
        for (orig, &loc) in labels.iter().zip(local.labels()) {
            prop_assert_eq!(schema.global_of(loc), Some(*orig));
        }
    }

    #[test]
    fn distillation_split_is_an_exact_partition(
        n in 4usize..120,
        fraction in 0.05f64..0.95,
        seed in any::<u64>(),
    ) {
        // Feature value encodes the source row, so the split can be audited.
        let rows: Vec<Vec<f64>> = (0..n).map(|i| vec![i as f64]).collect();
        let ds = LabeledDataset::new(Tensor::from_rows(&rows).unwrap(), vec![0; n], 1).unwrap();
        let expect_dist = (fraction * n as f64).round() as usize;
        prop_assume!(expect_dist > 0 && expect_dist < n);
        let (train, dist) = split_distillation(&ds, fraction, seed).unwrap();
        prop_assert_eq!(dist.len(), expect_dist);
        prop_assert_eq!(train.len() + dist.len(), n);
        let mut seen = vec![false; n];
        for i in 0..train.len() {
            seen[train.features().row(i)[0] as usize] = true;
        }
        for i in 0..dist.len() {
            let idx = dist.features().row(i)[0] as usize;
            prop_assert!(!seen[idx], "row {} on both sides", idx);
            seen[idx] = true;
        }
        prop_assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn class_probability_vectors_are_distributions(
        kind_pick in 0usize..4,
        n_clients in 1usize..12,
        client in 0usize..12,
    ) {
        let kind = [
            PartitionKind::Iid,
            PartitionKind::Niid1,
            PartitionKind::Niid2,
            PartitionKind::Niid3,
        ][kind_pick];
        let scheme = PartitionScheme {
            kind,
            n_clients,
            n_classes: 10,
            samples_per_client: 1,
        };
        prop_assume!(client < n_clients);
        let pv = class_probability_vector(&scheme, client).unwrap();
        let sum: f64 = pv.probs().iter().sum();
        prop_assert!((sum - 1.0).abs() < 1e-12);
        prop_assert!(pv.probs().iter().all(|&p| p >= 0.0));
        let expect_support = match kind {
            PartitionKind::Iid => 10,
            PartitionKind::Niid1 => 2,
            PartitionKind::Niid2 => 6,
            PartitionKind::Niid3 => 4,
        };
        prop_assert_eq!(pv.support().len(), expect_support);
    }
}

#[test]
fn one_hot_local_rows_unmask_to_one_hot_global_rows() {
    for classes in [vec![0, 9], vec![2, 3, 7], vec![5]] {
        let schema = MaskDict::from_classes(&classes).unwrap();
        for local in 0..schema.len() {
            let mut row = vec![0.0; schema.len()];
            row[local] = 1.0;
            let upload = ClientUploadMh::new(
                Tensor::from_rows(std::slice::from_ref(&row)).unwrap(),
                vec![0.5],
                schema.clone(),
            )
            .unwrap();
            let wide = unmask_logits(&upload, 10).unwrap();
            let hot: Vec<usize> = (0..10).filter(|&g| wide.data()[g] != 0.0).collect();
            assert_eq!(hot, vec![schema.global_of(local).unwrap()]);
        }
    }
}
