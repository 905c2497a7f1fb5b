use super::*;
use crate::config::parse_config;
use crate::dlmh::build_mask_dict;
use crate::nn::{Activation, ModelSpec};

#[test]
fn transform_reassigns_the_max_to_the_nearest_held_class() {
    // Gaps to the max 0.9: class 1 -> 0.85, class 3 -> 0.88; class 1 wins.
    let logits = Tensor::from_rows(&[vec![0.9, 0.05, 0.03, 0.02]]).unwrap();
    let out = transform_logits_for_client(&logits, &[1, 3]).unwrap();
    assert_eq!(out.data(), &[0.0, 0.9, 0.0, 0.0]);
}

#[test]
fn transform_keeps_the_argmax_when_the_client_holds_it() {
    let logits = Tensor::from_rows(&[vec![0.1, 2.0, -1.0]]).unwrap();
    let out = transform_logits_for_client(&logits, &[0, 1]).unwrap();
    assert_eq!(out.data(), &[0.0, 2.0, 0.0]);
}

#[test]
fn transform_ties_break_to_the_lowest_class() {
    // Classes 1 and 2 are equally close to the max; the earlier one wins
    // because only strict improvements replace the initial choice.
    let logits = Tensor::from_rows(&[vec![5.0, 3.0, 3.0]]).unwrap();
    let out = transform_logits_for_client(&logits, &[1, 2]).unwrap();
    assert_eq!(out.data(), &[0.0, 5.0, 0.0]);
}

#[test]
fn transform_rejects_empty_or_out_of_range_classes() {
    let logits = Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap();
    assert!(transform_logits_for_client(&logits, &[]).is_err());
    assert!(transform_logits_for_client(&logits, &[2]).is_err());
}

#[test]
fn transform_rows_have_one_nonzero_at_the_row_max() {
    use rand::seq::index::sample;
    use rand::Rng;
    let mut rng = crate::seed::rng_from(83);
    for _ in 0..50 {
        let width = rng.random_range(2..10);
        let rows: Vec<Vec<f64>> = (0..rng.random_range(1..5))
            .map(|_| (0..width).map(|_| rng.random_range(-5.0..5.0)).collect())
            .collect();
        let k = rng.random_range(1..=width);
        let mut classes: Vec<usize> = sample(&mut rng, width, k).into_vec();
        classes.sort_unstable();
        let logits = Tensor::from_rows(&rows).unwrap();
        let out = transform_logits_for_client(&logits, &classes).unwrap();
        for (s, row) in rows.iter().enumerate() {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let nonzero: Vec<usize> =
                (0..width).filter(|&g| out.row(s)[g] != 0.0).collect();
            if max == 0.0 {
                assert!(nonzero.is_empty());
            } else {
                assert_eq!(nonzero.len(), 1);
                assert!(classes.contains(&nonzero[0]));
                assert_eq!(out.row(s)[nonzero[0]], max);
            }
        }
    }
}

#[test]
fn soft_remap_column_selects_the_schema_classes() {
    let schema = build_mask_dict(&[1, 3]).unwrap();
    let transformed = Tensor::from_rows(&[vec![0.0, 0.9, 0.0, 0.0]]).unwrap();
    let pkg =
        remap_to_client_space(&transformed, &schema, 0, IncentiveTarget::Soft).unwrap();
    assert_eq!(pkg.targets.data(), &[0.9, 0.0]);
}

#[test]
fn identity_schema_remap_preserves_column_order() {
    let schema = crate::dlmh::MaskDict::identity(4).unwrap();
    let transformed = Tensor::from_rows(&[vec![0.0, 0.0, 1.7, 0.0]]).unwrap();
    let pkg =
        remap_to_client_space(&transformed, &schema, 0, IncentiveTarget::Soft).unwrap();
    assert_eq!(pkg.targets.data(), transformed.data());
}

#[test]
fn hard_remap_emits_local_one_hot() {
    let schema = build_mask_dict(&[1, 3]).unwrap();
    let transformed = Tensor::from_rows(&[vec![0.0, 0.9, 0.0, 0.0]]).unwrap();
    let pkg =
        remap_to_client_space(&transformed, &schema, 0, IncentiveTarget::Hard).unwrap();
    assert_eq!(pkg.targets.data(), &[1.0, 0.0]);
}

#[test]
fn hard_remap_follows_a_negative_row_max() {
    // All-negative server logits: the transform still marks one class, and
    // hard mode must one-hot there, not at some zero entry.
    let logits = Tensor::from_rows(&[vec![-3.0, -1.0, -2.0, -5.0]]).unwrap();
    let schema = build_mask_dict(&[0, 3]).unwrap();
    let transformed = transform_logits_for_client(&logits, schema.class_list()).unwrap();
    assert_eq!(transformed.data(), &[-1.0, 0.0, 0.0, 0.0]);
    let pkg =
        remap_to_client_space(&transformed, &schema, 0, IncentiveTarget::Hard).unwrap();
    assert_eq!(pkg.targets.data(), &[1.0, 0.0]);
}

#[test]
fn remap_flags_nonzero_outside_schema_as_internal_error() {
    let schema = build_mask_dict(&[1, 3]).unwrap();
    let transformed = Tensor::from_rows(&[vec![0.9, 0.0, 0.0, 0.0]]).unwrap();
    match remap_to_client_space(&transformed, &schema, 0, IncentiveTarget::Soft) {
        Err(Error::Internal(_)) => {}
        other => panic!("expected internal error, got {other:?}"),
    }
}

#[test]
fn remap_then_unmask_round_trips_soft_rows() {
    use rand::Rng;
    let mut rng = crate::seed::rng_from(97);
    let schema = build_mask_dict(&[0, 2, 5, 6]).unwrap();
    let width = 8;
    let rows: Vec<Vec<f64>> = (0..6)
        .map(|_| (0..width).map(|_| rng.random_range(-3.0..3.0)).collect())
        .collect();
    let transformed =
        transform_logits_for_client(&Tensor::from_rows(&rows).unwrap(), schema.class_list())
            .unwrap();
    let pkg = remap_to_client_space(&transformed, &schema, 0, IncentiveTarget::Soft).unwrap();
    let upload = crate::dlmh::ClientUploadMh::new(
        pkg.targets.clone(),
        vec![0.0; pkg.targets.n_rows()],
        schema,
    )
    .unwrap();
    let back = crate::dlmh::unmask_logits(&upload, width).unwrap();
    assert_eq!(back, transformed);
}

#[test]
fn self_distillation_is_a_fixed_point() {
    let data = crate::data::synth_blobs(2, 40, 4, 0.2, 3).unwrap();
    let x_dist = crate::data::UnlabeledDataset::new(data.features().clone()).unwrap();
    let spec = ModelSpec::mlp(4, &[8], 2, Activation::Tanh).unwrap();
    let model = crate::nn::train(
        &crate::nn::TrainedModel::init(spec, 5).unwrap(),
        &data,
        &TrainConfig::new(20, 6).with_learning_rate(0.05),
    )
    .unwrap();
    let own_logits = forward(&model, x_dist.features()).unwrap();
    let pkg = IncentivePackage {
        client_index: 0,
        targets: own_logits,
        mode: IncentiveTarget::Soft,
    };
    let before = crate::nn::accuracy(&model, &data).unwrap();
    let after_model =
        client_incentive_distill(&model, &pkg, &x_dist, &TrainConfig::new(10, 7)).unwrap();
    let after = crate::nn::accuracy(&after_model, &data).unwrap();
    assert!(
        (after - before).abs() <= 0.02,
        "self-distillation moved accuracy {before} -> {after}"
    );
}

#[test]
fn package_width_must_match_head() {
    let spec = ModelSpec::mlp(4, &[4], 3, Activation::Tanh).unwrap();
    let model = crate::nn::TrainedModel::init(spec, 1).unwrap();
    let x = crate::data::UnlabeledDataset::new(Tensor::from_rows(&[vec![0.0; 4]]).unwrap()).unwrap();
    let pkg = IncentivePackage {
        client_index: 0,
        targets: Tensor::from_rows(&[vec![1.0, 0.0]]).unwrap(),
        mode: IncentiveTarget::Hard,
    };
    assert!(client_incentive_distill(&model, &pkg, &x, &TrainConfig::new(1, 1)).is_err());
}

fn idlmh_config(extra: &str) -> crate::config::ExperimentConfig {
    parse_config(&format!(
        r#"
protocol = "idlmh"
master_seed = 21

[dataset]
source = "synth"
n_classes = 4
n_per_class = 60
feature_dim = 6
spread = 0.15
dist_fraction = 0.3

[scheme]
kind = "niid1"
n_clients = 2
samples_per_client = 80

[train]
epochs = 8
embed_epochs = 4
global_epochs = 12
learning_rate = 0.05
temperature = 0.25
{extra}
"#
    ))
    .unwrap()
}

#[test]
fn idlmh_downlink_costs_match_the_accountant() {
    let cfg = idlmh_config("");
    let out = run_idlmh(&cfg).unwrap();
    for i in 0..2 {
        let downs = out.transcript.downlinks_for(i);
        assert_eq!(downs.len(), 1);
        // NIID-1 client holds 2 classes; incremental cost is |X_dist| * 2.
        let expect = crate::commcost::cost_idlmh_incremental(downs[0].scalars / 2, 2, 1);
        assert_eq!(downs[0].scalars, expect);
        assert!(out
            .metric(&format!("client-{i}"), "accuracy_own_post_incentive")
            .is_some());
    }
}

#[test]
fn opted_out_clients_receive_nothing() {
    let cfg = idlmh_config("incentive_clients = [1]");
    let out = run_idlmh(&cfg).unwrap();
    assert!(out.transcript.downlinks_for(0).is_empty());
    assert_eq!(out.transcript.downlinks_for(1).len(), 1);
    let incremental: u64 = out
        .costs
        .iter()
        .filter(|c| c.protocol == "idlmh-incremental")
        .map(|c| c.total)
        .sum();
    // The DL-MH phase has no downlinks, so the whole downlink volume is
    // the incentive traffic.
    assert_eq!(
        incremental,
        out.transcript.total_scalars(crate::harness::Direction::Downlink)
    );
    assert!(out.metric("client-0", "accuracy_own_post_incentive").is_none());
}

#[test]
fn yagg_source_also_runs() {
    let cfg = idlmh_config("incentive_source = \"yagg\"");
    let out = run_idlmh(&cfg).unwrap();
    assert!(out.metric("client-0", "accuracy_own_post_incentive").is_some());
}

#[test]
fn hard_incentive_targets_also_run() {
    let cfg = idlmh_config("incentive_target = \"hard\"");
    let out = run_idlmh(&cfg).unwrap();
    for i in 0..2 {
        let post = out
            .metric(&format!("client-{i}"), "accuracy_own_post_incentive")
            .unwrap();
        assert!((0.0..=1.0).contains(&post));
    }
}
