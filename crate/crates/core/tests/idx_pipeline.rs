//! End-to-end run from IDX files on disk: write a small image dataset in the
//! IDX binary layout, point a config at it, and run the full protocol.

use std::fs;
use std::path::Path;

use fedistill::config::parse_config;
use fedistill::data::synth_blobs;
use fedistill::harness;

fn write_idx_pair(dir: &Path, prefix: &str, features: &[Vec<u8>], labels: &[u8], side: u32) {
    let mut img = Vec::new();
    img.extend_from_slice(&0x0000_0803u32.to_be_bytes());
    img.extend_from_slice(&(features.len() as u32).to_be_bytes());
    img.extend_from_slice(&side.to_be_bytes());
    img.extend_from_slice(&side.to_be_bytes());
    for row in features {
        img.extend_from_slice(row);
    }
    fs::write(dir.join(format!("{prefix}-images")), img).unwrap();

    let mut lab = Vec::new();
    lab.extend_from_slice(&0x0000_0801u32.to_be_bytes());
    lab.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    lab.extend_from_slice(labels);
    fs::write(dir.join(format!("{prefix}-labels")), lab).unwrap();
}

/// Quantize blob features into pixel bytes.
fn to_pixels(ds: &fedistill::data::LabeledDataset) -> (Vec<Vec<u8>>, Vec<u8>) {
    let rows = (0..ds.len())
        .map(|i| {
            ds.features()
                .row(i)
                .iter()
                .map(|&v| ((v + 1.5) / 3.0 * 255.0).clamp(0.0, 255.0) as u8)
                .collect()
        })
        .collect();
    let labels = ds.labels().iter().map(|&l| l as u8).collect();
    (rows, labels)
}

#[test]
fn dlsh_runs_from_idx_files() {
    let dir = tempfile::tempdir().unwrap();
    let train = synth_blobs(4, 120, 16, 0.12, 5).unwrap();
    let test = synth_blobs(4, 40, 16, 0.12, 5).unwrap();
    let (train_px, train_lab) = to_pixels(&train);
    let (test_px, test_lab) = to_pixels(&test);
    write_idx_pair(dir.path(), "train", &train_px, &train_lab, 4);
    write_idx_pair(dir.path(), "t10k", &test_px, &test_lab, 4);

    let config = format!(
        r#"
protocol = "dlsh"
master_seed = 9

[dataset]
source = "idx"
images = "{0}/train-images"
labels = "{0}/train-labels"
test_images = "{0}/t10k-images"
test_labels = "{0}/t10k-labels"
dist_fraction = 0.25

[scheme]
kind = "niid1"
n_clients = 2
samples_per_client = 120

[train]
epochs = 25
embed_epochs = 8
global_epochs = 40
learning_rate = 0.15
temperature = 0.25
"#,
        dir.path().display()
    );
    let cfg = parse_config(&config).unwrap();
    let out = harness::run(&cfg).unwrap();
    let global = out.metric("global", "accuracy").unwrap();
    assert!((0.0..=1.0).contains(&global));
    // Quantized 4-class blobs stay separable enough for a real signal.
    assert!(global > 0.5, "global accuracy {global} from IDX data");

    let again = harness::run(&cfg).unwrap();
    assert_eq!(out.metrics, again.metrics);
}
