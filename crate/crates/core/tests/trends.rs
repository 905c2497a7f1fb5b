//! Desk-scale behavioral trends across seeds: client capacity ordering and
//! incentive-target equivalence.

use fedistill::config::parse_config;
use fedistill::harness::{run, RunOutcome};

fn dlmh_config(clients: &str, seed: u64) -> String {
    format!(
        r#"
protocol = "dlmh"
master_seed = {seed}

[dataset]
source = "synth"
n_classes = 6
n_per_class = 150
feature_dim = 49
spread = 0.25
dist_fraction = 0.25

[scheme]
kind = "niid1"
n_clients = 3
samples_per_client = 200

[model]
client = {clients}
global = "tiny"

[train]
epochs = 15
embed_epochs = 6
global_epochs = 25
learning_rate = 0.05
temperature = 0.25
"#
    )
}

fn mean_global(clients: &str) -> f64 {
    let mut total = 0.0;
    for seed in [1u64, 2, 3] {
        let cfg = parse_config(&dlmh_config(clients, seed)).unwrap();
        let out: RunOutcome = run(&cfg).unwrap();
        total += out.metric("global", "accuracy").unwrap();
    }
    total / 3.0
}

#[test]
fn client_capacity_ordering_is_a_nonstrict_trend() {
    let deep = mean_global("\"deep\"");
    let hybrid = mean_global("[\"deep\", \"shallow\", \"deep\"]");
    let shallow = mean_global("\"shallow\"");
    assert!(
        deep >= hybrid && hybrid >= shallow,
        "expected deep {deep} >= hybrid {hybrid} >= shallow {shallow}"
    );
}

fn idlmh_config(source: &str, seed: u64) -> String {
    format!(
        r#"
protocol = "idlmh"
master_seed = {seed}

[dataset]
source = "synth"
n_classes = 6
n_per_class = 150
feature_dim = 16
spread = 0.2
dist_fraction = 0.25

[scheme]
kind = "niid1"
n_clients = 3
samples_per_client = 200

[train]
epochs = 12
embed_epochs = 5
global_epochs = 20
learning_rate = 0.05
temperature = 0.25
incentive_source = "{source}"
"#
    )
}

#[test]
fn yagg_incentive_tracks_logit_incentive_within_five_points() {
    for seed in [1u64, 2, 3] {
        let logits_out = run(&parse_config(&idlmh_config("logits", seed)).unwrap()).unwrap();
        let yagg_out = run(&parse_config(&idlmh_config("yagg", seed)).unwrap()).unwrap();
        let mut diff_sum = 0.0;
        for client in 0..3 {
            let entity = format!("client-{client}");
            let a = logits_out
                .metric(&entity, "accuracy_own_post_incentive")
                .unwrap();
            let b = yagg_out
                .metric(&entity, "accuracy_own_post_incentive")
                .unwrap();
            diff_sum += (a - b).abs();
        }
        let mean_diff = diff_sum / 3.0;
        assert!(
            mean_diff <= 0.05,
            "seed {seed}: mean own-class gap {mean_diff} between target modes"
        );
    }
}
