//! Per-client class-probability schemes and the sampling partitioner.

use rand::Rng;

use crate::data::{LabeledDataset, PartitionKind, PartitionScheme};
use crate::error::{Error, Result};
use crate::seed::{derive_seed, rng_from};

/// One client's class sampling distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassProbabilityVector {
    probs: Vec<f64>,
}

impl ClassProbabilityVector {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if let Some(&neg) = probs.iter().find(|&&p| p < 0.0) {
            return Err(Error::invalid(format!("negative class probability {neg}")));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!(
                "class probabilities sum to {sum}, expected 1"
            )));
        }
        Ok(Self { probs })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Classes with nonzero probability, ascending.
    pub fn support(&self) -> Vec<usize> {
        self.probs
            .iter()
            .enumerate()
            .filter(|(_, &p)| p > 0.0)
            .map(|(c, _)| c)
            .collect()
    }

    /// Draw one class index from this distribution.
    pub fn sample_class(&self, rng: &mut impl Rng) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (c, &p) in self.probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return c;
            }
        }
        // Rounding edge: fall back to the last supported class.
        self.support().last().copied().unwrap_or(0)
    }
}

/// The class-probability vector of one client under a partition scheme.
///
/// Client indices beyond one cycle wrap around deterministically.
pub fn class_probability_vector(
    scheme: &PartitionScheme,
    client_index: usize,
) -> Result<ClassProbabilityVector> {
    scheme.validate()?;
    if client_index >= scheme.n_clients {
        return Err(Error::invalid(format!(
            "client index {client_index} out of range for {} clients",
            scheme.n_clients
        )));
    }
    let c = scheme.n_classes;
    let mut probs = vec![0.0; c];
    match scheme.kind {
        PartitionKind::Iid => {
            let p = 1.0 / c as f64;
            probs.iter_mut().for_each(|v| *v = p);
        }
        PartitionKind::Niid1 => {
            // Two consecutive classes per client.
            let first = (2 * client_index) % c;
            let second = (2 * client_index + 1) % c;
            if first == second {
                probs[first] = 1.0;
            } else {
                probs[first] = 0.5;
                probs[second] = 0.5;
            }
        }
        PartitionKind::Niid2 => {
            // First half of the classes shared by everyone, plus one unique
            // class from the second half.
            let shared = c / 2;
            let pool = c - shared;
            let unique = shared + client_index % pool;
            let p = 1.0 / (shared + 1) as f64;
            for v in probs.iter_mut().take(shared) {
                *v = p;
            }
            probs[unique] = p;
        }
        PartitionKind::Niid3 => {
            // Each class lives on exactly two clients: identify class
            // indices with unordered client pairs, enumerated
            // lexicographically over one cycle of k clients.
            let k = pair_cycle_len(c)?;
            let me = client_index % k;
            let p = 1.0 / (k - 1) as f64;
            let mut class = 0;
            for a in 0..k {
                for b in (a + 1)..k {
                    if a == me || b == me {
                        probs[class] = p;
                    }
                    class += 1;
                }
            }
        }
    }
    ClassProbabilityVector::new(probs)
}

/// Cycle length `k` with `k * (k - 1) / 2 == n_classes`.
fn pair_cycle_len(n_classes: usize) -> Result<usize> {
    let mut k = 2;
    while k * (k - 1) / 2 < n_classes {
        k += 1;
    }
    if k * (k - 1) / 2 != n_classes {
        return Err(Error::invalid(format!(
            "NIID-3 needs a triangular class count (1, 3, 6, 10, ...), got {n_classes}"
        )));
    }
    Ok(k)
}

/// Draw every client's local dataset from the pool.
///
/// Client `i` draws `samples_per_client` rows with replacement: a class from
/// its probability vector, then a uniform row of that class. Deterministic
/// per `(seed, i)` regardless of scheduling.
pub fn partition(
    pool: &LabeledDataset,
    scheme: &PartitionScheme,
    seed: u64,
) -> Result<Vec<LabeledDataset>> {
    scheme.validate()?;
    if scheme.samples_per_client == 0 {
        return Err(Error::invalid("samples_per_client must be >= 1"));
    }
    if pool.n_classes() != scheme.n_classes {
        return Err(Error::invalid(format!(
            "pool has {} classes, scheme expects {}",
            pool.n_classes(),
            scheme.n_classes
        )));
    }
    let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); scheme.n_classes];
    for (i, &l) in pool.labels().iter().enumerate() {
        buckets[l].push(i);
    }
    let mut out = Vec::with_capacity(scheme.n_clients);
    for client in 0..scheme.n_clients {
        let pv = class_probability_vector(scheme, client)?;
        for class in pv.support() {
            if buckets[class].is_empty() {
                return Err(Error::invalid(format!(
                    "client {client} requires class {class}, but the pool has no samples of it"
                )));
            }
        }
        let mut rng = rng_from(derive_seed(seed, "partition", client as u64));
        let mut rows = Vec::with_capacity(scheme.samples_per_client);
        for _ in 0..scheme.samples_per_client {
            let class = pv.sample_class(&mut rng);
            let bucket = &buckets[class];
            rows.push(bucket[rng.random_range(0..bucket.len())]);
        }
        out.push(pool.subset(&rows)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_blobs;

    fn scheme(kind: PartitionKind, n_clients: usize) -> PartitionScheme {
        PartitionScheme {
            kind,
            n_clients,
            n_classes: 10,
            samples_per_client: 100,
        }
    }

    #[test]
    fn iid_vector_is_uniform() {
        let pv = class_probability_vector(&scheme(PartitionKind::Iid, 5), 3).unwrap();
        for &p in pv.probs() {
            assert!((p - 0.1).abs() < 1e-15);
        }
    }

    #[test]
    fn niid1_vectors_cover_consecutive_pairs() {
        let s = scheme(PartitionKind::Niid1, 7);
        let pv0 = class_probability_vector(&s, 0).unwrap();
        assert_eq!(pv0.probs(), &[0.5, 0.5, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let pv4 = class_probability_vector(&s, 4).unwrap();
        assert_eq!(pv4.support(), vec![8, 9]);
        // Wrap-around past one cycle.
        let pv5 = class_probability_vector(&s, 5).unwrap();
        assert_eq!(pv5.support(), vec![0, 1]);
    }

    #[test]
    fn niid2_second_client_matches_published_vector() {
        let pv = class_probability_vector(&scheme(PartitionKind::Niid2, 5), 1).unwrap();
        let s = 1.0 / 6.0;
        assert_eq!(pv.probs(), &[s, s, s, s, s, 0.0, s, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn niid3_first_clients_match_published_vectors() {
        let s = scheme(PartitionKind::Niid3, 5);
        let pv0 = class_probability_vector(&s, 0).unwrap();
        assert_eq!(pv0.probs(), &[0.25, 0.25, 0.25, 0.25, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let pv1 = class_probability_vector(&s, 1).unwrap();
        assert_eq!(pv1.probs(), &[0.25, 0.0, 0.0, 0.0, 0.25, 0.25, 0.25, 0.0, 0.0, 0.0]);
        let pv2 = class_probability_vector(&s, 2).unwrap();
        assert_eq!(pv2.probs(), &[0.0, 0.25, 0.0, 0.0, 0.25, 0.0, 0.0, 0.25, 0.25, 0.0]);
    }

    #[test]
    fn niid3_each_class_on_exactly_two_clients_per_cycle() {
        let s = scheme(PartitionKind::Niid3, 5);
        let mut holders = [0usize; 10];
        for client in 0..5 {
            let pv = class_probability_vector(&s, client).unwrap();
            for class in pv.support() {
                holders[class] += 1;
            }
        }
        assert!(holders.iter().all(|&h| h == 2));
    }

    #[test]
    fn support_sizes_match_schemes() {
        for (kind, size) in [
            (PartitionKind::Niid1, 2),
            (PartitionKind::Niid2, 6),
            (PartitionKind::Niid3, 4),
        ] {
            let pv = class_probability_vector(&scheme(kind, 5), 2).unwrap();
            assert_eq!(pv.support().len(), size, "{kind:?}");
        }
    }

    #[test]
    fn niid3_rejects_non_triangular_class_counts() {
        let mut s = scheme(PartitionKind::Niid3, 5);
        s.n_classes = 7;
        assert!(class_probability_vector(&s, 0).is_err());
    }

    #[test]
    fn niid1_partition_holds_only_its_two_classes() {
        let pool = synth_blobs(10, 50, 4, 0.3, 11).unwrap();
        let parts = partition(&pool, &scheme(PartitionKind::Niid1, 5), 77).unwrap();
        assert_eq!(parts[0].classes_present(), vec![0, 1]);
        assert_eq!(parts[3].classes_present(), vec![6, 7]);
    }

    #[test]
    fn iid_partition_frequencies_concentrate() {
        let pool = synth_blobs(10, 60, 4, 0.3, 12).unwrap();
        let mut s = scheme(PartitionKind::Iid, 1);
        s.samples_per_client = 10_000;
        let parts = partition(&pool, &s, 5).unwrap();
        let mut counts = vec![0usize; 10];
        for &l in parts[0].labels() {
            counts[l] += 1;
        }
        for &c in &counts {
            let freq = c as f64 / 10_000.0;
            assert!((freq - 0.1).abs() < 0.01, "frequency {freq}");
        }
    }

    #[test]
    fn partition_is_reproducible() {
        let pool = synth_blobs(10, 30, 4, 0.3, 13).unwrap();
        let s = scheme(PartitionKind::Niid2, 5);
        let a = partition(&pool, &s, 99).unwrap();
        let b = partition(&pool, &s, 99).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_samples_per_client_rejected() {
        let pool = synth_blobs(10, 30, 4, 0.3, 13).unwrap();
        let mut s = scheme(PartitionKind::Iid, 2);
        s.samples_per_client = 0;
        assert!(partition(&pool, &s, 1).is_err());
    }

    #[test]
    fn missing_required_class_names_client_and_class() {
        // Pool with class 9 removed entirely.
        let pool = synth_blobs(10, 30, 4, 0.3, 13).unwrap();
        let keep: Vec<usize> = (0..pool.len()).filter(|&i| pool.labels()[i] != 9).collect();
        let pool = pool.subset(&keep).unwrap();
        let s = scheme(PartitionKind::Niid1, 5);
        let err = partition(&pool, &s, 1).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("client 4") && msg.contains("class 9"), "{msg}");
    }
}
