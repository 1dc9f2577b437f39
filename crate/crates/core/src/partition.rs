//! Label-distribution partitioning of a dataset across clients.
//!
//! Each client draws a multinomial over classes from Dirichlet(alpha * prior)
//! and fills its quota by sampling labels from that multinomial without
//! replacement from the shared pool. Small alpha concentrates each client on
//! a couple of classes; large alpha approaches the global prior.

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::rng::SeededRng;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma};

/// Assignment of dataset sample indices to clients.
#[derive(Clone, Debug)]
pub struct Partition {
    client_indices: Vec<Vec<usize>>,
    alpha: f64,
    class_prior: Vec<f64>,
}

impl Partition {
    pub fn from_parts(client_indices: Vec<Vec<usize>>, alpha: f64, class_prior: Vec<f64>) -> Self {
        Partition {
            client_indices,
            alpha,
            class_prior,
        }
    }

    pub fn n_clients(&self) -> usize {
        self.client_indices.len()
    }

    pub fn client(&self, i: usize) -> &[usize] {
        &self.client_indices[i]
    }

    pub fn client_indices(&self) -> &[Vec<usize>] {
        &self.client_indices
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn class_prior(&self) -> &[f64] {
        &self.class_prior
    }

    /// Per-client label histogram over `n_classes` classes.
    pub fn label_histogram(&self, labels: &[usize], n_classes: usize, client: usize) -> Vec<usize> {
        let mut hist = vec![0usize; n_classes];
        for &i in &self.client_indices[client] {
            hist[labels[i]] += 1;
        }
        hist
    }

    /// Mean over clients of the label entropy (natural log).
    pub fn mean_label_entropy(&self, labels: &[usize], n_classes: usize) -> f64 {
        let mut total = 0.0;
        for c in 0..self.n_clients() {
            let hist = self.label_histogram(labels, n_classes, c);
            let n: usize = hist.iter().sum();
            let mut h = 0.0;
            for &count in &hist {
                if count > 0 {
                    let p = count as f64 / n as f64;
                    h -= p * p.ln();
                }
            }
            total += h;
        }
        total / self.n_clients() as f64
    }

    /// Median over clients of the number of distinct classes held.
    pub fn median_distinct_classes(&self, labels: &[usize], n_classes: usize) -> usize {
        let mut counts: Vec<usize> = (0..self.n_clients())
            .map(|c| {
                self.label_histogram(labels, n_classes, c)
                    .iter()
                    .filter(|&&n| n > 0)
                    .count()
            })
            .collect();
        counts.sort_unstable();
        counts[counts.len() / 2]
    }
}

/// Draw one client's class distribution q ~ Dirichlet(alpha * prior).
/// Gamma draws with tiny shapes can underflow to all-zero; those are
/// resampled, and after repeated failures the argmax class wins outright
/// (the alpha -> 0 limit).
fn draw_class_weights(prior: &[f64], alpha: f64, rng: &mut SeededRng) -> Vec<f64> {
    for _ in 0..64 {
        let mut draws = Vec::with_capacity(prior.len());
        let mut sum = 0.0;
        let mut ok = true;
        for &p in prior {
            let shape = alpha * p;
            if shape <= 0.0 {
                draws.push(0.0);
                continue;
            }
            let gamma = match Gamma::new(shape, 1.0) {
                Ok(g) => g,
                Err(_) => {
                    ok = false;
                    break;
                }
            };
            let v: f64 = gamma.sample(rng);
            if !v.is_finite() {
                ok = false;
                break;
            }
            draws.push(v);
            sum += v;
        }
        if ok && sum > 0.0 {
            for v in &mut draws {
                *v /= sum;
            }
            return draws;
        }
    }
    // Degenerate fallback: all mass on one prior-weighted class.
    let mut weights = vec![0.0; prior.len()];
    let pick = rng.random_range(0..prior.len());
    weights[pick] = 1.0;
    weights
}

/// Partition `labels.len()` samples across `m` clients with equal quotas
/// floor(n/m); the remainder is left unassigned so every client takes the
/// same number of local steps per epoch.
pub fn dirichlet_partition(
    labels: &[usize],
    n_classes: usize,
    m: usize,
    alpha: f64,
    rng: &mut SeededRng,
) -> Result<Partition> {
    let quotas = vec![labels.len() / m.max(1); m];
    partition_with_quotas(labels, n_classes, &quotas, alpha, rng)
}

/// Partition with explicit per-client sample counts.
pub fn partition_with_quotas(
    labels: &[usize],
    n_classes: usize,
    quotas: &[usize],
    alpha: f64,
    rng: &mut SeededRng,
) -> Result<Partition> {
    let n = labels.len();
    let m = quotas.len();
    if m == 0 {
        return Err(Error::config("need at least one client"));
    }
    if alpha <= 0.0 || !alpha.is_finite() {
        return Err(Error::config(format!("alpha must be positive, got {alpha}")));
    }
    if quotas.contains(&0) {
        return Err(Error::config(
            "every client needs at least one sample; reduce the client count",
        ));
    }
    let total: usize = quotas.iter().sum();
    if total > n {
        return Err(Error::config(format!(
            "quotas require {total} samples but only {n} are available"
        )));
    }

    // Empirical class prior.
    let mut counts = vec![0usize; n_classes];
    for &l in labels {
        if l >= n_classes {
            return Err(Error::config(format!(
                "label {l} out of range for {n_classes} classes"
            )));
        }
        counts[l] += 1;
    }
    let prior: Vec<f64> = counts.iter().map(|&c| c as f64 / n as f64).collect();

    // Pools of sample indices per class, pre-shuffled so popping the back is
    // a uniform draw without replacement.
    let mut pools: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
    for (i, &l) in labels.iter().enumerate() {
        pools[l].push(i);
    }
    for pool in &mut pools {
        pool.shuffle(rng);
    }

    let mut client_indices: Vec<Vec<usize>> = Vec::with_capacity(m);
    for &quota in quotas {
        let weights = draw_class_weights(&prior, alpha, rng);
        let mut assigned = Vec::with_capacity(quota);
        for _ in 0..quota {
            // Renormalize over classes that still have samples left.
            let available: f64 = weights
                .iter()
                .enumerate()
                .filter(|(c, _)| !pools[*c].is_empty())
                .map(|(_, w)| w)
                .sum();
            let class = if available <= 0.0 {
                // Client's preferred classes ran dry: fall back to the
                // largest remaining pool.
                (0..n_classes)
                    .max_by_key(|&c| pools[c].len())
                    .expect("non-empty class set")
            } else {
                let mut ticket: f64 = rng.random_range(0.0..available);
                let mut chosen = None;
                for (c, &w) in weights.iter().enumerate() {
                    if pools[c].is_empty() {
                        continue;
                    }
                    ticket -= w;
                    if ticket <= 0.0 {
                        chosen = Some(c);
                        break;
                    }
                }
                chosen.unwrap_or_else(|| {
                    (0..n_classes)
                        .rev()
                        .find(|&c| !pools[c].is_empty())
                        .expect("pool availability checked above")
                })
            };
            assigned.push(pools[class].pop().expect("chosen class has samples"));
        }
        client_indices.push(assigned);
    }

    Ok(Partition {
        client_indices,
        alpha,
        class_prior: prior,
    })
}

/// Random per-client sample counts, uniform over [n_min, n_max].
pub fn unequal_partition_sizes(
    m: usize,
    n_min: usize,
    n_max: usize,
    dataset_len: usize,
    rng: &mut SeededRng,
) -> Result<Vec<usize>> {
    if n_min > n_max {
        return Err(Error::config(format!(
            "n_min {n_min} exceeds n_max {n_max}"
        )));
    }
    if n_min == 0 {
        return Err(Error::config("clients need at least one sample"));
    }
    let counts: Vec<usize> = (0..m).map(|_| rng.random_range(n_min..=n_max)).collect();
    let total: usize = counts.iter().sum();
    if total > dataset_len {
        return Err(Error::config(format!(
            "requested {total} samples across clients but the dataset has {dataset_len}"
        )));
    }
    Ok(counts)
}

/// Convenience: partition a dataset's training labels.
pub fn partition_dataset(
    dataset: &Dataset,
    m: usize,
    alpha: f64,
    rng: &mut SeededRng,
) -> Result<Partition> {
    if m > dataset.len() {
        return Err(Error::config(format!(
            "{m} clients exceed {} samples",
            dataset.len()
        )));
    }
    dirichlet_partition(dataset.labels(), dataset.n_classes(), m, alpha, rng)
}
