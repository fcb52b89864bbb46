//! Synthetic classification data and its partitioning across nodes.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::error::{Error, Result};
use crate::seed;

pub const DIRICHLET_MAX_ATTEMPTS: usize = 100_000;

/// Fraction of each node's local samples used for training; the rest is holdout.
pub const TRAIN_FRACTION: f64 = 0.8;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    n_features: usize,
    n_classes: usize,
    /// Row-major `n_samples × n_features`.
    features: Vec<f64>,
    labels: Vec<usize>,
}

impl Dataset {
    pub fn new(n_features: usize, n_classes: usize, features: Vec<f64>, labels: Vec<usize>) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::InvalidConfig("dataset has no samples".into()));
        }
        if n_features == 0 || features.len() != labels.len() * n_features {
            return Err(Error::Shape(format!(
                "{} feature values for {} samples of width {n_features}",
                features.len(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
            return Err(Error::InvalidConfig(format!("label {bad} outside 0..{n_classes}")));
        }
        Ok(Self { n_features, n_classes, features, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        &self.features[i * self.n_features..(i + 1) * self.n_features]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Copies the given rows, in order, into a new dataset with the same class count.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let mut features = Vec::with_capacity(indices.len() * self.n_features);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::Index { index: i, n_nodes: self.len() });
            }
            features.extend_from_slice(self.sample(i));
            labels.push(self.labels[i]);
        }
        Self::new(self.n_features, self.n_classes, features, labels)
    }

    /// CSV with header `f0,…,f{d-1},label`.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for j in 0..self.n_features {
            let _ = write!(out, "f{j},");
        }
        out.push_str("label\n");
        for i in 0..self.len() {
            for v in self.sample(i) {
                let _ = write!(out, "{v:?},");
            }
            let _ = writeln!(out, "{}", self.labels[i]);
        }
        out
    }
}

/// Isotropic Gaussian blobs, one per class, centred on distinct corners of
/// the `{-1, 1}^d` hypercube (random unit directions scaled by `√d` once the
/// corners run out). Samples are ordered class by class.
pub fn gen_blobs(k_classes: usize, n_features: usize, n_per_class: usize, spread: f64, seed: u64) -> Result<Dataset> {
    if k_classes < 2 || n_features < 2 || n_per_class < 10 {
        return Err(Error::InvalidConfig(format!(
            "blobs need k >= 2, d >= 2, n_per_class >= 10 (got {k_classes}, {n_features}, {n_per_class})"
        )));
    }
    if !(spread > 0.0 && spread.is_finite()) {
        return Err(Error::InvalidConfig(format!("spread must be positive, got {spread}")));
    }
    let mut rng = seed::rng(seed);
    let corners = if n_features < 63 { 1u64 << n_features } else { u64::MAX };
    let mut centres: Vec<Vec<f64>> = Vec::with_capacity(k_classes);
    while centres.len() < k_classes {
        let c: Vec<f64> = if (centres.len() as u64) < corners / 2 {
            (0..n_features).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect()
        } else {
            let raw: Vec<f64> = (0..n_features).map(|_| rng.sample(StandardNormal)).collect();
            let norm = crate::matrix::norm(&raw).max(f64::MIN_POSITIVE);
            raw.iter().map(|v| v / norm * (n_features as f64).sqrt()).collect()
        };
        if !centres.contains(&c) {
            centres.push(c);
        }
    }
    let mut features = Vec::with_capacity(k_classes * n_per_class * n_features);
    let mut labels = Vec::with_capacity(k_classes * n_per_class);
    for (class, centre) in centres.iter().enumerate() {
        for _ in 0..n_per_class {
            for &m in centre {
                let z: f64 = rng.sample(StandardNormal);
                features.push(m + spread * z);
            }
            labels.push(class);
        }
    }
    Dataset::new(n_features, k_classes, features, labels)
}

/// Disjoint per-node sample indices covering the whole dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionPlan {
    pub assignments: Vec<Vec<usize>>,
    pub alpha: Option<f64>,
}

impl PartitionPlan {
    pub fn n_nodes(&self) -> usize {
        self.assignments.len()
    }

    /// Materialises each node's local dataset.
    pub fn node_datasets(&self, d: &Dataset) -> Result<Vec<Dataset>> {
        self.assignments.iter().map(|idx| d.subset(idx)).collect()
    }
}

fn check_partition_args(d: &Dataset, n_nodes: usize) -> Result<()> {
    if n_nodes < 2 {
        return Err(Error::InvalidConfig(format!("need at least 2 nodes, got {n_nodes}")));
    }
    if d.len() < n_nodes * d.n_classes() {
        return Err(Error::InvalidConfig(format!(
            "{} samples cannot give {n_nodes} nodes {} samples each",
            d.len(),
            d.n_classes()
        )));
    }
    Ok(())
}

/// Shuffle, then split into `n_nodes` contiguous chunks whose sizes differ by at most one.
pub fn partition_iid(d: &Dataset, n_nodes: usize, seed: u64) -> Result<PartitionPlan> {
    check_partition_args(d, n_nodes)?;
    let mut idx: Vec<usize> = (0..d.len()).collect();
    idx.shuffle(&mut seed::rng(seed));
    let base = d.len() / n_nodes;
    let extra = d.len() % n_nodes;
    let mut assignments = Vec::with_capacity(n_nodes);
    let mut start = 0;
    for node in 0..n_nodes {
        let size = base + usize::from(node < extra);
        assignments.push(idx[start..start + size].to_vec());
        start += size;
    }
    Ok(PartitionPlan { assignments, alpha: None })
}

/// Label-skewed split: per class, node shares are drawn from
/// `Dirichlet(alpha · 1)` and the (shuffled) class samples are cut at the
/// cumulative shares. The whole draw is repeated until every node holds at
/// least `K` samples.
pub fn partition_dirichlet(d: &Dataset, n_nodes: usize, alpha: f64, seed: u64) -> Result<PartitionPlan> {
    check_partition_args(d, n_nodes)?;
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidConfig(format!("alpha must be positive, got {alpha}")));
    }
    let gamma = Gamma::new(alpha, 1.0).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); d.n_classes()];
    for (i, &l) in d.labels().iter().enumerate() {
        by_class[l].push(i);
    }
    let mut rng = seed::rng(seed);
    for _ in 0..DIRICHLET_MAX_ATTEMPTS {
        let mut assignments = vec![Vec::new(); n_nodes];
        for members in &by_class {
            let shares = loop {
                let draws: Vec<f64> = (0..n_nodes).map(|_| gamma.sample(&mut rng)).collect();
                let total: f64 = draws.iter().sum();
                if total > 0.0 && total.is_finite() {
                    break draws.into_iter().map(|g| g / total).collect::<Vec<f64>>();
                }
            };
            let mut members = members.clone();
            members.shuffle(&mut rng);
            let m = members.len();
            let mut cum = 0.0;
            let mut start = 0;
            for (node, share) in shares.iter().enumerate() {
                cum += share;
                let end = if node + 1 == n_nodes { m } else { ((cum * m as f64) as usize).min(m) };
                let end = end.max(start);
                assignments[node].extend_from_slice(&members[start..end]);
                start = end;
            }
        }
        if assignments.iter().all(|a| a.len() >= d.n_classes()) {
            for a in &mut assignments {
                a.sort_unstable();
            }
            return Ok(PartitionPlan { assignments, alpha: Some(alpha) });
        }
    }
    Err(Error::PartitionFailed(format!(
        "no Dirichlet({alpha}) draw gave every node >= {} samples in {DIRICHLET_MAX_ATTEMPTS} attempts",
        d.n_classes()
    )))
}

/// Deterministic 80/20 train/holdout split of one node's local data.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeData {
    pub train: Dataset,
    /// Train and holdout together; the attacker-visible local dataset.
    pub full: Dataset,
}

impl NodeData {
    pub fn split(full: Dataset, seed: u64) -> Result<Self> {
        let mut idx: Vec<usize> = (0..full.len()).collect();
        idx.shuffle(&mut seed::rng(seed));
        let n_train = ((full.len() as f64 * TRAIN_FRACTION).floor() as usize).max(1);
        let mut train_idx = idx[..n_train].to_vec();
        train_idx.sort_unstable();
        Ok(Self { train: full.subset(&train_idx)?, full })
    }
}

/// Parses `f0,…,f{d-1},label` CSV. Labels may be any integers; they are
/// remapped in ascending order to `0..K`.
pub fn load_csv(text: &str) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut records = reader.records();
    let header = match records.next() {
        Some(rec) => rec.map_err(|e| csv_error(e, 1))?,
        None => return Err(Error::parse(1, "missing header")),
    };
    let d = header.len().saturating_sub(1);
    let header_ok = d >= 1
        && header.get(d) == Some("label")
        && (0..d).all(|j| header.get(j) == Some(format!("f{j}").as_str()));
    if !header_ok {
        return Err(Error::parse(1, "expected header f0,...,f{d-1},label"));
    }

    let mut features = Vec::new();
    let mut raw_labels = Vec::new();
    for rec in records {
        let rec = rec.map_err(|e| csv_error(e, 0))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != d + 1 {
            return Err(Error::parse(line, format!("expected {} fields, found {}", d + 1, rec.len())));
        }
        for j in 0..d {
            let v: f64 = rec[j]
                .parse()
                .map_err(|_| Error::parse(line, format!("non-numeric feature {:?}", &rec[j])))?;
            if !v.is_finite() {
                return Err(Error::parse(line, "non-finite feature"));
            }
            features.push(v);
        }
        let label: i64 = rec[d]
            .parse()
            .map_err(|_| Error::parse(line, format!("non-integer label {:?}", &rec[d])))?;
        raw_labels.push(label);
    }
    if raw_labels.is_empty() {
        return Err(Error::parse(2, "no data rows"));
    }
    let remap: BTreeMap<i64, usize> = raw_labels
        .iter()
        .copied()
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .enumerate()
        .map(|(i, l)| (l, i))
        .collect();
    let labels = raw_labels.iter().map(|l| remap[l]).collect();
    Dataset::new(d, remap.len(), features, labels)
}

fn csv_error(e: csv::Error, fallback: usize) -> Error {
    let line = e.position().map_or(fallback, |p| p.line() as usize);
    Error::parse(line, e.to_string())
}

/// Mean Shannon entropy (nats) of the per-node label histograms.
pub fn mean_label_entropy(plan: &PartitionPlan, d: &Dataset) -> f64 {
    let total: f64 = plan
        .assignments
        .iter()
        .map(|idx| {
            let mut counts = vec![0usize; d.n_classes()];
            for &i in idx {
                counts[d.label(i)] += 1;
            }
            let n = idx.len() as f64;
            counts
                .iter()
                .filter(|&&c| c > 0)
                .map(|&c| {
                    let p = c as f64 / n;
                    -p * p.ln()
                })
                .sum::<f64>()
        })
        .sum();
    total / plan.n_nodes() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_exact_partition(plan: &PartitionPlan, n: usize) {
        let mut all: Vec<usize> = plan.assignments.iter().flatten().copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..n).collect::<Vec<_>>());
    }

    #[test]
    fn blobs_are_balanced_and_deterministic() {
        let d = gen_blobs(4, 3, 50, 1.0, 1).unwrap();
        assert_eq!(d.len(), 200);
        assert_eq!(d.class_counts(), vec![50; 4]);
        assert_eq!(gen_blobs(3, 5, 20, 1.0, 9).unwrap(), gen_blobs(3, 5, 20, 1.0, 9).unwrap());
        assert!(gen_blobs(1, 3, 20, 1.0, 0).is_err());
        assert!(gen_blobs(2, 1, 20, 1.0, 0).is_err());
        assert!(gen_blobs(2, 3, 9, 1.0, 0).is_err());
        assert!(gen_blobs(2, 3, 10, 0.0, 0).is_err());
    }

    #[test]
    fn blobs_with_many_classes_in_low_dimension() {
        // 2 features give only 4 corners; later classes fall back to directions.
        let d = gen_blobs(6, 2, 10, 0.1, 4).unwrap();
        assert_eq!(d.class_counts(), vec![10; 6]);
    }

    #[test]
    fn iid_sizes() {
        let d = gen_blobs(2, 2, 50, 1.0, 0).unwrap();
        let plan = partition_iid(&d, 10, 3).unwrap();
        assert!(plan.assignments.iter().all(|a| a.len() == 10));
        assert_exact_partition(&plan, 100);

        let d = Dataset::new(1, 2, vec![0.0; 101], (0..101).map(|i| i % 2).collect()).unwrap();
        let plan = partition_iid(&d, 10, 3).unwrap();
        assert!(plan.assignments.iter().all(|a| a.len() == 10 || a.len() == 11));
        assert_exact_partition(&plan, 101);
        assert!(matches!(partition_iid(&d, 60, 0), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn dirichlet_is_reproducible_and_exact() {
        let d = gen_blobs(4, 2, 250, 1.0, 0).unwrap();
        let a = partition_dirichlet(&d, 10, 0.1, 5).unwrap();
        assert_eq!(a, partition_dirichlet(&d, 10, 0.1, 5).unwrap());
        assert_exact_partition(&a, 1000);
        assert!(a.assignments.iter().all(|x| x.len() >= 4));
    }

    #[test]
    fn dirichlet_gives_up_when_impossible() {
        // With α → 0 each class lands on a single node, so one of three nodes
        // is always left without the 2 samples it needs.
        let d = Dataset::new(1, 2, vec![0.0; 6], vec![0, 0, 0, 1, 1, 1]).unwrap();
        let r = partition_dirichlet(&d, 3, 1e-6, 1);
        assert!(matches!(r, Err(Error::PartitionFailed(_))), "{r:?}");
    }

    #[test]
    fn node_split_is_eighty_twenty() {
        let d = gen_blobs(2, 2, 25, 1.0, 0).unwrap();
        let nd = NodeData::split(d, 1).unwrap();
        assert_eq!(nd.train.len(), 40);
        assert_eq!(nd.full.len(), 50);
    }

    #[test]
    fn csv_examples() {
        let d = load_csv("f0,f1,label\n0.5,1.5,3\n-1,2,7\n").unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.labels(), &[0, 1]);
        assert_eq!(d.sample(1), &[-1.0, 2.0]);
        assert!(matches!(load_csv("0.5,1.5,3\n"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(load_csv("f0,f1,label\n1,2,0\n1,0\n"), Err(Error::Parse { line: 3, .. })));
        assert!(matches!(load_csv("f0,label\nabc,0\n"), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(load_csv("f0,label\n"), Err(Error::Parse { .. })));
        assert!(matches!(load_csv(""), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn csv_round_trip() {
        let d = gen_blobs(3, 4, 10, 0.7, 2).unwrap();
        assert_eq!(load_csv(&d.to_csv()).unwrap(), d);
    }
}
