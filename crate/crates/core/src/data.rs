//! Datasets, client partitions, and unlearning requests.
//!
//! The synthetic corpus is a seeded Gaussian-blob classification task sized
//! for laptop runs. Real IDX-format corpora (images + labels) load through
//! [`idx`]. Partitioners split sample indices across clients either uniformly
//! or with Dirichlet label skew; [`apply_request`] turns an
//! [`UnlearningRequest`] into the forgotten/retained index split that the
//! unlearning strategies consume.
//!
//! Every place that turns dataset indices into a training [`Batch`] goes
//! through [`gather_batch`], which doubles as the instrumentation point for
//! the forgotten-data audit in [`audit`].

pub mod audit;
pub mod idx;

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::error::{Error, Result};
use crate::model::Batch;
use crate::seed::{self, Domain};

pub use audit::AccessPhase;

/// A labeled corpus: row-major features plus one class id per row.
#[derive(Debug, Clone)]
pub struct Dataset {
    features: Vec<f64>,
    labels: Vec<usize>,
    feature_dim: usize,
    num_classes: usize,
}

impl Dataset {
    pub fn new(
        features: Vec<f64>,
        feature_dim: usize,
        labels: Vec<usize>,
        num_classes: usize,
    ) -> Result<Self> {
        if feature_dim == 0 || num_classes == 0 {
            return Err(Error::Config(
                "feature dim and class count must be positive".into(),
            ));
        }
        if features.len() != feature_dim * labels.len() {
            return Err(Error::Config(format!(
                "dataset shape mismatch: {} values, {} labels, feature dim {}",
                features.len(),
                labels.len(),
                feature_dim
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::Input(format!(
                "label id {bad} out of range (C = {num_classes})"
            )));
        }
        Ok(Self { features, labels, feature_dim, num_classes })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.feature_dim..(i + 1) * self.feature_dim]
    }

    /// Indices of all samples carrying `class`.
    pub fn indices_of_class(&self, class: usize) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.labels[i] == class).collect()
    }

    /// Writes the corpus as CSV: feature columns `f0..f{d-1}` then `label`.
    pub fn export_csv<W: Write>(&self, out: &mut W) -> Result<()> {
        for j in 0..self.feature_dim {
            write!(out, "f{j},")?;
        }
        writeln!(out, "label")?;
        for i in 0..self.len() {
            for v in self.row(i) {
                write!(out, "{v:.16e},")?;
            }
            writeln!(out, "{}", self.label(i))?;
        }
        Ok(())
    }
}

/// Gathers dataset rows into a training batch and records the access in the
/// audit log when auditing is enabled. All batch construction from dataset
/// indices must flow through here.
pub fn gather_batch(dataset: &Dataset, indices: &[usize], phase: AccessPhase) -> Result<Batch> {
    if indices.is_empty() {
        return Err(Error::Input("cannot gather an empty batch".into()));
    }
    if let Some(&bad) = indices.iter().find(|&&i| i >= dataset.len()) {
        return Err(Error::Input(format!(
            "sample index {bad} out of range (dataset has {} rows)",
            dataset.len()
        )));
    }
    audit::record(phase, indices);
    let mut inputs = Vec::with_capacity(indices.len() * dataset.feature_dim());
    let mut labels = Vec::with_capacity(indices.len());
    for &i in indices {
        inputs.extend_from_slice(dataset.row(i));
        labels.push(dataset.label(i));
    }
    Batch::new(inputs, dataset.feature_dim(), labels)
}

/// Synthetic Gaussian-blob corpus: one mean per class drawn uniformly from
/// `[-1, 1]^d`, then exactly `samples_per_class` rows per class as
/// `mean + spread * N(0, I)`. Row order is a seeded shuffle so class runs
/// don't align with contiguous index ranges.
pub fn gen_synthetic(
    num_classes: usize,
    samples_per_class: usize,
    feature_dim: usize,
    spread: f64,
    base_seed: u64,
) -> Result<Dataset> {
    if num_classes < 2 {
        return Err(Error::Input(format!(
            "need at least 2 classes, got {num_classes}"
        )));
    }
    if samples_per_class == 0 || feature_dim == 0 {
        return Err(Error::Input(
            "samples per class and feature dim must be positive".into(),
        ));
    }
    if !spread.is_finite() || spread < 0.0 {
        return Err(Error::Input(format!(
            "spread must be finite and non-negative, got {spread}"
        )));
    }
    let mut rng = seed::rng(base_seed, Domain::Dataset);
    let means: Vec<f64> =
        (0..num_classes * feature_dim).map(|_| rng.random_range(-1.0..1.0)).collect();

    let total = num_classes * samples_per_class;
    let mut rows: Vec<(Vec<f64>, usize)> = Vec::with_capacity(total);
    for class in 0..num_classes {
        let mean = &means[class * feature_dim..(class + 1) * feature_dim];
        for _ in 0..samples_per_class {
            let x: Vec<f64> = mean
                .iter()
                .map(|&m| {
                    m + spread
                        * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)
                })
                .collect();
            rows.push((x, class));
        }
    }
    rows.shuffle(&mut rng);

    let mut features = Vec::with_capacity(total * feature_dim);
    let mut labels = Vec::with_capacity(total);
    for (x, y) in rows {
        features.extend(x);
        labels.push(y);
    }
    Dataset::new(features, feature_dim, labels, num_classes)
}

/// Assignment of dataset indices to clients. Client lists are sorted,
/// pairwise disjoint, nonempty, and cover the whole dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    clients: Vec<Vec<usize>>,
}

impl Partition {
    /// Validates disjointness, coverage, and nonemptiness against
    /// `dataset_len`.
    pub fn new(mut clients: Vec<Vec<usize>>, dataset_len: usize) -> Result<Self> {
        if clients.is_empty() {
            return Err(Error::Config("partition needs at least one client".into()));
        }
        if clients.iter().any(Vec::is_empty) {
            return Err(Error::Config("every client must hold at least one sample".into()));
        }
        let mut seen = BTreeSet::new();
        for list in &mut clients {
            list.sort_unstable();
            for &i in list.iter() {
                if i >= dataset_len {
                    return Err(Error::Input(format!(
                        "sample index {i} out of range (dataset has {dataset_len} rows)"
                    )));
                }
                if !seen.insert(i) {
                    return Err(Error::Input(format!(
                        "sample index {i} assigned to more than one client"
                    )));
                }
            }
        }
        if seen.len() != dataset_len {
            return Err(Error::Input(format!(
                "partition covers {} of {dataset_len} samples",
                seen.len()
            )));
        }
        Ok(Self { clients })
    }

    pub fn num_clients(&self) -> usize {
        self.clients.len()
    }

    pub fn client(&self, k: usize) -> &[usize] {
        &self.clients[k]
    }

    pub fn clients(&self) -> &[Vec<usize>] {
        &self.clients
    }

    pub fn total_samples(&self) -> usize {
        self.clients.iter().map(Vec::len).sum()
    }

    /// Drops the listed indices from every client. Clients left without data
    /// keep an empty list, so the result is no longer a valid [`Partition`]
    /// on purpose — post-unlearning client lists are allowed to be empty.
    pub fn without(&self, removed: &BTreeSet<usize>) -> Vec<Vec<usize>> {
        self.clients
            .iter()
            .map(|list| list.iter().copied().filter(|i| !removed.contains(i)).collect())
            .collect()
    }
}

/// Splits `0..dataset.len()` into `num_clients` near-equal shuffled shards
/// (sizes differ by at most one).
pub fn partition_iid(dataset: &Dataset, num_clients: usize, base_seed: u64) -> Result<Partition> {
    if num_clients == 0 {
        return Err(Error::Config("need at least one client".into()));
    }
    if dataset.len() < num_clients {
        return Err(Error::Input(format!(
            "cannot spread {} samples over {num_clients} clients",
            dataset.len()
        )));
    }
    let mut rng = seed::rng(base_seed, Domain::Partition);
    let mut indices: Vec<usize> = (0..dataset.len()).collect();
    indices.shuffle(&mut rng);

    let base = dataset.len() / num_clients;
    let extra = dataset.len() % num_clients;
    let mut clients = Vec::with_capacity(num_clients);
    let mut cursor = 0;
    for k in 0..num_clients {
        let take = base + usize::from(k < extra);
        clients.push(indices[cursor..cursor + take].to_vec());
        cursor += take;
    }
    Partition::new(clients, dataset.len())
}

/// Draws one Dirichlet(alpha, ..., alpha) sample of length `n` by
/// normalizing Gamma(alpha, 1) draws.
fn dirichlet_sample<R: Rng>(rng: &mut R, n: usize, alpha: f64) -> Vec<f64> {
    let gamma = Gamma::new(alpha, 1.0).expect("alpha validated by caller");
    loop {
        let draws: Vec<f64> = (0..n).map(|_| gamma.sample(rng)).collect();
        let sum: f64 = draws.iter().sum();
        // Tiny alpha can underflow every draw to zero; redraw instead of
        // dividing by zero.
        if sum > 0.0 && sum.is_finite() {
            return draws.into_iter().map(|d| d / sum).collect();
        }
    }
}

/// Splits integer `total` in proportion to `props` using largest remainders,
/// so the counts sum exactly to `total`.
pub(crate) fn largest_remainder_counts(props: &[f64], total: usize) -> Vec<usize> {
    let raw: Vec<f64> = props.iter().map(|p| p * total as f64).collect();
    let mut counts: Vec<usize> = raw.iter().map(|r| r.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..props.len()).collect();
    // Largest fractional part first; ties to the lower index for determinism.
    order.sort_by(|&a, &b| {
        let fa = raw[a] - raw[a].floor();
        let fb = raw[b] - raw[b].floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    for &i in order.iter().take(total - assigned) {
        counts[i] += 1;
    }
    counts
}

/// Label-skewed split: for each class, client shares are one
/// Dirichlet(alpha) draw, and the class's samples are dealt out by largest
/// remainders. Small alpha concentrates each class on few clients; large
/// alpha approaches the uniform split. Clients left empty afterwards take
/// one sample from the largest client so every client participates.
pub fn partition_dirichlet(
    dataset: &Dataset,
    num_clients: usize,
    alpha: f64,
    base_seed: u64,
) -> Result<Partition> {
    if num_clients == 0 {
        return Err(Error::Config("need at least one client".into()));
    }
    if dataset.len() < num_clients {
        return Err(Error::Input(format!(
            "cannot spread {} samples over {num_clients} clients",
            dataset.len()
        )));
    }
    if !alpha.is_finite() || alpha <= 0.0 {
        return Err(Error::Input(format!(
            "dirichlet alpha must be finite and positive, got {alpha}"
        )));
    }
    let mut rng = seed::rng(base_seed, Domain::Partition);
    let mut clients: Vec<Vec<usize>> = vec![Vec::new(); num_clients];
    for class in 0..dataset.num_classes() {
        let mut members = dataset.indices_of_class(class);
        if members.is_empty() {
            continue;
        }
        members.shuffle(&mut rng);
        let shares = dirichlet_sample(&mut rng, num_clients, alpha);
        let counts = largest_remainder_counts(&shares, members.len());
        let mut cursor = 0;
        for (k, &count) in counts.iter().enumerate() {
            clients[k].extend_from_slice(&members[cursor..cursor + count]);
            cursor += count;
        }
    }
    // Rebalance so no client is empty: donate from the largest client.
    loop {
        let Some(empty) = clients.iter().position(Vec::is_empty) else { break };
        let donor = (0..num_clients)
            .max_by_key(|&k| clients[k].len())
            .expect("at least one client");
        if clients[donor].len() < 2 {
            return Err(Error::Input(
                "dirichlet split cannot give every client a sample".into(),
            ));
        }
        let moved = clients[donor].pop().unwrap();
        clients[empty].push(moved);
    }
    Partition::new(clients, dataset.len())
}

/// Granularity of an unlearning request.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RequestLevel {
    /// Forget specific sample indices, all held by the target client.
    Samples(Vec<usize>),
    /// Forget every sample of the listed classes, across all clients.
    Classes(Vec<usize>),
    /// Forget everything the target client holds.
    Client,
}

impl RequestLevel {
    pub fn name(&self) -> &'static str {
        match self {
            RequestLevel::Samples(_) => "sample",
            RequestLevel::Classes(_) => "class",
            RequestLevel::Client => "client",
        }
    }
}

/// What should be forgotten, and which client asked. The target client is
/// also the client whose local model the attack later inspects.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnlearningRequest {
    pub target_client: usize,
    pub level: RequestLevel,
}

/// The resolved forgotten/retained split plus per-client retained lists.
#[derive(Debug, Clone)]
pub struct ResolvedRequest {
    /// Sorted global indices to forget.
    pub forgotten: Vec<usize>,
    /// Sorted global indices to keep.
    pub retained: Vec<usize>,
    /// Retained indices per client; empty lists mark clients that lost
    /// everything.
    pub retained_by_client: Vec<Vec<usize>>,
    /// Label categories represented in the forgotten set (the attack's
    /// ground truth).
    pub forgotten_classes: Vec<usize>,
}

/// Resolves a request against a dataset and partition. Rejects empty
/// requests, out-of-range ids, sample ids not held by the target client,
/// requests that would strip the target client bare at sample level, and
/// requests that would leave no retained data anywhere.
pub fn apply_request(
    dataset: &Dataset,
    partition: &Partition,
    request: &UnlearningRequest,
) -> Result<ResolvedRequest> {
    let target = request.target_client;
    if target >= partition.num_clients() {
        return Err(Error::Input(format!(
            "target client {target} out of range ({} clients)",
            partition.num_clients()
        )));
    }
    let forgotten: BTreeSet<usize> = match &request.level {
        RequestLevel::Client => partition.client(target).iter().copied().collect(),
        RequestLevel::Classes(classes) => {
            if classes.is_empty() {
                return Err(Error::Input("class-level request lists no classes".into()));
            }
            let mut set = BTreeSet::new();
            for &class in classes {
                if class >= dataset.num_classes() {
                    return Err(Error::Input(format!(
                        "class id {class} out of range (C = {})",
                        dataset.num_classes()
                    )));
                }
                set.extend(dataset.indices_of_class(class));
            }
            // A class with no samples resolves to an empty forgotten set;
            // that is a legitimate no-op request (replay-style strategies
            // use it as a self-consistency probe).
            set
        }
        RequestLevel::Samples(indices) => {
            if indices.is_empty() {
                return Err(Error::Input("sample-level request lists no samples".into()));
            }
            let held: BTreeSet<usize> = partition.client(target).iter().copied().collect();
            let mut set = BTreeSet::new();
            for &i in indices {
                if !held.contains(&i) {
                    return Err(Error::Input(format!(
                        "sample id {i} is not held by client {target}"
                    )));
                }
                set.insert(i);
            }
            if set.len() == held.len() {
                return Err(Error::Input(format!(
                    "sample-level request would remove all of client {target}'s data; \
                     use a client-level request instead"
                )));
            }
            set
        }
    };

    if forgotten.len() == dataset.len() {
        return Err(Error::Input("request would forget the entire dataset".into()));
    }

    let retained_by_client = partition.without(&forgotten);
    let retained: Vec<usize> = (0..dataset.len()).filter(|i| !forgotten.contains(i)).collect();
    let forgotten_classes: BTreeSet<usize> = forgotten.iter().map(|&i| dataset.label(i)).collect();

    Ok(ResolvedRequest {
        forgotten: forgotten.into_iter().collect(),
        retained,
        retained_by_client,
        forgotten_classes: forgotten_classes.into_iter().collect(),
    })
}

/// Builds a sample-level request for `target_client`: forget `fraction` of
/// its holdings, drawn from `categories` in as equal per-category counts as
/// the largest-remainder split allows, sampled uniformly without
/// replacement within each category. Per-category quotas are capped at what
/// the client holds, so the request shrinks when the categories cannot
/// supply the full fraction. The client always keeps at least one sample.
pub fn sample_request_for_client(
    dataset: &Dataset,
    partition: &Partition,
    target_client: usize,
    categories: &[usize],
    fraction: f64,
    base_seed: u64,
) -> Result<UnlearningRequest> {
    if target_client >= partition.num_clients() {
        return Err(Error::Input(format!(
            "client id {target_client} out of range ({} clients)",
            partition.num_clients()
        )));
    }
    if categories.is_empty() {
        return Err(Error::Input("sample request needs at least one category".into()));
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!("fraction must lie in (0, 1], got {fraction}")));
    }
    let held = partition.client(target_client);
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &i in held {
        by_class.entry(dataset.label(i)).or_default().push(i);
    }
    for &cat in categories {
        if cat >= dataset.num_classes() {
            return Err(Error::Input(format!(
                "class id {cat} out of range (C = {})",
                dataset.num_classes()
            )));
        }
        if !by_class.contains_key(&cat) {
            return Err(Error::Input(format!(
                "client {target_client} holds no samples of class {cat}"
            )));
        }
    }

    let total = ((held.len() as f64 * fraction).round() as usize).clamp(1, held.len() - 1);
    let even = vec![1.0 / categories.len() as f64; categories.len()];
    let mut wanted = largest_remainder_counts(&even, total);
    // Cap each category at what the client actually holds; push overflow to
    // the remaining categories in order.
    let mut overflow = 0usize;
    for (slot, &cat) in categories.iter().enumerate() {
        let avail = by_class[&cat].len();
        if wanted[slot] > avail {
            overflow += wanted[slot] - avail;
            wanted[slot] = avail;
        }
    }
    for (slot, &cat) in categories.iter().enumerate() {
        if overflow == 0 {
            break;
        }
        let room = by_class[&cat].len() - wanted[slot];
        let take = room.min(overflow);
        wanted[slot] += take;
        overflow -= take;
    }
    // Overflow still left means the categories cannot supply the full
    // fraction; the request shrinks to what they hold.

    let mut rng = seed::rng(base_seed, Domain::TrialChoices);
    let mut indices = Vec::with_capacity(total);
    for (slot, &cat) in categories.iter().enumerate() {
        if wanted[slot] == 0 {
            continue;
        }
        let mut pool = by_class[&cat].clone();
        pool.shuffle(&mut rng);
        indices.extend_from_slice(&pool[..wanted[slot]]);
    }
    indices.sort_unstable();
    Ok(UnlearningRequest { target_client, level: RequestLevel::Samples(indices) })
}
