//! FedAvg training loop with full per-round history retention.
//!
//! Every round, each client starts from the current global model, runs
//! `local_epochs` of seeded mini-batch SGD on its own samples, and the
//! server aggregates the locals by data-size weights `w_i = |D_i| / |D|`.
//! The entire parameter trajectory — per-round globals and every client's
//! locals — is kept; the attack pipeline mines it later.
//!
//! Local updates of distinct clients within a round are independent and run
//! on the rayon pool when the `parallel` feature is on; every client's batch
//! order comes from its own `(seed, round, client)`-derived generator, so
//! the result is identical either way.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::data::{gather_batch, AccessPhase, Dataset, Partition};
use crate::error::{Error, Result};
use crate::exec;
use crate::model::{self, LayerLayout, ParamVector};
use crate::seed::{self, Domain};

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

/// Federated training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FLConfig {
    /// Number of clients N.
    pub num_clients: usize,
    /// Training rounds T. Zero is allowed and yields an empty history.
    pub rounds: usize,
    /// Local epochs E per round.
    pub local_epochs: usize,
    /// Mini-batch size B.
    pub batch_size: usize,
    /// SGD learning rate.
    pub learning_rate: f64,
    /// Hidden layer widths of the classifier.
    pub hidden_dims: Vec<usize>,
    /// Base seed; all randomness (init, batch order) derives from it.
    pub seed: u64,
}

impl Default for FLConfig {
    fn default() -> Self {
        Self {
            num_clients: 10,
            rounds: 30,
            local_epochs: 1,
            batch_size: 32,
            learning_rate: 0.01,
            hidden_dims: vec![32],
            seed: 0,
        }
    }
}

impl FLConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_clients == 0 {
            return Err(Error::Config("num_clients must be positive".into()));
        }
        if self.local_epochs == 0 {
            return Err(Error::Config("local_epochs must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !self.learning_rate.is_finite() || self.learning_rate <= 0.0 {
            return Err(Error::Config(format!(
                "learning_rate must be finite and positive, got {}",
                self.learning_rate
            )));
        }
        if self.hidden_dims.iter().any(|&h| h == 0) {
            return Err(Error::Config("hidden_dims entries must be positive".into()));
        }
        Ok(())
    }

    /// The model layout for this config on the given dataset:
    /// `[feature_dim, hidden_dims..., num_classes]`.
    pub fn layout_for(&self, dataset: &Dataset) -> Result<Arc<LayerLayout>> {
        let mut dims = Vec::with_capacity(self.hidden_dims.len() + 2);
        dims.push(dataset.feature_dim());
        dims.extend_from_slice(&self.hidden_dims);
        dims.push(dataset.num_classes());
        LayerLayout::new(&dims)
    }
}

/// Data-size aggregation weights `w_i = |D_i| / Σ|D_j|`. Empty clients get
/// weight zero; the rest renormalize over whoever still holds data.
pub fn client_weights(sizes: &[usize]) -> Result<Vec<f64>> {
    let total: usize = sizes.iter().sum();
    if total == 0 {
        return Err(Error::Input("all clients are empty; no weights to assign".into()));
    }
    Ok(sizes.iter().map(|&s| s as f64 / total as f64).collect())
}

/// One client's round: `local_epochs` of mini-batch SGD from `global` over
/// its `indices`, batch order drawn from `rng`.
pub fn local_update(
    dataset: &Dataset,
    global: &ParamVector,
    indices: &[usize],
    epochs: usize,
    batch_size: usize,
    learning_rate: f64,
    rng: &mut ChaCha8Rng,
    phase: AccessPhase,
) -> Result<ParamVector> {
    if indices.is_empty() {
        return Err(Error::Input("local update needs at least one sample".into()));
    }
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    let mut params = global.clone();
    let mut order: Vec<usize> = indices.to_vec();
    for _ in 0..epochs {
        order.shuffle(rng);
        for chunk in order.chunks(batch_size) {
            let batch = gather_batch(dataset, chunk, phase)?;
            let (_, grad) = model::loss_and_grad(&params, &batch)?;
            params = model::sgd_step(&params, &grad, learning_rate)?;
        }
    }
    Ok(params)
}

/// Coordinatewise weighted sum of local models.
pub fn aggregate(locals: &[ParamVector], weights: &[f64]) -> Result<ParamVector> {
    if locals.is_empty() || locals.len() != weights.len() {
        return Err(Error::Config(format!(
            "aggregate needs matching nonempty locals/weights, got {} and {}",
            locals.len(),
            weights.len()
        )));
    }
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::Config("aggregation weights must be finite and nonnegative".into()));
    }
    let sum: f64 = weights.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("aggregation weights sum to {sum}, expected 1")));
    }
    let first = &locals[0];
    for l in locals.iter().skip(1) {
        if !first.same_layout(l) {
            return Err(Error::Config("aggregate: locals disagree on layout".into()));
        }
    }
    let mut values = vec![0.0; first.len()];
    for (local, &w) in locals.iter().zip(weights) {
        for (acc, &v) in values.iter_mut().zip(local.values()) {
            *acc += w * v;
        }
    }
    ParamVector::from_values(first.layout(), values)
}

/// One round of federated training: what the server saw and produced.
#[derive(Debug, Clone)]
pub struct RoundRecord {
    pub round: usize,
    /// Global model distributed at the start of the round.
    pub global_before: ParamVector,
    /// Each client's model after local training (clients without data hand
    /// back the distributed global unchanged).
    pub locals: Vec<ParamVector>,
    /// Aggregation weights used this round.
    pub weights: Vec<f64>,
    /// Aggregated global model ending the round.
    pub global_after: ParamVector,
}

/// The full parameter trajectory of one federated run.
#[derive(Debug, Clone)]
pub struct FederationHistory {
    pub config: FLConfig,
    /// Per-client sample counts the weights derive from.
    pub client_sizes: Vec<usize>,
    /// The seeded initial global model (round 0's `global_before`).
    pub initial: ParamVector,
    pub rounds: Vec<RoundRecord>,
}

impl FederationHistory {
    /// The final global model: last round's aggregate, or the initial model
    /// when no rounds ran.
    pub fn final_global(&self) -> &ParamVector {
        self.rounds.last().map_or(&self.initial, |r| &r.global_after)
    }

    pub fn num_rounds(&self) -> usize {
        self.rounds.len()
    }

    pub fn num_clients(&self) -> usize {
        self.client_sizes.len()
    }

    pub fn layout(&self) -> &Arc<LayerLayout> {
        self.initial.layout()
    }

    /// Aggregation weights implied by the recorded client sizes.
    pub fn weights(&self) -> Result<Vec<f64>> {
        client_weights(&self.client_sizes)
    }
}

/// Runs `rounds` FedAvg rounds from `initial` over the given per-client
/// index lists. Clients with empty lists ride along with weight zero and
/// locals equal to the distributed global. Batch order derives from
/// `(batch_seed_base, round, client)`; `phase` tags every data access.
pub fn run_fl(
    dataset: &Dataset,
    clients: &[Vec<usize>],
    config: &FLConfig,
    rounds: usize,
    initial: ParamVector,
    batch_seed_base: u64,
    phase: AccessPhase,
) -> Result<FederationHistory> {
    config.validate()?;
    if clients.len() != config.num_clients {
        return Err(Error::Config(format!(
            "config expects {} clients, partition has {}",
            config.num_clients,
            clients.len()
        )));
    }
    if initial.layout().input_dim() != dataset.feature_dim()
        || initial.layout().num_classes() != dataset.num_classes()
    {
        return Err(Error::Config(
            "initial model layout does not fit the dataset".into(),
        ));
    }
    let client_sizes: Vec<usize> = clients.iter().map(Vec::len).collect();
    let weights = client_weights(&client_sizes)?;

    let mut history = FederationHistory {
        config: config.clone(),
        client_sizes,
        initial: initial.clone(),
        rounds: Vec::with_capacity(rounds),
    };
    let mut global = initial;
    for round in 0..rounds {
        let global_before = global;
        let locals: Vec<Result<ParamVector>> = exec::map_indexed(clients.len(), |k| {
            if clients[k].is_empty() {
                return Ok(global_before.clone());
            }
            let mut rng = seed::rng(
                batch_seed_base,
                Domain::BatchOrder { round: round as u64, client: k as u64 },
            );
            local_update(
                dataset,
                &global_before,
                &clients[k],
                config.local_epochs,
                config.batch_size,
                config.learning_rate,
                &mut rng,
                phase,
            )
        });
        let locals: Vec<ParamVector> = locals.into_iter().collect::<Result<_>>()?;
        let global_after = aggregate(&locals, &weights)?;
        history.rounds.push(RoundRecord {
            round,
            global_before,
            locals,
            weights: weights.clone(),
            global_after: global_after.clone(),
        });
        global = global_after;
    }
    Ok(history)
}

/// Full federated training: seeded init from `config.seed`, then
/// `config.rounds` rounds over the partition.
pub fn train(dataset: &Dataset, partition: &Partition, config: &FLConfig) -> Result<FederationHistory> {
    config.validate()?;
    if partition.num_clients() != config.num_clients {
        return Err(Error::Config(format!(
            "config expects {} clients, partition has {}",
            config.num_clients,
            partition.num_clients()
        )));
    }
    let layout = config.layout_for(dataset)?;
    let initial = model::init_params(&layout, config.seed);
    run_fl(
        dataset,
        partition.clients(),
        config,
        config.rounds,
        initial,
        config.seed,
        AccessPhase::Train,
    )
}

/// Mean loss of `params` over the given dataset indices.
pub fn dataset_loss(dataset: &Dataset, params: &ParamVector, indices: &[usize]) -> Result<f64> {
    let batch = gather_batch(dataset, indices, AccessPhase::Eval)?;
    let (loss, _) = model::loss_and_grad(params, &batch)?;
    Ok(loss)
}

/// Accuracy of `params` over the given dataset indices.
pub fn dataset_accuracy(dataset: &Dataset, params: &ParamVector, indices: &[usize]) -> Result<f64> {
    let batch = gather_batch(dataset, indices, AccessPhase::Eval)?;
    model::accuracy(params, &batch)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gen_synthetic;
    use rand_chacha::rand_core::SeedableRng;

    fn small_setup() -> (Dataset, Partition, FLConfig) {
        let dataset = gen_synthetic(4, 30, 6, 0.4, 5).unwrap();
        let partition = crate::data::partition_iid(&dataset, 4, 5).unwrap();
        let config = FLConfig {
            num_clients: 4,
            rounds: 3,
            hidden_dims: vec![8],
            seed: 5,
            ..FLConfig::default()
        };
        (dataset, partition, config)
    }

    #[test]
    fn weights_are_proportional_and_normalized() {
        let w = client_weights(&[30, 70]).unwrap();
        assert_eq!(w, vec![0.3, 0.7]);
        let w = client_weights(&[10; 10]).unwrap();
        assert!(w.iter().all(|&x| (x - 0.1).abs() < 1e-15));
        assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-12);

        // Zero-size clients keep weight zero; the rest renormalize.
        let w = client_weights(&[0, 25, 75]).unwrap();
        assert_eq!(w, vec![0.0, 0.25, 0.75]);
        assert!(client_weights(&[0, 0]).is_err());
    }

    #[test]
    fn aggregate_identity_and_convexity() {
        let layout = LayerLayout::new(&[2, 3]).unwrap();
        let a = model::init_params(&layout, 1);
        let b = model::init_params(&layout, 2);

        let same = aggregate(&[a.clone(), a.clone()], &[0.5, 0.5]).unwrap();
        assert!(same.linf_distance(&a) <= 1e-12);

        let mean = aggregate(&[a.clone(), b.clone()], &[0.5, 0.5]).unwrap();
        for i in 0..mean.len() {
            let expect = 0.5 * a.values()[i] + 0.5 * b.values()[i];
            assert!((mean.values()[i] - expect).abs() <= 1e-12);
        }

        let first = aggregate(&[a.clone(), b.clone()], &[1.0, 0.0]).unwrap();
        assert_eq!(first.values(), a.values());

        assert!(aggregate(&[a.clone()], &[0.9]).is_err());
        assert!(aggregate(&[a], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn local_update_zero_eta_is_identity() {
        let (dataset, partition, config) = small_setup();
        let layout = config.layout_for(&dataset).unwrap();
        let global = model::init_params(&layout, 9);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let out = local_update(
            &dataset,
            &global,
            partition.client(0),
            1,
            8,
            0.0,
            &mut rng,
            AccessPhase::Train,
        )
        .unwrap();
        assert_eq!(out.values(), global.values());
    }

    #[test]
    fn single_full_batch_update_matches_one_sgd_step() {
        let (dataset, partition, config) = small_setup();
        let layout = config.layout_for(&dataset).unwrap();
        let global = model::init_params(&layout, 9);
        let indices = partition.client(1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let out = local_update(
            &dataset,
            &global,
            indices,
            1,
            indices.len(),
            0.05,
            &mut rng,
            AccessPhase::Train,
        )
        .unwrap();
        let batch = gather_batch(&dataset, indices, AccessPhase::Eval).unwrap();
        let (_, grad) = model::loss_and_grad(&global, &batch).unwrap();
        let expect = model::sgd_step(&global, &grad, 0.05).unwrap();
        // The shuffled batch accumulates sample gradients in a different
        // order, so allow accumulation-order rounding.
        assert!(out.linf_distance(&expect) < 1e-12);
    }

    #[test]
    fn local_update_is_seed_deterministic() {
        let (dataset, partition, config) = small_setup();
        let layout = config.layout_for(&dataset).unwrap();
        let global = model::init_params(&layout, 9);
        let run = |seed: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            local_update(
                &dataset,
                &global,
                partition.client(2),
                2,
                8,
                0.01,
                &mut rng,
                AccessPhase::Train,
            )
            .unwrap()
        };
        assert_eq!(run(7).values(), run(7).values());
        assert_ne!(run(7).values(), run(8).values());
    }

    #[test]
    fn run_fl_records_consistent_history() {
        let (dataset, partition, config) = small_setup();
        let history = train(&dataset, &partition, &config).unwrap();
        assert_eq!(history.num_rounds(), 3);
        assert_eq!(history.client_sizes, vec![30, 30, 30, 30]);

        for (r, record) in history.rounds.iter().enumerate() {
            assert_eq!(record.round, r);
            assert_eq!(record.locals.len(), 4);
            // Chain: each round starts exactly where the previous ended.
            let prev = if r == 0 { &history.initial } else { &history.rounds[r - 1].global_after };
            assert_eq!(record.global_before.values(), prev.values());
            // Aggregation identity.
            let recomputed = aggregate(&record.locals, &record.weights).unwrap();
            assert!(record.global_after.linf_distance(&recomputed) <= 1e-9);
            assert!((record.weights.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
        assert_eq!(history.final_global().values(), history.rounds[2].global_after.values());
    }

    #[test]
    fn run_fl_is_reproducible() {
        let (dataset, partition, config) = small_setup();
        let a = train(&dataset, &partition, &config).unwrap();
        let b = train(&dataset, &partition, &config).unwrap();
        assert_eq!(a.final_global().values(), b.final_global().values());
        for (ra, rb) in a.rounds.iter().zip(&b.rounds) {
            for (la, lb) in ra.locals.iter().zip(&rb.locals) {
                assert_eq!(la.values(), lb.values());
            }
        }
    }

    #[test]
    fn zero_rounds_returns_initial() {
        let (dataset, partition, mut config) = small_setup();
        config.rounds = 0;
        let history = train(&dataset, &partition, &config).unwrap();
        assert_eq!(history.num_rounds(), 0);
        let layout = config.layout_for(&dataset).unwrap();
        let expect = model::init_params(&layout, config.seed);
        assert_eq!(history.final_global().values(), expect.values());
    }

    #[test]
    fn single_client_global_equals_local() {
        let dataset = gen_synthetic(3, 20, 4, 0.4, 2).unwrap();
        let partition = crate::data::partition_iid(&dataset, 1, 2).unwrap();
        let config = FLConfig {
            num_clients: 1,
            rounds: 2,
            hidden_dims: vec![5],
            seed: 2,
            ..FLConfig::default()
        };
        let history = train(&dataset, &partition, &config).unwrap();
        for record in &history.rounds {
            assert_eq!(record.global_after.values(), record.locals[0].values());
        }
    }

    #[test]
    fn empty_client_rides_along() {
        let dataset = gen_synthetic(3, 20, 4, 0.4, 3).unwrap();
        let config = FLConfig {
            num_clients: 3,
            rounds: 2,
            hidden_dims: vec![5],
            seed: 3,
            ..FLConfig::default()
        };
        let layout = config.layout_for(&dataset).unwrap();
        let initial = model::init_params(&layout, 3);
        let clients: Vec<Vec<usize>> = vec![(0..30).collect(), vec![], (30..60).collect()];
        let history =
            run_fl(&dataset, &clients, &config, 2, initial, 3, AccessPhase::Train).unwrap();
        for record in &history.rounds {
            assert_eq!(record.locals[1].values(), record.global_before.values());
            assert_eq!(record.weights[1], 0.0);
        }
    }

    #[test]
    fn training_reduces_loss_substantially() {
        let dataset = gen_synthetic(10, 60, 20, 0.3, 41).unwrap();
        let partition = crate::data::partition_iid(&dataset, 10, 41).unwrap();
        let config = FLConfig { learning_rate: 0.1, seed: 41, ..FLConfig::default() };
        let history = train(&dataset, &partition, &config).unwrap();
        let all: Vec<usize> = (0..dataset.len()).collect();
        let before = dataset_loss(&dataset, &history.initial, &all).unwrap();
        let after = dataset_loss(&dataset, history.final_global(), &all).unwrap();
        assert!(
            after <= 0.5 * before,
            "loss went {before} -> {after}, expected at least a 50% drop"
        );
    }

    #[test]
    fn config_validation_catches_bad_fields() {
        let mut c = FLConfig::default();
        c.learning_rate = 0.0;
        assert!(c.validate().is_err());
        let mut c = FLConfig::default();
        c.batch_size = 0;
        assert!(c.validate().is_err());
        let mut c = FLConfig::default();
        c.hidden_dims = vec![0];
        assert!(c.validate().is_err());
        // Zero rounds is allowed: it means "initial model only".
        let mut c = FLConfig::default();
        c.rounds = 0;
        assert!(c.validate().is_ok());
    }
}
