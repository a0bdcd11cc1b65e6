//! The three unlearning strategies: FedEraser-style calibrated replay,
//! full retraining, and gradient ascent with an elastic-weight-consolidation
//! guard.
//!
//! Each strategy consumes the training history, the original partition, and
//! an [`UnlearningRequest`], and produces the post-unlearning global model
//! together with the target client's post-unlearning local model — the two
//! "after" states the attack pipeline compares against their "before"
//! counterparts. The local "after" state follows one rule for every
//! strategy: the target re-runs a standard local update on its retained
//! data, starting from the pre-unlearning global it already holds — the
//! first local step it would take once its request is honored. A target
//! with no retained data receives the post-unlearning global instead.
//! Strategies never read forgotten samples during retraining, calibration,
//! Fisher estimation, fine-tuning, or that final local step; only the
//! gradient-ascent phase touches them, by design.

use crate::data::{
    apply_request, gather_batch, AccessPhase, Dataset, Partition, ResolvedRequest,
    UnlearningRequest,
};
use crate::error::{Error, Result};
use crate::exec;
use crate::federation::{
    aggregate, client_weights, local_update, run_fl, FederationHistory,
};
use crate::model::{self, ParamVector};
use crate::seed::{self, Domain};

use rand::seq::SliceRandom;

/// Which unlearning strategy produced an outcome.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    FedEraser,
    Retrain,
    SgaEwc,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::FedEraser => "federaser",
            Method::Retrain => "retrain",
            Method::SgaEwc => "sga_ewc",
        }
    }

    pub fn all() -> [Method; 3] {
        [Method::FedEraser, Method::Retrain, Method::SgaEwc]
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "federaser" => Ok(Method::FedEraser),
            "retrain" => Ok(Method::Retrain),
            "sga_ewc" => Ok(Method::SgaEwc),
            other => Err(Error::Config(format!(
                "unknown unlearning method {other:?} (expected federaser, retrain, or sga_ewc)"
            ))),
        }
    }
}

/// Strategy hyperparameters, bundled for the dispatching entry point.
#[derive(Debug, Clone, PartialEq)]
pub struct UnlearnConfig {
    /// FedEraser calibration epochs per replayed round (must not exceed the
    /// training config's local epochs).
    pub calibration_epochs: usize,
    /// Gradient-ascent steps on the forgotten set.
    pub ascent_steps: usize,
    /// Strength of the elastic-weight-consolidation pull toward the trained
    /// model.
    pub lambda_ewc: f64,
    /// FedAvg rounds on retained data after the ascent phase.
    pub fine_tune_rounds: usize,
}

impl Default for UnlearnConfig {
    fn default() -> Self {
        Self { calibration_epochs: 1, ascent_steps: 20, lambda_ewc: 1.0, fine_tune_rounds: 5 }
    }
}

/// Fisher estimation never reads more than this many retained samples.
pub const FISHER_MAX_SAMPLES: usize = 1024;

/// What an unlearning strategy hands back: the post-unlearning global, the
/// target client's post-unlearning local model, and the bookkeeping the
/// attack and its evaluation need.
#[derive(Debug, Clone)]
pub struct UnlearnOutcome {
    pub method: Method,
    /// The post-unlearning global model.
    pub global_after: ParamVector,
    /// The target client's first post-unlearning local model: one standard
    /// local update on its retained data, starting from the pre-unlearning
    /// global. When the target holds no retained data, this is the
    /// post-unlearning global itself.
    pub target_local_after: ParamVector,
    pub target_client: usize,
    /// Label categories of the forgotten set — the attack's ground truth.
    pub forgotten_classes: Vec<usize>,
    /// Retained indices per client after the request; empty lists mark
    /// clients that lost everything.
    pub retained_by_client: Vec<Vec<usize>>,
    /// Rounds the strategy ran (replayed, retrained, or fine-tuned).
    pub rounds_used: usize,
}

/// Dispatches to the chosen strategy.
pub fn unlearn(
    method: Method,
    history: &FederationHistory,
    dataset: &Dataset,
    partition: &Partition,
    request: &UnlearningRequest,
    config: &UnlearnConfig,
) -> Result<UnlearnOutcome> {
    match method {
        Method::FedEraser => {
            unlearn_federaser(history, dataset, partition, request, config.calibration_epochs)
        }
        Method::Retrain => unlearn_retrain(history, dataset, partition, request),
        Method::SgaEwc => unlearn_sga_ewc(
            history,
            dataset,
            partition,
            request,
            config.ascent_steps,
            config.lambda_ewc,
            config.fine_tune_rounds,
        ),
    }
}

/// The target's first local model after its request is honored: a standard
/// local update (the training config's epochs, batch size, and rate) on its
/// retained data, starting from the pre-unlearning global it already holds.
/// A target with no retained data has nothing to update and keeps the
/// distributed post-unlearning global instead.
pub fn post_unlearning_local(
    history: &FederationHistory,
    dataset: &Dataset,
    retained: &[usize],
    target_client: usize,
    global_after: &ParamVector,
) -> Result<ParamVector> {
    if retained.is_empty() {
        return Ok(global_after.clone());
    }
    let config = &history.config;
    let mut rng =
        seed::rng(config.seed, Domain::PostLocal { client: target_client as u64 });
    local_update(
        dataset,
        history.final_global(),
        retained,
        config.local_epochs,
        config.batch_size,
        config.learning_rate,
        &mut rng,
        AccessPhase::PostUpdate,
    )
}

fn finish(
    method: Method,
    history: &FederationHistory,
    dataset: &Dataset,
    resolved: ResolvedRequest,
    target_client: usize,
    global_after: ParamVector,
    rounds_used: usize,
) -> Result<UnlearnOutcome> {
    let target_local_after = post_unlearning_local(
        history,
        dataset,
        &resolved.retained_by_client[target_client],
        target_client,
        &global_after,
    )?;
    Ok(UnlearnOutcome {
        method,
        global_after,
        target_local_after,
        target_client,
        forgotten_classes: resolved.forgotten_classes,
        retained_by_client: resolved.retained_by_client,
        rounds_used,
    })
}

/// Calibrated replay: walks the recorded rounds from the initial global,
/// letting each retained client compute a short calibration update from the
/// current reconstructed global; the replayed update keeps the *magnitude*
/// of the client's stored historical update but takes the *direction* of
/// its calibration update. Aggregation renormalizes weights over retained
/// clients. A near-zero calibration direction replays as a zero update.
pub fn unlearn_federaser(
    history: &FederationHistory,
    dataset: &Dataset,
    partition: &Partition,
    request: &UnlearningRequest,
    calibration_epochs: usize,
) -> Result<UnlearnOutcome> {
    if history.num_rounds() == 0 {
        return Err(Error::Input("calibrated replay needs at least one recorded round".into()));
    }
    if calibration_epochs == 0 || calibration_epochs > history.config.local_epochs {
        return Err(Error::Config(format!(
            "calibration_epochs must lie in 1..={}, got {calibration_epochs}",
            history.config.local_epochs
        )));
    }
    let resolved = apply_request(dataset, partition, request)?;
    let retained = &resolved.retained_by_client;
    let sizes: Vec<usize> = retained.iter().map(Vec::len).collect();
    let weights = client_weights(&sizes)?;
    let config = &history.config;
    let base = config.seed;

    let mut global = history.initial.clone();
    for record in &history.rounds {
        let reference = &global;
        let locals: Vec<Result<ParamVector>> =
            exec::map_indexed(retained.len(), |k| {
                if retained[k].is_empty() {
                    return Ok(reference.clone());
                }
                let mut rng = seed::rng(
                    base,
                    Domain::Calibration { round: record.round as u64, client: k as u64 },
                );
                let calibrated = local_update(
                    dataset,
                    reference,
                    &retained[k],
                    calibration_epochs,
                    config.batch_size,
                    config.learning_rate,
                    &mut rng,
                    AccessPhase::Calibrate,
                )?;
                let cal_delta = calibrated.sub(reference)?;
                let cal_norm = cal_delta.l2_norm();
                if cal_norm <= 1e-12 {
                    return Ok(reference.clone());
                }
                let stored_norm =
                    record.locals[k].sub(&record.global_before)?.l2_norm();
                reference.add_scaled(&cal_delta, stored_norm / cal_norm)
            });
        let locals: Vec<ParamVector> = locals.into_iter().collect::<Result<_>>()?;
        global = aggregate(&locals, &weights)?;
    }
    let rounds = history.num_rounds();
    let target = request.target_client;
    finish(Method::FedEraser, history, dataset, resolved, target, global, rounds)
}

/// Full retraining on retained data: the training procedure restarts from
/// the run's seeded round-0 initialization and walks the same number of
/// rounds with the same seed streams, only without the forgotten samples.
/// Reusing the initialization keeps the retrained model comparable to the
/// original one coordinate by coordinate — the two runs differ only where
/// the forgotten data exerted influence, which is exactly what retraining
/// is meant to erase.
pub fn unlearn_retrain(
    history: &FederationHistory,
    dataset: &Dataset,
    partition: &Partition,
    request: &UnlearningRequest,
) -> Result<UnlearnOutcome> {
    let resolved = apply_request(dataset, partition, request)?;
    let config = &history.config;
    let rerun = run_fl(
        dataset,
        &resolved.retained_by_client,
        config,
        config.rounds,
        history.initial.clone(),
        config.seed,
        AccessPhase::Retrain,
    )?;
    let global = rerun.final_global().clone();
    let target = request.target_client;
    finish(Method::Retrain, history, dataset, resolved, target, global, config.rounds)
}

/// Diagonal Fisher information of the loss at `params`, estimated as the
/// mean squared per-sample gradient over at most [`FISHER_MAX_SAMPLES`]
/// retained samples (seeded subsample when there are more).
fn fisher_diagonal(
    dataset: &Dataset,
    params: &ParamVector,
    retained: &[usize],
    base_seed: u64,
) -> Result<Vec<f64>> {
    let mut pool: Vec<usize> = retained.to_vec();
    if pool.len() > FISHER_MAX_SAMPLES {
        let mut rng = seed::rng(base_seed, Domain::Fisher);
        pool.shuffle(&mut rng);
        pool.truncate(FISHER_MAX_SAMPLES);
        pool.sort_unstable();
    }
    let grads: Vec<Result<ParamVector>> = exec::map_indexed(pool.len(), |i| {
        let batch = gather_batch(dataset, &pool[i..=i], AccessPhase::Fisher)?;
        Ok(model::loss_and_grad(params, &batch)?.1)
    });
    let mut fisher = vec![0.0; params.len()];
    let n = pool.len() as f64;
    for grad in grads {
        let grad = grad?;
        for (f, &g) in fisher.iter_mut().zip(grad.values()) {
            *f += g * g / n;
        }
    }
    Ok(fisher)
}

/// Gradient ascent on the forgotten samples' loss with an
/// elastic-weight-consolidation pull toward the trained model, then FedAvg
/// fine-tuning on retained data.
///
/// Each ascent step first climbs the forgotten-set loss, then applies the
/// consolidation penalty implicitly: coordinate `j` relaxes toward the
/// trained value by the factor `1 / (1 + eta * lambda_ewc * F_j)`. The
/// implicit (proximal) form keeps the update stable for arbitrarily large
/// `lambda_ewc`, where the explicit penalty gradient would oscillate; the
/// limits agree — zero lambda is pure ascent, huge lambda pins parameters
/// at their trained values.
pub fn unlearn_sga_ewc(
    history: &FederationHistory,
    dataset: &Dataset,
    partition: &Partition,
    request: &UnlearningRequest,
    ascent_steps: usize,
    lambda_ewc: f64,
    fine_tune_rounds: usize,
) -> Result<UnlearnOutcome> {
    if !lambda_ewc.is_finite() || lambda_ewc < 0.0 {
        return Err(Error::Config(format!(
            "lambda_ewc must be finite and non-negative, got {lambda_ewc}"
        )));
    }
    let resolved = apply_request(dataset, partition, request)?;
    if resolved.forgotten.is_empty() {
        return Err(Error::Input("gradient ascent needs a nonempty forgotten set".into()));
    }
    let config = &history.config;
    let base = config.seed;
    let trained = history.final_global();
    let eta = config.learning_rate;

    let mut theta = trained.clone();
    if ascent_steps > 0 {
        let fisher = fisher_diagonal(dataset, trained, &resolved.retained, base)?;
        let forgotten_batch = gather_batch(dataset, &resolved.forgotten, AccessPhase::Ascent)?;
        for _ in 0..ascent_steps {
            let (_, grad) = model::loss_and_grad(&theta, &forgotten_batch)?;
            let climbed = theta.add_scaled(&grad, eta)?;
            let mut values = Vec::with_capacity(theta.len());
            for ((&c, &t), &f) in
                climbed.values().iter().zip(trained.values()).zip(&fisher)
            {
                values.push(t + (c - t) / (1.0 + eta * lambda_ewc * f));
            }
            theta = ParamVector::from_values(theta.layout(), values)?;
        }
    }

    let target = request.target_client;
    if fine_tune_rounds == 0 {
        return finish(Method::SgaEwc, history, dataset, resolved, target, theta, 0);
    }
    let ft_base = seed::derive(base, Domain::FineTune);
    let tuned = run_fl(
        dataset,
        &resolved.retained_by_client,
        config,
        fine_tune_rounds,
        theta,
        ft_base,
        AccessPhase::FineTune,
    )?;
    let global = tuned.final_global().clone();
    finish(Method::SgaEwc, history, dataset, resolved, target, global, fine_tune_rounds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_synthetic, partition_iid, RequestLevel};
    use crate::federation::{train, FLConfig};

    fn trained_setup(seed: u64) -> (Dataset, Partition, FederationHistory) {
        let dataset = gen_synthetic(5, 24, 8, 0.3, seed).unwrap();
        let partition = partition_iid(&dataset, 4, seed).unwrap();
        let config = FLConfig {
            num_clients: 4,
            rounds: 4,
            hidden_dims: vec![10],
            seed,
            ..FLConfig::default()
        };
        let history = train(&dataset, &partition, &config).unwrap();
        (dataset, partition, history)
    }

    fn class_request(target_client: usize, class: usize) -> UnlearningRequest {
        UnlearningRequest { target_client, level: RequestLevel::Classes(vec![class]) }
    }

    #[test]
    fn sga_without_steps_or_tuning_is_identity() {
        let (dataset, partition, history) = trained_setup(31);
        let out =
            unlearn_sga_ewc(&history, &dataset, &partition, &class_request(0, 2), 0, 1.0, 0)
                .unwrap();
        assert_eq!(out.global_after.values(), history.final_global().values());
        assert_eq!(out.rounds_used, 0);
        // The target still performs its post-unlearning local update even
        // though the global did not move.
        let expected = post_unlearning_local(
            &history,
            &dataset,
            &out.retained_by_client[0],
            0,
            &out.global_after,
        )
        .unwrap();
        assert_eq!(out.target_local_after.values(), expected.values());
        assert_ne!(out.target_local_after.values(), out.global_after.values());
    }

    #[test]
    fn sga_huge_lambda_pins_parameters() {
        let (dataset, partition, history) = trained_setup(32);
        let out =
            unlearn_sga_ewc(&history, &dataset, &partition, &class_request(1, 3), 20, 1e9, 0)
                .unwrap();
        let drift = out.global_after.linf_distance(history.final_global());
        assert!(drift <= 1e-3, "lambda = 1e9 let parameters drift by {drift}");
    }

    #[test]
    fn sga_ascent_raises_forgotten_loss() {
        let (dataset, partition, history) = trained_setup(33);
        let request = class_request(2, 1);
        let resolved = apply_request(&dataset, &partition, &request).unwrap();
        let batch = gather_batch(&dataset, &resolved.forgotten, AccessPhase::Eval).unwrap();
        let (before, _) = model::loss_and_grad(history.final_global(), &batch).unwrap();

        let out = unlearn_sga_ewc(&history, &dataset, &partition, &request, 20, 1.0, 0).unwrap();
        let (after, _) = model::loss_and_grad(&out.global_after, &batch).unwrap();
        assert!(after >= before, "ascent lowered forgotten loss: {before} -> {after}");
    }

    #[test]
    fn sga_is_deterministic() {
        let (dataset, partition, history) = trained_setup(34);
        let request = class_request(0, 4);
        let a = unlearn_sga_ewc(&history, &dataset, &partition, &request, 5, 1.0, 2).unwrap();
        let b = unlearn_sga_ewc(&history, &dataset, &partition, &request, 5, 1.0, 2).unwrap();
        assert_eq!(a.global_after.values(), b.global_after.values());
        assert_eq!(a.target_local_after.values(), b.target_local_after.values());
    }

    #[test]
    fn retrain_client_level_falls_back_to_global() {
        let (dataset, partition, history) = trained_setup(35);
        let request = UnlearningRequest { target_client: 3, level: RequestLevel::Client };
        let out = unlearn_retrain(&history, &dataset, &partition, &request).unwrap();
        assert_eq!(out.target_local_after.values(), out.global_after.values());
        assert!(out.retained_by_client[3].is_empty());
        // Retraining without the client's data lands somewhere else.
        assert_ne!(out.global_after.values(), history.final_global().values());
    }

    #[test]
    fn retrain_sample_level_keeps_target_local_distinct() {
        let (dataset, partition, history) = trained_setup(36);
        let keep_out: Vec<usize> = partition.client(1).iter().copied().take(3).collect();
        let request =
            UnlearningRequest { target_client: 1, level: RequestLevel::Samples(keep_out) };
        let out = unlearn_retrain(&history, &dataset, &partition, &request).unwrap();
        // Target retained data, so its local model is a real local update.
        assert_ne!(out.target_local_after.values(), out.global_after.values());
        assert_eq!(out.rounds_used, history.config.rounds);
    }

    #[test]
    fn federaser_no_removal_reproduces_training() {
        // Class 4 is declared but has no samples, so the request changes
        // nothing and the calibrated replay should walk the same trajectory.
        // Full-batch single-epoch training makes batch order irrelevant.
        let blobs = gen_synthetic(4, 12, 6, 0.3, 37).unwrap();
        let features: Vec<f64> =
            (0..blobs.len()).flat_map(|i| blobs.row(i).to_vec()).collect();
        let dataset = Dataset::new(features, 6, blobs.labels().to_vec(), 5).unwrap();
        let partition = partition_iid(&dataset, 3, 37).unwrap();
        let config = FLConfig {
            num_clients: 3,
            rounds: 3,
            batch_size: 64,
            hidden_dims: vec![6],
            seed: 37,
            ..FLConfig::default()
        };
        let history = train(&dataset, &partition, &config).unwrap();
        let out =
            unlearn_federaser(&history, &dataset, &partition, &class_request(0, 4), 1).unwrap();
        let gap = out.global_after.linf_distance(history.final_global());
        assert!(gap <= 1e-6, "no-op replay drifted by {gap}");
    }

    #[test]
    fn federaser_client_level_uses_only_remaining_client() {
        let dataset = gen_synthetic(4, 10, 6, 0.3, 38).unwrap();
        let partition = partition_iid(&dataset, 2, 38).unwrap();
        let config = FLConfig {
            num_clients: 2,
            rounds: 3,
            hidden_dims: vec![6],
            seed: 38,
            ..FLConfig::default()
        };
        let history = train(&dataset, &partition, &config).unwrap();
        let request = UnlearningRequest { target_client: 1, level: RequestLevel::Client };
        let out = unlearn_federaser(&history, &dataset, &partition, &request, 1).unwrap();
        assert_eq!(out.target_local_after.values(), out.global_after.values());
        assert!(out.retained_by_client[1].is_empty());
        assert_eq!(out.retained_by_client[0], partition.client(0));
    }

    #[test]
    fn federaser_zero_direction_guard() {
        // A zero learning rate makes every calibration update vanish; the
        // guard must replay zero updates and return the initial model.
        let dataset = gen_synthetic(3, 8, 4, 0.3, 39).unwrap();
        let partition = partition_iid(&dataset, 2, 39).unwrap();
        let config = FLConfig {
            num_clients: 2,
            rounds: 2,
            hidden_dims: vec![4],
            seed: 39,
            ..FLConfig::default()
        };
        let history = train(&dataset, &partition, &config).unwrap();
        let mut frozen = history.clone();
        frozen.config.learning_rate = 0.0;
        let request =
            UnlearningRequest { target_client: 0, level: RequestLevel::Samples(
                partition.client(0).iter().copied().take(2).collect(),
            ) };
        let out = unlearn_federaser(&frozen, &dataset, &partition, &request, 1).unwrap();
        // Renormalized weights make the aggregation inexact at the last
        // ulp, so compare up to float rounding rather than bitwise.
        assert!(out.global_after.linf_distance(&frozen.initial) < 1e-12);
    }

    #[test]
    fn federaser_rejects_bad_calibration_epochs() {
        let (dataset, partition, history) = trained_setup(40);
        let request = class_request(0, 1);
        assert!(unlearn_federaser(&history, &dataset, &partition, &request, 0).is_err());
        assert!(unlearn_federaser(&history, &dataset, &partition, &request, 2).is_err());
    }

    #[test]
    fn dispatch_matches_direct_calls() {
        let (dataset, partition, history) = trained_setup(42);
        let request = class_request(2, 0);
        let config = UnlearnConfig { ascent_steps: 3, fine_tune_rounds: 1, ..Default::default() };
        for method in Method::all() {
            let via_dispatch =
                unlearn(method, &history, &dataset, &partition, &request, &config).unwrap();
            assert_eq!(via_dispatch.method, method);
            assert_eq!(via_dispatch.forgotten_classes, vec![0]);
        }
    }

    #[test]
    fn method_names_round_trip() {
        for method in Method::all() {
            let parsed: Method = method.name().parse().unwrap();
            assert_eq!(parsed, method);
        }
        assert!("nope".parse::<Method>().is_err());
    }
}
