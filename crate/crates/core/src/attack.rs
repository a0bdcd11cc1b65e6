//! The four-step label-inference attack.
//!
//! A semi-honest server holding the training history plus the pre/post
//! unlearning models of the global and of the target client runs, in order:
//!
//! 1. parameter deltas — `delta_local = local_after - local_before` and
//!    `delta_global = global_after - global_before`;
//! 2. learning-rate estimation — the mean per-round ratio
//!    `|local update| / |global update|` mined from the history;
//! 3. gradient-difference reconstruction —
//!    `grad_diff = (delta_global - delta_local) / ((1 - w_k) * eta)`;
//! 4. label selection — per-class mean absolute `grad_diff` over each
//!    class's output-layer slice, standardized to Z-scores, filtered by a
//!    threshold or a known candidate count.
//!
//! Steps 2 and 3 can fail on degenerate inputs (a history with no usable
//! rounds, a target weight at 1); those surface as *structured failures* in
//! the [`AttackOutcome`], not as hard errors, so experiment sweeps always
//! complete.

use std::collections::BTreeSet;

use crate::canon::{push_float, push_float_array, push_json_string, push_usize_array};
use crate::error::{Error, Result};
use crate::federation::FederationHistory;
use crate::model::{class_slice_values, ParamVector};

/// How the final candidate set is selected.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AttackMode {
    /// The attacker knows how many label categories were forgotten and
    /// takes the top `k` classes by Z-score.
    KnownCount(usize),
    /// The attacker keeps every class with Z-score strictly above `tau`.
    Threshold(f64),
}

impl Default for AttackMode {
    fn default() -> Self {
        AttackMode::Threshold(2.0)
    }
}

impl AttackMode {
    pub fn validate(&self, num_classes: usize) -> Result<()> {
        match *self {
            AttackMode::KnownCount(k) => {
                if k == 0 || k > num_classes {
                    return Err(Error::Config(format!(
                        "known-count k must lie in 1..={num_classes}, got {k}"
                    )));
                }
            }
            AttackMode::Threshold(tau) => {
                if !tau.is_finite() {
                    return Err(Error::Config(format!("threshold tau must be finite, got {tau}")));
                }
            }
        }
        Ok(())
    }

    pub fn name(&self) -> &'static str {
        match self {
            AttackMode::KnownCount(_) => "known_count",
            AttackMode::Threshold(_) => "threshold",
        }
    }
}

/// Everything the attacker legitimately observes.
#[derive(Debug, Clone)]
pub struct AttackInput {
    /// Target client's last local model of the original training.
    pub local_before: ParamVector,
    /// Target client's post-unlearning local model.
    pub local_after: ParamVector,
    /// Final global model of the original training.
    pub global_before: ParamVector,
    /// Post-unlearning global model.
    pub global_after: ParamVector,
    /// Target client's pre-unlearning aggregation weight.
    pub w_k: f64,
    pub target_client: usize,
}

impl AttackInput {
    pub fn new(
        local_before: ParamVector,
        local_after: ParamVector,
        global_before: ParamVector,
        global_after: ParamVector,
        w_k: f64,
        target_client: usize,
    ) -> Result<Self> {
        for (name, v) in [
            ("local_after", &local_after),
            ("global_before", &global_before),
            ("global_after", &global_after),
        ] {
            if !local_before.same_layout(v) {
                return Err(Error::Config(format!(
                    "{name} does not share local_before's layout"
                )));
            }
        }
        if !(0.0..1.0).contains(&w_k) {
            return Err(Error::Input(format!("target weight must lie in [0, 1), got {w_k}")));
        }
        Ok(Self { local_before, local_after, global_before, global_after, w_k, target_client })
    }

    /// Assembles the attacker's view from a finished training run and an
    /// unlearning outcome: the "before" models are the target's last local
    /// and the final global of the history; the "after" models come from
    /// the outcome; the weight is the target's pre-unlearning weight.
    pub fn from_run(
        history: &FederationHistory,
        global_after: ParamVector,
        target_local_after: ParamVector,
        target_client: usize,
    ) -> Result<Self> {
        if target_client >= history.num_clients() {
            return Err(Error::Input(format!(
                "target client {target_client} out of range ({} clients)",
                history.num_clients()
            )));
        }
        let last = history.rounds.last().ok_or_else(|| {
            Error::Input("attack needs at least one recorded training round".into())
        })?;
        let w_k = history.weights()?[target_client];
        Self::new(
            last.locals[target_client].clone(),
            target_local_after,
            history.final_global().clone(),
            global_after,
            w_k,
            target_client,
        )
    }

    pub fn num_classes(&self) -> usize {
        self.local_before.layout().num_classes()
    }
}

/// Step 1: post-minus-pre parameter changes of the target's local model and
/// of the global model.
pub fn param_deltas(input: &AttackInput) -> Result<(ParamVector, ParamVector)> {
    let delta_local = input.local_after.sub(&input.local_before)?;
    let delta_global = input.global_after.sub(&input.global_before)?;
    Ok((delta_local, delta_global))
}

/// Step 2: learning-rate estimate mined from the last `window` recorded
/// rounds — the mean over rounds of
/// `|locals[k] - global_before| / |global_after - global_before|` (L2),
/// skipping rounds whose global barely moved.
pub fn estimate_learning_rate(
    history: &FederationHistory,
    target_client: usize,
    window: usize,
) -> Result<f64> {
    let rounds = history.num_rounds();
    if target_client >= history.num_clients() {
        return Err(Error::Input(format!(
            "target client {target_client} out of range ({} clients)",
            history.num_clients()
        )));
    }
    if window == 0 || window > rounds {
        return Err(Error::Input(format!(
            "estimation window must lie in 1..={rounds}, got {window}"
        )));
    }
    let mut sum = 0.0;
    let mut used = 0usize;
    for record in &history.rounds[rounds - window..] {
        let dg = record.global_after.sub(&record.global_before)?.l2_norm();
        if dg < 1e-12 {
            continue;
        }
        let dl = record.locals[target_client].sub(&record.global_before)?.l2_norm();
        sum += dl / dg;
        used += 1;
    }
    if used == 0 {
        return Err(Error::DegenerateHistory(format!(
            "no usable round among the last {window}: every global update is below 1e-12"
        )));
    }
    let eta = sum / used as f64;
    if !eta.is_finite() || eta <= 0.0 {
        return Err(Error::DegenerateHistory(format!(
            "learning-rate estimate degenerated to {eta}"
        )));
    }
    Ok(eta)
}

/// Step 3: the gradient difference attributed to the forgotten data,
/// `(delta_global - delta_local) / ((1 - w_k) * eta_approx)`.
pub fn derive_grad_diff(
    delta_local: &ParamVector,
    delta_global: &ParamVector,
    w_k: f64,
    eta_approx: f64,
) -> Result<ParamVector> {
    if !eta_approx.is_finite() || eta_approx <= 0.0 {
        return Err(Error::Input(format!(
            "eta_approx must be finite and positive, got {eta_approx}"
        )));
    }
    if w_k > 1.0 - 1e-9 {
        return Err(Error::Singularity(format!(
            "target weight {w_k} is too close to 1; the rescaling divides by (1 - w_k)"
        )));
    }
    let diff = delta_global.sub(delta_local)?;
    diff.scale(1.0 / ((1.0 - w_k) * eta_approx))
}

/// Step 4a: per-class mean of absolute gradient-difference components over
/// each class's output-layer slice.
pub fn per_class_agd(grad_diff: &ParamVector) -> Vec<f64> {
    let c = grad_diff.layout().num_classes();
    (0..c)
        .map(|l| {
            let vals = class_slice_values(grad_diff, l)
                .expect("class id below C by construction");
            vals.iter().map(|v| v.abs()).sum::<f64>() / vals.len() as f64
        })
        .collect()
}

/// Step 4b: standardized scores over classes, using the population standard
/// deviation. A near-constant input (std below 1e-15) maps to all zeros.
pub fn zscores(agd: &[f64]) -> Vec<f64> {
    let n = agd.len() as f64;
    let mean = agd.iter().sum::<f64>() / n;
    let var = agd.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    if std < 1e-15 {
        return vec![0.0; agd.len()];
    }
    agd.iter().map(|a| (a - mean) / std).collect()
}

/// Step 4c: the inferred label set. Threshold mode keeps classes with Z
/// strictly above tau (possibly none); known-count mode keeps the `k`
/// highest-Z classes, breaking exact ties toward the lower class id.
pub fn select_candidates(z: &[f64], mode: AttackMode) -> Result<BTreeSet<usize>> {
    mode.validate(z.len())?;
    match mode {
        AttackMode::Threshold(tau) => {
            Ok(z.iter().enumerate().filter(|(_, &zl)| zl > tau).map(|(l, _)| l).collect())
        }
        AttackMode::KnownCount(k) => {
            let mut order: Vec<usize> = (0..z.len()).collect();
            order.sort_by(|&a, &b| {
                z[b].partial_cmp(&z[a]).expect("z-scores are finite").then(a.cmp(&b))
            });
            Ok(order.into_iter().take(k).collect())
        }
    }
}

/// A completed attack: every intermediate the pipeline produced.
#[derive(Debug, Clone)]
pub struct AttackReport {
    pub mode: AttackMode,
    pub target_client: usize,
    pub w_k: f64,
    pub window: usize,
    pub eta_approx: f64,
    pub delta_local: ParamVector,
    pub delta_global: ParamVector,
    pub grad_diff: ParamVector,
    pub agd: Vec<f64>,
    pub zscores: Vec<f64>,
    pub candidates: BTreeSet<usize>,
}

/// Why an attack could not produce a candidate set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FailureKind {
    /// The target's weight is too close to 1 (Step 3 divides by `1 - w_k`).
    Singularity,
    /// The history offers no usable round for learning-rate estimation.
    DegenerateHistory,
}

impl FailureKind {
    pub fn name(self) -> &'static str {
        match self {
            FailureKind::Singularity => "singularity",
            FailureKind::DegenerateHistory => "degenerate_history",
        }
    }
}

/// A structured attack failure; sweeps score it as a miss.
#[derive(Debug, Clone)]
pub struct AttackFailure {
    pub kind: FailureKind,
    pub message: String,
}

/// Either a full report or a structured failure.
#[derive(Debug, Clone)]
pub enum AttackOutcome {
    Report(AttackReport),
    Failure(AttackFailure),
}

impl AttackOutcome {
    pub fn report(&self) -> Option<&AttackReport> {
        match self {
            AttackOutcome::Report(r) => Some(r),
            AttackOutcome::Failure(_) => None,
        }
    }

    /// The predicted label set; empty on failure.
    pub fn predicted(&self) -> BTreeSet<usize> {
        match self {
            AttackOutcome::Report(r) => r.candidates.clone(),
            AttackOutcome::Failure(_) => BTreeSet::new(),
        }
    }
}

/// Runs the full pipeline. Degenerate histories and near-1 target weights
/// come back as [`AttackOutcome::Failure`]; structural misuse (layout
/// mismatches, bad windows, invalid modes) stays a hard error.
pub fn run_attack(
    history: &FederationHistory,
    input: &AttackInput,
    mode: AttackMode,
    window: usize,
) -> Result<AttackOutcome> {
    mode.validate(input.num_classes())?;
    let (delta_local, delta_global) = param_deltas(input)?;
    let eta_approx = match estimate_learning_rate(history, input.target_client, window) {
        Ok(eta) => eta,
        Err(Error::DegenerateHistory(message)) => {
            return Ok(AttackOutcome::Failure(AttackFailure {
                kind: FailureKind::DegenerateHistory,
                message,
            }));
        }
        Err(e) => return Err(e),
    };
    let grad_diff = match derive_grad_diff(&delta_local, &delta_global, input.w_k, eta_approx) {
        Ok(g) => g,
        Err(Error::Singularity(message)) => {
            return Ok(AttackOutcome::Failure(AttackFailure {
                kind: FailureKind::Singularity,
                message,
            }));
        }
        Err(e) => return Err(e),
    };
    let agd = per_class_agd(&grad_diff);
    let z = zscores(&agd);
    let candidates = select_candidates(&z, mode)?;
    Ok(AttackOutcome::Report(AttackReport {
        mode,
        target_client: input.target_client,
        w_k: input.w_k,
        window,
        eta_approx,
        delta_local,
        delta_global,
        grad_diff,
        agd,
        zscores: z,
        candidates,
    }))
}

/// Canonical JSON for an attack outcome: fixed key order, floats with 17
/// significant digits, no timestamps — two equal outcomes serialize to
/// byte-identical documents.
pub fn to_canonical_json(outcome: &AttackOutcome) -> String {
    let mut out = String::new();
    match outcome {
        AttackOutcome::Failure(f) => {
            out.push_str("{\"status\":\"failure\",\"kind\":");
            push_json_string(&mut out, f.kind.name());
            out.push_str(",\"message\":");
            push_json_string(&mut out, &f.message);
            out.push('}');
        }
        AttackOutcome::Report(r) => {
            out.push_str("{\"status\":\"ok\",\"mode\":{\"kind\":");
            push_json_string(&mut out, r.mode.name());
            match r.mode {
                AttackMode::KnownCount(k) => {
                    out.push_str(",\"count\":");
                    out.push_str(&k.to_string());
                }
                AttackMode::Threshold(tau) => {
                    out.push_str(",\"tau\":");
                    push_float(&mut out, tau);
                }
            }
            out.push_str("},\"target_client\":");
            out.push_str(&r.target_client.to_string());
            out.push_str(",\"w_k\":");
            push_float(&mut out, r.w_k);
            out.push_str(",\"window\":");
            out.push_str(&r.window.to_string());
            out.push_str(",\"eta_approx\":");
            push_float(&mut out, r.eta_approx);
            out.push_str(",\"agd\":");
            push_float_array(&mut out, &r.agd);
            out.push_str(",\"zscores\":");
            push_float_array(&mut out, &r.zscores);
            out.push_str(",\"candidates\":");
            push_usize_array(&mut out, &r.candidates);
            out.push_str(",\"delta_local\":");
            push_float_array(&mut out, r.delta_local.values());
            out.push_str(",\"delta_global\":");
            push_float_array(&mut out, r.delta_global.values());
            out.push_str(",\"grad_diff\":");
            push_float_array(&mut out, r.grad_diff.values());
            out.push('}');
        }
    }
    out
}
