//! Multi-trial attack evaluation: IoU scoring, trial construction per
//! unlearning granularity, grid sweeps, and the canonical CSV / JSON-lines
//! result emitters.
//!
//! A *trial* is one full simulation: a fresh synthetic dataset and client
//! partition, federated training, one unlearning request at the configured
//! granularity, the label-inference attack, and an IoU score of predicted
//! against actually-forgotten label categories. Trials are independent and
//! fully determined by `base_seed + trial_index`, so repeated runs — serial
//! or parallel — agree byte for byte.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::attack::{run_attack, AttackInput, AttackMode, AttackOutcome};
use crate::canon::{push_float, push_json_string, push_usize_array};
use crate::data::{
    apply_request, gen_synthetic, partition_dirichlet, partition_iid, sample_request_for_client,
    Dataset, Partition, RequestLevel, UnlearningRequest,
};
use crate::error::{Error, Result};
use crate::exec;
use crate::federation::{dataset_accuracy, train, FLConfig};
use crate::model::ParamVector;
use crate::seed::{self, Domain};
use crate::unlearning::{unlearn, Method, UnlearnConfig};

/// Intersection-over-union of the true and predicted label sets. An empty
/// prediction scores 0; an empty truth set is a caller error.
pub fn iou_asr(true_labels: &BTreeSet<usize>, predicted: &BTreeSet<usize>) -> Result<f64> {
    if true_labels.is_empty() {
        return Err(Error::Input("true label set must not be empty".into()));
    }
    let intersection = true_labels.intersection(predicted).count();
    let union = true_labels.union(predicted).count();
    Ok(intersection as f64 / union as f64)
}

/// Granularity of the unlearning request a trial issues.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Level {
    /// Forget a fraction of the target client's samples, drawn from the
    /// chosen label categories.
    Sample,
    /// Forget the chosen label categories everywhere.
    Class,
    /// Forget the target client wholesale; its shard is built to contain
    /// only the chosen categories so the ground truth stays well defined.
    Client,
}

impl Level {
    pub fn name(self) -> &'static str {
        match self {
            Level::Sample => "sample",
            Level::Class => "class",
            Level::Client => "client",
        }
    }

    pub fn all() -> [Level; 3] {
        [Level::Sample, Level::Class, Level::Client]
    }
}

impl FromStr for Level {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sample" => Ok(Level::Sample),
            "class" => Ok(Level::Class),
            "client" => Ok(Level::Client),
            other => Err(Error::Config(format!(
                "unknown level '{other}' (expected sample, class, or client)"
            ))),
        }
    }
}

/// How client shards are drawn for sample- and class-level trials.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Distribution {
    Iid,
    /// Label-skewed shards with the given concentration; smaller values
    /// are more skewed.
    Dirichlet(f64),
}

impl Distribution {
    pub fn name(self) -> &'static str {
        match self {
            Distribution::Iid => "iid",
            Distribution::Dirichlet(_) => "dirichlet",
        }
    }

    pub fn alpha(self) -> Option<f64> {
        match self {
            Distribution::Iid => None,
            Distribution::Dirichlet(a) => Some(a),
        }
    }
}

/// One cell of an experiment grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridPoint {
    pub method: Method,
    pub level: Level,
    /// How many label categories the request covers.
    pub num_label_categories: usize,
    /// Sample-level only: fraction of the target's holdings to forget.
    pub forgotten_fraction: Option<f64>,
    pub mode: AttackMode,
    pub distribution: Distribution,
}

impl GridPoint {
    pub fn validate(&self, num_classes: usize) -> Result<()> {
        let l = self.num_label_categories;
        if l == 0 || l > num_classes {
            return Err(Error::Config(format!(
                "label category count must lie in 1..={num_classes}, got {l}"
            )));
        }
        match (self.level, self.forgotten_fraction) {
            (Level::Sample, Some(f)) if f > 0.0 && f <= 1.0 => {}
            (Level::Sample, Some(f)) => {
                return Err(Error::Config(format!(
                    "forgotten fraction must lie in (0, 1], got {f}"
                )));
            }
            (Level::Sample, None) => {
                return Err(Error::Config(
                    "sample-level points need a forgotten fraction".into(),
                ));
            }
            (_, None) => {}
            (level, Some(_)) => {
                return Err(Error::Config(format!(
                    "{}-level points must not set a forgotten fraction",
                    level.name()
                )));
            }
        }
        if let Distribution::Dirichlet(alpha) = self.distribution {
            if !(alpha > 0.0 && alpha.is_finite()) {
                return Err(Error::Config(format!(
                    "dirichlet alpha must be positive and finite, got {alpha}"
                )));
            }
        }
        self.mode.validate(num_classes)
    }
}

/// Everything that stays fixed across an experiment's trials: the data
/// generator's shape, the federation configuration, the unlearning
/// hyperparameters, and the attack's estimation window.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    /// Per-trial runs override `fl.seed` with the trial seed.
    pub fl: FLConfig,
    pub num_classes: usize,
    pub samples_per_class: usize,
    pub feature_dim: usize,
    /// Noise scale of the synthetic class blobs.
    pub spread: f64,
    pub unlearn: UnlearnConfig,
    /// Rounds the learning-rate estimator looks back over.
    pub window: usize,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            fl: FLConfig::default(),
            num_classes: 10,
            samples_per_class: 60,
            feature_dim: 20,
            spread: 0.35,
            unlearn: UnlearnConfig::default(),
            window: 5,
        }
    }
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        self.fl.validate()?;
        if self.num_classes < 2 {
            return Err(Error::Config(format!(
                "need at least 2 classes, got {}",
                self.num_classes
            )));
        }
        if self.samples_per_class == 0 || self.feature_dim == 0 {
            return Err(Error::Config(
                "samples per class and feature dim must be positive".into(),
            ));
        }
        if !(self.spread.is_finite() && self.spread >= 0.0) {
            return Err(Error::Config(format!(
                "spread must be finite and non-negative, got {}",
                self.spread
            )));
        }
        if self.window == 0 || self.window > self.fl.rounds {
            return Err(Error::Config(format!(
                "window must lie in 1..={}, got {}",
                self.fl.rounds, self.window
            )));
        }
        Ok(())
    }
}

/// One scored trial.
#[derive(Debug, Clone)]
pub struct TrialResult {
    pub point: GridPoint,
    pub trial: usize,
    pub seed: u64,
    pub true_labels: BTreeSet<usize>,
    pub predicted_labels: BTreeSet<usize>,
    pub asr: f64,
    /// Set when the attack ended in a structured failure; such trials
    /// score 0.
    pub failure: Option<String>,
}

/// Aggregated trials of one grid point.
#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub point: GridPoint,
    pub trials: Vec<TrialResult>,
    pub mean_asr: f64,
    /// Population standard deviation of the trial scores.
    pub std_asr: f64,
    pub failures: usize,
}

impl ExperimentResult {
    pub fn from_trials(point: GridPoint, trials: Vec<TrialResult>) -> Self {
        let n = trials.len();
        let (mean, std) = if n == 0 {
            (0.0, 0.0)
        } else {
            let mean = trials.iter().map(|t| t.asr).sum::<f64>() / n as f64;
            let var =
                trials.iter().map(|t| (t.asr - mean) * (t.asr - mean)).sum::<f64>() / n as f64;
            (mean, var.sqrt())
        };
        let failures = trials.iter().filter(|t| t.failure.is_some()).count();
        Self { point, trials, mean_asr: mean, std_asr: std, failures }
    }

    pub fn num_trials(&self) -> usize {
        self.trials.len()
    }
}

fn base_partition(
    scenario: &Scenario,
    dataset: &Dataset,
    distribution: Distribution,
    seed: u64,
) -> Result<Partition> {
    match distribution {
        Distribution::Iid => partition_iid(dataset, scenario.fl.num_clients, seed),
        Distribution::Dirichlet(alpha) => {
            partition_dirichlet(dataset, scenario.fl.num_clients, alpha, seed)
        }
    }
}

/// Picks `count` distinct label categories, preferring classes the target
/// client actually holds (so the request always has something to bite on)
/// and falling back to the remaining classes when the shard is too narrow.
fn choose_categories(
    dataset: &Dataset,
    partition: &Partition,
    target: usize,
    count: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<usize> {
    let held: BTreeSet<usize> =
        partition.client(target).iter().map(|&i| dataset.label(i)).collect();
    let mut preferred: Vec<usize> = held.iter().copied().collect();
    preferred.shuffle(rng);
    let mut categories: Vec<usize> = preferred.into_iter().take(count).collect();
    if categories.len() < count {
        let mut rest: Vec<usize> =
            (0..dataset.num_classes()).filter(|c| !held.contains(c)).collect();
        rest.shuffle(rng);
        categories.extend(rest.into_iter().take(count - categories.len()));
    }
    categories.sort_unstable();
    categories
}

/// Builds a client-level trial: the target's shard is dominated by the
/// first chosen category — roughly half its samples — while the remaining
/// chosen categories contribute a light tail (a tenth each) and nothing
/// else; everything left over is spread round-robin over the other
/// clients. Skewed composition is the usual shape of a federated client
/// with label skew; an equal split would make the chosen categories
/// statistically interchangeable and the trial degenerate.
fn build_client_trial(
    dataset: &Dataset,
    num_clients: usize,
    count: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(Partition, UnlearningRequest)> {
    if num_clients < 2 {
        return Err(Error::Config(
            "client-level trials need at least two clients".into(),
        ));
    }
    let target = rng.random_range(0..num_clients);
    let mut classes: Vec<usize> = (0..dataset.num_classes()).collect();
    classes.shuffle(rng);
    let chosen = &classes[..count];

    let mut target_shard = Vec::new();
    let mut rest = Vec::new();
    for class in 0..dataset.num_classes() {
        let mut idx = dataset.indices_of_class(class);
        match chosen.iter().position(|&c| c == class) {
            Some(rank) => {
                idx.shuffle(rng);
                let share = if rank == 0 { 2 } else { 10 };
                let take = (idx.len() / share).max(1);
                target_shard.extend_from_slice(&idx[..take]);
                rest.extend_from_slice(&idx[take..]);
            }
            None => rest.append(&mut idx),
        }
    }
    if rest.len() < num_clients - 1 {
        return Err(Error::Input(format!(
            "only {} samples left for the {} non-target clients",
            rest.len(),
            num_clients - 1
        )));
    }
    rest.shuffle(rng);
    let others: Vec<usize> = (0..num_clients).filter(|&i| i != target).collect();
    let mut shards = vec![Vec::new(); num_clients];
    shards[target] = target_shard;
    for (j, i) in rest.into_iter().enumerate() {
        shards[others[j % others.len()]].push(i);
    }
    let partition = Partition::new(shards, dataset.len())?;
    Ok((partition, UnlearningRequest { target_client: target, level: RequestLevel::Client }))
}

/// The deterministic setup of one trial. Re-deriving it from the same
/// scenario, point, and seed always yields identical contents, which is
/// what lets separate processes chain over saved artifacts.
#[derive(Debug, Clone)]
pub struct PreparedTrial {
    pub dataset: Dataset,
    pub partition: Partition,
    pub request: UnlearningRequest,
}

/// Generates a fresh synthetic dataset and prepares the trial on it.
pub fn prepare_trial(scenario: &Scenario, point: &GridPoint, seed: u64) -> Result<PreparedTrial> {
    scenario.validate()?;
    let dataset = gen_synthetic(
        scenario.num_classes,
        scenario.samples_per_class,
        scenario.feature_dim,
        scenario.spread,
        seed,
    )?;
    prepare_trial_on(dataset, scenario, point, seed)
}

/// Prepares a trial on an existing dataset (synthetic or loaded): draws the
/// partition, the target client, and the unlearning request from the
/// seed's choice stream.
pub fn prepare_trial_on(
    dataset: Dataset,
    scenario: &Scenario,
    point: &GridPoint,
    seed: u64,
) -> Result<PreparedTrial> {
    scenario.validate()?;
    point.validate(dataset.num_classes())?;
    let mut rng = seed::rng(seed, Domain::TrialChoices);
    let num_clients = scenario.fl.num_clients;

    let (partition, request) = match point.level {
        Level::Client => {
            build_client_trial(&dataset, num_clients, point.num_label_categories, &mut rng)?
        }
        Level::Class => {
            let partition = base_partition(scenario, &dataset, point.distribution, seed)?;
            let target = rng.random_range(0..num_clients);
            let categories = choose_categories(
                &dataset,
                &partition,
                target,
                point.num_label_categories,
                &mut rng,
            );
            let request =
                UnlearningRequest { target_client: target, level: RequestLevel::Classes(categories) };
            (partition, request)
        }
        Level::Sample => {
            let partition = base_partition(scenario, &dataset, point.distribution, seed)?;
            let target = rng.random_range(0..num_clients);
            let categories = choose_categories(
                &dataset,
                &partition,
                target,
                point.num_label_categories,
                &mut rng,
            );
            let fraction = point.forgotten_fraction.expect("validated above");
            let request = sample_request_for_client(
                &dataset, &partition, target, &categories, fraction, seed,
            )?;
            (partition, request)
        }
    };
    Ok(PreparedTrial { dataset, partition, request })
}

/// Runs one full trial: data, training, unlearning, attack, score. The
/// `trial` index is filled in by [`run_trials`].
pub fn run_trial(scenario: &Scenario, point: &GridPoint, seed: u64) -> Result<TrialResult> {
    let PreparedTrial { dataset, partition, request } = prepare_trial(scenario, point, seed)?;
    let mut fl = scenario.fl.clone();
    fl.seed = seed;
    let history = train(&dataset, &partition, &fl)?;
    let resolved = apply_request(&dataset, &partition, &request)?;
    let true_labels: BTreeSet<usize> = resolved.forgotten_classes.iter().copied().collect();

    let outcome = unlearn(
        point.method,
        &history,
        &dataset,
        &partition,
        &request,
        &scenario.unlearn,
    )?;
    let input = AttackInput::from_run(
        &history,
        outcome.global_after,
        outcome.target_local_after,
        request.target_client,
    )?;
    let attack = run_attack(&history, &input, point.mode, scenario.window)?;
    let predicted_labels = attack.predicted();
    let failure = match &attack {
        AttackOutcome::Failure(f) => Some(format!("{}: {}", f.kind.name(), f.message)),
        AttackOutcome::Report(_) => None,
    };
    let asr = if failure.is_some() { 0.0 } else { iou_asr(&true_labels, &predicted_labels)? };
    Ok(TrialResult {
        point: *point,
        trial: 0,
        seed,
        true_labels,
        predicted_labels,
        asr,
        failure,
    })
}

/// Runs `trials` independent trials with seeds `base_seed + index` and
/// aggregates them. Structured attack failures score 0 and are counted,
/// never aborting the batch.
pub fn run_trials(
    scenario: &Scenario,
    point: &GridPoint,
    trials: usize,
    base_seed: u64,
) -> Result<ExperimentResult> {
    if trials == 0 {
        return Err(Error::Config("need at least one trial".into()));
    }
    scenario.validate()?;
    point.validate(scenario.num_classes)?;
    let outcomes = exec::map_indexed(trials, |i| {
        run_trial(scenario, point, base_seed.wrapping_add(i as u64)).map(|mut t| {
            t.trial = i;
            t
        })
    });
    let collected: Result<Vec<TrialResult>> = outcomes.into_iter().collect();
    Ok(ExperimentResult::from_trials(*point, collected?))
}

/// Runs every grid point with the same trial seeds, so rows are paired
/// comparisons over identical datasets wherever the distribution allows.
pub fn sweep(
    scenario: &Scenario,
    points: &[GridPoint],
    trials: usize,
    base_seed: u64,
) -> Result<Vec<ExperimentResult>> {
    if points.is_empty() {
        return Err(Error::Config("sweep needs at least one grid point".into()));
    }
    points.iter().map(|point| run_trials(scenario, point, trials, base_seed)).collect()
}

/// One entry of the attack-mode axis. Threshold entries fan out over their
/// tau grid; a known-count entry uses the point's own category count as k,
/// matching an attacker who knows how many categories were forgotten.
#[derive(Debug, Clone, PartialEq)]
pub enum ModeAxis {
    Threshold(Vec<f64>),
    KnownCount,
}

/// Axis lists whose Cartesian product forms a grid. The fraction axis only
/// applies to sample-level points; other levels contribute one point per
/// remaining combination.
#[derive(Debug, Clone, PartialEq)]
pub struct GridAxes {
    pub methods: Vec<Method>,
    pub levels: Vec<Level>,
    pub num_label_categories: Vec<usize>,
    pub fractions: Vec<f64>,
    pub modes: Vec<ModeAxis>,
    pub distributions: Vec<Distribution>,
}

impl GridAxes {
    pub fn expand(&self) -> Result<Vec<GridPoint>> {
        for (name, empty) in [
            ("methods", self.methods.is_empty()),
            ("levels", self.levels.is_empty()),
            ("num_label_categories", self.num_label_categories.is_empty()),
            ("modes", self.modes.is_empty()),
            ("distributions", self.distributions.is_empty()),
        ] {
            if empty {
                return Err(Error::Config(format!("grid axis '{name}' is empty")));
            }
        }
        if self.levels.contains(&Level::Sample) && self.fractions.is_empty() {
            return Err(Error::Config(
                "sample-level sweeps need a nonempty fraction axis".into(),
            ));
        }
        if self
            .modes
            .iter()
            .any(|m| matches!(m, ModeAxis::Threshold(taus) if taus.is_empty()))
        {
            return Err(Error::Config("threshold mode axis has an empty tau grid".into()));
        }
        let mut points = Vec::new();
        for &method in &self.methods {
            for &level in &self.levels {
                for &l in &self.num_label_categories {
                    let fractions: Vec<Option<f64>> = match level {
                        Level::Sample => self.fractions.iter().map(|&f| Some(f)).collect(),
                        _ => vec![None],
                    };
                    for fraction in fractions {
                        for mode_axis in &self.modes {
                            let modes: Vec<AttackMode> = match mode_axis {
                                ModeAxis::Threshold(taus) => {
                                    taus.iter().map(|&t| AttackMode::Threshold(t)).collect()
                                }
                                ModeAxis::KnownCount => vec![AttackMode::KnownCount(l)],
                            };
                            for mode in modes {
                                for &distribution in &self.distributions {
                                    points.push(GridPoint {
                                        method,
                                        level,
                                        num_label_categories: l,
                                        forgotten_fraction: fraction,
                                        mode,
                                        distribution,
                                    });
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(points)
    }
}

pub const CSV_HEADER: &str = "method,level,num_label_categories,forgotten_fraction,tau,\
                              distribution,mode,trials,mean_asr,std_asr,failures";

/// One CSV row per grid point; fixed header, six-decimal floats, empty
/// cells for inapplicable coordinates (fraction outside sample level, tau
/// outside threshold mode).
pub fn write_csv(results: &[ExperimentResult]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in results {
        let p = &r.point;
        let fraction = p.forgotten_fraction.map(|f| format!("{f:.6}")).unwrap_or_default();
        let tau = match p.mode {
            AttackMode::Threshold(t) => format!("{t:.6}"),
            AttackMode::KnownCount(_) => String::new(),
        };
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{:.6},{:.6},{}",
            p.method.name(),
            p.level.name(),
            p.num_label_categories,
            fraction,
            tau,
            p.distribution.name(),
            p.mode.name(),
            r.num_trials(),
            r.mean_asr,
            r.std_asr,
            r.failures
        )
        .expect("writing to String cannot fail");
    }
    out
}

/// One JSON object per trial, fixed key order, 17-significant-digit floats
/// — the audit trail behind the CSV aggregates.
pub fn write_jsonl(results: &[ExperimentResult]) -> String {
    let mut out = String::new();
    for r in results {
        for t in &r.trials {
            let p = &t.point;
            out.push_str("{\"method\":");
            push_json_string(&mut out, p.method.name());
            out.push_str(",\"level\":");
            push_json_string(&mut out, p.level.name());
            out.push_str(",\"num_label_categories\":");
            out.push_str(&p.num_label_categories.to_string());
            out.push_str(",\"forgotten_fraction\":");
            match p.forgotten_fraction {
                Some(f) => push_float(&mut out, f),
                None => out.push_str("null"),
            }
            out.push_str(",\"tau\":");
            match p.mode {
                AttackMode::Threshold(tau) => push_float(&mut out, tau),
                AttackMode::KnownCount(_) => out.push_str("null"),
            }
            out.push_str(",\"distribution\":");
            push_json_string(&mut out, p.distribution.name());
            out.push_str(",\"alpha\":");
            match p.distribution.alpha() {
                Some(a) => push_float(&mut out, a),
                None => out.push_str("null"),
            }
            out.push_str(",\"mode\":");
            push_json_string(&mut out, p.mode.name());
            out.push_str(",\"trial\":");
            out.push_str(&t.trial.to_string());
            out.push_str(",\"seed\":");
            out.push_str(&t.seed.to_string());
            out.push_str(",\"true_labels\":");
            push_usize_array(&mut out, &t.true_labels);
            out.push_str(",\"predicted_labels\":");
            push_usize_array(&mut out, &t.predicted_labels);
            out.push_str(",\"asr\":");
            push_float(&mut out, t.asr);
            out.push_str(",\"failure\":");
            match &t.failure {
                Some(msg) => push_json_string(&mut out, msg),
                None => out.push_str("null"),
            }
            out.push_str("}\n");
        }
    }
    out
}

/// Human-readable aggregate table for terminal output.
pub fn format_table(results: &[ExperimentResult]) -> String {
    let mut out = String::new();
    writeln!(
        out,
        "{:<10} {:<7} {:>2} {:>9} {:>6} {:<9} {:<12} {:>6} {:>9} {:>8} {:>8}",
        "method", "level", "L", "fraction", "tau", "dist", "mode", "trials", "mean_asr", "std_asr",
        "failures"
    )
    .expect("writing to String cannot fail");
    for r in results {
        let p = &r.point;
        let fraction = p.forgotten_fraction.map(|f| format!("{f:.3}")).unwrap_or_else(|| "-".into());
        let tau = match p.mode {
            AttackMode::Threshold(t) => format!("{t:.2}"),
            AttackMode::KnownCount(k) => format!("k={k}"),
        };
        writeln!(
            out,
            "{:<10} {:<7} {:>2} {:>9} {:>6} {:<9} {:<12} {:>6} {:>9.3} {:>8.3} {:>8}",
            p.method.name(),
            p.level.name(),
            p.num_label_categories,
            fraction,
            tau,
            p.distribution.name(),
            p.mode.name(),
            r.num_trials(),
            r.mean_asr,
            r.std_asr,
            r.failures
        )
        .expect("writing to String cannot fail");
    }
    out
}

/// Accuracy of the pre- and post-unlearning models on the forgotten and
/// retained index sets — the raw material for unlearning-efficacy checks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EfficacyReport {
    pub forgotten_before: f64,
    pub forgotten_after: f64,
    pub retained_before: f64,
    pub retained_after: f64,
}

pub fn efficacy(
    dataset: &Dataset,
    forgotten: &[usize],
    retained: &[usize],
    before: &ParamVector,
    after: &ParamVector,
) -> Result<EfficacyReport> {
    if forgotten.is_empty() || retained.is_empty() {
        return Err(Error::Input(
            "efficacy needs nonempty forgotten and retained sets".into(),
        ));
    }
    Ok(EfficacyReport {
        forgotten_before: dataset_accuracy(dataset, before, forgotten)?,
        forgotten_after: dataset_accuracy(dataset, after, forgotten)?,
        retained_before: dataset_accuracy(dataset, before, retained)?,
        retained_after: dataset_accuracy(dataset, after, retained)?,
    })
}
