//! The run configuration: one TOML document covering dataset, federation,
//! unlearning, attack, distribution, and sweep settings. Every key has a
//! default, so a config file only states what it changes, and the whole
//! document round-trips (serialize defaults, reload, validate) unchanged.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use fedunlearn::attack::AttackMode;
use fedunlearn::data::{idx, Dataset};
use fedunlearn::error::{Error, Result};
use fedunlearn::eval::{Distribution, GridAxes, GridPoint, Level, ModeAxis, Scenario};
use fedunlearn::federation::FLConfig;
use fedunlearn::unlearning::{Method, UnlearnConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Base seed; trial i of an experiment uses `seed + i`.
    pub seed: u64,
    /// Output directory for history dumps, reports, and result tables.
    pub out: PathBuf,
    /// Trials per grid point.
    pub trials: usize,
    /// Rounds the attack's learning-rate estimator looks back over.
    pub window: usize,
    pub dataset: DatasetSection,
    pub federation: FederationSection,
    pub unlearning: UnlearningSection,
    pub attack: AttackSection,
    pub distribution: DistributionSection,
    pub sweep: SweepSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            out: PathBuf::from("runs/out"),
            trials: 30,
            window: 5,
            dataset: DatasetSection::default(),
            federation: FederationSection::default(),
            unlearning: UnlearningSection::default(),
            attack: AttackSection::default(),
            distribution: DistributionSection::default(),
            sweep: SweepSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    /// "synthetic" (seeded Gaussian blobs) or "idx" (big-endian IDX files).
    pub kind: String,
    pub num_classes: usize,
    pub samples_per_class: usize,
    pub feature_dim: usize,
    /// Noise scale of the synthetic class blobs.
    pub spread: f64,
    /// IDX image file; only read when kind = "idx".
    pub images: PathBuf,
    /// IDX label file; only read when kind = "idx".
    pub labels: PathBuf,
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self {
            kind: "synthetic".into(),
            num_classes: 10,
            samples_per_class: 60,
            feature_dim: 20,
            spread: 0.35,
            images: PathBuf::new(),
            labels: PathBuf::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FederationSection {
    pub num_clients: usize,
    pub rounds: usize,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub hidden_dims: Vec<usize>,
}

impl Default for FederationSection {
    fn default() -> Self {
        let fl = FLConfig::default();
        Self {
            num_clients: fl.num_clients,
            rounds: fl.rounds,
            local_epochs: fl.local_epochs,
            batch_size: fl.batch_size,
            learning_rate: fl.learning_rate,
            hidden_dims: fl.hidden_dims,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UnlearningSection {
    /// "federaser", "retrain", or "sga_ewc".
    pub method: String,
    /// "sample", "class", or "client".
    pub level: String,
    /// How many label categories the request covers.
    pub num_label_categories: usize,
    /// Sample level only: fraction of the target's holdings to forget.
    pub forgotten_fraction: f64,
    pub calibration_epochs: usize,
    pub ascent_steps: usize,
    pub lambda_ewc: f64,
    pub fine_tune_rounds: usize,
}

impl Default for UnlearningSection {
    fn default() -> Self {
        let u = UnlearnConfig::default();
        Self {
            method: "federaser".into(),
            level: "class".into(),
            num_label_categories: 1,
            forgotten_fraction: 0.1,
            calibration_epochs: u.calibration_epochs,
            ascent_steps: u.ascent_steps,
            lambda_ewc: u.lambda_ewc,
            fine_tune_rounds: u.fine_tune_rounds,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackSection {
    /// "threshold" or "known_count".
    pub mode: String,
    /// Z-score cutoff for threshold mode.
    pub tau: f64,
    /// Candidate count for known-count mode; 0 means "use the request's
    /// category count".
    pub known_count: usize,
}

impl Default for AttackSection {
    fn default() -> Self {
        Self { mode: "threshold".into(), tau: 2.0, known_count: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistributionSection {
    /// "iid" or "dirichlet".
    pub kind: String,
    /// Dirichlet concentration; smaller is more skewed.
    pub alpha: f64,
}

impl Default for DistributionSection {
    fn default() -> Self {
        Self { kind: "iid".into(), alpha: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub methods: Vec<String>,
    pub levels: Vec<String>,
    pub num_label_categories: Vec<usize>,
    /// Sample-level fractions; ignored by other levels.
    pub fractions: Vec<f64>,
    /// Mode axis entries: "threshold" fans out over `taus`; "known_count"
    /// uses each point's own category count.
    pub modes: Vec<String>,
    pub taus: Vec<f64>,
    /// "iid" and/or "dirichlet"; dirichlet points use `distribution.alpha`.
    pub distributions: Vec<String>,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            methods: vec!["federaser".into(), "retrain".into(), "sga_ewc".into()],
            levels: vec!["class".into()],
            num_label_categories: vec![1],
            fractions: vec![0.1],
            modes: vec!["threshold".into()],
            taus: vec![2.0],
            distributions: vec!["iid".into()],
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("config parse error: {e}")))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes to TOML")
    }

    fn parse_distribution(&self, kind: &str) -> Result<Distribution> {
        match kind {
            "iid" => Ok(Distribution::Iid),
            "dirichlet" => Ok(Distribution::Dirichlet(self.distribution.alpha)),
            other => Err(Error::Config(format!(
                "unknown distribution '{other}' (expected iid or dirichlet)"
            ))),
        }
    }

    /// The fixed per-trial setup this config describes.
    pub fn scenario(&self) -> Scenario {
        let f = &self.federation;
        Scenario {
            fl: FLConfig {
                num_clients: f.num_clients,
                rounds: f.rounds,
                local_epochs: f.local_epochs,
                batch_size: f.batch_size,
                learning_rate: f.learning_rate,
                hidden_dims: f.hidden_dims.clone(),
                seed: self.seed,
            },
            num_classes: self.dataset.num_classes,
            samples_per_class: self.dataset.samples_per_class,
            feature_dim: self.dataset.feature_dim,
            spread: self.dataset.spread,
            unlearn: UnlearnConfig {
                calibration_epochs: self.unlearning.calibration_epochs,
                ascent_steps: self.unlearning.ascent_steps,
                lambda_ewc: self.unlearning.lambda_ewc,
                fine_tune_rounds: self.unlearning.fine_tune_rounds,
            },
            window: self.window,
        }
    }

    /// The grid point the single-run commands (train/unlearn/attack) use.
    pub fn single_point(&self) -> Result<GridPoint> {
        let method: Method = self.unlearning.method.parse()?;
        let level: Level = self.unlearning.level.parse()?;
        let l = self.unlearning.num_label_categories;
        let mode = match self.attack.mode.as_str() {
            "threshold" => AttackMode::Threshold(self.attack.tau),
            "known_count" => {
                let k = if self.attack.known_count == 0 { l } else { self.attack.known_count };
                AttackMode::KnownCount(k)
            }
            other => {
                return Err(Error::Config(format!(
                    "unknown attack mode '{other}' (expected threshold or known_count)"
                )));
            }
        };
        Ok(GridPoint {
            method,
            level,
            num_label_categories: l,
            forgotten_fraction: match level {
                Level::Sample => Some(self.unlearning.forgotten_fraction),
                _ => None,
            },
            mode,
            distribution: self.parse_distribution(&self.distribution.kind)?,
        })
    }

    /// The experiment grid this config describes.
    pub fn axes(&self) -> Result<GridAxes> {
        let s = &self.sweep;
        let methods: Result<Vec<Method>> = s.methods.iter().map(|m| m.parse()).collect();
        let levels: Result<Vec<Level>> = s.levels.iter().map(|l| l.parse()).collect();
        let modes: Result<Vec<ModeAxis>> = s
            .modes
            .iter()
            .map(|m| match m.as_str() {
                "threshold" => Ok(ModeAxis::Threshold(s.taus.clone())),
                "known_count" => Ok(ModeAxis::KnownCount),
                other => Err(Error::Config(format!(
                    "unknown sweep mode '{other}' (expected threshold or known_count)"
                ))),
            })
            .collect();
        let distributions: Result<Vec<Distribution>> =
            s.distributions.iter().map(|d| self.parse_distribution(d)).collect();
        Ok(GridAxes {
            methods: methods?,
            levels: levels?,
            num_label_categories: s.num_label_categories.clone(),
            fractions: s.fractions.clone(),
            modes: modes?,
            distributions: distributions?,
        })
    }

    pub fn is_synthetic(&self) -> Result<bool> {
        match self.dataset.kind.as_str() {
            "synthetic" => Ok(true),
            "idx" => Ok(false),
            other => Err(Error::Config(format!(
                "unknown dataset kind '{other}' (expected synthetic or idx)"
            ))),
        }
    }

    /// Loads the IDX dataset pair named by the config.
    pub fn load_idx(&self) -> Result<Dataset> {
        if self.dataset.images.as_os_str().is_empty() || self.dataset.labels.as_os_str().is_empty()
        {
            return Err(Error::Config(
                "dataset.kind = \"idx\" needs dataset.images and dataset.labels paths".into(),
            ));
        }
        idx::load_dataset(&self.dataset.images, &self.dataset.labels, None)
    }

    /// Full validation: every enum string parses, the scenario is
    /// self-consistent, the single-run point is coherent, and the sweep
    /// grid expands.
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        self.is_synthetic()?;
        self.scenario().validate()?;
        let point = self.single_point()?;
        if self.is_synthetic()? {
            point.validate(self.dataset.num_classes)?;
        }
        self.axes()?.expand()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let config = RunConfig::default();
        config.validate().unwrap();
        let text = config.to_toml_string();
        let reloaded = RunConfig::from_toml_str(&text).unwrap();
        assert_eq!(reloaded, config);
        reloaded.validate().unwrap();
    }

    #[test]
    fn empty_document_is_all_defaults() {
        let config = RunConfig::from_toml_str("").unwrap();
        assert_eq!(config, RunConfig::default());
    }

    #[test]
    fn partial_overrides_keep_other_defaults() {
        let config = RunConfig::from_toml_str(
            "seed = 7\n[federation]\nrounds = 5\n[unlearning]\nmethod = \"retrain\"\n",
        )
        .unwrap();
        assert_eq!(config.seed, 7);
        assert_eq!(config.federation.rounds, 5);
        assert_eq!(config.federation.num_clients, 10);
        assert_eq!(config.unlearning.method, "retrain");
        let point = config.single_point().unwrap();
        assert_eq!(point.method, Method::Retrain);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_toml_str("sneed = 7\n").is_err());
        assert!(RunConfig::from_toml_str("[federation]\nround = 5\n").is_err());
    }

    #[test]
    fn bad_enum_values_fail_validation() {
        let mut config = RunConfig::default();
        config.unlearning.method = "osmosis".into();
        assert!(config.validate().is_err());

        let mut config = RunConfig::default();
        config.attack.mode = "psychic".into();
        assert!(config.validate().is_err());

        let mut config = RunConfig::default();
        config.attack.known_count = 99;
        config.attack.mode = "known_count".into();
        assert!(config.validate().is_err());

        let mut config = RunConfig::default();
        config.sweep.methods.clear();
        assert!(config.validate().is_err());
    }

    #[test]
    fn known_count_zero_tracks_category_count() {
        let mut config = RunConfig::default();
        config.attack.mode = "known_count".into();
        config.unlearning.num_label_categories = 3;
        let point = config.single_point().unwrap();
        assert_eq!(point.mode, AttackMode::KnownCount(3));
    }
}
