//! Experiment configuration: a TOML document with one section per
//! subsystem, CLI-overridable, validated with field-level messages.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::adversary::BehaviorProfile;
use crate::crypto::derive_seed_u64;
use crate::error::{Error, Result};
use crate::fl::Activation;
use crate::incentive::ReputationConfig;
use crate::netsim::LatencyConfig;

/// Pipeline variant: the protected pipeline or the plain baseline.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Screening, blockchain, reputation-weighted selection.
    Bfmeta,
    /// Uniform random selection, no screening, no blacklist, no chain.
    Fedavg,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Mode> {
        match s {
            "bfmeta" => Ok(Mode::Bfmeta),
            "fedavg" => Ok(Mode::Fedavg),
            other => Err(Error::config(format!(
                "mode must be 'bfmeta' or 'fedavg', got '{other}'"
            ))),
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Bfmeta => "bfmeta",
            Mode::Fedavg => "fedavg",
        })
    }
}

/// Fractions of the malicious population per attack kind, plus per-kind
/// knobs. Defaults model the lazy-client experiments.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BehaviorMix {
    pub lazy: f64,
    pub falsifier: f64,
    pub sybil: f64,
    pub replayer: f64,
    /// Round from which lazy clients freeze (they train their first
    /// submission regardless).
    pub lazy_start_round: u64,
    /// Uniform perturbation magnitude applied by falsifiers after signing.
    pub falsifier_noise: f64,
}

impl Default for BehaviorMix {
    fn default() -> Self {
        BehaviorMix {
            lazy: 1.0,
            falsifier: 0.0,
            sybil: 0.0,
            replayer: 0.0,
            lazy_start_round: 2,
            falsifier_noise: 0.5,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    /// Total clients K.
    pub clients: usize,
    /// Fraction of clients selected for aggregation each round.
    pub selection_rate: f64,
    /// Fraction of non-honest clients.
    pub malicious_rate: f64,
    pub behavior_mix: BehaviorMix,
    /// Explicit per-client profiles ("honest", "lazy", "falsifier",
    /// "sybil", "replayer"); overrides `malicious_rate` sampling.
    pub behaviors: Option<Vec<String>>,
    /// Training stops once the global model reaches this holdout accuracy.
    pub target_accuracy: f64,
    pub max_rounds: u64,
    pub seed: u64,
    pub mode: Mode,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        ExperimentSection {
            clients: 30,
            selection_rate: 0.5,
            malicious_rate: 0.0,
            behavior_mix: BehaviorMix::default(),
            behaviors: None,
            target_accuracy: 0.8,
            max_rounds: 40,
            seed: 0,
            mode: Mode::Bfmeta,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub hidden_layers: Vec<u32>,
    pub activation: Activation,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            hidden_layers: vec![16],
            activation: Activation::Relu,
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSection {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for TrainingSection {
    fn default() -> Self {
        TrainingSection {
            learning_rate: 0.3,
            epochs: 2,
            batch_size: 32,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataKind {
    Synthetic,
    Csv,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub kind: DataKind,
    pub classes: usize,
    pub dims: usize,
    /// Per-client shard sizes drawn uniformly from this inclusive range.
    pub client_samples_min: usize,
    pub client_samples_max: usize,
    pub center_spread: f64,
    pub noise_sigma: f64,
    pub label_skew: f64,
    /// Server-held holdout share of the pool.
    pub test_fraction: f64,
    /// Source file for `kind = "csv"` (header row, last column = label).
    pub csv_path: Option<String>,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            kind: DataKind::Synthetic,
            classes: 4,
            dims: 8,
            client_samples_min: 120,
            client_samples_max: 240,
            center_spread: 3.0,
            noise_sigma: 1.0,
            label_skew: 0.0,
            test_fraction: 0.2,
            csv_path: None,
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MonitorSection {
    /// Multiplier on the batch mean accuracy used as the exclusion
    /// threshold (1.0 = the plain mean).
    pub accuracy_slack: f64,
}

impl Default for MonitorSection {
    fn default() -> Self {
        MonitorSection {
            accuracy_slack: 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LedgerSection {
    /// Proof-of-work difficulty in leading zero bits.
    pub difficulty: u32,
    /// Dedicated miner count; blocks are minted round-robin across them.
    pub miners: usize,
}

impl Default for LedgerSection {
    fn default() -> Self {
        LedgerSection {
            difficulty: 12,
            miners: 1,
        }
    }
}

/// Whole-experiment configuration.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    pub model: ModelSection,
    pub training: TrainingSection,
    pub data: DataSection,
    pub latency: LatencyConfig,
    pub reputation: ReputationConfig,
    pub monitor: MonitorSection,
    pub ledger: LedgerSection,
}

impl ExperimentConfig {
    pub fn from_toml_str(doc: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(doc).map_err(|e| Error::config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn from_file(path: &str) -> Result<Self> {
        let doc = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&doc)
    }

    pub fn validate(&self) -> Result<()> {
        let e = &self.experiment;
        if e.clients == 0 {
            return Err(Error::config("experiment.clients must be positive"));
        }
        if !(0.0 < e.selection_rate && e.selection_rate <= 1.0) {
            return Err(Error::config(
                "experiment.selection_rate must lie in (0, 1]",
            ));
        }
        if !(0.0..1.0).contains(&e.malicious_rate) {
            return Err(Error::config(
                "experiment.malicious_rate must lie in [0, 1)",
            ));
        }
        if !(0.0 < e.target_accuracy && e.target_accuracy <= 1.0) {
            return Err(Error::config(
                "experiment.target_accuracy must lie in (0, 1]",
            ));
        }
        if e.max_rounds == 0 {
            return Err(Error::config("experiment.max_rounds must be positive"));
        }
        let mix = &e.behavior_mix;
        for (name, v) in [
            ("lazy", mix.lazy),
            ("falsifier", mix.falsifier),
            ("sybil", mix.sybil),
            ("replayer", mix.replayer),
        ] {
            if !(v.is_finite() && (0.0..=1.0).contains(&v)) {
                return Err(Error::config(format!(
                    "experiment.behavior_mix.{name} must lie in [0, 1]"
                )));
            }
        }
        let mix_total = mix.lazy + mix.falsifier + mix.sybil + mix.replayer;
        if e.behaviors.is_none() && e.malicious_rate > 0.0 && (mix_total - 1.0).abs() > 1e-9 {
            return Err(Error::config(
                "experiment.behavior_mix fractions must sum to 1",
            ));
        }
        if !(mix.falsifier_noise.is_finite() && mix.falsifier_noise > 0.0) {
            return Err(Error::config(
                "experiment.behavior_mix.falsifier_noise must be positive",
            ));
        }
        if let Some(behaviors) = &e.behaviors {
            if behaviors.len() != e.clients {
                return Err(Error::config(format!(
                    "experiment.behaviors lists {} entries for {} clients",
                    behaviors.len(),
                    e.clients
                )));
            }
            for b in behaviors {
                parse_behavior(b, mix)?;
            }
        }

        if self.model.hidden_layers.iter().any(|&h| h == 0) {
            return Err(Error::config("model.hidden_layers must all be positive"));
        }

        let t = &self.training;
        if !(t.learning_rate.is_finite() && t.learning_rate >= 0.0) {
            return Err(Error::config(
                "training.learning_rate must be finite and >= 0",
            ));
        }
        if t.epochs == 0 {
            return Err(Error::config("training.epochs must be positive"));
        }
        if t.batch_size == 0 {
            return Err(Error::config("training.batch_size must be positive"));
        }

        let d = &self.data;
        if d.client_samples_min == 0 || d.client_samples_min > d.client_samples_max {
            return Err(Error::config(
                "data.client_samples_min must be positive and <= data.client_samples_max",
            ));
        }
        if t.batch_size > d.client_samples_min {
            return Err(Error::config(
                "training.batch_size must not exceed data.client_samples_min",
            ));
        }
        if !(0.0 < d.test_fraction && d.test_fraction < 1.0) {
            return Err(Error::config("data.test_fraction must lie in (0, 1)"));
        }
        match d.kind {
            DataKind::Synthetic => {
                if d.classes < 2 {
                    return Err(Error::config("data.classes must be at least 2"));
                }
                if d.dims == 0 {
                    return Err(Error::config("data.dims must be positive"));
                }
                if !(d.center_spread.is_finite() && d.center_spread > 0.0) {
                    return Err(Error::config("data.center_spread must be positive"));
                }
                if !(d.noise_sigma.is_finite() && d.noise_sigma > 0.0) {
                    return Err(Error::config("data.noise_sigma must be positive"));
                }
                if !(0.0..=1.0).contains(&d.label_skew) {
                    return Err(Error::config("data.label_skew must lie in [0, 1]"));
                }
            }
            DataKind::Csv => {
                if d.csv_path.is_none() {
                    return Err(Error::config("data.csv_path is required for kind = csv"));
                }
            }
        }

        self.latency.validate()?;
        self.reputation.validate()?;

        if !(self.monitor.accuracy_slack.is_finite() && self.monitor.accuracy_slack > 0.0) {
            return Err(Error::config("monitor.accuracy_slack must be positive"));
        }
        if self.ledger.difficulty > 256 {
            return Err(Error::config(
                "ledger.difficulty cannot exceed 256 leading zero bits",
            ));
        }
        if self.ledger.miners == 0 {
            return Err(Error::config("ledger.miners must be positive"));
        }
        Ok(())
    }

    /// Per-client behavior assignment: the explicit list when present,
    /// otherwise a seeded draw of `round(K * malicious_rate)` clients split
    /// across the mix by largest remainder.
    pub fn behavior_assignments(&self) -> Result<Vec<BehaviorProfile>> {
        let e = &self.experiment;
        let mix = &e.behavior_mix;
        if let Some(behaviors) = &e.behaviors {
            return behaviors.iter().map(|b| parse_behavior(b, mix)).collect();
        }
        let k = e.clients;
        let n_malicious = ((k as f64) * e.malicious_rate).round() as usize;
        let mut profiles = vec![BehaviorProfile::Honest; k];
        if n_malicious == 0 {
            return Ok(profiles);
        }

        // apportion kinds by largest remainder over the mix fractions
        let kinds = [
            (
                BehaviorProfile::Lazy {
                    start_round: mix.lazy_start_round,
                },
                mix.lazy,
            ),
            (
                BehaviorProfile::Falsifier {
                    noise_magnitude: mix.falsifier_noise,
                },
                mix.falsifier,
            ),
            (BehaviorProfile::Sybil, mix.sybil),
            (BehaviorProfile::Replayer, mix.replayer),
        ];
        let mut counts = [0usize; 4];
        let mut remainders: Vec<(usize, f64)> = Vec::new();
        let mut assigned = 0;
        for (i, (_, frac)) in kinds.iter().enumerate() {
            let exact = frac * n_malicious as f64;
            counts[i] = exact.floor() as usize;
            assigned += counts[i];
            remainders.push((i, exact - exact.floor()));
        }
        remainders.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        for (i, _) in remainders.iter().take(n_malicious - assigned) {
            counts[*i] += 1;
        }

        let mut indices: Vec<usize> = (0..k).collect();
        let mut rng = ChaCha20Rng::seed_from_u64(derive_seed_u64(e.seed, "behaviors"));
        indices.shuffle(&mut rng);
        let mut cursor = indices.into_iter();
        for (i, count) in counts.iter().enumerate() {
            for _ in 0..*count {
                let idx = cursor.next().expect("n_malicious <= clients");
                profiles[idx] = kinds[i].0;
            }
        }
        Ok(profiles)
    }
}

fn parse_behavior(name: &str, mix: &BehaviorMix) -> Result<BehaviorProfile> {
    match name {
        "honest" => Ok(BehaviorProfile::Honest),
        "lazy" => Ok(BehaviorProfile::Lazy {
            start_round: mix.lazy_start_round,
        }),
        "falsifier" => Ok(BehaviorProfile::Falsifier {
            noise_magnitude: mix.falsifier_noise,
        }),
        "sybil" => Ok(BehaviorProfile::Sybil),
        "replayer" => Ok(BehaviorProfile::Replayer),
        other => Err(Error::config(format!(
            "unknown behavior '{other}' (expected honest, lazy, falsifier, sybil, or replayer)"
        ))),
    }
}

/// Preset configurations for the malicious-rate sweep, both modes.
pub const PRESETS: &[(&str, &str)] = &[
    ("bfmeta-03", include_str!("../presets/bfmeta-03.toml")),
    ("bfmeta-10", include_str!("../presets/bfmeta-10.toml")),
    ("bfmeta-30", include_str!("../presets/bfmeta-30.toml")),
    ("bfmeta-50", include_str!("../presets/bfmeta-50.toml")),
    ("fedavg-03", include_str!("../presets/fedavg-03.toml")),
    ("fedavg-10", include_str!("../presets/fedavg-10.toml")),
    ("fedavg-30", include_str!("../presets/fedavg-30.toml")),
    ("fedavg-50", include_str!("../presets/fedavg-50.toml")),
];

pub fn preset(name: &str) -> Option<&'static str> {
    PRESETS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, doc)| *doc)
}

pub fn preset_names() -> Vec<&'static str> {
    PRESETS.iter().map(|(n, _)| *n).collect()
}
