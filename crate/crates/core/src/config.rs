//! Experiment configuration: one strict TOML document per run.
//!
//! Unknown keys are rejected outright. Values can be overridden without
//! editing the file: environment variables with the `FEDSIM_` prefix
//! (`FEDSIM_CLIENT__ETA=0.05` maps to `client.eta`), then `--set path=value`
//! flags, which take precedence over the environment.

use crate::data::{
    generate_shared_minimizer, generate_synthetic, read_csv_dataset, read_idx_dataset,
    SharedMinimizerSpec, SplitDataset, SyntheticSpec,
};
use crate::engine::{AnalysisSettings, RunSettings, ServerRule};
use crate::error::{Error, Result};
use crate::models::{Model, ModelKind};
use crate::optim::{ClientRule, DeltaSgdParams};
use crate::partition::{partition_with_quotas, unequal_partition_sizes, Partition};
use crate::rng::{SeededRng, StreamKind};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

pub const ENV_PREFIX: &str = "FEDSIM_";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetSource {
    Synthetic,
    SharedMinimizer,
    Idx,
    Csv,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub source: DatasetSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classes: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature_dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_class: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spread: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pairs_per_class: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature_norm: Option<f64>,
    /// Generator seed; derived from the run seed when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_images: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_labels: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_images: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_labels: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AssignmentKind {
    Equal,
    Unequal,
}

fn default_assignment() -> AssignmentKind {
    AssignmentKind::Equal
}

fn default_alpha() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionConfig {
    pub clients: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_assignment")]
    pub assignment: AssignmentKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_min: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_max: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ServerKind {
    Fedavg,
    FedavgWeighted,
    Fedadam,
}

fn default_server() -> ServerKind {
    ServerKind::Fedavg
}

fn default_participation() -> f64 {
    1.0
}

fn default_local_epochs() -> usize {
    1
}

fn default_batch_size() -> usize {
    64
}

fn default_true() -> bool {
    true
}

fn default_eval_every() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FederationConfig {
    pub rounds: usize,
    #[serde(default = "default_participation")]
    pub participation: f64,
    #[serde(default = "default_local_epochs")]
    pub local_epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_server")]
    pub server: ServerKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub server_eta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub server_beta1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub server_beta2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub server_eps: Option<f64>,
    #[serde(default = "default_true")]
    pub parallel: bool,
    #[serde(default = "default_eval_every")]
    pub eval_every: usize,
    /// When false the wall-clock column is written as zero, making the
    /// metrics file byte-identical across repeat runs.
    #[serde(default = "default_true")]
    pub timing: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitKind {
    /// Model-specific: zeros for the convex models, scaled uniform for the MLP.
    Default,
    /// Seeded uniform(-init_scale, init_scale) over every parameter.
    Uniform,
}

fn default_init() -> InitKind {
    InitKind::Default
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hidden: Option<usize>,
    #[serde(default = "default_init")]
    pub init: InitKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init_scale: Option<f64>,
    /// Start from these checkpointed parameters instead of the configured
    /// initialization.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init_checkpoint: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RuleKind {
    Sgd,
    SgdDecay,
    Sgdm,
    SgdmDecay,
    Adam,
    Adagrad,
    Sps,
    DeltaSgd,
}

impl RuleKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            RuleKind::Sgd => "sgd",
            RuleKind::SgdDecay => "sgd-decay",
            RuleKind::Sgdm => "sgdm",
            RuleKind::SgdmDecay => "sgdm-decay",
            RuleKind::Adam => "adam",
            RuleKind::Adagrad => "adagrad",
            RuleKind::Sps => "sps",
            RuleKind::DeltaSgd => "delta-sgd",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GammaSchedule {
    /// Fixed amplifier (the experimental default).
    Fixed,
    /// gamma / (K sqrt(T)): the schedule assumed by the nonconvex rate bound.
    Theory,
}

fn default_gamma_schedule() -> GammaSchedule {
    GammaSchedule::Fixed
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClientConfig {
    pub rule: RuleKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default = "default_gamma_schedule")]
    pub gamma_schedule: GammaSchedule,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sps_c: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sps_fstar: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sps_max_eta: Option<f64>,
    /// Present (even as 0.0) engages the proximal wrapper; absent runs plain.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prox_mu: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum XStarMode {
    Zeros,
    Solve,
}

fn default_x_star() -> XStarMode {
    XStarMode::Zeros
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisConfig {
    pub lyapunov: bool,
    pub x_star: XStarMode,
    pub constants: bool,
    pub step_trace: bool,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            lyapunov: false,
            x_star: default_x_star(),
            constants: false,
            step_trace: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    pub dataset: DatasetConfig,
    pub partition: PartitionConfig,
    pub federation: FederationConfig,
    pub model: ModelConfig,
    pub client: ClientConfig,
    #[serde(default)]
    pub analysis: AnalysisConfig,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config(e.to_string()))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::config(e.to_string()))
    }

    /// Build the client rule, applying documented defaults. The adaptive rule
    /// needs no learning-rate key; Adam and Adagrad default to eta = 0.01.
    pub fn client_rule(&self) -> Result<ClientRule> {
        let c = &self.client;
        let need_eta = || {
            c.eta
                .ok_or_else(|| Error::config(format!("{} requires client.eta", c.rule.as_str())))
        };
        let rule = match c.rule {
            RuleKind::Sgd => ClientRule::Sgd { eta: need_eta()? },
            RuleKind::SgdDecay => ClientRule::SgdDecay { eta: need_eta()? },
            RuleKind::Sgdm => ClientRule::Sgdm {
                eta: need_eta()?,
                beta: c.beta.unwrap_or(0.9),
            },
            RuleKind::SgdmDecay => ClientRule::SgdmDecay {
                eta: need_eta()?,
                beta: c.beta.unwrap_or(0.9),
            },
            RuleKind::Adam => ClientRule::Adam {
                eta: c.eta.unwrap_or(0.01),
                beta1: c.beta1.unwrap_or(0.9),
                beta2: c.beta2.unwrap_or(0.999),
                eps: c.eps.unwrap_or(1e-8),
            },
            RuleKind::Adagrad => ClientRule::Adagrad {
                eta: c.eta.unwrap_or(0.01),
                eps: c.eps.unwrap_or(1e-10),
            },
            RuleKind::Sps => ClientRule::Sps {
                c: c.sps_c.unwrap_or(0.5),
                fstar: c.sps_fstar.unwrap_or(0.0),
                max_eta: c.sps_max_eta,
            },
            RuleKind::DeltaSgd => ClientRule::DeltaSgd(DeltaSgdParams {
                gamma: c.gamma.unwrap_or(2.0),
                delta: c.delta.unwrap_or(0.1),
                eta0: c.eta0.unwrap_or(0.2),
                theta0: c.theta0.unwrap_or(1.0),
            }),
        };
        rule.validate()?;
        Ok(rule)
    }

    pub fn server_rule(&self) -> ServerRule {
        let f = &self.federation;
        match f.server {
            ServerKind::Fedavg => ServerRule::FedAvg,
            ServerKind::FedavgWeighted => ServerRule::FedAvgWeighted,
            ServerKind::Fedadam => ServerRule::FedAdam {
                eta: f.server_eta.unwrap_or(0.001),
                beta1: f.server_beta1.unwrap_or(0.9),
                beta2: f.server_beta2.unwrap_or(0.999),
                eps: f.server_eps.unwrap_or(1e-8),
            },
        }
    }

    fn data_seed(&self) -> u64 {
        self.dataset.data_seed.unwrap_or(self.seed.wrapping_add(1))
    }

    fn require(field: Option<usize>, name: &str) -> Result<usize> {
        field.ok_or_else(|| Error::config(format!("dataset.{name} is required for this source")))
    }

    /// Materialize the dataset. Shared-minimizer data arrives with its own
    /// per-client assignment.
    pub fn build_dataset(&self) -> Result<(SplitDataset, Option<Partition>)> {
        let d = &self.dataset;
        match d.source {
            DatasetSource::Synthetic => {
                let spec = SyntheticSpec {
                    classes: Self::require(d.classes, "classes")?,
                    feature_dim: Self::require(d.feature_dim, "feature_dim")?,
                    per_class: Self::require(d.per_class, "per_class")?,
                    spread: d.spread.unwrap_or(0.3),
                    scale: d.scale.unwrap_or(1.0),
                    seed: self.data_seed(),
                };
                Ok((generate_synthetic(&spec)?, None))
            }
            DatasetSource::SharedMinimizer => {
                let spec = SharedMinimizerSpec {
                    classes: Self::require(d.classes, "classes")?,
                    feature_dim: Self::require(d.feature_dim, "feature_dim")?,
                    pairs_per_class: Self::require(d.pairs_per_class, "pairs_per_class")?,
                    feature_norm: d.feature_norm.unwrap_or(0.5),
                    seed: self.data_seed(),
                };
                let (split, partition) = generate_shared_minimizer(&spec, self.partition.clients)?;
                Ok((split, Some(partition)))
            }
            DatasetSource::Idx => {
                let path = |p: &Option<PathBuf>, name: &str| {
                    p.clone()
                        .ok_or_else(|| Error::config(format!("dataset.{name} is required for idx")))
                };
                let train = read_idx_dataset(
                    &path(&d.train_images, "train_images")?,
                    &path(&d.train_labels, "train_labels")?,
                )?;
                let test = read_idx_dataset(
                    &path(&d.test_images, "test_images")?,
                    &path(&d.test_labels, "test_labels")?,
                )?;
                Ok((SplitDataset { train, test }, None))
            }
            DatasetSource::Csv => {
                let train_path = d
                    .train
                    .clone()
                    .ok_or_else(|| Error::config("dataset.train is required for csv"))?;
                let test_path = d
                    .test
                    .clone()
                    .ok_or_else(|| Error::config("dataset.test is required for csv"))?;
                let train = read_csv_dataset(&train_path)?;
                let test = read_csv_dataset(&test_path)?;
                Ok((SplitDataset { train, test }, None))
            }
        }
    }

    pub fn build_partition(&self, split: &SplitDataset) -> Result<Partition> {
        let p = &self.partition;
        if p.clients == 0 {
            return Err(Error::config("partition.clients must be >= 1"));
        }
        let mut rng = SeededRng::for_purpose(self.seed, StreamKind::Partition);
        let quotas = match p.assignment {
            AssignmentKind::Equal => {
                let quota = split.train.len() / p.clients;
                if quota == 0 {
                    return Err(Error::config(format!(
                        "{} clients exceed {} training samples",
                        p.clients,
                        split.train.len()
                    )));
                }
                vec![quota; p.clients]
            }
            AssignmentKind::Unequal => {
                let n_min = p
                    .n_min
                    .ok_or_else(|| Error::config("partition.n_min required for unequal sizes"))?;
                let n_max = p
                    .n_max
                    .ok_or_else(|| Error::config("partition.n_max required for unequal sizes"))?;
                unequal_partition_sizes(p.clients, n_min, n_max, split.train.len(), &mut rng)?
            }
        };
        partition_with_quotas(
            split.train.labels(),
            split.train.n_classes(),
            &quotas,
            p.alpha,
            &mut rng,
        )
    }

    pub fn build_model(&self, split: &SplitDataset) -> Result<Model> {
        let d = split.train.feature_dim();
        let c = split.train.n_classes();
        Ok(match self.model.kind {
            ModelKind::LinearRegression => Model::linear_regression(d, c),
            ModelKind::SoftmaxRegression => Model::softmax_regression(d, c),
            ModelKind::Mlp => {
                let hidden = self
                    .model
                    .hidden
                    .ok_or_else(|| Error::config("model.hidden is required for mlp"))?;
                Model::mlp(d, hidden, c)
            }
        })
    }

    /// Resolve explicit initial parameters; `param_count` sizes the uniform
    /// draw. Checkpoints take precedence over the init kind.
    pub fn initial_params(&self, param_count: usize) -> Result<Option<crate::math::ParamVector>> {
        if let Some(path) = &self.model.init_checkpoint {
            return Ok(Some(crate::checkpoint::read_checkpoint(path)?));
        }
        match self.model.init {
            InitKind::Default => Ok(None),
            InitKind::Uniform => {
                use rand::Rng;
                let scale = self.model.init_scale.unwrap_or(1.0);
                let mut rng = SeededRng::for_purpose(self.seed, StreamKind::ParamInit);
                Ok(Some(crate::math::ParamVector(
                    (0..param_count)
                        .map(|_| rng.random_range(-scale..scale))
                        .collect(),
                )))
            }
        }
    }

    /// Engine settings with default initialization; `runner::execute_run`
    /// fills `init_params` from `initial_params`.
    pub fn run_settings(&self, analysis: AnalysisSettings) -> Result<RunSettings> {
        Ok(RunSettings {
            rounds: self.federation.rounds,
            participation: self.federation.participation,
            local_epochs: self.federation.local_epochs,
            batch_size: self.federation.batch_size,
            server: self.server_rule(),
            client_rule: self.client_rule()?,
            prox_mu: self.client.prox_mu,
            seed: self.seed,
            parallel: self.federation.parallel,
            eval_every: self.federation.eval_every,
            timing: self.federation.timing,
            init_params: None,
            gamma_theory_schedule: self.client.gamma_schedule == GammaSchedule::Theory,
            analysis,
        })
    }

    /// Short name of the task for reports.
    pub fn task_label(&self) -> String {
        if let Some(label) = &self.label {
            return label.clone();
        }
        match self.dataset.source {
            DatasetSource::Synthetic => format!(
                "syn-c{}d{}x{}-a{}",
                self.dataset.classes.unwrap_or(0),
                self.dataset.feature_dim.unwrap_or(0),
                self.dataset.scale.unwrap_or(1.0),
                self.partition.alpha
            ),
            DatasetSource::SharedMinimizer => format!(
                "sharedmin-c{}d{}",
                self.dataset.classes.unwrap_or(0),
                self.dataset.feature_dim.unwrap_or(0)
            ),
            DatasetSource::Idx => "idx".to_string(),
            DatasetSource::Csv => "csv".to_string(),
        }
    }

    /// Short name of the optimizer setup for reports.
    pub fn optimizer_label(&self) -> String {
        let rule = self.client.rule.as_str();
        match self.client.rule {
            RuleKind::Sgd | RuleKind::SgdDecay | RuleKind::Sgdm | RuleKind::SgdmDecay => {
                match self.client.eta {
                    Some(eta) => format!("{rule}({eta})"),
                    None => rule.to_string(),
                }
            }
            RuleKind::Adam | RuleKind::Adagrad => {
                format!("{rule}({})", self.client.eta.unwrap_or(0.01))
            }
            _ => rule.to_string(),
        }
    }

    /// Semantic validation beyond what serde enforces.
    pub fn validate(&self) -> Result<()> {
        self.client_rule()?;
        if !(self.federation.participation > 0.0 && self.federation.participation <= 1.0) {
            return Err(Error::config("federation.participation must be in (0, 1]"));
        }
        if (self.federation.participation * self.partition.clients as f64).floor() < 1.0 {
            return Err(Error::config(
                "participation too small to sample a single client",
            ));
        }
        if self.federation.batch_size == 0
            || self.federation.local_epochs == 0
            || self.federation.eval_every == 0
        {
            return Err(Error::config(
                "batch_size, local_epochs, eval_every must be >= 1",
            ));
        }
        if let Some(mu) = self.client.prox_mu {
            if mu < 0.0 || !mu.is_finite() {
                return Err(Error::config("client.prox_mu must be >= 0"));
            }
        }
        if self.partition.assignment == AssignmentKind::Unequal
            && (self.partition.n_min.is_none() || self.partition.n_max.is_none())
        {
            return Err(Error::config(
                "unequal assignment needs partition.n_min and partition.n_max",
            ));
        }
        if self.model.kind == ModelKind::Mlp && self.model.hidden.is_none() {
            return Err(Error::config("model.hidden is required for mlp"));
        }
        if self.analysis.lyapunov && self.model.kind == ModelKind::Mlp {
            return Err(Error::config(
                "lyapunov tracking applies to the convex models only",
            ));
        }
        Ok(())
    }
}

/// The designated tuning task: the most heterogeneous convex setup, used as
/// the default sweep base and as the reference task in the acceptance suite.
pub fn reference_config() -> ExperimentConfig {
    ExperimentConfig {
        seed: 17,
        label: None,
        output_dir: None,
        dataset: DatasetConfig {
            source: DatasetSource::Synthetic,
            classes: Some(5),
            feature_dim: Some(8),
            per_class: Some(250),
            spread: Some(0.25),
            scale: Some(1.0),
            pairs_per_class: None,
            feature_norm: None,
            data_seed: None,
            train_images: None,
            train_labels: None,
            test_images: None,
            test_labels: None,
            train: None,
            test: None,
        },
        partition: PartitionConfig {
            clients: 20,
            alpha: 0.1,
            assignment: AssignmentKind::Equal,
            n_min: None,
            n_max: None,
        },
        federation: FederationConfig {
            rounds: 60,
            participation: 0.5,
            local_epochs: 1,
            batch_size: 32,
            server: ServerKind::Fedavg,
            server_eta: None,
            server_beta1: None,
            server_beta2: None,
            server_eps: None,
            parallel: true,
            eval_every: 1,
            timing: true,
        },
        model: ModelConfig {
            kind: ModelKind::SoftmaxRegression,
            hidden: None,
            init: InitKind::Default,
            init_scale: None,
            init_checkpoint: None,
        },
        client: ClientConfig {
            rule: RuleKind::DeltaSgd,
            eta: None,
            beta: None,
            beta1: None,
            beta2: None,
            eps: None,
            gamma: None,
            gamma_schedule: GammaSchedule::Fixed,
            delta: None,
            eta0: None,
            theta0: None,
            sps_c: None,
            sps_fstar: None,
            sps_max_eta: None,
            prox_mu: None,
        },
        analysis: AnalysisConfig::default(),
    }
}

/// Set a dotted path inside a TOML value, creating tables along the way. The
/// raw text is parsed as a TOML literal and falls back to a plain string.
pub fn set_toml_path(root: &mut toml::Value, path: &str, raw: &str) -> Result<()> {
    set_toml_path_value(root, path, parse_toml_literal(raw))
}

/// As `set_toml_path`, but with an already-typed value.
pub fn set_toml_path_value(root: &mut toml::Value, path: &str, parsed: toml::Value) -> Result<()> {
    let mut cursor = root;
    let parts: Vec<&str> = path.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::config(format!("malformed override path '{path}'")));
    }
    for part in &parts[..parts.len() - 1] {
        let table = cursor
            .as_table_mut()
            .ok_or_else(|| Error::config(format!("'{path}' does not address a table")))?;
        cursor = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(Default::default()));
    }
    let table = cursor
        .as_table_mut()
        .ok_or_else(|| Error::config(format!("'{path}' does not address a table")))?;
    table.insert(parts[parts.len() - 1].to_string(), parsed);
    Ok(())
}

fn parse_toml_literal(raw: &str) -> toml::Value {
    let probe = format!("v = {raw}");
    match toml::from_str::<toml::Table>(&probe) {
        Ok(mut table) => table.remove("v").expect("probe key"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Apply an ordered list of (path, raw value) overrides to a config.
pub fn apply_overrides(config: &ExperimentConfig, overrides: &[(String, String)]) -> Result<ExperimentConfig> {
    let text = config.to_toml_string()?;
    let mut value: toml::Value =
        toml::from_str(&text).map_err(|e| Error::config(e.to_string()))?;
    for (path, raw) in overrides {
        set_toml_path(&mut value, path, raw)?;
    }
    value
        .try_into()
        .map_err(|e: toml::de::Error| Error::config(e.to_string()))
}

/// Overrides drawn from the process environment: `FEDSIM_A__B=value` sets
/// `a.b`. Double underscores separate path segments so key names may contain
/// single underscores.
pub fn env_overrides() -> Vec<(String, String)> {
    let mut found: Vec<(String, String)> = std::env::vars()
        .filter_map(|(key, value)| {
            let rest = key.strip_prefix(ENV_PREFIX)?;
            let path = rest
                .split("__")
                .map(|part| part.to_lowercase())
                .collect::<Vec<_>>()
                .join(".");
            Some((path, value))
        })
        .collect();
    found.sort();
    found
}

/// Load a config file and apply environment, then flag overrides.
pub fn load_config(path: &Path, flag_overrides: &[(String, String)]) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut value: toml::Value =
        toml::from_str(&text).map_err(|e| Error::config(e.to_string()))?;
    for (p, raw) in env_overrides() {
        set_toml_path(&mut value, &p, &raw)?;
    }
    for (p, raw) in flag_overrides {
        set_toml_path(&mut value, p, raw)?;
    }
    let config: ExperimentConfig = value
        .try_into()
        .map_err(|e: toml::de::Error| Error::config(e.to_string()))?;
    config.validate()?;
    Ok(config)
}

/// One sweep axis: a config path and the values to try, expanded in
/// declaration order.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepAxis {
    pub path: String,
    pub values: Vec<toml::Value>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    /// Seeds shared by every configuration; defaults to the base seed.
    #[serde(default)]
    pub seeds: Vec<u64>,
    /// Base experiment; the designated tuning task when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base: Option<ExperimentConfig>,
    #[serde(default)]
    pub axes: Vec<SweepAxis>,
}

impl SweepSpec {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::from_toml_str(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_config_round_trips() {
        let config = reference_config();
        let text = config.to_toml_string().unwrap();
        let back = ExperimentConfig::from_toml_str(&text).unwrap();
        assert_eq!(config, back);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut text = reference_config().to_toml_string().unwrap();
        text.push_str("\n[typo_section]\nx = 1\n");
        assert!(ExperimentConfig::from_toml_str(&text).is_err());
        let bad_key = text.replace("[typo_section]\nx = 1", "");
        let with_bad_field = bad_key.replace("rounds = 60", "rounds = 60\nrunds = 3");
        assert!(ExperimentConfig::from_toml_str(&with_bad_field).is_err());
    }

    #[test]
    fn adaptive_rule_needs_no_learning_rate() {
        let config = reference_config();
        assert!(config.client.eta.is_none());
        let rule = config.client_rule().unwrap();
        assert_eq!(
            rule,
            ClientRule::DeltaSgd(DeltaSgdParams {
                gamma: 2.0,
                delta: 0.1,
                eta0: 0.2,
                theta0: 1.0
            })
        );
    }

    #[test]
    fn sgd_without_eta_is_a_config_error() {
        let mut config = reference_config();
        config.client.rule = RuleKind::Sgd;
        assert!(matches!(config.client_rule(), Err(Error::Config(_))));
    }

    #[test]
    fn adam_defaults_to_grid_midpoint() {
        let mut config = reference_config();
        config.client.rule = RuleKind::Adam;
        match config.client_rule().unwrap() {
            ClientRule::Adam { eta, .. } => assert_eq!(eta, 0.01),
            other => panic!("unexpected rule {other:?}"),
        }
    }

    #[test]
    fn overrides_apply_in_order() {
        let config = reference_config();
        let out = apply_overrides(
            &config,
            &[
                ("client.eta0".into(), "0.5".into()),
                ("federation.rounds".into(), "7".into()),
                ("client.eta0".into(), "0.3".into()),
            ],
        )
        .unwrap();
        assert_eq!(out.client.eta0, Some(0.3));
        assert_eq!(out.federation.rounds, 7);
    }

    #[test]
    fn override_with_unknown_path_fails_strictly() {
        let config = reference_config();
        let result = apply_overrides(&config, &[("client.lern_rate".into(), "0.1".into())]);
        assert!(result.is_err());
    }

    #[test]
    fn env_override_round_trip() {
        // Unique prefix key to avoid interference across parallel tests.
        std::env::set_var("FEDSIM_FEDERATION__EVAL_EVERY", "5");
        let found = env_overrides();
        std::env::remove_var("FEDSIM_FEDERATION__EVAL_EVERY");
        assert!(found
            .iter()
            .any(|(p, v)| p == "federation.eval_every" && v == "5"));
    }

    #[test]
    fn sweep_spec_parses_with_default_base() {
        let text = r#"
seeds = [1, 2]
[[axes]]
path = "client.eta"
values = [0.01, 0.05, 0.1, 0.5]
"#;
        let spec = SweepSpec::from_toml_str(text).unwrap();
        assert!(spec.base.is_none());
        assert_eq!(spec.axes.len(), 1);
        assert_eq!(spec.axes[0].values.len(), 4);
    }

    #[test]
    fn string_literals_fall_back_gracefully() {
        let config = reference_config();
        let out = apply_overrides(&config, &[("label".into(), "task-a".into())]).unwrap();
        assert_eq!(out.label.as_deref(), Some("task-a"));
    }
}
