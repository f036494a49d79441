//! Flat experiment and condensation config files (TOML or JSON).

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use qfl_core::condense::CondenseSpec;
use qfl_core::data::{self, Dataset, DpPcaBudget, SplitPlan};
use qfl_core::dp::NoiseMechanism;
use qfl_core::fed::{ExperimentPlan, ModelSpec, OptimizerChoice, Preprocess, ProtocolStack};
use qfl_core::modelshare::PruneSpec;
use qfl_core::optim::{AqgdSettings, DpSettings, SpsaSettings};
use qfl_core::qkd::Bb84Options;
use qfl_core::rng::{rng_from_seed, stream};
use qfl_core::vqc::Entanglement;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Iris,
    Csv,
    Genomic,
    Mnist,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Aqgd,
    Spsa,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    None,
    Laplace,
    Gaussian,
}

/// Where samples come from. Shared by `run` and `condense`.
#[derive(Debug, Clone, PartialEq)]
pub struct DataSource {
    pub dataset: DatasetKind,
    pub data_path: PathBuf,
    pub labels_path: Option<PathBuf>,
    pub keep_digits: Option<Vec<u8>>,
    pub class_count: Option<usize>,
    pub sequence_length: Option<usize>,
}

macro_rules! source_of {
    ($cfg:expr) => {
        DataSource {
            dataset: $cfg.dataset,
            data_path: $cfg.data_path.clone(),
            labels_path: $cfg.labels_path.clone(),
            keep_digits: $cfg.keep_digits.clone(),
            class_count: $cfg.class_count,
            sequence_length: $cfg.sequence_length,
        }
    };
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl DataSource {
    fn validate(&self) -> Result<(), CliError> {
        if self.dataset == DatasetKind::Mnist && self.labels_path.is_none() {
            return Err(CliError::schema("labels_path", "required for the mnist dataset"));
        }
        if self.dataset != DatasetKind::Mnist && (self.labels_path.is_some() || self.keep_digits.is_some()) {
            return Err(CliError::schema("labels_path", "labels_path and keep_digits only apply to mnist"));
        }
        if let Some(d) = &self.keep_digits {
            if d.is_empty() || d.iter().any(|&x| x > 9) {
                return Err(CliError::schema("keep_digits", "must be a non-empty subset of 0..=9"));
            }
        }
        if self.sequence_length == Some(0) {
            return Err(CliError::schema("sequence_length", "must be >= 1"));
        }
        Ok(())
    }

    /// Loads the raw samples. Genomic sequences come back ordinal-encoded,
    /// before any PCA.
    pub fn load(&self) -> Result<Dataset, CliError> {
        let ds = match self.dataset {
            DatasetKind::Iris => data::load_iris(&self.data_path)?,
            DatasetKind::Csv => data::load_csv(&self.data_path, self.class_count)?,
            DatasetKind::Genomic => {
                let recs = data::read_genomic(&self.data_path)?;
                if recs.is_empty() {
                    return Err(qfl_core::Error::EmptyDataset.into());
                }
                let len =
                    self.sequence_length.unwrap_or_else(|| recs.iter().map(|r| r.sequence.len()).max().unwrap_or(0));
                let x = data::ordinal_matrix(&recs, len)?;
                Dataset::new("genomic", x, recs.iter().map(|r| r.label).collect(), 2)?
            }
            DatasetKind::Mnist => data::load_mnist_idx(
                &self.data_path,
                self.labels_path.as_ref().expect("validated"),
                self.keep_digits.as_deref(),
            )?,
        };
        Ok(ds)
    }
}

fn default_rounds() -> usize {
    10
}
fn default_devices() -> usize {
    3
}
fn default_server() -> usize {
    15
}
fn default_train_fraction() -> f64 {
    0.8
}
fn default_one() -> usize {
    1
}
fn default_three() -> usize {
    3
}
fn default_maxiter() -> usize {
    100
}
fn default_eta() -> f64 {
    0.1
}
fn default_momentum() -> f64 {
    0.25
}
fn default_tol() -> f64 {
    1e-6
}
fn default_averaging() -> usize {
    10
}
fn default_spsa_gain() -> f64 {
    0.1
}
fn default_noise() -> NoiseKind {
    NoiseKind::None
}
fn default_epsilon() -> f64 {
    1.0
}
fn default_delta() -> f64 {
    1e-5
}
fn default_sensitivity() -> f64 {
    1.0
}
fn default_tau() -> f64 {
    0.5
}
fn default_check_fraction() -> f64 {
    0.1
}
fn default_abort() -> f64 {
    0.15
}
fn default_angle_range() -> f64 {
    2.0 * PI
}
fn default_optimizer() -> OptimizerKind {
    OptimizerKind::Aqgd
}

/// Everything an experiment needs, as one flat document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub name: String,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,

    pub dataset: DatasetKind,
    /// IRIS/CSV file, genomic text file, or IDX images.
    pub data_path: PathBuf,
    /// IDX labels (MNIST only).
    #[serde(default)]
    pub labels_path: Option<PathBuf>,
    #[serde(default)]
    pub keep_digits: Option<Vec<u8>>,
    /// CSV only; inferred from the labels when absent.
    #[serde(default)]
    pub class_count: Option<usize>,
    /// Genomic only: pad/truncate length.
    #[serde(default)]
    pub sequence_length: Option<usize>,
    #[serde(default)]
    pub pca_components: Option<usize>,
    #[serde(default = "default_angle_range")]
    pub angle_range: f64,

    #[serde(default = "default_rounds")]
    pub rounds: usize,
    #[serde(default = "default_devices")]
    pub devices: usize,
    #[serde(default)]
    pub samples_per_device: Option<usize>,
    #[serde(default = "default_server")]
    pub server_val_size: usize,
    #[serde(default = "default_server")]
    pub server_test_size: usize,
    #[serde(default = "default_train_fraction")]
    pub local_train_fraction: f64,

    #[serde(default = "default_one")]
    pub feature_map_reps: usize,
    #[serde(default = "default_three")]
    pub ansatz_reps: usize,
    #[serde(default)]
    pub entanglement: Entanglement,
    #[serde(default)]
    pub shots: Option<usize>,

    #[serde(default = "default_optimizer")]
    pub optimizer: OptimizerKind,
    #[serde(default = "default_maxiter")]
    pub maxiter: usize,
    #[serde(default = "default_eta")]
    pub learning_rate: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_tol")]
    pub param_tol: f64,
    #[serde(default = "default_averaging")]
    pub averaging: usize,
    #[serde(default = "default_spsa_gain")]
    pub spsa_a: f64,
    #[serde(default = "default_spsa_gain")]
    pub spsa_c: f64,

    /// Parameter noise on outgoing models.
    #[serde(default = "default_noise")]
    pub noise: NoiseKind,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_sensitivity")]
    pub sensitivity: f64,

    #[serde(default)]
    pub dp_pca: bool,
    #[serde(default = "default_epsilon")]
    pub dp_pca_epsilon: f64,
    #[serde(default = "default_delta")]
    pub dp_pca_delta: f64,
    #[serde(default = "default_sensitivity")]
    pub dp_pca_data_norm: f64,

    #[serde(default)]
    pub dp_optimizer: bool,
    #[serde(default = "default_epsilon")]
    pub dp_optimizer_epsilon: f64,
    #[serde(default = "default_delta")]
    pub dp_optimizer_delta: f64,
    #[serde(default = "default_sensitivity")]
    pub dp_optimizer_sensitivity: f64,

    #[serde(default)]
    pub pruning: bool,
    #[serde(default = "default_tau")]
    pub prune_tau: f64,
    #[serde(default)]
    pub avg_initial: bool,

    #[serde(default)]
    pub svd_qkd: bool,
    #[serde(default)]
    pub qkd_only: bool,
    #[serde(default)]
    pub svd_shape: Option<(usize, usize)>,
    #[serde(default)]
    pub eavesdrop: bool,
    #[serde(default = "default_check_fraction")]
    pub qkd_check_fraction: f64,
    #[serde(default = "default_abort")]
    pub qkd_abort_threshold: f64,

    #[serde(default)]
    pub condensation: Option<CondenseSpec>,

    /// Save state after every round and resume from it on rerun.
    #[serde(default)]
    pub checkpoint: bool,
}

fn parse_document<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    if is_json {
        serde_json::from_str(&text).map_err(|e| CliError::Schema(format!("{}: {e}", path.display())))
    } else {
        toml::from_str(&text).map_err(|e| CliError::Schema(format!("{}: {e}", path.display())))
    }
}

fn base_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

impl RunConfig {
    /// Parses and validates; relative paths are taken from the config's
    /// directory.
    pub fn from_path(path: &Path) -> Result<Self, CliError> {
        let mut cfg: RunConfig = parse_document(path)?;
        let base = base_dir(path);
        resolve(&base, &mut cfg.data_path);
        if let Some(p) = cfg.labels_path.as_mut() {
            resolve(&base, p);
        }
        resolve(&base, &mut cfg.output_dir);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn source(&self) -> DataSource {
        source_of!(self)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.source().validate()?;
        if !(self.epsilon > 0.0) {
            return Err(CliError::schema("epsilon", format!("must be > 0, got {}", self.epsilon)));
        }
        if !(self.sensitivity >= 0.0) {
            return Err(CliError::schema("sensitivity", format!("must be >= 0, got {}", self.sensitivity)));
        }
        if self.pca_components == Some(0) {
            return Err(CliError::schema("pca_components", "must be >= 1"));
        }
        if self.samples_per_device == Some(0) {
            return Err(CliError::schema("samples_per_device", "must be >= 1"));
        }
        if self.shots == Some(0) {
            return Err(CliError::schema("shots", "must be >= 1"));
        }
        if self.dp_pca && !(self.dp_pca_data_norm > 0.0) {
            return Err(CliError::schema("dp_pca_data_norm", "must be > 0"));
        }
        if self.pruning && !(self.prune_tau >= 0.0) {
            return Err(CliError::schema("prune_tau", format!("must be >= 0, got {}", self.prune_tau)));
        }
        self.plan().validate().map_err(CliError::from_validation)
    }

    pub fn plan(&self) -> ExperimentPlan {
        let optimizer = match self.optimizer {
            OptimizerKind::Aqgd => OptimizerChoice::Aqgd(AqgdSettings {
                maxiter: self.maxiter,
                eta: self.learning_rate,
                momentum: self.momentum,
                tol: self.tol,
                param_tol: self.param_tol,
                averaging: self.averaging,
            }),
            OptimizerKind::Spsa => OptimizerChoice::Spsa(SpsaSettings {
                maxiter: self.maxiter,
                a: self.spsa_a,
                c: self.spsa_c,
                ..SpsaSettings::default()
            }),
        };
        let param_noise = match self.noise {
            NoiseKind::None => None,
            NoiseKind::Laplace => {
                Some(NoiseMechanism::Laplace { epsilon: self.epsilon, sensitivity: self.sensitivity })
            }
            NoiseKind::Gaussian => Some(NoiseMechanism::Gaussian {
                epsilon: self.epsilon,
                delta: self.delta,
                sensitivity: self.sensitivity,
            }),
        };
        ExperimentPlan {
            rounds: self.rounds,
            split: SplitPlan {
                device_count: self.devices,
                samples_per_device: self.samples_per_device,
                server_val_size: self.server_val_size,
                server_test_size: self.server_test_size,
                local_train_fraction: self.local_train_fraction,
            },
            model: ModelSpec {
                feature_map_reps: self.feature_map_reps,
                ansatz_reps: self.ansatz_reps,
                entanglement: self.entanglement,
                shots: self.shots,
            },
            optimizer,
            protocols: ProtocolStack {
                param_noise,
                dp_pca: self.dp_pca.then_some(DpPcaBudget {
                    epsilon: self.dp_pca_epsilon,
                    delta: self.dp_pca_delta,
                    data_norm: self.dp_pca_data_norm,
                }),
                dp_optimizer: self.dp_optimizer.then_some(DpSettings {
                    epsilon: self.dp_optimizer_epsilon,
                    delta: self.dp_optimizer_delta,
                    sensitivity: self.dp_optimizer_sensitivity,
                }),
                pruning: self.pruning.then_some(PruneSpec { tau: self.prune_tau, avg_initial: self.avg_initial }),
                svd_qkd: self.svd_qkd,
                qkd_only: self.qkd_only,
                qkd: Bb84Options {
                    eavesdrop: self.eavesdrop,
                    check_fraction: self.qkd_check_fraction,
                    abort_threshold: self.qkd_abort_threshold,
                    force_matching_bases: false,
                },
                svd_shape: self.svd_shape,
                condensation: self.condensation,
            },
            preprocess: Preprocess { pca_components: self.pca_components, angle_range: self.angle_range },
            seed: self.seed,
        }
    }
}

fn default_batch() -> usize {
    256
}
fn default_embedding() -> usize {
    64
}

/// Config for the `condense` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CondenseConfig {
    pub name: String,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    pub dataset: DatasetKind,
    /// IRIS/CSV file, genomic text file, or IDX images.
    pub data_path: PathBuf,
    /// IDX labels (MNIST only).
    #[serde(default)]
    pub labels_path: Option<PathBuf>,
    #[serde(default)]
    pub keep_digits: Option<Vec<u8>>,
    /// CSV only; inferred from the labels when absent.
    #[serde(default)]
    pub class_count: Option<usize>,
    /// Genomic only: pad/truncate length.
    #[serde(default)]
    pub sequence_length: Option<usize>,
    pub images_per_class: usize,
    #[serde(default)]
    pub steps: usize,
    #[serde(default = "default_eta")]
    pub learning_rate: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_embedding")]
    pub embedding_dim: usize,
}

impl CondenseConfig {
    pub fn from_path(path: &Path) -> Result<Self, CliError> {
        let mut cfg: CondenseConfig = parse_document(path)?;
        let base = base_dir(path);
        resolve(&base, &mut cfg.data_path);
        if let Some(p) = cfg.labels_path.as_mut() {
            resolve(&base, p);
        }
        resolve(&base, &mut cfg.output_dir);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn source(&self) -> DataSource {
        source_of!(self)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.source().validate()?;
        self.spec().validate().map_err(CliError::from_validation)
    }

    pub fn spec(&self) -> CondenseSpec {
        CondenseSpec {
            images_per_class: self.images_per_class,
            steps: self.steps,
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            embedding_dim: self.embedding_dim,
            seed: qfl_core::rng::derive_seed(self.seed, &[stream::CONDENSE]),
        }
    }
}

/// Writes `count` synthetic sequences.
pub fn generate_genomic_file(count: usize, seed: u64, length: usize, out: &Path) -> Result<(), CliError> {
    let records = data::generate_genomic(count, length, &mut rng_from_seed(seed));
    data::write_genomic(out, &records)?;
    Ok(())
}
