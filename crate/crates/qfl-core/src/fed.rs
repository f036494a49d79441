//! Federated round engine: local training on every device, outbound privacy
//! transforms, server-side aggregation and the per-round metrics.

use std::f64::consts::PI;
use std::path::Path;
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::condense::{condense, CondenseSpec};
use crate::data::{scale_to_range, shard, Dataset, DeviceData, DpPcaBudget, SplitPlan};
use crate::dp::{add_parameter_noise, dp_pca_fit_transform, pca_fit, DpPcaSpec, FeatureBounds, NoiseMechanism};
use crate::error::{Error, Result};
use crate::linalg::pairwise_sum;
use crate::modelshare::{apply_global, federated_average, prune, PruneSpec, SvdPackage};
use crate::optim::{
    aqgd_minimize, dp_aqgd_minimize, spsa_minimize, AqgdSettings, DpSettings, OptimResult, SpsaSettings,
};
use crate::qkd::{bb84_exchange, otp_decrypt, otp_encrypt, Bb84Options};
use crate::rng::{derive_seed, derived_rng, stream};
use crate::vqc::{EncodedDataset, Entanglement, ParameterVector, VqcConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OptimizerChoice {
    Aqgd(AqgdSettings),
    Spsa(SpsaSettings),
}

impl Default for OptimizerChoice {
    fn default() -> Self {
        OptimizerChoice::Aqgd(AqgdSettings::default())
    }
}

impl OptimizerChoice {
    pub fn maxiter(&self) -> usize {
        match self {
            OptimizerChoice::Aqgd(s) => s.maxiter,
            OptimizerChoice::Spsa(s) => s.maxiter,
        }
    }

    /// Same optimizer with a different iteration budget.
    pub fn with_maxiter(&self, maxiter: usize) -> Self {
        match *self {
            OptimizerChoice::Aqgd(s) => OptimizerChoice::Aqgd(AqgdSettings { maxiter, ..s }),
            OptimizerChoice::Spsa(s) => OptimizerChoice::Spsa(SpsaSettings { maxiter, ..s }),
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            OptimizerChoice::Aqgd(s) => s.validate(),
            OptimizerChoice::Spsa(s) if s.maxiter < 1 => Err(Error::invalid("maxiter", "must be >= 1")),
            OptimizerChoice::Spsa(_) => Ok(()),
        }
    }
}

/// Circuit shape; feature and class counts come from the data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSpec {
    pub feature_map_reps: usize,
    pub ansatz_reps: usize,
    pub entanglement: Entanglement,
    pub shots: Option<usize>,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self { feature_map_reps: 1, ansatz_reps: 3, entanglement: Entanglement::Full, shots: None }
    }
}

/// Feature preparation applied to the whole dataset before sharding.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Preprocess {
    /// Reduce to this many features with PCA (DP-PCA when enabled).
    pub pca_components: Option<usize>,
    /// Features end up in [0, angle_range).
    pub angle_range: f64,
}

impl Default for Preprocess {
    fn default() -> Self {
        Self { pca_components: None, angle_range: 2.0 * PI }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolStack {
    pub param_noise: Option<NoiseMechanism>,
    pub dp_pca: Option<DpPcaBudget>,
    pub dp_optimizer: Option<DpSettings>,
    pub pruning: Option<PruneSpec>,
    pub svd_qkd: bool,
    pub qkd_only: bool,
    pub qkd: Bb84Options,
    /// Reshape for the SVD split; square by default.
    pub svd_shape: Option<(usize, usize)>,
    pub condensation: Option<CondenseSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentPlan {
    pub rounds: usize,
    pub split: SplitPlan,
    #[serde(default)]
    pub model: ModelSpec,
    #[serde(default)]
    pub optimizer: OptimizerChoice,
    #[serde(default)]
    pub protocols: ProtocolStack,
    #[serde(default)]
    pub preprocess: Preprocess,
    pub seed: u64,
}

impl ExperimentPlan {
    pub fn new(rounds: usize, split: SplitPlan, seed: u64) -> Self {
        Self {
            rounds,
            split,
            model: ModelSpec::default(),
            optimizer: OptimizerChoice::default(),
            protocols: ProtocolStack::default(),
            preprocess: Preprocess::default(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rounds < 1 {
            return Err(Error::invalid("rounds", "must be >= 1"));
        }
        if self.split.device_count < 1 {
            return Err(Error::invalid("device_count", "must be >= 1"));
        }
        let p = &self.protocols;
        if p.svd_qkd && p.qkd_only {
            return Err(Error::invalid("svd_qkd", "svd_qkd and qkd_only are mutually exclusive"));
        }
        if let Some(m) = &p.param_noise {
            m.validate()?;
        }
        if let Some(d) = &p.dp_optimizer {
            d.validate()?;
        }
        if let Some(pr) = &p.pruning {
            pr.validate()?;
        }
        if let Some(b) = &p.dp_pca {
            if !(b.epsilon > 0.0) {
                return Err(Error::invalid("epsilon", format!("must be > 0, got {}", b.epsilon)));
            }
        }
        if let Some(c) = &p.condensation {
            c.validate()?;
        }
        p.qkd.validate()?;
        if !(self.preprocess.angle_range > 0.0) || !self.preprocess.angle_range.is_finite() {
            return Err(Error::invalid("angle_range", "must be a positive finite number"));
        }
        self.optimizer.validate()
    }
}

/// Data and encodings ready for training, fixed for the whole run.
pub struct Prepared {
    pub config: VqcConfig,
    pub devices: Vec<DeviceData>,
    pub server_val: Dataset,
    pub server_test: Dataset,
    device_train: Vec<EncodedDataset>,
    device_test: Vec<EncodedDataset>,
    val: EncodedDataset,
    test: EncodedDataset,
}

fn scale_features(ds: &mut Dataset, factor: f64) {
    ds.features.as_mut_slice().iter_mut().for_each(|v| *v *= factor);
}

/// Min-max to [0, 1), optional (DP-)PCA, shard, optional per-device
/// condensation of the local training sets, then angle scaling.
pub fn prepare(plan: &ExperimentPlan, dataset: &Dataset) -> Result<Prepared> {
    plan.validate()?;
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut ds = scale_to_range(dataset, 1.0)?;
    let d = ds.feature_count();
    let k = plan.preprocess.pca_components.unwrap_or(d);
    if let Some(budget) = plan.protocols.dp_pca {
        let spec = DpPcaSpec {
            n_components: k,
            epsilon: budget.epsilon,
            delta: budget.delta,
            bounds: FeatureBounds::Uniform(0.0, 1.0),
            data_norm: budget.data_norm,
        };
        let mut rng = derived_rng(plan.seed, &[stream::DP_PCA]);
        let out = dp_pca_fit_transform(&ds.features, &ds.labels, &spec, &mut rng)?;
        ds = scale_to_range(&Dataset::new(&ds.name, out.projected, ds.labels, ds.class_count)?, 1.0)?;
    } else if k != d {
        let projected = pca_fit(&ds.features, k)?.transform(&ds.features)?;
        ds = scale_to_range(&Dataset::new(&ds.name, projected, ds.labels, ds.class_count)?, 1.0)?;
    }

    let shards = shard(&ds, &plan.split, &mut derived_rng(plan.seed, &[stream::SHARD]))?;
    let mut devices = shards.devices;
    if let Some(spec) = plan.protocols.condensation {
        for (i, dev) in devices.iter_mut().enumerate() {
            let spec = CondenseSpec { seed: derive_seed(plan.seed, &[stream::CONDENSE, i as u64]), ..spec };
            dev.train = condense(&dev.train, &spec)?.synthetic;
        }
    }
    let factor = plan.preprocess.angle_range;
    let (mut server_val, mut server_test) = (shards.server_val, shards.server_test);
    for dev in devices.iter_mut() {
        scale_features(&mut dev.train, factor);
        scale_features(&mut dev.test, factor);
    }
    scale_features(&mut server_val, factor);
    scale_features(&mut server_test, factor);

    let config = VqcConfig {
        feature_count: ds.feature_count(),
        feature_map_reps: plan.model.feature_map_reps,
        ansatz_reps: plan.model.ansatz_reps,
        class_count: ds.class_count.max(2),
        entanglement: plan.model.entanglement,
        shots: plan.model.shots,
        shot_seed: derive_seed(plan.seed, &[stream::SHOTS]),
    };
    config.validate()?;
    let encode = |d: &Dataset| EncodedDataset::new(d, &config);
    let device_train = devices.iter().map(|d| encode(&d.train)).collect::<Result<Vec<_>>>()?;
    let device_test = devices.iter().map(|d| encode(&d.test)).collect::<Result<Vec<_>>>()?;
    let (val, test) = (encode(&server_val)?, encode(&server_test)?);
    if server_val.is_empty() || server_test.is_empty() {
        return Err(Error::invalid("server_val_size", "server validation and test sets must be non-empty"));
    }
    if devices.iter().any(|d| d.test.is_empty()) {
        return Err(Error::invalid("samples_per_device", "every device needs at least one local test sample"));
    }
    Ok(Prepared { config, devices, server_val, server_test, device_train, device_test, val, test })
}

/// What survives between rounds (and is written to the checkpoint).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FedState {
    pub next_round: usize,
    /// Aggregated model of the previous round, if any.
    pub global: Option<ParameterVector>,
    /// Each device's own model after its last local training.
    pub devices: Vec<ParameterVector>,
}

impl FedState {
    /// Per-device i.i.d. uniform [−π, π) initial parameters.
    pub fn initial(plan: &ExperimentPlan, parameter_count: usize) -> Self {
        let devices = (0..plan.split.device_count)
            .map(|k| {
                let mut rng = derived_rng(plan.seed, &[stream::INIT, k as u64]);
                (0..parameter_count).map(|_| rng.gen_range(-PI..PI)).collect::<Vec<_>>().into()
            })
            .collect();
        Self { next_round: 0, global: None, devices }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceRecord {
    pub device: usize,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub train_loss: f64,
    pub iterations: usize,
    /// Whether the update reached the server.
    pub delivered: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub devices: Vec<DeviceRecord>,
    pub prediction_val_accuracy: f64,
    pub prediction_val_loss: f64,
    pub prediction_test_accuracy: f64,
    pub prediction_test_loss: f64,
    pub gplus_val_accuracy: f64,
    pub gplus_val_loss: f64,
    pub gplus_test_accuracy: f64,
    pub gplus_test_loss: f64,
    /// Accuracy of the un-adapted averaged model on the server test set.
    pub server_score: f64,
    /// Number of device updates in the average.
    pub contributors: usize,
    pub wall_clock_seconds: f64,
}

impl RoundRecord {
    pub fn mean_device_train_accuracy(&self) -> f64 {
        mean(self.devices.iter().map(|d| d.train_accuracy))
    }

    pub fn mean_device_test_accuracy(&self) -> f64 {
        mean(self.devices.iter().map(|d| d.test_accuracy))
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.collect();
    pairwise_sum(&v) / v.len() as f64
}

fn train(
    objective: &EncodedDataset,
    theta0: &[f64],
    optimizer: &OptimizerChoice,
    dp: Option<&DpSettings>,
    rng: &mut impl Rng,
) -> Result<OptimResult> {
    match (optimizer, dp) {
        (OptimizerChoice::Aqgd(s), None) => aqgd_minimize(objective, theta0, s),
        (OptimizerChoice::Aqgd(s), Some(dp)) => dp_aqgd_minimize(objective, theta0, s, dp, rng),
        // SPSA has no gradient to perturb; the DP optimizer setting only
        // applies to AQGD.
        (OptimizerChoice::Spsa(s), _) => spsa_minimize(objective, theta0, s, rng),
    }
}

fn svd_shape(plan: &ExperimentPlan, n: usize) -> Result<(usize, usize)> {
    if let Some((m1, m2)) = plan.protocols.svd_shape {
        if m1 * m2 != n {
            return Err(Error::invalid("svd_shape", format!("{m1}x{m2} does not hold {n} parameters")));
        }
        return Ok((m1, m2));
    }
    let m = (n as f64).sqrt().round() as usize;
    if m * m != n {
        return Err(Error::invalid("svd_shape", format!("{n} parameters are not a square; set svd_shape")));
    }
    Ok((m, m))
}

/// Runs the outbound chain prune → noise → (SVD+QKD | QKD) and returns what
/// the server recovers.
fn deliver(plan: &ExperimentPlan, theta: &ParameterVector, round: usize, device: usize) -> Result<ParameterVector> {
    let p = &plan.protocols;
    let tags = |s: u64| [s, round as u64, device as u64];
    let mut out = theta.clone();
    if let Some(pr) = &p.pruning {
        out = prune(&out, pr.tau);
    }
    if let Some(mech) = &p.param_noise {
        out = add_parameter_noise(&out, mech, &mut derived_rng(plan.seed, &tags(stream::PARAM_NOISE)))?;
    }
    if p.svd_qkd {
        let (m1, m2) = svd_shape(plan, out.len())?;
        let mut rng = derived_rng(plan.seed, &tags(stream::QKD));
        let keys = bb84_exchange(SvdPackage::key_bits(m1, m2), &p.qkd, &mut rng)?;
        let package = SvdPackage::seal(&out, m1, m2, &keys.sender_key)?;
        let wire = package.to_bytes();
        out = SvdPackage::from_bytes(&wire)?.open(&keys.receiver_key)?;
    } else if p.qkd_only {
        let mut rng = derived_rng(plan.seed, &tags(stream::QKD));
        let keys = bb84_exchange(64 * out.len(), &p.qkd, &mut rng)?;
        let plain: Vec<u8> = out.iter().flat_map(|v| v.to_be_bytes()).collect();
        let blob = otp_encrypt(&plain, &keys.sender_key)?;
        let dec = otp_decrypt(&blob, &keys.receiver_key)?;
        out =
            dec.chunks_exact(8).map(|c| f64::from_be_bytes(c.try_into().expect("8 bytes"))).collect::<Vec<_>>().into();
    }
    Ok(out)
}

struct DeviceOutcome {
    record: DeviceRecord,
    trained: ParameterVector,
    delivered: Option<ParameterVector>,
}

/// One communication round. Devices train in parallel; the round ends with
/// aggregation and server-side metrics.
pub fn run_round(
    state: &FedState,
    prepared: &Prepared,
    plan: &ExperimentPlan,
    round: usize,
) -> Result<(FedState, RoundRecord)> {
    if round >= plan.rounds {
        return Err(Error::invalid("round", format!("round {round} beyond the planned {}", plan.rounds)));
    }
    if state.devices.len() != prepared.devices.len() {
        return Err(Error::Dimension(format!(
            "{} device models for {} devices",
            state.devices.len(),
            prepared.devices.len()
        )));
    }
    let started = Instant::now();
    let avg_initial = plan.protocols.pruning.is_some_and(|p| p.avg_initial);

    let outcomes: Vec<DeviceOutcome> = (0..prepared.devices.len())
        .into_par_iter()
        .map(|k| -> Result<DeviceOutcome> {
            let start = match &state.global {
                Some(g) => apply_global(&state.devices[k], g, avg_initial),
                None => state.devices[k].clone(),
            };
            let mut rng = derived_rng(plan.seed, &[stream::OPTIMIZER, round as u64, k as u64]);
            let result = train(
                &prepared.device_train[k],
                &start,
                &plan.optimizer,
                plan.protocols.dp_optimizer.as_ref(),
                &mut rng,
            )?;
            let trained = result.theta_final;
            let train_loss = prepared.device_train[k].loss(&trained)?;
            let train_accuracy = prepared.device_train[k].accuracy(&trained)?;
            let test_accuracy = prepared.device_test[k].accuracy(&trained)?;
            let (delivered, error) = match deliver(plan, &trained, round, k) {
                Ok(v) => (Some(v), None),
                Err(e) => (None, Some(e.to_string())),
            };
            Ok(DeviceOutcome {
                record: DeviceRecord {
                    device: k,
                    train_accuracy,
                    test_accuracy,
                    train_loss,
                    iterations: result.iterations_run,
                    delivered: delivered.is_some(),
                    error,
                },
                trained,
                delivered,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let received: Vec<ParameterVector> = outcomes.iter().filter_map(|o| o.delivered.clone()).collect();
    let contributors = received.len();
    // With every update lost the previous global model stands; before any
    // exists, the server falls back to the zero vector.
    let global = if received.is_empty() {
        state.global.clone().unwrap_or_else(|| ParameterVector::zeros(prepared.config.parameter_count()))
    } else {
        federated_average(&received)?
    };

    let prediction_val_accuracy = prepared.val.accuracy(&global)?;
    let prediction_val_loss = prepared.val.loss(&global)?;
    let prediction_test_accuracy = prepared.test.accuracy(&global)?;
    let prediction_test_loss = prepared.test.loss(&global)?;

    let adapt = plan.optimizer.with_maxiter((plan.optimizer.maxiter() / 4).max(1));
    let mut server_rng = derived_rng(plan.seed, &[stream::SERVER, round as u64]);
    let adapted = train(&prepared.val, &global, &adapt, None, &mut server_rng)?.theta_final;

    let record = RoundRecord {
        round,
        devices: outcomes.iter().map(|o| o.record.clone()).collect(),
        prediction_val_accuracy,
        prediction_val_loss,
        prediction_test_accuracy,
        prediction_test_loss,
        gplus_val_accuracy: prepared.val.accuracy(&adapted)?,
        gplus_val_loss: prepared.val.loss(&adapted)?,
        gplus_test_accuracy: prepared.test.accuracy(&adapted)?,
        gplus_test_loss: prepared.test.loss(&adapted)?,
        server_score: prediction_test_accuracy,
        contributors,
        wall_clock_seconds: started.elapsed().as_secs_f64(),
    };
    let next = FedState {
        next_round: round + 1,
        global: Some(global),
        devices: outcomes.into_iter().map(|o| o.trained).collect(),
    };
    Ok((next, record))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub avg: f64,
    pub final_value: f64,
    pub max: f64,
}

impl MetricSummary {
    pub fn from_trace(trace: &[f64]) -> Self {
        Self {
            avg: pairwise_sum(trace) / trace.len() as f64,
            final_value: *trace.last().expect("non-empty trace"),
            max: trace.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

/// Names and extractors of the summarised per-round metrics.
/// Reads one metric from a round.
pub type MetricFn = fn(&RoundRecord) -> f64;

pub const SUMMARY_METRICS: [(&str, MetricFn); 9] = [
    ("device_train_accuracy", RoundRecord::mean_device_train_accuracy),
    ("device_test_accuracy", RoundRecord::mean_device_test_accuracy),
    ("prediction_val_accuracy", |r| r.prediction_val_accuracy),
    ("prediction_test_accuracy", |r| r.prediction_test_accuracy),
    ("gplus_val_accuracy", |r| r.gplus_val_accuracy),
    ("gplus_test_accuracy", |r| r.gplus_test_accuracy),
    ("gplus_test_loss", |r| r.gplus_test_loss),
    ("server_score", |r| r.server_score),
    ("wall_clock_seconds", |r| r.wall_clock_seconds),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub rounds: usize,
    pub metrics: Vec<(String, MetricSummary)>,
    /// Best device test accuracy as "R{round}-D{device} (acc)".
    pub top_device: String,
}

impl Summary {
    pub fn metric(&self, name: &str) -> Option<MetricSummary> {
        self.metrics.iter().find(|(n, _)| n == name).map(|(_, m)| *m)
    }
}

pub fn summarize(records: &[RoundRecord]) -> Result<Summary> {
    if records.is_empty() {
        return Err(Error::invalid("records", "nothing to summarise"));
    }
    let metrics = SUMMARY_METRICS
        .iter()
        .map(|(name, f)| {
            let trace: Vec<f64> = records.iter().map(f).collect();
            (name.to_string(), MetricSummary::from_trace(&trace))
        })
        .collect();
    // Highest test accuracy; ties go to the earliest round, then lowest device.
    let mut best: Option<(usize, usize, f64)> = None;
    for r in records {
        for d in &r.devices {
            if best.is_none_or(|(_, _, acc)| d.test_accuracy > acc) {
                best = Some((r.round, d.device, d.test_accuracy));
            }
        }
    }
    let top_device = best.map_or_else(String::new, |(r, d, acc)| format!("R{r}-D{d} ({acc:.2})"));
    Ok(Summary { rounds: records.len(), metrics, top_device })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub seed: u64,
    pub state: FedState,
    pub records: Vec<RoundRecord>,
}

fn load_checkpoint(path: &Path) -> Result<Option<Checkpoint>> {
    match std::fs::read(path) {
        Ok(bytes) => serde_json::from_slice(&bytes)
            .map(Some)
            .map_err(|e| Error::Format { path: path.to_path_buf(), message: e.to_string() }),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(Error::io(path, e)),
    }
}

fn save_checkpoint(path: &Path, cp: &Checkpoint) -> Result<()> {
    let tmp = path.with_extension("tmp");
    let bytes = serde_json::to_vec(cp).expect("checkpoint serialises");
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub records: Vec<RoundRecord>,
    pub summary: Summary,
    pub final_state: FedState,
}

/// Runs all rounds. With a checkpoint path, state is saved after every
/// round and a matching checkpoint found at start resumes the run.
pub fn run_experiment(
    plan: &ExperimentPlan,
    dataset: &Dataset,
    checkpoint: Option<&Path>,
) -> Result<ExperimentOutcome> {
    let prepared = prepare(plan, dataset)?;
    let fresh = || Checkpoint {
        seed: plan.seed,
        state: FedState::initial(plan, prepared.config.parameter_count()),
        records: Vec::new(),
    };
    let mut cp = match checkpoint.map(load_checkpoint).transpose()?.flatten() {
        Some(cp) if cp.seed == plan.seed && cp.state.devices.len() == prepared.devices.len() => cp,
        _ => fresh(),
    };
    for round in cp.state.next_round..plan.rounds {
        let (state, record) = run_round(&cp.state, &prepared, plan, round)?;
        cp.state = state;
        cp.records.push(record);
        if let Some(path) = checkpoint {
            save_checkpoint(path, &cp)?;
        }
    }
    cp.records.truncate(plan.rounds);
    let summary = summarize(&cp.records)?;
    Ok(ExperimentOutcome { records: cp.records, summary, final_state: cp.state })
}
