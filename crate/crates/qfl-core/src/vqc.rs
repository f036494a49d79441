//! Variational quantum classifier: Z feature map, RealAmplitudes-style
//! ansatz, basis-index-mod-C class readout and cross-entropy loss.

use std::ops::{Deref, DerefMut};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::pairwise_sum;
use crate::optim::Objective;
use crate::qsim::{sampled_probabilities, Circuit, Gate, StateVector};
use crate::rng::{derive_seed, rng_from_seed};

/// Probability floor inside the log of the cross-entropy.
pub const LOSS_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Entanglement {
    #[default]
    Full,
    Linear,
}

impl Entanglement {
    /// CX (control, target) pairs of one entangling block.
    pub fn pairs(self, qubit_count: usize) -> Vec<(usize, usize)> {
        match self {
            Entanglement::Full => (0..qubit_count).flat_map(|i| (i + 1..qubit_count).map(move |j| (i, j))).collect(),
            Entanglement::Linear => (0..qubit_count.saturating_sub(1)).map(|i| (i, i + 1)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VqcConfig {
    /// Number of input features, which is also the qubit count.
    pub feature_count: usize,
    pub feature_map_reps: usize,
    pub ansatz_reps: usize,
    pub class_count: usize,
    pub entanglement: Entanglement,
    /// When set, class probabilities are estimated from this many samples
    /// instead of read exactly from the statevector.
    pub shots: Option<usize>,
    /// Seed for shot sampling. Samples are keyed by (seed, θ, sample index),
    /// so evaluations stay pure functions of their inputs.
    pub shot_seed: u64,
}

impl VqcConfig {
    pub fn new(feature_count: usize, class_count: usize) -> Self {
        Self {
            feature_count,
            feature_map_reps: 1,
            ansatz_reps: 3,
            class_count,
            entanglement: Entanglement::Full,
            shots: None,
            shot_seed: 0,
        }
    }

    pub fn qubit_count(&self) -> usize {
        self.feature_count
    }

    pub fn parameter_count(&self) -> usize {
        self.feature_count * (self.ansatz_reps + 1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.feature_count == 0 || self.feature_count > crate::qsim::MAX_QUBITS {
            return Err(Error::invalid(
                "feature_count",
                format!("must be in 1..={}, got {}", crate::qsim::MAX_QUBITS, self.feature_count),
            ));
        }
        if self.class_count < 2 {
            return Err(Error::invalid("class_count", format!("must be >= 2, got {}", self.class_count)));
        }
        if self.class_count > 1 << self.feature_count {
            return Err(Error::invalid(
                "class_count",
                format!("{} classes exceed the {} basis states", self.class_count, 1 << self.feature_count),
            ));
        }
        if self.shots == Some(0) {
            return Err(Error::invalid("shots", "must be positive when set"));
        }
        Ok(())
    }
}

/// Trainable circuit weights in radians.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParameterVector(Vec<f64>);

impl ParameterVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn check_finite(&self) -> Result<()> {
        match self.0.iter().position(|v| !v.is_finite()) {
            Some(i) => Err(Error::NonFiniteParameter(i)),
            None => Ok(()),
        }
    }
}

impl From<Vec<f64>> for ParameterVector {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

impl Deref for ParameterVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for ParameterVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

/// Z feature map: per repetition, H on every qubit then P(2·x_i) on qubit i.
pub fn build_feature_map(x: &[f64], qubit_count: usize, reps: usize) -> Result<Circuit> {
    if x.len() != qubit_count {
        return Err(Error::Dimension(format!("{} features for {qubit_count} qubits", x.len())));
    }
    let mut circ = Circuit::new(qubit_count)?;
    for _ in 0..reps {
        for q in 0..qubit_count {
            circ.push(Gate::H(q))?;
        }
        for (q, &v) in x.iter().enumerate() {
            circ.push(Gate::P(q, 2.0 * v))?;
        }
    }
    Ok(circ)
}

/// RY layer, then `reps` times [entangling CX block, RY layer]. Parameters
/// are consumed layer by layer, qubit 0 first within a layer.
pub fn build_ansatz(theta: &[f64], qubit_count: usize, reps: usize, entanglement: Entanglement) -> Result<Circuit> {
    let expected = qubit_count * (reps + 1);
    if theta.len() != expected {
        return Err(Error::Dimension(format!(
            "ansatz with {qubit_count} qubits and {reps} reps needs {expected} parameters, got {}",
            theta.len()
        )));
    }
    let mut circ = Circuit::new(qubit_count)?;
    let mut params = theta.iter();
    let pairs = entanglement.pairs(qubit_count);
    for layer in 0..=reps {
        if layer > 0 {
            for &(control, target) in &pairs {
                circ.push(Gate::Cx { control, target })?;
            }
        }
        for q in 0..qubit_count {
            circ.push(Gate::Ry(q, *params.next().expect("length checked")))?;
        }
    }
    Ok(circ)
}

/// Folds basis-state probabilities into classes: p_c = Σ_{i mod C = c} p_i.
pub fn class_probabilities_from_basis(probs: &[f64], class_count: usize) -> Vec<f64> {
    let mut out = vec![0.0; class_count];
    for (i, p) in probs.iter().enumerate() {
        out[i % class_count] += p;
    }
    out
}

/// Index of the largest entry; ties go to the smallest index.
pub fn argmax_lowest(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Feature-map output states cached for one dataset, so repeated loss and
/// gradient evaluations only re-run the ansatz.
#[derive(Debug, Clone)]
pub struct EncodedDataset {
    config: VqcConfig,
    states: Vec<StateVector>,
    labels: Vec<usize>,
}

impl EncodedDataset {
    pub fn new(dataset: &Dataset, config: &VqcConfig) -> Result<Self> {
        config.validate()?;
        if dataset.feature_count() != config.feature_count {
            return Err(Error::Dimension(format!(
                "dataset has {} features, classifier expects {}",
                dataset.feature_count(),
                config.feature_count
            )));
        }
        if let Some(&bad) = dataset.labels.iter().find(|&&y| y >= config.class_count) {
            return Err(Error::invalid("labels", format!("label {bad} outside [0, {})", config.class_count)));
        }
        let q = config.qubit_count();
        let zero = StateVector::zero(q)?;
        let states = dataset
            .features
            .row_iter()
            .map(|x| zero.apply_circuit(&build_feature_map(x, q, config.feature_map_reps)?))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { config: config.clone(), states, labels: dataset.labels.clone() })
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn config(&self) -> &VqcConfig {
        &self.config
    }

    fn ansatz(&self, theta: &[f64]) -> Result<Circuit> {
        build_ansatz(theta, self.config.qubit_count(), self.config.ansatz_reps, self.config.entanglement)
    }

    fn sample_class_probabilities(&self, idx: usize, ansatz: &Circuit, theta: &[f64]) -> Vec<f64> {
        let state = self.states[idx].apply_circuit(ansatz).expect("qubit counts agree");
        let probs = state.probabilities();
        let probs = match self.config.shots {
            None => probs,
            Some(shots) => {
                let theta_key = theta.iter().fold(0u64, |acc, v| acc.rotate_left(7) ^ v.to_bits());
                let mut rng = rng_from_seed(derive_seed(self.config.shot_seed, &[theta_key, idx as u64]));
                sampled_probabilities(&probs, shots, &mut rng)
            }
        };
        class_probabilities_from_basis(&probs, self.config.class_count)
    }

    /// Class probabilities for every sample.
    pub fn class_probabilities(&self, theta: &[f64]) -> Result<Vec<Vec<f64>>> {
        let ansatz = self.ansatz(theta)?;
        Ok((0..self.len()).into_par_iter().map(|i| self.sample_class_probabilities(i, &ansatz, theta)).collect())
    }

    /// p_y of each sample's true label.
    fn true_class_probabilities(&self, theta: &[f64]) -> Result<Vec<f64>> {
        let ansatz = self.ansatz(theta)?;
        Ok((0..self.len())
            .into_par_iter()
            .map(|i| self.sample_class_probabilities(i, &ansatz, theta)[self.labels[i]])
            .collect())
    }

    /// Mean cross-entropy −log max(p_y, 1e-12).
    pub fn loss(&self, theta: &[f64]) -> Result<f64> {
        if self.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let terms: Vec<f64> =
            self.true_class_probabilities(theta)?.into_iter().map(|p| -p.max(LOSS_CLAMP).ln()).collect();
        Ok(pairwise_sum(&terms) / self.len() as f64)
    }

    pub fn predictions(&self, theta: &[f64]) -> Result<Vec<usize>> {
        Ok(self.class_probabilities(theta)?.iter().map(|p| argmax_lowest(p)).collect())
    }

    pub fn accuracy(&self, theta: &[f64]) -> Result<f64> {
        if self.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let correct = self.predictions(theta)?.iter().zip(&self.labels).filter(|(p, y)| p == y).count();
        Ok(correct as f64 / self.len() as f64)
    }

    /// Loss and its gradient from the 2n+1 parameter-shift circuits.
    ///
    /// The shift rule is applied to each sample's p_y, which is an
    /// expectation value and therefore exactly differentiated by ±π/2 shifts;
    /// the chain rule through −log then gives the loss gradient. Where the
    /// clamp is active the loss is flat, so that sample contributes zero.
    pub fn loss_and_gradient(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        if self.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let n = theta.len();
        let points = crate::optim::shift_points(theta);
        let per_point: Vec<Vec<f64>> =
            points.iter().map(|p| self.true_class_probabilities(p)).collect::<Result<_>>()?;
        let base = &per_point[0];
        let m = self.len() as f64;
        let terms: Vec<f64> = base.iter().map(|p| -p.max(LOSS_CLAMP).ln()).collect();
        let value = pairwise_sum(&terms) / m;
        let gradient = (0..n)
            .map(|i| {
                let plus = &per_point[1 + i];
                let minus = &per_point[1 + n + i];
                let terms: Vec<f64> = (0..base.len())
                    .map(|s| if base[s] > LOSS_CLAMP { -(plus[s] - minus[s]) / 2.0 / base[s] } else { 0.0 })
                    .collect();
                pairwise_sum(&terms) / m
            })
            .collect();
        Ok((value, gradient))
    }
}

impl Objective for EncodedDataset {
    fn evaluate(&self, theta: &[f64]) -> f64 {
        self.loss(theta).unwrap_or(f64::NAN)
    }

    fn value_and_gradient(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (value, gradient) = self.loss_and_gradient(theta)?;
        if !value.is_finite() {
            return Err(Error::NonFiniteObjective { value, index: 0 });
        }
        Ok((value, gradient))
    }
}

pub fn class_probabilities(x: &[f64], theta: &[f64], config: &VqcConfig) -> Result<Vec<f64>> {
    config.validate()?;
    let q = config.qubit_count();
    let state = StateVector::zero(q)?
        .apply_circuit(&build_feature_map(x, q, config.feature_map_reps)?)?
        .apply_circuit(&build_ansatz(theta, q, config.ansatz_reps, config.entanglement)?)?;
    let probs = state.probabilities();
    let probs = match config.shots {
        None => probs,
        Some(shots) => {
            let theta_key = theta.iter().fold(0u64, |acc, v| acc.rotate_left(7) ^ v.to_bits());
            let mut rng = rng_from_seed(derive_seed(config.shot_seed, &[theta_key]));
            sampled_probabilities(&probs, shots, &mut rng)
        }
    };
    Ok(class_probabilities_from_basis(&probs, config.class_count))
}

pub fn cross_entropy_loss(dataset: &Dataset, theta: &[f64], config: &VqcConfig) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    EncodedDataset::new(dataset, config)?.loss(theta)
}

pub fn predict(x: &[f64], theta: &[f64], config: &VqcConfig) -> Result<usize> {
    Ok(argmax_lowest(&class_probabilities(x, theta, config)?))
}

pub fn accuracy(dataset: &Dataset, theta: &[f64], config: &VqcConfig) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    EncodedDataset::new(dataset, config)?.accuracy(theta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn dataset(rows: Vec<Vec<f64>>, labels: Vec<usize>, classes: usize) -> Dataset {
        Dataset::new("t", Matrix::from_rows(&rows).unwrap(), labels, classes).unwrap()
    }

    #[test]
    fn zero_features_give_uniform_superposition() {
        let circ = build_feature_map(&[0.0; 4], 4, 1).unwrap();
        assert_eq!(circ.len(), 8);
        assert!(circ.gates()[..4].iter().all(|g| matches!(g, Gate::H(_))));
        let s = StateVector::zero(4).unwrap().apply_circuit(&circ).unwrap();
        for a in s.amplitudes() {
            assert!((a.re - 0.25).abs() < 1e-15 && a.im.abs() < 1e-15);
        }
    }

    #[test]
    fn feature_map_gate_count() {
        let circ = build_feature_map(&[0.3, 1.2, 2.0, 0.1], 4, 1).unwrap();
        assert_eq!(circ.len(), 8);
        assert_eq!(build_feature_map(&[0.3, 1.2], 2, 3).unwrap().len(), 12);
        assert!(build_feature_map(&[0.3, 1.2], 4, 1).is_err());
    }

    #[test]
    fn half_pi_feature_flips_sign_on_qubit_zero() {
        // 2-qubit analogue by hand: H⊗H|00> = ½(1,1,1,1); P(π) on q0 negates indices with bit0 set
        let s =
            StateVector::zero(2).unwrap().apply_circuit(&build_feature_map(&[PI / 2.0, 0.0], 2, 1).unwrap()).unwrap();
        let expect = [0.5, -0.5, 0.5, -0.5];
        for (a, e) in s.amplitudes().iter().zip(expect) {
            assert!((a.re - e).abs() < 1e-12 && a.im.abs() < 1e-12);
        }
        // 4-qubit version: sign flips exactly where bit 0 is set
        let s = StateVector::zero(4)
            .unwrap()
            .apply_circuit(&build_feature_map(&[PI / 2.0, 0.0, 0.0, 0.0], 4, 1).unwrap())
            .unwrap();
        for (i, a) in s.amplitudes().iter().enumerate() {
            let sign = if i & 1 == 1 { -1.0 } else { 1.0 };
            assert!((a.re - sign * 0.25).abs() < 1e-12, "index {i}");
        }
    }

    #[test]
    fn ansatz_parameter_consumption() {
        let c = build_ansatz(&[0.4], 1, 0, Entanglement::Full).unwrap();
        assert_eq!(c.gates(), &[Gate::Ry(0, 0.4)]);
        let theta: Vec<f64> = (0..16).map(f64::from).collect();
        let c = build_ansatz(&theta, 4, 3, Entanglement::Full).unwrap();
        let ry: Vec<f64> =
            c.gates().iter().filter_map(|g| if let Gate::Ry(_, a) = g { Some(*a) } else { None }).collect();
        assert_eq!(ry, theta);
        // layer-major, qubit-minor
        assert_eq!(c.gates()[4], Gate::Cx { control: 0, target: 1 });
        assert_eq!(c.gates()[10], Gate::Ry(0, 4.0));
        assert!(build_ansatz(&theta[..15], 4, 3, Entanglement::Full).is_err());
        assert_eq!(VqcConfig::new(4, 3).parameter_count(), 16);
    }

    #[test]
    fn linear_entanglement_pairs() {
        assert_eq!(Entanglement::Linear.pairs(4), vec![(0, 1), (1, 2), (2, 3)]);
        assert_eq!(Entanglement::Full.pairs(3), vec![(0, 1), (0, 2), (1, 2)]);
    }

    #[test]
    fn zero_angles_only_permute_amplitudes() {
        // brute force: feature map, then the bare CX blocks, amplitude by amplitude
        let config = VqcConfig::new(4, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x: Vec<f64> = (0..4).map(|_| rng.gen_range(0.0..2.0 * PI)).collect();
        let fm = StateVector::zero(4).unwrap().apply_circuit(&build_feature_map(&x, 4, 1).unwrap()).unwrap();
        let out = fm.apply_circuit(&build_ansatz(&[0.0; 16], 4, 3, Entanglement::Full).unwrap()).unwrap();
        let mut manual = fm.amplitudes().to_vec();
        for _ in 0..3 {
            for (c, t) in Entanglement::Full.pairs(4) {
                for i in 0..16usize {
                    if i >> c & 1 == 1 && i >> t & 1 == 0 {
                        manual.swap(i, i | 1 << t);
                    }
                }
            }
        }
        for (a, b) in out.amplitudes().iter().zip(&manual) {
            assert!((a - b).norm() < 1e-12);
        }
        // probabilities of the feature-map output are untouched
        for p in out.probabilities() {
            assert!((p - 1.0 / 16.0).abs() < 1e-12);
        }
        // with x = 0 the whole state is unchanged
        let fm0 = StateVector::zero(4).unwrap().apply_circuit(&build_feature_map(&[0.0; 4], 4, 1).unwrap()).unwrap();
        let out0 = fm0.apply_circuit(&build_ansatz(&[0.0; 16], 4, 3, config.entanglement).unwrap()).unwrap();
        for (a, b) in out0.amplitudes().iter().zip(fm0.amplitudes()) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn class_mapping_examples() {
        assert_eq!(class_probabilities_from_basis(&[0.25; 4], 2), vec![0.5, 0.5]);
        assert_eq!(class_probabilities_from_basis(&[0.0, 1.0, 0.0, 0.0], 4), vec![0.0, 1.0, 0.0, 0.0]);
        assert_eq!(class_probabilities_from_basis(&[0.25; 4], 3), vec![0.5, 0.25, 0.25]);
    }

    #[test]
    fn class_probabilities_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for classes in [2, 3, 4] {
            let config = VqcConfig::new(4, classes);
            for _ in 0..1000 / 3 {
                let x: Vec<f64> = (0..4).map(|_| rng.gen_range(0.0..2.0 * PI)).collect();
                let theta: Vec<f64> = (0..16).map(|_| rng.gen_range(-PI..PI)).collect();
                let p = class_probabilities(&x, &theta, &config).unwrap();
                assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn loss_examples() {
        // θ = 0, x = 0 → uniform over 16 states; C=2 gives p_y = 0.5 for every label
        let config = VqcConfig::new(4, 2);
        let ds = dataset(vec![vec![0.0; 4]; 3], vec![0, 1, 0], 2);
        let loss = cross_entropy_loss(&ds, &[0.0; 16], &config).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);

        // one qubit, C=2: RY(π)|+>... use x=0 → |+>, then RY(π/2) sends |+> to |1>
        let config = VqcConfig { ansatz_reps: 0, ..VqcConfig::new(1, 2) };
        let ds = dataset(vec![vec![0.0]], vec![1], 2);
        let loss = cross_entropy_loss(&ds, &[PI / 2.0], &config).unwrap();
        assert!(loss.abs() < 1e-12, "p_y = 1 gives zero loss, got {loss}");
        let ds = dataset(vec![vec![0.0]], vec![0], 2);
        let loss = cross_entropy_loss(&ds, &[PI / 2.0], &config).unwrap();
        assert!((loss - 27.631021115928547).abs() < 1e-9, "clamped at 1e-12: {loss}");
    }

    #[test]
    fn empty_dataset_is_an_error() {
        let config = VqcConfig::new(4, 2);
        let ds = Dataset::new("e", Matrix::zeros(0, 4), vec![], 2).unwrap();
        assert!(matches!(cross_entropy_loss(&ds, &[0.0; 16], &config), Err(Error::EmptyDataset)));
    }

    #[test]
    fn loss_is_order_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let config = VqcConfig::new(4, 3);
        let rows: Vec<Vec<f64>> = (0..12).map(|_| (0..4).map(|_| rng.gen_range(0.0..PI)).collect()).collect();
        let labels: Vec<usize> = (0..12).map(|i| i % 3).collect();
        let theta: Vec<f64> = (0..16).map(|_| rng.gen_range(-PI..PI)).collect();
        let base = cross_entropy_loss(&dataset(rows.clone(), labels.clone(), 3), &theta, &config).unwrap();
        let perm = [5, 2, 11, 0, 7, 3, 9, 1, 10, 4, 8, 6];
        let rows_p: Vec<_> = perm.iter().map(|&i| rows[i].clone()).collect();
        let labels_p: Vec<_> = perm.iter().map(|&i| labels[i]).collect();
        let shuffled = cross_entropy_loss(&dataset(rows_p, labels_p, 3), &theta, &config).unwrap();
        assert!((base - shuffled).abs() < 1e-14);
    }

    #[test]
    fn predict_tie_and_accuracy() {
        assert_eq!(argmax_lowest(&[0.0, 1.0, 0.0]), 1);
        assert_eq!(argmax_lowest(&[0.5, 0.5]), 0);
        // uniform output: every prediction is class 0
        let config = VqcConfig::new(4, 2);
        assert_eq!(predict(&[0.0; 4], &[0.0; 16], &config).unwrap(), 0);
        let ds = dataset(vec![vec![0.0; 4]; 4], vec![0, 0, 0, 1], 2);
        assert_eq!(accuracy(&ds, &[0.0; 16], &config).unwrap(), 0.75);
    }

    #[test]
    fn encoded_matches_direct_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let config = VqcConfig::new(4, 3);
        let rows: Vec<Vec<f64>> = (0..6).map(|_| (0..4).map(|_| rng.gen_range(0.0..PI)).collect()).collect();
        let ds = dataset(rows.clone(), vec![0, 1, 2, 0, 1, 2], 3);
        let theta: Vec<f64> = (0..16).map(|_| rng.gen_range(-PI..PI)).collect();
        let enc = EncodedDataset::new(&ds, &config).unwrap();
        let probs = enc.class_probabilities(&theta).unwrap();
        for (row, p) in rows.iter().zip(&probs) {
            let direct = class_probabilities(row, &theta, &config).unwrap();
            for (a, b) in p.iter().zip(&direct) {
                assert!((a - b).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn shot_mode_is_deterministic_and_close() {
        let mut config = VqcConfig::new(4, 2);
        config.shots = Some(20_000);
        config.shot_seed = 7;
        let theta = [0.3; 16];
        let x = [0.1, 0.2, 0.3, 0.4];
        let a = class_probabilities(&x, &theta, &config).unwrap();
        let b = class_probabilities(&x, &theta, &config).unwrap();
        assert_eq!(a, b);
        config.shots = None;
        let exact = class_probabilities(&x, &theta, &config).unwrap();
        assert!((a[0] - exact[0]).abs() < 0.02);
    }
}
