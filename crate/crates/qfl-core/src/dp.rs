//! Differential-privacy mechanisms applied outside the optimizer: noise on
//! released model parameters, and DP-PCA preprocessing.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{symmetric_eigen, Matrix};
use crate::vqc::ParameterVector;

/// σ = s·√(2 ln(1.25/δ))/ε for the Gaussian mechanism.
pub fn gaussian_sigma(epsilon: f64, delta: f64, sensitivity: f64) -> f64 {
    if sensitivity == 0.0 || epsilon.is_infinite() {
        return 0.0;
    }
    sensitivity * (2.0 * (1.25 / delta).ln()).sqrt() / epsilon
}

/// One draw from Laplace(0, b) by inverse CDF.
pub fn sample_laplace<R: Rng + ?Sized>(scale: f64, rng: &mut R) -> f64 {
    // u in the open interval (-1/2, 1/2) so the log argument stays positive
    let u: f64 = rng.sample::<f64, _>(rand::distributions::Open01) - 0.5;
    -scale * u.signum() * (1.0 - 2.0 * u.abs()).ln()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mechanism", rename_all = "lowercase", deny_unknown_fields)]
pub enum NoiseMechanism {
    Laplace { epsilon: f64, sensitivity: f64 },
    Gaussian { epsilon: f64, delta: f64, sensitivity: f64 },
}

impl NoiseMechanism {
    pub fn validate(&self) -> Result<()> {
        let (epsilon, sensitivity) = match *self {
            NoiseMechanism::Laplace { epsilon, sensitivity } => (epsilon, sensitivity),
            NoiseMechanism::Gaussian { epsilon, delta, sensitivity } => {
                if !(delta > 0.0 && delta < 1.0) {
                    return Err(Error::invalid("delta", format!("must be in (0, 1), got {delta}")));
                }
                (epsilon, sensitivity)
            }
        };
        if !(epsilon > 0.0) {
            return Err(Error::invalid("epsilon", format!("must be > 0, got {epsilon}")));
        }
        if !(sensitivity >= 0.0) || !sensitivity.is_finite() {
            return Err(Error::invalid("sensitivity", format!("must be >= 0, got {sensitivity}")));
        }
        Ok(())
    }

    /// Laplace scale b = s/ε, or the Gaussian σ.
    pub fn scale(&self) -> f64 {
        match *self {
            NoiseMechanism::Laplace { epsilon, sensitivity } => {
                if epsilon.is_infinite() {
                    0.0
                } else {
                    sensitivity / epsilon
                }
            }
            NoiseMechanism::Gaussian { epsilon, delta, sensitivity } => gaussian_sigma(epsilon, delta, sensitivity),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let scale = self.scale();
        match self {
            NoiseMechanism::Laplace { .. } => sample_laplace(scale, rng),
            NoiseMechanism::Gaussian { .. } => Normal::new(0.0, scale).expect("finite sigma").sample(rng),
        }
    }
}

/// θ̃ = θ + η with η drawn i.i.d. per entry from the mechanism. A zero
/// scale returns θ unchanged.
pub fn add_parameter_noise<R: Rng + ?Sized>(
    theta: &ParameterVector,
    mech: &NoiseMechanism,
    rng: &mut R,
) -> Result<ParameterVector> {
    mech.validate()?;
    theta.check_finite()?;
    if mech.scale() == 0.0 {
        return Ok(theta.clone());
    }
    Ok(theta.iter().map(|t| t + mech.sample(rng)).collect::<Vec<_>>().into())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FeatureBounds {
    /// The same (low, high) for every feature.
    Uniform(f64, f64),
    PerFeature(Vec<(f64, f64)>),
}

impl FeatureBounds {
    fn get(&self, feature: usize) -> (f64, f64) {
        match self {
            FeatureBounds::Uniform(lo, hi) => (*lo, *hi),
            FeatureBounds::PerFeature(b) => b[feature],
        }
    }

    fn validate(&self, dim: usize) -> Result<()> {
        if let FeatureBounds::PerFeature(b) = self {
            if b.len() != dim {
                return Err(Error::invalid("bounds", format!("{} ranges for {dim} features", b.len())));
            }
        }
        for i in 0..dim {
            let (lo, hi) = self.get(i);
            if !(lo <= hi) {
                return Err(Error::invalid("bounds", format!("feature {i}: invalid range ({lo}, {hi})")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DpPcaSpec {
    pub n_components: usize,
    pub epsilon: f64,
    /// Total δ; split evenly between the mean and the covariance.
    pub delta: f64,
    pub bounds: FeatureBounds,
    /// Maximum row L2 norm after clipping.
    pub data_norm: f64,
}

impl DpPcaSpec {
    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.n_components == 0 || self.n_components > dim {
            return Err(Error::invalid("n_components", format!("must be in 1..={dim}, got {}", self.n_components)));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::invalid("epsilon", format!("must be > 0, got {}", self.epsilon)));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::invalid("delta", format!("must be in (0, 1), got {}", self.delta)));
        }
        if !(self.data_norm > 0.0) {
            return Err(Error::invalid("data_norm", format!("must be > 0, got {}", self.data_norm)));
        }
        self.bounds.validate(dim)
    }
}

/// A fitted projection: `transform(X) = (X − mean)·components`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// d x k, one principal axis per column.
    pub components: Matrix,
    /// All d eigenvalues of the (noisy) covariance, non-increasing.
    pub eigenvalues: Vec<f64>,
}

impl PcaModel {
    pub fn transform(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.mean.len() {
            return Err(Error::Dimension(format!("{} features, model fitted on {}", x.cols(), self.mean.len())));
        }
        let mut centered = x.clone();
        for r in 0..centered.rows() {
            for (v, m) in centered.row_mut(r).iter_mut().zip(&self.mean) {
                *v -= m;
            }
        }
        centered.matmul(&self.components)
    }
}

fn covariance(x: &Matrix, mean: &[f64]) -> Matrix {
    let (m, d) = (x.rows(), x.cols());
    let mut cov = Matrix::zeros(d, d);
    for row in x.row_iter() {
        let c: Vec<f64> = row.iter().zip(mean).map(|(v, mu)| v - mu).collect();
        for i in 0..d {
            for j in i..d {
                cov[(i, j)] += c[i] * c[j];
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            let v = cov[(i, j)] / m as f64;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    cov
}

fn top_components(cov: &Matrix, k: usize) -> Result<(Matrix, Vec<f64>)> {
    let eig = symmetric_eigen(cov)?;
    let d = cov.rows();
    let mut comps = Matrix::zeros(d, k);
    for r in 0..d {
        for c in 0..k {
            comps[(r, c)] = eig.vectors[(r, c)];
        }
    }
    Ok((comps, eig.values))
}

/// Plain (non-private) PCA fit.
pub fn pca_fit(x: &Matrix, k: usize) -> Result<PcaModel> {
    if x.rows() == 0 {
        return Err(Error::EmptyDataset);
    }
    if k == 0 || k > x.cols() {
        return Err(Error::invalid("n_components", format!("must be in 1..={}, got {k}", x.cols())));
    }
    let mean = x.column_means();
    let (components, eigenvalues) = top_components(&covariance(x, &mean), k)?;
    Ok(PcaModel { mean, components, eigenvalues })
}

/// Clips every feature into its bounds, then rescales any row whose L2 norm
/// exceeds `data_norm`.
pub fn clip_rows(x: &Matrix, bounds: &FeatureBounds, data_norm: f64) -> Matrix {
    let mut out = x.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        for (i, v) in row.iter_mut().enumerate() {
            let (lo, hi) = bounds.get(i);
            *v = v.clamp(lo, hi);
        }
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > data_norm {
            let s = data_norm / norm;
            row.iter_mut().for_each(|v| *v *= s);
        }
    }
    out
}

/// Output of [`dp_pca_fit_transform`].
#[derive(Debug, Clone)]
pub struct DpPcaOutput {
    /// m x k projection of the clipped, privately centred data.
    pub projected: Matrix,
    pub model: PcaModel,
    /// The noisy covariance the components were taken from.
    pub noisy_covariance: Matrix,
}

/// Differentially private PCA.
///
/// 1. Clip features into bounds and rows to `data_norm`.
/// 2. Private mean: empirical mean + N(0, σ_μ²I), budget (ε/2, δ/2),
///    L2 sensitivity `data_norm/m`.
/// 3. Covariance of the data centred on the private mean plus a symmetric
///    Gaussian matrix (upper triangle i.i.d., mirrored), budget (ε/2, δ/2),
///    sensitivity `data_norm²/m`.
/// 4. Top-k eigenvectors of the noisy covariance.
/// 5. Project the centred, clipped data.
///
/// The labels are accepted for interface symmetry with the data pipeline
/// and are not used by the transform.
pub fn dp_pca_fit_transform<R: Rng + ?Sized>(
    x: &Matrix,
    _labels: &[usize],
    spec: &DpPcaSpec,
    rng: &mut R,
) -> Result<DpPcaOutput> {
    let (m, d) = (x.rows(), x.cols());
    if m == 0 {
        return Err(Error::EmptyDataset);
    }
    if m < 2 {
        return Err(Error::invalid("samples", "DP-PCA needs at least two rows"));
    }
    spec.validate(d)?;

    let clipped = clip_rows(x, &spec.bounds, spec.data_norm);
    let half_eps = spec.epsilon / 2.0;
    let half_delta = spec.delta / 2.0;

    let sigma_mean = gaussian_sigma(half_eps, half_delta, spec.data_norm / m as f64);
    let mut mean = clipped.column_means();
    if sigma_mean > 0.0 {
        let normal = Normal::new(0.0, sigma_mean).expect("finite sigma");
        mean.iter_mut().for_each(|v| *v += normal.sample(rng));
    }

    let mut cov = covariance(&clipped, &mean);
    let sigma_cov = gaussian_sigma(half_eps, half_delta, spec.data_norm * spec.data_norm / m as f64);
    if sigma_cov > 0.0 {
        let normal = Normal::new(0.0, sigma_cov).expect("finite sigma");
        for i in 0..d {
            for j in i..d {
                let z = normal.sample(rng);
                cov[(i, j)] += z;
                if i != j {
                    cov[(j, i)] = cov[(i, j)];
                }
            }
        }
    }

    let (components, eigenvalues) = top_components(&cov, spec.n_components)?;
    let model = PcaModel { mean, components, eigenvalues };
    let projected = model.transform(&clipped)?;
    Ok(DpPcaOutput { projected, model, noisy_covariance: cov })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::orthogonality_error;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rows: usize, cols: usize, rng: &mut impl Rng) -> Matrix {
        Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen::<f64>()).collect()).unwrap()
    }

    #[test]
    fn laplace_scale_from_budget() {
        let mech = NoiseMechanism::Laplace { epsilon: 1.0, sensitivity: 1.0 };
        assert_eq!(mech.scale(), 1.0);
        let mech = NoiseMechanism::Laplace { epsilon: 0.5, sensitivity: 2.0 };
        assert_eq!(mech.scale(), 4.0);
    }

    #[test]
    fn gaussian_sigma_closed_form() {
        let mech = NoiseMechanism::Gaussian { epsilon: 1.0, delta: 1e-5, sensitivity: 1.0 };
        assert!((mech.scale() - 4.844_805_262_605_97).abs() < 1e-9);
    }

    #[test]
    fn zero_sensitivity_is_identity() {
        let theta: ParameterVector = vec![0.1, -2.0, 3.5].into();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for mech in [
            NoiseMechanism::Laplace { epsilon: 1.0, sensitivity: 0.0 },
            NoiseMechanism::Gaussian { epsilon: 1.0, delta: 1e-5, sensitivity: 0.0 },
        ] {
            assert_eq!(add_parameter_noise(&theta, &mech, &mut rng).unwrap(), theta);
        }
    }

    #[test]
    fn noise_rejects_bad_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let theta: ParameterVector = vec![0.1, f64::NAN].into();
        let mech = NoiseMechanism::Laplace { epsilon: 1.0, sensitivity: 1.0 };
        assert!(matches!(add_parameter_noise(&theta, &mech, &mut rng), Err(Error::NonFiniteParameter(1))));
        let theta: ParameterVector = vec![0.1].into();
        let mech = NoiseMechanism::Gaussian { epsilon: 1.0, delta: 0.0, sensitivity: 1.0 };
        assert!(add_parameter_noise(&theta, &mech, &mut rng).is_err());
        let mech = NoiseMechanism::Laplace { epsilon: -1.0, sensitivity: 1.0 };
        assert!(add_parameter_noise(&theta, &mech, &mut rng).is_err());
    }

    #[test]
    fn noise_does_not_touch_input() {
        let theta: ParameterVector = vec![1.0; 16].into();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mech = NoiseMechanism::Laplace { epsilon: 1.0, sensitivity: 1.0 };
        let noisy = add_parameter_noise(&theta, &mech, &mut rng).unwrap();
        assert_eq!(theta, vec![1.0; 16].into());
        assert_ne!(noisy, theta);
    }

    #[test]
    fn clipping_respects_bounds_and_norm() {
        let x = Matrix::from_rows(&[vec![2.0, -1.0, 0.5], vec![0.1, 0.1, 0.1]]).unwrap();
        let c = clip_rows(&x, &FeatureBounds::Uniform(0.0, 1.0), 1.0);
        let norm0 = c.row(0).iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm0 - 1.0).abs() < 1e-15);
        assert_eq!(c.row(0)[1], 0.0);
        assert_eq!(c.row(1), x.row(1));
    }

    #[test]
    fn vanishing_noise_matches_exact_pca() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_matrix(200, 8, &mut rng);
        let spec = DpPcaSpec {
            n_components: 3,
            epsilon: 1e9,
            delta: 1e-5,
            bounds: FeatureBounds::Uniform(0.0, 1.0),
            data_norm: 8f64.sqrt(),
        };
        let out = dp_pca_fit_transform(&x, &[], &spec, &mut rng).unwrap();
        let exact = pca_fit(&x, 3).unwrap();
        let exact_proj = exact.transform(&x).unwrap();
        for c in 0..3 {
            let a = out.projected.column(c);
            let b = exact_proj.column(c);
            let same: f64 = a.iter().zip(&b).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
            let flip: f64 = a.iter().zip(&b).map(|(p, q)| (p + q).abs()).fold(0.0, f64::max);
            assert!(same.min(flip) < 1e-6, "column {c}: {same} / {flip}");
        }
    }

    #[test]
    fn full_rank_projection_preserves_distances() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random_matrix(50, 5, &mut rng);
        let spec = DpPcaSpec {
            n_components: 5,
            epsilon: 1e9,
            delta: 1e-5,
            bounds: FeatureBounds::Uniform(0.0, 1.0),
            data_norm: 5f64.sqrt(),
        };
        let out = dp_pca_fit_transform(&x, &[], &spec, &mut rng).unwrap();
        assert!(orthogonality_error(&out.model.components) < 1e-8);
        let dist = |m: &Matrix, i: usize, j: usize| {
            m.row(i).iter().zip(m.row(j)).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
        };
        for (i, j) in [(0, 1), (3, 17), (20, 49)] {
            assert!((dist(&x, i, j) - dist(&out.projected, i, j)).abs() < 1e-8);
        }
    }

    #[test]
    fn noisy_covariance_is_exactly_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random_matrix(30, 6, &mut rng);
        let spec = DpPcaSpec {
            n_components: 2,
            epsilon: 1.0,
            delta: 1e-5,
            bounds: FeatureBounds::Uniform(0.0, 1.0),
            data_norm: 1.0,
        };
        let out = dp_pca_fit_transform(&x, &[], &spec, &mut rng).unwrap();
        let cov = &out.noisy_covariance;
        for i in 0..6 {
            for j in 0..6 {
                assert_eq!(cov[(i, j)].to_bits(), cov[(j, i)].to_bits());
            }
        }
        assert!(out.model.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
        assert!(orthogonality_error(&out.model.components) < 1e-8);
    }

    #[test]
    fn dp_pca_deterministic_per_seed() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = random_matrix(40, 4, &mut rng);
        let spec = DpPcaSpec {
            n_components: 2,
            epsilon: 1.0,
            delta: 1e-5,
            bounds: FeatureBounds::Uniform(0.0, 1.0),
            data_norm: 1.0,
        };
        let a = dp_pca_fit_transform(&x, &[], &spec, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = dp_pca_fit_transform(&x, &[], &spec, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a.projected, b.projected);
    }

    #[test]
    fn dp_pca_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = random_matrix(10, 3, &mut rng);
        let mut spec = DpPcaSpec {
            n_components: 4,
            epsilon: 1.0,
            delta: 1e-5,
            bounds: FeatureBounds::Uniform(0.0, 1.0),
            data_norm: 1.0,
        };
        assert!(dp_pca_fit_transform(&x, &[], &spec, &mut rng).is_err());
        spec.n_components = 2;
        assert!(matches!(dp_pca_fit_transform(&Matrix::zeros(0, 3), &[], &spec, &mut rng), Err(Error::EmptyDataset)));
        spec.bounds = FeatureBounds::PerFeature(vec![(0.0, 1.0)]);
        assert!(dp_pca_fit_transform(&x, &[], &spec, &mut rng).is_err());
    }
}
