//! Dataset condensation by matching per-class mean embeddings under a fixed
//! random projection.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{symmetric_eigen, Matrix};
use crate::rng::{derived_rng, rng_from_seed, stream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CondenseSpec {
    pub images_per_class: usize,
    pub steps: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub embedding_dim: usize,
    #[serde(default)]
    pub seed: u64,
}

impl CondenseSpec {
    pub fn validate(&self) -> Result<()> {
        if self.images_per_class == 0 {
            return Err(Error::invalid("images_per_class", "must be >= 1"));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::invalid("learning_rate", format!("must be > 0, got {}", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size", "must be >= 1"));
        }
        if self.embedding_dim == 0 {
            return Err(Error::invalid("embedding_dim", "must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct CondenseOutput {
    /// (C·m) x d, class-major; every value in [0, 1].
    pub synthetic: Dataset,
    /// Per class, the matching loss ‖μ_r − μ_s‖² seen at each step before
    /// its update (length T).
    pub loss_traces: Vec<Vec<f64>>,
    /// (C·m)/n.
    pub size_ratio: f64,
    /// Dataset row each synthetic sample was initialised from.
    pub initial_rows: Vec<usize>,
}

/// W with i.i.d. N(0, 1/e) entries, d x e.
pub fn sample_projection<R: Rng + ?Sized>(d: usize, e: usize, rng: &mut R) -> Matrix {
    let normal = Normal::new(0.0, (1.0 / e as f64).sqrt()).expect("positive variance");
    Matrix::from_vec(d, e, (0..d * e).map(|_| normal.sample(rng)).collect()).expect("shape")
}

/// Full-batch step size below which the one-class matching loss is
/// non-increasing: m / (2·λ_max(W Wᵀ)).
pub fn stability_bound(w: &Matrix, images_per_class: usize) -> Result<f64> {
    // λ_max(W Wᵀ) = λ_max(Wᵀ W); the latter is e x e.
    let gram = w.transpose().matmul(w)?;
    let lambda = symmetric_eigen(&gram)?.values[0];
    Ok(images_per_class as f64 / (2.0 * lambda))
}

/// Condenses `dataset` (features already in [0, 1]) with a projection drawn
/// from the spec seed.
pub fn condense(dataset: &Dataset, spec: &CondenseSpec) -> Result<CondenseOutput> {
    spec.validate()?;
    let w = sample_projection(
        dataset.feature_count(),
        spec.embedding_dim,
        &mut derived_rng(spec.seed, &[stream::CONDENSE]),
    );
    condense_with_projection(dataset, spec, &w)
}

fn row_mean(x: &Matrix, rows: &[usize]) -> Vec<f64> {
    let mut mean = vec![0.0; x.cols()];
    for &r in rows {
        for (m, v) in mean.iter_mut().zip(x.row(r)) {
            *m += v;
        }
    }
    let k = rows.len() as f64;
    mean.iter_mut().for_each(|m| *m /= k);
    mean
}

fn embed(v: &[f64], w: &Matrix) -> Vec<f64> {
    let mut out = vec![0.0; w.cols()];
    for (vi, wrow) in v.iter().zip(w.row_iter()) {
        if *vi != 0.0 {
            for (o, wij) in out.iter_mut().zip(wrow) {
                *o += vi * wij;
            }
        }
    }
    out
}

/// Same as [`condense`] with a caller-supplied d x e projection.
pub fn condense_with_projection(dataset: &Dataset, spec: &CondenseSpec, w: &Matrix) -> Result<CondenseOutput> {
    spec.validate()?;
    let (n, d) = (dataset.len(), dataset.feature_count());
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    if w.rows() != d {
        return Err(Error::Dimension(format!("projection has {} rows for {d} features", w.rows())));
    }
    let m = spec.images_per_class;
    let classes = dataset.class_count;

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_from_seed(spec.seed));
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for &i in &order {
        by_class[dataset.labels[i]].push(i);
    }
    for (class, rows) in by_class.iter().enumerate() {
        if rows.len() < m {
            return Err(Error::InsufficientClassSamples { class, available: rows.len(), required: m });
        }
    }

    let x = &dataset.features;
    let wt = w.transpose();
    let results: Vec<(Matrix, Vec<f64>)> = by_class
        .par_iter()
        .enumerate()
        .map(|(class, rows)| {
            let mut s = x.select_rows(&rows[..m]);
            let mut rng = derived_rng(spec.seed, &[stream::CONDENSE, class as u64]);
            let mut pool = rows.clone();
            let b = spec.batch_size.min(pool.len());
            let all: Vec<usize> = (0..m).collect();
            let mut trace = Vec::with_capacity(spec.steps);
            for _ in 0..spec.steps {
                let batch: &[usize] = if b == pool.len() {
                    &pool
                } else {
                    pool.shuffle(&mut rng);
                    &pool[..b]
                };
                let mu_r = embed(&row_mean(x, batch), w);
                let mu_s = embed(&row_mean(&s, &all), w);
                let delta: Vec<f64> = mu_r.iter().zip(&mu_s).map(|(r, s)| r - s).collect();
                trace.push(delta.iter().map(|v| v * v).sum());
                if delta.iter().all(|&v| v == 0.0) {
                    continue;
                }
                // Every synthetic row receives the same gradient.
                let scale = -2.0 / m as f64;
                let g: Vec<f64> = embed(&delta, &wt).into_iter().map(|v| scale * v).collect();
                for r in 0..m {
                    for (v, gi) in s.row_mut(r).iter_mut().zip(&g) {
                        *v = (*v - spec.learning_rate * gi).clamp(0.0, 1.0);
                    }
                }
            }
            (s, trace)
        })
        .collect();

    let mut data = Vec::with_capacity(classes * m * d);
    let mut labels = Vec::with_capacity(classes * m);
    let mut loss_traces = Vec::with_capacity(classes);
    for (class, (s, trace)) in results.into_iter().enumerate() {
        data.extend(s.into_vec());
        labels.extend(std::iter::repeat_n(class, m));
        loss_traces.push(trace);
    }
    let initial_rows = by_class.iter().flat_map(|rows| rows[..m].iter().copied()).collect();
    let synthetic =
        Dataset::new(format!("{}-condensed", dataset.name), Matrix::from_vec(classes * m, d, data)?, labels, classes)?;
    Ok(CondenseOutput { synthetic, loss_traces, size_ratio: (classes * m) as f64 / n as f64, initial_rows })
}
