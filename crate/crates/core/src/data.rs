//! Synthetic Gaussian-mixture benchmarks with exact posteriors, and clean CSV I/O.

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labelgen::{parse_field, CleanDataset};
use crate::rng::{self, Domain};

/// Isotropic Gaussian mixture with known parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianMixtureSpec {
    pub means: Vec<Vec<f64>>,
    pub variance: f64,
    pub priors: Vec<f64>,
    pub seed: u64,
}

impl GaussianMixtureSpec {
    pub fn new(means: Vec<Vec<f64>>, variance: f64, priors: Vec<f64>, seed: u64) -> Result<Self> {
        let spec = GaussianMixtureSpec {
            means,
            variance,
            priors,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// `classes` components in `dim` dimensions with unit variance and equal
    /// priors; component `k` is centred at `separation · e_(k mod dim)`, with
    /// the sign flipped on every wrap-around so means stay distinct.
    pub fn benchmark(classes: usize, dim: usize, separation: f64, seed: u64) -> Result<Self> {
        if classes == 0 || dim == 0 {
            return Err(Error::arg("classes", "need at least one class and one dimension"));
        }
        if classes > 2 * dim {
            return Err(Error::arg("dim", format!("{dim} dimensions cannot host {classes} axis-aligned means")));
        }
        let means = (0..classes)
            .map(|k| {
                let mut m = vec![0.0; dim];
                m[k % dim] = if k < dim { separation } else { -separation };
                m
            })
            .collect();
        Self::new(means, 1.0, vec![1.0 / classes as f64; classes], seed)
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.means.len();
        if c == 0 {
            return Err(Error::arg("means", "mixture needs at least one component"));
        }
        let d = self.means[0].len();
        if d == 0 || self.means.iter().any(|m| m.len() != d) {
            return Err(Error::arg("means", "all means must share a positive dimension"));
        }
        if self.means.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("means"));
        }
        if !(self.variance > 0.0) || !self.variance.is_finite() {
            return Err(Error::arg("variance", format!("{} is not positive", self.variance)));
        }
        if self.priors.len() != c {
            return Err(Error::DimensionMismatch {
                expected: format!("{c} priors"),
                actual: self.priors.len().to_string(),
            });
        }
        if self.priors.iter().any(|&p| !(0.0..=1.0).contains(&p)) || (self.priors.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::arg("priors", "priors must lie on the simplex"));
        }
        Ok(())
    }

    pub fn classes(&self) -> usize {
        self.means.len()
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    /// Exact `P(Y | X = x)` by Bayes rule over the component densities.
    pub fn posterior(&self, x: ArrayView1<'_, f64>) -> Array1<f64> {
        let logits: Vec<f64> = self
            .means
            .iter()
            .zip(&self.priors)
            .map(|(mean, &prior)| {
                let sq: f64 = mean.iter().zip(x.iter()).map(|(m, v)| (v - m) * (v - m)).sum();
                if prior > 0.0 {
                    prior.ln() - sq / (2.0 * self.variance)
                } else {
                    f64::NEG_INFINITY
                }
            })
            .collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let weights: Array1<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let total = weights.sum();
        weights / total
    }

    /// Bayes-optimal label (ties to the smallest index).
    pub fn bayes_label(&self, x: ArrayView1<'_, f64>) -> usize {
        crate::atm::argmax(self.posterior(x).view())
    }

    /// Instance `i` of the stream keyed by `(seed, stream)`.
    fn draw(&self, stream: u64, i: usize) -> (usize, Vec<f64>) {
        let mut rng = rng::stream(self.seed, Domain::Mixture, stream, i as u64);
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut label = self.classes() - 1;
        for (k, &p) in self.priors.iter().enumerate() {
            acc += p;
            if u < acc {
                label = k;
                break;
            }
        }
        let sd = self.variance.sqrt();
        let x = self.means[label]
            .iter()
            .map(|m| m + sd * rng.sample::<f64, _>(StandardNormal))
            .collect();
        (label, x)
    }

    /// `n` i.i.d. draws from the sub-stream `stream` (e.g. 0 for training,
    /// 1 for held-out data).
    pub fn sample(&self, n: usize, stream: u64) -> Result<CleanDataset> {
        if n == 0 {
            return Err(Error::arg("n", "must draw at least one instance"));
        }
        let d = self.dim();
        let mut features = Array2::zeros((n, d));
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let (y, x) = self.draw(stream, i);
            features.row_mut(i).assign(&Array1::from(x));
            labels.push(y);
        }
        CleanDataset::new(features, labels, self.classes())
    }

    pub fn to_text(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let spec: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }
}

/// Draws `n` instances and returns them with the mixture as posterior oracle.
pub fn sample_mixture(spec: &GaussianMixtureSpec, n: usize) -> Result<(CleanDataset, &GaussianMixtureSpec)> {
    Ok((spec.sample(n, 0)?, spec))
}

/// Writes `id,true_label,f0..f{d-1}`.
pub fn save_csv(ds: &CleanDataset, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["id".to_string(), "true_label".into()];
    header.extend((0..ds.dim()).map(|k| format!("f{k}")));
    w.write_record(&header)?;
    for i in 0..ds.len() {
        let mut record = vec![i.to_string(), ds.labels()[i].to_string()];
        record.extend(ds.feature(i).iter().map(|v| format!("{v:?}")));
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_csv(path: &Path, classes: usize) -> Result<CleanDataset> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_path(path)?;
    let headers = r.headers()?.clone();
    if headers.len() < 3 || &headers[0] != "id" || &headers[1] != "true_label" {
        return Err(Error::parse(path, 1, "expected header `id,true_label,f0,...`"));
    }
    let dim = headers.len() - 2;
    let mut values = Vec::new();
    let mut labels = Vec::new();
    for (row, record) in r.records().enumerate() {
        let line = row + 2;
        let record = record.map_err(|e| Error::parse(path, line, e.to_string()))?;
        if record.len() != dim + 2 {
            return Err(Error::parse(path, line, format!("expected {} columns, found {}", dim + 2, record.len())));
        }
        let label: usize = parse_field(&record[1], path, line, "true_label")?;
        if label >= classes {
            return Err(Error::parse(path, line, format!("label {label} >= {classes} classes")));
        }
        labels.push(label);
        for k in 0..dim {
            values.push(parse_field::<f64>(&record[2 + k], path, line, "feature")?);
        }
    }
    if labels.is_empty() {
        return Err(Error::parse(path, 2, "no instances"));
    }
    let features = Array2::from_shape_vec((labels.len(), dim), values).map_err(|e| Error::parse(path, 1, e.to_string()))?;
    CleanDataset::new(features, labels, classes)
}
