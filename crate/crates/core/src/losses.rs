//! Transition-corrected classification loss, contrastive loss over positive
//! sets, and their weighted combination, each with analytic gradients.

use ndarray::{concatenate, Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::atm::{build_positive_set, PoolLayout};
use crate::error::{Error, Result};
use crate::nn::{softmax, NUMERIC_FLOOR};
use crate::transition::AdversaryAwareMatrix;

/// Contrastive temperature `τ > 0`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Temperature(f64);

impl Temperature {
    pub const DEFAULT: Temperature = Temperature(0.07);

    pub fn new(tau: f64) -> Result<Self> {
        if !(tau > 0.0) || !tau.is_finite() {
            return Err(Error::arg("tau", format!("{tau} is not positive")));
        }
        Ok(Temperature(tau))
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

/// `−Σ_i q̄_i log((M f)_i)` with `f = softmax(logits)`.
///
/// Returns the value and its gradient with respect to the logits.
pub fn adversary_aware_ce(logits: ArrayView1<'_, f64>, target: ArrayView1<'_, f64>, m: &AdversaryAwareMatrix) -> (f64, Array1<f64>) {
    let f = softmax(logits);
    let corrected = m.apply(f.view());
    debug_assert!(corrected.iter().all(|&v| v <= 2.0 + 1e-9), "corrected output above 2: {corrected}");
    let mut value = 0.0;
    let mut d_corrected = Array1::zeros(corrected.len());
    for (i, (&q, &g)) in target.iter().zip(corrected.iter()).enumerate() {
        if q == 0.0 {
            continue;
        }
        value -= q * g.max(NUMERIC_FLOOR).ln();
        if g > NUMERIC_FLOOR {
            d_corrected[i] = -q / g;
        }
    }
    let d_f = m.entries().t().dot(&d_corrected);
    let inner = f.dot(&d_f);
    let d_logits = &f * &(&d_f - inner);
    (value, d_logits)
}

/// Contribution of one query to the contrastive loss.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryContrast {
    pub value: f64,
    pub d_query: Array1<f64>,
    /// Gradient with respect to every pool row.
    pub d_pool: Array2<f64>,
}

/// `−(1/|N₊|) Σ_{z₊} log( exp(u·z₊/τ) / Σ_{z′ ∈ pool} exp(u·z′/τ) )`.
///
/// `pool` must not contain `u` itself; `positives` index rows of `pool`.
/// Returns `None` when the positive set is empty.
pub fn contrastive_loss(u: ArrayView1<'_, f64>, pool: ArrayView2<'_, f64>, positives: &[usize], tau: Temperature) -> Option<QueryContrast> {
    if positives.is_empty() || pool.nrows() == 0 {
        return None;
    }
    let tau = tau.get();
    let logits = pool.dot(&u) / tau;
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp = logits.mapv(|s| (s - max).exp());
    let total = exp.sum();
    let lse = max + total.ln();
    let weight = 1.0 / positives.len() as f64;
    let value = lse - weight * positives.iter().map(|&k| logits[k]).sum::<f64>();
    let mut d_logits = exp / total;
    for &k in positives {
        d_logits[k] -= weight;
    }
    let d_query = pool.t().dot(&d_logits) / tau;
    let d_pool = d_logits.insert_axis(Axis(1)).dot(&u.insert_axis(Axis(0))) / tau;
    Some(QueryContrast { value, d_query, d_pool })
}

/// Mini-batch contrastive loss over `D_q ∪ D_k ∪ queue`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveBatch {
    /// Mean over queries with a nonempty positive set.
    pub value: f64,
    pub per_query: Vec<Option<f64>>,
    pub skipped: usize,
    /// Gradient with respect to the query embeddings. Keys and queue entries
    /// come from the momentum encoder and receive none.
    pub d_queries: Array2<f64>,
}

/// Embeddings and predicted labels that make up the contrastive pool.
#[derive(Debug, Clone, Copy)]
pub struct ContrastiveInputs<'a> {
    pub queries: ArrayView2<'a, f64>,
    pub keys: ArrayView2<'a, f64>,
    pub queue: ArrayView2<'a, f64>,
    pub predictions: &'a [usize],
    pub queue_labels: &'a [usize],
}

pub fn batch_contrastive(inputs: &ContrastiveInputs<'_>, tau: Temperature) -> Result<ContrastiveBatch> {
    let b = inputs.queries.nrows();
    let dim = inputs.queries.ncols();
    if inputs.keys.dim() != (b, dim) || inputs.queue.ncols() != dim && inputs.queue.nrows() > 0 {
        return Err(Error::DimensionMismatch {
            expected: format!("keys ({b}, {dim}) and queue (_, {dim})"),
            actual: format!("{:?} and {:?}", inputs.keys.dim(), inputs.queue.dim()),
        });
    }
    if inputs.predictions.len() != b || inputs.queue_labels.len() != inputs.queue.nrows() {
        return Err(Error::DimensionMismatch {
            expected: format!("{b} predictions and {} queue labels", inputs.queue.nrows()),
            actual: format!("{} and {}", inputs.predictions.len(), inputs.queue_labels.len()),
        });
    }
    let layout = PoolLayout {
        batch: b,
        queue: inputs.queue.nrows(),
    };
    let mut parts = vec![inputs.queries, inputs.keys];
    if inputs.queue.nrows() > 0 {
        parts.push(inputs.queue);
    }
    let pool = concatenate(Axis(0), &parts).expect("shapes checked");
    let t = tau.get();
    let scores = inputs.queries.dot(&pool.t()) / t;

    let mut per_query = Vec::with_capacity(b);
    let mut d_scores = Array2::<f64>::zeros(scores.dim());
    let mut total = 0.0;
    let mut active = 0usize;
    for i in 0..b {
        let positives = build_positive_set(i, inputs.predictions, inputs.queue_labels);
        if positives.is_empty() {
            per_query.push(None);
            continue;
        }
        let row = scores.row(i);
        let max = row
            .iter()
            .enumerate()
            .filter(|&(k, _)| k != i)
            .map(|(_, &s)| s)
            .fold(f64::NEG_INFINITY, f64::max);
        let mut exp = row.mapv(|s| (s - max).exp());
        exp[i] = 0.0;
        let z = exp.sum();
        let lse = max + z.ln();
        let weight = 1.0 / positives.len() as f64;
        let mut value = lse;
        let mut d_row = exp / z;
        for entry in &positives.members {
            let k = layout.position(*entry);
            value -= weight * row[k];
            d_row[k] -= weight;
        }
        d_scores.row_mut(i).assign(&d_row);
        per_query.push(Some(value));
        total += value;
        active += 1;
    }
    let skipped = b - active;
    if active == 0 {
        return Ok(ContrastiveBatch {
            value: 0.0,
            per_query,
            skipped,
            d_queries: Array2::zeros((b, dim)),
        });
    }
    let scale = 1.0 / (active as f64 * t);
    // each query's own row, plus its appearances as a pool member of other queries
    let mut d_queries = d_scores.dot(&pool) * scale;
    d_queries += &(d_scores.slice(ndarray::s![.., ..b]).t().dot(&inputs.queries) * scale);
    Ok(ContrastiveBatch {
        value: total / active as f64,
        per_query,
        skipped,
        d_queries,
    })
}

/// Values of the classification, contrastive and combined objectives.
#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown {
    pub classification: f64,
    pub contrastive: f64,
    pub combined: f64,
    pub per_instance_classification: Vec<f64>,
    pub per_query_contrastive: Vec<Option<f64>>,
    pub skipped_queries: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossGradients {
    pub d_logits: Array2<f64>,
    /// `None` when the contrastive term was not evaluated.
    pub d_unit: Option<Array2<f64>>,
}

/// `λ · contrastive + classification`, both batch means.
///
/// With `contrastive = None` (warm-up) the contrastive term is reported as 0
/// and not evaluated.
pub fn combined_loss(
    logits: ArrayView2<'_, f64>,
    targets: ArrayView2<'_, f64>,
    m: &AdversaryAwareMatrix,
    contrastive: Option<&ContrastiveInputs<'_>>,
    lambda: f64,
    tau: Temperature,
) -> Result<(LossBreakdown, LossGradients)> {
    let (b, c) = logits.dim();
    if targets.dim() != (b, c) || m.classes() != c {
        return Err(Error::DimensionMismatch {
            expected: format!("targets ({b}, {c}) and a {c}-class matrix"),
            actual: format!("{:?} and {}", targets.dim(), m.classes()),
        });
    }
    if b == 0 {
        return Err(Error::arg("batch", "empty batch"));
    }
    let mut per_instance = Vec::with_capacity(b);
    let mut d_logits = Array2::zeros((b, c));
    for (i, (l, q)) in logits.outer_iter().zip(targets.outer_iter()).enumerate() {
        let (value, grad) = adversary_aware_ce(l, q, m);
        per_instance.push(value);
        d_logits.row_mut(i).assign(&(grad / b as f64));
    }
    let classification = per_instance.iter().sum::<f64>() / b as f64;

    let (contrastive_value, per_query, skipped, d_unit) = match contrastive {
        Some(inputs) => {
            if inputs.queries.nrows() != b {
                return Err(Error::DimensionMismatch {
                    expected: format!("{b} query embeddings"),
                    actual: inputs.queries.nrows().to_string(),
                });
            }
            let batch = batch_contrastive(inputs, tau)?;
            (batch.value, batch.per_query, batch.skipped, Some(batch.d_queries * lambda))
        }
        None => (0.0, vec![None; b], 0, None),
    };
    Ok((
        LossBreakdown {
            classification,
            contrastive: contrastive_value,
            combined: lambda * contrastive_value + classification,
            per_instance_classification: per_instance,
            per_query_contrastive: per_query,
            skipped_queries: skipped,
        },
        LossGradients { d_logits, d_unit },
    ))
}
