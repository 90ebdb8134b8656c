//! Brute-force oracles and numerical checks on small label spaces.
//!
//! Everything here is written without calling into the code it checks where
//! that is feasible: the set-distribution oracle walks flip outcomes rather
//! than candidate sets, the positive-set oracle filters an explicit pool, and
//! gradient checks use central differences of the loss value alone.

use std::fmt;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::atm::{build_positive_set, compute_margins, predict_label, PoolEntry, PrototypeBank, PseudoLabelStore};
use crate::candidate::CandidateSet;
use crate::data::GaussianMixtureSpec;
use crate::error::{Error, Result};
use crate::labelgen::{generate_adversary_aware, generate_standard, PllDataset};
use crate::linalg::{numerical_rank, total_variation};
use crate::losses::{adversary_aware_ce, batch_contrastive, combined_loss, ContrastiveInputs, Temperature};
use crate::nn::{Architecture, NetworkParams, OptimizerState};
use crate::rng::{self, Domain};
use crate::transition::{
    enumerate_q_bar, enumerate_q_star, recover_posterior, AdversaryAwareMatrix, FlipProfile, FlipRates, RivalMatrix,
    RECOVERY_TOL, STRUCTURAL_TOL,
};

/// Largest label space for the exact set-distribution oracles.
pub const ORACLE_GUARD: usize = 6;
/// Largest label space for exhaustive risk sweeps.
pub const RISK_GUARD: usize = 5;

/// Matrices that bypass [`RivalMatrix::new`] validation.
pub mod fixtures {
    use ndarray::Array2;

    use crate::error::{Error, Result};
    use crate::transition::RivalMatrix;

    /// Only requires a square matrix with finite, nonnegative entries.
    /// Rows may sum to anything, including zero.
    pub fn relaxed_rival(entries: Array2<f64>) -> Result<RivalMatrix> {
        if entries.nrows() != entries.ncols() {
            return Err(Error::InvalidRivalMatrix(format!("not square: {:?}", entries.dim())));
        }
        if entries.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidRivalMatrix("entries must be finite and nonnegative".into()));
        }
        Ok(RivalMatrix::new_unchecked(entries))
    }

    /// `T̄ = 0`: no rival is ever drawn.
    pub fn zero_rival(classes: usize) -> RivalMatrix {
        RivalMatrix::new_unchecked(Array2::zeros((classes, classes)))
    }

    const LITERAL_SUPPORT: [[u8; 6]; 6] = [
        [0, 1, 0, 1, 1, 1],
        [1, 0, 1, 1, 0, 1],
        [1, 1, 0, 1, 0, 1],
        [1, 1, 0, 0, 1, 1],
        [1, 1, 0, 1, 0, 1],
        [1, 0, 1, 1, 1, 0],
    ];

    fn literal(weight: f64) -> RivalMatrix {
        RivalMatrix::new_unchecked(Array2::from_shape_fn((6, 6), |(i, j)| f64::from(LITERAL_SUPPORT[i][j]) * weight))
    }

    /// The published 6×6 ablation matrix with entries 0.2 (rows sum to 0.8).
    pub fn literal_original() -> RivalMatrix {
        literal(0.2)
    }

    /// The published 6×6 ablation matrix with entries 0.3 (rows sum to 1.2).
    pub fn literal_new() -> RivalMatrix {
        literal(0.3)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Pass,
    Fail,
    /// Measured and reported, not asserted.
    Info,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Pass => "PASS",
            Verdict::Fail => "FAIL",
            Verdict::Info => "INFO",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: String,
    pub measured: f64,
    pub tolerance: Option<f64>,
    pub verdict: Verdict,
}

impl CheckOutcome {
    /// Passes when `measured ≤ tolerance` (NaN fails).
    pub fn at_most(name: impl Into<String>, measured: f64, tolerance: f64) -> Self {
        CheckOutcome {
            name: name.into(),
            measured,
            tolerance: Some(tolerance),
            verdict: if measured <= tolerance { Verdict::Pass } else { Verdict::Fail },
        }
    }

    /// Passes when `measured ≥ tolerance` (NaN fails).
    pub fn at_least(name: impl Into<String>, measured: f64, tolerance: f64) -> Self {
        CheckOutcome {
            name: name.into(),
            measured,
            tolerance: Some(tolerance),
            verdict: if measured >= tolerance { Verdict::Pass } else { Verdict::Fail },
        }
    }

    pub fn info(name: impl Into<String>, measured: f64) -> Self {
        CheckOutcome {
            name: name.into(),
            measured,
            tolerance: None,
            verdict: Verdict::Info,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RankDiagnostics {
    pub classes: usize,
    pub q_star_rank: Option<usize>,
    pub adversary_aware_rank: usize,
}

impl RankDiagnostics {
    pub fn full_rank(&self) -> bool {
        self.adversary_aware_rank == self.classes && self.q_star_rank.is_none_or(|r| r == self.classes)
    }
}

/// Outcome of one verification suite. Checks can be added until
/// [`ConsistencyReport::finalize`] is called.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsistencyReport {
    pub suite: String,
    checks: Vec<CheckOutcome>,
    /// `|R̂ − R|` per grid point, for risk probes.
    pub point_deviations: Vec<f64>,
    pub max_risk_deviation: Option<f64>,
    /// Worst total-variation error of recovered posteriors.
    pub posterior_tv: Option<f64>,
    pub ranks: Option<RankDiagnostics>,
    finalized: bool,
}

impl ConsistencyReport {
    pub fn new(suite: impl Into<String>) -> Self {
        ConsistencyReport {
            suite: suite.into(),
            checks: Vec::new(),
            point_deviations: Vec::new(),
            max_risk_deviation: None,
            posterior_tv: None,
            ranks: None,
            finalized: false,
        }
    }

    pub fn record(&mut self, check: CheckOutcome) -> Result<()> {
        if self.finalized {
            return Err(Error::arg("report", format!("suite {} is already finalized", self.suite)));
        }
        self.checks.push(check);
        Ok(())
    }

    pub fn finalize(&mut self) {
        self.finalized = true;
    }

    pub fn is_finalized(&self) -> bool {
        self.finalized
    }

    pub fn checks(&self) -> &[CheckOutcome] {
        &self.checks
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.verdict != Verdict::Fail)
    }

    /// `PASS suite/check measured=… tolerance=…`, one per check.
    pub fn summary_lines(&self) -> Vec<String> {
        self.checks
            .iter()
            .map(|c| {
                let tol = c.tolerance.map_or_else(|| "-".to_string(), |t| format!("{t:e}"));
                format!("{} {}/{} measured={:e} tolerance={}", c.verdict, self.suite, c.name, c.measured, tol)
            })
            .collect()
    }
}

/// `suite,check,measured,tolerance,verdict`.
pub fn write_reports_csv(reports: &[ConsistencyReport], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["suite", "check", "measured", "tolerance", "verdict"])?;
    for report in reports {
        for c in report.checks() {
            w.write_record([
                report.suite.clone(),
                c.name.clone(),
                format!("{:?}", c.measured),
                c.tolerance.map_or_else(String::new, |t| format!("{t:?}")),
                c.verdict.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn oracle_guard(classes: usize, guard: usize) -> Result<()> {
    if classes > guard {
        return Err(Error::EnumerationGuard { classes, guard });
    }
    Ok(())
}

/// `P(Y⃗ = mask | Y = y)` for every mask in `0..2^c`, found by walking all
/// `2^(c−1)` flip outcomes of the labels other than `y`.
pub fn oracle_q_bar(rates: &FlipRates) -> Result<Array2<f64>> {
    oracle_candidate_distribution(&fixtures::zero_rival(rates.classes()), rates)
}

/// Distribution of generated candidate sets: a rival `y′` is drawn from row
/// `y` of `rival` (any deficit `1 − Σ row` means no rival; rows above one are
/// rescaled), then every other label flips independently.
pub fn oracle_candidate_distribution(rival: &RivalMatrix, rates: &FlipRates) -> Result<Array2<f64>> {
    let c = rates.classes();
    oracle_guard(c, ORACLE_GUARD)?;
    if rival.classes() != c {
        return Err(Error::DimensionMismatch {
            expected: format!("{c} classes"),
            actual: rival.classes().to_string(),
        });
    }
    let p = rates.as_slice();
    let mut out = Array2::zeros((1usize << c, c));
    for y in 0..c {
        let others: Vec<usize> = (0..c).filter(|&b| b != y).collect();
        for (rival_label, w) in rival_outcomes(rival.row(y)) {
            for outcome in 0u64..(1 << others.len()) {
                let mut prob = w;
                let mut mask = 1u64 << y;
                for (bit, &b) in others.iter().enumerate() {
                    if outcome >> bit & 1 == 1 {
                        prob *= p[b];
                        mask |= 1 << b;
                    } else {
                        prob *= 1.0 - p[b];
                    }
                }
                if let Some(r) = rival_label {
                    mask |= 1 << r;
                }
                out[[mask as usize, y]] += prob;
            }
        }
    }
    Ok(out)
}

/// `(rival or none, probability)` pairs for one row of `T̄`.
fn rival_outcomes(row: ArrayView1<'_, f64>) -> Vec<(Option<usize>, f64)> {
    let sum: f64 = row.sum();
    let scale = if sum > 1.0 { 1.0 / sum } else { 1.0 };
    let mut out: Vec<(Option<usize>, f64)> = row
        .iter()
        .enumerate()
        .filter(|&(_, &w)| w > 0.0)
        .map(|(r, &w)| (Some(r), w * scale))
        .collect();
    if sum < 1.0 {
        out.push((None, 1.0 - sum));
    }
    out
}

/// Compares [`enumerate_q_bar`] with [`oracle_q_bar`] on `c ∈ {3,4,5}` and
/// `q ∈ {0.1, 0.3, 0.5}`.
pub fn oracle_suite() -> Result<ConsistencyReport> {
    let mut report = ConsistencyReport::new("oracle");
    for c in [3, 4, 5] {
        for q in [0.1, 0.3, 0.5] {
            let rates = FlipRates::uniform(c, q)?;
            let fast = enumerate_q_bar(&rates)?;
            let slow = oracle_q_bar(&rates)?;
            let mut diff = slow.row(0).iter().map(|v| v.abs()).fold(0.0, f64::max);
            for (j, row) in fast.outer_iter().enumerate() {
                for (a, b) in row.iter().zip(slow.row(j + 1)) {
                    diff = diff.max((a - b).abs());
                }
            }
            let col = fast.sum_axis(Axis(0)).iter().map(|s| (s - 1.0).abs()).fold(0.0, f64::max);
            report.record(CheckOutcome::at_most(format!("q_bar_equality c={c} q={q}"), diff, 1e-12))?;
            report.record(CheckOutcome::at_most(format!("q_bar_column_sums c={c} q={q}"), col, 1e-9))?;
        }
    }
    report.finalize();
    Ok(report)
}

/// Instances and classifier outputs with known true posteriors.
#[derive(Debug, Clone, PartialEq)]
pub struct RiskGrid {
    pub posteriors: Array2<f64>,
    pub outputs: Array2<f64>,
}

impl RiskGrid {
    pub fn new(posteriors: Array2<f64>, outputs: Array2<f64>) -> Result<Self> {
        if posteriors.dim() != outputs.dim() {
            return Err(Error::DimensionMismatch {
                expected: format!("{:?}", posteriors.dim()),
                actual: format!("{:?}", outputs.dim()),
            });
        }
        for (name, m) in [("posteriors", &posteriors), ("outputs", &outputs)] {
            for row in m.outer_iter() {
                if row.iter().any(|&v| !(v >= 0.0)) || (row.sum() - 1.0).abs() > 1e-9 {
                    return Err(Error::arg(name, "rows must lie on the simplex"));
                }
            }
        }
        Ok(RiskGrid { posteriors, outputs })
    }

    /// A square lattice of `per_axis²` points over the first two coordinates
    /// (`[−extent, extent]`, remaining coordinates zero), with the exact
    /// mixture posterior and the output of a fixed random linear-softmax
    /// classifier keyed by `seed`.
    pub fn mixture_lattice(spec: &GaussianMixtureSpec, per_axis: usize, extent: f64, seed: u64) -> Result<Self> {
        if per_axis < 2 {
            return Err(Error::arg("per_axis", "need at least two points per axis"));
        }
        let (c, d) = (spec.classes(), spec.dim());
        let mut rng = rng::stream(seed, Domain::Verify, 0, 0);
        let weights = Array2::from_shape_simple_fn((c, d), || rng.sample::<f64, _>(StandardNormal));
        let bias = Array1::from_shape_simple_fn(c, || rng.sample::<f64, _>(StandardNormal));
        let axes = if d >= 2 { 2 } else { 1 };
        let points = per_axis.pow(axes as u32);
        let mut posteriors = Array2::zeros((points, c));
        let mut outputs = Array2::zeros((points, c));
        for k in 0..points {
            let mut x = Array1::zeros(d);
            let mut rest = k;
            for a in 0..axes {
                let step = rest % per_axis;
                rest /= per_axis;
                x[a] = -extent + 2.0 * extent * step as f64 / (per_axis - 1) as f64;
            }
            posteriors.row_mut(k).assign(&spec.posterior(x.view()));
            outputs.row_mut(k).assign(&crate::nn::softmax((weights.dot(&x) + &bias).view()));
        }
        RiskGrid::new(posteriors, outputs)
    }

    pub fn len(&self) -> usize {
        self.posteriors.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// `(R̂, R)` at one point. `R̂` takes the expectation of the corrected loss
/// over `y ~ P(Y|x)`, the rival and every flip outcome, with the target set
/// to the one-hot restricted argmax of `f` over the drawn set.
fn pointwise_risks(posterior: ArrayView1<'_, f64>, f: ArrayView1<'_, f64>, rival: &RivalMatrix, rates: &[f64], m: &AdversaryAwareMatrix) -> Result<(f64, f64)> {
    let c = posterior.len();
    let logits = f.mapv(|v| v.max(f64::MIN_POSITIVE).ln());
    let mut corrected = 0.0;
    let mut clean = 0.0;
    for y in 0..c {
        let py = posterior[y];
        if py == 0.0 {
            continue;
        }
        clean -= py * f[y].max(crate::nn::NUMERIC_FLOOR).ln();
        let others: Vec<usize> = (0..c).filter(|&b| b != y).collect();
        for (rival_label, w) in rival_outcomes(rival.row(y)) {
            for outcome in 0u64..(1 << others.len()) {
                let mut prob = py * w;
                let mut set = CandidateSet::singleton(y);
                for (bit, &b) in others.iter().enumerate() {
                    if outcome >> bit & 1 == 1 {
                        prob *= rates[b];
                        set.insert(b);
                    } else {
                        prob *= 1.0 - rates[b];
                    }
                }
                if prob == 0.0 {
                    continue;
                }
                if let Some(r) = rival_label {
                    set.insert(r);
                }
                let target_label = predict_label(f, set)?;
                let mut target = Array1::zeros(c);
                target[target_label] = 1.0;
                let (loss, _) = adversary_aware_ce(logits.view(), target.view(), m);
                corrected += prob * loss;
            }
        }
    }
    Ok((corrected, clean))
}

/// Exact `|R̂ − R|` at every grid point. With `tolerance = None` the maximum
/// deviation is reported without a verdict.
pub fn risk_consistency_check(rival: &RivalMatrix, rates: &FlipRates, grid: &RiskGrid, tolerance: Option<f64>) -> Result<ConsistencyReport> {
    let c = rates.classes();
    oracle_guard(c, RISK_GUARD)?;
    if rival.classes() != c || grid.posteriors.ncols() != c {
        return Err(Error::DimensionMismatch {
            expected: format!("{c} classes"),
            actual: format!("rival {} and grid {}", rival.classes(), grid.posteriors.ncols()),
        });
    }
    let m = rival.adversary_aware();
    let mut report = ConsistencyReport::new("risk");
    report.ranks = Some(RankDiagnostics {
        classes: c,
        q_star_rank: None,
        adversary_aware_rank: m.rank(STRUCTURAL_TOL),
    });
    let mut deviations = Vec::with_capacity(grid.len());
    for (post, f) in grid.posteriors.outer_iter().zip(grid.outputs.outer_iter()) {
        let (r_hat, r) = pointwise_risks(post, f, rival, rates.as_slice(), &m)?;
        deviations.push((r_hat - r).abs());
    }
    let max = deviations.iter().copied().fold(0.0, f64::max);
    report.point_deviations = deviations;
    report.max_risk_deviation = Some(max);
    let name = format!("max_risk_deviation c={c} q={}", rates.as_slice().iter().copied().fold(0.0, f64::max));
    report.record(match tolerance {
        Some(t) => CheckOutcome::at_most(name, max, t),
        None => CheckOutcome::info(name, max),
    })?;
    report.finalize();
    Ok(report)
}

/// Clean regime (asserted to 1e-12), a noisy regime (reported), and the
/// noisy regime recomputed to confirm it is reproducible.
pub fn risk_suite(seed: u64) -> Result<ConsistencyReport> {
    let spec = GaussianMixtureSpec::benchmark(3, 2, 2.0, seed)?;
    let grid = RiskGrid::mixture_lattice(&spec, 9, 4.0, seed)?;
    let clean = risk_consistency_check(&fixtures::zero_rival(3), &FlipRates::uniform(3, 0.0)?, &grid, Some(1e-12))?;
    let rival = RivalMatrix::uniform(3)?;
    let rates = FlipRates::uniform(3, 0.3)?;
    let noisy = risk_consistency_check(&rival, &rates, &grid, None)?;
    let again = risk_consistency_check(&rival, &rates, &RiskGrid::mixture_lattice(&spec, 9, 4.0, seed)?, None)?;
    let drift = noisy
        .point_deviations
        .iter()
        .zip(&again.point_deviations)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);

    let mut report = ConsistencyReport::new("risk");
    report.record(CheckOutcome::at_most("clean_regime_deviation", clean.max_risk_deviation.unwrap_or(f64::NAN), 1e-12))?;
    report.record(CheckOutcome::info("noisy_regime_deviation c=3 q=0.3", noisy.max_risk_deviation.unwrap_or(f64::NAN)))?;
    report.record(CheckOutcome::at_most("noisy_regime_rerun_drift", drift, 1e-12))?;
    report.max_risk_deviation = noisy.max_risk_deviation;
    report.point_deviations = noisy.point_deviations;
    report.finalize();
    Ok(report)
}

/// Which objective a gradient check differentiates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossTerm {
    Classification,
    Contrastive,
    Combined,
}

impl fmt::Display for LossTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossTerm::Classification => "classification",
            LossTerm::Contrastive => "contrastive",
            LossTerm::Combined => "combined",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientCheckConfig {
    pub classes: usize,
    pub input_dim: usize,
    pub hidden: usize,
    pub embedding_dim: usize,
    pub batch: usize,
    pub queue: usize,
    pub step: f64,
    pub lambda: f64,
    pub tau: Temperature,
}

impl Default for GradientCheckConfig {
    fn default() -> Self {
        GradientCheckConfig {
            classes: 3,
            input_dim: 5,
            hidden: 6,
            embedding_dim: 4,
            batch: 8,
            queue: 6,
            step: 1e-5,
            lambda: 0.5,
            tau: Temperature::DEFAULT,
        }
    }
}

struct GradInstance {
    params: NetworkParams,
    x: Array2<f64>,
    keys: Array2<f64>,
    queue: Array2<f64>,
    predictions: Vec<usize>,
    queue_labels: Vec<usize>,
    targets: Array2<f64>,
    m: AdversaryAwareMatrix,
}

fn random_unit_rows(rng: &mut impl Rng, rows: usize, dim: usize) -> Array2<f64> {
    let mut m = Array2::from_shape_simple_fn((rows, dim), || rng.sample::<f64, _>(StandardNormal));
    for mut row in m.outer_iter_mut() {
        let n = row.dot(&row).sqrt();
        row /= n;
    }
    m
}

fn grad_instance(cfg: &GradientCheckConfig, seed: u64, index: u64) -> Result<GradInstance> {
    let arch = Architecture {
        input_dim: cfg.input_dim,
        encoder_widths: vec![cfg.hidden],
        projection_hidden: cfg.hidden,
        embedding_dim: cfg.embedding_dim,
        classes: cfg.classes,
    };
    let mut rng = rng::stream(seed, Domain::Verify, 1, index);
    let mut params = NetworkParams::init(&arch, rng.gen())?;
    // nonzero biases keep every embedding away from the origin
    for (name, _, _) in arch.tensor_shapes().iter().filter(|(n, _, _)| n.ends_with("bias")) {
        let t = arch.tensor_shapes().iter().position(|(n, _, _)| n == name).expect("listed");
        params.tensors_mut()[t].mapv_inplace(|_| rng.gen_range(0.05..0.5));
    }
    let key_net = NetworkParams::init(&arch, rng.gen())?;
    let x = Array2::from_shape_simple_fn((cfg.batch, cfg.input_dim), || rng.sample::<f64, _>(StandardNormal));
    let keys = key_net.forward_batch(x.view())?.unit;
    let queue = random_unit_rows(&mut rng, cfg.queue, cfg.embedding_dim);
    let predictions = (0..cfg.batch).map(|_| rng.gen_range(0..cfg.classes)).collect();
    let queue_labels = (0..cfg.queue).map(|_| rng.gen_range(0..cfg.classes)).collect();
    let mut targets = Array2::from_shape_simple_fn((cfg.batch, cfg.classes), || rng.gen::<f64>() + 0.05);
    for mut row in targets.outer_iter_mut() {
        let s = row.sum();
        row /= s;
    }
    let m = RivalMatrix::uniform(cfg.classes)?.adversary_aware();
    Ok(GradInstance {
        params,
        x,
        keys,
        queue,
        predictions,
        queue_labels,
        targets,
        m,
    })
}

fn evaluate(inst: &GradInstance, params: &NetworkParams, term: LossTerm, cfg: &GradientCheckConfig) -> Result<(f64, NetworkParams)> {
    let cache = params.forward_batch(inst.x.view())?;
    let b = cfg.batch;
    let inputs = ContrastiveInputs {
        queries: cache.unit.view(),
        keys: inst.keys.view(),
        queue: inst.queue.view(),
        predictions: &inst.predictions,
        queue_labels: &inst.queue_labels,
    };
    match term {
        LossTerm::Classification => {
            let (bd, g) = combined_loss(cache.logits.view(), inst.targets.view(), &inst.m, None, cfg.lambda, cfg.tau)?;
            let grads = params.backward(&cache, g.d_logits.view(), Array2::zeros((b, cfg.embedding_dim)).view())?;
            Ok((bd.classification, grads))
        }
        LossTerm::Contrastive => {
            let batch = batch_contrastive(&inputs, cfg.tau)?;
            let grads = params.backward(&cache, Array2::zeros((b, cfg.classes)).view(), batch.d_queries.view())?;
            Ok((batch.value, grads))
        }
        LossTerm::Combined => {
            let (bd, g) = combined_loss(cache.logits.view(), inst.targets.view(), &inst.m, Some(&inputs), cfg.lambda, cfg.tau)?;
            let d_unit = g.d_unit.expect("contrastive inputs supplied");
            let grads = params.backward(&cache, g.d_logits.view(), d_unit.view())?;
            Ok((bd.combined, grads))
        }
    }
}

/// `‖a − n‖₂ / max(‖a‖₂, ‖n‖₂)` between the analytic gradient over every
/// network parameter and its central-difference estimate.
pub fn gradient_check(cfg: &GradientCheckConfig, term: LossTerm, seed: u64, index: u64) -> Result<f64> {
    let inst = grad_instance(cfg, seed, index)?;
    let (_, analytic) = evaluate(&inst, &inst.params, term, cfg)?;
    let h = cfg.step;
    let mut probe = inst.params.clone();
    let mut diff_sq = 0.0;
    let mut analytic_sq = 0.0;
    let mut numeric_sq = 0.0;
    for t in 0..probe.tensors().len() {
        for idx in 0..probe.tensors()[t].len() {
            let (r, c) = (idx / probe.tensors()[t].ncols(), idx % probe.tensors()[t].ncols());
            let original = probe.tensors()[t][[r, c]];
            probe.tensors_mut()[t][[r, c]] = original + h;
            let (plus, _) = evaluate(&inst, &probe, term, cfg)?;
            probe.tensors_mut()[t][[r, c]] = original - h;
            let (minus, _) = evaluate(&inst, &probe, term, cfg)?;
            probe.tensors_mut()[t][[r, c]] = original;
            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic.tensors()[t][[r, c]];
            diff_sq += (a - numeric).powi(2);
            analytic_sq += a * a;
            numeric_sq += numeric * numeric;
        }
    }
    let scale = analytic_sq.sqrt().max(numeric_sq.sqrt());
    if scale == 0.0 {
        return Ok(0.0);
    }
    Ok(diff_sq.sqrt() / scale)
}

/// Worst relative error of each loss term over `instances` random instances.
pub fn gradient_suite(cfg: &GradientCheckConfig, instances: usize, seed: u64, tolerance: f64) -> Result<ConsistencyReport> {
    let mut report = ConsistencyReport::new("gradient");
    for term in [LossTerm::Classification, LossTerm::Contrastive, LossTerm::Combined] {
        let mut worst: f64 = 0.0;
        for index in 0..instances as u64 {
            let err = gradient_check(cfg, term, seed, index)?;
            worst = if err.is_nan() { f64::NAN } else { worst.max(err) };
        }
        report.record(CheckOutcome::at_most(format!("{term}_relative_error"), worst, tolerance))?;
    }
    report.finalize();
    Ok(report)
}

/// One configuration of the posterior-recovery sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub classes: usize,
    pub base_rate: f64,
    pub support: usize,
    pub q_star_rank: usize,
    pub full_rank: bool,
    /// `None` for rank-deficient configurations, which are not solved.
    pub max_residual: Option<f64>,
    pub max_tv: Option<f64>,
}

/// Forward-synthesizes `Q* p` for `trials` random simplex points and recovers
/// `p`. Returns `(rank, max residual, max TV)`; the last two are `None` when
/// `Q*` lacks full column rank.
pub fn sweep_configuration(q_star: ArrayView2<'_, f64>, trials: usize, seed: u64) -> Result<(usize, Option<f64>, Option<f64>)> {
    let c = q_star.ncols();
    let rank = numerical_rank(q_star, STRUCTURAL_TOL);
    if rank < c {
        return Ok((rank, None, None));
    }
    let mut rng = rng::stream(seed, Domain::Verify, 2, 0);
    let mut max_residual: f64 = 0.0;
    let mut max_tv: f64 = 0.0;
    for _ in 0..trials {
        let mut p = Array1::from_shape_simple_fn(c, || -rng.gen::<f64>().max(f64::MIN_POSITIVE).ln());
        let s = p.sum();
        p /= s;
        let observed = q_star.dot(&p);
        let recovered = recover_posterior(q_star, observed.view())?;
        max_residual = max_residual.max(recovered.residual);
        max_tv = max_tv.max(total_variation(recovered.posterior.view(), p.view()));
    }
    Ok((rank, Some(max_residual), Some(max_tv)))
}

/// Every cyclic preset `T̄(k, 1/k)`, `k = 1..c−1`, for each `c` and `q`.
pub fn recovery_residual_sweep(classes: &[usize], rates: &[f64], trials: usize, seed: u64) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::new();
    for &c in classes {
        oracle_guard(c, RISK_GUARD)?;
        for &q in rates {
            let flip = FlipRates::uniform(c, q)?;
            for k in 1..c {
                let rival = RivalMatrix::build(c, k, 1.0 / k as f64)?;
                let q_star = enumerate_q_star(&rival, &flip, None)?;
                let (rank, residual, tv) = sweep_configuration(q_star.view(), trials, seed)?;
                rows.push(SweepRow {
                    classes: c,
                    base_rate: q,
                    support: k,
                    q_star_rank: rank,
                    full_rank: rank == c,
                    max_residual: residual,
                    max_tv: tv,
                });
            }
        }
    }
    Ok(rows)
}

pub fn write_sweep_csv(rows: &[SweepRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["classes", "q", "support", "q_star_rank", "full_rank", "max_residual", "max_tv"])?;
    let opt = |v: Option<f64>| v.map_or_else(String::new, |v| format!("{v:?}"));
    for r in rows {
        w.write_record([
            r.classes.to_string(),
            format!("{:?}", r.base_rate),
            r.support.to_string(),
            r.q_star_rank.to_string(),
            r.full_rank.to_string(),
            opt(r.max_residual),
            opt(r.max_tv),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn recovery_suite(seed: u64) -> Result<(ConsistencyReport, Vec<SweepRow>)> {
    let rows = recovery_residual_sweep(&[3, 4, 5], &[0.1, 0.3, 0.5], 20, seed)?;
    let tv = rows.iter().filter_map(|r| r.max_tv).fold(0.0, f64::max);
    let flagged = rows.iter().filter(|r| !r.full_rank).count();
    let mut report = ConsistencyReport::new("recovery");
    report.record(CheckOutcome::at_most("max_tv_full_rank", tv, RECOVERY_TOL))?;
    report.record(CheckOutcome::info("rank_deficient_configurations", flagged as f64))?;
    report.posterior_tv = Some(tv);
    report.finalize();
    Ok((report, rows))
}

/// Positive set by filtering an explicitly materialized pool.
fn brute_force_positives(query: usize, predictions: &[usize], queue_labels: &[usize]) -> Vec<PoolEntry> {
    let mut pool: Vec<(PoolEntry, usize)> = Vec::new();
    for (j, &p) in predictions.iter().enumerate() {
        pool.push((PoolEntry::Query(j), p));
    }
    for (j, &p) in predictions.iter().enumerate() {
        pool.push((PoolEntry::Key(j), p));
    }
    for (j, &p) in queue_labels.iter().enumerate() {
        pool.push((PoolEntry::Queue(j), p));
    }
    pool.into_iter()
        .filter(|&(e, label)| e != PoolEntry::Query(query) && label == predictions[query])
        .map(|(e, _)| e)
        .collect()
}

/// Random prototype updates, pseudo-label updates and positive-set cases.
pub fn atm_suite(updates: usize, cases: usize, seed: u64) -> Result<ConsistencyReport> {
    let (c, d) = (10, 16);
    let mut bank = PrototypeBank::random(c, d, seed)?;
    let mut store = PseudoLabelStore::uniform(32, c, 0.9)?;
    let mut rng = rng::stream(seed, Domain::Verify, 3, 0);
    let mut norm_err: f64 = 0.0;
    let mut margin_err: f64 = 0.0;
    let mut cache_err: f64 = 0.0;
    let mut simplex_err: f64 = 0.0;
    for _ in 0..updates {
        let u = random_unit_rows(&mut rng, 1, d);
        let class = rng.gen_range(0..c);
        let alpha = rng.gen_range(0.01..0.99);
        let beta = rng.gen_range(0.0..0.1);
        bank.update(u.row(0), class, alpha, beta)?;
        for v in bank.prototypes().outer_iter() {
            norm_err = norm_err.max((v.dot(&v).sqrt() - 1.0).abs());
        }
        let margins = bank.margins();
        for (i, row) in margins.outer_iter().enumerate() {
            let off: f64 = row.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, v)| v).sum();
            margin_err = margin_err.max((off - 1.0).abs());
            if row.iter().any(|&v| v < 0.0) {
                margin_err = f64::INFINITY;
            }
        }
        let fresh = compute_margins(bank.prototypes());
        cache_err = cache_err.max((&fresh - &margins).iter().map(|v| v.abs()).fold(0.0, f64::max));

        let i = rng.gen_range(0..32);
        let set = CandidateSet::from_mask(rng.gen_range(1..1u64 << c));
        store.update(i, u.row(0), &bank, set)?;
        let row = store.row(i);
        simplex_err = simplex_err.max((row.sum() - 1.0).abs());
        if row.iter().any(|&v| v < 0.0) {
            simplex_err = f64::INFINITY;
        }
    }
    let mut mismatches = 0usize;
    for _ in 0..cases {
        let batch = rng.gen_range(1..=8);
        let queue = rng.gen_range(0..=6);
        let labels = rng.gen_range(1..=4);
        let predictions: Vec<usize> = (0..batch).map(|_| rng.gen_range(0..labels)).collect();
        let queue_labels: Vec<usize> = (0..queue).map(|_| rng.gen_range(0..labels)).collect();
        for query in 0..batch {
            let fast = build_positive_set(query, &predictions, &queue_labels);
            let mut got = fast.members.clone();
            let mut want = brute_force_positives(query, &predictions, &queue_labels);
            got.sort();
            want.sort();
            mismatches += usize::from(got != want || fast.query != query);
        }
    }
    let mut report = ConsistencyReport::new("atm");
    report.record(CheckOutcome::at_most("prototype_unit_norm", norm_err, 1e-9))?;
    report.record(CheckOutcome::at_most("margin_row_sums", margin_err, 1e-9))?;
    report.record(CheckOutcome::at_most("margin_cache_fresh", cache_err, 1e-12))?;
    report.record(CheckOutcome::at_most("pseudo_label_simplex", simplex_err, 1e-9))?;
    report.record(CheckOutcome::at_most("positive_set_mismatches", mismatches as f64, 0.0))?;
    report.finalize();
    Ok(report)
}

/// Optimization budget for the corrected-loss-only trainer.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingBudget {
    pub encoder_widths: Vec<usize>,
    pub epochs: usize,
    /// Small datasets get extra epochs until they see this many batches.
    pub min_steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Pseudo-label moving-average momentum.
    pub phi: f64,
}

impl TrainingBudget {
    pub fn epochs_for(&self, n: usize) -> usize {
        let batches = n.div_ceil(self.batch_size.max(1)).max(1);
        self.epochs.max(self.min_steps.div_ceil(batches))
    }
}

impl Default for TrainingBudget {
    fn default() -> Self {
        TrainingBudget {
            encoder_widths: vec![32, 32],
            epochs: 30,
            min_steps: 4000,
            batch_size: 64,
            learning_rate: 0.05,
            momentum: 0.9,
            weight_decay: 1e-4,
            phi: 0.99,
        }
    }
}

/// Trains the classifier on the corrected loss alone. Targets start uniform
/// over each candidate set and move toward the restricted argmax of the
/// classifier output.
pub fn fit_corrected(ds: &PllDataset, m: &AdversaryAwareMatrix, budget: &TrainingBudget, seed: u64) -> Result<NetworkParams> {
    let c = ds.classes();
    let arch = Architecture {
        input_dim: ds.clean().dim(),
        encoder_widths: budget.encoder_widths.clone(),
        projection_hidden: 2,
        embedding_dim: 2,
        classes: c,
    };
    let mut params = NetworkParams::init(&arch, seed)?;
    let epochs = budget.epochs_for(ds.len());
    let mut opt = OptimizerState::new(&params, budget.learning_rate, budget.momentum, budget.weight_decay, epochs);
    let mut targets = PseudoLabelStore::candidate_uniform(ds.candidates(), c, budget.phi)?;
    let features = ds.clean().features();
    let mut last_finite = None;
    for epoch in 0..epochs {
        let order = rng::epoch_order(ds.len(), seed, epoch as u64);
        for batch in order.chunks(budget.batch_size.max(1)) {
            let x = features.select(Axis(0), batch);
            let cache = params.forward_batch(x.view())?;
            for (row, &i) in batch.iter().enumerate() {
                let label = predict_label(cache.probs.row(row), ds.candidates()[i])?;
                targets.update_toward(i, label);
            }
            let t = targets.targets().select(Axis(0), batch);
            let (bd, g) = combined_loss(cache.logits.view(), t.view(), m, None, 0.0, Temperature::DEFAULT)?;
            if !bd.combined.is_finite() {
                return Err(Error::Diverged { epoch, last_finite });
            }
            let grads = params.backward(&cache, g.d_logits.view(), Array2::zeros((batch.len(), arch.embedding_dim)).view())?;
            opt.step(&mut params, &grads, epoch)?;
        }
        if !params.is_finite() {
            return Err(Error::Diverged { epoch, last_finite });
        }
        last_finite = Some(epoch);
    }
    Ok(params)
}

/// Held-out agreement of a trained classifier with the Bayes classifier.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LadderPoint {
    pub n: usize,
    pub seed: u64,
    pub bayes_match: f64,
    pub mean_tv: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LadderConfig {
    pub classes: usize,
    pub dim: usize,
    pub separation: f64,
    pub base_rate: f64,
    pub rival: RivalMatrix,
    pub sizes: Vec<usize>,
    pub seeds: Vec<u64>,
    pub test_size: usize,
    pub clean_size: usize,
    pub budget: TrainingBudget,
    /// Allowed drop in the seed-median Bayes match between ladder steps.
    pub monotone_tolerance: f64,
    pub clean_threshold: f64,
}

impl LadderConfig {
    pub fn standard(seed: u64) -> Result<Self> {
        Ok(LadderConfig {
            classes: 3,
            dim: 8,
            separation: 4.0,
            base_rate: 0.3,
            rival: RivalMatrix::uniform(3)?,
            sizes: vec![1000, 4000, 16000],
            seeds: (0..5).map(|k| seed.wrapping_add(k)).collect(),
            test_size: 2000,
            clean_size: 4000,
            budget: TrainingBudget::default(),
            monotone_tolerance: 0.01,
            clean_threshold: 0.99,
        })
    }
}

/// Trains on `n` samples generated with `rival` (or clean singletons when
/// `None`) and scores against the Bayes classifier on held-out points.
pub fn classifier_consistency_check(cfg: &LadderConfig, rival: Option<&RivalMatrix>, n: usize, seed: u64) -> Result<LadderPoint> {
    let spec = GaussianMixtureSpec::benchmark(cfg.classes, cfg.dim, cfg.separation, seed)?;
    let clean = spec.sample(n, 0)?;
    let (ds, m) = match rival {
        Some(r) => (
            generate_adversary_aware(&clean, r, &FlipProfile::exact(cfg.base_rate)?, seed)?,
            r.adversary_aware(),
        ),
        None => (
            generate_standard(&clean, &FlipProfile::exact(0.0)?, seed)?,
            AdversaryAwareMatrix::identity(cfg.classes),
        ),
    };
    let params = fit_corrected(&ds, &m, &cfg.budget, seed)?;
    let test = spec.sample(cfg.test_size, 1)?;
    let cache = params.forward_batch(test.features())?;
    let mut matches = 0usize;
    let mut tv = 0.0;
    for (i, f) in cache.probs.outer_iter().enumerate() {
        let x = test.feature(i);
        let posterior = spec.posterior(x);
        matches += usize::from(crate::atm::argmax(f) == crate::atm::argmax(posterior.view()));
        tv += total_variation(f, posterior.view());
    }
    Ok(LadderPoint {
        n,
        seed,
        bayes_match: matches as f64 / cfg.test_size as f64,
        mean_tv: tv / cfg.test_size as f64,
    })
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let k = v.len();
    if k == 0 {
        f64::NAN
    } else if k % 2 == 1 {
        v[k / 2]
    } else {
        0.5 * (v[k / 2 - 1] + v[k / 2])
    }
}

/// Seed-median Bayes match and TV along the sample-size ladder, plus the
/// clean regime. The rank of `T̄ + I` is checked before any training.
pub fn classifier_consistency_ladder(cfg: &LadderConfig) -> Result<(ConsistencyReport, Vec<LadderPoint>)> {
    let m = cfg.rival.adversary_aware();
    let mut report = ConsistencyReport::new("classifier");
    let rank = m.rank(STRUCTURAL_TOL);
    report.ranks = Some(RankDiagnostics {
        classes: cfg.classes,
        q_star_rank: None,
        adversary_aware_rank: rank,
    });
    report.record(CheckOutcome::at_least("adversary_aware_rank", rank as f64, cfg.classes as f64))?;
    if rank < cfg.classes {
        report.finalize();
        return Ok((report, Vec::new()));
    }
    let mut points = Vec::new();
    let mut match_medians = Vec::new();
    let mut tv_medians = Vec::new();
    for &n in &cfg.sizes {
        let mut row = Vec::new();
        for &seed in &cfg.seeds {
            row.push(classifier_consistency_check(cfg, Some(&cfg.rival), n, seed)?);
        }
        let bm = median(row.iter().map(|p| p.bayes_match).collect());
        let tv = median(row.iter().map(|p| p.mean_tv).collect());
        report.record(CheckOutcome::info(format!("bayes_match_median n={n}"), bm))?;
        report.record(CheckOutcome::info(format!("mean_tv_median n={n}"), tv))?;
        match_medians.push(bm);
        tv_medians.push(tv);
        points.extend(row);
    }
    let worst_drop = match_medians.windows(2).map(|w| w[0] - w[1]).fold(0.0, f64::max);
    let worst_rise = tv_medians.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
    report.record(CheckOutcome::at_most("bayes_match_drop", worst_drop, cfg.monotone_tolerance))?;
    report.record(CheckOutcome::at_most("mean_tv_rise", worst_rise, cfg.monotone_tolerance))?;

    let mut clean = Vec::new();
    for &seed in &cfg.seeds {
        let p = classifier_consistency_check(cfg, None, cfg.clean_size, seed)?;
        clean.push(p.bayes_match);
        points.push(p);
    }
    report.record(CheckOutcome::at_least("clean_bayes_match", median(clean), cfg.clean_threshold))?;
    report.finalize();
    Ok((report, points))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VerifyLevel {
    /// Oracles, gradient checks, recovery, risk probe and ATM invariants.
    Fast,
    /// Adds the classifier-consistency ladder.
    Full,
}

pub fn run_suites(level: VerifyLevel, seed: u64) -> Result<(Vec<ConsistencyReport>, Vec<SweepRow>)> {
    let mut reports = vec![oracle_suite()?];
    reports.push(gradient_suite(&GradientCheckConfig::default(), 20, seed, 1e-5)?);
    let (recovery, sweep) = recovery_suite(seed)?;
    reports.push(recovery);
    reports.push(risk_suite(seed)?);
    reports.push(atm_suite(10_000, 1_000, seed)?);
    if level == VerifyLevel::Full {
        reports.push(classifier_consistency_ladder(&LadderConfig::standard(seed)?)?.0);
    }
    Ok((reports, sweep))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn literal_fixtures_are_rejected_by_validation() {
        for m in [fixtures::literal_original(), fixtures::literal_new()] {
            assert!(RivalMatrix::new(m.entries().to_owned()).is_err());
            assert!(m.row(0)[0] == 0.0);
        }
        assert!((fixtures::literal_original().row(3).sum() - 0.8).abs() < 1e-12);
        assert!((fixtures::literal_new().row(3).sum() - 1.2).abs() < 1e-12);
        assert!(fixtures::relaxed_rival(array![[0.0, -1.0], [0.0, 0.0]]).is_err());
    }

    #[test]
    fn zero_rate_oracle_is_point_mass_on_singletons() {
        let q = oracle_q_bar(&FlipRates::uniform(3, 0.0).unwrap()).unwrap();
        for y in 0..3 {
            for mask in 0..8 {
                let want = if mask == 1 << y { 1.0 } else { 0.0 };
                assert_eq!(q[[mask, y]], want);
            }
        }
    }

    #[test]
    fn oracle_guard_applies() {
        assert!(matches!(
            oracle_q_bar(&FlipRates::uniform(7, 0.1).unwrap()),
            Err(Error::EnumerationGuard { guard: 6, .. })
        ));
    }

    #[test]
    fn candidate_distribution_columns_sum_to_one() {
        let d = oracle_candidate_distribution(&RivalMatrix::build(5, 2, 0.5).unwrap(), &FlipRates::uniform(5, 0.3).unwrap()).unwrap();
        for s in d.sum_axis(Axis(0)) {
            assert!((s - 1.0).abs() < 1e-12);
        }
        let deficit = oracle_candidate_distribution(&fixtures::literal_original(), &FlipRates::uniform(6, 0.1).unwrap()).unwrap();
        for s in deficit.sum_axis(Axis(0)) {
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn report_is_append_only_after_finalize() {
        let mut r = ConsistencyReport::new("x");
        r.record(CheckOutcome::at_most("a", 0.5, 1.0)).unwrap();
        r.finalize();
        assert!(r.record(CheckOutcome::info("b", 1.0)).is_err());
        assert_eq!(r.checks().len(), 1);
        assert!(r.passed());
        assert!(r.summary_lines()[0].starts_with("PASS x/a"));
        assert_eq!(CheckOutcome::at_most("nan", f64::NAN, 1.0).verdict, Verdict::Fail);
    }

    #[test]
    fn clean_regime_risk_matches_exactly() {
        let spec = GaussianMixtureSpec::benchmark(4, 2, 1.5, 3).unwrap();
        let grid = RiskGrid::mixture_lattice(&spec, 5, 3.0, 3).unwrap();
        let r = risk_consistency_check(&fixtures::zero_rival(4), &FlipRates::uniform(4, 0.0).unwrap(), &grid, Some(1e-12)).unwrap();
        assert!(r.passed(), "{:?}", r.summary_lines());
    }

    #[test]
    fn risk_deviation_is_pointwise() {
        let spec = GaussianMixtureSpec::benchmark(3, 2, 2.0, 1).unwrap();
        let coarse = RiskGrid::mixture_lattice(&spec, 3, 2.0, 1).unwrap();
        let fine = RiskGrid::mixture_lattice(&spec, 5, 2.0, 1).unwrap();
        let rival = RivalMatrix::uniform(3).unwrap();
        let rates = FlipRates::uniform(3, 0.3).unwrap();
        let a = risk_consistency_check(&rival, &rates, &coarse, None).unwrap();
        let b = risk_consistency_check(&rival, &rates, &fine, None).unwrap();
        // coarse (i, j) sits at fine (2i, 2j)
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(a.point_deviations[i + 3 * j], b.point_deviations[2 * i + 5 * 2 * j]);
            }
        }
    }

    #[test]
    fn rank_deficient_recovery_is_flagged() {
        let mut q = enumerate_q_star(&RivalMatrix::uniform(3).unwrap(), &FlipRates::uniform(3, 0.3).unwrap(), None).unwrap();
        let col = q.column(0).to_owned();
        q.column_mut(1).assign(&col);
        let (rank, residual, tv) = sweep_configuration(q.view(), 5, 0).unwrap();
        assert_eq!(rank, 2);
        assert!(residual.is_none() && tv.is_none());
    }

    #[test]
    fn sweep_flags_singular_presets() {
        let rows = recovery_residual_sweep(&[4], &[0.3], 3, 0).unwrap();
        let k2 = rows.iter().find(|r| r.support == 2).unwrap();
        assert!(!k2.full_rank);
        assert!(rows.iter().filter(|r| r.full_rank).all(|r| r.max_tv.unwrap() < RECOVERY_TOL));
        assert_eq!(rows, recovery_residual_sweep(&[4], &[0.3], 3, 0).unwrap());
    }

    #[test]
    fn singular_adversary_aware_matrix_stops_the_ladder() {
        let mut cfg = LadderConfig::standard(0).unwrap();
        cfg.classes = 4;
        cfg.rival = RivalMatrix::build(4, 1, 1.0).unwrap();
        let (report, points) = classifier_consistency_ladder(&cfg).unwrap();
        assert!(!report.passed());
        assert!(points.is_empty());
        assert_eq!(report.ranks.unwrap().adversary_aware_rank, 2);
    }

    #[test]
    fn gradient_check_on_one_instance() {
        let cfg = GradientCheckConfig::default();
        for term in [LossTerm::Classification, LossTerm::Contrastive, LossTerm::Combined] {
            let err = gradient_check(&cfg, term, 11, 0).unwrap();
            assert!(err < 1e-5, "{term}: {err}");
        }
    }

    #[test]
    fn brute_force_positive_filter_counts() {
        assert_eq!(brute_force_positives(0, &[1, 1, 1], &[]).len(), 5);
        assert_eq!(brute_force_positives(1, &[0, 1, 2], &[1]), vec![PoolEntry::Key(1), PoolEntry::Queue(0)]);
    }
}
