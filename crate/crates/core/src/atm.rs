//! Adversarial teacher within momentum: margin-regularized prototype updates,
//! pseudo-label moving averages, and positive-set construction over a queue.

use std::collections::VecDeque;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand_distr::{Distribution, StandardNormal};

use crate::candidate::CandidateSet;
use crate::error::{Error, Result};
use crate::nn::NUMERIC_FLOOR;
use crate::rng::{self, Domain};

/// Unit-norm tolerance for prototypes and queued keys.
pub const UNIT_TOL: f64 = 1e-9;

/// Index of the largest entry; ties go to the smallest index.
pub fn argmax(v: ArrayView1<'_, f64>) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Argmax restricted to the labels of `set`; ties go to the smallest label.
pub fn restricted_argmax(scores: ArrayView1<'_, f64>, set: CandidateSet) -> Option<usize> {
    let mut best: Option<usize> = None;
    for label in set.iter().filter(|&l| l < scores.len()) {
        if best.is_none_or(|b| scores[label] > scores[b]) {
            best = Some(label);
        }
    }
    best
}

/// Classifier prediction restricted to the candidate set.
pub fn predict_label(f: ArrayView1<'_, f64>, set: CandidateSet) -> Result<usize> {
    restricted_argmax(f, set).ok_or_else(|| Error::arg("candidate_set", "empty candidate set"))
}

/// `m̄_ij = exp(−v_i·v_j) / Σ_{k≠i} exp(−v_i·v_k)`, zero diagonal.
pub fn compute_margins(prototypes: ArrayView2<'_, f64>) -> Array2<f64> {
    let k = prototypes.nrows();
    let gram = prototypes.dot(&prototypes.t());
    let mut margins = Array2::zeros((k, k));
    for i in 0..k {
        let mut total = 0.0;
        for j in (0..k).filter(|&j| j != i) {
            let m = (-gram[[i, j]]).exp();
            margins[[i, j]] = m;
            total += m;
        }
        if total > 0.0 {
            margins.row_mut(i).mapv_inplace(|m| m / total);
        }
    }
    margins
}

fn normalized(v: ArrayView1<'_, f64>) -> Array1<f64> {
    let norm = v.dot(&v).sqrt().max(NUMERIC_FLOOR);
    v.mapv(|x| x / norm)
}

fn check_unit(v: ArrayView1<'_, f64>) -> Result<()> {
    let norm = v.dot(&v).sqrt();
    if (norm - 1.0).abs() > UNIT_TOL || !norm.is_finite() {
        return Err(Error::NotUnitNorm { norm });
    }
    Ok(())
}

/// One unit prototype per class plus the cached normalized margins.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeBank {
    prototypes: Array2<f64>,
    margins: Array2<f64>,
    skipped_updates: usize,
}

impl PrototypeBank {
    /// Random directions on the unit sphere.
    pub fn random(classes: usize, dim: usize, seed: u64) -> Result<Self> {
        if classes < 2 || dim == 0 {
            return Err(Error::arg("prototypes", "need at least two classes and one dimension"));
        }
        let mut rng = rng::stream(seed, Domain::Prototype, 0, 0);
        let raw = Array2::from_shape_simple_fn((classes, dim), || StandardNormal.sample(&mut rng));
        let mut protos = raw;
        for mut row in protos.outer_iter_mut() {
            let n = normalized(row.view());
            row.assign(&n);
        }
        Self::from_prototypes(protos)
    }

    /// Wraps unit-norm rows.
    pub fn from_prototypes(prototypes: Array2<f64>) -> Result<Self> {
        if prototypes.nrows() < 2 {
            return Err(Error::arg("prototypes", "need at least two prototypes"));
        }
        for row in prototypes.outer_iter() {
            check_unit(row)?;
        }
        let margins = compute_margins(prototypes.view());
        Ok(PrototypeBank {
            prototypes,
            margins,
            skipped_updates: 0,
        })
    }

    pub fn classes(&self) -> usize {
        self.prototypes.nrows()
    }

    pub fn dim(&self) -> usize {
        self.prototypes.ncols()
    }

    pub fn prototypes(&self) -> ArrayView2<'_, f64> {
        self.prototypes.view()
    }

    pub fn margins(&self) -> ArrayView2<'_, f64> {
        self.margins.view()
    }

    /// Updates skipped because the regularized direction vanished.
    pub fn skipped_updates(&self) -> usize {
        self.skipped_updates
    }

    /// `u·v_j` for every class.
    pub fn scores(&self, u: ArrayView1<'_, f64>) -> Array1<f64> {
        self.prototypes.dot(&u)
    }

    /// Prototype label of `u` restricted to the candidate set.
    pub fn restricted_label(&self, u: ArrayView1<'_, f64>, set: CandidateSet) -> Option<usize> {
        restricted_argmax(self.scores(u).view(), set)
    }

    /// `g = u − β Σ_{j≠i} m̄_ij v_j`, then
    /// `v_i ← √(1−α²) v_i + α g/‖g‖₂` re-projected onto the sphere.
    ///
    /// Returns `false` (and counts a skip) when `‖g‖₂ < 1e-12`.
    pub fn update(&mut self, u: ArrayView1<'_, f64>, class: usize, alpha: f64, beta: f64) -> Result<bool> {
        if !(0.0..1.0).contains(&alpha) {
            return Err(Error::arg("alpha", format!("{alpha} is outside [0, 1)")));
        }
        if class >= self.classes() {
            return Err(Error::arg("class", format!("{class} >= {}", self.classes())));
        }
        if u.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: format!("{}-dimensional embedding", self.dim()),
                actual: u.len().to_string(),
            });
        }
        check_unit(u)?;
        let mut g = u.to_owned();
        for j in (0..self.classes()).filter(|&j| j != class) {
            g.scaled_add(-beta * self.margins[[class, j]], &self.prototypes.row(j));
        }
        let g_norm = g.dot(&g).sqrt();
        if g_norm < NUMERIC_FLOOR {
            self.skipped_updates += 1;
            return Ok(false);
        }
        let mut v = self.prototypes.row(class).mapv(|x| x * (1.0 - alpha * alpha).sqrt());
        v.scaled_add(alpha / g_norm, &g);
        self.prototypes.row_mut(class).assign(&normalized(v.view()));
        self.margins = compute_margins(self.prototypes.view());
        Ok(true)
    }

    /// Fraction of instances whose restricted prototype label is the true label.
    pub fn accuracy(&self, embeddings: ArrayView2<'_, f64>, sets: &[CandidateSet], labels: &[usize]) -> f64 {
        if labels.is_empty() {
            return 0.0;
        }
        let hits = embeddings
            .outer_iter()
            .zip(sets)
            .zip(labels)
            .filter(|((u, &s), &y)| self.restricted_label(u.view(), s) == Some(y))
            .count();
        hits as f64 / labels.len() as f64
    }
}

/// Per-instance soft targets `q̄`, updated by a moving average.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabelStore {
    targets: Array2<f64>,
    pub momentum: f64,
}

impl PseudoLabelStore {
    /// Every row starts at the uniform distribution `1/c`.
    pub fn uniform(instances: usize, classes: usize, momentum: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&momentum) {
            return Err(Error::arg("phi", format!("{momentum} is outside [0, 1]")));
        }
        Ok(PseudoLabelStore {
            targets: Array2::from_elem((instances, classes), 1.0 / classes as f64),
            momentum,
        })
    }

    /// Row `i` starts uniform over the candidate set of instance `i`.
    pub fn candidate_uniform(sets: &[CandidateSet], classes: usize, momentum: f64) -> Result<Self> {
        let mut store = Self::uniform(sets.len(), classes, momentum)?;
        for (i, set) in sets.iter().enumerate() {
            if set.is_empty() || !set.fits(classes) {
                return Err(Error::arg("candidate_set", format!("instance {i} has set {set} outside {classes} classes")));
            }
            let mass = 1.0 / set.len() as f64;
            let mut row = store.targets.row_mut(i);
            row.fill(0.0);
            for b in set.iter() {
                row[b] = mass;
            }
        }
        Ok(store)
    }

    pub fn from_targets(targets: Array2<f64>, momentum: f64) -> Result<Self> {
        for (i, row) in targets.outer_iter().enumerate() {
            if row.iter().any(|&v| v < 0.0) || (row.sum() - 1.0).abs() > UNIT_TOL {
                return Err(Error::arg("pseudo labels", format!("row {i} is not on the simplex")));
            }
        }
        Ok(PseudoLabelStore { targets, momentum })
    }

    pub fn targets(&self) -> ArrayView2<'_, f64> {
        self.targets.view()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.targets.row(i)
    }

    /// `q̄_i ← φ q̄_i + (1 − φ) e_label`.
    pub fn update_toward(&mut self, i: usize, label: usize) {
        let phi = self.momentum;
        let mut row = self.targets.row_mut(i);
        row.mapv_inplace(|v| phi * v);
        row[label] += 1.0 - phi;
    }

    /// Moves `q̄_i` toward the one-hot prototype label of `u` within the
    /// candidate set. Returns the label.
    pub fn update(&mut self, i: usize, u: ArrayView1<'_, f64>, bank: &PrototypeBank, set: CandidateSet) -> Result<usize> {
        let label = bank
            .restricted_label(u, set)
            .ok_or_else(|| Error::arg("candidate_set", format!("instance {i} has an empty candidate set")))?;
        self.update_toward(i, label);
        Ok(label)
    }
}

/// Fixed-capacity FIFO of `(key embedding, predicted label)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingQueue {
    capacity: usize,
    entries: VecDeque<(Array1<f64>, usize)>,
}

impl EmbeddingQueue {
    pub fn new(capacity: usize) -> Self {
        EmbeddingQueue {
            capacity,
            entries: VecDeque::with_capacity(capacity),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Appends in order, evicting the oldest entries beyond capacity. The
    /// whole batch is rejected if any key is not unit norm.
    pub fn push(&mut self, keys: ArrayView2<'_, f64>, labels: &[usize]) -> Result<()> {
        if keys.nrows() != labels.len() {
            return Err(Error::DimensionMismatch {
                expected: format!("{} labels", keys.nrows()),
                actual: labels.len().to_string(),
            });
        }
        for k in keys.outer_iter() {
            check_unit(k)?;
        }
        for (k, &l) in keys.outer_iter().zip(labels) {
            if self.capacity == 0 {
                break;
            }
            if self.entries.len() == self.capacity {
                self.entries.pop_front();
            }
            self.entries.push_back((k.to_owned(), l));
        }
        Ok(())
    }

    /// Oldest first.
    pub fn iter(&self) -> impl Iterator<Item = (ArrayView1<'_, f64>, usize)> {
        self.entries.iter().map(|(k, l)| (k.view(), *l))
    }

    pub fn labels(&self) -> Vec<usize> {
        self.entries.iter().map(|(_, l)| *l).collect()
    }

    /// Keys stacked oldest first, `len × dim`.
    pub fn embeddings(&self, dim: usize) -> Array2<f64> {
        let mut out = Array2::zeros((self.len(), dim));
        for (mut row, (k, _)) in out.outer_iter_mut().zip(&self.entries) {
            row.assign(k);
        }
        out
    }
}

/// Where a pool embedding came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PoolEntry {
    /// Query-view embedding of batch instance `j`.
    Query(usize),
    /// Key-view embedding of batch instance `j`.
    Key(usize),
    /// Queue slot `j`, oldest first.
    Queue(usize),
}

/// Flat layout of the pool `D_q ∪ D_k ∪ queue`: batch queries, then batch
/// keys, then the queue.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoolLayout {
    pub batch: usize,
    pub queue: usize,
}

impl PoolLayout {
    pub fn len(&self) -> usize {
        2 * self.batch + self.queue
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn position(&self, entry: PoolEntry) -> usize {
        match entry {
            PoolEntry::Query(j) => j,
            PoolEntry::Key(j) => self.batch + j,
            PoolEntry::Queue(j) => 2 * self.batch + j,
        }
    }

    pub fn entry(&self, position: usize) -> PoolEntry {
        if position < self.batch {
            PoolEntry::Query(position)
        } else if position < 2 * self.batch {
            PoolEntry::Key(position - self.batch)
        } else {
            PoolEntry::Queue(position - 2 * self.batch)
        }
    }
}

/// Pool members sharing the query's predicted label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PositiveSet {
    pub query: usize,
    pub members: Vec<PoolEntry>,
}

impl PositiveSet {
    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }
}

/// `N₊(x_i)`: entries of `D_q ∪ D_k ∪ queue`, minus the query itself, whose
/// predicted label equals the query's. Batch keys inherit the prediction of
/// their instance; queue entries keep the label frozen at insertion.
pub fn build_positive_set(query: usize, batch_predictions: &[usize], queue_labels: &[usize]) -> PositiveSet {
    let target = batch_predictions[query];
    let mut members = Vec::new();
    members.extend(
        batch_predictions
            .iter()
            .enumerate()
            .filter(|&(j, &p)| j != query && p == target)
            .map(|(j, _)| PoolEntry::Query(j)),
    );
    members.extend(
        batch_predictions
            .iter()
            .enumerate()
            .filter(|&(_, &p)| p == target)
            .map(|(j, _)| PoolEntry::Key(j)),
    );
    members.extend(
        queue_labels
            .iter()
            .enumerate()
            .filter(|&(_, &p)| p == target)
            .map(|(j, _)| PoolEntry::Queue(j)),
    );
    PositiveSet { query, members }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn two_prototypes_have_unit_margin() {
        let m = compute_margins(array![[1.0, 0.0], [0.0, 1.0]].view());
        assert_eq!(m, array![[0.0, 1.0], [1.0, 0.0]]);
    }

    #[test]
    fn orthonormal_prototypes_split_margin_evenly() {
        let m = compute_margins(Array2::<f64>::eye(3).view());
        for i in 0..3 {
            for j in 0..3 {
                let expected = if i == j { 0.0 } else { 0.5 };
                assert!((m[[i, j]] - expected).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn margins_from_aligned_and_opposite_prototypes() {
        let v = array![[1.0, 0.0], [1.0, 0.0], [-1.0, 0.0]];
        let m = compute_margins(v.view());
        let expected = (-1.0f64).exp() / ((-1.0f64).exp() + 1.0f64.exp());
        assert!((m[[0, 1]] - expected).abs() < 1e-15);
        assert!((expected - 0.1192).abs() < 1e-4);
    }

    #[test]
    fn tiny_alpha_keeps_prototype() {
        let mut bank = PrototypeBank::from_prototypes(Array2::eye(3)).unwrap();
        bank.update(array![0.0, 1.0, 0.0].view(), 0, 0.0, 0.01).unwrap();
        assert_eq!(bank.prototypes().row(0), array![1.0, 0.0, 0.0]);
    }

    #[test]
    fn collinear_update_without_regularization_is_fixed_point() {
        let mut bank = PrototypeBank::random(4, 5, 3).unwrap();
        let v = bank.prototypes().row(2).to_owned();
        bank.update(v.view(), 2, 0.1, 0.0).unwrap();
        for (a, b) in bank.prototypes().row(2).iter().zip(v.iter()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn vanishing_direction_is_skipped() {
        // u equals β times the margin-weighted neighbour, so g = 0.
        let mut bank = PrototypeBank::from_prototypes(array![[1.0, 0.0], [0.0, 1.0]]).unwrap();
        let changed = bank.update(array![0.0, 1.0].view(), 0, 0.1, 1.0).unwrap();
        assert!(!changed);
        assert_eq!(bank.skipped_updates(), 1);
    }

    #[test]
    fn update_rejects_bad_input() {
        let mut bank = PrototypeBank::random(3, 2, 0).unwrap();
        assert!(bank.update(array![2.0, 0.0].view(), 0, 0.1, 0.01).is_err());
        assert!(bank.update(array![1.0, 0.0].view(), 3, 0.1, 0.01).is_err());
        assert!(bank.update(array![1.0, 0.0].view(), 0, 1.0, 0.01).is_err());
    }

    #[test]
    fn pseudo_label_momentum_limits() {
        let bank = PrototypeBank::from_prototypes(Array2::eye(3)).unwrap();
        let u = array![0.0, 0.6, 0.8];
        let set = CandidateSet::from_labels([0, 1]);
        let mut frozen = PseudoLabelStore::uniform(1, 3, 1.0).unwrap();
        frozen.update(0, u.view(), &bank, set).unwrap();
        assert_eq!(frozen.row(0), array![1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]);
        let mut jump = PseudoLabelStore::uniform(1, 3, 0.0).unwrap();
        // label 2 scores highest but is not a candidate
        assert_eq!(jump.update(0, u.view(), &bank, set).unwrap(), 1);
        assert_eq!(jump.row(0), array![0.0, 1.0, 0.0]);
    }

    #[test]
    fn singleton_targets_converge_geometrically() {
        let bank = PrototypeBank::from_prototypes(Array2::eye(3)).unwrap();
        let mut store = PseudoLabelStore::uniform(1, 3, 0.9).unwrap();
        let u = array![1.0, 0.0, 0.0];
        for k in 1..=40 {
            store.update(0, u.view(), &bank, CandidateSet::singleton(2)).unwrap();
            let off = 0.9f64.powi(k) / 3.0;
            assert!((store.row(0)[0] - off).abs() < 1e-14);
            assert!((store.row(0)[2] - (1.0 - 2.0 * off)).abs() < 1e-14);
        }
    }

    #[test]
    fn restricted_prediction() {
        let f = array![0.1, 0.2, 0.7];
        assert_eq!(predict_label(f.view(), CandidateSet::from_labels([0, 1])).unwrap(), 1);
        assert_eq!(predict_label(f.view(), CandidateSet::singleton(0)).unwrap(), 0);
        let uniform = Array1::from_elem(6, 1.0 / 6.0);
        assert_eq!(predict_label(uniform.view(), CandidateSet::from_labels([2, 5])).unwrap(), 2);
        assert!(predict_label(f.view(), CandidateSet::EMPTY).is_err());
    }

    #[test]
    fn queue_is_fifo_with_eviction() {
        let mut q = EmbeddingQueue::new(4);
        let keys = Array2::from_shape_fn((6, 2), |(i, k)| if k == i % 2 { 1.0 } else { 0.0 });
        q.push(keys.view(), &[0, 1, 2, 3, 4, 5]).unwrap();
        assert_eq!(q.labels(), vec![2, 3, 4, 5]);
        q.push(Array2::zeros((0, 2)).view(), &[]).unwrap();
        assert_eq!(q.len(), 4);
        assert!(matches!(
            q.push(array![[2.0, 0.0]].view(), &[1]),
            Err(Error::NotUnitNorm { .. })
        ));
        assert_eq!(q.labels(), vec![2, 3, 4, 5]);
    }

    #[test]
    fn positive_set_edge_cases() {
        let all_distinct = build_positive_set(1, &[0, 1, 2], &[]);
        // only the query's own key view shares its label
        assert_eq!(all_distinct.members, vec![PoolEntry::Key(1)]);
        let none = build_positive_set(0, &[0, 1, 2], &[]);
        assert_eq!(none.members, vec![PoolEntry::Key(0)]);

        let same = build_positive_set(0, &[3; 5], &[]);
        assert_eq!(same.len(), 2 * 5 - 1);
        assert!(!same.members.contains(&PoolEntry::Query(0)));
    }

    #[test]
    fn pool_layout_positions() {
        let layout = PoolLayout { batch: 3, queue: 2 };
        assert_eq!(layout.len(), 8);
        for p in 0..8 {
            assert_eq!(layout.position(layout.entry(p)), p);
        }
        assert_eq!(layout.entry(6), PoolEntry::Queue(0));
    }
}
