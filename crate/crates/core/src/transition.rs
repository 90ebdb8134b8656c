//! Rival transition matrices, the adversary-aware correction matrix, the
//! candidate-set distribution matrices Q̄ and Q*, and posterior recovery.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::candidate::{CandidateSet, CandidateSetIndex};
use crate::error::{Error, Result};
use crate::linalg;

/// Structural tolerance: row sums, unit diagonals, rank thresholds.
pub const STRUCTURAL_TOL: f64 = 1e-9;
/// Tolerance for posterior recovery round trips.
pub const RECOVERY_TOL: f64 = 1e-8;
/// Largest label space for which set distributions are enumerated.
pub const ENUMERATION_GUARD: usize = 20;
/// Realized flip rates are clipped to this value so they stay below 1.
pub const MAX_FLIP_RATE: f64 = 1.0 - 1e-6;

/// Class-conditional rival distribution `T̄[y][y′] = P(Y′ = y′ | Y = y)`.
///
/// Zero diagonal, entries in `[0, 1]`, rows summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct RivalMatrix {
    entries: Array2<f64>,
}

impl RivalMatrix {
    /// Validates and wraps a `c × c` matrix.
    pub fn new(entries: Array2<f64>) -> Result<Self> {
        let c = entries.nrows();
        if entries.ncols() != c {
            return Err(Error::InvalidRivalMatrix(format!(
                "not square: {}x{}",
                entries.nrows(),
                entries.ncols()
            )));
        }
        if c < 3 {
            return Err(Error::InvalidRivalMatrix(format!("needs at least 3 classes, got {c}")));
        }
        for (y, row) in entries.outer_iter().enumerate() {
            if row[y] != 0.0 {
                return Err(Error::InvalidRivalMatrix(format!("diagonal entry {y} is {}", row[y])));
            }
            if let Some(v) = row.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(Error::InvalidRivalMatrix(format!("row {y} has entry {v} outside [0, 1]")));
            }
            let sum = row.sum();
            if (sum - 1.0).abs() > STRUCTURAL_TOL {
                return Err(Error::InvalidRivalMatrix(format!("row {y} sums to {sum}")));
            }
        }
        Ok(RivalMatrix { entries })
    }

    /// Skips every check except shape. Only reachable through
    /// [`crate::verify::fixtures`] and unit tests.
    pub(crate) fn new_unchecked(entries: Array2<f64>) -> Self {
        assert_eq!(entries.nrows(), entries.ncols(), "rival matrix must be square");
        RivalMatrix { entries }
    }

    /// Circulant preset: row `y` puts weight `w` on `k` labels around `y`.
    ///
    /// The offsets are `±1, …, ±⌊k/2⌋`, plus `c/2` when `k` is odd, so the
    /// matrix is symmetric. With `k` and `c` both odd no symmetric layout
    /// exists and the offsets fall back to `1, …, k`.
    pub fn build(classes: usize, support: usize, weight: f64) -> Result<Self> {
        if classes < 3 {
            return Err(Error::InvalidRivalMatrix(format!("needs at least 3 classes, got {classes}")));
        }
        if support == 0 || support >= classes {
            return Err(Error::InvalidRivalMatrix(format!(
                "support size {support} must lie in 1..{classes}"
            )));
        }
        let total = support as f64 * weight;
        if (total - 1.0).abs() > STRUCTURAL_TOL {
            return Err(Error::InvalidRivalMatrix(format!(
                "{support} entries of {weight} sum to {total}, not 1"
            )));
        }
        let offsets: Vec<usize> = if support % 2 == 1 && classes % 2 == 1 {
            (1..=support).collect()
        } else {
            let mut v: Vec<usize> = (1..=support / 2).flat_map(|j| [j, classes - j]).collect();
            if support % 2 == 1 {
                v.push(classes / 2);
            }
            v
        };
        let mut entries = Array2::zeros((classes, classes));
        for y in 0..classes {
            for &step in &offsets {
                entries[[y, (y + step) % classes]] = weight;
            }
        }
        RivalMatrix::new(entries)
    }

    pub fn is_symmetric(&self) -> bool {
        self.entries.iter().zip(self.entries.t().iter()).all(|(a, b)| (a - b).abs() <= STRUCTURAL_TOL)
    }

    /// Uniform rival over the `c − 1` other labels.
    pub fn uniform(classes: usize) -> Result<Self> {
        Self::build(classes, classes - 1, 1.0 / (classes - 1) as f64)
    }

    pub fn classes(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> ArrayView2<'_, f64> {
        self.entries.view()
    }

    pub fn row(&self, y: usize) -> ArrayView1<'_, f64> {
        self.entries.row(y)
    }

    /// Inverse-CDF draw from row `y` normalized by its sum, `u ∈ [0, 1)`.
    pub fn sample_row(&self, y: usize, u: f64) -> Result<usize> {
        let row = self.entries.row(y);
        let sum = row.sum();
        if !(sum > 0.0) || !sum.is_finite() {
            return Err(Error::UnsamplableRow { row: y, sum });
        }
        let target = u * sum;
        let mut acc = 0.0;
        let mut last = y;
        for (j, &w) in row.iter().enumerate() {
            if w <= 0.0 {
                continue;
            }
            acc += w;
            last = j;
            if target < acc {
                return Ok(j);
            }
        }
        Ok(last)
    }

    /// `T̄ + I`.
    pub fn adversary_aware(&self) -> AdversaryAwareMatrix {
        AdversaryAwareMatrix {
            entries: &self.entries + &Array2::<f64>::eye(self.classes()),
        }
    }

    pub fn to_text(&self) -> String {
        matrix_to_text(self.entries.view())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        RivalMatrix::new(parse_matrix_text(text, Path::new("<text>"))?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        RivalMatrix::new(parse_matrix_text(&text, path)?)
    }
}

/// The correction matrix `T = T̄ + I` applied to classifier outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct AdversaryAwareMatrix {
    entries: Array2<f64>,
}

impl AdversaryAwareMatrix {
    /// No correction: the matrix of a rival-free generator.
    pub fn identity(classes: usize) -> Self {
        AdversaryAwareMatrix {
            entries: Array2::eye(classes),
        }
    }

    pub fn classes(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> ArrayView2<'_, f64> {
        self.entries.view()
    }

    /// `M f`.
    pub fn apply(&self, f: ArrayView1<'_, f64>) -> Array1<f64> {
        self.entries.dot(&f)
    }

    /// Recovers `T̄ = T − I`.
    pub fn rival(&self) -> RivalMatrix {
        RivalMatrix::new_unchecked(&self.entries - &Array2::<f64>::eye(self.classes()))
    }

    pub fn rank(&self, tol: f64) -> usize {
        linalg::numerical_rank(self.entries.view(), tol)
    }

    pub fn is_full_rank(&self) -> bool {
        self.rank(STRUCTURAL_TOL) == self.classes()
    }

    pub fn to_text(&self) -> String {
        matrix_to_text(self.entries.view())
    }

    /// Parses `T̄ + I`; the diagonal must be exactly one and the off-diagonal
    /// part must be a valid rival matrix.
    pub fn from_text(text: &str) -> Result<Self> {
        let entries = parse_matrix_text(text, Path::new("<text>"))?;
        if let Some(y) = (0..entries.nrows()).find(|&y| entries[[y, y]] != 1.0) {
            return Err(Error::InvalidRivalMatrix(format!(
                "adversary-aware diagonal entry {y} is {}",
                entries[[y, y]]
            )));
        }
        let rival = RivalMatrix::new(&entries - &Array2::<f64>::eye(entries.nrows()))?;
        Ok(rival.adversary_aware())
    }
}

/// Base flip rate `q` with a per-instance half-width perturbation `ε`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FlipProfile {
    pub base_rate: f64,
    pub perturbation: f64,
}

impl FlipProfile {
    /// Perturbation used for every realized rate unless configured otherwise.
    pub const DEFAULT_PERTURBATION: f64 = 0.02;

    pub fn new(base_rate: f64, perturbation: f64) -> Result<Self> {
        let p = FlipProfile {
            base_rate,
            perturbation,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn exact(base_rate: f64) -> Result<Self> {
        Self::new(base_rate, 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.base_rate.is_finite() || !(0.0..1.0).contains(&self.base_rate) {
            return Err(Error::Ambiguity {
                max_rate: self.base_rate,
            });
        }
        if !self.perturbation.is_finite() || !(0.0..1.0).contains(&self.perturbation) {
            return Err(Error::arg("perturbation", format!("{} is outside [0, 1)", self.perturbation)));
        }
        Ok(())
    }

    /// Clipped realization `clip(q + δ, 0, 1 − 1e-6)` for a draw `δ ∈ [−ε, ε]`.
    pub fn realize(&self, delta: f64) -> f64 {
        (self.base_rate + delta).clamp(0.0, MAX_FLIP_RATE)
    }

    /// Largest rate any realization can reach.
    pub fn max_realized_rate(&self) -> f64 {
        self.realize(self.perturbation)
    }

    /// Every label flips with the unperturbed base rate.
    pub fn expected_rates(&self, classes: usize) -> FlipRates {
        FlipRates(vec![self.base_rate.clamp(0.0, MAX_FLIP_RATE); classes])
    }
}

/// Per-label inclusion probabilities `p_b` of false-positive labels.
#[derive(Debug, Clone, PartialEq)]
pub struct FlipRates(Vec<f64>);

impl FlipRates {
    pub fn new(rates: Vec<f64>) -> Result<Self> {
        if let Some(r) = rates.iter().find(|r| !(0.0..1.0).contains(*r)) {
            return Err(Error::Ambiguity { max_rate: *r });
        }
        Ok(FlipRates(rates))
    }

    pub fn uniform(classes: usize, rate: f64) -> Result<Self> {
        Self::new(vec![rate; classes])
    }

    pub fn classes(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

fn guard(classes: usize) -> Result<CandidateSetIndex> {
    if classes > ENUMERATION_GUARD {
        return Err(Error::EnumerationGuard {
            classes,
            guard: ENUMERATION_GUARD,
        });
    }
    CandidateSetIndex::new(classes)
}

/// `Q̄[j][y] = P(Y⃗ = set_j | Y = y)` for rival-free generation.
///
/// Rows follow [`CandidateSetIndex`] (informative sets, then the full set).
/// Entry is `∏_{b ∈ set, b ≠ y} p_b · ∏_{t ∉ set} (1 − p_t)` when `y ∈ set`,
/// else zero.
pub fn enumerate_q_bar(rates: &FlipRates) -> Result<Array2<f64>> {
    let c = rates.classes();
    let index = guard(c)?;
    let p = rates.as_slice();
    let mut q = Array2::zeros((index.rows(), c));
    for (j, mut row) in q.outer_iter_mut().enumerate() {
        let set = index.set(j).expect("row within index");
        for y in set.iter() {
            let mut prob = 1.0;
            for (b, &pb) in p.iter().enumerate() {
                if b == y {
                    continue;
                }
                prob *= if set.contains(b) { pb } else { 1.0 - pb };
            }
            row[y] = prob;
        }
    }
    Ok(q)
}

/// `Q* = min{1, A T̄}` with `A = Q̄ + ε_x` (row-broadcast, clipped to `[0, 1]`).
pub fn enumerate_q_star(rival: &RivalMatrix, rates: &FlipRates, epsilon_x: Option<ArrayView1<'_, f64>>) -> Result<Array2<f64>> {
    let c = rival.classes();
    if rates.classes() != c {
        return Err(Error::DimensionMismatch {
            expected: format!("{c} flip rates"),
            actual: rates.classes().to_string(),
        });
    }
    let mut a = enumerate_q_bar(rates)?;
    if let Some(eps) = epsilon_x {
        if eps.len() != c {
            return Err(Error::DimensionMismatch {
                expected: format!("epsilon_x of length {c}"),
                actual: eps.len().to_string(),
            });
        }
        if eps.iter().any(|&e| e != 0.0) {
            a += &eps;
            a.mapv_inplace(|v| v.clamp(0.0, 1.0));
        }
    }
    Ok(a.dot(&rival.entries()).mapv(|v| v.min(1.0)))
}

/// Least-squares posterior estimate projected onto the simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct RecoveredPosterior {
    pub posterior: Array1<f64>,
    /// `‖Q* x − observed‖₂` before projection.
    pub residual: f64,
}

/// Solves `min ‖Q* x − observed‖₂` and projects `x` onto the simplex.
pub fn recover_posterior(q_star: ArrayView2<'_, f64>, observed: ArrayView1<'_, f64>) -> Result<RecoveredPosterior> {
    if observed.iter().any(|&v| v < 0.0 || !v.is_finite()) {
        return Err(Error::arg("observed", "entries must be finite and nonnegative"));
    }
    let (x, residual) = linalg::least_squares(q_star, observed, STRUCTURAL_TOL)?;
    Ok(RecoveredPosterior {
        posterior: linalg::project_to_simplex(x.view()),
        residual,
    })
}

/// Expected candidate-set size under a set distribution column.
pub fn expected_cardinality(distribution: ArrayView1<'_, f64>) -> f64 {
    let index = CandidateSetIndex::new(classes_from_rows(distribution.len())).expect("valid row count");
    distribution
        .iter()
        .enumerate()
        .map(|(j, &p)| p * index.set(j).map_or(0, CandidateSet::len) as f64)
        .sum()
}

fn classes_from_rows(rows: usize) -> usize {
    (rows + 1).trailing_zeros() as usize
}

/// Column sums of a distribution matrix.
pub fn column_sums(m: ArrayView2<'_, f64>) -> Array1<f64> {
    m.sum_axis(Axis(0))
}

/// `c=<n>` followed by `c` lines of space-separated values.
pub fn matrix_to_text(m: ArrayView2<'_, f64>) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "c={}", m.nrows());
    for row in m.outer_iter() {
        let line: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        let _ = writeln!(out, "{}", line.join(" "));
    }
    out
}

pub fn parse_matrix_text(text: &str, path: &Path) -> Result<Array2<f64>> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty());
    let (n, header) = lines.next().ok_or_else(|| Error::parse(path, 1, "empty matrix file"))?;
    let c: usize = header
        .strip_prefix("c=")
        .and_then(|s| s.trim().parse().ok())
        .ok_or_else(|| Error::parse(path, n, format!("expected `c=<int>`, found `{header}`")))?;
    let mut m = Array2::zeros((c, c));
    for y in 0..c {
        let (n, line) = lines
            .next()
            .ok_or_else(|| Error::parse(path, n + y + 1, format!("expected {c} rows, found {y}")))?;
        let values: Vec<&str> = line.split_whitespace().collect();
        if values.len() != c {
            return Err(Error::parse(path, n, format!("expected {c} values, found {}", values.len())));
        }
        for (x, v) in values.iter().enumerate() {
            m[[y, x]] = v
                .parse::<f64>()
                .map_err(|e| Error::parse(path, n, format!("`{v}`: {e}")))?;
        }
    }
    if let Some((n, _)) = lines.next() {
        return Err(Error::parse(path, n, "trailing content after matrix"));
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn assert_close(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>, tol: f64) {
        assert_eq!(a.dim(), b.dim());
        for (x, y) in a.iter().zip(b.iter()) {
            assert!((x - y).abs() <= tol, "{x} vs {y}");
        }
    }

    #[test]
    fn ten_class_preset_has_five_entries_of_one_fifth() {
        let t = RivalMatrix::build(10, 5, 0.2).unwrap();
        for (y, row) in t.entries().outer_iter().enumerate() {
            assert_eq!(row[y], 0.0);
            assert_eq!(row.iter().filter(|&&v| v == 0.2).count(), 5);
            assert_eq!(row.iter().filter(|&&v| v == 0.0).count(), 5);
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
        assert_eq!(t.entries()[[8, 9]], 0.2);
        assert_eq!(t.entries()[[8, 3]], 0.2);
        assert_eq!(t.entries()[[8, 4]], 0.0);
    }

    #[test]
    fn symmetric_three_class_preset() {
        let t = RivalMatrix::build(3, 2, 0.5).unwrap();
        assert_eq!(t.entries(), array![[0.0, 0.5, 0.5], [0.5, 0.0, 0.5], [0.5, 0.5, 0.0]]);
        assert_eq!(
            t.adversary_aware().entries(),
            array![[1.0, 0.5, 0.5], [0.5, 1.0, 0.5], [0.5, 0.5, 1.0]]
        );
    }

    #[test]
    fn presets_are_symmetric_unless_both_sizes_are_odd() {
        for (c, k) in [(10, 5), (3, 2), (4, 2), (4, 3), (6, 1), (5, 2), (5, 4)] {
            let t = RivalMatrix::build(c, k, 1.0 / k as f64).unwrap();
            assert!(t.is_symmetric(), "c={c} k={k}");
            assert!(t.entries().rows().into_iter().all(|r| r.iter().filter(|&&v| v > 0.0).count() == k));
        }
        assert!(!RivalMatrix::build(5, 3, 1.0 / 3.0).unwrap().is_symmetric());
    }

    #[test]
    fn builder_rejects_non_stochastic_rows_and_wide_support() {
        assert!(matches!(RivalMatrix::build(6, 4, 0.3), Err(Error::InvalidRivalMatrix(_))));
        assert!(RivalMatrix::build(4, 4, 0.25).is_err());
        assert!(RivalMatrix::build(4, 0, 1.0).is_err());
        assert!(RivalMatrix::build(2, 1, 1.0).is_err());
    }

    #[test]
    fn validation_rejects_each_broken_invariant() {
        assert!(RivalMatrix::new(array![[0.1, 0.5, 0.4], [0.5, 0.0, 0.5], [0.5, 0.5, 0.0]]).is_err());
        assert!(RivalMatrix::new(array![[0.0, 1.5, -0.5], [0.5, 0.0, 0.5], [0.5, 0.5, 0.0]]).is_err());
        assert!(RivalMatrix::new(array![[0.0, 0.4, 0.4], [0.5, 0.0, 0.5], [0.5, 0.5, 0.0]]).is_err());
        assert!(RivalMatrix::new(Array2::zeros((3, 4))).is_err());
    }

    #[test]
    fn adversary_aware_of_zero_is_identity() {
        let t = RivalMatrix::new_unchecked(Array2::zeros((4, 4)));
        assert_eq!(t.adversary_aware(), AdversaryAwareMatrix::identity(4));
    }

    #[test]
    fn adversary_aware_rows_sum_to_two() {
        let m = RivalMatrix::build(10, 5, 0.2).unwrap().adversary_aware();
        for row in m.entries().outer_iter() {
            assert!((row.sum() - 2.0).abs() < STRUCTURAL_TOL);
        }
        assert!(m.is_full_rank());
    }

    #[test]
    fn q_bar_without_flips_is_point_mass_on_singletons() {
        let q = enumerate_q_bar(&FlipRates::uniform(3, 0.0).unwrap()).unwrap();
        let index = CandidateSetIndex::new(3).unwrap();
        for y in 0..3 {
            let j = index.index_of(CandidateSet::singleton(y)).unwrap();
            assert_eq!(q[[j, y]], 1.0);
            assert_eq!(q.column(y).sum(), 1.0);
        }
    }

    #[test]
    fn q_bar_half_rate_pair_probability() {
        let q = enumerate_q_bar(&FlipRates::uniform(3, 0.5).unwrap()).unwrap();
        let index = CandidateSetIndex::new(3).unwrap();
        let j = index.index_of(CandidateSet::from_labels([0, 1])).unwrap();
        assert!((q[[j, 0]] - 0.25).abs() < 1e-15);
        // label 2 is not in {0, 1}
        assert_eq!(q[[j, 2]], 0.0);
    }

    #[test]
    fn q_bar_columns_sum_to_one() {
        let q = enumerate_q_bar(&FlipRates::uniform(4, 0.3).unwrap()).unwrap();
        assert_eq!(q.nrows(), 15);
        for s in column_sums(q.view()).iter() {
            assert!((s - 1.0).abs() < STRUCTURAL_TOL);
        }
    }

    #[test]
    fn enumeration_guard() {
        let rates = FlipRates::uniform(ENUMERATION_GUARD + 1, 0.1).unwrap();
        assert!(matches!(enumerate_q_bar(&rates), Err(Error::EnumerationGuard { .. })));
    }

    #[test]
    fn q_star_with_identity_rival_is_q_bar() {
        let rates = FlipRates::uniform(3, 0.3).unwrap();
        let t = RivalMatrix::new_unchecked(Array2::eye(3));
        let q_star = enumerate_q_star(&t, &rates, None).unwrap();
        assert_close(q_star.view(), enumerate_q_bar(&rates).unwrap().view(), 0.0);
    }

    #[test]
    fn q_star_matches_explicit_product() {
        let rates = FlipRates::uniform(3, 0.5).unwrap();
        let t = RivalMatrix::build(3, 2, 0.5).unwrap();
        let q_bar = enumerate_q_bar(&rates).unwrap();
        let q_star = enumerate_q_star(&t, &rates, None).unwrap();
        for j in 0..q_bar.nrows() {
            for y in 0..3 {
                let mut expected = 0.0;
                for k in 0..3 {
                    expected += q_bar[[j, k]] * t.entries()[[k, y]];
                }
                assert!((q_star[[j, y]] - expected.min(1.0)).abs() < 1e-15);
                assert!((0.0..=1.0).contains(&q_star[[j, y]]));
            }
        }
    }

    #[test]
    fn q_star_epsilon_is_clipped_and_checked() {
        let rates = FlipRates::uniform(3, 0.5).unwrap();
        let t = RivalMatrix::build(3, 2, 0.5).unwrap();
        let eps = array![0.9, -0.9, 0.3];
        let q_star = enumerate_q_star(&t, &rates, Some(eps.view())).unwrap();
        assert!(q_star.iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(enumerate_q_star(&t, &rates, Some(array![0.1, 0.2].view())).is_err());
    }

    #[test]
    fn recovery_inverts_forward_synthesis() {
        let rates = FlipRates::uniform(3, 0.3).unwrap();
        let t = RivalMatrix::build(3, 2, 0.5).unwrap();
        let q_star = enumerate_q_star(&t, &rates, None).unwrap();
        let p = array![0.6, 0.1, 0.3];
        let observed = q_star.dot(&p);
        let r = recover_posterior(q_star.view(), observed.view()).unwrap();
        assert!(r.residual < 1e-10);
        assert!(linalg::total_variation(r.posterior.view(), p.view()) < RECOVERY_TOL);
    }

    #[test]
    fn recovery_of_point_mass_with_identity_rival() {
        let rates = FlipRates::uniform(3, 0.2).unwrap();
        let q_bar = enumerate_q_bar(&rates).unwrap();
        let r = recover_posterior(q_bar.view(), q_bar.column(1)).unwrap();
        assert!((r.posterior[1] - 1.0).abs() < 1e-12);
        assert!(r.posterior[0].abs() < 1e-12 && r.posterior[2].abs() < 1e-12);
    }

    #[test]
    fn recovery_rejects_duplicate_columns() {
        let mut q = enumerate_q_bar(&FlipRates::uniform(3, 0.2).unwrap()).unwrap();
        let col = q.column(0).to_owned();
        q.column_mut(1).assign(&col);
        let observed = q.column(0).to_owned();
        assert!(matches!(
            recover_posterior(q.view(), observed.view()),
            Err(Error::RankDeficient { .. })
        ));
    }

    #[test]
    fn sampling_follows_cumulative_row() {
        let t = RivalMatrix::build(4, 2, 0.5).unwrap();
        assert_eq!(t.sample_row(0, 0.0).unwrap(), 1);
        assert_eq!(t.sample_row(0, 0.49).unwrap(), 1);
        assert_eq!(t.sample_row(0, 0.5).unwrap(), 3);
        assert_eq!(t.sample_row(0, 0.999_999).unwrap(), 3);
        let zero = RivalMatrix::new_unchecked(Array2::zeros((3, 3)));
        assert!(matches!(zero.sample_row(1, 0.3), Err(Error::UnsamplableRow { row: 1, .. })));
    }

    #[test]
    fn text_roundtrip_is_bit_exact() {
        let t = RivalMatrix::build(5, 3, 1.0 / 3.0).unwrap();
        let text = t.to_text();
        assert!(text.starts_with("c=5\n"));
        assert_eq!(RivalMatrix::from_text(&text).unwrap(), t);
        let m = t.adversary_aware();
        assert_eq!(AdversaryAwareMatrix::from_text(&m.to_text()).unwrap(), m);
    }

    #[test]
    fn text_parse_errors_carry_line_numbers() {
        let err = RivalMatrix::from_text("c=3\n0 0.5 0.5\n0.5 0\n0.5 0.5 0\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
        assert!(RivalMatrix::from_text("rows=3\n").is_err());
    }

    #[test]
    fn cardinality_of_point_masses() {
        let q = enumerate_q_bar(&FlipRates::uniform(3, 0.0).unwrap()).unwrap();
        assert_eq!(expected_cardinality(q.column(0)), 1.0);
        let q = enumerate_q_bar(&FlipRates::uniform(3, 0.5).unwrap()).unwrap();
        assert!((expected_cardinality(q.column(0)) - 2.0).abs() < 1e-15);
    }
}
