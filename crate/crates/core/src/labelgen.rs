//! Corrupting clean labels into standard or adversary-aware partial labels.

use std::path::Path;

use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::Rng;

use crate::candidate::CandidateSet;
use crate::error::{Error, Result};
use crate::rng::{self, Domain};
use crate::transition::{FlipProfile, RivalMatrix, MAX_FLIP_RATE};

/// Features with hidden ground-truth labels.
#[derive(Debug, Clone, PartialEq)]
pub struct CleanDataset {
    features: Array2<f64>,
    labels: Vec<usize>,
    classes: usize,
}

impl CleanDataset {
    pub fn new(features: Array2<f64>, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if features.nrows() == 0 || features.ncols() == 0 {
            return Err(Error::arg("features", "need at least one instance and one feature"));
        }
        if features.nrows() != labels.len() {
            return Err(Error::DimensionMismatch {
                expected: format!("{} labels", features.nrows()),
                actual: labels.len().to_string(),
            });
        }
        if classes == 0 || classes >= crate::candidate::MAX_CLASSES {
            return Err(Error::arg("classes", format!("{classes} is outside 1..64")));
        }
        if let Some((i, &l)) = labels.iter().enumerate().find(|(_, &l)| l >= classes) {
            return Err(Error::arg("labels", format!("instance {i} has label {l} >= {classes}")));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("features"));
        }
        Ok(CleanDataset {
            features,
            labels,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn features(&self) -> ArrayView2<'_, f64> {
        self.features.view()
    }

    pub fn feature(&self, i: usize) -> ArrayView1<'_, f64> {
        self.features.row(i)
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenerationMode {
    Standard,
    AdversaryAware,
}

/// A clean dataset with one candidate set per instance.
#[derive(Debug, Clone, PartialEq)]
pub struct PllDataset {
    clean: CleanDataset,
    candidates: Vec<CandidateSet>,
    rivals: Vec<Option<usize>>,
    mode: GenerationMode,
}

impl PllDataset {
    /// Checks every candidate set against the true label and the recorded rival.
    pub fn new(
        clean: CleanDataset,
        candidates: Vec<CandidateSet>,
        rivals: Vec<Option<usize>>,
        mode: GenerationMode,
    ) -> Result<Self> {
        let n = clean.len();
        if candidates.len() != n || rivals.len() != n {
            return Err(Error::DimensionMismatch {
                expected: format!("{n} candidate sets and rivals"),
                actual: format!("{} and {}", candidates.len(), rivals.len()),
            });
        }
        let c = clean.classes();
        for (i, (&set, &rival)) in candidates.iter().zip(&rivals).enumerate() {
            if !set.fits(c) {
                return Err(Error::arg("candidates", format!("instance {i}: {set} exceeds {c} classes")));
            }
            if !set.contains(clean.labels()[i]) {
                return Err(Error::arg("candidates", format!("instance {i}: {set} misses the true label")));
            }
            match (mode, rival) {
                (GenerationMode::Standard, Some(_)) => {
                    return Err(Error::arg("rivals", format!("instance {i}: standard data carries a rival")))
                }
                (GenerationMode::AdversaryAware, None) => {
                    return Err(Error::arg("rivals", format!("instance {i}: rival missing")))
                }
                (GenerationMode::AdversaryAware, Some(r)) if !set.contains(r) => {
                    return Err(Error::arg("candidates", format!("instance {i}: {set} misses rival {r}")))
                }
                _ => {}
            }
        }
        Ok(PllDataset {
            clean,
            candidates,
            rivals,
            mode,
        })
    }

    /// Singleton candidate sets: the fully supervised special case.
    pub fn supervised(clean: CleanDataset) -> Self {
        let candidates = clean.labels().iter().map(|&y| CandidateSet::singleton(y)).collect();
        let rivals = vec![None; clean.len()];
        PllDataset {
            clean,
            candidates,
            rivals,
            mode: GenerationMode::Standard,
        }
    }

    pub fn clean(&self) -> &CleanDataset {
        &self.clean
    }

    pub fn candidates(&self) -> &[CandidateSet] {
        &self.candidates
    }

    /// Sampled rivals, kept for diagnostics only.
    pub fn rivals(&self) -> &[Option<usize>] {
        &self.rivals
    }

    pub fn mode(&self) -> GenerationMode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.clean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clean.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.clean.classes()
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["id".to_string(), "true_label".into(), "rival_label".into(), "candidate_mask".into()];
        header.extend((0..self.clean.dim()).map(|k| format!("f{k}")));
        w.write_record(&header)?;
        for i in 0..self.len() {
            let mut record = vec![
                i.to_string(),
                self.clean.labels()[i].to_string(),
                self.rivals[i].map_or_else(|| "-1".to_string(), |r| r.to_string()),
                self.candidates[i].to_hex(),
            ];
            record.extend(self.clean.feature(i).iter().map(|v| format!("{v:?}")));
            w.write_record(&record)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Parses the CSV written by [`PllDataset::save_csv`] and validates it.
    pub fn load_csv(path: &Path, classes: usize) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
        let headers = r.headers()?.clone();
        let expected = ["id", "true_label", "rival_label", "candidate_mask"];
        if headers.len() < 5 || headers.iter().take(4).ne(expected.iter().copied()) {
            return Err(Error::parse(path, 1, format!("expected header {expected:?} followed by features")));
        }
        let dim = headers.len() - 4;
        let mut values = Vec::new();
        let mut labels = Vec::new();
        let mut candidates = Vec::new();
        let mut rivals = Vec::new();
        for (row, record) in r.records().enumerate() {
            let line = row + 2;
            let record = record.map_err(|e| Error::parse(path, line, e.to_string()))?;
            if record.len() != dim + 4 {
                return Err(Error::parse(path, line, format!("expected {} columns, found {}", dim + 4, record.len())));
            }
            let label: usize = parse_field(&record[1], path, line, "true_label")?;
            if label >= classes {
                return Err(Error::parse(path, line, format!("label {label} >= {classes} classes")));
            }
            let rival: i64 = parse_field(&record[2], path, line, "rival_label")?;
            let rival = match rival {
                -1 => None,
                r if r >= 0 && (r as usize) < classes => Some(r as usize),
                r => return Err(Error::parse(path, line, format!("rival {r} is not a label"))),
            };
            let set = CandidateSet::from_hex(&record[3]).map_err(|e| Error::parse(path, line, e.to_string()))?;
            for k in 0..dim {
                values.push(parse_field::<f64>(&record[4 + k], path, line, "feature")?);
            }
            labels.push(label);
            rivals.push(rival);
            candidates.push(set);
        }
        let features = Array2::from_shape_vec((labels.len(), dim), values).map_err(|e| Error::parse(path, 1, e.to_string()))?;
        let mode = if rivals.iter().any(Option::is_some) {
            GenerationMode::AdversaryAware
        } else {
            GenerationMode::Standard
        };
        PllDataset::new(CleanDataset::new(features, labels, classes)?, candidates, rivals, mode)
    }
}

pub(crate) fn parse_field<T: std::str::FromStr>(s: &str, path: &Path, line: usize, what: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    s.trim()
        .parse()
        .map_err(|e| Error::parse(path, line, format!("{what} `{s}`: {e}")))
}

/// Adds `{b}` for every `b ≠ y` with probability `clip(q + U(−ε, ε))`.
///
/// Two uniforms are drawn for every label, in label order, so the stream
/// layout does not depend on the true label.
fn flip_false_positives(profile: &FlipProfile, classes: usize, y: usize, seed: u64, instance: usize) -> CandidateSet {
    let mut rng = rng::stream(seed, Domain::Flip, instance as u64, 0);
    let eps = profile.perturbation;
    let mut set = CandidateSet::singleton(y);
    for b in 0..classes {
        let delta = if eps > 0.0 { rng.gen_range(-eps..=eps) } else { 0.0 };
        let u: f64 = rng.gen();
        if b != y && u < profile.realize(delta) {
            set.insert(b);
        }
    }
    set
}

fn require_learnable(profile: &FlipProfile, rival: Option<&RivalMatrix>) -> Result<()> {
    profile.validate()?;
    let report = check_ambiguity(profile, rival);
    if !report.ok {
        return Err(Error::Ambiguity {
            max_rate: report.max_rate,
        });
    }
    Ok(())
}

/// Standard partial labels: true label plus independent false positives.
pub fn generate_standard(clean: &CleanDataset, profile: &FlipProfile, seed: u64) -> Result<PllDataset> {
    require_learnable(profile, None)?;
    let c = clean.classes();
    let candidates = clean
        .labels()
        .iter()
        .enumerate()
        .map(|(i, &y)| flip_false_positives(profile, c, y, seed, i))
        .collect();
    PllDataset::new(clean.clone(), candidates, vec![None; clean.len()], GenerationMode::Standard)
}

/// Adversary-aware partial labels: a rival `y′ ~ T̄[y, ·]` joins the
/// standard candidate set drawn with the same seed.
pub fn generate_adversary_aware(
    clean: &CleanDataset,
    rival: &RivalMatrix,
    profile: &FlipProfile,
    seed: u64,
) -> Result<PllDataset> {
    let c = clean.classes();
    if rival.classes() != c {
        return Err(Error::DimensionMismatch {
            expected: format!("{c}x{c} rival matrix"),
            actual: format!("{0}x{0}", rival.classes()),
        });
    }
    require_learnable(profile, Some(rival))?;
    for y in 0..c {
        let sum = rival.row(y).sum();
        if !(sum > 0.0) {
            return Err(Error::UnsamplableRow { row: y, sum });
        }
    }
    let mut candidates = Vec::with_capacity(clean.len());
    let mut rivals = Vec::with_capacity(clean.len());
    for (i, &y) in clean.labels().iter().enumerate() {
        let u: f64 = rng::stream(seed, Domain::Rival, i as u64, 0).gen();
        let r = rival.sample_row(y, u)?;
        candidates.push(flip_false_positives(profile, c, y, seed, i).with(r));
        rivals.push(Some(r));
    }
    PllDataset::new(clean.clone(), candidates, rivals, GenerationMode::AdversaryAware)
}

/// Verdict of the small-ambiguity-degree condition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AmbiguityReport {
    pub ok: bool,
    /// Largest probability with which a specific wrong label co-occurs.
    pub max_rate: f64,
}

/// Every wrong label must co-occur with probability strictly below one.
///
/// The rival is present with certainty given `Y′ = y′`, so its co-inclusion
/// with a false positive `ȳ` is the flip rate of `ȳ`: the bound is the same
/// with or without a rival matrix.
pub fn check_ambiguity(profile: &FlipProfile, _rival: Option<&RivalMatrix>) -> AmbiguityReport {
    let q = profile.base_rate;
    if !q.is_finite() || !(0.0..1.0).contains(&q) {
        return AmbiguityReport { ok: false, max_rate: q };
    }
    let max_rate = profile.max_realized_rate();
    AmbiguityReport {
        ok: max_rate <= MAX_FLIP_RATE,
        max_rate,
    }
}

/// Empirical statistics of a generated dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerationReport {
    /// `inclusion[y][b]`: fraction of class-`y` instances whose set contains `b`.
    pub inclusion: Array2<f64>,
    /// `rival_frequency[y][r]`: fraction of class-`y` instances whose rival is `r`.
    pub rival_frequency: Option<Array2<f64>>,
    pub class_counts: Vec<usize>,
    pub mean_cardinality: f64,
    /// Sets equal to the whole label space.
    pub full_sets: usize,
    pub ambiguity_ok: bool,
}

pub fn audit_generation(ds: &PllDataset) -> Result<GenerationReport> {
    if ds.is_empty() {
        return Err(Error::arg("dataset", "cannot audit an empty dataset"));
    }
    let c = ds.classes();
    let mut counts = vec![0usize; c];
    let mut inclusion = Array2::<f64>::zeros((c, c));
    let mut rival_frequency = Array2::<f64>::zeros((c, c));
    let mut total_size = 0usize;
    let mut full_sets = 0;
    let full = CandidateSet::full(c);
    for ((&y, &set), rival) in ds.clean().labels().iter().zip(ds.candidates()).zip(ds.rivals()) {
        counts[y] += 1;
        for b in set.iter() {
            inclusion[[y, b]] += 1.0;
        }
        if let Some(r) = rival {
            rival_frequency[[y, *r]] += 1.0;
        }
        total_size += set.len();
        full_sets += usize::from(set == full);
    }
    for (y, &count) in counts.iter().enumerate() {
        if count > 0 {
            let n = count as f64;
            inclusion.row_mut(y).mapv_inplace(|v| v / n);
            rival_frequency.row_mut(y).mapv_inplace(|v| v / n);
        }
    }
    let ambiguity_ok = (0..c).all(|y| {
        counts[y] == 0 || (inclusion[[y, y]] == 1.0 && (0..c).all(|b| b == y || inclusion[[y, b]] < 1.0))
    });
    Ok(GenerationReport {
        inclusion,
        rival_frequency: (ds.mode() == GenerationMode::AdversaryAware).then_some(rival_frequency),
        class_counts: counts,
        mean_cardinality: total_size as f64 / ds.len() as f64,
        full_sets,
        ambiguity_ok,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn clean(n: usize, classes: usize) -> CleanDataset {
        let features = Array2::from_shape_fn((n, 2), |(i, k)| (i * 2 + k) as f64 * 0.01);
        CleanDataset::new(features, (0..n).map(|i| i % classes).collect(), classes).unwrap()
    }

    #[test]
    fn zero_rate_gives_singletons() {
        let ds = generate_standard(&clean(50, 4), &FlipProfile::exact(0.0).unwrap(), 3).unwrap();
        for (set, &y) in ds.candidates().iter().zip(ds.clean().labels()) {
            assert_eq!(*set, CandidateSet::singleton(y));
        }
        assert_eq!(audit_generation(&ds).unwrap().mean_cardinality, 1.0);
    }

    #[test]
    fn deterministic_rival_without_flips() {
        let mut t = Array2::zeros((4, 4));
        for y in 0..4 {
            t[[y, if y == 2 { 3 } else { 2 }]] = 1.0;
        }
        let t = RivalMatrix::new(t).unwrap();
        let ds = generate_adversary_aware(&clean(40, 4), &t, &FlipProfile::exact(0.0).unwrap(), 1).unwrap();
        for (set, &y) in ds.candidates().iter().zip(ds.clean().labels()) {
            let r = if y == 2 { 3 } else { 2 };
            assert_eq!(*set, CandidateSet::from_labels([y, r]));
        }
        assert_eq!(audit_generation(&ds).unwrap().mean_cardinality, 2.0);
    }

    #[test]
    fn rejects_rates_at_one() {
        let p = FlipProfile {
            base_rate: 1.0,
            perturbation: 0.0,
        };
        assert!(matches!(generate_standard(&clean(5, 3), &p, 0), Err(Error::Ambiguity { .. })));
    }

    #[test]
    fn ambiguity_verdicts() {
        let near = FlipProfile::new(0.999, 0.02).unwrap();
        let r = check_ambiguity(&near, None);
        assert!(r.ok && r.max_rate < 1.0);
        let one = FlipProfile {
            base_rate: 1.0,
            perturbation: 0.02,
        };
        assert!(!check_ambiguity(&one, None).ok);
        let t = RivalMatrix::build(5, 2, 0.5).unwrap();
        let half = FlipProfile::new(0.5, 0.02).unwrap();
        let r = check_ambiguity(&half, Some(&t));
        assert!(r.ok);
        assert!((r.max_rate - 0.52).abs() < 1e-15);
    }

    #[test]
    fn unsamplable_rival_rows() {
        let t = RivalMatrix::new_unchecked(Array2::zeros((3, 3)));
        let err = generate_adversary_aware(&clean(6, 3), &t, &FlipProfile::exact(0.1).unwrap(), 0).unwrap_err();
        assert!(matches!(err, Error::UnsamplableRow { row: 0, .. }));
    }

    #[test]
    fn same_seed_same_sets() {
        let p = FlipProfile::new(0.3, 0.02).unwrap();
        let t = RivalMatrix::uniform(5).unwrap();
        let a = generate_adversary_aware(&clean(200, 5), &t, &p, 11).unwrap();
        let b = generate_adversary_aware(&clean(200, 5), &t, &p, 11).unwrap();
        let c = generate_adversary_aware(&clean(200, 5), &t, &p, 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.candidates(), c.candidates());
    }

    #[test]
    fn adversary_sets_contain_standard_sets_for_same_seed() {
        let p = FlipProfile::new(0.3, 0.02).unwrap();
        let t = RivalMatrix::uniform(4).unwrap();
        let data = clean(300, 4);
        let s = generate_standard(&data, &p, 5).unwrap();
        let a = generate_adversary_aware(&data, &t, &p, 5).unwrap();
        for (x, y) in s.candidates().iter().zip(a.candidates()) {
            assert_eq!(x.mask() & !y.mask(), 0);
        }
    }

    #[test]
    fn csv_roundtrip_and_validation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pll.csv");
        let p = FlipProfile::new(0.3, 0.02).unwrap();
        let t = RivalMatrix::uniform(3).unwrap();
        let features = array![[0.1, -2.5e-7], [1.0 / 3.0, 4.0], [5.0, 6.0]];
        let data = CleanDataset::new(features, vec![0, 1, 2], 3).unwrap();
        let ds = generate_adversary_aware(&data, &t, &p, 9).unwrap();
        ds.save_csv(&path).unwrap();
        assert_eq!(PllDataset::load_csv(&path, 3).unwrap(), ds);

        let text = std::fs::read_to_string(&path).unwrap();
        let broken = text.replacen("\n1,1,", "\n1,7,", 1);
        std::fs::write(&path, broken).unwrap();
        let err = PllDataset::load_csv(&path, 3).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
    }

    #[test]
    fn load_rejects_sets_missing_the_true_label() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "id,true_label,rival_label,candidate_mask,f0\n0,0,-1,6,1.0\n").unwrap();
        assert!(PllDataset::load_csv(&path, 3).is_err());
    }
}
