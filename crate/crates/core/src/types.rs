//! Shared data model: sample features, prototype sets, hyperparameters and
//! dataset splits.

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type ClassId = String;

/// Labelled samples, one per row.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    data: DMatrix<f64>,
    row_ids: Vec<String>,
    labels: Vec<ClassId>,
}

impl FeatureMatrix {
    /// Checks shape only. Finiteness is reported by [`FeatureMatrix::validate`].
    pub fn new(data: DMatrix<f64>, row_ids: Vec<String>, labels: Vec<ClassId>) -> Result<Self> {
        if data.nrows() == 0 || data.ncols() == 0 {
            return Err(Error::Invalid(format!(
                "feature matrix must be non-empty, got {}x{}",
                data.nrows(),
                data.ncols()
            )));
        }
        if labels.len() != data.nrows() || row_ids.len() != data.nrows() {
            return Err(Error::Invalid(format!(
                "{} rows but {} row ids and {} labels",
                data.nrows(),
                row_ids.len(),
                labels.len()
            )));
        }
        Ok(Self {
            data,
            row_ids,
            labels,
        })
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn nrows(&self) -> usize {
        self.data.nrows()
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    pub fn row_ids(&self) -> &[String] {
        &self.row_ids
    }

    pub fn labels(&self) -> &[ClassId] {
        &self.labels
    }

    pub fn row(&self, i: usize) -> DVector<f64> {
        self.data.row(i).transpose()
    }

    /// Row indices of every sample labelled `class`, in file order.
    pub fn rows_of(&self, class: &str) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, l)| l.as_str() == class)
            .map(|(i, _)| i)
            .collect()
    }

    /// Row indices grouped per label, labels in first-appearance order.
    pub fn group_by_label(&self) -> Vec<(ClassId, Vec<usize>)> {
        let mut order: Vec<(ClassId, Vec<usize>)> = Vec::new();
        let mut slot: HashMap<&str, usize> = HashMap::new();
        for (i, l) in self.labels.iter().enumerate() {
            let k = *slot.entry(l.as_str()).or_insert_with(|| {
                order.push((l.clone(), Vec::new()));
                order.len() - 1
            });
            order[k].1.push(i);
        }
        order
    }

    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        let data = DMatrix::from_fn(rows.len(), self.dim(), |i, j| self.data[(rows[i], j)]);
        FeatureMatrix::new(
            data,
            rows.iter().map(|&r| self.row_ids[r].clone()).collect(),
            rows.iter().map(|&r| self.labels[r].clone()).collect(),
        )
    }

    pub fn validate(&self) -> Vec<ValidationIssue> {
        non_finite_issues("samples", &self.data)
    }
}

/// Where a prototype row came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Origin {
    GivenBase,
    EstimatedNovel,
    OracleNovel,
    SampleMean,
}

impl Origin {
    pub fn as_str(self) -> &'static str {
        match self {
            Origin::GivenBase => "given-base",
            Origin::EstimatedNovel => "estimated-novel",
            Origin::OracleNovel => "oracle-novel",
            Origin::SampleMean => "sample-mean",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "given-base" => Some(Origin::GivenBase),
            "estimated-novel" => Some(Origin::EstimatedNovel),
            "oracle-novel" => Some(Origin::OracleNovel),
            "sample-mean" => Some(Origin::SampleMean),
            _ => None,
        }
    }
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One prototype row per class. Class ids are opaque strings mapped to dense
/// row indices.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeSet {
    matrix: DMatrix<f64>,
    class_ids: Vec<ClassId>,
    origins: Vec<Origin>,
    index: HashMap<ClassId, usize>,
}

impl PrototypeSet {
    /// Checks shape only; duplicates and non-finite entries are reported by
    /// [`PrototypeSet::validate`]. With duplicate ids, lookup resolves to the
    /// first row.
    pub fn new(matrix: DMatrix<f64>, class_ids: Vec<ClassId>, origins: Vec<Origin>) -> Result<Self> {
        if matrix.nrows() == 0 || matrix.ncols() == 0 {
            return Err(Error::Invalid(format!(
                "prototype matrix must be non-empty, got {}x{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        if class_ids.len() != matrix.nrows() || origins.len() != matrix.nrows() {
            return Err(Error::Invalid(format!(
                "{} prototype rows but {} class ids and {} origin tags",
                matrix.nrows(),
                class_ids.len(),
                origins.len()
            )));
        }
        let mut index = HashMap::with_capacity(class_ids.len());
        for (i, c) in class_ids.iter().enumerate() {
            index.entry(c.clone()).or_insert(i);
        }
        Ok(Self {
            matrix,
            class_ids,
            origins,
            index,
        })
    }

    pub fn with_origin(matrix: DMatrix<f64>, class_ids: Vec<ClassId>, origin: Origin) -> Result<Self> {
        let n = class_ids.len();
        Self::new(matrix, class_ids, vec![origin; n])
    }

    pub fn from_rows(rows: &[DVector<f64>], class_ids: Vec<ClassId>, origins: Vec<Origin>) -> Result<Self> {
        let d = rows.first().map(|r| r.len()).unwrap_or(0);
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::Invalid("prototype rows differ in length".into()));
        }
        let matrix = DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]);
        Self::new(matrix, class_ids, origins)
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn len(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn class_ids(&self) -> &[ClassId] {
        &self.class_ids
    }

    pub fn class_id(&self, i: usize) -> &str {
        &self.class_ids[i]
    }

    pub fn origins(&self) -> &[Origin] {
        &self.origins
    }

    pub fn index_of(&self, class: &str) -> Option<usize> {
        self.index.get(class).copied()
    }

    pub fn row(&self, i: usize) -> DVector<f64> {
        self.matrix.row(i).transpose()
    }

    pub fn rows(&self) -> Vec<DVector<f64>> {
        (0..self.len()).map(|i| self.row(i)).collect()
    }

    /// Rows in the order of `indices`.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let matrix = DMatrix::from_fn(indices.len(), self.dim(), |i, j| self.matrix[(indices[i], j)]);
        Self::new(
            matrix,
            indices.iter().map(|&i| self.class_ids[i].clone()).collect(),
            indices.iter().map(|&i| self.origins[i]).collect(),
        )
    }

    /// Rows for the named classes, in the given order.
    pub fn select(&self, classes: &[ClassId]) -> Result<Self> {
        let idx = classes
            .iter()
            .map(|c| {
                self.index_of(c)
                    .ok_or_else(|| Error::Invalid(format!("no prototype for class `{c}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        self.subset(&idx)
    }

    /// `self` followed by `other`.
    pub fn concat(&self, other: &PrototypeSet) -> Result<Self> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: other.dim(),
            });
        }
        let n = self.len();
        let matrix = DMatrix::from_fn(n + other.len(), self.dim(), |i, j| {
            if i < n {
                self.matrix[(i, j)]
            } else {
                other.matrix[(i - n, j)]
            }
        });
        let mut ids = self.class_ids.clone();
        ids.extend(other.class_ids.iter().cloned());
        let mut origins = self.origins.clone();
        origins.extend(other.origins.iter().copied());
        Self::new(matrix, ids, origins)
    }

    pub fn validate(&self) -> Vec<ValidationIssue> {
        let mut issues = non_finite_issues("prototypes", &self.matrix);
        let mut seen = BTreeSet::new();
        for c in &self.class_ids {
            if !seen.insert(c.as_str()) {
                issues.push(ValidationIssue::DuplicateClass(c.clone()));
            }
        }
        issues
    }
}

/// How the initial Markov state is formed from test-sample distances.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitialStateRule {
    /// `exp(-d)` normalised; nearer prototypes get more mass.
    #[default]
    NegExp,
    /// Raw distances normalised. Kept for comparison only.
    Distance,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    /// Number of neighbouring base prototypes (and local subspaces).
    pub r: usize,
    /// Neighbours per neighbour; local subspaces have dimension `q + 1`.
    pub q: usize,
    /// Out-degree of the prototype graph before symmetrisation.
    pub k_prime: usize,
    pub alpha1: f64,
    pub alpha2: f64,
    pub rank_tol: f64,
    pub equilibrium_tol: f64,
    /// Bandwidth of the direct-contribution weights `exp(-d / bandwidth)`.
    #[serde(default = "default_bandwidth")]
    pub bandwidth: f64,
    #[serde(default)]
    pub initial_state: InitialStateRule,
}

fn default_bandwidth() -> f64 {
    1.0
}

impl HyperParams {
    /// `r=20, q=20, k'=3, α1=0.9, α2=0.7`.
    pub fn imagenet() -> Self {
        Self {
            r: 20,
            q: 20,
            k_prime: 3,
            alpha1: 0.9,
            alpha2: 0.7,
            rank_tol: 1e-8,
            equilibrium_tol: 1e-10,
            bandwidth: 1.0,
            initial_state: InitialStateRule::NegExp,
        }
    }

    /// `r=20, q=20, k'=5, α1=0.5, α2=0.5`.
    pub fn cub() -> Self {
        Self {
            k_prime: 5,
            alpha1: 0.5,
            alpha2: 0.5,
            ..Self::imagenet()
        }
    }

    pub fn profile(name: &str) -> Option<Self> {
        match name.to_ascii_lowercase().as_str() {
            "imagenet" => Some(Self::imagenet()),
            "cub" | "cub200" | "cub-200" => Some(Self::cub()),
            _ => None,
        }
    }

    /// Checks that do not depend on the data.
    pub fn validate(&self) -> Vec<ValidationIssue> {
        let mut issues = Vec::new();
        for (name, v) in [("r", self.r), ("q", self.q), ("k_prime", self.k_prime)] {
            if v == 0 {
                issues.push(ValidationIssue::NonPositive(name));
            }
        }
        for (name, a) in [("alpha1", self.alpha1), ("alpha2", self.alpha2)] {
            if !(0.0..=1.0).contains(&a) {
                issues.push(ValidationIssue::AlphaOutOfRange { name, value: a });
            }
        }
        for (name, t) in [
            ("rank_tol", self.rank_tol),
            ("equilibrium_tol", self.equilibrium_tol),
            ("bandwidth", self.bandwidth),
        ] {
            if !(t > 0.0 && t.is_finite()) {
                issues.push(ValidationIssue::BadTolerance { name, value: t });
            }
        }
        issues
    }
}

impl Default for HyperParams {
    fn default() -> Self {
        Self::imagenet()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub base_classes: Vec<ClassId>,
    pub novel_classes: Vec<ClassId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shots: Option<usize>,
}

impl DatasetSplit {
    pub fn new(base_classes: Vec<ClassId>, novel_classes: Vec<ClassId>, shots: Option<usize>) -> Result<Self> {
        let split = Self {
            base_classes,
            novel_classes,
            shots,
        };
        split.check()?;
        Ok(split)
    }

    pub fn check(&self) -> Result<()> {
        if self.base_classes.is_empty() || self.novel_classes.is_empty() {
            return Err(Error::Split("base and novel class lists must be non-empty".into()));
        }
        if self.shots == Some(0) {
            return Err(Error::Split("shots must be positive".into()));
        }
        let mut seen = BTreeSet::new();
        for c in self.base_classes.iter().chain(&self.novel_classes) {
            if !seen.insert(c.as_str()) {
                let both = self.base_classes.contains(c) && self.novel_classes.contains(c);
                return Err(Error::Split(if both {
                    format!("class `{c}` is both base and novel")
                } else {
                    format!("class `{c}` listed twice")
                }));
            }
        }
        Ok(())
    }

    pub fn all_classes(&self) -> impl Iterator<Item = &ClassId> {
        self.base_classes.iter().chain(&self.novel_classes)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ValidationIssue {
    DimensionMismatch { base: usize, samples: usize },
    NonFinite { what: &'static str, row: usize, col: usize },
    DuplicateClass(ClassId),
    RExceedsBase { r: usize, n_base: usize },
    QExceedsBase { q: usize, n_base: usize },
    SubspaceExceedsDim { q: usize, d: usize },
    NonPositive(&'static str),
    AlphaOutOfRange { name: &'static str, value: f64 },
    BadTolerance { name: &'static str, value: f64 },
}

impl fmt::Display for ValidationIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ValidationIssue::DimensionMismatch { base, samples } => {
                write!(f, "dimension mismatch: prototypes have d={base}, samples have d={samples}")
            }
            ValidationIssue::NonFinite { what, row, col } => {
                write!(f, "non-finite entry in {what} at ({row}, {col})")
            }
            ValidationIssue::DuplicateClass(c) => write!(f, "duplicate class id `{c}`"),
            ValidationIssue::RExceedsBase { r, n_base } => {
                write!(f, "r exceeds n_b: r={r}, n_b={n_base}")
            }
            ValidationIssue::QExceedsBase { q, n_base } => {
                write!(f, "q exceeds n_b - 1: q={q}, n_b={n_base}")
            }
            ValidationIssue::SubspaceExceedsDim { q, d } => {
                write!(f, "q + 1 exceeds feature dimension: q={q}, d={d}")
            }
            ValidationIssue::NonPositive(name) => write!(f, "{name} must be positive"),
            ValidationIssue::AlphaOutOfRange { name, value } => {
                write!(f, "{name}={value} outside [0, 1]")
            }
            ValidationIssue::BadTolerance { name, value } => {
                write!(f, "{name}={value} must be positive and finite")
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub issues: Vec<ValidationIssue>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.issues.is_empty()
    }

    pub fn into_result(self) -> Result<()> {
        if self.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(self))
        }
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, issue) in self.issues.iter().enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{issue}")?;
        }
        Ok(())
    }
}

/// Lists every reason the episode cannot run. An empty report means it can.
pub fn validate_episode(base: &PrototypeSet, novel_samples: &FeatureMatrix, hp: &HyperParams) -> ValidationReport {
    let mut issues = hp.validate();
    issues.extend(base.validate());
    issues.extend(novel_samples.validate());
    if base.dim() != novel_samples.dim() {
        issues.push(ValidationIssue::DimensionMismatch {
            base: base.dim(),
            samples: novel_samples.dim(),
        });
    }
    let n_base = base.len();
    if hp.r > n_base {
        issues.push(ValidationIssue::RExceedsBase { r: hp.r, n_base });
    }
    if hp.q + 1 > n_base {
        issues.push(ValidationIssue::QExceedsBase { q: hp.q, n_base });
    }
    if hp.q + 1 > base.dim() {
        issues.push(ValidationIssue::SubspaceExceedsDim { q: hp.q, d: base.dim() });
    }
    ValidationReport { issues }
}

/// Arithmetic mean of the given rows.
pub fn mean_shot(samples: &FeatureMatrix, rows: &[usize]) -> Result<DVector<f64>> {
    if rows.is_empty() {
        let class = samples.labels().first().cloned().unwrap_or_default();
        return Err(Error::EmptyClass(class));
    }
    let mut acc = DVector::zeros(samples.dim());
    for &r in rows {
        for (a, v) in acc.iter_mut().zip(samples.data().row(r).iter()) {
            *a += v;
        }
    }
    Ok(acc / rows.len() as f64)
}

/// Mean of every row in `samples`.
pub fn mean_of_all(samples: &FeatureMatrix) -> DVector<f64> {
    let rows: Vec<usize> = (0..samples.nrows()).collect();
    mean_shot(samples, &rows).expect("feature matrices are non-empty")
}

fn non_finite_issues(what: &'static str, m: &DMatrix<f64>) -> Vec<ValidationIssue> {
    let mut issues = Vec::new();
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if !m[(i, j)].is_finite() {
                issues.push(ValidationIssue::NonFinite { what, row: i, col: j });
            }
        }
    }
    issues
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn protos(n: usize, d: usize) -> PrototypeSet {
        let m = DMatrix::from_fn(n, d, |i, j| (i * d + j) as f64);
        PrototypeSet::with_origin(m, (0..n).map(|i| format!("b{i}")).collect(), Origin::GivenBase).unwrap()
    }

    fn samples(n: usize, d: usize) -> FeatureMatrix {
        let m = DMatrix::from_fn(n, d, |i, j| (i + j) as f64 * 0.5);
        FeatureMatrix::new(
            m,
            (0..n).map(|i| format!("s{i}")).collect(),
            (0..n).map(|i| format!("n{i}")).collect(),
        )
        .unwrap()
    }

    fn hp_with_r(r: usize) -> HyperParams {
        HyperParams {
            r,
            q: 3,
            ..HyperParams::imagenet()
        }
    }

    #[test]
    fn clean_episode_has_empty_report() {
        let report = validate_episode(&protos(10, 5), &samples(3, 5), &hp_with_r(4));
        assert!(report.is_empty(), "{report}");
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let report = validate_episode(&protos(10, 5), &samples(3, 6), &hp_with_r(4));
        assert!(report
            .issues
            .contains(&ValidationIssue::DimensionMismatch { base: 5, samples: 6 }));
    }

    #[test]
    fn r_exceeding_base_is_reported() {
        let report = validate_episode(&protos(10, 5), &samples(3, 5), &hp_with_r(20));
        assert!(report.issues.contains(&ValidationIssue::RExceedsBase { r: 20, n_base: 10 }));
        assert!(report.to_string().contains("r exceeds n_b"));
    }

    #[test]
    fn non_finite_and_duplicates_are_reported() {
        let mut m = DMatrix::from_element(3, 2, 1.0);
        m[(1, 0)] = f64::NAN;
        let base = PrototypeSet::with_origin(m, vec!["a".into(), "b".into(), "a".into()], Origin::GivenBase).unwrap();
        let hp = HyperParams {
            r: 1,
            q: 1,
            ..HyperParams::imagenet()
        };
        let report = validate_episode(&base, &samples(1, 2), &hp);
        assert!(report.issues.contains(&ValidationIssue::NonFinite {
            what: "prototypes",
            row: 1,
            col: 0
        }));
        assert!(report.issues.contains(&ValidationIssue::DuplicateClass("a".into())));
        // every violation is listed, not just the first
        assert_eq!(report.issues.len(), 2);
    }

    #[test]
    fn bad_alpha_reported() {
        let hp = HyperParams {
            alpha1: 1.5,
            ..hp_with_r(2)
        };
        let report = validate_episode(&protos(10, 5), &samples(3, 5), &hp);
        assert!(matches!(report.issues[0], ValidationIssue::AlphaOutOfRange { name: "alpha1", .. }));
    }

    #[test]
    fn validation_is_pure() {
        let (b, s, hp) = (protos(10, 5), samples(3, 6), hp_with_r(20));
        assert_eq!(validate_episode(&b, &s, &hp), validate_episode(&b, &s, &hp));
    }

    fn fm(rows: &[&[f64]]) -> FeatureMatrix {
        let d = rows[0].len();
        let m = DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]);
        let n = rows.len();
        FeatureMatrix::new(m, (0..n).map(|i| i.to_string()).collect(), vec!["c".into(); n]).unwrap()
    }

    #[test]
    fn mean_shot_examples() {
        let one = fm(&[&[1.0, 2.0, 3.0]]);
        assert_eq!(mean_shot(&one, &[0]).unwrap().as_slice(), &[1.0, 2.0, 3.0]);
        let two = fm(&[&[0.0, 0.0], &[2.0, 4.0]]);
        assert_eq!(mean_shot(&two, &[0, 1]).unwrap().as_slice(), &[1.0, 2.0]);
        let three = fm(&[&[1.0, 1.0], &[2.0, 2.0], &[3.0, 3.0]]);
        assert_eq!(mean_of_all(&three).as_slice(), &[2.0, 2.0]);
    }

    #[test]
    fn mean_shot_empty_is_error() {
        let one = fm(&[&[1.0]]);
        assert!(matches!(mean_shot(&one, &[]), Err(Error::EmptyClass(_))));
    }

    #[test]
    fn split_rejects_overlap() {
        assert!(DatasetSplit::new(vec!["a".into(), "b".into()], vec!["c".into()], None).is_ok());
        let err = DatasetSplit::new(vec!["a".into()], vec!["a".into()], None).unwrap_err();
        assert!(matches!(err, Error::Split(_)));
        assert!(DatasetSplit::new(vec![], vec!["a".into()], None).is_err());
    }

    #[test]
    fn profiles() {
        let i = HyperParams::profile("imagenet").unwrap();
        assert_eq!((i.r, i.q, i.k_prime, i.alpha1, i.alpha2), (20, 20, 3, 0.9, 0.7));
        let c = HyperParams::profile("cub").unwrap();
        assert_eq!((c.r, c.q, c.k_prime, c.alpha1, c.alpha2), (20, 20, 5, 0.5, 0.5));
        assert!(HyperParams::profile("omniglot").is_none());
    }

    proptest! {
        #[test]
        fn mean_shot_permutation_invariant(
            vals in proptest::collection::vec(-100.0f64..100.0, 12),
            seed in any::<u64>(),
        ) {
            let m = DMatrix::from_row_slice(4, 3, &vals);
            let f = FeatureMatrix::new(m, (0..4).map(|i| i.to_string()).collect(), vec!["c".into(); 4]).unwrap();
            let mut perm: Vec<usize> = (0..4).collect();
            crate::rng::SplitMix64::new(seed).shuffle(&mut perm);
            let a = mean_shot(&f, &[0, 1, 2, 3]).unwrap();
            let b = mean_shot(&f, &perm).unwrap();
            prop_assert!((a - b).amax() <= 1e-12);
        }
    }
}
