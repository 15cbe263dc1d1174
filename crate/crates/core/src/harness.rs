//! Evaluation protocol: episode sampling, the five model variants,
//! class-wise averaged accuracy and standard error over seeded trials, and
//! parameter sweeps.
//!
//! Trial `t` of a run with master seed `s` uses the seed
//! `derive_seed(s, 17, t)` for every cell, so series along a sweep are
//! paired. Within a trial each novel class shuffles its training rows with
//! the substream `(trial_seed, 16, class_key)` and takes a prefix, so a
//! larger shot count extends the smaller one's draw.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataio::Dataset;
use crate::error::{Error, Result};
use crate::markov::{self, TwoPassClassifier};
use crate::par::{self, Parallelism};
use crate::rng::{self, SplitMix64};
use crate::subspace::{self, Estimate};
use crate::types::{mean_shot, ClassId, DatasetSplit, FeatureMatrix, HyperParams, Origin, PrototypeSet};

const TAG_SHOTS: u32 = 16;
const TAG_TRIAL: u32 = 17;

/// Retries allowed after a rank-deficient local subspace, each with `q - 1`.
pub const RANK_RETRIES: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Variant {
    /// Nearest neighbour on shot means.
    #[serde(rename = "NA")]
    Na,
    /// Nearest neighbour on estimated prototypes.
    M1,
    /// Two-pass Markov classification on shot means.
    M2,
    /// Two-pass Markov classification on estimated prototypes.
    #[serde(rename = "M1_M2")]
    M1M2,
    /// Nearest neighbour on the true novel prototypes.
    #[serde(rename = "ORACLE")]
    Oracle,
}

impl Variant {
    pub const ALL: [Variant; 5] = [Variant::Na, Variant::M1, Variant::M1M2, Variant::M2, Variant::Oracle];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Na => "NA",
            Variant::M1 => "M1",
            Variant::M2 => "M2",
            Variant::M1M2 => "M1_M2",
            Variant::Oracle => "ORACLE",
        }
    }

    fn uses_estimates(self) -> bool {
        matches!(self, Variant::M1 | Variant::M1M2)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "NA" => Ok(Variant::Na),
            "M1" => Ok(Variant::M1),
            "M2" => Ok(Variant::M2),
            "M1_M2" | "M1+M2" | "M1M2" => Ok(Variant::M1M2),
            "ORACLE" => Ok(Variant::Oracle),
            other => Err(Error::Invalid(format!("unknown variant `{other}`"))),
        }
    }
}

/// One sampled evaluation instance.
#[derive(Debug, Clone)]
pub struct Episode {
    pub base: PrototypeSet,
    /// Drawn training rows (indices into the dataset's train pool) per novel
    /// class, in split order.
    pub shots: Vec<(ClassId, Vec<usize>)>,
    /// Shot means, origin `sample-mean`.
    pub shot_means: PrototypeSet,
    /// True novel prototypes, or full-pool means when the dataset has none.
    pub oracle: PrototypeSet,
    pub test: FeatureMatrix,
}

/// Stable 64-bit key of a class id: first 8 bytes (LE) of its SHA-256.
pub fn class_key(class: &str) -> u64 {
    let digest = Sha256::digest(class.as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

pub fn trial_seed(master_seed: u64, trial: usize) -> u64 {
    rng::derive_seed(master_seed, TAG_TRIAL, trial as u64)
}

/// Shot rows for one class: the class's rows shuffled with its substream,
/// first `shots` kept.
pub fn draw_shots(rows: &[usize], class: &str, shots: usize, trial_seed: u64) -> Result<Vec<usize>> {
    if rows.len() < shots {
        return Err(Error::InsufficientShots {
            class: class.to_string(),
            requested: shots,
            available: rows.len(),
        });
    }
    let mut perm = rows.to_vec();
    SplitMix64::substream(trial_seed, TAG_SHOTS, class_key(class)).shuffle(&mut perm);
    perm.truncate(shots);
    Ok(perm)
}

pub fn sample_episode(dataset: &Dataset, split: &DatasetSplit, shots: usize, trial_seed: u64, test_cap: Option<usize>) -> Result<Episode> {
    if shots == 0 {
        return Err(Error::Invalid("shots must be positive".into()));
    }
    split.check()?;
    let mut base = dataset.prototypes.select(&split.base_classes)?;
    if base.origins().iter().any(|&o| o != Origin::GivenBase) {
        base = PrototypeSet::with_origin(base.matrix().clone(), base.class_ids().to_vec(), Origin::GivenBase)?;
    }

    let pools: HashMap<ClassId, Vec<usize>> = dataset.train.group_by_label().into_iter().collect();
    let empty = Vec::new();
    let mut drawn = Vec::with_capacity(split.novel_classes.len());
    let mut means = Vec::with_capacity(split.novel_classes.len());
    let mut oracle = Vec::with_capacity(split.novel_classes.len());
    let mut oracle_origin = Vec::with_capacity(split.novel_classes.len());
    for class in &split.novel_classes {
        let pool = pools.get(class).unwrap_or(&empty);
        let rows = draw_shots(pool, class, shots, trial_seed)?;
        means.push(mean_shot(&dataset.train, &rows)?);
        match dataset.oracle_prototype(class) {
            Some(i) => {
                oracle.push(dataset.prototypes.row(i));
                oracle_origin.push(Origin::OracleNovel);
            }
            None => {
                oracle.push(mean_shot(&dataset.train, pool)?);
                oracle_origin.push(Origin::SampleMean);
            }
        }
        drawn.push((class.clone(), rows));
    }
    let shot_means = PrototypeSet::from_rows(&means, split.novel_classes.clone(), vec![Origin::SampleMean; means.len()])?;
    let oracle = PrototypeSet::from_rows(&oracle, split.novel_classes.clone(), oracle_origin)?;

    let active: HashMap<&str, usize> = split.all_classes().map(|c| (c.as_str(), 0)).collect();
    let mut taken = active;
    let mut test_rows = Vec::new();
    for (i, label) in dataset.test.labels().iter().enumerate() {
        if let Some(n) = taken.get_mut(label.as_str()) {
            if test_cap.is_none_or(|cap| *n < cap) {
                *n += 1;
                test_rows.push(i);
            }
        }
    }
    if test_rows.is_empty() {
        return Err(Error::Invalid("no test samples for the active classes".into()));
    }
    let test = dataset.test.select_rows(&test_rows)?;
    Ok(Episode {
        base,
        shots: drawn,
        shot_means,
        oracle,
        test,
    })
}

/// [`subspace::estimate_prototype`] with the rank-deficiency policy: on
/// `RankDeficient` retry with `q - 1`, at most [`RANK_RETRIES`] times.
pub fn estimate_with_retry(x: &DVector<f64>, base: &PrototypeSet, hp: &HyperParams) -> Result<Estimate> {
    let mut hp = *hp;
    let mut retries = 0;
    loop {
        match subspace::estimate_prototype(x, base, &hp) {
            Err(Error::RankDeficient { .. }) if retries < RANK_RETRIES && hp.q > 1 => {
                hp.q -= 1;
                retries += 1;
            }
            other => return other,
        }
    }
}

/// Estimated prototypes for every novel class of the episode.
pub fn estimate_novel(episode: &Episode, hp: &HyperParams, parallelism: Parallelism) -> Result<(PrototypeSet, Vec<Estimate>)> {
    let means = &episode.shot_means;
    let estimates = par::map_range(means.len(), parallelism, |i| {
        estimate_with_retry(&means.row(i), &episode.base, hp).map_err(|e| Error::Estimation {
            class: means.class_id(i).to_string(),
            source: Box::new(e),
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let rows: Vec<DVector<f64>> = estimates.iter().map(|e| e.prototype.clone()).collect();
    let set = PrototypeSet::from_rows(&rows, means.class_ids().to_vec(), vec![Origin::EstimatedNovel; rows.len()])?;
    Ok((set, estimates))
}

fn predict_nn(prototypes: &PrototypeSet, test: &FeatureMatrix, parallelism: Parallelism) -> Result<Vec<ClassId>> {
    par::map_range(test.nrows(), parallelism, |i| {
        markov::classify_nn(&test.row(i), prototypes).map(|k| prototypes.class_id(k).to_string())
    })
    .into_iter()
    .collect()
}

fn predict_two_pass(base: &PrototypeSet, novel: &PrototypeSet, test: &FeatureMatrix, hp: &HyperParams, parallelism: Parallelism) -> Result<Vec<ClassId>> {
    let all = base.concat(novel)?;
    let base_ids: Vec<usize> = (0..base.len()).collect();
    let novel_ids: Vec<usize> = (base.len()..all.len()).collect();
    let classifier = TwoPassClassifier::new(&all, &base_ids, &novel_ids, hp)?;
    par::map_range(test.nrows(), parallelism, |i| {
        classifier
            .classify(&test.row(i))
            .map(|d| all.class_id(d.class).to_string())
    })
    .into_iter()
    .collect()
}

fn predict_with(variant: Variant, episode: &Episode, estimated: Option<&PrototypeSet>, hp: &HyperParams, parallelism: Parallelism) -> Result<Vec<ClassId>> {
    let novel = match variant {
        Variant::Na | Variant::M2 => &episode.shot_means,
        Variant::Oracle => &episode.oracle,
        Variant::M1 | Variant::M1M2 => estimated.expect("estimates computed for M1 variants"),
    };
    match variant {
        Variant::Na | Variant::M1 | Variant::Oracle => predict_nn(&episode.base.concat(novel)?, &episode.test, parallelism),
        Variant::M2 | Variant::M1M2 => predict_two_pass(&episode.base, novel, &episode.test, hp, parallelism),
    }
}

/// Predicted class id for every test sample of the episode.
pub fn run_variant(variant: Variant, episode: &Episode, hp: &HyperParams) -> Result<Vec<ClassId>> {
    let estimated = if variant.uses_estimates() {
        Some(estimate_novel(episode, hp, Parallelism::Sequential)?.0)
    } else {
        None
    };
    predict_with(variant, episode, estimated.as_ref(), hp, Parallelism::Sequential)
}

/// Mean over classes of per-class accuracy, in percent. Classes are those
/// present in `truth`.
pub fn classwise_accuracy(predictions: &[ClassId], truth: &[ClassId]) -> Result<f64> {
    let mut classes: Vec<ClassId> = Vec::new();
    for t in truth {
        if !classes.contains(t) {
            classes.push(t.clone());
        }
    }
    classwise_accuracy_for(predictions, truth, &classes)
}

/// Class-wise accuracy over an explicit class list; every listed class must
/// have at least one sample in `truth`.
pub fn classwise_accuracy_for(predictions: &[ClassId], truth: &[ClassId], classes: &[ClassId]) -> Result<f64> {
    if predictions.len() != truth.len() {
        return Err(Error::Invalid(format!(
            "{} predictions for {} labels",
            predictions.len(),
            truth.len()
        )));
    }
    if classes.is_empty() {
        return Err(Error::EmptyClass(String::new()));
    }
    let slot: HashMap<&str, usize> = classes.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();
    let mut hits = vec![0usize; classes.len()];
    let mut totals = vec![0usize; classes.len()];
    for (p, t) in predictions.iter().zip(truth) {
        if let Some(&k) = slot.get(t.as_str()) {
            totals[k] += 1;
            if p == t {
                hits[k] += 1;
            }
        }
    }
    if let Some(k) = totals.iter().position(|&n| n == 0) {
        return Err(Error::EmptyClass(classes[k].clone()));
    }
    let sum: f64 = hits.iter().zip(&totals).map(|(&h, &n)| h as f64 / n as f64).sum();
    Ok(100.0 * sum / classes.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    /// Sample standard deviation over `√n`; zero for one trial.
    pub std_error: f64,
}

pub fn aggregate(values: &[f64]) -> Summary {
    let n = values.len();
    if n == 0 {
        return Summary {
            mean: f64::NAN,
            std_error: f64::NAN,
        };
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return Summary { mean, std_error: 0.0 };
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    Summary {
        mean,
        std_error: (var / n as f64).sqrt(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub variants: Vec<Variant>,
    pub shots: Vec<usize>,
    pub trials: usize,
    pub seed: u64,
    pub hp: HyperParams,
    /// Maximum test samples per class, taken in file order.
    pub test_cap: Option<usize>,
    /// Value of the `config` column for plain evaluations.
    pub label: String,
    #[serde(skip)]
    pub parallelism: Parallelism,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            variants: Variant::ALL.to_vec(),
            shots: vec![1],
            trials: 10,
            seed: 0,
            hp: HyperParams::default(),
            test_cap: None,
            label: "default".into(),
            parallelism: Parallelism::Parallel,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialFailure {
    pub trial: usize,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub variant: Variant,
    pub config: String,
    pub shot: usize,
    /// Trials that completed.
    pub trial_count: usize,
    /// Percent; `None` when every trial failed.
    pub mean_accuracy: Option<f64>,
    pub std_error: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub failures: Vec<TrialFailure>,
    /// Per-trial accuracies, trial order, failed trials skipped.
    pub accuracies: Vec<f64>,
}

impl ReportRow {
    pub fn failed(&self) -> bool {
        self.trial_count == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub hp: HyperParams,
    pub seed: u64,
    pub trials: usize,
    pub dataset: String,
    pub test_cap: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub axis: Option<SweepAxis>,
    pub version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<ReportRow>,
    pub provenance: Provenance,
}

impl EvalReport {
    pub fn row(&self, variant: Variant, config: &str, shot: usize) -> Option<&ReportRow> {
        self.rows
            .iter()
            .find(|r| r.variant == variant && r.config == config && r.shot == shot)
    }

    pub fn all_failed(&self) -> bool {
        !self.rows.is_empty() && self.rows.iter().all(ReportRow::failed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Shots,
    BaseRatio,
    TotalClasses,
    R,
    Alpha1,
    Alpha2,
}

impl SweepAxis {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepAxis::Shots => "shots",
            SweepAxis::BaseRatio => "base_ratio",
            SweepAxis::TotalClasses => "total_classes",
            SweepAxis::R => "r",
            SweepAxis::Alpha1 => "alpha1",
            SweepAxis::Alpha2 => "alpha2",
        }
    }
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "shots" => Ok(SweepAxis::Shots),
            "base_ratio" | "ratio" => Ok(SweepAxis::BaseRatio),
            "total_classes" | "total" => Ok(SweepAxis::TotalClasses),
            "r" => Ok(SweepAxis::R),
            "alpha1" => Ok(SweepAxis::Alpha1),
            "alpha2" => Ok(SweepAxis::Alpha2),
            other => Err(Error::Invalid(format!("unknown sweep axis `{other}`"))),
        }
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One column of a report: a split, hyperparameters and shot count.
#[derive(Debug, Clone)]
struct Cell {
    label: String,
    split: DatasetSplit,
    hp: HyperParams,
    shots: usize,
}

fn check_cell(dataset: &Dataset, cell: &Cell, variants: &[Variant]) -> Result<()> {
    let mut issues = cell.hp.validate();
    let n_base = cell.split.base_classes.len();
    let n_all = n_base + cell.split.novel_classes.len();
    let needs_estimates = variants.iter().any(|v| v.uses_estimates());
    let needs_graph = variants.iter().any(|v| matches!(v, Variant::M2 | Variant::M1M2));
    if needs_estimates {
        use crate::types::ValidationIssue as V;
        if cell.hp.r > n_base {
            issues.push(V::RExceedsBase { r: cell.hp.r, n_base });
        }
        if cell.hp.q + 1 > n_base {
            issues.push(V::QExceedsBase { q: cell.hp.q, n_base });
        }
        if cell.hp.q + 1 > dataset.dim() {
            issues.push(V::SubspaceExceedsDim {
                q: cell.hp.q,
                d: dataset.dim(),
            });
        }
    }
    crate::types::ValidationReport { issues }.into_result()?;
    if needs_graph && cell.hp.k_prime >= n_all {
        return Err(Error::Invalid(format!(
            "k'={} needs more than {n_all} prototypes",
            cell.hp.k_prime
        )));
    }
    for c in &cell.split.base_classes {
        if dataset.prototypes.index_of(c).is_none() {
            return Err(Error::Invalid(format!("base class `{c}` has no prototype")));
        }
    }
    Ok(())
}

/// Accuracy per requested variant for one trial of one cell.
fn run_trial(dataset: &Dataset, cell: &Cell, variants: &[Variant], trial: usize, seed: u64, test_cap: Option<usize>) -> Vec<std::result::Result<f64, String>> {
    let episode = match sample_episode(dataset, &cell.split, cell.shots, trial_seed(seed, trial), test_cap) {
        Ok(e) => e,
        Err(e) => return variants.iter().map(|_| Err(e.to_string())).collect(),
    };
    let truth = episode.test.labels();
    let classes: Vec<ClassId> = cell.split.all_classes().cloned().collect();
    let present: Vec<ClassId> = classes.into_iter().filter(|c| truth.contains(c)).collect();
    let estimated = if variants.iter().any(|v| v.uses_estimates()) {
        Some(estimate_novel(&episode, &cell.hp, Parallelism::Sequential).map(|(s, _)| s))
    } else {
        None
    };
    variants
        .iter()
        .map(|&v| {
            let est = match (&estimated, v.uses_estimates()) {
                (Some(Err(e)), true) => return Err(e.to_string()),
                (Some(Ok(s)), true) => Some(s),
                _ => None,
            };
            predict_with(v, &episode, est, &cell.hp, Parallelism::Sequential)
                .and_then(|pred| classwise_accuracy_for(&pred, truth, &present))
                .map_err(|e| e.to_string())
        })
        .collect()
}

fn run_cells(dataset: &Dataset, cells: &[Cell], cfg: &EvalConfig, axis: Option<SweepAxis>) -> Result<EvalReport> {
    if cfg.trials == 0 {
        return Err(Error::Invalid("trials must be at least 1".into()));
    }
    if cfg.variants.is_empty() {
        return Err(Error::Invalid("no variants requested".into()));
    }
    if cfg.test_cap == Some(0) {
        return Err(Error::Invalid("test cap must be positive".into()));
    }
    for cell in cells {
        check_cell(dataset, cell, &cfg.variants)?;
    }
    let jobs = cells.len() * cfg.trials;
    let outcomes = par::map_range(jobs, cfg.parallelism, |job| {
        let (c, t) = (job / cfg.trials, job % cfg.trials);
        run_trial(dataset, &cells[c], &cfg.variants, t, cfg.seed, cfg.test_cap)
    });

    let mut rows = Vec::with_capacity(cells.len() * cfg.variants.len());
    for (c, cell) in cells.iter().enumerate() {
        for (k, &variant) in cfg.variants.iter().enumerate() {
            let mut accuracies = Vec::new();
            let mut failures = Vec::new();
            for t in 0..cfg.trials {
                match &outcomes[c * cfg.trials + t][k] {
                    Ok(a) => accuracies.push(*a),
                    Err(e) => failures.push(TrialFailure {
                        trial: t,
                        error: e.clone(),
                    }),
                }
            }
            let summary = (!accuracies.is_empty()).then(|| aggregate(&accuracies));
            rows.push(ReportRow {
                variant,
                config: cell.label.clone(),
                shot: cell.shots,
                trial_count: accuracies.len(),
                mean_accuracy: summary.map(|s| s.mean),
                std_error: summary.map(|s| s.std_error),
                failures,
                accuracies,
            });
        }
    }
    Ok(EvalReport {
        rows,
        provenance: Provenance {
            hp: cfg.hp,
            seed: cfg.seed,
            trials: cfg.trials,
            dataset: dataset.identity(),
            test_cap: cfg.test_cap,
            axis,
            version: env!("CARGO_PKG_VERSION").to_string(),
        },
    })
}

/// Every requested variant at every shot count in `cfg.shots`.
pub fn evaluate(dataset: &Dataset, cfg: &EvalConfig) -> Result<EvalReport> {
    let cells: Vec<Cell> = cfg
        .shots
        .iter()
        .map(|&shots| Cell {
            label: cfg.label.clone(),
            split: dataset.split.clone(),
            hp: cfg.hp,
            shots,
        })
        .collect();
    if cells.is_empty() {
        return Err(Error::Invalid("no shot counts requested".into()));
    }
    run_cells(dataset, &cells, cfg, None)
}

fn as_count(axis: SweepAxis, v: f64) -> Result<usize> {
    if v >= 1.0 && v.fract() == 0.0 && v.is_finite() {
        Ok(v as usize)
    } else {
        Err(Error::Invalid(format!("{axis} value {v} must be a positive integer")))
    }
}

fn fmt_value(v: f64) -> String {
    format!("{v}")
}

/// Varies one setting across `values`. Axes other than `shots` are crossed
/// with every entry of `cfg.shots`. The `alpha1` axis holds `α2 = 1` and the
/// `alpha2` axis holds `α1 = 1`.
pub fn sweep(dataset: &Dataset, axis: SweepAxis, values: &[f64], cfg: &EvalConfig) -> Result<EvalReport> {
    if values.is_empty() {
        return Err(Error::Invalid("sweep needs at least one value".into()));
    }
    let shot_list: Vec<usize> = if axis == SweepAxis::Shots {
        vec![0]
    } else {
        cfg.shots.clone()
    };
    if shot_list.is_empty() {
        return Err(Error::Invalid("no shot counts requested".into()));
    }
    let all: Vec<ClassId> = dataset.split.all_classes().cloned().collect();
    let mut cells = Vec::new();
    for &v in values {
        let label = format!("{}={}", axis, fmt_value(v));
        let mut hp = cfg.hp;
        let mut split = dataset.split.clone();
        let mut fixed_shots = None;
        match axis {
            SweepAxis::Shots => fixed_shots = Some(as_count(axis, v)?),
            SweepAxis::R => hp.r = as_count(axis, v)?,
            SweepAxis::Alpha1 => {
                hp.alpha1 = v;
                hp.alpha2 = 1.0;
            }
            SweepAxis::Alpha2 => {
                hp.alpha1 = 1.0;
                hp.alpha2 = v;
            }
            SweepAxis::BaseRatio => {
                if !(v > 0.0 && v < 1.0) {
                    return Err(Error::Invalid(format!("base ratio {v} outside (0, 1)")));
                }
                let n_base = (v * all.len() as f64).round() as usize;
                if n_base == 0 || n_base >= all.len() {
                    return Err(Error::Invalid(format!("base ratio {v} leaves an empty side")));
                }
                split = DatasetSplit::new(all[..n_base].to_vec(), all[n_base..].to_vec(), None)?;
            }
            SweepAxis::TotalClasses => {
                let total = as_count(axis, v)?;
                let (nb_all, nn_all) = (dataset.split.base_classes.len(), dataset.split.novel_classes.len());
                let ratio = nb_all as f64 / (nb_all + nn_all) as f64;
                let n_base = (ratio * total as f64).round() as usize;
                let n_novel = total.saturating_sub(n_base);
                if n_base == 0 || n_novel == 0 || n_base > nb_all || n_novel > nn_all {
                    return Err(Error::Invalid(format!(
                        "total of {total} classes at the split's ratio needs {n_base} base / {n_novel} novel, have {nb_all} / {nn_all}"
                    )));
                }
                split = DatasetSplit::new(
                    dataset.split.base_classes[..n_base].to_vec(),
                    dataset.split.novel_classes[..n_novel].to_vec(),
                    None,
                )?;
            }
        }
        for &s in &shot_list {
            cells.push(Cell {
                label: label.clone(),
                split: split.clone(),
                hp,
                shots: fixed_shots.unwrap_or(s),
            });
        }
    }
    run_cells(dataset, &cells, cfg, Some(axis))
}
