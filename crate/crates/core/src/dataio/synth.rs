//! Seeded synthetic datasets whose class centres lie on a curved
//! low-dimensional manifold.
//!
//! All randomness comes from [`SplitMix64`] substreams keyed by
//! `(seed, tag, index)`:
//!
//! | tag | index | draws |
//! |-----|-------|-------|
//! | 1 | 0 | `W` (d × (L+K), row-major, N(0,1)), then `b` (d, N(0,1)), then per bump `k`: `μ_k` (L, U[0,1)) and `s_k` (U[0.25, 0.5)) |
//! | 2 | class | latent point `z` (L, U[0,1)) |
//! | 3 | class | hidden pool: `hidden_pool` samples |
//! | 4 | class | training pool: `samples_per_class` samples |
//! | 5 | class | test samples: `test_per_class` samples |
//!
//! The centre of a class is `b + W h(z)` with
//! `h(z) = [z_1..z_L, exp(-‖z-μ_1‖² / 2s_1²), .., exp(-‖z-μ_K‖² / 2s_K²)]`,
//! where `L = latent_dim` and `K = curvature`. A sample is
//! `centre + spread · ε`, `ε ~ N(0, I_d)` drawn coordinate by coordinate, then
//! rounded to `f32` so the binary format stores it exactly. Prototypes are
//! exact `f64` means of the hidden pool. Classes `0..n_base` are base classes
//! (`c0000`, `c0001`, ...); the rest are novel.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::types::{DatasetSplit, FeatureMatrix, Origin, PrototypeSet};

const TAG_MAP: u32 = 1;
const TAG_LATENT: u32 = 2;
const TAG_HIDDEN: u32 = 3;
const TAG_TRAIN: u32 = 4;
const TAG_TEST: u32 = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    /// Ambient feature dimension.
    pub d: usize,
    pub latent_dim: usize,
    pub n_base: usize,
    pub n_novel: usize,
    /// Training samples per class (shots are drawn from these).
    pub samples_per_class: usize,
    pub test_per_class: usize,
    /// Samples averaged into each prototype.
    pub hidden_pool: usize,
    /// Per-coordinate noise standard deviation.
    pub spread: f64,
    /// Number of radial bumps bending the manifold.
    pub curvature: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            d: 32,
            latent_dim: 4,
            n_base: 80,
            n_novel: 20,
            samples_per_class: 50,
            test_per_class: 20,
            hidden_pool: 200,
            spread: 0.65,
            curvature: 6,
            seed: 7,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.latent_dim == 0 || self.latent_dim >= self.d {
            problems.push(format!("latent_dim must be in 1..d (latent_dim={}, d={})", self.latent_dim, self.d));
        }
        if !(self.spread > 0.0 && self.spread.is_finite()) {
            problems.push(format!("spread must be positive, got {}", self.spread));
        }
        for (name, v) in [
            ("n_base", self.n_base),
            ("n_novel", self.n_novel),
            ("samples_per_class", self.samples_per_class),
            ("test_per_class", self.test_per_class),
            ("hidden_pool", self.hidden_pool),
        ] {
            if v == 0 {
                problems.push(format!("{name} must be at least 1"));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Invalid(problems.join("; ")))
        }
    }

    pub fn n_classes(&self) -> usize {
        self.n_base + self.n_novel
    }
}

pub fn class_name(i: usize) -> String {
    format!("c{i:04}")
}

struct ManifoldMap {
    lift: DMatrix<f64>,
    offset: DVector<f64>,
    bumps: Vec<(DVector<f64>, f64)>,
}

impl ManifoldMap {
    fn draw(spec: &SyntheticSpec) -> Self {
        let mut rng = SplitMix64::substream(spec.seed, TAG_MAP, 0);
        let cols = spec.latent_dim + spec.curvature;
        let mut lift = DMatrix::zeros(spec.d, cols);
        for i in 0..spec.d {
            for j in 0..cols {
                lift[(i, j)] = rng.normal();
            }
        }
        let offset = DVector::from_fn(spec.d, |_, _| rng.normal());
        let bumps = (0..spec.curvature)
            .map(|_| {
                let mu = DVector::from_fn(spec.latent_dim, |_, _| rng.uniform());
                let s = rng.uniform_range(0.25, 0.5);
                (mu, s)
            })
            .collect();
        Self { lift, offset, bumps }
    }

    fn features(&self, z: &DVector<f64>) -> DVector<f64> {
        let l = z.len();
        DVector::from_fn(l + self.bumps.len(), |i, _| {
            if i < l {
                z[i]
            } else {
                let (mu, s) = &self.bumps[i - l];
                (-(z - mu).norm_squared() / (2.0 * s * s)).exp()
            }
        })
    }

    fn center(&self, z: &DVector<f64>) -> DVector<f64> {
        &self.offset + &self.lift * self.features(z)
    }
}

fn draw_samples(center: &DVector<f64>, spread: f64, count: usize, rng: &mut SplitMix64) -> Vec<DVector<f64>> {
    (0..count)
        .map(|_| DVector::from_fn(center.len(), |i, _| (center[i] + spread * rng.normal()) as f32 as f64))
        .collect()
}

fn mean(rows: &[DVector<f64>]) -> DVector<f64> {
    let mut acc = DVector::zeros(rows[0].len());
    for r in rows {
        acc += r;
    }
    acc / rows.len() as f64
}

#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub spec: SyntheticSpec,
    /// Base prototypes (hidden-pool means), origin `given-base`.
    pub base: PrototypeSet,
    /// Training samples of the novel classes.
    pub novel_train: FeatureMatrix,
    /// Training samples of every class.
    pub train: FeatureMatrix,
    /// Test samples of every class.
    pub test: FeatureMatrix,
    /// Novel prototypes (hidden-pool means), origin `oracle-novel`.
    pub oracle_novel: PrototypeSet,
    /// Exact manifold centres of every class.
    pub centers: PrototypeSet,
    pub split: DatasetSplit,
}

impl SyntheticDataset {
    pub fn to_dataset(&self) -> Result<Dataset> {
        Dataset::new(self.base.concat(&self.oracle_novel)?, self.train.clone(), self.test.clone(), self.split.clone())
    }
}

fn stack(rows: Vec<DVector<f64>>, ids: Vec<String>, labels: Vec<String>) -> Result<FeatureMatrix> {
    let d = rows[0].len();
    FeatureMatrix::new(DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]), ids, labels)
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticDataset> {
    spec.validate()?;
    let map = ManifoldMap::draw(spec);
    let n = spec.n_classes();
    let names: Vec<String> = (0..n).map(class_name).collect();

    let mut centers = Vec::with_capacity(n);
    let mut prototypes = Vec::with_capacity(n);
    let (mut train, mut train_ids, mut train_labels) = (Vec::new(), Vec::new(), Vec::new());
    let (mut test, mut test_ids, mut test_labels) = (Vec::new(), Vec::new(), Vec::new());
    for (c, name) in names.iter().enumerate() {
        let mut rng = SplitMix64::substream(spec.seed, TAG_LATENT, c as u64);
        let z = DVector::from_fn(spec.latent_dim, |_, _| rng.uniform());
        let center = map.center(&z);

        let hidden = draw_samples(&center, spec.spread, spec.hidden_pool, &mut SplitMix64::substream(spec.seed, TAG_HIDDEN, c as u64));
        prototypes.push(mean(&hidden));

        for s in draw_samples(&center, spec.spread, spec.samples_per_class, &mut SplitMix64::substream(spec.seed, TAG_TRAIN, c as u64)) {
            train_ids.push(format!("{}{}", super::TRAIN_PREFIX, train.len()));
            train_labels.push(name.clone());
            train.push(s);
        }
        for s in draw_samples(&center, spec.spread, spec.test_per_class, &mut SplitMix64::substream(spec.seed, TAG_TEST, c as u64)) {
            test_ids.push(format!("{}{}", super::TEST_PREFIX, test.len()));
            test_labels.push(name.clone());
            test.push(s);
        }
        centers.push(center);
    }

    let base_names = names[..spec.n_base].to_vec();
    let novel_names = names[spec.n_base..].to_vec();
    let base = PrototypeSet::from_rows(&prototypes[..spec.n_base], base_names.clone(), vec![Origin::GivenBase; spec.n_base])?;
    let oracle_novel = PrototypeSet::from_rows(&prototypes[spec.n_base..], novel_names.clone(), vec![Origin::OracleNovel; spec.n_novel])?;
    let centers = PrototypeSet::from_rows(&centers, names.clone(), vec![Origin::OracleNovel; n])?;
    let train = stack(train, train_ids, train_labels)?;
    let novel_rows: Vec<usize> = (spec.n_base * spec.samples_per_class..train.nrows()).collect();
    let novel_train = train.select_rows(&novel_rows)?;
    let test = stack(test, test_ids, test_labels)?;
    let split = DatasetSplit::new(base_names, novel_names, None)?;

    Ok(SyntheticDataset {
        spec: spec.clone(),
        base,
        novel_train,
        train,
        test,
        oracle_novel,
        centers,
        split,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SyntheticSpec {
        SyntheticSpec {
            d: 10,
            latent_dim: 2,
            n_base: 12,
            n_novel: 4,
            samples_per_class: 5,
            test_per_class: 3,
            hidden_pool: 20,
            spread: 0.3,
            curvature: 3,
            seed: 99,
        }
    }

    #[test]
    fn same_seed_same_bits() {
        let a = generate_synthetic(&small()).unwrap();
        let b = generate_synthetic(&small()).unwrap();
        assert_eq!(a.base, b.base);
        assert_eq!(a.train, b.train);
        assert_eq!(a.test, b.test);
        assert_eq!(a.oracle_novel, b.oracle_novel);
        let c = generate_synthetic(&SyntheticSpec { seed: 100, ..small() }).unwrap();
        assert_ne!(a.train, c.train);
    }

    #[test]
    fn vanishing_spread_collapses_to_centres() {
        let ds = generate_synthetic(&SyntheticSpec { spread: 1e-12, ..small() }).unwrap();
        for i in 0..ds.train.nrows() {
            let c = ds.centers.index_of(&ds.train.labels()[i]).unwrap();
            let diff = (ds.train.row(i) - ds.centers.row(c)).amax();
            // f32 rounding dominates
            assert!(diff < 1e-5 * ds.centers.row(c).amax().max(1.0), "{diff}");
        }
    }

    #[test]
    fn shapes_and_split() {
        let s = small();
        let ds = generate_synthetic(&s).unwrap();
        assert_eq!(ds.base.len(), 12);
        assert_eq!(ds.oracle_novel.len(), 4);
        assert_eq!(ds.train.nrows(), 16 * 5);
        assert_eq!(ds.novel_train.nrows(), 4 * 5);
        assert!(ds.novel_train.labels().iter().all(|l| ds.split.novel_classes.contains(l)));
        assert_eq!(ds.test.nrows(), 16 * 3);
        assert!(ds.train.row_ids().iter().all(|r| r.starts_with("train:")));
        assert!(ds.train.data().iter().all(|&v| v == v as f32 as f64));
    }

    #[test]
    fn prototypes_are_hidden_pool_means() {
        let s = small();
        let ds = generate_synthetic(&s).unwrap();
        let map = ManifoldMap::draw(&s);
        for c in [0usize, 13] {
            let mut rng = SplitMix64::substream(s.seed, TAG_LATENT, c as u64);
            let z = DVector::from_fn(s.latent_dim, |_, _| rng.uniform());
            let center = map.center(&z);
            let pool = draw_samples(&center, s.spread, s.hidden_pool, &mut SplitMix64::substream(s.seed, TAG_HIDDEN, c as u64));
            let expected = mean(&pool);
            let got = if c < s.n_base {
                ds.base.row(c)
            } else {
                ds.oracle_novel.row(c - s.n_base)
            };
            assert_eq!(got, expected);
        }
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(generate_synthetic(&SyntheticSpec { latent_dim: 40, d: 32, ..small() }).is_err());
        assert!(generate_synthetic(&SyntheticSpec { spread: 0.0, ..small() }).is_err());
        assert!(generate_synthetic(&SyntheticSpec { n_novel: 0, ..small() }).is_err());
    }
}
