//! Novel-class prototype estimation on the Grassmann manifold.
//!
//! For a novel sample `x_n` the `r` nearest base prototypes are found, and
//! each of them is joined with its own `q` nearest base prototypes to span a
//! local `(q+1)`-dimensional subspace. The extrinsic mean of those subspaces
//! is the subspace whose projector is closest, in squared Frobenius norm, to
//! all local projectors; it is spanned by the top `q+1` eigenvectors of
//! `M = Σ S_i S_iᵀ`. The estimate mixes `x_n`, its projection `c_p` onto the
//! mean and the distance-weighted neighbour average `c_d`:
//!
//! ```text
//! c_n = α2 (α1 x_n + (1 - α1) c_p) + (1 - α2) c_d
//! ```

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::geometry::{self, Neighbor};
use crate::par::{self, Parallelism};
use crate::types::{HyperParams, PrototypeSet};

/// Orthonormality slack accepted by [`Subspace::from_orthonormal`].
pub const ORTHONORMAL_TOL: f64 = 1e-10;

/// A point on the Grassmann manifold, held as a `d × m` orthonormal basis.
#[derive(Debug, Clone, PartialEq)]
pub struct Subspace {
    basis: DMatrix<f64>,
}

impl Subspace {
    pub fn from_orthonormal(basis: DMatrix<f64>) -> Result<Self> {
        let m = basis.ncols();
        if m == 0 || m > basis.nrows() {
            return Err(Error::Invalid(format!(
                "subspace basis must be d x m with 1 <= m <= d, got {}x{}",
                basis.nrows(),
                m
            )));
        }
        let gram = basis.transpose() * &basis;
        let err = (gram - DMatrix::<f64>::identity(m, m)).amax();
        if err.is_nan() || err > ORTHONORMAL_TOL {
            return Err(Error::Invalid(format!("basis is not orthonormal (max |BᵀB - I| = {err:e})")));
        }
        Ok(Self { basis })
    }

    /// Orthonormal basis for the column space of `columns`, via thin SVD.
    /// Fails with `RankDeficient` when the smallest singular value drops
    /// below `rank_tol` times the largest.
    pub fn from_columns(columns: &DMatrix<f64>, rank_tol: f64) -> Result<Self> {
        let k = columns.ncols();
        if k == 0 {
            return Err(Error::Invalid("no columns to span".into()));
        }
        let svd = columns.clone().svd(true, false);
        let u = svd.u.expect("requested U");
        let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
        order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
        let top = order.first().map(|&i| svd.singular_values[i]).unwrap_or(0.0);
        let rank = order
            .iter()
            .filter(|&&i| top > 0.0 && svd.singular_values[i] > rank_tol * top)
            .count();
        if rank < k {
            return Err(Error::RankDeficient { rank, required: k });
        }
        let basis = DMatrix::from_fn(columns.nrows(), k, |i, j| u[(i, order[j])]);
        Ok(Self { basis })
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    /// Subspace dimension `m`.
    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }

    /// Ambient dimension `d`.
    pub fn ambient(&self) -> usize {
        self.basis.nrows()
    }

    pub fn projector(&self) -> DMatrix<f64> {
        &self.basis * self.basis.transpose()
    }
}

/// Indices and distances gathered around one novel sample.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborContext {
    /// The `r` nearest base prototypes, nearest first.
    pub neighbor_indices: Vec<usize>,
    /// For each of them, its `q` nearest base prototypes (itself excluded).
    pub neighbor_of_neighbor_indices: Vec<Vec<usize>>,
    /// Distance from the sample to each of the `r` neighbours, ascending.
    pub distances: Vec<f64>,
}

/// The `k` prototypes nearest to `query`, ascending, ties to the lower index.
pub fn knn(query: &DVector<f64>, pool: &PrototypeSet, k: usize, exclude: &[usize]) -> Result<Vec<Neighbor>> {
    geometry::knn_rows(query, pool.matrix(), k, exclude)
}

/// The `q` base prototypes nearest to prototype `center_idx`, excluding it.
pub fn local_neighbors(center_idx: usize, base: &PrototypeSet, q: usize) -> Result<Vec<usize>> {
    let center = base.row(center_idx);
    Ok(knn(&center, base, q, &[center_idx])?
        .into_iter()
        .map(|n| n.index)
        .collect())
}

pub fn neighbor_context(x: &DVector<f64>, base: &PrototypeSet, r: usize, q: usize) -> Result<NeighborContext> {
    let near = knn(x, base, r, &[])?;
    let neighbor_of_neighbor_indices = near
        .iter()
        .map(|n| local_neighbors(n.index, base, q))
        .collect::<Result<Vec<_>>>()?;
    Ok(NeighborContext {
        neighbor_indices: near.iter().map(|n| n.index).collect(),
        neighbor_of_neighbor_indices,
        distances: near.iter().map(|n| n.distance).collect(),
    })
}

fn span_of(center_idx: usize, neighbors: &[usize], base: &PrototypeSet, rank_tol: f64) -> Result<Subspace> {
    let cols: Vec<usize> = std::iter::once(center_idx).chain(neighbors.iter().copied()).collect();
    let columns = DMatrix::from_fn(base.dim(), cols.len(), |i, j| base.matrix()[(cols[j], i)]);
    Subspace::from_columns(&columns, rank_tol)
}

/// Span of prototype `center_idx` and its `q` nearest base prototypes.
pub fn build_local_subspace(center_idx: usize, base: &PrototypeSet, q: usize, rank_tol: f64) -> Result<Subspace> {
    if center_idx >= base.len() {
        return Err(Error::Invalid(format!(
            "center index {center_idx} outside {} prototypes",
            base.len()
        )));
    }
    let neighbors = local_neighbors(center_idx, base, q)?;
    span_of(center_idx, &neighbors, base, rank_tol)
}

fn check_same_shape(a: &Subspace, b: &Subspace) -> Result<()> {
    if a.ambient() != b.ambient() {
        return Err(Error::DimensionMismatch {
            expected: a.ambient(),
            found: b.ambient(),
        });
    }
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            found: b.dim(),
        });
    }
    Ok(())
}

/// Projector distance `‖AAᵀ - BBᵀ‖_F / √2`.
///
/// For equal dimensions this equals `‖A - B BᵀA‖_F` (root sum of squared
/// sines of the principal angles), which is what gets evaluated: it stays
/// accurate near zero where the `m - ‖AᵀB‖²` form cancels.
pub fn grassmann_distance(a: &Subspace, b: &Subspace) -> Result<f64> {
    check_same_shape(a, b)?;
    let residual = &a.basis - &b.basis * (b.basis.transpose() * &a.basis);
    Ok(residual.norm())
}

/// `Σ_i d(S_i, candidate)²`, the quantity the extrinsic mean minimises.
pub fn extrinsic_objective(subspaces: &[Subspace], candidate: &Subspace) -> Result<f64> {
    subspaces.iter().try_fold(0.0, |acc, s| {
        let d = grassmann_distance(s, candidate)?;
        Ok(acc + d * d)
    })
}

/// Extrinsic mean of equal-dimension subspaces: the span of the top `m`
/// eigenvectors of `Σ S_i S_iᵀ`.
///
/// When `d` exceeds the number of stacked basis columns the eigenproblem is
/// solved on the smaller Gram matrix `BᵀB` of `B = [S_1 … S_r]`, which has
/// the same non-zero spectrum.
pub fn extrinsic_mean(subspaces: &[Subspace], m: usize, tol: f64) -> Result<Subspace> {
    let first = subspaces
        .first()
        .ok_or_else(|| Error::Invalid("extrinsic mean of zero subspaces".into()))?;
    let d = first.ambient();
    for s in subspaces {
        if s.ambient() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: s.ambient(),
            });
        }
        if s.dim() != m {
            return Err(Error::DimensionMismatch {
                expected: m,
                found: s.dim(),
            });
        }
    }
    if m == 0 || m > d {
        return Err(Error::Invalid(format!("mean dimension {m} outside 1..={d}")));
    }
    if d <= m * subspaces.len() {
        mean_from_projector_sum(subspaces, m, tol)
    } else {
        mean_from_gram(subspaces, m, tol)
    }
}

/// Eigenpairs of a symmetric matrix, largest eigenvalue first. The matrix is
/// averaged with its transpose before decomposition.
fn sorted_eigen(mut sym: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let t = sym.transpose();
    sym += t;
    sym *= 0.5;
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let n = eig.eigenvectors.nrows();
    let vectors = DMatrix::from_fn(n, order.len(), |i, j| eig.eigenvectors[(i, order[j])]);
    (values, vectors)
}

fn check_gap(values: &[f64], m: usize, ambient: usize, tol: f64) -> Result<()> {
    if m >= ambient {
        return Ok(());
    }
    // eigenvalues beyond the computed spectrum are exactly zero
    let next = values.get(m).copied().unwrap_or(0.0).max(0.0);
    let gap = values[m - 1] - next;
    if gap <= tol * values[0].max(1.0) {
        return Err(Error::DegenerateMean { dim: m, gap });
    }
    Ok(())
}

pub(crate) fn mean_from_projector_sum(subspaces: &[Subspace], m: usize, tol: f64) -> Result<Subspace> {
    let d = subspaces[0].ambient();
    let mut sum = DMatrix::zeros(d, d);
    for s in subspaces {
        sum += s.projector();
    }
    let (values, vectors) = sorted_eigen(sum);
    check_gap(&values, m, d, tol)?;
    orthonormalized(vectors.columns(0, m).into_owned())
}

pub(crate) fn mean_from_gram(subspaces: &[Subspace], m: usize, tol: f64) -> Result<Subspace> {
    let d = subspaces[0].ambient();
    let k: usize = subspaces.iter().map(Subspace::dim).sum();
    let mut stacked = DMatrix::zeros(d, k);
    let mut col = 0;
    for s in subspaces {
        stacked.columns_mut(col, s.dim()).copy_from(&s.basis);
        col += s.dim();
    }
    let gram = stacked.transpose() * &stacked;
    let (values, vectors) = sorted_eigen(gram);
    check_gap(&values, m, d, tol)?;
    let mut lifted = &stacked * vectors.columns(0, m);
    for (j, mut c) in lifted.column_iter_mut().enumerate() {
        c /= values[j].sqrt();
    }
    orthonormalized(lifted)
}

fn orthonormalized(basis: DMatrix<f64>) -> Result<Subspace> {
    let q = basis.qr().q();
    Subspace::from_orthonormal(q)
}

/// Orthogonal projection of `x` onto the span, `S Sᵀ x`.
pub fn project_onto(sub: &Subspace, x: &DVector<f64>) -> Result<DVector<f64>> {
    if x.len() != sub.ambient() {
        return Err(Error::DimensionMismatch {
            expected: sub.ambient(),
            found: x.len(),
        });
    }
    Ok(&sub.basis * (sub.basis.transpose() * x))
}

/// Neighbour prototypes averaged with weights `exp(-d_i / bandwidth)`,
/// normalised to sum to one.
pub fn direct_contribution(neighbors: &NeighborContext, base: &PrototypeSet, bandwidth: f64) -> DVector<f64> {
    let weights = geometry::neg_exp_weights(&neighbors.distances, bandwidth);
    let mut acc = DVector::zeros(base.dim());
    for (&idx, w) in neighbors.neighbor_indices.iter().zip(weights) {
        for (a, v) in acc.iter_mut().zip(base.matrix().row(idx).iter()) {
            *a += w * v;
        }
    }
    acc
}

/// `α2 (α1 x + (1 - α1) c_p) + (1 - α2) c_d`, evaluated literally so the
/// boundary settings return their input bit for bit.
pub fn combine(alpha1: f64, alpha2: f64, x: &DVector<f64>, projected: &DVector<f64>, direct: &DVector<f64>) -> DVector<f64> {
    DVector::from_fn(x.len(), |i, _| {
        alpha2 * (alpha1 * x[i] + (1.0 - alpha1) * projected[i]) + (1.0 - alpha2) * direct[i]
    })
}

/// Estimated prototype plus the intermediates that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Estimate {
    pub prototype: DVector<f64>,
    /// Projection of the sample onto the mean subspace.
    pub projected: DVector<f64>,
    /// Weighted neighbour average.
    pub direct: DVector<f64>,
    pub context: NeighborContext,
    /// Neighbours-per-neighbour actually used.
    pub q: usize,
}

pub fn estimate_prototype(x_n: &DVector<f64>, base: &PrototypeSet, hp: &HyperParams) -> Result<Estimate> {
    if x_n.len() != base.dim() {
        return Err(Error::DimensionMismatch {
            expected: base.dim(),
            found: x_n.len(),
        });
    }
    if hp.r == 0 || hp.q == 0 {
        return Err(Error::Invalid("r and q must be positive".into()));
    }
    if hp.q + 1 > base.len() {
        return Err(Error::InsufficientPool {
            requested: hp.q + 1,
            available: base.len(),
        });
    }
    let context = neighbor_context(x_n, base, hp.r, hp.q)?;
    let locals = context
        .neighbor_indices
        .iter()
        .zip(&context.neighbor_of_neighbor_indices)
        .map(|(&c, nn)| span_of(c, nn, base, hp.rank_tol))
        .collect::<Result<Vec<_>>>()?;
    let mean = extrinsic_mean(&locals, hp.q + 1, hp.rank_tol)?;
    let projected = project_onto(&mean, x_n)?;
    let direct = direct_contribution(&context, base, hp.bandwidth);
    let prototype = combine(hp.alpha1, hp.alpha2, x_n, &projected, &direct);
    Ok(Estimate {
        prototype,
        projected,
        direct,
        context,
        q: hp.q,
    })
}

/// Runs [`estimate_prototype`] for every row of `samples` (one per novel
/// class). Classes are independent, so they may run in parallel; errors
/// carry the class id.
pub fn estimate_all(samples: &PrototypeSet, base: &PrototypeSet, hp: &HyperParams, parallelism: Parallelism) -> Vec<Result<Estimate>> {
    par::map_range(samples.len(), parallelism, |i| {
        estimate_prototype(&samples.row(i), base, hp).map_err(|e| Error::Estimation {
            class: samples.class_id(i).to_string(),
            source: Box::new(e),
        })
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;
    use crate::types::Origin;
    use proptest::prelude::*;

    fn sub(cols: &[&[f64]]) -> Subspace {
        let d = cols[0].len();
        let m = DMatrix::from_fn(d, cols.len(), |i, j| cols[j][i]);
        Subspace::from_columns(&m, 1e-12).unwrap()
    }

    fn base(rows: &[&[f64]]) -> PrototypeSet {
        let m = DMatrix::from_fn(rows.len(), rows[0].len(), |i, j| rows[i][j]);
        PrototypeSet::with_origin(m, (0..rows.len()).map(|i| format!("b{i}")).collect(), Origin::GivenBase).unwrap()
    }

    fn random_subspace(rng: &mut SplitMix64, d: usize, m: usize) -> Subspace {
        let g = DMatrix::from_fn(d, m, |_, _| rng.normal());
        Subspace::from_columns(&g, 1e-12).unwrap()
    }

    // Projector distance from explicit d×d projectors.
    fn projector_distance(a: &Subspace, b: &Subspace) -> f64 {
        (a.projector() - b.projector()).norm() / 2f64.sqrt()
    }

    // Classical Gram-Schmidt, used as an independent orthonormalisation.
    fn classical_gram_schmidt(a: &DMatrix<f64>) -> DMatrix<f64> {
        let mut q = DMatrix::zeros(a.nrows(), a.ncols());
        for j in 0..a.ncols() {
            let v = a.column(j).into_owned();
            let mut w = v.clone();
            for k in 0..j {
                let qk = q.column(k).into_owned();
                w -= &qk * qk.dot(&v);
            }
            let n = w.norm();
            q.set_column(j, &(w / n));
        }
        q
    }

    #[test]
    fn knn_collinear() {
        let pool = base(&[&[1.0, 0.0], &[3.0, 0.0], &[2.0, 0.0]]);
        let got = knn(&DVector::from_vec(vec![0.0, 0.0]), &pool, 2, &[]).unwrap();
        assert_eq!(got.iter().map(|n| n.index).collect::<Vec<_>>(), vec![0, 2]);
        assert_eq!(got[0].distance, 1.0);
    }

    #[test]
    fn knn_self_match() {
        let pool = base(&[&[1.0, 0.0], &[3.0, 0.5]]);
        let got = knn(&pool.row(1), &pool, 1, &[]).unwrap();
        assert_eq!(got[0].index, 1);
        assert_eq!(got[0].distance, 0.0);
    }

    #[test]
    fn knn_matches_exhaustive_sort() {
        let mut rng = SplitMix64::new(11);
        let rows: Vec<Vec<f64>> = (0..20).map(|_| (0..5).map(|_| rng.normal()).collect()).collect();
        let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        let pool = base(&refs);
        let q = DVector::from_fn(5, |_, _| rng.normal());
        let mut all: Vec<(f64, usize)> = rows
            .iter()
            .enumerate()
            .map(|(i, r)| (r.iter().zip(q.iter()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt(), i))
            .collect();
        all.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let got: Vec<usize> = knn(&q, &pool, 5, &[]).unwrap().iter().map(|n| n.index).collect();
        assert_eq!(got, all[..5].iter().map(|p| p.1).collect::<Vec<_>>());
    }

    #[test]
    fn knn_too_large() {
        let pool = base(&[&[1.0], &[2.0]]);
        assert!(matches!(
            knn(&DVector::from_vec(vec![0.0]), &pool, 3, &[]),
            Err(Error::InsufficientPool { .. })
        ));
    }

    #[test]
    fn local_subspace_of_axes_spans_r3() {
        let b = base(&[&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0], &[0.0, 0.0, 1.0]]);
        let s = build_local_subspace(0, &b, 2, 1e-8).unwrap();
        assert_eq!(s.dim(), 3);
        let gram = s.basis().transpose() * s.basis();
        assert!((gram - DMatrix::<f64>::identity(3, 3)).amax() < 1e-12);
    }

    #[test]
    fn duplicate_neighbour_is_rank_deficient() {
        let b = base(&[&[1.0, 2.0, 0.0], &[1.0, 2.0, 0.0], &[5.0, 0.0, 1.0]]);
        match build_local_subspace(0, &b, 1, 1e-8) {
            Err(Error::RankDeficient { rank, required }) => {
                assert_eq!((rank, required), (1, 2));
            }
            other => panic!("expected RankDeficient, got {other:?}"),
        }
    }

    #[test]
    fn orthonormalisation_matches_gram_schmidt_oracle() {
        let mut rng = SplitMix64::new(5);
        for _ in 0..20 {
            let a = DMatrix::from_fn(6, 3, |_, _| rng.normal());
            let s = Subspace::from_columns(&a, 1e-10).unwrap();
            let q = classical_gram_schmidt(&a);
            let diff = (s.projector() - &q * q.transpose()).amax();
            assert!(diff < 1e-9, "projector mismatch {diff}");
        }
    }

    #[test]
    fn distance_examples() {
        let e1 = sub(&[&[1.0, 0.0]]);
        let e2 = sub(&[&[0.0, 1.0]]);
        let diag = sub(&[&[1.0, 1.0]]);
        assert!(grassmann_distance(&e1, &e1).unwrap() < 1e-15);
        assert!((grassmann_distance(&e1, &e2).unwrap() - 1.0).abs() < 1e-12);
        assert!((grassmann_distance(&e1, &diag).unwrap() - 0.5f64.sqrt()).abs() < 1e-12);
        // same span, different basis
        let a = sub(&[&[1.0, 1.0, 0.0], &[0.0, 1.0, 1.0]]);
        let b = sub(&[&[1.0, 2.0, 1.0], &[1.0, 0.0, -1.0]]);
        assert!(grassmann_distance(&a, &b).unwrap() < 1e-12);
    }

    #[test]
    fn distance_rejects_mismatch() {
        let a = sub(&[&[1.0, 0.0, 0.0]]);
        let b = sub(&[&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]]);
        assert!(matches!(grassmann_distance(&a, &b), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn mean_of_copies_is_the_copy() {
        let a = sub(&[&[1.0, 2.0, 3.0, 0.0], &[0.0, 1.0, -1.0, 2.0]]);
        let mean = extrinsic_mean(&[a.clone(), a.clone(), a.clone()], 2, 1e-8).unwrap();
        assert!(grassmann_distance(&mean, &a).unwrap() < 1e-10);
    }

    #[test]
    fn mean_of_e1_and_diagonal_is_bisector() {
        let e1 = sub(&[&[1.0, 0.0]]);
        let diag = sub(&[&[1.0, 1.0]]);
        let mean = extrinsic_mean(&[e1, diag], 1, 1e-8).unwrap();
        let angle = 22.5f64.to_radians();
        let expected = sub(&[&[angle.cos(), angle.sin()]]);
        assert!(grassmann_distance(&mean, &expected).unwrap() < 1e-12);
        let v = mean.basis().column(0);
        assert!((v[0].abs() - 0.92388).abs() < 1e-5);
        assert!((v[1].abs() - 0.38268).abs() < 1e-5);
    }

    #[test]
    fn orthogonal_lines_have_no_unique_mean() {
        let e1 = sub(&[&[1.0, 0.0]]);
        let e2 = sub(&[&[0.0, 1.0]]);
        assert!(matches!(
            extrinsic_mean(&[e1, e2], 1, 1e-8),
            Err(Error::DegenerateMean { dim: 1, .. })
        ));
    }

    #[test]
    fn projector_and_gram_routes_agree() {
        let mut rng = SplitMix64::new(21);
        for _ in 0..50 {
            let d = 3 + rng.below(6);
            let m = 1 + rng.below(d.min(3));
            let r = 1 + rng.below(4);
            let subs: Vec<Subspace> = (0..r).map(|_| random_subspace(&mut rng, d, m)).collect();
            let a = mean_from_projector_sum(&subs, m, 1e-8);
            let b = mean_from_gram(&subs, m, 1e-8);
            match (a, b) {
                (Ok(a), Ok(b)) => assert!(grassmann_distance(&a, &b).unwrap() < 1e-9),
                (Err(_), Err(_)) => {}
                (a, b) => panic!("routes disagree: {a:?} vs {b:?}"),
            }
        }
    }

    #[test]
    fn mean_is_no_worse_than_inputs() {
        let mut rng = SplitMix64::new(8);
        for _ in 0..30 {
            let subs: Vec<Subspace> = (0..4).map(|_| random_subspace(&mut rng, 7, 2)).collect();
            let mean = extrinsic_mean(&subs, 2, 1e-8).unwrap();
            let best = extrinsic_objective(&subs, &mean).unwrap();
            for s in &subs {
                assert!(best <= extrinsic_objective(&subs, s).unwrap() + 1e-9);
            }
        }
    }

    #[test]
    fn distance_agrees_with_projector_formula() {
        let mut rng = SplitMix64::new(4);
        for _ in 0..20 {
            let a = random_subspace(&mut rng, 6, 3);
            let b = random_subspace(&mut rng, 6, 3);
            let got = grassmann_distance(&a, &b).unwrap();
            assert!((got - projector_distance(&a, &b)).abs() < 1e-12);
        }
    }

    #[test]
    fn projection_examples() {
        let plane = sub(&[&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]]);
        let p = project_onto(&plane, &DVector::from_vec(vec![3.0, 4.0, 5.0])).unwrap();
        assert!((p - DVector::from_vec(vec![3.0, 4.0, 0.0])).amax() < 1e-12);
        let inside = DVector::from_vec(vec![-2.0, 7.0, 0.0]);
        assert!((project_onto(&plane, &inside).unwrap() - &inside).amax() < 1e-10);
        let normal = DVector::from_vec(vec![0.0, 0.0, 9.0]);
        assert!(project_onto(&plane, &normal).unwrap().amax() < 1e-12);
    }

    #[test]
    fn direct_contribution_examples() {
        let b = base(&[&[0.0, 0.0], &[2.0, 0.0]]);
        let single = NeighborContext {
            neighbor_indices: vec![1],
            neighbor_of_neighbor_indices: vec![vec![0]],
            distances: vec![37.5],
        };
        assert_eq!(direct_contribution(&single, &b, 1.0), b.row(1));

        let equal = NeighborContext {
            neighbor_indices: vec![0, 1],
            neighbor_of_neighbor_indices: vec![vec![1], vec![0]],
            distances: vec![1.0, 1.0],
        };
        assert!((direct_contribution(&equal, &b, 1.0) - DVector::from_vec(vec![1.0, 0.0])).amax() < 1e-15);

        let skewed = NeighborContext {
            distances: vec![1.0, 2.0],
            ..equal
        };
        let w0 = (-1.0f64).exp() / ((-1.0f64).exp() + (-2.0f64).exp());
        let cd = direct_contribution(&skewed, &b, 1.0);
        assert!((w0 - 0.73106).abs() < 1e-5);
        assert!((cd[0] - 2.0 * (1.0 - w0)).abs() < 1e-12);
        assert!((cd[0] - 0.53788).abs() < 1e-5);
        assert_eq!(cd[1], 0.0);
    }

    #[test]
    fn combine_examples() {
        let x = DVector::from_vec(vec![1.0, 0.0]);
        let cp = DVector::from_vec(vec![0.0, 1.0]);
        let cd = DVector::from_vec(vec![1.0, 1.0]);
        let cn = combine(0.9, 0.7, &x, &cp, &cd);
        // 0.7 * (0.9, 0.1) + 0.3 * (1, 1)
        assert!((cn[0] - 0.93).abs() < 1e-12);
        assert!((cn[1] - 0.37).abs() < 1e-12);
        assert_eq!(combine(1.0, 1.0, &x, &cp, &cd), x);
        assert_eq!(combine(0.0, 1.0, &x, &cp, &cd), cp);
        assert_eq!(combine(0.3, 0.0, &x, &cp, &cd), cd);
    }

    fn ring_base() -> PrototypeSet {
        // 12 prototypes on a slightly curved surface in R^5
        let rows: Vec<Vec<f64>> = (0..12)
            .map(|i| {
                let t = i as f64 * 0.5;
                vec![t.cos() * 3.0, t.sin() * 3.0, 0.2 * t, 1.0 + 0.05 * t * t, 0.3 * (1.7 * t).sin()]
            })
            .collect();
        let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        base(&refs)
    }

    #[test]
    fn estimate_boundaries_are_exact() {
        let b = ring_base();
        let x = DVector::from_vec(vec![2.0, 1.5, 0.4, 1.1, 0.0]);
        let mut hp = HyperParams {
            r: 4,
            q: 2,
            alpha1: 1.0,
            alpha2: 1.0,
            ..HyperParams::imagenet()
        };
        let e = estimate_prototype(&x, &b, &hp).unwrap();
        assert_eq!(e.prototype, x);
        hp.alpha1 = 0.0;
        let e = estimate_prototype(&x, &b, &hp).unwrap();
        assert_eq!(e.prototype, e.projected);
        hp.alpha2 = 0.0;
        let e = estimate_prototype(&x, &b, &hp).unwrap();
        assert_eq!(e.prototype, e.direct);
        assert_eq!(e.context.neighbor_indices.len(), 4);
        for (c, nn) in e.context.neighbor_indices.iter().zip(&e.context.neighbor_of_neighbor_indices) {
            assert_eq!(nn.len(), 2);
            assert!(!nn.contains(c));
        }
        assert!(e.context.distances.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn estimate_errors_carry_class() {
        let b = base(&[&[1.0, 0.0], &[1.0, 0.0], &[0.0, 1.0]]);
        let samples = PrototypeSet::with_origin(DMatrix::from_row_slice(1, 2, &[0.9, 0.1]), vec!["n7".into()], Origin::SampleMean).unwrap();
        let hp = HyperParams {
            r: 1,
            q: 1,
            ..HyperParams::imagenet()
        };
        let out = estimate_all(&samples, &b, &hp, Parallelism::Sequential);
        match &out[0] {
            Err(Error::Estimation { class, source }) => {
                assert_eq!(class, "n7");
                assert!(matches!(**source, Error::RankDeficient { .. }));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn basis_invariance(seed in any::<u64>(), d in 3usize..8, m in 1usize..3) {
            let mut rng = SplitMix64::new(seed);
            let a = random_subspace(&mut rng, d, m);
            let b = random_subspace(&mut rng, d, m);
            let c = random_subspace(&mut rng, d, m);
            let rot = random_subspace(&mut rng, m, m).basis().clone();
            let a_rot = Subspace::from_orthonormal(a.basis() * &rot).unwrap();
            let d1 = grassmann_distance(&a, &b).unwrap();
            let d2 = grassmann_distance(&a_rot, &b).unwrap();
            prop_assert!((d1 - d2).abs() < 1e-9);
            prop_assert!((d1 - grassmann_distance(&b, &a).unwrap()).abs() < 1e-9);
            if let (Ok(m1), Ok(m2)) = (
                extrinsic_mean(&[a.clone(), b.clone(), c.clone()], m, 1e-8),
                extrinsic_mean(&[c, a_rot, b], m, 1e-8),
            ) {
                prop_assert!(grassmann_distance(&m1, &m2).unwrap() < 1e-9);
            }
        }

        #[test]
        fn projection_idempotent_contraction(seed in any::<u64>(), d in 2usize..9) {
            let mut rng = SplitMix64::new(seed);
            let m = 1 + rng.below(d);
            let s = random_subspace(&mut rng, d, m);
            let x = DVector::from_fn(d, |_, _| rng.normal() * 10.0);
            let p = project_onto(&s, &x).unwrap();
            let pp = project_onto(&s, &p).unwrap();
            prop_assert!((&pp - &p).amax() < 1e-10);
            prop_assert!(p.norm() <= x.norm() + 1e-12);
        }

        #[test]
        fn estimate_in_convex_hull(a1 in 0.0f64..=1.0, a2 in 0.0f64..=1.0, seed in any::<u64>()) {
            let mut rng = SplitMix64::new(seed);
            let x = DVector::from_fn(4, |_, _| rng.normal());
            let cp = DVector::from_fn(4, |_, _| rng.normal());
            let cd = DVector::from_fn(4, |_, _| rng.normal());
            let cn = combine(a1, a2, &x, &cp, &cd);
            // barycentric coordinates of the affine combination
            let (wx, wp, wd) = (a2 * a1, a2 * (1.0 - a1), 1.0 - a2);
            prop_assert!(wx >= 0.0 && wp >= 0.0 && wd >= 0.0);
            prop_assert!((wx + wp + wd - 1.0).abs() < 1e-15);
            let rebuilt = &x * wx + &cp * wp + &cd * wd;
            prop_assert!((rebuilt - &cn).amax() < 1e-12);
        }

        #[test]
        fn combine_partials_match_finite_differences(a1 in 0.05f64..0.95, a2 in 0.05f64..0.95, seed in any::<u64>()) {
            let mut rng = SplitMix64::new(seed);
            let x = DVector::from_fn(3, |_, _| rng.normal());
            let cp = DVector::from_fn(3, |_, _| rng.normal());
            let cd = DVector::from_fn(3, |_, _| rng.normal());
            let h = 1e-6;
            let fd1 = (combine(a1 + h, a2, &x, &cp, &cd) - combine(a1 - h, a2, &x, &cp, &cd)) / (2.0 * h);
            let fd2 = (combine(a1, a2 + h, &x, &cp, &cd) - combine(a1, a2 - h, &x, &cp, &cd)) / (2.0 * h);
            let d1 = (&x - &cp) * a2;
            let d2 = &x * a1 + &cp * (1.0 - a1) - &cd;
            prop_assert!((fd1 - d1).amax() < 1e-7);
            prop_assert!((fd2 - d2).amax() < 1e-7);
        }
    }
}
