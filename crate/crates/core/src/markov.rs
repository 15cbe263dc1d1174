//! Classification with an absorbing Markov chain on the prototype graph.
//!
//! Prototypes are nodes of a symmetrised k'-NN graph with edge weights
//! `exp(-‖c_i - c_j‖)`. Splitting the nodes into transient and absorbing
//! states gives
//!
//! ```text
//! P = | T  A |      P^∞ = | 0  (I - T)⁻¹ A |
//!     | 0  I |            | 0        I     |
//! ```
//!
//! and a test sample's initial distribution `u0` settles entirely on the
//! absorbing states. Two passes (novel transient, then base transient) pick a
//! winning base and a winning novel class; the nearer of the two wins.

use std::collections::{BTreeSet, VecDeque};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::geometry::{self, Neighbor};
use crate::types::{HyperParams, InitialStateRule, PrototypeSet};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub to: usize,
    pub distance: f64,
    pub weight: f64,
}

/// Undirected k'-NN graph over prototypes. Edge `i–j` exists when either
/// endpoint is among the other's `k'` nearest neighbours.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeGraph {
    adjacency: Vec<Vec<Edge>>,
    k_prime: usize,
}

impl PrototypeGraph {
    /// Builds the graph from a symmetric distance matrix with zero diagonal.
    pub fn from_distances(distances: &DMatrix<f64>, k_prime: usize) -> Result<Self> {
        let n = distances.nrows();
        if distances.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: distances.ncols(),
            });
        }
        if k_prime == 0 {
            return Err(Error::Invalid("k' must be positive".into()));
        }
        if k_prime >= n {
            return Err(Error::InsufficientPool {
                requested: k_prime,
                available: n.saturating_sub(1),
            });
        }
        let mut edges = BTreeSet::new();
        for i in 0..n {
            let candidates = (0..n)
                .filter(|&j| j != i)
                .map(|j| Neighbor {
                    index: j,
                    distance: distances[(i, j)],
                })
                .collect();
            for nb in geometry::k_smallest(candidates, k_prime)? {
                edges.insert((i.min(nb.index), i.max(nb.index)));
            }
        }
        let mut adjacency = vec![Vec::new(); n];
        for (i, j) in edges {
            let distance = distances[(i, j)];
            let weight = (-distance).exp();
            adjacency[i].push(Edge { to: j, distance, weight });
            adjacency[j].push(Edge { to: i, distance, weight });
        }
        for list in &mut adjacency {
            list.sort_by_key(|e| e.to);
        }
        Ok(Self { adjacency, k_prime })
    }

    pub fn node_count(&self) -> usize {
        self.adjacency.len()
    }

    pub fn k_prime(&self) -> usize {
        self.k_prime
    }

    pub fn edges(&self, node: usize) -> &[Edge] {
        &self.adjacency[node]
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.adjacency[i].iter().any(|e| e.to == j)
    }

    /// Dense weight matrix, zero where there is no edge.
    pub fn weights(&self) -> DMatrix<f64> {
        let n = self.node_count();
        let mut w = DMatrix::zeros(n, n);
        for (i, list) in self.adjacency.iter().enumerate() {
            for e in list {
                w[(i, e.to)] = e.weight;
            }
        }
        w
    }

    /// Row-normalised transition probabilities over each node's edges.
    /// Isolated nodes get an empty row.
    pub fn transition_rows(&self) -> Vec<Vec<(usize, f64)>> {
        self.adjacency
            .iter()
            .map(|list| {
                let dists: Vec<f64> = list.iter().map(|e| e.distance).collect();
                list.iter()
                    .map(|e| e.to)
                    .zip(geometry::neg_exp_weights(&dists, 1.0))
                    .collect()
            })
            .collect()
    }
}

pub fn build_graph(prototypes: &PrototypeSet, k_prime: usize) -> Result<PrototypeGraph> {
    PrototypeGraph::from_distances(&geometry::pairwise_distances(prototypes.matrix()), k_prime)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChainWarning {
    /// Transient node without edges; its row was set uniform over the
    /// absorbing states.
    IsolatedTransient(usize),
}

/// Transient/absorbing partition of a prototype graph with its absorption
/// probabilities `(I - T)⁻¹ A` solved once at construction.
#[derive(Debug, Clone)]
pub struct AbsorbingChain {
    transient_ids: Vec<usize>,
    absorbing_ids: Vec<usize>,
    transient: DMatrix<f64>,
    absorbing: DMatrix<f64>,
    absorption: DMatrix<f64>,
    warnings: Vec<ChainWarning>,
}

impl AbsorbingChain {
    /// Node ids of the transient states, ascending. Row `i` of `T` and `A`
    /// belongs to `transient_ids()[i]`.
    pub fn transient_ids(&self) -> &[usize] {
        &self.transient_ids
    }

    pub fn absorbing_ids(&self) -> &[usize] {
        &self.absorbing_ids
    }

    /// Transient-to-transient block `T`.
    pub fn t(&self) -> &DMatrix<f64> {
        &self.transient
    }

    /// Transient-to-absorbing block `A`.
    pub fn a(&self) -> &DMatrix<f64> {
        &self.absorbing
    }

    /// `(I - T)⁻¹ A`: row `i` is the absorption distribution of a walk
    /// started in transient state `i`.
    pub fn absorption(&self) -> &DMatrix<f64> {
        &self.absorption
    }

    pub fn warnings(&self) -> &[ChainWarning] {
        &self.warnings
    }

    pub fn state_count(&self) -> usize {
        self.transient_ids.len() + self.absorbing_ids.len()
    }

    /// Full transition matrix over node ids.
    pub fn transition_matrix(&self) -> DMatrix<f64> {
        let n = self.state_count();
        let mut p = DMatrix::zeros(n, n);
        for (r, &i) in self.transient_ids.iter().enumerate() {
            for (c, &j) in self.transient_ids.iter().enumerate() {
                p[(i, j)] = self.transient[(r, c)];
            }
            for (c, &j) in self.absorbing_ids.iter().enumerate() {
                p[(i, j)] = self.absorbing[(r, c)];
            }
        }
        for &j in &self.absorbing_ids {
            p[(j, j)] = 1.0;
        }
        p
    }

    /// Equilibrium mass on the absorbing states (in `absorbing_ids` order)
    /// for an initial distribution over all node ids:
    /// `u0_transient (I - T)⁻¹ A + u0_absorbing`.
    pub fn equilibrium(&self, u0: &DVector<f64>) -> Result<DVector<f64>> {
        if u0.len() != self.state_count() {
            return Err(Error::DimensionMismatch {
                expected: self.state_count(),
                found: u0.len(),
            });
        }
        if u0.iter().any(|&v| v < 0.0 || !v.is_finite()) || (u0.sum() - 1.0).abs() > 1e-9 {
            return Err(Error::Invalid("initial state must be a probability vector".into()));
        }
        Ok(self.settle(u0))
    }

    /// [`AbsorbingChain::equilibrium`] without input checks.
    pub(crate) fn settle(&self, u0: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::from_fn(self.absorbing_ids.len(), |c, _| u0[self.absorbing_ids[c]]);
        for (r, &i) in self.transient_ids.iter().enumerate() {
            let mass = u0[i];
            if mass != 0.0 {
                for c in 0..out.len() {
                    out[c] += mass * self.absorption[(r, c)];
                }
            }
        }
        out
    }
}

pub fn equilibrium(chain: &AbsorbingChain, u0: &DVector<f64>) -> Result<DVector<f64>> {
    chain.equilibrium(u0)
}

/// Partitions the graph's nodes and solves for the absorption matrix.
/// `transient` may be empty; `absorbing` may not.
pub fn build_chain(graph: &PrototypeGraph, transient: &[usize], absorbing: &[usize], equilibrium_tol: f64) -> Result<AbsorbingChain> {
    let n = graph.node_count();
    let mut transient_ids = transient.to_vec();
    let mut absorbing_ids = absorbing.to_vec();
    transient_ids.sort_unstable();
    absorbing_ids.sort_unstable();
    if absorbing_ids.is_empty() {
        return Err(Error::Invalid("absorbing state set is empty".into()));
    }
    // position of each node: Ok(transient row) or Err(absorbing column)
    let mut slot: Vec<Option<std::result::Result<usize, usize>>> = vec![None; n];
    for (r, &i) in transient_ids.iter().enumerate() {
        if i >= n || slot[i].is_some() {
            return Err(Error::Invalid(format!("transient node {i} out of range or repeated")));
        }
        slot[i] = Some(Ok(r));
    }
    for (c, &j) in absorbing_ids.iter().enumerate() {
        if j >= n || slot[j].is_some() {
            return Err(Error::Invalid(format!("absorbing node {j} out of range, repeated, or also transient")));
        }
        slot[j] = Some(Err(c));
    }
    if let Some(missing) = slot.iter().position(Option::is_none) {
        return Err(Error::Invalid(format!("node {missing} is neither transient nor absorbing")));
    }

    let (nt, na) = (transient_ids.len(), absorbing_ids.len());
    let mut t = DMatrix::zeros(nt, nt);
    let mut a = DMatrix::zeros(nt, na);
    let mut warnings = Vec::new();
    let rows = graph.transition_rows();
    for (r, &i) in transient_ids.iter().enumerate() {
        if rows[i].is_empty() {
            warnings.push(ChainWarning::IsolatedTransient(i));
            a.row_mut(r).fill(1.0 / na as f64);
            continue;
        }
        for &(j, p) in &rows[i] {
            match slot[j].expect("checked above") {
                Ok(c) => t[(r, c)] = p,
                Err(c) => a[(r, c)] = p,
            }
        }
    }

    if let Some(stuck) = unreachable_transient(&t, &a) {
        return Err(Error::StateUnreachable {
            state: transient_ids[stuck],
            pass: None,
        });
    }

    let absorption = if nt == 0 {
        DMatrix::zeros(0, na)
    } else {
        let lu = (DMatrix::<f64>::identity(nt, nt) - &t).lu();
        let u = lu.u();
        if let Some(k) = (0..nt).find(|&k| u[(k, k)].abs() <= equilibrium_tol) {
            return Err(Error::StateUnreachable {
                state: transient_ids[k],
                pass: None,
            });
        }
        lu.solve(&a).ok_or(Error::StateUnreachable {
            state: transient_ids[0],
            pass: None,
        })?
    };

    Ok(AbsorbingChain {
        transient_ids,
        absorbing_ids,
        transient: t,
        absorbing: a,
        absorption,
        warnings,
    })
}

/// First transient row (if any) from which no absorbing state is reachable.
/// `I - T` is invertible exactly when there is none.
fn unreachable_transient(t: &DMatrix<f64>, a: &DMatrix<f64>) -> Option<usize> {
    let nt = t.nrows();
    let mut reaches = vec![false; nt];
    let mut queue = VecDeque::new();
    for (r, hit) in reaches.iter_mut().enumerate() {
        if a.row(r).iter().any(|&p| p > 0.0) {
            *hit = true;
            queue.push_back(r);
        }
    }
    while let Some(c) = queue.pop_front() {
        for r in 0..nt {
            if !reaches[r] && t[(r, c)] > 0.0 {
                reaches[r] = true;
                queue.push_back(r);
            }
        }
    }
    reaches.iter().position(|&ok| !ok)
}

/// Probability vector over all prototypes from the test sample's distances.
pub fn initial_state(x: &DVector<f64>, prototypes: &PrototypeSet, rule: InitialStateRule) -> Result<DVector<f64>> {
    if x.len() != prototypes.dim() {
        return Err(Error::DimensionMismatch {
            expected: prototypes.dim(),
            found: x.len(),
        });
    }
    let dists: Vec<f64> = (0..prototypes.len())
        .map(|i| geometry::row_distance(prototypes.matrix(), i, x))
        .collect();
    let weights = match rule {
        InitialStateRule::NegExp => geometry::neg_exp_weights(&dists, 1.0),
        InitialStateRule::Distance => {
            let total: f64 = dists.iter().sum();
            if total > 0.0 {
                dists.iter().map(|d| d / total).collect()
            } else {
                vec![1.0 / dists.len() as f64; dists.len()]
            }
        }
    };
    Ok(DVector::from_vec(weights))
}

/// Dense index of the nearest prototype, ties to the lower index.
pub fn classify_nn(x: &DVector<f64>, prototypes: &PrototypeSet) -> Result<usize> {
    Ok(geometry::knn_rows(x, prototypes.matrix(), 1, &[])?[0].index)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwoPassDecision {
    /// Dense index of the predicted class.
    pub class: usize,
    pub base_winner: usize,
    pub novel_winner: usize,
    /// Equilibrium over base states (pass 1), in base index order.
    pub base_equilibrium: DVector<f64>,
    /// Equilibrium over novel states (pass 2), in novel index order.
    pub novel_equilibrium: DVector<f64>,
}

/// Both absorbing chains of one episode, built once and shared by every
/// test sample.
#[derive(Debug, Clone)]
pub struct TwoPassClassifier {
    prototypes: PrototypeSet,
    graph: PrototypeGraph,
    novel_transient: AbsorbingChain,
    base_transient: AbsorbingChain,
    rule: InitialStateRule,
}

impl TwoPassClassifier {
    pub fn new(prototypes: &PrototypeSet, base_ids: &[usize], novel_ids: &[usize], hp: &HyperParams) -> Result<Self> {
        if base_ids.is_empty() || novel_ids.is_empty() {
            return Err(Error::Invalid("two-pass classification needs base and novel prototypes".into()));
        }
        let graph = build_graph(prototypes, hp.k_prime)?;
        let tag = |pass: u8| {
            move |e: Error| match e {
                Error::StateUnreachable { state, .. } => Error::StateUnreachable {
                    state,
                    pass: Some(pass),
                },
                other => other,
            }
        };
        let novel_transient = build_chain(&graph, novel_ids, base_ids, hp.equilibrium_tol).map_err(tag(1))?;
        let base_transient = build_chain(&graph, base_ids, novel_ids, hp.equilibrium_tol).map_err(tag(2))?;
        Ok(Self {
            prototypes: prototypes.clone(),
            graph,
            novel_transient,
            base_transient,
            rule: hp.initial_state,
        })
    }

    pub fn graph(&self) -> &PrototypeGraph {
        &self.graph
    }

    /// Pass 1 chain (novel transient, base absorbing).
    pub fn pass1(&self) -> &AbsorbingChain {
        &self.novel_transient
    }

    /// Pass 2 chain (base transient, novel absorbing).
    pub fn pass2(&self) -> &AbsorbingChain {
        &self.base_transient
    }

    pub fn prototypes(&self) -> &PrototypeSet {
        &self.prototypes
    }

    pub fn classify(&self, x: &DVector<f64>) -> Result<TwoPassDecision> {
        let u0 = initial_state(x, &self.prototypes, self.rule)?;
        let base_equilibrium = self.novel_transient.settle(&u0);
        let novel_equilibrium = self.base_transient.settle(&u0);
        let base_winner = self.novel_transient.absorbing_ids()[geometry::argmax(base_equilibrium.iter().copied()).expect("non-empty")];
        let novel_winner = self.base_transient.absorbing_ids()[geometry::argmax(novel_equilibrium.iter().copied()).expect("non-empty")];
        let m = self.prototypes.matrix();
        let class = if geometry::row_distance(m, base_winner, x) <= geometry::row_distance(m, novel_winner, x) {
            base_winner
        } else {
            novel_winner
        };
        Ok(TwoPassDecision {
            class,
            base_winner,
            novel_winner,
            base_equilibrium,
            novel_equilibrium,
        })
    }
}

/// One-shot form of [`TwoPassClassifier`]. Rebuilds both chains per call.
pub fn classify_two_pass(x: &DVector<f64>, prototypes: &PrototypeSet, base_ids: &[usize], novel_ids: &[usize], hp: &HyperParams) -> Result<TwoPassDecision> {
    TwoPassClassifier::new(prototypes, base_ids, novel_ids, hp)?.classify(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;
    use crate::types::Origin;

    fn protos(rows: &[&[f64]]) -> PrototypeSet {
        let m = DMatrix::from_fn(rows.len(), rows[0].len(), |i, j| rows[i][j]);
        PrototypeSet::with_origin(m, (0..rows.len()).map(|i| format!("c{i}")).collect(), Origin::GivenBase).unwrap()
    }

    fn hp(k: usize) -> HyperParams {
        HyperParams {
            k_prime: k,
            ..HyperParams::imagenet()
        }
    }

    #[test]
    fn equilateral_triangle_is_complete() {
        let h = 3f64.sqrt() / 2.0;
        let g = build_graph(&protos(&[&[0.0, 0.0], &[1.0, 0.0], &[0.5, h]]), 2).unwrap();
        let w = g.weights();
        for i in 0..3 {
            assert_eq!(w[(i, i)], 0.0);
            for j in 0..3 {
                if i != j {
                    assert!((w[(i, j)] - (-1.0f64).exp()).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn collinear_edges_are_symmetrised() {
        let g = build_graph(&protos(&[&[0.0], &[1.0], &[3.0]]), 1).unwrap();
        assert!(g.has_edge(0, 1) && g.has_edge(1, 0));
        assert!(g.has_edge(1, 2) && g.has_edge(2, 1));
        assert!(!g.has_edge(0, 2));
        let w = g.weights();
        assert_eq!(w, w.transpose());
    }

    #[test]
    fn k_prime_too_large() {
        assert!(matches!(
            build_graph(&protos(&[&[0.0], &[1.0]]), 2),
            Err(Error::InsufficientPool { .. })
        ));
    }

    #[test]
    fn single_transient_between_absorbers() {
        // node 0 transient, nodes 1 and 2 absorbing at distances 1 and 2
        let mut d = DMatrix::zeros(3, 3);
        for (i, j, v) in [(0, 1, 1.0), (0, 2, 2.0), (1, 2, 3.0)] {
            d[(i, j)] = v;
            d[(j, i)] = v;
        }
        let g = PrototypeGraph::from_distances(&d, 2).unwrap();
        let chain = build_chain(&g, &[0], &[1, 2], 1e-10).unwrap();
        assert_eq!(chain.t().shape(), (1, 1));
        assert_eq!(chain.t()[(0, 0)], 0.0);
        assert!((chain.a()[(0, 0)] - 0.73106).abs() < 1e-5);
        assert!((chain.a()[(0, 1)] - 0.26894).abs() < 1e-5);
        assert!((chain.a().row(0).sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn disconnected_transient_clique_is_unreachable() {
        // two far-apart pairs; the first pair is all transient
        let p = protos(&[&[0.0], &[0.1], &[50.0], &[50.1]]);
        let g = build_graph(&p, 1).unwrap();
        assert!(matches!(
            build_chain(&g, &[0, 1], &[2, 3], 1e-10),
            Err(Error::StateUnreachable { state: 0, pass: None })
        ));
    }

    #[test]
    fn isolated_transient_falls_back_to_uniform() {
        let mut d = DMatrix::from_element(3, 3, 1.0);
        d.fill_diagonal(0.0);
        let g = PrototypeGraph::from_distances(&d, 1).unwrap();
        // strip node 0's edges to simulate isolation
        let mut g = g;
        g.adjacency[0].clear();
        for list in &mut g.adjacency {
            list.retain(|e| e.to != 0);
        }
        let chain = build_chain(&g, &[0], &[1, 2], 1e-10).unwrap();
        assert_eq!(chain.warnings(), &[ChainWarning::IsolatedTransient(0)]);
        assert_eq!(chain.a().row(0).iter().copied().collect::<Vec<_>>(), vec![0.5, 0.5]);
    }

    #[test]
    fn no_transient_states_leaves_u0() {
        let g = build_graph(&protos(&[&[0.0], &[1.0], &[2.5]]), 1).unwrap();
        let chain = build_chain(&g, &[], &[0, 1, 2], 1e-10).unwrap();
        let u0 = DVector::from_vec(vec![0.2, 0.3, 0.5]);
        assert_eq!(chain.equilibrium(&u0).unwrap(), u0);
    }

    #[test]
    fn hand_chain_matches_two_thirds() {
        // T = [[0,.5],[.5,0]], A = [[.5,0],[0,.5]]
        let chain = AbsorbingChain {
            transient_ids: vec![0, 1],
            absorbing_ids: vec![2, 3],
            transient: DMatrix::from_row_slice(2, 2, &[0.0, 0.5, 0.5, 0.0]),
            absorbing: DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 0.5]),
            absorption: {
                let n = DMatrix::from_row_slice(2, 2, &[1.0, -0.5, -0.5, 1.0]);
                n.lu().solve(&DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 0.5])).unwrap()
            },
            warnings: vec![],
        };
        let u = chain.equilibrium(&DVector::from_vec(vec![1.0, 0.0, 0.0, 0.0])).unwrap();
        assert!((u[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((u[1] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn equilibrium_rejects_bad_u0() {
        let g = build_graph(&protos(&[&[0.0], &[1.0], &[2.5]]), 1).unwrap();
        let chain = build_chain(&g, &[1], &[0, 2], 1e-10).unwrap();
        assert!(chain.equilibrium(&DVector::from_vec(vec![0.5, 0.5, 0.5])).is_err());
        assert!(chain.equilibrium(&DVector::from_vec(vec![0.5, 0.5])).is_err());
    }

    #[test]
    fn initial_state_examples() {
        let p = protos(&[&[1.0, 0.0], &[-1.0, 0.0], &[0.0, 1.0], &[0.0, -1.0]]);
        let u = initial_state(&DVector::zeros(2), &p, InitialStateRule::NegExp).unwrap();
        for v in u.iter() {
            assert!((v - 0.25).abs() < 1e-15);
        }
        let u = initial_state(&p.row(2), &p, InitialStateRule::NegExp).unwrap();
        assert_eq!(geometry::argmax(u.iter().copied()), Some(2));
        assert!(u.iter().enumerate().all(|(i, &v)| i == 2 || v < u[2]));

        let line = protos(&[&[0.0], &[1.0], &[2.0]]);
        let u = initial_state(&DVector::from_vec(vec![0.0]), &line, InitialStateRule::NegExp).unwrap();
        assert!((u[0] - 0.66524).abs() < 1e-5);
        assert!((u[1] - 0.24473).abs() < 1e-5);
        assert!((u[2] - 0.09003).abs() < 1e-5);
        assert!((u.sum() - 1.0).abs() < 1e-15);

        let u = initial_state(&DVector::from_vec(vec![0.0]), &line, InitialStateRule::Distance).unwrap();
        assert_eq!(u.as_slice(), &[0.0, 1.0 / 3.0, 2.0 / 3.0]);
    }

    #[test]
    fn nn_examples() {
        let p = protos(&[&[0.0, 0.0], &[2.0, 0.0]]);
        assert_eq!(classify_nn(&DVector::from_vec(vec![0.9, 0.0]), &p).unwrap(), 0);
        assert_eq!(classify_nn(&p.row(1), &p).unwrap(), 1);
        // tie goes to the lower index
        assert_eq!(classify_nn(&DVector::from_vec(vec![1.0, 0.0]), &p).unwrap(), 0);
    }

    #[test]
    fn nn_matches_exhaustive_sort() {
        let mut rng = SplitMix64::new(13);
        let m = DMatrix::from_fn(50, 4, |_, _| rng.normal());
        let p = PrototypeSet::with_origin(m.clone(), (0..50).map(|i| i.to_string()).collect(), Origin::GivenBase).unwrap();
        for _ in 0..20 {
            let x = DVector::from_fn(4, |_, _| rng.normal());
            let mut d: Vec<(f64, usize)> = (0..50).map(|i| ((m.row(i).transpose() - &x).norm(), i)).collect();
            d.sort_by(|a, b| a.partial_cmp(b).unwrap());
            assert_eq!(classify_nn(&x, &p).unwrap(), d[0].1);
        }
    }

    #[test]
    fn two_pass_returns_exact_base_match() {
        let p = protos(&[&[0.0, 0.0], &[4.0, 0.0], &[0.0, 4.0], &[9.0, 9.0]]);
        let d = classify_two_pass(&p.row(1), &p, &[0, 1, 2], &[3], &hp(2)).unwrap();
        assert_eq!(d.class, d.base_winner);
        assert_eq!(d.novel_winner, 3);
    }

    #[test]
    fn two_pass_tie_prefers_base() {
        // base 0 and novel 2 are symmetric about x = (1, 0)
        let p = protos(&[&[0.0, 0.0], &[0.0, 5.0], &[2.0, 0.0]]);
        let x = DVector::from_vec(vec![1.0, 0.0]);
        let d = classify_two_pass(&x, &p, &[0, 1], &[2], &hp(2)).unwrap();
        assert_eq!(d.base_winner, 0);
        assert_eq!(d.novel_winner, 2);
        assert_eq!(d.class, 0);
    }

    #[test]
    fn two_pass_unreachable_is_tagged() {
        let p = protos(&[&[0.0], &[0.1], &[50.0], &[50.1]]);
        let err = TwoPassClassifier::new(&p, &[2, 3], &[0, 1], &hp(1)).unwrap_err();
        assert!(matches!(err, Error::StateUnreachable { pass: Some(1), .. }));
    }
}
