//! Few-shot recognition from class prototypes alone.
//!
//! Base classes are known only through their prototypes; novel classes
//! through a handful of samples. [`subspace`] estimates each novel prototype
//! by projecting the shot mean onto the Grassmann extrinsic mean of local
//! base-prototype subspaces, and [`markov`] classifies test samples with an
//! absorbing Markov chain on the k'-NN graph of all prototypes.
//! [`harness`] runs the evaluation protocol and [`dataio`] handles files and
//! synthetic data.

pub mod dataio;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod markov;
pub mod par;
pub mod rng;
pub mod subspace;
pub mod types;

pub use error::{Error, Result};
pub use harness::{EvalConfig, EvalReport, Variant};
pub use markov::{AbsorbingChain, PrototypeGraph, TwoPassClassifier};
pub use par::Parallelism;
pub use subspace::{Estimate, Subspace};
pub use types::{
    ClassId, DatasetSplit, FeatureMatrix, HyperParams, InitialStateRule, Origin, PrototypeSet, ValidationReport,
};
