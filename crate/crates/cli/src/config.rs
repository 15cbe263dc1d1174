use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};

use protofsl::dataio::{self, Dataset, SyntheticSpec};
use protofsl::harness::{SweepAxis, Variant};
use protofsl::{HyperParams, InitialStateRule};

use crate::Failure;

/// Contents of a `--config` JSON file. Every field is optional; flags given
/// on the command line win over these, and these win over the profile.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub profile: Option<String>,
    #[serde(default)]
    pub hyperparams: HpOverrides,
    pub data: Option<PathBuf>,
    pub synthetic: Option<SyntheticSpec>,
    pub variants: Option<Vec<Variant>>,
    pub shots: Option<Vec<usize>>,
    pub trials: Option<usize>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub test_cap: Option<usize>,
    pub sweep: Option<SweepSpec>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, Failure> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Failure::validation(format!("{}: {e}", p.display())))?;
                serde_json::from_str(&text).map_err(|e| Failure::validation(format!("{}: {e}", p.display())))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HpOverrides {
    /// Hyperparameter profile: imagenet or cub
    #[arg(long)]
    #[serde(skip)]
    pub profile: Option<String>,
    /// Neighbouring base prototypes per novel class
    #[arg(long)]
    pub r: Option<usize>,
    /// Neighbours per neighbour (local subspace dimension minus one)
    #[arg(long)]
    pub q: Option<usize>,
    /// Graph out-degree
    #[arg(long = "k-prime")]
    pub k_prime: Option<usize>,
    #[arg(long)]
    pub alpha1: Option<f64>,
    #[arg(long)]
    pub alpha2: Option<f64>,
    #[arg(long = "rank-tol")]
    pub rank_tol: Option<f64>,
    #[arg(long = "equilibrium-tol")]
    pub equilibrium_tol: Option<f64>,
    #[arg(long)]
    pub bandwidth: Option<f64>,
    /// Initial state rule: neg-exp or distance
    #[arg(long = "initial-state", value_parser = parse_rule)]
    pub initial_state: Option<InitialStateRule>,
}

fn parse_rule(s: &str) -> Result<InitialStateRule, String> {
    match s {
        "neg-exp" => Ok(InitialStateRule::NegExp),
        "distance" => Ok(InitialStateRule::Distance),
        other => Err(format!("unknown initial state rule `{other}` (neg-exp, distance)")),
    }
}

impl HpOverrides {
    fn apply(&self, hp: &mut HyperParams) {
        macro_rules! set {
            ($($f:ident),*) => {$( if let Some(v) = self.$f { hp.$f = v; } )*};
        }
        set!(r, q, k_prime, alpha1, alpha2, rank_tol, equilibrium_tol, bandwidth, initial_state);
    }
}

/// Profile, then config file, then flags.
pub fn resolve_hp(file: &FileConfig, flags: &HpOverrides) -> Result<(String, HyperParams), Failure> {
    let name = flags
        .profile
        .clone()
        .or_else(|| file.profile.clone())
        .unwrap_or_else(|| "imagenet".into());
    let mut hp = HyperParams::profile(&name).ok_or_else(|| Failure::validation(format!("unknown profile `{name}` (imagenet, cub)")))?;
    file.hyperparams.apply(&mut hp);
    flags.apply(&mut hp);
    let issues = hp.validate();
    if !issues.is_empty() {
        return Err(protofsl::ValidationReport { issues }.into_result().unwrap_err().into());
    }
    Ok((name, hp))
}

#[derive(Debug, Clone, Default, Args)]
pub struct DataArgs {
    /// Dataset directory written by `synth`
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Generate the dataset in memory from the config's `synthetic` section
    /// (defaults when absent)
    #[arg(long, conflicts_with = "data")]
    pub synthetic: bool,
}

#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Data(PathBuf),
    Synthetic(SyntheticSpec),
}

impl Source {
    pub fn resolve(file: &FileConfig, flags: &DataArgs) -> Result<Self, Failure> {
        if let Some(dir) = &flags.data {
            return Ok(Source::Data(dir.clone()));
        }
        if flags.synthetic {
            return Ok(Source::Synthetic(file.synthetic.clone().unwrap_or_default()));
        }
        match (&file.data, &file.synthetic) {
            (Some(_), Some(_)) => Err(Failure::validation("config sets both `data` and `synthetic`; keep one")),
            (Some(dir), None) => Ok(Source::Data(dir.clone())),
            (None, Some(spec)) => Ok(Source::Synthetic(spec.clone())),
            (None, None) => Err(Failure::validation("no dataset: pass --data DIR or --synthetic")),
        }
    }

    pub fn load(&self) -> Result<Dataset, Failure> {
        match self {
            Source::Data(dir) => Ok(Dataset::load(dir)?),
            Source::Synthetic(spec) => Ok(dataio::generate_synthetic(spec)?.to_dataset()?),
        }
    }
}

/// Effective settings of a run, echoed into `manifest.json`.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub command: &'static str,
    pub profile: String,
    pub hp: HyperParams,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub source: Option<Source>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub variants: Option<Vec<Variant>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub shots: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trials: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trial: Option<usize>,
    pub seed: u64,
    pub out: PathBuf,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_cap: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSpec>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub inputs: Vec<PathBuf>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    seed: u64,
    config: &'a RunConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    dataset: Option<&'a str>,
    outputs: Vec<String>,
}

pub fn write_manifest(cfg: &RunConfig, dataset: Option<&str>, outputs: &[PathBuf]) -> Result<PathBuf, Failure> {
    let path = cfg.out.join(dataio::MANIFEST_FILE);
    let manifest = Manifest {
        tool: "protofsl",
        version: env!("CARGO_PKG_VERSION"),
        seed: cfg.seed,
        config: cfg,
        dataset,
        outputs: outputs
            .iter()
            .filter_map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
            .collect(),
    };
    dataio::write_json(&manifest, &path)?;
    Ok(path)
}
