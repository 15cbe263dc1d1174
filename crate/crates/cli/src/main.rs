//! `protofsl` command-line driver.
//!
//! Exit codes: 0 success, 1 invalid input or configuration, 2 runtime or
//! numeric failure.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nalgebra::DVector;
use serde::Serialize;

use protofsl::dataio::{self, Dataset};
use protofsl::harness::{self, EvalConfig, SweepAxis, Variant};
use protofsl::markov::{classify_nn, TwoPassClassifier};
use protofsl::types::{mean_shot, validate_episode};
use protofsl::{Error, FeatureMatrix, HyperParams, Origin, Parallelism, PrototypeSet};

use config::{resolve_hp, write_manifest, DataArgs, FileConfig, HpOverrides, RunConfig, Source, SweepSpec};

#[derive(Debug)]
pub struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn validation(message: impl Into<String>) -> Self {
        Self {
            code: 1,
            message: message.into(),
        }
    }

    fn runtime(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_validation() {
            Failure::validation(e.to_string())
        } else {
            Failure::runtime(e.to_string())
        }
    }
}

#[derive(Parser)]
#[command(name = "protofsl", version, about = "Few-shot recognition from class prototypes")]
struct Cli {
    /// JSON config file; command-line flags override its values
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed (for `synth`, the dataset seed)
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; changes speed only
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a seeded synthetic dataset
    Synth(SynthArgs),
    /// Estimate novel prototypes for one episode
    Estimate(EstimateArgs),
    /// Classify test samples for one episode
    Classify(ClassifyArgs),
    /// Run the evaluation protocol
    Evaluate(EvaluateArgs),
    /// Evaluate across values of one setting
    Sweep(SweepArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long = "latent-dim")]
    latent_dim: Option<usize>,
    /// Base class count
    #[arg(long)]
    base: Option<usize>,
    /// Novel class count
    #[arg(long)]
    novel: Option<usize>,
    #[arg(long = "samples-per-class")]
    samples_per_class: Option<usize>,
    #[arg(long = "test-per-class")]
    test_per_class: Option<usize>,
    #[arg(long = "hidden-pool")]
    hidden_pool: Option<usize>,
    #[arg(long)]
    spread: Option<f64>,
    #[arg(long)]
    curvature: Option<usize>,
}

#[derive(Args)]
struct EpisodeArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Shots per novel class
    #[arg(long, default_value_t = 1)]
    shots: usize,
    /// Trial index; the episode uses the same seed as that trial of `evaluate`
    #[arg(long, default_value_t = 0)]
    trial: usize,
    #[command(flatten)]
    hp: HpOverrides,
}

#[derive(Args)]
struct EstimateArgs {
    #[command(flatten)]
    episode: EpisodeArgs,
    /// Base prototypes CSV (instead of a dataset)
    #[arg(long, requires = "samples", conflicts_with_all = ["data", "synthetic"])]
    base: Option<PathBuf>,
    /// Novel-class shot features CSV; one prototype per class is estimated
    /// from the class mean
    #[arg(long, requires = "base")]
    samples: Option<PathBuf>,
}

#[derive(Args)]
struct ClassifyArgs {
    #[command(flatten)]
    episode: EpisodeArgs,
    #[arg(long, default_value = "M1_M2")]
    variant: Variant,
    /// Test samples per class, first in file order
    #[arg(long = "test-cap")]
    test_cap: Option<usize>,
    /// Prototype CSV (instead of a dataset); rows tagged `given-base` are
    /// base classes, all others novel
    #[arg(long, requires = "test", conflicts_with_all = ["data", "synthetic"])]
    prototypes: Option<PathBuf>,
    /// Test features CSV for use with --prototypes
    #[arg(long, requires = "prototypes")]
    test: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_delimiter = ',')]
    variants: Option<Vec<Variant>>,
    #[arg(long, value_delimiter = ',')]
    shots: Option<Vec<usize>>,
    #[arg(long)]
    trials: Option<usize>,
    /// Test samples per class, first in file order
    #[arg(long = "test-cap")]
    test_cap: Option<usize>,
    #[command(flatten)]
    hp: HpOverrides,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    eval: EvaluateArgs,
    /// shots, base_ratio, total_classes, r, alpha1 or alpha2
    #[arg(long)]
    axis: Option<SweepAxis>,
    #[arg(long, value_delimiter = ',')]
    values: Option<Vec<f64>>,
}

struct Globals {
    file: FileConfig,
    seed: Option<u64>,
    out: PathBuf,
    parallelism: Parallelism,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let file = FileConfig::load(cli.config.as_deref())?;
    let parallelism = match cli.threads {
        Some(0) => return Err(Failure::validation("--threads must be at least 1")),
        Some(n) => {
            protofsl::par::init_thread_pool(n);
            Parallelism::Parallel
        }
        None => Parallelism::Parallel,
    };
    let out = cli
        .out
        .clone()
        .or_else(|| file.out.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    let g = Globals {
        seed: cli.seed,
        out,
        parallelism,
        file,
    };
    match cli.command {
        Command::Synth(a) => synth(&g, a),
        Command::Estimate(a) => estimate(&g, a),
        Command::Classify(a) => classify(&g, a),
        Command::Evaluate(a) => evaluate(&g, a),
        Command::Sweep(a) => sweep(&g, a),
    }
}

fn make_out(dir: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(dir).map_err(|e| Failure::runtime(format!("{}: {e}", dir.display())))
}

fn master_seed(g: &Globals) -> u64 {
    g.seed.or(g.file.seed).unwrap_or(0)
}

fn base_config(g: &Globals, command: &'static str, hp: (String, HyperParams)) -> RunConfig {
    RunConfig {
        command,
        profile: hp.0,
        hp: hp.1,
        source: None,
        variants: None,
        shots: None,
        trials: None,
        trial: None,
        seed: master_seed(g),
        out: g.out.clone(),
        test_cap: None,
        sweep: None,
        inputs: Vec::new(),
    }
}

fn synth(g: &Globals, a: SynthArgs) -> Result<(), Failure> {
    let mut spec = g.file.synthetic.clone().unwrap_or_default();
    macro_rules! set {
        ($($flag:ident => $field:ident),*) => {$( if let Some(v) = a.$flag { spec.$field = v; } )*};
    }
    set!(dim => d, latent_dim => latent_dim, base => n_base, novel => n_novel,
         samples_per_class => samples_per_class, test_per_class => test_per_class,
         hidden_pool => hidden_pool, spread => spread, curvature => curvature);
    if let Some(seed) = g.seed.or(g.file.seed) {
        spec.seed = seed;
    }
    spec.validate()?;
    let dataset = dataio::generate_synthetic(&spec)?.to_dataset()?;
    make_out(&g.out)?;
    let mut outputs = dataset.save(&g.out)?;
    let mut cfg = base_config(g, "synth", ("imagenet".into(), HyperParams::default()));
    cfg.seed = spec.seed;
    cfg.source = Some(Source::Synthetic(spec.clone()));
    let identity = dataset.identity();
    outputs.push(write_manifest(&cfg, Some(&identity), &outputs)?);
    println!(
        "wrote {} classes ({} base, {} novel), d={}, dataset {identity} to {}",
        spec.n_classes(),
        spec.n_base,
        spec.n_novel,
        spec.d,
        g.out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct ClassDiagnostics {
    class: String,
    status: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    shift_from_shot_mean: Option<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    neighbors: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    q_used: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

/// Base prototypes and per-class shot means for `estimate`, with the
/// training rows they came from.
fn episode_inputs(g: &Globals, a: &EstimateArgs, hp: &HyperParams, cfg: &mut RunConfig) -> Result<(PrototypeSet, PrototypeSet, FeatureMatrix, Option<String>), Failure> {
    if let (Some(base_path), Some(samples_path)) = (&a.base, &a.samples) {
        cfg.inputs = vec![base_path.clone(), samples_path.clone()];
        let base = dataio::load_prototypes(base_path)?;
        let samples = dataio::load_features_csv(samples_path)?;
        validate_episode(&base, &samples, hp).into_result()?;
        let groups = samples.group_by_label();
        let means = groups
            .iter()
            .map(|(_, rows)| mean_shot(&samples, rows))
            .collect::<Result<Vec<_>, _>>()?;
        let ids: Vec<String> = groups.into_iter().map(|(c, _)| c).collect();
        let shot_means = PrototypeSet::from_rows(&means, ids, vec![Origin::SampleMean; means.len()])?;
        return Ok((base, shot_means, samples, None));
    }
    let source = Source::resolve(&g.file, &a.episode.data)?;
    let dataset = source.load()?;
    cfg.source = Some(source);
    let ep = harness::sample_episode(&dataset, &dataset.split, a.episode.shots, harness::trial_seed(cfg.seed, a.episode.trial), None)?;
    let rows: Vec<usize> = ep.shots.iter().flat_map(|(_, r)| r.iter().copied()).collect();
    let samples = dataset.train.select_rows(&rows)?;
    validate_episode(&ep.base, &samples, hp).into_result()?;
    Ok((ep.base, ep.shot_means, samples, Some(dataset.identity())))
}

fn estimate(g: &Globals, a: EstimateArgs) -> Result<(), Failure> {
    let hp = resolve_hp(&g.file, &a.episode.hp)?;
    let mut cfg = base_config(g, "estimate", hp.clone());
    cfg.shots = Some(vec![a.episode.shots]);
    cfg.trial = Some(a.episode.trial);
    let hp = hp.1;
    let (base, shot_means, _, identity) = episode_inputs(g, &a, &hp, &mut cfg)?;

    let results = protofsl::par::map_range(shot_means.len(), g.parallelism, |i| harness::estimate_with_retry(&shot_means.row(i), &base, &hp));
    let mut rows = Vec::new();
    let mut ids = Vec::new();
    let mut diagnostics = Vec::new();
    let mut failed = 0;
    for (i, r) in results.into_iter().enumerate() {
        let class = shot_means.class_id(i).to_string();
        match r {
            Ok(est) => {
                diagnostics.push(ClassDiagnostics {
                    class: class.clone(),
                    status: "ok",
                    shift_from_shot_mean: Some((&est.prototype - shot_means.row(i)).norm()),
                    neighbors: est.context.neighbor_indices.iter().map(|&k| base.class_id(k).to_string()).collect(),
                    q_used: Some(est.q),
                    error: None,
                });
                rows.push(est.prototype);
                ids.push(class);
            }
            Err(e) => {
                failed += 1;
                eprintln!("class {class}: {e}");
                diagnostics.push(ClassDiagnostics {
                    class,
                    status: "failed",
                    shift_from_shot_mean: None,
                    neighbors: Vec::new(),
                    q_used: None,
                    error: Some(e.to_string()),
                });
            }
        }
    }
    make_out(&g.out)?;
    let mut outputs = Vec::new();
    let means_path = g.out.join("shot_means.csv");
    dataio::save_prototypes(&shot_means, &means_path)?;
    outputs.push(means_path);
    if !rows.is_empty() {
        let estimated = PrototypeSet::from_rows(&rows, ids, vec![Origin::EstimatedNovel; rows.len()])?;
        let path = g.out.join("estimated_prototypes.csv");
        dataio::save_prototypes(&estimated, &path)?;
        outputs.push(path);
    }
    let diag_path = g.out.join("diagnostics.json");
    dataio::write_json(&diagnostics, &diag_path)?;
    outputs.push(diag_path);
    write_manifest(&cfg, identity.as_deref(), &outputs)?;
    println!("estimated {} of {} novel prototypes into {}", rows.len(), shot_means.len(), g.out.display());
    if failed > 0 {
        return Err(Failure::runtime(format!("{failed} class(es) failed after retries")));
    }
    Ok(())
}

#[derive(Serialize)]
struct ClassifySummary {
    variant: Variant,
    test_samples: usize,
    classwise_accuracy: Option<f64>,
}

fn predict(variant: Variant, base: &PrototypeSet, novel: &PrototypeSet, test: &FeatureMatrix, hp: &HyperParams, parallelism: Parallelism) -> Result<Vec<String>, Error> {
    let all = base.concat(novel)?;
    let rows: Vec<DVector<f64>> = (0..test.nrows()).map(|i| test.row(i)).collect();
    let out = match variant {
        Variant::M2 | Variant::M1M2 => {
            let base_ids: Vec<usize> = (0..base.len()).collect();
            let novel_ids: Vec<usize> = (base.len()..all.len()).collect();
            let clf = TwoPassClassifier::new(&all, &base_ids, &novel_ids, hp)?;
            protofsl::par::map_slice(&rows, parallelism, |x| clf.classify(x).map(|d| d.class))
        }
        _ => protofsl::par::map_slice(&rows, parallelism, |x| classify_nn(x, &all)),
    };
    out.into_iter()
        .map(|r| r.map(|k| all.class_id(k).to_string()))
        .collect()
}

fn classify(g: &Globals, a: ClassifyArgs) -> Result<(), Failure> {
    let hp_named = resolve_hp(&g.file, &a.episode.hp)?;
    let mut cfg = base_config(g, "classify", hp_named.clone());
    let hp = hp_named.1;
    cfg.variants = Some(vec![a.variant]);
    cfg.test_cap = a.test_cap;
    if a.test_cap == Some(0) {
        return Err(Failure::validation("--test-cap must be positive"));
    }

    let (base, novel, test, identity) = if let (Some(p), Some(t)) = (&a.prototypes, &a.test) {
        cfg.inputs = vec![p.clone(), t.clone()];
        let all = dataio::load_prototypes(p)?;
        let base_idx: Vec<usize> = (0..all.len()).filter(|&i| all.origins()[i] == Origin::GivenBase).collect();
        let novel_idx: Vec<usize> = (0..all.len()).filter(|&i| all.origins()[i] != Origin::GivenBase).collect();
        if base_idx.is_empty() || novel_idx.is_empty() {
            return Err(Failure::validation("prototype file needs given-base rows and at least one novel row"));
        }
        let test = dataio::load_features_csv(t)?;
        (all.subset(&base_idx)?, all.subset(&novel_idx)?, test, None)
    } else {
        cfg.shots = Some(vec![a.episode.shots]);
        cfg.trial = Some(a.episode.trial);
        let source = Source::resolve(&g.file, &a.episode.data)?;
        let dataset: Dataset = source.load()?;
        cfg.source = Some(source);
        let ep = harness::sample_episode(&dataset, &dataset.split, a.episode.shots, harness::trial_seed(cfg.seed, a.episode.trial), a.test_cap)?;
        let novel = match a.variant {
            Variant::Na | Variant::M2 => ep.shot_means.clone(),
            Variant::Oracle => ep.oracle.clone(),
            Variant::M1 | Variant::M1M2 => harness::estimate_novel(&ep, &hp, g.parallelism)?.0,
        };
        (ep.base, novel, ep.test, Some(dataset.identity()))
    };
    if test.dim() != base.dim() {
        return Err(Error::DimensionMismatch {
            expected: base.dim(),
            found: test.dim(),
        }
        .into());
    }
    let predictions = predict(a.variant, &base, &novel, &test, &hp, g.parallelism)?;

    let known: Vec<bool> = test
        .labels()
        .iter()
        .map(|l| base.index_of(l).is_some() || novel.index_of(l).is_some())
        .collect();
    let accuracy = if known.iter().all(|&k| k) {
        Some(harness::classwise_accuracy(&predictions, test.labels())?)
    } else {
        None
    };

    make_out(&g.out)?;
    let pred_path = g.out.join("predictions.csv");
    let mut w = csv_writer(&pred_path)?;
    let io = |e: csv::Error| Failure::runtime(format!("{}: {e}", pred_path.display()));
    w.write_record(["row_id", "class", "predicted"]).map_err(io)?;
    for ((id, truth), p) in test.row_ids().iter().zip(test.labels()).zip(&predictions) {
        w.write_record([id, truth, p]).map_err(io)?;
    }
    w.flush().map_err(|e| Failure::runtime(format!("{}: {e}", pred_path.display())))?;
    let summary_path = g.out.join("summary.json");
    let summary = ClassifySummary {
        variant: a.variant,
        test_samples: predictions.len(),
        classwise_accuracy: accuracy,
    };
    dataio::write_json(&summary, &summary_path)?;
    write_manifest(&cfg, identity.as_deref(), &[pred_path, summary_path])?;
    match accuracy {
        Some(acc) => println!("{}: {} test samples, class-wise accuracy {acc:.2}%", a.variant, predictions.len()),
        None => println!("{}: {} test samples classified", a.variant, predictions.len()),
    }
    Ok(())
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>, Failure> {
    csv::Writer::from_path(path).map_err(|e| Failure::runtime(format!("{}: {e}", path.display())))
}

/// Evaluation settings and the run config they came from.
fn eval_setup(g: &Globals, a: &EvaluateArgs, command: &'static str) -> Result<(Dataset, EvalConfig, RunConfig), Failure> {
    let hp = resolve_hp(&g.file, &a.hp)?;
    let mut cfg = base_config(g, command, hp.clone());
    let source = Source::resolve(&g.file, &a.data)?;
    let variants = a
        .variants
        .clone()
        .or_else(|| g.file.variants.clone())
        .unwrap_or_else(|| Variant::ALL.to_vec());
    let shots = a.shots.clone().or_else(|| g.file.shots.clone()).unwrap_or_else(|| vec![1]);
    let trials = a.trials.or(g.file.trials).unwrap_or(10);
    let test_cap = a.test_cap.or(g.file.test_cap);
    cfg.variants = Some(variants.clone());
    cfg.shots = Some(shots.clone());
    cfg.trials = Some(trials);
    cfg.test_cap = test_cap;
    let dataset = source.load()?;
    cfg.source = Some(source);
    let eval = EvalConfig {
        variants,
        shots,
        trials,
        seed: cfg.seed,
        hp: hp.1,
        test_cap,
        label: hp.0,
        parallelism: g.parallelism,
    };
    Ok((dataset, eval, cfg))
}

fn finish(g: &Globals, report: &harness::EvalReport, cfg: &RunConfig) -> Result<(), Failure> {
    make_out(&g.out)?;
    let outputs = dataio::write_report(report, &g.out)?;
    write_manifest(cfg, Some(&report.provenance.dataset), &outputs)?;
    print!("{}", dataio::render_table(report));
    for row in report.rows.iter().filter(|r| !r.failures.is_empty()) {
        eprintln!(
            "{} {} {}-shot: {} trial(s) failed, first: {}",
            row.variant,
            row.config,
            row.shot,
            row.failures.len(),
            row.failures[0].error
        );
    }
    if report.all_failed() {
        return Err(Failure::runtime("every cell failed"));
    }
    Ok(())
}

fn evaluate(g: &Globals, a: EvaluateArgs) -> Result<(), Failure> {
    let (dataset, eval, cfg) = eval_setup(g, &a, "evaluate")?;
    let report = harness::evaluate(&dataset, &eval)?;
    finish(g, &report, &cfg)
}

fn sweep(g: &Globals, a: SweepArgs) -> Result<(), Failure> {
    let (dataset, eval, mut cfg) = eval_setup(g, &a.eval, "sweep")?;
    let file_sweep = g.file.sweep.clone();
    let axis = a
        .axis
        .or(file_sweep.as_ref().map(|s| s.axis))
        .ok_or_else(|| Failure::validation("sweep needs --axis"))?;
    let values = a
        .values
        .clone()
        .or(file_sweep.map(|s| s.values))
        .ok_or_else(|| Failure::validation("sweep needs --values"))?;
    if axis == SweepAxis::Shots {
        cfg.shots = None;
    }
    cfg.sweep = Some(SweepSpec {
        axis,
        values: values.clone(),
    });
    let report = harness::sweep(&dataset, axis, &values, &eval)?;
    finish(g, &report, &cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_parse() {
        Cli::try_parse_from(["protofsl", "--seed", "3", "evaluate", "--synthetic", "--variants", "NA,M1", "--shots", "1,5"]).unwrap();
        Cli::try_parse_from(["protofsl", "sweep", "--synthetic", "--axis", "alpha1", "--values", "0,0.5,1"]).unwrap();
        assert!(Cli::try_parse_from(["protofsl", "evaluate", "--variants", "NA,M3"]).is_err());
        assert!(Cli::try_parse_from(["protofsl", "estimate", "--base", "b.csv"]).is_err());
    }

    #[test]
    fn error_classes_map_to_exit_codes() {
        assert_eq!(Failure::from(Error::Invalid("x".into())).code, 1);
        assert_eq!(Failure::from(Error::DegenerateMean { dim: 2, gap: 0.0 }).code, 2);
        let wrapped = Error::Estimation {
            class: "c".into(),
            source: Box::new(Error::RankDeficient { rank: 1, required: 2 }),
        };
        assert_eq!(Failure::from(wrapped).code, 2);
    }

    #[test]
    fn profile_then_file_then_flags() {
        let file: FileConfig = serde_json::from_str(r#"{"profile": "cub", "hyperparams": {"r": 7, "alpha1": 0.3}}"#).unwrap();
        let flags = HpOverrides {
            alpha1: Some(0.8),
            ..HpOverrides::default()
        };
        let (name, hp) = resolve_hp(&file, &flags).unwrap();
        assert_eq!(name, "cub");
        assert_eq!((hp.r, hp.k_prime, hp.alpha1, hp.alpha2), (7, 5, 0.8, 0.5));
        let bad = HpOverrides {
            alpha2: Some(1.5),
            ..HpOverrides::default()
        };
        assert_eq!(resolve_hp(&FileConfig::default(), &bad).unwrap_err().code, 1);
    }
}
