//! Feature, prototype, split and result files.
//!
//! Binary features (`.fslf`), little-endian:
//!
//! ```text
//! offset 0   b"FSLF"
//! offset 4   u32 version = 1
//! offset 8   u32 n (rows)
//! offset 12  u32 d (columns)
//! offset 16  n*d f32, row-major
//! ```
//!
//! Row ids and labels live in a sibling CSV with header `row_id,class_id`.
//! CSV features use header `id,class,f0,...,f{d-1}`; prototype files use
//! `class,origin,f0,...,f{d-1}`.

mod report;
mod synth;

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::types::{ClassId, DatasetSplit, FeatureMatrix, Origin, PrototypeSet, ValidationReport};

pub use report::{render_table, write_report, write_results_csv};
pub use synth::{generate_synthetic, SyntheticDataset, SyntheticSpec};

pub const MAGIC: &[u8; 4] = b"FSLF";
pub const VERSION: u32 = 1;
const HEADER_LEN: u64 = 16;

/// Row id prefix of samples that may be drawn as shots.
pub const TRAIN_PREFIX: &str = "train:";
/// Row id prefix of evaluation samples.
pub const TEST_PREFIX: &str = "test:";

pub const FEATURES_FILE: &str = "features.fslf";
pub const LABELS_FILE: &str = "labels.csv";
pub const PROTOTYPES_FILE: &str = "prototypes.csv";
pub const SPLIT_FILE: &str = "split.json";
pub const MANIFEST_FILE: &str = "manifest.json";

pub fn write_features_binary<W: Write>(mut w: W, data: &DMatrix<f64>) -> Result<()> {
    let to_u32 = |v: usize| {
        u32::try_from(v).map_err(|_| Error::Invalid(format!("dimension {v} does not fit the binary header")))
    };
    let mut buf = Vec::with_capacity(HEADER_LEN as usize + 4 * data.len());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&to_u32(data.nrows())?.to_le_bytes());
    buf.extend_from_slice(&to_u32(data.ncols())?.to_le_bytes());
    for i in 0..data.nrows() {
        for j in 0..data.ncols() {
            buf.extend_from_slice(&(data[(i, j)] as f32).to_le_bytes());
        }
    }
    w.write_all(&buf).map_err(|e| Error::io("<writer>", e))
}

pub fn read_features_binary<R: Read>(mut r: R) -> Result<DMatrix<f64>> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(|e| Error::io("<reader>", e))?;
    parse_features_binary(&bytes)
}

fn parse_features_binary(bytes: &[u8]) -> Result<DMatrix<f64>> {
    let len = bytes.len() as u64;
    if len < HEADER_LEN {
        return Err(Error::format(len, format!("truncated header: {len} of {HEADER_LEN} bytes")));
    }
    if &bytes[0..4] != MAGIC {
        return Err(Error::format(0, "bad magic, expected FSLF"));
    }
    let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"));
    let version = word(4);
    if version != VERSION {
        return Err(Error::format(4, format!("unsupported version {version}")));
    }
    let (n, d) = (word(8) as usize, word(12) as usize);
    let expected = HEADER_LEN + 4 * n as u64 * d as u64;
    if len < expected {
        return Err(Error::format(len, format!("truncated data: {len} of {expected} bytes for {n}x{d}")));
    }
    if len > expected {
        return Err(Error::format(expected, format!("{} trailing bytes", len - expected)));
    }
    let body = &bytes[HEADER_LEN as usize..];
    Ok(DMatrix::from_fn(n, d, |i, j| {
        let at = 4 * (i * d + j);
        f32::from_le_bytes(body[at..at + 4].try_into().expect("4 bytes")) as f64
    }))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| Error::io(path, e))
}

/// Writes the binary matrix to `features` and ids/labels to `labels`.
pub fn save_features(fm: &FeatureMatrix, features: &Path, labels: &Path) -> Result<()> {
    let mut w = create(features)?;
    write_features_binary(&mut w, fm.data())?;
    w.flush().map_err(|e| Error::io(features, e))?;
    let mut csv = csv::Writer::from_writer(create(labels)?);
    csv.write_record(["row_id", "class_id"])?;
    for (id, label) in fm.row_ids().iter().zip(fm.labels()) {
        csv.write_record([id, label])?;
    }
    csv.flush().map_err(|e| Error::io(labels, e))?;
    Ok(())
}

pub fn load_features(features: &Path, labels: &Path) -> Result<FeatureMatrix> {
    let mut bytes = Vec::new();
    open(features)?
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(features, e))?;
    let data = parse_features_binary(&bytes)?;
    let mut row_ids = Vec::new();
    let mut classes = Vec::new();
    let mut rdr = csv::Reader::from_reader(open(labels)?);
    check_header(rdr.headers()?, &["row_id", "class_id"], labels)?;
    for rec in rdr.records() {
        let rec = rec?;
        if rec.len() != 2 {
            return Err(Error::Invalid(format!("{}: expected 2 columns, got {}", labels.display(), rec.len())));
        }
        row_ids.push(rec[0].to_string());
        classes.push(rec[1].to_string());
    }
    FeatureMatrix::new(data, row_ids, classes)
}

fn check_header(headers: &csv::StringRecord, expected: &[&str], path: &Path) -> Result<()> {
    let ok = expected.iter().enumerate().all(|(i, e)| headers.get(i) == Some(*e));
    if ok {
        Ok(())
    } else {
        Err(Error::Invalid(format!(
            "{}: header must start with {}",
            path.display(),
            expected.join(",")
        )))
    }
}

fn feature_header(lead: &[&str], d: usize) -> Vec<String> {
    lead.iter()
        .map(|s| s.to_string())
        .chain((0..d).map(|j| format!("f{j}")))
        .collect()
}

/// Shortest decimal text that parses back to the same `f64`.
fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

fn parse_row(rec: &csv::StringRecord, skip: usize, d: usize, path: &Path, line: usize) -> Result<Vec<f64>> {
    if rec.len() != skip + d {
        return Err(Error::Invalid(format!(
            "{}:{line}: expected {} columns, got {}",
            path.display(),
            skip + d,
            rec.len()
        )));
    }
    rec.iter()
        .skip(skip)
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Error::Invalid(format!("{}:{line}: `{s}` is not a number", path.display())))
        })
        .collect()
}

pub fn save_features_csv(fm: &FeatureMatrix, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(feature_header(&["id", "class"], fm.dim()))?;
    for i in 0..fm.nrows() {
        let mut rec = vec![fm.row_ids()[i].clone(), fm.labels()[i].clone()];
        rec.extend(fm.data().row(i).iter().map(|&v| fmt_f64(v)));
        w.write_record(rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn load_features_csv(path: &Path) -> Result<FeatureMatrix> {
    let mut rdr = csv::Reader::from_reader(open(path)?);
    check_header(rdr.headers()?, &["id", "class"], path)?;
    let d = rdr.headers()?.len().saturating_sub(2);
    let (mut ids, mut labels, mut values) = (Vec::new(), Vec::new(), Vec::new());
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec?;
        values.extend(parse_row(&rec, 2, d, path, k + 2)?);
        ids.push(rec[0].to_string());
        labels.push(rec[1].to_string());
    }
    FeatureMatrix::new(DMatrix::from_row_slice(ids.len(), d, &values), ids, labels)
}

pub fn save_prototypes(ps: &PrototypeSet, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(feature_header(&["class", "origin"], ps.dim()))?;
    for i in 0..ps.len() {
        let mut rec = vec![ps.class_id(i).to_string(), ps.origins()[i].to_string()];
        rec.extend(ps.matrix().row(i).iter().map(|&v| fmt_f64(v)));
        w.write_record(rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn load_prototypes(path: &Path) -> Result<PrototypeSet> {
    let mut rdr = csv::Reader::from_reader(open(path)?);
    check_header(rdr.headers()?, &["class", "origin"], path)?;
    let d = rdr.headers()?.len().saturating_sub(2);
    let (mut ids, mut origins, mut values) = (Vec::new(), Vec::new(), Vec::new());
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec?;
        values.extend(parse_row(&rec, 2, d, path, k + 2)?);
        ids.push(rec[0].to_string());
        origins.push(
            Origin::parse(&rec[1])
                .ok_or_else(|| Error::Invalid(format!("{}:{}: unknown origin `{}`", path.display(), k + 2, &rec[1])))?,
        );
    }
    PrototypeSet::new(DMatrix::from_row_slice(ids.len(), d, &values), ids, origins)
}

pub fn save_split(split: &DatasetSplit, path: &Path) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, split)?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads `{"base_classes": [...], "novel_classes": [...], "shots": k?}`.
pub fn load_split(path: &Path) -> Result<DatasetSplit> {
    let split: DatasetSplit = serde_json::from_reader(open(path)?)?;
    split.check()?;
    Ok(split)
}

/// Everything an evaluation needs: prototypes for base (and optionally
/// novel) classes, the sample pools, and the class split.
#[derive(Debug, Clone)]
pub struct Dataset {
    /// Given base prototypes, plus oracle novel prototypes when known.
    pub prototypes: PrototypeSet,
    /// Pool that shots are drawn from.
    pub train: FeatureMatrix,
    pub test: FeatureMatrix,
    pub split: DatasetSplit,
}

impl Dataset {
    pub fn new(prototypes: PrototypeSet, train: FeatureMatrix, test: FeatureMatrix, split: DatasetSplit) -> Result<Self> {
        let ds = Self {
            prototypes,
            train,
            test,
            split,
        };
        ds.check()?;
        Ok(ds)
    }

    fn check(&self) -> Result<()> {
        self.split.check()?;
        let mut report = ValidationReport {
            issues: self.prototypes.validate(),
        };
        report.issues.extend(self.train.validate());
        report.issues.extend(self.test.validate());
        report.into_result()?;
        let d = self.prototypes.dim();
        for fm in [&self.train, &self.test] {
            if fm.dim() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    found: fm.dim(),
                });
            }
        }
        for c in &self.split.base_classes {
            if self.prototypes.index_of(c).is_none() {
                return Err(Error::Invalid(format!("base class `{c}` has no prototype")));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.prototypes.dim()
    }

    /// Hex digest over all values, ids and the split; stable across runs.
    pub fn identity(&self) -> String {
        let mut h = Sha256::new();
        let put_matrix = |h: &mut Sha256, m: &DMatrix<f64>| {
            h.update((m.nrows() as u64).to_le_bytes());
            h.update((m.ncols() as u64).to_le_bytes());
            for i in 0..m.nrows() {
                for j in 0..m.ncols() {
                    h.update(m[(i, j)].to_le_bytes());
                }
            }
        };
        put_matrix(&mut h, self.prototypes.matrix());
        for (c, o) in self.prototypes.class_ids().iter().zip(self.prototypes.origins()) {
            h.update(c.as_bytes());
            h.update([0]);
            h.update(o.as_str().as_bytes());
            h.update([0]);
        }
        for fm in [&self.train, &self.test] {
            put_matrix(&mut h, fm.data());
            for (id, l) in fm.row_ids().iter().zip(fm.labels()) {
                h.update(id.as_bytes());
                h.update([0]);
                h.update(l.as_bytes());
                h.update([0]);
            }
        }
        h.update(serde_json::to_vec(&self.split).expect("split serialises"));
        let digest = h.finalize();
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    /// Writes `features.fslf`, `labels.csv`, `prototypes.csv` and
    /// `split.json` into `dir`. Returns the paths written.
    pub fn save(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        let all_rows = concat_features(&self.train, &self.test)?;
        let paths = [FEATURES_FILE, LABELS_FILE, PROTOTYPES_FILE, SPLIT_FILE].map(|f| dir.join(f));
        save_features(&all_rows, &paths[0], &paths[1])?;
        save_prototypes(&self.prototypes, &paths[2])?;
        save_split(&self.split, &paths[3])?;
        Ok(paths.to_vec())
    }

    /// Loads the layout written by [`Dataset::save`]. Rows are assigned to
    /// the train or test pool by their `train:`/`test:` id prefix.
    pub fn load(dir: &Path) -> Result<Self> {
        let all = load_features(&dir.join(FEATURES_FILE), &dir.join(LABELS_FILE))?;
        let prototypes = load_prototypes(&dir.join(PROTOTYPES_FILE))?;
        let split = load_split(&dir.join(SPLIT_FILE))?;
        let (mut train_rows, mut test_rows) = (Vec::new(), Vec::new());
        for (i, id) in all.row_ids().iter().enumerate() {
            if id.starts_with(TRAIN_PREFIX) {
                train_rows.push(i);
            } else if id.starts_with(TEST_PREFIX) {
                test_rows.push(i);
            } else {
                return Err(Error::Invalid(format!(
                    "row id `{id}` must start with `{TRAIN_PREFIX}` or `{TEST_PREFIX}`"
                )));
            }
        }
        if train_rows.is_empty() || test_rows.is_empty() {
            return Err(Error::Invalid("dataset needs both train: and test: rows".into()));
        }
        Self::new(prototypes, all.select_rows(&train_rows)?, all.select_rows(&test_rows)?, split)
    }

    /// Prototype for a novel class when the dataset carries one.
    pub fn oracle_prototype(&self, class: &ClassId) -> Option<usize> {
        self.prototypes.index_of(class)
    }
}

fn concat_features(a: &FeatureMatrix, b: &FeatureMatrix) -> Result<FeatureMatrix> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            found: b.dim(),
        });
    }
    let n = a.nrows();
    let data = DMatrix::from_fn(n + b.nrows(), a.dim(), |i, j| {
        if i < n {
            a.data()[(i, j)]
        } else {
            b.data()[(i - n, j)]
        }
    });
    FeatureMatrix::new(
        data,
        a.row_ids().iter().chain(b.row_ids()).cloned().collect(),
        a.labels().iter().chain(b.labels()).cloned().collect(),
    )
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_reader(open(path)?)?)
}

pub(crate) fn create_file(path: &Path) -> Result<BufWriter<File>> {
    create(path)
}
