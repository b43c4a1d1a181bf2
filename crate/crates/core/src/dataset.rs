//! Tabular data model: feature schema, labeled rows, CSV ingestion,
//! stratified splitting and the Pearson correlation feature filter.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureKind {
    Numeric,
    Boolean,
    CategoricalCoded,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    pub kind: FeatureKind,
    pub min: f64,
    pub max: f64,
}

/// Ordered, range-annotated feature declarations. `K` is the feature count.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureSchema {
    features: Vec<FeatureSpec>,
}

impl FeatureSchema {
    pub fn new(features: Vec<FeatureSpec>) -> Result<Self> {
        if features.is_empty() {
            return Err(Error::Schema("schema needs at least one feature".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for f in &features {
            if !seen.insert(f.name.clone()) {
                return Err(Error::Schema(format!("duplicate feature name {:?}", f.name)));
            }
            if !(f.min.is_finite() && f.max.is_finite() && f.min <= f.max) {
                return Err(Error::Schema(format!(
                    "feature {:?} has invalid range [{}, {}]",
                    f.name, f.min, f.max
                )));
            }
            if f.kind == FeatureKind::Boolean && (f.min != 0.0 || f.max != 1.0) {
                return Err(Error::Schema(format!(
                    "boolean feature {:?} must have range [0, 1]",
                    f.name
                )));
            }
        }
        Ok(FeatureSchema { features })
    }

    /// Uniform numeric features over [0, 1], named `f00`, `f01`, ...
    pub fn unit_numeric(names: &[&str]) -> Result<Self> {
        FeatureSchema::new(
            names
                .iter()
                .map(|n| FeatureSpec {
                    name: n.to_string(),
                    kind: FeatureKind::Numeric,
                    min: 0.0,
                    max: 1.0,
                })
                .collect(),
        )
    }

    pub fn k(&self) -> usize {
        self.features.len()
    }

    pub fn feature(&self, i: usize) -> &FeatureSpec {
        &self.features[i]
    }

    pub fn features(&self) -> &[FeatureSpec] {
        &self.features
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.features.iter().position(|f| f.name == name)
    }

    pub fn range(&self, i: usize) -> (f64, f64) {
        (self.features[i].min, self.features[i].max)
    }

    /// Hex SHA-256 over the canonical JSON form, used to pair model files
    /// with the dataset they were trained on.
    pub fn digest(&self) -> String {
        let json = serde_json::to_string(self).expect("schema serializes");
        let mut h = Sha256::new();
        h.update(json.as_bytes());
        let out = h.finalize();
        out.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn write_sidecar(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(&self.features)?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn read_sidecar(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let features: Vec<FeatureSpec> = serde_json::from_str(&text)?;
        FeatureSchema::new(features)
    }
}

/// One commit's feature values, index-aligned with the schema.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector(pub Vec<f64>);

impl FeatureVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

impl std::ops::Index<usize> for FeatureVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// Skip is the positive class everywhere.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Build,
    Skip,
}

impl Label {
    pub fn from_csv(cell: &str) -> Option<Label> {
        match cell.trim() {
            "0" => Some(Label::Build),
            "1" => Some(Label::Skip),
            _ => None,
        }
    }

    pub fn to_csv(self) -> &'static str {
        match self {
            Label::Build => "0",
            Label::Skip => "1",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub schema: FeatureSchema,
    pub rows: Vec<(FeatureVector, Label)>,
    pub provenance: String,
}

impl Dataset {
    pub fn new(schema: FeatureSchema, rows: Vec<(FeatureVector, Label)>, provenance: impl Into<String>) -> Result<Self> {
        let k = schema.k();
        for (i, (x, _)) in rows.iter().enumerate() {
            if x.len() != k {
                return Err(Error::Dataset(format!("row {i} has {} values, schema expects {k}", x.len())));
            }
            if x.0.iter().any(|v| !v.is_finite()) {
                return Err(Error::Dataset(format!("row {i} contains a non-finite value")));
            }
        }
        Ok(Dataset {
            schema,
            rows,
            provenance: provenance.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn class_counts(&self) -> (usize, usize) {
        let skip = self.rows.iter().filter(|(_, l)| *l == Label::Skip).count();
        (skip, self.rows.len() - skip)
    }

    pub fn column(&self, i: usize) -> Vec<f64> {
        self.rows.iter().map(|(x, _)| x[i]).collect()
    }

    /// Row-concatenation of datasets sharing one schema (feature names must match).
    pub fn concat(parts: &[&Dataset], provenance: impl Into<String>) -> Result<Dataset> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Dataset("concat of zero datasets".into()))?;
        let names: Vec<&str> = first.schema.features().iter().map(|f| f.name.as_str()).collect();
        for d in parts.iter().skip(1) {
            let other: Vec<&str> = d.schema.features().iter().map(|f| f.name.as_str()).collect();
            if names != other {
                return Err(Error::Dataset(format!(
                    "schema mismatch between {:?} and {:?}",
                    first.provenance, d.provenance
                )));
            }
        }
        let rows = parts.iter().flat_map(|d| d.rows.iter().cloned()).collect();
        Dataset::new(first.schema.clone(), rows, provenance)
    }
}

/// Parse a labeled CSV. The header names the columns; exactly one must be
/// `label` and its cells must be 0 (build) or 1 (skip). Feature ranges are
/// taken from the observed data.
pub fn load_csv(path: &Path) -> Result<Dataset> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::csv(path, 1, "empty file"))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    let label_idx = cols
        .iter()
        .position(|c| *c == "label")
        .ok_or_else(|| Error::csv(path, 1, "no `label` column in header"))?;
    let feat_names: Vec<String> = cols
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != label_idx)
        .map(|(_, c)| c.to_string())
        .collect();
    if feat_names.is_empty() {
        return Err(Error::csv(path, 1, "no feature columns"));
    }

    let mut rows: Vec<(FeatureVector, Label)> = Vec::new();
    for (lineno0, line) in lines {
        let lineno = lineno0 + 1;
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != cols.len() {
            return Err(Error::csv(
                path,
                lineno,
                format!("expected {} cells, found {}", cols.len(), cells.len()),
            ));
        }
        let label = Label::from_csv(cells[label_idx])
            .ok_or_else(|| Error::csv(path, lineno, format!("unknown label value {:?}", cells[label_idx])))?;
        let mut values = Vec::with_capacity(feat_names.len());
        for (i, cell) in cells.iter().enumerate() {
            if i == label_idx {
                continue;
            }
            let v: f64 = cell
                .trim()
                .parse()
                .map_err(|_| Error::csv(path, lineno, format!("non-numeric cell {cell:?}")))?;
            if !v.is_finite() {
                return Err(Error::csv(path, lineno, format!("non-finite cell {cell:?}")));
            }
            values.push(v);
        }
        rows.push((FeatureVector(values), label));
    }
    if rows.is_empty() {
        return Err(Error::csv(path, 1, "no data rows"));
    }

    let k = feat_names.len();
    let features = (0..k)
        .map(|i| {
            let mut min = f64::INFINITY;
            let mut max = f64::NEG_INFINITY;
            let mut boolish = true;
            for (x, _) in &rows {
                min = min.min(x[i]);
                max = max.max(x[i]);
                boolish &= x[i] == 0.0 || x[i] == 1.0;
            }
            let kind = if boolish { FeatureKind::Boolean } else { FeatureKind::Numeric };
            let (min, max) = if boolish { (0.0, 1.0) } else { (min, max) };
            FeatureSpec {
                name: feat_names[i].clone(),
                kind,
                min,
                max,
            }
        })
        .collect();

    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Dataset::new(FeatureSchema::new(features)?, rows, stem)
}

fn format_cell(v: f64) -> String {
    if v == v.trunc() && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}

pub fn write_csv(ds: &Dataset, path: &Path) -> Result<()> {
    let mut out = Vec::new();
    let names: Vec<&str> = ds.schema.features().iter().map(|f| f.name.as_str()).collect();
    writeln!(out, "{},label", names.join(",")).expect("write to vec");
    for (x, label) in &ds.rows {
        let cells: Vec<String> = x.0.iter().map(|v| format_cell(*v)).collect();
        writeln!(out, "{},{}", cells.join(","), label.to_csv()).expect("write to vec");
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Per-class split with round-half-up test counts; the remainder stays in
/// train. Deterministic for a fixed seed.
pub fn stratified_split(ds: &Dataset, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(0.0 < test_fraction && test_fraction < 1.0) {
        return Err(Error::Config(format!("test_fraction {test_fraction} not in (0,1)")));
    }
    let mut by_class: Vec<(Label, Vec<usize>)> = vec![(Label::Skip, Vec::new()), (Label::Build, Vec::new())];
    for (i, (_, l)) in ds.rows.iter().enumerate() {
        let slot = if *l == Label::Skip { 0 } else { 1 };
        by_class[slot].1.push(i);
    }
    for (label, idx) in &by_class {
        if idx.len() < 2 {
            return Err(Error::Dataset(format!(
                "class {label:?} has {} rows; need at least 2 for a stratified split",
                idx.len()
            )));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut test_idx: Vec<usize> = Vec::new();
    for (_, mut idx) in by_class {
        idx.shuffle(&mut rng);
        let want = (idx.len() as f64 * test_fraction + 0.5).floor() as usize;
        test_idx.extend(idx.into_iter().take(want));
    }
    let in_test: std::collections::HashSet<usize> = test_idx.iter().copied().collect();

    let mut train_rows = Vec::new();
    let mut test_rows = Vec::new();
    for (i, row) in ds.rows.iter().enumerate() {
        if in_test.contains(&i) {
            test_rows.push(row.clone());
        } else {
            train_rows.push(row.clone());
        }
    }
    Ok((
        Dataset::new(ds.schema.clone(), train_rows, ds.provenance.clone())?,
        Dataset::new(ds.schema.clone(), test_rows, ds.provenance.clone())?,
    ))
}

/// Pearson r between two columns; None when either side is constant.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        None
    } else {
        Some(cov / (va * vb).sqrt())
    }
}

/// Greedy pairwise scan in schema order; the later feature of each highly
/// correlated pair is dropped. Constant columns are kept unless exactly
/// duplicated by an earlier column.
pub fn correlation_filter(ds: &Dataset, threshold: f64) -> Result<(Dataset, Vec<String>)> {
    if ds.len() < 2 {
        return Err(Error::Dataset("correlation filter needs at least 2 rows".into()));
    }
    let k = ds.schema.k();
    let cols: Vec<Vec<f64>> = (0..k).map(|i| ds.column(i)).collect();
    let mut dropped = vec![false; k];
    for i in 0..k {
        if dropped[i] {
            continue;
        }
        for j in (i + 1)..k {
            if dropped[j] {
                continue;
            }
            let correlated = match pearson(&cols[i], &cols[j]) {
                Some(r) => r.abs() >= threshold,
                None => cols[i] == cols[j],
            };
            if correlated {
                dropped[j] = true;
            }
        }
    }

    let kept: Vec<usize> = (0..k).filter(|i| !dropped[*i]).collect();
    let dropped_names: Vec<String> = (0..k)
        .filter(|i| dropped[*i])
        .map(|i| ds.schema.feature(i).name.clone())
        .collect();
    let schema = FeatureSchema::new(kept.iter().map(|&i| ds.schema.feature(i).clone()).collect())?;
    let rows = ds
        .rows
        .iter()
        .map(|(x, l)| (FeatureVector(kept.iter().map(|&i| x[i]).collect()), *l))
        .collect();
    Ok((Dataset::new(schema, rows, ds.provenance.clone())?, dropped_names))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_csv(dir: &Path, body: &str) -> std::path::PathBuf {
        let p = dir.join("toy.csv");
        std::fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn load_small_csv() {
        let dir = tempfile::tempdir().unwrap();
        let p = toy_csv(dir.path(), "la,ld,label\n10,2,1\n0,0,0\n");
        let ds = load_csv(&p).unwrap();
        assert_eq!(ds.schema.k(), 2);
        assert_eq!(ds.class_counts(), (1, 1));
    }

    #[test]
    fn bad_label_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = toy_csv(dir.path(), "la,label\n1,0\n2,2\n");
        let err = load_csv(&p).unwrap_err().to_string();
        assert!(err.contains(":3:"), "error should name line 3: {err}");
    }

    #[test]
    fn bad_row_length_and_non_numeric() {
        let dir = tempfile::tempdir().unwrap();
        let p = toy_csv(dir.path(), "la,ld,label\n1,2\n");
        assert!(load_csv(&p).is_err());
        let p = toy_csv(dir.path(), "la,label\nfoo,0\n");
        assert!(load_csv(&p).unwrap_err().to_string().contains("non-numeric"));
    }

    #[test]
    fn empty_file_is_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = toy_csv(dir.path(), "");
        assert!(load_csv(&p).is_err());
        let p = toy_csv(dir.path(), "la,label\n");
        assert!(load_csv(&p).is_err());
    }

    fn class_dataset(skip: usize, build: usize) -> Dataset {
        let schema = FeatureSchema::unit_numeric(&["a"]).unwrap();
        let mut rows = Vec::new();
        for i in 0..skip {
            rows.push((FeatureVector(vec![i as f64 / 1000.0]), Label::Skip));
        }
        for i in 0..build {
            rows.push((FeatureVector(vec![i as f64 / 1000.0]), Label::Build));
        }
        Dataset::new(schema, rows, "toy").unwrap()
    }

    #[test]
    fn split_counts_20_80() {
        let ds = class_dataset(20, 80);
        let (train, test) = stratified_split(&ds, 0.2, 7).unwrap();
        assert_eq!(test.class_counts(), (4, 16));
        assert_eq!(train.len() + test.len(), 100);
    }

    #[test]
    fn split_rounding_small() {
        let ds = class_dataset(5, 5);
        let (_, test) = stratified_split(&ds, 0.2, 0).unwrap();
        assert_eq!(test.class_counts(), (1, 1));
    }

    #[test]
    fn split_deterministic() {
        let ds = class_dataset(10, 30);
        let a = stratified_split(&ds, 0.25, 42).unwrap();
        let b = stratified_split(&ds, 0.25, 42).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn split_rejects_tiny_class() {
        let ds = class_dataset(1, 10);
        assert!(stratified_split(&ds, 0.2, 0).is_err());
    }

    #[test]
    fn filter_drops_duplicate_column() {
        let schema = FeatureSchema::new(vec![
            FeatureSpec { name: "a".into(), kind: FeatureKind::Numeric, min: 0.0, max: 10.0 },
            FeatureSpec { name: "b".into(), kind: FeatureKind::Numeric, min: 0.0, max: 10.0 },
        ])
        .unwrap();
        let rows = (0..10)
            .map(|i| {
                let v = i as f64;
                (FeatureVector(vec![v, v]), if i % 2 == 0 { Label::Skip } else { Label::Build })
            })
            .collect();
        let ds = Dataset::new(schema, rows, "dup").unwrap();
        let (filtered, dropped) = correlation_filter(&ds, 0.8).unwrap();
        assert_eq!(dropped, vec!["b".to_string()]);
        assert_eq!(filtered.schema.k(), 1);
    }

    #[test]
    fn filter_keeps_constant_column() {
        let schema = FeatureSchema::new(vec![
            FeatureSpec { name: "a".into(), kind: FeatureKind::Numeric, min: 0.0, max: 10.0 },
            FeatureSpec { name: "c".into(), kind: FeatureKind::Numeric, min: 5.0, max: 5.0 },
        ])
        .unwrap();
        let rows = (0..10)
            .map(|i| (FeatureVector(vec![i as f64, 5.0]), if i < 5 { Label::Skip } else { Label::Build }))
            .collect();
        let ds = Dataset::new(schema, rows, "const").unwrap();
        let (filtered, dropped) = correlation_filter(&ds, 0.8).unwrap();
        assert!(dropped.is_empty());
        assert_eq!(filtered.schema.k(), 2);
    }

    #[test]
    fn csv_round_trip() {
        let ds = class_dataset(3, 4);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("rt.csv");
        write_csv(&ds, &p).unwrap();
        let back = load_csv(&p).unwrap();
        assert_eq!(back.len(), ds.len());
        for ((x, l), (y, m)) in ds.rows.iter().zip(&back.rows) {
            assert_eq!(l, m);
            assert_eq!(x.0, y.0);
        }
    }
}
