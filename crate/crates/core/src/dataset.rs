//! Labeled datasets: CSV I/O, the family manifest, stratified splits,
//! proportion resampling and ADASYN oversampling.

use std::collections::{BTreeMap, HashSet};
use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{FeatureSchema, FeatureVector, Label};

pub use crate::synth::{generate_synthetic_corpus, Profile};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("dataset is empty")]
    Empty,
    #[error("need at least {k} samples for {k} folds, have {n}")]
    TooFewSamples { n: usize, k: usize },
    #[error("fold count must be at least 2, got {0}")]
    InvalidFolds(usize),
    #[error("sample {0} has no label")]
    Unlabeled(String),
    #[error("mixed schema versions: {0} vs {1}")]
    MixedSchema(String, String),
    #[error("dataset needs both classes, {0} is absent")]
    MissingClass(Label),
    #[error("class {class} has {count} samples, ADASYN needs at least {needed}")]
    InsufficientMinority { class: Label, count: usize, needed: usize },
    #[error("proportion must lie in (0, 1), got {0}")]
    InvalidProportion(f64),
    #[error("duplicate family {family} for source {source_name}")]
    DuplicateFamily { family: String, source_name: String },
    #[error("family {0} has a non-positive sample count")]
    NonPositiveCount(String),
    #[error("csv line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("csv header does not match schema: {0}")]
    SchemaMismatch(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub const LABEL_COLUMN: &str = "label";
pub const FLOW_ID_COLUMN: &str = "flow_id";

// --- CSV ----------------------------------------------------------------------

/// Writes the feature CSV: schema names, then `label` and `flow_id`.
/// Values use the shortest decimal that parses back to the same f64.
pub fn write_vectors_csv<W: Write>(
    writer: W,
    names: &[String],
    vectors: &[FeatureVector],
) -> Result<(), DatasetError> {
    let mut w = csv::WriterBuilder::new().from_writer(writer);
    let mut header: Vec<&str> = names.iter().map(String::as_str).collect();
    header.push(LABEL_COLUMN);
    header.push(FLOW_ID_COLUMN);
    w.write_record(&header)?;
    let mut row: Vec<String> = Vec::with_capacity(header.len());
    for v in vectors {
        row.clear();
        row.extend(v.values.iter().map(|x| format!("{x}")));
        row.push(v.label.map_or(String::new(), |l| l.as_u8().to_string()));
        row.push(v.flow_id.clone());
        w.write_record(&row)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Parsed feature CSV; labels may be missing.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub feature_names: Vec<String>,
    pub vectors: Vec<FeatureVector>,
}

pub fn read_vectors_csv<R: Read>(reader: R, schema_version: &str) -> Result<FeatureTable, DatasetError> {
    let mut r = csv::ReaderBuilder::new().from_reader(reader);
    let header = r.headers()?.clone();
    let cols: Vec<&str> = header.iter().collect();
    let n = cols.len();
    if n < 2 || cols[n - 2] != LABEL_COLUMN || cols[n - 1] != FLOW_ID_COLUMN {
        return Err(DatasetError::SchemaMismatch(format!(
            "last two columns must be {LABEL_COLUMN},{FLOW_ID_COLUMN}"
        )));
    }
    let feature_names: Vec<String> = cols[..n - 2].iter().map(|s| s.to_string()).collect();
    let mut vectors = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let mut values = Vec::with_capacity(n - 2);
        for (i, field) in rec.iter().take(n - 2).enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| DatasetError::Parse {
                line,
                message: format!("column {} is not a number: {field:?}", feature_names[i]),
            })?;
            if !v.is_finite() {
                return Err(DatasetError::Parse {
                    line,
                    message: format!("column {} is not finite", feature_names[i]),
                });
            }
            values.push(v);
        }
        let label_field = rec.get(n - 2).unwrap_or("").trim();
        let label = if label_field.is_empty() {
            None
        } else {
            Some(Label::parse(label_field).ok_or_else(|| DatasetError::Parse {
                line,
                message: format!("label {label_field:?} is not 0/1"),
            })?)
        };
        vectors.push(FeatureVector {
            values,
            schema_version: schema_version.to_string(),
            label,
            flow_id: rec.get(n - 1).unwrap_or("").to_string(),
        });
    }
    Ok(FeatureTable { feature_names, vectors })
}

/// Requires the CSV columns to equal the schema's feature names in order.
pub fn check_columns(names: &[String], schema: &FeatureSchema) -> Result<(), DatasetError> {
    if names.len() != schema.dimension() {
        return Err(DatasetError::SchemaMismatch(format!(
            "{} feature columns, schema {} declares {}",
            names.len(),
            schema.schema_version,
            schema.dimension()
        )));
    }
    for (i, (got, want)) in names.iter().zip(&schema.features).enumerate() {
        if *got != want.name {
            return Err(DatasetError::SchemaMismatch(format!(
                "column {i} is {got}, schema expects {}",
                want.name
            )));
        }
    }
    Ok(())
}

// --- Labeled dataset ----------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub feature_names: Vec<String>,
    pub schema_version: String,
    pub vectors: Vec<FeatureVector>,
}

impl LabeledDataset {
    pub fn new(
        feature_names: Vec<String>,
        schema_version: impl Into<String>,
        vectors: Vec<FeatureVector>,
    ) -> Result<Self, DatasetError> {
        let schema_version = schema_version.into();
        for v in &vectors {
            if v.label.is_none() {
                return Err(DatasetError::Unlabeled(v.flow_id.clone()));
            }
            if v.schema_version != schema_version {
                return Err(DatasetError::MixedSchema(schema_version, v.schema_version.clone()));
            }
            if v.values.len() != feature_names.len() {
                return Err(DatasetError::SchemaMismatch(format!(
                    "sample {} has {} values, expected {}",
                    v.flow_id,
                    v.values.len(),
                    feature_names.len()
                )));
            }
        }
        Ok(LabeledDataset {
            feature_names,
            schema_version,
            vectors,
        })
    }

    pub fn from_table(table: FeatureTable, schema_version: &str) -> Result<Self, DatasetError> {
        LabeledDataset::new(table.feature_names, schema_version, table.vectors)
    }

    pub fn read_csv<R: Read>(reader: R, schema_version: &str) -> Result<Self, DatasetError> {
        Self::from_table(read_vectors_csv(reader, schema_version)?, schema_version)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), DatasetError> {
        write_vectors_csv(writer, &self.feature_names, &self.vectors)
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn label(&self, i: usize) -> Label {
        self.vectors[i].label.expect("labeled dataset")
    }

    pub fn labels(&self) -> Vec<Label> {
        (0..self.len()).map(|i| self.label(i)).collect()
    }

    /// Labels as 0/1 targets.
    pub fn targets(&self) -> Vec<f64> {
        self.labels().iter().map(|l| f64::from(l.as_u8())).collect()
    }

    pub fn rows(&self) -> Vec<&[f64]> {
        self.vectors.iter().map(|v| v.values.as_slice()).collect()
    }

    pub fn class_counts(&self) -> BTreeMap<Label, usize> {
        let mut m = BTreeMap::from([(Label::Normal, 0), (Label::Malware, 0)]);
        for v in &self.vectors {
            *m.get_mut(&v.label.expect("labeled dataset")).unwrap() += 1;
        }
        m
    }

    pub fn count(&self, label: Label) -> usize {
        self.vectors.iter().filter(|v| v.label == Some(label)).count()
    }

    pub fn subset(&self, indices: &[usize]) -> LabeledDataset {
        LabeledDataset {
            feature_names: self.feature_names.clone(),
            schema_version: self.schema_version.clone(),
            vectors: indices.iter().map(|&i| self.vectors[i].clone()).collect(),
        }
    }
}

// --- Manifest -----------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub family: String,
    #[serde(rename = "type")]
    pub kind: String,
    pub samples: i64,
    pub source: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ManifestTotals {
    pub by_family: BTreeMap<String, u64>,
    pub by_type: BTreeMap<String, u64>,
    pub families: usize,
    pub total: u64,
}

/// Malware families with sample counts for the reference corpus.
pub const REFERENCE_MANIFEST_CSV: &str = include_str!("../data/family_manifest.csv");

pub fn load_manifest<R: Read>(reader: R) -> Result<DatasetManifest, DatasetError> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut entries = Vec::new();
    let mut seen = HashSet::new();
    for rec in r.deserialize::<ManifestEntry>() {
        let e = rec?;
        if e.samples < 1 {
            return Err(DatasetError::NonPositiveCount(e.family));
        }
        if !seen.insert((e.source.clone(), e.family.clone())) {
            return Err(DatasetError::DuplicateFamily {
                family: e.family,
                source_name: e.source,
            });
        }
        entries.push(e);
    }
    Ok(DatasetManifest { entries })
}

pub fn reference_manifest() -> DatasetManifest {
    load_manifest(REFERENCE_MANIFEST_CSV.as_bytes()).expect("bundled manifest is valid")
}

pub fn sum_samples(manifest: &DatasetManifest) -> ManifestTotals {
    let mut t = ManifestTotals::default();
    for e in &manifest.entries {
        let n = e.samples as u64;
        *t.by_family.entry(e.family.clone()).or_default() += n;
        *t.by_type.entry(e.kind.clone()).or_default() += n;
        t.total += n;
    }
    t.families = t.by_family.len();
    t
}

// --- Splits -------------------------------------------------------------------

fn rng_for(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Indices grouped by class, each group shuffled.
fn shuffled_by_class(labels: &[Label], rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut groups = Vec::new();
    for class in [Label::Normal, Label::Malware] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        idx.shuffle(rng);
        groups.push(idx);
    }
    groups
}

/// Partitions `0..n` into `k` folds of near-equal size. With labels, classes
/// are dealt round-robin so every fold gets its share of each class.
pub fn kfold_split(
    n: usize,
    k: usize,
    labels: Option<&[Label]>,
    seed: u64,
) -> Result<Vec<Vec<usize>>, DatasetError> {
    if k < 2 {
        return Err(DatasetError::InvalidFolds(k));
    }
    if n < k {
        return Err(DatasetError::TooFewSamples { n, k });
    }
    let mut rng = rng_for(seed);
    let order: Vec<usize> = match labels {
        Some(labels) => {
            assert_eq!(labels.len(), n, "one label per sample");
            shuffled_by_class(labels, &mut rng).concat()
        }
        None => {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(&mut rng);
            idx
        }
    };
    let mut folds = vec![Vec::with_capacity(n / k + 1); k];
    for (pos, i) in order.into_iter().enumerate() {
        folds[pos % k].push(i);
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}

/// `(train, validation)` index pairs, one per fold.
pub fn fold_pairs(folds: &[Vec<usize>]) -> Vec<(Vec<usize>, Vec<usize>)> {
    (0..folds.len())
        .map(|v| {
            let mut train: Vec<usize> = folds
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != v)
                .flat_map(|(_, f)| f.iter().copied())
                .collect();
            train.sort_unstable();
            (train, folds[v].clone())
        })
        .collect()
}

/// Stratified holdout split; returns sorted `(train, test)` indices.
pub fn train_test_split(
    labels: &[Label],
    test_fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>), DatasetError> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(DatasetError::InvalidProportion(test_fraction));
    }
    let mut rng = rng_for(seed);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for group in shuffled_by_class(labels, &mut rng) {
        let n_test = (group.len() as f64 * test_fraction).round() as usize;
        test.extend_from_slice(&group[..n_test]);
        train.extend_from_slice(&group[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

/// Downsamples one class so that it makes up `fraction` of the result.
/// If that would need more samples than exist, the other class is
/// downsampled instead. Order of retained samples is preserved.
pub fn resample_to_proportion(
    ds: &LabeledDataset,
    class: Label,
    fraction: f64,
    seed: u64,
) -> Result<LabeledDataset, DatasetError> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(DatasetError::InvalidProportion(fraction));
    }
    let labels = ds.labels();
    let mut rng = rng_for(seed);
    let groups = shuffled_by_class(&labels, &mut rng);
    let (ci, oi) = if class == Label::Normal { (0, 1) } else { (1, 0) };
    let (n_c, n_o) = (groups[ci].len(), groups[oi].len());
    if n_c == 0 {
        return Err(DatasetError::MissingClass(class));
    }
    if n_o == 0 {
        return Err(DatasetError::MissingClass(if ci == 0 { Label::Malware } else { Label::Normal }));
    }
    let want_c = (fraction * n_o as f64 / (1.0 - fraction)).round() as usize;
    let (keep_c, keep_o) = if want_c <= n_c {
        (want_c.max(1), n_o)
    } else {
        let want_o = ((1.0 - fraction) * n_c as f64 / fraction).round() as usize;
        (n_c, want_o.clamp(1, n_o))
    };
    let mut keep: Vec<usize> = groups[ci][..keep_c]
        .iter()
        .chain(&groups[oi][..keep_o])
        .copied()
        .collect();
    keep.sort_unstable();
    Ok(ds.subset(&keep))
}

// --- Standardization ----------------------------------------------------------

/// Per-feature z-score parameters; zero-variance columns use scale 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub feature_names: Vec<String>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(feature_names: &[String], rows: &[&[f64]]) -> Standardizer {
        let d = feature_names.len();
        let n = rows.len().max(1) as f64;
        let mut mean = vec![0.0; d];
        for r in rows {
            for j in 0..d {
                mean[j] += r[j];
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for r in rows {
            for j in 0..d {
                var[j] += (r[j] - mean[j]).powi(2);
            }
        }
        let std = var
            .into_iter()
            .map(|v| {
                let s = (v / n).sqrt();
                if s > 0.0 {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        Standardizer {
            feature_names: feature_names.to_vec(),
            mean,
            std,
        }
    }

    pub fn transform(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(x, (m, s))| (x - m) / s)
            .collect()
    }
}

// --- ADASYN -------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdasynParams {
    pub k_neighbors: usize,
    pub beta: f64,
    /// Class to oversample; `None` picks the minority.
    pub target_class: Option<Label>,
    /// Final share of the target class; overrides `beta` when set.
    pub target_fraction: Option<f64>,
    /// Columns rounded to {0, 1} after interpolation.
    pub binary_mask: Vec<bool>,
}

impl Default for AdasynParams {
    fn default() -> Self {
        AdasynParams {
            k_neighbors: 5,
            beta: 1.0,
            target_class: None,
            target_fraction: None,
            binary_mask: Vec::new(),
        }
    }
}

/// Provenance of one synthetic sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SyntheticOrigin {
    pub seed: usize,
    pub neighbor: usize,
    pub gap: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct AdasynReport {
    pub target: Option<Label>,
    /// Requested total, `round(G)`.
    pub requested: usize,
    /// Per target-class sample, in dataset order.
    pub per_seed: Vec<usize>,
    pub origins: Vec<SyntheticOrigin>,
    pub degenerate: bool,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// The `k` nearest rows to `q` among `candidates` (ties by index).
fn nearest(rows: &[Vec<f64>], q: usize, candidates: &[usize], k: usize) -> Vec<usize> {
    let mut d: Vec<(f64, usize)> = candidates
        .iter()
        .filter(|&&c| c != q)
        .map(|&c| (sq_dist(&rows[q], &rows[c]), c))
        .collect();
    d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    d.into_iter().take(k).map(|(_, c)| c).collect()
}

/// Integer apportionment of `total` by weights, largest remainder first.
fn apportion(weights: &[f64], total: usize) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    if sum <= 0.0 || total == 0 {
        return vec![0; weights.len()];
    }
    let quotas: Vec<f64> = weights.iter().map(|w| w / sum * total as f64).collect();
    let mut out: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = out.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        out[i] += 1;
    }
    out
}

/// Adaptive synthetic oversampling. The input is returned as a prefix of the
/// output; synthetics follow, grouped by seed sample.
pub fn adasyn(
    ds: &LabeledDataset,
    params: &AdasynParams,
    seed: u64,
) -> Result<(LabeledDataset, AdasynReport), DatasetError> {
    if ds.is_empty() {
        return Err(DatasetError::Empty);
    }
    let labels = ds.labels();
    let n_normal = labels.iter().filter(|l| **l == Label::Normal).count();
    let n_malware = labels.len() - n_normal;
    for (class, n) in [(Label::Normal, n_normal), (Label::Malware, n_malware)] {
        if n == 0 {
            return Err(DatasetError::MissingClass(class));
        }
    }
    let target = params.target_class.unwrap_or(if n_malware <= n_normal {
        Label::Malware
    } else {
        Label::Normal
    });
    let (n_t, n_o) = if target == Label::Malware {
        (n_malware, n_normal)
    } else {
        (n_normal, n_malware)
    };
    let g_total = match params.target_fraction {
        Some(f) => {
            if !(f > 0.0 && f < 1.0) {
                return Err(DatasetError::InvalidProportion(f));
            }
            // (n_t + G) / (n_t + n_o + G) = f
            ((f * n_o as f64 - (1.0 - f) * n_t as f64) / (1.0 - f)).max(0.0)
        }
        None => ((n_o as f64 - n_t as f64) * params.beta).max(0.0),
    }
    .round() as usize;

    let mut report = AdasynReport {
        target: Some(target),
        requested: g_total,
        ..Default::default()
    };
    if g_total == 0 {
        return Ok((ds.clone(), report));
    }
    let k = params.k_neighbors.max(1);
    if n_t < k + 1 {
        return Err(DatasetError::InsufficientMinority {
            class: target,
            count: n_t,
            needed: k + 1,
        });
    }

    let raw = ds.rows();
    let scaler = Standardizer::fit(&ds.feature_names, &raw);
    let z: Vec<Vec<f64>> = raw.iter().map(|r| scaler.transform(r)).collect();
    let all: Vec<usize> = (0..ds.len()).collect();
    let targets: Vec<usize> = all.iter().copied().filter(|&i| labels[i] == target).collect();

    let ratios: Vec<f64> = targets
        .iter()
        .map(|&i| {
            let nn = nearest(&z, i, &all, k);
            nn.iter().filter(|&&j| labels[j] != target).count() as f64 / k as f64
        })
        .collect();
    if ratios.iter().all(|r| *r == 0.0) {
        log::warn!("ADASYN: no {target} sample has an opposite-class neighbor; returning input unchanged");
        report.degenerate = true;
        report.per_seed = vec![0; targets.len()];
        return Ok((ds.clone(), report));
    }
    report.per_seed = apportion(&ratios, g_total);

    let mut rng = rng_for(seed);
    let mut out = ds.clone();
    for (t, &i) in targets.iter().enumerate() {
        let g = report.per_seed[t];
        if g == 0 {
            continue;
        }
        let nn = nearest(&z, i, &targets, k);
        for s in 0..g {
            let j = nn[rng.random_range(0..nn.len())];
            let gap: f64 = rng.random();
            let (xi, xj) = (raw[i], raw[j]);
            let values = xi
                .iter()
                .zip(xj)
                .enumerate()
                .map(|(c, (a, b))| {
                    let v = a + gap * (b - a);
                    if params.binary_mask.get(c).copied().unwrap_or(false) {
                        v.round().clamp(0.0, 1.0)
                    } else {
                        v
                    }
                })
                .collect();
            out.vectors.push(FeatureVector {
                values,
                schema_version: ds.schema_version.clone(),
                label: Some(target),
                flow_id: format!("adasyn:{}:{s}", ds.vectors[i].flow_id),
            });
            report.origins.push(SyntheticOrigin {
                seed: i,
                neighbor: j,
                gap,
            });
        }
    }
    Ok((out, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(n_normal: usize, n_malware: usize) -> LabeledDataset {
        let mut v = Vec::new();
        for i in 0..n_normal + n_malware {
            let malware = i >= n_normal;
            let x = i as f64;
            v.push(FeatureVector {
                values: vec![if malware { 10.0 + x * 0.1 } else { x * 0.1 }, (i % 3) as f64, (i % 2) as f64],
                schema_version: "t".into(),
                label: Some(if malware { Label::Malware } else { Label::Normal }),
                flow_id: format!("f{i}"),
            });
        }
        LabeledDataset::new(vec!["a".into(), "b".into(), "c".into()], "t", v).unwrap()
    }

    #[test]
    fn manifest_totals() {
        let m = load_manifest("family,type,samples,source\nTeslaCrypt,Ransomware,331,x\nCerber,Ransomware,124,x\n".as_bytes()).unwrap();
        let t = sum_samples(&m);
        assert_eq!(t.by_family["TeslaCrypt"], 331);
        assert_eq!(t.by_type["Ransomware"], 455);
        assert_eq!(sum_samples(&DatasetManifest::default()).total, 0);
        let dup = "family,type,samples,source\nA,T,1,s\nA,T,2,s\n";
        assert!(matches!(load_manifest(dup.as_bytes()), Err(DatasetError::DuplicateFamily { .. })));
        let zero = "family,type,samples,source\nA,T,0,s\n";
        assert!(matches!(load_manifest(zero.as_bytes()), Err(DatasetError::NonPositiveCount(_))));
    }

    #[test]
    fn fold_sizes() {
        let f = kfold_split(103, 10, None, 1).unwrap();
        let mut sizes: Vec<usize> = f.iter().map(Vec::len).collect();
        sizes.sort_unstable();
        assert_eq!(sizes, [10, 10, 10, 10, 10, 10, 10, 11, 11, 11]);
        assert!(matches!(kfold_split(5, 10, None, 1), Err(DatasetError::TooFewSamples { .. })));
        assert!(kfold_split(5, 1, None, 1).is_err());
    }

    #[test]
    fn stratified_folds() {
        let labels: Vec<Label> = (0..100).map(|i| if i < 90 { Label::Normal } else { Label::Malware }).collect();
        for fold in kfold_split(100, 10, Some(&labels), 7).unwrap() {
            let m = fold.iter().filter(|&&i| labels[i] == Label::Malware).count();
            assert_eq!((fold.len() - m, m), (9, 1));
        }
    }

    #[test]
    fn apportion_is_exact() {
        assert_eq!(apportion(&[1.0, 1.0, 1.0], 4), [2, 1, 1]);
        assert_eq!(apportion(&[0.2, 0.0, 0.8], 5).iter().sum::<usize>(), 5);
        assert_eq!(apportion(&[0.0, 0.0], 5), [0, 0]);
    }

    #[test]
    fn adasyn_balanced_is_identity() {
        let ds = toy(20, 20);
        let (out, rep) = adasyn(&ds, &AdasynParams::default(), 1).unwrap();
        assert_eq!(out, ds);
        assert_eq!(rep.requested, 0);
    }

    #[test]
    fn adasyn_reaches_parity() {
        // minority sits next to the majority so neighbors are mixed
        let mut ds = toy(100, 50);
        for (i, v) in ds.vectors.iter_mut().enumerate() {
            v.values[0] = (i % 10) as f64;
        }
        let params = AdasynParams {
            binary_mask: vec![false, false, true],
            ..Default::default()
        };
        let (out, rep) = adasyn(&ds, &params, 3).unwrap();
        assert_eq!(&out.vectors[..150], &ds.vectors[..]);
        assert_eq!(rep.per_seed.iter().sum::<usize>(), 50);
        assert_eq!(out.count(Label::Malware), 100);
        for (o, v) in rep.origins.iter().zip(&out.vectors[150..]) {
            let (a, b) = (&ds.vectors[o.seed].values, &ds.vectors[o.neighbor].values);
            for c in 0..2 {
                let (lo, hi) = (a[c].min(b[c]), a[c].max(b[c]));
                assert!(v.values[c] >= lo && v.values[c] <= hi);
            }
            assert!(v.values[2] == 0.0 || v.values[2] == 1.0);
        }
    }

    #[test]
    fn adasyn_separated_classes_are_degenerate() {
        let ds = toy(100, 20);
        let (out, rep) = adasyn(&ds, &AdasynParams::default(), 3).unwrap();
        assert!(rep.degenerate);
        assert_eq!(out, ds);
    }

    #[test]
    fn adasyn_target_fraction_on_majority() {
        let mut ds = toy(60, 40);
        for (i, v) in ds.vectors.iter_mut().enumerate() {
            v.values[0] = (i % 7) as f64;
        }
        let params = AdasynParams {
            target_class: Some(Label::Normal),
            target_fraction: Some(0.75),
            ..Default::default()
        };
        let (out, rep) = adasyn(&ds, &params, 9).unwrap();
        assert_eq!(rep.requested, 60);
        assert_eq!(out.count(Label::Normal), 120);
    }

    #[test]
    fn proportion_resampling() {
        let ds = toy(1000, 1000);
        let r = resample_to_proportion(&ds, Label::Malware, 0.0103, 5).unwrap();
        assert_eq!(r.count(Label::Normal), 1000);
        assert_eq!(r.count(Label::Malware), 10);
    }

    #[test]
    fn csv_round_trip_exact() {
        let mut ds = toy(3, 3);
        ds.vectors[0].values[0] = 0.1 + 0.2;
        ds.vectors[1].values[1] = -0.0;
        ds.vectors[2].values[2] = 1e-300;
        let mut buf = Vec::new();
        ds.write_csv(&mut buf).unwrap();
        let back = LabeledDataset::read_csv(buf.as_slice(), "t").unwrap();
        assert_eq!(back, ds);
        for (a, b) in back.vectors.iter().zip(&ds.vectors) {
            for (x, y) in a.values.iter().zip(&b.values) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn unlabeled_rows_rejected() {
        let csv = "a,label,flow_id\n1,,x\n";
        assert!(matches!(LabeledDataset::read_csv(csv.as_bytes(), "t"), Err(DatasetError::Unlabeled(_))));
        let bad = "a,label,flow_id\nnope,1,x\n";
        assert!(matches!(read_vectors_csv(bad.as_bytes(), "t"), Err(DatasetError::Parse { .. })));
    }
}
