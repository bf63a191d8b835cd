//! Attribute hierarchy, image records and the on-disk manifest format.
//!
//! A manifest is a UTF-8 JSON-lines file. The first line is a header naming
//! the manifest kind and the schema sidecar file (a JSON document resolved
//! relative to the manifest's directory); each following line is one
//! [`ImageRecord`]. See `docs/formats.md` for the field-by-field layout.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, stream};

pub const MANIFEST_FORMAT: &str = "mtss-manifest";
pub const MANIFEST_VERSION: u32 = 1;
pub const DEFAULT_SCHEMA_FILE: &str = "schema.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttributeType {
    pub name: String,
    pub classes: Vec<String>,
}

impl AttributeType {
    pub fn new(name: impl Into<String>, classes: &[&str]) -> Self {
        Self {
            name: name.into(),
            classes: classes.iter().map(|c| c.to_string()).collect(),
        }
    }

    pub fn class_index(&self, class: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == class)
    }

    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }
}

/// Ordered list of attribute types, each with its ordered class list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttributeSchema {
    pub types: Vec<AttributeType>,
}

impl AttributeSchema {
    pub fn new(types: Vec<AttributeType>) -> Result<Self> {
        let schema = Self { types };
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<()> {
        if self.types.is_empty() {
            return Err(Error::Schema("at least one attribute type is required".into()));
        }
        let mut names = HashSet::new();
        for t in &self.types {
            if t.name.is_empty() {
                return Err(Error::Schema("attribute type names must be non-empty".into()));
            }
            if !names.insert(t.name.as_str()) {
                return Err(Error::Schema(format!("duplicate attribute type `{}`", t.name)));
            }
            if t.classes.is_empty() {
                return Err(Error::Schema(format!("attribute type `{}` has no classes", t.name)));
            }
            let mut seen = HashSet::new();
            for c in &t.classes {
                if !seen.insert(c.as_str()) {
                    return Err(Error::Schema(format!(
                        "duplicate class `{c}` in attribute type `{}`",
                        t.name
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&AttributeType> {
        self.types
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::UnknownType(name.to_string()))
    }

    pub fn type_names(&self) -> Vec<String> {
        self.types.iter().map(|t| t.name.clone()).collect()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let schema: AttributeSchema = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("schema serializes");
        s.push('\n');
        s
    }
}

/// One image with sparse multi-label ground truth.
///
/// Label sets are kept normalized: a type with no classes is absent from the
/// map rather than mapped to an empty set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageRecord {
    pub id: String,
    pub image_path: String,
    #[serde(default)]
    pub labels: BTreeMap<String, BTreeSet<String>>,
    #[serde(default)]
    pub domain_tag: Option<String>,
}

impl ImageRecord {
    pub fn unlabeled(id: impl Into<String>, image_path: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            image_path: image_path.into(),
            labels: BTreeMap::new(),
            domain_tag: None,
        }
    }

    pub fn with_label(mut self, attribute_type: &str, class: &str) -> Self {
        self.labels
            .entry(attribute_type.to_string())
            .or_default()
            .insert(class.to_string());
        self
    }

    pub fn labels_for(&self, attribute_type: &str) -> Option<&BTreeSet<String>> {
        self.labels.get(attribute_type).filter(|s| !s.is_empty())
    }

    pub fn has_labels_for(&self, attribute_type: &str) -> bool {
        self.labels_for(attribute_type).is_some()
    }

    fn normalize(&mut self) {
        self.labels.retain(|_, set| !set.is_empty());
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ManifestKind {
    Labeled,
    Unlabeled,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestHeader {
    format: String,
    version: u32,
    kind: ManifestKind,
    schema: String,
}

/// A validated collection of image records under one schema.
///
/// `base_dir` is where relative image paths are resolved; it is not part of
/// the manifest's identity and is ignored by equality.
#[derive(Debug, Clone)]
pub struct DatasetManifest {
    pub schema: AttributeSchema,
    pub records: Vec<ImageRecord>,
    pub kind: ManifestKind,
    pub base_dir: PathBuf,
}

impl PartialEq for DatasetManifest {
    fn eq(&self, other: &Self) -> bool {
        self.schema == other.schema && self.records == other.records && self.kind == other.kind
    }
}

impl DatasetManifest {
    pub fn new(
        schema: AttributeSchema,
        records: Vec<ImageRecord>,
        kind: ManifestKind,
        base_dir: impl Into<PathBuf>,
    ) -> Result<Self> {
        let mut m = Self {
            schema,
            records,
            kind,
            base_dir: base_dir.into(),
        };
        for r in &mut m.records {
            r.normalize();
        }
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        self.schema.validate()?;
        let mut ids = HashSet::new();
        for r in &self.records {
            if r.id.is_empty() {
                return Err(Error::InvalidRecord {
                    record: r.id.clone(),
                    message: "empty id".into(),
                });
            }
            if !ids.insert(r.id.as_str()) {
                return Err(Error::DuplicateId(r.id.clone()));
            }
            validate_record(&self.schema, r, self.kind)?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn image_path(&self, record: &ImageRecord) -> PathBuf {
        self.base_dir.join(&record.image_path)
    }

    fn with_records(&self, records: Vec<ImageRecord>) -> Self {
        Self {
            schema: self.schema.clone(),
            records,
            kind: self.kind,
            base_dir: self.base_dir.clone(),
        }
    }

    /// Same images with all labels removed.
    pub fn to_unlabeled(&self) -> Self {
        let records = self
            .records
            .iter()
            .map(|r| ImageRecord {
                labels: BTreeMap::new(),
                ..r.clone()
            })
            .collect();
        Self {
            kind: ManifestKind::Unlabeled,
            ..self.with_records(records)
        }
    }

    pub fn tag_domain(&mut self, tag: &str) {
        for r in &mut self.records {
            r.domain_tag = Some(tag.to_string());
        }
    }

    pub fn class_counts(&self, attribute_type: &str) -> Result<Vec<usize>> {
        let t = self.schema.get(attribute_type)?;
        let mut counts = vec![0usize; t.n_classes()];
        for r in &self.records {
            if let Some(set) = r.labels_for(attribute_type) {
                for c in set {
                    if let Some(i) = t.class_index(c) {
                        counts[i] += 1;
                    }
                }
            }
        }
        Ok(counts)
    }
}

fn validate_record(schema: &AttributeSchema, r: &ImageRecord, kind: ManifestKind) -> Result<()> {
    if kind == ManifestKind::Unlabeled && r.labels.values().any(|s| !s.is_empty()) {
        return Err(Error::InvalidRecord {
            record: r.id.clone(),
            message: "unlabeled manifests must not carry labels".into(),
        });
    }
    for (type_name, classes) in &r.labels {
        let t = schema.get(type_name).map_err(|_| Error::InvalidRecord {
            record: r.id.clone(),
            message: format!("unknown attribute type `{type_name}`"),
        })?;
        for c in classes {
            if t.class_index(c).is_none() {
                return Err(Error::InvalidRecord {
                    record: r.id.clone(),
                    message: format!("unknown class `{c}` for attribute type `{type_name}`"),
                });
            }
        }
    }
    Ok(())
}

/// Reads and validates a manifest plus its schema sidecar.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut lines = BufReader::new(file).lines();

    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };

    let header_line = match lines.next() {
        Some(l) => l.map_err(|e| Error::io(path, e))?,
        None => return Err(parse_err(1, "missing manifest header".into())),
    };
    let header: ManifestHeader =
        serde_json::from_str(&header_line).map_err(|e| parse_err(1, e.to_string()))?;
    if header.format != MANIFEST_FORMAT {
        return Err(parse_err(1, format!("unexpected format `{}`", header.format)));
    }
    if header.version != MANIFEST_VERSION {
        return Err(parse_err(1, format!("unsupported version {}", header.version)));
    }
    let schema = AttributeSchema::load(&base_dir.join(&header.schema))?;

    let mut records = Vec::new();
    let mut ids = HashSet::new();
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut record: ImageRecord =
            serde_json::from_str(&line).map_err(|e| parse_err(line_no, e.to_string()))?;
        record.normalize();
        if !ids.insert(record.id.clone()) {
            return Err(Error::DuplicateId(record.id));
        }
        validate_record(&schema, &record, header.kind)?;
        records.push(record);
    }
    DatasetManifest::new(schema, records, header.kind, base_dir)
}

/// Writes the manifest to `path` and its schema to `schema.json` beside it.
///
/// Refuses to overwrite an existing sidecar that holds a different schema.
pub fn save_manifest(manifest: &DatasetManifest, path: &Path) -> Result<()> {
    manifest.validate()?;
    let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    if !dir.as_os_str().is_empty() {
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    let schema_path = dir.join(DEFAULT_SCHEMA_FILE);
    let schema_text = manifest.schema.to_json();
    match fs::read_to_string(&schema_path) {
        Ok(existing) if existing == schema_text => {}
        Ok(_) => {
            let existing = AttributeSchema::load(&schema_path)?;
            if existing != manifest.schema {
                return Err(Error::Schema(format!(
                    "{} already holds a different schema",
                    schema_path.display()
                )));
            }
        }
        Err(_) => fs::write(&schema_path, schema_text).map_err(|e| Error::io(&schema_path, e))?,
    }

    let mut out = Vec::new();
    let header = ManifestHeader {
        format: MANIFEST_FORMAT.into(),
        version: MANIFEST_VERSION,
        kind: manifest.kind,
        schema: DEFAULT_SCHEMA_FILE.into(),
    };
    serde_json::to_writer(&mut out, &header)?;
    out.push(b'\n');
    for r in &manifest.records {
        serde_json::to_writer(&mut out, r)?;
        out.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Records with at least one label for `attribute_type`.
pub fn filter_by_type(manifest: &DatasetManifest, attribute_type: &str) -> Result<DatasetManifest> {
    manifest.schema.get(attribute_type)?;
    let records = manifest
        .records
        .iter()
        .filter(|r| r.has_labels_for(attribute_type))
        .cloned()
        .collect();
    Ok(manifest.with_records(records))
}

/// The per-type view restricted to the `top_n` most frequent classes.
///
/// Classes are ranked by image count, ties broken by schema order. Labels
/// of other classes of this type are removed; records with no surviving
/// label for the type are dropped. Labels of other types are untouched.
pub fn top_classes_filter(
    manifest: &DatasetManifest,
    attribute_type: &str,
    top_n: usize,
) -> Result<DatasetManifest> {
    if top_n == 0 {
        return Err(Error::InvalidArgument("top_n must be at least 1".into()));
    }
    let t = manifest.schema.get(attribute_type)?;
    let counts = manifest.class_counts(attribute_type)?;
    let mut order: Vec<usize> = (0..t.n_classes()).collect();
    order.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
    let keep: BTreeSet<&str> = order
        .iter()
        .take(top_n)
        .map(|&i| t.classes[i].as_str())
        .collect();

    let records = manifest
        .records
        .iter()
        .filter_map(|r| {
            let set = r.labels_for(attribute_type)?;
            let kept: BTreeSet<String> = set
                .iter()
                .filter(|c| keep.contains(c.as_str()))
                .cloned()
                .collect();
            if kept.is_empty() {
                return None;
            }
            let mut r = r.clone();
            r.labels.insert(attribute_type.to_string(), kept);
            Some(r)
        })
        .collect();
    Ok(manifest.with_records(records))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl SplitFractions {
    pub fn new(train: f64, val: f64, test: f64) -> Self {
        Self { train, val, test }
    }

    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|f| !f.is_finite() || *f < 0.0) {
            return Err(Error::InvalidArgument(format!(
                "split fractions must be non-negative: {parts:?}"
            )));
        }
        if self.train <= 0.0 && self.val <= 0.0 && self.test <= 0.0 {
            return Err(Error::InvalidArgument("split fractions are all zero".into()));
        }
        if (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "split fractions must sum to 1, got {parts:?}"
            )));
        }
        Ok(())
    }
}

/// Seeded train/val/test partition.
///
/// Train and val sizes are `floor(fraction * n)`, the remainder goes to test.
/// Each part keeps the input's record order.
pub fn split(
    manifest: &DatasetManifest,
    fractions: SplitFractions,
    seed: u64,
) -> Result<(DatasetManifest, DatasetManifest, DatasetManifest)> {
    fractions.validate()?;
    let n = manifest.records.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::rng_for(seed, stream::SPLIT, 0));

    let n_train = ((fractions.train * n as f64) + 1e-9).floor() as usize;
    let n_val = (((fractions.val * n as f64) + 1e-9).floor() as usize).min(n - n_train);

    let mut part = vec![2u8; n];
    for &i in &order[..n_train] {
        part[i] = 0;
    }
    for &i in &order[n_train..n_train + n_val] {
        part[i] = 1;
    }
    let pick = |p: u8| {
        manifest.with_records(
            manifest
                .records
                .iter()
                .zip(&part)
                .filter(|(_, &q)| q == p)
                .map(|(r, _)| r.clone())
                .collect(),
        )
    };
    Ok((pick(0), pick(1), pick(2)))
}

/// Concatenates manifests that share a schema. Record ids must stay unique.
pub fn concat(manifests: &[&DatasetManifest], kind: ManifestKind) -> Result<DatasetManifest> {
    let first = manifests
        .first()
        .ok_or_else(|| Error::EmptyData("no manifests to concatenate".into()))?;
    let mut records = Vec::new();
    for m in manifests {
        if m.schema != first.schema {
            return Err(Error::Schema("cannot concatenate manifests with different schemas".into()));
        }
        records.extend(m.records.iter().cloned());
    }
    DatasetManifest::new(first.schema.clone(), records, kind, first.base_dir.clone())
}
