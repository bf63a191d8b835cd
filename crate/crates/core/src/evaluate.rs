//! Ranking metrics, per-record prediction logs and metric reports.
//!
//! Metrics are macro averages over records: each record labeled for a type
//! contributes its own R@k, precision@k and F1@k, and the report averages
//! those values. Records without ground truth for a type are skipped for it.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{Image, ImageBank};
use crate::embeddings::rank_scores;
use crate::error::{Error, Result};
use crate::inference::Ranker;
use crate::parallel::{self, Exec};
use crate::schema::DatasetManifest;

pub const DEFAULT_KS: [usize; 3] = [1, 3, 5];

fn check<T>(ranked: &[T], truth: &BTreeSet<T>, k: usize) -> Result<()> {
    if truth.is_empty() {
        return Err(Error::InvalidArgument("ground truth is empty".into()));
    }
    if k == 0 || ranked.len() < k {
        return Err(Error::InvalidArgument(format!(
            "k = {k} but only {} ranked classes",
            ranked.len()
        )));
    }
    Ok(())
}

fn hits<T: Ord>(ranked: &[T], truth: &BTreeSet<T>, k: usize) -> usize {
    ranked[..k].iter().filter(|c| truth.contains(c)).count()
}

/// `|truth ∩ top-k| / |truth|`.
pub fn recall_at_k<T: Ord>(ranked: &[T], truth: &BTreeSet<T>, k: usize) -> Result<f64> {
    check(ranked, truth, k)?;
    Ok(hits(ranked, truth, k) as f64 / truth.len() as f64)
}

/// `|truth ∩ top-k| / k`.
pub fn precision_at_k<T: Ord>(ranked: &[T], truth: &BTreeSet<T>, k: usize) -> Result<f64> {
    check(ranked, truth, k)?;
    Ok(hits(ranked, truth, k) as f64 / k as f64)
}

/// Harmonic mean of precision@k and recall@k, 0 when both are 0.
pub fn f1_at_k<T: Ord>(ranked: &[T], truth: &BTreeSet<T>, k: usize) -> Result<f64> {
    let p = precision_at_k(ranked, truth, k)?;
    let r = recall_at_k(ranked, truth, k)?;
    Ok(if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) })
}

/// Average precision over the full ranking.
pub fn average_precision<T: Ord>(ranked: &[T], truth: &BTreeSet<T>) -> Result<f64> {
    check(ranked, truth, ranked.len().max(1))?;
    let mut found = 0usize;
    let mut sum = 0.0;
    for (i, c) in ranked.iter().enumerate() {
        if truth.contains(c) {
            found += 1;
            sum += found as f64 / (i + 1) as f64;
        }
    }
    Ok(sum / truth.len() as f64)
}

/// One record's full ranking for one attribute type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub id: String,
    pub attribute_type: String,
    pub truth: Vec<String>,
    pub ranking: Vec<(String, f64)>,
}

/// Per-record predictions behind a [`MetricsReport`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PredictionLog {
    pub entries: Vec<LogEntry>,
}

impl PredictionLog {
    pub fn to_jsonl(&self) -> Result<String> {
        let mut s = String::new();
        for e in &self.entries {
            s.push_str(&serde_json::to_string(e)?);
            s.push('\n');
        }
        Ok(s)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_jsonl()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut entries = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            entries.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })?);
        }
        Ok(Self { entries })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassRecall {
    pub class: String,
    pub n_records: usize,
    /// Recall of this class at each k, over records that carry it.
    pub recall: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeMetrics {
    pub attribute_type: String,
    pub n_records: usize,
    pub recall: Vec<f64>,
    pub precision: Vec<f64>,
    pub f1: Vec<f64>,
    pub map: f64,
    pub per_class: Vec<ClassRecall>,
}

/// Unweighted mean of the per-type values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverallMetrics {
    pub recall: Vec<f64>,
    pub precision: Vec<f64>,
    pub f1: Vec<f64>,
    pub map: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub ks: Vec<usize>,
    pub types: Vec<TypeMetrics>,
    pub overall: OverallMetrics,
}

impl MetricsReport {
    pub fn get(&self, attribute_type: &str) -> Result<&TypeMetrics> {
        self.types
            .iter()
            .find(|t| t.attribute_type == attribute_type)
            .ok_or_else(|| Error::UnknownType(attribute_type.to_string()))
    }

    fn k_index(&self, k: usize) -> Result<usize> {
        self.ks
            .iter()
            .position(|&x| x == k)
            .ok_or_else(|| Error::InvalidArgument(format!("k = {k} was not evaluated")))
    }

    pub fn recall(&self, attribute_type: &str, k: usize) -> Result<f64> {
        Ok(self.get(attribute_type)?.recall[self.k_index(k)?])
    }

    pub fn f1(&self, attribute_type: &str, k: usize) -> Result<f64> {
        Ok(self.get(attribute_type)?.f1[self.k_index(k)?])
    }

    pub fn overall_recall(&self, k: usize) -> Result<f64> {
        Ok(self.overall.recall[self.k_index(k)?])
    }

    pub fn overall_f1(&self, k: usize) -> Result<f64> {
        Ok(self.overall.f1[self.k_index(k)?])
    }

    /// One row per type plus an `overall` row.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("attribute_type,n_records");
        for m in ["recall", "precision", "f1"] {
            for k in &self.ks {
                write!(s, ",{m}@{k}").unwrap();
            }
        }
        s.push_str(",map\n");
        let mut row = |name: &str, n: String, r: &[f64], p: &[f64], f: &[f64], map: f64| {
            s.push_str(name);
            s.push(',');
            s.push_str(&n);
            for v in r.iter().chain(p).chain(f) {
                write!(s, ",{v}").unwrap();
            }
            writeln!(s, ",{map}").unwrap();
        };
        for t in &self.types {
            row(&t.attribute_type, t.n_records.to_string(), &t.recall, &t.precision, &t.f1, t.map);
        }
        let o = &self.overall;
        row("overall", String::new(), &o.recall, &o.precision, &o.f1, o.map);
        s
    }

    pub fn per_class_csv(&self) -> String {
        let mut s = String::from("attribute_type,class,n_records");
        for k in &self.ks {
            write!(s, ",recall@{k}").unwrap();
        }
        s.push('\n');
        for t in &self.types {
            for c in &t.per_class {
                write!(s, "{},{},{}", t.attribute_type, c.class, c.n_records).unwrap();
                for v in &c.recall {
                    write!(s, ",{v}").unwrap();
                }
                s.push('\n');
            }
        }
        s
    }

    /// Fixed-width table in percent.
    pub fn to_table(&self) -> String {
        let mut header = vec!["type".to_string(), "n".to_string()];
        for k in &self.ks {
            header.push(format!("R@{k}"));
        }
        for k in &self.ks {
            header.push(format!("F1@{k}"));
        }
        header.push("mAP".into());
        let mut rows = vec![header];
        let pct = |v: f64| format!("{:.2}", 100.0 * v);
        for t in &self.types {
            let mut r = vec![t.attribute_type.clone(), t.n_records.to_string()];
            r.extend(t.recall.iter().map(|&v| pct(v)));
            r.extend(t.f1.iter().map(|&v| pct(v)));
            r.push(pct(t.map));
            rows.push(r);
        }
        let mut r = vec!["overall".to_string(), String::new()];
        r.extend(self.overall.recall.iter().map(|&v| pct(v)));
        r.extend(self.overall.f1.iter().map(|&v| pct(v)));
        r.push(pct(self.overall.map));
        rows.push(r);
        render_table(&rows)
    }
}

/// Left-aligned first column, right-aligned others.
pub fn render_table(rows: &[Vec<String>]) -> String {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|c| rows.iter().filter_map(|r| r.get(c)).map(|v| v.chars().count()).max().unwrap_or(0))
        .collect();
    let mut s = String::new();
    for (ri, r) in rows.iter().enumerate() {
        let cells: Vec<String> = r
            .iter()
            .enumerate()
            .map(|(c, v)| {
                if c == 0 {
                    format!("{v:<w$}", w = widths[c])
                } else {
                    format!("{v:>w$}", w = widths[c])
                }
            })
            .collect();
        s.push_str(cells.join("  ").trim_end());
        s.push('\n');
        if ri == 0 {
            s.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * cols.saturating_sub(1)));
            s.push('\n');
        }
    }
    s
}

fn validate_ks(ks: &[usize]) -> Result<()> {
    if ks.is_empty() || ks.contains(&0) {
        return Err(Error::InvalidArgument("ks must be non-empty and every k >= 1".into()));
    }
    if ks.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument("ks must be strictly increasing".into()));
    }
    Ok(())
}

/// Recomputes a report from a prediction log. Types appear in first-seen order.
///
/// A `k` larger than a type's class count is evaluated at the class count.
pub fn metrics_from_log(log: &PredictionLog, ks: &[usize]) -> Result<MetricsReport> {
    validate_ks(ks)?;
    let mut order: Vec<String> = Vec::new();
    for e in &log.entries {
        if !order.contains(&e.attribute_type) {
            order.push(e.attribute_type.clone());
        }
    }
    let mut types = Vec::with_capacity(order.len());
    for t in &order {
        let entries: Vec<&LogEntry> = log.entries.iter().filter(|e| &e.attribute_type == t).collect();
        let classes: Vec<String> = {
            let mut c: Vec<String> = entries[0].ranking.iter().map(|(c, _)| c.clone()).collect();
            c.sort();
            c
        };
        let nk = ks.len();
        let mut recall = vec![0.0; nk];
        let mut precision = vec![0.0; nk];
        let mut f1 = vec![0.0; nk];
        let mut map = 0.0;
        let mut class_hits = vec![vec![0usize; nk]; classes.len()];
        let mut class_n = vec![0usize; classes.len()];
        for e in &entries {
            let ranked: Vec<&str> = e.ranking.iter().map(|(c, _)| c.as_str()).collect();
            let truth: BTreeSet<&str> = e.truth.iter().map(String::as_str).collect();
            for (i, &k) in ks.iter().enumerate() {
                let k = k.min(ranked.len());
                recall[i] += recall_at_k(&ranked, &truth, k)?;
                precision[i] += precision_at_k(&ranked, &truth, k)?;
                f1[i] += f1_at_k(&ranked, &truth, k)?;
            }
            map += average_precision(&ranked, &truth)?;
            for c in &truth {
                let Ok(ci) = classes.binary_search_by(|x| x.as_str().cmp(c)) else {
                    continue;
                };
                class_n[ci] += 1;
                for (i, &k) in ks.iter().enumerate() {
                    if ranked[..k.min(ranked.len())].contains(c) {
                        class_hits[ci][i] += 1;
                    }
                }
            }
        }
        let n = entries.len() as f64;
        for v in recall.iter_mut().chain(&mut precision).chain(&mut f1) {
            *v /= n;
        }
        let mut per_class: Vec<ClassRecall> = classes
            .iter()
            .enumerate()
            .map(|(ci, c)| ClassRecall {
                class: c.clone(),
                n_records: class_n[ci],
                recall: class_hits[ci]
                    .iter()
                    .map(|&h| if class_n[ci] == 0 { 0.0 } else { h as f64 / class_n[ci] as f64 })
                    .collect(),
            })
            .collect();
        // Present classes by descending support, then name.
        per_class.sort_by(|a, b| b.n_records.cmp(&a.n_records).then(a.class.cmp(&b.class)));
        types.push(TypeMetrics {
            attribute_type: t.clone(),
            n_records: entries.len(),
            recall,
            precision,
            f1,
            map: map / n,
            per_class,
        });
    }
    if types.is_empty() {
        return Err(Error::EmptyData("prediction log is empty".into()));
    }
    let mean = |f: &dyn Fn(&TypeMetrics) -> f64| types.iter().map(f).sum::<f64>() / types.len() as f64;
    let overall = OverallMetrics {
        recall: (0..ks.len()).map(|i| mean(&|t| t.recall[i])).collect(),
        precision: (0..ks.len()).map(|i| mean(&|t| t.precision[i])).collect(),
        f1: (0..ks.len()).map(|i| mean(&|t| t.f1[i])).collect(),
        map: mean(&|t| t.map),
    };
    Ok(MetricsReport {
        ks: ks.to_vec(),
        types,
        overall,
    })
}

/// Ranks every labeled record of `manifest` with `model` and builds the log.
///
/// Only the model's attribute types are evaluated; each must have at least
/// one labeled record.
pub fn predict_log<R: Ranker + ?Sized>(
    model: &R,
    manifest: &DatasetManifest,
    bank: &ImageBank,
    exec: Exec,
) -> Result<PredictionLog> {
    let types = model.attribute_types();
    let classes: Vec<Vec<String>> = types.iter().map(|t| model.classes(t)).collect::<Result<_>>()?;
    for t in &types {
        if !manifest.records.iter().any(|r| r.has_labels_for(t)) {
            return Err(Error::EmptyData(format!("no evaluable records for attribute type `{t}`")));
        }
    }
    let wanted: Vec<usize> = (0..manifest.len())
        .filter(|&i| types.iter().any(|t| manifest.records[i].has_labels_for(t)))
        .collect();
    let images: Vec<&Image> = wanted
        .iter()
        .map(|&i| bank.get(&manifest.records[i].id).map(|a| a.as_ref()))
        .collect::<Result<_>>()?;
    let scored = parallel::try_map(exec, &images, |img| model.score(img))?;

    let mut per_type: Vec<Vec<LogEntry>> = vec![Vec::new(); types.len()];
    for (&ri, scores) in wanted.iter().zip(scored) {
        let rec = &manifest.records[ri];
        for (ti, ts) in scores.into_iter().enumerate() {
            let Some(truth) = rec.labels_for(&types[ti]).filter(|s| !s.is_empty()) else {
                continue;
            };
            let ranking = rank_scores(&ts.scores, ts.scores.len())
                .into_iter()
                .map(|(i, s)| (classes[ti][i].clone(), s))
                .collect();
            per_type[ti].push(LogEntry {
                id: rec.id.clone(),
                attribute_type: types[ti].clone(),
                truth: truth.iter().cloned().collect(),
                ranking,
            });
        }
    }
    Ok(PredictionLog {
        entries: per_type.into_iter().flatten().collect(),
    })
}

/// Metrics of `model` on the labeled records of `manifest`, with the log.
pub fn evaluate_model<R: Ranker + ?Sized>(
    model: &R,
    manifest: &DatasetManifest,
    bank: &ImageBank,
    ks: &[usize],
    exec: Exec,
) -> Result<(MetricsReport, PredictionLog)> {
    validate_ks(ks)?;
    let log = predict_log(model, manifest, bank, exec)?;
    Ok((metrics_from_log(&log, ks)?, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inference::ConstantRanker;
    use crate::schema::{AttributeSchema, AttributeType, ImageRecord, ManifestKind};

    fn set(v: &[&'static str]) -> BTreeSet<&'static str> {
        v.iter().copied().collect()
    }

    #[test]
    fn worked_values() {
        assert_eq!(recall_at_k(&["a", "c", "d"], &set(&["a", "b"]), 3).unwrap(), 0.5);
        let f1 = f1_at_k(&["a"], &set(&["a", "b"]), 1).unwrap();
        assert!((f1 - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(f1_at_k(&["c", "d"], &set(&["a"]), 2).unwrap(), 0.0);
        assert_eq!(recall_at_k(&["b", "a"], &set(&["a", "b"]), 2).unwrap(), 1.0);
        assert!(recall_at_k(&["a"], &set(&[]), 1).is_err());
        assert!(recall_at_k(&["a"], &set(&["a"]), 2).is_err());
    }

    #[test]
    fn average_precision_values() {
        assert_eq!(average_precision(&["a", "b", "c"], &set(&["a"])).unwrap(), 1.0);
        let ap = average_precision(&["x", "a", "y", "b"], &set(&["a", "b"])).unwrap();
        assert!((ap - (0.5 + 0.5) / 2.0).abs() < 1e-12);
    }

    fn balanced(n: usize) -> (DatasetManifest, ImageBank) {
        let classes = ["a", "b", "c", "d"];
        let schema = AttributeSchema::new(vec![AttributeType::new("t", &classes)]).unwrap();
        let mut bank = ImageBank::new();
        let records = (0..n)
            .map(|i| {
                let id = format!("r{i}");
                bank.insert(id.clone(), Image::filled(4, 4, [0.0; 3]));
                ImageRecord::unlabeled(id, "x.png").with_label("t", classes[i % 4])
            })
            .collect();
        (
            DatasetManifest::new(schema, records, ManifestKind::Labeled, ".").unwrap(),
            bank,
        )
    }

    #[test]
    fn constant_ranking_on_balanced_task() {
        let (m, bank) = balanced(400);
        let r = ConstantRanker::from_counts(vec![(
            "t".into(),
            ["a", "b", "c", "d"].map(String::from).to_vec(),
            vec![1, 4, 3, 2],
        )]);
        let (report, log) = evaluate_model(&r, &m, &bank, &DEFAULT_KS, Exec::Sequential).unwrap();
        assert_eq!(report.recall("t", 1).unwrap(), 0.25);
        assert_eq!(report.recall("t", 3).unwrap(), 0.75);
        assert_eq!(report.recall("t", 5).unwrap(), 1.0);
        assert_eq!(metrics_from_log(&log, &DEFAULT_KS).unwrap(), report);
        let b = report.get("t").unwrap().per_class.iter().find(|c| c.class == "b").unwrap();
        assert_eq!(b.recall[0], 1.0);
    }

    #[test]
    fn log_round_trip_through_file() {
        let (m, bank) = balanced(20);
        let r = ConstantRanker::from_counts(vec![(
            "t".into(),
            ["a", "b", "c", "d"].map(String::from).to_vec(),
            vec![1, 4, 3, 2],
        )]);
        let (report, log) = evaluate_model(&r, &m, &bank, &[1, 3], Exec::Parallel).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("log.jsonl");
        log.save(&p).unwrap();
        assert_eq!(metrics_from_log(&PredictionLog::load(&p).unwrap(), &[1, 3]).unwrap(), report);
        assert!(report.to_csv().starts_with("attribute_type,n_records,recall@1,recall@3"));
        assert!(report.to_table().contains("overall"));
    }

    #[test]
    fn type_without_records_is_an_error() {
        let (mut m, bank) = balanced(4);
        for r in &mut m.records {
            r.labels.clear();
        }
        let r = ConstantRanker::from_counts(vec![("t".into(), vec!["a".into(), "b".into()], vec![1, 2])]);
        assert!(evaluate_model(&r, &m, &bank, &[1], Exec::Sequential).is_err());
    }
}
