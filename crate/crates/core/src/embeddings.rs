//! Label dictionaries and cosine lookups.
//!
//! A [`LabelDictionary`] holds one learnable centre per class of an attribute
//! type. Rows are stored as trained (unnormalized); every similarity is a
//! cosine computed on the fly.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, stream};
use crate::schema::AttributeType;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub attribute_type: String,
    pub values: Vec<f64>,
}

impl EmbeddingVector {
    pub fn new(attribute_type: impl Into<String>, values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Degenerate("embedding has non-finite entries".into()));
        }
        Ok(Self {
            attribute_type: attribute_type.into(),
            values,
        })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        norm(&self.values)
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Cosine similarity of two non-zero vectors of equal length, clamped to `[-1, 1]`.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Degenerate("cosine of a zero vector".into()));
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

/// Unit-L2 copy of `v`. Zero vectors are an error.
pub fn normalize(v: &EmbeddingVector) -> Result<EmbeddingVector> {
    let n = v.norm();
    if n == 0.0 || !n.is_finite() {
        return Err(Error::Degenerate("cannot normalize a zero vector".into()));
    }
    Ok(EmbeddingVector {
        attribute_type: v.attribute_type.clone(),
        values: v.values.iter().map(|x| x / n).collect(),
    })
}

/// One entry of a ranking against a dictionary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelMatch {
    pub index: usize,
    pub class: String,
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelDictionary {
    pub attribute_type: String,
    pub classes: Vec<String>,
    pub dim: usize,
    /// Row-major `classes.len() × dim`.
    pub matrix: Vec<f64>,
}

pub(crate) fn type_key(name: &str) -> u64 {
    // FNV-1a, stable across platforms and releases.
    name.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
    })
}

impl LabelDictionary {
    /// Gaussian rows with zero mean and standard deviation `1/sqrt(dim)`.
    pub fn init(attribute_type: &str, classes: Vec<String>, dim: usize, seed: u64) -> Result<Self> {
        if classes.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "a label dictionary needs at least 2 classes, got {}",
                classes.len()
            )));
        }
        if dim < 2 {
            return Err(Error::InvalidArgument(format!(
                "embedding dimension must be at least 2, got {dim}"
            )));
        }
        let mut rng = rng::rng_for(seed, stream::DICTIONARY, type_key(attribute_type));
        let normal = Normal::new(0.0, 1.0 / (dim as f64).sqrt()).expect("valid normal");
        let matrix = (0..classes.len() * dim).map(|_| normal.sample(&mut rng)).collect();
        Ok(Self {
            attribute_type: attribute_type.to_string(),
            classes,
            dim,
            matrix,
        })
    }

    pub fn for_type(t: &AttributeType, dim: usize, seed: u64) -> Result<Self> {
        Self::init(&t.name, t.classes.clone(), dim, seed)
    }

    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.matrix[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.matrix[i * self.dim..(i + 1) * self.dim]
    }

    pub fn class_index(&self, class: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == class)
    }

    /// Appends a class centre, e.g. for a class introduced after training.
    pub fn add_row(&mut self, class: impl Into<String>, values: &[f64]) -> Result<()> {
        let class = class.into();
        if values.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: values.len(),
            });
        }
        if self.class_index(&class).is_some() {
            return Err(Error::InvalidArgument(format!("class `{class}` already present")));
        }
        if norm(values) == 0.0 || values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Degenerate("dictionary rows must be finite and non-zero".into()));
        }
        self.classes.push(class);
        self.matrix.extend_from_slice(values);
        Ok(())
    }

    /// Cosine of `values` against every row, in class order.
    pub fn similarities(&self, values: &[f64]) -> Result<Vec<f64>> {
        if values.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: values.len(),
            });
        }
        let n = norm(values);
        if n == 0.0 {
            return Err(Error::Degenerate("query embedding is a zero vector".into()));
        }
        (0..self.n_classes())
            .map(|i| {
                let row = self.row(i);
                let rn = norm(row);
                if rn == 0.0 {
                    return Err(Error::Degenerate(format!(
                        "dictionary row {i} of `{}` is zero",
                        self.attribute_type
                    )));
                }
                Ok((dot(values, row) / (n * rn)).clamp(-1.0, 1.0))
            })
            .collect()
    }

    /// Index and cosine of the most similar row; ties go to the lowest index.
    pub fn nearest(&self, values: &[f64]) -> Result<(usize, f64)> {
        let sims = self.similarities(values)?;
        let mut best = 0;
        for (i, &s) in sims.iter().enumerate().skip(1) {
            if s > sims[best] {
                best = i;
            }
        }
        Ok((best, sims[best]))
    }

    pub fn to_text(&self) -> String {
        let mut s = format!(
            "# mtss-dictionary v1 type={} rows={} dim={}\n",
            self.attribute_type,
            self.n_classes(),
            self.dim
        );
        for (i, class) in self.classes.iter().enumerate() {
            s.push_str(class);
            for v in self.row(i) {
                write!(s, "\t{v:e}").unwrap();
            }
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |line: usize, msg: &str| Error::Parse {
            path: "<dictionary>".into(),
            line,
            message: msg.to_string(),
        };
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| bad(1, "missing header"))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 6 || fields[0] != "#" || fields[1] != "mtss-dictionary" || fields[2] != "v1" {
            return Err(bad(1, "malformed header"));
        }
        let field = |s: &str, key: &str| -> Result<String> {
            s.strip_prefix(key)
                .map(str::to_string)
                .ok_or_else(|| bad(1, &format!("expected `{key}` in header")))
        };
        let attribute_type = field(fields[3], "type=")?;
        let rows: usize = field(fields[4], "rows=")?
            .parse()
            .map_err(|_| bad(1, "rows is not an integer"))?;
        let dim: usize = field(fields[5], "dim=")?
            .parse()
            .map_err(|_| bad(1, "dim is not an integer"))?;

        let mut classes = Vec::with_capacity(rows);
        let mut matrix = Vec::with_capacity(rows * dim);
        for (i, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split('\t');
            let class = parts.next().unwrap_or_default();
            let values: Vec<f64> = parts
                .map(|p| p.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| bad(i + 2, "invalid number"))?;
            if values.len() != dim {
                return Err(bad(i + 2, "row length does not match dim"));
            }
            classes.push(class.to_string());
            matrix.extend(values);
        }
        if classes.len() != rows {
            return Err(bad(1, "row count does not match header"));
        }
        Ok(Self {
            attribute_type,
            classes,
            dim,
            matrix,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text).map_err(|e| match e {
            Error::Parse { line, message, .. } => Error::Parse {
                path: path.to_path_buf(),
                line,
                message,
            },
            e => e,
        })
    }
}

/// Dictionary for `n_classes` anonymous classes named `0`, `1`, ...
pub fn init_label_dictionary(
    attribute_type: &str,
    n_classes: usize,
    dim: usize,
    seed: u64,
) -> Result<LabelDictionary> {
    let classes = (0..n_classes).map(|i| i.to_string()).collect();
    LabelDictionary::init(attribute_type, classes, dim, seed)
}

fn check_type(e: &EmbeddingVector, dict: &LabelDictionary) -> Result<()> {
    if e.dim() != dict.dim {
        return Err(Error::DimensionMismatch {
            expected: dict.dim,
            actual: e.dim(),
        });
    }
    Ok(())
}

/// The class whose centre has the highest cosine with `e`.
pub fn nearest_label(e: &EmbeddingVector, dict: &LabelDictionary) -> Result<LabelMatch> {
    check_type(e, dict)?;
    let (index, similarity) = dict.nearest(&e.values)?;
    Ok(LabelMatch {
        index,
        class: dict.classes[index].clone(),
        similarity,
    })
}

/// Top-`k` classes by descending cosine; equal scores keep class order.
pub fn rank_labels(e: &EmbeddingVector, dict: &LabelDictionary, k: usize) -> Result<Vec<LabelMatch>> {
    check_type(e, dict)?;
    if k == 0 || k > dict.n_classes() {
        return Err(Error::InvalidArgument(format!(
            "k must be in 1..={}, got {k}",
            dict.n_classes()
        )));
    }
    let sims = dict.similarities(&e.values)?;
    Ok(rank_scores(&sims, k)
        .into_iter()
        .map(|(index, similarity)| LabelMatch {
            index,
            class: dict.classes[index].clone(),
            similarity,
        })
        .collect())
}

/// Stable descending sort of `scores`, truncated to `k`.
pub(crate) fn rank_scores(scores: &[f64], k: usize) -> Vec<(usize, f64)> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    order.truncate(k);
    order.into_iter().map(|i| (i, scores[i])).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ev(values: &[f64]) -> EmbeddingVector {
        EmbeddingVector::new("t", values.to_vec()).unwrap()
    }

    fn dict(rows: &[&[f64]]) -> LabelDictionary {
        LabelDictionary {
            attribute_type: "t".into(),
            classes: (0..rows.len()).map(|i| format!("c{i}")).collect(),
            dim: rows[0].len(),
            matrix: rows.iter().flat_map(|r| r.iter().copied()).collect(),
        }
    }

    #[test]
    fn init_is_deterministic() {
        let a = init_label_dictionary("pattern", 5, 8, 3).unwrap();
        let b = init_label_dictionary("pattern", 5, 8, 3).unwrap();
        assert_eq!(a.matrix.len(), 40);
        assert_eq!(a, b);
        let c = init_label_dictionary("pattern", 5, 8, 4).unwrap();
        assert_ne!(a.matrix, c.matrix);
    }

    #[test]
    fn init_rows_differ() {
        let d = init_label_dictionary("t", 2, 2, 0).unwrap();
        assert_ne!(d.row(0), d.row(1));
    }

    #[test]
    fn init_rejects_bad_sizes() {
        assert!(init_label_dictionary("t", 1, 8, 0).is_err());
        assert!(init_label_dictionary("t", 4, 1, 0).is_err());
    }

    #[test]
    fn init_row_norms_bounded() {
        // Row norm is chi-distributed with mean ~1; 3 is far in the tail.
        for seed in 0..1000 {
            let d = init_label_dictionary("t", 5, 8, seed).unwrap();
            for i in 0..5 {
                let n = norm(d.row(i));
                assert!(n > 0.0 && n < 3.0, "seed {seed} row {i} norm {n}");
            }
        }
    }

    #[test]
    fn normalize_cases() {
        let n = normalize(&ev(&[3.0, 4.0])).unwrap();
        assert!((n.values[0] - 0.6).abs() < 1e-15 && (n.values[1] - 0.8).abs() < 1e-15);
        let u = ev(&[0.0, 1.0, 0.0]);
        assert_eq!(normalize(&u).unwrap(), u);
        assert!(matches!(normalize(&ev(&[0.0, 0.0])), Err(Error::Degenerate(_))));
    }

    #[test]
    fn nearest_self_similarity() {
        let d = dict(&[&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0], &[0.3, -0.2, 0.9]]);
        let m = nearest_label(&ev(d.row(2)), &d).unwrap();
        assert_eq!(m.index, 2);
        assert!((m.similarity - 1.0).abs() < 1e-12);
    }

    #[test]
    fn nearest_against_basis() {
        let d = dict(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let m = nearest_label(&ev(&[0.9, 0.1]), &d).unwrap();
        assert_eq!(m.index, 0);
        // brute force: 0.9 / sqrt(0.81 + 0.01)
        let expected = 0.9 / (0.82f64).sqrt();
        assert!((m.similarity - expected).abs() < 1e-12);
        assert!((m.similarity - 0.9939).abs() < 1e-4);
    }

    #[test]
    fn nearest_tie_goes_to_lowest_index() {
        let d = dict(&[&[1.0, 0.0], &[0.0, 1.0]]);
        assert_eq!(nearest_label(&ev(&[1.0, 1.0]), &d).unwrap().index, 0);
    }

    #[test]
    fn nearest_dimension_mismatch() {
        let d = dict(&[&[1.0, 0.0], &[0.0, 1.0]]);
        assert!(matches!(
            nearest_label(&ev(&[1.0, 0.0, 0.0]), &d),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn rank_worked_example() {
        // Unit rows in 2-D chosen to have the given cosines with e = (1, 0).
        let row = |c: f64| [c, (1.0 - c * c).sqrt()];
        let (a, b, c) = (row(0.2), row(0.9), row(0.5));
        let d = dict(&[&a, &b, &c]);
        let r = rank_labels(&ev(&[1.0, 0.0]), &d, 2).unwrap();
        assert_eq!(r.iter().map(|m| m.index).collect::<Vec<_>>(), vec![1, 2]);
        assert!((r[0].similarity - 0.9).abs() < 1e-12);
        assert!((r[1].similarity - 0.5).abs() < 1e-12);
    }

    #[test]
    fn rank_full_and_top1() {
        let d = init_label_dictionary("t", 6, 4, 9).unwrap();
        let e = ev(&[0.3, -1.0, 0.2, 0.5]);
        let full = rank_labels(&e, &d, 6).unwrap();
        let mut idx: Vec<_> = full.iter().map(|m| m.index).collect();
        idx.sort();
        assert_eq!(idx, (0..6).collect::<Vec<_>>());
        let top = rank_labels(&e, &d, 1).unwrap();
        assert_eq!(top[0], nearest_label(&e, &d).unwrap());
        assert!(rank_labels(&e, &d, 0).is_err());
        assert!(rank_labels(&e, &d, 7).is_err());
    }

    #[test]
    fn text_round_trip() {
        let d = init_label_dictionary("color", 4, 5, 11).unwrap();
        let back = LabelDictionary::from_text(&d.to_text()).unwrap();
        assert_eq!(back, d);
        assert!(LabelDictionary::from_text("garbage").is_err());
    }

    #[test]
    fn add_row_extends_dictionary() {
        let mut d = init_label_dictionary("t", 3, 4, 0).unwrap();
        d.add_row("new", &[1.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(d.n_classes(), 4);
        assert_eq!(nearest_label(&ev(&[2.0, 0.0, 0.0, 0.0]), &d).unwrap().class, "new");
        assert!(d.add_row("new", &[1.0, 0.0, 0.0, 0.0]).is_err());
        assert!(d.add_row("other", &[1.0]).is_err());
    }

    fn brute_rank(e: &[f64], rows: &[Vec<f64>]) -> Vec<usize> {
        let cos: Vec<f64> = rows
            .iter()
            .map(|r| {
                let d: f64 = e.iter().zip(r).map(|(a, b)| a * b).sum();
                let ne: f64 = e.iter().map(|a| a * a).sum::<f64>().sqrt();
                let nr: f64 = r.iter().map(|a| a * a).sum::<f64>().sqrt();
                d / (ne * nr)
            })
            .collect();
        let mut out = Vec::new();
        let mut used = vec![false; rows.len()];
        for _ in 0..rows.len() {
            let mut best: Option<usize> = None;
            for i in 0..rows.len() {
                if !used[i] && best.map_or(true, |b| cos[i] > cos[b]) {
                    best = Some(i);
                }
            }
            used[best.unwrap()] = true;
            out.push(best.unwrap());
        }
        out
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn rank_matches_exhaustive_sort(
            (rows, e) in (2usize..=8, 2usize..=16).prop_flat_map(|(n, d)| (
                prop::collection::vec(prop::collection::vec(-1.0f64..1.0, d), n),
                prop::collection::vec(-1.0f64..1.0, d),
            ))
        ) {
            prop_assume!(norm(&e) > 1e-6 && rows.iter().all(|r| norm(r) > 1e-6));
            let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
            let d = dict(&refs);
            let got: Vec<usize> = rank_labels(&ev(&e), &d, rows.len()).unwrap().iter().map(|m| m.index).collect();
            prop_assert_eq!(got, brute_rank(&e, &rows));
        }

        #[test]
        fn argmax_scale_invariant(seed in 0u64..500, scale in 1e-3f64..1e3) {
            let d = init_label_dictionary("t", 5, 6, seed).unwrap();
            let q = init_label_dictionary("q", 2, 6, seed + 1).unwrap();
            let e = ev(q.row(0));
            let scaled = ev(&e.values.iter().map(|v| v * scale).collect::<Vec<_>>());
            prop_assert_eq!(nearest_label(&e, &d).unwrap().index, nearest_label(&scaled, &d).unwrap().index);
        }

        #[test]
        fn rank_prefix_property(seed in 0u64..500, k in 1usize..7) {
            let d = init_label_dictionary("t", 7, 5, seed).unwrap();
            let q = init_label_dictionary("q", 2, 5, seed ^ 0xff).unwrap();
            let e = ev(q.row(1));
            let a = rank_labels(&e, &d, k).unwrap();
            let b = rank_labels(&e, &d, k + 1).unwrap();
            prop_assert_eq!(&a[..], &b[..k]);
        }
    }
}
