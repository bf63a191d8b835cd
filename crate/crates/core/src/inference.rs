//! Ranking attribute classes for new images.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Image;
use crate::embeddings::{rank_scores, EmbeddingVector, LabelMatch};
use crate::error::{Error, Result};
use crate::parallel::{self, Exec};
use crate::student::{student_embed, StudentModel};
use crate::teacher::{teacher_embed, TeacherModel};

/// Class scores for one attribute type, in the model's class order.
#[derive(Debug, Clone, PartialEq)]
pub struct TypeScores {
    pub attribute_type: String,
    pub scores: Vec<f64>,
}

/// Anything that scores every class of its attribute types for an image.
pub trait Ranker: Sync {
    fn attribute_types(&self) -> Vec<String>;

    fn classes(&self, attribute_type: &str) -> Result<Vec<String>>;

    /// Scores for every attribute type, in `attribute_types` order.
    fn score(&self, image: &Image) -> Result<Vec<TypeScores>>;
}

impl Ranker for TeacherModel {
    fn attribute_types(&self) -> Vec<String> {
        vec![self.attribute_type.clone()]
    }

    fn classes(&self, attribute_type: &str) -> Result<Vec<String>> {
        if attribute_type != self.attribute_type {
            return Err(Error::UnknownType(attribute_type.to_string()));
        }
        Ok(self.dictionary.classes.clone())
    }

    fn score(&self, image: &Image) -> Result<Vec<TypeScores>> {
        let e = self.embed_raw(image)?;
        Ok(vec![TypeScores {
            attribute_type: self.attribute_type.clone(),
            scores: self.dictionary.similarities(&e)?,
        }])
    }
}

impl Ranker for StudentModel {
    fn attribute_types(&self) -> Vec<String> {
        StudentModel::attribute_types(self)
    }

    fn classes(&self, attribute_type: &str) -> Result<Vec<String>> {
        Ok(self.branch(attribute_type)?.dictionary.classes.clone())
    }

    fn score(&self, image: &Image) -> Result<Vec<TypeScores>> {
        let all = self.embed_all(image)?;
        self.branches
            .iter()
            .zip(all)
            .map(|(b, e)| {
                Ok(TypeScores {
                    attribute_type: b.attribute_type.clone(),
                    scores: b.dictionary.similarities(&e.values)?,
                })
            })
            .collect()
    }
}

/// Ranks classes by a fixed score per class, ignoring the image.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstantRanker {
    pub types: Vec<(String, Vec<String>, Vec<f64>)>,
}

impl ConstantRanker {
    /// Scores each class by its count, so the most frequent class ranks first.
    pub fn from_counts(types: Vec<(String, Vec<String>, Vec<usize>)>) -> Self {
        Self {
            types: types
                .into_iter()
                .map(|(t, c, n)| (t, c, n.into_iter().map(|v| v as f64).collect()))
                .collect(),
        }
    }
}

impl Ranker for ConstantRanker {
    fn attribute_types(&self) -> Vec<String> {
        self.types.iter().map(|t| t.0.clone()).collect()
    }

    fn classes(&self, attribute_type: &str) -> Result<Vec<String>> {
        self.types
            .iter()
            .find(|t| t.0 == attribute_type)
            .map(|t| t.1.clone())
            .ok_or_else(|| Error::UnknownType(attribute_type.to_string()))
    }

    fn score(&self, _image: &Image) -> Result<Vec<TypeScores>> {
        Ok(self
            .types
            .iter()
            .map(|(t, _, s)| TypeScores {
                attribute_type: t.clone(),
                scores: s.clone(),
            })
            .collect())
    }
}

/// Top-ranked classes of one attribute type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypePrediction {
    pub attribute_type: String,
    pub top: Vec<LabelMatch>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub types: Vec<TypePrediction>,
}

impl Prediction {
    pub fn for_type(&self, attribute_type: &str) -> Option<&TypePrediction> {
        self.types.iter().find(|t| t.attribute_type == attribute_type)
    }
}

/// Top-`k` classes per attribute type; `k` is capped at each type's class count.
pub fn predict<R: Ranker + ?Sized>(model: &R, image: &Image, k: usize) -> Result<Prediction> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    let scored = model.score(image)?;
    let mut types = Vec::with_capacity(scored.len());
    for ts in scored {
        let classes = model.classes(&ts.attribute_type)?;
        let top = rank_scores(&ts.scores, k.min(classes.len()))
            .into_iter()
            .map(|(index, similarity)| LabelMatch {
                index,
                class: classes[index].clone(),
                similarity,
            })
            .collect();
        types.push(TypePrediction {
            attribute_type: ts.attribute_type,
            top,
        });
    }
    Ok(Prediction { types })
}

/// [`predict`] over many images; output order matches input order.
pub fn predict_batch<R: Ranker + ?Sized>(
    model: &R,
    images: &[&Image],
    k: usize,
    exec: Exec,
) -> Result<Vec<Prediction>> {
    parallel::try_map(exec, images, |img| predict(model, img, k))
}

/// A saved teacher or student, told apart by the weight file in its directory.
#[derive(Debug, Clone)]
pub enum SavedModel {
    Teacher(TeacherModel),
    Student(StudentModel),
}

impl SavedModel {
    pub fn load(dir: &Path) -> Result<Self> {
        if dir.join("student.json").is_file() {
            Ok(Self::Student(StudentModel::load(dir)?))
        } else if dir.join("teacher.json").is_file() {
            Ok(Self::Teacher(TeacherModel::load(dir)?))
        } else {
            Err(Error::NotFound(dir.join("{teacher,student}.json")))
        }
    }

    pub fn embed(&self, image: &Image, attribute_type: &str) -> Result<EmbeddingVector> {
        match self {
            Self::Teacher(t) if t.attribute_type == attribute_type => teacher_embed(t, image),
            Self::Teacher(_) => Err(Error::UnknownType(attribute_type.to_string())),
            Self::Student(s) => student_embed(s, image, attribute_type),
        }
    }

    pub fn input_size(&self) -> usize {
        match self {
            Self::Teacher(t) => t.backbone.input_size,
            Self::Student(s) => s.backbone.input_size,
        }
    }
}

impl Ranker for SavedModel {
    fn attribute_types(&self) -> Vec<String> {
        match self {
            Self::Teacher(t) => t.attribute_types(),
            Self::Student(s) => Ranker::attribute_types(s),
        }
    }

    fn classes(&self, attribute_type: &str) -> Result<Vec<String>> {
        match self {
            Self::Teacher(t) => t.classes(attribute_type),
            Self::Student(s) => s.classes(attribute_type),
        }
    }

    fn score(&self, image: &Image) -> Result<Vec<TypeScores>> {
        match self {
            Self::Teacher(t) => t.score(image),
            Self::Student(s) => s.score(image),
        }
    }
}
