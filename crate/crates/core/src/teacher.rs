//! Per-attribute-type teachers trained with the focal ranking loss.
//!
//! A teacher is a backbone, a linear projection to `D` dimensions, and a
//! [`LabelDictionary`] of class centres. Each step samples class-balanced
//! triplets `(anchor class, positive image, negative image)` and updates all
//! three parts jointly with plain SGD.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::{Image, ImageBank};
use crate::embeddings::{type_key, EmbeddingVector, LabelDictionary};
use crate::error::{Error, Result};
use crate::losses;
use crate::nn::{Backbone, BackbonePreset, Linear, Sgd};
use crate::parallel::{self, Exec};
use crate::rng::{self, stream, Rng};
use crate::schema::{filter_by_type, DatasetManifest};

/// Optimisation settings shared by the teacher and student stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub dim: usize,
    pub gamma: f64,
    pub beta: f64,
    pub learning_rate: f64,
    pub lr_decay_factor: f64,
    pub lr_decay_every_epochs: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub samples_per_epoch: usize,
    /// Student only: images over which the learning rate ramps up from 0.
    #[serde(default)]
    pub warmup_images: usize,
    #[serde(default)]
    pub momentum: f64,
    #[serde(default)]
    pub seed: u64,
    pub backbone_preset: BackbonePreset,
}

impl TrainConfig {
    /// Full-scale teacher settings: lr 0.2, batch 128, halve every 10 of 40 epochs.
    pub fn full_scale_teacher() -> Self {
        Self {
            dim: 1024,
            gamma: 1.0,
            beta: 1.0,
            learning_rate: 0.2,
            lr_decay_factor: 0.5,
            lr_decay_every_epochs: 10,
            epochs: 40,
            batch_size: 128,
            samples_per_epoch: 300_000,
            warmup_images: 0,
            momentum: 0.0,
            seed: 0,
            backbone_preset: BackbonePreset::Resnet50Class,
        }
    }

    /// Full-scale student settings: warm up to lr 0.4 over 1M images, 100 epochs.
    pub fn full_scale_student() -> Self {
        Self {
            learning_rate: 0.4,
            epochs: 100,
            warmup_images: 1_000_000,
            ..Self::full_scale_teacher()
        }
    }

    /// CPU-sized teacher used by the synthetic experiments.
    pub fn desk_teacher() -> Self {
        Self {
            dim: 64,
            gamma: 1.0,
            beta: 1.0,
            learning_rate: 0.2,
            lr_decay_factor: 0.5,
            lr_decay_every_epochs: 4,
            epochs: 10,
            batch_size: 32,
            samples_per_epoch: 1024,
            warmup_images: 0,
            momentum: 0.9,
            seed: 0,
            backbone_preset: BackbonePreset::Small,
        }
    }

    pub fn desk_student() -> Self {
        Self {
            learning_rate: 0.4,
            epochs: 10,
            samples_per_epoch: 2048,
            warmup_images: 2048,
            ..Self::desk_teacher()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.dim < 2 {
            return bad("dim must be at least 2");
        }
        if !(self.gamma.is_finite() && self.gamma >= 0.0) {
            return bad("gamma must be finite and >= 0");
        }
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return bad("beta must be finite and >= 0");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning_rate must be > 0");
        }
        if !(self.lr_decay_factor.is_finite() && self.lr_decay_factor > 0.0) {
            return bad("lr_decay_factor must be > 0");
        }
        if self.lr_decay_every_epochs == 0 {
            return bad("lr_decay_every_epochs must be >= 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if self.samples_per_epoch < self.batch_size {
            return bad("samples_per_epoch must be >= batch_size");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must be in [0, 1)");
        }
        Ok(())
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.samples_per_epoch / self.batch_size
    }

    /// Step-decayed rate for `epoch`, before any warm-up.
    pub fn decayed_lr(&self, epoch: usize) -> f64 {
        self.learning_rate * self.lr_decay_factor.powi((epoch / self.lr_decay_every_epochs) as i32)
    }
}

/// One optimisation step's mean loss and learning rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub epoch: usize,
    pub loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTrace {
    pub rows: Vec<TraceRow>,
}

impl LossTrace {
    pub fn epoch_means(&self) -> Vec<f64> {
        let mut out: Vec<(f64, usize)> = Vec::new();
        for r in &self.rows {
            if out.len() <= r.epoch {
                out.resize(r.epoch + 1, (0.0, 0));
            }
            out[r.epoch].0 += r.loss;
            out[r.epoch].1 += 1;
        }
        out.into_iter()
            .map(|(s, n)| if n == 0 { f64::NAN } else { s / n as f64 })
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,loss,lr\n");
        for r in &self.rows {
            s.push_str(&format!("{},{},{}\n", r.step, r.loss, r.lr));
        }
        s
    }
}

/// Called after each epoch with the current model; returns a validation score
/// (higher is better) to keep the best snapshot, or `None` to keep the last.
pub type EpochScorer<'a, M> = &'a mut dyn FnMut(usize, &M) -> Result<Option<f64>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeacherModel {
    pub attribute_type: String,
    pub backbone: Backbone,
    pub projection: Linear,
    pub dictionary: LabelDictionary,
    pub config: TrainConfig,
}

impl TeacherModel {
    /// Untrained teacher: random backbone and projection, Gaussian dictionary.
    pub fn init(
        manifest: &DatasetManifest,
        attribute_type: &str,
        image_size: usize,
        config: &TrainConfig,
    ) -> Result<Self> {
        config.validate()?;
        let t = manifest.schema.get(attribute_type)?;
        let dictionary = LabelDictionary::for_type(t, config.dim, config.seed)?;
        let key = type_key(attribute_type);
        let mut rng = rng::rng_for(config.seed, stream::WEIGHTS, key);
        let backbone = Backbone::new(image_size, config.backbone_preset.channels(), &mut rng)?;
        let projection = Linear::new(backbone.feature_dim(), config.dim, &mut rng);
        Ok(Self {
            attribute_type: attribute_type.to_string(),
            backbone,
            projection,
            dictionary,
            config: config.clone(),
        })
    }

    pub fn dim(&self) -> usize {
        self.projection.out_dim
    }

    pub fn embed_raw(&self, image: &Image) -> Result<Vec<f64>> {
        let feature = self.backbone.forward(image)?;
        Ok(self.projection.forward(&feature).iter().map(|&v| v as f64).collect())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let weights = dir.join("teacher.json");
        fs::write(&weights, serde_json::to_vec(self)?).map_err(|e| Error::io(&weights, e))?;
        self.dictionary.save(&dir.join("dictionary.txt"))?;
        let cfg = dir.join("config.json");
        fs::write(&cfg, serde_json::to_vec_pretty(&self.config)?).map_err(|e| Error::io(&cfg, e))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let weights = dir.join("teacher.json");
        let bytes = fs::read(&weights).map_err(|e| Error::io(&weights, e))?;
        Ok(serde_json::from_slice(&bytes)?)
    }
}

/// `D`-dimensional teacher embedding of `image`.
pub fn teacher_embed(model: &TeacherModel, image: &Image) -> Result<EmbeddingVector> {
    EmbeddingVector::new(model.attribute_type.clone(), model.embed_raw(image)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Triplet {
    pub anchor: usize,
    /// Record index of the positive image.
    pub positive: usize,
    /// Record index of the negative image.
    pub negative: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TripletBatch {
    pub triplets: Vec<Triplet>,
}

/// Class-balanced triplet sampler over one attribute type.
#[derive(Debug, Clone)]
pub struct TripletSampler {
    /// Record indices per class.
    members: Vec<Vec<usize>>,
    /// Class indices per record.
    labels: Vec<BTreeSet<usize>>,
}

const MAX_NEGATIVE_DRAWS: usize = 10_000;

impl TripletSampler {
    /// Indexes `manifest` (already restricted to records labeled for the type).
    pub fn new(manifest: &DatasetManifest, attribute_type: &str) -> Result<Self> {
        let t = manifest.schema.get(attribute_type)?;
        let mut members = vec![Vec::new(); t.n_classes()];
        let mut labels = Vec::with_capacity(manifest.len());
        for (ri, r) in manifest.records.iter().enumerate() {
            let mut set = BTreeSet::new();
            if let Some(classes) = r.labels_for(attribute_type) {
                for c in classes {
                    let ci = t.class_index(c).ok_or_else(|| Error::UnknownClass {
                        attribute_type: attribute_type.to_string(),
                        class: c.clone(),
                    })?;
                    members[ci].push(ri);
                    set.insert(ci);
                }
            }
            labels.push(set);
        }
        for (ci, m) in members.iter().enumerate() {
            if m.is_empty() {
                return Err(Error::ClassCoverage {
                    attribute_type: attribute_type.to_string(),
                    class: t.classes[ci].clone(),
                    reason: "no labeled images".into(),
                });
            }
            let has_negative = labels.iter().any(|s| !s.is_empty() && !s.contains(&ci));
            if !has_negative {
                return Err(Error::ClassCoverage {
                    attribute_type: attribute_type.to_string(),
                    class: t.classes[ci].clone(),
                    reason: "every candidate negative carries this class".into(),
                });
            }
        }
        if members.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "attribute type `{attribute_type}` needs at least 2 classes for ranking"
            )));
        }
        Ok(Self { members, labels })
    }

    pub fn n_classes(&self) -> usize {
        self.members.len()
    }

    pub fn sample(&self, batch_size: usize, rng: &mut Rng) -> Result<TripletBatch> {
        let n = self.n_classes();
        let mut triplets = Vec::with_capacity(batch_size);
        for _ in 0..batch_size {
            let anchor = rng.gen_range(0..n);
            let positive = *self.members[anchor].choose(rng).expect("non-empty class");
            let mut negative = None;
            for _ in 0..MAX_NEGATIVE_DRAWS {
                let mut other = rng.gen_range(0..n - 1);
                if other >= anchor {
                    other += 1;
                }
                let cand = *self.members[other].choose(rng).expect("non-empty class");
                if !self.labels[cand].contains(&anchor) {
                    negative = Some(cand);
                    break;
                }
            }
            let negative = negative.ok_or_else(|| Error::ClassCoverage {
                attribute_type: String::new(),
                class: anchor.to_string(),
                reason: "negative sampling rejected every draw".into(),
            })?;
            triplets.push(Triplet {
                anchor,
                positive,
                negative,
            });
        }
        Ok(TripletBatch { triplets })
    }
}

/// Samples one batch of triplets for `attribute_type` from `manifest`.
pub fn sample_triplets(
    manifest: &DatasetManifest,
    attribute_type: &str,
    batch_size: usize,
    rng: &mut Rng,
) -> Result<TripletBatch> {
    TripletSampler::new(manifest, attribute_type)?.sample(batch_size, rng)
}

struct TripletGrads {
    loss: f64,
    backbone: Vec<f32>,
    projection: Vec<f32>,
    anchor: usize,
    dict_row: Vec<f64>,
}

fn to_f32(v: &[f64]) -> Vec<f32> {
    v.iter().map(|&x| x as f32).collect()
}

fn triplet_grads(model: &TeacherModel, images: &[&Image], t: Triplet) -> Result<TripletGrads> {
    let trace_pos = model.backbone.forward_trace(images[t.positive])?;
    let trace_neg = model.backbone.forward_trace(images[t.negative])?;
    let e_pos: Vec<f64> = model
        .projection
        .forward(&trace_pos.feature)
        .iter()
        .map(|&v| v as f64)
        .collect();
    let e_neg: Vec<f64> = model
        .projection
        .forward(&trace_neg.feature)
        .iter()
        .map(|&v| v as f64)
        .collect();
    let d = model.dictionary.row(t.anchor);
    let (b, g) = losses::focal_ranking_grad(d, &e_pos, &e_neg, model.config.gamma)?;

    let mut backbone = vec![0.0f32; model.backbone.n_params()];
    let mut projection = vec![0.0f32; model.projection.params.len()];
    let d_feat = model
        .projection
        .backward(&trace_pos.feature, &to_f32(&g.e_pos), &mut projection);
    model.backbone.backward(&trace_pos, &d_feat, &mut backbone);
    let d_feat = model
        .projection
        .backward(&trace_neg.feature, &to_f32(&g.e_neg), &mut projection);
    model.backbone.backward(&trace_neg, &d_feat, &mut backbone);
    Ok(TripletGrads {
        loss: b.loss,
        backbone,
        projection,
        anchor: t.anchor,
        dict_row: g.d,
    })
}

/// Runtime knobs that do not change results.
#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    pub exec: Exec,
}

/// Trains the teacher for `attribute_type` on the labeled records of `manifest`.
///
/// Images without labels for the type are skipped. The returned trace has one
/// row per step. With `scorer`, the snapshot with the best score is returned.
pub fn train_teacher(
    manifest: &DatasetManifest,
    bank: &ImageBank,
    attribute_type: &str,
    config: &TrainConfig,
    options: RunOptions,
    scorer: Option<EpochScorer<'_, TeacherModel>>,
) -> Result<(TeacherModel, LossTrace)> {
    config.validate()?;
    let view = filter_by_type(manifest, attribute_type)?;
    if view.is_empty() {
        return Err(Error::EmptyData(format!(
            "no records labeled for attribute type `{attribute_type}`"
        )));
    }
    let images = bank.for_manifest(&view)?;
    let image_refs: Vec<&Image> = images.iter().map(|i| i.as_ref()).collect();
    let image_size = image_refs[0].height;
    let sampler = TripletSampler::new(&view, attribute_type)?;
    let mut model = TeacherModel::init(&view, attribute_type, image_size, config)?;

    let mut opt_backbone = Sgd::new(model.backbone.n_params(), config.momentum as f32);
    let mut opt_projection = Sgd::new(model.projection.params.len(), config.momentum as f32);
    let mut dict_velocity = vec![0.0f64; model.dictionary.matrix.len()];
    let mut trace = LossTrace::default();
    let mut best: Option<(f64, TeacherModel)> = None;
    let mut scorer = scorer;
    let steps = config.steps_per_epoch();
    let batch = config.batch_size as f32;

    for epoch in 0..config.epochs {
        let lr = config.decayed_lr(epoch);
        for s in 0..steps {
            let step = epoch * steps + s;
            let mut rng = rng::rng_for(config.seed, stream::TRIPLETS, step as u64);
            let triplets = sampler.sample(config.batch_size, &mut rng)?.triplets;
            let per = parallel::map(options.exec, &triplets, |&t| triplet_grads(&model, &image_refs, t));

            let mut loss = 0.0;
            let mut g_backbone = vec![0.0f32; model.backbone.n_params()];
            let mut g_projection = vec![0.0f32; model.projection.params.len()];
            let mut g_dict = vec![0.0f64; model.dictionary.matrix.len()];
            for r in per {
                let r = r?;
                loss += r.loss;
                add(&mut g_backbone, &r.backbone);
                add(&mut g_projection, &r.projection);
                let dim = model.dictionary.dim;
                for (g, v) in g_dict[r.anchor * dim..(r.anchor + 1) * dim].iter_mut().zip(&r.dict_row) {
                    *g += v;
                }
            }
            loss /= config.batch_size as f64;
            if !loss.is_finite() {
                return Err(Error::NonFinite {
                    step,
                    message: format!(
                        "teacher `{attribute_type}` epoch {epoch}: batch loss {loss} at lr {lr}"
                    ),
                });
            }
            g_backbone.iter_mut().for_each(|g| *g /= batch);
            g_projection.iter_mut().for_each(|g| *g /= batch);
            opt_backbone.step(&mut model.backbone.params, &g_backbone, lr as f32);
            opt_projection.step(&mut model.projection.params, &g_projection, lr as f32);
            for ((p, g), v) in model
                .dictionary
                .matrix
                .iter_mut()
                .zip(&g_dict)
                .zip(&mut dict_velocity)
            {
                *v = config.momentum * *v + g / config.batch_size as f64;
                *p -= lr * *v;
            }
            if model.backbone.params.iter().any(|p| !p.is_finite()) {
                return Err(Error::NonFinite {
                    step,
                    message: format!("teacher `{attribute_type}`: parameters became non-finite"),
                });
            }
            trace.rows.push(TraceRow { step, epoch, loss, lr });
        }
        if let Some(score_fn) = scorer.as_mut() {
            if let Some(score) = score_fn(epoch, &model)? {
                if best.as_ref().map_or(true, |(b, _)| score > *b) {
                    best = Some((score, model.clone()));
                }
            }
        }
    }
    let model = best.map(|(_, m)| m).unwrap_or(model);
    Ok((model, trace))
}

pub(crate) fn add(acc: &mut [f32], v: &[f32]) {
    for (a, b) in acc.iter_mut().zip(v) {
        *a += b;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embeddings::init_label_dictionary;
    use crate::schema::{AttributeSchema, AttributeType, ImageRecord, ManifestKind};

    fn fixture() -> DatasetManifest {
        let schema = AttributeSchema::new(vec![AttributeType::new("pattern", &["stripe", "dot"])]).unwrap();
        DatasetManifest::new(
            schema,
            vec![
                ImageRecord::unlabeled("img1", "1.png").with_label("pattern", "stripe"),
                ImageRecord::unlabeled("img2", "2.png").with_label("pattern", "dot"),
            ],
            ManifestKind::Labeled,
            ".",
        )
        .unwrap()
    }

    #[test]
    fn only_possible_triplets() {
        let m = fixture();
        let mut rng = rng::rng_for(0, stream::TRIPLETS, 0);
        let batch = sample_triplets(&m, "pattern", 20, &mut rng).unwrap();
        for t in batch.triplets {
            if t.anchor == 0 {
                assert_eq!((t.positive, t.negative), (0, 1));
            } else {
                assert_eq!((t.positive, t.negative), (1, 0));
            }
        }
    }

    #[test]
    fn multi_label_image_never_negative_for_its_classes() {
        let schema =
            AttributeSchema::new(vec![AttributeType::new("pattern", &["stripe", "dot", "plain"])]).unwrap();
        let m = DatasetManifest::new(
            schema,
            vec![
                ImageRecord::unlabeled("img1", "1.png").with_label("pattern", "stripe"),
                ImageRecord::unlabeled("img2", "2.png").with_label("pattern", "dot"),
                ImageRecord::unlabeled("img3", "3.png")
                    .with_label("pattern", "stripe")
                    .with_label("pattern", "dot"),
                ImageRecord::unlabeled("img4", "4.png").with_label("pattern", "plain"),
            ],
            ManifestKind::Labeled,
            ".",
        )
        .unwrap();
        let sampler = TripletSampler::new(&m, "pattern").unwrap();
        let mut rng = rng::rng_for(1, stream::TRIPLETS, 0);
        let mut img3_positive_for = BTreeSet::new();
        for _ in 0..50 {
            for t in sampler.sample(16, &mut rng).unwrap().triplets {
                if t.positive == 2 {
                    img3_positive_for.insert(t.anchor);
                }
                if t.anchor <= 1 {
                    assert_ne!(t.negative, 2);
                }
            }
        }
        assert_eq!(img3_positive_for, BTreeSet::from([0, 1]));
    }

    #[test]
    fn sampling_is_deterministic() {
        let m = fixture();
        let a = sample_triplets(&m, "pattern", 8, &mut rng::rng_for(3, stream::TRIPLETS, 9)).unwrap();
        let b = sample_triplets(&m, "pattern", 8, &mut rng::rng_for(3, stream::TRIPLETS, 9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_class_is_named() {
        let schema =
            AttributeSchema::new(vec![AttributeType::new("pattern", &["stripe", "dot", "plaid"])]).unwrap();
        let m = DatasetManifest::new(schema, fixture().records, ManifestKind::Labeled, ".").unwrap();
        match TripletSampler::new(&m, "pattern") {
            Err(Error::ClassCoverage { class, .. }) => assert_eq!(class, "plaid"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn all_negatives_rejected_is_an_error() {
        let schema = AttributeSchema::new(vec![AttributeType::new("pattern", &["stripe", "dot"])]).unwrap();
        let m = DatasetManifest::new(
            schema,
            vec![
                ImageRecord::unlabeled("a", "a.png")
                    .with_label("pattern", "stripe")
                    .with_label("pattern", "dot"),
                ImageRecord::unlabeled("b", "b.png").with_label("pattern", "stripe"),
            ],
            ManifestKind::Labeled,
            ".",
        )
        .unwrap();
        assert!(matches!(
            TripletSampler::new(&m, "pattern"),
            Err(Error::ClassCoverage { .. })
        ));
    }

    #[test]
    fn lr_schedule() {
        let c = TrainConfig::full_scale_teacher();
        assert_eq!(c.decayed_lr(0), 0.2);
        assert_eq!(c.decayed_lr(9), 0.2);
        assert_eq!(c.decayed_lr(10), 0.1);
        assert_eq!(c.decayed_lr(39), 0.025);
        assert_eq!(TrainConfig::full_scale_student().learning_rate, 0.4);
    }

    #[test]
    fn config_validation() {
        let mut c = TrainConfig::desk_teacher();
        assert!(c.validate().is_ok());
        c.gamma = -1.0;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::desk_teacher();
        c.samples_per_epoch = c.batch_size - 1;
        assert!(c.validate().is_err());
    }

    #[test]
    fn zero_epochs_keeps_initial_dictionary() {
        let m = fixture();
        let mut bank = ImageBank::new();
        bank.insert("img1", Image::filled(16, 16, [1.0, 0.0, 0.0]));
        bank.insert("img2", Image::filled(16, 16, [0.0, 0.0, 1.0]));
        let config = TrainConfig {
            epochs: 0,
            ..TrainConfig::desk_teacher()
        };
        let (model, trace) = train_teacher(&m, &bank, "pattern", &config, RunOptions::default(), None).unwrap();
        assert!(trace.rows.is_empty());
        let init = init_label_dictionary("pattern", 2, config.dim, config.seed).unwrap();
        assert_eq!(model.dictionary.matrix, init.matrix);
    }

    #[test]
    fn embedding_is_pure_and_sized() {
        let m = fixture();
        let config = TrainConfig {
            dim: 12,
            ..TrainConfig::desk_teacher()
        };
        let model = TeacherModel::init(&m, "pattern", 16, &config).unwrap();
        let a = Image::filled(16, 16, [0.2, 0.4, 0.6]);
        let b = a.clone();
        let ea = teacher_embed(&model, &a).unwrap();
        assert_eq!(ea.dim(), 12);
        assert_eq!(ea, teacher_embed(&model, &a).unwrap());
        assert_eq!(ea, teacher_embed(&model, &b).unwrap());
        assert!(teacher_embed(&model, &Image::filled(20, 20, [0.0; 3])).is_err());
    }
}
