//! Single student distilled from several frozen teachers.
//!
//! The student shares one backbone across attribute types and adds a linear
//! branch per type. It is trained on unlabeled images to match each teacher's
//! embedding direction, with every term weighted by how close the teacher's
//! embedding lies to its nearest class centre.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::{Image, ImageBank};
use crate::embeddings::{EmbeddingVector, LabelDictionary};
use crate::error::{Error, Result};
use crate::losses::{self, DistillWeight};
use crate::nn::{Backbone, CallCounter, Linear, Sgd};
use crate::parallel;
use crate::rng::{self, stream};
use crate::schema::DatasetManifest;
use crate::teacher::{add, EpochScorer, LossTrace, RunOptions, TeacherModel, TraceRow, TrainConfig};

/// Per-type head: projection to the teacher's space plus its frozen dictionary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub attribute_type: String,
    pub projection: Linear,
    pub dictionary: LabelDictionary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudentModel {
    pub backbone: Backbone,
    pub branches: Vec<Branch>,
    pub config: TrainConfig,
    #[serde(skip)]
    pub backbone_calls: CallCounter,
}

impl StudentModel {
    /// Random backbone and branches sized to `teachers`, with their dictionaries copied.
    pub fn init(teachers: &[&TeacherModel], config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        check_teachers(teachers)?;
        let image_size = teachers[0].backbone.input_size;
        let mut rng = rng::rng_for(config.seed, stream::WEIGHTS, u64::MAX);
        let backbone = Backbone::new(image_size, config.backbone_preset.channels(), &mut rng)?;
        let branches = teachers
            .iter()
            .map(|t| Branch {
                attribute_type: t.attribute_type.clone(),
                projection: Linear::new(backbone.feature_dim(), t.dim(), &mut rng),
                dictionary: t.dictionary.clone(),
            })
            .collect();
        Ok(Self {
            backbone,
            branches,
            config: config.clone(),
            backbone_calls: CallCounter::default(),
        })
    }

    /// Student that reproduces `teacher` exactly on its single branch.
    pub fn from_teacher(teacher: &TeacherModel) -> Self {
        Self {
            backbone: teacher.backbone.clone(),
            branches: vec![Branch {
                attribute_type: teacher.attribute_type.clone(),
                projection: teacher.projection.clone(),
                dictionary: teacher.dictionary.clone(),
            }],
            config: teacher.config.clone(),
            backbone_calls: CallCounter::default(),
        }
    }

    pub fn attribute_types(&self) -> Vec<String> {
        self.branches.iter().map(|b| b.attribute_type.clone()).collect()
    }

    pub fn branch(&self, attribute_type: &str) -> Result<&Branch> {
        self.branches
            .iter()
            .find(|b| b.attribute_type == attribute_type)
            .ok_or_else(|| Error::UnknownType(attribute_type.to_string()))
    }

    fn features(&self, image: &Image) -> Result<Vec<f32>> {
        self.backbone_calls.bump();
        self.backbone.forward(image)
    }

    /// Embeddings for every branch from a single backbone pass.
    pub fn embed_all(&self, image: &Image) -> Result<Vec<EmbeddingVector>> {
        let feature = self.features(image)?;
        self.branches
            .iter()
            .map(|b| EmbeddingVector::new(b.attribute_type.clone(), project(&b.projection, &feature)))
            .collect()
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let dicts = dir.join("dictionaries");
        fs::create_dir_all(&dicts).map_err(|e| Error::io(&dicts, e))?;
        let weights = dir.join("student.json");
        fs::write(&weights, serde_json::to_vec(self)?).map_err(|e| Error::io(&weights, e))?;
        for b in &self.branches {
            b.dictionary.save(&dicts.join(format!("{}.txt", b.attribute_type)))?;
        }
        let cfg = dir.join("config.json");
        fs::write(&cfg, serde_json::to_vec_pretty(&self.config)?).map_err(|e| Error::io(&cfg, e))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let weights = dir.join("student.json");
        let bytes = fs::read(&weights).map_err(|e| Error::io(&weights, e))?;
        Ok(serde_json::from_slice(&bytes)?)
    }
}

fn project(linear: &Linear, feature: &[f32]) -> Vec<f64> {
    linear.forward(feature).iter().map(|&v| v as f64).collect()
}

fn check_teachers(teachers: &[&TeacherModel]) -> Result<()> {
    if teachers.is_empty() {
        return Err(Error::InvalidArgument("at least one teacher is required".into()));
    }
    let mut seen = BTreeSet::new();
    for t in teachers {
        if !seen.insert(t.attribute_type.as_str()) {
            return Err(Error::InvalidArgument(format!(
                "two teachers for attribute type `{}`",
                t.attribute_type
            )));
        }
        if t.backbone.input_size != teachers[0].backbone.input_size {
            return Err(Error::InvalidArgument("teachers disagree on input size".into()));
        }
    }
    Ok(())
}

/// `D`-dimensional student embedding of `image` for `attribute_type`.
pub fn student_embed(model: &StudentModel, image: &Image, attribute_type: &str) -> Result<EmbeddingVector> {
    let branch = model.branch(attribute_type)?;
    let feature = model.features(image)?;
    EmbeddingVector::new(attribute_type, project(&branch.projection, &feature))
}

/// A frozen teacher's target for one image: its embedding and certainty weight.
#[derive(Debug, Clone, PartialEq)]
pub struct DistillTarget {
    pub embedding: Vec<f64>,
    pub weight: DistillWeight,
}

/// Targets of every teacher for `image`, in teacher order.
pub fn distill_targets(teachers: &[&TeacherModel], image: &Image, beta: f64) -> Result<Vec<DistillTarget>> {
    teachers
        .iter()
        .map(|t| {
            let embedding = t.embed_raw(image)?;
            let weight = losses::distill_weight(&embedding, &t.dictionary, beta)?;
            Ok(DistillTarget { embedding, weight })
        })
        .collect()
}

struct SampleGrads {
    loss: f64,
    backbone: Vec<f32>,
    branches: Vec<Vec<f32>>,
}

fn sample_grads(model: &StudentModel, image: &Image, targets: &[DistillTarget]) -> Result<SampleGrads> {
    let trace = model.backbone.forward_trace(image)?;
    let mut loss = 0.0;
    let mut d_feat = vec![0.0f32; trace.feature.len()];
    let mut branches = Vec::with_capacity(model.branches.len());
    for (b, target) in model.branches.iter().zip(targets) {
        let e_s = project(&b.projection, &trace.feature);
        let g = losses::cosine_grad(&e_s, &target.embedding)?;
        let w = target.weight.beta_power;
        loss += w * (1.0 - g.value);
        let dy: Vec<f32> = g.grad_a.iter().map(|&v| (-w * v) as f32).collect();
        let mut grad = vec![0.0f32; b.projection.params.len()];
        let dx = b.projection.backward(&trace.feature, &dy, &mut grad);
        add(&mut d_feat, &dx);
        branches.push(grad);
    }
    let mut backbone = vec![0.0f32; model.backbone.n_params()];
    model.backbone.backward(&trace, &d_feat, &mut backbone);
    Ok(SampleGrads {
        loss,
        backbone,
        branches,
    })
}

/// Learning rate at `step`: linear warm-up by images seen, then step decay.
pub fn student_lr(config: &TrainConfig, step: usize) -> f64 {
    let epoch = step / config.steps_per_epoch().max(1);
    let base = config.decayed_lr(epoch);
    if config.warmup_images == 0 {
        return base;
    }
    let seen = (step + 1) * config.batch_size;
    base * (seen as f64 / config.warmup_images as f64).min(1.0)
}

/// Distills `teachers` into one student using the images of `pool`.
///
/// Labels in `pool` are ignored. Teachers are only read.
pub fn train_student(
    teachers: &[&TeacherModel],
    pool: &DatasetManifest,
    bank: &ImageBank,
    config: &TrainConfig,
    options: RunOptions,
    scorer: Option<EpochScorer<'_, StudentModel>>,
) -> Result<(StudentModel, LossTrace)> {
    config.validate()?;
    check_teachers(teachers)?;
    if pool.is_empty() {
        return Err(Error::EmptyData("the unlabeled pool is empty".into()));
    }
    let images = bank.for_manifest(pool)?;
    let targets = parallel::try_map(options.exec, &images, |img| distill_targets(teachers, img, config.beta))?;
    let mut model = StudentModel::init(teachers, config)?;

    let mut opt_backbone = Sgd::new(model.backbone.n_params(), config.momentum as f32);
    let mut opt_branches: Vec<Sgd> = model
        .branches
        .iter()
        .map(|b| Sgd::new(b.projection.params.len(), config.momentum as f32))
        .collect();
    let mut trace = LossTrace::default();
    let mut best: Option<(f64, StudentModel)> = None;
    let mut scorer = scorer;
    let steps = config.steps_per_epoch();
    let batch = config.batch_size as f32;

    for epoch in 0..config.epochs {
        for s in 0..steps {
            let step = epoch * steps + s;
            let lr = student_lr(config, step);
            let mut rng = rng::rng_for(config.seed, stream::STUDENT_BATCH, step as u64);
            let picks: Vec<usize> = (0..config.batch_size).map(|_| rng.gen_range(0..images.len())).collect();
            let per = parallel::map(options.exec, &picks, |&i| sample_grads(&model, &images[i], &targets[i]));

            let mut loss = 0.0;
            let mut g_backbone = vec![0.0f32; model.backbone.n_params()];
            let mut g_branches: Vec<Vec<f32>> = model
                .branches
                .iter()
                .map(|b| vec![0.0f32; b.projection.params.len()])
                .collect();
            for r in per {
                let r = r?;
                loss += r.loss;
                add(&mut g_backbone, &r.backbone);
                for (acc, g) in g_branches.iter_mut().zip(&r.branches) {
                    add(acc, g);
                }
            }
            loss /= config.batch_size as f64;
            if !loss.is_finite() {
                return Err(Error::NonFinite {
                    step,
                    message: format!("student epoch {epoch}: batch loss {loss} at lr {lr}"),
                });
            }
            g_backbone.iter_mut().for_each(|g| *g /= batch);
            opt_backbone.step(&mut model.backbone.params, &g_backbone, lr as f32);
            for ((b, opt), mut g) in model.branches.iter_mut().zip(&mut opt_branches).zip(g_branches) {
                g.iter_mut().for_each(|v| *v /= batch);
                opt.step(&mut b.projection.params, &g, lr as f32);
            }
            if model.backbone.params.iter().any(|p| !p.is_finite()) {
                return Err(Error::NonFinite {
                    step,
                    message: "student parameters became non-finite".into(),
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

/// Mean weighted distillation loss of `model` against `teachers` over `images`.
pub fn distillation_objective(
    model: &StudentModel,
    teachers: &[&TeacherModel],
    images: &[&Image],
    beta: f64,
) -> Result<f64> {
    if images.is_empty() {
        return Err(Error::EmptyData("no images".into()));
    }
    let mut total = 0.0;
    for img in images {
        let targets = distill_targets(teachers, img, beta)?;
        let feature = model.backbone.forward(img)?;
        for (b, t) in model.branches.iter().zip(&targets) {
            let e_s = project(&b.projection, &feature);
            total += t.weight.beta_power * (1.0 - losses::cos(&e_s, &t.embedding)?);
        }
    }
    Ok(total / images.len() as f64)
}
