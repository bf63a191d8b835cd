//! Experiment recipes: data, teachers, students and comparison tables.
//!
//! A [`Runner`] owns one in-memory workspace built from a [`RunConfigFile`]
//! and caches the trained teachers and the standard student, so several
//! plans can share them.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::config::RunConfigFile;
use crate::data::{Image, ImageBank};
use crate::error::{Error, Result};
use crate::evaluate::{evaluate_model, render_table, MetricsReport};
use crate::inference::{ConstantRanker, Ranker};
use crate::losses;
use crate::parallel::{self, Exec};
use crate::rng::{self, stream};
use crate::schema::{concat, save_manifest, split, DatasetManifest, ManifestKind};
use crate::student::{train_student, StudentModel};
use crate::synthdata::{corrupt_in_memory, generate_in_memory, CorruptionSampling, SynthConfig};
use crate::teacher::{train_teacher, LossTrace, RunOptions, TeacherModel, TrainConfig};

/// In-memory data for one run.
#[derive(Debug, Clone)]
pub struct Workspace {
    pub config: RunConfigFile,
    pub bank: ImageBank,
    pub train: DatasetManifest,
    pub val: DatasetManifest,
    pub test: DatasetManifest,
    /// Records whose labels the teachers train on.
    pub labeled: DatasetManifest,
    /// Unlabeled student pool.
    pub pool: DatasetManifest,
}

fn extra_synth(base: &SynthConfig, n: usize, prefix: &str, seed: u64) -> SynthConfig {
    SynthConfig {
        n_images: n,
        id_prefix: prefix.into(),
        seed,
        ..base.clone()
    }
}

fn add_images(bank: &mut ImageBank, images: Vec<(String, Image)>) {
    for (id, img) in images {
        bank.insert(id, img);
    }
}

fn subset(m: &DatasetManifest, records: &[crate::schema::ImageRecord]) -> Result<DatasetManifest> {
    DatasetManifest::new(m.schema.clone(), records.to_vec(), m.kind, m.base_dir.clone())
}

impl Workspace {
    pub fn build(config: &RunConfigFile) -> Result<Self> {
        config.validate()?;
        let synth = config.synth();
        let base = Path::new(".");
        let (all, images) = generate_in_memory(&synth, base)?;
        let mut bank = ImageBank::new();
        add_images(&mut bank, images);
        let (train, val, test) = split(&all, config.split, config.seed)?;
        let labeled = subset(&train, &train.records[..config.labeled_count])?;

        let student_images = if config.include_teacher_images {
            train.clone()
        } else {
            subset(&train, &train.records[config.labeled_count..])?
        };
        let mut parts = vec![student_images.to_unlabeled()];
        if config.extra_unlabeled > 0 {
            let seed = rng::derive(config.seed, stream::EXTRA_DATA, 0);
            let (extra, images) = generate_in_memory(&extra_synth(&synth, config.extra_unlabeled, "u", seed), base)?;
            add_images(&mut bank, images);
            parts.push(extra.to_unlabeled());
        }
        let refs: Vec<&DatasetManifest> = parts.iter().collect();
        let pool = concat(&refs, ManifestKind::Unlabeled)?;
        if pool.is_empty() {
            return Err(Error::EmptyData("the student pool is empty".into()));
        }
        Ok(Self {
            config: config.clone(),
            bank,
            train,
            val,
            test,
            labeled,
            pool,
        })
    }

    pub fn types(&self) -> Vec<String> {
        self.train.schema.type_names()
    }

    /// Writes every image under `dir/images/` and the manifests
    /// `train`, `val`, `test`, `labeled` and `unlabeled` (`.jsonl`) into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let img_dir = dir.join("images");
        fs::create_dir_all(&img_dir).map_err(|e| Error::io(&img_dir, e))?;
        let mut seen = std::collections::HashSet::new();
        let records: Vec<_> = [&self.train, &self.val, &self.test, &self.pool]
            .into_iter()
            .flat_map(|m| &m.records)
            .filter(|r| seen.insert(r.id.as_str()))
            .collect();
        parallel::try_map(Exec::default(), &records, |r| {
            self.bank.get(&r.id)?.save_png(&dir.join(&r.image_path))
        })?;
        for (name, m) in self.manifests() {
            save_manifest(m, &dir.join(format!("{name}.jsonl")))?;
        }
        Ok(())
    }

    pub fn manifests(&self) -> [(&'static str, &DatasetManifest); 5] {
        [
            ("train", &self.train),
            ("val", &self.val),
            ("test", &self.test),
            ("labeled", &self.labeled),
            ("unlabeled", &self.pool),
        ]
    }
}

#[derive(Debug, Clone)]
pub struct TeacherRun {
    pub model: TeacherModel,
    pub trace: LossTrace,
}

#[derive(Debug, Clone)]
pub struct StudentRun {
    pub model: StudentModel,
    pub trace: LossTrace,
}

/// Trains and evaluates models over a [`Workspace`], caching shared stages.
#[derive(Debug)]
pub struct Runner {
    pub ws: Workspace,
    pub exec: Exec,
    teachers: Mutex<Option<Arc<Vec<TeacherRun>>>>,
    student: Mutex<Option<Arc<StudentRun>>>,
}

impl Runner {
    pub fn new(config: &RunConfigFile, exec: Exec) -> Result<Self> {
        Ok(Self {
            ws: Workspace::build(config)?,
            exec,
            teachers: Mutex::new(None),
            student: Mutex::new(None),
        })
    }

    fn config(&self) -> &RunConfigFile {
        &self.ws.config
    }

    pub fn evaluate<R: Ranker + ?Sized>(
        &self,
        model: &R,
        manifest: &DatasetManifest,
        bank: &ImageBank,
    ) -> Result<MetricsReport> {
        Ok(evaluate_model(model, manifest, bank, &self.config().eval.ks, self.exec)?.0)
    }

    /// Trains one teacher with the given config, selecting by validation F1@1 if enabled.
    pub fn train_teacher_with(&self, attribute_type: &str, config: &TrainConfig) -> Result<TeacherRun> {
        let options = RunOptions { exec: self.exec };
        let (model, trace) = if self.config().eval.select_best {
            let mut scorer = |_: usize, m: &TeacherModel| -> Result<Option<f64>> {
                let r = evaluate_model(m, &self.ws.val, &self.ws.bank, &[1], self.exec)?.0;
                Ok(Some(r.f1(attribute_type, 1)?))
            };
            train_teacher(&self.ws.labeled, &self.ws.bank, attribute_type, config, options, Some(&mut scorer))?
        } else {
            train_teacher(&self.ws.labeled, &self.ws.bank, attribute_type, config, options, None)?
        };
        Ok(TeacherRun { model, trace })
    }

    /// One teacher per attribute type, trained once.
    pub fn teachers(&self) -> Result<Arc<Vec<TeacherRun>>> {
        let mut guard = self.teachers.lock().expect("teacher cache poisoned");
        if let Some(t) = guard.as_ref() {
            return Ok(t.clone());
        }
        let cfg = self.config().teacher_config();
        let runs = self
            .ws
            .types()
            .iter()
            .map(|t| self.train_teacher_with(t, &cfg))
            .collect::<Result<Vec<_>>>()?;
        let runs = Arc::new(runs);
        *guard = Some(runs.clone());
        Ok(runs)
    }

    pub fn train_student_with(
        &self,
        teachers: &[&TeacherModel],
        pool: &DatasetManifest,
        bank: &ImageBank,
        config: &TrainConfig,
    ) -> Result<StudentRun> {
        let options = RunOptions { exec: self.exec };
        let (model, trace) = if self.config().eval.select_best {
            let mut scorer = |_: usize, m: &StudentModel| -> Result<Option<f64>> {
                let r = evaluate_model(m, &self.ws.val, &self.ws.bank, &[1], self.exec)?.0;
                Ok(Some(r.overall_f1(1)?))
            };
            train_student(teachers, pool, bank, config, options, Some(&mut scorer))?
        } else {
            train_student(teachers, pool, bank, config, options, None)?
        };
        Ok(StudentRun { model, trace })
    }

    /// The multi-teacher student on the standard pool, trained once.
    pub fn student(&self) -> Result<Arc<StudentRun>> {
        let teachers = self.teachers()?;
        let mut guard = self.student.lock().expect("student cache poisoned");
        if let Some(s) = guard.as_ref() {
            return Ok(s.clone());
        }
        let refs: Vec<&TeacherModel> = teachers.iter().map(|t| &t.model).collect();
        let run = Arc::new(self.train_student_with(
            &refs,
            &self.ws.pool,
            &self.ws.bank,
            &self.config().student_config(),
        )?);
        *guard = Some(run.clone());
        Ok(run)
    }

    /// Ranks classes by their frequency among the teachers' labeled records.
    pub fn constant_baseline(&self) -> Result<ConstantRanker> {
        let types = self
            .ws
            .types()
            .into_iter()
            .map(|t| {
                let classes = self.ws.labeled.schema.get(&t)?.classes.clone();
                let counts = self.ws.labeled.class_counts(&t)?;
                Ok((t, classes, counts))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ConstantRanker::from_counts(types))
    }

    /// Per-type metrics of every teacher on `manifest`, merged into one report.
    pub fn teacher_report(&self, manifest: &DatasetManifest, bank: &ImageBank) -> Result<MetricsReport> {
        let teachers = self.teachers()?;
        let mut merged: Option<MetricsReport> = None;
        for t in teachers.iter() {
            let r = self.evaluate(&t.model, manifest, bank)?;
            match merged.as_mut() {
                None => merged = Some(r),
                Some(m) => m.types.extend(r.types),
            }
        }
        let mut m = merged.ok_or_else(|| Error::EmptyData("no teachers".into()))?;
        recompute_overall(&mut m);
        Ok(m)
    }

    /// Mean cosine between student and teacher embeddings per type over `manifest`.
    pub fn fidelity(&self, student: &StudentModel, manifest: &DatasetManifest) -> Result<Vec<(String, f64)>> {
        let teachers = self.teachers()?;
        let images: Vec<&Image> = manifest
            .records
            .iter()
            .map(|r| self.ws.bank.get(&r.id).map(|a| a.as_ref()))
            .collect::<Result<_>>()?;
        let per = parallel::try_map(self.exec, &images, |img| {
            let e_s = student.embed_all(img)?;
            teachers
                .iter()
                .map(|t| {
                    let s = e_s
                        .iter()
                        .find(|e| e.attribute_type == t.model.attribute_type)
                        .ok_or_else(|| Error::UnknownType(t.model.attribute_type.clone()))?;
                    losses::cos(&s.values, &t.model.embed_raw(img)?)
                })
                .collect::<Result<Vec<f64>>>()
        })?;
        Ok(teachers
            .iter()
            .enumerate()
            .map(|(k, t)| {
                let mean = per.iter().map(|v| v[k]).sum::<f64>() / per.len().max(1) as f64;
                (t.model.attribute_type.clone(), mean)
            })
            .collect())
    }

    /// Prefix of the standard pool with `n` records.
    pub fn pool_prefix(&self, n: usize) -> Result<DatasetManifest> {
        if n == 0 || n > self.ws.pool.len() {
            return Err(Error::Config(format!(
                "unlabeled size {n} outside 1..={} (the pool size)",
                self.ws.pool.len()
            )));
        }
        subset(&self.ws.pool, &self.ws.pool.records[..n])
    }

    /// Test set with one corrupted copy per record, labels kept.
    pub fn corrupted_test(&self) -> Result<(DatasetManifest, ImageBank)> {
        let specs = self.config().robustness.specs()?;
        let seed = rng::derive(self.config().seed, stream::EXTRA_DATA, 2);
        let (m, images) = corrupt_in_memory(
            &self.ws.test,
            &self.ws.bank,
            &specs,
            CorruptionSampling::OnePerRecord,
            seed,
            Path::new("."),
        )?;
        let mut bank = ImageBank::new();
        add_images(&mut bank, images);
        Ok((m, bank))
    }

    /// Standard pool plus `robustness.corrupted_pool` corrupted copies of it.
    pub fn mixed_pool(&self) -> Result<(DatasetManifest, ImageBank)> {
        let specs = self.config().robustness.specs()?;
        let seed = rng::derive(self.config().seed, stream::EXTRA_DATA, 3);
        let (corrupted, images) = corrupt_in_memory(
            &self.ws.pool,
            &self.ws.bank,
            &specs,
            CorruptionSampling::Uniform(self.config().robustness.corrupted_pool),
            seed,
            Path::new("."),
        )?;
        let mut bank = self.ws.bank.clone();
        add_images(&mut bank, images);
        Ok((concat(&[&self.ws.pool, &corrupted], ManifestKind::Unlabeled)?, bank))
    }

    /// Labeled second-domain data split in half: unlabeled pool, test set.
    pub fn second_domain(&self) -> Result<(DatasetManifest, DatasetManifest, ImageBank)> {
        let cd = &self.config().cross_domain;
        let seed = rng::derive(self.config().seed, stream::EXTRA_DATA, 1);
        let synth = SynthConfig {
            style: cd.style,
            domain_tag: Some("target".into()),
            ..extra_synth(&self.config().synth(), cd.n_images, "x", seed)
        };
        let (m, images) = generate_in_memory(&synth, Path::new("."))?;
        let mut bank = self.ws.bank.clone();
        add_images(&mut bank, images);
        let half = m.len() / 2;
        let pool = subset(&m, &m.records[..half])?.to_unlabeled();
        let test = subset(&m, &m.records[half..])?;
        Ok((pool, test, bank))
    }

    /// Runs `plan`, appending rows to `table` as they complete.
    pub fn run_plan(&self, plan: Plan, table: &mut Table) -> Result<Vec<(String, MetricsReport)>> {
        match plan {
            Plan::TeacherVsStudent => self.teacher_vs_student(table),
            Plan::SingleVsMulti => self.single_vs_multi(table),
            Plan::CrossDomain => self.cross_domain(table),
            Plan::Robustness => self.robustness(table),
            Plan::UnlabeledSweep => self.unlabeled_sweep(table),
        }
    }

    fn teacher_vs_student(&self, table: &mut Table) -> Result<Vec<(String, MetricsReport)>> {
        table.columns = cols(&["T F1@1", "S F1@1", "Δ F1@1", "T R@3", "S R@3", "Δ R@3"]);
        let t = self.teacher_report(&self.ws.test, &self.ws.bank)?;
        let student = self.student()?;
        let s = self.evaluate(&student.model, &self.ws.test, &self.ws.bank)?;
        for name in self.ws.types() {
            let (tf, sf) = (t.f1(&name, 1)?, s.f1(&name, 1)?);
            let (tr, sr) = (t.recall(&name, 3)?, s.recall(&name, 3)?);
            table.push(&name, vec![tf, sf, sf - tf, tr, sr, sr - tr]);
        }
        let (tf, sf) = (t.overall_f1(1)?, s.overall_f1(1)?);
        let (tr, sr) = (t.overall_recall(3)?, s.overall_recall(3)?);
        table.push("overall", vec![tf, sf, sf - tf, tr, sr, sr - tr]);
        Ok(vec![("teachers".into(), t), ("student".into(), s)])
    }

    fn single_vs_multi(&self, table: &mut Table) -> Result<Vec<(String, MetricsReport)>> {
        table.columns = cols(&["S-Single R@3", "S-Multi R@3", "Δ R@3", "S-Single F1@1", "S-Multi F1@1", "Δ F1@1"]);
        let teachers = self.teachers()?;
        let multi = self.evaluate(&self.student()?.model, &self.ws.test, &self.ws.bank)?;
        let mut out = vec![("multi".to_string(), multi.clone())];
        for t in teachers.iter() {
            let name = &t.model.attribute_type;
            let run = self.train_student_with(
                &[&t.model],
                &self.ws.pool,
                &self.ws.bank,
                &self.config().student_config(),
            )?;
            let single = self.evaluate(&run.model, &self.ws.test, &self.ws.bank)?;
            let (sr, mr) = (single.recall(name, 3)?, multi.recall(name, 3)?);
            let (sf, mf) = (single.f1(name, 1)?, multi.f1(name, 1)?);
            table.push(name, vec![sr, mr, mr - sr, sf, mf, mf - sf]);
            out.push((format!("single-{name}"), single));
        }
        Ok(out)
    }

    fn cross_domain(&self, table: &mut Table) -> Result<Vec<(String, MetricsReport)>> {
        table.columns = cols(&["source R@3", "target R@3", "Δ target R@3"]);
        let (target_pool, target_test, bank) = self.second_domain()?;
        let t_src = self.teacher_report(&self.ws.test, &self.ws.bank)?;
        let t_tgt = self.teacher_report(&target_test, &bank)?;
        let base = self.student()?;
        let s_src = self.evaluate(&base.model, &self.ws.test, &self.ws.bank)?;
        let s_tgt = self.evaluate(&base.model, &target_test, &bank)?;
        let baseline = s_tgt.overall_recall(3)?;
        table.push(
            "teachers",
            vec![t_src.overall_recall(3)?, t_tgt.overall_recall(3)?, t_tgt.overall_recall(3)? - baseline],
        );
        table.push("student (source pool)", vec![s_src.overall_recall(3)?, baseline, 0.0]);

        let teachers = self.teachers()?;
        let refs: Vec<&TeacherModel> = teachers.iter().map(|t| &t.model).collect();
        let mixed_pool = concat(&[&self.ws.pool, &target_pool], ManifestKind::Unlabeled)?;
        let mixed = self.train_student_with(&refs, &mixed_pool, &bank, &self.config().student_config())?;
        let m_src = self.evaluate(&mixed.model, &self.ws.test, &self.ws.bank)?;
        let m_tgt = self.evaluate(&mixed.model, &target_test, &bank)?;
        table.push(
            "student (source+target pool)",
            vec![m_src.overall_recall(3)?, m_tgt.overall_recall(3)?, m_tgt.overall_recall(3)? - baseline],
        );
        Ok(vec![
            ("teachers-source".into(), t_src),
            ("teachers-target".into(), t_tgt),
            ("student-source".into(), s_src),
            ("student-target".into(), s_tgt),
            ("mixed-source".into(), m_src),
            ("mixed-target".into(), m_tgt),
        ])
    }

    fn robustness(&self, table: &mut Table) -> Result<Vec<(String, MetricsReport)>> {
        table.columns = cols(&["clean R@3", "corrupted R@3", "Δ corrupted R@3"]);
        let (c_test, c_bank) = self.corrupted_test()?;
        let clean = self.student()?;
        let cc = self.evaluate(&clean.model, &self.ws.test, &self.ws.bank)?;
        let cx = self.evaluate(&clean.model, &c_test, &c_bank)?;
        let base = cx.overall_recall(3)?;
        table.push("clean-only student", vec![cc.overall_recall(3)?, base, 0.0]);

        let teachers = self.teachers()?;
        let refs: Vec<&TeacherModel> = teachers.iter().map(|t| &t.model).collect();
        let (pool, bank) = self.mixed_pool()?;
        let mixed = self.train_student_with(&refs, &pool, &bank, &self.config().student_config())?;
        let mc = self.evaluate(&mixed.model, &self.ws.test, &self.ws.bank)?;
        let mx = self.evaluate(&mixed.model, &c_test, &c_bank)?;
        table.push(
            "mixed student",
            vec![mc.overall_recall(3)?, mx.overall_recall(3)?, mx.overall_recall(3)? - base],
        );
        Ok(vec![
            ("clean-only/clean".into(), cc),
            ("clean-only/corrupted".into(), cx),
            ("mixed/clean".into(), mc),
            ("mixed/corrupted".into(), mx),
        ])
    }

    fn unlabeled_sweep(&self, table: &mut Table) -> Result<Vec<(String, MetricsReport)>> {
        table.columns = cols(&["unlabeled", "R@3", "mAP", "Δ R@3"]);
        let sizes = self.config().sweep.unlabeled_sizes.clone();
        let full = *sizes.iter().max().expect("validated non-empty");
        let t = self.teacher_report(&self.ws.test, &self.ws.bank)?;
        let teachers = self.teachers()?;
        let refs: Vec<&TeacherModel> = teachers.iter().map(|t| &t.model).collect();
        let mut runs = Vec::new();
        for &n in &sizes {
            let pool = self.pool_prefix(n)?;
            let run = self.train_student_with(&refs, &pool, &self.ws.bank, &self.config().student_config())?;
            runs.push((n, self.evaluate(&run.model, &self.ws.test, &self.ws.bank)?));
        }
        let full_r3 = runs
            .iter()
            .find(|(n, _)| *n == full)
            .map(|(_, r)| r.overall_recall(3))
            .transpose()?
            .unwrap_or(f64::NAN);
        table.push(
            "teachers",
            vec![f64::NAN, t.overall_recall(3)?, t.overall.map, t.overall_recall(3)? - full_r3],
        );
        let mut out = vec![("teachers".to_string(), t)];
        for (n, r) in runs {
            table.push(
                &format!("student n={n}"),
                vec![n as f64, r.overall_recall(3)?, r.overall.map, r.overall_recall(3)? - full_r3],
            );
            out.push((format!("student-{n}"), r));
        }
        Ok(out)
    }
}

fn recompute_overall(m: &mut MetricsReport) {
    let n = m.types.len() as f64;
    for i in 0..m.ks.len() {
        m.overall.recall[i] = m.types.iter().map(|t| t.recall[i]).sum::<f64>() / n;
        m.overall.precision[i] = m.types.iter().map(|t| t.precision[i]).sum::<f64>() / n;
        m.overall.f1[i] = m.types.iter().map(|t| t.f1[i]).sum::<f64>() / n;
    }
    m.overall.map = m.types.iter().map(|t| t.map).sum::<f64>() / n;
}

fn cols(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Plan {
    TeacherVsStudent,
    SingleVsMulti,
    CrossDomain,
    Robustness,
    UnlabeledSweep,
}

impl Plan {
    pub const ALL: [Plan; 5] = [
        Plan::TeacherVsStudent,
        Plan::SingleVsMulti,
        Plan::CrossDomain,
        Plan::Robustness,
        Plan::UnlabeledSweep,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Plan::TeacherVsStudent => "teacher_vs_student",
            Plan::SingleVsMulti => "single_vs_multi",
            Plan::CrossDomain => "cross_domain",
            Plan::Robustness => "robustness",
            Plan::UnlabeledSweep => "unlabeled_sweep",
        }
    }
}

impl FromStr for Plan {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Plan::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown experiment plan `{s}`")))
    }
}

/// A comparison table. Values are fractions; text output shows percentages.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub title: String,
    pub columns: Vec<String>,
    pub rows: Vec<(String, Vec<f64>)>,
}

impl Table {
    pub fn new(title: impl Into<String>) -> Self {
        Self {
            title: title.into(),
            ..Self::default()
        }
    }

    pub fn push(&mut self, label: &str, values: Vec<f64>) {
        self.rows.push((label.to_string(), values));
    }

    pub fn value(&self, row: &str, column: &str) -> Option<f64> {
        let c = self.columns.iter().position(|x| x == column)?;
        self.rows.iter().find(|(r, _)| r == row).map(|(_, v)| v[c])
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("row");
        for c in &self.columns {
            write!(s, ",{c}").unwrap();
        }
        s.push('\n');
        for (label, values) in &self.rows {
            s.push_str(label);
            for v in values {
                if v.is_nan() {
                    s.push(',');
                } else {
                    write!(s, ",{v}").unwrap();
                }
            }
            s.push('\n');
        }
        s
    }

    pub fn to_text(&self) -> String {
        let mut rows = vec![std::iter::once(String::new()).chain(self.columns.iter().cloned()).collect()];
        for (label, values) in &self.rows {
            let mut r = vec![label.clone()];
            for (c, v) in self.columns.iter().zip(values) {
                r.push(if v.is_nan() {
                    "-".into()
                } else if c == "unlabeled" {
                    format!("{v}")
                } else if c.starts_with('Δ') {
                    format!("{:+.2}", 100.0 * v)
                } else {
                    format!("{:.2}", 100.0 * v)
                });
            }
            rows.push(r);
        }
        format!("{}\n\n{}", self.title, render_table(&rows))
    }
}

/// Result of [`run_experiment`].
#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub plan: Plan,
    pub table: Table,
    pub reports: Vec<(String, MetricsReport)>,
}

/// Runs `plan` and writes `<plan>.csv`, `<plan>.txt` and per-model metrics
/// under `out_dir`. On failure the rows finished so far are still written,
/// together with a `FAILED` marker file holding the error.
pub fn run_experiment(runner: &Runner, plan: Plan, out_dir: &Path) -> Result<ExperimentReport> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut table = Table::new(format!("{} (seed {})", plan.name(), runner.ws.config.seed));
    let result = runner.run_plan(plan, &mut table);
    let write = |name: String, body: String| -> Result<()> {
        let p = out_dir.join(name);
        fs::write(&p, body).map_err(|e| Error::io(&p, e))
    };
    write(format!("{}.csv", plan.name()), table.to_csv())?;
    write(format!("{}.txt", plan.name()), table.to_text())?;
    match result {
        Ok(reports) => {
            let metrics = out_dir.join("metrics");
            fs::create_dir_all(&metrics).map_err(|e| Error::io(&metrics, e))?;
            for (name, r) in &reports {
                let file = name.replace('/', "_");
                let p = metrics.join(format!("{file}.csv"));
                fs::write(&p, r.to_csv()).map_err(|e| Error::io(&p, e))?;
            }
            Ok(ExperimentReport { plan, table, reports })
        }
        Err(e) => {
            write("FAILED".into(), format!("{e}\n"))?;
            Err(e)
        }
    }
}

/// Hyperparameters that [`run_sweep`] can vary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    Gamma,
    Beta,
    Dim,
    Lr,
}

impl FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gamma" => Ok(Self::Gamma),
            "beta" => Ok(Self::Beta),
            "dim" => Ok(Self::Dim),
            "lr" => Ok(Self::Lr),
            _ => Err(Error::Config(format!("unknown sweep parameter `{s}`"))),
        }
    }
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            Self::Gamma => "gamma",
            Self::Beta => "beta",
            Self::Dim => "dim",
            Self::Lr => "lr",
        }
    }

    fn baseline(self, config: &RunConfigFile) -> f64 {
        match self {
            Self::Gamma | Self::Beta => 0.0,
            Self::Dim => config.teacher.dim as f64,
            Self::Lr => config.teacher.learning_rate,
        }
    }
}

/// Retrains for each value and reports R@3 and F1@1 with deltas against the
/// baseline (`gamma = 0`, `beta = 0`, or the configured `dim` / `lr`). The
/// baseline is trained too if it is not among `values`.
///
/// `gamma`, `dim` and `lr` retrain the `sweep.attribute_type` teacher;
/// `beta` retrains the multi-teacher student with the standard teachers.
pub fn run_sweep(runner: &Runner, param: SweepParam, values: &[f64], out_dir: &Path) -> Result<Table> {
    if values.is_empty() {
        return Err(Error::Config("sweep needs at least one value".into()));
    }
    let cfg = &runner.ws.config;
    let baseline = param.baseline(cfg);
    let mut all: Vec<(f64, bool)> = values.iter().map(|&v| (v, v == baseline)).collect();
    if !values.contains(&baseline) {
        all.insert(0, (baseline, true));
    }
    let type_name = cfg.sweep.attribute_type.clone();
    let mut measured = Vec::new();
    for &(v, _) in &all {
        let report = match param {
            SweepParam::Beta => {
                let teachers = runner.teachers()?;
                let refs: Vec<&TeacherModel> = teachers.iter().map(|t| &t.model).collect();
                let sc = TrainConfig {
                    beta: v,
                    ..cfg.student_config()
                };
                let run = runner.train_student_with(&refs, &runner.ws.pool, &runner.ws.bank, &sc)?;
                runner.evaluate(&run.model, &runner.ws.test, &runner.ws.bank)?
            }
            _ => {
                let mut tc = cfg.teacher_config();
                match param {
                    SweepParam::Gamma => tc.gamma = v,
                    SweepParam::Dim => {
                        if v < 2.0 || v.fract() != 0.0 {
                            return Err(Error::Config(format!("dim must be an integer >= 2, got {v}")));
                        }
                        tc.dim = v as usize
                    }
                    SweepParam::Lr => tc.learning_rate = v,
                    SweepParam::Beta => unreachable!(),
                }
                tc.validate()?;
                let run = runner.train_teacher_with(&type_name, &tc)?;
                runner.evaluate(&run.model, &runner.ws.test, &runner.ws.bank)?
            }
        };
        let (r3, f1) = match param {
            SweepParam::Beta => (report.overall_recall(3)?, report.overall_f1(1)?),
            _ => (report.recall(&type_name, 3)?, report.f1(&type_name, 1)?),
        };
        measured.push((r3, f1));
    }
    let base_idx = all.iter().position(|(_, b)| *b).expect("baseline present");
    let (br3, bf1) = measured[base_idx];
    let scope = if param == SweepParam::Beta { "overall".to_string() } else { type_name };
    let mut table = Table::new(format!("{} sweep, {scope} (baseline {} = {baseline})", param.name(), param.name()));
    table.columns = cols(&[param.name(), "R@3", "Δ R@3", "F1@1", "Δ F1@1"]);
    for ((v, is_base), (r3, f1)) in all.iter().zip(&measured) {
        let label = if *is_base { format!("{v} (baseline)") } else { format!("{v}") };
        table.push(&label, vec![*v, *r3, r3 - br3, *f1, f1 - bf1]);
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let csv = out_dir.join(format!("sweep_{}.csv", param.name()));
    fs::write(&csv, table.to_csv()).map_err(|e| Error::io(&csv, e))?;
    let txt = out_dir.join(format!("sweep_{}.txt", param.name()));
    fs::write(&txt, table.to_text()).map_err(|e| Error::io(&txt, e))?;
    Ok(table)
}
