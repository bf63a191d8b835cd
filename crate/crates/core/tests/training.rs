//! Behavioural checks on the standard desk-scale run (seed 0). Slow: the
//! teachers and the student are trained once and shared by every test.

use std::sync::OnceLock;

use rand::Rng;

use mtss::config::RunConfigFile;
use mtss::data::Image;
use mtss::embeddings::{cosine, nearest_label, EmbeddingVector};
use mtss::experiment::{Plan, Runner, Table};
use mtss::parallel::Exec;
use mtss::rng::rng_for;
use mtss::student::distill_targets;
use mtss::teacher::{teacher_embed, TeacherModel};

fn runner() -> &'static Runner {
    static RUNNER: OnceLock<Runner> = OnceLock::new();
    RUNNER.get_or_init(|| Runner::new(&RunConfigFile::standard(), Exec::default()).unwrap())
}

fn teacher(name: &str) -> TeacherModel {
    let teachers = runner().teachers().unwrap();
    teachers.iter().find(|t| t.model.attribute_type == name).unwrap().model.clone()
}

fn noise_image(size: usize) -> Image {
    let mut r = rng_for(99, 0, 0);
    let data = (0..size * size * 3).map(|_| r.gen::<f32>()).collect();
    Image::new(size, size, data).unwrap()
}

#[test]
fn teacher_loss_trends_down_early() {
    for t in runner().teachers().unwrap().iter() {
        let means = t.trace.epoch_means();
        let rises = means[..5].windows(2).filter(|w| w[1] > w[0]).count();
        assert!(rises <= 1, "{}: {:?}", t.model.attribute_type, &means[..5]);
    }
}

#[test]
fn color_teacher_labels_most_validation_images_per_class() {
    let ws = &runner().ws;
    let t = teacher("color");
    for (i, class) in t.dictionary.classes.iter().enumerate() {
        let recs: Vec<_> = ws
            .val
            .records
            .iter()
            .filter(|r| r.labels_for("color").is_some_and(|s| s.contains(class)))
            .collect();
        if recs.is_empty() {
            continue;
        }
        let hits = recs
            .iter()
            .filter(|r| {
                let e = teacher_embed(&t, ws.bank.get(&r.id).unwrap()).unwrap();
                nearest_label(&e, &t.dictionary).unwrap().index == i
            })
            .count();
        assert!(hits as f64 >= 0.8 * recs.len() as f64, "{class}: {hits}/{}", recs.len());
    }
}

#[test]
fn dictionary_rows_separate() {
    let ws = &runner().ws;
    for run in runner().teachers().unwrap().iter() {
        let t = &run.model;
        let d = &t.dictionary;
        let n = d.n_classes();
        let mut between = 0.0;
        for a in 0..n {
            for b in a + 1..n {
                between += cosine(d.row(a), d.row(b)).unwrap();
            }
        }
        between /= (n * (n - 1) / 2) as f64;

        let (mut within, mut count) = (0.0, 0usize);
        for r in &ws.val.records {
            let Some(classes) = r.labels_for(&t.attribute_type) else { continue };
            let e = t.embed_raw(ws.bank.get(&r.id).unwrap()).unwrap();
            for c in classes {
                within += cosine(d.row(d.class_index(c).unwrap()), &e).unwrap();
                count += 1;
            }
        }
        within /= count as f64;
        assert!(between < within, "{}: rows {between:.3} vs own class {within:.3}", t.attribute_type);
    }
}

#[test]
fn distillation_loss_falls() {
    let s = runner().student().unwrap();
    let means = s.trace.epoch_means();
    assert!(means.last().unwrap() < &means[0], "{means:?}");
}

#[test]
fn noise_image_gets_low_certainty() {
    let ws = &runner().ws;
    let teachers = runner().teachers().unwrap();
    let refs: Vec<&TeacherModel> = teachers.iter().map(|t| &t.model).collect();
    let beta = ws.config.student.beta;
    let size = ws.config.data.image_size;
    let mut batch: Vec<Image> = ws.test.records[..31].iter().map(|r| (**ws.bank.get(&r.id).unwrap()).clone()).collect();
    batch.push(noise_image(size));
    let targets: Vec<_> = batch.iter().map(|img| distill_targets(&refs, img, beta).unwrap()).collect();
    let mut lines = Vec::new();
    let mut failed = false;
    for (k, t) in refs.iter().enumerate() {
        let mut w: Vec<f64> = targets.iter().map(|row| row[k].weight.beta_power).collect();
        let outlier = w[31];
        w.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = 0.5 * (w[15] + w[16]);
        failed |= outlier >= median;
        lines.push(format!("{}: outlier {outlier:.3}, median {median:.3}", t.attribute_type));
    }
    assert!(!failed, "{}", lines.join("\n"));
}

#[test]
fn multi_teacher_student_keeps_up_with_single_teacher_students() {
    let mut table = Table::new("single vs multi");
    runner().run_plan(Plan::SingleVsMulti, &mut table).unwrap();
    eprintln!("{}", table.to_text());
    let ok = table.rows.iter().filter(|(name, _)| table.value(name, "Δ R@3").unwrap() >= -0.005).count();
    assert!(ok >= 3, "{}", table.to_text());
}

#[test]
fn embeddings_are_finite() {
    let s = runner().student().unwrap();
    let img = runner().ws.bank.get(&runner().ws.test.records[0].id).unwrap();
    for e in s.model.embed_all(img).unwrap() {
        let e: EmbeddingVector = e;
        assert!(e.values.iter().all(|v| v.is_finite()));
    }
}
