//! Acceptance checks. Prints one `PASS` or `FAIL` line per criterion and
//! exits non-zero if any criterion fails.
//!
//! The training criteria run the standard desk-scale config and take tens of
//! minutes. `cargo test --test acceptance -- quick` skips them.

mod common;

use std::collections::BTreeSet;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::Rng;

use common::*;
use mtss::config::RunConfigFile;
use mtss::embeddings::{EmbeddingVector, LabelDictionary};
use mtss::evaluate::{evaluate_model, f1_at_k, precision_at_k, recall_at_k, MetricsReport};
use mtss::experiment::{Plan, Runner, Table};
use mtss::losses::{
    distillation_grad, distillation_loss, focal_ranking_grad, focal_ranking_loss, pairwise_hinge_grad,
    pairwise_hinge_loss, weighted_distillation_grad, weighted_distillation_loss,
};
use mtss::parallel::Exec;

const DIM: usize = 8;

struct Outcome {
    name: &'static str,
    pass: bool,
    detail: String,
}

fn report(o: &Outcome) {
    println!("{} {}: {}", if o.pass { "PASS" } else { "FAIL" }, o.name, o.detail);
}

fn ev(t: &str, v: &[f64]) -> EmbeddingVector {
    EmbeddingVector::new(t, v.to_vec()).unwrap()
}

fn dictionary(t: &str, rows: &[Vec<f64>]) -> LabelDictionary {
    LabelDictionary {
        attribute_type: t.into(),
        classes: (0..rows.len()).map(|i| format!("c{i}")).collect(),
        dim: rows[0].len(),
        matrix: rows.concat(),
    }
}

fn type_name(k: usize) -> String {
    format!("t{k}")
}

// ---------------------------------------------------------------- losses

fn loss_oracle() -> Outcome {
    let start = Instant::now();
    let mut r = rng(11);
    let mut worst: f64 = 0.0;
    let mut track = |a: f64, b: f64| worst = worst.max((a - b).abs());

    for _ in 0..100 {
        let (d, p, n) = (gaussian_vec(&mut r, DIM), gaussian_vec(&mut r, DIM), gaussian_vec(&mut r, DIM));
        track(pairwise_hinge_loss(&ev("a", &d), &ev("a", &p), &ev("a", &n)).unwrap(), oracle_hinge(&d, &p, &n));
    }
    for _ in 0..100 {
        let (d, p, n) = (gaussian_vec(&mut r, DIM), gaussian_vec(&mut r, DIM), gaussian_vec(&mut r, DIM));
        let gamma = r.gen_range(0.0..3.0);
        let got = focal_ranking_loss(&ev("a", &d), &ev("a", &p), &ev("a", &n), gamma).unwrap().loss;
        track(got, oracle_focal(&d, &p, &n, gamma));
    }
    for _ in 0..100 {
        let kappa = r.gen_range(1..=4);
        let pairs: Vec<(Vec<f64>, Vec<f64>)> =
            (0..kappa).map(|_| (gaussian_vec(&mut r, DIM), gaussian_vec(&mut r, DIM))).collect();
        let evs: Vec<_> = pairs.iter().map(|(s, t)| (ev("a", s), ev("a", t))).collect();
        track(distillation_loss(&evs).unwrap(), oracle_distill(&pairs));
    }
    for _ in 0..100 {
        let kappa = r.gen_range(1..=4);
        let beta = r.gen_range(0.0..3.0);
        let pairs: Vec<(Vec<f64>, Vec<f64>)> =
            (0..kappa).map(|_| (gaussian_vec(&mut r, DIM), gaussian_vec(&mut r, DIM))).collect();
        let rows: Vec<Vec<Vec<f64>>> =
            (0..kappa).map(|_| (0..4).map(|_| gaussian_vec(&mut r, DIM)).collect()).collect();
        let evs: Vec<_> = pairs
            .iter()
            .enumerate()
            .map(|(k, (s, t))| (ev(&type_name(k), s), ev(&type_name(k), t)))
            .collect();
        let dicts: Vec<_> = rows.iter().enumerate().map(|(k, r)| dictionary(&type_name(k), r)).collect();
        track(weighted_distillation_loss(&evs, &dicts, beta).unwrap(), oracle_weighted(&pairs, &rows, beta));
    }

    // Worked values: cosines 0.8 / 0.3 with gamma 1, and weight 0.8 on a 0.5 gap.
    let d = [1.0, 0.0, 0.0];
    let at = |c: f64, axis: usize| {
        let mut v = [0.0; 3];
        v[0] = c;
        v[axis] = (1.0 - c * c).sqrt();
        v
    };
    let focal = focal_ranking_loss(&ev("a", &d), &ev("a", &at(0.8, 1)), &ev("a", &at(0.3, 2)), 1.0)
        .unwrap()
        .loss;
    let worked_focal = (focal - 0.07192).abs() < 1e-5 && (focal - (-0.25 * 0.75f64.ln())).abs() < 1e-6;
    // Teacher on the x axis; nearest row at cosine 0.8, student at cosine 0.5.
    let t = [1.0, 0.0, 0.0];
    let s = at(0.5, 1);
    let dict = dictionary("a", &[at(0.8, 2).to_vec(), vec![-1.0, 0.0, 0.0]]);
    let w = weighted_distillation_loss(&[(ev("a", &s), ev("a", &t))], &[dict], 1.0).unwrap();
    let worked_weighted = (w - 0.4).abs() < 1e-6;

    let elapsed = start.elapsed();
    Outcome {
        name: "loss oracle",
        pass: worst < 1e-6 && worked_focal && worked_weighted && elapsed < Duration::from_secs(5),
        detail: format!(
            "400 instances, max |Δ| = {worst:.2e} (< 1e-6); focal worked value {focal:.5} (0.07192); \
             weighted worked value {w:.6} (0.4); {:.2}s (< 5s)",
            elapsed.as_secs_f64()
        ),
    }
}

/// Redraws until `ok` holds, so finite differences never straddle a kink.
fn draw<T>(r: &mut rand_chacha::ChaCha8Rng, mut make: impl FnMut(&mut rand_chacha::ChaCha8Rng) -> T, ok: impl Fn(&T) -> bool) -> T {
    loop {
        let v = make(r);
        if ok(&v) {
            return v;
        }
    }
}

fn split3(x: &[f64]) -> (&[f64], &[f64], &[f64]) {
    (&x[..DIM], &x[DIM..2 * DIM], &x[2 * DIM..])
}

fn gradient_suite() -> Outcome {
    const H: f64 = 1e-5;
    let start = Instant::now();
    let mut r = rng(12);
    let mut worst = [0.0f64; 4];

    let triplet = |r: &mut rand_chacha::ChaCha8Rng| gaussian_vec(r, 3 * DIM);
    for _ in 0..50 {
        let x = draw(&mut r, triplet, |x| {
            let (d, p, n) = split3(x);
            (1.0 - oracle_cos(d, p) + oracle_cos(d, n)).abs() > 1e-3
        });
        let (d, p, n) = split3(&x);
        let (_, g) = pairwise_hinge_grad(d, p, n).unwrap();
        let fd = fd_grad(&x, H, |y| {
            let (d, p, n) = split3(y);
            oracle_hinge(d, p, n)
        });
        worst[0] = worst[0].max(rel_err(&[g.d, g.e_pos, g.e_neg].concat(), &fd));
    }
    for _ in 0..50 {
        let gamma = r.gen_range(0.0..3.0);
        let x = draw(&mut r, triplet, |x| {
            let (d, p, n) = split3(x);
            let p_raw = 0.5 * (1.0 + oracle_cos(d, p) - oracle_cos(d, n));
            p_raw > 1e-3 && p_raw < 1.0 - 1e-3
        });
        let (d, p, n) = split3(&x);
        let (_, g) = focal_ranking_grad(d, p, n, gamma).unwrap();
        let fd = fd_grad(&x, H, |y| {
            let (d, p, n) = split3(y);
            oracle_focal(d, p, n, gamma)
        });
        worst[1] = worst[1].max(rel_err(&[g.d, g.e_pos, g.e_neg].concat(), &fd));
    }
    for _ in 0..50 {
        let kappa = r.gen_range(1..=4);
        let x = gaussian_vec(&mut r, 2 * kappa * DIM);
        let unpack = |y: &[f64]| -> Vec<(Vec<f64>, Vec<f64>)> {
            (0..kappa)
                .map(|k| (y[2 * k * DIM..(2 * k + 1) * DIM].to_vec(), y[(2 * k + 1) * DIM..(2 * k + 2) * DIM].to_vec()))
                .collect()
        };
        let pairs = unpack(&x);
        let refs: Vec<(&[f64], &[f64])> = pairs.iter().map(|(s, t)| (s.as_slice(), t.as_slice())).collect();
        let (_, g) = distillation_grad(&refs).unwrap();
        let analytic: Vec<f64> = g.iter().flat_map(|p| p.student.iter().chain(&p.teacher).copied()).collect();
        let fd = fd_grad(&x, H, |y| oracle_distill(&unpack(y)));
        worst[2] = worst[2].max(rel_err(&analytic, &fd));
    }
    const ROWS: usize = 4;
    for _ in 0..50 {
        let kappa = r.gen_range(1..=3);
        let beta = r.gen_range(0.5..3.0);
        let per = (2 + ROWS) * DIM;
        let unpack = move |y: &[f64]| -> (Vec<(Vec<f64>, Vec<f64>)>, Vec<Vec<Vec<f64>>>) {
            let mut pairs = Vec::new();
            let mut dicts = Vec::new();
            for k in 0..kappa {
                let b = &y[k * per..(k + 1) * per];
                pairs.push((b[..DIM].to_vec(), b[DIM..2 * DIM].to_vec()));
                dicts.push((0..ROWS).map(|i| b[(2 + i) * DIM..(3 + i) * DIM].to_vec()).collect());
            }
            (pairs, dicts)
        };
        // Keep the nearest row unique and its cosine away from the clamp edges.
        let x = draw(&mut r, |r| gaussian_vec(r, kappa * per), |x| {
            let (pairs, dicts) = unpack(x);
            pairs.iter().zip(&dicts).all(|((_, t), rows)| {
                let mut c: Vec<f64> = rows.iter().map(|row| oracle_cos(row, t)).collect();
                c.sort_by(|a, b| b.partial_cmp(a).unwrap());
                c[0] > 1e-2 && c[0] - c[1] > 1e-2
            })
        });
        let (pairs, rows) = unpack(&x);
        let dicts: Vec<LabelDictionary> = rows.iter().map(|rws| dictionary("a", rws)).collect();
        let refs: Vec<(&[f64], &[f64])> = pairs.iter().map(|(s, t)| (s.as_slice(), t.as_slice())).collect();
        let drefs: Vec<&LabelDictionary> = dicts.iter().collect();
        let (_, g) = weighted_distillation_grad(&refs, &drefs, beta).unwrap();
        let mut analytic = Vec::new();
        for pg in &g {
            analytic.extend(&pg.student);
            analytic.extend(&pg.teacher);
            for i in 0..ROWS {
                if i == pg.weight.nearest {
                    analytic.extend(&pg.dict_row);
                } else {
                    analytic.extend(std::iter::repeat(0.0).take(DIM));
                }
            }
        }
        let fd = fd_grad(&x, H, |y| {
            let (p, d) = unpack(y);
            oracle_weighted(&p, &d, beta)
        });
        worst[3] = worst[3].max(rel_err(&analytic, &fd));
    }
    let elapsed = start.elapsed();
    Outcome {
        name: "gradient suite",
        pass: worst.iter().all(|&w| w < 1e-4) && elapsed < Duration::from_secs(30),
        detail: format!(
            "50 instances per loss, max relative error hinge {:.1e}, focal {:.1e}, distill {:.1e}, \
             weighted {:.1e} (< 1e-4); {:.2}s (< 30s)",
            worst[0],
            worst[1],
            worst[2],
            worst[3],
            elapsed.as_secs_f64()
        ),
    }
}

fn reduction_identities() -> Outcome {
    let mut r = rng(13);
    let mut focal_exact = true;
    let mut beta_exact = true;
    let mut worst_scale: f64 = 0.0;
    for _ in 0..200 {
        let (d, p, n) = (gaussian_vec(&mut r, DIM), gaussian_vec(&mut r, DIM), gaussian_vec(&mut r, DIM));
        let b = focal_ranking_loss(&ev("a", &d), &ev("a", &p), &ev("a", &n), 0.0).unwrap();
        focal_exact &= b.loss == -b.p_t.ln();

        let kappa = r.gen_range(1..=4);
        let pairs: Vec<_> = (0..kappa)
            .map(|k| (ev(&type_name(k), &gaussian_vec(&mut r, DIM)), ev(&type_name(k), &gaussian_vec(&mut r, DIM))))
            .collect();
        let dicts: Vec<_> = (0..kappa)
            .map(|k| dictionary(&type_name(k), &(0..4).map(|_| gaussian_vec(&mut r, DIM)).collect::<Vec<_>>()))
            .collect();
        let unweighted = distillation_loss(&pairs).unwrap();
        beta_exact &= weighted_distillation_loss(&pairs, &dicts, 0.0).unwrap() == unweighted;

        let gamma = r.gen_range(0.0..3.0);
        let beta = r.gen_range(0.0..3.0);
        let scale = |v: &[f64], r: &mut rand_chacha::ChaCha8Rng| -> Vec<f64> {
            let a = r.gen_range(1e-3..1e3);
            v.iter().map(|x| a * x).collect()
        };
        let (ds, ps, ns) = (scale(&d, &mut r), scale(&p, &mut r), scale(&n, &mut r));
        let hinge = |d: &[f64], p: &[f64], n: &[f64]| pairwise_hinge_loss(&ev("a", d), &ev("a", p), &ev("a", n)).unwrap();
        let focal = |d: &[f64], p: &[f64], n: &[f64]| {
            focal_ranking_loss(&ev("a", d), &ev("a", p), &ev("a", n), gamma).unwrap().loss
        };
        worst_scale = worst_scale.max((hinge(&d, &p, &n) - hinge(&ds, &ps, &ns)).abs());
        worst_scale = worst_scale.max((focal(&d, &p, &n) - focal(&ds, &ps, &ns)).abs());
        let scaled_pairs: Vec<_> = pairs
            .iter()
            .map(|(s, t)| (ev(&s.attribute_type, &scale(&s.values, &mut r)), ev(&t.attribute_type, &scale(&t.values, &mut r))))
            .collect();
        let scaled_dicts: Vec<_> = dicts
            .iter()
            .map(|dct| {
                let rows: Vec<Vec<f64>> = (0..dct.n_classes()).map(|i| scale(dct.row(i), &mut r)).collect();
                dictionary(&dct.attribute_type, &rows)
            })
            .collect();
        worst_scale = worst_scale.max((unweighted - distillation_loss(&scaled_pairs).unwrap()).abs());
        worst_scale = worst_scale.max(
            (weighted_distillation_loss(&pairs, &dicts, beta).unwrap()
                - weighted_distillation_loss(&scaled_pairs, &scaled_dicts, beta).unwrap())
            .abs(),
        );
    }
    Outcome {
        name: "reduction identities",
        pass: focal_exact && beta_exact && worst_scale <= 1e-9,
        detail: format!(
            "gamma=0 focal equals -ln p_t exactly: {focal_exact}; beta=0 weighted equals unweighted \
             exactly: {beta_exact}; max change under positive rescaling {worst_scale:.1e} (<= 1e-9)"
        ),
    }
}

// ---------------------------------------------------------------- metrics

fn metric_oracle() -> Outcome {
    let mut r = rng(14);
    let mut mismatches = 0;
    let mut monotone = true;
    for _ in 0..500 {
        let n = r.gen_range(1..=20);
        let mut ranked: Vec<usize> = (0..n).collect();
        ranked.shuffle(&mut r);
        let m = r.gen_range(1..=n);
        let mut pool: Vec<usize> = (0..n).collect();
        pool.shuffle(&mut r);
        let truth_vec: Vec<usize> = pool[..m].to_vec();
        let truth: BTreeSet<usize> = truth_vec.iter().copied().collect();
        let mut prev = 0.0;
        for k in 1..=n {
            let got = (
                recall_at_k(&ranked, &truth, k).unwrap(),
                precision_at_k(&ranked, &truth, k).unwrap(),
                f1_at_k(&ranked, &truth, k).unwrap(),
            );
            if got != oracle_metrics(&ranked, &truth_vec, k) {
                mismatches += 1;
            }
            monotone &= got.0 >= prev;
            prev = got.0;
        }
    }
    Outcome {
        name: "metric oracle",
        pass: mismatches == 0 && monotone,
        detail: format!("500 cases at every k: {mismatches} mismatches (0); recall monotone in k: {monotone}"),
    }
}

// ---------------------------------------------------------------- training

fn pct(v: f64) -> String {
    format!("{:.2}", 100.0 * v)
}

struct SeedResult {
    seed: u64,
    table: Table,
    fidelity: Vec<(String, f64)>,
    robustness: Table,
    elapsed: Duration,
}

fn run_seed(seed: u64) -> (Runner, SeedResult, Duration) {
    let config = RunConfigFile::standard().with_seed(seed);
    let start = Instant::now();
    let runner = Runner::new(&config, Exec::default()).expect("workspace");
    let t0 = Instant::now();
    runner.teachers().expect("teachers");
    let teacher_time = t0.elapsed();
    let mut table = Table::new("teacher vs student");
    runner.run_plan(Plan::TeacherVsStudent, &mut table).expect("teacher_vs_student");
    let student = runner.student().expect("student");
    let fidelity = runner.fidelity(&student.model, &runner.ws.test).expect("fidelity");
    let elapsed = start.elapsed();
    let mut robustness = Table::new("robustness");
    runner.run_plan(Plan::Robustness, &mut robustness).expect("robustness");
    eprintln!("seed {seed}:\n{}\n{}", table.to_text(), robustness.to_text());
    (
        runner,
        SeedResult {
            seed,
            table,
            fidelity,
            robustness,
            elapsed,
        },
        teacher_time,
    )
}

fn end_to_end_teacher(runner: &Runner, teacher_time: Duration) -> Outcome {
    let val = runner.teacher_report(&runner.ws.val, &runner.ws.bank).unwrap();
    let test = runner.teacher_report(&runner.ws.test, &runner.ws.bank).unwrap();
    let constant = runner.constant_baseline().unwrap();
    let (base, _) = evaluate_model(&constant, &runner.ws.test, &runner.ws.bank, &[1, 3], Exec::default()).unwrap();
    let color = val.recall("color", 1).unwrap();
    let mut margins = Vec::new();
    let mut all_beat = true;
    for t in runner.ws.types() {
        for k in [1, 3] {
            let gap = test.recall(&t, k).unwrap() - base.recall(&t, k).unwrap();
            all_beat &= gap >= 0.20;
            margins.push(format!("{t} R@{k} +{}", pct(gap)));
        }
    }
    Outcome {
        name: "end-to-end teacher",
        pass: color >= 0.90 && all_beat && teacher_time < Duration::from_secs(15 * 60),
        detail: format!(
            "seed 0 color validation R@1 = {} (>= 90); test recall over constant ranking: {} (>= +20); \
             teachers trained in {:.0}s (< 900s)",
            pct(color),
            margins.join(", "),
            teacher_time.as_secs_f64()
        ),
    }
}

fn distillation_fidelity(results: &[SeedResult]) -> Outcome {
    let mut passing = 0;
    let mut notes = Vec::new();
    let mut total = Duration::ZERO;
    for res in results {
        total += res.elapsed;
        let min_cos = res.fidelity.iter().map(|(_, c)| *c).fold(f64::INFINITY, f64::min);
        let mut within = true;
        let mut improved = 0;
        for (name, _) in &res.fidelity {
            let t = res.table.value(name, "T R@3").unwrap();
            let s = res.table.value(name, "S R@3").unwrap();
            within &= s >= t - 0.01;
            improved += usize::from(s > t);
        }
        let ok = min_cos >= 0.95 && within && improved >= 2;
        passing += usize::from(ok);
        notes.push(format!(
            "seed {}: min cosine {:.4}, all within 1 point {within}, strictly better on {improved}/4 [{}]",
            res.seed,
            min_cos,
            res.fidelity
                .iter()
                .map(|(n, _)| format!(
                    "{n} {}→{}",
                    pct(res.table.value(n, "T R@3").unwrap()),
                    pct(res.table.value(n, "S R@3").unwrap())
                ))
                .collect::<Vec<_>>()
                .join(", ")
        ));
    }
    Outcome {
        name: "distillation fidelity",
        pass: passing * 2 > results.len() && total < Duration::from_secs(20 * 60),
        detail: format!(
            "{passing}/{} seeds pass (majority needed); {}; {:.0}s (< 1200s)",
            results.len(),
            notes.join("; "),
            total.as_secs_f64()
        ),
    }
}

fn robustness(results: &[SeedResult]) -> Outcome {
    let mut passing = 0;
    let mut notes = Vec::new();
    for res in results {
        let t = &res.robustness;
        let gain = t.value("mixed student", "corrupted R@3").unwrap() - t.value("clean-only student", "corrupted R@3").unwrap();
        let drop = t.value("clean-only student", "clean R@3").unwrap() - t.value("mixed student", "clean R@3").unwrap();
        let ok = gain >= 0.01 && drop < 0.005;
        passing += usize::from(ok);
        notes.push(format!("seed {}: corrupted {:+.2}, clean drop {:.2}", res.seed, 100.0 * gain, 100.0 * drop));
    }
    Outcome {
        name: "robustness",
        pass: passing >= 2,
        detail: format!(
            "{passing}/3 seeds with corrupted gain >= +1.00 and clean drop < 0.50 (2 needed); {}",
            notes.join("; ")
        ),
    }
}

fn unlabeled_trend(runner: &Runner) -> Outcome {
    let mut t = Table::new("unlabeled sweep");
    runner.run_plan(Plan::UnlabeledSweep, &mut t).expect("unlabeled sweep");
    eprintln!("{}", t.to_text());
    let sizes = &runner.ws.config.sweep.unlabeled_sizes;
    let rows: Vec<(f64, f64)> = sizes
        .iter()
        .map(|n| {
            let row = format!("student n={n}");
            (t.value(&row, "R@3").unwrap(), t.value(&row, "mAP").unwrap())
        })
        .collect();
    let ok = rows
        .windows(2)
        .all(|w| w[1].0 >= w[0].0 - 0.005 && w[1].1 >= w[0].1 - 0.005);
    Outcome {
        name: "unlabeled-size trend",
        pass: ok && sizes == &[500, 2000, 5000],
        detail: format!(
            "seed 0 pool sizes {:?}: R@3 {:?}, mAP {:?} (non-decreasing within 0.5 per step)",
            sizes,
            rows.iter().map(|r| pct(r.0)).collect::<Vec<_>>(),
            rows.iter().map(|r| pct(r.1)).collect::<Vec<_>>()
        ),
    }
}

/// Builds data, trains every teacher and the student, and evaluates on test.
fn full_pipeline(config: &RunConfigFile, exec: Exec) -> (MetricsReport, MetricsReport) {
    let runner = Runner::new(config, exec).unwrap();
    let teachers = runner.teacher_report(&runner.ws.test, &runner.ws.bank).unwrap();
    let student = runner.student().unwrap();
    let s = runner.evaluate(&student.model, &runner.ws.test, &runner.ws.bank).unwrap();
    (teachers, s)
}

fn determinism() -> Outcome {
    let config = RunConfigFile::smoke().with_seed(5);
    let a = full_pipeline(&config, Exec::default());
    let b = full_pipeline(&config, Exec::default());
    let c = full_pipeline(&config, Exec::Sequential);
    Outcome {
        name: "determinism",
        pass: a == b && a == c,
        detail: format!(
            "two runs identical: {}; sequential run identical: {}",
            a == b,
            a == c
        ),
    }
}

fn main() {
    let quick = std::env::args().any(|a| a == "quick");
    let mut outcomes = Vec::new();
    for f in [loss_oracle, gradient_suite, reduction_identities, metric_oracle] {
        let o = f();
        report(&o);
        outcomes.push(o);
    }
    if !quick {
        let mut results = Vec::new();
        let mut seed0 = None;
        for seed in [0, 1, 2] {
            let (runner, res, teacher_time) = run_seed(seed);
            results.push(res);
            if seed == 0 {
                let o = end_to_end_teacher(&runner, teacher_time);
                report(&o);
                outcomes.push(o);
                seed0 = Some(runner);
            }
        }
        for o in [distillation_fidelity(&results), robustness(&results)] {
            report(&o);
            outcomes.push(o);
        }
        let o = unlabeled_trend(seed0.as_ref().unwrap());
        report(&o);
        outcomes.push(o);
    }
    let o = determinism();
    report(&o);
    outcomes.push(o);

    let failed = outcomes.iter().filter(|o| !o.pass).count();
    println!("\n{} criteria, {} passed, {} failed", outcomes.len(), outcomes.len() - failed, failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
