//! `mtss` command-line front end.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 training failure.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use mtss::config::RunConfigFile;
use mtss::data::{Image, ImageBank};
use mtss::evaluate::evaluate_model;
use mtss::experiment::{run_experiment, run_sweep, Plan, Runner, SweepParam, Workspace};
use mtss::inference::{predict, Ranker, SavedModel};
use mtss::parallel::{self, Exec};
use mtss::schema::{concat, load_manifest, DatasetManifest, ManifestKind};
use mtss::student::train_student;
use mtss::teacher::{train_teacher, RunOptions, TeacherModel};
use mtss::{Error, Result};

#[derive(Parser)]
#[command(name = "mtss", version, about = "Multi-teacher single-student attribute prediction")]
struct Cli {
    /// Run sequentially even when built with the `parallel` feature.
    #[arg(long, global = true)]
    sequential: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run config (TOML).
    config: PathBuf,
    /// Replace an existing non-empty output directory.
    #[arg(long)]
    overwrite: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Render the synthetic dataset and write its manifests to `<out>/data`.
    GenData {
        #[command(flatten)]
        common: Common,
    },
    /// Train one teacher on `<data>/labeled.jsonl`; writes `<out>/teachers/<type>`.
    TrainTeacher {
        #[command(flatten)]
        common: Common,
        #[arg(long = "type")]
        attribute_type: String,
        /// Dataset directory written by gen-data; defaults to `<out>/data`.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Distill teachers into one student; writes `<out>/student`.
    TrainStudent {
        #[command(flatten)]
        common: Common,
        #[arg(long, num_args = 1.., required = true)]
        teachers: Vec<PathBuf>,
        #[arg(long, num_args = 1.., required = true)]
        unlabeled: Vec<PathBuf>,
        /// Only distill these attribute types.
        #[arg(long, num_args = 1..)]
        subset: Vec<String>,
        /// Validation manifest used when `eval.select_best` is set; defaults to
        /// `val.jsonl` beside the first unlabeled manifest.
        #[arg(long)]
        val: Option<PathBuf>,
    },
    /// Metrics for a saved model; writes `<out>/eval/<name>`.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Comma-separated cutoffs; defaults to `eval.ks`.
        #[arg(long, value_delimiter = ',')]
        k: Vec<usize>,
    },
    /// Top-k classes per attribute type for one image.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long, default_value_t = 3)]
        k: usize,
    },
    /// Run an experiment recipe; writes `<out>/experiments/<plan>`.
    Experiment {
        #[command(flatten)]
        common: Common,
        /// teacher_vs_student, single_vs_multi, cross_domain, robustness or unlabeled_sweep.
        #[arg(long)]
        plan: String,
    },
    /// Retrain across hyperparameter values; writes `<out>/sweeps/<param>`.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// gamma, beta, dim or lr.
        #[arg(long)]
        param: String,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
    },
    /// Write one embedding per record as TSV: id, labels, values.
    ExportEmbeddings {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long = "type")]
        attribute_type: String,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Serialize)]
struct RunManifest<'a> {
    command: &'a str,
    config_hash: String,
    seed: u64,
    version: &'static str,
    config: &'a RunConfigFile,
}

struct Ctx {
    config: RunConfigFile,
}

impl Ctx {
    fn load(common: &Common) -> Result<Self> {
        Ok(Self {
            config: RunConfigFile::load(&common.config)?,
        })
    }

    fn root(&self) -> PathBuf {
        self.config.output_root()
    }

    /// Creates `dir`, refusing a non-empty one unless `overwrite` is set.
    fn prepare(&self, dir: &Path, overwrite: bool) -> Result<()> {
        let non_empty = fs::read_dir(dir).map(|mut d| d.next().is_some()).unwrap_or(false);
        if non_empty {
            if !overwrite {
                return Err(Error::Config(format!(
                    "{} already exists and is not empty; pass --overwrite to replace it",
                    dir.display()
                )));
            }
            fs::remove_dir_all(dir).map_err(|e| io(dir, e))?;
        }
        fs::create_dir_all(dir).map_err(|e| io(dir, e))
    }

    fn write_run(&self, dir: &Path, command: &str) -> Result<()> {
        let run = RunManifest {
            command,
            config_hash: self.config.hash()?,
            seed: self.config.seed,
            version: env!("CARGO_PKG_VERSION"),
            config: &self.config,
        };
        write(&dir.join("run.json"), serde_json::to_string_pretty(&run)?)
    }
}

fn io(path: &Path, e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::NotFound {
        Error::NotFound(path.to_path_buf())
    } else {
        Error::Io {
            path: path.to_path_buf(),
            source: e,
        }
    }
}

fn write(path: &Path, body: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, body).map_err(|e| io(path, e))
}

fn load_with_bank(path: &Path) -> Result<(DatasetManifest, ImageBank)> {
    let m = load_manifest(path)?;
    let bank = ImageBank::load(&m)?;
    Ok((m, bank))
}

fn dir_name(path: &Path) -> String {
    path.file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "model".into())
}

fn gen_data(common: &Common) -> Result<()> {
    let ctx = Ctx::load(common)?;
    let dir = ctx.root().join("data");
    ctx.prepare(&dir, common.overwrite)?;
    let ws = Workspace::build(&ctx.config)?;
    ws.save(&dir)?;
    ctx.write_run(&dir, "gen-data")?;
    for (name, m) in ws.manifests() {
        println!("{name:<10} {:>6} records", m.len());
    }
    println!("wrote {}", dir.display());
    Ok(())
}

fn cmd_train_teacher(common: &Common, attribute_type: &str, data: Option<&Path>, exec: Exec) -> Result<()> {
    let ctx = Ctx::load(common)?;
    let data = data.map(Path::to_path_buf).unwrap_or_else(|| ctx.root().join("data"));
    let (labeled, mut bank) = load_with_bank(&data.join("labeled.jsonl"))?;
    labeled.schema.get(attribute_type)?;
    let dir = ctx.root().join("teachers").join(attribute_type);
    ctx.prepare(&dir, common.overwrite)?;
    let cfg = ctx.config.teacher_config();
    let options = RunOptions { exec };
    let (model, trace) = if ctx.config.eval.select_best {
        let val = load_manifest(&data.join("val.jsonl"))?;
        bank.extend_from(&val)?;
        let bank = &bank;
        let mut scorer = |_: usize, m: &TeacherModel| -> Result<Option<f64>> {
            Ok(Some(evaluate_model(m, &val, bank, &[1], exec)?.0.f1(attribute_type, 1)?))
        };
        train_teacher(&labeled, bank, attribute_type, &cfg, options, Some(&mut scorer))?
    } else {
        train_teacher(&labeled, &bank, attribute_type, &cfg, options, None)?
    };
    model.save(&dir)?;
    write(&dir.join("loss.csv"), trace.to_csv())?;
    ctx.write_run(&dir, "train-teacher")?;
    println!("wrote {}", dir.display());
    Ok(())
}

fn cmd_train_student(
    common: &Common,
    teacher_dirs: &[PathBuf],
    unlabeled: &[PathBuf],
    subset: &[String],
    val: Option<&Path>,
    exec: Exec,
) -> Result<()> {
    let ctx = Ctx::load(common)?;
    let mut teachers = teacher_dirs
        .iter()
        .map(|d| TeacherModel::load(d))
        .collect::<Result<Vec<_>>>()?;
    if !subset.is_empty() {
        for s in subset {
            if !teachers.iter().any(|t| &t.attribute_type == s) {
                return Err(Error::Config(format!("--subset names `{s}` but no teacher for it was given")));
            }
        }
        teachers.retain(|t| subset.contains(&t.attribute_type));
    }
    let mut bank = ImageBank::new();
    let mut pools = Vec::new();
    for p in unlabeled {
        let m = load_manifest(p)?.to_unlabeled();
        bank.extend_from(&m)?;
        pools.push(m);
    }
    let refs: Vec<&DatasetManifest> = pools.iter().collect();
    let pool = concat(&refs, ManifestKind::Unlabeled)?;
    let dir = ctx.root().join("student");
    ctx.prepare(&dir, common.overwrite)?;
    let cfg = ctx.config.student_config();
    let trefs: Vec<&TeacherModel> = teachers.iter().collect();
    let options = RunOptions { exec };
    // Without --val, fall back to the val split next to the first pool manifest.
    let sibling = unlabeled[0].with_file_name("val.jsonl");
    let val = val.or_else(|| sibling.is_file().then_some(sibling.as_path()));
    let (model, trace) = match (ctx.config.eval.select_best, val) {
        (true, Some(v)) => {
            let (val, vbank) = load_with_bank(v)?;
            let mut scorer = |_: usize, m: &mtss::student::StudentModel| -> Result<Option<f64>> {
                Ok(Some(evaluate_model(m, &val, &vbank, &[1], exec)?.0.overall_f1(1)?))
            };
            train_student(&trefs, &pool, &bank, &cfg, options, Some(&mut scorer))?
        }
        (true, None) => {
            return Err(Error::Config("eval.select_best needs --val (no val.jsonl next to the pool manifest)".into()));
        }
        (false, _) => train_student(&trefs, &pool, &bank, &cfg, options, None)?,
    };
    model.save(&dir)?;
    write(&dir.join("loss.csv"), trace.to_csv())?;
    ctx.write_run(&dir, "train-student")?;
    println!("wrote {}", dir.display());
    Ok(())
}

fn cmd_evaluate(common: &Common, model: &Path, manifest: &Path, ks: &[usize], exec: Exec) -> Result<()> {
    let ctx = Ctx::load(common)?;
    let m = SavedModel::load(model)?;
    let (manifest, bank) = load_with_bank(manifest)?;
    let ks = if ks.is_empty() { ctx.config.eval.ks.clone() } else { ks.to_vec() };
    let (report, log) = evaluate_model(&m, &manifest, &bank, &ks, exec)?;
    let dir = ctx.root().join("eval").join(dir_name(model));
    ctx.prepare(&dir, common.overwrite)?;
    write(&dir.join("metrics.csv"), report.to_csv())?;
    write(&dir.join("per_class.csv"), report.per_class_csv())?;
    log.save(&dir.join("predictions.jsonl"))?;
    ctx.write_run(&dir, "evaluate")?;
    print!("{}", report.to_table());
    Ok(())
}

fn cmd_predict(model: &Path, image: &Path, k: usize) -> Result<()> {
    let m = SavedModel::load(model)?;
    let img = Image::load(image)?;
    let p = predict(&m, &img, k)?;
    let mut out = std::io::stdout().lock();
    for t in &p.types {
        let _ = writeln!(out, "{}:", t.attribute_type);
        for (rank, l) in t.top.iter().enumerate() {
            let _ = writeln!(out, "  {}. {}\t{:.4}", rank + 1, l.class, l.similarity);
        }
    }
    Ok(())
}

fn cmd_experiment(common: &Common, plan: &str, exec: Exec) -> Result<()> {
    let plan: Plan = plan.parse()?;
    let ctx = Ctx::load(common)?;
    let dir = ctx.root().join("experiments").join(plan.name());
    ctx.prepare(&dir, common.overwrite)?;
    ctx.write_run(&dir, "experiment")?;
    let runner = Runner::new(&ctx.config, exec)?;
    let report = run_experiment(&runner, plan, &dir)?;
    println!("{}", report.table.to_text());
    Ok(())
}

fn cmd_sweep(common: &Common, param: &str, values: &[f64], exec: Exec) -> Result<()> {
    let param: SweepParam = param.parse()?;
    let ctx = Ctx::load(common)?;
    let dir = ctx.root().join("sweeps").join(param.name());
    ctx.prepare(&dir, common.overwrite)?;
    ctx.write_run(&dir, "sweep")?;
    let runner = Runner::new(&ctx.config, exec)?;
    let table = run_sweep(&runner, param, values, &dir)?;
    println!("{}", table.to_text());
    Ok(())
}

fn cmd_export(model: &Path, manifest: &Path, attribute_type: &str, out: &Path, exec: Exec) -> Result<()> {
    let m = SavedModel::load(model)?;
    if !m.attribute_types().iter().any(|t| t == attribute_type) {
        return Err(Error::UnknownType(attribute_type.to_string()));
    }
    let (manifest, bank) = load_with_bank(manifest)?;
    let rows = parallel::try_map(exec, &manifest.records, |r| {
        let e = m.embed(bank.get(&r.id)?, attribute_type)?;
        let labels = r
            .labels_for(attribute_type)
            .map(|s| s.iter().cloned().collect::<Vec<_>>().join(";"))
            .unwrap_or_default();
        let values: Vec<String> = e.values.iter().map(|v| v.to_string()).collect();
        Ok(format!("{}\t{}\t{}\n", r.id, labels, values.join("\t")))
    })?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| io(parent, e))?;
    }
    write(out, rows.concat())?;
    println!("wrote {} embeddings to {}", rows.len(), out.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let exec = if cli.sequential { Exec::Sequential } else { Exec::default() };
    match &cli.command {
        Command::GenData { common } => gen_data(common),
        Command::TrainTeacher {
            common,
            attribute_type,
            data,
        } => cmd_train_teacher(common, attribute_type, data.as_deref(), exec),
        Command::TrainStudent {
            common,
            teachers,
            unlabeled,
            subset,
            val,
        } => cmd_train_student(common, teachers, unlabeled, subset, val.as_deref(), exec),
        Command::Evaluate {
            common,
            model,
            manifest,
            k,
        } => cmd_evaluate(common, model, manifest, k, exec),
        Command::Predict { model, image, k } => cmd_predict(model, image, *k),
        Command::Experiment { common, plan } => cmd_experiment(common, plan, exec),
        Command::Sweep { common, param, values } => cmd_sweep(common, param, values, exec),
        Command::ExportEmbeddings {
            model,
            manifest,
            attribute_type,
            out,
        } => cmd_export(model, manifest, attribute_type, out, exec),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let category = e.category();
            eprintln!("error ({category:?}): {e}");
            ExitCode::from(category.exit_code() as u8)
        }
    }
}
