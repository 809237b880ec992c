//! Command-line front end.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;

use crate::augment::{build_view_set, StepRecord};
use crate::checkpoint::{save_json, to_json_string};
use crate::config::{parse_pairs, RunConfig};
use crate::distill::run_distillation;
use crate::error::{Error, Result};
use crate::gate::{gate_logits, gate_logits_topk};
use crate::harness::{
    ablation_csv, evaluate, generate_dataset, load_labeled, load_unlabeled, motif_embedding,
    run_ablation, run_base_to_new, run_cross_dataset, sample_per_class, write_dataset, RunOutput,
    SplitPlan,
};
use crate::imageops::save_ppm;
use crate::scoring::{group_by_image, ingest_logits, save_logits_csv, KeyedLogits};
use crate::selftest;
use crate::{rng, Student, Teacher};

#[derive(Debug, Parser)]
#[command(name = "augpt", version, about = "Augmented-view prompt distillation on synthetic data")]
pub struct Cli {
    /// Flat `key = value` configuration file.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Master seed; overrides `seed` in the file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Extra `key=value` overrides, applied after the file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Root of the run directories.
    #[arg(long, global = true, default_value = "runs", value_name = "DIR")]
    pub out: PathBuf,
    /// Worker threads (default: all cores).
    #[arg(long, global = true, value_name = "N")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the synthetic train/test images and manifests.
    GenData,
    /// Fit the teacher on labelled base-class images of a manifest.
    FitTeacher {
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Write view sets (and teacher logits when a teacher is given).
    Augment {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        teacher: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        epoch: u64,
    },
    /// Apply the consensus gate to a logits CSV.
    Gate {
        #[arg(long)]
        logits: PathBuf,
    },
    /// Distil a student from a teacher on an unlabelled manifest.
    Distill {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        teacher: PathBuf,
    },
    /// Score a student on a labelled test manifest.
    Eval {
        #[arg(long)]
        student: PathBuf,
        #[arg(long)]
        teacher: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Generate, fit, distil and evaluate on a base/new split.
    BaseToNew,
    /// Fit on the source set, distil and evaluate on the target set.
    CrossDataset,
    /// Base-to-new runs over a grid of one setting.
    Ablate {
        /// n_views, steps, topk, proj_layers, strategy or gate.
        #[arg(long)]
        sweep: Option<String>,
        #[arg(long, value_delimiter = ',')]
        grid: Vec<String>,
    },
    /// Run the built-in invariant checks.
    Selftest,
}

/// Parses `argv`, runs the command and returns the process exit code.
pub fn run<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.exit_code() == 1 {
                eprintln!("usage: augpt [--config FILE] [--seed N] [--set KEY=VALUE] <COMMAND>; see --help");
            }
            e.exit_code()
        }
    }
}

pub fn execute(cli: &Cli) -> Result<()> {
    match cli.threads {
        Some(0) => Err(Error::Config("--threads must be at least 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Config(e.to_string()))?
            .install(|| dispatch(cli)),
        None => dispatch(cli),
    }
}

/// File, then `--set`, then `--seed`.
pub fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let mut map = match &cli.config {
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| Error::Config(format!("cannot read config {}: {e}", p.display())))?;
            parse_pairs(&text)?
        }
        None => BTreeMap::new(),
    };
    for kv in &cli.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    if let Some(s) = cli.seed {
        map.insert("seed".into(), s.to_string());
    }
    RunConfig::from_map(&map)
}

/// Output directory built under a temporary name and renamed on success.
struct Staged {
    tmp: PathBuf,
    dest: PathBuf,
}

impl Staged {
    fn new(dest: PathBuf) -> Result<Self> {
        let parent = dest.parent().unwrap_or(Path::new(".")).to_path_buf();
        fs::create_dir_all(&parent).map_err(|e| Error::io(&parent, e))?;
        let name = dest.file_name().and_then(|n| n.to_str()).unwrap_or("out");
        let tmp = parent.join(format!(".{name}.tmp-{}", std::process::id()));
        if tmp.exists() {
            fs::remove_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
        }
        fs::create_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
        Ok(Self { tmp, dest })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.tmp.join(name)
    }

    fn commit(self) -> Result<PathBuf> {
        if self.dest.exists() {
            fs::remove_dir_all(&self.dest).map_err(|e| Error::io(&self.dest, e))?;
        }
        fs::rename(&self.tmp, &self.dest).map_err(|e| Error::io(&self.dest, e))?;
        Ok(self.dest.clone())
    }

    fn abandon(&self) {
        let _ = fs::remove_dir_all(&self.tmp);
    }
}

fn write_text(path: PathBuf, text: &str) -> Result<()> {
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

fn write_jsonl<S: Serialize>(path: PathBuf, rows: &[S]) -> Result<()> {
    let mut f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    for r in rows {
        writeln!(f, "{}", to_json_string(r)?).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<()> {
    if let Command::Selftest = cli.command {
        let results = selftest::run();
        let mut failed = 0;
        for (name, ok) in &results {
            println!("{} {name}", if *ok { "PASS" } else { "FAIL" });
            failed += usize::from(!ok);
        }
        return if failed == 0 {
            Ok(())
        } else {
            Err(Error::Numerical(format!("{failed} self-test check(s) failed")))
        };
    }
    let cfg = resolve_config(cli)?;
    let name = match &cli.command {
        Command::GenData => "gen-data",
        Command::FitTeacher { .. } => "fit-teacher",
        Command::Augment { .. } => "augment",
        Command::Gate { .. } => "gate",
        Command::Distill { .. } => "distill",
        Command::Eval { .. } => "eval",
        Command::BaseToNew => "base-to-new",
        Command::CrossDataset => "cross-dataset",
        Command::Ablate { .. } => "ablate",
        Command::Selftest => unreachable!(),
    };
    let staged = Staged::new(cli.out.join(cfg.digest()).join(name))?;
    let outcome = write_text(staged.path("config.resolved"), &cfg.to_text())
        .and_then(|()| run_command(&cli.command, &cfg, &staged));
    match outcome {
        Ok(()) => {
            let dest = staged.commit()?;
            println!("{}", dest.display());
            Ok(())
        }
        Err(e) => {
            staged.abandon();
            Err(e)
        }
    }
}

#[derive(Serialize)]
struct FitRecord {
    epoch: usize,
    loss: f64,
}

#[derive(Serialize)]
struct ProvenanceRecord<'a> {
    image_key: &'a str,
    view_index: usize,
    corrupted: bool,
    steps: &'a [StepRecord],
}

fn save_run(out: &RunOutput, staged: &Staged) -> Result<()> {
    out.teacher.save(staged.path("teacher.json"))?;
    out.student.save(staged.path("student.json"))?;
    out.log.save(staged.path("train_log.jsonl"))?;
    save_json(staged.path("report.json"), &out.report)?;
    save_json(staged.path("teacher_report.json"), &out.teacher_report)?;
    eprintln!(
        "base {:.2}  new {:.2}  hm {:.2}  (teacher hm {:.2})",
        out.report.base_acc, out.report.new_acc, out.report.hm, out.teacher_report.hm
    );
    Ok(())
}

fn run_command(cmd: &Command, cfg: &RunConfig, staged: &Staged) -> Result<()> {
    match cmd {
        Command::GenData => {
            let ds = generate_dataset(&cfg.data)?;
            write_dataset(&ds, &staged.tmp)
        }
        Command::FitTeacher { manifest } => fit_teacher_cmd(manifest, cfg, staged),
        Command::Augment {
            manifest,
            teacher,
            epoch,
        } => augment_cmd(manifest, teacher.as_deref(), *epoch, cfg, staged),
        Command::Gate { logits } => {
            let rows = ingest_logits::<f64>(logits)?;
            let mut records = Vec::new();
            let (mut accepted, mut members) = (0usize, 0usize);
            for (key, group) in group_by_image(&rows) {
                let g = if cfg.distill.topk > 1 {
                    gate_logits_topk(&group, cfg.distill.topk)?
                } else {
                    gate_logits(&group)?
                };
                accepted += g.accepted_count();
                members += g.member_count();
                records.push(g.record(&key));
            }
            write_jsonl(staged.path("gate.jsonl"), &records)?;
            eprintln!("acceptance rate {:.4}", accepted as f64 / members.max(1) as f64);
            Ok(())
        }
        Command::Distill { manifest, teacher } => {
            let teacher = Teacher::load(teacher)?;
            let data = load_unlabeled(manifest)?;
            let (student, log) = run_distillation(&data, &teacher, &cfg.distill)?;
            student.save(staged.path("student.json"))?;
            log.save(staged.path("train_log.jsonl"))
        }
        Command::Eval {
            student,
            teacher,
            manifest,
        } => {
            let teacher = Teacher::load(teacher)?;
            let student = Student::load(student)?;
            let test = load_labeled(manifest)?;
            let split = SplitPlan::even_halving(teacher.class_count(), cfg.shots)?;
            let mut report = evaluate(&student, &teacher, &test, &split)?;
            report.config_digest = cfg.digest();
            save_json(staged.path("report.json"), &report)?;
            eprintln!("base {:.2}  new {:.2}  hm {:.2}", report.base_acc, report.new_acc, report.hm);
            Ok(())
        }
        Command::BaseToNew => save_run(&run_base_to_new(cfg)?, staged),
        Command::CrossDataset => save_run(&run_cross_dataset(cfg)?, staged),
        Command::Ablate { sweep, grid } => {
            let sweep = sweep
                .clone()
                .or_else(|| cfg.ablate_sweep.clone())
                .ok_or_else(|| Error::Config("ablate needs --sweep or ablate.sweep".into()))?;
            let grid = if grid.is_empty() { cfg.ablate_grid.clone() } else { grid.clone() };
            let rows = run_ablation(&sweep, &grid, cfg)?;
            write_text(staged.path("results.csv"), &ablation_csv(&rows))?;
            let reports_dir = staged.path("reports");
            fs::create_dir_all(&reports_dir).map_err(|e| Error::io(&reports_dir, e))?;
            for (value, report) in &rows {
                save_json(reports_dir.join(format!("{sweep}={value}.json")), report)?;
            }
            Ok(())
        }
        Command::Selftest => unreachable!(),
    }
}

fn fit_teacher_cmd(manifest: &Path, cfg: &RunConfig, staged: &Staged) -> Result<()> {
    let train = load_labeled(manifest)?;
    if let Some(bad) = train.iter().find(|it| it.label >= cfg.data.c) {
        return Err(Error::Data(format!(
            "{} has label {} but data.c = {}",
            bad.key, bad.label, cfg.data.c
        )));
    }
    let split = SplitPlan::even_halving(cfg.data.c, cfg.shots)?;
    let picked = sample_per_class(
        &train,
        &split.base_classes,
        cfg.shots,
        rng::sub_seed(cfg.seed, "teacher-shots"),
    );
    let pairs: Vec<_> = picked.iter().map(|it| (it.image.clone(), it.label)).collect();
    let names: Vec<String> = split.base_classes.iter().map(|k| format!("class_{k}")).collect();
    let fitted: Teacher = crate::teacher::fit_teacher(&pairs, &names, &cfg.teacher)?;
    let extra = split
        .new_classes
        .iter()
        .map(|&k| Ok((format!("class_{k}"), motif_embedding(&fitted, &cfg.data, k)?)))
        .collect::<Result<Vec<_>>>()?;
    let teacher = fitted.extended(extra)?;
    teacher.save(staged.path("teacher.json"))?;
    let trace: Vec<FitRecord> = teacher
        .loss_trace()
        .iter()
        .enumerate()
        .map(|(epoch, &loss)| FitRecord { epoch, loss })
        .collect();
    write_jsonl(staged.path("fit_log.jsonl"), &trace)
}

fn augment_cmd(
    manifest: &Path,
    teacher: Option<&Path>,
    epoch: u64,
    cfg: &RunConfig,
    staged: &Staged,
) -> Result<()> {
    let data = load_unlabeled(manifest)?;
    let teacher = teacher.map(Teacher::load).transpose()?;
    let aug = &cfg.distill.augment;
    let seed = cfg.distill.augment_seed();
    let sets = data
        .par_iter()
        .map(|(key, img)| {
            let vs = build_view_set(img, aug, key, epoch, seed)?;
            let logits = teacher.as_ref().map(|t| t.view_set_logits(&vs)).transpose()?;
            Ok((vs, logits))
        })
        .collect::<Result<Vec<_>>>()?;
    let views_dir = staged.path("views");
    let mut provenance = Vec::new();
    let mut keyed = Vec::new();
    for ((key, _), (vs, logits)) in data.iter().zip(&sets) {
        let dir = views_dir.join(key);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for (j, member) in vs.members().enumerate() {
            save_ppm(member, dir.join(format!("{j}.ppm")))?;
        }
        for (i, steps) in vs.provenance.iter().enumerate() {
            provenance.push(ProvenanceRecord {
                image_key: key,
                view_index: i + 1,
                corrupted: vs.corrupted[i],
                steps,
            });
        }
        if let Some(ls) = logits {
            keyed.extend(ls.iter().map(|l| KeyedLogits {
                image_key: key.clone(),
                logits: l.clone(),
            }));
        }
    }
    write_jsonl(staged.path("provenance.jsonl"), &provenance)?;
    if teacher.is_some() {
        save_logits_csv(staged.path("logits.csv"), &keyed)?;
    }
    Ok(())
}
