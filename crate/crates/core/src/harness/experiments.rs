//! Base-to-new, cross-dataset and ablation runs.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;

use crate::config::{RunConfig, Shots};
use crate::distill::{run_distillation, StudentModel, TrainingLog};
use crate::error::{Error, Result};
use crate::harness::data::{generate_dataset, motif, LabeledImage, SyntheticDatasetSpec};
use crate::harness::eval::{evaluate, evaluate_teacher, EvalReport, SplitPlan};
use crate::imageops::Raster;
use crate::rng;
use crate::scalar::normalized;
use crate::teacher::{fit_teacher, TeacherModel};

/// Everything a run produces.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: EvalReport,
    pub teacher_report: EvalReport,
    pub teacher: TeacherModel<f64>,
    pub student: StudentModel<f64>,
    pub log: TrainingLog,
}

/// At most `shots` images per class from `classes`, chosen with a seeded shuffle.
pub fn sample_per_class(
    images: &[LabeledImage],
    classes: &[usize],
    shots: Shots,
    seed: u64,
) -> Vec<LabeledImage> {
    let mut by_class: BTreeMap<usize, Vec<&LabeledImage>> = BTreeMap::new();
    for it in images.iter().filter(|it| classes.contains(&it.label)) {
        by_class.entry(it.label).or_default().push(it);
    }
    let mut out = Vec::new();
    for (k, mut items) in by_class {
        if let Shots::K(n) = shots {
            items.shuffle(&mut rng::stream(rng::combine(&[seed, k as u64])));
            items.truncate(n);
        }
        out.extend(items.into_iter().cloned());
    }
    out
}

/// Strips labels; nothing downstream can see them.
pub fn unlabeled(images: &[LabeledImage]) -> Vec<(String, Raster)> {
    images.iter().map(|it| (it.key.clone(), it.image.clone())).collect()
}

fn class_names(classes: impl Iterator<Item = usize>) -> Vec<String> {
    classes.map(|k| format!("class_{k}")).collect()
}

fn fit_on(cfg: &RunConfig, train: &[LabeledImage], classes: &[usize]) -> Result<TeacherModel<f64>> {
    let picked = sample_per_class(train, classes, cfg.shots, rng::sub_seed(cfg.seed, "teacher-shots"));
    let pairs: Vec<(Raster, usize)> = picked
        .iter()
        .map(|it| {
            let local = classes.iter().position(|&k| k == it.label).expect("filtered");
            (it.image.clone(), local)
        })
        .collect();
    fit_teacher(&pairs, &class_names(classes.iter().copied()), &cfg.teacher)
}

/// Embedding for a class the teacher never saw: its clean motif's feature.
pub fn motif_embedding(
    teacher: &TeacherModel<f64>,
    spec: &SyntheticDatasetSpec,
    k: usize,
) -> Result<Vec<f64>> {
    normalized(&teacher.shifted_feature(&motif(spec, k))?).ok_or(Error::DegenerateFeature)
}

fn distill_and_score(
    cfg: &RunConfig,
    teacher: TeacherModel<f64>,
    train: &[LabeledImage],
    test: &[LabeledImage],
    split: &SplitPlan,
) -> Result<RunOutput> {
    let all: Vec<usize> = (0..split.class_count()).collect();
    let pool = sample_per_class(train, &all, cfg.shots, rng::sub_seed(cfg.seed, "unlabeled-shots"));
    let (student, log) = run_distillation(&unlabeled(&pool), &teacher, &cfg.distill)?;
    let digest = cfg.digest();
    let mut report = evaluate(&student, &teacher, test, split)?;
    report.config_digest = digest.clone();
    let mut teacher_report = evaluate_teacher(&teacher, test, split)?;
    teacher_report.config_digest = digest;
    Ok(RunOutput {
        report,
        teacher_report,
        teacher,
        student,
        log,
    })
}

/// Teacher fit on base classes, student distilled on all unlabeled training
/// images, both scored on held-out test images of every class.
pub fn run_base_to_new(cfg: &RunConfig) -> Result<RunOutput> {
    let ds = generate_dataset(&cfg.data)?;
    let split = SplitPlan::even_halving(cfg.data.c, cfg.shots)?;
    let fitted = fit_on(cfg, &ds.train, &split.base_classes)?;
    let rows = (0..cfg.data.c)
        .map(|k| match split.base_classes.iter().position(|&b| b == k) {
            Some(i) => Ok(fitted.class_embeddings().row(i).to_vec()),
            None => motif_embedding(&fitted, &cfg.data, k),
        })
        .collect::<Result<Vec<_>>>()?;
    let teacher = fitted.with_candidates(rows, class_names(0..cfg.data.c))?;
    distill_and_score(cfg, teacher, &ds.train, &ds.test, &split)
}

/// Teacher fit on every source class; candidates rebuilt for the target.
/// Target classes drawn from the source generator keep their fitted rows.
pub fn run_cross_dataset(cfg: &RunConfig) -> Result<RunOutput> {
    let source = generate_dataset(&cfg.data)?;
    let target_spec = cfg.target_data();
    let target = generate_dataset(&target_spec)?;
    let source_classes: Vec<usize> = (0..cfg.data.c).collect();
    let fitted = fit_on(cfg, &source.train, &source_classes)?;
    let shared = target_spec.class_generator_seed == cfg.data.class_generator_seed;
    let rows = (0..target_spec.c)
        .map(|k| {
            if shared && k < cfg.data.c {
                Ok(fitted.class_embeddings().row(k).to_vec())
            } else {
                motif_embedding(&fitted, &target_spec, k)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let teacher = fitted.with_candidates(rows, class_names(0..target_spec.c))?;
    let split = SplitPlan::even_halving(target_spec.c, cfg.shots)?;
    distill_and_score(cfg, teacher, &target.train, &target.test, &split)
}

/// Config key varied by each sweep name.
pub fn sweep_key(sweep: &str) -> Result<&'static str> {
    Ok(match sweep {
        "n_views" => "augment.n_views",
        "steps" => "augment.steps",
        "topk" => "distill.topk",
        "proj_layers" => "student.proj_layers",
        "strategy" => "augment.strategy",
        "gate" => "distill.gate",
        other => return Err(Error::Parameter(format!("unknown sweep `{other}`"))),
    })
}

/// One base-to-new run per grid value.
pub fn run_ablation(
    sweep: &str,
    grid: &[String],
    base_cfg: &RunConfig,
) -> Result<Vec<(String, EvalReport)>> {
    let key = sweep_key(sweep)?;
    if grid.is_empty() {
        return Err(Error::Parameter("ablation grid is empty".into()));
    }
    grid.iter()
        .map(|v| {
            let cfg = base_cfg
                .with_override(key, v)
                .map_err(|e| Error::Parameter(e.to_string()))?;
            Ok((v.clone(), run_base_to_new(&cfg)?.report))
        })
        .collect()
}

/// `sweep_value,base,new,hm` rows.
pub fn ablation_csv(rows: &[(String, EvalReport)]) -> String {
    let mut out = String::from("sweep_value,base,new,hm\n");
    for (v, r) in rows {
        out.push_str(&format!("{v},{},{},{}\n", r.base_acc, r.new_acc, r.hm));
    }
    out
}
