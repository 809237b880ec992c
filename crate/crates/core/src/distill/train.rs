use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::student::{StudentConfig, StudentModel};
use crate::augment::{build_view_set, AugmentConfig, ViewSet};
use crate::checkpoint::to_json_string;
use crate::error::{Error, Result};
use crate::gate::{accept_all, gate_logits, gate_logits_topk, GateResult};
use crate::imageops::Raster;
use crate::rng;
use crate::scalar::Scalar;
use crate::scoring::{Encoder, LogitVector};
use crate::teacher::TeacherModel;

#[derive(Debug, Clone, PartialEq)]
pub struct DistillConfig {
    pub epochs: usize,
    pub lr: f64,
    /// Images per step.
    pub batch: usize,
    pub tau: f64,
    pub seed: u64,
    pub gate_enabled: bool,
    /// Gate strictness; 1 is the plain top-1 consensus.
    pub topk: usize,
    pub augment: AugmentConfig,
    pub student: StudentConfig,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            lr: 0.005,
            batch: 16,
            tau: 1.0,
            seed: 0,
            gate_enabled: true,
            topk: 1,
            augment: AugmentConfig::default(),
            student: StudentConfig::default(),
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 {
            return Err(Error::Config("distill batch must be positive".into()));
        }
        if !(self.tau > 0.0) {
            return Err(Error::Config(format!("distill tau must be positive, got {}", self.tau)));
        }
        if !(self.lr >= 0.0) {
            return Err(Error::Config(format!("distill lr must be >= 0, got {}", self.lr)));
        }
        if self.topk == 0 {
            return Err(Error::Config("topk must be at least 1".into()));
        }
        self.augment.validate()
    }

    /// Seed of the per-image view streams.
    pub fn augment_seed(&self) -> u64 {
        rng::sub_seed(self.seed, "augment")
    }
}

/// Visiting order of the dataset in `epoch`.
pub fn epoch_order(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut r = rng::stream(rng::combine(&[seed, rng::key_hash("distill-epoch"), epoch as u64]));
    order.shuffle(&mut r);
    order
}

/// Builds the initial student for `cfg` against `teacher`'s embedding width.
pub fn init_student<T: Scalar>(
    teacher: &TeacherModel<T>,
    cfg: &DistillConfig,
) -> Result<StudentModel<T>> {
    let (w, h) = teacher.encoder().input_size();
    let encoder = Encoder::new(cfg.student.encoder, w, h)?;
    StudentModel::new(
        encoder,
        teacher.class_embeddings().dim(),
        cfg.student.proj_layers,
        T::of(cfg.tau),
        cfg.seed,
    )
}

/// One gradient step on precomputed `(student feature, teacher logits)` pairs.
pub fn step_on_features<T: Scalar>(
    student: &StudentModel<T>,
    samples: &[(&[T], &LogitVector<T>)],
    teacher: &TeacherModel<T>,
    lr: f64,
    tau: f64,
) -> Result<(StudentModel<T>, T)> {
    let tau = T::of(tau);
    let (loss, grad) = student.loss_and_grad(
        student.params(),
        samples,
        teacher.class_embeddings(),
        tau,
    )?;
    if !loss.is_finite() || !grad.is_finite() {
        return Err(Error::Numerical(format!(
            "non-finite distillation step: loss = {loss}, grad finite = {}, param norm = {:.6e}, samples = {}",
            grad.is_finite(),
            student.params_norm(),
            samples.len()
        )));
    }
    if lr == 0.0 {
        return Ok((student.clone(), loss));
    }
    let mut params = student.params().clone();
    params.descend(&grad, T::of(lr));
    Ok((student.with_params(params)?, loss))
}

/// One gradient step over the union of accepted views in `batch`.
pub fn distill_step<T: Scalar>(
    student: &StudentModel<T>,
    batch: &[(GateResult<T>, ViewSet)],
    teacher: &TeacherModel<T>,
    cfg: &DistillConfig,
) -> Result<(StudentModel<T>, T)> {
    let mut feats = Vec::new();
    let mut targets = Vec::new();
    for (gate, vs) in batch {
        if gate.accepted_indices.is_empty() {
            return Err(Error::Data("gate result with no accepted views".into()));
        }
        for (&j, l) in gate.accepted_indices.iter().zip(&gate.accepted_logits) {
            if j >= vs.len() {
                return Err(Error::Alignment {
                    expected: vs.len(),
                    got: j + 1,
                });
            }
            feats.push(student.encoder().encode(vs.member(j))?);
            targets.push(l);
        }
    }
    let samples: Vec<(&[T], &LogitVector<T>)> =
        feats.iter().map(Vec::as_slice).zip(targets).collect();
    step_on_features(student, &samples, teacher, cfg.lr, cfg.tau)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_kl: f64,
    pub acceptance_rate: f64,
    pub raw_discard_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogHeader {
    pub kind: String,
    /// Loss normalisation across a multi-image batch.
    pub averaging: String,
    pub kl_direction: String,
    pub gate_enabled: bool,
    pub topk: usize,
    pub n_views: usize,
    pub steps: usize,
    pub strategy: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingLog {
    pub header: LogHeader,
    pub epochs: Vec<EpochRecord>,
    /// Loss of every step before its update, in execution order.
    pub step_losses: Vec<f64>,
    /// Images whose top-k consensus disagreed with plain top-1 consensus.
    pub topk_disagreements: usize,
}

impl TrainingLog {
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = to_json_string(&self.header)?;
        out.push('\n');
        for e in &self.epochs {
            out.push_str(&to_json_string(e)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_jsonl()?.as_bytes())
            .map_err(|e| Error::io(path, e))
    }
}

struct Prepared<T> {
    feats: Vec<Vec<T>>,
    targets: Vec<LogitVector<T>>,
    members: usize,
    raw_discarded: bool,
    topk_disagrees: bool,
}

fn prepare<T: Scalar>(
    key: &str,
    img: &Raster,
    epoch: usize,
    teacher: &TeacherModel<T>,
    student_encoder: &Encoder<T>,
    cfg: &DistillConfig,
) -> Result<Prepared<T>> {
    let vs = build_view_set(img, &cfg.augment, key, epoch as u64, cfg.augment_seed())?;
    let logits = teacher.view_set_logits(&vs)?;
    let gate = if !cfg.gate_enabled {
        accept_all(&logits)?
    } else if cfg.topk > 1 {
        gate_logits_topk(&logits, cfg.topk)?
    } else {
        gate_logits(&logits)?
    };
    let feats = gate
        .accepted_indices
        .iter()
        .map(|&j| student_encoder.encode(vs.member(j)))
        .collect::<Result<Vec<_>>>()?;
    Ok(Prepared {
        feats,
        members: vs.len(),
        raw_discarded: gate.raw_discarded,
        topk_disagrees: gate.topk_disagrees(),
        targets: gate.accepted_logits,
    })
}

/// Distils `teacher` into a fresh student on unlabelled `(key, image)` pairs.
///
/// View construction, teacher scoring and gating run in parallel per image;
/// results are consumed in dataset order so the outcome does not depend on
/// the worker count.
pub fn run_distillation<T: Scalar>(
    dataset: &[(String, Raster)],
    teacher: &TeacherModel<T>,
    cfg: &DistillConfig,
) -> Result<(StudentModel<T>, TrainingLog)> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::Data("empty distillation dataset".into()));
    }
    let mut student = init_student(teacher, cfg)?;
    let encoder = student.encoder().clone();
    let mut log = TrainingLog {
        header: LogHeader {
            kind: "header".into(),
            averaging: "flat-per-view".into(),
            kl_direction: "teacher||student".into(),
            gate_enabled: cfg.gate_enabled,
            topk: cfg.topk,
            n_views: cfg.augment.n_views,
            steps: cfg.augment.steps,
            strategy: cfg.augment.strategy.to_string(),
            seed: cfg.seed,
        },
        epochs: Vec::with_capacity(cfg.epochs),
        step_losses: Vec::new(),
        topk_disagreements: 0,
    };
    for epoch in 0..cfg.epochs {
        let order = epoch_order(cfg.seed, epoch, dataset.len());
        let (mut accepted, mut members, mut discarded) = (0usize, 0usize, 0usize);
        let mut epoch_losses = Vec::new();
        for chunk in order.chunks(cfg.batch) {
            let prepared = chunk
                .par_iter()
                .map(|&i| prepare(&dataset[i].0, &dataset[i].1, epoch, teacher, &encoder, cfg))
                .collect::<Result<Vec<_>>>()?;
            let mut samples: Vec<(&[T], &LogitVector<T>)> = Vec::new();
            for p in &prepared {
                accepted += p.feats.len();
                members += p.members;
                discarded += usize::from(p.raw_discarded);
                log.topk_disagreements += usize::from(p.topk_disagrees);
                samples.extend(p.feats.iter().map(Vec::as_slice).zip(&p.targets));
            }
            let (next, loss) = step_on_features(&student, &samples, teacher, cfg.lr, cfg.tau)?;
            student = next;
            epoch_losses.push(loss.as_f64());
        }
        log.step_losses.extend(&epoch_losses);
        log.epochs.push(EpochRecord {
            epoch,
            mean_kl: epoch_losses.iter().sum::<f64>() / epoch_losses.len() as f64,
            acceptance_rate: accepted as f64 / members as f64,
            raw_discard_rate: discarded as f64 / dataset.len() as f64,
        });
    }
    Ok((student, log))
}
