//! Class splits, accuracy and the harmonic-mean summary.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::config::Shots;
use crate::distill::StudentModel;
use crate::error::{Error, Result};
use crate::harness::data::LabeledImage;
use crate::scalar::Scalar;
use crate::teacher::TeacherModel;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitPlan {
    pub base_classes: Vec<usize>,
    pub new_classes: Vec<usize>,
    pub shots: Shots,
}

impl SplitPlan {
    /// First half of the classes are base, the rest new.
    pub fn even_halving(c: usize, shots: Shots) -> Result<Self> {
        if c < 4 {
            return Err(Error::Parameter(format!("need at least 4 classes to split, got {c}")));
        }
        Ok(Self {
            base_classes: (0..c / 2).collect(),
            new_classes: (c / 2..c).collect(),
            shots,
        })
    }

    /// Every class as base; used when the teacher fits a whole source set.
    pub fn all_base(c: usize, shots: Shots) -> Self {
        Self {
            base_classes: (0..c).collect(),
            new_classes: Vec::new(),
            shots,
        }
    }

    pub fn class_count(&self) -> usize {
        self.base_classes.len() + self.new_classes.len()
    }

    pub fn is_base(&self, k: usize) -> bool {
        self.base_classes.binary_search(&k).is_ok()
    }

    pub fn contains(&self, k: usize) -> bool {
        self.is_base(k) || self.new_classes.binary_search(&k).is_ok()
    }
}

/// `2bn/(b+n)`, or 0 when both are 0.
pub fn harmonic_mean(base: f64, new: f64) -> f64 {
    if base + new > 0.0 {
        2.0 * base * new / (base + new)
    } else {
        0.0
    }
}

/// Accuracies in percent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub base_acc: f64,
    pub new_acc: f64,
    pub hm: f64,
    pub per_class: BTreeMap<usize, f64>,
    pub config_digest: String,
}

impl EvalReport {
    /// Builds a report from `(label, prediction)` pairs.
    pub fn from_predictions(pairs: &[(usize, usize)], split: &SplitPlan) -> Result<Self> {
        let mut hits: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
        let (mut base, mut new) = ((0usize, 0usize), (0usize, 0usize));
        for &(label, pred) in pairs {
            if !split.contains(label) {
                return Err(Error::Data(format!("test label {label} is not in the split")));
            }
            let ok = usize::from(label == pred);
            let e = hits.entry(label).or_default();
            e.0 += ok;
            e.1 += 1;
            let side = if split.is_base(label) { &mut base } else { &mut new };
            side.0 += ok;
            side.1 += 1;
        }
        let pct = |(h, n): (usize, usize)| if n == 0 { 0.0 } else { 100.0 * h as f64 / n as f64 };
        let (base_acc, new_acc) = (pct(base), pct(new));
        Ok(Self {
            base_acc,
            new_acc,
            hm: harmonic_mean(base_acc, new_acc),
            per_class: hits.into_iter().map(|(k, v)| (k, pct(v))).collect(),
            config_digest: String::new(),
        })
    }
}

fn check_candidates<T: Scalar>(teacher: &TeacherModel<T>, split: &SplitPlan) -> Result<()> {
    if teacher.class_count() != split.class_count() {
        return Err(Error::Alignment {
            expected: split.class_count(),
            got: teacher.class_count(),
        });
    }
    Ok(())
}

/// Student accuracy; candidate row `k` of the teacher is class `k`.
pub fn evaluate<T: Scalar>(
    student: &StudentModel<T>,
    teacher: &TeacherModel<T>,
    test: &[LabeledImage],
    split: &SplitPlan,
) -> Result<EvalReport> {
    check_candidates(teacher, split)?;
    let pairs = test
        .iter()
        .map(|it| Ok((it.label, student.student_logits(teacher, &it.image)?.argmax())))
        .collect::<Result<Vec<_>>>()?;
    EvalReport::from_predictions(&pairs, split)
}

/// Teacher accuracy on the same protocol, for reference.
pub fn evaluate_teacher<T: Scalar>(
    teacher: &TeacherModel<T>,
    test: &[LabeledImage],
    split: &SplitPlan,
) -> Result<EvalReport> {
    check_candidates(teacher, split)?;
    let pairs = test
        .iter()
        .map(|it| Ok((it.label, teacher.teacher_logits(&it.image)?.argmax())))
        .collect::<Result<Vec<_>>>()?;
    EvalReport::from_predictions(&pairs, split)
}
