use crate::error::{Error, Result};
use crate::scalar::{dot, norm, normalized, Scalar};

/// Similarity scores of one view against every candidate class.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitVector<T> {
    pub values: Vec<T>,
    pub view_index: usize,
}

impl<T: Scalar> LogitVector<T> {
    pub fn new(values: Vec<T>, view_index: usize) -> Self {
        Self { values, view_index }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Index of the largest value; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        argmax(&self.values)
    }
}

pub(crate) fn argmax<T: Scalar>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// `c x d` matrix of unit-norm class rows.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassEmbeddings<T> {
    dim: usize,
    rows: Vec<T>,
    names: Vec<String>,
}

impl<T: Scalar> ClassEmbeddings<T> {
    /// Normalises every row. Requires at least two classes of equal width.
    pub fn from_rows(rows: Vec<Vec<T>>, names: Vec<String>) -> Result<Self> {
        if rows.len() < 2 {
            return Err(Error::Parameter(format!(
                "need at least 2 classes, got {}",
                rows.len()
            )));
        }
        if names.len() != rows.len() {
            return Err(Error::Alignment {
                expected: rows.len(),
                got: names.len(),
            });
        }
        let dim = rows[0].len();
        let mut flat = Vec::with_capacity(dim * rows.len());
        for r in &rows {
            if r.len() != dim {
                return Err(Error::Alignment {
                    expected: dim,
                    got: r.len(),
                });
            }
            flat.extend(normalized(r).ok_or(Error::DegenerateFeature)?);
        }
        Ok(Self {
            dim,
            rows: flat,
            names,
        })
    }

    pub fn class_count(&self) -> usize {
        self.names.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.rows[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[T]> {
        self.rows.chunks_exact(self.dim)
    }

    pub fn to_rows(&self) -> Vec<Vec<T>> {
        self.rows().map(<[T]>::to_vec).collect()
    }
}

/// Cosine similarity of `feat` against every class row.
pub fn cosine_logits<T: Scalar>(feat: &[T], emb: &ClassEmbeddings<T>) -> Result<LogitVector<T>> {
    if feat.len() != emb.dim() {
        return Err(Error::Alignment {
            expected: emb.dim(),
            got: feat.len(),
        });
    }
    let fnorm = norm(feat);
    if fnorm == T::zero() || !fnorm.is_finite() {
        return Err(Error::DegenerateFeature);
    }
    let values = emb
        .rows()
        .map(|row| dot(feat, row) / (fnorm * norm(row)))
        .collect();
    Ok(LogitVector::new(values, 0))
}

/// Temperature softmax with max subtraction.
pub fn softmax_prob<T: Scalar>(logits: &[T], tau: T) -> Result<Vec<T>> {
    check_tau(tau)?;
    Ok(softmax(logits, tau))
}

pub(crate) fn check_tau<T: Scalar>(tau: T) -> Result<()> {
    if !(tau > T::zero()) || !tau.is_finite() {
        return Err(Error::Parameter(format!("temperature must be positive, got {tau}")));
    }
    Ok(())
}

pub(crate) fn softmax<T: Scalar>(logits: &[T], tau: T) -> Vec<T> {
    let m = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&v| ((v - m) / tau).exp()).collect();
    let z: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / z).collect()
}

/// `log softmax(logits / tau)`.
pub(crate) fn log_softmax<T: Scalar>(logits: &[T], tau: T) -> Vec<T> {
    let m = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let lse = logits
        .iter()
        .map(|&v| ((v - m) / tau).exp())
        .sum::<T>()
        .ln();
    logits.iter().map(|&v| (v - m) / tau - lse).collect()
}
