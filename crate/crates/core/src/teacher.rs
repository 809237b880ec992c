//! Frozen in-domain teacher: learnable class embeddings and a visual bias
//! fit with temperature cross-entropy, then frozen.

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::augment::ViewSet;
use crate::checkpoint;
use crate::error::{Error, Result};
use crate::imageops::Raster;
use crate::rng;
use crate::scalar::{normalized, Scalar};
use crate::scoring::{
    check_tau, cosine_backward, cosine_logits, log_softmax, softmax, ClassEmbeddings, Encoder,
    EncoderKind, EncoderSpec, LogitVector,
};

/// Standard deviation of the Gaussian parameter initialisation.
pub const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, PartialEq)]
pub struct TeacherConfig {
    pub encoder: EncoderSpec,
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
    pub tau: f64,
    pub seed: u64,
}

impl Default for TeacherConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderSpec {
                kind: EncoderKind::PatchMean,
                out_dim: 32,
                seed: 0,
            },
            epochs: 20,
            lr: 0.002,
            batch: 16,
            tau: 1.0,
            seed: 0,
        }
    }
}

/// Trainable teacher parameters (also used as a gradient container).
#[derive(Debug, Clone, PartialEq)]
pub struct TeacherParams<T> {
    pub class_rows: Vec<Vec<T>>,
    pub visual_bias: Vec<T>,
}

impl<T: Scalar> TeacherParams<T> {
    pub fn to_flat(&self) -> Vec<T> {
        self.class_rows
            .iter()
            .flatten()
            .chain(&self.visual_bias)
            .copied()
            .collect()
    }

    /// Inverse of [`to_flat`](Self::to_flat) using `self` as the shape template.
    pub fn from_flat(&self, flat: &[T]) -> Self {
        let mut it = flat.iter().copied();
        let class_rows = self
            .class_rows
            .iter()
            .map(|r| it.by_ref().take(r.len()).collect())
            .collect();
        let visual_bias = it.take(self.visual_bias.len()).collect();
        Self {
            class_rows,
            visual_bias,
        }
    }
}

/// Gaussian-perturbed class means and a Gaussian visual bias.
pub fn initial_params<T: Scalar>(
    features: &[Vec<T>],
    labels: &[usize],
    class_count: usize,
    seed: u64,
) -> Result<TeacherParams<T>> {
    let dim = features.first().map(Vec::len).ok_or_else(|| Error::Data("empty training set".into()))?;
    let mut rng = rng::stream(rng::sub_seed(seed, "teacher-init"));
    let noise = Normal::new(0.0, INIT_STD).expect("valid normal");
    let mut class_rows = Vec::with_capacity(class_count);
    for k in 0..class_count {
        let mut mean = vec![T::zero(); dim];
        let mut n = 0usize;
        for (f, _) in features.iter().zip(labels).filter(|(_, &y)| y == k) {
            for (m, &v) in mean.iter_mut().zip(f) {
                *m += v;
            }
            n += 1;
        }
        if n == 0 {
            return Err(Error::Data(format!("class {k} has no training examples")));
        }
        let mean: Vec<T> = mean.iter().map(|&m| m / T::of(n as f64)).collect();
        let base = normalized(&mean).unwrap_or(mean);
        let row: Vec<T> = base
            .iter()
            .map(|&v| v + T::of(noise.sample(&mut rng)))
            .collect();
        class_rows.push(normalized(&row).ok_or(Error::DegenerateFeature)?);
    }
    let visual_bias = (0..dim).map(|_| T::of(noise.sample(&mut rng))).collect();
    Ok(TeacherParams {
        class_rows,
        visual_bias,
    })
}

/// Mean cross-entropy of `softmax(cos(f + bias, rows) / tau)` and its gradient
/// with respect to the raw (unnormalised) class rows and the bias.
pub fn ce_loss_and_grad<T: Scalar>(
    params: &TeacherParams<T>,
    features: &[Vec<T>],
    labels: &[usize],
    tau: T,
) -> Result<(T, TeacherParams<T>)> {
    check_tau(tau)?;
    if features.is_empty() || features.len() != labels.len() {
        return Err(Error::Alignment {
            expected: features.len(),
            got: labels.len(),
        });
    }
    let c = params.class_rows.len();
    let d = params.visual_bias.len();
    let inv_b = T::one() / T::of(features.len() as f64);
    let mut loss = T::zero();
    let mut grad = TeacherParams {
        class_rows: vec![vec![T::zero(); d]; c],
        visual_bias: vec![T::zero(); d],
    };
    for (f, &y) in features.iter().zip(labels) {
        if y >= c {
            return Err(Error::Data(format!("label {y} outside {c} classes")));
        }
        let z: Vec<T> = f.iter().zip(&params.visual_bias).map(|(&a, &b)| a + b).collect();
        let cos = raw_cosines(&z, &params.class_rows)?;
        let logp = log_softmax(&cos, tau);
        loss -= logp[y] * inv_b;
        let p = softmax(&cos, tau);
        let upstream: Vec<T> = p
            .iter()
            .enumerate()
            .map(|(i, &pi)| {
                let hot = if i == y { T::one() } else { T::zero() };
                (pi - hot) / tau * inv_b
            })
            .collect();
        let (gz, grows) = cosine_backward(&z, &params.class_rows, &cos, &upstream, true);
        for (acc, g) in grad.visual_bias.iter_mut().zip(&gz) {
            *acc += *g;
        }
        for (acc, g) in grad.class_rows.iter_mut().zip(&grows) {
            for (a, &v) in acc.iter_mut().zip(g) {
                *a += v;
            }
        }
    }
    Ok((loss, grad))
}

fn raw_cosines<T: Scalar>(z: &[T], rows: &[Vec<T>]) -> Result<Vec<T>> {
    use crate::scalar::{dot, norm};
    let zn = norm(z);
    if zn == T::zero() {
        return Err(Error::DegenerateFeature);
    }
    Ok(rows.iter().map(|r| dot(z, r) / (zn * norm(r))).collect())
}

/// Frozen teacher. No method takes `&mut self`.
#[derive(Debug, Clone, PartialEq)]
pub struct TeacherModel<T> {
    encoder: Encoder<T>,
    class_emb: ClassEmbeddings<T>,
    visual_bias: Vec<T>,
    tau: T,
    seed: u64,
    loss_trace: Vec<f64>,
}

/// Fits the teacher on labelled `(image, class)` pairs and freezes it.
pub fn fit_teacher<T: Scalar>(
    train: &[(Raster, usize)],
    class_names: &[String],
    cfg: &TeacherConfig,
) -> Result<TeacherModel<T>> {
    let first = train.first().ok_or_else(|| Error::Data("empty training set".into()))?;
    let encoder = Encoder::new(cfg.encoder, first.0.width(), first.0.height())?;
    let features = train
        .iter()
        .map(|(img, _)| encoder.encode(img))
        .collect::<Result<Vec<_>>>()?;
    let labels: Vec<usize> = train.iter().map(|(_, y)| *y).collect();
    fit_teacher_on_features(encoder, &features, &labels, class_names, cfg)
}

pub fn fit_teacher_on_features<T: Scalar>(
    encoder: Encoder<T>,
    features: &[Vec<T>],
    labels: &[usize],
    class_names: &[String],
    cfg: &TeacherConfig,
) -> Result<TeacherModel<T>> {
    let c = class_names.len();
    if c < 2 {
        return Err(Error::Parameter(format!("teacher needs at least 2 classes, got {c}")));
    }
    if features.is_empty() {
        return Err(Error::Data("empty training set".into()));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= c) {
        return Err(Error::Data(format!("label {bad} outside {c} classes")));
    }
    if cfg.batch == 0 {
        return Err(Error::Parameter("batch must be positive".into()));
    }
    let tau = T::of(cfg.tau);
    check_tau(tau)?;
    let lr = T::of(cfg.lr);
    let mut params = initial_params(features, labels, c, cfg.seed)?;
    let mut loss_trace = vec![ce_loss_and_grad(&params, features, labels, tau)?.0.as_f64()];
    let mut order: Vec<usize> = (0..features.len()).collect();
    for epoch in 0..cfg.epochs {
        let mut rng = rng::stream(rng::combine(&[cfg.seed, rng::key_hash("teacher-epoch"), epoch as u64]));
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch) {
            if lr == T::zero() {
                continue;
            }
            let bf: Vec<Vec<T>> = chunk.iter().map(|&i| features[i].clone()).collect();
            let bl: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let (loss, grad) = ce_loss_and_grad(&params, &bf, &bl, tau)?;
            if !loss.is_finite() {
                return Err(Error::Numerical(format!("teacher loss {loss} at epoch {epoch}")));
            }
            for (row, g) in params.class_rows.iter_mut().zip(&grad.class_rows) {
                for (p, &gv) in row.iter_mut().zip(g) {
                    *p -= lr * gv;
                }
                *row = normalized(row).ok_or(Error::DegenerateFeature)?;
            }
            for (p, &gv) in params.visual_bias.iter_mut().zip(&grad.visual_bias) {
                *p -= lr * gv;
            }
        }
        loss_trace.push(ce_loss_and_grad(&params, features, labels, tau)?.0.as_f64());
    }
    let class_emb = ClassEmbeddings::from_rows(params.class_rows, class_names.to_vec())?;
    Ok(TeacherModel {
        encoder,
        class_emb,
        visual_bias: params.visual_bias,
        tau,
        seed: cfg.seed,
        loss_trace,
    })
}

impl<T: Scalar> TeacherModel<T> {
    /// Assembles a frozen teacher from existing parts.
    pub fn from_parts(
        encoder: Encoder<T>,
        class_emb: ClassEmbeddings<T>,
        visual_bias: Vec<T>,
        tau: T,
        seed: u64,
    ) -> Result<Self> {
        check_tau(tau)?;
        if class_emb.dim() != encoder.out_dim() || visual_bias.len() != encoder.out_dim() {
            return Err(Error::Alignment {
                expected: encoder.out_dim(),
                got: class_emb.dim().max(visual_bias.len()),
            });
        }
        Ok(Self {
            encoder,
            class_emb,
            visual_bias,
            tau,
            seed,
            loss_trace: Vec::new(),
        })
    }

    pub fn encoder(&self) -> &Encoder<T> {
        &self.encoder
    }

    pub fn class_embeddings(&self) -> &ClassEmbeddings<T> {
        &self.class_emb
    }

    pub fn visual_bias(&self) -> &[T] {
        &self.visual_bias
    }

    pub fn tau(&self) -> T {
        self.tau
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn class_count(&self) -> usize {
        self.class_emb.class_count()
    }

    /// Full-data loss at initialisation and after every epoch.
    pub fn loss_trace(&self) -> &[f64] {
        &self.loss_trace
    }

    /// `encoder(img) + visual_bias`.
    pub fn shifted_feature(&self, img: &Raster) -> Result<Vec<T>> {
        Ok(self
            .encoder
            .encode(img)?
            .iter()
            .zip(&self.visual_bias)
            .map(|(&a, &b)| a + b)
            .collect())
    }

    pub fn teacher_logits(&self, img: &Raster) -> Result<LogitVector<T>> {
        cosine_logits(&self.shifted_feature(img)?, &self.class_emb)
    }

    /// Logits for every member of a view set, raw first.
    pub fn view_set_logits(&self, vs: &ViewSet) -> Result<Vec<LogitVector<T>>> {
        vs.members()
            .enumerate()
            .map(|(j, img)| {
                let mut l = self.teacher_logits(img)?;
                l.view_index = j;
                Ok(l)
            })
            .collect()
    }

    /// New teacher whose candidate set is `self`'s rows followed by `extra`.
    pub fn extended(&self, extra: Vec<(String, Vec<T>)>) -> Result<Self> {
        let mut rows = self.class_emb.to_rows();
        let mut names = self.class_emb.names().to_vec();
        for (name, row) in extra {
            names.push(name);
            rows.push(row);
        }
        self.with_candidates(rows, names)
    }

    /// New teacher with a replaced candidate set; encoder and bias are kept.
    pub fn with_candidates(&self, rows: Vec<Vec<T>>, names: Vec<String>) -> Result<Self> {
        let class_emb = ClassEmbeddings::from_rows(rows, names)?;
        let mut t = Self::from_parts(
            self.encoder.clone(),
            class_emb,
            self.visual_bias.clone(),
            self.tau,
            self.seed,
        )?;
        t.loss_trace = self.loss_trace.clone();
        Ok(t)
    }

    pub fn to_checkpoint(&self) -> TeacherCheckpoint {
        let (width, height) = self.encoder.input_size();
        TeacherCheckpoint {
            class_emb: self
                .class_emb
                .rows()
                .map(|r| r.iter().map(|v| v.as_f64()).collect())
                .collect(),
            visual_bias: self.visual_bias.iter().map(|v| v.as_f64()).collect(),
            metadata: TeacherMetadata {
                c: self.class_count(),
                d_t: self.encoder.out_dim(),
                tau: self.tau.as_f64(),
                seed: self.seed,
                class_names: self.class_emb.names().to_vec(),
                encoder: self.encoder.spec(),
                width,
                height,
            },
        }
    }

    pub fn from_checkpoint(ck: &TeacherCheckpoint) -> Result<Self> {
        let m = &ck.metadata;
        if ck.class_emb.len() != m.c {
            return Err(Error::Schema(format!(
                "checkpoint declares c = {} but has {} rows",
                m.c,
                ck.class_emb.len()
            )));
        }
        let encoder = Encoder::new(m.encoder, m.width, m.height)?;
        if encoder.out_dim() != m.d_t {
            return Err(Error::Schema("encoder width disagrees with d_t".into()));
        }
        let rows = ck
            .class_emb
            .iter()
            .map(|r| r.iter().map(|&v| T::of(v)).collect())
            .collect();
        let class_emb = ClassEmbeddings::from_rows(rows, m.class_names.clone())?;
        Self::from_parts(
            encoder,
            class_emb,
            ck.visual_bias.iter().map(|&v| T::of(v)).collect(),
            T::of(m.tau),
            m.seed,
        )
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        checkpoint::save_json(path, &self.to_checkpoint())
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_checkpoint(&checkpoint::load_json(path)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeacherCheckpoint {
    pub class_emb: Vec<Vec<f64>>,
    pub visual_bias: Vec<f64>,
    pub metadata: TeacherMetadata,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeacherMetadata {
    pub c: usize,
    pub d_t: usize,
    pub tau: f64,
    pub seed: u64,
    pub class_names: Vec<String>,
    pub encoder: EncoderSpec,
    pub width: usize,
    pub height: usize,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augment::{build_view_set, AugmentConfig};
    use crate::scalar::norm;

    fn blob(class: usize, jitter: u8) -> Raster {
        let colors = [[220u8, 30, 30], [30, 220, 30], [30, 30, 220]];
        let mut c = colors[class];
        c[0] = c[0].saturating_add(jitter);
        Raster::from_fn(16, 16, |x, y| if (x / 8 + y / 8) % 2 == class % 2 { c } else { [90, 90, 90] })
            .unwrap()
    }

    fn toy_set() -> Vec<(Raster, usize)> {
        (0..3)
            .flat_map(|k| (0..4).map(move |j| (blob(k, j as u8 * 5), k)))
            .collect()
    }

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("class{i}")).collect()
    }

    fn cfg() -> TeacherConfig {
        TeacherConfig {
            encoder: EncoderSpec {
                kind: EncoderKind::PatchMean,
                out_dim: 16,
                seed: 1,
            },
            epochs: 20,
            lr: 0.05,
            batch: 4,
            tau: 0.1,
            seed: 3,
        }
    }

    #[test]
    fn separable_toy_set_is_fit_perfectly() {
        let data = toy_set();
        let t: TeacherModel<f64> = fit_teacher(&data, &names(3), &cfg()).unwrap();
        // nearest-prototype oracle on the encoder features agrees the data is separable
        let enc = t.encoder();
        let feats: Vec<Vec<f64>> = data.iter().map(|(i, _)| enc.encode(i).unwrap()).collect();
        let protos: Vec<Vec<f64>> = (0..3)
            .map(|k| {
                let members: Vec<&Vec<f64>> =
                    feats.iter().zip(&data).filter(|(_, d)| d.1 == k).map(|(f, _)| f).collect();
                (0..16)
                    .map(|i| members.iter().map(|m| m[i]).sum::<f64>() / members.len() as f64)
                    .collect()
            })
            .collect();
        for (f, (_, y)) in feats.iter().zip(&data) {
            let nearest = (0..3)
                .min_by(|&a, &b| {
                    let da: f64 = f.iter().zip(&protos[a]).map(|(x, p)| (x - p).powi(2)).sum();
                    let db: f64 = f.iter().zip(&protos[b]).map(|(x, p)| (x - p).powi(2)).sum();
                    da.partial_cmp(&db).unwrap()
                })
                .unwrap();
            assert_eq!(nearest, *y);
        }
        for (img, y) in &data {
            assert_eq!(t.teacher_logits(img).unwrap().argmax(), *y);
        }
        for r in t.class_embeddings().rows() {
            assert!((norm(r) - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_learning_rate_keeps_initialisation() {
        let data = toy_set();
        let c = TeacherConfig { lr: 0.0, ..cfg() };
        let t: TeacherModel<f64> = fit_teacher(&data, &names(3), &c).unwrap();
        let feats: Vec<Vec<f64>> = data.iter().map(|(i, _)| t.encoder().encode(i).unwrap()).collect();
        let labels: Vec<usize> = data.iter().map(|d| d.1).collect();
        let init = initial_params(&feats, &labels, 3, c.seed).unwrap();
        for (got, want) in t.class_embeddings().rows().zip(&init.class_rows) {
            for (a, b) in got.iter().zip(want) {
                assert!((a - b).abs() < 1e-15);
            }
        }
        assert_eq!(t.visual_bias(), &init.visual_bias[..]);
    }

    #[test]
    fn rejects_bad_inputs() {
        let data = toy_set();
        assert!(matches!(
            fit_teacher::<f64>(&data, &names(1), &cfg()),
            Err(Error::Parameter(_))
        ));
        assert!(matches!(
            fit_teacher::<f64>(&[], &names(3), &cfg()),
            Err(Error::Data(_))
        ));
        let mut bad = data.clone();
        bad[0].1 = 7;
        assert!(matches!(
            fit_teacher::<f64>(&bad, &names(3), &cfg()),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn loss_does_not_increase_with_small_steps() {
        let c = TeacherConfig {
            lr: 1e-3,
            epochs: 15,
            ..cfg()
        };
        let t: TeacherModel<f64> = fit_teacher(&toy_set(), &names(3), &c).unwrap();
        for w in t.loss_trace().windows(2) {
            assert!(w[1] <= w[0] + 1e-6, "{:?}", t.loss_trace());
        }
    }

    #[test]
    fn logits_are_pure_and_ordered() {
        let t: TeacherModel<f64> = fit_teacher(&toy_set(), &names(3), &cfg()).unwrap();
        let img = blob(1, 3);
        assert_eq!(t.teacher_logits(&img).unwrap(), t.teacher_logits(&img).unwrap());
        let vs = build_view_set(&img, &AugmentConfig::default(), "v", 0, 0).unwrap();
        let ls = t.view_set_logits(&vs).unwrap();
        assert_eq!(ls.len(), 6);
        for (j, l) in ls.iter().enumerate() {
            assert_eq!(l.view_index, j);
            assert_eq!(*l, {
                let mut x = t.teacher_logits(vs.member(j)).unwrap();
                x.view_index = j;
                x
            });
        }
    }

    #[test]
    fn shifted_feature_on_a_row_scores_one() {
        let t: TeacherModel<f64> = fit_teacher(&toy_set(), &names(3), &cfg()).unwrap();
        let img = blob(2, 0);
        let z = t.shifted_feature(&img).unwrap();
        let mut rows = t.class_embeddings().to_rows();
        rows[1] = z;
        let t2 = t.with_candidates(rows, names(3)).unwrap();
        let l = t2.teacher_logits(&img).unwrap();
        assert_eq!(l.argmax(), 1);
        assert!((l.values[1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn checkpoint_round_trip_is_byte_stable() {
        let t: TeacherModel<f64> = fit_teacher(&toy_set(), &names(3), &cfg()).unwrap();
        let a = checkpoint::to_json_string(&t.to_checkpoint()).unwrap();
        let back: TeacherCheckpoint = serde_json::from_str(&a).unwrap();
        let t2 = TeacherModel::<f64>::from_checkpoint(&back).unwrap();
        let b = checkpoint::to_json_string(&t2.to_checkpoint()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn extension_appends_unit_rows() {
        let t: TeacherModel<f64> = fit_teacher(&toy_set(), &names(3), &cfg()).unwrap();
        let t2 = t.extended(vec![("extra".into(), vec![2.0; 16])]).unwrap();
        assert_eq!(t2.class_count(), 4);
        assert!((norm(t2.class_embeddings().row(3)) - 1.0).abs() < 1e-12);
        assert_eq!(t.class_count(), 3);
    }
}
