use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::error::{Error, Result};
use crate::imageops::Raster;
use crate::rng;
use crate::scalar::{norm, Scalar};
use crate::scoring::{
    check_tau, cosine_backward, cosine_logits, log_softmax, softmax, ClassEmbeddings, Encoder,
    EncoderKind, EncoderSpec, LogitVector,
};
use crate::teacher::{TeacherModel, INIT_STD};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StudentConfig {
    pub encoder: EncoderSpec,
    /// Affine layers in the projection, 1 to 3.
    pub proj_layers: usize,
}

impl Default for StudentConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderSpec {
                kind: EncoderKind::PatchMean,
                out_dim: 16,
                seed: 0,
            },
            proj_layers: 2,
        }
    }
}

/// Learnable student parameters; doubles as the gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct StudentParams<T> {
    pub prompt_bias: Vec<T>,
    pub prompt_scale: Vec<T>,
    /// Row-major `out x in` weight matrix per projection layer.
    pub proj_weights: Vec<Vec<T>>,
    pub proj_biases: Vec<Vec<T>>,
}

impl<T: Scalar> StudentParams<T> {
    fn zeros_like(&self) -> Self {
        let z = |v: &Vec<T>| vec![T::zero(); v.len()];
        Self {
            prompt_bias: z(&self.prompt_bias),
            prompt_scale: z(&self.prompt_scale),
            proj_weights: self.proj_weights.iter().map(z).collect(),
            proj_biases: self.proj_biases.iter().map(z).collect(),
        }
    }

    fn slices(&self) -> impl Iterator<Item = &Vec<T>> {
        std::iter::once(&self.prompt_bias)
            .chain(std::iter::once(&self.prompt_scale))
            .chain(self.proj_weights.iter())
            .chain(self.proj_biases.iter())
    }

    fn slices_mut(&mut self) -> impl Iterator<Item = &mut Vec<T>> {
        std::iter::once(&mut self.prompt_bias)
            .chain(std::iter::once(&mut self.prompt_scale))
            .chain(self.proj_weights.iter_mut())
            .chain(self.proj_biases.iter_mut())
    }

    pub fn to_flat(&self) -> Vec<T> {
        self.slices().flatten().copied().collect()
    }

    /// Inverse of [`to_flat`](Self::to_flat) using `self` as the shape template.
    pub fn from_flat(&self, flat: &[T]) -> Self {
        let mut out = self.clone();
        let mut it = flat.iter().copied();
        for s in out.slices_mut() {
            for v in s.iter_mut() {
                *v = it.next().expect("flat vector matches the template");
            }
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.slices().flatten().all(|v| v.is_finite())
    }

    fn norm(&self) -> f64 {
        self.slices()
            .flatten()
            .map(|v| v.as_f64() * v.as_f64())
            .sum::<f64>()
            .sqrt()
    }

    /// `self -= lr * grad`.
    pub fn descend(&mut self, grad: &Self, lr: T) {
        for (p, g) in self.slices_mut().zip(grad.slices()) {
            for (pv, &gv) in p.iter_mut().zip(g) {
                *pv -= lr * gv;
            }
        }
    }
}

/// Intermediate values kept for the backward pass.
struct Trace<T> {
    /// Modulated input `feat * scale + bias`.
    u: Vec<T>,
    /// Input to each layer.
    inputs: Vec<Vec<T>>,
    /// Pre-activation output of each layer.
    pre: Vec<Vec<T>>,
}

impl<T> Trace<T> {
    fn output(&self) -> &[T] {
        self.pre.last().expect("at least one layer")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudentModel<T> {
    encoder: Encoder<T>,
    params: StudentParams<T>,
    /// Layer widths, input first: `[d_s, d_t, ..., d_t]`.
    dims: Vec<usize>,
    tau: T,
    seed: u64,
}

impl<T: Scalar> StudentModel<T> {
    /// Unit scales, Gaussian prompt bias (std 0.02), Gaussian layer weights
    /// with std `1/sqrt(fan_in)`, zero hidden biases and a Gaussian output
    /// bias (std 0.02).
    pub fn new(encoder: Encoder<T>, d_t: usize, proj_layers: usize, tau: T, seed: u64) -> Result<Self> {
        check_tau(tau)?;
        if !(1..=3).contains(&proj_layers) {
            return Err(Error::Parameter(format!(
                "projection depth must be 1, 2 or 3, got {proj_layers}"
            )));
        }
        let d_s = encoder.out_dim();
        let mut dims = vec![d_s];
        dims.extend(std::iter::repeat_n(d_t, proj_layers));
        let mut rng = rng::stream(rng::sub_seed(seed, "student-init"));
        let mut gauss = |n: usize, std: f64| -> Vec<T> {
            let normal = Normal::new(0.0, std).expect("valid normal");
            (0..n).map(|_| T::of(normal.sample(&mut rng))).collect()
        };
        let prompt_bias = gauss(d_s, INIT_STD);
        let proj_weights = dims
            .windows(2)
            .map(|w| gauss(w[0] * w[1], 1.0 / (w[0] as f64).sqrt()))
            .collect();
        let mut proj_biases: Vec<Vec<T>> = dims[1..].iter().map(|&n| vec![T::zero(); n]).collect();
        // A nonzero output bias keeps the projection off the zero vector
        // when every hidden unit is inactive for some input.
        *proj_biases.last_mut().expect("at least one layer") = gauss(d_t, INIT_STD);
        Ok(Self {
            encoder,
            params: StudentParams {
                prompt_bias,
                prompt_scale: vec![T::one(); d_s],
                proj_weights,
                proj_biases,
            },
            dims,
            tau,
            seed,
        })
    }

    /// Pass-through student: unit scale, zero bias, identity square layers.
    /// Requires `encoder.out_dim() == d_t`.
    pub fn identity(encoder: Encoder<T>, proj_layers: usize, tau: T) -> Result<Self> {
        let d = encoder.out_dim();
        let mut s = Self::new(encoder, d, proj_layers, tau, 0)?;
        s.params.prompt_bias = vec![T::zero(); d];
        s.params.proj_biases.iter_mut().flatten().for_each(|b| *b = T::zero());
        for w in &mut s.params.proj_weights {
            w.iter_mut().enumerate().for_each(|(i, v)| {
                *v = if i / d == i % d { T::one() } else { T::zero() };
            });
        }
        Ok(s)
    }

    pub fn with_params(&self, params: StudentParams<T>) -> Result<Self> {
        let template = self.params.to_flat().len();
        if params.to_flat().len() != template {
            return Err(Error::Alignment {
                expected: template,
                got: params.to_flat().len(),
            });
        }
        Ok(Self {
            params,
            ..self.clone()
        })
    }

    pub fn params(&self) -> &StudentParams<T> {
        &self.params
    }

    pub fn encoder(&self) -> &Encoder<T> {
        &self.encoder
    }

    pub fn tau(&self) -> T {
        self.tau
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn proj_layers(&self) -> usize {
        self.dims.len() - 1
    }

    pub fn out_dim(&self) -> usize {
        *self.dims.last().expect("nonempty")
    }

    fn forward(&self, params: &StudentParams<T>, feat: &[T]) -> Trace<T> {
        let u: Vec<T> = feat
            .iter()
            .zip(&params.prompt_scale)
            .zip(&params.prompt_bias)
            .map(|((&f, &s), &b)| f * s + b)
            .collect();
        let layers = self.dims.len() - 1;
        let mut inputs = Vec::with_capacity(layers);
        let mut pre = Vec::with_capacity(layers);
        let mut h = u.clone();
        for l in 0..layers {
            let (n_in, n_out) = (self.dims[l], self.dims[l + 1]);
            let w = &params.proj_weights[l];
            let z: Vec<T> = (0..n_out)
                .map(|o| crate::scalar::dot(&w[o * n_in..(o + 1) * n_in], &h) + params.proj_biases[l][o])
                .collect();
            inputs.push(h);
            h = if l + 1 < layers {
                z.iter().map(|&v| v.max(T::zero())).collect()
            } else {
                z.clone()
            };
            pre.push(z);
        }
        Trace { u, inputs, pre }
    }

    /// Projected feature in teacher embedding space.
    pub fn project(&self, feat: &[T]) -> Vec<T> {
        self.forward(&self.params, feat).output().to_vec()
    }

    pub fn logits_from_feature(&self, feat: &[T], class_emb: &ClassEmbeddings<T>) -> Result<LogitVector<T>> {
        cosine_logits(&self.project(feat), class_emb)
    }

    pub fn student_logits(&self, teacher: &TeacherModel<T>, img: &Raster) -> Result<LogitVector<T>> {
        self.logits_from_feature(&self.encoder.encode(img)?, teacher.class_embeddings())
    }

    /// Mean `KL(softmax(t/tau) || softmax(s/tau))` over `(student feature,
    /// teacher logits)` pairs and its gradient with respect to every
    /// learnable parameter.
    pub fn loss_and_grad(
        &self,
        params: &StudentParams<T>,
        samples: &[(&[T], &LogitVector<T>)],
        class_emb: &ClassEmbeddings<T>,
        tau: T,
    ) -> Result<(T, StudentParams<T>)> {
        check_tau(tau)?;
        if samples.is_empty() {
            return Err(Error::Data("no accepted views to distil".into()));
        }
        let rows = class_emb.to_rows();
        let inv_m = T::one() / T::of(samples.len() as f64);
        let mut grad = params.zeros_like();
        let mut loss = T::zero();
        for (feat, teacher) in samples {
            if teacher.len() != class_emb.class_count() {
                return Err(Error::Alignment {
                    expected: class_emb.class_count(),
                    got: teacher.len(),
                });
            }
            let trace = self.forward(params, feat);
            let out = trace.output();
            if norm(out) == T::zero() {
                return Err(Error::DegenerateFeature);
            }
            let s = cosine_logits(out, class_emb)?.values;
            loss += kl_single(&teacher.values, &s, tau) * inv_m;
            let p = softmax(&teacher.values, tau);
            let q = softmax(&s, tau);
            let upstream: Vec<T> = q
                .iter()
                .zip(&p)
                .map(|(&qi, &pi)| (qi - pi) / tau * inv_m)
                .collect();
            let (mut g, _) = cosine_backward(out, &rows, &s, &upstream, false);
            for l in (0..self.dims.len() - 1).rev() {
                let (n_in, n_out) = (self.dims[l], self.dims[l + 1]);
                let input = &trace.inputs[l];
                let w = &params.proj_weights[l];
                let gw = &mut grad.proj_weights[l];
                for o in 0..n_out {
                    grad.proj_biases[l][o] += g[o];
                    for i in 0..n_in {
                        gw[o * n_in + i] += g[o] * input[i];
                    }
                }
                let mut g_in = vec![T::zero(); n_in];
                for o in 0..n_out {
                    for i in 0..n_in {
                        g_in[i] += w[o * n_in + i] * g[o];
                    }
                }
                if l > 0 {
                    for (gi, &z) in g_in.iter_mut().zip(&trace.pre[l - 1]) {
                        if z <= T::zero() {
                            *gi = T::zero();
                        }
                    }
                }
                g = g_in;
            }
            for (k, &gu) in g.iter().enumerate() {
                grad.prompt_bias[k] += gu;
                grad.prompt_scale[k] += gu * feat[k];
            }
            debug_assert_eq!(trace.u.len(), g.len());
        }
        Ok((loss, grad))
    }

    pub fn to_checkpoint(&self) -> StudentCheckpoint {
        let f = |v: &[T]| v.iter().map(|x| x.as_f64()).collect::<Vec<f64>>();
        let (width, height) = self.encoder.input_size();
        StudentCheckpoint {
            prompt_bias: f(&self.params.prompt_bias),
            prompt_scale: f(&self.params.prompt_scale),
            proj_weights: self
                .params
                .proj_weights
                .iter()
                .enumerate()
                .map(|(l, w)| w.chunks_exact(self.dims[l]).map(f).collect())
                .collect(),
            proj_biases: self.params.proj_biases.iter().map(|b| f(b)).collect(),
            metadata: StudentMetadata {
                d_s: self.dims[0],
                d_t: self.out_dim(),
                L: self.proj_layers(),
                tau: self.tau.as_f64(),
                seed: self.seed,
                encoder: self.encoder.spec(),
                width,
                height,
            },
        }
    }

    pub fn from_checkpoint(ck: &StudentCheckpoint) -> Result<Self> {
        let m = &ck.metadata;
        let encoder = Encoder::new(m.encoder, m.width, m.height)?;
        if encoder.out_dim() != m.d_s {
            return Err(Error::Schema("encoder width disagrees with d_s".into()));
        }
        let template = Self::new(encoder, m.d_t, m.L, T::of(m.tau), m.seed)?;
        let g = |v: &[f64]| v.iter().map(|&x| T::of(x)).collect::<Vec<T>>();
        let params = StudentParams {
            prompt_bias: g(&ck.prompt_bias),
            prompt_scale: g(&ck.prompt_scale),
            proj_weights: ck
                .proj_weights
                .iter()
                .map(|w| w.iter().flat_map(|r| g(r)).collect())
                .collect(),
            proj_biases: ck.proj_biases.iter().map(|b| g(b)).collect(),
        };
        let shapes_ok = params.prompt_bias.len() == m.d_s
            && params.prompt_scale.len() == m.d_s
            && params.proj_weights.len() == m.L
            && params
                .proj_weights
                .iter()
                .zip(&template.params.proj_weights)
                .all(|(a, b)| a.len() == b.len())
            && params
                .proj_biases
                .iter()
                .zip(&template.params.proj_biases)
                .all(|(a, b)| a.len() == b.len());
        if !shapes_ok {
            return Err(Error::Schema("student checkpoint arrays have the wrong shape".into()));
        }
        template.with_params(params)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        checkpoint::save_json(path, &self.to_checkpoint())
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_checkpoint(&checkpoint::load_json(path)?)
    }

    pub(crate) fn params_norm(&self) -> f64 {
        self.params.norm()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudentCheckpoint {
    pub prompt_bias: Vec<f64>,
    pub prompt_scale: Vec<f64>,
    pub proj_weights: Vec<Vec<Vec<f64>>>,
    pub proj_biases: Vec<Vec<f64>>,
    pub metadata: StudentMetadata,
}

#[allow(non_snake_case)]
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudentMetadata {
    pub d_s: usize,
    pub d_t: usize,
    pub L: usize,
    pub tau: f64,
    pub seed: u64,
    pub encoder: EncoderSpec,
    pub width: usize,
    pub height: usize,
}

/// `KL(softmax(t/tau) || softmax(s/tau))` with `0 log 0 = 0`.
fn kl_single<T: Scalar>(teacher: &[T], student: &[T], tau: T) -> T {
    let lp = log_softmax(teacher, tau);
    let lq = log_softmax(student, tau);
    lp.iter()
        .zip(&lq)
        .map(|(&a, &b)| {
            let p = a.exp();
            if p == T::zero() {
                T::zero()
            } else {
                p * (a - b)
            }
        })
        .sum()
}

/// Mean KL divergence between aligned teacher and student logit lists.
pub fn kl_loss<T: Scalar>(
    teacher_logits: &[LogitVector<T>],
    student_logits: &[LogitVector<T>],
    tau: T,
) -> Result<T> {
    check_tau(tau)?;
    if teacher_logits.is_empty() || teacher_logits.len() != student_logits.len() {
        return Err(Error::Alignment {
            expected: teacher_logits.len(),
            got: student_logits.len(),
        });
    }
    let mut total = T::zero();
    for (t, s) in teacher_logits.iter().zip(student_logits) {
        if t.len() != s.len() {
            return Err(Error::Alignment {
                expected: t.len(),
                got: s.len(),
            });
        }
        total += kl_single(&t.values, &s.values, tau);
    }
    Ok(total / T::of(teacher_logits.len() as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn lv(v: &[f64]) -> LogitVector<f64> {
        LogitVector::new(v.to_vec(), 0)
    }

    #[test]
    fn kl_examples() {
        let a = vec![lv(&[0.3, -0.1, 0.8])];
        assert_eq!(kl_loss(&a, &a, 1.0).unwrap(), 0.0);
        let t = vec![lv(&[2f64.ln(), 0.0])];
        let s = vec![lv(&[0.0, 2f64.ln()])];
        let k = kl_loss(&t, &s, 1.0).unwrap();
        let oracle = 2.0 / 3.0 * 2f64.ln() + 1.0 / 3.0 * 0.5f64.ln();
        assert!((k - oracle).abs() < 1e-12);
        assert!((k - 2f64.ln() / 3.0).abs() < 1e-12);
        assert!(kl_loss(&t, &[], 1.0).is_err());
        assert!(kl_loss(&t, &[lv(&[1.0, 2.0, 3.0])], 1.0).is_err());
    }

    #[test]
    fn kl_handles_underflowing_teacher_mass() {
        let t = vec![lv(&[0.0, -2000.0])];
        let s = vec![lv(&[0.0, 0.0])];
        let k = kl_loss(&t, &s, 1.0).unwrap();
        assert!(k.is_finite());
        assert!((k - 2f64.ln()).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn kl_is_nonnegative(
            pairs in prop::collection::vec(
                (prop::collection::vec(-3.0f64..3.0, 5), prop::collection::vec(-3.0f64..3.0, 5)),
                1..6,
            ),
            tau in 0.05f64..4.0,
        ) {
            let t: Vec<_> = pairs.iter().map(|(a, _)| lv(a)).collect();
            let s: Vec<_> = pairs.iter().map(|(_, b)| lv(b)).collect();
            prop_assert!(kl_loss(&t, &s, tau).unwrap() >= 0.0);
            prop_assert!(kl_loss(&t, &t, tau).unwrap().abs() < 1e-15);
        }
    }

    fn enc(dim: usize) -> Encoder<f64> {
        Encoder::new(
            EncoderSpec {
                kind: EncoderKind::PatchMean,
                out_dim: dim,
                seed: 0,
            },
            16,
            16,
        )
        .unwrap()
    }

    #[test]
    fn depth_is_validated() {
        assert!(StudentModel::new(enc(4), 8, 0, 1.0, 0).is_err());
        assert!(StudentModel::new(enc(4), 8, 4, 1.0, 0).is_err());
        let s = StudentModel::new(enc(4), 8, 3, 1.0, 0).unwrap();
        assert_eq!(s.out_dim(), 8);
        assert_eq!(s.params().proj_weights[0].len(), 32);
        assert!(s.params().prompt_scale.iter().all(|&v| v == 1.0));
    }

    fn identity_matches_direct(img: &Raster, layers: std::ops::RangeInclusive<usize>) {
        let e = enc(8);
        let emb = ClassEmbeddings::from_rows(
            (0..3).map(|k| (0..8).map(|i| ((i * 3 + k) % 5) as f64 - 1.5).collect()).collect(),
            vec!["a".into(), "b".into(), "c".into()],
        )
        .unwrap();
        let f = e.encode(img).unwrap();
        let direct = cosine_logits(&f, &emb).unwrap();
        for layers in layers {
            let s = StudentModel::identity(e.clone(), layers, 1.0).unwrap();
            let l = s.logits_from_feature(&f, &emb).unwrap();
            for (a, b) in l.values.iter().zip(&direct.values) {
                assert!((a - b).abs() < 1e-12, "depth {layers}");
            }
        }
    }

    #[test]
    fn identity_student_reproduces_encoder_cosines() {
        // centred features of any sign pass a single affine layer unchanged
        let dark = Raster::from_fn(16, 16, |x, y| [(x * 15) as u8, (y * 9) as u8, 40]).unwrap();
        identity_matches_direct(&dark, 1..=1);
        // deeper stacks need non-negative features to get through the ReLUs
        let bright = Raster::from_fn(16, 16, |x, y| [(130 + x * 7) as u8, (140 + y * 6) as u8, 200]).unwrap();
        identity_matches_direct(&bright, 1..=3);
    }

    #[test]
    fn checkpoint_round_trip_is_byte_stable() {
        let s = StudentModel::new(enc(4), 6, 2, 0.5, 9).unwrap();
        let a = checkpoint::to_json_string(&s.to_checkpoint()).unwrap();
        let back: StudentCheckpoint = serde_json::from_str(&a).unwrap();
        let s2 = StudentModel::<f64>::from_checkpoint(&back).unwrap();
        assert_eq!(s2, s);
        assert_eq!(checkpoint::to_json_string(&s2.to_checkpoint()).unwrap(), a);
        assert!(a.contains("\"L\":2"));
    }

    #[test]
    fn flat_round_trip() {
        let s = StudentModel::new(enc(4), 6, 3, 1.0, 2).unwrap();
        let flat = s.params().to_flat();
        assert_eq!(s.params().from_flat(&flat), *s.params());
    }
}
