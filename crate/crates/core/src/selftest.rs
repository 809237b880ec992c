//! Quick invariant checks run by `augpt selftest`.

use rand::Rng;

use crate::augment::{build_view_set, AugmentConfig};
use crate::config::RunConfig;
use crate::distill::StudentModel;
use crate::gate::gate_logits;
use crate::harness::harmonic_mean;
use crate::imageops::{apply_named, auto_contrast, horizontal_flip, invert, Raster};
use crate::rng;
use crate::scoring::{ClassEmbeddings, Encoder, EncoderKind, EncoderSpec, LogitVector};
use crate::teacher::{ce_loss_and_grad, TeacherParams};

const IDENTITIES: &[(&str, f64)] = &[
    ("Rotate", 0.0),
    ("ShearX", 0.0),
    ("ShearY", 0.0),
    ("TranslateX", 0.0),
    ("TranslateY", 0.0),
    ("Cutout", 0.0),
    ("Posterize", 8.0),
    ("Solarize", 256.0),
    ("SolarizeAdd", 0.0),
    ("Color", 1.0),
    ("Contrast", 1.0),
    ("Brightness", 1.0),
    ("Sharpness", 1.0),
];

fn random_image(r: &mut rng::Stream) -> Raster {
    let (w, h) = (r.random_range(8..24), r.random_range(8..24));
    let mut px = vec![0u8; w * h * 3];
    r.fill(&mut px[..]);
    Raster::new(w, h, px).expect("valid size")
}

fn transforms() -> bool {
    let mut r = rng::stream(1);
    (0..20).all(|_| {
        let img = random_image(&mut r);
        let ids = IDENTITIES.iter().all(|&(name, a)| {
            apply_named(&img, name, a, &mut rng::stream(7)).ok().as_ref() == Some(&img)
        });
        let ac = auto_contrast(&img);
        ids && invert(&invert(&img)) == img
            && horizontal_flip(&horizontal_flip(&img)) == img
            && auto_contrast(&ac) == ac
    })
}

fn harmonic() -> bool {
    (harmonic_mean(86.91, 80.17) - 83.41).abs() <= 0.01 && harmonic_mean(0.0, 0.0) == 0.0
}

fn gate() -> bool {
    let mut r = rng::stream(2);
    (0..300).all(|_| {
        let c = r.random_range(2..8);
        let m = r.random_range(1..8);
        let logits: Vec<LogitVector<f64>> = (0..m)
            .map(|j| LogitVector::new((0..c).map(|_| f64::from(r.random_range(0..3u8))).collect(), j))
            .collect();
        let Ok(g) = gate_logits(&logits) else { return false };
        let tops: Vec<usize> = logits
            .iter()
            .map(|l| (0..c).find(|&i| l.values[i] == l.values.iter().cloned().fold(f64::MIN, f64::max)).unwrap())
            .collect();
        let counts: Vec<usize> = (0..c).map(|k| tops.iter().filter(|&&t| t == k).count()).collect();
        let best = *counts.iter().max().unwrap();
        let mode = counts.iter().position(|&n| n == best).unwrap();
        let expect: Vec<usize> = (0..m).filter(|&j| tops[j] == mode).collect();
        g.consensus == mode && g.accepted_indices == expect && !expect.is_empty()
    })
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    diff / scale
}

fn central<F: Fn(&[f64]) -> f64>(f: F, x: &[f64]) -> Vec<f64> {
    let h = 1e-6;
    (0..x.len())
        .map(|i| {
            let mut p = x.to_vec();
            let mut q = x.to_vec();
            p[i] += h;
            q[i] -= h;
            (f(&p) - f(&q)) / (2.0 * h)
        })
        .collect()
}

fn gradients() -> bool {
    let mut r = rng::stream(3);
    let mut vec = |n: usize| -> Vec<f64> { (0..n).map(|_| r.random_range(-1.0..1.0)).collect() };
    let feats: Vec<Vec<f64>> = (0..4).map(|_| vec(5)).collect();
    let labels = [0, 1, 2, 1];
    let params = TeacherParams {
        class_rows: (0..3).map(|_| vec(5)).collect(),
        visual_bias: vec(5),
    };
    let Ok((_, g)) = ce_loss_and_grad(&params, &feats, &labels, 0.7) else { return false };
    let fd = central(
        |x| ce_loss_and_grad(&params.from_flat(x), &feats, &labels, 0.7).map_or(f64::NAN, |v| v.0),
        &params.to_flat(),
    );
    if !(rel_err(&g.to_flat(), &fd) < 1e-4) {
        return false;
    }
    let rows: Vec<Vec<f64>> = (0..3).map(|_| vec(6)).collect();
    let emb = ClassEmbeddings::from_rows(rows, (0..3).map(|k| k.to_string()).collect()).expect("rows");
    let feat = vec(4);
    let target = LogitVector::new(vec(3), 0);
    (1..=3).all(|layers| {
        let enc = Encoder::new(
            EncoderSpec {
                kind: EncoderKind::PatchMean,
                out_dim: 4,
                seed: 0,
            },
            8,
            8,
        )
        .expect("encoder");
        let Ok(s) = StudentModel::<f64>::new(enc, 6, layers, 0.5, layers as u64) else { return false };
        let samples = [(feat.as_slice(), &target)];
        let p = s.params().clone();
        let Ok((_, g)) = s.loss_and_grad(&p, &samples, &emb, 0.5) else { return false };
        let fd = central(
            |x| s.loss_and_grad(&p.from_flat(x), &samples, &emb, 0.5).map_or(f64::NAN, |v| v.0),
            &p.to_flat(),
        );
        rel_err(&g.to_flat(), &fd) < 1e-4
    })
}

fn replay() -> bool {
    let img = random_image(&mut rng::stream(4));
    let cfg = AugmentConfig {
        corruption_rate: 0.3,
        ..Default::default()
    };
    let a = build_view_set(&img, &cfg, "probe", 3, 11);
    let b = build_view_set(&img, &cfg, "probe", 3, 11);
    matches!((a, b), (Ok(a), Ok(b)) if a == b)
}

fn config() -> bool {
    let cfg = RunConfig::default();
    RunConfig::parse(&cfg.to_text()).is_ok_and(|c| c == cfg)
}

/// Named checks and whether each passed.
pub fn run() -> Vec<(&'static str, bool)> {
    vec![
        ("transform identities and involutions", transforms()),
        ("harmonic mean", harmonic()),
        ("gate matches mode counting", gate()),
        ("analytic gradients", gradients()),
        ("view-set replay", replay()),
        ("config round trip", config()),
    ]
}

#[cfg(test)]
mod tests {
    #[test]
    fn all_checks_pass() {
        for (name, ok) in super::run() {
            assert!(ok, "{name}");
        }
    }
}
