use augpt::augment::{apply_group, build_view_set, sample_policy_group, AugmentConfig, Strategy as ViewStrategy};
use augpt::imageops::{
    apply_policy, decode_ppm, encode_ppm, equalize, horizontal_flip, invert, posterize, solarize, Raster,
    POLICY_TABLE,
};
use augpt::imageops::MIN_SIDE;
use augpt::rng;
use proptest::prelude::*;

fn raster() -> impl Strategy<Value = Raster> {
    (MIN_SIDE..24, MIN_SIDE..24).prop_flat_map(|(w, h)| {
        prop::collection::vec(any::<u8>(), w * h * 3).prop_map(move |px| Raster::new(w, h, px).unwrap())
    })
}

proptest! {
    #[test]
    fn ppm_round_trips(img in raster()) {
        prop_assert_eq!(decode_ppm(&encode_ppm(&img)).unwrap(), img);
    }

    #[test]
    fn every_policy_keeps_shape(img in raster(), pick in 0usize..16, t in 0.0f64..1.0, seed: u64) {
        let spec = POLICY_TABLE[pick];
        let a = spec.a_min + t * (spec.a_max - spec.a_min);
        let out = apply_policy(&img, &spec, a, &mut rng::stream(seed)).unwrap();
        prop_assert_eq!((out.width(), out.height()), (img.width(), img.height()));
    }

    #[test]
    fn policies_replay_from_the_aux_seed(img in raster(), pick in 0usize..16, t in 0.0f64..1.0, seed: u64) {
        let spec = POLICY_TABLE[pick];
        let a = spec.a_min + t * (spec.a_max - spec.a_min);
        let first = apply_policy(&img, &spec, a, &mut rng::stream(seed)).unwrap();
        let again = apply_policy(&img, &spec, a, &mut rng::stream(seed)).unwrap();
        prop_assert_eq!(first, again);
    }

    #[test]
    fn point_laws(img in raster()) {
        prop_assert_eq!(invert(&invert(&img)), img.clone());
        prop_assert_eq!(horizontal_flip(&horizontal_flip(&img)), img.clone());
        prop_assert_eq!(posterize(&img, 8), img.clone());
        prop_assert_eq!(solarize(&img, 256.0), img.clone());
        prop_assert_eq!(solarize(&img, 0.0), invert(&img));
        let once = equalize(&img);
        prop_assert_eq!(once.width(), img.width());
    }

    #[test]
    fn posterize_keeps_high_bits(img in raster(), bits in 1u32..=8) {
        let mask = (0xffu32 << (8 - bits)) as u8;
        let out = posterize(&img, bits);
        for (a, b) in img.pixels().iter().zip(out.pixels()) {
            prop_assert_eq!(a & mask, *b);
        }
    }
}

#[test]
fn out_of_range_strength_is_rejected() {
    let img = Raster::filled(8, 8, [10, 20, 30]).unwrap();
    for spec in POLICY_TABLE {
        assert!(apply_policy(&img, &spec, spec.a_max + 1.0, &mut rng::stream(0)).is_err(), "{:?}", spec.name);
    }
}

fn sample_image() -> Raster {
    Raster::from_fn(24, 16, |x, y| [(x * 10) as u8, (y * 15) as u8, ((x + y) * 5) as u8]).unwrap()
}

#[test]
fn view_sets_replay_from_provenance() {
    let img = sample_image();
    let cfg = AugmentConfig::default();
    let a = build_view_set(&img, &cfg, "k", 3, 99).unwrap();
    let b = build_view_set(&img, &cfg, "k", 3, 99).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.len(), cfg.n_views + 1);
    assert_eq!(a.raw, img);
    for (view, steps) in a.views.iter().zip(&a.provenance) {
        assert_eq!(steps.len(), cfg.steps);
        assert_eq!(view.width(), img.width());
    }
    let other_epoch = build_view_set(&img, &cfg, "k", 4, 99).unwrap();
    let other_key = build_view_set(&img, &cfg, "j", 3, 99).unwrap();
    assert_ne!(a.views, other_epoch.views);
    assert_ne!(a.views, other_key.views);
}

#[test]
fn zero_views_is_just_the_raw_image() {
    let img = sample_image();
    let cfg = AugmentConfig {
        n_views: 0,
        ..Default::default()
    };
    let vs = build_view_set(&img, &cfg, "k", 0, 1).unwrap();
    assert_eq!(vs.len(), 1);
    assert_eq!(vs.member(0), &img);
}

#[test]
fn copy_strategy_repeats_the_raw_image() {
    let img = sample_image();
    let cfg = AugmentConfig {
        strategy: ViewStrategy::CopyOnly,
        ..Default::default()
    };
    let vs = build_view_set(&img, &cfg, "k", 0, 1).unwrap();
    assert!(vs.members().all(|m| *m == img));
}

#[test]
fn full_corruption_replaces_every_view() {
    let img = sample_image();
    let cfg = AugmentConfig {
        corruption_rate: 1.0,
        ..Default::default()
    };
    let vs = build_view_set(&img, &cfg, "k", 0, 1).unwrap();
    assert!(vs.corrupted.iter().all(|&c| c));
    assert_eq!(vs.raw, img);
}

#[test]
fn groups_compose_in_order() {
    let img = sample_image();
    let cfg = AugmentConfig::default();
    let group = sample_policy_group(&cfg, &mut rng::stream(5)).unwrap();
    let stepwise = group.iter().fold(img.clone(), |acc, d| {
        apply_policy(&acc, &d.policy, d.amplitude, &mut rng::stream(d.aux_seed)).unwrap()
    });
    assert_eq!(apply_group(&img, &group).unwrap(), stepwise);
}
