use pco_core::augment::{augment_pair_traced, warp_image, warp_mask, AffineParams, AugmentSpec};
use pco_core::classify::area_percent;
use pco_core::dataset::{crop_roi, Roi};
use pco_core::groundtruth::{generate_gt2, generate_gt2_stages, KMeansParams};
use pco_core::synth::{synthesize_sample, SynthSpec};

fn eye(area: f64, seed: u64) -> pco_core::synth::SynthSample {
    synthesize_sample(
        &SynthSpec {
            area_fraction: area,
            ..SynthSpec::default()
        },
        seed,
    )
    .unwrap()
}

#[test]
fn gt2_of_negative_eyes_stays_below_two_percent() {
    for seed in 0..20 {
        let s = eye(0.0, seed);
        let crop = crop_roi(&s.image).unwrap();
        let gt2 = generate_gt2(&crop, seed).unwrap();
        let a = area_percent(&gt2, crop.roi()).unwrap();
        assert!(a < 2.0, "seed {seed}: GT2 area {a:.3}%");
    }
}

#[test]
fn gt2_tracks_synthetic_truth_on_positive_eyes() {
    for (i, area) in [0.1, 0.3, 0.5].into_iter().enumerate() {
        let s = eye(area, 40 + i as u64);
        let crop = crop_roi(&s.image).unwrap();
        let truth = pco_core::dataset::crop_mask(&s.mask, s.image.roi()).unwrap();
        let gt2 = generate_gt2(&crop, 1).unwrap();
        let d = pco_core::metrics::dice(&gt2, &truth).unwrap();
        assert!(d > 0.8, "area {area}: GT2 Dice vs truth {d:.3}");
    }
}

#[test]
fn gt2_stages_nest_and_repeat() {
    let s = eye(0.25, 3);
    let crop = crop_roi(&s.image).unwrap();
    let a = generate_gt2_stages(&crop, &KMeansParams::default(), 9).unwrap();
    let b = generate_gt2_stages(&crop, &KMeansParams::default(), 9).unwrap();
    assert_eq!(a, b);
    assert!(a.clustered.is_subset_of(&a.dilated));
    assert!(a.dilated.is_subset_of(&a.closed));
}

#[test]
fn augmented_area_stays_within_fifteen_percent() {
    let spec = AugmentSpec::default();
    let mut worst: f64 = 0.0;
    let mut trials = 0;
    for k in 0..10 {
        let s = eye(0.05 + 0.05 * k as f64, 100 + k);
        assert!(s.mask.area() >= 100);
        for seed in 0..100 {
            let (_, m, _) = augment_pair_traced(&s.image, &s.mask, &spec, seed).unwrap();
            let rel = (m.area() as f64 - s.mask.area() as f64).abs() / s.mask.area() as f64;
            worst = worst.max(rel);
            trials += 1;
        }
    }
    assert_eq!(trials, 1000);
    assert!(worst <= 0.15, "worst relative area change {worst:.4}");
}

#[test]
fn recorded_params_reproduce_the_draw() {
    let s = eye(0.3, 8);
    let spec = AugmentSpec {
        rotation_deg: 15.0,
        width_shift_frac: 0.1,
        height_shift_frac: 0.1,
        shear_deg: 5.0,
        horizontal_flip: true,
    };
    for seed in 0..50 {
        let (img, m, params) = augment_pair_traced(&s.image, &s.mask, &spec, seed).unwrap();
        let back = AffineParams::parse_csv_row(&params.csv_row()).unwrap();
        assert_eq!(back, params);
        assert_eq!(warp_mask(&s.mask, &back), m);
        assert_eq!(&warp_image(s.image.pixels(), &back), img.pixels());
    }
}

#[test]
fn identity_spec_leaves_pair_untouched() {
    let s = eye(0.2, 2);
    for seed in 0..20 {
        let (img, m, p) =
            augment_pair_traced(&s.image, &s.mask, &AugmentSpec::identity(), seed).unwrap();
        assert!(p.is_identity());
        assert_eq!(img, s.image);
        assert_eq!(m, s.mask);
    }
    let roi = Roi::inscribed(64);
    assert_eq!(roi.to_mask(64, 64).area(), roi.pixel_count());
}
