mod common;

use common::checks;
use common::{random_labels, rng};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;
use tps::augment::{AugmentationSpec, Toggle};
use tps::eval::{accumulate_confusion, feature_variance_from_samples, miou, temporal_consistency, ConfusionMatrix};
use tps::flow::FlowField;
use tps::ClassMap;

#[test]
fn gaussian_clusters_match_closed_form() {
    for (seed, a, s) in checks::GAUSSIAN_CASES {
        let (report, inter, intra) = checks::gaussian_clusters(seed, a, s, checks::GAUSSIAN_PER_CLASS);
        assert!((report.sigma2_inter / inter - 1.0).abs() < 0.05, "{report:?} vs {inter}");
        assert!((report.sigma2_intra / intra - 1.0).abs() < 0.05, "{report:?} vs {intra}");
    }
}

#[test]
fn constant_class_features_have_zero_intra() {
    assert_eq!(checks::constant_cluster_intra(4), 0.0);
}

#[test]
fn identical_features_have_zero_inter() {
    let samples = vec![vec![1.5, -2.0, 0.25]; 40];
    let labels: Vec<usize> = (0..40).map(|i| i % 3).collect();
    let r = feature_variance_from_samples(&samples, &labels).unwrap();
    assert_eq!(r.sigma2_inter, 0.0);
    assert_eq!(r.sigma2_intra, 0.0);
}

#[test]
fn temporal_consistency_examples() {
    let mut r = rng(5);
    let a = random_labels(&mut r, 6, 6, 4);
    assert_eq!(temporal_consistency(&a, &a, &FlowField::zeros(6, 6)).unwrap(), 1.0);
    let zeros = ClassMap::filled(6, 6, 0);
    let ones = ClassMap::filled(6, 6, 1);
    assert_eq!(temporal_consistency(&zeros, &ones, &FlowField::zeros(6, 6)).unwrap(), 0.0);
    let mut shifted = ClassMap::filled(6, 6, 3);
    for y in 0..6 {
        for x in 0..5 {
            shifted.set(y, x + 1, a.get(y, x));
        }
    }
    assert_eq!(temporal_consistency(&a, &shifted, &FlowField::uniform(6, 6, 1.0, 0.0)).unwrap(), 1.0);
}

fn mirror(map: &ClassMap) -> ClassMap {
    let flip = AugmentationSpec {
        hflip: Toggle::on(()),
        ..AugmentationSpec::identity()
    };
    flip.geometric_log().apply_classes(map)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn miou_is_permutation_equivariant(seed in any::<u64>()) {
        let mut r = rng(seed);
        let k = r.random_range(2..6);
        let pred = random_labels(&mut r, 5, 5, k);
        let gt = random_labels(&mut r, 5, 5, k);
        let mut perm: Vec<u8> = (0..k as u8).collect();
        perm.shuffle(&mut r);
        let relabel = |m: &ClassMap| ClassMap::new(5, 5, m.data.iter().map(|&c| perm[c as usize]).collect()).unwrap();
        let mut a = ConfusionMatrix::new(k);
        accumulate_confusion(&pred, &gt, &mut a).unwrap();
        let mut b = ConfusionMatrix::new(k);
        accumulate_confusion(&relabel(&pred), &relabel(&gt), &mut b).unwrap();
        let (pa, ma) = miou(&a).unwrap();
        let (pb, mb) = miou(&b).unwrap();
        for c in 0..k {
            prop_assert_eq!(pa[c], pb[perm[c] as usize]);
        }
        prop_assert!((ma - mb).abs() < 1e-12);
    }

    #[test]
    fn confusion_is_additive_over_disjoint_pixels(seed in any::<u64>()) {
        let mut r = rng(seed);
        let k = r.random_range(2..6);
        let pred = random_labels(&mut r, 6, 6, k);
        let gt = random_labels(&mut r, 6, 6, k);
        let split: Vec<bool> = (0..36).map(|_| r.random_bool(0.5)).collect();
        let part = |keep: bool| {
            let data = gt.data.iter().zip(&split).map(|(&g, &s)| if s == keep { g } else { tps::IGNORE }).collect();
            ClassMap::new(6, 6, data).unwrap()
        };
        let mut whole = ConfusionMatrix::new(k);
        accumulate_confusion(&pred, &gt, &mut whole).unwrap();
        let mut sum = ConfusionMatrix::new(k);
        accumulate_confusion(&pred, &part(true), &mut sum).unwrap();
        let mut other = ConfusionMatrix::new(k);
        accumulate_confusion(&pred, &part(false), &mut other).unwrap();
        sum.merge(&other).unwrap();
        prop_assert_eq!(sum, whole);
    }

    #[test]
    fn temporal_consistency_symmetric_under_mirroring(seed in any::<u64>()) {
        let mut r = rng(seed);
        let (h, w) = (r.random_range(2..8), r.random_range(2..8));
        let a = random_labels(&mut r, h, w, 3);
        let b = random_labels(&mut r, h, w, 3);
        // One horizontal displacement per row: no two pixels land together,
        // so the row-major splat order never decides a pixel.
        let shifts: Vec<f64> = (0..h).map(|_| r.random_range(-2..=2) as f64).collect();
        let n = h * w;
        let flow = FlowField::new(h, w, (0..n).map(|p| shifts[p / w]).collect(), vec![0.0; n], vec![true; n]).unwrap();
        let direct = temporal_consistency(&a, &b, &flow).unwrap();
        let mirrored = temporal_consistency(&mirror(&a), &mirror(&b), &flow.hflip()).unwrap();
        prop_assert!((direct - mirrored).abs() < 1e-12);
    }
}
