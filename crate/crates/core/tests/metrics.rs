use drsnet::metrics::*;
use drsnet_tensor::{ops, Tensor, Var};
use proptest::prelude::*;

fn bits(len: usize) -> impl Strategy<Value = Vec<u8>> {
    prop::collection::vec(0u8..=1, len)
}

#[test]
fn perfect_prediction_scores_one() {
    let target = [0, 1, 1, 0, 1, 0, 0, 1];
    let m = ImageMetrics::compute(&target, &target).unwrap();
    assert_eq!(m.foreground_accuracy.value, 1.0);
    assert_eq!(m.foreground_recall.value, 1.0);
    assert_eq!(m.miou, 1.0);
}

#[test]
fn empty_prediction_is_flagged_degenerate() {
    let m = ImageMetrics::compute(&[0, 0, 0, 0], &[0, 1, 0, 1]).unwrap();
    assert!(m.foreground_accuracy.degenerate);
    assert_eq!(m.foreground_accuracy.value, 0.0);
    assert!(!m.foreground_recall.degenerate);
    let s = summarize(&[m], Averaging::PerImage).unwrap();
    assert_eq!(s.degenerate_images, 1);
}

#[test]
fn per_image_and_pooled_averages_differ_as_expected() {
    // Image 1: tp=1 fp=1; image 2: tp=3 fp=0.
    let a = ImageMetrics::compute(&[1, 1, 0, 0], &[1, 0, 0, 0]).unwrap();
    let b = ImageMetrics::compute(&[1, 1, 1, 0], &[1, 1, 1, 0]).unwrap();
    let per = summarize(&[a.clone(), b.clone()], Averaging::PerImage).unwrap();
    let pooled = summarize(&[a, b], Averaging::Pooled).unwrap();
    assert!((per.foreground_accuracy - 0.75).abs() < 1e-12);
    assert!((pooled.foreground_accuracy - 0.8).abs() < 1e-12);
    assert_eq!(pooled.n_images, 2);
}

#[test]
fn summarize_rejects_empty_input() {
    assert!(summarize(&[], Averaging::Pooled).is_err());
}

#[test]
fn confusion_rejects_bad_input() {
    assert!(confusion(&[0, 1], &[0]).is_err());
    assert!(confusion(&[0, 2], &[0, 1]).is_err());
    assert!(bce_loss(&[0.5], &[0.5], LossReduction::Mean).is_err());
}

#[test]
fn multiclass_miou_skips_absent_classes() {
    let m = ConfusionMatrix::from_labels(&[0, 1, 1, 0], &[0, 1, 0, 0], 3).unwrap();
    assert_eq!(m.class_iou(2), None);
    let expected = (2.0 / 3.0 + 1.0 / 2.0) / 2.0;
    assert!((miou(&m) - expected).abs() < 1e-12);
}

#[test]
fn logits_loss_matches_probability_loss() {
    let logits = Tensor::new([1, 1, 2, 3], vec![-3.0, -0.5, 0.0, 0.4, 2.0, 6.0]).unwrap();
    let target = Tensor::new([1, 1, 2, 3], vec![0.0, 1.0, 1.0, 0.0, 1.0, 1.0]).unwrap();
    let prob: Vec<f64> = logits.data().iter().map(|z| 1.0 / (1.0 + (-z).exp())).collect();
    let via_logits = ops::bce_with_logits(&Var::constant(logits), &target, LossReduction::Mean.into())
        .unwrap()
        .value()
        .item();
    let via_prob = bce_loss(target.data(), &prob, LossReduction::Mean).unwrap();
    assert!((via_logits - via_prob).abs() < 1e-12);
}

#[test]
fn confusion_extremes() {
    let target = [1, 0, 1, 1, 0, 0];
    let inverse: Vec<u8> = target.iter().map(|v| 1 - v).collect();
    let same = confusion(&target, &target).unwrap();
    assert_eq!((same.fp, same.fn_), (0, 0));
    let flipped = confusion(&inverse, &target).unwrap();
    assert_eq!((flipped.tp, flipped.tn), (0, 0));
}

#[test]
fn binarize_conventions() {
    assert_eq!(binarize(&[0.5], 0.5), vec![1]);
    assert_eq!(binarize(&[0.3; 6], 0.5), vec![0; 6]);
}

proptest! {
    #[test]
    fn binarize_is_idempotent(prob in prop::collection::vec(0.0f64..=1.0, 1..40)) {
        let once = binarize(&prob, 0.5);
        let as_prob: Vec<f64> = once.iter().map(|&v| v as f64).collect();
        prop_assert_eq!(binarize(&as_prob, 0.5), once);
    }

    #[test]
    fn metrics_ignore_pixel_order(
        (pred, target, keys) in (1usize..60).prop_flat_map(|n| (bits(n), bits(n), prop::collection::vec(any::<u32>(), n)))
    ) {
        let mut order: Vec<usize> = (0..pred.len()).collect();
        order.sort_by_key(|&i| (keys[i], i));
        let p2: Vec<u8> = order.iter().map(|&i| pred[i]).collect();
        let t2: Vec<u8> = order.iter().map(|&i| target[i]).collect();
        prop_assert_eq!(ImageMetrics::compute(&pred, &target).unwrap(), ImageMetrics::compute(&p2, &t2).unwrap());
    }

    #[test]
    fn miou_is_symmetric_under_class_swap((pred, target) in (1usize..60).prop_flat_map(|n| (bits(n), bits(n)))) {
        let np: Vec<u8> = pred.iter().map(|v| 1 - v).collect();
        let nt: Vec<u8> = target.iter().map(|v| 1 - v).collect();
        let a = ImageMetrics::compute(&pred, &target).unwrap().miou;
        let b = ImageMetrics::compute(&np, &nt).unwrap().miou;
        prop_assert!((a - b).abs() < 1e-12);
    }
    #[test]
    fn ratios_lie_in_unit_interval((pred, target) in (1usize..80).prop_flat_map(|n| (bits(n), bits(n)))) {
        let m = ImageMetrics::compute(&pred, &target).unwrap();
        let c = m.counts;
        prop_assert_eq!(c.total(), pred.len() as u64);
        for v in [m.foreground_accuracy.value, m.foreground_recall.value, m.miou] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        let ious: Vec<f64> = (0..2).filter_map(|k| c.to_matrix().class_iou(k)).collect();
        let lo = ious.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = ious.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(m.miou >= lo - 1e-12 && m.miou <= hi + 1e-12);
    }

    #[test]
    fn swapping_prediction_and_truth_swaps_precision_and_recall(
        (pred, target) in (1usize..80).prop_flat_map(|n| (bits(n), bits(n)))
    ) {
        let a = ImageMetrics::compute(&pred, &target).unwrap();
        let b = ImageMetrics::compute(&target, &pred).unwrap();
        prop_assert_eq!(a.foreground_accuracy, b.foreground_recall);
        prop_assert!((a.miou - b.miou).abs() < 1e-12);
    }

    #[test]
    fn bce_is_nonnegative_and_sum_scales_mean(
        (target, prob) in (1usize..50).prop_flat_map(|n| (bits(n), prop::collection::vec(0.0f64..=1.0, n)))
    ) {
        let t: Vec<f64> = target.iter().map(|&v| v as f64).collect();
        let mean = bce_loss(&t, &prob, LossReduction::Mean).unwrap();
        let sum = bce_loss(&t, &prob, LossReduction::Sum).unwrap();
        prop_assert!(mean >= 0.0 && mean.is_finite());
        prop_assert!((sum - mean * t.len() as f64).abs() <= 1e-9 * sum.max(1.0));
    }

    #[test]
    fn binarize_thresholds_inclusively(prob in prop::collection::vec(0.0f64..=1.0, 1..40), thr in 0.0f64..=1.0) {
        let b = binarize(&prob, thr);
        for (p, v) in prob.iter().zip(b) {
            prop_assert_eq!(v == 1, *p >= thr);
        }
    }
}
