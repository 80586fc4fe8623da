use proptest::prelude::*;

use ski_core::losses::{
    autoregressive_lm_loss, ce_from_similarities, distill_kl, distill_mse, feature_kd, scd_total, LossValue,
};
use ski_core::primitives::softmax;
use ski_core::tensor::Matrix;
use ski_core::types::LogitMatrix;
use ski_core::zseval::harmonic_mean;

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Matrix> {
    prop::collection::vec(-3.0f64..3.0, rows * cols).prop_map(move |v| Matrix::from_vec(rows, cols, v).unwrap())
}

proptest! {
    #[test]
    fn softmax_is_shift_invariant(logits in prop::collection::vec(-20.0f64..20.0, 2..12), shift in -500.0f64..500.0) {
        let shifted: Vec<f64> = logits.iter().map(|x| x + shift).collect();
        let (p, q) = (softmax(&logits, 1.0).unwrap(), softmax(&shifted, 1.0).unwrap());
        for (a, b) in p.iter().zip(&q) {
            prop_assert!((a - b).abs() < 1e-9);
        }
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn classification_ce_is_at_least_zero(sims in matrix(4, 5), t in prop::collection::vec(0usize..5, 4)) {
        let v = ce_from_similarities(&sims, &t, 0.07).unwrap().scalar;
        prop_assert!(v >= 0.0 && v.is_finite());
    }

    #[test]
    fn distillation_losses_vanish_on_identical_logits(a in matrix(3, 6)) {
        let l = LogitMatrix::from_matrix(a.clone()).unwrap();
        prop_assert!(distill_mse(&l, &l).unwrap().scalar.abs() < 1e-12);
        prop_assert!(distill_kl(&l, &l, 2.0).unwrap().scalar.abs() < 1e-12);
        prop_assert!(feature_kd(&a, &a, None).unwrap().scalar.abs() < 1e-12);
    }

    #[test]
    fn kl_distillation_is_non_negative(a in matrix(3, 6), b in matrix(3, 6), tau in 0.1f64..4.0) {
        let (la, lb) = (LogitMatrix::from_matrix(a).unwrap(), LogitMatrix::from_matrix(b).unwrap());
        prop_assert!(distill_kl(&la, &lb, tau).unwrap().scalar >= -1e-12);
    }

    #[test]
    fn scd_total_is_affine_in_alpha(ce_v in 0.0f64..5.0, ce_s in 0.0f64..5.0, d in 0.0f64..5.0, alpha in 0.0f64..100.0) {
        let parts = (LossValue::single("ce_video", ce_v), LossValue::single("ce_skeleton", ce_s), LossValue::single("distill", d));
        let t = scd_total(&parts.0, &parts.1, &parts.2, alpha).unwrap();
        prop_assert!((t.scalar - (ce_v + ce_s + alpha * d)).abs() < 1e-9);
        prop_assert_eq!(t.component("distill").unwrap().weight, alpha);
    }

    #[test]
    fn masked_out_positions_do_not_affect_the_lm_loss(logits in matrix(5, 7), noise in matrix(5, 7)) {
        let targets = [1, 2, 3, 4, 5];
        let mask = [false, true, true, false, true];
        let mut other = logits.clone();
        for r in [0, 3] {
            other.row_mut(r).copy_from_slice(noise.row(r));
        }
        let a = autoregressive_lm_loss(&logits, &targets, &mask).unwrap().scalar;
        let b = autoregressive_lm_loss(&other, &targets, &mask).unwrap().scalar;
        prop_assert_eq!(a, b);
    }

    #[test]
    fn harmonic_mean_lies_between_min_and_mean(a in 0.1f64..100.0, b in 0.1f64..100.0) {
        let h = harmonic_mean(&[a, b]).unwrap();
        prop_assert!(h >= a.min(b) - 1e-12 && h <= (a + b) / 2.0 + 1e-12);
    }
}
