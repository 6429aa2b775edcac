use etfcil_core::etf::EtfClassifier;
use etfcil_core::linalg::{Matrix, Rng, Vector};
use etfcil_core::losses::{ce_loss, pap_grad, pap_loss};
use proptest::prelude::*;

fn fd_grad(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let mut p = x.to_vec();
            let mut m = x.to_vec();
            p[i] += h;
            m[i] -= h;
            (f(&p) - f(&m)) / (2.0 * h)
        })
        .collect()
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    let scale: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    diff / scale.max(1e-8)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn gradients_match_finite_differences(seed in any::<u64>(), k in 2usize..=8, extra in 0usize..=8) {
        let d = k + extra;
        let clf = EtfClassifier::new(d, k, seed).unwrap();
        let mut rng = Rng::new(seed ^ 1);
        let x = rng.normal_vector(d);
        let label = rng.below(k);

        let analytic = pap_grad(&x, label, &clf).unwrap();
        let numeric = fd_grad(|c| pap_loss(c, label, &clf).unwrap(), &x, 1e-5);
        prop_assert!(rel_err(&analytic, &numeric) < 1e-5);

        let analytic = ce_loss(&x, label, &clf, 16.0).unwrap().grad;
        let numeric = fd_grad(|c| ce_loss(c, label, &clf, 16.0).unwrap().loss, &x, 1e-6);
        prop_assert!(rel_err(&analytic, &numeric) < 1e-5, "{:?} {:?} {}", analytic, numeric, x.norm());
    }

    #[test]
    fn pap_ignores_order_of_other_anchors(seed in any::<u64>(), k in 3usize..=10) {
        let d = k + 2;
        let clf = EtfClassifier::new(d, k, seed).unwrap();
        let mut rng = Rng::new(seed.wrapping_add(3));
        let target = rng.below(k);
        let mut others: Vec<usize> = (0..k).filter(|j| *j != target).collect();
        rng.shuffle(&mut others);
        // Same column set, non-target columns reordered.
        let mut order = Vec::with_capacity(k);
        let mut it = others.into_iter();
        for j in 0..k {
            order.push(if j == target { target } else { it.next().unwrap() });
        }
        let cols: Vec<Vector> = order.iter().map(|&j| clf.basis().column(j)).collect();
        let permuted = EtfClassifier::from_basis(Matrix::from_columns(d, &cols).unwrap(), 0).unwrap();
        let c = rng.normal_vector(d);
        let a = pap_loss(&c, target, &clf).unwrap();
        let b = pap_loss(&c, target, &permuted).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
    }

    #[test]
    fn ce_value_ignores_feature_scale(seed in any::<u64>(), k in 2usize..=8) {
        let clf = EtfClassifier::new(k + 1, k, seed).unwrap();
        let x = Rng::new(seed ^ 9).normal_vector(k + 1);
        let base = ce_loss(&x, 0, &clf, 16.0).unwrap().loss;
        for s in [0.5, 2.0, 10.0] {
            let v = ce_loss(&x.scaled(s), 0, &clf, 16.0).unwrap().loss;
            prop_assert!((v - base).abs() < 1e-12 * base.max(1.0));
        }
    }
}
