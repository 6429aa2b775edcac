//! NC metrics against a naive reference written with explicit loops.

use etfcil_core::etf::EtfClassifier;
use etfcil_core::linalg::{gram_schmidt, Matrix, Rng, Vector, DEFAULT_PINV_TOL};
use etfcil_core::ncmetrics::{class_means, nc2, nc3, nc_report, FeatureSnapshot};
use etfcil_core::ClassId;

#[path = "support/naive_nc.rs"]
mod naive_nc;

use naive_nc::naive;

fn seeded_case(seed: u64) -> (usize, usize, Vec<(usize, Vec<f64>)>, Vec<Vec<f64>>) {
    let mut rng = Rng::new(seed);
    let k = 2 + rng.below(5);
    let d = k + rng.below(11 - k);
    let mut samples = Vec::new();
    for c in 0..k {
        let center = rng.normal_vector(d);
        for _ in 0..2 + rng.below(6) {
            let x: Vec<f64> = center.iter().map(|v| v + 0.3 * rng.normal()).collect();
            samples.push((c, x));
        }
    }
    let w: Vec<Vec<f64>> = (0..k).map(|_| rng.normal_vector(d).into_inner()).collect();
    (d, k, samples, w)
}

#[test]
fn matches_naive_reference_on_fifty_snapshots() {
    for seed in 0..50 {
        let (d, k, samples, w) = seeded_case(seed);
        let expected = naive(d, k, &samples, &w);
        let snap = FeatureSnapshot::new(
            d,
            samples
                .iter()
                .map(|(c, x)| (*c as ClassId, Vector::from(x.clone())))
                .collect(),
        )
        .unwrap();
        let wm = Matrix::from_columns(d, &w).unwrap();
        let r = nc_report(&snap, Some(&wm), DEFAULT_PINV_TOL).unwrap();
        assert!(
            (r.nc1 - expected.nc1).abs() < 1e-8 * expected.nc1.max(1.0),
            "seed {seed}: nc1 {} vs {}",
            r.nc1,
            expected.nc1
        );
        assert!((r.nc2 - expected.nc2).abs() < 1e-8, "seed {seed}: nc2");
        assert!(
            (r.nc3.unwrap() - expected.nc3).abs() < 1e-8,
            "seed {seed}: nc3"
        );
    }
}

fn rotation(rng: &mut Rng, d: usize) -> Matrix {
    gram_schmidt(&rng.normal_matrix(d, d), &Matrix::zeros(d, 0)).unwrap()
}

#[test]
fn metrics_are_rotation_invariant() {
    for seed in 0..20 {
        let (d, _, samples, w) = seeded_case(seed + 1000);
        let mut rng = Rng::new(seed);
        let q = rotation(&mut rng, d);
        let build = |rot: bool| {
            let map = |x: &[f64]| {
                if rot {
                    q.mul_vec(x).unwrap()
                } else {
                    Vector::from(x)
                }
            };
            let snap = FeatureSnapshot::new(
                d,
                samples
                    .iter()
                    .map(|(c, x)| (*c as ClassId, map(x)))
                    .collect(),
            )
            .unwrap();
            let cols: Vec<Vector> = w.iter().map(|c| map(c)).collect();
            nc_report(
                &snap,
                Some(&Matrix::from_columns(d, &cols).unwrap()),
                DEFAULT_PINV_TOL,
            )
            .unwrap()
        };
        let a = build(false);
        let b = build(true);
        assert!((a.nc1 - b.nc1).abs() < 1e-8 * a.nc1.max(1.0));
        assert!((a.nc2 - b.nc2).abs() < 1e-8);
        assert!((a.nc3.unwrap() - b.nc3.unwrap()).abs() < 1e-8);
    }
}

#[test]
fn nc2_is_scale_invariant() {
    let (d, _, samples, _) = seeded_case(7);
    let snap = FeatureSnapshot::new(
        d,
        samples
            .iter()
            .map(|(c, x)| (*c as ClassId, Vector::from(x.clone())))
            .collect(),
    )
    .unwrap();
    let m = class_means(&snap).unwrap();
    let base = nc2(&m.means, &m.global_mean).unwrap();
    for c in [0.1, 1.0, 10.0] {
        let v = nc2(&m.means.scaled(c), &m.global_mean.scaled(c)).unwrap();
        assert!((v - base).abs() < 1e-12);
    }
}

#[test]
fn exact_anchors_give_zero_nc2_and_nc3() {
    for k in [2, 3, 5, 8] {
        let clf = EtfClassifier::new(k + 3, k, k as u64).unwrap();
        let m = clf.anchors();
        let g = Vector::zeros(k + 3);
        assert!(nc2(m, &g).unwrap() < 1e-9);
        assert!(nc3(m, &g, m).unwrap() < 1e-9);
    }
}

#[test]
fn nc1_is_zero_only_without_within_class_spread() {
    let (d, _, samples, _) = seeded_case(3);
    let snap = |s: &[(usize, Vec<f64>)]| {
        FeatureSnapshot::new(
            d,
            s.iter()
                .map(|(c, x)| (*c as ClassId, Vector::from(x.clone())))
                .collect(),
        )
        .unwrap()
    };
    let spread = nc_report(&snap(&samples), None, DEFAULT_PINV_TOL).unwrap();
    assert!(spread.nc1 > 0.0);
    let means = class_means(&snap(&samples)).unwrap();
    let collapsed: Vec<(usize, Vec<f64>)> = samples
        .iter()
        .map(|(c, _)| (*c, means.means.column(*c).into_inner()))
        .collect();
    let r = nc_report(&snap(&collapsed), None, DEFAULT_PINV_TOL).unwrap();
    assert!(r.nc1 < 1e-20, "{}", r.nc1);
}
