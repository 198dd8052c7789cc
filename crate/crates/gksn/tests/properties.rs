//! Property tests for the core invariants: symmetry of features and
//! energies, loss shape, file-format round trips, gradient agreement.

use gksn::datasets::{load_frames, save_frames};
use gksn::diffengine::grad_check;
use gksn::invariants::{featurize, gram, FeatureConfig, Frame, Metric};
use gksn::network::{default_knots, univariate_eval, UnivariateFunction};
use gksn::training::{huber, nll};
use gksn::verify::random_orthogonal;

use nalgebra::DMatrix;
use proptest::prelude::*;

fn coords_strategy(max_m: usize, max_n: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    (1..=max_m, 1..=max_n).prop_flat_map(|(m, n)| {
        proptest::collection::vec(
            proptest::collection::vec(-10.0..10.0f64, n),
            m,
        )
    })
}

proptest! {
    #[test]
    fn featurize_is_invariant_under_rigid_motion(
        rows in coords_strategy(8, 4),
        qseed in 0u64..1000,
        shift in -5.0..5.0f64,
    ) {
        let frame = Frame::from_rows(&rows).unwrap();
        let n = frame.dim();
        let config = FeatureConfig { linear: false, ..FeatureConfig::default() };
        let q = random_orthogonal(n, qseed);
        let mut moved = frame.coords() * q.transpose();
        for v in moved.iter_mut() {
            *v += shift;
        }
        let fa = featurize(&frame, &config, &Metric::Euclidean).unwrap();
        let fb = featurize(&Frame::new(moved).unwrap(), &config, &Metric::Euclidean).unwrap();
        // The sqrt in the outer feature has a noise floor of about
        // sqrt(n*eps) x the squared coordinate scale when its argument
        // cancels (collinear pairs), hence the 4x margin on the scale.
        let scale = 1.0
            + 4.0
                * rows
                    .iter()
                    .map(|r| r.iter().map(|v| v * v).sum::<f64>())
                    .fold(0.0, f64::max);
        for (a, b) in fa.values.iter().zip(fb.values.iter()) {
            prop_assert!((a - b).abs() / (scale + a.abs()) <= 1e-8, "{a} vs {b}");
        }
    }

    #[test]
    fn gram_is_symmetric_and_invariant(rows in coords_strategy(8, 4), qseed in 0u64..1000) {
        let frame = Frame::from_rows(&rows).unwrap();
        let g = gram(&frame, &Metric::Euclidean).unwrap();
        prop_assert_eq!((&g - g.transpose()).abs().max(), 0.0);

        let q = random_orthogonal(frame.dim(), qseed);
        let rotated = Frame::new(frame.coords() * q.transpose()).unwrap();
        let gq = gram(&rotated, &Metric::Euclidean).unwrap();
        let resid = (&g - &gq).norm() / (1.0 + g.norm());
        prop_assert!(resid <= 1e-10, "residual {}", resid);
    }

    #[test]
    fn quadratic_feature_multiset_is_permutation_invariant(
        rows in coords_strategy(6, 3),
        perm_seed in 0u64..720,
    ) {
        let m = rows.len();
        let frame = Frame::from_rows(&rows).unwrap();
        let config = FeatureConfig { linear: false, ..FeatureConfig::default() };
        let width = config.per_pair_width();
        let perms = gksn::verify::permutations(m);
        let perm = &perms[(perm_seed as usize) % perms.len()];
        let permuted = Frame::new(DMatrix::from_fn(m, frame.dim(), |i, j| {
            frame.coords()[(perm[i], j)]
        }))
        .unwrap();

        let tuples = |f: &Frame| {
            let feats = featurize(f, &config, &Metric::Euclidean).unwrap();
            let mut t: Vec<Vec<u64>> = feats
                .values
                .chunks(width)
                .map(|c| c.iter().map(|v| v.to_bits()).collect())
                .collect();
            t.sort();
            t
        };
        prop_assert_eq!(tuples(&frame), tuples(&permuted));
    }

    #[test]
    fn huber_is_nonnegative_symmetric_and_bounded_by_square(
        pred in -50.0..50.0f64,
        target in -50.0..50.0f64,
        delta in 0.1..5.0f64,
    ) {
        let h = huber(pred, target, delta);
        prop_assert!(h >= 0.0);
        prop_assert!((h - huber(target, pred, delta)).abs() <= 1e-12);
        let e = (pred - target).abs();
        prop_assert!(h <= 0.5 * e * e + 1e-12);
        // Continuity across the quadratic/linear switch.
        let at = huber(target + delta, target, delta);
        let just_past = huber(target + delta + 1e-9, target, delta);
        prop_assert!((at - just_past).abs() <= 1e-6);
    }

    #[test]
    fn nll_is_monotone_decreasing(a in 1e-12..1.0f64, b in 1e-12..1.0f64) {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        prop_assert!(nll(lo) >= nll(hi));
    }

    #[test]
    fn univariate_is_linear_between_knots(
        coeffs in proptest::collection::vec(-2.0..2.0f64, 8),
        slope in -2.0..2.0f64,
        x in -4.0..4.0f64,
    ) {
        let f = UnivariateFunction::new(default_knots(8), coeffs, slope).unwrap();
        let h = 1e-4;
        prop_assume!(f.knots.iter().all(|k| (x - k).abs() > 2.0 * h));
        let second = univariate_eval(&f, x + h) - 2.0 * univariate_eval(&f, x)
            + univariate_eval(&f, x - h);
        prop_assert!(second.abs() <= 1e-10, "second difference {}", second);
    }

    #[test]
    fn frames_roundtrip_losslessly(
        rows in coords_strategy(6, 3),
        energy in proptest::option::of(-1e6..1e6f64),
        types in proptest::collection::vec(0i64..100, 6),
    ) {
        let m = rows.len();
        let mut frame = Frame::from_rows(&rows)
            .unwrap()
            .with_types(types[..m].to_vec())
            .unwrap();
        frame.set_energy(energy);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("frames.txt");
        save_frames(std::slice::from_ref(&frame), &path).unwrap();
        let loaded = load_frames(&path).unwrap();
        prop_assert_eq!(loaded.frames.len(), 1);
        let back = &loaded.frames[0];
        prop_assert_eq!(back.energy().map(f64::to_bits), frame.energy().map(f64::to_bits));
        prop_assert_eq!(back.types(), frame.types());
        for (a, b) in frame.coords().iter().zip(back.coords().iter()) {
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn composed_gradients_match_finite_differences(
        x in 0.2..3.0f64,
        y in 0.2..3.0f64,
        z in -3.0..-0.2f64,
    ) {
        // A composition over every operation kind, at points away from kinks.
        let err = grad_check(
            |t, v| {
                let s = t.sin(v[0] * v[1]) + t.sqrt(t.max0(v[1] - v[2])).unwrap();
                let l = t.ln(v[0] + v[1]).unwrap();
                let d = t.dot(&[v[0], v[1]], &[v[2], s]);
                let q = t.div(d + l, v[1]).unwrap();
                t.relu(q) * q - (-v[2])
            },
            &[x, y, z],
            1e-6,
        )
        .unwrap();
        prop_assert!(err <= 1e-4, "max relative error {}", err);
    }
}
