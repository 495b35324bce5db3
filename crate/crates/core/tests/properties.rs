//! Property tests over randomized inputs.

use ndarray::{Array1, Array2};
use proptest::prelude::*;
use splitglm_core::design::center_block;
use splitglm_core::family::{update_working_set, Family};
use splitglm_core::fit::{fit_full_glm, marginal_coefficient};
use splitglm_core::linalg::{thin_svd, QrFactor};
use splitglm_core::design::TargetVector;

fn names(p: usize) -> Vec<String> {
    (0..p).map(|j| format!("x{j}")).collect()
}

prop_compose! {
    fn small_matrix()(n in 8usize..40, p in 1usize..5)
        (n in Just(n), p in Just(p),
         data in prop::collection::vec(-100.0f64..100.0, n * p))
        -> (usize, usize, Vec<f64>) {
        (n, p, data)
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn centering_zeroes_every_column_mean((n, p, data) in small_matrix()) {
        let raw = Array2::from_shape_vec((n, p), data).unwrap();
        if let Ok(block) = center_block(raw, names(p), false) {
            for j in 0..p {
                let col = block.values().column(j);
                let mean = col.sum() / n as f64;
                let sd = (col.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>()
                    / (n as f64 - 1.0))
                    .sqrt();
                prop_assert!(mean.abs() <= 1e-10 * sd.max(1e-12) + 1e-12);
            }
        }
    }

    #[test]
    fn qr_solution_matches_normal_equations((n, p, data) in small_matrix()) {
        let a = Array2::from_shape_vec((n, p), data).unwrap();
        let b = Array1::from_shape_fn(n, |i| (i as f64 * 0.37).sin());
        if let Ok(qr) = QrFactor::new(a.clone()) {
            if let Ok(x) = qr.solve(&b) {
                // residual must be orthogonal to the column space
                let resid = &b - &a.dot(&x);
                for j in 0..p {
                    let dot: f64 = a
                        .column(j)
                        .iter()
                        .zip(resid.iter())
                        .map(|(u, v)| u * v)
                        .sum();
                    let scale: f64 =
                        a.column(j).iter().map(|v| v * v).sum::<f64>().sqrt();
                    prop_assert!(dot.abs() <= 1e-7 * scale.max(1.0) * (n as f64));
                }
            }
        }
    }

    #[test]
    fn svd_left_vectors_are_orthonormal((n, p, data) in small_matrix()) {
        let a = Array2::from_shape_vec((n, p), data).unwrap();
        let svd = thin_svd(&a.view());
        let k = svd.rank(1e-10);
        for i in 0..k {
            for j in 0..k {
                let dot: f64 = svd
                    .u
                    .column(i)
                    .iter()
                    .zip(svd.u.column(j).iter())
                    .map(|(x, y)| x * y)
                    .sum();
                let expect = if i == j { 1.0 } else { 0.0 };
                prop_assert!((dot - expect).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn working_set_weights_stay_positive_and_finite(
        etas in prop::collection::vec(-40.0f64..40.0, 4..30),
        bits in prop::collection::vec(0u8..2, 4..30),
    ) {
        let n = etas.len().min(bits.len());
        let eta = Array1::from_vec(etas[..n].to_vec());
        let y = Array1::from_shape_fn(n, |i| f64::from(bits[i]));
        let ws = update_working_set(Family::Binomial, &y.view(), &eta.view()).unwrap();
        for i in 0..n {
            prop_assert!(ws.weights[i] > 0.0 && ws.weights[i].is_finite());
            prop_assert!(ws.working_response[i].is_finite());
        }
    }

    #[test]
    fn coordinate_identity_holds_at_the_optimum(
        seed in 0u64..1000,
    ) {
        use rand::rngs::StdRng;
        use rand::{Rng, SeedableRng};
        let mut rng = StdRng::seed_from_u64(seed);
        let n = 60;
        let p = 3;
        let mut x = Array2::from_shape_fn((n, p), |_| rng.random::<f64>() * 2.0 - 1.0);
        for j in 0..p {
            let m = x.column(j).sum() / n as f64;
            x.column_mut(j).mapv_inplace(|v| v - m);
        }
        let block = center_block(x.clone(), names(p), false).unwrap();
        let yv = Array1::from_shape_fn(n, |_| rng.random::<f64>() - 0.5);
        let (yc, _) = splitglm_core::design::center_target(&yv);
        let y = TargetVector::new(yc.clone(), Family::Gaussian).unwrap();
        let fit = fit_full_glm(&[&block], &y, Family::Gaussian, 1e-12, 100).unwrap();
        let unit = Array1::ones(n);
        for j in 0..p {
            let mut partial = yc.clone();
            for k in 0..p {
                if k != j {
                    for i in 0..n {
                        partial[i] -= block.values()[[i, k]] * fit.coefficients[k];
                    }
                }
            }
            let bj = marginal_coefficient(
                &block.values().column(j),
                &partial.view(),
                &unit.view(),
            )
            .unwrap();
            prop_assert!((bj - fit.coefficients[j]).abs() < 1e-10);
        }
    }
}
