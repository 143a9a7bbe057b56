use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use randpulse::csrecon::{lasso_solve, refit_on_support, LassoOptions};
use randpulse::pulse::{cpmg_window_at, PulseSequence};
use randpulse::seqgen::{
    correlation_from_target, design_fir, sample_sequence, toeplitz_min_eigenvalue, FirDesign,
    TargetFunction,
};

fn kkt(a: &DMatrix<f64>, y: &DVector<f64>, x: &DVector<f64>, penalty: f64, nonneg: bool) -> f64 {
    let g = a.transpose() * (y - a * x);
    (0..x.len())
        .map(|i| {
            if x[i] > 0.0 {
                (g[i] - penalty).abs()
            } else if x[i] < 0.0 {
                (g[i] + penalty).abs()
            } else if nonneg {
                (g[i] - penalty).max(0.0)
            } else {
                (g[i].abs() - penalty).max(0.0)
            }
        })
        .fold(0.0, f64::max)
        / penalty
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sampled_sequences_are_reproducible(m in 1usize..300, seed in any::<u64>()) {
        let a = sample_sequence(&FirDesign::identity(), m, 1.0, seed).unwrap();
        prop_assert_eq!(a.len(), m);
        prop_assert!(a.signs().iter().all(|&s| s == 1 || s == -1));
        prop_assert_eq!(a, sample_sequence(&FirDesign::identity(), m, 1.0, seed).unwrap());
    }

    #[test]
    fn cpmg_closed_form_matches_signs(m in 1usize..24, omega in 0.05f64..9.0) {
        let tau = 1.0;
        prop_assume!((omega * tau / 2.0).cos().abs() > 1e-3);
        let mut half = Vec::with_capacity(2 * m);
        let mut sign = 1i8;
        for j in 0..2 * m {
            half.push(sign);
            if j % 2 == 0 {
                sign = -sign;
            }
        }
        let direct = PulseSequence::new(half, tau / 2.0).unwrap().window_at(omega);
        let closed = cpmg_window_at(m, tau, omega);
        prop_assert!(closed >= 0.0);
        prop_assert!((closed - direct).abs() <= 1e-8 * direct.max(1e-6), "{} vs {}", closed, direct);
    }

    #[test]
    fn cos_lag_designs_stay_positive_definite(k in 1usize..10, m in 20usize..300) {
        let target = TargetFunction::cos_lag(k, PI).unwrap();
        let p = correlation_from_target(&target, m, 1.0).unwrap();
        prop_assert!(p.c > 0.0 && p.c <= 1.0);
        let d = design_fir(&p, 2 * k + 2).unwrap();
        prop_assert!(toeplitz_min_eigenvalue(&d.achieved) > 0.0);
        prop_assert!((d.achieved[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn lasso_meets_optimality_conditions(
        rows in 3usize..10,
        cols in 3usize..16,
        seed in any::<u64>(),
        frac in 0.01f64..0.9,
        nonneg in any::<bool>(),
    ) {
        let mut rng = randpulse::rng::rng_from_seed(seed);
        use rand::Rng;
        let a = DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0));
        let y = DVector::from_fn(rows, |_, _| rng.random_range(-1.0..1.0));
        let g = a.transpose() * &y;
        let top = if nonneg { g.max() } else { g.amax() };
        prop_assume!(top > 1e-6);
        let penalty = frac * top;
        let x = lasso_solve(&a, &y, penalty, LassoOptions { nonnegative: nonneg }).unwrap().x;
        if nonneg {
            prop_assert!(x.iter().all(|&v| v >= 0.0));
        }
        prop_assert!(kkt(&a, &y, &x, penalty, nonneg) <= 1e-5);
    }

    #[test]
    fn refit_is_exact_on_the_true_support(seed in any::<u64>(), cols in 4usize..20) {
        let mut rng = randpulse::rng::rng_from_seed(seed);
        use rand::Rng;
        let a = DMatrix::from_fn(8, cols, |_, _| rng.random_range(-1.0..1.0));
        let (i, j) = (0, cols - 1);
        let mut x0 = DVector::zeros(cols);
        x0[i] = 0.7;
        x0[j] = -0.3;
        let x = refit_on_support(&a, &(&a * &x0), &[i, j]);
        prop_assert!((x - x0).amax() < 1e-9);
    }
}
