//! Independent checks of the optimizer building blocks against the training
//! objective: finite differences for the time-factor gradient, perturbation
//! tests for the closed-form row updates.

mod common;

use common::{objective, random_case};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tatd::optim::{rowwise_update, time_gradient};
use tatd::{FactorModel, Matrix, SmoothingSpec, SparseTensor};

#[test]
fn time_gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut configs = 0;
    for order in [3, 4] {
        for rank in [1, 2, 5] {
            for window in [3, 5] {
                for lambda_t in [0.0, 1.0, 100.0] {
                    let case = random_case(&mut rng, order, rank, window);
                    let beta = case.spec.penalties().to_vec();
                    let grad = time_gradient(&case.model, &case.x, &case.spec, lambda_t).unwrap();
                    let t = case.model.time_mode();
                    let h = 1e-5;
                    let mut worst: f64 = 0.0;
                    for r in 0..grad.rows() {
                        for k in 0..grad.cols() {
                            let mut plus = case.model.clone();
                            plus.factor_mut(t)[(r, k)] += h;
                            let mut minus = case.model.clone();
                            minus.factor_mut(t)[(r, k)] -= h;
                            let f = |m: &FactorModel| {
                                objective(m, &case.x, &beta, case.window, case.sigma, lambda_t, 0.3)
                            };
                            let fd = (f(&plus) - f(&minus)) / (2.0 * h);
                            let an = grad[(r, k)];
                            let rel = (fd - an).abs() / an.abs().max(fd.abs()).max(1.0);
                            worst = worst.max(rel);
                        }
                    }
                    assert!(
                        worst <= 1e-4,
                        "order {order} rank {rank} window {window} lambda_t {lambda_t}: rel err {worst}"
                    );
                    configs += 1;
                }
            }
        }
    }
    assert!(configs >= 20);
}

#[test]
fn time_gradient_vanishes_at_exact_fit_without_smoothing() {
    let model = FactorModel::init(&[6, 4, 3], 2, 0, 8).unwrap();
    let entries: Vec<_> = (0..6)
        .flat_map(|i| (0..4).map(move |j| vec![i, j, (i + j) % 3]))
        .map(|idx| {
            let v = model.predict(&idx).unwrap();
            (idx, v)
        })
        .collect();
    let x = SparseTensor::from_entries(vec![6, 4, 3], 0, entries).unwrap();
    let spec = SmoothingSpec::new(&x.slice_census(), 3, 0.5).unwrap();
    let g = time_gradient(&model, &x, &spec, 0.0).unwrap();
    assert!(g.as_slice().iter().all(|v| v.abs() < 1e-12));
}

#[test]
fn constant_time_factor_has_no_smoothing_gradient() {
    let mut model = FactorModel::init(&[7, 3], 3, 0, 1).unwrap();
    *model.factor_mut(0) = Matrix::from_fn(7, 3, |_, k| 0.2 + k as f64);
    let x = SparseTensor::new(vec![7, 3], 0, vec![], vec![]).unwrap();
    let spec = SmoothingSpec::with_penalties(5, 0.8, vec![0.3; 7]).unwrap();
    let g = time_gradient(&model, &x, &spec, 50.0).unwrap();
    assert!(g.as_slice().iter().all(|v| v.abs() < 1e-12));
}

#[test]
fn rowwise_solution_is_locally_optimal() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for trial in 0..20 {
        let rank = rng.gen_range(1..4);
        let case = random_case(&mut rng, 3, rank, 3);
        let beta = case.spec.penalties().to_vec();
        let lambda_r = [0.01, 0.5, 3.0][trial % 3];
        let lambda_t = 2.0;
        let mut model = case.model.clone();
        let mode = (model.time_mode() + 1) % 3;
        rowwise_update(&mut model, &case.x, mode, lambda_r).unwrap();
        let f = |m: &FactorModel| {
            objective(
                m,
                &case.x,
                &beta,
                case.window,
                case.sigma,
                lambda_t,
                lambda_r,
            )
        };
        let base = f(&model);
        for _ in 0..10 {
            let r = rng.gen_range(0..model.factor(mode).rows());
            let k = rng.gen_range(0..model.rank());
            let delta = if rng.gen_bool(0.5) { 1e-4 } else { -1e-4 };
            let mut moved = model.clone();
            moved.factor_mut(mode)[(r, k)] += delta;
            assert!(
                f(&moved) >= base - 1e-9,
                "trial {trial}: perturbation lowered the loss"
            );
        }
    }
}
