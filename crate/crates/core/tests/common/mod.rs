//! Reference implementations shared by the integration tests.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use tatd::{FactorModel, Matrix, SmoothingSpec, SparseTensor};

/// Objective evaluated from first principles: explicit kernel windows, no
/// precomputed tables.
pub fn objective(
    model: &FactorModel,
    x: &SparseTensor,
    beta: &[f64],
    window: usize,
    sigma: f64,
    lambda_t: f64,
    lambda_r: f64,
) -> f64 {
    let mut total = 0.0;
    for (idx, v) in x.iter() {
        let mut est = 0.0;
        for k in 0..model.rank() {
            let mut p = 1.0;
            for (n, &i) in idx.iter().enumerate() {
                p *= model.factor(n)[(i, k)];
            }
            est += p;
        }
        total += (v - est).powi(2);
    }
    let a = model.time_factor();
    let half = (window / 2) as i64;
    for t in 0..a.rows() as i64 {
        let nb: Vec<i64> = (t - half..=t + half)
            .filter(|&s| s != t && s >= 0 && s < a.rows() as i64)
            .collect();
        let kern: Vec<f64> = nb
            .iter()
            .map(|&s| (-((s - t) as f64).powi(2) / (2.0 * sigma * sigma)).exp())
            .collect();
        let z: f64 = kern.iter().sum();
        for k in 0..a.cols() {
            let smooth: f64 = nb
                .iter()
                .zip(&kern)
                .map(|(&s, w)| w / z * a[(s as usize, k)])
                .sum();
            total += lambda_t * beta[t as usize] * (a[(t as usize, k)] - smooth).powi(2);
        }
    }
    for n in 0..model.order() {
        if n != model.time_mode() {
            total += lambda_r * model.factor(n).frobenius_sq();
        }
    }
    total
}

pub struct Case {
    pub model: FactorModel,
    pub x: SparseTensor,
    pub spec: SmoothingSpec,
    pub window: usize,
    pub sigma: f64,
}

/// Random instance with every dimension at most 12.
pub fn random_case(rng: &mut ChaCha8Rng, order: usize, rank: usize, window: usize) -> Case {
    let dims: Vec<usize> = (0..order).map(|_| rng.gen_range(2..=12)).collect();
    let dims: Vec<usize> = dims
        .iter()
        .enumerate()
        .map(|(n, &d)| if order == 4 && n > 0 { d.min(5) } else { d })
        .collect();
    let time_mode = rng.gen_range(0..order);
    let mut dims = dims;
    dims[time_mode] = dims[time_mode].max(4);
    let sigma = rng.gen_range(0.4..2.0);
    let cells: usize = dims.iter().product();
    let mut entries = Vec::new();
    let mut idx = vec![0; order];
    for cell in 0..cells {
        let mut c = cell;
        for n in (0..order).rev() {
            idx[n] = c % dims[n];
            c /= dims[n];
        }
        if rng.gen_bool(0.4) {
            entries.push((idx.clone(), rng.gen_range(-2.0..2.0)));
        }
    }
    let x = SparseTensor::from_entries(dims.clone(), time_mode, entries).unwrap();
    let spec = SmoothingSpec::new(&x.slice_census(), window, sigma).unwrap();
    let factors = dims
        .iter()
        .map(|&d| Matrix::from_fn(d, rank, |_, _| rng.gen_range(-1.0..1.0)))
        .collect();
    let model = FactorModel::from_factors(factors, time_mode).unwrap();
    Case {
        model,
        x,
        spec,
        window,
        sigma,
    }
}
