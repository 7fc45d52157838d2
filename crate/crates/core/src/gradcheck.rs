//! Central finite-difference checks of the analytic gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::assignment::{cross_softmax, cross_softmax_grad, AffinityMatrix};
use crate::objective::{fast_focal, fast_focal_grad, AffinityTarget};
use crate::tensor::Matrix;

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;

/// Central differences of a scalar function of a matrix.
pub fn numeric_gradient(x: &Matrix<f64>, h: f64, mut f: impl FnMut(&Matrix<f64>) -> f64) -> Matrix<f64> {
    let mut probe = x.clone();
    let mut g = Matrix::zeros(x.rows(), x.cols());
    for k in 0..x.as_slice().len() {
        let orig = probe.as_slice()[k];
        probe.as_mut_slice()[k] = orig + h;
        let up = f(&probe);
        probe.as_mut_slice()[k] = orig - h;
        let dn = f(&probe);
        probe.as_mut_slice()[k] = orig;
        g.as_mut_slice()[k] = (up - dn) / (2.0 * h);
    }
    g
}

/// `max |a - n| / max(max |a|, max |n|)`, zero when both vanish.
pub fn relative_error(analytic: &Matrix<f64>, numeric: &Matrix<f64>) -> f64 {
    let scale = analytic
        .as_slice()
        .iter()
        .chain(numeric.as_slice())
        .fold(0.0f64, |m, v| m.max(v.abs()));
    let diff = analytic.max_abs_diff(numeric);
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteResult {
    pub name: &'static str,
    pub instances: usize,
    pub failures: usize,
    pub worst_relative_error: f64,
}

impl SuiteResult {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Matrix<f64> {
    Matrix::from_fn(rows, cols, |_, _| {
        let z: f64 = StandardNormal.sample(rng);
        z * scale
    })
}

/// Random partial permutation with at least one positive.
fn random_target(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> AffinityTarget<f64> {
    let mut cols_free: Vec<usize> = (0..cols).collect();
    let mut pairs = Vec::new();
    for i in 0..rows {
        if cols_free.is_empty() {
            break;
        }
        if pairs.is_empty() || rng.gen_bool(0.7) {
            let k = rng.gen_range(0..cols_free.len());
            pairs.push((i, cols_free.swap_remove(k)));
        }
    }
    AffinityTarget::from_pairs(rows, cols, &pairs).expect("partial permutation")
}

fn shape(rng: &mut ChaCha8Rng) -> (usize, usize) {
    (rng.gen_range(1..=8), rng.gen_range(1..=8))
}

fn run_suite(
    name: &'static str,
    instances: usize,
    seed: u64,
    mut one: impl FnMut(&mut ChaCha8Rng) -> f64,
) -> SuiteResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let mut failures = 0;
    for _ in 0..instances {
        let err = one(&mut rng);
        worst = worst.max(err);
        if !(err <= TOLERANCE) {
            failures += 1;
        }
    }
    SuiteResult {
        name,
        instances,
        failures,
        worst_relative_error: worst,
    }
}

pub fn check_cross_softmax(instances: usize, seed: u64) -> SuiteResult {
    run_suite("cross_softmax_grad", instances, seed, |rng| {
        let (rows, cols) = shape(rng);
        let r = random_matrix(rng, rows, cols, 1.5);
        let upstream = random_matrix(rng, rows, cols, 1.0);
        let analytic = cross_softmax_grad(&r, &upstream).expect("finite map");
        let numeric = numeric_gradient(&r, STEP, |x| {
            let a = cross_softmax(x).expect("finite map");
            a.matrix().hadamard(&upstream).unwrap().as_slice().iter().sum()
        });
        relative_error(&analytic, &numeric)
    })
}

pub fn check_fast_focal(instances: usize, seed: u64) -> SuiteResult {
    run_suite("fast_focal_grad", instances, seed, |rng| {
        let (rows, cols) = shape(rng);
        let a = Matrix::from_fn(rows, cols, |_, _| rng.gen_range(0.02..0.98));
        let y = random_target(rng, rows, cols);
        let analytic = fast_focal_grad(&AffinityMatrix::from_matrix(a.clone()), &y).unwrap();
        let numeric = numeric_gradient(&a, STEP, |x| {
            fast_focal(&AffinityMatrix::from_matrix(x.clone()), &y).unwrap()
        });
        relative_error(&analytic, &numeric)
    })
}

/// `d fast_focal(cross_softmax(r)) / dr` through the chain rule.
pub fn check_composition(instances: usize, seed: u64) -> SuiteResult {
    run_suite("focal_of_cross_softmax", instances, seed, |rng| {
        let (rows, cols) = shape(rng);
        let r = random_matrix(rng, rows, cols, 1.5);
        let y = random_target(rng, rows, cols);
        let a = cross_softmax(&r).unwrap();
        let upstream = fast_focal_grad(&a, &y).unwrap();
        let analytic = cross_softmax_grad(&r, &upstream).unwrap();
        let numeric = numeric_gradient(&r, STEP, |x| fast_focal(&cross_softmax(x).unwrap(), &y).unwrap());
        relative_error(&analytic, &numeric)
    })
}

/// Every suite with `instances` random cases each.
pub fn run_all(instances: usize, seed: u64) -> Vec<SuiteResult> {
    vec![
        check_cross_softmax(instances, seed),
        check_fast_focal(instances, seed.wrapping_add(1)),
        check_composition(instances, seed.wrapping_add(2)),
    ]
}
