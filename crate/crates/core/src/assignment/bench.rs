//! Linear-assignment benchmark on i.i.d. standard-normal score maps.
//!
//! Three ways of turning a score map into a matching are compared:
//!
//! * `max_fusion`: `max(softmax_cols, softmax_rows)` followed by a plain
//!   per-column argmax,
//! * `max_fusion_hungarian`: the same fused map solved exactly,
//! * `cross_softmax`: the cross-softmax read out by thresholded argmax,
//!   timed through [`cross_softmax_candidates`]. The unfused
//!   `cross_softmax` + `match_candidates` time is reported separately.
//!
//! A trial is *valid* when the matching the method reads out names no row
//! twice, before any conflict resolution. It is *optimal* when that matching
//! is complete and equals the exact maximum-sum assignment of the matrix the
//! method scores pairs with.
//!
//! With [`Precision::F32`] each score map is rounded to `f32` before any
//! timer starts and all three methods run in single precision.

use std::fmt::Write as _;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use super::{
    column_argmax, cross_softmax, cross_softmax_candidates, dan_fuse, hungarian, is_injective, match_candidates,
    DEFAULT_MATCH_THRESHOLD,
};
use crate::scalar::Scalar;
use crate::tensor::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    MaxFusion,
    MaxFusionHungarian,
    CrossSoftmax,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::MaxFusion, Method::MaxFusionHungarian, Method::CrossSoftmax];

    pub fn name(self) -> &'static str {
        match self {
            Method::MaxFusion => "max_fusion",
            Method::MaxFusionHungarian => "max_fusion_hungarian",
            Method::CrossSoftmax => "cross_softmax",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    F32,
    #[default]
    F64,
}

impl std::str::FromStr for Precision {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "f32" => Ok(Precision::F32),
            "f64" => Ok(Precision::F64),
            _ => Err(format!("unknown precision {s:?}, expected f32 or f64")),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BenchOptions {
    pub n: usize,
    pub trials: usize,
    pub seed: u64,
    /// Threshold for the cross-softmax readout. The max-fusion argmax is
    /// never thresholded.
    pub threshold: f64,
    pub precision: Precision,
}

impl BenchOptions {
    pub fn new(n: usize, trials: usize, seed: u64) -> Self {
        BenchOptions {
            n,
            trials,
            seed,
            threshold: DEFAULT_MATCH_THRESHOLD,
            precision: Precision::F64,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchRow {
    pub method: Method,
    pub n: usize,
    pub trials: usize,
    pub validity_rate: f64,
    pub optimality_rate: f64,
    pub mean_latency_us: f64,
    /// Mean fraction of columns that received a row.
    pub mean_coverage: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    /// Mean time of the exact solve alone, without the fusion step.
    pub hungarian_solve_us: f64,
    /// Mean time of `cross_softmax` followed by `match_candidates`.
    pub cross_softmax_unfused_us: f64,
}

pub const CSV_HEADER: &str = "method,n,trials,validity_rate,optimality_rate,mean_latency_us";

impl BenchReport {
    pub fn row(&self, method: Method) -> &BenchRow {
        self.rows
            .iter()
            .find(|r| r.method == method)
            .expect("every method has a row")
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{:.3}",
                r.method.name(),
                r.n,
                r.trials,
                r.validity_rate,
                r.optimality_rate,
                r.mean_latency_us
            );
        }
        out
    }
}

#[derive(Default)]
struct Tally {
    valid: usize,
    optimal: usize,
    coverage: f64,
    elapsed: Duration,
}

/// Score map for one trial; trials draw from independent streams so they can
/// be reproduced individually.
pub fn trial_matrix(n: usize, seed: u64, trial: usize) -> Matrix<f64> {
    let stream = seed ^ (trial as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    let mut rng = ChaCha8Rng::seed_from_u64(stream);
    Matrix::from_fn(n, n, |_, _| StandardNormal.sample(&mut rng))
}

fn complete(matches: &[Option<usize>]) -> bool {
    matches.iter().all(Option::is_some)
}

fn coverage(matches: &[Option<usize>]) -> f64 {
    if matches.is_empty() {
        return 0.0;
    }
    matches.iter().filter(|m| m.is_some()).count() as f64 / matches.len() as f64
}

pub fn bench_assignment(opts: &BenchOptions) -> BenchReport {
    match opts.precision {
        Precision::F32 => run::<f32>(opts),
        Precision::F64 => run::<f64>(opts),
    }
}

fn run<T: Scalar>(opts: &BenchOptions) -> BenchReport {
    let n = opts.n;
    let threshold = T::of(opts.threshold);
    let mut tallies: [Tally; 3] = Default::default();
    let mut solve_time = Duration::ZERO;
    let mut unfused_time = Duration::ZERO;

    for trial in 0..opts.trials {
        let r64 = trial_matrix(n, opts.seed, trial);
        let r = Matrix::from_vec(n, n, r64.as_slice().iter().map(|&v| T::of(v)).collect()).expect("square");

        // max-fusion, argmax only
        let t0 = Instant::now();
        let fused = dan_fuse(&r).expect("finite score map");
        let argmax: Vec<Option<usize>> = column_argmax(&fused).into_iter().map(|c| c.map(|(i, _)| i)).collect();
        tallies[0].elapsed += t0.elapsed();

        // max-fusion + exact solve
        let t0 = Instant::now();
        let fused_h = dan_fuse(&r).expect("finite score map");
        let t1 = Instant::now();
        let solved = hungarian(&fused_h, true);
        let t2 = Instant::now();
        tallies[1].elapsed += t2 - t0;
        solve_time += t2 - t1;

        // cross-softmax, thresholded argmax
        let t0 = Instant::now();
        let cands: Vec<Option<usize>> = cross_softmax_candidates(&r, threshold)
            .expect("finite score map")
            .into_iter()
            .map(|c| c.map(|(i, _)| i))
            .collect();
        tallies[2].elapsed += t0.elapsed();

        let t0 = Instant::now();
        let a = cross_softmax(&r).expect("finite score map");
        std::hint::black_box(match_candidates(&a, threshold));
        unfused_time += t0.elapsed();

        let argmax_valid = is_injective(&argmax, n);
        tallies[0].valid += argmax_valid as usize;
        tallies[0].optimal += (argmax_valid && argmax == solved.matches) as usize;
        tallies[0].coverage += coverage(&argmax);

        tallies[1].valid += solved.is_one_to_one as usize;
        tallies[1].optimal += (solved.is_one_to_one && complete(&solved.matches)) as usize;
        tallies[1].coverage += coverage(&solved.matches);

        let cands_valid = is_injective(&cands, n);
        tallies[2].valid += cands_valid as usize;
        // the exact reference is only needed when the readout is a full permutation
        if cands_valid && complete(&cands) && cands == hungarian(a.matrix(), true).matches {
            tallies[2].optimal += 1;
        }
        tallies[2].coverage += coverage(&cands);
    }

    let trials = opts.trials.max(1) as f64;
    let rows = Method::ALL
        .iter()
        .zip(&tallies)
        .map(|(&method, t)| BenchRow {
            method,
            n,
            trials: opts.trials,
            validity_rate: t.valid as f64 / trials,
            optimality_rate: t.optimal as f64 / trials,
            mean_latency_us: t.elapsed.as_secs_f64() * 1e6 / trials,
            mean_coverage: t.coverage / trials,
        })
        .collect();
    BenchReport {
        rows,
        hungarian_solve_us: solve_time.as_secs_f64() * 1e6 / trials,
        cross_softmax_unfused_us: unfused_time.as_secs_f64() * 1e6 / trials,
    }
}
