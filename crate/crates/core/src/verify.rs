//! Self-checks comparing each fast path with its sequential counterpart.

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::engine::{adaptive_forward, CompiledEngine, Denoiser};
use crate::error::Result;
use crate::matrix::Matrix;
use crate::model::Conditioning;
use crate::pipeline::{run_stream, run_vanilla, RunParams};
use crate::scalar::Scalar;
use crate::scheduler::{batched_velocity_step, sequential_velocity_step, LatentBatch};
use crate::schedule::TimeWindowSchedule;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// `|a − b| ≤ tol · max(|a|, |b|, 1)`.
pub fn close<T: Scalar>(a: T, b: T, tol: f64) -> bool {
    let (a, b) = (a.as_f64(), b.as_f64());
    let scale = a.abs().max(b.abs()).max(1.0);
    (a - b).abs() <= tol * scale
}

/// Largest element-wise scaled difference between two equally long slices.
pub fn max_rel_diff<T: Scalar>(a: &[T], b: &[T]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let (x, y) = (x.as_f64(), y.as_f64());
            (x - y).abs() / x.abs().max(y.abs()).max(1.0)
        })
        .fold(0.0, f64::max)
}

fn random_matrix<T: Scalar>(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix<T> {
    let data = (0..rows * cols).map(|_| T::of(rng.random_range(-2.0..2.0))).collect();
    Matrix::from_vec(rows, cols, data).expect("sized to fit")
}

/// Random batch of up to `max_batch` rows with timesteps drawn from the grid.
pub fn random_grid_batch<T: Scalar>(
    rng: &mut ChaCha8Rng,
    sched: &TimeWindowSchedule<T>,
    max_batch: usize,
    dim: usize,
) -> LatentBatch<T> {
    let b = rng.random_range(1..=max_batch);
    let grid = sched.grid();
    let ts = (0..b).map(|_| grid[rng.random_range(0..grid.len())]).collect();
    LatentBatch::new(random_matrix(rng, b, dim), ts, (0..b as u64).collect()).expect("valid batch")
}

/// Batched scheduler step against stacked scalar steps.
pub fn scheduler_equivalence<T: Scalar>(
    sched: &TimeWindowSchedule<T>,
    trials: usize,
    max_batch: usize,
    dim: usize,
    seed: u64,
    tol: f64,
) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let batch = random_grid_batch(&mut rng, sched, max_batch, dim);
        let eps = random_matrix(&mut rng, batch.len(), dim);
        let out = batched_velocity_step(&eps, &batch, sched)?;
        for i in 0..batch.len() {
            let (row, t) = sequential_velocity_step(eps.row(i), batch.row(i), batch.timesteps()[i], sched)?;
            worst = worst.max(max_rel_diff(out.row(i), &row));
            if out.timesteps()[i] != t {
                worst = f64::INFINITY;
            }
        }
    }
    Ok(CheckResult {
        name: "scheduler: batched == sequential",
        passed: worst <= tol,
        detail: format!("{trials} batches, max rel diff {worst:.3e} (tol {tol:.0e})"),
    })
}

/// Streaming pipeline against the sequential loop, per generation id.
pub fn pipeline_equivalence<T: Scalar>(
    params: RunParams,
    model: &(impl Denoiser<T> + ?Sized),
    cond: &Conditioning<T>,
    sched: &TimeWindowSchedule<T>,
    tol: f64,
) -> Result<CheckResult> {
    let stream = run_stream(params, model, cond, sched)?;
    let vanilla = run_vanilla(params, model, cond, sched)?;
    let (m, n) = (params.generations as u64, params.steps as u64);
    let mut worst = 0.0f64;
    let mut ids_match = stream.results.len() == vanilla.results.len();
    for (a, b) in stream.results.iter().zip(&vanilla.results) {
        ids_match &= a.id == b.id;
        worst = worst.max(max_rel_diff(&a.latent, &b.latent));
    }
    let counts_ok = stream.stats.model_calls == m + n - 1 && vanilla.stats.model_calls == m * n;
    Ok(CheckResult {
        name: "pipeline: stream == vanilla",
        passed: ids_match && counts_ok && worst <= tol,
        detail: format!(
            "m={m} n={n}, model calls {}/{} (expect {}/{}), max rel diff {worst:.3e}",
            stream.stats.model_calls,
            vanilla.stats.model_calls,
            m + n - 1,
            m * n
        ),
    })
}

/// Adaptive dispatch against the unconstrained model on random batches, bit for bit.
pub fn dispatch_equivalence<T: Scalar>(
    engine: &CompiledEngine<T>,
    cond: &Conditioning<T>,
    sched: &TimeWindowSchedule<T>,
    trials: usize,
    seed: u64,
) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mismatches = 0usize;
    let mut call_errors = 0usize;
    for _ in 0..trials {
        let mut batch = random_grid_batch(&mut rng, sched, 16, engine.dim());
        if rng.random_range(0..4) == 0 {
            // force a homogeneous batch now and then
            let t = batch.timesteps()[0];
            let (data, ts, ids) = batch.into_parts();
            batch = LatentBatch::new(data, vec![t; ts.len()], ids)?;
        }
        let before = engine.stats();
        let got = adaptive_forward(engine, &batch, cond)?;
        let want = engine.inner().predict(&batch, cond)?;
        mismatches += usize::from(got != want);
        let after = engine.stats();
        let expected_calls = if crate::engine::is_homogeneous(batch.timesteps(), sched.eps()) {
            1
        } else {
            batch.len() as u64
        };
        call_errors += usize::from(after.invocations - before.invocations != expected_calls);
    }
    Ok(CheckResult {
        name: "engine: adaptive == unconstrained",
        passed: mismatches == 0 && call_errors == 0 && engine.stats().rejected == 0,
        detail: format!(
            "{trials} batches, {mismatches} output mismatches, {call_errors} call-count errors"
        ),
    })
}
