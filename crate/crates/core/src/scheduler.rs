//! Euler step of the piecewise-linear velocity field over heterogeneous-timestep batches.

use std::ops::AddAssign;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;
use crate::schedule::{next_timestep, sample_window_params, window_params, TimeWindowSchedule};

/// Latents at possibly different flow times, one row per in-flight generation.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentBatch<T> {
    data: Matrix<T>,
    timesteps: Vec<T>,
    ids: Vec<u64>,
}

impl<T: Scalar> LatentBatch<T> {
    pub fn new(data: Matrix<T>, timesteps: Vec<T>, ids: Vec<u64>) -> Result<Self> {
        if data.rows() != timesteps.len() || data.rows() != ids.len() {
            return Err(Error::param(format!(
                "batch has {} rows, {} timesteps and {} ids",
                data.rows(),
                timesteps.len(),
                ids.len()
            )));
        }
        if let Some(t) = timesteps.iter().find(|&&t| !(t >= T::zero() && t <= T::one())) {
            return Err(Error::domain(format!("timestep {t} is outside [0, 1]")));
        }
        Ok(Self {
            data,
            timesteps,
            ids,
        })
    }

    /// A batch holding one row.
    pub fn single(latent: &[T], t: T, id: u64) -> Result<Self> {
        Self::new(
            Matrix::from_vec(1, latent.len(), latent.to_vec())?,
            vec![t],
            vec![id],
        )
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.data.cols()
    }

    pub fn data(&self) -> &Matrix<T> {
        &self.data
    }

    pub fn timesteps(&self) -> &[T] {
        &self.timesteps
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn row(&self, i: usize) -> &[T] {
        self.data.row(i)
    }

    /// Copy of the rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            data: self.data.select_rows(indices),
            timesteps: indices.iter().map(|&i| self.timesteps[i]).collect(),
            ids: indices.iter().map(|&i| self.ids[i]).collect(),
        }
    }

    pub fn into_parts(self) -> (Matrix<T>, Vec<T>, Vec<u64>) {
        (self.data, self.timesteps, self.ids)
    }
}

/// Scheduler work counters for one run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StepStats {
    /// Window-parameter computations, one per sample per call.
    pub param_evals: u64,
    /// Whole-batch element-wise passes.
    pub elementwise_ops: u64,
    /// Batched scheduler invocations.
    pub batch_calls: u64,
}

impl AddAssign for StepStats {
    fn add_assign(&mut self, rhs: Self) {
        self.param_evals += rhs.param_evals;
        self.elementwise_ops += rhs.elementwise_ops;
        self.batch_calls += rhs.batch_calls;
    }
}

// gamma, lambda_s, eta_s, denom, lambda_t/eta_t, t_s/t_e gathers, next-time lookup
const PARAM_PASSES: u64 = 7;
// x_pred, v, x_next
const LATENT_PASSES: u64 = 3;

/// One Euler step of every row toward its own window endpoint.
pub fn batched_velocity_step<T: Scalar>(
    model_out: &Matrix<T>,
    batch: &LatentBatch<T>,
    sched: &TimeWindowSchedule<T>,
) -> Result<LatentBatch<T>> {
    batched_velocity_step_counted(model_out, batch, sched, &mut StepStats::default())
}

/// [`batched_velocity_step`] that also records its work in `stats`.
pub fn batched_velocity_step_counted<T: Scalar>(
    model_out: &Matrix<T>,
    batch: &LatentBatch<T>,
    sched: &TimeWindowSchedule<T>,
    stats: &mut StepStats,
) -> Result<LatentBatch<T>> {
    if model_out.shape() != batch.data.shape() {
        return Err(Error::param(format!(
            "model output is {:?} but latents are {:?}",
            model_out.shape(),
            batch.data.shape()
        )));
    }
    let ts = &batch.timesteps;
    let t_next = next_timestep(ts, sched)?;
    let p = window_params(ts, sched)?;
    let eps = sched.eps();
    let b = batch.len();
    let d = batch.dim();

    // Rows at their window end take the continuous limit v = 0.
    let span: Vec<Option<T>> = (0..b)
        .map(|i| {
            let s = p.t_e[i] - ts[i];
            (s > eps).then_some(s)
        })
        .collect();
    let dt: Vec<T> = t_next.iter().zip(ts).map(|(&n, &t)| n - t).collect();

    let x = batch.data.as_slice();
    let e = model_out.as_slice();
    let mut x_pred = vec![T::zero(); b * d];
    for i in 0..b {
        let (lt, et) = (p.lambda_t[i], p.eta_t[i]);
        for j in i * d..(i + 1) * d {
            x_pred[j] = lt * x[j] + et * e[j];
        }
    }
    let mut v = vec![T::zero(); b * d];
    for i in 0..b {
        if let Some(s) = span[i] {
            for j in i * d..(i + 1) * d {
                v[j] = (x_pred[j] - x[j]) / s;
            }
        }
    }
    let mut x_next = Vec::with_capacity(b * d);
    for i in 0..b {
        for j in i * d..(i + 1) * d {
            x_next.push(x[j] + dt[i] * v[j]);
        }
    }

    let k = sched.num_windows() as u64;
    stats.param_evals += b as u64;
    stats.elementwise_ops += (k - 1) + PARAM_PASSES + LATENT_PASSES;
    stats.batch_calls += 1;

    Ok(LatentBatch {
        data: Matrix::from_vec(b, d, x_next)?,
        timesteps: t_next,
        ids: batch.ids.clone(),
    })
}

/// Scalar reference step for a single latent row. Returns the stepped latent and its new time.
pub fn sequential_velocity_step<T: Scalar>(
    model_out: &[T],
    latent: &[T],
    t: T,
    sched: &TimeWindowSchedule<T>,
) -> Result<(Vec<T>, T)> {
    if model_out.len() != latent.len() {
        return Err(Error::param(format!(
            "model output has length {} but latent has length {}",
            model_out.len(),
            latent.len()
        )));
    }
    let t_next = sched.successor(sched.grid_index(t)?);
    let p = sample_window_params(t, sched)?;
    let dt = t_next - t;
    let span = p.t_e - t;
    let out = if span > sched.eps() {
        latent
            .iter()
            .zip(model_out)
            .map(|(&x, &e)| {
                let x_pred = p.lambda_t * x + p.eta_t * e;
                let v = (x_pred - x) / span;
                x + dt * v
            })
            .collect()
    } else {
        latent.iter().map(|&x| x + dt * T::zero()).collect()
    };
    Ok((out, t_next))
}
