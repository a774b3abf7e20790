//! Simulated static-graph inference engine and the runtime dispatcher that keeps
//! heterogeneous-timestep batches away from it.
//!
//! The engine runs its wrapped model's prediction but charges
//! `per_call_overhead + speed_factor · inner cost` per call, and refuses any
//! batch whose timesteps are not all equal. [`adaptive_forward`] checks the
//! batch first and, when it is heterogeneous, issues one single-sample engine
//! call per row and concatenates the results in input order.

use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::busy::spin_for;
use crate::error::{Error, Result};
use crate::model::{AnalyticLinearModel, Conditioning, ModelOutput, SeededMockModel, VelocityModel};
use crate::scalar::Scalar;
use crate::scheduler::LatentBatch;

pub const DEFAULT_SPEED_FACTOR: f64 = 0.3;

/// True iff `max(ts) − min(ts) ≤ eps`. Single pass, no allocation.
pub fn is_homogeneous<T: Scalar>(ts: &[T], eps: T) -> bool {
    let mut it = ts.iter().copied();
    let Some(first) = it.next() else {
        return true;
    };
    let (lo, hi) = it.fold((first, first), |(lo, hi), t| (lo.min(t), hi.max(t)));
    hi - lo <= eps
}

/// Snapshot of the engine's counters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EngineStats {
    /// Dispatches served by a single whole-batch engine call.
    pub calls_homogeneous: u64,
    /// Dispatches that had to be split into single-sample calls.
    pub calls_decomposed: u64,
    /// Engine calls actually executed.
    pub invocations: u64,
    /// Engine calls refused because the batch was heterogeneous.
    pub rejected: u64,
    pub total_simulated_time: Duration,
}

pub struct CompiledEngine<T: Scalar> {
    inner: Box<dyn VelocityModel<T>>,
    per_call_overhead: Duration,
    speed_factor: f64,
    eps: T,
    invocations: AtomicU64,
    rejected: AtomicU64,
    calls_homogeneous: AtomicU64,
    calls_decomposed: AtomicU64,
    simulated_nanos: AtomicU64,
}

impl<T: Scalar> CompiledEngine<T> {
    pub fn new(
        inner: Box<dyn VelocityModel<T>>,
        per_call_overhead: Duration,
        speed_factor: f64,
        eps: T,
    ) -> Result<Self> {
        if !(speed_factor > 0.0 && speed_factor <= 1.0) {
            return Err(Error::param(format!(
                "speed factor must lie in (0, 1], got {speed_factor}"
            )));
        }
        if !(eps >= T::zero()) {
            return Err(Error::param("homogeneity tolerance must be non-negative"));
        }
        Ok(Self {
            inner,
            per_call_overhead,
            speed_factor,
            eps,
            invocations: AtomicU64::new(0),
            rejected: AtomicU64::new(0),
            calls_homogeneous: AtomicU64::new(0),
            calls_decomposed: AtomicU64::new(0),
            simulated_nanos: AtomicU64::new(0),
        })
    }

    pub fn inner(&self) -> &dyn VelocityModel<T> {
        self.inner.as_ref()
    }

    pub fn dim(&self) -> usize {
        self.inner.as_ref().dim()
    }

    /// `O_TRT + speed_factor · C_inner`.
    pub fn cost_per_call(&self) -> Duration {
        self.per_call_overhead + self.inner.cost_per_call().mul_f64(self.speed_factor)
    }

    /// One engine execution. Heterogeneous batches are refused.
    pub fn forward(&self, batch: &LatentBatch<T>, cond: &Conditioning<T>) -> Result<ModelOutput<T>> {
        self.inner.check_input(batch, cond)?;
        if !is_homogeneous(batch.timesteps(), self.eps) {
            self.rejected.fetch_add(1, Ordering::Relaxed);
            return Err(Error::EngineRejected(format!(
                "batch of {} rows has more than one distinct timestep",
                batch.len()
            )));
        }
        self.invocations.fetch_add(1, Ordering::Relaxed);
        let cost = self.cost_per_call();
        self.simulated_nanos
            .fetch_add(cost.as_nanos() as u64, Ordering::Relaxed);
        spin_for(cost);
        self.inner.predict(batch, cond)
    }

    pub fn stats(&self) -> EngineStats {
        EngineStats {
            calls_homogeneous: self.calls_homogeneous.load(Ordering::Relaxed),
            calls_decomposed: self.calls_decomposed.load(Ordering::Relaxed),
            invocations: self.invocations.load(Ordering::Relaxed),
            rejected: self.rejected.load(Ordering::Relaxed),
            total_simulated_time: Duration::from_nanos(self.simulated_nanos.load(Ordering::Relaxed)),
        }
    }
}

/// Runs `batch` through the engine, splitting it into single-sample calls when its
/// timesteps differ. Output rows are in input order either way.
pub fn adaptive_forward<T: Scalar>(
    engine: &CompiledEngine<T>,
    batch: &LatentBatch<T>,
    cond: &Conditioning<T>,
) -> Result<ModelOutput<T>> {
    if batch.is_empty() {
        return Err(Error::param("adaptive_forward called with an empty batch"));
    }
    let n = batch.len();
    if is_homogeneous(batch.timesteps(), engine.eps) {
        engine.calls_homogeneous.fetch_add(1, Ordering::Relaxed);
        return engine.forward(batch, cond).map_err(|e| match e {
            Error::EngineRejected(msg) => {
                Error::Invariant(format!("engine refused a homogeneous batch: {msg}"))
            }
            other => other,
        });
    }
    engine.calls_decomposed.fetch_add(1, Ordering::Relaxed);
    let parts = (0..n)
        .map(|i| engine.forward(&batch.select(&[i]), &cond.for_row(i, n)))
        .collect::<Result<Vec<_>>>()?;
    ModelOutput::concat(&parts)
}

/// Anything the sampling loops can ask for a model prediction.
pub trait Denoiser<T: Scalar> {
    fn denoise(&self, batch: &LatentBatch<T>, cond: &Conditioning<T>) -> Result<ModelOutput<T>>;
    fn latent_dim(&self) -> usize;
}

macro_rules! denoise_with_model {
    ($($ty:ty),* $(,)?) => {$(
        impl<T: Scalar> Denoiser<T> for $ty {
            fn denoise(&self, batch: &LatentBatch<T>, cond: &Conditioning<T>) -> Result<ModelOutput<T>> {
                VelocityModel::forward(self, batch, cond)
            }

            fn latent_dim(&self) -> usize {
                VelocityModel::<T>::dim(self)
            }
        }
    )*};
}

denoise_with_model!(
    dyn VelocityModel<T>,
    Box<dyn VelocityModel<T>>,
    AnalyticLinearModel<T>,
    SeededMockModel,
);

impl<T: Scalar> Denoiser<T> for CompiledEngine<T> {
    fn denoise(&self, batch: &LatentBatch<T>, cond: &Conditioning<T>) -> Result<ModelOutput<T>> {
        adaptive_forward(self, batch, cond)
    }

    fn latent_dim(&self) -> usize {
        self.inner.as_ref().dim()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EngineKind {
    #[default]
    None,
    Compiled,
}

/// `[engine]` block of a run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EngineConfig {
    pub engine: EngineKind,
    pub trt_overhead_us: f64,
    pub trt_speed_factor: f64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            engine: EngineKind::None,
            trt_overhead_us: 0.0,
            trt_speed_factor: DEFAULT_SPEED_FACTOR,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.trt_overhead_us.is_finite() && self.trt_overhead_us >= 0.0) {
            return Err(Error::Validation {
                key: "engine.trt_overhead_us".into(),
                reason: "must be a non-negative duration".into(),
            });
        }
        if !(self.trt_speed_factor > 0.0 && self.trt_speed_factor <= 1.0) {
            return Err(Error::Validation {
                key: "engine.trt_speed_factor".into(),
                reason: "must lie in (0, 1]".into(),
            });
        }
        Ok(())
    }

    pub fn overhead(&self) -> Duration {
        Duration::from_secs_f64(self.trt_overhead_us * 1e-6)
    }
}
