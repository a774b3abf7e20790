//! Streaming pipeline over heterogeneous timesteps, and the sequential loop it must reproduce.
//!
//! The stream keeps up to `n − 1` partially denoised latents in a buffer. Each
//! iteration admits one fresh noise latent at stage 0, runs a single model call
//! and a single batched scheduler step over `[new; buffer]`, advances every
//! entry one stage, and hands the entry that reached stage `n` to the decoder.
//! After `n − 1` warmup iterations every iteration completes one generation.

use std::time::Duration;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::busy::spin_for;
use crate::engine::Denoiser;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::model::{apply_cfg, handle_cfg, splitmix64, Conditioning};
use crate::scalar::Scalar;
use crate::scheduler::{batched_velocity_step_counted, sequential_velocity_step, LatentBatch, StepStats};
use crate::schedule::TimeWindowSchedule;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunParams {
    /// Number of generations `m`.
    pub generations: usize,
    /// Denoising steps per generation `n`.
    pub steps: usize,
    pub seed: u64,
    /// Simulated cost of one decode.
    pub decode_cost: Duration,
    /// Simulated cost of one scheduler call.
    pub sched_cost: Duration,
}

impl RunParams {
    pub fn new(generations: usize, steps: usize, seed: u64) -> Self {
        Self {
            generations,
            steps,
            seed,
            decode_cost: Duration::ZERO,
            sched_cost: Duration::ZERO,
        }
    }

    pub fn with_costs(mut self, sched_cost: Duration, decode_cost: Duration) -> Self {
        self.sched_cost = sched_cost;
        self.decode_cost = decode_cost;
        self
    }

    fn validate<T: Scalar>(&self, sched: &TimeWindowSchedule<T>) -> Result<()> {
        if self.generations == 0 {
            return Err(Error::param("number of generations must be at least 1"));
        }
        if self.steps == 0 {
            return Err(Error::param("number of denoising steps must be at least 1"));
        }
        if sched.grid().len() < self.steps {
            return Err(Error::param(format!(
                "{} denoising steps requested but the inference grid has only {} points",
                self.steps,
                sched.grid().len()
            )));
        }
        Ok(())
    }
}

/// Decoder output. The decoder is a stand-in that returns its input unchanged.
#[derive(Debug, Clone, PartialEq)]
pub struct Decoded<T> {
    pub latent: Vec<T>,
}

/// Identity decode that burns `cost` of wall-clock time.
pub fn decode_stub<T: Scalar>(latent: &[T], cost: Duration) -> Decoded<T> {
    spin_for(cost);
    Decoded {
        latent: latent.to_vec(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationResult<T> {
    pub id: u64,
    pub latent: Vec<T>,
    pub decoded: Decoded<T>,
    /// Pipeline iterations (or sequential steps) between admission and completion.
    pub iterations_spanned: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunStats {
    pub iterations: u64,
    pub model_calls: u64,
    pub scheduler_calls: u64,
    pub decodes: u64,
    pub step: StepStats,
    /// Number of generations completed at each iteration.
    pub emitted_per_iteration: Vec<usize>,
    /// Simulated scheduler and decoder time charged during the run.
    pub simulated_sched_time: Duration,
    pub simulated_decode_time: Duration,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput<T> {
    pub results: Vec<GenerationResult<T>>,
    pub stats: RunStats,
}

/// Seed for generation `index` of a run seeded with `run_seed`.
pub fn generation_seed(run_seed: u64, index: u64) -> u64 {
    splitmix64(run_seed ^ splitmix64(index))
}

/// Standard-normal starting latent for generation `index`.
pub fn initial_noise<T: Scalar>(run_seed: u64, index: u64, dim: usize) -> Vec<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(generation_seed(run_seed, index));
    (0..dim)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            T::of(z)
        })
        .collect()
}

/// One in-flight generation.
#[derive(Debug, Clone, PartialEq)]
pub struct BufferEntry<T> {
    pub id: u64,
    pub latent: Vec<T>,
    /// Number of denoising steps already applied.
    pub stage: usize,
    admitted_at: u64,
}

/// Buffer and bookkeeping of a streaming run.
#[derive(Debug, Clone)]
pub struct PipelineState<T> {
    params: RunParams,
    dim: usize,
    buffer: Vec<BufferEntry<T>>,
    stage_times: Vec<T>,
    admitted: usize,
    emitted: usize,
    iteration: u64,
}

impl<T: Scalar> PipelineState<T> {
    pub fn new(params: RunParams, dim: usize, sched: &TimeWindowSchedule<T>) -> Result<Self> {
        params.validate(sched)?;
        Ok(Self {
            params,
            dim,
            buffer: Vec::with_capacity(params.steps),
            stage_times: sched.grid()[..params.steps].to_vec(),
            admitted: 0,
            emitted: 0,
            iteration: 0,
        })
    }

    /// Entries carried between iterations, newest first.
    pub fn buffer(&self) -> &[BufferEntry<T>] {
        &self.buffer
    }

    pub fn stage_times(&self) -> &[T] {
        &self.stage_times
    }

    pub fn emitted(&self) -> usize {
        self.emitted
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn is_done(&self) -> bool {
        self.emitted == self.params.generations
    }

    /// Total iterations of a full run: `m + n − 1`.
    pub fn total_iterations(&self) -> u64 {
        (self.params.generations + self.params.steps - 1) as u64
    }

    /// Runs one pipeline iteration, returning the generation that completed in it, if any.
    pub fn iterate(
        &mut self,
        model: &(impl Denoiser<T> + ?Sized),
        cond: &Conditioning<T>,
        sched: &TimeWindowSchedule<T>,
        stats: &mut RunStats,
    ) -> Result<Option<GenerationResult<T>>> {
        if self.is_done() {
            return Err(Error::State("pipeline has already emitted every generation".into()));
        }
        if self.admitted < self.params.generations {
            let id = self.admitted as u64;
            self.buffer.insert(
                0,
                BufferEntry {
                    id,
                    latent: initial_noise(self.params.seed, id, self.dim),
                    stage: 0,
                    admitted_at: self.iteration,
                },
            );
            self.admitted += 1;
        }

        let rows: Vec<&[T]> = self.buffer.iter().map(|e| e.latent.as_slice()).collect();
        let batch = LatentBatch::new(
            Matrix::from_rows(self.dim, rows)?,
            self.buffer.iter().map(|e| self.stage_times[e.stage]).collect(),
            self.buffer.iter().map(|e| e.id).collect(),
        )?;

        let (model_in, model_cond) = apply_cfg(&batch, cond)?;
        let out = handle_cfg(model.denoise(&model_in, &model_cond)?, &model_cond)?;
        stats.model_calls += 1;

        spin_for(self.params.sched_cost);
        stats.simulated_sched_time += self.params.sched_cost;
        let stepped = batched_velocity_step_counted(&out.epsilon, &batch, sched, &mut stats.step)?;
        stats.scheduler_calls += 1;

        for (i, entry) in self.buffer.iter_mut().enumerate() {
            entry.latent.copy_from_slice(stepped.row(i));
            entry.stage += 1;
        }
        self.iteration += 1;
        stats.iterations += 1;

        let done = match self.buffer.last() {
            Some(e) if e.stage == self.params.steps => self.buffer.pop(),
            _ => None,
        };
        let result = done.map(|e| {
            let decoded = decode_stub(&e.latent, self.params.decode_cost);
            stats.decodes += 1;
            stats.simulated_decode_time += self.params.decode_cost;
            self.emitted += 1;
            GenerationResult {
                id: e.id,
                iterations_spanned: (self.iteration - e.admitted_at) as usize,
                latent: e.latent,
                decoded,
            }
        });
        stats.emitted_per_iteration.push(usize::from(result.is_some()));
        Ok(result)
    }
}

/// Streams `m` generations through an `n`-stage pipeline: `m + n − 1` model calls.
///
/// Once all `m` generations are admitted no further noise enters; the batch
/// shrinks while the buffer drains.
pub fn run_stream<T: Scalar>(
    params: RunParams,
    model: &(impl Denoiser<T> + ?Sized),
    cond: &Conditioning<T>,
    sched: &TimeWindowSchedule<T>,
) -> Result<RunOutput<T>> {
    let mut state = PipelineState::new(params, model.latent_dim(), sched)?;
    let mut stats = RunStats::default();
    let mut results = Vec::with_capacity(params.generations);
    while !state.is_done() {
        if let Some(r) = state.iterate(model, cond, sched, &mut stats)? {
            results.push(r);
        }
    }
    debug_assert_eq!(stats.iterations, state.total_iterations());
    Ok(RunOutput { results, stats })
}

/// One generation at a time, `n` single-sample model calls and scalar steps each: `m·n` calls.
pub fn run_vanilla<T: Scalar>(
    params: RunParams,
    model: &(impl Denoiser<T> + ?Sized),
    cond: &Conditioning<T>,
    sched: &TimeWindowSchedule<T>,
) -> Result<RunOutput<T>> {
    params.validate(sched)?;
    let dim = model.latent_dim();
    let mut stats = RunStats::default();
    let mut results = Vec::with_capacity(params.generations);
    for g in 0..params.generations as u64 {
        let mut x: Vec<T> = initial_noise(params.seed, g, dim);
        for &t in &sched.grid()[..params.steps] {
            let batch = LatentBatch::single(&x, t, g)?;
            let (model_in, model_cond) = apply_cfg(&batch, cond)?;
            let out = handle_cfg(model.denoise(&model_in, &model_cond)?, &model_cond)?;
            stats.model_calls += 1;

            spin_for(params.sched_cost);
            stats.simulated_sched_time += params.sched_cost;
            let (next, _) = sequential_velocity_step(out.epsilon.row(0), &x, t, sched)?;
            stats.scheduler_calls += 1;
            stats.step.param_evals += 1;
            x = next;
            stats.iterations += 1;
        }
        let decoded = decode_stub(&x, params.decode_cost);
        stats.decodes += 1;
        stats.simulated_decode_time += params.decode_cost;
        results.push(GenerationResult {
            id: g,
            latent: x,
            decoded,
            iterations_spanned: params.steps,
        });
    }
    Ok(RunOutput { results, stats })
}

/// `[pipeline]` block of a run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    /// Number of generations.
    pub m: usize,
    /// Denoising steps per generation.
    pub n: usize,
    pub seed: u64,
    pub guidance: f64,
    pub decode_cost_us: f64,
    pub sched_cost_us: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            m: 8,
            n: 4,
            seed: 0,
            guidance: 1.0,
            decode_cost_us: 0.0,
            sched_cost_us: 0.0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, reason: &str| Error::Validation {
            key: format!("pipeline.{key}"),
            reason: reason.into(),
        };
        if self.m == 0 {
            return Err(bad("m", "must be at least 1"));
        }
        if self.n == 0 {
            return Err(bad("n", "must be at least 1"));
        }
        if !(self.guidance.is_finite() && self.guidance >= 0.0) {
            return Err(bad("guidance", "must be a non-negative number"));
        }
        for (key, v) in [("decode_cost_us", self.decode_cost_us), ("sched_cost_us", self.sched_cost_us)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(bad(key, "must be a non-negative duration"));
            }
        }
        Ok(())
    }

    pub fn params(&self) -> RunParams {
        RunParams::new(self.m, self.n, self.seed).with_costs(
            Duration::from_secs_f64(self.sched_cost_us * 1e-6),
            Duration::from_secs_f64(self.decode_cost_us * 1e-6),
        )
    }

    /// Prompt embedding derived from the run seed, with the configured guidance scale.
    pub fn conditioning<T: Scalar>(&self, embed_dim: usize) -> Conditioning<T> {
        let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(self.seed ^ 0x636f_6e64));
        let embedding = (0..embed_dim)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                T::of(z)
            })
            .collect();
        Conditioning::new(embedding, T::of(self.guidance))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{AnalyticLinearModel, SeededMockModel};

    fn mock() -> SeededMockModel {
        SeededMockModel::new(6, 2, 42)
    }

    fn cond(w: f64) -> Conditioning<f64> {
        Conditioning::new(vec![0.25, -0.5], w)
    }

    #[test]
    fn ten_by_four_call_counts() {
        let sched = TimeWindowSchedule::<f64>::with_steps(4).unwrap();
        let p = RunParams::new(10, 4, 1);
        let s = run_stream(p, &mock(), &cond(1.0), &sched).unwrap();
        assert_eq!(s.stats.model_calls, 13);
        assert_eq!(s.stats.scheduler_calls, 13);
        assert_eq!(s.stats.decodes, 10);
        let v = run_vanilla(p, &mock(), &cond(1.0), &sched).unwrap();
        assert_eq!(v.stats.model_calls, 40);
        assert_eq!(v.stats.decodes, 10);
    }

    #[test]
    fn warmup_then_one_per_iteration() {
        let sched = TimeWindowSchedule::<f64>::with_steps(5).unwrap();
        let s = run_stream(RunParams::new(7, 5, 3), &mock(), &cond(1.0), &sched).unwrap();
        let e = &s.stats.emitted_per_iteration;
        assert_eq!(e.len(), 11);
        assert!(e[..4].iter().all(|&x| x == 0));
        assert!(e[4..].iter().all(|&x| x == 1));
        let ids: Vec<u64> = s.results.iter().map(|r| r.id).collect();
        assert_eq!(ids, (0..7).collect::<Vec<_>>());
        assert!(s.results.iter().all(|r| r.iterations_spanned == 5));
    }

    #[test]
    fn buffer_stages_advance_by_one() {
        let sched = TimeWindowSchedule::<f64>::with_steps(4).unwrap();
        let m = mock();
        let mut st = PipelineState::new(RunParams::new(6, 4, 0), 6, &sched).unwrap();
        let mut stats = RunStats::default();
        let mut last_stage = std::collections::HashMap::new();
        while !st.is_done() {
            st.iterate(&m, &cond(1.0), &sched, &mut stats).unwrap();
            assert!(st.buffer().len() <= 3);
            for (p, e) in st.buffer().iter().enumerate() {
                if let Some(prev) = last_stage.insert(e.id, e.stage) {
                    assert_eq!(e.stage, prev + 1);
                }
                if st.iteration() >= 3 && st.iteration() < 6 {
                    assert_eq!(e.stage, p + 1);
                }
            }
        }
        assert!(st.iterate(&m, &cond(1.0), &sched, &mut stats).is_err());
    }

    #[test]
    fn single_step_pipeline_equals_vanilla() {
        let sched = TimeWindowSchedule::<f64>::with_steps(4).unwrap();
        let p = RunParams::new(5, 1, 9);
        let s = run_stream(p, &mock(), &cond(1.0), &sched).unwrap();
        let v = run_vanilla(p, &mock(), &cond(1.0), &sched).unwrap();
        assert_eq!(s.results, v.results);
        assert_eq!(s.stats.model_calls, 5);
    }

    #[test]
    fn stream_matches_vanilla_with_guidance() {
        let sched = TimeWindowSchedule::<f64>::with_steps(6).unwrap();
        let model = AnalyticLinearModel::<f64>::with_dims(6, 2)
            .with_cond_projection(Matrix::from_vec(6, 2, (0..12).map(|i| i as f64 * 0.01).collect()).unwrap())
            .unwrap();
        let p = RunParams::new(4, 6, 11);
        let s = run_stream(p, &model, &cond(4.0), &sched).unwrap();
        let v = run_vanilla(p, &model, &cond(4.0), &sched).unwrap();
        for (a, b) in s.results.iter().zip(&v.results) {
            assert_eq!(a.id, b.id);
            assert_eq!(a.latent, b.latent);
        }
    }

    #[test]
    fn single_generation_threads_both_paths() {
        let sched = TimeWindowSchedule::<f64>::with_steps(4).unwrap();
        let p = RunParams::new(1, 4, 5);
        let s = run_stream(p, &mock(), &cond(1.0), &sched).unwrap();
        let v = run_vanilla(p, &mock(), &cond(1.0), &sched).unwrap();
        assert_eq!(s.results, v.results);
        assert_eq!(s.stats.model_calls, 4);
    }

    #[test]
    fn grid_shorter_than_steps_is_rejected() {
        let sched = TimeWindowSchedule::<f64>::with_steps(2).unwrap();
        let p = RunParams::new(3, 4, 0);
        assert!(matches!(run_stream(p, &mock(), &cond(1.0), &sched), Err(Error::Parameter(_))));
        assert!(run_vanilla(p, &mock(), &cond(1.0), &sched).is_err());
        assert!(run_stream(RunParams::new(0, 1, 0), &mock(), &cond(1.0), &sched).is_err());
    }

    #[test]
    fn decode_stub_preserves_bits() {
        let x = vec![f64::MIN_POSITIVE, -0.0, 1.0 / 3.0];
        let d = decode_stub(&x, Duration::ZERO);
        assert_eq!(
            d.latent.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            x.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn decode_time_accumulates() {
        let sched = TimeWindowSchedule::<f64>::with_steps(2).unwrap();
        let p = RunParams::new(3, 2, 0).with_costs(Duration::ZERO, Duration::from_micros(20));
        let s = run_stream(p, &mock(), &cond(1.0), &sched).unwrap();
        assert_eq!(s.stats.simulated_decode_time, Duration::from_micros(60));
    }

    #[test]
    fn noise_depends_on_seed_and_index_only() {
        let a: Vec<f64> = initial_noise(7, 3, 4);
        assert_eq!(a, initial_noise::<f64>(7, 3, 4));
        assert_ne!(a, initial_noise::<f64>(7, 4, 4));
        assert_ne!(a, initial_noise::<f64>(8, 3, 4));
    }
}
