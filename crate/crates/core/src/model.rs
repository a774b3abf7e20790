//! Velocity-model interface, two desk-scale models and classifier-free guidance pairing.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::busy::spin_for;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;
use crate::scheduler::LatentBatch;

/// Prompt conditioning shared by every row of a batch.
///
/// After [`apply_cfg`] the conditioning is *paired*: the first half of the batch
/// rows is unconditional (negative embedding, or zeros) and the second half
/// conditional.
#[derive(Debug, Clone, PartialEq)]
pub struct Conditioning<T> {
    pub embedding: Vec<T>,
    pub guidance_scale: T,
    pub negative_embedding: Option<Vec<T>>,
    paired: bool,
    unconditional: Vec<T>,
}

impl<T: Scalar> Conditioning<T> {
    pub fn new(embedding: Vec<T>, guidance_scale: T) -> Self {
        let unconditional = vec![T::zero(); embedding.len()];
        Self {
            embedding,
            guidance_scale,
            negative_embedding: None,
            paired: false,
            unconditional,
        }
    }

    pub fn with_negative(mut self, negative: Vec<T>) -> Self {
        self.unconditional = negative.clone();
        self.negative_embedding = Some(negative);
        self
    }

    pub fn is_paired(&self) -> bool {
        self.paired
    }

    /// Guidance is active for any scale other than 1.
    pub fn guidance_active(&self) -> bool {
        self.guidance_scale != T::one()
    }

    pub fn embed_dim(&self) -> usize {
        self.embedding.len()
    }

    /// Embedding that applies to row `row` of a batch with `batch_len` rows.
    pub fn row_embedding(&self, row: usize, batch_len: usize) -> &[T] {
        if self.paired && row < batch_len / 2 {
            &self.unconditional
        } else {
            &self.embedding
        }
    }

    /// Unpaired conditioning carrying the embedding of a single row.
    pub fn for_row(&self, row: usize, batch_len: usize) -> Self {
        Self {
            embedding: self.row_embedding(row, batch_len).to_vec(),
            guidance_scale: self.guidance_scale,
            negative_embedding: self.negative_embedding.clone(),
            paired: false,
            unconditional: self.unconditional.clone(),
        }
    }

    fn check_dims(&self, expected: usize) -> Result<()> {
        if self.embedding.len() != expected || self.unconditional.len() != expected {
            return Err(Error::param(format!(
                "conditioning embedding has length {} (negative {}), model expects {expected}",
                self.embedding.len(),
                self.unconditional.len()
            )));
        }
        Ok(())
    }
}

/// Model prediction. `aux` models a tuple-valued output; each entry has the same
/// shape as `epsilon`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelOutput<T> {
    pub epsilon: Matrix<T>,
    pub aux: Vec<Matrix<T>>,
}

impl<T: Scalar> ModelOutput<T> {
    pub fn new(epsilon: Matrix<T>) -> Self {
        Self {
            epsilon,
            aux: Vec::new(),
        }
    }

    pub fn is_tuple(&self) -> bool {
        !self.aux.is_empty()
    }

    pub fn rows(&self) -> usize {
        self.epsilon.rows()
    }

    /// Concatenates per-sample outputs along the batch dimension, field by field
    /// when the outputs are tuples.
    pub fn concat(parts: &[ModelOutput<T>]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::param("cannot concatenate zero outputs"))?;
        let epsilon = Matrix::vstack(parts.iter().map(|p| &p.epsilon))?;
        if !first.is_tuple() {
            return Ok(Self::new(epsilon));
        }
        let fields = first.aux.len();
        if let Some(p) = parts.iter().find(|p| p.aux.len() != fields) {
            return Err(Error::param(format!(
                "tuple outputs disagree on arity ({} vs {fields})",
                p.aux.len()
            )));
        }
        let aux = (0..fields)
            .map(|f| Matrix::vstack(parts.iter().map(|p| &p.aux[f])))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { epsilon, aux })
    }
}

/// `ε_θ(x, t, c)`. Row `i` of the output may depend only on row `i` of the
/// input, its timestep and the conditioning, so batches can be split and
/// reassembled without changing the result.
pub trait VelocityModel<T: Scalar>: Send + Sync {
    /// Latent dimension `D`.
    fn dim(&self) -> usize;

    /// Conditioning embedding length `E`.
    fn embed_dim(&self) -> usize;

    /// Simulated cost of one call, independent of batch size.
    fn cost_per_call(&self) -> Duration {
        Duration::ZERO
    }

    /// The prediction itself, without the simulated cost.
    fn predict(&self, batch: &LatentBatch<T>, cond: &Conditioning<T>) -> Result<ModelOutput<T>>;

    /// Spins for [`cost_per_call`](Self::cost_per_call), then predicts.
    fn forward(&self, batch: &LatentBatch<T>, cond: &Conditioning<T>) -> Result<ModelOutput<T>> {
        self.check_input(batch, cond)?;
        spin_for(self.cost_per_call());
        self.predict(batch, cond)
    }

    fn check_input(&self, batch: &LatentBatch<T>, cond: &Conditioning<T>) -> Result<()> {
        if batch.is_empty() {
            return Err(Error::param("model called with an empty batch"));
        }
        if batch.dim() != self.dim() {
            return Err(Error::param(format!(
                "latent dimension {} does not match model dimension {}",
                batch.dim(),
                self.dim()
            )));
        }
        cond.check_dims(self.embed_dim())
    }
}

impl<T: Scalar, M: VelocityModel<T> + ?Sized> VelocityModel<T> for Box<M> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn embed_dim(&self) -> usize {
        (**self).embed_dim()
    }
    fn cost_per_call(&self) -> Duration {
        (**self).cost_per_call()
    }
    fn predict(&self, batch: &LatentBatch<T>, cond: &Conditioning<T>) -> Result<ModelOutput<T>> {
        (**self).predict(batch, cond)
    }
}

/// `ε_i = A·x_i + t_i·b + W·c_i`.
#[derive(Debug, Clone)]
pub struct AnalyticLinearModel<T> {
    a: Matrix<T>,
    b: Vec<T>,
    cond_proj: Matrix<T>,
    cost: Duration,
    aux_outputs: usize,
}

impl<T: Scalar> AnalyticLinearModel<T> {
    pub const DEFAULT_DIM: usize = 16;
    pub const DEFAULT_EMBED_DIM: usize = 8;

    /// `A` is `D × D`, `b` has length `D`; the conditioning projection starts at zero.
    pub fn new(a: Matrix<T>, b: Vec<T>, embed_dim: usize) -> Result<Self> {
        let d = b.len();
        if a.shape() != (d, d) {
            return Err(Error::param(format!(
                "A is {:?}, expected {d}×{d} to match b",
                a.shape()
            )));
        }
        Ok(Self {
            a,
            b,
            cond_proj: Matrix::zeros(d, embed_dim),
            cost: Duration::ZERO,
            aux_outputs: 0,
        })
    }

    /// `A = 0.1·I`, `b = 0.05·𝟙`.
    pub fn with_dims(dim: usize, embed_dim: usize) -> Self {
        let mut a = Matrix::zeros(dim, dim);
        for i in 0..dim {
            a.row_mut(i)[i] = T::of(0.1);
        }
        Self::new(a, vec![T::of(0.05); dim], embed_dim).expect("square identity fits")
    }

    pub fn with_cond_projection(mut self, w: Matrix<T>) -> Result<Self> {
        if w.shape() != self.cond_proj.shape() {
            return Err(Error::param(format!(
                "conditioning projection is {:?}, expected {:?}",
                w.shape(),
                self.cond_proj.shape()
            )));
        }
        self.cond_proj = w;
        Ok(self)
    }

    pub fn with_cost(mut self, cost: Duration) -> Self {
        self.cost = cost;
        self
    }

    /// Emit `n` auxiliary outputs (`k·ε` for `k = 2..=n+1`) alongside `ε`.
    pub fn with_aux_outputs(mut self, n: usize) -> Self {
        self.aux_outputs = n;
        self
    }
}

impl<T: Scalar> Default for AnalyticLinearModel<T> {
    fn default() -> Self {
        Self::with_dims(Self::DEFAULT_DIM, Self::DEFAULT_EMBED_DIM)
    }
}

impl<T: Scalar> VelocityModel<T> for AnalyticLinearModel<T> {
    fn dim(&self) -> usize {
        self.b.len()
    }

    fn embed_dim(&self) -> usize {
        self.cond_proj.cols()
    }

    fn cost_per_call(&self) -> Duration {
        self.cost
    }

    fn predict(&self, batch: &LatentBatch<T>, cond: &Conditioning<T>) -> Result<ModelOutput<T>> {
        self.check_input(batch, cond)?;
        let n = batch.len();
        let d = self.dim();
        let mut eps = Matrix::zeros(n, d);
        for i in 0..n {
            let x = batch.row(i);
            let t = batch.timesteps()[i];
            let c = cond.row_embedding(i, n);
            let out = eps.row_mut(i);
            for (r, o) in out.iter_mut().enumerate() {
                let ax = dot(self.a.row(r), x);
                let wc = dot(self.cond_proj.row(r), c);
                *o = ax + t * self.b[r] + wc;
            }
        }
        Ok(with_aux(eps, self.aux_outputs))
    }
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

fn with_aux<T: Scalar>(epsilon: Matrix<T>, n: usize) -> ModelOutput<T> {
    let aux = (0..n)
        .map(|k| {
            let scale = T::of((k + 2) as f64);
            let data = epsilon.as_slice().iter().map(|&v| v * scale).collect();
            Matrix::from_vec(epsilon.rows(), epsilon.cols(), data).expect("same shape")
        })
        .collect();
    ModelOutput { epsilon, aux }
}

/// Deterministic pseudo-model: each output coordinate is a hash of
/// `(seed, id, quantized t, coordinate, embedding)` mapped to `[−1, 1)`.
#[derive(Debug, Clone)]
pub struct SeededMockModel {
    dim: usize,
    embed_dim: usize,
    seed: u64,
    cost: Duration,
    aux_outputs: usize,
}

impl SeededMockModel {
    /// Timesteps are quantized to this many steps per unit before hashing.
    pub const TIME_QUANTUM: f64 = 1e6;

    pub fn new(dim: usize, embed_dim: usize, seed: u64) -> Self {
        Self {
            dim,
            embed_dim,
            seed,
            cost: Duration::ZERO,
            aux_outputs: 0,
        }
    }

    pub fn with_cost(mut self, cost: Duration) -> Self {
        self.cost = cost;
        self
    }

    pub fn with_aux_outputs(mut self, n: usize) -> Self {
        self.aux_outputs = n;
        self
    }

    fn value(&self, id: u64, qt: u64, coord: u64, emb: u64) -> f64 {
        let mut h = self.seed;
        for w in [id, qt, coord, emb] {
            h = splitmix64(h ^ w);
        }
        // 53 high bits → [0, 1) → [−1, 1)
        (h >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
    }
}

impl<T: Scalar> VelocityModel<T> for SeededMockModel {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_dim(&self) -> usize {
        self.embed_dim
    }

    fn cost_per_call(&self) -> Duration {
        self.cost
    }

    fn predict(&self, batch: &LatentBatch<T>, cond: &Conditioning<T>) -> Result<ModelOutput<T>> {
        self.check_input(batch, cond)?;
        let n = batch.len();
        let mut eps = Matrix::zeros(n, self.dim);
        for i in 0..n {
            let id = batch.ids()[i];
            let qt = (batch.timesteps()[i].as_f64() * Self::TIME_QUANTUM).round() as u64;
            let emb = hash_embedding(cond.row_embedding(i, n));
            for (c, o) in eps.row_mut(i).iter_mut().enumerate() {
                *o = T::of(self.value(id, qt, c as u64, emb));
            }
        }
        Ok(with_aux(eps, self.aux_outputs))
    }
}

pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn hash_embedding<T: Scalar>(e: &[T]) -> u64 {
    e.iter()
        .fold(0u64, |h, &v| splitmix64(h ^ v.as_f64().to_bits()))
}

/// Doubles the batch as `[unconditional; conditional]` when guidance is active.
pub fn apply_cfg<T: Scalar>(
    batch: &LatentBatch<T>,
    cond: &Conditioning<T>,
) -> Result<(LatentBatch<T>, Conditioning<T>)> {
    if !cond.guidance_active() || cond.paired {
        return Ok((batch.clone(), cond.clone()));
    }
    let n = batch.len();
    let order: Vec<usize> = (0..n).chain(0..n).collect();
    let doubled = batch.select(&order);
    let mut paired = cond.clone();
    paired.paired = true;
    Ok((doubled, paired))
}

/// Recombines a paired output as `ε_u + w·(ε_c − ε_u)`; unpaired outputs pass through.
pub fn handle_cfg<T: Scalar>(out: ModelOutput<T>, cond: &Conditioning<T>) -> Result<ModelOutput<T>> {
    if !cond.paired {
        return Ok(out);
    }
    if out.rows() % 2 != 0 {
        return Err(Error::State(format!(
            "guidance output has an odd number of rows ({})",
            out.rows()
        )));
    }
    let w = cond.guidance_scale;
    let ModelOutput { epsilon, aux } = out;
    Ok(ModelOutput {
        epsilon: combine(&epsilon, w),
        aux: aux.iter().map(|m| combine(m, w)).collect(),
    })
}

fn combine<T: Scalar>(m: &Matrix<T>, w: T) -> Matrix<T> {
    let half = m.rows() / 2;
    let d = m.cols();
    let (uncond, cond) = m.as_slice().split_at(half * d);
    let data = if w == T::one() {
        cond.to_vec()
    } else {
        uncond
            .iter()
            .zip(cond)
            .map(|(&u, &c)| u + w * (c - u))
            .collect()
    };
    Matrix::from_vec(half, d, data).expect("half of an even matrix")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Analytic,
    #[default]
    Mock,
}

/// `[model]` block of a run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub model: ModelKind,
    pub dim: usize,
    pub embed_dim: usize,
    pub cost_us_per_call: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            model: ModelKind::Mock,
            dim: 16,
            embed_dim: 8,
            cost_us_per_call: 0.0,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, reason: &str| Error::Validation {
            key: format!("model.{key}"),
            reason: reason.into(),
        };
        if self.dim == 0 {
            return Err(bad("dim", "must be at least 1"));
        }
        if !(self.cost_us_per_call.is_finite() && self.cost_us_per_call >= 0.0) {
            return Err(bad("cost_us_per_call", "must be a non-negative duration"));
        }
        Ok(())
    }

    pub fn build<T: Scalar>(&self) -> Box<dyn VelocityModel<T>> {
        let cost = Duration::from_secs_f64(self.cost_us_per_call * 1e-6);
        match self.model {
            ModelKind::Analytic => {
                Box::new(AnalyticLinearModel::with_dims(self.dim, self.embed_dim).with_cost(cost))
            }
            ModelKind::Mock => {
                Box::new(SeededMockModel::new(self.dim, self.embed_dim, self.seed).with_cost(cost))
            }
        }
    }
}
