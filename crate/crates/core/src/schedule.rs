//! Noise schedule, time-window partition and per-timestep window coefficients.
//!
//! Every public function takes normalized flow time `τ ∈ [0, 1]`, running from
//! pure noise at `τ = 0` to data at `τ = 1`. The diffusion noise table is indexed
//! in the opposite direction: `τ = 0` maps to the last (noisiest) train step.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const DEFAULT_T_MAX: usize = 1000;
pub const DEFAULT_BETA_START: f64 = 1e-4;
pub const DEFAULT_BETA_END: f64 = 0.02;
pub const DEFAULT_NUM_WINDOWS: usize = 4;
pub const DEFAULT_EPS: f64 = 1e-6;
pub const DEFAULT_INFERENCE_STEPS: usize = 4;

/// Diffusion rates `β` and their running survival product `ᾱ_i = Π_{j≤i}(1 − β_j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule<T> {
    betas: Vec<T>,
    alphas_cumprod: Vec<T>,
}

impl<T: Scalar> NoiseSchedule<T> {
    /// Linearly spaced `β` from `beta_start` to `beta_end` over `t_max` train steps.
    pub fn linear(t_max: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if t_max < 2 {
            return Err(Error::param(format!("t_max must be at least 2, got {t_max}")));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::param(format!(
                "need 0 < beta_start <= beta_end < 1, got [{beta_start}, {beta_end}]"
            )));
        }
        let start = T::of(beta_start);
        let span = T::of(beta_end) - start;
        let last = T::of((t_max - 1) as f64);
        let betas: Vec<T> = (0..t_max)
            .map(|i| start + span * T::of(i as f64) / last)
            .collect();
        let alphas_cumprod = running_survival(&betas);
        Ok(Self {
            betas,
            alphas_cumprod,
        })
    }

    /// Builds a schedule from an explicit `ᾱ` table. The table must be
    /// non-increasing with values in `(0, 1]`; a flat table is accepted and gives
    /// `γ = 1` in every window.
    pub fn from_alphas_cumprod(alphas_cumprod: Vec<T>) -> Result<Self> {
        if alphas_cumprod.len() < 2 {
            return Err(Error::param("alphas_cumprod needs at least 2 entries"));
        }
        let mut prev = T::one();
        let mut betas = Vec::with_capacity(alphas_cumprod.len());
        for (i, &a) in alphas_cumprod.iter().enumerate() {
            if !(a > T::zero() && a <= prev) {
                return Err(Error::param(format!(
                    "alphas_cumprod[{i}] = {a} must lie in (0, {prev}]"
                )));
            }
            betas.push(T::one() - a / prev);
            prev = a;
        }
        Ok(Self {
            betas,
            alphas_cumprod,
        })
    }

    /// `ᾱ ≡ 1`: the degenerate schedule under which every window step is a fixed point.
    pub fn constant(t_max: usize) -> Result<Self> {
        Self::from_alphas_cumprod(vec![T::one(); t_max])
    }

    pub fn t_max(&self) -> usize {
        self.alphas_cumprod.len()
    }

    pub fn betas(&self) -> &[T] {
        &self.betas
    }

    pub fn alphas_cumprod(&self) -> &[T] {
        &self.alphas_cumprod
    }

    /// Train-step index for flow time `tau`: `round((1 − τ)(t_max − 1))`, halves rounded up.
    pub fn index_of(&self, tau: T) -> usize {
        let last = self.t_max() - 1;
        let pos = (T::one() - tau) * T::of(last as f64);
        let idx = (pos + T::of(0.5)).floor();
        if idx <= T::zero() {
            0
        } else {
            idx.to_usize().map_or(last, |i| i.min(last))
        }
    }

    pub fn alpha_at(&self, tau: T) -> T {
        self.alphas_cumprod[self.index_of(tau)]
    }
}

fn running_survival<T: Scalar>(betas: &[T]) -> Vec<T> {
    betas
        .iter()
        .scan(T::one(), |acc, &b| {
            *acc = *acc * (T::one() - b);
            Some(*acc)
        })
        .collect()
}

/// Window partition `[e_0 = 0, …, e_K = 1]`, boundary tolerance and the inference grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeWindowSchedule<T> {
    boundaries: Vec<T>,
    eps: T,
    noise: NoiseSchedule<T>,
    grid: Vec<T>,
}

impl<T: Scalar> TimeWindowSchedule<T> {
    pub fn new(boundaries: Vec<T>, eps: T, noise: NoiseSchedule<T>, grid: Vec<T>) -> Result<Self> {
        if boundaries.len() < 2 {
            return Err(Error::param("need at least one window (two boundaries)"));
        }
        if boundaries[0] != T::zero() || boundaries[boundaries.len() - 1] != T::one() {
            return Err(Error::param("window boundaries must start at 0 and end at 1"));
        }
        let mut min_width = T::infinity();
        for w in boundaries.windows(2) {
            let width = w[1] - w[0];
            if !(width > T::zero()) {
                return Err(Error::param(format!(
                    "window boundaries must be strictly increasing ({} then {})",
                    w[0], w[1]
                )));
            }
            min_width = min_width.min(width);
        }
        if !(eps > T::zero() && eps < min_width / T::of(2.0)) {
            return Err(Error::param(format!(
                "eps = {eps} must be positive and below half the narrowest window ({min_width})"
            )));
        }
        if grid.is_empty() {
            return Err(Error::param("inference grid is empty"));
        }
        if !(grid[0] >= T::zero() && grid[grid.len() - 1] < T::one()) {
            return Err(Error::param(
                "inference grid must lie in [0, 1) (the terminal time 1 is implicit)",
            ));
        }
        if grid.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::param("inference grid must be strictly increasing"));
        }
        Ok(Self {
            boundaries,
            eps,
            noise,
            grid,
        })
    }

    /// Default noise table, four equal windows, `ε = 1e-6`, uniform grid of `steps` points.
    pub fn with_steps(steps: usize) -> Result<Self> {
        Self::new(
            equal_windows(DEFAULT_NUM_WINDOWS)?,
            T::of(DEFAULT_EPS),
            NoiseSchedule::linear(DEFAULT_T_MAX, DEFAULT_BETA_START, DEFAULT_BETA_END)?,
            uniform_grid(steps)?,
        )
    }

    /// Same partition and grid with a different noise table.
    pub fn with_noise(&self, noise: NoiseSchedule<T>) -> Self {
        Self {
            noise,
            ..self.clone()
        }
    }

    pub fn num_windows(&self) -> usize {
        self.boundaries.len() - 1
    }

    pub fn boundaries(&self) -> &[T] {
        &self.boundaries
    }

    pub fn window(&self, k: usize) -> (T, T) {
        (self.boundaries[k], self.boundaries[k + 1])
    }

    pub fn eps(&self) -> T {
        self.eps
    }

    pub fn noise(&self) -> &NoiseSchedule<T> {
        &self.noise
    }

    pub fn grid(&self) -> &[T] {
        &self.grid
    }

    /// Position of `t` on the inference grid, matched within `ε`.
    pub fn grid_index(&self, t: T) -> Result<usize> {
        let lo = self.grid.partition_point(|&g| g < t - self.eps);
        match self.grid.get(lo) {
            Some(&g) if (g - t).abs() <= self.eps => Ok(lo),
            _ => Err(Error::domain(format!("time {t} is not on the inference grid"))),
        }
    }

    /// Successor of grid point `idx`; the last grid point is followed by `1`.
    pub fn successor(&self, idx: usize) -> T {
        self.grid.get(idx + 1).copied().unwrap_or_else(T::one)
    }
}

impl<T: Scalar> Default for TimeWindowSchedule<T> {
    fn default() -> Self {
        Self::with_steps(DEFAULT_INFERENCE_STEPS).expect("default schedule is valid")
    }
}

/// `[0, 1/k, …, 1]`.
pub fn equal_windows<T: Scalar>(k: usize) -> Result<Vec<T>> {
    if k == 0 {
        return Err(Error::param("number of windows must be at least 1"));
    }
    let kf = T::of(k as f64);
    Ok((0..=k).map(|i| T::of(i as f64) / kf).collect())
}

/// `[0, 1/n, …, (n−1)/n]`.
pub fn uniform_grid<T: Scalar>(n: usize) -> Result<Vec<T>> {
    if n == 0 {
        return Err(Error::param("inference grid needs at least one step"));
    }
    let nf = T::of(n as f64);
    Ok((0..n).map(|i| T::of(i as f64) / nf).collect())
}

fn check_unit_interval<T: Scalar>(ts: &[T]) -> Result<()> {
    match ts.iter().position(|&t| !(t >= T::zero() && t <= T::one())) {
        Some(i) => Err(Error::domain(format!(
            "time {} at position {i} is outside [0, 1]",
            ts[i]
        ))),
        None => Ok(()),
    }
}

/// Window index for each time: the number of interior boundaries `e_j` with `t > e_j + ε`.
///
/// Times within `ε` above a boundary stay in the lower window.
pub fn window_lookup<T: Scalar>(ts: &[T], sched: &TimeWindowSchedule<T>) -> Result<Vec<usize>> {
    check_unit_interval(ts)?;
    let mut k = vec![0usize; ts.len()];
    let interior = &sched.boundaries[1..sched.boundaries.len() - 1];
    for &edge in interior {
        let threshold = edge + sched.eps;
        for (ki, &t) in k.iter_mut().zip(ts) {
            *ki += usize::from(t > threshold);
        }
    }
    Ok(k)
}

/// Window coefficients for a batch of times, one entry per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowParams<T> {
    pub window: Vec<usize>,
    pub t_s: Vec<T>,
    pub t_e: Vec<T>,
    pub gamma: Vec<T>,
    pub lambda_s: Vec<T>,
    pub eta_s: Vec<T>,
    pub lambda_t: Vec<T>,
    pub eta_t: Vec<T>,
}

impl<T> WindowParams<T> {
    pub fn len(&self) -> usize {
        self.window.len()
    }

    pub fn is_empty(&self) -> bool {
        self.window.is_empty()
    }
}

/// Coefficients for a single time, produced by the scalar path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleWindowParams<T> {
    pub window: usize,
    pub t_s: T,
    pub t_e: T,
    pub gamma: T,
    pub lambda_s: T,
    pub eta_s: T,
    pub lambda_t: T,
    pub eta_t: T,
}

impl<T: Scalar> SampleWindowParams<T> {
    /// True when the sample sits at its window end and the step degenerates.
    pub fn at_window_end(&self, t: T, eps: T) -> bool {
        self.t_e - t <= eps
    }
}

/// Batched window coefficients, computed as whole-batch element-wise passes.
pub fn window_params<T: Scalar>(ts: &[T], sched: &TimeWindowSchedule<T>) -> Result<WindowParams<T>> {
    let window = window_lookup(ts, sched)?;
    let one = T::one();
    let eps = sched.eps;
    let noise = &sched.noise;

    let t_s: Vec<T> = window.iter().map(|&k| sched.boundaries[k]).collect();
    let t_e: Vec<T> = window.iter().map(|&k| sched.boundaries[k + 1]).collect();
    let gamma: Vec<T> = t_s
        .iter()
        .zip(&t_e)
        .map(|(&s, &e)| (noise.alpha_at(s) / noise.alpha_at(e)).sqrt())
        .collect();
    let lambda_s: Vec<T> = gamma.iter().map(|&g| one / g).collect();
    let eta_s: Vec<T> = gamma.iter().map(|&g| -(one - g * g).sqrt() / g).collect();

    let n = ts.len();
    let mut denom = Vec::with_capacity(n);
    for i in 0..n {
        denom.push(lambda_s[i] * (ts[i] - t_s[i]) + (t_e[i] - ts[i]));
    }
    if let Some(i) = denom.iter().position(|&d| !(d > T::zero())) {
        return Err(Error::Invariant(format!(
            "non-positive window denominator {} at t = {}",
            denom[i], ts[i]
        )));
    }
    let mut lambda_t = Vec::with_capacity(n);
    let mut eta_t = Vec::with_capacity(n);
    for i in 0..n {
        if t_e[i] - ts[i] <= eps {
            lambda_t.push(one);
            eta_t.push(T::zero());
        } else {
            lambda_t.push(lambda_s[i] * (t_e[i] - t_s[i]) / denom[i]);
            eta_t.push(eta_s[i] * (t_e[i] - ts[i]) / denom[i]);
        }
    }

    Ok(WindowParams {
        window,
        t_s,
        t_e,
        gamma,
        lambda_s,
        eta_s,
        lambda_t,
        eta_t,
    })
}

/// Single-time coefficients via a direct scan over the windows.
pub fn sample_window_params<T: Scalar>(
    t: T,
    sched: &TimeWindowSchedule<T>,
) -> Result<SampleWindowParams<T>> {
    check_unit_interval(std::slice::from_ref(&t))?;
    let eps = sched.eps;
    let k_last = sched.num_windows() - 1;
    // Lowest window whose (tolerance-widened) right edge covers t.
    let window = (0..k_last)
        .find(|&k| t <= sched.boundaries[k + 1] + eps)
        .unwrap_or(k_last);
    let (t_s, t_e) = sched.window(window);

    let one = T::one();
    let gamma = (sched.noise.alpha_at(t_s) / sched.noise.alpha_at(t_e)).sqrt();
    let lambda_s = one / gamma;
    let eta_s = -(one - gamma * gamma).sqrt() / gamma;
    let denom = lambda_s * (t - t_s) + (t_e - t);
    if !(denom > T::zero()) {
        return Err(Error::Invariant(format!(
            "non-positive window denominator {denom} at t = {t}"
        )));
    }
    let (lambda_t, eta_t) = if t_e - t <= eps {
        (one, T::zero())
    } else {
        (
            lambda_s * (t_e - t_s) / denom,
            eta_s * (t_e - t) / denom,
        )
    };
    Ok(SampleWindowParams {
        window,
        t_s,
        t_e,
        gamma,
        lambda_s,
        eta_s,
        lambda_t,
        eta_t,
    })
}

/// Successor on the inference grid for each time; the last grid point maps to `1`.
pub fn next_timestep<T: Scalar>(ts: &[T], sched: &TimeWindowSchedule<T>) -> Result<Vec<T>> {
    ts.iter()
        .map(|&t| sched.grid_index(t).map(|i| sched.successor(i)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    #[default]
    F64,
}

/// `[schedule]` block of a run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleConfig {
    pub t_max: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub num_windows: Option<usize>,
    pub boundaries: Option<Vec<f64>>,
    pub eps: f64,
    /// Grid length; when absent the grid has as many points as the run has steps.
    pub inference_steps: Option<usize>,
    pub precision: Precision,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            t_max: DEFAULT_T_MAX,
            beta_start: DEFAULT_BETA_START,
            beta_end: DEFAULT_BETA_END,
            num_windows: None,
            boundaries: None,
            eps: DEFAULT_EPS,
            inference_steps: None,
            precision: Precision::F64,
        }
    }
}

fn invalid(key: &str, reason: impl Into<String>) -> Error {
    Error::Validation {
        key: format!("schedule.{key}"),
        reason: reason.into(),
    }
}

impl ScheduleConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.t_max < 2 {
            return Err(invalid("t_max", "must be at least 2"));
        }
        if !(self.beta_start > 0.0 && self.beta_start < 1.0) {
            return Err(invalid("beta_start", "must lie in (0, 1)"));
        }
        if !(self.beta_end >= self.beta_start && self.beta_end < 1.0) {
            return Err(invalid("beta_end", "must lie in [beta_start, 1)"));
        }
        if !(self.eps.is_finite() && self.eps > 0.0) {
            return Err(invalid("eps", format!("must be positive, got {}", self.eps)));
        }
        if self.num_windows == Some(0) {
            return Err(invalid("num_windows", "must be at least 1"));
        }
        if let Some(b) = &self.boundaries {
            if b.len() < 2 || b[0] != 0.0 || b[b.len() - 1] != 1.0 {
                return Err(invalid("boundaries", "must start at 0 and end at 1"));
            }
            if b.windows(2).any(|w| !(w[1] > w[0])) {
                return Err(invalid("boundaries", "must be strictly increasing"));
            }
            if let Some(k) = self.num_windows {
                if k != b.len() - 1 {
                    return Err(invalid(
                        "num_windows",
                        format!("is {k} but boundaries describe {} windows", b.len() - 1),
                    ));
                }
            }
        }
        if self.inference_steps == Some(0) {
            return Err(invalid("inference_steps", "must be at least 1"));
        }
        let widths = self.boundary_list();
        let min_width = widths.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
        if self.eps >= min_width / 2.0 {
            return Err(invalid(
                "eps",
                format!("must be below half the narrowest window ({min_width})"),
            ));
        }
        Ok(())
    }

    fn boundary_list(&self) -> Vec<f64> {
        match &self.boundaries {
            Some(b) => b.clone(),
            None => equal_windows(self.num_windows.unwrap_or(DEFAULT_NUM_WINDOWS))
                .unwrap_or_else(|_| vec![0.0, 1.0]),
        }
    }

    /// Grid length actually used for a run of `steps` denoising steps.
    pub fn grid_len(&self, steps: usize) -> usize {
        self.inference_steps.unwrap_or(steps)
    }

    pub fn build<T: Scalar>(&self, steps: usize) -> Result<TimeWindowSchedule<T>> {
        self.validate()?;
        let boundaries = self.boundary_list().into_iter().map(T::of).collect();
        let noise = NoiseSchedule::linear(self.t_max, self.beta_start, self.beta_end)?;
        TimeWindowSchedule::new(
            boundaries,
            T::of(self.eps),
            noise,
            uniform_grid(self.grid_len(steps))?,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quarter_sched(grid: Vec<f64>) -> TimeWindowSchedule<f64> {
        TimeWindowSchedule::new(
            equal_windows(4).unwrap(),
            1e-6,
            NoiseSchedule::linear(1000, 1e-4, 0.02).unwrap(),
            grid,
        )
        .unwrap()
    }

    #[test]
    fn two_step_constant_beta_schedule() {
        let s = NoiseSchedule::<f64>::linear(2, 0.5, 0.5).unwrap();
        assert_eq!(s.alphas_cumprod(), &[0.5, 0.25]);
        assert_eq!(s.betas(), &[0.5, 0.5]);
    }

    #[test]
    fn default_schedule_head_and_tail() {
        let s = NoiseSchedule::<f64>::linear(1000, 1e-4, 0.02).unwrap();
        assert_eq!(s.t_max(), 1000);
        assert!((s.alphas_cumprod()[0] - 0.9999).abs() < 1e-15);
        // Running product evaluated independently, term by term.
        let mut acc = 1.0f64;
        for i in 0..1000 {
            acc *= 1.0 - (1e-4 + (0.02 - 1e-4) * i as f64 / 999.0);
        }
        assert!((s.alphas_cumprod()[999] - acc).abs() <= 1e-15 * acc.abs().max(1e-300) * 1e3);
        assert!(s.alphas_cumprod().windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn noise_schedule_rejects_bad_ranges() {
        assert!(matches!(
            NoiseSchedule::<f64>::linear(1000, 0.0, 0.02),
            Err(Error::Parameter(_))
        ));
        assert!(NoiseSchedule::<f64>::linear(1, 0.1, 0.2).is_err());
        assert!(NoiseSchedule::<f64>::linear(10, 0.2, 0.1).is_err());
        assert!(NoiseSchedule::<f64>::linear(10, 0.1, 1.0).is_err());
    }

    #[test]
    fn index_mapping_is_reversed_and_clamped() {
        let s = NoiseSchedule::<f64>::linear(1000, 1e-4, 0.02).unwrap();
        assert_eq!(s.index_of(0.0), 999);
        assert_eq!(s.index_of(1.0), 0);
        assert_eq!(s.index_of(0.5), 500); // 499.5 rounds up
        assert_eq!(s.index_of(0.75), 250); // 249.75
    }

    #[test]
    fn lookup_examples() {
        let sched = quarter_sched(vec![0.0, 0.25, 0.5, 0.75]);
        assert_eq!(window_lookup(&[0.6], &sched).unwrap(), vec![2]);
        assert_eq!(window_lookup(&[0.5], &sched).unwrap(), vec![1]);
        assert_eq!(window_lookup(&[0.1, 0.3, 0.9], &sched).unwrap(), vec![0, 1, 3]);
        assert_eq!(window_lookup(&[0.0, 1.0], &sched).unwrap(), vec![0, 3]);
        assert_eq!(window_lookup(&[0.5 + 5e-7], &sched).unwrap(), vec![1]);
        assert!(matches!(
            window_lookup(&[1.5], &sched),
            Err(Error::Domain(_))
        ));
        assert!(window_lookup(&[-0.1], &sched).is_err());
        assert!(window_lookup(&[f64::NAN], &sched).is_err());
    }

    #[test]
    fn constant_alpha_collapses_coefficients() {
        let sched = quarter_sched(vec![0.0, 0.25, 0.5, 0.75])
            .with_noise(NoiseSchedule::constant(1000).unwrap());
        let ts = [0.0, 0.1, 0.3, 0.62, 0.9, 1.0];
        let p = window_params(&ts, &sched).unwrap();
        for i in 0..ts.len() {
            assert_eq!(p.gamma[i], 1.0);
            assert_eq!(p.lambda_t[i], 1.0);
            assert_eq!(p.eta_t[i], 0.0);
        }
    }

    #[test]
    fn window_end_and_start_limits() {
        let sched = quarter_sched(vec![0.0]);
        // Ends of each window, assigned to the lower window.
        let p = window_params(&[0.25, 0.5, 0.75, 1.0], &sched).unwrap();
        assert_eq!(p.lambda_t, vec![1.0; 4]);
        assert!(p.eta_t.iter().all(|&e| e == 0.0));
        // Interior starts (just past the tolerance band) reproduce λ_s, η_s.
        let p = window_params(&[0.0], &sched).unwrap();
        assert_eq!(p.lambda_t[0], p.lambda_s[0]);
        assert_eq!(p.eta_t[0], p.eta_s[0]);
        assert!(p.gamma[0] > 0.0 && p.gamma[0] < 1.0);
        assert!(p.lambda_s[0] >= 1.0 && p.eta_s[0] <= 0.0);
    }

    #[test]
    fn scalar_and_batched_paths_agree_bitwise() {
        let sched = quarter_sched(vec![0.0]);
        let ts: Vec<f64> = (0..=200).map(|i| i as f64 / 200.0).collect();
        let p = window_params(&ts, &sched).unwrap();
        for (i, &t) in ts.iter().enumerate() {
            let s = sample_window_params(t, &sched).unwrap();
            assert_eq!(s.window, p.window[i]);
            assert_eq!(s.lambda_t.to_bits(), p.lambda_t[i].to_bits(), "t = {t}");
            assert_eq!(s.eta_t.to_bits(), p.eta_t[i].to_bits(), "t = {t}");
        }
    }

    #[test]
    fn next_timestep_examples() {
        let sched = quarter_sched(vec![0.0, 0.25, 0.5, 0.75]);
        assert_eq!(next_timestep(&[0.25], &sched).unwrap(), vec![0.5]);
        assert_eq!(next_timestep(&[0.75], &sched).unwrap(), vec![1.0]);
        assert_eq!(next_timestep(&[0.0, 0.75], &sched).unwrap(), vec![0.25, 1.0]);
        assert_eq!(next_timestep(&[0.25 + 1e-9], &sched).unwrap(), vec![0.5]);
        assert!(matches!(
            next_timestep(&[0.3], &sched),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn schedule_validation() {
        let noise = NoiseSchedule::<f64>::linear(10, 0.1, 0.2).unwrap();
        let ok = |b: Vec<f64>, eps: f64, g: Vec<f64>| {
            TimeWindowSchedule::new(b, eps, noise.clone(), g).is_ok()
        };
        assert!(ok(vec![0.0, 1.0], 1e-6, vec![0.0]));
        assert!(!ok(vec![0.0, 0.5, 0.5, 1.0], 1e-6, vec![0.0]));
        assert!(!ok(vec![0.1, 1.0], 1e-6, vec![0.1]));
        assert!(!ok(vec![0.0, 1.0], 0.0, vec![0.0]));
        assert!(!ok(vec![0.0, 0.5, 1.0], 0.3, vec![0.0]));
        assert!(!ok(vec![0.0, 1.0], 1e-6, vec![]));
        assert!(!ok(vec![0.0, 1.0], 1e-6, vec![0.5, 0.2]));
        assert!(!ok(vec![0.0, 1.0], 1e-6, vec![0.0, 1.0]));
    }

    #[test]
    fn config_parses_and_builds() {
        let cfg = ScheduleConfig::from_toml_str(
            "t_max = 500\nbeta_start = 0.001\nbeta_end = 0.01\nboundaries = [0.0, 0.4, 1.0]\n\
             eps = 1e-5\ninference_steps = 8\nprecision = \"f32\"\n",
        )
        .unwrap();
        assert_eq!(cfg.precision, Precision::F32);
        let s: TimeWindowSchedule<f32> = cfg.build(3).unwrap();
        assert_eq!(s.num_windows(), 2);
        assert_eq!(s.grid().len(), 8);
        assert_eq!(s.noise().t_max(), 500);

        let d: TimeWindowSchedule<f64> = ScheduleConfig::default().build(6).unwrap();
        assert_eq!(d.grid().len(), 6);
        assert_eq!(d.boundaries(), &[0.0, 0.25, 0.5, 0.75, 1.0]);
    }

    #[test]
    fn config_rejects_bad_keys() {
        assert!(matches!(
            ScheduleConfig::from_toml_str("bogus = 1\n"),
            Err(Error::Config(_))
        ));
        match ScheduleConfig::from_toml_str("eps = -1e-6\n") {
            Err(Error::Validation { key, .. }) => assert_eq!(key, "schedule.eps"),
            other => panic!("unexpected {other:?}"),
        }
        assert!(ScheduleConfig::from_toml_str("num_windows = 3\nboundaries = [0.0, 1.0]\n").is_err());
    }
}
