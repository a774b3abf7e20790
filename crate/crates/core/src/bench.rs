//! Closed-form throughput model and a wall-clock harness that checks it.

use std::fmt::Write as _;
use std::path::Path;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::engine::{CompiledEngine, Denoiser};
use crate::error::{Error, Result};
use crate::model::{Conditioning, ModelKind, SeededMockModel, AnalyticLinearModel, VelocityModel};
use crate::pipeline::{run_stream, run_vanilla, RunParams};
use crate::schedule::TimeWindowSchedule;

/// Per-operation costs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostParams {
    /// One model call, whatever its batch size.
    pub c_unet: Duration,
    /// One scheduler call.
    pub c_sched: Duration,
    /// One decode.
    pub c_vae: Duration,
    /// Fixed overhead of one compiled-engine call.
    pub o_trt: Duration,
    /// Compiled-engine cost relative to `c_unet`.
    pub trt_speed_factor: f64,
}

impl CostParams {
    pub fn new(c_unet: Duration, c_sched: Duration, c_vae: Duration) -> Self {
        Self {
            c_unet,
            c_sched,
            c_vae,
            o_trt: Duration::ZERO,
            trt_speed_factor: crate::engine::DEFAULT_SPEED_FACTOR,
        }
    }

    pub fn from_micros(c_unet: f64, c_sched: f64, c_vae: f64) -> Self {
        Self::new(us(c_unet), us(c_sched), us(c_vae))
    }

    pub fn with_engine(mut self, o_trt: Duration, speed_factor: f64) -> Self {
        self.o_trt = o_trt;
        self.trt_speed_factor = speed_factor;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.trt_speed_factor > 0.0 && self.trt_speed_factor <= 1.0) {
            return Err(Error::param(format!(
                "trt_speed_factor must lie in (0, 1], got {}",
                self.trt_speed_factor
            )));
        }
        Ok(())
    }

    /// Cost of one compiled-engine call: `o_trt + speed · c_unet`.
    pub fn engine_call(&self) -> Duration {
        self.o_trt + self.c_unet.mul_f64(self.trt_speed_factor)
    }
}

fn us(v: f64) -> Duration {
    Duration::from_secs_f64(v * 1e-6)
}

fn times(d: Duration, k: usize) -> Duration {
    d.checked_mul(k as u32).expect("simulated duration fits")
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub vanilla: Duration,
    pub ours: Duration,
}

impl Prediction {
    pub fn speedup(&self) -> f64 {
        self.vanilla.as_secs_f64() / self.ours.as_secs_f64()
    }
}

/// `T_vanilla = m·(n·c_unet + n·c_sched + c_vae)` and
/// `T_ours = (m + n − 1)·(c_unet + c_sched) + m·c_vae`.
pub fn predict_times(m: usize, n: usize, costs: &CostParams) -> Prediction {
    let per_step = costs.c_unet + costs.c_sched;
    Prediction {
        vanilla: times(times(per_step, n) + costs.c_vae, m),
        ours: times(per_step, m + n - 1) + times(costs.c_vae, m),
    }
}

/// Live generations in each iteration of a streaming run (warmup ramp, steady state, drain).
pub fn stream_batch_sizes(m: usize, n: usize) -> Vec<usize> {
    (0..m + n - 1)
        .map(|j| {
            let newest = j.min(m - 1);
            let oldest = (j + 1).saturating_sub(n);
            newest - oldest + 1
        })
        .collect()
}

/// Engine calls issued by the dispatcher in each streaming iteration. Guidance
/// doubles a heterogeneous batch before it is split.
pub fn stream_engine_calls(m: usize, n: usize, guidance: bool) -> Vec<usize> {
    let rows_per_sample = if guidance { 2 } else { 1 };
    stream_batch_sizes(m, n)
        .into_iter()
        .map(|b| if b == 1 { 1 } else { b * rows_per_sample })
        .collect()
}

/// The closed forms with every model call replaced by compiled-engine calls.
pub fn predict_engine_times(m: usize, n: usize, guidance: bool, costs: &CostParams) -> Prediction {
    let call = costs.engine_call();
    let calls: usize = stream_engine_calls(m, n, guidance).iter().sum();
    Prediction {
        vanilla: times(call + costs.c_sched, m * n) + times(costs.c_vae, m),
        ours: times(call, calls) + times(costs.c_sched, m + n - 1) + times(costs.c_vae, m),
    }
}

/// One benchmark case. `model` and `engine` are looked up by name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchCase {
    pub label: String,
    pub m: usize,
    pub n: usize,
    #[serde(default = "default_model_name")]
    pub model: String,
    #[serde(default = "default_engine_name")]
    pub engine: String,
    #[serde(default = "default_guidance")]
    pub guidance: f64,
}

fn default_model_name() -> String {
    "mock".into()
}

fn default_engine_name() -> String {
    "none".into()
}

fn default_guidance() -> f64 {
    1.0
}

impl BenchCase {
    pub fn new(label: impl Into<String>, m: usize, n: usize) -> Self {
        Self {
            label: label.into(),
            m,
            n,
            model: default_model_name(),
            engine: default_engine_name(),
            guidance: default_guidance(),
        }
    }

    pub fn with_engine(mut self, engine: impl Into<String>) -> Self {
        self.engine = engine.into();
        self
    }

    fn model_kind(&self) -> Result<ModelKind> {
        match self.model.as_str() {
            "mock" => Ok(ModelKind::Mock),
            "analytic" => Ok(ModelKind::Analytic),
            other => Err(Error::param(format!(
                "benchmark case `{}` references unknown model `{other}`",
                self.label
            ))),
        }
    }

    fn compiled(&self) -> Result<bool> {
        match self.engine.as_str() {
            "none" => Ok(false),
            "compiled" => Ok(true),
            other => Err(Error::param(format!(
                "benchmark case `{}` references unknown engine `{other}`",
                self.label
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub label: String,
    pub m: usize,
    pub n: usize,
    pub pred_vanilla_us: f64,
    pub pred_ours_us: f64,
    pub meas_vanilla_us: f64,
    pub meas_ours_us: f64,
    pub speedup: f64,
}

impl BenchRow {
    /// Largest relative deviation of a measurement from its prediction.
    pub fn prediction_error(&self) -> f64 {
        let rel = |meas: f64, pred: f64| ((meas - pred) / pred).abs();
        rel(self.meas_vanilla_us, self.pred_vanilla_us).max(rel(self.meas_ours_us, self.pred_ours_us))
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BenchOptions {
    pub repetitions: usize,
    /// Run cases on separate threads. Timings interfere unless cores are free.
    pub parallel: bool,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self {
            repetitions: 5,
            parallel: false,
        }
    }
}

const BENCH_DIM: usize = 16;
const BENCH_EMBED_DIM: usize = 8;

fn bench_model(kind: ModelKind, cost: Duration) -> Box<dyn VelocityModel<f64>> {
    match kind {
        ModelKind::Mock => Box::new(SeededMockModel::new(BENCH_DIM, BENCH_EMBED_DIM, 0).with_cost(cost)),
        ModelKind::Analytic => {
            Box::new(AnalyticLinearModel::with_dims(BENCH_DIM, BENCH_EMBED_DIM).with_cost(cost))
        }
    }
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / 2.0
    }
}

fn time_us(f: impl FnOnce() -> Result<()>) -> Result<f64> {
    let start = Instant::now();
    f()?;
    Ok(start.elapsed().as_secs_f64() * 1e6)
}

/// Measures one case: median wall-clock of the sequential and streaming runs.
pub fn measure_case(case: &BenchCase, costs: &CostParams, repetitions: usize) -> Result<BenchRow> {
    if repetitions == 0 {
        return Err(Error::param("repetitions must be at least 1"));
    }
    if case.m == 0 || case.n == 0 {
        return Err(Error::param(format!("benchmark case `{}` needs m, n ≥ 1", case.label)));
    }
    costs.validate()?;
    let kind = case.model_kind()?;
    let compiled = case.compiled()?;
    let sched = TimeWindowSchedule::<f64>::with_steps(case.n)?;
    let cond = Conditioning::new(vec![0.5; BENCH_EMBED_DIM], case.guidance);
    let params = RunParams::new(case.m, case.n, 0).with_costs(costs.c_sched, costs.c_vae);
    let guidance = cond.guidance_active();

    let denoiser = || -> Result<Box<dyn Denoiser<f64>>> {
        let model = bench_model(kind, costs.c_unet);
        Ok(if compiled {
            Box::new(CompiledEngine::new(model, costs.o_trt, costs.trt_speed_factor, sched.eps())?)
        } else {
            Box::new(model)
        })
    };

    let mut vanilla = Vec::with_capacity(repetitions);
    let mut ours = Vec::with_capacity(repetitions);
    for _ in 0..repetitions {
        let d = denoiser()?;
        vanilla.push(time_us(|| run_vanilla(params, d.as_ref(), &cond, &sched).map(drop))?);
        let d = denoiser()?;
        ours.push(time_us(|| run_stream(params, d.as_ref(), &cond, &sched).map(drop))?);
    }

    let pred = if compiled {
        predict_engine_times(case.m, case.n, guidance, costs)
    } else {
        predict_times(case.m, case.n, costs)
    };
    let meas_vanilla_us = median(vanilla);
    let meas_ours_us = median(ours);
    Ok(BenchRow {
        label: case.label.clone(),
        m: case.m,
        n: case.n,
        pred_vanilla_us: pred.vanilla.as_secs_f64() * 1e6,
        pred_ours_us: pred.ours.as_secs_f64() * 1e6,
        meas_vanilla_us,
        meas_ours_us,
        speedup: meas_vanilla_us / meas_ours_us,
    })
}

/// Runs every case; rows come back in case order.
pub fn run_benchmark(cases: &[BenchCase], costs: &CostParams, opts: BenchOptions) -> Result<BenchReport> {
    if opts.repetitions == 0 {
        return Err(Error::param("repetitions must be at least 1"));
    }
    // Fail on bad references before spending any time measuring.
    for case in cases {
        case.model_kind()?;
        case.compiled()?;
    }
    let rows = if opts.parallel {
        std::thread::scope(|s| {
            let handles: Vec<_> = cases
                .iter()
                .map(|c| s.spawn(move || measure_case(c, costs, opts.repetitions)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("benchmark thread panicked"))
                .collect::<Result<Vec<_>>>()
        })?
    } else {
        cases
            .iter()
            .map(|c| measure_case(c, costs, opts.repetitions))
            .collect::<Result<Vec<_>>>()?
    };
    Ok(BenchReport { rows })
}

pub const CSV_HEADER: &str = "label,m,n,pred_vanilla_us,pred_ours_us,meas_vanilla_us,meas_ours_us,speedup";

pub fn to_csv(report: &BenchReport) -> Result<String> {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in &report.rows {
        if r.label.contains([',', '\n', '\r', '"']) {
            return Err(Error::param(format!("label `{}` cannot be written as a CSV field", r.label)));
        }
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.label, r.m, r.n, r.pred_vanilla_us, r.pred_ours_us, r.meas_vanilla_us, r.meas_ours_us, r.speedup
        )
        .expect("writing to a String");
    }
    Ok(out)
}

pub fn emit_csv(report: &BenchReport, path: &Path) -> Result<()> {
    std::fs::write(path, to_csv(report)?).map_err(|e| Error::io(path, e))
}

pub fn parse_csv(text: &str) -> Result<BenchReport> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == CSV_HEADER => {}
        _ => return Err(Error::param("missing or unexpected benchmark CSV header")),
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 8 {
            return Err(Error::param(format!("CSV line {} has {} fields", i + 2, f.len())));
        }
        let num = |s: &str| -> Result<f64> {
            s.parse().map_err(|_| Error::param(format!("CSV line {}: bad number `{s}`", i + 2)))
        };
        let int = |s: &str| -> Result<usize> {
            s.parse().map_err(|_| Error::param(format!("CSV line {}: bad integer `{s}`", i + 2)))
        };
        rows.push(BenchRow {
            label: f[0].to_string(),
            m: int(f[1])?,
            n: int(f[2])?,
            pred_vanilla_us: num(f[3])?,
            pred_ours_us: num(f[4])?,
            meas_vanilla_us: num(f[5])?,
            meas_ours_us: num(f[6])?,
            speedup: num(f[7])?,
        });
    }
    Ok(BenchReport { rows })
}

/// `[bench]` block of a run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchConfig {
    pub c_unet_us: f64,
    pub c_sched_us: f64,
    pub c_vae_us: f64,
    pub reps: usize,
    pub parallel: bool,
    pub cases: Vec<BenchCase>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            c_unet_us: 2000.0,
            c_sched_us: 100.0,
            c_vae_us: 500.0,
            reps: 5,
            parallel: false,
            cases: vec![
                BenchCase::new("m20_n4", 20, 4),
                BenchCase::new("m20_n4_compiled", 20, 4).with_engine("compiled"),
            ],
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, reason: &str| Error::Validation {
            key: format!("bench.{key}"),
            reason: reason.into(),
        };
        for (key, v) in [
            ("c_unet_us", self.c_unet_us),
            ("c_sched_us", self.c_sched_us),
            ("c_vae_us", self.c_vae_us),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(bad(key, "must be a non-negative duration"));
            }
        }
        if self.reps == 0 {
            return Err(bad("reps", "must be at least 1"));
        }
        for (i, c) in self.cases.iter().enumerate() {
            if c.m == 0 || c.n == 0 {
                return Err(bad(&format!("cases[{i}]"), "m and n must be at least 1"));
            }
        }
        Ok(())
    }

    pub fn costs(&self) -> CostParams {
        CostParams::from_micros(self.c_unet_us, self.c_sched_us, self.c_vae_us)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ms(v: u64) -> Duration {
        Duration::from_millis(v)
    }

    #[test]
    fn degenerate_pipeline_costs_the_same() {
        let c = CostParams::new(ms(10), ms(1), ms(5));
        let p = predict_times(1, 1, &c);
        assert_eq!(p.vanilla, p.ours);
    }

    #[test]
    fn unet_dominant_speedup_approaches_n() {
        let c = CostParams::new(ms(10), Duration::ZERO, Duration::ZERO);
        let s = predict_times(1_000_000, 4, &c).speedup();
        assert!((s - 4.0).abs() < 1e-4, "{s}");
        assert!(s < 4.0);
    }

    #[test]
    fn closed_form_at_hundred_by_four() {
        // vanilla = 100·(40 + 4 + 5) ms, ours = 103·11 + 500 ms
        let p = predict_times(100, 4, &CostParams::new(ms(10), ms(1), ms(5)));
        assert_eq!(p.vanilla, ms(4900));
        assert_eq!(p.ours, ms(1633));
        assert!((p.speedup() - 4900.0 / 1633.0).abs() < 1e-12);
    }

    #[test]
    fn speedup_is_nondecreasing_in_m() {
        let c = CostParams::new(ms(10), ms(1), ms(5));
        for n in [1, 2, 4, 8] {
            let mut prev = 0.0;
            for m in 1..300 {
                let s = predict_times(m, n, &c).speedup();
                assert!(s >= prev - 1e-12, "n={n} m={m}");
                prev = s;
            }
        }
    }

    #[test]
    fn batch_sizes_ramp_and_drain() {
        assert_eq!(stream_batch_sizes(5, 3), vec![1, 2, 3, 3, 3, 2, 1]);
        assert_eq!(stream_batch_sizes(2, 4), vec![1, 2, 2, 2, 1]);
        assert_eq!(stream_batch_sizes(3, 1), vec![1, 1, 1]);
        for (m, n) in [(1, 1), (7, 4), (2, 8)] {
            assert_eq!(stream_batch_sizes(m, n).iter().sum::<usize>(), m * n);
        }
        assert_eq!(stream_engine_calls(5, 3, true), vec![1, 4, 6, 6, 6, 4, 1]);
    }

    #[test]
    fn csv_layout_and_round_trip() {
        let empty = to_csv(&BenchReport::default()).unwrap();
        assert_eq!(empty, format!("{CSV_HEADER}\n"));

        let row = |label: &str, m| BenchRow {
            label: label.into(),
            m,
            n: 4,
            pred_vanilla_us: 1234.5,
            pred_ours_us: 1.0 / 3.0,
            meas_vanilla_us: 1e7,
            meas_ours_us: 2.5e-3,
            speedup: 0.1 + 0.2,
        };
        let report = BenchReport {
            rows: vec![row("a", 10), row("b", 20)],
        };
        let text = to_csv(&report).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert_eq!(parse_csv(&text).unwrap(), report);

        let bad = BenchReport {
            rows: vec![row("x,y", 1)],
        };
        assert!(to_csv(&bad).is_err());
    }

    #[test]
    fn emit_reports_path_on_failure() {
        let err = emit_csv(&BenchReport::default(), Path::new("/nonexistent/dir/out.csv")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/dir/out.csv"));
    }

    #[test]
    fn unknown_references_are_parameter_errors() {
        let c = CostParams::new(Duration::ZERO, Duration::ZERO, Duration::ZERO);
        let opts = BenchOptions {
            repetitions: 1,
            parallel: false,
        };
        let bad_engine = BenchCase::new("x", 2, 2).with_engine("tensorrt");
        assert!(matches!(run_benchmark(&[bad_engine], &c, opts), Err(Error::Parameter(_))));
        let mut bad_model = BenchCase::new("y", 2, 2);
        bad_model.model = "unet".into();
        assert!(matches!(run_benchmark(&[bad_model], &c, opts), Err(Error::Parameter(_))));
        assert!(run_benchmark(&[], &c, BenchOptions { repetitions: 0, parallel: false }).is_err());
    }

    #[test]
    fn zero_cost_run_produces_rows_in_order() {
        let c = CostParams::new(Duration::ZERO, Duration::ZERO, Duration::ZERO);
        let cases = [
            BenchCase::new("a", 3, 2),
            BenchCase::new("b", 2, 3).with_engine("compiled"),
        ];
        for parallel in [false, true] {
            let r = run_benchmark(&cases, &c, BenchOptions { repetitions: 1, parallel }).unwrap();
            assert_eq!(r.rows.iter().map(|r| r.label.as_str()).collect::<Vec<_>>(), ["a", "b"]);
            assert!(r.rows.iter().all(|r| r.speedup > 0.0));
        }
    }
}
