use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bench::BenchConfig;
use crate::engine::EngineConfig;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::pipeline::PipelineConfig;
use crate::schedule::ScheduleConfig;

/// Whole-run configuration: one `[section]` per subsystem, `key = value` lines within.
///
/// ```toml
/// [schedule]
/// t_max = 1000
/// eps = 1e-6
///
/// [model]
/// model = "mock"
/// dim = 16
///
/// [engine]
/// engine = "compiled"
/// trt_overhead_us = 10
///
/// [pipeline]
/// m = 8
/// n = 4
///
/// [bench]
/// reps = 3
/// [[bench.cases]]
/// label = "m50_n4"
/// m = 50
/// n = 4
/// ```
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub schedule: ScheduleConfig,
    pub model: ModelConfig,
    pub engine: EngineConfig,
    pub pipeline: PipelineConfig,
    pub bench: BenchConfig,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        self.model.validate()?;
        self.engine.validate()?;
        self.pipeline.validate()?;
        self.bench.validate()?;
        self.check_steps(self.pipeline.n)
    }

    /// `steps` denoising steps must fit on the inference grid.
    pub fn check_steps(&self, steps: usize) -> Result<()> {
        let grid = self.schedule.grid_len(steps);
        if steps > grid {
            return Err(Error::Parameter(format!(
                "pipeline.n = {steps} exceeds the inference grid length {grid} (schedule.inference_steps)"
            )));
        }
        Ok(())
    }
}
