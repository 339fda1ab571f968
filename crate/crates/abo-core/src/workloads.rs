//! Evaluation targets for the search driver: a synthetic workload with a
//! known optimum for desk-scale experiments, and a replay workload that
//! predicts a runtime with a random forest trained on a previous history and
//! "runs" for that long.

use std::collections::HashMap;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::executor::{Clock, EvalStatus, EvaluationRecord};
use crate::space::{Configuration, ParamKind, ParameterSpace, SpaceError};
use crate::surrogate::{RandomForestModel, RfConfig, SurrogateError, TrainingSet};

#[derive(Debug, Error)]
pub enum WorkloadError {
    #[error("parameter `{0}` missing a {1}")]
    MissingEntry(String, &'static str),
    #[error("weight/penalty for `{0}` must be positive")]
    NonPositiveWeight(String),
    #[error("base runtime must be positive")]
    NonPositiveBase,
    #[error("step count must be 1 or 2, got {0}")]
    BadStepCount(u32),
    #[error("time scale must be in (0, 1], got {0}")]
    BadTimeScale(f64),
    #[error("need at least {need} usable history rows, got {got}")]
    TooFewRows { need: usize, got: usize },
    #[error("workload evaluation failed: {0}")]
    Evaluation(String),
    #[error("workload file: {0}")]
    Format(String),
    #[error(transparent)]
    Space(#[from] SpaceError),
    #[error(transparent)]
    Surrogate(#[from] SurrogateError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Something the executor can evaluate: maps a configuration to a simulated
/// total runtime. Implementations are immutable and shared across workers.
pub trait Workload: Send + Sync {
    fn space(&self) -> &ParameterSpace;

    /// Declared step count (1 or 2); per-evaluation timeouts are split
    /// evenly across steps and the runtime is split the same way.
    fn steps(&self) -> u32 {
        1
    }

    /// Fraction of the simulated runtime actually spent on the clock.
    fn time_scale(&self) -> f64 {
        1.0
    }

    /// Total simulated runtime in seconds, before timeout enforcement.
    fn runtime(&self, config: &Configuration, rng: &mut ChaCha12Rng) -> Result<f64, WorkloadError>;
}

/// Compute the runtime and advance (or sleep) the clock by
/// `runtime * time_scale`; the returned value is always the unscaled runtime.
pub fn evaluate(
    workload: &dyn Workload,
    config: &Configuration,
    clock: &dyn Clock,
    rng: &mut ChaCha12Rng,
) -> Result<f64, WorkloadError> {
    let runtime = workload.runtime(config, rng)?;
    clock.advance(runtime * workload.time_scale());
    Ok(runtime)
}

// --- Synthetic workload ------------------------------------------------------

/// Separable test function over a mixed space:
/// `base + sum_j w_j (enc(x_j) - enc(target_j))^2 + sum_c p_c [x_c != target_c]`
/// plus optional Gaussian noise, clamped to at least `base / 2`. Its unique
/// noiseless minimum is `target` with runtime `base`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticWorkload {
    space: ParameterSpace,
    target: Configuration,
    /// Per numeric parameter, aligned with the space.
    weights: Vec<Option<f64>>,
    /// Per categorical parameter, aligned with the space.
    penalties: Vec<Option<f64>>,
    base: f64,
    noise_sigma: f64,
    steps: u32,
    time_scale: f64,
    #[serde(skip)]
    target_encoded: Vec<f64>,
}

impl SyntheticWorkload {
    pub fn new(
        space: ParameterSpace,
        target: Configuration,
        weights: &HashMap<String, f64>,
        penalties: &HashMap<String, f64>,
        base: f64,
        noise_sigma: f64,
        steps: u32,
        time_scale: f64,
    ) -> Result<Self, WorkloadError> {
        space.validate_config(&target)?;
        if !(base > 0.0) {
            return Err(WorkloadError::NonPositiveBase);
        }
        if !(1..=2).contains(&steps) {
            return Err(WorkloadError::BadStepCount(steps));
        }
        if !(time_scale > 0.0 && time_scale <= 1.0) {
            return Err(WorkloadError::BadTimeScale(time_scale));
        }
        let mut weight_slots = Vec::with_capacity(space.len());
        let mut penalty_slots = Vec::with_capacity(space.len());
        for param in space.params() {
            match param.kind() {
                ParamKind::Integer { .. } | ParamKind::Real { .. } => {
                    let w = *weights
                        .get(param.name())
                        .ok_or_else(|| WorkloadError::MissingEntry(param.name().into(), "weight"))?;
                    if !(w > 0.0) {
                        return Err(WorkloadError::NonPositiveWeight(param.name().into()));
                    }
                    weight_slots.push(Some(w));
                    penalty_slots.push(None);
                }
                ParamKind::Categorical { .. } => {
                    let p = *penalties
                        .get(param.name())
                        .ok_or_else(|| WorkloadError::MissingEntry(param.name().into(), "penalty"))?;
                    if !(p > 0.0) {
                        return Err(WorkloadError::NonPositiveWeight(param.name().into()));
                    }
                    penalty_slots.push(Some(p));
                    weight_slots.push(None);
                }
            }
        }
        let target_encoded = space.encode(&target)?.0;
        Ok(Self {
            space,
            target,
            weights: weight_slots,
            penalties: penalty_slots,
            base,
            noise_sigma,
            steps,
            time_scale,
            target_encoded,
        })
    }

    pub fn target(&self) -> &Configuration {
        &self.target
    }

    pub fn base_runtime(&self) -> f64 {
        self.base
    }

    pub fn with_time_scale(mut self, time_scale: f64) -> Result<Self, WorkloadError> {
        if !(time_scale > 0.0 && time_scale <= 1.0) {
            return Err(WorkloadError::BadTimeScale(time_scale));
        }
        self.time_scale = time_scale;
        Ok(self)
    }

    pub fn load(path: impl AsRef<Path>, space: &ParameterSpace) -> Result<Self, WorkloadError> {
        Self::from_json(&std::fs::read_to_string(path)?, space)
    }

    pub fn from_json(text: &str, space: &ParameterSpace) -> Result<Self, WorkloadError> {
        let file: SyntheticFile =
            serde_json::from_str(text).map_err(|e| WorkloadError::Format(e.to_string()))?;
        let mut pairs = Vec::with_capacity(space.len());
        for param in space.params() {
            let raw = file
                .target
                .get(param.name())
                .ok_or_else(|| WorkloadError::MissingEntry(param.name().into(), "target value"))?;
            let text = match raw {
                serde_json::Value::String(s) => s.clone(),
                other => other.to_string(),
            };
            pairs.push((param.name().to_string(), crate::space::ParamValue::parse(&text, param)?));
        }
        let target =
            Configuration::from_named(space, pairs.iter().map(|(n, v)| (n.as_str(), v.clone())))?;
        Self::new(
            space.clone(),
            target,
            &file.weights,
            &file.penalties,
            file.base,
            file.noise,
            file.steps,
            file.time_scale,
        )
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SyntheticFile {
    target: HashMap<String, serde_json::Value>,
    weights: HashMap<String, f64>,
    penalties: HashMap<String, f64>,
    base: f64,
    #[serde(default)]
    noise: f64,
    #[serde(default = "default_steps")]
    steps: u32,
    #[serde(default = "default_time_scale")]
    time_scale: f64,
}

fn default_steps() -> u32 {
    1
}

fn default_time_scale() -> f64 {
    1.0
}

impl Workload for SyntheticWorkload {
    fn space(&self) -> &ParameterSpace {
        &self.space
    }

    fn steps(&self) -> u32 {
        self.steps
    }

    fn time_scale(&self) -> f64 {
        self.time_scale
    }

    fn runtime(&self, config: &Configuration, rng: &mut ChaCha12Rng) -> Result<f64, WorkloadError> {
        let encoded = self.space.encode(config)?.0;
        let mut runtime = self.base;
        let mut offset = 0;
        for (i, param) in self.space.params().iter().enumerate() {
            match param.kind() {
                ParamKind::Integer { .. } | ParamKind::Real { .. } => {
                    let d = encoded[offset] - self.target_encoded[offset];
                    runtime += self.weights[i].unwrap() * d * d;
                    offset += 1;
                }
                ParamKind::Categorical { labels } => {
                    if config.values()[i] != self.target.values()[i] {
                        runtime += self.penalties[i].unwrap();
                    }
                    offset += labels.len();
                }
            }
        }
        if self.noise_sigma > 0.0 {
            let noise: f64 = rng.sample(StandardNormal);
            runtime += self.noise_sigma * noise;
        }
        Ok(runtime.max(self.base / 2.0))
    }
}

// --- Replay (surrogate) workload ---------------------------------------------

/// Replays a learned runtime model: predicts the runtime of a configuration
/// from a random forest trained on a previous history, and spends that long
/// on the clock.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SurrogateWorkload {
    space: ParameterSpace,
    runtime_model: RandomForestModel,
    time_scale: f64,
    /// Runtime imputed for timeout/failed training rows.
    timeout_value: f64,
}

impl SurrogateWorkload {
    pub fn model(&self) -> &RandomForestModel {
        &self.runtime_model
    }

    pub fn timeout_value(&self) -> f64 {
        self.timeout_value
    }

    pub fn with_time_scale(mut self, time_scale: f64) -> Result<Self, WorkloadError> {
        if !(time_scale > 0.0 && time_scale <= 1.0) {
            return Err(WorkloadError::BadTimeScale(time_scale));
        }
        self.time_scale = time_scale;
        Ok(self)
    }

    pub fn serialize_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("workload serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, WorkloadError> {
        serde_json::from_str(text).map_err(|e| WorkloadError::Format(e.to_string()))
    }
}

impl Workload for SurrogateWorkload {
    fn space(&self) -> &ParameterSpace {
        &self.space
    }

    fn time_scale(&self) -> f64 {
        self.time_scale
    }

    fn runtime(&self, config: &Configuration, _rng: &mut ChaCha12Rng) -> Result<f64, WorkloadError> {
        let (mean, _) = self.runtime_model.predict(&self.space.encode(config)?)?;
        Ok(mean)
    }
}

/// Train the replay workload from history records: every ok row contributes
/// its measured runtime, timeout and failed rows are imputed at the timeout
/// value so the model does not learn that bad regions are fast.
pub fn fit_surrogate_workload(
    records: &[EvaluationRecord],
    space: &ParameterSpace,
    rf_config: &RfConfig,
    timeout_value: f64,
    seed: u64,
) -> Result<SurrogateWorkload, WorkloadError> {
    let mut x = Vec::new();
    let mut y = Vec::new();
    let mut usable = 0;
    for record in records {
        match record.status {
            EvalStatus::Ok => {
                usable += 1;
                y.push(record.runtime_seconds);
            }
            EvalStatus::Timeout => {
                usable += 1;
                y.push(timeout_value);
            }
            EvalStatus::Failed => y.push(timeout_value),
        }
        x.push(space.encode(&record.config)?);
    }
    if usable < 10 {
        return Err(WorkloadError::TooFewRows { need: 10, got: usable });
    }
    let data = TrainingSet::new(x, y)?;
    let model = RandomForestModel::fit(rf_config, &data, seed)?;
    Ok(SurrogateWorkload {
        space: space.clone(),
        runtime_model: model,
        time_scale: 1.0,
        timeout_value,
    })
}
