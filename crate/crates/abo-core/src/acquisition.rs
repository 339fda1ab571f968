//! Candidate ranking and batch generation: the lower-confidence-bound
//! acquisition function and a constant-liar ask/tell optimizer.
//!
//! The optimizer minimizes an internal cost equal to the negated objective
//! (for runtime tuning, `cost = ln(runtime)`), so picking the LCB minimizer
//! is exploitation of low predicted cost. `ask` builds a batch by repeatedly
//! refitting the surrogate on a disposable copy of the training set augmented
//! with lie values; the live state is never touched by lies.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::space::{Configuration, EncodedVector, ParameterSpace, SpaceError};
use crate::surrogate::{SurrogateError, SurrogateKind, SurrogateModel, SurrogateSpec, TrainingSet};
use crate::transfer::PriorSampler;

#[derive(Debug, Error)]
pub enum AcquisitionError {
    #[error("standard deviation must be non-negative, got {0}")]
    NegativeStd(f64),
    #[error("kappa must be non-negative, got {0}")]
    NegativeKappa(f64),
    #[error("batch size must be at least 1")]
    EmptyBatch,
    #[error("told {x} configurations but {y} objectives")]
    LengthMismatch { x: usize, y: usize },
    #[error("prior samples a different space than the optimizer's")]
    PriorSpaceMismatch,
    #[error(transparent)]
    Space(#[from] SpaceError),
    #[error(transparent)]
    Surrogate(#[from] SurrogateError),
}

/// `LCB(x) = mean - kappa * std`.
pub fn lcb(mean: f64, std: f64, kappa: f64) -> Result<f64, AcquisitionError> {
    if std < 0.0 {
        return Err(AcquisitionError::NegativeStd(std));
    }
    if kappa < 0.0 {
        return Err(AcquisitionError::NegativeKappa(kappa));
    }
    Ok(mean - kappa * std)
}

/// The fake cost appended for already-picked points during one `ask`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LiarStrategy {
    /// Highest observed cost (most pessimistic; the default).
    Worst,
    /// Lowest observed cost.
    Best,
    /// Mean observed cost.
    Mean,
}

impl std::str::FromStr for LiarStrategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "worst" => Ok(Self::Worst),
            "best" => Ok(Self::Best),
            "mean" => Ok(Self::Mean),
            other => Err(format!("unknown liar strategy `{other}` (expected worst|best|mean)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub surrogate: SurrogateSpec,
    pub kappa: f64,
    /// Prior draws scored per batch slot.
    pub n_candidates: usize,
    pub liar: LiarStrategy,
    /// Below this many real observations, `ask` returns prior samples
    /// without model ranking.
    pub min_observations: usize,
    /// Cost recorded for a failure when no finite observation exists yet;
    /// the cost of a timeout-long run, `ln(timeout)`.
    pub failure_cost: f64,
    /// Redraw attempts for a pick duplicating one already in the batch.
    pub max_duplicate_retries: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            surrogate: SurrogateSpec::from_kind(SurrogateKind::Rf),
            kappa: 1.96,
            n_candidates: 10_000,
            liar: LiarStrategy::Worst,
            min_observations: 1,
            failure_cost: 600f64.ln(),
            max_duplicate_retries: 10,
        }
    }
}

/// One scored candidate, kept for diagnostics.
#[derive(Debug, Clone, Serialize)]
pub struct CandidateScore {
    pub config: Configuration,
    pub mean: f64,
    pub std: f64,
    pub lcb: f64,
}

/// Single-owner ask/tell optimizer. `tell` is the only mutator; `ask` is a
/// pure function of the current state, so repeated asks without an
/// intervening tell return the same batch.
#[derive(Debug, Clone, Serialize)]
pub struct Optimizer {
    space: ParameterSpace,
    prior: PriorSampler,
    config: OptimizerConfig,
    seed: u64,
    tell_count: u64,
    observed_x: Vec<Configuration>,
    observed_cost: Vec<f64>,
    encoded: Vec<EncodedVector>,
    model: Option<SurrogateModel>,
}

impl Optimizer {
    pub fn new(
        space: ParameterSpace,
        prior: PriorSampler,
        config: OptimizerConfig,
        seed: u64,
    ) -> Result<Self, AcquisitionError> {
        if config.kappa < 0.0 {
            return Err(AcquisitionError::NegativeKappa(config.kappa));
        }
        if prior.space() != &space {
            return Err(AcquisitionError::PriorSpaceMismatch);
        }
        Ok(Self {
            space,
            prior,
            config,
            seed,
            tell_count: 0,
            observed_x: Vec::new(),
            observed_cost: Vec::new(),
            encoded: Vec::new(),
            model: None,
        })
    }

    pub fn space(&self) -> &ParameterSpace {
        &self.space
    }

    pub fn prior(&self) -> &PriorSampler {
        &self.prior
    }

    pub fn observed(&self) -> (&[Configuration], &[f64]) {
        (&self.observed_x, &self.observed_cost)
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    /// Record evaluated configurations. Objectives are negated into costs;
    /// non-finite objectives (failures) are imputed with the worst finite
    /// cost seen so far, or the configured failure cost when none exists.
    /// The surrogate is refitted on the full observed set.
    pub fn tell(
        &mut self,
        configs: &[Configuration],
        objectives: &[f64],
    ) -> Result<(), AcquisitionError> {
        if configs.len() != objectives.len() {
            return Err(AcquisitionError::LengthMismatch { x: configs.len(), y: objectives.len() });
        }
        for (config, objective) in configs.iter().zip(objectives) {
            let encoded = self.space.encode(config)?;
            let cost = if objective.is_finite() {
                -objective
            } else {
                let worst = self.observed_cost.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                if worst.is_finite() { worst } else { self.config.failure_cost }
            };
            self.observed_x.push(config.clone());
            self.observed_cost.push(cost);
            self.encoded.push(encoded);
        }
        self.tell_count += 1;
        if self.config.surrogate.kind() != SurrogateKind::Rand && !self.observed_x.is_empty() {
            let data = TrainingSet::new(self.encoded.clone(), self.observed_cost.clone())?;
            self.model = Some(self.config.surrogate.fit(&data, self.seed)?);
        }
        Ok(())
    }

    /// Produce `n` configurations to evaluate next via the constant-liar
    /// strategy. The returned batch is fully determined by `(state, n)`.
    pub fn ask(&self, n: usize) -> Result<Vec<Configuration>, AcquisitionError> {
        if n == 0 {
            return Err(AcquisitionError::EmptyBatch);
        }
        let mut rng = self.ask_rng();

        let model_free = self.config.surrogate.kind() == SurrogateKind::Rand
            || self.observed_x.len() < self.config.min_observations
            || self.model.is_none();
        if model_free {
            let mut batch: Vec<Configuration> = Vec::with_capacity(n);
            for _ in 0..n {
                batch.push(self.draw_distinct(&mut rng, &batch));
            }
            return Ok(batch);
        }

        // disposable copies; lies never reach the live state
        let mut x_copy = self.encoded.clone();
        let mut cost_copy = self.observed_cost.clone();
        let lie = self.lie_value();

        let mut batch: Vec<Configuration> = Vec::with_capacity(n);
        for slot in 0..n {
            let refit;
            let model = if slot == 0 {
                self.model.as_ref().expect("model fitted at tell")
            } else {
                let data = TrainingSet::new(x_copy.clone(), cost_copy.clone())?;
                refit = self.config.surrogate.fit(&data, self.seed)?;
                &refit
            };

            let mut pick = self.pick_minimizer(model, &mut rng)?;
            let mut retries = 0;
            while batch.contains(&pick) && retries < self.config.max_duplicate_retries {
                pick = self.pick_minimizer(model, &mut rng)?;
                retries += 1;
            }
            x_copy.push(self.space.encode(&pick)?);
            cost_copy.push(lie);
            batch.push(pick);
        }
        Ok(batch)
    }

    /// Score one candidate set from the prior and return the LCB minimizer.
    fn pick_minimizer(
        &self,
        model: &SurrogateModel,
        rng: &mut ChaCha12Rng,
    ) -> Result<Configuration, AcquisitionError> {
        let mut best: Option<(f64, Configuration)> = None;
        for _ in 0..self.config.n_candidates {
            let candidate = self.prior.sample(rng);
            let (mean, std) = model.predict(&self.space.encode(&candidate)?)?;
            let score = mean - self.config.kappa * std;
            if best.as_ref().map_or(true, |(s, _)| score < *s) {
                best = Some((score, candidate));
            }
        }
        Ok(best.expect("n_candidates >= 1").1)
    }

    fn draw_distinct(&self, rng: &mut ChaCha12Rng, batch: &[Configuration]) -> Configuration {
        let mut pick = self.prior.sample(rng);
        let mut retries = 0;
        while batch.contains(&pick) && retries < self.config.max_duplicate_retries {
            pick = self.prior.sample(rng);
            retries += 1;
        }
        pick
    }

    fn lie_value(&self) -> f64 {
        let costs = &self.observed_cost;
        match self.config.liar {
            LiarStrategy::Worst => costs.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            LiarStrategy::Best => costs.iter().cloned().fold(f64::INFINITY, f64::min),
            LiarStrategy::Mean => costs.iter().sum::<f64>() / costs.len() as f64,
        }
    }

    /// Candidate stream for the current round: keyed by seed and tell count,
    /// so asks between tells are reproducible and rounds are independent.
    fn ask_rng(&self) -> ChaCha12Rng {
        let mut rng = ChaCha12Rng::seed_from_u64(self.seed);
        rng.set_stream(self.tell_count.wrapping_add(1));
        rng
    }
}
