//! Transfer learning: turn a previous search history into an informative
//! prior sampler for a new search. Three prior families are provided — the
//! tabular-VAE generative prior fitted on the top quantile of the history,
//! a truncated-Gaussian prior centered on the best configuration, and the
//! plain uniform prior — plus composition with uninformative samplers for
//! parameters that did not exist in the previous space.

mod tvae;

pub use tvae::{gaussian_kl, TvaeConfig, TvaeModel};

use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::space::{Configuration, ParamKind, ParamValue, ParameterSpace, SpaceError};

#[derive(Debug, Error)]
pub enum TransferError {
    #[error("history has no finite-objective rows")]
    NoFiniteRows,
    #[error("quantile fraction must be in (0, 1], got {0}")]
    BadQuantile(f64),
    #[error("need at least {need} rows to fit, got {got}")]
    TooFewRows { need: usize, got: usize },
    #[error("TVAE training diverged at epoch {epoch}")]
    TrainingDiverged { epoch: usize },
    #[error("shared parameter `{0}` has a different domain in the current space")]
    IncompatibleSpaces(String),
    #[error("base prior samples a different space than the declared previous space")]
    BaseSpaceMismatch,
    #[error(transparent)]
    Space(#[from] SpaceError),
}

/// A previous search's rows: configurations with their objective values.
/// Failed evaluations carry a non-finite objective.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HistoryTable {
    space: ParameterSpace,
    rows: Vec<(Configuration, f64)>,
}

impl HistoryTable {
    pub fn new(space: ParameterSpace, rows: Vec<(Configuration, f64)>) -> Result<Self, TransferError> {
        for (config, _) in &rows {
            space.validate_config(config)?;
        }
        Ok(Self { space, rows })
    }

    pub fn space(&self) -> &ParameterSpace {
        &self.space
    }

    pub fn rows(&self) -> &[(Configuration, f64)] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// The finite-objective row with the highest objective.
    pub fn best(&self) -> Option<&(Configuration, f64)> {
        self.rows
            .iter()
            .filter(|(_, y)| y.is_finite())
            .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
    }
}

/// Keep the high-performing subset of a history: drop failures, compute the
/// empirical `(1 - q)` quantile of the finite objectives (linear
/// interpolation between order statistics), and keep every row at or above
/// it — ties included, so the result is never empty.
pub fn select_top_quantile(history: &HistoryTable, q: f64) -> Result<HistoryTable, TransferError> {
    if !(q > 0.0 && q <= 1.0) {
        return Err(TransferError::BadQuantile(q));
    }
    let finite: Vec<(Configuration, f64)> =
        history.rows.iter().filter(|(_, y)| y.is_finite()).cloned().collect();
    if finite.is_empty() {
        return Err(TransferError::NoFiniteRows);
    }
    let mut objectives: Vec<f64> = finite.iter().map(|(_, y)| *y).collect();
    objectives.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let threshold = interpolated_quantile(&objectives, 1.0 - q);
    let rows = finite.into_iter().filter(|(_, y)| *y >= threshold).collect();
    Ok(HistoryTable { space: history.space.clone(), rows })
}

/// Linear-interpolation empirical quantile of an ascending-sorted slice.
pub fn interpolated_quantile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    if lo + 1 >= n {
        sorted[n - 1]
    } else {
        sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
    }
}

/// Truncated-Gaussian prior parameters around the best configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GaussianPrior {
    space: ParameterSpace,
    center: Configuration,
    /// Per-parameter sigma for numeric kinds, `None` for categoricals.
    sigmas: Vec<Option<f64>>,
    /// Normalized label probabilities for categorical kinds.
    weights: Vec<Option<Vec<f64>>>,
}

/// Build the Gaussian transfer prior: numerics get a normal centered on the
/// best configuration with `sigma_j = max(1, (u_j - l_j) / 10)`, truncated to
/// the bounds; categoricals get weight 8 on the best label and 1 elsewhere.
pub fn gaussian_prior(history: &HistoryTable) -> Result<PriorSampler, TransferError> {
    let (best, _) = history.best().ok_or(TransferError::NoFiniteRows)?.clone();
    let space = history.space.clone();
    let mut sigmas = Vec::with_capacity(space.len());
    let mut weights = Vec::with_capacity(space.len());
    for (param, value) in space.params().iter().zip(best.values()) {
        match param.kind() {
            ParamKind::Integer { lo, hi, .. } => {
                sigmas.push(Some(1.0f64.max((hi - lo) as f64 / 10.0)));
                weights.push(None);
            }
            ParamKind::Real { lo, hi, .. } => {
                sigmas.push(Some(1.0f64.max((hi - lo) / 10.0)));
                weights.push(None);
            }
            ParamKind::Categorical { labels } => {
                let best_idx = match value {
                    ParamValue::Cat(i) => *i,
                    _ => unreachable!("validated configuration"),
                };
                let raw: Vec<f64> =
                    (0..labels.len()).map(|k| if k == best_idx { 8.0 } else { 1.0 }).collect();
                let total: f64 = raw.iter().sum();
                weights.push(Some(raw.into_iter().map(|w| w / total).collect()));
                sigmas.push(None);
            }
        }
    }
    Ok(PriorSampler::Gaussian(GaussianPrior { space, center: best, sigmas, weights }))
}

impl GaussianPrior {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Configuration {
        let values = self
            .space
            .params()
            .iter()
            .enumerate()
            .map(|(j, param)| match param.kind() {
                ParamKind::Integer { lo, hi, .. } => {
                    let center = match &self.center.values()[j] {
                        ParamValue::Int(v) => *v as f64,
                        _ => unreachable!(),
                    };
                    let v = truncated_normal(rng, center, self.sigmas[j].unwrap(), *lo as f64, *hi as f64);
                    ParamValue::Int((v.round() as i64).clamp(*lo, *hi))
                }
                ParamKind::Real { lo, hi, .. } => {
                    let center = match &self.center.values()[j] {
                        ParamValue::Real(v) => *v,
                        _ => unreachable!(),
                    };
                    ParamValue::Real(truncated_normal(rng, center, self.sigmas[j].unwrap(), *lo, *hi))
                }
                ParamKind::Categorical { .. } => {
                    ParamValue::Cat(weighted_choice(rng, self.weights[j].as_ref().unwrap()))
                }
            })
            .collect();
        Configuration::new(&self.space, values).expect("gaussian prior samples in-domain values")
    }

    pub fn center(&self) -> &Configuration {
        &self.center
    }

    pub fn label_weights(&self, name: &str) -> Option<&[f64]> {
        let i = self.space.position(name)?;
        self.weights[i].as_deref()
    }

    pub fn sigma(&self, name: &str) -> Option<f64> {
        let i = self.space.position(name)?;
        self.sigmas[i]
    }
}

/// Rejection-sample a normal into `[lo, hi]`, clamping after 100 tries.
fn truncated_normal<R: Rng + ?Sized>(rng: &mut R, mean: f64, sigma: f64, lo: f64, hi: f64) -> f64 {
    let normal = Normal::new(mean, sigma).expect("sigma > 0");
    for _ in 0..100 {
        let v = normal.sample(rng);
        if v >= lo && v <= hi {
            return v;
        }
    }
    normal.sample(rng).clamp(lo, hi)
}

fn weighted_choice<R: Rng + ?Sized>(rng: &mut R, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// A generative distribution over complete configurations of some space.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum PriorSampler {
    /// The space's own declared priors (uniform / log-uniform / equiprobable).
    Uniform(ParameterSpace),
    /// Samples decoded from a fitted tabular VAE.
    Vae(TvaeModel),
    /// Truncated Gaussian around the best previous configuration.
    Gaussian(GaussianPrior),
    /// A base prior over the old parameters joined with independent
    /// uninformative samplers for parameters new to the current space.
    Composed {
        base: Box<PriorSampler>,
        space: ParameterSpace,
        /// Positions (in the current space) of parameters absent from the
        /// previous space.
        new_params: Vec<usize>,
    },
}

impl PriorSampler {
    /// The space whose configurations this sampler produces.
    pub fn space(&self) -> &ParameterSpace {
        match self {
            PriorSampler::Uniform(space) => space,
            PriorSampler::Vae(model) => model.space(),
            PriorSampler::Gaussian(prior) => &prior.space,
            PriorSampler::Composed { space, .. } => space,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            PriorSampler::Uniform(_) => "uniform",
            PriorSampler::Vae(_) => "vae",
            PriorSampler::Gaussian(_) => "gaussian",
            PriorSampler::Composed { base, .. } => base.kind(),
        }
    }

    /// Draw one complete, in-domain configuration.
    ///
    /// Composed samplers keep the caller's stream for their base component
    /// and move new-parameter draws onto a parallel ChaCha stream, so the
    /// shared-parameter draws are bitwise those of the base run standalone
    /// with the same random source.
    pub fn sample(&self, rng: &mut ChaCha12Rng) -> Configuration {
        match self {
            PriorSampler::Uniform(space) => space.sample_uniform(rng),
            PriorSampler::Vae(model) => model.sample(rng),
            PriorSampler::Gaussian(prior) => prior.sample(rng),
            PriorSampler::Composed { base, space, new_params } => {
                let mut side = rng.clone();
                side.set_stream(rng.get_stream().wrapping_add(0x9e3779b97f4a7c15));
                let old = base.sample(rng);
                let old_space = base.space();
                let mut values: Vec<ParamValue> = Vec::with_capacity(space.len());
                for (i, param) in space.params().iter().enumerate() {
                    if new_params.contains(&i) {
                        values.push(sample_uninformative(param.kind(), &mut side));
                    } else {
                        let j = old_space.position(param.name()).expect("shared parameter");
                        values.push(old.values()[j].clone());
                    }
                }
                Configuration::new(space, values).expect("composed sample is complete")
            }
        }
    }

    pub fn serialize_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("prior serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

fn sample_uninformative<R: Rng + ?Sized>(kind: &ParamKind, rng: &mut R) -> ParamValue {
    match kind {
        ParamKind::Integer { lo, hi, .. } => ParamValue::Int(rng.random_range(*lo..=*hi)),
        ParamKind::Real { lo, hi, .. } => ParamValue::Real(rng.random_range(*lo..*hi)),
        ParamKind::Categorical { labels } => ParamValue::Cat(rng.random_range(0..labels.len())),
    }
}

/// Extend `base` (a prior over `space_prev`) to `space_curr`: shared
/// parameters are drawn jointly from the base, new integer/real parameters
/// uniformly over their bounds, new categoricals from an equal-probability
/// multinoulli. Every parameter of the previous space must appear in the
/// current space with an identical domain.
pub fn compose_prior(
    base: PriorSampler,
    space_prev: &ParameterSpace,
    space_curr: &ParameterSpace,
) -> Result<PriorSampler, TransferError> {
    if base.space() != space_prev {
        return Err(TransferError::BaseSpaceMismatch);
    }
    for prev in space_prev.params() {
        match space_curr.param(prev.name()) {
            Some(curr) if curr == prev => {}
            _ => return Err(TransferError::IncompatibleSpaces(prev.name().to_string())),
        }
    }
    let new_params: Vec<usize> = space_curr
        .params()
        .iter()
        .enumerate()
        .filter(|(_, p)| space_prev.param(p.name()).is_none())
        .map(|(i, _)| i)
        .collect();
    if new_params.is_empty() {
        return Ok(base);
    }
    Ok(PriorSampler::Composed { base: Box::new(base), space: space_curr.clone(), new_params })
}

/// Fit the tabular VAE on a top-quantile subset and wrap it as a prior.
pub fn fit_tvae(
    selected: &HistoryTable,
    config: &TvaeConfig,
    seed: u64,
) -> Result<TvaeModel, TransferError> {
    TvaeModel::fit(selected, config, seed)
}
