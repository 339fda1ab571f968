//! Surrogate models over the encoded feature space: a bagged random forest
//! (the default), a fixed-hyperparameter Gaussian process baseline, and a
//! RAND pseudo-model for random-sampling searches.
//!
//! All models predict a mean and a standard deviation; the forest's std is
//! the dispersion of per-tree predictions, the GP's comes from the posterior.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::space::EncodedVector;

#[derive(Debug, Error)]
pub enum SurrogateError {
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("training set has {x} inputs but {y} targets")]
    MismatchedLengths { x: usize, y: usize },
    #[error("target at row {0} is not finite")]
    NonFiniteTarget(usize),
    #[error("inconsistent feature width: row {row} has {got}, expected {want}")]
    InconsistentWidth { row: usize, got: usize, want: usize },
    #[error("GP limited to {cap} points, got {n}")]
    GpTooLarge { n: usize, cap: usize },
    #[error("GP kernel matrix not positive definite after jitter escalation")]
    Factorization,
    #[error("query vector has length {got}, model expects {want}")]
    QueryLayout { got: usize, want: usize },
}

/// Inputs and targets for a surrogate fit. Targets are on the internal
/// minimization scale; failure imputation happens before construction.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    x: Vec<EncodedVector>,
    y: Vec<f64>,
}

impl TrainingSet {
    pub fn new(x: Vec<EncodedVector>, y: Vec<f64>) -> Result<Self, SurrogateError> {
        if x.len() != y.len() {
            return Err(SurrogateError::MismatchedLengths { x: x.len(), y: y.len() });
        }
        if x.is_empty() {
            return Err(SurrogateError::EmptyTrainingSet);
        }
        let want = x[0].len();
        for (row, v) in x.iter().enumerate() {
            if v.len() != want {
                return Err(SurrogateError::InconsistentWidth { row, got: v.len(), want });
            }
        }
        if let Some(row) = y.iter().position(|v| !v.is_finite()) {
            return Err(SurrogateError::NonFiniteTarget(row));
        }
        Ok(Self { x, y })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn features(&self) -> usize {
        self.x[0].len()
    }

    pub fn inputs(&self) -> &[EncodedVector] {
        &self.x
    }

    pub fn targets(&self) -> &[f64] {
        &self.y
    }
}

/// Which model family a search uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SurrogateKind {
    Rand,
    Rf,
    Gp,
}

impl std::str::FromStr for SurrogateKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "rand" => Ok(Self::Rand),
            "rf" => Ok(Self::Rf),
            "gp" => Ok(Self::Gp),
            other => Err(format!("unknown surrogate kind `{other}` (expected rand|rf|gp)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RfConfig {
    pub n_trees: usize,
    pub min_samples_leaf: usize,
    /// Fraction of features tried per split, in (0,1].
    pub max_features: f64,
    pub bootstrap: bool,
}

impl Default for RfConfig {
    fn default() -> Self {
        Self { n_trees: 100, min_samples_leaf: 1, max_features: 1.0, bootstrap: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpConfig {
    /// Isotropic squared-exponential length scale on the unit-cube encoding.
    pub length_scale: f64,
    pub signal_variance: f64,
    pub noise_variance: f64,
    pub max_points: usize,
}

impl Default for GpConfig {
    fn default() -> Self {
        Self { length_scale: 0.5, signal_variance: 1.0, noise_variance: 1e-6, max_points: 5000 }
    }
}

/// Model family plus its hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SurrogateSpec {
    Rand,
    Rf(RfConfig),
    Gp(GpConfig),
}

impl SurrogateSpec {
    pub fn from_kind(kind: SurrogateKind) -> Self {
        match kind {
            SurrogateKind::Rand => Self::Rand,
            SurrogateKind::Rf => Self::Rf(RfConfig::default()),
            SurrogateKind::Gp => Self::Gp(GpConfig::default()),
        }
    }

    pub fn kind(&self) -> SurrogateKind {
        match self {
            Self::Rand => SurrogateKind::Rand,
            Self::Rf(_) => SurrogateKind::Rf,
            Self::Gp(_) => SurrogateKind::Gp,
        }
    }

    pub fn fit(&self, data: &TrainingSet, seed: u64) -> Result<SurrogateModel, SurrogateError> {
        match self {
            Self::Rand => Ok(SurrogateModel::Rand),
            Self::Rf(config) => Ok(SurrogateModel::Forest(RandomForestModel::fit(config, data, seed)?)),
            Self::Gp(config) => Ok(SurrogateModel::Process(GaussianProcessModel::fit(config, data)?)),
        }
    }
}

/// A fitted surrogate. Immutable; safe to share across readers.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum SurrogateModel {
    Rand,
    Forest(RandomForestModel),
    Process(GaussianProcessModel),
}

impl SurrogateModel {
    /// Predictive mean and standard deviation at `x`. RAND reports `(0, 1)`
    /// for every query; callers using it never rank by these values.
    pub fn predict(&self, x: &EncodedVector) -> Result<(f64, f64), SurrogateError> {
        match self {
            Self::Rand => Ok((0.0, 1.0)),
            Self::Forest(model) => model.predict(x),
            Self::Process(model) => model.predict(x),
        }
    }
}

// --- Random forest ----------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RandomForestModel {
    config: RfConfig,
    n_features: usize,
    trees: Vec<TreeNode>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
enum TreeNode {
    Leaf(f64),
    Split { feature: usize, threshold: f64, left: Box<TreeNode>, right: Box<TreeNode> },
}

impl RandomForestModel {
    pub fn fit(config: &RfConfig, data: &TrainingSet, seed: u64) -> Result<Self, SurrogateError> {
        if data.is_empty() {
            return Err(SurrogateError::EmptyTrainingSet);
        }
        let mut master = ChaCha12Rng::seed_from_u64(seed);
        let n = data.len();
        let trees = (0..config.n_trees)
            .map(|_| {
                let mut rng = ChaCha12Rng::seed_from_u64(master.random());
                let rows: Vec<usize> = if config.bootstrap {
                    (0..n).map(|_| rng.random_range(0..n)).collect()
                } else {
                    (0..n).collect()
                };
                grow_tree(data, rows, config, &mut rng)
            })
            .collect();
        Ok(Self { config: config.clone(), n_features: data.features(), trees })
    }

    pub fn predict(&self, x: &EncodedVector) -> Result<(f64, f64), SurrogateError> {
        if x.len() != self.n_features {
            return Err(SurrogateError::QueryLayout { got: x.len(), want: self.n_features });
        }
        let k = self.trees.len() as f64;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for tree in &self.trees {
            let p = tree.predict(x.as_slice());
            sum += p;
            sum_sq += p * p;
        }
        let mean = sum / k;
        let var = (sum_sq / k - mean * mean).max(0.0);
        Ok((mean, var.sqrt()))
    }

    pub fn config(&self) -> &RfConfig {
        &self.config
    }
}

impl TreeNode {
    fn predict(&self, x: &[f64]) -> f64 {
        let mut node = self;
        loop {
            match node {
                TreeNode::Leaf(v) => return *v,
                TreeNode::Split { feature, threshold, left, right } => {
                    node = if x[*feature] <= *threshold { left } else { right };
                }
            }
        }
    }
}

fn grow_tree(data: &TrainingSet, rows: Vec<usize>, config: &RfConfig, rng: &mut ChaCha12Rng) -> TreeNode {
    let mean = rows.iter().map(|&r| data.targets()[r]).sum::<f64>() / rows.len() as f64;
    if rows.len() < 2 * config.min_samples_leaf.max(1) {
        return TreeNode::Leaf(mean);
    }
    let first = data.targets()[rows[0]];
    if rows.iter().all(|&r| data.targets()[r] == first) {
        return TreeNode::Leaf(first);
    }

    let features = candidate_features(data.features(), config.max_features, rng);
    match best_split(data, &rows, &features, config.min_samples_leaf.max(1)) {
        None => TreeNode::Leaf(mean),
        Some((feature, threshold)) => {
            let (left_rows, right_rows): (Vec<usize>, Vec<usize>) = rows
                .into_iter()
                .partition(|&r| data.inputs()[r].as_slice()[feature] <= threshold);
            TreeNode::Split {
                feature,
                threshold,
                left: Box::new(grow_tree(data, left_rows, config, rng)),
                right: Box::new(grow_tree(data, right_rows, config, rng)),
            }
        }
    }
}

fn candidate_features(n_features: usize, max_features: f64, rng: &mut ChaCha12Rng) -> Vec<usize> {
    let k = ((n_features as f64 * max_features).ceil() as usize).clamp(1, n_features);
    if k == n_features {
        return (0..n_features).collect();
    }
    // partial Fisher-Yates: first k entries of a shuffled index list
    let mut idx: Vec<usize> = (0..n_features).collect();
    for i in 0..k {
        let j = rng.random_range(i..n_features);
        idx.swap(i, j);
    }
    idx.truncate(k);
    idx.sort_unstable();
    idx
}

/// Greedy variance-reduction split with thresholds at midpoints between
/// sorted distinct feature values. Returns `None` when no split leaves both
/// children with at least `min_leaf` rows.
fn best_split(
    data: &TrainingSet,
    rows: &[usize],
    features: &[usize],
    min_leaf: usize,
) -> Option<(usize, f64)> {
    let mut best: Option<(f64, usize, f64)> = None;
    let mut pairs: Vec<(f64, f64)> = Vec::with_capacity(rows.len());
    for &feature in features {
        pairs.clear();
        pairs.extend(rows.iter().map(|&r| (data.inputs()[r].as_slice()[feature], data.targets()[r])));
        pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());

        let total_sum: f64 = pairs.iter().map(|p| p.1).sum();
        let total_sq: f64 = pairs.iter().map(|p| p.1 * p.1).sum();
        let n = pairs.len();

        let mut left_sum = 0.0;
        let mut left_sq = 0.0;
        for i in 0..n - 1 {
            left_sum += pairs[i].1;
            left_sq += pairs[i].1 * pairs[i].1;
            if pairs[i].0 == pairs[i + 1].0 {
                continue; // no boundary between equal values
            }
            let n_left = i + 1;
            let n_right = n - n_left;
            if n_left < min_leaf || n_right < min_leaf {
                continue;
            }
            let sse_left = left_sq - left_sum * left_sum / n_left as f64;
            let right_sum = total_sum - left_sum;
            let sse_right = (total_sq - left_sq) - right_sum * right_sum / n_right as f64;
            let score = sse_left + sse_right;
            if best.map_or(true, |(s, _, _)| score < s) {
                best = Some((score, feature, 0.5 * (pairs[i].0 + pairs[i + 1].0)));
            }
        }
    }
    best.map(|(_, feature, threshold)| (feature, threshold))
}

// --- Gaussian process --------------------------------------------------------

/// Squared-exponential GP with a cached Cholesky factor of `K + sigma_n^2 I`.
/// Hyperparameters are fixed; this model is a baseline, not a tuned method.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GaussianProcessModel {
    config: GpConfig,
    x_train: Vec<EncodedVector>,
    /// Lower-triangular Cholesky factor, row-major n x n.
    l_factor: Vec<f64>,
    /// `(K + sigma_n^2 I)^-1 y`
    alpha: Vec<f64>,
}

impl GaussianProcessModel {
    pub fn fit(config: &GpConfig, data: &TrainingSet) -> Result<Self, SurrogateError> {
        if data.is_empty() {
            return Err(SurrogateError::EmptyTrainingSet);
        }
        if data.len() > config.max_points {
            return Err(SurrogateError::GpTooLarge { n: data.len(), cap: config.max_points });
        }
        let n = data.len();
        let mut gram = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let k = kernel(config, data.inputs()[i].as_slice(), data.inputs()[j].as_slice());
                gram[i * n + j] = k;
                gram[j * n + i] = k;
            }
        }

        let mut jitter = config.noise_variance;
        let l_factor = loop {
            let mut m = gram.clone();
            for i in 0..n {
                m[i * n + i] += jitter;
            }
            if let Some(l) = cholesky(&mut m, n) {
                break l;
            }
            jitter *= 10.0;
            if jitter > 1e-2 {
                return Err(SurrogateError::Factorization);
            }
        };

        // alpha = L^-T (L^-1 y)
        let mut alpha = data.targets().to_vec();
        solve_lower(&l_factor, n, &mut alpha);
        solve_upper(&l_factor, n, &mut alpha);

        Ok(Self { config: config.clone(), x_train: data.inputs().to_vec(), l_factor, alpha })
    }

    pub fn predict(&self, x: &EncodedVector) -> Result<(f64, f64), SurrogateError> {
        let want = self.x_train[0].len();
        if x.len() != want {
            return Err(SurrogateError::QueryLayout { got: x.len(), want });
        }
        let n = self.x_train.len();
        let mut k_star: Vec<f64> =
            self.x_train.iter().map(|xi| kernel(&self.config, xi.as_slice(), x.as_slice())).collect();
        let mean = k_star.iter().zip(&self.alpha).map(|(a, b)| a * b).sum();
        solve_lower(&self.l_factor, n, &mut k_star);
        let explained: f64 = k_star.iter().map(|v| v * v).sum();
        let var = (self.config.signal_variance - explained).max(0.0);
        Ok((mean, var.sqrt()))
    }

    pub fn config(&self) -> &GpConfig {
        &self.config
    }
}

fn kernel(config: &GpConfig, a: &[f64], b: &[f64]) -> f64 {
    let dist_sq: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    config.signal_variance * (-dist_sq / (2.0 * config.length_scale * config.length_scale)).exp()
}

/// In-place lower Cholesky of a row-major symmetric matrix; `None` when a
/// pivot is not strictly positive.
fn cholesky(m: &mut [f64], n: usize) -> Option<Vec<f64>> {
    for j in 0..n {
        let mut d = m[j * n + j];
        for k in 0..j {
            d -= m[j * n + k] * m[j * n + k];
        }
        if !(d > 0.0) || !d.is_finite() {
            return None;
        }
        let d = d.sqrt();
        m[j * n + j] = d;
        for i in j + 1..n {
            let mut s = m[i * n + j];
            for k in 0..j {
                s -= m[i * n + k] * m[j * n + k];
            }
            m[i * n + j] = s / d;
        }
        for k in j + 1..n {
            m[j * n + k] = 0.0;
        }
    }
    Some(m.to_vec())
}

fn solve_lower(l: &[f64], n: usize, b: &mut [f64]) {
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * n + k] * b[k];
        }
        b[i] = s / l[i * n + i];
    }
}

fn solve_upper(l: &[f64], n: usize, b: &mut [f64]) {
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in i + 1..n {
            s -= l[k * n + i] * b[k];
        }
        b[i] = s / l[i * n + i];
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn enc(values: &[f64]) -> EncodedVector {
        EncodedVector(values.to_vec())
    }

    fn grid_1d(n: usize, f: impl Fn(f64) -> f64) -> TrainingSet {
        let x: Vec<EncodedVector> = (0..n).map(|i| enc(&[i as f64 / (n - 1) as f64])).collect();
        let y: Vec<f64> = x.iter().map(|v| f(v.as_slice()[0])).collect();
        TrainingSet::new(x, y).unwrap()
    }

    #[test]
    fn rejects_bad_training_sets() {
        assert!(TrainingSet::new(vec![], vec![]).is_err());
        assert!(TrainingSet::new(vec![enc(&[0.0])], vec![1.0, 2.0]).is_err());
        assert!(TrainingSet::new(vec![enc(&[0.0])], vec![f64::NAN]).is_err());
        assert!(TrainingSet::new(vec![enc(&[0.0]), enc(&[0.0, 1.0])], vec![1.0, 2.0]).is_err());
    }

    #[test]
    fn single_unbootstrapped_tree_memorizes() {
        let data = grid_1d(20, |x| (7.0 * x).sin());
        let config = RfConfig { n_trees: 1, bootstrap: false, ..Default::default() };
        let model = RandomForestModel::fit(&config, &data, 3).unwrap();
        for (x, y) in data.inputs().iter().zip(data.targets()) {
            let (mean, std) = model.predict(x).unwrap();
            assert!((mean - y).abs() < 1e-12);
            assert_eq!(std, 0.0);
        }
    }

    #[test]
    fn identical_trees_have_zero_std() {
        let data = grid_1d(15, |x| x * x);
        let config = RfConfig { n_trees: 10, bootstrap: false, ..Default::default() };
        let model = RandomForestModel::fit(&config, &data, 9).unwrap();
        let (_, std) = model.predict(&enc(&[0.37])).unwrap();
        assert_eq!(std, 0.0);
    }

    #[test]
    fn forest_tracks_linear_target() {
        // y = 3 x0 sampled at 50 random points; prediction at 0.5 near 1.5
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let x: Vec<EncodedVector> = (0..50).map(|_| enc(&[rng.random::<f64>()])).collect();
        let y: Vec<f64> = x.iter().map(|v| 3.0 * v.as_slice()[0]).collect();
        let data = TrainingSet::new(x, y).unwrap();
        let model = RandomForestModel::fit(&RfConfig::default(), &data, 12).unwrap();
        let (mean, _) = model.predict(&enc(&[0.5])).unwrap();
        assert!((mean - 1.5).abs() < 0.3, "mean {mean}");
    }

    #[test]
    fn forest_prediction_within_target_range() {
        let mut rng = ChaCha12Rng::seed_from_u64(21);
        let x: Vec<EncodedVector> =
            (0..40).map(|_| enc(&[rng.random::<f64>(), rng.random::<f64>()])).collect();
        let y: Vec<f64> = (0..40).map(|_| rng.random_range(-5.0..5.0)).collect();
        let lo = y.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = y.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let data = TrainingSet::new(x, y).unwrap();
        let model = RandomForestModel::fit(&RfConfig::default(), &data, 22).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(23);
        for _ in 0..200 {
            let q = enc(&[rng.random::<f64>(), rng.random::<f64>()]);
            let (mean, std) = model.predict(&q).unwrap();
            assert!(mean >= lo - 1e-12 && mean <= hi + 1e-12);
            assert!(std >= 0.0);
        }
    }

    #[test]
    fn forest_is_deterministic() {
        let data = grid_1d(30, |x| (x - 0.3).abs());
        let a = RandomForestModel::fit(&RfConfig::default(), &data, 77).unwrap();
        let b = RandomForestModel::fit(&RfConfig::default(), &data, 77).unwrap();
        for i in 0..50 {
            let q = enc(&[i as f64 / 49.0]);
            assert_eq!(a.predict(&q).unwrap(), b.predict(&q).unwrap());
        }
    }

    #[test]
    fn gp_interpolates_with_tiny_noise() {
        // length scale comparable to the grid spacing keeps the kernel matrix
        // well conditioned, so the tiny-noise fit interpolates
        let data = grid_1d(12, |x| (3.0 * x).cos());
        let config = GpConfig { noise_variance: 1e-9, length_scale: 0.1, ..Default::default() };
        let model = GaussianProcessModel::fit(&config, &data).unwrap();
        for (x, y) in data.inputs().iter().zip(data.targets()) {
            let (mean, _) = model.predict(x).unwrap();
            assert!((mean - y).abs() < 1e-6, "mean {mean} target {y}");
        }
    }

    #[test]
    fn gp_variance_bounds() {
        let data = grid_1d(10, |x| x);
        let config = GpConfig::default();
        let model = GaussianProcessModel::fit(&config, &data).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        for _ in 0..200 {
            let q = enc(&[rng.random_range(-0.5..1.5)]);
            let (_, std) = model.predict(&q).unwrap();
            let var = std * std;
            assert!(var >= 0.0);
            assert!(var <= config.signal_variance + config.noise_variance + 1e-12);
        }
    }

    #[test]
    fn gp_training_point_std_shrinks_with_noise() {
        let data = grid_1d(8, |x| 2.0 * x);
        let q = data.inputs()[3].clone();
        let mut prev = f64::INFINITY;
        for noise in [1e-2, 1e-4, 1e-6, 1e-9] {
            let config = GpConfig { noise_variance: noise, ..Default::default() };
            let model = GaussianProcessModel::fit(&config, &data).unwrap();
            let (_, std) = model.predict(&q).unwrap();
            assert!(std <= prev + 1e-12, "std {std} grew as noise shrank");
            prev = std;
        }
    }

    #[test]
    fn duplicate_row_does_not_raise_gp_variance() {
        let mut rng = ChaCha12Rng::seed_from_u64(8);
        let x: Vec<EncodedVector> = (0..10).map(|_| enc(&[rng.random(), rng.random()])).collect();
        let y: Vec<f64> = (0..10).map(|_| rng.random_range(0.0..1.0)).collect();
        let config = GpConfig::default();
        let base = GaussianProcessModel::fit(&config, &TrainingSet::new(x.clone(), y.clone()).unwrap())
            .unwrap();
        let mut x2 = x.clone();
        let mut y2 = y.clone();
        x2.push(x[4].clone());
        y2.push(y[4]);
        let dup = GaussianProcessModel::fit(&config, &TrainingSet::new(x2, y2).unwrap()).unwrap();
        let (_, std_base) = base.predict(&x[4]).unwrap();
        let (_, std_dup) = dup.predict(&x[4]).unwrap();
        assert!(std_dup <= std_base + 1e-9);
    }

    #[test]
    fn rand_model_is_constant() {
        let model = SurrogateSpec::Rand.fit(&grid_1d(5, |x| x), 0).unwrap();
        assert_eq!(model.predict(&enc(&[0.1])).unwrap(), (0.0, 1.0));
        assert_eq!(model.predict(&enc(&[0.9])).unwrap(), (0.0, 1.0));
    }

    #[test]
    fn gp_rejects_oversize_training_set() {
        let data = grid_1d(20, |x| x);
        let config = GpConfig { max_points: 10, ..Default::default() };
        assert!(matches!(
            GaussianProcessModel::fit(&config, &data),
            Err(SurrogateError::GpTooLarge { .. })
        ));
    }
}
