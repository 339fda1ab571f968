//! Tabular variational autoencoder over encoded configuration rows.
//!
//! Numeric feature slots are reconstructed through a sigmoid mean with a
//! fixed decoder sigma (Gaussian negative log-likelihood); categorical
//! one-hot blocks through a softmax (cross-entropy). Training minimizes the
//! ELBO — reconstruction plus KL to a standard-normal latent — with the
//! reparameterization trick and adaptive moment estimation. Gradients are
//! hand-derived; `elbo_loss` and `elbo_gradient` expose the exact quantities
//! a finite-difference check needs.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{HistoryTable, TransferError};
use crate::space::{Configuration, EncodedVector, ParamKind, ParameterSpace};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TvaeConfig {
    /// Latent dimensionality; defaults to `min(8, feature count)`.
    pub latent_dim: Option<usize>,
    pub hidden_units: usize,
    pub epochs: usize,
    /// Rows per gradient step; defaults to `min(rows, 64)`.
    pub batch_size: Option<usize>,
    /// Fixed decoder standard deviation for numeric slots.
    pub decoder_sigma: f64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for TvaeConfig {
    fn default() -> Self {
        Self {
            latent_dim: None,
            hidden_units: 64,
            epochs: 300,
            batch_size: None,
            decoder_sigma: 0.05,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Output-column structure of the decoder, derived from the space layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum Column {
    Numeric(usize),
    Block { start: usize, len: usize },
}

/// Offsets of each weight matrix inside the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Layout {
    f: usize,
    d: usize,
    h: usize,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    wm: usize,
    bm: usize,
    wl: usize,
    bl: usize,
    v1: usize,
    d1: usize,
    v2: usize,
    d2: usize,
    v3: usize,
    d3: usize,
    total: usize,
}

impl Layout {
    fn new(f: usize, d: usize, h: usize) -> Self {
        let mut offset = 0;
        let mut take = |n: usize| {
            let at = offset;
            offset += n;
            at
        };
        let w1 = take(h * f);
        let b1 = take(h);
        let w2 = take(h * h);
        let b2 = take(h);
        let wm = take(d * h);
        let bm = take(d);
        let wl = take(d * h);
        let bl = take(d);
        let v1 = take(h * d);
        let d1 = take(h);
        let v2 = take(h * h);
        let d2 = take(h);
        let v3 = take(f * h);
        let d3 = take(f);
        Self { f, d, h, w1, b1, w2, b2, wm, bm, wl, bl, v1, d1, v2, d2, v3, d3, total: offset }
    }
}

/// A fitted (or freshly initialized) tabular VAE tied to one parameter space.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TvaeModel {
    space: ParameterSpace,
    columns: Vec<Column>,
    layout: Layout,
    params: Vec<f64>,
    decoder_sigma: f64,
    loss_trace: Vec<f64>,
}

impl TvaeModel {
    /// Random initialization without training; used by gradient checks and
    /// as the starting point of [`fit`](Self::fit).
    pub fn initialize(space: &ParameterSpace, config: &TvaeConfig, seed: u64) -> Self {
        let f = space.encoded_len();
        let d = config.latent_dim.unwrap_or_else(|| 8.min(f)).max(1);
        let layout = Layout::new(f, d, config.hidden_units);
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut params = vec![0.0; layout.total];
        let mut init = |at: usize, rows: usize, cols: usize, rng: &mut ChaCha12Rng| {
            let limit = (6.0 / (rows + cols) as f64).sqrt();
            for v in &mut params[at..at + rows * cols] {
                *v = rng.random_range(-limit..limit);
            }
        };
        let (f, d, h) = (layout.f, layout.d, layout.h);
        init(layout.w1, h, f, &mut rng);
        init(layout.w2, h, h, &mut rng);
        init(layout.wm, d, h, &mut rng);
        init(layout.wl, d, h, &mut rng);
        init(layout.v1, h, d, &mut rng);
        init(layout.v2, h, h, &mut rng);
        init(layout.v3, f, h, &mut rng);

        let columns = derive_columns(space);
        Self {
            space: space.clone(),
            columns,
            layout,
            params,
            decoder_sigma: config.decoder_sigma,
            loss_trace: Vec::new(),
        }
    }

    /// Fit on a (typically top-quantile) history. Rows are encoded through
    /// the space; the per-epoch mean loss is kept as the training trace.
    pub fn fit(selected: &HistoryTable, config: &TvaeConfig, seed: u64) -> Result<Self, TransferError> {
        if selected.len() < 2 {
            return Err(TransferError::TooFewRows { need: 2, got: selected.len() });
        }
        let rows: Vec<Vec<f64>> = selected
            .rows()
            .iter()
            .map(|(c, _)| Ok(selected.space().encode(c)?.0))
            .collect::<Result<_, TransferError>>()?;

        let mut model = Self::initialize(selected.space(), config, seed);
        let n = rows.len();
        let batch = config.batch_size.unwrap_or_else(|| n.min(64)).clamp(1, n);
        let mut rng = ChaCha12Rng::seed_from_u64(seed.wrapping_add(1));

        let mut adam_m = vec![0.0; model.layout.total];
        let mut adam_v = vec![0.0; model.layout.total];
        let mut step = 0usize;
        let mut order: Vec<usize> = (0..n).collect();

        for epoch in 0..config.epochs {
            order.shuffle(&mut rng);
            let mut epoch_loss = 0.0;
            for chunk in order.chunks(batch) {
                let batch_rows: Vec<&[f64]> = chunk.iter().map(|&i| rows[i].as_slice()).collect();
                let eps: Vec<Vec<f64>> = chunk
                    .iter()
                    .map(|_| (0..model.layout.d).map(|_| rng.sample(StandardNormal)).collect())
                    .collect();
                let (loss, grad) = model.loss_and_gradient(&model.params, &batch_rows, &eps);
                if !loss.is_finite() {
                    return Err(TransferError::TrainingDiverged { epoch });
                }
                step += 1;
                adam_step(&mut model.params, &grad, &mut adam_m, &mut adam_v, step, config);
                epoch_loss += loss * chunk.len() as f64;
            }
            model.loss_trace.push(epoch_loss / n as f64);
        }
        Ok(model)
    }

    /// Generate one configuration: a standard-normal latent draw is decoded,
    /// numeric slots are perturbed by the decoder sigma and clamped, labels
    /// are sampled from the softmax blocks, and the result goes through the
    /// space's decode (rounding, clamping).
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Configuration {
        let z: Vec<f64> = (0..self.layout.d).map(|_| rng.sample(StandardNormal)).collect();
        let out = self.decode_latent(&z);
        let mut features = vec![0.0; self.layout.f];
        for column in &self.columns {
            match column {
                Column::Numeric(s) => {
                    let mean = sigmoid(out[*s]);
                    let noisy = Normal::new(mean, self.decoder_sigma).unwrap().sample(rng);
                    features[*s] = noisy.clamp(0.0, 1.0);
                }
                Column::Block { start, len } => {
                    let probs = softmax(&out[*start..start + len]);
                    let k = super::weighted_choice(rng, &probs);
                    features[start + k] = 1.0;
                }
            }
        }
        self.space.decode(&EncodedVector(features)).expect("layout matches by construction")
    }

    pub fn space(&self) -> &ParameterSpace {
        &self.space
    }

    pub fn loss_trace(&self) -> &[f64] {
        &self.loss_trace
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn n_params(&self) -> usize {
        self.layout.total
    }

    pub fn latent_dim(&self) -> usize {
        self.layout.d
    }

    /// Mean ELBO loss of `rows` under `params` with fixed reparameterization
    /// noise `eps` (one vector of latent draws per row).
    pub fn elbo_loss(&self, params: &[f64], rows: &[&[f64]], eps: &[Vec<f64>]) -> f64 {
        rows.iter()
            .zip(eps)
            .map(|(row, e)| self.forward(params, row, e).loss)
            .sum::<f64>()
            / rows.len() as f64
    }

    /// Analytic gradient of [`elbo_loss`](Self::elbo_loss) with the same
    /// fixed noise.
    pub fn elbo_gradient(&self, params: &[f64], rows: &[&[f64]], eps: &[Vec<f64>]) -> Vec<f64> {
        self.loss_and_gradient(params, rows, eps).1
    }

    fn decode_latent(&self, z: &[f64]) -> Vec<f64> {
        let (l, p) = (&self.layout, &self.params);
        let g1 = affine_tanh(&p[l.v1..], &p[l.d1..], z, l.h, l.d);
        let g2 = affine_tanh(&p[l.v2..], &p[l.d2..], &g1, l.h, l.h);
        affine(&p[l.v3..], &p[l.d3..], &g2, l.f, l.h)
    }

    fn forward(&self, params: &[f64], x: &[f64], eps: &[f64]) -> ForwardPass {
        let l = &self.layout;
        let h1 = affine_tanh(&params[l.w1..], &params[l.b1..], x, l.h, l.f);
        let h2 = affine_tanh(&params[l.w2..], &params[l.b2..], &h1, l.h, l.h);
        let mu = affine(&params[l.wm..], &params[l.bm..], &h2, l.d, l.h);
        let lv = affine(&params[l.wl..], &params[l.bl..], &h2, l.d, l.h);
        let std: Vec<f64> = lv.iter().map(|v| (0.5 * v).exp()).collect();
        let z: Vec<f64> = mu.iter().zip(&std).zip(eps).map(|((m, s), e)| m + s * e).collect();
        let g1 = affine_tanh(&params[l.v1..], &params[l.d1..], &z, l.h, l.d);
        let g2 = affine_tanh(&params[l.v2..], &params[l.d2..], &g1, l.h, l.h);
        let out = affine(&params[l.v3..], &params[l.d3..], &g2, l.f, l.h);

        let sigma_sq = self.decoder_sigma * self.decoder_sigma;
        let mut rec = 0.0;
        for column in &self.columns {
            match column {
                Column::Numeric(s) => {
                    let p = sigmoid(out[*s]);
                    let diff = x[*s] - p;
                    rec += diff * diff / (2.0 * sigma_sq)
                        + 0.5 * (2.0 * std::f64::consts::PI * sigma_sq).ln();
                }
                Column::Block { start, len } => {
                    let probs = softmax(&out[*start..start + len]);
                    for k in 0..*len {
                        if x[start + k] > 0.0 {
                            rec -= x[start + k] * probs[k].max(1e-300).ln();
                        }
                    }
                }
            }
        }
        let kl = gaussian_kl(&mu, &lv);
        ForwardPass { h1, h2, mu, lv, std, z, g1, g2, out, loss: rec + kl }
    }

    fn loss_and_gradient(&self, params: &[f64], rows: &[&[f64]], eps: &[Vec<f64>]) -> (f64, Vec<f64>) {
        let l = &self.layout;
        let mut grad = vec![0.0; l.total];
        let mut total_loss = 0.0;
        let sigma_sq = self.decoder_sigma * self.decoder_sigma;

        for (x, e) in rows.iter().zip(eps) {
            let pass = self.forward(params, x, e);
            total_loss += pass.loss;

            // reconstruction gradient wrt decoder output
            let mut d_out = vec![0.0; l.f];
            for column in &self.columns {
                match column {
                    Column::Numeric(s) => {
                        let p = sigmoid(pass.out[*s]);
                        d_out[*s] = (p - x[*s]) / sigma_sq * p * (1.0 - p);
                    }
                    Column::Block { start, len } => {
                        let probs = softmax(&pass.out[*start..start + len]);
                        for k in 0..*len {
                            d_out[start + k] = probs[k] - x[start + k];
                        }
                    }
                }
            }

            // decoder
            let d_g2 = backprop_affine(&mut grad, l.v3, l.d3, params, &d_out, &pass.g2, l.f, l.h);
            let d_c2 = tanh_back(&d_g2, &pass.g2);
            let d_g1 = backprop_affine(&mut grad, l.v2, l.d2, params, &d_c2, &pass.g1, l.h, l.h);
            let d_c1 = tanh_back(&d_g1, &pass.g1);
            let d_z = backprop_affine(&mut grad, l.v1, l.d1, params, &d_c1, &pass.z, l.h, l.d);

            // reparameterization plus KL
            let d_mu: Vec<f64> = d_z.iter().zip(&pass.mu).map(|(dz, m)| dz + m).collect();
            let d_lv: Vec<f64> = d_z
                .iter()
                .zip(&pass.std)
                .zip(e)
                .zip(&pass.lv)
                .map(|(((dz, s), ei), lv)| dz * 0.5 * s * ei + 0.5 * (lv.exp() - 1.0))
                .collect();

            // encoder heads
            let d_h2_mu = backprop_affine(&mut grad, l.wm, l.bm, params, &d_mu, &pass.h2, l.d, l.h);
            let d_h2_lv = backprop_affine(&mut grad, l.wl, l.bl, params, &d_lv, &pass.h2, l.d, l.h);
            let d_h2: Vec<f64> = d_h2_mu.iter().zip(&d_h2_lv).map(|(a, b)| a + b).collect();
            let d_a2 = tanh_back(&d_h2, &pass.h2);
            let d_h1 = backprop_affine(&mut grad, l.w2, l.b2, params, &d_a2, &pass.h1, l.h, l.h);
            let d_a1 = tanh_back(&d_h1, &pass.h1);
            backprop_affine(&mut grad, l.w1, l.b1, params, &d_a1, x, l.h, l.f);
        }

        let scale = 1.0 / rows.len() as f64;
        for g in &mut grad {
            *g *= scale;
        }
        (total_loss * scale, grad)
    }
}

struct ForwardPass {
    h1: Vec<f64>,
    h2: Vec<f64>,
    mu: Vec<f64>,
    lv: Vec<f64>,
    std: Vec<f64>,
    z: Vec<f64>,
    g1: Vec<f64>,
    g2: Vec<f64>,
    out: Vec<f64>,
    loss: f64,
}

/// `KL(N(mu, exp(logvar)) || N(0, I))`, summed over dimensions.
pub fn gaussian_kl(mu: &[f64], logvar: &[f64]) -> f64 {
    mu.iter()
        .zip(logvar)
        .map(|(m, lv)| 0.5 * (m * m + lv.exp() - lv - 1.0))
        .sum()
}

fn derive_columns(space: &ParameterSpace) -> Vec<Column> {
    let mut columns = Vec::with_capacity(space.len());
    let mut offset = 0;
    for param in space.params() {
        match param.kind() {
            ParamKind::Integer { .. } | ParamKind::Real { .. } => {
                columns.push(Column::Numeric(offset));
                offset += 1;
            }
            ParamKind::Categorical { labels } => {
                columns.push(Column::Block { start: offset, len: labels.len() });
                offset += labels.len();
            }
        }
    }
    columns
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|v| v / sum).collect()
}

fn affine(w: &[f64], b: &[f64], x: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    (0..rows)
        .map(|r| {
            let mut acc = b[r];
            let row = &w[r * cols..(r + 1) * cols];
            for (wv, xv) in row.iter().zip(x) {
                acc += wv * xv;
            }
            acc
        })
        .collect()
}

fn affine_tanh(w: &[f64], b: &[f64], x: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    affine(w, b, x, rows, cols).into_iter().map(f64::tanh).collect()
}

fn tanh_back(upstream: &[f64], activated: &[f64]) -> Vec<f64> {
    upstream.iter().zip(activated).map(|(u, a)| u * (1.0 - a * a)).collect()
}

/// Accumulate weight/bias gradients for `y = W x + b` given `d_y`, returning
/// `d_x = W^T d_y`.
fn backprop_affine(
    grad: &mut [f64],
    w_at: usize,
    b_at: usize,
    params: &[f64],
    d_y: &[f64],
    x: &[f64],
    rows: usize,
    cols: usize,
) -> Vec<f64> {
    let mut d_x = vec![0.0; cols];
    for r in 0..rows {
        let dy = d_y[r];
        grad[b_at + r] += dy;
        let w_row = &params[w_at + r * cols..w_at + (r + 1) * cols];
        let g_row = &mut grad[w_at + r * cols..w_at + (r + 1) * cols];
        for c in 0..cols {
            g_row[c] += dy * x[c];
            d_x[c] += w_row[c] * dy;
        }
    }
    d_x
}

fn adam_step(
    params: &mut [f64],
    grad: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    step: usize,
    config: &TvaeConfig,
) {
    let b1 = config.beta1;
    let b2 = config.beta2;
    let correction1 = 1.0 - b1.powi(step as i32);
    let correction2 = 1.0 - b2.powi(step as i32);
    for i in 0..params.len() {
        m[i] = b1 * m[i] + (1.0 - b1) * grad[i];
        v[i] = b2 * v[i] + (1.0 - b2) * grad[i] * grad[i];
        let m_hat = m[i] / correction1;
        let v_hat = v[i] / correction2;
        params[i] -= config.learning_rate * m_hat / (v_hat.sqrt() + config.epsilon);
    }
}
