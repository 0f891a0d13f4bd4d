//! Classifier family: logistic-linear and one-hidden-layer MLP.
//!
//! Both kinds decompose into a featurizer (identity for linear, one ReLU
//! layer for the MLP) and a linear head mapping features to logits, so the
//! clustering stage can read penultimate activations from either. Parameters
//! live in one flat vector to keep optimizer steps and checkpointing plain.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::seeded_rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierKind {
    Linear,
    Mlp,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelConfig {
    pub kind: ClassifierKind,
    /// Hidden width for the MLP; ignored for linear models.
    #[serde(default = "default_hidden")]
    pub hidden_dim: usize,
}

fn default_hidden() -> usize {
    32
}

impl ModelConfig {
    pub fn linear() -> Self {
        ModelConfig {
            kind: ClassifierKind::Linear,
            hidden_dim: 0,
        }
    }

    pub fn mlp(hidden_dim: usize) -> Self {
        ModelConfig {
            kind: ClassifierKind::Mlp,
            hidden_dim,
        }
    }
}

/// Training hyperparameters shared by every optimizer in the crate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LossSpec {
    pub weight_decay: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Plain momentum on the gradient step; 0 disables it.
    #[serde(default = "default_momentum")]
    pub momentum: f64,
}

fn default_momentum() -> f64 {
    0.9
}

impl LossSpec {
    pub fn validate(&self) -> Result<()> {
        if self.weight_decay < 0.0 {
            return Err(Error::invalid("weight_decay must be >= 0"));
        }
        if self.learning_rate <= 0.0 {
            return Err(Error::invalid("learning_rate must be > 0"));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::invalid("epochs and batch_size must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid("momentum must lie in [0, 1)"));
        }
        Ok(())
    }
}

impl Default for LossSpec {
    fn default() -> Self {
        LossSpec {
            weight_decay: 1e-4,
            learning_rate: 0.1,
            epochs: 30,
            batch_size: 64,
            momentum: 0.9,
        }
    }
}

/// A classifier with a flat parameter vector.
///
/// Layout: MLP stores `[W1 (h x in, row-major), b1 (h), W2 (B x h), b2 (B)]`;
/// linear stores `[W (B x in), b (B)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    kind: ClassifierKind,
    input_dim: usize,
    hidden_dim: usize,
    n_classes: usize,
    params: Vec<f64>,
}

/// Forward-pass scratch; `pre_hidden` is kept for backprop through the ReLU.
pub struct Activations {
    pub features: Vec<f64>,
    pub logits: Vec<f64>,
    pre_hidden: Vec<f64>,
}

impl Classifier {
    pub fn new(config: &ModelConfig, input_dim: usize, n_classes: usize, seed: u64) -> Self {
        let hidden_dim = match config.kind {
            ClassifierKind::Linear => 0,
            ClassifierKind::Mlp => config.hidden_dim.max(1),
        };
        let mut model = Classifier {
            kind: config.kind,
            input_dim,
            hidden_dim,
            n_classes,
            params: vec![0.0; 0],
        };
        model.params = vec![0.0; model.n_params()];
        let mut rng = seeded_rng(seed);
        match config.kind {
            ClassifierKind::Linear => {
                let bound = 1.0 / (input_dim as f64).sqrt();
                for p in model.params.iter_mut() {
                    *p = rng.random_range(-bound..bound);
                }
            }
            ClassifierKind::Mlp => {
                let b1 = 1.0 / (input_dim as f64).sqrt();
                let split = hidden_dim * (input_dim + 1);
                for p in model.params[..split].iter_mut() {
                    *p = rng.random_range(-b1..b1);
                }
                let b2 = 1.0 / (hidden_dim as f64).sqrt();
                for p in model.params[split..].iter_mut() {
                    *p = rng.random_range(-b2..b2);
                }
            }
        }
        model
    }

    /// Linear binary model whose logit difference is exactly `w . x + b`.
    pub fn binary_linear(w: &[f64], b: f64) -> Self {
        let input_dim = w.len();
        let mut params = vec![0.0; 2 * input_dim + 2];
        for (j, &wj) in w.iter().enumerate() {
            params[j] = -0.5 * wj; // class-0 row
            params[input_dim + j] = 0.5 * wj; // class-1 row
        }
        params[2 * input_dim] = -0.5 * b;
        params[2 * input_dim + 1] = 0.5 * b;
        Classifier {
            kind: ClassifierKind::Linear,
            input_dim,
            hidden_dim: 0,
            n_classes: 2,
            params,
        }
    }

    pub fn kind(&self) -> ClassifierKind {
        self.kind
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn feature_dim(&self) -> usize {
        match self.kind {
            ClassifierKind::Linear => self.input_dim,
            ClassifierKind::Mlp => self.hidden_dim,
        }
    }

    pub fn n_params(&self) -> usize {
        match self.kind {
            ClassifierKind::Linear => self.n_classes * (self.input_dim + 1),
            ClassifierKind::Mlp => {
                self.hidden_dim * (self.input_dim + 1)
                    + self.n_classes * (self.hidden_dim + 1)
            }
        }
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn set_params(&mut self, params: &[f64]) {
        assert_eq!(params.len(), self.params.len());
        self.params.copy_from_slice(params);
    }

    fn head_offsets(&self) -> (usize, usize) {
        // (weights offset, bias offset)
        match self.kind {
            ClassifierKind::Linear => (0, self.n_classes * self.input_dim),
            ClassifierKind::Mlp => {
                let base = self.hidden_dim * (self.input_dim + 1);
                (base, base + self.n_classes * self.hidden_dim)
            }
        }
    }

    /// Penultimate activations and logits for one example.
    pub fn forward(&self, x: &[f64]) -> Result<Activations> {
        if x.len() != self.input_dim {
            return Err(Error::dims(format!(
                "input has dimension {}, model expects {}",
                x.len(),
                self.input_dim
            )));
        }
        let (features, pre_hidden) = match self.kind {
            ClassifierKind::Linear => (x.to_vec(), Vec::new()),
            ClassifierKind::Mlp => {
                let h = self.hidden_dim;
                let mut pre = vec![0.0; h];
                for r in 0..h {
                    let row = &self.params[r * self.input_dim..(r + 1) * self.input_dim];
                    let mut acc = self.params[h * self.input_dim + r];
                    for (j, &xj) in x.iter().enumerate() {
                        acc += row[j] * xj;
                    }
                    pre[r] = acc;
                }
                let feat: Vec<f64> = pre.iter().map(|&v| v.max(0.0)).collect();
                (feat, pre)
            }
        };
        let (w_off, b_off) = self.head_offsets();
        let f_dim = self.feature_dim();
        let mut logits = vec![0.0; self.n_classes];
        for (k, logit) in logits.iter_mut().enumerate() {
            let row = &self.params[w_off + k * f_dim..w_off + (k + 1) * f_dim];
            let mut acc = self.params[b_off + k];
            for (j, &fj) in features.iter().enumerate() {
                acc += row[j] * fj;
            }
            *logit = acc;
        }
        Ok(Activations {
            features,
            logits,
            pre_hidden,
        })
    }

    /// Penultimate activations for every row.
    pub fn featurize(&self, xs: &Array2<f64>) -> Result<Array2<f64>> {
        let n = xs.nrows();
        let mut out = Array2::zeros((n, self.feature_dim()));
        let mut row_buf = vec![0.0; self.input_dim];
        for i in 0..n {
            copy_row(xs, i, &mut row_buf);
            let act = self.forward(&row_buf)?;
            for (j, &v) in act.features.iter().enumerate() {
                out[(i, j)] = v;
            }
        }
        Ok(out)
    }

    pub fn predict_row(&self, x: &[f64]) -> Result<usize> {
        let act = self.forward(x)?;
        Ok(argmax(&act.logits))
    }

    pub fn predict(&self, xs: &Array2<f64>) -> Result<Vec<usize>> {
        let mut row_buf = vec![0.0; self.input_dim];
        (0..xs.nrows())
            .map(|i| {
                copy_row(xs, i, &mut row_buf);
                self.predict_row(&row_buf)
            })
            .collect()
    }

    /// Cross-entropy and gradient of one example, accumulated into `grad`
    /// with a multiplier. Returns the loss (without weight decay).
    pub fn accumulate_example_grad(
        &self,
        x: &[f64],
        y: usize,
        scale: f64,
        grad: &mut [f64],
    ) -> Result<f64> {
        if y >= self.n_classes {
            return Err(Error::invalid(format!(
                "label {y} out of range for {} classes",
                self.n_classes
            )));
        }
        let act = self.forward(x)?;
        let (log_probs, loss) = log_softmax_loss(&act.logits, y);
        let f_dim = self.feature_dim();
        let (w_off, b_off) = self.head_offsets();
        // d loss / d logit_k = softmax_k - 1(k == y)
        let mut dlogits = vec![0.0; self.n_classes];
        for k in 0..self.n_classes {
            dlogits[k] = log_probs[k].exp() - if k == y { 1.0 } else { 0.0 };
        }
        for (k, &dk) in dlogits.iter().enumerate() {
            let row = w_off + k * f_dim;
            for (j, &fj) in act.features.iter().enumerate() {
                grad[row + j] += scale * dk * fj;
            }
            grad[b_off + k] += scale * dk;
        }
        if self.kind == ClassifierKind::Mlp {
            let h = self.hidden_dim;
            for r in 0..h {
                if act.pre_hidden[r] <= 0.0 {
                    continue;
                }
                let mut dh = 0.0;
                for (k, &dk) in dlogits.iter().enumerate() {
                    dh += dk * self.params[w_off + k * f_dim + r];
                }
                let dh = scale * dh;
                let row = r * self.input_dim;
                for (j, &xj) in x.iter().enumerate() {
                    grad[row + j] += dh * xj;
                }
                grad[h * self.input_dim + r] += dh;
            }
        }
        Ok(loss)
    }

    /// Mean cross-entropy and gradient over the indexed rows, without any
    /// regularization term.
    pub fn data_loss_grad(
        &self,
        xs: &Array2<f64>,
        ys: &[usize],
        idx: &[usize],
        grad: &mut [f64],
    ) -> Result<f64> {
        if idx.is_empty() {
            return Err(Error::invalid("batch must be nonempty"));
        }
        grad.iter_mut().for_each(|g| *g = 0.0);
        let scale = 1.0 / idx.len() as f64;
        let mut row_buf = vec![0.0; self.input_dim];
        let mut loss = 0.0;
        for &i in idx {
            copy_row(xs, i, &mut row_buf);
            loss += self.accumulate_example_grad(&row_buf, ys[i], scale, grad)?;
        }
        Ok(loss * scale)
    }

    /// Full objective: mean cross-entropy plus `weight_decay/2 * |theta|^2`,
    /// with the exact analytic gradient.
    pub fn loss_and_grad(
        &self,
        xs: &Array2<f64>,
        ys: &[usize],
        idx: &[usize],
        weight_decay: f64,
    ) -> Result<(f64, Vec<f64>)> {
        let mut grad = vec![0.0; self.n_params()];
        let mut loss = self.data_loss_grad(xs, ys, idx, &mut grad)?;
        if weight_decay > 0.0 {
            let mut sq = 0.0;
            for (g, &p) in grad.iter_mut().zip(self.params.iter()) {
                *g += weight_decay * p;
                sq += p * p;
            }
            loss += 0.5 * weight_decay * sq;
        }
        Ok((loss, grad))
    }

    /// Mean cross-entropy (no gradient, no weight decay) over indexed rows.
    pub fn mean_loss(&self, xs: &Array2<f64>, ys: &[usize], idx: &[usize]) -> Result<f64> {
        if idx.is_empty() {
            return Err(Error::invalid("batch must be nonempty"));
        }
        let mut row_buf = vec![0.0; self.input_dim];
        let mut total = 0.0;
        for &i in idx {
            copy_row(xs, i, &mut row_buf);
            let act = self.forward(&row_buf)?;
            total += log_softmax_loss(&act.logits, ys[i]).1;
        }
        Ok(total / idx.len() as f64)
    }

    /// Per-example cross-entropy losses over all rows.
    pub fn example_losses(&self, xs: &Array2<f64>, ys: &[usize]) -> Result<Vec<f64>> {
        let mut row_buf = vec![0.0; self.input_dim];
        (0..xs.nrows())
            .map(|i| {
                copy_row(xs, i, &mut row_buf);
                let act = self.forward(&row_buf)?;
                Ok(log_softmax_loss(&act.logits, ys[i]).1)
            })
            .collect()
    }

    /// Head direction and offset of a binary model: `(w1 - w0, b1 - b0)` in
    /// feature space.
    pub fn binary_head_difference(&self) -> Result<(Array1<f64>, f64)> {
        if self.n_classes != 2 {
            return Err(Error::invalid(
                "head difference requires a binary head (B = 2)",
            ));
        }
        let (w_off, b_off) = self.head_offsets();
        let f_dim = self.feature_dim();
        let dir = Array1::from_iter(
            (0..f_dim).map(|j| self.params[w_off + f_dim + j] - self.params[w_off + j]),
        );
        Ok((dir, self.params[b_off + 1] - self.params[b_off]))
    }

    /// Signed distance of each feature vector to the head's decision
    /// boundary: `((w1 - w0) . f + (b1 - b0)) / |w1 - w0|`. Scale-free, so
    /// rescaling the head never reorders examples.
    pub fn loss_component(&self, features: &Array2<f64>) -> Result<Array1<f64>> {
        let (dir, offset) = self.binary_head_difference()?;
        if features.ncols() != dir.len() {
            return Err(Error::dims(format!(
                "feature matrix has {} columns, head expects {}",
                features.ncols(),
                dir.len()
            )));
        }
        let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm <= 1e-300 {
            return Err(Error::undefined(
                "decision boundary undefined: zero head-weight difference",
            ));
        }
        let mut out = Array1::zeros(features.nrows());
        for (i, row) in features.rows().into_iter().enumerate() {
            let mut acc = offset;
            for (j, &fj) in row.iter().enumerate() {
                acc += dir[j] * fj;
            }
            out[i] = acc / norm;
        }
        Ok(out)
    }

    /// Writes a one-line JSON header followed by the parameters as
    /// little-endian f64 bytes.
    pub fn save(&self, path: &Path) -> Result<()> {
        let header = serde_json::json!({
            "kind": match self.kind { ClassifierKind::Linear => "linear", ClassifierKind::Mlp => "mlp" },
            "input_dim": self.input_dim,
            "hidden_dim": self.hidden_dim,
            "n_classes": self.n_classes,
            "n_params": self.params.len(),
        });
        let mut file = std::fs::File::create(path)?;
        writeln!(file, "{header}")?;
        let mut bytes = Vec::with_capacity(self.params.len() * 8);
        for &p in &self.params {
            bytes.extend_from_slice(&p.to_le_bytes());
        }
        file.write_all(&bytes)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut raw = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut raw)?;
        let newline = raw
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::parse("missing checkpoint header", None))?;
        let header: serde_json::Value = serde_json::from_slice(&raw[..newline])?;
        let kind = match header["kind"].as_str() {
            Some("linear") => ClassifierKind::Linear,
            Some("mlp") => ClassifierKind::Mlp,
            other => {
                return Err(Error::parse(
                    format!("unknown model kind {other:?}"),
                    None,
                ))
            }
        };
        let get = |key: &str| -> Result<usize> {
            header[key]
                .as_u64()
                .map(|v| v as usize)
                .ok_or_else(|| Error::parse(format!("bad header field {key}"), None))
        };
        let (input_dim, hidden_dim, n_classes, n_params) = (
            get("input_dim")?,
            get("hidden_dim")?,
            get("n_classes")?,
            get("n_params")?,
        );
        let body = &raw[newline + 1..];
        if body.len() != n_params * 8 {
            return Err(Error::parse(
                format!(
                    "checkpoint body has {} bytes, expected {}",
                    body.len(),
                    n_params * 8
                ),
                None,
            ));
        }
        let params: Vec<f64> = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let model = Classifier {
            kind,
            input_dim,
            hidden_dim,
            n_classes,
            params,
        };
        if model.n_params() != n_params {
            return Err(Error::parse("checkpoint header inconsistent", None));
        }
        Ok(model)
    }
}

pub(crate) fn copy_row(xs: &Array2<f64>, i: usize, buf: &mut [f64]) {
    for (j, v) in xs.row(i).iter().enumerate() {
        buf[j] = *v;
    }
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Log-softmax of the logits and the cross-entropy at label `y`.
fn log_softmax_loss(logits: &[f64], y: usize) -> (Vec<f64>, f64) {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|&l| (l - m).exp()).sum::<f64>().ln();
    let log_probs: Vec<f64> = logits.iter().map(|&l| l - lse).collect();
    let loss = -log_probs[y];
    (log_probs, loss)
}

/// Softmax probabilities of one logit vector.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let (log_probs, _) = log_softmax_loss(logits, 0);
    log_probs.iter().map(|&l| l.exp()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use proptest::prelude::*;

    fn random_batch(
        kind: ClassifierKind,
        input_dim: usize,
        n_classes: usize,
        n: usize,
        seed: u64,
    ) -> (Classifier, Array2<f64>, Vec<usize>) {
        let cfg = match kind {
            ClassifierKind::Linear => ModelConfig::linear(),
            ClassifierKind::Mlp => ModelConfig::mlp(7),
        };
        let model = Classifier::new(&cfg, input_dim, n_classes, seed);
        let mut rng = seeded_rng(seed ^ 0xabc);
        let xs = Array2::from_shape_fn((n, input_dim), |_| rng.random_range(-2.0..2.0));
        let ys: Vec<usize> = (0..n).map(|_| rng.random_range(0..n_classes)).collect();
        (model, xs, ys)
    }

    #[test]
    fn zero_weight_model_is_uniform() {
        let mut model = Classifier::new(&ModelConfig::linear(), 3, 2, 0);
        model.params_mut().iter_mut().for_each(|p| *p = 0.0);
        let act = model.forward(&[0.4, -1.0, 2.0]).unwrap();
        assert_eq!(act.logits, vec![0.0, 0.0]);
        let probs = softmax(&act.logits);
        assert_abs_diff_eq!(probs[0], 0.5, epsilon = 1e-15);
        let xs = array![[0.4, -1.0, 2.0], [1.0, 1.0, 1.0]];
        let loss = model.mean_loss(&xs, &[0, 1], &[0, 1]).unwrap();
        assert_abs_diff_eq!(loss, (2.0f64).ln(), epsilon = 1e-15);
    }

    #[test]
    fn binary_linear_logit_is_a_dot_product() {
        let s = 1.0 / 2.0f64.sqrt();
        let model = Classifier::binary_linear(&[s, s], 0.0);
        let act = model.forward(&[4.0, 4.0]).unwrap();
        let diff = act.logits[1] - act.logits[0];
        assert_abs_diff_eq!(diff, 4.0 * 2.0f64.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn mlp_forward_matches_hand_rolled_pass() {
        let model = Classifier::new(&ModelConfig::mlp(4), 2, 2, 3);
        let x = [0.7, -1.3];
        let act = model.forward(&x).unwrap();
        // independent re-computation straight off the layout
        let p = model.params();
        let (h, din) = (4, 2);
        let mut features = vec![0.0; h];
        for r in 0..h {
            let mut acc = p[h * din + r];
            for j in 0..din {
                acc += p[r * din + j] * x[j];
            }
            features[r] = acc.max(0.0);
        }
        let w_off = h * (din + 1);
        let b_off = w_off + 2 * h;
        for k in 0..2 {
            let mut acc = p[b_off + k];
            for j in 0..h {
                acc += p[w_off + k * h + j] * features[j];
            }
            assert_abs_diff_eq!(act.logits[k], acc, epsilon = 1e-12);
        }
        assert_eq!(act.features, features);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let model = Classifier::new(&ModelConfig::linear(), 3, 2, 0);
        assert!(model.forward(&[1.0, 2.0]).is_err());
    }

    /// Central finite differences around every parameter.
    fn finite_difference_check(model: &Classifier, xs: &Array2<f64>, ys: &[usize], wd: f64) {
        let idx: Vec<usize> = (0..xs.nrows()).collect();
        let (_, grad) = model.loss_and_grad(xs, ys, &idx, wd).unwrap();
        let eps = 1e-6;
        let mut probe = model.clone();
        for p in 0..model.n_params() {
            let orig = model.params()[p];
            probe.params_mut()[p] = orig + eps;
            let (up, _) = probe.loss_and_grad(xs, ys, &idx, wd).unwrap();
            probe.params_mut()[p] = orig - eps;
            let (down, _) = probe.loss_and_grad(xs, ys, &idx, wd).unwrap();
            probe.params_mut()[p] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let denom = numeric.abs().max(grad[p].abs()).max(1e-4);
            assert!(
                (numeric - grad[p]).abs() / denom < 1e-5,
                "param {p}: analytic {} vs numeric {numeric}",
                grad[p]
            );
        }
    }

    #[test]
    fn gradients_match_central_differences() {
        for trial in 0..20u64 {
            let kind = if trial % 2 == 0 {
                ClassifierKind::Linear
            } else {
                ClassifierKind::Mlp
            };
            let n_classes = if trial % 3 == 0 { 3 } else { 2 };
            let (model, xs, ys) = random_batch(kind, 3, n_classes, 6, trial);
            let wd = if trial % 4 == 0 { 0.0 } else { 0.05 };
            finite_difference_check(&model, &xs, &ys, wd);
        }
    }

    #[test]
    fn saturated_margin_leaves_only_weight_decay() {
        let model = Classifier::binary_linear(&[50.0, 50.0], 0.0);
        let xs = array![[4.0, 4.0]];
        let idx = [0usize];
        let wd = 1e-3;
        let (loss, _) = model.loss_and_grad(&xs, &[1], &idx, wd).unwrap();
        let sq: f64 = model.params().iter().map(|p| p * p).sum();
        assert_abs_diff_eq!(loss, 0.5 * wd * sq, epsilon = 1e-12);
    }

    #[test]
    fn loss_component_zero_on_boundary_and_scale_invariant() {
        let model = Classifier::binary_linear(&[2.0, 0.0], -4.0);
        // boundary is x0 = 2
        let feats = array![[2.0, 7.0], [3.0, -1.0], [0.0, 0.0]];
        let lc = model.loss_component(&feats).unwrap();
        assert_abs_diff_eq!(lc[0], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(lc[1], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(lc[2], -2.0, epsilon = 1e-12);
        let doubled = Classifier::binary_linear(&[4.0, 0.0], -8.0);
        let lc2 = doubled.loss_component(&feats).unwrap();
        for (a, b) in lc.iter().zip(lc2.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn zero_head_difference_is_an_error() {
        let model = Classifier::binary_linear(&[0.0, 0.0], 0.0);
        assert!(model.loss_component(&array![[1.0, 2.0]]).is_err());
    }

    #[test]
    fn checkpoint_round_trips() {
        let (model, _, _) = random_batch(ClassifierKind::Mlp, 3, 2, 1, 5);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        model.save(&path).unwrap();
        let back = Classifier::load(&path).unwrap();
        assert_eq!(model, back);
    }

    proptest! {
        #[test]
        fn softmax_sums_to_one(logits in proptest::collection::vec(-30.0f64..30.0, 2..6)) {
            let probs = softmax(&logits);
            let total: f64 = probs.iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
            prop_assert!(probs.iter().all(|&p| p >= 0.0));
        }

        #[test]
        fn logits_stay_finite(x in proptest::collection::vec(-1e4f64..1e4, 3), seed in 0u64..50) {
            let model = Classifier::new(&ModelConfig::mlp(5), 3, 2, seed);
            let act = model.forward(&x).unwrap();
            prop_assert!(act.logits.iter().all(|l| l.is_finite()));
        }
    }
}
