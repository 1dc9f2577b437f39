//! Desk-scale differentiable objectives: linear regression (half squared
//! error), softmax regression, and a one-hidden-layer tanh MLP, plus the
//! proximal wrapper that anchors local iterates to the round-start parameters.
//!
//! Parameters are flattened layer by layer, row-major, weights before biases,
//! so checkpoints stay portable across runs.

use crate::error::{Error, Result};
use crate::math::ParamVector;
use crate::rng::SeededRng;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// A mini-batch: `n` rows of `feature_dim` reals plus one class index each.
#[derive(Clone, Debug)]
pub struct Batch {
    features: Vec<f64>,
    labels: Vec<usize>,
    n: usize,
    feature_dim: usize,
}

impl Batch {
    pub fn new(features: Vec<f64>, labels: Vec<usize>, feature_dim: usize) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::config("batch must contain at least one sample"));
        }
        if features.len() != labels.len() * feature_dim {
            return Err(Error::Dimension {
                context: "batch features",
                expected: labels.len() * feature_dim,
                got: features.len(),
            });
        }
        Ok(Batch {
            n: labels.len(),
            features,
            labels,
            feature_dim,
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.feature_dim..(i + 1) * self.feature_dim]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Single-sample view, used for per-sample gradient statistics.
    pub fn single(&self, i: usize) -> Batch {
        Batch {
            features: self.row(i).to_vec(),
            labels: vec![self.labels[i]],
            n: 1,
            feature_dim: self.feature_dim,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    LinearRegression,
    SoftmaxRegression,
    Mlp,
}

/// Immutable model description; all state lives in the flat parameter vector.
#[derive(Clone, Debug)]
pub struct Model {
    pub kind: ModelKind,
    pub feature_dim: usize,
    pub hidden_dim: Option<usize>,
    pub n_classes: usize,
}

impl Model {
    pub fn linear_regression(feature_dim: usize, n_classes: usize) -> Self {
        Model {
            kind: ModelKind::LinearRegression,
            feature_dim,
            hidden_dim: None,
            n_classes,
        }
    }

    pub fn softmax_regression(feature_dim: usize, n_classes: usize) -> Self {
        Model {
            kind: ModelKind::SoftmaxRegression,
            feature_dim,
            hidden_dim: None,
            n_classes,
        }
    }

    pub fn mlp(feature_dim: usize, hidden_dim: usize, n_classes: usize) -> Self {
        Model {
            kind: ModelKind::Mlp,
            feature_dim,
            hidden_dim: Some(hidden_dim),
            n_classes,
        }
    }

    pub fn param_count(&self) -> usize {
        match self.kind {
            ModelKind::LinearRegression => self.feature_dim,
            ModelKind::SoftmaxRegression => self.n_classes * self.feature_dim + self.n_classes,
            ModelKind::Mlp => {
                let h = self.hidden_dim.unwrap_or(0);
                h * self.feature_dim + h + self.n_classes * h + self.n_classes
            }
        }
    }

    /// Initial parameters: zeros for the convex models, symmetric-breaking
    /// uniform draws scaled by 1/sqrt(fan_in) for the MLP.
    pub fn init_params(&self, rng: &mut SeededRng) -> ParamVector {
        match self.kind {
            ModelKind::LinearRegression | ModelKind::SoftmaxRegression => {
                ParamVector::zeros(self.param_count())
            }
            ModelKind::Mlp => {
                let h = self.hidden_dim.unwrap_or(0);
                let mut values = Vec::with_capacity(self.param_count());
                let r1 = 1.0 / (self.feature_dim as f64).sqrt();
                for _ in 0..h * self.feature_dim {
                    values.push(rng.random_range(-r1..r1));
                }
                values.extend(std::iter::repeat_n(0.0, h));
                let r2 = 1.0 / (h as f64).sqrt();
                for _ in 0..self.n_classes * h {
                    values.push(rng.random_range(-r2..r2));
                }
                values.extend(std::iter::repeat_n(0.0, self.n_classes));
                ParamVector(values)
            }
        }
    }

    fn check_dims(&self, x: &ParamVector, batch: &Batch) -> Result<()> {
        if x.len() != self.param_count() {
            return Err(Error::Dimension {
                context: "model parameters",
                expected: self.param_count(),
                got: x.len(),
            });
        }
        if batch.feature_dim() != self.feature_dim {
            return Err(Error::Dimension {
                context: "batch feature dim",
                expected: self.feature_dim,
                got: batch.feature_dim(),
            });
        }
        if let Some(&bad) = batch.labels().iter().find(|&&l| l >= self.n_classes) {
            return Err(Error::config(format!(
                "label {bad} out of range for {} classes",
                self.n_classes
            )));
        }
        Ok(())
    }

    /// Mean per-sample loss over the batch.
    pub fn loss(&self, x: &ParamVector, batch: &Batch) -> Result<f64> {
        Ok(self.eval(x, batch, false)?.0)
    }

    /// Mean analytic gradient over the batch.
    pub fn grad(&self, x: &ParamVector, batch: &Batch) -> Result<ParamVector> {
        Ok(self.eval(x, batch, true)?.1.expect("gradient requested"))
    }

    /// Loss and gradient from one shared forward pass.
    pub fn loss_and_grad(&self, x: &ParamVector, batch: &Batch) -> Result<(f64, ParamVector)> {
        let (loss, grad) = self.eval(x, batch, true)?;
        Ok((loss, grad.expect("gradient requested")))
    }

    fn eval(
        &self,
        x: &ParamVector,
        batch: &Batch,
        want_grad: bool,
    ) -> Result<(f64, Option<ParamVector>)> {
        self.check_dims(x, batch)?;
        let (loss, grad) = match self.kind {
            ModelKind::LinearRegression => self.eval_linear(x, batch, want_grad),
            ModelKind::SoftmaxRegression => self.eval_softmax(x, batch, want_grad),
            ModelKind::Mlp => self.eval_mlp(x, batch, want_grad),
        };
        if !loss.is_finite() {
            return Err(Error::InvalidNumber {
                context: "model loss",
            });
        }
        if let Some(g) = &grad {
            if !g.is_finite() {
                return Err(Error::InvalidNumber {
                    context: "model gradient",
                });
            }
        }
        Ok((loss, grad))
    }

    fn eval_linear(
        &self,
        x: &ParamVector,
        batch: &Batch,
        want_grad: bool,
    ) -> (f64, Option<ParamVector>) {
        let n = batch.len() as f64;
        let mut loss = 0.0;
        let mut grad = if want_grad {
            Some(vec![0.0; x.len()])
        } else {
            None
        };
        for i in 0..batch.len() {
            let phi = batch.row(i);
            let target = batch.label(i) as f64;
            let pred: f64 = phi.iter().zip(x.iter()).map(|(p, w)| p * w).sum();
            let residual = pred - target;
            loss += 0.5 * residual * residual;
            if let Some(g) = grad.as_mut() {
                for (gj, pj) in g.iter_mut().zip(phi) {
                    *gj += residual * pj / n;
                }
            }
        }
        (loss / n, grad.map(ParamVector))
    }

    fn eval_softmax(
        &self,
        x: &ParamVector,
        batch: &Batch,
        want_grad: bool,
    ) -> (f64, Option<ParamVector>) {
        let c = self.n_classes;
        let d = self.feature_dim;
        let n = batch.len() as f64;
        let weights = &x.0[..c * d];
        let biases = &x.0[c * d..];
        let mut loss = 0.0;
        let mut grad = if want_grad {
            Some(vec![0.0; x.len()])
        } else {
            None
        };
        let mut logits = vec![0.0; c];
        for i in 0..batch.len() {
            let phi = batch.row(i);
            for (k, logit) in logits.iter_mut().enumerate() {
                let row = &weights[k * d..(k + 1) * d];
                *logit = row.iter().zip(phi).map(|(w, p)| w * p).sum::<f64>() + biases[k];
            }
            let y = batch.label(i);
            let (log_z, probs) = log_softmax_terms(&logits);
            loss += log_z - logits[y];
            if let Some(g) = grad.as_mut() {
                for (k, &p) in probs.iter().enumerate() {
                    let delta = (p - if k == y { 1.0 } else { 0.0 }) / n;
                    let row = &mut g[k * d..(k + 1) * d];
                    for (gj, pj) in row.iter_mut().zip(phi) {
                        *gj += delta * pj;
                    }
                    g[c * d + k] += delta;
                }
            }
        }
        (loss / n, grad.map(ParamVector))
    }

    fn eval_mlp(
        &self,
        x: &ParamVector,
        batch: &Batch,
        want_grad: bool,
    ) -> (f64, Option<ParamVector>) {
        let c = self.n_classes;
        let d = self.feature_dim;
        let h = self.hidden_dim.unwrap_or(0);
        let n = batch.len() as f64;
        let (w1, rest) = x.0.split_at(h * d);
        let (b1, rest) = rest.split_at(h);
        let (w2, b2) = rest.split_at(c * h);
        let mut loss = 0.0;
        let mut grad = if want_grad {
            Some(vec![0.0; x.len()])
        } else {
            None
        };
        let mut hidden = vec![0.0; h];
        let mut logits = vec![0.0; c];
        for i in 0..batch.len() {
            let phi = batch.row(i);
            for (j, activation) in hidden.iter_mut().enumerate() {
                let row = &w1[j * d..(j + 1) * d];
                let z: f64 = row.iter().zip(phi).map(|(w, p)| w * p).sum::<f64>() + b1[j];
                *activation = z.tanh();
            }
            for (k, logit) in logits.iter_mut().enumerate() {
                let row = &w2[k * h..(k + 1) * h];
                *logit = row.iter().zip(&hidden).map(|(w, a)| w * a).sum::<f64>() + b2[k];
            }
            let y = batch.label(i);
            let (log_z, probs) = log_softmax_terms(&logits);
            loss += log_z - logits[y];
            if let Some(g) = grad.as_mut() {
                // Output layer deltas, then backprop through tanh.
                let mut delta_hidden = vec![0.0; h];
                for (k, &p) in probs.iter().enumerate() {
                    let delta = (p - if k == y { 1.0 } else { 0.0 }) / n;
                    let row = &mut g[h * d + h + k * h..h * d + h + (k + 1) * h];
                    for (j, (gj, a)) in row.iter_mut().zip(&hidden).enumerate() {
                        *gj += delta * a;
                        delta_hidden[j] += delta * w2[k * h + j];
                    }
                    g[h * d + h + c * h + k] += delta;
                }
                for (j, dh) in delta_hidden.iter().enumerate() {
                    let dz = dh * (1.0 - hidden[j] * hidden[j]);
                    let row = &mut g[j * d..(j + 1) * d];
                    for (gj, pj) in row.iter_mut().zip(phi) {
                        *gj += dz * pj;
                    }
                    g[h * d + j] += dz;
                }
            }
        }
        (loss / n, grad.map(ParamVector))
    }

    /// Fraction of argmax-correct predictions; ties break toward the lowest
    /// class index. Not defined for regression.
    pub fn accuracy(&self, x: &ParamVector, batch: &Batch) -> Result<f64> {
        if self.kind == ModelKind::LinearRegression {
            return Err(Error::UnsupportedModel("linear-regression"));
        }
        self.check_dims(x, batch)?;
        let mut correct = 0usize;
        for i in 0..batch.len() {
            if self.predict_class(x, batch.row(i)) == batch.label(i) {
                correct += 1;
            }
        }
        Ok(correct as f64 / batch.len() as f64)
    }

    fn predict_class(&self, x: &ParamVector, phi: &[f64]) -> usize {
        let logits = self.logits(x, phi);
        let mut best = 0;
        for (k, &z) in logits.iter().enumerate() {
            if z > logits[best] {
                best = k;
            }
        }
        best
    }

    fn logits(&self, x: &ParamVector, phi: &[f64]) -> Vec<f64> {
        let c = self.n_classes;
        let d = self.feature_dim;
        match self.kind {
            ModelKind::LinearRegression => {
                vec![phi.iter().zip(x.iter()).map(|(p, w)| p * w).sum()]
            }
            ModelKind::SoftmaxRegression => {
                let weights = &x.0[..c * d];
                let biases = &x.0[c * d..];
                (0..c)
                    .map(|k| {
                        weights[k * d..(k + 1) * d]
                            .iter()
                            .zip(phi)
                            .map(|(w, p)| w * p)
                            .sum::<f64>()
                            + biases[k]
                    })
                    .collect()
            }
            ModelKind::Mlp => {
                let h = self.hidden_dim.unwrap_or(0);
                let (w1, rest) = x.0.split_at(h * d);
                let (b1, rest) = rest.split_at(h);
                let (w2, b2) = rest.split_at(c * h);
                let hidden: Vec<f64> = (0..h)
                    .map(|j| {
                        (w1[j * d..(j + 1) * d]
                            .iter()
                            .zip(phi)
                            .map(|(w, p)| w * p)
                            .sum::<f64>()
                            + b1[j])
                            .tanh()
                    })
                    .collect();
                (0..c)
                    .map(|k| {
                        w2[k * h..(k + 1) * h]
                            .iter()
                            .zip(&hidden)
                            .map(|(w, a)| w * a)
                            .sum::<f64>()
                            + b2[k]
                    })
                    .collect()
            }
        }
    }
}

/// Numerically stable log-sum-exp plus softmax probabilities.
fn log_softmax_terms(logits: &[f64]) -> (f64, Vec<f64>) {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let log_z = max + sum.ln();
    let probs = exps.iter().map(|e| e / sum).collect();
    (log_z, probs)
}

/// Loss wrapper adding (mu/2) * ||x - anchor||^2 to the inner objective.
#[derive(Clone, Debug)]
pub struct ProximalWrapper<'a> {
    pub inner: &'a Model,
    pub mu: f64,
    pub anchor: &'a ParamVector,
}

impl<'a> ProximalWrapper<'a> {
    pub fn new(inner: &'a Model, mu: f64, anchor: &'a ParamVector) -> Result<Self> {
        if mu < 0.0 || !mu.is_finite() {
            return Err(Error::config(format!("proximal mu must be >= 0, got {mu}")));
        }
        Ok(ProximalWrapper { inner, mu, anchor })
    }

    fn check_anchor(&self, x: &ParamVector) -> Result<()> {
        if x.len() != self.anchor.len() {
            return Err(Error::Dimension {
                context: "proximal anchor",
                expected: self.anchor.len(),
                got: x.len(),
            });
        }
        Ok(())
    }

    pub fn loss(&self, x: &ParamVector, batch: &Batch) -> Result<f64> {
        self.check_anchor(x)?;
        let base = self.inner.loss(x, batch)?;
        if self.mu == 0.0 {
            return Ok(base);
        }
        let drift = x.sub(self.anchor)?;
        let penalty = 0.5 * self.mu * drift.iter().map(|v| v * v).sum::<f64>();
        Ok(base + penalty)
    }

    pub fn grad(&self, x: &ParamVector, batch: &Batch) -> Result<ParamVector> {
        Ok(self.loss_and_grad(x, batch)?.1)
    }

    pub fn loss_and_grad(&self, x: &ParamVector, batch: &Batch) -> Result<(f64, ParamVector)> {
        self.check_anchor(x)?;
        let (base, mut grad) = self.inner.loss_and_grad(x, batch)?;
        if self.mu == 0.0 {
            return Ok((base, grad));
        }
        let mut penalty = 0.0;
        for (g, (xi, ai)) in grad.0.iter_mut().zip(x.iter().zip(self.anchor.iter())) {
            let drift = xi - ai;
            penalty += 0.5 * self.mu * drift * drift;
            *g += self.mu * drift;
        }
        Ok((base + penalty, grad))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::{finite_diff_grad, relative_error};
    use crate::rng::StreamKind;

    fn sample_batch(rng: &mut SeededRng, n: usize, d: usize, classes: usize) -> Batch {
        let features: Vec<f64> = (0..n * d).map(|_| rng.random_range(-1.5..1.5)).collect();
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..classes)).collect();
        Batch::new(features, labels, d).unwrap()
    }

    fn random_params(rng: &mut SeededRng, dim: usize) -> ParamVector {
        ParamVector((0..dim).map(|_| rng.random_range(-0.8..0.8)).collect())
    }

    #[test]
    fn softmax_at_zero_is_log_classes() {
        let model = Model::softmax_regression(4, 10);
        let mut rng = SeededRng::for_purpose(3, StreamKind::DataGen);
        let batch = sample_batch(&mut rng, 6, 4, 10);
        let loss = model
            .loss(&ParamVector::zeros(model.param_count()), &batch)
            .unwrap();
        assert!((loss - (10.0f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn linear_regression_interpolation_has_zero_loss() {
        let model = Model::linear_regression(1, 3);
        // w = 2 reproduces label 2 from feature 1 exactly.
        let batch = Batch::new(vec![1.0], vec![2], 1).unwrap();
        let loss = model.loss(&vec![2.0].into(), &batch).unwrap();
        assert_eq!(loss, 0.0);
        let grad = model.grad(&vec![2.0].into(), &batch).unwrap();
        assert_eq!(grad.as_slice(), &[0.0]);
    }

    #[test]
    fn softmax_binary_hand_computed() {
        // W = [[0.3, -0.1], [0.2, 0.4]], b = [0.05, -0.05], phi = [1, 2], y = 1.
        let model = Model::softmax_regression(2, 2);
        let x: ParamVector = vec![0.3, -0.1, 0.2, 0.4, 0.05, -0.05].into();
        let batch = Batch::new(vec![1.0, 2.0], vec![1], 2).unwrap();
        let z0: f64 = 0.3 - 0.2 + 0.05;
        let z1: f64 = 0.2 + 0.8 - 0.05;
        let expected = (z0.exp() + z1.exp()).ln() - z1;
        let loss = model.loss(&x, &batch).unwrap();
        assert!((loss - expected).abs() < 1e-14);
    }

    #[test]
    fn linear_gradient_hand_computed() {
        let model = Model::linear_regression(1, 3);
        let batch = Batch::new(vec![1.0], vec![2], 1).unwrap();
        let grad = model.grad(&vec![0.0].into(), &batch).unwrap();
        assert_eq!(grad.as_slice(), &[-2.0]);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let cases = vec![
            Model::linear_regression(7, 4),
            Model::softmax_regression(4, 5),
            Model::mlp(5, 6, 4),
        ];
        let mut rng = SeededRng::for_purpose(11, StreamKind::DataGen);
        for model in cases {
            for _ in 0..100 {
                let n = rng.random_range(1..8);
                let batch = sample_batch(&mut rng, n, model.feature_dim, model.n_classes);
                let x = random_params(&mut rng, model.param_count());
                let analytic = model.grad(&x, &batch).unwrap();
                let numeric =
                    finite_diff_grad(|p| model.loss(p, &batch), &x, 1e-5).unwrap();
                let err = relative_error(&analytic, &numeric).unwrap();
                assert!(err < 1e-4, "{:?}: rel err {err}", model.kind);
            }
        }
    }

    #[test]
    fn batch_gradient_is_mean_of_sample_gradients() {
        let model = Model::softmax_regression(3, 4);
        let mut rng = SeededRng::for_purpose(5, StreamKind::DataGen);
        let batch = sample_batch(&mut rng, 9, 3, 4);
        let x = random_params(&mut rng, model.param_count());
        let full = model.grad(&x, &batch).unwrap();
        let mut acc = ParamVector::zeros(x.len());
        for i in 0..batch.len() {
            let g = model.grad(&x, &batch.single(i)).unwrap();
            acc = crate::math::vec_axpy(1.0, &g, &acc).unwrap();
        }
        let mean = acc.scale(1.0 / batch.len() as f64);
        for (a, b) in full.iter().zip(mean.iter()) {
            assert!((a - b).abs() < 1e-12 * batch.len() as f64);
        }
    }

    #[test]
    fn convexity_witness_linear_and_softmax() {
        let mut rng = SeededRng::for_purpose(17, StreamKind::DataGen);
        for model in [
            Model::linear_regression(4, 3),
            Model::softmax_regression(3, 3),
        ] {
            let batch = sample_batch(&mut rng, 12, model.feature_dim, model.n_classes);
            for _ in 0..50 {
                let x = random_params(&mut rng, model.param_count());
                let y = random_params(&mut rng, model.param_count());
                let lambda: f64 = rng.random_range(0.01..0.99);
                let mid = crate::math::vec_axpy(lambda, &x, &y.scale(1.0 - lambda)).unwrap();
                let lhs = model.loss(&mid, &batch).unwrap();
                let rhs = lambda * model.loss(&x, &batch).unwrap()
                    + (1.0 - lambda) * model.loss(&y, &batch).unwrap();
                assert!(lhs <= rhs + 1e-10);
            }
        }
    }

    #[test]
    fn prox_mu_zero_is_bitwise_inner() {
        let model = Model::softmax_regression(3, 3);
        let mut rng = SeededRng::for_purpose(23, StreamKind::DataGen);
        let batch = sample_batch(&mut rng, 5, 3, 3);
        let x = random_params(&mut rng, model.param_count());
        let anchor = random_params(&mut rng, model.param_count());
        let wrapper = ProximalWrapper::new(&model, 0.0, &anchor).unwrap();
        assert_eq!(
            wrapper.loss(&x, &batch).unwrap().to_bits(),
            model.loss(&x, &batch).unwrap().to_bits()
        );
        let wg = wrapper.grad(&x, &batch).unwrap();
        let ig = model.grad(&x, &batch).unwrap();
        for (a, b) in wg.iter().zip(ig.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn prox_at_anchor_adds_nothing() {
        let model = Model::softmax_regression(2, 2);
        let mut rng = SeededRng::for_purpose(29, StreamKind::DataGen);
        let batch = sample_batch(&mut rng, 4, 2, 2);
        let x = random_params(&mut rng, model.param_count());
        let wrapper = ProximalWrapper::new(&model, 3.7, &x).unwrap();
        assert!((wrapper.loss(&x, &batch).unwrap() - model.loss(&x, &batch).unwrap()).abs() < 1e-15);
        let wg = wrapper.grad(&x, &batch).unwrap();
        let ig = model.grad(&x, &batch).unwrap();
        for (a, b) in wg.iter().zip(ig.iter()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn prox_gradient_hand_computed() {
        // mu = 2, x - anchor = [1, 0], inner gradient forced to zero by an
        // interpolating parameter.
        let model = Model::linear_regression(2, 2);
        let batch = Batch::new(vec![0.0, 1.0], vec![1], 2).unwrap();
        let x: ParamVector = vec![1.0, 1.0].into();
        let anchor: ParamVector = vec![0.0, 1.0].into();
        let wrapper = ProximalWrapper::new(&model, 2.0, &anchor).unwrap();
        let g = wrapper.grad(&x, &batch).unwrap();
        assert_eq!(g.as_slice(), &[2.0, 0.0]);
    }

    #[test]
    fn prox_grad_difference_is_mu_times_drift() {
        let model = Model::softmax_regression(3, 4);
        let mut rng = SeededRng::for_purpose(31, StreamKind::DataGen);
        let batch = sample_batch(&mut rng, 6, 3, 4);
        for _ in 0..20 {
            let x = random_params(&mut rng, model.param_count());
            let anchor = random_params(&mut rng, model.param_count());
            let mu: f64 = rng.random_range(0.0..4.0);
            let wrapper = ProximalWrapper::new(&model, mu, &anchor).unwrap();
            let wg = wrapper.grad(&x, &batch).unwrap();
            let ig = model.grad(&x, &batch).unwrap();
            for j in 0..x.len() {
                let expected = ig[j] + mu * (x[j] - anchor[j]);
                assert_eq!(wg[j].to_bits(), expected.to_bits());
            }
        }
    }

    #[test]
    fn prox_rejects_negative_mu() {
        let model = Model::softmax_regression(2, 2);
        let anchor = ParamVector::zeros(model.param_count());
        assert!(ProximalWrapper::new(&model, -0.1, &anchor).is_err());
    }

    #[test]
    fn accuracy_tie_breaks_to_lowest_class() {
        let model = Model::softmax_regression(3, 10);
        let x = ParamVector::zeros(model.param_count());
        let batch = Batch::new(vec![0.5; 12], vec![0, 0, 0, 0], 3).unwrap();
        assert_eq!(model.accuracy(&x, &batch).unwrap(), 1.0);
    }

    #[test]
    fn accuracy_uniform_labels_at_zero_params() {
        let model = Model::softmax_regression(2, 10);
        let x = ParamVector::zeros(model.param_count());
        let n = 1000;
        let labels: Vec<usize> = (0..n).map(|i| i % 10).collect();
        let class0 = labels.iter().filter(|&&l| l == 0).count() as f64 / n as f64;
        let batch = Batch::new(vec![0.1; 2 * n], labels, 2).unwrap();
        assert_eq!(model.accuracy(&x, &batch).unwrap(), class0);
    }

    #[test]
    fn accuracy_rejects_regression() {
        let model = Model::linear_regression(2, 2);
        let batch = Batch::new(vec![1.0, 0.0], vec![1], 2).unwrap();
        assert!(matches!(
            model.accuracy(&ParamVector::zeros(2), &batch),
            Err(Error::UnsupportedModel(_))
        ));
    }

    #[test]
    fn perfect_separation_scores_one() {
        // Two opposite clusters, weights pointing at the centroids.
        let model = Model::softmax_regression(2, 2);
        let batch = Batch::new(
            vec![1.0, 0.9, 1.1, 1.0, -1.0, -0.9, -1.2, -1.0],
            vec![0, 0, 1, 1],
            2,
        )
        .unwrap();
        let x: ParamVector = vec![1.0, 1.0, -1.0, -1.0, 0.0, 0.0].into();
        assert_eq!(model.accuracy(&x, &batch).unwrap(), 1.0);
    }

    #[test]
    fn interpolating_minimizer_has_zero_gradient() {
        let model = Model::linear_regression(2, 5);
        // Labels generated by w* = [1.5, -0.5] on exactly representable rows.
        let w_star: ParamVector = vec![1.5, -0.5].into();
        let rows = [[2.0, 2.0], [4.0, 4.0]];
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for r in rows {
            features.extend(r);
            labels.push((1.5 * r[0] - 0.5 * r[1]) as usize);
        }
        let batch = Batch::new(features, labels, 2).unwrap();
        let g = model.grad(&w_star, &batch).unwrap();
        for v in g.iter() {
            assert!(v.abs() < 1e-10);
        }
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let model = Model::softmax_regression(3, 4);
        let batch = Batch::new(vec![0.0; 3], vec![1], 3).unwrap();
        let bad = ParamVector::zeros(7);
        assert!(matches!(
            model.loss(&bad, &batch),
            Err(Error::Dimension { .. })
        ));
    }
}
