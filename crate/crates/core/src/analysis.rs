//! Convergence diagnostics: the three-term potential tracked on convex runs,
//! trajectory-based local-smoothness estimates, empirical bounds for the
//! variance/gradient/dissimilarity constants, and a log-log trend fit for the
//! gradient-norm decay.

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::math::{vec_norm, ParamVector};
use crate::models::Model;
use crate::optim::{delta_sgd_step, DeltaSgdParams, DeltaSgdState};
use crate::partition::Partition;

/// Pairs closer than this contribute no smoothness ratio.
const SMOOTHNESS_STEP_FLOOR: f64 = 1e-12;

/// Probes with a global gradient norm under this are skipped for the
/// dissimilarity ratio.
const DISSIMILARITY_GRAD_FLOOR: f64 = 1e-8;

/// One evaluation of the convex-run potential
/// V = ||x - x*||^2 + (1/2m) sum ||x^i - x_prev^i||^2
///      + (2/m) sum eta_i theta_i (f_i(x_prev^i) - f_i(x*)).
#[derive(Clone, Debug)]
pub struct LyapunovSnapshot {
    pub round: usize,
    pub value: f64,
    pub distance: f64,
    pub pairwise: f64,
    pub suboptimality: f64,
}

/// Inputs for one potential evaluation at round `round`.
pub struct LyapunovInputs<'a> {
    pub round: usize,
    /// Global parameters x_t.
    pub global: &'a ParamVector,
    /// Per-client iterates x_t^i.
    pub client_curr: &'a [ParamVector],
    /// Per-client iterates x_{t-1}^i.
    pub client_prev: &'a [ParamVector],
    /// Step sizes eta_t^i in use at round t.
    pub eta: &'a [f64],
    /// Step-size ratios theta_t^i at round t.
    pub theta: &'a [f64],
    /// Shared minimizer x*.
    pub x_star: &'a ParamVector,
}

/// Evaluate the potential. `client_loss(i, x)` must return f_i(x).
pub fn lyapunov_value<F>(inputs: &LyapunovInputs, client_loss: F) -> Result<LyapunovSnapshot>
where
    F: Fn(usize, &ParamVector) -> Result<f64>,
{
    let m = inputs.client_curr.len();
    if m == 0
        || inputs.client_prev.len() != m
        || inputs.eta.len() != m
        || inputs.theta.len() != m
    {
        return Err(Error::config(
            "lyapunov inputs must cover every client exactly once",
        ));
    }
    let distance = {
        let d = inputs.global.sub(inputs.x_star)?;
        let n = vec_norm(&d)?;
        n * n
    };
    let mut pairwise = 0.0;
    let mut suboptimality = 0.0;
    for i in 0..m {
        let d = inputs.client_curr[i].sub(&inputs.client_prev[i])?;
        let n = vec_norm(&d)?;
        pairwise += n * n;
        let gap = client_loss(i, &inputs.client_prev[i])? - client_loss(i, inputs.x_star)?;
        suboptimality += inputs.eta[i] * inputs.theta[i] * gap;
    }
    pairwise /= 2.0 * m as f64;
    suboptimality *= 2.0 / m as f64;
    let value = distance + pairwise + suboptimality;
    if !value.is_finite() {
        return Err(Error::InvalidNumber {
            context: "lyapunov value",
        });
    }
    Ok(LyapunovSnapshot {
        round: inputs.round,
        value,
        distance,
        pairwise,
        suboptimality,
    })
}

/// The potential is only meaningful for single-step, full-participation,
/// full-batch rounds; anything else is a configuration error.
pub fn check_lyapunov_regime(
    local_epochs: usize,
    batch_size: usize,
    largest_client: usize,
    participation: f64,
) -> Result<()> {
    if local_epochs != 1 {
        return Err(Error::config(
            "lyapunov tracking requires exactly one local epoch",
        ));
    }
    if batch_size < largest_client {
        return Err(Error::config(
            "lyapunov tracking requires full-batch local steps",
        ));
    }
    if participation < 1.0 {
        return Err(Error::config(
            "lyapunov tracking requires full client participation",
        ));
    }
    Ok(())
}

/// Largest ratio ||g_k - g_{k-1}|| / ||x_k - x_{k-1}|| over a trajectory of
/// (iterate, gradient) pairs. Pairs with negligible movement are skipped.
pub fn estimate_local_smoothness(trace: &[(ParamVector, ParamVector)]) -> Result<f64> {
    let mut best: Option<f64> = None;
    for window in trace.windows(2) {
        let (x_prev, g_prev) = &window[0];
        let (x_curr, g_curr) = &window[1];
        let dx = vec_norm(&x_curr.sub(x_prev)?)?;
        if dx < SMOOTHNESS_STEP_FLOOR {
            continue;
        }
        let dg = vec_norm(&g_curr.sub(g_prev)?)?;
        let ratio = dg / dx;
        best = Some(best.map_or(ratio, |b: f64| b.max(ratio)));
    }
    best.ok_or(Error::EstimateUnavailable(
        "no trajectory pairs moved far enough to price smoothness",
    ))
}

/// Empirical lower bounds for the variance, gradient-norm, and dissimilarity
/// constants. These are maxima over the probe set, so they can only grow as
/// probes are added; the true constants are suprema over all of R^d.
#[derive(Clone, Debug, Default)]
pub struct AssumptionEstimates {
    /// Bound on the per-sample gradient variance.
    pub sigma2: f64,
    /// Bound on per-client gradient norms.
    pub grad_bound: f64,
    /// Bound on ||grad f_i - grad f||^2 / ||grad f||^2, when measurable.
    pub dissimilarity: Option<f64>,
    /// Largest trajectory smoothness ratio observed, when any trace was fed.
    pub smoothness: Option<f64>,
}

impl AssumptionEstimates {
    pub fn absorb_probe(&mut self, probe: &ProbeStats) {
        self.sigma2 = self.sigma2.max(probe.sigma2);
        self.grad_bound = self.grad_bound.max(probe.grad_bound);
        if let Some(rho) = probe.dissimilarity {
            self.dissimilarity = Some(self.dissimilarity.map_or(rho, |r| r.max(rho)));
        }
    }

    pub fn absorb_smoothness(&mut self, estimate: f64) {
        self.smoothness = Some(self.smoothness.map_or(estimate, |s| s.max(estimate)));
    }

    /// Constants entering the sublinear rate bound, computed from the
    /// estimates: psi1 = max(sigma^2 / b, initial suboptimality) and
    /// psi2 = sigma^2 / b + G^2. Reported, never asserted.
    pub fn rate_constants(&self, batch_size: usize, initial_gap: f64) -> (f64, f64) {
        let variance_term = self.sigma2 / batch_size.max(1) as f64;
        (
            variance_term.max(initial_gap),
            variance_term + self.grad_bound * self.grad_bound,
        )
    }
}

/// Constants measured at one probe point.
#[derive(Clone, Debug)]
pub struct ProbeStats {
    pub sigma2: f64,
    pub grad_bound: f64,
    pub dissimilarity: Option<f64>,
}

/// Measure the assumption constants at a single parameter vector: per-sample
/// gradient variance and gradient norm per client, and each client's
/// deviation from the uniform-average gradient.
pub fn probe_assumption_constants(
    model: &Model,
    data: &Dataset,
    partition: &Partition,
    x: &ParamVector,
) -> Result<ProbeStats> {
    let m = partition.n_clients();
    if m == 0 {
        return Err(Error::config("partition has no clients"));
    }
    let mut client_grads = Vec::with_capacity(m);
    let mut sigma2: f64 = 0.0;
    for indices in partition.client_indices() {
        let batch = data.batch_of(indices)?;
        let g_full = model.grad(x, &batch)?;
        let mut variance = 0.0;
        for s in 0..batch.len() {
            let g_sample = model.grad(x, &batch.single(s))?;
            let d = g_sample.sub(&g_full)?;
            let n = vec_norm(&d)?;
            variance += n * n;
        }
        variance /= batch.len() as f64;
        sigma2 = sigma2.max(variance);
        client_grads.push(g_full);
    }
    let mut mean = ParamVector::zeros(x.len());
    for g in &client_grads {
        for (acc, v) in mean.0.iter_mut().zip(g.iter()) {
            *acc += v / m as f64;
        }
    }
    let mean_norm = vec_norm(&mean)?;
    let mut grad_bound: f64 = 0.0;
    let mut dissimilarity: Option<f64> = None;
    for g in &client_grads {
        grad_bound = grad_bound.max(vec_norm(g)?);
        if mean_norm >= DISSIMILARITY_GRAD_FLOOR {
            let dev = vec_norm(&g.sub(&mean)?)?;
            let rho = (dev * dev) / (mean_norm * mean_norm);
            dissimilarity = Some(dissimilarity.map_or(rho, |r| r.max(rho)));
        }
    }
    Ok(ProbeStats {
        sigma2,
        grad_bound,
        dissimilarity,
    })
}

/// Maxima over a probe set.
pub fn estimate_assumption_constants(
    model: &Model,
    data: &Dataset,
    partition: &Partition,
    probes: &[ParamVector],
) -> Result<AssumptionEstimates> {
    if probes.is_empty() {
        return Err(Error::config("need at least one probe point"));
    }
    let mut estimates = AssumptionEstimates::default();
    for x in probes {
        let probe = probe_assumption_constants(model, data, partition, x)?;
        estimates.absorb_probe(&probe);
    }
    Ok(estimates)
}

/// Least-squares slope of log(running mean of the values) against log(round)
/// over the second half of the sequence. A sequence decaying like 1/sqrt(t)
/// scores -0.5; a plateau scores 0.
pub fn convergence_slope(values: &[f64]) -> Result<f64> {
    if values.len() < 50 {
        return Err(Error::config(format!(
            "need at least 50 records for a trend fit, got {}",
            values.len()
        )));
    }
    if values.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(Error::config(
            "trend fit requires strictly positive values",
        ));
    }
    let mut running = Vec::with_capacity(values.len());
    let mut acc = 0.0;
    for (i, v) in values.iter().enumerate() {
        acc += v;
        running.push(acc / (i + 1) as f64);
    }
    let start = values.len() / 2;
    let points: Vec<(f64, f64)> = (start..values.len())
        .map(|i| (((i + 1) as f64).ln(), running[i].ln()))
        .collect();
    let n = points.len() as f64;
    let sx: f64 = points.iter().map(|(x, _)| x).sum();
    let sy: f64 = points.iter().map(|(_, y)| y).sum();
    let sxx: f64 = points.iter().map(|(x, _)| x * x).sum();
    let sxy: f64 = points.iter().map(|(x, y)| x * y).sum();
    let denom = n * sxx - sx * sx;
    if denom.abs() < 1e-30 {
        return Err(Error::config("degenerate abscissa in trend fit"));
    }
    Ok((n * sxy - sx * sy) / denom)
}

/// Full-batch adaptive descent (un-amplified curvature branch) until the
/// gradient norm drops below `tol`; used to pre-solve reference minimizers
/// for convex diagnostics.
pub fn reference_minimizer(
    model: &Model,
    data: &Dataset,
    tol: f64,
    max_iters: usize,
) -> Result<ParamVector> {
    let batch = data.full_batch()?;
    let mut x = ParamVector::zeros(model.param_count());
    let mut state = DeltaSgdState::new(DeltaSgdParams {
        gamma: 1.0,
        delta: 1.0,
        eta0: 0.05,
        theta0: 1.0,
    });
    for _ in 0..max_iters {
        let g = model.grad(&x, &batch)?;
        if vec_norm(&g)? < tol {
            break;
        }
        x = delta_sgd_step(&mut state, &x, &g)?.x_next;
    }
    Ok(x)
}
