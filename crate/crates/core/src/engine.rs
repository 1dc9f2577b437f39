//! The federated loop: per-round client sampling, local training with any
//! client rule, and server-side aggregation (plain or weighted averaging, or
//! an Adam server driven by the pseudo-gradient).
//!
//! Rounds are synchronization barriers. Within a round clients are
//! independent: each owns its optimizer state and an RNG stream keyed by
//! (round, client id), so results do not depend on scheduling. Aggregation
//! always folds client results in ascending client-id order, which makes runs
//! bitwise reproducible even with the parallel executor.

use crate::analysis::{
    self, probe_assumption_constants, AssumptionEstimates, LyapunovInputs, LyapunovSnapshot,
};
use crate::data::{Dataset, SplitDataset};
use crate::error::{Error, Result};
use crate::math::{vec_norm, ParamVector};
use crate::models::{Batch, Model, ProximalWrapper};
use crate::optim::{adam_step, AdamState, ClientOptimizer, ClientRule, DeltaSgdParams};
use crate::partition::Partition;
use crate::rng::{SeededRng, StreamKind};
use rayon::prelude::*;
use std::time::Instant;

/// Server-side aggregation rule.
#[derive(Clone, Debug, PartialEq)]
pub enum ServerRule {
    FedAvg,
    FedAvgWeighted,
    FedAdam {
        eta: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
    },
}

impl ServerRule {
    pub fn name(&self) -> &'static str {
        match self {
            ServerRule::FedAvg => "fedavg",
            ServerRule::FedAvgWeighted => "fedavg-weighted",
            ServerRule::FedAdam { .. } => "fedadam",
        }
    }
}

/// Global model plus the Adam moments that exist only under the fedadam rule.
#[derive(Clone, Debug)]
pub struct ServerState {
    pub x: ParamVector,
    adam: Option<(AdamState, u32)>,
}

impl ServerState {
    pub fn new(x: ParamVector, rule: &ServerRule) -> Self {
        let adam = match rule {
            ServerRule::FedAdam { .. } => Some((AdamState::zeros(x.len()), 0)),
            _ => None,
        };
        ServerState { x, adam }
    }
}

/// Uniform subset of floor(p * m) distinct clients, freshly drawn each round.
pub fn sample_clients(m: usize, participation: f64, rng: &mut SeededRng) -> Vec<usize> {
    use rand::Rng;
    let k = ((participation * m as f64).floor() as usize).clamp(1, m);
    let mut pool: Vec<usize> = (0..m).collect();
    for i in 0..k {
        let j = rng.random_range(i..m);
        pool.swap(i, j);
    }
    let mut chosen = pool[..k].to_vec();
    chosen.sort_unstable();
    chosen
}

/// Weighted average sum(w_i x_i) / sum(w_i). Weights are normalized before
/// accumulation, so scaling every weight by the same factor leaves the result
/// bitwise unchanged; plain averaging passes all-ones weights.
pub fn fedavg_aggregate(params: &[ParamVector], weights: &[f64]) -> Result<ParamVector> {
    if params.is_empty() {
        return Err(Error::config("cannot aggregate an empty client set"));
    }
    if weights.len() != params.len() {
        return Err(Error::config(format!(
            "{} weights for {} parameter vectors",
            weights.len(),
            params.len()
        )));
    }
    let dim = params[0].len();
    for p in params {
        if p.len() != dim {
            return Err(Error::Dimension {
                context: "aggregate",
                expected: dim,
                got: p.len(),
            });
        }
    }
    let total: f64 = weights.iter().sum();
    if !(total.is_finite() && total > 0.0) || weights.iter().any(|w| *w < 0.0) {
        return Err(Error::config(
            "aggregation weights must be non-negative with positive sum",
        ));
    }
    let mut acc = ParamVector::zeros(dim);
    for (p, &w) in params.iter().zip(weights) {
        let share = w / total;
        for (a, v) in acc.0.iter_mut().zip(p.iter()) {
            *a += share * v;
        }
    }
    if !acc.is_finite() {
        return Err(Error::InvalidNumber {
            context: "aggregate",
        });
    }
    Ok(acc)
}

/// Adam update of the server model using the pseudo-gradient x - client_avg.
pub fn fedadam_aggregate(
    server: &mut ServerState,
    client_avg: &ParamVector,
    eta: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
) -> Result<()> {
    let (state, count) = server
        .adam
        .as_mut()
        .ok_or_else(|| Error::config("server was not initialized for fedadam"))?;
    let pseudo_grad = server.x.sub(client_avg)?;
    *count += 1;
    server.x = adam_step(state, &server.x, &pseudo_grad, eta, beta1, beta2, eps, *count)?;
    Ok(())
}

/// Per-local-step trace row.
#[derive(Clone, Debug)]
pub struct LocalStepTrace {
    pub loss: f64,
    pub eta: f64,
    pub branch_smooth: Option<f64>,
    pub branch_growth: Option<f64>,
    pub skipped: bool,
}

/// Result of one client's round of local training.
#[derive(Clone, Debug)]
pub struct LocalTrainOutput {
    pub params: ParamVector,
    pub steps: Vec<LocalStepTrace>,
    /// Step-size ratio after the final local step (delta-sgd only).
    pub theta: Option<f64>,
    /// (iterate, gradient) pairs when trajectory analysis is enabled.
    pub iterates: Option<Vec<(ParamVector, ParamVector)>>,
}

/// Run `epochs` passes of shuffled mini-batch steps from the broadcast
/// parameters. Optimizer state is created fresh here, so nothing carries
/// across rounds. With prox_mu set, the local objective is anchored to the
/// broadcast point.
#[allow(clippy::too_many_arguments)]
pub fn local_train(
    global: &ParamVector,
    model: &Model,
    data: &Dataset,
    indices: &[usize],
    rule: &ClientRule,
    epochs: usize,
    batch_size: usize,
    prox_mu: Option<f64>,
    round: usize,
    total_rounds: usize,
    client: usize,
    rng: &mut SeededRng,
    keep_iterates: bool,
) -> Result<LocalTrainOutput> {
    use rand::seq::SliceRandom;
    if indices.is_empty() {
        return Err(Error::config(format!("client {client} has no data")));
    }
    let wrapper = match prox_mu {
        Some(mu) => Some(ProximalWrapper::new(model, mu, global)?),
        None => None,
    };
    let mut optimizer = ClientOptimizer::fresh_round(rule, global.len(), round, total_rounds)?;
    let mut x = global.clone();
    let mut steps = Vec::new();
    let mut iterates: Option<Vec<(ParamVector, ParamVector)>> =
        keep_iterates.then(Vec::new);
    let mut shuffled = indices.to_vec();
    let mut step_index = 0usize;
    let diverged = |step: usize| Error::Divergence {
        round,
        client,
        step,
    };
    for _ in 0..epochs {
        shuffled.shuffle(rng);
        for chunk in shuffled.chunks(batch_size.max(1)) {
            let batch = data.batch_of(chunk)?;
            let (loss, grad) = match &wrapper {
                Some(w) => w.loss_and_grad(&x, &batch),
                None => model.loss_and_grad(&x, &batch),
            }
            .map_err(|e| match e {
                Error::InvalidNumber { .. } => diverged(step_index),
                other => other,
            })?;
            if let Some(trace) = iterates.as_mut() {
                trace.push((x.clone(), grad.clone()));
            }
            let outcome = optimizer.step(&x, loss, &grad).map_err(|e| match e {
                Error::InvalidNumber { .. } => diverged(step_index),
                other => other,
            })?;
            steps.push(LocalStepTrace {
                loss,
                eta: outcome.eta,
                branch_smooth: outcome.branch_smooth,
                branch_growth: outcome.branch_growth,
                skipped: outcome.skipped,
            });
            x = outcome.x_next;
            step_index += 1;
        }
    }
    Ok(LocalTrainOutput {
        params: x,
        theta: optimizer.theta(),
        steps,
        iterates,
    })
}

/// One metrics row, mirroring the metrics CSV schema.
#[derive(Clone, Debug)]
pub struct RoundRecord {
    pub round: usize,
    pub wall_ms: f64,
    pub train_loss: f64,
    pub test_loss: f64,
    pub test_acc: Option<f64>,
    pub grad_norm_sq: f64,
    pub eta_mean: f64,
    pub eta_max: f64,
    pub eta_min: f64,
    pub participating: usize,
}

/// One analysis row: potential terms plus running constant estimates.
#[derive(Clone, Debug)]
pub struct AnalysisRecord {
    pub round: usize,
    pub lyapunov: Option<LyapunovSnapshot>,
    pub smoothness: Option<f64>,
    pub sigma2: Option<f64>,
    pub grad_bound: Option<f64>,
    pub dissimilarity: Option<f64>,
    pub slope: Option<f64>,
}

/// One step-size trace row for the adaptive rule.
#[derive(Clone, Debug)]
pub struct StepTraceRow {
    pub round: usize,
    pub client: usize,
    pub local_step: usize,
    pub branch_smooth: Option<f64>,
    pub branch_growth: Option<f64>,
    pub eta: f64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum RunOutcome {
    Completed,
    Diverged {
        round: usize,
        client: usize,
        step: usize,
    },
}

#[derive(Clone, Debug, Default)]
pub struct AnalysisSettings {
    pub lyapunov: bool,
    pub x_star: Option<ParamVector>,
    pub constants: bool,
    pub step_trace: bool,
}

impl AnalysisSettings {
    pub fn any(&self) -> bool {
        self.lyapunov || self.constants
    }
}

#[derive(Clone, Debug)]
pub struct RunSettings {
    pub rounds: usize,
    pub participation: f64,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub server: ServerRule,
    pub client_rule: ClientRule,
    pub prox_mu: Option<f64>,
    pub seed: u64,
    pub parallel: bool,
    pub eval_every: usize,
    pub timing: bool,
    /// Starting parameters; the model's default initialization when absent.
    pub init_params: Option<ParamVector>,
    /// Rescale the adaptive rule's amplifier to gamma / (K sqrt(T)), the
    /// schedule under which the nonconvex rate analysis holds. Off by
    /// default; experiments run the fixed amplifier.
    pub gamma_theory_schedule: bool,
    pub analysis: AnalysisSettings,
}

pub struct RunOutput {
    pub records: Vec<RoundRecord>,
    pub analysis: Vec<AnalysisRecord>,
    pub step_trace: Vec<StepTraceRow>,
    pub final_params: ParamVector,
    pub estimates: AssumptionEstimates,
    pub outcome: RunOutcome,
}

fn validate_settings(
    settings: &RunSettings,
    partition: &Partition,
    split: &SplitDataset,
) -> Result<()> {
    let m = partition.n_clients();
    if m == 0 {
        return Err(Error::config("need at least one client"));
    }
    if !(settings.participation > 0.0 && settings.participation <= 1.0) {
        return Err(Error::config(format!(
            "participation must be in (0, 1], got {}",
            settings.participation
        )));
    }
    if (settings.participation * m as f64).floor() < 1.0 {
        return Err(Error::config(
            "participation is too small: no client would be sampled",
        ));
    }
    if settings.batch_size == 0 {
        return Err(Error::config("batch_size must be >= 1"));
    }
    if settings.local_epochs == 0 {
        return Err(Error::config("local_epochs must be >= 1"));
    }
    if settings.eval_every == 0 {
        return Err(Error::config("eval_every must be >= 1"));
    }
    if let Some(mu) = settings.prox_mu {
        if mu < 0.0 || !mu.is_finite() {
            return Err(Error::config(format!("prox_mu must be >= 0, got {mu}")));
        }
    }
    settings.client_rule.validate()?;
    for (i, indices) in partition.client_indices().iter().enumerate() {
        if indices.is_empty() {
            return Err(Error::config(format!("client {i} holds no samples")));
        }
        if let Some(&bad) = indices.iter().find(|&&s| s >= split.train.len()) {
            return Err(Error::config(format!(
                "client {i} references sample {bad} beyond the training set"
            )));
        }
    }
    if settings.analysis.lyapunov {
        let largest = partition
            .client_indices()
            .iter()
            .map(Vec::len)
            .max()
            .unwrap_or(0);
        analysis::check_lyapunov_regime(
            settings.local_epochs,
            settings.batch_size,
            largest,
            settings.participation,
        )?;
        if settings.analysis.x_star.is_none() {
            return Err(Error::config(
                "lyapunov tracking needs a reference minimizer",
            ));
        }
    }
    Ok(())
}

/// Execute the full experiment. Per-round records accumulate even if a later
/// round diverges; the outcome field says how the run ended.
pub fn run_experiment(
    settings: &RunSettings,
    model: &Model,
    split: &SplitDataset,
    partition: &Partition,
) -> Result<RunOutput> {
    validate_settings(settings, partition, split)?;
    let m = partition.n_clients();
    let init = match &settings.init_params {
        Some(params) => {
            if params.len() != model.param_count() {
                return Err(Error::Dimension {
                    context: "initial parameters",
                    expected: model.param_count(),
                    got: params.len(),
                });
            }
            params.clone()
        }
        None => {
            let mut init_rng = SeededRng::for_purpose(settings.seed, StreamKind::ParamInit);
            model.init_params(&mut init_rng)
        }
    };
    let mut server = ServerState::new(init.clone(), &settings.server);

    let client_rule = match (&settings.client_rule, settings.gamma_theory_schedule) {
        (ClientRule::DeltaSgd(p), true) => {
            let largest = partition
                .client_indices()
                .iter()
                .map(Vec::len)
                .max()
                .unwrap_or(1);
            let steps_per_round =
                (settings.local_epochs * largest.div_ceil(settings.batch_size)).max(1);
            let gamma = p.gamma / (steps_per_round as f64 * (settings.rounds.max(1) as f64).sqrt());
            ClientRule::DeltaSgd(DeltaSgdParams { gamma, ..*p })
        }
        (rule, _) => rule.clone(),
    };

    let client_batches: Vec<Batch> = partition
        .client_indices()
        .iter()
        .map(|idx| split.train.batch_of(idx))
        .collect::<Result<_>>()?;
    let test_batch = split.test.full_batch()?;

    let keep_iterates = settings.analysis.constants;
    let mut records = Vec::new();
    let mut analysis_rows = Vec::new();
    let mut step_trace = Vec::new();
    let mut estimates = AssumptionEstimates::default();
    let mut outcome = RunOutcome::Completed;
    let mut grad_history: Vec<f64> = Vec::new();

    // Rolling window of full per-client results for the potential.
    let mut lyap_last: Vec<ParamVector> = vec![init.clone(); m];
    let mut lyap_before_last: Vec<ParamVector> = Vec::new();

    'rounds: for round in 0..settings.rounds {
        let clock = settings.timing.then(Instant::now);
        let mut sampling_rng =
            SeededRng::for_round_client(settings.seed, StreamKind::ClientSampling, round, 0);
        let selected = sample_clients(m, settings.participation, &mut sampling_rng);
        let broadcast = server.x.clone();

        let run_one = |&client: &usize| -> Result<(usize, LocalTrainOutput)> {
            let mut rng =
                SeededRng::for_round_client(settings.seed, StreamKind::Batching, round, client);
            let output = local_train(
                &broadcast,
                model,
                &split.train,
                partition.client(client),
                &client_rule,
                settings.local_epochs,
                settings.batch_size,
                settings.prox_mu,
                round,
                settings.rounds,
                client,
                &mut rng,
                keep_iterates,
            )?;
            Ok((client, output))
        };
        let raw: Vec<Result<(usize, LocalTrainOutput)>> = if settings.parallel {
            selected.par_iter().map(run_one).collect()
        } else {
            selected.iter().map(run_one).collect()
        };
        // Scan in canonical order so a multi-client failure reports the
        // lowest client id deterministically.
        let mut results = Vec::with_capacity(raw.len());
        for item in raw {
            match item {
                Ok(pair) => results.push(pair),
                Err(Error::Divergence {
                    round,
                    client,
                    step,
                }) => {
                    outcome = RunOutcome::Diverged {
                        round,
                        client,
                        step,
                    };
                    break 'rounds;
                }
                Err(other) => return Err(other),
            }
        }

        let params: Vec<ParamVector> = results.iter().map(|(_, o)| o.params.clone()).collect();
        let weights: Vec<f64> = match settings.server {
            ServerRule::FedAvgWeighted => results
                .iter()
                .map(|(c, _)| partition.client(*c).len() as f64)
                .collect(),
            _ => vec![1.0; results.len()],
        };
        let client_avg = fedavg_aggregate(&params, &weights)?;
        match settings.server {
            ServerRule::FedAvg | ServerRule::FedAvgWeighted => server.x = client_avg,
            ServerRule::FedAdam {
                eta,
                beta1,
                beta2,
                eps,
            } => fedadam_aggregate(&mut server, &client_avg, eta, beta1, beta2, eps)?,
        }

        // Step-size statistics over every local step this round.
        let mut eta_min = f64::INFINITY;
        let mut eta_max = f64::NEG_INFINITY;
        let mut eta_sum = 0.0;
        let mut eta_count = 0usize;
        for (client, output) in &results {
            for (k, step) in output.steps.iter().enumerate() {
                eta_min = eta_min.min(step.eta);
                eta_max = eta_max.max(step.eta);
                eta_sum += step.eta;
                eta_count += 1;
                if settings.analysis.step_trace {
                    step_trace.push(StepTraceRow {
                        round,
                        client: *client,
                        local_step: k,
                        branch_smooth: step.branch_smooth,
                        branch_growth: step.branch_growth,
                        eta: step.eta,
                    });
                }
            }
        }

        let mut lyapunov = None;
        if settings.analysis.lyapunov {
            // Full participation holds, so results cover clients 0..m in order.
            if round >= 1 {
                let eta: Vec<f64> = results
                    .iter()
                    .map(|(_, o)| o.steps.first().map_or(0.0, |s| s.eta))
                    .collect();
                let theta: Vec<f64> = results.iter().map(|(_, o)| o.theta.unwrap_or(1.0)).collect();
                let x_star = settings.analysis.x_star.as_ref().expect("validated");
                let inputs = LyapunovInputs {
                    round,
                    global: &broadcast,
                    client_curr: &lyap_last,
                    client_prev: &lyap_before_last,
                    eta: &eta,
                    theta: &theta,
                    x_star,
                };
                lyapunov = Some(lyapunov_eval(&inputs, model, &client_batches)?);
            }
            lyap_before_last = std::mem::replace(
                &mut lyap_last,
                results.iter().map(|(_, o)| o.params.clone()).collect(),
            );
        }

        if settings.analysis.constants {
            for (_, output) in &results {
                if let Some(trace) = &output.iterates {
                    if let Ok(l) = analysis::estimate_local_smoothness(trace) {
                        estimates.absorb_smoothness(l);
                    }
                }
            }
        }

        let is_eval = round % settings.eval_every == 0 || round + 1 == settings.rounds;
        if is_eval {
            let (train_loss, grad_norm_sq) =
                client_average_loss_grad(model, &server.x, &client_batches)?;
            let test_loss = model.loss(&server.x, &test_batch)?;
            let test_acc = match model.accuracy(&server.x, &test_batch) {
                Ok(acc) => Some(acc),
                Err(Error::UnsupportedModel(_)) => None,
                Err(e) => return Err(e),
            };
            grad_history.push(grad_norm_sq);
            if settings.analysis.constants {
                let probe = probe_assumption_constants(model, &split.train, partition, &server.x)?;
                estimates.absorb_probe(&probe);
            }
            let wall_ms = clock.map_or(0.0, |c| c.elapsed().as_secs_f64() * 1e3);
            records.push(RoundRecord {
                round,
                wall_ms,
                train_loss,
                test_loss,
                test_acc,
                grad_norm_sq,
                eta_mean: eta_sum / eta_count.max(1) as f64,
                eta_max: if eta_count == 0 { 0.0 } else { eta_max },
                eta_min: if eta_count == 0 { 0.0 } else { eta_min },
                participating: selected.len(),
            });
        }

        if settings.analysis.any() && (is_eval || lyapunov.is_some()) {
            let slope = if grad_history.len() >= 50 && grad_history.iter().all(|g| *g > 0.0) {
                analysis::convergence_slope(&grad_history).ok()
            } else {
                None
            };
            analysis_rows.push(AnalysisRecord {
                round,
                lyapunov,
                smoothness: estimates.smoothness,
                sigma2: settings.analysis.constants.then_some(estimates.sigma2),
                grad_bound: settings.analysis.constants.then_some(estimates.grad_bound),
                dissimilarity: estimates.dissimilarity,
                slope,
            });
        }
    }

    Ok(RunOutput {
        records,
        analysis: analysis_rows,
        step_trace,
        final_params: server.x,
        estimates,
        outcome,
    })
}

fn lyapunov_eval(
    inputs: &LyapunovInputs,
    model: &Model,
    client_batches: &[Batch],
) -> Result<LyapunovSnapshot> {
    analysis::lyapunov_value(inputs, |i, x| model.loss(x, &client_batches[i]))
}

/// Loss and squared gradient norm of the client-uniform average objective
/// f = (1/m) sum f_i at `x`.
pub fn client_average_loss_grad(
    model: &Model,
    x: &ParamVector,
    client_batches: &[Batch],
) -> Result<(f64, f64)> {
    let m = client_batches.len() as f64;
    let mut loss = 0.0;
    let mut grad = ParamVector::zeros(x.len());
    for batch in client_batches {
        let (l, g) = model.loss_and_grad(x, batch)?;
        loss += l / m;
        for (acc, v) in grad.0.iter_mut().zip(g.iter()) {
            *acc += v / m;
        }
    }
    let norm = vec_norm(&grad)?;
    Ok((loss, norm * norm))
}
