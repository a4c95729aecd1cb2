//! Serial training loop and the pieces shared with the data-parallel trainer.

use std::sync::Arc;
use std::time::{Duration, Instant};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::autodiff::Graph;
use crate::error::{Error, Result};
use crate::metrics::{assemble_loss, relative_gap, relative_l2_error, LossReport, LossWeights};
use crate::model::{flatten_nodes, glorot_init, predict, Activation, MlpParams};
use crate::optim::{adam_step, AdamConfig, AdamState};
use crate::problems::{exact_laplace, ProblemKind, ProblemSpec};
use crate::reference::ReferenceGrid;
use crate::sampling::TrainingSet;

/// Loss value and flat parameter gradient at one parameter point.
pub fn loss_and_grad(
    params: &MlpParams,
    spec: &ProblemSpec,
    set: &TrainingSet,
    omega: &LossWeights,
    activation: Activation,
) -> Result<(LossReport, Vec<f64>)> {
    let mut graph = Graph::new();
    let bound = params.bind(&mut graph, activation)?;
    let loss = assemble_loss(&bound, spec, set, omega, &mut graph)?;
    let ids = bound.nodes();
    let grads = graph.grad(loss.total, &ids)?;
    let (total, components) = loss.values(&graph)?;
    Ok((
        LossReport::new(total, components),
        flatten_nodes(&graph, &grads),
    ))
}

/// Loss value only; no parameter gradient is built.
pub fn evaluate_loss(
    params: &MlpParams,
    spec: &ProblemSpec,
    set: &TrainingSet,
    omega: &LossWeights,
    activation: Activation,
) -> Result<LossReport> {
    let mut graph = Graph::new();
    let bound = params.bind(&mut graph, activation)?;
    let loss = assemble_loss(&bound, spec, set, omega, &mut graph)?;
    let (total, components) = loss.values(&graph)?;
    Ok(LossReport::new(total, components))
}

/// Ground truth used for the relative L2 error.
#[derive(Clone, Debug)]
pub enum ExactSolution {
    /// `sin(πx)`.
    Laplace,
    /// Bilinear interpolation of a precomputed grid; output columns (Re, Im).
    Reference(Arc<ReferenceGrid>),
}

impl ExactSolution {
    pub fn for_problem(kind: ProblemKind, reference: Option<Arc<ReferenceGrid>>) -> Result<Self> {
        match kind {
            ProblemKind::Laplace1d | ProblemKind::Laplace1dInverse => Ok(ExactSolution::Laplace),
            ProblemKind::Schrodinger1d => reference
                .map(ExactSolution::Reference)
                .ok_or_else(|| Error::invalid("the Schrödinger problem needs a reference grid")),
        }
    }

    pub fn values(&self, x: &Array2<f64>) -> Array2<f64> {
        match self {
            ExactSolution::Laplace => exact_laplace(x),
            ExactSolution::Reference(grid) => {
                let mut out = Array2::zeros((x.nrows(), 2));
                for i in 0..x.nrows() {
                    let z = grid.interpolate(x[[i, 0]], x[[i, 1]]);
                    out[[i, 0]] = z.re;
                    out[[i, 1]] = z.im;
                }
                out
            }
        }
    }
}

/// Held-out loss and error of a parameter point.
#[derive(Clone, Debug)]
pub struct Evaluator {
    pub spec: ProblemSpec,
    pub test_set: TrainingSet,
    pub exact: ExactSolution,
    pub omega: LossWeights,
    pub activation: Activation,
    exact_values: Array2<f64>,
}

impl Evaluator {
    pub fn new(
        spec: ProblemSpec,
        test_set: TrainingSet,
        exact: ExactSolution,
        omega: LossWeights,
        activation: Activation,
    ) -> Self {
        let exact_values = exact.values(&test_set.f.points);
        Evaluator {
            spec,
            test_set,
            exact,
            omega,
            activation,
            exact_values,
        }
    }

    /// Relative L2 error over the interior test points.
    pub fn error(&self, params: &MlpParams) -> Result<f64> {
        let pred = predict(params, &self.test_set.f.points, self.activation)?;
        relative_l2_error(&pred, &self.exact_values)
    }

    pub fn test_loss(&self, params: &MlpParams) -> Result<LossReport> {
        evaluate_loss(
            params,
            &self.spec,
            &self.test_set,
            &self.omega,
            self.activation,
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSettings {
    pub dims: Vec<usize>,
    pub activation: Activation,
    pub iterations: usize,
    pub adam: AdamConfig,
    pub omega: LossWeights,
    /// Loss/error recording cadence in iterations.
    pub record_every: usize,
    /// Iterations per timing block (t⁵⁰⁰).
    pub timing_block: usize,
    /// Leading timing blocks discarded as warm-up.
    pub warmup_blocks: usize,
}

impl TrainSettings {
    /// `depth` hidden layers of `width` tanh units.
    pub fn new(spec: &ProblemSpec, width: usize, depth: usize, iterations: usize, lr: f64) -> Self {
        let mut dims = vec![spec.input_dim];
        dims.extend(std::iter::repeat_n(width, depth));
        dims.push(spec.output_dim);
        TrainSettings {
            dims,
            activation: Activation::Tanh,
            iterations,
            adam: AdamConfig {
                lr,
                ..AdamConfig::default()
            },
            omega: LossWeights::default(),
            record_every: 100,
            timing_block: 500,
            warmup_blocks: 3,
        }
    }
}

/// Recorded trajectory: one entry per cadence point plus the final iterate.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub iteration: Vec<usize>,
    pub train_loss: Vec<f64>,
    pub test_loss: Vec<f64>,
    pub error: Vec<f64>,
    /// Trainable extras (e.g. λ) at each record.
    pub extras: Vec<Vec<f64>>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: MlpParams,
    pub history: History,
    pub final_train: LossReport,
    pub final_error: f64,
    pub best_error: f64,
    /// Iteration with the lowest recorded training loss.
    pub best_iter: usize,
    pub train_loss_at_best: f64,
    pub test_loss_at_best: f64,
    /// `|L_test − L_train| / L_train` at `best_iter`.
    pub gap_rel: f64,
    /// Optimization wall time, excluding evaluation of records.
    pub total_time: Duration,
    /// Wall time of each full timing block.
    pub block_times: Vec<f64>,
}

impl TrainOutcome {
    /// Mean and standard deviation of block times after the warm-up discard.
    /// Falls back to all blocks when the run is shorter than the warm-up.
    pub fn block_stats(&self, warmup_blocks: usize) -> Option<(f64, f64)> {
        let kept = if self.block_times.len() > warmup_blocks {
            &self.block_times[warmup_blocks..]
        } else {
            &self.block_times[..]
        };
        if kept.is_empty() {
            return None;
        }
        let n = kept.len() as f64;
        let mean = kept.iter().sum::<f64>() / n;
        let var = kept.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / n;
        Some((mean, var.sqrt()))
    }
}

/// Training loop shared by the serial and per-rank trainers.
///
/// `compute(params, iteration)` returns the loss report and flat gradient the
/// update uses; it is called `iterations + 1` times, the last time only to
/// record the final iterate. `eval` adds test loss and error to the records.
pub(crate) fn optimize<F>(
    params: &mut MlpParams,
    adam: &mut AdamState,
    settings: &TrainSettings,
    eval: Option<&Evaluator>,
    mut compute: F,
) -> Result<TrainOutcome>
where
    F: FnMut(&MlpParams, usize) -> Result<(LossReport, Vec<f64>)>,
{
    if settings.record_every == 0 || settings.timing_block == 0 {
        return Err(Error::invalid(
            "record and timing cadences must be positive",
        ));
    }
    let mut history = History::default();
    let mut flat = params.flatten();
    let mut total = Duration::ZERO;
    let mut block_start = Duration::ZERO;
    let mut block_times = Vec::new();
    let mut final_train = LossReport::default();

    for k in 0..=settings.iterations {
        let started = Instant::now();
        let (report, grad) = match compute(params, k) {
            Ok(v) => v,
            Err(Error::NonFinite(_)) => return Err(Error::Diverged(k)),
            Err(e) => return Err(e),
        };
        if !report.total.is_finite() {
            return Err(Error::Diverged(k));
        }
        total += started.elapsed();

        let last = k == settings.iterations;
        if k % settings.record_every == 0 || last {
            history.iteration.push(k);
            history.train_loss.push(report.total);
            history
                .extras
                .push(params.extras().iter().map(|&(_, v)| v).collect());
            if let Some(ev) = eval {
                history.test_loss.push(ev.test_loss(params)?.total);
                history.error.push(ev.error(params)?);
            }
        }
        if last {
            final_train = report;
            break;
        }

        let started = Instant::now();
        adam_step(&mut flat, &grad, adam).map_err(|e| match e {
            Error::NonFinite(_) => Error::Diverged(k),
            e => e,
        })?;
        params.unflatten(&flat)?;
        total += started.elapsed();
        if (k + 1) % settings.timing_block == 0 {
            block_times.push((total - block_start).as_secs_f64());
            block_start = total;
        }
    }

    summarize(params.clone(), history, final_train, total, block_times)
}

fn summarize(
    params: MlpParams,
    history: History,
    final_train: LossReport,
    total: Duration,
    block_times: Vec<f64>,
) -> Result<TrainOutcome> {
    let best = history
        .train_loss
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .ok_or_else(|| Error::invalid("empty history"))?;
    let test_at_best = history.test_loss.get(best).copied().unwrap_or(f64::NAN);
    let train_at_best = history.train_loss[best];
    Ok(TrainOutcome {
        params,
        final_train,
        final_error: history.error.last().copied().unwrap_or(f64::NAN),
        best_error: history.error.iter().copied().fold(f64::INFINITY, f64::min),
        best_iter: history.iteration[best],
        train_loss_at_best: train_at_best,
        test_loss_at_best: test_at_best,
        gap_rel: relative_gap(train_at_best, test_at_best),
        total_time: total,
        block_times,
        history,
    })
}

/// Trains one model on one process.
pub fn train_serial(
    spec: &ProblemSpec,
    settings: &TrainSettings,
    seed: u64,
    train_set: &TrainingSet,
    eval: Option<&Evaluator>,
) -> Result<TrainOutcome> {
    let mut params = glorot_init(&settings.dims, &spec.extras(), seed)?;
    let mut adam = AdamState::new(params.len(), settings.adam);
    optimize(&mut params, &mut adam, settings, eval, |p, _| {
        loss_and_grad(p, spec, train_set, &settings.omega, settings.activation)
    })
}
