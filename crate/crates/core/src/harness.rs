//! Experiments: h-analysis sweeps, scaling studies, quadrature-rate studies
//! and the files they leave behind.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{classify_regime, median, pointsec, Regime, RegimeThresholds, SizeSummary};
use crate::model::MlpParams;
use crate::parallel::{
    efficiency_speedup, shard_strong, shard_weak, train_distributed, ScalingMode,
};
use crate::problems::{Domain, ProblemKind, ProblemSpec};
use crate::reference::{schrodinger_reference, ReferenceGrid, DEFAULT_DT};
use crate::sampling::{
    build_test_set, build_training_set, lhs_with, rng_stream, uniform_with, ComponentSet, Counts,
    Stream, TrainingSet,
};
use crate::train::{
    evaluate_loss, train_serial, Evaluator, ExactSolution, History, TrainOutcome, TrainSettings,
};

/// Spatial points of the Schrödinger reference grid.
pub const REFERENCE_NX: usize = 256;
/// Stored time slices of the Schrödinger reference grid.
pub const REFERENCE_NT: usize = 201;

/// Column order of `sweep.csv`.
pub const SWEEP_COLUMNS: [&str; 22] = [
    "problem",
    "mode",
    "size",
    "N_f",
    "N_g",
    "N_h",
    "M",
    "seed",
    "iterations",
    "lr",
    "width",
    "depth",
    "error",
    "best_iter",
    "loss_train",
    "loss_test",
    "gap_rel",
    "time_total_s",
    "t500_mean",
    "t500_std",
    "pointsec",
    "regime",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunMode {
    /// One process, no ring.
    Serial,
    Weak,
    Strong,
}

impl RunMode {
    pub fn as_str(self) -> &'static str {
        match self {
            RunMode::Serial => "serial",
            RunMode::Weak => "weak",
            RunMode::Strong => "strong",
        }
    }
}

impl From<ScalingMode> for RunMode {
    fn from(m: ScalingMode) -> Self {
        match m {
            ScalingMode::Weak => RunMode::Weak,
            ScalingMode::Strong => RunMode::Strong,
        }
    }
}

/// Everything recorded about one training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub problem: ProblemKind,
    pub mode: RunMode,
    pub size: usize,
    /// Global cardinalities (summed over ranks).
    pub counts: Counts,
    pub seed: u64,
    pub settings: TrainSettings,
    /// Relative L2 error of the final iterate.
    #[serde(with = "nan_as_null")]
    pub error: f64,
    /// Lowest recorded error.
    #[serde(with = "nan_as_null")]
    pub best_error: f64,
    pub best_iter: usize,
    #[serde(with = "nan_as_null")]
    pub loss_train: f64,
    #[serde(with = "nan_as_null")]
    pub loss_test: f64,
    #[serde(with = "nan_as_null")]
    pub gap_rel: f64,
    pub time_total_s: f64,
    pub t500_mean: Option<f64>,
    pub t500_std: Option<f64>,
    pub pointsec: f64,
    /// `(E_ff, S_up)` against the size-1 run of the same study and seed.
    pub efficiency: Option<(f64, f64)>,
    /// Final trainable extras such as the inverse-problem λ.
    pub extras: Vec<(String, f64)>,
    pub history: History,
    /// Set when training diverged; numeric fields are then NaN.
    pub failure: Option<String>,
    pub regime: Option<Regime>,
}

impl RunRecord {
    pub fn width(&self) -> usize {
        self.settings.dims.get(1).copied().unwrap_or(0)
    }

    pub fn depth(&self) -> usize {
        self.settings.dims.len().saturating_sub(2)
    }

    pub fn failed(&self) -> bool {
        self.failure.is_some()
    }

    fn from_outcome(
        problem: ProblemKind,
        mode: RunMode,
        size: usize,
        counts: Counts,
        seed: u64,
        settings: &TrainSettings,
        outcome: &TrainOutcome,
    ) -> Result<RunRecord> {
        let total = outcome.total_time.as_secs_f64();
        let stats = outcome.block_stats(settings.warmup_blocks);
        let rate = match stats {
            Some((mean, _)) if mean > 0.0 => pointsec(settings.timing_block, counts.n_f, mean)?,
            _ if total > 0.0 => pointsec(settings.iterations, counts.n_f, total)?,
            _ => 0.0,
        };
        Ok(RunRecord {
            problem,
            mode,
            size,
            counts,
            seed,
            settings: settings.clone(),
            error: outcome.final_error,
            best_error: outcome.best_error,
            best_iter: outcome.best_iter,
            loss_train: outcome.train_loss_at_best,
            loss_test: outcome.test_loss_at_best,
            gap_rel: outcome.gap_rel,
            time_total_s: total,
            t500_mean: stats.map(|s| s.0),
            t500_std: stats.map(|s| s.1),
            pointsec: rate,
            efficiency: None,
            extras: outcome.params.extras().to_vec(),
            history: outcome.history.clone(),
            failure: None,
            regime: None,
        })
    }

    fn failure(
        problem: ProblemKind,
        mode: RunMode,
        size: usize,
        counts: Counts,
        seed: u64,
        settings: &TrainSettings,
        err: &Error,
    ) -> RunRecord {
        RunRecord {
            problem,
            mode,
            size,
            counts,
            seed,
            settings: settings.clone(),
            error: f64::NAN,
            best_error: f64::NAN,
            best_iter: 0,
            loss_train: f64::NAN,
            loss_test: f64::NAN,
            gap_rel: f64::NAN,
            time_total_s: 0.0,
            t500_mean: None,
            t500_std: None,
            pointsec: 0.0,
            efficiency: None,
            extras: Vec::new(),
            history: History::default(),
            failure: Some(err.to_string()),
            regime: None,
        }
    }

    pub fn to_row(&self) -> SweepRow {
        SweepRow {
            problem: self.problem.as_str().to_string(),
            mode: self.mode.as_str().to_string(),
            size: self.size,
            n_f: self.counts.n_f,
            n_g: self.counts.n_g,
            n_h: self.counts.n_h,
            m: self.counts.m,
            seed: self.seed,
            iterations: self.settings.iterations,
            lr: self.settings.adam.lr,
            width: self.width(),
            depth: self.depth(),
            error: self.error,
            best_iter: self.best_iter,
            loss_train: self.loss_train,
            loss_test: self.loss_test,
            gap_rel: self.gap_rel,
            time_total_s: self.time_total_s,
            t500_mean: self.t500_mean,
            t500_std: self.t500_std,
            pointsec: self.pointsec,
            regime: self
                .regime
                .map(|r| r.as_str().to_string())
                .unwrap_or_default(),
        }
    }
}

/// JSON has no NaN; failed runs store null.
mod nan_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_nan() {
            s.serialize_none()
        } else {
            s.serialize_f64(*v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
    }
}

/// One line of `sweep.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub problem: String,
    pub mode: String,
    pub size: usize,
    #[serde(rename = "N_f")]
    pub n_f: usize,
    #[serde(rename = "N_g")]
    pub n_g: usize,
    #[serde(rename = "N_h")]
    pub n_h: usize,
    #[serde(rename = "M")]
    pub m: usize,
    pub seed: u64,
    pub iterations: usize,
    pub lr: f64,
    pub width: usize,
    pub depth: usize,
    pub error: f64,
    pub best_iter: usize,
    pub loss_train: f64,
    pub loss_test: f64,
    pub gap_rel: f64,
    pub time_total_s: f64,
    pub t500_mean: Option<f64>,
    pub t500_std: Option<f64>,
    pub pointsec: f64,
    pub regime: String,
}

/// Reference field on the default grid.
pub fn reference_grid() -> Result<ReferenceGrid> {
    schrodinger_reference(REFERENCE_NX, REFERENCE_NT, DEFAULT_DT)
}

/// Shared inputs of every run in a study.
#[derive(Clone, Debug)]
pub struct Study {
    pub spec: ProblemSpec,
    pub settings: TrainSettings,
    /// Cardinalities of the non-interior components; `n_f` is replaced per run.
    pub counts: Counts,
    /// Needed for Schrödinger errors.
    pub reference: Option<Arc<ReferenceGrid>>,
}

impl Study {
    /// A study whose Schrödinger reference is computed on demand.
    pub fn new(spec: ProblemSpec, settings: TrainSettings, counts: Counts) -> Result<Study> {
        let reference = match spec.kind {
            ProblemKind::Schrodinger1d => Some(Arc::new(reference_grid()?)),
            _ => None,
        };
        Ok(Study {
            spec,
            settings,
            counts,
            reference,
        })
    }

    pub fn evaluator(&self, counts: Counts, seed: u64) -> Result<Evaluator> {
        let test = build_test_set(&self.spec, counts, seed)?;
        let exact = ExactSolution::for_problem(self.spec.kind, self.reference.clone())?;
        Ok(Evaluator::new(
            self.spec.clone(),
            test,
            exact,
            self.settings.omega,
            self.settings.activation,
        ))
    }

    /// Trains one serial model on `n_f` interior points.
    pub fn run_serial(&self, n_f: usize, seed: u64) -> Result<(RunRecord, Option<MlpParams>)> {
        let counts = Counts { n_f, ..self.counts };
        let set = build_training_set(&self.spec, counts, seed)?;
        let eval = self.evaluator(counts, seed)?;
        let kind = self.spec.kind;
        match train_serial(&self.spec, &self.settings, seed, &set, Some(&eval)) {
            Ok(outcome) => {
                let rec = RunRecord::from_outcome(
                    kind,
                    RunMode::Serial,
                    1,
                    counts,
                    seed,
                    &self.settings,
                    &outcome,
                )?;
                Ok((rec, Some(outcome.params)))
            }
            Err(e @ Error::Diverged(_)) => Ok((
                RunRecord::failure(kind, RunMode::Serial, 1, counts, seed, &self.settings, &e),
                None,
            )),
            Err(e) => Err(e),
        }
    }

    /// Trains one data-parallel model. Weak: `n` points per rank. Strong: `n`
    /// points in total.
    pub fn run_distributed(
        &self,
        mode: ScalingMode,
        size: usize,
        n: usize,
        seed: u64,
        log_dir: Option<&Path>,
    ) -> Result<(RunRecord, Option<MlpParams>)> {
        let per_rank = Counts {
            n_f: n,
            ..self.counts
        };
        let (shards, global) = match mode {
            ScalingMode::Weak => {
                let shards = shard_weak(&self.spec, per_rank, size, seed)?;
                let global = Counts {
                    n_f: n * size,
                    n_g: self.counts.n_g * size,
                    n_h: self.counts.n_h * size,
                    m: self.counts.m * size,
                };
                (shards, global)
            }
            ScalingMode::Strong => {
                let set = build_training_set(&self.spec, per_rank, seed)?;
                (shard_strong(&set, size)?, per_rank)
            }
        };
        // The global test set has the interior cardinality of the union.
        let eval = self.evaluator(
            Counts {
                n_f: global.n_f,
                ..self.counts
            },
            seed,
        )?;
        let kind = self.spec.kind;
        let result = train_distributed(
            &self.spec,
            &self.settings,
            seed,
            shards,
            Some(&eval),
            log_dir,
        );
        match result {
            Ok(run) => {
                let rec = RunRecord::from_outcome(
                    kind,
                    mode.into(),
                    size,
                    global,
                    seed,
                    &self.settings,
                    run.root(),
                )?;
                let params = run.outcomes.into_iter().next().map(|o| o.params);
                Ok((rec, params))
            }
            Err(e @ (Error::Diverged(_) | Error::ReplicaDivergence(_))) => Ok((
                RunRecord::failure(kind, mode.into(), size, global, seed, &self.settings, &e),
                None,
            )),
            Err(e) => Err(e),
        }
    }
}

/// One serial model per `(N, seed)` followed by regime labelling.
///
/// Diverged runs are kept as failed records. `progress` sees each record as
/// it completes (before labelling).
pub fn run_h_sweep(
    study: &Study,
    n_list: &[usize],
    seeds: &[u64],
    thresholds: &RegimeThresholds,
    progress: &mut dyn FnMut(&RunRecord),
) -> Result<Vec<RunRecord>> {
    if n_list.is_empty() || seeds.is_empty() {
        return Err(Error::invalid(
            "a sweep needs at least one size and one seed",
        ));
    }
    let mut records = Vec::with_capacity(n_list.len() * seeds.len());
    for &n in n_list {
        for &seed in seeds {
            let (rec, _) = study.run_serial(n, seed)?;
            progress(&rec);
            records.push(rec);
        }
    }
    label_regimes(&mut records, thresholds)?;
    Ok(records)
}

/// Per-size error and gap summaries of the serial records.
pub fn summarize_sizes(records: &[RunRecord]) -> Vec<SizeSummary> {
    let mut by_n: BTreeMap<usize, SizeSummary> = BTreeMap::new();
    for r in records.iter().filter(|r| r.mode == RunMode::Serial) {
        let s = by_n.entry(r.counts.n_f).or_insert_with(|| SizeSummary {
            n: r.counts.n_f,
            errors: Vec::new(),
            gaps: Vec::new(),
        });
        // a failed run never learned anything
        s.errors.push(if r.failed() { 1.0 } else { r.error });
        s.gaps.push(r.gap_rel);
    }
    by_n.into_values().collect()
}

/// Attaches regime labels to the serial records. Returns the label per size.
pub fn label_regimes(
    records: &mut [RunRecord],
    thresholds: &RegimeThresholds,
) -> Result<Vec<(usize, Regime)>> {
    let summaries = summarize_sizes(records);
    if summaries.is_empty() {
        return Ok(Vec::new());
    }
    let labels = classify_regime(&summaries, thresholds)?;
    let lookup: BTreeMap<usize, Regime> = labels.iter().copied().collect();
    for r in records.iter_mut().filter(|r| r.mode == RunMode::Serial) {
        r.regime = lookup.get(&r.counts.n_f).copied();
    }
    Ok(labels)
}

/// Distributed runs at each size plus their serial baselines.
///
/// Weak: `n` points per rank, baseline at `size·n` serial points. Strong:
/// `n` points in total split over the ranks, baseline at `n`. Efficiency
/// and speed-up are filled in against the size-1 run of the same seed when
/// the study includes size 1.
pub fn run_scaling(
    study: &Study,
    mode: ScalingMode,
    sizes: &[usize],
    n: usize,
    seeds: &[u64],
    log_root: Option<&Path>,
    progress: &mut dyn FnMut(&RunRecord),
) -> Result<Vec<RunRecord>> {
    if sizes.is_empty() || seeds.is_empty() {
        return Err(Error::invalid(
            "a scaling study needs at least one size and one seed",
        ));
    }
    let mut records = Vec::new();
    let mut baselines: BTreeMap<(usize, u64), ()> = BTreeMap::new();
    for &seed in seeds {
        let mut per_size = Vec::new();
        for &size in sizes {
            let log_dir = match log_root {
                Some(root) => {
                    let dir = root.join(format!("{mode}_size{size}_seed{seed}"));
                    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
                    Some(dir)
                }
                None => None,
            };
            let (rec, _) = study.run_distributed(mode, size, n, seed, log_dir.as_deref())?;
            progress(&rec);
            per_size.push(rec);

            let serial_n = match mode {
                ScalingMode::Weak => n * size,
                ScalingMode::Strong => n,
            };
            if baselines.insert((serial_n, seed), ()).is_none() {
                let (base, _) = study.run_serial(serial_n, seed)?;
                progress(&base);
                records.push(base);
            }
        }
        let t1 = per_size
            .iter()
            .find(|r| r.size == 1 && !r.failed())
            .map(block_time);
        if let Some(t1) = t1 {
            for r in per_size.iter_mut().filter(|r| !r.failed()) {
                r.efficiency = Some(efficiency_speedup(t1, block_time(r), r.size)?);
            }
        }
        records.extend(per_size);
    }
    Ok(records)
}

/// Timing used for efficiency: mean block time, or total time for short runs.
fn block_time(r: &RunRecord) -> f64 {
    r.t500_mean.unwrap_or(r.time_total_s)
}

/// How the quadrature nodes of a rate study are drawn.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sampler {
    Uniform,
    Lhs,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateStudy {
    pub n: Vec<usize>,
    /// Root-mean-square error over the repeats at each `n`.
    pub rms: Vec<f64>,
    /// Median absolute error over the repeats at each `n`.
    pub median_abs: Vec<f64>,
    /// Least-squares slope of `log rms` against `log n`; `None` when every
    /// error is zero (the rule is exact for the integrand).
    pub slope: Option<f64>,
}

impl RateStudy {
    fn from_errors(n_list: &[usize], errors: Vec<Vec<f64>>) -> Result<RateStudy> {
        let rms: Vec<f64> = errors
            .iter()
            .map(|e| (e.iter().map(|x| x * x).sum::<f64>() / e.len() as f64).sqrt())
            .collect();
        let median_abs = errors
            .iter()
            .map(|e| {
                let abs: Vec<f64> = e.iter().map(|x| x.abs()).collect();
                median(&abs).unwrap_or(f64::NAN)
            })
            .collect();
        let slope = if rms.iter().all(|&r| r == 0.0) {
            None
        } else if rms.contains(&0.0) {
            return Err(Error::invalid(
                "some but not all quadrature errors vanish; no rate",
            ));
        } else {
            let x: Vec<f64> = n_list.iter().map(|&n| (n as f64).ln()).collect();
            let y: Vec<f64> = rms.iter().map(|r| r.ln()).collect();
            Some(log_log_slope(&x, &y))
        };
        Ok(RateStudy {
            n: n_list.to_vec(),
            rms,
            median_abs,
            slope,
        })
    }
}

fn log_log_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

fn check_rate_inputs(n_list: &[usize], repeats: usize) -> Result<()> {
    let mut distinct = n_list.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 2 || n_list.contains(&0) || repeats == 0 {
        return Err(Error::invalid(
            "a rate study needs two or more distinct positive sizes and at least one repeat",
        ));
    }
    Ok(())
}

/// Monte-Carlo error of `vol · mean g(xᵢ)` against `exact` on a 1D interval.
pub fn mc_rate_study(
    g: impl Fn(f64) -> f64,
    interval: (f64, f64),
    exact: f64,
    n_list: &[usize],
    repeats: usize,
    seed: u64,
    sampler: Sampler,
) -> Result<RateStudy> {
    check_rate_inputs(n_list, repeats)?;
    let domain = Domain::new(vec![interval.0], vec![interval.1])?;
    let volume = domain.volume();
    let mut rng = rng_stream(seed, Stream::Aux);
    let mut errors = Vec::with_capacity(n_list.len());
    for &n in n_list {
        let mut at_n = Vec::with_capacity(repeats);
        for _ in 0..repeats {
            let pts = match sampler {
                Sampler::Uniform => uniform_with(n, &domain, &mut rng)?,
                Sampler::Lhs => lhs_with(n, &domain, &mut rng)?,
            };
            let estimate = volume * pts.column(0).iter().map(|&x| g(x)).sum::<f64>() / n as f64;
            at_n.push(estimate - exact);
        }
        errors.push(at_n);
    }
    RateStudy::from_errors(n_list, errors)
}

/// Empirical train-test gap of fixed parameters: for each size, the RMS over
/// `repeats` of `ε_T − ε_V` between independently drawn uniform interior sets
/// (boundary terms shared).
pub fn gap_rate_study(
    spec: &ProblemSpec,
    params: &MlpParams,
    settings: &TrainSettings,
    n_list: &[usize],
    repeats: usize,
    seed: u64,
) -> Result<RateStudy> {
    check_rate_inputs(n_list, repeats)?;
    let mut rng = rng_stream(seed, Stream::Aux);
    let base = build_training_set(spec, Counts::defaults(spec.kind, 1), seed)?;
    let draw = |n: usize, rng: &mut rand_chacha::ChaCha20Rng| -> Result<TrainingSet> {
        let mut set = base.clone();
        set.f = ComponentSet::monte_carlo(uniform_with(n, &spec.domain, rng)?, None);
        Ok(set)
    };
    let mut errors = Vec::with_capacity(n_list.len());
    for &n in n_list {
        let mut at_n = Vec::with_capacity(repeats);
        for _ in 0..repeats {
            let train = draw(n, &mut rng)?;
            let test = draw(n, &mut rng)?;
            let et = evaluate_loss(params, spec, &train, &settings.omega, settings.activation)?;
            let ev = evaluate_loss(params, spec, &test, &settings.omega, settings.activation)?;
            at_n.push(et.eps_d - ev.eps_d);
        }
        errors.push(at_n);
    }
    RateStudy::from_errors(n_list, errors)
}

/// Identifier of a record in file names.
fn base_id(r: &RunRecord) -> String {
    format!(
        "{}_{}_s{}_n{}_seed{}",
        r.problem.as_str(),
        r.mode.as_str(),
        r.size,
        r.counts.n_f,
        r.seed
    )
}

/// Appends a row to `sweep.csv` (writing the header on creation), the loss
/// history to `losses_<id>.csv` and the full record to `run_<id>.json`.
/// An id already present in `dir` gets a numeric suffix.
pub fn persist_run(record: &RunRecord, dir: &Path) -> Result<String> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let base = base_id(record);
    let mut id = base.clone();
    let mut k = 1;
    while dir.join(format!("run_{id}.json")).exists() {
        id = format!("{base}-{k}");
        k += 1;
    }

    append_sweep_row(&dir.join("sweep.csv"), &record.to_row())?;

    let losses = dir.join(format!("losses_{id}.csv"));
    write_losses(&losses, record).map_err(|e| Error::io(&losses, e))?;

    let json = dir.join(format!("run_{id}.json"));
    let text =
        serde_json::to_string_pretty(record).map_err(|e| Error::format(&json, e.to_string()))?;
    fs::write(&json, text).map_err(|e| Error::io(&json, e))?;
    Ok(id)
}

fn append_sweep_row(path: &Path, row: &SweepRow) -> Result<()> {
    let fresh = !path.exists() || fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut w = csv::WriterBuilder::new()
        .has_headers(fresh)
        .from_writer(file);
    w.serialize(row)
        .and_then(|_| w.flush().map_err(Into::into))
        .map_err(|e| Error::format(path, e.to_string()))
}

fn write_losses(path: &Path, r: &RunRecord) -> std::io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let names: Vec<&str> = r.extras.iter().map(|(n, _)| n.as_str()).collect();
    write!(w, "iteration,loss_train,loss_test,error")?;
    for n in &names {
        write!(w, ",{n}")?;
    }
    writeln!(w)?;
    let h = &r.history;
    for (i, k) in h.iteration.iter().enumerate() {
        let cell = |v: Option<&f64>| v.map(|x| x.to_string()).unwrap_or_default();
        write!(
            w,
            "{k},{},{},{}",
            h.train_loss[i],
            cell(h.test_loss.get(i)),
            cell(h.error.get(i))
        )?;
        for v in h.extras.get(i).into_iter().flatten() {
            write!(w, ",{v}")?;
        }
        writeln!(w)?;
    }
    w.flush()
}

/// Rows of a `sweep.csv`, rejecting files whose header differs from
/// [`SWEEP_COLUMNS`].
pub fn read_sweep(path: &Path) -> Result<Vec<SweepRow>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::Reader::from_reader(file);
    let headers = rdr
        .headers()
        .map_err(|e| Error::format(path, e.to_string()))?
        .clone();
    if !headers.is_empty() && headers.iter().ne(SWEEP_COLUMNS.iter().copied()) {
        return Err(Error::format(
            path,
            format!(
                "unexpected header: {}",
                headers.iter().collect::<Vec<_>>().join(",")
            ),
        ));
    }
    rdr.deserialize()
        .map(|row| row.map_err(|e| Error::format(path, e.to_string())))
        .collect()
}

/// Reads `run_<id>.json`.
pub fn read_run(path: &Path) -> Result<RunRecord> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
}
