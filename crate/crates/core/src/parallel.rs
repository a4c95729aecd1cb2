//! Data-parallel training over threads joined in a ring.
//!
//! Each rank owns its shard, a parameter replica and an optimizer replica.
//! The only communication is a pair of channels per rank (to the next rank,
//! from the previous one); gradients are combined with a segmented
//! ring-allreduce and averaged identically on every rank.

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::ops::Range;
use std::path::Path;
use std::str::FromStr;
use std::sync::mpsc::{channel, Receiver, Sender};
use std::thread;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{ComponentLosses, LossReport};
use crate::model::{glorot_init, MlpParams};
use crate::optim::AdamState;
use crate::problems::ProblemSpec;
use crate::sampling::{build_training_set, worker_seed, ComponentSet, Counts, TrainingSet};
use crate::train::{loss_and_grad, optimize, Evaluator, TrainOutcome, TrainSettings};

/// Largest tolerated max-norm disagreement between parameter replicas.
pub const REPLICA_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScalingMode {
    /// Fixed points per rank; the global set grows with the rank count.
    Weak,
    /// A fixed global set split across ranks.
    Strong,
}

impl ScalingMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ScalingMode::Weak => "weak",
            ScalingMode::Strong => "strong",
        }
    }
}

impl fmt::Display for ScalingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScalingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "weak" => Ok(ScalingMode::Weak),
            "strong" => Ok(ScalingMode::Strong),
            other => Err(Error::invalid(format!(
                "unknown scaling mode '{other}' (expected weak or strong)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    ScatterReduce,
    Allgather,
}

/// One segment travelling to the next rank.
#[derive(Clone, Debug, PartialEq)]
pub struct RingMsg {
    pub phase: Phase,
    pub step: usize,
    pub segment: usize,
    pub payload: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReduceOp {
    Sum,
    Max,
}

impl ReduceOp {
    fn combine(self, acc: &mut [f64], incoming: &[f64]) {
        match self {
            ReduceOp::Sum => acc.iter_mut().zip(incoming).for_each(|(a, b)| *a += b),
            ReduceOp::Max => acc
                .iter_mut()
                .zip(incoming)
                .for_each(|(a, b)| *a = a.max(*b)),
        }
    }
}

/// Send and receive counters of a link.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkStats {
    pub sends: u64,
    pub recvs: u64,
}

/// A rank's two ring connections: outgoing to `rank + 1`, incoming from `rank − 1`.
#[derive(Debug)]
pub struct RingLink {
    rank: usize,
    size: usize,
    next: Option<Sender<RingMsg>>,
    prev: Option<Receiver<RingMsg>>,
    stats: LinkStats,
}

impl RingLink {
    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn stats(&self) -> LinkStats {
        self.stats
    }

    fn send(&mut self, msg: RingMsg) -> Result<()> {
        let next = self.next.as_ref().ok_or(Error::BrokenLink(self.rank))?;
        next.send(msg).map_err(|_| Error::BrokenLink(self.rank))?;
        self.stats.sends += 1;
        Ok(())
    }

    fn recv(&mut self) -> Result<RingMsg> {
        let prev = self.prev.as_ref().ok_or(Error::BrokenLink(self.rank))?;
        let msg = prev.recv().map_err(|_| Error::BrokenLink(self.rank))?;
        self.stats.recvs += 1;
        Ok(msg)
    }
}

/// Links for `size` ranks connected in a ring. A single rank has no links.
pub fn ring(size: usize) -> Result<Vec<RingLink>> {
    if size == 0 {
        return Err(Error::invalid("ring size must be at least 1"));
    }
    let mut links: Vec<RingLink> = (0..size)
        .map(|rank| RingLink {
            rank,
            size,
            next: None,
            prev: None,
            stats: LinkStats::default(),
        })
        .collect();
    if size > 1 {
        for rank in 0..size {
            let (tx, rx) = channel();
            links[rank].next = Some(tx);
            links[(rank + 1) % size].prev = Some(rx);
        }
    }
    Ok(links)
}

/// Splits `0..len` into `size` contiguous ranges; the first `len mod size`
/// ranges are one element longer.
pub fn segment_bounds(len: usize, size: usize) -> Vec<Range<usize>> {
    let base = len / size;
    let extra = len % size;
    let mut start = 0;
    (0..size)
        .map(|i| {
            let n = base + usize::from(i < extra);
            let r = start..start + n;
            start += n;
            r
        })
        .collect()
}

fn expect_msg(msg: &RingMsg, phase: Phase, step: usize, segment: usize, len: usize) -> Result<()> {
    if msg.phase != phase || msg.step != step || msg.segment != segment {
        return Err(Error::invalid(format!(
            "out-of-order ring message: got {:?} step {} segment {}, expected {phase:?} step {step} segment {segment}",
            msg.phase, msg.step, msg.segment
        )));
    }
    if msg.payload.len() != len {
        return Err(Error::LengthMismatch {
            expected: len,
            actual: msg.payload.len(),
        });
    }
    Ok(())
}

/// In-place allreduce of this rank's buffer. Every rank of the ring must call
/// it with a buffer of the same length; afterwards all hold the reduction.
///
/// Scatter-reduce: at step `s` rank `r` sends segment `(r − s) mod size` and
/// folds in segment `(r − s − 1) mod size`. Allgather: at step `s` it sends
/// segment `(r + 1 − s) mod size` and stores segment `(r − s) mod size`.
pub fn ring_allreduce(link: &mut RingLink, buf: &mut [f64], op: ReduceOp) -> Result<()> {
    let size = link.size;
    if size == 1 {
        return Ok(());
    }
    let r = link.rank;
    let segs = segment_bounds(buf.len(), size);
    let at = |k: isize| (k.rem_euclid(size as isize)) as usize;
    let ri = r as isize;

    for s in 0..size - 1 {
        let si = s as isize;
        let out = at(ri - si);
        link.send(RingMsg {
            phase: Phase::ScatterReduce,
            step: s,
            segment: out,
            payload: buf[segs[out].clone()].to_vec(),
        })?;
        let into = at(ri - si - 1);
        let msg = link.recv()?;
        expect_msg(&msg, Phase::ScatterReduce, s, into, segs[into].len())?;
        op.combine(&mut buf[segs[into].clone()], &msg.payload);
    }
    for s in 0..size - 1 {
        let si = s as isize;
        let out = at(ri + 1 - si);
        link.send(RingMsg {
            phase: Phase::Allgather,
            step: s,
            segment: out,
            payload: buf[segs[out].clone()].to_vec(),
        })?;
        let into = at(ri - si);
        let msg = link.recv()?;
        expect_msg(&msg, Phase::Allgather, s, into, segs[into].len())?;
        buf[segs[into].clone()].copy_from_slice(&msg.payload);
    }
    Ok(())
}

/// Runs one allreduce across `buffers.len()` threads, one buffer per rank.
/// Returns each rank's link counters.
pub fn allreduce_buffers(buffers: &mut [Vec<f64>], op: ReduceOp) -> Result<Vec<LinkStats>> {
    let size = buffers.len();
    let links = ring(size)?;
    let len = buffers[0].len();
    if let Some(b) = buffers.iter().find(|b| b.len() != len) {
        return Err(Error::LengthMismatch {
            expected: len,
            actual: b.len(),
        });
    }
    let results: Vec<Result<LinkStats>> = thread::scope(|scope| {
        let handles: Vec<_> = links
            .into_iter()
            .zip(buffers.iter_mut())
            .map(|(mut link, buf)| {
                scope.spawn(move || {
                    ring_allreduce(&mut link, buf, op)?;
                    Ok(link.stats())
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("allreduce rank panicked"))
            .collect()
    });
    collect_ranks(results)
}

/// Prefers a rank's own failure over the broken links it causes elsewhere.
fn collect_ranks<T>(results: Vec<Result<T>>) -> Result<Vec<T>> {
    if results.iter().any(|r| r.is_err()) {
        let mut errors: Vec<Error> = results.into_iter().filter_map(|r| r.err()).collect();
        let root = errors
            .iter()
            .position(|e| !matches!(e, Error::BrokenLink(_)))
            .unwrap_or(0);
        return Err(errors.swap_remove(root));
    }
    Ok(results.into_iter().map(|r| r.unwrap()).collect())
}

/// State of one rank.
#[derive(Debug)]
pub struct WorkerCtx {
    pub rank: usize,
    pub size: usize,
    pub set: TrainingSet,
    pub params: MlpParams,
    pub adam: AdamState,
    pub link: RingLink,
}

/// Copies rank 0's parameters and optimizer state to every other rank.
pub fn broadcast_params(ranks: &mut [WorkerCtx]) -> Result<()> {
    let (root, rest) = ranks
        .split_first_mut()
        .ok_or_else(|| Error::invalid("no ranks to broadcast to"))?;
    if root.rank != 0 {
        return Err(Error::invalid("broadcast root must be rank 0"));
    }
    for ctx in rest {
        ctx.params = root.params.clone();
        ctx.adam = root.adam.clone();
    }
    Ok(())
}

/// Per-rank training sets.
///
/// Weak: rank `r` samples `per_rank` points with its own worker seed.
/// Strong: the interior and observation points of `global` are split into
/// equal contiguous blocks with local Monte-Carlo weights; boundary and
/// initial points are replicated on every rank.
pub fn shard_weak(
    spec: &ProblemSpec,
    per_rank: Counts,
    size: usize,
    seed: u64,
) -> Result<Vec<TrainingSet>> {
    if size == 0 {
        return Err(Error::invalid("size must be at least 1"));
    }
    (0..size)
        .map(|r| build_training_set(spec, per_rank, worker_seed(seed, r)))
        .collect()
}

pub fn shard_strong(global: &TrainingSet, size: usize) -> Result<Vec<TrainingSet>> {
    if size == 0 {
        return Err(Error::invalid("size must be at least 1"));
    }
    let split = |name: &str, c: &ComponentSet| -> Result<Vec<ComponentSet>> {
        if !c.len().is_multiple_of(size) {
            return Err(Error::invalid(format!(
                "cannot split {} {name} points evenly over {size} ranks",
                c.len()
            )));
        }
        let n = c.len() / size;
        Ok((0..size).map(|r| c.block(r * n, n)).collect())
    };
    let f = split("interior", &global.f)?;
    let u = split("observation", &global.u)?;
    Ok(f.into_iter()
        .zip(u)
        .map(|(f, u)| TrainingSet {
            kind: global.kind,
            f,
            g: global.g.clone(),
            h: global.h.clone(),
            u,
        })
        .collect())
}

/// `(E_ff, S_up) = (t₁/t_size, size·t₁/t_size)`.
pub fn efficiency_speedup(t1: f64, t_size: f64, size: usize) -> Result<(f64, f64)> {
    if !(t1 > 0.0) || !(t_size > 0.0) || !t1.is_finite() || !t_size.is_finite() {
        return Err(Error::invalid(format!(
            "times must be positive, got t1 = {t1}, t_size = {t_size}"
        )));
    }
    if size == 0 {
        return Err(Error::invalid("size must be at least 1"));
    }
    let eff = t1 / t_size;
    Ok((eff, size as f64 * eff))
}

#[derive(Debug)]
pub struct DistributedRun {
    /// One outcome per rank. Only rank 0 carries test losses and errors.
    pub outcomes: Vec<TrainOutcome>,
    pub links: Vec<LinkStats>,
}

impl DistributedRun {
    pub fn root(&self) -> &TrainOutcome {
        &self.outcomes[0]
    }
}

const REPORT_LEN: usize = 5;

fn pack_report(grad: &mut Vec<f64>, r: &LossReport) {
    let c = r.components;
    grad.extend_from_slice(&[r.total, c.f, c.g, c.h, c.u]);
}

fn unpack_report(buf: &mut Vec<f64>) -> LossReport {
    let tail = buf.split_off(buf.len() - REPORT_LEN);
    LossReport::new(
        tail[0],
        ComponentLosses {
            f: tail[1],
            g: tail[2],
            h: tail[3],
            u: tail[4],
        },
    )
}

/// Max-norm spread of the flat parameters across ranks (same on every rank).
fn replica_spread(link: &mut RingLink, flat: &[f64]) -> Result<f64> {
    let mut buf: Vec<f64> = flat
        .iter()
        .copied()
        .chain(flat.iter().map(|v| -v))
        .collect();
    ring_allreduce(link, &mut buf, ReduceOp::Max)?;
    let n = flat.len();
    Ok((0..n).map(|i| buf[i] + buf[n + i]).fold(0.0, f64::max))
}

/// Trains one replica per shard on its own thread.
///
/// Every iteration each rank computes its local mean loss and gradient,
/// sums them over the ring, divides by the rank count and takes the same
/// ADAM step. Replicas are compared at every record; a spread above
/// [`REPLICA_TOLERANCE`] aborts the run. Rank 0 alone evaluates `eval`.
/// With `log_dir`, rank `r` writes its history to `rank_<r>.log`.
pub fn train_distributed(
    spec: &ProblemSpec,
    settings: &TrainSettings,
    seed: u64,
    shards: Vec<TrainingSet>,
    eval: Option<&Evaluator>,
    log_dir: Option<&Path>,
) -> Result<DistributedRun> {
    let size = shards.len();
    let links = ring(size)?;
    let mut ranks = Vec::with_capacity(size);
    for (rank, (set, link)) in shards.into_iter().zip(links).enumerate() {
        let params = glorot_init(&settings.dims, &spec.extras(), worker_seed(seed, rank))?;
        let adam = AdamState::new(params.len(), settings.adam);
        ranks.push(WorkerCtx {
            rank,
            size,
            set,
            params,
            adam,
            link,
        });
    }
    broadcast_params(&mut ranks)?;

    let results: Vec<Result<(TrainOutcome, LinkStats)>> = thread::scope(|scope| {
        let handles: Vec<_> = ranks
            .into_iter()
            .map(|ctx| scope.spawn(move || run_rank(ctx, spec, settings, eval, log_dir)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("training rank panicked"))
            .collect()
    });
    let (outcomes, links) = collect_ranks(results)?.into_iter().unzip();
    Ok(DistributedRun { outcomes, links })
}

fn run_rank(
    mut ctx: WorkerCtx,
    spec: &ProblemSpec,
    settings: &TrainSettings,
    eval: Option<&Evaluator>,
    log_dir: Option<&Path>,
) -> Result<(TrainOutcome, LinkStats)> {
    let eval = if ctx.rank == 0 { eval } else { None };
    let scale = 1.0 / ctx.size as f64;
    let link = &mut ctx.link;
    let set = &ctx.set;
    let outcome = optimize(
        &mut ctx.params,
        &mut ctx.adam,
        settings,
        eval,
        |params, k| {
            if k % settings.record_every == 0 {
                let spread = replica_spread(link, &params.flatten())?;
                if spread > REPLICA_TOLERANCE {
                    return Err(Error::ReplicaDivergence(spread));
                }
            }
            let (report, mut buf) =
                loss_and_grad(params, spec, set, &settings.omega, settings.activation)?;
            pack_report(&mut buf, &report);
            ring_allreduce(link, &mut buf, ReduceOp::Sum)?;
            if ctx.size > 1 {
                buf.iter_mut().for_each(|v| *v *= scale);
            }
            let report = unpack_report(&mut buf);
            Ok((report, buf))
        },
    )?;
    if let Some(dir) = log_dir {
        write_rank_log(dir, ctx.rank, ctx.size, &ctx.set, &outcome)?;
    }
    Ok((outcome, ctx.link.stats()))
}

fn write_rank_log(
    dir: &Path,
    rank: usize,
    size: usize,
    set: &TrainingSet,
    outcome: &TrainOutcome,
) -> Result<()> {
    let path = dir.join(format!("rank_{rank}.log"));
    let write = || -> std::io::Result<()> {
        let mut w = BufWriter::new(File::create(&path)?);
        let c = set.counts();
        writeln!(
            w,
            "rank {rank}/{size} N_f={} N_g={} N_h={} M={}",
            c.n_f, c.n_g, c.n_h, c.m
        )?;
        writeln!(w, "iteration train_loss")?;
        for (k, l) in outcome
            .history
            .iteration
            .iter()
            .zip(&outcome.history.train_loss)
        {
            writeln!(w, "{k} {l:.10e}")?;
        }
        writeln!(w, "time_total_s {:.6}", outcome.total_time.as_secs_f64())?;
        w.flush()
    };
    write().map_err(|e| Error::io(&path, e))
}
