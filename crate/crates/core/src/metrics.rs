//! Loss assembly, error and density metrics, the generalization and train-test
//! gap bounds, and regime classification of h-sweeps.

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::model::BoundParams;
use crate::problems::{
    initial_gap, periodic_gaps, residual_laplace, residual_schrodinger, ProblemKind, ProblemSpec,
};
use crate::sampling::{ComponentSet, TrainingSet};

/// Denominator floor for relative quantities.
pub const REL_FLOOR: f64 = 1e-30;

/// Per-term loss weights `ω_v`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub f: f64,
    pub g: f64,
    pub h: f64,
    pub u: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            f: 1.0,
            g: 1.0,
            h: 1.0,
            u: 1.0,
        }
    }
}

/// Value of each loss term; terms the problem does not use are 0.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ComponentLosses {
    pub f: f64,
    pub g: f64,
    pub h: f64,
    pub u: f64,
}

/// Graph handles of an assembled loss.
#[derive(Clone, Debug)]
pub struct LossNodes {
    pub total: NodeId,
    pub f: Option<NodeId>,
    pub g: Option<NodeId>,
    pub h: Option<NodeId>,
    pub u: Option<NodeId>,
}

impl LossNodes {
    pub fn values(&self, graph: &Graph) -> Result<(f64, ComponentLosses)> {
        let get = |id: Option<NodeId>| id.map_or(Ok(0.0), |id| graph.scalar(id));
        Ok((
            graph.scalar(self.total)?,
            ComponentLosses {
                f: get(self.f)?,
                g: get(self.g)?,
                h: get(self.h)?,
                u: get(self.u)?,
            },
        ))
    }
}

/// `Σᵢ wᵢ ‖rᵢ‖²` where `rᵢ` stacks row `i` of every block.
fn weighted_square_norm(
    graph: &mut Graph,
    blocks: &[NodeId],
    set: &ComponentSet,
) -> Result<NodeId> {
    let mut per_point = Vec::with_capacity(blocks.len());
    for &b in blocks {
        let sq = graph.square(b)?;
        let cols = graph.value(sq).ncols();
        let rowsum = if cols == 1 {
            sq
        } else {
            let ones = graph.constant(Array2::ones((cols, 1)))?;
            graph.matmul(sq, ones)?
        };
        per_point.push(rowsum);
    }
    let per_point = graph.sum(&per_point)?;
    let w = set.weights.clone().insert_axis(ndarray::Axis(1));
    let w = graph.constant(w)?;
    graph.matmul_t(w, per_point, true, false)
}

fn check_component(name: &str, set: &ComponentSet, weight: f64) -> Result<bool> {
    if weight < 0.0 {
        return Err(Error::invalid(format!("negative loss weight for '{name}'")));
    }
    if weight == 0.0 {
        return Ok(false);
    }
    if set.is_empty() {
        return Err(Error::invalid(format!(
            "loss term '{name}' has weight {weight} but no points"
        )));
    }
    Ok(true)
}

/// Builds `L = Σ_v ω_v Σᵢ w_vⁱ |ξ_v(τ_vⁱ)|²` in `graph`.
pub fn assemble_loss(
    params: &BoundParams,
    spec: &ProblemSpec,
    set: &TrainingSet,
    omega: &LossWeights,
    graph: &mut Graph,
) -> Result<LossNodes> {
    if set.kind != spec.kind {
        return Err(Error::invalid(format!(
            "training set for {} used with problem {}",
            set.kind, spec.kind
        )));
    }
    let mut terms = Vec::new();

    let f = if check_component("f", &set.f, omega.f)? {
        let blocks = match spec.kind {
            ProblemKind::Schrodinger1d => {
                let (a, b) = residual_schrodinger(params, &set.f.points, graph)?;
                vec![a, b]
            }
            kind => vec![residual_laplace(kind, params, &set.f.points, graph)?],
        };
        let l = weighted_square_norm(graph, &blocks, &set.f)?;
        terms.push((l, omega.f));
        Some(l)
    } else {
        None
    };

    let g = if check_component("g", &set.g, omega.g)? {
        let r = match spec.kind {
            ProblemKind::Schrodinger1d => {
                let mut right = set.g.points.clone();
                right.column_mut(0).fill(spec.domain.hi[0]);
                periodic_gaps(params, &set.g.points, &right, graph)?
            }
            _ => {
                let input = graph.constant(set.g.points.clone())?;
                params.forward(graph, input)?
            }
        };
        let l = weighted_square_norm(graph, &[r], &set.g)?;
        terms.push((l, omega.g));
        Some(l)
    } else {
        None
    };

    let h = if spec.kind == ProblemKind::Schrodinger1d && check_component("h", &set.h, omega.h)? {
        let r = initial_gap(params, &set.h.points, graph)?;
        let l = weighted_square_norm(graph, &[r], &set.h)?;
        terms.push((l, omega.h));
        Some(l)
    } else {
        None
    };

    let u = if spec.kind == ProblemKind::Laplace1dInverse && check_component("u", &set.u, omega.u)?
    {
        let obs = set
            .u
            .observations
            .as_ref()
            .ok_or_else(|| Error::invalid("observation term has no observed values"))?;
        let input = graph.constant(set.u.points.clone())?;
        let pred = params.forward(graph, input)?;
        let target = graph.constant(obs.clone())?;
        let r = graph.sub(pred, target)?;
        let l = weighted_square_norm(graph, &[r], &set.u)?;
        terms.push((l, omega.u));
        Some(l)
    } else {
        None
    };

    if terms.is_empty() {
        return Err(Error::invalid("loss has no active terms"));
    }
    let mut weighted = Vec::with_capacity(terms.len());
    for (l, w) in terms {
        weighted.push(if w == 1.0 { l } else { graph.scale(l, w)? });
    }
    Ok(LossNodes {
        total: graph.sum(&weighted)?,
        f,
        g,
        h,
        u,
    })
}

/// Loss values of one evaluation plus the derived training errors
/// `ε_D = √(L_f + L_g + L_h)` and `ε_u = √L_u`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub components: ComponentLosses,
    pub total: f64,
    pub eps_d: f64,
    pub eps_u: f64,
}

impl LossReport {
    pub fn new(total: f64, components: ComponentLosses) -> Self {
        LossReport {
            components,
            total,
            eps_d: (components.f + components.g + components.h).sqrt(),
            eps_u: components.u.sqrt(),
        }
    }
}

/// `‖pred − exact‖₂ / ‖exact‖₂`.
pub fn relative_l2_error(pred: &Array2<f64>, exact: &Array2<f64>) -> Result<f64> {
    if pred.dim() != exact.dim() {
        return Err(Error::Shape {
            op: "relative_l2_error",
            left: pred.dim(),
            right: exact.dim(),
        });
    }
    let norm = exact.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(Error::invalid("relative error against a zero reference"));
    }
    let diff = pred
        .iter()
        .zip(exact.iter())
        .map(|(p, e)| (p - e) * (p - e))
        .sum::<f64>()
        .sqrt();
    Ok(diff / norm)
}

/// Point density `(N_f / vol)^(1/D_in)`.
pub fn rho(n_f: usize, volume: f64, input_dim: usize) -> Result<f64> {
    if n_f == 0 || !(volume > 0.0) || input_dim == 0 {
        return Err(Error::invalid(format!(
            "rho needs positive inputs, got N_f={n_f}, volume={volume}, D_in={input_dim}"
        )));
    }
    let ratio = n_f as f64 / volume;
    Ok(if input_dim == 1 {
        ratio
    } else {
        ratio.powf(1.0 / input_dim as f64)
    })
}

/// Training points processed per second, `k·N_f / t_k`.
pub fn pointsec(k: usize, n_f: usize, t_k: f64) -> Result<f64> {
    if !(t_k > 0.0) {
        return Err(Error::invalid(format!(
            "pointsec needs a positive time, got {t_k}"
        )));
    }
    Ok((k * n_f) as f64 / t_k)
}

/// Constants and cardinalities entering the generalization bound.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    pub c_pde: f64,
    pub c_quad_y: f64,
    pub c_quad_x: f64,
    pub alpha: f64,
    pub beta: f64,
    pub omega_u: f64,
    /// Observation bias `‖u − u_obs‖`.
    pub mu_hat: f64,
    pub n_hat: usize,
    pub m: usize,
}

impl BoundInputs {
    fn validate(&self) -> Result<()> {
        let constants = [
            self.c_pde,
            self.c_quad_y,
            self.c_quad_x,
            self.omega_u,
            self.mu_hat,
        ];
        if constants.iter().any(|c| !(*c >= 0.0)) {
            return Err(Error::invalid("bound constants must be nonnegative"));
        }
        if !(self.alpha > 0.0) || !(self.beta > 0.0) {
            return Err(Error::invalid("quadrature rates must be positive"));
        }
        Ok(())
    }
}

/// Upper bound on the generalization error from training errors and
/// quadrature rates:
///
/// `C_pde/(1+ω_u)·(ε_D + √C_Y·N̂^(−α/2)) + ω_u/(1+ω_u)·(ε_u + √C_X·M^(−β/2) + μ̂)`
pub fn generalization_bound(b: &BoundInputs, eps_d: f64, eps_u: f64) -> Result<f64> {
    b.validate()?;
    let scale = 1.0 + b.omega_u;
    let first = if b.c_pde == 0.0 {
        0.0
    } else {
        if b.n_hat == 0 {
            return Err(Error::invalid("N̂ = 0 with a nonzero PDE term"));
        }
        b.c_pde / scale * (eps_d + b.c_quad_y.sqrt() * (b.n_hat as f64).powf(-b.alpha / 2.0))
    };
    let second = if b.omega_u == 0.0 {
        0.0
    } else {
        if b.m == 0 {
            return Err(Error::invalid("M = 0 with a nonzero observation weight"));
        }
        b.omega_u / scale
            * (eps_u + b.c_quad_x.sqrt() * (b.m as f64).powf(-b.beta / 2.0) + b.mu_hat)
    };
    Ok(first + second)
}

/// Train-test gap bound `2·√C_quad·count^(−rate/2)`.
pub fn gap_bound(c_quad: f64, rate: f64, count: usize) -> Result<f64> {
    if count == 0 {
        return Err(Error::invalid("gap bound needs at least one point"));
    }
    if !(c_quad >= 0.0) || !(rate > 0.0) {
        return Err(Error::invalid("gap bound needs C_quad >= 0 and rate > 0"));
    }
    Ok(2.0 * c_quad.sqrt() * (count as f64).powf(-rate / 2.0))
}

/// `|L_test − L_train| / L_train`, with a floored denominator.
pub fn relative_gap(train: f64, test: f64) -> f64 {
    (test - train).abs() / train.abs().max(REL_FLOOR)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Regime {
    #[serde(rename = "pre-asymptotic")]
    PreAsymptotic,
    #[serde(rename = "transition")]
    Transition,
    #[serde(rename = "permanent")]
    Permanent,
}

impl Regime {
    pub fn as_str(self) -> &'static str {
        match self {
            Regime::PreAsymptotic => "pre-asymptotic",
            Regime::Transition => "transition",
            Regime::Permanent => "permanent",
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pre-asymptotic" => Ok(Regime::PreAsymptotic),
            "transition" => Ok(Regime::Transition),
            "permanent" => Ok(Regime::Permanent),
            other => Err(Error::invalid(format!("unknown regime '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegimeThresholds {
    /// Median relative train-test gap below which a size may be permanent.
    pub gap: f64,
    /// Median error above which a size is pre-asymptotic.
    pub error: f64,
    /// Permanent sizes have median error within this factor of the largest size.
    pub factor: f64,
}

impl Default for RegimeThresholds {
    fn default() -> Self {
        RegimeThresholds {
            gap: 1e-2,
            error: 0.3,
            factor: 2.0,
        }
    }
}

/// Results of all seeds at one training-set size.
#[derive(Clone, Debug, PartialEq)]
pub struct SizeSummary {
    pub n: usize,
    pub errors: Vec<f64>,
    pub gaps: Vec<f64>,
}

pub fn median(values: &[f64]) -> Option<f64> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| !x.is_nan()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(|a, b| a.total_cmp(b));
    let mid = v.len() / 2;
    Some(if v.len() % 2 == 1 {
        v[mid]
    } else {
        0.5 * (v[mid - 1] + v[mid])
    })
}

/// Labels each size of a sweep.
///
/// Pre-asymptotic when the median error exceeds `error`; permanent when the
/// median gap is below `gap` and the median error is at most `factor` times
/// the median error at the largest size; transition otherwise.
pub fn classify_regime(
    sweep: &[SizeSummary],
    thresholds: &RegimeThresholds,
) -> Result<Vec<(usize, Regime)>> {
    let largest = sweep
        .iter()
        .max_by_key(|s| s.n)
        .ok_or_else(|| Error::invalid("empty sweep"))?;
    let reference = median(&largest.errors)
        .ok_or_else(|| Error::invalid(format!("no errors recorded at N = {}", largest.n)))?;
    let mut out = Vec::with_capacity(sweep.len());
    for s in sweep {
        let err = median(&s.errors)
            .ok_or_else(|| Error::invalid(format!("no errors recorded at N = {}", s.n)))?;
        let gap = median(&s.gaps).unwrap_or(f64::INFINITY);
        let regime = if err > thresholds.error {
            Regime::PreAsymptotic
        } else if gap < thresholds.gap && err <= thresholds.factor * reference {
            Regime::Permanent
        } else {
            Regime::Transition
        };
        out.push((s.n, regime));
    }
    Ok(out)
}

/// Sizes (in increasing order) whose label regresses relative to a smaller size.
pub fn regime_regressions(labels: &[(usize, Regime)]) -> Vec<usize> {
    let mut sorted = labels.to_vec();
    sorted.sort_by_key(|&(n, _)| n);
    let mut best = Regime::PreAsymptotic;
    let mut out = Vec::new();
    for (n, r) in sorted {
        if best == Regime::Permanent && r == Regime::PreAsymptotic {
            out.push(n);
        }
        best = best.max(r);
    }
    out
}
