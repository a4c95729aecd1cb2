//! PDE residuals, boundary/initial residuals and exact solutions for the
//! 1D Laplace (forward and inverse) and 1D nonlinear Schrödinger problems.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use ndarray::{array, Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::model::BoundParams;

/// Name of the trainable diffusion coefficient in the inverse Laplace problem.
pub const LAMBDA: &str = "lambda";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ProblemKind {
    #[serde(rename = "laplace")]
    Laplace1d,
    #[serde(rename = "laplace-inverse")]
    Laplace1dInverse,
    #[serde(rename = "schrodinger")]
    Schrodinger1d,
}

impl ProblemKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ProblemKind::Laplace1d => "laplace",
            ProblemKind::Laplace1dInverse => "laplace-inverse",
            ProblemKind::Schrodinger1d => "schrodinger",
        }
    }

    pub fn is_laplace(self) -> bool {
        matches!(self, ProblemKind::Laplace1d | ProblemKind::Laplace1dInverse)
    }
}

impl fmt::Display for ProblemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ProblemKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "laplace" | "laplace1d" => Ok(ProblemKind::Laplace1d),
            "laplace-inverse" | "laplace1d-inverse" => Ok(ProblemKind::Laplace1dInverse),
            "schrodinger" | "schrodinger1d" => Ok(ProblemKind::Schrodinger1d),
            other => Err(Error::invalid(format!(
                "unknown problem '{other}' (expected laplace, laplace-inverse or schrodinger)"
            ))),
        }
    }
}

/// Axis-aligned box.
#[derive(Clone, Debug, PartialEq)]
pub struct Domain {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Domain {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.is_empty() || lo.len() != hi.len() {
            return Err(Error::invalid(
                "box bounds must be nonempty and of equal length",
            ));
        }
        if lo.iter().zip(&hi).any(|(a, b)| !(b > a)) {
            return Err(Error::invalid(format!("degenerate box {lo:?}..{hi:?}")));
        }
        Ok(Domain { lo, hi })
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn volume(&self) -> f64 {
        self.lo.iter().zip(&self.hi).map(|(a, b)| b - a).product()
    }

    pub fn contains(&self, point: &[f64]) -> bool {
        point
            .iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(&x, (&a, &b))| x >= a && x <= b)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProblemSpec {
    pub kind: ProblemKind,
    pub domain: Domain,
    pub input_dim: usize,
    pub output_dim: usize,
}

impl ProblemSpec {
    pub fn new(kind: ProblemKind) -> Self {
        let domain = match kind {
            ProblemKind::Laplace1d | ProblemKind::Laplace1dInverse => {
                Domain::new(vec![-1.0], vec![7.0])
            }
            ProblemKind::Schrodinger1d => Domain::new(vec![-5.0, 0.0], vec![5.0, PI / 2.0]),
        }
        .expect("built-in domains are valid");
        let (input_dim, output_dim) = if kind.is_laplace() { (1, 1) } else { (2, 2) };
        ProblemSpec {
            kind,
            domain,
            input_dim,
            output_dim,
        }
    }

    /// Extra trainable scalars the problem needs, with their initial values.
    pub fn extras(&self) -> Vec<(String, f64)> {
        match self.kind {
            ProblemKind::Laplace1dInverse => vec![(LAMBDA.to_string(), 0.0)],
            _ => vec![],
        }
    }
}

/// `u(x) = sin(πx)`, the exact Laplace solution.
pub fn exact_laplace(x: &Array2<f64>) -> Array2<f64> {
    x.mapv(|v| (PI * v).sin())
}

/// Source term `f = π² sin(πx)`.
pub fn laplace_source(x: &Array2<f64>) -> Array2<f64> {
    x.mapv(|v| PI * PI * (PI * v).sin())
}

/// Per-sample first derivatives of the network output with respect to every
/// input coordinate: an N×D node per output column.
struct FieldDerivatives {
    value: NodeId,
    grad_input: NodeId,
}

/// Selector matrix picking column `j` of an `n`-column node.
fn column_selector(graph: &mut Graph, n: usize, j: usize) -> Result<NodeId> {
    let mut e = Array2::zeros((n, 1));
    e[[j, 0]] = 1.0;
    graph.constant(e)
}

fn column(graph: &mut Graph, node: NodeId, j: usize) -> Result<NodeId> {
    let n = graph.value(node).ncols();
    if n == 1 && j == 0 {
        return Ok(node);
    }
    let e = column_selector(graph, n, j)?;
    graph.matmul(node, e)
}

fn differentiate_channel(
    graph: &mut Graph,
    value: NodeId,
    input: NodeId,
) -> Result<FieldDerivatives> {
    let grad_input = graph.grad(value, &[input])?[0];
    Ok(FieldDerivatives { value, grad_input })
}

/// `ξ_f = −λ u_xx − π² sin(πx)`; λ is fixed to 1 for the forward problem and
/// read from the trainable extras for the inverse one.
pub fn residual_laplace(
    kind: ProblemKind,
    params: &BoundParams,
    x: &Array2<f64>,
    graph: &mut Graph,
) -> Result<NodeId> {
    let input = graph.variable(x.clone())?;
    let u = params.forward(graph, input)?;
    let ux = graph.grad(u, &[input])?[0];
    let uxx = graph.grad(ux, &[input])?[0];
    let scaled = match kind {
        ProblemKind::Laplace1d => uxx,
        ProblemKind::Laplace1dInverse => {
            let lambda = params
                .extra(LAMBDA)
                .ok_or_else(|| Error::invalid("inverse Laplace problem needs a 'lambda' extra"))?;
            let lambda = graph.broadcast(lambda, x.nrows(), 1)?;
            graph.mul(lambda, uxx)?
        }
        ProblemKind::Schrodinger1d => {
            return Err(Error::invalid(
                "residual_laplace called for the Schrödinger problem",
            ))
        }
    };
    let lhs = graph.neg(scaled)?;
    let f = graph.constant(laplace_source(x))?;
    graph.sub(lhs, f)
}

/// Real and imaginary parts of `i u_t + 0.5 u_xx + |u|² u` with the network
/// output columns read as `(Re u, Im u)` and inputs as `(x, t)`.
pub fn residual_schrodinger(
    params: &BoundParams,
    x: &Array2<f64>,
    graph: &mut Graph,
) -> Result<(NodeId, NodeId)> {
    if x.ncols() != 2 {
        return Err(Error::invalid(format!(
            "Schrödinger inputs need 2 columns (x, t), got {}",
            x.ncols()
        )));
    }
    let input = graph.variable(x.clone())?;
    let out = params.forward(graph, input)?;
    if graph.value(out).ncols() != 2 {
        return Err(Error::invalid(format!(
            "Schrödinger needs a 2-channel network output, got {}",
            graph.value(out).ncols()
        )));
    }
    let mut channels = Vec::with_capacity(2);
    for j in 0..2 {
        let value = column(graph, out, j)?;
        let d = differentiate_channel(graph, value, input)?;
        let ux = column(graph, d.grad_input, 0)?;
        let ut = column(graph, d.grad_input, 1)?;
        let hess = graph.grad(ux, &[input])?[0];
        let uxx = column(graph, hess, 0)?;
        channels.push((d.value, ut, uxx));
    }
    let (re, re_t, re_xx) = channels[0];
    let (im, im_t, im_xx) = channels[1];
    let re2 = graph.square(re)?;
    let im2 = graph.square(im)?;
    let modulus2 = graph.add(re2, im2)?;

    // Re: −Im u_t + 0.5 Re u_xx + |u|² Re u
    let half_re_xx = graph.scale(re_xx, 0.5)?;
    let nl_re = graph.mul(modulus2, re)?;
    let xi1 = graph.sub(half_re_xx, im_t)?;
    let xi1 = graph.add(xi1, nl_re)?;

    // Im: Re u_t + 0.5 Im u_xx + |u|² Im u
    let half_im_xx = graph.scale(im_xx, 0.5)?;
    let nl_im = graph.mul(modulus2, im)?;
    let xi2 = graph.add(re_t, half_im_xx)?;
    let xi2 = graph.add(xi2, nl_im)?;
    Ok((xi1, xi2))
}

/// `2 sech(x)`, built from `exp` as `4 / (eˣ + e⁻ˣ)`.
pub fn schrodinger_initial(x: &Array1<f64>) -> Array1<f64> {
    x.mapv(|v| 4.0 / (v.exp() + (-v).exp()))
}

/// Boundary and initial-condition residual nodes, as N×m (or N×2m) blocks.
#[derive(Clone, Debug)]
pub struct BoundaryResiduals {
    /// Laplace: `u` at the Dirichlet points. Schrödinger: periodic gaps,
    /// value columns followed by x-derivative columns.
    pub boundary: NodeId,
    /// Schrödinger only: `u(x,0) − (2 sech x, 0)`.
    pub initial: Option<NodeId>,
}

/// Periodic gaps `[u(l) − u(r), u_x(l) − u_x(r)]` between paired points.
pub fn periodic_gaps(
    params: &BoundParams,
    left: &Array2<f64>,
    right: &Array2<f64>,
    graph: &mut Graph,
) -> Result<NodeId> {
    if left.dim() != right.dim() {
        return Err(Error::invalid("periodic point sets differ in shape"));
    }
    let mut per_side = Vec::with_capacity(2);
    for pts in [left, right] {
        let input = graph.variable(pts.clone())?;
        let out = params.forward(graph, input)?;
        let m = graph.value(out).ncols();
        let mut dx = Vec::with_capacity(m);
        for j in 0..m {
            let value = column(graph, out, j)?;
            let d = differentiate_channel(graph, value, input)?;
            dx.push(column(graph, d.grad_input, 0)?);
        }
        per_side.push((out, dx));
    }
    let (lu, ldx) = &per_side[0];
    let (ru, rdx) = &per_side[1];
    let value_gap = graph.sub(*lu, *ru)?;
    let mut gap = value_gap;
    // append derivative columns by right-multiplying with a placement matrix
    let m = graph.value(value_gap).ncols();
    let mut place = Array2::zeros((m, 2 * m));
    for j in 0..m {
        place[[j, j]] = 1.0;
    }
    let place = graph.constant(place)?;
    gap = graph.matmul(gap, place)?;
    for j in 0..m {
        let d = graph.sub(ldx[j], rdx[j])?;
        let mut e = Array2::zeros((1, 2 * m));
        e[[0, m + j]] = 1.0;
        let e = graph.constant(e)?;
        let d = graph.matmul(d, e)?;
        gap = graph.add(gap, d)?;
    }
    Ok(gap)
}

/// Initial-condition gap `u(x, 0) − (2 sech x, 0)` at points `(x, 0)`.
pub fn initial_gap(
    params: &BoundParams,
    points: &Array2<f64>,
    graph: &mut Graph,
) -> Result<NodeId> {
    let input = graph.constant(points.clone())?;
    let out = params.forward(graph, input)?;
    let x = points.column(0).to_owned();
    let re = schrodinger_initial(&x);
    let mut target = Array2::zeros((points.nrows(), 2));
    target.column_mut(0).assign(&re);
    let target = graph.constant(target)?;
    graph.sub(out, target)
}

/// Boundary residuals for the problem. For Schrödinger, `boundary_points`
/// are the left-edge points `(x_lo, t)`; their partners sit at `(x_hi, t)`.
pub fn boundary_residuals(
    params: &BoundParams,
    spec: &ProblemSpec,
    boundary_points: &Array2<f64>,
    initial_points: Option<&Array2<f64>>,
    graph: &mut Graph,
) -> Result<BoundaryResiduals> {
    if boundary_points.nrows() == 0 {
        return Err(Error::invalid("empty boundary set"));
    }
    match spec.kind {
        ProblemKind::Laplace1d | ProblemKind::Laplace1dInverse => {
            let input = graph.constant(boundary_points.clone())?;
            Ok(BoundaryResiduals {
                boundary: params.forward(graph, input)?,
                initial: None,
            })
        }
        ProblemKind::Schrodinger1d => {
            let mut right = boundary_points.clone();
            right.column_mut(0).fill(spec.domain.hi[0]);
            let boundary = periodic_gaps(params, boundary_points, &right, graph)?;
            let initial = match initial_points {
                Some(p) if p.nrows() > 0 => Some(initial_gap(params, p, graph)?),
                _ => return Err(Error::invalid("empty initial-condition set")),
            };
            Ok(BoundaryResiduals { boundary, initial })
        }
    }
}

/// Dirichlet points of the Laplace problem.
pub fn laplace_boundary() -> Array2<f64> {
    array![[-1.0], [7.0]]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{glorot_init, predict, Activation, MlpParams};

    fn zero_net(dims: &[usize], extras: &[(String, f64)]) -> MlpParams {
        MlpParams::zeros(dims, extras).unwrap()
    }

    #[test]
    fn domains() {
        let l = ProblemSpec::new(ProblemKind::Laplace1d);
        assert_eq!(l.domain.volume(), 8.0);
        assert_eq!((l.input_dim, l.output_dim), (1, 1));
        let s = ProblemSpec::new(ProblemKind::Schrodinger1d);
        assert!((s.domain.volume() - 10.0 * PI / 2.0).abs() < 1e-12);
        assert_eq!((s.input_dim, s.output_dim), (2, 2));
        assert!(Domain::new(vec![1.0], vec![1.0]).is_err());
    }

    #[test]
    fn exact_laplace_values() {
        let u = exact_laplace(&array![[0.0], [0.5], [7.0]]);
        assert_eq!(u[[0, 0]], 0.0);
        assert_eq!(u[[1, 0]], 1.0);
        assert!(u[[2, 0]].abs() < 1e-14);
    }

    #[test]
    fn laplace_residual_of_zero_network() {
        let p = zero_net(&[1, 5, 1], &[]);
        let mut g = Graph::new();
        let b = p.bind(&mut g, Activation::Tanh).unwrap();
        let r =
            residual_laplace(ProblemKind::Laplace1d, &b, &array![[0.0], [0.5]], &mut g).unwrap();
        assert_eq!(g.value(r)[[0, 0]], 0.0);
        assert!((g.value(r)[[1, 0]] + PI * PI).abs() < 1e-12);
    }

    #[test]
    fn inverse_needs_lambda_and_matches_forward_at_one() {
        let p = glorot_init(&[1, 6, 6, 1], &[], 11).unwrap();
        let x = array![[-0.7], [0.2], [3.3], [6.1]];
        let mut g = Graph::new();
        let b = p.bind(&mut g, Activation::Tanh).unwrap();
        assert!(residual_laplace(ProblemKind::Laplace1dInverse, &b, &x, &mut g).is_err());
        let fwd = residual_laplace(ProblemKind::Laplace1d, &b, &x, &mut g).unwrap();

        let mut with_lambda = p.clone();
        with_lambda = MlpParams::from_layers(
            with_lambda.weights().to_vec(),
            with_lambda.biases().to_vec(),
            vec![(LAMBDA.to_string(), 1.0)],
        )
        .unwrap();
        let mut h = Graph::new();
        let b = with_lambda.bind(&mut h, Activation::Tanh).unwrap();
        let inv = residual_laplace(ProblemKind::Laplace1dInverse, &b, &x, &mut h).unwrap();
        let same = g
            .value(fwd)
            .iter()
            .zip(h.value(inv).iter())
            .all(|(a, b)| a.to_bits() == b.to_bits());
        assert!(same);
    }

    #[test]
    fn exact_solution_has_zero_residual() {
        // −u_xx − f with u = sin(πx) so u_xx = −π² sin(πx)
        let x = Array2::from_shape_fn((50, 1), |(i, _)| -1.0 + 8.0 * i as f64 / 49.0);
        let uxx = x.mapv(|v| -PI * PI * (PI * v).sin());
        let r = -&uxx - laplace_source(&x);
        assert!(r.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn laplace_uxx_matches_finite_differences() {
        let p = glorot_init(&[1, 8, 8, 1], &[], 5).unwrap();
        let xs = array![[-0.9], [0.4], [2.2], [5.5]];
        let mut g = Graph::new();
        let b = p.bind(&mut g, Activation::Tanh).unwrap();
        let r = residual_laplace(ProblemKind::Laplace1d, &b, &xs, &mut g).unwrap();
        let h = 1e-4;
        for (i, &x) in xs.column(0).iter().enumerate() {
            let u = |x: f64| predict(&p, &array![[x]], Activation::Tanh).unwrap()[[0, 0]];
            let fd = (u(x + h) - 2.0 * u(x) + u(x - h)) / (h * h);
            // r = −u_xx − f
            let ad = -(g.value(r)[[i, 0]] + PI * PI * (PI * x).sin());
            assert!((ad - fd).abs() / ad.abs().max(1e-3) < 1e-4, "{ad} vs {fd}");
        }
    }

    #[test]
    fn schrodinger_zero_network_and_shape_errors() {
        let p = zero_net(&[2, 4, 2], &[]);
        let mut g = Graph::new();
        let b = p.bind(&mut g, Activation::Tanh).unwrap();
        let x = array![[0.0, 0.1], [1.5, 1.0]];
        let (r1, r2) = residual_schrodinger(&b, &x, &mut g).unwrap();
        assert!(g
            .value(r1)
            .iter()
            .chain(g.value(r2).iter())
            .all(|&v| v == 0.0));
        assert!(residual_schrodinger(&b, &array![[0.0]], &mut g).is_err());

        let single = zero_net(&[2, 4, 1], &[]);
        let b = single.bind(&mut g, Activation::Tanh).unwrap();
        assert!(residual_schrodinger(&b, &x, &mut g).is_err());
    }

    #[test]
    fn schrodinger_derivatives_match_finite_differences() {
        let p = glorot_init(&[2, 6, 6, 2], &[], 9).unwrap();
        let pts = array![[-1.3, 0.4], [0.7, 1.1], [2.5, 0.05]];
        let mut g = Graph::new();
        let b = p.bind(&mut g, Activation::Tanh).unwrap();
        let (r1, r2) = residual_schrodinger(&b, &pts, &mut g).unwrap();
        let u = |x: f64, t: f64| {
            let out = predict(&p, &array![[x, t]], Activation::Tanh).unwrap();
            (out[[0, 0]], out[[0, 1]])
        };
        let h = 1e-4;
        for i in 0..pts.nrows() {
            let (x, t) = (pts[[i, 0]], pts[[i, 1]]);
            let (re, im) = u(x, t);
            let (rp, ip) = u(x + h, t);
            let (rm, imm) = u(x - h, t);
            let (rtp, itp) = u(x, t + h);
            let (rtm, itm) = u(x, t - h);
            let re_xx = (rp - 2.0 * re + rm) / (h * h);
            let im_xx = (ip - 2.0 * im + imm) / (h * h);
            let re_t = (rtp - rtm) / (2.0 * h);
            let im_t = (itp - itm) / (2.0 * h);
            let m2 = re * re + im * im;
            let fd1 = -im_t + 0.5 * re_xx + m2 * re;
            let fd2 = re_t + 0.5 * im_xx + m2 * im;
            let (ad1, ad2) = (g.value(r1)[[i, 0]], g.value(r2)[[i, 0]]);
            assert!(
                (ad1 - fd1).abs() / ad1.abs().max(1e-2) < 1e-4,
                "{ad1} vs {fd1}"
            );
            assert!(
                (ad2 - fd2).abs() / ad2.abs().max(1e-2) < 1e-4,
                "{ad2} vs {fd2}"
            );
        }
    }

    #[test]
    fn plane_wave_satisfies_the_residual_formula() {
        // u = e^{it}: u_t = i e^{it}, u_xx = 0, |u|² = 1
        for &t in &[0.0, 0.3, 1.0, 1.5] {
            let (re, im) = (f64::cos(t), f64::sin(t));
            let (re_t, im_t) = (-f64::sin(t), f64::cos(t));
            let xi1 = -im_t + 0.5 * 0.0 + (re * re + im * im) * re;
            let xi2 = re_t + 0.5 * 0.0 + (re * re + im * im) * im;
            assert!(xi1.abs() < 1e-15 && xi2.abs() < 1e-15);
        }
    }

    #[test]
    fn boundary_examples() {
        let spec = ProblemSpec::new(ProblemKind::Laplace1d);
        let p = zero_net(&[1, 3, 1], &[]);
        let mut g = Graph::new();
        let b = p.bind(&mut g, Activation::Tanh).unwrap();
        let r = boundary_residuals(&b, &spec, &laplace_boundary(), None, &mut g).unwrap();
        assert!(g.value(r.boundary).iter().all(|&v| v == 0.0));
        assert!(boundary_residuals(&b, &spec, &Array2::zeros((0, 1)), None, &mut g).is_err());

        let spec = ProblemSpec::new(ProblemKind::Schrodinger1d);
        let p = zero_net(&[2, 3, 2], &[]);
        let b = p.bind(&mut g, Activation::Tanh).unwrap();
        let left = array![[-5.0, 0.2]];
        let ic = array![[0.0, 0.0], [1.0, 0.0]];
        let r = boundary_residuals(&b, &spec, &left, Some(&ic), &mut g).unwrap();
        let init = g.value(r.initial.unwrap());
        assert_eq!(init[[0, 0]], -2.0);
        assert_eq!(init[[0, 1]], 0.0);
        assert!((init[[1, 0]] + 2.0 / 1f64.cosh()).abs() < 1e-15);
        assert!(boundary_residuals(&b, &spec, &left, None, &mut g).is_err());
    }

    #[test]
    fn periodic_gaps_vanish_for_identical_points() {
        let p = glorot_init(&[2, 5, 2], &[], 3).unwrap();
        let mut g = Graph::new();
        let b = p.bind(&mut g, Activation::Tanh).unwrap();
        let pts = array![[-5.0, 0.1], [-5.0, 0.9], [-5.0, 1.4]];
        let gap = periodic_gaps(&b, &pts, &pts, &mut g).unwrap();
        assert_eq!(g.value(gap).dim(), (3, 4));
        assert!(g.value(gap).iter().all(|&v| v == 0.0));

        let mut right = pts.clone();
        right.column_mut(0).fill(5.0);
        let gap = periodic_gaps(&b, &pts, &right, &mut g).unwrap();
        assert!(g.value(gap).iter().any(|&v| v != 0.0));
    }

    #[test]
    fn initial_profile_is_two_sech() {
        let x = Array1::from(vec![0.0, 1.0, -2.5]);
        let v = schrodinger_initial(&x);
        for (a, b) in v.iter().zip(x.iter()) {
            assert!((a - 2.0 / b.cosh()).abs() < 1e-15);
        }
    }

    #[test]
    fn parse_kinds() {
        assert_eq!(
            "laplace".parse::<ProblemKind>().unwrap(),
            ProblemKind::Laplace1d
        );
        assert_eq!(
            "laplace-inverse".parse::<ProblemKind>().unwrap(),
            ProblemKind::Laplace1dInverse
        );
        assert!("heat".parse::<ProblemKind>().is_err());
    }
}
