//! Training-point generation: Latin hypercube interior points, uniform
//! boundary grids and the per-rank seed scheme.
//!
//! Every random draw comes from ChaCha20 (a counter-based generator) keyed by
//! the run seed, with a separate stream per purpose so that, e.g., changing the
//! number of interior points never shifts the weight initialization.

use std::f64::consts::PI;
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problems::{exact_laplace, laplace_boundary, Domain, ProblemKind, ProblemSpec};

/// Seed offset of the held-out test set relative to the training seed.
pub const TEST_SEED_OFFSET: u64 = 500_000;

/// Independent random streams derived from one seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    Init = 1,
    Interior = 2,
    Observations = 3,
    Aux = 4,
}

pub fn rng_stream(seed: u64, stream: Stream) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

/// `seed + 1000·rank`.
pub fn worker_seed(seed: u64, rank: usize) -> u64 {
    seed + 1000 * rank as u64
}

/// Latin hypercube sample of `n` points in `domain`.
pub fn lhs(n: usize, domain: &Domain, seed: u64) -> Result<Array2<f64>> {
    lhs_with(n, domain, &mut rng_stream(seed, Stream::Interior))
}

/// Latin hypercube sample drawn from a caller-supplied generator.
///
/// Each coordinate axis is cut into `n` equal strata; a random permutation
/// assigns one stratum per point and the position inside the stratum is
/// uniform.
pub fn lhs_with<R: Rng + ?Sized>(n: usize, domain: &Domain, rng: &mut R) -> Result<Array2<f64>> {
    if n == 0 {
        return Err(Error::invalid("Latin hypercube needs at least one point"));
    }
    let dim = domain.dim();
    let mut out = Array2::zeros((n, dim));
    let mut strata: Vec<usize> = (0..n).collect();
    for d in 0..dim {
        let (lo, hi) = (domain.lo[d], domain.hi[d]);
        let width = hi - lo;
        if !(width > 0.0) {
            return Err(Error::invalid(format!("degenerate box edge {lo}..{hi}")));
        }
        strata.shuffle(rng);
        for (i, &s) in strata.iter().enumerate() {
            let u: f64 = rng.random();
            let x = lo + width * (s as f64 + u) / n as f64;
            // guard the open upper edge against rounding
            out[[i, d]] = x.min(hi);
        }
    }
    Ok(out)
}

/// `n` independent uniform points in `domain` (plain Monte Carlo).
pub fn uniform_with<R: Rng + ?Sized>(
    n: usize,
    domain: &Domain,
    rng: &mut R,
) -> Result<Array2<f64>> {
    if n == 0 {
        return Err(Error::invalid("uniform sampling needs at least one point"));
    }
    let dim = domain.dim();
    let mut out = Array2::zeros((n, dim));
    for i in 0..n {
        for d in 0..dim {
            let (lo, hi) = (domain.lo[d], domain.hi[d]);
            if !(hi > lo) {
                return Err(Error::invalid(format!("degenerate box edge {lo}..{hi}")));
            }
            let u: f64 = rng.random();
            out[[i, d]] = lo + (hi - lo) * u;
        }
    }
    Ok(out)
}

/// `n` evenly spaced values covering `[lo, hi]` inclusive.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Array1<f64> {
    match n {
        0 => Array1::zeros(0),
        1 => Array1::from_elem(1, lo),
        _ => Array1::linspace(lo, hi, n),
    }
}

/// Points, quadrature weights and optional observations of one loss term.
#[derive(Clone, Debug, PartialEq)]
pub struct ComponentSet {
    pub points: Array2<f64>,
    pub weights: Array1<f64>,
    pub observations: Option<Array2<f64>>,
}

impl ComponentSet {
    /// Monte-Carlo weights `1/N`.
    pub fn monte_carlo(points: Array2<f64>, observations: Option<Array2<f64>>) -> Self {
        let n = points.nrows();
        let weights = Array1::from_elem(n, if n == 0 { 0.0 } else { 1.0 / n as f64 });
        ComponentSet {
            points,
            weights,
            observations,
        }
    }

    pub fn empty(dim: usize) -> Self {
        ComponentSet::monte_carlo(Array2::zeros((0, dim)), None)
    }

    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Contiguous row block `[start, start+len)` with fresh Monte-Carlo weights.
    pub fn block(&self, start: usize, len: usize) -> Self {
        let rows = start..start + len;
        ComponentSet::monte_carlo(
            self.points.slice(ndarray::s![rows.clone(), ..]).to_owned(),
            self.observations
                .as_ref()
                .map(|o| o.slice(ndarray::s![rows, ..]).to_owned()),
        )
    }
}

/// Requested cardinalities per loss term.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    /// Interior collocation points.
    pub n_f: usize,
    /// Boundary points (Schrödinger: periodic t-pairs).
    pub n_g: usize,
    /// Initial-condition points.
    pub n_h: usize,
    /// Observations.
    pub m: usize,
}

impl Counts {
    /// Table defaults for a problem with `n_f` interior points.
    pub fn defaults(kind: ProblemKind, n_f: usize) -> Self {
        match kind {
            ProblemKind::Laplace1d => Counts {
                n_f,
                n_g: 2,
                n_h: 0,
                m: 0,
            },
            ProblemKind::Laplace1dInverse => Counts {
                n_f,
                n_g: 2,
                n_h: 0,
                m: 64,
            },
            ProblemKind::Schrodinger1d => Counts {
                n_f,
                n_g: 200,
                n_h: 200,
                m: 0,
            },
        }
    }

    pub fn validate(&self, kind: ProblemKind) -> Result<()> {
        let fail = |msg: String| Err(Error::invalid(msg));
        if self.n_f == 0 {
            return fail("N_f must be at least 1".into());
        }
        match kind {
            ProblemKind::Laplace1d | ProblemKind::Laplace1dInverse => {
                if self.n_g != 2 {
                    return fail(format!(
                        "Laplace has exactly 2 boundary points, got N_g = {}",
                        self.n_g
                    ));
                }
                if self.n_h != 0 {
                    return fail(format!(
                        "Laplace has no initial condition, got N_h = {}",
                        self.n_h
                    ));
                }
                if kind == ProblemKind::Laplace1d && self.m != 0 {
                    return fail(format!(
                        "forward Laplace takes no observations, got M = {}",
                        self.m
                    ));
                }
                if kind == ProblemKind::Laplace1dInverse && self.m == 0 {
                    return fail("inverse Laplace needs M >= 1 observations".into());
                }
            }
            ProblemKind::Schrodinger1d => {
                if self.n_g == 0 || self.n_h == 0 {
                    return fail("Schrödinger needs N_g >= 1 and N_h >= 1".into());
                }
                if self.m != 0 {
                    return fail(format!(
                        "Schrödinger takes no observations, got M = {}",
                        self.m
                    ));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingSet {
    pub kind: ProblemKind,
    pub f: ComponentSet,
    pub g: ComponentSet,
    pub h: ComponentSet,
    pub u: ComponentSet,
}

impl TrainingSet {
    pub fn counts(&self) -> Counts {
        Counts {
            n_f: self.f.len(),
            n_g: self.g.len(),
            n_h: self.h.len(),
            m: self.u.len(),
        }
    }

    /// `N̂ = N_f + N_g + N_h`.
    pub fn n_hat(&self) -> usize {
        self.f.len() + self.g.len() + self.h.len()
    }

    /// `N = N̂ + M`.
    pub fn total(&self) -> usize {
        self.n_hat() + self.u.len()
    }

    pub fn components(&self) -> [(&'static str, &ComponentSet); 4] {
        [
            ("f", &self.f),
            ("g", &self.g),
            ("h", &self.h),
            ("u", &self.u),
        ]
    }

    /// Writes one row per point: `component,coord0,coord1,weight,obs0,obs1`.
    /// Unused coordinate and observation cells are left empty.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
        w.write_record(["component", "coord0", "coord1", "weight", "obs0", "obs1"])
            .map_err(|e| csv_err(path, e))?;
        for (name, set) in self.components() {
            for i in 0..set.len() {
                let cell = |a: &Array2<f64>, j: usize| {
                    if j < a.ncols() {
                        a[[i, j]].to_string()
                    } else {
                        String::new()
                    }
                };
                let (o0, o1) = match &set.observations {
                    Some(o) => (cell(o, 0), cell(o, 1)),
                    None => (String::new(), String::new()),
                };
                w.write_record([
                    name.to_string(),
                    cell(&set.points, 0),
                    cell(&set.points, 1),
                    set.weights[i].to_string(),
                    o0,
                    o1,
                ])
                .map_err(|e| csv_err(path, e))?;
            }
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::format(path, e.to_string())
}

/// Samples a training (or, with a shifted seed, test) set.
pub fn build_training_set(spec: &ProblemSpec, counts: Counts, seed: u64) -> Result<TrainingSet> {
    counts.validate(spec.kind)?;
    let f = ComponentSet::monte_carlo(lhs(counts.n_f, &spec.domain, seed)?, None);
    let set = match spec.kind {
        ProblemKind::Laplace1d | ProblemKind::Laplace1dInverse => {
            let u = if counts.m > 0 {
                let mut rng = rng_stream(seed, Stream::Observations);
                let x = lhs_with(counts.m, &spec.domain, &mut rng)?;
                let obs = exact_laplace(&x);
                ComponentSet::monte_carlo(x, Some(obs))
            } else {
                ComponentSet::empty(1)
            };
            TrainingSet {
                kind: spec.kind,
                f,
                g: ComponentSet::monte_carlo(laplace_boundary(), None),
                h: ComponentSet::empty(1),
                u,
            }
        }
        ProblemKind::Schrodinger1d => {
            let (x_lo, x_hi) = (spec.domain.lo[0], spec.domain.hi[0]);
            let (t_lo, t_hi) = (spec.domain.lo[1], spec.domain.hi[1]);
            debug_assert!((t_hi - PI / 2.0).abs() < 1e-15);
            let ts = linspace(t_lo, t_hi, counts.n_g);
            let mut g = Array2::zeros((counts.n_g, 2));
            g.column_mut(0).fill(x_lo);
            g.column_mut(1).assign(&ts);
            let xs = linspace(x_lo, x_hi, counts.n_h);
            let mut h = Array2::zeros((counts.n_h, 2));
            h.column_mut(0).assign(&xs);
            h.column_mut(1).fill(t_lo);
            TrainingSet {
                kind: spec.kind,
                f,
                g: ComponentSet::monte_carlo(g, None),
                h: ComponentSet::monte_carlo(h, None),
                u: ComponentSet::empty(2),
            }
        }
    };
    Ok(set)
}

/// Held-out set of the same cardinality, seeded with [`TEST_SEED_OFFSET`].
pub fn build_test_set(spec: &ProblemSpec, counts: Counts, seed: u64) -> Result<TrainingSet> {
    build_training_set(spec, counts, seed + TEST_SEED_OFFSET)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::HashSet;

    fn laplace() -> ProblemSpec {
        ProblemSpec::new(ProblemKind::Laplace1d)
    }

    fn assert_stratified(points: &Array2<f64>, domain: &Domain) {
        let n = points.nrows();
        for d in 0..domain.dim() {
            let width = domain.hi[d] - domain.lo[d];
            let mut seen = vec![false; n];
            for &x in points.column(d) {
                assert!(x >= domain.lo[d] && x <= domain.hi[d]);
                let bin = (((x - domain.lo[d]) / width) * n as f64).floor() as usize;
                let bin = bin.min(n - 1);
                assert!(!seen[bin], "stratum {bin} hit twice in dim {d}");
                seen[bin] = true;
            }
        }
    }

    #[test]
    fn lhs_single_point_and_unit_bins() {
        let dom = laplace().domain;
        let one = lhs(1, &dom, 3).unwrap();
        assert_eq!(one.dim(), (1, 1));
        assert!(dom.contains(&[one[[0, 0]]]));

        let pts = lhs(8, &dom, 42).unwrap();
        let mut bins: Vec<i64> = pts.iter().map(|x| x.floor() as i64).collect();
        bins.sort();
        assert_eq!(bins, (-1..7).collect::<Vec<_>>());
    }

    #[test]
    fn lhs_is_deterministic_and_rejects_bad_input() {
        let dom = ProblemSpec::new(ProblemKind::Schrodinger1d).domain;
        let a = lhs(64, &dom, 9).unwrap();
        let b = lhs(64, &dom, 9).unwrap();
        assert!(a
            .iter()
            .zip(b.iter())
            .all(|(x, y)| x.to_bits() == y.to_bits()));
        assert!(lhs(0, &dom, 9).is_err());
        let flat = Domain {
            lo: vec![0.0],
            hi: vec![0.0],
        };
        assert!(lhs(4, &flat, 9).is_err());
    }

    #[test]
    fn lhs_stratification_for_listed_sizes() {
        for dom in [
            laplace().domain,
            ProblemSpec::new(ProblemKind::Schrodinger1d).domain,
        ] {
            for n in [1, 2, 7, 64, 1000] {
                assert_stratified(&lhs(n, &dom, n as u64 + 17).unwrap(), &dom);
            }
        }
    }

    proptest! {
        #[test]
        fn lhs_stratified_for_any_seed(n in 1usize..200, seed in any::<u64>()) {
            let dom = ProblemSpec::new(ProblemKind::Schrodinger1d).domain;
            assert_stratified(&lhs(n, &dom, seed).unwrap(), &dom);
        }
    }

    #[test]
    fn worker_seeds() {
        assert_eq!(worker_seed(1234, 0), 1234);
        assert_eq!(worker_seed(1234, 3), 4234);
        let seeds: HashSet<_> = (0..8).map(|r| worker_seed(1234, r)).collect();
        assert_eq!(seeds.len(), 8);
    }

    #[test]
    fn laplace_training_set() {
        let set = build_training_set(
            &laplace(),
            Counts::defaults(ProblemKind::Laplace1d, 64),
            1234,
        )
        .unwrap();
        assert_eq!(set.f.len(), 64);
        assert_eq!(set.g.points, laplace_boundary());
        assert_eq!(set.n_hat(), 66);
        assert_eq!(set.total(), 66);
        for (_, c) in set.components() {
            if !c.is_empty() {
                assert!((c.weights.sum() - 1.0).abs() < 1e-12);
                assert!(c.weights.iter().all(|&w| w > 0.0));
            }
        }
        let bad = Counts {
            n_g: 3,
            ..Counts::defaults(ProblemKind::Laplace1d, 64)
        };
        assert!(build_training_set(&laplace(), bad, 1).is_err());
        let bad = Counts {
            m: 5,
            ..Counts::defaults(ProblemKind::Laplace1d, 64)
        };
        assert!(build_training_set(&laplace(), bad, 1).is_err());
    }

    #[test]
    fn schrodinger_training_set() {
        let spec = ProblemSpec::new(ProblemKind::Schrodinger1d);
        let set = build_training_set(&spec, Counts::defaults(spec.kind, 100), 1).unwrap();
        assert_eq!(set.g.len(), 200);
        assert_eq!(set.h.len(), 200);
        assert!(set.g.points.column(0).iter().all(|&x| x == -5.0));
        assert_eq!(set.g.points[[0, 1]], 0.0);
        assert!((set.g.points[[199, 1]] - PI / 2.0).abs() < 1e-15);
        assert!(set.h.points.column(1).iter().all(|&t| t == 0.0));
        for i in 0..set.f.len() {
            assert!(spec
                .domain
                .contains(&[set.f.points[[i, 0]], set.f.points[[i, 1]]]));
        }
    }

    #[test]
    fn inverse_observations_are_exact_solution_values() {
        let spec = ProblemSpec::new(ProblemKind::Laplace1dInverse);
        let counts = Counts {
            m: 32,
            ..Counts::defaults(spec.kind, 16)
        };
        let set = build_training_set(&spec, counts, 5).unwrap();
        let obs = set.u.observations.as_ref().unwrap();
        assert_eq!(obs.nrows(), 32);
        for (x, o) in set.u.points.iter().zip(obs.iter()) {
            assert_eq!(*o, (PI * x).sin());
        }
    }

    #[test]
    fn ranks_draw_disjoint_sets() {
        let counts = Counts::defaults(ProblemKind::Laplace1d, 256);
        let a = build_training_set(&laplace(), counts, worker_seed(1234, 0)).unwrap();
        let b = build_training_set(&laplace(), counts, worker_seed(1234, 1)).unwrap();
        let seen: HashSet<u64> = a.f.points.iter().map(|x| x.to_bits()).collect();
        assert!(b.f.points.iter().all(|x| !seen.contains(&x.to_bits())));
        let test = build_test_set(&laplace(), counts, 1234).unwrap();
        assert!(test.f.points.iter().all(|x| !seen.contains(&x.to_bits())));
    }

    #[test]
    fn csv_dump_has_one_row_per_point() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("set.csv");
        let set =
            build_training_set(&laplace(), Counts::defaults(ProblemKind::Laplace1d, 5), 2).unwrap();
        set.write_csv(&path).unwrap();
        let mut r = csv::Reader::from_path(&path).unwrap();
        assert_eq!(
            r.headers().unwrap(),
            vec!["component", "coord0", "coord1", "weight", "obs0", "obs1"]
        );
        assert_eq!(r.records().count(), 7);
    }
}
