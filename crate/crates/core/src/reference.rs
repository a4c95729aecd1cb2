//! Reference solution of the focusing cubic Schrödinger equation
//! `i u_t + 0.5 u_xx + |u|² u = 0` on a periodic interval, by Strang
//! split-step Fourier integration.
//!
//! Each step applies half a nonlinear phase rotation `u ← u·exp(i|u|² dt/2)`,
//! a full linear step `û ← û·exp(−i k² dt/2)` in Fourier space, and another
//! half rotation. Both substeps preserve `∫|u|²` exactly, so any drift beyond
//! rounding signals a broken configuration and aborts the run.

use std::f64::consts::PI;
use std::fs;
use std::io::Write;
use std::path::Path;

use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};

/// Relative mass drift that aborts integration.
pub const MASS_TOLERANCE: f64 = 1e-6;

/// Largest admissible time step.
pub const MAX_DT: f64 = 1e-3;

/// Step used when none is requested; small enough that halving it moves the
/// soliton field by well under 1e-6.
pub const DEFAULT_DT: f64 = 1e-5;

const GRID_MAGIC: &[u8; 8] = b"NLSGRID1";

/// Complex field sampled on a uniform `(t, x)` grid, `x` periodic.
#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceGrid {
    pub n_x: usize,
    pub n_t: usize,
    pub x_lo: f64,
    /// Periodic end of the x interval (not a grid point).
    pub x_hi: f64,
    pub t_lo: f64,
    pub t_hi: f64,
    /// Row-major, time is the slow index: `values[k * n_x + j] = u(t_k, x_j)`.
    pub values: Vec<Complex64>,
}

impl ReferenceGrid {
    pub fn dx(&self) -> f64 {
        (self.x_hi - self.x_lo) / self.n_x as f64
    }

    pub fn dt(&self) -> f64 {
        if self.n_t < 2 {
            0.0
        } else {
            (self.t_hi - self.t_lo) / (self.n_t - 1) as f64
        }
    }

    pub fn x(&self, j: usize) -> f64 {
        self.x_lo + j as f64 * self.dx()
    }

    pub fn t(&self, k: usize) -> f64 {
        self.t_lo + k as f64 * self.dt()
    }

    pub fn at(&self, k: usize, j: usize) -> Complex64 {
        self.values[k * self.n_x + j]
    }

    /// Row `k` of the grid.
    pub fn slice(&self, k: usize) -> &[Complex64] {
        &self.values[k * self.n_x..(k + 1) * self.n_x]
    }

    /// Bilinear interpolation, periodic in `x` and clamped in `t`.
    pub fn interpolate(&self, x: f64, t: f64) -> Complex64 {
        let period = self.x_hi - self.x_lo;
        let p = (x - self.x_lo).rem_euclid(period) / self.dx();
        let j0 = (p.floor() as usize).min(self.n_x - 1);
        let fx = p - j0 as f64;
        let j1 = (j0 + 1) % self.n_x;
        let (k0, k1, ft) = if self.n_t < 2 {
            (0, 0, 0.0)
        } else {
            let q = ((t - self.t_lo) / self.dt()).clamp(0.0, (self.n_t - 1) as f64);
            let k0 = (q.floor() as usize).min(self.n_t - 2);
            (k0, k0 + 1, q - k0 as f64)
        };
        let lo = self.at(k0, j0) * (1.0 - fx) + self.at(k0, j1) * fx;
        let hi = self.at(k1, j0) * (1.0 - fx) + self.at(k1, j1) * fx;
        lo * (1.0 - ft) + hi * ft
    }

    /// Writes the grid file.
    ///
    /// Byte layout, little-endian: `b"NLSGRID1"`, `u64 n_x`, `u64 n_t`,
    /// `f64 x_lo`, `f64 x_hi`, `f64 t_lo`, `f64 t_hi`, then `n_t·n_x` pairs
    /// `(f64 re, f64 im)` in row-major order with time as the slow index.
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::with_capacity(56 + 16 * self.values.len());
        buf.extend_from_slice(GRID_MAGIC);
        buf.extend_from_slice(&(self.n_x as u64).to_le_bytes());
        buf.extend_from_slice(&(self.n_t as u64).to_le_bytes());
        for v in [self.x_lo, self.x_hi, self.t_lo, self.t_hi] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        for z in &self.values {
            buf.extend_from_slice(&z.re.to_le_bytes());
            buf.extend_from_slice(&z.im.to_le_bytes());
        }
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&buf).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let bad = |m: &str| Error::format(path, m.to_string());
        if bytes.len() < 56 || &bytes[..8] != GRID_MAGIC {
            return Err(bad("not a reference grid file"));
        }
        let word = |i: usize| -> [u8; 8] { bytes[8 + 8 * i..16 + 8 * i].try_into().unwrap() };
        let n_x = u64::from_le_bytes(word(0)) as usize;
        let n_t = u64::from_le_bytes(word(1)) as usize;
        let [x_lo, x_hi, t_lo, t_hi] = [2, 3, 4, 5].map(|i| f64::from_le_bytes(word(i)));
        let count = n_x
            .checked_mul(n_t)
            .ok_or_else(|| bad("grid dimensions overflow"))?;
        if n_x == 0 || n_t == 0 || bytes.len() != 56 + 16 * count {
            return Err(bad("grid size does not match the header"));
        }
        let values = bytes[56..]
            .chunks_exact(16)
            .map(|c| {
                Complex64::new(
                    f64::from_le_bytes(c[..8].try_into().unwrap()),
                    f64::from_le_bytes(c[8..].try_into().unwrap()),
                )
            })
            .collect();
        Ok(ReferenceGrid {
            n_x,
            n_t,
            x_lo,
            x_hi,
            t_lo,
            t_hi,
            values,
        })
    }
}

/// Mass `∫|u|² dx` by the rectangle rule on a periodic grid.
pub fn mass(u: &[Complex64], dx: f64) -> f64 {
    u.iter().map(|z| z.norm_sqr()).sum::<f64>() * dx
}

/// Integrates from `initial` (sampled at `x_lo + j·L/n`) and records the field
/// at `n_t` equally spaced times in `[0, t_end]`. The step is the largest
/// value not exceeding `max_dt` that divides each output interval evenly.
pub fn split_step(
    initial: &[Complex64],
    x_lo: f64,
    x_hi: f64,
    t_end: f64,
    n_t: usize,
    max_dt: f64,
) -> Result<ReferenceGrid> {
    let n_x = initial.len();
    if n_x < 2 || !n_x.is_power_of_two() {
        return Err(Error::invalid(format!(
            "n_x must be a power of two, got {n_x}"
        )));
    }
    if n_t < 1 {
        return Err(Error::invalid("need at least one output time"));
    }
    if !(max_dt > 0.0) || max_dt > MAX_DT {
        return Err(Error::invalid(format!(
            "time step must be in (0, {MAX_DT}], got {max_dt}"
        )));
    }
    if !(x_hi > x_lo) || !(t_end >= 0.0) {
        return Err(Error::invalid("invalid integration domain"));
    }
    let length = x_hi - x_lo;
    let dx = length / n_x as f64;
    let out_dt = if n_t > 1 {
        t_end / (n_t - 1) as f64
    } else {
        0.0
    };
    let substeps = if out_dt > 0.0 {
        (out_dt / max_dt).ceil() as usize
    } else {
        0
    };
    let dt = if substeps > 0 {
        out_dt / substeps as f64
    } else {
        0.0
    };

    let mut planner = FftPlanner::<f64>::new();
    let forward = planner.plan_fft_forward(n_x);
    let inverse = planner.plan_fft_inverse(n_x);
    let dispersion: Vec<Complex64> = (0..n_x)
        .map(|j| {
            let m = if j < n_x / 2 {
                j as f64
            } else {
                j as f64 - n_x as f64
            };
            let k = 2.0 * PI * m / length;
            Complex64::from_polar(1.0, -0.5 * k * k * dt)
        })
        .collect();
    let scale = 1.0 / n_x as f64;

    let mut u = initial.to_vec();
    let mass0 = mass(&u, dx);
    let mut values = Vec::with_capacity(n_x * n_t);
    values.extend_from_slice(&u);
    let rotate = |u: &mut [Complex64], h: f64| {
        for z in u.iter_mut() {
            *z *= Complex64::from_polar(1.0, z.norm_sqr() * h);
        }
    };
    for _ in 1..n_t {
        for _ in 0..substeps {
            rotate(&mut u, 0.5 * dt);
            forward.process(&mut u);
            for (z, d) in u.iter_mut().zip(&dispersion) {
                *z *= d * scale;
            }
            inverse.process(&mut u);
            rotate(&mut u, 0.5 * dt);
        }
        let drift = (mass(&u, dx) - mass0).abs() / mass0.max(f64::MIN_POSITIVE);
        if !(drift <= MASS_TOLERANCE) {
            return Err(Error::MassDrift(drift));
        }
        values.extend_from_slice(&u);
    }
    Ok(ReferenceGrid {
        n_x,
        n_t,
        x_lo,
        x_hi,
        t_lo: 0.0,
        t_hi: t_end,
        values,
    })
}

/// Reference field on `[−5, 5) × [0, π/2]` from `u(x, 0) = 2 sech(x)`.
pub fn schrodinger_reference(n_x: usize, n_t: usize, max_dt: f64) -> Result<ReferenceGrid> {
    let (x_lo, x_hi) = (-5.0, 5.0);
    let dx = (x_hi - x_lo) / n_x as f64;
    let initial: Vec<Complex64> = (0..n_x)
        .map(|j| {
            let x = x_lo + j as f64 * dx;
            Complex64::new(2.0 / x.cosh(), 0.0)
        })
        .collect();
    split_step(&initial, x_lo, x_hi, PI / 2.0, n_t, max_dt)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plane_wave_rotates_as_exp_it() {
        let initial = vec![Complex64::new(1.0, 0.0); 64];
        let grid = split_step(&initial, -5.0, 5.0, 1.0, 2, 1e-3).unwrap();
        let expected = Complex64::from_polar(1.0, 1.0);
        for z in grid.slice(1) {
            assert!((z - expected).norm() < 1e-8, "{z} vs {expected}");
        }
    }

    #[test]
    fn mass_is_conserved() {
        let grid = schrodinger_reference(256, 21, 1e-3).unwrap();
        let m0 = mass(grid.slice(0), grid.dx());
        for k in 0..grid.n_t {
            let m = mass(grid.slice(k), grid.dx());
            assert!((m - m0).abs() / m0 < 1e-8);
        }
    }

    #[test]
    fn soliton_focuses_before_quarter_period() {
        let grid = schrodinger_reference(256, 201, 1e-3).unwrap();
        let peak = |k: usize| grid.slice(k).iter().map(|z| z.norm()).fold(0.0, f64::max);
        let k_mid = (0..grid.n_t)
            .min_by(|&a, &b| {
                (grid.t(a) - PI / 4.0)
                    .abs()
                    .total_cmp(&(grid.t(b) - PI / 4.0).abs())
            })
            .unwrap();
        assert!(
            peak(k_mid) > peak(0) + 0.5,
            "{} vs {}",
            peak(k_mid),
            peak(0)
        );
    }

    #[test]
    fn splitting_converges_at_second_order() {
        let run = |dt| schrodinger_reference(256, 11, dt).unwrap();
        let (a, b, c) = (run(1e-3), run(5e-4), run(2.5e-4));
        let diff = |p: &ReferenceGrid, q: &ReferenceGrid| {
            p.values
                .iter()
                .zip(&q.values)
                .map(|(x, y)| (x - y).norm())
                .fold(0.0, f64::max)
        };
        let ratio = diff(&a, &b) / diff(&b, &c);
        assert!((3.5..4.5).contains(&ratio), "{ratio}");
    }

    #[test]
    fn halving_the_default_step_moves_the_field_below_1e_6() {
        let a = schrodinger_reference(256, 11, DEFAULT_DT).unwrap();
        let b = schrodinger_reference(256, 11, DEFAULT_DT / 2.0).unwrap();
        let diff = a
            .values
            .iter()
            .zip(&b.values)
            .map(|(p, q)| (p - q).norm())
            .fold(0.0, f64::max);
        assert!(diff < 1e-6, "{diff}");
    }

    #[test]
    fn rejects_bad_configuration() {
        let u = vec![Complex64::new(1.0, 0.0); 48];
        assert!(split_step(&u, -5.0, 5.0, 1.0, 2, 1e-3).is_err());
        let u = vec![Complex64::new(1.0, 0.0); 64];
        assert!(split_step(&u, -5.0, 5.0, 1.0, 2, 1e-2).is_err());
    }

    #[test]
    fn interpolation_hits_grid_nodes_and_wraps() {
        let grid = schrodinger_reference(64, 5, 1e-3).unwrap();
        for k in [0, 2, 4] {
            for j in [0, 17, 63] {
                let z = grid.interpolate(grid.x(j), grid.t(k));
                assert!((z - grid.at(k, j)).norm() < 1e-12);
            }
        }
        // x_hi is x_lo by periodicity
        let z = grid.interpolate(5.0, 0.0);
        assert!((z - grid.at(0, 0)).norm() < 1e-12);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ref.bin");
        let grid = schrodinger_reference(32, 3, 1e-3).unwrap();
        grid.write(&path).unwrap();
        assert_eq!(ReferenceGrid::read(&path).unwrap(), grid);
        fs::write(&path, b"junk").unwrap();
        assert!(ReferenceGrid::read(&path).is_err());
    }
}
