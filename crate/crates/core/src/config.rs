//! Run configuration: a flat JSON document, command-line overrides and
//! per-problem defaults.
//!
//! Keys match the `sweep.csv` column names where one exists (`N_f`, `lr`,
//! `width`, ...). Resolution order is defaults, then file, then flags.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{BoundInputs, RegimeThresholds};
use crate::model::Activation;
use crate::parallel::ScalingMode;
use crate::problems::{ProblemKind, ProblemSpec};
use crate::sampling::Counts;
use crate::train::TrainSettings;

/// One layer of settings; unset keys fall through to the layer below.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigLayer {
    pub problem: Option<ProblemKind>,
    pub lr: Option<f64>,
    pub width: Option<usize>,
    pub depth: Option<usize>,
    pub iterations: Option<usize>,
    pub activation: Option<Activation>,
    #[serde(rename = "N_f")]
    pub n_f: Option<usize>,
    #[serde(rename = "N_g")]
    pub n_g: Option<usize>,
    #[serde(rename = "N_h")]
    pub n_h: Option<usize>,
    #[serde(rename = "M")]
    pub m: Option<usize>,
    pub seeds: Option<Vec<u64>>,
    pub ranks: Option<usize>,
    pub mode: Option<ScalingMode>,
    pub out_dir: Option<PathBuf>,
    /// Interior-point counts of an h-analysis sweep.
    #[serde(rename = "N_list")]
    pub n_list: Option<Vec<usize>>,
    /// Rank counts of a scaling study.
    pub sizes: Option<Vec<usize>>,
    pub record_every: Option<usize>,
    pub regime_gap: Option<f64>,
    pub regime_error: Option<f64>,
    pub regime_factor: Option<f64>,
    pub c_pde: Option<f64>,
    pub c_quad_y: Option<f64>,
    pub c_quad_x: Option<f64>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub omega_u: Option<f64>,
    pub mu_hat: Option<f64>,
}

impl ConfigLayer {
    pub fn from_json(text: &str) -> std::result::Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| Error::format(path, e.to_string()))
    }

    fn has_bounds(&self) -> bool {
        [
            self.c_pde,
            self.c_quad_y,
            self.c_quad_x,
            self.alpha,
            self.beta,
            self.omega_u,
            self.mu_hat,
        ]
        .iter()
        .any(Option::is_some)
    }

    /// `self` with every key set in `top` replaced by its value there.
    pub fn overlay(mut self, top: &ConfigLayer) -> ConfigLayer {
        macro_rules! take {
            ($($f:ident),*) => {$(
                if top.$f.is_some() {
                    self.$f = top.$f.clone();
                }
            )*};
        }
        take!(
            problem,
            lr,
            width,
            depth,
            iterations,
            activation,
            n_f,
            n_g,
            n_h,
            m,
            seeds,
            ranks,
            mode,
            out_dir,
            n_list,
            sizes,
            record_every,
            regime_gap,
            regime_error,
            regime_factor,
            c_pde,
            c_quad_y,
            c_quad_x,
            alpha,
            beta,
            omega_u,
            mu_hat
        );
        self
    }
}

/// Constants of the generalization bound; the paper leaves them symbolic.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundConstants {
    pub c_pde: f64,
    pub c_quad_y: f64,
    pub c_quad_x: f64,
    pub alpha: f64,
    pub beta: f64,
    pub omega_u: f64,
    pub mu_hat: f64,
}

impl BoundConstants {
    pub fn inputs(&self, n_hat: usize, m: usize) -> BoundInputs {
        BoundInputs {
            c_pde: self.c_pde,
            c_quad_y: self.c_quad_y,
            c_quad_x: self.c_quad_x,
            alpha: self.alpha,
            beta: self.beta,
            omega_u: self.omega_u,
            mu_hat: self.mu_hat,
            n_hat,
            m,
        }
    }
}

/// Fully resolved and validated configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Config {
    pub problem: ProblemKind,
    pub lr: f64,
    pub width: usize,
    pub depth: usize,
    pub iterations: usize,
    pub activation: Activation,
    pub counts: Counts,
    pub seeds: Vec<u64>,
    pub ranks: usize,
    pub mode: ScalingMode,
    pub out_dir: PathBuf,
    pub n_list: Vec<usize>,
    pub sizes: Vec<usize>,
    pub record_every: usize,
    pub thresholds: RegimeThresholds,
    pub bounds: Option<BoundConstants>,
}

/// Defaults of each problem as a layer.
pub fn defaults(problem: ProblemKind) -> ConfigLayer {
    let (width, iterations, n_f, n_list) = match problem {
        ProblemKind::Laplace1d | ProblemKind::Laplace1dInverse => (
            50,
            20_000,
            512,
            vec![8, 16, 32, 64, 100, 200, 400, 512, 4096],
        ),
        ProblemKind::Schrodinger1d => (100, 30_000, 2000, vec![250, 500, 1000, 2000, 4000]),
    };
    let counts = Counts::defaults(problem, n_f);
    let t = RegimeThresholds::default();
    ConfigLayer {
        problem: Some(problem),
        lr: Some(1e-4),
        width: Some(width),
        depth: Some(4),
        iterations: Some(iterations),
        activation: Some(Activation::Tanh),
        n_f: Some(counts.n_f),
        n_g: Some(counts.n_g),
        n_h: Some(counts.n_h),
        m: Some(counts.m),
        seeds: Some(vec![0, 1, 2, 3]),
        ranks: Some(1),
        mode: Some(ScalingMode::Weak),
        out_dir: Some(PathBuf::from("out")),
        n_list: Some(n_list),
        sizes: Some(vec![1, 2, 4, 8]),
        record_every: Some(100),
        regime_gap: Some(t.gap),
        regime_error: Some(t.error),
        regime_factor: Some(t.factor),
        ..ConfigLayer::default()
    }
}

impl Config {
    /// Resolves defaults ← `file` ← `flags`. The problem is taken from the
    /// highest layer naming one (Laplace otherwise) and selects the defaults.
    pub fn resolve(file: Option<&ConfigLayer>, flags: &ConfigLayer) -> Result<Config> {
        let problem = flags
            .problem
            .or(file.and_then(|f| f.problem))
            .unwrap_or(ProblemKind::Laplace1d);
        let mut merged = defaults(problem);
        if let Some(f) = file {
            merged = merged.overlay(f);
        }
        let bounds_given = file.is_some_and(ConfigLayer::has_bounds) || flags.has_bounds();
        let merged = merged.overlay(flags);
        let need = |v: Option<f64>| v.unwrap_or(0.0);
        let config = Config {
            problem,
            lr: merged.lr.unwrap_or_default(),
            width: merged.width.unwrap_or_default(),
            depth: merged.depth.unwrap_or_default(),
            iterations: merged.iterations.unwrap_or_default(),
            activation: merged.activation.unwrap_or_default(),
            counts: Counts {
                n_f: merged.n_f.unwrap_or_default(),
                n_g: merged.n_g.unwrap_or_default(),
                n_h: merged.n_h.unwrap_or_default(),
                m: merged.m.unwrap_or_default(),
            },
            seeds: merged.seeds.unwrap_or_default(),
            ranks: merged.ranks.unwrap_or_default(),
            mode: merged.mode.unwrap_or(ScalingMode::Weak),
            out_dir: merged.out_dir.unwrap_or_default(),
            n_list: merged.n_list.unwrap_or_default(),
            sizes: merged.sizes.unwrap_or_default(),
            record_every: merged.record_every.unwrap_or_default(),
            thresholds: RegimeThresholds {
                gap: need(merged.regime_gap),
                error: need(merged.regime_error),
                factor: need(merged.regime_factor),
            },
            bounds: bounds_given.then(|| BoundConstants {
                c_pde: merged.c_pde.unwrap_or(1.0),
                c_quad_y: merged.c_quad_y.unwrap_or(1.0),
                c_quad_x: merged.c_quad_x.unwrap_or(1.0),
                alpha: merged.alpha.unwrap_or(1.0),
                beta: merged.beta.unwrap_or(1.0),
                omega_u: merged.omega_u.unwrap_or(0.0),
                mu_hat: merged.mu_hat.unwrap_or(0.0),
            }),
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: String| Err(Error::invalid(format!("{field}: {msg}")));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr", format!("must be positive, got {}", self.lr));
        }
        if self.width == 0 {
            return bad("width", "must be at least 1".into());
        }
        if self.depth == 0 {
            return bad("depth", "must be at least 1".into());
        }
        if self.iterations == 0 {
            return bad("iterations", "must be at least 1".into());
        }
        if self.record_every == 0 {
            return bad("record_every", "must be at least 1".into());
        }
        self.counts.validate(self.problem)?;
        if self.seeds.is_empty() {
            return bad("seeds", "need at least one seed".into());
        }
        if self.ranks == 0 {
            return bad("ranks", "must be at least 1".into());
        }
        if self.n_list.is_empty() || self.n_list.contains(&0) {
            return bad("N_list", "needs one or more positive counts".into());
        }
        if self.sizes.is_empty() || self.sizes.contains(&0) {
            return bad("sizes", "needs one or more positive rank counts".into());
        }
        let t = &self.thresholds;
        if !(t.gap > 0.0 && t.error > 0.0 && t.factor >= 1.0) {
            return bad(
                "regime thresholds",
                "gap and error must be positive and factor at least 1".into(),
            );
        }
        if let Some(b) = &self.bounds {
            let consts = [b.c_pde, b.c_quad_y, b.c_quad_x, b.omega_u, b.mu_hat];
            if consts.iter().any(|c| !(*c >= 0.0)) || !(b.alpha > 0.0) || !(b.beta > 0.0) {
                return bad(
                    "bound constants",
                    "constants must be nonnegative and rates positive".into(),
                );
            }
        }
        Ok(())
    }

    pub fn spec(&self) -> ProblemSpec {
        ProblemSpec::new(self.problem)
    }

    pub fn train_settings(&self) -> TrainSettings {
        let mut s = TrainSettings::new(
            &self.spec(),
            self.width,
            self.depth,
            self.iterations,
            self.lr,
        );
        s.activation = self.activation;
        s.record_every = self.record_every;
        s
    }

    /// Counts of the configured problem with a different interior size.
    pub fn counts_with(&self, n_f: usize) -> Counts {
        Counts { n_f, ..self.counts }
    }
}
