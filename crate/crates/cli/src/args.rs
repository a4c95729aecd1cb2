use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use pinn_core::config::ConfigLayer;
use pinn_core::model::Activation;
use pinn_core::parallel::ScalingMode;
use pinn_core::problems::ProblemKind;

#[derive(Debug, Parser)]
#[command(
    name = "pinn",
    version,
    about = "Physics-informed network training and h-analysis experiments"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one model and print its final error.
    Train {
        #[command(flatten)]
        common: Common,
        /// Write the trained parameters to this file.
        #[arg(long)]
        save: Option<PathBuf>,
        /// Schrödinger reference grid produced by `pinn oracle`.
        #[arg(long)]
        reference: Option<PathBuf>,
    },
    /// h-analysis: one model per (N_f, seed), with regime labels.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        reference: Option<PathBuf>,
    },
    /// Weak or strong scaling study with serial baselines.
    Scale {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        reference: Option<PathBuf>,
    },
    /// Summaries and SVG plots from a sweep.csv.
    Report {
        /// Directory holding sweep.csv (default: the output directory).
        #[arg(long)]
        input: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Compute the Schrödinger reference grid file.
    Oracle {
        #[arg(long, default_value_t = 256)]
        nx: usize,
        #[arg(long, default_value_t = 201)]
        nt: usize,
        /// Integration step (at most 1e-3).
        #[arg(long, default_value_t = pinn_core::reference::DEFAULT_DT)]
        dt: f64,
        /// Output file (default: <out-dir>/reference.grid).
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
}

/// Flags shared by the training subcommands; each maps to a config key.
#[derive(Debug, Default, Args)]
pub struct Common {
    /// JSON config file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_parser = parse_problem)]
    pub problem: Option<ProblemKind>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub depth: Option<usize>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long, value_parser = parse_activation)]
    pub activation: Option<Activation>,
    /// Interior collocation points (per rank in weak scaling).
    #[arg(long)]
    pub nf: Option<usize>,
    #[arg(long)]
    pub ng: Option<usize>,
    #[arg(long)]
    pub nh: Option<usize>,
    /// Observation points.
    #[arg(long)]
    pub m: Option<usize>,
    /// Seed; repeat or comma-separate for several.
    #[arg(long = "seed", alias = "seeds", value_delimiter = ',')]
    pub seeds: Vec<u64>,
    /// Number of ranks (scale: compared against one rank).
    #[arg(long)]
    pub ranks: Option<usize>,
    #[arg(long, value_parser = parse_mode)]
    pub mode: Option<ScalingMode>,
    /// Output root (default: $PINN_OUT_DIR, else ./out).
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Sweep sizes, comma-separated.
    #[arg(long, value_delimiter = ',')]
    pub n_list: Vec<usize>,
    /// Scaling rank counts, comma-separated.
    #[arg(long, value_delimiter = ',')]
    pub sizes: Vec<usize>,
    #[arg(long)]
    pub record_every: Option<usize>,
    #[arg(long)]
    pub regime_gap: Option<f64>,
    #[arg(long)]
    pub regime_error: Option<f64>,
    #[arg(long)]
    pub regime_factor: Option<f64>,
    #[arg(long)]
    pub c_pde: Option<f64>,
    #[arg(long)]
    pub c_quad_y: Option<f64>,
    #[arg(long)]
    pub c_quad_x: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub omega_u: Option<f64>,
    #[arg(long)]
    pub mu_hat: Option<f64>,
}

fn nonempty<T>(v: &[T]) -> Option<Vec<T>>
where
    T: Clone,
{
    (!v.is_empty()).then(|| v.to_vec())
}

impl Common {
    pub fn layer(&self) -> ConfigLayer {
        ConfigLayer {
            problem: self.problem,
            lr: self.lr,
            width: self.width,
            depth: self.depth,
            iterations: self.iterations,
            activation: self.activation,
            n_f: self.nf,
            n_g: self.ng,
            n_h: self.nh,
            m: self.m,
            seeds: nonempty(&self.seeds),
            ranks: self.ranks,
            mode: self.mode,
            out_dir: self.out_dir.clone(),
            n_list: nonempty(&self.n_list),
            sizes: nonempty(&self.sizes),
            record_every: self.record_every,
            regime_gap: self.regime_gap,
            regime_error: self.regime_error,
            regime_factor: self.regime_factor,
            c_pde: self.c_pde,
            c_quad_y: self.c_quad_y,
            c_quad_x: self.c_quad_x,
            alpha: self.alpha,
            beta: self.beta,
            omega_u: self.omega_u,
            mu_hat: self.mu_hat,
        }
    }
}

fn parse_problem(s: &str) -> Result<ProblemKind, String> {
    s.parse().map_err(|e: pinn_core::Error| e.to_string())
}

fn parse_mode(s: &str) -> Result<ScalingMode, String> {
    s.parse().map_err(|e: pinn_core::Error| e.to_string())
}

fn parse_activation(s: &str) -> Result<Activation, String> {
    match s {
        "tanh" => Ok(Activation::Tanh),
        "identity" => Ok(Activation::Identity),
        other => Err(format!(
            "unknown activation '{other}' (expected tanh or identity)"
        )),
    }
}
