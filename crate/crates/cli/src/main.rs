mod args;
mod report;

use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::error::ErrorKind;
use clap::Parser;
use pinn_core::config::{Config, ConfigLayer};
use pinn_core::harness::{
    persist_run, read_sweep, run_h_sweep, run_scaling, RunMode, RunRecord, Study,
};
use pinn_core::metrics::{median, rho};
use pinn_core::problems::{ProblemKind, LAMBDA};
use pinn_core::reference::{schrodinger_reference, ReferenceGrid};
use pinn_core::Error;

use args::{Cli, Command, Common};

/// Exit status 1 for bad input, 2 for failures while running.
enum Failure {
    Config(String),
    Runtime(String),
}

impl Failure {
    fn config(msg: impl Display) -> Self {
        Failure::Config(msg.to_string())
    }
}

/// Invalid arguments surfacing from the library are the user's to fix.
impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidArgument(_) => Failure::Config(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid arguments");
            eprintln!("{first}; see `pinn --help`");
            return ExitCode::from(1);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn run(command: Command) -> Outcome {
    match command {
        Command::Train {
            common,
            save,
            reference,
        } => train(&common, save.as_deref(), reference.as_deref()),
        Command::Sweep { common, reference } => sweep(&common, reference.as_deref()),
        Command::Scale { common, reference } => scale(&common, reference.as_deref()),
        Command::Report { input, common } => report(&common, input.as_deref()),
        Command::Oracle {
            nx,
            nt,
            dt,
            output,
            out_dir,
        } => oracle(nx, nt, dt, output, out_dir),
    }
}

fn env_out_dir() -> Option<PathBuf> {
    std::env::var_os("PINN_OUT_DIR")
        .filter(|v| !v.is_empty())
        .map(PathBuf::from)
}

/// Defaults, then `$PINN_OUT_DIR`, then the config file, then flags.
fn load_config(common: &Common) -> Result<(Config, Option<ConfigLayer>), Failure> {
    let file = match &common.config {
        Some(path) => Some(ConfigLayer::read(path).map_err(Failure::config)?),
        None => None,
    };
    let env = ConfigLayer {
        out_dir: env_out_dir(),
        ..ConfigLayer::default()
    };
    let below_flags = match &file {
        Some(f) => env.overlay(f),
        None => env,
    };
    let config = Config::resolve(Some(&below_flags), &common.layer()).map_err(Failure::config)?;
    ensure_writable(&config.out_dir)?;
    Ok((config, file))
}

fn ensure_writable(dir: &Path) -> Outcome {
    let fail = |e: std::io::Error| {
        Failure::config(format!(
            "output directory {} is not writable ({e}); pass --out-dir or set PINN_OUT_DIR",
            dir.display()
        ))
    };
    fs::create_dir_all(dir).map_err(fail)?;
    let probe = dir.join(format!(".pinn-probe-{}", std::process::id()));
    fs::write(&probe, b"").map_err(fail)?;
    let _ = fs::remove_file(&probe);
    Ok(())
}

fn study(config: &Config, reference: Option<&Path>) -> Result<Study, Failure> {
    let spec = config.spec();
    let settings = config.train_settings();
    match (config.problem, reference) {
        (ProblemKind::Schrodinger1d, Some(path)) => {
            let grid = ReferenceGrid::read(path).map_err(Failure::config)?;
            Ok(Study {
                spec,
                settings,
                counts: config.counts,
                reference: Some(Arc::new(grid)),
            })
        }
        (ProblemKind::Schrodinger1d, None) => {
            eprintln!(
                "computing the reference solution (use `pinn oracle` and --reference to reuse it)"
            );
            Ok(Study::new(spec, settings, config.counts)?)
        }
        _ => Ok(Study::new(spec, settings, config.counts)?),
    }
}

fn persist(record: &RunRecord, dir: &Path) -> Result<String, Failure> {
    persist_run(record, dir).map_err(|e| Failure::Runtime(e.to_string()))
}

fn sci(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.4e}")
    } else {
        "-".into()
    }
}

fn train(common: &Common, save: Option<&Path>, reference: Option<&Path>) -> Outcome {
    let (config, _) = load_config(common)?;
    let study = study(&config, reference)?;
    let seed = config.seeds[0];
    let n_f = config.counts.n_f;
    let (record, params) = if config.ranks == 1 {
        study.run_serial(n_f, seed)?
    } else {
        let logs = config.out_dir.join("logs").join(format!(
            "train_{}_size{}_seed{seed}",
            config.mode, config.ranks
        ));
        fs::create_dir_all(&logs)
            .map_err(|e| Failure::config(format!("{}: {e}", logs.display())))?;
        study.run_distributed(config.mode, config.ranks, n_f, seed, Some(&logs))?
    };
    let id = persist(&record, &config.out_dir)?;
    if let Some(reason) = &record.failure {
        return Err(Failure::Runtime(format!("run {id} failed: {reason}")));
    }
    if let (Some(path), Some(params)) = (save, params) {
        params.write_snapshot(path)?;
    }
    println!("error = {}", sci(record.error));
    println!(
        "best_error = {} at iteration {}",
        sci(record.best_error),
        record.best_iter
    );
    println!(
        "loss_train = {}  loss_test = {}  gap_rel = {}",
        sci(record.loss_train),
        sci(record.loss_test),
        sci(record.gap_rel)
    );
    for (name, v) in &record.extras {
        if name == LAMBDA {
            println!("lambda = {v:.6}");
        } else {
            println!("{name} = {v:.6}");
        }
    }
    println!(
        "time = {:.2} s  ({:.0} point-iterations/s)",
        record.time_total_s, record.pointsec
    );
    eprintln!(
        "wrote {}",
        config.out_dir.join(format!("run_{id}.json")).display()
    );
    Ok(())
}

fn progress_line(r: &RunRecord) {
    let status = match &r.failure {
        Some(reason) => format!("FAILED ({reason})"),
        None => format!("error {}", sci(r.error)),
    };
    eprintln!(
        "[{} size {} N_f {} seed {}] {status}, {:.1} s",
        r.mode.as_str(),
        r.size,
        r.counts.n_f,
        r.seed,
        r.time_total_s
    );
}

fn sweep(common: &Common, reference: Option<&Path>) -> Outcome {
    let (config, _) = load_config(common)?;
    let study = study(&config, reference)?;
    let records = run_h_sweep(
        &study,
        &config.n_list,
        &config.seeds,
        &config.thresholds,
        &mut progress_line,
    )?;
    for r in &records {
        persist(r, &config.out_dir)?;
    }
    let spec = config.spec();
    println!(
        "{:>7} {:>8} {:>12} {:>12} {:>15}",
        "N_f", "rho", "med error", "med gap", "regime"
    );
    for &n in &config.n_list {
        let at: Vec<&RunRecord> = records.iter().filter(|r| r.counts.n_f == n).collect();
        let errors: Vec<f64> = at
            .iter()
            .map(|r| if r.failed() { 1.0 } else { r.error })
            .collect();
        let gaps: Vec<f64> = at.iter().map(|r| r.gap_rel).collect();
        let density = rho(n, spec.domain.volume(), spec.input_dim)?;
        let regime = at
            .first()
            .and_then(|r| r.regime)
            .map(|r| r.as_str())
            .unwrap_or("-");
        println!(
            "{n:>7} {density:>8.2} {:>12} {:>12} {regime:>15}",
            median(&errors).map(sci).unwrap_or("-".into()),
            median(&gaps).map(sci).unwrap_or("-".into()),
        );
    }
    eprintln!("wrote {}", config.out_dir.join("sweep.csv").display());
    Ok(())
}

fn scale(common: &Common, reference: Option<&Path>) -> Outcome {
    let (config, file) = load_config(common)?;
    // An explicit rank count compares that many ranks against one.
    let explicit = common.ranks.or(file.and_then(|f| f.ranks));
    let sizes = match explicit {
        Some(1) => vec![1],
        Some(k) => vec![1, k],
        None => config.sizes.clone(),
    };
    let study = study(&config, reference)?;
    let logs = config.out_dir.join("logs");
    let records = run_scaling(
        &study,
        config.mode,
        &sizes,
        config.counts.n_f,
        &config.seeds,
        Some(&logs),
        &mut progress_line,
    )?;
    for r in &records {
        persist(r, &config.out_dir)?;
    }
    println!(
        "{:>6} {:>5} {:>8} {:>12} {:>10} {:>8} {:>6}",
        "mode", "size", "seed", "error", "time (s)", "E_ff", "S_up"
    );
    let mut failed = 0;
    for r in records.iter().filter(|r| r.mode != RunMode::Serial) {
        failed += usize::from(r.failed());
        let (eff, sup) = match r.efficiency {
            Some((e, s)) => (format!("{:.2}%", 100.0 * e), format!("{s:.2}")),
            None => ("-".into(), "-".into()),
        };
        println!(
            "{:>6} {:>5} {:>8} {:>12} {:>10.3} {eff:>8} {sup:>6}",
            r.mode.as_str(),
            r.size,
            r.seed,
            sci(r.error),
            r.t500_mean.unwrap_or(r.time_total_s),
        );
    }
    eprintln!("per-rank logs under {}", logs.display());
    if failed > 0 {
        return Err(Failure::Runtime(format!(
            "{failed} distributed run(s) failed"
        )));
    }
    Ok(())
}

fn report(common: &Common, input: Option<&Path>) -> Outcome {
    let (config, _) = load_config(common)?;
    let dir = input.unwrap_or(&config.out_dir);
    let path = dir.join("sweep.csv");
    if !path.exists() {
        return Err(Failure::config(format!(
            "{}: no such file; run `pinn sweep` first or pass --input",
            path.display()
        )));
    }
    let rows = read_sweep(&path).map_err(Failure::config)?;
    if rows.is_empty() {
        return Err(Failure::config(format!(
            "{}: no runs recorded",
            path.display()
        )));
    }
    let rep = report::render(&rows, &config.thresholds, config.bounds.as_ref());
    let write = |name: &str, text: &str| {
        let p = config.out_dir.join(name);
        fs::write(&p, text).map_err(|e| Failure::Runtime(format!("{}: {e}", p.display())))
    };
    for (name, svg) in &rep.plots {
        write(name, svg)?;
    }
    write("report.md", &rep.markdown)?;
    print!("{}", rep.markdown);
    Ok(())
}

fn oracle(
    nx: usize,
    nt: usize,
    dt: f64,
    output: Option<PathBuf>,
    out_dir: Option<PathBuf>,
) -> Outcome {
    let path = match output {
        Some(p) => p,
        None => {
            let dir = out_dir
                .or_else(env_out_dir)
                .unwrap_or_else(|| PathBuf::from("out"));
            ensure_writable(&dir)?;
            dir.join("reference.grid")
        }
    };
    let grid = schrodinger_reference(nx, nt, dt)?;
    grid.write(&path)?;
    println!(
        "wrote {} ({nx} x {nt}, step at most {dt:e})",
        path.display(),
    );
    Ok(())
}
