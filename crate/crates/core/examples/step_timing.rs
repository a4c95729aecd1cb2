//! Times one loss-and-gradient evaluation for the built-in problems.
//!
//! ```sh
//! cargo run --release -p pinn-core --example step_timing
//! ```

use std::time::Instant;

use pinn_core::model::glorot_init;
use pinn_core::problems::{ProblemKind, ProblemSpec};
use pinn_core::sampling::{build_training_set, Counts};
use pinn_core::train::{loss_and_grad, TrainSettings};

fn time(kind: ProblemKind, n_f: usize, width: usize, reps: usize) {
    let spec = ProblemSpec::new(kind);
    let settings = TrainSettings::new(&spec, width, 4, 1, 1e-4);
    let set = build_training_set(&spec, Counts::defaults(kind, n_f), 1234).unwrap();
    let params = glorot_init(&settings.dims, &spec.extras(), 1234).unwrap();
    let _ = loss_and_grad(&params, &spec, &set, &settings.omega, settings.activation).unwrap();
    let start = Instant::now();
    for _ in 0..reps {
        loss_and_grad(&params, &spec, &set, &settings.omega, settings.activation).unwrap();
    }
    let per = start.elapsed().as_secs_f64() / reps as f64;
    println!(
        "{kind:<16} N_f={n_f:<6} width={width:<4} {:.3} ms/step",
        per * 1e3
    );
}

fn main() {
    for n in [8, 64, 512, 4096] {
        time(ProblemKind::Laplace1d, n, 50, 20);
    }
    time(ProblemKind::Laplace1dInverse, 128, 50, 20);
    time(ProblemKind::Schrodinger1d, 2000, 100, 3);
}
