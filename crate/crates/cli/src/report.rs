//! Summary tables and SVG plots from `sweep.csv` rows.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use pinn_core::config::BoundConstants;
use pinn_core::harness::SweepRow;
use pinn_core::metrics::{
    classify_regime, generalization_bound, median, regime_regressions, rho, Regime,
    RegimeThresholds, SizeSummary,
};
use pinn_core::parallel::efficiency_speedup;
use pinn_core::problems::{ProblemKind, ProblemSpec};

/// Rendered report: markdown text plus named SVG documents.
pub struct Report {
    pub markdown: String,
    pub plots: Vec<(String, String)>,
}

struct SizeStats {
    n: usize,
    errors: Vec<f64>,
    gaps: Vec<f64>,
    losses: Vec<f64>,
    n_hat: usize,
    m: usize,
    failed: usize,
}

fn fmt_e(v: Option<f64>) -> String {
    match v {
        Some(x) if x.is_finite() => format!("{x:.3e}"),
        _ => "-".into(),
    }
}

fn min_max(v: &[f64]) -> (f64, f64) {
    v.iter()
        .filter(|x| x.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| {
            (a.min(x), b.max(x))
        })
}

pub fn render(
    rows: &[SweepRow],
    thresholds: &RegimeThresholds,
    bounds: Option<&BoundConstants>,
) -> Report {
    let mut md = String::from("# Sweep report\n");
    let mut plots = Vec::new();

    let mut problems: BTreeMap<&str, Vec<&SweepRow>> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.mode == "serial") {
        problems.entry(r.problem.as_str()).or_default().push(r);
    }
    for (problem, runs) in &problems {
        let mut sizes: BTreeMap<usize, SizeStats> = BTreeMap::new();
        for r in runs {
            let s = sizes.entry(r.n_f).or_insert_with(|| SizeStats {
                n: r.n_f,
                errors: Vec::new(),
                gaps: Vec::new(),
                losses: Vec::new(),
                n_hat: r.n_f + r.n_g + r.n_h,
                m: r.m,
                failed: 0,
            });
            if r.error.is_finite() {
                s.errors.push(r.error);
                s.gaps.push(r.gap_rel);
                s.losses.push(r.loss_train);
            } else {
                s.failed += 1;
                s.errors.push(1.0);
            }
        }
        let summaries: Vec<SizeSummary> = sizes
            .values()
            .map(|s| SizeSummary {
                n: s.n,
                errors: s.errors.clone(),
                gaps: s.gaps.clone(),
            })
            .collect();
        let labels: BTreeMap<usize, Regime> = classify_regime(&summaries, thresholds)
            .map(|l| l.into_iter().collect())
            .unwrap_or_default();
        let spec = problem.parse::<ProblemKind>().ok().map(ProblemSpec::new);

        let _ = writeln!(md, "\n## {problem}: h-analysis\n");
        let mut header = "| N_f | rho | runs | failed | median error | min error | max error | median gap | regime |".to_string();
        let mut rule = "|---|---|---|---|---|---|---|---|---|".to_string();
        if bounds.is_some() {
            header.push_str(" bound |");
            rule.push_str("---|");
        }
        let _ = writeln!(md, "{header}\n{rule}");
        for s in sizes.values() {
            let (lo, hi) = min_max(&s.errors);
            let density = spec
                .as_ref()
                .and_then(|sp| rho(s.n, sp.domain.volume(), sp.input_dim).ok());
            let regime = labels.get(&s.n).map(|r| r.as_str()).unwrap_or("-");
            let _ = write!(
                md,
                "| {} | {} | {} | {} | {} | {} | {} | {} | {} |",
                s.n,
                density.map(|d| format!("{d:.2}")).unwrap_or("-".into()),
                s.errors.len(),
                s.failed,
                fmt_e(median(&s.errors)),
                fmt_e(Some(lo)),
                fmt_e(Some(hi)),
                fmt_e(median(&s.gaps)),
                regime
            );
            if let Some(b) = bounds {
                let eps_d = median(&s.losses).map(f64::sqrt).unwrap_or(f64::NAN);
                let bound = generalization_bound(&b.inputs(s.n_hat, s.m), eps_d, 0.0).ok();
                let _ = write!(md, " {} |", fmt_e(bound));
            }
            md.push('\n');
        }
        let regressions =
            regime_regressions(&labels.iter().map(|(&n, &r)| (n, r)).collect::<Vec<_>>());
        if regressions.is_empty() {
            md.push_str("\nRegime ordering: non-regressive.\n");
        } else {
            let _ = writeln!(
                md,
                "\nRegime ordering VIOLATED: pre-asymptotic after permanent at N_f = {regressions:?}"
            );
        }
        plots.push((
            format!("error_vs_nf_{problem}.svg"),
            error_plot(problem, runs, &sizes, &labels),
        ));
    }

    let scaling: Vec<&SweepRow> = rows.iter().filter(|r| r.mode != "serial").collect();
    if !scaling.is_empty() {
        let bars = scaling_table(&scaling, &mut md);
        if !bars.is_empty() {
            plots.push(("efficiency.svg".into(), efficiency_plot(&bars)));
        }
    }
    Report {
        markdown: md,
        plots,
    }
}

/// (mode, size) → median efficiency.
type Bars = BTreeMap<(String, usize), f64>;

fn time_of(r: &SweepRow) -> f64 {
    r.t500_mean.unwrap_or(r.time_total_s)
}

fn scaling_table(rows: &[&SweepRow], md: &mut String) -> Bars {
    let mut groups: BTreeMap<(String, String, usize), Vec<&SweepRow>> = BTreeMap::new();
    for r in rows {
        groups
            .entry((r.problem.clone(), r.mode.clone(), r.size))
            .or_default()
            .push(r);
    }
    let _ = writeln!(md, "\n## Scaling\n");
    let _ = writeln!(
        md,
        "| problem | mode | size | N_f | runs | median error | t500 mean (s) | E_ff | S_up | pointsec |"
    );
    let _ = writeln!(md, "|---|---|---|---|---|---|---|---|---|---|");
    let mut bars = Bars::new();
    for ((problem, mode, size), runs) in &groups {
        let errors: Vec<f64> = runs.iter().map(|r| r.error).collect();
        let times: Vec<f64> = runs.iter().map(|r| time_of(r)).collect();
        let rates: Vec<f64> = runs.iter().map(|r| r.pointsec).collect();
        let t = median(&times);
        let t1 = groups
            .get(&(problem.clone(), mode.clone(), 1))
            .and_then(|g| median(&g.iter().map(|r| time_of(r)).collect::<Vec<_>>()));
        let eff = match (t1, t) {
            (Some(a), Some(b)) => efficiency_speedup(a, b, *size).ok(),
            _ => None,
        };
        if let Some((e, _)) = eff {
            bars.insert((mode.clone(), *size), e);
        }
        let _ = writeln!(
            md,
            "| {problem} | {mode} | {size} | {} | {} | {} | {} | {} | {} | {} |",
            runs[0].n_f,
            runs.len(),
            fmt_e(median(&errors)),
            t.map(|v| format!("{v:.3}")).unwrap_or("-".into()),
            eff.map(|e| format!("{:.2}%", 100.0 * e.0))
                .unwrap_or("-".into()),
            eff.map(|e| format!("{:.2}", e.1)).unwrap_or("-".into()),
            median(&rates)
                .map(|v| format!("{v:.0}"))
                .unwrap_or("-".into()),
        );
    }
    bars
}

const W: f64 = 720.0;
const H: f64 = 480.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 30.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;

fn regime_fill(r: Regime) -> &'static str {
    match r {
        Regime::PreAsymptotic => "#f7c6d9",
        Regime::Transition => "#c6daf7",
        Regime::Permanent => "#c9ebc9",
    }
}

fn svg_open(title: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
        W / 2.0,
        escape(title)
    );
    s
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

/// Decades spanning `[lo, hi]` (log10 values).
fn decades(lo: f64, hi: f64) -> Vec<i32> {
    (lo.floor() as i32..=hi.ceil() as i32).collect()
}

fn error_plot(
    problem: &str,
    runs: &[&SweepRow],
    sizes: &BTreeMap<usize, SizeStats>,
    labels: &BTreeMap<usize, Regime>,
) -> String {
    let ns: Vec<f64> = sizes.keys().map(|&n| (n as f64).log10()).collect();
    let errs: Vec<f64> = runs
        .iter()
        .map(|r| r.error)
        .filter(|e| e.is_finite() && *e > 0.0)
        .map(f64::log10)
        .collect();
    let (x_lo, x_hi) = match (ns.first(), ns.last()) {
        (Some(&a), Some(&b)) if b > a => (a - 0.15, b + 0.15),
        (Some(&a), _) => (a - 0.5, a + 0.5),
        _ => (0.0, 1.0),
    };
    let (e_lo, e_hi) = min_max(&errs);
    let (y_lo, y_hi) = if e_lo.is_finite() {
        ((e_lo - 0.3).floor(), (e_hi + 0.3).ceil())
    } else {
        (-3.0, 0.0)
    };
    let px = |x: f64| LEFT + (x - x_lo) / (x_hi - x_lo) * (W - LEFT - RIGHT);
    let py = |y: f64| TOP + (y_hi - y) / (y_hi - y_lo) * (H - TOP - BOTTOM);

    let mut s = svg_open(&format!("{problem}: relative L2 error vs N_f"));
    // regime bands, split at geometric midpoints between sizes
    for (i, (&n, _)) in sizes.iter().enumerate() {
        let x = (n as f64).log10();
        let left = if i == 0 { x_lo } else { 0.5 * (ns[i - 1] + x) };
        let right = if i + 1 == ns.len() {
            x_hi
        } else {
            0.5 * (x + ns[i + 1])
        };
        if let Some(&r) = labels.get(&n) {
            let _ = writeln!(
                s,
                r#"<rect x="{:.1}" y="{TOP}" width="{:.1}" height="{:.1}" fill="{}"/>"#,
                px(left),
                px(right) - px(left),
                H - TOP - BOTTOM,
                regime_fill(r)
            );
        }
    }
    // axes and decade ticks
    let _ = writeln!(
        s,
        r#"<rect x="{LEFT}" y="{TOP}" width="{:.1}" height="{:.1}" fill="none" stroke="black"/>"#,
        W - LEFT - RIGHT,
        H - TOP - BOTTOM
    );
    for d in decades(x_lo, x_hi) {
        let x = f64::from(d);
        if x < x_lo || x > x_hi {
            continue;
        }
        let _ = writeln!(
            s,
            r#"<line x1="{0:.1}" y1="{1:.1}" x2="{0:.1}" y2="{2:.1}" stroke="black"/><text x="{0:.1}" y="{3:.1}" text-anchor="middle">1e{d}</text>"#,
            px(x),
            H - BOTTOM,
            H - BOTTOM + 5.0,
            H - BOTTOM + 20.0
        );
    }
    for d in decades(y_lo, y_hi) {
        let y = f64::from(d);
        if y < y_lo || y > y_hi {
            continue;
        }
        let _ = writeln!(
            s,
            r#"<line x1="{0:.1}" y1="{1:.1}" x2="{2:.1}" y2="{1:.1}" stroke="black"/><text x="{3:.1}" y="{4:.1}" text-anchor="end">1e{d}</text>"#,
            LEFT - 5.0,
            py(y),
            LEFT,
            LEFT - 8.0,
            py(y) + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">N_f</text>"#,
        (LEFT + W - RIGHT) / 2.0,
        H - 15.0
    );
    let _ = writeln!(
        s,
        r#"<text x="20" y="{:.1}" text-anchor="middle" transform="rotate(-90 20 {:.1})">relative L2 error</text>"#,
        H / 2.0,
        H / 2.0
    );
    // individual runs
    for r in runs {
        if r.error.is_finite() && r.error > 0.0 {
            let _ = writeln!(
                s,
                r##"<circle cx="{:.1}" cy="{:.1}" r="3" fill="#555" fill-opacity="0.6"/>"##,
                px((r.n_f as f64).log10()),
                py(r.error.log10())
            );
        }
    }
    // per-size medians joined by a line
    let medians: Vec<(f64, f64)> = sizes
        .values()
        .filter_map(|st| {
            median(&st.errors)
                .filter(|m| *m > 0.0)
                .map(|m| (px((st.n as f64).log10()), py(m.log10())))
        })
        .collect();
    if medians.len() > 1 {
        let pts: Vec<String> = medians
            .iter()
            .map(|(x, y)| format!("{x:.1},{y:.1}"))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="black" stroke-width="1.5"/>"#,
            pts.join(" ")
        );
    }
    for (x, y) in &medians {
        let _ = writeln!(
            s,
            r##"<rect x="{:.1}" y="{:.1}" width="8" height="8" fill="#c00" stroke="black"/>"##,
            x - 4.0,
            y - 4.0
        );
    }
    // legend
    let legend = [
        (Regime::PreAsymptotic, "pre-asymptotic"),
        (Regime::Transition, "transition"),
        (Regime::Permanent, "permanent"),
    ];
    for (i, (r, name)) in legend.iter().enumerate() {
        let x = W - RIGHT - 130.0;
        let y = TOP + 10.0 + 18.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<rect x="{x:.1}" y="{y:.1}" width="12" height="12" fill="{}" stroke="black"/><text x="{:.1}" y="{:.1}">{name}</text>"#,
            regime_fill(*r),
            x + 18.0,
            y + 10.0
        );
    }
    s.push_str("</svg>\n");
    s
}

fn efficiency_plot(bars: &Bars) -> String {
    let mut s = svg_open("Efficiency E_ff = t1 / t_size");
    let n = bars.len() as f64;
    let plot_w = W - LEFT - RIGHT;
    let plot_h = H - TOP - BOTTOM;
    let top = bars.values().fold(1.0f64, |a, &b| a.max(b)) * 1.1;
    let py = |v: f64| TOP + (1.0 - v / top) * plot_h;
    let _ = writeln!(
        s,
        r#"<rect x="{LEFT}" y="{TOP}" width="{plot_w:.1}" height="{plot_h:.1}" fill="none" stroke="black"/>"#
    );
    for k in 0..=((top / 0.25).floor() as usize) {
        let v = 0.25 * k as f64;
        let _ = writeln!(
            s,
            r##"<line x1="{LEFT}" y1="{0:.1}" x2="{1:.1}" y2="{0:.1}" stroke="#ddd"/><text x="{2:.1}" y="{3:.1}" text-anchor="end">{4:.0}%</text>"##,
            py(v),
            W - RIGHT,
            LEFT - 6.0,
            py(v) + 4.0,
            100.0 * v
        );
    }
    let slot = plot_w / n;
    for (i, ((mode, size), &e)) in bars.iter().enumerate() {
        let x = LEFT + slot * i as f64 + 0.15 * slot;
        let fill = if mode == "weak" { "#4a7bd0" } else { "#d08a4a" };
        let _ = writeln!(
            s,
            r#"<rect x="{x:.1}" y="{:.1}" width="{:.1}" height="{:.1}" fill="{fill}"/><text x="{:.1}" y="{:.1}" text-anchor="middle">{mode} {size}</text><text x="{:.1}" y="{:.1}" text-anchor="middle">{:.1}%</text>"#,
            py(e),
            0.7 * slot,
            py(0.0) - py(e),
            x + 0.35 * slot,
            H - BOTTOM + 18.0,
            x + 0.35 * slot,
            py(e) - 5.0,
            100.0 * e
        );
    }
    s.push_str("</svg>\n");
    s
}
