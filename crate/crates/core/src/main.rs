//! Command-line front end for the experiment harness. Exit codes: 0 when
//! the run's verdict is pass, 1 when it completes but fails its acceptance
//! rule, 2 on configuration or solver errors.

use std::fs;
use std::path::PathBuf;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use barrierlab::harness::{
    classify_report, parse_config_text, run_bc_verification, run_continuity_sweep,
    run_mc_crosscheck, run_mosco_experiment, write_outputs, HarnessError, PartialConfig,
    RunReport,
};

#[derive(Parser)]
#[command(
    name = "barrierlab",
    version,
    about = "Thin-layer diffusion lab: collapse tables, continuity sweeps, interface checks, and Monte Carlo cross-checks"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Layer-collapse error table against the classified limit flow
    Mosco(RunArgs),
    /// Resolvent continuity sweep toward a target regime
    Continuity(RunArgs),
    /// Interface-condition residuals under grid refinement
    Bc(RunArgs),
    /// Monte Carlo samplers against their matching solvers
    Mc(RunArgs),
    /// Print the limiting regime for given layer scalings
    Classify(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Config file, JSON or key=value lines
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for results.csv, report.json, plot.gp, run.log
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed for the path samplers
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for sweep points and paths
    #[arg(long)]
    threads: Option<usize>,
    /// Comma-separated strictly decreasing layer widths, e.g. "0.4,0.2,0.1"
    #[arg(long)]
    eps: Option<String>,
    /// Tangential conductivity exponent
    #[arg(long, allow_negative_numbers = true)]
    alpha: Option<f64>,
    /// Normal conductivity exponent
    #[arg(long, allow_negative_numbers = true)]
    beta: Option<f64>,
    /// Tangential conductivity prefactor
    #[arg(long)]
    ctan: Option<f64>,
    /// Normal conductivity prefactor
    #[arg(long)]
    cnorm: Option<f64>,
    /// Time horizon
    #[arg(long)]
    t: Option<f64>,
    /// Solver time step
    #[arg(long)]
    dt: Option<f64>,
    /// Window and resolution as "Lx,Ly,nx,ny"
    #[arg(long)]
    grid: Option<String>,
}

fn main() {
    let cli = Cli::parse();
    let (kind, args) = match cli.cmd {
        Cmd::Mosco(a) => ("mosco", a),
        Cmd::Continuity(a) => ("continuity", a),
        Cmd::Bc(a) => ("bc", a),
        Cmd::Mc(a) => ("mc", a),
        Cmd::Classify(a) => ("classify", a),
    };
    match execute(kind, args) {
        Ok(true) => std::process::exit(0),
        Ok(false) => std::process::exit(1),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(2);
        }
    }
}

fn execute(kind: &str, args: RunArgs) -> Result<bool, HarnessError> {
    let mut part = match &args.config {
        Some(path) => parse_config_text(&fs::read_to_string(path)?)?,
        None => PartialConfig::default(),
    };
    if let Some(v) = args.seed {
        part.seed = Some(v);
    }
    if let Some(v) = &args.eps {
        part.set("eps", v)?;
    }
    if let Some(v) = args.alpha {
        part.alpha = Some(v);
    }
    if let Some(v) = args.beta {
        part.beta = Some(v);
    }
    if let Some(v) = args.ctan {
        part.c_tan = Some(v);
    }
    if let Some(v) = args.cnorm {
        part.c_norm = Some(v);
    }
    if let Some(v) = args.t {
        part.t = Some(v);
    }
    if let Some(v) = args.dt {
        part.dt = Some(v);
    }
    if let Some(v) = &args.grid {
        part.set("grid", v)?;
    }
    let cfg = part.resolve(kind)?;

    let run = || -> Result<RunReport, HarnessError> {
        match kind {
            "mosco" => run_mosco_experiment(&cfg),
            "continuity" => run_continuity_sweep(&cfg),
            "bc" => run_bc_verification(&cfg),
            "mc" => run_mc_crosscheck(&cfg),
            "classify" => classify_report(&cfg),
            other => Err(HarnessError::Config(format!("unknown run kind {other:?}"))),
        }
    };
    let started = Instant::now();
    let report = match args.threads {
        Some(n) if n > 0 => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| HarnessError::Config(format!("thread pool: {e}")))?
            .install(run),
        _ => run(),
    }?;
    print_summary(&report);

    let out_dir = args
        .out
        .or_else(|| report.config.out.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs").join(kind));
    write_outputs(&out_dir, &report, started.elapsed().as_secs_f64())?;
    println!("wrote {}", out_dir.display());
    Ok(report.pass)
}

fn print_summary(report: &RunReport) {
    println!("kind: {}", report.kind);
    if let Some(p) = &report.phase {
        println!("phase: {p}");
    }
    for r in &report.rows {
        println!("  parameter {:>12.6e}  error {:.6e}", r.parameter, r.error);
    }
    for b in &report.bc {
        match b.ratio {
            Some(r) => println!(
                "  {}/{}: coarse {:.3e} fine {:.3e} ratio {:.2}",
                b.phase, b.condition, b.coarse, b.fine, r
            ),
            None => println!(
                "  {}/{}: coarse {:.3e} fine {:.3e} (structural)",
                b.phase, b.condition, b.coarse, b.fine
            ),
        }
    }
    for c in &report.mc {
        println!(
            "  {}: mc {:.5} +- {:.5} vs reference {:.5} (gap {:.2e}, tol {:.2e}) {}",
            c.name,
            c.mc_mean,
            c.se,
            c.reference,
            c.gap,
            c.tol,
            if c.pass { "ok" } else { "FAIL" }
        );
    }
    println!("verdict: {}", if report.pass { "pass" } else { "fail" });
}
