use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use linfty::experiments::checks::invariant_suite;
use linfty::experiments::config::parse_list;
use linfty::experiments::io::fmt_f64;
use linfty::experiments::{
    experiment_dir, load_config, preset, run_experiment, Overrides, DIVERGENCE_FREE_FACTOR, PRESETS,
};
use linfty::solver::{hp_coupled_run, Coupling};
use linfty::{catalog_lookup, Error, NewtonOptions};

const USAGE: u8 = 1;
const DIVERGED: u8 = 2;
const INVARIANT: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "linfty", version, about = "Vectorial p-Laplace continuation and concentration measures")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Mesh parameter (square: n x n cells; annulus: scaled to match).
    #[arg(long, global = true)]
    n: Option<usize>,

    /// Output root; defaults to $LINFTY_OUT, then ./linfty_out.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Comma-separated continuation ladder, starting at 2.
    #[arg(long, global = true)]
    ladder: Option<String>,

    /// Relative Newton tolerance.
    #[arg(long, global = true)]
    tol: Option<f64>,

    /// Regularisation relative to the largest gradient.
    #[arg(long, global = true)]
    eps: Option<f64>,

    /// Seed of the random perturbation probe.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Assemble and analyse on one thread (bit-exact outputs).
    #[arg(long, global = true)]
    sequential: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run a preset or a key = value config file.
    Run { target: String },
    /// Print the names of the compiled-in presets.
    ListPresets,
    /// Run the invariant suite on a small mesh.
    Check,
    /// hp-coupled error table: `rates aronsson h-1/2`.
    Rates { datum: String, coupling: String },
}

fn output_root(cli: &Cli) -> PathBuf {
    cli.out
        .clone()
        .or_else(|| std::env::var_os("LINFTY_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("linfty_out"))
}

fn overrides(cli: &Cli) -> linfty::Result<Overrides> {
    let ladder = cli.ladder.as_deref().map(parse_list).transpose().map_err(Error::Config)?;
    Ok(Overrides {
        n: cli.n,
        ladder,
        tol: cli.tol,
        eps: cli.eps,
        seed: cli.seed,
        sequential: cli.sequential,
    })
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Divergence(_) => DIVERGED,
        Error::InvariantFailure(_) => INVARIANT,
        _ => USAGE,
    }
}

fn run(cli: &Cli, target: &str, root: &Path) -> linfty::Result<()> {
    let mut cfg = if PRESETS.contains(&target) {
        preset(target, linfty::experiments::presets::DEFAULT_N)?
    } else if Path::new(target).is_file() {
        load_config(Path::new(target))?
    } else {
        return Err(Error::Config(format!("`{target}` is neither a preset nor a config file")));
    };
    cfg.apply(&overrides(cli)?)?;
    let summary = run_experiment(&cfg, root)?;
    let dir = experiment_dir(&cfg, root);
    println!("{}: {} files in {}", cfg.name, summary.files.len(), dir.display());
    for s in &summary.solve.steps {
        println!(
            "  p = {:>5}  iterations {:>2}  relative residual {:.2e}{}",
            s.exponent,
            s.iterations,
            s.relative_residual(),
            if s.converged { "" } else { "  (not converged)" }
        );
    }
    for w in &summary.warnings {
        eprintln!("warning: {w}");
    }
    let violations = summary.tail_violations();
    if !violations.is_empty() {
        return Err(Error::InvariantFailure(format!("tail bound violated at {violations:?}")));
    }
    let div = summary.max_divergence_free();
    if div > DIVERGENCE_FREE_FACTOR * cfg.newton.rel_tol {
        eprintln!("warning: divergence-free residual {div:.2e}");
    }
    Ok(())
}

fn check(cli: &Cli, root: &Path) -> linfty::Result<()> {
    let results = invariant_suite(cli.n.unwrap_or(8), root);
    let mut failed = 0;
    for r in &results {
        println!("{} {}: {}", if r.passed { "ok  " } else { "FAIL" }, r.name, r.detail);
        failed += usize::from(!r.passed);
    }
    if failed > 0 {
        return Err(Error::InvariantFailure(format!("{failed} of {} checks failed", results.len())));
    }
    Ok(())
}

fn rates(cli: &Cli, datum: &str, coupling: &str, root: &Path) -> linfty::Result<()> {
    let datum = catalog_lookup(datum, None)?;
    let coupling = Coupling::parse(coupling)?;
    let finest = cli.n.unwrap_or(32);
    if finest < 8 || finest % 4 != 0 {
        return Err(Error::Config(format!("--n for rates must be a multiple of 4 and >= 8, got {finest}")));
    }
    let ns = [finest / 4, finest / 2, finest];
    let mut opts = NewtonOptions::default();
    if let Some(t) = cli.tol {
        opts.rel_tol = t;
    }
    if let Some(e) = cli.eps {
        opts.eps_rel = e;
    }
    opts.sequential = cli.sequential;
    let table = hp_coupled_run(&datum, coupling, &ns, &opts)?;
    fs::create_dir_all(root)?;
    let label = serde_json::to_value(coupling)?.as_str().unwrap_or("coupling").to_string();
    let path = root.join(format!("rates_{}_{label}.csv", datum.name));
    let mut w = std::io::BufWriter::new(fs::File::create(&path)?);
    writeln!(w, "n,h,p,error,rate")?;
    println!("{:>5} {:>10} {:>6} {:>12} {:>7}", "n", "h", "p", "error", "rate");
    for r in &table.rows {
        let rate = r.rate.map(fmt_f64).unwrap_or_default();
        writeln!(w, "{},{},{},{},{rate}", r.n, fmt_f64(r.h), fmt_f64(r.p), fmt_f64(r.error))?;
        let shown = r.rate.map(|v| format!("{v:.3}")).unwrap_or_default();
        println!("{:>5} {:>10.5} {:>6} {:>12.4e} {:>7}", r.n, r.h, r.p, r.error, shown);
    }
    w.flush()?;
    if let Some(s) = table.fitted_slope {
        println!("fitted slope {s:.3}");
    }
    println!("wrote {}", path.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(USAGE) } else { ExitCode::SUCCESS };
        }
    };
    let root = output_root(&cli);
    let outcome = match &cli.command {
        Command::ListPresets => {
            for p in PRESETS {
                println!("{p}");
            }
            Ok(())
        }
        Command::Run { target } => run(&cli, target, &root),
        Command::Check => check(&cli, &root),
        Command::Rates { datum, coupling } => rates(&cli, datum, coupling, &root),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
