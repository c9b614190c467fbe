use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use qpkdv::checks::{run_suite, Suite};
use qpkdv::driver::{run, Config, RunReport, Status};
use qpkdv::sieve::{measure_estimate, unperturbed_eigenvalues, SieveParams};

/// Quasi-periodic solutions of the forced fifth-order KdV equation.
#[derive(Parser)]
#[command(name = "qpkdv", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the Newton iteration for every lambda of a configuration.
    Solve {
        #[arg(long)]
        config: PathBuf,
        /// Solve only at this parameter value.
        #[arg(long)]
        lambda: Option<f64>,
        /// Run directory (default: $QPKDV_OUT_DIR, then runs/solve-<time>).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also print the report to stdout.
        #[arg(long, value_enum)]
        report: Option<ReportFormat>,
    },
    /// Estimate the excluded parameter measure on a uniform grid.
    Sieve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        grid: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run randomized property suites.
    Check {
        #[arg(long, value_enum, default_value = "all")]
        suite: SuiteArg,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ReportFormat {
    Json,
    Csv,
}

#[derive(Clone, Copy, ValueEnum)]
enum SuiteArg {
    Norms,
    Composition,
    Reduction,
    All,
}

impl From<SuiteArg> for Suite {
    fn from(s: SuiteArg) -> Suite {
        match s {
            SuiteArg::Norms => Suite::Norms,
            SuiteArg::Composition => Suite::Composition,
            SuiteArg::Reduction => Suite::Reduction,
            SuiteArg::All => Suite::All,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn dispatch(cli: Cli) -> Result<u8> {
    match cli.cmd {
        Cmd::Solve { config, lambda, out, report } => solve(&config, lambda, out, report),
        Cmd::Sieve { config, grid, out } => sieve(&config, grid, out),
        Cmd::Check { suite, seed, out } => check(suite.into(), seed, out),
    }
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

fn run_dir(out: Option<PathBuf>, kind: &str) -> Result<PathBuf> {
    let dir = out
        .or_else(|| std::env::var_os("QPKDV_OUT_DIR").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs").join(format!("{kind}-{}", now())));
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn write(dir: &Path, name: &str, body: &str, files: &mut Vec<String>) -> Result<()> {
    let path = dir.join(name);
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(&path, body).with_context(|| format!("writing {}", path.display()))?;
    files.push(name.to_string());
    Ok(())
}

fn manifest(dir: &Path, command: &str, files: &[String], exit_code: u8, extra: serde_json::Value) -> Result<()> {
    let m = json!({
        "tool": "qpkdv",
        "version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "argv": std::env::args().collect::<Vec<_>>(),
        "created_unix": now(),
        "exit_code": exit_code,
        "files": files,
        "details": extra,
    });
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&m)?)?;
    Ok(())
}

fn csv_table(rep: &RunReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rep.convergence_rows() {
        w.serialize(row)?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}

fn solve(config: &Path, lambda: Option<f64>, out: Option<PathBuf>, report: Option<ReportFormat>) -> Result<u8> {
    let cfg = Config::load(config)?;
    let rep = run(&cfg, lambda)?;
    let code = rep.exit_code() as u8;
    let dir = run_dir(out, "solve")?;
    let mut files = Vec::new();
    let js = rep.to_json();
    let table = csv_table(&rep)?;
    write(&dir, "report.json", &js, &mut files)?;
    write(&dir, "convergence.csv", &table, &mut files)?;
    for (i, l) in rep.lambdas.iter().enumerate() {
        if let (Status::Converged, Some(u)) = (&l.status, &l.solution) {
            write(&dir, &format!("solutions/lambda_{i:03}.json"), &u.to_json(), &mut files)?;
        }
    }
    manifest(&dir, "solve", &files, code, json!({ "config": config.display().to_string() }))?;
    match report {
        Some(ReportFormat::Json) => println!("{js}"),
        Some(ReportFormat::Csv) => print!("{table}"),
        None => {
            for l in &rep.lambdas {
                let status = match &l.status {
                    Status::Excluded { record } => format!("excluded ({record})"),
                    Status::Failed { message } => format!("failed ({message})"),
                    other => format!("{other:?}").to_lowercase(),
                };
                println!(
                    "lambda {:.6}: {status}, {} steps, |F| = {:.3e}",
                    l.lambda,
                    l.steps.len(),
                    l.final_residual
                );
            }
            println!("run directory: {}", dir.display());
        }
    }
    Ok(code)
}

fn sieve(config: &Path, grid: usize, out: Option<PathBuf>) -> Result<u8> {
    anyhow::ensure!(grid >= 2, "--grid needs at least 2 points");
    let cfg = Config::load(config)?;
    let sched = cfg.schedule()?;
    let params = SieveParams {
        omega_bar: cfg.omega_bar(),
        alpha_first: sched.alpha0,
        alpha_second: sched.alpha0,
        tau: sched.tau(),
        max_l: cfg.truncation.kphi as u32,
    };
    let kx = cfg.truncation.kx;
    let rep = measure_estimate(&params, cfg.lambda.min, cfg.lambda.max, grid, |_| unperturbed_eigenvalues(kx));
    let dir = run_dir(out, "sieve")?;
    let mut files = Vec::new();
    write(&dir, "sieve.json", &rep.to_json(), &mut files)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["kind", "i", "j", "ell", "lambda_start", "lambda_end", "width", "bound"])?;
    for r in &rep.runs {
        let ell: Vec<String> = r.ell.iter().map(|x| x.to_string()).collect();
        w.write_record([
            format!("{:?}", r.kind).to_lowercase(),
            r.i.to_string(),
            r.j.to_string(),
            ell.join(" "),
            r.lambda_start.to_string(),
            r.lambda_end.to_string(),
            r.width.to_string(),
            r.bound.to_string(),
        ])?;
    }
    write(&dir, "excluded.csv", &String::from_utf8(w.into_inner()?)?, &mut files)?;
    manifest(&dir, "sieve", &files, 0, json!({ "config": config.display().to_string(), "grid": grid }))?;
    println!(
        "excluded fraction {:.4e} over [{}, {}] ({} runs, {} width violations)",
        rep.excluded_fraction,
        cfg.lambda.min,
        cfg.lambda.max,
        rep.runs.len(),
        rep.width_violations().len()
    );
    println!("run directory: {}", dir.display());
    Ok(0)
}

fn check(suite: Suite, seed: u64, out: Option<PathBuf>) -> Result<u8> {
    let results = run_suite(suite, seed);
    let mut failed = 0;
    for r in &results {
        if !r.pass {
            failed += 1;
        }
        println!("{} {}/{}: {}", if r.pass { "PASS" } else { "FAIL" }, r.suite, r.name, r.detail);
    }
    if let Some(dir) = out.or_else(|| std::env::var_os("QPKDV_OUT_DIR").map(PathBuf::from)) {
        fs::create_dir_all(&dir)?;
        let mut files = Vec::new();
        write(&dir, "checks.json", &serde_json::to_string_pretty(&results)?, &mut files)?;
        manifest(&dir, "check", &files, u8::from(failed > 0), json!({ "seed": seed }))?;
    }
    Ok(u8::from(failed > 0))
}
