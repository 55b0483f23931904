use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use orbitclose::catalog::catalog;
use orbitclose::pipeline::{exit_code, pretty, run_file, run_suite, write_output};
use orbitclose::scenario::Overrides;

/// Close near-returns of vector fields and check the perturbation bounds.
#[derive(Parser)]
#[command(name = "orbitclose", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Override the scenario seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (default: the scenario's `out`, else `out/<name>`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Override the pipeline's headline tolerance.
    #[arg(long, global = true)]
    tol: Option<f64>,
    /// Override the smoothness order r.
    #[arg(long, global = true)]
    r: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario file.
    Run { scenario: PathBuf },
    /// Run every `*.toml` scenario in a directory.
    Suite { dir: PathBuf },
    /// List the built-in systems.
    Catalog {
        #[arg(long)]
        json: bool,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let overrides = Overrides { seed: cli.seed, tol: cli.tol, r: cli.r };
    let code = match cli.command {
        Command::Run { scenario } => run(&scenario, cli.out, &overrides),
        Command::Suite { dir } => suite(&dir, cli.out, &overrides),
        Command::Catalog { json } => {
            let _ = list(json);
            0
        }
    };
    ExitCode::from(code as u8)
}

fn run(path: &std::path::Path, out: Option<PathBuf>, overrides: &Overrides) -> i32 {
    let (scenario, output) = match run_file(path, overrides) {
        Ok(x) => x,
        Err(e) => {
            eprintln!("error: {e}");
            return e.exit_code();
        }
    };
    let dir = out.or(scenario.out.clone()).unwrap_or_else(|| PathBuf::from("out").join(&scenario.name));
    if let Err(e) = write_output(&dir, &output) {
        eprintln!("error: writing {}: {e}", dir.display());
        return 3;
    }
    for a in &output.report.assertions {
        let tag = if a.pass { "PASS" } else { "FAIL" };
        println!("{tag} {:<32} {:>12.4e} {} {:.4e}", a.name, a.value, a.relation, a.limit);
    }
    let code = exit_code(Ok(&output.report));
    let verdict = if code == 0 { "pass" } else { "FAIL" };
    println!("{}: {verdict} (report in {})", scenario.name, dir.display());
    code
}

fn suite(dir: &std::path::Path, out: Option<PathBuf>, overrides: &Overrides) -> i32 {
    let out = out.unwrap_or_else(|| PathBuf::from("out").join("suite"));
    let report = match run_suite(dir, &out, overrides) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    for e in &report.entries {
        let tag = match e.exit_code {
            0 => "PASS",
            1 => "FAIL",
            _ => "ERROR",
        };
        match &e.error {
            Some(msg) => println!("{tag} {} ({msg})", e.file),
            None => println!("{tag} {}", e.file),
        }
    }
    println!("{} scenarios, report in {}", report.entries.len(), out.join("suite.json").display());
    report.exit_code()
}

/// Write errors (a closed pipe) end the listing quietly.
fn list(json: bool) -> std::io::Result<()> {
    let entries = catalog();
    let mut out = std::io::stdout().lock();
    if json {
        return write!(out, "{}", pretty(&entries).expect("catalog serializes"));
    }
    for e in entries {
        let params: Vec<String> = e.parameters.iter().map(|(k, v)| format!("{k}={v}")).collect();
        writeln!(out, "{:<17} {}-D {:<10} {}  {}", e.name, e.dimension, e.manifold, e.source, params.join(" "))?;
        writeln!(out, "{:<17} {}", "", e.description)?;
    }
    Ok(())
}
