//! `weaklp`: runs experiments from JSON configs and writes CSV tables plus
//! a JSON report. Exit codes: 0 pass, 1 error, 2 verdict failure,
//! 3 inconclusive.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use weaklp::experiment::{run_experiment, ExperimentConfig, ExperimentOutput, Status};
use weaklp::fields::{catalogue, FieldSpec, ScalarField};
use weaklp::quadrature::k_constant;

#[derive(Parser)]
#[command(name = "weaklp", version, about = "Weak-L^p difference-quotient experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Worker threads (results do not depend on it).
    #[arg(long, env = "WEAKLP_WORKERS")]
    workers: Option<usize>,
    /// Overrides the seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Print every verdict.
    #[arg(long, short)]
    verbose: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Run a template config over a grid of fields and exponents.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// JSON with `fields`, `catalogue_dims` and `p` lists.
        #[arg(long)]
        grid: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Print k(p, N) and sphere areas as CSV.
    Constants {
        #[arg(long, value_delimiter = ',', default_values_t = vec![1usize, 2, 3, 4])]
        dims: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_values_t = vec![1.0, 1.25, 1.5, 2.0, 3.0, 4.0])]
        p: Vec<f64>,
    },
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SweepGrid {
    #[serde(default)]
    fields: Vec<FieldSpec>,
    #[serde(default)]
    catalogue_dims: Vec<usize>,
    #[serde(default)]
    p: Vec<f64>,
}

#[derive(Debug)]
struct Failure(String);

impl<E: std::fmt::Display> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure(e.to_string())
    }
}

fn status_code(s: Status) -> u8 {
    match s {
        Status::Pass => 0,
        Status::Fail => 2,
        Status::Inconclusive => 3,
    }
}

fn with_workers<R: Send>(workers: Option<usize>, f: impl FnOnce() -> R + Send) -> R {
    match workers {
        Some(k) => weaklp::exec::with_workers(k, f),
        None => f(),
    }
}

fn load_config(path: &Path, seed: Option<u64>) -> Result<ExperimentConfig, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure(format!("{}: {e}", path.display())))?;
    let mut cfg: ExperimentConfig =
        serde_json::from_str(&text).map_err(|e| Failure(format!("{}: {e}", path.display())))?;
    if seed.is_some() {
        cfg.seed = seed;
    }
    cfg.validate().map_err(|e| Failure(format!("{}: {e}", path.display())))?;
    Ok(cfg)
}

fn write_output(dir: &Path, out: &ExperimentOutput) -> Result<(), Failure> {
    fs::create_dir_all(dir)?;
    let report = dir.join("report.json");
    if report.exists() {
        return Err(Failure(format!("{} already holds a report; use a fresh directory", dir.display())));
    }
    for (name, contents) in &out.tables {
        fs::write(dir.join(name), contents)?;
    }
    fs::write(dir.join("timings.json"), out.timings_json())?;
    fs::write(report, out.report_json())?;
    Ok(())
}

fn print_verdicts(out: &ExperimentOutput, verbose: bool) {
    if verbose {
        for v in &out.verdicts {
            eprintln!("{:?} {} value={} tolerance={}", v.status, v.key, v.value, v.tolerance);
        }
    }
    let count = |s| out.verdicts.iter().filter(|v| v.status == s).count();
    println!(
        "{:?}: {} pass, {} fail, {} inconclusive",
        out.status(),
        count(Status::Pass),
        count(Status::Fail),
        count(Status::Inconclusive)
    );
}

fn run(config: &Path, out_dir: &Path, common: &Common) -> Result<u8, Failure> {
    let cfg = load_config(config, common.seed)?;
    let out = with_workers(common.workers, || run_experiment(&cfg))?;
    write_output(out_dir, &out)?;
    print_verdicts(&out, common.verbose);
    Ok(status_code(out.status()))
}

fn sweep(config: &Path, grid: &Path, out_dir: &Path, common: &Common) -> Result<u8, Failure> {
    let template = load_config(config, common.seed)?;
    let text = fs::read_to_string(grid).map_err(|e| Failure(format!("{}: {e}", grid.display())))?;
    let grid: SweepGrid = serde_json::from_str(&text).map_err(|e| Failure(format!("{}: {e}", grid.display())))?;
    let mut fields: Vec<(String, FieldSpec)> = Vec::new();
    for spec in grid.fields {
        let label = ScalarField::from_spec(spec.clone())?.label().to_string();
        fields.push((label, spec));
    }
    for dim in grid.catalogue_dims {
        for f in catalogue(dim)? {
            fields.push((f.label().to_string(), f.spec().clone()));
        }
    }
    let ps = if grid.p.is_empty() { template.params.p.clone() } else { grid.p };
    if fields.is_empty() || ps.is_empty() {
        return Err(Failure("sweep grid is empty".into()));
    }
    fs::create_dir_all(out_dir)?;
    let base = template.seed.unwrap_or(0);
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["job", "field", "p", "seed", "status", "passed", "failed", "inconclusive", "error"])?;
    let mut worst = 0u8;
    let mut index = 0u64;
    for (label, spec) in &fields {
        for &p in &ps {
            let mut cfg = template.clone();
            cfg.fields = vec![spec.clone()];
            cfg.catalogue_dim = None;
            cfg.params.p = vec![p];
            cfg.seed = Some(base ^ index);
            let dir = out_dir.join(format!("job_{index:03}"));
            let result = cfg
                .validate()
                .map_err(Failure::from)
                .and_then(|_| with_workers(common.workers, || run_experiment(&cfg)).map_err(Failure::from))
                .and_then(|out| write_output(&dir, &out).map(|_| out));
            let seed = (base ^ index).to_string();
            let (row, code) = match result {
                Ok(out) => {
                    if common.verbose {
                        eprint!("job {index}: ");
                        print_verdicts(&out, true);
                    }
                    let count = |s| out.verdicts.iter().filter(|v| v.status == s).count().to_string();
                    let st = out.status();
                    (
                        vec![
                            index.to_string(),
                            label.clone(),
                            p.to_string(),
                            seed,
                            format!("{st:?}").to_lowercase(),
                            count(Status::Pass),
                            count(Status::Fail),
                            count(Status::Inconclusive),
                            String::new(),
                        ],
                        status_code(st),
                    )
                }
                Err(e) => {
                    eprintln!("job {index} ({label}, p = {p}) failed: {}", e.0);
                    (
                        vec![index.to_string(), label.clone(), p.to_string(), seed, "error".into(), "0".into(), "0".into(), "0".into(), e.0],
                        1,
                    )
                }
            };
            w.write_record(&row)?;
            worst = worse(worst, code);
            index += 1;
        }
    }
    fs::write(out_dir.join("sweep.csv"), w.into_inner().map_err(|e| Failure(e.to_string()))?)?;
    println!("{index} jobs, exit {worst}");
    Ok(worst)
}

/// Error beats failure beats inconclusive beats pass.
fn worse(a: u8, b: u8) -> u8 {
    let rank = |c: u8| match c {
        1 => 3,
        2 => 2,
        3 => 1,
        _ => 0,
    };
    if rank(b) > rank(a) {
        b
    } else {
        a
    }
}

fn constants(dims: &[usize], ps: &[f64]) -> Result<u8, Failure> {
    let mut w = csv::Writer::from_writer(std::io::stdout());
    w.write_record(["N", "p", "k_closed", "k_quad", "sigma"])?;
    for &dim in dims {
        for &p in ps {
            let c = k_constant(p, dim)?;
            w.write_record([dim.to_string(), p.to_string(), c.k.to_string(), c.k_quadrature.to_string(), c.sigma.to_string()])?;
        }
    }
    w.flush()?;
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { config, out, common } => run(config, out, common),
        Command::Sweep { config, grid, out, common } => sweep(config, grid, out, common),
        Command::Constants { dims, p } => constants(dims, p),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {}", e.0);
            ExitCode::from(1)
        }
    }
}
