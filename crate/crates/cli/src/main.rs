use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use lasso_dual::regpath::Algorithm;
use lasso_dual::scenario::{
    builtin, run_estimate, run_kkt_audit, run_path, MuGrid, ResultRecord, ScenarioConfig, Spacing,
    TaskSpec, BUILTIN_NAMES,
};
use lasso_dual::Error;

const EXIT_VALIDATION: u8 = 1;
const EXIT_NOT_CONVERGED: u8 = 2;
const EXIT_UNREACHABLE: u8 = 3;
const EXIT_AUDIT_FAILED: u8 = 4;

#[derive(Parser)]
#[command(name = "lasso-dual", version, about = "Sparse DOA estimation with the complex LASSO and its dual")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Source {
    /// Scenario file (JSON).
    #[arg(long, conflicts_with = "scenario")]
    config: Option<PathBuf>,
    /// Built-in scenario name.
    #[arg(long)]
    scenario: Option<String>,
    /// Noise seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Sweep the solution path over a grid of regularization values.
    Path {
        #[command(flatten)]
        source: Source,
    },
    /// Select the regularization value for a given sparsity order.
    Estimate {
        #[command(flatten)]
        source: Source,
        /// order-recursive, fast or dual
        #[arg(long)]
        algorithm: Option<String>,
        /// Target number of active bins
        #[arg(long)]
        k0: Option<usize>,
        /// Interval position between successive dual peaks, in (0, 1)
        #[arg(long)]
        f: Option<f64>,
    },
    /// Check optimality conditions of a solve or of a stored estimate.
    KktAudit {
        #[command(flatten)]
        source: Source,
        #[arg(long)]
        mu: Option<f64>,
        /// Result record of an `estimate` run.
        #[arg(long)]
        solution: Option<PathBuf>,
    },
    /// Print a built-in scenario (or list them).
    ShowScenario {
        #[arg(long)]
        scenario: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::OrderUnreachable { .. } => EXIT_UNREACHABLE,
            _ => EXIT_VALIDATION,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure {
        code: EXIT_VALIDATION,
        message: format!("{}: {e}", path.display()),
    }
}

fn load(source: &Source) -> Result<Option<ScenarioConfig>, Failure> {
    let cfg = match (&source.config, &source.scenario) {
        (Some(path), _) => {
            let text = fs::read_to_string(path).map_err(|e| io_failure(path, e))?;
            Some(ScenarioConfig::from_json(&text)?)
        }
        (None, Some(name)) => Some(builtin(name)?),
        (None, None) => None,
    };
    Ok(cfg.map(|c| match source.seed {
        Some(seed) => c.with_seed(seed),
        None => c,
    }))
}

fn require(cfg: Option<ScenarioConfig>) -> Result<ScenarioConfig, Failure> {
    cfg.ok_or_else(|| Failure {
        code: EXIT_VALIDATION,
        message: "give --config <file> or --scenario <name>".into(),
    })
}

/// Write-then-rename so readers never see a partial file.
fn write_atomic(dir: &Path, name: &str, contents: &str) -> Result<PathBuf, Failure> {
    fs::create_dir_all(dir).map_err(|e| io_failure(dir, e))?;
    let target = dir.join(name);
    let tmp = dir.join(format!(".{name}.{}.tmp", std::process::id()));
    fs::write(&tmp, contents).map_err(|e| io_failure(&tmp, e))?;
    fs::rename(&tmp, &target).map_err(|e| io_failure(&target, e))?;
    Ok(target)
}

fn stem(cfg: &ScenarioConfig) -> String {
    cfg.name.clone().unwrap_or_else(|| "scenario".into())
}

fn finish(record: &ResultRecord) -> Result<(), Failure> {
    if record.converged {
        Ok(())
    } else {
        Err(Failure {
            code: EXIT_NOT_CONVERGED,
            message: "LASSO solver did not converge".into(),
        })
    }
}

fn cmd_path(source: &Source) -> Result<(), Failure> {
    let mut cfg = require(load(source)?)?;
    if !matches!(cfg.task, TaskSpec::Path { .. }) {
        cfg.task = TaskSpec::Path {
            mu: MuGrid::Relative {
                hi_frac: 1.05,
                lo_frac: 0.01,
                count: 200,
                spacing: Spacing::Linear,
            },
            energy_radius: 2,
        };
    }
    let start = Instant::now();
    let out = run_path(&cfg)?;
    eprintln!("path: {} samples in {:.3?}", out.record.lasso_solve_count, start.elapsed());
    let name = stem(&cfg);
    let csv = write_atomic(&source.out, &format!("{name}-path.csv"), &out.csv)?;
    let json = write_atomic(&source.out, &format!("{name}-path.json"), &out.record.to_json())?;
    if let Some(p) = &out.record.path {
        for c in &p.candidate_points {
            println!(
                "order {} -> {} between mu = {} and {}",
                c.order_above, c.order_below, c.mu_above, c.mu_below
            );
        }
    }
    println!("wrote {} and {}", csv.display(), json.display());
    finish(&out.record)
}

fn cmd_estimate(
    source: &Source,
    algorithm: Option<&str>,
    k0: Option<usize>,
    f: Option<f64>,
) -> Result<(), Failure> {
    let mut cfg = require(load(source)?)?;
    let algorithm: Option<Algorithm> = algorithm.map(str::parse).transpose()?;
    let (k0_cfg, f_cfg, alg_cfg) = match &cfg.task {
        TaskSpec::Estimate { k0, f, algorithm } => (Some(*k0), *f, *algorithm),
        _ => (None, 0.9, Algorithm::Fast),
    };
    let k0 = k0.or(k0_cfg).ok_or_else(|| Failure {
        code: EXIT_VALIDATION,
        message: "configuration error in `task.k0`: missing sparsity order (use --k0)".into(),
    })?;
    cfg.task = TaskSpec::Estimate {
        k0,
        f: f.unwrap_or(f_cfg),
        algorithm: algorithm.unwrap_or(alg_cfg),
    };
    cfg.validate()?;
    let start = Instant::now();
    let record = run_estimate(&cfg)?;
    eprintln!("estimate: {} LASSO solves in {:.3?}", record.lasso_solve_count, start.elapsed());
    let path = write_atomic(&source.out, &format!("{}-estimate.json", stem(&cfg)), &record.to_json())?;
    println!("wrote {}", path.display());
    if let Some(fail) = &record.failure {
        return Err(Failure {
            code: EXIT_UNREACHABLE,
            message: fail.message.clone(),
        });
    }
    if let Some(e) = &record.estimate {
        println!(
            "{} selected mu = {} after {} outer steps ({} solves)",
            e.algorithm.name(),
            e.mu,
            e.outer_iterations,
            e.lasso_solve_count
        );
        println!("DOA estimates [deg]: {:?}", e.doa_deg);
    }
    finish(&record)
}

fn cmd_audit(source: &Source, mu: Option<f64>, solution: Option<&Path>) -> Result<(), Failure> {
    let stored = match solution {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| io_failure(path, e))?;
            Some(ResultRecord::from_json(&text)?)
        }
        None => None,
    };
    let mut cfg = match (load(source)?, &stored) {
        (Some(cfg), _) => cfg,
        (None, Some(rec)) => match source.seed {
            Some(seed) => rec.config.clone().with_seed(seed),
            None => rec.config.clone(),
        },
        (None, None) => require(None)?,
    };
    let (mu_cfg, tolerances) = match &cfg.task {
        TaskSpec::KktAudit { mu, tolerances } => (*mu, *tolerances),
        _ => (None, None),
    };
    cfg.task = TaskSpec::KktAudit {
        mu: mu.or(mu_cfg),
        tolerances,
    };
    cfg.validate()?;
    let record = run_kkt_audit(&cfg, stored.as_ref())?;
    let path = write_atomic(&source.out, &format!("{}-kkt-audit.json", stem(&cfg)), &record.to_json())?;
    println!("wrote {}", path.display());
    let report = &record.audit.as_ref().expect("audit record").report;
    println!(
        "mu = {}: box {:.3e}, tightness {:.3e}, phase {:.3e} rad, row space {:.3e} -> {}",
        report.mu,
        report.max_box_violation,
        report.tightness_gap,
        report.max_phase_mismatch_rad,
        report.row_space_residual,
        if report.pass { "pass" } else { "FAIL" }
    );
    if !report.pass {
        return Err(Failure {
            code: EXIT_AUDIT_FAILED,
            message: "KKT audit failed".into(),
        });
    }
    finish(&record)
}

/// Prints to stdout, treating a closed pipe as a normal end of output.
fn emit(text: &str) {
    use std::io::Write;
    let _ = writeln!(std::io::stdout().lock(), "{text}");
}

fn cmd_show(name: Option<&str>, out: Option<&Path>) -> Result<(), Failure> {
    let Some(name) = name else {
        emit(&BUILTIN_NAMES.join("\n"));
        return Ok(());
    };
    let json = builtin(name)?.to_json();
    match out {
        Some(dir) => {
            let path = write_atomic(dir, &format!("{name}.json"), &json)?;
            println!("wrote {}", path.display());
        }
        None => emit(&json),
    }
    Ok(())
}

fn main() -> ExitCode {
    // clap's own usage-error status (2) would collide with non-convergence.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_VALIDATION)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match &cli.command {
        Command::Path { source } => cmd_path(source),
        Command::Estimate {
            source,
            algorithm,
            k0,
            f,
        } => cmd_estimate(source, algorithm.as_deref(), *k0, *f),
        Command::KktAudit {
            source,
            mu,
            solution,
        } => cmd_audit(source, *mu, solution.as_deref()),
        Command::ShowScenario { scenario, out } => cmd_show(scenario.as_deref(), out.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
