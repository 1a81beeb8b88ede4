use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::Parser;
use riesz_core::config::ExperimentConfig;
use riesz_core::experiments::{run, Outcome, SCHEMA};
use riesz_core::LabError;
use serde_json::json;

/// Numerical laboratory for inner Riesz potential theory.
#[derive(Debug, Parser)]
#[command(name = "riesz-lab", version)]
struct Args {
    /// Experiment configuration file.
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Where to write the JSON report; CSV side files go next to it.
    /// Defaults to `output` in the config, else stdout.
    #[arg(long, value_name = "PATH")]
    output: Option<PathBuf>,
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    #[arg(long, value_name = "N")]
    resolution: Option<usize>,
    #[arg(long, value_name = "X")]
    alpha: Option<f64>,
    #[arg(long, value_name = "N")]
    dim: Option<usize>,
    /// Suppress the check summary on stderr.
    #[arg(long)]
    quiet: bool,
}

const EXIT_FAILED_CHECKS: u8 = 1;
const EXIT_ERROR: u8 = 2;

fn error_kind(e: &LabError) -> &'static str {
    match e {
        LabError::Domain(_) => "domain",
        LabError::Parameter(_) => "parameter",
        LabError::Assembly(_) => "assembly",
        LabError::NotPositiveDefinite { .. } => "not_positive_definite",
        LabError::Convergence { .. } => "convergence",
        LabError::Mismatch(_) => "mismatch",
        LabError::Unsupported(_) => "unsupported",
        LabError::Parse { .. } => "parse",
        LabError::Io(_) => "io",
        LabError::Csv(_) => "csv",
        LabError::Json(_) => "json",
    }
}

fn error_report(command: Option<String>, config: &Path, e: &LabError) -> serde_json::Value {
    let mut err = json!({
        "kind": error_kind(e),
        "message": e.to_string(),
        "config": config.display().to_string(),
    });
    if let LabError::Parse { line, .. } = e {
        if *line > 0 {
            err["line"] = json!(line);
        }
    }
    json!({"schema": SCHEMA, "command": command, "error": err})
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var("RIESZ_LAB_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .with_context(|| format!("RIESZ_LAB_THREADS must be a positive integer, got `{v}`"))?;
        anyhow::ensure!(n > 0, "RIESZ_LAB_THREADS must be positive");
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()?;
    }
    Ok(())
}

fn load(args: &Args) -> Result<ExperimentConfig, LabError> {
    let mut cfg = ExperimentConfig::from_file(&args.config)?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(r) = args.resolution {
        if r == 0 {
            return Err(LabError::Parameter(
                "--resolution must be at least 1".into(),
            ));
        }
        cfg.resolution = Some(r);
    }
    if args.alpha.is_some() || args.dim.is_some() {
        cfg.set_kernel(args.alpha, args.dim)?;
    }
    if let Some(o) = &args.output {
        cfg.output = Some(o.clone());
    }
    Ok(cfg)
}

fn side_path(report: &Path, suffix: &str) -> PathBuf {
    let stem = report
        .file_stem()
        .map_or_else(|| "report".into(), |s| s.to_string_lossy().into_owned());
    report.with_file_name(format!("{stem}.{suffix}"))
}

/// Write every file to a temporary name first, then rename, so a failure
/// leaves no partial output behind.
fn write_all(files: &[(PathBuf, String)]) -> Result<()> {
    let mut staged: Vec<(PathBuf, &PathBuf)> = Vec::with_capacity(files.len());
    for (path, contents) in files {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        }
        let tmp = path.with_extension("partial");
        if let Err(e) = fs::write(&tmp, contents) {
            for (t, _) in &staged {
                let _ = fs::remove_file(t);
            }
            let _ = fs::remove_file(&tmp);
            return Err(e).with_context(|| format!("writing {}", path.display()));
        }
        staged.push((tmp, path));
    }
    for (tmp, path) in staged {
        fs::rename(&tmp, path).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn emit(outcome: &Outcome, output: Option<&Path>, quiet: bool) -> Result<()> {
    let json = serde_json::to_string_pretty(&outcome.report)? + "\n";
    match output {
        Some(path) => {
            let mut files = vec![(path.to_path_buf(), json)];
            for s in &outcome.side_files {
                files.push((side_path(path, &s.suffix), s.contents.clone()));
            }
            write_all(&files)?;
        }
        None => {
            print!("{json}");
            if !outcome.side_files.is_empty() && !quiet {
                eprintln!("note: CSV side files need an output path, skipped");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let args = Args::parse();
    if let Err(e) = configure_threads() {
        eprintln!("error: {e:#}");
        return ExitCode::from(EXIT_ERROR);
    }
    let cfg = match load(&args) {
        Ok(c) => c,
        Err(e) => {
            match &e {
                LabError::Parse { line, message } if *line > 0 => {
                    eprintln!("error: {}:{line}: {message}", args.config.display())
                }
                other => eprintln!("error: {}: {other}", args.config.display()),
            }
            println!("{}", error_report(None, &args.config, &e));
            return ExitCode::from(EXIT_ERROR);
        }
    };
    let outcome = match run(&cfg) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {}: {e}", cfg.command);
            println!(
                "{}",
                error_report(Some(cfg.command.to_string()), &args.config, &e)
            );
            return ExitCode::from(EXIT_ERROR);
        }
    };
    if !args.quiet {
        for c in &outcome.report.invariant_checks {
            let tag = if c.passed { "PASS" } else { "FAIL" };
            eprintln!(
                "{tag} {} value={:e} tolerance={:e}",
                c.name, c.value, c.tolerance
            );
        }
        eprintln!(
            "{} finished in {:.2} s",
            cfg.command, outcome.report.wall_time
        );
    }
    if let Err(e) = emit(&outcome, cfg.output.as_deref(), args.quiet) {
        eprintln!("error: {e:#}");
        return ExitCode::from(EXIT_ERROR);
    }
    if outcome.report.passed() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_FAILED_CHECKS)
    }
}
