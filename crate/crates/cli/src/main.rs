//! `sps-aoi`: simulation, analytic evaluation and validation runs driven by
//! TOML experiment files.

mod runner;
mod spec;

use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use rayon::prelude::*;
use serde_json::json;
use sha2::{Digest, Sha256};

use runner::{run_point, sweep_csv, var_dist_csv, write_file, PointOutcome};
use spec::{ExperimentSpec, Format, InvalidSpec, Mode, Overrides};

#[derive(Parser, Debug)]
#[command(name = "sps-aoi", version, about = "Age of information under semi-persistent scheduling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate and write the empirical age, reservation and empty-slot laws.
    Simulate(RunArgs),
    /// Evaluate the analytic age law.
    Analytic(RunArgs),
    /// Analytic and simulated age laws side by side.
    Compare(RunArgs),
    /// Independence-assumption distances and empty-slot fixed point check.
    Validate(RunArgs),
    /// Compare over a parameter grid and summarize metrics per point.
    Sweep(RunArgs),
    /// Exact extended-chain laws for small systems.
    Oracle(RunArgs),
}

#[derive(clap::Args, Debug)]
struct RunArgs {
    /// Experiment file (TOML).
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Override a field, e.g. `--set base.ending_prob=0.05`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    #[arg(long, value_name = "DIR", env = "SPS_AOI_OUT")]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads across points; all cores when absent.
    #[arg(long, env = "SPS_AOI_THREADS")]
    threads: Option<usize>,
    #[arg(long, value_enum, value_delimiter = ',')]
    format: Option<Vec<Format>>,
    /// Validate and print the resolved points without running them.
    #[arg(long)]
    dry_run: bool,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            report_error("usage", &e.to_string(), &[]);
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let kind = if e.downcast_ref::<InvalidSpec>().is_some() {
                "invalid_spec"
            } else if e.chain().any(|c| c.downcast_ref::<std::io::Error>().is_some()) {
                "io"
            } else if e.chain().any(|c| c.downcast_ref::<sps_aoi::Error>().is_some()) {
                "model"
            } else {
                "other"
            };
            let chain: Vec<String> = e.chain().skip(1).map(|c| c.to_string()).collect();
            report_error(kind, &e.to_string(), &chain);
            ExitCode::from(if kind == "invalid_spec" { 2 } else { 1 })
        }
    }
}

fn report_error(kind: &str, message: &str, causes: &[String]) {
    let report = json!({ "error": { "kind": kind, "message": message.trim_end(), "causes": causes } });
    eprintln!("{report}");
}

fn run(cli: Cli) -> Result<()> {
    let (mode, args) = match cli.command {
        Command::Simulate(a) => (Mode::Simulate, a),
        Command::Analytic(a) => (Mode::Analytic, a),
        Command::Compare(a) => (Mode::Compare, a),
        Command::Validate(a) => (Mode::Validate, a),
        Command::Sweep(a) => (Mode::Sweep, a),
        Command::Oracle(a) => (Mode::Oracle, a),
    };
    let overrides = Overrides {
        sets: args.sets,
        seed: args.seed,
        out: args.out,
        formats: args.format,
    };
    let spec = ExperimentSpec::load(args.config.as_deref(), mode, &overrides)?;
    if mode == Mode::Sweep && spec.sweep.is_none() {
        return Err(InvalidSpec("sweep mode needs a [sweep] table".into()).into());
    }
    let points = spec.points()?;
    if args.dry_run {
        println!("{}", serde_json::to_string_pretty(&json!({ "mode": mode, "spec": &spec, "points": points }))?);
        return Ok(());
    }

    let out = spec.output_dir.clone();
    std::fs::create_dir_all(&out).with_context(|| format!("creating output directory {}", out.display()))?;
    let dirs: Vec<PathBuf> = if spec.sweep.is_some() {
        (0..points.len()).map(|i| out.join(format!("point_{i:03}"))).collect()
    } else {
        vec![out.clone()]
    };

    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = args.threads {
        pool = pool.num_threads(n);
    }
    let pool = pool.build()?;
    let outcomes: Vec<PointOutcome> = pool.install(|| {
        points
            .par_iter()
            .zip(dirs.par_iter())
            .enumerate()
            .map(|(i, (config, dir))| run_point(&spec, i, config, dir).with_context(|| format!("point {i}")))
            .collect::<Result<_>>()
    })?;

    let sweep_rows: Vec<_> = outcomes.iter().filter_map(|o| o.sweep.clone()).collect();
    let var_rows: Vec<_> = outcomes.iter().filter_map(|o| o.var_dist.clone()).collect();
    if mode == Mode::Sweep {
        if spec.wants(Format::Csv) {
            write_file(&out.join("psi_vs_pe.csv"), sweep_csv(&sweep_rows).as_bytes())?;
        }
        if spec.wants(Format::Json) {
            write_json(&out.join("psi_vs_pe.json"), &json!(sweep_rows))?;
        }
    }
    if mode == Mode::Validate {
        if spec.wants(Format::Csv) {
            write_file(&out.join("var_dist.csv"), var_dist_csv(&var_rows).as_bytes())?;
        }
        if spec.wants(Format::Json) {
            write_json(&out.join("var_dist.json"), &json!(var_rows))?;
        }
    }
    write_manifest(&spec, &points, &out)
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let mut body = serde_json::to_string_pretty(value)?;
    body.push('\n');
    write_file(path, body.as_bytes())
}

/// Effective experiment, resolved points and the sha-256 of every output file.
fn write_manifest(spec: &ExperimentSpec, points: &[sps_aoi::SystemConfig], out: &Path) -> Result<()> {
    let mut files = Vec::new();
    collect_files(out, out, &mut files)?;
    files.sort();
    let mut entries = Vec::new();
    for rel in files {
        if rel == "manifest.json" {
            continue;
        }
        let (digest, bytes) = sha256_file(&out.join(&rel))?;
        entries.push(json!({ "path": rel, "sha256": digest, "bytes": bytes }));
    }
    let manifest = json!({
        "tool": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
        "mode": spec.mode(),
        "spec": spec,
        "points": points,
        "files": entries,
    });
    write_json(&out.join("manifest.json"), &manifest)
}

fn collect_files(root: &Path, dir: &Path, acc: &mut Vec<String>) -> Result<()> {
    for entry in std::fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let path = entry?.path();
        if path.is_dir() {
            collect_files(root, &path, acc)?;
        } else {
            let rel = path.strip_prefix(root)?;
            acc.push(rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/"));
        }
    }
    Ok(())
}

fn sha256_file(path: &Path) -> Result<(String, u64)> {
    let mut f = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    let mut total = 0u64;
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
        total += n as u64;
    }
    let hex: String = hasher.finalize().iter().map(|b| format!("{b:02x}")).collect();
    Ok((hex, total))
}
