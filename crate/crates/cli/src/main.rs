//! `bench-hedge <task> --config <path> [--threads N] [--out DIR]`

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::Parser;
use serde_json::json;
use sha2::{Digest, Sha256};

mod config;
mod error;
mod output;
mod tasks;

use config::ExperimentConfig;
use error::CliError;
use tasks::{Context, Task};

#[derive(Debug, Parser)]
#[command(name = "bench-hedge", version, about = "Batch experiments for benchmarked quadratic hedging")]
struct Args {
    task: Task,
    #[arg(long)]
    config: PathBuf,
    /// Worker threads; results do not depend on it.
    #[arg(long)]
    threads: Option<usize>,
    /// Output directory; overrides OUTPUT_DIR and the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn sha256_hex(text: &str) -> String {
    Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

fn output_dir(args: &Args, cfg: &ExperimentConfig) -> PathBuf {
    if let Some(out) = &args.out {
        return out.clone();
    }
    if let Some(env) = std::env::var_os("OUTPUT_DIR").filter(|v| !v.is_empty()) {
        return PathBuf::from(env);
    }
    cfg.output.directory.clone()
}

fn run(args: &Args) -> Result<PathBuf, CliError> {
    let start = Instant::now();
    if let Some(n) = args.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("cannot size the thread pool: {e}")))?;
    }
    let (cfg, text) = ExperimentConfig::load(&args.config)?;
    let ctx = Context {
        cfg: &cfg,
        config_dir: args.config.parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    let artifacts = tasks::run(args.task, &ctx)?;
    let dir = output_dir(args, &cfg);
    let mut outputs = output::write_artifacts(&dir, &artifacts, &cfg.output.formats)?;
    outputs.push("manifest.json".into());
    let manifest = json!({
        "task": args.task.name(),
        "config": args.config.display().to_string(),
        "config_sha256": sha256_hex(&text),
        "master_seed": cfg.mc.map(|m| m.master_seed),
        "n_paths": cfg.mc.map(|m| m.n_paths),
        "threads": rayon::current_num_threads(),
        "versions": {
            "bench-hedge": env!("CARGO_PKG_VERSION"),
            "bench-hedge-core": bench_hedge::VERSION,
        },
        "outputs": outputs,
        "wall_time_seconds": start.elapsed().as_secs_f64(),
    });
    std::fs::write(dir.join("manifest.json"), output::pretty(&manifest))
        .map_err(|e| CliError::Io(format!("cannot write manifest.json: {e}")))?;
    Ok(dir)
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(&args) {
        Ok(dir) => {
            println!("{}", json!({ "status": "ok", "task": args.task.name(), "output": dir.display().to_string() }));
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
