//! `segfb`: runs one experiment described by a JSON config and writes its
//! reports and a manifest into the output directory.
//!
//! Exit status: 0 success, 1 I/O failure or failed verification checks,
//! 2 config error, 3 numerical non-convergence, 4 precondition violation.

mod config;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::Parser;

use config::ExperimentConfig;

#[derive(Parser, Debug)]
#[command(name = "segfb", version, about = "Segregated configurations and free boundaries of the half-Laplacian")]
struct Cli {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `out` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, env = "SEGFB_THREADS")]
    threads: Option<usize>,
    /// Grid spacing override.
    #[arg(long)]
    h: Option<f64>,
}

fn config_error(msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("segfb: {msg}");
    ExitCode::from(2)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let mut cfg = match ExperimentConfig::load(&cli.config) {
        Ok(c) => c,
        Err(e) => return config_error(e),
    };
    if let Some(h) = cli.h {
        if !(h > 0.0) {
            return config_error(format!("--h {h} must be positive"));
        }
        cfg.override_h(h);
    }
    if let Err(e) = cfg.validate() {
        return config_error(e);
    }
    let Some(out) = run::out_dir(&cfg, cli.out) else {
        return config_error("no output directory (--out or \"out\")");
    };
    if let Some(k) = cli.threads {
        if k == 0 {
            return config_error("--threads must be positive");
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(k).build_global() {
            return config_error(e);
        }
    }
    cfg.out = Some(out.clone());
    log::info!("{:?} -> {} ({} threads)", cfg.command, out.display(), rayon::current_num_threads());

    let start = Instant::now();
    let outputs = match run::execute(&cfg) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("segfb: {e}");
            let code = if e.is_non_convergence() {
                3
            } else if matches!(e, segfb_core::Error::FieldFormat { .. } | segfb_core::Error::InvalidParameter(_)) {
                2
            } else if e.is_precondition() {
                4
            } else {
                1
            };
            return ExitCode::from(code);
        }
    };
    let failed = outputs.failed_checks;
    let files = match outputs.write_all(&out) {
        Ok(f) => f,
        Err(e) => {
            eprintln!("segfb: writing reports: {e}");
            return ExitCode::from(1);
        }
    };
    let manifest = run::Manifest {
        command: cfg.command,
        version: env!("CARGO_PKG_VERSION"),
        threads: rayon::current_num_threads(),
        wall_time_seconds: start.elapsed().as_secs_f64(),
        files,
        config: &cfg,
    };
    if let Err(e) = segfb_core::io::write_json(&out.join("manifest.json"), &manifest) {
        eprintln!("segfb: writing manifest: {e}");
        return ExitCode::from(1);
    }
    if failed > 0 {
        eprintln!("segfb: {failed} verification check(s) failed");
        return ExitCode::from(1);
    }
    ExitCode::SUCCESS
}
