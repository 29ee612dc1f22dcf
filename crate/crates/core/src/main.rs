use std::fs::File;
use std::io::{self, BufWriter};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use fluctlab::cli::{emit_report, exit, parse_config, run_experiment, Format, Kind, RunError};

/// Exact checks of fluctuation relations for quantum channels.
#[derive(Parser, Debug)]
#[command(name = "fluctlab", version)]
struct Args {
    /// Experiment to run.
    #[arg(value_enum)]
    kind: Kind,

    /// JSON experiment config.
    #[arg(long)]
    config: PathBuf,

    /// Report destination; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,

    #[arg(long, value_enum)]
    format: Option<Format>,

    /// Worker threads for randomized suites.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    jobs: Option<u64>,
}

fn code(c: i32) -> ExitCode {
    ExitCode::from(c as u8)
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return code(if e.use_stderr() { exit::CONFIG } else { exit::ALL_HOLD });
        }
    };

    let seed = match std::env::var("FLUCTLAB_SEED") {
        Ok(raw) => match raw.trim().parse::<u64>() {
            Ok(s) => Some(s),
            Err(e) => {
                eprintln!("fluctlab: FLUCTLAB_SEED={raw:?} is not a 64-bit unsigned integer: {e}");
                return code(exit::CONFIG);
            }
        },
        Err(_) => None,
    };
    let cfg = match parse_config(&args.config, Some(args.kind), seed) {
        Err(e) => {
            eprintln!("fluctlab: cannot read {}: {e}", args.config.display());
            return code(exit::IO);
        }
        Ok(Err(e)) => {
            eprintln!("fluctlab: {}: {e}", args.config.display());
            return code(exit::CONFIG);
        }
        Ok(Ok(c)) => c,
    };
    let report = match run_experiment(&cfg, args.jobs.map(|n| n as usize)) {
        Ok(r) => r,
        Err(RunError::Io(e)) => {
            eprintln!("fluctlab: {e}");
            return code(exit::IO);
        }
        Err(e) => {
            eprintln!("fluctlab: {e}");
            return code(exit::RELATION_FAILED);
        }
    };

    let format = args.format.or(cfg.format).unwrap_or_default();
    let out = args.out.or_else(|| cfg.out.clone().map(|p| if p.is_absolute() { p } else { cfg.base_dir.join(p) }));
    let written = match &out {
        Some(path) => File::create(path).and_then(|f| emit_report(&report, format, &mut BufWriter::new(f))),
        None => emit_report(&report, format, &mut io::stdout().lock()),
    };
    if let Err(e) = written {
        eprintln!("fluctlab: cannot write report: {e}");
        return code(exit::IO);
    }

    let s = &report.summary;
    eprintln!("fluctlab {}: {}/{} hold, max gap {:e}", report.kind, s.pass_count, s.trials, s.max_gap);
    for r in report.records.iter().filter(|r| r.error.is_some()) {
        eprintln!("  trial {}: {}", r.trial, r.error.as_deref().unwrap_or_default());
    }
    code(if report.all_hold() { exit::ALL_HOLD } else { exit::RELATION_FAILED })
}
