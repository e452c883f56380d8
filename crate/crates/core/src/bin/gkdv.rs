use std::path::PathBuf;

use clap::Parser;
use gkdv_core::cli::{dispatch, Command, EXIT_CONFIG, THREADS_ENV};

/// Multi-soliton construction for the supercritical generalized KdV equation.
#[derive(Parser)]
#[command(name = "gkdv", version)]
struct Args {
    command: Command,
    /// JSON run configuration; defaults are used for absent fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (overrides the config).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, env = THREADS_ENV)]
    threads: Option<usize>,
}

fn main() {
    let args = Args::parse();
    if let Some(k) = args.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(k).build_global() {
            eprintln!("error: {e}");
            std::process::exit(EXIT_CONFIG);
        }
    }
    std::process::exit(dispatch(args.command, args.config.as_deref(), args.out.as_deref()));
}
