//! `fde`: density solver, Monte Carlo sampler and combinatorial oracle.

mod args;
mod commands;
mod report;

use clap::error::ErrorKind;
use clap::Parser;

use args::{Cli, Command};
use commands::Mode;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("FDE_LOG", "error"))
        .format_timestamp(None)
        .init();
    std::process::exit(run());
}

fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    let (mode, args) = match cli.command {
        Command::Oracle(o) => {
            return match commands::oracle(&o) {
                Ok(lines) => {
                    for l in lines {
                        println!("{l}");
                    }
                    0
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    e.exit_code()
                }
            };
        }
        Command::Solve(a) => (Mode::Solve, a),
        Command::Mc(a) => (Mode::Mc, a),
        Command::Compare(a) => (Mode::Compare, a),
    };
    let threads = match args.threads {
        Some(0) => {
            eprintln!("error: --threads must be positive");
            return 1;
        }
        Some(n) => n,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
        log::warn!("thread pool already initialized: {e}");
    }
    commands::run(mode, &args, threads)
}
