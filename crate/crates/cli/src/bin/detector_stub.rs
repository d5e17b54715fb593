//! Reference front-end detector: answers the detector wire protocol
//! from `<image>.count` sidecar files, optionally dropping each object
//! with a seeded probability. Speaks stdio by default so the gateway
//! can spawn it directly; `--listen` serves TCP instead.

use std::io::{stdin, stdout, BufReader};
use std::net::TcpListener;
use std::process::ExitCode;

use clap::Parser;

use ecore::detector::{serve_stub_connection, serve_stub_tcp, StubOptions};

#[derive(Parser)]
#[command(
    name = "ecore-detector-stub",
    version,
    about = "Sidecar-driven stand-in for a lightweight front-end detector"
)]
struct Opts {
    /// Serve TCP on this address instead of stdio
    #[arg(long, conflicts_with = "stdio")]
    listen: Option<String>,
    /// Serve the protocol on stdin/stdout (the default)
    #[arg(long)]
    stdio: bool,
    /// Probability of dropping each annotated object
    #[arg(long, default_value_t = 0.0)]
    drop_p: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn main() -> ExitCode {
    let opts = Opts::parse();
    if !(0.0..=1.0).contains(&opts.drop_p) {
        eprintln!("error: --drop-p must be in [0, 1]");
        return ExitCode::from(1);
    }
    let stub = StubOptions {
        drop_probability: opts.drop_p,
        seed: opts.seed,
    };
    let outcome = match opts.listen {
        Some(addr) => match TcpListener::bind(&addr) {
            Ok(listener) => {
                // the bound address goes to stderr: stdout may later be
                // consumed by protocol-speaking parents in stdio setups
                eprintln!(
                    "detector-stub listening on {}",
                    listener.local_addr().map(|a| a.to_string()).unwrap_or(addr)
                );
                serve_stub_tcp(listener, stub)
            }
            Err(e) => {
                eprintln!("error: cannot bind: {e}");
                return ExitCode::from(2);
            }
        },
        None => serve_stub_connection(BufReader::new(stdin().lock()), stdout().lock(), stub),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
