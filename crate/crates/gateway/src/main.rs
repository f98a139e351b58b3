use std::io::Write;
use std::process::ExitCode;

use clap::Parser;
use crowdre_gateway::cli::{run, Cli};

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_env("CROWDRE_LOG").unwrap_or_else(|_| "info".into()))
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(out) => {
            let mut stdout = std::io::stdout().lock();
            let _ = stdout.write_all(out.as_bytes());
            let _ = stdout.flush();
            ExitCode::SUCCESS
        }
        Err(errors) => {
            let mut stderr = std::io::stderr().lock();
            for e in errors {
                let _ = writeln!(stderr, "{}", e.line());
            }
            ExitCode::FAILURE
        }
    }
}
