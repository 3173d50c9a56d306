//! Reference stub model server: serves one scripted scenario over the
//! adapter HTTP protocol until killed.

use std::io::Write;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Parser;

use dynarag::adapter::{Scenario, StubServer};

#[derive(Parser)]
#[command(
    name = "dynarag-stub-server",
    version,
    about = "Serves a scripted scenario over the adapter HTTP protocol"
)]
struct Cli {
    /// Scenario JSON file to serve.
    #[arg(long)]
    scenario: PathBuf,
    /// Bind address; port 0 picks a free port.
    #[arg(long, default_value = "127.0.0.1:0")]
    addr: String,
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = match err.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = err.print();
            std::process::exit(code);
        }
    };
    if let Err(err) = serve(&cli) {
        eprintln!("error: {err:#}");
        std::process::exit(2);
    }
}

fn serve(cli: &Cli) -> Result<()> {
    let raw = std::fs::read_to_string(&cli.scenario)
        .with_context(|| format!("reading {}", cli.scenario.display()))?;
    let scenario = Scenario::from_json_str(&raw)?;
    let server = StubServer::start(&cli.addr, scenario)?;
    println!("listening on {}", server.url());
    std::io::stdout().flush().ok();
    loop {
        std::thread::park();
    }
}
