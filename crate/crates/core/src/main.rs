use anyhow::Context;
use clap::Parser;

use cemvc::cli::{self, Cli};

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let name = match &cli.command {
        cli::Command::Synth(_) => "synth",
        cli::Command::Run(_) => "run",
        cli::Command::Bench(_) => "bench",
    };
    cli::execute(cli).with_context(|| format!("cemvc {name} failed"))
}
