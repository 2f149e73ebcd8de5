use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use semiclassical_green::cli::{execute, report_error, worker_count, RunConfig, Subcommand, BUNDLED_HELMHOLTZ};
use semiclassical_green::Error;

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Command {
    Rays,
    Flowout,
    Arrivals,
    Field,
    Validate,
}

/// Semi-classical Green functions: rays, flow-outs, arrivals, fields and validation.
#[derive(Debug, Parser)]
#[command(name = "sgf", version)]
struct Args {
    command: Command,
    /// TOML run configuration; `validate` falls back to the bundled Helmholtz scenario.
    config: Option<PathBuf>,
    /// Output directory; overrides `output` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Run a named experiment instead of the validation table (`transient-shrink`).
    #[arg(long)]
    experiment: Option<String>,
}

fn run(args: Args) -> Result<i32, Error> {
    let sub = match args.command {
        Command::Rays => Subcommand::Rays,
        Command::Flowout => Subcommand::Flowout,
        Command::Arrivals => Subcommand::Arrivals,
        Command::Field => Subcommand::Field,
        Command::Validate => Subcommand::Validate,
    };
    let mut text = match &args.config {
        Some(p) => std::fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?,
        None if matches!(sub, Subcommand::Validate) => BUNDLED_HELMHOLTZ.to_string(),
        None => return Err(Error::Config(format!("{} needs a config file", sub.name()))),
    };
    if let Some(e) = &args.experiment {
        text.push_str(&format!("\n[validate]\nexperiment = {e:?}\n"));
    }
    let workers = worker_count(RunConfig::parse(&text)?.workers)?;
    if let Some(n) = workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(e.to_string()))?;
    }
    let report = execute(sub, &text, args.out.as_deref())?;
    for l in &report.lines {
        println!("{l}");
    }
    for f in &report.files {
        println!("wrote {}", f.display());
    }
    Ok(report.status)
}

fn main() -> ExitCode {
    let args = Args::parse();
    let code = match run(args) {
        Ok(c) => c,
        Err(e) => report_error(&e),
    };
    ExitCode::from(code as u8)
}
