use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand as ClapSubcommand};
use gapgreen::config::RunConfig;
use gapgreen::report::{run_subcommand, Subcommand};

/// Green's function asymptotics of periodic elliptic operators inside a
/// spectral gap.
#[derive(Parser)]
#[command(name = "gapgreen", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(ClapSubcommand)]
enum Command {
    /// Band functions on a Brillouin-zone grid and the gaps between them.
    Bands(Args),
    /// Locate the selected gap edge and check its assumptions.
    EdgeCheck(Args),
    /// Continue the edge band to imaginary quasimomenta along rays.
    Dispersion(Args),
    /// Support points of the level set in the configured directions.
    Support(Args),
    /// Leading term, the local integral and the Weierstrass check.
    Asymptote(Args),
    /// Quadrature oracle against the leading term along rays.
    Oracle(Args),
    /// Every stage plus the acceptance checks; writes report.json.
    Validate(Args),
}

#[derive(clap::Args)]
struct Args {
    /// Run configuration (TOML).
    #[arg(short, long, value_name = "FILE", default_value = "gapgreen.toml")]
    config: PathBuf,
}

impl Command {
    fn split(&self) -> (Subcommand, &Args) {
        match self {
            Command::Bands(a) => (Subcommand::Bands, a),
            Command::EdgeCheck(a) => (Subcommand::EdgeCheck, a),
            Command::Dispersion(a) => (Subcommand::Dispersion, a),
            Command::Support(a) => (Subcommand::Support, a),
            Command::Asymptote(a) => (Subcommand::Asymptote, a),
            Command::Oracle(a) => (Subcommand::Oracle, a),
            Command::Validate(a) => (Subcommand::Validate, a),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (cmd, args) = cli.command.split();
    let path = args.config.clone();
    let cfg = RunConfig::load(&path).and_then(|mut c| c.apply_env().map(|_| c));
    let cfg = match cfg {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {}: {e}", path.display());
            return ExitCode::from(2);
        }
    };
    match run_subcommand(cmd, &cfg) {
        Ok(out) => {
            for f in &out.files {
                println!("wrote {}", f.display());
            }
            println!("{}: {}", cmd.name(), out.summary);
            if out.ok {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error in {}: {e}", cmd.name());
            ExitCode::from(3)
        }
    }
}
