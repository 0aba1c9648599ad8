use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mlfe::commands::{self, Command};
use mlfe::io::event;
use mlfe::{exit, CliError};
use serde_json::json;

#[derive(Parser)]
#[command(name = "mlfe", version, about = "Batch experiments for the regular-tree Markovian local-field equation")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the grid flow and record the free-energy ledger
    Flow(Common),
    /// Solve for the stationary root marginal
    Cayley(Common),
    /// Transfer-operator and lift-entropy report for kappa = 2
    Chain {
        #[command(flatten)]
        common: Common,
        /// Comma-separated chain half-lengths; overrides chain.n_list
        #[arg(long)]
        n_list: Option<String>,
    },
    /// Run the particle engine and record root moments
    Particles(Common),
    /// Mixture-initialised flow contrasting H_kappa with H_hat2
    CompareMrf(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Output directory; defaults to out_dir in the config, then "."
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads
    #[arg(long, env = "MLFE_THREADS")]
    threads: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, common, n_list) = match cli.command {
        Cmd::Flow(c) => (Command::Flow, c, None),
        Cmd::Cayley(c) => (Command::Cayley, c, None),
        Cmd::Chain { common, n_list } => (Command::Chain, common, n_list),
        Cmd::Particles(c) => (Command::Particles, c, None),
        Cmd::CompareMrf(c) => (Command::CompareMrf, c, None),
    };
    let result = (|| {
        if let Some(n) = common.threads {
            if n == 0 {
                return Err(CliError::validation("--threads must be positive"));
            }
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .map_err(|e| CliError::validation(format!("thread pool: {e}")))?;
        }
        commands::execute(command, &common.config, common.out.as_deref(), n_list.as_deref())
    })();
    match result {
        Ok(dir) => {
            event("done", json!({"out": dir.display().to_string()}));
            ExitCode::from(exit::OK as u8)
        }
        Err(e) => {
            event("error", json!({"kind": e.kind(), "message": e.to_string()}));
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
