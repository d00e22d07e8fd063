use std::io;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, Subcommand};
use portrule_server::cli::{self, RunArgs};
use portrule_server::{serve, ServiceConfig, DEFAULT_LISTEN};

#[derive(Parser)]
#[command(name = "portrule", version, about = "Port-graph rewriting under strategies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a strategy on a model and record the derivation tree.
    Run(RunArgs),
    /// Start the HTTP session service.
    Serve {
        #[arg(long, default_value = DEFAULT_LISTEN)]
        listen: String,
        /// Milliseconds before a branch request is answered with a job id.
        #[arg(long, default_value_t = 2000)]
        async_after_ms: u64,
    },
    /// Replay every step of a tree document against a model.
    Verify {
        #[arg(long)]
        tree: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        rules: Option<PathBuf>,
    },
    /// Write the files of a built-in model.
    Fixture {
        name: String,
        #[arg(long, default_value = ".")]
        dir: PathBuf,
    },
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Run(args) => ExitCode::from(cli::run(&args, &mut io::stdout(), &mut io::stderr()) as u8),
        Command::Serve { listen, async_after_ms } => {
            let cfg = ServiceConfig {
                async_after: Duration::from_millis(async_after_ms),
            };
            let rt = match tokio::runtime::Runtime::new() {
                Ok(rt) => rt,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(2);
                }
            };
            eprintln!("listening on {listen}");
            match rt.block_on(serve(&listen, cfg)) {
                Ok(()) => ExitCode::SUCCESS,
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(2)
                }
            }
        }
        Command::Verify { tree, model, rules } => match cli::verify(&tree, &model, rules.as_deref()) {
            Ok(problems) if problems.is_empty() => {
                println!("ok");
                ExitCode::SUCCESS
            }
            Ok(problems) => {
                for p in problems {
                    println!("{p}");
                }
                ExitCode::from(1)
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(2)
            }
        },
        Command::Fixture { name, dir } => match cli::write_fixture(&name, &dir) {
            Ok(paths) => {
                for p in paths {
                    println!("{}", p.display());
                }
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(2)
            }
        },
    }
}
