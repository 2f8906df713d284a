use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use scatterfit_cli::fitcmd::{run_fit, FitOptions};
use scatterfit_cli::service::{self, Session};
use scatterfit_cli::simulate::{read_coords, simulate, Format, Points, SimulateOptions};
use scatterfit_cli::{grid::Grid, CliError, Workspace};

#[derive(Parser)]
#[command(name = "scatterfit", version, about = "Simulate, fit and serve scattering models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Model file (JSON)
    model: PathBuf,
    /// Column layout for data files that do not declare one, e.g. `x,y,sigma`
    #[arg(long)]
    columns: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate functors on a grid and write CSV or PNG files
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Grid spec such as `q=0.001:4:0.001` or `qx=-1:1@200,qy=-1:1@200`
        #[arg(long, conflicts_with = "coords")]
        grid: Option<String>,
        /// Table of coordinates, one column per variable
        #[arg(long)]
        coords: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// csv or png; defaults to the extension of --out
        #[arg(long)]
        format: Option<String>,
        /// Only these functors (repeatable)
        #[arg(long = "functor")]
        functors: Vec<String>,
    },
    /// Fit the declared models to their datasets
    Fit {
        #[command(flatten)]
        common: Common,
        /// lm or de
        #[arg(long)]
        optimizer: Option<String>,
        /// Report file (JSON)
        #[arg(long)]
        out: Option<PathBuf>,
        /// Seed for differential evolution
        #[arg(long)]
        seed: Option<u64>,
        /// Write the model file with fitted values to this path
        #[arg(long)]
        save_model: Option<PathBuf>,
    },
    /// Serve the HTTP API (and static UI assets) for one model file
    Serve {
        #[command(flatten)]
        common: Common,
        #[arg(long, env = "SCATTERFIT_PORT", default_value_t = 8080)]
        port: u16,
        #[arg(long)]
        static_dir: Option<PathBuf>,
        /// Parameter snapshot written on shutdown
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load(c: &Common) -> Result<Workspace, CliError> {
    Workspace::load_with(&c.model, c.columns.as_deref())
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate {
            common,
            grid,
            coords,
            out,
            format,
            functors,
        } => {
            let ws = load(&common)?;
            let format = match format {
                Some(f) => Format::parse(&f).ok_or_else(|| CliError::schema("--format", format!("expected csv or png, got `{f}`")))?,
                None => out
                    .extension()
                    .and_then(|e| e.to_str())
                    .and_then(Format::parse)
                    .unwrap_or(Format::Csv),
            };
            let points = match (grid, coords) {
                (Some(g), _) => Points::Grid(Grid::parse(&g)?),
                (None, Some(path)) => {
                    let dims = match functors.first().and_then(|n| ws.functor(n)).or(ws.functors.first()) {
                        Some(f) => f.arity(),
                        None => return Err(CliError::schema("functors", "no functors")),
                    };
                    Points::Table(read_coords(&path, dims)?)
                }
                (None, None) => Points::FromData,
            };
            let opts = SimulateOptions {
                points,
                out,
                format,
                functors,
            };
            for path in simulate(&ws, &opts)? {
                println!("{}", path.display());
            }
            Ok(())
        }
        Command::Fit {
            common,
            optimizer,
            out,
            seed,
            save_model,
        } => {
            let ws = load(&common)?;
            let opts = FitOptions {
                method: optimizer,
                seed,
                out,
                save_model,
            };
            let rep = run_fit(&ws, &opts)?;
            println!("status: {}", rep.status.as_str());
            for p in &rep.parameters {
                match p.error {
                    Some(e) => println!("{} = {} ± {}", p.name, p.raw_value * p.scale, e * p.scale),
                    None => println!("{} = {}", p.name, p.raw_value * p.scale),
                }
            }
            println!("chi2 = {:.9e}", rep.chi2);
            Ok(())
        }
        Command::Serve {
            common,
            port,
            static_dir,
            out,
        } => {
            let ws = load(&common)?;
            let rt = tokio::runtime::Builder::new_multi_thread()
                .enable_all()
                .build()
                .map_err(|e| CliError::Eval(e.to_string()))?;
            rt.block_on(async move {
                let (listener, addr) = service::bind(port).await?;
                println!("listening on http://{addr}");
                let session = Session::new(ws);
                let shutdown = async {
                    let _ = tokio::signal::ctrl_c().await;
                };
                service::serve(listener, session.clone(), static_dir, shutdown)
                    .await
                    .map_err(|e| CliError::Eval(e.to_string()))?;
                session.stop_fit();
                if let Some(path) = out {
                    std::fs::write(&path, session.snapshot().to_json())
                        .map_err(|e| CliError::schema("--out", format!("cannot write {}: {e}", path.display())))?;
                    println!("saved {}", path.display());
                }
                Ok(())
            })
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
