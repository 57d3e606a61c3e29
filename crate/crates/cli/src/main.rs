use std::net::{IpAddr, SocketAddr};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand, ValueEnum};
use sandsim_cli::commands::{self, AnimateArgs, DistanceKind, EvalArgs, FitArgs, SimulateArgs};
use sandsim_cli::{error_line, exit_code, serve, Settings, UsageError};

#[derive(Parser)]
#[command(name = "sandsim", version, about = "Fit, animate, simulate and evaluate sand paintings")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args)]
struct ConfigArgs {
    /// Flat TOML file of configuration keys.
    #[arg(long = "config-file", global = true)]
    file: Option<PathBuf>,
    /// Override one configuration key, e.g. `--config iterations=2000`.
    #[arg(long = "config", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum FrameDist {
    L2,
    OneMinusSsim,
    External,
}

#[derive(Subcommand)]
enum Cmd {
    /// Fit strokes to a target image.
    Fit {
        target: PathBuf,
        #[arg(long)]
        plan: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(short, long)]
        output: PathBuf,
        /// Write a checkpoint every N iterations (0 disables).
        #[arg(long, default_value_t = 0)]
        checkpoint_every: usize,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Render the drawing process of a painting as numbered frames.
    Animate {
        painting: PathBuf,
        #[arg(long)]
        plan: Option<PathBuf>,
        #[arg(long = "kpf", default_value_t = 5)]
        kernels_per_frame: usize,
        #[arg(long, default_value_t = 24)]
        fps: u32,
        #[arg(short, long)]
        output: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Run the sand simulation offline and write snapshots.
    Simulate {
        painting: PathBuf,
        #[arg(long)]
        plan: Option<PathBuf>,
        #[arg(long)]
        progressive: bool,
        #[arg(long, default_value_t = 2000)]
        steps: usize,
        #[arg(long, default_value_t = 200)]
        snapshot_every: usize,
        #[arg(short, long)]
        output: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Compare a generated frame sequence with a reference sequence.
    Eval {
        #[arg(long = "gen")]
        generated: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long)]
        target: PathBuf,
        #[arg(long, value_enum, default_value_t = FrameDist::L2)]
        frame_dist: FrameDist,
        /// Per-frame distances of the generated sequence (external mode).
        #[arg(long)]
        gen_distances: Option<PathBuf>,
        /// Per-frame distances of the reference sequence (external mode).
        #[arg(long)]
        ref_distances: Option<PathBuf>,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Serve an interactive simulation over HTTP and WebSocket.
    Serve {
        #[arg(long)]
        painting: PathBuf,
        #[arg(long)]
        plan: Option<PathBuf>,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: IpAddr,
        #[arg(long)]
        progressive: bool,
        #[command(flatten)]
        config: ConfigArgs,
    },
}

fn settings(c: &ConfigArgs) -> Result<Settings> {
    Ok(Settings::load(c.file.as_deref(), &c.overrides)?)
}

fn print(v: impl serde::Serialize) -> Result<()> {
    println!("{}", serde_json::to_string(&v)?);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Cmd::Fit {
            target,
            plan,
            seed,
            output,
            checkpoint_every,
            config,
        } => {
            let s = settings(&config)?;
            print(commands::fit(
                &FitArgs {
                    target,
                    plan,
                    seed,
                    output,
                    checkpoint_every,
                },
                &s,
            )?)
        }
        Cmd::Animate {
            painting,
            plan,
            kernels_per_frame,
            fps,
            output,
            config,
        } => {
            let s = settings(&config)?;
            print(commands::animate(
                &AnimateArgs {
                    painting,
                    plan,
                    kernels_per_frame,
                    fps,
                    output,
                },
                &s,
            )?)
        }
        Cmd::Simulate {
            painting,
            plan,
            progressive,
            steps,
            snapshot_every,
            output,
            config,
        } => {
            let s = settings(&config)?;
            print(commands::simulate(
                &SimulateArgs {
                    painting,
                    plan,
                    progressive,
                    steps,
                    snapshot_every,
                    output,
                },
                &s,
            )?)
        }
        Cmd::Eval {
            generated,
            reference,
            target,
            frame_dist,
            gen_distances,
            ref_distances,
            output,
        } => print(commands::eval(&EvalArgs {
            generated,
            reference,
            target,
            distance: match frame_dist {
                FrameDist::L2 => DistanceKind::L2,
                FrameDist::OneMinusSsim => DistanceKind::OneMinusSsim,
                FrameDist::External => DistanceKind::External,
            },
            generated_distances: gen_distances,
            reference_distances: ref_distances,
            output,
        })?),
        Cmd::Serve {
            painting,
            plan,
            port,
            host,
            progressive,
            config,
        } => {
            let s = settings(&config)?;
            let p = commands::load_painting(&painting)?;
            let region_plan = commands::load_plan(plan.as_deref(), p.width, p.height)?;
            let p = commands::ensure_classified(p, &region_plan, plan.is_some());
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async {
                let handle = serve::start(&p, &region_plan, progressive, &s, SocketAddr::new(host, port)).await?;
                print(serde_json::json!({ "listening": handle.addr.to_string() }))?;
                tokio::signal::ctrl_c().await?;
                handle.shutdown().await;
                Ok(())
            })
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            let err = anyhow::Error::new(UsageError(e.kind().to_string()));
            eprintln!("{}", error_line(&err));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("{}", error_line(&err));
            ExitCode::from(exit_code(&err) as u8)
        }
    }
}
