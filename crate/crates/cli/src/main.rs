use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::mpsc;
use std::time::Duration;

use anyhow::{anyhow, Context, Result};
use clap::{Parser, Subcommand};
use log::info;

use dsvp::bench::{self, BenchMode, DEFAULT_ITERATIONS};
use dsvp::fault::restart_on;
use dsvp::node::{Node, NodeConfig, LOCAL_PLACE};
use dsvp::programs::{self, fibonacci_buffer, fibonacci_family, slow_fibonacci_family};
use dsvp::svp::Place;

/// Environment variable holding the log filter, e.g. `DSVP_LOG=debug`.
const LOG_ENV: &str = "DSVP_LOG";

#[derive(Parser)]
#[command(name = "dsvp", version, about = "Distributed thread families over TCP")]
struct Cli {
    /// Node configuration file (TOML).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a node daemon until interrupted.
    Serve {
        /// Listen endpoint; overrides the config file and DSVP_LISTEN.
        #[arg(long, value_name = "HOST:PORT")]
        listen: Option<String>,
    },
    /// Compute the first N Fibonacci numbers on a place.
    Fib {
        n: usize,
        #[arg(value_name = "PLACE", conflicts_with = "place")]
        at: Option<String>,
        #[arg(long, value_name = "NAME")]
        place: Option<String>,
        /// Run the sequential schedule instead of a concurrent family.
        #[arg(long)]
        sequential: bool,
    },
    /// Measure paired create and sync latency of an empty family.
    Bench {
        #[arg(value_name = "PLACE", conflicts_with = "place")]
        at: Option<String>,
        #[arg(long, value_name = "NAME")]
        place: Option<String>,
        #[arg(long, default_value_t = DEFAULT_ITERATIONS)]
        iters: usize,
        #[arg(long, default_value_t = 100)]
        warmup: usize,
        #[arg(long, default_value = "warm")]
        mode: BenchMode,
        /// Raw sample file, one nanosecond count per line.
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
    },
    /// Let a watchdog kill a slow family, then restart it elsewhere.
    KillDemo {
        #[arg(long, default_value = LOCAL_PLACE)]
        place: String,
        #[arg(long, default_value = LOCAL_PLACE)]
        alternate: String,
        #[arg(long, default_value_t = 20)]
        n: usize,
        /// Per-thread delay of the family.
        #[arg(long, default_value_t = 200)]
        delay_ms: u64,
        #[arg(long, default_value_t = 50)]
        deadline_ms: u64,
    },
}

/// Failures before any work started: bad configuration, bad arguments,
/// unbindable endpoints. They exit with status 2.
#[derive(Debug)]
struct Setup(anyhow::Error);

impl std::fmt::Display for Setup {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:#}", self.0)
    }
}

impl std::error::Error for Setup {}

fn setup(e: anyhow::Error) -> anyhow::Error {
    anyhow::Error::new(Setup(e))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let default_filter = if matches!(cli.command, Command::Serve { .. }) { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::new().filter_or(LOG_ENV, default_filter)).init();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("dsvp: {e:#}");
            if e.is::<Setup>() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    let config = load_config(cli.config.as_deref()).map_err(setup)?;
    match cli.command {
        Command::Serve { listen } => serve(config, listen),
        Command::Fib {
            n,
            at,
            place,
            sequential,
        } => fib(config, n, at.or(place).as_deref().unwrap_or(LOCAL_PLACE), sequential),
        Command::Bench {
            at,
            place,
            iters,
            warmup,
            mode,
            out,
        } => run_bench(config, at.or(place).as_deref().unwrap_or(LOCAL_PLACE), iters, warmup, mode, out),
        Command::KillDemo {
            place,
            alternate,
            n,
            delay_ms,
            deadline_ms,
        } => kill_demo(config, &place, &alternate, n, delay_ms, deadline_ms),
    }
}

fn load_config(path: Option<&Path>) -> Result<NodeConfig> {
    let config = match path {
        Some(p) => NodeConfig::load(p)?,
        None => NodeConfig::new("dsvp"),
    };
    Ok(config.apply_env()?)
}

fn node(config: &NodeConfig) -> Result<Node> {
    let node = Node::new(config);
    programs::register_standard(node.runtime()).context("registering example programs")?;
    Ok(node)
}

fn resolve(node: &Node, name: &str) -> Result<Place> {
    node.place(name).ok_or_else(|| {
        setup(anyhow!(
            "unknown place {name:?}; known places: {}",
            node.place_names().join(", ")
        ))
    })
}

fn serve(config: NodeConfig, listen: Option<String>) -> Result<ExitCode> {
    let addr = listen
        .or_else(|| config.listen.clone())
        .unwrap_or_else(|| "127.0.0.1:7100".to_owned());
    let node = node(&config)?;
    let daemon = node.serve(&addr).with_context(|| format!("binding {addr}")).map_err(setup)?;
    info!(
        "node {} serving {}",
        node.id(),
        node.runtime().functions().names().join(", ")
    );
    info!("places: {}", node.place_names().join(", "));
    let mut stdout = std::io::stdout();
    writeln!(stdout, "listening on {}", daemon.endpoint())?;
    stdout.flush()?;

    let (tx, rx) = mpsc::channel();
    ctrlc::set_handler(move || {
        let _ = tx.send(());
    })
    .context("installing signal handler")?;
    let _ = rx.recv();
    info!("shutting down");
    drop(daemon);
    Ok(ExitCode::SUCCESS)
}

fn fib(config: NodeConfig, n: usize, place_name: &str, sequential: bool) -> Result<ExitCode> {
    if n < 2 {
        return Err(setup(anyhow!("N must be at least 2, got {n}")));
    }
    let node = node(&config)?;
    let place = resolve(&node, place_name)?;
    let result = fibonacci_buffer(n);
    let desc = fibonacci_family(place, &result);
    let outcome = if sequential {
        node.run_sequential(desc)?
    } else {
        node.create(desc)?.sync()?
    };
    if !outcome.status.is_completed() {
        eprintln!("fib on {place_name}: {}", outcome.status);
        return Ok(ExitCode::FAILURE);
    }
    let line: Vec<String> = result.to_i64s().iter().map(i64::to_string).collect();
    println!("{}", line.join(" "));
    Ok(ExitCode::SUCCESS)
}

fn run_bench(
    config: NodeConfig,
    place_name: &str,
    iters: usize,
    warmup: usize,
    mode: BenchMode,
    out: Option<PathBuf>,
) -> Result<ExitCode> {
    if iters == 0 {
        return Err(setup(anyhow!("--iters must be at least 1")));
    }
    let node = node(&config)?;
    let place = resolve(&node, place_name)?;
    let run = bench::run(&node, place_name, &place, iters, warmup, mode)?;
    print!("{}", run.report());
    if let Some(path) = out {
        run.write_raw(&path).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(if run.aborted.is_some() { ExitCode::FAILURE } else { ExitCode::SUCCESS })
}

fn kill_demo(
    config: NodeConfig,
    place_name: &str,
    alternate_name: &str,
    n: usize,
    delay_ms: u64,
    deadline_ms: u64,
) -> Result<ExitCode> {
    if n < 2 {
        return Err(setup(anyhow!("--n must be at least 2")));
    }
    let node = node(&config)?;
    let place = resolve(&node, place_name)?;
    let alternate = resolve(&node, alternate_name)?;
    let result = fibonacci_buffer(n);
    let desc = slow_fibonacci_family(place, &result, Duration::from_millis(delay_ms));

    let mut first = node.create(desc.clone())?;
    node.watchdog().arm(&first.killer(), Duration::from_millis(deadline_ms));
    let outcome = first.sync()?;
    println!("{place_name}: {}", outcome.status);
    if outcome.status.is_completed() {
        println!("finished before the {deadline_ms} ms deadline; nothing to restart");
    } else {
        let outcome = restart_on(&node, Some(&first.killer()), &alternate, &desc, node.retry_policy())?;
        println!("{alternate_name}: {}", outcome.status);
        if !outcome.status.is_completed() {
            return Ok(ExitCode::FAILURE);
        }
    }
    let line: Vec<String> = result.to_i64s().iter().map(i64::to_string).collect();
    println!("{}", line.join(" "));
    Ok(ExitCode::SUCCESS)
}
