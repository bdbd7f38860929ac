//! `offload`: plan, simulate, execute, sweep and compare offloaded optimizer
//! updates from a JSON scenario file.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use offload_core::executor::ExecMode;
use offload_core::SystemProfile;

use offload_cli::commands::{self, Axis, Ctx};
use offload_cli::error::CliError;
use offload_cli::scenario::{Format, ProfileRef, Scenario};

#[derive(Debug, Parser)]
#[command(name = "offload", version, about = "Interleaved host/device optimizer offload planner and simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Scenario file (JSON).
    #[arg(long)]
    scenario: PathBuf,
    /// Output directory; overrides the scenario's `output.dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Trace format; overrides the scenario's `output.format`.
    #[arg(long, value_enum)]
    format: Option<Format>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Mode {
    Virtual,
    Throttled,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Print the optimal host-to-device update ratio for a profile.
    Plan {
        #[arg(long, required_unless_present = "profile", conflicts_with = "profile")]
        scenario: Option<PathBuf>,
        /// Catalog name (v100-node, h100-node) or a profile JSON file.
        #[arg(long)]
        profile: Option<String>,
        /// Also write the action list of the interleaved plan as JSON.
        #[arg(long)]
        emit_actions: bool,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Simulate one iteration per approach and write traces.
    Simulate(Common),
    /// Run the update numerically and check it against the sequential reference.
    Execute {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "virtual")]
        mode: Mode,
        /// Wall-clock seconds per modelled second in throttled mode.
        #[arg(long, default_value_t = 1e-3)]
        time_scale: f64,
    },
    /// Sweep the update ratio, the static ratio or the microbatch scale.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        axis: Axis,
        /// Worker threads for the sweep.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Compare approaches and print a speedup table against the first one.
    Compare(Common),
}

fn profile_arg(s: &str) -> Result<ProfileRef, CliError> {
    if SystemProfile::catalog(s).is_some() {
        return Ok(ProfileRef::Named(s.to_string()));
    }
    let path = Path::new(s);
    if !path.exists() {
        return Err(CliError::Validation(format!(
            "unknown profile {s:?}; known: {}",
            SystemProfile::CATALOG.join(", ")
        )));
    }
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("reading {s}: {e}")))?;
    let p: SystemProfile =
        serde_json::from_str(&text).map_err(|e| CliError::Validation(format!("malformed profile: {e}")))?;
    Ok(ProfileRef::Inline(p))
}

fn ctx(c: Common) -> Result<Ctx, CliError> {
    Ctx::new(Scenario::load(&c.scenario)?, c.out, c.format)
}

fn run(cli: Cli) -> Result<String, CliError> {
    match cli.command {
        Command::Plan {
            scenario,
            profile,
            emit_actions,
            out,
        } => match (scenario, profile) {
            (Some(path), _) => {
                let sc = Scenario::load(&path)?;
                commands::plan(&sc.profile, Some(&sc), emit_actions, out)
            }
            (None, Some(p)) => commands::plan(&profile_arg(&p)?, None, emit_actions, out),
            (None, None) => Err(CliError::Validation("plan needs --scenario or --profile".into())),
        },
        Command::Simulate(c) => commands::simulate(&ctx(c)?),
        Command::Execute {
            common,
            mode,
            time_scale,
        } => {
            let mode = match mode {
                Mode::Virtual => ExecMode::VirtualTime,
                Mode::Throttled => ExecMode::Throttled { time_scale },
            };
            commands::execute(&ctx(common)?, mode)
        }
        Command::Sweep { common, axis, jobs } => commands::sweep(&ctx(common)?, axis, jobs),
        Command::Compare(c) => commands::compare(&ctx(c)?),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            // usage errors exit with 2, help and version with 0
            e.exit();
        }
    };
    match run(cli) {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
