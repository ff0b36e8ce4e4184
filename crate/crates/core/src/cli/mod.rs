//! The `portobello` command line: map building, validation, twinned runs,
//! run comparison and the console backend.
//!
//! stdout carries machine-readable JSON only; diagnostics go to stderr.

mod commands;
mod serve;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub use commands::{parse_init_pose, parse_yaw_search};
pub use serve::{router, ServeState};

/// Stable process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const FAILURE: i32 = 1;
    pub const FORMAT: i32 = 2;
    pub const DIVERGED: i32 = 3;
    pub const VALIDATION: i32 = 4;
    pub const INIT_FAILED: i32 = 5;
    pub const ROUTE_UNREACHABLE: i32 = 6;
    pub const BIND: i32 = 7;
    pub const SEQUENCES_DIFFER: i32 = 8;
    pub const SCENARIO_MISMATCH: i32 = 9;
    pub const USAGE: i32 = 64;
}

#[derive(Debug, Parser)]
#[command(name = "portobello", version, about = "Map-anchored driving-scenario staging and twinned runs")]
pub struct Cli {
    /// Seed for every random choice a subcommand makes.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// error, warn, info, debug or trace.
    #[arg(long, global = true, default_value = "warn")]
    pub log_level: log::LevelFilter,
    /// Bridge TCP port; falls back to PORTOBELLO_PORT, then 17333.
    #[arg(long, global = true)]
    pub port: Option<u16>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Register a scan file into a point-cloud map.
    MapBuild(MapBuildArgs),
    /// Check a scenario's schema, references and placement against a map.
    ScenarioValidate(ValidateArgs),
    /// Execute a scenario in sim or replay mode and write a run log.
    Run(RunArgs),
    /// Compare two run logs of the same scenario.
    TwinReport(TwinArgs),
    /// HTTP backend for the staging console.
    Serve(ServeArgs),
    /// Generate the synthetic demo world: map, scenario and scans.
    Demo(DemoArgs),
}

#[derive(Debug, Args)]
pub struct MapBuildArgs {
    #[arg(long)]
    pub scans: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Map voxel size, meters.
    #[arg(long, default_value_t = 0.2)]
    pub voxel: f64,
    /// Motion that admits a new keyframe, meters.
    #[arg(long, default_value_t = 1.0)]
    pub keyframe_dist: f64,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    #[arg(long)]
    pub map: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Sim,
    Replay,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    #[arg(long)]
    pub map: PathBuf,
    #[arg(long, value_enum)]
    pub mode: Mode,
    /// Scan file (replay mode).
    #[arg(long)]
    pub scans: Option<PathBuf>,
    /// Initial map→vehicle pose "x y z yaw" (replay mode).
    #[arg(long, allow_hyphen_values = true)]
    pub init_pose: Option<String>,
    /// Coarse initial yaw search "span step", radians (replay mode).
    #[arg(long)]
    pub yaw_search: Option<String>,
    /// JSON list of disturbances to inject.
    #[arg(long)]
    pub disturbances: Option<PathBuf>,
    /// Serve the bridge while running, paced at wall-clock speed.
    #[arg(long)]
    pub publish: bool,
    /// With --publish, wait for this many subscribed clients before starting.
    #[arg(long, default_value_t = 0)]
    pub wait_clients: usize,
    /// Stop after this many seconds of run time.
    #[arg(long)]
    pub max_duration: Option<f64>,
    #[arg(long)]
    pub log: PathBuf,
}

#[derive(Debug, Args)]
pub struct TwinArgs {
    #[arg(long)]
    pub a: PathBuf,
    #[arg(long)]
    pub b: PathBuf,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub map: PathBuf,
    #[arg(long)]
    pub scenario: PathBuf,
    #[arg(long, default_value_t = 17380)]
    pub http_port: u16,
    /// Address both servers bind to.
    #[arg(long, default_value = "127.0.0.1")]
    pub bind: String,
}

#[derive(Debug, Args)]
pub struct DemoArgs {
    /// Directory receiving world.pmap, scenario.json and scans.pscan.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 300.0)]
    pub route_length: f64,
    #[arg(long, default_value_t = 15)]
    pub crosswalks: usize,
    /// Per-axis scan noise, meters.
    #[arg(long, default_value_t = 0.02)]
    pub noise: f64,
    /// JSON list of disturbances applied to the drive before sensing.
    #[arg(long)]
    pub disturbances: Option<PathBuf>,
}

/// A failure carrying its exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn new(code: i32, message: impl Into<String>) -> Self {
        CliError { code, message: message.into() }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

/// Parses `args`, runs the subcommand and returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { exit::USAGE } else { exit::OK };
            let _ = e.print();
            return code;
        }
    };
    let _ = env_logger::Builder::new().filter_level(cli.log_level).target(env_logger::Target::Stderr).try_init();
    match execute(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.code
        }
    }
}

pub fn execute(cli: &Cli) -> Result<i32, CliError> {
    match &cli.command {
        Command::MapBuild(a) => commands::map_build(a),
        Command::ScenarioValidate(a) => commands::scenario_validate(a),
        Command::Run(a) => commands::run(cli, a),
        Command::TwinReport(a) => commands::twin_report(a),
        Command::Serve(a) => serve::serve(cli, a),
        Command::Demo(a) => commands::demo(cli, a),
    }
}
