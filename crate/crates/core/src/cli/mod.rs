//! The `miniq` command line.
//!
//! Exit status: 0 success, 1 script or argument error, 2 connection or
//! authentication error, 3 unsatisfiable request, 4 unknown or invalid
//! target (job or session).

mod attach;
mod client;
pub mod render;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use crate::daemon::{AttachInfo, Code, DaemonConfig, Request, Response, TOKEN_ENV};
use crate::jobspec::{default_name_from_path, parse_script, Dialect, NormalizeOptions};
use crate::runtime::SessionRow;
use crate::sched::{JobId, StateCode, StatusFilter, StatusRow};

pub use attach::{AttachEnd, ChordDetector, CHORD_WINDOW};
pub use client::{Client, ClientError};

pub const SERVER_ENV: &str = "MINIQ_SERVER";
pub const CONFIG_ENV: &str = "MINIQ_CONFIG";
pub const DEFAULT_SERVER: &str = "127.0.0.1:6817";

pub const EXIT_OK: i32 = 0;
pub const EXIT_PARSE: i32 = 1;
pub const EXIT_CONNECTION: i32 = 2;
pub const EXIT_UNSATISFIABLE: i32 = 3;
pub const EXIT_TARGET: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "miniq", version, about = "Desk-scale batch queue with PBS/SLURM scripts and detachable sessions")]
pub struct Cli {
    /// Daemon address (host:port).
    #[arg(long, global = true, env = SERVER_ENV)]
    pub server: Option<String>,
    /// Shared token; overrides the config file.
    #[arg(long, global = true, env = TOKEN_ENV, hide_env_values = true)]
    pub token: Option<String>,
    /// Emit one JSON document per row instead of a table.
    #[arg(long, global = true)]
    pub json: bool,
    /// Config file. The daemon reads its full settings from it; clients
    /// take `server` (or `listen`) and `token`.
    #[arg(long, global = true, env = CONFIG_ENV)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the daemon in the foreground.
    Daemon,
    /// Submit a PBS or SLURM job script; prints the job id.
    #[command(visible_aliases = ["qsub", "sbatch"])]
    Submit(SubmitArgs),
    /// Show jobs.
    #[command(visible_aliases = ["qstat", "squeue"])]
    Stat(StatArgs),
    /// Cancel a pending or running job.
    #[command(visible_aliases = ["qdel", "scancel"])]
    Cancel { job_id: u64 },
    /// Manage named sessions.
    #[command(subcommand)]
    Session(SessionCommand),
    /// List sessions (same as `session list`).
    Sessions,
}

#[derive(Debug, Args)]
pub struct SubmitArgs {
    pub script: PathBuf,
    /// Directive dialect; detected from the script when omitted.
    #[arg(long)]
    pub dialect: Option<Dialect>,
    /// Directory the job runs in; defaults to the current directory.
    #[arg(long)]
    pub workdir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct StatArgs {
    /// Only jobs in this state (PD, R, CD, F, TO, CA).
    #[arg(long)]
    pub state: Option<StateCode>,
    /// Only jobs with this name.
    #[arg(long)]
    pub name: Option<String>,
    pub job_id: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum SessionCommand {
    /// Start a command in a new named session and return at once.
    Run {
        #[arg(short = 'S', long = "name")]
        name: String,
        #[arg(last = true, required = true)]
        command: Vec<String>,
    },
    /// Stream a session's output; Ctrl+A then D detaches.
    #[command(visible_alias = "r")]
    Attach { name: String },
    #[command(visible_alias = "ls")]
    List,
    Kill { name: String },
}

/// Client file settings; a daemon config file also works.
#[derive(Debug, Default, Deserialize)]
struct ClientFile {
    #[serde(alias = "listen")]
    server: Option<String>,
    token: Option<String>,
}

/// Resolved connection settings.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClientConfig {
    pub server: String,
    pub token: String,
    pub json: bool,
}

/// An error on its way to the terminal.
#[derive(Debug)]
pub struct Failure {
    pub status: i32,
    pub message: String,
}

impl Failure {
    fn new(status: i32, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }
}

impl From<ClientError> for Failure {
    fn from(e: ClientError) -> Self {
        Failure::new(EXIT_CONNECTION, e.to_string())
    }
}

impl From<Response> for Failure {
    fn from(r: Response) -> Self {
        Failure::new(
            r.code.exit_status(),
            r.message().unwrap_or("request failed").to_string(),
        )
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::new(EXIT_CONNECTION, e.to_string())
    }
}

impl Cli {
    /// Applies flag > environment > config file precedence. The environment
    /// layer is folded into the flags by clap.
    pub fn client_config(&self) -> Result<ClientConfig, Failure> {
        let file = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| {
                    Failure::new(EXIT_PARSE, format!("cannot read {}: {e}", path.display()))
                })?;
                toml::from_str::<ClientFile>(&text).map_err(|e| {
                    Failure::new(EXIT_PARSE, format!("invalid config {}: {e}", path.display()))
                })?
            }
            None => ClientFile::default(),
        };
        let token = self
            .token
            .clone()
            .or(file.token)
            .filter(|t| !t.is_empty())
            .ok_or_else(|| {
                Failure::new(
                    EXIT_CONNECTION,
                    format!("no token given; use --token, {TOKEN_ENV} or a config file"),
                )
            })?;
        Ok(ClientConfig {
            server: self
                .server
                .clone()
                .or(file.server)
                .unwrap_or_else(|| DEFAULT_SERVER.to_string()),
            token,
            json: self.json,
        })
    }
}

/// Parses arguments, runs the command and returns the exit status.
pub fn main() -> i32 {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("miniq: {}", f.message);
            f.status
        }
    }
}

pub fn run(cli: &Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::Daemon => run_daemon(cli.config.as_deref()),
        Command::Submit(args) => submit(cli, args),
        Command::Stat(args) => stat(cli, args),
        Command::Cancel { job_id } => cancel(cli, JobId(*job_id)),
        Command::Sessions | Command::Session(SessionCommand::List) => session_list(cli),
        Command::Session(SessionCommand::Run { name, command }) => {
            let config = cli.client_config()?;
            call(
                &config,
                Request::SessionCreate {
                    name: name.clone(),
                    command: command.clone(),
                },
            )?;
            Ok(())
        }
        Command::Session(SessionCommand::Kill { name }) => {
            let config = cli.client_config()?;
            call(&config, Request::SessionKill { name: name.clone() })?;
            Ok(())
        }
        Command::Session(SessionCommand::Attach { name }) => session_attach(cli, name),
    }
}

fn run_daemon(config: Option<&Path>) -> Result<(), Failure> {
    let path = config.ok_or_else(|| Failure::new(EXIT_PARSE, "daemon needs --config"))?;
    let config = DaemonConfig::load(path).map_err(|e| Failure::new(EXIT_PARSE, e.to_string()))?;
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()?;
    runtime
        .block_on(crate::daemon::serve(config))
        .map_err(|e| Failure::new(EXIT_CONNECTION, e.to_string()))
}

/// One request on a fresh connection; failures become exit statuses.
fn call(config: &ClientConfig, request: Request) -> Result<Response, Failure> {
    let mut client = Client::connect(&config.server, &config.token)?;
    let response = client.request(&request)?;
    if response.ok {
        Ok(response)
    } else {
        Err(response.into())
    }
}

fn submit(cli: &Cli, args: &SubmitArgs) -> Result<(), Failure> {
    let script = std::fs::read_to_string(&args.script).map_err(|e| {
        Failure::new(EXIT_PARSE, format!("cannot read {}: {e}", args.script.display()))
    })?;
    let default_name = default_name_from_path(&args.script);
    let options = NormalizeOptions {
        strict: false,
        default_name: default_name.clone(),
    };
    let normalized = parse_script(&script, args.dialect, &options)
        .map_err(|e| Failure::new(EXIT_PARSE, format!("{}: {e}", args.script.display())))?;
    for warning in &normalized.warnings {
        eprintln!("miniq: warning: {warning}");
    }
    let config = cli.client_config()?;
    let dir = match &args.workdir {
        Some(dir) => dir.clone(),
        None => std::env::current_dir()?,
    };
    let submit_dir = std::path::absolute(&dir)?;
    let response = call(
        &config,
        Request::Submit {
            script,
            submit_dir: Some(submit_dir),
            dialect: Some(normalized.spec.dialect),
            default_name,
        },
    )?;
    let id = response
        .payload
        .get("job_id")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| Failure::new(EXIT_CONNECTION, "daemon reply has no job id"))?;
    println!("{id}");
    Ok(())
}

fn stat(cli: &Cli, args: &StatArgs) -> Result<(), Failure> {
    let config = cli.client_config()?;
    let filter = StatusFilter {
        state: args.state,
        name: args.name.clone(),
        job_id: args.job_id.map(JobId),
    };
    let response = call(&config, Request::Status { filter })?;
    let rows: Vec<StatusRow> = field(&response, "rows")?;
    if config.json {
        print!("{}", render::json_lines(&rows));
    } else {
        print!("{}", render::status_table(&rows));
    }
    Ok(())
}

fn cancel(cli: &Cli, id: JobId) -> Result<(), Failure> {
    let config = cli.client_config()?;
    let response = call(&config, Request::Cancel { job_id: id })?;
    if config.json {
        println!("{}", response.payload);
    } else {
        println!("{id} cancelled");
    }
    Ok(())
}

fn session_list(cli: &Cli) -> Result<(), Failure> {
    let config = cli.client_config()?;
    let response = call(&config, Request::SessionList)?;
    let rows: Vec<SessionRow> = field(&response, "sessions")?;
    if config.json {
        print!("{}", render::json_lines(&rows));
    } else {
        print!("{}", render::session_table(&rows));
    }
    Ok(())
}

fn session_attach(cli: &Cli, name: &str) -> Result<(), Failure> {
    let config = cli.client_config()?;
    let mut client = Client::connect(&config.server, &config.token)?;
    let response = client.request(&Request::Attach {
        name: name.to_string(),
        since: None,
    })?;
    if !response.ok {
        return Err(response.into());
    }
    let info: AttachInfo = serde_json::from_value(response.payload)
        .map_err(|e| Failure::new(EXIT_CONNECTION, e.to_string()))?;
    match attach::attach(client, name, info)? {
        AttachEnd::Detached => println!("\r\n[detached]"),
        AttachEnd::Ended(_) => println!("\r\n[session ended]"),
    }
    Ok(())
}

fn field<T: serde::de::DeserializeOwned>(response: &Response, key: &str) -> Result<T, Failure> {
    let value = response.payload.get(key).cloned().unwrap_or_default();
    serde_json::from_value(value).map_err(|e| {
        Failure::new(
            Code::Internal.exit_status(),
            format!("unexpected daemon reply: {e}"),
        )
    })
}
