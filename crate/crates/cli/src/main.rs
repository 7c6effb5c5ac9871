use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use nocode_cli::{render_graph, replay, GraphFormat, ReplayOptions, Source};
use nocode_core::analytics::SessionScript;
use nocode_core::{Error, ErrorKind};
use nocode_server::ServerConfig;

#[derive(Parser)]
#[command(name = "nocode", version, about = "Prompt-driven web application builder")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Dot,
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
enum ReportFormat {
    Text,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Run the HTTP API.
    Serve {
        /// TOML config file; NOCODE_* environment variables override it.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Replay a session script against mock fixtures.
    Replay {
        script: PathBuf,
        #[arg(long)]
        fixtures: PathBuf,
        /// Keep the replayed project in this data root.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Prompt counts per category from a prompt log.
    Analyze {
        log: PathBuf,
        #[arg(long, value_enum, default_value = "text")]
        format: ReportFormat,
    },
    /// Rollback statistics of a prompt log or a project.
    Stats {
        target: String,
        #[arg(long, default_value = "nocode-data")]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "text")]
        format: ReportFormat,
    },
    /// Version graph of a project, or of one participant of a log.
    ExportGraph {
        target: String,
        #[arg(long, value_enum, default_value = "dot")]
        format: Format,
        #[arg(long, default_value = "nocode-data")]
        data: PathBuf,
        #[arg(long)]
        participant: Option<String>,
    },
    /// Replay a script answering from authored responses and write the
    /// mock fixtures those answers need.
    #[command(hide = true)]
    Record {
        script: PathBuf,
        #[arg(long)]
        responses: PathBuf,
        #[arg(long)]
        fixtures: PathBuf,
    },
}

fn exit_for(e: &Error) -> ExitCode {
    match e.kind() {
        ErrorKind::Config | ErrorKind::Validation | ErrorKind::NotFound | ErrorKind::FixtureMissing => ExitCode::from(2),
        _ => ExitCode::from(1),
    }
}

fn fail(e: Error) -> ExitCode {
    eprintln!("error: {e}");
    exit_for(&e)
}

fn json<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("reports serialize")
}

fn run_replay(script: PathBuf, opts: ReplayOptions) -> ExitCode {
    let script = match SessionScript::load(&script) {
        Ok(s) => s,
        Err(e) => return fail(e),
    };
    match replay(&script, &opts) {
        Ok(report) => {
            println!("{}", report.summary());
            if opts.record_from.is_some() {
                println!("  recorded {} fixture(s) into {}", report.recorded, opts.fixtures.display());
            }
            if report.passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::Serve { config } => {
            let config = match ServerConfig::from_process_env(config.as_deref()) {
                Ok(c) => c,
                Err(e) => return fail(e),
            };
            if config.token.is_none() {
                log::warn!("no token configured: the API accepts unauthenticated requests");
            }
            match nocode_server::http::serve(config) {
                Ok(()) => ExitCode::SUCCESS,
                Err(e) => fail(e),
            }
        }
        Command::Replay { script, fixtures, data } => run_replay(
            script,
            ReplayOptions {
                fixtures,
                data_root: data,
                record_from: None,
            },
        ),
        Command::Record {
            script,
            responses,
            fixtures,
        } => run_replay(
            script,
            ReplayOptions {
                fixtures,
                data_root: None,
                record_from: Some(responses),
            },
        ),
        Command::Analyze { log, format } => {
            let target = log.to_string_lossy().into_owned();
            match Source::open(&target, &PathBuf::new()).and_then(|s| s.kinds()) {
                Ok(r) => {
                    match format {
                        ReportFormat::Text => print!("{}", r.render()),
                        ReportFormat::Json => println!("{}", json(&r)),
                    }
                    ExitCode::SUCCESS
                }
                Err(e) => fail(e),
            }
        }
        Command::Stats { target, data, format } => match Source::open(&target, &data).and_then(|s| s.rollbacks()) {
            Ok(r) => {
                match format {
                    ReportFormat::Text => print!("{}", r.render()),
                    ReportFormat::Json => println!("{}", json(&r)),
                }
                ExitCode::SUCCESS
            }
            Err(e) => fail(e),
        },
        Command::ExportGraph {
            target,
            format,
            data,
            participant,
        } => match Source::open(&target, &data).and_then(|s| s.graph(participant.as_deref())) {
            Ok(g) => {
                let f = match format {
                    Format::Dot => GraphFormat::Dot,
                    Format::Json => GraphFormat::Json,
                };
                print!("{}", render_graph(&g, f));
                ExitCode::SUCCESS
            }
            Err(e) => fail(e),
        },
    }
}
