use std::io::Write;
use std::net::{IpAddr, SocketAddr};
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use coached_cli::chat::run_chat;
use coached_cli::config::{process_env, AppConfig};
use coached_cli::eval_desk::{build_presentations, save_presentations, EvalDesk, RatingSubmission};
use coached_cli::pipeline::{
    build_backend, index_corpus, ingest_files, load_retriever, load_templates, write_corpus, CorpusSummary,
};
use coached_cli::server::{serve, Service};
use coached_cli::CliError;
use coached_core::agent::{read_turn_log, Coach, JsonlTurnLog};
use coached_eval::{export_report, load_trial_bank, ReportFormat, TTestVariant};

#[derive(Parser)]
#[command(
    name = "coached",
    version,
    about = "Retrieval-grounded therapy coach with a supervising reviewer"
)]
struct Cli {
    /// TOML config file. `COACHED_<SECTION>_<KEY>` variables override it.
    #[arg(long, short, global = true, env = "COACHED_CONFIG")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Normalize and chunk input documents.
    Ingest {
        /// Input files; defaults to corpus.paths.
        paths: Vec<PathBuf>,
    },
    /// Build the retrieval index from the chunk file.
    Index,
    /// Answer queries read line by line from stdin.
    Chat {
        /// Also print the draft, verdict and feedback of each turn.
        #[arg(long)]
        trace: bool,
        #[arg(long)]
        session: Option<String>,
        /// Therapy-session tag passed to the prompts.
        #[arg(long)]
        tag: Option<String>,
    },
    /// Run the HTTP service.
    Serve {
        #[arg(long)]
        bind: Option<IpAddr>,
        #[arg(long)]
        port: Option<u16>,
    },
    /// Blind rating workflow.
    #[command(subcommand)]
    Eval(EvalCommand),
}

#[derive(Subcommand)]
enum EvalCommand {
    /// Write blinded presentations for every rater.
    BuildTrials {
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Print the next unrated item for a rater.
    Next {
        #[arg(long)]
        rater: String,
    },
    /// Record one rating.
    Submit {
        #[arg(long)]
        rater: String,
        #[arg(long)]
        trial: String,
        #[arg(long)]
        position: usize,
        #[arg(long, allow_negative_numbers = true)]
        score: i64,
    },
    /// Compute and write the statistics report.
    Report {
        #[arg(long, default_value = "json")]
        format: ReportFormat,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Use the pooled-variance t-test instead of the configured one.
        #[arg(long)]
        pooled: bool,
    },
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<(), CliError> {
    let s = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
    match writeln!(std::io::stdout(), "{s}") {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(CliError::Io(e.to_string())),
        _ => Ok(()),
    }
}

fn ingest(config: &AppConfig, paths: Vec<PathBuf>) -> Result<ExitCode, CliError> {
    let inputs = if paths.is_empty() {
        config.corpus.paths.clone()
    } else {
        paths
    };
    if inputs.is_empty() {
        return Err(CliError::Input("no input files given and corpus.paths is empty".into()));
    }
    let outcome = ingest_files(config, &inputs);
    for (_, e) in &outcome.errors {
        eprintln!("error: {e}");
    }
    if outcome.documents.is_empty() {
        eprintln!("error: no document could be ingested");
        return Ok(ExitCode::FAILURE);
    }
    write_corpus(config, &outcome.documents, &outcome.chunks)?;
    let s = CorpusSummary::of(&outcome.documents, &outcome.chunks);
    println!("documents: {}", s.documents);
    println!("chunks: {}", s.chunks);
    println!("mean chunk chars: {:.1}", s.mean_chunk_chars);
    Ok(ExitCode::SUCCESS)
}

fn coach(config: &AppConfig) -> Result<Coach, CliError> {
    let backend = build_backend(config)?;
    let retriever = load_retriever(config)?;
    let templates = load_templates(config)?;
    let previous = read_turn_log(&config.logs.turns)?;
    let sink = Arc::new(JsonlTurnLog::open(&config.logs.turns)?);
    let coach = Coach::new(retriever, backend, templates, config.agent_config(), sink)?;
    coach.resume_numbering(&previous);
    Ok(coach)
}

fn eval(config: &AppConfig, cmd: EvalCommand) -> Result<ExitCode, CliError> {
    match cmd {
        EvalCommand::BuildTrials { seed } => {
            let e = &config.eval;
            let trials = load_trial_bank(&e.trials)?;
            let presentations = build_presentations(&trials, &e.raters, e.per_rater, seed.unwrap_or(e.seed));
            save_presentations(&e.presentations, &presentations)?;
            for rater in &e.raters {
                let n = presentations.iter().filter(|p| &p.rater_id == rater).count();
                println!("{rater}: {n} presentations");
            }
            println!("wrote {}", e.presentations.display());
        }
        EvalCommand::Next { rater } => print_json(&EvalDesk::open(config)?.next(&rater)?)?,
        EvalCommand::Submit {
            rater,
            trial,
            position,
            score,
        } => {
            let sub = RatingSubmission {
                rater_id: rater,
                trial_id: trial,
                position,
                score,
            };
            print_json(&EvalDesk::open(config)?.submit(&sub)?)?;
        }
        EvalCommand::Report { format, out, pooled } => {
            let desk = EvalDesk::open(config)?;
            let variant = if pooled { TTestVariant::Pooled } else { desk.t_test };
            let report = desk.report(variant)?;
            let path = out.unwrap_or_else(|| match format {
                ReportFormat::Json => config.eval.report.clone(),
                ReportFormat::Csv => config.eval.report.with_extension("csv"),
            });
            coached_cli::pipeline::ensure_parent(&path)?;
            export_report(&report, &path, format)?;
            for note in &report.notes {
                eprintln!("note: {note}");
            }
            println!("wrote {}", path.display());
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn run(cli: Cli) -> Result<ExitCode, CliError> {
    let config = AppConfig::load(cli.config.as_deref(), &process_env())?;
    match cli.command {
        Command::Ingest { paths } => ingest(&config, paths),
        Command::Index => {
            let (_, s) = index_corpus(&config)?;
            println!("entries: {}", s.entries);
            println!("dim: {}", s.dim);
            println!("wrote {}", config.retrieval.index.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Chat { trace, session, tag } => {
            let coach = coach(&config)?;
            let session = session.unwrap_or_else(|| format!("cli-{}", chrono::Utc::now().format("%Y%m%dT%H%M%S")));
            let stdin = std::io::stdin();
            let stats = run_chat(
                &coach,
                &session,
                tag.as_deref(),
                trace,
                stdin.lock(),
                std::io::stdout(),
                std::io::stderr(),
            )?;
            if stats.degraded > 0 {
                eprintln!("{} of {} turns used the fallback reply", stats.degraded, stats.turns);
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Serve { bind, port } => {
            let ip: IpAddr = match bind {
                Some(ip) => ip,
                None => config
                    .server
                    .bind
                    .parse()
                    .map_err(|e| CliError::Config(format!("server.bind: {e}")))?,
            };
            let addr = SocketAddr::new(ip, port.unwrap_or(config.server.port));
            let service = Arc::new(Service::open(config)?);
            // keep a handle so the service (and its blocking HTTP client) is
            // dropped after the runtime, not inside it
            let keep = service.clone();
            let result = serve(service, addr, |local| {
                println!("listening on http://{local}");
                let _ = std::io::stdout().flush();
            });
            drop(keep);
            result.map(|_| ExitCode::SUCCESS)
        }
        Command::Eval(cmd) => eval(&config, cmd),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
