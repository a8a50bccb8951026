use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};

use spatial_recall::api::{ForgetRequest, MemoryView, QueryOutcome, VerifyRequest};
use spatial_recall::config::{ProviderMode, Settings};
use spatial_recall::harness::{self, client, persona, replay::ReplayLog, report, scenario};
use spatial_recall::{Engine, EngineConfig, MemoryId, SystemClock, UserId};

#[derive(Parser)]
#[command(name = "spatial-recall", version, about = "Spatial memory engine and operator tools")]
struct Cli {
    /// TOML settings file. SPATIAL_RECALL_* variables override it.
    #[arg(long, global = true, env = "SPATIAL_RECALL_CONFIG")]
    config: Option<PathBuf>,

    /// Overrides the configured data directory.
    #[arg(long, global = true)]
    data_dir: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the HTTP API.
    Serve {
        /// Overrides the configured bind address.
        #[arg(long)]
        bind: Option<String>,
    },
    /// Store a persona's memories, auto-accepting each one.
    Seed { persona: PathBuf },
    /// Replay a scenario and check its expectations.
    Replay {
        scenario: PathBuf,
        /// Base URL of a running server. Without it the scenario runs in
        /// process against a fresh store.
        #[arg(long)]
        server: Option<String>,
        /// Where to write the step log.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Summarize a replay log.
    Report {
        log: PathBuf,
        /// Include request latency (varies between runs).
        #[arg(long)]
        latency: bool,
    },
    /// Inspect or prune a user's corpus.
    Corpus {
        #[command(subcommand)]
        command: CorpusCommand,
    },
}

#[derive(Subcommand)]
enum CorpusCommand {
    /// List memories, or the users with a corpus when no user is given.
    Ls {
        #[arg(long)]
        user: Option<String>,
    },
    /// Queue a memory for removal; with --yes, confirm it right away.
    Rm {
        #[arg(long)]
        user: String,
        memory_id: String,
        #[arg(long)]
        yes: bool,
    },
}

fn settings(cli: &Cli) -> anyhow::Result<Settings> {
    let mut s = Settings::load(cli.config.as_deref())?;
    if let Some(d) = &cli.data_dir {
        s.data_dir = d.clone();
    }
    Ok(s)
}

fn engine(s: &Settings) -> anyhow::Result<Engine> {
    Ok(Engine::new(
        EngineConfig::from_settings(s),
        s.provider_suite()?,
        Arc::new(SystemClock),
    )?)
}

fn serve(s: &Settings, bind: Option<String>) -> anyhow::Result<()> {
    // Providers own blocking HTTP clients, which must be built outside the
    // async runtime.
    let engine = Arc::new(engine(s)?);
    let addr = bind
        .as_deref()
        .unwrap_or(&s.bind)
        .parse()
        .with_context(|| format!("bad bind address {:?}", s.bind))?;
    let mode = match s.providers.mode {
        ProviderMode::Stub => "stub",
        ProviderMode::Live => "live",
    };
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(spatial_recall::server::serve(engine, addr, mode, async {
        let _ = tokio::signal::ctrl_c().await;
    }))
}

fn seed(s: &Settings, path: &Path) -> anyhow::Result<()> {
    let cfg = EngineConfig::from_settings(s);
    let p = persona::load_persona(path, &cfg.lexicon)?;
    let e = engine(s)?;
    let n = e.seed(&p.user_id, p.episodes)?;
    println!("seeded {n} memories for {}", p.user_id);
    Ok(())
}

fn replay(s: &Settings, path: &Path, server: Option<&str>, log_path: Option<&Path>) -> anyhow::Result<bool> {
    let sc = scenario::load_scenario(path)?;
    let log = match server {
        Some(url) => {
            let http = client::Http::new(url, Duration::from_secs(60))?;
            http.check().with_context(|| format!("server {url} unreachable"))?;
            spatial_recall::harness::replay::replay(&sc, &http)?
        }
        None => {
            let dir = s.data_dir.join(format!("replay-{}", std::process::id()));
            if dir.exists() {
                bail!("{} already exists", dir.display());
            }
            let mut cfg = EngineConfig::from_settings(s);
            cfg.data_dir = dir.clone();
            let result = harness::replay_in_process(&sc, cfg, s.provider_suite()?);
            let _ = std::fs::remove_dir_all(&dir);
            result?
        }
    };
    if let Some(p) = log_path {
        log.write(p)?;
    }
    let r = report::build_report(&log);
    print!("{}", report::render(&r, true));
    Ok(r.passed())
}

fn corpus(s: &Settings, cmd: &CorpusCommand) -> anyhow::Result<()> {
    let e = engine(s)?;
    match cmd {
        CorpusCommand::Ls { user: None } => {
            for u in e.known_users()? {
                println!("{u}");
            }
        }
        CorpusCommand::Ls { user: Some(u) } => {
            for m in e.memories(&UserId::from(u.as_str()))? {
                let v = MemoryView::from(&m);
                println!(
                    "{}\t{}\t{}\t{:?}\t{}",
                    v.id,
                    v.created_at.format("%Y-%m-%d %H:%M"),
                    v.space_label,
                    v.source_kind,
                    v.query_text
                );
            }
        }
        CorpusCommand::Rm { user, memory_id, yes } => {
            let user = UserId::from(user.as_str());
            let out = e.handle_forget(&ForgetRequest {
                user_id: user.clone(),
                query_text: None,
                memory_id: Some(MemoryId::from(memory_id.as_str())),
            })?;
            let QueryOutcome::Pending { verification_id, summary, .. } = out else {
                bail!("removal did not produce a pending entry");
            };
            println!("{summary}");
            if *yes {
                e.verify(&VerifyRequest {
                    user_id: Some(user),
                    verification_id,
                    accept: true,
                    replacement_answer: None,
                })?;
                println!("removed {memory_id}");
            } else {
                println!("pending {verification_id}; confirm through /v1/verify or rerun with --yes");
            }
        }
    }
    e.flush()?;
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    match &cli.command {
        Command::Report { log, latency } => {
            let l = ReplayLog::load(log)?;
            let r = report::build_report(&l);
            print!("{}", report::render(&r, *latency));
            Ok(r.passed())
        }
        Command::Serve { bind } => serve(&settings(&cli)?, bind.clone()).map(|_| true),
        Command::Seed { persona } => seed(&settings(&cli)?, persona).map(|_| true),
        Command::Replay { scenario, server, log } => {
            replay(&settings(&cli)?, scenario, server.as_deref(), log.as_deref())
        }
        Command::Corpus { command } => corpus(&settings(&cli)?, command).map(|_| true),
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info")),
        )
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
