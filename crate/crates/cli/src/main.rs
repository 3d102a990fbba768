//! `agentmesh`: run, validate and compile workflows; host agent servers and
//! the studio.
//!
//! Exit codes: 0 success, 1 invalid input, 2 runtime failure, 3 budget
//! exceeded or timeout.

use std::io::{IsTerminal, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use agentmesh::agents::{InputSource, ScriptedInput, StdinInput};
use agentmesh::error::{Error, Result};
use agentmesh::monitor::{HumanSink, JsonlSink, LogLevel, StreamTarget};
use agentmesh::rpc::{AgentServer, ServerConfig, StudioEmitter};
use agentmesh::runtime::Runtime;
use agentmesh::studio::{StudioConfig, StudioInput, StudioServer};
use agentmesh::workflow::{self, compile_workflow, exit_code, load_workflow_with, run_workflow, write_transcript};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "agentmesh", version, about = "Multi-agent workflows, agent servers and the studio")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute a workflow graph and print its conversation.
    Run {
        workflow: PathBuf,
        /// Model configs (JSON array).
        #[arg(long)]
        models: Option<PathBuf>,
        /// Agent configs (JSON array); agent nodes can refer to them by name.
        #[arg(long)]
        agents: Option<PathBuf>,
        /// Studio URL to mirror messages to.
        #[arg(long)]
        studio: Option<String>,
        /// Seeds message ids and timestamps for reproducible runs.
        #[arg(long)]
        seed: Option<u64>,
        /// Where user turns come from: `stdin`, `studio`, or a file with one
        /// turn per line.
        #[arg(long, default_value = "stdin")]
        input: String,
        #[arg(long, default_value = "CHAT")]
        log_level: String,
    },
    /// Check a workflow graph and report every problem.
    Validate {
        workflow: PathBuf,
        #[arg(long)]
        models: Option<PathBuf>,
    },
    /// Translate a workflow graph into a Rust program.
    Compile {
        workflow: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Host agents for remote callers until interrupted.
    Server {
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value_t = 0)]
        port: u16,
        #[arg(long)]
        studio: Option<String>,
        #[arg(long)]
        models: Option<PathBuf>,
        /// Restrict which agent classes callers may create (comma separated).
        #[arg(long, value_delimiter = ',')]
        allow: Option<Vec<String>>,
        /// How long shutdown waits for running tasks.
        #[arg(long, default_value_t = 5000)]
        grace_ms: u64,
    },
    /// Serve the studio backend and its web console.
    Studio {
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value_t = 5000)]
        port: u16,
        #[arg(long)]
        static_dir: Option<PathBuf>,
    },
}

fn fail(e: &Error) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(exit_code(e) as u8)
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::validation(format!("cannot read {}: {e}", path.display())))
}

fn input_source(spec: &str, studio: Option<&str>) -> Result<Arc<dyn InputSource>> {
    Ok(match spec {
        "stdin" => Arc::new(StdinInput),
        "studio" => {
            let url = studio.ok_or_else(|| Error::validation("--input studio needs --studio URL"))?;
            Arc::new(StudioInput::new(url))
        }
        path => {
            let text = read(Path::new(path))?;
            Arc::new(ScriptedInput::new(text.lines()))
        }
    })
}

#[allow(clippy::too_many_arguments)]
fn cmd_run(
    workflow_path: &Path,
    models: Option<&Path>,
    agents: Option<&Path>,
    studio: Option<&str>,
    seed: Option<u64>,
    input: &str,
    log_level: &str,
) -> ExitCode {
    if let Some(seed) = seed {
        agentmesh::msg::seed_ids(seed);
    }
    let Some(level) = LogLevel::parse(log_level) else {
        eprintln!("error: unknown log level: {log_level}");
        return ExitCode::from(1);
    };
    let input = match input_source(input, studio) {
        Ok(i) => i,
        Err(e) => return fail(&e),
    };
    let rt = Runtime::builder().input(input).log_level(level).build();
    let color = std::io::stdout().is_terminal();
    rt.logger().add_sink(Arc::new(HumanSink::new(StreamTarget::Stdout, color)));
    match JsonlSink::create(rt.run_dir().join("log.jsonl")) {
        Ok(s) => rt.logger().add_sink(Arc::new(s)),
        Err(e) => eprintln!("warning: cannot open run log: {e}"),
    }
    let emitter = studio.map(|url| {
        let e = StudioEmitter::new(url, "cli");
        rt.logger().add_sink(e.clone());
        e
    });

    let result = (|| {
        if let Some(p) = models {
            rt.register_model_file(p)?;
        }
        if let Some(p) = agents {
            rt.load_agent_configs(&read(p)?)?;
        }
        let graph = load_workflow_with(&read(workflow_path)?, &rt.models().names())?;
        let transcript = run_workflow(&graph, &rt)?;
        write_transcript(rt.run_dir(), &transcript)
    })();
    let _ = std::io::stdout().flush();
    if let Some(e) = emitter {
        e.flush();
    }
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(&e),
    }
}

fn cmd_validate(workflow_path: &Path, models: Option<&Path>) -> ExitCode {
    let result = (|| {
        let known = match models {
            Some(p) => {
                let rt = Runtime::builder().build();
                rt.register_model_file(p)?;
                rt.models().names()
            }
            None => Vec::new(),
        };
        load_workflow_with(&read(workflow_path)?, &known)
    })();
    match result {
        Ok(_) => {
            println!("OK");
            ExitCode::SUCCESS
        }
        Err(Error::WorkflowInvalid(report)) => {
            eprintln!("{report}");
            ExitCode::from(1)
        }
        Err(e) => fail(&e),
    }
}

fn cmd_compile(workflow_path: &Path, output: &Path) -> ExitCode {
    let result = (|| {
        // Model references may point at configs passed at run time.
        let json = read(workflow_path)?;
        let graph = match workflow::load_workflow(&json) {
            Err(Error::WorkflowInvalid(r))
                if r.issues.iter().all(|i| i.kind == workflow::IssueKind::MissingModel) =>
            {
                let names: Vec<String> = r
                    .issues
                    .iter()
                    .filter_map(|i| i.message.split('\'').nth(3).map(str::to_string))
                    .collect();
                load_workflow_with(&json, &names)?
            }
            other => other?,
        };
        let src = compile_workflow(&graph)?;
        std::fs::write(output, src)?;
        Ok::<_, Error>(())
    })();
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Error::WorkflowInvalid(report)) => {
            eprintln!("{report}");
            ExitCode::from(1)
        }
        Err(e) => fail(&e),
    }
}

fn cmd_server(
    host: String,
    port: u16,
    studio: Option<String>,
    models: Option<&Path>,
    allow: Option<Vec<String>>,
    grace_ms: u64,
) -> ExitCode {
    let mut builder = Runtime::builder();
    if let Some(classes) = allow {
        builder = builder.allowed_classes(classes);
    }
    let rt = builder.build();
    rt.logger().add_sink(Arc::new(HumanSink::new(StreamTarget::Stderr, false)));
    if let Some(p) = models {
        if let Err(e) = rt.register_model_file(p) {
            return fail(&e);
        }
    }
    let config = ServerConfig {
        host,
        port,
        studio_url: studio,
        shutdown_grace: Duration::from_millis(grace_ms),
        handle_signals: true,
    };
    let server = match AgentServer::launch(config, rt) {
        Ok(s) => s,
        Err(e) => return fail(&e),
    };
    println!("listening on {}", server.addr());
    let _ = std::io::stdout().flush();
    let report = server.wait();
    eprintln!(
        "server stopped: {} task(s) completed, {} aborted",
        report.completed,
        report.aborted.len()
    );
    ExitCode::SUCCESS
}

fn cmd_studio(host: String, port: u16, static_dir: Option<PathBuf>) -> ExitCode {
    let config = StudioConfig {
        host,
        port,
        static_dir,
        ..StudioConfig::default()
    };
    let studio = match StudioServer::launch(config) {
        Ok(s) => s,
        Err(e) => return fail(&e),
    };
    println!("listening on {}:{}", studio.host(), studio.port());
    let _ = std::io::stdout().flush();
    studio.wait();
    ExitCode::SUCCESS
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            workflow,
            models,
            agents,
            studio,
            seed,
            input,
            log_level,
        } => cmd_run(
            &workflow,
            models.as_deref(),
            agents.as_deref(),
            studio.as_deref(),
            seed,
            &input,
            &log_level,
        ),
        Command::Validate { workflow, models } => cmd_validate(&workflow, models.as_deref()),
        Command::Compile { workflow, output } => cmd_compile(&workflow, &output),
        Command::Server {
            host,
            port,
            studio,
            models,
            allow,
            grace_ms,
        } => cmd_server(host, port, studio, models.as_deref(), allow, grace_ms),
        Command::Studio { host, port, static_dir } => cmd_studio(host, port, static_dir),
    }
}
