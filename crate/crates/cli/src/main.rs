//! `foampilot`: natural-language OpenFOAM case setup and post-processing.
//!
//! Exit codes: 0 success, 1 the workflow or request failed, 2 bad usage or
//! configuration.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{AgentConfig, Config, ConfigError, RunnerConfig};

#[derive(Debug, Parser)]
#[command(name = "foampilot", version, about = "Natural-language OpenFOAM automation")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct GlobalArgs {
    /// JSON configuration file.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Mock script answering for every agent role.
    #[arg(long, global = true, value_name = "PATH")]
    mock: Option<PathBuf>,
    /// Chat-completions endpoint for every agent role.
    #[arg(long, global = true, value_name = "URL")]
    endpoint: Option<String>,
    /// Model name for every agent role.
    #[arg(long, global = true)]
    model: Option<String>,
    /// Sampling temperature for every agent role.
    #[arg(long, global = true)]
    temperature: Option<f64>,
}

#[derive(Debug, Args)]
struct WorkflowArgs {
    /// Case directory (mesh and boundary conditions).
    case: PathBuf,
    /// Simulation request in plain language.
    #[arg(long, conflicts_with = "prompt_file", required_unless_present = "prompt_file")]
    prompt: Option<String>,
    /// File holding the simulation request.
    #[arg(long, value_name = "PATH")]
    prompt_file: Option<PathBuf>,
    #[arg(long)]
    max_corrections: Option<u32>,
    /// Residual level every monitored field must reach.
    #[arg(long)]
    threshold: Option<f64>,
    /// Seconds before a solver run is killed.
    #[arg(long, value_name = "SECS")]
    run_timeout: Option<f64>,
    /// Replay this run script instead of launching the solver.
    #[arg(long, value_name = "PATH")]
    runner_script: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate, run and correct a case until it converges.
    Run {
        #[command(flatten)]
        workflow: WorkflowArgs,
        /// Report path [default: <case>/.copilot/report.json].
        #[arg(long, value_name = "PATH")]
        report: Option<PathBuf>,
    },
    /// Post-process a case from plain-language requests.
    Post {
        case: PathBuf,
        /// Run one request and exit.
        #[arg(long)]
        query: Option<String>,
        /// Ask before running each chosen tool.
        #[arg(long)]
        confirm: bool,
        /// Run generated analysis scripts with the configured interpreter.
        #[arg(long)]
        exec_scripts: bool,
        /// Interpreter command, split on whitespace.
        #[arg(long)]
        interpreter: Option<String>,
        /// Use a running `foampilot serve --http` instead of in-process tools.
        #[arg(long, value_name = "URL")]
        server: Option<String>,
    },
    /// Serve the tool registry over MCP.
    Serve {
        /// Case the tools operate on.
        #[arg(long, default_value = ".")]
        case: PathBuf,
        /// Serve HTTP (with the event stream and console endpoints) instead
        /// of stdio.
        #[arg(long)]
        http: bool,
        /// Address for `--http`.
        #[arg(long, value_name = "ADDR")]
        bind: Option<String>,
    },
    /// Repeat the workflow over fresh case copies and aggregate the results.
    Eval {
        #[command(flatten)]
        workflow: WorkflowArgs,
        #[arg(long)]
        trials: Option<usize>,
        /// Trial directories [default: a temporary directory].
        #[arg(long, value_name = "DIR")]
        work: Option<PathBuf>,
        /// Where to write the JSON report.
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
        /// Row label [default: case directory name].
        #[arg(long)]
        label: Option<String>,
        /// Reference field, `<name>=<field file>`. Repeatable.
        #[arg(long = "ref-field", value_name = "NAME=PATH")]
        ref_fields: Vec<String>,
        #[arg(long)]
        ref_cl: Option<f64>,
        #[arg(long)]
        ref_cd: Option<f64>,
    },
}

/// A failure and the exit code it maps to.
#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Failed(_) => 1,
            _ => 2,
        }
    }
}

fn load_config(g: &GlobalArgs, workflow: Option<&WorkflowArgs>) -> Result<Config, CliError> {
    let mut cfg = match &g.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    let flags = AgentConfig {
        endpoint: g.endpoint.clone(),
        model: g.model.clone(),
        temperature: g.temperature,
        mock: g.mock.clone(),
        timeout_secs: None,
    };
    // Global flags outrank both the default and role entries.
    let a = &mut cfg.agents;
    for slot in [&mut a.generator, &mut a.corrector, &mut a.selector, &mut a.analyst] {
        if let Some(role) = slot.as_mut() {
            *role = merge(&flags, role);
        }
    }
    a.default = merge(&flags, &a.default);
    if let Some(w) = workflow {
        let l = &mut cfg.limits;
        l.max_corrections = w.max_corrections.or(l.max_corrections);
        l.convergence_threshold = w.threshold.or(l.convergence_threshold);
        l.run_timeout_secs = w.run_timeout.or(l.run_timeout_secs);
        if let Some(s) = &w.runner_script {
            cfg.runner = RunnerConfig::Simulated { script: s.clone() };
        }
    }
    Ok(cfg)
}

fn merge(flags: &AgentConfig, base: &AgentConfig) -> AgentConfig {
    let mut out = base.clone();
    if flags.mock.is_some() {
        out.mock = flags.mock.clone();
        out.endpoint = None;
    }
    if flags.endpoint.is_some() {
        out.endpoint = flags.endpoint.clone();
        out.mock = None;
    }
    out.model = flags.model.clone().or(out.model);
    out.temperature = flags.temperature.or(out.temperature);
    out
}

fn prompt_text(w: &WorkflowArgs) -> Result<String, CliError> {
    match (&w.prompt, &w.prompt_file) {
        (Some(p), _) => Ok(p.clone()),
        (None, Some(f)) => std::fs::read_to_string(f)
            .map(|t| t.trim().to_string())
            .map_err(|e| CliError::Usage(format!("{}: {e}", f.display()))),
        (None, None) => Err(CliError::Usage("a prompt is required".into())),
    }
}

fn require_dir(path: &PathBuf) -> Result<(), CliError> {
    if path.is_dir() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("case directory {} does not exist", path.display())))
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run { workflow, report } => {
            require_dir(&workflow.case)?;
            let cfg = load_config(&cli.global, Some(&workflow))?;
            cfg.validate()?;
            let prompt = prompt_text(&workflow)?;
            commands::run(&cfg, &workflow.case, &prompt, report)
        }
        Command::Post {
            case,
            query,
            confirm,
            exec_scripts,
            interpreter,
            server,
        } => {
            require_dir(&case)?;
            let mut cfg = load_config(&cli.global, None)?;
            if let Some(i) = interpreter {
                cfg.interpreter = Some(i.split_whitespace().map(String::from).collect());
            }
            cfg.validate()?;
            if exec_scripts && cfg.interpreter.is_none() {
                return Err(CliError::Usage("--exec-scripts needs an interpreter (config `interpreter` or --interpreter)".into()));
            }
            commands::post(&cfg, &case, query.as_deref(), confirm, exec_scripts, server.as_deref())
        }
        Command::Serve { case, http, bind } => {
            require_dir(&case)?;
            let mut cfg = load_config(&cli.global, None)?;
            if let Some(b) = bind {
                cfg.server.bind = b;
            }
            cfg.validate()?;
            if http {
                commands::serve_http(&cfg, &case)
            } else {
                commands::serve_stdio(&cfg, &case)
            }
        }
        Command::Eval {
            workflow,
            trials,
            work,
            out,
            label,
            ref_fields,
            ref_cl,
            ref_cd,
        } => {
            require_dir(&workflow.case)?;
            let mut cfg = load_config(&cli.global, Some(&workflow))?;
            cfg.limits.trials = trials.or(cfg.limits.trials);
            cfg.validate()?;
            let prompt = prompt_text(&workflow)?;
            let opts = commands::EvalOptions {
                work,
                out,
                label,
                ref_fields,
                ref_cl,
                ref_cd,
            };
            commands::eval(&cfg, &workflow.case, &prompt, opts)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
