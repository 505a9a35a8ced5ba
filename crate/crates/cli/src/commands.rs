use std::io::{BufRead, IsTerminal, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde_json::Value;

use foampilot::client::{run_repl, wants_script, HistoryEntry, PostAgents, PostSession};
use foampilot::events::EventBus;
use foampilot::http_api::{ApiState, HttpServer, SessionPrompts};
use foampilot::llm::ENV_ENDPOINT;
use foampilot::mcp::{serve_stream, HttpTransport, InProcess, McpClient, McpSession, ToolHost};
use foampilot::metrics::{render_report, EvalReport};
use foampilot::orchestrator::eval::{run_trials, EvalPlan, Reference, TrialSetup};
use foampilot::orchestrator::{Agents, Workflow};

use crate::config::{Config, ConfigError, GatewayFactory, Role};
use crate::CliError;

const POLL: Duration = Duration::from_millis(50);

fn invalid(message: String) -> CliError {
    CliError::Config(ConfigError::Invalid(message))
}

fn workflow_setup(cfg: &Config, trial: usize) -> Result<TrialSetup, CliError> {
    let limits = cfg.limits()?;
    let mut f = GatewayFactory::new(&cfg.agents, trial);
    let agents = Agents {
        generator: f.gateway(Role::Generator)?,
        corrector: f.gateway(Role::Corrector)?,
    };
    let runner = cfg.solver_runner(trial, limits.run_timeout).map_err(invalid)?;
    Ok(TrialSetup { agents, runner })
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Failed(format!("{}: {e}", dir.display())))?;
    }
    std::fs::write(path, text).map_err(|e| CliError::Failed(format!("{}: {e}", path.display())))
}

pub fn run(cfg: &Config, case: &Path, prompt: &str, report_path: Option<PathBuf>) -> Result<(), CliError> {
    let setup = workflow_setup(cfg, 0)?;
    let workflow = Workflow {
        agents: setup.agents,
        runner: setup.runner,
        limits: cfg.limits()?,
        templates: Arc::new(cfg.templates()?),
        events: None,
    };
    let report = workflow.run(prompt, case);
    let path = report_path.unwrap_or_else(|| case.join(".copilot/report.json"));
    write_file(&path, &report.to_json())?;
    println!("stage: {:?}", report.stage);
    println!("corrections: {}", report.iterations);
    println!("llm calls: {}", report.llm_calls);
    println!("tokens: {} prompt, {} completion", report.tokens.prompt, report.tokens.completion);
    for w in &report.warnings {
        println!("warning: {w}");
    }
    println!("report: {}", path.display());
    if report.converged() {
        Ok(())
    } else {
        Err(CliError::Failed(report.error.unwrap_or_else(|| "workflow failed".into())))
    }
}

fn tool_host(cfg: &Config, case: &Path) -> Result<ToolHost, CliError> {
    Ok(ToolHost::new(cfg.registry()?, case, cfg.post_runner()))
}

fn post_agents(cfg: &Config) -> Result<PostAgents, CliError> {
    let mut f = GatewayFactory::new(&cfg.agents, 0);
    Ok(PostAgents {
        selector: f.gateway(Role::Selector)?,
        analyst: f.gateway(Role::Analyst)?,
    })
}

fn print_entry(e: &HistoryEntry) {
    if let Some(t) = &e.tool {
        println!("tool: {t}");
        if let Some(a) = &e.arguments {
            println!("arguments: {}", Value::Object(a.clone()));
        }
    }
    println!("{}", e.summary);
    for p in &e.paths {
        println!("  {p}");
    }
    for w in &e.warnings {
        println!("warning: {w}");
    }
}

fn one_shot(session: &mut PostSession, query: &str, confirm: bool) -> Result<(), CliError> {
    let failed = |e: foampilot::client::ClientError| CliError::Failed(e.to_string());
    let entry = if confirm && !wants_script(query) {
        let choice = session.select(query).map_err(failed)?;
        println!("tool: {}", choice.tool);
        println!("arguments: {}", Value::Object(choice.arguments.clone()));
        print!("run it? [y/N] ");
        let _ = std::io::stdout().flush();
        let mut answer = String::new();
        let _ = std::io::stdin().lock().read_line(&mut answer);
        if !matches!(answer.trim(), "y" | "Y" | "yes") {
            println!("skipped");
            return Ok(());
        }
        session.invoke(query, &choice).map_err(failed)?
    } else {
        session.turn(query).map_err(failed)?
    };
    print_entry(&entry);
    Ok(())
}

pub fn post(
    cfg: &Config,
    case: &Path,
    query: Option<&str>,
    confirm: bool,
    exec_scripts: bool,
    server: Option<&str>,
) -> Result<(), CliError> {
    let agents = post_agents(cfg)?;
    let client = match server {
        Some(url) => McpClient::new(HttpTransport::new(url)),
        None => McpClient::new(InProcess::new(McpSession::new(Arc::new(tool_host(cfg, case)?)))),
    };
    let mut session = PostSession::connect(
        client,
        agents,
        case,
        Arc::new(cfg.templates()?),
        cfg.session_settings(exec_scripts),
    )
    .map_err(|e| CliError::Failed(e.to_string()))?;
    let result = match query {
        Some(q) => one_shot(&mut session, q, confirm),
        None => {
            let stdin = std::io::stdin();
            let interactive = stdin.is_terminal();
            let stats = run_repl(
                &mut session,
                &mut stdin.lock(),
                &mut std::io::stdout().lock(),
                confirm,
                interactive,
            )
            .map_err(|e| CliError::Failed(e.to_string()))?;
            if stats.failures > 0 {
                Err(CliError::Failed(format!("{} of {} requests failed", stats.failures, stats.turns)))
            } else {
                Ok(())
            }
        }
    };
    session.close();
    result
}

fn termination_flag() -> Result<Arc<AtomicBool>, CliError> {
    let flag = Arc::new(AtomicBool::new(false));
    for sig in [signal_hook::consts::SIGTERM, signal_hook::consts::SIGINT] {
        signal_hook::flag::register(sig, flag.clone()).map_err(|e| CliError::Failed(format!("signal handler: {e}")))?;
    }
    Ok(flag)
}

pub fn serve_stdio(cfg: &Config, case: &Path) -> Result<(), CliError> {
    let mut session = McpSession::new(Arc::new(tool_host(cfg, case)?));
    let stop = termination_flag()?;
    let worker = std::thread::spawn(move || serve_stream(&mut session, std::io::stdin().lock(), std::io::stdout()));
    while !worker.is_finished() {
        if stop.load(Ordering::SeqCst) {
            // The reader thread stays blocked on stdin; exiting ends it.
            return Ok(());
        }
        std::thread::sleep(POLL);
    }
    match worker.join() {
        Ok(Ok(())) => Ok(()),
        Ok(Err(e)) => Err(CliError::Failed(format!("stdio: {e}"))),
        Err(_) => Err(CliError::Failed("server thread panicked".into())),
    }
}

fn prompts_configured(cfg: &Config) -> bool {
    let a = cfg.agents.resolve(Role::Selector);
    a.mock.is_some() || a.endpoint.is_some() || std::env::var(ENV_ENDPOINT).is_ok_and(|e| !e.is_empty())
}

pub fn serve_http(cfg: &Config, case: &Path) -> Result<(), CliError> {
    let events = EventBus::new();
    let host = Arc::new(tool_host(cfg, case)?.with_events(events.clone()));
    let mut state = ApiState::new(McpSession::new(host.clone()), events.clone(), case);
    if prompts_configured(cfg) {
        let session = PostSession::connect(
            McpClient::new(InProcess::new(McpSession::new(host))),
            post_agents(cfg)?,
            case,
            Arc::new(cfg.templates()?),
            cfg.session_settings(false),
        )
        .map_err(|e| CliError::Failed(e.to_string()))?
        .with_events(events);
        state = state.with_prompts(Arc::new(SessionPrompts(Mutex::new(session))));
    } else {
        log::info!("no selector agent configured; /prompt is disabled");
    }
    let stop = termination_flag()?;
    let server = HttpServer::start(&cfg.server.bind, Arc::new(state))
        .map_err(|e| CliError::Usage(format!("cannot listen on {}: {e}", cfg.server.bind)))?;
    println!("listening on {}", server.url());
    let _ = std::io::stdout().flush();
    while !stop.load(Ordering::SeqCst) {
        std::thread::sleep(POLL);
    }
    server.shutdown();
    Ok(())
}

pub struct EvalOptions {
    pub work: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub label: Option<String>,
    pub ref_fields: Vec<String>,
    pub ref_cl: Option<f64>,
    pub ref_cd: Option<f64>,
}

pub fn eval(cfg: &Config, case: &Path, prompt: &str, opts: EvalOptions) -> Result<(), CliError> {
    let mut reference = Reference {
        lift: opts.ref_cl,
        drag: opts.ref_cd,
        ..Default::default()
    };
    for spec in &opts.ref_fields {
        let (name, path) = spec
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--ref-field expects NAME=PATH, got `{spec}`")))?;
        reference
            .load_field(name, Path::new(path))
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    // Surfaces backend problems as configuration errors before any trial runs.
    workflow_setup(cfg, 0)?;
    let scratch;
    let work = match opts.work {
        Some(w) => w,
        None => {
            scratch = tempfile::tempdir().map_err(|e| CliError::Failed(e.to_string()))?;
            scratch.path().to_path_buf()
        }
    };
    let label = opts.label.unwrap_or_else(|| {
        std::fs::canonicalize(case)
            .ok()
            .and_then(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
            .unwrap_or_else(|| "case".into())
    });
    let plan = EvalPlan {
        label,
        prompt: prompt.to_string(),
        case: case.to_path_buf(),
        work: work.clone(),
        limits: cfg.limits()?,
        templates: Arc::new(cfg.templates()?),
        reference: &reference,
        events: None,
    };
    let evaluation = run_trials(&plan, |i| workflow_setup(cfg, i).map_err(|e| e.to_string()))
        .map_err(|e| CliError::Failed(e.to_string()))?;
    for (i, r) in evaluation.reports.iter().enumerate() {
        write_file(&work.join(format!("trial-{i}/.copilot/report.json")), &r.to_json())?;
    }
    let report = EvalReport::new(vec![evaluation.row]);
    let (table, json) = render_report(&report);
    print!("{table}");
    for w in &evaluation.warnings {
        eprintln!("warning: {w}");
    }
    if let Some(out) = &opts.out {
        write_file(out, &json)?;
        println!("report: {}", out.display());
    }
    Ok(())
}
