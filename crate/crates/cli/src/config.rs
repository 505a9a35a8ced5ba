//! The JSON configuration file and everything built from it.
//!
//! Precedence, highest first: command-line flags, the config file, built-in
//! defaults. `FOAMPILOT_LLM_API_KEY` is the only source of the API key, and
//! `FOAMPILOT_LLM_ENDPOINT` fills in an endpoint the other two leave unset.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use foampilot::client::{SampleBudget, SessionSettings};
use foampilot::llm::{ChatBackend, Gateway, HttpBackend, HttpSettings, MockBackend, MockSuite, Transcript, DEFAULT_TEMPERATURE};
use foampilot::orchestrator::{RunScript, SimulatedRunner, SolverRunner, SubprocessRunner, WorkflowLimits};
use foampilot::prompts::PromptTemplates;
use foampilot::tools::{PostRunner, Registry, SimulatedPost, SubprocessPost};

pub const DEFAULT_BIND: &str = "127.0.0.1:8765";
const MAX_TEMPERATURE: f64 = 2.0;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    File { path: String, message: String },
    #[error("{0}")]
    Invalid(String),
}

/// Backend settings for one agent role. Set either `mock` or `endpoint`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    pub endpoint: Option<String>,
    pub model: Option<String>,
    pub temperature: Option<f64>,
    /// Scripted replies (a mock script or per-trial suite).
    pub mock: Option<PathBuf>,
    pub timeout_secs: Option<f64>,
}

impl AgentConfig {
    /// Fields set here win over `base`.
    fn over(&self, base: &AgentConfig) -> AgentConfig {
        AgentConfig {
            endpoint: self.endpoint.clone().or_else(|| base.endpoint.clone()),
            model: self.model.clone().or_else(|| base.model.clone()),
            temperature: self.temperature.or(base.temperature),
            mock: self.mock.clone().or_else(|| base.mock.clone()),
            timeout_secs: self.timeout_secs.or(base.timeout_secs),
        }
    }
}

/// `default` applies to every role; a role entry overrides it field by field.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentsConfig {
    pub default: AgentConfig,
    pub generator: Option<AgentConfig>,
    pub corrector: Option<AgentConfig>,
    pub selector: Option<AgentConfig>,
    pub analyst: Option<AgentConfig>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Generator,
    Corrector,
    Selector,
    Analyst,
}

impl Role {
    pub const ALL: [Role; 4] = [Role::Generator, Role::Corrector, Role::Selector, Role::Analyst];

    pub fn name(self) -> &'static str {
        match self {
            Role::Generator => "generator",
            Role::Corrector => "corrector",
            Role::Selector => "selector",
            Role::Analyst => "analyst",
        }
    }
}

impl AgentsConfig {
    pub fn resolve(&self, role: Role) -> AgentConfig {
        let specific = match role {
            Role::Generator => &self.generator,
            Role::Corrector => &self.corrector,
            Role::Selector => &self.selector,
            Role::Analyst => &self.analyst,
        };
        specific.as_ref().map_or_else(|| self.default.clone(), |s| s.over(&self.default))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum RunnerConfig {
    /// Launches the solver named in `controlDict` (or `command`).
    Subprocess {
        #[serde(default)]
        command: Option<Vec<String>>,
    },
    /// Replays a run script instead of solving.
    Simulated { script: PathBuf },
}

impl Default for RunnerConfig {
    fn default() -> Self {
        RunnerConfig::Subprocess { command: None }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PostBackend {
    /// Runs the planned OpenFOAM commands.
    #[default]
    Subprocess,
    /// Writes placeholder outputs without OpenFOAM.
    Simulated,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LimitsConfig {
    pub max_corrections: Option<u32>,
    pub run_timeout_secs: Option<f64>,
    pub trials: Option<usize>,
    pub convergence_threshold: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerConfig {
    pub bind: String,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self { bind: DEFAULT_BIND.into() }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionConfig {
    pub prefilter: Option<usize>,
    pub sample_lines: Option<usize>,
    pub sample_bytes: Option<usize>,
    pub recent_turns: Option<usize>,
    pub script_timeout_secs: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub agents: AgentsConfig,
    pub runner: RunnerConfig,
    pub post_backend: PostBackend,
    pub limits: LimitsConfig,
    pub server: ServerConfig,
    /// Command used to run analysis scripts, e.g. `["python3"]`.
    pub interpreter: Option<Vec<String>>,
    pub session: SessionConfig,
    /// Directory of `<role>.system.txt` / `<role>.user.txt` overrides.
    pub prompts_dir: Option<PathBuf>,
    /// Directory of extra tool descriptor files.
    pub plugins_dir: Option<PathBuf>,
}

fn absolute(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl Config {
    /// Reads `path`, resolving relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let file_err = |message: String| ConfigError::File {
            path: path.display().to_string(),
            message,
        };
        let text = std::fs::read_to_string(path).map_err(|e| file_err(e.to_string()))?;
        let mut cfg: Config = serde_json::from_str(&text).map_err(|e| file_err(e.to_string()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let a = &mut self.agents;
        for agent in [Some(&mut a.default), a.generator.as_mut(), a.corrector.as_mut(), a.selector.as_mut(), a.analyst.as_mut()]
            .into_iter()
            .flatten()
        {
            if let Some(m) = agent.mock.as_mut() {
                absolute(base, m);
            }
        }
        if let RunnerConfig::Simulated { script } = &mut self.runner {
            absolute(base, script);
        }
        for d in [self.prompts_dir.as_mut(), self.plugins_dir.as_mut()].into_iter().flatten() {
            absolute(base, d);
        }
    }

    /// Checks referenced paths and value ranges.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        for role in Role::ALL {
            let a = self.agents.resolve(role);
            if let Some(t) = a.temperature {
                if !(0.0..=MAX_TEMPERATURE).contains(&t) {
                    return invalid(format!("agents.{}: temperature {t} outside 0..={MAX_TEMPERATURE}", role.name()));
                }
            }
            if let Some(m) = &a.mock {
                if !m.is_file() {
                    return invalid(format!("agents.{}: mock script {} does not exist", role.name(), m.display()));
                }
            }
            if a.timeout_secs.is_some_and(|s| !(s > 0.0)) {
                return invalid(format!("agents.{}: timeout_secs must be positive", role.name()));
            }
        }
        if let RunnerConfig::Simulated { script } = &self.runner {
            if !script.is_file() {
                return invalid(format!("runner: script {} does not exist", script.display()));
            }
        }
        if let RunnerConfig::Subprocess { command: Some(c) } = &self.runner {
            if c.is_empty() {
                return invalid("runner: command is empty".into());
            }
        }
        for (key, dir) in [("prompts_dir", &self.prompts_dir), ("plugins_dir", &self.plugins_dir)] {
            if let Some(d) = dir {
                if !d.is_dir() {
                    return invalid(format!("{key}: {} is not a directory", d.display()));
                }
            }
        }
        if self.interpreter.as_ref().is_some_and(Vec::is_empty) {
            return invalid("interpreter: command is empty".into());
        }
        if self.limits.run_timeout_secs.is_some_and(|s| !(s > 0.0)) {
            return invalid("limits.run_timeout_secs must be positive".into());
        }
        self.limits().map(|_| ())
    }

    pub fn limits(&self) -> Result<WorkflowLimits, ConfigError> {
        let d = WorkflowLimits::default();
        let l = &self.limits;
        let limits = WorkflowLimits {
            max_corrections: l.max_corrections.unwrap_or(d.max_corrections),
            run_timeout: l.run_timeout_secs.map(Duration::from_secs_f64),
            trials: l.trials.unwrap_or(d.trials),
            convergence_threshold: l.convergence_threshold.unwrap_or(d.convergence_threshold),
        };
        limits.validate().map_err(|e| ConfigError::Invalid(format!("limits: {e}")))?;
        Ok(limits)
    }

    pub fn templates(&self) -> Result<PromptTemplates, ConfigError> {
        match &self.prompts_dir {
            Some(d) => PromptTemplates::with_overrides(d).map_err(|e| ConfigError::File {
                path: d.display().to_string(),
                message: e.to_string(),
            }),
            None => Ok(PromptTemplates::default()),
        }
    }

    pub fn registry(&self) -> Result<Registry, ConfigError> {
        let mut r = Registry::builtin();
        if let Some(d) = &self.plugins_dir {
            r.load_dir(d).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        }
        Ok(r)
    }

    pub fn post_runner(&self) -> Arc<dyn PostRunner> {
        match self.post_backend {
            PostBackend::Simulated => Arc::new(SimulatedPost::new()),
            PostBackend::Subprocess => Arc::new(SubprocessPost::default()),
        }
    }

    pub fn session_settings(&self, execute_scripts: bool) -> SessionSettings {
        let d = SessionSettings::default();
        let s = &self.session;
        SessionSettings {
            prefilter: s.prefilter.or(d.prefilter),
            samples: SampleBudget {
                lines: s.sample_lines.unwrap_or(d.samples.lines),
                bytes: s.sample_bytes.unwrap_or(d.samples.bytes),
            },
            interpreter: self.interpreter.clone(),
            execute_scripts,
            script_timeout_secs: s.script_timeout_secs.or(d.script_timeout_secs),
            recent_turns: s.recent_turns.unwrap_or(d.recent_turns),
            persist_transcript: true,
        }
    }

    /// The solver runner for trial `trial` (zero-based).
    pub fn solver_runner(&self, trial: usize, timeout: Option<Duration>) -> Result<Arc<dyn SolverRunner>, String> {
        match &self.runner {
            RunnerConfig::Subprocess { command } => Ok(Arc::new(SubprocessRunner {
                timeout,
                command: command.clone(),
            })),
            RunnerConfig::Simulated { script } => {
                let runs = RunScript::load(script)?
                    .for_trial(trial)
                    .ok_or_else(|| format!("{}: no runs for trial {}", script.display(), trial + 1))?;
                Ok(Arc::new(SimulatedRunner::new(runs)))
            }
        }
    }
}

/// Builds gateways for one process or one trial. Roles pointing at the same
/// mock file share one backend, so a single script can serve a session.
pub struct GatewayFactory<'a> {
    agents: &'a AgentsConfig,
    trial: usize,
    transcript: Transcript,
    mocks: HashMap<PathBuf, Arc<MockBackend>>,
}

impl<'a> GatewayFactory<'a> {
    pub fn new(agents: &'a AgentsConfig, trial: usize) -> Self {
        Self {
            agents,
            trial,
            transcript: Transcript::new(),
            mocks: HashMap::new(),
        }
    }

    pub fn gateway(&mut self, role: Role) -> Result<Gateway, ConfigError> {
        let cfg = self.agents.resolve(role);
        let backend: Arc<dyn ChatBackend> = if let Some(path) = &cfg.mock {
            match self.mocks.get(path) {
                Some(b) => b.clone(),
                None => {
                    let bad = |message: String| ConfigError::File {
                        path: path.display().to_string(),
                        message,
                    };
                    let script = MockSuite::load(path)
                        .map_err(|e| ConfigError::Invalid(e))?
                        .for_trial(self.trial)
                        .ok_or_else(|| bad(format!("no script for trial {}", self.trial + 1)))?;
                    let b = Arc::new(MockBackend::new(script).map_err(bad)?);
                    self.mocks.insert(path.clone(), b.clone());
                    b
                }
            }
        } else {
            let mut settings = match &cfg.endpoint {
                Some(e) => HttpSettings::new(e.clone()),
                None => HttpSettings::from_env().ok_or_else(|| {
                    ConfigError::Invalid(format!(
                        "agents.{}: no backend; set `mock` or `endpoint`, or {}",
                        role.name(),
                        foampilot::llm::ENV_ENDPOINT
                    ))
                })?,
            };
            if let Some(s) = cfg.timeout_secs {
                settings.timeout = Duration::from_secs_f64(s);
            }
            Arc::new(HttpBackend::new(settings))
        };
        let mut g = Gateway::new(backend, self.transcript.clone(), role.name())
            .with_temperature(cfg.temperature.unwrap_or(DEFAULT_TEMPERATURE));
        if let Some(m) = &cfg.model {
            g = g.with_model(m.clone());
        }
        Ok(g)
    }
}
