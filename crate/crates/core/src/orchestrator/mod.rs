//! The generate / run / correct loop.
//!
//! A workflow prechecks the case, asks the generator agent for a full
//! configuration, runs the solver, and on failure hands a digest of the log
//! to the corrector agent, up to a fixed number of corrections.
//!
//! Bundle numbering: the generator's bundle is iteration 1 and correction
//! `k` writes bundle `k + 1`, so `.copilot/iter-k/` holds the files as they
//! were before correction `k` (and `iter-0/` the original case files).

mod digest;
pub mod eval;
mod response;
mod runner;

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

pub use digest::{
    classify, digest, ErrorDigest, ErrorKind, RawRun, Residuals, RunClass, RunOutcome,
    DEFAULT_CONVERGENCE_THRESHOLD, DIVERGENCE_RUN,
};
pub use response::{parse_bundle, split_blocks, MalformedResponse};
pub use runner::{
    FieldValues, RunScript, RunnerError, ScriptedRun, SimulatedRunner, SolverRunner, SubprocessRunner, TrialRuns,
};

use crate::case::{apply_bundle, list_patches, precheck, CaseBundle, CaseLayout, PrecheckReport, STATE_DIR};
use crate::events::{self, EventBus};
use crate::llm::{ChatResponse, Gateway, LlmError, Message, TokenUsage};
use crate::metrics::{TrialOutcome, TrialSummary};
use crate::prompts::{render, PromptTemplates};

pub const DEFAULT_MAX_CORRECTIONS: u32 = 10;
pub const DEFAULT_TRIALS: usize = 10;
pub const REPORT_FORMAT: &str = "foampilot-workflow-report/1";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorkflowLimits {
    pub max_corrections: u32,
    #[serde(default, with = "opt_secs")]
    pub run_timeout: Option<Duration>,
    pub trials: usize,
    pub convergence_threshold: f64,
}

mod opt_secs {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Option<Duration>, s: S) -> Result<S::Ok, S::Error> {
        match d {
            Some(d) => s.serialize_some(&d.as_secs_f64()),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Duration>, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.map(Duration::from_secs_f64))
    }
}

impl Default for WorkflowLimits {
    fn default() -> Self {
        Self {
            max_corrections: DEFAULT_MAX_CORRECTIONS,
            run_timeout: None,
            trials: DEFAULT_TRIALS,
            convergence_threshold: DEFAULT_CONVERGENCE_THRESHOLD,
        }
    }
}

impl WorkflowLimits {
    pub fn validate(&self) -> Result<(), String> {
        if self.max_corrections < 1 {
            return Err("max_corrections must be at least 1".into());
        }
        if self.trials < 1 {
            return Err("trials must be at least 1".into());
        }
        if !(self.convergence_threshold > 0.0) {
            return Err("convergence_threshold must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    Prechecking,
    Generating,
    Running,
    Correcting,
    Converged,
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Step {
    Generate,
    Run,
    Correct,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimelineEntry {
    pub step: Step,
    /// Corrections made before this step.
    pub iteration: u32,
    pub ok: bool,
    pub detail: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class: Option<RunClass>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub digest: Option<ErrorDigest>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub files: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tokens: Option<TokenUsage>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkflowReport {
    pub format: String,
    pub prompt: String,
    pub case: String,
    pub stage: Stage,
    pub outcome: TrialOutcome,
    /// Corrections performed.
    pub iterations: u32,
    pub llm_calls: u32,
    pub tokens: TokenUsage,
    pub stages: Vec<Stage>,
    pub timeline: Vec<TimelineEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub precheck: Option<PrecheckReport>,
    #[serde(default)]
    pub final_residuals: BTreeMap<String, f64>,
    #[serde(default)]
    pub warnings: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl WorkflowReport {
    pub fn summary(&self) -> TrialSummary {
        TrialSummary {
            outcome: self.outcome,
            iterations: self.iterations,
            tokens: self.tokens,
        }
    }

    pub fn steps(&self) -> Vec<Step> {
        self.timeline.iter().map(|e| e.step).collect()
    }

    pub fn converged(&self) -> bool {
        self.stage == Stage::Converged
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Why a generator or corrector call produced no usable bundle.
#[derive(Debug, thiserror::Error)]
pub enum AgentError {
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error("malformed reply: {0}")]
    Malformed(MalformedResponse),
}

/// The two agents of the loop.
#[derive(Debug, Clone)]
pub struct Agents {
    pub generator: Gateway,
    pub corrector: Gateway,
}

pub struct Workflow {
    pub agents: Agents,
    pub runner: Arc<dyn SolverRunner>,
    pub limits: WorkflowLimits,
    pub templates: Arc<PromptTemplates>,
    pub events: Option<EventBus>,
}

impl std::fmt::Debug for Workflow {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Workflow")
            .field("agents", &self.agents)
            .field("limits", &self.limits)
            .finish()
    }
}

fn inventory(case: &CaseLayout) -> String {
    let mut s = String::new();
    match case.solver() {
        Ok(solver) => s.push_str(&format!("solver: {solver}\n")),
        Err(_) => s.push_str("solver: not set\n"),
    }
    match list_patches(case) {
        Ok(p) => s.push_str(&format!("patches: {}\n", p.join(", "))),
        Err(e) => s.push_str(&format!("patches: unavailable ({e})\n")),
    }
    s.push_str("files:\n");
    for f in case.all_files() {
        s.push_str(&format!("  {f}\n"));
    }
    s
}

/// The version of `rel` before its latest change, searching archives
/// from `iter-<newest>` down to `iter-0`.
fn previous_version(case: &CaseLayout, rel: &str, newest: u32) -> Option<String> {
    (0..=newest).rev().find_map(|i| {
        let p = case.root().join(STATE_DIR).join(format!("iter-{i}")).join(rel);
        std::fs::read_to_string(p).ok()
    })
}

struct Run<'a> {
    wf: &'a Workflow,
    report: WorkflowReport,
}

impl Run<'_> {
    fn enter(&mut self, stage: Stage) {
        self.report.stage = stage;
        self.report.stages.push(stage);
        if let Some(bus) = &self.wf.events {
            bus.publish(
                events::WORKFLOW_STATE,
                json!({"stage": stage, "iteration": self.report.iterations, "case": self.report.case}),
            );
        }
    }

    fn record_call(&mut self, agent: &str, resp: &ChatResponse) -> TokenUsage {
        let usage = TokenUsage {
            prompt: resp.prompt_tokens,
            completion: resp.completion_tokens,
        };
        self.report.llm_calls += 1;
        self.report.tokens.add(usage);
        if let Some(bus) = &self.wf.events {
            bus.publish(
                events::LLM_EXCHANGE,
                json!({"agent": agent, "iteration": self.report.iterations,
                       "prompt_tokens": usage.prompt, "completion_tokens": usage.completion}),
            );
        }
        usage
    }

    fn fail(&mut self, message: String) {
        if let Some(bus) = &self.wf.events {
            bus.publish(events::ERROR, json!({"message": message, "case": self.report.case}));
        }
        self.report.error = Some(message);
        self.enter(Stage::Failed);
    }
}

impl Workflow {
    /// Builds the generator request and parses its reply.
    pub fn generate_config(
        &self,
        prompt: &str,
        case: &CaseLayout,
        history: &[ErrorDigest],
    ) -> Result<(CaseBundle, ChatResponse), (AgentError, Option<ChatResponse>)> {
        let history_text = if history.is_empty() {
            "none".to_string()
        } else {
            history.iter().map(ErrorDigest::render).collect::<Vec<_>>().join("\n")
        };
        let t = &self.templates.generator;
        let user = render(
            &t.user,
            &[("prompt", prompt), ("inventory", &inventory(case)), ("history", &history_text)],
        );
        let resp = self
            .agents
            .generator
            .chat(vec![Message::system(t.system.clone()), Message::user(user)])
            .map_err(|e| (AgentError::Llm(e), None))?;
        let bundle = parse_bundle(&resp.content, 1).map_err(|e| (AgentError::Malformed(e), Some(resp.clone())))?;
        let missing: Vec<String> = bundle
            .missing_required(case)
            .into_iter()
            .filter(|p| !case.exists(p))
            .collect();
        if !missing.is_empty() {
            return Err((AgentError::Malformed(MalformedResponse::MissingFiles(missing)), Some(resp)));
        }
        Ok((bundle, resp))
    }

    /// Builds the corrector request for correction `k` and parses its reply.
    pub fn correct(
        &self,
        prompt: &str,
        case: &CaseLayout,
        digest: &ErrorDigest,
        k: u32,
    ) -> Result<(CaseBundle, ChatResponse), (AgentError, Option<ChatResponse>)> {
        let (file, current, previous) = match &digest.file {
            Some(f) => (
                f.clone(),
                case.read_text(f).unwrap_or_else(|_| "(file absent)".into()),
                previous_version(case, f, k.saturating_sub(1)).unwrap_or_else(|| "(no earlier version)".into()),
            ),
            None => ("(none)".to_string(), "(no file implicated)".into(), "(no file implicated)".into()),
        };
        let t = &self.templates.corrector;
        let user = render(
            &t.user,
            &[
                ("iteration", &k.to_string()),
                ("max_iterations", &self.limits.max_corrections.to_string()),
                ("digest", &digest.render()),
                ("file", &file),
                ("current", &current),
                ("previous", &previous),
                ("prompt", prompt),
            ],
        );
        let resp = self
            .agents
            .corrector
            .chat(vec![Message::system(t.system.clone()), Message::user(user)])
            .map_err(|e| (AgentError::Llm(e), None))?;
        match parse_bundle(&resp.content, k + 1) {
            Ok(b) => Ok((b, resp)),
            Err(e) => Err((AgentError::Malformed(e), Some(resp))),
        }
    }

    /// Runs the whole loop on the case at `case_root`. Errors end the
    /// workflow in `Failed` rather than propagating.
    pub fn run(&self, prompt: &str, case_root: &Path) -> WorkflowReport {
        let mut run = Run {
            wf: self,
            report: WorkflowReport {
                format: REPORT_FORMAT.into(),
                prompt: prompt.to_string(),
                case: case_root.display().to_string(),
                stage: Stage::Prechecking,
                outcome: TrialOutcome::Crashed,
                iterations: 0,
                llm_calls: 0,
                tokens: TokenUsage::default(),
                stages: Vec::new(),
                timeline: Vec::new(),
                precheck: None,
                final_residuals: BTreeMap::new(),
                warnings: Vec::new(),
                error: None,
            },
        };
        self.drive(&mut run, prompt, case_root);
        run.report
    }

    fn drive(&self, run: &mut Run, prompt: &str, case_root: &Path) {
        run.enter(Stage::Prechecking);
        let mut case = match CaseLayout::open(case_root) {
            Ok(c) => c,
            Err(e) => return run.fail(format!("cannot open case: {e}")),
        };
        match precheck(&case, prompt) {
            Ok(p) if p.passed() => run.report.precheck = Some(p),
            Ok(p) => {
                let text = p.findings.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ");
                run.report.precheck = Some(p);
                return run.fail(format!("precheck failed: {text}"));
            }
            Err(e) => return run.fail(format!("precheck failed: {e}")),
        }

        run.enter(Stage::Generating);
        // The digest the next correction works from; `None` after a clean run.
        let mut pending: Option<ErrorDigest> = match self.generate_config(prompt, &case, &[]) {
            Ok((bundle, resp)) => {
                let tokens = run.record_call(self.agents.generator.agent(), &resp);
                match apply_bundle(&case, &bundle) {
                    Ok(c) => {
                        case = c;
                        run.report.timeline.push(TimelineEntry {
                            step: Step::Generate,
                            iteration: 0,
                            ok: true,
                            detail: format!("{} files written", bundle.len()),
                            class: None,
                            digest: None,
                            files: bundle.paths().map(String::from).collect(),
                            tokens: Some(tokens),
                        });
                        None
                    }
                    Err(e) => {
                        let d = ErrorDigest::malformed(&e.to_string(), None);
                        run.report.timeline.push(failed_step(Step::Generate, 0, &d, Some(tokens)));
                        Some(d)
                    }
                }
            }
            Err((AgentError::Llm(e), _)) => {
                run.report.timeline.push(TimelineEntry {
                    step: Step::Generate,
                    iteration: 0,
                    ok: false,
                    detail: e.to_string(),
                    class: None,
                    digest: None,
                    files: vec![],
                    tokens: None,
                });
                return run.fail(format!("generator call failed: {e}"));
            }
            Err((AgentError::Malformed(m), resp)) => {
                let tokens = resp.map(|r| run.record_call(self.agents.generator.agent(), &r));
                let d = ErrorDigest::malformed(&m.to_string(), malformed_file(&m));
                run.report.timeline.push(failed_step(Step::Generate, 0, &d, tokens));
                Some(d)
            }
        };

        loop {
            if pending.is_none() {
                run.enter(Stage::Running);
                let raw = match self.runner.run(&case) {
                    Ok(r) => r,
                    Err(e) => {
                        run.report.timeline.push(TimelineEntry {
                            step: Step::Run,
                            iteration: run.report.iterations,
                            ok: false,
                            detail: e.to_string(),
                            class: None,
                            digest: None,
                            files: vec![],
                            tokens: None,
                        });
                        return run.fail(e.to_string());
                    }
                };
                save_log(&case, run.report.timeline.len(), &raw.log);
                let outcome = classify(raw, self.limits.convergence_threshold);
                run.report.final_residuals = outcome.final_residuals.clone();
                run.report.outcome = match outcome.class {
                    RunClass::Converged => TrialOutcome::Converged,
                    RunClass::CompletedNotConverged => TrialOutcome::CompletedNotConverged,
                    RunClass::CrashedEarly => TrialOutcome::Crashed,
                };
                if outcome.class == RunClass::Converged {
                    run.report.timeline.push(TimelineEntry {
                        step: Step::Run,
                        iteration: run.report.iterations,
                        ok: true,
                        detail: "converged".into(),
                        class: Some(outcome.class),
                        digest: None,
                        files: vec![],
                        tokens: None,
                    });
                    run.enter(Stage::Converged);
                    return;
                }
                let d = digest(&outcome, self.limits.convergence_threshold);
                run.report.timeline.push(TimelineEntry {
                    step: Step::Run,
                    iteration: run.report.iterations,
                    ok: false,
                    detail: d.summary.clone(),
                    class: Some(outcome.class),
                    digest: Some(d.clone()),
                    files: vec![],
                    tokens: None,
                });
                pending = Some(d);
            }
            let d = pending.take().expect("set above");
            if run.report.iterations >= self.limits.max_corrections {
                return run.fail(format!(
                    "no converged run after {} corrections; last error: {}",
                    run.report.iterations, d.summary
                ));
            }
            run.enter(Stage::Correcting);
            run.report.iterations += 1;
            let k = run.report.iterations;
            match self.correct(prompt, &case, &d, k) {
                Ok((bundle, resp)) => {
                    let tokens = run.record_call(self.agents.corrector.agent(), &resp);
                    if let Some(f) = &d.file {
                        for p in bundle.paths().filter(|p| p != f) {
                            run.report
                                .warnings
                                .push(format!("correction {k} changed {p}, outside the implicated file {f}"));
                        }
                    }
                    match apply_bundle(&case, &bundle) {
                        Ok(c) => {
                            case = c;
                            run.report.timeline.push(TimelineEntry {
                                step: Step::Correct,
                                iteration: k,
                                ok: true,
                                detail: format!("{} files changed", bundle.len()),
                                class: None,
                                digest: None,
                                files: bundle.paths().map(String::from).collect(),
                                tokens: Some(tokens),
                            });
                        }
                        Err(e) => {
                            let d = ErrorDigest::malformed(&e.to_string(), d.file.clone());
                            run.report.timeline.push(failed_step(Step::Correct, k, &d, Some(tokens)));
                            pending = Some(d);
                        }
                    }
                }
                Err((AgentError::Llm(e), _)) => {
                    run.report.timeline.push(TimelineEntry {
                        step: Step::Correct,
                        iteration: k,
                        ok: false,
                        detail: e.to_string(),
                        class: None,
                        digest: None,
                        files: vec![],
                        tokens: None,
                    });
                    return run.fail(format!("corrector call failed: {e}"));
                }
                Err((AgentError::Malformed(m), resp)) => {
                    let tokens = resp.map(|r| run.record_call(self.agents.corrector.agent(), &r));
                    let nd = ErrorDigest::malformed(&m.to_string(), malformed_file(&m).or(d.file.clone()));
                    run.report.timeline.push(failed_step(Step::Correct, k, &nd, tokens));
                    pending = Some(nd);
                }
            }
        }
    }
}

fn malformed_file(m: &MalformedResponse) -> Option<String> {
    match m {
        MalformedResponse::Unparseable { path, .. } => Some(path.clone()),
        _ => None,
    }
}

fn failed_step(step: Step, iteration: u32, d: &ErrorDigest, tokens: Option<TokenUsage>) -> TimelineEntry {
    TimelineEntry {
        step,
        iteration,
        ok: false,
        detail: d.summary.clone(),
        class: None,
        digest: Some(d.clone()),
        files: vec![],
        tokens,
    }
}

fn save_log(case: &CaseLayout, n: usize, log: &str) {
    let path = case.root().join(STATE_DIR).join("logs").join(format!("run-{n}.log"));
    if let Some(dir) = path.parent() {
        let _ = std::fs::create_dir_all(dir);
    }
    if let Err(e) = std::fs::write(&path, log) {
        log::warn!("cannot save solver log {}: {e}", path.display());
    }
}

#[cfg(test)]
mod tests;
