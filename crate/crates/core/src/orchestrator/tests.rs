use std::path::Path;
use std::sync::Arc;

use super::*;
use crate::case::copy_case;
use crate::llm::{MockBackend, MockEntry, MockScript, Matcher, Transcript};

const PROMPT: &str = "Steady incompressible flow past the airfoil; the `walls' patch is the airfoil surface.";
const KEYWORD_LOG: &str =
    "--> FOAM FATAL IO ERROR:\nkeyword div(phi,U) is undefined in dictionary \"system/fvSchemes.divSchemes\"\n";

fn case() -> tempfile::TempDir {
    let src = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/cases/naca0012");
    let tmp = tempfile::tempdir().unwrap();
    copy_case(&src, tmp.path()).unwrap();
    tmp
}

fn fixture_text(rel: &str) -> String {
    std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/cases/naca0012").join(rel)).unwrap()
}

fn block(rel: &str, body: &str) -> String {
    format!("===FILE: {rel}===\n{body}\n===END===\n")
}

fn full_config() -> String {
    ["system/controlDict", "system/fvSchemes", "system/fvSolution"]
        .iter()
        .map(|r| block(r, &fixture_text(r)))
        .collect()
}

fn schemes_fix(tag: &str) -> String {
    let text = format!("{}\nrevision {};\n", fixture_text("system/fvSchemes"), tag.replace(' ', "_"));
    block("system/fvSchemes", &text)
}

struct Rig {
    workflow: Workflow,
    generator: Arc<MockBackend>,
    corrector: Arc<MockBackend>,
    transcript: Transcript,
    events: EventBus,
}

fn rig(generator: Vec<MockEntry>, corrector: Vec<MockEntry>, runs: Vec<ScriptedRun>) -> Rig {
    let transcript = Transcript::new();
    let generator = Arc::new(MockBackend::new(MockScript::new(generator)).unwrap());
    let corrector = Arc::new(MockBackend::new(MockScript::new(corrector)).unwrap());
    let events = EventBus::new();
    let workflow = Workflow {
        agents: Agents {
            generator: Gateway::new(generator.clone(), transcript.clone(), "generator"),
            corrector: Gateway::new(corrector.clone(), transcript.clone(), "corrector"),
        },
        runner: Arc::new(SimulatedRunner::new(runs)),
        limits: WorkflowLimits::default(),
        templates: Arc::new(PromptTemplates::default()),
        events: Some(events.clone()),
    };
    Rig {
        workflow,
        generator,
        corrector,
        transcript,
        events,
    }
}

fn converged_run() -> ScriptedRun {
    ScriptedRun {
        residuals: [("Ux".to_string(), vec![1.0, 1e-3, 1e-6]), ("p".to_string(), vec![1.0, 1e-2, 1e-5])].into(),
        ..Default::default()
    }
}

fn crash(log: &str) -> ScriptedRun {
    ScriptedRun {
        log: log.into(),
        exit_code: 1,
        ..Default::default()
    }
}

#[test]
fn converges_first_time() {
    let dir = case();
    let r = rig(
        vec![MockEntry::new(Matcher::Any, full_config()).tokens(100, 40)],
        vec![],
        vec![converged_run()],
    );
    let report = r.workflow.run(PROMPT, dir.path());
    assert_eq!(report.stage, Stage::Converged, "{:?}", report.error);
    assert_eq!(report.steps(), [Step::Generate, Step::Run]);
    assert_eq!(report.iterations, 0);
    assert_eq!(report.llm_calls, 1);
    assert_eq!(report.outcome, TrialOutcome::Converged);
    assert_eq!(report.final_residuals["p"], 1e-5);
    assert_eq!(
        report.stages,
        [Stage::Prechecking, Stage::Generating, Stage::Running, Stage::Converged]
    );
    assert_eq!(r.corrector.calls(), 0);
    assert!(dir.path().join(".copilot/logs").is_dir());
}

#[test]
fn fails_once_then_fixed() {
    let dir = case();
    let r = rig(
        vec![MockEntry::new(Matcher::Any, full_config()).tokens(100, 40)],
        vec![MockEntry::new(Matcher::Contains("div(phi,U)".into()), schemes_fix("fixed")).tokens(80, 20)],
        vec![crash(KEYWORD_LOG), converged_run()],
    );
    let report = r.workflow.run(PROMPT, dir.path());
    assert_eq!(report.stage, Stage::Converged, "{:?}", report.error);
    assert_eq!(report.steps(), [Step::Generate, Step::Run, Step::Correct, Step::Run]);
    assert_eq!(report.iterations, 1);
    let failed = &report.timeline[1];
    assert_eq!(failed.digest.as_ref().unwrap().kind, ErrorKind::KeywordMissing);
    assert_eq!(failed.digest.as_ref().unwrap().file.as_deref(), Some("system/fvSchemes"));

    let req = &r.corrector.requests()[0];
    let user = req.last_user();
    assert!(user.contains("Correction 1 of 10"));
    assert!(user.contains("keyword div(phi,U) undefined in system/fvSchemes"));
    assert!(user.contains("Current content of system/fvSchemes"));
    assert!(user.contains(PROMPT));
    assert!(std::fs::read_to_string(dir.path().join("system/fvSchemes")).unwrap().contains("fixed;"));
    assert!(report.warnings.is_empty());
}

#[test]
fn persistent_failure_stops_after_ten_corrections() {
    let dir = case();
    let corrections = (1..=10)
        .map(|i| MockEntry::new(Matcher::Any, schemes_fix(&format!("attempt {i}"))).tokens(10, 5))
        .collect();
    let r = rig(
        vec![MockEntry::new(Matcher::Any, full_config()).tokens(100, 40)],
        corrections,
        vec![ScriptedRun {
            repeat: 10,
            ..crash(KEYWORD_LOG)
        }],
    );
    let report = r.workflow.run(PROMPT, dir.path());
    assert_eq!(report.stage, Stage::Failed);
    assert_eq!(report.iterations, 10);
    assert_eq!(report.llm_calls, 11);
    assert_eq!(r.generator.calls() + r.corrector.calls(), 11);
    let runs = report.steps().iter().filter(|s| **s == Step::Run).count();
    assert_eq!(runs, 11);
    assert_eq!(report.outcome, TrialOutcome::Crashed);
    assert!(report.error.as_deref().unwrap().contains("10 corrections"));
    assert!(dir.path().join(".copilot/iter-10/system/fvSchemes").exists());
}

#[test]
fn previous_version_comes_from_archive() {
    let dir = case();
    let r = rig(
        vec![MockEntry::new(Matcher::Any, full_config())],
        vec![
            MockEntry::new(Matcher::Any, schemes_fix("first")),
            MockEntry::new(Matcher::Any, schemes_fix("second")),
        ],
        vec![crash(KEYWORD_LOG), crash(KEYWORD_LOG), converged_run()],
    );
    let report = r.workflow.run(PROMPT, dir.path());
    assert_eq!(report.stage, Stage::Converged);
    let second = r.corrector.requests()[1].last_user().to_string();
    let (current, previous) = second
        .split_once("Previous version of system/fvSchemes:")
        .unwrap();
    assert!(current.contains("first;"));
    assert!(!previous.contains("revision"));
    assert!(previous.contains("divSchemes"));
}

#[test]
fn malformed_correction_counts_as_an_iteration() {
    let dir = case();
    let r = rig(
        vec![MockEntry::new(Matcher::Any, full_config())],
        vec![
            MockEntry::new(Matcher::Any, "I think the schemes are wrong."),
            MockEntry::new(Matcher::Contains("malformed-response".into()), schemes_fix("ok")),
        ],
        vec![crash(KEYWORD_LOG), converged_run()],
    );
    let report = r.workflow.run(PROMPT, dir.path());
    assert_eq!(report.stage, Stage::Converged, "{:?}", report.error);
    assert_eq!(
        report.steps(),
        [Step::Generate, Step::Run, Step::Correct, Step::Correct, Step::Run]
    );
    assert_eq!(report.iterations, 2);
    assert_eq!(report.timeline[2].digest.as_ref().unwrap().kind, ErrorKind::MalformedResponse);
}

#[test]
fn incomplete_generation_is_malformed() {
    let dir = case();
    std::fs::remove_file(dir.path().join("system/fvSolution")).unwrap();
    let partial = block("system/controlDict", &fixture_text("system/controlDict"))
        + &block("system/fvSchemes", &fixture_text("system/fvSchemes"));
    let r = rig(
        vec![MockEntry::new(Matcher::Any, partial)],
        vec![MockEntry::new(
            Matcher::Contains("system/fvSolution".into()),
            block("system/fvSolution", &fixture_text("system/fvSolution")),
        )],
        vec![converged_run()],
    );
    let report = r.workflow.run(PROMPT, dir.path());
    assert_eq!(report.steps(), [Step::Generate, Step::Correct, Step::Run]);
    assert!(!report.timeline[0].ok);
    assert!(report.timeline[0].detail.contains("system/fvSolution"));
    assert_eq!(report.stage, Stage::Converged);
}

#[test]
fn precheck_failure_makes_no_calls() {
    let dir = case();
    let r = rig(vec![MockEntry::new(Matcher::Any, full_config())], vec![], vec![]);
    let report = r.workflow.run("Compute lift on the `wing' patch.", dir.path());
    assert_eq!(report.stage, Stage::Failed);
    assert_eq!(r.generator.calls(), 0);
    assert!(report.error.unwrap().contains("wing"));
    assert!(!report.precheck.unwrap().passed());
}

#[test]
fn spawn_failure_ends_the_workflow() {
    let dir = case();
    let r = rig(vec![MockEntry::new(Matcher::Any, full_config())], vec![], vec![]);
    let report = r.workflow.run(PROMPT, dir.path());
    assert_eq!(report.stage, Stage::Failed);
    assert!(report.error.unwrap().contains("cannot start solver"));
}

#[test]
fn llm_failure_ends_the_workflow() {
    let dir = case();
    let r = rig(vec![], vec![], vec![converged_run()]);
    let report = r.workflow.run(PROMPT, dir.path());
    assert_eq!(report.stage, Stage::Failed);
    assert!(report.error.unwrap().starts_with("generator call failed"));
}

#[test]
fn tokens_match_transcript_and_events() {
    let dir = case();
    let r = rig(
        vec![MockEntry::new(Matcher::Any, full_config()).tokens(100, 40)],
        vec![MockEntry::new(Matcher::Any, schemes_fix("x")).tokens(80, 20)],
        vec![crash(KEYWORD_LOG), converged_run()],
    );
    let report = r.workflow.run(PROMPT, dir.path());
    assert_eq!(report.tokens, r.transcript.usage());
    assert_eq!(report.tokens, TokenUsage { prompt: 180, completion: 60 });
    assert_eq!(report.summary().tokens.completion, 60);
    let kinds: Vec<String> = r.events.history().into_iter().map(|e| e.kind).collect();
    assert_eq!(kinds.iter().filter(|k| *k == events::LLM_EXCHANGE).count(), 2);
    assert!(kinds.iter().any(|k| k == events::WORKFLOW_STATE));
    let back: WorkflowReport = serde_json::from_str(&report.to_json()).unwrap();
    assert_eq!(back.steps(), report.steps());
}

#[test]
fn scope_warning_for_unrelated_files() {
    let dir = case();
    let wide = schemes_fix("x") + &block("system/fvSolution", &fixture_text("system/fvSolution").replace("GAMG", "PCG"));
    let r = rig(
        vec![MockEntry::new(Matcher::Any, full_config())],
        vec![MockEntry::new(Matcher::Any, wide)],
        vec![crash(KEYWORD_LOG), converged_run()],
    );
    let report = r.workflow.run(PROMPT, dir.path());
    assert_eq!(report.warnings.len(), 1, "{:?}", report.warnings);
    assert!(report.warnings[0].contains("system/fvSolution"));
}

#[test]
fn limits_validate() {
    assert!(WorkflowLimits::default().validate().is_ok());
    assert!(WorkflowLimits { max_corrections: 0, ..Default::default() }.validate().is_err());
    let l: WorkflowLimits = serde_json::from_str(
        r#"{"max_corrections": 3, "run_timeout": 2.5, "trials": 1, "convergence_threshold": 1e-5}"#,
    )
    .unwrap();
    assert_eq!(l.run_timeout, Some(Duration::from_millis(2500)));
}
