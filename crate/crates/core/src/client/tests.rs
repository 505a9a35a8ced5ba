use std::path::Path;
use std::sync::Arc;

use serde_json::json;

use super::*;
use crate::case::copy_case;
use crate::llm::{Matcher, MockBackend, MockEntry, MockScript, Transcript};
use crate::mcp::{InProcess, McpSession, ToolHost};
use crate::tools::{Registry, SimulatedPost};

const SAMPLE_P: &str = "Please sample field p on the `walls' patch.";
const PLOT_CP: &str =
    "Please write a Python script to draw a scatter plot of normalized chord length and pressure coefficient.";
const FORCES: &str = "Please compute force coefficients over `walls' patch at the latest time. Lift direction is (-0.1736 0.9848 0). Drag direction is (0.9848 0.1736 0). Pitch axis is (0 0 1). The magnitude of the free-stream velocity is 51.4815. Length of the wing is 1. Area of the wing is 1.";

const SAMPLE_REPLY: &str = "TOOL: postProcess_surfaces_sampledPatch\nARG field = \"p\"\nARG patches = [\"walls\"]\nEND\n";
const FORCE_REPLY: &str = "TOOL: postProcess_forceCoeffs\nARG patches = [\"walls\"]\nARG liftDir = [-0.1736, 0.9848, 0]\nARG dragDir = [0.9848, 0.1736, 0]\nARG CofR = [0.25, 0, 0]\nARG pitchAxis = [0, 0, 1]\nARG magUInf = 51.4815\nARG lRef = 1\nARG Aref = 1\nARG time = \"latest\"\nEND\n";
const PLOT_REPLY: &str = "```python\nimport numpy as np\nd = np.loadtxt('postProcessing/sampledPatch/500/p_walls.raw')\n```\n";

fn case(name: &str) -> tempfile::TempDir {
    let src = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/cases").join(name);
    let tmp = tempfile::tempdir().unwrap();
    copy_case(&src, tmp.path()).unwrap();
    tmp
}

struct Rig {
    session: PostSession,
    selector: Arc<MockBackend>,
    analyst: Arc<MockBackend>,
}

fn rig(dir: &Path, selector: Vec<MockEntry>, analyst: Vec<MockEntry>) -> Rig {
    let host = ToolHost::new(Registry::builtin(), dir, Arc::new(SimulatedPost::new()));
    let client = McpClient::new(InProcess::new(McpSession::new(Arc::new(host))));
    let t = Transcript::new();
    let selector = Arc::new(MockBackend::new(MockScript::new(selector)).unwrap());
    let analyst = Arc::new(MockBackend::new(MockScript::new(analyst)).unwrap());
    let agents = PostAgents {
        selector: Gateway::new(selector.clone(), t.clone(), "selector"),
        analyst: Gateway::new(analyst.clone(), t, "analyst"),
    };
    let session = PostSession::connect(
        client,
        agents,
        dir,
        Arc::new(PromptTemplates::default()),
        SessionSettings::default(),
    )
    .unwrap();
    Rig {
        session,
        selector,
        analyst,
    }
}

#[test]
fn sample_request_selects_sampled_patch() {
    let dir = case("naca0012");
    let mut r = rig(dir.path(), vec![MockEntry::new(Matcher::Any, SAMPLE_REPLY)], vec![]);
    let choice = r.session.select(SAMPLE_P).unwrap();
    assert_eq!(choice.tool, "postProcess_surfaces_sampledPatch");
    assert_eq!(Value::Object(choice.arguments.clone()), json!({"field": "p", "patches": ["walls"]}));
    let prompt = r.selector.requests()[0].last_user().to_string();
    assert!(prompt.contains("postProcess_forceCoeffs"), "every descriptor is offered");
    let patches = prompt.split("Case patches: ").nth(1).unwrap().lines().next().unwrap();
    assert!(patches.split(", ").any(|p| p == "walls"), "{patches}");
    assert!(prompt.contains("Time directories: 0, 500"));
    let entry = r.session.invoke(SAMPLE_P, &choice).unwrap();
    assert_eq!(r.session.context().history().len(), 1);
    assert!(entry.paths.iter().any(|p| p.ends_with("p_walls.raw")), "{:?}", entry.paths);
    assert!(dir.path().join(&entry.paths[0]).exists());
}

#[test]
fn force_request_maps_every_argument() {
    let dir = case("naca0012");
    let mut r = rig(dir.path(), vec![MockEntry::new(Matcher::Any, FORCE_REPLY)], vec![]);
    let choice = r.session.select(FORCES).unwrap();
    assert_eq!(choice.tool, "postProcess_forceCoeffs");
    let a = &choice.arguments;
    assert_eq!(a["liftDir"], json!([-0.1736, 0.9848, 0]));
    assert_eq!(a["dragDir"], json!([0.9848, 0.1736, 0]));
    assert_eq!(a["pitchAxis"], json!([0, 0, 1]));
    assert_eq!(a["magUInf"], json!(51.4815));
    assert_eq!(a["lRef"], json!(1));
    assert_eq!(a["Aref"], json!(1));
    assert_eq!(a["time"], json!("latest"));
    let entry = r.session.invoke(FORCES, &choice).unwrap();
    assert!(entry.summary.contains("-postProcess"));
    assert!(entry.summary.contains("-latestTime"));
}

#[test]
fn out_of_domain_is_not_retried() {
    let dir = case("naca0012");
    let r = rig(
        dir.path(),
        vec![MockEntry::new(Matcher::Any, "TOOL: NONE\nNothing here makes coffee.")],
        vec![],
    );
    let e = r.session.select("make me coffee").unwrap_err();
    assert!(matches!(e, ClientError::NoToolSelected(_)), "{e:?}");
    assert_eq!(r.selector.calls(), 1);
    let unknown = rig(dir.path(), vec![MockEntry::new(Matcher::Any, "TOOL: brewCoffee\nEND")], vec![]);
    assert!(matches!(unknown.session.select("x"), Err(ClientError::NoToolSelected(_))));
    assert_eq!(unknown.selector.calls(), 1);
}

#[test]
fn one_reprompt_on_schema_violation() {
    let dir = case("naca0012");
    let bad = "TOOL: postProcess_surfaces_sampledPatch\nARG field = \"p\"\nARG patches = \"walls\"\nEND";
    let r = rig(
        dir.path(),
        vec![MockEntry::new(Matcher::Any, bad), MockEntry::new(Matcher::Any, SAMPLE_REPLY)],
        vec![],
    );
    let choice = r.session.select(SAMPLE_P).unwrap();
    assert_eq!(choice.arguments["patches"], json!(["walls"]));
    let second = &r.selector.requests()[1];
    assert!(second.last_user().contains("`patches`"));
    assert_eq!(second.messages.len(), 4);

    let r = rig(
        dir.path(),
        vec![MockEntry {
            repeat: true,
            ..MockEntry::new(Matcher::Any, bad)
        }],
        vec![],
    );
    assert!(matches!(
        r.session.select(SAMPLE_P),
        Err(ClientError::SchemaViolation { ref param, .. }) if param == "patches"
    ));
    assert_eq!(r.selector.calls(), 2);
}

#[test]
fn repeated_invocations_get_distinct_outputs() {
    let dir = case("naca0012");
    let mut r = rig(dir.path(), vec![], vec![]);
    let choice = ToolChoice {
        tool: "postProcess_surfaces_sampledPatch".into(),
        arguments: json!({"field": "p", "patches": ["walls"], "time": "latest"}).as_object().unwrap().clone(),
        note: String::new(),
        raw: String::new(),
    };
    let a = r.session.invoke(SAMPLE_P, &choice).unwrap();
    let b = r.session.invoke(SAMPLE_P, &choice).unwrap();
    assert_eq!(r.session.context().history().len(), 2);
    assert_ne!(a.paths, b.paths);
    assert!(b.paths[0].contains("sampledPatch_1"), "{:?}", b.paths);
}

#[test]
fn invoke_after_close_reports_transport_closed() {
    let dir = case("naca0012");
    let mut r = rig(dir.path(), vec![], vec![]);
    r.session.close();
    let choice = ToolChoice {
        tool: "postProcess_vorticity".into(),
        arguments: Map::new(),
        note: String::new(),
        raw: String::new(),
    };
    let e = r.session.invoke("vorticity", &choice).unwrap_err();
    assert!(matches!(e, ClientError::Mcp(McpError::TransportClosed)), "{e:?}");
    assert!(!r.session.context().history()[0].ok);
}

#[test]
fn script_needs_data_and_a_fence() {
    let dir = case("naca0012");
    let mut r = rig(
        dir.path(),
        vec![MockEntry::new(Matcher::Any, SAMPLE_REPLY)],
        vec![MockEntry::new(Matcher::Any, "You could use matplotlib for this.")],
    );
    assert!(matches!(r.session.analyse(PLOT_CP), Err(ClientError::NoProducedData)));
    assert_eq!(r.analyst.calls(), 0);
    r.session.turn(SAMPLE_P).unwrap();
    assert!(matches!(r.session.analyse(PLOT_CP), Err(ClientError::NoCodeBlock)));
}

#[test]
fn one_script_over_three_surfaces() {
    let dir = case("30p30n");
    let sel = |patch: &str| {
        MockEntry::new(
            Matcher::Contains(format!("`{patch}'")),
            format!("TOOL: postProcess_surfaces_sampledPatch\nARG field = \"p\"\nARG patches = [\"{patch}\"]\nARG time = \"latest\"\nEND"),
        )
    };
    let code = "```python\nfor f in ['postProcessing/sampledPatch/500/p_wall_slat.raw', 'postProcessing/sampledPatch_1/500/p_wall_airfoil.raw', 'postProcessing/sampledPatch_2/500/p_wall_flap.raw']:\n    pass\nplt.savefig('cp.png')\n```";
    let mut r = rig(
        dir.path(),
        vec![sel("wall_slat"), sel("wall_airfoil"), sel("wall_flap")],
        vec![MockEntry::new(Matcher::Any, code)],
    );
    for patch in ["wall_slat", "wall_airfoil", "wall_flap"] {
        r.session
            .turn(&format!("Please sample field p on the `{patch}' patches."))
            .unwrap();
    }
    let produced = r.session.context().produced();
    assert_eq!(produced.len(), 3, "{produced:?}");
    let (entry, outcome) = r.session.analyse(PLOT_CP).unwrap();
    assert_eq!(outcome.lint.inputs, produced);
    assert!(outcome.lint.undeclared.is_empty());
    assert_eq!(outcome.lint.outputs, ["cp.png"]);
    assert_eq!(entry.paths, [".copilot/scripts/script_1.py"]);
    let prompt = r.analyst.requests()[0].last_user().to_string();
    for p in &produced {
        assert!(prompt.contains(p.as_str()));
    }
}

#[test]
fn analyst_sees_at_most_the_byte_budget() {
    let dir = case("naca0012");
    let mut r = rig(
        dir.path(),
        vec![MockEntry::new(Matcher::Any, SAMPLE_REPLY)],
        vec![MockEntry::new(Matcher::Any, PLOT_REPLY)],
    );
    r.session.settings.samples = SampleBudget { lines: 1000, bytes: 16 };
    let entry = r.session.turn(SAMPLE_P).unwrap();
    let big = "0.1 0.2 0.3 101325\n".repeat(500);
    std::fs::write(dir.path().join(&entry.paths[0]), &big).unwrap();
    r.session.analyse(PLOT_CP).unwrap();
    let prompt = r.analyst.requests()[0].last_user().to_string();
    assert!(prompt.contains("0.1 0.2 0.3 1013"));
    assert!(!prompt.contains("0.1 0.2 0.3 10132"));
}

#[test]
fn three_turn_session_through_the_repl() {
    let dir = case("naca0012");
    let mut r = rig(
        dir.path(),
        vec![
            MockEntry::new(Matcher::Contains("sample field p".into()), SAMPLE_REPLY),
            MockEntry::new(Matcher::Contains("force coefficients".into()), FORCE_REPLY),
        ],
        vec![MockEntry::new(Matcher::Any, PLOT_REPLY)],
    );
    let input = format!("{SAMPLE_P}\n\n:tools\n{PLOT_CP}\n{FORCES}\n:history\n:quit\nignored\n");
    let mut out = Vec::new();
    let stats = run_repl(&mut r.session, &mut input.as_bytes(), &mut out, false, false).unwrap();
    assert_eq!(stats, ReplStats { turns: 3, failures: 0 });
    assert_eq!(r.selector.calls(), 2);
    assert_eq!(r.analyst.calls(), 1);
    let text = String::from_utf8(out).unwrap();
    assert!(text.contains("postProcess_streamLine: "), "{text}");
    assert!(text.contains("3. [ok] postProcess_forceCoeffs"));
    let transcript = std::fs::read_to_string(dir.path().join(".copilot/session.jsonl")).unwrap();
    let kinds: Vec<HistoryEntry> = transcript.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(kinds.len(), 3);
    assert_eq!(kinds[0].tool.as_deref(), Some("postProcess_surfaces_sampledPatch"));
    assert_eq!(kinds[1].kind, TurnKind::Script);
    assert_eq!(kinds[2].tool.as_deref(), Some("postProcess_forceCoeffs"));
}

#[test]
fn confirmation_gate() {
    let dir = case("naca0012");
    let mut r = rig(
        dir.path(),
        vec![MockEntry {
            repeat: true,
            ..MockEntry::new(Matcher::Any, SAMPLE_REPLY)
        }],
        vec![],
    );
    let mut out = Vec::new();
    let input = format!("{SAMPLE_P}\nn\n{SAMPLE_P}\ny\n");
    run_repl(&mut r.session, &mut input.as_bytes(), &mut out, true, false).unwrap();
    assert_eq!(r.session.context().history().len(), 1);
    assert!(String::from_utf8(out).unwrap().contains("skipped"));
}

#[test]
fn replay_reproduces_context() {
    let run = || {
        let dir = case("naca0012");
        let mut r = rig(
            dir.path(),
            vec![
                MockEntry::new(Matcher::Contains("sample field p".into()), SAMPLE_REPLY),
                MockEntry::new(Matcher::Contains("force coefficients".into()), FORCE_REPLY),
            ],
            vec![MockEntry::new(Matcher::Any, PLOT_REPLY)],
        );
        for q in [SAMPLE_P, PLOT_CP, FORCES] {
            r.session.turn(q).unwrap();
        }
        r.session.context().history().to_vec()
    };
    let a = run();
    let b = run();
    // Command lines quote no temp paths, so whole entries compare equal.
    assert_eq!(a, b);
}
