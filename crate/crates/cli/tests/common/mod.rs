#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use foampilot::case::copy_case;
use foampilot::llm::{Matcher, MockEntry, MockScript, TrialScript};
use foampilot::orchestrator::{FieldValues, ScriptedRun, TrialRuns};
use serde_json::{json, Value};

pub const PROMPT: &str = "Steady incompressible flow past the airfoil; the `walls' patch is the airfoil surface.";
pub const SAMPLE_P: &str = "Please sample field p on the 'walls' patch.";
pub const SAMPLE_REPLY: &str = "TOOL: postProcess_surfaces_sampledPatch\nARG field = \"p\"\nARG patches = [\"walls\"]\nEND\n";
pub const CRASH_LOG: &str =
    "--> FOAM FATAL IO ERROR:\nkeyword div(phi,U) is undefined in dictionary \"system/fvSchemes.divSchemes\"\n";

pub fn core_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core")
}

pub fn naca_fixture() -> PathBuf {
    core_dir().join("fixtures/cases/naca0012")
}

pub fn docs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../docs")
}

pub fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_foampilot"))
}

pub fn run_bin(args: &[&str], stdin: &str) -> Output {
    use std::io::Write;
    let mut child = bin()
        .args(args)
        .env_remove(foampilot::llm::ENV_ENDPOINT)
        .env_remove(foampilot::llm::ENV_API_KEY)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(stdin.as_bytes()).unwrap();
    child.wait_with_output().unwrap()
}

pub fn text(b: &[u8]) -> String {
    String::from_utf8_lossy(b).into_owned()
}

pub fn write_json(path: &Path, v: &impl serde::Serialize) {
    std::fs::write(path, serde_json::to_string_pretty(v).unwrap()).unwrap();
}

fn block(rel: &str, body: &str) -> String {
    format!("===FILE: {rel}===\n{body}\n===END===\n")
}

pub fn full_config() -> String {
    ["system/controlDict", "system/fvSchemes", "system/fvSolution"]
        .iter()
        .map(|r| block(r, &std::fs::read_to_string(naca_fixture().join(r)).unwrap()))
        .collect()
}

pub fn schemes_fix() -> String {
    let body = std::fs::read_to_string(naca_fixture().join("system/fvSchemes")).unwrap();
    block("system/fvSchemes", &format!("{body}\nrevision fixed;\n"))
}

pub fn generator_script() -> MockScript {
    MockScript::new(vec![MockEntry::new(Matcher::Any, full_config()).tokens(100, 40)])
}

pub fn corrector_script() -> MockScript {
    MockScript::new(vec![MockEntry {
        repeat: true,
        ..MockEntry::new(Matcher::Any, schemes_fix()).tokens(80, 20)
    }])
}

pub fn converged(p: Vec<f64>) -> ScriptedRun {
    ScriptedRun {
        residuals: [("Ux".to_string(), vec![1.0, 1e-3, 1e-6]), ("p".to_string(), vec![1.0, 1e-2, 1e-5])].into(),
        fields: [("p".to_string(), FieldValues::Scalar(p))].into(),
        coefficients: [("Cl".to_string(), 0.45), ("Cd".to_string(), 0.02)].into(),
        ..Default::default()
    }
}

pub fn crash(repeat: usize) -> ScriptedRun {
    ScriptedRun {
        log: CRASH_LOG.into(),
        exit_code: 1,
        repeat,
        ..Default::default()
    }
}

pub fn stalled() -> ScriptedRun {
    ScriptedRun {
        residuals: [("p".to_string(), vec![1.0, 0.5])].into(),
        ..Default::default()
    }
}

/// A case copy plus scripts and a config file in one temporary directory.
pub struct Scenario {
    pub dir: tempfile::TempDir,
}

impl Scenario {
    pub fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        copy_case(&naca_fixture(), &dir.path().join("case")).unwrap();
        Self { dir }
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    pub fn case(&self) -> String {
        self.path("case").display().to_string()
    }

    /// Writes mock and run scripts and a config using them. `runs` is the
    /// simulated runner's script, `extra` is merged into the config.
    pub fn with_workflow(self, runs: Value, extra: Value) -> Self {
        write_json(&self.path("generator.json"), &generator_script());
        write_json(&self.path("corrector.json"), &corrector_script());
        write_json(&self.path("runs.json"), &runs);
        let mut cfg = json!({
            "agents": {
                "generator": {"mock": "generator.json"},
                "corrector": {"mock": "corrector.json"}
            },
            "runner": {"kind": "simulated", "script": "runs.json"},
            "post_backend": "simulated"
        });
        merge(&mut cfg, extra);
        write_json(&self.path("config.json"), &cfg);
        self
    }

    pub fn with_post(self, selector: MockScript) -> Self {
        write_json(&self.path("selector.json"), &selector);
        write_json(
            &self.path("config.json"),
            &json!({
                "agents": {"default": {"mock": "selector.json"}},
                "post_backend": "simulated",
                "interpreter": ["sh"]
            }),
        );
        self
    }

    pub fn config(&self) -> String {
        self.path("config.json").display().to_string()
    }

    pub fn report(&self) -> Value {
        serde_json::from_str(&std::fs::read_to_string(self.path("case/.copilot/report.json")).unwrap()).unwrap()
    }

    pub fn transcript_lines(&self) -> usize {
        std::fs::read_to_string(self.path("case/.copilot/session.jsonl"))
            .map(|t| t.lines().count())
            .unwrap_or(0)
    }
}

pub fn merge(base: &mut Value, extra: Value) {
    match (base, extra) {
        (Value::Object(b), Value::Object(e)) => {
            for (k, v) in e {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, e) => *b = e,
    }
}

pub fn runs(list: Vec<ScriptedRun>) -> Value {
    json!({ "runs": list })
}

/// Ten trials: trial 4 converges first time, the others stall.
pub fn one_in_ten() -> (Value, Value) {
    let runs = json!({
        "trials": [
            TrialRuns { copies: 3, runs: vec![stalled()] },
            TrialRuns { copies: 1, runs: vec![converged(vec![3.0, 4.5])] },
            TrialRuns { copies: 6, runs: vec![stalled()] },
        ]
    });
    let generator = json!({
        "trials": [TrialScript { copies: 10, script: generator_script() }]
    });
    (runs, generator)
}

pub fn validate(schema: &str, instance: &Value) -> Vec<String> {
    let schema: Value = serde_json::from_str(&std::fs::read_to_string(docs_dir().join(schema)).unwrap()).unwrap();
    let validator = jsonschema::validator_for(&schema).unwrap();
    validator.iter_errors(instance).map(|e| e.to_string()).collect()
}

pub fn reference_field(path: &Path, values: &[f64]) {
    let items: Vec<String> = values.iter().map(|v| v.to_string()).collect();
    std::fs::write(
        path,
        format!(
            "FoamFile\n{{\n    version 2.0;\n    format ascii;\n    class volScalarField;\n    object p;\n}}\n\
             dimensions [0 2 -2 0 0 0 0];\ninternalField nonuniform List<scalar> {} ({});\nboundaryField\n{{\n}}\n",
            values.len(),
            items.join(" ")
        ),
    )
    .unwrap();
}
