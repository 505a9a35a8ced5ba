use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::digest::RawRun;
use crate::case::{write_case_file, CaseLayout};
use crate::foam::{emit_dict, format_number, FoamDict, FoamFile, FoamNode};
use crate::process::run_captured;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RunnerError {
    #[error("cannot start solver: {0}")]
    SpawnFailure(String),
}

/// Runs the solver once over a case.
pub trait SolverRunner: Send + Sync {
    fn run(&self, case: &CaseLayout) -> Result<RawRun, RunnerError>;
}

/// Launches the application named in `system/controlDict`.
#[derive(Debug, Clone, Default)]
pub struct SubprocessRunner {
    pub timeout: Option<Duration>,
    /// Replaces the solver command line, mainly for tests.
    pub command: Option<Vec<String>>,
}

impl SolverRunner for SubprocessRunner {
    fn run(&self, case: &CaseLayout) -> Result<RawRun, RunnerError> {
        let argv = match &self.command {
            Some(c) => c.clone(),
            None => vec![case.solver().map_err(|e| RunnerError::SpawnFailure(e.to_string()))?],
        };
        let out = run_captured(&argv, case.root(), self.timeout)
            .map_err(|e| RunnerError::SpawnFailure(format!("{}: {e}", argv[0])))?;
        Ok(RawRun {
            exit_code: out.exit_code,
            log: out.output,
            timed_out: out.timed_out,
        })
    }
}

/// Values written into `<endTime>/<field>`: one number per cell for a
/// scalar field, one triple per cell for a vector field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FieldValues {
    Scalar(Vec<f64>),
    Vector(Vec<[f64; 3]>),
}

/// One scripted solver run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScriptedRun {
    /// Log text appended after the synthesized residual lines.
    #[serde(default)]
    pub log: String,
    /// Initial residual per iteration for each field.
    #[serde(default)]
    pub residuals: BTreeMap<String, Vec<f64>>,
    #[serde(default)]
    pub exit_code: i32,
    /// Fields written to the end-time directory after a clean exit.
    #[serde(default)]
    pub fields: BTreeMap<String, FieldValues>,
    /// Force coefficients (`Cd`, `Cl`, ...) written to
    /// `postProcessing/forceCoeffs/<endTime>/coefficient.dat`.
    #[serde(default)]
    pub coefficients: BTreeMap<String, f64>,
    /// Number of consecutive runs this entry stands for.
    #[serde(default = "one")]
    pub repeat: usize,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRuns {
    #[serde(default = "one")]
    pub copies: usize,
    pub runs: Vec<ScriptedRun>,
}

/// A simulated-runner script: one run list, or per-trial run lists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RunScript {
    Trials { trials: Vec<TrialRuns> },
    Runs { runs: Vec<ScriptedRun> },
}

impl RunScript {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    pub fn for_trial(&self, index: usize) -> Option<Vec<ScriptedRun>> {
        match self {
            RunScript::Runs { runs } => Some(runs.clone()),
            RunScript::Trials { trials } => {
                let mut i = index;
                for t in trials {
                    if i < t.copies {
                        return Some(t.runs.clone());
                    }
                    i -= t.copies;
                }
                None
            }
        }
    }
}

/// Replays scripted runs in order, writing their logs and outputs into
/// the case so everything downstream sees what a real solver would leave.
/// Once the script is used up the last run repeats; an empty script fails
/// to spawn.
#[derive(Debug)]
pub struct SimulatedRunner {
    runs: Vec<ScriptedRun>,
    next: Mutex<(usize, usize)>,
}

impl SimulatedRunner {
    pub fn new(runs: Vec<ScriptedRun>) -> Self {
        Self {
            runs,
            next: Mutex::new((0, 0)),
        }
    }

    fn take(&self) -> Option<ScriptedRun> {
        let mut n = self.next.lock().unwrap_or_else(|p| p.into_inner());
        let (entry, used) = *n;
        let Some(run) = self.runs.get(entry).cloned() else {
            return self.runs.last().cloned();
        };
        *n = if used + 1 >= run.repeat.max(1) { (entry + 1, 0) } else { (entry, used + 1) };
        Some(run)
    }
}

fn end_time(case: &CaseLayout) -> String {
    case.read("system/controlDict")
        .ok()
        .and_then(|f| f.root.get("endTime").and_then(FoamNode::as_f64))
        .map(format_number)
        .unwrap_or_else(|| "1".into())
}

fn synthesize_log(run: &ScriptedRun) -> String {
    let steps = run.residuals.values().map(Vec::len).max().unwrap_or(0);
    let mut log = String::new();
    for i in 0..steps {
        log.push_str(&format!("Time = {}\n\n", i + 1));
        for (field, series) in &run.residuals {
            if let Some(r) = series.get(i) {
                log.push_str(&format!(
                    "smoothSolver:  Solving for {field}, Initial residual = {r:e}, Final residual = {:e}, No Iterations 3\n",
                    r * 0.01
                ));
            }
        }
        log.push_str(&format!("ExecutionTime = {} s\n\n", i + 1));
    }
    log.push_str(&run.log);
    if !log.is_empty() && !log.ends_with('\n') {
        log.push('\n');
    }
    if run.exit_code == 0 && !run.log.contains("FOAM FATAL") {
        log.push_str("End\n");
    }
    log
}

fn field_file(name: &str, values: &FieldValues) -> String {
    let (class, kind, items): (&str, &str, Vec<FoamNode>) = match values {
        FieldValues::Scalar(v) => ("volScalarField", "List<scalar>", v.iter().map(|x| FoamNode::number(*x)).collect()),
        FieldValues::Vector(v) => ("volVectorField", "List<vector>", v.iter().map(|x| FoamNode::vector(*x)).collect()),
    };
    let n = items.len() as f64;
    let internal = FoamNode::Seq(vec![
        FoamNode::word("nonuniform"),
        FoamNode::word(kind),
        FoamNode::number(n),
        FoamNode::List(items),
    ]);
    let root = FoamDict::new()
        .with("internalField", internal)
        .with("boundaryField", FoamNode::Dict(FoamDict::new()));
    emit_dict(&FoamFile::new(class, name).with_root(root))
}

fn coefficient_file(time: &str, coefficients: &BTreeMap<String, f64>) -> String {
    let cols = ["Cd", "Cs", "Cl", "CmRoll", "CmPitch", "CmYaw"];
    let mut head = String::from("# Time");
    let mut row = time.to_string();
    for c in cols {
        head.push('\t');
        head.push_str(c);
        row.push('\t');
        row.push_str(&format_number(coefficients.get(c).copied().unwrap_or(0.0)));
    }
    format!("{head}\n{row}\n")
}

impl SolverRunner for SimulatedRunner {
    fn run(&self, case: &CaseLayout) -> Result<RawRun, RunnerError> {
        let run = self
            .take()
            .ok_or_else(|| RunnerError::SpawnFailure("simulated run script is empty".into()))?;
        let io = |e: crate::case::CaseError| RunnerError::SpawnFailure(e.to_string());
        if run.exit_code == 0 {
            let t = end_time(case);
            for (name, values) in &run.fields {
                write_case_file(case, &format!("{t}/{name}"), &field_file(name, values)).map_err(io)?;
            }
            if !run.coefficients.is_empty() {
                write_case_file(
                    case,
                    &format!("postProcessing/forceCoeffs/{t}/coefficient.dat"),
                    &coefficient_file(&t, &run.coefficients),
                )
                .map_err(io)?;
            }
        }
        Ok(RawRun {
            exit_code: Some(run.exit_code),
            log: synthesize_log(&run),
            timed_out: false,
        })
    }
}
