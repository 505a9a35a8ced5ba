use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, OnceLock};
use std::time::Duration;

use super::{ToolInvocationPlan, POST_DICT};
use crate::case::{write_case_file, CaseLayout};
use crate::foam::{emit_dict, FoamDict, FoamFile, FoamNode};
use crate::mcp::{Content, ToolCallResult};
use crate::process::run_captured;

#[derive(Debug, Clone, PartialEq)]
pub struct PostRun {
    pub exit_code: i32,
    pub log: String,
}

/// Executes a planned post-processing command inside a case.
pub trait PostRunner: Send + Sync {
    fn run(&self, case: &CaseLayout, plan: &ToolInvocationPlan) -> Result<PostRun, String>;
}

/// Runs the planned command as a real process.
#[derive(Debug, Clone, Default)]
pub struct SubprocessPost {
    pub timeout: Option<Duration>,
}

impl PostRunner for SubprocessPost {
    fn run(&self, case: &CaseLayout, plan: &ToolInvocationPlan) -> Result<PostRun, String> {
        let out = run_captured(&plan.argv, case.root(), self.timeout)
            .map_err(|e| format!("cannot start `{}`: {e}", plan.argv[0]))?;
        if out.timed_out {
            return Err(format!("`{}` timed out", plan.command()));
        }
        Ok(PostRun {
            exit_code: out.exit_code.unwrap_or(-1),
            log: out.output,
        })
    }
}

/// Stands in for OpenFOAM: writes each planned output with a plausible
/// header and zero data, or fails on demand.
#[derive(Debug, Clone, Default)]
pub struct SimulatedPost {
    pub fail_with: Option<String>,
}

impl SimulatedPost {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn failing(message: &str) -> Self {
        Self {
            fail_with: Some(message.to_string()),
        }
    }
}

fn placeholder_output(rel: &str) -> String {
    let name = rel.rsplit('/').next().unwrap_or(rel);
    let time = rel.split('/').rev().nth(1).unwrap_or("0");
    if name == "coefficient.dat" {
        return format!("# Time\tCd\tCs\tCl\tCmRoll\tCmPitch\tCmYaw\n{time}\t0\t0\t0\t0\t0\t0\n");
    }
    match name.rsplit_once('.').map(|(_, e)| e) {
        Some("raw") => format!("#  x  y  z  {}\n0 0 0 0\n", name.split('_').next().unwrap_or("value")),
        Some("vtk") => "# vtk DataFile Version 2.0\nsimulated\nASCII\nDATASET POLYDATA\nPOINTS 0 float\n".into(),
        Some(_) => "# simulated\n0\n".into(),
        None => {
            let file = FoamFile::new("volVectorField", name).with_root(
                FoamDict::new()
                    .with("dimensions", FoamNode::parse_value("[0 0 -1 0 0 0 0]").expect("literal"))
                    .with("internalField", FoamNode::parse_value("uniform (0 0 0)").expect("literal"))
                    .with("boundaryField", FoamNode::Dict(FoamDict::new())),
            );
            emit_dict(&file)
        }
    }
}

impl PostRunner for SimulatedPost {
    fn run(&self, case: &CaseLayout, plan: &ToolInvocationPlan) -> Result<PostRun, String> {
        if let Some(m) = &self.fail_with {
            return Ok(PostRun {
                exit_code: 1,
                log: format!("--> FOAM FATAL ERROR:\n{m}\n"),
            });
        }
        let mut log = format!("simulated: {}\n", plan.command());
        for rel in &plan.outputs {
            write_case_file(case, rel, &placeholder_output(rel)).map_err(|e| e.to_string())?;
            log.push_str(&format!("wrote {rel}\n"));
        }
        log.push_str("End\n");
        Ok(PostRun { exit_code: 0, log })
    }
}

/// One lock per case directory, so concurrent calls never interleave
/// their edits to the shared post-processing dictionary.
fn case_lock(root: &Path) -> Arc<Mutex<()>> {
    static LOCKS: OnceLock<Mutex<HashMap<PathBuf, Arc<Mutex<()>>>>> = OnceLock::new();
    let key = root.canonicalize().unwrap_or_else(|_| root.to_path_buf());
    LOCKS
        .get_or_init(Default::default)
        .lock()
        .unwrap_or_else(|p| p.into_inner())
        .entry(key)
        .or_default()
        .clone()
}

fn merge_function(case: &CaseLayout, id: &str, body: &FoamDict) -> Result<(), String> {
    let mut file = if case.exists(POST_DICT) {
        case.read(POST_DICT).map_err(|e| e.to_string())?
    } else {
        FoamFile::new("dictionary", "postProcessingDict")
    };
    if file.root.get_dict("functions").is_none() {
        file.root.insert("functions", FoamNode::Dict(FoamDict::new()));
    }
    let functions = file.root.get_dict_mut("functions").expect("inserted above");
    functions.insert(id, FoamNode::Dict(body.clone()));
    write_case_file(case, POST_DICT, &emit_dict(&file)).map_err(|e| e.to_string())
}

fn tail(text: &str, lines: usize) -> String {
    let all: Vec<&str> = text.lines().collect();
    all[all.len().saturating_sub(lines)..].join("\n")
}

/// Writes the plan's dictionary entry, runs the command and reports the
/// outcome as an MCP tool result. Failures come back as `isError` results
/// rather than Rust errors so the caller can relay them.
pub fn execute_plan(plan: &ToolInvocationPlan, case: &CaseLayout, runner: &dyn PostRunner) -> ToolCallResult {
    let lock = case_lock(case.root());
    let _guard = lock.lock().unwrap_or_else(|p| p.into_inner());
    if let (Some(id), Some(body)) = (&plan.func_id, &plan.body) {
        if let Err(e) = merge_function(case, id, body) {
            return ToolCallResult::failure(format!("cannot update {POST_DICT}: {e}"));
        }
    }
    let command = plan.command();
    let run = match runner.run(case, plan) {
        Ok(r) => r,
        Err(e) => return ToolCallResult::failure(format!("command: {command}\n{e}")),
    };
    if run.exit_code != 0 {
        return ToolCallResult::failure(format!(
            "command: {command}\nexit status: {}\n{}",
            run.exit_code,
            tail(&run.log, 20)
        ));
    }
    let (present, missing): (Vec<&String>, Vec<&String>) = plan.outputs.iter().partition(|o| case.exists(o));
    if present.is_empty() && !plan.outputs.is_empty() {
        return ToolCallResult::failure(format!(
            "command: {command}\nexit status: 0\nexpected outputs were not written: {}",
            plan.outputs.join(", ")
        ));
    }
    let mut text = format!("command: {command}\nexit status: 0\n");
    if let Some(id) = &plan.func_id {
        text.push_str(&format!("function object: {id} in {POST_DICT}\n"));
    }
    text.push_str("outputs:\n");
    for o in &present {
        text.push_str(&format!("  {o}\n"));
    }
    for o in &missing {
        text.push_str(&format!("  {o} (not written)\n"));
    }
    let mut content = vec![Content::text(text)];
    content.extend(present.iter().map(|o| Content::case_file(o)));
    ToolCallResult::ok(content)
}
