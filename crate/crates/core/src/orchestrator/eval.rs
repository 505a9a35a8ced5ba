//! Repeated independent trials of the workflow, folded into one report row.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use super::{Agents, SolverRunner, Workflow, WorkflowLimits, WorkflowReport};
use crate::case::{copy_case, CaseLayout};
use crate::events::EventBus;
use crate::exec;
use crate::foam::parse_dict;
use crate::metrics::{aggregate_trials, coefficient_error, field_accuracy, FieldArray, ReportRow};
use crate::prompts::PromptTemplates;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("cannot prepare trial {trial}: {message}")]
    Setup { trial: usize, message: String },
    #[error("reference field {name}: {message}")]
    Reference { name: String, message: String },
    #[error("no trials requested")]
    NoTrials,
}

/// Ground truth for accuracy columns.
#[derive(Debug, Clone, Default)]
pub struct Reference {
    pub fields: BTreeMap<String, FieldArray>,
    pub lift: Option<f64>,
    pub drag: Option<f64>,
}

impl Reference {
    /// Reads a field file (`volScalarField` or `volVectorField` with a
    /// nonuniform internal field) as the reference for `name`.
    pub fn load_field(&mut self, name: &str, path: &Path) -> Result<(), EvalError> {
        let err = |message: String| EvalError::Reference {
            name: name.to_string(),
            message,
        };
        let text = std::fs::read_to_string(path).map_err(|e| err(format!("{}: {e}", path.display())))?;
        let file = parse_dict(&text).map_err(|e| err(e.to_string()))?;
        let array = FieldArray::from_field_file(name, &file).map_err(|e| err(e.to_string()))?;
        self.fields.insert(name.to_string(), array);
        Ok(())
    }
}

/// What one trial needs besides the shared settings.
pub struct TrialSetup {
    pub agents: Agents,
    pub runner: Arc<dyn SolverRunner>,
}

pub struct EvalPlan<'a> {
    pub label: String,
    pub prompt: String,
    pub case: PathBuf,
    /// Trial `i` runs in `<work>/trial-<i>`.
    pub work: PathBuf,
    pub limits: WorkflowLimits,
    pub templates: Arc<PromptTemplates>,
    pub reference: &'a Reference,
    pub events: Option<EventBus>,
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub row: ReportRow,
    pub reports: Vec<WorkflowReport>,
    pub warnings: Vec<String>,
}

/// Force coefficients from the newest `coefficient.dat` under
/// `postProcessing/forceCoeffs*`, keyed by column name.
pub fn read_coefficients(case: &Path) -> Option<BTreeMap<String, f64>> {
    let post = case.join("postProcessing");
    let mut newest: Option<(f64, PathBuf)> = None;
    for dir in std::fs::read_dir(&post).ok()?.flatten() {
        if !dir.file_name().to_string_lossy().starts_with("forceCoeffs") {
            continue;
        }
        for t in std::fs::read_dir(dir.path()).ok()?.flatten() {
            let Ok(time) = t.file_name().to_string_lossy().parse::<f64>() else { continue };
            let file = t.path().join("coefficient.dat");
            if file.is_file() && newest.as_ref().map_or(true, |(n, _)| time > *n) {
                newest = Some((time, file));
            }
        }
    }
    let text = std::fs::read_to_string(newest?.1).ok()?;
    let mut header: Vec<String> = Vec::new();
    let mut last: Option<Vec<f64>> = None;
    for line in text.lines() {
        let line = line.trim();
        if let Some(h) = line.strip_prefix('#') {
            let cols: Vec<String> = h.split_whitespace().map(String::from).collect();
            if cols.first().map(String::as_str) == Some("Time") {
                header = cols;
            }
        } else if !line.is_empty() {
            last = line.split_whitespace().map(|v| v.parse().ok()).collect();
        }
    }
    let row = last?;
    Some(header.into_iter().zip(row).collect())
}

fn mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut s = exec::CompensatedSum::default();
    values.iter().for_each(|v| s.add(*v));
    Some(s.value() / values.len() as f64)
}

struct TrialResult {
    report: WorkflowReport,
    accuracy: BTreeMap<String, f64>,
    coefficients: Option<BTreeMap<String, f64>>,
    warnings: Vec<String>,
}

fn score(dir: &Path, report: &WorkflowReport, reference: &Reference) -> (BTreeMap<String, f64>, Vec<String>) {
    let mut accuracy = BTreeMap::new();
    let mut warnings = Vec::new();
    if reference.fields.is_empty() || !report.converged() {
        return (accuracy, warnings);
    }
    let case = match CaseLayout::open(dir) {
        Ok(c) => c,
        Err(e) => {
            warnings.push(e.to_string());
            return (accuracy, warnings);
        }
    };
    let Some(time) = case.latest_time() else {
        warnings.push(format!("{}: no time directories", dir.display()));
        return (accuracy, warnings);
    };
    for (name, want) in &reference.fields {
        let got = case
            .read(&format!("{time}/{name}"))
            .map_err(|e| e.to_string())
            .and_then(|f| FieldArray::from_field_file(name, &f).map_err(|e| e.to_string()))
            .and_then(|c| field_accuracy(&c, want).map_err(|e| e.to_string()));
        match got {
            Ok(a) => {
                accuracy.insert(name.clone(), a);
            }
            Err(e) => warnings.push(format!("{}: field {name} at {time}: {e}", dir.display())),
        }
    }
    (accuracy, warnings)
}

/// Runs `limits.trials` independent workflows on fresh copies of the case.
/// `setup(i)` supplies trial `i`'s agents and runner.
pub fn run_trials<F>(plan: &EvalPlan, setup: F) -> Result<Evaluation, EvalError>
where
    F: Fn(usize) -> Result<TrialSetup, String> + Sync + Send,
{
    let n = plan.limits.trials;
    if n == 0 {
        return Err(EvalError::NoTrials);
    }
    let mut prepared = Vec::with_capacity(n);
    for i in 0..n {
        let dir = plan.work.join(format!("trial-{i}"));
        let fail = |message: String| EvalError::Setup { trial: i, message };
        if dir.exists() {
            std::fs::remove_dir_all(&dir).map_err(|e| fail(format!("{}: {e}", dir.display())))?;
        }
        copy_case(&plan.case, &dir).map_err(|e| fail(e.to_string()))?;
        let s = setup(i).map_err(fail)?;
        prepared.push((dir, s));
    }
    let results: Vec<TrialResult> = exec::map(prepared, |(dir, s)| {
        let workflow = Workflow {
            agents: s.agents,
            runner: s.runner,
            limits: plan.limits,
            templates: plan.templates.clone(),
            events: plan.events.clone(),
        };
        let report = workflow.run(&plan.prompt, &dir);
        let (accuracy, warnings) = score(&dir, &report, plan.reference);
        let coefficients = report.converged().then(|| read_coefficients(&dir)).flatten();
        TrialResult {
            report,
            accuracy,
            coefficients,
            warnings,
        }
    });

    let summaries: Vec<_> = results.iter().map(|r| r.report.summary()).collect();
    let aggregate = aggregate_trials(&summaries).expect("at least one trial");
    let mut field_accuracy = BTreeMap::new();
    for name in plan.reference.fields.keys() {
        let values: Vec<f64> = results.iter().filter_map(|r| r.accuracy.get(name).copied()).collect();
        if let Some(m) = mean(&values) {
            field_accuracy.insert(name.clone(), m);
        }
    }
    let coefficient = |key: &str| {
        let values: Vec<f64> = results
            .iter()
            .filter_map(|r| r.coefficients.as_ref()?.get(key).copied())
            .collect();
        mean(&values)
    };
    let lift_error = plan.reference.lift.zip(coefficient("Cl")).map(|(r, c)| coefficient_error(c, r));
    let drag_error = plan.reference.drag.zip(coefficient("Cd")).map(|(r, c)| coefficient_error(c, r));
    let mut warnings: Vec<String> = results.iter().flat_map(|r| r.warnings.iter().cloned()).collect();
    if plan.reference.lift.is_some() && lift_error.is_none() {
        warnings.push("no converged trial produced force coefficients".into());
    }
    Ok(Evaluation {
        row: ReportRow {
            label: plan.label.clone(),
            aggregate,
            field_accuracy,
            lift_error,
            drag_error,
        },
        reports: results.into_iter().map(|r| r.report).collect(),
        warnings,
    })
}
