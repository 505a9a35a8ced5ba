//! Evaluation metrics: field accuracy `1 - ||c - r|| / ||r||`, coefficient
//! relative errors, trial aggregates and report rendering.

use std::collections::BTreeMap;
use std::fmt::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec;
use crate::foam::{FoamFile, FoamNode};
use crate::llm::TokenUsage;

/// Below this magnitude a reference coefficient is treated as zero.
pub const NEAR_ZERO_REFERENCE: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("length mismatch: candidate has {candidate} values, reference {reference}")]
    LengthMismatch { candidate: usize, reference: usize },
    #[error("component mismatch: candidate has {candidate}, reference {reference}")]
    ComponentMismatch { candidate: usize, reference: usize },
    #[error("reference field has zero norm")]
    ZeroReferenceNorm,
    #[error("non-finite value at index {0}")]
    NonFinite(usize),
    #[error("{len} values are not divisible into {components} components")]
    BadShape { len: usize, components: usize },
    #[error("line {line}: {message}")]
    BadColumns { line: usize, message: String },
    #[error("field file: {0}")]
    BadFieldFile(String),
}

/// Flat cell-ordered samples; vector components are interleaved.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldArray {
    pub name: String,
    pub components: usize,
    values: Vec<f64>,
}

impl FieldArray {
    pub fn new(name: impl Into<String>, components: usize, values: Vec<f64>) -> Result<Self, MetricsError> {
        if components == 0 || values.len() % components != 0 {
            return Err(MetricsError::BadShape {
                len: values.len(),
                components,
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(MetricsError::NonFinite(i));
        }
        Ok(Self {
            name: name.into(),
            components,
            values,
        })
    }

    pub fn scalar(name: impl Into<String>, values: Vec<f64>) -> Result<Self, MetricsError> {
        Self::new(name, 1, values)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Reads whitespace-separated numeric columns, skipping blank and
    /// `#`-prefixed lines. The trailing `components` columns of each row are
    /// the field values; leading columns (coordinates) are dropped.
    pub fn from_columns(name: &str, components: usize, text: &str) -> Result<Self, MetricsError> {
        let mut values = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let row: Vec<f64> = line
                .split_whitespace()
                .map(|t| {
                    t.parse::<f64>().map_err(|_| MetricsError::BadColumns {
                        line: i + 1,
                        message: format!("`{t}` is not a number"),
                    })
                })
                .collect::<Result<_, _>>()?;
            if row.len() < components {
                return Err(MetricsError::BadColumns {
                    line: i + 1,
                    message: format!("{} columns, need at least {components}", row.len()),
                });
            }
            values.extend_from_slice(&row[row.len() - components..]);
        }
        Self::new(name, components, values)
    }

    /// The `internalField` of an OpenFOAM field file. A uniform value is
    /// returned as a single sample.
    pub fn from_field_file(name: &str, file: &FoamFile) -> Result<Self, MetricsError> {
        let node = file
            .root
            .get("internalField")
            .ok_or_else(|| MetricsError::BadFieldFile("no internalField".into()))?;
        let FoamNode::Seq(items) = node else {
            return Err(MetricsError::BadFieldFile("internalField has no value".into()));
        };
        let kind = items.first().and_then(FoamNode::as_word);
        let data: Vec<&FoamNode> = match kind {
            Some("uniform") => items.get(1).into_iter().collect(),
            Some("nonuniform") => match items.iter().rev().find_map(FoamNode::as_list) {
                Some(list) => list.iter().collect(),
                None => items.iter().skip(1).filter(|n| n.as_f64().is_none()).collect(),
            },
            _ => return Err(MetricsError::BadFieldFile("expected uniform or nonuniform".into())),
        };
        let mut components = 1;
        let mut values = Vec::new();
        for item in data {
            match item {
                FoamNode::List(parts) => {
                    components = parts.len().max(1);
                    for p in parts {
                        values.push(p.as_f64().ok_or_else(|| {
                            MetricsError::BadFieldFile(format!("`{}` is not numeric", p.to_inline_string()))
                        })?);
                    }
                }
                other => values.push(other.as_f64().ok_or_else(|| {
                    MetricsError::BadFieldFile(format!("`{}` is not numeric", other.to_inline_string()))
                })?),
            }
        }
        Self::new(name, components, values)
    }
}

/// `1 - ||candidate - reference||_2 / ||reference||_2`, unweighted, with
/// vector components flattened. Can be negative for poor candidates.
pub fn field_accuracy(candidate: &FieldArray, reference: &FieldArray) -> Result<f64, MetricsError> {
    if candidate.len() != reference.len() {
        return Err(MetricsError::LengthMismatch {
            candidate: candidate.len(),
            reference: reference.len(),
        });
    }
    if candidate.components != reference.components {
        return Err(MetricsError::ComponentMismatch {
            candidate: candidate.components,
            reference: reference.components,
        });
    }
    let c = candidate.values();
    let r = reference.values();
    let ref_sq = exec::sum_by(r.len(), |i| r[i] * r[i]);
    if ref_sq == 0.0 {
        return Err(MetricsError::ZeroReferenceNorm);
    }
    let diff_sq = exec::sum_by(r.len(), |i| {
        let d = c[i] - r[i];
        d * d
    });
    Ok(1.0 - (diff_sq / ref_sq).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CoefficientError {
    /// `100 |c - r| / |r|`
    Relative { percent: f64 },
    /// Reference too close to zero for a relative error.
    NearZeroReference { deviation: f64 },
}

impl CoefficientError {
    pub fn percent(&self) -> Option<f64> {
        match self {
            CoefficientError::Relative { percent } => Some(*percent),
            CoefficientError::NearZeroReference { .. } => None,
        }
    }
}

pub fn coefficient_error(candidate: f64, reference: f64) -> CoefficientError {
    let deviation = (candidate - reference).abs();
    if reference.abs() < NEAR_ZERO_REFERENCE {
        CoefficientError::NearZeroReference { deviation }
    } else {
        CoefficientError::Relative {
            percent: 100.0 * deviation / reference.abs(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialOutcome {
    Converged,
    CompletedNotConverged,
    Crashed,
}

/// What aggregation needs from one workflow run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialSummary {
    pub outcome: TrialOutcome,
    pub iterations: u32,
    pub tokens: TokenUsage,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialAggregate {
    pub trials: usize,
    /// Percent of trials whose solver run finished.
    pub completion_rate: f64,
    /// Percent of trials that converged.
    pub success_rate: f64,
    pub mean_iterations: f64,
    /// Mean per-trial completion tokens.
    pub mean_tokens: f64,
    pub mean_prompt_tokens: f64,
}

/// Table-2 style aggregates. `None` for an empty set.
pub fn aggregate_trials(trials: &[TrialSummary]) -> Option<TrialAggregate> {
    if trials.is_empty() {
        return None;
    }
    let n = trials.len() as f64;
    let converged = trials.iter().filter(|t| t.outcome == TrialOutcome::Converged).count();
    let completed = trials
        .iter()
        .filter(|t| t.outcome != TrialOutcome::Crashed)
        .count();
    let mean = |f: &dyn Fn(&TrialSummary) -> f64| {
        let mut s = exec::CompensatedSum::default();
        trials.iter().for_each(|t| s.add(f(t)));
        s.value() / n
    };
    Some(TrialAggregate {
        trials: trials.len(),
        completion_rate: 100.0 * completed as f64 / n,
        success_rate: 100.0 * converged as f64 / n,
        mean_iterations: mean(&|t| t.iterations as f64),
        mean_tokens: mean(&|t| t.tokens.completion as f64),
        mean_prompt_tokens: mean(&|t| t.tokens.prompt as f64),
    })
}

/// One table row: a case or angle of attack with its aggregates and
/// accuracies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub label: String,
    pub aggregate: TrialAggregate,
    /// Field name to accuracy `1 - eps` (raw, unclamped).
    #[serde(default)]
    pub field_accuracy: BTreeMap<String, f64>,
    #[serde(default)]
    pub lift_error: Option<CoefficientError>,
    #[serde(default)]
    pub drag_error: Option<CoefficientError>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AverageRow {
    pub completion_rate: f64,
    pub success_rate: f64,
    pub mean_iterations: f64,
    pub mean_tokens: f64,
    pub field_accuracy: BTreeMap<String, f64>,
    pub lift_error_percent: Option<f64>,
    pub drag_error_percent: Option<f64>,
}

pub const REPORT_FORMAT: &str = "foampilot-eval-report/1";

/// Machine-readable record; the schema is `docs/report.schema.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub format: String,
    pub rows: Vec<ReportRow>,
    #[serde(default)]
    pub average: Option<AverageRow>,
}

fn mean_of(values: impl Iterator<Item = f64>) -> Option<f64> {
    let mut s = exec::CompensatedSum::default();
    let mut n = 0usize;
    for v in values {
        s.add(v);
        n += 1;
    }
    (n > 0).then(|| s.value() / n as f64)
}

impl EvalReport {
    pub fn new(rows: Vec<ReportRow>) -> Self {
        let average = (rows.len() >= 2).then(|| {
            let fields: std::collections::BTreeSet<&String> =
                rows.iter().flat_map(|r| r.field_accuracy.keys()).collect();
            AverageRow {
                completion_rate: mean_of(rows.iter().map(|r| r.aggregate.completion_rate)).unwrap_or(0.0),
                success_rate: mean_of(rows.iter().map(|r| r.aggregate.success_rate)).unwrap_or(0.0),
                mean_iterations: mean_of(rows.iter().map(|r| r.aggregate.mean_iterations)).unwrap_or(0.0),
                mean_tokens: mean_of(rows.iter().map(|r| r.aggregate.mean_tokens)).unwrap_or(0.0),
                field_accuracy: fields
                    .into_iter()
                    .filter_map(|f| {
                        mean_of(rows.iter().filter_map(|r| r.field_accuracy.get(f).copied()))
                            .map(|m| (f.clone(), m))
                    })
                    .collect(),
                lift_error_percent: mean_of(rows.iter().filter_map(|r| r.lift_error?.percent())),
                drag_error_percent: mean_of(rows.iter().filter_map(|r| r.drag_error?.percent())),
            }
        });
        Self {
            format: REPORT_FORMAT.into(),
            rows,
            average,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

fn pct_cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.2}")).unwrap_or_else(|| "-".into())
}

fn accuracy_cell(v: Option<f64>) -> String {
    v.map(|x| format!("{:.2}", (100.0 * x).clamp(0.0, 100.0)))
        .unwrap_or_else(|| "-".into())
}

fn coeff_cell(e: Option<CoefficientError>) -> String {
    match e {
        Some(CoefficientError::Relative { percent }) => format!("{percent:.2}"),
        Some(CoefficientError::NearZeroReference { deviation }) => format!("~0 ({deviation:.3})"),
        None => "-".into(),
    }
}

/// Fixed-width table (rates and accuracies in percent) plus the JSON record.
pub fn render_report(report: &EvalReport) -> (String, String) {
    let fields: Vec<String> = report
        .rows
        .iter()
        .flat_map(|r| r.field_accuracy.keys().cloned())
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut header = vec![
        "Case".to_string(),
        "C.R.".into(),
        "S.R.".into(),
        "Iters.".into(),
        "Tokens".into(),
    ];
    header.extend(fields.iter().map(|f| format!("{f} acc.")));
    header.extend(["Cl err.".to_string(), "Cd err.".to_string()]);

    let mut rows: Vec<Vec<String>> = Vec::new();
    for r in &report.rows {
        let a = &r.aggregate;
        let mut row = vec![
            r.label.clone(),
            format!("{:.0}%", a.completion_rate),
            format!("{:.0}%", a.success_rate),
            format!("{:.1}", a.mean_iterations),
            format!("{:.0}", a.mean_tokens),
        ];
        row.extend(fields.iter().map(|f| accuracy_cell(r.field_accuracy.get(f).copied())));
        row.push(coeff_cell(r.lift_error));
        row.push(coeff_cell(r.drag_error));
        rows.push(row);
    }
    if let Some(avg) = &report.average {
        let mut row = vec![
            "Avg.".to_string(),
            format!("{:.0}%", avg.completion_rate),
            format!("{:.0}%", avg.success_rate),
            format!("{:.1}", avg.mean_iterations),
            format!("{:.0}", avg.mean_tokens),
        ];
        row.extend(fields.iter().map(|f| accuracy_cell(avg.field_accuracy.get(f).copied())));
        row.push(pct_cell(avg.lift_error_percent));
        row.push(pct_cell(avg.drag_error_percent));
        rows.push(row);
    }

    let widths: Vec<usize> = (0..header.len())
        .map(|i| {
            rows.iter()
                .map(|r| r[i].chars().count())
                .chain([header[i].chars().count()])
                .max()
                .unwrap_or(0)
        })
        .collect();
    let line = |cells: &[String]| {
        let mut s = String::new();
        for (i, c) in cells.iter().enumerate() {
            if i == 0 {
                let _ = write!(s, "{c:<w$}", w = widths[i]);
            } else {
                let _ = write!(s, "  {c:>w$}", w = widths[i]);
            }
        }
        s.trim_end().to_string() + "\n"
    };
    let rule = "-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)) + "\n";
    let mut table = line(&header);
    table.push_str(&rule);
    let n = report.rows.len();
    for (i, row) in rows.iter().enumerate() {
        if i == n && report.average.is_some() {
            table.push_str(&rule);
        }
        table.push_str(&line(row));
    }
    (table, report.to_json())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn f(v: &[f64]) -> FieldArray {
        FieldArray::scalar("p", v.to_vec()).unwrap()
    }

    #[test]
    fn accuracy_oracles() {
        assert_eq!(field_accuracy(&f(&[1.0, 2.0]), &f(&[1.0, 2.0])).unwrap(), 1.0);
        assert!((field_accuracy(&f(&[0.0, 0.0]), &f(&[3.0, 4.0])).unwrap() - 0.0).abs() < 1e-15);
        let oracle = 1.0 - (0.1f64 * 0.1 + 0.1 * 0.1 + 0.2 * 0.2).sqrt() / 3.0;
        let got = field_accuracy(&f(&[1.1, 1.9, 2.2]), &f(&[1.0, 2.0, 2.0])).unwrap();
        assert!((got - oracle).abs() < 1e-9);
        assert!((got - 0.918350).abs() < 1e-6);
    }

    #[test]
    fn accuracy_errors() {
        assert!(matches!(
            field_accuracy(&f(&[1.0]), &f(&[1.0, 2.0])),
            Err(MetricsError::LengthMismatch { .. })
        ));
        assert_eq!(
            field_accuracy(&f(&[1.0]), &f(&[0.0])),
            Err(MetricsError::ZeroReferenceNorm)
        );
        assert!(FieldArray::new("U", 3, vec![1.0, 2.0]).is_err());
        assert!(FieldArray::scalar("p", vec![f64::NAN]).is_err());
    }

    #[test]
    fn coefficient_errors() {
        assert_eq!(coefficient_error(1.0, 1.0), CoefficientError::Relative { percent: 0.0 });
        let e = coefficient_error(1.1, 1.0).percent().unwrap();
        assert!((e - 10.0).abs() < 1e-12);
        assert!(matches!(
            coefficient_error(0.01, 1e-8),
            CoefficientError::NearZeroReference { .. }
        ));
    }

    fn trial(outcome: TrialOutcome, iterations: u32, completion: u64) -> TrialSummary {
        TrialSummary {
            outcome,
            iterations,
            tokens: TokenUsage {
                prompt: 0,
                completion,
            },
        }
    }

    #[test]
    fn aggregate_shapes() {
        let mut t = vec![trial(TrialOutcome::Converged, 5, 100)];
        t.extend((0..7).map(|_| trial(TrialOutcome::CompletedNotConverged, 10, 100)));
        t.extend((0..2).map(|_| trial(TrialOutcome::Crashed, 10, 100)));
        let a = aggregate_trials(&t).unwrap();
        assert_eq!((a.completion_rate, a.success_rate), (80.0, 10.0));

        let iters = [3, 5, 6, 5, 4, 6, 5, 4, 5, 5];
        let t: Vec<_> = iters.iter().map(|&i| trial(TrialOutcome::Converged, i, 0)).collect();
        let a = aggregate_trials(&t).unwrap();
        assert!((a.mean_iterations - 4.8).abs() < 1e-12);
        assert_eq!(a.success_rate, 100.0);
        assert!(aggregate_trials(&[]).is_none());
    }

    #[test]
    fn column_files() {
        let text = "# x y z p\n0 0 0 1.5\n1 0 0 2.5\n\n";
        let a = FieldArray::from_columns("p", 1, text).unwrap();
        assert_eq!(a.values(), &[1.5, 2.5]);
        let u = FieldArray::from_columns("U", 3, "1 2 3 4\n5 6 7 8\n").unwrap();
        assert_eq!(u.values(), &[2.0, 3.0, 4.0, 6.0, 7.0, 8.0]);
        assert!(FieldArray::from_columns("p", 1, "1 x\n").is_err());
    }

    #[test]
    fn field_file_values() {
        let file = crate::foam::parse_dict(
            "internalField nonuniform List<vector> 2((1 2 3) (4 5 6));",
        )
        .unwrap();
        let a = FieldArray::from_field_file("U", &file).unwrap();
        assert_eq!((a.components, a.values()), (3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0][..]));
        let file = crate::foam::parse_dict("internalField uniform 0.5;").unwrap();
        assert_eq!(FieldArray::from_field_file("p", &file).unwrap().values(), &[0.5]);
    }

    fn row(label: &str, sr: f64) -> ReportRow {
        ReportRow {
            label: label.into(),
            aggregate: TrialAggregate {
                trials: 10,
                completion_rate: 100.0,
                success_rate: sr,
                mean_iterations: 1.0,
                mean_tokens: 2000.0,
                mean_prompt_tokens: 0.0,
            },
            field_accuracy: [("p".to_string(), 0.95)].into(),
            lift_error: Some(coefficient_error(1.0, 0.9)),
            drag_error: None,
        }
    }

    #[test]
    fn single_row_table() {
        let (table, json) = render_report(&EvalReport::new(vec![row("0", 100.0)]));
        let lines: Vec<&str> = table.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[0].starts_with("Case"));
        assert!(!table.contains("Avg."));
        assert_eq!(EvalReport::from_json(&json).unwrap(), EvalReport::new(vec![row("0", 100.0)]));
    }

    #[test]
    fn average_row_with_two_rows() {
        let r = EvalReport::new(vec![row("0", 100.0), row("10", 50.0)]);
        assert_eq!(r.average.as_ref().unwrap().success_rate, 75.0);
        let (table, json) = render_report(&r);
        assert!(table.lines().last().unwrap().starts_with("Avg."));
        assert_eq!(EvalReport::from_json(&json).unwrap(), r);
    }
}
