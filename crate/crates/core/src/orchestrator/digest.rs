use std::collections::BTreeMap;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

pub const DEFAULT_CONVERGENCE_THRESHOLD: f64 = 1e-4;
/// Consecutive residual increases at the end of a series that count as
/// divergence.
pub const DIVERGENCE_RUN: usize = 3;
const EXCERPT_BEFORE: usize = 10;
const EXCERPT_AFTER: usize = 30;
const EXCERPT_MAX: usize = 40;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunClass {
    CrashedEarly,
    CompletedNotConverged,
    Converged,
}

/// Initial residuals per solved field, in log order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Residuals(pub BTreeMap<String, Vec<f64>>);

impl Residuals {
    /// Collects `Solving for <field>, Initial residual = <r>` lines.
    pub fn from_log(log: &str) -> Self {
        static RE: OnceLock<Regex> = OnceLock::new();
        let re = RE.get_or_init(|| {
            Regex::new(r"Solving for (\w+), Initial residual = ([-+0-9.eE]+)").unwrap()
        });
        let mut out: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for c in re.captures_iter(log) {
            if let Ok(v) = c[2].parse::<f64>() {
                out.entry(c[1].to_string()).or_default().push(v);
            }
        }
        Residuals(out)
    }

    pub fn finals(&self) -> BTreeMap<String, f64> {
        self.0
            .iter()
            .filter_map(|(k, v)| v.last().map(|r| (k.clone(), *r)))
            .collect()
    }

    /// Fields whose last [`DIVERGENCE_RUN`] samples each grew.
    pub fn diverging(&self) -> Vec<String> {
        self.0
            .iter()
            .filter(|(_, v)| {
                v.len() > DIVERGENCE_RUN
                    && v[v.len() - DIVERGENCE_RUN - 1..].windows(2).all(|w| w[1] > w[0])
            })
            .map(|(k, _)| k.clone())
            .collect()
    }
}

/// Raw result of one solver run before classification.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRun {
    pub exit_code: Option<i32>,
    pub log: String,
    pub timed_out: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub exit_code: Option<i32>,
    pub timed_out: bool,
    pub class: RunClass,
    pub final_residuals: BTreeMap<String, f64>,
    #[serde(skip)]
    pub residuals: Residuals,
    #[serde(skip)]
    pub log: String,
}

fn fatal_line(lines: &[&str]) -> Option<usize> {
    lines
        .iter()
        .position(|l| l.contains("FOAM FATAL") || l.contains("Floating point exception") || l.contains("sigFpe"))
}

/// Crashed on timeout, nonzero exit or a fatal banner; converged when
/// every monitored field's final residual is below `threshold`.
pub fn classify(raw: RawRun, threshold: f64) -> RunOutcome {
    let residuals = Residuals::from_log(&raw.log);
    let finals = residuals.finals();
    let lines: Vec<&str> = raw.log.lines().collect();
    let crashed = raw.timed_out || raw.exit_code != Some(0) || fatal_line(&lines).is_some();
    let class = if crashed {
        RunClass::CrashedEarly
    } else if !finals.is_empty() && finals.values().all(|r| *r < threshold) {
        RunClass::Converged
    } else {
        RunClass::CompletedNotConverged
    };
    RunOutcome {
        exit_code: raw.exit_code,
        timed_out: raw.timed_out,
        class,
        final_residuals: finals,
        residuals,
        log: raw.log,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ErrorKind {
    KeywordMissing,
    BadValue,
    Divergence,
    SolverAbort,
    /// The reply could not be turned into case files.
    MalformedResponse,
    Unknown,
}

impl ErrorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ErrorKind::KeywordMissing => "keyword-missing",
            ErrorKind::BadValue => "bad-value",
            ErrorKind::Divergence => "divergence",
            ErrorKind::SolverAbort => "solver-abort",
            ErrorKind::MalformedResponse => "malformed-response",
            ErrorKind::Unknown => "unknown",
        }
    }
}

/// What the corrector is told about a failure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorDigest {
    pub kind: ErrorKind,
    pub summary: String,
    /// At most 40 consecutive log lines.
    pub excerpt: String,
    /// Zero-based index of the excerpt's first line in the log.
    pub excerpt_start: usize,
    pub file: Option<String>,
}

impl ErrorDigest {
    pub fn malformed(message: &str, file: Option<String>) -> Self {
        Self {
            kind: ErrorKind::MalformedResponse,
            summary: format!("reply rejected: {message}"),
            excerpt: String::new(),
            excerpt_start: 0,
            file,
        }
    }

    /// Text block placed in prompts.
    pub fn render(&self) -> String {
        let mut s = format!("[{}] {}\n", self.kind.as_str(), self.summary);
        if let Some(f) = &self.file {
            s.push_str(&format!("implicated file: {f}\n"));
        }
        if !self.excerpt.is_empty() {
            s.push_str("log excerpt:\n");
            s.push_str(&self.excerpt);
            if !self.excerpt.ends_with('\n') {
                s.push('\n');
            }
        }
        s
    }
}

fn re(cell: &'static OnceLock<Regex>, pattern: &str) -> &'static Regex {
    cell.get_or_init(|| Regex::new(pattern).unwrap())
}

/// Case-relative file mentioned in a log line, with any sub-dictionary
/// suffix (`fvSchemes.divSchemes`) removed.
fn case_file_in(text: &str) -> Option<String> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let r = re(&RE, r"(?:^|[/\s\x22'])((?:system|constant|0(?:\.0+)?)/[A-Za-z][A-Za-z0-9_]*)");
    r.captures_iter(text).last().map(|c| c[1].to_string())
}

fn file_for_keyword(keyword: &str) -> Option<&'static str> {
    const SCHEMES: [&str; 7] = ["div(", "grad(", "laplacian(", "interpolate(", "snGrad(", "ddt", "wallDist"];
    const SOLUTION: [&str; 8] = [
        "solver",
        "tolerance",
        "relTol",
        "SIMPLE",
        "PIMPLE",
        "relaxationFactors",
        "nNonOrthogonalCorrectors",
        "residualControl",
    ];
    const CONTROL: [&str; 6] = ["application", "endTime", "deltaT", "writeControl", "writeInterval", "startFrom"];
    if SCHEMES.iter().any(|k| keyword.starts_with(k)) || keyword.ends_with("Schemes") {
        Some("system/fvSchemes")
    } else if SOLUTION.iter().any(|k| keyword.contains(k)) {
        Some("system/fvSolution")
    } else if CONTROL.contains(&keyword) {
        Some("system/controlDict")
    } else {
        None
    }
}

fn excerpt(lines: &[&str], marker: Option<usize>) -> (usize, String) {
    let (start, end) = match marker {
        Some(m) => {
            let start = m.saturating_sub(EXCERPT_BEFORE);
            (start, (m + EXCERPT_AFTER).min(lines.len()).min(start + EXCERPT_MAX))
        }
        None => (lines.len().saturating_sub(EXCERPT_MAX), lines.len()),
    };
    (start, lines[start..end].join("\n"))
}

/// Reads a failed or unconverged run's log and says what went wrong.
pub fn digest(outcome: &RunOutcome, threshold: f64) -> ErrorDigest {
    static KEYWORD: OnceLock<Regex> = OnceLock::new();
    static ENTRY: OnceLock<Regex> = OnceLock::new();
    static PATCH_FIELD: OnceLock<Regex> = OnceLock::new();
    static BAD_VALUE: OnceLock<Regex> = OnceLock::new();

    let lines: Vec<&str> = outcome.log.lines().collect();
    let marker = fatal_line(&lines);
    let (excerpt_start, excerpt) = excerpt(&lines, marker);
    let after_marker = marker.map(|m| lines[m..].join("\n")).unwrap_or_default();
    let mentioned = case_file_in(&after_marker);
    let diverging = outcome.residuals.diverging();

    let kw = re(&KEYWORD, r"keyword (\S+) is undefined");
    let entry = re(&ENTRY, r"[Ee]ntry '([^']+)' not found");
    let patch_field = re(&PATCH_FIELD, r"Cannot find patchField entry for (\S+)");
    let bad = re(
        &BAD_VALUE,
        r"(Unknown \w+ type \S+|Unknown discretisation scheme \S+|[Uu]nknown \w+ \S+|Expected a \S+|wrong token type|[Bb]ad input|not a valid|Valid \w+ (are|types are))",
    );

    let (kind, summary, file) = if let Some(c) = kw.captures(&after_marker).or_else(|| entry.captures(&after_marker)) {
        let k = c[1].to_string();
        let file = mentioned.clone().or_else(|| file_for_keyword(&k).map(String::from));
        let summary = match &file {
            Some(f) => format!("keyword {k} undefined in {f}"),
            None => format!("keyword {k} undefined"),
        };
        (ErrorKind::KeywordMissing, summary, file)
    } else if let Some(c) = patch_field.captures(&after_marker) {
        let patch = c[1].trim_matches(|ch| ch == '"' || ch == '\'').to_string();
        let file = mentioned.clone();
        let summary = match &file {
            Some(f) => format!("boundary condition for patch {patch} missing in {f}"),
            None => format!("boundary condition for patch {patch} missing"),
        };
        (ErrorKind::KeywordMissing, summary, file)
    } else if after_marker.contains("Floating point exception") || after_marker.contains("sigFpe") {
        let file = Some("system/fvSolution".to_string());
        (ErrorKind::Divergence, "floating point exception during the solve".to_string(), file)
    } else if !diverging.is_empty() {
        (
            ErrorKind::Divergence,
            format!("residuals growing for {}", diverging.join(", ")),
            Some("system/fvSolution".to_string()),
        )
    } else if let Some(m) = bad.find(&after_marker) {
        let file = mentioned.clone();
        let summary = match &file {
            Some(f) => format!("bad value in {f}: {}", m.as_str()),
            None => format!("bad value: {}", m.as_str()),
        };
        (ErrorKind::BadValue, summary, file)
    } else if marker.is_some() || outcome.class == RunClass::CrashedEarly {
        let first = marker
            .and_then(|m| lines[m + 1..].iter().find(|l| !l.trim().is_empty()))
            .map(|l| l.trim().to_string());
        let summary = if outcome.timed_out {
            "solver exceeded its time limit".to_string()
        } else {
            match (first, outcome.exit_code) {
                (Some(l), _) => format!("solver aborted: {l}"),
                (None, Some(code)) => format!("solver exited with status {code}"),
                (None, None) => "solver was killed".to_string(),
            }
        };
        (ErrorKind::SolverAbort, summary, mentioned.clone())
    } else {
        let unconverged: Vec<String> = outcome
            .final_residuals
            .iter()
            .filter(|(_, r)| **r >= threshold)
            .map(|(f, r)| format!("{f} {r:e}"))
            .collect();
        let summary = if outcome.final_residuals.is_empty() {
            "run finished without reporting residuals".to_string()
        } else {
            format!("residuals stayed above {threshold:e}: {}", unconverged.join(", "))
        };
        (ErrorKind::Unknown, summary, Some("system/fvSolution".to_string()))
    };
    ErrorDigest {
        kind,
        summary,
        excerpt,
        excerpt_start,
        file,
    }
}
