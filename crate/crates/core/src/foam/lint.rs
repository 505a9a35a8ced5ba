use regex::Regex;
use serde::{Deserialize, Serialize};

use super::node::{FoamDict, FoamFile, FoamNode};
use super::FoamError;

const SCHEME_DICTS: [&str; 6] = [
    "ddtSchemes",
    "gradSchemes",
    "divSchemes",
    "laplacianSchemes",
    "interpolationSchemes",
    "snGradSchemes",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Info,
    Warning,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LintFinding {
    /// Slash-separated keyword path, e.g. `gradSchemes/grad(U)`.
    pub path: String,
    pub severity: Severity,
    pub code: String,
    pub message: String,
}

/// The scheme that applies to `term` in a schemes sub-dictionary: an exact
/// keyword, then a quoted regex keyword, then `default`.
fn effective_scheme<'a>(dict: &'a FoamDict, term: &str) -> Option<(String, &'a FoamNode)> {
    if let Some(v) = dict.get(term) {
        return Some((term.to_string(), v));
    }
    for (key, value) in dict.iter() {
        let Some(pattern) = key.strip_prefix('"').and_then(|k| k.strip_suffix('"')) else {
            continue;
        };
        if let Ok(re) = Regex::new(&format!("^(?:{pattern})$")) {
            if re.is_match(term) {
                return Some((key.to_string(), value));
            }
        }
    }
    dict.get("default").map(|v| ("default".to_string(), v))
}

fn mentions_field(file: &FoamFile, field: &str) -> bool {
    let re = Regex::new(&format!(r"[(,|]{}[),|]", regex::escape(field))).unwrap();
    SCHEME_DICTS
        .iter()
        .filter_map(|d| file.root.get_dict(d))
        .any(|d| d.keys().any(|k| re.is_match(k)))
}

/// Flags scheme choices known to be fragile on hard cases: one default
/// divergence scheme for every term, and unlimited gradients of velocity and
/// turbulence kinetic energy.
pub fn lint_schemes(file: &FoamFile) -> Result<Vec<LintFinding>, FoamError> {
    if !SCHEME_DICTS.iter().any(|d| file.root.get_dict(d).is_some()) {
        return Err(FoamError::NotSchemesFile);
    }
    let mut findings = Vec::new();

    if let Some(div) = file.root.get_dict("divSchemes") {
        let specific = div.keys().filter(|k| *k != "default").count();
        if let Some(default) = div.get("default") {
            let text = default.to_inline_string();
            if specific == 0 && text != "none" {
                findings.push(LintFinding {
                    path: "divSchemes/default".into(),
                    severity: Severity::Warning,
                    code: "single-default-div".into(),
                    message: format!(
                        "every divergence term falls back to `{text}`; no variable-specific schemes are given"
                    ),
                });
            }
        }
    }

    if let Some(grad) = file.root.get_dict("gradSchemes") {
        for field in ["U", "k"] {
            if field != "U" && !mentions_field(file, field) {
                continue;
            }
            let term = format!("grad({field})");
            let Some((key, scheme)) = effective_scheme(grad, &term) else {
                continue;
            };
            let text = scheme.to_inline_string();
            if !text.contains("Limited") {
                findings.push(LintFinding {
                    path: format!("gradSchemes/{key}"),
                    severity: Severity::Warning,
                    code: "unlimited-gradient".into(),
                    message: format!(
                        "{term} uses `{text}` without a limiter; consider `cellLimited Gauss linear 1`"
                    ),
                });
            }
        }
    }
    Ok(findings)
}
