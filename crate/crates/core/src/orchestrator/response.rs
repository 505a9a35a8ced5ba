use crate::case::{normalize_relative, CaseBundle};
use crate::foam::parse_dict;

const OPEN_PREFIX: &str = "===FILE:";
const OPEN_SUFFIX: &str = "===";
const CLOSE: &str = "===END===";

/// Why a generator or corrector reply could not become a bundle.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MalformedResponse {
    #[error("no ===FILE: blocks in the reply")]
    NoBlocks,
    #[error("line {line}: block for {path} is never closed with ===END===")]
    Unterminated { path: String, line: usize },
    #[error("line {line}: ===FILE: opened inside the block for {open}")]
    Nested { open: String, line: usize },
    #[error("line {line}: ===END=== without an open block")]
    StrayEnd { line: usize },
    #[error("line {line}: bad block path `{path}`: {reason}")]
    BadPath { path: String, line: usize, reason: String },
    #[error("{path} appears twice")]
    Duplicate { path: String },
    #[error("{path} does not parse: {message}")]
    Unparseable { path: String, message: String },
    #[error("missing required files: {}", .0.join(", "))]
    MissingFiles(Vec<String>),
}

fn opener(line: &str) -> Option<&str> {
    let t = line.trim();
    let rest = t.strip_prefix(OPEN_PREFIX)?;
    rest.strip_suffix(OPEN_SUFFIX).map(str::trim)
}

/// Splits a reply into `(path, body)` pairs. Text outside blocks is
/// ignored.
pub fn split_blocks(reply: &str) -> Result<Vec<(String, String)>, MalformedResponse> {
    let mut blocks: Vec<(String, String)> = Vec::new();
    let mut open: Option<(String, usize, Vec<&str>)> = None;
    for (i, line) in reply.lines().enumerate() {
        let n = i + 1;
        if let Some(path) = opener(line) {
            if let Some((p, _, _)) = &open {
                return Err(MalformedResponse::Nested { open: p.clone(), line: n });
            }
            let norm = normalize_relative(path).map_err(|e| MalformedResponse::BadPath {
                path: path.to_string(),
                line: n,
                reason: e.to_string(),
            })?;
            open = Some((norm, n, Vec::new()));
        } else if line.trim() == CLOSE {
            let (path, _, body) = open.take().ok_or(MalformedResponse::StrayEnd { line: n })?;
            if blocks.iter().any(|(p, _)| *p == path) {
                return Err(MalformedResponse::Duplicate { path });
            }
            let mut text = body.join("\n");
            text.push('\n');
            blocks.push((path, text));
        } else if let Some((_, _, body)) = open.as_mut() {
            body.push(line);
        }
    }
    if let Some((path, line, _)) = open {
        return Err(MalformedResponse::Unterminated { path, line });
    }
    if blocks.is_empty() {
        return Err(MalformedResponse::NoBlocks);
    }
    Ok(blocks)
}

/// Parses a reply into a bundle. Every file must parse as a dictionary.
pub fn parse_bundle(reply: &str, iteration: u32) -> Result<CaseBundle, MalformedResponse> {
    let mut bundle = CaseBundle::new(iteration);
    for (path, text) in split_blocks(reply)? {
        let file = parse_dict(&text).map_err(|e| MalformedResponse::Unparseable {
            path: path.clone(),
            message: e.to_string(),
        })?;
        bundle.insert(path, file);
    }
    Ok(bundle)
}

#[cfg(test)]
mod tests {
    use super::*;

    const GOOD: &str = "Here is the fix.\n===FILE: system/fvSolution===\nsolvers { p { solver GAMG; } }\n===END===\ntrailing words\n";

    #[test]
    fn blocks_and_prose() {
        let b = parse_bundle(GOOD, 2).unwrap();
        assert_eq!(b.paths().collect::<Vec<_>>(), ["system/fvSolution"]);
        assert_eq!(b.iteration, 2);
    }

    #[test]
    fn grammar_violations() {
        assert_eq!(split_blocks("just prose"), Err(MalformedResponse::NoBlocks));
        assert!(matches!(
            split_blocks("===FILE: a===\nx;\n"),
            Err(MalformedResponse::Unterminated { line: 1, .. })
        ));
        assert!(matches!(
            split_blocks("===FILE: a===\n===FILE: b===\n===END===\n"),
            Err(MalformedResponse::Nested { line: 2, .. })
        ));
        assert!(matches!(split_blocks("===END===\n"), Err(MalformedResponse::StrayEnd { line: 1 })));
        assert!(matches!(
            split_blocks("===FILE: ../etc/passwd===\n===END===\n"),
            Err(MalformedResponse::BadPath { .. })
        ));
        assert!(matches!(
            split_blocks("===FILE: a===\n===END===\n===FILE: ./a===\n===END===\n"),
            Err(MalformedResponse::Duplicate { .. })
        ));
    }

    #[test]
    fn unbalanced_braces_quote_parse_error() {
        let e = parse_bundle("===FILE: system/fvSchemes===\ndivSchemes {\n===END===\n", 1).unwrap_err();
        let MalformedResponse::Unparseable { path, message } = &e else { panic!("{e:?}") };
        assert_eq!(path, "system/fvSchemes");
        assert!(!message.is_empty());
        assert!(e.to_string().contains(message.as_str()));
    }
}
