//! OpenFOAM dictionary files: parsing, an ordered tree model, deterministic
//! emission and a schemes linter.
//!
//! The grammar covers the dictionaries found under `system/`, `constant/`
//! and `0/`. Directives and `#{ #}` code blocks are carried verbatim.
//! `parse_dict(&emit_dict(&f))` is structurally equal to `f` for any parsed
//! file.

mod emit;
mod lint;
mod node;
mod parse;

use thiserror::Error;

pub use emit::{emit_body, emit_dict};
pub use lint::{lint_schemes, LintFinding, Severity};
pub use node::{
    format_number, standard_header, DimensionSet, Dimensioned, Entry, FoamDict, FoamFile,
    FoamNode, Scalar,
};
pub use parse::parse_dict;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FoamError {
    #[error("syntax error at {line}:{col} near `{token}`: {message}")]
    Syntax {
        line: usize,
        col: usize,
        token: String,
        message: String,
    },
    #[error("unbalanced braces at {line}:{col}: {message}")]
    UnbalancedBraces {
        line: usize,
        col: usize,
        message: String,
    },
    #[error("duplicate keyword `{key}` at {line}:{col}")]
    DuplicateKeyword { key: String, line: usize, col: usize },
    #[error("not an fvSchemes dictionary: no scheme sub-dictionaries found")]
    NotSchemesFile,
}
