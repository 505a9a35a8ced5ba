use std::path::{Path, PathBuf};
use std::sync::Arc;

use foampilot::case::copy_case;
use foampilot::mcp::{serve_stream, McpSession, ToolHost};
use foampilot::tools::{Registry, SimulatedPost};

fn golden(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)
}

/// Replays `<name>.in.jsonl` against a fresh NACA 0012 case and compares
/// the output with `<name>.out.jsonl`. `UPDATE_GOLDEN=1` rewrites it.
fn replay(name: &str) {
    let input = std::fs::read_to_string(golden(&format!("{name}.in.jsonl"))).unwrap();
    let dir = tempfile::tempdir().unwrap();
    copy_case(&Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/cases/naca0012"), dir.path()).unwrap();
    let host = ToolHost::new(Registry::builtin(), dir.path(), Arc::new(SimulatedPost::new()));
    let mut session = McpSession::new(Arc::new(host));
    let mut out = Vec::new();
    serve_stream(&mut session, input.as_bytes(), &mut out).unwrap();
    let out = String::from_utf8(out).unwrap();
    let expected_path = golden(&format!("{name}.out.jsonl"));
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::write(&expected_path, &out).unwrap();
    }
    let expected = std::fs::read_to_string(&expected_path).unwrap();
    assert!(out == expected, "transcript differs from {}:\n{out}", expected_path.display());
}

#[test]
fn stdio_session_matches_golden() {
    replay("stdio_session");
}

#[test]
fn version_negotiation_matches_golden() {
    replay("stdio_versions");
}
