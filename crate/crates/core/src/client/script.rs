use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::Duration;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::case::STATE_DIR;
use crate::process::run_captured;

pub const SCRIPTS_DIR: &str = "scripts";

/// How produced files are sampled for the analyst prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleBudget {
    /// Leading lines taken from each file.
    pub lines: usize,
    /// Hard cap on the bytes quoted from any one file.
    pub bytes: usize,
}

impl Default for SampleBudget {
    fn default() -> Self {
        Self { lines: 5, bytes: 1024 }
    }
}

/// The first lines of a file, cut to the byte budget on a char boundary.
pub fn sample_header(path: &Path, budget: &SampleBudget) -> std::io::Result<String> {
    use std::io::Read;
    let mut buf = Vec::new();
    std::fs::File::open(path)?
        .take(budget.bytes as u64)
        .read_to_end(&mut buf)?;
    let text = String::from_utf8_lossy(&buf);
    let mut out = String::new();
    for line in text.split_inclusive('\n').take(budget.lines) {
        out.push_str(line);
    }
    let mut cut = out.len().min(budget.bytes);
    while !out.is_char_boundary(cut) {
        cut -= 1;
    }
    out.truncate(cut);
    Ok(out)
}

/// The body of the first fenced code block, preferring a `python` fence.
pub fn extract_code(reply: &str) -> Option<String> {
    static FENCE: OnceLock<Regex> = OnceLock::new();
    let re = FENCE.get_or_init(|| Regex::new(r"(?s)```([A-Za-z0-9_+-]*)[^\n]*\n(.*?)```").unwrap());
    let blocks: Vec<(String, String)> = re
        .captures_iter(reply)
        .map(|c| (c[1].to_ascii_lowercase(), c[2].to_string()))
        .collect();
    blocks
        .iter()
        .find(|(lang, _)| lang == "python" || lang == "py")
        .or_else(|| blocks.first())
        .map(|(_, body)| body.clone())
        .filter(|b| !b.trim().is_empty())
}

const DATA_EXT: [&str; 6] = ["raw", "dat", "csv", "xy", "vtk", "txt"];
const IMAGE_EXT: [&str; 5] = ["png", "pdf", "svg", "jpg", "jpeg"];

fn quoted_paths(code: &str) -> Vec<String> {
    static QUOTED: OnceLock<Regex> = OnceLock::new();
    let re = QUOTED.get_or_init(|| Regex::new(r#"["']([^"'\s]+\.[A-Za-z]+)["']"#).unwrap());
    re.captures_iter(code).map(|c| c[1].to_string()).collect()
}

fn ext(path: &str) -> String {
    path.rsplit_once('.').map(|(_, e)| e.to_ascii_lowercase()).unwrap_or_default()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScriptLint {
    /// Known data files the script reads.
    pub inputs: Vec<String>,
    /// Images the script writes.
    pub outputs: Vec<String>,
    /// Data paths that are not among the known files.
    pub undeclared: Vec<String>,
}

/// Sorts the file names quoted in a script into known inputs, outputs and
/// undeclared inputs.
pub fn lint_script(code: &str, known: &[String]) -> ScriptLint {
    let mut lint = ScriptLint::default();
    for k in known {
        if code.contains(k.as_str()) && !lint.inputs.contains(k) {
            lint.inputs.push(k.clone());
        }
    }
    for p in quoted_paths(code) {
        let e = ext(&p);
        if IMAGE_EXT.contains(&e.as_str()) {
            if !lint.outputs.contains(&p) {
                lint.outputs.push(p);
            }
        } else if DATA_EXT.contains(&e.as_str())
            && !known.iter().any(|k| *k == p || k.ends_with(&format!("/{p}")))
            && !lint.undeclared.contains(&p)
        {
            lint.undeclared.push(p);
        }
    }
    lint
}

/// Writes `code` to the next free `.copilot/scripts/script_<n>.py`.
pub fn save_script(case: &Path, code: &str) -> std::io::Result<PathBuf> {
    let dir = case.join(STATE_DIR).join(SCRIPTS_DIR);
    std::fs::create_dir_all(&dir)?;
    let mut n = 1;
    loop {
        let path = dir.join(format!("script_{n}.py"));
        match std::fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                use std::io::Write;
                f.write_all(code.as_bytes())?;
                return Ok(path);
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => n += 1,
            Err(e) => return Err(e),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptRun {
    pub exit_code: Option<i32>,
    pub timed_out: bool,
    pub output: String,
}

/// Runs `interpreter... <script>` from the case directory.
pub fn execute_script(
    interpreter: &[String],
    script: &Path,
    case: &Path,
    timeout: Option<Duration>,
) -> std::io::Result<ScriptRun> {
    let mut argv = interpreter.to_vec();
    argv.push(script.display().to_string());
    let out = run_captured(&argv, case, timeout)?;
    Ok(ScriptRun {
        exit_code: out.exit_code,
        timed_out: out.timed_out,
        output: out.output,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fences() {
        assert_eq!(extract_code("text\n```python\nprint(1)\n```\n").as_deref(), Some("print(1)\n"));
        assert_eq!(extract_code("```\nx = 1\n```\n```py\ny = 2\n```").as_deref(), Some("y = 2\n"));
        assert_eq!(extract_code("no code here"), None);
        assert_eq!(extract_code("```python\n\n```"), None);
    }

    #[test]
    fn header_budget() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("a.raw");
        std::fs::write(&f, "# x y z p\n1 2 3 4\n5 6 7 8\n").unwrap();
        let two = SampleBudget { lines: 2, bytes: 1000 };
        assert_eq!(sample_header(&f, &two).unwrap(), "# x y z p\n1 2 3 4\n");
        let tiny = SampleBudget { lines: 10, bytes: 4 };
        assert_eq!(sample_header(&f, &tiny).unwrap(), "# x ");
        std::fs::write(&f, "é".repeat(10)).unwrap();
        let odd = SampleBudget { lines: 1, bytes: 5 };
        assert_eq!(sample_header(&f, &odd).unwrap(), "éé");
    }

    #[test]
    fn lint() {
        let known = vec!["postProcessing/sample/500/p_walls.raw".to_string()];
        let code = "d = load('postProcessing/sample/500/p_walls.raw')\ne = load(\"other.dat\")\nsavefig('cp.png')\n";
        let l = lint_script(code, &known);
        assert_eq!(l.inputs, known);
        assert_eq!(l.outputs, ["cp.png"]);
        assert_eq!(l.undeclared, ["other.dat"]);
    }

    #[test]
    fn numbering_and_execution() {
        let dir = tempfile::tempdir().unwrap();
        let a = save_script(dir.path(), "print('a')\n").unwrap();
        let b = save_script(dir.path(), "print('b')\n").unwrap();
        assert!(a.ends_with(".copilot/scripts/script_1.py"));
        assert!(b.ends_with(".copilot/scripts/script_2.py"));
        let run = execute_script(&["cat".to_string()], &b, dir.path(), None).unwrap();
        assert_eq!(run.exit_code, Some(0));
        assert_eq!(run.output, "print('b')\n");
    }
}
