//! Child processes with merged output and a wall-clock limit.

use std::io::{Read, Seek};
use std::path::Path;
use std::process::{Command, Stdio};
use std::time::Duration;

use wait_timeout::ChildExt;

#[derive(Debug, Clone, PartialEq)]
pub struct ProcessOutcome {
    /// `None` when the process was killed or ended by a signal.
    pub exit_code: Option<i32>,
    pub timed_out: bool,
    /// Interleaved stdout and stderr.
    pub output: String,
}

/// Runs `argv` in `cwd`. Output goes through an anonymous temp file, so a
/// chatty child cannot block on a full pipe.
pub fn run_captured(argv: &[String], cwd: &Path, timeout: Option<Duration>) -> std::io::Result<ProcessOutcome> {
    let (program, rest) = argv
        .split_first()
        .ok_or_else(|| std::io::Error::new(std::io::ErrorKind::InvalidInput, "empty command"))?;
    let mut sink = tempfile::tempfile()?;
    let mut child = Command::new(program)
        .args(rest)
        .current_dir(cwd)
        .stdin(Stdio::null())
        .stdout(Stdio::from(sink.try_clone()?))
        .stderr(Stdio::from(sink.try_clone()?))
        .spawn()?;
    let (status, timed_out) = match timeout {
        None => (Some(child.wait()?), false),
        Some(limit) => match child.wait_timeout(limit)? {
            Some(s) => (Some(s), false),
            None => {
                let _ = child.kill();
                let _ = child.wait();
                (None, true)
            }
        },
    };
    sink.seek(std::io::SeekFrom::Start(0))?;
    let mut bytes = Vec::new();
    sink.read_to_end(&mut bytes)?;
    Ok(ProcessOutcome {
        exit_code: status.and_then(|s| s.code()),
        timed_out,
        output: String::from_utf8_lossy(&bytes).into_owned(),
    })
}
