use std::io::{self, BufRead, Write};

use serde_json::Value;

use super::{wants_script, HistoryEntry, PostSession};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ReplStats {
    pub turns: usize,
    pub failures: usize,
}

fn print_entry(out: &mut dyn Write, e: &HistoryEntry) -> io::Result<()> {
    writeln!(out, "{}", e.summary)?;
    for p in &e.paths {
        writeln!(out, "  {p}")?;
    }
    for w in &e.warnings {
        writeln!(out, "warning: {w}")?;
    }
    Ok(())
}

/// Line-oriented session: one request per line, `:tools`, `:history` and
/// `:quit` as local commands. With `confirm`, each chosen tool waits for a
/// `y` line before running. Ends at `:quit` or end of input.
pub fn run_repl(
    session: &mut PostSession,
    input: &mut dyn BufRead,
    out: &mut dyn Write,
    confirm: bool,
    prompt: bool,
) -> io::Result<ReplStats> {
    let mut stats = ReplStats::default();
    let mut line = String::new();
    loop {
        if prompt {
            write!(out, "> ")?;
            out.flush()?;
        }
        line.clear();
        if input.read_line(&mut line)? == 0 {
            break;
        }
        let request = line.trim().to_string();
        match request.as_str() {
            "" => continue,
            ":quit" | ":q" => break,
            ":tools" => {
                for t in session.tools() {
                    writeln!(out, "{}: {}", t.name, t.description)?;
                }
                continue;
            }
            ":history" => {
                for (i, e) in session.context().history().iter().enumerate() {
                    let what = e.tool.as_deref().unwrap_or("script");
                    let status = if e.ok { "ok" } else { "failed" };
                    writeln!(out, "{}. [{status}] {what}: {}", i + 1, e.request)?;
                }
                continue;
            }
            _ => {}
        }
        stats.turns += 1;
        let result = if wants_script(&request) {
            session.analyse(&request).map(|(e, o)| {
                let _ = writeln!(out, "script {}:\n{}", o.script, o.code.trim_end());
                if let Some(run) = &o.run {
                    let _ = write!(out, "{}", run.output);
                }
                e
            })
        } else {
            match session.select(&request) {
                Ok(choice) => {
                    writeln!(out, "tool: {}", choice.tool)?;
                    writeln!(out, "arguments: {}", Value::Object(choice.arguments.clone()))?;
                    let go = if confirm {
                        write!(out, "run it? [y/N] ")?;
                        out.flush()?;
                        let mut answer = String::new();
                        input.read_line(&mut answer)?;
                        matches!(answer.trim(), "y" | "Y" | "yes")
                    } else {
                        true
                    };
                    if go {
                        session.invoke(&request, &choice)
                    } else {
                        writeln!(out, "skipped")?;
                        continue;
                    }
                }
                Err(e) => Err(e),
            }
        };
        match result {
            Ok(e) => print_entry(out, &e)?,
            Err(e) => {
                stats.failures += 1;
                writeln!(out, "error: {e}")?;
            }
        }
    }
    Ok(stats)
}
