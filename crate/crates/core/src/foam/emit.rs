use std::fmt::Write;

use super::node::{Entry, FoamDict, FoamFile, FoamNode};

const INDENT: &str = "    ";
const KEY_WIDTH: usize = 16;
/// Lists longer than this are written one item per line.
const INLINE_LIST_MAX: usize = 10;

const BANNER: &str = r"/*--------------------------------*- C++ -*----------------------------------*\
  =========                 |
  \\      /  F ield         | OpenFOAM: The Open Source CFD Toolbox
   \\    /   O peration     | Version:  v2406
    \\  /    A nd           | Website:  www.openfoam.com
     \\/     M anipulation  |
\*---------------------------------------------------------------------------*/
";
const SEPARATOR: &str =
    "// * * * * * * * * * * * * * * * * * * * * * * * * * * * * * * * * * * * * //\n";
const FOOTER: &str =
    "// ************************************************************************* //\n";

/// Serializes a file deterministically: banner, header, body, footer.
/// Four spaces per nesting level, one keyword per line, keywords padded to
/// 16 columns.
pub fn emit_dict(file: &FoamFile) -> String {
    let mut out = String::from(BANNER);
    if let Some(header) = &file.header {
        out.push_str("FoamFile\n{\n");
        write_entries(&mut out, header, 1, false);
        out.push_str("}\n");
    }
    out.push_str(SEPARATOR);
    out.push('\n');
    write_entries(&mut out, &file.root, 0, true);
    out.push('\n');
    out.push_str(FOOTER);
    out
}

/// Serializes only the body entries, without banner or header.
pub fn emit_body(dict: &FoamDict, level: usize) -> String {
    let mut out = String::new();
    write_entries(&mut out, dict, level, false);
    out
}

fn pad(level: usize) -> String {
    INDENT.repeat(level)
}

fn write_entries(out: &mut String, dict: &FoamDict, level: usize, top: bool) {
    let ind = pad(level);
    let n = dict.entries().len();
    for (i, entry) in dict.entries().iter().enumerate() {
        match entry {
            Entry::Directive(line) => {
                let _ = writeln!(out, "{ind}{line}");
            }
            Entry::Bare(value) => {
                let text = render(value, level);
                let term = if top && i + 1 == n { "" } else { ";" };
                match text.strip_prefix('\n') {
                    Some(block) => {
                        let _ = writeln!(out, "{block}{term}");
                    }
                    None => {
                        let _ = writeln!(out, "{ind}{text}{term}");
                    }
                }
            }
            Entry::Keyed { key, value } => match value {
                FoamNode::Dict(sub) => {
                    let _ = writeln!(out, "{ind}{key}\n{ind}{{");
                    write_entries(out, sub, level + 1, false);
                    let _ = writeln!(out, "{ind}}}");
                    if top && i + 1 < n {
                        out.push('\n');
                    }
                }
                FoamNode::Seq(items) if items.is_empty() => {
                    let _ = writeln!(out, "{ind}{key};");
                }
                other => {
                    let text = render(other, level);
                    if text.starts_with('\n') {
                        let _ = writeln!(out, "{ind}{key}{text};");
                    } else if key.chars().count() >= KEY_WIDTH {
                        let _ = writeln!(out, "{ind}{key} {text};");
                    } else {
                        let _ = writeln!(out, "{ind}{key:<KEY_WIDTH$}{text};");
                    }
                }
            },
        }
    }
}

fn is_block(node: &FoamNode) -> bool {
    match node {
        FoamNode::Dict(_) => true,
        FoamNode::List(items) => list_is_multiline(items),
        FoamNode::Seq(items) => items.iter().any(is_block),
        _ => false,
    }
}

fn list_is_multiline(items: &[FoamNode]) -> bool {
    items.len() > INLINE_LIST_MAX
        || items
            .iter()
            .any(|i| matches!(i, FoamNode::Dict(_) | FoamNode::Seq(_)) || is_block(i))
}

/// Renders a value at nesting `level`. Block values (dicts, long lists)
/// begin with a newline and leave the cursor at the end of their closing
/// line.
fn render(node: &FoamNode, level: usize) -> String {
    let ind = pad(level);
    match node {
        FoamNode::Scalar(s) => s.text().to_string(),
        FoamNode::Dimensions(d) => d.to_string(),
        FoamNode::Dimensioned(d) => match &d.name {
            Some(n) => format!("{n} {} {}", d.dimensions, d.value.text()),
            None => format!("{} {}", d.dimensions, d.value.text()),
        },
        FoamNode::Raw(r) => r.clone(),
        FoamNode::Dict(d) => {
            let mut s = format!("\n{ind}{{\n");
            write_entries(&mut s, d, level + 1, false);
            s.push_str(&ind);
            s.push('}');
            s
        }
        FoamNode::List(items) => {
            if list_is_multiline(items) {
                let inner = pad(level + 1);
                let mut s = format!("\n{ind}(\n");
                for item in items {
                    let text = render(item, level + 1);
                    match text.strip_prefix('\n') {
                        // Block renderers indent their own first line.
                        Some(block) => {
                            let _ = writeln!(s, "{block}");
                        }
                        None => {
                            let _ = writeln!(s, "{inner}{text}");
                        }
                    }
                }
                s.push_str(&ind);
                s.push(')');
                s
            } else {
                let parts: Vec<String> = items.iter().map(|i| render(i, level)).collect();
                format!("({})", parts.join(" "))
            }
        }
        FoamNode::Seq(items) => {
            let mut s = String::new();
            for (i, item) in items.iter().enumerate() {
                let text = render(item, level);
                if i > 0 && !text.starts_with('\n') {
                    s.push(' ');
                }
                s.push_str(&text);
            }
            s
        }
    }
}

/// One-line rendering used in messages; block structure is flattened.
pub(crate) fn render_inline(node: &FoamNode) -> String {
    match node {
        FoamNode::Dict(d) => {
            let parts: Vec<String> = d
                .iter()
                .map(|(k, v)| format!("{k} {};", render_inline(v)))
                .collect();
            format!("{{ {} }}", parts.join(" "))
        }
        FoamNode::List(items) => {
            let parts: Vec<String> = items.iter().map(render_inline).collect();
            format!("({})", parts.join(" "))
        }
        FoamNode::Seq(items) => items
            .iter()
            .map(render_inline)
            .collect::<Vec<_>>()
            .join(" "),
        other => render(other, 0),
    }
}

#[cfg(test)]
mod tests {
    use super::super::parse_dict;
    use super::*;

    #[test]
    fn empty_root_emits_banner_only() {
        let text = emit_dict(&FoamFile::default());
        assert!(text.starts_with("/*---"));
        assert!(text.ends_with(FOOTER));
        assert!(parse_dict(&text).unwrap().root.is_empty());
    }

    #[test]
    fn keyword_alignment() {
        let root = FoamDict::new()
            .with("type", FoamNode::word("forceCoeffs"))
            .with("libs", FoamNode::words(&["forces"]));
        let text = emit_body(&root, 0);
        assert!(text.contains("type            forceCoeffs;\n"));
        assert!(text.contains("libs            (forces);\n"));
    }

    #[test]
    fn nested_dicts_indent_four_spaces() {
        let root = FoamDict::new().with(
            "outer",
            FoamNode::Dict(FoamDict::new().with(
                "inner",
                FoamNode::Dict(FoamDict::new().with("x", FoamNode::number(1.0))),
            )),
        );
        let text = emit_body(&root, 0);
        assert_eq!(
            text,
            "outer\n{\n    inner\n    {\n        x               1;\n    }\n}\n"
        );
    }

    #[test]
    fn long_lists_go_multiline_and_reparse() {
        let items: Vec<FoamNode> = (0..12).map(|i| FoamNode::number(i as f64)).collect();
        let root = FoamDict::new().with("values", FoamNode::List(items));
        let file = FoamFile::default().with_root(root);
        let text = emit_dict(&file);
        assert!(text.contains("values\n(\n    0\n"));
        assert_eq!(parse_dict(&text).unwrap(), file);
    }

    #[test]
    fn boundary_layout() {
        let src = "3\n(\n    walls\n    {\n        type            wall;\n    }\n    inlet\n    {\n        type            patch;\n    }\n    outlet\n    {\n        type            patch;\n    }\n)\n";
        let f = parse_dict(src).unwrap();
        assert_eq!(emit_body(&f.root, 0).replace(";\n", "\n"), src.replace(";\n", "\n"));
        let again = parse_dict(&emit_dict(&f)).unwrap();
        assert_eq!(again, f);
    }

    #[test]
    fn emission_is_deterministic() {
        let f = parse_dict("a (1 2 3); b { c d; e [0 1 -1 0 0 0 0] 2; }").unwrap();
        assert_eq!(emit_dict(&f), emit_dict(&f.clone()));
    }
}
