//! Prompt templates for the four agent roles. Defaults ship with the crate
//! under `prompts/`; a directory of same-named files overrides them.
//!
//! Placeholders are `{name}`; unknown placeholders are left as written.

use std::path::Path;

#[derive(Debug, Clone, PartialEq)]
pub struct Template {
    pub system: String,
    pub user: String,
}

impl Template {
    pub fn render_user(&self, vars: &[(&str, &str)]) -> String {
        render(&self.user, vars)
    }
}

/// Substitutes each `{key}` in one pass, so values containing braces are
/// never re-expanded.
pub fn render(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(i) = rest.find('{') {
        out.push_str(&rest[..i]);
        let after = &rest[i + 1..];
        let hit = after.find('}').and_then(|j| {
            let key = &after[..j];
            vars.iter().find(|(k, _)| *k == key).map(|(_, v)| (j, *v))
        });
        match hit {
            Some((j, v)) => {
                out.push_str(v);
                rest = &after[j + 1..];
            }
            None => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptTemplates {
    pub generator: Template,
    pub corrector: Template,
    pub selector: Template,
    pub analyst: Template,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        let t = |system: &str, user: &str| Template {
            system: system.to_string(),
            user: user.to_string(),
        };
        Self {
            generator: t(
                include_str!("../prompts/generator.system.txt"),
                include_str!("../prompts/generator.user.txt"),
            ),
            corrector: t(
                include_str!("../prompts/corrector.system.txt"),
                include_str!("../prompts/corrector.user.txt"),
            ),
            selector: t(
                include_str!("../prompts/selector.system.txt"),
                include_str!("../prompts/selector.user.txt"),
            ),
            analyst: t(
                include_str!("../prompts/analyst.system.txt"),
                include_str!("../prompts/analyst.user.txt"),
            ),
        }
    }
}

impl PromptTemplates {
    /// Defaults with `<role>.system.txt` / `<role>.user.txt` files from
    /// `dir` substituted where present.
    pub fn with_overrides(dir: &Path) -> std::io::Result<Self> {
        let mut t = Self::default();
        for (role, slot) in [
            ("generator", &mut t.generator),
            ("corrector", &mut t.corrector),
            ("selector", &mut t.selector),
            ("analyst", &mut t.analyst),
        ] {
            for (part, field) in [("system", &mut slot.system), ("user", &mut slot.user)] {
                let path = dir.join(format!("{role}.{part}.txt"));
                if path.exists() {
                    *field = std::fs::read_to_string(&path)?;
                }
            }
        }
        Ok(t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_pass_substitution() {
        assert_eq!(render("a {x} {y} {z}", &[("x", "{y}"), ("y", "2")]), "a {y} 2 {z}");
        assert_eq!(render("{", &[]), "{");
    }

    #[test]
    fn overrides_replace_only_present_files() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("selector.user.txt"), "custom {request}").unwrap();
        let t = PromptTemplates::with_overrides(dir.path()).unwrap();
        assert_eq!(t.selector.user, "custom {request}");
        assert_eq!(t.selector.system, PromptTemplates::default().selector.system);
    }
}
