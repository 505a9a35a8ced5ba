use std::cell::RefCell;
use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::ToolError;

/// Which time directories a post-processing run covers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum TimeSelector {
    Latest,
    Range { start: String, end: String },
    All,
}

impl TimeSelector {
    /// Accepts `latest`, `all` (or empty), `<t>` and `<start>:<end>`.
    pub fn parse(text: &str) -> Result<Self, String> {
        let t = text.trim();
        match t.to_ascii_lowercase().as_str() {
            "" | "all" => return Ok(TimeSelector::All),
            "latest" | "latesttime" | "last" => return Ok(TimeSelector::Latest),
            _ => {}
        }
        let (start, end) = t.split_once(':').unwrap_or((t, t));
        let (start, end) = (start.trim(), end.trim());
        let a: f64 = start.parse().map_err(|_| format!("bad time `{start}`"))?;
        let b: f64 = end.parse().map_err(|_| format!("bad time `{end}`"))?;
        if a > b {
            return Err(format!("range start {a} is after end {b}"));
        }
        Ok(TimeSelector::Range {
            start: start.to_string(),
            end: end.to_string(),
        })
    }

    /// `postProcess` flags.
    pub fn flags(&self) -> Vec<String> {
        match self {
            TimeSelector::Latest => vec!["-latestTime".into()],
            TimeSelector::All => vec![],
            TimeSelector::Range { start, end } if start == end => vec!["-time".into(), start.clone()],
            TimeSelector::Range { start, end } => vec!["-time".into(), format!("{start}:{end}")],
        }
    }

    /// The time directory names this selector picks out of `times`
    /// (ascending `(value, name)` pairs).
    pub fn select(&self, times: &[(f64, String)]) -> Vec<String> {
        match self {
            TimeSelector::Latest => times.last().map(|(_, n)| vec![n.clone()]).unwrap_or_default(),
            TimeSelector::All => times.iter().map(|(_, n)| n.clone()).collect(),
            TimeSelector::Range { start, end } => {
                let a: f64 = start.parse().unwrap_or(f64::NEG_INFINITY);
                let b: f64 = end.parse().unwrap_or(f64::INFINITY);
                times
                    .iter()
                    .filter(|(v, _)| *v >= a - 1e-12 && *v <= b + 1e-12)
                    .map(|(_, n)| n.clone())
                    .collect()
            }
        }
    }
}

/// Typed access to validated tool arguments. Records which parameters a
/// planner read so the registry self-test can spot ignored ones.
#[derive(Debug)]
pub struct ArgReader<'a> {
    args: Option<&'a Map<String, Value>>,
    used: RefCell<BTreeSet<String>>,
}

impl<'a> ArgReader<'a> {
    pub fn new(args: &'a Value) -> Self {
        Self {
            args: args.as_object(),
            used: RefCell::new(BTreeSet::new()),
        }
    }

    pub fn consumed(&self) -> BTreeSet<String> {
        self.used.borrow().clone()
    }

    pub fn raw(&self, name: &str) -> Option<&'a Value> {
        self.used.borrow_mut().insert(name.to_string());
        self.args?.get(name)
    }

    pub fn str(&self, name: &str) -> Result<Option<String>, ToolError> {
        match self.raw(name) {
            None | Some(Value::Null) => Ok(None),
            Some(Value::String(s)) => Ok(Some(s.clone())),
            Some(_) => Err(ToolError::schema(name, "expected string")),
        }
    }

    pub fn req_str(&self, name: &str) -> Result<String, ToolError> {
        self.str(name)?
            .ok_or_else(|| ToolError::schema(name, "required parameter missing"))
    }

    pub fn num(&self, name: &str) -> Result<Option<f64>, ToolError> {
        match self.raw(name) {
            None | Some(Value::Null) => Ok(None),
            Some(Value::Number(n)) => Ok(n.as_f64()),
            Some(_) => Err(ToolError::schema(name, "expected number")),
        }
    }

    pub fn req_num(&self, name: &str) -> Result<f64, ToolError> {
        self.num(name)?
            .ok_or_else(|| ToolError::schema(name, "required parameter missing"))
    }

    pub fn bool(&self, name: &str) -> Result<Option<bool>, ToolError> {
        match self.raw(name) {
            None | Some(Value::Null) => Ok(None),
            Some(Value::Bool(b)) => Ok(Some(*b)),
            Some(_) => Err(ToolError::schema(name, "expected boolean")),
        }
    }

    /// A list of names. A string is split on whitespace and commas.
    pub fn strings(&self, name: &str) -> Result<Option<Vec<String>>, ToolError> {
        match self.raw(name) {
            None | Some(Value::Null) => Ok(None),
            Some(Value::String(s)) => Ok(Some(
                s.split(|c: char| c.is_whitespace() || c == ',')
                    .filter(|p| !p.is_empty())
                    .map(str::to_string)
                    .collect(),
            )),
            Some(Value::Array(items)) => items
                .iter()
                .map(|v| {
                    v.as_str()
                        .map(str::to_string)
                        .ok_or_else(|| ToolError::schema(name, "expected a list of strings"))
                })
                .collect::<Result<Vec<_>, _>>()
                .map(Some),
            Some(_) => Err(ToolError::schema(name, "expected a list of strings")),
        }
    }

    pub fn req_strings(&self, name: &str) -> Result<Vec<String>, ToolError> {
        self.strings(name)?
            .ok_or_else(|| ToolError::schema(name, "required parameter missing"))
    }

    pub fn vec3(&self, name: &str) -> Result<Option<[f64; 3]>, ToolError> {
        match self.raw(name) {
            None | Some(Value::Null) => Ok(None),
            Some(Value::Array(items)) if items.len() == 3 => {
                let mut out = [0.0; 3];
                for (o, v) in out.iter_mut().zip(items) {
                    *o = v
                        .as_f64()
                        .ok_or_else(|| ToolError::schema(name, "expected three numbers"))?;
                }
                Ok(Some(out))
            }
            Some(_) => Err(ToolError::schema(name, "expected three numbers")),
        }
    }

    pub fn req_vec3(&self, name: &str) -> Result<[f64; 3], ToolError> {
        self.vec3(name)?
            .ok_or_else(|| ToolError::schema(name, "required parameter missing"))
    }

    /// The `time` parameter; absent means all times.
    pub fn time(&self) -> Result<TimeSelector, ToolError> {
        match self.str("time")? {
            None => Ok(TimeSelector::All),
            Some(t) => TimeSelector::parse(&t).map_err(|m| ToolError::schema("time", m)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn time_selectors() {
        assert_eq!(TimeSelector::parse("latest").unwrap(), TimeSelector::Latest);
        assert_eq!(TimeSelector::parse("").unwrap(), TimeSelector::All);
        assert_eq!(TimeSelector::parse("100:500").unwrap().flags(), ["-time", "100:500"]);
        assert_eq!(TimeSelector::parse("500").unwrap().flags(), ["-time", "500"]);
        assert!(TimeSelector::parse("500:100").is_err());
        assert!(TimeSelector::All.flags().is_empty());
        let times = vec![(0.0, "0".to_string()), (250.0, "250".into()), (500.0, "500".into())];
        assert_eq!(TimeSelector::parse("100:500").unwrap().select(&times), ["250", "500"]);
        assert_eq!(TimeSelector::Latest.select(&times), ["500"]);
    }

    #[test]
    fn reader_tracks_reads() {
        let v = json!({"patches": "walls, inlet", "n": 3, "dir": [1, 0, 0]});
        let r = ArgReader::new(&v);
        assert_eq!(r.req_strings("patches").unwrap(), ["walls", "inlet"]);
        assert_eq!(r.req_vec3("dir").unwrap(), [1.0, 0.0, 0.0]);
        assert!(r.req_num("missing").is_err());
        assert_eq!(
            r.consumed().into_iter().collect::<Vec<_>>(),
            ["dir", "missing", "patches"]
        );
    }
}
