//! Self-describing post-processing tools. Each tool pairs a descriptor
//! (name, description, typed parameters) with a planner that turns
//! arguments into a function-object dictionary and a `postProcess`
//! command line.
//!
//! Descriptors for the shipped tools live in `tools/*.json` next to this
//! crate's manifest; more can be loaded from a plugin directory of files in
//! the same format.

mod args;
mod plan;
mod run;

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::Arc;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::case::{CaseError, CaseLayout};

pub use args::{ArgReader, TimeSelector};
pub use plan::{
    allocate_func_id, plan_force_coeffs, plan_sampled_patch, plan_stream_line, plan_vorticity,
    ForceCoeffsArgs, PlannerSpec, StreamLineArgs, ToolInvocationPlan, POST_DICT,
};
pub use run::{execute_plan, PostRun, PostRunner, SimulatedPost, SubprocessPost};

#[derive(Debug, Error)]
pub enum ToolError {
    #[error("unknown tool `{0}`")]
    UnknownTool(String),
    #[error("tool `{0}` is already registered")]
    DuplicateToolName(String),
    #[error("invalid argument `{param}`: {message}")]
    SchemaViolation { param: String, message: String },
    #[error("invalid descriptor {name}: {message}")]
    InvalidDescriptor { name: String, message: String },
    #[error("unknown patch `{0}`")]
    UnknownPatch(String),
    #[error("field `{0}` not found at the selected time")]
    UnknownField(String),
    #[error("lift and drag directions are not orthogonal (dot product {dot})")]
    NonOrthogonalDirections { dot: f64 },
    #[error("`{param}` must be a unit vector (norm {norm})")]
    NonUnitDirection { param: String, norm: f64 },
    #[error("seed line start and end coincide")]
    DegenerateSeedLine,
    #[error("case has no time directories")]
    NoTimeDirectories,
    #[error(transparent)]
    Case(#[from] CaseError),
    #[error("{path}: {message}")]
    Plugin { path: String, message: String },
}

impl ToolError {
    pub(crate) fn schema(param: &str, message: impl Into<String>) -> Self {
        ToolError::SchemaViolation {
            param: param.to_string(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamType {
    String,
    Number,
    Boolean,
    Array,
}

impl ParamType {
    fn name(self) -> &'static str {
        match self {
            ParamType::String => "string",
            ParamType::Number => "number",
            ParamType::Boolean => "boolean",
            ParamType::Array => "array",
        }
    }

    fn accepts(self, v: &Value) -> bool {
        match self {
            ParamType::String => v.is_string(),
            ParamType::Number => v.is_number(),
            ParamType::Boolean => v.is_boolean(),
            ParamType::Array => v.is_array(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    #[serde(rename = "type")]
    pub kind: ParamType,
    pub description: String,
    #[serde(default)]
    pub required: bool,
    /// Element type of an array parameter.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub items: Option<ParamType>,
    /// Exact element count of an array parameter.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub length: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub example: Option<Value>,
}

impl ParamSpec {
    fn json_schema(&self) -> Value {
        let mut s = json!({"type": self.kind.name(), "description": self.description});
        if let Some(items) = self.items {
            s["items"] = json!({"type": items.name()});
        }
        if let Some(n) = self.length {
            s["minItems"] = json!(n);
            s["maxItems"] = json!(n);
        }
        s
    }

    fn check(&self, v: &Value) -> Result<(), ToolError> {
        if !self.kind.accepts(v) {
            return Err(ToolError::schema(&self.name, format!("expected {}", self.kind.name())));
        }
        if let Value::Array(items) = v {
            if let Some(n) = self.length {
                if items.len() != n {
                    return Err(ToolError::schema(
                        &self.name,
                        format!("expected {n} items, got {}", items.len()),
                    ));
                }
            }
            if let Some(t) = self.items {
                if let Some(i) = items.iter().position(|x| !t.accepts(x)) {
                    return Err(ToolError::schema(
                        &self.name,
                        format!("item {i} is not a {}", t.name()),
                    ));
                }
            }
        }
        Ok(())
    }

    /// An argument value for self-tests: the example, or a type default.
    pub fn synthetic_value(&self) -> Value {
        if let Some(e) = &self.example {
            return e.clone();
        }
        match (self.kind, self.items) {
            (ParamType::String, _) => json!("p"),
            (ParamType::Number, _) => json!(1),
            (ParamType::Boolean, _) => json!(true),
            (ParamType::Array, Some(ParamType::Number)) => {
                let mut v = vec![json!(0); self.length.unwrap_or(3)];
                v[0] = json!(1);
                Value::Array(v)
            }
            (ParamType::Array, _) => json!(["walls"]),
        }
    }
}

/// What `tools/list` advertises for one tool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolDescriptor {
    pub name: String,
    pub description: String,
    pub params: Vec<ParamSpec>,
}

impl ToolDescriptor {
    pub fn param(&self, name: &str) -> Option<&ParamSpec> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn validate(&self) -> Result<(), ToolError> {
        let ident = Regex::new("^[A-Za-z0-9_]+$").unwrap();
        let bad = |message: String| ToolError::InvalidDescriptor {
            name: self.name.clone(),
            message,
        };
        if !ident.is_match(&self.name) {
            return Err(bad("name must match [A-Za-z0-9_]+".into()));
        }
        if self.description.trim().is_empty() {
            return Err(bad("empty description".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for p in &self.params {
            if !ident.is_match(&p.name) {
                return Err(bad(format!("parameter name `{}`", p.name)));
            }
            if !seen.insert(p.name.as_str()) {
                return Err(bad(format!("parameter `{}` declared twice", p.name)));
            }
            if p.items.is_some() && p.kind != ParamType::Array {
                return Err(bad(format!("`{}` has items but is not an array", p.name)));
            }
            if let Some(e) = &p.example {
                p.check(e).map_err(|e| bad(format!("example: {e}")))?;
            }
        }
        Ok(())
    }

    pub fn input_schema(&self) -> Value {
        let properties: Map<String, Value> = self
            .params
            .iter()
            .map(|p| (p.name.clone(), p.json_schema()))
            .collect();
        let required: Vec<&str> = self
            .params
            .iter()
            .filter(|p| p.required)
            .map(|p| p.name.as_str())
            .collect();
        json!({
            "type": "object",
            "properties": properties,
            "required": required,
            "additionalProperties": false,
        })
    }

    /// MCP `tools/list` entry.
    pub fn to_mcp(&self) -> Value {
        json!({
            "name": self.name,
            "description": self.description,
            "inputSchema": self.input_schema(),
        })
    }

    /// Rebuilds a descriptor from its `tools/list` entry. Examples are not
    /// part of the wire form and come back empty.
    pub fn from_mcp(v: &Value) -> Result<Self, String> {
        let name = v["name"].as_str().ok_or("tool entry without a name")?.to_string();
        let description = v["description"].as_str().unwrap_or_default().to_string();
        let schema = &v["inputSchema"];
        let required: Vec<&str> = schema["required"]
            .as_array()
            .map(|r| r.iter().filter_map(Value::as_str).collect())
            .unwrap_or_default();
        let kind = |t: &Value| -> Result<ParamType, String> {
            serde_json::from_value(t.clone()).map_err(|_| format!("{name}: unsupported type {t}"))
        };
        let mut params = Vec::new();
        if let Some(props) = schema["properties"].as_object() {
            for (pname, p) in props {
                params.push(ParamSpec {
                    name: pname.clone(),
                    kind: kind(&p["type"])?,
                    description: p["description"].as_str().unwrap_or_default().to_string(),
                    required: required.contains(&pname.as_str()),
                    items: match p.get("items") {
                        Some(i) => Some(kind(&i["type"])?),
                        None => None,
                    },
                    length: p["minItems"].as_u64().filter(|n| p["maxItems"].as_u64() == Some(*n)).map(|n| n as usize),
                    example: None,
                });
            }
        }
        Ok(Self {
            name,
            description,
            params,
        })
    }

    /// Checks arguments against the parameter list: no unknown keys, every
    /// required parameter present, every value of the declared type.
    pub fn check_args(&self, args: &Value) -> Result<(), ToolError> {
        let empty = Map::new();
        let map = match args {
            Value::Object(m) => m,
            Value::Null => &empty,
            _ => return Err(ToolError::schema("arguments", "expected an object")),
        };
        if let Some(k) = map.keys().find(|k| self.param(k).is_none()) {
            return Err(ToolError::schema(k, "unknown parameter"));
        }
        for p in &self.params {
            match map.get(&p.name) {
                None if p.required => return Err(ToolError::schema(&p.name, "required parameter missing")),
                None => {}
                Some(v) => p.check(v)?,
            }
        }
        Ok(())
    }

    /// Arguments built from each parameter's example.
    pub fn synthetic_args(&self) -> Value {
        Value::Object(
            self.params
                .iter()
                .map(|p| (p.name.clone(), p.synthetic_value()))
                .collect(),
        )
    }
}

pub trait Planner: Send + Sync {
    fn plan(
        &self,
        tool: &ToolDescriptor,
        args: &ArgReader,
        case: &CaseLayout,
    ) -> Result<ToolInvocationPlan, ToolError>;
}

/// Descriptor plus planner, as stored in a descriptor file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolSpec {
    #[serde(flatten)]
    pub descriptor: ToolDescriptor,
    pub planner: PlannerSpec,
}

const BUILTIN: &[(&str, &str)] = &[
    ("CourantNo", include_str!("../../tools/CourantNo.json")),
    ("Lambda2", include_str!("../../tools/Lambda2.json")),
    ("MachNo", include_str!("../../tools/MachNo.json")),
    ("Q", include_str!("../../tools/Q.json")),
    ("enstrophy", include_str!("../../tools/enstrophy.json")),
    ("fieldAverage", include_str!("../../tools/fieldAverage.json")),
    ("fieldMinMax", include_str!("../../tools/fieldMinMax.json")),
    ("flowRatePatch", include_str!("../../tools/flowRatePatch.json")),
    ("forceCoeffs", include_str!("../../tools/forceCoeffs.json")),
    ("forces", include_str!("../../tools/forces.json")),
    ("mag", include_str!("../../tools/mag.json")),
    ("probes", include_str!("../../tools/probes.json")),
    ("sampledPatch", include_str!("../../tools/sampledPatch.json")),
    ("solverInfo", include_str!("../../tools/solverInfo.json")),
    ("streamLine", include_str!("../../tools/streamLine.json")),
    ("surfacesCuttingPlane", include_str!("../../tools/surfacesCuttingPlane.json")),
    ("surfacesIsoSurface", include_str!("../../tools/surfacesIsoSurface.json")),
    ("totalPressure", include_str!("../../tools/totalPressure.json")),
    ("turbulenceIntensity", include_str!("../../tools/turbulenceIntensity.json")),
    ("vorticity", include_str!("../../tools/vorticity.json")),
    ("wallShearStress", include_str!("../../tools/wallShearStress.json")),
    ("yPlus", include_str!("../../tools/yPlus.json")),
];

struct Registered {
    descriptor: ToolDescriptor,
    planner: Arc<dyn Planner>,
}

/// Ordered tool registry. Listing order is registration order.
#[derive(Default)]
pub struct Registry {
    tools: Vec<Registered>,
    index: HashMap<String, usize>,
}

impl std::fmt::Debug for Registry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_list().entries(self.tools.iter().map(|t| &t.descriptor.name)).finish()
    }
}

/// A failed registry self-test entry.
#[derive(Debug, Clone, PartialEq)]
pub struct SelfTestFailure {
    pub tool: String,
    pub message: String,
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    /// The shipped tool set.
    pub fn builtin() -> Self {
        let mut r = Self::new();
        for (file, text) in BUILTIN {
            let spec: ToolSpec = serde_json::from_str(text)
                .unwrap_or_else(|e| panic!("built-in tool {file}: {e}"));
            r.register_spec(spec)
                .unwrap_or_else(|e| panic!("built-in tool {file}: {e}"));
        }
        r
    }

    pub fn register_tool(&mut self, descriptor: ToolDescriptor, planner: Arc<dyn Planner>) -> Result<(), ToolError> {
        descriptor.validate()?;
        if self.index.contains_key(&descriptor.name) {
            return Err(ToolError::DuplicateToolName(descriptor.name));
        }
        self.index.insert(descriptor.name.clone(), self.tools.len());
        self.tools.push(Registered { descriptor, planner });
        Ok(())
    }

    pub fn register_spec(&mut self, spec: ToolSpec) -> Result<(), ToolError> {
        spec.planner.validate(&spec.descriptor)?;
        self.register_tool(spec.descriptor, Arc::new(spec.planner))
    }

    /// Registers every `*.json` descriptor file in `dir`, in file-name
    /// order. Returns the number of tools added.
    pub fn load_dir(&mut self, dir: &Path) -> Result<usize, ToolError> {
        let plugin_err = |path: &Path, message: String| ToolError::Plugin {
            path: path.display().to_string(),
            message,
        };
        let mut files: Vec<_> = std::fs::read_dir(dir)
            .map_err(|e| plugin_err(dir, e.to_string()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        files.sort();
        for path in &files {
            let text = std::fs::read_to_string(path).map_err(|e| plugin_err(path, e.to_string()))?;
            let spec: ToolSpec = serde_json::from_str(&text).map_err(|e| plugin_err(path, e.to_string()))?;
            self.register_spec(spec)?;
        }
        Ok(files.len())
    }

    pub fn len(&self) -> usize {
        self.tools.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tools.is_empty()
    }

    pub fn descriptors(&self) -> impl Iterator<Item = &ToolDescriptor> {
        self.tools.iter().map(|t| &t.descriptor)
    }

    pub fn get(&self, name: &str) -> Option<&ToolDescriptor> {
        self.index.get(name).map(|&i| &self.tools[i].descriptor)
    }

    /// Validates arguments and plans one call.
    pub fn plan(&self, name: &str, args: &Value, case: &CaseLayout) -> Result<ToolInvocationPlan, ToolError> {
        let tool = self
            .index
            .get(name)
            .map(|&i| &self.tools[i])
            .ok_or_else(|| ToolError::UnknownTool(name.to_string()))?;
        tool.descriptor.check_args(args)?;
        let reader = ArgReader::new(args);
        tool.planner.plan(&tool.descriptor, &reader, case)
    }

    /// Plans every tool with arguments derived from its schema and checks
    /// that every parameter was read and every dictionary round-trips.
    pub fn self_test(&self, case: &CaseLayout) -> Vec<SelfTestFailure> {
        let mut failures = Vec::new();
        for t in &self.tools {
            let fail = |message: String| SelfTestFailure {
                tool: t.descriptor.name.clone(),
                message,
            };
            let args = t.descriptor.synthetic_args();
            if let Err(e) = t.descriptor.check_args(&args) {
                failures.push(fail(format!("synthetic arguments rejected: {e}")));
                continue;
            }
            let reader = ArgReader::new(&args);
            let plan = match t.planner.plan(&t.descriptor, &reader, case) {
                Ok(p) => p,
                Err(e) => {
                    failures.push(fail(format!("planner failed: {e}")));
                    continue;
                }
            };
            let declared: std::collections::BTreeSet<String> =
                t.descriptor.params.iter().map(|p| p.name.clone()).collect();
            let unread: Vec<_> = declared.difference(&reader.consumed()).cloned().collect();
            if !unread.is_empty() {
                failures.push(fail(format!("parameters never read: {}", unread.join(", "))));
            }
            if let Some(body) = &plan.body {
                let file = crate::foam::FoamFile::default().with_root(body.clone());
                let text = crate::foam::emit_dict(&file);
                match crate::foam::parse_dict(&text) {
                    Ok(back) if back == file => {}
                    Ok(_) => failures.push(fail("dictionary changed on round trip".into())),
                    Err(e) => failures.push(fail(format!("dictionary does not re-parse: {e}"))),
                }
            }
        }
        failures
    }

    /// Name and first description line of every tool.
    pub fn summary(&self) -> BTreeMap<String, String> {
        self.descriptors()
            .map(|d| {
                (
                    d.name.clone(),
                    d.description.lines().next().unwrap_or("").to_string(),
                )
            })
            .collect()
    }
}
