use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{ArgReader, ParamType, Planner, TimeSelector, ToolDescriptor, ToolError};
use crate::case::{list_patches, CaseLayout};
use crate::foam::{format_number, parse_dict, FoamDict, FoamNode};

/// Dictionary shared by every dictionary-based tool.
pub const POST_DICT: &str = "system/postProcessingDict";

const ORTHOGONALITY_TOLERANCE: f64 = 1e-3;
const UNIT_TOLERANCE: f64 = 1e-3;

/// A function-object body and the command that runs it.
#[derive(Debug, Clone, PartialEq)]
pub struct ToolInvocationPlan {
    pub tool: String,
    /// Entry name under `functions` in the post-processing dictionary;
    /// `None` for `-func` shortcut commands.
    pub func_id: Option<String>,
    pub body: Option<FoamDict>,
    pub argv: Vec<String>,
    pub time: TimeSelector,
    /// Case-relative paths the command is expected to produce.
    pub outputs: Vec<String>,
}

fn shell_quote(arg: &str) -> String {
    let plain = |c: char| c.is_ascii_alphanumeric() || "-_./:=+,".contains(c);
    if !arg.is_empty() && arg.chars().all(plain) {
        arg.to_string()
    } else {
        format!("'{}'", arg.replace('\'', r"'\''"))
    }
}

impl ToolInvocationPlan {
    pub fn command(&self) -> String {
        self.argv.iter().map(|a| shell_quote(a)).collect::<Vec<_>>().join(" ")
    }

    pub fn dict_path(&self) -> Option<&str> {
        self.body.as_ref().map(|_| POST_DICT)
    }
}

/// `base`, or `base_<n>` with the smallest `n` not already used in the
/// case's post-processing dictionary.
pub fn allocate_func_id(case: &CaseLayout, base: &str) -> Result<String, ToolError> {
    let taken: Vec<String> = if case.exists(POST_DICT) {
        let file = case.read(POST_DICT)?;
        file.root
            .get_dict("functions")
            .map(|f| f.keys().map(str::to_string).collect())
            .unwrap_or_default()
    } else {
        Vec::new()
    };
    if !taken.iter().any(|t| t == base) {
        return Ok(base.to_string());
    }
    let n = (1..).find(|n| !taken.contains(&format!("{base}_{n}"))).unwrap();
    Ok(format!("{base}_{n}"))
}

fn check_patches(case: &CaseLayout, patches: &[String]) -> Result<(), ToolError> {
    if patches.is_empty() {
        return Err(ToolError::UnknownPatch(String::new()));
    }
    let known = list_patches(case)?;
    match patches.iter().find(|p| !known.contains(p)) {
        Some(p) => Err(ToolError::UnknownPatch(p.clone())),
        None => Ok(()),
    }
}

fn selected_times(case: &CaseLayout, time: &TimeSelector) -> Vec<String> {
    time.select(&case.time_dirs())
}

fn require_fields(case: &CaseLayout, times: &[String], fields: &[String]) -> Result<(), ToolError> {
    for f in fields {
        if !times.iter().any(|t| case.exists(&format!("{t}/{f}"))) {
            return Err(ToolError::UnknownField(f.clone()));
        }
    }
    Ok(())
}

fn solver(case: &CaseLayout) -> Result<String, ToolError> {
    Ok(case.solver()?)
}

fn dict_command(solver: String, time: &TimeSelector) -> Vec<String> {
    let mut argv = vec![solver, "-postProcess".into(), "-dict".into(), POST_DICT.into()];
    argv.extend(time.flags());
    argv
}

fn words(items: &[String]) -> FoamNode {
    FoamNode::words(items)
}

fn output_paths(func_id: &str, times: &[String], files: &[String]) -> Vec<String> {
    times
        .iter()
        .flat_map(|t| files.iter().map(move |f| format!("postProcessing/{func_id}/{t}/{f}")))
        .collect()
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForceCoeffsArgs {
    pub patches: Vec<String>,
    pub lift_dir: [f64; 3],
    pub drag_dir: [f64; 3],
    pub pitch_axis: [f64; 3],
    pub mag_u_inf: f64,
    pub l_ref: f64,
    pub a_ref: f64,
    pub cof_r: [f64; 3],
    pub rho_inf: f64,
    pub porosity: bool,
    pub time: TimeSelector,
}

impl ForceCoeffsArgs {
    pub fn read(args: &ArgReader) -> Result<Self, ToolError> {
        Ok(Self {
            patches: args.req_strings("patches")?,
            lift_dir: args.req_vec3("liftDir")?,
            drag_dir: args.req_vec3("dragDir")?,
            pitch_axis: args.req_vec3("pitchAxis")?,
            mag_u_inf: args.req_num("magUInf")?,
            l_ref: args.req_num("lRef")?,
            a_ref: args.req_num("Aref")?,
            cof_r: args.vec3("CofR")?.unwrap_or([0.0; 3]),
            rho_inf: args.num("rhoInf")?.unwrap_or(1.0),
            porosity: args.bool("porosity")?.unwrap_or(false),
            time: args.time()?,
        })
    }
}

pub fn plan_force_coeffs(args: &ForceCoeffsArgs, case: &CaseLayout) -> Result<ToolInvocationPlan, ToolError> {
    check_patches(case, &args.patches)?;
    for (name, v) in [("liftDir", args.lift_dir), ("dragDir", args.drag_dir)] {
        let norm = dot(v, v).sqrt();
        if (norm - 1.0).abs() > UNIT_TOLERANCE {
            return Err(ToolError::NonUnitDirection {
                param: name.into(),
                norm,
            });
        }
    }
    let d = dot(args.lift_dir, args.drag_dir);
    if d.abs() > ORTHOGONALITY_TOLERANCE {
        return Err(ToolError::NonOrthogonalDirections { dot: d });
    }
    for (name, v) in [("magUInf", args.mag_u_inf), ("lRef", args.l_ref), ("Aref", args.a_ref)] {
        if !(v > 0.0) {
            return Err(ToolError::schema(name, "must be positive"));
        }
    }
    let func_id = allocate_func_id(case, "forceCoeffs")?;
    let mut body = FoamDict::new()
        .with("type", FoamNode::word("forceCoeffs"))
        .with("libs", FoamNode::words(&["forces"]))
        .with("writeControl", FoamNode::word("writeTime"))
        .with("patches", words(&args.patches))
        .with("rho", FoamNode::word("rhoInf"))
        .with("rhoInf", FoamNode::number(args.rho_inf))
        .with("CofR", FoamNode::vector(args.cof_r))
        .with("liftDir", FoamNode::vector(args.lift_dir))
        .with("dragDir", FoamNode::vector(args.drag_dir))
        .with("pitchAxis", FoamNode::vector(args.pitch_axis))
        .with("magUInf", FoamNode::number(args.mag_u_inf))
        .with("lRef", FoamNode::number(args.l_ref))
        .with("Aref", FoamNode::number(args.a_ref));
    if args.porosity {
        body.insert("porosity", FoamNode::word("yes"));
    }
    let times = selected_times(case, &args.time);
    Ok(ToolInvocationPlan {
        tool: "postProcess_forceCoeffs".into(),
        outputs: output_paths(&func_id, &times, &["coefficient.dat".into()]),
        func_id: Some(func_id),
        body: Some(body),
        argv: dict_command(solver(case)?, &args.time),
        time: args.time.clone(),
    })
}

pub fn plan_sampled_patch(
    field: &str,
    patches: &[String],
    time: &TimeSelector,
    case: &CaseLayout,
) -> Result<ToolInvocationPlan, ToolError> {
    check_patches(case, patches)?;
    let times = selected_times(case, time);
    require_fields(case, &times, &[field.to_string()])?;
    let mut surfaces = FoamDict::new();
    for p in patches {
        surfaces.insert(
            p.clone(),
            FoamNode::Dict(
                FoamDict::new()
                    .with("type", FoamNode::word("patch"))
                    .with("patches", FoamNode::words(&[p]))
                    .with("interpolate", FoamNode::word("true")),
            ),
        );
    }
    let func_id = allocate_func_id(case, "sampledPatch")?;
    let body = FoamDict::new()
        .with("type", FoamNode::word("surfaces"))
        .with("libs", FoamNode::words(&["sampling"]))
        .with("writeControl", FoamNode::word("writeTime"))
        .with("surfaceFormat", FoamNode::word("raw"))
        .with("interpolationScheme", FoamNode::word("cellPoint"))
        .with("fields", FoamNode::words(&[field]))
        .with("surfaces", FoamNode::Dict(surfaces));
    let files: Vec<String> = patches.iter().map(|p| format!("{field}_{p}.raw")).collect();
    Ok(ToolInvocationPlan {
        tool: "postProcess_surfaces_sampledPatch".into(),
        outputs: output_paths(&func_id, &times, &files),
        func_id: Some(func_id),
        body: Some(body),
        argv: dict_command(solver(case)?, time),
        time: time.clone(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamLineArgs {
    pub fields: Vec<String>,
    pub start: [f64; 3],
    pub end: [f64; 3],
    pub n_points: u64,
    /// Output coordinate of the seed set: `x`, `y`, `z`, `xyz` or `distance`.
    pub axis: String,
    pub direction: String,
    pub life_time: u64,
    pub time: TimeSelector,
}

fn count(args: &ArgReader, name: &str, v: f64) -> Result<u64, ToolError> {
    if v.fract() != 0.0 || v < 0.0 {
        return Err(ToolError::schema(name, "expected a non-negative integer"));
    }
    let _ = args;
    Ok(v as u64)
}

impl StreamLineArgs {
    pub fn read(args: &ArgReader) -> Result<Self, ToolError> {
        Ok(Self {
            fields: args.req_strings("fields")?,
            start: args.req_vec3("start")?,
            end: args.req_vec3("end")?,
            n_points: count(args, "nPoints", args.req_num("nPoints")?)?,
            axis: args.str("axis")?.unwrap_or_else(|| "xyz".into()),
            direction: args.str("direction")?.unwrap_or_else(|| "bidirectional".into()),
            life_time: match args.num("lifeTime")? {
                Some(v) => count(args, "lifeTime", v)?,
                None => 10000,
            },
            time: args.time()?,
        })
    }
}

pub fn plan_stream_line(args: &StreamLineArgs, case: &CaseLayout) -> Result<ToolInvocationPlan, ToolError> {
    if args.start == args.end {
        return Err(ToolError::DegenerateSeedLine);
    }
    if args.n_points < 2 {
        return Err(ToolError::schema("nPoints", "need at least 2 points"));
    }
    if args.fields.is_empty() {
        return Err(ToolError::schema("fields", "no fields to sample"));
    }
    if !["x", "y", "z", "xyz", "distance"].contains(&args.axis.as_str()) {
        return Err(ToolError::schema("axis", "expected x, y, z, xyz or distance"));
    }
    if !["forward", "backward", "bidirectional"].contains(&args.direction.as_str()) {
        return Err(ToolError::schema("direction", "expected forward, backward or bidirectional"));
    }
    let times = selected_times(case, &args.time);
    require_fields(case, &times, &["U".to_string()])?;
    let func_id = allocate_func_id(case, "streamLine")?;
    let seed = FoamDict::new()
        .with("type", FoamNode::word("uniform"))
        .with("axis", FoamNode::word(&args.axis))
        .with("start", FoamNode::vector(args.start))
        .with("end", FoamNode::vector(args.end))
        .with("nPoints", FoamNode::number(args.n_points as f64));
    let body = FoamDict::new()
        .with("type", FoamNode::word("streamLine"))
        .with("libs", FoamNode::words(&["fieldFunctionObjects"]))
        .with("writeControl", FoamNode::word("writeTime"))
        .with("setFormat", FoamNode::word("vtk"))
        .with("U", FoamNode::word("U"))
        .with("direction", FoamNode::word(&args.direction))
        .with("fields", words(&args.fields))
        .with("lifeTime", FoamNode::number(args.life_time as f64))
        .with("nSubCycle", FoamNode::number(5.0))
        .with("cloud", FoamNode::word("particleTracks"))
        .with("seedSampleSet", FoamNode::Dict(seed));
    Ok(ToolInvocationPlan {
        tool: "postProcess_streamLine".into(),
        outputs: output_paths(&func_id, &times, &["tracks.vtk".into()]),
        func_id: Some(func_id),
        body: Some(body),
        argv: dict_command(solver(case)?, &args.time),
        time: args.time.clone(),
    })
}

fn func_command(solver: String, func: &str, time: &TimeSelector) -> Vec<String> {
    let mut argv = vec![solver, "-postProcess".into(), "-func".into(), func.into()];
    argv.extend(time.flags());
    argv
}

pub fn plan_vorticity(time: &TimeSelector, case: &CaseLayout) -> Result<ToolInvocationPlan, ToolError> {
    let times = selected_times(case, time);
    require_fields(case, &times, &["U".to_string()])?;
    Ok(ToolInvocationPlan {
        tool: "postProcess_vorticity".into(),
        func_id: None,
        body: None,
        argv: func_command(solver(case)?, "vorticity", time),
        outputs: times.iter().map(|t| format!("{t}/vorticity")).collect(),
        time: time.clone(),
    })
}

/// Where a generic tool puts an argument in its dictionary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Binding {
    /// Slash-separated keyword path.
    Key(String),
    /// A list of names, each expanded to `name <dict>` inside a list.
    Each { key: String, each: String },
}

/// How a tool builds its plan. The dedicated kinds carry their own
/// validation; `func` and `functionObject` are driven by descriptor data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "camelCase")]
pub enum PlannerSpec {
    ForceCoeffs,
    SampledPatch,
    StreamLine,
    Vorticity,
    /// `postProcess -func <func>`; `{param}` placeholders are substituted.
    Func {
        func: String,
        #[serde(default)]
        requires: Vec<String>,
        /// Case-relative output path templates.
        #[serde(default)]
        outputs: Vec<String>,
    },
    /// A dictionary built from `template` plus argument bindings.
    FunctionObject {
        func: String,
        template: String,
        #[serde(default)]
        bindings: BTreeMap<String, Binding>,
        #[serde(default)]
        requires: Vec<String>,
        #[serde(default)]
        outputs: Vec<String>,
    },
}

fn placeholders(template: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut rest = template;
    while let Some(i) = rest.find('{') {
        let Some(j) = rest[i..].find('}') else { break };
        out.push(rest[i + 1..i + j].to_string());
        rest = &rest[i + j + 1..];
    }
    out
}

/// Substitutes `{name}` placeholders; a variable with several values
/// multiplies the result.
fn expand(template: &str, vars: &BTreeMap<String, Vec<String>>) -> Vec<String> {
    for name in placeholders(template) {
        if let Some(values) = vars.get(&name) {
            let pat = format!("{{{name}}}");
            return values
                .iter()
                .flat_map(|v| expand(&template.replacen(&pat, v, 1), vars))
                .collect();
        }
    }
    vec![template.to_string()]
}

fn value_strings(v: &Value) -> Vec<String> {
    match v {
        Value::String(s) => vec![s.clone()],
        Value::Number(n) => vec![format_number(n.as_f64().unwrap_or(0.0))],
        Value::Bool(b) => vec![b.to_string()],
        Value::Array(items) => items.iter().flat_map(value_strings).collect(),
        _ => vec![],
    }
}

fn word_or_quoted(s: &str) -> FoamNode {
    let plain = !s.is_empty()
        && s.chars()
            .all(|c| c.is_ascii_alphanumeric() || "_.:()<>,-+".contains(c));
    if plain {
        FoamNode::word(s)
    } else {
        FoamNode::quoted(s)
    }
}

fn to_node(v: &Value) -> FoamNode {
    match v {
        Value::String(s) => word_or_quoted(s),
        Value::Number(n) => FoamNode::number(n.as_f64().unwrap_or(0.0)),
        Value::Bool(b) => FoamNode::word(if *b { "true" } else { "false" }),
        Value::Array(items) => FoamNode::List(items.iter().map(to_node).collect()),
        _ => FoamNode::Seq(vec![]),
    }
}

fn set_path(dict: &mut FoamDict, path: &str, value: FoamNode) {
    match path.split_once('/') {
        None => {
            dict.insert(path, value);
        }
        Some((head, rest)) => {
            if dict.get_dict(head).is_none() {
                dict.insert(head, FoamNode::Dict(FoamDict::new()));
            }
            set_path(dict.get_dict_mut(head).expect("just inserted"), rest, value);
        }
    }
}

/// Reads every parameter referenced by placeholders and returns the
/// substitution table, including `time` values.
fn template_vars(
    templates: &[&str],
    args: &ArgReader,
    func_id: Option<&str>,
    times: &[String],
) -> BTreeMap<String, Vec<String>> {
    let mut vars = BTreeMap::new();
    for t in templates {
        for name in placeholders(t) {
            match name.as_str() {
                "time" | "func_id" => {}
                _ => {
                    if let Some(v) = args.raw(&name) {
                        vars.insert(name, value_strings(v));
                    }
                }
            }
        }
    }
    if let Some(id) = func_id {
        vars.insert("func_id".into(), vec![id.to_string()]);
    }
    vars.insert("time".into(), times.to_vec());
    vars
}

impl PlannerSpec {
    /// Checks that the planner fits the descriptor it is registered with.
    pub fn validate(&self, d: &ToolDescriptor) -> Result<(), ToolError> {
        let bad = |message: String| ToolError::InvalidDescriptor {
            name: d.name.clone(),
            message,
        };
        let need = |names: &[&str]| -> Result<(), ToolError> {
            for n in names {
                if d.param(n).is_none() {
                    return Err(bad(format!("planner needs parameter `{n}`")));
                }
            }
            Ok(())
        };
        match self {
            PlannerSpec::ForceCoeffs => need(&["patches", "liftDir", "dragDir", "pitchAxis", "magUInf", "lRef", "Aref"]),
            PlannerSpec::SampledPatch => need(&["field", "patches"]),
            PlannerSpec::StreamLine => need(&["fields", "start", "end", "nPoints"]),
            PlannerSpec::Vorticity => Ok(()),
            PlannerSpec::Func { func, outputs, .. } => {
                for t in std::iter::once(func).chain(outputs) {
                    for p in placeholders(t) {
                        if p != "time" && d.param(&p).is_none() {
                            return Err(bad(format!("placeholder `{{{p}}}` names no parameter")));
                        }
                    }
                }
                Ok(())
            }
            PlannerSpec::FunctionObject {
                template,
                bindings,
                outputs,
                ..
            } => {
                parse_dict(template).map_err(|e| bad(format!("template: {e}")))?;
                for (param, b) in bindings {
                    let spec = d
                        .param(param)
                        .ok_or_else(|| bad(format!("binding for undeclared parameter `{param}`")))?;
                    if let Binding::Each { each, .. } = b {
                        if spec.kind != ParamType::Array {
                            return Err(bad(format!("`{param}` bound with `each` must be an array")));
                        }
                        parse_dict(each).map_err(|e| bad(format!("`{param}` each: {e}")))?;
                    }
                }
                for t in outputs {
                    for p in placeholders(t) {
                        if p != "time" && p != "func_id" && d.param(&p).is_none() {
                            return Err(bad(format!("placeholder `{{{p}}}` names no parameter")));
                        }
                    }
                }
                Ok(())
            }
        }
    }
}

impl Planner for PlannerSpec {
    fn plan(&self, tool: &ToolDescriptor, args: &ArgReader, case: &CaseLayout) -> Result<ToolInvocationPlan, ToolError> {
        let mut plan = match self {
            PlannerSpec::ForceCoeffs => plan_force_coeffs(&ForceCoeffsArgs::read(args)?, case)?,
            PlannerSpec::SampledPatch => {
                let field = args.req_str("field")?;
                let patches = args.req_strings("patches")?;
                plan_sampled_patch(&field, &patches, &args.time()?, case)?
            }
            PlannerSpec::StreamLine => plan_stream_line(&StreamLineArgs::read(args)?, case)?,
            PlannerSpec::Vorticity => plan_vorticity(&args.time()?, case)?,
            PlannerSpec::Func {
                func,
                requires,
                outputs,
            } => {
                let time = args.time()?;
                let times = selected_times(case, &time);
                require_fields(case, &times, requires)?;
                let mut templates: Vec<&str> = vec![func];
                templates.extend(outputs.iter().map(String::as_str));
                let vars = template_vars(&templates, args, None, &times);
                let funcs = expand(func, &vars);
                let [func] = funcs.as_slice() else {
                    return Err(ToolError::schema(
                        &placeholders(func).join(","),
                        "must name exactly one value",
                    ));
                };
                ToolInvocationPlan {
                    tool: String::new(),
                    func_id: None,
                    body: None,
                    argv: func_command(solver(case)?, func, &time),
                    outputs: outputs.iter().flat_map(|o| expand(o, &vars)).collect(),
                    time,
                }
            }
            PlannerSpec::FunctionObject {
                func,
                template,
                bindings,
                requires,
                outputs,
            } => {
                let time = args.time()?;
                let times = selected_times(case, &time);
                require_fields(case, &times, requires)?;
                let mut body = parse_dict(template)
                    .map_err(|e| ToolError::InvalidDescriptor {
                        name: tool.name.clone(),
                        message: e.to_string(),
                    })?
                    .root;
                for p in &tool.params {
                    let Some(binding) = bindings.get(&p.name) else { continue };
                    let Some(v) = args.raw(&p.name) else { continue };
                    if p.name == "patches" || p.name == "patch" {
                        check_patches(case, &value_strings(v))?;
                    }
                    match binding {
                        Binding::Key(path) => set_path(&mut body, path, to_node(v)),
                        Binding::Each { key, each } => {
                            let inner = parse_dict(each).expect("validated at registration").root;
                            let items = value_strings(v)
                                .iter()
                                .map(|name| {
                                    FoamNode::Seq(vec![word_or_quoted(name), FoamNode::Dict(inner.clone())])
                                })
                                .collect();
                            set_path(&mut body, key, FoamNode::List(items));
                        }
                    }
                }
                let func_id = allocate_func_id(case, func)?;
                let templates: Vec<&str> = outputs.iter().map(String::as_str).collect();
                let vars = template_vars(&templates, args, Some(&func_id), &times);
                ToolInvocationPlan {
                    tool: String::new(),
                    outputs: outputs.iter().flat_map(|o| expand(o, &vars)).collect(),
                    func_id: Some(func_id),
                    body: Some(body),
                    argv: dict_command(solver(case)?, &time),
                    time,
                }
            }
        };
        plan.tool = tool.name.clone();
        Ok(plan)
    }
}
