//! Case directories: layout scanning, the pre-check, bundle application with
//! per-iteration archives, and boundary patch listing.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::{Component, Path, PathBuf};

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::foam::{emit_dict, parse_dict, standard_header, Entry, FoamError, FoamFile, FoamNode};

/// Directory (relative to the case root) holding archives and session data.
pub const STATE_DIR: &str = ".copilot";

const MESH_COMPONENTS: [&str; 5] = ["points", "faces", "owner", "neighbour", "boundary"];

#[derive(Debug, Error)]
pub enum CaseError {
    #[error("i/o failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Parse {
        path: String,
        #[source]
        source: FoamError,
    },
    #[error("path `{0}` escapes the case directory")]
    PathEscape(String),
    #[error("case root {0} does not exist")]
    MissingRoot(PathBuf),
    #[error("controlDict has no `application` entry")]
    NoSolver,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CaseError + '_ {
    move |source| CaseError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Normalizes a case-relative path, rejecting anything absolute or that
/// climbs above the root.
pub fn normalize_relative(path: &str) -> Result<String, CaseError> {
    let mut parts: Vec<String> = Vec::new();
    for comp in Path::new(path).components() {
        match comp {
            Component::Normal(p) => parts.push(p.to_string_lossy().into_owned()),
            Component::CurDir => {}
            Component::ParentDir => {
                if parts.pop().is_none() {
                    return Err(CaseError::PathEscape(path.to_string()));
                }
            }
            Component::RootDir | Component::Prefix(_) => {
                return Err(CaseError::PathEscape(path.to_string()))
            }
        }
    }
    if parts.is_empty() {
        return Err(CaseError::PathEscape(path.to_string()));
    }
    Ok(parts.join("/"))
}

/// Snapshot of the files in a case directory. Paths are case-relative with
/// `/` separators.
#[derive(Debug, Clone, PartialEq)]
pub struct CaseLayout {
    root: PathBuf,
    fields: Vec<String>,
    constant: Vec<String>,
    system: Vec<String>,
}

fn walk(root: &Path, rel: &str, out: &mut Vec<String>) -> Result<(), CaseError> {
    let dir = root.join(rel);
    if !dir.is_dir() {
        return Ok(());
    }
    let mut entries: Vec<_> = fs::read_dir(&dir)
        .map_err(io_err(&dir))?
        .collect::<Result<_, _>>()
        .map_err(io_err(&dir))?;
    entries.sort_by_key(|e| e.file_name());
    for e in entries {
        let name = e.file_name().to_string_lossy().into_owned();
        let child = format!("{rel}/{name}");
        if e.path().is_dir() {
            walk(root, &child, out)?;
        } else {
            out.push(child);
        }
    }
    Ok(())
}

impl CaseLayout {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, CaseError> {
        let root = root.into();
        if !root.is_dir() {
            return Err(CaseError::MissingRoot(root));
        }
        let mut fields = Vec::new();
        let mut constant = Vec::new();
        let mut system = Vec::new();
        walk(&root, "0", &mut fields)?;
        walk(&root, "constant", &mut constant)?;
        walk(&root, "system", &mut system)?;
        Ok(Self {
            root,
            fields,
            constant,
            system,
        })
    }

    pub fn rescan(&self) -> Result<Self, CaseError> {
        Self::open(self.root.clone())
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn fields(&self) -> &[String] {
        &self.fields
    }

    pub fn constant(&self) -> &[String] {
        &self.constant
    }

    pub fn system(&self) -> &[String] {
        &self.system
    }

    pub fn all_files(&self) -> impl Iterator<Item = &str> {
        self.system
            .iter()
            .chain(&self.constant)
            .chain(&self.fields)
            .map(String::as_str)
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn exists(&self, rel: &str) -> bool {
        self.root.join(rel).is_file()
    }

    pub fn read_text(&self, rel: &str) -> Result<String, CaseError> {
        let p = self.root.join(rel);
        fs::read_to_string(&p).map_err(io_err(&p))
    }

    pub fn read(&self, rel: &str) -> Result<FoamFile, CaseError> {
        let text = self.read_text(rel)?;
        let mut f = parse_dict(&text).map_err(|source| CaseError::Parse {
            path: rel.to_string(),
            source,
        })?;
        f.source_path = Some(self.root.join(rel));
        Ok(f)
    }

    /// Solver named by `application` in `system/controlDict`.
    pub fn solver(&self) -> Result<String, CaseError> {
        let cd = self.read("system/controlDict")?;
        cd.root
            .get("application")
            .and_then(FoamNode::as_word)
            .map(str::to_string)
            .ok_or(CaseError::NoSolver)
    }

    /// Numeric time directories, ascending.
    pub fn time_dirs(&self) -> Vec<(f64, String)> {
        let mut out: Vec<(f64, String)> = fs::read_dir(&self.root)
            .into_iter()
            .flatten()
            .flatten()
            .filter(|e| e.path().is_dir())
            .filter_map(|e| {
                let name = e.file_name().to_string_lossy().into_owned();
                name.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .map(|v| (v, name))
            })
            .collect();
        out.sort_by(|a, b| a.0.total_cmp(&b.0));
        out
    }

    pub fn latest_time(&self) -> Option<String> {
        self.time_dirs().pop().map(|(_, n)| n)
    }

    fn mesh_component_present(&self, name: &str) -> bool {
        let base = format!("constant/polyMesh/{name}");
        self.exists(&base) || self.exists(&format!("{base}.gz"))
    }
}

/// Patch names from `constant/polyMesh/boundary`, in file order.
pub fn list_patches(case: &CaseLayout) -> Result<Vec<String>, CaseError> {
    let file = case.read("constant/polyMesh/boundary")?;
    Ok(patches_in(&file))
}

fn patches_in(file: &FoamFile) -> Vec<String> {
    let mut names = Vec::new();
    for entry in file.root.entries() {
        let Entry::Bare(node) = entry else { continue };
        let list = match node {
            FoamNode::List(items) => items.as_slice(),
            FoamNode::Seq(items) => match items.iter().find_map(FoamNode::as_list) {
                Some(l) => l,
                None => continue,
            },
            _ => continue,
        };
        for item in list {
            if let FoamNode::Seq(pair) = item {
                if let [FoamNode::Scalar(name), FoamNode::Dict(_)] = pair.as_slice() {
                    names.push(name.unquoted().to_string());
                }
            }
        }
    }
    names
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PrecheckStatus {
    Pass,
    Fail,
}

/// A structured pre-check finding, suitable for quoting in prompts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Finding {
    pub code: String,
    pub path: String,
    pub message: String,
}

impl std::fmt::Display for Finding {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "[{}] {}: {}", self.code, self.path, self.message)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrecheckReport {
    pub status: PrecheckStatus,
    pub findings: Vec<Finding>,
    pub patches: Vec<String>,
}

impl PrecheckReport {
    pub fn passed(&self) -> bool {
        self.status == PrecheckStatus::Pass
    }
}

/// Patch names a prompt refers to: the word right before "patch"/"patches",
/// and quoted identifiers in any sentence that talks about patches.
pub fn patches_named_in(prompt: &str) -> Vec<String> {
    let ident = r"[A-Za-z_][A-Za-z0-9_.\-]*";
    let before = Regex::new(&format!(r"(?i)[`'\x22]?({ident})[`'\x22]?\s+(?:patch|patches)\b")).unwrap();
    let quoted = Regex::new(&format!(r"[`'\x22]({ident})['`\x22]")).unwrap();
    let sentence_split = Regex::new(r"[.!?](\s|$)").unwrap();
    let mut out: Vec<String> = Vec::new();
    let mut push = |s: &str| {
        let lower = s.to_ascii_lowercase();
        if !matches!(lower.as_str(), "the" | "a" | "each" | "all" | "every" | "that" | "this" | "boundary" | "wall" | "surface")
            && !out.iter().any(|o| o == s)
        {
            out.push(s.to_string());
        }
    };
    for sentence in sentence_split.split(prompt) {
        let lower = sentence.to_ascii_lowercase();
        if !(lower.contains("patch") || lower.contains("boundary")) {
            continue;
        }
        for c in quoted.captures_iter(sentence) {
            push(&c[1]);
        }
        for c in before.captures_iter(sentence) {
            push(&c[1]);
        }
    }
    out
}

/// Validates inputs and mesh presence before any generation.
///
/// Checks the five `polyMesh` components, a non-empty `system/`, a parseable
/// boundary file, and that every patch the prompt names exists.
pub fn precheck(case: &CaseLayout, prompt: &str) -> Result<PrecheckReport, CaseError> {
    if !case.root().is_dir() {
        return Err(CaseError::MissingRoot(case.root().to_path_buf()));
    }
    let mut findings = Vec::new();
    for comp in MESH_COMPONENTS {
        if !case.mesh_component_present(comp) {
            let path = format!("constant/polyMesh/{comp}");
            let message = if comp == "boundary" {
                "mesh boundary file absent".to_string()
            } else {
                format!("mesh component `{comp}` absent")
            };
            findings.push(Finding {
                code: "mesh-missing".into(),
                path,
                message,
            });
        }
    }
    if case.system().is_empty() {
        findings.push(Finding {
            code: "system-empty".into(),
            path: "system".into(),
            message: "system/ holds no template files".into(),
        });
    }
    let mut patches = Vec::new();
    if case.exists("constant/polyMesh/boundary") {
        match list_patches(case) {
            Ok(p) => patches = p,
            Err(e) => findings.push(Finding {
                code: "boundary-unparseable".into(),
                path: "constant/polyMesh/boundary".into(),
                message: e.to_string(),
            }),
        }
        let known: BTreeSet<&str> = patches.iter().map(String::as_str).collect();
        for name in patches_named_in(prompt) {
            if !known.contains(name.as_str()) {
                findings.push(Finding {
                    code: "unknown-patch".into(),
                    path: "constant/polyMesh/boundary".into(),
                    message: format!(
                        "prompt names patch `{name}` but the boundary defines only {}",
                        patches.join(", ")
                    ),
                });
            }
        }
    }
    let status = if findings.is_empty() {
        PrecheckStatus::Pass
    } else {
        PrecheckStatus::Fail
    };
    Ok(PrecheckReport {
        status,
        findings,
        patches,
    })
}

/// Files produced by one generator or corrector call.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CaseBundle {
    pub iteration: u32,
    files: BTreeMap<String, FoamFile>,
}

impl CaseBundle {
    pub fn new(iteration: u32) -> Self {
        Self {
            iteration,
            files: BTreeMap::new(),
        }
    }

    /// Adds a file. Paths are checked when the bundle is applied.
    pub fn insert(&mut self, path: impl Into<String>, file: FoamFile) {
        self.files.insert(path.into(), file);
    }

    pub fn files(&self) -> &BTreeMap<String, FoamFile> {
        &self.files
    }

    pub fn paths(&self) -> impl Iterator<Item = &str> {
        self.files.keys().map(String::as_str)
    }

    pub fn get(&self, path: &str) -> Option<&FoamFile> {
        self.files.get(path)
    }

    pub fn is_empty(&self) -> bool {
        self.files.is_empty()
    }

    pub fn len(&self) -> usize {
        self.files.len()
    }

    /// Normalizes every path, failing on the first that escapes the root.
    pub fn validate(&self) -> Result<(), CaseError> {
        for p in self.files.keys() {
            normalize_relative(p)?;
        }
        Ok(())
    }

    /// Required paths missing from this bundle for a full configuration:
    /// the three `system/` dictionaries and the `0/` fields the solver and
    /// turbulence model need.
    pub fn missing_required(&self, case: &CaseLayout) -> Vec<String> {
        let mut required: Vec<String> = ["system/controlDict", "system/fvSchemes", "system/fvSolution"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let solver = self
            .files
            .get("system/controlDict")
            .and_then(|f| f.root.get("application")?.as_word().map(str::to_string))
            .or_else(|| case.solver().ok());
        let model = turbulence_model(self, case);
        for field in required_fields(solver.as_deref(), model.as_deref()) {
            required.push(format!("0/{field}"));
        }
        required
            .into_iter()
            .filter(|p| !self.files.contains_key(p))
            .collect()
    }
}

fn turbulence_model(bundle: &CaseBundle, case: &CaseLayout) -> Option<String> {
    for rel in ["constant/momentumTransport", "constant/turbulenceProperties"] {
        let file = match bundle.get(rel) {
            Some(f) => Some(f.clone()),
            None if case.exists(rel) => case.read(rel).ok(),
            None => None,
        };
        let Some(file) = file else { continue };
        let kind = file.root.get("simulationType").and_then(FoamNode::as_word);
        if kind == Some("laminar") {
            return Some("laminar".into());
        }
        if let Some(sub) = kind.and_then(|k| file.root.get_dict(k)) {
            let model = sub
                .get("model")
                .or_else(|| sub.get("RASModel"))
                .or_else(|| sub.get("LESModel"))
                .and_then(FoamNode::as_word);
            if let Some(m) = model {
                return Some(m.to_string());
            }
        }
    }
    None
}

/// `0/` fields a solver/turbulence-model pair needs.
pub fn required_fields(solver: Option<&str>, model: Option<&str>) -> Vec<&'static str> {
    let mut fields = vec!["U", "p"];
    match solver {
        Some("rhoSimpleFoam" | "rhoPimpleFoam" | "buoyantSimpleFoam" | "buoyantPimpleFoam") => {
            fields.push("T")
        }
        Some("icoFoam") => return fields,
        _ => {}
    }
    match model {
        Some("SpalartAllmaras") => fields.extend(["nut", "nuTilda"]),
        Some("kOmegaSST" | "kOmega") => fields.extend(["nut", "k", "omega"]),
        Some("kEpsilon" | "realizableKE" | "RNGkEpsilon") => fields.extend(["nut", "k", "epsilon"]),
        _ => {}
    }
    fields
}

/// Adds a standard header to files that came without one.
fn with_header(rel: &str, file: &FoamFile) -> FoamFile {
    if file.header.is_some() {
        return file.clone();
    }
    let (dir, object) = rel.rsplit_once('/').unwrap_or(("", rel));
    let class = if dir == "0" {
        if object == "U" {
            "volVectorField"
        } else {
            "volScalarField"
        }
    } else if rel == "constant/polyMesh/boundary" {
        "polyBoundaryMesh"
    } else {
        "dictionary"
    };
    let mut out = file.clone();
    out.header = Some(standard_header(class, object, (!dir.is_empty()).then_some(dir)));
    out
}

fn write_atomic(target: &Path, bytes: &[u8]) -> Result<(), CaseError> {
    let dir = target.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err(dir))?;
    tmp.write_all(bytes).map_err(io_err(target))?;
    tmp.persist(target).map_err(|e| CaseError::Io {
        path: target.to_path_buf(),
        source: e.error,
    })?;
    Ok(())
}

/// Writes text to a case-relative path atomically.
pub fn write_case_file(case: &CaseLayout, rel: &str, text: &str) -> Result<(), CaseError> {
    let rel = normalize_relative(rel)?;
    write_atomic(&case.root().join(rel), text.as_bytes())
}

/// Archive directory for the files a bundle of `iteration` replaces.
pub fn archive_dir(case: &CaseLayout, iteration: u32) -> PathBuf {
    case.root()
        .join(STATE_DIR)
        .join(format!("iter-{}", iteration.saturating_sub(1)))
}

/// Writes a bundle into the case, one atomic temp-and-rename per file.
///
/// A file whose bytes would change is first copied to
/// `.copilot/iter-<n-1>/<path>`. Files with identical bytes are left alone,
/// so applying the same bundle twice is a no-op.
pub fn apply_bundle(case: &CaseLayout, bundle: &CaseBundle) -> Result<CaseLayout, CaseError> {
    let mut plan = Vec::with_capacity(bundle.len());
    for (path, file) in bundle.files() {
        let rel = normalize_relative(path)?;
        plan.push((rel.clone(), emit_dict(&with_header(&rel, file))));
    }
    for (rel, text) in plan {
        let target = case.root().join(&rel);
        if target.exists() {
            let old = fs::read(&target).map_err(io_err(&target))?;
            if old == text.as_bytes() {
                continue;
            }
            let archived = archive_dir(case, bundle.iteration).join(&rel);
            write_atomic(&archived, &old)?;
        }
        write_atomic(&target, text.as_bytes())?;
    }
    case.rescan()
}

/// Copies a case tree, skipping the `.copilot` state directory.
pub fn copy_case(src: &Path, dst: &Path) -> Result<(), CaseError> {
    fs::create_dir_all(dst).map_err(io_err(dst))?;
    for e in fs::read_dir(src).map_err(io_err(src))? {
        let e = e.map_err(io_err(src))?;
        let name = e.file_name();
        if name == STATE_DIR {
            continue;
        }
        let from = e.path();
        let to = dst.join(&name);
        if from.is_dir() {
            copy_case(&from, &to)?;
        } else {
            fs::copy(&from, &to).map_err(io_err(&from))?;
        }
    }
    Ok(())
}

/// Physical inputs of an external-aerodynamics case.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowConditions {
    /// m/s
    pub speed: f64,
    /// m²/s
    pub viscosity: f64,
    /// degrees
    pub angle_of_attack: f64,
    pub reference_length: f64,
    pub reference_area: f64,
}

impl FlowConditions {
    pub fn new(
        speed: f64,
        viscosity: f64,
        angle_of_attack: f64,
        reference_length: f64,
        reference_area: f64,
    ) -> Result<Self, String> {
        let c = Self {
            speed,
            viscosity,
            angle_of_attack,
            reference_length,
            reference_area,
        };
        for (name, v) in [
            ("speed", speed),
            ("viscosity", viscosity),
            ("reference length", reference_length),
            ("reference area", reference_area),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(format!("{name} must be positive, got {v}"));
            }
        }
        Ok(c)
    }

    pub fn reynolds_number(&self) -> f64 {
        self.speed * self.reference_length / self.viscosity
    }

    /// Unit freestream direction in the x-y plane.
    pub fn flow_direction(&self) -> [f64; 3] {
        let a = self.angle_of_attack.to_radians();
        [a.cos(), a.sin(), 0.0]
    }

    /// Lift direction, perpendicular to the freestream in the x-y plane.
    pub fn lift_direction(&self) -> [f64; 3] {
        let a = self.angle_of_attack.to_radians();
        [-a.sin(), a.cos(), 0.0]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn fixture(name: &str) -> (tempfile::TempDir, CaseLayout) {
        let src = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/cases").join(name);
        let tmp = tempfile::tempdir().unwrap();
        copy_case(&src, tmp.path()).unwrap();
        let layout = CaseLayout::open(tmp.path()).unwrap();
        (tmp, layout)
    }

    #[test]
    fn layout_scan() {
        let (_t, case) = fixture("naca0012");
        assert!(case.system().contains(&"system/controlDict".to_string()));
        assert!(case.constant().contains(&"constant/polyMesh/boundary".to_string()));
        assert_eq!(case.fields().len(), 4);
        assert_eq!(case.solver().unwrap(), "simpleFoam");
        assert_eq!(case.latest_time().as_deref(), Some("500"));
    }

    #[test]
    fn consistent_case_passes() {
        let (_t, case) = fixture("naca0012");
        let r = precheck(&case, "Simulate flow past the airfoil; the `walls' patch is the airfoil surface.").unwrap();
        assert!(r.passed(), "{:?}", r.findings);
        assert!(r.findings.is_empty());
    }

    #[test]
    fn missing_boundary_fails() {
        let (_t, case) = fixture("naca0012");
        fs::remove_file(case.path("constant/polyMesh/boundary")).unwrap();
        let case = case.rescan().unwrap();
        let r = precheck(&case, "run it").unwrap();
        assert_eq!(r.status, PrecheckStatus::Fail);
        assert!(r.findings.iter().any(|f| f.message == "mesh boundary file absent"));
    }

    #[test]
    fn unknown_patch_in_prompt_fails() {
        let (_t, case) = fixture("naca0012");
        let mut expected: BTreeSet<&str> = ["wing"].into();
        let known: BTreeSet<&str> = ["walls", "inlet", "outlet", "frontAndBack"].into();
        expected.retain(|p| !known.contains(p));
        let r = precheck(&case, "Compute lift on the wing patch.").unwrap();
        assert_eq!(r.status, PrecheckStatus::Fail);
        let unknown: Vec<_> = r.findings.iter().filter(|f| f.code == "unknown-patch").collect();
        assert_eq!(unknown.len(), expected.len());
        assert!(unknown[0].message.contains("`wing`"));
    }

    #[test]
    fn prompt_patch_extraction() {
        assert_eq!(
            patches_named_in("Please sample field p on the `wall_slat'(or `wall_airfoil', `wall_flap') patches."),
            ["wall_slat", "wall_airfoil", "wall_flap"]
        );
        assert_eq!(patches_named_in("Please sample field p on the `walls' patch."), ["walls"]);
        assert!(patches_named_in("Use a freestream velocity of 51.48 m/s.").is_empty());
    }

    #[test]
    fn patch_lists() {
        let (_t, naca) = fixture("naca0012");
        assert_eq!(list_patches(&naca).unwrap(), ["walls", "inlet", "outlet", "frontAndBack"]);
        let (_t2, hl) = fixture("30p30n");
        let p = list_patches(&hl).unwrap();
        for name in ["wall_slat", "wall_airfoil", "wall_flap"] {
            assert!(p.contains(&name.to_string()));
        }
    }

    #[test]
    fn empty_boundary_has_no_patches() {
        let f = parse_dict("FoamFile { class polyBoundaryMesh; object boundary; }\n0\n(\n)\n").unwrap();
        assert!(patches_in(&f).is_empty());
    }

    #[test]
    fn empty_bundle_changes_nothing() {
        let (t, case) = fixture("naca0012");
        let after = apply_bundle(&case, &CaseBundle::new(1)).unwrap();
        assert_eq!(after, case);
        assert!(!t.path().join(STATE_DIR).exists());
    }

    #[test]
    fn replaced_files_are_archived() {
        let (_t, case) = fixture("naca0012");
        let original = case.read_text("system/fvSchemes").unwrap();
        let mut schemes = case.read("system/fvSchemes").unwrap();
        schemes
            .root
            .get_dict_mut("gradSchemes")
            .unwrap()
            .insert("default", FoamNode::parse_value("cellLimited Gauss linear 1").unwrap());
        let mut bundle = CaseBundle::new(2);
        bundle.insert("system/fvSchemes", schemes.clone());
        apply_bundle(&case, &bundle).unwrap();
        let archived = fs::read_to_string(case.path(".copilot/iter-1/system/fvSchemes")).unwrap();
        assert_eq!(archived, original);
        assert_eq!(case.read("system/fvSchemes").unwrap(), schemes);
    }

    #[test]
    fn applying_twice_is_idempotent() {
        let (_t, case) = fixture("naca0012");
        let mut bundle = CaseBundle::new(1);
        let cd = case.read("system/controlDict").unwrap();
        let mut cd2 = cd.clone();
        cd2.root.insert("endTime", FoamNode::number(800.0));
        bundle.insert("system/controlDict", cd2);
        bundle.insert("system/extra", FoamFile::default().with_root(parse_dict("a 1;").unwrap().root));
        apply_bundle(&case, &bundle).unwrap();
        let snapshot: Vec<(String, Vec<u8>)> = case
            .rescan()
            .unwrap()
            .all_files()
            .map(|p| (p.to_string(), fs::read(case.path(p)).unwrap()))
            .collect();
        apply_bundle(&case, &bundle).unwrap();
        let again: Vec<(String, Vec<u8>)> = case
            .rescan()
            .unwrap()
            .all_files()
            .map(|p| (p.to_string(), fs::read(case.path(p)).unwrap()))
            .collect();
        assert_eq!(snapshot, again);
        // headerless input gets a standard header
        assert_eq!(case.read("system/extra").unwrap().object(), Some("extra"));
    }

    #[test]
    fn escaping_paths_are_rejected() {
        let (_t, case) = fixture("naca0012");
        let mut bundle = CaseBundle::new(1);
        bundle.insert("../etc/x", FoamFile::default());
        assert!(matches!(apply_bundle(&case, &bundle), Err(CaseError::PathEscape(_))));
        assert!(normalize_relative("/etc/passwd").is_err());
        assert_eq!(normalize_relative("system/../system/./fvSchemes").unwrap(), "system/fvSchemes");
    }

    #[test]
    fn required_field_sets() {
        assert_eq!(
            required_fields(Some("simpleFoam"), Some("SpalartAllmaras")),
            ["U", "p", "nut", "nuTilda"]
        );
        assert_eq!(required_fields(Some("icoFoam"), None), ["U", "p"]);
    }

    #[test]
    fn flow_conditions() {
        let c = FlowConditions::new(51.48, 8.58e-6, 10.0, 1.0, 1.0).unwrap();
        assert!((c.reynolds_number() - 6.0e6).abs() / 6.0e6 < 0.01);
        let l = c.lift_direction();
        let d = c.flow_direction();
        assert!((l[0] * d[0] + l[1] * d[1]).abs() < 1e-12);
        assert!(FlowConditions::new(0.0, 1e-5, 0.0, 1.0, 1.0).is_err());
        assert!(FlowConditions::new(1.0, -1e-5, 0.0, 1.0, 1.0).is_err());
    }
}
