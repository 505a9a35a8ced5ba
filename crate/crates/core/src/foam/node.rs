use std::fmt;
use std::path::PathBuf;
use std::sync::OnceLock;

use regex::Regex;

fn numeric_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^[+-]?(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?$").unwrap())
}

/// A single token value: a word, a number or a quoted string.
///
/// The source text is kept as written so emission never reformats numbers.
#[derive(Debug, Clone, PartialEq)]
pub struct Scalar {
    text: String,
    value: Option<f64>,
}

impl Scalar {
    /// Builds a scalar from raw token text, parsing a numeric value when the
    /// text looks like a number.
    pub fn from_token(text: impl Into<String>) -> Self {
        let text = text.into();
        let value = if numeric_re().is_match(&text) {
            text.parse().ok()
        } else {
            None
        };
        Self { text, value }
    }

    pub fn number(value: f64) -> Self {
        Self {
            text: format_number(value),
            value: Some(value),
        }
    }

    pub fn quoted(s: &str) -> Self {
        Self {
            text: format!("\"{}\"", s.replace('"', "\\\"")),
            value: None,
        }
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn value(&self) -> Option<f64> {
        self.value
    }

    pub fn is_number(&self) -> bool {
        self.value.is_some()
    }

    pub fn is_quoted(&self) -> bool {
        self.text.len() >= 2 && self.text.starts_with('"') && self.text.ends_with('"')
    }

    /// Text with surrounding quotes removed.
    pub fn unquoted(&self) -> &str {
        if self.is_quoted() {
            &self.text[1..self.text.len() - 1]
        } else {
            &self.text
        }
    }
}

/// Formats a float the way it should appear in a dictionary: shortest
/// round-tripping decimal, integers without a trailing `.0`.
pub fn format_number(v: f64) -> String {
    if v == v.trunc() && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        let s = format!("{v}");
        let e = format!("{v:e}");
        if e.len() < s.len() {
            e
        } else {
            s
        }
    }
}

/// The seven SI exponents `[kg m s K mol A cd]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct DimensionSet(pub [i32; 7]);

impl DimensionSet {
    pub const DIMENSIONLESS: DimensionSet = DimensionSet([0; 7]);
    pub const VELOCITY: DimensionSet = DimensionSet([0, 1, -1, 0, 0, 0, 0]);
    pub const KINEMATIC_PRESSURE: DimensionSet = DimensionSet([0, 2, -2, 0, 0, 0, 0]);
    pub const KINEMATIC_VISCOSITY: DimensionSet = DimensionSet([0, 2, -1, 0, 0, 0, 0]);
}

impl fmt::Display for DimensionSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|e| e.to_string()).collect();
        write!(f, "[{}]", parts.join(" "))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dimensioned {
    pub name: Option<String>,
    pub dimensions: DimensionSet,
    pub value: Scalar,
}

#[derive(Debug, Clone, PartialEq)]
pub enum FoamNode {
    Scalar(Scalar),
    /// A bare dimension set such as the `dimensions` entry of a field file.
    Dimensions(DimensionSet),
    Dimensioned(Dimensioned),
    List(Vec<FoamNode>),
    Dict(FoamDict),
    /// Several space separated items forming one value, e.g.
    /// `Gauss linearUpwind grad(U)` or `uniform (0 0 0)`.
    /// An empty sequence is a keyword with no value (`$inlet;`).
    Seq(Vec<FoamNode>),
    /// Verbatim source text for constructs the grammar does not model.
    Raw(String),
}

impl FoamNode {
    pub fn word(s: &str) -> Self {
        FoamNode::Scalar(Scalar::from_token(s))
    }

    pub fn number(v: f64) -> Self {
        FoamNode::Scalar(Scalar::number(v))
    }

    pub fn quoted(s: &str) -> Self {
        FoamNode::Scalar(Scalar::quoted(s))
    }

    pub fn words<S: AsRef<str>>(items: &[S]) -> Self {
        FoamNode::List(items.iter().map(|s| FoamNode::word(s.as_ref())).collect())
    }

    pub fn vector(v: [f64; 3]) -> Self {
        FoamNode::List(v.iter().map(|x| FoamNode::number(*x)).collect())
    }

    /// Parses a value fragment such as `Gauss linear` or `uniform (0 0 0)`.
    pub fn parse_value(text: &str) -> Result<Self, super::FoamError> {
        let file = super::parse_dict(&format!("v {text};"))?;
        Ok(file.root.get("v").cloned().unwrap_or(FoamNode::Seq(Vec::new())))
    }

    pub fn as_scalar(&self) -> Option<&Scalar> {
        match self {
            FoamNode::Scalar(s) => Some(s),
            _ => None,
        }
    }

    /// Word or string content of a single-token value.
    pub fn as_word(&self) -> Option<&str> {
        self.as_scalar().map(Scalar::unquoted)
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            FoamNode::Scalar(s) => s.value(),
            FoamNode::Dimensioned(d) => d.value.value(),
            _ => None,
        }
    }

    pub fn as_list(&self) -> Option<&[FoamNode]> {
        match self {
            FoamNode::List(items) => Some(items),
            _ => None,
        }
    }

    pub fn as_dict(&self) -> Option<&FoamDict> {
        match self {
            FoamNode::Dict(d) => Some(d),
            _ => None,
        }
    }

    pub fn as_dict_mut(&mut self) -> Option<&mut FoamDict> {
        match self {
            FoamNode::Dict(d) => Some(d),
            _ => None,
        }
    }

    /// Value rendered on one line, e.g. for lint messages.
    pub fn to_inline_string(&self) -> String {
        super::emit::render_inline(self)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Entry {
    Keyed { key: String, value: FoamNode },
    /// A `#include`-style directive line, kept verbatim and never evaluated.
    Directive(String),
    /// Unkeyed content, such as the patch list of `polyMesh/boundary`.
    Bare(FoamNode),
}

/// An ordered dictionary. Keywords are unique within one level.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FoamDict {
    entries: Vec<Entry>,
}

impl FoamDict {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().filter_map(|e| match e {
            Entry::Keyed { key, .. } => Some(key.as_str()),
            _ => None,
        })
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &FoamNode)> {
        self.entries.iter().filter_map(|e| match e {
            Entry::Keyed { key, value } => Some((key.as_str(), value)),
            _ => None,
        })
    }

    pub fn contains_key(&self, key: &str) -> bool {
        self.get(key).is_some()
    }

    pub fn get(&self, key: &str) -> Option<&FoamNode> {
        self.iter().find(|(k, _)| *k == key).map(|(_, v)| v)
    }

    pub fn get_mut(&mut self, key: &str) -> Option<&mut FoamNode> {
        self.entries.iter_mut().find_map(|e| match e {
            Entry::Keyed { key: k, value } if k == key => Some(value),
            _ => None,
        })
    }

    pub fn get_dict(&self, key: &str) -> Option<&FoamDict> {
        self.get(key).and_then(FoamNode::as_dict)
    }

    pub fn get_dict_mut(&mut self, key: &str) -> Option<&mut FoamDict> {
        self.get_mut(key).and_then(FoamNode::as_dict_mut)
    }

    /// Slash-separated lookup through nested dictionaries.
    pub fn lookup(&self, path: &str) -> Option<&FoamNode> {
        let mut parts = path.split('/');
        let first = parts.next()?;
        let mut node = self.get(first)?;
        for part in parts {
            node = node.as_dict()?.get(part)?;
        }
        Some(node)
    }

    /// Inserts or replaces a keyword. A replaced keyword keeps its position.
    pub fn insert(&mut self, key: impl Into<String>, value: FoamNode) -> Option<FoamNode> {
        let key = key.into();
        if let Some(slot) = self.get_mut(&key) {
            return Some(std::mem::replace(slot, value));
        }
        self.entries.push(Entry::Keyed { key, value });
        None
    }

    /// Builder form of [`FoamDict::insert`].
    pub fn with(mut self, key: impl Into<String>, value: FoamNode) -> Self {
        self.insert(key, value);
        self
    }

    pub fn remove(&mut self, key: &str) -> Option<FoamNode> {
        let idx = self
            .entries
            .iter()
            .position(|e| matches!(e, Entry::Keyed { key: k, .. } if k == key))?;
        match self.entries.remove(idx) {
            Entry::Keyed { value, .. } => Some(value),
            _ => unreachable!(),
        }
    }

    pub fn push_directive(&mut self, line: impl Into<String>) {
        self.entries.push(Entry::Directive(line.into()));
    }

    pub(crate) fn push_entry(&mut self, entry: Entry) {
        self.entries.push(entry);
    }

    pub(crate) fn remove_entry(&mut self, idx: usize) -> Entry {
        self.entries.remove(idx)
    }
}

/// A parsed dictionary file: the `FoamFile` header plus body.
///
/// Equality is structural over header and body; `source_path` is ignored.
#[derive(Debug, Clone, Default)]
pub struct FoamFile {
    pub header: Option<FoamDict>,
    pub root: FoamDict,
    pub source_path: Option<PathBuf>,
}

impl PartialEq for FoamFile {
    fn eq(&self, other: &Self) -> bool {
        self.header == other.header && self.root == other.root
    }
}

impl FoamFile {
    /// A file with a standard ascii header for the given class and object.
    pub fn new(class: &str, object: &str) -> Self {
        Self {
            header: Some(standard_header(class, object, None)),
            root: FoamDict::new(),
            source_path: None,
        }
    }

    pub fn with_root(mut self, root: FoamDict) -> Self {
        self.root = root;
        self
    }

    pub fn class(&self) -> Option<&str> {
        self.header.as_ref()?.get("class")?.as_word()
    }

    pub fn object(&self) -> Option<&str> {
        self.header.as_ref()?.get("object")?.as_word()
    }
}

pub fn standard_header(class: &str, object: &str, location: Option<&str>) -> FoamDict {
    let mut h = FoamDict::new()
        .with("version", FoamNode::word("2.0"))
        .with("format", FoamNode::word("ascii"))
        .with("class", FoamNode::word(class));
    if let Some(loc) = location {
        h.insert("location", FoamNode::quoted(loc));
    }
    h.with("object", FoamNode::word(object))
}
