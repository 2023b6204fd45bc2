//! Declarative experiment descriptions.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cccp::{decomposition, PolyDecomposition};
use crate::em::{HmmKind, Separation};
use crate::error::{Error, Result};
use crate::nmf::NmfUpdate;
use crate::optimizer::StopRule;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    EmMog,
    EmHmm,
    GisMaxent,
    GisLogistic,
    Nmf,
    Cccp,
}

impl Algorithm {
    pub const ALL: [Algorithm; 6] = [
        Algorithm::EmMog,
        Algorithm::EmHmm,
        Algorithm::GisMaxent,
        Algorithm::GisLogistic,
        Algorithm::Nmf,
        Algorithm::Cccp,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::EmMog => "em-mog",
            Algorithm::EmHmm => "em-hmm",
            Algorithm::GisMaxent => "gis-maxent",
            Algorithm::GisLogistic => "gis-logistic",
            Algorithm::Nmf => "nmf",
            Algorithm::Cccp => "cccp",
        }
    }

    fn is_gis(self) -> bool {
        matches!(self, Algorithm::GisMaxent | Algorithm::GisLogistic)
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One preprocessing stage, written as `none`, `translate`, `whiten` or
/// `decomposition:<name>` in config files.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Preprocessing {
    None,
    Translate,
    Whiten,
    Decomposition(String),
}

impl FromStr for Preprocessing {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "none" => Ok(Preprocessing::None),
            "translate" => Ok(Preprocessing::Translate),
            "whiten" => Ok(Preprocessing::Whiten),
            _ => match s.strip_prefix("decomposition:") {
                Some(name) if !name.is_empty() => Ok(Preprocessing::Decomposition(name.to_string())),
                _ => Err(format!(
                    "unknown preprocessing `{s}` (expected none, translate, whiten or decomposition:<name>)"
                )),
            },
        }
    }
}

impl TryFrom<String> for Preprocessing {
    type Error = String;

    fn try_from(s: String) -> std::result::Result<Self, String> {
        s.parse()
    }
}

impl From<Preprocessing> for String {
    fn from(p: Preprocessing) -> String {
        p.to_string()
    }
}

impl fmt::Display for Preprocessing {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Preprocessing::None => f.write_str("none"),
            Preprocessing::Translate => f.write_str("translate"),
            Preprocessing::Whiten => f.write_str("whiten"),
            Preprocessing::Decomposition(name) => write!(f, "decomposition:{name}"),
        }
    }
}

/// Generator parameters. Unset fields take per-algorithm defaults; fields
/// that the chosen algorithm does not use are rejected.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields, default)]
pub struct DataSpec {
    pub seed: u64,
    /// Read the data from this file instead of generating it.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub file: Option<PathBuf>,

    #[serde(skip_serializing_if = "Option::is_none")]
    pub separation: Option<Separation>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub components: Option<usize>,

    #[serde(skip_serializing_if = "Option::is_none")]
    pub kind: Option<HmmKind>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub states: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub symbols: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub num_seqs: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub len: Option<usize>,

    #[serde(skip_serializing_if = "Option::is_none")]
    pub outcomes: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub offset: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub correlated: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oriented: Option<bool>,

    #[serde(skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub count: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rank: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub update: Option<NmfUpdate>,

    #[serde(skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
}

impl DataSpec {
    /// `(field, is set)` for every algorithm-specific field.
    fn set_fields(&self) -> [(&'static str, bool); 19] {
        [
            ("separation", self.separation.is_some()),
            ("n", self.n.is_some()),
            ("d", self.d.is_some()),
            ("components", self.components.is_some()),
            ("kind", self.kind.is_some()),
            ("states", self.states.is_some()),
            ("symbols", self.symbols.is_some()),
            ("numSeqs", self.num_seqs.is_some()),
            ("len", self.len.is_some()),
            ("outcomes", self.outcomes.is_some()),
            ("offset", self.offset.is_some()),
            ("correlated", self.correlated.is_some()),
            ("oriented", self.oriented.is_some()),
            ("dim", self.dim.is_some()),
            ("count", self.count.is_some()),
            ("rank", self.rank.is_some()),
            ("update", self.update.is_some()),
            ("x0", self.x0.is_some()),
            ("file", self.file.is_some()),
        ]
    }
}

fn allowed_fields(algorithm: Algorithm) -> &'static [&'static str] {
    match algorithm {
        Algorithm::EmMog => &["separation", "n", "d", "components", "file"],
        Algorithm::EmHmm => &["kind", "states", "symbols", "numSeqs", "len", "file"],
        Algorithm::GisMaxent => &["outcomes", "d", "offset", "correlated", "file"],
        Algorithm::GisLogistic => &["n", "d", "offset", "oriented", "file"],
        Algorithm::Nmf => &["dim", "count", "offset", "rank", "update", "file"],
        Algorithm::Cccp => &["x0"],
    }
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct ExperimentSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub algorithm: Algorithm,
    #[serde(default)]
    pub data_spec: DataSpec,
    #[serde(default)]
    pub preprocessing: Vec<Preprocessing>,
    #[serde(default)]
    pub stop: StopRule,
    /// Run directory. Relative paths resolve against the output root.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outputs: Option<PathBuf>,
    /// Extra polynomial decompositions for `cccp`, selectable by name.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub decompositions: Vec<PolyDecomposition>,
    /// Estimate the rate matrix and direction cosines at the terminal point.
    #[serde(default = "default_true")]
    pub diagnostics: bool,
}

impl ExperimentSpec {
    pub fn new(algorithm: Algorithm, data_spec: DataSpec) -> Self {
        Self {
            name: None,
            algorithm,
            data_spec,
            preprocessing: Vec::new(),
            stop: StopRule::default(),
            outputs: None,
            decompositions: Vec::new(),
            diagnostics: true,
        }
    }

    pub fn with_preprocessing(mut self, steps: &[Preprocessing]) -> Self {
        self.preprocessing = steps.to_vec();
        self
    }

    pub fn with_stop(mut self, stop: StopRule) -> Self {
        self.stop = stop;
        self
    }

    pub fn parse(text: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(text).map_err(|e| Error::config(json_field(&e), e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let mut spec = Self::parse(&text).map_err(|e| e.context(format!("reading {}", path.display())))?;
        // data files are relative to the config
        if let (Some(file), Some(dir)) = (&spec.data_spec.file, path.parent()) {
            if file.is_relative() {
                spec.data_spec.file = Some(dir.join(file));
            }
        }
        Ok(spec)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("specs always serialize")
    }

    /// A short label for tables: the name, else algorithm plus preprocessing.
    pub fn label(&self) -> String {
        if let Some(name) = &self.name {
            return name.clone();
        }
        let steps: Vec<String> = self
            .preprocessing
            .iter()
            .filter(|p| **p != Preprocessing::None)
            .map(ToString::to_string)
            .collect();
        if steps.is_empty() {
            self.algorithm.to_string()
        } else {
            format!("{}[{}]", self.algorithm, steps.join("+"))
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.stop.validate()?;
        let allowed = allowed_fields(self.algorithm);
        for (field, set) in self.data_spec.set_fields() {
            if set && !allowed.contains(&field) {
                return Err(Error::config(
                    format!("dataSpec.{field}"),
                    format!("not used by {}", self.algorithm),
                ));
            }
        }
        let positive = [
            ("n", self.data_spec.n),
            ("d", self.data_spec.d),
            ("components", self.data_spec.components),
            ("states", self.data_spec.states),
            ("symbols", self.data_spec.symbols),
            ("numSeqs", self.data_spec.num_seqs),
            ("outcomes", self.data_spec.outcomes),
            ("dim", self.data_spec.dim),
            ("count", self.data_spec.count),
            ("rank", self.data_spec.rank),
        ];
        for (field, value) in positive {
            if value == Some(0) {
                return Err(Error::config(format!("dataSpec.{field}"), "must be positive"));
            }
        }
        if self.data_spec.len.is_some_and(|l| l < 2) {
            return Err(Error::config("dataSpec.len", "sequences need at least 2 symbols"));
        }
        if self.data_spec.n.is_some_and(|n| n < 2) {
            return Err(Error::config("dataSpec.n", "need at least 2 data points"));
        }
        if self.data_spec.offset.is_some_and(|o| !o.is_finite()) {
            return Err(Error::config("dataSpec.offset", "must be finite"));
        }
        if let Some(x0) = &self.data_spec.x0 {
            if x0.is_empty() || x0.iter().any(|v| !v.is_finite()) {
                return Err(Error::config(
                    "dataSpec.x0",
                    "must be a non-empty list of finite numbers",
                ));
            }
        }
        for (i, step) in self.preprocessing.iter().enumerate() {
            let field = format!("preprocessing[{i}]");
            let ok = match step {
                Preprocessing::None => true,
                Preprocessing::Translate => self.algorithm.is_gis() || self.algorithm == Algorithm::Nmf,
                Preprocessing::Whiten => self.algorithm.is_gis(),
                Preprocessing::Decomposition(_) => self.algorithm == Algorithm::Cccp,
            };
            if !ok {
                return Err(Error::config(
                    field,
                    format!("`{step}` does not apply to {}", self.algorithm),
                ));
            }
        }
        for d in &self.decompositions {
            PolyDecomposition::new(d.name.clone(), d.vex.clone(), d.cave.clone())
                .map_err(|e| Error::config(format!("decompositions.{}", d.name), e.to_string()))?;
        }
        if !self.decompositions.is_empty() && self.algorithm != Algorithm::Cccp {
            return Err(Error::config(
                "decompositions",
                format!("not used by {}", self.algorithm),
            ));
        }
        if self.algorithm == Algorithm::Cccp {
            self.decomposition()?;
        }
        Ok(())
    }

    /// The decomposition selected by a `decomposition:<name>` stage.
    pub fn decomposition(&self) -> Result<PolyDecomposition> {
        let names: Vec<&str> = self
            .preprocessing
            .iter()
            .filter_map(|p| match p {
                Preprocessing::Decomposition(n) => Some(n.as_str()),
                _ => None,
            })
            .collect();
        let name = match names.as_slice() {
            [one] => *one,
            [] => {
                return Err(Error::config(
                    "preprocessing",
                    "cccp needs one `decomposition:<name>` entry",
                ))
            }
            _ => return Err(Error::config("preprocessing", "more than one decomposition selected")),
        };
        if let Some(d) = self.decompositions.iter().find(|d| d.name == name) {
            return Ok(d.clone());
        }
        decomposition(name).ok_or_else(|| Error::config("preprocessing", format!("unknown decomposition `{name}`")))
    }
}

/// Best-effort field name for a JSON error.
fn json_field(e: &serde_json::Error) -> String {
    let msg = e.to_string();
    for marker in ["unknown field `", "missing field `", "unknown variant `"] {
        if let Some(rest) = msg.split(marker).nth(1) {
            if let Some(name) = rest.split('`').next() {
                return name.to_string();
            }
        }
    }
    format!("line {}", e.line())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn field_of(err: Error) -> String {
        match err.root() {
            Error::Config { field, .. } => field.clone(),
            other => panic!("not a config error: {other}"),
        }
    }

    #[test]
    fn parses_minimal_spec() {
        let spec = ExperimentSpec::parse(
            r#"{"algorithm": "em-mog", "dataSpec": {"separation": "well", "n": 200, "seed": 7}}"#,
        )
        .unwrap();
        assert_eq!(spec.algorithm, Algorithm::EmMog);
        assert_eq!(spec.data_spec.n, Some(200));
        assert_eq!(spec.stop, StopRule::default());
        assert!(spec.diagnostics);
        let back = ExperimentSpec::parse(&spec.to_json()).unwrap();
        assert_eq!(back, spec);
    }

    #[test]
    fn preprocessing_round_trips() {
        for text in ["none", "translate", "whiten", "decomposition:dec2"] {
            let p: Preprocessing = text.parse().unwrap();
            assert_eq!(p.to_string(), text);
        }
        assert!("decomposition:".parse::<Preprocessing>().is_err());
        assert!("scale".parse::<Preprocessing>().is_err());
    }

    #[test]
    fn invalid_fields_are_named() {
        let cases = [
            (r#"{"algorithm": "em-mog", "dataSpec": {"rank": 3}}"#, "dataSpec.rank"),
            (
                r#"{"algorithm": "em-mog", "preprocessing": ["whiten"]}"#,
                "preprocessing[0]",
            ),
            (
                r#"{"algorithm": "nmf", "preprocessing": ["translate", "whiten"]}"#,
                "preprocessing[1]",
            ),
            (r#"{"algorithm": "cccp"}"#, "preprocessing"),
            (
                r#"{"algorithm": "cccp", "preprocessing": ["decomposition:dec9"]}"#,
                "preprocessing",
            ),
            (
                r#"{"algorithm": "nmf", "stop": {"relTol": 2.0, "maxIter": 5}}"#,
                "stop.relTol",
            ),
            (r#"{"algorithm": "nmf", "colour": 1}"#, "colour"),
            (r#"{"algorithm": "kmeans"}"#, "kmeans"),
            (r#"{"algorithm": "nmf", "dataSpec": {"rank": 0}}"#, "dataSpec.rank"),
        ];
        for (text, field) in cases {
            assert_eq!(field_of(ExperimentSpec::parse(text).unwrap_err()), field, "{text}");
        }
    }

    #[test]
    fn custom_decompositions_resolve_by_name() {
        let spec = ExperimentSpec::parse(
            r#"{"algorithm": "cccp", "preprocessing": ["decomposition:mine"],
                "decompositions": [{"name": "mine", "vex": [0, 2, 1, 0, 1], "cave": [-2, 0, -4]}]}"#,
        )
        .unwrap();
        assert_eq!(spec.decomposition().unwrap().cave, vec![-2.0, 0.0, -4.0]);
        let bad = ExperimentSpec::parse(
            r#"{"algorithm": "cccp", "preprocessing": ["decomposition:bad"],
                "decompositions": [{"name": "bad", "vex": [0, 0, -1], "cave": [0]}]}"#,
        );
        assert_eq!(field_of(bad.unwrap_err()), "decompositions.bad");
    }

    #[test]
    fn labels_describe_preprocessing() {
        let spec = ExperimentSpec::new(Algorithm::GisLogistic, DataSpec::default())
            .with_preprocessing(&[Preprocessing::Translate, Preprocessing::Whiten]);
        assert_eq!(spec.label(), "gis-logistic[translate+whiten]");
    }
}
