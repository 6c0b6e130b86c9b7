//! JSON run configuration.
//!
//! ```json
//! {
//!   "patches": ["flat", {"name": "bowl", "graph": "0.1*(x1^2+x2^2)", "domain": {"disk": 1.0}}],
//!   "quadrature": {"order": 12, "refinements": 2},
//!   "family": {"degrees": [2, 4, 6], "exponent": 3},
//!   "checks": ["gram-det", {"name": "ibp-boundary", "tolerance": 1e-8}],
//!   "output": "report",
//!   "seed": 7
//! }
//! ```
//!
//! Patches are built-in names or full specs; checks are names or objects
//! with tolerances. Unknown keys are rejected and every error carries the
//! JSON pointer of the offending value.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::Value;

use lipbound_core::verify::{default_tolerance, DENSITY_CHECK};
use lipbound_core::{ChartDomain, Error, LipschitzPatch, Rect, SuiteSettings, Tolerance};

use crate::corpus::{self, default_epsilon, PatchSpec, Tag, DEFAULT_HALF_HEIGHT};

pub const DEFAULT_OUTPUT: &str = "report";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{pointer}: {message}")]
    Invalid { pointer: String, message: String },
}

impl ConfigError {
    fn at(pointer: impl Into<String>, message: impl Into<String>) -> ConfigError {
        ConfigError::Invalid {
            pointer: pointer.into(),
            message: message.into(),
        }
    }

    /// JSON pointer of the offending value, if the error is about content.
    pub fn pointer(&self) -> Option<&str> {
        match self {
            ConfigError::Invalid { pointer, .. } => Some(pointer),
            ConfigError::Io { .. } => None,
        }
    }
}

/// A check with the tolerances it is judged by.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckSpec {
    pub name: String,
    pub tolerance: Tolerance,
}

impl CheckSpec {
    pub fn with_defaults(name: &str) -> Option<CheckSpec> {
        default_tolerance(name).map(|tolerance| CheckSpec {
            name: name.to_string(),
            tolerance,
        })
    }
}

/// Validated configuration with defaults filled in.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub patches: Vec<PatchSpec>,
    pub checks: Vec<CheckSpec>,
    pub settings: SuiteSettings,
    pub output: PathBuf,
}

impl RunConfig {
    /// Built-in corpus, every check with default tolerances.
    pub fn builtin() -> RunConfig {
        RunConfig {
            patches: corpus::builtin(),
            checks: all_checks(),
            settings: SuiteSettings::default(),
            output: PathBuf::from(DEFAULT_OUTPUT),
        }
    }

    pub fn build_patches(&self) -> Result<Vec<LipschitzPatch>, ConfigError> {
        self.patches
            .iter()
            .enumerate()
            .map(|(i, p)| p.build().map_err(|e| patch_error(i, &e)))
            .collect()
    }
}

/// The asserting checks followed by the density report.
pub fn all_checks() -> Vec<CheckSpec> {
    lipbound_core::verify::CHECK_NAMES
        .iter()
        .copied()
        .chain([DENSITY_CHECK])
        .filter_map(CheckSpec::with_defaults)
        .collect()
}

fn patch_error(index: usize, e: &Error) -> ConfigError {
    match e {
        Error::Syntax { .. } | Error::UnsupportedNonsmooth { .. } => {
            ConfigError::at(format!("/patches/{index}/graph"), e.to_string())
        }
        _ => ConfigError::at(format!("/patches/{index}"), e.to_string()),
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    patches: Option<Vec<Value>>,
    quadrature: Option<RawQuadrature>,
    family: Option<RawFamily>,
    checks: Option<Vec<Value>>,
    output: Option<PathBuf>,
    seed: Option<u64>,
    trials: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawQuadrature {
    order: Option<usize>,
    refinements: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFamily {
    degrees: Option<Vec<usize>>,
    exponent: Option<u32>,
    support: Option<[[f64; 2]; 2]>,
    vertical_subdivisions: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPatch {
    name: String,
    graph: Option<String>,
    domain: Option<RawDomain>,
    epsilon: Option<f64>,
    h: Option<f64>,
    anchor: Option<[f64; 3]>,
    frame: Option<RawFrame>,
    tags: Option<Vec<String>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "lowercase")]
enum RawDomain {
    Rect([[f64; 2]; 2]),
    Disk(f64),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFrame {
    w1: [f64; 3],
    w2: [f64; 3],
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCheck {
    name: String,
    tolerance: Option<f64>,
    secondary_tolerance: Option<f64>,
}

fn pointer_of(path: &serde_path_to_error::Path) -> String {
    use serde_path_to_error::Segment;
    let mut out = String::new();
    for seg in path.iter() {
        out.push('/');
        match seg {
            Segment::Seq { index } => out.push_str(&index.to_string()),
            Segment::Map { key } => out.push_str(&key.replace('~', "~0").replace('/', "~1")),
            Segment::Enum { variant } => out.push_str(variant),
            Segment::Unknown => out.push('?'),
        }
    }
    out
}

fn from_value<T: DeserializeOwned>(value: Value, prefix: &str) -> Result<T, ConfigError> {
    serde_path_to_error::deserialize(value).map_err(|e| {
        let inner = pointer_of(e.path());
        let message = e.inner().to_string();
        ConfigError::at(
            format!("{prefix}{}", if inner == "/." { String::new() } else { inner }),
            message,
        )
    })
}

pub fn load_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_config(&text)
}

pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let value: Value = serde_json::from_str(text).map_err(|e| ConfigError::at("", format!("invalid JSON: {e}")))?;
    let raw: RawConfig = from_value(value, "")?;
    let mut settings = SuiteSettings::default();

    if let Some(q) = raw.quadrature {
        if let Some(order) = q.order {
            if !(1..=64).contains(&order) {
                return Err(ConfigError::at("/quadrature/order", "order must lie in 1..=64"));
            }
            settings.order = order;
        }
        if let Some(r) = q.refinements {
            if r > 6 {
                return Err(ConfigError::at("/quadrature/refinements", "at most 6 refinements"));
            }
            settings.refinements = r;
        }
    }
    if let Some(f) = raw.family {
        if let Some(d) = f.degrees {
            if d.is_empty() || d.iter().any(|&k| k > 12) {
                return Err(ConfigError::at(
                    "/family/degrees",
                    "degrees must be a non-empty list of values up to 12",
                ));
            }
            settings.degrees = d;
        }
        if let Some(e) = f.exponent {
            if !(1..=8).contains(&e) {
                return Err(ConfigError::at("/family/exponent", "bump exponent must lie in 1..=8"));
            }
            settings.exponent = e;
        }
        if let Some([a, b]) = f.support {
            if !(a[0] < a[1] && b[0] < b[1]) {
                return Err(ConfigError::at(
                    "/family/support",
                    "support box must have lo < hi in both directions",
                ));
            }
            settings.support = Some(Rect::new((a[0], a[1]), (b[0], b[1])));
        }
        if let Some(v) = f.vertical_subdivisions {
            settings.vertical_subdivisions = v.max(1);
        }
    }
    if let Some(seed) = raw.seed {
        settings.seed = seed;
    }
    if let Some(t) = raw.trials {
        settings.trials = t;
    }

    let patches = match raw.patches {
        None => corpus::builtin(),
        Some(list) => {
            let mut out: Vec<PatchSpec> = Vec::with_capacity(list.len());
            for (i, v) in list.into_iter().enumerate() {
                let spec = patch_spec(v, i)?;
                if out.iter().any(|p| p.name == spec.name) {
                    return Err(ConfigError::at(
                        format!("/patches/{i}/name"),
                        format!("duplicate patch name `{}`", spec.name),
                    ));
                }
                out.push(spec);
            }
            out
        }
    };

    let checks = match raw.checks {
        None => all_checks(),
        Some(list) => list
            .into_iter()
            .enumerate()
            .map(|(i, v)| check_spec(v, i))
            .collect::<Result<_, _>>()?,
    };

    let config = RunConfig {
        patches,
        checks,
        settings,
        output: raw.output.unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT)),
    };
    config.build_patches()?;
    Ok(config)
}

fn patch_spec(v: Value, i: usize) -> Result<PatchSpec, ConfigError> {
    let prefix = format!("/patches/{i}");
    if let Value::String(name) = &v {
        return corpus::lookup(name)
            .ok_or_else(|| ConfigError::at(&prefix, format!("unknown built-in patch `{name}`")));
    }
    let raw: RawPatch = from_value(v, &prefix)?;
    let base = corpus::lookup(&raw.name);
    let graph = match (raw.graph, &base) {
        (Some(g), _) => g,
        (None, Some(b)) => b.graph.clone(),
        (None, None) => {
            return Err(ConfigError::at(
                format!("{prefix}/graph"),
                format!("`{}` is not a built-in patch, so a graph is required", raw.name),
            ))
        }
    };
    let domain = match raw.domain {
        Some(RawDomain::Rect([a, b])) => {
            if !(a[0] < a[1] && b[0] < b[1]) {
                return Err(ConfigError::at(
                    format!("{prefix}/domain/rect"),
                    "rectangle must have lo < hi",
                ));
            }
            ChartDomain::rect((a[0], a[1]), (b[0], b[1]))
        }
        Some(RawDomain::Disk(r)) => {
            if !(r > 0.0 && r.is_finite()) {
                return Err(ConfigError::at(
                    format!("{prefix}/domain/disk"),
                    "radius must be positive",
                ));
            }
            ChartDomain::Disk { radius: r }
        }
        None => base
            .as_ref()
            .map(|b| b.domain)
            .unwrap_or(ChartDomain::rect((-1.0, 1.0), (-1.0, 1.0))),
    };
    let positive = |v: Option<f64>, key: &str, default: f64| match v {
        Some(x) if x > 0.0 && x.is_finite() => Ok(x),
        Some(_) => Err(ConfigError::at(format!("{prefix}/{key}"), "must be positive")),
        None => Ok(default),
    };
    let tags = match raw.tags {
        Some(t) => t
            .iter()
            .enumerate()
            .map(|(k, s)| {
                Tag::parse(s).ok_or_else(|| ConfigError::at(format!("{prefix}/tags/{k}"), format!("unknown tag `{s}`")))
            })
            .collect::<Result<_, _>>()?,
        None => base.as_ref().map(|b| b.tags.clone()).unwrap_or_default(),
    };
    Ok(PatchSpec {
        name: raw.name,
        graph,
        domain,
        epsilon: positive(raw.epsilon, "epsilon", default_epsilon(&domain))?,
        h: positive(raw.h, "h", DEFAULT_HALF_HEIGHT)?,
        anchor: raw.anchor.unwrap_or([0.0; 3]),
        frame: raw.frame.map(|f| (f.w1, f.w2)),
        tags,
    })
}

fn check_spec(v: Value, i: usize) -> Result<CheckSpec, ConfigError> {
    let prefix = format!("/checks/{i}");
    let raw = match v {
        Value::String(name) => RawCheck {
            name,
            tolerance: None,
            secondary_tolerance: None,
        },
        other => from_value(other, &prefix)?,
    };
    let mut spec = CheckSpec::with_defaults(&raw.name).ok_or_else(|| {
        ConfigError::at(
            if raw.tolerance.is_some() || raw.secondary_tolerance.is_some() {
                format!("{prefix}/name")
            } else {
                prefix.clone()
            },
            format!("unknown check `{}`", raw.name),
        )
    })?;
    let valid = |t: f64, key: &str| {
        if t >= 0.0 && !t.is_nan() {
            Ok(t)
        } else {
            Err(ConfigError::at(
                format!("{prefix}/{key}"),
                format!("tolerance must be non-negative, got {t}"),
            ))
        }
    };
    if let Some(t) = raw.tolerance {
        spec.tolerance.primary = valid(t, "tolerance")?;
    }
    if let Some(t) = raw.secondary_tolerance {
        spec.tolerance.secondary = Some(valid(t, "secondary_tolerance")?);
    }
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_defaults() {
        let c = parse_config(r#"{"patches": ["flat"], "checks": ["gram-det"]}"#).unwrap();
        assert_eq!(c.settings.order, 12);
        assert_eq!(c.settings.refinements, 2);
        assert_eq!(c.checks[0].tolerance.primary, 1e-12);
        assert_eq!(c.patches[0].graph, "0");
    }

    #[test]
    fn syntax_error_points_at_graph() {
        let e = parse_config(r#"{"patches": [{"name": "p", "graph": "abs(x2"}]}"#).unwrap_err();
        assert_eq!(e.pointer(), Some("/patches/0/graph"));
        assert!(e.to_string().contains("byte 6"), "{e}");
    }

    #[test]
    fn negative_tolerance_is_rejected() {
        let e = parse_config(r#"{"checks": [{"name": "gram-det", "tolerance": -1}]}"#).unwrap_err();
        assert_eq!(e.pointer(), Some("/checks/0/tolerance"));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let e = parse_config(r#"{"quadrature": {"order": 4, "levels": 2}}"#).unwrap_err();
        assert_eq!(e.pointer(), Some("/quadrature/levels"), "{e}");
        let e = parse_config(r#"{"patches": [{"name": "p", "graph": "0", "colour": 1}]}"#).unwrap_err();
        assert_eq!(e.pointer(), Some("/patches/0/colour"), "{e}");
        let e = parse_config(r#"{"colour": 1}"#).unwrap_err();
        assert_eq!(e.pointer(), Some("/colour"), "{e}");
    }

    #[test]
    fn type_errors_carry_pointers() {
        let e = parse_config(r#"{"quadrature": {"order": "twelve"}}"#).unwrap_err();
        assert_eq!(e.pointer(), Some("/quadrature/order"), "{e}");
        let e = parse_config(r#"{"patches": [{"name": "p", "graph": "0", "domain": {"disk": "x"}}]}"#).unwrap_err();
        assert_eq!(e.pointer(), Some("/patches/0/domain/disk"), "{e}");
    }

    #[test]
    fn custom_patches_and_duplicates() {
        let c = parse_config(
            r#"{"patches": [{"name": "bowl", "graph": "0.1*(x1^2+x2^2)", "domain": {"disk": 1.0}, "tags": ["smooth"]}]}"#,
        )
        .unwrap();
        assert_eq!(c.patches[0].epsilon, 1.0);
        let e = parse_config(r#"{"patches": ["flat", {"name": "flat", "graph": "x2"}]}"#).unwrap_err();
        assert_eq!(e.pointer(), Some("/patches/1/name"));
        let e = parse_config(r#"{"patches": ["nope"]}"#).unwrap_err();
        assert_eq!(e.pointer(), Some("/patches/0"));
        let e = parse_config(r#"{"patches": [{"name": "steep", "graph": "3*x1", "h": 1}]}"#).unwrap_err();
        assert_eq!(e.pointer(), Some("/patches/0"));
    }

    #[test]
    fn zero_tolerance_is_allowed_and_unknown_check_is_not() {
        let c = parse_config(r#"{"checks": [{"name": "lifting", "tolerance": 0}]}"#).unwrap();
        assert_eq!(c.checks[0].tolerance.primary, 0.0);
        let e = parse_config(r#"{"checks": ["lifting", "bogus"]}"#).unwrap_err();
        assert_eq!(e.pointer(), Some("/checks/1"));
    }
}
