//! Extraction schemas, cell values, and value normalization.

mod units;

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::json::{parse_lenient_json, JsonError};

pub use units::{convert, convert_unit, Dimension, Unit, UnitError};

pub const DEFAULT_MISSING_TOKEN: &str = "No information";

const MPEA_CONFIG: &str = include_str!("../assets/schemas/mpea.json");
const DIFFUSION_CONFIG: &str = include_str!("../assets/schemas/diffusion.json");

#[derive(Debug, Error)]
pub enum SchemaError {
    #[error("malformed schema config: {0}")]
    Parse(#[from] JsonError),
    #[error("schema config has the wrong shape: {0}")]
    Shape(String),
    #[error("invalid schema: {0}")]
    Validation(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FieldKind {
    Text,
    Number,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceClass {
    Identifier,
    Related,
    LowVariance,
    HighVariance,
}

impl VarianceClass {
    pub fn as_str(self) -> &'static str {
        match self {
            VarianceClass::Identifier => "identifier",
            VarianceClass::Related => "related",
            VarianceClass::LowVariance => "low_variance",
            VarianceClass::HighVariance => "high_variance",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FieldSpec {
    pub name: String,
    pub kind: FieldKind,
    pub unit: Option<String>,
    pub description: String,
    pub variance_class: VarianceClass,
    pub required_for_match: bool,
}

impl FieldSpec {
    fn type_name(&self) -> &'static str {
        match self.kind {
            FieldKind::Text => "string",
            FieldKind::Number => "float",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExtractionSchema {
    pub name: String,
    pub fields: Vec<FieldSpec>,
    pub required_match_fields: Vec<String>,
    pub missing_token: String,
}

#[derive(Deserialize)]
struct RawSchema {
    name: String,
    #[serde(default)]
    missing_token: Option<String>,
    required_match_fields: Vec<String>,
    fields: Vec<RawField>,
}

#[derive(Deserialize)]
struct RawField {
    name: String,
    kind: FieldKind,
    #[serde(default)]
    unit: Option<String>,
    #[serde(default)]
    description: String,
    variance_class: VarianceClass,
}

/// Parses and validates a schema config document.
pub fn load_schema(config_text: &str) -> Result<ExtractionSchema, SchemaError> {
    let value = parse_lenient_json(config_text)?;
    let raw: RawSchema =
        serde_json::from_value(value).map_err(|e| SchemaError::Shape(e.to_string()))?;

    if raw.fields.is_empty() {
        return Err(SchemaError::Validation("schema has no fields".into()));
    }
    let mut seen = HashSet::new();
    for f in &raw.fields {
        if f.name.trim().is_empty() {
            return Err(SchemaError::Validation("field with empty name".into()));
        }
        if !seen.insert(f.name.as_str()) {
            return Err(SchemaError::Validation(format!("duplicate field `{}`", f.name)));
        }
        if f.unit.is_some() && f.kind != FieldKind::Number {
            return Err(SchemaError::Validation(format!(
                "field `{}` has a unit but is not numeric",
                f.name
            )));
        }
    }
    if raw.required_match_fields.is_empty() {
        return Err(SchemaError::Validation(
            "required_match_fields must not be empty".into(),
        ));
    }
    let unknown: Vec<&str> = raw
        .required_match_fields
        .iter()
        .filter(|r| !seen.contains(r.as_str()))
        .map(String::as_str)
        .collect();
    if !unknown.is_empty() {
        return Err(SchemaError::Validation(format!(
            "required_match_fields reference unknown fields: {}",
            unknown.join(", ")
        )));
    }

    let required: HashSet<&str> = raw.required_match_fields.iter().map(String::as_str).collect();
    let fields = raw
        .fields
        .iter()
        .map(|f| FieldSpec {
            name: f.name.clone(),
            kind: f.kind,
            unit: f.unit.clone(),
            description: f.description.clone(),
            variance_class: f.variance_class,
            required_for_match: required.contains(f.name.as_str()),
        })
        .collect();
    let mut required_match_fields = Vec::new();
    for r in &raw.required_match_fields {
        if !required_match_fields.contains(r) {
            required_match_fields.push(r.clone());
        }
    }

    Ok(ExtractionSchema {
        name: raw.name,
        fields,
        required_match_fields,
        missing_token: raw
            .missing_token
            .unwrap_or_else(|| DEFAULT_MISSING_TOKEN.to_string()),
    })
}

impl ExtractionSchema {
    /// The multi-principal element alloy schema.
    pub fn mpea() -> Self {
        load_schema(MPEA_CONFIG).expect("bundled MPEA schema is valid")
    }

    /// The silicate-melt diffusion schema.
    pub fn diffusion() -> Self {
        load_schema(DIFFUSION_CONFIG).expect("bundled diffusion schema is valid")
    }

    pub fn bundled(name: &str) -> Option<Self> {
        match name {
            "mpea" => Some(Self::mpea()),
            "diffusion" => Some(Self::diffusion()),
            _ => None,
        }
    }

    pub fn field(&self, name: &str) -> Option<&FieldSpec> {
        self.fields.iter().find(|f| f.name == name)
    }

    /// Looks a key up exactly, then ignoring case and surrounding whitespace.
    pub fn resolve_key(&self, key: &str) -> Option<&FieldSpec> {
        self.field(key).or_else(|| {
            let k = key.trim();
            self.fields.iter().find(|f| f.name.eq_ignore_ascii_case(k))
        })
    }

    pub fn required_fields(&self) -> impl Iterator<Item = &FieldSpec> {
        self.fields.iter().filter(|f| f.required_for_match)
    }

    pub fn normalize(&self, spec: &FieldSpec, raw: &Value) -> Result<CellValue, CoercionError> {
        normalize_value(spec, raw, &self.missing_token)
    }
}

/// Renders the schema the way it is interpolated into prompts.
pub fn render_schema(schema: &ExtractionSchema) -> String {
    let entries: Vec<String> = schema
        .fields
        .iter()
        .map(|f| {
            format!(
                "{}: {{\"type\": \"{}\"}}",
                Value::String(f.name.clone()),
                f.type_name()
            )
        })
        .collect();
    format!("{{ {} }}", entries.join(", "))
}

#[derive(Debug, Clone, PartialEq)]
pub enum CellValue {
    Number { value: f64, unit: Option<String> },
    Text(String),
    Missing,
}

impl CellValue {
    pub fn number(value: f64, unit: Option<&str>) -> Self {
        CellValue::Number {
            value,
            unit: unit.map(str::to_string),
        }
    }

    pub fn text(s: impl Into<String>) -> Self {
        CellValue::Text(s.into())
    }

    pub fn is_missing(&self) -> bool {
        matches!(self, CellValue::Missing)
    }

    /// JSON form used in record files and exemplars. Numbers in the field's
    /// own unit stay bare; any other unit is carried as `"<value> <unit>"`.
    pub fn to_json(&self, spec: &FieldSpec) -> Value {
        match self {
            CellValue::Missing => Value::Null,
            CellValue::Text(s) => Value::String(s.clone()),
            CellValue::Number { value, unit } => match unit {
                Some(u) if Some(u) != spec.unit.as_ref() => {
                    Value::String(format!("{value} {u}"))
                }
                _ => serde_json::Number::from_f64(*value)
                    .map(Value::Number)
                    .unwrap_or(Value::Null),
            },
        }
    }
}

impl fmt::Display for CellValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CellValue::Missing => f.write_str("<missing>"),
            CellValue::Text(s) => f.write_str(s),
            CellValue::Number { value, unit: None } => write!(f, "{value}"),
            CellValue::Number {
                value,
                unit: Some(u),
            } => write!(f, "{value} {u}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("cannot read `{raw}` as a value for field `{field}`: {reason}")]
pub struct CoercionError {
    pub field: String,
    pub raw: String,
    pub reason: String,
}

fn is_missing_token(s: &str, missing_token: &str) -> bool {
    let collapsed = collapse_whitespace(s);
    collapsed.eq_ignore_ascii_case(missing_token.trim())
}

pub(crate) fn collapse_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Normalizes one raw scalar into a cell for `spec`.
pub fn normalize_value(
    spec: &FieldSpec,
    raw: &Value,
    missing_token: &str,
) -> Result<CellValue, CoercionError> {
    let fail = |reason: &str| CoercionError {
        field: spec.name.clone(),
        raw: match raw {
            Value::String(s) => s.clone(),
            other => other.to_string(),
        },
        reason: reason.to_string(),
    };
    match raw {
        Value::Null => Ok(CellValue::Missing),
        Value::String(s) if is_missing_token(s, missing_token) => Ok(CellValue::Missing),
        Value::Array(_) | Value::Object(_) => Err(fail("expected a scalar")),
        _ => match spec.kind {
            FieldKind::Text => Ok(CellValue::Text(match raw {
                Value::String(s) => collapse_whitespace(s),
                other => other.to_string(),
            })),
            FieldKind::Number => match raw {
                Value::Number(n) => n
                    .as_f64()
                    .filter(|v| v.is_finite())
                    .map(|v| CellValue::Number {
                        value: v,
                        unit: spec.unit.clone(),
                    })
                    .ok_or_else(|| fail("number out of range")),
                Value::String(s) => parse_numeric(s, spec).map_err(&fail),
                _ => Err(fail("expected a number")),
            },
        },
    }
}

fn parse_numeric(s: &str, spec: &FieldSpec) -> Result<CellValue, &'static str> {
    let mut tokens = s.split_whitespace();
    let (number, unit_token) = match (tokens.next(), tokens.next(), tokens.next()) {
        (Some(n), None, _) => (n, None),
        (Some(n), Some(u), None) => (n, Some(u)),
        (None, _, _) => return Err("empty numeric value"),
        _ => return Err("too many tokens for a number"),
    };
    let value = parse_float(number).ok_or("not a number")?;
    let unit = match unit_token {
        None => spec.unit.clone(),
        Some(u) => {
            if u.starts_with(|c: char| c.is_ascii_digit() || c == '-' || c == '+' || c == '.') {
                return Err("trailing token is not a unit");
            }
            match Unit::parse(u) {
                Some(known) => Some(known.symbol().to_string()),
                None => spec.unit.clone(),
            }
        }
    };
    Ok(CellValue::Number { value, unit })
}

fn parse_float(s: &str) -> Option<f64> {
    // Rust accepts "inf"/"nan" spellings; only plain decimal notation is a value here.
    if !s
        .chars()
        .all(|c| c.is_ascii_digit() || matches!(c, '.' | 'e' | 'E' | '+' | '-'))
    {
        return None;
    }
    s.parse::<f64>().ok().filter(|v| v.is_finite())
}
