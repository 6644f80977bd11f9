//! Flat JSON payloads and their canonical serialization.
//!
//! Every message in the system is a flat JSON object whose values are numbers,
//! strings or booleans. The canonical form sorts keys lexicographically, drops
//! insignificant whitespace, writes integral numbers without a decimal point
//! and everything else with the shortest representation that round-trips.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};

use serde_json::Value;
use thiserror::Error;

/// Largest magnitude at which every integer is exactly representable in `f64`.
const MAX_EXACT_INT: f64 = 9_007_199_254_740_992.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PayloadError {
    #[error("payload is not valid JSON: {0}")]
    Json(String),
    #[error("payload is not a JSON object")]
    NotAnObject,
    #[error("payload has no fields")]
    Empty,
    #[error("payload contains an empty field name")]
    EmptyKey,
    #[error("field `{0}` is not a number, string or boolean")]
    NotScalar(String),
    #[error("field `{0}` is not a finite number")]
    NonFinite(String),
}

/// One scalar field value.
#[derive(Debug, Clone, PartialEq)]
pub enum FieldValue {
    Number(f64),
    Text(String),
    Bool(bool),
}

impl FieldValue {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            FieldValue::Number(n) => Some(*n),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            FieldValue::Text(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match self {
            FieldValue::Bool(b) => Some(*b),
            _ => None,
        }
    }

    /// Renders the value the way grouping keys compare: strings verbatim,
    /// numbers and booleans in canonical JSON form.
    pub fn key_string(&self) -> String {
        match self {
            FieldValue::Text(s) => s.clone(),
            other => {
                let mut out = String::new();
                other.write_canonical(&mut out);
                out
            }
        }
    }

    fn write_canonical(&self, out: &mut String) {
        match self {
            FieldValue::Number(n) => write_number(*n, out),
            FieldValue::Text(s) => {
                out.push_str(&serde_json::to_string(s).expect("string serialization is infallible"))
            }
            FieldValue::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        }
    }
}

impl From<f64> for FieldValue {
    fn from(v: f64) -> Self {
        FieldValue::Number(v)
    }
}

impl From<i64> for FieldValue {
    fn from(v: i64) -> Self {
        FieldValue::Number(v as f64)
    }
}

impl From<u32> for FieldValue {
    fn from(v: u32) -> Self {
        FieldValue::Number(f64::from(v))
    }
}

impl From<bool> for FieldValue {
    fn from(v: bool) -> Self {
        FieldValue::Bool(v)
    }
}

impl From<&str> for FieldValue {
    fn from(v: &str) -> Self {
        FieldValue::Text(v.to_owned())
    }
}

impl From<String> for FieldValue {
    fn from(v: String) -> Self {
        FieldValue::Text(v)
    }
}

/// Canonical text of a number: integral values without a decimal point,
/// others in shortest round-trip form.
pub fn format_number(n: f64) -> String {
    let mut out = String::new();
    write_number(n, &mut out);
    out
}

fn write_number(n: f64, out: &mut String) {
    if n.fract() == 0.0 && n.abs() < MAX_EXACT_INT {
        let _ = write!(out, "{}", n as i64);
    } else {
        // Display for f64 is the shortest representation that parses back exactly.
        let _ = write!(out, "{n}");
    }
}

/// A non-empty flat map from field name to scalar value.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Payload {
    fields: BTreeMap<String, FieldValue>,
}

impl Payload {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builder-style insertion.
    pub fn with(mut self, key: impl Into<String>, value: impl Into<FieldValue>) -> Self {
        self.insert(key, value);
        self
    }

    pub fn insert(&mut self, key: impl Into<String>, value: impl Into<FieldValue>) {
        self.fields.insert(key.into(), value.into());
    }

    pub fn get(&self, key: &str) -> Option<&FieldValue> {
        self.fields.get(key)
    }

    pub fn number(&self, key: &str) -> Option<f64> {
        self.get(key).and_then(FieldValue::as_f64)
    }

    pub fn text(&self, key: &str) -> Option<&str> {
        self.get(key).and_then(FieldValue::as_str)
    }

    pub fn len(&self) -> usize {
        self.fields.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &FieldValue)> {
        self.fields.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Checks the stored-event invariants: at least one field, no empty
    /// names, finite numbers.
    pub fn validate(&self) -> Result<(), PayloadError> {
        if self.fields.is_empty() {
            return Err(PayloadError::Empty);
        }
        for (k, v) in &self.fields {
            if k.is_empty() {
                return Err(PayloadError::EmptyKey);
            }
            if let FieldValue::Number(n) = v {
                if !n.is_finite() {
                    return Err(PayloadError::NonFinite(k.clone()));
                }
            }
        }
        Ok(())
    }

    /// Parses a flat JSON object. Nested values and nulls are rejected.
    pub fn parse(text: &str) -> Result<Self, PayloadError> {
        let value: Value =
            serde_json::from_str(text).map_err(|e| PayloadError::Json(e.to_string()))?;
        let Value::Object(map) = value else {
            return Err(PayloadError::NotAnObject);
        };
        let mut payload = Payload::new();
        for (k, v) in map {
            let field = match v {
                Value::Number(n) => FieldValue::Number(
                    n.as_f64()
                        .ok_or_else(|| PayloadError::NonFinite(k.clone()))?,
                ),
                Value::String(s) => FieldValue::Text(s),
                Value::Bool(b) => FieldValue::Bool(b),
                _ => return Err(PayloadError::NotScalar(k)),
            };
            payload.fields.insert(k, field);
        }
        payload.validate()?;
        Ok(payload)
    }

    /// Canonical JSON text: sorted keys, no whitespace.
    pub fn to_canonical(&self) -> String {
        let mut out = String::with_capacity(16 * self.fields.len() + 2);
        out.push('{');
        for (i, (k, v)) in self.fields.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            out.push_str(&serde_json::to_string(k).expect("string serialization is infallible"));
            out.push(':');
            v.write_canonical(&mut out);
        }
        out.push('}');
        out
    }
}

impl fmt::Display for Payload {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_canonical())
    }
}

/// Re-serializes arbitrary flat JSON text into canonical form.
pub fn canonicalize(text: &str) -> Result<String, PayloadError> {
    Payload::parse(text).map(|p| p.to_canonical())
}
