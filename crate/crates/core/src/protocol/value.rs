use std::fmt;

use serde::{Deserialize, Serialize};

/// The wire type of a control or indicator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WireType {
    Boolean,
    Int,
    Float,
    Double,
    String,
}

impl WireType {
    pub const ALL: [WireType; 5] = [
        WireType::Boolean,
        WireType::Int,
        WireType::Float,
        WireType::Double,
        WireType::String,
    ];

    pub fn name(self) -> &'static str {
        match self {
            WireType::Boolean => "boolean",
            WireType::Int => "int",
            WireType::Float => "float",
            WireType::Double => "double",
            WireType::String => "string",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.name() == name)
    }

    pub fn is_numeric(self) -> bool {
        matches!(self, WireType::Int | WireType::Float | WireType::Double)
    }
}

impl fmt::Display for WireType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A single control or indicator payload.
///
/// Variants never convert into each other implicitly; the only widening
/// happens on the wire, where `Float` travels as an XML-RPC `double`.
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Boolean(bool),
    Int(i32),
    Float(f32),
    Double(f64),
    Text(String),
}

impl Value {
    pub fn wire_type(&self) -> WireType {
        match self {
            Value::Boolean(_) => WireType::Boolean,
            Value::Int(_) => WireType::Int,
            Value::Float(_) => WireType::Float,
            Value::Double(_) => WireType::Double,
            Value::Text(_) => WireType::String,
        }
    }

    /// False only for NaN or infinite floating payloads.
    pub fn is_finite(&self) -> bool {
        match self {
            Value::Float(v) => v.is_finite(),
            Value::Double(v) => v.is_finite(),
            _ => true,
        }
    }

    /// Numeric view used for range checks and CSV output.
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Boolean(b) => Some(if *b { 1.0 } else { 0.0 }),
            Value::Int(v) => Some(f64::from(*v)),
            Value::Float(v) => Some(f64::from(*v)),
            Value::Double(v) => Some(*v),
            Value::Text(_) => None,
        }
    }

    pub fn as_double(&self) -> Option<f64> {
        match self {
            Value::Double(v) => Some(*v),
            _ => None,
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        match self {
            Value::Boolean(b) => serde_json::Value::Bool(*b),
            Value::Int(v) => serde_json::Value::from(*v),
            Value::Float(v) => serde_json::Value::from(f64::from(*v)),
            Value::Double(v) => serde_json::Value::from(*v),
            Value::Text(s) => serde_json::Value::String(s.clone()),
        }
    }

    /// Interprets a JSON scalar as a value of the given wire type.
    pub fn from_json(ty: WireType, json: &serde_json::Value) -> Option<Value> {
        match ty {
            WireType::Boolean => json.as_bool().map(Value::Boolean),
            WireType::Int => json
                .as_i64()
                .and_then(|v| i32::try_from(v).ok())
                .map(Value::Int),
            WireType::Float => json.as_f64().map(|v| Value::Float(v as f32)),
            WireType::Double => json.as_f64().map(Value::Double),
            WireType::String => json.as_str().map(|s| Value::Text(s.to_owned())),
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Boolean(b) => write!(f, "{}", u8::from(*b)),
            Value::Int(v) => write!(f, "{v}"),
            Value::Float(v) => write!(f, "{v}"),
            Value::Double(v) => write!(f, "{v}"),
            Value::Text(s) => f.write_str(s),
        }
    }
}

impl From<bool> for Value {
    fn from(v: bool) -> Self {
        Value::Boolean(v)
    }
}

impl From<i32> for Value {
    fn from(v: i32) -> Self {
        Value::Int(v)
    }
}

impl From<f32> for Value {
    fn from(v: f32) -> Self {
        Value::Float(v)
    }
}

impl From<f64> for Value {
    fn from(v: f64) -> Self {
        Value::Double(v)
    }
}

impl From<&str> for Value {
    fn from(v: &str) -> Self {
        Value::Text(v.to_owned())
    }
}

impl From<String> for Value {
    fn from(v: String) -> Self {
        Value::Text(v)
    }
}
