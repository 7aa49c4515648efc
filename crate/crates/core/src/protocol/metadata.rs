use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::fault::{Fault, FaultCode};
use super::value::{Value, WireType};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Control,
    Indicator,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SyncClass {
    /// Exchanged on every step.
    #[serde(rename = "sync")]
    Synchronous,
    /// Changes sporadically; exchanged on demand.
    #[serde(rename = "async")]
    Asynchronous,
}

/// Published description of one control or indicator.
#[derive(Debug, Clone, PartialEq)]
pub struct VariableDescriptor {
    pub name: String,
    pub direction: Direction,
    pub wire_type: WireType,
    pub sync_class: SyncClass,
    pub min: Option<f64>,
    pub max: Option<f64>,
    /// Value forced by the watchdog when the controlling client goes silent.
    pub safe: Option<Value>,
    /// Value the variable holds right after `openVI`.
    pub initial: Value,
}

impl VariableDescriptor {
    pub fn control(name: &str, initial: Value, sync_class: SyncClass) -> Self {
        Self {
            name: name.to_owned(),
            direction: Direction::Control,
            wire_type: initial.wire_type(),
            sync_class,
            min: None,
            max: None,
            safe: None,
            initial,
        }
    }

    pub fn indicator(name: &str, initial: Value, sync_class: SyncClass) -> Self {
        Self {
            direction: Direction::Indicator,
            ..Self::control(name, initial, sync_class)
        }
    }

    pub fn range(mut self, min: f64, max: f64) -> Self {
        self.min = Some(min);
        self.max = Some(max);
        self
    }

    pub fn min(mut self, min: f64) -> Self {
        self.min = Some(min);
        self
    }

    pub fn safe(mut self, safe: Value) -> Self {
        self.safe = Some(safe);
        self
    }

    /// Validates a client write and returns the value to store.
    ///
    /// A `double` written to a `float` control is rounded to the nearest
    /// `float`; every other type difference is a mismatch.
    pub fn admit_write(&self, value: &Value) -> Result<Value, Fault> {
        if self.direction != Direction::Control {
            return Err(Fault::with_detail(FaultCode::NotWritable, &self.name));
        }
        let value = match (self.wire_type, value) {
            (WireType::Float, Value::Double(v)) => Value::Float(*v as f32),
            (ty, v) if v.wire_type() == ty => v.clone(),
            (ty, v) => {
                return Err(Fault::with_detail(
                    FaultCode::TypeMismatch,
                    format!("{} is {ty}, got {}", self.name, v.wire_type()),
                ))
            }
        };
        if !value.is_finite() {
            return Err(Fault::with_detail(
                FaultCode::ValueOutOfRange,
                format!("{}: non-finite value", self.name),
            ));
        }
        if let Some(x) = value.as_f64() {
            let below = self.min.is_some_and(|m| x < m);
            let above = self.max.is_some_and(|m| x > m);
            if below || above {
                return Err(Fault::with_detail(
                    FaultCode::ValueOutOfRange,
                    format!(
                        "{} = {x} outside [{}, {}]",
                        self.name,
                        self.min.unwrap_or(f64::NEG_INFINITY),
                        self.max.unwrap_or(f64::INFINITY)
                    ),
                ));
            }
        }
        Ok(value)
    }
}

/// The metadata document returned by `jil.getMetadata`.
#[derive(Debug, Clone, PartialEq)]
pub struct InstrumentMetadata {
    pub vi: String,
    /// Execution period in seconds of instrument time.
    pub period: f64,
    pub variables: Vec<VariableDescriptor>,
}

#[derive(Serialize, Deserialize)]
struct MetadataDoc {
    vi: String,
    period: f64,
    variables: Vec<VariableDoc>,
}

#[derive(Serialize, Deserialize)]
struct VariableDoc {
    name: String,
    direction: Direction,
    #[serde(rename = "type")]
    wire_type: WireType,
    sync: SyncClass,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    safe: Option<serde_json::Value>,
}

#[derive(Debug, thiserror::Error)]
pub enum MetadataError {
    #[error("variable name must not be empty")]
    EmptyName,
    #[error("duplicate variable name '{0}'")]
    DuplicateName(String),
    #[error("execution period must be positive, got {0}")]
    BadPeriod(f64),
    #[error("variable '{0}': declared value does not match its wire type")]
    BadValue(String),
    #[error("malformed metadata document: {0}")]
    Json(#[from] serde_json::Error),
}

impl InstrumentMetadata {
    pub fn validate(&self) -> Result<(), MetadataError> {
        if !(self.period.is_finite() && self.period > 0.0) {
            return Err(MetadataError::BadPeriod(self.period));
        }
        let mut seen = HashSet::new();
        for v in &self.variables {
            if v.name.is_empty() {
                return Err(MetadataError::EmptyName);
            }
            if !seen.insert(v.name.as_str()) {
                return Err(MetadataError::DuplicateName(v.name.clone()));
            }
            let safe_ok = v.safe.as_ref().is_none_or(|s| s.wire_type() == v.wire_type);
            if v.initial.wire_type() != v.wire_type || !safe_ok {
                return Err(MetadataError::BadValue(v.name.clone()));
            }
        }
        Ok(())
    }

    pub fn variable(&self, name: &str) -> Option<&VariableDescriptor> {
        self.variables.iter().find(|v| v.name == name)
    }

    pub fn controls(&self) -> impl Iterator<Item = &VariableDescriptor> {
        self.variables.iter().filter(|v| v.direction == Direction::Control)
    }

    pub fn to_json(&self) -> String {
        let doc = MetadataDoc {
            vi: self.vi.clone(),
            period: self.period,
            variables: self
                .variables
                .iter()
                .map(|v| VariableDoc {
                    name: v.name.clone(),
                    direction: v.direction,
                    wire_type: v.wire_type,
                    sync: v.sync_class,
                    min: v.min,
                    max: v.max,
                    safe: v.safe.as_ref().map(Value::to_json),
                })
                .collect(),
        };
        serde_json::to_string(&doc).expect("metadata serializes")
    }

    /// Parses a metadata document. Initial values are not part of the
    /// document, so the parsed descriptors carry the type's zero value.
    pub fn from_json(json: &str) -> Result<Self, MetadataError> {
        let doc: MetadataDoc = serde_json::from_str(json)?;
        let variables = doc
            .variables
            .into_iter()
            .map(|v| {
                let safe = match &v.safe {
                    None => None,
                    Some(j) => Some(
                        Value::from_json(v.wire_type, j)
                            .ok_or_else(|| MetadataError::BadValue(v.name.clone()))?,
                    ),
                };
                Ok(VariableDescriptor {
                    initial: zero_of(v.wire_type),
                    name: v.name,
                    direction: v.direction,
                    wire_type: v.wire_type,
                    sync_class: v.sync,
                    min: v.min,
                    max: v.max,
                    safe,
                })
            })
            .collect::<Result<Vec<_>, MetadataError>>()?;
        let meta = Self {
            vi: doc.vi,
            period: doc.period,
            variables,
        };
        meta.validate()?;
        Ok(meta)
    }
}

fn zero_of(ty: WireType) -> Value {
    match ty {
        WireType::Boolean => Value::Boolean(false),
        WireType::Int => Value::Int(0),
        WireType::Float => Value::Float(0.0),
        WireType::Double => Value::Double(0.0),
        WireType::String => Value::Text(String::new()),
    }
}
