//! XML-RPC encoding for the `jil.*` method set.
//!
//! Documents are written by hand and read with `roxmltree`. Only the scalar
//! subset of XML-RPC used by the protocol is produced; the reader also accepts
//! `<int>` for `<i4>` and untyped `<value>` text as a string, as the XML-RPC
//! rules require. `float` values travel as `double`; `setValue` carries a
//! trailing `"float"` hint parameter so the server can restore the variant.

use std::fmt::Write as _;

use super::fault::{Fault, FaultCode};
use super::state::{Method, Param};
use super::value::{Value, WireType};

/// Hint parameter appended to `jil.setValue` when the value is a `float`.
pub const FLOAT_HINT: &str = "float";

const PROLOG: &str = r#"<?xml version="1.0" encoding="UTF-8"?>"#;

/// A decoded `methodCall`.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodCall {
    pub method: Method,
    pub params: Vec<Value>,
}

/// Encodes a `methodCall` document after checking the parameters against
/// the method table.
pub fn encode_call(method: Method, params: &[Value]) -> Result<Vec<u8>, Fault> {
    check_params(method, params)?;
    let mut doc = String::with_capacity(256);
    doc.push_str(PROLOG);
    doc.push_str("<methodCall><methodName>");
    doc.push_str(method.name());
    doc.push_str("</methodName><params>");
    for p in params {
        write_param(&mut doc, p)?;
    }
    if method == Method::SetValue && matches!(params.get(1), Some(Value::Float(_))) {
        write_param(&mut doc, &Value::Text(FLOAT_HINT.to_owned()))?;
    }
    doc.push_str("</params></methodCall>");
    Ok(doc.into_bytes())
}

/// Decodes a `methodCall` document (server side).
pub fn decode_call(doc: &[u8]) -> Result<MethodCall, Fault> {
    let text = std::str::from_utf8(doc).map_err(|e| Fault::internal(format!("request is not UTF-8: {e}")))?;
    let xml = roxmltree::Document::parse(text).map_err(|e| Fault::internal(format!("malformed XML: {e}")))?;
    let root = xml.root_element();
    expect_name(root, "methodCall")?;
    let name_node = child(root, "methodName")?;
    let name = name_node.text().unwrap_or("").trim();
    let method = Method::from_name(name).ok_or_else(|| Fault::internal(format!("unknown method '{name}'")))?;
    let mut params = Vec::new();
    if let Some(params_node) = elements(root).find(|n| n.has_tag_name("params")) {
        for param in elements(params_node) {
            expect_name(param, "param")?;
            params.push(read_value(child(param, "value")?)?);
        }
    }
    if method == Method::SetValue && params.len() == 3 {
        match (params.pop(), params.pop()) {
            (Some(Value::Text(hint)), Some(Value::Double(v))) if hint == FLOAT_HINT => {
                params.push(Value::Float(v as f32));
            }
            _ => return Err(Fault::with_detail(FaultCode::TypeMismatch, "bad float hint")),
        }
    }
    check_params(method, &params)?;
    Ok(MethodCall { method, params })
}

/// Encodes a `methodResponse` carrying either a single value or a fault.
pub fn encode_response(result: &Result<Value, Fault>) -> Vec<u8> {
    let mut doc = String::with_capacity(256);
    doc.push_str(PROLOG);
    doc.push_str("<methodResponse>");
    match result {
        Ok(value) => {
            doc.push_str("<params>");
            if write_param(&mut doc, value).is_err() {
                // Non-finite or unrepresentable payloads never leave the server.
                return encode_response(&Err(Fault::with_detail(
                    FaultCode::ValueOutOfRange,
                    "value cannot be encoded",
                )));
            }
            doc.push_str("</params>");
        }
        Err(fault) => {
            doc.push_str("<fault><value><struct><member><name>faultCode</name><value><int>");
            let _ = write!(doc, "{}", fault.code);
            doc.push_str("</int></value></member><member><name>faultString</name><value><string>");
            escape_into(&mut doc, &fault.message);
            doc.push_str("</string></value></member></struct></value></fault>");
        }
    }
    doc.push_str("</methodResponse>");
    doc.into_bytes()
}

/// Decodes a `methodResponse`.
///
/// With `expected` set, the returned value must carry that wire type; a
/// `double` on the wire is narrowed when `float` is expected. Malformed
/// documents yield `Internal` (199).
pub fn decode_response(doc: &[u8], expected: Option<WireType>) -> Result<Value, Fault> {
    let text = std::str::from_utf8(doc).map_err(|e| Fault::internal(format!("response is not UTF-8: {e}")))?;
    let xml = roxmltree::Document::parse(text).map_err(|e| Fault::internal(format!("malformed XML: {e}")))?;
    let root = xml.root_element();
    expect_name(root, "methodResponse")?;
    let body = elements(root)
        .next()
        .ok_or_else(|| Fault::internal("empty methodResponse"))?;
    match body.tag_name().name() {
        "fault" => Err(read_fault(child(body, "value")?)?),
        "params" => {
            let mut params = elements(body);
            let param = params
                .next()
                .ok_or_else(|| Fault::internal("methodResponse without a value"))?;
            if params.next().is_some() {
                return Err(Fault::internal("methodResponse with several values"));
            }
            expect_name(param, "param")?;
            let value = read_value(child(param, "value")?)?;
            match expected {
                None => Ok(value),
                Some(ty) => coerce_expected(value, ty),
            }
        }
        other => Err(Fault::internal(format!("unexpected <{other}> in methodResponse"))),
    }
}

fn coerce_expected(value: Value, ty: WireType) -> Result<Value, Fault> {
    match (value, ty) {
        (Value::Double(v), WireType::Float) => Ok(Value::Float(v as f32)),
        (v, ty) if v.wire_type() == ty => Ok(v),
        (v, ty) => Err(Fault::with_detail(
            FaultCode::TypeMismatch,
            format!("expected {ty}, got {}", v.wire_type()),
        )),
    }
}

fn check_params(method: Method, params: &[Value]) -> Result<(), Fault> {
    let shape = method.params();
    if shape.len() != params.len() {
        return Err(Fault::with_detail(
            FaultCode::TypeMismatch,
            format!("{method} takes {} parameter(s), got {}", shape.len(), params.len()),
        ));
    }
    for (p, v) in shape.iter().zip(params) {
        if let Param::Typed(ty) = p {
            if v.wire_type() != *ty {
                return Err(Fault::with_detail(
                    FaultCode::TypeMismatch,
                    format!("{method}: expected {ty}, got {}", v.wire_type()),
                ));
            }
        }
        if !v.is_finite() {
            return Err(Fault::with_detail(FaultCode::ValueOutOfRange, "non-finite float"));
        }
    }
    Ok(())
}

fn write_param(doc: &mut String, value: &Value) -> Result<(), Fault> {
    doc.push_str("<param>");
    write_value(doc, value)?;
    doc.push_str("</param>");
    Ok(())
}

fn write_value(doc: &mut String, value: &Value) -> Result<(), Fault> {
    doc.push_str("<value>");
    match value {
        Value::Boolean(b) => {
            let _ = write!(doc, "<boolean>{}</boolean>", u8::from(*b));
        }
        Value::Int(v) => {
            let _ = write!(doc, "<i4>{v}</i4>");
        }
        Value::Float(v) => write_double(doc, f64::from(*v))?,
        Value::Double(v) => write_double(doc, *v)?,
        Value::Text(s) => {
            if let Some(c) = s.chars().find(|c| !is_xml_char(*c)) {
                return Err(Fault::with_detail(
                    FaultCode::ValueOutOfRange,
                    format!("character U+{:04X} cannot be carried in XML", u32::from(c)),
                ));
            }
            doc.push_str("<string>");
            escape_into(doc, s);
            doc.push_str("</string>");
        }
    }
    doc.push_str("</value>");
    Ok(())
}

fn write_double(doc: &mut String, v: f64) -> Result<(), Fault> {
    if !v.is_finite() {
        return Err(Fault::with_detail(FaultCode::ValueOutOfRange, "non-finite float"));
    }
    // `Display` for f64 is the shortest exact round-trip form and never uses
    // an exponent, which matches the XML-RPC `double` grammar.
    let _ = write!(doc, "<double>{v}</double>");
    Ok(())
}

fn is_xml_char(c: char) -> bool {
    matches!(c, '\t' | '\n' | '\r' | '\u{20}'..='\u{D7FF}' | '\u{E000}'..='\u{FFFD}' | '\u{10000}'..)
}

fn escape_into(doc: &mut String, s: &str) {
    for c in s.chars() {
        match c {
            '&' => doc.push_str("&amp;"),
            '<' => doc.push_str("&lt;"),
            '>' => doc.push_str("&gt;"),
            // Bare CR would be normalized to LF by any conforming parser.
            '\r' => doc.push_str("&#13;"),
            c => doc.push(c),
        }
    }
}

fn elements<'a, 'i>(node: roxmltree::Node<'a, 'i>) -> impl Iterator<Item = roxmltree::Node<'a, 'i>> {
    node.children().filter(|n| n.is_element())
}

fn expect_name(node: roxmltree::Node<'_, '_>, name: &str) -> Result<(), Fault> {
    if node.has_tag_name(name) {
        Ok(())
    } else {
        Err(Fault::internal(format!(
            "expected <{name}>, found <{}>",
            node.tag_name().name()
        )))
    }
}

fn child<'a, 'i>(node: roxmltree::Node<'a, 'i>, name: &str) -> Result<roxmltree::Node<'a, 'i>, Fault> {
    elements(node)
        .find(|n| n.has_tag_name(name))
        .ok_or_else(|| Fault::internal(format!("<{}> lacks <{name}>", node.tag_name().name())))
}

/// Concatenated text content of an element (entity references resolved).
fn text_of(node: roxmltree::Node<'_, '_>) -> String {
    node.children()
        .filter(|n| n.is_text())
        .filter_map(|n| n.text())
        .collect()
}

fn read_value(node: roxmltree::Node<'_, '_>) -> Result<Value, Fault> {
    let Some(typed) = elements(node).next() else {
        return Ok(Value::Text(text_of(node)));
    };
    let raw = text_of(typed);
    let malformed = |what: &str| Fault::internal(format!("malformed {what}: '{raw}'"));
    match typed.tag_name().name() {
        "i4" | "int" => raw.trim().parse::<i32>().map(Value::Int).map_err(|_| malformed("int")),
        "boolean" => match raw.trim() {
            "0" => Ok(Value::Boolean(false)),
            "1" => Ok(Value::Boolean(true)),
            _ => Err(malformed("boolean")),
        },
        "double" => raw
            .trim()
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .map(Value::Double)
            .ok_or_else(|| malformed("double")),
        "string" => Ok(Value::Text(raw)),
        other => Err(Fault::internal(format!("unsupported XML-RPC type <{other}>"))),
    }
}

fn read_fault(value: roxmltree::Node<'_, '_>) -> Result<Fault, Fault> {
    let st = child(value, "struct")?;
    let mut code = None;
    let mut message = None;
    for member in elements(st) {
        let name = text_of(child(member, "name")?);
        let v = read_value(child(member, "value")?)?;
        match (name.as_str(), v) {
            ("faultCode", Value::Int(c)) => code = Some(c),
            ("faultString", Value::Text(s)) => message = Some(s),
            _ => {}
        }
    }
    match (code, message) {
        (Some(code), Some(message)) => Ok(Fault::new(code, message)),
        _ => Err(Fault::internal("fault struct lacks faultCode/faultString")),
    }
}
