use openlab_core::protocol::{
    decode_call, decode_response, encode_call, encode_response, transition, ConnectionState, Fault, FaultCode, Method,
    ProtocolEvent, Value, WireType,
};
use proptest::prelude::*;

#[test]
fn transition_table_is_exact() {
    use ConnectionState::*;
    use ProtocolEvent::*;
    let expected = [
        (Disconnected, Connect, Some(Connected)),
        (Disconnected, OpenVi, None),
        (Disconnected, RunVi, None),
        (Disconnected, StopVi, None),
        (Disconnected, CloseVi, None),
        (Disconnected, Disconnect, None),
        (Connected, Connect, None),
        (Connected, OpenVi, Some(Opened)),
        (Connected, RunVi, None),
        (Connected, StopVi, None),
        (Connected, CloseVi, None),
        (Connected, Disconnect, Some(Disconnected)),
        (Opened, Connect, None),
        (Opened, OpenVi, None),
        (Opened, RunVi, Some(Running)),
        (Opened, StopVi, None),
        (Opened, CloseVi, Some(Connected)),
        (Opened, Disconnect, Some(Disconnected)),
        (Running, Connect, None),
        (Running, OpenVi, None),
        (Running, RunVi, None),
        (Running, StopVi, Some(Opened)),
        (Running, CloseVi, None),
        (Running, Disconnect, Some(Disconnected)),
    ];
    assert_eq!(expected.len(), 24);
    for (state, event, next) in expected {
        match (transition(state, event), next) {
            (Ok(got), Some(want)) => assert_eq!(got, want, "{state:?} x {event:?}"),
            (Err(f), None) => assert_eq!(f.code, 100, "{state:?} x {event:?}"),
            (got, want) => panic!("{state:?} x {event:?}: got {got:?}, want {want:?}"),
        }
    }
}

fn xml_text() -> impl Strategy<Value = String> {
    any::<String>().prop_map(|s| {
        s.chars()
            .filter(|c| matches!(c, '\t' | '\n' | '\r' | '\u{20}'..='\u{D7FF}' | '\u{E000}'..='\u{FFFD}' | '\u{10000}'..))
            .collect()
    })
}

fn wire_value() -> impl Strategy<Value = Value> {
    prop_oneof![
        any::<bool>().prop_map(Value::Boolean),
        any::<i32>().prop_map(Value::Int),
        any::<f32>().prop_filter("finite", |v| v.is_finite()).prop_map(Value::Float),
        any::<f64>().prop_filter("finite", |v| v.is_finite()).prop_map(Value::Double),
        xml_text().prop_map(Value::Text),
    ]
}

fn same(a: &Value, b: &Value) -> bool {
    match (a, b) {
        (Value::Float(x), Value::Float(y)) => x.to_bits() == y.to_bits(),
        (Value::Double(x), Value::Double(y)) => x.to_bits() == y.to_bits(),
        _ => a == b,
    }
}

/// Does an independently parsed XML-RPC value carry the same datum?
fn dxr_matches(ours: &Value, theirs: &dxr::Value) -> bool {
    match (ours, theirs) {
        (Value::Boolean(a), dxr::Value::Boolean(b)) => a == b,
        (Value::Int(a), dxr::Value::Integer(b)) => a == b,
        (Value::Float(a), dxr::Value::Double(b)) => f64::from(*a).to_bits() == b.to_bits(),
        (Value::Double(a), dxr::Value::Double(b)) => a.to_bits() == b.to_bits(),
        (Value::Text(a), dxr::Value::String(b)) => a == b,
        _ => false,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn response_round_trip(v in wire_value()) {
        let doc = encode_response(&Ok(v.clone()));
        let back = decode_response(&doc, Some(v.wire_type())).unwrap();
        prop_assert!(same(&v, &back), "{v:?} came back as {back:?}");
    }

    #[test]
    fn call_round_trip_and_interop(name in xml_text(), v in wire_value()) {
        let doc = encode_call(Method::SetValue, &[Value::Text(name.clone()), v.clone()]).unwrap();
        let call = decode_call(&doc).unwrap();
        prop_assert_eq!(call.method, Method::SetValue);
        prop_assert_eq!(&call.params[0], &Value::Text(name.clone()));
        prop_assert!(same(&call.params[1], &v));

        let text = std::str::from_utf8(&doc).unwrap();
        let theirs = dxr::MethodCall::from_xml(text).unwrap();
        prop_assert_eq!(theirs.name.as_ref(), "jil.setValue");
        prop_assert!(dxr_matches(&Value::Text(name), &theirs.params[0]));
        prop_assert!(dxr_matches(&v, &theirs.params[1]), "{v:?} vs {:?}", theirs.params[1]);
    }

    #[test]
    fn independent_responses_decode(v in wire_value()) {
        let theirs = match &v {
            Value::Boolean(b) => dxr::Value::Boolean(*b),
            Value::Int(i) => dxr::Value::Integer(*i),
            Value::Float(f) => dxr::Value::Double(f64::from(*f)),
            Value::Double(d) => dxr::Value::Double(*d),
            Value::Text(s) => dxr::Value::String(s.clone()),
        };
        let doc = dxr::MethodResponse { value: theirs }.to_xml().unwrap();
        let back = decode_response(doc.as_bytes(), Some(v.wire_type())).unwrap();
        prop_assert!(same(&v, &back), "{v:?} came back as {back:?} from {doc}");
    }
}

#[test]
fn every_method_parses_independently() {
    for m in Method::ALL {
        let params: Vec<Value> = m
            .params()
            .iter()
            .map(|_| Value::Text("plants/coupled_tanks.vi".into()))
            .collect();
        let doc = encode_call(m, &params).unwrap();
        let theirs = dxr::MethodCall::from_xml(std::str::from_utf8(&doc).unwrap()).unwrap();
        assert_eq!(theirs.name.as_ref(), m.name());
        assert_eq!(theirs.params.len(), params.len());
    }
}

#[test]
fn faults_interoperate() {
    let ours = encode_response(&Err(Fault::with_detail(FaultCode::UnknownVariable, "pump_q")));
    let theirs = dxr::FaultResponse::from_xml(std::str::from_utf8(&ours).unwrap()).unwrap();
    assert_eq!(theirs.fault.code(), 102);
    assert_eq!(theirs.fault.string(), "UnknownVariable: pump_q");

    let doc = dxr::FaultResponse {
        fault: dxr::Fault::new(105, "SessionBusy: held".into()),
    }
    .to_xml()
    .unwrap();
    let err = decode_response(doc.as_bytes(), None).unwrap_err();
    assert_eq!(err, Fault::new(105, "SessionBusy: held"));
    assert!(err.is(FaultCode::SessionBusy));
}

#[test]
fn wrong_type_reply_is_a_type_mismatch() {
    let doc = encode_response(&Ok(Value::Boolean(true)));
    let err = decode_response(&doc, Some(WireType::Double)).unwrap_err();
    assert_eq!(err.code, 103);
}
