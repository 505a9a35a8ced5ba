//! Generators for arbitrary JSON-RPC envelopes.

use foampilot::mcp::{ErrorObject, RequestId, RpcMessage};
use proptest::prelude::*;
use serde_json::{Map, Number, Value};

const MODELLED: [&str; 6] = ["jsonrpc", "id", "method", "params", "result", "error"];

fn key() -> impl Strategy<Value = String> {
    "[a-zA-Z_][a-zA-Z0-9_/.-]{0,12}"
}

fn leaf() -> impl Strategy<Value = Value> {
    prop_oneof![
        Just(Value::Null),
        any::<bool>().prop_map(Value::Bool),
        any::<i64>().prop_map(Value::from),
        (-1.0e12f64..1.0e12).prop_map(|f| Value::Number(Number::from_f64(f).unwrap())),
        any::<String>().prop_map(Value::String),
    ]
}

pub fn json() -> impl Strategy<Value = Value> {
    leaf().prop_recursive(3, 32, 6, |inner| {
        prop_oneof![
            prop::collection::vec(inner.clone(), 0..6).prop_map(Value::Array),
            prop::collection::vec((key(), inner), 0..6).prop_map(|kv| Value::Object(kv.into_iter().collect())),
        ]
    })
}

fn structured() -> impl Strategy<Value = Value> {
    prop_oneof![
        prop::collection::vec(json(), 0..4).prop_map(Value::Array),
        prop::collection::vec((key(), json()), 0..4).prop_map(|kv| Value::Object(kv.into_iter().collect())),
    ]
}

fn id() -> impl Strategy<Value = RequestId> {
    prop_oneof![any::<i64>().prop_map(RequestId::Number), any::<String>().prop_map(RequestId::Text)]
}

fn extra() -> impl Strategy<Value = Map<String, Value>> {
    prop::collection::vec((key(), json()), 0..3).prop_map(|kv| {
        kv.into_iter()
            .filter(|(k, _)| !MODELLED.contains(&k.as_str()))
            .collect()
    })
}

fn error_object() -> impl Strategy<Value = ErrorObject> {
    (any::<i64>(), any::<String>(), proptest::option::of(json().prop_filter("null data", |v| !v.is_null())))
        .prop_map(|(code, message, data)| ErrorObject { code, message, data })
}

pub fn envelope() -> impl Strategy<Value = RpcMessage> {
    let method = "[a-zA-Z][a-zA-Z/_]{0,20}";
    prop_oneof![
        (id(), method, proptest::option::of(structured()), extra()).prop_map(|(id, method, params, extra)| {
            RpcMessage::Request { id, method, params, extra }
        }),
        (method, proptest::option::of(structured()), extra())
            .prop_map(|(method, params, extra)| RpcMessage::Notification { method, params, extra }),
        (id(), json(), extra()).prop_map(|(id, result, extra)| RpcMessage::Response { id, result, extra }),
        (proptest::option::of(id()), error_object(), extra())
            .prop_map(|(id, error, extra)| RpcMessage::Error { id, error, extra }),
    ]
}
