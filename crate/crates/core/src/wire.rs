//! Line-delimited envelope protocol spoken by every daemon and client.
//!
//! Each envelope is one JSON object on one line:
//!
//! ```text
//! {"kind":"request","client":"c1","rid":7,"service":"evaluate","args":[2,"value"]}
//! ```
//!
//! Keys appear in the order `kind, client, rid, service, args, status,
//! payload`; absent optional keys are omitted and unknown keys are ignored
//! on decode. A connection opens with a `hello` carrying the desired role
//! and delivery mode; the server answers with the assigned client id.

use std::fmt;
use std::io::{self, BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Hello,
    Register,
    Request,
    Reply,
    Event,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub kind: Kind,
    #[serde(default)]
    pub client: String,
    #[serde(default)]
    pub rid: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub service: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub args: Vec<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub status: Option<String>,
    #[serde(default, skip_serializing_if = "Value::is_null")]
    pub payload: Value,
}

pub const STATUS_OK: &str = "ok";

impl Envelope {
    fn bare(kind: Kind, client: &str, rid: u64) -> Envelope {
        Envelope {
            kind,
            client: client.to_string(),
            rid,
            service: None,
            args: Vec::new(),
            status: None,
            payload: Value::Null,
        }
    }

    pub fn hello(role: Role, mode: DeliveryMode) -> Envelope {
        Envelope {
            args: vec![role.to_string().into(), mode.to_string().into()],
            ..Envelope::bare(Kind::Hello, "", 0)
        }
    }

    /// Server answer to a hello, carrying the assigned client id.
    pub fn welcome(client: &str) -> Envelope {
        Envelope::bare(Kind::Hello, client, 0)
    }

    pub fn request(client: &str, rid: u64, service: &str, args: Vec<Value>) -> Envelope {
        Envelope { service: Some(service.to_string()), args, ..Envelope::bare(Kind::Request, client, rid) }
    }

    pub fn register(client: &str, rid: u64, service: &str, args: Vec<Value>) -> Envelope {
        Envelope { service: Some(service.to_string()), args, ..Envelope::bare(Kind::Register, client, rid) }
    }

    pub fn reply(client: &str, rid: u64, result: Result<Value, crate::service::ServiceError>) -> Envelope {
        let (status, payload) = match result {
            Ok(payload) => (STATUS_OK.to_string(), payload),
            Err(e) => (e.code.to_string(), serde_json::json!({ "message": e.message })),
        };
        Envelope { status: Some(status), payload, ..Envelope::bare(Kind::Reply, client, rid) }
    }

    pub fn event(client: &str, rid: u64, record: &EventRecord) -> Envelope {
        Envelope {
            payload: serde_json::to_value(record).expect("event records serialize"),
            ..Envelope::bare(Kind::Event, client, rid)
        }
    }

    /// Unsolicited connection-level error notice, sent before closing.
    pub fn frame_error(message: &str) -> Envelope {
        Envelope {
            status: Some("frame_error".into()),
            payload: serde_json::json!({ "message": message }),
            ..Envelope::bare(Kind::Event, "", 0)
        }
    }

    /// Interprets a reply envelope as a service result.
    pub fn into_result(self) -> Result<Value, crate::service::ServiceError> {
        match self.status.as_deref() {
            Some(STATUS_OK) | None => Ok(self.payload),
            Some(code) => {
                let message = self.payload.get("message").and_then(Value::as_str).unwrap_or_default();
                Err(crate::service::ServiceError::new(code.parse().unwrap(), message))
            }
        }
    }

    /// The event record carried by an `event` envelope, if any.
    pub fn event_record(&self) -> Option<EventRecord> {
        if self.kind != Kind::Event {
            return None;
        }
        serde_json::from_value(self.payload.clone()).ok()
    }
}

#[derive(Debug, Error)]
pub enum FrameError {
    #[error("malformed frame: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Encodes one envelope as a newline-terminated line.
pub fn encode(env: &Envelope) -> Vec<u8> {
    let mut out = serde_json::to_vec(env).expect("envelopes always serialize");
    out.push(b'\n');
    out
}

/// Decodes one line (with or without its terminating newline).
pub fn decode(bytes: &[u8]) -> Result<Envelope, FrameError> {
    let line = bytes.strip_suffix(b"\n").unwrap_or(bytes);
    let line = line.strip_suffix(b"\r").unwrap_or(line);
    if line.contains(&b'\n') {
        return Err(FrameError::Malformed("embedded newline".into()));
    }
    serde_json::from_slice(line).map_err(|e| FrameError::Malformed(e.to_string()))
}

/// Reads the next envelope; `Ok(None)` on a clean end of stream.
pub fn read_envelope<R: BufRead>(reader: &mut R) -> Result<Option<Envelope>, FrameError> {
    let mut line = Vec::new();
    if reader.read_until(b'\n', &mut line)? == 0 {
        return Ok(None);
    }
    if line.last() != Some(&b'\n') {
        return Err(FrameError::Malformed("truncated line".into()));
    }
    decode(&line).map(Some)
}

pub fn write_envelope<W: Write + ?Sized>(writer: &mut W, env: &Envelope) -> io::Result<()> {
    writer.write_all(&encode(env))?;
    writer.flush()
}

/// Client-scoped request identifiers: 1, 2, 3, ... within one session.
#[derive(Debug, Default)]
pub struct RequestIds {
    last: u64,
}

impl RequestIds {
    pub fn new() -> RequestIds {
        RequestIds::default()
    }

    pub fn next_request_id(&mut self) -> u64 {
        self.last += 1;
        self.last
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Tool,
    Launcher,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeliveryMode {
    Blocking,
    EventAsync,
    EventSync,
}

macro_rules! text_enum {
    ($ty:ty { $($variant:ident => $text:literal),* $(,)? }) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $(Self::$variant => $text),* })
            }
        }

        impl FromStr for $ty {
            type Err = String;
            fn from_str(s: &str) -> Result<Self, String> {
                match s {
                    $($text => Ok(Self::$variant),)*
                    other => Err(format!("unknown {} `{other}`", stringify!($ty).to_lowercase())),
                }
            }
        }
    };
}

text_enum!(Role { Tool => "tool", Launcher => "launcher" });
text_enum!(DeliveryMode { Blocking => "blocking", EventAsync => "event_async", EventSync => "event_sync" });

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Reply,
    Stopped,
    Exited,
    Spawned,
    Output,
    /// Another client executed a service. Not part of the original engine's
    /// event set; added so tools can track each other.
    PeerRequest,
}

impl EventKind {
    pub const NOTIFICATIONS: [EventKind; 5] =
        [EventKind::Stopped, EventKind::Exited, EventKind::Spawned, EventKind::Output, EventKind::PeerRequest];
}

/// One hub-sequenced event. Reply bodies are `{"status", "payload"}` and the
/// request id travels in the envelope's `rid`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub seq: u64,
    pub event: EventKind,
    #[serde(default)]
    pub body: Value,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::service::{ErrorCode, ServiceError};
    use proptest::prelude::*;
    use serde_json::json;

    #[test]
    fn request_encoding_is_exact() {
        let env = Envelope::request("c1", 7, "evaluate", vec![json!(2), json!("value")]);
        assert_eq!(
            String::from_utf8(encode(&env)).unwrap(),
            "{\"kind\":\"request\",\"client\":\"c1\",\"rid\":7,\"service\":\"evaluate\",\"args\":[2,\"value\"]}\n"
        );
    }

    #[test]
    fn ok_reply_carries_evaluation() {
        let payload = json!({"value": 1, "initialized": true, "ordinal": 2});
        let line = String::from_utf8(encode(&Envelope::reply("c2", 3, Ok(payload)))).unwrap();
        assert!(line.contains("\"status\":\"ok\",\"payload\":{\"value\":1,\"initialized\":true,"), "{line}");
    }

    #[test]
    fn spawned_event_names_program() {
        let rec = EventRecord {
            seq: 4,
            event: EventKind::Spawned,
            body: json!({"tid": 2, "program": "echo_server"}),
        };
        let line = String::from_utf8(encode(&Envelope::event("c2", 0, &rec))).unwrap();
        assert!(line.starts_with("{\"kind\":\"event\""));
        assert!(line.contains("\"program\":\"echo_server\""));
        let back = decode(line.as_bytes()).unwrap();
        assert_eq!(back.event_record(), Some(rec));
    }

    #[test]
    fn error_reply_round_trips_to_service_error() {
        let env = Envelope::reply("c1", 9, Err(ServiceError::new(ErrorCode::UnknownTid, "unknown tid 9")));
        let back = decode(&encode(&env)).unwrap();
        assert_eq!(back.status.as_deref(), Some("unknown_tid"));
        let err = back.into_result().unwrap_err();
        assert_eq!(err.code, ErrorCode::UnknownTid);
        assert_eq!(err.message, "unknown tid 9");
    }

    #[test]
    fn truncated_line_is_a_frame_error() {
        let line = encode(&Envelope::request("c1", 1, "list_tids", vec![]));
        assert!(decode(&line[..line.len() / 2]).is_err());
        let mut reader = io::BufReader::new(&line[..line.len() - 1]);
        assert!(matches!(read_envelope(&mut reader), Err(FrameError::Malformed(_))));
    }

    #[test]
    fn unknown_keys_are_ignored() {
        let env = decode(br#"{"kind":"reply","client":"c1","rid":2,"status":"ok","extra":[1,2],"payload":5}"#).unwrap();
        assert_eq!(env.rid, 2);
        assert_eq!(env.payload, json!(5));
    }

    #[test]
    fn request_ids() {
        let mut a = RequestIds::new();
        assert_eq!(a.next_request_id(), 1);
        assert_eq!((a.next_request_id(), a.next_request_id()), (2, 3));
        // identifiers are client-scoped: another session starts over
        let mut b = RequestIds::new();
        assert_eq!(b.next_request_id(), 1);
    }

    #[test]
    fn hello_round_trip() {
        let env = Envelope::hello(Role::Launcher, DeliveryMode::EventSync);
        let back = decode(&encode(&env)).unwrap();
        assert_eq!(back.args, vec![json!("launcher"), json!("event_sync")]);
        assert_eq!("event_async".parse::<DeliveryMode>(), Ok(DeliveryMode::EventAsync));
        assert!("sideways".parse::<DeliveryMode>().is_err());
    }

    fn scalar() -> impl Strategy<Value = Value> {
        prop_oneof![
            any::<i64>().prop_map(Value::from),
            any::<bool>().prop_map(Value::from),
            ".{0,12}".prop_map(Value::from),
            Just(Value::Null),
        ]
    }

    fn payload() -> impl Strategy<Value = Value> {
        scalar().prop_recursive(3, 24, 4, |inner| {
            prop_oneof![
                prop::collection::vec(inner.clone(), 0..4).prop_map(Value::from),
                prop::collection::btree_map("[a-z_]{1,6}", inner, 0..4)
                    .prop_map(|m| Value::Object(m.into_iter().collect())),
            ]
        })
    }

    prop_compose! {
        fn envelope()(
            kind in prop_oneof![Just(Kind::Hello), Just(Kind::Register), Just(Kind::Request), Just(Kind::Reply), Just(Kind::Event)],
            client in "[a-z0-9\\n\"]{0,5}",
            rid in any::<u64>(),
            service in proptest::option::of("[a-z_]{1,10}"),
            args in prop::collection::vec(scalar(), 0..4),
            status in proptest::option::of("[a-z_]{1,10}"),
            payload in payload(),
        ) -> Envelope {
            Envelope { kind, client, rid, service, args, status, payload }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn decode_inverts_encode(env in envelope()) {
            let line = encode(&env);
            prop_assert_eq!(line.iter().filter(|b| **b == b'\n').count(), 1);
            prop_assert_eq!(decode(&line).unwrap(), env);
        }

        #[test]
        fn concatenated_stream_decodes_in_order(envs in prop::collection::vec(envelope(), 0..8)) {
            let stream: Vec<u8> = envs.iter().flat_map(encode).collect();
            let mut reader = io::BufReader::new(&stream[..]);
            let mut out = Vec::new();
            while let Some(env) = read_envelope(&mut reader).unwrap() {
                out.push(env);
            }
            prop_assert_eq!(out, envs);
        }
    }
}
