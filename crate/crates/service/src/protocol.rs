//! JSON messages exchanged on `/ws`. Every message is an object with a
//! schema version `v` and a `type` discriminator.

use serde::{Deserialize, Serialize};
use sparseemg::classifiers::ClassifierKind;
use sparseemg::selection::Scheme;
use sparseemg::sweep::{SparsityConfig, SweepResult, DEFAULT_MAX_ELECTRODES};
use sparseemg::{ElectrodeId, GestureId};

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepRequest {
    pub dataset: String,
    pub user: String,
    pub gestures: Vec<GestureId>,
    /// Empty means every electrode of the dataset.
    #[serde(default)]
    pub candidate_electrodes: Vec<ElectrodeId>,
    #[serde(default = "default_max")]
    pub max_electrodes: usize,
    pub scheme: Scheme,
    pub classifier: ClassifierKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub weights: Option<SparsityConfig>,
    /// Sessions to load; all sessions when absent.
    #[serde(default)]
    pub sessions: Option<Vec<u32>>,
}

fn default_max() -> usize {
    DEFAULT_MAX_ELECTRODES
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientMessage {
    SweepRequest(SweepRequest),
    Cancel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    Progress {
        electrode_count: usize,
        accuracy: f64,
    },
    Result {
        result: Box<SweepResult>,
        /// Id for `GET /models/{id}`: the classifier trained on the chosen
        /// layout over all requested trials.
        model_id: String,
    },
    Error(ErrorBody),
    Cancelled,
}

impl ServerMessage {
    pub fn is_terminal(&self) -> bool {
        !matches!(self, ServerMessage::Progress { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field: Option<String>,
}

/// A message together with its version tag, as it appears on the wire.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope<T> {
    pub v: u32,
    #[serde(flatten)]
    pub message: T,
}

impl<T> Envelope<T> {
    pub fn new(message: T) -> Self {
        Self {
            v: PROTOCOL_VERSION,
            message,
        }
    }
}

pub fn encode(message: ServerMessage) -> String {
    serde_json::to_string(&Envelope::new(message)).expect("server messages serialize")
}

/// Parses a client frame, checking the version first so a version mismatch
/// is reported as such rather than as a shape error.
pub fn decode(text: &str) -> Result<ClientMessage, ErrorBody> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| ErrorBody {
        code: "bad_message".into(),
        message: format!("not JSON: {e}"),
        field: None,
    })?;
    match value.get("v").and_then(|v| v.as_u64()) {
        Some(v) if v == u64::from(PROTOCOL_VERSION) => {}
        other => {
            return Err(ErrorBody {
                code: "unsupported_version".into(),
                message: format!("expected v = {PROTOCOL_VERSION}, got {other:?}"),
                field: Some("v".into()),
            })
        }
    }
    let mut object = value;
    if let Some(map) = object.as_object_mut() {
        map.remove("v");
    }
    serde_json::from_value(object).map_err(|e| ErrorBody {
        code: "bad_message".into(),
        message: e.to_string(),
        field: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn request_round_trips_with_defaults() {
        let msg = decode(
            r#"{"v":1,"type":"sweep_request","dataset":"d","user":"u0","gestures":[0,1],
                "scheme":"PI","classifier":"RF"}"#,
        )
        .unwrap();
        let ClientMessage::SweepRequest(req) = msg else {
            panic!("expected a sweep request")
        };
        assert_eq!(req.max_electrodes, 20);
        assert!(req.candidate_electrodes.is_empty());
        assert_eq!(req.seed, 0);
        assert_eq!(req.weights, None);
    }

    #[test]
    fn cancel_and_version_checks() {
        assert_eq!(decode(r#"{"v":1,"type":"cancel"}"#).unwrap(), ClientMessage::Cancel);
        let err = decode(r#"{"v":2,"type":"cancel"}"#).unwrap_err();
        assert_eq!(err.field.as_deref(), Some("v"));
        assert_eq!(decode("{").unwrap_err().code, "bad_message");
        assert_eq!(decode(r#"{"v":1,"type":"launch"}"#).unwrap_err().code, "bad_message");
    }

    #[test]
    fn server_messages_carry_version_and_type() {
        let text = encode(ServerMessage::Progress {
            electrode_count: 4,
            accuracy: 87.5,
        });
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["v"], 1);
        assert_eq!(v["type"], "progress");
        assert_eq!(v["electrode_count"], 4);
        let text = encode(ServerMessage::Cancelled);
        assert_eq!(text, r#"{"v":1,"type":"cancelled"}"#);
    }
}
