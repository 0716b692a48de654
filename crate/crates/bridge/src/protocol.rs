//! JSON text frames exchanged with the fish-source client.
//!
//! Every frame is an object with a `type` field. Clients send `hello` once
//! and then a stream of `state` frames; the server answers with `agents`
//! frames, a final `end`, and `error` frames on problems.

use serde::{Deserialize, Serialize};

use shoalguide_core::analytics::OccupancyResult;
use shoalguide_core::rewards::RewardBreakdown;
use shoalguide_core::{TargetEnd, Vec2};

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClientMsg {
    Hello {
        protocol: u32,
        n_real: usize,
        client: String,
    },
    State {
        seq: u64,
        t_ms: u64,
        fish: Vec<Vec2>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub steps: usize,
    pub total_steps: usize,
    pub occupancy: Option<OccupancyResult>,
    /// Absent until both directions have samples.
    pub bhattacharyya: Option<f64>,
    pub complete: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    Busy,
    Protocol,
    Malformed,
    Bounds,
    Sequence,
    FishCount,
    Internal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMsg {
    Agents {
        protocol: u32,
        /// Index of the step these positions belong to. Frozen while stale.
        step: usize,
        target_end: TargetEnd,
        /// Policy positions when the fish snapshot was taken.
        agents: Vec<Vec2>,
        images: Vec<Vec2>,
        /// Policy positions at the end of this control period.
        next_agents: Vec<Vec2>,
        reward: Option<RewardBreakdown>,
        occupancy: Option<OccupancyResult>,
        stale: bool,
    },
    End {
        summary: SessionSummary,
        log_path: Option<String>,
    },
    Error {
        code: ErrorCode,
        message: String,
    },
}

impl ServerMsg {
    pub fn error(code: ErrorCode, message: impl Into<String>) -> Self {
        ServerMsg::Error {
            code,
            message: message.into(),
        }
    }

    pub fn to_text(&self) -> String {
        serde_json::to_string(self).expect("server frames serialize")
    }
}

/// Why a `state` frame was refused.
#[derive(Debug, Clone, PartialEq)]
pub enum StateRejection {
    Bounds { index: usize, x: f64, y: f64 },
    Sequence { last: u64, got: u64 },
    FishCount { expected: usize, got: usize },
}

impl StateRejection {
    pub fn to_msg(&self) -> ServerMsg {
        match *self {
            StateRejection::Bounds { index, x, y } => ServerMsg::error(
                ErrorCode::Bounds,
                format!("fish {index} at ({x}, {y}) is outside the unit square [0,1]x[0,1]"),
            ),
            StateRejection::Sequence { last, got } => ServerMsg::error(
                ErrorCode::Sequence,
                format!("sequence number {got} is not greater than {last}"),
            ),
            StateRejection::FishCount { expected, got } => ServerMsg::error(
                ErrorCode::FishCount,
                format!("expected {expected} fish positions, got {got}"),
            ),
        }
    }
}

/// Check a state frame against the session's fish count and the last
/// accepted sequence number.
pub fn validate_state(
    seq: u64,
    fish: &[Vec2],
    n_real: usize,
    last_seq: Option<u64>,
) -> Result<(), StateRejection> {
    if let Some(last) = last_seq {
        if seq <= last {
            return Err(StateRejection::Sequence { last, got: seq });
        }
    }
    if fish.len() != n_real {
        return Err(StateRejection::FishCount {
            expected: n_real,
            got: fish.len(),
        });
    }
    if let Some((index, f)) = fish.iter().enumerate().find(|(_, f)| !f.in_unit_square()) {
        return Err(StateRejection::Bounds { index, x: f.x, y: f.y });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn client_frames_parse() {
        let hello: ClientMsg =
            serde_json::from_str(r#"{"type":"hello","protocol":1,"n_real":3,"client":"ui"}"#).unwrap();
        assert_eq!(
            hello,
            ClientMsg::Hello {
                protocol: 1,
                n_real: 3,
                client: "ui".into()
            }
        );
        let state: ClientMsg =
            serde_json::from_str(r#"{"type":"state","seq":4,"t_ms":100,"fish":[[0.1,0.2]]}"#).unwrap();
        assert!(matches!(state, ClientMsg::State { seq: 4, .. }));
        assert!(serde_json::from_str::<ClientMsg>(r#"{"type":"agents"}"#).is_err());
        assert!(serde_json::from_str::<ClientMsg>(r#"{"type":"state","seq":1,"t_ms":0,"fish":[],"x":1}"#).is_err());
    }

    #[test]
    fn bounds_violation_cites_position() {
        let err = validate_state(1, &[Vec2::new(1.2, 0.5)], 1, None).unwrap_err();
        assert_eq!(err, StateRejection::Bounds { index: 0, x: 1.2, y: 0.5 });
        match err.to_msg() {
            ServerMsg::Error { code, message } => {
                assert_eq!(code, ErrorCode::Bounds);
                assert!(message.contains("1.2") && message.contains("unit square"));
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn sequence_must_increase() {
        let fish = [Vec2::new(0.5, 0.5)];
        assert!(validate_state(5, &fish, 1, Some(4)).is_ok());
        assert_eq!(
            validate_state(4, &fish, 1, Some(4)),
            Err(StateRejection::Sequence { last: 4, got: 4 })
        );
        assert_eq!(
            validate_state(6, &fish, 2, None),
            Err(StateRejection::FishCount { expected: 2, got: 1 })
        );
    }

    #[test]
    fn server_frame_shape() {
        let v: serde_json::Value =
            serde_json::from_str(&ServerMsg::error(ErrorCode::Busy, "session in progress").to_text()).unwrap();
        assert_eq!(v["type"], "error");
        assert_eq!(v["code"], "busy");
    }
}
