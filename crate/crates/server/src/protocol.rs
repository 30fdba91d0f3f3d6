//! Wire format. See PROTOCOL.md for the prose version.

use serde::{Deserialize, Serialize};

use rubble_core::camera::CameraState;

pub const HEADER_LEN: usize = 24;
/// Payload is a PNG-encoded 8-bit RGB image.
pub const PAYLOAD_PNG_RGB8: u8 = 1;
/// Set while the session is recording a dataset.
pub const FLAG_RECORDING: u8 = 1;

/// Fixed little-endian header preceding every binary frame payload.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameHeader {
    pub frame_index: u32,
    pub timestamp: f64,
    pub width: u16,
    pub height: u16,
    pub payload_kind: u8,
    pub flags: u8,
    pub payload_len: u32,
}

impl FrameHeader {
    pub fn encode(&self) -> [u8; HEADER_LEN] {
        let mut b = [0u8; HEADER_LEN];
        b[0..4].copy_from_slice(&self.frame_index.to_le_bytes());
        b[4..12].copy_from_slice(&self.timestamp.to_le_bytes());
        b[12..14].copy_from_slice(&self.width.to_le_bytes());
        b[14..16].copy_from_slice(&self.height.to_le_bytes());
        b[16] = self.payload_kind;
        b[17] = self.flags;
        b[18..22].copy_from_slice(&self.payload_len.to_le_bytes());
        // bytes 22..24 reserved, zero
        b
    }

    pub fn decode(b: &[u8]) -> Option<FrameHeader> {
        if b.len() < HEADER_LEN {
            return None;
        }
        Some(FrameHeader {
            frame_index: u32::from_le_bytes(b[0..4].try_into().ok()?),
            timestamp: f64::from_le_bytes(b[4..12].try_into().ok()?),
            width: u16::from_le_bytes(b[12..14].try_into().ok()?),
            height: u16::from_le_bytes(b[14..16].try_into().ok()?),
            payload_kind: b[16],
            flags: b[17],
            payload_len: u32::from_le_bytes(b[18..22].try_into().ok()?),
        })
    }
}

/// Client to server.
#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(tag = "cmd", rename_all = "lowercase")]
pub enum Command {
    /// Rotation deltas in radians about the body axes, then the new axial
    /// speed in m/s.
    Move {
        #[serde(default)]
        roll: f64,
        #[serde(default)]
        pitch: f64,
        #[serde(default)]
        yaw: f64,
        #[serde(default)]
        speed: f64,
        #[serde(default)]
        headlamp: Option<f64>,
    },
    /// Headlamp intensity (0 turns it off) and global light intensity.
    Light {
        #[serde(default)]
        headlamp: Option<f64>,
        #[serde(default)]
        intensity: Option<f64>,
    },
    Fog {
        #[serde(default)]
        density: Option<f64>,
        #[serde(default)]
        intensity: Option<f64>,
    },
    /// New pile from the session configuration with this seed.
    Regen {
        #[serde(default)]
        seed: Option<u64>,
    },
    Record { on: bool },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Move { .. } => "move",
            Command::Light { .. } => "light",
            Command::Fog { .. } => "fog",
            Command::Regen { .. } => "regen",
            Command::Record { .. } => "record",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize, Serialize)]
pub struct Pose {
    pub position: [f64; 3],
    /// x, y, z, w.
    pub orientation: [f64; 4],
}

impl From<&CameraState> for Pose {
    fn from(c: &CameraState) -> Pose {
        let q = c.orientation.quaternion();
        Pose {
            position: [c.position.x, c.position.y, c.position.z],
            orientation: [q.i, q.j, q.k, q.w],
        }
    }
}

/// Server to client, as JSON text frames.
#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Reply {
    Hello {
        width: u32,
        height: u32,
        rate: f64,
        seed: u64,
        instances: usize,
        version: u64,
    },
    /// `version` is the session state that the command produced; frames
    /// rendered from it carry the same or a later version.
    Ack {
        cmd: String,
        version: u64,
        epoch: u64,
        pose: Pose,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        digest: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        recording: Option<String>,
    },
    /// Sent right after the binary message of the same frame.
    Pose {
        frame_index: u32,
        timestamp: f64,
        epoch: u64,
        version: u64,
        pose: Pose,
    },
    Error {
        message: String,
    },
}

impl Reply {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("replies always serialize")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_round_trip() {
        let h = FrameHeader {
            frame_index: 7,
            timestamp: 1.25,
            width: 1024,
            height: 768,
            payload_kind: PAYLOAD_PNG_RGB8,
            flags: FLAG_RECORDING,
            payload_len: 123_456,
        };
        let b = h.encode();
        assert_eq!(b.len(), 24);
        assert_eq!(&b[22..], &[0, 0]);
        assert_eq!(FrameHeader::decode(&b), Some(h));
        assert_eq!(FrameHeader::decode(&b[..23]), None);
    }

    #[test]
    fn commands_parse() {
        let c: Command = serde_json::from_str(r#"{"cmd":"move","yaw":0.1,"speed":0.5}"#).unwrap();
        assert_eq!(
            c,
            Command::Move {
                roll: 0.0,
                pitch: 0.0,
                yaw: 0.1,
                speed: 0.5,
                headlamp: None
            }
        );
        let c: Command = serde_json::from_str(r#"{"cmd":"light","headlamp":2.0}"#).unwrap();
        assert_eq!(c.name(), "light");
        assert!(serde_json::from_str::<Command>(r#"{"cmd":"jump"}"#).is_err());
        assert!(serde_json::from_str::<Command>(r#"{"cmd":"record"}"#).is_err());
    }
}
