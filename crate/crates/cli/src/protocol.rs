//! Control-channel wire format.
//!
//! Text messages are JSON objects tagged by `"type"`. Binary messages are
//! frames: a 16-byte header followed by raw RGBA rows.

use std::collections::BTreeMap;

use reef_core::substrate::RgbFrame;
use reef_core::BrushTool;
use serde::{Deserialize, Serialize};

pub const FRAME_MAGIC: &[u8; 4] = b"FRME";
pub const FRAME_HEADER_LEN: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Stream {
    Frame,
    Telemetry,
}

#[derive(Clone, Debug, PartialEq, Deserialize, Serialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClientMessage {
    Pause,
    Resume,
    Step { n: u64 },
    SetParam { path: String, value: f64 },
    Brush { tool: BrushTool, x: usize, y: usize, radius: usize, amount: f64 },
    Subscribe { stream: Stream, fps: u32 },
    Snapshot,
    /// Current values of every runtime-adjustable parameter.
    GetParams,
}

#[derive(Clone, Debug, PartialEq, Deserialize, Serialize)]
pub struct Telemetry {
    pub step: u64,
    /// Measured simulation steps per second.
    pub fps: f64,
    pub live_genomes: usize,
    pub total_energy: f64,
    pub total_infrastructure: f64,
    pub msc: f64,
    pub mean_distance: f64,
}

#[derive(Clone, Debug, PartialEq, Deserialize, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    Ack,
    Error { msg: String },
    Telemetry(Telemetry),
    SnapshotSaved { path: String },
    /// Sent once on connect.
    Hello { width: usize, height: usize, step: u64, paused: bool },
    Params { values: BTreeMap<String, f64> },
}

impl ServerMessage {
    pub fn error(msg: impl Into<String>) -> Self {
        ServerMessage::Error { msg: msg.into() }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("server message serializes")
    }
}

pub fn parse_client(text: &str) -> Result<ClientMessage, String> {
    serde_json::from_str(text).map_err(|e| format!("invalid message: {e}"))
}

/// `FRME`, step (u32), width (u16), height (u16), 4 reserved zero bytes,
/// then `width * height` RGBA pixels. Steps wrap modulo 2^32.
pub fn encode_frame(step: u64, frame: &RgbFrame) -> Vec<u8> {
    let mut out = Vec::with_capacity(FRAME_HEADER_LEN + frame.pixels.len());
    out.extend_from_slice(FRAME_MAGIC);
    out.extend_from_slice(&(step as u32).to_le_bytes());
    out.extend_from_slice(&(frame.width as u16).to_le_bytes());
    out.extend_from_slice(&(frame.height as u16).to_le_bytes());
    out.extend_from_slice(&[0; 4]);
    out.extend_from_slice(&frame.pixels);
    out
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FrameHeader {
    pub step: u32,
    pub width: u16,
    pub height: u16,
}

pub fn decode_frame(bytes: &[u8]) -> Result<(FrameHeader, &[u8]), String> {
    if bytes.len() < FRAME_HEADER_LEN || &bytes[..4] != FRAME_MAGIC {
        return Err("not a frame".into());
    }
    let header = FrameHeader {
        step: u32::from_le_bytes(bytes[4..8].try_into().unwrap()),
        width: u16::from_le_bytes(bytes[8..10].try_into().unwrap()),
        height: u16::from_le_bytes(bytes[10..12].try_into().unwrap()),
    };
    let body = &bytes[FRAME_HEADER_LEN..];
    if body.len() != header.width as usize * header.height as usize * 4 {
        return Err("frame body size does not match header".into());
    }
    Ok((header, body))
}
