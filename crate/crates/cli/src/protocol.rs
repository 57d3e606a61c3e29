//! Messages exchanged with interactive clients.
//!
//! Clients send JSON text messages tagged by `type`. The server pushes
//! binary frames laid out as the ASCII magic `SSF1`, then width and height
//! as little-endian `u32`, then `width * height` RGBA8 pixels row by row.

use sandsim_core::{Image, Stroke, StrokeId};
use sandsim_physics::CanvasSmear;
use serde::{Deserialize, Serialize};

pub const FRAME_MAGIC: &[u8; 4] = b"SSF1";
pub const FRAME_HEADER_LEN: usize = 12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Command {
    /// Push sand at canvas pixel `(x, y)` along `(dx, dy)`.
    Smear {
        x: f64,
        y: f64,
        #[serde(default)]
        dx: f64,
        #[serde(default)]
        dy: f64,
        radius: f64,
        strength: f64,
    },
    /// Deposit a painting stroke by id, or an inline stroke.
    DepositStroke {
        #[serde(default)]
        stroke_id: Option<StrokeId>,
        #[serde(default)]
        stroke: Option<Stroke>,
    },
    Pause,
    Resume,
    Reset,
    SetParam { key: String, value: f64 },
    /// Queue script events `[start, end)` for progressive deposition.
    PlayScript { start: usize, end: usize },
}

/// Sent back to a client whose command was rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename = "error")]
pub struct ErrorMessage {
    pub message: String,
}

/// What the server knows at the socket without touching the simulation.
#[derive(Debug, Clone, Copy)]
pub struct Limits {
    pub width: usize,
    pub height: usize,
    pub script_events: usize,
}

impl Command {
    /// Parses and checks a client message.
    pub fn parse(text: &str, limits: &Limits) -> Result<Command, String> {
        let cmd: Command = serde_json::from_str(text).map_err(|e| format!("malformed command: {e}"))?;
        cmd.validate(limits)?;
        Ok(cmd)
    }

    pub fn validate(&self, limits: &Limits) -> Result<(), String> {
        match self {
            Command::Smear { x, y, dx, dy, radius, strength } => {
                if ![x, y, dx, dy, radius, strength].iter().all(|v| v.is_finite()) {
                    return Err("smear values must be finite".into());
                }
                if *x < 0.0 || *y < 0.0 || *x >= limits.width as f64 || *y >= limits.height as f64 {
                    return Err(format!("smear center ({x}, {y}) is outside the {}x{} canvas", limits.width, limits.height));
                }
                if *radius <= 0.0 || *strength <= 0.0 {
                    return Err("smear radius and strength must be positive".into());
                }
            }
            Command::DepositStroke { stroke_id, stroke } => match (stroke_id, stroke) {
                (Some(_), None) => {}
                (None, Some(s)) => s.validate().map_err(|e| e.to_string())?,
                _ => return Err("deposit_stroke needs exactly one of stroke_id or stroke".into()),
            },
            Command::SetParam { key, value } => {
                if key.is_empty() || !value.is_finite() {
                    return Err("set_param needs a key and a finite value".into());
                }
            }
            Command::PlayScript { start, end } => {
                if start > end || *end > limits.script_events {
                    return Err(format!(
                        "script range [{start}, {end}) is outside [0, {}]",
                        limits.script_events
                    ));
                }
            }
            Command::Pause | Command::Resume | Command::Reset => {}
        }
        Ok(())
    }

    pub fn smear(&self) -> Option<CanvasSmear> {
        match *self {
            Command::Smear { x, y, dx, dy, radius, strength } => Some(CanvasSmear {
                x,
                y,
                dx,
                dy,
                radius_px: radius,
                strength,
            }),
            _ => None,
        }
    }
}

pub fn encode_frame(img: &Image) -> Vec<u8> {
    let rgba = img.to_rgba8_bytes();
    let mut out = Vec::with_capacity(FRAME_HEADER_LEN + rgba.len());
    out.extend_from_slice(FRAME_MAGIC);
    out.extend_from_slice(&(img.width() as u32).to_le_bytes());
    out.extend_from_slice(&(img.height() as u32).to_le_bytes());
    out.extend_from_slice(&rgba);
    out
}

/// Splits a frame into `(width, height, rgba)`.
pub fn decode_frame(bytes: &[u8]) -> Result<(u32, u32, &[u8]), String> {
    if bytes.len() < FRAME_HEADER_LEN || &bytes[..4] != FRAME_MAGIC {
        return Err("not an SSF1 frame".into());
    }
    let w = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    let h = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    let body = &bytes[FRAME_HEADER_LEN..];
    if body.len() != w as usize * h as usize * 4 {
        return Err(format!("frame body has {} bytes, expected {}", body.len(), w as usize * h as usize * 4));
    }
    Ok((w, h, body))
}
