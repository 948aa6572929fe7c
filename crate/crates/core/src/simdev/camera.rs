//! Synthetic cameras producing self-describing test patterns.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::bus::CameraFrame;

const MARKER: u8 = 0xA5;
const HEADER_BYTES: usize = 1 + 1 + 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraConfig {
    pub width: u16,
    pub height: u16,
    /// Hz.
    pub rate: f64,
}

impl Default for CameraConfig {
    fn default() -> Self {
        Self {
            width: 32,
            height: 24,
            rate: 30.0,
        }
    }
}

impl CameraConfig {
    pub fn validate(&self) -> Result<(), String> {
        if (self.width as usize * self.height as usize * 3) < HEADER_BYTES {
            return Err(format!(
                "cameras.width × cameras.height must hold at least {} pixels",
                HEADER_BYTES.div_ceil(3)
            ));
        }
        if !(self.rate > 0.0 && self.rate.is_finite()) {
            return Err(format!("cameras.rate must be positive, got {}", self.rate));
        }
        Ok(())
    }
}

fn body_byte(camera_id: u8, frame_index: u64, i: usize) -> u8 {
    (i as u64)
        .wrapping_mul(31)
        .wrapping_add(frame_index.wrapping_mul(7))
        .wrapping_add(camera_id as u64 * 101) as u8
}

/// RGB8 pattern whose first bytes carry `(camera_id, frame_index)` and whose
/// remaining bytes are a deterministic function of both.
pub fn test_pattern(camera_id: u8, frame_index: u64, width: u16, height: u16) -> Vec<u8> {
    let len = width as usize * height as usize * 3;
    let mut px = Vec::with_capacity(len);
    px.push(MARKER);
    px.push(camera_id);
    px.extend_from_slice(&frame_index.to_le_bytes());
    px.extend((HEADER_BYTES..len).map(|i| body_byte(camera_id, frame_index, i)));
    px.truncate(len);
    px
}

/// Recover `(camera_id, frame_index)` from a test pattern, verifying every byte.
pub fn decode_test_pattern(pixels: &[u8]) -> Option<(u8, u64)> {
    if pixels.len() < HEADER_BYTES || pixels[0] != MARKER {
        return None;
    }
    let cam = pixels[1];
    let idx = u64::from_le_bytes(pixels[2..10].try_into().unwrap());
    pixels[HEADER_BYTES..]
        .iter()
        .enumerate()
        .all(|(k, &b)| b == body_byte(cam, idx, k + HEADER_BYTES))
        .then_some((cam, idx))
}

/// One synthetic camera; each call to [`next_frame`](Self::next_frame)
/// produces the next index.
#[derive(Debug, Clone)]
pub struct CameraSim {
    camera_id: u8,
    cfg: CameraConfig,
    next_index: u64,
}

impl CameraSim {
    pub fn new(camera_id: u8, cfg: CameraConfig) -> Self {
        Self {
            camera_id,
            cfg,
            next_index: 0,
        }
    }

    pub fn camera_id(&self) -> u8 {
        self.camera_id
    }

    pub fn config(&self) -> &CameraConfig {
        &self.cfg
    }

    pub fn next_frame(&mut self) -> CameraFrame {
        let idx = self.next_index;
        self.next_index += 1;
        CameraFrame {
            camera_id: self.camera_id,
            frame_index: idx,
            width: self.cfg.width,
            height: self.cfg.height,
            pixels: Arc::from(test_pattern(self.camera_id, idx, self.cfg.width, self.cfg.height)),
        }
    }
}
