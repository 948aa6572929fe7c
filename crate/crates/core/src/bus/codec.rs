//! Length-prefixed binary framing for bus messages.
//!
//! ```text
//! "TBAG" | version u8 | payload_tag u8 | topic_len u8 | topic | stamp u64 | seq u64 | body_len u32 | body
//! ```
//!
//! All integers and floats are little-endian. Tag 6 is reserved for depth frames.

use std::io::{self, Read};
use std::sync::Arc;

use thiserror::Error;

use super::message::{ArmState, BusMessage, CameraFrame, Payload, Topic};
use crate::kinematics::{JointVector, JOINT_COUNT};
use crate::safety::{FeedbackCause, FeedbackSignal};
use crate::session::{SessionEvent, StateCode};

pub const MAGIC: [u8; 4] = *b"TBAG";
pub const VERSION: u8 = 1;
/// Fixed header bytes excluding the topic: magic, version, tag, topic_len, stamp, seq, body_len.
pub const HEADER_LEN: usize = 4 + 1 + 1 + 1 + 8 + 8 + 4;
pub const MAX_BODY_LEN: usize = 1 << 24;
pub const TAG_DEPTH_RESERVED: u8 = 6;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EncodeError {
    #[error("body is {0} bytes, limit is 2^24")]
    PayloadTooLarge(usize),
    #[error("camera frame {width}x{height} needs {expected} pixel bytes, has {actual}")]
    PixelCount {
        width: u16,
        height: u16,
        expected: usize,
        actual: usize,
    },
    #[error("joint message carries {0} arms, limit is 255")]
    TooManyArms(usize),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DecodeError {
    #[error("bad magic {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("unsupported wire version {0}")]
    UnsupportedVersion(u8),
    #[error("unknown payload tag {0}")]
    UnknownPayloadTag(u8),
    #[error("frame truncated: need {needed} bytes, have {available}")]
    TruncatedFrame { needed: usize, available: usize },
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("invalid topic: {0}")]
    InvalidTopic(String),
    #[error("invalid body: {0}")]
    InvalidBody(String),
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s(&mut self, vs: &[f64]) {
        for &v in vs {
            self.f64(v);
        }
    }
}

fn encode_body(payload: &Payload) -> Result<Vec<u8>, EncodeError> {
    let mut w = Writer(Vec::new());
    match payload {
        Payload::JointState(arms) => {
            w.u8(u8::try_from(arms.len()).map_err(|_| EncodeError::TooManyArms(arms.len()))?);
            for a in arms {
                w.f64s(&a.position);
                w.f64s(&a.velocity);
                w.f64s(&a.effort);
                w.f64(a.gripper);
            }
        }
        Payload::JointCommand(arms) => {
            w.u8(u8::try_from(arms.len()).map_err(|_| EncodeError::TooManyArms(arms.len()))?);
            for a in arms {
                w.f64s(&a.angles);
                w.f64(a.gripper);
            }
        }
        Payload::Feedback(fb) => {
            w.u8(fb.cause.code());
            for arm in &fb.magnitudes {
                w.f64s(arm);
            }
        }
        Payload::CameraFrame(f) => {
            let expected = f.width as usize * f.height as usize * 3;
            if f.pixels.len() != expected {
                return Err(EncodeError::PixelCount {
                    width: f.width,
                    height: f.height,
                    expected,
                    actual: f.pixels.len(),
                });
            }
            w.u8(f.camera_id);
            w.u64(f.frame_index);
            w.u16(f.width);
            w.u16(f.height);
            w.0.extend_from_slice(&f.pixels);
        }
        Payload::SessionEvent(ev) => {
            w.u8(ev.code());
            match ev {
                SessionEvent::Heartbeat => {}
                SessionEvent::EpisodeStart { episode_id } | SessionEvent::EpisodeStop { episode_id } => {
                    w.u64(*episode_id)
                }
                SessionEvent::StateChanged { state } => w.u8(*state as u8),
            }
        }
    }
    if w.0.len() > MAX_BODY_LEN {
        return Err(EncodeError::PayloadTooLarge(w.0.len()));
    }
    Ok(w.0)
}

/// Serialize one message into a self-delimiting frame.
pub fn encode_frame(msg: &BusMessage) -> Result<Vec<u8>, EncodeError> {
    let body = encode_body(&msg.payload)?;
    let topic = msg.topic.as_str().as_bytes();
    let mut out = Vec::with_capacity(HEADER_LEN + topic.len() + body.len());
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.push(msg.payload.tag());
    out.push(topic.len() as u8);
    out.extend_from_slice(topic);
    out.extend_from_slice(&msg.stamp.to_le_bytes());
    out.extend_from_slice(&msg.seq.to_le_bytes());
    out.extend_from_slice(&(body.len() as u32).to_le_bytes());
    out.extend_from_slice(&body);
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], DecodeError> {
        if self.buf.len() - self.pos < n {
            return Err(DecodeError::LengthMismatch(format!(
                "body ends after {} bytes, needed {} more",
                self.buf.len(),
                n - (self.buf.len() - self.pos)
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8, DecodeError> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16, DecodeError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, DecodeError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64, DecodeError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64s<const N: usize>(&mut self) -> Result<[f64; N], DecodeError> {
        let mut out = [0.0; N];
        for v in out.iter_mut() {
            *v = self.f64()?;
        }
        Ok(out)
    }
    fn finish(&self) -> Result<(), DecodeError> {
        if self.pos != self.buf.len() {
            return Err(DecodeError::LengthMismatch(format!(
                "{} trailing body bytes",
                self.buf.len() - self.pos
            )));
        }
        Ok(())
    }
}

fn decode_body(tag: u8, body: &[u8]) -> Result<Payload, DecodeError> {
    let mut r = Reader { buf: body, pos: 0 };
    let payload = match tag {
        1 => {
            let n = r.u8()?;
            let mut arms = Vec::with_capacity(n as usize);
            for _ in 0..n {
                arms.push(ArmState {
                    position: r.f64s::<JOINT_COUNT>()?,
                    velocity: r.f64s::<JOINT_COUNT>()?,
                    effort: r.f64s::<JOINT_COUNT>()?,
                    gripper: r.f64()?,
                });
            }
            Payload::JointState(arms)
        }
        2 => {
            let n = r.u8()?;
            let mut arms = Vec::with_capacity(n as usize);
            for _ in 0..n {
                let angles = r.f64s::<JOINT_COUNT>()?;
                arms.push(JointVector::new(angles, r.f64()?));
            }
            Payload::JointCommand(arms)
        }
        3 => {
            let code = r.u8()?;
            let cause = FeedbackCause::from_code(code)
                .ok_or_else(|| DecodeError::InvalidBody(format!("unknown feedback cause {code}")))?;
            let left = r.f64s::<JOINT_COUNT>()?;
            let right = r.f64s::<JOINT_COUNT>()?;
            Payload::Feedback(FeedbackSignal {
                magnitudes: [left, right],
                cause,
            })
        }
        4 => {
            let camera_id = r.u8()?;
            let frame_index = r.u64()?;
            let width = r.u16()?;
            let height = r.u16()?;
            let n = width as usize * height as usize * 3;
            let pixels: Arc<[u8]> = Arc::from(r.take(n)?);
            Payload::CameraFrame(CameraFrame {
                camera_id,
                frame_index,
                width,
                height,
                pixels,
            })
        }
        5 => {
            let code = r.u8()?;
            let ev = match code {
                0 => SessionEvent::Heartbeat,
                1 => SessionEvent::EpisodeStart { episode_id: r.u64()? },
                2 => SessionEvent::EpisodeStop { episode_id: r.u64()? },
                3 => {
                    let s = r.u8()?;
                    let state = StateCode::from_u8(s)
                        .ok_or_else(|| DecodeError::InvalidBody(format!("unknown state code {s}")))?;
                    SessionEvent::StateChanged { state }
                }
                other => return Err(DecodeError::InvalidBody(format!("unknown event code {other}"))),
            };
            Payload::SessionEvent(ev)
        }
        other => return Err(DecodeError::UnknownPayloadTag(other)),
    };
    r.finish()?;
    Ok(payload)
}

fn need(bytes: &[u8], n: usize) -> Result<(), DecodeError> {
    if bytes.len() < n {
        Err(DecodeError::TruncatedFrame {
            needed: n,
            available: bytes.len(),
        })
    } else {
        Ok(())
    }
}

/// Total frame length announced by a buffer holding at least the topic and body_len fields.
fn announced_len(bytes: &[u8]) -> Result<usize, DecodeError> {
    need(bytes, 7)?;
    let magic: [u8; 4] = bytes[..4].try_into().unwrap();
    if magic != MAGIC {
        return Err(DecodeError::BadMagic(magic));
    }
    if bytes[4] != VERSION {
        return Err(DecodeError::UnsupportedVersion(bytes[4]));
    }
    let topic_len = bytes[6] as usize;
    let fixed = HEADER_LEN + topic_len;
    need(bytes, fixed)?;
    let body_len = u32::from_le_bytes(bytes[fixed - 4..fixed].try_into().unwrap()) as usize;
    if body_len > MAX_BODY_LEN {
        return Err(DecodeError::LengthMismatch(format!("body_len {body_len} exceeds 2^24")));
    }
    Ok(fixed + body_len)
}

/// Decode exactly one frame; the buffer must hold nothing else.
pub fn decode_frame(bytes: &[u8]) -> Result<BusMessage, DecodeError> {
    let total = announced_len(bytes)?;
    need(bytes, total)?;
    if bytes.len() > total {
        return Err(DecodeError::LengthMismatch(format!(
            "{} bytes after the announced end of frame",
            bytes.len() - total
        )));
    }
    let tag = bytes[5];
    let topic_len = bytes[6] as usize;
    let topic_bytes = &bytes[7..7 + topic_len];
    let topic = std::str::from_utf8(topic_bytes)
        .map_err(|e| DecodeError::InvalidTopic(e.to_string()))
        .and_then(|s| Topic::new(s).map_err(|e| DecodeError::InvalidTopic(e.to_string())))?;
    let at = 7 + topic_len;
    let stamp = u64::from_le_bytes(bytes[at..at + 8].try_into().unwrap());
    let seq = u64::from_le_bytes(bytes[at + 8..at + 16].try_into().unwrap());
    let payload = decode_body(tag, &bytes[HEADER_LEN + topic_len..total])?;
    Ok(BusMessage {
        topic,
        stamp,
        seq,
        payload,
    })
}

#[derive(Debug, Error)]
pub enum StreamError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Decode(#[from] DecodeError),
}

/// Read one frame from a byte stream. `Ok(None)` on a clean end of stream
/// between frames; a stream that ends inside a frame yields `TruncatedFrame`.
pub fn read_frame<R: Read>(r: &mut R) -> Result<Option<BusMessage>, StreamError> {
    let mut buf = vec![0u8; 7];
    let got = read_up_to(r, &mut buf)?;
    if got == 0 {
        return Ok(None);
    }
    if got < 7 {
        return Err(DecodeError::TruncatedFrame {
            needed: 7,
            available: got,
        }
        .into());
    }
    let fixed = HEADER_LEN + buf[6] as usize;
    // Validate magic/version before trusting any lengths.
    if buf[..4] != MAGIC {
        return Err(DecodeError::BadMagic(buf[..4].try_into().unwrap()).into());
    }
    buf.resize(fixed, 0);
    fill(r, &mut buf, 7)?;
    let total = announced_len(&buf)?;
    buf.resize(total, 0);
    fill(r, &mut buf, fixed)?;
    Ok(Some(decode_frame(&buf)?))
}

fn read_up_to<R: Read>(r: &mut R, buf: &mut [u8]) -> io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(filled)
}

fn fill<R: Read>(r: &mut R, buf: &mut [u8], from: usize) -> Result<(), StreamError> {
    let got = read_up_to(r, &mut buf[from..])?;
    if from + got < buf.len() {
        return Err(DecodeError::TruncatedFrame {
            needed: buf.len(),
            available: from + got,
        }
        .into());
    }
    Ok(())
}
