//! On-disk episode layout.
//!
//! ```text
//! <root>/<episode_id>/manifest.json
//! <root>/<episode_id>/records.tbr
//! <root>/<episode_id>/frames/<camera_id>/<frame_index>.rgb
//! ```
//!
//! `records.tbr` is `"TBR1" | count u64 | count × record`, little-endian,
//! with fixed-width records. Frame files are `width u16 | height u16 | RGB8`.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bus::ArmState;
use crate::kinematics::{JointVector, JOINT_COUNT};

use super::{
    EpisodeLabels, EpisodeRecord, EpisodeStatus, Episode, FrameImage, FrameRef, Manifest,
};

pub const FORMAT_VERSION: u32 = 1;
pub const RECORDS_MAGIC: [u8; 4] = *b"TBR1";
const RECORDS_HEADER: usize = 4 + 8;
const MANIFEST_FILE: &str = "manifest.json";
const RECORDS_FILE: &str = "records.tbr";
const FRAMES_DIR: &str = "frames";

const ARM_OBS_WIDTH: usize = (3 * JOINT_COUNT + 1) * 8;
const ARM_ACTION_WIDTH: usize = (JOINT_COUNT + 1) * 8;
const FRAME_REF_WIDTH: usize = 1 + 8 + 8;

/// Bytes per record for a given camera count.
pub fn record_width(camera_count: u8) -> usize {
    8 + 2 * ARM_OBS_WIDTH + 2 * ARM_ACTION_WIDTH + camera_count as usize * FRAME_REF_WIDTH + 3
}

#[derive(Debug, Error)]
pub enum ReadError {
    #[error("no manifest at {0}")]
    MissingManifest(PathBuf),
    #[error("manifest is not valid: {0}")]
    BadManifest(String),
    #[error("unsupported format_version {0}")]
    UnsupportedFormat(u32),
    #[error("records file missing at {0}")]
    MissingRecords(PathBuf),
    #[error("records file has bad magic")]
    BadRecordsMagic,
    #[error("records file truncated: expected {expected} bytes, found {actual}")]
    TruncatedRecords { expected: usize, actual: usize },
    #[error("records file has {0} trailing bytes")]
    TrailingBytes(usize),
    #[error("records checksum mismatch: manifest {expected:08x}, file {actual:08x}")]
    ChecksumMismatch { expected: u32, actual: u32 },
    #[error("record count {file} in records file, manifest says {manifest}")]
    RecordCountMismatch { file: u64, manifest: u64 },
    #[error("record {index} is malformed: {reason}")]
    BadRecord { index: usize, reason: &'static str },
    #[error("record {index} references missing frame {camera_id}/{frame_index}")]
    DanglingFrameReference {
        index: usize,
        camera_id: u8,
        frame_index: u64,
    },
    #[error("frame file {0} is malformed")]
    BadFrame(PathBuf),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

impl ReadError {
    /// Stable name of the failure kind.
    pub fn class(&self) -> &'static str {
        match self {
            ReadError::MissingManifest(_) => "MissingManifest",
            ReadError::BadManifest(_) => "BadManifest",
            ReadError::UnsupportedFormat(_) => "UnsupportedFormat",
            ReadError::MissingRecords(_) => "MissingRecords",
            ReadError::BadRecordsMagic => "BadRecordsMagic",
            ReadError::TruncatedRecords { .. } => "TruncatedRecords",
            ReadError::TrailingBytes(_) => "TrailingBytes",
            ReadError::ChecksumMismatch { .. } => "ChecksumMismatch",
            ReadError::RecordCountMismatch { .. } => "RecordCountMismatch",
            ReadError::BadRecord { .. } => "BadRecord",
            ReadError::DanglingFrameReference { .. } => "DanglingFrame",
            ReadError::BadFrame(_) => "BadFrame",
            ReadError::Io(_) => "Io",
        }
    }
}

/// Manifest as stored: in-memory fields plus integrity data.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestFile {
    format_version: u32,
    episode_id: u64,
    wall_clock: String,
    rig_hash: String,
    task: String,
    location: String,
    operator: String,
    status: EpisodeStatus,
    camera_count: u8,
    start_stamp_ns: u64,
    record_start_ns: Option<u64>,
    end_stamp_ns: u64,
    skipped_ticks: u64,
    record_count: u64,
    records_crc32: u32,
}

impl ManifestFile {
    fn new(m: &Manifest, record_count: u64, records_crc32: u32) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            episode_id: m.episode_id,
            wall_clock: m.wall_clock.clone(),
            rig_hash: m.rig_hash.clone(),
            task: m.labels.task.clone(),
            location: m.labels.location.clone(),
            operator: m.labels.operator.clone(),
            status: m.status,
            camera_count: m.camera_count,
            start_stamp_ns: m.start_stamp_ns,
            record_start_ns: m.record_start_ns,
            end_stamp_ns: m.end_stamp_ns,
            skipped_ticks: m.skipped_ticks,
            record_count,
            records_crc32,
        }
    }

    fn manifest(self) -> Manifest {
        Manifest {
            episode_id: self.episode_id,
            wall_clock: self.wall_clock,
            rig_hash: self.rig_hash,
            labels: EpisodeLabels {
                task: self.task,
                location: self.location,
                operator: self.operator,
            },
            status: self.status,
            camera_count: self.camera_count,
            start_stamp_ns: self.start_stamp_ns,
            record_start_ns: self.record_start_ns,
            end_stamp_ns: self.end_stamp_ns,
            skipped_ticks: self.skipped_ticks,
        }
    }
}

pub fn episode_dir_name(episode_id: u64) -> String {
    format!("{episode_id:06}")
}

/// Episode directories directly under `root` (those holding a manifest), sorted by name.
pub fn list_episode_dirs(root: &Path) -> io::Result<Vec<PathBuf>> {
    if !root.exists() {
        return Ok(Vec::new());
    }
    let mut dirs = Vec::new();
    for entry in fs::read_dir(root)? {
        let path = entry?.path();
        if path.join(MANIFEST_FILE).is_file() {
            dirs.push(path);
        }
    }
    dirs.sort();
    Ok(dirs)
}

/// One past the largest numeric episode directory name under `root`.
pub fn next_episode_id(root: &Path) -> io::Result<u64> {
    if !root.exists() {
        return Ok(0);
    }
    let mut next = 0;
    for entry in fs::read_dir(root)? {
        let name = entry?.file_name();
        if let Some(id) = name.to_str().and_then(|s| s.parse::<u64>().ok()) {
            next = next.max(id + 1);
        }
    }
    Ok(next)
}

fn put_f64s(out: &mut Vec<u8>, vals: &[f64]) {
    for v in vals {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn encode_records(records: &[EpisodeRecord], camera_count: u8) -> Vec<u8> {
    let width = record_width(camera_count);
    let mut out = Vec::with_capacity(RECORDS_HEADER + records.len() * width);
    out.extend_from_slice(&RECORDS_MAGIC);
    out.extend_from_slice(&(records.len() as u64).to_le_bytes());
    for r in records {
        assert_eq!(
            r.frames.len(),
            camera_count as usize,
            "record frame count must match the manifest camera count"
        );
        put_f64s(&mut out, &[r.t]);
        for arm in &r.obs {
            put_f64s(&mut out, &arm.position);
            put_f64s(&mut out, &arm.velocity);
            put_f64s(&mut out, &arm.effort);
            put_f64s(&mut out, &[arm.gripper]);
        }
        for cmd in &r.action {
            put_f64s(&mut out, &cmd.angles);
            put_f64s(&mut out, &[cmd.gripper]);
        }
        for f in &r.frames {
            out.push(f.camera_id);
            out.extend_from_slice(&f.frame_index.to_le_bytes());
            out.extend_from_slice(&f.frame_stamp.to_le_bytes());
        }
        out.push(r.feedback_cause);
        out.push(r.gated as u8);
        out.push(r.stale as u8);
    }
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take<const N: usize>(&mut self) -> [u8; N] {
        let out: [u8; N] = self.buf[self.pos..self.pos + N].try_into().unwrap();
        self.pos += N;
        out
    }
    fn u8(&mut self) -> u8 {
        self.take::<1>()[0]
    }
    fn u64(&mut self) -> u64 {
        u64::from_le_bytes(self.take())
    }
    fn f64(&mut self) -> f64 {
        f64::from_le_bytes(self.take())
    }
    fn f64s<const N: usize>(&mut self) -> [f64; N] {
        std::array::from_fn(|_| self.f64())
    }
}

fn flag(v: u8, index: usize, what: &'static str) -> Result<bool, ReadError> {
    match v {
        0 => Ok(false),
        1 => Ok(true),
        _ => Err(ReadError::BadRecord { index, reason: what }),
    }
}

fn decode_records(bytes: &[u8], camera_count: u8) -> Result<Vec<EpisodeRecord>, ReadError> {
    if bytes.len() < RECORDS_HEADER {
        return Err(ReadError::TruncatedRecords {
            expected: RECORDS_HEADER,
            actual: bytes.len(),
        });
    }
    if bytes[..4] != RECORDS_MAGIC {
        return Err(ReadError::BadRecordsMagic);
    }
    let count = u64::from_le_bytes(bytes[4..12].try_into().unwrap());
    let width = record_width(camera_count);
    let expected = (count as usize)
        .checked_mul(width)
        .and_then(|n| n.checked_add(RECORDS_HEADER))
        .unwrap_or(usize::MAX);
    if bytes.len() < expected {
        return Err(ReadError::TruncatedRecords {
            expected,
            actual: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(ReadError::TrailingBytes(bytes.len() - expected));
    }
    let mut c = Cursor {
        buf: bytes,
        pos: RECORDS_HEADER,
    };
    let mut records = Vec::with_capacity(count as usize);
    for index in 0..count as usize {
        let t = c.f64();
        let obs = std::array::from_fn(|_| ArmState {
            position: c.f64s(),
            velocity: c.f64s(),
            effort: c.f64s(),
            gripper: c.f64(),
        });
        let action = std::array::from_fn(|_| JointVector {
            angles: c.f64s(),
            gripper: c.f64(),
        });
        let frames = (0..camera_count)
            .map(|_| FrameRef {
                camera_id: c.u8(),
                frame_index: c.u64(),
                frame_stamp: c.u64(),
            })
            .collect();
        let feedback_cause = c.u8();
        let gated = flag(c.u8(), index, "gated flag is not 0 or 1")?;
        let stale = flag(c.u8(), index, "stale flag is not 0 or 1")?;
        records.push(EpisodeRecord {
            t,
            obs,
            action,
            frames,
            feedback_cause,
            gated,
            stale,
        });
    }
    Ok(records)
}

fn frame_path(dir: &Path, camera_id: u8, frame_index: u64) -> PathBuf {
    dir.join(FRAMES_DIR)
        .join(camera_id.to_string())
        .join(format!("{frame_index}.rgb"))
}

/// Write `episode` under `root` and return its directory. The directory is
/// assembled under a temporary name and renamed into place.
pub fn write_episode(episode: &Episode, root: &Path) -> io::Result<PathBuf> {
    let name = episode_dir_name(episode.manifest.episode_id);
    let final_dir = root.join(&name);
    let tmp_dir = root.join(format!(".{name}.partial"));
    if tmp_dir.exists() {
        fs::remove_dir_all(&tmp_dir)?;
    }
    fs::create_dir_all(&tmp_dir)?;

    let records = encode_records(&episode.records, episode.manifest.camera_count);
    let crc = crc32fast::hash(&records);
    fs::write(tmp_dir.join(RECORDS_FILE), &records)?;

    for (&(cam, idx), img) in &episode.frames {
        let path = frame_path(&tmp_dir, cam, idx);
        fs::create_dir_all(path.parent().unwrap())?;
        let mut bytes = Vec::with_capacity(4 + img.pixels.len());
        bytes.extend_from_slice(&img.width.to_le_bytes());
        bytes.extend_from_slice(&img.height.to_le_bytes());
        bytes.extend_from_slice(&img.pixels);
        fs::write(path, bytes)?;
    }

    let manifest = ManifestFile::new(&episode.manifest, episode.records.len() as u64, crc);
    let mut json = serde_json::to_string_pretty(&manifest).map_err(io::Error::other)?;
    json.push('\n');
    fs::write(tmp_dir.join(MANIFEST_FILE), json)?;

    if final_dir.exists() {
        fs::remove_dir_all(&final_dir)?;
    }
    fs::rename(&tmp_dir, &final_dir)?;
    Ok(final_dir)
}

fn read_frame_file(path: &Path) -> Result<FrameImage, ReadError> {
    let bytes = fs::read(path)?;
    if bytes.len() < 4 {
        return Err(ReadError::BadFrame(path.to_owned()));
    }
    let width = u16::from_le_bytes([bytes[0], bytes[1]]);
    let height = u16::from_le_bytes([bytes[2], bytes[3]]);
    if bytes.len() - 4 != width as usize * height as usize * 3 {
        return Err(ReadError::BadFrame(path.to_owned()));
    }
    Ok(FrameImage {
        width,
        height,
        pixels: bytes[4..].to_vec(),
    })
}

/// Load an episode directory. Only frames referenced by records are loaded.
pub fn read_episode(dir: &Path) -> Result<Episode, ReadError> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = match fs::read_to_string(&manifest_path) {
        Ok(t) => t,
        Err(e) if e.kind() == io::ErrorKind::NotFound => {
            return Err(ReadError::MissingManifest(manifest_path))
        }
        Err(e) => return Err(e.into()),
    };
    let file: ManifestFile =
        serde_json::from_str(&text).map_err(|e| ReadError::BadManifest(e.to_string()))?;
    if file.format_version != FORMAT_VERSION {
        return Err(ReadError::UnsupportedFormat(file.format_version));
    }

    let records_path = dir.join(RECORDS_FILE);
    let bytes = match fs::read(&records_path) {
        Ok(b) => b,
        Err(e) if e.kind() == io::ErrorKind::NotFound => {
            return Err(ReadError::MissingRecords(records_path))
        }
        Err(e) => return Err(e.into()),
    };
    // Structural checks come first so a short file reports truncation, not a bad checksum.
    let records = decode_records(&bytes, file.camera_count)?;
    let actual = crc32fast::hash(&bytes);
    if actual != file.records_crc32 {
        return Err(ReadError::ChecksumMismatch {
            expected: file.records_crc32,
            actual,
        });
    }
    if records.len() as u64 != file.record_count {
        return Err(ReadError::RecordCountMismatch {
            file: records.len() as u64,
            manifest: file.record_count,
        });
    }

    let mut frames = BTreeMap::new();
    for (index, r) in records.iter().enumerate() {
        for f in &r.frames {
            let key = (f.camera_id, f.frame_index);
            if frames.contains_key(&key) {
                continue;
            }
            let path = frame_path(dir, f.camera_id, f.frame_index);
            if !path.is_file() {
                return Err(ReadError::DanglingFrameReference {
                    index,
                    camera_id: f.camera_id,
                    frame_index: f.frame_index,
                });
            }
            frames.insert(key, read_frame_file(&path)?);
        }
    }

    Ok(Episode {
        manifest: file.manifest(),
        records,
        frames,
    })
}
