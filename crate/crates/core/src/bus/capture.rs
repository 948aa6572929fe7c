//! Message logs: wire frames written back to back.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::Path;

use thiserror::Error;

use super::codec::{encode_frame, read_frame, EncodeError, StreamError};
use super::BusMessage;

#[derive(Debug, Error)]
pub enum LogError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Encode(#[from] EncodeError),
    #[error("message {index}: {source}")]
    Read { index: usize, source: StreamError },
}

pub fn write_log(path: &Path, messages: &[BusMessage]) -> Result<(), LogError> {
    let mut w = BufWriter::new(File::create(path)?);
    for m in messages {
        w.write_all(&encode_frame(m)?)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_log(path: &Path) -> Result<Vec<BusMessage>, LogError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    loop {
        match read_frame(&mut r) {
            Ok(Some(m)) => out.push(m),
            Ok(None) => return Ok(out),
            Err(source) => {
                return Err(LogError::Read {
                    index: out.len(),
                    source,
                })
            }
        }
    }
}
