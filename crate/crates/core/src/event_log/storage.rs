//! Length-prefixed record framing for topic files.
//!
//! Each record is a 4-byte big-endian length followed by that many bytes of
//! UTF-8 canonical JSON.

use std::fs::{File, OpenOptions};
use std::io::{self, BufReader, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use crate::payload::Payload;

use super::LogError;

pub(crate) const FILE_NAME: &str = "events.log";

pub(crate) fn topic_file(dir: &Path, topic: &str) -> PathBuf {
    dir.join(topic).join(FILE_NAME)
}

pub(crate) fn encode_frame(payload: &Payload) -> Vec<u8> {
    let body = payload.to_canonical();
    let len = u32::try_from(body.len()).expect("record larger than 4 GiB");
    let mut frame = Vec::with_capacity(4 + body.len());
    frame.extend_from_slice(&len.to_be_bytes());
    frame.extend_from_slice(body.as_bytes());
    frame
}

/// Records recovered from a topic file together with the file position of
/// each record.
pub(crate) struct Recovered {
    pub payloads: Vec<Payload>,
    pub positions: Vec<u64>,
    pub end: u64,
}

/// Reads every complete frame. A torn trailing frame (crash mid-append) is
/// truncated away; a complete frame with an undecodable body is corruption.
pub(crate) fn recover(path: &Path, topic: &str) -> Result<Recovered, LogError> {
    let file = OpenOptions::new().read(true).write(true).open(path)?;
    let file_len = file.metadata()?.len();
    let mut reader = BufReader::new(&file);
    let mut payloads = Vec::new();
    let mut positions = Vec::new();
    let mut pos = 0u64;
    loop {
        let mut header = [0u8; 4];
        match read_exact_or_eof(&mut reader, &mut header)? {
            Fill::Eof => break,
            Fill::Partial => {
                log::warn!("topic {topic}: truncating torn header at byte {pos}");
                break;
            }
            Fill::Full => {}
        }
        let len = u64::from(u32::from_be_bytes(header));
        if pos + 4 + len > file_len {
            log::warn!("topic {topic}: truncating torn record at byte {pos}");
            break;
        }
        let mut body = vec![0u8; len as usize];
        reader.read_exact(&mut body)?;
        let text = String::from_utf8(body).map_err(|e| LogError::Corrupt {
            topic: topic.to_owned(),
            position: pos,
            reason: e.to_string(),
        })?;
        let payload = Payload::parse(&text).map_err(|e| LogError::Corrupt {
            topic: topic.to_owned(),
            position: pos,
            reason: e.to_string(),
        })?;
        positions.push(pos);
        payloads.push(payload);
        pos += 4 + len;
    }
    drop(reader);
    if pos < file_len {
        file.set_len(pos)?;
    }
    Ok(Recovered {
        payloads,
        positions,
        end: pos,
    })
}

enum Fill {
    Full,
    Partial,
    Eof,
}

fn read_exact_or_eof(reader: &mut impl Read, buf: &mut [u8]) -> io::Result<Fill> {
    let mut filled = 0;
    while filled < buf.len() {
        match reader.read(&mut buf[filled..]) {
            Ok(0) => {
                return Ok(if filled == 0 {
                    Fill::Eof
                } else {
                    Fill::Partial
                })
            }
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(Fill::Full)
}

/// Append handle positioned at the end of a topic file.
pub(crate) struct Writer {
    file: File,
    end: u64,
}

impl Writer {
    pub fn open(path: &Path, end: u64) -> io::Result<Self> {
        let mut file = OpenOptions::new()
            .create(true)
            .write(true)
            .truncate(false)
            .open(path)?;
        file.seek(SeekFrom::Start(end))?;
        Ok(Self { file, end })
    }

    /// Writes one frame and returns its starting position.
    pub fn append(&mut self, frame: &[u8]) -> io::Result<u64> {
        let pos = self.end;
        self.file.write_all(frame)?;
        self.file.flush()?;
        self.end += frame.len() as u64;
        Ok(pos)
    }
}
