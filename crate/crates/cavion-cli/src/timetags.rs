//! Binary time-tag stream files.
//!
//! Little-endian layout: magic `ETTS`, u16 version (currently 1), u64
//! record count, then packed 13-byte records of (u32 trial, u8 channel,
//! u64 time_ps). An empty stream is exactly the 14-byte header.
//!
//! The format carries no trial-count field, so a reader recovers
//! `n_trials` as the highest trial index plus one; callers that know the
//! true count (trailing empty trials) should override it.

use std::fs;
use std::path::Path;

use cavion::photodynamics::{TimeTagRecord, TimeTagStream};

use crate::{CliError, Result};

pub const MAGIC: [u8; 4] = *b"ETTS";
pub const VERSION: u16 = 1;
const HEADER_LEN: u64 = 14;
const RECORD_LEN: u64 = 13;

/// Serializes a stream into the exact on-disk byte layout.
pub fn encode(stream: &TimeTagStream) -> Vec<u8> {
    let mut out = Vec::with_capacity((HEADER_LEN + RECORD_LEN * stream.records.len() as u64) as usize);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(stream.records.len() as u64).to_le_bytes());
    for r in &stream.records {
        out.extend_from_slice(&r.trial_index.to_le_bytes());
        out.push(r.channel);
        out.extend_from_slice(&r.time_ps.to_le_bytes());
    }
    out
}

/// Parses and validates the byte layout. Errors carry the exact byte
/// offset of the first offense.
pub fn decode(bytes: &[u8], path: &Path) -> Result<TimeTagStream> {
    let err = |offset: u64, message: &str| CliError::Format {
        path: path.to_path_buf(),
        offset,
        message: message.into(),
    };
    if bytes.len() < HEADER_LEN as usize {
        return Err(err(bytes.len() as u64, "truncated header"));
    }
    if bytes[0..4] != MAGIC {
        return Err(err(0, "bad magic, expected ETTS"));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(err(4, "unsupported version"));
    }
    let count = u64::from_le_bytes(bytes[6..14].try_into().expect("8 bytes"));
    let expected = HEADER_LEN + RECORD_LEN * count;
    if (bytes.len() as u64) < expected {
        // offset of the first incomplete record
        let complete = (bytes.len() as u64 - HEADER_LEN) / RECORD_LEN;
        return Err(err(HEADER_LEN + RECORD_LEN * complete, "truncated record"));
    }
    if bytes.len() as u64 > expected {
        return Err(err(expected, "trailing bytes after the last record"));
    }

    let mut records = Vec::with_capacity(count as usize);
    let mut n_trials: u32 = 0;
    let mut prev: Option<(u32, u64)> = None;
    for i in 0..count {
        let base = (HEADER_LEN + RECORD_LEN * i) as usize;
        let trial_index = u32::from_le_bytes(bytes[base..base + 4].try_into().expect("4 bytes"));
        let channel = bytes[base + 4];
        let time_ps = u64::from_le_bytes(bytes[base + 5..base + 13].try_into().expect("8 bytes"));
        if let Some(p) = prev {
            if (trial_index, time_ps) < p {
                return Err(err(base as u64, "records out of (trial, time) order"));
            }
        }
        prev = Some((trial_index, time_ps));
        n_trials = n_trials.max(trial_index.saturating_add(1));
        records.push(TimeTagRecord {
            trial_index,
            channel,
            time_ps,
        });
    }
    Ok(TimeTagStream { n_trials, records })
}

/// Writes a stream atomically (temp file, then rename).
pub fn write_timetags(stream: &TimeTagStream, path: &Path) -> Result<()> {
    crate::manifest::write_atomic(path, &encode(stream))
}

pub fn read_timetags(path: &Path) -> Result<TimeTagStream> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    decode(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_stream() -> TimeTagStream {
        TimeTagStream {
            n_trials: 5,
            records: vec![
                TimeTagRecord {
                    trial_index: 0,
                    channel: 0,
                    time_ps: 125,
                },
                TimeTagRecord {
                    trial_index: 2,
                    channel: 0,
                    time_ps: 99_000,
                },
                TimeTagRecord {
                    trial_index: 4,
                    channel: 1,
                    time_ps: 7,
                },
            ],
        }
    }

    #[test]
    fn empty_stream_is_fourteen_bytes() {
        let empty = TimeTagStream {
            n_trials: 0,
            records: vec![],
        };
        let bytes = encode(&empty);
        assert_eq!(bytes.len(), 14);
        let back = decode(&bytes, Path::new("x")).unwrap();
        assert!(back.records.is_empty());
    }

    #[test]
    fn byte_exact_round_trip() {
        let bytes = encode(&sample_stream());
        let back = decode(&bytes, Path::new("x")).unwrap();
        assert_eq!(encode(&back), bytes);
        // n_trials recovered as max index + 1
        assert_eq!(back.n_trials, 5);
    }

    #[test]
    fn bad_magic_reports_offset_zero() {
        let mut bytes = encode(&sample_stream());
        bytes[0] = b'X';
        match decode(&bytes, Path::new("x")) {
            Err(CliError::Format { offset, .. }) => assert_eq!(offset, 0),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_version_is_rejected() {
        let mut bytes = encode(&sample_stream());
        bytes[4] = 2;
        match decode(&bytes, Path::new("x")) {
            Err(CliError::Format { offset, .. }) => assert_eq!(offset, 4),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn truncation_reports_offending_record_offset() {
        let bytes = encode(&sample_stream());
        // cut into the middle of the second record
        let cut = &bytes[..14 + 13 + 5];
        match decode(cut, Path::new("x")) {
            Err(CliError::Format { offset, .. }) => assert_eq!(offset, 14 + 13),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn out_of_order_records_are_rejected() {
        let mut stream = sample_stream();
        stream.records.swap(0, 1);
        let bytes = encode(&stream);
        assert!(matches!(
            decode(&bytes, Path::new("x")),
            Err(CliError::Format { offset: 27, .. })
        ));
    }
}
