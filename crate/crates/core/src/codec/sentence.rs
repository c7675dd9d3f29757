use chrono::{DateTime, TimeZone, Utc};
use serde::{Deserialize, Serialize};

use super::bits::dearmor;
use super::CodecError;

/// One NMEA 0183 `!AIVDM` / `!AIVDO` sentence, checksum verified.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawSentence {
    /// Talker plus sentence formatter, e.g. `AIVDM`.
    pub talker: String,
    pub fragment_count: u8,
    pub fragment_index: u8,
    pub message_id: Option<u8>,
    pub channel: Option<char>,
    pub payload: String,
    pub fill_bits: u8,
    pub checksum: u8,
    /// Receiver time from an NMEA 4 tag block (`\c:<unix seconds>*hh\`), if any.
    pub tag_time: Option<DateTime<Utc>>,
}

impl RawSentence {
    pub fn is_multipart(&self) -> bool {
        self.fragment_count > 1
    }
}

/// XOR of all bytes of `body` (the characters between the start delimiter and `*`).
pub fn nmea_checksum(body: &str) -> u8 {
    body.bytes().fold(0u8, |acc, b| acc ^ b)
}

fn split_checksum(s: &str) -> Result<(&str, u8), CodecError> {
    let star = s.rfind('*').ok_or_else(|| CodecError::Malformed("missing '*' checksum delimiter".into()))?;
    let hex = &s[star + 1..];
    // Uppercase only: a case flip in the checksum must not go unnoticed.
    if hex.len() != 2 || !hex.bytes().all(|b| b.is_ascii_digit() || (b'A'..=b'F').contains(&b)) {
        return Err(CodecError::Malformed(format!("checksum field {hex:?} is not two uppercase hex digits")));
    }
    let declared = u8::from_str_radix(hex, 16).expect("validated hex");
    Ok((&s[..star], declared))
}

/// Strips a leading tag block and returns its `c:` timestamp, if present.
fn strip_tag_block(line: &str) -> Result<(&str, Option<DateTime<Utc>>), CodecError> {
    let Some(rest) = line.strip_prefix('\\') else {
        return Ok((line, None));
    };
    let end = rest.find('\\').ok_or_else(|| CodecError::Malformed("unterminated tag block".into()))?;
    let block = &rest[..end];
    let (fields, declared) = split_checksum(block)?;
    let computed = nmea_checksum(fields);
    if computed != declared {
        return Err(CodecError::BadChecksum { declared, computed });
    }
    let mut time = None;
    for field in fields.split(',') {
        if let Some(v) = field.strip_prefix("c:") {
            let secs: i64 = v.parse().map_err(|_| CodecError::Malformed(format!("bad tag block time {v:?}")))?;
            // Some sources write milliseconds.
            let secs = if secs > 100_000_000_000 { secs / 1000 } else { secs };
            time =
                Some(Utc.timestamp_opt(secs, 0).single().ok_or_else(|| CodecError::Malformed(format!("tag block time {v} out of range")))?);
        }
    }
    Ok((&rest[end + 1..], time))
}

fn small_number(field: &str, what: &str, max: u8) -> Result<u8, CodecError> {
    match field.parse::<u8>() {
        Ok(v) if v <= max && !field.is_empty() && field.bytes().all(|b| b.is_ascii_digit()) => Ok(v),
        _ => Err(CodecError::Malformed(format!("{what} {field:?} invalid"))),
    }
}

/// Parses and checksum-verifies one NMEA line. Trailing CR/LF is ignored.
pub fn parse_sentence(line: &str) -> Result<RawSentence, CodecError> {
    let line = line.trim_end_matches(['\r', '\n']);
    if line.is_empty() {
        return Err(CodecError::Malformed("empty line".into()));
    }
    let (sentence, tag_time) = strip_tag_block(line)?;
    // VDM/VDO are encapsulation sentences, which always start with '!'.
    let body_start = match sentence.as_bytes().first() {
        Some(b'!') => 1,
        _ => return Err(CodecError::Malformed("sentence must start with '!'".into())),
    };
    let (body, declared) = split_checksum(&sentence[body_start..])?;
    let computed = nmea_checksum(body);
    if computed != declared {
        return Err(CodecError::BadChecksum { declared, computed });
    }

    let fields: Vec<&str> = body.split(',').collect();
    if fields.len() != 7 {
        return Err(CodecError::Malformed(format!("expected 7 fields, found {}", fields.len())));
    }
    let talker = fields[0];
    if talker.len() != 5 || !(talker.ends_with("VDM") || talker.ends_with("VDO")) {
        return Err(CodecError::Malformed(format!("unsupported sentence type {talker:?}")));
    }
    let fragment_count = small_number(fields[1], "fragment count", 9)?;
    let fragment_index = small_number(fields[2], "fragment index", 9)?;
    if fragment_count == 0 || fragment_index == 0 || fragment_index > fragment_count {
        return Err(CodecError::Malformed(format!("fragment {fragment_index} of {fragment_count}")));
    }
    let message_id = match fields[3] {
        "" => None,
        f => Some(small_number(f, "sequential message id", 9)?),
    };
    let mut chan = fields[4].chars();
    let channel = match (chan.next(), chan.next()) {
        (None, _) => None,
        (Some(c), None) => Some(c),
        _ => return Err(CodecError::Malformed(format!("channel {:?} is not a single character", fields[4]))),
    };
    let payload = fields[5];
    if payload.is_empty() {
        return Err(CodecError::Malformed("empty payload".into()));
    }
    if let Some(bad) = payload.bytes().find(|&b| dearmor(b).is_none()) {
        return Err(CodecError::Malformed(format!("payload character {:?} outside armoring alphabet", bad as char)));
    }
    let fill_bits = small_number(fields[6], "fill bits", 5)?;

    Ok(RawSentence {
        talker: talker.to_string(),
        fragment_count,
        fragment_index,
        message_id,
        channel,
        payload: payload.to_string(),
        fill_bits,
        checksum: declared,
        tag_time,
    })
}
