//! Message encoding, used to emit synthetic NMEA traffic.

use chrono::{DateTime, Utc};

use super::bits::BitBuffer;
use super::message::{sentinel, COORD_SCALE};
use super::sentence::nmea_checksum;
use super::{PositionReport, StaticReport};

/// Payload characters per sentence before a message is split into fragments.
const MAX_PAYLOAD_CHARS: usize = 60;

pub fn encode_position(r: &PositionReport) -> BitBuffer {
    let mut b = BitBuffer::new();
    b.push_uint(r.msg_type as u64, 6);
    b.push_uint(0, 2);
    b.push_uint(r.mmsi as u64, 30);
    b.push_uint(r.navstat.0 as u64 & 0xF, 4);
    b.push_int(r.rot.map_or(sentinel::ROT, i64::from), 8);
    b.push_uint(r.sog.map_or(sentinel::SOG, |v| ((v * 10.0).round() as u64).min(1022)), 10);
    b.push_uint(0, 1);
    b.push_int((r.lon * COORD_SCALE).round() as i64, 28);
    b.push_int((r.lat * COORD_SCALE).round() as i64, 27);
    b.push_uint(r.cog.map_or(sentinel::COG, |v| ((v * 10.0).round() as u64).min(3599)), 12);
    b.push_uint(r.heading.map_or(sentinel::HEADING, |h| h as u64 % 360), 9);
    b.push_uint(r.timestamp.timestamp().rem_euclid(60) as u64, 6);
    // Maneuver, spare, RAIM, radio status.
    b.push_uint(0, 2 + 3 + 1 + 19);
    b
}

fn push_text(b: &mut BitBuffer, text: &str, chars: usize) {
    let mut bytes = text.bytes().map(|c| c.to_ascii_uppercase()).collect::<Vec<_>>();
    bytes.resize(chars, b'@');
    for c in bytes.into_iter().take(chars) {
        let v = match c {
            64..=95 => c - 64,
            32..=63 => c,
            _ => 0,
        };
        b.push_uint(v as u64, 6);
    }
}

pub fn encode_static(r: &StaticReport) -> BitBuffer {
    let mut b = BitBuffer::new();
    b.push_uint(5, 6);
    b.push_uint(0, 2);
    b.push_uint(r.mmsi as u64, 30);
    b.push_uint(0, 2); // AIS version
    b.push_uint(0, 30); // IMO
    push_text(&mut b, "", 7);
    push_text(&mut b, &r.vessel_name, 20);
    b.push_uint(r.ship_type as u64, 8);
    let d = r.dimensions.unwrap_or_default();
    b.push_uint(d.to_bow as u64, 9);
    b.push_uint(d.to_stern as u64, 9);
    b.push_uint(d.to_port as u64, 6);
    b.push_uint(d.to_starboard as u64, 6);
    b.push_uint(1, 4); // EPFD: GPS
    b.push_uint(0, 4 + 5 + 5 + 6 + 8);
    push_text(&mut b, "", 20);
    b.push_uint(0, 2);
    b
}

fn tag_block(time: DateTime<Utc>) -> String {
    let fields = format!("c:{}", time.timestamp());
    format!("\\{fields}*{:02X}\\", nmea_checksum(&fields))
}

/// Wraps a bit buffer in one or more `!AIVDM` sentences.
///
/// `message_id` is only written for multi-sentence messages. When `time` is
/// given every sentence carries it in a `c:` tag block.
pub fn to_sentences(bits: &BitBuffer, channel: char, message_id: u8, time: Option<DateTime<Utc>>) -> Vec<String> {
    let (payload, fill) = bits.to_payload();
    let chunks: Vec<&str> =
        payload.as_bytes().chunks(MAX_PAYLOAD_CHARS).map(|c| std::str::from_utf8(c).expect("armored payload is ASCII")).collect();
    let count = chunks.len();
    let prefix = time.map(tag_block).unwrap_or_default();
    chunks
        .iter()
        .enumerate()
        .map(|(i, chunk)| {
            let id = if count > 1 { (message_id % 10).to_string() } else { String::new() };
            let fill_here = if i + 1 == count { fill } else { 0 };
            let body = format!("AIVDM,{count},{},{id},{channel},{chunk},{fill_here}", i + 1);
            format!("{prefix}!{body}*{:02X}", nmea_checksum(&body))
        })
        .collect()
}
