//! NMEA AIVDM/AIVDO decoding.
//!
//! [`parse_sentence`] verifies one line, [`FragmentAssembler`] joins
//! multi-sentence messages, and [`decode_position`] / [`decode_static`]
//! extract typed reports. [`Decoder`] strings these together for a line
//! stream and classifies every line.

pub mod bits;
pub mod encode;
mod message;
mod sentence;

use std::collections::BTreeMap;
use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use bits::{assemble_fragments, Assembly, BitBuffer, FragmentAssembler};
pub use message::{decode_position, decode_static, message_type, POSITION_REPORT_BITS, STATIC_REPORT_MIN_BITS};
pub use sentence::{nmea_checksum, parse_sentence, RawSentence};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CodecError {
    #[error("checksum mismatch: declared {declared:02X}, computed {computed:02X}")]
    BadChecksum { declared: u8, computed: u8 },
    #[error("malformed sentence: {0}")]
    Malformed(String),
    #[error("missing fragment")]
    MissingFragment,
    #[error("duplicate fragment")]
    DuplicateFragment,
    #[error("fragments not completed within the reassembly window")]
    Timeout,
    #[error("unexpected message type {0}")]
    WrongType(u8),
    #[error("bit buffer too short: need {needed} bits, have {got}")]
    TruncatedBuffer { needed: usize, got: usize },
    #[error("position out of range: lat {lat}, lon {lon}")]
    OutOfRangePosition { lat: f64, lon: f64 },
}

impl CodecError {
    /// Stable category name used in error output and statistics.
    pub fn kind(&self) -> &'static str {
        match self {
            CodecError::BadChecksum { .. } => "bad_checksum",
            CodecError::Malformed(_) => "malformed",
            CodecError::MissingFragment => "missing_fragment",
            CodecError::DuplicateFragment => "duplicate_fragment",
            CodecError::Timeout => "timeout",
            CodecError::WrongType(_) => "wrong_type",
            CodecError::TruncatedBuffer { .. } => "truncated_buffer",
            CodecError::OutOfRangePosition { .. } => "out_of_range_position",
        }
    }
}

/// AIS navigational status code (0-15).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NavStatus(pub u8);

impl NavStatus {
    pub const UNDERWAY_ENGINE: NavStatus = NavStatus(0);
    pub const AT_ANCHOR: NavStatus = NavStatus(1);
    pub const MOORED: NavStatus = NavStatus(5);
    pub const NOT_DEFINED: NavStatus = NavStatus(15);

    /// Maps a reported code onto the three statuses the toolkit emits.
    /// Anything other than at-anchor or moored counts as underway.
    pub fn to_corrected(self) -> CorrectedStatus {
        match self.0 {
            1 => CorrectedStatus::AtAnchor,
            5 => CorrectedStatus::Moored,
            _ => CorrectedStatus::Underway,
        }
    }
}

impl fmt::Display for NavStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Status after correction; serialized as its AIS code 0, 1 or 5.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum CorrectedStatus {
    Underway,
    AtAnchor,
    Moored,
}

impl CorrectedStatus {
    pub const ALL: [CorrectedStatus; 3] = [CorrectedStatus::Underway, CorrectedStatus::AtAnchor, CorrectedStatus::Moored];

    pub fn code(self) -> u8 {
        match self {
            CorrectedStatus::Underway => 0,
            CorrectedStatus::AtAnchor => 1,
            CorrectedStatus::Moored => 5,
        }
    }

    pub fn as_navstat(self) -> NavStatus {
        NavStatus(self.code())
    }

    pub fn is_stopped(self) -> bool {
        self != CorrectedStatus::Underway
    }
}

impl From<CorrectedStatus> for u8 {
    fn from(s: CorrectedStatus) -> u8 {
        s.code()
    }
}

impl TryFrom<u8> for CorrectedStatus {
    type Error = String;

    fn try_from(v: u8) -> Result<Self, Self::Error> {
        match v {
            0 => Ok(CorrectedStatus::Underway),
            1 => Ok(CorrectedStatus::AtAnchor),
            5 => Ok(CorrectedStatus::Moored),
            other => Err(format!("corrected status must be 0, 1 or 5, got {other}")),
        }
    }
}

/// Decoded class A position report (message types 1, 2, 3).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionReport {
    pub msg_type: u8,
    pub mmsi: u32,
    /// Receiver time.
    pub timestamp: DateTime<Utc>,
    pub lat: f64,
    pub lon: f64,
    /// Knots; `None` when unavailable.
    pub sog: Option<f64>,
    /// Degrees; `None` when unavailable.
    pub cog: Option<f64>,
    /// Whole degrees; `None` when unavailable (raw 511).
    pub heading: Option<u16>,
    pub navstat: NavStatus,
    /// Raw rate-of-turn indicator; `None` when unavailable (raw -128).
    pub rot: Option<i8>,
}

impl PositionReport {
    pub fn position(&self) -> crate::LatLon {
        crate::LatLon::new(self.lat, self.lon)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Dimensions {
    pub to_bow: u16,
    pub to_stern: u16,
    pub to_port: u8,
    pub to_starboard: u8,
}

impl Dimensions {
    pub fn length_m(&self) -> u16 {
        self.to_bow + self.to_stern
    }
}

/// Static and voyage related data (message type 5).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StaticReport {
    pub mmsi: u32,
    pub vessel_name: String,
    pub ship_type: u8,
    pub dimensions: Option<Dimensions>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum AisMessage {
    Position(PositionReport),
    Static(StaticReport),
}

/// One rejected input, as written to the error channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeError {
    pub error: String,
    pub kind: String,
    pub raw: String,
}

impl DecodeError {
    pub fn new(error: &CodecError, raw: impl Into<String>) -> Self {
        Self { error: error.to_string(), kind: error.kind().to_string(), raw: raw.into() }
    }
}

/// What became of one input line.
#[derive(Debug, Clone, PartialEq)]
pub enum LineOutcome {
    Message(AisMessage),
    /// Held until the remaining fragments arrive.
    Fragment,
    /// Valid sentence of a message type this toolkit does not decode.
    Unsupported(u8),
    Error(DecodeError),
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecodeStats {
    pub lines: u64,
    pub positions: u64,
    pub statics: u64,
    pub fragments: u64,
    pub unsupported: BTreeMap<u8, u64>,
    pub errors: BTreeMap<String, u64>,
}

impl DecodeStats {
    pub fn error_count(&self) -> u64 {
        self.errors.values().sum()
    }

    pub fn message_count(&self) -> u64 {
        self.positions + self.statics
    }

    /// Lines counted as errors, excluding fragment timeouts which span lines.
    pub fn error_rate(&self) -> f64 {
        if self.lines == 0 {
            0.0
        } else {
            self.error_count() as f64 / self.lines as f64
        }
    }
}

fn sentence_line(s: &RawSentence) -> String {
    let id = s.message_id.map(|v| v.to_string()).unwrap_or_default();
    let chan = s.channel.map(String::from).unwrap_or_default();
    let body = format!("{},{},{},{id},{chan},{},{}", s.talker, s.fragment_count, s.fragment_index, s.payload, s.fill_bits);
    format!("!{body}*{:02X}", s.checksum)
}

/// Line-at-a-time decoder with fragment reassembly.
///
/// Single writer: feed lines of one stream in arrival order.
#[derive(Debug, Default)]
pub struct Decoder {
    assembler: FragmentAssembler,
    stats: DecodeStats,
}

impl Decoder {
    pub fn new(assembler: FragmentAssembler) -> Self {
        Self { assembler, stats: DecodeStats::default() }
    }

    pub fn stats(&self) -> &DecodeStats {
        &self.stats
    }

    fn error(&mut self, e: CodecError, raw: &str) -> LineOutcome {
        *self.stats.errors.entry(e.kind().to_string()).or_default() += 1;
        LineOutcome::Error(DecodeError::new(&e, raw))
    }

    /// Decodes one line received at `rx_time`. A tag block time, when
    /// present, takes precedence over `rx_time`.
    pub fn feed(&mut self, line: &str, rx_time: DateTime<Utc>) -> LineOutcome {
        self.stats.lines += 1;
        let raw = line.trim_end_matches(['\r', '\n']);
        let sentence = match parse_sentence(raw) {
            Ok(s) => s,
            Err(e) => return self.error(e, raw),
        };
        let time = sentence.tag_time.unwrap_or(rx_time);
        let bits = match self.assembler.push(sentence, time) {
            Ok(Assembly::Complete(bits)) => bits,
            Ok(Assembly::Buffered) => {
                self.stats.fragments += 1;
                return LineOutcome::Fragment;
            }
            Err(e) => return self.error(e, raw),
        };
        match message_type(&bits) {
            Some(1..=3) => match decode_position(&bits, time) {
                Ok(r) => {
                    self.stats.positions += 1;
                    LineOutcome::Message(AisMessage::Position(r))
                }
                Err(e) => self.error(e, raw),
            },
            Some(5) => match decode_static(&bits) {
                Ok(r) => {
                    self.stats.statics += 1;
                    LineOutcome::Message(AisMessage::Static(r))
                }
                Err(e) => self.error(e, raw),
            },
            Some(t) => {
                *self.stats.unsupported.entry(t).or_default() += 1;
                LineOutcome::Unsupported(t)
            }
            None => self.error(CodecError::TruncatedBuffer { needed: 6, got: bits.len() }, raw),
        }
    }

    fn collect_dropped(&mut self) -> Vec<DecodeError> {
        let dropped = self.assembler.take_dropped();
        dropped
            .into_iter()
            .map(|d| {
                *self.stats.errors.entry(d.error.kind().to_string()).or_default() += 1;
                let raw = d.fragments.iter().map(sentence_line).collect::<Vec<_>>().join("\n");
                DecodeError::new(&d.error, raw)
            })
            .collect()
    }

    /// Fragment groups dropped since the last call (timeouts, superseded ids).
    pub fn take_dropped(&mut self, now: DateTime<Utc>) -> Vec<DecodeError> {
        self.assembler.expire(now);
        self.collect_dropped()
    }

    /// Ends the stream: every incomplete fragment group becomes an error.
    pub fn finish(&mut self) -> Vec<DecodeError> {
        self.assembler.flush();
        self.collect_dropped()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t() -> DateTime<Utc> {
        DateTime::from_timestamp(1_600_000_000, 0).unwrap()
    }

    #[test]
    fn every_line_is_classified() {
        let mut d = Decoder::default();
        let lines = [
            "!AIVDM,1,1,,B,177KQJ5000G?tO`K>RA1wUbN0TKH,0*5C",
            "!AIVDM,1,1,,B,177KQJ5000G?tO`K>RA1wUbN0TKH,0*5D",
            "garbage",
            "!AIVDM,2,1,1,A,55?MbV02;H;s<HtKR20EHE:0@T4@Dn2222222216L961O5Gf0NSQEp6ClRp8,0*1C",
            "!AIVDM,2,2,1,A,88888888880,2*25",
            // Type 4 base station report.
            "!AIVDM,1,1,,A,403OviQuMGCqWrRO9>E6fE700@GO,0*4D",
            "!AIVDM,2,1,2,A,55?MbV02;H;s<HtKR20EHE:0@T4@Dn2222222216L961O5Gf0NSQEp6ClRp8,0*1F",
        ];
        let outcomes: Vec<_> = lines.iter().map(|l| d.feed(l, t())).collect();
        assert!(matches!(outcomes[0], LineOutcome::Message(AisMessage::Position(_))));
        assert!(matches!(&outcomes[1], LineOutcome::Error(e) if e.kind == "bad_checksum"));
        assert!(matches!(&outcomes[2], LineOutcome::Error(e) if e.kind == "malformed" && e.raw == "garbage"));
        assert_eq!(outcomes[3], LineOutcome::Fragment);
        assert!(matches!(outcomes[4], LineOutcome::Message(AisMessage::Static(_))));
        assert_eq!(outcomes[5], LineOutcome::Unsupported(4));
        assert_eq!(outcomes[6], LineOutcome::Fragment);
        let tail = d.finish();
        assert_eq!(tail.len(), 1);
        assert_eq!(tail[0].kind, "timeout");
        let s = d.stats();
        assert_eq!(s.lines, 7);
        assert_eq!((s.positions, s.statics, s.fragments), (1, 1, 2));
        assert_eq!(s.error_count(), 3);
    }

    #[test]
    fn corrected_status_serializes_as_code() {
        assert_eq!(serde_json::to_string(&CorrectedStatus::Moored).unwrap(), "5");
        assert_eq!(serde_json::from_str::<CorrectedStatus>("1").unwrap(), CorrectedStatus::AtAnchor);
        assert!(serde_json::from_str::<CorrectedStatus>("3").is_err());
        assert_eq!(NavStatus(7).to_corrected(), CorrectedStatus::Underway);
    }

    #[test]
    fn message_json_has_type_discriminator() {
        let mut d = Decoder::default();
        let LineOutcome::Message(m) = d.feed("!AIVDM,1,1,,B,177KQJ5000G?tO`K>RA1wUbN0TKH,0*5C", t()) else { panic!() };
        let v: serde_json::Value = serde_json::to_value(&m).unwrap();
        assert_eq!(v["type"], "position");
        assert_eq!(v["mmsi"], 477_553_000);
        let back: AisMessage = serde_json::from_value(v).unwrap();
        assert_eq!(back, m);
    }
}
