use chrono::{DateTime, Utc};

use super::bits::BitBuffer;
use super::{CodecError, Dimensions, NavStatus, PositionReport, StaticReport};

pub const POSITION_REPORT_BITS: usize = 168;
/// Static report bits up to and including the dimension fields.
pub const STATIC_REPORT_MIN_BITS: usize = 270;

/// Raw field values carrying the "not available" meaning.
pub(crate) mod sentinel {
    pub const SOG: u64 = 1023;
    pub const COG: u64 = 3600;
    pub const HEADING: u64 = 511;
    pub const ROT: i64 = -128;
    pub const LAT_RAW: i64 = 91 * 600_000;
    pub const LON_RAW: i64 = 181 * 600_000;
}

pub(crate) const COORD_SCALE: f64 = 600_000.0;

/// Message type stored in the first six bits, if present.
pub fn message_type(bits: &BitBuffer) -> Option<u8> {
    bits.uint(0, 6).map(|v| v as u8)
}

fn field(bits: &BitBuffer, start: usize, width: usize) -> Result<u64, CodecError> {
    bits.uint(start, width).ok_or(CodecError::TruncatedBuffer { needed: start + width, got: bits.len() })
}

fn signed(bits: &BitBuffer, start: usize, width: usize) -> Result<i64, CodecError> {
    bits.int(start, width).ok_or(CodecError::TruncatedBuffer { needed: start + width, got: bits.len() })
}

/// Decodes a class A position report (types 1, 2, 3).
///
/// The payload only carries a seconds-of-minute field, so the report is
/// stamped with the receiver time `rx_time`.
pub fn decode_position(bits: &BitBuffer, rx_time: DateTime<Utc>) -> Result<PositionReport, CodecError> {
    let msg_type = field(bits, 0, 6)? as u8;
    if !(1..=3).contains(&msg_type) {
        return Err(CodecError::WrongType(msg_type));
    }
    if bits.len() < POSITION_REPORT_BITS {
        return Err(CodecError::TruncatedBuffer { needed: POSITION_REPORT_BITS, got: bits.len() });
    }
    let mmsi = field(bits, 8, 30)? as u32;
    let navstat = NavStatus(field(bits, 38, 4)? as u8);
    let rot = match signed(bits, 42, 8)? {
        sentinel::ROT => None,
        v => Some(v as i8),
    };
    let sog = match field(bits, 50, 10)? {
        sentinel::SOG => None,
        v => Some(v as f64 / 10.0),
    };
    let lon_raw = signed(bits, 61, 28)?;
    let lat_raw = signed(bits, 89, 27)?;
    let cog = match field(bits, 116, 12)? {
        v if v >= sentinel::COG => None,
        v => Some(v as f64 / 10.0),
    };
    let heading = match field(bits, 128, 9)? {
        v if v >= 360 => None,
        v => Some(v as u16),
    };

    let lat = lat_raw as f64 / COORD_SCALE;
    let lon = lon_raw as f64 / COORD_SCALE;
    if lat_raw == sentinel::LAT_RAW || lon_raw == sentinel::LON_RAW || lat.abs() > 90.0 || lon.abs() > 180.0 {
        return Err(CodecError::OutOfRangePosition { lat, lon });
    }

    Ok(PositionReport { msg_type, mmsi, timestamp: rx_time, lat, lon, sog, cog, heading, navstat, rot })
}

fn sixbit_text(bits: &BitBuffer, start: usize, chars: usize) -> Result<String, CodecError> {
    let mut s = String::with_capacity(chars);
    for i in 0..chars {
        let v = field(bits, start + 6 * i, 6)? as u8;
        s.push(if v < 32 { (v + 64) as char } else { v as char });
    }
    Ok(s.trim_end_matches(['@', ' ']).to_string())
}

/// Decodes a static and voyage related report (type 5).
///
/// Ship types outside 0-99 (regional or reserved codes) are reported as 0,
/// "not available".
pub fn decode_static(bits: &BitBuffer) -> Result<StaticReport, CodecError> {
    let msg_type = field(bits, 0, 6)? as u8;
    if msg_type != 5 {
        return Err(CodecError::WrongType(msg_type));
    }
    if bits.len() < STATIC_REPORT_MIN_BITS {
        return Err(CodecError::TruncatedBuffer { needed: STATIC_REPORT_MIN_BITS, got: bits.len() });
    }
    let mmsi = field(bits, 8, 30)? as u32;
    let vessel_name = sixbit_text(bits, 112, 20)?;
    let ship_type = match field(bits, 232, 8)? as u8 {
        t if t > 99 => 0,
        t => t,
    };
    let dims = Dimensions {
        to_bow: field(bits, 240, 9)? as u16,
        to_stern: field(bits, 249, 9)? as u16,
        to_port: field(bits, 258, 6)? as u8,
        to_starboard: field(bits, 264, 6)? as u8,
    };
    let dimensions = (dims != Dimensions::default()).then_some(dims);
    Ok(StaticReport { mmsi, vessel_name, ship_type, dimensions })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::bits::assemble_fragments;
    use crate::codec::sentence::parse_sentence;

    fn bits_of(line: &str) -> BitBuffer {
        let s = parse_sentence(line).unwrap();
        BitBuffer::from_payload(&s.payload, s.fill_bits).unwrap()
    }

    fn t0() -> DateTime<Utc> {
        DateTime::from_timestamp(1_568_298_480, 0).unwrap()
    }

    #[test]
    fn reference_position_report() {
        let r = decode_position(&bits_of("!AIVDM,1,1,,B,177KQJ5000G?tO`K>RA1wUbN0TKH,0*5C"), t0()).unwrap();
        assert_eq!(r.msg_type, 1);
        assert_eq!(r.mmsi, 477_553_000);
        assert_eq!(r.navstat, NavStatus(5));
        assert_eq!(r.rot, Some(0));
        assert_eq!(r.sog, Some(0.0));
        assert!((r.lon - -122.345_833_333).abs() < 1e-6, "{}", r.lon);
        assert!((r.lat - 47.582_833_333).abs() < 1e-6, "{}", r.lat);
        assert_eq!(r.cog, Some(51.0));
        assert_eq!(r.heading, Some(181));
        assert_eq!(r.timestamp, t0());
    }

    fn position_bits(lat_raw: i64, heading: u64, sog: u64) -> BitBuffer {
        let mut b = BitBuffer::new();
        b.push_uint(1, 6);
        b.push_uint(0, 2);
        b.push_uint(123_456_789, 30);
        b.push_uint(0, 4);
        b.push_int(-128, 8);
        b.push_uint(sog, 10);
        b.push_uint(0, 1);
        b.push_int(0, 28);
        b.push_int(lat_raw, 27);
        b.push_uint(3600, 12);
        b.push_uint(heading, 9);
        b.push_uint(0, 6 + 2 + 3 + 1 + 19);
        b
    }

    #[test]
    fn sentinels_and_zero_position() {
        let r = decode_position(&position_bits(0, 511, 1023), t0()).unwrap();
        assert_eq!(r.lat, 0.0);
        assert_eq!(r.heading, None);
        assert_eq!(r.sog, None);
        assert_eq!(r.cog, None);
        assert_eq!(r.rot, None);
        assert_eq!(r.mmsi, 123_456_789);
        let r = decode_position(&position_bits(5_400_000, 90, 123), t0()).unwrap();
        assert_eq!(r.lat, 9.0);
        assert_eq!(r.sog, Some(12.3));
        assert_eq!(r.heading, Some(90));
    }

    #[test]
    fn position_errors() {
        assert_eq!(decode_position(&position_bits(91 * 600_000, 0, 0), t0()), Err(CodecError::OutOfRangePosition { lat: 91.0, lon: 0.0 }));
        let mut short = BitBuffer::new();
        short.push_uint(1, 6);
        short.push_uint(0, 100);
        assert!(matches!(decode_position(&short, t0()), Err(CodecError::TruncatedBuffer { needed: 168, got: 106 })));
        let mut wrong = position_bits(0, 0, 0);
        wrong = {
            let mut b = BitBuffer::new();
            b.push_uint(4, 6);
            for i in 6..wrong.len() {
                b.push_bit(wrong.bit(i));
            }
            b
        };
        assert_eq!(decode_position(&wrong, t0()), Err(CodecError::WrongType(4)));
        assert!(matches!(decode_position(&BitBuffer::new(), t0()), Err(CodecError::TruncatedBuffer { .. })));
    }

    #[test]
    fn reference_static_report() {
        let s1 = parse_sentence("!AIVDM,2,1,1,A,55?MbV02;H;s<HtKR20EHE:0@T4@Dn2222222216L961O5Gf0NSQEp6ClRp8,0*1C").unwrap();
        let s2 = parse_sentence("!AIVDM,2,2,1,A,88888888880,2*25").unwrap();
        let r = decode_static(&assemble_fragments(&[s1, s2]).unwrap()).unwrap();
        assert_eq!(r.mmsi, 351_759_000);
        assert_eq!(r.vessel_name, "EVER DIADEM");
        assert_eq!(r.ship_type, 70);
        assert_eq!(r.dimensions, Some(Dimensions { to_bow: 225, to_stern: 70, to_port: 1, to_starboard: 31 }));
    }

    fn static_bits(ship_type: u64, name: &[u8; 20]) -> BitBuffer {
        let mut b = BitBuffer::new();
        b.push_uint(5, 6);
        b.push_uint(0, 2);
        b.push_uint(239_658_000, 30);
        b.push_uint(0, 2 + 30 + 42);
        for &c in name {
            let v = if c >= 64 { c - 64 } else { c };
            b.push_uint(v as u64, 6);
        }
        b.push_uint(ship_type, 8);
        b.push_uint(0, 30);
        b
    }

    #[test]
    fn static_fields_and_padding() {
        let r = decode_static(&static_bits(70, &[b'@'; 20])).unwrap();
        assert_eq!(r.ship_type, 70);
        assert_eq!(r.vessel_name, "");
        assert_eq!(r.dimensions, None);
        let r = decode_static(&static_bits(60, b"HIGHSPEED 4@@@@@@@@@")).unwrap();
        assert_eq!(r.vessel_name, "HIGHSPEED 4");
        assert_eq!(r.ship_type, 60);
        assert_eq!(decode_static(&static_bits(200, &[b'@'; 20])).unwrap().ship_type, 0);
        assert_eq!(decode_static(&position_bits(0, 0, 0)), Err(CodecError::WrongType(1)));
    }
}
