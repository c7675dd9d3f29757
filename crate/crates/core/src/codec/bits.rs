use std::collections::HashMap;

use chrono::{DateTime, Duration, Utc};

use super::sentence::RawSentence;
use super::CodecError;

/// 6-bit value of an armored payload character (ASCII 48-87 and 96-119).
#[inline]
pub fn dearmor(c: u8) -> Option<u8> {
    match c {
        48..=87 => Some(c - 48),
        96..=119 => Some(c - 56),
        _ => None,
    }
}

/// Armored payload character for a 6-bit value.
#[inline]
pub fn armor(v: u8) -> u8 {
    debug_assert!(v < 64);
    if v < 40 {
        v + 48
    } else {
        v + 56
    }
}

/// Bit string, most significant bit first.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BitBuffer {
    bytes: Vec<u8>,
    len: usize,
}

impl BitBuffer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn push_bit(&mut self, bit: bool) {
        if self.len.is_multiple_of(8) {
            self.bytes.push(0);
        }
        if bit {
            let last = self.bytes.len() - 1;
            self.bytes[last] |= 0x80 >> (self.len % 8);
        }
        self.len += 1;
    }

    /// Appends the low `width` bits of `value`, MSB first. Widths above 64
    /// are zero-extended.
    pub fn push_uint(&mut self, value: u64, width: usize) {
        for i in (0..width).rev() {
            self.push_bit(i < 64 && (value >> i) & 1 == 1);
        }
    }

    /// Two's complement encoding of `value` in `width` bits.
    pub fn push_int(&mut self, value: i64, width: usize) {
        let mask = if width == 64 { u64::MAX } else { (1u64 << width) - 1 };
        self.push_uint(value as u64 & mask, width);
    }

    pub fn bit(&self, i: usize) -> bool {
        self.bytes[i / 8] & (0x80 >> (i % 8)) != 0
    }

    /// Unsigned field of `width` bits starting at `start`.
    pub fn uint(&self, start: usize, width: usize) -> Option<u64> {
        if start + width > self.len || width > 64 {
            return None;
        }
        Some((start..start + width).fold(0u64, |acc, i| (acc << 1) | self.bit(i) as u64))
    }

    /// Two's complement signed field of `width` bits starting at `start`.
    pub fn int(&self, start: usize, width: usize) -> Option<i64> {
        let raw = self.uint(start, width)?;
        if width == 0 {
            return Some(0);
        }
        let sign = 1u64 << (width - 1);
        Some(if raw & sign != 0 { raw as i64 - (1i64 << width) } else { raw as i64 })
    }

    /// De-armors a payload; the last `fill_bits` bits are dropped.
    pub fn from_payload(payload: &str, fill_bits: u8) -> Result<Self, CodecError> {
        let mut buf = BitBuffer::new();
        buf.extend_payload(payload)?;
        buf.drop_fill(fill_bits)?;
        Ok(buf)
    }

    fn extend_payload(&mut self, payload: &str) -> Result<(), CodecError> {
        self.bytes.reserve(payload.len() * 6 / 8 + 1);
        for c in payload.bytes() {
            let v = dearmor(c).ok_or_else(|| CodecError::Malformed(format!("payload character {:?}", c as char)))?;
            self.push_uint(v as u64, 6);
        }
        Ok(())
    }

    fn drop_fill(&mut self, fill_bits: u8) -> Result<(), CodecError> {
        let fill = fill_bits as usize;
        if fill > 5 || fill > self.len {
            return Err(CodecError::Malformed(format!("fill bits {fill_bits}")));
        }
        self.len -= fill;
        self.bytes.truncate(self.len.div_ceil(8));
        if !self.len.is_multiple_of(8) {
            let last = self.bytes.len() - 1;
            self.bytes[last] &= 0xFFu8 << (8 - self.len % 8);
        }
        Ok(())
    }

    /// Armored payload plus the number of fill bits padding the last character.
    pub fn to_payload(&self) -> (String, u8) {
        let fill = (6 - self.len % 6) % 6;
        let mut out = String::with_capacity(self.len.div_ceil(6));
        let mut i = 0;
        while i < self.len {
            let mut v = 0u8;
            for j in 0..6 {
                v <<= 1;
                if i + j < self.len && self.bit(i + j) {
                    v |= 1;
                }
            }
            out.push(armor(v) as char);
            i += 6;
        }
        (out, fill as u8)
    }
}

/// Joins the fragments of one message into a bit buffer.
///
/// Fragments may arrive in any order but must share message id and channel
/// and cover `1..=fragment_count` exactly once.
pub fn assemble_fragments(sentences: &[RawSentence]) -> Result<BitBuffer, CodecError> {
    let first = sentences.first().ok_or(CodecError::MissingFragment)?;
    let count = first.fragment_count as usize;
    let mut parts: Vec<Option<&RawSentence>> = vec![None; count];
    for s in sentences {
        if s.fragment_count != first.fragment_count || s.message_id != first.message_id || s.channel != first.channel {
            return Err(CodecError::Malformed("fragments belong to different messages".into()));
        }
        let slot = &mut parts[s.fragment_index as usize - 1];
        if slot.is_some() {
            return Err(CodecError::DuplicateFragment);
        }
        *slot = Some(s);
    }
    let mut buf = BitBuffer::new();
    let mut fill = 0;
    for part in parts {
        let part = part.ok_or(CodecError::MissingFragment)?;
        buf.extend_payload(&part.payload)?;
        fill = part.fill_bits;
    }
    buf.drop_fill(fill)?;
    Ok(buf)
}

pub const DEFAULT_FRAGMENT_WINDOW_S: i64 = 30;

type FragmentKey = (Option<char>, Option<u8>);

#[derive(Debug)]
struct Pending {
    first_seen: DateTime<Utc>,
    parts: Vec<RawSentence>,
}

/// Fragments that were dropped without producing a message.
#[derive(Debug, Clone, PartialEq)]
pub struct DroppedFragments {
    pub error: CodecError,
    pub fragments: Vec<RawSentence>,
}

/// Result of feeding one sentence to the [`FragmentAssembler`].
#[derive(Debug, Clone, PartialEq)]
pub enum Assembly {
    Complete(BitBuffer),
    Buffered,
}

/// Stateful multi-sentence reassembly keyed by `(channel, message_id)`.
///
/// Incomplete groups older than the window are discarded with
/// [`CodecError::Timeout`] and can be collected through [`Self::take_dropped`].
#[derive(Debug)]
pub struct FragmentAssembler {
    window: Duration,
    pending: HashMap<FragmentKey, Pending>,
    dropped: Vec<DroppedFragments>,
}

impl Default for FragmentAssembler {
    fn default() -> Self {
        Self::new(Duration::seconds(DEFAULT_FRAGMENT_WINDOW_S))
    }
}

impl FragmentAssembler {
    pub fn new(window: Duration) -> Self {
        Self { window, pending: HashMap::new(), dropped: Vec::new() }
    }

    pub fn push(&mut self, sentence: RawSentence, now: DateTime<Utc>) -> Result<Assembly, CodecError> {
        self.expire(now);
        if !sentence.is_multipart() {
            return BitBuffer::from_payload(&sentence.payload, sentence.fill_bits).map(Assembly::Complete);
        }
        let key = (sentence.channel, sentence.message_id);
        if let Some(p) = self.pending.get(&key) {
            if p.parts[0].fragment_count != sentence.fragment_count {
                // A different message reused the id before the old one finished.
                let old = self.pending.remove(&key).expect("present");
                self.dropped.push(DroppedFragments { error: CodecError::MissingFragment, fragments: old.parts });
            }
        }
        let entry = self.pending.entry(key).or_insert_with(|| Pending { first_seen: now, parts: Vec::new() });
        if entry.parts.iter().any(|p| p.fragment_index == sentence.fragment_index) {
            return Err(CodecError::DuplicateFragment);
        }
        let last = sentence.fragment_index == sentence.fragment_count;
        let count = sentence.fragment_count as usize;
        entry.parts.push(sentence);
        if entry.parts.len() == count {
            let p = self.pending.remove(&key).expect("present");
            return assemble_fragments(&p.parts).map(Assembly::Complete);
        }
        if last {
            // Final fragment seen but earlier ones are missing.
            self.pending.remove(&key);
            return Err(CodecError::MissingFragment);
        }
        Ok(Assembly::Buffered)
    }

    /// Moves groups older than the window to the dropped list.
    pub fn expire(&mut self, now: DateTime<Utc>) {
        let window = self.window;
        let mut stale: Vec<FragmentKey> = self.pending.iter().filter(|(_, p)| now - p.first_seen > window).map(|(k, _)| *k).collect();
        stale.sort();
        for key in stale {
            let p = self.pending.remove(&key).expect("present");
            self.dropped.push(DroppedFragments { error: CodecError::Timeout, fragments: p.parts });
        }
    }

    /// Discards every incomplete group (end of input).
    pub fn flush(&mut self) {
        let mut keys: Vec<FragmentKey> = self.pending.keys().copied().collect();
        keys.sort();
        for key in keys {
            let p = self.pending.remove(&key).expect("present");
            self.dropped.push(DroppedFragments { error: CodecError::Timeout, fragments: p.parts });
        }
    }

    pub fn take_dropped(&mut self) -> Vec<DroppedFragments> {
        std::mem::take(&mut self.dropped)
    }

    pub fn pending_groups(&self) -> usize {
        self.pending.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::sentence::parse_sentence;
    use proptest::prelude::*;

    fn frag(count: u8, index: u8, id: Option<u8>, payload: &str, fill: u8) -> RawSentence {
        RawSentence {
            talker: "AIVDM".into(),
            fragment_count: count,
            fragment_index: index,
            message_id: id,
            channel: Some('A'),
            payload: payload.into(),
            fill_bits: fill,
            checksum: 0,
            tag_time: None,
        }
    }

    #[test]
    fn armoring_extremes() {
        let zero = BitBuffer::from_payload("0", 0).unwrap();
        assert_eq!(zero.len(), 6);
        assert_eq!(zero.uint(0, 6), Some(0));
        // 'w' = 119: 119 - 48 = 71 > 40, 71 - 8 = 63 = 0b111111.
        let w = BitBuffer::from_payload("w", 0).unwrap();
        assert_eq!(w.uint(0, 6), Some(0b111111));
        assert_eq!(dearmor(b'X'), None);
        assert_eq!(dearmor(b'`'), Some(40));
    }

    #[test]
    fn dearmoring_is_a_bijection() {
        let alphabet: Vec<u8> = (48u8..=87).chain(96u8..=119).collect();
        assert_eq!(alphabet.len(), 64);
        let mut seen = [false; 64];
        for &c in &alphabet {
            let v = dearmor(c).unwrap();
            assert!(!seen[v as usize]);
            seen[v as usize] = true;
            assert_eq!(armor(v), c);
            // Definition: subtract 48, and 8 more when above 40.
            let mut d = c - 48;
            if d > 40 {
                d -= 8;
            }
            assert_eq!(v, d);
        }
        assert!(seen.iter().all(|&s| s));
        for c in 0u8..=255 {
            assert_eq!(dearmor(c).is_some(), alphabet.contains(&c));
        }
    }

    #[test]
    fn fill_bits_are_dropped() {
        let b = BitBuffer::from_payload("ww", 2).unwrap();
        assert_eq!(b.len(), 10);
        assert_eq!(b.uint(0, 10), Some(0x3FF));
        assert_eq!(b.uint(0, 11), None);
    }

    #[test]
    fn signed_fields() {
        let mut b = BitBuffer::new();
        b.push_int(-5, 8);
        b.push_int(7, 4);
        assert_eq!(b.int(0, 8), Some(-5));
        assert_eq!(b.int(8, 4), Some(7));
        assert_eq!(b.uint(0, 8), Some(251));
    }

    #[test]
    fn missing_and_duplicate_fragments() {
        assert_eq!(assemble_fragments(&[frag(2, 2, Some(1), "0", 0)]), Err(CodecError::MissingFragment));
        assert_eq!(assemble_fragments(&[frag(2, 1, Some(1), "0", 0), frag(2, 1, Some(1), "0", 0)]), Err(CodecError::DuplicateFragment));
        let both = assemble_fragments(&[frag(2, 2, Some(1), "w", 2), frag(2, 1, Some(1), "0", 0)]).unwrap();
        assert_eq!(both.len(), 10);
        assert_eq!(both.uint(0, 10), Some(0b0000001111));
    }

    #[test]
    fn assembler_streams_fragments() {
        let t0 = DateTime::<Utc>::from_timestamp(1_600_000_000, 0).unwrap();
        let mut a = FragmentAssembler::default();
        assert_eq!(a.push(frag(2, 1, Some(3), "0", 0), t0), Ok(Assembly::Buffered));
        assert_eq!(a.push(frag(2, 1, Some(3), "0", 0), t0), Err(CodecError::DuplicateFragment));
        match a.push(frag(2, 2, Some(3), "w", 0), t0 + Duration::seconds(1)).unwrap() {
            Assembly::Complete(b) => assert_eq!(b.uint(0, 12), Some(0b000000111111)),
            other => panic!("{other:?}"),
        }
        assert_eq!(a.pending_groups(), 0);

        // Only the last fragment: missing.
        assert_eq!(a.push(frag(2, 2, Some(4), "w", 0), t0), Err(CodecError::MissingFragment));

        // Timeout after the window.
        assert_eq!(a.push(frag(3, 1, Some(5), "0", 0), t0), Ok(Assembly::Buffered));
        a.expire(t0 + Duration::seconds(31));
        let dropped = a.take_dropped();
        assert_eq!(dropped.len(), 1);
        assert_eq!(dropped[0].error, CodecError::Timeout);
        assert_eq!(a.pending_groups(), 0);
    }

    #[test]
    fn real_two_part_message() {
        // Widely published type 5 example split over two sentences.
        let l1 = "!AIVDM,2,1,1,A,55?MbV02;H;s<HtKR20EHE:0@T4@Dn2222222216L961O5Gf0NSQEp6ClRp8,0*1C";
        let l2 = "!AIVDM,2,2,1,A,88888888880,2*25";
        let s1 = parse_sentence(l1).unwrap();
        let s2 = parse_sentence(l2).unwrap();
        let b = assemble_fragments(&[s1, s2]).unwrap();
        assert_eq!(b.len(), 424);
        assert_eq!(b.uint(0, 6), Some(5));
    }

    proptest! {
        #[test]
        fn payload_round_trip(bits in prop::collection::vec(any::<bool>(), 1..400)) {
            let mut b = BitBuffer::new();
            for &bit in &bits {
                b.push_bit(bit);
            }
            let (payload, fill) = b.to_payload();
            let back = BitBuffer::from_payload(&payload, fill).unwrap();
            prop_assert_eq!(back, b);
        }
    }
}
