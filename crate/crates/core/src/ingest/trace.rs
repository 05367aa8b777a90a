//! Reference-hardware binary trace format.
//!
//! A trace is a sequence of records, each framed as
//! `[u16 big-endian length][u8 code][payload]`, where `length` counts the
//! code byte plus the payload. Code `0xBB` marks a channel-state record;
//! other codes are skipped. The payload is little-endian:
//!
//! ```text
//! offset  field
//!      0  timestamp_low  u32   microseconds
//!      4  bfee_count     u16
//!      6  reserved       u16
//!      8  n_rx           u8
//!      9  n_tx           u8
//!     10  rssi_a         u8
//!     11  rssi_b         u8
//!     12  rssi_c         u8
//!     13  noise          i8
//!     14  agc            u8
//!     15  antenna_sel    u8    three 2-bit receive-chain fields
//!     16  len            u16   CSI blob length in bytes
//!     18  rate_flags     u16
//!     20  blob           [len]
//! ```
//!
//! The blob packs 30 subcarriers; per subcarrier 3 bits are skipped, then
//! each antenna pair contributes a signed 8-bit real and imaginary part at
//! the running bit offset (LSB-first within bytes). Pairs are ordered
//! tx-fastest: pair k maps to rx = k / n_tx, tx = k % n_tx. The blob length
//! must equal `(30 * (n_rx * n_tx * 16 + 3) + 7) / 8`.

use super::IngestError;
use crate::csi::{ComplexSample, CsiFrame};

/// Record code for a channel-state record.
pub const CSI_RECORD_CODE: u8 = 0xBB;
/// Subcarrier count fixed by the reference hardware format.
pub const TRACE_SUBCARRIERS: usize = 30;

const HEADER_LEN: usize = 20;

#[derive(Debug, thiserror::Error)]
pub enum TraceError {
    #[error("malformed record at byte {offset}: {reason}")]
    MalformedRecord { offset: usize, reason: String },
    #[error("cannot pack frame: {0}")]
    Unpackable(String),
}

impl From<TraceError> for IngestError {
    fn from(e: TraceError) -> Self {
        IngestError::InvalidData(e.to_string())
    }
}

/// Counters accumulated while parsing one stream.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct TraceStats {
    pub frames: usize,
    /// Records with a non-CSI code.
    pub skipped_records: usize,
    /// Bytes of an incomplete trailing record that were dropped.
    pub truncated_tail_bytes: usize,
    /// CSI records whose antenna_sel did not encode a valid permutation;
    /// those frames fall back to identity ordering.
    pub bad_permutations: usize,
}

#[derive(Debug, Default)]
pub struct ParsedTrace {
    pub frames: Vec<CsiFrame>,
    pub stats: TraceStats,
}

pub fn expected_blob_len(n_rx: usize, n_tx: usize) -> usize {
    (TRACE_SUBCARRIERS * (n_rx * n_tx * 16 + 3) + 7) / 8
}

/// Parse a whole trace. Unknown record codes are skipped and counted; an
/// incomplete trailing record is dropped and counted; a CSI record whose
/// lengths disagree with its antenna counts is a hard error carrying the
/// record's byte offset.
pub fn parse_trace(bytes: &[u8]) -> Result<ParsedTrace, TraceError> {
    let mut out = ParsedTrace::default();
    let mut offset = 0usize;

    while offset < bytes.len() {
        let remaining = bytes.len() - offset;
        if remaining < 2 {
            out.stats.truncated_tail_bytes += remaining;
            break;
        }
        let rec_len = u16::from_be_bytes([bytes[offset], bytes[offset + 1]]) as usize;
        if rec_len == 0 {
            return Err(TraceError::MalformedRecord {
                offset,
                reason: "record length 0 cannot hold a code byte".into(),
            });
        }
        if remaining < 2 + rec_len {
            out.stats.truncated_tail_bytes += remaining;
            break;
        }
        let code = bytes[offset + 2];
        if code == CSI_RECORD_CODE {
            let payload = &bytes[offset + 3..offset + 2 + rec_len];
            out.frames
                .push(parse_csi_payload(payload, offset, &mut out.stats)?);
            out.stats.frames += 1;
        } else {
            out.stats.skipped_records += 1;
        }
        offset += 2 + rec_len;
    }
    Ok(out)
}

fn parse_csi_payload(
    payload: &[u8],
    offset: usize,
    stats: &mut TraceStats,
) -> Result<CsiFrame, TraceError> {
    let err = |reason: String| TraceError::MalformedRecord { offset, reason };
    if payload.len() < HEADER_LEN {
        return Err(err(format!(
            "payload of {} bytes is shorter than the {HEADER_LEN}-byte header",
            payload.len()
        )));
    }
    let timestamp_low = u32::from_le_bytes(payload[0..4].try_into().unwrap());
    let n_rx = payload[8] as usize;
    let n_tx = payload[9] as usize;
    let rssi = [payload[10], payload[11], payload[12]];
    let noise = payload[13] as i8;
    let agc = payload[14];
    let antenna_sel = payload[15];
    let len_field = u16::from_le_bytes(payload[16..18].try_into().unwrap()) as usize;

    if !(1..=3).contains(&n_rx) || !(1..=3).contains(&n_tx) {
        return Err(err(format!("antenna counts out of range: {n_rx}x{n_tx}")));
    }
    let expected = expected_blob_len(n_rx, n_tx);
    if len_field != expected {
        return Err(err(format!(
            "blob length field {len_field} does not match {expected} for {n_rx}x{n_tx}"
        )));
    }
    if payload.len() != HEADER_LEN + expected {
        return Err(err(format!(
            "payload of {} bytes does not match header {HEADER_LEN} + blob {expected}",
            payload.len()
        )));
    }
    let blob = &payload[HEADER_LEN..];

    // antenna_sel packs the physical receive chain of each stream in 2-bit
    // fields; an invalid encoding degrades to identity order, counted.
    let mut perm = [0usize; 3];
    for (i, p) in perm.iter_mut().enumerate().take(n_rx) {
        *p = ((antenna_sel >> (2 * i)) & 0x3) as usize;
    }
    let valid_perm = (0..n_rx).all(|i| perm[i] < n_rx)
        && (0..n_rx).all(|i| (0..i).all(|j| perm[j] != perm[i]));
    if !valid_perm {
        stats.bad_permutations += 1;
        for (i, p) in perm.iter_mut().enumerate() {
            *p = i;
        }
    }

    let mut frame = CsiFrame::zeroed(n_rx, n_tx, TRACE_SUBCARRIERS);
    frame.timestamp = timestamp_low as f64 / 1e6;
    frame.rssi = rssi;
    frame.agc = agc;
    frame.noise_floor = noise;

    let mut bit = 0usize;
    for sub in 0..TRACE_SUBCARRIERS {
        bit += 3;
        for k in 0..n_rx * n_tx {
            let re = read_i8_lsb(blob, bit);
            let im = read_i8_lsb(blob, bit + 8);
            bit += 16;
            let stream_rx = k / n_tx;
            let tx = k % n_tx;
            frame.set(
                perm[stream_rx],
                tx,
                sub,
                ComplexSample::new(re as f64, im as f64),
            );
        }
    }
    Ok(frame)
}

/// Pack one frame into a complete record (length prefix included). The frame
/// must use the 30-subcarrier geometry and integer sample parts in the
/// signed 8-bit range; the receive permutation is written as identity.
pub fn pack_frame(frame: &CsiFrame) -> Result<Vec<u8>, TraceError> {
    if frame.n_sub != TRACE_SUBCARRIERS {
        return Err(TraceError::Unpackable(format!(
            "trace format carries exactly {TRACE_SUBCARRIERS} subcarriers, frame has {}",
            frame.n_sub
        )));
    }
    if !(1..=3).contains(&frame.n_rx) || !(1..=3).contains(&frame.n_tx) {
        return Err(TraceError::Unpackable(format!(
            "antenna counts out of range: {}x{}",
            frame.n_rx, frame.n_tx
        )));
    }
    for s in &frame.csi {
        let ok = |v: f64| v.fract() == 0.0 && (-128.0..=127.0).contains(&v);
        if !ok(s.re) || !ok(s.im) {
            return Err(TraceError::Unpackable(format!(
                "sample ({}, {}) is not an integer in the signed 8-bit range",
                s.re, s.im
            )));
        }
    }

    let blob_len = expected_blob_len(frame.n_rx, frame.n_tx);
    let mut payload = Vec::with_capacity(HEADER_LEN + blob_len);
    let micros = (frame.timestamp * 1e6).round() as u64 as u32;
    payload.extend_from_slice(&micros.to_le_bytes());
    payload.extend_from_slice(&0u16.to_le_bytes()); // bfee_count
    payload.extend_from_slice(&0u16.to_le_bytes()); // reserved
    payload.push(frame.n_rx as u8);
    payload.push(frame.n_tx as u8);
    payload.extend_from_slice(&frame.rssi);
    payload.push(frame.noise_floor as u8);
    payload.push(frame.agc);
    // identity permutation: stream i on physical antenna i
    let antenna_sel = (0u8) | (1 << 2) | (2 << 4);
    payload.push(antenna_sel);
    payload.extend_from_slice(&(blob_len as u16).to_le_bytes());
    payload.extend_from_slice(&0u16.to_le_bytes()); // rate_flags

    let mut blob = vec![0u8; blob_len];
    let mut bit = 0usize;
    for sub in 0..TRACE_SUBCARRIERS {
        bit += 3;
        for k in 0..frame.n_rx * frame.n_tx {
            let rx = k / frame.n_tx;
            let tx = k % frame.n_tx;
            let s = frame.get(rx, tx, sub);
            write_u8_lsb(&mut blob, bit, s.re as i64 as u8);
            write_u8_lsb(&mut blob, bit + 8, s.im as i64 as u8);
            bit += 16;
        }
    }
    payload.extend_from_slice(&blob);

    let rec_len = (payload.len() + 1) as u16;
    let mut out = Vec::with_capacity(2 + rec_len as usize);
    out.extend_from_slice(&rec_len.to_be_bytes());
    out.push(CSI_RECORD_CODE);
    out.extend_from_slice(&payload);
    Ok(out)
}

/// Signed 8-bit value starting at `bit` (LSB-first within bytes).
fn read_i8_lsb(blob: &[u8], bit: usize) -> i8 {
    let byte = bit / 8;
    let r = bit % 8;
    let lo = blob.get(byte).copied().unwrap_or(0) >> r;
    let hi = if r == 0 {
        0
    } else {
        blob.get(byte + 1).copied().unwrap_or(0) << (8 - r)
    };
    (lo | hi) as i8
}

fn write_u8_lsb(blob: &mut [u8], bit: usize, v: u8) {
    let byte = bit / 8;
    let r = bit % 8;
    blob[byte] |= v << r;
    if r != 0 && byte + 1 < blob.len() {
        blob[byte + 1] |= v >> (8 - r);
    }
}
