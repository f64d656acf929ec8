//! Wire format.
//!
//! Every message is a 20-byte little-endian header followed by the payload:
//!
//! | offset | size | field        |
//! |--------|------|--------------|
//! | 0      | 1    | version (1)  |
//! | 1      | 1    | kind         |
//! | 2      | 2    | reserved (0) |
//! | 4      | 4    | device_id    |
//! | 8      | 8    | seq          |
//! | 16     | 4    | payload_len  |
//!
//! Payload layouts by kind:
//!
//! * `FrameBatchUp`, `InferRequestUp`: `u32 n`, `n × u64` frame ids, then
//!   zero filler standing in for the encoded video; total length is
//!   `max(ceil(n · bytes_per_raw_frame / ratio), 4 + 8n)`.
//! * `LabelBatchDown`: `f64 new_rate`, `f64 phi_bar` (NaN when absent),
//!   `u64 base_frame_id`, `u32 n`, `n × (u32 frame offset, u32 class)`.
//! * `InferResponseDown`: `u64 base_frame_id`, `u32 n`, `n × (u32, u32)`.
//! * `ModelDown`: a [`FlatRecord`].
//! * `StatsUp`: `f64 alpha`, `f64 lambda`, `u32 frames_observed`.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::learner::FlatRecord;

pub const WIRE_VERSION: u8 = 1;
pub const HEADER_LEN: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MessageKind {
    FrameBatchUp = 1,
    LabelBatchDown = 2,
    ModelDown = 3,
    InferRequestUp = 4,
    InferResponseDown = 5,
    StatsUp = 6,
}

impl MessageKind {
    pub const ALL: [MessageKind; 6] = [
        MessageKind::FrameBatchUp,
        MessageKind::LabelBatchDown,
        MessageKind::ModelDown,
        MessageKind::InferRequestUp,
        MessageKind::InferResponseDown,
        MessageKind::StatsUp,
    ];

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|k| *k as u8 == code)
    }

    pub fn direction(self) -> Direction {
        match self {
            MessageKind::FrameBatchUp | MessageKind::InferRequestUp | MessageKind::StatsUp => Direction::Up,
            _ => Direction::Down,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            MessageKind::FrameBatchUp => "FrameBatchUp",
            MessageKind::LabelBatchDown => "LabelBatchDown",
            MessageKind::ModelDown => "ModelDown",
            MessageKind::InferRequestUp => "InferRequestUp",
            MessageKind::InferResponseDown => "InferResponseDown",
            MessageKind::StatsUp => "StatsUp",
        }
    }

    fn index(self) -> usize {
        self as usize - 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Direction {
    Up,
    Down,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Header {
    pub device_id: u32,
    pub seq: u64,
    pub kind: MessageKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Message {
    pub header: Header,
    pub payload: Vec<u8>,
}

/// Decoded payload contents.
#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Frames { frame_ids: Vec<u64> },
    Labels { new_rate: f64, phi_bar: Option<f64>, labels: Vec<(u64, u32)> },
    InferResponse { labels: Vec<(u64, u32)> },
    Model(FlatRecord),
    Stats { alpha: f64, lambda: f64, frames_observed: u32 },
}

impl Message {
    /// Builds a message after checking the payload against `kind`'s schema.
    pub fn new(kind: MessageKind, device_id: u32, seq: u64, payload: Vec<u8>) -> Result<Self> {
        decode_payload(kind, &payload)?;
        Ok(Self { header: Header { device_id, seq, kind }, payload })
    }

    pub fn wire_len(&self) -> usize {
        HEADER_LEN + self.payload.len()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.wire_len());
        out.push(WIRE_VERSION);
        out.push(self.header.kind as u8);
        out.extend_from_slice(&0u16.to_le_bytes());
        out.extend_from_slice(&self.header.device_id.to_le_bytes());
        out.extend_from_slice(&self.header.seq.to_le_bytes());
        out.extend_from_slice(&(self.payload.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.payload);
        out
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(&self.encode())?;
        Ok(())
    }

    /// Reads one framed message. Returns `Ok(None)` on a clean end of stream.
    pub fn read_from<R: Read>(r: &mut R) -> Result<Option<Self>> {
        let mut header = [0u8; HEADER_LEN];
        let mut filled = 0;
        while filled < HEADER_LEN {
            let n = r.read(&mut header[filled..])?;
            if n == 0 {
                if filled == 0 {
                    return Ok(None);
                }
                return Err(Error::Decode("stream ended inside a header".into()));
            }
            filled += n;
        }
        let (kind, device_id, seq, len) = parse_header(&header)?;
        let mut payload = vec![0u8; len];
        r.read_exact(&mut payload)?;
        Ok(Some(Message::new(kind, device_id, seq, payload)?))
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::Decode("message shorter than header".into()));
        }
        let (kind, device_id, seq, len) = parse_header(bytes[..HEADER_LEN].try_into().expect("length checked"))?;
        if bytes.len() != HEADER_LEN + len {
            return Err(Error::Decode(format!("payload length {} != declared {len}", bytes.len() - HEADER_LEN)));
        }
        Message::new(kind, device_id, seq, bytes[HEADER_LEN..].to_vec())
    }

    pub fn payload(&self) -> Result<Payload> {
        decode_payload(self.header.kind, &self.payload)
    }
}

fn parse_header(h: &[u8; HEADER_LEN]) -> Result<(MessageKind, u32, u64, usize)> {
    if h[0] != WIRE_VERSION {
        return Err(Error::Decode(format!("unsupported wire version {}", h[0])));
    }
    let kind = MessageKind::from_code(h[1]).ok_or_else(|| Error::Decode(format!("unknown kind {}", h[1])))?;
    let device_id = u32::from_le_bytes(h[4..8].try_into().expect("4 bytes"));
    let seq = u64::from_le_bytes(h[8..16].try_into().expect("8 bytes"));
    let len = u32::from_le_bytes(h[16..20].try_into().expect("4 bytes")) as usize;
    Ok((kind, device_id, seq, len))
}

pub fn encode_frames(frame_ids: &[u64], encoded_len: usize) -> Vec<u8> {
    let len = encoded_len.max(4 + 8 * frame_ids.len());
    let mut out = Vec::with_capacity(len);
    out.extend_from_slice(&(frame_ids.len() as u32).to_le_bytes());
    for id in frame_ids {
        out.extend_from_slice(&id.to_le_bytes());
    }
    out.resize(len, 0);
    out
}

fn encode_pairs(out: &mut Vec<u8>, labels: &[(u64, u32)]) {
    let base = labels.first().map_or(0, |l| l.0);
    out.extend_from_slice(&base.to_le_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_le_bytes());
    for (id, class) in labels {
        out.extend_from_slice(&((id - base) as u32).to_le_bytes());
        out.extend_from_slice(&class.to_le_bytes());
    }
}

/// Label pairs must be sorted by frame id.
pub fn encode_labels(new_rate: f64, phi_bar: Option<f64>, labels: &[(u64, u32)]) -> Vec<u8> {
    let mut out = Vec::with_capacity(28 + 8 * labels.len());
    out.extend_from_slice(&new_rate.to_le_bytes());
    out.extend_from_slice(&phi_bar.unwrap_or(f64::NAN).to_le_bytes());
    encode_pairs(&mut out, labels);
    out
}

pub fn encode_infer_response(labels: &[(u64, u32)]) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + 8 * labels.len());
    encode_pairs(&mut out, labels);
    out
}

pub fn encode_stats(alpha: f64, lambda: f64, frames_observed: u32) -> Vec<u8> {
    let mut out = Vec::with_capacity(20);
    out.extend_from_slice(&alpha.to_le_bytes());
    out.extend_from_slice(&lambda.to_le_bytes());
    out.extend_from_slice(&frames_observed.to_le_bytes());
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    kind: MessageKind,
}

impl<'a> Reader<'a> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        if self.buf.len() < N {
            return Err(schema(self.kind, "payload truncated"));
        }
        let (head, rest) = self.buf.split_at(N);
        self.buf = rest;
        Ok(head.try_into().expect("length checked"))
    }
    fn u32(&mut self) -> Result<u32> {
        self.bytes::<4>().map(u32::from_le_bytes)
    }
    fn u64(&mut self) -> Result<u64> {
        self.bytes::<8>().map(u64::from_le_bytes)
    }
    fn f64(&mut self) -> Result<f64> {
        self.bytes::<8>().map(f64::from_le_bytes)
    }
    fn pairs(&mut self) -> Result<Vec<(u64, u32)>> {
        let base = self.u64()?;
        let n = self.u32()? as usize;
        if self.buf.len() < 8 * n {
            return Err(schema(self.kind, "label pairs truncated"));
        }
        (0..n).map(|_| Ok((base + self.u32()? as u64, self.u32()?))).collect()
    }
    fn finish(self) -> Result<()> {
        if self.buf.is_empty() {
            Ok(())
        } else {
            Err(schema(self.kind, &format!("{} trailing bytes", self.buf.len())))
        }
    }
}

fn schema(kind: MessageKind, reason: &str) -> Error {
    Error::Schema { kind: kind.name(), reason: reason.to_string() }
}

pub fn decode_payload(kind: MessageKind, payload: &[u8]) -> Result<Payload> {
    let mut r = Reader { buf: payload, kind };
    match kind {
        MessageKind::FrameBatchUp | MessageKind::InferRequestUp => {
            let n = r.u32()? as usize;
            if r.buf.len() < 8 * n {
                return Err(schema(kind, "frame ids truncated"));
            }
            let frame_ids: Vec<u64> = (0..n).map(|_| r.u64()).collect::<Result<_>>()?;
            if frame_ids.is_empty() {
                return Err(schema(kind, "no frames"));
            }
            if frame_ids.windows(2).any(|w| w[0] >= w[1]) {
                return Err(schema(kind, "frame ids not increasing"));
            }
            Ok(Payload::Frames { frame_ids })
        }
        MessageKind::LabelBatchDown => {
            let new_rate = r.f64()?;
            let phi = r.f64()?;
            let labels = r.pairs()?;
            r.finish()?;
            if !(new_rate.is_finite() && new_rate > 0.0) {
                return Err(schema(kind, "rate must be finite and positive"));
            }
            Ok(Payload::Labels { new_rate, phi_bar: (!phi.is_nan()).then_some(phi), labels })
        }
        MessageKind::InferResponseDown => {
            let labels = r.pairs()?;
            r.finish()?;
            Ok(Payload::InferResponse { labels })
        }
        MessageKind::ModelDown => {
            FlatRecord::decode(payload).map(Payload::Model).map_err(|e| schema(kind, &e.to_string()))
        }
        MessageKind::StatsUp => {
            let alpha = r.f64()?;
            let lambda = r.f64()?;
            let frames_observed = r.u32()?;
            r.finish()?;
            if !(0.0..=1.0).contains(&alpha) || !(0.0..=1.0).contains(&lambda) {
                return Err(schema(kind, "alpha and lambda must lie in [0, 1]"));
            }
            Ok(Payload::Stats { alpha, lambda, frames_observed })
        }
    }
}

/// Cumulative byte accounting for one endpoint.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LinkStats {
    pub up_bytes: u64,
    pub down_bytes: u64,
    pub messages: u64,
    per_kind: [u64; 6],
    /// Latest simulated time seen by this endpoint.
    pub elapsed_seconds: f64,
}

impl LinkStats {
    pub fn record(&mut self, msg: &Message, now: f64) {
        let bytes = msg.wire_len() as u64;
        match msg.header.kind.direction() {
            Direction::Up => self.up_bytes += bytes,
            Direction::Down => self.down_bytes += bytes,
        }
        self.per_kind[msg.header.kind.index()] += bytes;
        self.messages += 1;
        self.elapsed_seconds = self.elapsed_seconds.max(now);
    }

    pub fn kind_bytes(&self, kind: MessageKind) -> u64 {
        self.per_kind[kind.index()]
    }

    pub fn total_bytes(&self) -> u64 {
        self.up_bytes + self.down_bytes
    }
}

/// `(up, down)` in kilobits per second over `window_seconds`.
pub fn bandwidth_kbps(stats: &LinkStats, window_seconds: f64) -> Result<(f64, f64)> {
    if window_seconds.is_nan() || window_seconds <= 0.0 {
        return Err(Error::InvalidArgument(format!("window {window_seconds}s must be > 0")));
    }
    let kbps = |bytes: u64| 8.0 * bytes as f64 / 1000.0 / window_seconds;
    Ok((kbps(stats.up_bytes), kbps(stats.down_bytes)))
}
