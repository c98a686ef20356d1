//! Binary wire format.
//!
//! Every message starts with a 20-byte header, all integers little-endian:
//!
//! ```text
//! offset  size  field
//!      0     2  magic "PE" (0x50 0x45)
//!      2     1  version (0x01)
//!      3     1  kind (0x01 contribution, 0x02 broadcast, 0x03 parameters)
//!      4     4  client_id (u32; broadcasts carry SERVER_ID)
//!      8     4  round (u32)
//!     12     4  n_samples, or n_params for parameter messages (u32)
//!     16     2  n_classes (u16; 0 for parameter messages)
//!     18     2  reserved (0)
//! ```
//!
//! Probability bodies repeat `sample_id: u64` followed by `n_classes` f32
//! values per sample. Parameter bodies are `n_params` f32 values.

use probfed_core::{validate_simplex, ProbabilityVector, SIMPLEX_TOL};
use thiserror::Error;

pub const MAGIC: [u8; 2] = *b"PE";
pub const VERSION: u8 = 0x01;
pub const HEADER_LEN: usize = 20;
/// Largest encodable message.
pub const MAX_MESSAGE_LEN: u64 = 1 << 31;
/// Simplex tolerance applied to decoded (f32) probabilities.
pub const WIRE_SIMPLEX_TOL: f64 = 1e-4;
/// `client_id` written into server-originated headers.
pub const SERVER_ID: u32 = u32::MAX;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum WireError {
    #[error("bad magic {0:02x?}")]
    BadMagic([u8; 2]),
    #[error("unsupported version {0}")]
    BadVersion(u8),
    #[error("unknown message kind {0:#04x}")]
    BadKind(u8),
    #[error("truncated message: need {needed} bytes, have {got}")]
    Truncated { needed: usize, got: usize },
    #[error("{0} trailing bytes after message body")]
    TrailingBytes(usize),
    #[error("message of {0} bytes exceeds the 2^31 byte limit")]
    Oversize(u64),
    #[error("sample {sample_id} is off the simplex by {residual}")]
    SimplexViolation { sample_id: u64, residual: f64 },
    #[error("sample ids must be strictly increasing (saw {prev} then {next})")]
    UnorderedSamples { prev: u64, next: u64 },
    #[error("sample {sample_id} has {got} classes, header says {expected}")]
    ClassCountMismatch { sample_id: u64, expected: usize, got: usize },
    #[error("n_classes must be in 2..=65535, got {0}")]
    BadClassCount(usize),
    #[error("count field overflow: {0}")]
    CountOverflow(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[repr(u8)]
pub enum MessageKind {
    Contribution = 0x01,
    Broadcast = 0x02,
    Parameters = 0x03,
}

impl MessageKind {
    pub fn from_byte(b: u8) -> Result<Self, WireError> {
        match b {
            0x01 => Ok(Self::Contribution),
            0x02 => Ok(Self::Broadcast),
            0x03 => Ok(Self::Parameters),
            other => Err(WireError::BadKind(other)),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Contribution => "contribution",
            Self::Broadcast => "broadcast",
            Self::Parameters => "parameters",
        }
    }

    pub fn is_probability(self) -> bool {
        !matches!(self, Self::Parameters)
    }
}

/// Size of a contribution or broadcast carrying `n_samples` rows of `n_classes`.
pub fn probability_message_len(n_samples: usize, n_classes: usize) -> u64 {
    HEADER_LEN as u64 + n_samples as u64 * (8 + 4 * n_classes as u64)
}

/// Size of a parameter message carrying `n_params` values.
pub fn parameter_message_len(n_params: usize) -> u64 {
    HEADER_LEN as u64 + 4 * n_params as u64
}

pub fn ensure_encodable(len: u64) -> Result<(), WireError> {
    if len > MAX_MESSAGE_LEN {
        Err(WireError::Oversize(len))
    } else {
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityEntry {
    pub sample_id: u64,
    pub probs: ProbabilityVector,
}

fn check_entries(n_classes: usize, entries: &[ProbabilityEntry]) -> Result<(), WireError> {
    if !(2..=u16::MAX as usize).contains(&n_classes) {
        return Err(WireError::BadClassCount(n_classes));
    }
    if entries.len() > u32::MAX as usize {
        return Err(WireError::CountOverflow(entries.len()));
    }
    for pair in entries.windows(2) {
        if pair[1].sample_id <= pair[0].sample_id {
            return Err(WireError::UnorderedSamples {
                prev: pair[0].sample_id,
                next: pair[1].sample_id,
            });
        }
    }
    for e in entries {
        if e.probs.n_classes() != n_classes {
            return Err(WireError::ClassCountMismatch {
                sample_id: e.sample_id,
                expected: n_classes,
                got: e.probs.n_classes(),
            });
        }
    }
    Ok(())
}

/// One client's probabilities over the reference samples of a round.
#[derive(Debug, Clone, PartialEq)]
pub struct ContributionMessage {
    client_id: u32,
    round: u32,
    n_classes: usize,
    entries: Vec<ProbabilityEntry>,
}

impl ContributionMessage {
    pub fn new(
        client_id: u32,
        round: u32,
        n_classes: usize,
        entries: Vec<ProbabilityEntry>,
    ) -> Result<Self, WireError> {
        check_entries(n_classes, &entries)?;
        Ok(Self {
            client_id,
            round,
            n_classes,
            entries,
        })
    }

    pub fn client_id(&self) -> u32 {
        self.client_id
    }

    pub fn round(&self) -> u32 {
        self.round
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn n_samples(&self) -> usize {
        self.entries.len()
    }

    pub fn entries(&self) -> &[ProbabilityEntry] {
        &self.entries
    }

    pub fn into_entries(self) -> Vec<ProbabilityEntry> {
        self.entries
    }
}

/// Per-sample ensemble distributions sent back to clients.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleBroadcast {
    round: u32,
    n_classes: usize,
    entries: Vec<ProbabilityEntry>,
}

impl EnsembleBroadcast {
    pub fn new(round: u32, n_classes: usize, entries: Vec<ProbabilityEntry>) -> Result<Self, WireError> {
        check_entries(n_classes, &entries)?;
        Ok(Self {
            round,
            n_classes,
            entries,
        })
    }

    pub fn round(&self) -> u32 {
        self.round
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn n_samples(&self) -> usize {
        self.entries.len()
    }

    pub fn entries(&self) -> &[ProbabilityEntry] {
        &self.entries
    }
}

/// A flat parameter vector, as exchanged by the averaging baseline.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterMessage {
    pub client_id: u32,
    pub round: u32,
    pub params: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    Contribution(ContributionMessage),
    Broadcast(EnsembleBroadcast),
    Parameters(ParameterMessage),
}

impl Message {
    pub fn kind(&self) -> MessageKind {
        match self {
            Message::Contribution(_) => MessageKind::Contribution,
            Message::Broadcast(_) => MessageKind::Broadcast,
            Message::Parameters(_) => MessageKind::Parameters,
        }
    }

    pub fn round(&self) -> u32 {
        match self {
            Message::Contribution(m) => m.round,
            Message::Broadcast(m) => m.round,
            Message::Parameters(m) => m.round,
        }
    }

    /// `client_id` as it appears in the header.
    pub fn sender(&self) -> u32 {
        match self {
            Message::Contribution(m) => m.client_id,
            Message::Broadcast(_) => SERVER_ID,
            Message::Parameters(m) => m.client_id,
        }
    }

    /// `(count field, n_classes field)` of the header.
    pub fn dimensions(&self) -> (usize, usize) {
        match self {
            Message::Contribution(m) => (m.entries.len(), m.n_classes),
            Message::Broadcast(m) => (m.entries.len(), m.n_classes),
            Message::Parameters(m) => (m.params.len(), 0),
        }
    }

    pub fn encoded_len(&self) -> u64 {
        let (n, c) = self.dimensions();
        match self {
            Message::Parameters(_) => parameter_message_len(n),
            _ => probability_message_len(n, c),
        }
    }

    pub fn encode(&self) -> Result<Vec<u8>, WireError> {
        let len = self.encoded_len();
        ensure_encodable(len)?;
        let (count, n_classes) = self.dimensions();
        let count = u32::try_from(count).map_err(|_| WireError::CountOverflow(count))?;
        let mut out = Vec::with_capacity(len as usize);
        out.extend_from_slice(&MAGIC);
        out.push(VERSION);
        out.push(self.kind() as u8);
        out.extend_from_slice(&self.sender().to_le_bytes());
        out.extend_from_slice(&self.round().to_le_bytes());
        out.extend_from_slice(&count.to_le_bytes());
        out.extend_from_slice(&(n_classes as u16).to_le_bytes());
        out.extend_from_slice(&0u16.to_le_bytes());
        match self {
            Message::Contribution(ContributionMessage { entries, .. })
            | Message::Broadcast(EnsembleBroadcast { entries, .. }) => {
                for e in entries {
                    out.extend_from_slice(&e.sample_id.to_le_bytes());
                    for &p in e.probs.iter() {
                        out.extend_from_slice(&(p as f32).to_le_bytes());
                    }
                }
            }
            Message::Parameters(m) => {
                for &p in &m.params {
                    out.extend_from_slice(&(p as f32).to_le_bytes());
                }
            }
        }
        debug_assert_eq!(out.len() as u64, len);
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Message, WireError> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = [r.u8()?, r.u8()?];
        if magic != MAGIC {
            return Err(WireError::BadMagic(magic));
        }
        let version = r.u8()?;
        if version != VERSION {
            return Err(WireError::BadVersion(version));
        }
        let kind = MessageKind::from_byte(r.u8()?)?;
        let client_id = r.u32()?;
        let round = r.u32()?;
        let count = r.u32()? as usize;
        let n_classes = r.u16()? as usize;
        let _reserved = r.u16()?;

        let expected = match kind {
            MessageKind::Parameters => parameter_message_len(count),
            _ => probability_message_len(count, n_classes),
        };
        if (bytes.len() as u64) < expected {
            return Err(WireError::Truncated {
                needed: expected as usize,
                got: bytes.len(),
            });
        }
        if bytes.len() as u64 > expected {
            return Err(WireError::TrailingBytes(bytes.len() - expected as usize));
        }

        let msg = match kind {
            MessageKind::Parameters => {
                let params = (0..count).map(|_| r.f32().map(f64::from)).collect::<Result<_, _>>()?;
                Message::Parameters(ParameterMessage {
                    client_id,
                    round,
                    params,
                })
            }
            _ => {
                let entries = decode_entries(&mut r, count, n_classes)?;
                if kind == MessageKind::Contribution {
                    Message::Contribution(ContributionMessage::new(client_id, round, n_classes, entries)?)
                } else {
                    Message::Broadcast(EnsembleBroadcast::new(round, n_classes, entries)?)
                }
            }
        };
        Ok(msg)
    }
}

fn decode_entries(
    r: &mut Reader<'_>,
    count: usize,
    n_classes: usize,
) -> Result<Vec<ProbabilityEntry>, WireError> {
    if n_classes < 2 {
        return Err(WireError::BadClassCount(n_classes));
    }
    let mut entries = Vec::with_capacity(count);
    let mut raw = vec![0.0f64; n_classes];
    for _ in 0..count {
        let sample_id = r.u64()?;
        for slot in raw.iter_mut() {
            *slot = f64::from(r.f32()?);
        }
        let sum: f64 = raw.iter().sum();
        let residual = (sum - 1.0).abs();
        if !validate_simplex(&raw, WIRE_SIMPLEX_TOL) {
            return Err(WireError::SimplexViolation {
                sample_id,
                residual: if residual.is_finite() { residual } else { f64::INFINITY },
            });
        }
        // f32 quantization can push the sum past the in-memory tolerance.
        let probs = if residual > SIMPLEX_TOL {
            ProbabilityVector::from_unnormalized(&raw)
        } else {
            ProbabilityVector::new(raw.clone())
        }
        .map_err(|_| WireError::SimplexViolation { sample_id, residual })?;
        entries.push(ProbabilityEntry { sample_id, probs });
    }
    Ok(entries)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N], WireError> {
        let end = self.pos + N;
        let slice = self.bytes.get(self.pos..end).ok_or(WireError::Truncated {
            needed: end,
            got: self.bytes.len(),
        })?;
        self.pos = end;
        Ok(slice.try_into().expect("length checked"))
    }

    fn u8(&mut self) -> Result<u8, WireError> {
        Ok(self.take::<1>()?[0])
    }

    fn u16(&mut self) -> Result<u16, WireError> {
        Ok(u16::from_le_bytes(self.take()?))
    }

    fn u32(&mut self) -> Result<u32, WireError> {
        Ok(u32::from_le_bytes(self.take()?))
    }

    fn u64(&mut self) -> Result<u64, WireError> {
        Ok(u64::from_le_bytes(self.take()?))
    }

    fn f32(&mut self) -> Result<f32, WireError> {
        Ok(f32::from_le_bytes(self.take()?))
    }
}
