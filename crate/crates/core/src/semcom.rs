//! Wire payloads for the two observation modes and their link cost.
//!
//! Raw: `[phase u8][128·64·3 RGB bytes]` = 24,577 bytes.
//! Semantic: five little-endian `f32` values `(pos_N, pos_E, pos_S, pos_W,
//! phase)` = 20 bytes. No compression is applied to either.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::perception::{Image, SemanticVector, IMAGE_BYTES};
use crate::sim::Phase;

pub const RAW_PAYLOAD_BYTES: usize = IMAGE_BYTES + 1;
pub const SEMANTIC_PAYLOAD_BYTES: usize = 5 * std::mem::size_of::<f32>();

/// What the roadside sensor transmits each decision step.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObsMode {
    Image,
    Semantic,
}

impl ObsMode {
    pub fn payload_bytes(self) -> usize {
        match self {
            ObsMode::Image => RAW_PAYLOAD_BYTES,
            ObsMode::Semantic => SEMANTIC_PAYLOAD_BYTES,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ObsMode::Image => "image",
            ObsMode::Semantic => "semantic",
        }
    }
}

impl std::str::FromStr for ObsMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "image" => Ok(ObsMode::Image),
            "semantic" => Ok(ObsMode::Semantic),
            other => Err(Error::UnsupportedMode(other.to_string())),
        }
    }
}

impl std::fmt::Display for ObsMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawPayload(Vec<u8>);

impl RawPayload {
    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SemanticPayload([u8; SEMANTIC_PAYLOAD_BYTES]);

impl SemanticPayload {
    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }
}

pub fn encode_raw(image: &Image, phase: Phase) -> RawPayload {
    let mut bytes = Vec::with_capacity(RAW_PAYLOAD_BYTES);
    bytes.push(phase.index());
    bytes.extend_from_slice(image.as_bytes());
    assert_eq!(bytes.len(), RAW_PAYLOAD_BYTES);
    RawPayload(bytes)
}

pub fn decode_raw(bytes: &[u8]) -> Result<(Image, Phase)> {
    if bytes.len() != RAW_PAYLOAD_BYTES {
        return Err(Error::MalformedPayload {
            kind: "raw",
            reason: format!("expected {RAW_PAYLOAD_BYTES} bytes, got {}", bytes.len()),
        });
    }
    let phase = Phase::from_index(bytes[0]).ok_or_else(|| Error::MalformedPayload {
        kind: "raw",
        reason: format!("phase byte {} out of range", bytes[0]),
    })?;
    Ok((Image::from_bytes(bytes[1..].to_vec())?, phase))
}

pub fn encode_semantic(vector: &SemanticVector) -> SemanticPayload {
    let mut bytes = [0u8; SEMANTIC_PAYLOAD_BYTES];
    for (chunk, value) in bytes.chunks_exact_mut(4).zip(vector.as_array()) {
        chunk.copy_from_slice(&value.to_le_bytes());
    }
    SemanticPayload(bytes)
}

pub fn decode_semantic(bytes: &[u8]) -> Result<SemanticVector> {
    if bytes.len() != SEMANTIC_PAYLOAD_BYTES {
        return Err(Error::MalformedPayload {
            kind: "semantic",
            reason: format!("expected {SEMANTIC_PAYLOAD_BYTES} bytes, got {}", bytes.len()),
        });
    }
    let mut values = [0f32; 5];
    for (value, chunk) in values.iter_mut().zip(bytes.chunks_exact(4)) {
        *value = f32::from_le_bytes(chunk.try_into().expect("4-byte chunk"));
    }
    Ok(SemanticVector {
        positions: [values[0], values[1], values[2], values[3]],
        phase_index: values[4],
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkModel {
    pub rate_bps: f64,
    pub overhead_bytes: u64,
}

impl LinkModel {
    pub fn new(rate_bps: f64) -> Self {
        Self {
            rate_bps,
            overhead_bytes: 0,
        }
    }
}

/// Serialization delay of one message, in seconds.
pub fn tx_latency(payload_bytes: u64, link: &LinkModel) -> f64 {
    (payload_bytes + link.overhead_bytes) as f64 * 8.0 / link.rate_bps
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CommReport {
    pub mode: ObsMode,
    pub steps: u64,
    pub per_step_bytes: u64,
    pub total_bytes: u64,
    /// `1 − per_step / raw_per_step`.
    pub reduction_vs_raw: f64,
}

pub fn comm_report(steps: u64, mode: ObsMode) -> CommReport {
    let per_step = mode.payload_bytes() as u64;
    CommReport {
        mode,
        steps,
        per_step_bytes: per_step,
        total_bytes: per_step * steps,
        reduction_vs_raw: 1.0 - per_step as f64 / RAW_PAYLOAD_BYTES as f64,
    }
}

pub fn write_comm_csv<W: Write>(reports: &[CommReport], out: W) -> Result<()> {
    let mut writer = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    writer.write_record(["mode", "steps", "per_step_bytes", "total_bytes", "reduction_vs_raw"])?;
    for r in reports {
        writer.write_record([
            r.mode.name().to_string(),
            r.steps.to_string(),
            r.per_step_bytes.to_string(),
            r.total_bytes.to_string(),
            r.reduction_vs_raw.to_string(),
        ])?;
    }
    writer.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn black_frame_raw_payload() {
        let p = encode_raw(&Image::default(), Phase::NsGreen);
        assert_eq!(p.as_bytes().len(), 24_577);
        assert!(p.as_bytes().iter().all(|&b| b == 0));
        let (img, phase) = decode_raw(p.as_bytes()).unwrap();
        assert_eq!(img, Image::default());
        assert_eq!(phase, Phase::NsGreen);
    }

    #[test]
    fn raw_decode_errors() {
        assert!(matches!(decode_raw(&[0; 100]), Err(Error::MalformedPayload { .. })));
        let mut bytes = encode_raw(&Image::default(), Phase::EwYellow).into_bytes();
        bytes[0] = 9;
        assert!(matches!(decode_raw(&bytes), Err(Error::MalformedPayload { .. })));
    }

    #[test]
    fn empty_semantic_payload_bytes() {
        let v = SemanticVector {
            positions: [-1.0; 4],
            phase_index: 0.0,
        };
        let p = encode_semantic(&v);
        assert_eq!(p.as_bytes().len(), 20);
        assert_eq!(&p.as_bytes()[..4], &[0x00, 0x00, 0x80, 0xBF]);
        assert_eq!(&p.as_bytes()[16..], &[0, 0, 0, 0]);
    }

    #[test]
    fn semantic_round_trip() {
        let v = SemanticVector {
            positions: [12.0, 0.0, 31.0, 5.0],
            phase_index: 1.0,
        };
        assert_eq!(decode_semantic(encode_semantic(&v).as_bytes()).unwrap(), v);
        assert!(matches!(decode_semantic(&[0; 19]), Err(Error::MalformedPayload { .. })));
    }

    #[test]
    fn latency_examples() {
        let fast = LinkModel::new(1e8);
        assert!((tx_latency(24_577, &fast) - 1.96616e-3).abs() < 1e-15);
        assert!((tx_latency(20, &LinkModel::new(1e5)) - 1.6e-3).abs() < 1e-15);
        assert_eq!(tx_latency(0, &LinkModel::new(1e5)), 0.0);
        let framed = LinkModel { rate_bps: 8.0, overhead_bytes: 2 };
        assert_eq!(tx_latency(3, &framed), 5.0);
    }

    #[test]
    fn comm_report_values() {
        let s = comm_report(1, ObsMode::Semantic);
        assert_eq!((s.per_step_bytes, s.total_bytes), (20, 20));
        let i = comm_report(1, ObsMode::Image);
        assert_eq!((i.per_step_bytes, i.total_bytes), (24_577, 24_577));
        assert_eq!(i.reduction_vs_raw, 0.0);
        assert!((s.reduction_vs_raw - (1.0 - 20.0 / 24_577.0)).abs() < 1e-15);
        assert!(s.reduction_vs_raw > 0.999);
        assert_eq!(comm_report(1800, ObsMode::Semantic).total_bytes, 36_000);
    }
}
