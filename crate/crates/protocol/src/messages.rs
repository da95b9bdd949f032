//! Payload encodings. Control messages are JSON; online data payloads are
//! raw little-endian values so their size matches the volume model exactly.

use dash_core::codec::{Reader, Writer};
use dash_core::crt::CrtBase;
use dash_core::gadgets::SignAccuracy;
use dash_core::layers::BundleTensor;
use dash_core::model_io::ModelFile;
use serde::{Deserialize, Serialize};

use crate::error::{ProtocolError, Result};

/// Bytes of the owner slot prefix in INPUT_UPLOAD, counted as framing.
pub const OWNER_SLOT_LEN: usize = 2;

/// MODEL_UPLOAD request body: a model plus the session parameters.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelUpload {
    pub model: ModelFile,
    /// Base size; defaults to the model's own (quantized files) or the
    /// garbler's configuration.
    #[serde(default)]
    pub k: Option<usize>,
    /// Quantization constant for real-valued models.
    #[serde(default)]
    pub alpha: Option<f64>,
    /// `"full"` or a target fraction such as `"0.95"`.
    #[serde(default)]
    pub sign_accuracy: Option<String>,
    /// Number of inputs contributed by each input owner, in order.
    pub owners: Vec<usize>,
    /// Pre-shared token the result owner presents to fetch the result.
    pub token: String,
    #[serde(default)]
    pub private_weights: bool,
}

/// MODEL_UPLOAD reply body.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionInfo {
    pub k: usize,
    pub alpha: f64,
    pub input_len: usize,
    pub output_shape: Vec<usize>,
    /// Real value of one integer output unit.
    pub output_scale: f64,
    pub owners: Vec<usize>,
    pub gc_bytes: usize,
}

pub fn parse_sign_accuracy(s: &str) -> Result<SignAccuracy> {
    if s.eq_ignore_ascii_case("full") {
        return Ok(SignAccuracy::Full);
    }
    match s.parse::<f64>() {
        Ok(f) if f > 0.0 && f <= 1.0 => Ok(SignAccuracy::AtLeast(f)),
        _ => Err(ProtocolError::Config(format!(
            "sign accuracy must be \"full\" or a fraction in (0, 1], got {s:?}"
        ))),
    }
}

pub fn encode_json<T: Serialize>(v: &T) -> Vec<u8> {
    serde_json::to_vec(v).expect("message serializes")
}

pub fn decode_json<T: for<'de> Deserialize<'de>>(payload: &[u8]) -> Result<T> {
    serde_json::from_slice(payload).map_err(|e| ProtocolError::Malformed(e.to_string()))
}

/// INPUT_UPLOAD body: `slot u16 | values i16...`.
pub fn encode_inputs(slot: u16, values: &[i128]) -> Result<Vec<u8>> {
    let mut w = Writer::with_capacity(OWNER_SLOT_LEN + 2 * values.len());
    w.u16(slot);
    for &v in values {
        let v = i16::try_from(v)
            .map_err(|_| ProtocolError::Core(dash_core::Error::OutOfRange(format!("input {v} exceeds 16 bits"))))?;
        w.u16(v as u16);
    }
    Ok(w.into_inner())
}

pub fn decode_inputs(payload: &[u8]) -> Result<(u16, Vec<i128>)> {
    if payload.len() < OWNER_SLOT_LEN || !payload.len().is_multiple_of(2) {
        return Err(ProtocolError::Malformed(format!(
            "input upload of {} bytes",
            payload.len()
        )));
    }
    let slot = u16::from_le_bytes([payload[0], payload[1]]);
    let values = payload[OWNER_SLOT_LEN..]
        .chunks_exact(2)
        .map(|c| i16::from_le_bytes([c[0], c[1]]) as i128)
        .collect();
    Ok((slot, values))
}

/// GARBLED_INPUT / GARBLED_OUTPUT body: lane-major 16-byte label chunks.
pub fn encode_bundle(t: &BundleTensor) -> Vec<u8> {
    let mut w = Writer::with_capacity(t.lanes().len() * t.len() * 16);
    t.write_chunks(&mut w);
    w.into_inner()
}

pub fn decode_bundle(payload: &[u8], base: &CrtBase, shape: &[usize]) -> Result<BundleTensor> {
    let mut r = Reader::new(payload);
    let t = BundleTensor::read_chunks(&mut r, base, shape)?;
    r.finish()?;
    Ok(t)
}

/// RESULT body: one i64 per output.
pub fn encode_result(values: &[i128]) -> Result<Vec<u8>> {
    let mut w = Writer::with_capacity(8 * values.len());
    for &v in values {
        let v = i64::try_from(v)
            .map_err(|_| ProtocolError::Core(dash_core::Error::OutOfRange(format!("output {v} exceeds 64 bits"))))?;
        w.i64(v);
    }
    Ok(w.into_inner())
}

pub fn decode_result(payload: &[u8]) -> Result<Vec<i64>> {
    if !payload.len().is_multiple_of(8) {
        return Err(ProtocolError::Malformed(format!("result of {} bytes", payload.len())));
    }
    Ok(payload
        .chunks_exact(8)
        .map(|c| i64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect())
}
