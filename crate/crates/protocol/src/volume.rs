//! Online communication volume of one inference.

use serde::Serialize;

/// Bytes per label chunk.
pub const LABEL_BYTES: u64 = 16;

const MIB: f64 = (1u64 << 20) as f64;

/// Predicted online traffic per edge, in bytes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct CommVolume {
    /// Input owners to garbling device, 16-bit plain values.
    pub plain_inputs: u64,
    /// Garbling device to inference device, one label per input and prime.
    pub garbled_inputs: u64,
    /// Inference device to garbling device.
    pub garbled_outputs: u64,
    /// Garbling device to result owner, 64-bit plain values.
    pub plain_outputs: u64,
}

impl CommVolume {
    pub fn total_bytes(&self) -> u64 {
        self.plain_inputs + self.garbled_inputs + self.garbled_outputs + self.plain_outputs
    }

    pub fn total_bits(&self) -> u64 {
        8 * self.total_bytes()
    }

    /// Total under the 100% protocol-overhead model.
    pub fn with_overhead_bytes(&self) -> u64 {
        2 * self.total_bytes()
    }

    /// Binary megabytes (2^20 bytes).
    pub fn megabytes(&self) -> f64 {
        self.total_bytes() as f64 / MIB
    }

    /// Binary megabytes of garbled labels only.
    pub fn label_megabytes(&self) -> f64 {
        (self.garbled_inputs + self.garbled_outputs) as f64 / MIB
    }

    pub fn megabytes_with_overhead(&self) -> f64 {
        self.with_overhead_bytes() as f64 / MIB
    }
}

/// `k * 128 * (in + out)` bits of labels plus `16 * in + 64 * out` bits of
/// plain values.
pub fn comm_volume(k: usize, input_len: usize, output_len: usize) -> CommVolume {
    let (k, i, o) = (k as u64, input_len as u64, output_len as u64);
    CommVolume {
        plain_inputs: 2 * i,
        garbled_inputs: k * LABEL_BYTES * i,
        garbled_outputs: k * LABEL_BYTES * o,
        plain_outputs: 8 * o,
    }
}
