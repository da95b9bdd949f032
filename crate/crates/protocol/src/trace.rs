//! Frame trace of the garbling device, for round counting and volume
//! measurement.

use std::sync::{Arc, Mutex};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::frame::{Frame, FrameType, HEADER_LEN};
use crate::messages::OWNER_SLOT_LEN;
use crate::volume::CommVolume;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Peer {
    Client,
    Evaluator,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Direction {
    Sent,
    Received,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct TraceEntry {
    pub session: u128,
    pub peer: Peer,
    pub direction: Direction,
    #[serde(serialize_with = "kind_name")]
    pub kind: FrameType,
    pub payload_len: usize,
    /// SHA-256 of the payload, to compare payloads without storing them.
    #[serde(skip)]
    pub digest: [u8; 32],
}

fn kind_name<S: serde::Serializer>(k: &FrameType, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&format!("{k:?}"))
}

#[derive(Clone, Debug, Default)]
pub struct TraceRecorder(Arc<Mutex<Vec<TraceEntry>>>);

impl TraceRecorder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&self, peer: Peer, direction: Direction, frame: &Frame) {
        let entry = TraceEntry {
            session: frame.session,
            peer,
            direction,
            kind: frame.kind,
            payload_len: frame.payload.len(),
            digest: Sha256::digest(&frame.payload).into(),
        };
        self.0.lock().expect("trace lock").push(entry);
    }

    pub fn entries(&self) -> Vec<TraceEntry> {
        self.0.lock().expect("trace lock").clone()
    }

    pub fn session(&self, session: u128) -> Vec<TraceEntry> {
        self.entries().into_iter().filter(|e| e.session == session).collect()
    }

    /// Online data frames exchanged with the inference device, as
    /// (sent GARBLED_INPUT, received GARBLED_OUTPUT).
    pub fn online_rounds(&self, session: u128) -> (usize, usize) {
        let s = self.session(session);
        let count = |d: Direction, k: FrameType| {
            s.iter()
                .filter(|e| e.peer == Peer::Evaluator && e.direction == d && e.kind == k)
                .count()
        };
        (
            count(Direction::Sent, FrameType::GarbledInput),
            count(Direction::Received, FrameType::GarbledOutput),
        )
    }

    /// Measured online payload bytes per edge, and the framing bytes
    /// (headers plus owner slots) spent on those frames.
    pub fn online_volume(&self, session: u128) -> (CommVolume, u64) {
        let mut v = CommVolume {
            plain_inputs: 0,
            garbled_inputs: 0,
            garbled_outputs: 0,
            plain_outputs: 0,
        };
        let mut framing = 0u64;
        for e in self.session(session) {
            let len = e.payload_len as u64;
            let slot = match (e.peer, e.direction, e.kind) {
                (Peer::Client, Direction::Received, FrameType::InputUpload) => {
                    v.plain_inputs += len - OWNER_SLOT_LEN as u64;
                    OWNER_SLOT_LEN as u64
                }
                (Peer::Evaluator, Direction::Sent, FrameType::GarbledInput) => {
                    v.garbled_inputs += len;
                    0
                }
                (Peer::Evaluator, Direction::Received, FrameType::GarbledOutput) => {
                    v.garbled_outputs += len;
                    0
                }
                (Peer::Client, Direction::Sent, FrameType::Result) => {
                    v.plain_outputs += len;
                    0
                }
                _ => continue,
            };
            framing += HEADER_LEN as u64 + slot;
        }
        (v, framing)
    }

    /// Payload digest of the first frame matching the filter.
    pub fn digest_of(&self, session: u128, peer: Peer, direction: Direction, kind: FrameType) -> Option<[u8; 32]> {
        self.session(session)
            .into_iter()
            .find(|e| e.peer == peer && e.direction == direction && e.kind == kind)
            .map(|e| e.digest)
    }
}
