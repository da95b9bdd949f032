//! Inference device: stores garbled networks offline and evaluates each one
//! exactly once on the garbled input it receives online.

use std::collections::HashMap;
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use dash_core::circuit::{evaluate, GarbledCircuit};

use crate::error::{ProtocolError, Result};
use crate::frame::{Frame, FrameType};
use crate::messages::{decode_bundle, encode_bundle};
use crate::net::{error_reply, spawn_service, Handler, ServiceHandle};

/// Bytes held for one session: the garbled network and one garbled input.
/// Neither depends on how many owners contributed the input.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Footprint {
    pub gc_bytes: usize,
    pub input_bytes: usize,
}

enum Slot {
    Ready { gnn: Arc<GarbledCircuit>, gc_bytes: usize },
    Consumed(Footprint),
}

#[derive(Default)]
pub struct Evaluator {
    sessions: Mutex<HashMap<u128, Slot>>,
}

impl Evaluator {
    pub fn new() -> Self {
        Self::default()
    }

    /// Storage footprint of a session, once its input has been evaluated.
    pub fn footprint(&self, session: u128) -> Option<Footprint> {
        match self.sessions.lock().expect("session lock").get(&session) {
            Some(Slot::Consumed(f)) => Some(*f),
            _ => None,
        }
    }

    fn store(&self, session: u128, payload: &[u8]) -> Result<()> {
        let gnn = GarbledCircuit::from_bytes(payload)?;
        gnn.check_tweaks()?;
        let mut s = self.sessions.lock().expect("session lock");
        if s.contains_key(&session) {
            return Err(ProtocolError::Phase("session already has a garbled network".into()));
        }
        s.insert(
            session,
            Slot::Ready {
                gnn: Arc::new(gnn),
                gc_bytes: payload.len(),
            },
        );
        Ok(())
    }

    fn run(&self, session: u128, payload: &[u8]) -> Result<Vec<u8>> {
        // claim the network before evaluating so a concurrent replay fails
        let (gnn, gc_bytes) = {
            let mut s = self.sessions.lock().expect("session lock");
            let footprint = Footprint {
                gc_bytes: 0,
                input_bytes: payload.len(),
            };
            match s.insert(session, Slot::Consumed(footprint)) {
                Some(Slot::Ready { gnn, gc_bytes }) => (gnn, gc_bytes),
                Some(consumed @ Slot::Consumed(_)) => {
                    s.insert(session, consumed);
                    return Err(ProtocolError::Replay(session));
                }
                None => {
                    s.remove(&session);
                    return Err(ProtocolError::UnknownSession(session));
                }
            }
        };
        if let Some(Slot::Consumed(f)) = self.sessions.lock().expect("session lock").get_mut(&session) {
            f.gc_bytes = gc_bytes;
        }
        let input = decode_bundle(payload, gnn.base(), gnn.input_shape())?;
        let out = evaluate(&gnn, &input)?;
        Ok(encode_bundle(&out))
    }
}

impl Handler for Evaluator {
    fn handle(&self, frame: Frame) -> Frame {
        let session = frame.session;
        let result = match frame.kind {
            FrameType::GcTransfer => self
                .store(session, &frame.payload)
                .map(|_| Frame::new(FrameType::GcTransfer, session, Vec::new())),
            FrameType::GarbledInput => self
                .run(session, &frame.payload)
                .map(|out| Frame::new(FrameType::GarbledOutput, session, out)),
            other => Err(ProtocolError::Phase(format!(
                "the inference device does not accept {other:?}"
            ))),
        };
        result.unwrap_or_else(|e| error_reply(session, &e))
    }
}

/// Run the inference-device service on `listener`.
pub fn serve_evaluator(listener: TcpListener, timeout: Duration) -> Result<(ServiceHandle, Arc<Evaluator>)> {
    let ev = Arc::new(Evaluator::new());
    let handle = spawn_service(listener, ev.clone(), timeout)?;
    Ok((handle, ev))
}
