//! Garbling device: garbles uploaded models, collects inputs from the input
//! owners, runs the single online round with the inference device and hands
//! the decoded result to the result owner. Encoding and decoding
//! information never leave this service.

use std::collections::HashMap;
use std::io::BufReader;
use std::net::TcpListener;
use std::ops::Range;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use dash_core::circuit::{decode_outputs, garble, garble_inputs, Circuit, DecodingInfo, EncodingInfo};
use dash_core::crt::CrtBase;
use dash_core::gadgets::SignAccuracy;
use rand::RngCore;
use sha2::{Digest, Sha256};

use crate::error::{ErrorCode, ProtocolError, Result};
use crate::frame::{read_reply, write_frame, Frame, FrameType};
use crate::messages::{
    decode_bundle, decode_inputs, decode_json, encode_bundle, encode_json, encode_result, parse_sign_accuracy,
    ModelUpload, SessionInfo,
};
use crate::net::{connect, error_reply, spawn_service, Handler, ServiceHandle};
use crate::trace::{Direction, Peer, TraceRecorder};

#[derive(Clone, Debug)]
pub struct GarblerOptions {
    /// Address of the inference device.
    pub evaluator: String,
    /// Default base size for real-valued models.
    pub k: usize,
    pub sign_accuracy: SignAccuracy,
    /// Fixed master seed for reproducible runs; random per session if unset.
    pub seed: Option<[u8; 32]>,
    pub timeout: Duration,
    pub trace: TraceRecorder,
}

impl GarblerOptions {
    pub fn new(evaluator: impl Into<String>) -> Self {
        GarblerOptions {
            evaluator: evaluator.into(),
            k: 8,
            sign_accuracy: SignAccuracy::Full,
            seed: None,
            timeout: Duration::from_secs(120),
            trace: TraceRecorder::new(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Phase {
    OfflineReady,
    InputsPending,
    Running,
    Done,
}

struct SessionState {
    phase: Phase,
    owners: Vec<Range<usize>>,
    filled: Vec<bool>,
    inputs: Vec<i128>,
    e: Option<EncodingInfo>,
    d: Option<DecodingInfo>,
    result: Option<std::result::Result<Vec<i128>, (ErrorCode, String)>>,
}

struct Session {
    token: String,
    state: Mutex<SessionState>,
    done: Condvar,
}

pub struct Garbler {
    opts: GarblerOptions,
    sessions: Mutex<HashMap<u128, Arc<Session>>>,
    counter: AtomicU64,
}

impl Garbler {
    pub fn new(opts: GarblerOptions) -> Self {
        Garbler {
            opts,
            sessions: Mutex::new(HashMap::new()),
            counter: AtomicU64::new(0),
        }
    }

    pub fn trace(&self) -> &TraceRecorder {
        &self.opts.trace
    }

    /// Session id and garbling seed: derived from the master seed and a
    /// counter when one is configured, otherwise fresh OS randomness.
    fn fresh_session(&self) -> (u128, [u8; 32]) {
        let n = self.counter.fetch_add(1, Ordering::SeqCst);
        match self.opts.seed {
            Some(master) => {
                let derive = |label: &[u8]| -> [u8; 32] {
                    Sha256::new()
                        .chain_update(master)
                        .chain_update(label)
                        .chain_update(n.to_le_bytes())
                        .finalize()
                        .into()
                };
                let id = derive(b"session");
                (
                    u128::from_le_bytes(id[..16].try_into().expect("16 bytes")),
                    derive(b"garble"),
                )
            }
            None => {
                let mut rng = rand::rngs::OsRng;
                let mut seed = [0u8; 32];
                rng.fill_bytes(&mut seed);
                ((rng.next_u64() as u128) << 64 | rng.next_u64() as u128, seed)
            }
        }
    }

    fn build_circuit(&self, req: &ModelUpload) -> Result<Circuit> {
        let circuit = if req.model.is_quantized() {
            let c = req.model.quantized_circuit()?;
            if req.k.is_some_and(|k| k != c.base.k()) {
                return Err(ProtocolError::Core(dash_core::Error::Model(format!(
                    "quantized model uses k = {}, request asks for {:?}",
                    c.base.k(),
                    req.k
                ))));
            }
            c
        } else {
            let alpha = req.alpha.ok_or_else(|| {
                ProtocolError::Core(dash_core::Error::Model(
                    "real-valued model needs a quantization constant".into(),
                ))
            })?;
            let base = Arc::new(CrtBase::new(req.k.unwrap_or(self.opts.k))?);
            req.model.to_circuit(base, alpha)?
        };
        let accuracy = match &req.sign_accuracy {
            Some(s) => parse_sign_accuracy(s)?,
            None => self.opts.sign_accuracy,
        };
        Ok(circuit
            .with_sign_accuracy(accuracy)
            .with_private_weights(req.private_weights))
    }

    /// One request/reply exchange with the inference device, traced.
    fn exchange(&self, frame: Frame) -> Result<Frame> {
        let mut stream = connect(&self.opts.evaluator, self.opts.timeout)?;
        self.opts.trace.record(Peer::Evaluator, Direction::Sent, &frame);
        write_frame(&mut stream, &frame)?;
        let reply = read_reply(&mut BufReader::new(stream))?;
        self.opts.trace.record(Peer::Evaluator, Direction::Received, &reply);
        Ok(reply)
    }

    fn model_upload(&self, payload: &[u8]) -> Result<Frame> {
        let req: ModelUpload = decode_json(payload)?;
        let circuit = self.build_circuit(&req)?;
        let input_len = circuit.input_len();
        if req.owners.is_empty() || req.owners.contains(&0) || req.owners.iter().sum::<usize>() != input_len {
            return Err(ProtocolError::Core(dash_core::Error::Shape(format!(
                "owner partition {:?} does not cover {input_len} inputs",
                req.owners
            ))));
        }
        if req.owners.len() > u16::MAX as usize + 1 {
            return Err(ProtocolError::Malformed("too many input owners".into()));
        }
        let (session, seed) = self.fresh_session();
        let (gnn, e, d) = garble(&circuit, &seed)?;
        let gc = gnn.to_bytes();
        let gc_bytes = gc.len();
        self.exchange(Frame::new(FrameType::GcTransfer, session, gc))?
            .expect(FrameType::GcTransfer)?;

        let mut start = 0;
        let owners = req
            .owners
            .iter()
            .map(|&n| {
                start += n;
                start - n..start
            })
            .collect::<Vec<_>>();
        let info = SessionInfo {
            k: circuit.base.k(),
            alpha: circuit.alpha,
            input_len,
            output_shape: d.shape().to_vec(),
            output_scale: d.scale(),
            owners: req.owners.clone(),
            gc_bytes,
        };
        let state = SessionState {
            phase: Phase::OfflineReady,
            filled: vec![false; owners.len()],
            owners,
            inputs: vec![0; input_len],
            e: Some(e),
            d: Some(d),
            result: None,
        };
        let s = Arc::new(Session {
            token: req.token,
            state: Mutex::new(state),
            done: Condvar::new(),
        });
        self.sessions.lock().expect("session lock").insert(session, s);
        Ok(Frame::new(FrameType::ModelUpload, session, encode_json(&info)))
    }

    fn session(&self, id: u128) -> Result<Arc<Session>> {
        self.sessions
            .lock()
            .expect("session lock")
            .get(&id)
            .cloned()
            .ok_or(ProtocolError::UnknownSession(id))
    }

    fn input_upload(&self, id: u128, payload: &[u8]) -> Result<Frame> {
        let (slot, values) = decode_inputs(payload)?;
        let s = self.session(id)?;
        let (e, d, inputs) = {
            let mut st = s.state.lock().expect("state lock");
            if !matches!(st.phase, Phase::OfflineReady | Phase::InputsPending) {
                return Err(ProtocolError::Phase("session no longer accepts inputs".into()));
            }
            let slot = slot as usize;
            let range = st
                .owners
                .get(slot)
                .cloned()
                .ok_or_else(|| ProtocolError::Phase(format!("no input owner slot {slot}")))?;
            if st.filled[slot] {
                return Err(ProtocolError::Phase(format!("slot {slot} already uploaded")));
            }
            if values.len() != range.len() {
                return Err(ProtocolError::Core(dash_core::Error::Shape(format!(
                    "slot {slot} expects {} values, got {}",
                    range.len(),
                    values.len()
                ))));
            }
            st.inputs[range].copy_from_slice(&values);
            st.filled[slot] = true;
            st.phase = Phase::InputsPending;
            if !st.filled.iter().all(|&f| f) {
                return Ok(Frame::new(FrameType::InputUpload, id, Vec::new()));
            }
            st.phase = Phase::Running;
            let e = st.e.take().expect("encoding present until the round");
            let d = st.d.take().expect("decoding present until the round");
            (e, d, std::mem::take(&mut st.inputs))
        };
        let result = self.online_round(id, &e, &d, &inputs);
        let mut st = s.state.lock().expect("state lock");
        st.result = Some(result.map_err(|e| (e.code(), e.to_string())));
        st.phase = Phase::Done;
        s.done.notify_all();
        Ok(Frame::new(FrameType::InputUpload, id, Vec::new()))
    }

    /// The only online exchange between the two devices.
    fn online_round(&self, id: u128, e: &EncodingInfo, d: &DecodingInfo, inputs: &[i128]) -> Result<Vec<i128>> {
        let gin = garble_inputs(e, inputs)?;
        let reply = self
            .exchange(Frame::new(FrameType::GarbledInput, id, encode_bundle(&gin)))?
            .expect(FrameType::GarbledOutput)?;
        let gout = decode_bundle(&reply.payload, e.base(), d.shape())?;
        Ok(decode_outputs(d, &gout)?)
    }

    fn result(&self, id: u128, payload: &[u8]) -> Result<Frame> {
        let s = self.session(id)?;
        if payload != s.token.as_bytes() {
            return Err(ProtocolError::Unauthorized("wrong result token".into()));
        }
        let deadline = Instant::now() + self.opts.timeout;
        let mut st = s.state.lock().expect("state lock");
        while st.result.is_none() {
            let left = deadline.saturating_duration_since(Instant::now());
            if left.is_zero() {
                return Err(ProtocolError::Phase("result not ready before the timeout".into()));
            }
            st = s.done.wait_timeout(st, left).expect("state lock").0;
        }
        let result = st.result.take().expect("checked above");
        drop(st);
        // single delivery; the session ends here
        self.sessions.lock().expect("session lock").remove(&id);
        match result {
            Ok(values) => Ok(Frame::new(FrameType::Result, id, encode_result(&values)?)),
            Err((code, message)) => Ok(Frame::error(id, code, message)),
        }
    }
}

impl Handler for Garbler {
    fn handle(&self, frame: Frame) -> Frame {
        let trace = &self.opts.trace;
        trace.record(Peer::Client, Direction::Received, &frame);
        let session = frame.session;
        let result = match frame.kind {
            FrameType::ModelUpload => self.model_upload(&frame.payload),
            FrameType::InputUpload => self.input_upload(session, &frame.payload),
            FrameType::Result => self.result(session, &frame.payload),
            other => Err(ProtocolError::Phase(format!(
                "the garbling device does not accept {other:?}"
            ))),
        };
        let reply = result.unwrap_or_else(|e| error_reply(session, &e));
        trace.record(Peer::Client, Direction::Sent, &reply);
        reply
    }
}

/// Run the garbling-device service on `listener`.
pub fn serve_garbler(listener: TcpListener, opts: GarblerOptions) -> Result<(ServiceHandle, Arc<Garbler>)> {
    let timeout = opts.timeout;
    let g = Arc::new(Garbler::new(opts));
    let handle = spawn_service(listener, g.clone(), timeout)?;
    Ok((handle, g))
}
