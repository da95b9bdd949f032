//! Both services on loopback sockets, driven by the client roles.

use std::io::BufReader;
use std::net::{TcpListener, TcpStream};
use std::sync::Arc;
use std::time::Duration;

use dash_core::circuit::Circuit;
use dash_core::crt::CrtBase;
use dash_core::layers::{Dense, Layer};
use dash_core::model_io::{quantized_model, Architecture, ModelFile};
use dash_protocol::client::{fetch_result, run_inference, upload_inputs, upload_model};
use dash_protocol::evaluator::{serve_evaluator, Evaluator};
use dash_protocol::frame::{read_frame, read_reply, write_frame, Frame, FrameType, Incoming};
use dash_protocol::garbler::{serve_garbler, Garbler, GarblerOptions};
use dash_protocol::messages::ModelUpload;
use dash_protocol::net::{request, ServiceHandle};
use dash_protocol::trace::{Direction, Peer};
use dash_protocol::{comm_volume, ErrorCode, ProtocolError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

const TIMEOUT: Duration = Duration::from_secs(60);

struct Deployment {
    garbler: ServiceHandle,
    evaluator: ServiceHandle,
    g: Arc<Garbler>,
    ev: Arc<Evaluator>,
}

impl Deployment {
    fn start(seed: Option<[u8; 32]>) -> Self {
        let (evaluator, ev) = serve_evaluator(TcpListener::bind("127.0.0.1:0").unwrap(), TIMEOUT).unwrap();
        Self::with_evaluator_addr(seed, evaluator, ev, None)
    }

    /// Route the garbler's device traffic through `via` instead.
    fn with_evaluator_addr(
        seed: Option<[u8; 32]>,
        evaluator: ServiceHandle,
        ev: Arc<Evaluator>,
        via: Option<String>,
    ) -> Self {
        let mut opts = GarblerOptions::new(via.unwrap_or_else(|| evaluator.addr().to_string()));
        opts.seed = seed;
        opts.timeout = TIMEOUT;
        let (garbler, g) = serve_garbler(TcpListener::bind("127.0.0.1:0").unwrap(), opts).unwrap();
        Deployment {
            garbler,
            evaluator,
            g,
            ev,
        }
    }

    fn addr(&self) -> String {
        self.garbler.addr().to_string()
    }
}

fn upload(model: ModelFile, owners: Vec<usize>) -> ModelUpload {
    ModelUpload {
        model,
        k: None,
        alpha: None,
        sign_accuracy: None,
        owners,
        token: "result-owner-secret".into(),
        private_weights: false,
    }
}

fn flatten_model(n: usize, k: usize) -> ModelFile {
    let c = Circuit::new(vec![n], vec![Layer::Flatten], Arc::new(CrtBase::new(k).unwrap()), 1.0).unwrap();
    quantized_model(&c)
}

fn small_net() -> Circuit {
    let mut rng = ChaCha20Rng::seed_from_u64(1);
    let w: Vec<i64> = (0..24).map(|_| rng.gen_range(-2..=2)).collect();
    let layers = vec![
        Layer::Dense(Dense::new(6, 4, w, vec![1, 0, -1, 2]).unwrap()),
        Layer::Relu,
        Layer::Dense(Dense::new(4, 2, vec![1, -1, 2, 0, 0, 1, -1, 1], vec![0, 0]).unwrap()),
    ];
    Circuit::new(vec![6], layers, Arc::new(CrtBase::new(5).unwrap()), 1.0).unwrap()
}

#[test]
fn identity_network_returns_the_input() {
    let d = Deployment::start(None);
    let x: Vec<i128> = vec![3, -7, 0, 12, -1];
    let (_, info, out) = run_inference(
        &d.addr(),
        &upload(flatten_model(5, 4), vec![5]),
        std::slice::from_ref(&x),
        TIMEOUT,
    )
    .unwrap();
    assert_eq!(out, x.iter().map(|&v| v as i64).collect::<Vec<_>>());
    assert_eq!(info.output_shape, vec![5]);
    assert_eq!(info.output_scale, 1.0);
}

#[test]
fn network_result_matches_the_integer_reference() {
    let d = Deployment::start(None);
    let c = small_net();
    let x: Vec<i128> = vec![1, -2, 3, 0, 4, -5];
    let (session, _, out) = run_inference(
        &d.addr(),
        &upload(quantized_model(&c), vec![2, 4]),
        &[x[..2].to_vec(), x[2..].to_vec()],
        TIMEOUT,
    )
    .unwrap();
    let expected: Vec<i64> = c.plain_forward(&x).unwrap().iter().map(|&v| v as i64).collect();
    assert_eq!(out, expected);
    // exactly one online round with the inference device
    assert_eq!(d.g.trace().online_rounds(session), (1, 1));
    let device_frames: Vec<FrameType> =
        d.g.trace()
            .session(session)
            .iter()
            .filter(|e| e.peer == Peer::Evaluator)
            .map(|e| e.kind)
            .collect();
    assert_eq!(
        device_frames,
        vec![
            FrameType::GcTransfer,
            FrameType::GcTransfer,
            FrameType::GarbledInput,
            FrameType::GarbledOutput
        ]
    );
}

#[test]
fn measured_volume_matches_the_model_for_model_a() {
    let d = Deployment::start(None);
    let c = Architecture::A
        .random_circuit(&mut ChaCha20Rng::seed_from_u64(2))
        .unwrap();
    let x: Vec<i128> = (0..784).map(|i| (i % 5) as i128).collect();
    let (session, info, out) = run_inference(
        &d.addr(),
        &upload(quantized_model(&c), vec![784]),
        std::slice::from_ref(&x),
        TIMEOUT,
    )
    .unwrap();
    assert_eq!(
        out,
        c.plain_forward(&x)
            .unwrap()
            .iter()
            .map(|&v| v as i64)
            .collect::<Vec<_>>()
    );
    assert_eq!(info.k, 8);
    let (measured, framing) = d.g.trace().online_volume(session);
    assert_eq!(measured, comm_volume(8, 784, 10));
    // one frame per online edge; the owner slot is framing
    assert_eq!(framing, 4 * 21 + 2);
    assert_eq!(format!("{:.2}", measured.megabytes()), "0.10");
}

#[test]
fn input_partition_does_not_change_the_garbled_input() {
    let seed = Some([11u8; 32]);
    let x: Vec<i128> = (0..784).map(|i| (i % 9) as i128 - 4).collect();
    let mut digests = Vec::new();
    let mut footprints = Vec::new();
    for owners in [vec![784usize], vec![300, 284, 200]] {
        let d = Deployment::start(seed);
        let mut parts = Vec::new();
        let mut start = 0;
        for &n in &owners {
            parts.push(x[start..start + n].to_vec());
            start += n;
        }
        let (session, _, out) =
            run_inference(&d.addr(), &upload(flatten_model(784, 8), owners), &parts, TIMEOUT).unwrap();
        assert_eq!(out, x.iter().map(|&v| v as i64).collect::<Vec<_>>());
        digests.push(
            d.g.trace()
                .digest_of(session, Peer::Evaluator, Direction::Sent, FrameType::GarbledInput)
                .unwrap(),
        );
        footprints.push(d.ev.footprint(session).unwrap());
    }
    assert_eq!(digests[0], digests[1]);
    assert_eq!(footprints[0], footprints[1]);
    assert_eq!(footprints[0].input_bytes, 8 * 16 * 784);
}

/// Forwards frames to the evaluator, flipping one payload bit of every
/// GARBLED_OUTPUT on its way back.
fn tampering_proxy(target: String) -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap().to_string();
    std::thread::spawn(move || {
        for client in listener.incoming() {
            let mut client = client.unwrap();
            let target = target.clone();
            std::thread::spawn(move || {
                let mut up = TcpStream::connect(&target).unwrap();
                let mut reader = BufReader::new(client.try_clone().unwrap());
                while let Ok(Incoming::Frame(f)) = read_frame(&mut reader) {
                    write_frame(&mut up, &f).unwrap();
                    let mut reply = read_reply(&mut BufReader::new(up.try_clone().unwrap())).unwrap();
                    if reply.kind == FrameType::GarbledOutput {
                        reply.payload[3] ^= 0x10;
                    }
                    write_frame(&mut client, &reply).unwrap();
                }
            });
        }
    });
    addr
}

#[test]
fn tampered_garbled_output_is_reported_to_the_result_owner() {
    let (evaluator, ev) = serve_evaluator(TcpListener::bind("127.0.0.1:0").unwrap(), TIMEOUT).unwrap();
    let proxy = tampering_proxy(evaluator.addr().to_string());
    let d = Deployment::with_evaluator_addr(None, evaluator, ev, Some(proxy));
    let err = run_inference(
        &d.addr(),
        &upload(quantized_model(&small_net()), vec![6]),
        &[vec![1; 6]],
        TIMEOUT,
    )
    .unwrap_err();
    assert!(err.is_authenticity(), "{err}");
}

#[test]
fn garbled_inputs_are_single_use() {
    let d = Deployment::start(None);
    let (session, _, _) = run_inference(
        &d.addr(),
        &upload(flatten_model(3, 3), vec![3]),
        &[vec![1, 2, 3]],
        TIMEOUT,
    )
    .unwrap();
    let replay = Frame::new(FrameType::GarbledInput, session, vec![0; 3 * 3 * 16]);
    let err = request(&d.evaluator.addr().to_string(), &replay, TIMEOUT)
        .unwrap()
        .into_result()
        .unwrap_err();
    assert!(
        matches!(
            err,
            ProtocolError::Remote {
                code: ErrorCode::Replay,
                ..
            }
        ),
        "{err}"
    );
    let unknown = Frame::new(FrameType::GarbledInput, 12345, vec![0; 16]);
    let err = request(&d.evaluator.addr().to_string(), &unknown, TIMEOUT)
        .unwrap()
        .into_result()
        .unwrap_err();
    assert!(
        matches!(
            err,
            ProtocolError::Remote {
                code: ErrorCode::UnknownSession,
                ..
            }
        ),
        "{err}"
    );
    // the garbler's session ended with the result delivery
    let err = upload_inputs(&d.addr(), session, 0, &[1, 2, 3], TIMEOUT).unwrap_err();
    assert_eq!(err.code(), ErrorCode::UnknownSession);
}

#[test]
fn session_phase_and_token_are_enforced() {
    let d = Deployment::start(None);
    let req = upload(flatten_model(4, 3), vec![2, 2]);
    let (session, _) = upload_model(&d.addr(), &req, TIMEOUT).unwrap();
    upload_inputs(&d.addr(), session, 0, &[1, 2], TIMEOUT).unwrap();
    assert_eq!(
        upload_inputs(&d.addr(), session, 0, &[1, 2], TIMEOUT)
            .unwrap_err()
            .code(),
        ErrorCode::Phase
    );
    assert_eq!(
        upload_inputs(&d.addr(), session, 5, &[1, 2], TIMEOUT)
            .unwrap_err()
            .code(),
        ErrorCode::Phase
    );
    assert_eq!(
        upload_inputs(&d.addr(), session, 1, &[1], TIMEOUT).unwrap_err().code(),
        ErrorCode::Data
    );
    assert_eq!(
        fetch_result(&d.addr(), session, "guess", TIMEOUT).unwrap_err().code(),
        ErrorCode::Unauthorized
    );
    upload_inputs(&d.addr(), session, 1, &[3, 4], TIMEOUT).unwrap();
    assert_eq!(
        fetch_result(&d.addr(), session, &req.token, TIMEOUT).unwrap(),
        vec![1, 2, 3, 4]
    );
    let bad_partition = upload(flatten_model(4, 3), vec![3]);
    assert_eq!(
        upload_model(&d.addr(), &bad_partition, TIMEOUT).unwrap_err().code(),
        ErrorCode::Data
    );
}

#[test]
fn malformed_and_unknown_frames_get_error_replies() {
    let d = Deployment::start(None);
    let mut s = TcpStream::connect(d.garbler.addr()).unwrap();
    let mut raw = Frame::new(FrameType::Result, 1, vec![]).encode();
    raw[4] = 99;
    std::io::Write::write_all(&mut s, &raw).unwrap();
    let reply = read_reply(&mut BufReader::new(s.try_clone().unwrap())).unwrap();
    assert!(matches!(
        reply.into_result(),
        Err(ProtocolError::Remote {
            code: ErrorCode::UnknownType,
            ..
        })
    ));
    let reply = request(
        &d.addr(),
        &Frame::new(FrameType::ModelUpload, 0, b"{not json".to_vec()),
        TIMEOUT,
    )
    .unwrap();
    assert!(matches!(
        reply.into_result(),
        Err(ProtocolError::Remote {
            code: ErrorCode::Malformed,
            ..
        })
    ));
    let reply = request(&d.addr(), &Frame::new(FrameType::GarbledOutput, 0, vec![]), TIMEOUT).unwrap();
    assert!(reply.into_result().is_err());
}

#[test]
fn concurrent_sessions_stay_isolated() {
    let d = Deployment::start(None);
    let addr = d.addr();
    let c = small_net();
    std::thread::scope(|s| {
        let runs: Vec<_> = (0..4)
            .map(|i| {
                let (addr, c) = (addr.clone(), &c);
                s.spawn(move || {
                    let (model, x): (ModelFile, Vec<i128>) = if i % 2 == 0 {
                        (quantized_model(c), vec![i, -i, 1, 2, 3, 4])
                    } else {
                        (flatten_model(3, 4), vec![i, 2 * i, -i])
                    };
                    let n = x.len();
                    let (_, _, out) =
                        run_inference(&addr, &upload(model, vec![n]), std::slice::from_ref(&x), TIMEOUT).unwrap();
                    let expected: Vec<i64> = if i % 2 == 0 {
                        c.plain_forward(&x).unwrap().iter().map(|&v| v as i64).collect()
                    } else {
                        x.iter().map(|&v| v as i64).collect()
                    };
                    assert_eq!(out, expected);
                })
            })
            .collect();
        runs.into_iter().for_each(|h| h.join().unwrap());
    });
}
