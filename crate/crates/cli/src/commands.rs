//! One function per subcommand.

use std::io::Write;
use std::net::TcpListener;
use std::path::Path;
use std::time::{Duration, Instant};

use dash_core::circuit::{
    bundle_from_bytes, bundle_to_bytes, decode_outputs, evaluate, evaluate_timed, garble, garble_inputs,
    garble_real_inputs, garble_timed, ArtifactKind,
};
use dash_core::model_io::{
    load_decoding, load_encoding, load_garbled, quantized_model, save_decoding, save_encoding, save_garbled,
};
use dash_protocol::client::run_inference;
use dash_protocol::config::Config;
use dash_protocol::evaluator::serve_evaluator;
use dash_protocol::garbler::{serve_garbler, GarblerOptions};
use dash_protocol::messages::{parse_sign_accuracy, ModelUpload};
use dash_protocol::{comm_volume, CommVolume};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::Serialize;
use serde_json::json;

use crate::args::{InputArgs, ModelArgs, ServiceArgs};
use crate::error::{CliError, CliResult};
use crate::inputs::{read_input, InputValues};
use crate::model::{master_seed, resolve, seed_for, DEFAULT_K};

const DEFAULT_TIMEOUT_SECS: u64 = 120;

/// `println!` that stops quietly when the reader has gone away.
macro_rules! out {
    ($($arg:tt)*) => {{
        let mut stdout = std::io::stdout().lock();
        if let Err(e) = writeln!(stdout, $($arg)*) {
            if e.kind() == std::io::ErrorKind::BrokenPipe {
                std::process::exit(0);
            }
        }
    }};
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

/// Decoded outputs as printed by `infer` and `decode`.
#[derive(Debug, Serialize)]
struct Prediction {
    integer: Vec<i64>,
    logits: Vec<f64>,
    argmax: Option<usize>,
}

impl Prediction {
    fn new(values: Vec<i64>, scale: f64) -> Self {
        let logits: Vec<f64> = values.iter().map(|&v| v as f64 / scale).collect();
        // first maximum wins ties
        let argmax = values
            .iter()
            .enumerate()
            .fold(None, |best: Option<(usize, i64)>, (i, &v)| match best {
                Some((_, b)) if b >= v => best,
                _ => Some((i, v)),
            })
            .map(|(i, _)| i);
        Prediction {
            integer: values,
            logits,
            argmax,
        }
    }

    fn print(&self, extra: serde_json::Value, as_json: bool) {
        if as_json {
            let mut v = serde_json::to_value(self).expect("plain data");
            if let (Some(obj), serde_json::Value::Object(more)) = (v.as_object_mut(), extra) {
                obj.extend(more);
            }
            out!("{v}");
            return;
        }
        let join = |it: Vec<String>| it.join(" ");
        out!("logits: {}", join(self.logits.iter().map(|v| v.to_string()).collect()));
        out!(
            "integer: {}",
            join(self.integer.iter().map(|v| v.to_string()).collect())
        );
        match self.argmax {
            Some(i) => out!("argmax: {i}"),
            None => out!("argmax: none"),
        }
    }
}

fn to_i64(values: Vec<i128>) -> Vec<i64> {
    // outputs are bounded by P/2 < 2^63 for every supported base
    values.into_iter().map(|v| v as i64).collect()
}

fn reals(input: &InputValues) -> Option<&[f64]> {
    match input {
        InputValues::Reals(v) => Some(v),
        InputValues::Integers(_) => None,
    }
}

pub fn garble_cmd(args: &ModelArgs, output: &Path) -> CliResult<()> {
    let r = resolve(args, None)?;
    let (gnn, e, d) = garble(&r.circuit, &seed_for("garble"))?;
    let enc = output.with_extension("enc");
    let dec = output.with_extension("dec");
    if enc == output || dec == output {
        return Err(CliError::usage("output path must not end in .enc or .dec"));
    }
    save_garbled(&gnn, output)?;
    save_encoding(&e, &enc)?;
    save_decoding(&d, &dec)?;
    let blocks: usize = gnn.layer_counts().iter().sum();
    out!(
        "garbled network: {} ({} bytes, {blocks} ciphertexts)",
        output.display(),
        gnn.to_bytes().len()
    );
    out!("encoding: {}", enc.display());
    out!("decoding: {}", dec.display());
    out!(
        "k = {}, alpha = {}, sign radices {:?}",
        r.circuit.base.k(),
        r.circuit.alpha,
        gnn.spec().radices()
    );
    Ok(())
}

pub fn encode_cmd(encoding: &Path, input: &InputArgs, output: &Path) -> CliResult<()> {
    let e = load_encoding(encoding)?;
    let gin = match read_input(&input.input, input.integer)? {
        InputValues::Integers(v) => garble_inputs(&e, &v)?,
        InputValues::Reals(v) => garble_real_inputs(&e, &v)?,
    };
    std::fs::write(output, bundle_to_bytes(ArtifactKind::GarbledInput, &gin))?;
    out!(
        "garbled input: {} ({} labels)",
        output.display(),
        gin.len() * gin.lanes().len()
    );
    Ok(())
}

pub fn evaluate_cmd(garbled: &Path, input: &Path, output: &Path) -> CliResult<()> {
    let gnn = load_garbled(garbled)?;
    gnn.check_tweaks()?;
    let gin = bundle_from_bytes(ArtifactKind::GarbledInput, &std::fs::read(input)?)?;
    let start = Instant::now();
    let gout = evaluate(&gnn, &gin)?;
    let took = start.elapsed();
    std::fs::write(output, bundle_to_bytes(ArtifactKind::GarbledOutput, &gout))?;
    out!("garbled output: {} (evaluated in {:.1} ms)", output.display(), ms(took));
    Ok(())
}

pub fn decode_cmd(decoding: &Path, input: &Path, as_json: bool) -> CliResult<()> {
    let d = load_decoding(decoding)?;
    let gout = bundle_from_bytes(ArtifactKind::GarbledOutput, &std::fs::read(input)?)?;
    let values = decode_outputs(&d, &gout)?;
    Prediction::new(to_i64(values), d.scale()).print(json!({}), as_json);
    Ok(())
}

pub struct InferOptions<'a> {
    pub garbler: Option<&'a str>,
    pub owners: Option<&'a [usize]>,
    pub timeout: Duration,
    pub json: bool,
}

pub fn infer_cmd(args: &ModelArgs, input: &InputArgs, opts: &InferOptions<'_>) -> CliResult<()> {
    let values = read_input(&input.input, input.integer)?;
    let r = resolve(args, reals(&values))?;
    let c = &r.circuit;
    let x = values.quantize(c)?;
    let scale = c.output_scale();

    let Some(addr) = opts.garbler else {
        let start = Instant::now();
        let (gnn, e, d) = garble(c, &seed_for("garble"))?;
        let offline = start.elapsed();
        let start = Instant::now();
        let gout = evaluate(&gnn, &garble_inputs(&e, &x)?)?;
        let out = decode_outputs(&d, &gout)?;
        let online = start.elapsed();
        if !opts.json {
            eprintln!(
                "offline (garbling): {:.1} ms, online: {:.1} ms",
                ms(offline),
                ms(online)
            );
        }
        Prediction::new(to_i64(out), scale)
            .print(json!({"offline_ms": ms(offline), "online_ms": ms(online)}), opts.json);
        return Ok(());
    };

    let owners = opts.owners.map_or_else(|| vec![x.len()], <[usize]>::to_vec);
    if owners.iter().sum::<usize>() != x.len() || owners.contains(&0) {
        return Err(CliError::usage(format!(
            "owner sizes {owners:?} must be positive and sum to {}",
            x.len()
        )));
    }
    let mut parts = Vec::with_capacity(owners.len());
    let mut rest = x.as_slice();
    for &n in &owners {
        let (head, tail) = rest.split_at(n);
        parts.push(head.to_vec());
        rest = tail;
    }
    let token: String = seed_for("token").iter().take(16).map(|b| format!("{b:02x}")).collect();
    let req = ModelUpload {
        model: quantized_model(c),
        k: None,
        alpha: None,
        sign_accuracy: Some(args.sign_accuracy.clone()),
        owners,
        token,
        private_weights: args.private_weights,
    };
    let start = Instant::now();
    let (_, info, out) = run_inference(addr, &req, &parts, opts.timeout)?;
    let took = start.elapsed();
    if !opts.json {
        eprintln!("service round trip: {:.1} ms", ms(took));
    }
    Prediction::new(out, info.output_scale).print(json!({"round_trip_ms": ms(took)}), opts.json);
    Ok(())
}

fn load_config(service: &ServiceArgs) -> CliResult<Option<Config>> {
    service
        .config
        .as_ref()
        .map(|p| Config::load(p).map_err(|e| CliError::usage(e.to_string())))
        .transpose()
}

fn timeout(service: &ServiceArgs, config: Option<&Config>) -> Duration {
    match (service.timeout_secs, config) {
        (Some(s), _) => Duration::from_secs(s.max(1)),
        (None, Some(c)) => c.timeout(),
        (None, None) => Duration::from_secs(DEFAULT_TIMEOUT_SECS),
    }
}

fn bind(addr: &str) -> CliResult<TcpListener> {
    let l = TcpListener::bind(addr).map_err(|e| CliError::data(format!("cannot listen on {addr}: {e}")))?;
    Ok(l)
}

fn announce(addr: std::net::SocketAddr) {
    out!("listening on {addr}");
    let _ = std::io::stdout().flush();
}

pub fn serve_evaluator_cmd(service: &ServiceArgs) -> CliResult<()> {
    let config = load_config(service)?;
    let listen = service
        .listen
        .clone()
        .or_else(|| config.as_ref().map(|c| c.roles.evaluator.clone()))
        .ok_or_else(|| CliError::usage("need --listen or a config file"))?;
    let (handle, _) = serve_evaluator(bind(&listen)?, timeout(service, config.as_ref()))?;
    announce(handle.addr());
    handle.join();
    Ok(())
}

pub fn serve_garbler_cmd(
    service: &ServiceArgs,
    evaluator: Option<&str>,
    k: Option<usize>,
    sign_accuracy: Option<&str>,
) -> CliResult<()> {
    let config = load_config(service)?;
    let listen = service
        .listen
        .clone()
        .or_else(|| config.as_ref().map(|c| c.roles.garbler.clone()))
        .ok_or_else(|| CliError::usage("need --listen or a config file"))?;
    let evaluator = evaluator
        .map(str::to_string)
        .or_else(|| config.as_ref().map(|c| c.roles.evaluator.clone()))
        .ok_or_else(|| CliError::usage("need --evaluator or a config file"))?;
    let mut opts = GarblerOptions::new(evaluator);
    opts.k = k.or(config.as_ref().map(|c| c.circuit.k)).unwrap_or(DEFAULT_K);
    dash_core::crt::CrtBase::new(opts.k)?;
    opts.sign_accuracy = match (sign_accuracy, &config) {
        (Some(s), _) => parse_sign_accuracy(s).map_err(|e| CliError::usage(e.to_string()))?,
        (None, Some(c)) => c.sign_accuracy().map_err(|e| CliError::usage(e.to_string()))?,
        (None, None) => opts.sign_accuracy,
    };
    opts.seed = master_seed();
    opts.timeout = timeout(service, config.as_ref());
    let (handle, _) = serve_garbler(bind(&listen)?, opts)?;
    announce(handle.addr());
    handle.join();
    Ok(())
}

#[derive(Serialize)]
struct LayerReport {
    index: usize,
    kind: &'static str,
    input_shape: Vec<usize>,
    output_shape: Vec<usize>,
    blocks: usize,
    closed_form_blocks: usize,
    garble_ms: f64,
    evaluate_ms: f64,
}

#[derive(Serialize)]
struct VolumeReport {
    #[serde(flatten)]
    bytes: CommVolume,
    total_bytes: u64,
    megabytes: f64,
    megabytes_with_overhead: f64,
}

impl VolumeReport {
    fn new(v: CommVolume) -> Self {
        VolumeReport {
            bytes: v,
            total_bytes: v.total_bytes(),
            megabytes: v.megabytes(),
            megabytes_with_overhead: v.megabytes_with_overhead(),
        }
    }
}

pub fn bench_cmd(args: &ModelArgs, input: Option<&Path>, integer: bool, runs: u32) -> CliResult<()> {
    let values = match input {
        Some(p) => Some(read_input(p, integer)?),
        None => None,
    };
    let r = resolve(args, values.as_ref().and_then(reals))?;
    let c = &r.circuit;
    let x = match &values {
        Some(v) => v.quantize(c)?,
        None => {
            let mut rng = ChaCha20Rng::seed_from_u64(args.weights_seed);
            (0..c.input_len()).map(|_| rng.gen_range(-2..=2)).collect()
        }
    };
    let plan = c.sign_plan()?;
    let closed = c.closed_form_counts(&plan)?;
    let shapes = c.layer_shapes()?;

    let start = Instant::now();
    let (gnn, e, d, garble_times) = garble_timed(c, &seed_for("garble"))?;
    let garble_total = start.elapsed();

    let mut eval_times = vec![Duration::ZERO; c.layers.len()];
    let (mut encode_t, mut eval_t, mut decode_t) = (Duration::ZERO, Duration::ZERO, Duration::ZERO);
    let mut out = Vec::new();
    for _ in 0..runs {
        let t = Instant::now();
        let gin = garble_inputs(&e, &x)?;
        encode_t += t.elapsed();
        let t = Instant::now();
        let (gout, per_layer) = evaluate_timed(&gnn, &gin)?;
        eval_t += t.elapsed();
        eval_times.iter_mut().zip(per_layer).for_each(|(a, b)| *a += b);
        let t = Instant::now();
        out = decode_outputs(&d, &gout)?;
        decode_t += t.elapsed();
    }
    let avg = |d: Duration| ms(d) / runs as f64;
    let measured = gnn.layer_counts();
    let layers: Vec<LayerReport> = c
        .layers
        .iter()
        .enumerate()
        .map(|(i, l)| LayerReport {
            index: i + 1,
            kind: l.name(),
            input_shape: shapes[i].clone(),
            output_shape: shapes[i + 1].clone(),
            blocks: measured[i],
            closed_form_blocks: closed[i],
            garble_ms: ms(garble_times[i]),
            evaluate_ms: avg(eval_times[i]),
        })
        .collect();
    let report = json!({
        "model": r.name,
        "k": c.base.k(),
        "alpha": c.alpha,
        "threads": rayon::current_num_threads(),
        "sign_radices": gnn.spec().radices(),
        "runs": runs,
        "garble_ms": ms(garble_total),
        "gc_bytes": gnn.to_bytes().len(),
        "total_blocks": measured.iter().sum::<usize>(),
        "online": {
            "encode_ms": avg(encode_t),
            "evaluate_ms": avg(eval_t),
            "decode_ms": avg(decode_t),
            "total_ms": avg(encode_t + eval_t + decode_t),
        },
        "layers": layers,
        "comm_volume": VolumeReport::new(comm_volume(c.base.k(), c.input_len(), out.len())),
        "matches_plain": c.plain_forward(&x)? == out,
    });
    out!("{}", serde_json::to_string_pretty(&report).expect("plain data"));
    Ok(())
}

pub fn count_cmd(args: &ModelArgs, as_json: bool) -> CliResult<()> {
    let r = resolve(args, None)?;
    let c = &r.circuit;
    let closed = c.closed_form_counts(&c.sign_plan()?)?;
    let (gnn, ..) = garble(c, &seed_for("garble"))?;
    let measured = gnn.layer_counts();
    let (ct, mt): (usize, usize) = (closed.iter().sum(), measured.iter().sum());
    if as_json {
        let layers: Vec<_> = c
            .layers
            .iter()
            .enumerate()
            .map(|(i, l)| json!({"index": i + 1, "kind": l.name(), "closed_form": closed[i], "measured": measured[i]}))
            .collect();
        let v = json!({"model": r.name, "k": c.base.k(), "layers": layers,
            "closed_form_total": ct, "measured_total": mt, "match": closed == measured});
        out!("{v}");
    } else {
        out!("{:<6} {:<8} {:>14} {:>14}", "layer", "kind", "closed-form", "measured");
        for (i, l) in c.layers.iter().enumerate() {
            out!("{:<6} {:<8} {:>14} {:>14}", i + 1, l.name(), closed[i], measured[i]);
        }
        out!("{:<6} {:<8} {:>14} {:>14}", "total", "", ct, mt);
    }
    if closed != measured {
        return Err(CliError::data("measured ciphertext counts differ from the closed form"));
    }
    Ok(())
}
