//! Model files, quantization search and artifact files.

use std::sync::Arc;

use dash_core::circuit::{garble, GarbledCircuit};
use dash_core::crt::CrtBase;
use dash_core::layers::Layer;
use dash_core::model_io::{
    export_quantized, load_decoding, load_encoding, load_garbled, load_model, optimize_quantization, save_decoding,
    save_encoding, save_garbled, Architecture, ModelFile,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

fn base(k: usize) -> Arc<CrtBase> {
    Arc::new(CrtBase::new(k).unwrap())
}

#[test]
fn minimal_flatten_model_loads() {
    let m = ModelFile::from_json(r#"{"input_shape": [2, 3], "layers": [{"type": "flatten"}]}"#).unwrap();
    let c = m.to_circuit(base(3), 1.0).unwrap();
    assert_eq!(c.layers, vec![Layer::Flatten]);
    assert_eq!(c.output_shape().unwrap(), vec![6]);
}

#[test]
fn model_a_file_loads_as_three_dense_and_two_relu() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model_a.json");
    let m = Architecture::A.random_model(&mut ChaCha20Rng::seed_from_u64(1), 0.1);
    std::fs::write(&path, m.to_json()).unwrap();
    let c = load_model(&path).unwrap().to_circuit(base(8), 4.0).unwrap();
    let names: Vec<&str> = c.layers.iter().map(Layer::name).collect();
    assert_eq!(names.iter().filter(|n| **n == "dense").count(), 3);
    assert_eq!(names.iter().filter(|n| **n == "relu").count(), 2);
    assert_eq!(c.output_shape().unwrap(), vec![10]);
}

#[test]
fn malformed_models_are_rejected_with_diagnostics() {
    let mismatch = r#"{"input_shape": [4], "layers": [
        {"type": "dense", "inputs": 4, "outputs": 2, "weights": [0,0,0,0,0,0,0,0], "biases": [0,0]},
        {"type": "dense", "inputs": 3, "outputs": 1, "weights": [0,0,0], "biases": [0]}]}"#;
    let err = ModelFile::from_json(mismatch).unwrap_err().to_string();
    assert!(err.contains("layer 1"), "{err}");
    let short = r#"{"input_shape": [4], "layers": [
        {"type": "dense", "inputs": 4, "outputs": 2, "weights": [0], "biases": [0,0]}]}"#;
    assert!(ModelFile::from_json(short).is_err());
    let err = ModelFile::from_json("{\"input_shape\": [4],\n \"layers\": [{\"type\": \"pool\"}]}").unwrap_err();
    assert!(err.to_string().contains("line 2"), "{err}");
    assert!(ModelFile::from_json(r#"{"input_shape": [4], "layers": []}"#).is_err());
}

#[test]
fn zero_sample_admits_the_largest_constant() {
    let m = Architecture::FDims.random_model(&mut ChaCha20Rng::seed_from_u64(2), 0.01);
    let q = optimize_quantization(&m, &[vec![0.0; 3 * 32 * 32]], base(9)).unwrap();
    assert_eq!(q.alpha(), 256.0);
}

#[test]
fn optimized_constant_keeps_a_safety_margin() {
    let mut rng = ChaCha20Rng::seed_from_u64(3);
    let m = Architecture::C.random_model(&mut rng, 0.5);
    let sample: Vec<f64> = (0..784).map(|_| rng.gen_range(0.0..1.0)).collect();
    let b = base(9);
    let limit = ((b.modulus_u128() - 1) / 4) as i128;
    let q = optimize_quantization(&m, std::slice::from_ref(&sample), b.clone()).unwrap();
    let max_abs = |alpha: f64| -> Option<i128> {
        let c = m.to_circuit(b.clone(), alpha).ok()?;
        let x: Vec<i128> = sample.iter().map(|v| (v * alpha).round() as i128).collect();
        let trace = c.plain_trace(&x).ok()?;
        trace.iter().flat_map(|t| t.data.iter()).map(|v| v.abs()).max()
    };
    let at = max_abs(q.alpha()).expect("chosen constant runs");
    assert!(at <= limit, "{at} > {limit}");
    // the next grid point would break the margin
    assert!(q.alpha() < 256.0);
    assert!(max_abs(2.0 * q.alpha()).is_none_or(|v| v > limit));
}

#[test]
fn infeasible_weight_is_reported() {
    let m = ModelFile::from_json(
        r#"{"input_shape": [1], "layers": [{"type": "dense", "inputs": 1, "outputs": 1, "weights": [1e9], "biases": [0]}]}"#,
    )
    .unwrap();
    assert!(optimize_quantization(&m, &[vec![1.0]], base(3)).is_err());
}

#[test]
fn artifacts_roundtrip_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let c = Architecture::FDims
        .random_circuit(&mut ChaCha20Rng::seed_from_u64(4))
        .unwrap();
    export_quantized(&c, dir.path().join("q.json")).unwrap();
    let back = load_model(dir.path().join("q.json"))
        .unwrap()
        .quantized_circuit()
        .unwrap();
    assert_eq!(back.layers, c.layers);
    assert_eq!(back.input_shape, c.input_shape);

    let (gnn, e, d) = garble(&c, &[4; 32]).unwrap();
    save_garbled(&gnn, dir.path().join("g.bin")).unwrap();
    save_encoding(&e, dir.path().join("e.bin")).unwrap();
    save_decoding(&d, dir.path().join("d.bin")).unwrap();
    assert_eq!(load_garbled(dir.path().join("g.bin")).unwrap(), gnn);
    assert_eq!(load_encoding(dir.path().join("e.bin")).unwrap(), e);
    assert_eq!(load_decoding(dir.path().join("d.bin")).unwrap(), d);

    let bytes = gnn.to_bytes();
    let mut version = bytes.clone();
    version[4] = 2;
    assert!(GarbledCircuit::from_bytes(&version).is_err());
    let mut magic = bytes.clone();
    magic[0] = b'X';
    assert!(GarbledCircuit::from_bytes(&magic).is_err());
    assert!(GarbledCircuit::from_bytes(&bytes[..bytes.len() - 1]).is_err());
}

fn docs(name: &str) -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../docs")
        .join(name)
}

#[test]
fn documented_model_a_example_loads_with_its_own_base() {
    let m = load_model(docs("model-a.json")).unwrap();
    assert!(m.is_quantized());
    let c = m.quantized_circuit().unwrap();
    assert_eq!(c.base.k(), 8);
    let reference = Architecture::A.integer_layers(|| 0);
    assert_eq!(c.layers.len(), reference.len());
    for (got, want) in c.layers.iter().zip(&reference) {
        assert_eq!(std::mem::discriminant(got), std::mem::discriminant(want));
    }
    assert_eq!(c.output_shape().unwrap(), vec![10]);
}

#[test]
fn documented_small_conv_example_quantizes_and_runs() {
    let m = load_model(docs("small-conv.json")).unwrap();
    assert!(!m.is_quantized());
    let c = m.to_circuit(base(5), 4.0).unwrap();
    assert_eq!(c.output_shape().unwrap(), vec![2]);
    let out = c.plain_forward(&[1; 16]).unwrap();
    assert_eq!(out.len(), 2);
}
