//! Whole-network garbling, evaluation and decoding.

use std::sync::Arc;

use dash_core::circuit::{
    bundle_from_bytes, bundle_to_bytes, decode_outputs, evaluate, garble, garble_inputs, ArtifactKind, Circuit,
    GarbledCircuit,
};
use dash_core::crt::CrtBase;
use dash_core::layers::{BundleTensor, Dense, Layer};
use dash_core::model_io::Architecture;
use dash_core::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

fn base(k: usize) -> Arc<CrtBase> {
    Arc::new(CrtBase::new(k).unwrap())
}

fn flatten_only(shape: Vec<usize>, k: usize) -> Circuit {
    Circuit::new(shape, vec![Layer::Flatten], base(k), 1.0).unwrap()
}

#[test]
fn empty_circuit_is_rejected() {
    assert!(Circuit::new(vec![4], vec![], base(3), 1.0).is_err());
}

#[test]
fn model_a_linear_layers_are_free() {
    let c = Architecture::A
        .random_circuit(&mut ChaCha20Rng::seed_from_u64(1))
        .unwrap();
    let (gnn, ..) = garble(&c, &[1; 32]).unwrap();
    let counts = gnn.layer_counts();
    for (layer, count) in c.layers.iter().zip(&counts) {
        match layer {
            Layer::Relu => assert!(*count > 0),
            _ => assert_eq!(*count, 0, "{}", layer.name()),
        }
    }
    assert_eq!(counts, c.closed_form_counts(&c.sign_plan().unwrap()).unwrap());
    gnn.check_tweaks().unwrap();
}

#[test]
fn garbling_is_deterministic_in_the_seed() {
    let c = Architecture::FDims
        .random_circuit(&mut ChaCha20Rng::seed_from_u64(2))
        .unwrap();
    let (g1, e1, d1) = garble(&c, &[9; 32]).unwrap();
    let (g2, e2, d2) = garble(&c, &[9; 32]).unwrap();
    assert_eq!(g1.to_bytes(), g2.to_bytes());
    assert_eq!(e1.to_bytes(), e2.to_bytes());
    assert_eq!(d1.to_bytes(), d2.to_bytes());
    let (g3, ..) = garble(&c, &[8; 32]).unwrap();
    assert_ne!(g1.to_bytes(), g3.to_bytes());
    assert_eq!(GarbledCircuit::from_bytes(&g1.to_bytes()).unwrap(), g1);
}

#[test]
fn input_encoding_follows_the_color_algebra() {
    let c = flatten_only(vec![6], 4);
    let (_, e, _) = garble(&c, &[3; 32]).unwrap();
    let zero = garble_inputs(&e, &[0; 6]).unwrap();
    let x = [0i128, 1, -1, 7, -50, 104];
    let active = garble_inputs(&e, &x).unwrap();
    for (i, &v) in x.iter().enumerate() {
        for (lz, la) in zero.lanes().iter().zip(active.lanes()) {
            let p = lz.modulus();
            let expected = (lz.to_label(i).color() as i128 + v).rem_euclid(p as i128) as u16;
            assert_eq!(la.to_label(i).color(), expected);
            if v == 0 {
                assert_eq!(la.to_label(i), lz.to_label(i));
            }
        }
    }
    assert!(garble_inputs(&e, &[0; 5]).is_err());
    assert!(garble_inputs(&e, &[0, 0, 0, 0, 0, 106]).is_err());
}

#[test]
fn garbled_input_volume_for_784_inputs() {
    let c = flatten_only(vec![1, 28, 28], 8);
    let (_, e, _) = garble(&c, &[4; 32]).unwrap();
    let gin = garble_inputs(&e, &[0; 784]).unwrap();
    let labels: usize = gin.lanes().iter().map(|l| l.len()).sum();
    assert_eq!(labels, 6272);
    assert_eq!(labels * 16, 100_352);
    let bytes = bundle_to_bytes(ArtifactKind::GarbledInput, &gin);
    let header = bytes.len() - 100_352;
    assert!(header < 64, "framing of {header} bytes");
    assert_eq!(bundle_from_bytes(ArtifactKind::GarbledInput, &bytes).unwrap(), gin);
}

#[test]
fn identity_network_returns_its_input() {
    let c = flatten_only(vec![3, 2], 5);
    let (gnn, e, d) = garble(&c, &[5; 32]).unwrap();
    let x = [1i128, -2, 3, -4, 5, 0];
    let gin = garble_inputs(&e, &x).unwrap();
    let gout = evaluate(&gnn, &gin).unwrap();
    assert_eq!(gout.clone().reshape(&[3, 2]).unwrap(), gin);
    assert_eq!(decode_outputs(&d, &gout).unwrap(), x);
}

#[test]
fn model_c_matches_plain_forward_on_100_inputs() {
    let mut rng = ChaCha20Rng::seed_from_u64(6);
    let c = Architecture::C.random_circuit(&mut rng).unwrap();
    let (gnn, e, d) = garble(&c, &[6; 32]).unwrap();
    for _ in 0..100 {
        let x: Vec<i128> = (0..c.input_len()).map(|_| rng.gen_range(0..=4)).collect();
        let out = decode_outputs(&d, &evaluate(&gnn, &garble_inputs(&e, &x).unwrap()).unwrap()).unwrap();
        assert_eq!(out, c.plain_forward(&x).unwrap());
    }
}

#[test]
fn serial_and_parallel_evaluation_agree() {
    let mut rng = ChaCha20Rng::seed_from_u64(7);
    let c = Architecture::FDims.random_circuit(&mut rng).unwrap();
    let (gnn, e, _) = garble(&c, &[7; 32]).unwrap();
    let x: Vec<i128> = (0..c.input_len()).map(|_| rng.gen_range(-3..=3)).collect();
    let gin = garble_inputs(&e, &x).unwrap();
    let serial = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let one = serial.install(|| evaluate(&gnn, &gin)).unwrap();
    let many = evaluate(&gnn, &gin).unwrap();
    assert_eq!(
        bundle_to_bytes(ArtifactKind::GarbledOutput, &one),
        bundle_to_bytes(ArtifactKind::GarbledOutput, &many)
    );
}

#[test]
fn tampered_outputs_fail_authentication() {
    let mut rng = ChaCha20Rng::seed_from_u64(8);
    let layers = vec![
        Layer::Dense(Dense::new(4, 3, (0..12).map(|i| i % 3 - 1).collect(), vec![1, 0, -1]).unwrap()),
        Layer::Relu,
    ];
    let c = Circuit::new(vec![4], layers, base(5), 1.0).unwrap();
    let (gnn, e, d) = garble(&c, &[8; 32]).unwrap();
    let gout = evaluate(&gnn, &garble_inputs(&e, &[3, -1, 2, 0]).unwrap()).unwrap();
    let bytes = bundle_to_bytes(ArtifactKind::GarbledOutput, &gout);
    let header = bytes.len() - gout.lanes().len() * gout.len() * 16;
    let mut detected = 0;
    for _ in 0..1000 {
        let mut t = bytes.clone();
        let bit = rng.gen_range(header * 8..t.len() * 8);
        t[bit / 8] ^= 1 << (bit % 8);
        // a flip may also yield an out-of-range chunk, rejected while parsing
        match bundle_from_bytes(ArtifactKind::GarbledOutput, &t).map(|g| decode_outputs(&d, &g)) {
            Ok(Err(Error::Authenticity(_))) | Err(_) => detected += 1,
            Ok(_) => {}
        }
    }
    assert!(detected >= 999, "{detected} of 1000 flips detected");
}

#[test]
fn empty_output_decodes_to_empty_vector() {
    let c = Circuit::new(
        vec![3],
        vec![Layer::Dense(Dense::new(3, 0, vec![], vec![]).unwrap())],
        base(3),
        1.0,
    )
    .unwrap();
    let (gnn, e, d) = garble(&c, &[0; 32]).unwrap();
    let gout = evaluate(&gnn, &garble_inputs(&e, &[1, 2, 3]).unwrap()).unwrap();
    assert!(gout.is_empty());
    assert_eq!(decode_outputs(&d, &gout).unwrap(), Vec::<i128>::new());
    assert!(decode_outputs(&d, &BundleTensor::zeros(&CrtBase::new(3).unwrap(), &[1])).is_err());
}

#[test]
fn fresh_input_labels_look_uniform() {
    // Chi-square over the digit distribution of garbled inputs for two
    // different plaintexts, each under fresh encodings.
    let c = flatten_only(vec![8], 3);
    for x in [[0i128; 8], [7, -7, 1, 2, 3, 4, 5, 6]] {
        let mut counts = [0u64; 5];
        for s in 0..200u8 {
            let (_, e, _) = garble(&c, &[s; 32]).unwrap();
            let gin = garble_inputs(&e, &x).unwrap();
            let lane = gin.lanes().iter().find(|l| l.modulus() == 5).unwrap();
            for &dgt in lane.data() {
                counts[dgt as usize] += 1;
            }
        }
        let total: u64 = counts.iter().sum();
        let expected = total as f64 / 5.0;
        let chi2: f64 = counts.iter().map(|&o| (o as f64 - expected).powi(2) / expected).sum();
        // four degrees of freedom; 18.47 is the 0.1% critical value
        assert!(chi2 < 18.47, "chi-square {chi2} for {x:?}");
    }
}
